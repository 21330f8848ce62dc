use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, NetworkError};
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphSide {
    Robot,
    Scene,
}

impl GraphSide {
    fn prefix(self) -> &'static str {
        match self {
            GraphSide::Robot => "robot",
            GraphSide::Scene => "scene",
        }
    }
}

/// Attention neighborhoods: every node attends to itself and to the sources
/// of its incoming edges. Self comes first, the rest ascending.
pub fn neighbors_from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>, NetworkError> {
    let mut nb: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    for &(a, b) in edges {
        if a >= m || b >= m {
            return Err(NetworkError::ShapeMismatch(format!(
                "edge ({a}, {b}) references a row outside 0..{m}"
            )));
        }
        if a != b {
            nb[b].push(a);
        }
    }
    for (i, list) in nb.iter_mut().enumerate() {
        let mut rest: Vec<usize> = list.drain(1..).filter(|&j| j != i).collect();
        rest.sort_unstable();
        rest.dedup();
        list.extend(rest);
    }
    Ok(nb)
}

pub fn sinusoidal_positions(m: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Parameter handles plus the tape a forward pass records onto.
pub(crate) struct Ctx<'a, T: Real> {
    pub tape: &'a Tape<T>,
    pub vars: &'a BTreeMap<String, Var>,
    pub cfg: &'a ModelConfig,
    pub dropout: Option<RefCell<ChaCha8Rng>>,
}

impl<T: Real> Ctx<'_, T> {
    pub fn p(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not on tape"))
    }

    /// Inverted dropout; the identity when no RNG is attached.
    pub fn drop(&self, x: Var) -> Var {
        let rate = self.cfg.dropout;
        match &self.dropout {
            Some(rng) if rate > 0.0 => {
                let mut rng = rng.borrow_mut();
                let keep = T::lit(1.0 / (1.0 - rate));
                let mask = Array2::from_shape_simple_fn(self.tape.shape(x), || {
                    if rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                });
                self.tape.mul_const(x, mask)
            }
            _ => x,
        }
    }

    pub fn linear(&self, x: Var, w: &str, b: &str) -> Var {
        self.tape.affine(x, self.p(w), self.p(b))
    }

    /// Multi-head scaled dot-product attention with output projection.
    pub fn attention(&self, prefix: &str, queries: Var, keys: Var) -> Var {
        let t = self.tape;
        let q = self.linear(queries, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
        let k = self.linear(keys, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
        let v = self.linear(keys, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
        let dh = self.cfg.d / self.cfg.heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let heads: Vec<Var> = (0..self.cfg.heads)
            .map(|h| {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = t.slice_cols(q, lo, hi);
                let kh = t.slice_cols(k, lo, hi);
                let vh = t.slice_cols(v, lo, hi);
                let scores = t.scale(t.matmul_t(qh, kh), scale);
                t.matmul(t.softmax_rows(scores), vh)
            })
            .collect();
        let joined = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads) };
        self.linear(joined, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
    }

    pub fn norm(&self, prefix: &str, x: Var) -> Var {
        self.tape
            .layer_norm(x, self.p(&format!("{prefix}.g")), self.p(&format!("{prefix}.b")), T::lit(1e-5))
    }

    /// Two-layer perceptron with a ReLU hidden layer.
    pub fn mlp(&self, prefix: &str, x: Var) -> Var {
        let h = self.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
        let h = self.tape.relu(h);
        self.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
    }

    /// Stacked graph attention over `concat(tokens, sentence)`; ELU between
    /// layers, none after the last.
    pub fn gat(&self, side: GraphSide, tokens: Var, sentence: Var, neighbors: Arc<Vec<Vec<usize>>>) -> Var {
        let t = self.tape;
        let m = t.shape(tokens).0;
        let s = t.repeat_row(sentence, m);
        let mut x = t.concat_cols(&[tokens, s]);
        let slope = T::lit(self.cfg.gat_slope);
        for l in 0..self.cfg.l_gat {
            let pre = format!("gat.{}.{l}", side.prefix());
            let z = t.matmul(x, self.p(&format!("{pre}.w")));
            let agg = t.graph_attention(
                z,
                self.p(&format!("{pre}.a_src")),
                self.p(&format!("{pre}.a_dst")),
                self.cfg.heads,
                neighbors.clone(),
                slope,
            );
            x = t.add_row(agg, self.p(&format!("{pre}.b")));
            if l + 1 < self.cfg.l_gat {
                x = t.elu(x);
            }
        }
        x
    }

    /// Parallel bidirectional cross-attention; both directions read the
    /// previous layer. Returns `(words, graph rows)`.
    pub fn enhance(&self, words: Var, graph: Var) -> (Var, Var) {
        let t = self.tape;
        let (mut w, mut g) = (words, graph);
        for l in 0..self.cfg.l_enh {
            let dw = self.attention(&format!("enh.{l}.words"), w, g);
            let dg = self.attention(&format!("enh.{l}.graph"), g, w);
            w = t.add(w, dw);
            g = t.add(g, dg);
        }
        (w, g)
    }

    pub fn encoder_stack(&self, x: Var) -> Var {
        let t = self.tape;
        let mut x = x;
        for l in 0..self.cfg.l_encdec {
            let a = self.drop(self.attention(&format!("enc.{l}.self"), x, x));
            x = self.norm(&format!("enc.{l}.ln1"), t.add(x, a));
            let f = self.drop(self.mlp(&format!("enc.{l}.ff"), x));
            x = self.norm(&format!("enc.{l}.ln2"), t.add(x, f));
        }
        x
    }

    pub fn decoder_stack(&self, queries: Var, memory: Var) -> Var {
        let t = self.tape;
        let mut q = queries;
        for l in 0..self.cfg.l_encdec {
            let a = self.drop(self.attention(&format!("dec.{l}.self"), q, q));
            q = self.norm(&format!("dec.{l}.ln1"), t.add(q, a));
            let c = self.drop(self.attention(&format!("dec.{l}.cross"), q, memory));
            q = self.norm(&format!("dec.{l}.ln2"), t.add(q, c));
            let f = self.drop(self.mlp(&format!("dec.{l}.ff"), q));
            q = self.norm(&format!("dec.{l}.ln3"), t.add(q, f));
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_follow_edge_direction_with_self_first() {
        let nb = neighbors_from_edges(4, &[(0, 1), (2, 1), (1, 0), (3, 3)]).unwrap();
        assert_eq!(nb, vec![vec![0, 1], vec![1, 0, 2], vec![2], vec![3]]);
        assert!(neighbors_from_edges(2, &[(0, 2)]).is_err());
    }

    #[test]
    fn positions_start_with_sin_cos_of_zero() {
        let p = sinusoidal_positions(3, 4);
        assert_eq!(p.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!((p[[1, 0]] - 1f64.sin()).abs() < 1e-15);
        assert!((p[[2, 2]] - (2.0 / 100.0f64).sin()).abs() < 1e-15);
    }
}
