use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, NetworkError, N_ACT};
use crate::tensor::Real;

fn attention_shapes(out: &mut BTreeMap<String, (usize, usize)>, prefix: &str, d: usize) {
    for p in ["q", "k", "v", "o"] {
        out.insert(format!("{prefix}.w{p}"), (d, d));
        out.insert(format!("{prefix}.b{p}"), (1, d));
    }
}

fn norm_shapes(out: &mut BTreeMap<String, (usize, usize)>, prefix: &str, d: usize) {
    out.insert(format!("{prefix}.g"), (1, d));
    out.insert(format!("{prefix}.b"), (1, d));
}

fn mlp_shapes(out: &mut BTreeMap<String, (usize, usize)>, prefix: &str, dims: (usize, usize, usize)) {
    let (i, h, o) = dims;
    out.insert(format!("{prefix}.w1"), (i, h));
    out.insert(format!("{prefix}.b1"), (1, h));
    out.insert(format!("{prefix}.w2"), (h, o));
    out.insert(format!("{prefix}.b2"), (1, o));
}

/// Name and shape of every trainable array for a configuration.
pub fn param_shapes(cfg: &ModelConfig) -> BTreeMap<String, (usize, usize)> {
    let d = cfg.d;
    let mut out = BTreeMap::new();
    for side in ["robot", "scene"] {
        for l in 0..cfg.l_gat {
            let input = if l == 0 { 2 * d } else { d };
            out.insert(format!("gat.{side}.{l}.w"), (input, d));
            out.insert(format!("gat.{side}.{l}.a_src"), (1, d));
            out.insert(format!("gat.{side}.{l}.a_dst"), (1, d));
            out.insert(format!("gat.{side}.{l}.b"), (1, d));
        }
    }
    for l in 0..cfg.l_enh {
        attention_shapes(&mut out, &format!("enh.{l}.words"), d);
        attention_shapes(&mut out, &format!("enh.{l}.graph"), d);
    }
    for l in 0..cfg.l_encdec {
        attention_shapes(&mut out, &format!("enc.{l}.self"), d);
        norm_shapes(&mut out, &format!("enc.{l}.ln1"), d);
        mlp_shapes(&mut out, &format!("enc.{l}.ff"), (d, cfg.ff_dim, d));
        norm_shapes(&mut out, &format!("enc.{l}.ln2"), d);

        attention_shapes(&mut out, &format!("dec.{l}.self"), d);
        norm_shapes(&mut out, &format!("dec.{l}.ln1"), d);
        attention_shapes(&mut out, &format!("dec.{l}.cross"), d);
        norm_shapes(&mut out, &format!("dec.{l}.ln2"), d);
        mlp_shapes(&mut out, &format!("dec.{l}.ff"), (d, cfg.ff_dim, d));
        norm_shapes(&mut out, &format!("dec.{l}.ln3"), d);
    }
    mlp_shapes(&mut out, "head.act", (cfg.k_robot * d, cfg.head_hidden, N_ACT));
    mlp_shapes(&mut out, "head.obj", (d, cfg.head_hidden, 1));
    out
}

/// Named parameter arrays. Vectors are stored as `1 x n` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arrays: BTreeMap<String, Array2<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Xavier-uniform weights, zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, NetworkError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dh = cfg.d / cfg.heads;
        let mut arrays = BTreeMap::new();
        for (name, (r, c)) in param_shapes(cfg) {
            let leaf = name.rsplit('.').next().unwrap_or("");
            let a = if name.contains(".ln") && leaf == "g" {
                Array2::ones((r, c))
            } else if leaf.starts_with('b') {
                Array2::zeros((r, c))
            } else {
                let bound = if leaf.starts_with("a_") {
                    (6.0 / (dh + 1) as f64).sqrt()
                } else {
                    (6.0 / (r + c) as f64).sqrt()
                };
                Array2::from_shape_simple_fn((r, c), || T::lit(rng.random_range(-bound..bound)))
            };
            arrays.insert(name, a);
        }
        Ok(Self { arrays })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            arrays: param_shapes(cfg)
                .into_iter()
                .map(|(n, s)| (n, Array2::zeros(s)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> &Array2<T> {
        self.arrays
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<T> {
        self.arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Errors unless names and shapes are exactly those of `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), NetworkError> {
        let want = param_shapes(cfg);
        if want.len() != self.arrays.len() {
            return Err(NetworkError::ShapeMismatch(format!(
                "expected {} parameter arrays, found {}",
                want.len(),
                self.arrays.len()
            )));
        }
        for (name, shape) in want {
            match self.arrays.get(&name) {
                Some(a) if a.dim() == shape => {}
                Some(a) => {
                    return Err(NetworkError::ShapeMismatch(format!(
                        "{name}: expected {shape:?}, found {:?}",
                        a.dim()
                    )))
                }
                None => return Err(NetworkError::ShapeMismatch(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arrays: self
                .arrays
                .iter()
                .map(|(n, a)| (n.clone(), a.mapv(|x| U::lit(x.as_f64()))))
                .collect(),
        }
    }

    /// Zeroes every enhancer output projection, which turns the enhancer
    /// into the identity on both streams.
    pub fn zero_enhancer_outputs(&mut self) {
        for (name, a) in self.arrays.iter_mut() {
            if name.starts_with("enh.") && (name.ends_with(".wo") || name.ends_with(".bo")) {
                a.fill(T::zero());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_matches_shapes_and_is_seeded() {
        let cfg = ModelConfig {
            d: 16,
            heads: 2,
            k_robot: 4,
            ..Default::default()
        };
        let a = ModelParams::<f64>::init(&cfg, 3).unwrap();
        a.check_shapes(&cfg).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, ModelParams::init(&cfg, 3).unwrap());
        assert_ne!(a, ModelParams::init(&cfg, 4).unwrap());
        assert!(a.get("enc.0.ln1.g").iter().all(|&x| x == 1.0));
        assert!(a.get("head.obj.b2").iter().all(|&x| x == 0.0));
        assert_eq!(a.get("gat.scene.0.w").dim(), (32, 16));
        assert_eq!(a.get("head.act.w1").dim(), (64, cfg.head_hidden));
    }

    #[test]
    fn shape_check_catches_mismatch() {
        let cfg = ModelConfig {
            d: 8,
            heads: 2,
            k_robot: 2,
            ..Default::default()
        };
        let mut p = ModelParams::<f64>::zeros(&cfg);
        *p.get_mut("head.obj.w2") = Array2::zeros((3, 3));
        assert!(matches!(p.check_shapes(&cfg), Err(NetworkError::ShapeMismatch(_))));
    }
}
