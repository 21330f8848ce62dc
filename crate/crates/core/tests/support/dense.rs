//! Plain nested-loop reimplementation of the network using dense masked
//! attention instead of neighbor lists.
#![allow(dead_code)]

use grid_core::network::{ModelConfig, ModelParams};
use ndarray::{Array1, Array2};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn param(p: &ModelParams<f64>, name: &str) -> Mat {
    to_mat(p.get(name))
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn add_bias(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| row.iter().zip(&b[0]).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn linear(p: &ModelParams<f64>, x: &Mat, w: &str, b: &str) -> Mat {
    add_bias(&matmul(x, &param(p, w)), &param(p, b))
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn attention(p: &ModelParams<f64>, cfg: &ModelConfig, prefix: &str, queries: &Mat, keys: &Mat) -> Mat {
    let q = linear(p, queries, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
    let k = linear(p, keys, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
    let v = linear(p, keys, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
    let dh = cfg.d / cfg.heads;
    let mut joined = vec![vec![0.0; cfg.d]; q.len()];
    for h in 0..cfg.heads {
        for i in 0..q.len() {
            let scores: Vec<f64> = (0..k.len())
                .map(|j| (h * dh..(h + 1) * dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in h * dh..(h + 1) * dh {
                joined[i][c] = (0..k.len()).map(|j| w[j] * v[j][c]).sum();
            }
        }
    }
    linear(p, &joined, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

pub fn layer_norm(p: &ModelParams<f64>, prefix: &str, x: &Mat) -> Mat {
    let g = param(p, &format!("{prefix}.g"));
    let b = param(p, &format!("{prefix}.b"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * g[0][c] + b[0][c])
                .collect()
        })
        .collect()
}

pub fn mlp(p: &ModelParams<f64>, prefix: &str, x: &Mat) -> Mat {
    let h = linear(p, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
    let h: Mat = h.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect();
    linear(p, &h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

pub fn dense_gat(p: &ModelParams<f64>, cfg: &ModelConfig, side: &str, tokens: &Mat, sentence: &[f64], edges: &[(usize, usize)]) -> Mat {
    let m = tokens.len();
    let mut adj = vec![vec![false; m]; m];
    for i in 0..m {
        adj[i][i] = true;
    }
    for &(src, dst) in edges {
        adj[dst][src] = true;
    }
    let mut x: Mat = tokens
        .iter()
        .map(|r| r.iter().chain(sentence).cloned().collect())
        .collect();
    let dh = cfg.d / cfg.heads;
    for l in 0..cfg.l_gat {
        let z = matmul(&x, &param(p, &format!("gat.{side}.{l}.w")));
        let a_src = param(p, &format!("gat.{side}.{l}.a_src"));
        let a_dst = param(p, &format!("gat.{side}.{l}.a_dst"));
        let bias = param(p, &format!("gat.{side}.{l}.b"));
        let mut out = vec![vec![0.0; cfg.d]; m];
        for h in 0..cfg.heads {
            let cols = h * dh..(h + 1) * dh;
            let proj = |row: &[f64], a: &Mat| cols.clone().map(|c| row[c] * a[0][c]).sum::<f64>();
            for i in 0..m {
                let mut e = vec![f64::NEG_INFINITY; m];
                for j in 0..m {
                    if adj[i][j] {
                        let s = proj(&z[i], &a_dst) + proj(&z[j], &a_src);
                        e[j] = if s > 0.0 { s } else { cfg.gat_slope * s };
                    }
                }
                let w = softmax(&e);
                for c in cols.clone() {
                    out[i][c] = (0..m).map(|j| w[j] * z[j][c]).sum();
                }
            }
        }
        x = add_bias(&out, &bias);
        if l + 1 < cfg.l_gat {
            x = x
                .iter()
                .map(|r| r.iter().map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 }).collect())
                .collect();
        }
    }
    x
}

pub fn dense_enhance(p: &ModelParams<f64>, cfg: &ModelConfig, words: &Mat, graph: &Mat) -> (Mat, Mat) {
    let (mut w, mut g) = (words.clone(), graph.clone());
    for l in 0..cfg.l_enh {
        let dw = attention(p, cfg, &format!("enh.{l}.words"), &w, &g);
        let dg = attention(p, cfg, &format!("enh.{l}.graph"), &g, &w);
        w = add(&w, &dw);
        g = add(&g, &dg);
    }
    (w, g)
}

pub fn dense_decode(p: &ModelParams<f64>, cfg: &ModelConfig, fusion: &Mat, q_r: &Mat, q_s: &Mat) -> (Vec<f64>, Vec<f64>) {
    let d = cfg.d;
    let mut mem: Mat = fusion
        .iter()
        .enumerate()
        .map(|(pos, row)| {
            row.iter()
                .enumerate()
                .map(|(i, v)| {
                    let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                    v + if i % 2 == 0 { angle.sin() } else { angle.cos() }
                })
                .collect()
        })
        .collect();
    for l in 0..cfg.l_encdec {
        let a = attention(p, cfg, &format!("enc.{l}.self"), &mem, &mem);
        mem = layer_norm(p, &format!("enc.{l}.ln1"), &add(&mem, &a));
        let f = mlp(p, &format!("enc.{l}.ff"), &mem);
        mem = layer_norm(p, &format!("enc.{l}.ln2"), &add(&mem, &f));
    }
    let mut q: Mat = q_r.iter().chain(q_s).cloned().collect();
    for l in 0..cfg.l_encdec {
        let a = attention(p, cfg, &format!("dec.{l}.self"), &q, &q);
        q = layer_norm(p, &format!("dec.{l}.ln1"), &add(&q, &a));
        let c = attention(p, cfg, &format!("dec.{l}.cross"), &q, &mem);
        q = layer_norm(p, &format!("dec.{l}.ln2"), &add(&q, &c));
        let f = mlp(p, &format!("dec.{l}.ff"), &q);
        q = layer_norm(p, &format!("dec.{l}.ln3"), &add(&q, &f));
    }
    let k = q_r.len();
    let mut flat = vec![0.0; cfg.k_robot * d];
    for (i, row) in q[..k].iter().enumerate() {
        flat[i * d..(i + 1) * d].copy_from_slice(row);
    }
    let act = mlp(p, "head.act", &vec![flat])[0].clone();
    let obj: Vec<f64> = mlp(p, "head.obj", &q[k..].to_vec()).iter().map(|r| r[0]).collect();
    (act, obj)
}

pub fn max_diff(a: &Mat, b: &Array2<f64>) -> f64 {
    assert_eq!((a.len(), a[0].len()), b.dim());
    let mut worst: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - b[[i, j]]).abs());
        }
    }
    worst
}

pub fn max_diff_1d(a: &[f64], b: &Array1<f64>) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Moves every parameter off its initial value so zero biases and unit
/// gains are exercised too.
pub fn jitter(p: &mut ModelParams<f64>, seed: u64) {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    for a in p.arrays.values_mut() {
        a.mapv_inplace(|v| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            v + ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.2
        });
    }
}


/// Largest deviation of `gat_extract` (both graphs), `enhance`, `decode`
/// and the full forward pass from the dense loops, for one stage.
pub fn module_errors(
    p: &ModelParams<f64>,
    cfg: &ModelConfig,
    enc: &dyn grid_core::encoder::TextEncoder,
    instruction: &str,
    robot: &grid_core::graph::RobotGraph,
    scene: &grid_core::graph::SceneGraph,
) -> [f64; 4] {
    use grid_core::network::{decode, enhance, forward, gat_extract, prepare_inputs, GraphSide};
    let inp = prepare_inputs(instruction, robot, scene, enc, cfg).unwrap();
    let sentence = inp.sentence.row(0).to_owned();
    let r_edges = robot.0.ordinal_edges();
    let s_edges = scene.0.ordinal_edges();

    let y_r = gat_extract(p, cfg, GraphSide::Robot, &inp.robot_tokens, &sentence, &r_edges).unwrap();
    let y_s = gat_extract(p, cfg, GraphSide::Scene, &inp.scene_tokens, &sentence, &s_edges).unwrap();
    let dy_r = dense_gat(p, cfg, "robot", &to_mat(&inp.robot_tokens), sentence.as_slice().unwrap(), &r_edges);
    let dy_s = dense_gat(p, cfg, "scene", &to_mat(&inp.scene_tokens), sentence.as_slice().unwrap(), &s_edges);
    let gat = max_diff(&dy_r, &y_r).max(max_diff(&dy_s, &y_s));

    let (f, q_r, q_s) = enhance(p, cfg, &inp.words, &y_r, &y_s).unwrap();
    let graph: Mat = dy_r.iter().chain(&dy_s).cloned().collect();
    let (df, dq) = dense_enhance(p, cfg, &to_mat(&inp.words), &graph);
    let k = y_r.nrows();
    let (dq_r, dq_s) = (dq[..k].to_vec(), dq[k..].to_vec());
    let enh = max_diff(&df, &f).max(max_diff(&dq_r, &q_r)).max(max_diff(&dq_s, &q_s));

    let out = decode(p, cfg, &f, &q_r, &q_s, &inp.scene_ids).unwrap();
    let (act, obj) = dense_decode(p, cfg, &df, &dq_r, &dq_s);
    let dec = max_diff_1d(&act, &out.action_logits).max(max_diff_1d(&obj, &out.object_logits));

    let full = forward(instruction, robot, scene, p, cfg, enc).unwrap();
    let all = max_diff_1d(&act, &full.action_logits).max(max_diff_1d(&obj, &full.object_logits));
    [gat, enh, dec, all]
}
