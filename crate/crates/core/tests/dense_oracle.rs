#[path = "support/dense.rs"]
mod dense;

use dense::*;
use grid_core::dataset::{generate_dataset, DatasetConfig};
use grid_core::encoder::ToyEncoder;
use grid_core::network::{gat_extract, GraphSide, ModelConfig, ModelParams};
use ndarray::{Array1, Array2};

fn configs() -> Vec<ModelConfig> {
    let base = ModelConfig {
        d: 16,
        heads: 4,
        l_gat: 2,
        l_enh: 2,
        l_encdec: 2,
        ff_dim: 24,
        head_hidden: 12,
        ..Default::default()
    };
    vec![
        base.clone(),
        ModelConfig { heads: 1, l_gat: 1, l_enh: 1, l_encdec: 1, ..base.clone() },
        ModelConfig { d: 8, heads: 2, l_gat: 3, ..base },
    ]
}

#[test]
fn modules_and_full_forward_match_dense_loops() {
    let ds = generate_dataset(&DatasetConfig { seed: 31, ..Default::default() }, 3).unwrap();
    for (c, cfg) in configs().iter().enumerate() {
        let enc = ToyEncoder::new(cfg.d).unwrap();
        for (t, tr) in ds.all().enumerate() {
            let mut p = ModelParams::<f64>::init(cfg, (c * 10 + t) as u64).unwrap();
            jitter(&mut p, (c * 10 + t) as u64);
            for st in tr.stages.iter().take(4) {
                let errs = module_errors(&p, cfg, &enc, &tr.instruction, &st.robot, &st.scene);
                assert!(errs.iter().all(|&e| e < 1e-9), "config {c}: {errs:?}");
            }
        }
    }
}

#[test]
fn attention_ignores_nodes_without_an_edge_into_the_target() {
    let cfg = ModelConfig { l_gat: 1, ..configs()[0].clone() };
    let mut p = ModelParams::<f64>::init(&cfg, 9).unwrap();
    jitter(&mut p, 3);
    let tokens = Array2::from_shape_fn((3, cfg.d), |(i, j)| ((i * 7 + j) % 5) as f64 * 0.2 - 0.4);
    let sentence = Array1::from_shape_fn(cfg.d, |j| (j as f64 * 0.3).sin());
    let base = gat_extract(&p, &cfg, GraphSide::Scene, &tokens, &sentence, &[(1, 0)]).unwrap();
    // node 2 has no edge into node 0, so changing it leaves row 0 alone
    let mut moved = tokens.clone();
    moved.row_mut(2).mapv_inplace(|v| v + 1.0);
    let after = gat_extract(&p, &cfg, GraphSide::Scene, &moved, &sentence, &[(1, 0)]).unwrap();
    assert_eq!(base.row(0), after.row(0));
    assert_ne!(base.row(2), after.row(2));
    // the edge 1 -> 0 does not let node 0 influence node 1
    let mut moved = tokens.clone();
    moved.row_mut(0).mapv_inplace(|v| v + 1.0);
    let after = gat_extract(&p, &cfg, GraphSide::Scene, &moved, &sentence, &[(1, 0)]).unwrap();
    assert_eq!(base.row(1), after.row(1));
}
