//! Reordering the scene rows of already embedded network inputs.
#![allow(dead_code)]

use std::sync::Arc;

use grid_core::network::Inputs;
use grid_core::tensor::Real;
use ndarray::Array2;

/// Row `i` of the result is row `perm[i]` of the input; neighbor lists are
/// relabelled to match, with self kept first.
pub fn permute_scene<T: Real>(inp: &Inputs<T>, perm: &[usize]) -> Inputs<T> {
    let m = perm.len();
    let mut inverse = vec![0; m];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let tokens = Array2::from_shape_fn((m, inp.scene_tokens.ncols()), |(i, j)| inp.scene_tokens[[perm[i], j]]);
    let neighbors: Vec<Vec<usize>> = perm
        .iter()
        .map(|&old| inp.scene_neighbors[old].iter().map(|&j| inverse[j]).collect())
        .collect();
    Inputs {
        scene_tokens: tokens,
        scene_neighbors: Arc::new(neighbors),
        scene_ids: perm.iter().map(|&old| inp.scene_ids[old]).collect(),
        ..inp.clone()
    }
}
