use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::{neighbors_from_edges, sinusoidal_positions, Ctx, GraphSide};
use super::{ModelConfig, ModelParams, NetworkError, N_ACT};
use crate::encoder::{encode_nodes, TextEncoder};
use crate::graph::{validate_pair, Action, GraphError, NodeId, RobotGraph, SceneGraph, Subtask};
use crate::tensor::{Real, Tape, Var};

/// Everything the network reads for one prediction, already embedded.
#[derive(Clone, Debug)]
pub struct Inputs<T> {
    pub words: Array2<T>,
    /// `1 x d`
    pub sentence: Array2<T>,
    pub robot_tokens: Array2<T>,
    pub robot_neighbors: Arc<Vec<Vec<usize>>>,
    pub scene_tokens: Array2<T>,
    pub scene_neighbors: Arc<Vec<Vec<usize>>>,
    /// Scene node id of each scene row.
    pub scene_ids: Vec<NodeId>,
}

impl<T: Real> Inputs<T> {
    pub fn cast<U: Real>(&self) -> Inputs<U> {
        let c = |a: &Array2<T>| a.mapv(|x| U::lit(x.as_f64()));
        Inputs {
            words: c(&self.words),
            sentence: c(&self.sentence),
            robot_tokens: c(&self.robot_tokens),
            robot_neighbors: self.robot_neighbors.clone(),
            scene_tokens: c(&self.scene_tokens),
            scene_neighbors: self.scene_neighbors.clone(),
            scene_ids: self.scene_ids.clone(),
        }
    }
}

/// Raw scores: 8 action logits and one logit per scene node.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    pub action_logits: Array1<T>,
    pub object_logits: Array1<T>,
    pub scene_ids: Vec<NodeId>,
}

fn softmax<T: Real>(v: &Array1<T>) -> Array1<T> {
    let m = v.fold(T::neg_infinity(), |m, &x| m.max(x));
    let e = v.mapv(|x| (x - m).exp());
    let z = e.sum();
    e / z
}

impl<T: Real> ForwardOutput<T> {
    pub fn action_probs(&self) -> Array1<T> {
        softmax(&self.action_logits)
    }

    pub fn object_probs(&self) -> Array1<T> {
        softmax(&self.object_logits)
    }
}

fn argmax<T: Real>(v: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Independent argmax over both heads, ties going to the lowest index.
pub fn predict<T: Real>(out: &ForwardOutput<T>) -> Subtask {
    let action = Action::from_index(argmax(&out.action_logits)).expect("eight action logits");
    let object_id = out.scene_ids.get(argmax(&out.object_logits)).copied().unwrap_or(0);
    Subtask::new(action, object_id)
}

/// Handles of the outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TracedOutput {
    /// `1 x 8`
    pub action: Var,
    /// `M x 1`
    pub object: Var,
}

/// Places every parameter on the tape as a leaf.
pub fn register_params<T: Real>(tape: &Tape<T>, params: &ModelParams<T>) -> BTreeMap<String, Var> {
    params
        .arrays
        .iter()
        .map(|(n, a)| (n.clone(), tape.leaf(a.clone())))
        .collect()
}

fn ensure_width<T>(what: &str, a: &Array2<T>, d: usize) -> Result<(), NetworkError> {
    if a.ncols() != d {
        return Err(NetworkError::ShapeMismatch(format!("{what} has width {}, expected {d}", a.ncols())));
    }
    Ok(())
}

fn check_inputs<T>(cfg: &ModelConfig, inp: &Inputs<T>) -> Result<(), NetworkError> {
    ensure_width("word tokens", &inp.words, cfg.d)?;
    ensure_width("sentence embedding", &inp.sentence, cfg.d)?;
    ensure_width("robot tokens", &inp.robot_tokens, cfg.d)?;
    ensure_width("scene tokens", &inp.scene_tokens, cfg.d)?;
    if inp.sentence.nrows() != 1 || inp.words.nrows() == 0 {
        return Err(NetworkError::ShapeMismatch("instruction must have one sentence row and words".into()));
    }
    let k = inp.robot_tokens.nrows();
    if k > cfg.k_robot {
        return Err(NetworkError::TooManyRobotNodes { k, cap: cfg.k_robot });
    }
    if k == 0 || inp.robot_neighbors.len() != k {
        return Err(NetworkError::ShapeMismatch("robot rows and neighborhoods disagree".into()));
    }
    let m = inp.scene_tokens.nrows();
    if m == 0 {
        return Err(NetworkError::EmptyScene);
    }
    if inp.scene_neighbors.len() != m || inp.scene_ids.len() != m {
        return Err(NetworkError::ShapeMismatch("scene rows, neighborhoods and ids disagree".into()));
    }
    Ok(())
}

/// Validates the graphs and embeds instruction and nodes.
pub fn prepare_inputs(
    instruction: &str,
    r: &RobotGraph,
    s: &SceneGraph,
    encoder: &dyn TextEncoder,
    cfg: &ModelConfig,
) -> Result<Inputs<f64>, NetworkError> {
    let report = validate_pair(s, r);
    if !report.is_ok() {
        return Err(GraphError::InvalidGraph(report).into());
    }
    if s.0.is_empty() {
        return Err(NetworkError::EmptyScene);
    }
    if r.0.len() > cfg.k_robot {
        return Err(NetworkError::TooManyRobotNodes {
            k: r.0.len(),
            cap: cfg.k_robot,
        });
    }
    if encoder.dim() != cfg.d {
        return Err(NetworkError::ShapeMismatch(format!(
            "encoder dim {} differs from model dim {}",
            encoder.dim(),
            cfg.d
        )));
    }
    let instr = encoder.encode(instruction)?;
    Ok(Inputs {
        words: instr.word_tokens,
        sentence: instr.sentence_embedding.insert_axis(Axis(0)),
        robot_tokens: encode_nodes(encoder, &r.0)?,
        robot_neighbors: Arc::new(neighbors_from_edges(r.0.len(), &r.0.ordinal_edges())?),
        scene_tokens: encode_nodes(encoder, &s.0)?,
        scene_neighbors: Arc::new(neighbors_from_edges(s.0.len(), &s.0.ordinal_edges())?),
        scene_ids: {
            let mut ids: Vec<NodeId> = s.0.nodes.iter().map(|n| n.id).collect();
            ids.sort_unstable();
            ids
        },
    })
}

fn decode_on<T: Real>(ctx: &Ctx<'_, T>, fusion: Var, q_r: Var, q_s: Var) -> TracedOutput {
    let t = ctx.tape;
    let (m_words, d) = t.shape(fusion);
    let k = t.shape(q_r).0;
    let m = t.shape(q_s).0;
    let pos = t.leaf(sinusoidal_positions(m_words, d).mapv(T::lit));
    let memory = ctx.encoder_stack(t.add(fusion, pos));
    let queries = t.concat_rows(&[q_r, q_s]);
    let decoded = ctx.decoder_stack(queries, memory);
    let f_r = t.slice_rows(decoded, 0, k);
    let f_s = t.slice_rows(decoded, k, k + m);
    let action = ctx.mlp("head.act", t.flatten_pad(f_r, ctx.cfg.k_robot));
    let object = ctx.mlp("head.obj", f_s);
    TracedOutput { action, object }
}

/// Records the whole network on `tape`. `dropout_rng` enables dropout.
pub fn trace_forward<T: Real>(
    tape: &Tape<T>,
    vars: &BTreeMap<String, Var>,
    cfg: &ModelConfig,
    inp: &Inputs<T>,
    dropout_rng: Option<ChaCha8Rng>,
) -> Result<TracedOutput, NetworkError> {
    check_inputs(cfg, inp)?;
    let ctx = Ctx {
        tape,
        vars,
        cfg,
        dropout: dropout_rng.map(RefCell::new),
    };
    let words = tape.leaf(inp.words.clone());
    let sentence = tape.leaf(inp.sentence.clone());
    let robot = tape.leaf(inp.robot_tokens.clone());
    let scene = tape.leaf(inp.scene_tokens.clone());
    let y_r = ctx.gat(GraphSide::Robot, robot, sentence, inp.robot_neighbors.clone());
    let y_s = ctx.gat(GraphSide::Scene, scene, sentence, inp.scene_neighbors.clone());
    let k = inp.robot_tokens.nrows();
    let m = inp.scene_tokens.nrows();
    let graph = tape.concat_rows(&[y_r, y_s]);
    let (fusion, q) = ctx.enhance(words, graph);
    let q_r = tape.slice_rows(q, 0, k);
    let q_s = tape.slice_rows(q, k, k + m);
    Ok(decode_on(&ctx, fusion, q_r, q_s))
}

pub fn read_output<T: Real>(tape: &Tape<T>, traced: TracedOutput, scene_ids: Vec<NodeId>) -> ForwardOutput<T> {
    let action_logits: Array1<T> = tape.value(traced.action).iter().copied().collect();
    let object_logits: Array1<T> = tape.value(traced.object).iter().copied().collect();
    debug_assert_eq!(action_logits.len(), N_ACT);
    ForwardOutput {
        action_logits,
        object_logits,
        scene_ids,
    }
}

/// Inference on already embedded inputs.
pub fn forward_inputs<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    inp: &Inputs<T>,
) -> Result<ForwardOutput<T>, NetworkError> {
    let tape = Tape::new();
    let vars = register_params(&tape, params);
    let traced = trace_forward(&tape, &vars, cfg, inp, None)?;
    Ok(read_output(&tape, traced, inp.scene_ids.clone()))
}

/// Embeds the inputs with `encoder` and runs the network.
pub fn forward<T: Real>(
    instruction: &str,
    r: &RobotGraph,
    s: &SceneGraph,
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    encoder: &dyn TextEncoder,
) -> Result<ForwardOutput<T>, NetworkError> {
    let inp = prepare_inputs(instruction, r, s, encoder, cfg)?.cast::<T>();
    forward_inputs(params, cfg, &inp)
}

/// Graph attention feature extraction for one graph: `M x d` node tokens,
/// the `d` sentence embedding and row-index edges in, `M x d` features out.
pub fn gat_extract<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    side: GraphSide,
    tokens: &Array2<T>,
    sentence: &Array1<T>,
    edges: &[(usize, usize)],
) -> Result<Array2<T>, NetworkError> {
    ensure_width("node tokens", tokens, cfg.d)?;
    if sentence.len() != cfg.d {
        return Err(NetworkError::ShapeMismatch(format!(
            "sentence has length {}, expected {}",
            sentence.len(),
            cfg.d
        )));
    }
    let neighbors = Arc::new(neighbors_from_edges(tokens.nrows(), edges)?);
    let tape = Tape::new();
    let vars = register_params(&tape, params);
    let ctx = Ctx {
        tape: &tape,
        vars: &vars,
        cfg,
        dropout: None,
    };
    let t = tape.leaf(tokens.clone());
    let s = tape.leaf(sentence.clone().insert_axis(Axis(0)));
    let out = ctx.gat(side, t, s, neighbors);
    Ok(tape.value(out))
}

/// The cross-attention enhancer; returns `(fusion, q_R, q_S)`.
pub fn enhance<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    words: &Array2<T>,
    y_r: &Array2<T>,
    y_s: &Array2<T>,
) -> Result<(Array2<T>, Array2<T>, Array2<T>), NetworkError> {
    ensure_width("words", words, cfg.d)?;
    ensure_width("robot features", y_r, cfg.d)?;
    ensure_width("scene features", y_s, cfg.d)?;
    let tape = Tape::new();
    let vars = register_params(&tape, params);
    let ctx = Ctx {
        tape: &tape,
        vars: &vars,
        cfg,
        dropout: None,
    };
    let k = y_r.nrows();
    let w = tape.leaf(words.clone());
    let r = tape.leaf(y_r.clone());
    let s = tape.leaf(y_s.clone());
    let g = tape.concat_rows(&[r, s]);
    let (f, q) = ctx.enhance(w, g);
    let q = tape.value(q);
    Ok((
        tape.value(f),
        q.slice(ndarray::s![..k, ..]).to_owned(),
        q.slice(ndarray::s![k.., ..]).to_owned(),
    ))
}

/// Transformer encoder over the fusion features, shared decoder over the
/// graph queries, then both heads.
pub fn decode<T: Real>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    fusion: &Array2<T>,
    q_r: &Array2<T>,
    q_s: &Array2<T>,
    scene_ids: &[NodeId],
) -> Result<ForwardOutput<T>, NetworkError> {
    ensure_width("fusion", fusion, cfg.d)?;
    ensure_width("robot queries", q_r, cfg.d)?;
    ensure_width("scene queries", q_s, cfg.d)?;
    if q_r.nrows() > cfg.k_robot {
        return Err(NetworkError::TooManyRobotNodes {
            k: q_r.nrows(),
            cap: cfg.k_robot,
        });
    }
    if q_s.nrows() == 0 {
        return Err(NetworkError::EmptyScene);
    }
    if scene_ids.len() != q_s.nrows() {
        return Err(NetworkError::ShapeMismatch("one scene id per scene query row".into()));
    }
    let tape = Tape::new();
    let vars = register_params(&tape, params);
    let ctx = Ctx {
        tape: &tape,
        vars: &vars,
        cfg,
        dropout: None,
    };
    let f = tape.leaf(fusion.clone());
    let r = tape.leaf(q_r.clone());
    let s = tape.leaf(q_s.clone());
    let traced = decode_on(&ctx, f, r, s);
    Ok(read_output(&tape, traced, scene_ids.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ToyEncoder;
    use crate::graph::{Edge, Node, Relation, ATTR_PICKABLE, ATTR_SURFACE};
    use ndarray::array;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d: 8,
            heads: 2,
            l_gat: 1,
            l_enh: 1,
            l_encdec: 1,
            k_robot: 4,
            ff_dim: 8,
            head_hidden: 8,
            ..Default::default()
        }
    }

    fn scene() -> SceneGraph {
        SceneGraph::new(
            vec![
                Node::new(0, "floor"),
                Node::new(1, "kitchen"),
                Node::new(2, "table").with_attr(ATTR_SURFACE, "true"),
                Node::new(3, "cup").with_attr(ATTR_PICKABLE, "true"),
            ],
            vec![
                Edge::new(1, 0, Relation::On),
                Edge::new(2, 1, Relation::In),
                Edge::new(3, 2, Relation::On),
            ],
        )
    }

    #[test]
    fn predict_ties_go_low() {
        let out = ForwardOutput {
            action_logits: Array1::<f64>::zeros(8),
            object_logits: array![1.0, 3.0, 2.0],
            scene_ids: vec![4, 1, 9],
        };
        assert_eq!(predict(&out), Subtask::new(Action::Move, 1));
    }

    #[test]
    fn forward_shapes_and_normalization() {
        let cfg = tiny();
        let enc = ToyEncoder::new(8).unwrap();
        let p = ModelParams::<f64>::init(&cfg, 1).unwrap();
        let out = forward("take the cup", &RobotGraph::initial(), &scene(), &p, &cfg, &enc).unwrap();
        assert_eq!(out.action_logits.len(), 8);
        assert_eq!(out.object_logits.len(), 4);
        assert!((out.action_probs().sum() - 1.0).abs() < 1e-12);
        assert!((out.object_probs().sum() - 1.0).abs() < 1e-12);
        let again = forward("take the cup", &RobotGraph::initial(), &scene(), &p, &cfg, &enc).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn too_many_robot_rows() {
        let cfg = tiny();
        let p = ModelParams::<f64>::init(&cfg, 1).unwrap();
        let q_r = Array2::zeros((5, 8));
        let err = decode(&p, &cfg, &Array2::zeros((2, 8)), &q_r, &Array2::zeros((1, 8)), &[0]).unwrap_err();
        assert!(matches!(err, NetworkError::TooManyRobotNodes { k: 5, cap: 4 }));
    }

    #[test]
    fn zero_output_projections_make_enhancer_identity() {
        let cfg = tiny();
        let mut p = ModelParams::<f64>::init(&cfg, 2).unwrap();
        p.zero_enhancer_outputs();
        let w = Array2::from_shape_fn((3, 8), |(i, j)| (i + j) as f64 * 0.1);
        let r = Array2::from_shape_fn((1, 8), |(_, j)| j as f64);
        let s = Array2::from_shape_fn((2, 8), |(i, j)| (i * j) as f64 - 1.0);
        let (f, qr, qs) = enhance(&p, &cfg, &w, &r, &s).unwrap();
        assert_eq!((f, qr, qs), (w, r, s));
    }
}
