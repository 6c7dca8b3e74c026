//! Hierarchical attention encoder-decoder.
//!
//! The encoder runs `LSTM_R` over frames. At frame `i` it attends over the
//! `k` object regions with scores `w_eᵀ tanh(W_e h_{i-1} + U_e vr_ij + z_e)`
//! and feeds the attended region vector to the cell.
//!
//! The decoder `LSTM_F` attends at every step over three sequences (encoder
//! states `H^R`, frame features `VF`, clip features `VC`), each with its own
//! `(w, W, U, z)` set, conditioned on the previous decoder state. Its input is
//! `[W_E y_{t-1}; φ(H^R); φ(VF); φ(VC)]` and the logits are `U_y h_t`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, VideoFeatures};
use crate::ndcore::{io, Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("token index {index} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { index: usize, vocab: usize },
    #[error("target sequence needs at least BOS and one prediction")]
    EmptyTarget,
    #[error("feature dims {features:?} do not match model dims {model:?}")]
    FeatureDims {
        features: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("parameter {0:?}: {1}")]
    Param(String, String),
}

/// Sizes of every learnable tensor.
/// Model widths that do not depend on features or vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSize {
    pub hidden: usize,
    pub embed: usize,
    pub attention: usize,
}

impl ModelSize {
    pub fn dims(&self, features: &FeatureConfig, vocab: usize) -> ModelDims {
        ModelDims::new(self.hidden, self.embed, self.attention, features, vocab)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub hidden: usize,
    pub embed: usize,
    pub attention: usize,
    pub d_object: usize,
    pub d_frame: usize,
    pub d_clip: usize,
    pub vocab: usize,
}

impl ModelDims {
    pub fn new(hidden: usize, embed: usize, attention: usize, features: &FeatureConfig, vocab: usize) -> Self {
        Self {
            hidden,
            embed,
            attention,
            d_object: features.d_object,
            d_frame: features.d_frame,
            d_clip: features.d_clip,
            vocab,
        }
    }

    fn decoder_input(&self) -> usize {
        self.embed + self.hidden + self.d_frame + self.d_clip
    }

    /// `(name, shape)` for every parameter, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let a = self.attention;
        let mut out = vec![
            ("lstm_r.weight".into(), vec![4 * h, self.d_object + h]),
            ("lstm_r.bias".into(), vec![4 * h]),
            ("lstm_f.weight".into(), vec![4 * h, self.decoder_input() + h]),
            ("lstm_f.bias".into(), vec![4 * h]),
            ("embed".into(), vec![self.vocab, self.embed]),
            ("output".into(), vec![self.vocab, h]),
        ];
        for (prefix, input) in [
            ("att_obj", self.d_object),
            ("att_hr", h),
            ("att_vf", self.d_frame),
            ("att_vc", self.d_clip),
        ] {
            out.push((format!("{prefix}.score"), vec![a]));
            out.push((format!("{prefix}.state"), vec![a, h]));
            out.push((format!("{prefix}.input"), vec![a, input]));
            out.push((format!("{prefix}.bias"), vec![a]));
        }
        out
    }
}

/// Named parameter tensors of the captioner.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: BTreeMap<String, Tensor>,
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".bias")
}

impl ModelParams {
    /// Scaled-uniform matrices (`±sqrt(6/(fan_in+fan_out))`), zero biases,
    /// forget-gate biases at 1.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, shape) in dims.param_shapes() {
            let len: usize = shape.iter().product();
            let data = if is_bias(&name) {
                let mut b = vec![0.0; len];
                if name.starts_with("lstm_") {
                    b[dims.hidden..2 * dims.hidden].fill(1.0);
                }
                b
            } else {
                let (fan_out, fan_in) = match shape.as_slice() {
                    [r, c] => (*r, *c),
                    [n] => (1, *n),
                    _ => unreachable!("parameters are rank 1 or 2"),
                };
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..len).map(|_| rng.random_range(-s..s)).collect()
            };
            tensors.insert(name, Tensor::new(&shape, data).expect("shape"));
        }
        Self { dims, tensors }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let tensors = dims
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| (name, Tensor::zeros(&shape)))
            .collect();
        Self { dims, tensors }
    }

    pub fn from_tensors(dims: ModelDims, tensors: BTreeMap<String, Tensor>) -> Result<Self, ModelError> {
        let shapes = dims.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(ModelError::Param(
                "*".into(),
                format!("expected {} tensors, got {}", shapes.len(), tensors.len()),
            ));
        }
        for (name, shape) in shapes {
            let t = tensors
                .get(&name)
                .ok_or_else(|| ModelError::Param(name.clone(), "missing".into()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Param(name, format!("shape {:?}, expected {shape:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(ModelError::Param(name, "non-finite values".into()));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        let entries: Vec<(&str, &Tensor)> = self.tensors.iter().map(|(k, v)| (k.as_str(), v)).collect();
        io::save_archive(path, &entries)
    }

    pub fn load(path: &Path, dims: ModelDims) -> Result<Self, ModelError> {
        let tensors = io::load_archive(path)?.into_iter().collect();
        Self::from_tensors(dims, tensors)
    }

    /// Records every parameter as a named leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let mut p = |name: &str| g.param(name, self.tensors[name].clone());
        let lstm_r = LstmVars {
            weight: p("lstm_r.weight"),
            bias: p("lstm_r.bias"),
        };
        let lstm_f = LstmVars {
            weight: p("lstm_f.weight"),
            bias: p("lstm_f.bias"),
        };
        let embed = p("embed");
        let output = p("output");
        let mut attn = |prefix: &str| AttentionVars {
            score: p(&format!("{prefix}.score")),
            state: p(&format!("{prefix}.state")),
            input: p(&format!("{prefix}.input")),
            bias: p(&format!("{prefix}.bias")),
        };
        BoundParams {
            lstm_r,
            lstm_f,
            objects: attn("att_obj"),
            frames: [attn("att_hr"), attn("att_vf"), attn("att_vc")],
            embed,
            output,
            hidden: self.dims.hidden,
            vocab: self.dims.vocab,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub weight: Var,
    pub bias: Var,
}

/// `(w, W, U, z)` of one additive attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub score: Var,
    pub state: Var,
    pub input: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundParams {
    pub lstm_r: LstmVars,
    pub lstm_f: LstmVars,
    pub objects: AttentionVars,
    /// Attention over `H^R`, `VF`, `VC`, in that order.
    pub frames: [AttentionVars; 3],
    pub embed: Var,
    pub output: Var,
    pub hidden: usize,
    pub vocab: usize,
}

/// Train mode draws dropout masks from `rng`; eval mode is deterministic.
pub enum Mode<'a> {
    Eval,
    Train { keep: f64, rng: &'a mut ChaCha8Rng },
}

impl Mode<'_> {
    fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var, TensorError> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { keep, rng } => g.dropout(x, *keep, true, &mut **rng),
        }
    }
}

/// Feature streams recorded as constants on a graph.
#[derive(Clone, Debug)]
pub struct FeatureVars {
    pub regions: Vec<Var>,
    pub frames: Var,
    pub clips: Var,
}

impl FeatureVars {
    pub fn bind(g: &mut Graph, f: &VideoFeatures) -> Self {
        let regions = (0..f.n_frames()).map(|i| g.constant(f.regions(i))).collect();
        Self {
            regions,
            frames: g.constant(f.frame_feats.clone()),
            clips: g.constant(f.clip_feats.clone()),
        }
    }
}

fn check_features(f: &VideoFeatures, dims: &ModelDims) -> Result<(), ModelError> {
    let got = vec![
        f.object_feats.shape()[2],
        f.frame_feats.shape()[1],
        f.clip_feats.shape()[1],
    ];
    let want = vec![dims.d_object, dims.d_frame, dims.d_clip];
    if got != want {
        return Err(ModelError::FeatureDims {
            features: got,
            model: want,
        });
    }
    Ok(())
}

/// One LSTM step: gates `[i, f, o, g] = W [x; h] + b`.
pub fn lstm_step(
    g: &mut Graph,
    cell: LstmVars,
    hidden: usize,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), TensorError> {
    let xh = g.concat(&[x, h])?;
    let pre = g.matvec(cell.weight, xh)?;
    let z = g.add(pre, cell.bias)?;
    let i_pre = g.slice(z, 0, hidden)?;
    let f_pre = g.slice(z, hidden, hidden)?;
    let o_pre = g.slice(z, 2 * hidden, hidden)?;
    let g_pre = g.slice(z, 3 * hidden, hidden)?;
    let i = g.sigmoid(i_pre)?;
    let f = g.sigmoid(f_pre)?;
    let o = g.sigmoid(o_pre)?;
    let cand = g.tanh(g_pre)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_next = g.add(keep, write)?;
    let squashed = g.tanh(c_next)?;
    let h_next = g.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// `U·x_i` for every row of `x[n×d]`; independent of the query state.
pub fn attention_keys(g: &mut Graph, x: Var, attn: &AttentionVars) -> Result<Var, TensorError> {
    g.matmul_nt(x, attn.input)
}

/// Scores rows of `values` against `h_prev` using precomputed `keys`.
pub fn attend(
    g: &mut Graph,
    h_prev: Var,
    values: Var,
    keys: Var,
    attn: &AttentionVars,
) -> Result<(Var, Var), TensorError> {
    let q = g.matvec(attn.state, h_prev)?;
    let q = g.add(q, attn.bias)?;
    let pre = g.add_row_broadcast(keys, q)?;
    let act = g.tanh(pre)?;
    let scores = g.matvec(act, attn.score)?;
    let weights = g.softmax(scores)?;
    let context = g.vecmat(weights, values)?;
    Ok((weights, context))
}

/// Attention over the `k` regions of one frame. Returns `(α, φ)`.
pub fn object_attention(
    g: &mut Graph,
    h_prev: Var,
    regions: Var,
    params: &BoundParams,
) -> Result<(Var, Var), TensorError> {
    let keys = attention_keys(g, regions, &params.objects)?;
    attend(g, h_prev, regions, keys, &params.objects)
}

/// Attention over the rows of `x` with one stream's parameters. Returns `(β, φ)`.
pub fn frame_attention(
    g: &mut Graph,
    h_prev: Var,
    x: Var,
    attn: &AttentionVars,
) -> Result<(Var, Var), TensorError> {
    let keys = attention_keys(g, x, attn)?;
    attend(g, h_prev, x, keys, attn)
}

/// Encoder result on the graph.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `n×H` stack of `h_i^R` (after output dropout in train mode).
    pub states: Var,
    /// Object attention weights per frame, each of length `k`.
    pub alphas: Vec<Var>,
    /// Attended sequences `[H^R, VF, VC]` and their precomputed keys.
    values: [Var; 3],
    keys: [Var; 3],
}

pub fn encode(
    g: &mut Graph,
    features: &FeatureVars,
    params: &BoundParams,
    mode: &mut Mode<'_>,
) -> Result<Encoded, TensorError> {
    let zeros = Tensor::zeros(&[params.hidden]);
    let mut h = g.constant(zeros.clone());
    let mut c = g.constant(zeros);
    let mut outputs = Vec::with_capacity(features.regions.len());
    let mut alphas = Vec::with_capacity(features.regions.len());
    for &regions in &features.regions {
        let (alpha, context) = object_attention(g, h, regions, params)?;
        let x = mode.dropout(g, context)?;
        let (h_next, c_next) = lstm_step(g, params.lstm_r, params.hidden, x, h, c)?;
        outputs.push(mode.dropout(g, h_next)?);
        alphas.push(alpha);
        h = h_next;
        c = c_next;
    }
    let states = g.stack(&outputs)?;
    let values = [states, features.frames, features.clips];
    let keys = [
        attention_keys(g, states, &params.frames[0])?,
        attention_keys(g, features.frames, &params.frames[1])?,
        attention_keys(g, features.clips, &params.frames[2])?,
    ];
    Ok(Encoded {
        states,
        alphas,
        values,
        keys,
    })
}

/// Output of one decoder step on the graph.
#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub logits: Var,
    pub h: Var,
    pub c: Var,
    /// Frame-level weights over `H^R`, `VF`, `VC`.
    pub betas: [Var; 3],
}

pub fn decoder_init(g: &mut Graph, params: &BoundParams) -> (Var, Var) {
    let zeros = Tensor::zeros(&[params.hidden]);
    (g.constant(zeros.clone()), g.constant(zeros))
}

#[allow(clippy::too_many_arguments)]
pub fn decode_step(
    g: &mut Graph,
    y_prev: usize,
    h_prev: Var,
    c_prev: Var,
    enc: &Encoded,
    params: &BoundParams,
    mode: &mut Mode<'_>,
) -> Result<Step, ModelError> {
    if y_prev >= params.vocab {
        return Err(ModelError::TokenOutOfRange {
            index: y_prev,
            vocab: params.vocab,
        });
    }
    let embedded = g.row(params.embed, y_prev)?;
    let mut parts = vec![embedded];
    let mut betas = [embedded; 3];
    for s in 0..3 {
        let (beta, ctx) = attend(g, h_prev, enc.values[s], enc.keys[s], &params.frames[s])?;
        betas[s] = beta;
        parts.push(ctx);
    }
    let x = g.concat(&parts)?;
    let x = mode.dropout(g, x)?;
    let (h, c) = lstm_step(g, params.lstm_f, params.hidden, x, h_prev, c_prev)?;
    let out = mode.dropout(g, h)?;
    let logits = g.matvec(params.output, out)?;
    Ok(Step { logits, h, c, betas })
}

/// Teacher-forced unroll.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `T×|vocab|`, one row per predicted position `target[1..]`.
    pub logits: Var,
    pub encoded: Encoded,
    pub steps: Vec<Step>,
}

/// Encodes once, then predicts `target[t]` from `target[t-1]` for every `t ≥ 1`.
pub fn forward_teacher_forced(
    g: &mut Graph,
    features: &VideoFeatures,
    target: &[usize],
    params: &BoundParams,
    dims: &ModelDims,
    mode: &mut Mode<'_>,
) -> Result<Forward, ModelError> {
    if target.len() < 2 {
        return Err(ModelError::EmptyTarget);
    }
    check_features(features, dims)?;
    let feats = FeatureVars::bind(g, features);
    let encoded = encode(g, &feats, params, mode)?;
    let (mut h, mut c) = decoder_init(g, params);
    let mut steps = Vec::with_capacity(target.len() - 1);
    for &y_prev in &target[..target.len() - 1] {
        let step = decode_step(g, y_prev, h, c, &encoded, params, mode)?;
        h = step.h;
        c = step.c;
        steps.push(step);
    }
    let rows: Vec<Var> = steps.iter().map(|s| s.logits).collect();
    let logits = g.stack(&rows)?;
    Ok(Forward {
        logits,
        encoded,
        steps,
    })
}

/// Encoder output read back from the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// `n×H`
    pub states: Tensor,
    /// `n×k`, each row on the simplex.
    pub object_attention: Tensor,
}

impl EncoderOutput {
    pub fn read(g: &Graph, enc: &Encoded) -> Self {
        let k = g.value(enc.alphas[0]).len();
        let data = enc.alphas.iter().flat_map(|a| g.value(*a).data().to_vec()).collect();
        Self {
            states: g.value(enc.states).clone(),
            object_attention: Tensor::new(&[enc.alphas.len(), k], data).expect("shape"),
        }
    }
}

/// One decoder step read back from the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStepOutput {
    pub logits: Tensor,
    pub h: Tensor,
    pub frame_attention: [Tensor; 3],
}

impl DecoderStepOutput {
    pub fn read(g: &Graph, step: &Step) -> Self {
        Self {
            logits: g.value(step.logits).clone(),
            h: g.value(step.h).clone(),
            frame_attention: step.betas.map(|b| g.value(b).clone()),
        }
    }
}

/// All attention weights of a forward pass, for export and inspection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    /// `[frame][region]`
    pub object: Vec<Vec<f64>>,
    /// `[step][stream][frame]` with streams `H^R`, `VF`, `VC`.
    pub frame: Vec<[Vec<f64>; 3]>,
}

impl AttentionTrace {
    pub fn read(g: &Graph, enc: &Encoded, steps: &[Step]) -> Self {
        Self {
            object: enc.alphas.iter().map(|a| g.value(*a).data().to_vec()).collect(),
            frame: steps
                .iter()
                .map(|s| s.betas.map(|b| g.value(b).data().to_vec()))
                .collect(),
        }
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.object
            .iter()
            .map(Vec::as_slice)
            .chain(self.frame.iter().flat_map(|s| s.iter().map(Vec::as_slice)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            hidden: 6,
            embed: 5,
            attention: 4,
            d_object: 3,
            d_frame: 4,
            d_clip: 2,
            vocab: 9,
        }
    }

    fn features(n: usize, k: usize, dims: &ModelDims, seed: u64) -> VideoFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        VideoFeatures::new(
            "v",
            Tensor::new(&[n, k, dims.d_object], rand(n * k * dims.d_object)).unwrap(),
            Tensor::new(&[n, dims.d_frame], rand(n * dims.d_frame)).unwrap(),
            Tensor::new(&[n, dims.d_clip], rand(n * dims.d_clip)).unwrap(),
        )
        .unwrap()
    }

    fn random_params(seed: u64) -> ModelParams {
        ModelParams::init(tiny_dims(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn init_shapes_and_forget_bias() {
        let p = random_params(1);
        let b = p.get("lstm_r.bias").unwrap().data();
        assert!(b[..6].iter().all(|&v| v == 0.0));
        assert!(b[6..12].iter().all(|&v| v == 1.0));
        assert!(p.get("att_obj.bias").unwrap().data().iter().all(|&v| v == 0.0));
        for (name, shape) in tiny_dims().param_shapes() {
            assert_eq!(p.get(&name).unwrap().shape(), shape.as_slice(), "{name}");
        }
    }

    #[test]
    fn single_region_gets_full_weight() {
        let p = random_params(2);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let h = g.constant(Tensor::vector(vec![0.3; 6]));
        let region = Tensor::new(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = g.constant(region.clone());
        let (w, ctx) = object_attention(&mut g, h, r, &b).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
        assert_eq!(g.value(ctx).data(), region.data());
    }

    #[test]
    fn identical_regions_get_uniform_weights() {
        let p = random_params(3);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let h = g.constant(Tensor::vector(vec![-0.2; 6]));
        let r = g.constant(Tensor::new(&[4, 3], [0.1, 0.2, 0.3].repeat(4)).unwrap());
        let (w, _) = object_attention(&mut g, h, r, &b).unwrap();
        for &v in g.value(w).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_score_vector_forces_uniform_weights() {
        let mut p = random_params(4);
        p.get_mut("att_obj.score").unwrap().data_mut().fill(0.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let h = g.constant(Tensor::vector(vec![0.7; 6]));
        let r = g.constant(Tensor::new(&[3, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0, -1.0, 2.0, 4.0]).unwrap());
        let (w, _) = object_attention(&mut g, h, r, &b).unwrap();
        assert!(g.value(w).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn zero_params_and_inputs_give_zero_states() {
        let dims = tiny_dims();
        let p = ModelParams::zeros(dims.clone());
        let mut f = features(3, 2, &dims, 0);
        f.object_feats.data_mut().fill(0.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let fv = FeatureVars::bind(&mut g, &f);
        let enc = encode(&mut g, &fv, &b, &mut Mode::Eval).unwrap();
        assert!(g.value(enc.states).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let dims = tiny_dims();
        let p = ModelParams::zeros(dims.clone());
        let f = features(2, 2, &dims, 5);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let fw = forward_teacher_forced(&mut g, &f, &[1, 4, 2], &b, &dims, &mut Mode::Eval).unwrap();
        assert!(g.value(fw.logits).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_matches_one_manual_step() {
        let dims = tiny_dims();
        let p = random_params(6);
        let f = features(1, 2, &dims, 6);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let fv = FeatureVars::bind(&mut g, &f);
        let enc = encode(&mut g, &fv, &b, &mut Mode::Eval).unwrap();
        assert_eq!(g.value(enc.states).shape(), &[1, 6]);

        let (h0, c0) = decoder_init(&mut g, &b);
        let (_, ctx) = object_attention(&mut g, h0, fv.regions[0], &b).unwrap();
        let (h1, _) = lstm_step(&mut g, b.lstm_r, 6, ctx, h0, c0).unwrap();
        assert_eq!(g.value(enc.states).data(), g.value(h1).data());
    }

    #[test]
    fn decoder_length_independent_of_encoder_length() {
        let dims = tiny_dims();
        let p = random_params(7);
        let f = features(8, 2, &dims, 7);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let fw = forward_teacher_forced(&mut g, &f, &[1, 4, 5, 2], &b, &dims, &mut Mode::Eval).unwrap();
        assert_eq!(g.value(fw.logits).shape(), &[3, 9]);
    }

    #[test]
    fn shortest_target_predicts_once() {
        let dims = tiny_dims();
        let p = random_params(8);
        let f = features(2, 2, &dims, 8);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let fw = forward_teacher_forced(&mut g, &f, &[1, 2], &b, &dims, &mut Mode::Eval).unwrap();
        assert_eq!(g.value(fw.logits).shape(), &[1, 9]);
        assert!(matches!(
            forward_teacher_forced(&mut g, &f, &[1], &b, &dims, &mut Mode::Eval),
            Err(ModelError::EmptyTarget)
        ));
    }

    #[test]
    fn out_of_range_token_rejected() {
        let dims = tiny_dims();
        let p = random_params(9);
        let f = features(2, 2, &dims, 9);
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        assert!(matches!(
            forward_teacher_forced(&mut g, &f, &[1, 99, 2], &b, &dims, &mut Mode::Eval),
            Err(ModelError::TokenOutOfRange { index: 99, .. })
        ));
    }

    #[test]
    fn eval_mode_is_bit_deterministic() {
        let dims = tiny_dims();
        let p = random_params(10);
        let f = features(3, 2, &dims, 10);
        let run = || {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let fw = forward_teacher_forced(&mut g, &f, &[1, 5, 6, 2], &b, &dims, &mut Mode::Eval).unwrap();
            g.value(fw.logits).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn params_round_trip_through_archive() {
        let dir = tempfile::tempdir().unwrap();
        let p = random_params(11);
        let path = dir.path().join("params.ndt");
        p.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path, tiny_dims()).unwrap(), p);
        let mut wrong = tiny_dims();
        wrong.hidden = 7;
        assert!(ModelParams::load(&path, wrong).is_err());
    }
}
