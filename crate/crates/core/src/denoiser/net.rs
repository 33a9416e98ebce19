//! Mesh graph encoder, step embedding and causal encoder-decoder.
//!
//! Every attention in the stack is causal, so the estimate for frame `t`
//! depends only on inputs at frames `<= t`. Free-running decoding runs the
//! decoder over growing prefixes; since every op acts row-wise or through a
//! masked softmax whose masked weights are exact zeros, the last prefix pass
//! equals a teacher-forced pass fed the same states, bit for bit.

use std::rc::Rc;
use std::sync::Arc;

use handrift_tensor::{Graph, ParamStore, RngStream, Tensor, Var};

use super::layers::{causal_mask, cross_attention, feed_forward, linear, neighbor_mean, self_attention, gated_scan, ParamLookup};
use super::{argmax, one_hot, sample_state_graph, DenoiseInput, DenoiserConfig};
use crate::error::{CoreError, Result};
use crate::hand::HandModel;
use crate::motion::{HandPose, Normalizer, FRAME_DIM};

const LN_EPS: f64 = 1e-5;

/// How decoded states are fed back to later frames.
pub enum StateFeed<'a> {
    /// Ground-truth labels, one per frame.
    Teacher(&'a [usize]),
    /// The network's own argmax.
    Argmax,
    /// Hard Gumbel samples at the configured temperature, with
    /// straight-through gradients on a recording graph.
    Gumbel(&'a mut RngStream),
}

pub struct ForwardOutput {
    /// `[T, FRAME_DIM]`
    pub x_hat: Var,
    /// `[T, S]`
    pub logits: Var,
    /// States fed to the gate, one per frame.
    pub states: Vec<usize>,
}

/// Names and shapes of every parameter for `cfg`.
pub fn param_shapes(cfg: &DenoiserConfig) -> Vec<(String, Vec<usize>)> {
    let (w, f, s, d) = (cfg.width, cfg.ffn_width, cfg.num_states, FRAME_DIM);
    let mut out = Vec::new();
    let mut lin = |name: String, i: usize, o: usize| {
        out.push((format!("{name}.w"), vec![i, o]));
        out.push((format!("{name}.b"), vec![o]));
    };
    let mut c_in = 3;
    for (l, &c) in cfg.mesh_widths.iter().enumerate() {
        lin(format!("mesh.{l}"), c_in, c);
        c_in = c;
    }
    lin("step.0".into(), cfg.step_features, w);
    lin("step.1".into(), w, w);
    lin("input".into(), 2 * c_in + 2 * d, w);
    for l in 0..cfg.encoder_layers {
        lin(format!("enc.{l}.attn.qkv"), w, 3 * w);
        lin(format!("enc.{l}.attn.out"), w, w);
        lin(format!("enc.{l}.ffn.0"), w, f);
        lin(format!("enc.{l}.ffn.1"), f, w);
    }
    for l in 0..cfg.decoder_layers {
        lin(format!("dec.{l}.self.qkv"), w, 3 * w);
        lin(format!("dec.{l}.self.out"), w, w);
        lin(format!("dec.{l}.cross.q"), w, w);
        lin(format!("dec.{l}.cross.kv"), w, 2 * w);
        lin(format!("dec.{l}.cross.out"), w, w);
        lin(format!("dec.{l}.ffn.0"), w, f);
        lin(format!("dec.{l}.ffn.1"), f, w);
    }
    lin("head.pose".into(), w, d);
    lin("head.gate".into(), w, d);
    lin("head.state".into(), w, s);
    out.push(("head.gate_state".into(), vec![s, d]));
    // one extra row for the start token
    out.push(("state.embed".into(), vec![s + 1, w]));
    out
}

/// Fan-in scaled normal weights, zero biases, a small pose head.
pub fn init_params(cfg: &DenoiserConfig, rng: &mut RngStream) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, shape) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name.ends_with(".b") || name == "head.gate_state" {
            vec![0.0; n]
        } else {
            let mut std = 1.0 / (shape[0] as f64).sqrt();
            if name.starts_with("head.pose") {
                std *= cfg.head_init;
            }
            if name == "state.embed" {
                std = 0.1;
            }
            (0..n).map(|_| std * rng.normal()).collect()
        };
        store.insert(name, Tensor::new(&shape, data).expect("shape matches data"));
    }
    store
}

fn finite(g: &Graph, v: Var, layer: &str) -> Result<Var> {
    if g.value(v).is_finite() {
        Ok(v)
    } else {
        Err(CoreError::Numerical(layer.to_string()))
    }
}

/// Sinusoidal encoding of the frame index, `[T, W]`.
pub fn positional_encoding(frames: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; frames * width];
    for t in 0..frames {
        for i in 0..width {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / width as f64);
            let a = t as f64 * freq;
            data[t * width + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(&[frames, width], data).expect("shape matches data")
}

/// Sinusoidal features of `n / N` at octave-spaced frequencies, `[1, F]`.
pub fn step_features(step: usize, steps: usize, features: usize) -> Tensor {
    let u = step as f64 / steps as f64;
    let mut data = Vec::with_capacity(features);
    for i in 0..features / 2 {
        let a = std::f64::consts::PI * 2f64.powi(i as i32) * 0.5 * u;
        data.push(a.sin());
        data.push(a.cos());
    }
    Tensor::new(&[1, features], data).expect("shape matches data")
}

/// Graph convolutions over `[B, V, 3]` meshes, mean-pooled to `[B, C]`.
pub fn encode_meshes(
    g: &Graph,
    p: &dyn ParamLookup,
    layers: usize,
    meshes: Var,
    adjacency: &Arc<Vec<Vec<usize>>>,
) -> Result<Var> {
    let mut h = meshes;
    for l in 0..layers {
        let name = format!("mesh.{l}");
        h = neighbor_mean(g, h, adjacency)?;
        h = g.tanh(linear(g, p, &name, h)?);
        h = finite(g, h, &name)?;
    }
    Ok(g.mean_axis(h, 1)?)
}

#[derive(Clone, Debug)]
pub struct DenoiserNet {
    cfg: DenoiserConfig,
    model: Arc<HandModel>,
    normalizer: Normalizer,
    adjacency: Arc<Vec<Vec<usize>>>,
}

impl DenoiserNet {
    pub fn new(cfg: DenoiserConfig, model: Arc<HandModel>, normalizer: Normalizer) -> Result<Self> {
        cfg.validate()?;
        if normalizer.mean.len() != FRAME_DIM || normalizer.std.len() != FRAME_DIM {
            return Err(CoreError::config("normalizer must have one entry per frame channel"));
        }
        let adjacency = Arc::new(model.template().adjacency().to_vec());
        Ok(DenoiserNet {
            cfg,
            model,
            normalizer,
            adjacency,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn model(&self) -> &Arc<HandModel> {
        &self.model
    }

    pub fn adjacency(&self) -> &Arc<Vec<Vec<usize>>> {
        &self.adjacency
    }

    pub fn init_params(&self, rng: &mut RngStream) -> ParamStore {
        init_params(&self.cfg, rng)
    }

    /// Every expected tensor is present, correctly shaped and finite.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        for (name, shape) in param_shapes(&self.cfg) {
            let t = params
                .get(&name)
                .map_err(|_| CoreError::config(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(CoreError::config(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(CoreError::Numerical(name));
            }
        }
        if params.len() != param_shapes(&self.cfg).len() {
            return Err(CoreError::config("checkpoint holds unexpected parameters"));
        }
        Ok(())
    }

    /// Wrist-relative, scaled template meshes of a normalized sequence,
    /// flattened `[T, V, 3]`.
    pub fn meshes(&self, x: &[f64], frames: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(frames * self.model.num_vertices() * 3);
        for f in x.chunks(FRAME_DIM).take(frames) {
            let raw: Vec<f64> = f
                .iter()
                .enumerate()
                .map(|(d, z)| z * self.normalizer.std[d] + self.normalizer.mean[d])
                .collect();
            let pose = HandPose::from_frame(&raw)?;
            let origin = pose.root_translation;
            for v in self.model.skin_mesh(&pose)? {
                for k in 0..3 {
                    out.push((v[k] - origin[k]) * self.cfg.mesh_scale);
                }
            }
        }
        Ok(out)
    }

    /// Embedding of one frame from the meshes of `y` and `x_n`, `[1, 2C]`.
    pub fn encode_frame(&self, g: &Graph, p: &dyn ParamLookup, mesh_y: &[[f64; 3]], mesh_n: &[[f64; 3]]) -> Result<Var> {
        let v = self.adjacency.len();
        if mesh_y.len() != v || mesh_n.len() != v {
            return Err(CoreError::input(format!(
                "meshes have {} and {} vertices, template has {v}",
                mesh_y.len(),
                mesh_n.len()
            )));
        }
        let data: Vec<f64> = mesh_y.iter().chain(mesh_n).flatten().copied().collect();
        let meshes = g.constant(Tensor::new(&[2, v, 3], data)?);
        let pooled = encode_meshes(g, p, self.cfg.mesh_widths.len(), meshes, &self.adjacency)?;
        let c = g.shape(pooled)[1];
        Ok(g.reshape(pooled, &[1, 2 * c])?)
    }

    /// Two-layer perceptron over sinusoidal features of `step / steps`, `[1, W]`.
    pub fn embed_step(&self, g: &Graph, p: &dyn ParamLookup, step: usize, steps: usize) -> Result<Var> {
        if step == 0 || step > steps {
            return Err(CoreError::input(format!("diffusion step {step} outside 1..={steps}")));
        }
        let feats = g.constant(step_features(step, steps, self.cfg.step_features));
        let h = g.tanh(linear(g, p, "step.0", feats)?);
        finite(g, linear(g, p, "step.1", h)?, "step")
    }

    fn encode(&self, g: &Graph, p: &dyn ParamLookup, tokens: Var) -> Result<Var> {
        let t = g.shape(tokens)[0];
        let mask = causal_mask(t, t);
        let mut h = tokens;
        for l in 0..self.cfg.encoder_layers {
            let a = self_attention(g, p, &format!("enc.{l}.attn"), g.layer_norm(h, LN_EPS)?, self.cfg.heads, Rc::clone(&mask))?;
            h = finite(g, g.add(h, a)?, &format!("enc.{l}.attn"))?;
            let f = feed_forward(g, p, &format!("enc.{l}.ffn"), g.layer_norm(h, LN_EPS)?)?;
            h = finite(g, g.add(h, f)?, &format!("enc.{l}.ffn"))?;
        }
        Ok(g.layer_norm(h, LN_EPS)?)
    }

    /// Decoder over a memory prefix; `prev` holds the one-hot previous state
    /// of each row (start token in column `S`).
    fn decode(&self, g: &Graph, p: &dyn ParamLookup, memory: Var, prev: Option<Var>) -> Result<Var> {
        let t = g.shape(memory)[0];
        let mask = causal_mask(t, t);
        let mut h = match prev {
            Some(prev) if self.cfg.state_conditioning => {
                let e = g.matmul(prev, p.lookup("state.embed")?)?;
                g.add(memory, e)?
            }
            _ => memory,
        };
        let heads = self.cfg.heads;
        for l in 0..self.cfg.decoder_layers {
            let a = self_attention(g, p, &format!("dec.{l}.self"), g.layer_norm(h, LN_EPS)?, heads, Rc::clone(&mask))?;
            h = finite(g, g.add(h, a)?, &format!("dec.{l}.self"))?;
            let c = cross_attention(
                g,
                p,
                &format!("dec.{l}.cross"),
                g.layer_norm(h, LN_EPS)?,
                memory,
                heads,
                Rc::clone(&mask),
            )?;
            h = finite(g, g.add(h, c)?, &format!("dec.{l}.cross"))?;
            let f = feed_forward(g, p, &format!("dec.{l}.ffn"), g.layer_norm(h, LN_EPS)?)?;
            h = finite(g, g.add(h, f)?, &format!("dec.{l}.ffn"))?;
        }
        Ok(g.layer_norm(h, LN_EPS)?)
    }

    fn start_row(&self, g: &Graph) -> Result<Var> {
        let s = self.cfg.num_states;
        Ok(g.constant(Tensor::new(&[1, s + 1], one_hot(s, s + 1))?))
    }

    pub fn forward(&self, g: &Graph, p: &dyn ParamLookup, input: &DenoiseInput, feed: StateFeed) -> Result<ForwardOutput> {
        input.validate()?;
        let (t, d, s) = (input.frames, FRAME_DIM, self.cfg.num_states);
        if t == 0 {
            return Err(CoreError::input("empty sequence"));
        }
        if let StateFeed::Teacher(labels) = &feed {
            if labels.len() != t || labels.iter().any(|&l| l >= s) {
                return Err(CoreError::input("teacher labels must give one valid state per frame"));
            }
        }

        let v = self.adjacency.len();
        let mut mesh = self.meshes(input.y, t)?;
        mesh.extend(self.meshes(input.x_n, t)?);
        let meshes = g.constant(Tensor::new(&[2 * t, v, 3], mesh)?);
        let pooled = encode_meshes(g, p, self.cfg.mesh_widths.len(), meshes, &self.adjacency)?;
        let code_y = g.slice(pooled, 0, 0, t)?;
        let code_n = g.slice(pooled, 0, t, 2 * t)?;
        let y = g.constant(Tensor::new(&[t, d], input.y.to_vec())?);
        let x_n = g.constant(Tensor::new(&[t, d], input.x_n.to_vec())?);
        let feats = g.concat(&[code_y, code_n, y, x_n], 1)?;
        let step = self.embed_step(g, p, input.step, input.steps)?;
        let pos = g.constant(positional_encoding(t, self.cfg.width));
        let tokens = finite(g, g.add(g.add(linear(g, p, "input", feats)?, step)?, pos)?, "input")?;
        let memory = self.encode(g, p, tokens)?;

        let (hidden, gate_states, states) = match feed {
            StateFeed::Teacher(labels) => {
                let mut prev = one_hot(s, s + 1);
                for &l in &labels[..t - 1] {
                    prev.extend(one_hot(l, s + 1));
                }
                let prev = g.constant(Tensor::new(&[t, s + 1], prev)?);
                let onehots: Vec<f64> = labels.iter().flat_map(|&l| one_hot(l, s)).collect();
                let hidden = self.decode(g, p, memory, Some(prev))?;
                (hidden, g.constant(Tensor::new(&[t, s], onehots)?), labels.to_vec())
            }
            feed if !self.cfg.state_conditioning => {
                // no feedback path: one pass, states read off the logits
                let _ = feed;
                let hidden = self.decode(g, p, memory, None)?;
                let logits = g.value(linear(g, p, "head.state", hidden)?);
                let states: Vec<usize> = logits.data().chunks(s).map(argmax).collect();
                let onehots: Vec<f64> = states.iter().flat_map(|&l| one_hot(l, s)).collect();
                (hidden, g.constant(Tensor::new(&[t, s], onehots)?), states)
            }
            mut feed => {
                let zero = g.constant(Tensor::zeros(&[1, 1]));
                let mut prev_rows = vec![self.start_row(g)?];
                let mut state_rows = Vec::with_capacity(t);
                let mut states = Vec::with_capacity(t);
                let mut hidden = memory;
                for i in 0..t {
                    let mem = if i + 1 == t { memory } else { g.slice(memory, 0, 0, i + 1)? };
                    let prev = g.concat(&prev_rows, 0)?;
                    let h = self.decode(g, p, mem, Some(prev))?;
                    let logit = linear(g, p, "head.state", g.slice(h, 0, i, i + 1)?)?;
                    let row = match &mut feed {
                        StateFeed::Gumbel(rng) => sample_state_graph(g, logit, self.cfg.gumbel_tau, rng, true)?,
                        _ => {
                            let k = argmax(g.value(logit).data());
                            g.constant(Tensor::new(&[1, s], one_hot(k, s))?)
                        }
                    };
                    states.push(argmax(g.value(row).data()));
                    prev_rows.push(g.concat(&[row, zero], 1)?);
                    state_rows.push(row);
                    hidden = h;
                }
                (hidden, g.concat(&state_rows, 0)?, states)
            }
        };

        let logits = finite(g, linear(g, p, "head.state", hidden)?, "head.state")?;
        let u = g.add(x_n, linear(g, p, "head.pose", hidden)?)?;
        let mut gate = linear(g, p, "head.gate", hidden)?;
        if self.cfg.state_conditioning {
            let bias = g.scale(p.lookup("head.gate_state")?, self.cfg.gate_state_scale);
            gate = g.add(gate, g.matmul(gate_states, bias)?)?;
        }
        let gate = g.sigmoid(gate);
        let x_hat = finite(g, gated_scan(g, u, gate)?, "head.pose")?;
        Ok(ForwardOutput { x_hat, logits, states })
    }
}
