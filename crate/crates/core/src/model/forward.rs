use rayon::prelude::*;

use super::params::{ModelGraph, EMG_CHANNEL_NAMES};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::signal::PreprocessedWindow;

/// Examples per graph in [`forward`]; bounds memory on large batches.
pub const FORWARD_CHUNK: usize = 64;

/// Network inputs for a batch, laid out as the graph consumes them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub batch: usize,
    /// One `(B, 1, L)` tensor per EMG channel.
    pub emg: [Tensor; 4],
    /// `(B, steps, L / steps)`: the knee-angle row cut into consecutive chunks.
    pub kin: Option<Tensor>,
    /// `(B, 1)`: last raw knee angle in target units.
    pub anchor: Option<Tensor>,
    /// `(B, 2, L)`.
    pub forces: Option<Tensor>,
}

impl BatchInputs {
    pub fn new(model: &ModelGraph, windows: &[&PreprocessedWindow]) -> Result<Self> {
        let h = model.hyper();
        let scenario = model.scenario();
        let (b, l) = (windows.len(), h.window_len);
        if b == 0 {
            return Err(Error::shape("empty batch"));
        }
        for (i, w) in windows.iter().enumerate() {
            if w.len() != l || w.emg.len() != 4 * l {
                return Err(Error::shape(format!("window {i} has {} samples, model expects {l}", w.len())));
            }
            if w.forces.is_some() != scenario.uses_forces() {
                return Err(Error::Config(format!(
                    "window {i} {} forces but the {scenario} model {} them",
                    if w.forces.is_some() { "carries" } else { "lacks" },
                    if scenario.uses_forces() { "needs" } else { "does not take" }
                )));
            }
        }
        let emg = std::array::from_fn(|c| {
            let data = windows.iter().flat_map(|w| w.emg_channel(c).iter().copied()).collect();
            Tensor::new(vec![b, 1, l], data).expect("emg batch")
        });
        let (kin, anchor) = if scenario.uses_kinematics() {
            let steps = h.steps();
            let data = windows.iter().flat_map(|w| w.kinematic.iter().copied()).collect();
            let anchor = windows.iter().map(|w| model.target_stats().standardize(w.last_observed_deg)).collect();
            (
                Some(Tensor::new(vec![b, steps, l / steps], data)?),
                Some(Tensor::new(vec![b, 1], anchor)?),
            )
        } else {
            (None, None)
        };
        let forces = if scenario.uses_forces() {
            let data = windows.iter().flat_map(|w| w.forces.as_ref().expect("checked").iter().copied()).collect();
            Some(Tensor::new(vec![b, 2, l], data)?)
        } else {
            None
        };
        Ok(Self { batch: b, emg, kin, anchor, forces })
    }
}

/// Nodes of interest after recording a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Recorded {
    /// `(B, H)` in standardized target units.
    pub output: NodeId,
    /// `(B * steps, 1, 4)` softmax weights over the EMG channels.
    pub attention: Option<NodeId>,
}

struct Params<'a> {
    model: &'a ModelGraph,
    ids: &'a [NodeId],
}

impl Params<'_> {
    fn get(&self, name: &str) -> Result<NodeId> {
        self.model
            .params
            .iter()
            .position(|p| p.name == name)
            .map(|i| self.ids[i])
            .ok_or_else(|| Error::shape(format!("model has no tensor `{name}`")))
    }
}

fn conv_branch(g: &mut Graph, p: &Params<'_>, prefix: &str, x: NodeId, model: &ModelGraph) -> Result<NodeId> {
    let h = model.hyper();
    let y = g.conv1d(x, p.get(&format!("{prefix}.conv1.w"))?, p.get(&format!("{prefix}.conv1.b"))?, h.conv1.stride)?;
    let y = g.relu(y);
    let y = g.conv1d(y, p.get(&format!("{prefix}.conv2.w"))?, p.get(&format!("{prefix}.conv2.b"))?, h.conv2.stride)?;
    Ok(g.relu(y))
}

/// `x @ w` applied to the last axis of a rank-3 node.
fn project(g: &mut Graph, x: NodeId, w: NodeId) -> Result<NodeId> {
    let s = g.shape(x).to_vec();
    let flat = g.reshape(x, &[s[0] * s[1], s[2]])?;
    let y = g.matmul(flat, w)?;
    let out = g.shape(y)[1];
    g.reshape(y, &[s[0], s[1], out])
}

/// Runs an LSTM over `(B, T, ·)` input projections and returns every hidden
/// state. `proj` already holds `x W + b` for all steps. Gate order: input,
/// forget, cell, output.
fn lstm(g: &mut Graph, proj: NodeId, w_rec: NodeId, hidden: usize) -> Result<Vec<NodeId>> {
    let s = g.shape(proj).to_vec();
    let (b, t_len) = (s[0], s[1]);
    let mut hs = Vec::with_capacity(t_len);
    let mut state: Option<(NodeId, NodeId)> = None;
    for t in 0..t_len {
        let zt = g.slice(proj, 1, t, 1)?;
        let mut z = g.reshape(zt, &[b, 4 * hidden])?;
        if let Some((h_prev, _)) = state {
            let r = g.matmul(h_prev, w_rec)?;
            z = g.add(z, r)?;
        }
        let i = g.slice(z, 1, 0, hidden)?;
        let i = g.sigmoid(i);
        let cand = g.slice(z, 1, 2 * hidden, hidden)?;
        let cand = g.tanh(cand);
        let o = g.slice(z, 1, 3 * hidden, hidden)?;
        let o = g.sigmoid(o);
        let ig = g.mul(i, cand)?;
        let c = match state {
            Some((_, c_prev)) => {
                let f = g.slice(z, 1, hidden, hidden)?;
                let f = g.sigmoid(f);
                let fc = g.mul(f, c_prev)?;
                g.add(fc, ig)?
            }
            None => ig,
        };
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        hs.push(h);
        state = Some((h, c));
    }
    Ok(hs)
}

fn stack_steps(g: &mut Graph, hs: &[NodeId]) -> Result<NodeId> {
    let parts = hs
        .iter()
        .map(|&h| {
            let s = g.shape(h).to_vec();
            g.reshape(h, &[s[0], 1, s[1]])
        })
        .collect::<Result<Vec<_>>>()?;
    g.concat(&parts, 1)
}

/// Scaled dot-product attention over the four EMG channels.
///
/// `query_src: (N, kin_hidden)`, `features: (N, 4, feature_dim)`. Returns the
/// `(N, 1, attn_dim)` context and the `(N, 1, 4)` weights.
pub fn record_attention(
    g: &mut Graph,
    query_src: NodeId,
    features: NodeId,
    w: [NodeId; 6],
) -> Result<(NodeId, NodeId)> {
    let [wq, bq, wk, bk, wv, bv] = w;
    let fs = g.shape(features).to_vec();
    let (n, c, f) = (fs[0], fs[1], fs[2]);
    let q = g.matmul(query_src, wq)?;
    let q = g.add(q, bq)?;
    let a = g.shape(q)[1];
    let q = g.reshape(q, &[n, 1, a])?;
    let flat = g.reshape(features, &[n * c, f])?;
    let k = g.matmul(flat, wk)?;
    let k = g.add(k, bk)?;
    let k = g.reshape(k, &[n, c, a])?;
    let v = g.matmul(flat, wv)?;
    let v = g.add(v, bv)?;
    let v = g.reshape(v, &[n, c, a])?;
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (a as f64).sqrt());
    let weights = g.softmax(scores, 2)?;
    let ctx = g.batch_matmul(weights, v, false)?;
    Ok((ctx, weights))
}

/// Records the network on `g` with `ids` holding the parameter leaves in
/// `model.params` order.
pub fn record(model: &ModelGraph, g: &mut Graph, ids: &[NodeId], inputs: &BatchInputs) -> Result<Recorded> {
    let h = model.hyper();
    let p = Params { model, ids };
    let b = inputs.batch;
    let steps = h.steps();
    let fdim = h.emg_feature_dim;

    // (B, steps, feature) per channel, then (B, steps, 4 * feature)
    let mut per_channel = Vec::with_capacity(4);
    for (c, name) in EMG_CHANNEL_NAMES.iter().enumerate() {
        let x = g.input(inputs.emg[c].clone());
        let y = conv_branch(g, &p, &format!("emg.{name}"), x, model)?;
        per_channel.push(g.transpose(y)?);
    }
    let emg = g.concat(&per_channel, 2)?;
    if g.shape(emg) != [b, steps, 4 * fdim] {
        return Err(Error::shape(format!("EMG features {:?}, expected {:?}", g.shape(emg), [b, steps, 4 * fdim])));
    }

    let mut proj1 = project(g, emg, p.get("lstm1.w_in")?)?;
    let mut attention = None;
    if model.scenario().uses_kinematics() {
        let kin_in = inputs.kin.clone().ok_or_else(|| Error::Config("kinematic input missing".into()))?;
        let kin = g.input(kin_in);
        let kp = project(g, kin, p.get("kin_lstm.w_in")?)?;
        let kp = g.add(kp, p.get("kin_lstm.b")?)?;
        let kin_h = lstm(g, kp, p.get("kin_lstm.w_rec")?, h.kin_lstm_hidden)?;
        let kin_seq = stack_steps(g, &kin_h)?;
        let q_src = g.reshape(kin_seq, &[b * steps, h.kin_lstm_hidden])?;
        let feats = g.reshape(emg, &[b * steps, 4, fdim])?;
        let w = ["attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv"]
            .map(|n| p.get(n))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let (ctx, weights) = record_attention(g, q_src, feats, [w[0], w[1], w[2], w[3], w[4], w[5]])?;
        let ctx = g.reshape(ctx, &[b, steps, h.attn_dim])?;
        let fused = g.concat(&[kin_seq, ctx], 2)?;
        let extra = project(g, fused, p.get("lstm1.w_in_kin")?)?;
        proj1 = g.add(proj1, extra)?;
        attention = Some(weights);
    }
    let proj1 = g.add(proj1, p.get("lstm1.b")?)?;
    let h1 = lstm(g, proj1, p.get("lstm1.w_rec")?, h.lstm1_hidden)?;
    let seq1 = stack_steps(g, &h1)?;
    let proj2 = project(g, seq1, p.get("lstm2.w_in")?)?;
    let proj2 = g.add(proj2, p.get("lstm2.b")?)?;
    let h2 = lstm(g, proj2, p.get("lstm2.w_rec")?, h.lstm2_hidden)?;
    let last = *h2.last().ok_or_else(|| Error::shape("zero feature steps"))?;

    let mut out = g.matmul(last, p.get("dense.w")?)?;
    out = g.add(out, p.get("dense.b")?)?;
    if model.scenario().uses_forces() {
        let f_in = inputs.forces.clone().ok_or_else(|| Error::Config("force input missing".into()))?;
        let f = g.input(f_in);
        let f = conv_branch(g, &p, "force", f, model)?;
        let pooled = g.mean(f, Some(2))?;
        let fo = g.matmul(pooled, p.get("dense.w_force")?)?;
        out = g.add(out, fo)?;
    }
    if model.scenario().uses_kinematics() {
        let a = g.input(inputs.anchor.clone().ok_or_else(|| Error::Config("anchor input missing".into()))?);
        let ao = g.matmul(a, p.get("dense.w_anchor")?)?;
        out = g.add(out, ao)?;
    }
    if g.shape(out) != [b, h.horizon] {
        return Err(Error::shape(format!("output {:?}, expected {:?}", g.shape(out), [b, h.horizon])));
    }
    Ok(Recorded { output: out, attention })
}

/// Predictions in degrees plus, for kinematic scenarios, channel attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `(B, H)` degrees.
    pub predictions: Tensor,
    /// `(B, steps, 4)`.
    pub attention: Option<Tensor>,
}

fn forward_chunk(model: &ModelGraph, windows: &[&PreprocessedWindow]) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let inputs = BatchInputs::new(model, windows)?;
    let mut g = Graph::new();
    let ids: Vec<NodeId> = model.params.iter().map(|p| g.input(p.value.clone())).collect();
    let rec = record(model, &mut g, &ids, &inputs)?;
    let target = model.target_stats();
    let preds = g.value(rec.output).data().iter().map(|&z| target.destandardize(z)).collect();
    Ok((preds, rec.attention.map(|a| g.value(a).data().to_vec())))
}

/// Inference in chunks of [`FORWARD_CHUNK`], in parallel; results keep the
/// input order.
pub fn forward(model: &ModelGraph, windows: &[&PreprocessedWindow]) -> Result<ForwardOutput> {
    let b = windows.len();
    if b == 0 {
        return Err(Error::shape("empty batch"));
    }
    let parts = windows
        .par_chunks(FORWARD_CHUNK)
        .map(|chunk| forward_chunk(model, chunk))
        .collect::<Result<Vec<_>>>()?;
    let h = model.hyper();
    let mut preds = Vec::with_capacity(b * h.horizon);
    let mut attn = model.scenario().uses_kinematics().then(Vec::new);
    for (p, a) in parts {
        preds.extend(p);
        if let (Some(all), Some(a)) = (attn.as_mut(), a) {
            all.extend(a);
        }
    }
    Ok(ForwardOutput {
        predictions: Tensor::new(vec![b, h.horizon], preds)?,
        attention: attn.map(|a| Tensor::new(vec![b, h.steps(), 4], a)).transpose()?,
    })
}
