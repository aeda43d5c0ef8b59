use anim3d_numerics::{Graph, NodeId, Tensor};

use super::weights::{Bound, GeneratorWeights};
use super::GeneratorConfig;
use crate::audio::{AudioWindow, LOG_FLOOR, N_MELS, WINDOW_ROWS};
use crate::error::{CoreError, Result};

/// One-hot speaking-style selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StyleCode {
    pub style_id: usize,
    pub n_styles: usize,
}

impl StyleCode {
    pub fn new(style_id: usize, n_styles: usize) -> Result<Self> {
        if style_id >= n_styles {
            return Err(CoreError::arg(format!("style id {style_id} out of range for {n_styles} styles")));
        }
        Ok(StyleCode { style_id, n_styles })
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_styles];
        v[self.style_id] = 1.0;
        v
    }
}

/// Fixed sinusoidal table `[t_len, d]`.
pub fn positional_table(t_len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(t_len * d);
    for t in 0..t_len {
        for j in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let a = t as f64 * freq;
            data.push(if j % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(vec![t_len, d], data).expect("table shape")
}

/// Downsampling stride (time, frequency): four stages take 16x80 to 1x1.
pub const DOWN_STRIDE: (usize, usize) = (2, 3);

/// Maps log-mel values from `[LOG_FLOOR, 0]` onto `[-1, 1]`.
pub fn normalize_mel(x: &Tensor) -> Tensor {
    let half = -LOG_FLOOR.ln() / 2.0;
    x.map(|v| v / half + 1.0)
}

/// Audio encoder on normalized `[N, 1, 16, 80]` windows, producing `[N, audio_dim]`.
pub fn encoder_graph(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, x: NodeId) -> Result<NodeId> {
    let conv = |g: &mut Graph, x: NodeId, name: &str, stride: (usize, usize)| -> Result<NodeId> {
        let (w, b) = (p.get(&format!("{name}.w")), p.get(&format!("{name}.b")));
        Ok(g.conv2d(x, w, Some(b), stride, (1, 1))?)
    };
    let h = conv(g, x, "enc.stem", (1, 1))?;
    let mut h = g.relu(h)?;
    for i in 1..cfg.encoder_channels.len() {
        let down = conv(g, h, &format!("enc.down{i}"), DOWN_STRIDE)?;
        let down = g.relu(down)?;
        let inner = conv(g, down, &format!("enc.res{i}"), (1, 1))?;
        let sum = g.add(inner, down)?;
        h = g.relu(sum)?;
    }
    let s = g.shape(h).to_vec();
    let (n, c, area) = (s[0], s[1], s[2] * s[3]);
    let flat = g.reshape(h, &[n * c, area])?;
    let pool = g.constant(Tensor::full(vec![area, 1], 1.0 / area as f64));
    let pooled = g.matmul(flat, pool)?;
    Ok(g.reshape(pooled, &[n, c])?)
}

fn ln(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, x: NodeId, name: &str) -> Result<NodeId> {
    let (gamma, beta) = (p.get(&format!("{name}.g")), p.get(&format!("{name}.b")));
    Ok(g.layer_norm(x, gamma, beta, cfg.layer_norm_eps)?)
}

fn lin(g: &mut Graph, p: &Bound, x: NodeId, name: &str) -> Result<NodeId> {
    let (w, b) = (p.get(&format!("{name}.w")), p.get(&format!("{name}.b")));
    Ok(g.linear(x, w, Some(b))?)
}

/// Nodes produced by one temporal self-attention layer.
pub struct TsaNodes {
    pub output: NodeId,
    /// Attention output after the output projection, before the residual add.
    pub attended: NodeId,
    /// Per-head attention weights `[B, T, T]`.
    pub weights: Vec<NodeId>,
}

/// Pre-norm transformer block on `[B, T, d]`:
/// `x + Attn(LN(x))`, then `+ FF(LN(.))`.
pub fn tsa_graph(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, x: NodeId, layer: usize) -> Result<TsaNodes> {
    let name = |s: &str| format!("tsa{layer}.{s}");
    let h = ln(g, p, cfg, x, &name("ln1"))?;
    let q = lin(g, p, h, &name("q"))?;
    let k = lin(g, p, h, &name("k"))?;
    let v = lin(g, p, h, &name("v"))?;
    let dh = cfg.d_head();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut weights = Vec::with_capacity(cfg.n_heads);
    for i in 0..cfg.n_heads {
        let qi = g.slice(q, 2, i * dh, dh)?;
        let ki = g.slice(k, 2, i * dh, dh)?;
        let vi = g.slice(v, 2, i * dh, dh)?;
        let kt = g.transpose(ki)?;
        let scores = g.bmm(qi, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let attn = g.softmax(scores, 2)?;
        weights.push(attn);
        heads.push(g.bmm(attn, vi)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 2)? };
    let attended = lin(g, p, cat, &name("o"))?;
    let x = g.add(x, attended)?;
    let h = ln(g, p, cfg, x, &name("ln2"))?;
    let h = lin(g, p, h, &name("ff1"))?;
    let h = g.relu(h)?;
    let h = lin(g, p, h, &name("ff2"))?;
    let output = g.add(x, h)?;
    Ok(TsaNodes {
        output,
        attended,
        weights,
    })
}

/// `(scale, shift)` for each batch entry, both `[B, d]`.
pub fn modulation_graph(g: &mut Graph, p: &Bound, cfg: &GeneratorConfig, style: NodeId) -> Result<(NodeId, NodeId)> {
    let h = lin(g, p, style, "mod.l1")?;
    let h = g.relu(h)?;
    let out = lin(g, p, h, "mod.l2")?;
    let scale = g.slice(out, 1, 0, cfg.d_model)?;
    let shift = g.slice(out, 1, cfg.d_model, cfg.d_model)?;
    Ok((scale, shift))
}

/// `scale * x + shift` with `[B, d]` parameters expanded over the `T` axis of `x`.
pub fn apply_modulation(g: &mut Graph, x: NodeId, scale: NodeId, shift: NodeId) -> Result<NodeId> {
    let t = g.shape(x)[1];
    let scale = g.repeat(scale, 1, t)?;
    let shift = g.repeat(shift, 1, t)?;
    let scaled = g.mul(scale, x)?;
    Ok(g.add(scaled, shift)?)
}

/// Output nodes of the full network.
pub struct ForwardNodes {
    /// `[B, T, d_psi]`
    pub psi: NodeId,
    /// `[B, T, 3]`, bounded to +-0.5 rad.
    pub jaw: NodeId,
    pub tsa: Vec<TsaNodes>,
}

/// Full forward pass on `windows` of shape `[B, T, 16, 80]`, one style id per
/// batch entry.
pub fn forward_graph(
    g: &mut Graph,
    p: &Bound,
    cfg: &GeneratorConfig,
    windows: &Tensor,
    styles: &[usize],
) -> Result<ForwardNodes> {
    let s = windows.shape();
    if s.len() != 4 || s[1] != cfg.t_len || s[2] != WINDOW_ROWS || s[3] != N_MELS {
        return Err(CoreError::arg(format!(
            "generator input must be [B, {}, {WINDOW_ROWS}, {N_MELS}], got {s:?}",
            cfg.t_len
        )));
    }
    let (b, t, d) = (s[0], s[1], cfg.d_model);
    if styles.len() != b {
        return Err(CoreError::arg(format!("{} style ids for a batch of {b}", styles.len())));
    }
    if let Some(bad) = styles.iter().find(|id| **id >= cfg.n_styles) {
        return Err(CoreError::arg(format!("style id {bad} out of range for {} styles", cfg.n_styles)));
    }
    let x = g.constant(normalize_mel(&windows.reshape(vec![b * t, 1, WINDOW_ROWS, N_MELS])?));
    let feats = encoder_graph(g, p, cfg, x)?;
    let h = lin(g, p, feats, "in")?;
    let h = g.reshape(h, &[b, t, d])?;
    // Scale by sqrt(d_model) so the audio term is not swamped by the unit-amplitude table.
    let h = g.scale(h, (d as f64).sqrt())?;
    let pos = positional_table(t, d);
    let pos = Tensor::new(vec![b, t, d], pos.data().repeat(b))?;
    let pos = g.constant(pos);
    let mut h = g.add(h, pos)?;
    let mut tsa = Vec::with_capacity(cfg.n_tsa_layers);
    for l in 0..cfg.n_tsa_layers {
        let nodes = tsa_graph(g, p, cfg, h, l)?;
        h = nodes.output;
        tsa.push(nodes);
    }
    let mut h = ln(g, p, cfg, h, "final_ln")?;
    if cfg.use_style {
        let emb = g.embedding(p.get("style.table"), styles)?;
        let (scale, shift) = modulation_graph(g, p, cfg, emb)?;
        h = apply_modulation(g, h, scale, shift)?;
    }
    let head = |g: &mut Graph, name: &str| -> Result<NodeId> {
        let z = lin(g, p, h, &format!("{name}.l1"))?;
        let z = g.relu(z)?;
        lin(g, p, z, &format!("{name}.l2"))
    };
    let psi = head(g, "head_expr")?;
    let jaw = head(g, "head_jaw")?;
    let jaw = g.tanh(jaw)?;
    let jaw = g.scale(jaw, 0.5)?;
    Ok(ForwardNodes { psi, jaw, tsa })
}

fn window_tensor(windows: &[AudioWindow]) -> Result<Tensor> {
    if let Some(w) = windows.iter().find(|w| w.values.shape() != [WINDOW_ROWS, N_MELS]) {
        return Err(CoreError::arg(format!(
            "audio window must be {WINDOW_ROWS}x{N_MELS}, got {:?}",
            w.values.shape()
        )));
    }
    let data = windows.iter().flat_map(|w| w.values.data().iter().copied()).collect();
    Ok(Tensor::new(vec![windows.len(), WINDOW_ROWS, N_MELS], data)?)
}

impl GeneratorWeights {
    /// Audio feature for one window.
    pub fn encode_audio(&self, window: &AudioWindow) -> Result<Vec<f64>> {
        let x = window_tensor(std::slice::from_ref(window))?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.constant(normalize_mel(&x.reshape(vec![1, 1, WINDOW_ROWS, N_MELS])?));
        let out = encoder_graph(&mut g, &p, &self.config, x)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Row `style_id` of the embedding table.
    pub fn embed_style(&self, style: &StyleCode) -> Result<Vec<f64>> {
        let table = self.get("style.table")?;
        if style.n_styles != table.shape()[0] || style.style_id >= style.n_styles {
            return Err(CoreError::arg(format!(
                "style {} of {} does not fit a table with {} rows",
                style.style_id,
                style.n_styles,
                table.shape()[0]
            )));
        }
        Ok(table.row(style.style_id).to_vec())
    }

    /// Runs TSA layer `layer` on `[T, d]`; returns the output and per-head
    /// attention weights `[T, T]`.
    pub fn tsa_layer(&self, x: &Tensor, layer: usize) -> Result<(Tensor, Vec<Tensor>)> {
        let (out, _, weights) = self.tsa_layer_detail(x, layer)?;
        Ok((out, weights))
    }

    /// Like [`Self::tsa_layer`], additionally returning the projected
    /// attention result before the residual connection.
    pub fn tsa_layer_detail(&self, x: &Tensor, layer: usize) -> Result<(Tensor, Tensor, Vec<Tensor>)> {
        let d = self.config.d_model;
        if x.ndim() != 2 || x.shape()[1] != d {
            return Err(CoreError::arg(format!("tsa input must be [T, {d}], got {:?}", x.shape())));
        }
        if layer >= self.config.n_tsa_layers {
            return Err(CoreError::arg(format!("no TSA layer {layer}")));
        }
        let t = x.shape()[0];
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xn = g.constant(x.reshape(vec![1, t, d])?);
        let nodes = tsa_graph(&mut g, &p, &self.config, xn, layer)?;
        let strip = |g: &Graph, id: NodeId, cols: usize| g.value(id).reshape(vec![t, cols]).expect("batch of one");
        Ok((
            strip(&g, nodes.output, d),
            strip(&g, nodes.attended, d),
            nodes.weights.iter().map(|w| strip(&g, *w, t)).collect(),
        ))
    }

    /// Scale and shift computed from a style embedding, each `d_model` long.
    pub fn modulation_params(&self, style_embedding: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let s = g.constant(Tensor::new(vec![1, style_embedding.len()], style_embedding.to_vec())?);
        let (scale, shift) = modulation_graph(&mut g, &p, &self.config, s)?;
        Ok((g.value(scale).data().to_vec(), g.value(shift).data().to_vec()))
    }

    /// Applies the modulation block to `[T, d]` features.
    pub fn modulate(&self, x: &Tensor, style_embedding: &[f64]) -> Result<Tensor> {
        let (scale, shift) = self.modulation_params(style_embedding)?;
        modulate_with(x, &scale, &shift)
    }

    /// `psi [T, d_psi]` and `jaw [T, 3]` for exactly `t_len` windows.
    pub fn generate(&self, windows: &[AudioWindow], style: &StyleCode) -> Result<(Tensor, Tensor)> {
        let t = self.config.t_len;
        if windows.len() != t {
            return Err(CoreError::arg(format!("generate needs exactly {t} windows, got {}", windows.len())));
        }
        let x = window_tensor(windows)?.reshape(vec![1, t, WINDOW_ROWS, N_MELS])?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = forward_graph(&mut g, &p, &self.config, &x, &[style.style_id])?;
        Ok((
            g.value(out.psi).reshape(vec![t, self.config.d_psi])?,
            g.value(out.jaw).reshape(vec![t, 3])?,
        ))
    }

    /// Any number of windows: split into consecutive `t_len` chunks, the last
    /// one padded with silent windows and truncated afterwards.
    pub fn generate_sequence(&self, windows: &[AudioWindow], style: &StyleCode) -> Result<(Tensor, Tensor)> {
        let t = self.config.t_len;
        let n = windows.len();
        if n == 0 {
            return Err(CoreError::arg("no audio windows to animate"));
        }
        let chunks = n.div_ceil(t);
        let mut data = window_tensor(windows)?.into_data();
        data.resize(chunks * t * WINDOW_ROWS * N_MELS, LOG_FLOOR.ln());
        let x = Tensor::new(vec![chunks, t, WINDOW_ROWS, N_MELS], data)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = forward_graph(&mut g, &p, &self.config, &x, &vec![style.style_id; chunks])?;
        let dp = self.config.d_psi;
        let psi = g.value(out.psi).data()[..n * dp].to_vec();
        let jaw = g.value(out.jaw).data()[..n * 3].to_vec();
        Ok((Tensor::new(vec![n, dp], psi)?, Tensor::new(vec![n, 3], jaw)?))
    }

    /// Like `generate_sequence`, but consecutive chunks share `overlap`
    /// frames and are blended there with linear ramps that sum to one.
    /// `overlap = 0` is exactly `generate_sequence`.
    pub fn generate_crossfaded(
        &self,
        windows: &[AudioWindow],
        style: &StyleCode,
        overlap: usize,
    ) -> Result<(Tensor, Tensor)> {
        let t = self.config.t_len;
        if overlap == 0 {
            return self.generate_sequence(windows, style);
        }
        if overlap >= t {
            return Err(CoreError::arg(format!("overlap {overlap} must be below the segment length {t}")));
        }
        let n = windows.len();
        if n == 0 {
            return Err(CoreError::arg("no audio windows to animate"));
        }
        let stride = t - overlap;
        let chunks = 1 + n.saturating_sub(t).div_ceil(stride);
        let mut padded = window_tensor(windows)?.into_data();
        let frame = WINDOW_ROWS * N_MELS;
        padded.resize(((chunks - 1) * stride + t) * frame, LOG_FLOOR.ln());
        let data: Vec<f64> = (0..chunks)
            .flat_map(|c| padded[c * stride * frame..(c * stride + t) * frame].iter().copied())
            .collect();
        let x = Tensor::new(vec![chunks, t, WINDOW_ROWS, N_MELS], data)?;
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let out = forward_graph(&mut g, &p, &self.config, &x, &vec![style.style_id; chunks])?;
        let ramp = (overlap + 1) as f64;
        let blend = |y: &[f64], d: usize| {
            let mut acc = vec![0.0; n * d];
            let mut weight = vec![0.0; n];
            for c in 0..chunks {
                for j in 0..t {
                    let f = c * stride + j;
                    if f >= n {
                        break;
                    }
                    let mut w: f64 = 1.0;
                    if c > 0 {
                        w = w.min((j + 1) as f64 / ramp);
                    }
                    if c + 1 < chunks {
                        w = w.min((t - j) as f64 / ramp);
                    }
                    weight[f] += w;
                    for k in 0..d {
                        acc[f * d + k] += w * y[(c * t + j) * d + k];
                    }
                }
            }
            for (f, w) in weight.iter().enumerate() {
                acc[f * d..(f + 1) * d].iter_mut().for_each(|v| *v /= w);
            }
            acc
        };
        let dp = self.config.d_psi;
        let psi = blend(g.value(out.psi).data(), dp);
        let jaw = blend(g.value(out.jaw).data(), 3);
        Ok((Tensor::new(vec![n, dp], psi)?, Tensor::new(vec![n, 3], jaw)?))
    }
}

/// Elementwise `scale * x + shift` over the rows of `[T, d]`.
pub fn modulate_with(x: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor> {
    let d = scale.len();
    if x.ndim() != 2 || x.shape()[1] != d || shift.len() != d {
        return Err(CoreError::arg(format!(
            "modulation of {:?} with {} scales and {} shifts",
            x.shape(),
            d,
            shift.len()
        )));
    }
    let data = x
        .data()
        .chunks(d)
        .flat_map(|row| row.iter().zip(scale).zip(shift).map(|((v, a), b)| a * v + b))
        .collect();
    Ok(Tensor::new(x.shape().to_vec(), data)?)
}
