//! Forward and backward passes of the decoder.
//!
//! Pre-norm blocks (LayerNorm, causal multi-head attention, GELU MLP) over
//! learned absolute positions. A final LayerNorm feeds head 0 (text plus
//! layer-0 audio) and one head per remaining codebook, all reading the same
//! hidden state.

use super::params::{LayerIdx, Parameters};
use super::ModelError;
use crate::loss::PositionPrediction;

const LN_EPS: f64 = 1e-5;

/// One input position.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Text(u32),
    /// A delay-grid column; pad entries use the shared pad embedding.
    Audio(Vec<u32>),
    /// Raw speaker vector, projected by the speaker adapter.
    Speaker(Vec<f64>),
    /// Continuous encoder feature, mapped by the feature adapter.
    Feature(Vec<f64>),
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn matvec_bias(w: &[f64], b: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    matvec(w, rows, cols, x, out);
    for (o, bi) in out.iter_mut().zip(b) {
        *o += bi;
    }
}

/// dx += W^T dy
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for r in 0..rows {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// dW += dy x^T
fn outer_acc(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, a) in row.iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let th = inner.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Default)]
struct NormTrace {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64], out: &mut [f64]) -> NormTrace {
    let len = x.len() / d;
    let mut tr = NormTrace { xhat: vec![0.0; x.len()], rstd: vec![0.0; len] };
    for t in 0..len {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        tr.rstd[t] = rstd;
        for i in 0..d {
            let xh = (row[i] - mean) * rstd;
            tr.xhat[t * d + i] = xh;
            out[t * d + i] = g[i] * xh + b[i];
        }
    }
    tr
}

/// Returns dx; accumulates dg, db.
fn layer_norm_backward(tr: &NormTrace, d: usize, g: &[f64], dy: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let len = tr.rstd.len();
    let mut dx = vec![0.0; len * d];
    let mut dxhat = vec![0.0; d];
    for t in 0..len {
        let xh = &tr.xhat[t * d..(t + 1) * d];
        let dyr = &dy[t * d..(t + 1) * d];
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for i in 0..d {
            dx[t * d + i] = tr.rstd[t] * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

#[derive(Debug, Clone, Default)]
struct LayerTrace {
    ln1: NormTrace,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]`, zero above the diagonal.
    att: Vec<f64>,
    ctx: Vec<f64>,
    ln2: NormTrace,
    h2: Vec<f64>,
    u: Vec<f64>,
    act: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AdapterTrace {
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Everything the backward pass needs, plus the output distributions.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub len: usize,
    inputs: Vec<ModelInput>,
    adapters: Vec<Option<AdapterTrace>>,
    layers: Vec<LayerTrace>,
    lnf: NormTrace,
    hf: Vec<f64>,
    /// `len x head0_size` probabilities.
    pub probs0: Vec<f64>,
    /// Per auxiliary head `k` (codebook `k + 1`): `len x |U^{k+1}|`.
    pub probs_heads: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn head0(&self, t: usize) -> &[f64] {
        let n = self.probs0.len() / self.len;
        &self.probs0[t * n..(t + 1) * n]
    }

    /// Distribution of codebook `j >= 1` at position `t`.
    pub fn head(&self, j: usize, t: usize) -> &[f64] {
        let probs = &self.probs_heads[j - 1];
        let n = probs.len() / self.len;
        &probs[t * n..(t + 1) * n]
    }

    pub fn prediction(&self, t: usize) -> PositionPrediction {
        PositionPrediction {
            head0: self.head0(t).to_vec(),
            heads: (1..=self.probs_heads.len()).map(|j| self.head(j, t).to_vec()).collect(),
        }
    }

    pub fn predictions(&self) -> Vec<PositionPrediction> {
        (0..self.len).map(|t| self.prediction(t)).collect()
    }
}

fn check_input(params: &Parameters, pos: usize, item: &ModelInput) -> Result<(), ModelError> {
    let cfg = &params.config;
    let bad = |msg: String| ModelError::Input { pos, msg };
    match item {
        ModelInput::Text(id) => cfg.vocab.check_text(*id).map_err(|e| bad(e.to_string())),
        ModelInput::Audio(col) => {
            if col.len() != cfg.j() {
                return Err(bad(format!("audio column has {} entries, expected {}", col.len(), cfg.j())));
            }
            for (j, &id) in col.iter().enumerate() {
                cfg.vocab.check_codebook(j, id).map_err(|e| bad(e.to_string()))?;
            }
            Ok(())
        }
        ModelInput::Speaker(v) if v.len() != cfg.speaker_dim => Err(ModelError::SpeakerWidth {
            got: v.len(),
            expected: cfg.speaker_dim,
        }),
        ModelInput::Feature(f) if f.len() != cfg.adapter_in_dim => Err(bad(format!(
            "feature has width {}, expected {}",
            f.len(),
            cfg.adapter_in_dim
        ))),
        _ => Ok(()),
    }
}

fn embed_into(params: &Parameters, item: &ModelInput, out: &mut [f64]) -> Option<AdapterTrace> {
    let cfg = &params.config;
    let o = &params.layout.offsets;
    let w = &params.data;
    let d = cfg.d_model;
    match item {
        ModelInput::Text(id) => {
            let start = o.text_emb + *id as usize * d;
            out.copy_from_slice(&w[start..start + d]);
            None
        }
        ModelInput::Audio(col) => {
            out.iter_mut().for_each(|x| *x = 0.0);
            for (j, &id) in col.iter().enumerate() {
                let start = if cfg.vocab.is_pad(j, id) {
                    o.pad_emb
                } else {
                    o.codebook_emb[j] + id as usize * d
                };
                add_into(out, &w[start..start + d]);
            }
            let scale = 1.0 / col.len() as f64;
            out.iter_mut().for_each(|x| *x *= scale);
            None
        }
        ModelInput::Speaker(v) => {
            matvec_bias(&w[o.spk_w..], &w[o.spk_b..o.spk_b + d], d, cfg.speaker_dim, v, out);
            None
        }
        ModelInput::Feature(f) => {
            let mut pre = vec![0.0; d];
            matvec_bias(&w[o.ad_w1..], &w[o.ad_b1..o.ad_b1 + d], d, cfg.adapter_in_dim, f, &mut pre);
            let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
            matvec_bias(&w[o.ad_w2..], &w[o.ad_b2..o.ad_b2 + d], d, d, &act, out);
            Some(AdapterTrace { pre, act })
        }
    }
}

/// Input embedding of one item, without the positional term.
pub fn embed_hybrid(params: &Parameters, item: &ModelInput) -> Result<Vec<f64>, ModelError> {
    check_input(params, 0, item)?;
    let mut out = vec![0.0; params.config.d_model];
    embed_into(params, item, &mut out);
    Ok(out)
}

fn attention(lt: &mut LayerTrace, len: usize, d: usize, heads: usize) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    lt.att = vec![0.0; heads * len * len];
    lt.ctx = vec![0.0; len * d];
    let mut scores = vec![0.0; len];
    for h in 0..heads {
        let hs = h * dh;
        for t in 0..len {
            let q = &lt.q[t * d + hs..t * d + hs + dh];
            for s in 0..=t {
                let k = &lt.k[s * d + hs..s * d + hs + dh];
                scores[s] = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(&mut scores[..=t]);
            let arow = &mut lt.att[(h * len + t) * len..(h * len + t + 1) * len];
            arow[..=t].copy_from_slice(&scores[..=t]);
            let ctx = &mut lt.ctx[t * d + hs..t * d + hs + dh];
            for s in 0..=t {
                let a = arow[s];
                let v = &lt.v[s * d + hs..s * d + hs + dh];
                for (c, x) in ctx.iter_mut().zip(v) {
                    *c += a * x;
                }
            }
        }
    }
}

pub fn forward(params: &Parameters, inputs: &[ModelInput]) -> Result<ForwardPass, ModelError> {
    let cfg = &params.config;
    let len = inputs.len();
    if len > cfg.max_seq {
        return Err(ModelError::TooLong { len, max: cfg.max_seq });
    }
    if len == 0 {
        return Err(ModelError::Input { pos: 0, msg: "empty input".into() });
    }
    for (pos, item) in inputs.iter().enumerate() {
        check_input(params, pos, item)?;
    }
    let d = cfg.d_model;
    let hdim = cfg.mlp_dim();
    let o = &params.layout.offsets;
    let w = &params.data;

    let mut x = vec![0.0; len * d];
    let mut adapters = Vec::with_capacity(len);
    for (t, item) in inputs.iter().enumerate() {
        let row = &mut x[t * d..(t + 1) * d];
        adapters.push(embed_into(params, item, row));
        add_into(row, &w[o.pos + t * d..o.pos + (t + 1) * d]);
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for li in &o.layers {
        let mut lt = LayerTrace { h1: vec![0.0; len * d], ..Default::default() };
        lt.ln1 = layer_norm(&x, d, &w[li.ln1_g..li.ln1_g + d], &w[li.ln1_b..li.ln1_b + d], &mut lt.h1);
        lt.q = vec![0.0; len * d];
        lt.k = vec![0.0; len * d];
        lt.v = vec![0.0; len * d];
        for t in 0..len {
            let h = &lt.h1[t * d..(t + 1) * d];
            matvec(&w[li.wq..], d, d, h, &mut lt.q[t * d..(t + 1) * d]);
            matvec(&w[li.wk..], d, d, h, &mut lt.k[t * d..(t + 1) * d]);
            matvec(&w[li.wv..], d, d, h, &mut lt.v[t * d..(t + 1) * d]);
        }
        attention(&mut lt, len, d, cfg.attn_heads);
        let mut proj = vec![0.0; d];
        for t in 0..len {
            matvec(&w[li.wo..], d, d, &lt.ctx[t * d..(t + 1) * d], &mut proj);
            add_into(&mut x[t * d..(t + 1) * d], &proj);
        }
        lt.h2 = vec![0.0; len * d];
        lt.ln2 = layer_norm(&x, d, &w[li.ln2_g..li.ln2_g + d], &w[li.ln2_b..li.ln2_b + d], &mut lt.h2);
        lt.u = vec![0.0; len * hdim];
        lt.act = vec![0.0; len * hdim];
        for t in 0..len {
            let u = &mut lt.u[t * hdim..(t + 1) * hdim];
            matvec_bias(&w[li.w1..], &w[li.b1..li.b1 + hdim], hdim, d, &lt.h2[t * d..(t + 1) * d], u);
            for (a, &ui) in lt.act[t * hdim..(t + 1) * hdim].iter_mut().zip(u.iter()) {
                *a = gelu(ui);
            }
            matvec_bias(&w[li.w2..], &w[li.b2..li.b2 + d], d, hdim, &lt.act[t * hdim..(t + 1) * hdim], &mut proj);
            add_into(&mut x[t * d..(t + 1) * d], &proj);
        }
        layers.push(lt);
    }

    let mut hf = vec![0.0; len * d];
    let lnf = layer_norm(&x, d, &w[o.lnf_g..o.lnf_g + d], &w[o.lnf_b..o.lnf_b + d], &mut hf);

    let v = &cfg.vocab;
    let n0 = v.head0_size();
    let mut probs0 = vec![0.0; len * n0];
    for t in 0..len {
        let out = &mut probs0[t * n0..(t + 1) * n0];
        matvec_bias(&w[o.head0_w..], &w[o.head0_b..o.head0_b + n0], n0, d, &hf[t * d..(t + 1) * d], out);
        softmax_in_place(out);
    }
    let mut probs_heads = Vec::with_capacity(v.j().saturating_sub(1));
    for (k, (&hw, &hb)) in o.heads_w.iter().zip(&o.heads_b).enumerate() {
        let n = v.codebook_size(k + 1);
        let mut probs = vec![0.0; len * n];
        for t in 0..len {
            let out = &mut probs[t * n..(t + 1) * n];
            matvec_bias(&w[hw..], &w[hb..hb + n], n, d, &hf[t * d..(t + 1) * d], out);
            softmax_in_place(out);
        }
        probs_heads.push(probs);
    }

    Ok(ForwardPass {
        len,
        inputs: inputs.to_vec(),
        adapters,
        layers,
        lnf,
        hf,
        probs0,
        probs_heads,
    })
}

/// Gradients of the logits, laid out like `ForwardPass::probs0` and
/// `ForwardPass::probs_heads`.
#[derive(Debug, Clone)]
pub struct LogitGrads {
    pub head0: Vec<f64>,
    pub heads: Vec<Vec<f64>>,
}

impl LogitGrads {
    pub fn zeros_like(fp: &ForwardPass) -> Self {
        LogitGrads {
            head0: vec![0.0; fp.probs0.len()],
            heads: fp.probs_heads.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// Accumulates parameter gradients into `grad`.
pub fn backward(params: &Parameters, fp: &ForwardPass, dlogits: &LogitGrads, grad: &mut [f64]) {
    let cfg = &params.config;
    let o = &params.layout.offsets;
    let w = &params.data;
    let d = cfg.d_model;
    let hdim = cfg.mlp_dim();
    let len = fp.len;
    let v = &cfg.vocab;

    // heads
    let mut dhf = vec![0.0; len * d];
    let n0 = v.head0_size();
    for t in 0..len {
        let dy = &dlogits.head0[t * n0..(t + 1) * n0];
        let hf = &fp.hf[t * d..(t + 1) * d];
        outer_acc(&mut grad[o.head0_w..o.head0_w + n0 * d], d, dy, hf);
        add_into(&mut grad[o.head0_b..o.head0_b + n0], dy);
        matvec_t_acc(&w[o.head0_w..], n0, d, dy, &mut dhf[t * d..(t + 1) * d]);
    }
    for (k, (&hw, &hb)) in o.heads_w.iter().zip(&o.heads_b).enumerate() {
        let n = v.codebook_size(k + 1);
        for t in 0..len {
            let dy = &dlogits.heads[k][t * n..(t + 1) * n];
            let hf = &fp.hf[t * d..(t + 1) * d];
            outer_acc(&mut grad[hw..hw + n * d], d, dy, hf);
            add_into(&mut grad[hb..hb + n], dy);
            matvec_t_acc(&w[hw..], n, d, dy, &mut dhf[t * d..(t + 1) * d]);
        }
    }

    let (dg, db) = split_pair(grad, o.lnf_g, o.lnf_b, d);
    let mut dx = layer_norm_backward(&fp.lnf, d, &w[o.lnf_g..o.lnf_g + d], &dhf, dg, db);

    for (li, lt) in o.layers.iter().zip(&fp.layers).rev() {
        layer_backward(w, grad, li, lt, &mut dx, len, d, hdim, cfg.attn_heads);
    }

    // embeddings
    for t in 0..len {
        let dxt = &dx[t * d..(t + 1) * d];
        add_into(&mut grad[o.pos + t * d..o.pos + (t + 1) * d], dxt);
        match &fp.inputs[t] {
            ModelInput::Text(id) => {
                let s = o.text_emb + *id as usize * d;
                add_into(&mut grad[s..s + d], dxt);
            }
            ModelInput::Audio(col) => {
                let scale = 1.0 / col.len() as f64;
                for (j, &id) in col.iter().enumerate() {
                    let s = if v.is_pad(j, id) { o.pad_emb } else { o.codebook_emb[j] + id as usize * d };
                    for (g, x) in grad[s..s + d].iter_mut().zip(dxt) {
                        *g += scale * x;
                    }
                }
            }
            ModelInput::Speaker(vec) => {
                outer_acc(&mut grad[o.spk_w..o.spk_w + d * cfg.speaker_dim], cfg.speaker_dim, dxt, vec);
                add_into(&mut grad[o.spk_b..o.spk_b + d], dxt);
            }
            ModelInput::Feature(f) => {
                let tr = fp.adapters[t].as_ref().expect("feature trace");
                outer_acc(&mut grad[o.ad_w2..o.ad_w2 + d * d], d, dxt, &tr.act);
                add_into(&mut grad[o.ad_b2..o.ad_b2 + d], dxt);
                let mut dact = vec![0.0; d];
                matvec_t_acc(&w[o.ad_w2..], d, d, dxt, &mut dact);
                let dpre: Vec<f64> = dact.iter().zip(&tr.pre).map(|(g, &p)| g * gelu_grad(p)).collect();
                outer_acc(&mut grad[o.ad_w1..o.ad_w1 + d * cfg.adapter_in_dim], cfg.adapter_in_dim, &dpre, f);
                add_into(&mut grad[o.ad_b1..o.ad_b1 + d], &dpre);
            }
        }
    }
}

/// Two disjoint `d`-wide gradient slices.
fn split_pair(grad: &mut [f64], a: usize, b: usize, d: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a + d <= b, "gain precedes bias in the layout");
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + d], &mut hi[..d])
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    w: &[f64],
    grad: &mut [f64],
    li: &LayerIdx,
    lt: &LayerTrace,
    dx: &mut [f64],
    len: usize,
    d: usize,
    hdim: usize,
    heads: usize,
) {
    // MLP branch: x += W2 gelu(W1 h2 + b1) + b2
    let mut dh2 = vec![0.0; len * d];
    let mut du = vec![0.0; hdim];
    let mut dact = vec![0.0; hdim];
    for t in 0..len {
        let dy = &dx[t * d..(t + 1) * d];
        let act = &lt.act[t * hdim..(t + 1) * hdim];
        outer_acc(&mut grad[li.w2..li.w2 + d * hdim], hdim, dy, act);
        add_into(&mut grad[li.b2..li.b2 + d], dy);
        dact.iter_mut().for_each(|x| *x = 0.0);
        matvec_t_acc(&w[li.w2..], d, hdim, dy, &mut dact);
        for i in 0..hdim {
            du[i] = dact[i] * gelu_grad(lt.u[t * hdim + i]);
        }
        outer_acc(&mut grad[li.w1..li.w1 + hdim * d], d, &du, &lt.h2[t * d..(t + 1) * d]);
        add_into(&mut grad[li.b1..li.b1 + hdim], &du);
        matvec_t_acc(&w[li.w1..], hdim, d, &du, &mut dh2[t * d..(t + 1) * d]);
    }
    let (dg, db) = split_pair(grad, li.ln2_g, li.ln2_b, d);
    let dres = layer_norm_backward(&lt.ln2, d, &w[li.ln2_g..li.ln2_g + d], &dh2, dg, db);
    add_into(dx, &dres);

    // attention branch: x += Wo ctx
    let mut dctx = vec![0.0; len * d];
    for t in 0..len {
        let dy = &dx[t * d..(t + 1) * d];
        outer_acc(&mut grad[li.wo..li.wo + d * d], d, dy, &lt.ctx[t * d..(t + 1) * d]);
        matvec_t_acc(&w[li.wo..], d, d, dy, &mut dctx[t * d..(t + 1) * d]);
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; len * d];
    let mut dk = vec![0.0; len * d];
    let mut dv = vec![0.0; len * d];
    let mut da = vec![0.0; len];
    for h in 0..heads {
        let hs = h * dh;
        for t in 0..len {
            let arow = &lt.att[(h * len + t) * len..(h * len + t + 1) * len];
            let dc = &dctx[t * d + hs..t * d + hs + dh];
            let mut dot = 0.0;
            for s in 0..=t {
                let vs = &lt.v[s * d + hs..s * d + hs + dh];
                da[s] = dc.iter().zip(vs).map(|(a, b)| a * b).sum();
                dot += arow[s] * da[s];
                for (g, c) in dv[s * d + hs..s * d + hs + dh].iter_mut().zip(dc) {
                    *g += arow[s] * c;
                }
            }
            for s in 0..=t {
                let ds = arow[s] * (da[s] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for i in 0..dh {
                    dq[t * d + hs + i] += ds * lt.k[s * d + hs + i];
                    dk[s * d + hs + i] += ds * lt.q[t * d + hs + i];
                }
            }
        }
    }
    let mut dh1 = vec![0.0; len * d];
    for t in 0..len {
        let h1 = &lt.h1[t * d..(t + 1) * d];
        let out = &mut dh1[t * d..(t + 1) * d];
        for (wi, dproj) in [(li.wq, &dq), (li.wk, &dk), (li.wv, &dv)] {
            let dy = &dproj[t * d..(t + 1) * d];
            outer_acc(&mut grad[wi..wi + d * d], d, dy, h1);
            matvec_t_acc(&w[wi..], d, d, dy, out);
        }
    }
    let (dg, db) = split_pair(grad, li.ln1_g, li.ln1_b, d);
    let dres = layer_norm_backward(&lt.ln1, d, &w[li.ln1_g..li.ln1_g + d], &dh1, dg, db);
    add_into(dx, &dres);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::token_space::VocabSpec;

    fn params(j: usize) -> Parameters {
        let mut cfg = ModelConfig::tiny(VocabSpec::uniform(16, 8, j));
        cfg.init_std = 0.3;
        Parameters::init(&cfg)
    }

    #[test]
    fn audio_embedding_is_codebook_mean() {
        let p = params(1);
        let e = embed_hybrid(&p, &ModelInput::Audio(vec![3])).unwrap();
        let cfg = &p.config;
        let row = &p.tensor("embed.codebook.0").unwrap()[3 * cfg.d_model..4 * cfg.d_model];
        assert_eq!(e, row);

        let p = params(4);
        let pad = p.config.vocab.pad(0);
        let e = embed_hybrid(&p, &ModelInput::Audio(vec![pad, pad, pad, 5])).unwrap();
        let d = p.config.d_model;
        let pad_row = p.tensor("embed.pad").unwrap();
        let tok = &p.tensor("embed.codebook.3").unwrap()[5 * d..6 * d];
        for i in 0..d {
            let expected = (3.0 * pad_row[i] + tok[i]) / 4.0;
            assert!((e[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn opposite_embeddings_cancel() {
        let mut p = params(2);
        let d = p.config.d_model;
        let a = p.layout.find("embed.codebook.0").unwrap().offset;
        let b = p.layout.find("embed.codebook.1").unwrap().offset;
        for i in 0..d {
            p.data[b + i] = -p.data[a + i];
        }
        let e = embed_hybrid(&p, &ModelInput::Audio(vec![0, 0])).unwrap();
        assert!(e.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn out_of_range_rejected() {
        let p = params(2);
        assert!(embed_hybrid(&p, &ModelInput::Text(16)).is_err());
        assert!(embed_hybrid(&p, &ModelInput::Audio(vec![0, 8])).is_err());
        assert!(embed_hybrid(&p, &ModelInput::Audio(vec![0])).is_err());
    }

    #[test]
    fn outputs_are_normalized_and_shaped() {
        let p = params(3);
        let inputs = vec![ModelInput::Text(1), ModelInput::Audio(vec![1, 2, 7]), ModelInput::Speaker(vec![0.5; 8])];
        let fp = forward(&p, &inputs).unwrap();
        let preds = fp.predictions();
        assert_eq!(preds.len(), 3);
        for pr in &preds {
            assert_eq!(pr.head0.len(), 24);
            assert_eq!(pr.heads.len(), 2);
            assert!((pr.head0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for h in &pr.heads {
                assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal() {
        let p = params(2);
        let a = vec![ModelInput::Text(1), ModelInput::Text(2), ModelInput::Audio(vec![0, 1]), ModelInput::Text(3)];
        let mut b = a.clone();
        b[2] = ModelInput::Feature(vec![1.0; 6]);
        let fa = forward(&p, &a).unwrap();
        let fb = forward(&p, &b).unwrap();
        for t in 0..2 {
            assert_eq!(fa.prediction(t), fb.prediction(t));
        }
        assert_ne!(fa.prediction(2), fb.prediction(2));
    }

    #[test]
    fn overlong_rejected() {
        let p = params(1);
        let inputs = vec![ModelInput::Text(0); p.config.max_seq + 1];
        assert!(matches!(forward(&p, &inputs), Err(ModelError::TooLong { .. })));
    }
}
