//! Manual forward and backward passes of the attention-gated classifier.
//!
//! Pipeline: conv(1->8, 3x3, pad 1) -> ReLU -> channel gate -> spatial gate
//! -> conv(8->16, 3x3, stride 2, pad 1) -> ReLU -> global average pool ->
//! affine(16->K) -> softmax. The channel gate is a squeeze-excite bottleneck
//! (reduction 2) over per-channel spatial means; the spatial gate is a 3x3
//! convolution over the stacked per-pixel channel-mean and channel-max maps.

use rand::Rng;

use crate::model::params::{LayerKind, ModelParams, NetShape, CONV1_CHANNELS, CONV2_CHANNELS};
use crate::numerics::{Grid2D, RngStream};

/// A training or evaluation batch: equal-size single-channel inputs with
/// class labels.
pub struct Batch<'a> {
    pub inputs: Vec<&'a Grid2D>,
    pub labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a Grid2D>, labels: Vec<usize>) -> Self {
        assert!(!inputs.is_empty(), "batch must be nonempty");
        assert_eq!(inputs.len(), labels.len(), "inputs/labels length mismatch");
        let (h, w) = (inputs[0].height(), inputs[0].width());
        assert!(
            inputs.iter().all(|g| g.height() == h && g.width() == w),
            "batch inputs must share dimensions"
        );
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Channel-stacked feature planes.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }
}

/// Borrowed slices of the two attention gates' parameters.
pub struct GateParams<'a> {
    pub ca_w1: &'a [f64],
    pub ca_b1: &'a [f64],
    pub ca_w2: &'a [f64],
    pub ca_b2: &'a [f64],
    pub sa_w: &'a [f64],
    pub sa_b: &'a [f64],
}

impl<'a> GateParams<'a> {
    pub fn from_params(params: &'a ModelParams) -> Self {
        Self {
            ca_w1: params.weights(1),
            ca_b1: params.biases(1),
            ca_w2: params.weights(2),
            ca_b2: params.biases(2),
            sa_w: params.weights(3),
            sa_b: params.biases(3),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// convolution primitives (3x3, pad 1, arbitrary stride)
// ---------------------------------------------------------------------------

// The 3x3 convolutions run as im2col + GEMM: the patch matrix M has one
// row per output position holding the c_in * 9 input values under the
// kernel (zero where padding), so forward is a plain dot product per
// (output channel, position) and both backward products are contiguous
// AXPY passes.

// Four-lane dot product; the split accumulators let the compiler vectorize
// the reduction.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut a4 = a.chunks_exact(4);
    let mut b4 = b.chunks_exact(4);
    for (xs, ys) in (&mut a4).zip(&mut b4) {
        lanes[0] += xs[0] * ys[0];
        lanes[1] += xs[1] * ys[1];
        lanes[2] += xs[2] * ys[2];
        lanes[3] += xs[3] * ys[3];
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in a4.remainder().iter().zip(b4.remainder()) {
        acc += x * y;
    }
    acc
}

#[inline]
fn im2col(
    inp: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    m: &mut [f64],
) {
    let k_len = c_in * 9;
    debug_assert_eq!(m.len(), oh * ow * k_len);
    m.fill(0.0);
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut m[(oy * ow + ox) * k_len..(oy * ow + ox + 1) * k_len];
            let y0 = (oy * stride) as isize - 1;
            let x0 = (ox * stride) as isize - 1;
            for c in 0..c_in {
                let plane = &inp[c * h * w..(c + 1) * h * w];
                for ky in 0..3usize {
                    let y = y0 + ky as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let base = y as usize * w;
                    for kx in 0..3usize {
                        let x = x0 + kx as isize;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        row[c * 9 + ky * 3 + kx] = plane[base + x as usize];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_forward(
    inp: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    wts: &[f64],
    bias: &[f64],
    c_out: usize,
    stride: usize,
    out: &mut [f64],
) {
    let oh = h / stride;
    let ow = w / stride;
    let k_len = c_in * 9;
    debug_assert_eq!(out.len(), c_out * oh * ow);
    let mut m = vec![0.0; oh * ow * k_len];
    im2col(inp, c_in, h, w, stride, oh, ow, &mut m);
    for oc in 0..c_out {
        let w_row = &wts[oc * k_len..(oc + 1) * k_len];
        let out_plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        for (o, patch) in out_plane.iter_mut().zip(m.chunks_exact(k_len)) {
            *o = bias[oc] + dot(w_row, patch);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    inp: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    wts: &[f64],
    c_out: usize,
    stride: usize,
    d_out: &[f64],
    d_inp: Option<&mut [f64]>,
    d_wts: &mut [f64],
    d_bias: &mut [f64],
) {
    let oh = h / stride;
    let ow = w / stride;
    let k_len = c_in * 9;
    let positions = oh * ow;
    let mut m = vec![0.0; positions * k_len];
    im2col(inp, c_in, h, w, stride, oh, ow, &mut m);
    for oc in 0..c_out {
        let dout_plane = &d_out[oc * positions..(oc + 1) * positions];
        d_bias[oc] += dout_plane.iter().sum::<f64>();
        let dw_row = &mut d_wts[oc * k_len..(oc + 1) * k_len];
        for (g, patch) in dout_plane.iter().zip(m.chunks_exact(k_len)) {
            if *g == 0.0 {
                continue;
            }
            for (dw, x) in dw_row.iter_mut().zip(patch) {
                *dw += g * x;
            }
        }
    }
    if let Some(d_inp) = d_inp {
        // d_M = d_out^T W, scattered back through the im2col index map
        let mut d_patch = vec![0.0; k_len];
        for opos in 0..positions {
            d_patch.fill(0.0);
            let mut any = false;
            for oc in 0..c_out {
                let g = d_out[oc * positions + opos];
                if g == 0.0 {
                    continue;
                }
                any = true;
                let w_row = &wts[oc * k_len..(oc + 1) * k_len];
                for (dp, wv) in d_patch.iter_mut().zip(w_row) {
                    *dp += g * wv;
                }
            }
            if !any {
                continue;
            }
            let oy = opos / ow;
            let ox = opos % ow;
            let y0 = (oy * stride) as isize - 1;
            let x0 = (ox * stride) as isize - 1;
            for c in 0..c_in {
                for ky in 0..3usize {
                    let y = y0 + ky as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let x = x0 + kx as isize;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        d_inp[c * h * w + y as usize * w + x as usize] +=
                            d_patch[c * 9 + ky * 3 + kx];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// attention gates
// ---------------------------------------------------------------------------

struct GateCache {
    s: Vec<f64>,      // per-channel spatial means of the gate input
    h_pre: Vec<f64>,  // squeeze pre-activation
    h: Vec<f64>,      // squeeze post-ReLU
    g: Vec<f64>,      // channel gate values
    a2: Vec<f64>,     // features after the channel gate
    m: Vec<f64>,      // stacked [channel-mean, channel-max] maps (2 planes)
    argmax: Vec<u32>, // channel index realizing each max (first on ties)
    q: Vec<f64>,      // spatial gate values
    out: Vec<f64>,    // gated output
}

fn gates_forward(inp: &[f64], c: usize, h: usize, w: usize, gp: &GateParams) -> GateCache {
    let hw = h * w;
    let squeeze = gp.ca_b1.len();
    // channel gate
    let mut s = vec![0.0; c];
    for ch in 0..c {
        s[ch] = inp[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64;
    }
    let mut h_pre = vec![0.0; squeeze];
    for j in 0..squeeze {
        let mut acc = gp.ca_b1[j];
        for ch in 0..c {
            acc += gp.ca_w1[j * c + ch] * s[ch];
        }
        h_pre[j] = acc;
    }
    let h_act: Vec<f64> = h_pre.iter().map(|v| v.max(0.0)).collect();
    let mut g = vec![0.0; c];
    for ch in 0..c {
        let mut acc = gp.ca_b2[ch];
        for j in 0..squeeze {
            acc += gp.ca_w2[ch * squeeze + j] * h_act[j];
        }
        g[ch] = sigmoid(acc);
    }
    let mut a2 = vec![0.0; c * hw];
    for ch in 0..c {
        for i in 0..hw {
            a2[ch * hw + i] = inp[ch * hw + i] * g[ch];
        }
    }
    // spatial gate over [mean, max] channel statistics
    let mut m = vec![0.0; 2 * hw];
    let mut argmax = vec![0u32; hw];
    for i in 0..hw {
        let mut sum = 0.0;
        let mut best = f64::NEG_INFINITY;
        let mut best_c = 0u32;
        for ch in 0..c {
            let v = a2[ch * hw + i];
            sum += v;
            if v > best {
                best = v;
                best_c = ch as u32;
            }
        }
        m[i] = sum / c as f64;
        m[hw + i] = best;
        argmax[i] = best_c;
    }
    let mut t = vec![0.0; hw];
    conv3x3_forward(&m, 2, h, w, gp.sa_w, gp.sa_b, 1, 1, &mut t);
    let q: Vec<f64> = t.iter().map(|v| sigmoid(*v)).collect();
    let mut out = vec![0.0; c * hw];
    for ch in 0..c {
        for i in 0..hw {
            out[ch * hw + i] = a2[ch * hw + i] * q[i];
        }
    }
    GateCache {
        s,
        h_pre,
        h: h_act,
        g,
        a2,
        m,
        argmax,
        q,
        out,
    }
}

struct GateGrads<'b> {
    ca_w1: &'b mut [f64],
    ca_b1: &'b mut [f64],
    ca_w2: &'b mut [f64],
    ca_b2: &'b mut [f64],
    sa_w: &'b mut [f64],
    sa_b: &'b mut [f64],
}

/// Backpropagates through both gates; returns the gradient w.r.t. the gate
/// input and accumulates parameter gradients.
#[allow(clippy::too_many_arguments)]
fn gates_backward(
    inp: &[f64],
    c: usize,
    h: usize,
    w: usize,
    gp: &GateParams,
    cache: &GateCache,
    d_out: &[f64],
    grads: &mut GateGrads,
) -> Vec<f64> {
    let hw = h * w;
    let squeeze = gp.ca_b1.len();
    // spatial gate
    let mut d_q = vec![0.0; hw];
    let mut d_a2 = vec![0.0; c * hw];
    for ch in 0..c {
        for i in 0..hw {
            let go = d_out[ch * hw + i];
            d_q[i] += go * cache.a2[ch * hw + i];
            d_a2[ch * hw + i] = go * cache.q[i];
        }
    }
    let d_t: Vec<f64> = d_q
        .iter()
        .zip(&cache.q)
        .map(|(dq, q)| dq * q * (1.0 - q))
        .collect();
    let mut d_m = vec![0.0; 2 * hw];
    conv3x3_backward(
        &cache.m,
        2,
        h,
        w,
        gp.sa_w,
        1,
        1,
        &d_t,
        Some(&mut d_m),
        grads.sa_w,
        grads.sa_b,
    );
    for i in 0..hw {
        let dm = d_m[i] / c as f64;
        for ch in 0..c {
            d_a2[ch * hw + i] += dm;
        }
        d_a2[cache.argmax[i] as usize * hw + i] += d_m[hw + i];
    }
    // channel gate
    let mut d_g = vec![0.0; c];
    let mut d_inp = vec![0.0; c * hw];
    for ch in 0..c {
        let gch = cache.g[ch];
        for i in 0..hw {
            let da = d_a2[ch * hw + i];
            d_g[ch] += da * inp[ch * hw + i];
            d_inp[ch * hw + i] = da * gch;
        }
    }
    let mut d_h = vec![0.0; squeeze];
    for ch in 0..c {
        let dz = d_g[ch] * cache.g[ch] * (1.0 - cache.g[ch]);
        grads.ca_b2[ch] += dz;
        for j in 0..squeeze {
            grads.ca_w2[ch * squeeze + j] += dz * cache.h[j];
            d_h[j] += dz * gp.ca_w2[ch * squeeze + j];
        }
    }
    let mut d_s = vec![0.0; c];
    for j in 0..squeeze {
        if cache.h_pre[j] <= 0.0 {
            continue;
        }
        let dh = d_h[j];
        grads.ca_b1[j] += dh;
        for ch in 0..c {
            grads.ca_w1[j * c + ch] += dh * cache.s[ch];
            d_s[ch] += dh * gp.ca_w1[j * c + ch];
        }
    }
    for ch in 0..c {
        let ds = d_s[ch] / hw as f64;
        for i in 0..hw {
            d_inp[ch * hw + i] += ds;
        }
    }
    d_inp
}

/// Applies the channel and spatial attention gates to a feature stack.
/// Output shape equals input shape; with all gate parameters zero both gates
/// are 0.5 everywhere, so the output is `0.25 * input`.
pub fn attention_gates(features: &FeatureMap, gates: &GateParams) -> FeatureMap {
    assert!(features.channels > 0, "feature stack must be nonempty");
    assert_eq!(
        gates.ca_w1.len(),
        gates.ca_b1.len() * features.channels,
        "channel gate squeeze shape mismatch"
    );
    let cache = gates_forward(
        &features.data,
        features.channels,
        features.height,
        features.width,
        gates,
    );
    FeatureMap {
        channels: features.channels,
        height: features.height,
        width: features.width,
        data: cache.out,
    }
}

// ---------------------------------------------------------------------------
// full network
// ---------------------------------------------------------------------------

struct Geom {
    classes: usize,
    h: usize,
    w: usize,
    h2: usize,
    w2: usize,
}

fn geometry(params: &ModelParams, input: &Grid2D) -> Geom {
    let fc = params.layout.last().expect("layout is nonempty");
    assert_eq!(fc.kind, LayerKind::Dense, "unexpected layout tail");
    let (h, w) = (input.height(), input.width());
    assert!(
        h % 2 == 0 && w % 2 == 0,
        "chip dimensions must be even, got {h}x{w}"
    );
    Geom {
        classes: fc.out_ch,
        h,
        w,
        h2: h / 2,
        w2: w / 2,
    }
}

struct ForwardCache {
    pre1: Vec<f64>,
    a1: Vec<f64>,
    gate: GateCache,
    pre2: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
}

fn forward_one(params: &ModelParams, geom: &Geom, input: &Grid2D) -> ForwardCache {
    let (c1, c2) = (CONV1_CHANNELS, CONV2_CHANNELS);
    let hw = geom.h * geom.w;
    let mut pre1 = vec![0.0; c1 * hw];
    conv3x3_forward(
        input.values(),
        1,
        geom.h,
        geom.w,
        params.weights(0),
        params.biases(0),
        c1,
        1,
        &mut pre1,
    );
    let a1: Vec<f64> = pre1.iter().map(|v| v.max(0.0)).collect();
    let gp = GateParams::from_params(params);
    let gate = gates_forward(&a1, c1, geom.h, geom.w, &gp);
    let hw2 = geom.h2 * geom.w2;
    let mut pre2 = vec![0.0; c2 * hw2];
    conv3x3_forward(
        &gate.out,
        c1,
        geom.h,
        geom.w,
        params.weights(4),
        params.biases(4),
        c2,
        2,
        &mut pre2,
    );
    let mut v = vec![0.0; c2];
    for ch in 0..c2 {
        v[ch] = pre2[ch * hw2..(ch + 1) * hw2]
            .iter()
            .map(|p| p.max(0.0))
            .sum::<f64>()
            / hw2 as f64;
    }
    let fc_w = params.weights(5);
    let fc_b = params.biases(5);
    let mut logits = vec![0.0; geom.classes];
    for k in 0..geom.classes {
        let mut acc = fc_b[k];
        for ch in 0..c2 {
            acc += fc_w[k * c2 + ch] * v[ch];
        }
        logits[k] = acc;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    ForwardCache {
        pre1,
        a1,
        gate,
        pre2,
        v,
        probs,
    }
}

fn backward_one(
    params: &ModelParams,
    geom: &Geom,
    input: &Grid2D,
    cache: &ForwardCache,
    label: usize,
    scale: f64,
    grad: &mut [f64],
) {
    let (c1, c2) = (CONV1_CHANNELS, CONV2_CHANNELS);
    let hw2 = geom.h2 * geom.w2;
    let layout = &params.layout;
    let fc = &layout[5];
    // softmax + cross-entropy
    let mut d_logits = cache.probs.clone();
    d_logits[label] -= 1.0;
    for d in &mut d_logits {
        *d *= scale;
    }
    let fc_w = params.weights(5);
    let (w_off, b_off) = (fc.offset, fc.offset + fc.weight_len());
    let mut d_v = vec![0.0; c2];
    for k in 0..geom.classes {
        let dk = d_logits[k];
        grad[b_off + k] += dk;
        for ch in 0..c2 {
            grad[w_off + k * c2 + ch] += dk * cache.v[ch];
            d_v[ch] += dk * fc_w[k * c2 + ch];
        }
    }
    // pool + ReLU before conv2
    let mut d_pre2 = vec![0.0; c2 * hw2];
    for ch in 0..c2 {
        let dv = d_v[ch] / hw2 as f64;
        for i in 0..hw2 {
            if cache.pre2[ch * hw2 + i] > 0.0 {
                d_pre2[ch * hw2 + i] = dv;
            }
        }
    }
    let conv2 = &layout[4];
    let mut d_a3 = vec![0.0; c1 * geom.h * geom.w];
    {
        let (g_head, g_tail) = grad.split_at_mut(conv2.offset + conv2.weight_len());
        let d_w2 = &mut g_head[conv2.offset..];
        let d_b2 = &mut g_tail[..c2];
        conv3x3_backward(
            &cache.gate.out,
            c1,
            geom.h,
            geom.w,
            params.weights(4),
            c2,
            2,
            &d_pre2,
            Some(&mut d_a3),
            d_w2,
            d_b2,
        );
    }
    // attention gates
    let gp = GateParams::from_params(params);
    let d_a1 = {
        // split the gradient vector into the gate layers' disjoint regions
        let (ca1, ca2, sa) = (&layout[1], &layout[2], &layout[3]);
        let (before, rest) = grad.split_at_mut(ca2.offset);
        let (mid, after) = rest.split_at_mut(sa.offset - ca2.offset);
        let ca1_slice = &mut before[ca1.offset..ca1.offset + ca1.len()];
        let (ca1_w, ca1_b) = ca1_slice.split_at_mut(ca1.weight_len());
        let (ca2_w, ca2_b) = mid[..ca2.len()].split_at_mut(ca2.weight_len());
        let (sa_w, sa_b) = after[..sa.len()].split_at_mut(sa.weight_len());
        let mut gg = GateGrads {
            ca_w1: ca1_w,
            ca_b1: ca1_b,
            ca_w2: ca2_w,
            ca_b2: ca2_b,
            sa_w,
            sa_b,
        };
        gates_backward(
            &cache.a1,
            c1,
            geom.h,
            geom.w,
            &gp,
            &cache.gate,
            &d_a3,
            &mut gg,
        )
    };
    // ReLU + conv1 (input gradient not needed)
    let mut d_pre1 = d_a1;
    for (dp, pre) in d_pre1.iter_mut().zip(&cache.pre1) {
        if *pre <= 0.0 {
            *dp = 0.0;
        }
    }
    let conv1 = &layout[0];
    let (g_head, g_tail) = grad.split_at_mut(conv1.offset + conv1.weight_len());
    let d_w1 = &mut g_head[conv1.offset..];
    let d_b1 = &mut g_tail[..c1];
    conv3x3_backward(
        input.values(),
        1,
        geom.h,
        geom.w,
        params.weights(0),
        c1,
        1,
        &d_pre1,
        None,
        d_w1,
        d_b1,
    );
}

/// Class-probability rows for every sample in the batch; each row sums to 1.
pub fn forward(params: &ModelParams, batch: &Batch) -> Vec<Vec<f64>> {
    let geom = geometry(params, batch.inputs[0]);
    batch
        .inputs
        .iter()
        .map(|input| forward_one(params, &geom, input).probs)
        .collect()
}

/// Mean cross-entropy loss over the batch and its gradient w.r.t. every
/// parameter.
pub fn backward(params: &ModelParams, batch: &Batch) -> (f64, Vec<f64>) {
    let geom = geometry(params, batch.inputs[0]);
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (input, &label) in batch.inputs.iter().zip(&batch.labels) {
        assert!(label < geom.classes, "label {label} out of range");
        let cache = forward_one(params, &geom, input);
        loss -= scale * cache.probs[label].max(1e-300).ln();
        backward_one(params, &geom, input, &cache, label, scale, &mut grad);
    }
    (loss, grad)
}

/// Glorot-uniform weight initialization (zero biases) from the given stream.
pub fn init_params(shape: &NetShape, rng: &mut RngStream) -> ModelParams {
    let mut params = ModelParams::zeros(shape);
    for desc in params.layout.clone() {
        let (fan_in, fan_out) = match desc.kind {
            LayerKind::Conv => (
                desc.in_ch * desc.kernel * desc.kernel,
                desc.out_ch * desc.kernel * desc.kernel,
            ),
            LayerKind::Dense => (desc.in_ch, desc.out_ch),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for i in 0..desc.weight_len() {
            params.flat[desc.offset + i] = rng.gen_range(-bound..bound);
        }
    }
    params
}
