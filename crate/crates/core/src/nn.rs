//! Small real-valued 3D CNN engine: valid convolution, ReLU, the mixed
//! L1/L2 objective with a weight-norm penalty, hand-written gradients, Adam.
//!
//! Activations are `[channel, a, b, x]` with the fully sampled readout last.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};

/// Dense real tensor `[channel, a, b, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RTensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl RTensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        RTensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::LengthMismatch { expected: n, found: data.len() });
        }
        Ok(RTensor { shape, data })
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    #[inline]
    pub fn idx(&self, c: usize, a: usize, b: usize, x: usize) -> usize {
        ((c * self.shape[1] + a) * self.shape[2] + b) * self.shape[3] + x
    }

    /// Copies the spatial box starting at `start` with extents `len`.
    pub fn crop(&self, start: [usize; 3], len: [usize; 3]) -> RTensor {
        let mut out = RTensor::zeros([self.shape[0], len[0], len[1], len[2]]);
        for c in 0..self.shape[0] {
            for a in 0..len[0] {
                for b in 0..len[1] {
                    let src = self.idx(c, start[0] + a, start[1] + b, start[2]);
                    let dst = out.idx(c, a, b, 0);
                    out.data[dst..dst + len[2]].copy_from_slice(&self.data[src..src + len[2]]);
                }
            }
        }
        out
    }

    /// Zero-extends by `lo` before and `hi` after along each spatial axis.
    pub fn pad(&self, lo: [usize; 3], hi: [usize; 3]) -> RTensor {
        let s = self.spatial();
        let mut out = RTensor::zeros([self.shape[0], s[0] + lo[0] + hi[0], s[1] + lo[1] + hi[1], s[2] + lo[2] + hi[2]]);
        for c in 0..self.shape[0] {
            for a in 0..s[0] {
                for b in 0..s[1] {
                    let src = self.idx(c, a, b, 0);
                    let dst = out.idx(c, a + lo[0], b + lo[1], lo[2]);
                    out.data[dst..dst + s[2]].copy_from_slice(&self.data[src..src + s[2]]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: [usize; 3],
    /// `[out, in, k0, k1, k2]`, row-major.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, ksize: [usize; 3], relu: bool) -> Self {
        let k: usize = ksize.iter().product();
        ConvLayer { in_ch, out_ch, ksize, kernel: vec![0.0; out_ch * in_ch * k], bias: vec![0.0; out_ch], relu }
    }

    fn taps(&self) -> usize {
        self.ksize.iter().product()
    }

    fn fan_in(&self) -> usize {
        self.in_ch * self.taps()
    }

    fn check(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.ksize.contains(&0) {
            return param_err("convolution layers need positive channel counts and kernel extents");
        }
        if self.kernel.len() != self.out_ch * self.fan_in() || self.bias.len() != self.out_ch {
            return shape_err("kernel or bias length does not match the layer shape");
        }
        if self.kernel.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite layer weights".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layers: Vec<ConvLayer>,
}

impl ModelWeights {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return param_err("a model needs at least one layer");
        }
        for l in &layers {
            l.check()?;
        }
        for w in layers.windows(2) {
            if w[0].out_ch != w[1].in_ch {
                return shape_err(format!("layer widths do not chain: {} then {}", w[0].out_ch, w[1].in_ch));
            }
        }
        Ok(ModelWeights { layers })
    }

    /// Seeded uniform initialization in `±sqrt(2 / fan_in)`, zero biases.
    pub fn init(in_ch: usize, out_ch: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = arch.kernels.len();
        let mut layers = Vec::with_capacity(n);
        let mut cin = in_ch;
        for (i, &k) in arch.kernels.iter().enumerate() {
            let last = i + 1 == n;
            let cout = if last { out_ch } else { arch.widths[i] };
            let mut layer = ConvLayer::zeros(cin, cout, k, !last);
            let bound = (2.0 / layer.fan_in() as f64).sqrt();
            for w in layer.kernel.iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
            layers.push(layer);
            cin = cout;
        }
        ModelWeights::new(layers)
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().out_ch
    }

    pub fn receptive_field(&self) -> [usize; 3] {
        let mut rf = [1; 3];
        for l in &self.layers {
            for d in 0..3 {
                rf[d] += l.ksize[d] - 1;
            }
        }
        rf
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    /// Flattened parameters: each layer's kernel then bias, in layer order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.kernel);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for l in &mut self.layers {
            let nk = l.kernel.len();
            l.kernel.copy_from_slice(&p[off..off + nk]);
            off += nk;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    pub fn theta_norm(&self) -> f64 {
        self.params().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Kernel extents and hidden widths of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub kernels: Vec<[usize; 3]>,
    /// One width per hidden layer (`kernels.len() − 1` entries).
    pub widths: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            kernels: vec![[3, 3, 7], [1, 1, 5], [1, 1, 3], [1, 1, 1], [1, 1, 1]],
            widths: vec![64; 4],
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() || self.widths.len() + 1 != self.kernels.len() {
            return param_err(format!(
                "architecture needs one width per hidden layer: {} kernels, {} widths",
                self.kernels.len(),
                self.widths.len()
            ));
        }
        if self.kernels.iter().any(|k| k.contains(&0)) || self.widths.contains(&0) {
            return param_err("kernel extents and widths must be positive");
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> [usize; 3] {
        let mut rf = [1; 3];
        for k in &self.kernels {
            for d in 0..3 {
                rf[d] += k[d] - 1;
            }
        }
        rf
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Use `mean e²` and `‖θ‖²` instead of their square roots.
    #[serde(default)]
    pub squared: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { alpha: 0.5, beta: 0.15, squared: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return param_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.beta >= 0.0) {
            return param_err(format!("beta must be non-negative, got {}", self.beta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub architecture: Architecture,
    pub learning_rate: f64,
    /// When set, the step size decays geometrically from `learning_rate` at
    /// the first step to this value at the last.
    pub final_learning_rate: Option<f64>,
    pub iterations: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            architecture: Architecture::default(),
            learning_rate: 3e-4,
            final_learning_rate: None,
            iterations: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.architecture.validate()?;
        if self.iterations == 0 {
            return param_err("iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) || self.final_learning_rate.is_some_and(|r| !(r > 0.0)) {
            return param_err("learning rate and Adam epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return param_err("Adam decay rates must lie in [0, 1)");
        }
        Ok(())
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    rsc: isize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering the described strided extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            if accumulate { 1.0 } else { 0.0 },
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Column matrix for output row `a`: rows `(c, da, db, dx)`, columns `(b, x)`.
fn im2col_row(x: &RTensor, ksize: [usize; 3], out: [usize; 3], a: usize, col: &mut [f64]) {
    let [_, ob, ox] = out;
    let cols = ob * ox;
    let mut r = 0;
    for c in 0..x.shape[0] {
        for da in 0..ksize[0] {
            for db in 0..ksize[1] {
                for dx in 0..ksize[2] {
                    let row = &mut col[r * cols..(r + 1) * cols];
                    for b in 0..ob {
                        let src = x.idx(c, a + da, b + db, dx);
                        row[b * ox..(b + 1) * ox].copy_from_slice(&x.data[src..src + ox]);
                    }
                    r += 1;
                }
            }
        }
    }
}

fn out_extent(layer: &ConvLayer, x: &RTensor) -> Result<[usize; 3]> {
    if x.shape[0] != layer.in_ch {
        return shape_err(format!("layer expects {} input channels, got {}", layer.in_ch, x.shape[0]));
    }
    let s = x.spatial();
    if (0..3).any(|d| s[d] < layer.ksize[d]) {
        return Err(Error::ReceptiveField { input: s.to_vec(), field: layer.ksize.to_vec() });
    }
    Ok([s[0] - layer.ksize[0] + 1, s[1] - layer.ksize[1] + 1, s[2] - layer.ksize[2] + 1])
}

fn conv_forward(layer: &ConvLayer, x: &RTensor) -> Result<RTensor> {
    let o = out_extent(layer, x)?;
    let ck = layer.fan_in();
    let plane = o[1] * o[2];
    let rows: Vec<Vec<f64>> = (0..o[0])
        .into_par_iter()
        .map(|a| {
            let mut col = vec![0.0; ck * plane];
            im2col_row(x, layer.ksize, o, a, &mut col);
            let mut y = vec![0.0; layer.out_ch * plane];
            gemm(layer.out_ch, ck, plane, &layer.kernel, (ck as isize, 1), &col, (plane as isize, 1), &mut y, plane as isize, false);
            for (oc, chunk) in y.chunks_mut(plane).enumerate() {
                let b = layer.bias[oc];
                for v in chunk.iter_mut() {
                    *v += b;
                    if layer.relu && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            y
        })
        .collect();
    let mut out = RTensor::zeros([layer.out_ch, o[0], o[1], o[2]]);
    for (a, y) in rows.into_iter().enumerate() {
        for oc in 0..layer.out_ch {
            let dst = out.idx(oc, a, 0, 0);
            out.data[dst..dst + plane].copy_from_slice(&y[oc * plane..(oc + 1) * plane]);
        }
    }
    Ok(out)
}

/// Returns input gradient (optional) and accumulates kernel/bias gradients.
fn conv_backward(
    layer: &ConvLayer,
    x: &RTensor,
    gout: &RTensor,
    gkernel: &mut [f64],
    gbias: &mut [f64],
    need_input: bool,
) -> Option<RTensor> {
    let o = gout.spatial();
    let ck = layer.fan_in();
    let plane = o[1] * o[2];
    for oc in 0..layer.out_ch {
        let s = gout.idx(oc, 0, 0, 0);
        gbias[oc] += gout.data[s..s + o[0] * plane].iter().sum::<f64>();
    }
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..o[0])
        .into_par_iter()
        .map(|a| {
            let mut col = vec![0.0; ck * plane];
            im2col_row(x, layer.ksize, o, a, &mut col);
            let g = &gout.data[gout.idx(0, a, 0, 0)..];
            let rsg = (o[0] * plane) as isize;
            let mut gk = vec![0.0; layer.out_ch * ck];
            // dW = G · colᵀ
            gemm(layer.out_ch, plane, ck, g, (rsg, 1), &col, (1, plane as isize), &mut gk, ck as isize, false);
            let mut dcol = Vec::new();
            if need_input {
                dcol = vec![0.0; ck * plane];
                // dcol = Wᵀ · G
                gemm(ck, layer.out_ch, plane, &layer.kernel, (1, ck as isize), g, (rsg, 1), &mut dcol, plane as isize, false);
            }
            (gk, dcol)
        })
        .collect();
    let mut gin = need_input.then(|| RTensor::zeros(x.shape));
    for (a, (gk, dcol)) in parts.into_iter().enumerate() {
        for (d, s) in gkernel.iter_mut().zip(&gk) {
            *d += s;
        }
        if let Some(gin) = gin.as_mut() {
            let mut r = 0;
            for c in 0..x.shape[0] {
                for da in 0..layer.ksize[0] {
                    for db in 0..layer.ksize[1] {
                        for dx in 0..layer.ksize[2] {
                            let row = &dcol[r * plane..(r + 1) * plane];
                            for b in 0..o[1] {
                                let dst = gin.idx(c, a + da, b + db, dx);
                                for (d, s) in gin.data[dst..dst + o[2]].iter_mut().zip(&row[b * o[2]..(b + 1) * o[2]]) {
                                    *d += s;
                                }
                            }
                            r += 1;
                        }
                    }
                }
            }
        }
    }
    gin
}

pub fn forward(model: &ModelWeights, x: &RTensor) -> Result<RTensor> {
    check_input(model, x)?;
    let mut h = conv_forward(&model.layers[0], x)?;
    for l in &model.layers[1..] {
        h = conv_forward(l, &h)?;
    }
    Ok(h)
}

fn check_input(model: &ModelWeights, x: &RTensor) -> Result<()> {
    let rf = model.receptive_field();
    let s = x.spatial();
    if (0..3).any(|d| s[d] < rf[d]) {
        return Err(Error::ReceptiveField { input: s.to_vec(), field: rf.to_vec() });
    }
    if x.shape[0] != model.in_channels() {
        return shape_err(format!("model expects {} input channels, got {}", model.in_channels(), x.shape[0]));
    }
    Ok(())
}

/// One training example; `mask` marks target elements that enter the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: RTensor,
    pub target: RTensor,
    pub mask: Option<Vec<bool>>,
}

impl Sample {
    fn valid(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }
}

/// Objective over all valid target elements of all samples:
/// `α·mean|e| + (1−α)·sqrt(mean e²) + β·‖θ‖₂` (squares dropped when
/// `cfg.squared`).
pub fn loss(preds: &[RTensor], samples: &[Sample], model: &ModelWeights, cfg: &LossConfig) -> Result<f64> {
    let (l1, l2, n) = residual_sums(preds, samples)?;
    Ok(combine_loss(l1, l2, n, model.theta_norm(), cfg))
}

fn residual_sums(preds: &[RTensor], samples: &[Sample]) -> Result<(f64, f64, usize)> {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut n = 0usize;
    for (p, s) in preds.iter().zip(samples) {
        if p.shape != s.target.shape {
            return shape_err(format!("prediction {:?} vs target {:?}", p.shape, s.target.shape));
        }
        for (i, (a, b)) in p.data.iter().zip(&s.target.data).enumerate() {
            if s.valid(i) {
                let e = a - b;
                l1 += e.abs();
                l2 += e * e;
                n += 1;
            }
        }
    }
    if n == 0 {
        return shape_err("loss has no valid target elements");
    }
    Ok((l1, l2, n))
}

fn combine_loss(l1: f64, l2: f64, n: usize, theta: f64, cfg: &LossConfig) -> f64 {
    let nf = n as f64;
    let (res2, pen) = if cfg.squared { (l2 / nf, theta * theta) } else { ((l2 / nf).sqrt(), theta) };
    cfg.alpha * l1 / nf + (1.0 - cfg.alpha) * res2 + cfg.beta * pen
}

/// Loss and its gradient with respect to the flattened parameters.
pub fn loss_and_grad(model: &ModelWeights, samples: &[Sample], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return param_err("no training samples");
    }
    let mut traces = Vec::with_capacity(samples.len());
    for s in samples {
        check_input(model, &s.input)?;
        let mut acts = vec![conv_forward(&model.layers[0], &s.input)?];
        for l in &model.layers[1..] {
            let next = conv_forward(l, acts.last().unwrap())?;
            acts.push(next);
        }
        traces.push(acts);
    }
    let preds: Vec<RTensor> = traces.iter().map(|t| t.last().unwrap().clone()).collect();
    let (l1, l2, n) = residual_sums(&preds, samples)?;
    let theta = model.theta_norm();
    let value = combine_loss(l1, l2, n, theta, cfg);
    let nf = n as f64;
    let w1 = cfg.alpha / nf;
    let w2 = if cfg.squared {
        2.0 * (1.0 - cfg.alpha) / nf
    } else if l2 > 0.0 {
        (1.0 - cfg.alpha) / (nf * (l2 / nf).sqrt())
    } else {
        0.0
    };

    let mut grad_layers: Vec<(Vec<f64>, Vec<f64>)> =
        model.layers.iter().map(|l| (vec![0.0; l.kernel.len()], vec![0.0; l.bias.len()])).collect();
    for (s, acts) in samples.iter().zip(&traces) {
        let pred = acts.last().unwrap();
        let mut g = RTensor::zeros(pred.shape);
        for (i, (gv, (a, b))) in g.data.iter_mut().zip(pred.data.iter().zip(&s.target.data)).enumerate() {
            if s.valid(i) {
                let e = a - b;
                let sign = if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *gv = w1 * sign + w2 * e;
            }
        }
        for li in (0..model.layers.len()).rev() {
            let layer = &model.layers[li];
            if layer.relu {
                for (gv, &y) in g.data.iter_mut().zip(&acts[li].data) {
                    if y <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let input = if li == 0 { &s.input } else { &acts[li - 1] };
            let (gk, gb) = &mut grad_layers[li];
            match conv_backward(layer, input, &g, gk, gb, li > 0) {
                Some(gin) => g = gin,
                None => break,
            }
        }
    }
    let mut grad: Vec<f64> = grad_layers.into_iter().flat_map(|(k, b)| k.into_iter().chain(b)).collect();
    let params = model.params();
    let pw = if cfg.squared {
        2.0 * cfg.beta
    } else if theta > 0.0 {
        cfg.beta / theta
    } else {
        0.0
    };
    for (g, p) in grad.iter_mut().zip(&params) {
        *g += pw * p;
    }
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelWeights,
    /// Loss at every step, evaluated before that step's update.
    pub history: Vec<f64>,
}

/// Full-batch Adam over all samples.
pub fn train(model0: &ModelWeights, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = model0.clone();
    let mut p = model.params();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let mut history = Vec::with_capacity(cfg.iterations);
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let decay = match cfg.final_learning_rate {
        Some(end) if cfg.iterations > 1 => (end / cfg.learning_rate).powf(1.0 / (cfg.iterations - 1) as f64),
        _ => 1.0,
    };
    let mut lr = cfg.learning_rate;
    for step in 0..cfg.iterations {
        let (value, grad) = loss_and_grad(&model, samples, &cfg.loss)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        history.push(value);
        let t = (step + 1) as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
        }
        model.set_params(&p);
        lr *= decay;
    }
    Ok(TrainOutcome { model, history })
}
