//! Layer primitives on `n x c x h x w` batches, each with its backward pass.

use crate::error::{Error, Result};

/// Dense batch of feature maps, row-major `[n][c][h][w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n}x{c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// The `h x w` map of sample `n`, channel `c`.
    pub fn map(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (n * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn map_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane();
        let start = (n * self.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Channel-wise concatenation, per sample.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::DimensionMismatch("nothing to concatenate".into()))?;
        let (n, h, w) = (first.n, first.h, first.w);
        if parts.iter().any(|t| t.n != n || t.h != h || t.w != w) {
            return Err(Error::DimensionMismatch("concatenated tensors differ in batch or size".into()));
        }
        let c: usize = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for s in 0..n {
            for t in parts {
                let len = t.c * t.plane();
                data.extend_from_slice(&t.data[s * len..(s + 1) * len]);
            }
        }
        Ok(Tensor { n, c, h, w, data })
    }

    /// Inverse of [`Tensor::concat`] given the channel counts.
    pub fn split(&self, channels: &[usize]) -> Vec<Tensor> {
        let p = self.plane();
        let mut out: Vec<Tensor> = channels.iter().map(|&c| Tensor::zeros(self.n, c, self.h, self.w)).collect();
        for s in 0..self.n {
            let mut offset = s * self.c * p;
            for t in out.iter_mut() {
                let len = t.c * p;
                t.data[s * len..(s + 1) * len].copy_from_slice(&self.data[offset..offset + len]);
                offset += len;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn check_kernel(k: usize) -> Result<()> {
    if k % 2 == 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("kernel size {k} must be odd")))
    }
}

/// Offsets `(dst, src, len)` of one kernel tap along an axis of length `n`.
fn tap(n: usize, shift: isize) -> (usize, usize, usize) {
    if shift >= 0 {
        let s = shift as usize;
        (0, s, n.saturating_sub(s))
    } else {
        let s = (-shift) as usize;
        (s, 0, n.saturating_sub(s))
    }
}

/// Same-size 2-D convolution (cross-correlation) with zero padding.
/// `w` is `[out][in][k][k]`, `b` is `[out]`.
pub fn conv2d_same(x: &Tensor, w: &[f64], b: &[f64], out_c: usize, k: usize) -> Result<Tensor> {
    check_kernel(k)?;
    if w.len() != out_c * x.c * k * k || b.len() != out_c {
        return Err(Error::DimensionMismatch(format!(
            "conv weights {} / bias {} for {} -> {out_c} channels, kernel {k}",
            w.len(),
            b.len(),
            x.c
        )));
    }
    let r = (k / 2) as isize;
    let (h, wd) = (x.h, x.w);
    let mut y = Tensor::zeros(x.n, out_c, h, wd);
    for s in 0..x.n {
        for o in 0..out_c {
            let out = y.map_mut(s, o);
            out.fill(b[o]);
            for c in 0..x.c {
                let inp = x.map(s, c);
                for ky in 0..k {
                    let (dy0, sy0, ny) = tap(h, ky as isize - r);
                    for kx in 0..k {
                        let wt = w[((o * x.c + c) * k + ky) * k + kx];
                        if wt == 0.0 {
                            continue;
                        }
                        let (dx0, sx0, nx) = tap(wd, kx as isize - r);
                        for row in 0..ny {
                            let d = &mut out[(dy0 + row) * wd + dx0..][..nx];
                            let src = &inp[(sy0 + row) * wd + sx0..][..nx];
                            for (a, v) in d.iter_mut().zip(src) {
                                *a += wt * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn conv2d_same_backward(x: &Tensor, w: &[f64], out_c: usize, k: usize, dy: &Tensor) -> Result<ConvGrads> {
    check_kernel(k)?;
    if dy.shape() != [x.n, out_c, x.h, x.w] || w.len() != out_c * x.c * k * k {
        return Err(Error::DimensionMismatch("conv backward shapes".into()));
    }
    let r = (k / 2) as isize;
    let (h, wd) = (x.h, x.w);
    let mut dx = Tensor::zeros(x.n, x.c, h, wd);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_c];
    for s in 0..x.n {
        for o in 0..out_c {
            let g = dy.map(s, o);
            db[o] += g.iter().sum::<f64>();
            for c in 0..x.c {
                let inp = x.map(s, c);
                for ky in 0..k {
                    let (dy0, sy0, ny) = tap(h, ky as isize - r);
                    for kx in 0..k {
                        let wi = ((o * x.c + c) * k + ky) * k + kx;
                        let (dx0, sx0, nx) = tap(wd, kx as isize - r);
                        let mut acc = 0.0;
                        for row in 0..ny {
                            let gr = &g[(dy0 + row) * wd + dx0..][..nx];
                            let src = &inp[(sy0 + row) * wd + sx0..][..nx];
                            acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        dw[wi] += acc;
                        let wt = w[wi];
                        if wt == 0.0 {
                            continue;
                        }
                        let back = dx.map_mut(s, c);
                        for row in 0..ny {
                            let d = &mut back[(sy0 + row) * wd + sx0..][..nx];
                            let gr = &g[(dy0 + row) * wd + dx0..][..nx];
                            for (a, v) in d.iter_mut().zip(gr) {
                                *a += wt * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

/// 2x2 max pooling with stride 2. Also returns the flat input index of
/// each maximum (first one on ties).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(Error::DimensionMismatch(format!("cannot pool a {}x{} map", x.h, x.w)));
    }
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0usize; y.data.len()];
    for m in 0..x.n * x.c {
        let base = m * x.plane();
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * x.w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * x.w + 2 * j + dj;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                let o = m * oh * ow + i * ow + j;
                y.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward(dy: &Tensor, argmax: &[usize], input_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (g, &i) in dy.data.iter().zip(argmax) {
        dx.data[i] += g;
    }
    dx
}

/// Transposed convolution, kernel 2 stride 2: every input pixel writes its
/// own 2x2 output block. `w` is `[in][out][2][2]`, `b` is `[out]`.
pub fn deconv2_stride2(x: &Tensor, w: &[f64], b: &[f64], out_c: usize) -> Result<Tensor> {
    if w.len() != x.c * out_c * 4 || b.len() != out_c {
        return Err(Error::DimensionMismatch(format!(
            "deconv weights {} / bias {} for {} -> {out_c} channels",
            w.len(),
            b.len(),
            x.c
        )));
    }
    let (h, wd) = (x.h, x.w);
    let ow = 2 * wd;
    let mut y = Tensor::zeros(x.n, out_c, 2 * h, ow);
    for s in 0..x.n {
        for o in 0..out_c {
            let out = y.map_mut(s, o);
            out.fill(b[o]);
            for c in 0..x.c {
                let inp = x.map(s, c);
                let k = &w[(c * out_c + o) * 4..][..4];
                for i in 0..h {
                    for a in 0..2 {
                        let row = &mut out[(2 * i + a) * ow..][..ow];
                        let (k0, k1) = (k[2 * a], k[2 * a + 1]);
                        for (j, &v) in inp[i * wd..(i + 1) * wd].iter().enumerate() {
                            row[2 * j] += k0 * v;
                            row[2 * j + 1] += k1 * v;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn deconv2_stride2_backward(x: &Tensor, w: &[f64], out_c: usize, dy: &Tensor) -> Result<ConvGrads> {
    if dy.shape() != [x.n, out_c, 2 * x.h, 2 * x.w] || w.len() != x.c * out_c * 4 {
        return Err(Error::DimensionMismatch("deconv backward shapes".into()));
    }
    let (h, wd) = (x.h, x.w);
    let ow = 2 * wd;
    let mut dx = Tensor::zeros(x.n, x.c, h, wd);
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; out_c];
    for s in 0..x.n {
        for o in 0..out_c {
            let g = dy.map(s, o);
            db[o] += g.iter().sum::<f64>();
            for c in 0..x.c {
                let inp = x.map(s, c);
                let base = (c * out_c + o) * 4;
                let mut acc = [0.0; 4];
                let back = dx.map_mut(s, c);
                for i in 0..h {
                    for a in 0..2 {
                        let row = &g[(2 * i + a) * ow..][..ow];
                        let (k0, k1) = (w[base + 2 * a], w[base + 2 * a + 1]);
                        for j in 0..wd {
                            let (g0, g1) = (row[2 * j], row[2 * j + 1]);
                            let v = inp[i * wd + j];
                            acc[2 * a] += g0 * v;
                            acc[2 * a + 1] += g1 * v;
                            back[i * wd + j] += k0 * g0 + k1 * g1;
                        }
                    }
                }
                for (d, a) in dw[base..base + 4].iter_mut().zip(acc) {
                    *d += a;
                }
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only.
    Infer,
}

/// Per-channel batch-norm parameters and running statistics.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams<'a> {
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
}

pub struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

/// Returns the normalized output, the cache for the backward pass and, in
/// training mode, the batch mean and unbiased variance per channel.
pub fn batchnorm(
    x: &Tensor,
    p: BatchNormParams,
    running_mean: &[f64],
    running_var: &[f64],
    mode: Mode,
) -> Result<(Tensor, BatchNormCache, Option<(Vec<f64>, Vec<f64>)>)> {
    let c = x.c;
    if p.gamma.len() != c || p.beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::DimensionMismatch(format!("batch-norm parameters for {c} channels")));
    }
    let m = (x.n * x.plane()) as f64;
    let (mean, var, batch) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut s = 0.0;
                for n in 0..x.n {
                    s += x.map(n, ch).iter().sum::<f64>();
                }
                let mu = s / m;
                let mut q = 0.0;
                for n in 0..x.n {
                    q += x.map(n, ch).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = q / m;
            }
            let unbiased = var.iter().map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v }).collect();
            (mean.clone(), var, Some((mean, unbiased)))
        }
        Mode::Infer => (running_mean.to_vec(), running_var.to_vec(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros(x.n, c, x.h, x.w);
    let mut y = Tensor::zeros(x.n, c, x.h, x.w);
    for n in 0..x.n {
        for ch in 0..c {
            let (mu, is, g, b) = (mean[ch], inv_std[ch], p.gamma[ch], p.beta[ch]);
            let src = x.map(n, ch);
            let xh = xhat.map_mut(n, ch);
            for (d, v) in xh.iter_mut().zip(src) {
                *d = (v - mu) * is;
            }
            let out = y.map_mut(n, ch);
            for (d, v) in out.iter_mut().zip(xhat.map(n, ch)) {
                *d = g * v + b;
            }
        }
    }
    Ok((y, BatchNormCache { xhat, inv_std }, batch))
}

pub struct BatchNormGrads {
    pub dx: Tensor,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

/// Backward pass of a training-mode batch norm.
pub fn batchnorm_backward(dy: &Tensor, gamma: &[f64], cache: &BatchNormCache) -> BatchNormGrads {
    let c = dy.c;
    let m = (dy.n * dy.plane()) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ch in 0..c {
        for n in 0..dy.n {
            let g = dy.map(n, ch);
            dbeta[ch] += g.iter().sum::<f64>();
            dgamma[ch] += g.iter().zip(cache.xhat.map(n, ch)).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut dx = Tensor::zeros(dy.n, c, dy.h, dy.w);
    for n in 0..dy.n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / m;
            let (sb, sg) = (dbeta[ch], dgamma[ch]);
            let g = dy.map(n, ch);
            let xh = cache.xhat.map(n, ch);
            for ((d, gv), xv) in dx.map_mut(n, ch).iter_mut().zip(g).zip(xh) {
                *d = k * (m * gv - sb - xv * sg);
            }
        }
    }
    BatchNormGrads { dx, dgamma, dbeta }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor { data: x.data.iter().map(|v| v.max(0.0)).collect(), ..*x }
}

/// Gradient through a ReLU, given its output.
pub fn relu_backward(out: &Tensor, dy: &Tensor) -> Tensor {
    let data = out.data.iter().zip(&dy.data).map(|(o, g)| if *o > 0.0 { *g } else { 0.0 }).collect();
    Tensor { data, ..*dy }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy of predictions against real-valued targets.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// BCE of `sigmoid(logits)`, and its gradient `(p - t) / count` with respect
/// to the logits.
pub fn bce_with_logits(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    let pred: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let loss = bce_loss(&pred, target)?;
    let n = pred.len() as f64;
    let grad = pred.iter().zip(target).map(|(p, t)| (p - t) / n).collect();
    Ok((loss, grad))
}
