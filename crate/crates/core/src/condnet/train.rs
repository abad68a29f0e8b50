use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::NetConfig;
use super::layers::{bce_loss, bce_with_logits, sigmoid, Mode, Tensor};
use super::network::Network;
use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::phantom::TrainingSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::Config("Adam steps count from 1".into()));
    }
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidValue("non-finite gradient".into()));
    }
    let c1 = 1.0 - hyper.beta1.powf(t as f64);
    let c2 = 1.0 - hyper.beta2.powf(t as f64);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        *p -= hyper.step * (*m / c1) / ((*v / c2).sqrt() + hyper.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub validation_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch: 4, validation_fraction: 0.1, adam: AdamConfig::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Mean BCE per epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub train_slices: usize,
    pub validation_slices: usize,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_bce,validation_bce\n");
        for (e, (t, v)) in self.train.iter().zip(&self.validation).enumerate() {
            out.push_str(&format!("{},{t:.8},{v:.8}\n", e + 1));
        }
        out
    }
}

/// Slice `k` along `axis` of every sample, as (input, target) tensors.
struct SliceSet<'a> {
    data: &'a TrainingSet,
    axis: Axis,
    side: usize,
}

impl SliceSet<'_> {
    fn fill(&self, items: &[(usize, usize)], outputs: usize) -> Result<(Tensor, Vec<f64>)> {
        let n = self.side;
        let mut x = Tensor::zeros(items.len(), 2, n, n);
        let mut target = vec![0.0; items.len() * outputs * n * n];
        for (b, &(s, k)) in items.iter().enumerate() {
            let sample = &self.data.samples[s];
            for (c, vol) in [&sample.t1, &sample.t2].into_iter().enumerate() {
                let sl = vol.slice(self.axis, k)?;
                for (d, v) in x.map_mut(b, c).iter_mut().zip(&sl.data) {
                    *d = *v as f64;
                }
            }
            for v in 0..outputs {
                let sl = sample.targets[v].slice(self.axis, k)?;
                let start = (b * outputs + v) * n * n;
                for (d, t) in target[start..start + n * n].iter_mut().zip(&sl.data) {
                    *d = *t as f64;
                }
            }
        }
        Ok((x, target))
    }
}

/// Number of validation slices for `total` slices.
pub fn validation_count(total: usize, fraction: f64) -> usize {
    (total as f64 * fraction).round() as usize
}

/// Trains one network on all slices along `axis`. Slices are shuffled once
/// with the seed and split into training and validation parts; training
/// order is reshuffled every epoch from the same generator.
pub fn train(cfg: &NetConfig, tcfg: &TrainConfig, data: &TrainingSet, axis: Axis) -> Result<(Network, LossCurve)> {
    train_with(cfg, tcfg, data, axis, |_, _, _| {})
}

/// [`train`] with a callback after every epoch: `(epoch, train, validation)`.
pub fn train_with(
    cfg: &NetConfig,
    tcfg: &TrainConfig,
    data: &TrainingSet,
    axis: Axis,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(Network, LossCurve)> {
    tcfg.validate()?;
    if cfg.inputs != 2 {
        return Err(Error::Config(format!("training uses T1 and T2 inputs, config has {}", cfg.inputs)));
    }
    if data.samples.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let dims = data.dims();
    if data.samples.iter().any(|s| s.t1.dims() != dims || s.t2.dims() != dims || s.targets.iter().any(|t| t.dims() != dims)) {
        return Err(Error::DimensionMismatch("training volumes differ in size".into()));
    }
    if data.samples.iter().any(|s| s.targets.len() < cfg.outputs) {
        return Err(Error::Config(format!("network has {} outputs but samples have fewer targets", cfg.outputs)));
    }
    let (p, q) = dims.plane(axis);
    let side = cfg.size();
    if p != side || q != side {
        return Err(Error::DimensionMismatch(format!("{axis} slices are {p}x{q}, network takes {side}x{side}")));
    }
    let mut items: Vec<(usize, usize)> = (0..data.samples.len())
        .flat_map(|s| (0..dims.extent(axis)).map(move |k| (s, k)))
        .collect();
    let total = items.len();
    let n_val = validation_count(total, tcfg.validation_fraction);
    if n_val == 0 || n_val >= total {
        return Err(Error::Config(format!("{total} slices are too few to split for validation")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    items.shuffle(&mut rng);
    let val: Vec<(usize, usize)> = items.split_off(total - n_val);
    let mut train_items = items;

    let mut net = Network::build(cfg, tcfg.seed)?;
    let mut states: Vec<AdamState> = net.params().iter().map(|p| AdamState::new(p.data.len())).collect();
    let set = SliceSet { data, axis, side };
    let mut curve = LossCurve { train_slices: train_items.len(), validation_slices: val.len(), ..Default::default() };
    let mut t = 0u64;
    for epoch in 1..=tcfg.epochs {
        train_items.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in train_items.chunks(tcfg.batch) {
            let (x, target) = set.fill(chunk, cfg.outputs)?;
            let (logits, trace) = net.forward(&x, Mode::Train)?;
            let (loss, grad) = bce_with_logits(&logits.data, &target)?;
            let dlogits = Tensor::from_vec(logits.n, logits.c, logits.h, logits.w, grad)?;
            let grads = net.backward(&trace, &dlogits)?;
            net.update_running_stats(&trace);
            t += 1;
            for ((param, g), st) in net.params_mut().iter_mut().zip(&grads).zip(&mut states) {
                if param.trainable {
                    adam_step(&mut param.data, g, st, &tcfg.adam, t)?;
                }
            }
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_items.len() as f64;
        let val_loss = evaluate(&net, &set, &val, tcfg.batch)?;
        curve.train.push(train_loss);
        curve.validation.push(val_loss);
        on_epoch(epoch, train_loss, val_loss);
    }
    Ok((net, curve))
}

fn evaluate(net: &Network, set: &SliceSet, items: &[(usize, usize)], batch: usize) -> Result<f64> {
    let outputs = net.config().outputs;
    let mut sum = 0.0;
    for chunk in items.chunks(batch) {
        let (x, target) = set.fill(chunk, outputs)?;
        let (logits, _) = net.forward(&x, Mode::Infer)?;
        let pred: Vec<f64> = logits.data.iter().map(|&z| sigmoid(z)).collect();
        sum += bce_loss(&pred, &target)? * chunk.len() as f64;
    }
    Ok(sum / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s, AdamState::new(2));
    }

    #[test]
    fn first_step_moves_by_step_size() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        let h = AdamConfig::default();
        adam_step(&mut p, &[0.5, -3.0, 1e-3], &mut s, &h, 1).unwrap();
        for (v, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sign * h.step).abs() < 1e-8, "{v}");
        }
        assert!(adam_step(&mut p, &[f64::NAN, 0.0, 0.0], &mut s, &h, 2).is_err());
        assert!(adam_step(&mut p, &[0.0; 3], &mut s, &h, 0).is_err());
    }

    #[test]
    fn split_counts() {
        assert_eq!(validation_count(192, 0.1), 19);
        assert_eq!(validation_count(64, 0.1), 6);
        assert_eq!(validation_count(65, 0.1), 7);
    }
}
