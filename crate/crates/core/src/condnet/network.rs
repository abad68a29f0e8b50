use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{NetConfig, ShapeLedger};
use super::layers::{
    batchnorm, batchnorm_backward, conv2d_same, conv2d_same_backward, deconv2_stride2, deconv2_stride2_backward,
    maxpool2, maxpool2_backward, relu, relu_backward, sigmoid, BatchNormCache, BatchNormParams, Mode, Tensor,
    BN_MOMENTUM,
};
use crate::error::{Error, Result};

/// A named tensor of the network. Running batch-norm statistics are stored
/// here too but are not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy)]
struct BnIdx {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone)]
struct EncLevel {
    out_c: usize,
    k: usize,
    w: usize,
    b: usize,
    bn: BnIdx,
}

#[derive(Debug, Clone)]
struct DecLevel {
    out_c: usize,
    k: usize,
    dw: usize,
    db: usize,
    bn1: BnIdx,
    cw: usize,
    cb: usize,
    bn2: BnIdx,
}

#[derive(Debug, Clone)]
struct MapLayer {
    k: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    ledger: ShapeLedger,
    params: Vec<Param>,
    /// `enc[u][i-1]`
    enc: Vec<Vec<EncLevel>>,
    /// `dec[v][i-1]`
    dec: Vec<Vec<DecLevel>>,
    maps: Vec<MapLayer>,
}

struct Builder {
    params: Vec<Param>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, fill: f64, trainable: bool) -> usize {
        let len = shape.iter().product();
        self.params.push(Param { name, shape, data: vec![fill; len], trainable });
        self.params.len() - 1
    }

    fn bn(&mut self, prefix: &str, c: usize) -> BnIdx {
        BnIdx {
            gamma: self.add(format!("{prefix}.gamma"), vec![c], 1.0, true),
            beta: self.add(format!("{prefix}.beta"), vec![c], 0.0, true),
            mean: self.add(format!("{prefix}.mean"), vec![c], 0.0, false),
            var: self.add(format!("{prefix}.var"), vec![c], 1.0, false),
        }
    }
}

struct EncTrace {
    input: Tensor,
    bn: BatchNormCache,
    act: Tensor,
    argmax: Vec<usize>,
    stats: Option<(Vec<f64>, Vec<f64>)>,
}

struct DecTrace {
    input: Tensor,
    bn1: BatchNormCache,
    act1: Tensor,
    bn2: BatchNormCache,
    act2: Tensor,
    stats1: Option<(Vec<f64>, Vec<f64>)>,
    stats2: Option<(Vec<f64>, Vec<f64>)>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub struct Trace {
    enc: Vec<Vec<EncTrace>>,
    dec: Vec<Vec<DecTrace>>,
    map_inputs: Vec<Tensor>,
}

impl Network {
    /// Allocates every layer from the shape ledger and draws fan-in scaled
    /// uniform weights; biases start at zero.
    pub fn build(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let ledger = ShapeLedger::new(cfg)?;
        let mut b = Builder { params: Vec::new() };
        let mut enc = Vec::new();
        for u in 0..cfg.inputs {
            let mut levels = Vec::new();
            for i in 1..cfg.depth {
                let in_c = if i == 1 { 1 } else { 1 << i };
                let out_c = 1 << (i + 1);
                let k = cfg.r[u][i - 1];
                let p = format!("enc{}.{i}", u + 1);
                levels.push(EncLevel {
                    out_c,
                    k,
                    w: b.add(format!("{p}.conv.w"), vec![out_c, in_c, k, k], 0.0, true),
                    b: b.add(format!("{p}.conv.b"), vec![out_c], 0.0, true),
                    bn: b.bn(&format!("{p}.bn"), out_c),
                });
            }
            enc.push(levels);
        }
        let mut dec = Vec::new();
        let mut maps = Vec::new();
        for v in 0..cfg.outputs {
            let mut levels = Vec::new();
            for i in 1..cfg.depth {
                let in_c = cfg.decoder_in_channels(i);
                let out_c = 1 << (i + 1);
                let k = cfg.s[v][i - 1];
                let p = format!("dec{}.{i}", v + 1);
                levels.push(DecLevel {
                    out_c,
                    k,
                    dw: b.add(format!("{p}.deconv.w"), vec![in_c, out_c, 2, 2], 0.0, true),
                    db: b.add(format!("{p}.deconv.b"), vec![out_c], 0.0, true),
                    bn1: b.bn(&format!("{p}.bn1"), out_c),
                    cw: b.add(format!("{p}.conv.w"), vec![out_c, out_c, k, k], 0.0, true),
                    cb: b.add(format!("{p}.conv.b"), vec![out_c], 0.0, true),
                    bn2: b.bn(&format!("{p}.bn2"), out_c),
                });
            }
            dec.push(levels);
            let in_c = cfg.decoder_out_channels(1);
            let k = cfg.t[v][0];
            maps.push(MapLayer {
                k,
                w: b.add(format!("map{}.w", v + 1), vec![1, in_c, k, k], 0.0, true),
                b: b.add(format!("map{}.b", v + 1), vec![1], 0.0, true),
            });
        }
        let mut net = Self { cfg: cfg.clone(), ledger, params: b.params, enc, dec, maps };
        net.initialize(seed);
        Ok(net)
    }

    fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            let bound = if p.name.ends_with("deconv.w") {
                // Each output pixel sees one tap per input channel.
                (6.0 / p.shape[0] as f64).sqrt()
            } else if p.name.starts_with("map") && p.name.ends_with(".w") {
                1.0 / ((p.shape[1] * p.shape[2] * p.shape[3]) as f64).sqrt()
            } else if p.name.ends_with("conv.w") {
                (6.0 / (p.shape[1] * p.shape[2] * p.shape[3]) as f64).sqrt()
            } else {
                continue;
            };
            for v in &mut p.data {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn ledger(&self) -> &ShapeLedger {
        &self.ledger
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    /// Replaces every tensor, checking names and shapes against this network.
    pub fn load_params(&mut self, params: Vec<Param>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} tensors for a network with {}",
                params.len(),
                self.params.len()
            )));
        }
        for (new, old) in params.iter().zip(&self.params) {
            if new.name != old.name || new.shape != old.shape || new.data.len() != old.data.len() {
                return Err(Error::DimensionMismatch(format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    new.name, new.shape, old.name, old.shape
                )));
            }
            if new.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite value in `{}`", new.name)));
            }
        }
        for (old, new) in self.params.iter_mut().zip(params) {
            old.data = new.data;
        }
        Ok(())
    }

    fn bn_params(&self, idx: BnIdx) -> (BatchNormParams<'_>, &[f64], &[f64]) {
        (
            BatchNormParams { gamma: &self.params[idx.gamma].data, beta: &self.params[idx.beta].data },
            &self.params[idx.mean].data,
            &self.params[idx.var].data,
        )
    }

    fn conv_bn_relu(
        &self,
        x: &Tensor,
        w: usize,
        b: usize,
        out_c: usize,
        k: usize,
        bn: BnIdx,
        mode: Mode,
    ) -> Result<(BatchNormCache, Tensor, Option<(Vec<f64>, Vec<f64>)>)> {
        let z = conv2d_same(x, &self.params[w].data, &self.params[b].data, out_c, k)?;
        let (p, m, v) = self.bn_params(bn);
        let (y, cache, stats) = batchnorm(&z, p, m, v, mode)?;
        Ok((cache, relu(&y), stats))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let n = self.cfg.size();
        if x.c != self.cfg.inputs || x.h != n || x.w != n {
            return Err(Error::DimensionMismatch(format!(
                "network takes {} x {n} x {n} inputs, got {} x {} x {}",
                self.cfg.inputs, x.c, x.h, x.w
            )));
        }
        if x.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite network input".into()));
        }
        if x.n == 0 {
            return Err(Error::DimensionMismatch("empty batch".into()));
        }
        Ok(())
    }

    /// Forward pass to pre-sigmoid logits, `n x outputs x N x N`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Trace)> {
        self.check_input(x)?;
        let cfg = &self.cfg;
        let mut enc_traces = Vec::with_capacity(cfg.inputs);
        let mut pooled_last = Vec::with_capacity(cfg.inputs);
        let per_input = x.split(&vec![1; cfg.inputs]);
        for (u, (levels, mut cur)) in self.enc.iter().zip(per_input).enumerate() {
            let mut traces = Vec::with_capacity(levels.len());
            for (li, l) in levels.iter().enumerate() {
                let i = li + 1;
                let (bn, act, stats) = self.conv_bn_relu(&cur, l.w, l.b, l.out_c, l.k, l.bn, mode)?;
                self.ledger.check(&format!("enc{}.{i}.conv", u + 1), act.shape())?;
                let (pooled, argmax) = maxpool2(&act)?;
                self.ledger.check(&format!("enc{}.{i}.pool", u + 1), pooled.shape())?;
                traces.push(EncTrace { input: cur, bn, act, argmax, stats });
                cur = pooled;
            }
            pooled_last.push(cur);
            enc_traces.push(traces);
        }
        let hub = Tensor::concat(&pooled_last.iter().collect::<Vec<_>>())?;
        self.ledger.check("hub", hub.shape())?;

        let n = cfg.size();
        let mut logits = Tensor::zeros(x.n, cfg.outputs, n, n);
        let mut dec_traces = Vec::with_capacity(cfg.outputs);
        let mut map_inputs = Vec::with_capacity(cfg.outputs);
        for (v, levels) in self.dec.iter().enumerate() {
            let mut cur = hub.clone();
            let mut traces: Vec<DecTrace> = Vec::with_capacity(levels.len());
            for i in (1..cfg.depth).rev() {
                let l = &levels[i - 1];
                let up = deconv2_stride2(&cur, &self.params[l.dw].data, &self.params[l.db].data, l.out_c)?;
                self.ledger.check(&format!("dec{}.{i}.deconv", v + 1), up.shape())?;
                let (p, m, var) = self.bn_params(l.bn1);
                let (y1, bn1, stats1) = batchnorm(&up, p, m, var, mode)?;
                let act1 = relu(&y1);
                let (bn2, act2, stats2) = self.conv_bn_relu(&act1, l.cw, l.cb, l.out_c, l.k, l.bn2, mode)?;
                self.ledger.check(&format!("dec{}.{i}.conv", v + 1), act2.shape())?;
                let next = if cfg.has_skip(i) {
                    let mut parts = vec![&act2];
                    parts.extend(enc_traces.iter().map(|t| &t[i - 1].act));
                    let c = Tensor::concat(&parts)?;
                    self.ledger.check(&format!("dec{}.{i}.concat", v + 1), c.shape())?;
                    c
                } else {
                    act2.clone()
                };
                traces.push(DecTrace { input: cur, bn1, act1, bn2, act2, stats1, stats2 });
                cur = next;
            }
            // Traces are stored from level 1 upward.
            traces.reverse();
            let m = &self.maps[v];
            let z = conv2d_same(&cur, &self.params[m.w].data, &self.params[m.b].data, 1, m.k)?;
            self.ledger.check(&format!("map{}", v + 1), z.shape())?;
            for s in 0..x.n {
                logits.map_mut(s, v).copy_from_slice(z.map(s, 0));
            }
            map_inputs.push(cur);
            dec_traces.push(traces);
        }
        Ok((logits, Trace { enc: enc_traces, dec: dec_traces, map_inputs }))
    }

    /// Inference-mode probabilities in (0, 1).
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let (mut z, _) = self.forward(x, Mode::Infer)?;
        for v in &mut z.data {
            *v = sigmoid(*v);
        }
        Ok(z)
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// statistics.
    pub fn update_running_stats(&mut self, trace: &Trace) {
        let mut updates: Vec<(BnIdx, &(Vec<f64>, Vec<f64>))> = Vec::new();
        for (levels, traces) in self.enc.iter().zip(&trace.enc) {
            for (l, t) in levels.iter().zip(traces) {
                if let Some(s) = &t.stats {
                    updates.push((l.bn, s));
                }
            }
        }
        for (levels, traces) in self.dec.iter().zip(&trace.dec) {
            for (l, t) in levels.iter().zip(traces) {
                if let Some(s) = &t.stats1 {
                    updates.push((l.bn1, s));
                }
                if let Some(s) = &t.stats2 {
                    updates.push((l.bn2, s));
                }
            }
        }
        for (idx, (mean, var)) in updates {
            for (r, m) in self.params[idx.mean].data.iter_mut().zip(mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in self.params[idx.var].data.iter_mut().zip(var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
            }
        }
    }

    fn add_grad(grads: &mut [Vec<f64>], idx: usize, g: &[f64]) {
        for (a, b) in grads[idx].iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Gradients of every parameter (zero for running statistics), given the
    /// gradient of the loss with respect to the logits of a training pass.
    pub fn backward(&self, trace: &Trace, dlogits: &Tensor) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.cfg;
        let mut grads: Vec<Vec<f64>> = self.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        let batch = dlogits.n;
        // Gradients arriving at encoder features, `dskip[u][i-1]`.
        let mut dskip: Vec<Vec<Option<Tensor>>> = vec![vec![None; cfg.depth - 1]; cfg.inputs];
        let mut dhub: Option<Tensor> = None;
        for v in 0..cfg.outputs {
            let m = &self.maps[v];
            let map_in = &trace.map_inputs[v];
            let mut dz = Tensor::zeros(batch, 1, dlogits.h, dlogits.w);
            for s in 0..batch {
                dz.map_mut(s, 0).copy_from_slice(dlogits.map(s, v));
            }
            let g = conv2d_same_backward(map_in, &self.params[m.w].data, 1, m.k, &dz)?;
            Self::add_grad(&mut grads, m.w, &g.dw);
            Self::add_grad(&mut grads, m.b, &g.db);
            let mut dcur = g.dx;
            for i in 1..cfg.depth {
                let l = &self.dec[v][i - 1];
                let t = &trace.dec[v][i - 1];
                let dact2 = if cfg.has_skip(i) {
                    let mut channels = vec![l.out_c];
                    channels.extend(std::iter::repeat_n(l.out_c, cfg.inputs));
                    let mut parts = dcur.split(&channels).into_iter();
                    let first = parts.next().expect("decoder part");
                    for (u, part) in parts.enumerate() {
                        match &mut dskip[u][i - 1] {
                            Some(acc) => acc.add_assign(&part),
                            slot => *slot = Some(part),
                        }
                    }
                    first
                } else {
                    dcur
                };
                let dy2 = relu_backward(&t.act2, &dact2);
                let gb2 = batchnorm_backward(&dy2, &self.params[l.bn2.gamma].data, &t.bn2);
                Self::add_grad(&mut grads, l.bn2.gamma, &gb2.dgamma);
                Self::add_grad(&mut grads, l.bn2.beta, &gb2.dbeta);
                let gc = conv2d_same_backward(&t.act1, &self.params[l.cw].data, l.out_c, l.k, &gb2.dx)?;
                Self::add_grad(&mut grads, l.cw, &gc.dw);
                Self::add_grad(&mut grads, l.cb, &gc.db);
                let dy1 = relu_backward(&t.act1, &gc.dx);
                let gb1 = batchnorm_backward(&dy1, &self.params[l.bn1.gamma].data, &t.bn1);
                Self::add_grad(&mut grads, l.bn1.gamma, &gb1.dgamma);
                Self::add_grad(&mut grads, l.bn1.beta, &gb1.dbeta);
                let gd = deconv2_stride2_backward(&t.input, &self.params[l.dw].data, l.out_c, &gb1.dx)?;
                Self::add_grad(&mut grads, l.dw, &gd.dw);
                Self::add_grad(&mut grads, l.db, &gd.db);
                dcur = gd.dx;
            }
            match &mut dhub {
                Some(acc) => acc.add_assign(&dcur),
                slot => *slot = Some(dcur),
            }
        }
        let dhub = dhub.expect("at least one decoder");
        let per_input = dhub.split(&vec![1 << cfg.depth; cfg.inputs]);
        for (u, mut dpool) in per_input.into_iter().enumerate() {
            for i in (1..cfg.depth).rev() {
                let l = &self.enc[u][i - 1];
                let t = &trace.enc[u][i - 1];
                let mut dact = maxpool2_backward(&dpool, &t.argmax, t.act.shape());
                if let Some(extra) = &dskip[u][i - 1] {
                    dact.add_assign(extra);
                }
                let dy = relu_backward(&t.act, &dact);
                let gb = batchnorm_backward(&dy, &self.params[l.bn.gamma].data, &t.bn);
                Self::add_grad(&mut grads, l.bn.gamma, &gb.dgamma);
                Self::add_grad(&mut grads, l.bn.beta, &gb.dbeta);
                let gc = conv2d_same_backward(&t.input, &self.params[l.w].data, l.out_c, l.k, &gb.dx)?;
                Self::add_grad(&mut grads, l.w, &gc.dw);
                Self::add_grad(&mut grads, l.b, &gc.db);
                dpool = gc.dx;
            }
        }
        Ok(grads)
    }
}
