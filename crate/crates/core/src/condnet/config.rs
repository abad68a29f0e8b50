use std::fmt;

use crate::error::{Error, Result};

/// Architecture of a multi-encoder, multi-decoder slice network.
///
/// Encoder level `i` (1 ..= depth-1) convolves at `2^(p+1-i)` pixels with
/// `2^(i+1)` channels and pools to `2^(p-i)`. The pooled outputs of the last
/// level, one per encoder, form the hub. Decoder level `i` (depth-1 down to
/// 1) upsamples to `2^(p+1-i)` with `2^(i+1)` channels; levels up to
/// `depth-2` append the matching encoder features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub inputs: usize,
    pub outputs: usize,
    pub depth: usize,
    /// Slices are `2^log2_size` pixels square.
    pub log2_size: usize,
    /// `r[u][i-1]`: encoder kernels.
    pub r: Vec<Vec<usize>>,
    /// `s[v][i-1]`: decoder convolution kernels.
    pub s: Vec<Vec<usize>>,
    /// `t[v][i-1]`: map kernels; only level 1 produces an output.
    pub t: Vec<Vec<usize>>,
}

impl NetConfig {
    /// Same kernel sizes everywhere.
    pub fn uniform(inputs: usize, outputs: usize, depth: usize, log2_size: usize, r: usize, s: usize, t: usize) -> Self {
        let levels = depth.saturating_sub(1);
        Self {
            inputs,
            outputs,
            depth,
            log2_size,
            r: vec![vec![r; levels]; inputs],
            s: vec![vec![s; levels]; outputs],
            t: vec![vec![t; levels]; outputs],
        }
    }

    /// Two inputs, one output, depth 6 on 256-pixel slices.
    pub fn full() -> Self {
        Self::uniform(2, 1, 6, 8, 3, 5, 5)
    }

    /// Desk-scale default: 64-pixel slices, depth 4.
    pub fn desk() -> Self {
        Self::uniform(2, 1, 4, 6, 3, 5, 5)
    }

    pub fn with_outputs(mut self, outputs: usize) -> Self {
        let levels = self.depth.saturating_sub(1);
        let s = self.s.first().and_then(|k| k.first()).copied().unwrap_or(5);
        let t = self.t.first().and_then(|k| k.first()).copied().unwrap_or(5);
        self.outputs = outputs;
        self.s = vec![vec![s; levels]; outputs];
        self.t = vec![vec![t; levels]; outputs];
        self
    }

    pub fn size(&self) -> usize {
        1 << self.log2_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::Config("network needs at least one input and one output".into()));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!("depth {} must be at least 2", self.depth)));
        }
        if self.log2_size < self.depth + 1 {
            return Err(Error::Config(format!(
                "depth {} needs slices of at least 2^{} pixels, got 2^{}",
                self.depth,
                self.depth + 1,
                self.log2_size
            )));
        }
        if self.log2_size > 12 {
            return Err(Error::Config(format!("slice size 2^{} is too large", self.log2_size)));
        }
        let levels = self.depth - 1;
        for (name, table, rows) in [("R", &self.r, self.inputs), ("S", &self.s, self.outputs), ("T", &self.t, self.outputs)] {
            if table.len() != rows || table.iter().any(|k| k.len() != levels) {
                return Err(Error::Config(format!("kernel table {name} must be {rows} x {levels}")));
            }
            if let Some(k) = table.iter().flatten().find(|&&k| k % 2 == 0) {
                return Err(Error::Config(format!("kernel {name} = {k} must be odd")));
            }
        }
        Ok(())
    }

    /// Channels produced by decoder level `i`, after any concatenation.
    pub(crate) fn decoder_out_channels(&self, i: usize) -> usize {
        if i + 2 <= self.depth {
            (self.inputs + 1) << (i + 1)
        } else {
            1 << (i + 1)
        }
    }

    /// Channels entering decoder level `i`.
    pub(crate) fn decoder_in_channels(&self, i: usize) -> usize {
        if i + 1 == self.depth {
            self.inputs << self.depth
        } else {
            self.decoder_out_channels(i + 1)
        }
    }

    pub(crate) fn has_skip(&self, i: usize) -> bool {
        i + 2 <= self.depth
    }
}

/// One named entry of the shape ledger: channels x side x side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub name: String,
    pub channels: usize,
    pub side: usize,
}

impl fmt::Display for LedgerEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {} x [{}]^2", self.name, self.channels, self.side)
    }
}

/// Expected per-sample feature shapes of every module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeLedger {
    pub entries: Vec<LedgerEntry>,
}

impl ShapeLedger {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let p = cfg.log2_size;
        let mut entries = Vec::new();
        let mut push = |name: String, channels: usize, side: usize| entries.push(LedgerEntry { name, channels, side });
        for u in 1..=cfg.inputs {
            for i in 1..cfg.depth {
                push(format!("enc{u}.{i}.conv"), 1 << (i + 1), 1 << (p + 1 - i));
                push(format!("enc{u}.{i}.pool"), 1 << (i + 1), 1 << (p - i));
            }
        }
        push("hub".into(), cfg.inputs << cfg.depth, 1 << (p + 1 - cfg.depth));
        for v in 1..=cfg.outputs {
            for i in (1..cfg.depth).rev() {
                push(format!("dec{v}.{i}.deconv"), 1 << (i + 1), 1 << (p + 1 - i));
                push(format!("dec{v}.{i}.conv"), 1 << (i + 1), 1 << (p + 1 - i));
                if cfg.has_skip(i) {
                    push(format!("dec{v}.{i}.concat"), cfg.decoder_out_channels(i), 1 << (p + 1 - i));
                }
            }
            push(format!("map{v}"), 1, 1 << p);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Errors unless `shape` (`[n, c, h, w]`) matches the entry.
    pub fn check(&self, name: &str, shape: [usize; 4]) -> Result<()> {
        let e = self
            .get(name)
            .ok_or_else(|| Error::DimensionMismatch(format!("no ledger entry `{name}`")))?;
        if shape[1] != e.channels || shape[2] != e.side || shape[3] != e.side {
            return Err(Error::DimensionMismatch(format!(
                "{name}: got {} x [{}x{}], ledger says {} x [{}]^2",
                shape[1], shape[2], shape[3], e.channels, e.side
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ShapeLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}
