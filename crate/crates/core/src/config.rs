//! Flat `key = value` configuration documents.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are a
//! configuration error so typos never silently fall back to defaults.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Cross-layer conditioned stack.
    Stacked,
    /// Independent recurrent layers, no cross-layer kernels.
    RcnInd,
    /// Stacked, with 9×9 input-to-hidden and 1×1 hidden-to-hidden kernels.
    Wide9x1,
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stacked" => Ok(Variant::Stacked),
            "rcn-ind" => Ok(Variant::RcnInd),
            "9x9-1x1" => Ok(Variant::Wide9x1),
            _ => Err(Error::config(format!(
                "unknown variant {s:?} (expected stacked, rcn-ind or 9x9-1x1)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Stacked => "stacked",
            Variant::RcnInd => "rcn-ind",
            Variant::Wide9x1 => "9x9-1x1",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolingMode {
    /// Layer average of the final-step hidden states.
    Last,
    /// Mean over time of L2-normalised per-step descriptors.
    Average,
    /// Component-wise max over time of L2-normalised per-step descriptors.
    Max,
}

impl FromStr for PoolingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(PoolingMode::Last),
            "average" | "avg" => Ok(PoolingMode::Average),
            "max" => Ok(PoolingMode::Max),
            _ => Err(Error::config(format!(
                "unknown pooling_mode {s:?} (expected last, average or max)"
            ))),
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::Last => "last",
            PoolingMode::Average => "average",
            PoolingMode::Max => "max",
        })
    }
}

/// Every tunable of the model, the training loop and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    // frames
    pub height: usize,
    pub width: usize,
    // encoder
    pub encoder_channels: usize,
    pub encoder_padding: usize,
    pub pool2_window: usize,
    // recurrent stack
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub variant: Variant,
    pub cross_candidate: bool,
    pub gate_bias: bool,
    // aggregation
    pub pooling_mode: PoolingMode,
    // training
    pub dropout: f64,
    pub seq_len: usize,
    pub batch: usize,
    pub batches_per_epoch: usize,
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub clip: f64,
    pub epochs: usize,
    pub patience: usize,
    pub checkpoint_every: usize,
    pub augment: bool,
    pub seed: u64,
    // evaluation
    pub test_mirror: bool,
    /// Frames read from each test sequence; 0 reads the whole sequence.
    pub eval_frames: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            height: 160,
            width: 60,
            encoder_channels: 32,
            encoder_padding: 0,
            pool2_window: 2,
            channels: vec![128, 256, 256],
            kernel: 5,
            variant: Variant::Stacked,
            cross_candidate: false,
            gate_bias: false,
            pooling_mode: PoolingMode::Last,
            dropout: 0.7,
            seq_len: 20,
            batch: 10,
            batches_per_epoch: 1,
            lr: 1e-3,
            rho: 0.9,
            eps: 1e-8,
            clip: 5.0,
            epochs: 500,
            patience: 50,
            checkpoint_every: 0,
            augment: true,
            seed: 0,
            test_mirror: true,
            eval_frames: 0,
        }
    }
}

impl Config {
    /// Desk-scale preset: 32×16 frames, 8/16/16 recurrent channels, 3×3
    /// kernels, five-frame subsequences.
    pub fn toy() -> Self {
        Self {
            height: 32,
            width: 16,
            encoder_channels: 8,
            encoder_padding: 1,
            channels: vec![8, 16, 16],
            kernel: 3,
            seq_len: 5,
            epochs: 200,
            ..Self::default()
        }
    }

    /// Gradient-check preset: 16×8 frames, 4/8/8 channels, three frames.
    pub fn grad_check() -> Self {
        Self {
            height: 16,
            width: 8,
            encoder_channels: 4,
            channels: vec![4, 8, 8],
            seq_len: 3,
            dropout: 0.0,
            augment: false,
            ..Self::toy()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got {line:?}", n + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "encoder_channels" => self.encoder_channels = num(key, value)?,
            "encoder_padding" => self.encoder_padding = num(key, value)?,
            "pool2_window" => self.pool2_window = num(key, value)?,
            "channels" => {
                self.channels = value
                    .split(',')
                    .map(|c| num(key, c.trim()))
                    .collect::<Result<_>>()?
            }
            "kernel" => self.kernel = num(key, value)?,
            "variant" => self.variant = value.parse()?,
            "cross_candidate" => self.cross_candidate = num(key, value)?,
            "gate_bias" => self.gate_bias = num(key, value)?,
            "pooling_mode" => self.pooling_mode = value.parse()?,
            "dropout" => self.dropout = num(key, value)?,
            "t" | "seq_len" => self.seq_len = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "batches_per_epoch" => self.batches_per_epoch = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "augment" => self.augment = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "test_mirror" => self.test_mirror = num(key, value)?,
            "eval_frames" => self.eval_frames = num(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serialises every key; `Config::parse(&c.to_text()) == c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let channels = self
            .channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "encoder_channels = {}", self.encoder_channels);
        let _ = writeln!(s, "encoder_padding = {}", self.encoder_padding);
        let _ = writeln!(s, "pool2_window = {}", self.pool2_window);
        let _ = writeln!(s, "channels = {channels}");
        let _ = writeln!(s, "kernel = {}", self.kernel);
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "cross_candidate = {}", self.cross_candidate);
        let _ = writeln!(s, "gate_bias = {}", self.gate_bias);
        let _ = writeln!(s, "pooling_mode = {}", self.pooling_mode);
        let _ = writeln!(s, "dropout = {:?}", self.dropout);
        let _ = writeln!(s, "t = {}", self.seq_len);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "batches_per_epoch = {}", self.batches_per_epoch);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "rho = {:?}", self.rho);
        let _ = writeln!(s, "eps = {:?}", self.eps);
        let _ = writeln!(s, "clip = {:?}", self.clip);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "test_mirror = {}", self.test_mirror);
        let _ = writeln!(s, "eval_frames = {}", self.eval_frames);
        s
    }

    /// Input-to-hidden and hidden-to-hidden kernel sizes after applying the
    /// variant.
    pub fn kernels(&self) -> (usize, usize) {
        match self.variant {
            Variant::Wide9x1 => (9, 1),
            _ => (self.kernel, self.kernel),
        }
    }

    pub fn cross_layer(&self) -> bool {
        self.variant != Variant::RcnInd
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config(format!(
                "recurrent channels must be non-empty and positive, got {:?}",
                self.channels
            )));
        }
        if self.channels.len() != 3 {
            return Err(Error::config(format!(
                "the encoder exposes 3 taps but {} recurrent layers were configured",
                self.channels.len()
            )));
        }
        if self.encoder_channels == 0 {
            return Err(Error::config("encoder_channels must be positive"));
        }
        let (ki, kh) = self.kernels();
        if ki % 2 == 0 || kh % 2 == 0 {
            return Err(Error::config(format!(
                "recurrent kernels must be odd to preserve spatial extent, got {ki} and {kh}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.seq_len == 0 || self.batch == 0 || self.batches_per_epoch == 0 {
            return Err(Error::config("t, batch and batches_per_epoch must be positive"));
        }
        if !(self.lr >= 0.0 && (0.0..1.0).contains(&self.rho) && self.eps > 0.0 && self.clip > 0.0) {
            return Err(Error::config("need lr >= 0, 0 <= rho < 1, eps > 0 and clip > 0"));
        }
        if self.pool2_window == 0 {
            return Err(Error::config("pool2_window must be positive"));
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}
