//! Flag structs shared by the command line and the TOML config file.
//!
//! Every tunable is optional at parse time; `over` layers flags on top of
//! the config file and `resolve` fills what is still missing with defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ctr_sink::model::{ArchMode, ModelConfig, Pooling};
use ctr_sink::retrieval::{SequenceMode, SinkSignal};
use ctr_sink::textdata::SynthParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

macro_rules! layered {
    ($t:ident { $($f:ident),* $(,)? }) => {
        impl $t {
            /// Fields set here win over `base`.
            pub fn over(self, base: Self) -> Self {
                Self { $($f: self.$f.or(base.$f)),* }
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    None,
    GenericSink,
    InfoSink,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Temporal,
    Similarity,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Bidirectional,
    Causal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum PoolingArg {
    AllMean,
    SinkMean,
    LastToken,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    On,
    Off,
}

impl From<Mode> for SequenceMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::None => SequenceMode::None,
            Mode::GenericSink => SequenceMode::GenericSink,
            Mode::InfoSink => SequenceMode::InfoSink,
        }
    }
}

impl From<Signal> for SinkSignal {
    fn from(s: Signal) -> Self {
        match s {
            Signal::Temporal => SinkSignal::Temporal,
            Signal::Similarity => SinkSignal::Similarity,
            Signal::Random => SinkSignal::Random,
        }
    }
}

impl From<Arch> for ArchMode {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Bidirectional => ArchMode::Bidirectional,
            Arch::Causal => ArchMode::Causal,
        }
    }
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::AllMean => Pooling::AllMean,
            PoolingArg::SinkMean => Pooling::SinkMean,
            PoolingArg::LastToken => Pooling::LastToken,
        }
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthFlags {
    /// Output dataset path (one JSON record per line).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub history_len: Option<usize>,
    #[arg(long)]
    pub n_categories: Option<usize>,
    #[arg(long)]
    pub items_per_category: Option<usize>,
    #[arg(long)]
    pub recency_window: Option<usize>,
    #[arg(long)]
    pub p_hit: Option<f64>,
    #[arg(long)]
    pub p_miss: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

layered!(SynthFlags {
    out,
    n_users,
    history_len,
    n_categories,
    items_per_category,
    recency_window,
    p_hit,
    p_miss,
    seed
});

impl SynthFlags {
    pub fn resolve(self) -> Result<(PathBuf, SynthParams, u64), CliError> {
        let out = self.out.ok_or_else(|| CliError::Usage("synth needs --out".into()))?;
        let d = SynthParams::default();
        let params = SynthParams {
            n_users: self.n_users.unwrap_or(d.n_users),
            history_len: self.history_len.unwrap_or(d.history_len),
            n_categories: self.n_categories.unwrap_or(d.n_categories),
            items_per_category: self.items_per_category.unwrap_or(d.items_per_category),
            recency_window: self.recency_window.unwrap_or(d.recency_window),
            p_hit: self.p_hit.unwrap_or(d.p_hit),
            p_miss: self.p_miss.unwrap_or(d.p_miss),
        };
        params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok((out, params, self.seed.unwrap_or(0)))
    }
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFlags {
    /// Training dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation dataset; without it the tail of --data is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub signal: Option<Signal>,
    #[arg(long, value_enum)]
    pub arch: Option<Arch>,
    /// Defaults to all_mean (bidirectional) or last_token (causal).
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[arg(long, value_enum)]
    pub two_stage: Option<Switch>,
    /// Epochs of the main stage.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs of the sink-only first stage; defaults to --epochs.
    #[arg(long)]
    pub stage1_epochs: Option<usize>,
    /// Retrieved behaviors per sample.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    /// Width of the sink embedding table.
    #[arg(long)]
    pub sink_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
    /// Training log (JSON lines); printed to stdout when absent.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

layered!(TrainFlags {
    data,
    val,
    val_fraction,
    mode,
    signal,
    arch,
    pooling,
    two_stage,
    epochs,
    stage1_epochs,
    k,
    d_model,
    layers,
    heads,
    d_ff,
    sink_dim,
    dropout,
    lr,
    batch_size,
    seed,
    checkpoint_out,
    log,
});

/// Fully resolved training run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub val: Option<PathBuf>,
    pub val_fraction: f64,
    pub mode: Mode,
    pub signal: Signal,
    pub arch: Arch,
    pub pooling: PoolingArg,
    pub two_stage: bool,
    pub epochs: usize,
    pub stage1_epochs: usize,
    pub k: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub sink_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(skip)]
    pub checkpoint_out: Option<PathBuf>,
    #[serde(skip)]
    pub log: Option<PathBuf>,
}

impl TrainFlags {
    pub fn resolve(self) -> Result<TrainSettings, CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        let toy = ModelConfig::toy(1);
        let arch = self.arch.unwrap_or(Arch::Bidirectional);
        let epochs = self.epochs.unwrap_or(3);
        let s = TrainSettings {
            data: self.data.ok_or_else(|| CliError::Usage("--data is required".into()))?,
            val: self.val,
            val_fraction: self.val_fraction.unwrap_or(0.1),
            mode: self.mode.unwrap_or(Mode::InfoSink),
            signal: self.signal.unwrap_or(Signal::Temporal),
            arch,
            pooling: self.pooling.unwrap_or(match arch {
                Arch::Bidirectional => PoolingArg::AllMean,
                Arch::Causal => PoolingArg::LastToken,
            }),
            two_stage: self.two_stage == Some(Switch::On),
            epochs,
            stage1_epochs: self.stage1_epochs.unwrap_or(epochs),
            k: self.k.unwrap_or(8),
            d_model: self.d_model.unwrap_or(toy.d_model),
            layers: self.layers.unwrap_or(toy.n_layers),
            heads: self.heads.unwrap_or(toy.n_heads),
            d_ff: self.d_ff.unwrap_or(toy.d_ff),
            sink_dim: self.sink_dim.unwrap_or(toy.sink_embed_dim),
            dropout: self.dropout.unwrap_or(toy.dropout),
            lr: self.lr.unwrap_or(1e-3),
            batch_size: self.batch_size.unwrap_or(32),
            seed: self.seed.unwrap_or(0),
            checkpoint_out: self.checkpoint_out,
            log: self.log,
        };
        if s.two_stage && s.mode == Mode::None {
            return usage("--two-stage on needs sinks; use --mode generic_sink or info_sink".into());
        }
        if s.pooling == PoolingArg::SinkMean && s.mode == Mode::None {
            return usage("sink_mean pooling needs sinks".into());
        }
        if s.val.is_none() && !(s.val_fraction > 0.0 && s.val_fraction < 1.0) {
            return usage(format!("--val-fraction must lie in (0, 1), got {}", s.val_fraction));
        }
        if s.k == 0 {
            return usage("--k must be positive".into());
        }
        if s.batch_size == 0 || !(s.lr >= 0.0 && s.lr.is_finite()) {
            return usage("--batch-size must be positive and --lr finite and non-negative".into());
        }
        s.model_config(1).validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(s)
    }
}

impl TrainSettings {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            d_ff: self.d_ff,
            vocab_size,
            arch: self.arch.into(),
            sink_embed_dim: self.sink_dim,
            bias_layers: (0..self.layers).collect(),
            dropout: self.dropout,
            pooling: self.pooling.into(),
            ..ModelConfig::toy(vocab_size)
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub synth: SynthFlags,
    pub train: TrainFlags,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}
