//! Turns raw samples into model-ready sequences: vocabulary, retrieval of
//! the `k` most target-similar behaviors, and sink insertion.

use serde::{Deserialize, Serialize};

use crate::model::ModelError;
use crate::retrieval::{
    build_sequence, retrieve_topk, RepTable, RetrievalError, SequenceMode, SequenceOptions, SinkSignal, TokenSequence,
    DEFAULT_D_MAX,
};
use crate::textdata::{DataError, Sample, Vocab};
use crate::training::{Example, TrainError};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("sample {index}: {source}")]
    Sample { index: usize, source: RetrievalError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: SequenceMode,
    pub signal: SinkSignal,
    pub k_behaviors: usize,
    /// Width of the fixed representation table used for retrieval.
    pub rep_dim: usize,
    pub rep_seed: u64,
    pub d_max: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: SequenceMode::InfoSink,
            signal: SinkSignal::Temporal,
            k_behaviors: 8,
            rep_dim: 64,
            rep_seed: 0,
            d_max: DEFAULT_D_MAX,
        }
    }
}

pub const PROMPT_HEAD: &str = "target";
pub const PROMPT_TAIL: &str = "history";

pub fn prompt(target_text: &str) -> String {
    format!("{PROMPT_HEAD} {target_text} {PROMPT_TAIL}")
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    vocab: Vocab,
    table: RepTable,
}

impl Pipeline {
    /// Builds the vocabulary from every behavior and target text plus the prompt words.
    pub fn fit(samples: &[Sample], config: PipelineConfig) -> Result<Self, Error> {
        if samples.is_empty() {
            return Err(DataError::EmptyCorpus.into());
        }
        let mut corpus: Vec<&str> = vec![PROMPT_HEAD, PROMPT_TAIL];
        for s in samples {
            corpus.push(&s.target_text);
            corpus.extend(s.behaviors.iter().map(|b| b.text.as_str()));
        }
        let vocab = Vocab::build(&corpus, 1)?;
        Ok(Self::with_vocab(vocab, config))
    }

    pub fn with_vocab(vocab: Vocab, config: PipelineConfig) -> Self {
        let table = RepTable::new(vocab.len(), config.rep_dim, config.rep_seed);
        Self { config, vocab, table }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// `seed` only matters for the random-signal control.
    pub fn sequence(&self, sample: &Sample, seed: u64) -> Result<TokenSequence, RetrievalError> {
        let k = self.config.k_behaviors.min(sample.behaviors.len());
        let selected = retrieve_topk(&sample.target_text, &sample.behaviors, k, &self.vocab, &self.table)?;
        let opts = SequenceOptions {
            mode: self.config.mode,
            signal: self.config.signal,
            d_max: self.config.d_max,
            n_history: sample.behaviors.len() as u32,
        };
        build_sequence(&prompt(&sample.target_text), &selected, &opts, &self.vocab, seed)
    }

    pub fn encode(&self, samples: &[Sample], seed: u64) -> Result<Vec<Example>, Error> {
        samples
            .iter()
            .enumerate()
            .map(|(index, s)| {
                let seq = self
                    .sequence(s, mix_seed(seed, index as u64))
                    .map_err(|source| Error::Sample { index, source })?;
                Ok(Example { seq, label: s.label })
            })
            .collect()
    }
}

/// SplitMix64 finalizer over `(seed, i)`, for per-item child seeds.
pub fn mix_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
