//! Behavior representation, cosine top-k selection, and assembly of the
//! model input with sink slots.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::textdata::{BehaviorRecord, Vocab, SEP};

/// Largest raw sink signal; larger values are clamped.
pub const DEFAULT_D_MAX: u32 = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("k = {k} outside [1, {len}]")]
    KOutOfRange { k: usize, len: usize },
    #[error("no behaviors selected")]
    EmptySelection,
}

/// Fixed seeded embedding table standing in for the representation model.
#[derive(Clone, Debug, PartialEq)]
pub struct RepTable {
    dim: usize,
    rows: Vec<f64>,
}

impl RepTable {
    pub fn new(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..vocab_size * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

/// Mean of the text's token rows; the zero vector for empty text.
pub fn represent(text: &str, vocab: &Vocab, table: &RepTable) -> Vec<f64> {
    let ids = vocab.tokenize(text);
    let mut out = vec![0.0; table.dim()];
    if ids.is_empty() {
        return out;
    }
    for id in &ids {
        for (o, v) in out.iter_mut().zip(table.row(*id)) {
            *o += v;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// `u·v / (|u||v|)`, defined as 0 when either norm is below 1e-12.
pub fn cosine<F: Scalar>(u: &[F], v: &[F]) -> Result<F, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: F = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let nu = u.iter().map(|&a| a * a).sum::<F>().sqrt();
    let nv = v.iter().map(|&a| a * a).sum::<F>().sqrt();
    let tiny = F::of(1e-12);
    if nu < tiny || nv < tiny {
        return Ok(F::zero());
    }
    Ok(dot / (nu * nv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedBehavior {
    pub record: BehaviorRecord,
    pub original_index: u32,
    pub similarity: f64,
}

/// Ranking used for selection: higher similarity, then larger time index,
/// then lexicographically smaller text.
pub fn selection_order(a: &RetrievedBehavior, b: &RetrievedBehavior) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then(b.original_index.cmp(&a.original_index))
        .then(a.record.text.cmp(&b.record.text))
}

/// The `k` behaviors most similar to the target, returned chronologically.
pub fn retrieve_topk(
    target_text: &str,
    history: &[BehaviorRecord],
    k: usize,
    vocab: &Vocab,
    table: &RepTable,
) -> Result<Vec<RetrievedBehavior>, RetrievalError> {
    if k == 0 || k > history.len() {
        return Err(RetrievalError::KOutOfRange { k, len: history.len() });
    }
    let target = represent(target_text, vocab, table);
    let mut scored = history
        .iter()
        .map(|b| {
            let r = represent(&b.text, vocab, table);
            Ok(RetrievedBehavior {
                record: b.clone(),
                original_index: b.time_index,
                similarity: cosine(&target, &r)?,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, selection_order);
        scored.truncate(k);
    }
    scored.sort_by_key(|r| r.original_index);
    Ok(scored)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    None,
    GenericSink,
    InfoSink,
}

/// External signal an information sink carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkSignal {
    Temporal,
    Similarity,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Temporal,
    Similarity,
    Random,
    Generic,
}

impl From<SinkSignal> for SignalKind {
    fn from(s: SinkSignal) -> Self {
        match s {
            SinkSignal::Temporal => Self::Temporal,
            SinkSignal::Similarity => Self::Similarity,
            SinkSignal::Random => Self::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkDescriptor {
    pub position: usize,
    pub raw_signal: u32,
    pub kind: SignalKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Entry {
    Token(u32),
    Sink(SinkDescriptor),
}

/// Assembled model input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub entries: Vec<Entry>,
    pub prompt_len: usize,
    /// Half-open `[start, end)` entry ranges of each behavior's tokens.
    pub spans: Vec<(usize, usize)>,
}

impl TokenSequence {
    /// Plain token sequence without sinks.
    pub fn from_tokens(ids: &[u32]) -> Self {
        Self {
            entries: ids.iter().map(|&i| Entry::Token(i)).collect(),
            prompt_len: ids.len(),
            spans: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sink_positions(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| matches!(e, Entry::Sink(_)).then_some(i))
            .collect()
    }

    pub fn sinks(&self) -> impl Iterator<Item = &SinkDescriptor> {
        self.entries.iter().filter_map(|e| match e {
            Entry::Sink(d) => Some(d),
            Entry::Token(_) => None,
        })
    }

    /// Token ids with every sink slot removed.
    pub fn strip_sinks(&self) -> Vec<u32> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                Entry::Token(t) => Some(*t),
                Entry::Sink(_) => None,
            })
            .collect()
    }

    /// Checks that spans are ordered and disjoint and that each sink's
    /// recorded position matches its slot.
    pub fn is_consistent(&self) -> bool {
        let spans_ok = self
            .spans
            .windows(2)
            .all(|w| w[0].1 <= w[1].0)
            && self.spans.iter().all(|&(s, e)| s <= e && e <= self.entries.len());
        let sinks_ok = self.entries.iter().enumerate().all(|(i, e)| match e {
            Entry::Sink(d) => d.position == i,
            Entry::Token(_) => true,
        });
        spans_ok && sinks_ok
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceOptions {
    pub mode: SequenceMode,
    pub signal: SinkSignal,
    pub d_max: u32,
    /// Length of the full history the behaviors were retrieved from.
    pub n_history: u32,
}

/// Temporal distance to the target, clamped to `[0, d_max]`.
pub fn temporal_signal(n_history: u32, original_index: u32, d_max: u32) -> u32 {
    let d = i64::from(n_history) + 1 - i64::from(original_index);
    d.clamp(0, i64::from(d_max)) as u32
}

/// Similarity in `[-1, 1]` bucketed to `[0, d_max - 1]`.
pub fn similarity_signal(similarity: f64, d_max: u32) -> u32 {
    let v = ((similarity.clamp(-1.0, 1.0) + 1.0) / 2.0 * f64::from(d_max.saturating_sub(1))).floor();
    (v.max(0.0) as u32).min(d_max)
}

/// `[prompt][b1][SINK1][SEP][b2][SINK2][SEP]…[bk][SINKk]`; without sinks the
/// layout is `[prompt][b1][SEP]…[bk]`.
pub fn build_sequence(
    prompt: &str,
    selected: &[RetrievedBehavior],
    options: &SequenceOptions,
    vocab: &Vocab,
    seed: u64,
) -> Result<TokenSequence, RetrievalError> {
    if selected.is_empty() {
        return Err(RetrievalError::EmptySelection);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<Entry> = vocab.tokenize(prompt).into_iter().map(Entry::Token).collect();
    let prompt_len = entries.len();
    let mut spans = Vec::with_capacity(selected.len());
    for (i, b) in selected.iter().enumerate() {
        let start = entries.len();
        entries.extend(vocab.tokenize(&b.record.text).into_iter().map(Entry::Token));
        spans.push((start, entries.len()));
        let position = entries.len();
        let sink = match options.mode {
            SequenceMode::None => None,
            SequenceMode::GenericSink => Some(SinkDescriptor {
                position,
                raw_signal: 0,
                kind: SignalKind::Generic,
            }),
            SequenceMode::InfoSink => {
                let raw_signal = match options.signal {
                    SinkSignal::Temporal => temporal_signal(options.n_history, b.original_index, options.d_max),
                    SinkSignal::Similarity => similarity_signal(b.similarity, options.d_max),
                    SinkSignal::Random => rng.random_range(0..=options.d_max),
                };
                Some(SinkDescriptor {
                    position,
                    raw_signal,
                    kind: options.signal.into(),
                })
            }
        };
        if let Some(d) = sink {
            entries.push(Entry::Sink(d));
        }
        if i + 1 < selected.len() {
            entries.push(Entry::Token(SEP));
        }
    }
    Ok(TokenSequence {
        entries,
        prompt_len,
        spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn history(texts: &[&str]) -> Vec<BehaviorRecord> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| BehaviorRecord {
                text: t.to_string(),
                time_index: i as u32 + 1,
            })
            .collect()
    }

    fn setup() -> (Vocab, RepTable) {
        let corpus: Vec<String> = (0..6)
            .flat_map(|c| (0..4).map(move |i| format!("cat{c} item{}", c * 4 + i)))
            .chain(["target history".to_string()])
            .collect();
        let v = Vocab::build(&corpus, 1).unwrap();
        let t = RepTable::new(v.len(), 16, 1);
        (v, t)
    }

    #[test]
    fn represent_single_token_is_row() {
        let (v, t) = setup();
        assert_eq!(represent("cat3", &v, &t), t.row(v.id("cat3")).to_vec());
        assert_eq!(represent("", &v, &t), vec![0.0; 16]);
        assert_eq!(represent("cat1 item5", &v, &t), represent("cat1 item5", &v, &t));
    }

    #[test]
    fn represent_two_tokens_is_average() {
        let (v, t) = setup();
        let got = represent("cat1 item5", &v, &t);
        let (a, b) = (t.row(v.id("cat1")), t.row(v.id("item5")));
        for j in 0..16 {
            assert!((got[j] - (a[j] + b[j]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_basics() {
        let u = [1.0, 2.0, -0.5];
        assert!((cosine(&u, &u).unwrap() - 1.0f64).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0f64);
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0f64);
        assert!(cosine(&[1.0f32], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn full_selection_is_chronological() {
        let (v, t) = setup();
        let h = history(&["cat2 item9", "cat0 item1", "cat5 item20"]);
        let got = retrieve_topk("cat0 item2", &h, 3, &v, &t).unwrap();
        assert_eq!(got.iter().map(|r| r.original_index).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(retrieve_topk("cat0 item2", &h, 0, &v, &t).is_err());
        assert!(retrieve_topk("cat0 item2", &h, 4, &v, &t).is_err());
    }

    #[test]
    fn self_copy_selected_with_unit_similarity() {
        let (v, t) = setup();
        let h = history(&["cat2 item9", "cat0 item1", "cat5 item20", "cat3 item13"]);
        let got = retrieve_topk("cat5 item20", &h, 1, &v, &t).unwrap();
        assert_eq!(got[0].original_index, 3);
        assert!((got[0].similarity - 1.0).abs() < 1e-12);
    }

    fn seq(mode: SequenceMode, signal: SinkSignal) -> TokenSequence {
        let (v, t) = setup();
        let h = history(&["cat2 item9", "cat0 item1", "cat5 item20", "cat0 item3"]);
        let sel = retrieve_topk("cat0 item2", &h, 2, &v, &t).unwrap();
        let opts = SequenceOptions {
            mode,
            signal,
            d_max: DEFAULT_D_MAX,
            n_history: 4,
        };
        build_sequence("target cat0 item2 history", &sel, &opts, &v, 17).unwrap()
    }

    #[test]
    fn info_sink_layout() {
        let s = seq(SequenceMode::InfoSink, SinkSignal::Temporal);
        // prompt(4) b1(2) SINK SEP b2(2) SINK
        assert_eq!(s.len(), 4 + 2 + 1 + 1 + 2 + 1);
        assert_eq!(s.sink_positions(), vec![6, 10]);
        assert_eq!(s.spans, vec![(4, 6), (8, 10)]);
        let signals: Vec<u32> = s.sinks().map(|d| d.raw_signal).collect();
        // behaviors 2 and 4 of 4: distances 3 and 1
        assert_eq!(signals, vec![3, 1]);
        assert!(s.is_consistent());
    }

    #[test]
    fn mode_none_has_no_sinks() {
        let s = seq(SequenceMode::None, SinkSignal::Temporal);
        assert!(s.sink_positions().is_empty());
        let covered: usize = s.spans.iter().map(|(a, b)| b - a).sum();
        assert_eq!(covered, 4);
        assert_eq!(s.len(), 4 + covered + 1);
    }

    #[test]
    fn stripping_sinks_recovers_plain_sequence() {
        let plain = seq(SequenceMode::None, SinkSignal::Temporal).strip_sinks();
        for mode in [SequenceMode::GenericSink, SequenceMode::InfoSink] {
            for sig in [SinkSignal::Temporal, SinkSignal::Similarity, SinkSignal::Random] {
                assert_eq!(seq(mode, sig).strip_sinks(), plain);
            }
        }
    }

    #[test]
    fn most_recent_has_distance_one_and_clamp() {
        assert_eq!(temporal_signal(50, 50, 512), 1);
        assert_eq!(temporal_signal(1000, 1, 512), 512);
        assert_eq!(similarity_signal(1.0, 512), 511);
        assert_eq!(similarity_signal(-1.0, 512), 0);
    }

    #[test]
    fn random_signal_deterministic_per_seed() {
        let a = seq(SequenceMode::InfoSink, SinkSignal::Random);
        let b = seq(SequenceMode::InfoSink, SinkSignal::Random);
        assert_eq!(a, b);
        assert!(a.sinks().all(|d| d.raw_signal <= DEFAULT_D_MAX && d.kind == SignalKind::Random));
    }

    fn brute_force_topk(target: &[f64], h: &[BehaviorRecord], k: usize, v: &Vocab, t: &RepTable) -> Vec<(u32, f64)> {
        let mut all: Vec<(u32, f64, String)> = h
            .iter()
            .map(|b| {
                let r = represent(&b.text, v, t);
                let dot: f64 = target.iter().zip(&r).map(|(a, b)| a * b).sum();
                let n1 = target.iter().map(|a| a * a).sum::<f64>().sqrt();
                let n2 = r.iter().map(|a| a * a).sum::<f64>().sqrt();
                (b.time_index, dot / (n1 * n2), b.text.clone())
            })
            .collect();
        all.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap()
                .then(b.0.cmp(&a.0))
                .then(a.2.cmp(&b.2))
        });
        let mut top: Vec<(u32, f64)> = all.into_iter().take(k).map(|(i, s, _)| (i, s)).collect();
        top.sort_by_key(|x| x.0);
        top
    }

    proptest! {
        #[test]
        fn topk_matches_full_sort(seed in 0u64..1000) {
            let (v, t) = setup();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let texts: Vec<String> = (0..20).map(|_| {
                let c = rng.random_range(0..6);
                format!("cat{c} item{}", c * 4 + rng.random_range(0..4))
            }).collect();
            let h = history(&texts.iter().map(String::as_str).collect::<Vec<_>>());
            let target = "cat1 item5";
            let got = retrieve_topk(target, &h, 5, &v, &t).unwrap();
            let want = brute_force_topk(&represent(target, &v, &t), &h, 5, &v, &t);
            prop_assert_eq!(got.iter().map(|r| r.original_index).collect::<Vec<_>>(),
                            want.iter().map(|w| w.0).collect::<Vec<_>>());
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.similarity - w.1).abs() < 1e-12);
            }
        }

        #[test]
        fn build_is_deterministic_and_consistent(seed in 0u64..500, k in 1usize..6) {
            let (v, t) = setup();
            let h = history(&["cat2 item9", "cat0 item1", "cat5 item20", "cat0 item3", "cat1 item4", "cat4 item17"]);
            let sel = retrieve_topk("cat0 item2", &h, k, &v, &t).unwrap();
            let opts = SequenceOptions { mode: SequenceMode::InfoSink, signal: SinkSignal::Random, d_max: 64, n_history: 6 };
            let a = build_sequence("target", &sel, &opts, &v, seed).unwrap();
            let b = build_sequence("target", &sel, &opts, &v, seed).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.is_consistent());
            prop_assert_eq!(a.sink_positions().len(), k);
        }
    }
}
