use ctr_sink::pipeline::{prompt, Pipeline, PipelineConfig, PROMPT_HEAD, PROMPT_TAIL};
use ctr_sink::retrieval::{temporal_signal, Entry, SequenceMode, SignalKind, SinkSignal};
use ctr_sink::textdata::{synth_dataset, SynthParams, SEP};

fn data(n: usize, seed: u64) -> Vec<ctr_sink::textdata::Sample> {
    synth_dataset(
        &SynthParams {
            n_users: n,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

fn pipeline(mode: SequenceMode, signal: SinkSignal, samples: &[ctr_sink::textdata::Sample]) -> Pipeline {
    Pipeline::fit(
        samples,
        PipelineConfig {
            mode,
            signal,
            ..Default::default()
        },
    )
    .unwrap()
}

#[test]
fn vocabulary_covers_prompt_and_behaviors() {
    let samples = data(30, 1);
    let p = pipeline(SequenceMode::InfoSink, SinkSignal::Temporal, &samples);
    assert!(p.vocab().contains(PROMPT_HEAD));
    assert!(p.vocab().contains(PROMPT_TAIL));
    for s in &samples {
        for tok in prompt(&s.target_text).split_whitespace() {
            assert!(p.vocab().contains(tok));
        }
    }
}

#[test]
fn sink_modes_strip_to_the_sink_free_sequence() {
    let samples = data(40, 2);
    let none = pipeline(SequenceMode::None, SinkSignal::Temporal, &samples);
    let generic = pipeline(SequenceMode::GenericSink, SinkSignal::Temporal, &samples);
    let info = pipeline(SequenceMode::InfoSink, SinkSignal::Random, &samples);
    let k = none.config().k_behaviors;
    for (i, s) in samples.iter().enumerate() {
        let base = none.sequence(s, i as u64).unwrap();
        assert!(base.sink_positions().is_empty());
        assert_eq!(base.entries.iter().filter(|e| **e == Entry::Token(SEP)).count(), k - 1);
        for p in [&generic, &info] {
            let seq = p.sequence(s, i as u64).unwrap();
            assert_eq!(seq.strip_sinks(), base.strip_sinks());
            assert_eq!(seq.sink_positions().len(), k);
            assert!(seq.is_consistent());
        }
    }
}

#[test]
fn temporal_sinks_carry_distance_to_target() {
    let samples = data(20, 3);
    let p = pipeline(SequenceMode::InfoSink, SinkSignal::Temporal, &samples);
    for s in &samples {
        let seq = p.sequence(s, 0).unwrap();
        let n = s.behaviors.len() as u32;
        // sinks follow their behavior's tokens, so the span end is the sink slot
        for (d, &(start, end)) in seq.sinks().zip(&seq.spans) {
            assert_eq!(d.kind, SignalKind::Temporal);
            assert_eq!(d.position, end);
            let text: Vec<u32> = seq.entries[start..end]
                .iter()
                .map(|e| match e {
                    Entry::Token(t) => *t,
                    Entry::Sink(_) => unreachable!(),
                })
                .collect();
            let behavior = s
                .behaviors
                .iter()
                .find(|b| p.vocab().tokenize(&b.text) == text && temporal_signal(n, b.time_index, 512) == d.raw_signal);
            assert!(behavior.is_some());
        }
    }
}

#[test]
fn encoding_is_seeded() {
    let samples = data(25, 4);
    let p = pipeline(SequenceMode::InfoSink, SinkSignal::Random, &samples);
    let a = p.encode(&samples, 9).unwrap();
    assert_eq!(a, p.encode(&samples, 9).unwrap());
    assert_ne!(a, p.encode(&samples, 10).unwrap());
    assert!(a.iter().zip(&samples).all(|(e, s)| e.label == s.label));
}
