use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ctr_sink::diagnostics::{export_heatmap, mean_p_focused, metric_rows, metrics_csv, summarize, write_file};
use ctr_sink::model::{load_checkpoint, save_checkpoint, Model};
use ctr_sink::pipeline::{Pipeline, PipelineConfig};
use ctr_sink::textdata::{read_dataset, synth_dataset, write_dataset, Sample, SynthParams, Vocab};
use ctr_sink::training::{evaluate, train_stage, two_stage_train, Evaluation, StageConfig, TrainLog, TwoStageConfig};
use serde::{Deserialize, Serialize};

use crate::settings::TrainSettings;

pub fn synth(out: &Path, params: &SynthParams, seed: u64) -> Result<()> {
    let samples = synth_dataset(params, seed)?;
    if samples.is_empty() {
        eprintln!("warning: n_users is 0, writing an empty dataset");
    }
    write_dataset(out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

/// What a checkpoint needs besides the weights to rebuild its inputs.
#[derive(Serialize, Deserialize)]
struct Extra {
    pipeline: PipelineConfig,
    vocab: Vec<String>,
    settings: serde_json::Value,
}

pub struct Trained {
    pub model: Model<f32>,
    pub pipeline: Pipeline,
    pub log: TrainLog,
    pub val_auc: f64,
}

fn load(path: &Path) -> Result<Vec<Sample>> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

pub fn fit(s: &TrainSettings) -> Result<Trained> {
    let data = load(&s.data)?;
    let (train, val) = match &s.val {
        Some(p) => (data, load(p)?),
        None => {
            let n_val = ((data.len() as f64) * s.val_fraction).round() as usize;
            if n_val == 0 || n_val >= data.len() {
                bail!("cannot hold out {} of {} samples for validation", s.val_fraction, data.len());
            }
            let mut train = data;
            let val = train.split_off(train.len() - n_val);
            (train, val)
        }
    };
    let pipeline = Pipeline::fit(
        &train,
        PipelineConfig {
            mode: s.mode.into(),
            signal: s.signal.into(),
            k_behaviors: s.k,
            ..Default::default()
        },
    )?;
    let train_ex = pipeline.encode(&train, s.seed)?;
    let val_ex = pipeline.encode(&val, s.seed.wrapping_add(1))?;
    let mut model = Model::new(s.model_config(pipeline.vocab().len()), s.seed)?;
    let stage = StageConfig {
        pooling: None,
        epochs: s.epochs,
        peak_lr: s.lr,
        batch_size: s.batch_size,
        seed: s.seed,
        ..Default::default()
    };
    let log = if s.two_stage {
        let cfg = TwoStageConfig {
            stage1: StageConfig {
                epochs: s.stage1_epochs,
                ..stage.clone()
            },
            stage2: stage,
        };
        two_stage_train(&mut model, &train_ex, Some(&val_ex), &cfg)?
    } else {
        train_stage(&mut model, &train_ex, Some(&val_ex), &stage, 0, 0)?
    };
    let val_auc = evaluate(&model, &val_ex)?.auc;
    Ok(Trained {
        model,
        pipeline,
        log,
        val_auc,
    })
}

pub fn train(s: &TrainSettings) -> Result<()> {
    let t = fit(s)?;
    let lines = t.log.to_json_lines();
    match &s.log {
        Some(p) => std::fs::write(p, &lines).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{lines}"),
    }
    if let Some(p) = &s.checkpoint_out {
        let extra = Extra {
            pipeline: t.pipeline.config().clone(),
            vocab: t.pipeline.vocab().tokens().to_vec(),
            settings: serde_json::to_value(s)?,
        };
        save_checkpoint(p, &t.model, &serde_json::to_value(&extra)?)?;
        eprintln!("saved checkpoint to {}", p.display());
    }
    println!("val_auc {:.6} steps {}", t.val_auc, t.log.steps);
    Ok(())
}

fn open(checkpoint: &Path) -> Result<(Model<f32>, Pipeline)> {
    let (model, extra) = load_checkpoint::<f32>(checkpoint)?;
    let extra: Extra = serde_json::from_value(extra).context("checkpoint lacks pipeline metadata")?;
    let vocab = Vocab::from_tokens(extra.vocab);
    if vocab.len() != model.config().vocab_size {
        bail!("checkpoint vocabulary has {} tokens but the model expects {}", vocab.len(), model.config().vocab_size);
    }
    Ok((model, Pipeline::with_vocab(vocab, extra.pipeline)))
}

pub fn score(model: &Model<f32>, pipeline: &Pipeline, data: &Path, seed: u64) -> Result<Evaluation> {
    let samples = load(data)?;
    let ex = pipeline.encode(&samples, seed)?;
    Ok(evaluate(model, &ex)?)
}

pub fn eval(checkpoint: &Path, data: &Path, seed: u64, scores: Option<&Path>) -> Result<()> {
    let (model, pipeline) = open(checkpoint)?;
    let e = score(&model, &pipeline, data, seed)?;
    if let Some(p) = scores {
        let text: String = e.scores.iter().map(|s| format!("{s:.9}\n")).collect();
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("auc {:.6}", e.auc);
    println!("loss {:.6}", e.mean_loss);
    println!("n {}", e.scores.len());
    Ok(())
}

pub struct ProbeArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub samples: usize,
    pub heatmaps: usize,
    pub seed: u64,
}

pub fn probe(a: &ProbeArgs) -> Result<()> {
    let (model, pipeline) = open(a.checkpoint)?;
    let samples = load(a.data)?;
    let samples = &samples[..a.samples.min(samples.len())];
    let ex = pipeline.encode(samples, a.seed)?;
    let maps = a.out.join("heatmaps");
    std::fs::create_dir_all(&maps).with_context(|| format!("creating {}", maps.display()))?;
    let mut rows = Vec::new();
    for (i, (e, s)) in ex.iter().zip(samples).enumerate() {
        let records = model.attention_records(&e.seq)?;
        rows.extend(metric_rows(&s.user_id, &records)?);
        if i < a.heatmaps {
            for r in &records {
                let path = maps.join(format!("{}_l{}_h{}.pgm", s.user_id, r.layer, r.head));
                export_heatmap(&r.matrix, &path, Some(&r.sink_positions))?;
            }
        }
    }
    write_file(&a.out.join("metrics.csv"), metrics_csv(&rows).as_bytes())?;
    let mut layers = String::from("layer,p_f_mean,p_f_std,p_b_mean,p_b_std\n");
    for l in summarize(&rows) {
        writeln!(layers, "{},{:.9},{:.9},{:.9},{:.9}", l.layer, l.p_f.mean, l.p_f.std, l.p_b.mean, l.p_b.std)?;
    }
    write_file(&a.out.join("layers.csv"), layers.as_bytes())?;
    print!("{layers}");
    println!("mean_p_f {:.6}", mean_p_focused(&rows));
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Axis {
    SinkEmbedDim,
    KBehaviors,
}

pub fn sweep(base: &TrainSettings, axis: Axis, values: &[usize], test: Option<&Path>, out: Option<&PathBuf>) -> Result<()> {
    let name = match axis {
        Axis::SinkEmbedDim => "sink_embed_dim",
        Axis::KBehaviors => "k_behaviors",
    };
    let mut table = format!("{name},val_auc,steps{}\n", if test.is_some() { ",test_auc" } else { "" });
    for &v in values {
        let mut s = base.clone();
        match axis {
            Axis::SinkEmbedDim => s.sink_dim = v,
            Axis::KBehaviors => s.k = v,
        }
        let t = fit(&s)?;
        write!(table, "{v},{:.6},{}", t.val_auc, t.log.steps)?;
        if let Some(p) = test {
            write!(table, ",{:.6}", score(&t.model, &t.pipeline, p, 0)?.auc)?;
        }
        table.push('\n');
        eprintln!("{name}={v} done");
    }
    match out {
        Some(p) => std::fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}
