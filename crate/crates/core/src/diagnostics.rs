//! Attention-mass measurements over captured post-softmax matrices and
//! deterministic heatmap export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AttentionRecord;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("attention matrix must be square, got {0:?}")]
    NotSquare(Vec<usize>),
    #[error("position {pos} outside a {n}x{n} matrix")]
    PositionOutOfRange { pos: usize, n: usize },
    #[error("entry ({row}, {col}) = {value} is not a finite value in [0, 1]")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

fn check<F: Scalar>(a: &Tensor<F>, set: &[usize]) -> Result<usize, DiagnosticsError> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(DiagnosticsError::NotSquare(s.to_vec()));
    }
    let n = s[0];
    if let Some(&pos) = set.iter().find(|&&p| p >= n) {
        return Err(DiagnosticsError::PositionOutOfRange { pos, n });
    }
    Ok(n)
}

fn membership(n: usize, set: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    set.iter().for_each(|&p| m[p] = true);
    m
}

/// Share of total attention mass landing in the columns of `set`.
pub fn p_focused<F: Scalar>(a: &Tensor<F>, set: &[usize]) -> Result<f64, DiagnosticsError> {
    let n = check(a, set)?;
    if set.is_empty() {
        return Ok(0.0);
    }
    let cols = membership(n, set);
    let (mut hit, mut total) = (0.0, 0.0);
    for (idx, &v) in a.data().iter().enumerate() {
        let v = v.as_f64();
        total += v;
        if cols[idx % n] {
            hit += v;
        }
    }
    Ok(if total > 0.0 { hit / total } else { 0.0 })
}

/// Share of total attention mass flowing from rows in `set` to columns in `set`.
pub fn p_between<F: Scalar>(a: &Tensor<F>, set: &[usize]) -> Result<f64, DiagnosticsError> {
    let n = check(a, set)?;
    if set.is_empty() {
        return Ok(0.0);
    }
    let m = membership(n, set);
    let (mut hit, mut total) = (0.0, 0.0);
    for (idx, &v) in a.data().iter().enumerate() {
        let v = v.as_f64();
        total += v;
        if m[idx / n] && m[idx % n] {
            hit += v;
        }
    }
    Ok(if total > 0.0 { hit / total } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer: usize,
    pub p_f: f64,
    pub p_b: f64,
}

/// Head-averaged metrics per layer, ordered by layer.
pub fn layerwise_profile<F: Scalar>(
    records: &[AttentionRecord<F>],
    set: &[usize],
) -> Result<Vec<LayerProfile>, DiagnosticsError> {
    let mut layers: Vec<usize> = records.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    layers
        .into_iter()
        .map(|layer| {
            let (mut f, mut b, mut heads) = (0.0, 0.0, 0usize);
            for r in records.iter().filter(|r| r.layer == layer) {
                f += p_focused(&r.matrix, set)?;
                b += p_between(&r.matrix, set)?;
                heads += 1;
            }
            Ok(LayerProfile {
                layer,
                p_f: f / heads as f64,
                p_b: b / heads as f64,
            })
        })
        .collect()
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub mean: f64,
    pub std: f64,
}

impl Dispersion {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub p_f: Dispersion,
    pub p_b: Dispersion,
}

/// One row of the metrics dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample_id: String,
    pub layer: usize,
    pub head: usize,
    pub p_f: f64,
    pub p_b: f64,
}

pub fn metric_rows<F: Scalar>(sample_id: &str, records: &[AttentionRecord<F>]) -> Result<Vec<MetricRow>, DiagnosticsError> {
    records
        .iter()
        .map(|r| {
            Ok(MetricRow {
                sample_id: sample_id.to_string(),
                layer: r.layer,
                head: r.head,
                p_f: p_focused(&r.matrix, &r.sink_positions)?,
                p_b: p_between(&r.matrix, &r.sink_positions)?,
            })
        })
        .collect()
}

/// Per layer, statistics over every (sample, head) value in `rows`.
pub fn summarize(rows: &[MetricRow]) -> Vec<LayerSummary> {
    let mut layers: Vec<usize> = rows.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    layers
        .into_iter()
        .map(|layer| {
            let sel: Vec<&MetricRow> = rows.iter().filter(|r| r.layer == layer).collect();
            let f: Vec<f64> = sel.iter().map(|r| r.p_f).collect();
            let b: Vec<f64> = sel.iter().map(|r| r.p_b).collect();
            LayerSummary {
                layer,
                p_f: Dispersion::of(&f),
                p_b: Dispersion::of(&b),
            }
        })
        .collect()
}

/// Mean P_f over every row, the single number used to compare checkpoints.
pub fn mean_p_focused(rows: &[MetricRow]) -> f64 {
    Dispersion::of(&rows.iter().map(|r| r.p_f).collect::<Vec<_>>()).mean
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("sample_id,layer,head,p_f,p_b\n");
    for r in rows {
        writeln!(s, "{},{},{},{:.9},{:.9}", r.sample_id, r.layer, r.head, r.p_f, r.p_b).expect("string write");
    }
    s
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DiagnosticsError> {
    fs::write(path, bytes).map_err(|e| DiagnosticsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Height of the sink marker strip above the heatmap.
const STRIP: usize = 2;

/// 8-bit binary graymap of `a`, with `0 → 0` and `1 → 255`. When `markers`
/// is given, a strip is added on top with white pixels over sink columns.
pub fn heatmap_pgm<F: Scalar>(a: &Tensor<F>, markers: Option<&[usize]>) -> Result<Vec<u8>, DiagnosticsError> {
    let n = check(a, markers.unwrap_or(&[]))?;
    let extra = if markers.is_some() { STRIP } else { 0 };
    let mut out = format!("P5\n{n} {}\n255\n", n + extra).into_bytes();
    if let Some(m) = markers {
        let cols = membership(n, m);
        for _ in 0..STRIP {
            out.extend(cols.iter().map(|&c| if c { 255u8 } else { 0 }));
        }
    }
    for (idx, &v) in a.data().iter().enumerate() {
        let v = v.as_f64();
        if !(0.0..=1.0).contains(&v) {
            return Err(DiagnosticsError::BadEntry {
                row: idx / n,
                col: idx % n,
                value: v,
            });
        }
        out.push((v * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn matrix_csv<F: Scalar>(a: &Tensor<F>) -> String {
    let n = a.cols();
    let mut s = String::new();
    for row in a.data().chunks(n.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{:.9}", v.as_f64())).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes `<path>` as a graymap and `<path>.csv` with the matrix values.
/// Returns both paths.
pub fn export_heatmap<F: Scalar>(
    a: &Tensor<F>,
    path: &Path,
    markers: Option<&[usize]>,
) -> Result<(PathBuf, PathBuf), DiagnosticsError> {
    let pgm = heatmap_pgm(a, markers)?;
    let csv_path = path.with_extension("csv");
    write_file(path, &pgm)?;
    write_file(&csv_path, matrix_csv(a).as_bytes())?;
    Ok((path.to_path_buf(), csv_path))
}
