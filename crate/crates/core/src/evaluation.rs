//! Toy datasets, two-sample distances and rank aggregation.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::GaussianMixtureTarget;
use crate::rng::{RandomStream, Seed};
use crate::state::StatePoint;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: StatePoint,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Gauss8,
    TwoMoons,
    Checkerboard,
}

impl DatasetName {
    pub fn classes(self) -> usize {
        match self {
            DatasetName::Gauss8 | DatasetName::Checkerboard => 8,
            DatasetName::TwoMoons => 2,
        }
    }
}

impl std::str::FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss8" => Ok(DatasetName::Gauss8),
            "two_moons" => Ok(DatasetName::TwoMoons),
            "checkerboard" => Ok(DatasetName::Checkerboard),
            other => Err(Error::UnknownDataset(other.to_string())),
        }
    }
}

fn point(x: f64, y: f64) -> StatePoint {
    StatePoint::from_vec(vec![x, y]).expect("finite")
}

/// `n` labelled 2-D points.
///
/// * `gauss8`: eight std-0.1 Gaussians on the radius-2 circle, label = component.
/// * `two_moons`: two interleaved half circles with 0.1 noise, centred, label = moon.
/// * `checkerboard`: uniform on the dark cells of a 4x4 board over `[-2, 2]^2`, label = cell.
pub fn gen_dataset(name: DatasetName, n: usize, seed: Seed) -> Result<Vec<LabeledPoint>> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    let mut rng = seed.stream();
    let out = match name {
        DatasetName::Gauss8 => {
            let target = GaussianMixtureTarget::gauss8();
            (0..n)
                .map(|_| {
                    let (x, class) = target.sample(&mut rng);
                    LabeledPoint { x, class }
                })
                .collect()
        }
        DatasetName::TwoMoons => (0..n)
            .map(|_| {
                let class = rng.below(2);
                let theta = std::f64::consts::PI * rng.uniform();
                let (x, y) = if class == 0 {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                LabeledPoint {
                    x: point(x - 0.5 + 0.1 * rng.normal(), y - 0.25 + 0.1 * rng.normal()),
                    class,
                }
            })
            .collect(),
        DatasetName::Checkerboard => (0..n)
            .map(|_| {
                let class = rng.below(8);
                let row = class / 2;
                let col = 2 * (class % 2) + (row % 2);
                LabeledPoint {
                    x: point(-2.0 + col as f64 + rng.uniform(), -2.0 + row as f64 + rng.uniform()),
                    class,
                }
            })
            .collect(),
    };
    Ok(out)
}

/// Points as rows of a matrix.
pub fn to_matrix(points: &[LabeledPoint]) -> Array2<f64> {
    let d = points.first().map_or(0, |p| p.x.dim());
    let mut out = Array2::zeros((points.len(), d));
    for (mut row, p) in out.rows_mut().into_iter().zip(points) {
        row.as_slice_mut().unwrap().copy_from_slice(p.x.values());
    }
    out
}

fn check_sets(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::invalid("samples", "sample sets must be non-empty"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!("dimension {}", a.ncols()), format!("dimension {}", b.ncols())));
    }
    Ok(())
}

/// `W_1` between two empirical 1-D distributions: the integral of
/// `|F_a - F_b|`, which also handles unequal sizes.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut area = 0.0;
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i] <= b[j]);
        let x = if take_a { a[i] } else { b[j] };
        area += (i as f64 / na - j as f64 / nb).abs() * (x - prev);
        prev = x;
        if take_a {
            i += 1;
        } else {
            j += 1;
        }
    }
    area
}

/// Mean 1-D `W_1` over `n_proj` random unit directions.
pub fn sliced_wasserstein(a: &ArrayView2<f64>, b: &ArrayView2<f64>, n_proj: usize, rng: &mut RandomStream) -> Result<f64> {
    check_sets(a, b)?;
    if n_proj == 0 {
        return Err(Error::invalid("n_proj", "must be >= 1"));
    }
    let d = a.ncols();
    let dirs: Vec<Vec<f64>> = (0..n_proj)
        .map(|_| loop {
            let v = rng.normal_vec(d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect();
    let project = |m: &ArrayView2<f64>, dir: &[f64]| -> Vec<f64> {
        m.rows()
            .into_iter()
            .map(|r| r.iter().zip(dir).map(|(x, w)| x * w).sum())
            .collect()
    };
    let per_dir: Vec<f64> = dirs
        .par_iter()
        .map(|dir| wasserstein_1d(&mut project(a, dir), &mut project(b, dir)))
        .collect();
    Ok(per_dir.iter().sum::<f64>() / n_proj as f64)
}

fn mean_pairwise(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    let rows: Vec<f64> = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            let x = a.row(i);
            b.rows()
                .into_iter()
                .map(|y| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (a.nrows() * b.nrows()) as f64
}

/// `2 E|X - Y| - E|X - X'| - E|Y - Y'|` over all pairs (V-statistic).
pub fn energy_distance(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<f64> {
    check_sets(a, b)?;
    let e = 2.0 * mean_pairwise(a, b) - mean_pairwise(a, a) - mean_pairwise(b, b);
    Ok(e.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub name: String,
    pub higher_is_better: bool,
}

impl MetricSpec {
    pub fn new(name: impl Into<String>, higher_is_better: bool) -> Self {
        Self {
            name: name.into(),
            higher_is_better,
        }
    }

    fn header(&self) -> String {
        format!("metric:{}:{}", self.name, if self.higher_is_better { "higher" } else { "lower" })
    }

    fn parse_header(h: &str) -> Result<Self> {
        let bad = || Error::invalid("table", format!("bad metric column `{h}`, expected metric:NAME:higher|lower"));
        let rest = h.strip_prefix("metric:").ok_or_else(bad)?;
        let (name, dir) = rest.rsplit_once(':').ok_or_else(bad)?;
        let higher_is_better = match dir {
            "higher" => true,
            "lower" => false,
            _ => return Err(bad()),
        };
        Ok(Self::new(name, higher_is_better))
    }
}

/// Scores of several models on several metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    models: Vec<String>,
    metrics: Vec<MetricSpec>,
    scores: Array2<f64>,
}

impl MetricTable {
    pub fn new(models: Vec<String>, metrics: Vec<MetricSpec>, scores: Array2<f64>) -> Result<Self> {
        if models.is_empty() || metrics.is_empty() {
            return Err(Error::invalid("table", "need at least one model and one metric"));
        }
        if scores.dim() != (models.len(), metrics.len()) {
            return Err(Error::shape(
                format!("{}x{}", models.len(), metrics.len()),
                format!("{:?}", scores.dim()),
            ));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("table", "scores must be finite"));
        }
        Ok(Self { models, metrics, scores })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn metrics(&self) -> &[MetricSpec] {
        &self.metrics
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    /// Appends a model row; the metric columns must match.
    pub fn push(&mut self, other: &MetricTable) -> Result<()> {
        if other.metrics != self.metrics {
            return Err(Error::invalid("table", "metric columns differ"));
        }
        self.models.extend(other.models.iter().cloned());
        let mut rows: Vec<f64> = self.scores.iter().cloned().collect();
        rows.extend(other.scores.iter());
        self.scores = Array2::from_shape_vec((self.models.len(), self.metrics.len()), rows).unwrap();
        Ok(())
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::invalid("table", e.to_string());
        let mut header = vec!["model_id".to_string()];
        header.extend(self.metrics.iter().map(MetricSpec::header));
        out.write_record(&header).map_err(io)?;
        for (m, row) in self.models.iter().zip(self.scores.rows()) {
            let mut rec = vec![m.clone()];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            out.write_record(&rec).map_err(io)?;
        }
        out.flush().map_err(|e| Error::invalid("table", e.to_string()))
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let io = |e: csv::Error| Error::invalid("table", e.to_string());
        let header = rdr.headers().map_err(io)?.clone();
        if header.get(0) != Some("model_id") {
            return Err(Error::invalid("table", "first column must be model_id"));
        }
        let metrics = header.iter().skip(1).map(MetricSpec::parse_header).collect::<Result<Vec<_>>>()?;
        let mut models = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(io)?;
            models.push(rec[0].to_string());
            for (k, v) in rec.iter().skip(1).enumerate() {
                values.push(v.trim().parse::<f64>().map_err(|e| {
                    Error::invalid("table", format!("row {}, {}: {e}", models.len(), metrics[k].name))
                })?);
            }
        }
        let scores = Array2::from_shape_vec((models.len(), metrics.len()), values)
            .map_err(|e| Error::invalid("table", e.to_string()))?;
        Self::new(models, metrics, scores)
    }
}

/// Ranks `1..=M` with `M` for the best value; ties share their mean rank.
fn ranks(values: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    let key = |i: usize| if higher_is_better { values[i] } else { -values[i] };
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && key(order[end]) == key(order[start]) {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

/// Per-model mean rank over metrics, divided by the number of models.
pub fn rank_aggregate(table: &MetricTable) -> Vec<f64> {
    let m = table.models.len();
    let mut total = vec![0.0; m];
    for (k, spec) in table.metrics.iter().enumerate() {
        let col: Vec<f64> = table.scores.column(k).to_vec();
        for (t, r) in total.iter_mut().zip(ranks(&col, spec.higher_is_better)) {
            *t += r;
        }
    }
    // One division keeps hand-computed fractions exact.
    let denom = (table.metrics.len() * m) as f64;
    total.into_iter().map(|t| t / denom).collect()
}

pub fn write_rank_csv(table: &MetricTable, scores: &[f64], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::invalid("ranks", e.to_string());
    out.write_record(["model_id", "rank_score"]).map_err(io)?;
    for (m, s) in table.models.iter().zip(scores) {
        out.write_record([m.as_str(), &s.to_string()]).map_err(io)?;
    }
    out.flush().map_err(|e| Error::invalid("ranks", e.to_string()))
}
