use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;
use tmlab_core::checks::{run_suite, CheckResult, Suite};
use tmlab_core::evaluation::{
    energy_distance, gen_dataset, rank_aggregate, sliced_wasserstein, to_matrix, write_rank_csv, MetricSpec,
    MetricTable,
};
use tmlab_core::nets::checkpoint::Checkpoint;
use tmlab_core::samplers::{sample_dtm, sample_fm, NeuralTransition, NeuralVelocity, RenoiseFn};
use tmlab_core::training::{train, write_loss_csv};
use tmlab_core::{Model, RandomStream, Seed};

use crate::config::{ExperimentConfig, Metric};
use crate::error::CliError;

/// Substream keys under the run seed.
mod tags {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const HELDOUT: u64 = 4;
    pub const EVAL: u64 = 5;
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    reproduce: String,
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
    #[serde(flatten)]
    extra: serde_json::Value,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_manifest(dir: &Path, file: &str, manifest: &Manifest<'_>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    write_file(&dir.join(file), text.as_bytes())
}

/// Writes the effective config next to the outputs so the run can be
/// repeated from its own directory.
fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join("config.json");
    write_file(&path, cfg.to_json().as_bytes())?;
    Ok(path)
}

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome, CliError> {
    let dir = &cfg.out_dir;
    prepare_dir(dir)?;
    let config_path = write_config(cfg, dir)?;
    let seed = Seed(cfg.seed);
    let data = gen_dataset(cfg.dataset.name, cfg.dataset.size, seed.derive(tags::DATA))?;
    let mut model = Model::<f32>::new(cfg.model.clone(), seed.derive(tags::INIT))?;
    let start = Instant::now();
    let report = train(&mut model, &data, &cfg.train, seed)?;
    let wallclock = start.elapsed().as_secs_f64();

    let checkpoint = dir.join("checkpoint.bin");
    Checkpoint::from_model(&model, seed, cfg.train.steps as u64).save(&checkpoint)?;
    let mut loss = Vec::new();
    write_loss_csv(&report.records, &mut loss).map_err(|e| CliError::io(&dir.join("loss.csv"), e))?;
    write_file(&dir.join("loss.csv"), &loss)?;
    write_manifest(
        dir,
        "manifest.json",
        &Manifest {
            tool: "tmlab",
            version: VERSION,
            command: "train",
            seed: cfg.seed,
            reproduce: format!("tmlab train --config {}", config_path.display()),
            config: cfg,
            outputs: vec!["config.json".into(), "checkpoint.bin".into(), "loss.csv".into()],
            extra: json!({
                "measurements": {
                    "train_wallclock_s": wallclock,
                    "threads": rayon::current_num_threads(),
                    "initial_loss": report.first_loss(),
                    "final_loss": report.last_loss(),
                }
            }),
        },
    )?;
    Ok(TrainOutcome {
        checkpoint,
        initial_loss: report.first_loss(),
        final_loss: report.last_loss(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleCell {
    pub file: String,
    pub mode: tmlab_core::SamplerMode,
    pub steps: usize,
    pub head_steps: usize,
    pub scale: f64,
    pub frequency: usize,
    pub backbone_nfe: u64,
    pub head_nfe: u64,
    pub noise_injections: usize,
}

pub fn write_samples_csv(samples: &Array2<f64>, w: impl Write) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| CliError::Io(format!("writing samples: {e}"));
    let mut header = vec!["chain_id".to_string()];
    header.extend((0..samples.ncols()).map(|k| format!("coord_{k}")));
    out.write_record(&header).map_err(io)?;
    for (i, row) in samples.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(io)?;
    }
    out.flush().map_err(|e| CliError::Io(format!("writing samples: {e}")))
}

pub fn read_samples_csv(path: &Path) -> Result<Array2<f64>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let headers = rdr.headers().map_err(|e| CliError::io(path, e))?.clone();
    if headers.get(0) != Some("chain_id") || headers.len() < 2 {
        return Err(CliError::Validation(format!(
            "{}: expected columns chain_id, coord_0, ...",
            path.display()
        )));
    }
    let cols = headers.len() - 1;
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Validation(format!("{}: row {}: bad number `{field}`", path.display(), line + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Validation(format!("{}: no samples", path.display())));
    }
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub struct SampleRequest<'a> {
    pub checkpoint: &'a Path,
    /// Chains; defaults to `eval.samples`.
    pub n: Option<usize>,
    /// Condition every chain on this class.
    pub class: Option<usize>,
}

pub fn cmd_sample(cfg: &ExperimentConfig, req: &SampleRequest<'_>) -> Result<Vec<SampleCell>, CliError> {
    let dir = &cfg.out_dir;
    prepare_dir(dir)?;
    let ckpt = Checkpoint::load(req.checkpoint)?;
    let model: Model<f32> = ckpt.into_model()?;
    let is_dtm = model.parameterization().is_some();
    if is_dtm != cfg.sampler.mode.is_dtm() {
        return Err(CliError::Validation(format!(
            "`sampler.mode`: {:?} cannot sample a {} checkpoint",
            cfg.sampler.mode,
            if is_dtm { "D-TM" } else { "flow-matching" }
        )));
    }
    let n = req.n.unwrap_or(cfg.eval.samples);
    if n == 0 {
        return Err(CliError::Validation("`--n`: must be >= 1".into()));
    }
    let cond: Vec<Option<usize>> = req.class.map(|k| vec![Some(k); n]).unwrap_or_default();
    let seed = Seed(cfg.seed).derive(tags::SAMPLE);
    let config_path = write_config(cfg, dir)?;

    let mut cells = Vec::new();
    for (stem, spec) in cfg.sampler_cells() {
        model.counters().reset();
        let out = if is_dtm {
            sample_dtm(&NeuralTransition::new(&model)?, &spec, n, &cond, seed)?
        } else {
            sample_fm(&NeuralVelocity::new(&model)?, &spec, n, &cond, seed)?
        };
        let file = format!("{stem}.csv");
        let mut bytes = Vec::new();
        write_samples_csv(&out.samples, &mut bytes)?;
        write_file(&dir.join(&file), &bytes)?;
        cells.push(SampleCell {
            file,
            mode: spec.mode,
            steps: spec.steps,
            head_steps: spec.head_steps,
            scale: spec.scale,
            frequency: spec.frequency,
            backbone_nfe: model.counters().backbone(),
            head_nfe: model.counters().head(),
            noise_injections: out.injections,
        });
    }
    let mut reproduce = format!(
        "tmlab sample --config {} --checkpoint {} --n {n}",
        config_path.display(),
        req.checkpoint.display()
    );
    if let Some(k) = req.class {
        reproduce.push_str(&format!(" --class {k}"));
    }
    write_manifest(
        dir,
        "sample_manifest.json",
        &Manifest {
            tool: "tmlab",
            version: VERSION,
            command: "sample",
            seed: cfg.seed,
            reproduce,
            config: cfg,
            outputs: cells.iter().map(|c| c.file.clone()).collect(),
            extra: json!({ "checkpoint": req.checkpoint, "chains": n, "class": req.class, "cells": cells }),
        },
    )?;
    Ok(cells)
}

pub struct EvalRequest<'a> {
    pub samples: &'a Path,
    /// Compare against this sample file instead of fresh dataset draws.
    pub reference: Option<&'a Path>,
    pub model_id: Option<String>,
}

pub fn cmd_eval(cfg: &ExperimentConfig, req: &EvalRequest<'_>) -> Result<MetricTable, CliError> {
    let dir = &cfg.out_dir;
    prepare_dir(dir)?;
    let samples = read_samples_csv(req.samples)?;
    let seed = Seed(cfg.seed);
    let reference = match req.reference {
        Some(p) => read_samples_csv(p)?,
        None => to_matrix(&gen_dataset(cfg.dataset.name, cfg.eval.heldout, seed.derive(tags::HELDOUT))?),
    };
    let mut values = Vec::new();
    let mut specs = Vec::new();
    for &m in &cfg.eval.metrics {
        let v = match m {
            Metric::SlicedWasserstein => sliced_wasserstein(
                &samples.view(),
                &reference.view(),
                cfg.eval.projections,
                &mut seed.derive(tags::EVAL).stream(),
            )?,
            Metric::EnergyDistance => energy_distance(&samples.view(), &reference.view())?,
        };
        values.push(v);
        specs.push(MetricSpec::new(m.name(), false));
    }
    let model_id = req.model_id.clone().unwrap_or_else(|| {
        req.samples
            .file_stem()
            .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
    });
    let scores = Array2::from_shape_vec((1, values.len()), values).expect("one row");
    let table = MetricTable::new(vec![model_id.clone()], specs, scores)?;
    let file = format!("metrics_{model_id}.csv");
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes)?;
    write_file(&dir.join(&file), &bytes)?;
    let config_path = write_config(cfg, dir)?;
    let mut reproduce = format!(
        "tmlab eval --config {} --samples {} --model-id {model_id}",
        config_path.display(),
        req.samples.display()
    );
    if let Some(r) = req.reference {
        reproduce.push_str(&format!(" --reference {}", r.display()));
    }
    write_manifest(
        dir,
        &format!("eval_manifest_{model_id}.json"),
        &Manifest {
            tool: "tmlab",
            version: VERSION,
            command: "eval",
            seed: cfg.seed,
            reproduce,
            config: cfg,
            outputs: vec![file],
            extra: json!({ "samples": req.samples, "reference": req.reference }),
        },
    )?;
    Ok(table)
}

/// Merges metric tables (same metric columns) and writes `model_id,rank_score`.
pub fn cmd_rank(tables: &[PathBuf], out: Option<&Path>) -> Result<Vec<(String, f64)>, CliError> {
    let mut merged: Option<MetricTable> = None;
    for path in tables {
        let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let t = MetricTable::read_csv(file).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        match &mut merged {
            None => merged = Some(t),
            Some(m) => m.push(&t).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        }
    }
    let table = merged.ok_or_else(|| CliError::Validation("`--table`: at least one table is required".into()))?;
    let scores = rank_aggregate(&table);
    let mut bytes = Vec::new();
    write_rank_csv(&table, &scores, &mut bytes)?;
    match out {
        Some(dir) => {
            prepare_dir(dir)?;
            write_file(&dir.join("ranks.csv"), &bytes)?;
        }
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}")))?,
    }
    Ok(table.models().iter().cloned().zip(scores).collect())
}

/// Deliberately broken kernels for demonstrating that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Flips the sign of the `2 t' t''` term in the re-noising variance.
    FlipRenoiseVariance,
}

impl Fault {
    fn kernel(self) -> RenoiseFn {
        match self {
            Fault::FlipRenoiseVariance => flipped_variance,
        }
    }
}

fn flipped_variance(x: &mut [f64], t2: f64, t3: f64, rng: &mut RandomStream) -> tmlab_core::Result<()> {
    if t2 == t3 {
        return Ok(());
    }
    let sd = ((t3 - t2) * (t2 + t3 + 2.0 * t2 * t3)).sqrt();
    for v in x {
        *v = (t2 * *v + sd * rng.normal()) / t3;
    }
    Ok(())
}

pub fn cmd_check(
    suites: &[Suite],
    seed: u64,
    fault: Option<Fault>,
    out: Option<&Path>,
) -> Result<Vec<(Suite, Vec<CheckResult>)>, CliError> {
    let mut report = Vec::new();
    let mut failed = 0;
    for &suite in suites {
        let start = Instant::now();
        let results = run_suite(suite, Seed(seed), fault.map(Fault::kernel));
        for r in &results {
            println!("[{}] {r}", suite.name());
        }
        let bad = results.iter().filter(|r| !r.passed).count();
        println!(
            "[{}] {} of {} checks passed in {:.1}s",
            suite.name(),
            results.len() - bad,
            results.len(),
            start.elapsed().as_secs_f64()
        );
        failed += bad;
        report.push((suite, results));
    }
    if let Some(dir) = out {
        prepare_dir(dir)?;
        let map: BTreeMap<&str, &Vec<CheckResult>> = report.iter().map(|(s, r)| (s.name(), r)).collect();
        let text = serde_json::to_string_pretty(&map).expect("report serializes") + "\n";
        write_file(&dir.join("check_report.json"), text.as_bytes())?;
    }
    if failed > 0 {
        return Err(CliError::CheckFailed(format!("{failed} check(s) failed")));
    }
    Ok(report)
}
