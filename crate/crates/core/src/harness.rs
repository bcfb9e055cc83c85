//! Experiment orchestration: data generation, single runs, `B × T` sweeps,
//! self-trust scheme comparisons and calibration audits. All artifacts are
//! CSV (comma separated, `\n` line endings, header row) or JSON.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{
    ece_with_mode, gsce, read_logits_csv, temperature_sweep_ece, write_ece_bins, PredictionSet,
    TemperatureRow,
};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{generate_blobs, Dataset, Fnv};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::noise::{noise_stats, write_corruption_csv, CorruptionRecord};
use crate::prob::{softmax, ConfidenceMode};
use crate::target::{LocalTrust, LossName};
use crate::train::{snapshot, train, write_dynamics_csv, DynamicsRecord, TrainSpec};

/// Train and test sets of an experiment, before corruption.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    match d.kind {
        DatasetKind::Blobs => {
            let spec = d.blob_spec();
            Ok((generate_blobs(&spec, d.n, 0)?, generate_blobs(&spec, d.n_test, 1)?))
        }
        DatasetKind::CsvPath => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| Error::config("dataset.path", "required for csv_path datasets"))?;
            let all = Dataset::read_csv(path, d.classes)?;
            if all.dim() != d.dim {
                return Err(Error::config(
                    "dataset.dim",
                    format!("file has {} features, config says {}", all.dim(), d.dim),
                ));
            }
            all.split_tail(d.n_test)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut f = create(path)?;
    body(&mut f)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

/// Write `data.csv` (training rows) and `test.csv`.
pub fn gen_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = load_data(cfg)?;
    let train_path = out.join("data.csv");
    let test_path = out.join("test.csv");
    write_file(&train_path, |f| train.write_csv(f))?;
    write_file(&test_path, |f| test.write_csv(f))?;
    Ok((train_path, test_path))
}

/// Summary of a finished run, evaluated on the final model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub method: String,
    pub iterations: u64,
    pub dataset_fingerprint: String,
    pub train_noise_rate: f64,
    pub test_accuracy: f64,
    pub test_conf_top: f64,
    pub test_conf_all: f64,
    pub gsce_top: f64,
    pub gsce_all: f64,
    /// ECE with 10 bins keyed on conf_top.
    pub ece_top: f64,
    /// ECE with 10 bins keyed on conf_all.
    pub ece_all: f64,
    pub correct_fitting: Option<f64>,
    pub wrong_fitting: Option<f64>,
    pub semantic_correction: Option<f64>,
}

pub struct RunResult {
    pub model: Model,
    pub corruption: Vec<CorruptionRecord>,
    pub dynamics: Vec<DynamicsRecord>,
    pub metrics: FinalMetrics,
}

/// Train one configuration without touching the filesystem.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let (mut train_set, test_set) = load_data(cfg)?;
    let corruption = cfg.noise.apply(train_set.clean(), train_set.classes())?;
    train_set.apply_corruption(&corruption)?;
    let model = Model::init(cfg.model_config(), cfg.seed)?;
    let spec = TrainSpec {
        method: cfg.method.clone(),
        optim: cfg.optim.clone(),
        seed: cfg.seed,
        snapshot_every: cfg.snapshot_every,
    };
    let out = train(model, &spec, &train_set, &test_set)?;
    let total = cfg.optim.total_iters;
    let final_snapshot = match out.dynamics.last() {
        Some(last) if last.iter == total => last.clone(),
        _ => snapshot(&out.model, &train_set, &test_set, total, cfg.optim.lr_at(total), 0.0, 0.0, 0.0)?,
    };

    let preds = (0..test_set.len())
        .map(|i| Ok((softmax(&out.model.forward(test_set.row(i))?, 1.0)?, test_set.clean()[i])))
        .collect::<Result<Vec<_>>>()?;
    let ps = PredictionSet::new(preds)?;
    let test = final_snapshot.test.expect("test set is non-empty");
    let metrics = FinalMetrics {
        method: cfg.method.mod_kind().name().to_string(),
        iterations: cfg.optim.total_iters,
        dataset_fingerprint: format!("{:016x}", train_set.fingerprint()),
        train_noise_rate: noise_stats(&corruption, train_set.classes())?.overall,
        test_accuracy: test.accuracy,
        test_conf_top: test.conf_top,
        test_conf_all: test.conf_all,
        gsce_top: gsce(&ps, ConfidenceMode::Top),
        gsce_all: gsce(&ps, ConfidenceMode::All),
        ece_top: ece_with_mode(&ps, 10, ConfidenceMode::Top)?.ece,
        ece_all: ece_with_mode(&ps, 10, ConfidenceMode::All)?.ece,
        correct_fitting: final_snapshot.correct_fitting,
        wrong_fitting: final_snapshot.wrong_fitting,
        semantic_correction: final_snapshot.semantic_correction,
    };
    Ok(RunResult {
        model: out.model,
        corruption,
        dynamics: out.dynamics,
        metrics,
    })
}

/// Train one configuration and write its artifacts into `out`:
/// `corruption.csv`, `dynamics.csv`, `final_metrics.json`, `resolved_config.json`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunResult> {
    let result = run_in_memory(cfg)?;
    write_file(&out.join("resolved_config.json"), |f| writeln!(f, "{}", cfg.to_json()))?;
    write_file(&out.join("corruption.csv"), |f| {
        write_corruption_csv(f, &cfg.noise, &result.corruption)
    })?;
    write_file(&out.join("dynamics.csv"), |f| write_dynamics_csv(f, &result.dynamics))?;
    let json = serde_json::to_string_pretty(&result.metrics).expect("metrics serialise");
    write_file(&out.join("final_metrics.json"), |f| writeln!(f, "{json}"))?;
    Ok(result)
}

/// Training seed of sweep cell `(B, T)`: `seed ⊕ FNV-1a(B, T)`.
pub fn cell_seed(seed: u64, growth: f64, temperature: f64) -> u64 {
    let mut h = Fnv::new();
    h.write_u64(growth.to_bits());
    h.write_u64(temperature.to_bits());
    seed ^ h.finish()
}

/// The standalone configuration that a sweep runs for cell `(B, T)`.
pub fn cell_config(base: &ExperimentConfig, growth: f64, temperature: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.method.kind = LossName::Proselflc;
    cfg.method.epsilon = 0.0;
    cfg.method.at = true;
    cfg.method.growth = growth;
    cfg.method.temperature = temperature;
    cfg.seed = cell_seed(base.seed, growth, temperature);
    cfg
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub growth: f64,
    pub temperature: f64,
    /// `(final_test_acc, final_conf_all, gsce_all)`, or the error message.
    pub outcome: std::result::Result<(f64, f64, f64), String>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param(format!("cannot start {jobs} workers: {e}")))
}

fn fmt_b_t(v: f64) -> String {
    format!("{v}")
}

/// Run every `(B, T)` cell of the grid and write `sweep.csv` plus per-cell
/// artifacts under `cells/`. Rows follow grid order regardless of completion order.
pub fn sweep(base: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if base.sweep.growth.is_empty() || base.sweep.temperature.is_empty() {
        return Err(Error::config("sweep", "grid must be non-empty"));
    }
    let cells: Vec<(f64, f64)> = base
        .sweep
        .growth
        .iter()
        .flat_map(|&b| base.sweep.temperature.iter().map(move |&t| (b, t)))
        .collect();
    let rows: Vec<SweepRow> = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(b, t)| {
                let cfg = cell_config(base, b, t);
                let dir = out.join("cells").join(format!("B{}_T{}", fmt_b_t(b), fmt_b_t(t)));
                let outcome = run(&cfg, &dir)
                    .map(|r| (r.metrics.test_accuracy, r.metrics.test_conf_all, r.metrics.gsce_all))
                    .map_err(|e| {
                        let msg = e.to_string();
                        let _ = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("error.txt"), &msg));
                        msg
                    });
                SweepRow {
                    growth: b,
                    temperature: t,
                    outcome,
                }
            })
            .collect()
    });
    write_file(&out.join("sweep.csv"), |f| {
        writeln!(f, "B,T,final_test_acc,final_conf_all,gsce_all")?;
        for r in &rows {
            match &r.outcome {
                Ok((acc, conf, g)) => writeln!(f, "{},{},{acc},{conf},{g}", r.growth, r.temperature)?,
                Err(_) => writeln!(f, "{},{},ERR,ERR,ERR", r.growth, r.temperature)?,
            }
        }
        Ok(())
    })?;
    Ok(rows)
}

/// Self-trust schemes compared by `compare_schemes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustScheme {
    /// Constant trust, i.e. Boot-soft.
    Constant,
    Global,
    GlobalConfTop,
    GlobalConfAll,
}

impl TrustScheme {
    pub const ALL: [TrustScheme; 4] = [
        TrustScheme::Constant,
        TrustScheme::Global,
        TrustScheme::GlobalConfTop,
        TrustScheme::GlobalConfAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrustScheme::Constant => "constant",
            TrustScheme::Global => "g",
            TrustScheme::GlobalConfTop => "g*conf_top",
            TrustScheme::GlobalConfAll => "g*conf_all",
        }
    }

    /// `base` with the method replaced by this scheme, always with AT.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.method.at = true;
        match self {
            TrustScheme::Constant => {
                cfg.method.kind = LossName::BootSoft;
                cfg.method.epsilon = base.compare.constant_trust;
            }
            TrustScheme::Global | TrustScheme::GlobalConfTop | TrustScheme::GlobalConfAll => {
                cfg.method.kind = LossName::Proselflc;
                cfg.method.epsilon = 0.0;
                cfg.method.local_trust = match self {
                    TrustScheme::Global => LocalTrust::ConstantOne,
                    TrustScheme::GlobalConfTop => LocalTrust::ConfTop,
                    _ => LocalTrust::ConfAll,
                };
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRow {
    pub scheme: TrustScheme,
    pub metrics: FinalMetrics,
}

/// Run the four trust schemes with shared seeds and write `schemes.csv`.
pub fn compare_schemes(base: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<SchemeRow>> {
    base.validate()?;
    let rows: Vec<Result<SchemeRow>> = pool(jobs)?.install(|| {
        TrustScheme::ALL
            .par_iter()
            .map(|&scheme| {
                let cfg = scheme.apply(base);
                let dir = out.join("schemes").join(scheme.name().replace('*', "_"));
                run(&cfg, &dir).map(|r| SchemeRow {
                    scheme,
                    metrics: r.metrics,
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    write_file(&out.join("schemes.csv"), |f| {
        writeln!(
            f,
            "scheme,dataset_fingerprint,fit_clean_train,fit_noisy_train,semantic_correction,test_accuracy"
        )?;
        for r in &rows {
            let m = &r.metrics;
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.scheme.name(),
                m.dataset_fingerprint,
                na(m.correct_fitting),
                na(m.wrong_fitting),
                na(m.semantic_correction),
                m.test_accuracy
            )?;
        }
        Ok(())
    })?;
    Ok(rows)
}

/// ECE and GSCE of an external logits file over `temps` for each of `modes`.
/// Writes `audit.csv` (one row per temperature and mode) and, for each pair,
/// `bins_<mode>_T<t>.csv` with columns `bin,count,conf,accu,gap`.
pub fn audit(
    logits_csv: &Path,
    modes: &[ConfidenceMode],
    temps: &[f64],
    m: usize,
    out: &Path,
) -> Result<Vec<TemperatureRow>> {
    if modes.is_empty() {
        return Err(Error::param("at least one confidence mode is required"));
    }
    if temps.is_empty() {
        return Err(Error::param("at least one temperature is required"));
    }
    if let Some(bad) = temps.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::param(format!("temperature must be > 0, got {bad}")));
    }
    let rows = read_logits_csv(logits_csv)?;
    let mut table = Vec::new();
    for &mode in modes {
        table.extend(temperature_sweep_ece(&rows, temps, mode, m)?);
        for &t in temps {
            let preds = rows
                .iter()
                .map(|(z, y)| Ok((softmax(z, t)?, *y)))
                .collect::<Result<Vec<_>>>()?;
            let report = ece_with_mode(&PredictionSet::new(preds)?, m, mode)?;
            write_file(&out.join(format!("bins_{}_T{t}.csv", mode.name())), |f| {
                write_ece_bins(f, &report)
            })?;
        }
    }
    write_file(&out.join("audit.csv"), |f| {
        writeln!(f, "T,mode,ece,gsce,accuracy")?;
        for r in &table {
            writeln!(f, "{},{},{},{},{}", r.temperature, r.mode.name(), r.ece, r.gsce, r.accuracy)?;
        }
        Ok(())
    })?;
    Ok(table)
}
