//! SGD with momentum and step decay, and the per-snapshot dynamics recorder.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{LossContext, Objective};
use crate::model::Model;
use crate::prob::{argmax_slice, confidence, softmax_slice, ConfidenceMode, Logits, OneHot, ProbDist};
use crate::target::{global_trust, LocalTrust, LossName, ModKind, TrustParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Total iterations `Γ`.
    pub total_iters: u64,
    /// Iterations at which the learning rate is divided by `lr_decay_factor`.
    #[serde(default)]
    pub lr_decay_iters: Vec<u64>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_decay_factor() -> f64 {
    10.0
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, m: String| Err(Error::config(format!("optim.{f}"), m));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return field("lr0", format!("must be >= 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return field("momentum", format!("must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return field("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return field("batch_size", "must be >= 1".into());
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return field("lr_decay_factor", "must be > 0".into());
        }
        let increasing = self.lr_decay_iters.windows(2).all(|w| w[0] < w[1]);
        let inside = self.lr_decay_iters.iter().all(|&t| t < self.total_iters);
        if !(increasing && inside) {
            return field(
                "lr_decay_iters",
                "must be strictly increasing and below total_iters".into(),
            );
        }
        Ok(())
    }

    /// Step-decayed learning rate used at iteration `iter`.
    pub fn lr_at(&self, iter: u64) -> f64 {
        let drops = self.lr_decay_iters.iter().filter(|&&t| t <= iter).count();
        self.lr0 / self.lr_decay_factor.powi(drops as i32)
    }
}

/// The training loss and how its self knowledge is formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: LossName,
    /// Fixed mixing weight for ls, cp and boot_soft.
    #[serde(default)]
    pub epsilon: f64,
    /// Sharpen the self knowledge with `temperature`.
    #[serde(default)]
    pub at: bool,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Growth speed `B` of the global trust.
    #[serde(default = "default_growth")]
    pub growth: f64,
    /// Inflection fraction `Θ`.
    #[serde(default = "default_inflection")]
    pub inflection: f64,
    #[serde(default = "default_local")]
    pub local_trust: LocalTrust,
    /// Local trust computed on the tempered prediction rather than on `p` at T=1.
    #[serde(default = "default_true")]
    pub local_on_tempered: bool,
}

fn default_temperature() -> f64 {
    1.0
}
fn default_growth() -> f64 {
    16.0
}
fn default_inflection() -> f64 {
    0.5
}
fn default_local() -> LocalTrust {
    LocalTrust::ConfAll
}
fn default_true() -> bool {
    true
}

impl MethodConfig {
    pub fn new(kind: ModKind) -> Self {
        let (name, epsilon) = match kind {
            ModKind::Cce => (LossName::Cce, 0.0),
            ModKind::Ls { epsilon } => (LossName::Ls, epsilon),
            ModKind::Cp { epsilon } => (LossName::Cp, epsilon),
            ModKind::BootSoft { epsilon } => (LossName::BootSoft, epsilon),
            ModKind::NonSelfLc { epsilon } => (LossName::NonSelfLc, epsilon),
            ModKind::ProSelfLc => (LossName::Proselflc, 0.0),
        };
        MethodConfig {
            kind: name,
            epsilon,
            at: false,
            temperature: default_temperature(),
            growth: default_growth(),
            inflection: default_inflection(),
            local_trust: default_local(),
            local_on_tempered: true,
        }
    }

    pub fn mod_kind(&self) -> ModKind {
        ModKind::from_name(self.kind, self.epsilon)
    }

    pub fn validate(&self, total_iters: u64) -> Result<()> {
        self.mod_kind()
            .validate()
            .map_err(|e| Error::config("method.epsilon", e.to_string()))?;
        if self.mod_kind().epsilon().is_none() && self.epsilon != 0.0 {
            return Err(Error::config(
                "method.epsilon",
                format!("{} takes no fixed epsilon, got {}", self.mod_kind().name(), self.epsilon),
            ));
        }
        if self.kind == LossName::NonSelfLc {
            return Err(Error::config(
                "method.kind",
                "non_self_lc needs external knowledge and is only available through the library API",
            ));
        }
        if self.at && !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return Err(Error::config(
                "method.temperature",
                format!("must lie in (0, 1] with at = true, got {}", self.temperature),
            ));
        }
        if self.kind == LossName::Proselflc {
            self.trust_at(0, total_iters.max(1))
                .validate()
                .map_err(|e| Error::config("method", e.to_string()))?;
        }
        Ok(())
    }

    pub fn trust_at(&self, iter: u64, total_iters: u64) -> TrustParams {
        TrustParams {
            iter,
            total_iters,
            inflection: self.inflection,
            growth: self.growth,
            local: self.local_trust,
            temperature: self.temperature,
        }
    }
}

/// Momentum buffer: `v ← μ v + g + λ w; w ← w − lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(param_count: usize) -> Self {
        Sgd {
            velocity: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, momentum: f64, weight_decay: f64) {
        for ((w, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = momentum * *v + g + weight_decay * *w;
            *w -= lr * *v;
        }
    }
}

/// Detached per-example objectives for a batch at iteration `iter`.
pub fn batch_objectives(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    method: &MethodConfig,
    trust: &TrustParams,
) -> Result<Vec<Objective>> {
    let ctx = LossContext {
        trust: Some(trust),
        at: method.at,
        teacher: None,
        local_on_tempered: method.local_on_tempered,
    };
    batch
        .iter()
        .map(|&i| {
            let z = model.forward(data.row(i))?;
            let label = OneHot::new(data.given()[i], data.classes())?;
            Objective::new(&method.mod_kind(), label, &z, &ctx)
        })
        .collect()
}

/// Mean batch loss and its gradient with respect to every parameter.
pub fn batch_loss_grad(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    objectives: &[Objective],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    for (&i, obj) in batch.iter().zip(objectives) {
        let x = data.row(i);
        let cache = model.forward_cached(x)?;
        let z = Logits::new(cache.logits().to_vec())?;
        loss += obj.loss(&z)?.total;
        let dz: Vec<f64> = obj.gradient(&z)?.into_iter().map(|g| g / n).collect();
        model.backward(x, &cache, &dz, &mut grad)?;
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub mean_trust: f64,
    pub max_trust: f64,
    pub lr: f64,
}

/// One optimisation step on `batch` at iteration `iter`.
pub fn train_step(
    model: &mut Model,
    sgd: &mut Sgd,
    data: &Dataset,
    batch: &[usize],
    method: &MethodConfig,
    optim: &OptimConfig,
    iter: u64,
) -> Result<StepStats> {
    let trust = method.trust_at(iter, optim.total_iters);
    let objectives = batch_objectives(model, data, batch, method, &trust)?;
    let (loss, grad) = batch_loss_grad(model, data, batch, &objectives)?;
    let lr = optim.lr_at(iter);
    sgd.step(model.params_mut(), &grad, lr, optim.momentum, optim.weight_decay);
    let eps: Vec<f64> = objectives.iter().map(Objective::epsilon).collect();
    Ok(StepStats {
        loss,
        mean_trust: eps.iter().sum::<f64>() / eps.len() as f64,
        max_trust: eps.iter().copied().fold(0.0, f64::max),
        lr,
    })
}

/// Metrics of one data subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetMetrics {
    pub n: usize,
    /// Prediction equals the clean label.
    pub accuracy: f64,
    /// Prediction equals the label given to the learner.
    pub given_accuracy: f64,
    pub conf_top: f64,
    pub conf_all: f64,
    /// Mean prediction entropy in nats.
    pub entropy: f64,
    /// Mean entropy divided by `ln c`.
    pub entropy_norm: f64,
    /// Mean cross entropy against the given labels.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy)]
struct RowEval {
    pred: usize,
    conf_top: f64,
    conf_all: f64,
    entropy: f64,
    loss: f64,
}

fn eval_rows(model: &Model, data: &Dataset) -> Result<Vec<RowEval>> {
    let c = data.classes();
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let cache = model.forward_cached(data.row(i))?;
            let z = cache.logits();
            let p = ProbDist::new(softmax_slice(z, 1.0))?;
            let logp = crate::prob::log_softmax_slice(z, 1.0);
            let entropy = crate::prob::entropy(&p);
            Ok(RowEval {
                pred: argmax_slice(p.as_slice()),
                conf_top: confidence(&p, ConfidenceMode::Top),
                conf_all: (1.0 - entropy / (c as f64).ln()).clamp(0.0, 1.0),
                entropy,
                loss: -logp[data.given()[i]],
            })
        })
        .collect()
}

fn aggregate(rows: &[RowEval], data: &Dataset, subset: &[usize]) -> Option<SubsetMetrics> {
    if subset.is_empty() {
        return None;
    }
    let n = subset.len() as f64;
    let ln_c = (data.classes() as f64).ln();
    let mean = |f: &dyn Fn(usize) -> f64| subset.iter().map(|&i| f(i)).sum::<f64>() / n;
    let entropy = mean(&|i| rows[i].entropy);
    Some(SubsetMetrics {
        n: subset.len(),
        accuracy: mean(&|i| (rows[i].pred == data.clean()[i]) as u8 as f64),
        given_accuracy: mean(&|i| (rows[i].pred == data.given()[i]) as u8 as f64),
        conf_top: mean(&|i| rows[i].conf_top),
        conf_all: mean(&|i| rows[i].conf_all),
        entropy,
        entropy_norm: entropy / ln_c,
        loss: mean(&|i| rows[i].loss),
    })
}

/// Evaluate `model` on the rows of `data` listed in `subset`; `None` when empty.
pub fn evaluate(model: &Model, data: &Dataset, subset: &[usize]) -> Result<Option<SubsetMetrics>> {
    let rows = eval_rows(model, data)?;
    Ok(aggregate(&rows, data, subset))
}

/// One snapshot of the learning dynamics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsRecord {
    pub iter: u64,
    pub lr: f64,
    pub global_trust: f64,
    /// Mean self trust over the iterations since the previous snapshot.
    pub mean_trust: f64,
    /// Mean training loss over the iterations since the previous snapshot.
    pub mean_train_loss: f64,
    pub test: Option<SubsetMetrics>,
    pub clean_train: Option<SubsetMetrics>,
    pub noisy_train: Option<SubsetMetrics>,
    /// Clean rows predicted as their (clean) label.
    pub correct_fitting: Option<f64>,
    /// Corrupted rows predicted as their corrupted label.
    pub wrong_fitting: Option<f64>,
    /// Corrupted rows predicted as their clean label.
    pub semantic_correction: Option<f64>,
}

impl DynamicsRecord {
    pub const SUBSETS: [&'static str; 3] = ["test", "clean_train", "noisy_train"];
    const SUBSET_FIELDS: [&'static str; 8] = [
        "n",
        "accuracy",
        "given_accuracy",
        "conf_top",
        "conf_all",
        "entropy_nats",
        "entropy_norm",
        "loss",
    ];

    pub fn csv_header() -> String {
        let mut cols = vec![
            "iter".to_string(),
            "lr".into(),
            "global_trust".into(),
            "mean_trust".into(),
            "mean_train_loss".into(),
        ];
        for s in Self::SUBSETS {
            for f in Self::SUBSET_FIELDS {
                cols.push(format!("{s}_{f}"));
            }
        }
        cols.extend(["correct_fitting", "wrong_fitting", "semantic_correction"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut cols = vec![
            self.iter.to_string(),
            self.lr.to_string(),
            self.global_trust.to_string(),
            self.mean_trust.to_string(),
            self.mean_train_loss.to_string(),
        ];
        for s in [&self.test, &self.clean_train, &self.noisy_train] {
            match s {
                Some(m) => cols.extend([
                    m.n.to_string(),
                    m.accuracy.to_string(),
                    m.given_accuracy.to_string(),
                    m.conf_top.to_string(),
                    m.conf_all.to_string(),
                    m.entropy.to_string(),
                    m.entropy_norm.to_string(),
                    m.loss.to_string(),
                ]),
                None => {
                    cols.push("0".into());
                    cols.extend(std::iter::repeat_n("NA".to_string(), Self::SUBSET_FIELDS.len() - 1));
                }
            }
        }
        cols.extend([
            opt(self.correct_fitting),
            opt(self.wrong_fitting),
            opt(self.semantic_correction),
        ]);
        cols.join(",")
    }

    /// Training accuracy (against clean labels) and mean conf_all over all training rows.
    pub fn train_accuracy_and_conf_all(&self) -> Option<(f64, f64)> {
        let parts: Vec<&SubsetMetrics> = [&self.clean_train, &self.noisy_train]
            .into_iter()
            .flatten()
            .collect();
        let n: usize = parts.iter().map(|m| m.n).sum();
        if n == 0 {
            return None;
        }
        let w = |f: fn(&SubsetMetrics) -> f64| {
            parts.iter().map(|m| f(m) * m.n as f64).sum::<f64>() / n as f64
        };
        Some((w(|m| m.accuracy), w(|m| m.conf_all)))
    }
}

pub fn write_dynamics_csv<W: Write>(out: &mut W, records: &[DynamicsRecord]) -> std::io::Result<()> {
    writeln!(out, "{}", DynamicsRecord::csv_header())?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub method: MethodConfig,
    pub optim: OptimConfig,
    /// Seeds initialisation (stream 0) and per-epoch shuffling (stream 1).
    pub seed: u64,
    /// Snapshot cadence in iterations; 0 disables snapshots.
    pub snapshot_every: u64,
}

pub struct TrainOutput {
    pub model: Model,
    pub dynamics: Vec<DynamicsRecord>,
}

/// Snapshot the dynamics of `model` at iteration `iter`.
#[allow(clippy::too_many_arguments)]
pub fn snapshot(
    model: &Model,
    train: &Dataset,
    test: &Dataset,
    iter: u64,
    lr: f64,
    global: f64,
    mean_trust: f64,
    mean_train_loss: f64,
) -> Result<DynamicsRecord> {
    let train_rows = eval_rows(model, train)?;
    let test_rows = eval_rows(model, test)?;
    let (noisy, clean): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| train.is_flipped(i));
    let all_test: Vec<usize> = (0..test.len()).collect();
    let clean_train = aggregate(&train_rows, train, &clean);
    let noisy_train = aggregate(&train_rows, train, &noisy);
    Ok(DynamicsRecord {
        iter,
        lr,
        global_trust: global,
        mean_trust,
        mean_train_loss,
        test: aggregate(&test_rows, test, &all_test),
        correct_fitting: clean_train.map(|m| m.accuracy),
        wrong_fitting: noisy_train.map(|m| m.given_accuracy),
        semantic_correction: noisy_train.map(|m| m.accuracy),
        clean_train,
        noisy_train,
    })
}

/// Train for `Γ` iterations over seeded, per-epoch shuffled minibatches.
///
/// A snapshot is taken after every `snapshot_every`-th iteration and after the
/// last one. `model` is the starting point.
pub fn train(mut model: Model, spec: &TrainSpec, train_set: &Dataset, test_set: &Dataset) -> Result<TrainOutput> {
    spec.optim.validate()?;
    spec.method.validate(spec.optim.total_iters)?;
    if train_set.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if train_set.dim() != model.config().input_dim || train_set.classes() != model.config().classes {
        return Err(Error::input("dataset shape does not match the model"));
    }
    let total = spec.optim.total_iters;
    let mut sgd = Sgd::new(model.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut dynamics = Vec::new();
    let (mut trust_sum, mut loss_sum, mut window) = (0.0, 0.0, 0u64);

    for iter in 0..total {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + spec.optim.batch_size).min(order.len());
        let batch = &order[cursor..end];
        cursor = end;
        let stats = train_step(&mut model, &mut sgd, train_set, batch, &spec.method, &spec.optim, iter)?;
        trust_sum += stats.mean_trust;
        loss_sum += stats.loss;
        window += 1;

        let done = iter + 1;
        let due = spec.snapshot_every > 0 && done % spec.snapshot_every == 0;
        if due || (done == total && spec.snapshot_every > 0) {
            let g = global_trust(&spec.method.trust_at(done.min(total), total))?;
            dynamics.push(snapshot(
                &model,
                train_set,
                test_set,
                done,
                stats.lr,
                g,
                trust_sum / window as f64,
                loss_sum / window as f64,
            )?);
            trust_sum = 0.0;
            loss_sum = 0.0;
            window = 0;
        }
    }
    Ok(TrainOutput { model, dynamics })
}
