#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use selflc::prob::softmax;
use selflc::{Logits, OneHot, ProbDist};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian logits with a random scale; large scales give near one-hot predictions.
pub fn logits(rng: &mut ChaCha8Rng, c: usize) -> Logits {
    let scale = [0.5, 1.0, 3.0, 8.0][rng.random_range(0..4)];
    Logits::new(
        (0..c)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .unwrap()
}

pub fn dist(rng: &mut ChaCha8Rng, c: usize) -> ProbDist {
    softmax(&logits(rng, c), 1.0).unwrap()
}

pub fn label(rng: &mut ChaCha8Rng, c: usize) -> OneHot {
    OneHot::new(rng.random_range(0..c), c).unwrap()
}

/// `max_j |a_j - b_j| / max(‖a‖∞, ‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf(a).max(inf(b)).max(floor)
}

pub const FD_STEP: f64 = 1e-6;

/// Every modification kind with the context it is checked under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Case {
    Cce,
    Ls,
    Cp,
    BootSoft,
    BootSoftAt,
    NonSelfLc,
    ProSelfLc,
    ProSelfLcAt,
}

impl Case {
    pub const ALL: [Case; 8] = [
        Case::Cce,
        Case::Ls,
        Case::Cp,
        Case::BootSoft,
        Case::BootSoftAt,
        Case::NonSelfLc,
        Case::ProSelfLc,
        Case::ProSelfLcAt,
    ];

    /// The kind with mixing weight `eps` (ignored where it does not apply) and the AT flag.
    pub fn kind(self, eps: f64) -> (selflc::ModKind, bool) {
        use selflc::ModKind;
        match self {
            Case::Cce => (ModKind::Cce, false),
            Case::Ls => (ModKind::Ls { epsilon: eps }, false),
            Case::Cp => (ModKind::Cp { epsilon: eps }, false),
            Case::BootSoft => (ModKind::BootSoft { epsilon: eps }, false),
            Case::BootSoftAt => (ModKind::BootSoft { epsilon: eps }, true),
            Case::NonSelfLc => (ModKind::NonSelfLc { epsilon: eps }, false),
            Case::ProSelfLc => (ModKind::ProSelfLc, false),
            Case::ProSelfLcAt => (ModKind::ProSelfLc, true),
        }
    }
}

/// A randomly drawn objective for `case` together with the logits it was built at.
pub fn draw_objective(rng: &mut ChaCha8Rng, case: Case, c: usize) -> (selflc::Objective, Logits) {
    use selflc::{LocalTrust, LossContext, Objective, TrustParams};
    let z = logits(rng, c);
    let q = label(rng, c);
    let eps = rng.random_range(0.0..0.95);
    let teacher = dist(rng, c);
    let local = [LocalTrust::ConstantOne, LocalTrust::ConfTop, LocalTrust::ConfAll][rng.random_range(0..3)];
    let trust = TrustParams::new(1000, rng.random_range(4.0..20.0), local)
        .at_iter(rng.random_range(0..=1000))
        .with_temperature(rng.random_range(0.2..1.0));
    let (kind, at) = case.kind(eps);
    let ctx = LossContext {
        trust: Some(&trust),
        at,
        teacher: Some(&teacher),
        local_on_tempered: true,
    };
    (Objective::new(&kind, q, &z, &ctx).unwrap(), z)
}

/// Relative error between the analytic logit gradient and central differences
/// of the loss, with the target held fixed.
pub fn logit_fd_error(obj: &selflc::Objective, z: &Logits) -> f64 {
    let analytic = obj.gradient(z).unwrap();
    let base = z.as_slice();
    let numeric: Vec<f64> = (0..base.len())
        .map(|j| {
            let shifted = |d: f64| {
                let mut v = base.to_vec();
                v[j] += d;
                obj.loss(&Logits::new(v).unwrap()).unwrap().total
            };
            (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect();
    rel_err(&analytic, &numeric, 1e-3)
}

/// Relative error of the backpropagated parameter gradient of a mean batch
/// loss against central differences over every parameter.
pub fn network_fd_error(rng: &mut ChaCha8Rng, case: Case, hidden: usize, activation: selflc::model::Activation) -> f64 {
    use selflc::data::Dataset;
    use selflc::model::{Model, ModelConfig};
    use selflc::train::batch_loss_grad;
    use selflc::{LossContext, Objective, TrustParams};

    let (d, c, n) = (4, 3, 5);
    let cfg = ModelConfig {
        input_dim: d,
        hidden_dim: hidden,
        classes: c,
        weight_init_scale: 1.5,
        activation,
    };
    let model = Model::init(cfg, rng.random()).unwrap();
    let features: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let data = Dataset::new(d, c, features, labels).unwrap();
    let batch: Vec<usize> = (0..n).collect();

    let eps = rng.random_range(0.0..0.95);
    let teacher = dist(rng, c);
    let trust = TrustParams::new(100, 10.0, selflc::LocalTrust::ConfAll)
        .at_iter(rng.random_range(0..=100))
        .with_temperature(0.5);
    let (kind, at) = case.kind(eps);
    let ctx = LossContext {
        trust: Some(&trust),
        at,
        teacher: Some(&teacher),
        local_on_tempered: true,
    };
    let objectives: Vec<Objective> = batch
        .iter()
        .map(|&i| {
            let z = model.forward(data.row(i)).unwrap();
            Objective::new(&kind, OneHot::new(data.given()[i], c).unwrap(), &z, &ctx).unwrap()
        })
        .collect();
    let (_, analytic) = batch_loss_grad(&model, &data, &batch, &objectives).unwrap();
    let numeric: Vec<f64> = (0..model.params().len())
        .map(|k| {
            let loss_at = |dv: f64| {
                let mut m = model.clone();
                m.params_mut()[k] += dv;
                batch_loss_grad(&m, &data, &batch, &objectives).unwrap().0
            };
            (loss_at(FD_STEP) - loss_at(-FD_STEP)) / (2.0 * FD_STEP)
        })
        .collect();
    rel_err(&analytic, &numeric, 1e-3)
}

/// Largest decomposition residual of `family` over `draws` random `(p, q, ε, c)`.
pub fn decomposition_worst(family: selflc::loss::Family, draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..draws)
        .map(|_| {
            let c = r.random_range(2..=10);
            let p = dist(&mut r, c);
            let q = label(&mut r, c);
            let eps = r.random_range(0.0..1.0);
            selflc::loss::decomposition_check(family, &q, &p, eps).unwrap()
        })
        .fold(0.0, f64::max)
}

/// Largest `|H(a,p) - D(a‖p) - H(a)|` over random pairs.
pub fn cross_entropy_identity_worst(draws: usize, seed: u64) -> f64 {
    use selflc::prob::{cross_entropy, entropy, kl_divergence};
    let mut r = rng(seed);
    (0..draws)
        .map(|_| {
            let c = r.random_range(2..=10);
            let a = dist(&mut r, c);
            let p = dist(&mut r, c);
            (cross_entropy(&a, &p).unwrap() - kl_divergence(&a, &p).unwrap() - entropy(&a)).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest gap between the non-self LC loss with teacher `t` and
/// `(1-ε) H(q,p) + ε D(t‖p) + ε H(t)`.
pub fn kd_as_lc_worst(draws: usize, seed: u64) -> f64 {
    use selflc::loss::loss_value;
    use selflc::prob::{cross_entropy, entropy, kl_divergence, softmax};
    use selflc::{LossContext, ModKind};
    let mut r = rng(seed);
    (0..draws)
        .map(|_| {
            let c = r.random_range(2..=10);
            // The reference side clamps ln p at 1e-12 while the loss does not,
            // so draw predictions where the clamp is inactive.
            let (z, p) = loop {
                let z = logits(&mut r, c);
                let p = softmax(&z, 1.0).unwrap();
                if p.as_slice().iter().all(|&v| v > selflc::prob::LOG_FLOOR) {
                    break (z, p);
                }
            };
            let t = dist(&mut r, c);
            let q = label(&mut r, c);
            let eps = r.random_range(0.0..1.0);
            let ctx = LossContext {
                teacher: Some(&t),
                ..LossContext::default()
            };
            let loss = loss_value(&ModKind::NonSelfLc { epsilon: eps }, q, &z, &ctx).unwrap().total;
            let expected = (1.0 - eps) * cross_entropy(&q.to_dist(), &p).unwrap()
                + eps * kl_divergence(&t, &p).unwrap()
                + eps * entropy(&t);
            (loss - expected).abs()
        })
        .fold(0.0, f64::max)
}

/// Rows whose top confidence `s` is the probability that the label equals the
/// argmax, i.e. perfectly calibrated in expectation. Returned as logits `ln p`.
pub fn calibrated_logits(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<(Logits, usize)> {
    (0..n)
        .map(|_| {
            let s: f64 = rng.random_range(1.0 / c as f64 + 0.05..0.999);
            let top = rng.random_range(0..c);
            let rest = (1.0 - s) / (c - 1) as f64;
            let z = (0..c).map(|j| if j == top { s.ln() } else { rest.ln() }).collect();
            let y = if rng.random_bool(s) {
                top
            } else {
                let k = rng.random_range(0..c - 1);
                if k >= top {
                    k + 1
                } else {
                    k
                }
            };
            (Logits::new(z).unwrap(), y)
        })
        .collect()
}

pub fn predictions(rows: &[(Logits, usize)], temperature: f64) -> selflc::calibration::PredictionSet {
    selflc::calibration::PredictionSet::new(
        rows.iter()
            .map(|(z, y)| (softmax(z, temperature).unwrap(), *y))
            .collect(),
    )
    .unwrap()
}

/// `1/(2m) + 3σ` with `σ = ½·√(m/n)`, a Bernoulli bound on the summed per-bin
/// sampling error.
pub fn calibrated_ece_bound(n: usize, m: usize) -> f64 {
    1.0 / (2.0 * m as f64) + 3.0 * 0.5 * (m as f64 / n as f64).sqrt()
}

/// Draws where an LS or Boot-soft target equals the one-hot label, or where
/// the unclipped CP target `(1-ε)q - εp` is not negative off the label.
pub fn modified_target_violations(draws: usize, seed: u64) -> usize {
    use selflc::target::build_target;
    use selflc::ModKind;
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..draws {
        let c = r.random_range(2..=10);
        let q = label(&mut r, c);
        let p = dist(&mut r, c);
        let eps = r.random_range(0.05..0.95);
        let onehot = q.to_dist();
        for kind in [ModKind::Ls { epsilon: eps }, ModKind::BootSoft { epsilon: eps }] {
            if build_target(&kind, &q, Some(&p), None).unwrap().dist == onehot {
                bad += 1;
            }
        }
        let negative_off_label = p
            .as_slice()
            .iter()
            .enumerate()
            .filter(|&(j, pj)| j != q.class() && *pj > 0.0)
            .all(|(_, pj)| -eps * pj < 0.0);
        if !negative_off_label {
            bad += 1;
        }
    }
    bad
}

/// Draws where sharpening `p` (temperature 0.8) fails to raise the LS and CP
/// second terms or fails to lower the LC one.
pub fn sharpening_violations(draws: usize, seed: u64) -> usize {
    use selflc::loss::{second_term, Family};
    let mut r = rng(seed);
    let (mut checked, mut bad) = (0, 0);
    while checked < draws {
        let c = r.random_range(2..=10);
        let z = logits(&mut r, c);
        let max = z.as_slice().iter().fold(f64::MIN, |m, v| m.max(*v));
        let min = z.as_slice().iter().fold(f64::MAX, |m, v| m.min(*v));
        // Uniform p has nothing to sharpen; very wide logits are already
        // one-hot in double precision.
        if max - min < 1e-6 || max - min > 20.0 {
            continue;
        }
        let p = softmax(&z, 1.0).unwrap();
        let sharp = softmax(&z, 0.8).unwrap();
        let eps = r.random_range(0.05..0.95);
        let d = |f| second_term(f, &sharp, eps).unwrap() - second_term(f, &p, eps).unwrap();
        if !(d(Family::Ls) > 0.0 && d(Family::Cp) > 0.0 && d(Family::Lc) < 0.0) {
            bad += 1;
        }
        checked += 1;
    }
    bad
}

/// Draws where LS or clipped-CP targets (ε < 0.5) change the semantic class
/// or give unequal mass to the other classes.
pub fn other_class_violations(draws: usize, seed: u64) -> usize {
    use selflc::target::build_target;
    use selflc::ModKind;
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..draws {
        let c = r.random_range(2..=10);
        let q = label(&mut r, c);
        let p = dist(&mut r, c);
        let eps = r.random_range(0.0..0.5);
        let ls = build_target(&ModKind::Ls { epsilon: eps }, &q, None, None).unwrap();
        let cp = build_target(&ModKind::Cp { epsilon: eps }, &q, Some(&p), None).unwrap();
        let others_ok = ls
            .dist
            .as_slice()
            .iter()
            .zip(cp.dist.as_slice())
            .enumerate()
            .filter(|&(j, _)| j != q.class())
            .all(|(_, (a, b))| (a - eps / c as f64).abs() < 1e-15 && *b == 0.0);
        if !others_ok || ls.semantic_class != q.class() || cp.semantic_class != q.class() {
            bad += 1;
        }
    }
    bad
}
