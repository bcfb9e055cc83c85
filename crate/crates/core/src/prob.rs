//! Probability-vector math over `c` classes.
//!
//! Everything is `f64`. Logarithms of probabilities are natural logs taken on
//! `max(p, LOG_FLOOR)` so that exact zeros in one-hot targets never produce
//! `-inf`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Lower clamp applied before taking the log of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on `Σ p = 1` accepted by [`ProbDist::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[inline]
pub(crate) fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Unnormalised scores `z` produced by a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::input(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite logit {bad}")));
        }
        Ok(Logits(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `log softmax(z)`, computed with a max shift.
    pub fn log_softmax(&self) -> Vec<f64> {
        log_softmax_slice(&self.0, 1.0)
    }
}

/// A normalised distribution over `c` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::input(format!(
                "distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::input(format!("invalid probability entry {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::input(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ProbDist(probs))
    }

    /// Caller guarantees the invariants (used for outputs of exact constructions).
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() >= 2);
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        ProbDist(probs)
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::param(format!("class count must be >= 2, got {classes}")));
        }
        Ok(ProbDist(vec![1.0 / classes as f64; classes]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn argmax(&self) -> usize {
        argmax_index(self)
    }
}

impl TryFrom<Vec<f64>> for ProbDist {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbDist::new(v)
    }
}

impl From<ProbDist> for Vec<f64> {
    fn from(p: ProbDist) -> Self {
        p.0
    }
}

/// An annotated class as a one-hot distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    class: usize,
    classes: usize,
}

impl OneHot {
    pub fn new(class: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::param(format!("class count must be >= 2, got {classes}")));
        }
        if class >= classes {
            return Err(Error::input(format!(
                "class index {class} out of range for {classes} classes"
            )));
        }
        Ok(OneHot { class, classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn to_dist(&self) -> ProbDist {
        let mut v = vec![0.0; self.classes];
        v[self.class] = 1.0;
        ProbDist(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Largest class probability.
    Top,
    /// `1 - H(p) / ln c`.
    All,
}

impl ConfidenceMode {
    pub const BOTH: [ConfidenceMode; 2] = [ConfidenceMode::Top, ConfidenceMode::All];

    pub fn name(self) -> &'static str {
        match self {
            ConfidenceMode::Top => "top",
            ConfidenceMode::All => "all",
        }
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "temperature must be positive and finite, got {temperature}"
        )))
    }
}

pub(crate) fn log_softmax_slice(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = z.iter().map(|v| (v - max) / temperature).collect();
    let lse = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|s| s - lse).collect()
}

pub(crate) fn softmax_slice(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = z.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= total);
    e
}

/// Temperature-scaled softmax, `p_T(j) = exp(z_j/T) / Σ_v exp(z_v/T)`.
pub fn softmax(z: &Logits, temperature: f64) -> Result<ProbDist> {
    check_temperature(temperature)?;
    Ok(ProbDist(softmax_slice(z.as_slice(), temperature)))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ProbDist) -> f64 {
    let h: f64 = p
        .as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    h.max(0.0)
}

/// `H(target, p) = -Σ target_j ln max(p_j, LOG_FLOOR)`.
pub fn cross_entropy(target: &ProbDist, p: &ProbDist) -> Result<f64> {
    check_dims(target.classes(), p.classes())?;
    Ok(target
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(&t, &q)| -t * clamped_ln(q))
        .sum())
}

/// `D_KL(a || b)` by direct summation over the support of `a`, floored at 0.
pub fn kl_divergence(a: &ProbDist, b: &ProbDist) -> Result<f64> {
    check_dims(a.classes(), b.classes())?;
    let d: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(&x, _)| x > 0.0)
        .map(|(&x, &y)| x * (x.ln() - clamped_ln(y)))
        .sum();
    Ok(d.max(0.0))
}

pub fn confidence(p: &ProbDist, mode: ConfidenceMode) -> f64 {
    match mode {
        ConfidenceMode::Top => p.as_slice().iter().copied().fold(0.0, f64::max),
        ConfidenceMode::All => {
            let c = p.classes() as f64;
            (1.0 - entropy(p) / c.ln()).clamp(0.0, 1.0)
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_index(p: &ProbDist) -> usize {
    argmax_slice(p.as_slice())
}

pub(crate) fn argmax_slice(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
