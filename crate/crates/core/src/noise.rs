//! Seeded symmetric and pairwise-asymmetric label corruption.
//!
//! All randomness comes from ChaCha8 seeded with the plan's 64-bit seed.
//! Class draws use `u32` ranges only, so a corruption file is reproducible
//! from `(labels, plan)` on any platform.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePlan {
    pub kind: NoiseKind,
    /// Noise rate `r`.
    pub rate: f64,
    /// Class pairs `(A, B)` swapped by asymmetric noise.
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
    pub seed: u64,
    /// Symmetric noise flips exactly `⌊r·n⌋` rows instead of each row with probability `r`.
    #[serde(default)]
    pub exact_count: bool,
}

impl Default for NoisePlan {
    fn default() -> Self {
        NoisePlan {
            kind: NoiseKind::Symmetric,
            rate: 0.0,
            pairs: Vec::new(),
            seed: 0,
            exact_count: false,
        }
    }
}

impl NoisePlan {
    pub fn apply(&self, labels: &[usize], classes: usize) -> Result<Vec<CorruptionRecord>> {
        match self.kind {
            NoiseKind::Symmetric if self.exact_count => {
                inject_symmetric_exact(labels, classes, self.rate, self.seed)
            }
            NoiseKind::Symmetric => inject_symmetric(labels, classes, self.rate, self.seed),
            NoiseKind::Asymmetric => {
                inject_asymmetric(labels, classes, self.rate, &self.pairs, self.seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionRecord {
    pub index: usize,
    pub clean: usize,
    pub given: usize,
    pub flipped: bool,
}

fn check_common(labels: &[usize], classes: usize, rate: f64) -> Result<()> {
    if classes < 2 {
        return Err(Error::param(format!("class count must be >= 2, got {classes}")));
    }
    if classes > u32::MAX as usize {
        return Err(Error::param("class count does not fit in u32"));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param(format!("noise rate must lie in [0, 1], got {rate}")));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::input(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn other_class(rng: &mut ChaCha8Rng, clean: usize, classes: usize) -> usize {
    let draw = rng.random_range(0..(classes as u32 - 1)) as usize;
    if draw >= clean {
        draw + 1
    } else {
        draw
    }
}

fn unflipped(labels: &[usize]) -> Vec<CorruptionRecord> {
    labels
        .iter()
        .enumerate()
        .map(|(index, &y)| CorruptionRecord {
            index,
            clean: y,
            given: y,
            flipped: false,
        })
        .collect()
}

/// First `k` entries of a seeded Fisher–Yates shuffle of `pool`.
fn choose(rng: &mut ChaCha8Rng, mut pool: Vec<usize>, k: usize) -> Vec<usize> {
    let n = pool.len();
    for i in 0..k.min(n) {
        let j = i + rng.random_range(0..(n - i) as u32) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Each row independently moves, with probability `rate`, to a class drawn
/// uniformly from the other `c - 1`.
pub fn inject_symmetric(
    labels: &[usize],
    classes: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<CorruptionRecord>> {
    check_common(labels, classes, rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(labels
        .iter()
        .enumerate()
        .map(|(index, &clean)| {
            let flip = rng.random_bool(rate);
            let given = if flip {
                other_class(&mut rng, clean, classes)
            } else {
                clean
            };
            CorruptionRecord {
                index,
                clean,
                given,
                flipped: flip,
            }
        })
        .collect())
}

/// Exactly `⌊rate·n⌋` uniformly chosen rows move to another class.
pub fn inject_symmetric_exact(
    labels: &[usize],
    classes: usize,
    rate: f64,
    seed: u64,
) -> Result<Vec<CorruptionRecord>> {
    check_common(labels, classes, rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = (rate * labels.len() as f64).floor() as usize;
    let mut chosen = choose(&mut rng, (0..labels.len()).collect(), k);
    chosen.sort_unstable();
    let mut records = unflipped(labels);
    for i in chosen {
        let r = &mut records[i];
        r.given = other_class(&mut rng, r.clean, classes);
        r.flipped = true;
    }
    Ok(records)
}

/// For each pair `(A, B)`, exactly `⌊rate·n_A⌋` A-rows become B and
/// `⌊rate·n_B⌋` B-rows become A.
pub fn inject_asymmetric(
    labels: &[usize],
    classes: usize,
    rate: f64,
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<CorruptionRecord>> {
    check_common(labels, classes, rate)?;
    let mut seen = BTreeSet::new();
    for &(a, b) in pairs {
        if a >= classes || b >= classes {
            return Err(Error::param(format!("pair ({a}, {b}) out of range for {classes} classes")));
        }
        if a == b || !seen.insert(a) || !seen.insert(b) {
            return Err(Error::param(format!("noise pairs overlap at ({a}, {b})")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = unflipped(labels);
    for &(a, b) in pairs {
        for (from, to) in [(a, b), (b, a)] {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == from).collect();
            let k = (rate * rows.len() as f64).floor() as usize;
            for i in choose(&mut rng, rows, k) {
                records[i].given = to;
                records[i].flipped = true;
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStats {
    pub overall: f64,
    /// Flip rate per clean class; 0 for classes without rows.
    pub per_class: Vec<f64>,
}

pub fn noise_stats(records: &[CorruptionRecord], classes: usize) -> Result<NoiseStats> {
    if records.is_empty() {
        return Err(Error::input("no corruption records"));
    }
    let mut totals = vec![0usize; classes];
    let mut flips = vec![0usize; classes];
    for r in records {
        if r.clean >= classes {
            return Err(Error::input(format!("class {} out of range", r.clean)));
        }
        totals[r.clean] += 1;
        flips[r.clean] += r.flipped as usize;
    }
    let flipped: usize = flips.iter().sum();
    Ok(NoiseStats {
        overall: flipped as f64 / records.len() as f64,
        per_class: totals
            .iter()
            .zip(&flips)
            .map(|(&t, &f)| if t == 0 { 0.0 } else { f as f64 / t as f64 })
            .collect(),
    })
}

/// `counts[clean][given]`.
pub fn transition_counts(records: &[CorruptionRecord], classes: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; classes]; classes];
    for r in records {
        counts[r.clean][r.given] += 1;
    }
    counts
}

/// Write `index,clean,given,flipped` preceded by a `# kind=..., r=..., seed=...` line.
pub fn write_corruption_csv<W: Write>(
    out: &mut W,
    plan: &NoisePlan,
    records: &[CorruptionRecord],
) -> std::io::Result<()> {
    writeln!(out, "# kind={}, r={}, seed={}", plan.kind, plan.rate, plan.seed)?;
    writeln!(out, "index,clean,given,flipped")?;
    for r in records {
        writeln!(out, "{},{},{},{}", r.index, r.clean, r.given, r.flipped as u8)?;
    }
    Ok(())
}
