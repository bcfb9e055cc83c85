//! Feature tables with clean and observed labels, plus Gaussian blob generation.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::calibration::csv_error;
use crate::error::{Error, Result};
use crate::noise::CorruptionRecord;

/// Rows of `dim` features, each with a clean label and the label given to the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    clean: Vec<usize>,
    given: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, clean: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("feature dimension must be >= 1"));
        }
        if classes < 2 {
            return Err(Error::param("class count must be >= 2"));
        }
        if features.len() != dim * clean.len() {
            return Err(Error::input(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                clean.len()
            )));
        }
        if let Some(bad) = clean.iter().find(|&&y| y >= classes) {
            return Err(Error::input(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            dim,
            classes,
            features,
            given: clean.clone(),
            clean,
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn clean(&self) -> &[usize] {
        &self.clean
    }

    pub fn given(&self) -> &[usize] {
        &self.given
    }

    pub fn is_flipped(&self, i: usize) -> bool {
        self.clean[i] != self.given[i]
    }

    /// Replace observed labels with the corrupted ones.
    pub fn apply_corruption(&mut self, records: &[CorruptionRecord]) -> Result<()> {
        if records.len() != self.len() {
            return Err(Error::input(format!(
                "{} corruption records for {} rows",
                records.len(),
                self.len()
            )));
        }
        for r in records {
            if r.clean != self.clean[r.index] || r.given >= self.classes {
                return Err(Error::input(format!("corruption record {} does not match data", r.index)));
            }
            self.given[r.index] = r.given;
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a digest of features and clean labels.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.dim as u64);
        for &v in &self.features {
            h.write_u64(v.to_bits());
        }
        for &y in &self.clean {
            h.write_u64(y as u64);
        }
        h.finish()
    }

    /// Write `f_0,...,f_{d-1},clean`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim).map(|j| format!("f_{j}")).collect();
        writeln!(out, "{},clean", header.join(","))?;
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", self.clean[i])?;
        }
        Ok(())
    }

    /// Read `f_0,...,f_{d-1},clean`; the class count is `classes`.
    pub fn read_csv(path: &Path, classes: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let dim = header.len().saturating_sub(1);
        let ok = dim >= 1
            && header.get(dim) == Some("clean")
            && (0..dim).all(|j| header.get(j) == Some(format!("f_{j}").as_str()));
        if !ok {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "expected header f_0,...,f_{d-1},clean".into(),
            });
        }
        let mut features = Vec::new();
        let mut clean = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            for j in 0..dim {
                let v: f64 = record[j]
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("bad feature `{}`", &record[j])))?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite feature `{}`", &record[j])));
                }
                features.push(v);
            }
            let y: usize = record[dim]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad label `{}`", &record[dim])))?;
            if y >= classes {
                return Err(bad(format!("label {y} out of range for {classes} classes")));
            }
            clean.push(y);
        }
        Dataset::new(dim, classes, features, clean)
    }

    /// Split off the last `n` rows.
    pub fn split_tail(mut self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::input(format!("cannot hold out {n} of {} rows", self.len())));
        }
        let keep = self.len() - n;
        let tail_features = self.features.split_off(keep * self.dim);
        let tail_clean = self.clean.split_off(keep);
        self.given.truncate(keep);
        let tail = Dataset::new(self.dim, self.classes, tail_features, tail_clean)?;
        Ok((self, tail))
    }
}

/// Parameters of the Gaussian blob generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub dim: usize,
    pub classes: usize,
    /// Standard deviation of every coordinate around its class mean.
    pub spread: f64,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    pub seed: u64,
}

/// Class means: `separation` times orthonormal directions obtained from a
/// seeded Gaussian matrix, i.e. the vertices of a scaled, randomly rotated
/// simplex. When `classes > dim` the directions are only unit-norm.
pub fn blob_means(spec: &BlobSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for k in 0..spec.classes {
        let mut v: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if k < spec.dim {
            for d in &dirs {
                let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        dirs.push(v);
    }
    dirs.into_iter()
        .map(|d| d.into_iter().map(|a| a * spec.separation).collect())
        .collect()
}

/// `n` class-balanced rows drawn around `blob_means(spec)`; `stream` selects an
/// independent ChaCha stream so train and test sets never share draws.
pub fn generate_blobs(spec: &BlobSpec, n: usize, stream: u64) -> Result<Dataset> {
    if spec.dim == 0 || spec.classes < 2 {
        return Err(Error::param("blobs need dim >= 1 and classes >= 2"));
    }
    if !(spec.spread.is_finite() && spec.spread >= 0.0) {
        return Err(Error::param(format!("spread must be >= 0, got {}", spec.spread)));
    }
    let means = blob_means(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream + 1);
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut clean = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % spec.classes;
        for &m in &means[y] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(m + spec.spread * noise);
        }
        clean.push(y);
    }
    Dataset::new(spec.dim, spec.classes, features, clean)
}

/// 64-bit FNV-1a, stable across platforms and toolchains.
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}
