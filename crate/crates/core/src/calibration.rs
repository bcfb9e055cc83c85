//! Dataset-level accuracy, confidence, GSCE and the binned ECE estimator.

use std::io::Write;
use std::path::Path;

use crate::error::{check_dims, Error, Result};
use crate::prob::{argmax_index, confidence, softmax, ConfidenceMode, Logits, ProbDist};

/// Predictions paired with their true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    rows: Vec<(ProbDist, usize)>,
    classes: usize,
}

impl PredictionSet {
    pub fn new(rows: Vec<(ProbDist, usize)>) -> Result<Self> {
        let classes = rows
            .first()
            .map(|(p, _)| p.classes())
            .ok_or_else(|| Error::input("prediction set is empty"))?;
        for (p, y) in &rows {
            check_dims(classes, p.classes())?;
            if *y >= classes {
                return Err(Error::input(format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
        }
        Ok(PredictionSet { rows, classes })
    }

    pub fn rows(&self) -> &[(ProbDist, usize)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// One ECE bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EceBin {
    pub count: usize,
    /// Mean confidence of the rows in the bin (0 when empty).
    pub conf_mean: f64,
    /// Fraction of correct rows in the bin (0 when empty).
    pub accuracy: f64,
    /// `conf_mean - accuracy`.
    pub signed_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EceReport {
    pub ece: f64,
    pub bins: Vec<EceBin>,
    pub m: usize,
    pub mode: ConfidenceMode,
}

fn correct(p: &ProbDist, y: usize) -> bool {
    argmax_index(p) == y
}

pub fn accuracy(ps: &PredictionSet) -> f64 {
    let hits = ps.rows.iter().filter(|(p, y)| correct(p, *y)).count();
    hits as f64 / ps.len() as f64
}

pub fn mean_confidence(ps: &PredictionSet, mode: ConfidenceMode) -> f64 {
    ps.rows.iter().map(|(p, _)| confidence(p, mode)).sum::<f64>() / ps.len() as f64
}

/// Signed miscalibration `conf(X) - accu(X)`; positive means over-confident.
pub fn gsce(ps: &PredictionSet, mode: ConfidenceMode) -> f64 {
    mean_confidence(ps, mode) - accuracy(ps)
}

/// Bin of `x` among `m` equal-width bins `(i/m, (i+1)/m]`; `0` goes to bin 0.
pub fn bin_index(x: f64, m: usize) -> usize {
    let mf = m as f64;
    let edge = |i: usize| i as f64 / mf;
    let mut b = ((x * mf).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
    while b > 0 && x <= edge(b) {
        b -= 1;
    }
    while b + 1 < m && x > edge(b + 1) {
        b += 1;
    }
    b
}

/// Binned ECE keyed on `conf_top`.
pub fn ece(ps: &PredictionSet, m: usize) -> Result<EceReport> {
    ece_with_mode(ps, m, ConfidenceMode::Top)
}

/// Binned ECE with `mode` used both as the binning key and the bin confidence.
pub fn ece_with_mode(ps: &PredictionSet, m: usize, mode: ConfidenceMode) -> Result<EceReport> {
    if m == 0 {
        return Err(Error::param("bin count must be >= 1"));
    }
    let mut counts = vec![0usize; m];
    let mut conf_sums = vec![0.0; m];
    let mut hits = vec![0usize; m];
    for (p, y) in &ps.rows {
        let conf = confidence(p, mode);
        let b = bin_index(conf, m);
        counts[b] += 1;
        conf_sums[b] += conf;
        if correct(p, *y) {
            hits[b] += 1;
        }
    }
    let n = ps.len() as f64;
    let mut total = 0.0;
    let bins = (0..m)
        .map(|b| {
            if counts[b] == 0 {
                return EceBin {
                    count: 0,
                    conf_mean: 0.0,
                    accuracy: 0.0,
                    signed_gap: 0.0,
                };
            }
            let k = counts[b] as f64;
            let conf_mean = conf_sums[b] / k;
            let acc = hits[b] as f64 / k;
            let signed_gap = conf_mean - acc;
            total += signed_gap.abs() * k / n;
            EceBin {
                count: counts[b],
                conf_mean,
                accuracy: acc,
                signed_gap,
            }
        })
        .collect();
    Ok(EceReport {
        ece: total,
        bins,
        m,
        mode,
    })
}

/// One row of a temperature sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureRow {
    pub temperature: f64,
    pub mode: ConfidenceMode,
    pub ece: f64,
    pub gsce: f64,
    pub accuracy: f64,
}

/// Re-softmax every logit row at each temperature and evaluate ECE and GSCE.
pub fn temperature_sweep_ece(
    rows: &[(Logits, usize)],
    temps: &[f64],
    mode: ConfidenceMode,
    m: usize,
) -> Result<Vec<TemperatureRow>> {
    temps
        .iter()
        .map(|&t| {
            let preds = rows
                .iter()
                .map(|(z, y)| Ok((softmax(z, t)?, *y)))
                .collect::<Result<Vec<_>>>()?;
            let ps = PredictionSet::new(preds)?;
            Ok(TemperatureRow {
                temperature: t,
                mode,
                ece: ece_with_mode(&ps, m, mode)?.ece,
                gsce: gsce(&ps, mode),
                accuracy: accuracy(&ps),
            })
        })
        .collect()
}

/// Read a logits file with header `z_0,...,z_{c-1},label`.
pub fn read_logits_csv(path: &Path) -> Result<Vec<(Logits, usize)>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let c = header.len().saturating_sub(1);
    let header_ok = c >= 2
        && header.get(c) == Some("label")
        && (0..c).all(|j| header.get(j) == Some(format!("z_{j}").as_str()));
    if !header_ok {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header z_0,...,z_{c-1},label with c >= 2".into(),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let z = (0..c)
            .map(|j| {
                record[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad logit `{}` in column z_{j}", &record[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        let label: usize = record[c]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad label `{}`", &record[c])))?;
        if label >= c {
            return Err(bad(format!("label {label} out of range for {c} classes")));
        }
        let z = Logits::new(z).map_err(|e| bad(e.to_string()))?;
        rows.push((z, label));
    }
    if rows.is_empty() {
        return Err(Error::input(format!("{} has no data rows", path.display())));
    }
    Ok(rows)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Write the bins of a report as `bin,count,conf,accu,gap`.
pub fn write_ece_bins<W: Write>(out: &mut W, report: &EceReport) -> std::io::Result<()> {
    writeln!(out, "bin,count,conf,accu,gap")?;
    for (i, b) in report.bins.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{}",
            b.count, b.conf_mean, b.accuracy, b.signed_gap
        )?;
    }
    Ok(())
}
