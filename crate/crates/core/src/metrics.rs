//! Regression metrics and fold/seed-averaged reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("metric needs non-empty vectors of equal length (got {pred} and {truth})")]
    EmptyInput { pred: usize, truth: usize },
    #[error("no pair of samples has distinct true values")]
    NoComparablePairs,
    #[error("correlation is undefined for a constant vector")]
    ZeroVariance,
    #[error("malformed metrics row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
}

type Result<T> = std::result::Result<T, MetricsError>;

fn check_lengths(pred: &[f64], truth: &[f64], min: usize) -> Result<()> {
    if pred.len() != truth.len() || pred.len() < min {
        return Err(MetricsError::EmptyInput {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 1)?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Fenwick tree over ranks, counting inserted predictions.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Fraction of pairs with distinct true values whose predictions are in the
/// same order, prediction ties scoring one half. Runs in `O(n log n)`.
pub fn concordance_index(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 2)?;
    let n = pred.len();

    // dense ranks of the predictions
    let mut sorted: Vec<f64> = pred.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |p: f64| sorted.partition_point(|&s| s < p);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));

    let mut tree = Fenwick(vec![0; sorted.len() + 1]);
    let (mut concordant, mut tied, mut comparable) = (0u64, 0u64, 0u64);
    let mut inserted = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && truth[order[end]] == truth[order[start]] {
            end += 1;
        }
        // every earlier group has strictly smaller truth
        for &i in &order[start..end] {
            let r = rank(pred[i]);
            let below = tree.prefix(r);
            let equal = tree.prefix(r + 1) - below;
            concordant += below;
            tied += equal;
            comparable += inserted;
        }
        for &i in &order[start..end] {
            tree.add(rank(pred[i]));
        }
        inserted += (end - start) as u64;
        start = end;
    }
    if comparable == 0 {
        return Err(MetricsError::NoComparablePairs);
    }
    Ok((2 * concordant + tied) as f64 / (2 * comparable) as f64)
}

pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth, 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Squared Pearson correlation.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    pearson(pred, truth).map(|r| r * r)
}

/// Test-set scores for one `(scheme, fold, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: String,
    pub fold: usize,
    pub seed: u64,
    pub rmse: f64,
    pub ci: f64,
    pub r2: f64,
}

impl MetricsRow {
    /// Scores predictions; a metric that is undefined on this fold is NaN.
    pub fn score(scheme: &str, fold: usize, seed: u64, pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            scheme: scheme.to_string(),
            fold,
            seed,
            rmse: rmse(pred, truth)?,
            ci: concordance_index(pred, truth).unwrap_or(f64::NAN),
            r2: r2(pred, truth).unwrap_or(f64::NAN),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSummary {
    pub rmse: MeanStd,
    pub ci: MeanStd,
    pub r2: MeanStd,
    pub runs: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "scheme,fold,seed,rmse,ci,r2";

impl MetricsReport {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    /// Per scheme: each seed's metrics are averaged over its folds, then the
    /// seed means are averaged. The std is taken over the per-seed means, or
    /// over folds when only one seed ran.
    pub fn aggregate(&self) -> BTreeMap<String, SchemeSummary> {
        let mut by_scheme: BTreeMap<&str, BTreeMap<u64, Vec<&MetricsRow>>> = BTreeMap::new();
        for r in &self.rows {
            by_scheme.entry(&r.scheme).or_default().entry(r.seed).or_default().push(r);
        }
        by_scheme
            .into_iter()
            .map(|(scheme, seeds)| {
                let runs = seeds.values().map(Vec::len).sum();
                let pick = |f: fn(&MetricsRow) -> f64| -> MeanStd {
                    if seeds.len() == 1 {
                        let rows = seeds.values().next().expect("one seed");
                        return MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                    }
                    let means: Vec<f64> = seeds
                        .values()
                        .map(|rows| MeanStd::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).mean)
                        .collect();
                    MeanStd::of(&means)
                };
                let summary = SchemeSummary {
                    rmse: pick(|r| r.rmse),
                    ci: pick(|r| r.ci),
                    r2: pick(|r| r.r2),
                    runs,
                };
                (scheme.to_string(), summary)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(METRICS_HEADER.split(','))?;
        for r in &self.rows {
            w.serialize((&r.scheme, r.fold, r.seed, r.rmse, r.ci, r.r2))?;
        }
        w.flush()
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 1;
            let rec = rec.map_err(|e| MetricsError::MalformedRow {
                line,
                reason: e.to_string(),
            })?;
            if i == 0 {
                if rec.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
                    return Err(MetricsError::MalformedRow {
                        line,
                        reason: format!("expected header `{METRICS_HEADER}`"),
                    });
                }
                continue;
            }
            let row: MetricsRow = rec.deserialize(None).map_err(|e| MetricsError::MalformedRow {
                line,
                reason: e.to_string(),
            })?;
            rows.push(row);
        }
        Ok(Self { rows })
    }

    /// Plain-text table with `mean (std)` cells, one line per scheme.
    pub fn table(&self) -> String {
        let mut out = format!("{:<12} {:>5} {:>18} {:>18} {:>18}\n", "scheme", "runs", "RMSE", "CI", "R2");
        let cell = |m: MeanStd| format!("{:.3} ({:.3})", m.mean, m.std);
        for (scheme, s) in self.aggregate() {
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>18} {:>18} {:>18}",
                scheme,
                s.runs,
                cell(s.rmse),
                cell(s.ci),
                cell(s.r2)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(rmse(&[], &[]), Err(MetricsError::EmptyInput { .. })));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(MetricsError::EmptyInput { .. })));
    }

    #[test]
    fn ci_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(concordance_index(&[10.0, 20.0, 30.0, 40.0], &t).unwrap(), 1.0);
        assert_eq!(concordance_index(&[0.0; 4], &t).unwrap(), 0.5);
        assert_eq!(concordance_index(&[4.0, 3.0, 2.0, 1.0], &t).unwrap(), 0.0);
        assert_eq!(
            concordance_index(&[1.0, 2.0], &[3.0, 3.0]),
            Err(MetricsError::NoComparablePairs)
        );
    }

    #[test]
    fn r2_examples() {
        let t = [1.0, 2.0, 4.0, 7.0];
        let p: Vec<f64> = t.iter().map(|x| 3.0 * x - 1.0).collect();
        assert!((r2(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((r2(&neg, &t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r2(&[1.0; 4], &t), Err(MetricsError::ZeroVariance));
    }

    fn row(scheme: &str, fold: usize, seed: u64, rmse: f64) -> MetricsRow {
        MetricsRow {
            scheme: scheme.into(),
            fold,
            seed,
            rmse,
            ci: 0.8,
            r2: 0.5,
        }
    }

    #[test]
    fn aggregation_uses_population_std() {
        let rep = MetricsReport {
            rows: vec![row("warm", 0, 1, 0.2), row("warm", 1, 1, 0.3)],
        };
        let s = rep.aggregate()["warm"];
        assert!((s.rmse.mean - 0.25).abs() < 1e-12);
        assert!((s.rmse.std - 0.05).abs() < 1e-12);
        assert_eq!(s.ci.std, 0.0);
    }

    #[test]
    fn folds_then_seeds() {
        let rep = MetricsReport {
            rows: vec![
                row("warm", 0, 1, 0.1),
                row("warm", 1, 1, 0.3),
                row("warm", 0, 2, 0.5),
                row("warm", 1, 2, 0.5),
            ],
        };
        let s = rep.aggregate()["warm"];
        assert!((s.rmse.mean - 0.35).abs() < 1e-12);
        assert!((s.rmse.std - 0.15).abs() < 1e-12);
        assert_eq!(s.runs, 4);
    }

    #[test]
    fn single_fold_has_zero_std() {
        let rep = MetricsReport {
            rows: vec![row("cold_drug", 0, 1, 0.4)],
        };
        assert_eq!(rep.aggregate()["cold_drug"].rmse.std, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let rep = MetricsReport {
            rows: vec![row("warm", 0, 1, 0.123456789), row("cold_target", 4, 7, f64::NAN)],
        };
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"scheme,fold,seed,rmse,ci,r2\n"));
        let back = MetricsReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows[0], rep.rows[0]);
        assert!(back.rows[1].rmse.is_nan());
        let mut again = Vec::new();
        back.write_csv(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "scheme,fold,seed,rmse,ci,r2\nwarm,0,1,0.1,0.2,0.3\nwarm,x,1,0.1,0.2,0.3\n";
        assert!(matches!(
            MetricsReport::read_csv(text.as_bytes()),
            Err(MetricsError::MalformedRow { line: 3, .. })
        ));
    }
}
