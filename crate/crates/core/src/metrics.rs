//! Latency statistics: IQR, mean and variance, coefficient of variation,
//! Pearson correlation, and normalization against isolated runs.
//!
//! Quartiles interpolate linearly at fractional rank `q * (n - 1)` of the
//! sorted sample. Variances are population variances.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::RequestRecord;

pub const QUARTILE_METHOD: &str = "linear interpolation at rank q*(n-1)";

fn check_finite(xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    Ok(())
}

/// Quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::invalid("quartiles need at least 2 samples"));
    }
    check_finite(samples)?;
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75)))
}

pub fn iqr(samples: &[f64]) -> Result<f64> {
    let (q1, q3) = quartiles(samples)?;
    Ok((q3 - q1).max(0.0))
}

pub fn mean(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("mean of an empty sample"));
    }
    check_finite(samples)?;
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean and population variance. Variance needs two samples.
pub fn mean_variance(samples: &[f64]) -> Result<(f64, f64)> {
    let m = mean(samples)?;
    if samples.len() < 2 {
        return Err(Error::invalid("variance needs at least 2 samples"));
    }
    let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64;
    Ok((m, var))
}

pub fn coefficient_of_variation(samples: &[f64]) -> Result<f64> {
    let (m, var) = mean_variance(samples)?;
    if m == 0.0 {
        return Err(Error::invalid("coefficient of variation with zero mean"));
    }
    Ok(var.sqrt() / m)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length lists of at least 2"));
    }
    check_finite(x)?;
    check_finite(y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson of a constant list"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn normalize_to_isolated(colocated: f64, isolated: f64) -> Result<f64> {
    if !(isolated > 0.0) {
        return Err(Error::invalid(format!("isolated baseline {isolated} must be > 0")));
    }
    Ok(colocated / isolated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyKind {
    Execution,
    Response,
}

impl LatencyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LatencyKind::Execution => "execution",
            LatencyKind::Response => "response",
        }
    }

    pub fn of(self, r: &RequestRecord) -> f64 {
        match self {
            LatencyKind::Execution => r.execution_latency,
            LatencyKind::Response => r.response_latency,
        }
    }
}

/// Descriptive statistics of one latency series.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub variance: f64,
    pub iqr: f64,
    pub cov: f64,
    pub n: usize,
}

impl LatencyStats {
    /// Statistics that need two samples are 0 for shorter series.
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self::default();
        }
        let m = mean(samples).unwrap_or(0.0);
        let (variance, iqr_v) = if n >= 2 {
            (
                mean_variance(samples).map(|x| x.1).unwrap_or(0.0),
                iqr(samples).unwrap_or(0.0),
            )
        } else {
            (0.0, 0.0)
        };
        let cov = if m > 0.0 { variance.sqrt() / m } else { 0.0 };
        LatencyStats {
            mean: m,
            variance,
            iqr: iqr_v,
            cov,
            n,
        }
    }
}

pub fn latencies<'a>(
    records: impl IntoIterator<Item = &'a RequestRecord>,
    app: &str,
    kind: LatencyKind,
) -> Vec<f64> {
    records
        .into_iter()
        .filter(|r| r.app == app)
        .map(|r| kind.of(r))
        .collect()
}

/// One row of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub app: String,
    pub kind: LatencyKind,
    pub mean: f64,
    pub variance: f64,
    pub iqr: f64,
    pub cov: f64,
    pub n: usize,
    pub normalized_mean: Option<f64>,
    pub normalized_variance: Option<f64>,
    pub normalized_iqr: Option<f64>,
}

/// Builds summary rows per app and kind. `isolated` looks up solo statistics
/// for normalization; missing or zero baselines leave the columns empty.
pub fn summarize(
    records: &[RequestRecord],
    apps: &[String],
    isolated: impl Fn(&str, LatencyKind) -> Option<LatencyStats>,
) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for app in apps {
        for kind in [LatencyKind::Execution, LatencyKind::Response] {
            let s = LatencyStats::of(&latencies(records, app, kind));
            let base = isolated(app, kind);
            let norm = |c: f64, f: fn(&LatencyStats) -> f64| {
                base.and_then(|b| normalize_to_isolated(c, f(&b)).ok())
            };
            rows.push(SummaryRow {
                app: app.clone(),
                kind,
                mean: s.mean,
                variance: s.variance,
                iqr: s.iqr,
                cov: s.cov,
                n: s.n,
                normalized_mean: norm(s.mean, |b| b.mean),
                normalized_variance: norm(s.variance, |b| b.variance),
                normalized_iqr: norm(s.iqr, |b| b.iqr),
            });
        }
    }
    rows
}

pub const SUMMARY_HEADER: &str =
    "app,kind,mean,variance,iqr,cov,n,normalized_mean,normalized_variance,normalized_iqr";

pub fn write_summary(rows: &[SummaryRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{},{},{},{}",
            r.app,
            r.kind.as_str(),
            r.mean,
            r.variance,
            r.iqr,
            r.cov,
            r.n,
            opt(r.normalized_mean),
            opt(r.normalized_variance),
            opt(r.normalized_iqr)
        )?;
    }
    Ok(())
}

pub fn write_summary_file(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_summary(rows, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn iqr_examples() {
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0]).unwrap(), (1.75, 3.25));
        assert_eq!(iqr(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 1.5);
        assert_eq!(iqr(&[2.5; 9]).unwrap(), 0.0);
        assert!(iqr(&[1.0]).is_err());
    }

    #[test]
    fn mean_variance_examples() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean_variance(&xs).unwrap(), (5.0, 4.0));
        assert_eq!(mean_variance(&[3.0; 5]).unwrap().1, 0.0);
        assert_eq!(mean(&[7.0]).unwrap(), 7.0);
        assert!(mean_variance(&[7.0]).is_err());
        assert!(mean(&[]).is_err());
    }

    #[test]
    fn cov_and_pearson_examples() {
        assert_eq!(coefficient_of_variation(&[1.0, 3.0]).unwrap(), 0.5);
        assert_eq!(coefficient_of_variation(&[4.0; 3]).unwrap(), 0.0);
        assert!(coefficient_of_variation(&[-1.0, 1.0]).is_err());
        let x = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
        assert!(pearson(&x, &x[..3]).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_to_isolated(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(normalize_to_isolated(8.5, 1.0).unwrap(), 8.5);
        assert!((normalize_to_isolated(1.3, 1.0).unwrap() - 1.3).abs() < 1e-15);
        assert!(normalize_to_isolated(1.0, 0.0).is_err());
    }

    #[test]
    fn summary_csv_layout() {
        let recs = vec![
            RequestRecord::new("A".into(), 0.0, 0.0, 1.0, false),
            RequestRecord::new("A".into(), 1.0, 1.5, 3.0, true),
        ];
        let rows = summarize(&recs, &["A".to_string()], |_, _| None);
        let mut out = Vec::new();
        write_summary(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert_eq!(lines[1], "A,execution,1.25,0.0625,0.25,0.2,2,,,");
        assert!(lines[2].starts_with("A,response,1.5,"));
    }

    proptest! {
        #[test]
        fn affine_covariance(xs in prop::collection::vec(-1e3f64..1e3, 2..200), a in 0.1f64..10.0, b in -100.0f64..100.0) {
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let tol = |v: f64| 1e-9 * (1.0 + v.abs());
            let (i0, i1) = (iqr(&xs).unwrap(), iqr(&ys).unwrap());
            prop_assert!((i1 - a * i0).abs() <= tol(i1));
            let (_, v0) = mean_variance(&xs).unwrap();
            let (_, v1) = mean_variance(&ys).unwrap();
            prop_assert!((v1 - a * a * v0).abs() <= 1e-9 * (1.0 + v1));
            let zs: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
            prop_assert!((iqr(&zs).unwrap() - a * i0).abs() <= tol(i0 * a));
        }

        #[test]
        fn pearson_affine_invariant(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..100), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = pearson(&x, &y).unwrap();
            let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&xa, &y).unwrap() - r).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }
}
