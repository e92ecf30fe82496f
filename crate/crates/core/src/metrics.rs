//! Standard depth-benchmark error metrics.

use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

pub const CSV_HEADER: &str = "abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3";

impl MetricReport {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    fn from_array(a: [f64; 7]) -> Self {
        MetricReport {
            abs_rel: a[0],
            sq_rel: a[1],
            rmse: a[2],
            rmse_log: a[3],
            delta1: a[4],
            delta2: a[5],
            delta3: a[6],
        }
    }

    /// Element-wise mean, summed in the given order.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let mut acc = [0.0; 7];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.as_array()) {
                *a += v;
            }
        }
        let n = reports.len() as f64;
        Some(Self::from_array(acc.map(|a| a / n)))
    }

    /// One CSV row in [`CSV_HEADER`] order.
    pub fn csv_row(&self) -> String {
        self.as_array().map(|v| v.to_string()).join(",")
    }

    pub fn parse_csv_row(row: &str) -> Result<Self> {
        let vals: Vec<f64> = row
            .trim()
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("metric row", e.to_string()))?;
        let arr: [f64; 7] = vals
            .try_into()
            .map_err(|v: Vec<f64>| Error::format("metric row", format!("{} fields", v.len())))?;
        Ok(Self::from_array(arr))
    }

    /// Fixed-width table with the usual benchmark column headers.
    pub fn table(rows: &[(&str, MetricReport)]) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "Method", "Abs Rel", "Sq Rel", "RMSE", "RMSE log", "d<1.25", "d<1.25^2", "d<1.25^3"
        ));
        for (name, r) in rows {
            s.push_str(&format!(
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
                name, r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta1, r.delta2, r.delta3
            ));
        }
        s
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.csv_row())
    }
}

/// Metrics over the pixels where `valid_mask` (if given) is non-zero and the
/// ground truth is a positive finite number.
pub fn eigen_metrics<T: Real>(est: &Tensor<T>, gt: &Tensor<T>, valid_mask: Option<&Tensor<T>>) -> Result<MetricReport> {
    est.expect_shape(gt, "estimate vs ground truth")?;
    if let Some(m) = valid_mask {
        if (m.height(), m.width()) != (gt.height(), gt.width()) || m.channels() != 1 {
            return Err(Error::shape(format!("mask {:?} for depth {:?}", m.shape(), gt.shape())));
        }
    }
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for (idx, (&e, &g)) in est.data().iter().zip(gt.data()).enumerate() {
        if let Some(m) = valid_mask {
            if m.data()[idx] == T::zero() {
                continue;
            }
        }
        let (e, g) = (e.f64(), g.f64());
        if !(g > 0.0 && g.is_finite()) {
            continue;
        }
        n += 1;
        let diff = e - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = e.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (e / g).max(g / e);
        for (h, &t) in hits.iter_mut().zip(&thresholds) {
            if ratio < t {
                *h += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(MetricReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
    })
}
