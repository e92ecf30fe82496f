//! Scoring protocol: the model sees only the last `N` frames of each test
//! sequence and is scored on its estimate for the final frame. Reports are
//! averaged over sequences.

use rayon::prelude::*;

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::metrics::{eigen_metrics, MetricReport};
use crate::model::Model;

/// Metrics of the final frame of one sequence, fed its last `n` frames.
pub fn evaluate_sequence(model: &Model, sample: &SequenceSample, n: usize) -> Result<MetricReport> {
    if n == 0 || n > sample.len() {
        return Err(Error::Config(format!(
            "test_seq_len {n} for sequence {} of {} frames",
            sample.id,
            sample.len()
        )));
    }
    let window = sample.tail(n);
    let depths = model.predict(&window)?;
    let est = depths.last().expect("non-empty window");
    eigen_metrics(est, &window.frames[n - 1].depth, None)
}

/// Per-sequence reports in dataset order, computed in parallel.
pub fn evaluate_per_sequence(model: &Model, dataset: &[SequenceSample], n: usize) -> Result<Vec<MetricReport>> {
    dataset.par_iter().map(|s| evaluate_sequence(model, s, n)).collect()
}

/// Mean metrics over `dataset`.
pub fn evaluate(model: &Model, dataset: &[SequenceSample], n: usize) -> Result<MetricReport> {
    evaluate_batched(model, dataset, n, dataset.len().max(1))
}

/// Same as [`evaluate`], processing `batch` sequences at a time. The result
/// does not depend on `batch`.
pub fn evaluate_batched(model: &Model, dataset: &[SequenceSample], n: usize, batch: usize) -> Result<MetricReport> {
    if batch == 0 {
        return Err(Error::Config("evaluation batch of zero sequences".into()));
    }
    let mut reports = Vec::with_capacity(dataset.len());
    for chunk in dataset.chunks(batch) {
        reports.extend(evaluate_per_sequence(model, chunk, n)?);
    }
    MetricReport::mean(&reports).ok_or_else(|| Error::Config("empty test set".into()))
}

/// RMSE log for every model (rows) and test length (columns).
pub fn length_grid(models: &[Model], dataset: &[SequenceSample], lengths: &[usize]) -> Result<Vec<Vec<f64>>> {
    models
        .iter()
        .map(|m| lengths.iter().map(|&n| Ok(evaluate(m, dataset, n)?.rmse_log)).collect())
        .collect()
}

/// Text rendering of [`length_grid`].
pub fn grid_table(row_labels: &[String], lengths: &[usize], grid: &[Vec<f64>]) -> String {
    let mut s = format!("{:<12}", "train\\test");
    for n in lengths {
        s.push_str(&format!(" {:>9}", n));
    }
    s.push('\n');
    for (label, row) in row_labels.iter().zip(grid) {
        s.push_str(&format!("{label:<12}"));
        for v in row {
            s.push_str(&format!(" {v:>9.4}"));
        }
        s.push('\n');
    }
    s
}
