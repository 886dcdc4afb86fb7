//! Error metrics and the aggregated report form shared by the simulations.

use attrib_core::model::ContributionMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("ground truth has no nonzero entries; scaled error is undefined")]
    ZeroDenominator,

    #[error("estimate shape {got} does not match ground truth {expected}")]
    ShapeMismatch { got: usize, expected: usize },

    #[error(transparent)]
    Core(#[from] attrib_core::Error),
}

/// Mean absolute scaled error: total absolute attribution error divided by
/// the total absolute ground-truth contribution.
pub fn mase(estimate: &ContributionMatrix, ground_truth: &[f64]) -> Result<f64> {
    if estimate.values().len() != ground_truth.len() {
        return Err(ExperimentError::ShapeMismatch {
            got: estimate.values().len(),
            expected: ground_truth.len(),
        });
    }
    let scale: f64 = ground_truth.iter().map(|t| t.abs()).sum();
    if scale == 0.0 {
        return Err(ExperimentError::ZeroDenominator);
    }
    let error: f64 = estimate
        .values()
        .iter()
        .zip(ground_truth)
        .map(|(c, t)| (c - t).abs())
        .sum();
    Ok(error / scale)
}

/// One grid point of an experiment: the mean metric over the repetitions and
/// its standard error (sample standard deviation over the square root of the
/// repetition count).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub x: f64,
    pub mean: f64,
    pub std_err: f64,
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub experiment: String,
    pub x_label: String,
    pub y_label: String,
    pub seed: u64,
    pub points: Vec<MetricPoint>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Plot-ready CSV: one `(x, mean, stderr)` row per grid point.
    pub fn to_plot_csv(&self) -> String {
        let mut out = String::from("x,mean,stderr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.x, p.mean, p.std_err));
        }
        out
    }

    /// Aligned summary table for terminal output.
    pub fn render_table(&self) -> String {
        let header = vec![
            self.x_label.clone(),
            format!("mean {}", self.y_label),
            "std err".to_string(),
            "reps".to_string(),
        ];
        let body: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| {
                vec![
                    format!("{}", p.x),
                    format!("{:.4}", p.mean),
                    format!("{:.4}", p.std_err),
                    format!("{}", p.repetitions),
                ]
            })
            .collect();
        attrib_core::report::render_aligned(&header, &body)
    }
}

pub fn mean_and_std_err(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
