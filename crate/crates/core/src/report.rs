//! Contribution report serialisation: a stable JSON schema, a CSV form and
//! an aligned text table.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ContributionMatrix, MarginalAxis};

/// Wire form of a contribution matrix:
/// `{method, delta_y, residual, rows[], cols[], values[][], row_totals[],
/// col_totals[]}`, plus the seed that produced it when one was involved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub method: String,
    pub delta_y: f64,
    pub residual: f64,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub row_totals: Vec<f64>,
    pub col_totals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ContributionReport {
    pub fn from_matrix(matrix: &ContributionMatrix, seed: Option<u64>) -> Self {
        let q = matrix.q();
        let values = matrix
            .values()
            .chunks(q.max(1))
            .map(|row| row.to_vec())
            .collect();
        Self {
            method: matrix.method().to_string(),
            delta_y: matrix.delta_y(),
            residual: matrix.residual(),
            rows: matrix.rows().to_vec(),
            cols: matrix.cols().to_vec(),
            values,
            row_totals: matrix.row_totals(),
            col_totals: matrix.col_totals(),
            seed,
        }
    }

    pub fn to_matrix(&self) -> Result<ContributionMatrix> {
        ContributionMatrix::new(
            self.rows.clone(),
            self.cols.clone(),
            self.values.iter().flatten().copied().collect(),
            self.delta_y,
            self.residual,
            self.method.clone(),
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("sub_cube");
        for col in &self.cols {
            out.push(',');
            out.push_str(col);
        }
        out.push_str(",row_total\n");
        for (u, row) in self.rows.iter().enumerate() {
            out.push_str(row);
            for v in &self.values[u] {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push(',');
            out.push_str(&self.row_totals[u].to_string());
            out.push('\n');
        }
        out.push_str("(total)");
        for v in &self.col_totals {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push(',');
        out.push_str(&self.delta_y.to_string());
        out.push('\n');
        out
    }

    pub fn render_table(&self) -> String {
        let mut header = vec!["sub_cube".to_string()];
        header.extend(self.cols.iter().cloned());
        header.push("total".into());
        let mut body = Vec::new();
        for (u, row) in self.rows.iter().enumerate() {
            let mut line = vec![row.clone()];
            line.extend(self.values[u].iter().map(|v| format!("{v:+.6}")));
            line.push(format!("{:+.6}", self.row_totals[u]));
            body.push(line);
        }
        let mut totals = vec!["(total)".to_string()];
        totals.extend(self.col_totals.iter().map(|v| format!("{v:+.6}")));
        totals.push(format!("{:+.6}", self.delta_y));
        body.push(totals);
        let mut table = render_aligned(&header, &body);
        table.push_str(&format!(
            "method: {}   delta_y: {:+.6}   residual: {:+.3e}\n",
            self.method, self.delta_y, self.residual
        ));
        table
    }
}

/// Sub-cubes ordered by the magnitude of their contribution row totals,
/// descending, ties broken lexicographically on the label.
pub fn rank_sub_cubes(matrix: &ContributionMatrix) -> Vec<(String, f64)> {
    let mut totals = crate::model::marginalize(matrix, MarginalAxis::Rows);
    totals.sort_by(|(la, va), (lb, vb)| {
        vb.abs()
            .partial_cmp(&va.abs())
            .expect("finite totals")
            .then_with(|| la.cmp(lb))
    });
    totals
}

/// Rounds to `decimals` places with ties away from zero, for printed
/// percentage tables.
pub fn round_half_away(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x.abs() * scale + 0.5).floor() / scale * x.signum()
}

/// Left-pads every column to its widest entry.
pub fn render_aligned(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in body {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut emit = |row: &[String]| {
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            out.push_str(&" ".repeat(widths[i].saturating_sub(cell.len())));
            out.push_str(cell);
        }
        out.push('\n');
    };
    emit(header);
    for row in body {
        emit(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_matrix() -> ContributionMatrix {
        ContributionMatrix::new(
            vec!["a".to_string(), "b".to_string()],
            vec!["m1".to_string(), "m2".to_string()],
            vec![1.0, -2.0, 0.5, 0.25],
            -0.25,
            0.0,
            "linear",
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip() {
        let report = ContributionReport::from_matrix(&sample_matrix(), Some(42));
        let parsed: ContributionReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
        let matrix = parsed.to_matrix().unwrap();
        assert_eq!(matrix.values(), sample_matrix().values());
    }

    #[test]
    fn ranking_orders_by_magnitude_then_label() {
        let ranked = rank_sub_cubes(&sample_matrix());
        assert_eq!(ranked[0].0, "a"); // |1 - 2| = 1.0
        assert_eq!(ranked[1].0, "b"); // |0.75|
    }

    #[test]
    fn ranking_breaks_ties_lexicographically() {
        let m = ContributionMatrix::new(
            vec!["z".to_string(), "a".to_string()],
            vec!["m".to_string()],
            vec![1.0, -1.0],
            0.0,
            0.0,
            "linear",
        )
        .unwrap();
        let ranked = rank_sub_cubes(&m);
        assert_eq!(ranked[0].0, "a");
        assert_eq!(ranked[1].0, "z");
    }

    #[test]
    fn rounding_is_away_from_zero_on_ties() {
        assert_eq!(round_half_away(0.125, 2), 0.13);
        assert_eq!(round_half_away(-0.125, 2), -0.13);
        assert_eq!(round_half_away(12.345, 2), 12.35);
        assert_eq!(round_half_away(0.0, 2), 0.0);
    }

    #[test]
    fn csv_has_totals_row_and_column() {
        let csv = ContributionReport::from_matrix(&sample_matrix(), None).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "sub_cube,m1,m2,row_total");
        assert_eq!(lines[1], "a,1,-2,-1");
        assert!(lines[3].starts_with("(total),1.5,-1.75,"));
    }
}
