use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::accuracy::{fraction_flagged, Scorer};
use crate::data::ImageSource;
use crate::error::{Error, Result};
use crate::seed;

/// Accuracy at or below this counts as "fooled".
pub const FOOLED_THRESHOLD: f64 = 0.20;

/// Classifier-by-generator accuracy on generated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoolingMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// `entries[i][j]`: accuracy of classifier `i` on generator `j`.
    pub entries: Vec<Vec<f64>>,
    /// Standard deviation per cell when the matrix aggregates groups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Vec<Vec<f64>>>,
    pub fooled_threshold: f64,
    pub samples_per_cell: usize,
    pub seed: u64,
}

/// Seed under which generator `j` is sampled for every row of a matrix.
pub fn matrix_generator_seed(seed: u64, j: usize) -> u64 {
    seed::derive_seed(seed, "matrix-gen", j as u64)
}

/// Scores `n_samples` images of each generator with every classifier. Each
/// generator is sampled once and the same images are shown to all rows.
pub fn cross_fooling_matrix(
    classifiers: &[(&str, &dyn Scorer)],
    generators: &[&dyn ImageSource<f32>],
    n_samples: usize,
    seed: u64,
) -> Result<FoolingMatrix> {
    if classifiers.is_empty() || generators.is_empty() {
        return Err(Error::arg(
            "fooling matrix needs at least one classifier and one generator",
        ));
    }
    if n_samples == 0 {
        return Err(Error::arg("n_samples must be positive"));
    }
    let mut entries = vec![vec![0.0; generators.len()]; classifiers.len()];
    for (j, g) in generators.iter().enumerate() {
        let images = g.sample(n_samples, matrix_generator_seed(seed, j))?;
        for (i, (_, c)) in classifiers.iter().enumerate() {
            entries[i][j] = fraction_flagged(&c.real_probabilities(&images)?);
        }
    }
    Ok(FoolingMatrix {
        row_ids: classifiers.iter().map(|(id, _)| id.to_string()).collect(),
        col_ids: generators
            .iter()
            .map(|g| g.source_id().to_string())
            .collect(),
        entries,
        std: None,
        fooled_threshold: FOOLED_THRESHOLD,
        samples_per_cell: n_samples,
        seed,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl FoolingMatrix {
    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    /// Boolean "fooled" view at the matrix threshold.
    pub fn fooled(&self) -> Vec<Vec<bool>> {
        self.entries
            .iter()
            .map(|r| r.iter().map(|&v| v <= self.fooled_threshold).collect())
            .collect()
    }

    /// Collapses rows and columns into groups, reporting the mean and the
    /// population standard deviation of each block.
    pub fn grouped(
        &self,
        row_groups: &[(String, Vec<usize>)],
        col_groups: &[(String, Vec<usize>)],
    ) -> Result<FoolingMatrix> {
        let check = |groups: &[(String, Vec<usize>)], limit: usize| -> Result<()> {
            for (name, members) in groups {
                if members.is_empty() || members.iter().any(|&m| m >= limit) {
                    return Err(Error::arg(format!(
                        "group {name:?} is empty or out of range"
                    )));
                }
            }
            Ok(())
        };
        check(row_groups, self.rows())?;
        check(col_groups, self.cols())?;
        let mut entries = Vec::new();
        let mut std = Vec::new();
        for (_, rows) in row_groups {
            let mut er = Vec::new();
            let mut sr = Vec::new();
            for (_, cols) in col_groups {
                let block: Vec<f64> = rows
                    .iter()
                    .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
                    .map(|(i, j)| self.entries[i][j])
                    .collect();
                let (m, s) = mean_std(&block);
                er.push(m);
                sr.push(s);
            }
            entries.push(er);
            std.push(sr);
        }
        Ok(FoolingMatrix {
            row_ids: row_groups.iter().map(|(n, _)| n.clone()).collect(),
            col_ids: col_groups.iter().map(|(n, _)| n.clone()).collect(),
            entries,
            std: Some(std),
            fooled_threshold: self.fooled_threshold,
            samples_per_cell: self.samples_per_cell,
            seed: self.seed,
        })
    }

    /// CSV with a header row of generator IDs; cells use six decimals and
    /// grouped matrices print `mean±std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("classifier");
        for c in &self.col_ids {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, id) in self.row_ids.iter().enumerate() {
            out.push_str(id);
            for j in 0..self.cols() {
                match &self.std {
                    Some(s) => write!(out, ",{:.6}±{:.6}", self.entries[i][j], s[i][j]),
                    None => write!(out, ",{:.6}", self.entries[i][j]),
                }
                .expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: FoolingMatrix = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "fooling matrix".into(),
            reason: e.to_string(),
        })?;
        if m.entries.len() != m.rows() || m.entries.iter().any(|r| r.len() != m.cols()) {
            return Err(Error::shape("matrix entries do not match its ids"));
        }
        Ok(m)
    }

    /// Builds a matrix directly from values, mainly for analysis and tests.
    pub fn from_entries(
        row_ids: Vec<String>,
        col_ids: Vec<String>,
        entries: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if entries.len() != row_ids.len() || entries.iter().any(|r| r.len() != col_ids.len()) {
            return Err(Error::shape(format!(
                "{} ids for rows and {} for columns do not match the entries",
                row_ids.len(),
                col_ids.len()
            )));
        }
        Ok(FoolingMatrix {
            row_ids,
            col_ids,
            entries,
            std: None,
            fooled_threshold: FOOLED_THRESHOLD,
            samples_per_cell: 0,
            seed: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(p: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    #[test]
    fn grouping_reports_mean_and_std() {
        let m = FoolingMatrix::from_entries(
            ids("c", 2),
            ids("g", 2),
            vec![vec![0.1, 0.3], vec![0.5, 0.7]],
        )
        .unwrap();
        let g = m
            .grouped(
                &[("all".into(), vec![0, 1])],
                &[("a".into(), vec![0]), ("b".into(), vec![1])],
            )
            .unwrap();
        assert!((g.entries[0][0] - 0.3).abs() < 1e-12);
        assert!((g.std.as_ref().unwrap()[0][1] - 0.2).abs() < 1e-12);
        assert!(g.to_csv().contains("0.300000±0.200000"));
        assert!(m.grouped(&[("x".into(), vec![5])], &[]).is_err());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let m =
            FoolingMatrix::from_entries(ids("c", 1), ids("g", 2), vec![vec![0.25, 1.0]]).unwrap();
        assert_eq!(m.to_csv(), "classifier,g0,g1\nc0,0.250000,1.000000\n");
        assert_eq!(FoolingMatrix::from_json(&m.to_json()).unwrap(), m);
        assert_eq!(m.fooled(), vec![vec![false, false]]);
        assert!(FoolingMatrix::from_entries(ids("c", 2), ids("g", 2), vec![vec![0.0; 2]]).is_err());
    }
}
