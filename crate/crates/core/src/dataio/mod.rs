//! Survival datasets: delimited-text ingestion, stratified splitting and
//! synthetic generation with known ground truth.

mod split;
mod synthetic;
mod table;

pub use split::{stratified_folds, stratified_split, stratified_split_indices};
pub use synthetic::{
    generate_synthetic, FeatureDistribution, FeatureSpec, GroundTruth, NonlinearKind, NonlinearTerm,
    SyntheticSpec,
};
pub use table::{load_csv, parse_csv, write_csv, write_csv_to};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    /// Indicator for `level` of the text column `source`.
    OneHotLevel { source: String, level: String },
}

/// `N` subjects with `d` features, an observed time and an event indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    features: Vec<Vec<f64>>,
    times: Vec<f64>,
    events: Vec<bool>,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
}

impl SurvivalDataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        times: Vec<f64>,
        events: Vec<bool>,
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let n = features.len();
        for (what, len) in [("times", times.len()), ("events", events.len())] {
            if len != n {
                return Err(invalid(format!("{what} has {len} entries for {n} rows")));
            }
        }
        if column_kinds.len() != column_names.len() {
            return Err(invalid("column kinds and names differ in length"));
        }
        let d = column_names.len();
        for (r, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Dimension {
                    context: "dataset row",
                    expected: d,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("row {r} has a non-finite feature")));
            }
        }
        if let Some((r, t)) = times.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t >= 0.0)) {
            return Err(invalid(format!("row {r}: time {t} must be finite and non-negative")));
        }
        Ok(Self {
            features,
            times,
            events,
            column_names,
            column_kinds,
        })
    }

    /// Dataset with unnamed numeric columns `x1..xd`.
    pub fn from_rows(features: Vec<Vec<f64>>, times: Vec<f64>, events: Vec<bool>) -> Result<Self> {
        let d = features.first().map_or(0, |r| r.len());
        let names = (1..=d).map(|k| format!("x{k}")).collect();
        Self::new(features, times, events, names, vec![ColumnKind::Numeric; d])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.column_names.len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn event_count(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn event_rate(&self) -> f64 {
        self.event_count() as f64 / self.len() as f64
    }

    pub fn max_time(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.features.iter().map(|r| r[k]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
            column_names: self.column_names.clone(),
            column_kinds: self.column_kinds.clone(),
        }
    }
}
