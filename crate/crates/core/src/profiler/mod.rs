//! Column statistics for prompts and task-agnostic suggestion.
//!
//! Completeness, mean, standard deviation, minimum and maximum are exact.
//! Distinct counts and quantiles go through [`DistinctSketch`] and
//! [`QuantileSketch`], both seeded so profiles are reproducible.

mod hll;
mod kll;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use hll::{hash_value, DistinctSketch};
pub use kll::QuantileSketch;

use crate::error::{Error, Result};
use crate::tabular::{ColumnVector, Dataset, Value, ValueKind};

pub const DEFAULT_HISTOGRAM_THRESHOLD: usize = 50;
pub const DEFAULT_SKETCH_SEED: u64 = 0x5EED_D157_1C7A_0001;
const SAMPLE_VALUES: usize = 5;
const PARALLEL_ROWS: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub histogram_threshold: usize,
    pub sketch_seed: u64,
    pub hll_precision: u8,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            histogram_threshold: DEFAULT_HISTOGRAM_THRESHOLD,
            sketch_seed: DEFAULT_SKETCH_SEED,
            hll_precision: DistinctSketch::DEFAULT_PRECISION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub inferred_type: ValueKind,
    #[serde(with = "sig17")]
    pub completeness: f64,
    pub approx_distinct: u64,
    pub histogram: Option<BTreeMap<String, u64>>,
    #[serde(with = "sig17::option")]
    pub mean: Option<f64>,
    #[serde(with = "sig17::option")]
    pub stddev: Option<f64>,
    #[serde(with = "sig17::option")]
    pub min: Option<f64>,
    #[serde(with = "sig17::option")]
    pub max: Option<f64>,
    pub sample_values: Vec<String>,
}

impl ColumnProfile {
    pub fn non_null_count(&self, row_count: usize) -> usize {
        (self.completeness * row_count as f64).round() as usize
    }
}

/// The persisted profile: `profiles/<dataset>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileArtifact {
    pub dataset: String,
    pub row_count: usize,
    pub sketch_seed: u64,
    pub histogram_threshold: usize,
    pub columns: Vec<ColumnProfile>,
}

impl ProfileArtifact {
    pub fn new(dataset: impl Into<String>, d: &Dataset, params: ProfileParams) -> Self {
        Self {
            dataset: dataset.into(),
            row_count: d.row_count(),
            sketch_seed: params.sketch_seed,
            histogram_threshold: params.histogram_threshold,
            columns: profile_data(d, &params),
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnProfile> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.json", self.dataset));
        fs::write(&path, self.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn profile_data(d: &Dataset, params: &ProfileParams) -> Vec<ColumnProfile> {
    let rows = d.row_count();
    if rows >= PARALLEL_ROWS && d.columns().len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = d
                .columns()
                .iter()
                .map(|c| s.spawn(move || profile_column(c, rows, params)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("profiling thread panicked"))
                .collect()
        })
    } else {
        d.columns().iter().map(|c| profile_column(c, rows, params)).collect()
    }
}

pub fn profile_column(col: &ColumnVector, row_count: usize, params: &ProfileParams) -> ColumnProfile {
    let non_null = col.len() - col.null_count();
    let completeness = if row_count == 0 {
        1.0
    } else {
        non_null as f64 / row_count as f64
    };

    let mut sketch = DistinctSketch::new(params.hll_precision, params.sketch_seed);
    let mut histogram: Option<BTreeMap<String, u64>> = Some(BTreeMap::new());
    let mut samples: Vec<String> = Vec::new();
    for v in col.non_null() {
        sketch.insert_value(v);
        let cell = v.to_cell();
        if let Some(h) = &mut histogram {
            *h.entry(cell.clone()).or_default() += 1;
            if h.len() > params.histogram_threshold {
                histogram = None;
            }
        }
        if samples.len() < SAMPLE_VALUES && !samples.contains(&cell) {
            samples.push(cell);
        }
    }

    let numeric: Vec<f64> = if col.kind().is_numeric() {
        col.non_null().filter_map(Value::as_f64).collect()
    } else {
        Vec::new()
    };
    let moments = population_moments(&numeric);
    let (min, max) = min_max(&numeric).unzip();

    ColumnProfile {
        name: col.name().to_owned(),
        inferred_type: col.kind(),
        completeness,
        approx_distinct: sketch.estimate().round() as u64,
        histogram,
        mean: moments.map(|m| m.0),
        stddev: moments.map(|m| m.1),
        min,
        max,
        sample_values: samples,
    }
}

/// Population mean and standard deviation (divide by `n`).
///
/// Deviations are accumulated relative to the first value, so a constant
/// column yields a mean equal to that constant and a deviation of exactly 0.
pub fn population_moments(xs: &[f64]) -> Option<(f64, f64)> {
    let first = *xs.first()?;
    let n = xs.len() as f64;
    let shift: f64 = xs.iter().map(|x| x - first).sum();
    let mean = first + shift / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn min_max(xs: &[f64]) -> Option<(f64, f64)> {
    let first = *xs.first()?;
    Some(xs.iter().fold((first, first), |(lo, hi), &x| (lo.min(x), hi.max(x))))
}

/// Distinct non-null values, estimated with the default sketch settings.
pub fn approx_distinct(col: &ColumnVector) -> f64 {
    approx_distinct_with(col, DistinctSketch::DEFAULT_PRECISION, DEFAULT_SKETCH_SEED)
}

pub fn approx_distinct_with(col: &ColumnVector, precision: u8, seed: u64) -> f64 {
    let mut s = DistinctSketch::new(precision, seed);
    for v in col.non_null() {
        s.insert_value(v);
    }
    s.estimate()
}

pub fn approx_quantile(col: &ColumnVector, q: f64) -> Result<f64> {
    approx_quantile_with(col, q, QuantileSketch::DEFAULT_K, DEFAULT_SKETCH_SEED)
}

pub fn approx_quantile_with(col: &ColumnVector, q: f64, k: usize, seed: u64) -> Result<f64> {
    if !col.kind().is_numeric() {
        return Err(Error::Domain(format!(
            "quantile of non-numeric column {:?}",
            col.name()
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("quantile {q} outside [0, 1]")));
    }
    let mut s = QuantileSketch::new(k, seed);
    for v in col.non_null().filter_map(Value::as_f64) {
        s.insert(v);
    }
    s.query(q)
        .ok_or_else(|| Error::Domain(format!("column {:?} has no values", col.name())))
}

/// Floats as JSON numbers with 17 significant digits.
mod sig17 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;

    fn raw(v: f64) -> Box<RawValue> {
        RawValue::from_string(format!("{v:.16e}")).expect("valid JSON number")
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        raw(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::deserialize(d)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(raw).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<f64>::deserialize(d)
        }
    }
}
