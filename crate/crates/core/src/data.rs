//! Sparse time-series data model, the reference grid and the dense
//! union-of-timestamps representation used by every computation.

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW_HOURS: f64 = 48.0;
pub const DEFAULT_GRID_POINTS: usize = 49;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "class" => Ok(Task::Classification),
            "regression" | "reg" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Classification => f.write_str("classification"),
            Task::Regression => f.write_str("regression"),
        }
    }
}

/// Target of one case: a binary class or a log length-of-stay in days.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(u8),
    Regression(f64),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Class(_) => Task::Classification,
            Label::Regression(_) => Task::Regression,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Label::Class(c) => c as f64,
            Label::Regression(y) => y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Hours since the start of the observation window.
    pub time: f64,
    pub value: f64,
}

impl Observation {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }
}

/// One data case: per-dimension observation lists plus its target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSeries {
    pub id: String,
    pub dims: Vec<Vec<Observation>>,
    pub label: Label,
}

impl SparseSeries {
    /// Builds a case and checks it against `window`.
    pub fn new(id: impl Into<String>, dims: Vec<Vec<Observation>>, label: Label, window: f64) -> Result<Self> {
        let series = Self {
            id: id.into(),
            dims,
            label,
        };
        series.validate(window)?;
        Ok(series)
    }

    /// Like [`SparseSeries::new`] but sorts each dimension by time first.
    pub fn from_unsorted(
        id: impl Into<String>,
        mut dims: Vec<Vec<Observation>>,
        label: Label,
        window: f64,
    ) -> Result<Self> {
        for obs in &mut dims {
            obs.sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        Self::new(id, dims, label, window)
    }

    pub fn num_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn num_observations(&self) -> usize {
        self.dims.iter().map(Vec::len).sum()
    }

    pub fn validate(&self, window: f64) -> Result<()> {
        for (d, obs) in self.dims.iter().enumerate() {
            let err = |reason: String| Error::InvalidSeries {
                case: self.id.clone(),
                dim: d,
                reason,
            };
            let mut prev = f64::NEG_INFINITY;
            for o in obs {
                if !o.time.is_finite() || !o.value.is_finite() {
                    return Err(err(format!("non-finite observation at t={}", o.time)));
                }
                if o.time < 0.0 || o.time > window {
                    return Err(err(format!("time {} outside window [0, {window}]", o.time)));
                }
                if o.time <= prev {
                    return Err(err(format!("times not strictly increasing ({prev} then {})", o.time)));
                }
                prev = o.time;
            }
        }
        if let Label::Regression(y) = self.label {
            if !y.is_finite() {
                return Err(Error::InvalidSeries {
                    case: self.id.clone(),
                    dim: 0,
                    reason: "regression target is not finite".into(),
                });
            }
        }
        Ok(())
    }
}

/// Evenly spaced reference time points covering the observation window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGrid {
    pub points: Vec<f64>,
    pub spacing: f64,
}

impl ReferenceGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn window(&self) -> f64 {
        *self.points.last().unwrap_or(&0.0)
    }
}

pub fn make_grid(window_length: f64, num_points: usize) -> Result<ReferenceGrid> {
    if num_points < 2 {
        return Err(Error::Config(format!(
            "reference grid needs at least 2 points, got {num_points}"
        )));
    }
    if !(window_length > 0.0) || !window_length.is_finite() {
        return Err(Error::Config(format!(
            "window length must be positive, got {window_length}"
        )));
    }
    let spacing = window_length / (num_points - 1) as f64;
    let mut points: Vec<f64> = (0..num_points).map(|k| k as f64 * spacing).collect();
    points[num_points - 1] = window_length;
    Ok(ReferenceGrid { points, spacing })
}

/// Union-of-timestamps representation of one or more cases.
///
/// Columns of `values`/`observed` are union timestamps; the columns of case
/// `i` are `ranges[i]`. Unobserved entries hold exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseBatch {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    pub times: Vec<f64>,
    pub values: Array2<f64>,
    pub observed: Array2<bool>,
    pub ranges: Vec<Range<usize>>,
}

/// Borrowed view of a single case inside a [`DenseBatch`].
#[derive(Clone, Copy, Debug)]
pub struct CaseView<'a> {
    pub id: &'a str,
    pub label: Label,
    pub times: &'a [f64],
    pub values: ArrayView2<'a, f64>,
    pub observed: ArrayView2<'a, bool>,
}

impl<'a> CaseView<'a> {
    pub fn num_dims(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_observations(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Observed (time, value) pairs of dimension `d`, in time order.
    pub fn observations(&self, d: usize) -> Vec<Observation> {
        self.times
            .iter()
            .enumerate()
            .filter(|&(u, _)| self.observed[[d, u]])
            .map(|(u, &t)| Observation::new(t, self.values[[d, u]]))
            .collect()
    }

    pub fn to_sparse(&self) -> SparseSeries {
        SparseSeries {
            id: self.id.to_string(),
            dims: (0..self.num_dims()).map(|d| self.observations(d)).collect(),
            label: self.label,
        }
    }
}

impl DenseBatch {
    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn num_dims(&self) -> usize {
        self.values.nrows()
    }

    pub fn case(&self, i: usize) -> CaseView<'_> {
        let r = self.ranges[i].clone();
        CaseView {
            id: &self.ids[i],
            label: self.labels[i],
            times: &self.times[r.clone()],
            values: self.values.slice(s![.., r.clone()]),
            observed: self.observed.slice(s![.., r]),
        }
    }

    pub fn cases(&self) -> impl Iterator<Item = CaseView<'_>> {
        (0..self.len()).map(move |i| self.case(i))
    }

    /// Densifies every case; all cases must share the same dimension count.
    pub fn from_cases<'a, I>(cases: I, window: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SparseSeries>,
    {
        let cases: Vec<&SparseSeries> = cases.into_iter().collect();
        let dims = cases.first().map_or(0, |c| c.num_dims());
        let mut case_times = Vec::with_capacity(cases.len());
        for case in &cases {
            case.validate(window)?;
            if case.num_dims() != dims {
                return Err(Error::InvalidSeries {
                    case: case.id.clone(),
                    dim: case.num_dims(),
                    reason: format!("expected {dims} dimensions"),
                });
            }
            let mut times: Vec<f64> = case.dims.iter().flatten().map(|o| o.time).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            case_times.push(times);
        }
        let total: usize = case_times.iter().map(Vec::len).sum();
        let mut values = Array2::zeros((dims, total));
        let mut observed = Array2::from_elem((dims, total), false);
        let mut ranges = Vec::with_capacity(cases.len());
        let mut offset = 0;
        for (case, times) in cases.iter().zip(&case_times) {
            for (d, obs) in case.dims.iter().enumerate() {
                // both lists are sorted, so a single merge pass suffices
                let mut u = 0;
                for o in obs {
                    while times[u] < o.time {
                        u += 1;
                    }
                    values[[d, offset + u]] = o.value;
                    observed[[d, offset + u]] = true;
                }
            }
            ranges.push(offset..offset + times.len());
            offset += times.len();
        }
        Ok(Self {
            ids: cases.iter().map(|c| c.id.clone()).collect(),
            labels: cases.iter().map(|c| c.label).collect(),
            times: case_times.into_iter().flatten().collect(),
            values,
            observed,
            ranges,
        })
    }

    pub fn sparsify(&self) -> Vec<SparseSeries> {
        self.cases().map(|c| c.to_sparse()).collect()
    }
}

/// Aligns one case onto the union of its observation timestamps.
pub fn densify(case: &SparseSeries, window: f64) -> Result<DenseBatch> {
    DenseBatch::from_cases(std::iter::once(case), window)
}

/// Per-dimension z-score statistics over observed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dims: usize) -> Self {
        Self {
            mean: vec![0.0; dims],
            std: vec![1.0; dims],
        }
    }

    pub fn fit(cases: &[SparseSeries]) -> Self {
        let dims = cases.first().map_or(0, |c| c.num_dims());
        let mut sum = vec![0.0; dims];
        let mut sq = vec![0.0; dims];
        let mut count = vec![0usize; dims];
        for case in cases {
            for (d, obs) in case.dims.iter().enumerate() {
                for o in obs {
                    sum[d] += o.value;
                    count[d] += 1;
                }
            }
        }
        let mean: Vec<f64> = (0..dims)
            .map(|d| if count[d] > 0 { sum[d] / count[d] as f64 } else { 0.0 })
            .collect();
        for case in cases {
            for (d, obs) in case.dims.iter().enumerate() {
                for o in obs {
                    sq[d] += (o.value - mean[d]).powi(2);
                }
            }
        }
        let std = (0..dims)
            .map(|d| {
                let sd = if count[d] > 1 {
                    (sq[d] / count[d] as f64).sqrt()
                } else {
                    0.0
                };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, case: &SparseSeries) -> SparseSeries {
        let dims = case
            .dims
            .iter()
            .enumerate()
            .map(|(d, obs)| {
                obs.iter()
                    .map(|o| Observation::new(o.time, (o.value - self.mean[d]) / self.std[d]))
                    .collect()
            })
            .collect();
        SparseSeries {
            id: case.id.clone(),
            dims,
            label: case.label,
        }
    }

    pub fn apply_all(&self, cases: &[SparseSeries]) -> Vec<SparseSeries> {
        cases.iter().map(|c| self.apply(c)).collect()
    }
}
