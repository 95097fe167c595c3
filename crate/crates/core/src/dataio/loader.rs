//! Long-format CSV datasets.
//!
//! * observations: `case_id,dim,time,value`, one row per measurement;
//! * labels: `case_id,label` (0/1 or log length-of-stay in days);
//! * dimension names: plain text, one name per line, line `i` naming dim `i`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use crate::data::{DenseBatch, Label, Observation, SparseSeries, Task};
use crate::error::{Error, Result};

pub const OBS_HEADER: [&str; 4] = ["case_id", "dim", "time", "value"];
pub const LABEL_HEADER: [&str; 2] = ["case_id", "label"];

/// The twelve physiological variables of the ICU extract, in index order.
pub const ICU_VARIABLES: [&str; 12] = [
    "SpO2", "HR", "RR", "SBP", "DBP", "Temp", "TGCS", "CRR", "UO", "FiO2", "Glucose", "pH",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub dim_names: Vec<String>,
    pub task: Task,
    pub window: f64,
}

impl Schema {
    pub fn new(dim_names: Vec<String>, task: Task, window: f64) -> Self {
        Self {
            dim_names,
            task,
            window,
        }
    }

    pub fn num_dims(&self) -> usize {
        self.dim_names.len()
    }

    pub fn read_dim_names(path: &Path) -> Result<Vec<String>> {
        let text = fs::read_to_string(path)?;
        let names: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if names.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: "no dimension names".into(),
            });
        }
        Ok(names)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cases: Vec<SparseSeries>,
    pub schema: Schema,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimSummary {
    pub name: String,
    pub observations: usize,
    /// Fraction of union timestamps at which this dimension is missing.
    pub missing_fraction: f64,
    pub rate_per_hour: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n_cases: usize,
    pub n_observations: usize,
    pub dims: Vec<DimSummary>,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{} cases, {} observations", self.n_cases, self.n_observations)?;
        writeln!(f, "{:<10} {:>10} {:>9} {:>9}", "dim", "obs", "missing", "rate/h")?;
        for d in &self.dims {
            writeln!(
                f,
                "{:<10} {:>10} {:>8.2}% {:>9.3}",
                d.name,
                d.observations,
                100.0 * d.missing_fraction,
                d.rate_per_hour
            )?;
        }
        Ok(())
    }
}

pub fn summarize(dataset: &Dataset) -> Result<DatasetSummary> {
    let dims = dataset.schema.num_dims();
    let batch = DenseBatch::from_cases(&dataset.cases, dataset.schema.window)?;
    let union = batch.times.len();
    let mut out = Vec::with_capacity(dims);
    for d in 0..dims {
        let obs = batch.observed.row(d).iter().filter(|&&o| o).count();
        out.push(DimSummary {
            name: dataset.schema.dim_names[d].clone(),
            observations: obs,
            missing_fraction: if union == 0 {
                1.0
            } else {
                1.0 - obs as f64 / union as f64
            },
            rate_per_hour: obs as f64 / (dataset.cases.len().max(1) as f64 * dataset.schema.window),
        });
    }
    Ok(DatasetSummary {
        n_cases: dataset.cases.len(),
        n_observations: dataset.cases.iter().map(|c| c.num_observations()).sum(),
        dims: out,
    })
}

/// What the loader had to skip or overwrite.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub duplicate_observations: usize,
    pub unlabeled_cases: Vec<String>,
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().map(str::trim).collect();
    if got != want {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header '{}', found '{}'", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    record: &csv::StringRecord,
    idx: usize,
    what: &str,
) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("missing {what} column"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: format!("cannot parse {what} '{raw}'"),
    })
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?)
}

fn read_labels(path: &Path, task: Task) -> Result<BTreeMap<String, Label>> {
    let mut rdr = reader(path)?;
    check_header(path, rdr.headers()?, &LABEL_HEADER)?;
    let mut labels = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: String = parse_field(path, line, &rec, 0, "case_id")?;
        let label = match task {
            Task::Classification => {
                let c: u8 = parse_field(path, line, &rec, 1, "label")?;
                if c > 1 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        reason: format!("class label must be 0 or 1, got {c}"),
                    });
                }
                Label::Class(c)
            }
            Task::Regression => {
                let y: f64 = parse_field(path, line, &rec, 1, "label")?;
                if !y.is_finite() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        reason: "regression target is not finite".into(),
                    });
                }
                Label::Regression(y)
            }
        };
        labels.insert(id, label);
    }
    Ok(labels)
}

/// Loads and validates a dataset. Cases are returned ordered by id.
pub fn load_dataset(obs_path: &Path, labels_path: &Path, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let labels = read_labels(labels_path, schema.task)?;
    let dims = schema.num_dims();
    let mut raw: BTreeMap<String, Vec<Vec<Observation>>> = BTreeMap::new();
    let mut rdr = reader(obs_path)?;
    check_header(obs_path, rdr.headers()?, &OBS_HEADER)?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: String = parse_field(obs_path, line, &rec, 0, "case_id")?;
        let dim: usize = parse_field(obs_path, line, &rec, 1, "dim")?;
        let time: f64 = parse_field(obs_path, line, &rec, 2, "time")?;
        let value: f64 = parse_field(obs_path, line, &rec, 3, "value")?;
        if dim >= dims {
            return Err(Error::Parse {
                path: obs_path.to_path_buf(),
                line,
                reason: format!("unknown dimension index {dim} (schema has {dims})"),
            });
        }
        if !time.is_finite() || !value.is_finite() {
            return Err(Error::Parse {
                path: obs_path.to_path_buf(),
                line,
                reason: "non-finite time or value".into(),
            });
        }
        raw.entry(id).or_insert_with(|| vec![Vec::new(); dims])[dim].push(Observation::new(time, value));
    }

    let mut report = LoadReport::default();
    for id in raw.keys() {
        if !labels.contains_key(id) {
            report.unlabeled_cases.push(id.clone());
        }
    }
    let mut cases = Vec::with_capacity(labels.len());
    for (id, label) in labels {
        let mut per_dim = raw.remove(&id).unwrap_or_else(|| vec![Vec::new(); dims]);
        for obs in &mut per_dim {
            // stable sort, then keep the last row of each equal-time run
            obs.sort_by(|a, b| a.time.total_cmp(&b.time));
            let mut dedup: Vec<Observation> = Vec::with_capacity(obs.len());
            for o in obs.drain(..) {
                match dedup.last_mut() {
                    Some(prev) if prev.time == o.time => {
                        *prev = o;
                        report.duplicate_observations += 1;
                    }
                    _ => dedup.push(o),
                }
            }
            *obs = dedup;
        }
        cases.push(SparseSeries::new(id, per_dim, label, schema.window)?);
    }
    if report.duplicate_observations > 0 {
        warn!(
            "{} duplicate (case, dim, time) rows; kept the last of each",
            report.duplicate_observations
        );
    }
    if !report.unlabeled_cases.is_empty() {
        warn!(
            "rejected {} cases without labels: {}",
            report.unlabeled_cases.len(),
            report.unlabeled_cases.join(", ")
        );
    }
    let dataset = Dataset {
        cases,
        schema: schema.clone(),
    };
    if !dataset.cases.is_empty() {
        info!("loaded dataset\n{}", summarize(&dataset)?);
    }
    Ok((dataset, report))
}

/// Paths of the three files making up a dataset on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPaths {
    pub observations: PathBuf,
    pub labels: PathBuf,
    pub dim_names: PathBuf,
}

impl DatasetPaths {
    /// `<dir>/observations.csv`, `<dir>/labels.csv`, `<dir>/dims.txt`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            observations: dir.join("observations.csv"),
            labels: dir.join("labels.csv"),
            dim_names: dir.join("dims.txt"),
        }
    }
}

pub fn write_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    for p in [&paths.observations, &paths.labels, &paths.dim_names] {
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut obs = csv::Writer::from_path(&paths.observations)?;
    obs.write_record(OBS_HEADER)?;
    let mut labels = csv::Writer::from_path(&paths.labels)?;
    labels.write_record(LABEL_HEADER)?;
    for case in &dataset.cases {
        for (d, list) in case.dims.iter().enumerate() {
            for o in list {
                obs.write_record([
                    case.id.as_str(),
                    &d.to_string(),
                    &o.time.to_string(),
                    &o.value.to_string(),
                ])?;
            }
        }
        let label = match case.label {
            Label::Class(c) => c.to_string(),
            Label::Regression(y) => y.to_string(),
        };
        labels.write_record([case.id.as_str(), &label])?;
    }
    obs.flush()?;
    labels.flush()?;
    let mut names = fs::File::create(&paths.dim_names)?;
    for n in &dataset.schema.dim_names {
        writeln!(names, "{n}")?;
    }
    Ok(())
}

pub fn load_from_paths(paths: &DatasetPaths, task: Task, window: f64) -> Result<(Dataset, LoadReport)> {
    let names = Schema::read_dim_names(&paths.dim_names)?;
    load_dataset(&paths.observations, &paths.labels, &Schema::new(names, task, window))
}
