//! Labeled datasets: synthetic Gaussian classes, CSV ingestion, known/unknown
//! class splits and class-combination enumeration.
//!
//! CSV files are UTF-8, comma separated, with a header row. One column holds
//! the class label (default name `label`); every other column is a numeric
//! feature. Labels that all parse as numbers are indexed in numeric order,
//! otherwise in order of first appearance.

use std::collections::HashMap;
use std::path::Path;

use itertools::Itertools;

use crate::error::{NusaError, Result};
use crate::linalg::DenseVector;
use crate::rng::Rng;

pub const DEFAULT_LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<DenseVector>,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<DenseVector>,
        labels: Vec<usize>,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(NusaError::DimensionMismatch {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        if let Some(first) = features.first() {
            if let Some(bad) = features.iter().find(|f| f.dim() != first.dim()) {
                return Err(NusaError::DimensionMismatch {
                    expected: first.dim(),
                    actual: bad.dim(),
                });
            }
        }
        let observed = labels.iter().max().map_or(0, |m| m + 1);
        let num_classes = match &class_names {
            Some(names) => {
                if observed > names.len() {
                    return Err(NusaError::LabelOutOfRange {
                        label: observed - 1,
                        num_classes: names.len(),
                    });
                }
                names.len()
            }
            None => observed,
        };
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Feature dimension, 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, DenseVector::dim)
    }

    pub fn features(&self) -> &[DenseVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn class_name(&self, label: usize) -> String {
        self.class_names
            .as_ref()
            .and_then(|n| n.get(label).cloned())
            .unwrap_or_else(|| label.to_string())
    }

    /// Samples at `indices`, keeping labels and class names.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    /// Concatenation; both sides must share dimension and class indexing.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        let mut features = self.features.clone();
        features.extend(other.features.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend(&other.labels);
        let names = if self.num_classes >= other.num_classes {
            self.class_names.clone()
        } else {
            other.class_names.clone()
        };
        LabeledDataset::new(features, labels, names)
    }

    pub fn save_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv_string(label_column)?.as_bytes())
    }

    pub fn to_csv_string(&self, label_column: &str) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push(label_column.to_string());
        w.write_record(&header).map_err(csv_write_err)?;
        for (x, &y) in self.features.iter().zip(&self.labels) {
            let mut row: Vec<String> = x.as_slice().iter().map(f64::to_string).collect();
            row.push(self.class_name(y));
            w.write_record(&row).map_err(csv_write_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| NusaError::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_write_err(e: csv::Error) -> NusaError {
    NusaError::invalid(format!("csv write failed: {e}"))
}

/// Isotropic unit-variance Gaussian classes with well-separated means.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    means: Vec<DenseVector>,
}

const MAX_MEAN_RETRIES: usize = 10_000;

impl GaussianMixture {
    /// Means are `separation` times random unit directions, redrawn until
    /// every pair is at least `separation / 2` apart.
    pub fn new(num_classes: usize, dim: usize, separation: f64, rng: &mut Rng) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(NusaError::invalid("num_classes and dim must be at least 1"));
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(NusaError::invalid(format!(
                "separation must be positive, got {separation}"
            )));
        }
        let mut means: Vec<DenseVector> = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let mut placed = false;
            for _ in 0..MAX_MEAN_RETRIES {
                let dir: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let n = crate::linalg::norm(&dir);
                if n == 0.0 {
                    continue;
                }
                let mean: Vec<f64> = dir.iter().map(|d| separation * d / n).collect();
                let far_enough = means.iter().all(|m| {
                    let d2: f64 = m
                        .as_slice()
                        .iter()
                        .zip(&mean)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    d2.sqrt() >= separation / 2.0
                });
                if far_enough {
                    means.push(DenseVector::from_vec_unchecked(mean));
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(NusaError::invalid(format!(
                    "could not place class {c} mean after {MAX_MEAN_RETRIES} draws; \
                     use a larger dim or fewer classes"
                )));
            }
        }
        Ok(GaussianMixture { means })
    }

    pub fn means(&self) -> &[DenseVector] {
        &self.means
    }

    /// `samples_per_class` draws per class, class by class.
    pub fn sample(&self, samples_per_class: usize, rng: &mut Rng) -> Result<LabeledDataset> {
        if samples_per_class == 0 {
            return Err(NusaError::invalid("samples_per_class must be at least 1"));
        }
        let mut features = Vec::with_capacity(self.means.len() * samples_per_class);
        let mut labels = Vec::with_capacity(features.capacity());
        for (c, mean) in self.means.iter().enumerate() {
            for _ in 0..samples_per_class {
                let x = mean.as_slice().iter().map(|m| m + rng.normal()).collect();
                features.push(DenseVector::from_vec_unchecked(x));
                labels.push(c);
            }
        }
        LabeledDataset::new(features, labels, None)
    }
}

pub fn generate_gaussian_classes(
    num_classes: usize,
    dim: usize,
    separation: f64,
    samples_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = Rng::new(seed);
    GaussianMixture::new(num_classes, dim, separation, &mut rng)?
        .sample(samples_per_class, &mut rng)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| NusaError::io(path, e))
}

pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    parse_csv(&read_text(path)?, label_column)
}

struct RawTable {
    header: Vec<String>,
    /// (1-based line number, cells)
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(text: &str) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| NusaError::Parse {
            row: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(NusaError::Parse {
            row: 1,
            column: String::new(),
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| NusaError::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            column: String::new(),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != header.len() {
            return Err(NusaError::Parse {
                row: line,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(RawTable { header, rows })
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(NusaError::Parse {
            row: line,
            column: column.to_string(),
            message: format!("`{cell}` is not a finite number"),
        }),
    }
}

fn parse_features(table: &RawTable, skip: Option<usize>) -> Result<Vec<DenseVector>> {
    table
        .rows
        .iter()
        .map(|(line, cells)| {
            let x = cells
                .iter()
                .enumerate()
                .filter(|(j, _)| Some(*j) != skip)
                .map(|(j, c)| parse_cell(c, *line, &table.header[j]))
                .collect::<Result<Vec<_>>>()?;
            Ok(DenseVector::from_vec_unchecked(x))
        })
        .collect()
}

/// Parses CSV text; see the module docs for the format.
pub fn parse_csv(text: &str, label_column: &str) -> Result<LabeledDataset> {
    let table = read_table(text)?;
    let label_idx = table
        .header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| NusaError::Parse {
            row: 1,
            column: label_column.to_string(),
            message: format!("label column `{label_column}` not found in header"),
        })?;
    if table.header.len() < 2 {
        return Err(NusaError::Parse {
            row: 1,
            column: label_column.to_string(),
            message: "no feature columns".into(),
        });
    }
    let features = parse_features(&table, Some(label_idx))?;
    let raw: Vec<&str> = table
        .rows
        .iter()
        .map(|(_, cells)| cells[label_idx].as_str())
        .collect();
    let (labels, names) = index_labels(&raw);
    LabeledDataset::new(features, labels, Some(names))
}

/// Reads feature rows, dropping `label_column` when the header has it.
pub fn load_features_csv(path: &Path, label_column: &str) -> Result<Vec<DenseVector>> {
    let table = read_table(&read_text(path)?)?;
    let skip = table.header.iter().position(|h| h == label_column);
    parse_features(&table, skip)
}

fn index_labels(raw: &[&str]) -> (Vec<usize>, Vec<String>) {
    let numeric: Option<Vec<f64>> = raw.iter().map(|s| s.parse::<f64>().ok()).collect();
    let mut names: Vec<String> = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    match numeric {
        Some(values) if !values.is_empty() => {
            let mut order: Vec<usize> = (0..raw.len()).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let mut last: Option<f64> = None;
            let mut by_value: Vec<(f64, usize)> = Vec::new();
            for i in order {
                if last != Some(values[i]) {
                    by_value.push((values[i], names.len()));
                    names.push(raw[i].to_string());
                    last = Some(values[i]);
                }
            }
            let labels = values
                .iter()
                .map(|v| {
                    let pos = by_value.partition_point(|(u, _)| u < v);
                    by_value[pos].1
                })
                .collect();
            (labels, names)
        }
        _ => {
            let labels = raw
                .iter()
                .map(|&s| {
                    *lookup.entry(s).or_insert_with(|| {
                        names.push(s.to_string());
                        names.len() - 1
                    })
                })
                .collect();
            (labels, names)
        }
    }
}

/// Known/unknown class partition for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub known_classes: Vec<usize>,
    pub unknown_classes: Vec<usize>,
    pub train_fraction: f64,
    pub rng_seed: u64,
}

impl SplitSpec {
    /// Unknown classes are the complement of `known` in `0..num_classes`.
    pub fn new(
        num_classes: usize,
        known: &[usize],
        train_fraction: f64,
        rng_seed: u64,
    ) -> Result<Self> {
        let mut known_classes = known.to_vec();
        known_classes.sort_unstable();
        known_classes.dedup();
        if known_classes.len() != known.len() {
            return Err(NusaError::invalid("known classes contain duplicates"));
        }
        if known_classes.len() < 2 {
            return Err(NusaError::invalid(
                "at least two known classes are required",
            ));
        }
        if let Some(&c) = known_classes.iter().find(|&&c| c >= num_classes) {
            return Err(NusaError::LabelOutOfRange {
                label: c,
                num_classes,
            });
        }
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(NusaError::invalid(format!(
                "train_fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let unknown_classes = (0..num_classes)
            .filter(|c| known_classes.binary_search(c).is_err())
            .collect();
        Ok(SplitSpec {
            known_classes,
            unknown_classes,
            train_fraction,
            rng_seed,
        })
    }
}

/// Train / test partitions. `train` and `test_inliers` use labels remapped to
/// `0..known.len()`; `test_outliers` keeps the original labels.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: LabeledDataset,
    pub test_inliers: LabeledDataset,
    pub test_outliers: LabeledDataset,
    pub train_indices: Vec<usize>,
    pub inlier_indices: Vec<usize>,
    pub outlier_indices: Vec<usize>,
}

pub fn split_known_unknown(data: &LabeledDataset, spec: &SplitSpec) -> Result<Split> {
    if let Some(&c) = spec
        .known_classes
        .iter()
        .chain(&spec.unknown_classes)
        .find(|&&c| c >= data.num_classes())
    {
        return Err(NusaError::LabelOutOfRange {
            label: c,
            num_classes: data.num_classes(),
        });
    }
    let mut rng = Rng::new(spec.rng_seed);
    let mut train_indices = Vec::new();
    let mut inlier_indices = Vec::new();
    let mut remap = vec![None; data.num_classes()];
    for (new, &class) in spec.known_classes.iter().enumerate() {
        remap[class] = Some(new);
        let mut members: Vec<usize> = (0..data.len())
            .filter(|&i| data.labels[i] == class)
            .collect();
        if members.len() < 2 {
            return Err(NusaError::invalid(format!(
                "known class {} has {} samples; at least 2 are needed",
                data.class_name(class),
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        let n = members.len();
        let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        train_indices.extend_from_slice(&members[..n_train]);
        inlier_indices.extend_from_slice(&members[n_train..]);
    }
    train_indices.sort_unstable();
    inlier_indices.sort_unstable();
    let outlier_indices: Vec<usize> = (0..data.len())
        .filter(|&i| spec.unknown_classes.contains(&data.labels[i]))
        .collect();

    let known_names: Vec<String> = spec
        .known_classes
        .iter()
        .map(|&c| data.class_name(c))
        .collect();
    let remapped = |indices: &[usize]| -> Result<LabeledDataset> {
        LabeledDataset::new(
            indices.iter().map(|&i| data.features[i].clone()).collect(),
            indices
                .iter()
                .map(|&i| remap[data.labels[i]].expect("index is from a known class"))
                .collect(),
            Some(known_names.clone()),
        )
    };
    Ok(Split {
        train: remapped(&train_indices)?,
        test_inliers: remapped(&inlier_indices)?,
        test_outliers: data.subset(&outlier_indices),
        train_indices,
        inlier_indices,
        outlier_indices,
    })
}

/// All `num_known`-subsets of `0..num_classes` in lexicographic order.
pub fn enumerate_class_combinations(
    num_classes: usize,
    num_known: usize,
) -> Result<Vec<Vec<usize>>> {
    if num_known < 2 || num_known + 1 > num_classes {
        return Err(NusaError::invalid(format!(
            "num_known must be in 2..={} for {num_classes} classes, got {num_known}",
            num_classes.saturating_sub(1)
        )));
    }
    Ok((0..num_classes).combinations(num_known).collect())
}
