//! Tabular ingestion and the experiment data protocol: CSV loading with
//! one-hot encoding, the valued/assessment/held-out split, label-noise
//! injection, and the label-class partition the class samplers consume.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Target,
}

/// Schema of a delimited text file. Exactly one column must be the target.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetSchema {
    pub columns: Vec<ColumnKind>,
    pub delimiter: char,
    pub header: bool,
    pub missing_token: String,
}

impl DatasetSchema {
    pub fn new(columns: Vec<ColumnKind>) -> Result<Self> {
        let schema = Self {
            columns,
            delimiter: ',',
            header: false,
            missing_token: "?".to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let targets = self
            .columns
            .iter()
            .filter(|k| **k == ColumnKind::Target)
            .count();
        if targets != 1 {
            return Err(Error::InvalidConfig(format!(
                "schema must have exactly one target column, found {targets}"
            )));
        }
        Ok(())
    }

    /// Parses the JSON schema document. `columns` entries are
    /// `"numeric" | "categorical" | "target"`; an optional top-level
    /// `target` index marks that column as the target instead.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct SchemaFile {
            columns: Vec<String>,
            #[serde(default)]
            target: Option<usize>,
            #[serde(default)]
            delimiter: Option<String>,
            #[serde(default)]
            header: Option<bool>,
            #[serde(default)]
            missing_token: Option<String>,
        }
        let file: SchemaFile = serde_json::from_str(text)?;
        let mut columns = Vec::with_capacity(file.columns.len());
        for (idx, kind) in file.columns.iter().enumerate() {
            let kind = match kind.as_str() {
                "numeric" => ColumnKind::Numeric,
                "categorical" => ColumnKind::Categorical,
                "target" => ColumnKind::Target,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown column kind {other:?} at index {idx}"
                    )))
                }
            };
            columns.push(kind);
        }
        if let Some(t) = file.target {
            if t >= columns.len() {
                return Err(Error::InvalidConfig(format!(
                    "target index {t} outside {} columns",
                    columns.len()
                )));
            }
            columns[t] = ColumnKind::Target;
        }
        let delimiter = match file.delimiter.as_deref() {
            None => ',',
            Some(d) if d.chars().count() == 1 => d.chars().next().unwrap(),
            Some(d) => {
                return Err(Error::InvalidConfig(format!(
                    "delimiter must be a single character, got {d:?}"
                )))
            }
        };
        let schema = Self {
            columns,
            delimiter,
            header: file.header.unwrap_or(false),
            missing_token: file.missing_token.unwrap_or_else(|| "?".to_string()),
        };
        schema.validate()?;
        Ok(schema)
    }
}

/// A row that failed to parse, with its 1-based line number.
#[derive(Debug, Clone, Serialize)]
pub struct RowIssue {
    pub line: u64,
    pub reason: String,
}

/// Parsed dataset: numeric features (one-hot expanded), class-index labels.
/// Features are raw here; standardization happens at split time so held-out
/// rows never leak into the statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    pub rejected_rows: Vec<RowIssue>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// One-hot encoder over first-occurrence category order. Categories unseen
/// at fit time encode as all zeros.
#[derive(Debug, Clone, Default)]
struct OneHotEncoder {
    categories: Vec<String>,
}

impl OneHotEncoder {
    fn observe(&mut self, value: &str) {
        if !self.categories.iter().any(|c| c == value) {
            self.categories.push(value.to_string());
        }
    }

    fn encode(&self, value: &str, out: &mut Vec<f64>) {
        let hit = self.categories.iter().position(|c| c == value);
        for idx in 0..self.categories.len() {
            out.push(if hit == Some(idx) { 1.0 } else { 0.0 });
        }
    }
}

enum RawCell {
    Numeric(f64),
    Categorical(String),
}

/// Loads a delimited file under the schema. Numeric columns parse as reals
/// (a missing token rejects the row); categorical columns one-hot encode in
/// first-occurrence order, with the missing token kept as a category of its
/// own; the target column becomes a class index in first-occurrence order.
/// Malformed rows are skipped and reported with line numbers.
pub fn load_tabular(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .delimiter(schema.delimiter as u8)
        .flexible(true)
        .from_path(path)?;

    let categorical_count = schema
        .columns
        .iter()
        .filter(|k| **k == ColumnKind::Categorical)
        .count();
    let mut encoders = vec![OneHotEncoder::default(); categorical_count];
    let mut class_names: Vec<String> = Vec::new();
    let mut rows: Vec<(Vec<RawCell>, usize)> = Vec::new();
    let mut rejected = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != schema.columns.len() {
            rejected.push(RowIssue {
                line,
                reason: format!(
                    "expected {} columns, found {}",
                    schema.columns.len(),
                    record.len()
                ),
            });
            continue;
        }
        let mut cells = Vec::with_capacity(schema.columns.len());
        let mut label: Option<String> = None;
        let mut failure: Option<String> = None;
        for (kind, raw) in schema.columns.iter().zip(record.iter()) {
            let token = raw.trim();
            match kind {
                ColumnKind::Numeric => {
                    if token == schema.missing_token {
                        failure = Some(format!("missing value in numeric column: {token:?}"));
                        break;
                    }
                    match token.parse::<f64>() {
                        Ok(v) if v.is_finite() => cells.push(RawCell::Numeric(v)),
                        _ => {
                            failure = Some(format!("invalid numeric value {token:?}"));
                            break;
                        }
                    }
                }
                ColumnKind::Categorical => {
                    cells.push(RawCell::Categorical(token.to_string()));
                }
                ColumnKind::Target => label = Some(token.to_string()),
            }
        }
        if let Some(reason) = failure {
            rejected.push(RowIssue { line, reason });
            continue;
        }
        let label = label.expect("schema has a target column");
        let class = match class_names.iter().position(|c| *c == label) {
            Some(idx) => idx,
            None => {
                class_names.push(label);
                class_names.len() - 1
            }
        };
        let mut enc_idx = 0;
        for cell in &cells {
            if let RawCell::Categorical(v) = cell {
                encoders[enc_idx].observe(v);
                enc_idx += 1;
            }
        }
        rows.push((cells, class));
    }

    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (cells, class) in rows {
        let mut row = Vec::new();
        let mut enc_idx = 0;
        for cell in &cells {
            match cell {
                RawCell::Numeric(v) => row.push(*v),
                RawCell::Categorical(v) => {
                    encoders[enc_idx].encode(v, &mut row);
                    enc_idx += 1;
                }
            }
        }
        features.push(row);
        labels.push(class);
    }

    Ok(Dataset {
        features,
        labels,
        n_classes: class_names.len(),
        class_names,
        rejected_rows: rejected,
    })
}

/// How many rows go to the held-out slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeldoutSpec {
    Count(usize),
    /// Everything left after the valued and assessment slices.
    Remainder,
}

/// Split sizes plus the shuffle seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub valued_count: usize,
    pub assessment_count: usize,
    pub heldout: HeldoutSpec,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(valued: usize, assessment: usize, heldout: HeldoutSpec, seed: u64) -> Self {
        Self {
            valued_count: valued,
            assessment_count: assessment,
            heldout,
            seed,
        }
    }

    /// 178 rows: 89 valued, 49 assessment, 40 held-out.
    pub fn wine(seed: u64) -> Self {
        Self::new(89, 49, HeldoutSpec::Count(40), seed)
    }

    /// 286 rows: 143 valued, 43 assessment, 100 held-out.
    pub fn cancer(seed: u64) -> Self {
        Self::new(143, 43, HeldoutSpec::Count(100), seed)
    }

    /// 200 valued, 200 assessment, remainder held-out.
    pub fn adult(seed: u64) -> Self {
        Self::new(200, 200, HeldoutSpec::Remainder, seed)
    }
}

/// One standardized slice of a split.
#[derive(Debug, Clone)]
pub struct DataSlice {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl DataSlice {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DataSplit {
    pub valued: DataSlice,
    pub assessment: DataSlice,
    pub heldout: DataSlice,
}

/// Shuffles the rows with the spec's seed and slices them into
/// valued/assessment/held-out, then standardizes every feature to zero mean
/// and unit variance using statistics from the valued and assessment rows
/// only (the held-out slice never contributes).
///
/// Rows are put in a content-sorted order before the shuffle, so the split
/// depends only on the row multiset and the seed, not on input file order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<DataSplit> {
    let m = dataset.len();
    let heldout_count = match spec.heldout {
        HeldoutSpec::Count(c) => c,
        HeldoutSpec::Remainder => m
            .checked_sub(spec.valued_count + spec.assessment_count)
            .ok_or_else(|| oversubscribed(spec, m))?,
    };
    let total = spec.valued_count + spec.assessment_count + heldout_count;
    if total > m {
        return Err(oversubscribed(spec, m));
    }
    if spec.valued_count == 0 {
        return Err(Error::InvalidConfig("valued slice must be nonempty".into()));
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let row_a = (&dataset.features[a], dataset.labels[a]);
        let row_b = (&dataset.features[b], dataset.labels[b]);
        row_a
            .0
            .iter()
            .map(|v| v.total_cmp(&0.0))
            .cmp(row_b.0.iter().map(|v| v.total_cmp(&0.0)))
            .then_with(|| {
                row_a
                    .0
                    .iter()
                    .zip(row_b.0.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then(row_a.1.cmp(&row_b.1))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for t in (1..order.len()).rev() {
        let j = rng.random_range(0..=t);
        order.swap(t, j);
    }

    let valued_idx = &order[..spec.valued_count];
    let assessment_idx = &order[spec.valued_count..spec.valued_count + spec.assessment_count];
    let heldout_idx =
        &order[spec.valued_count + spec.assessment_count..spec.valued_count + spec.assessment_count + heldout_count];

    // Standardization statistics exclude the held-out rows.
    let width = dataset.feature_width();
    let mut mean = vec![0.0f64; width];
    let mut count = 0.0f64;
    for &idx in valued_idx.iter().chain(assessment_idx) {
        for (m, v) in mean.iter_mut().zip(&dataset.features[idx]) {
            *m += v;
        }
        count += 1.0;
    }
    for m in &mut mean {
        *m /= count.max(1.0);
    }
    let mut var = vec![0.0f64; width];
    for &idx in valued_idx.iter().chain(assessment_idx) {
        for ((s, m), v) in var.iter_mut().zip(&mean).zip(&dataset.features[idx]) {
            let d = v - m;
            *s += d * d;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|s| {
            let sd = (s / count.max(1.0)).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();

    let slice = |indices: &[usize]| -> DataSlice {
        let features = indices
            .iter()
            .map(|&idx| {
                dataset.features[idx]
                    .iter()
                    .zip(&mean)
                    .zip(&scale)
                    .map(|((v, m), s)| (v - m) * s)
                    .collect()
            })
            .collect();
        let labels = indices.iter().map(|&idx| dataset.labels[idx]).collect();
        DataSlice {
            features,
            labels,
            n_classes: dataset.n_classes,
        }
    };

    Ok(DataSplit {
        valued: slice(valued_idx),
        assessment: slice(assessment_idx),
        heldout: slice(heldout_idx),
    })
}

fn oversubscribed(spec: &SplitSpec, m: usize) -> Error {
    Error::InvalidConfig(format!(
        "split of {} + {} + {:?} rows oversubscribes a dataset of {m}",
        spec.valued_count, spec.assessment_count, spec.heldout
    ))
}

/// Which valued points had their labels flipped.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseMask {
    pub flipped: Vec<bool>,
    pub fraction: f64,
    pub seed: u64,
}

impl NoiseMask {
    pub fn flipped_count(&self) -> usize {
        self.flipped.iter().filter(|&&f| f).count()
    }
}

/// Flips the labels of `floor(fraction * len)` uniformly chosen points to a
/// uniformly chosen *different* label. Rejects single-class data (there is
/// no different label to flip to).
pub fn inject_label_noise(
    slice: &DataSlice,
    fraction: f64,
    seed: u64,
) -> Result<(DataSlice, NoiseMask)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "noise fraction must lie in [0, 1), got {fraction}"
        )));
    }
    if slice.n_classes < 2 {
        return Err(Error::InvalidConfig(
            "label noise needs at least two classes".into(),
        ));
    }
    let m = slice.len();
    let flips = (fraction * m as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    for t in 0..flips {
        let j = rng.random_range(t..m);
        order.swap(t, j);
    }
    let mut noisy = slice.clone();
    let mut flipped = vec![false; m];
    for &idx in &order[..flips] {
        let old = slice.labels[idx];
        let mut new = rng.random_range(0..slice.n_classes - 1);
        if new >= old {
            new += 1;
        }
        noisy.labels[idx] = new;
        flipped[idx] = true;
    }
    Ok((
        noisy,
        NoiseMask {
            flipped,
            fraction,
            seed,
        },
    ))
}

/// Partition of the slice's points by (observed) label: one union per class
/// present in the slice, ordered by class index.
pub fn class_partition(slice: &DataSlice) -> Result<Partition> {
    let mut unions: Vec<Vec<usize>> = vec![Vec::new(); slice.n_classes];
    for (idx, &label) in slice.labels.iter().enumerate() {
        unions[label].push(idx);
    }
    unions.retain(|u| !u.is_empty());
    Partition::new(unions, slice.len())
}

/// Deterministic Gaussian-blob classification dataset: one isotropic cloud
/// per class around a seeded random center. Feature standardization still
/// happens at split time, like any loaded dataset.
pub fn gaussian_blobs(
    class_sizes: &[usize],
    n_features: usize,
    center_spread: f64,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(class_sizes.len());
    for _ in class_sizes {
        let center: Vec<f64> = (0..n_features)
            .map(|_| center_spread * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        centers.push(center);
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (class, (&size, center)) in class_sizes.iter().zip(&centers).enumerate() {
        for _ in 0..size {
            let point: Vec<f64> = center
                .iter()
                .map(|c| c + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            features.push(point);
            labels.push(class);
        }
    }
    Dataset {
        features,
        labels,
        n_classes: class_sizes.len(),
        class_names: (0..class_sizes.len()).map(|c| c.to_string()).collect(),
        rejected_rows: Vec::new(),
    }
}

/// Built-in schema + split presets, keyed by dataset name.
pub fn preset(name: &str, seed: u64) -> Option<(DatasetSchema, SplitSpec)> {
    match name {
        "wine" => {
            let mut columns = vec![ColumnKind::Target];
            columns.extend(std::iter::repeat(ColumnKind::Numeric).take(13));
            Some((DatasetSchema::new(columns).unwrap(), SplitSpec::wine(seed)))
        }
        "cancer" => {
            let mut columns = vec![ColumnKind::Target];
            columns.extend(std::iter::repeat(ColumnKind::Categorical).take(9));
            Some((DatasetSchema::new(columns).unwrap(), SplitSpec::cancer(seed)))
        }
        "adult" => {
            let columns = vec![
                ColumnKind::Numeric,     // age
                ColumnKind::Categorical, // workclass
                ColumnKind::Numeric,     // fnlwgt
                ColumnKind::Categorical, // education
                ColumnKind::Numeric,     // education-num
                ColumnKind::Categorical, // marital-status
                ColumnKind::Categorical, // occupation
                ColumnKind::Categorical, // relationship
                ColumnKind::Categorical, // race
                ColumnKind::Categorical, // sex
                ColumnKind::Numeric,     // capital-gain
                ColumnKind::Numeric,     // capital-loss
                ColumnKind::Numeric,     // hours-per-week
                ColumnKind::Categorical, // native-country
                ColumnKind::Target,      // income
            ];
            Some((DatasetSchema::new(columns).unwrap(), SplitSpec::adult(seed)))
        }
        _ => None,
    }
}
