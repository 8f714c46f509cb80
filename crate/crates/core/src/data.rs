//! Historical dataset, feature and assay schemas, CSV ingestion and the
//! per-feature statistics used by the similarity kernel.
//!
//! Records are stored row-wise for export and column-wise for the distance
//! kernel, which touches one feature across all records at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a feature in [`Dataset::features`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureId(pub usize);

/// Index of an assay in [`Dataset::assays`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AssayId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Precomputed model prediction, known for the candidate from the start.
    Predictor,
    /// Value revealed by running an assay.
    AssayOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    /// Population variance (divisor N).
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Per-feature weight in the distance.
    pub lambda: f64,
    /// Candidates must supply this predictor when a session is created.
    pub required: bool,
    pub stats: Option<FeatureStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssaySpec {
    pub name: String,
    pub outcome_feature: FeatureId,
    /// One non-negative amount per cost dimension.
    pub cost: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalRecord {
    pub record_id: String,
    /// One value per declared feature, in feature order.
    pub values: Vec<f64>,
    pub target: Option<f64>,
}

/// Closed desirable interval `[min, max]` for the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRange {
    pub min: f64,
    pub max: f64,
}

impl GoalRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

/// Everything needed to assemble a [`Dataset`].
#[derive(Debug, Clone)]
pub struct DatasetParts {
    pub features: Vec<FeatureSpec>,
    pub assays: Vec<AssaySpec>,
    pub records: Vec<HistoricalRecord>,
    pub target_name: String,
    pub goal_range: GoalRange,
    pub cost_dims: Vec<String>,
    /// Assay whose outcome coincides with the target, if any.
    pub target_assay: Option<AssayId>,
}

/// Immutable table of historical records.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<FeatureSpec>,
    assays: Vec<AssaySpec>,
    records: Vec<HistoricalRecord>,
    target_name: String,
    goal_range: GoalRange,
    cost_dims: Vec<String>,
    target_assay: Option<AssayId>,
    columns: Vec<Vec<f64>>,
    target_index: Vec<usize>,
    target_values: Vec<f64>,
}

impl Dataset {
    /// Assembles a dataset. Only the record shape is checked here; semantic
    /// problems are reported by [`validate_dataset`].
    pub fn from_parts(parts: DatasetParts) -> Result<Self> {
        let n_features = parts.features.len();
        for (i, record) in parts.records.iter().enumerate() {
            if record.values.len() != n_features {
                return Err(Error::InvalidDataset(format!(
                    "record {} has {} values, expected {}",
                    i + 1,
                    record.values.len(),
                    n_features
                )));
            }
        }
        let columns = (0..n_features)
            .map(|k| parts.records.iter().map(|r| r.values[k]).collect())
            .collect();
        let (target_index, target_values) = parts
            .records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.target.map(|g| (i, g)))
            .unzip();
        Ok(Self {
            features: parts.features,
            assays: parts.assays,
            records: parts.records,
            target_name: parts.target_name,
            goal_range: parts.goal_range,
            cost_dims: parts.cost_dims,
            target_assay: parts.target_assay,
            columns,
            target_index,
            target_values,
        })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature(&self, id: FeatureId) -> &FeatureSpec {
        &self.features[id.0]
    }

    pub fn assays(&self) -> &[AssaySpec] {
        &self.assays
    }

    pub fn assay(&self, id: AssayId) -> &AssaySpec {
        &self.assays[id.0]
    }

    pub fn n_assays(&self) -> usize {
        self.assays.len()
    }

    pub fn records(&self) -> &[HistoricalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn goal_range(&self) -> GoalRange {
        self.goal_range
    }

    pub fn cost_dims(&self) -> &[String] {
        &self.cost_dims
    }

    pub fn target_assay(&self) -> Option<AssayId> {
        self.target_assay
    }

    /// Values of one feature across all records.
    pub fn column(&self, id: FeatureId) -> &[f64] {
        &self.columns[id.0]
    }

    /// Zero-based indices of records whose target is available (I_g).
    pub fn target_index(&self) -> &[usize] {
        &self.target_index
    }

    /// Target values aligned with [`Dataset::target_index`].
    pub fn target_values(&self) -> &[f64] {
        &self.target_values
    }

    pub fn feature_by_name(&self, name: &str) -> Option<FeatureId> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .map(FeatureId)
    }

    pub fn assay_by_name(&self, name: &str) -> Option<AssayId> {
        self.assays.iter().position(|a| a.name == name).map(AssayId)
    }

    /// Assay that reveals `feature`, if any.
    pub fn assay_for_feature(&self, feature: FeatureId) -> Option<AssayId> {
        self.assays
            .iter()
            .position(|a| a.outcome_feature == feature)
            .map(AssayId)
    }

    pub fn stats_ready(&self) -> bool {
        self.features
            .iter()
            .all(|f| f.stats.is_some_and(|s| s.variance > 0.0))
    }

    /// Variance of a feature; panics if stats were not computed.
    pub fn variance(&self, id: FeatureId) -> f64 {
        self.features[id.0]
            .stats
            .expect("feature statistics not computed")
            .variance
    }

    /// Computes population mean and variance for every feature column.
    pub fn with_feature_stats(self) -> Result<Self> {
        compute_feature_stats(self)
    }

    /// Indices where the target is available (I_g).
    pub fn target_index_set(&self) -> BTreeSet<usize> {
        target_index_set(self)
    }
}

/// Populates per-feature mean and population variance. Constant columns
/// are an error because the distance divides by the variance.
pub fn compute_feature_stats(mut dataset: Dataset) -> Result<Dataset> {
    let n = dataset.records.len();
    if n == 0 {
        return Err(Error::EmptyTable);
    }
    for (spec, column) in dataset.features.iter_mut().zip(&dataset.columns) {
        let (lo, hi) = column
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if lo == hi {
            return Err(Error::ZeroVariance(spec.name.clone()));
        }
        let mean = column.iter().sum::<f64>() / n as f64;
        let variance = column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if !(variance > 0.0) {
            return Err(Error::ZeroVariance(spec.name.clone()));
        }
        spec.stats = Some(FeatureStats { mean, variance });
    }
    Ok(dataset)
}

/// Zero-based record indices with an available target.
pub fn target_index_set(dataset: &Dataset) -> BTreeSet<usize> {
    dataset.target_index.iter().copied().collect()
}

/// Outcome of [`validate_dataset`]. Record numbers in messages are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            writeln!(f, "dataset OK")?;
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Checks every dataset invariant and lists the violations.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let v = &mut report.violations;
    let n = dataset.records.len();

    if n == 0 {
        v.push("dataset has no records".into());
    }
    if dataset.target_index.is_empty() {
        v.push(format!(
            "no record carries target `{}`",
            dataset.target_name
        ));
    }
    let GoalRange { min, max } = dataset.goal_range;
    if !(min <= max) {
        v.push(format!("goal range [{min}, {max}] is not well-ordered"));
    }

    let mut names = BTreeSet::new();
    for spec in &dataset.features {
        if !names.insert(spec.name.as_str()) {
            v.push(format!("duplicate feature `{}`", spec.name));
        }
        if !(spec.lambda >= 0.0) || !spec.lambda.is_finite() {
            v.push(format!(
                "feature `{}` has invalid weight {}",
                spec.name, spec.lambda
            ));
        }
        match spec.stats {
            None => v.push(format!("feature `{}` has no statistics", spec.name)),
            Some(s) if !(s.variance > 0.0) => {
                v.push(format!("feature `{}` has zero variance", spec.name))
            }
            Some(_) => {}
        }
        if spec.kind == FeatureKind::Predictor && spec.name == dataset.target_name {
            v.push(format!(
                "target `{}` is declared as a predictor feature",
                spec.name
            ));
        }
    }

    let q = dataset.cost_dims.len();
    let mut outcome_owner: BTreeMap<usize, &str> = BTreeMap::new();
    let mut assay_names = BTreeSet::new();
    for assay in &dataset.assays {
        if !assay_names.insert(assay.name.as_str()) {
            v.push(format!("duplicate assay `{}`", assay.name));
        }
        match dataset.features.get(assay.outcome_feature.0) {
            None => v.push(format!(
                "assay `{}` references unknown feature #{}",
                assay.name, assay.outcome_feature.0
            )),
            Some(f) if f.kind != FeatureKind::AssayOutcome => v.push(format!(
                "assay `{}` reveals `{}`, which is not an assay outcome",
                assay.name, f.name
            )),
            Some(_) => {
                if let Some(other) = outcome_owner.insert(assay.outcome_feature.0, &assay.name) {
                    v.push(format!(
                        "assays `{other}` and `{}` reveal the same feature",
                        assay.name
                    ));
                }
            }
        }
        if assay.cost.len() != q {
            v.push(format!(
                "assay `{}` has {} cost components, expected {q}",
                assay.name,
                assay.cost.len()
            ));
        }
        if assay.cost.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            v.push(format!(
                "assay `{}` has a negative cost component",
                assay.name
            ));
        }
    }

    for (i, record) in dataset.records.iter().enumerate() {
        if record.values.iter().any(|x| !x.is_finite()) {
            v.push(format!("record {} has a non-finite feature value", i + 1));
        }
        if record.target.is_some_and(|g| !g.is_finite()) {
            v.push(format!("record {} has a non-finite target", i + 1));
        }
    }

    if n > 0 && !dataset.target_index.is_empty() && dataset.target_index.len() * 10 < n {
        report.warnings.push(format!(
            "only {} of {n} records carry a target; the weighted variance may be underestimated",
            dataset.target_index.len()
        ));
    }
    report
}

// ---------------------------------------------------------------------------
// Schema and CSV ingestion

fn default_lambda() -> f64 {
    1.0
}

fn default_id_column() -> Option<String> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureColumn {
    pub column: String,
    pub kind: FeatureKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssayColumn {
    pub name: String,
    /// Feature column revealed by the assay.
    pub outcome: String,
    pub cost: Vec<f64>,
}

/// Ingestion configuration, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub target: String,
    pub g_min: f64,
    pub g_max: f64,
    #[serde(default = "default_id_column", skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    #[serde(default)]
    pub cost_dims: Vec<String>,
    #[serde(default, rename = "feature")]
    pub features: Vec<FeatureColumn>,
    #[serde(default, rename = "assay")]
    pub assays: Vec<AssayColumn>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    /// Schema that reproduces `dataset` when paired with [`write_csv`].
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Schema {
            target: dataset.target_name.clone(),
            g_min: dataset.goal_range.min,
            g_max: dataset.goal_range.max,
            id_column: Some(RECORD_ID_COLUMN.to_string()),
            cost_dims: dataset.cost_dims.clone(),
            features: dataset
                .features
                .iter()
                .map(|f| FeatureColumn {
                    column: f.name.clone(),
                    kind: f.kind,
                    lambda: f.lambda,
                    required: f.required,
                })
                .collect(),
            assays: dataset
                .assays
                .iter()
                .map(|a| AssayColumn {
                    name: a.name.clone(),
                    outcome: dataset.features[a.outcome_feature.0].name.clone(),
                    cost: a.cost.clone(),
                })
                .collect(),
        }
    }

    fn cost_dims_or_default(&self) -> Vec<String> {
        if !self.cost_dims.is_empty() {
            return self.cost_dims.clone();
        }
        let q = self.assays.first().map_or(1, |a| a.cost.len());
        if q == 1 {
            vec!["cost".into()]
        } else {
            (1..=q).map(|i| format!("cost{i}")).collect()
        }
    }
}

const RECORD_ID_COLUMN: &str = "record_id";

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a CSV table according to `schema`. Statistics are not computed.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, path, schema)
}

/// Parses CSV from any reader; `path` only labels errors.
pub fn read_dataset(input: impl std::io::Read, path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let target_col = find(&schema.target)?;
    let id_col = schema.id_column.as_deref().map(find).transpose()?;
    let feature_cols = schema
        .features
        .iter()
        .map(|f| find(&f.column))
        .collect::<Result<Vec<_>>>()?;

    let features: Vec<FeatureSpec> = schema
        .features
        .iter()
        .map(|f| FeatureSpec {
            name: f.column.clone(),
            kind: f.kind,
            lambda: f.lambda,
            required: f.required,
            stats: None,
        })
        .collect();

    let mut assays = Vec::with_capacity(schema.assays.len());
    let mut target_assay = None;
    for (j, a) in schema.assays.iter().enumerate() {
        let feature = schema
            .features
            .iter()
            .position(|f| f.column == a.outcome)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "assay `{}` reveals `{}`, which is not a declared feature",
                    a.name, a.outcome
                ))
            })?;
        if a.outcome == schema.target {
            target_assay = Some(AssayId(j));
        }
        assays.push(AssaySpec {
            name: a.name.clone(),
            outcome_feature: FeatureId(feature),
            cost: a.cost.clone(),
        });
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i + 1;
        let cell = |c: usize| row.get(c).unwrap_or("");
        let values = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, f)| {
                let raw = cell(c);
                if raw.is_empty() {
                    Err(Error::MissingValue {
                        row: line,
                        column: f.column.clone(),
                    })
                } else {
                    parse_cell(raw, line, &f.column)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let target = match cell(target_col) {
            "" => None,
            raw => Some(parse_cell(raw, line, &schema.target)?),
        };
        let record_id = match id_col {
            Some(c) => cell(c).to_string(),
            None => line.to_string(),
        };
        records.push(HistoricalRecord {
            record_id,
            values,
            target,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyTable);
    }

    Dataset::from_parts(DatasetParts {
        features,
        assays,
        records,
        target_name: schema.target.clone(),
        goal_range: GoalRange::new(schema.g_min, schema.g_max),
        cost_dims: schema.cost_dims_or_default(),
        target_assay,
    })
}

/// Writes `dataset` as CSV readable with [`Schema::from_dataset`].
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let target_is_feature = dataset.feature_by_name(&dataset.target_name).is_some();

    let mut header = vec![RECORD_ID_COLUMN.to_string()];
    header.extend(dataset.features.iter().map(|f| f.name.clone()));
    if !target_is_feature {
        header.push(dataset.target_name.clone());
    }
    writer.write_record(&header).map_err(csv_err)?;

    for record in &dataset.records {
        let mut row = vec![record.record_id.clone()];
        row.extend(record.values.iter().map(|v| v.to_string()));
        if !target_is_feature {
            row.push(record.target.map(|g| g.to_string()).unwrap_or_default());
        }
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
