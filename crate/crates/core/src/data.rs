//! Trial datasets: ingestion, validation, covariate encodings and fold
//! assignment shared by every downstream estimator.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::midranks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    /// Dense level codes `0..levels.len()` plus the level labels.
    Categorical { codes: Vec<u32>, levels: Vec<String> },
}

impl ColumnData {
    /// Value of row `i`; the level code for categorical columns.
    pub fn numeric_value(&self, i: usize) -> f64 {
        match self {
            ColumnData::Numeric(v) => v[i],
            ColumnData::Categorical { codes, .. } => f64::from(codes[i]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateColumn {
    pub name: String,
    pub data: ColumnData,
}

impl CovariateColumn {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        CovariateColumn {
            name: name.into(),
            data: ColumnData::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, codes: Vec<u32>, levels: Vec<String>) -> Self {
        CovariateColumn {
            name: name.into(),
            data: ColumnData::Categorical { codes, levels },
        }
    }

    /// Builds a categorical column from labels, recording levels in
    /// first-appearance order.
    pub fn from_labels<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                match levels.iter().position(|v| v == l) {
                    Some(i) => i as u32,
                    None => {
                        levels.push(l.to_owned());
                        (levels.len() - 1) as u32
                    }
                }
            })
            .collect();
        CovariateColumn::categorical(name, codes, levels)
    }

    pub fn kind(&self) -> CovariateKind {
        match self.data {
            ColumnData::Numeric(_) => CovariateKind::Numeric,
            ColumnData::Categorical { .. } => CovariateKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of design columns this covariate expands to under dummy coding.
    pub fn design_width(&self) -> usize {
        match &self.data {
            ColumnData::Numeric(_) => 1,
            ColumnData::Categorical { levels, .. } => levels.len().saturating_sub(1),
        }
    }

    fn subset(&self, rows: &[usize]) -> Self {
        let data = match &self.data {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical { codes, levels } => ColumnData::Categorical {
                codes: rows.iter().map(|&i| codes[i]).collect(),
                levels: levels.clone(),
            },
        };
        CovariateColumn {
            name: self.name.clone(),
            data,
        }
    }
}

/// An ordered, equal-length collection of covariate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    columns: Vec<CovariateColumn>,
    n: usize,
}

impl Covariates {
    pub fn new(columns: Vec<CovariateColumn>) -> Result<Self> {
        let n = columns.first().map_or(0, CovariateColumn::len);
        for c in &columns {
            if c.len() != n {
                return Err(Error::load(
                    None,
                    Some(&c.name),
                    format!("column has {} entries, expected {n}", c.len()),
                ));
            }
            match &c.data {
                ColumnData::Numeric(v) => {
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(Error::load(Some(i + 1), Some(&c.name), "non-finite numeric value"));
                    }
                }
                ColumnData::Categorical { codes, levels } => {
                    if let Some(i) = codes.iter().position(|&k| k as usize >= levels.len()) {
                        return Err(Error::load(Some(i + 1), Some(&c.name), "level code out of range"));
                    }
                }
            }
        }
        Ok(Covariates { columns, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[CovariateColumn] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &CovariateColumn {
        &self.columns[j]
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn subset(&self, rows: &[usize]) -> Covariates {
        Covariates {
            columns: self.columns.iter().map(|c| c.subset(rows)).collect(),
            n: rows.len(),
        }
    }

    /// Returns a copy with an extra numeric column appended.
    pub fn with_numeric(&self, name: &str, values: Vec<f64>) -> Result<Covariates> {
        let mut columns = self.columns.clone();
        columns.push(CovariateColumn::numeric(name, values));
        Covariates::new(columns)
    }

    /// Replaces the values of numeric column `j`.
    pub fn replace_numeric(&mut self, j: usize, values: Vec<f64>) {
        assert_eq!(values.len(), self.n);
        self.columns[j].data = ColumnData::Numeric(values);
    }

    /// Re-expresses categorical codes using the level dictionaries of
    /// `reference` (matched by label). Labels unknown to the reference get
    /// codes past its last level; models route those to their left branch.
    pub fn align_levels(&self, reference: &Covariates) -> Result<Covariates> {
        if reference.p() != self.p() {
            return Err(Error::param("covariate count differs from the fitted schema"));
        }
        let mut columns = Vec::with_capacity(self.p());
        for (mine, theirs) in self.columns.iter().zip(&reference.columns) {
            if mine.name != theirs.name || mine.kind() != theirs.kind() {
                return Err(Error::param(format!(
                    "column `{}` does not match fitted column `{}`",
                    mine.name, theirs.name
                )));
            }
            let col = match (&mine.data, &theirs.data) {
                (
                    ColumnData::Categorical { codes, levels },
                    ColumnData::Categorical { levels: ref_levels, .. },
                ) => {
                    let mut extra: Vec<String> = Vec::new();
                    let map: Vec<u32> = levels
                        .iter()
                        .map(|l| match ref_levels.iter().position(|r| r == l) {
                            Some(i) => i as u32,
                            None => {
                                extra.push(l.clone());
                                (ref_levels.len() + extra.len() - 1) as u32
                            }
                        })
                        .collect();
                    let mut all = ref_levels.clone();
                    all.extend(extra);
                    CovariateColumn::categorical(
                        mine.name.clone(),
                        codes.iter().map(|&c| map[c as usize]).collect(),
                        all,
                    )
                }
                _ => mine.clone(),
            };
            columns.push(col);
        }
        Covariates::new(columns)
    }
}

/// Randomized-trial style data `(X, A, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub covariates: Covariates,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    pub outcome_kind: OutcomeKind,
    /// Optional subject identifiers carried through to per-subject outputs.
    pub ids: Option<Vec<String>>,
}

impl TrialDataset {
    pub fn new(
        covariates: Covariates,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let n = covariates.n();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::load(None, None, "treatment/outcome length differs from covariates"));
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(Error::load(Some(i + 1), None, "treatment not in {0,1}"));
        }
        let treated = treatment.iter().filter(|&&a| a == 1).count();
        if treated == 0 || treated == n {
            return Err(Error::load(None, None, "both treatment arms must be non-empty"));
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::load(Some(i + 1), None, "non-finite outcome"));
        }
        if outcome_kind == OutcomeKind::Binary {
            if let Some(i) = outcome.iter().position(|&y| y != 0.0 && y != 1.0) {
                return Err(Error::load(Some(i + 1), None, "binary outcome not in {0,1}"));
            }
        }
        for c in covariates.columns() {
            if let ColumnData::Categorical { codes, levels } = &c.data {
                let mut seen = vec![false; levels.len()];
                for &k in codes {
                    seen[k as usize] = true;
                }
                if seen.iter().filter(|&&s| s).count() < 2 {
                    return Err(Error::load(None, Some(&c.name), "categorical covariate needs at least 2 observed levels"));
                }
                if seen.iter().any(|&s| !s) {
                    return Err(Error::load(None, Some(&c.name), "categorical level codes must be dense"));
                }
            }
        }
        Ok(TrialDataset {
            covariates,
            treatment,
            outcome,
            outcome_kind,
            ids: None,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.p()
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        let treated = self.treatment.iter().filter(|&&a| a == 1).count();
        (self.n() - treated, treated)
    }

    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treatment.iter().map(|&a| f64::from(a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    /// Optional fixed level order for categorical covariates; the first level
    /// becomes the dummy-coding reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// JSON schema document naming the outcome, treatment and covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub outcome: String,
    pub outcome_kind: OutcomeKind,
    pub treatment: String,
    pub covariates: Vec<CovariateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl SchemaConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<TrialDataset> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_dataset(&text, schema)
}

/// Parses a delimited table (comma or tab, detected from the header line).
pub fn parse_dataset(text: &str, schema: &SchemaConfig) -> Result<TrialDataset> {
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::load(None, Some(name), "missing column"))
    };
    let y_idx = find(&schema.outcome)?;
    let a_idx = find(&schema.treatment)?;
    let id_idx = schema.id.as_deref().map(find).transpose()?;
    let cov_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<_>>()?;

    let mut outcome = Vec::new();
    let mut treatment = Vec::new();
    let mut ids = Vec::new();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); cov_idx.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |idx: usize, name: &str| -> Result<&str> {
            let v = record.get(idx).unwrap_or("");
            if is_missing(v) {
                Err(Error::load(Some(row), Some(name), "missing value"))
            } else {
                Ok(v)
            }
        };
        let a = cell(a_idx, &schema.treatment)?;
        match a.parse::<f64>() {
            Ok(v) if v == 0.0 => treatment.push(0),
            Ok(v) if v == 1.0 => treatment.push(1),
            _ => return Err(Error::load(Some(row), Some(&schema.treatment), "treatment not in {0,1}")),
        }
        let y = cell(y_idx, &schema.outcome)?;
        let y: f64 = y
            .parse()
            .map_err(|_| Error::load(Some(row), Some(&schema.outcome), format!("cannot parse outcome `{y}`")))?;
        if !y.is_finite() {
            return Err(Error::load(Some(row), Some(&schema.outcome), "non-finite outcome"));
        }
        if schema.outcome_kind == OutcomeKind::Binary && y != 0.0 && y != 1.0 {
            return Err(Error::load(Some(row), Some(&schema.outcome), "binary outcome not in {0,1}"));
        }
        outcome.push(y);
        if let Some(i) = id_idx {
            ids.push(record.get(i).unwrap_or("").to_owned());
        }
        for (k, spec) in schema.covariates.iter().enumerate() {
            raw[k].push(cell(cov_idx[k], &spec.name)?.to_owned());
        }
    }

    let mut columns = Vec::with_capacity(raw.len());
    for (spec, cells) in schema.covariates.iter().zip(raw) {
        let col = match spec.kind {
            CovariateKind::Numeric => {
                let mut values = Vec::with_capacity(cells.len());
                for (i, c) in cells.iter().enumerate() {
                    let v: f64 = c.parse().map_err(|_| {
                        Error::load(Some(i + 1), Some(&spec.name), format!("cannot parse numeric value `{c}`"))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::load(Some(i + 1), Some(&spec.name), "non-finite numeric value"));
                    }
                    values.push(v);
                }
                CovariateColumn::numeric(spec.name.clone(), values)
            }
            CovariateKind::Categorical => match &spec.levels {
                None => CovariateColumn::from_labels(spec.name.clone(), &cells),
                Some(levels) => {
                    let lookup: HashMap<&str, u32> =
                        levels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();
                    let codes = cells
                        .iter()
                        .enumerate()
                        .map(|(i, c)| {
                            lookup.get(c.as_str()).copied().ok_or_else(|| {
                                Error::load(Some(i + 1), Some(&spec.name), format!("level `{c}` not declared in schema"))
                            })
                        })
                        .collect::<Result<Vec<u32>>>()?;
                    CovariateColumn::categorical(spec.name.clone(), codes, levels.clone())
                }
            },
        };
        columns.push(col);
    }
    let covariates = Covariates::new(columns)?;
    let mut ds = TrialDataset::new(covariates, treatment, outcome, schema.outcome_kind)?;
    if id_idx.is_some() {
        ds.ids = Some(ids);
    }
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Numeric values as-is, categoricals dummy coded.
    Raw,
    /// Numeric columns replaced by midranks, categoricals dummy coded.
    DummyPlusRank,
}

/// Numeric design matrix derived from covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub columns: DMatrix<f64>,
    /// Source covariate index of each design column.
    pub column_origin: Vec<usize>,
    pub column_names: Vec<String>,
    pub encoding: Encoding,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    pub fn q(&self) -> usize {
        self.columns.ncols()
    }
}

/// Expands covariates into a design matrix. Categorical covariates with `L`
/// levels produce `L - 1` indicators against the first level.
pub fn encode(x: &Covariates, encoding: Encoding) -> DesignMatrix {
    let n = x.n();
    let q: usize = x.columns().iter().map(CovariateColumn::design_width).sum();
    let mut m = DMatrix::zeros(n, q);
    let mut origin = Vec::with_capacity(q);
    let mut names = Vec::with_capacity(q);
    let mut j = 0;
    for (src, col) in x.columns().iter().enumerate() {
        match &col.data {
            ColumnData::Numeric(v) => {
                let values = match encoding {
                    Encoding::Raw => v.clone(),
                    Encoding::DummyPlusRank => midranks(v),
                };
                m.column_mut(j).copy_from_slice(&values);
                origin.push(src);
                names.push(col.name.clone());
                j += 1;
            }
            ColumnData::Categorical { codes, levels } => {
                for (l, label) in levels.iter().enumerate().skip(1) {
                    let mut c = m.column_mut(j);
                    for (i, &code) in codes.iter().enumerate() {
                        if code as usize == l {
                            c[i] = 1.0;
                        }
                    }
                    origin.push(src);
                    names.push(format!("{}:{}", col.name, label));
                    j += 1;
                }
            }
        }
    }
    DesignMatrix {
        columns: m,
        column_origin: origin,
        column_names: names,
        encoding,
    }
}

/// Assignment of samples to `k` cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

/// Treatment-stratified, near-balanced random folds.
///
/// Treated indices are shuffled and dealt round-robin, and the control arm
/// continues the deal where the treated arm stopped, so both per-arm and
/// overall fold sizes differ by at most one.
pub fn assign_folds(n: usize, k: usize, treatment: &[u8], seed: u64) -> Result<FoldAssignment> {
    if treatment.len() != n {
        return Err(Error::param("treatment length differs from n"));
    }
    let treated: Vec<usize> = (0..n).filter(|&i| treatment[i] == 1).collect();
    let control: Vec<usize> = (0..n).filter(|&i| treatment[i] != 1).collect();
    let smallest = treated.len().min(control.len());
    if k < 2 || k > smallest {
        return Err(Error::param(format!(
            "fold count {k} must lie in [2, {smallest}] (smallest arm size)"
        )));
    }
    let mut rng = rng::stream(seed, &[rng::TAG_FOLDS]);
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for mut arm in [treated, control] {
        arm.shuffle(&mut rng);
        for i in arm {
            fold_of[i] = pos % k;
            pos += 1;
        }
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

/// Unstratified near-balanced folds used for learner cross-validation.
pub(crate) fn random_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::TAG_CV]));
    let mut fold_of = vec![0; n];
    for (pos, i) in idx.into_iter().enumerate() {
        fold_of[i] = pos % k;
    }
    fold_of
}

/// Folds stratified on a binary label so every fold sees both classes when possible.
pub(crate) fn stratified_folds(labels: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, &[rng::TAG_CV]);
    let mut fold_of = vec![0; labels.len()];
    let mut pos = 0;
    for class in [1.0, 0.0] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| (labels[i] == 1.0) == (class == 1.0)).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold_of[i] = pos % k;
            pos += 1;
        }
    }
    fold_of
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SchemaConfig {
        serde_json::from_str(
            r#"{"outcome":"y","outcome_kind":"continuous","treatment":"trt",
                "covariates":[{"name":"X1","kind":"numeric"},{"name":"X2","kind":"categorical"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_small_table() {
        let text = "y,trt,X1,X2\n1.0,0,0.5,a\n2.0,1,0.1,b\n0.5,1,0.3,a\n1.5,0,0.9,b\n";
        let ds = parse_dataset(text, &schema()).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.treatment, vec![0, 1, 1, 0]);
        match &ds.covariates.column(1).data {
            ColumnData::Categorical { codes, levels } => {
                assert_eq!(levels, &vec!["a".to_string(), "b".to_string()]);
                assert_eq!(codes, &vec![0, 1, 0, 1]);
            }
            _ => panic!("expected categorical"),
        }
    }

    #[test]
    fn tab_delimited_is_detected() {
        let text = "y\ttrt\tX1\tX2\n1\t0\t0.5\ta\n2\t1\t0.1\tb\n";
        let ds = parse_dataset(text, &schema()).unwrap();
        assert_eq!(ds.n(), 2);
    }

    #[test]
    fn bad_treatment_reports_row() {
        let text = "y,trt,X1,X2\n1,0,0.5,a\n2,1,0.1,b\n3,2,0.3,a\n4,0,0.9,b\n";
        let err = parse_dataset(text, &schema()).unwrap_err().to_string();
        assert!(err.contains("treatment not in {0,1} at row 3"), "{err}");
    }

    #[test]
    fn missing_cell_names_column_and_row() {
        let text = "y,trt,X1,X2\n1,0,0.5,a\n2,1,0.1,\n";
        let err = parse_dataset(text, &schema()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("X2"), "{err}");
    }

    #[test]
    fn missing_column_is_an_error() {
        let text = "y,trt,X1\n1,0,0.5\n";
        let err = parse_dataset(text, &schema()).unwrap_err().to_string();
        assert!(err.contains("missing column") && err.contains("X2"), "{err}");
    }

    #[test]
    fn non_finite_numeric_is_rejected() {
        let text = "y,trt,X1,X2\n1,0,inf,a\n2,1,0.1,b\n";
        let err = parse_dataset(text, &schema()).unwrap_err().to_string();
        assert!(err.contains("non-finite") && err.contains("X1"), "{err}");
    }

    #[test]
    fn rank_and_dummy_encoding() {
        let x = Covariates::new(vec![
            CovariateColumn::numeric("a", vec![0.2, 0.9, 0.5]),
            CovariateColumn::numeric("b", vec![1.0, 1.0, 2.0]),
            CovariateColumn::from_labels("c", &["Y", "N", "Y"]),
        ])
        .unwrap();
        let d = encode(&x, Encoding::DummyPlusRank);
        assert_eq!(d.q(), 3);
        assert_eq!(d.columns.column(0).as_slice(), &[1.0, 3.0, 2.0]);
        assert_eq!(d.columns.column(1).as_slice(), &[1.5, 1.5, 3.0]);
        assert_eq!(d.columns.column(2).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(d.column_names[2], "c:N");
        let raw = encode(&x, Encoding::Raw);
        assert_eq!(raw.columns.column(0).as_slice(), &[0.2, 0.9, 0.5]);
    }

    #[test]
    fn folds_balanced_within_arms() {
        let a = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let f = assign_folds(10, 5, &a, 3).unwrap();
        for k in 0..5 {
            let t = f.test_indices(k);
            assert_eq!(t.iter().filter(|&&i| a[i] == 1).count(), 1);
            assert_eq!(t.iter().filter(|&&i| a[i] == 0).count(), 1);
        }
        let b = vec![1, 0, 1, 0, 1, 0, 1];
        let mut sizes = assign_folds(7, 2, &b, 9).unwrap().sizes();
        sizes.sort();
        assert_eq!(sizes, vec![3, 4]);
        assert_eq!(assign_folds(10, 5, &a, 3).unwrap(), f);
        assert!(assign_folds(10, 6, &a, 3).is_err());
        assert!(assign_folds(10, 1, &a, 3).is_err());
    }

    #[test]
    fn align_levels_maps_labels() {
        let reference = Covariates::new(vec![CovariateColumn::from_labels("c", &["Y", "N"])]).unwrap();
        let other = Covariates::new(vec![CovariateColumn::from_labels("c", &["N", "Z", "Y"])]).unwrap();
        let aligned = other.align_levels(&reference).unwrap();
        match &aligned.column(0).data {
            ColumnData::Categorical { codes, levels } => {
                assert_eq!(codes, &vec![1, 2, 0]);
                assert_eq!(levels.len(), 3);
            }
            _ => unreachable!(),
        }
    }
}
