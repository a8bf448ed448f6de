//! Population and sample data: schema declaration, CSV ingestion and dump,
//! linkage of sample units to population units, and outcome transforms.
//!
//! Covariates are stored column-major. Discrete columns are label-encoded
//! against a per-column level dictionary built from the population, so a
//! sample always shares its population's codes. Row order is the unit index.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column roles for a data set: discrete covariates `Z`, continuous
/// covariates `X`, and the optional outcome and unit-id columns.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    #[serde(default)]
    pub discrete: Vec<String>,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub id: Option<String>,
}

impl CovariateSchema {
    pub fn new<S: Into<String>>(
        discrete: impl IntoIterator<Item = S>,
        continuous: impl IntoIterator<Item = S>,
    ) -> Self {
        CovariateSchema {
            discrete: discrete.into_iter().map(Into::into).collect(),
            continuous: continuous.into_iter().map(Into::into).collect(),
            outcome: None,
            id: None,
        }
    }

    pub fn with_outcome(mut self, name: impl Into<String>) -> Self {
        self.outcome = Some(name.into());
        self
    }

    pub fn with_id(mut self, name: impl Into<String>) -> Self {
        self.id = Some(name.into());
        self
    }

    pub fn n_covariates(&self) -> usize {
        self.discrete.len() + self.continuous.len()
    }

    /// Disjoint, non-empty names and at least one covariate.
    pub fn validate(&self) -> Result<()> {
        if self.n_covariates() == 0 {
            return Err(Error::Schema("at least one covariate column is required".into()));
        }
        let mut seen = BTreeSet::new();
        let all = self
            .discrete
            .iter()
            .chain(&self.continuous)
            .chain(self.outcome.iter())
            .chain(self.id.iter());
        for name in all {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("column `{name}` is assigned more than one role")));
            }
        }
        Ok(())
    }

    /// Same covariate columns in the same order.
    pub fn same_covariates(&self, other: &CovariateSchema) -> bool {
        self.discrete == other.discrete && self.continuous == other.continuous
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.discrete.iter().chain(&self.continuous).any(|c| c == name)
    }
}

/// Column-major covariate storage: integer codes for discrete columns and
/// reals for continuous columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariates {
    n: usize,
    discrete: Vec<Vec<u32>>,
    continuous: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn new(n: usize, discrete: Vec<Vec<u32>>, continuous: Vec<Vec<f64>>) -> Result<Self> {
        for col in &discrete {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    what: "discrete column",
                    expected: n,
                    actual: col.len(),
                });
            }
        }
        for col in &continuous {
            if col.len() != n {
                return Err(Error::LengthMismatch {
                    what: "continuous column",
                    expected: n,
                    actual: col.len(),
                });
            }
        }
        Ok(Covariates {
            n,
            discrete,
            continuous,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_discrete(&self) -> usize {
        self.discrete.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    pub fn discrete_col(&self, j: usize) -> &[u32] {
        &self.discrete[j]
    }

    pub fn continuous_col(&self, j: usize) -> &[f64] {
        &self.continuous[j]
    }

    pub fn discrete(&self, row: usize, col: usize) -> u32 {
        self.discrete[col][row]
    }

    pub fn continuous(&self, row: usize, col: usize) -> f64 {
        self.continuous[col][row]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Covariates {
        Covariates {
            n: rows.len(),
            discrete: self
                .discrete
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            continuous: self
                .continuous
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    /// First column on which `self[row]` and `other[other_row]` differ, as
    /// `(is_discrete, column)`. Continuous cells are compared bitwise.
    pub fn first_row_difference(
        &self,
        row: usize,
        other: &Covariates,
        other_row: usize,
    ) -> Option<(bool, usize)> {
        for (j, (a, b)) in self.discrete.iter().zip(&other.discrete).enumerate() {
            if a[row] != b[other_row] {
                return Some((true, j));
            }
        }
        for (j, (a, b)) in self.continuous.iter().zip(&other.continuous).enumerate() {
            if a[row].to_bits() != b[other_row].to_bits() {
                return Some((false, j));
            }
        }
        None
    }

    pub(crate) fn push_continuous(&mut self, column: Vec<f64>) -> Result<()> {
        if column.len() != self.n {
            return Err(Error::LengthMismatch {
                what: "continuous column",
                expected: self.n,
                actual: column.len(),
            });
        }
        self.continuous.push(column);
        Ok(())
    }

    pub(crate) fn push_discrete(&mut self, column: Vec<u32>) {
        debug_assert_eq!(column.len(), self.n);
        self.discrete.push(column);
    }

    pub(crate) fn remove_continuous(&mut self, j: usize) -> Vec<f64> {
        self.continuous.remove(j)
    }
}

/// Per-column level labels for discrete covariates; code `k` decodes to
/// `levels[column][k]`.
pub type LevelDictionary = Vec<Vec<String>>;

/// The fully observed target population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationFrame {
    schema: CovariateSchema,
    covariates: Covariates,
    levels: LevelDictionary,
    ids: Option<Vec<String>>,
}

impl PopulationFrame {
    pub fn new(
        schema: CovariateSchema,
        covariates: Covariates,
        levels: LevelDictionary,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        schema.validate()?;
        check_covariates(&schema, &covariates, &levels)?;
        if covariates.n_rows() == 0 {
            return Err(Error::Empty("population"));
        }
        if let Some(ids) = &ids {
            if ids.len() != covariates.n_rows() {
                return Err(Error::LengthMismatch {
                    what: "population ids",
                    expected: covariates.n_rows(),
                    actual: ids.len(),
                });
            }
        }
        let schema = CovariateSchema {
            outcome: None,
            ..schema
        };
        Ok(PopulationFrame {
            schema,
            covariates,
            levels,
            ids,
        })
    }

    /// Build a frame from integer-coded discrete columns whose labels are the
    /// decimal codes `0..levels`.
    pub fn from_codes(
        schema: CovariateSchema,
        discrete: Vec<Vec<u32>>,
        level_counts: &[u32],
        continuous: Vec<Vec<f64>>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = discrete
            .first()
            .map(Vec::len)
            .or_else(|| continuous.first().map(Vec::len))
            .unwrap_or(0);
        let covariates = Covariates::new(n, discrete, continuous)?;
        let levels = level_counts
            .iter()
            .map(|&k| (0..k).map(|c| c.to_string()).collect())
            .collect();
        PopulationFrame::new(schema, covariates, levels, ids)
    }

    pub fn n(&self) -> usize {
        self.covariates.n_rows()
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn levels(&self) -> &LevelDictionary {
        &self.levels
    }

    pub fn level_counts(&self) -> Vec<u32> {
        self.levels.iter().map(|l| l.len() as u32).collect()
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn discrete_index(&self, name: &str) -> Option<usize> {
        self.schema.discrete.iter().position(|c| c == name)
    }

    pub fn continuous_index(&self, name: &str) -> Option<usize> {
        self.schema.continuous.iter().position(|c| c == name)
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut CovariateSchema, &mut Covariates, &mut LevelDictionary) {
        (&mut self.schema, &mut self.covariates, &mut self.levels)
    }
}

/// Which transform has been applied to a sample's outcome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeTransform {
    #[default]
    None,
    Log1p,
}

impl OutcomeTransform {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeTransform::None => "none",
            OutcomeTransform::Log1p => "log1p",
        }
    }
}

impl fmt::Display for OutcomeTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OutcomeTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(OutcomeTransform::None),
            "log1p" => Ok(OutcomeTransform::Log1p),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

/// A non-random sample with outcomes, optionally linked to population rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleFrame {
    schema: CovariateSchema,
    covariates: Covariates,
    levels: LevelDictionary,
    y: Vec<f64>,
    ids: Option<Vec<String>>,
    link: Option<Vec<usize>>,
    transform: OutcomeTransform,
}

impl SampleFrame {
    /// A sample made of population rows `link`, with covariates copied from
    /// the population.
    pub fn linked(population: &PopulationFrame, link: Vec<usize>, y: Vec<f64>) -> Result<Self> {
        let covariates = population.covariates.select_rows(&link);
        let ids = population
            .ids
            .as_ref()
            .map(|ids| link.iter().map(|&i| ids[i].clone()).collect());
        let mut schema = population.schema.clone();
        if schema.outcome.is_none() {
            schema.outcome = Some("y".into());
        }
        let frame = SampleFrame {
            schema,
            covariates,
            levels: population.levels.clone(),
            y,
            ids,
            link: None,
            transform: OutcomeTransform::None,
        };
        frame.check_basic()?;
        frame.with_link(population, link)
    }

    /// A sample without linkage. Covariate codes must use the population's
    /// level dictionary.
    pub fn unlinked(
        population: &PopulationFrame,
        covariates: Covariates,
        y: Vec<f64>,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        check_covariates(&population.schema, &covariates, &population.levels)?;
        let mut schema = population.schema.clone();
        if schema.outcome.is_none() {
            schema.outcome = Some("y".into());
        }
        let frame = SampleFrame {
            schema,
            covariates,
            levels: population.levels.clone(),
            y,
            ids,
            link: None,
            transform: OutcomeTransform::None,
        };
        frame.check_basic()?;
        Ok(frame)
    }

    fn check_basic(&self) -> Result<()> {
        if self.y.len() != self.covariates.n_rows() {
            return Err(Error::LengthMismatch {
                what: "sample outcome",
                expected: self.covariates.n_rows(),
                actual: self.y.len(),
            });
        }
        if self.y.is_empty() {
            return Err(Error::Empty("sample"));
        }
        if let Some(row) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                column: self.outcome_name().to_string(),
                row,
            });
        }
        Ok(())
    }

    /// Attach a link and verify it against the population.
    pub fn with_link(mut self, population: &PopulationFrame, link: Vec<usize>) -> Result<Self> {
        let n = self.n();
        if link.len() != n {
            return Err(Error::LengthMismatch {
                what: "sample link",
                expected: n,
                actual: link.len(),
            });
        }
        if n > population.n() {
            return Err(Error::Schema("linked sample is larger than its population".into()));
        }
        let mut seen = vec![false; population.n()];
        for &i in &link {
            if i >= population.n() {
                return Err(Error::Schema(format!("link index {i} out of range")));
            }
            if seen[i] {
                let id = population
                    .ids
                    .as_ref()
                    .map_or_else(|| i.to_string(), |ids| ids[i].clone());
                return Err(Error::DuplicateId(id));
            }
            seen[i] = true;
        }
        self.link = Some(link);
        self.verify_link(population)?;
        Ok(self)
    }

    /// Re-check that every linked row carries its population row's covariates.
    pub fn verify_link(&self, population: &PopulationFrame) -> Result<()> {
        let Some(link) = &self.link else {
            return Ok(());
        };
        if !self.schema.same_covariates(&population.schema) {
            return Err(Error::Schema("sample and population covariate schemas differ".into()));
        }
        for (row, &i) in link.iter().enumerate() {
            if let Some((is_discrete, j)) =
                self.covariates
                    .first_row_difference(row, &population.covariates, i)
            {
                let column = if is_discrete {
                    self.schema.discrete[j].clone()
                } else {
                    self.schema.continuous[j].clone()
                };
                let id = self
                    .ids
                    .as_ref()
                    .map_or_else(|| row.to_string(), |ids| ids[row].clone());
                return Err(Error::CovariateMismatch { row, id, column });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn covariates(&self) -> &Covariates {
        &self.covariates
    }

    pub fn levels(&self) -> &LevelDictionary {
        &self.levels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn link(&self) -> Option<&[usize]> {
        self.link.as_deref()
    }

    pub fn is_linked(&self) -> bool {
        self.link.is_some()
    }

    pub fn transform(&self) -> OutcomeTransform {
        self.transform
    }

    pub fn outcome_name(&self) -> &str {
        self.schema.outcome.as_deref().unwrap_or("y")
    }

    /// Copy with a different outcome vector (same units, link and metadata).
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        let frame = SampleFrame { y, ..self.clone() };
        frame.check_basic()?;
        Ok(frame)
    }

    pub(crate) fn parts_mut(
        &mut self,
    ) -> (&mut CovariateSchema, &mut Covariates, &mut LevelDictionary) {
        (&mut self.schema, &mut self.covariates, &mut self.levels)
    }
}

fn check_covariates(
    schema: &CovariateSchema,
    covariates: &Covariates,
    levels: &LevelDictionary,
) -> Result<()> {
    if covariates.n_discrete() != schema.discrete.len()
        || covariates.n_continuous() != schema.continuous.len()
    {
        return Err(Error::Schema("covariate columns do not match the schema".into()));
    }
    if levels.len() != schema.discrete.len() {
        return Err(Error::Schema("level dictionary does not match the schema".into()));
    }
    for (j, name) in schema.discrete.iter().enumerate() {
        let k = levels[j].len() as u32;
        if let Some(row) = covariates.discrete_col(j).iter().position(|&c| c >= k) {
            return Err(Error::Schema(format!(
                "code out of range in column `{name}` at row {row}"
            )));
        }
    }
    for (j, name) in schema.continuous.iter().enumerate() {
        if let Some(row) = covariates.continuous_col(j).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                column: name.clone(),
                row,
            });
        }
    }
    Ok(())
}

/// Binary sample-inclusion indicators over the population.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InclusionVector(Vec<bool>);

impl InclusionVector {
    pub fn from_indicators(indicators: Vec<bool>) -> Self {
        InclusionVector(indicators)
    }

    pub fn indicators(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

pub fn inclusion_vector(population: &PopulationFrame, sample: &SampleFrame) -> Result<InclusionVector> {
    let link = sample
        .link()
        .ok_or(Error::Unlinked("an inclusion vector"))?;
    let mut ind = vec![false; population.n()];
    for &i in link {
        ind[i] = true;
    }
    Ok(InclusionVector(ind))
}

/// Apply an outcome transform, returning a new frame that records it.
pub fn transform_outcome(sample: &SampleFrame, kind: OutcomeTransform) -> Result<SampleFrame> {
    match kind {
        OutcomeTransform::None => Ok(sample.clone()),
        OutcomeTransform::Log1p => {
            if sample.transform != OutcomeTransform::None {
                return Err(Error::Config(format!(
                    "outcome already transformed with {}",
                    sample.transform
                )));
            }
            if let Some(row) = sample.y.iter().position(|&v| v <= -1.0) {
                return Err(Error::TransformDomain {
                    transform: "log1p",
                    row,
                    value: sample.y[row],
                });
            }
            let mut out = sample.clone();
            out.y = sample.y.iter().map(|v| v.ln_1p()).collect();
            out.transform = OutcomeTransform::Log1p;
            Ok(out)
        }
    }
}

// ---------------------------------------------------------------------------
// CSV

struct RawTable {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl RawTable {
    fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(std::io::BufReader::new(file));
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.iter().all(String::is_empty) {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        Ok(RawTable { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.find(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn strings(&self, name: &str) -> Result<Vec<String>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(row, rec)| {
                let v = rec.get(c).unwrap_or("");
                if v.is_empty() {
                    Err(Error::MissingCell {
                        column: name.to_string(),
                        row,
                    })
                } else {
                    Ok(v.to_string())
                }
            })
            .collect()
    }

    fn reals(&self, name: &str) -> Result<Vec<f64>> {
        self.strings(name)?
            .into_iter()
            .enumerate()
            .map(|(row, s)| {
                let v: f64 = s.parse().map_err(|_| Error::NonNumeric {
                    column: name.to_string(),
                    row,
                    value: s.clone(),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite {
                        column: name.to_string(),
                        row,
                    })
                }
            })
            .collect()
    }
}

/// Sort labels numerically when they all parse as numbers, else lexically.
fn ordered_levels(labels: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&String> = labels.iter().collect();
    let mut levels: Vec<String> = distinct.into_iter().cloned().collect();
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(levels).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        levels = pairs.into_iter().map(|p| p.1).collect();
    }
    levels
}

pub fn load_population(path: impl AsRef<Path>, schema: &CovariateSchema) -> Result<PopulationFrame> {
    schema.validate()?;
    let table = RawTable::read(path.as_ref())?;
    let n = table.rows.len();
    let mut discrete = Vec::with_capacity(schema.discrete.len());
    let mut levels = Vec::with_capacity(schema.discrete.len());
    for name in &schema.discrete {
        let labels = table.strings(name)?;
        let lv = ordered_levels(&labels);
        let index: HashMap<&str, u32> = lv
            .iter()
            .enumerate()
            .map(|(k, l)| (l.as_str(), k as u32))
            .collect();
        discrete.push(labels.iter().map(|l| index[l.as_str()]).collect());
        levels.push(lv);
    }
    let continuous = schema
        .continuous
        .iter()
        .map(|name| table.reals(name))
        .collect::<Result<Vec<_>>>()?;
    let ids = match &schema.id {
        Some(id) if table.find(id).is_some() => Some(table.strings(id)?),
        _ => None,
    };
    let covariates = Covariates::new(n, discrete, continuous)?;
    PopulationFrame::new(schema.clone(), covariates, levels, ids)
}

/// Load a sample, encode it with the population's levels, and link it by id
/// when both files carry the id column.
pub fn load_sample(
    path: impl AsRef<Path>,
    schema: &CovariateSchema,
    population: &PopulationFrame,
) -> Result<SampleFrame> {
    schema.validate()?;
    if !schema.same_covariates(population.schema()) {
        return Err(Error::Schema("sample and population covariate schemas differ".into()));
    }
    let outcome = schema
        .outcome
        .as_ref()
        .ok_or_else(|| Error::Schema("sample schema needs an outcome column".into()))?;
    let table = RawTable::read(path.as_ref())?;
    let n = table.rows.len();
    let mut discrete = Vec::with_capacity(schema.discrete.len());
    for (j, name) in schema.discrete.iter().enumerate() {
        let index: HashMap<&str, u32> = population.levels[j]
            .iter()
            .enumerate()
            .map(|(k, l)| (l.as_str(), k as u32))
            .collect();
        let codes = table
            .strings(name)?
            .into_iter()
            .map(|l| {
                index.get(l.as_str()).copied().ok_or_else(|| Error::UnknownLevel {
                    column: name.clone(),
                    level: l.clone(),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        discrete.push(codes);
    }
    let continuous = schema
        .continuous
        .iter()
        .map(|name| table.reals(name))
        .collect::<Result<Vec<_>>>()?;
    let y = table.reals(outcome)?;
    let ids = match &schema.id {
        Some(id) if table.find(id).is_some() => Some(table.strings(id)?),
        _ => None,
    };
    let covariates = Covariates::new(n, discrete, continuous)?;
    let mut frame = SampleFrame::unlinked(population, covariates, y, ids)?;
    frame.schema.outcome = Some(outcome.clone());
    frame.schema.id = schema.id.clone();

    if let (Some(sample_ids), Some(pop_ids)) = (frame.ids.as_ref(), population.ids()) {
        let mut pop_index = HashMap::with_capacity(pop_ids.len());
        for (i, id) in pop_ids.iter().enumerate() {
            if pop_index.insert(id.as_str(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        let mut link = Vec::with_capacity(n);
        for id in sample_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            let i = pop_index
                .get(id.as_str())
                .ok_or_else(|| Error::UnknownId(id.clone()))?;
            link.push(*i);
        }
        frame = frame.with_link(population, link)?;
    }
    Ok(frame)
}

fn write_table(path: &Path, header: Vec<String>, columns: Vec<Vec<String>>, n: usize) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(&header)?;
    for i in 0..n {
        writer.write_record(columns.iter().map(|c| c[i].as_str()))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn covariate_columns(
    schema: &CovariateSchema,
    covariates: &Covariates,
    levels: &LevelDictionary,
    ids: Option<&[String]>,
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = Vec::new();
    let mut columns = Vec::new();
    if let (Some(name), Some(ids)) = (&schema.id, ids) {
        header.push(name.clone());
        columns.push(ids.to_vec());
    }
    for (j, name) in schema.discrete.iter().enumerate() {
        header.push(name.clone());
        columns.push(
            covariates
                .discrete_col(j)
                .iter()
                .map(|&c| levels[j][c as usize].clone())
                .collect(),
        );
    }
    for (j, name) in schema.continuous.iter().enumerate() {
        header.push(name.clone());
        columns.push(covariates.continuous_col(j).iter().map(f64::to_string).collect());
    }
    (header, columns)
}

/// Write a population in the same layout `load_population` reads:
/// id (if any), discrete columns as labels, then continuous columns.
pub fn dump_population(frame: &PopulationFrame, path: impl AsRef<Path>) -> Result<()> {
    let (header, columns) =
        covariate_columns(&frame.schema, &frame.covariates, &frame.levels, frame.ids());
    write_table(path.as_ref(), header, columns, frame.n())
}

pub fn dump_sample(frame: &SampleFrame, path: impl AsRef<Path>) -> Result<()> {
    let (mut header, mut columns) =
        covariate_columns(&frame.schema, &frame.covariates, &frame.levels, frame.ids());
    header.push(frame.outcome_name().to_string());
    columns.push(frame.y.iter().map(f64::to_string).collect());
    write_table(path.as_ref(), header, columns, frame.n())
}
