//! Population and subpopulation mean estimators built on posterior draws,
//! plus the weighting baselines behind a common entry point.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::frames::{inclusion_vector, PopulationFrame, SampleFrame};
use crate::rng::derive_seed;
use crate::samplers::{
    append_propensity, fit_bart, fit_probit_bart, fit_sbart, Draw, FitReport, PropensityScores,
    SamplerConfig,
};
use crate::stats;
use crate::weighting::{self, BinRule, Discretizer, RakingOptions};

/// Stream id of the propensity chain relative to the outcome seed.
pub const PROPENSITY_STREAM: u64 = 0x5052_4f50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "ps")]
    PostStratification,
    #[serde(rename = "raking")]
    Raking,
    #[serde(rename = "bart")]
    Bart,
    #[serde(rename = "bart-p")]
    BartP,
    #[serde(rename = "sbart")]
    Sbart,
    #[serde(rename = "sbart-p")]
    SbartP,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Raw,
        Method::PostStratification,
        Method::Raking,
        Method::Bart,
        Method::BartP,
        Method::Sbart,
        Method::SbartP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::PostStratification => "ps",
            Method::Raking => "raking",
            Method::Bart => "bart",
            Method::BartP => "bart-p",
            Method::Sbart => "sbart",
            Method::SbartP => "sbart-p",
        }
    }

    pub fn uses_propensity(self) -> bool {
        matches!(self, Method::BartP | Method::SbartP)
    }

    pub fn is_tree(self) -> bool {
        matches!(self, Method::Bart | Method::BartP | Method::Sbart | Method::SbartP)
    }

    pub fn is_weighting(self) -> bool {
        matches!(self, Method::PostStratification | Method::Raking)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == t)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CompareOp {
    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
        }
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CompareOp::Lt => ord == Less,
            CompareOp::Le => ord != Greater,
            CompareOp::Gt => ord == Greater,
            CompareOp::Ge => ord != Less,
            CompareOp::Eq => ord == Equal,
            CompareOp::Ne => ord != Equal,
        }
    }
}

/// `column op constant` over covariate columns, e.g. `age>=65` or `sex==F`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubpopulationFilter {
    pub column: String,
    pub op: CompareOp,
    pub value: String,
}

impl FromStr for SubpopulationFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        const OPS: [(&str, CompareOp); 7] = [
            (">=", CompareOp::Ge),
            ("<=", CompareOp::Le),
            ("==", CompareOp::Eq),
            ("!=", CompareOp::Ne),
            (">", CompareOp::Gt),
            ("<", CompareOp::Lt),
            ("=", CompareOp::Eq),
        ];
        let (pos, sym, op) = OPS
            .iter()
            .filter_map(|&(sym, op)| s.find(sym).map(|p| (p, sym, op)))
            .min_by_key(|&(p, sym, _)| (p, std::cmp::Reverse(sym.len())))
            .ok_or_else(|| Error::FilterSyntax(s.to_string()))?;
        let column = s[..pos].trim();
        let value = s[pos + sym.len()..].trim();
        if column.is_empty() || value.is_empty() || value.contains(['<', '>', '=', '!']) {
            return Err(Error::FilterSyntax(s.to_string()));
        }
        Ok(SubpopulationFilter {
            column: column.to_string(),
            op,
            value: value.to_string(),
        })
    }
}

impl fmt::Display for SubpopulationFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.column, self.op.symbol(), self.value)
    }
}

impl SubpopulationFilter {
    fn evaluate(
        &self,
        schema: &crate::frames::CovariateSchema,
        cov: &crate::frames::Covariates,
        levels: &crate::frames::LevelDictionary,
    ) -> Result<Vec<bool>> {
        let n = cov.n_rows();
        if let Some(j) = schema.continuous.iter().position(|c| *c == self.column) {
            let v: f64 = self
                .value
                .parse()
                .map_err(|_| Error::FilterSyntax(self.to_string()))?;
            return Ok(cov
                .continuous_col(j)
                .iter()
                .map(|x| self.op.holds(x.total_cmp(&v)))
                .collect());
        }
        if let Some(j) = schema.discrete.iter().position(|c| *c == self.column) {
            let labels = &levels[j];
            let numeric = self.value.parse::<f64>().ok();
            let hold: Vec<bool> = labels
                .iter()
                .map(|label| match (label.parse::<f64>().ok(), numeric) {
                    (Some(a), Some(b)) => Ok(self.op.holds(a.total_cmp(&b))),
                    _ if matches!(self.op, CompareOp::Eq | CompareOp::Ne) => {
                        Ok(self.op.holds(label.as_str().cmp(self.value.as_str())))
                    }
                    _ => Err(Error::FilterSyntax(self.to_string())),
                })
                .collect::<Result<_>>()?;
            return Ok((0..n).map(|i| hold[cov.discrete(i, j) as usize]).collect());
        }
        Err(Error::Schema(format!(
            "subpopulation filter refers to unknown covariate `{}`",
            self.column
        )))
    }

    pub fn population_mask(&self, population: &PopulationFrame) -> Result<Vec<bool>> {
        self.evaluate(population.schema(), population.covariates(), population.levels())
    }

    pub fn sample_mask(&self, sample: &SampleFrame) -> Result<Vec<bool>> {
        self.evaluate(sample.schema(), sample.covariates(), sample.levels())
    }
}

/// A resolved subpopulation: membership of every population unit and
/// sample row.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub population: Vec<bool>,
    pub sample: Vec<bool>,
    pub size: usize,
}

impl Domain {
    pub fn new(filter: &SubpopulationFilter, population: &PopulationFrame, sample: &SampleFrame) -> Result<Self> {
        let pop = filter.population_mask(population)?;
        let size = pop.iter().filter(|&&b| b).count();
        if size == 0 {
            return Err(Error::EmptySubpopulation(filter.to_string()));
        }
        let samp = match sample.link() {
            Some(link) => link.iter().map(|&i| pop[i]).collect(),
            None => filter.sample_mask(sample)?,
        };
        Ok(Domain {
            population: pop,
            sample: samp,
            size,
        })
    }

    /// The whole population.
    pub fn all(population: &PopulationFrame, sample: &SampleFrame) -> Self {
        Domain {
            population: vec![true; population.n()],
            sample: vec![true; sample.n()],
            size: population.n(),
        }
    }
}

/// `(1/N) [sum of predictions over units outside the sample + sum of observed
/// outcomes]`, so a census sample returns its mean exactly.
pub fn population_mean_draw(theta: &[f64], sample: &SampleFrame) -> Result<f64> {
    let link = sample.link().ok_or(Error::Unlinked("the population mean draw"))?;
    if theta.len() < link.iter().max().map_or(0, |m| m + 1) {
        return Err(Error::LengthMismatch {
            what: "population predictions",
            expected: link.iter().max().map_or(0, |m| m + 1),
            actual: theta.len(),
        });
    }
    let mut in_sample = vec![false; theta.len()];
    for &i in link {
        in_sample[i] = true;
    }
    let predicted: f64 = theta
        .iter()
        .zip(&in_sample)
        .filter(|(_, &s)| !s)
        .map(|(t, _)| t)
        .sum();
    let observed: f64 = sample.y().iter().sum();
    Ok((predicted + observed) / theta.len() as f64)
}

/// Population mean draw for a sample without unit linkage: the sample's own
/// predictions stand in for the linked population rows.
pub fn population_mean_draw_unlinked(theta: &[f64], sample_fit: &[f64], y: &[f64]) -> f64 {
    let total: f64 = theta.iter().sum();
    let correction: f64 = y.iter().zip(sample_fit).map(|(a, b)| a - b).sum();
    (total + correction) / theta.len() as f64
}

/// Mean draw over a subpopulation `domain`, linked or not.
pub fn subpopulation_mean_draw(theta: &[f64], sample_fit: &[f64], sample: &SampleFrame, domain: &Domain) -> Result<f64> {
    if theta.len() != domain.population.len() {
        return Err(Error::LengthMismatch {
            what: "population predictions",
            expected: domain.population.len(),
            actual: theta.len(),
        });
    }
    let observed: f64 = sample
        .y()
        .iter()
        .zip(&domain.sample)
        .filter(|(_, &d)| d)
        .map(|(y, _)| y)
        .sum();
    let total = match sample.link() {
        Some(link) => {
            let mut in_sample = vec![false; theta.len()];
            for &i in link {
                in_sample[i] = true;
            }
            let predicted: f64 = (0..theta.len())
                .filter(|&i| domain.population[i] && !in_sample[i])
                .map(|i| theta[i])
                .sum();
            predicted + observed
        }
        None => {
            let predicted: f64 = (0..theta.len()).filter(|&i| domain.population[i]).map(|i| theta[i]).sum();
            let own: f64 = sample_fit
                .iter()
                .zip(&domain.sample)
                .filter(|(_, &d)| d)
                .map(|(f, _)| f)
                .sum();
            predicted + observed - own
        }
    };
    Ok(total / domain.size as f64)
}

/// Per-iteration estimand draws with the matching residual sd.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub q: Vec<f64>,
    pub sigma: Vec<f64>,
    pub method: Method,
    pub estimand: String,
}

impl PosteriorDraws {
    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() {
            return Err(Error::Empty("draw stream"));
        }
        if self.q.len() != self.sigma.len() {
            return Err(Error::LengthMismatch {
                what: "sigma draws",
                expected: self.q.len(),
                actual: self.sigma.len(),
            });
        }
        if self.q.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite posterior draw".into()));
        }
        Ok(())
    }

    /// CSV with one row per retained iteration: `iteration,q,sigma`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let mut body = String::from("iteration,q,sigma\n");
        for (t, (q, s)) in self.q.iter().zip(&self.sigma).enumerate() {
            body.push_str(&format!("{t},{q},{s}\n"));
        }
        w.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Median with equal-tailed 80% and 95% intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub point: f64,
    pub ci80: [f64; 2],
    pub ci95: [f64; 2],
    pub n_draws: usize,
}

pub fn summarize(draws: &[f64]) -> Result<EstimateSummary> {
    if draws.is_empty() {
        return Err(Error::Empty("draw stream"));
    }
    let s = stats::sorted_copy(draws);
    let q = |p| stats::quantile_sorted(&s, p);
    Ok(EstimateSummary {
        point: q(0.5),
        ci80: [q(0.10), q(0.90)],
        ci95: [q(0.025), q(0.975)],
        n_draws: draws.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// Equal-tailed posterior quantiles.
    Posterior,
    /// Normal approximation with a linearization standard error.
    Linearization,
    None,
}

/// Point estimate with optional intervals, as reported to users.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub method: Method,
    pub estimand: String,
    pub point: f64,
    pub ci80: Option<[f64; 2]>,
    pub ci95: Option<[f64; 2]>,
    pub n_draws: Option<usize>,
    pub interval: IntervalKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
}

impl Estimate {
    fn point_only(method: Method, estimand: String, point: f64) -> Self {
        Estimate {
            method,
            estimand,
            point,
            ci80: None,
            ci95: None,
            n_draws: None,
            interval: IntervalKind::None,
            se: None,
        }
    }

    fn normal(method: Method, estimand: String, point: f64, se: f64) -> Self {
        let n = Normal::standard();
        let z80 = n.inverse_cdf(0.90);
        let z95 = n.inverse_cdf(0.975);
        Estimate {
            method,
            estimand,
            point,
            ci80: Some([point - z80 * se, point + z80 * se]),
            ci95: Some([point - z95 * se, point + z95 * se]),
            n_draws: None,
            interval: IntervalKind::Linearization,
            se: Some(se),
        }
    }

    fn posterior(method: Method, estimand: String, s: EstimateSummary) -> Self {
        Estimate {
            method,
            estimand,
            point: s.point,
            ci80: Some(s.ci80),
            ci95: Some(s.ci95),
            n_draws: Some(s.n_draws),
            interval: IntervalKind::Posterior,
            se: None,
        }
    }

    pub fn covers(&self, truth: f64, level95: bool) -> Option<bool> {
        let ci = if level95 { self.ci95 } else { self.ci80 }?;
        Some(ci[0] <= truth && truth <= ci[1])
    }
}

/// Settings for [`estimate`].
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateOptions {
    pub sampler: SamplerConfig,
    /// Bins for continuous covariates when post-stratifying.
    pub ps_bins: BinRule,
    /// Bins for continuous covariates when raking.
    pub raking_bins: BinRule,
    pub raking: RakingOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            sampler: SamplerConfig::default(),
            ps_bins: BinRule::Tertile,
            raking_bins: BinRule::Quintile,
            raking: RakingOptions::default(),
        }
    }
}

impl EstimateOptions {
    /// Sampler settings of the propensity chain: same settings, own stream.
    pub fn propensity_config(&self) -> SamplerConfig {
        SamplerConfig {
            seed: derive_seed(self.sampler.seed, PROPENSITY_STREAM),
            ..self.sampler.clone()
        }
    }
}

/// Full result of [`estimate`]: the summary plus, for tree methods, the raw
/// draws and chain report.
#[derive(Clone, Debug)]
pub struct Estimation {
    pub estimate: Estimate,
    pub draws: Option<PosteriorDraws>,
    pub report: Option<FitReport>,
}

fn estimand_name(filter: Option<&SubpopulationFilter>) -> String {
    match filter {
        None => "population mean".into(),
        Some(f) => format!("subpopulation mean [{f}]"),
    }
}

/// Estimate the population (or subpopulation) mean with `method`.
pub fn estimate(
    method: Method,
    population: &PopulationFrame,
    sample: &SampleFrame,
    options: &EstimateOptions,
    filter: Option<&SubpopulationFilter>,
) -> Result<Estimation> {
    estimate_with_propensity(method, population, sample, options, filter, None)
}

/// As [`estimate`], reusing precomputed propensity scores for -P methods.
pub fn estimate_with_propensity(
    method: Method,
    population: &PopulationFrame,
    sample: &SampleFrame,
    options: &EstimateOptions,
    filter: Option<&SubpopulationFilter>,
    propensity: Option<&PropensityScores>,
) -> Result<Estimation> {
    if sample.n() == 0 {
        return Err(Error::Empty("sample"));
    }
    if !population.schema().same_covariates(sample.schema()) {
        return Err(Error::Schema(
            "sample covariate columns differ from the population's".into(),
        ));
    }
    let domain = match filter {
        Some(f) => Domain::new(f, population, sample)?,
        None => Domain::all(population, sample),
    };
    let estimand = estimand_name(filter);
    let plain = |estimate| Estimation {
        estimate,
        draws: None,
        report: None,
    };
    match method {
        Method::Raw => {
            let ys: Vec<f64> = sample
                .y()
                .iter()
                .zip(&domain.sample)
                .filter(|(_, &d)| d)
                .map(|(y, _)| *y)
                .collect();
            if ys.is_empty() {
                return Err(Error::EmptyDomainSample("the sample mean"));
            }
            Ok(plain(Estimate::point_only(method, estimand, stats::mean(&ys))))
        }
        Method::PostStratification | Method::Raking => {
            let rule = if method == Method::Raking {
                &options.raking_bins
            } else {
                &options.ps_bins
            };
            let (pop, samp) = weighting::discretize(
                population,
                sample,
                &Discretizer::all_continuous(population, rule.clone()),
            )?;
            let by: Vec<String> = pop.schema().discrete.clone();
            let (weights, se) = if method == Method::Raking {
                let w = weighting::rake(&pop, &samp, &by, options.raking)?;
                let se = weighting::raking_se(&pop, &samp, &by, &w)?;
                (w, se)
            } else {
                let (strat, w) = weighting::post_stratify(&pop, &samp, &by)?;
                let se = weighting::post_stratified_se(&strat, &samp);
                (w, se)
            };
            if filter.is_none() {
                let point = weighting::weighted_mean(&samp, &weights)?;
                return Ok(plain(Estimate::normal(method, estimand, point, se)));
            }
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..samp.n() {
                if domain.sample[i] {
                    num += weights.w[i] * samp.y()[i];
                    den += weights.w[i];
                }
            }
            if den <= 0.0 {
                return Err(Error::EmptyDomainSample("a weighted domain mean"));
            }
            Ok(plain(Estimate::point_only(method, estimand, num / den)))
        }
        Method::Bart | Method::Sbart | Method::BartP | Method::SbartP => {
            let owned;
            let (pop, samp) = if method.uses_propensity() {
                let scores = match propensity {
                    Some(s) => s,
                    None => {
                        if !sample.is_linked() {
                            return Err(Error::Unlinked("propensity-score methods"));
                        }
                        let ind = inclusion_vector(population, sample)?;
                        owned = fit_probit_bart(population, &ind, &options.propensity_config())?;
                        &owned
                    }
                };
                let (p, s) = append_propensity(population, sample, scores)?;
                (std::borrow::Cow::Owned(p), std::borrow::Cow::Owned(s))
            } else {
                (std::borrow::Cow::Borrowed(population), std::borrow::Cow::Borrowed(sample))
            };
            let mut q = Vec::with_capacity(options.sampler.n_keep);
            let mut sigma = Vec::with_capacity(options.sampler.n_keep);
            let mut err = None;
            let whole = filter.is_none();
            let on_draw = |d: &Draw| {
                let value = if whole && samp.is_linked() {
                    population_mean_draw(d.population_fit, &samp)
                } else if whole {
                    Ok(population_mean_draw_unlinked(d.population_fit, d.sample_fit, samp.y()))
                } else {
                    subpopulation_mean_draw(d.population_fit, d.sample_fit, &samp, &domain)
                };
                match value {
                    Ok(v) => {
                        q.push(v);
                        sigma.push(d.sigma);
                    }
                    Err(e) => err = Some(e),
                }
            };
            let report = if matches!(method, Method::Bart | Method::BartP) {
                fit_bart(&pop, &samp, &options.sampler, on_draw)?
            } else {
                fit_sbart(&pop, &samp, &options.sampler, on_draw)?
            };
            if let Some(e) = err {
                return Err(e);
            }
            let draws = PosteriorDraws {
                q,
                sigma,
                method,
                estimand: estimand.clone(),
            };
            draws.validate()?;
            let summary = summarize(&draws.q)?;
            Ok(Estimation {
                estimate: Estimate::posterior(method, estimand, summary),
                draws: Some(draws),
                report: Some(report),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::CovariateSchema;

    fn pop4() -> PopulationFrame {
        PopulationFrame::from_codes(
            CovariateSchema::new(["z"], ["x"]),
            vec![vec![0, 1, 0, 1]],
            &[2],
            vec![vec![0.1, 0.2, 0.3, 0.4]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn census_sample_cancels_predictions() {
        let pop = pop4();
        let y = vec![1.0, 5.0, 2.0, 8.0];
        let s = SampleFrame::linked(&pop, vec![0, 1, 2, 3], y.clone()).unwrap();
        for theta in [vec![100.0; 4], vec![-3.0, 0.0, 1e6, 2.5]] {
            assert_eq!(population_mean_draw(&theta, &s).unwrap(), 4.0);
        }
    }

    #[test]
    fn worked_example() {
        let pop = pop4();
        let s = SampleFrame::linked(&pop, vec![0, 1], vec![1.0, 3.0]).unwrap();
        let theta = vec![1.0, 3.0, 2.0, 2.0];
        assert_eq!(population_mean_draw(&theta, &s).unwrap(), 2.0);
        let fit = vec![1.0, 3.0];
        assert_eq!(population_mean_draw_unlinked(&theta, &fit, s.y()), 2.0);
    }

    #[test]
    fn unlinked_sample_is_rejected_by_linked_draw() {
        let pop = pop4();
        let cov = pop.covariates().select_rows(&[0]);
        let s = SampleFrame::unlinked(&pop, cov, vec![1.0], None).unwrap();
        assert!(matches!(population_mean_draw(&[0.0; 4], &s), Err(Error::Unlinked(_))));
    }

    #[test]
    fn subpopulation_identities() {
        let pop = pop4();
        let s = SampleFrame::linked(&pop, vec![0, 3], vec![1.5, 7.0]).unwrap();
        let theta = vec![1.0, 2.0, 3.0, 4.0];
        let fit = vec![1.0, 4.0];
        let all = Domain::all(&pop, &s);
        assert_eq!(
            subpopulation_mean_draw(&theta, &fit, &s, &all).unwrap(),
            population_mean_draw(&theta, &s).unwrap()
        );
        let disjoint: SubpopulationFilter = "x==0.2".parse().unwrap();
        let d = Domain::new(&disjoint, &pop, &s).unwrap();
        assert_eq!(subpopulation_mean_draw(&theta, &fit, &s, &d).unwrap(), 2.0);
        let one: SubpopulationFilter = "x<=0.1".parse().unwrap();
        let d = Domain::new(&one, &pop, &s).unwrap();
        assert_eq!(subpopulation_mean_draw(&theta, &fit, &s, &d).unwrap(), 1.5);
        let none: SubpopulationFilter = "x>5".parse().unwrap();
        assert!(matches!(Domain::new(&none, &pop, &s), Err(Error::EmptySubpopulation(_))));
    }

    #[test]
    fn filter_parsing() {
        let f: SubpopulationFilter = " age >= 65 ".parse().unwrap();
        assert_eq!((f.column.as_str(), f.op, f.value.as_str()), ("age", CompareOp::Ge, "65"));
        let f: SubpopulationFilter = "sex=F".parse().unwrap();
        assert_eq!(f.op, CompareOp::Eq);
        assert_eq!(f.to_string(), "sex==F");
        for bad in ["age", ">=3", "age>=", "a<=>3"] {
            assert!(bad.parse::<SubpopulationFilter>().is_err(), "{bad}");
        }
    }

    #[test]
    fn discrete_filters_compare_labels() {
        let pop = pop4();
        let s = SampleFrame::linked(&pop, vec![0], vec![0.0]).unwrap();
        let f: SubpopulationFilter = "z>=1".parse().unwrap();
        assert_eq!(f.population_mask(&pop).unwrap(), vec![false, true, false, true]);
        let d = Domain::new(&f, &pop, &s).unwrap();
        assert_eq!(d.sample, vec![false]);
        assert!("w>1".parse::<SubpopulationFilter>().unwrap().population_mask(&pop).is_err());
    }

    #[test]
    fn summary_of_integer_sequence() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize(&d).unwrap();
        assert_eq!(s.point, 50.5);
        assert!((s.ci95[0] - 3.475).abs() < 1e-12 && (s.ci95[1] - 97.525).abs() < 1e-12);
        assert!(s.ci95[0] <= s.ci80[0] && s.ci80[1] <= s.ci95[1]);
        let c = summarize(&[2.5; 7]).unwrap();
        assert_eq!((c.point, c.ci80, c.ci95), (2.5, [2.5, 2.5], [2.5, 2.5]));
        let sym: Vec<f64> = (-50..=50).map(|i| i as f64 / 10.0).collect();
        let s = summarize(&sym).unwrap();
        assert!(s.point.abs() < 1e-12);
        assert!((s.ci95[0] + s.ci95[1]).abs() < 1e-12);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn raw_method_is_interval_free() {
        let pop = pop4();
        let s = SampleFrame::linked(&pop, vec![0, 2], vec![1.0, 4.0]).unwrap();
        let e = estimate(Method::Raw, &pop, &s, &EstimateOptions::default(), None).unwrap();
        assert_eq!(e.estimate.point, 2.5);
        assert_eq!(e.estimate.interval, IntervalKind::None);
        assert!(e.estimate.ci95.is_none());
    }

    #[test]
    fn propensity_methods_need_linkage() {
        let pop = pop4();
        let cov = pop.covariates().select_rows(&[0, 1]);
        let s = SampleFrame::unlinked(&pop, cov, vec![1.0, 2.0], None).unwrap();
        let r = estimate(Method::BartP, &pop, &s, &EstimateOptions::default(), None);
        assert!(matches!(r, Err(Error::Unlinked(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("mrp".parse::<Method>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_additivity(theta in proptest::collection::vec(-50.0f64..50.0, 12), cut in 0.05f64..0.95) {
                let x: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
                let pop = PopulationFrame::from_codes(
                    CovariateSchema::new(Vec::<&str>::new(), ["x"]), vec![], &[], vec![x], None).unwrap();
                let link = vec![1, 4, 7, 10];
                let s = SampleFrame::linked(&pop, link.clone(), vec![3.0, -1.0, 2.0, 9.0]).unwrap();
                let fit: Vec<f64> = link.iter().map(|&i| theta[i]).collect();
                let below: SubpopulationFilter = format!("x<={cut}").parse().unwrap();
                let above: SubpopulationFilter = format!("x>{cut}").parse().unwrap();
                let whole = population_mean_draw(&theta, &s).unwrap() * 12.0;
                let mut parts = 0.0;
                for f in [below, above] {
                    if let Ok(d) = Domain::new(&f, &pop, &s) {
                        parts += subpopulation_mean_draw(&theta, &fit, &s, &d).unwrap() * d.size as f64;
                    }
                }
                prop_assert!((whole - parts).abs() <= 1e-10 * (1.0 + whole.abs()));
            }

            #[test]
            fn summaries_are_nested(d in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
                let s = summarize(&d).unwrap();
                prop_assert!(s.ci95[0] <= s.ci80[0] && s.ci80[0] <= s.point);
                prop_assert!(s.point <= s.ci80[1] && s.ci80[1] <= s.ci95[1]);
            }
        }
    }
}
