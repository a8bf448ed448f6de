//! Artificial populations S1-S4, biased samples drawn from them, and
//! multi-replicate studies comparing estimators.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_with_propensity, EstimateOptions, Method};
use crate::frames::{inclusion_vector, CovariateSchema, PopulationFrame, SampleFrame};
use crate::rng::derive_seed;
use crate::samplers::{fit_probit_bart, SamplerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s1" => Ok(ScenarioId::S1),
            "s2" => Ok(ScenarioId::S2),
            "s3" => Ok(ScenarioId::S3),
            "s4" => Ok(ScenarioId::S4),
            _ => Err(Error::Config(format!("unknown scenario `{s}` (expected s1..s4)"))),
        }
    }
}

/// Data-generating settings of one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub population_size: usize,
    pub sample_size: usize,
    /// Number of binary covariates.
    pub p: usize,
    /// Number of continuous covariates.
    pub r: usize,
    pub noise_sd: f64,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId) -> Self {
        let (p, r) = if id == ScenarioId::S1 { (3, 1) } else { (30, 10) };
        ScenarioSpec {
            id,
            population_size: 3000,
            sample_size: 600,
            p,
            r,
            noise_sd: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let need_r = if self.id == ScenarioId::S4 { 5 } else { 1 };
        if self.p < 3 || self.r < need_r {
            return Err(Error::Config(format!(
                "scenario {} needs at least 3 binary and {need_r} continuous covariates",
                self.id
            )));
        }
        if self.sample_size == 0 || self.sample_size >= self.population_size {
            return Err(Error::Config("sample size must lie in [1, population size)".into()));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise sd must be non-negative".into()));
        }
        Ok(())
    }

    /// Noise-free outcome mean.
    pub fn outcome_mean(&self, z: &[u32], x: &[f64]) -> f64 {
        let z = |l: usize| z[l] as f64;
        let sq = |v: f64| (v - 0.75) * (v - 0.75);
        match self.id {
            ScenarioId::S1 | ScenarioId::S2 | ScenarioId::S3 => {
                26.81 - z(0) - 2.0 * z(1) - 3.5 * z(2) - 25.0 * sq(x[0])
            }
            ScenarioId::S4 => {
                36.81 - z(0) - 2.0 * z(1) - 3.5 * z(2) - 10.0 * z(0) * z(1) - 9.0 * sq(x[0])
                    - 16.0 * z(2) * sq(x[0])
            }
        }
    }

    /// Linear predictor of the inclusion model (before the inverse logit).
    pub fn selection_index(&self, z: &[u32], x: &[f64]) -> f64 {
        let z = |l: usize| z[l] as f64;
        let sq = |v: f64| (v - 0.75) * (v - 0.75);
        match self.id {
            ScenarioId::S1 | ScenarioId::S2 => {
                -13.66 + 0.5 * z(0) + z(1) + 1.75 * z(2) + 12.5 * sq(x[0])
            }
            ScenarioId::S3 => 4.01 - 0.5 * z(0) - z(1) - 1.75 * z(2) - 12.5 * sq(x[0]),
            ScenarioId::S4 => {
                3.27 - 0.5 * z(0) - z(1) - 1.75 * z(2) - 2.0 * z(0) * z(1) - 4.0 * sq(x[2])
                    - 3.0 * z(2) * sq(x[2])
                    - sq(x[4])
            }
        }
    }

    /// Weighting baselines need few covariates.
    pub fn weighting_feasible(&self) -> bool {
        self.p + self.r <= 4
    }
}

/// Sub-stream tags under a population seed.
const STREAM_W: u64 = 1;
const STREAM_U: u64 = 2;
const STREAM_X: u64 = 3;
const STREAM_EPS: u64 = 4;

#[derive(Clone, Debug)]
pub struct GeneratedPopulation {
    pub frame: PopulationFrame,
    pub y: Vec<f64>,
    /// Inclusion probabilities after normalization to the sample size.
    pub true_pi: Vec<f64>,
    /// Inverse-logit selection score before normalization.
    pub selection_score: Vec<f64>,
    /// Units whose probability was capped at 1 during normalization.
    pub certainty_units: usize,
    pub q: f64,
}

/// Build a population. Covariate blocks come from separate sub-streams and
/// are filled column by column, so scenarios sharing a seed share every
/// leading column bit for bit.
pub fn generate_population(spec: &ScenarioSpec, seed: u64) -> Result<GeneratedPopulation> {
    spec.validate()?;
    let n = spec.population_size;
    let mut rng_w = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_W));
    let mut rng_u = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_U));
    let mut rng_x = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_X));
    let mut rng_e = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_EPS));

    let w: Vec<Vec<f64>> = (0..spec.p)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng_w)).collect())
        .collect();
    let u: Vec<f64> = (0..spec.p).map(|_| rng_u.random_range(-0.4..0.4)).collect();
    let z: Vec<Vec<u32>> = w
        .iter()
        .zip(&u)
        .map(|(col, &ul)| col.iter().map(|&v| (v < ul) as u32).collect())
        .collect();
    let x: Vec<Vec<f64>> = (0..spec.r)
        .map(|_| (0..n).map(|_| rng_x.random::<f64>()).collect())
        .collect();
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let eps: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng_e)).collect();

    let mut y = Vec::with_capacity(n);
    let mut score = Vec::with_capacity(n);
    let mut zi = vec![0u32; spec.p];
    let mut xi = vec![0.0; spec.r];
    for i in 0..n {
        for l in 0..spec.p {
            zi[l] = z[l][i];
        }
        for l in 0..spec.r {
            xi[l] = x[l][i];
        }
        y.push(spec.outcome_mean(&zi, &xi) + eps[i]);
        score.push(inv_logit(spec.selection_index(&zi, &xi)));
    }
    let (true_pi, certainty_units) = normalize_inclusion(&score, spec.sample_size)?;
    let q = y.iter().sum::<f64>() / n as f64;

    let schema = CovariateSchema::new(
        (1..=spec.p).map(|l| format!("Z{l}")),
        (1..=spec.r).map(|l| format!("X{l}")),
    );
    let frame = PopulationFrame::from_codes(schema, z, &vec![2; spec.p], x, None)?;
    Ok(GeneratedPopulation {
        frame,
        y,
        true_pi,
        selection_score: score,
        certainty_units,
        q,
    })
}

fn inv_logit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Scale `score` to sum to `n`; units that would exceed 1 are fixed at 1 and
/// the rest rescaled until none exceed. Returns the probabilities and the
/// number of capped units.
pub fn normalize_inclusion(score: &[f64], n: usize) -> Result<(Vec<f64>, usize)> {
    if score.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || score.iter().all(|&s| s == 0.0) {
        return Err(Error::Config("selection scores must be finite, non-negative and not all zero".into()));
    }
    if n > score.iter().filter(|&&s| s > 0.0).count() {
        return Err(Error::Config("sample size exceeds the number of selectable units".into()));
    }
    let mut capped = vec![false; score.len()];
    loop {
        let fixed = capped.iter().filter(|&&c| c).count() as f64;
        let free: f64 = score.iter().zip(&capped).filter(|(_, &c)| !c).map(|(s, _)| s).sum();
        let factor = (n as f64 - fixed) / free;
        let mut changed = false;
        for (s, c) in score.iter().zip(capped.iter_mut()) {
            if !*c && s * factor >= 1.0 {
                *c = true;
                changed = true;
            }
        }
        if !changed {
            let pi = score
                .iter()
                .zip(&capped)
                .map(|(s, &c)| if c { 1.0 } else { s * factor })
                .collect();
            return Ok((pi, capped.iter().filter(|&&c| c).count()));
        }
    }
}

/// Fixed-size systematic PPS selection over a uniformly random ordering.
/// `pi` must sum to `n` with every entry in `[0, 1]`.
pub fn systematic_pps<R: Rng + ?Sized>(pi: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.shuffle(rng);
    let start: f64 = rng.random();
    let mut chosen = Vec::with_capacity(n);
    let mut selected = vec![false; pi.len()];
    let mut cum = 0.0;
    let mut next = start;
    for &i in &order {
        cum += pi[i];
        if chosen.len() < n && next < cum {
            chosen.push(i);
            selected[i] = true;
            next += 1.0;
        }
    }
    // Rounding in the running total can leave the last point unassigned.
    if chosen.len() < n {
        let mut rest: Vec<usize> = (0..pi.len()).filter(|&i| !selected[i]).collect();
        rest.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]).then(a.cmp(&b)));
        chosen.extend(rest.into_iter().take(n - chosen.len()));
    }
    chosen.sort_unstable();
    chosen
}

/// Linked sample of `spec.sample_size` units drawn with probabilities
/// `true_pi`.
pub fn draw_sample(population: &GeneratedPopulation, spec: &ScenarioSpec, seed: u64) -> Result<SampleFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let link = systematic_pps(&population.true_pi, spec.sample_size, &mut rng);
    let y = link.iter().map(|&i| population.y[i]).collect();
    SampleFrame::linked(&population.frame, link, y)
}

/// A method under study: an estimator, or a reference that returns the
/// truth with a zero-width interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StudyMethod {
    Estimator(Method),
    Oracle(OracleTag),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleTag {
    Oracle,
}

impl StudyMethod {
    pub const ORACLE: StudyMethod = StudyMethod::Oracle(OracleTag::Oracle);

    pub fn name(self) -> &'static str {
        match self {
            StudyMethod::Estimator(m) => m.name(),
            StudyMethod::Oracle(_) => "oracle",
        }
    }

    fn tag(self) -> u64 {
        match self {
            StudyMethod::Estimator(m) => 16 + Method::ALL.iter().position(|&x| x == m).unwrap() as u64,
            StudyMethod::Oracle(_) => 15,
        }
    }
}

impl FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("oracle") {
            Ok(StudyMethod::ORACLE)
        } else {
            s.parse().map(StudyMethod::Estimator)
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-replicate stream tags.
const TAG_POPULATION: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_PROPENSITY: u64 = 3;

fn stream(replicate: usize, tag: u64) -> u64 {
    ((replicate as u64) << 8) | tag
}

/// Seed of `tag` in `replicate` under `master`.
pub fn replicate_seed(master: u64, replicate: usize, tag: u64) -> u64 {
    derive_seed(master, stream(replicate, tag))
}

/// Seed of the fixed population under `master`.
pub fn population_seed(master: u64) -> u64 {
    derive_seed(master, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    pub methods: Vec<StudyMethod>,
    pub replicates: usize,
    pub master_seed: u64,
    /// Draw a fresh population in every replicate instead of one fixed one.
    pub regenerate_population: bool,
    pub sampler: SamplerConfig,
    pub jobs: usize,
}

impl StudyConfig {
    pub fn new(scenario: ScenarioSpec, methods: Vec<StudyMethod>, replicates: usize, master_seed: u64) -> Self {
        StudyConfig {
            scenario,
            methods,
            replicates,
            master_seed,
            regenerate_population: false,
            sampler: SamplerConfig::default(),
            jobs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sampler.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("at least one replicate is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        for m in &self.methods {
            if let StudyMethod::Estimator(e) = m {
                if e.is_weighting() && !self.scenario.weighting_feasible() {
                    return Err(Error::Infeasible {
                        method: e.name().into(),
                        scenario: self.scenario.id.to_string(),
                        reason: "post-stratification and raking are not feasible with this many auxiliary variables",
                    });
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        if !self.methods.iter().all(|m| seen.insert(*m)) {
            return Err(Error::Config("methods must not repeat".into()));
        }
        Ok(())
    }
}

/// Outcome of one method in one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub method: StudyMethod,
    pub truth: f64,
    pub estimate: Option<f64>,
    pub ci80: Option<[f64; 2]>,
    pub ci95: Option<[f64; 2]>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: StudyMethod,
    pub replicates: usize,
    pub failures: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage80: Option<f64>,
    pub coverage95: Option<f64>,
    pub width80: Option<f64>,
    pub width95: Option<f64>,
}

/// Interval pair (80%, 95%) of one replicate.
pub type Intervals = ([f64; 2], [f64; 2]);

/// Bias, RMSE, coverage and width of successful replicates.
pub fn compute_metrics(
    method: StudyMethod,
    estimates: &[f64],
    intervals: &[Option<Intervals>],
    truth: &[f64],
) -> Result<MethodMetrics> {
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    if intervals.len() != estimates.len() || truth.len() != estimates.len() {
        return Err(Error::LengthMismatch {
            what: "intervals or truths",
            expected: estimates.len(),
            actual: intervals.len().min(truth.len()),
        });
    }
    let k = estimates.len() as f64;
    let bias = estimates.iter().zip(truth).map(|(e, q)| e - q).sum::<f64>() / k;
    let mse = estimates.iter().zip(truth).map(|(e, q)| (e - q) * (e - q)).sum::<f64>() / k;
    let with: Vec<(&Intervals, f64)> = intervals
        .iter()
        .zip(truth)
        .filter_map(|(iv, &q)| iv.as_ref().map(|iv| (iv, q)))
        .collect();
    let (coverage80, coverage95, width80, width95) = if with.is_empty() {
        (None, None, None, None)
    } else {
        let m = with.len() as f64;
        let cover = |f: fn(&Intervals) -> [f64; 2]| {
            with.iter().filter(|(iv, q)| f(iv)[0] <= *q && *q <= f(iv)[1]).count() as f64 / m
        };
        let width = |f: fn(&Intervals) -> [f64; 2]| with.iter().map(|(iv, _)| f(iv)[1] - f(iv)[0]).sum::<f64>() / m;
        (
            Some(cover(|iv| iv.0)),
            Some(cover(|iv| iv.1)),
            Some(width(|iv| iv.0)),
            Some(width(|iv| iv.1)),
        )
    };
    Ok(MethodMetrics {
        method,
        replicates: estimates.len(),
        failures: 0,
        bias,
        rmse: mse.sqrt().max(bias.abs()),
        coverage80,
        coverage95,
        width80,
        width95,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub population_seed: Option<u64>,
    /// Realized mean of the fixed population (absent when regenerated).
    pub truth: Option<f64>,
    pub certainty_units: Option<usize>,
    pub metrics: Vec<MethodMetrics>,
    pub rows: Vec<ReplicateRow>,
}

impl StudyResult {
    pub fn metrics_for(&self, method: StudyMethod) -> Option<&MethodMetrics> {
        self.metrics.iter().find(|m| m.method == method)
    }

    pub fn estimator(&self, method: Method) -> Option<&MethodMetrics> {
        self.metrics_for(StudyMethod::Estimator(method))
    }

    /// CSV of per-replicate rows.
    pub fn write_rows_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut body = String::from("replicate,method,truth,estimate,ci80_lower,ci80_upper,ci95_lower,ci95_upper,error\n");
        for r in &self.rows {
            body.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.replicate,
                r.method,
                r.truth,
                fmt(r.estimate),
                fmt(r.ci80.map(|c| c[0])),
                fmt(r.ci80.map(|c| c[1])),
                fmt(r.ci95.map(|c| c[0])),
                fmt(r.ci95.map(|c| c[1])),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn run_replicate(
    cfg: &StudyConfig,
    fixed: Option<&GeneratedPopulation>,
    rep: usize,
) -> Result<Vec<ReplicateRow>> {
    let owned;
    let population = match fixed {
        Some(p) => p,
        None => {
            owned = generate_population(&cfg.scenario, replicate_seed(cfg.master_seed, rep, TAG_POPULATION))?;
            &owned
        }
    };
    let sample = draw_sample(population, &cfg.scenario, replicate_seed(cfg.master_seed, rep, TAG_SAMPLE))?;
    let needs_propensity = cfg
        .methods
        .iter()
        .any(|m| matches!(m, StudyMethod::Estimator(e) if e.uses_propensity()));
    let propensity = if needs_propensity {
        let ind = inclusion_vector(&population.frame, &sample)?;
        let pcfg = SamplerConfig {
            seed: replicate_seed(cfg.master_seed, rep, TAG_PROPENSITY),
            ..cfg.sampler.clone()
        };
        Some(fit_probit_bart(&population.frame, &ind, &pcfg).map_err(|e| e.to_string()))
    } else {
        None
    };
    let rows = cfg
        .methods
        .iter()
        .map(|&m| {
            let base = ReplicateRow {
                replicate: rep,
                method: m,
                truth: population.q,
                estimate: None,
                ci80: None,
                ci95: None,
                error: None,
            };
            let e = match m {
                StudyMethod::Oracle(_) => {
                    return ReplicateRow {
                        estimate: Some(population.q),
                        ci80: Some([population.q; 2]),
                        ci95: Some([population.q; 2]),
                        ..base
                    }
                }
                StudyMethod::Estimator(e) => e,
            };
            let scores = match (&propensity, e.uses_propensity()) {
                (Some(Err(msg)), true) => {
                    return ReplicateRow {
                        error: Some(msg.clone()),
                        ..base
                    }
                }
                (Some(Ok(s)), true) => Some(s),
                _ => None,
            };
            let options = EstimateOptions {
                sampler: SamplerConfig {
                    seed: replicate_seed(cfg.master_seed, rep, m.tag()),
                    ..cfg.sampler.clone()
                },
                ..Default::default()
            };
            match estimate_with_propensity(e, &population.frame, &sample, &options, None, scores) {
                Ok(est) => ReplicateRow {
                    estimate: Some(est.estimate.point),
                    ci80: est.estimate.ci80,
                    ci95: est.estimate.ci95,
                    ..base
                },
                Err(err) => ReplicateRow {
                    error: Some(err.to_string()),
                    ..base
                },
            }
        })
        .collect();
    Ok(rows)
}

/// Run every method on `replicates` samples. Replicates run in parallel on
/// `jobs` threads; results are folded in replicate order, so the output does
/// not depend on `jobs`.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let (fixed, pop_seed) = if cfg.regenerate_population {
        (None, None)
    } else {
        let seed = population_seed(cfg.master_seed);
        (Some(generate_population(&cfg.scenario, seed)?), Some(seed))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let per_rep: Vec<Result<Vec<ReplicateRow>>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| run_replicate(cfg, fixed.as_ref(), rep))
            .collect()
    });
    let mut rows = Vec::with_capacity(cfg.replicates * cfg.methods.len());
    for r in per_rep {
        rows.extend(r?);
    }
    let mut metrics = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let mine: Vec<&ReplicateRow> = rows.iter().filter(|r| r.method == m).collect();
        let ok: Vec<&&ReplicateRow> = mine.iter().filter(|r| r.estimate.is_some()).collect();
        let failures = mine.len() - ok.len();
        if ok.is_empty() {
            metrics.push(MethodMetrics {
                method: m,
                replicates: 0,
                failures,
                bias: f64::NAN,
                rmse: f64::NAN,
                coverage80: None,
                coverage95: None,
                width80: None,
                width95: None,
            });
            continue;
        }
        let est: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap()).collect();
        let iv: Vec<Option<Intervals>> = ok
            .iter()
            .map(|r| match (r.ci80, r.ci95) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            })
            .collect();
        let truth: Vec<f64> = ok.iter().map(|r| r.truth).collect();
        let mut agg = compute_metrics(m, &est, &iv, &truth)?;
        agg.failures = failures;
        metrics.push(agg);
    }
    Ok(StudyResult {
        population_seed: pop_seed,
        truth: fixed.as_ref().map(|p| p.q),
        certainty_units: fixed.as_ref().map(|p| p.certainty_units),
        config: cfg.clone(),
        metrics,
        rows,
    })
}
