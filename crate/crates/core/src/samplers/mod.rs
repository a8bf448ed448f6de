//! MCMC samplers: hard BART, soft BART with bandwidths and a sparse split
//! prior, and probit BART for inclusion propensities.

pub mod backfit;
mod config;
pub mod design;
pub mod sparsity;
pub mod truncnorm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF, Normal};

pub use backfit::{Backfitter, BackfitSettings, Mode, MoveCounts};
pub use config::SamplerConfig;
pub use design::{Columns, Design, OutcomeScaler};

use crate::error::{Error, Result};
use crate::frames::{InclusionVector, PopulationFrame, SampleFrame};
use crate::{linalg, stats, weighting};

/// Name of the continuous column added by [`append_propensity`].
pub const PROPENSITY_COLUMN: &str = "pi_hat";

/// Floor on the calibration sd of the scaled outcome, so a constant outcome
/// still gets a proper residual-variance prior.
const MIN_SIGMA_HAT: f64 = 1e-3;

/// One retained posterior iteration on the original outcome scale.
#[derive(Debug)]
pub struct Draw<'a> {
    pub iteration: usize,
    pub sigma: f64,
    /// `G(covariates)` for every population unit.
    pub population_fit: &'a [f64],
    /// `G(covariates)` for every sample row.
    pub sample_fit: &'a [f64],
}

/// Chain summaries gathered over the retained iterations.
#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub n_draws: usize,
    pub moves: MoveCounts,
    pub mean_tau: Option<f64>,
    /// Posterior mean split-variable probabilities (soft mode).
    pub mean_split_probs: Vec<f64>,
}

pub fn fit_bart<F: FnMut(&Draw)>(
    population: &PopulationFrame,
    sample: &SampleFrame,
    cfg: &SamplerConfig,
    on_draw: F,
) -> Result<FitReport> {
    fit_outcome(Mode::Hard, population, sample, cfg, on_draw)
}

pub fn fit_sbart<F: FnMut(&Draw)>(
    population: &PopulationFrame,
    sample: &SampleFrame,
    cfg: &SamplerConfig,
    on_draw: F,
) -> Result<FitReport> {
    fit_outcome(Mode::Soft, population, sample, cfg, on_draw)
}

fn check_inputs(population: &PopulationFrame, sample: &SampleFrame, cfg: &SamplerConfig) -> Result<()> {
    cfg.validate()?;
    if sample.n() == 0 {
        return Err(Error::Empty("sample"));
    }
    if !population.schema().same_covariates(sample.schema()) {
        return Err(Error::Schema(
            "sample covariate columns differ from the population's".into(),
        ));
    }
    Ok(())
}

/// Residual sd used to calibrate the variance prior: least squares on the
/// scaled outcome when the design allows it, otherwise the outcome sd.
fn calibration_sd(population: &PopulationFrame, sample: &SampleFrame, y: &[f64]) -> f64 {
    let n = y.len();
    let (design, k) = weighting::linear_design(sample.covariates(), &population.level_counts());
    let ols = if n > k {
        linalg::least_squares(&design, n, k, y).map(|beta| {
            let ssr: f64 = (0..n)
                .map(|i| {
                    let pred: f64 = (0..k).map(|a| design[i * k + a] * beta[a]).sum();
                    (y[i] - pred).powi(2)
                })
                .sum();
            (ssr / (n - k) as f64).sqrt()
        })
    } else {
        None
    };
    ols.unwrap_or_else(|| stats::std_dev(y)).max(MIN_SIGMA_HAT)
}

fn fit_outcome<F: FnMut(&Draw)>(
    mode: Mode,
    population: &PopulationFrame,
    sample: &SampleFrame,
    cfg: &SamplerConfig,
    mut on_draw: F,
) -> Result<FitReport> {
    check_inputs(population, sample, cfg)?;
    let design = Design::new(population, sample.covariates())?;
    let scaler = OutcomeScaler::fit(sample.y());
    let y: Vec<f64> = sample.y().iter().map(|&v| scaler.apply(v)).collect();
    let n = y.len();

    let sigma_hat = calibration_sd(population, sample, &y);
    let chi_q = ChiSquaredDist::new(cfg.nu)
        .map_err(|e| Error::Config(e.to_string()))?
        .inverse_cdf(1.0 - cfg.q);
    let lambda = sigma_hat * sigma_hat * chi_q / cfg.nu;
    let chi_post = ChiSquared::new(cfg.nu + n as f64).map_err(|e| Error::Config(e.to_string()))?;

    let settings = BackfitSettings {
        mode,
        trees: cfg.trees,
        sigma_mu: 0.5 / (cfg.k * (cfg.trees as f64).sqrt()),
        alpha: cfg.alpha,
        beta: cfg.beta,
        moves: cfg.moves,
        tau_rate: cfg.tau_rate,
        tau_fixed: cfg.tau_fixed,
        sparsity: cfg.sparsity && mode == Mode::Soft,
    };
    let init = stats::mean(&y);
    let mut bf = Backfitter::new(settings, design.split_prior(), &design.train, Some(&design.population), init);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sigma = match cfg.sigma_fixed {
        Some(s) => s / scaler.scale,
        None => sigma_hat,
    };

    let mut report = FitReport {
        mean_split_probs: vec![0.0; design.candidates.len()],
        ..Default::default()
    };
    let mut tau_sum = 0.0;
    let mut pop_fit = Vec::with_capacity(population.n());
    let mut sample_fit = vec![0.0; n];
    for it in 0..cfg.total_iterations() {
        bf.sweep(&y, sigma, &mut rng);
        if cfg.sigma_fixed.is_none() {
            let ssr: f64 = y.iter().zip(bf.fit()).map(|(a, b)| (a - b) * (a - b)).sum();
            sigma = ((cfg.nu * lambda + ssr) / chi_post.sample(&mut rng)).sqrt();
        }
        bf.update_split_probs(&mut rng);
        if it < cfg.n_burn || !(it + 1 - cfg.n_burn).is_multiple_of(cfg.thin) {
            continue;
        }
        bf.predict(&mut pop_fit);
        pop_fit.iter_mut().for_each(|v| *v = scaler.invert(*v));
        for (o, &f) in sample_fit.iter_mut().zip(bf.fit()) {
            *o = scaler.invert(f);
        }
        on_draw(&Draw {
            iteration: it,
            sigma: sigma * scaler.scale,
            population_fit: &pop_fit,
            sample_fit: &sample_fit,
        });
        report.n_draws += 1;
        tau_sum += bf.tau().iter().sum::<f64>() / bf.tau().len() as f64;
        for (a, p) in report.mean_split_probs.iter_mut().zip(bf.split_probs()) {
            *a += p;
        }
    }
    let k = report.n_draws as f64;
    report.mean_split_probs.iter_mut().for_each(|a| *a /= k);
    if mode == Mode::Soft {
        report.mean_tau = Some(tau_sum / k);
    }
    report.moves = bf.counts.clone();
    Ok(report)
}

/// Posterior mean inclusion probability for every population unit.
#[derive(Clone, Debug, PartialEq)]
pub struct PropensityScores(Vec<f64>);

impl PropensityScores {
    pub const FLOOR: f64 = 1e-6;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::Config("propensity scores must lie in (0, 1)".into()));
        }
        Ok(PropensityScores(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Probit BART for `P(I = 1 | covariates)` over the population, via
/// truncated-normal latent augmentation with unit residual variance.
pub fn fit_probit_bart(
    population: &PopulationFrame,
    inclusion: &InclusionVector,
    cfg: &SamplerConfig,
) -> Result<PropensityScores> {
    cfg.validate()?;
    let big_n = population.n();
    if inclusion.len() != big_n {
        return Err(Error::LengthMismatch {
            what: "inclusion indicators",
            expected: big_n,
            actual: inclusion.len(),
        });
    }
    let n = inclusion.count();
    if n == 0 {
        return Err(Error::DegenerateInclusion(0));
    }
    if n == big_n {
        return Err(Error::DegenerateInclusion(1));
    }
    let normal = Normal::standard();
    let offset = normal.inverse_cdf(n as f64 / big_n as f64);
    let design = Design::new(population, population.covariates())?;
    let settings = BackfitSettings {
        mode: Mode::Hard,
        trees: cfg.trees,
        sigma_mu: 3.0 / (cfg.k * (cfg.trees as f64).sqrt()),
        alpha: cfg.alpha,
        beta: cfg.beta,
        moves: cfg.moves,
        tau_rate: cfg.tau_rate,
        tau_fixed: None,
        sparsity: false,
    };
    let mut bf = Backfitter::new(settings, design.split_prior(), &design.train, None, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ind = inclusion.indicators();
    let mut target = vec![0.0; big_n];
    let mut acc = vec![0.0; big_n];
    let mut kept = 0usize;
    for it in 0..cfg.total_iterations() {
        for (i, t) in target.iter_mut().enumerate() {
            let mean = bf.fit()[i] + offset;
            *t = truncnorm::unit_variance_signed(mean, ind[i], &mut rng) - offset;
        }
        bf.sweep(&target, 1.0, &mut rng);
        if it < cfg.n_burn || !(it + 1 - cfg.n_burn).is_multiple_of(cfg.thin) {
            continue;
        }
        kept += 1;
        for (a, f) in acc.iter_mut().zip(bf.fit()) {
            *a += normal.cdf(f + offset);
        }
    }
    let lo = PropensityScores::FLOOR;
    Ok(PropensityScores(
        acc.iter().map(|a| (a / kept as f64).clamp(lo, 1.0 - lo)).collect(),
    ))
}

/// Add the propensity scores as a continuous covariate to both frames.
pub fn append_propensity(
    population: &PopulationFrame,
    sample: &SampleFrame,
    scores: &PropensityScores,
) -> Result<(PopulationFrame, SampleFrame)> {
    let link = sample
        .link()
        .ok_or(Error::Unlinked("appending propensity scores"))?;
    if scores.len() != population.n() {
        return Err(Error::LengthMismatch {
            what: "propensity scores",
            expected: population.n(),
            actual: scores.len(),
        });
    }
    if population.schema().has_column(PROPENSITY_COLUMN) || sample.schema().has_column(PROPENSITY_COLUMN) {
        return Err(Error::DuplicateColumn(PROPENSITY_COLUMN.into()));
    }
    let mut pop = population.clone();
    {
        let (schema, cov, _) = pop.parts_mut();
        schema.continuous.push(PROPENSITY_COLUMN.into());
        cov.push_continuous(scores.values().to_vec())?;
    }
    let mut samp = sample.clone();
    {
        let (schema, cov, _) = samp.parts_mut();
        schema.continuous.push(PROPENSITY_COLUMN.into());
        cov.push_continuous(link.iter().map(|&i| scores.values()[i]).collect())?;
    }
    Ok((pop, samp))
}
