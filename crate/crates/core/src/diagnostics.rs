//! Posterior predictive checks with Bayesian p-values.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{EstimateOptions, Method};
use crate::frames::{inclusion_vector, PopulationFrame, SampleFrame};
use crate::rng::derive_seed;
use crate::samplers::{append_propensity, fit_bart, fit_probit_bart, fit_sbart, Draw, FitReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Quantity {
    /// Mean of the outcome.
    T1,
    /// Sample variance with the `n - 1` divisor.
    T2,
    /// Mean squared standardized residual against the fit.
    T3,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::T1, Quantity::T2, Quantity::T3];
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantityCheck {
    pub quantity: Quantity,
    /// `(realized, predictive)` per retained iteration.
    pub pairs: Vec<(f64, f64)>,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PpcResult {
    pub checks: Vec<QuantityCheck>,
    pub n_draws: usize,
}

impl PpcResult {
    pub fn check(&self, q: Quantity) -> &QuantityCheck {
        self.checks.iter().find(|c| c.quantity == q).expect("all quantities present")
    }

    pub fn p_value(&self, q: Quantity) -> f64 {
        self.check(q).p_value
    }

    /// Scatter-ready CSV: `iteration,quantity,realized,predictive`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut body = String::from("iteration,quantity,realized,predictive\n");
        for c in &self.checks {
            for (t, (r, p)) in c.pairs.iter().enumerate() {
                body.push_str(&format!("{t},{},{r},{p}\n", c.quantity));
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Fraction of pairs `(realized, predictive)` with predictive above
/// realized; ties count one half.
pub fn pvalue(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("predictive pairs"));
    }
    let score: f64 = pairs
        .iter()
        .map(|&(r, p)| if p > r { 1.0 } else if p == r { 0.5 } else { 0.0 })
        .sum();
    Ok(score / pairs.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn standardized_ss(v: &[f64], theta: &[f64], sigma: f64) -> f64 {
    v.iter()
        .zip(theta)
        .map(|(y, t)| ((y - t) / sigma).powi(2))
        .sum::<f64>()
        / v.len() as f64
}

/// Streaming posterior predictive check; feed one draw per retained
/// iteration.
#[derive(Clone, Debug)]
pub struct PpcAccumulator {
    y: Vec<f64>,
    realized_t1: f64,
    realized_t2: f64,
    pairs: [Vec<(f64, f64)>; 3],
    replica: Vec<f64>,
}

impl PpcAccumulator {
    pub fn new(y: &[f64]) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::Empty("sample outcomes (need at least two)"));
        }
        Ok(PpcAccumulator {
            y: y.to_vec(),
            realized_t1: mean(y),
            realized_t2: variance(y),
            pairs: Default::default(),
            replica: vec![0.0; y.len()],
        })
    }

    /// `theta` is the fit on the sample rows, `sigma` the residual sd, both
    /// on the outcome scale.
    pub fn push<R: Rng + ?Sized>(&mut self, theta: &[f64], sigma: f64, rng: &mut R) -> Result<()> {
        if theta.len() != self.y.len() {
            return Err(Error::LengthMismatch {
                what: "fitted values",
                expected: self.y.len(),
                actual: theta.len(),
            });
        }
        for (r, t) in self.replica.iter_mut().zip(theta) {
            let z: f64 = StandardNormal.sample(rng);
            *r = t + sigma * z;
        }
        self.pairs[0].push((self.realized_t1, mean(&self.replica)));
        self.pairs[1].push((self.realized_t2, variance(&self.replica)));
        self.pairs[2].push((
            standardized_ss(&self.y, theta, sigma),
            standardized_ss(&self.replica, theta, sigma),
        ));
        Ok(())
    }

    pub fn finish(self) -> Result<PpcResult> {
        let n_draws = self.pairs[0].len();
        if n_draws == 0 {
            return Err(Error::Empty("posterior draws"));
        }
        debug_assert!(self.pairs[..2]
            .iter()
            .all(|p| p.iter().all(|&(r, _)| r == p[0].0)));
        let checks = Quantity::ALL
            .into_iter()
            .zip(self.pairs)
            .map(|(quantity, pairs)| {
                let p_value = pvalue(&pairs)?;
                Ok(QuantityCheck { quantity, pairs, p_value })
            })
            .collect::<Result<_>>()?;
        Ok(PpcResult { checks, n_draws })
    }
}

/// Check `sample` against a stream of `(fit on sample rows, sigma)` draws.
pub fn ppc<I, V, R>(sample: &SampleFrame, draws: I, rng: &mut R) -> Result<PpcResult>
where
    I: IntoIterator<Item = (V, f64)>,
    V: AsRef<[f64]>,
    R: Rng + ?Sized,
{
    let mut acc = PpcAccumulator::new(sample.y())?;
    for (theta, sigma) in draws {
        acc.push(theta.as_ref(), sigma, rng)?;
    }
    acc.finish()
}

const PPC_STREAM: u64 = 0x5050_4300;

/// Fit a tree `method` and check it against the sample. Replicated outcomes
/// use their own stream derived from the sampler seed.
pub fn posterior_predictive_check(
    method: Method,
    population: &PopulationFrame,
    sample: &SampleFrame,
    options: &EstimateOptions,
) -> Result<(PpcResult, FitReport)> {
    if !method.is_tree() {
        return Err(Error::Config(format!(
            "posterior predictive checks need a tree method, not `{method}`"
        )));
    }
    let mut acc = PpcAccumulator::new(sample.y())?;
    let (pop, samp) = if method.uses_propensity() {
        if !sample.is_linked() {
            return Err(Error::Unlinked("propensity-score methods"));
        }
        let ind = inclusion_vector(population, sample)?;
        let scores = fit_probit_bart(population, &ind, &options.propensity_config())?;
        append_propensity(population, sample, &scores)?
    } else {
        (population.clone(), sample.clone())
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(options.sampler.seed, PPC_STREAM));
    let mut err = None;
    let on_draw = |d: &Draw| {
        if err.is_none() {
            if let Err(e) = acc.push(d.sample_fit, d.sigma, &mut rng) {
                err = Some(e);
            }
        }
    };
    let report = match method {
        Method::Bart | Method::BartP => fit_bart(&pop, &samp, &options.sampler, on_draw)?,
        _ => fit_sbart(&pop, &samp, &options.sampler, on_draw)?,
    };
    if let Some(e) = err {
        return Err(e);
    }
    Ok((acc.finish()?, report))
}
