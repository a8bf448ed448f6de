use crate::error::{Error, Result};
use crate::frames::{Covariates, PopulationFrame};
use crate::stats;
use crate::trees::{CovariateSource, SplitCandidates, SplitPrior};

/// Number of interior population quantiles offered as continuous cuts.
const GRID_SIZE: usize = 100;

/// Column-major covariates with continuous columns min-max scaled to the
/// population range.
#[derive(Clone, Debug)]
pub struct Columns {
    n: usize,
    discrete: Vec<Vec<u32>>,
    continuous: Vec<Vec<f64>>,
}

impl Columns {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_vars(&self) -> usize {
        self.discrete.len() + self.continuous.len()
    }
}

impl CovariateSource for Columns {
    #[inline]
    fn code(&self, unit: usize, var: usize) -> u32 {
        self.discrete[var][unit]
    }

    #[inline]
    fn value(&self, unit: usize, var: usize) -> f64 {
        self.continuous[var - self.discrete.len()][unit]
    }
}

/// Training and prediction covariates on a common scale plus the split
/// candidates derived from the population.
#[derive(Clone, Debug)]
pub struct Design {
    pub train: Columns,
    pub population: Columns,
    pub candidates: Vec<SplitCandidates>,
}

impl Design {
    pub fn new(population: &PopulationFrame, train: &Covariates) -> Result<Self> {
        let pop = population.covariates();
        if train.n_discrete() != pop.n_discrete() || train.n_continuous() != pop.n_continuous() {
            return Err(Error::Schema(
                "training covariates do not match the population schema".into(),
            ));
        }
        let mut candidates = Vec::with_capacity(pop.n_discrete() + pop.n_continuous());
        for &k in &population.level_counts() {
            candidates.push(if k >= 2 {
                SplitCandidates::Levels(k)
            } else {
                SplitCandidates::None
            });
        }
        let mut bounds = Vec::with_capacity(pop.n_continuous());
        for j in 0..pop.n_continuous() {
            let col = pop.continuous_col(j);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            bounds.push((lo, hi));
            if hi > lo {
                let scaled: Vec<f64> = col.iter().map(|x| (x - lo) / (hi - lo)).collect();
                candidates.push(SplitCandidates::Cuts(cut_grid(&scaled)));
            } else {
                candidates.push(SplitCandidates::None);
            }
        }
        let scale = |cov: &Covariates| Columns {
            n: cov.n_rows(),
            discrete: (0..cov.n_discrete()).map(|j| cov.discrete_col(j).to_vec()).collect(),
            continuous: (0..cov.n_continuous())
                .map(|j| {
                    let (lo, hi) = bounds[j];
                    cov.continuous_col(j)
                        .iter()
                        .map(|x| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 })
                        .collect()
                })
                .collect(),
        };
        Ok(Design {
            train: scale(train),
            population: scale(pop),
            candidates,
        })
    }

    pub fn split_prior(&self) -> SplitPrior {
        SplitPrior::uniform(self.candidates.clone())
    }
}

/// Population quantiles at `i / (GRID_SIZE + 1)`, deduplicated and kept
/// strictly inside the observed range.
fn cut_grid(values: &[f64]) -> Vec<f64> {
    let sorted = stats::sorted_copy(values);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut cuts: Vec<f64> = (1..=GRID_SIZE)
        .map(|i| stats::quantile_sorted(&sorted, i as f64 / (GRID_SIZE + 1) as f64))
        .filter(|&c| c > lo && c < hi)
        .collect();
    cuts.dedup();
    cuts
}

/// Affine map of the outcome onto `[-0.5, 0.5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutcomeScaler {
    pub center: f64,
    pub scale: f64,
}

impl OutcomeScaler {
    pub fn fit(y: &[f64]) -> Self {
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let range = hi - lo;
        let scale = if range > 0.0 { range } else { center.abs().max(1.0) };
        OutcomeScaler { center, scale }
    }

    pub fn identity() -> Self {
        OutcomeScaler {
            center: 0.0,
            scale: 1.0,
        }
    }

    #[inline]
    pub fn apply(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        self.center + self.scale * z
    }
}
