//! Classical weighting baselines: quantile discretization, post-stratification,
//! raking by iterative proportional fitting, and regression-and-post-stratification
//! with a pluggable mean model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{PopulationFrame, SampleFrame};
use crate::linalg;
use crate::stats;

/// How a continuous column is cut into bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinRule {
    Tertile,
    Quintile,
    /// `k` equal-probability bins.
    Quantiles(usize),
    /// Explicit, strictly increasing cut points.
    Custom(Vec<f64>),
}

impl BinRule {
    fn probabilities(&self) -> Option<Vec<f64>> {
        let k = match self {
            BinRule::Tertile => 3,
            BinRule::Quintile => 5,
            BinRule::Quantiles(k) => *k,
            BinRule::Custom(_) => return None,
        };
        Some((1..k).map(|j| j as f64 / k as f64).collect())
    }
}

/// Per-column binning rules; cut points come from the population.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub rules: Vec<(String, BinRule)>,
}

impl Discretizer {
    pub fn new() -> Self {
        Discretizer::default()
    }

    pub fn with(mut self, column: impl Into<String>, rule: BinRule) -> Self {
        self.rules.push((column.into(), rule));
        self
    }

    /// Apply `rule` to every continuous column of `population`.
    pub fn all_continuous(population: &PopulationFrame, rule: BinRule) -> Self {
        Discretizer {
            rules: population
                .schema()
                .continuous
                .iter()
                .map(|c| (c.clone(), rule.clone()))
                .collect(),
        }
    }
}

/// Cut points for one column: type-7 population quantiles, or the custom
/// cuts. Fails when ties leave a bin without population units.
pub fn cut_points(population: &PopulationFrame, column: &str, rule: &BinRule) -> Result<Vec<f64>> {
    let j = population
        .continuous_index(column)
        .ok_or_else(|| Error::WrongColumnKind(column.to_string(), "continuous"))?;
    let values = population.covariates().continuous_col(j);
    let sorted = stats::sorted_copy(values);
    let cuts = match rule.probabilities() {
        Some(probs) => probs
            .iter()
            .map(|&p| stats::quantile_sorted(&sorted, p))
            .collect(),
        None => match rule {
            BinRule::Custom(c) => c.clone(),
            _ => unreachable!(),
        },
    };
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateQuantiles(column.to_string()));
    }
    // Every bin must hold at least one population unit.
    let k = cuts.len() + 1;
    let mut counts = vec![0usize; k];
    for &v in values {
        counts[bin_of(&cuts, v)] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::DegenerateQuantiles(column.to_string()));
    }
    Ok(cuts)
}

/// Bin index: number of cuts strictly below `x` (so `x <= cut[0]` is bin 0).
/// Out-of-range values land in the end bins.
fn bin_of(cuts: &[f64], x: f64) -> usize {
    cuts.partition_point(|&c| c < x)
}

/// Replace each targeted continuous column by a discrete bin column (same
/// name, levels `"1"..="k"`) in both frames.
pub fn discretize(
    population: &PopulationFrame,
    sample: &SampleFrame,
    discretizer: &Discretizer,
) -> Result<(PopulationFrame, SampleFrame)> {
    let mut pop = population.clone();
    let mut samp = sample.clone();
    for (column, rule) in &discretizer.rules {
        let cuts = cut_points(&pop, column, rule)?;
        let labels: Vec<String> = (1..=cuts.len() + 1).map(|b| b.to_string()).collect();
        for frame_parts in [pop.parts_mut(), samp.parts_mut()] {
            let (schema, covariates, levels) = frame_parts;
            let j = schema
                .continuous
                .iter()
                .position(|c| c == column)
                .ok_or_else(|| Error::WrongColumnKind(column.clone(), "continuous"))?;
            let values = covariates.remove_continuous(j);
            schema.continuous.remove(j);
            covariates.push_discrete(values.iter().map(|&v| bin_of(&cuts, v) as u32).collect());
            schema.discrete.push(column.clone());
            levels.push(labels.clone());
        }
    }
    pop.schema().validate()?;
    Ok((pop, samp))
}

/// Post-strata: observed cross-classification cells of the `by` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Stratification {
    /// Cell key (one code per `by` column) of each stratum.
    pub cells: Vec<Vec<u32>>,
    pub labels: Vec<String>,
    pub assign_pop: Vec<usize>,
    pub assign_samp: Vec<usize>,
    pub pop_counts: Vec<usize>,
    pub samp_counts: Vec<usize>,
}

impl Stratification {
    pub fn n_strata(&self) -> usize {
        self.cells.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    PostStratification,
    Raking,
    Uniform,
}

/// Per-sample-unit weights together with the population size they sum to.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub w: Vec<f64>,
    pub kind: WeightKind,
    pub population_size: usize,
}

impl Weights {
    pub fn uniform(n: usize, population_size: usize) -> Self {
        Weights {
            w: vec![population_size as f64 / n as f64; n],
            kind: WeightKind::Uniform,
            population_size,
        }
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

fn discrete_columns(
    population: &PopulationFrame,
    sample: &SampleFrame,
    names: &[String],
) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            let j = population.discrete_index(name).ok_or_else(|| {
                if population.continuous_index(name).is_some() {
                    Error::WrongColumnKind(name.clone(), "discrete")
                } else {
                    Error::Schema(format!("unknown column `{name}`"))
                }
            })?;
            if sample.schema().discrete.get(j) != Some(name) {
                return Err(Error::Schema(format!(
                    "column `{name}` is not discrete in the sample"
                )));
            }
            Ok(j)
        })
        .collect()
}

fn cell_label(population: &PopulationFrame, names: &[String], cols: &[usize], key: &[u32]) -> String {
    if names.is_empty() {
        return "(all)".into();
    }
    names
        .iter()
        .zip(cols)
        .zip(key)
        .map(|((n, &j), &c)| format!("{n}={}", population.levels()[j][c as usize]))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Build post-strata over the `by` columns (empty `by` means one stratum).
pub fn stratify(
    population: &PopulationFrame,
    sample: &SampleFrame,
    by: &[String],
) -> Result<Stratification> {
    let cols = discrete_columns(population, sample, by)?;
    let key_of = |cov: &crate::frames::Covariates, i: usize| -> Vec<u32> {
        cols.iter().map(|&j| cov.discrete(i, j)).collect()
    };
    let mut index: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for i in 0..population.n() {
        let len = index.len();
        index.entry(key_of(population.covariates(), i)).or_insert(len);
    }
    // Renumber strata in key order so output does not depend on row order.
    let cells: Vec<Vec<u32>> = index.keys().cloned().collect();
    let order: BTreeMap<Vec<u32>, usize> = cells
        .iter()
        .enumerate()
        .map(|(s, k)| (k.clone(), s))
        .collect();
    let assign_pop: Vec<usize> = (0..population.n())
        .map(|i| order[&key_of(population.covariates(), i)])
        .collect();
    let assign_samp = (0..sample.n())
        .map(|i| {
            let key = key_of(sample.covariates(), i);
            order.get(&key).copied().ok_or_else(|| Error::UnmatchedStratum {
                cell: cell_label(population, by, &cols, &key),
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut pop_counts = vec![0; cells.len()];
    for &s in &assign_pop {
        pop_counts[s] += 1;
    }
    let mut samp_counts = vec![0; cells.len()];
    for &s in &assign_samp {
        samp_counts[s] += 1;
    }
    let labels = cells
        .iter()
        .map(|k| cell_label(population, by, &cols, k))
        .collect();
    Ok(Stratification {
        cells,
        labels,
        assign_pop,
        assign_samp,
        pop_counts,
        samp_counts,
    })
}

/// Post-stratification weights `w_i = N_j / n_j`.
pub fn post_stratify(
    population: &PopulationFrame,
    sample: &SampleFrame,
    by: &[String],
) -> Result<(Stratification, Weights)> {
    let strat = stratify(population, sample, by)?;
    if let Some(j) = (0..strat.n_strata()).find(|&j| strat.samp_counts[j] == 0) {
        return Err(Error::EmptyCell {
            cell: strat.labels[j].clone(),
        });
    }
    let w = strat
        .assign_samp
        .iter()
        .map(|&j| strat.pop_counts[j] as f64 / strat.samp_counts[j] as f64)
        .collect();
    let weights = Weights {
        w,
        kind: WeightKind::PostStratification,
        population_size: population.n(),
    };
    Ok((strat, weights))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RakingOptions {
    /// Maximum absolute discrepancy allowed on any margin level total.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RakingOptions {
    fn default() -> Self {
        RakingOptions {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

/// Raking weights by iterative proportional fitting to the population
/// margins of each `margins` column, starting from `N / n`.
pub fn rake(
    population: &PopulationFrame,
    sample: &SampleFrame,
    margins: &[String],
    options: RakingOptions,
) -> Result<Weights> {
    let cols = discrete_columns(population, sample, margins)?;
    let level_counts = population.level_counts();
    let targets: Vec<Vec<f64>> = cols
        .iter()
        .map(|&j| {
            let mut t = vec![0.0; level_counts[j] as usize];
            for &c in population.covariates().discrete_col(j) {
                t[c as usize] += 1.0;
            }
            t
        })
        .collect();
    let n = sample.n();
    let mut w = vec![population.n() as f64 / n as f64; n];
    for (m, &j) in cols.iter().enumerate() {
        let mut present = vec![false; targets[m].len()];
        for &c in sample.covariates().discrete_col(j) {
            present[c as usize] = true;
        }
        if let Some(level) = (0..present.len()).find(|&l| !present[l] && targets[m][l] > 0.0) {
            return Err(Error::EmptyMarginLevel {
                column: margins[m].clone(),
                level: population.levels()[j][level].clone(),
                total: targets[m][level],
            });
        }
    }
    let discrepancy = |w: &[f64]| -> f64 {
        let mut worst = 0.0f64;
        for (m, &j) in cols.iter().enumerate() {
            let mut tot = vec![0.0; targets[m].len()];
            for (i, &c) in sample.covariates().discrete_col(j).iter().enumerate() {
                tot[c as usize] += w[i];
            }
            for (t, target) in tot.iter().zip(&targets[m]) {
                worst = worst.max((t - target).abs());
            }
        }
        worst
    };
    let mut current = discrepancy(&w);
    let mut iterations = 0;
    while current > options.tol {
        if iterations == options.max_iter {
            return Err(Error::RakingNotConverged {
                iterations,
                discrepancy: current,
            });
        }
        for (m, &j) in cols.iter().enumerate() {
            let codes = sample.covariates().discrete_col(j);
            let mut tot = vec![0.0; targets[m].len()];
            for (i, &c) in codes.iter().enumerate() {
                tot[c as usize] += w[i];
            }
            let factor: Vec<f64> = tot
                .iter()
                .zip(&targets[m])
                .map(|(&t, &target)| if t > 0.0 { target / t } else { 0.0 })
                .collect();
            for (i, &c) in codes.iter().enumerate() {
                w[i] *= factor[c as usize];
            }
        }
        iterations += 1;
        current = discrepancy(&w);
    }
    Ok(Weights {
        w,
        kind: WeightKind::Raking,
        population_size: population.n(),
    })
}

/// `sum_i w_i y_i / N`.
pub fn weighted_mean(sample: &SampleFrame, weights: &Weights) -> Result<f64> {
    if weights.w.len() != sample.n() {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: sample.n(),
            actual: weights.w.len(),
        });
    }
    let total: f64 = weights.w.iter().zip(sample.y()).map(|(w, y)| w * y).sum();
    Ok(total / weights.population_size as f64)
}

/// Linearization standard error of the post-stratified mean, treating each
/// stratum as a simple random sample (with finite population correction).
/// Strata with a single sample unit contribute no variance.
pub fn post_stratified_se(strat: &Stratification, sample: &SampleFrame) -> f64 {
    let big_n: usize = strat.pop_counts.iter().sum();
    let mut by_stratum: Vec<Vec<f64>> = vec![Vec::new(); strat.n_strata()];
    for (i, &j) in strat.assign_samp.iter().enumerate() {
        by_stratum[j].push(sample.y()[i]);
    }
    let var: f64 = by_stratum
        .iter()
        .enumerate()
        .filter(|(_, ys)| ys.len() > 1)
        .map(|(j, ys)| {
            let share = strat.pop_counts[j] as f64 / big_n as f64;
            let fpc = 1.0 - ys.len() as f64 / strat.pop_counts[j] as f64;
            share * share * fpc * stats::variance(ys) / ys.len() as f64
        })
        .sum();
    var.sqrt()
}

/// Linearization standard error of a calibrated (raked) mean: residuals from
/// a weighted regression on the margin indicators, with-replacement variance.
pub fn raking_se(
    population: &PopulationFrame,
    sample: &SampleFrame,
    margins: &[String],
    weights: &Weights,
) -> Result<f64> {
    let cols = discrete_columns(population, sample, margins)?;
    let level_counts = population.level_counts();
    let n = sample.n();
    let mut k = 1;
    for &j in &cols {
        k += level_counts[j] as usize - 1;
    }
    let mut design = vec![0.0; n * k];
    let mut target = vec![0.0; n];
    for i in 0..n {
        let sw = weights.w[i].sqrt();
        let row = &mut design[i * k..(i + 1) * k];
        row[0] = sw;
        let mut offset = 1;
        for &j in &cols {
            let c = sample.covariates().discrete(i, j) as usize;
            if c > 0 {
                row[offset + c - 1] = sw;
            }
            offset += level_counts[j] as usize - 1;
        }
        target[i] = sw * sample.y()[i];
    }
    let residuals: Vec<f64> = match linalg::least_squares(&design, n, k, &target) {
        Some(beta) => (0..n)
            .map(|i| {
                let sw = weights.w[i].sqrt();
                let fit: f64 = (0..k).map(|a| design[i * k + a] * beta[a]).sum::<f64>();
                if sw > 0.0 {
                    sample.y()[i] - fit / sw
                } else {
                    0.0
                }
            })
            .collect(),
        None => {
            let m = weighted_mean(sample, weights)? * weights.population_size as f64 / weights.total();
            sample.y().iter().map(|y| y - m).collect()
        }
    };
    let big_n = weights.population_size as f64;
    let scores: Vec<f64> = residuals
        .iter()
        .zip(&weights.w)
        .map(|(e, w)| w * e / big_n)
        .collect();
    if n < 2 {
        return Ok(0.0);
    }
    let m = stats::mean(&scores);
    let ss: f64 = scores.iter().map(|u| (u - m) * (u - m)).sum();
    Ok((n as f64 / (n as f64 - 1.0) * ss).sqrt())
}

/// A model of `E(Y | covariates)` fit on the sample and evaluated on every
/// population unit.
pub trait MeanModel {
    fn fit_predict(&self, population: &PopulationFrame, sample: &SampleFrame) -> Result<Vec<f64>>;
}

/// Saturated model on discrete columns, computed as cell means.
#[derive(Clone, Debug)]
pub struct SaturatedCellMeans {
    pub by: Vec<String>,
}

impl MeanModel for SaturatedCellMeans {
    fn fit_predict(&self, population: &PopulationFrame, sample: &SampleFrame) -> Result<Vec<f64>> {
        let strat = stratify(population, sample, &self.by)?;
        if let Some(j) = (0..strat.n_strata()).find(|&j| strat.samp_counts[j] == 0) {
            return Err(Error::EmptyCell {
                cell: strat.labels[j].clone(),
            });
        }
        let mut sums = vec![0.0; strat.n_strata()];
        for (i, &j) in strat.assign_samp.iter().enumerate() {
            sums[j] += sample.y()[i];
        }
        let means: Vec<f64> = sums
            .iter()
            .zip(&strat.samp_counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        Ok(strat.assign_pop.iter().map(|&j| means[j]).collect())
    }
}

/// Predicts the sample mean everywhere.
#[derive(Clone, Copy, Debug)]
pub struct ConstantMean;

impl MeanModel for ConstantMean {
    fn fit_predict(&self, population: &PopulationFrame, sample: &SampleFrame) -> Result<Vec<f64>> {
        Ok(vec![stats::mean(sample.y()); population.n()])
    }
}

/// Ordinary least squares on continuous columns plus treatment-coded
/// indicators for discrete columns.
#[derive(Clone, Copy, Debug)]
pub struct LinearModel;

pub(crate) fn linear_design(
    covariates: &crate::frames::Covariates,
    level_counts: &[u32],
) -> (Vec<f64>, usize) {
    let n = covariates.n_rows();
    let k = 1
        + level_counts.iter().map(|&l| l.saturating_sub(1) as usize).sum::<usize>()
        + covariates.n_continuous();
    let mut design = vec![0.0; n * k];
    for i in 0..n {
        let row = &mut design[i * k..(i + 1) * k];
        row[0] = 1.0;
        let mut offset = 1;
        for (j, &levels) in level_counts.iter().enumerate() {
            let c = covariates.discrete(i, j) as usize;
            if c > 0 {
                row[offset + c - 1] = 1.0;
            }
            offset += levels.saturating_sub(1) as usize;
        }
        for j in 0..covariates.n_continuous() {
            row[offset + j] = covariates.continuous(i, j);
        }
    }
    (design, k)
}

impl MeanModel for LinearModel {
    fn fit_predict(&self, population: &PopulationFrame, sample: &SampleFrame) -> Result<Vec<f64>> {
        let levels = population.level_counts();
        let (xs, k) = linear_design(sample.covariates(), &levels);
        let beta = linalg::least_squares(&xs, sample.n(), k, sample.y())
            .ok_or_else(|| Error::Config("linear model design is rank deficient".into()))?;
        let (xp, _) = linear_design(population.covariates(), &levels);
        Ok((0..population.n())
            .map(|i| (0..k).map(|a| xp[i * k + a] * beta[a]).sum())
            .collect())
    }
}

/// `(1/N) sum_{i in U} E_hat(Y_i | covariates)`.
pub fn rp_estimate(
    population: &PopulationFrame,
    sample: &SampleFrame,
    model: &dyn MeanModel,
) -> Result<f64> {
    let pred = model.fit_predict(population, sample)?;
    Ok(pred.iter().sum::<f64>() / population.n() as f64)
}
