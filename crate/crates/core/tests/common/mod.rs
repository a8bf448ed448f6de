#![allow(dead_code)]

use finpop_core::frames::{CovariateSchema, PopulationFrame, SampleFrame};
use finpop_core::samplers::{fit_bart, fit_sbart, SamplerConfig};
use finpop_core::trees::MoveProbs;
use rand::seq::index::sample as choose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Population with one three-level column `g` and continuous `x1`, `x2`.
pub fn toy_population(n: usize, seed: u64) -> PopulationFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let x1: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    PopulationFrame::from_codes(CovariateSchema::new(["g"], ["x1", "x2"]), vec![g], &[3], vec![x1, x2], None)
        .unwrap()
}

pub fn signal(pop: &PopulationFrame, i: usize) -> f64 {
    let c = pop.covariates();
    3.0 + 2.0 * c.discrete(i, 0) as f64 + 4.0 * (c.continuous(i, 0) - 0.5).powi(2) + c.continuous(i, 1)
}

/// Simple random sample of `n` units with `y = signal + sd * N(0,1)`.
pub fn toy_sample(pop: &PopulationFrame, n: usize, sd: f64, seed: u64) -> SampleFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut link = choose(&mut rng, pop.n(), n).into_vec();
    link.sort_unstable();
    let y = link
        .iter()
        .map(|&i| {
            let z: f64 = StandardNormal.sample(&mut rng);
            signal(pop, i) + sd * z
        })
        .collect();
    SampleFrame::linked(pop, link, y).unwrap()
}

/// Mean and standard deviation (n - 1 divisor).
pub fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, s)
}

pub struct ConjugateCheck {
    pub draw_mean: f64,
    pub draw_sd: f64,
    pub exact_mean: f64,
    pub exact_sd: f64,
    pub draws: usize,
}

impl ConjugateCheck {
    pub fn mean_z(&self) -> f64 {
        (self.draw_mean - self.exact_mean) / (self.exact_sd / (self.draws as f64).sqrt())
    }

    pub fn sd_z(&self) -> f64 {
        (self.draw_sd - self.exact_sd) / (self.exact_sd / (2.0 * self.draws as f64).sqrt())
    }

    pub fn passes(&self) -> bool {
        self.mean_z().abs() <= 3.0 && self.sd_z().abs() <= 3.0
    }
}

/// Single tree pinned at its root with a known residual sd: every draw of
/// the fit is the leaf, whose posterior is the normal-mean conjugate one.
pub fn conjugate_single_leaf(draws: usize, seed: u64) -> ConjugateCheck {
    let pop = toy_population(400, seed);
    let sample = toy_sample(&pop, 120, 1.5, seed + 1);
    let sigma = 1.5;
    let cfg = SamplerConfig {
        trees: 1,
        n_burn: 10,
        n_keep: draws,
        moves: MoveProbs::pinned(),
        sigma_fixed: Some(sigma),
        seed,
        ..Default::default()
    };
    let mut leaf = Vec::with_capacity(draws);
    fit_bart(&pop, &sample, &cfg, |d| leaf.push(d.sample_fit[0])).unwrap();

    // Outcome scaled to [-0.5, 0.5]; leaf prior N(0, (0.5 / k)^2) on that scale.
    let y = sample.y();
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (center, scale) = ((lo + hi) / 2.0, hi - lo);
    let s2 = (sigma / scale).powi(2);
    let prior_var = (0.5 / cfg.k).powi(2);
    let sum: f64 = y.iter().map(|v| (v - center) / scale).sum();
    let post_var = 1.0 / (y.len() as f64 / s2 + 1.0 / prior_var);
    let post_mean = post_var * sum / s2;
    let (draw_mean, draw_sd) = moments(&leaf);
    ConjugateCheck {
        draw_mean,
        draw_sd,
        exact_mean: center + scale * post_mean,
        exact_sd: scale * post_var.sqrt(),
        draws,
    }
}

/// Largest gap between hard and near-zero-bandwidth soft population fits
/// over ten spot-checked units and every retained iteration.
pub fn soft_hard_gap(seed: u64) -> f64 {
    let pop = toy_population(300, seed);
    let sample = toy_sample(&pop, 100, 0.5, seed + 1);
    let cfg = SamplerConfig {
        trees: 10,
        n_burn: 50,
        n_keep: 50,
        tau_fixed: Some(1e-9),
        sparsity: false,
        seed,
        ..Default::default()
    };
    let units: Vec<usize> = (0..10).map(|k| k * 29).collect();
    let mut hard = Vec::new();
    fit_bart(&pop, &sample, &cfg, |d| hard.extend(units.iter().map(|&i| d.population_fit[i]))).unwrap();
    let mut soft = Vec::new();
    fit_sbart(&pop, &sample, &cfg, |d| soft.extend(units.iter().map(|&i| d.population_fit[i]))).unwrap();
    assert_eq!(hard.len(), soft.len());
    hard.iter().zip(&soft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
