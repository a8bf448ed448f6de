//! Bayesian backfitting over a fixed number of hard or soft trees.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::design::Columns;
use super::sparsity::SparsityState;
use crate::linalg;
use crate::trees::{
    choose_move, evaluate_hard, evaluate_soft, log_tree_prior, propose_move, MoveKind, MoveProbs,
    SplitPrior, Tree,
};

/// Soft leaves whose total weight over the training units falls below this
/// count as empty.
const SOFT_EMPTY: f64 = 1e-6;
const TAU_STEP: f64 = 0.2;
pub const TAU_INIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Hard,
    Soft,
}

/// Tree-to-unit map: leaf index per unit (hard) or a dense row-major
/// `n x leaves` weight matrix (soft).
#[derive(Clone, Debug)]
enum Basis {
    Hard { idx: Vec<u32>, leaves: usize },
    Soft { phi: Vec<f64>, leaves: usize },
}

impl Basis {
    fn build(mode: Mode, tree: &Tree, tau: f64, cols: &Columns) -> Basis {
        let positions = tree.leaf_positions();
        let leaves = tree.n_leaves();
        match mode {
            Mode::Hard => Basis::Hard {
                idx: (0..cols.n()).map(|i| positions[tree.descend(cols, i)]).collect(),
                leaves,
            },
            Mode::Soft => {
                let mut phi = vec![0.0; cols.n() * leaves];
                for (i, row) in phi.chunks_exact_mut(leaves).enumerate() {
                    tree.fill_soft_weights(&positions, tau, cols, i, row);
                }
                Basis::Soft { phi, leaves }
            }
        }
    }

    fn contributions(&self, values: &[f64], out: &mut [f64]) {
        match self {
            Basis::Hard { idx, .. } => {
                for (o, &k) in out.iter_mut().zip(idx) {
                    *o = values[k as usize];
                }
            }
            Basis::Soft { phi, leaves } => {
                for (o, row) in out.iter_mut().zip(phi.chunks_exact(*leaves)) {
                    *o = row.iter().zip(values).map(|(w, v)| w * v).sum();
                }
            }
        }
    }

    fn add_contributions(&self, values: &[f64], out: &mut [f64]) {
        match self {
            Basis::Hard { idx, .. } => {
                for (o, &k) in out.iter_mut().zip(idx) {
                    *o += values[k as usize];
                }
            }
            Basis::Soft { phi, leaves } => {
                for (o, row) in out.iter_mut().zip(phi.chunks_exact(*leaves)) {
                    *o += row.iter().zip(values).map(|(w, v)| w * v).sum::<f64>();
                }
            }
        }
    }

    fn stats(&self, resid: &[f64]) -> LeafStats {
        match self {
            Basis::Hard { idx, leaves } => {
                let mut count = vec![0.0; *leaves];
                let mut sum = vec![0.0; *leaves];
                for (&k, r) in idx.iter().zip(resid) {
                    count[k as usize] += 1.0;
                    sum[k as usize] += r;
                }
                let empty = count.contains(&0.0);
                LeafStats::Hard { count, sum, empty }
            }
            Basis::Soft { phi, leaves } => {
                let l = *leaves;
                let mut gram = vec![0.0; l * l];
                let mut b = vec![0.0; l];
                let mut colsum = vec![0.0; l];
                for (row, r) in phi.chunks_exact(l).zip(resid) {
                    for a in 0..l {
                        let wa = row[a];
                        if wa == 0.0 {
                            continue;
                        }
                        colsum[a] += wa;
                        b[a] += wa * r;
                        for c in 0..=a {
                            gram[a * l + c] += wa * row[c];
                        }
                    }
                }
                for a in 0..l {
                    for c in 0..a {
                        gram[c * l + a] = gram[a * l + c];
                    }
                }
                let empty = colsum.iter().any(|&s| s < SOFT_EMPTY);
                LeafStats::Soft { gram, b, leaves: l, empty }
            }
        }
    }
}

enum LeafStats {
    Hard { count: Vec<f64>, sum: Vec<f64>, empty: bool },
    Soft { gram: Vec<f64>, b: Vec<f64>, leaves: usize, empty: bool },
}

impl LeafStats {
    fn has_empty(&self) -> bool {
        match self {
            LeafStats::Hard { empty, .. } | LeafStats::Soft { empty, .. } => *empty,
        }
    }

    /// Cholesky factor of the leaf posterior precision and the scaled score.
    fn soft_factor(gram: &[f64], b: &[f64], l: usize, s2: f64, sm2: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lam: Vec<f64> = gram.iter().map(|g| g / s2).collect();
        for a in 0..l {
            lam[a * l + a] += 1.0 / sm2;
        }
        let ok = linalg::cholesky(&mut lam, l);
        debug_assert!(ok, "leaf precision is positive definite");
        let v: Vec<f64> = b.iter().map(|x| x / s2).collect();
        (lam, v)
    }

    /// Log marginal likelihood of the residuals with the leaves integrated
    /// out, dropping terms that do not depend on the tree.
    fn log_marginal(&self, sigma: f64, sm2: f64) -> f64 {
        let s2 = sigma * sigma;
        match self {
            LeafStats::Hard { count, sum, .. } => count
                .iter()
                .zip(sum)
                .map(|(&n, &s)| {
                    -0.5 * (1.0 + n * sm2 / s2).ln() + sm2 * s * s / (2.0 * s2 * (s2 + n * sm2))
                })
                .sum(),
            LeafStats::Soft { gram, b, leaves, .. } => {
                let l = *leaves;
                let (chol, mut v) = Self::soft_factor(gram, b, l, s2, sm2);
                let log_det: f64 = (0..l).map(|a| chol[a * l + a].ln()).sum::<f64>() * 2.0;
                linalg::forward_solve(&chol, l, &mut v);
                let quad: f64 = v.iter().map(|x| x * x).sum();
                -0.5 * (l as f64 * sm2.ln() + log_det) + 0.5 * quad
            }
        }
    }

    /// Draw leaf values from their Gaussian full conditional.
    fn draw_leaves<R: Rng + ?Sized>(&self, sigma: f64, sm2: f64, rng: &mut R) -> Vec<f64> {
        let s2 = sigma * sigma;
        match self {
            LeafStats::Hard { count, sum, .. } => count
                .iter()
                .zip(sum)
                .map(|(&n, &s)| {
                    let prec = 1.0 / sm2 + n / s2;
                    let z: f64 = StandardNormal.sample(rng);
                    (s / s2) / prec + z / prec.sqrt()
                })
                .collect(),
            LeafStats::Soft { gram, b, leaves, .. } => {
                let l = *leaves;
                let z: Vec<f64> = (0..l).map(|_| StandardNormal.sample(rng)).collect();
                let (chol, mut v) = Self::soft_factor(gram, b, l, s2, sm2);
                linalg::forward_solve(&chol, l, &mut v);
                for (vi, zi) in v.iter_mut().zip(&z) {
                    *vi += zi;
                }
                linalg::backward_solve_transpose(&chol, l, &mut v);
                v
            }
        }
    }
}

/// Acceptance counters per move kind: `(proposed, accepted)`.
#[derive(Clone, Debug, Default)]
pub struct MoveCounts {
    pub grow: (u64, u64),
    pub prune: (u64, u64),
    pub change: (u64, u64),
    pub swap: (u64, u64),
    pub tau: (u64, u64),
}

impl MoveCounts {
    fn slot(&mut self, kind: MoveKind) -> &mut (u64, u64) {
        match kind {
            MoveKind::Grow => &mut self.grow,
            MoveKind::Prune => &mut self.prune,
            MoveKind::Change => &mut self.change,
            MoveKind::Swap => &mut self.swap,
        }
    }

    pub fn structure_acceptance(&self) -> f64 {
        let (p, a) = [self.grow, self.prune, self.change, self.swap]
            .iter()
            .fold((0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct BackfitSettings {
    pub mode: Mode,
    pub trees: usize,
    pub sigma_mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub moves: MoveProbs,
    pub tau_rate: f64,
    pub tau_fixed: Option<f64>,
    pub sparsity: bool,
}

/// Ensemble state plus per-tree caches for the training units and the
/// prediction units.
pub struct Backfitter<'a> {
    settings: BackfitSettings,
    moves: MoveProbs,
    sm2: f64,
    train: &'a Columns,
    predict: Option<&'a Columns>,
    prior: SplitPrior,
    trees: Vec<Tree>,
    tau: Vec<f64>,
    basis: Vec<Basis>,
    contrib: Vec<Vec<f64>>,
    fit: Vec<f64>,
    resid: Vec<f64>,
    scratch: Vec<f64>,
    version: Vec<u64>,
    predict_cache: Vec<Option<(u64, Basis)>>,
    sparsity: Option<SparsityState>,
    pub counts: MoveCounts,
}

impl<'a> Backfitter<'a> {
    /// `predict = None` means predictions are wanted on the training units.
    pub fn new(
        settings: BackfitSettings,
        prior: SplitPrior,
        train: &'a Columns,
        predict: Option<&'a Columns>,
        init_fit: f64,
    ) -> Self {
        let m = settings.trees;
        let n = train.n();
        let any_split = prior.var_probs.iter().any(|&p| p > 0.0);
        let moves = if any_split {
            settings.moves
        } else {
            MoveProbs::pinned()
        };
        let tau0 = settings.tau_fixed.unwrap_or(TAU_INIT);
        let trees: Vec<Tree> = (0..m).map(|_| Tree::root(init_fit / m as f64)).collect();
        let basis: Vec<Basis> = trees
            .iter()
            .map(|t| Basis::build(settings.mode, t, tau0, train))
            .collect();
        let contrib = vec![vec![init_fit / m as f64; n]; m];
        let mut fit = vec![0.0; n];
        for c in &contrib {
            for (f, x) in fit.iter_mut().zip(c) {
                *f += x;
            }
        }
        let sparsity = (settings.sparsity && settings.mode == Mode::Soft).then(|| {
            let splittable: Vec<bool> = prior.var_probs.iter().map(|&p| p > 0.0).collect();
            SparsityState::new(&splittable)
        });
        Backfitter {
            sm2: settings.sigma_mu * settings.sigma_mu,
            moves,
            train,
            predict,
            prior,
            tau: vec![tau0; m],
            trees,
            basis,
            contrib,
            fit,
            resid: vec![0.0; n],
            scratch: vec![0.0; n],
            version: vec![0; m],
            predict_cache: (0..m).map(|_| None).collect(),
            sparsity,
            counts: MoveCounts::default(),
            settings,
        }
    }

    pub fn fit(&self) -> &[f64] {
        &self.fit
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn split_probs(&self) -> &[f64] {
        &self.prior.var_probs
    }

    /// One backfitting pass over all trees against `target` with residual sd
    /// `sigma`.
    pub fn sweep<R: Rng + ?Sized>(&mut self, target: &[f64], sigma: f64, rng: &mut R) {
        let mode = self.settings.mode;
        let (alpha, beta) = (self.settings.alpha, self.settings.beta);
        for m in 0..self.trees.len() {
            for i in 0..self.resid.len() {
                self.resid[i] = target[i] - self.fit[i] + self.contrib[m][i];
            }
            let mut stats = self.basis[m].stats(&self.resid);
            if let Some(kind) = choose_move(&self.trees[m], &self.moves, rng) {
                let prop = propose_move(&self.trees[m], kind, &self.moves, &self.prior, rng)
                    .expect("chosen move is applicable");
                self.counts.slot(kind).0 += 1;
                let basis = Basis::build(mode, &prop.tree, self.tau[m], self.train);
                let new_stats = basis.stats(&self.resid);
                if !new_stats.has_empty() {
                    let log_ratio = new_stats.log_marginal(sigma, self.sm2)
                        - stats.log_marginal(sigma, self.sm2)
                        + log_tree_prior(&prop.tree, alpha, beta)
                        - log_tree_prior(&self.trees[m], alpha, beta)
                        + prop.log_reverse
                        - prop.log_forward;
                    let u: f64 = rng.random();
                    if u.ln() < log_ratio {
                        self.counts.slot(kind).1 += 1;
                        self.trees[m] = prop.tree;
                        self.basis[m] = basis;
                        self.version[m] += 1;
                        stats = new_stats;
                    }
                }
            }
            if mode == Mode::Soft && self.settings.tau_fixed.is_none() {
                stats = self.update_tau(m, stats, sigma, rng);
            }
            let values = stats.draw_leaves(sigma, self.sm2, rng);
            self.trees[m].set_leaf_values(&values);
            self.basis[m].contributions(&values, &mut self.scratch);
            for i in 0..self.fit.len() {
                self.fit[i] += self.scratch[i] - self.contrib[m][i];
            }
            std::mem::swap(&mut self.contrib[m], &mut self.scratch);
        }
        // Refresh the running fit so rounding cannot accumulate.
        self.fit.iter_mut().for_each(|f| *f = 0.0);
        for c in &self.contrib {
            for (f, x) in self.fit.iter_mut().zip(c) {
                *f += x;
            }
        }
    }

    fn update_tau<R: Rng + ?Sized>(&mut self, m: usize, stats: LeafStats, sigma: f64, rng: &mut R) -> LeafStats {
        let rate = self.settings.tau_rate;
        let tau = self.tau[m];
        let z: f64 = StandardNormal.sample(rng);
        let proposed = tau * (TAU_STEP * z).exp();
        self.counts.tau.0 += 1;
        let basis = Basis::build(Mode::Soft, &self.trees[m], proposed, self.train);
        let new_stats = basis.stats(&self.resid);
        if new_stats.has_empty() || !proposed.is_finite() || proposed <= 0.0 {
            return stats;
        }
        // Exponential prior plus the log-scale proposal Jacobian.
        let log_ratio = new_stats.log_marginal(sigma, self.sm2) - stats.log_marginal(sigma, self.sm2)
            - rate * (proposed - tau)
            + (proposed / tau).ln();
        let u: f64 = rng.random();
        if u.ln() < log_ratio {
            self.counts.tau.1 += 1;
            self.tau[m] = proposed;
            self.basis[m] = basis;
            self.version[m] += 1;
            new_stats
        } else {
            stats
        }
    }

    /// Redraw split-variable probabilities when the sparsity prior is on.
    pub fn update_split_probs<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if let Some(state) = self.sparsity.as_mut() {
            let mut counts = vec![0usize; self.prior.n_vars()];
            for t in &self.trees {
                for v in t.split_vars() {
                    counts[v] += 1;
                }
            }
            self.prior.var_probs = state.update(&counts, rng);
        }
    }

    /// Ensemble predictions on the prediction units.
    pub fn predict(&mut self, out: &mut Vec<f64>) {
        let Some(cols) = self.predict else {
            out.clear();
            out.extend_from_slice(&self.fit);
            return;
        };
        out.clear();
        out.resize(cols.n(), 0.0);
        for m in 0..self.trees.len() {
            let stale = !matches!(&self.predict_cache[m], Some((v, _)) if *v == self.version[m]);
            if stale {
                let basis = Basis::build(self.settings.mode, &self.trees[m], self.tau[m], cols);
                self.predict_cache[m] = Some((self.version[m], basis));
            }
            let (_, basis) = self.predict_cache[m].as_ref().expect("cache filled");
            basis.add_contributions(&self.trees[m].leaf_values(), out);
        }
    }

    /// Largest gap between the cached training fit and a fresh evaluation of
    /// every tree.
    pub fn fit_cache_error(&self) -> f64 {
        (0..self.fit.len())
            .map(|i| {
                let direct: f64 = self
                    .trees
                    .iter()
                    .zip(&self.tau)
                    .map(|(t, &tau)| match self.settings.mode {
                        Mode::Hard => evaluate_hard(t, self.train, i),
                        Mode::Soft => evaluate_soft(t, tau, self.train, i),
                    })
                    .sum();
                (direct - self.fit[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}
