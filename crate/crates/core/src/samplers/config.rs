use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trees::MoveProbs;

/// MCMC settings shared by the hard, soft and probit samplers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub trees: usize,
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    /// Leaf prior scale: `sigma_mu = 0.5 / (k sqrt(trees))` on the scaled outcome.
    pub k: f64,
    pub nu: f64,
    pub q: f64,
    pub alpha: f64,
    pub beta: f64,
    pub moves: MoveProbs,
    /// Rate of the exponential prior on each soft tree's bandwidth.
    pub tau_rate: f64,
    /// Pin every soft bandwidth at this value and skip its update.
    pub tau_fixed: Option<f64>,
    /// Dirichlet split-variable prior in soft mode.
    pub sparsity: bool,
    /// Pin the residual sd (original outcome scale) and skip its update.
    pub sigma_fixed: Option<f64>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            trees: 50,
            n_burn: 1000,
            n_keep: 1000,
            thin: 1,
            k: 2.0,
            nu: 3.0,
            q: 0.90,
            alpha: 0.95,
            beta: 2.0,
            moves: MoveProbs::default(),
            tau_rate: 10.0,
            tau_fixed: None,
            sparsity: true,
            sigma_fixed: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.trees == 0 || self.n_keep == 0 || self.thin == 0 {
            return bad("trees, n_keep and thin must be at least 1");
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad("q must lie in (0, 1)");
        }
        if !(self.nu > 0.0) {
            return bad("nu must be positive");
        }
        if !(self.k > 0.0) {
            return bad("k must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.beta >= 0.0) {
            return bad("tree prior needs 0 < alpha < 1 and beta >= 0");
        }
        let p = [self.moves.grow, self.moves.prune, self.moves.change, self.moves.swap];
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("move probabilities must be finite and non-negative");
        }
        if !self.moves.is_pinned() && self.moves.grow <= 0.0 {
            return bad("grow probability must be positive unless all moves are disabled");
        }
        if !(self.tau_rate > 0.0) {
            return bad("tau_rate must be positive");
        }
        if matches!(self.tau_fixed, Some(t) if !(t > 0.0 && t.is_finite())) {
            return bad("tau_fixed must be positive");
        }
        if matches!(self.sigma_fixed, Some(s) if !(s > 0.0 && s.is_finite())) {
            return bad("sigma_fixed must be positive");
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.n_burn + self.n_keep * self.thin
    }
}
