use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

const GRID_POINTS: usize = 100;

/// Dirichlet split-variable probabilities with a Beta(0.5, 1) prior on
/// `a / (a + P)`, where `a` is the Dirichlet concentration and `P` the number
/// of splittable variables.
#[derive(Clone, Debug)]
pub struct SparsityState {
    /// Indices of the splittable variables.
    active: Vec<usize>,
    n_vars: usize,
    pub alpha: f64,
    grid: Vec<f64>,
    log_prior: Vec<f64>,
}

impl SparsityState {
    pub fn new(splittable: &[bool]) -> Self {
        let active: Vec<usize> = (0..splittable.len()).filter(|&j| splittable[j]).collect();
        let p = active.len().max(1) as f64;
        // Log-spaced concentration grid; the log-prior carries the Jacobian of
        // the a -> a/(a+P) map and the log-spacing factor `a`.
        let (lo, hi) = ((p * 1e-3).ln(), (p * 1e3).ln());
        let grid: Vec<f64> = (0..GRID_POINTS)
            .map(|i| (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp())
            .collect();
        let log_prior = grid
            .iter()
            .map(|&a| {
                let w = a / (a + p);
                -0.5 * w.ln() + p.ln() - 2.0 * (a + p).ln() + a.ln()
            })
            .collect();
        SparsityState {
            active,
            n_vars: splittable.len(),
            alpha: p,
            grid,
            log_prior,
        }
    }

    /// Draw split probabilities from their Dirichlet conditional given the
    /// split counts, then the concentration from its gridded conditional.
    pub fn update<R: Rng + ?Sized>(&mut self, counts: &[usize], rng: &mut R) -> Vec<f64> {
        let p = self.active.len();
        let mut probs = vec![0.0; self.n_vars];
        if p == 0 {
            return probs;
        }
        let base = self.alpha / p as f64;
        let log_g: Vec<f64> = self
            .active
            .iter()
            .map(|&j| log_gamma_draw(base + counts[j] as f64, rng))
            .collect();
        let max = log_g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_g.iter().map(|g| (g - max).exp()).sum();
        let log_norm = max + total.ln();
        let log_s: Vec<f64> = log_g.iter().map(|g| g - log_norm).collect();
        for (k, &j) in self.active.iter().enumerate() {
            probs[j] = log_s[k].exp();
        }
        self.alpha = self.draw_alpha(&log_s, rng);
        probs
    }

    fn draw_alpha<R: Rng + ?Sized>(&self, log_s: &[f64], rng: &mut R) -> f64 {
        let p = log_s.len() as f64;
        let sum_log: f64 = log_s.iter().sum();
        let logw: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.log_prior)
            .map(|(&a, lp)| ln_gamma(a) - p * ln_gamma(a / p) + (a / p) * sum_log + lp)
            .collect();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (k, wk) in w.iter().enumerate() {
            if u < *wk {
                return self.grid[k];
            }
            u -= wk;
        }
        self.grid[GRID_POINTS - 1]
    }
}

/// `log G` with `G ~ Gamma(shape, 1)`, stable for tiny shapes via
/// `G = G' U^(1/shape)`, `G' ~ Gamma(shape + 1, 1)`.
fn log_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random();
        g.ln() + u.ln() / shape
    }
}
