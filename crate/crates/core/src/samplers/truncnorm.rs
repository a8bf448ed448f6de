use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

/// Standard normal truncated to `[a, inf)`.
///
/// Plain rejection when `a <= 0` (acceptance at least one half), otherwise
/// exponential-proposal rejection with the optimal rate.
pub fn standard_lower<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z >= a {
                return z;
            }
        }
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(lambda).expect("positive rate");
    loop {
        let x = a + exp.sample(rng);
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (x - lambda) * (x - lambda) {
            return x;
        }
    }
}

/// `N(mean, 1)` restricted to `(0, inf)` when `positive`, else `(-inf, 0)`.
pub fn unit_variance_signed<R: Rng + ?Sized>(mean: f64, positive: bool, rng: &mut R) -> f64 {
    if positive {
        mean + standard_lower(-mean, rng)
    } else {
        mean - standard_lower(mean, rng)
    }
}
