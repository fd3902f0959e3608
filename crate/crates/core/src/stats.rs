//! Small numeric helpers shared across modules.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shannon entropy (natural log) of `p / sum(p)`. Zero entries contribute 0.
pub fn entropy(p: &[f64]) -> f64 {
    let total: f64 = p.iter().sum();
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let q = v / total;
            -q * q.ln()
        })
        .sum()
}

/// Normalize a non-negative vector to sum 1.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::invalid("vector has negative or non-finite entries"));
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("vector sums to zero".into()));
    }
    Ok(v.iter().map(|&x| x / total).collect())
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// z-scores using the sample standard deviation.
pub fn standardize(v: &[f64]) -> Result<Vec<f64>> {
    let m = mean(v);
    let sd = sample_sd(v);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok(v.iter().map(|x| (x - m) / sd).collect())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("pearson needs two equal-length series of length >= 2"));
    }
    let ma = mean(a);
    let mb = mean(b);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Degenerate("zero variance in correlation".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Simple OLS `y = a + b x`. Returns `(intercept, slope, residuals)`.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("ols needs at least two points"));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::Degenerate("all covariate values are equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    Ok((intercept, slope, residuals))
}

/// Linear-interpolation quantile of an ascending sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-place softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

pub fn ln_factorial(n: f64) -> f64 {
    libm::lgamma(n + 1.0)
}

/// KL(c || p) for strictly positive simplex vectors.
pub fn kl_divergence(c: &[f64], p: &[f64]) -> f64 {
    c.iter()
        .zip(p)
        .filter(|(ci, _)| **ci > 0.0)
        .map(|(ci, pi)| ci * (ci / pi).ln())
        .sum()
}

pub fn total_variation(x: &[f64], y: &[f64]) -> f64 {
    0.5 * x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Dirichlet draw via normalized gammas.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
            .collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Multinomial draw by sequential conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; p.len()];
    let mut remaining = n;
    let mut mass_left: f64 = p.iter().sum();
    for (k, &pk) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == p.len() {
            out[k] = remaining;
            break;
        }
        let prob = if mass_left > 0.0 {
            (pk / mass_left).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(remaining, prob).expect("valid binomial").sample(rng);
        out[k] = draw;
        remaining -= draw;
        mass_left -= pk;
    }
    out
}

/// Posterior-style summary of a scalar sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl Summary {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        Summary {
            mean: mean(samples),
            sd: sample_sd(samples),
            q025: quantile_sorted(&sorted, 0.025),
            q50: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_of_uniform() {
        assert_abs_diff_eq!(entropy(&[1.0; 4]), 4f64.ln(), epsilon = 1e-12);
        assert_eq!(entropy(&[0.0, 3.0]), 0.0);
    }

    #[test]
    fn ols_hand_solve() {
        let (_, _, r) = ols_line(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_abs_diff_eq!(r[0], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[2], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn multinomial_total_is_exact() {
        let mut rng = crate::rng::substream(1, "t");
        let draw = sample_multinomial(&mut rng, 200, &[0.1, 0.0, 0.6, 0.3]);
        assert_eq!(draw.iter().sum::<u64>(), 200);
        assert_eq!(draw[1], 0);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_abs_diff_eq!(quantile_sorted(&v, 0.25), 2.0, epsilon = 1e-12);
    }
}
