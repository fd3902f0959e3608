//! Log posterior and its gradient on the unconstrained parameter vector.

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{TrajectoryData, TransferModel};
use crate::error::{Error, Result};
use crate::hmc::LogDensity;
use crate::stats::ln_factorial;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
/// Authors per reduction chunk; fixed so sums do not depend on thread count.
const CHUNK: usize = 16;

/// How author-level coefficients enter the unconstrained vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// `β` itself.
    Centered,
    /// `z` with `β = μ + σ z`.
    #[default]
    NonCentered,
}

/// Offsets into the unconstrained vector
/// `[b | μ | ln σ | γ | δ | λ | λ' | δ0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelLayout {
    pub n: usize,
    pub k: usize,
    pub parametrization: Parametrization,
}

impl ModelLayout {
    pub fn new(n: usize, k: usize, parametrization: Parametrization) -> Self {
        ModelLayout { n, k, parametrization }
    }

    fn per_author(&self) -> usize {
        self.k * (self.k - 1)
    }
    pub fn beta_len(&self) -> usize {
        self.n * self.per_author()
    }
    pub fn mu(&self) -> usize {
        self.beta_len()
    }
    pub fn log_sigma(&self) -> usize {
        self.mu() + self.k * self.k
    }
    pub fn gamma(&self) -> usize {
        self.log_sigma() + self.per_author()
    }
    pub fn delta(&self) -> usize {
        self.gamma() + self.k * self.k
    }
    pub fn lambda(&self) -> usize {
        self.delta() + self.k * self.k
    }
    pub fn lambda_prime(&self) -> usize {
        self.lambda() + 1
    }
    pub fn delta0(&self) -> usize {
        self.lambda() + 2
    }
    pub fn dim(&self) -> usize {
        self.lambda() + 3
    }
    /// Length of the population block (everything after `b`).
    pub fn population_len(&self) -> usize {
        self.dim() - self.beta_len()
    }

    /// Natural-scale parameters from an unconstrained vector.
    pub fn unpack(&self, q: &[f64]) -> TransferModel {
        let (k, km) = (self.k, self.k - 1);
        let mu = Array2::from_shape_vec((k, k), q[self.mu()..self.log_sigma()].to_vec()).expect("shape");
        let sigma = Array2::from_shape_vec(
            (k, km),
            q[self.log_sigma()..self.gamma()].iter().map(|u| u.exp()).collect(),
        )
        .expect("shape");
        let raw = Array3::from_shape_vec((self.n, k, km), q[..self.beta_len()].to_vec()).expect("shape");
        let beta = match self.parametrization {
            Parametrization::Centered => raw,
            Parametrization::NonCentered => {
                let mut b = raw;
                for mut author in b.outer_iter_mut() {
                    for o in 0..k {
                        for t in 0..km {
                            author[[o, t]] = mu[[o, t]] + sigma[[o, t]] * author[[o, t]];
                        }
                    }
                }
                b
            }
        };
        TransferModel {
            beta,
            mu,
            sigma,
            gamma: Array2::from_shape_vec((k, k), q[self.gamma()..self.delta()].to_vec()).expect("shape"),
            delta: Array2::from_shape_vec((k, k), q[self.delta()..self.lambda()].to_vec()).expect("shape"),
            lambda: q[self.lambda()],
            lambda_prime: q[self.lambda_prime()],
            delta0: q[self.delta0()],
        }
    }

    /// Inverse of [`unpack`](Self::unpack).
    pub fn pack(&self, m: &TransferModel) -> Result<Vec<f64>> {
        m.validate()?;
        if m.beta.dim().0 != self.n || m.num_topics() != self.k {
            return Err(Error::invalid("model does not match layout"));
        }
        let mut q = Vec::with_capacity(self.dim());
        match self.parametrization {
            Parametrization::Centered => q.extend(m.beta.iter()),
            Parametrization::NonCentered => {
                for author in m.beta.outer_iter() {
                    for o in 0..self.k {
                        for t in 0..self.k - 1 {
                            q.push((author[[o, t]] - m.mu[[o, t]]) / m.sigma[[o, t]]);
                        }
                    }
                }
            }
        }
        q.extend(m.mu.iter());
        q.extend(m.sigma.iter().map(|s| s.ln()));
        q.extend(m.gamma.iter());
        q.extend(m.delta.iter());
        q.extend([m.lambda, m.lambda_prime, m.delta0]);
        Ok(q)
    }
}

/// Posterior density for one dataset.
#[derive(Debug, Clone)]
pub struct TransferPosterior<'a> {
    pub data: &'a TrajectoryData,
    pub layout: ModelLayout,
    log_norm: Vec<f64>,
}

impl<'a> TransferPosterior<'a> {
    pub fn new(data: &'a TrajectoryData, parametrization: Parametrization) -> Result<Self> {
        data.validate()?;
        let layout = ModelLayout::new(data.num_authors(), data.num_topics(), parametrization);
        let log_norm = data
            .y
            .rows()
            .into_iter()
            .map(|r| ln_factorial(r.sum()) - r.iter().map(|&v| ln_factorial(v)).sum::<f64>())
            .collect();
        Ok(TransferPosterior { data, layout, log_norm })
    }

    /// Likelihood plus the author-level prior for authors in `range`.
    /// Writes author gradients into `gb` and adds population gradients to `gp`.
    fn author_block(&self, q: &[f64], sig: &[f64], first: usize, gb: &mut [f64], gp: &mut [f64]) -> f64 {
        let l = &self.layout;
        let (k, km) = (l.k, l.k - 1);
        let pa = l.per_author();
        let off = l.mu();
        let (o_mu, o_ls, o_g, o_d) = (0, l.log_sigma() - off, l.gamma() - off, l.delta() - off);
        let mu = &q[l.mu()..l.log_sigma()];
        let ls = &q[l.log_sigma()..l.gamma()];
        let gamma = &q[l.gamma()..l.delta()];
        let delta = &q[l.delta()..l.lambda()];
        let non_centered = l.parametrization == Parametrization::NonCentered;

        let mut eta = vec![0.0; k];
        let mut theta = vec![0.0; k * k];
        let mut p = vec![0.0; k];
        let mut gy = vec![0.0; k];
        let mut total = 0.0;
        for (slot, g_author) in gb.chunks_mut(pa).enumerate() {
            let a = first + slot;
            let b = &q[a * pa..(a + 1) * pa];
            let x = self.data.x.row(a);
            let y = self.data.y.row(a);
            let ia = self.data.intellectual.row(a);
            let sa = self.data.social.row(a);

            // author-level prior
            for (j, (&bj, g)) in b.iter().zip(g_author.iter_mut()).enumerate() {
                if non_centered {
                    total += -0.5 * bj * bj - HALF_LN_2PI;
                    *g = -bj;
                } else {
                    let (o, t) = (j / km, j % km);
                    let s = sig[j];
                    let r = (bj - mu[o * k + t]) / s;
                    total += -0.5 * r * r - ls[j] - HALF_LN_2PI;
                    *g = -r / s;
                    gp[o_mu + o * k + t] += r / s;
                    gp[o_ls + j] += r * r - 1.0;
                }
            }

            // mixing rows and predicted portfolio
            p.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..k {
                if x[o] == 0.0 {
                    continue;
                }
                for t in 0..k {
                    let base = if t < km {
                        let j = o * km + t;
                        if non_centered {
                            mu[o * k + t] + sig[j] * b[j]
                        } else {
                            b[j]
                        }
                    } else {
                        mu[o * k + t]
                    };
                    eta[t] = base + gamma[o * k + t] * ia[t] + delta[o * k + t] * sa[t];
                }
                let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for t in 0..k {
                    let e = (eta[t] - m).exp();
                    theta[o * k + t] = e;
                    z += e;
                }
                for t in 0..k {
                    theta[o * k + t] /= z;
                    p[t] += x[o] * theta[o * k + t];
                }
            }
            let mut ll = self.log_norm[a];
            for t in 0..k {
                if y[t] > 0.0 {
                    if p[t] <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    ll += y[t] * p[t].ln();
                    gy[t] = y[t] / p[t];
                } else {
                    gy[t] = 0.0;
                }
            }
            total += ll;

            // back-propagate through each origin row
            for o in 0..k {
                if x[o] == 0.0 {
                    continue;
                }
                let row = &theta[o * k..(o + 1) * k];
                let avg: f64 = row.iter().zip(&gy).map(|(th, g)| th * g).sum();
                for t in 0..k {
                    let ge = x[o] * row[t] * (gy[t] - avg);
                    let c = o * k + t;
                    gp[o_g + c] += ge * ia[t];
                    gp[o_d + c] += ge * sa[t];
                    if t < km {
                        let j = o * km + t;
                        if non_centered {
                            let s = sig[j];
                            g_author[j] += ge * s;
                            gp[o_mu + c] += ge;
                            gp[o_ls + j] += ge * s * b[j];
                        } else {
                            g_author[j] += ge;
                        }
                    } else {
                        gp[o_mu + c] += ge;
                    }
                }
            }
        }
        total
    }

    /// Population-level priors; adds to `gp`.
    fn population_prior(&self, q: &[f64], gp: &mut [f64]) -> f64 {
        let l = &self.layout;
        let k = l.k;
        let off = l.mu();
        let nu = &self.data.nu;
        let (lam, lamp, d0) = (q[l.lambda()], q[l.lambda_prime()], q[l.delta0()]);
        let mut lp = 0.0;
        let (mut g_lam, mut g_lamp, mut g_d0) = (0.0, 0.0, 0.0);
        for o in 0..k {
            for t in 0..k {
                let c = o * k + t;
                let v = nu[[o, t]];
                // μ ~ N(λ ν, 1)
                let r = q[l.mu() + c] - lam * v;
                lp += -0.5 * r * r - HALF_LN_2PI;
                gp[l.mu() - off + c] -= r;
                g_lam += r * v;
                // δ ~ N(δ0 + λ' ν, 1)
                let r = q[l.delta() + c] - d0 - lamp * v;
                lp += -0.5 * r * r - HALF_LN_2PI;
                gp[l.delta() - off + c] -= r;
                g_d0 += r;
                g_lamp += r * v;
                // γ ~ N(0, 1)
                let gv = q[l.gamma() + c];
                lp += -0.5 * gv * gv - HALF_LN_2PI;
                gp[l.gamma() - off + c] -= gv;
            }
        }
        // σ ~ Exp(1) on the log scale: density e^{-σ} σ
        for j in 0..l.per_author() {
            let u = q[l.log_sigma() + j];
            lp += u - u.exp();
            gp[l.log_sigma() - off + j] += 1.0 - u.exp();
        }
        for (idx, v, gextra) in [
            (l.lambda(), lam, g_lam),
            (l.lambda_prime(), lamp, g_lamp),
            (l.delta0(), d0, g_d0),
        ] {
            lp += -0.5 * v * v - HALF_LN_2PI;
            gp[idx - off] += gextra - v;
        }
        lp
    }

    /// Log posterior and gradient; the reduction order is fixed.
    pub fn value_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        debug_assert_eq!(q.len(), l.dim());
        let pa = l.per_author();
        let (gb, gpop) = grad.split_at_mut(l.beta_len());
        let sig: Vec<f64> = q[l.log_sigma()..l.gamma()].iter().map(|v| v.exp()).collect();
        let parts: Vec<(f64, Vec<f64>)> = gb
            .par_chunks_mut(CHUNK * pa)
            .enumerate()
            .map(|(c, chunk)| {
                let mut gp = vec![0.0; l.population_len()];
                let v = self.author_block(q, &sig, c * CHUNK, chunk, &mut gp);
                (v, gp)
            })
            .collect();
        gpop.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for (v, gp) in parts {
            total += v;
            gpop.iter_mut().zip(gp).for_each(|(a, b)| *a += b);
        }
        total += self.population_prior(q, gpop);
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
        total
    }

    pub fn value(&self, q: &[f64]) -> f64 {
        let mut g = vec![0.0; q.len()];
        self.value_grad(q, &mut g)
    }

    /// Per-author mixing matrices at an unconstrained point.
    pub fn thetas(&self, q: &[f64]) -> Vec<Array2<f64>> {
        let m = self.layout.unpack(q);
        (0..self.layout.n)
            .map(|a| {
                let ia = self.data.intellectual.row(a).to_vec();
                let sa = self.data.social.row(a).to_vec();
                super::mixing_matrix(&m, Some(a), &ia, &sa).expect("finite parameters")
            })
            .collect()
    }
}

impl LogDensity for TransferPosterior<'_> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        self.value_grad(q, grad)
    }
}

/// Log posterior of `model` for `data`, including all constants.
pub fn log_posterior(model: &TransferModel, data: &TrajectoryData) -> Result<f64> {
    let post = TransferPosterior::new(data, Parametrization::Centered)?;
    let q = post.layout.pack(model)?;
    Ok(post.value(&q))
}

/// Gradient on the unconstrained vector of the chosen parametrization.
pub fn grad_log_posterior(q: &[f64], data: &TrajectoryData, parametrization: Parametrization) -> Result<Vec<f64>> {
    let post = TransferPosterior::new(data, parametrization)?;
    if q.len() != post.layout.dim() {
        return Err(Error::invalid("parameter vector has the wrong length"));
    }
    let mut g = vec![0.0; q.len()];
    post.value_grad(q, &mut g);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::stats::sample_dirichlet;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn random_data(n: usize, k: usize, seed: u64) -> TrajectoryData {
        let mut rng = substream(seed, "traj-test-data");
        let mut x = Array2::zeros((n, k));
        let mut i = Array2::zeros((n, k));
        let mut s = Array2::zeros((n, k));
        let mut y = Array2::zeros((n, k));
        for a in 0..n {
            let xa = sample_dirichlet(&mut rng, &vec![0.7; k]);
            let ia = sample_dirichlet(&mut rng, &vec![0.7; k]);
            for t in 0..k {
                x[[a, t]] = xa[t];
                i[[a, t]] = ia[t];
                s[[a, t]] = rng.random::<f64>() * 2.0;
                y[[a, t]] = rng.random_range(0..6) as f64;
            }
        }
        let nu = Array2::from_shape_fn((k, k), |(o, t)| if o == t { 1.0 } else { rng.random::<f64>() });
        TrajectoryData {
            author_ids: (0..n).map(|a| format!("a{a}")).collect(),
            x_counts: &x * 10.0,
            x,
            y,
            intellectual: i,
            social: s,
            nu,
        }
    }

    fn random_point(layout: &ModelLayout, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, "traj-test-point");
        (0..layout.dim())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.7 * z
            })
            .collect()
    }

    fn fd_check(param: Parametrization) {
        let data = random_data(37, 4, 1);
        let post = TransferPosterior::new(&data, param).unwrap();
        for p in 0..5 {
            let q = random_point(&post.layout, p);
            let mut g = vec![0.0; q.len()];
            post.value_grad(&q, &mut g);
            for j in 0..q.len() {
                let h = 1e-5;
                let mut qp = q.clone();
                qp[j] += h;
                let mut qm = q.clone();
                qm[j] -= h;
                let fd = (post.value(&qp) - post.value(&qm)) / (2.0 * h);
                let err = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1.0);
                assert!(err < 1e-6, "{param:?} coord {j}: fd {fd} analytic {}", g[j]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_non_centered() {
        fd_check(Parametrization::NonCentered);
    }

    #[test]
    fn gradient_matches_finite_differences_centered() {
        fd_check(Parametrization::Centered);
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let data = random_data(5, 3, 2);
        for param in [Parametrization::Centered, Parametrization::NonCentered] {
            let layout = ModelLayout::new(5, 3, param);
            let q = random_point(&layout, 3);
            let back = layout.pack(&layout.unpack(&q)).unwrap();
            for (a, b) in q.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(data.num_topics(), 3);
    }

    #[test]
    fn empty_data_gives_prior_only() {
        let mut data = random_data(6, 3, 4);
        data.y.fill(0.0);
        let post = TransferPosterior::new(&data, Parametrization::Centered).unwrap();
        let q = random_point(&post.layout, 5);
        let m = post.layout.unpack(&q);
        // independent evaluation of the prior
        let lnn = |v: f64, mean: f64, sd: f64| -0.5 * ((v - mean) / sd).powi(2) - sd.ln() - HALF_LN_2PI;
        let mut lp = 0.0;
        for a in 0..6 {
            for o in 0..3 {
                for t in 0..2 {
                    lp += lnn(m.beta[[a, o, t]], m.mu[[o, t]], m.sigma[[o, t]]);
                }
            }
        }
        for o in 0..3 {
            for t in 0..3 {
                lp += lnn(m.mu[[o, t]], m.lambda * data.nu[[o, t]], 1.0);
                lp += lnn(m.delta[[o, t]], m.delta0 + m.lambda_prime * data.nu[[o, t]], 1.0);
                lp += lnn(m.gamma[[o, t]], 0.0, 1.0);
            }
        }
        for s in m.sigma.iter() {
            lp += -s + s.ln();
        }
        lp += lnn(m.lambda, 0.0, 1.0) + lnn(m.lambda_prime, 0.0, 1.0) + lnn(m.delta0, 0.0, 1.0);
        assert!((post.value(&q) - lp).abs() < 1e-9);
        assert!((log_posterior(&m, &data).unwrap() - lp).abs() < 1e-9);
    }

    #[test]
    fn unit_step_changes_gaussian_prior_by_half() {
        let mut data = random_data(2, 3, 6);
        data.y.fill(0.0);
        let post = TransferPosterior::new(&data, Parametrization::NonCentered).unwrap();
        let mut q = vec![0.0; post.layout.dim()];
        for j in post.layout.log_sigma()..post.layout.gamma() {
            q[j] = 0.0;
        }
        let base = post.value(&q);
        q[post.layout.gamma()] = 1.0;
        assert!((base - post.value(&q) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mu_gradient_vanishes_at_prior_mean() {
        let mut data = random_data(3, 3, 7);
        data.y.fill(0.0);
        let post = TransferPosterior::new(&data, Parametrization::NonCentered).unwrap();
        let mut q = vec![0.0; post.layout.dim()];
        q[post.layout.lambda()] = 0.8;
        for o in 0..3 {
            for t in 0..3 {
                q[post.layout.mu() + o * 3 + t] = 0.8 * data.nu[[o, t]];
            }
        }
        let mut g = vec![0.0; q.len()];
        post.value_grad(&q, &mut g);
        for j in post.layout.mu()..post.layout.log_sigma() {
            assert!(g[j].abs() < 1e-14);
        }
    }

    #[test]
    fn parametrizations_agree_up_to_jacobian() {
        // the two densities differ by the Jacobian of β = μ + σ z
        let data = random_data(4, 3, 8);
        let c = TransferPosterior::new(&data, Parametrization::Centered).unwrap();
        let nc = TransferPosterior::new(&data, Parametrization::NonCentered).unwrap();
        let qc = random_point(&c.layout, 9);
        let m = c.layout.unpack(&qc);
        let qn = nc.layout.pack(&m).unwrap();
        let log_jac: f64 = 4.0 * m.sigma.iter().map(|s| s.ln()).sum::<f64>();
        assert!((nc.value(&qn) - (c.value(&qc) + log_jac)).abs() < 1e-9);
    }
}
