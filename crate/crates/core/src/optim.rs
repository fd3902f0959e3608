//! Limited-memory BFGS for smooth unconstrained minimization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the largest absolute gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease stalls below this.
    pub f_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 5000,
            grad_tol: 1e-6,
            f_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimize `f`; `fg(x, grad)` returns the objective and fills the gradient.
pub fn minimize<F>(mut fg: F, x0: &[f64], config: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let mut evals = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut alpha = vec![0.0; config.memory];
    let mut stalls = 0;

    for iter in 0..config.max_iters {
        let gnorm = inf_norm(&g);
        if gnorm < config.grad_tol || !f.is_finite() {
            return LbfgsResult {
                x,
                f,
                grad_norm: gnorm,
                iterations: iter,
                evaluations: evals,
                converged: f.is_finite(),
            };
        }
        // two-loop recursion
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        for (idx, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha[idx] = a;
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / gnorm.max(1.0),
        };
        dir.iter_mut().for_each(|d| *d *= gamma);
        for (idx, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alpha[idx] - b) * si);
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // not a descent direction; restart from steepest descent
            hist.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi / gnorm.max(1.0));
            slope = dot(&g, &dir);
        }

        // backtracking line search with Armijo condition
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            x_new
                .iter_mut()
                .zip(&x)
                .zip(&dir)
                .for_each(|((xn, xi), d)| *xn = xi + step * d);
            let f_new = fg(&x_new, &mut g_new);
            evals += 1;
            let armijo = f_new <= f + 1e-4 * step * slope;
            // near the optimum f stops resolving decreases; fall back to
            // the approximate Wolfe test on the directional derivative
            let approx_wolfe = f_new <= f + 1e-12 * f.abs() && {
                let d_new = dot(&g_new, &dir);
                0.9 * slope <= d_new && d_new <= -0.8 * slope
            };
            if f_new.is_finite() && (armijo || approx_wolfe) {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                    if hist.len() == config.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, 1.0 / sy));
                }
                let decrease = f - f_new;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                let flat = decrease <= config.f_tol * f.abs().max(1.0) && inf_norm(&g) >= 0.999 * gnorm;
                stalls = if flat { stalls + 1 } else { 0 };
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || stalls >= 10 {
            let gnorm = inf_norm(&g);
            return LbfgsResult {
                x,
                f,
                grad_norm: gnorm,
                iterations: iter + 1,
                evaluations: evals,
                converged: gnorm < config.grad_tol,
            };
        }
    }
    let gnorm = inf_norm(&g);
    LbfgsResult {
        x,
        f,
        grad_norm: gnorm,
        iterations: config.max_iters,
        evaluations: evals,
        converged: gnorm < config.grad_tol,
    }
}
