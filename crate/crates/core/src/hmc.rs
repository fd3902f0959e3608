//! Static Hamiltonian Monte Carlo with dual-averaging step size and a
//! windowed diagonal metric, plus split-R̂ and effective sample size.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{indexed_substream, StreamRng};

/// Unnormalized log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Log density at `q`; writes the gradient into `grad`.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

/// Per-chain consumer of post-warmup positions.
pub trait DrawSink: Send {
    fn record(&mut self, q: &[f64]);
}

impl DrawSink for () {
    fn record(&mut self, _: &[f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Dual-averaging acceptance target.
    pub target_accept: f64,
    /// Starting step size; `None` searches for one.
    pub init_step: Option<f64>,
    /// Fixed leapfrog count; `None` derives it from `integration_time`.
    pub leapfrog_steps: Option<usize>,
    pub integration_time: f64,
    pub max_leapfrog: usize,
    /// Standard deviation of the per-chain perturbation of the start point.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            chains: 4,
            warmup: 500,
            draws: 500,
            target_accept: 0.8,
            init_step: None,
            leapfrog_steps: None,
            integration_time: 2.0,
            max_leapfrog: 512,
            init_jitter: 0.1,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::config("hmc.chains", "must be at least 1"));
        }
        if self.draws < 4 {
            return Err(Error::config("hmc.draws", "must be at least 4"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::config("hmc.target_accept", "must lie in (0, 1)"));
        }
        if !(self.integration_time > 0.0) || self.max_leapfrog == 0 {
            return Err(Error::config("hmc.integration_time", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChainRun<S> {
    /// Monitored quantities, one vector per post-warmup draw.
    pub draws: Vec<Vec<f64>>,
    pub sink: S,
    pub divergences: usize,
    pub mean_accept: f64,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub leapfrog_evaluations: usize,
    pub final_position: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HmcRun<S> {
    pub chains: Vec<ChainRun<S>>,
    /// Split-R̂ per monitored coordinate.
    pub rhat: Vec<f64>,
    /// Effective sample size per monitored coordinate.
    pub ess: Vec<f64>,
}

impl<S> HmcRun<S> {
    pub fn divergences(&self) -> usize {
        self.chains.iter().map(|c| c.divergences).sum()
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NAN, f64::min)
    }

    /// Draws of monitored coordinate `j`, chain by chain.
    pub fn coordinate(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.draws.iter().map(|d| d[j]).collect())
            .collect()
    }

    /// Draws of coordinate `j` pooled over chains.
    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.coordinate(j).into_iter().flatten().collect()
    }
}

const DIVERGENCE_THRESHOLD: f64 = 1000.0;

struct Hamiltonian<'a, D: LogDensity> {
    target: &'a D,
    inv_metric: Vec<f64>,
    evals: usize,
}

impl<D: LogDensity> Hamiltonian<'_, D> {
    fn logp(&mut self, q: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        self.target.log_density_grad(q, g)
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(pi, m)| pi * pi * m).sum::<f64>()
    }

    fn momentum(&self, rng: &mut StreamRng, p: &mut [f64]) {
        for (pi, m) in p.iter_mut().zip(&self.inv_metric) {
            let z: f64 = StandardNormal.sample(rng);
            *pi = z / m.sqrt();
        }
    }

    /// One trajectory from `(q, logp, grad)`; returns (accept prob, divergent).
    /// On acceptance the state is replaced in place.
    #[allow(clippy::too_many_arguments)]
    fn transition(
        &mut self,
        rng: &mut StreamRng,
        q: &mut [f64],
        logp: &mut f64,
        grad: &mut [f64],
        step: f64,
        steps: usize,
        scratch: &mut Scratch,
    ) -> (f64, bool) {
        let Scratch { p, q1, g1 } = scratch;
        self.momentum(rng, p);
        let h0 = -*logp + self.kinetic(p);
        q1.copy_from_slice(q);
        g1.copy_from_slice(grad);
        let mut lp1 = *logp;
        for _ in 0..steps {
            p.iter_mut().zip(g1.iter()).for_each(|(pi, gi)| *pi += 0.5 * step * gi);
            q1.iter_mut()
                .zip(p.iter().zip(&self.inv_metric))
                .for_each(|(qi, (pi, m))| *qi += step * m * pi);
            lp1 = self.logp(q1, g1);
            if !lp1.is_finite() {
                break;
            }
            p.iter_mut().zip(g1.iter()).for_each(|(pi, gi)| *pi += 0.5 * step * gi);
        }
        let h1 = -lp1 + self.kinetic(p);
        let delta = h1 - h0;
        if !delta.is_finite() || delta > DIVERGENCE_THRESHOLD {
            return (0.0, true);
        }
        let accept = (-delta).exp().min(1.0);
        if rng.random::<f64>() < accept {
            q.copy_from_slice(q1);
            grad.copy_from_slice(g1);
            *logp = lp1;
        }
        (accept, false)
    }
}

struct Scratch {
    p: Vec<f64>,
    q1: Vec<f64>,
    g1: Vec<f64>,
}

struct DualAveraging {
    mu: f64,
    hbar: f64,
    log_step_bar: f64,
    count: f64,
    target: f64,
}

impl DualAveraging {
    fn new(step: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * step).ln(),
            hbar: 0.0,
            log_step_bar: 0.0,
            count: 0.0,
            target,
        }
    }

    fn update(&mut self, accept: f64) -> f64 {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + T0);
        self.hbar = (1.0 - w) * self.hbar + w * (self.target - accept);
        let log_step = self.mu - m.sqrt() / GAMMA * self.hbar;
        let eta = m.powf(-KAPPA);
        self.log_step_bar = eta * log_step + (1.0 - eta) * self.log_step_bar;
        log_step.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Warmup iterations at which the metric is re-estimated: an initial fast
/// phase, doubling slow windows, a terminal fast phase.
fn metric_window_ends(warmup: usize) -> Vec<usize> {
    let (init, term, base) = if warmup >= 150 {
        (75, 50, 25)
    } else {
        let init = warmup * 15 / 100;
        let term = warmup / 10;
        (init, term, warmup.saturating_sub(init + term))
    };
    if base == 0 {
        return Vec::new();
    }
    let last = warmup - term;
    let mut ends = Vec::new();
    let mut start = init;
    let mut size = base;
    while start < last {
        let mut end = start + size;
        if end + 2 * size > last {
            end = last;
        }
        ends.push(end);
        start = end;
        size *= 2;
    }
    ends
}

struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, q: &[f64]) {
        self.n += 1.0;
        for ((m, s), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(q) {
            let d = x - *m;
            *m += d / self.n;
            *s += d * (x - *m);
        }
    }

    /// Variance shrunk toward 1e-3 as in common practice.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0).max(1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

fn find_initial_step<D: LogDensity>(
    ham: &mut Hamiltonian<'_, D>,
    rng: &mut StreamRng,
    q: &[f64],
    logp: f64,
    grad: &[f64],
) -> f64 {
    let dim = q.len();
    let mut step = 1.0;
    let mut p = vec![0.0; dim];
    let mut q1 = vec![0.0; dim];
    let mut g1 = vec![0.0; dim];
    let mut probe = |ham: &mut Hamiltonian<'_, D>, rng: &mut StreamRng, step: f64| -> f64 {
        ham.momentum(rng, &mut p);
        let h0 = -logp + ham.kinetic(&p);
        q1.copy_from_slice(q);
        let mut pm = p.clone();
        pm.iter_mut().zip(grad).for_each(|(pi, gi)| *pi += 0.5 * step * gi);
        q1.iter_mut()
            .zip(pm.iter().zip(&ham.inv_metric))
            .for_each(|(qi, (pi, m))| *qi += step * m * pi);
        let lp1 = ham.logp(&q1, &mut g1);
        pm.iter_mut().zip(&g1).for_each(|(pi, gi)| *pi += 0.5 * step * gi);
        let h1 = -lp1 + ham.kinetic(&pm);
        let d = h0 - h1;
        if d.is_finite() {
            d
        } else {
            f64::NEG_INFINITY
        }
    };
    let first = probe(ham, rng, step);
    let up = first > 0.5f64.ln();
    for _ in 0..60 {
        let d = probe(ham, rng, step);
        if up && !(d > 0.5f64.ln()) {
            break;
        }
        if !up && d > 0.5f64.ln() {
            break;
        }
        step = if up { step * 2.0 } else { step * 0.5 };
    }
    step.clamp(1e-10, 1e3)
}

fn run_chain<D, S, M>(
    target: &D,
    init: &[f64],
    config: &HmcConfig,
    chain: usize,
    monitor: &M,
    mut sink: S,
) -> Result<ChainRun<S>>
where
    D: LogDensity,
    S: DrawSink,
    M: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let dim = target.dim();
    let mut rng = indexed_substream(config.seed, "hmc-chain", chain as u64);
    let mut q: Vec<f64> = init
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + config.init_jitter * z
        })
        .collect();
    let mut ham = Hamiltonian {
        target,
        inv_metric: vec![1.0; dim],
        evals: 0,
    };
    let mut grad = vec![0.0; dim];
    let mut logp = ham.logp(&q, &mut grad);
    if !logp.is_finite() {
        // fall back to the unperturbed start
        q.copy_from_slice(init);
        logp = ham.logp(&q, &mut grad);
        if !logp.is_finite() {
            return Err(Error::invalid("HMC start point has non-finite log density"));
        }
    }
    let mut step = match config.init_step {
        Some(s) => s,
        None => find_initial_step(&mut ham, &mut rng, &q, logp, &grad),
    };
    let mut da = DualAveraging::new(step, config.target_accept);
    let windows = metric_window_ends(config.warmup);
    let mut window_idx = 0;
    let init_buffer = if config.warmup >= 150 {
        75
    } else {
        config.warmup * 15 / 100
    };
    let mut welford = Welford::new(dim);
    let mut scratch = Scratch {
        p: vec![0.0; dim],
        q1: vec![0.0; dim],
        g1: vec![0.0; dim],
    };
    let n_steps = |step: f64, rng: &mut StreamRng| -> usize {
        match config.leapfrog_steps {
            Some(l) => l.max(1),
            None => {
                let jitter = 0.5 + rng.random::<f64>();
                ((jitter * config.integration_time / step).ceil() as usize).clamp(1, config.max_leapfrog)
            }
        }
    };

    for it in 0..config.warmup {
        let l = n_steps(step, &mut rng);
        let (acc, _) = ham.transition(&mut rng, &mut q, &mut logp, &mut grad, step, l, &mut scratch);
        step = da.update(acc);
        if it >= init_buffer && window_idx < windows.len() {
            welford.push(&q);
            if it + 1 == windows[window_idx] {
                ham.inv_metric = welford.regularized();
                welford = Welford::new(dim);
                window_idx += 1;
                step = find_initial_step(&mut ham, &mut rng, &q, logp, &grad);
                da = DualAveraging::new(step, config.target_accept);
            }
        }
    }
    if config.warmup > 0 {
        step = da.final_step();
    }

    let mut draws = Vec::with_capacity(config.draws);
    let mut divergences = 0;
    let mut accept_sum = 0.0;
    for _ in 0..config.draws {
        let l = n_steps(step, &mut rng);
        let (acc, div) = ham.transition(&mut rng, &mut q, &mut logp, &mut grad, step, l, &mut scratch);
        accept_sum += acc;
        divergences += div as usize;
        draws.push(monitor(&q));
        sink.record(&q);
    }
    Ok(ChainRun {
        draws,
        sink,
        divergences,
        mean_accept: accept_sum / config.draws as f64,
        step_size: step,
        inv_metric: ham.inv_metric,
        leapfrog_evaluations: ham.evals,
        final_position: q,
    })
}

/// Run `config.chains` independent chains from jittered copies of `init`.
/// `monitor` maps a position to the quantities kept per draw (and used for
/// diagnostics); `make_sink(chain)` builds a consumer of full positions.
pub fn sample<D, S, M, F>(target: &D, init: &[f64], config: &HmcConfig, monitor: M, make_sink: F) -> Result<HmcRun<S>>
where
    D: LogDensity,
    S: DrawSink,
    M: Fn(&[f64]) -> Vec<f64> + Sync,
    F: Fn(usize) -> S + Sync,
{
    config.validate()?;
    if init.len() != target.dim() {
        return Err(Error::invalid("HMC start point has the wrong dimension"));
    }
    let chains: Vec<ChainRun<S>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(target, init, config, c, &monitor, make_sink(c)))
        .collect::<Result<_>>()?;
    let width = chains
        .first()
        .map(|c| c.draws.first().map_or(0, |d| d.len()))
        .unwrap_or(0);
    let mut rhat = Vec::with_capacity(width);
    let mut ess = Vec::with_capacity(width);
    for j in 0..width {
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|d| d[j]).collect()).collect();
        rhat.push(split_rhat(&per_chain));
        ess.push(effective_sample_size(&per_chain));
    }
    let run = HmcRun { chains, rhat, ess };
    let worst = run.max_rhat();
    if worst > 1.05 {
        log::warn!("HMC: max split-R̂ {worst:.3} exceeds 1.05");
    }
    let div = run.divergences();
    if div > 0 {
        log::warn!("HMC: {div} divergent transition(s) after warmup");
    }
    Ok(run)
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        out.push(&c[..half]);
        out.push(&c[n - half..n]);
    }
    out
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Split-R̂ (Gelman–Rubin on half-chains).
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let n = parts.first().map_or(0, |p| p.len());
    if parts.len() < 2 || n < 2 {
        return f64::NAN;
    }
    let stats: Vec<(f64, f64)> = parts.iter().map(|p| mean_var(p)).collect();
    let m = stats.len() as f64;
    let nf = n as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = nf / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    (var_plus / w).sqrt()
}

/// Effective sample size from split chains with Geyer's initial monotone
/// sequence truncation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let parts = split(chains);
    let n = parts.first().map_or(0, |p| p.len());
    if parts.is_empty() || n < 4 {
        return f64::NAN;
    }
    let m = parts.len() as f64;
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = parts.iter().map(|p| mean_var(p)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = if m > 1.0 {
        nf / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let acov = |lag: usize| -> f64 {
        parts
            .iter()
            .zip(&stats)
            .map(|(p, (mu, _))| (0..n - lag).map(|i| (p[i] - mu) * (p[i + lag] - mu)).sum::<f64>() / nf)
            .sum::<f64>()
            / m
    };
    let rho = |lag: usize| 1.0 - (w - acov(lag)) / var_plus;
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / (m * nf).log10().max(1.0));
    m * nf / tau
}
