//! Quick oracle checks across modules, for `selftest`.

use ndarray::Array2;
use rand::Rng;

use crate::capital::diversity;
use crate::error::Result;
use crate::metrics::enter_exit;
use crate::rng::substream;
use crate::stats::sample_dirichlet;
use crate::synth::{brute_force_ot, generate_cohort, SynthConfig};
use crate::trajectory::{grad_log_posterior, Parametrization, TransferPosterior};
use crate::transport::{exact_ot, ot_distance, sinkhorn, tv_distance, unit_cost, SinkhornConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    sample_dirichlet(rng, &vec![1.0; k])
}

fn random_cost<R: Rng>(rng: &mut R, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((k, k), |_| rng.random_range(0.0..1.0))
}

pub fn run(seed: u64) -> Vec<Check> {
    vec![
        check("gradient matches finite differences", || gradient(seed)),
        check("exact OT equals brute force", || exact_vs_brute(seed)),
        check("sinkhorn near exact at small epsilon", || sinkhorn_vs_exact(seed)),
        check("OT with unit cost equals TV", || tv_bridge(seed)),
        check("OT distance symmetric and triangular", || metric_axioms(seed)),
        check("diversity within [1, K]", || diversity_bounds(seed)),
        check("enter and exit exclusive", || exclusivity(seed)),
    ]
}

fn gradient(seed: u64) -> Result<(bool, String)> {
    let cohort = generate_cohort(&SynthConfig {
        n_authors: 20,
        k: 4,
        seed,
        ..SynthConfig::default()
    })?;
    let mut rng = substream(seed, "selftest-gradient");
    let mut worst: f64 = 0.0;
    for par in [Parametrization::Centered, Parametrization::NonCentered] {
        let post = TransferPosterior::new(&cohort.data, par)?;
        let q: Vec<f64> = (0..post.layout.dim()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let g = grad_log_posterior(&q, &cohort.data, par)?;
        for j in (0..q.len()).step_by(7) {
            let h = 1e-5;
            let (mut a, mut b) = (q.clone(), q.clone());
            a[j] += h;
            b[j] -= h;
            let fd = (post.value(&a) - post.value(&b)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / fd.abs().max(1.0));
        }
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.2e}")))
}

fn exact_vs_brute(seed: u64) -> Result<(bool, String)> {
    let mut rng = substream(seed, "selftest-exact");
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let k = 2 + i % 3;
        let (x, y) = (simplex(&mut rng, k), simplex(&mut rng, k));
        let c = random_cost(&mut rng, k);
        worst = worst.max((exact_ot(&x, &y, &c)?.cost - brute_force_ot(&x, &y, &c)?).abs());
    }
    Ok((worst < 1e-9, format!("max gap {worst:.2e}")))
}

fn sinkhorn_vs_exact(seed: u64) -> Result<(bool, String)> {
    let mut rng = substream(seed, "selftest-sinkhorn");
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let (x, y) = (simplex(&mut rng, 5), simplex(&mut rng, 5));
        let c = random_cost(&mut rng, 5);
        let exact = exact_ot(&x, &y, &c)?.cost;
        let s = sinkhorn(
            &x,
            &y,
            &c,
            SinkhornConfig {
                epsilon: 1e-3,
                ..SinkhornConfig::default()
            },
        )?;
        worst = worst.max((s.cost - exact).abs() / exact.max(1e-12));
    }
    Ok((worst < 0.01, format!("max relative gap {worst:.2e}")))
}

fn tv_bridge(seed: u64) -> Result<(bool, String)> {
    let mut rng = substream(seed, "selftest-tv");
    let c = unit_cost(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x, y) = (simplex(&mut rng, 6), simplex(&mut rng, 6));
        worst = worst.max((ot_distance(&x, &y, &c)? - tv_distance(&x, &y)).abs());
    }
    Ok((worst < 1e-9, format!("max gap {worst:.2e}")))
}

fn metric_axioms(seed: u64) -> Result<(bool, String)> {
    let mut rng = substream(seed, "selftest-metric");
    let k = 5;
    let mut c = random_cost(&mut rng, k);
    for i in 0..k {
        c[[i, i]] = 0.0;
        for j in 0..i {
            c[[j, i]] = c[[i, j]];
        }
    }
    // shortest paths make the cost satisfy the triangle inequality
    for m in 0..k {
        for i in 0..k {
            for j in 0..k {
                c[[i, j]] = c[[i, j]].min(c[[i, m]] + c[[m, j]]);
            }
        }
    }
    let mut bad = 0;
    for _ in 0..100 {
        let (x, y, z) = (simplex(&mut rng, k), simplex(&mut rng, k), simplex(&mut rng, k));
        let (xy, yx) = (ot_distance(&x, &y, &c)?, ot_distance(&y, &x, &c)?);
        let (xz, zy) = (ot_distance(&x, &z, &c)?, ot_distance(&z, &y, &c)?);
        if (xy - yx).abs() > 1e-9 || xy > xz + zy + 1e-9 {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad} violations in 100 triples")))
}

fn diversity_bounds(seed: u64) -> Result<(bool, String)> {
    let mut rng = substream(seed, "selftest-diversity");
    let mut bad = 0;
    for _ in 0..200 {
        let d = diversity(&sample_dirichlet(&mut rng, &[0.3; 8]))?;
        if !(1.0 - 1e-9..=8.0 + 1e-9).contains(&d) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("{bad} out of bounds")))
}

fn exclusivity(seed: u64) -> Result<(bool, String)> {
    let mut rng = substream(seed, "selftest-enter-exit");
    let (mx, my) = (simplex(&mut rng, 6), simplex(&mut rng, 6));
    let mut bad = 0;
    for _ in 0..200 {
        let (entered, exited) = enter_exit(&simplex(&mut rng, 6), &simplex(&mut rng, 6), &mx, &my);
        bad += entered.iter().filter(|t| exited.contains(t)).count();
    }
    Ok((bad == 0, format!("{bad} overlaps")))
}
