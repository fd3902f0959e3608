//! Per-author change scores, enter/exit events, diversity trends and the
//! citation PMI matrix.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::effective_topics;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats;
use crate::transport::{ot_distance, tv_distance};

const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub author_id: String,
    /// TV distance between the two portfolios.
    pub change_score: f64,
    /// Exact OT cost between the two portfolios.
    pub cognitive_distance: f64,
    pub entered_any: bool,
    pub exited_any: bool,
    pub entered_topics: Vec<usize>,
    pub exited_topics: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(v: &[f64]) -> Self {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        Quartiles {
            q25: stats::quantile_sorted(&s, 0.25),
            q50: stats::quantile_sorted(&s, 0.5),
            q75: stats::quantile_sorted(&s, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub records: Vec<ChangeRecord>,
    pub change_quartiles: Quartiles,
    pub distance_quartiles: Quartiles,
}

fn check_rows(m: &Array2<f64>, what: &str) -> Result<()> {
    for (a, row) in m.outer_iter().enumerate() {
        let s: f64 = row.sum();
        if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > ROW_TOL {
            return Err(Error::invalid(format!(
                "{what} row {a} is not a normalized portfolio (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Column means of normalized portfolios.
pub fn cohort_means(portfolios: &Array2<f64>) -> Vec<f64> {
    portfolios.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}

/// Topics entered (below the mean before, above it after) and exited (the
/// reverse). Both comparisons are strict.
pub fn enter_exit(x_a: &[f64], y_a: &[f64], mean_x: &[f64], mean_y: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut entered = Vec::new();
    let mut exited = Vec::new();
    for k in 0..x_a.len() {
        if x_a[k] < mean_x[k] && y_a[k] > mean_y[k] {
            entered.push(k);
        } else if x_a[k] > mean_x[k] && y_a[k] < mean_y[k] {
            exited.push(k);
        }
    }
    (entered, exited)
}

/// Change score, cognitive distance and enter/exit sets for every author.
pub fn change_scores(
    author_ids: &[String],
    x: &Array2<f64>,
    y: &Array2<f64>,
    cost: &Array2<f64>,
) -> Result<ChangeReport> {
    if x.dim() != y.dim() || author_ids.len() != x.nrows() {
        return Err(Error::invalid("portfolio matrices and author ids disagree in shape"));
    }
    if cost.dim() != (x.ncols(), x.ncols()) {
        return Err(Error::invalid("cost matrix does not match the number of topics"));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("no authors"));
    }
    check_rows(x, "initial")?;
    check_rows(y, "late")?;
    let mean_x = cohort_means(x);
    let mean_y = cohort_means(y);
    let records: Vec<ChangeRecord> = (0..x.nrows())
        .into_par_iter()
        .map(|a| {
            let xa = x.row(a).to_vec();
            let ya = y.row(a).to_vec();
            let (entered, exited) = enter_exit(&xa, &ya, &mean_x, &mean_y);
            Ok(ChangeRecord {
                author_id: author_ids[a].clone(),
                change_score: tv_distance(&xa, &ya).clamp(0.0, 1.0),
                cognitive_distance: ot_distance(&xa, &ya, cost)?.max(0.0),
                entered_any: !entered.is_empty(),
                exited_any: !exited.is_empty(),
                entered_topics: entered,
                exited_topics: exited,
            })
        })
        .collect::<Result<_>>()?;
    let c: Vec<f64> = records.iter().map(|r| r.change_score).collect();
    let d: Vec<f64> = records.iter().map(|r| r.cognitive_distance).collect();
    Ok(ChangeReport {
        change_quartiles: Quartiles::of(&c),
        distance_quartiles: Quartiles::of(&d),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityTrend {
    /// Cohort mean of exp-entropy, one entry per period.
    pub mean_diversity: Vec<f64>,
    /// Mean effective topics per paper, when paper mixtures are supplied.
    pub per_paper_mean: Option<Vec<f64>>,
    /// OLS slope of `mean_diversity` on the period index.
    pub slope: f64,
    /// One-sided p-value for an increasing trend.
    pub p_value: f64,
    pub permutations: usize,
}

fn slope_of(means: &[f64]) -> f64 {
    let n = means.len() as f64;
    let tbar = (n - 1.0) / 2.0;
    let mbar = stats::mean(means);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, m) in means.iter().enumerate() {
        let dt = t as f64 - tbar;
        sxy += dt * (m - mbar);
        sxx += dt * dt;
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn column_means(d: &[Vec<f64>], periods: usize) -> Vec<f64> {
    (0..periods)
        .map(|p| d.iter().map(|row| row[p]).sum::<f64>() / d.len() as f64)
        .collect()
}

/// Per-period mean diversity with a permutation test for an increasing trend.
///
/// `portfolios[p]` holds the same authors (rows) in every period. The null
/// shuffles each author's diversities across periods independently.
pub fn diversity_trend(
    portfolios: &[Array2<f64>],
    paper_mixtures: Option<&[Vec<Vec<f64>>]>,
    permutations: usize,
    seed: u64,
) -> Result<DiversityTrend> {
    let periods = portfolios.len();
    if periods == 0 {
        return Err(Error::invalid("at least one period is required"));
    }
    let n = portfolios[0].nrows();
    if n == 0 || portfolios.iter().any(|p| p.nrows() != n) {
        return Err(Error::invalid("every period needs the same non-empty set of authors"));
    }
    // d[a][p]
    let mut d = vec![vec![0.0; periods]; n];
    for (p, m) in portfolios.iter().enumerate() {
        for (a, row) in m.outer_iter().enumerate() {
            d[a][p] = crate::capital::diversity(row.as_slice().expect("contiguous"))?;
        }
    }
    let mean_diversity = column_means(&d, periods);
    let slope = slope_of(&mean_diversity);

    let mut exceed = 0usize;
    if periods > 1 {
        let mut rng = substream(seed, "diversity-trend");
        let mut work = d.clone();
        for _ in 0..permutations {
            for row in work.iter_mut() {
                row.shuffle(&mut rng);
            }
            // ties count against the trend, so a flat cohort gets p = 1
            if slope_of(&column_means(&work, periods)) >= slope - 1e-12 {
                exceed += 1;
            }
        }
    } else {
        exceed = permutations;
    }
    let p_value = (1 + exceed) as f64 / (1 + permutations) as f64;

    let per_paper_mean = match paper_mixtures {
        None => None,
        Some(mix) => {
            if mix.len() != periods {
                return Err(Error::invalid("paper mixtures must be given for every period"));
            }
            let mut out = Vec::with_capacity(periods);
            for papers in mix {
                let e: Vec<f64> = papers.iter().map(|m| effective_topics(m)).collect::<Result<_>>()?;
                out.push(if e.is_empty() { f64::NAN } else { stats::mean(&e) });
            }
            Some(out)
        }
    };
    Ok(DiversityTrend {
        mean_diversity,
        per_paper_mean,
        slope,
        p_value,
        permutations,
    })
}

/// Pointwise mutual information of a citation count matrix.
///
/// Computed as `ln[(N_kk'/N) / ((Σ_i N_ki/N)(Σ_i N_ik'/N))]` with no further
/// normalization, even though the quantity is usually called "normalized"
/// PMI. Cells whose value is not finite are masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmiMatrix {
    pub values: Array2<f64>,
    /// `true` where the value is undefined or infinite.
    pub masked: Array2<bool>,
}

pub fn npmi_citation(counts: &Array2<f64>) -> Result<PmiMatrix> {
    if counts.nrows() != counts.ncols() {
        return Err(Error::invalid("citation matrix must be square"));
    }
    if counts.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("citation counts must be finite and non-negative"));
    }
    let total = counts.sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("citation matrix is all zero".into()));
    }
    let rows = counts.sum_axis(Axis(1));
    let cols = counts.sum_axis(Axis(0));
    let values = Array2::from_shape_fn(counts.dim(), |(i, j)| {
        if rows[i] == 0.0 || cols[j] == 0.0 {
            f64::NAN
        } else if counts[[i, j]] == 0.0 {
            f64::NEG_INFINITY
        } else {
            (counts[[i, j]] / total).ln() - (rows[i] / total).ln() - (cols[j] / total).ln()
        }
    });
    let masked = values.mapv(|v| !v.is_finite());
    Ok(PmiMatrix { values, masked })
}
