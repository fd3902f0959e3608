//! Property tests for the per-module data invariants.

use ndarray::Array2;
use portfolio_transport::capital::{compute_profiles, expertise_overlap, social_capital, ExpertiseRule};
use portfolio_transport::corpus::{
    assign_tokens, build_coauthor_graph, build_portfolio, AuthorshipFilter, DocumentRecord, Period, TopicWordMatrix,
};
use portfolio_transport::pipeline::PipelineConfig;
use portfolio_transport::regression::{build_design, RegressionSpec};
use portfolio_transport::synth::{generate_cohort, regression_cohort, DriftMode, RegressionScenario, SynthConfig};
use portfolio_transport::transport::{metro_mc, sinkhorn, C0Choice, MetroMcConfig, SinkhornConfig};
use portfolio_transport::Error;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn doc(id: usize, year: i32, authors: Vec<String>, counts: Vec<u64>) -> DocumentRecord {
    DocumentRecord {
        doc_id: format!("d{id:04}"),
        year,
        authors,
        topic_counts: counts,
        raw_mixture: None,
        tokens: None,
        citations: Vec::new(),
    }
}

/// Documents in 2000-2009 by authors `a0..a{pool}`.
fn corpus(k: usize, pool: usize, n_docs: std::ops::Range<usize>) -> impl Strategy<Value = Vec<DocumentRecord>> {
    prop::collection::vec(
        (
            2000i32..2010,
            prop::collection::btree_set(0usize..pool, 1..4),
            prop::collection::vec(0u64..5, k),
        ),
        n_docs,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (year, authors, counts))| {
                doc(i, year, authors.into_iter().map(|a| format!("a{a}")).collect(), counts)
            })
            .collect()
    })
}

fn pool(n: usize) -> Vec<String> {
    (0..n).map(|a| format!("a{a}")).collect()
}

proptest! {
    #[test]
    fn record_validation_matches_invariants(
        scale in prop_oneof![Just(1.0), 0.5f64..1.5],
        mix in simplex(4),
        authors in prop::collection::vec(0usize..4, 0..4),
        counts in prop::collection::vec(0u64..10, 4),
    ) {
        let mut d = doc(0, 2005, authors.iter().map(|a| format!("a{a}")).collect(), counts);
        d.raw_mixture = Some(mix.iter().map(|v| v * scale).collect());
        let sum: f64 = mix.iter().sum::<f64>() * scale;
        let mut seen = std::collections::BTreeSet::new();
        let unique = authors.iter().all(|a| seen.insert(*a));
        let valid = (sum - 1.0).abs() <= 1e-9 && !authors.is_empty() && unique;
        prop_assert_eq!(d.validate(4).is_ok(), valid);
    }

    #[test]
    fn token_posteriors_are_distributions(
        rows in prop::collection::vec(simplex(6), 3),
        mix in simplex(3),
        tokens in prop::collection::vec(0usize..6, 1..30),
        threshold in 0.1f64..1.2,
    ) {
        let tw = TopicWordMatrix::new(Array2::from_shape_fn((3, 6), |(k, w)| rows[k][w])).unwrap();
        let mut d = doc(0, 2005, vec!["a".into()], vec![0; 3]);
        d.raw_mixture = Some(mix);
        let out = assign_tokens(&mut d, &tw, &tokens, threshold).unwrap();
        let mut kept = 0;
        for a in &out {
            prop_assert!((a.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if let Some(t) = a.assigned_topic {
                kept += 1;
                prop_assert!(a.posterior.iter().all(|&p| p <= a.posterior[t]));
            }
        }
        prop_assert_eq!(d.topic_counts.iter().sum::<u64>(), kept);
    }

    #[test]
    fn portfolio_rows_normalize(docs in corpus(4, 6, 1..25)) {
        let period = Period::new(2000, 2009).unwrap();
        let built = build_portfolio(&docs, &pool(6), period, AuthorshipFilter::Any);
        let x = built.portfolio.normalized();
        for (i, row) in built.portfolio.counts.rows().into_iter().enumerate() {
            prop_assert!(row.sum() > 0.0);
            prop_assert!((x.row(i).sum() - 1.0).abs() < 1e-9);
        }
        prop_assert_eq!(built.portfolio.num_authors() + built.excluded.len(), 6);
    }

    #[test]
    fn capital_profiles_hold_invariants(docs in corpus(4, 12, 10..40)) {
        let period = Period::new(2000, 2009).unwrap();
        let built = build_portfolio(&docs, &pool(12), period, AuthorshipFilter::Any);
        prop_assume!(built.portfolio.num_authors() > 0);
        let graph = build_coauthor_graph(&docs);
        // tiny or constant cohorts make the excess-diversity fit degenerate
        let profiles = match compute_profiles(&docs, &built.portfolio.author_ids, &graph, ExpertiseRule::AboveMean) {
            Ok(p) => p,
            Err(Error::Degenerate(_)) | Err(Error::InvalidInput(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for p in &profiles {
            prop_assert!((p.intellectual.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.intellectual_diversity >= 1.0 - 1e-9 && p.intellectual_diversity <= 4.0 + 1e-9);
            // collaborators with no independent record add weight but no mass
            let social = social_capital(&p.author_id, &graph, &docs);
            let s: f64 = p.social.iter().sum();
            if social.undefined_collaborators.is_empty() {
                prop_assert!((p.power - s).abs() < 1e-9);
            } else {
                prop_assert!(p.power >= s - 1e-9);
            }
        }
    }

    #[test]
    fn overlap_entries_are_fractions(rows in prop::collection::vec(simplex(5), 2..12)) {
        let n = rows.len();
        let ic = Array2::from_shape_fn((n, 5), |(a, k)| rows[a][k]);
        let nu = expertise_overlap(&ic, ExpertiseRule::AboveMean).nu;
        for k in 0..5 {
            let mean = ic.column(k).sum() / n as f64;
            let has_experts = ic.column(k).iter().any(|&v| v > mean);
            prop_assert_eq!(nu[[k, k]], if has_experts { 1.0 } else { 0.0 });
        }
        prop_assert!(nu.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn config_accepts_only_ordered_disjoint_periods(a in 1990i32..2020, la in 0i32..8, gap in -6i32..6, lb in 0i32..8) {
        let b = a + la + gap;
        let cfg = PipelineConfig {
            periods: vec![format!("{a}-{}", a + la), format!("{b}-{}", b + lb)],
            ..PipelineConfig::default()
        };
        prop_assert_eq!(cfg.validate().is_ok(), b > a + la);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metro_draws_stay_on_the_simplex(x in simplex(3), y in simplex(3), seed in 0u64..1000) {
        let cost = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.1 } else { 0.5 + 0.1 * (i + 2 * j) as f64 });
        let plan = sinkhorn(&x, &y, &cost, SinkhornConfig { epsilon: 0.2, ..SinkhornConfig::default() }).unwrap().plan;
        let nu = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 1.0 } else { 0.3 });
        let cfg = MetroMcConfig {
            iters: 3000,
            warmup: 500,
            thin: 10,
            epsilon: 0.2,
            n_pseudo: 50.0,
            c0: C0Choice::Fixed(1.0),
            seed,
            ..MetroMcConfig::default()
        };
        let post = metro_mc(&plan, &x, &y, &nu, cfg).unwrap();
        prop_assert!(!post.cost_draws.is_empty());
        for d in &post.cost_draws {
            prop_assert!((d.normalized.sum() - 1.0).abs() < 1e-9);
            prop_assert!(d.normalized.iter().all(|&v| v > 0.0));
        }
        prop_assert!(post.acceptance_rate > 0.0 && post.acceptance_rate < 1.0);
    }

    #[test]
    fn design_columns_are_standardized(n in 30usize..120, seed in 0u64..1000) {
        let c = regression_cohort(n, 4, &RegressionScenario::Null, seed).unwrap();
        let spec = RegressionSpec::default();
        let design = build_design(&c.records, &spec).unwrap();
        for (p, col) in spec.active_predictors().iter().zip(&design.columns) {
            if p.is_binary() {
                prop_assert!(col.iter().all(|&v| v == 0.0 || v == 1.0));
            } else {
                let m = col.iter().sum::<f64>() / n as f64;
                let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                prop_assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn planted_parameters_are_finite(seed in 0u64..1000, drift in prop_oneof![
        Just(DriftMode::Stationary), Just(DriftMode::CovariateDriven), Just(DriftMode::PlantedCost)
    ]) {
        let c = generate_cohort(&SynthConfig { n_authors: 30, k: 4, seed, drift, ..SynthConfig::default() }).unwrap();
        if let Some(m) = &c.truth.model {
            for a in [&m.mu, &m.sigma, &m.gamma, &m.delta] {
                prop_assert!(a.iter().all(|v| v.is_finite()));
            }
            prop_assert!(m.sigma.iter().all(|&s| s > 0.0));
            prop_assert!(m.lambda.is_finite() && m.lambda_prime.is_finite() && m.delta0.is_finite());
        }
        if let Some(cost) = &c.truth.cost {
            prop_assert!(cost.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
