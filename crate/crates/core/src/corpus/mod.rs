//! Document ingestion, token-to-topic assignment, portfolios and the
//! coauthorship graph.

mod assign;
mod graph;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub use assign::{assign_tokens, TokenAssignment, TopicWordMatrix, DEFAULT_ENTROPY_THRESHOLD};
pub use graph::{build_coauthor_graph, CoauthorGraph};
pub use io::{load_affiliations, load_documents, load_topic_word, parse_documents, Affiliations};

/// One publication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub year: i32,
    pub authors: Vec<String>,
    #[serde(default)]
    pub topic_counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_mixture: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub citations: Vec<String>,
}

impl DocumentRecord {
    pub fn num_authors(&self) -> usize {
        self.authors.len()
    }

    pub fn has_author(&self, author: &str) -> bool {
        self.authors.iter().any(|a| a == author)
    }

    pub fn is_first_or_last(&self, author: &str) -> bool {
        self.authors.first().map(String::as_str) == Some(author)
            || self.authors.last().map(String::as_str) == Some(author)
    }

    /// Check the record against its invariants for `num_topics` topics.
    pub fn validate(&self, num_topics: usize) -> Result<()> {
        let fail = |field: &str, reason: String| Error::InvalidRecord {
            doc_id: self.doc_id.clone(),
            field: field.to_string(),
            reason,
        };
        if self.authors.is_empty() {
            return Err(fail("authors", "must be non-empty".into()));
        }
        let unique: BTreeSet<&String> = self.authors.iter().collect();
        if unique.len() != self.authors.len() {
            return Err(fail("authors", "contains duplicate author ids".into()));
        }
        if self.topic_counts.len() != num_topics {
            return Err(fail(
                "topic_counts",
                format!(
                    "expected {num_topics} entries, found {} (topic index out of range)",
                    self.topic_counts.len()
                ),
            ));
        }
        if let Some(mix) = &self.raw_mixture {
            if mix.len() != num_topics {
                return Err(fail(
                    "raw_mixture",
                    format!("expected {num_topics} entries, found {}", mix.len()),
                ));
            }
            if mix.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(fail("raw_mixture", "entries must be finite and >= 0".into()));
            }
            let total: f64 = mix.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(fail("raw_mixture", format!("sums to {total}, expected 1")));
            }
        }
        Ok(())
    }
}

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub start: i32,
    pub end: i32,
}

impl Period {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if end < start {
            return Err(Error::invalid(format!("empty period {start}-{end}")));
        }
        Ok(Period { start, end })
    }

    pub fn contains(&self, year: i32) -> bool {
        self.start <= year && year <= self.end
    }

    pub fn overlaps(&self, other: &Period) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.start, self.end)
    }
}

impl std::str::FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("period `{s}` must look like 2000-2009")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<i32>()
                .map_err(|_| Error::invalid(format!("period `{s}`: `{v}` is not a year")))
        };
        Period::new(parse(a)?, parse(b)?)
    }
}

impl std::fmt::Display for Period {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorshipFilter {
    #[default]
    Any,
    /// Positional: the author is listed first or last. Many fields order
    /// author lists alphabetically, in which case this is only a proxy.
    FirstOrLast,
}

impl AuthorshipFilter {
    fn admits(&self, doc: &DocumentRecord, author: &str) -> bool {
        match self {
            AuthorshipFilter::Any => doc.has_author(author),
            AuthorshipFilter::FirstOrLast => doc.is_first_or_last(author),
        }
    }
}

/// Cohort-by-topic count matrix for one period.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioMatrix {
    pub author_ids: Vec<String>,
    /// N x K keyword counts.
    pub counts: Array2<f64>,
    pub period: Period,
    pub authorship_filter: AuthorshipFilter,
}

impl PortfolioMatrix {
    pub fn num_authors(&self) -> usize {
        self.author_ids.len()
    }

    pub fn num_topics(&self) -> usize {
        self.counts.ncols()
    }

    /// Row-normalized portfolios.
    pub fn normalized(&self) -> Array2<f64> {
        let mut out = self.counts.clone();
        for mut row in out.rows_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row /= total;
            }
        }
        out
    }

    pub fn row_of(&self, author: &str) -> Option<usize> {
        self.author_ids.iter().position(|a| a == author)
    }

    /// Keep only the listed authors, in the given order.
    pub fn restrict(&self, authors: &[String]) -> Result<PortfolioMatrix> {
        let k = self.num_topics();
        let mut counts = Array2::zeros((authors.len(), k));
        for (i, a) in authors.iter().enumerate() {
            let r = self
                .row_of(a)
                .ok_or_else(|| Error::invalid(format!("author {a} not in portfolio")))?;
            counts.row_mut(i).assign(&self.counts.row(r));
        }
        Ok(PortfolioMatrix {
            author_ids: authors.to_vec(),
            counts,
            period: self.period,
            authorship_filter: self.authorship_filter,
        })
    }
}

/// Portfolio plus the authors dropped for having an empty row.
#[derive(Debug, Clone)]
pub struct PortfolioBuild {
    pub portfolio: PortfolioMatrix,
    pub excluded: Vec<String>,
}

pub fn docs_in_period(docs: &[DocumentRecord], period: Period) -> Vec<&DocumentRecord> {
    docs.iter().filter(|d| period.contains(d.year)).collect()
}

/// `X[a, k] = sum of n_dk over the period's documents authored by a`.
pub fn build_portfolio(
    docs: &[DocumentRecord],
    authors: &[String],
    period: Period,
    filter: AuthorshipFilter,
) -> PortfolioBuild {
    let k = docs.first().map(|d| d.topic_counts.len()).unwrap_or(0);
    let index: BTreeMap<&str, usize> = authors.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let mut counts = Array2::<f64>::zeros((authors.len(), k));
    for doc in docs.iter().filter(|d| period.contains(d.year)) {
        for author in &doc.authors {
            let Some(&row) = index.get(author.as_str()) else {
                continue;
            };
            if !filter.admits(doc, author) {
                continue;
            }
            for (t, &n) in doc.topic_counts.iter().enumerate() {
                counts[[row, t]] += n as f64;
            }
        }
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (i, a) in authors.iter().enumerate() {
        if counts.row(i).sum() > 0.0 {
            kept.push(i);
        } else {
            excluded.push(a.clone());
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "period {period}: {} author(s) excluded for empty portfolios",
            excluded.len()
        );
    }
    let mut kept_counts = Array2::zeros((kept.len(), k));
    for (dst, &src) in kept.iter().enumerate() {
        kept_counts.row_mut(dst).assign(&counts.row(src));
    }
    PortfolioBuild {
        portfolio: PortfolioMatrix {
            author_ids: kept.iter().map(|&i| authors[i].clone()).collect(),
            counts: kept_counts,
            period,
            authorship_filter: filter,
        },
        excluded,
    }
}

/// Authors with at least `min_pubs` documents in every period.
pub fn select_cohort(docs: &[DocumentRecord], min_pubs: usize, periods: &[Period]) -> Result<BTreeSet<String>> {
    for (i, p) in periods.iter().enumerate() {
        for q in &periods[i + 1..] {
            if p.overlaps(q) {
                return Err(Error::invalid(format!("periods {p} and {q} overlap")));
            }
        }
    }
    let mut per_period: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for doc in docs {
        for (pi, p) in periods.iter().enumerate() {
            if p.contains(doc.year) {
                for a in &doc.authors {
                    per_period.entry(a.as_str()).or_insert_with(|| vec![0; periods.len()])[pi] += 1;
                }
            }
        }
    }
    Ok(per_period
        .into_iter()
        .filter(|(_, counts)| counts.iter().all(|&c| c >= min_pubs))
        .map(|(a, _)| a.to_string())
        .collect())
}

/// `exp(H(theta))`, the effective number of topics of a mixture.
pub fn effective_topics(mixture: &[f64]) -> Result<f64> {
    if mixture.iter().any(|&p| p < 0.0) {
        return Err(Error::invalid("mixture has negative entries"));
    }
    let total: f64 = mixture.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("mixture sums to {total}, expected 1")));
    }
    Ok(stats::entropy(mixture).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorCovariates {
    pub academic_age: u32,
    pub stable_affiliation: bool,
    pub productivity_coauthored: u32,
    pub productivity_solo: u32,
}

/// Covariates for `author`. Age is measured at `reference_year`; productivity
/// counts documents in `productivity_period`; affiliation stability requires
/// an interval covering the whole `stability_range`.
pub fn author_covariates(
    docs: &[DocumentRecord],
    author: &str,
    reference_year: i32,
    productivity_period: Period,
    stability_range: Period,
    affiliations: Option<&Affiliations>,
) -> Result<AuthorCovariates> {
    let mine: Vec<&DocumentRecord> = docs.iter().filter(|d| d.has_author(author)).collect();
    let first_year = mine
        .iter()
        .map(|d| d.year)
        .min()
        .ok_or_else(|| Error::invalid(format!("author {author} has no documents")))?;
    let academic_age = (reference_year - first_year).max(0) as u32;
    let (mut solo, mut coauthored) = (0u32, 0u32);
    for d in mine.iter().filter(|d| productivity_period.contains(d.year)) {
        if d.num_authors() == 1 {
            solo += 1;
        } else {
            coauthored += 1;
        }
    }
    let stable_affiliation = match affiliations {
        Some(aff) => aff.spans(author, stability_range),
        None => {
            log::debug!("no affiliation data; stable_affiliation defaults to false for {author}");
            false
        }
    };
    Ok(AuthorCovariates {
        academic_age,
        stable_affiliation,
        productivity_coauthored: coauthored,
        productivity_solo: solo,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn doc(id: &str, year: i32, authors: &[&str], counts: &[u64]) -> DocumentRecord {
        DocumentRecord {
            doc_id: id.into(),
            year,
            authors: authors.iter().map(|s| s.to_string()).collect(),
            topic_counts: counts.to_vec(),
            raw_mixture: None,
            tokens: None,
            citations: vec![],
        }
    }

    fn p(a: i32, b: i32) -> Period {
        Period::new(a, b).unwrap()
    }

    #[test]
    fn portfolio_single_document() {
        let docs = vec![doc("d1", 2001, &["a"], &[3, 0, 1])];
        let b = build_portfolio(&docs, &["a".into()], p(2000, 2009), AuthorshipFilter::Any);
        assert_eq!(b.portfolio.counts.row(0).to_vec(), vec![3.0, 0.0, 1.0]);
    }

    #[test]
    fn portfolio_is_additive() {
        let docs = vec![
            doc("d1", 2001, &["a"], &[1, 1, 0]),
            doc("d2", 2002, &["a", "b"], &[0, 2, 0]),
            doc("d3", 2012, &["a"], &[9, 9, 9]),
        ];
        let b = build_portfolio(&docs, &["a".into()], p(2000, 2009), AuthorshipFilter::Any);
        assert_eq!(b.portfolio.counts.row(0).to_vec(), vec![1.0, 3.0, 0.0]);
        let x = b.portfolio.normalized();
        assert_abs_diff_eq!(x.row(0).sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn first_or_last_excludes_middle_author() {
        let docs = vec![doc("d1", 2001, &["a", "m", "z"], &[1, 0])];
        let authors = vec!["a".to_string(), "m".to_string(), "z".to_string()];
        let b = build_portfolio(&docs, &authors, p(2000, 2009), AuthorshipFilter::FirstOrLast);
        assert_eq!(b.portfolio.author_ids, vec!["a".to_string(), "z".to_string()]);
        assert_eq!(b.excluded, vec!["m".to_string()]);
    }

    #[test]
    fn cohort_thresholds() {
        let mut docs = Vec::new();
        for i in 0..5 {
            docs.push(doc(&format!("a{i}"), 2001, &["a", "b"], &[1]));
            docs.push(doc(&format!("b{i}"), 2016, &["a"], &[1]));
        }
        for i in 0..4 {
            docs.push(doc(&format!("c{i}"), 2016, &["b"], &[1]));
        }
        docs.push(doc("lonely", 2003, &["c"], &[1]));
        let periods = [p(2000, 2009), p(2015, 2019)];
        let cohort = select_cohort(&docs, 5, &periods).unwrap();
        assert!(cohort.contains("a"));
        assert!(!cohort.contains("b"));
        let everyone = select_cohort(&docs, 0, &periods).unwrap();
        assert_eq!(everyone.len(), 3);
        assert!(select_cohort(&docs, 1, &[p(2000, 2009), p(2005, 2010)]).is_err());
    }

    #[test]
    fn effective_topic_counts() {
        assert_abs_diff_eq!(effective_topics(&[1.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(effective_topics(&[0.25; 4]).unwrap(), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            effective_topics(&[0.5, 0.25, 0.25]).unwrap(),
            2f64.powf(1.5),
            epsilon = 1e-12
        );
        assert!(effective_topics(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn covariates_age_and_productivity() {
        let mut docs = vec![doc("first", 2000, &["a"], &[1])];
        for i in 0..2 {
            docs.push(doc(&format!("s{i}"), 2005, &["a"], &[1]));
        }
        for i in 0..2 {
            docs.push(doc(&format!("c{i}"), 2006, &["a", "b"], &[1]));
        }
        let cov = author_covariates(&docs, "a", 2019, p(2000, 2009), p(2000, 2019), None).unwrap();
        assert_eq!(cov.academic_age, 19);
        assert_eq!(cov.productivity_solo, 3);
        assert_eq!(cov.productivity_coauthored, 2);
        assert!(!cov.stable_affiliation);
    }

    #[test]
    fn validation_rejects_bad_mixture() {
        let mut d = doc("bad", 2001, &["a"], &[1, 1]);
        d.raw_mixture = Some(vec![0.5, 0.3]);
        let err = d.validate(2).unwrap_err().to_string();
        assert!(err.contains("bad") && err.contains("raw_mixture"), "{err}");
        let d = doc("dup", 2001, &["a", "a"], &[1, 1]);
        assert!(d.validate(2).is_err());
        let d = doc("wide", 2001, &["a"], &[1, 1, 1]);
        assert!(d.validate(2).is_err());
    }
}
