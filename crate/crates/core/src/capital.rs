//! Intellectual and social capital, diversity, power, and the alternative
//! Stirling and brokerage measures.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{CoauthorGraph, DocumentRecord};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalProfile {
    pub author_id: String,
    pub intellectual: Vec<f64>,
    pub social: Vec<f64>,
    pub intellectual_diversity: f64,
    pub social_diversity: f64,
    pub excess_social_diversity: f64,
    pub power: f64,
    pub stirling_diversity: f64,
    pub brokerage: usize,
}

/// Threshold defining "expertise" in a topic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertiseRule {
    #[default]
    AboveMean,
    AboveMedian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    /// `nu[k][k']`: fraction of experts in k who are also experts in k'.
    pub nu: Array2<f64>,
    pub expertise_threshold_rule: String,
}

impl OverlapMatrix {
    pub fn knowledge_gap(&self) -> Array2<f64> {
        self.nu.mapv(|v| 1.0 - v)
    }
}

/// Raw author-weighted topic mass `sum_d n_dk / |A_d|` for `author`,
/// skipping documents also signed by `exclude`.
fn weighted_mass<'a, I>(docs: I, author: &str, exclude: Option<&str>, k: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a DocumentRecord>,
{
    let mut raw = vec![0.0; k];
    for d in docs {
        if !d.has_author(author) || exclude.is_some_and(|e| d.has_author(e)) {
            continue;
        }
        let w = 1.0 / d.num_authors() as f64;
        for (t, &n) in d.topic_counts.iter().enumerate() {
            raw[t] += n as f64 * w;
        }
    }
    raw
}

/// `I_ak ∝ sum_d n_dk / |A_d|` over the author's documents.
pub fn intellectual_capital(docs: &[DocumentRecord], author: &str) -> Result<Vec<f64>> {
    let k = num_topics(docs);
    let raw = weighted_mass(docs, author, None, k);
    stats::normalize(&raw).map_err(|_| Error::Degenerate(format!("author {author} has no topic mass in the period")))
}

fn num_topics(docs: &[DocumentRecord]) -> usize {
    docs.first().map_or(0, |d| d.topic_counts.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocialCapital {
    pub vector: Vec<f64>,
    /// Collaborators whose whole record is shared with the author; they
    /// contribute a zero vector.
    pub undefined_collaborators: Vec<String>,
}

/// `S_a = sum_c w_ac I_{c \ a}`, where `I_{c \ a}` leaves out the papers
/// `c` coauthored with `a`.
pub fn social_capital(author: &str, graph: &CoauthorGraph, docs: &[DocumentRecord]) -> SocialCapital {
    let k = num_topics(docs);
    let mut vector = vec![0.0; k];
    let mut undefined = Vec::new();
    for (c, w) in graph.neighbors(author) {
        let raw = weighted_mass(docs, c, Some(author), k);
        match stats::normalize(&raw) {
            Ok(ic) => {
                for (s, v) in vector.iter_mut().zip(ic) {
                    *s += w * v;
                }
            }
            Err(_) => undefined.push(c.to_string()),
        }
    }
    SocialCapital {
        vector,
        undefined_collaborators: undefined,
    }
}

/// `exp(H(v / sum v))`.
pub fn diversity(v: &[f64]) -> Result<f64> {
    let p = stats::normalize(v)?;
    Ok(stats::entropy(&p).exp())
}

/// Residuals of the OLS fit of social diversity on intellectual diversity.
pub fn excess_social_diversity(intellectual_div: &[f64], social_div: &[f64]) -> Result<Vec<f64>> {
    let (_, _, residuals) = stats::ols_line(intellectual_div, social_div)?;
    Ok(residuals)
}

/// `P = sum_k S_ak`.
pub fn power(social: &[f64]) -> f64 {
    social.iter().sum()
}

/// Strength-weighted collaborator count `sum_c w_ac`.
pub fn collaboration_strength(author: &str, graph: &CoauthorGraph) -> f64 {
    graph.neighbors(author).map(|(_, w)| w).sum()
}

/// `1 - sum_{k,k'} d_kk' I_k I_k'`.
pub fn stirling_diversity(intellectual: &[f64], similarity: &Array2<f64>) -> Result<f64> {
    let k = intellectual.len();
    if similarity.dim() != (k, k) {
        return Err(Error::invalid("similarity matrix shape does not match"));
    }
    for i in 0..k {
        for j in 0..k {
            let v = similarity[[i, j]];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("similarity[{i},{j}] = {v} outside [0,1]")));
            }
            if (v - similarity[[j, i]]).abs() > 1e-12 {
                return Err(Error::invalid(format!("similarity is asymmetric at ({i},{j})")));
            }
        }
    }
    let mut quad = 0.0;
    for i in 0..k {
        for j in 0..k {
            quad += similarity[[i, j]] * intellectual[i] * intellectual[j];
        }
    }
    Ok((1.0 - quad).clamp(0.0, 1.0))
}

/// Unordered pairs of collaborators of `author` whose only common neighbor
/// is `author`. A direct edge between the two does not disqualify the pair.
pub fn brokerage(author: &str, graph: &CoauthorGraph) -> usize {
    let nbrs: Vec<&str> = graph.neighbors(author).map(|(c, _)| c).collect();
    let sets: Vec<BTreeSet<&str>> = nbrs.iter().map(|c| graph.neighbor_set(c)).collect();
    let mut count = 0;
    for i in 0..nbrs.len() {
        for j in i + 1..nbrs.len() {
            let shared = sets[i].intersection(&sets[j]).any(|&m| m != author);
            if !shared {
                count += 1;
            }
        }
    }
    count
}

fn expert_sets(intellectual: &Array2<f64>, rule: ExpertiseRule) -> Vec<BTreeSet<usize>> {
    let (n, k) = intellectual.dim();
    (0..k)
        .map(|t| {
            let col: Vec<f64> = intellectual.column(t).to_vec();
            let threshold = match rule {
                ExpertiseRule::AboveMean => stats::mean(&col),
                ExpertiseRule::AboveMedian => {
                    let mut s = col.clone();
                    s.sort_by(|a, b| a.total_cmp(b));
                    stats::quantile_sorted(&s, 0.5)
                }
            };
            (0..n).filter(|&a| col[a] > threshold).collect()
        })
        .collect()
}

/// `nu_kk' = |E_k ∩ E_k'| / |E_k|` with `E_k` the experts of topic k.
pub fn expertise_overlap(intellectual: &Array2<f64>, rule: ExpertiseRule) -> OverlapMatrix {
    let k = intellectual.ncols();
    let experts = expert_sets(intellectual, rule);
    let mut nu = Array2::zeros((k, k));
    for i in 0..k {
        if experts[i].is_empty() {
            log::warn!("topic {i} has no experts; its overlap row is set to 0");
            continue;
        }
        for j in 0..k {
            let both = experts[i].intersection(&experts[j]).count();
            nu[[i, j]] = both as f64 / experts[i].len() as f64;
        }
    }
    let rule_name = match rule {
        ExpertiseRule::AboveMean => "I_ak > cohort mean of I_.k",
        ExpertiseRule::AboveMedian => "I_ak > cohort median of I_.k",
    };
    OverlapMatrix {
        nu,
        expertise_threshold_rule: rule_name.to_string(),
    }
}

/// Jaccard similarity of expert sets, symmetric with unit diagonal.
pub fn expertise_similarity(intellectual: &Array2<f64>, rule: ExpertiseRule) -> Array2<f64> {
    let k = intellectual.ncols();
    let experts = expert_sets(intellectual, rule);
    let mut d = Array2::zeros((k, k));
    for i in 0..k {
        d[[i, i]] = 1.0;
        for j in i + 1..k {
            let union = experts[i].union(&experts[j]).count();
            let v = if union == 0 {
                0.0
            } else {
                experts[i].intersection(&experts[j]).count() as f64 / union as f64
            };
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Cohort-wide capital measures for `authors` from the reference-period
/// documents and graph.
pub fn compute_profiles(
    docs: &[DocumentRecord],
    authors: &[String],
    graph: &CoauthorGraph,
    rule: ExpertiseRule,
) -> Result<Vec<CapitalProfile>> {
    let k = num_topics(docs);
    // index docs by author so per-author sums only touch that author's papers
    let mut by_author: BTreeMap<&str, Vec<&DocumentRecord>> = BTreeMap::new();
    for d in docs {
        for a in &d.authors {
            by_author.entry(a.as_str()).or_default().push(d);
        }
    }
    let empty = Vec::new();
    let mine = |a: &str| by_author.get(a).unwrap_or(&empty).iter().copied();

    let mut intellectual = Array2::zeros((authors.len(), k));
    let mut socials = Vec::with_capacity(authors.len());
    let mut powers = Vec::with_capacity(authors.len());
    for (i, a) in authors.iter().enumerate() {
        let ia = stats::normalize(&weighted_mass(mine(a), a, None, k))
            .map_err(|_| Error::Degenerate(format!("author {a} has no topic mass in the reference period")))?;
        for (t, v) in ia.iter().enumerate() {
            intellectual[[i, t]] = *v;
        }
        let mut s = vec![0.0; k];
        let mut undefined = 0usize;
        for (c, w) in graph.neighbors(a) {
            match stats::normalize(&weighted_mass(mine(c), c, Some(a), k)) {
                Ok(ic) => s.iter_mut().zip(ic).for_each(|(sv, v)| *sv += w * v),
                Err(_) => undefined += 1,
            }
        }
        if undefined > 0 {
            log::debug!("{a}: {undefined} collaborator(s) with no independent record");
        }
        socials.push(s);
        powers.push(collaboration_strength(a, graph));
    }

    let d_int: Vec<f64> = intellectual
        .rows()
        .into_iter()
        .map(|r| stats::entropy(r.as_slice().expect("contiguous")).exp())
        .collect();
    let d_soc: Vec<f64> = socials
        .iter()
        // no collaborators: lowest possible diversity
        .map(|s| diversity(s).unwrap_or(1.0))
        .collect();
    let excess = excess_social_diversity(&d_int, &d_soc)?;
    let similarity = expertise_similarity(&intellectual, rule);

    let mut out = Vec::with_capacity(authors.len());
    for (i, a) in authors.iter().enumerate() {
        let ia = intellectual.row(i).to_vec();
        out.push(CapitalProfile {
            author_id: a.clone(),
            stirling_diversity: stirling_diversity(&ia, &similarity)?,
            intellectual: ia,
            social: socials[i].clone(),
            intellectual_diversity: d_int[i],
            social_diversity: d_soc[i],
            excess_social_diversity: excess[i],
            power: powers[i],
            brokerage: brokerage(a, graph),
        });
    }
    Ok(out)
}
