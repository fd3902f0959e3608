use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use super::{DocumentRecord, Period, TopicWordMatrix};
use crate::error::{Error, Result};

/// Read `documents.jsonl`, validate every record and sort by `doc_id`.
pub fn load_documents(path: &Path, num_topics: usize) -> Result<Vec<DocumentRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let docs = parse_documents(BufReader::new(file), num_topics)?;
    if docs.is_empty() {
        log::warn!("{} contains no documents", path.display());
    }
    Ok(docs)
}

pub fn parse_documents<R: BufRead>(reader: R, num_topics: usize) -> Result<Vec<DocumentRecord>> {
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            location: format!("line {}", lineno + 1),
            reason: e.to_string(),
        })?;
        // '#' lines carry artifact metadata
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut doc: DocumentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("line {}", lineno + 1),
            reason: e.to_string(),
        })?;
        // Raw-path records carry a mixture and tokens instead of counts;
        // counts are filled in by token assignment.
        if doc.topic_counts.is_empty() && doc.raw_mixture.is_some() && doc.tokens.is_some() {
            doc.topic_counts = vec![0; num_topics];
        }
        doc.validate(num_topics)?;
        docs.push(doc);
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    for pair in docs.windows(2) {
        if pair[0].doc_id == pair[1].doc_id {
            return Err(Error::InvalidRecord {
                doc_id: pair[0].doc_id.clone(),
                field: "doc_id".into(),
                reason: "duplicate id".into(),
            });
        }
    }
    Ok(docs)
}

/// `topic_word.csv`: K rows of V probabilities, no header.
pub fn load_topic_word(path: &Path) -> Result<TopicWordMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_topic_word(file)
}

fn parse_topic_word<R: Read>(reader: R) -> Result<TopicWordMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| Error::Parse {
                    location: format!("topic_word row {}", i + 1),
                    reason: format!("`{v}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let v = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != v) {
        return Err(Error::invalid("topic_word rows have different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let m = Array2::from_shape_vec((rows.len(), v), flat).map_err(|e| Error::invalid(e.to_string()))?;
    TopicWordMatrix::new(m)
}

/// Per-author affiliation intervals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affiliations {
    intervals: BTreeMap<String, Vec<Period>>,
}

#[derive(Deserialize)]
struct AffiliationRow {
    author_id: String,
    start_year: i32,
    end_year: i32,
}

impl Affiliations {
    pub fn insert(&mut self, author: &str, interval: Period) {
        self.intervals.entry(author.to_string()).or_default().push(interval);
    }

    /// True when one interval covers the whole range.
    pub fn spans(&self, author: &str, range: Period) -> bool {
        self.intervals
            .get(author)
            .is_some_and(|v| v.iter().any(|iv| iv.start <= range.start && iv.end >= range.end))
    }

    pub fn authors(&self) -> BTreeSet<&str> {
        self.intervals.keys().map(String::as_str).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, Period)> {
        self.intervals
            .iter()
            .flat_map(|(a, v)| v.iter().map(move |p| (a.as_str(), *p)))
    }
}

/// `affiliations.csv` with header `author_id,start_year,end_year`.
pub fn load_affiliations(path: &Path) -> Result<Affiliations> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut out = Affiliations::default();
    for row in rdr.deserialize::<AffiliationRow>() {
        let row = row?;
        out.insert(&row.author_id, Period::new(row.start_year, row.end_year)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"doc_id": "c", "year": 2001, "authors": ["x"], "topic_counts": [1, 0]}
{"doc_id": "a", "year": 2002, "authors": ["x", "y"], "topic_counts": [0, 2], "citations": ["c"]}
{"doc_id": "b", "year": 2003, "authors": ["y"], "topic_counts": [3, 3], "raw_mixture": [0.5, 0.5]}
"#;

    #[test]
    fn parses_and_sorts() {
        let docs = parse_documents(THREE.as_bytes(), 2).unwrap();
        let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(docs[0].citations, vec!["c".to_string()]);
    }

    #[test]
    fn bad_mixture_names_the_record() {
        let line =
            r#"{"doc_id": "bad1", "year": 2002, "authors": ["x"], "topic_counts": [1, 1], "raw_mixture": [0.5, 0.3]}"#;
        let err = parse_documents(line.as_bytes(), 2).unwrap_err().to_string();
        assert!(err.contains("bad1") && err.contains("raw_mixture"), "{err}");
    }

    #[test]
    fn topic_index_out_of_range() {
        let line = r#"{"doc_id": "w", "year": 2002, "authors": ["x"], "topic_counts": [1, 1, 1]}"#;
        assert!(parse_documents(line.as_bytes(), 2).is_err());
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_documents("".as_bytes(), 4).unwrap().is_empty());
    }

    #[test]
    fn topic_word_csv() {
        let tw = parse_topic_word("0.5,0.5,0\n0.1,0.2,0.7\n".as_bytes()).unwrap();
        assert_eq!(tw.num_topics(), 2);
        assert_eq!(tw.vocab_size(), 3);
        assert!(parse_topic_word("0.5,0.6\n".as_bytes()).is_err());
    }

    #[test]
    fn affiliation_span() {
        let mut aff = Affiliations::default();
        aff.insert("a", Period::new(1995, 2020).unwrap());
        aff.insert("b", Period::new(2000, 2010).unwrap());
        let range = Period::new(2000, 2019).unwrap();
        assert!(aff.spans("a", range));
        assert!(!aff.spans("b", range));
        assert!(!aff.spans("c", range));
    }
}
