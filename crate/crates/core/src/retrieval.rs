//! BM25 retrieval over parsed procedures.
//!
//! ```text
//! score(d, q) = Σ_t idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·|d|/avgdl))
//!             + tag_boost · |query_tags ∩ tags(d)|
//! idf(t)      = ln(1 + (N − n_t + 0.5) / (n_t + 0.5))
//! ```
//!
//! Query terms are treated as a set and summed in lexicographic order, so the
//! same query always produces bit-identical scores. Ties are broken by
//! procedure id ascending.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manual::{Corpus, Procedure, SourceIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,
    #[error("duplicate procedure id `{0}`")]
    DuplicateId(String),
    #[error("unknown procedure `{0}`")]
    UnknownProcedure(String),
    #[error("invalid ranking parameters: {0}")]
    InvalidParams(String),
}

impl RetrievalError {
    pub fn code(&self) -> &'static str {
        match self {
            RetrievalError::EmptyCorpus => "EmptyCorpus",
            RetrievalError::DuplicateId(_) => "DuplicateId",
            RetrievalError::UnknownProcedure(_) => "UnknownProcedure",
            RetrievalError::InvalidParams(_) => "InvalidParams",
        }
    }
}

/// Lowercase, split on every non-alphanumeric character, drop empty fragments.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankParams {
    pub k1: f64,
    pub b: f64,
    /// Added once per query tag the procedure carries.
    pub tag_boost: f64,
}

impl Default for RankParams {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            tag_boost: 2.0,
        }
    }
}

impl RankParams {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |what: &str| Err(RetrievalError::InvalidParams(what.to_string()));
        if !(self.k1.is_finite() && self.k1 >= 0.0) {
            return bad("k1 must be finite and non-negative");
        }
        if !(self.b.is_finite() && (0.0..=1.0).contains(&self.b)) {
            return bad("b must lie in [0, 1]");
        }
        if !(self.tag_boost.is_finite() && self.tag_boost >= 0.0) {
            return bad("tag_boost must be finite and non-negative");
        }
        Ok(())
    }
}

/// Term statistics for one procedure: title, tags and step text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub procedure_id: String,
    pub terms: BTreeMap<String, u32>,
    pub tag_terms: BTreeSet<String>,
    pub length: u32,
}

impl TokenizedDoc {
    pub fn from_procedure(p: &Procedure) -> Self {
        let mut terms: BTreeMap<String, u32> = BTreeMap::new();
        let mut length = 0;
        let mut add = |text: &str| {
            for t in tokenize(text) {
                *terms.entry(t).or_default() += 1;
                length += 1;
            }
        };
        add(&p.title);
        for tag in &p.condition_tags {
            add(tag);
        }
        for step in &p.steps {
            add(&step.challenge);
            add(&step.response);
        }
        Self {
            procedure_id: p.id.clone(),
            terms,
            tag_terms: p.condition_tags.clone(),
            length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedHit {
    pub procedure_id: String,
    pub score: f64,
    pub source: SourceIndex,
}

#[derive(Debug, Clone)]
struct DocEntry {
    id: String,
    length: u32,
    tags: BTreeSet<String>,
    source: SourceIndex,
}

/// Immutable inverted index. Documents are stored in procedure-id order, so
/// every postings list is sorted by procedure id.
#[derive(Debug, Clone)]
pub struct Index {
    docs: Vec<DocEntry>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
    tag_postings: BTreeMap<String, Vec<u32>>,
    avg_doc_length: f64,
    params: RankParams,
}

pub fn build_index(corpus: &Corpus, params: RankParams) -> Result<Index, RetrievalError> {
    Index::build(corpus.procedures(), params)
}

impl Index {
    pub fn build<'a, I>(procedures: I, params: RankParams) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = &'a Procedure>,
    {
        params.validate()?;
        let mut seen = HashSet::new();
        let mut tokenized: Vec<(TokenizedDoc, SourceIndex)> = Vec::new();
        for p in procedures {
            if !seen.insert(p.id.clone()) {
                return Err(RetrievalError::DuplicateId(p.id.clone()));
            }
            tokenized.push((TokenizedDoc::from_procedure(p), p.source.clone()));
        }
        if tokenized.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        tokenized.sort_by(|a, b| a.0.procedure_id.cmp(&b.0.procedure_id));

        let mut docs = Vec::with_capacity(tokenized.len());
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut tag_postings: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        let mut total_length = 0u64;
        for (i, (doc, source)) in tokenized.into_iter().enumerate() {
            let i = i as u32;
            for (term, tf) in doc.terms {
                postings.entry(term).or_default().push((i, tf));
            }
            for tag in &doc.tag_terms {
                tag_postings.entry(tag.clone()).or_default().push(i);
            }
            total_length += u64::from(doc.length);
            docs.push(DocEntry {
                id: doc.procedure_id,
                length: doc.length,
                tags: doc.tag_terms,
                source,
            });
        }
        let avg_doc_length = total_length as f64 / docs.len() as f64;
        Ok(Self {
            docs,
            postings,
            tag_postings,
            avg_doc_length,
            params,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> RankParams {
        self.params
    }

    pub fn doc_length(&self, procedure_id: &str) -> Option<u32> {
        self.position(procedure_id).map(|i| self.docs[i].length)
    }

    /// `(procedure_id, term_frequency)` pairs for a term, in id order.
    pub fn postings(&self, term: &str) -> impl Iterator<Item = (&str, u32)> {
        self.postings
            .get(term)
            .into_iter()
            .flatten()
            .map(|&(d, tf)| (self.docs[d as usize].id.as_str(), tf))
    }

    pub fn procedure_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    fn position(&self, procedure_id: &str) -> Option<usize> {
        self.docs
            .binary_search_by(|d| d.id.as_str().cmp(procedure_id))
            .ok()
    }

    fn idf(&self, doc_freq: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = doc_freq as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, length: u32) -> f64 {
        let RankParams { k1, b, .. } = self.params;
        let tf = f64::from(tf);
        let norm = 1.0 - b + b * f64::from(length) / self.avg_doc_length;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    fn distinct_terms(query_terms: &[String]) -> BTreeSet<&str> {
        query_terms.iter().map(String::as_str).collect()
    }

    /// Score one procedure against a query.
    pub fn score(
        &self,
        query_terms: &[String],
        query_tags: &BTreeSet<String>,
        procedure_id: &str,
    ) -> Result<f64, RetrievalError> {
        let pos = self
            .position(procedure_id)
            .ok_or_else(|| RetrievalError::UnknownProcedure(procedure_id.to_string()))?;
        let doc = &self.docs[pos];
        let mut total = 0.0;
        for term in Self::distinct_terms(query_terms) {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            if let Ok(at) = list.binary_search_by_key(&(pos as u32), |&(d, _)| d) {
                total += self.term_weight(self.idf(list.len()), list[at].1, doc.length);
            }
        }
        let matched = query_tags.intersection(&doc.tags).count();
        Ok(total + self.params.tag_boost * matched as f64)
    }

    /// Top-`k` procedures by (score desc, id asc); zero scores are dropped.
    pub fn search(
        &self,
        query_terms: &[String],
        query_tags: &BTreeSet<String>,
        k: usize,
    ) -> Vec<RankedHit> {
        let mut scores = vec![0.0f64; self.docs.len()];
        for term in Self::distinct_terms(query_terms) {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(list.len());
            for &(d, tf) in list {
                scores[d as usize] += self.term_weight(idf, tf, self.docs[d as usize].length);
            }
        }
        let mut matched = vec![0usize; self.docs.len()];
        for tag in query_tags {
            for &d in self.tag_postings.get(tag).into_iter().flatten() {
                matched[d as usize] += 1;
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .zip(matched)
            .map(|(s, m)| s + self.params.tag_boost * m as f64)
            .enumerate()
            .filter(|&(_, s)| s > 0.0)
            .collect();
        // docs are already in id order, so a stable sort on score keeps the tie-break
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(d, score)| RankedHit {
                procedure_id: self.docs[d].id.clone(),
                score,
                source: self.docs[d].source.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manual::Corpus;

    fn corpus(procs: &[(&str, &str, &str)]) -> Corpus {
        let mut text = String::from("#MANUAL T Test\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n");
        for (id, tags, step) in procs {
            text.push_str(&format!(
                "#PROCEDURE {id} NON_NORMAL {id}\n#TAGS {tags}\n{step} .......... CHECK\n#END\n"
            ));
        }
        Corpus::parse([text]).unwrap()
    }

    fn terms(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn tags(list: &[&str]) -> BTreeSet<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("ENG 1 FAIL"), ["eng", "1", "fail"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Clear Status?"), ["clear", "status"]);
        assert_eq!(
            tokenize("HYD G+Y SYS LO PR"),
            ["hyd", "g", "y", "sys", "lo", "pr"]
        );
    }

    #[test]
    fn single_doc_statistics() {
        // title "P", tag "A_B", step "ONE TWO THREE" + "CHECK": 7 distinct terms
        let c = corpus(&[("P", "A_B", "ONE TWO THREE")]);
        let idx = build_index(&c, RankParams::default()).unwrap();
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.doc_length("P"), Some(7));
        assert_eq!(idx.avg_doc_length(), 7.0);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let c = Corpus::default();
        assert_eq!(
            build_index(&c, RankParams::default()).unwrap_err(),
            RetrievalError::EmptyCorpus
        );
    }

    #[test]
    fn bad_params_are_rejected() {
        let c = corpus(&[("P", "A", "X")]);
        for params in [
            RankParams {
                k1: -1.0,
                ..Default::default()
            },
            RankParams {
                b: 1.5,
                ..Default::default()
            },
            RankParams {
                tag_boost: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                build_index(&c, params),
                Err(RetrievalError::InvalidParams(_))
            ));
        }
    }

    #[test]
    fn duplicate_ids_propagate() {
        let a = "#MANUAL A A\n#CHAPTER 1 C\n#SECTION 1.1 S @1\n#PROCEDURE P NORMAL T\n#TAGS X\nA .......... B\n#END\n";
        let b = a.replace("#MANUAL A A", "#MANUAL B B");
        let c = Corpus::parse([a.to_string(), b]).unwrap();
        assert_eq!(
            build_index(&c, RankParams::default()).unwrap_err(),
            RetrievalError::DuplicateId("P".into())
        );
    }

    #[test]
    fn absent_terms_score_zero() {
        let c = corpus(&[("P", "A", "ONE"), ("Q", "B", "TWO")]);
        let idx = build_index(&c, RankParams::default()).unwrap();
        assert_eq!(idx.score(&terms("zulu"), &tags(&[]), "P").unwrap(), 0.0);
        assert!(idx.search(&terms("zulu"), &tags(&[]), 5).is_empty());
        assert!(matches!(
            idx.score(&terms("one"), &tags(&[]), "NOPE"),
            Err(RetrievalError::UnknownProcedure(_))
        ));
    }

    #[test]
    fn single_doc_bm25_by_hand() {
        // doc terms: p, x, one, two, one, check  (title P, tag X, step "ONE TWO ONE")
        // N = 1, every df = 1: idf = ln(1 + 0.5/1.5) = ln(4/3)
        // |d| = avgdl = 6, so norm = 1
        // tf=1: (2.2)/(1+1.2) = 1;  tf=2: 2*2.2/(2+1.2) = 1.375
        // query = full term list, summed over distinct terms p,x,one,two,check:
        //   ln(4/3) * (1 + 1 + 1.375 + 1 + 1) = 5.375 * ln(4/3)
        let c = corpus(&[("P", "X", "ONE TWO ONE")]);
        let idx = build_index(&c, RankParams::default()).unwrap();
        let q = terms("p x one two one check");
        let expected = 5.375 * (4.0f64 / 3.0).ln();
        let got = idx.score(&q, &tags(&[]), "P").unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn tag_breaks_equal_term_scores() {
        let c = corpus(&[
            ("A1", "OTHER", "ENGINE FIRE"),
            ("B1", "ENG_1_FIRE", "ENGINE FIRE"),
        ]);
        let idx = build_index(&c, RankParams::default()).unwrap();
        let hits = idx.search(&terms("engine fire"), &tags(&["ENG_1_FIRE"]), 3);
        assert_eq!(hits[0].procedure_id, "B1");
        assert_eq!(hits.len(), 2);
    }

    #[test]
    fn ties_ordered_by_id() {
        let c = corpus(&[
            ("ZULU", "T", "SAME"),
            ("ALPHA", "T", "SAME"),
            ("MIKE", "U", "OTHER"),
        ]);
        let idx = build_index(&c, RankParams::default()).unwrap();
        let hits = idx.search(&terms("same"), &tags(&[]), 3);
        let ids: Vec<&str> = hits.iter().map(|h| h.procedure_id.as_str()).collect();
        assert_eq!(ids, ["ALPHA", "ZULU"]);
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn tag_alone_retrieves() {
        let c = corpus(&[("A", "WINDSHEAR", "TOGA"), ("B", "STALL", "PITCH")]);
        let idx = build_index(&c, RankParams::default()).unwrap();
        let hits = idx.search(&[], &tags(&["WINDSHEAR"]), 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].score, 2.0);
    }

    #[test]
    fn postings_sorted_by_id() {
        let c = corpus(&[("C", "T", "X"), ("A", "T", "X"), ("B", "T", "X")]);
        let idx = build_index(&c, RankParams::default()).unwrap();
        let ids: Vec<&str> = idx.postings("x").map(|(id, _)| id).collect();
        assert_eq!(ids, ["A", "B", "C"]);
    }
}
