//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcop::manual::Procedure;

pub const WORDS: &[&str] = &[
    "ENG", "1", "2", "FIRE", "FAIL", "THRUST", "LEVER", "IDLE", "OFF", "ON", "APU", "PACK", "HYD",
    "PRESS", "LO", "AGENT", "DISCH", "ATC", "NOTIFY", "GEAR", "DOWN", "SPEED", "250", "KT", "P/B",
];

pub const TAGS: &[&str] = &[
    "ENG_1_FIRE",
    "ENG_1_FAIL",
    "HYD_LO_PR",
    "APU_FIRE",
    "GEAR_UNSAFE",
    "SMOKE",
    "BLEED_FAULT",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn phrase(rng: &mut impl Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Random but valid manual markup with up to `max_procedures` procedures.
/// Includes comments, blank lines, guarded and nested steps.
pub fn random_manual(rng: &mut impl Rng, manual_id: &str, max_procedures: usize) -> String {
    let mut out = format!("#MANUAL {manual_id} {}\n", phrase(rng, 1, 3));
    if rng.gen_bool(0.3) {
        out.push_str("// generated\n");
    }
    let total = rng.gen_range(1..=max_procedures.max(1));
    let mut made = 0;
    let mut page = rng.gen_range(1..5);
    let mut chapter = 0;
    while made < total {
        chapter += rng.gen_range(1..3);
        out.push_str(&format!("\n#CHAPTER {chapter} {}\n", phrase(rng, 1, 3)));
        let mut section = 0;
        for _ in 0..rng.gen_range(1..=3) {
            if made >= total {
                break;
            }
            section += rng.gen_range(1..3);
            page += rng.gen_range(0..4);
            out.push_str(&format!(
                "\n#SECTION {chapter}.{section} {} @{page}\n",
                phrase(rng, 1, 3)
            ));
            for _ in 0..rng.gen_range(1..=3) {
                if made >= total {
                    break;
                }
                made += 1;
                out.push('\n');
                out.push_str(&random_procedure(rng, &format!("{manual_id}_P{made}")));
            }
        }
    }
    out
}

fn random_procedure(rng: &mut impl Rng, id: &str) -> String {
    let severity = ["NORMAL", "NON_NORMAL", "EMERGENCY"].choose(rng).unwrap();
    let mut out = format!("#PROCEDURE {id} {severity} {}\n", phrase(rng, 1, 4));
    let n_tags = rng.gen_range(1..=3);
    let tags: BTreeSet<&str> = (0..n_tags).map(|_| *TAGS.choose(rng).unwrap()).collect();
    let tags: Vec<&str> = tags.into_iter().collect();
    out.push_str(&format!("#TAGS {}\n", tags.join(", ")));
    let mut nesting = 0usize;
    let mut first = true;
    for _ in 0..rng.gen_range(1..=6) {
        let guarded = !first && rng.gen_bool(0.25);
        if guarded {
            out.push_str(&format!("#IF {}\n", phrase(rng, 1, 4)));
            for _ in 0..rng.gen_range(1..=2) {
                nesting = rng.gen_range(0..=nesting + 1).min(2);
                out.push_str(&step_line(rng, nesting));
            }
            out.push_str("#ENDIF\n");
        } else {
            nesting = if first {
                0
            } else {
                rng.gen_range(0..=nesting + 1).min(2)
            };
            out.push_str(&step_line(rng, nesting));
        }
        first = false;
    }
    out.push_str("#END\n");
    out
}

fn step_line(rng: &mut impl Rng, nesting: usize) -> String {
    format!(
        "{}{} .......... {}\n",
        "  ".repeat(nesting),
        phrase(rng, 1, 3),
        phrase(rng, 1, 2)
    )
}

pub fn random_query(rng: &mut impl Rng) -> (Vec<String>, BTreeSet<String>) {
    let mut words: Vec<String> = (0..rng.gen_range(0..=5))
        .map(|_| {
            if rng.gen_bool(0.1) {
                "absent".to_string()
            } else {
                WORDS.choose(rng).unwrap().to_lowercase()
            }
        })
        .collect();
    if words.len() > 1 && rng.gen_bool(0.3) {
        words.push(words[0].clone());
    }
    let tags = (0..rng.gen_range(0..=2))
        .map(|_| TAGS.choose(rng).unwrap().to_string())
        .collect();
    (words, tags)
}

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Score every procedure from scratch and sort: score descending, id ascending.
/// Zero scores are dropped; at most `k` results.
pub fn brute_force_search(
    procedures: &[&Procedure],
    terms: &[String],
    tags: &BTreeSet<String>,
    k: usize,
) -> Vec<(String, f64)> {
    let (k1, b, boost) = (1.2f64, 0.75f64, 2.0f64);
    let docs: Vec<(String, Vec<String>, &BTreeSet<String>)> = procedures
        .iter()
        .map(|p| {
            let mut toks = oracle_tokens(&p.title);
            for t in &p.condition_tags {
                toks.extend(oracle_tokens(t));
            }
            for s in &p.steps {
                toks.extend(oracle_tokens(&s.challenge));
                toks.extend(oracle_tokens(&s.response));
            }
            (p.id.clone(), toks, &p.condition_tags)
        })
        .collect();
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|d| d.1.len()).sum();
    let avg = total as f64 / docs.len() as f64;
    let distinct: BTreeSet<&String> = terms.iter().collect();

    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, toks, doc_tags)| {
            let mut s = 0.0f64;
            for term in &distinct {
                let tf = toks.iter().filter(|t| t == term).count();
                if tf == 0 {
                    continue;
                }
                let df = docs.iter().filter(|d| d.1.contains(term)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let tf = tf as f64;
                let norm = 1.0 - b + b * toks.len() as f64 / avg;
                s += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
            let matched = tags.iter().filter(|t| doc_tags.contains(*t)).count();
            (id.clone(), s + boost * matched as f64)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Lines `start..=end` (1-based) of `text`, sliced independently of the parser.
pub fn slice_lines(text: &str, start: usize, end: usize) -> String {
    let lines: Vec<&str> = text.split('\n').collect();
    lines[start - 1..end].join("\n")
}

pub fn counts<T: Ord + Clone>(items: &[T]) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(i.clone()).or_insert(0) += 1;
    }
    m
}
