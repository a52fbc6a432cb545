//! Scoring: ROUGE-1/2/L F1, n-gram copy ratios, implicit extraction from
//! the memory-write attention, and the greedy extractive oracle.
//!
//! ROUGE here is full-length F1 without stemming, stopword removal or
//! bootstrap resampling; byte parity with the official Perl tool is out of
//! scope.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::HierDocument;

/// Precision/recall/F1 for one metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeEntry {
    pub p: f64,
    pub r: f64,
    pub f: f64,
    /// Set when the reference was shorter than the n-gram order.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short_reference: bool,
}

impl RougeEntry {
    fn from_counts(overlap: f64, cand: f64, reference: f64) -> RougeEntry {
        let p = if cand > 0.0 { overlap / cand } else { 0.0 };
        let r = if reference > 0.0 { overlap / reference } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        RougeEntry { p, r, f, short_reference: false }
    }
}

/// The three standard entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub rouge1: RougeEntry,
    pub rouge2: RougeEntry,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeEntry,
}

pub fn rouge_score<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> RougeScore {
    RougeScore {
        rouge1: rouge_n(candidate, reference, 1),
        rouge2: rouge_n(candidate, reference, 2),
        rouge_l: rouge_l(candidate, reference),
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts: HashMap<&[T], u64> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap F1.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeEntry {
    assert!(n >= 1, "n-gram order must be at least 1");
    if reference.len() < n {
        return RougeEntry { short_reference: true, ..RougeEntry::default() };
    }
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let overlap: u64 = cand
        .iter()
        .map(|(gram, &c)| c.min(refc.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total = candidate.len().saturating_sub(n - 1) as f64;
    let ref_total = reference.len().saturating_sub(n - 1) as f64;
    RougeEntry::from_counts(overlap as f64, cand_total, ref_total)
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F1.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeEntry {
    if candidate.is_empty() || reference.is_empty() {
        return RougeEntry::default();
    }
    let lcs = lcs_len(candidate, reference) as f64;
    RougeEntry::from_counts(lcs, candidate.len() as f64, reference.len() as f64)
}

/// Percentage of summary n-grams (with multiplicity) found anywhere in the
/// article. `None` when the summary is shorter than `n`.
pub fn ngram_copy_ratio<T: Eq + Hash>(summary: &[T], article: &[T], n: usize) -> Option<f64> {
    if summary.len() < n {
        return None;
    }
    let article_grams = ngram_counts(article, n);
    let total = summary.len() - n + 1;
    let found = summary
        .windows(n)
        .filter(|w| article_grams.contains_key(*w))
        .count();
    Some(100.0 * found as f64 / total as f64)
}

// ── implicit extraction ─────────────────────────────────────────────

/// Sentences picked by the memory heads: per head the argmax sentence,
/// deduplicated, in document order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub sentence_indices: Vec<usize>,
    pub summary: String,
}

/// `attention` is the row-stochastic `[r, L]` write-attention matrix.
pub fn extract_by_memory(
    attention: &[f64],
    heads: usize,
    doc: &HierDocument,
) -> ExtractionReport {
    let l = doc.num_sentences();
    assert_eq!(attention.len(), heads * l, "attention shape mismatch");
    let mut picked: Vec<usize> = Vec::new();
    for head in 0..heads {
        let row = &attention[head * l..(head + 1) * l];
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if !picked.contains(&best) {
            picked.push(best);
        }
    }
    picked.sort_unstable();
    let summary = picked
        .iter()
        .map(|&j| doc.sentence_text(j))
        .collect::<Vec<_>>()
        .join(" ");
    ExtractionReport { sentence_indices: picked, summary }
}

/// Largest off-diagonal entry of `A A^T`: how much any two heads overlap.
pub fn max_offdiag_head_overlap(attention: &[f64], heads: usize) -> f64 {
    if heads < 2 {
        return 0.0;
    }
    let l = attention.len() / heads;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..heads {
        for j in 0..heads {
            if i == j {
                continue;
            }
            let dot: f64 = (0..l)
                .map(|k| attention[i * l + k] * attention[j * l + k])
                .sum();
            worst = worst.max(dot);
        }
    }
    worst
}

/// Greedy oracle: pick sentences maximizing the ROUGE-1 recall gain against
/// the reference, up to `k` sentences or until no pick helps.
pub fn gold_extract_oracle(
    sentences: &[Vec<String>],
    reference: &[String],
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("oracle needs k >= 1".into()));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_recall = 0.0;
    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (j, sentence) in sentences.iter().enumerate() {
            if selected.contains(&j) {
                continue;
            }
            let mut trial = current.clone();
            trial.extend(sentence.iter().cloned());
            let recall = rouge_n(&trial, reference, 1).r;
            let gain = recall - current_recall;
            if gain > 0.0 && best.map_or(true, |(_, g)| gain > g) {
                best = Some((j, gain));
            }
        }
        let Some((j, gain)) = best else { break };
        selected.push(j);
        current.extend(sentences[j].iter().cloned());
        current_recall += gain;
    }
    selected.sort_unstable();
    Ok(selected)
}

// ── corpus-level report ─────────────────────────────────────────────

pub const COPY_RATIO_ORDERS: [usize; 4] = [5, 10, 15, 20];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DocumentScore {
    pub id: String,
    #[serde(flatten)]
    pub rouge: RougeScore,
    /// Keyed by n-gram order ("5", "10", "15", "20"); `null` when the
    /// summary is shorter than the order.
    pub copy_ratio: std::collections::BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusReport {
    pub per_document: Vec<DocumentScore>,
    pub corpus: DocumentScore,
}

/// Score one candidate/reference pair, with copy ratios against the source
/// article when provided.
pub fn score_document(
    id: &str,
    candidate: &[String],
    reference: &[String],
    article: Option<&[String]>,
) -> DocumentScore {
    let rouge = rouge_score(candidate, reference);
    let mut copy_ratio = std::collections::BTreeMap::new();
    for n in COPY_RATIO_ORDERS {
        let value = article.and_then(|a| ngram_copy_ratio(candidate, a, n));
        copy_ratio.insert(n.to_string(), value);
    }
    DocumentScore { id: id.to_string(), rouge, copy_ratio }
}

/// Average per-document scores into a corpus row (copy ratios averaged over
/// the documents where they are defined).
pub fn corpus_mean(scores: &[DocumentScore]) -> DocumentScore {
    let n = scores.len().max(1) as f64;
    let mut mean = DocumentScore {
        id: "corpus-mean".to_string(),
        rouge: RougeScore::default(),
        copy_ratio: std::collections::BTreeMap::new(),
    };
    let add = |acc: &mut RougeEntry, e: &RougeEntry| {
        acc.p += e.p / n;
        acc.r += e.r / n;
        acc.f += e.f / n;
    };
    for s in scores {
        add(&mut mean.rouge.rouge1, &s.rouge.rouge1);
        add(&mut mean.rouge.rouge2, &s.rouge.rouge2);
        add(&mut mean.rouge.rouge_l, &s.rouge.rouge_l);
    }
    for order in COPY_RATIO_ORDERS {
        let key = order.to_string();
        let defined: Vec<f64> =
            scores.iter().filter_map(|s| s.copy_ratio.get(&key).copied().flatten()).collect();
        let value = if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        };
        mean.copy_ratio.insert(key, value);
    }
    mean
}
