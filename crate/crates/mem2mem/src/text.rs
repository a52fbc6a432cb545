//! Tokenization, vocabulary, document hierarchy and the synthetic corpus.
//!
//! Corpus files are UTF-8 JSON-lines, one document per line:
//! `{"id": "...", "sections": [["sentence", ...], ...], "abstract": ["sentence", ...]}`
//! (`id` optional; line order is used when absent). Vocabulary files are one
//! token per line in rank order, specials first.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Lowercase, split on whitespace, and peel punctuation into single-char
/// tokens. Corpus files are expected pre-tokenized; this keeps re-tokenizing
/// them a no-op.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() || ch == '\'' || ch == '-' || ch == '_' {
            current.push(ch);
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

// ── vocabulary ──────────────────────────────────────────────────────

pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Most-frequent tokens kept, ties broken by first occurrence. Specials
    /// always occupy ids 0..4.
    pub fn build<'a, I>(token_streams: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if max_size < SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocabulary max_size {max_size} cannot hold the {} specials",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
        let mut order = 0usize;
        for stream in token_streams {
            for token in stream {
                let entry = counts.entry(token).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, (u64, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for (token, _) in ranked.into_iter().take(max_size - SPECIALS.len()) {
            id_to_token.push(token.to_string());
        }
        Ok(Self::from_tokens(id_to_token))
    }

    /// Rebuild from a rank-ordered token list (vocab file or checkpoint).
    pub fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id =
            id_to_token.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { token_to_id, id_to_token }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Map an id back to text, resolving per-document extended ids through
    /// `source_oov`.
    pub fn token_extended<'a>(&'a self, id: u32, source_oov: &'a [String]) -> Option<&'a str> {
        if (id as usize) < self.len() {
            self.token(id)
        } else {
            source_oov.get(id as usize - self.len()).map(|s| s.as_str())
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for token in &self.id_to_token {
            writeln!(w, "{token}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut tokens = Vec::new();
        for line in r.lines() {
            tokens.push(line?);
        }
        Ok(Self::from_tokens(tokens))
    }
}

// ── documents ───────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RawDocument {
    #[serde(default)]
    pub id: Option<String>,
    pub sections: Vec<Vec<String>>,
    #[serde(rename = "abstract")]
    pub summary: Vec<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TruncationLimits {
    pub max_sections: usize,
    pub max_section_tokens: usize,
    pub max_summary_tokens: usize,
}

impl Default for TruncationLimits {
    fn default() -> Self {
        TruncationLimits { max_sections: 4, max_section_tokens: 500, max_summary_tokens: 200 }
    }
}

/// A document after truncation and id assignment: sentences grouped into
/// sections, generator-side ids (OOV mapped to UNK) and copy-side ids
/// (OOV assigned per-document extended ids starting at `|vocab|`).
#[derive(Clone, Debug)]
pub struct HierDocument {
    pub id: String,
    /// Tokens per sentence, post-truncation.
    pub raw_sentences: Vec<Vec<String>>,
    pub section_of_sentence: Vec<usize>,
    pub gen_ids: Vec<Vec<u32>>,
    pub copy_ids: Vec<Vec<u32>>,
    /// Flattened token index -> sentence index; total and non-decreasing.
    pub sentence_of_token: Vec<usize>,
    pub source_oov: Vec<String>,
}

impl HierDocument {
    pub fn num_sentences(&self) -> usize {
        self.raw_sentences.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentence_of_token.len()
    }

    pub fn sentence_text(&self, j: usize) -> String {
        self.raw_sentences[j].join(" ")
    }

    pub fn flat_tokens(&self) -> Vec<String> {
        self.raw_sentences.iter().flatten().cloned().collect()
    }
}

/// Truncate to the limits and assign ids. Sections beyond `max_sections` are
/// dropped; within a section, sentences are kept in order until one would
/// push the token count past `max_section_tokens` (the straddler is dropped
/// whole, ending the section).
pub fn encode_document(
    raw: &RawDocument,
    fallback_id: &str,
    vocab: &Vocabulary,
    limits: &TruncationLimits,
) -> Result<HierDocument> {
    let mut doc = HierDocument {
        id: raw.id.clone().unwrap_or_else(|| fallback_id.to_string()),
        raw_sentences: Vec::new(),
        section_of_sentence: Vec::new(),
        gen_ids: Vec::new(),
        copy_ids: Vec::new(),
        sentence_of_token: Vec::new(),
        source_oov: Vec::new(),
    };
    let mut oov_index: HashMap<String, u32> = HashMap::new();

    for (section_idx, section) in raw.sections.iter().take(limits.max_sections).enumerate() {
        let mut section_tokens = 0usize;
        for sentence in section {
            let tokens = tokenize(sentence);
            if tokens.is_empty() {
                continue;
            }
            if section_tokens + tokens.len() > limits.max_section_tokens {
                break; // straddling sentence dropped whole, section ends here
            }
            section_tokens += tokens.len();
            let sentence_idx = doc.raw_sentences.len();
            let mut gen = Vec::with_capacity(tokens.len());
            let mut copy = Vec::with_capacity(tokens.len());
            for token in &tokens {
                doc.sentence_of_token.push(sentence_idx);
                match vocab.id(token) {
                    Some(id) => {
                        gen.push(id);
                        copy.push(id);
                    }
                    None => {
                        gen.push(UNK);
                        let next = vocab.len() as u32 + doc.source_oov.len() as u32;
                        let ext = *oov_index.entry(token.clone()).or_insert_with(|| {
                            doc.source_oov.push(token.clone());
                            next
                        });
                        copy.push(ext);
                    }
                }
            }
            doc.raw_sentences.push(tokens);
            doc.section_of_sentence.push(section_idx);
            doc.gen_ids.push(gen);
            doc.copy_ids.push(copy);
        }
    }

    if doc.raw_sentences.is_empty() {
        return Err(Error::InvalidInput(format!(
            "document `{}` is empty after truncation",
            doc.id
        )));
    }
    Ok(doc)
}

/// Reference summary as an id sequence. Words present in the source but not
/// the vocabulary get the document's extended id; other unknowns become UNK.
/// Always EOS-terminated, never longer than `max_summary_tokens`.
#[derive(Clone, Debug)]
pub struct SummaryTarget {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
}

pub fn encode_target(
    sentences: &[String],
    vocab: &Vocabulary,
    doc: &HierDocument,
    limits: &TruncationLimits,
) -> SummaryTarget {
    let oov_of: HashMap<&str, u32> = doc
        .source_oov
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), vocab.len() as u32 + i as u32))
        .collect();
    let mut ids = Vec::new();
    let mut tokens = Vec::new();
    'outer: for sentence in sentences {
        for token in tokenize(sentence) {
            if ids.len() >= limits.max_summary_tokens - 1 {
                break 'outer;
            }
            let id = vocab
                .id(&token)
                .or_else(|| oov_of.get(token.as_str()).copied())
                .unwrap_or(UNK);
            ids.push(id);
            tokens.push(token);
        }
    }
    ids.push(EOS);
    SummaryTarget { ids, tokens }
}

// ── corpus io ───────────────────────────────────────────────────────

pub fn read_corpus(path: &Path) -> Result<Vec<RawDocument>> {
    let r = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: RawDocument = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidInput(format!("corpus line {}: {e}", i + 1))
        })?;
        if doc.id.is_none() {
            doc.id = Some(format!("doc-{i}"));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

// ── synthetic corpus ────────────────────────────────────────────────

pub const MARKER_TOKEN: &str = "salmark";

/// Desk-scale corpus with planted extraction structure: each document has
/// `n_sentences` filler sentences, `n_salient` of which carry the marker
/// token, and the reference summary is exactly the salient sentences in
/// document order. Deterministic per seed.
pub fn make_synthetic_corpus(
    seed: u64,
    n_docs: usize,
    n_sentences: usize,
    n_salient: usize,
    vocab_size: usize,
) -> Result<Vec<RawDocument>> {
    if n_salient > n_sentences {
        return Err(Error::Config(format!(
            "n_salient {n_salient} exceeds n_sentences {n_sentences}"
        )));
    }
    let reserved = SPECIALS.len() + 1; // specials + marker
    if vocab_size <= reserved {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} leaves no room for filler tokens ({reserved} reserved)"
        )));
    }
    let n_filler = vocab_size - reserved;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let mut salient: Vec<usize> = rand::seq::index::sample(&mut rng, n_sentences, n_salient)
            .into_iter()
            .collect();
        salient.sort_unstable();
        let mut sentences = Vec::with_capacity(n_sentences);
        for j in 0..n_sentences {
            let len = rng.gen_range(4..=8usize);
            let mut tokens: Vec<String> =
                (0..len).map(|_| format!("w{}", rng.gen_range(0..n_filler))).collect();
            if salient.binary_search(&j).is_ok() {
                let pos = rng.gen_range(0..=tokens.len());
                tokens.insert(pos, MARKER_TOKEN.to_string());
            }
            sentences.push(tokens.join(" "));
        }
        let summary: Vec<String> = salient.iter().map(|&j| sentences[j].clone()).collect();
        docs.push(RawDocument {
            id: Some(format!("doc-{d}")),
            sections: vec![sentences],
            summary,
        });
    }
    Ok(docs)
}

// ── batching ────────────────────────────────────────────────────────

/// PAD-filled rectangles over a group of documents, with masks that exclude
/// PAD from every attention softmax downstream.
pub struct Batch {
    pub size: usize,
    pub l_max: usize,
    pub n_max: usize,
    /// `[B, L_max, N_max]`, generator-side ids.
    pub gen_ids: Vec<u32>,
    /// `[B, L_max, N_max]`, copy-side (extended) ids.
    pub copy_ids: Vec<u32>,
    /// `[B, L_max, N_max]`, 1.0 on real tokens.
    pub token_mask: Vec<f64>,
    /// `[B, L_max]`, 1.0 on real sentences.
    pub sentence_mask: Vec<f64>,
    pub doc_indices: Vec<usize>,
    pub targets: Vec<Vec<u32>>,
    pub n_oov: Vec<usize>,
    pub sentence_maps: Vec<Vec<usize>>,
}

/// Borrowed view of one document inside a batch.
pub struct BatchItem<'a> {
    pub l_max: usize,
    pub n_max: usize,
    pub gen_ids: &'a [u32],
    pub copy_ids: &'a [u32],
    pub token_mask: &'a [f64],
    pub sentence_mask: &'a [f64],
    pub target: &'a [u32],
    pub n_oov: usize,
    pub doc_index: usize,
}

impl Batch {
    pub fn item(&self, i: usize) -> BatchItem<'_> {
        let grid = self.l_max * self.n_max;
        BatchItem {
            l_max: self.l_max,
            n_max: self.n_max,
            gen_ids: &self.gen_ids[i * grid..(i + 1) * grid],
            copy_ids: &self.copy_ids[i * grid..(i + 1) * grid],
            token_mask: &self.token_mask[i * grid..(i + 1) * grid],
            sentence_mask: &self.sentence_mask[i * self.l_max..(i + 1) * self.l_max],
            target: &self.targets[i],
            n_oov: self.n_oov[i],
            doc_index: self.doc_indices[i],
        }
    }
}

fn build_batch(docs: &[&HierDocument], targets: &[&SummaryTarget], indices: &[usize]) -> Batch {
    let l_max = docs.iter().map(|d| d.num_sentences()).max().unwrap_or(0);
    let n_max = docs
        .iter()
        .flat_map(|d| d.raw_sentences.iter().map(|s| s.len()))
        .max()
        .unwrap_or(0);
    let b = docs.len();
    let grid = l_max * n_max;
    let mut batch = Batch {
        size: b,
        l_max,
        n_max,
        gen_ids: vec![PAD; b * grid],
        copy_ids: vec![PAD; b * grid],
        token_mask: vec![0.0; b * grid],
        sentence_mask: vec![0.0; b * l_max],
        doc_indices: indices.to_vec(),
        targets: targets.iter().map(|t| t.ids.clone()).collect(),
        n_oov: docs.iter().map(|d| d.source_oov.len()).collect(),
        sentence_maps: docs.iter().map(|d| d.sentence_of_token.clone()).collect(),
    };
    for (bi, doc) in docs.iter().enumerate() {
        for (j, (gen, copy)) in doc.gen_ids.iter().zip(&doc.copy_ids).enumerate() {
            batch.sentence_mask[bi * l_max + j] = 1.0;
            for (t, (&g, &c)) in gen.iter().zip(copy).enumerate() {
                let at = bi * grid + j * n_max + t;
                batch.gen_ids[at] = g;
                batch.copy_ids[at] = c;
                batch.token_mask[at] = 1.0;
            }
        }
    }
    batch
}

/// Group documents into batches of `batch_size` in the given order.
pub fn make_batches(
    docs: &[HierDocument],
    targets: &[SummaryTarget],
    order: &[usize],
    batch_size: usize,
) -> Vec<Batch> {
    assert_eq!(docs.len(), targets.len());
    order
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let d: Vec<&HierDocument> = chunk.iter().map(|&i| &docs[i]).collect();
            let t: Vec<&SummaryTarget> = chunk.iter().map(|&i| &targets[i]).collect();
            build_batch(&d, &t, chunk)
        })
        .collect()
}
