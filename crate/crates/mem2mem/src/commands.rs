//! Implementations behind the `mem2mem` binary's subcommands. The binary
//! itself only parses flags and calls into here, so everything is equally
//! usable from library code and tests.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::decoder;
use crate::error::{Error, Result};
use crate::eval;
use crate::graph::Graph;
use crate::model::{self, Model};
use crate::optim::AdamState;
use crate::text::{self, HierDocument, SummaryTarget, Vocabulary};
use crate::trainer;

// ── checkpoint glue ─────────────────────────────────────────────────

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    adam: &AdamState,
    vocab: &Vocabulary,
) -> Result<()> {
    let ckpt = Checkpoint {
        params: model.params.clone(),
        adam: adam.clone(),
        config: serde_json::to_value(&model.config)?,
        vocab: vocab.tokens().to_vec(),
    };
    checkpoint::save(path, &ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, AdamState, Vocabulary)> {
    let ckpt = checkpoint::load(path)?;
    let config: RunConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Checkpoint(format!("bad config echo: {e}")))?;
    let vocab = Vocabulary::from_tokens(ckpt.vocab);
    let model = Model::from_parts(config, vocab.len(), ckpt.params);
    Ok((model, ckpt.adam, vocab))
}

// ── shared corpus prep ──────────────────────────────────────────────

pub struct EncodedCorpus {
    pub raws: Vec<text::RawDocument>,
    pub docs: Vec<HierDocument>,
    pub targets: Vec<SummaryTarget>,
}

/// Encode a raw corpus against a vocabulary (documents that come out empty
/// after truncation are rejected, matching the encoder contract).
pub fn encode_corpus(
    raws: Vec<text::RawDocument>,
    vocab: &Vocabulary,
    config: &RunConfig,
) -> Result<EncodedCorpus> {
    let limits = config.limits();
    let mut docs = Vec::with_capacity(raws.len());
    let mut targets = Vec::with_capacity(raws.len());
    for (i, raw) in raws.iter().enumerate() {
        let doc = text::encode_document(raw, &format!("doc-{i}"), vocab, &limits)?;
        let target = text::encode_target(&raw.summary, vocab, &doc, &limits);
        docs.push(doc);
        targets.push(target);
    }
    Ok(EncodedCorpus { raws, docs, targets })
}

/// Vocabulary over source sections and abstracts, capped at
/// `config.vocab_max`.
pub fn build_corpus_vocab(raws: &[text::RawDocument], config: &RunConfig) -> Result<Vocabulary> {
    let mut streams: Vec<Vec<String>> = Vec::new();
    for raw in raws {
        for section in &raw.sections {
            for sentence in section {
                streams.push(text::tokenize(sentence));
            }
        }
        for sentence in &raw.summary {
            streams.push(text::tokenize(sentence));
        }
    }
    Vocabulary::build(streams.iter().map(|s| s.as_slice()), config.vocab_max)
}

fn single_item_batch(doc: &HierDocument, target: &SummaryTarget) -> text::Batch {
    make_single(doc.clone(), target.clone())
}

fn make_single(doc: HierDocument, target: SummaryTarget) -> text::Batch {
    text::make_batches(&[doc], &[target], &[0], 1).remove(0)
}

// ── synth ───────────────────────────────────────────────────────────

pub fn cmd_synth(
    out: &Path,
    n_docs: usize,
    n_sentences: usize,
    n_salient: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<()> {
    let docs = text::make_synthetic_corpus(seed, n_docs, n_sentences, n_salient, vocab_size)?;
    text::write_corpus(out, &docs)
}

// ── train ───────────────────────────────────────────────────────────

pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub vocab_path: PathBuf,
    pub metrics_path: PathBuf,
    pub metrics: Vec<trainer::StepMetrics>,
}

pub fn cmd_train(
    config: RunConfig,
    corpus_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    mut log: impl FnMut(&trainer::StepMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let raws = text::read_corpus(corpus_path)?;
    if raws.is_empty() {
        return Err(Error::InvalidInput(format!("empty corpus {corpus_path:?}")));
    }

    let (mut model, mut adam, vocab) = match resume {
        Some(path) => {
            let (model, adam, vocab) = load_checkpoint(path)?;
            (model, adam, vocab)
        }
        None => {
            let vocab = build_corpus_vocab(&raws, &config)?;
            (Model::init(config, vocab.len()), AdamState::new(), vocab)
        }
    };

    let corpus = encode_corpus(raws, &vocab, &model.config)?;
    let ckpt_path = out_dir.join("model.ckpt");
    let vocab_path = out_dir.join("vocab.txt");
    let metrics_path = out_dir.join("metrics.jsonl");

    let per_epoch = trainer::batches_per_epoch(corpus.docs.len(), model.config.batch_size);
    let mut metrics = Vec::new();
    let start_epoch = (adam.step / per_epoch.max(1)) as usize;
    let mut skip = adam.step % per_epoch.max(1);
    for epoch in start_epoch..model.config.epochs {
        let order = trainer::epoch_order(corpus.docs.len(), model.config.seed, epoch);
        let batches = text::make_batches(&corpus.docs, &corpus.targets, &order, model.config.batch_size);
        for batch in batches.iter().skip(skip as usize) {
            let m = trainer::train_batch(&mut model, &mut adam, batch, epoch)?;
            log(&m);
            metrics.push(m);
        }
        skip = 0;
        save_checkpoint(&ckpt_path, &model, &adam, &vocab)?;
    }
    if metrics.is_empty() {
        // no step ran (already-complete resume); still leave a checkpoint
        save_checkpoint(&ckpt_path, &model, &adam, &vocab)?;
    }
    vocab.save(&vocab_path)?;
    let mut w = BufWriter::new(File::create(&metrics_path)?);
    for m in &metrics {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    drop(w);
    Ok(TrainOutcome { checkpoint_path: ckpt_path, vocab_path, metrics_path, metrics })
}

// ── summarize ───────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryLine {
    pub id: String,
    pub summary: String,
    pub log_prob: f64,
    pub z_mean: f64,
}

/// Beam-decode every document of an encoded corpus.
pub fn summarize_corpus(
    model: &Model,
    vocab: &Vocabulary,
    corpus: &EncodedCorpus,
    beam: usize,
) -> Result<Vec<SummaryLine>> {
    let mut out = Vec::with_capacity(corpus.docs.len());
    for (doc, target) in corpus.docs.iter().zip(&corpus.targets) {
        let batch = single_item_batch(doc, target);
        let item = batch.item(0);
        let mut g = Graph::new();
        let refs = model::bind(&mut g, model);
        let enc = model::encode(&mut g, &refs, model, &item)?;
        let result = decoder::beam_search(
            &mut g,
            &refs,
            model,
            &enc,
            beam,
            model.config.max_summary_tokens,
        )?;
        out.push(SummaryLine {
            id: doc.id.clone(),
            summary: result.text(vocab, &doc.source_oov),
            log_prob: result.log_prob,
            z_mean: result.z_mean,
        });
    }
    Ok(out)
}

pub fn cmd_summarize(
    checkpoint_path: &Path,
    corpus_path: &Path,
    out_path: &Path,
    beam: Option<usize>,
) -> Result<Vec<SummaryLine>> {
    let (model, _, vocab) = load_checkpoint(checkpoint_path)?;
    let raws = text::read_corpus(corpus_path)?;
    let corpus = encode_corpus(raws, &vocab, &model.config)?;
    let beam = beam.unwrap_or(model.config.beam);
    let lines = summarize_corpus(&model, &vocab, &corpus, beam)?;
    let mut w = BufWriter::new(File::create(out_path)?);
    for line in &lines {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    Ok(lines)
}

// ── evaluate ────────────────────────────────────────────────────────

struct ReferenceEntry {
    reference: Vec<String>,
    article: Option<Vec<String>>,
}

/// References may be a corpus file (uses `abstract`, enabling copy ratios
/// against the source) or a summaries file (uses `summary`).
fn read_references(path: &Path) -> Result<BTreeMap<String, ReferenceEntry>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("references line {}: {e}", i + 1)))?;
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("doc-{i}"));
        if let Some(sentences) = value.get("abstract").and_then(|v| v.as_array()) {
            let reference: Vec<String> = sentences
                .iter()
                .filter_map(|s| s.as_str())
                .flat_map(text::tokenize)
                .collect();
            let article = value.get("sections").and_then(|v| v.as_array()).map(|sections| {
                sections
                    .iter()
                    .filter_map(|s| s.as_array())
                    .flatten()
                    .filter_map(|s| s.as_str())
                    .flat_map(text::tokenize)
                    .collect()
            });
            out.insert(id, ReferenceEntry { reference, article });
        } else if let Some(summary) = value.get("summary").and_then(|v| v.as_str()) {
            out.insert(
                id,
                ReferenceEntry { reference: text::tokenize(summary), article: None },
            );
        } else {
            return Err(Error::InvalidInput(format!(
                "references line {}: neither `abstract` nor `summary` present",
                i + 1
            )));
        }
    }
    Ok(out)
}

fn read_summaries(path: &Path) -> Result<Vec<SummaryLine>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SummaryLine = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("summaries line {}: {e}", i + 1)))?;
        out.push(parsed);
    }
    Ok(out)
}

pub fn cmd_evaluate(
    summaries_path: &Path,
    references_path: &Path,
    out_path: Option<&Path>,
) -> Result<eval::CorpusReport> {
    let summaries = read_summaries(summaries_path)?;
    let references = read_references(references_path)?;

    let missing: Vec<String> = summaries
        .iter()
        .filter(|s| !references.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IdMismatch(missing));
    }

    let mut per_document = Vec::with_capacity(summaries.len());
    for s in &summaries {
        let entry = &references[&s.id];
        let candidate = text::tokenize(&s.summary);
        per_document.push(eval::score_document(
            &s.id,
            &candidate,
            &entry.reference,
            entry.article.as_deref(),
        ));
    }
    let corpus = eval::corpus_mean(&per_document);
    let report = eval::CorpusReport { per_document, corpus };
    if let Some(path) = out_path {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n")?;
    }
    Ok(report)
}

// ── inspect ─────────────────────────────────────────────────────────

pub struct Inspection {
    pub attention: Vec<f64>,
    pub heads: usize,
    pub sentences: usize,
    /// Per-step read weights, one row per head after transposition.
    pub psi_by_head: Vec<Vec<f64>>,
    pub extraction: eval::ExtractionReport,
    pub max_offdiag: f64,
    pub attention_path: PathBuf,
    pub psi_path: PathBuf,
    pub extraction_path: PathBuf,
}

pub fn cmd_inspect(
    checkpoint_path: &Path,
    corpus_path: &Path,
    doc_index: usize,
    out_dir: &Path,
) -> Result<Inspection> {
    let (model, _, vocab) = load_checkpoint(checkpoint_path)?;
    if !model.config.ablation.encoder_mem {
        return Err(Error::Config(
            "checkpoint was trained without an encoder memory; nothing to inspect".into(),
        ));
    }
    let raws = text::read_corpus(corpus_path)?;
    if doc_index >= raws.len() {
        return Err(Error::InvalidInput(format!(
            "document index {doc_index} out of range ({} documents)",
            raws.len()
        )));
    }
    let corpus = encode_corpus(raws, &vocab, &model.config)?;
    let doc = &corpus.docs[doc_index];
    let batch = single_item_batch(doc, &corpus.targets[doc_index]);
    let item = batch.item(0);

    let mut g = Graph::new();
    let refs = model::bind(&mut g, &model);
    let enc = model::encode(&mut g, &refs, &model, &item)?;
    let bank = enc.bank.as_ref().expect("encoder_mem checked above");
    let attention = g.data(bank.attention).to_vec();
    let heads = model.config.heads;
    let sentences = doc.num_sentences();

    let (_, psi_steps) =
        decoder::greedy_decode(&mut g, &refs, &model, &enc, model.config.max_summary_tokens)?;
    let steps = psi_steps.len();
    let mut psi_by_head = vec![vec![0.0; steps]; heads];
    for (t, row) in psi_steps.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            psi_by_head[k][t] = *v;
        }
    }

    let extraction = eval::extract_by_memory(&attention, heads, doc);
    let max_offdiag = eval::max_offdiag_head_overlap(&attention, heads);

    std::fs::create_dir_all(out_dir)?;
    let attention_path = out_dir.join("write_attention.csv");
    let psi_path = out_dir.join("read_attention.csv");
    let extraction_path = out_dir.join("extraction.json");

    {
        let mut w = BufWriter::new(File::create(&attention_path)?);
        let header: Vec<String> = (0..sentences).map(|j| format!("s{j}")).collect();
        writeln!(w, "head,{}", header.join(","))?;
        for head in 0..heads {
            let row: Vec<String> = attention[head * sentences..(head + 1) * sentences]
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            writeln!(w, "{head},{}", row.join(","))?;
        }
    }
    {
        let mut w = BufWriter::new(File::create(&psi_path)?);
        let header: Vec<String> = (0..steps).map(|t| format!("t{t}")).collect();
        writeln!(w, "head,{}", header.join(","))?;
        for (head, row) in psi_by_head.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{head},{}", cells.join(","))?;
        }
    }
    {
        let mut w = BufWriter::new(File::create(&extraction_path)?);
        serde_json::to_writer_pretty(&mut w, &extraction)?;
        w.write_all(b"\n")?;
    }

    Ok(Inspection {
        attention,
        heads,
        sentences,
        psi_by_head,
        extraction,
        max_offdiag,
        attention_path,
        psi_path,
        extraction_path,
    })
}
