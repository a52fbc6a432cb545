//! Look inside the memory: train briefly with and without the diversity
//! penalty, then compare the write-attention matrix A, its head overlap
//! (largest off-diagonal of A A^T), and the implicit extraction.
//!
//!     cargo run --release --example memory_inspection

use mem2mem::commands::{build_corpus_vocab, encode_corpus};
use mem2mem::config::RunConfig;
use mem2mem::eval::{extract_by_memory, max_offdiag_head_overlap};
use mem2mem::graph::Graph;
use mem2mem::model::{bind, encode, Model};
use mem2mem::optim::AdamState;
use mem2mem::text::{self, MARKER_TOKEN};
use mem2mem::trainer;

fn main() -> mem2mem::Result<()> {
    let mut config = RunConfig::desk();
    config.epochs = 6;
    config.lr = 0.01;
    config.seed = 4;

    let raws = text::make_synthetic_corpus(21, 100, 10, 3, 40)?;
    let vocab = build_corpus_vocab(&raws, &config)?;

    for (label, lambda_comp) in [("with diversity penalty", 1e-4), ("without", 0.0)] {
        let mut cfg = config.clone();
        cfg.lambda_comp = lambda_comp;
        let corpus = encode_corpus(raws.clone(), &vocab, &cfg)?;
        let mut model = Model::init(cfg, vocab.len());
        let mut adam = AdamState::new();
        trainer::train(&mut model, &mut adam, &corpus.docs, &corpus.targets, |_| {})?;

        let doc = &corpus.docs[0];
        let batch = text::make_batches(
            &corpus.docs[..1].to_vec(),
            &corpus.targets[..1].to_vec(),
            &[0],
            1,
        )
        .remove(0);
        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0))?;
        let bank = enc.bank.as_ref().expect("full model builds a bank");
        let attention = g.data(bank.attention).to_vec();
        let heads = model.config.heads;
        let l = doc.num_sentences();

        println!("== {label} (lambda_comp = {lambda_comp})");
        for head in 0..heads {
            let row: Vec<String> = attention[head * l..(head + 1) * l]
                .iter()
                .map(|v| format!("{v:.2}"))
                .collect();
            println!("  head {head}: [{}]", row.join(" "));
        }
        println!("  max off-diagonal of A A^T: {:.4}", max_offdiag_head_overlap(&attention, heads));
        let marked: Vec<usize> = doc
            .raw_sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.iter().any(|t| t == MARKER_TOKEN))
            .map(|(j, _)| j)
            .collect();
        let report = extract_by_memory(&attention, heads, doc);
        println!("  marked sentences:    {marked:?}");
        println!("  extracted by memory: {:?}\n", report.sentence_indices);
    }
    Ok(())
}
