//! End-to-end on synthetic data: generate a marked-salient corpus, train
//! the full model at desk scale, then beam-decode the test split and score
//! it with ROUGE.
//!
//!     cargo run --release --example train_synthetic

use mem2mem::commands::{build_corpus_vocab, encode_corpus, summarize_corpus};
use mem2mem::config::RunConfig;
use mem2mem::eval;
use mem2mem::model::Model;
use mem2mem::optim::AdamState;
use mem2mem::text::{self, tokenize};
use mem2mem::trainer;

fn main() -> mem2mem::Result<()> {
    let mut config = RunConfig::desk();
    config.epochs = 8;
    config.lr = 0.01;
    config.seed = 3;

    let train_raws = text::make_synthetic_corpus(5, 120, 10, 3, 40)?;
    let test_raws = text::make_synthetic_corpus(99, 20, 10, 3, 40)?;
    let vocab = build_corpus_vocab(&train_raws, &config)?;
    let train = encode_corpus(train_raws, &vocab, &config)?;
    let test = encode_corpus(test_raws.clone(), &vocab, &config)?;

    let mut model = Model::init(config, vocab.len());
    let mut adam = AdamState::new();
    println!("training on {} documents ({} parameters)...", train.docs.len(), model.num_parameters());
    trainer::train(&mut model, &mut adam, &train.docs, &train.targets, |m| {
        if m.step % 8 == 0 {
            println!(
                "  step {:3} epoch {:2}  nll {:.4}  comp {:.4}  read {:.4}  acc {:.3}",
                m.step, m.epoch, m.nll, m.comp, m.read, m.token_acc
            );
        }
    })?;

    println!("\ndecoding {} test documents with beam {}...", test.docs.len(), model.config.beam);
    let summaries = summarize_corpus(&model, &vocab, &test, model.config.beam)?;

    let mut scores = Vec::new();
    for (line, raw) in summaries.iter().zip(&test_raws) {
        let reference: Vec<String> = raw.summary.iter().flat_map(|s| tokenize(s)).collect();
        let candidate = tokenize(&line.summary);
        scores.push(eval::score_document(&line.id, &candidate, &reference, None));
    }
    let mean = eval::corpus_mean(&scores);
    println!("\nfirst decode: {}", summaries[0].summary);
    println!("reference:    {}", test_raws[0].summary.join(" "));
    println!(
        "\ncorpus mean  rouge1 {:.4}  rouge2 {:.4}  rougeL {:.4}",
        mean.rouge.rouge1.f, mean.rouge.rouge2.f, mean.rouge.rouge_l.f
    );
    Ok(())
}
