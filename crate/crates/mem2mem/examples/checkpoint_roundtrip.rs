//! Checkpointing: train a few steps, save, resume, and show the continued
//! run is bit-identical to an uninterrupted one.
//!
//!     cargo run --release --example checkpoint_roundtrip

use mem2mem::commands::{build_corpus_vocab, encode_corpus, load_checkpoint, save_checkpoint};
use mem2mem::config::RunConfig;
use mem2mem::model::Model;
use mem2mem::optim::AdamState;
use mem2mem::text;
use mem2mem::trainer;

fn main() -> mem2mem::Result<()> {
    let mut config = RunConfig::desk();
    config.epochs = 4;
    config.seed = 8;
    config.batch_size = 8;

    let raws = text::make_synthetic_corpus(13, 32, 6, 2, 30)?;
    let vocab = build_corpus_vocab(&raws, &config)?;
    let corpus = encode_corpus(raws, &vocab, &config)?;

    // uninterrupted run
    let mut m_full = Model::init(config.clone(), vocab.len());
    let mut a_full = AdamState::new();
    let full = trainer::train(&mut m_full, &mut a_full, &corpus.docs, &corpus.targets, |_| {})?;

    // interrupted run: stop after epoch 1, save, reload, continue
    let mut cfg_half = config.clone();
    cfg_half.epochs = 2;
    let mut m_half = Model::init(cfg_half, vocab.len());
    let mut a_half = AdamState::new();
    trainer::train(&mut m_half, &mut a_half, &corpus.docs, &corpus.targets, |_| {})?;

    let dir = std::env::temp_dir().join("mem2mem-roundtrip-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&path, &m_half, &a_half, &vocab)?;
    let (mut m_resumed, mut a_resumed, _) = load_checkpoint(&path)?;
    m_resumed.config.epochs = config.epochs; // finish the schedule
    let resumed =
        trainer::train(&mut m_resumed, &mut a_resumed, &corpus.docs, &corpus.targets, |_| {})?;

    let steps_before = full.len() - resumed.len();
    println!("uninterrupted: {} steps; resumed run covers the last {}", full.len(), resumed.len());
    let mut all_equal = true;
    for (a, b) in full[steps_before..].iter().zip(&resumed) {
        if a.total.to_bits() != b.total.to_bits() {
            all_equal = false;
            println!("step {}: {} != {}", a.step, a.total, b.total);
        }
    }
    println!(
        "resumed losses bit-identical to the uninterrupted run: {}",
        if all_equal { "yes" } else { "NO" }
    );
    Ok(())
}
