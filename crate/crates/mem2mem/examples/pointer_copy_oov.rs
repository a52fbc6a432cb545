//! The copy path in action: source words outside the vocabulary get
//! per-document extended ids, the copy distribution can put mass on them,
//! and decoded text resolves them back to the original words.
//!
//!     cargo run --example pointer_copy_oov

use mem2mem::config::RunConfig;
use mem2mem::decoder::{decode_step, init_state};
use mem2mem::graph::Graph;
use mem2mem::model::{bind, encode, Model};
use mem2mem::text::{self, Vocabulary, BOS};

fn main() -> mem2mem::Result<()> {
    let mut config = RunConfig::micro();
    config.seed = 9;
    // vocabulary deliberately excludes the entity names in the document
    let tokens = text::tokenize("the protein binds to the receptor in cells");
    let vocab = Vocabulary::build([tokens.as_slice()], 50)?;
    let model = Model::init(config, vocab.len());

    let raw = text::RawDocument {
        id: None,
        sections: vec![vec![
            "the protein klf4 binds to the receptor notch1 in cells".to_string(),
        ]],
        summary: vec!["klf4 binds notch1".to_string()],
    };
    let limits = model.config.limits();
    let doc = text::encode_document(&raw, "d0", &vocab, &limits)?;
    println!("vocabulary size: {}", vocab.len());
    println!("source OOV words with extended ids:");
    for (i, word) in doc.source_oov.iter().enumerate() {
        println!("  id {} -> {word:?}", vocab.len() + i);
    }
    let target = text::encode_target(&raw.summary, &vocab, &doc, &limits);
    println!("reference ids (extended where OOV): {:?}", target.ids);

    let batch = text::make_batches(&[doc.clone()], &[target], &[0], 1).remove(0);
    let item = batch.item(0);
    let mut g = Graph::new();
    let refs = bind(&mut g, &model);
    let enc = encode(&mut g, &refs, &model, &item)?;
    let mut state = init_state(&mut g, &model, &enc);
    let out = decode_step(&mut g, &refs, &model, &enc, &mut state, BOS as usize)?;

    let dist = g.data(out.dist);
    let z = g.data(out.switch)[0];
    println!("\nfirst decode step: switch z = {z:.4}");
    println!("generator mass {:.4}, copy mass {:.4}", z, 1.0 - z);
    for (i, word) in doc.source_oov.iter().enumerate() {
        let id = vocab.len() + i;
        println!(
            "  P({word:?}) = {:.6}  (pure copy mass: the generator cannot emit it)",
            dist[id]
        );
    }
    Ok(())
}
