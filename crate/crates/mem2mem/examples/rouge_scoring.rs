//! ROUGE-1/2/L and n-gram copy ratios on small worked cases.
//!
//!     cargo run --example rouge_scoring

use mem2mem::eval::{ngram_copy_ratio, rouge_score};
use mem2mem::text::tokenize;

fn main() {
    let reference = tokenize("the memory bank stores one sentence per head");
    let candidates = [
        "the memory bank stores one sentence per head",
        "the memory bank keeps a sentence for each head",
        "entirely unrelated text about something else",
    ];
    for cand in candidates {
        let c = tokenize(cand);
        let s = rouge_score(&c, &reference);
        println!(
            "r1 {:.3}  r2 {:.3}  rL {:.3}  <- {cand:?}",
            s.rouge1.f, s.rouge2.f, s.rouge_l.f
        );
    }

    let article = tokenize(
        "the encoder reads the document sentence by sentence and the decoder \
         writes a summary while reading from its memory bank",
    );
    println!("\ncopy ratios against the article:");
    for summary in [
        "the decoder writes a summary while reading",
        "a summary is produced from compressed sentence slots",
    ] {
        let s = tokenize(summary);
        let ratios: Vec<String> = [2usize, 3, 5]
            .iter()
            .map(|&n| match ngram_copy_ratio(&s, &article, n) {
                Some(v) => format!("{n}-gram {v:.0}%"),
                None => format!("{n}-gram n/a"),
            })
            .collect();
        println!("  {} <- {summary:?}", ratios.join("  "));
    }
}
