//! Decoding strategies side by side on a toy model: greedy, widths 2 and 4,
//! and exhaustive enumeration as the ground truth for the best
//! length-normalized sequence.
//!
//!     cargo run --example beam_vs_greedy

use mem2mem::config::RunConfig;
use mem2mem::decoder::{beam_search, force_score, greedy_decode, input_gen_id, StepState};
use mem2mem::graph::Graph;
use mem2mem::model::{bind, encode, Encoded, Model, ModelRefs};
use mem2mem::text::{self, Vocabulary, BOS, EOS};

/// Every sequence up to `max_len` (stopping at EOS), best first by
/// length-normalized log-probability.
fn enumerate_best(
    g: &mut Graph,
    refs: &ModelRefs,
    model: &Model,
    enc: &Encoded,
    max_len: usize,
) -> (Vec<u32>, f64) {
    fn walk(
        g: &mut Graph,
        refs: &ModelRefs,
        model: &Model,
        enc: &Encoded,
        state: StepState,
        prefix: &mut Vec<u32>,
        logp: f64,
        max_len: usize,
        best: &mut Option<(f64, Vec<u32>)>,
    ) {
        let done = prefix.last() == Some(&EOS) || prefix.len() == max_len;
        if !prefix.is_empty() && done {
            let score = logp / prefix.len() as f64;
            let better = match best {
                None => true,
                Some((s, tokens)) => {
                    score > *s || (score == *s && prefix < tokens)
                }
            };
            if better {
                *best = Some((score, prefix.clone()));
            }
            return;
        }
        let input = prefix
            .last()
            .map(|&t| input_gen_id(t, model.vocab_size))
            .unwrap_or(BOS as usize);
        let mut next = state;
        let out =
            mem2mem::decoder::decode_step(g, refs, model, enc, &mut next, input).unwrap();
        let dist = g.data(out.dist).to_vec();
        for (tok, p) in dist.iter().enumerate() {
            prefix.push(tok as u32);
            walk(g, refs, model, enc, next, prefix, logp + p.ln(), max_len, best);
            prefix.pop();
        }
    }
    let mut best = None;
    let state = mem2mem::decoder::init_state(g, model, enc);
    walk(g, refs, model, enc, state, &mut Vec::new(), 0.0, max_len, &mut best);
    let (score, tokens) = best.expect("nonempty search space");
    (tokens, score)
}

fn main() -> mem2mem::Result<()> {
    let mut config = RunConfig::micro();
    config.seed = 12;
    let tokens = text::tokenize("aa bb");
    let vocab = Vocabulary::build([tokens.as_slice()], 50)?;
    let mut model = Model::init(config, vocab.len());
    // sharpen the output layer so the toy distributions are peaked
    for name in ["out.w", "out.b"] {
        for v in model.params.get_mut(name).unwrap().data_mut() {
            *v *= 25.0;
        }
    }

    let raw = text::RawDocument {
        id: None,
        sections: vec![vec!["aa bb".to_string(), "bb aa".to_string()]],
        summary: vec!["aa".to_string()],
    };
    let limits = model.config.limits();
    let doc = text::encode_document(&raw, "d0", &vocab, &limits)?;
    let target = text::encode_target(&raw.summary, &vocab, &doc, &limits);
    let batch = text::make_batches(&[doc], &[target], &[0], 1).remove(0);
    let item = batch.item(0);

    let mut g = Graph::new();
    let refs = bind(&mut g, &model);
    let enc = encode(&mut g, &refs, &model, &item)?;

    let max_len = 4;
    let (greedy, _) = greedy_decode(&mut g, &refs, &model, &enc, max_len)?;
    println!("greedy:       {:?}  logp {:.4}", greedy.tokens, greedy.log_prob);
    for width in [1, 2, 4] {
        let out = beam_search(&mut g, &refs, &model, &enc, width, max_len)?;
        println!("beam w={width}:     {:?}  logp {:.4}  norm {:.4}", out.tokens, out.log_prob, out.score());
    }
    let (best, score) = enumerate_best(&mut g, &refs, &model, &enc, max_len);
    let rescored = force_score(&mut g, &refs, &model, &enc, &best)?;
    println!("enumeration:  {best:?}  logp {rescored:.4}  norm {score:.4}");
    Ok(())
}
