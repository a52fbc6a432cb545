//! Verify the analytic gradients of the full composite loss against
//! central finite differences on a micro configuration.
//!
//!     cargo run --release --example gradient_check

use mem2mem::config::RunConfig;
use mem2mem::decoder::teacher_forced_loss;
use mem2mem::gradcheck;
use mem2mem::graph::Graph;
use mem2mem::model::{bind, encode, Model};
use mem2mem::text::{self, Vocabulary};

fn main() -> mem2mem::Result<()> {
    let mut config = RunConfig::micro();
    config.seed = 42;
    let tokens = text::tokenize("aa bb cc dd ee ff gg hh");
    let vocab = Vocabulary::build([tokens.as_slice()], config.vocab_max)?;
    let model = Model::init(config, vocab.len());

    let raw = text::RawDocument {
        id: None,
        sections: vec![vec!["aa bb cc dd".to_string(), "ee ff gg".to_string()]],
        summary: vec!["aa ee".to_string()],
    };
    let limits = model.config.limits();
    let doc = text::encode_document(&raw, "d0", &vocab, &limits)?;
    let target = text::encode_target(&raw.summary, &vocab, &doc, &limits);
    let batch = text::make_batches(&[doc], &[target], &[0], 1).remove(0);
    let item = batch.item(0);

    println!("micro model: {} parameters in {} tensors", model.num_parameters(), model.params.len());

    let mut g = Graph::new();
    let refs = bind(&mut g, &model);
    let enc = encode(&mut g, &refs, &model, &item)?;
    let out = teacher_forced_loss(&mut g, &refs, &model, &enc, item.target)?;
    println!("loss = {:.6} (nll {:.6} comp {:.6} read {:.6})", out.total_value, out.nll, out.comp, out.read);
    let analytic = g.grad(out.total)?;

    let numeric = gradcheck::central_difference(&model.params, 1e-5, |p| {
        let probe = Model::from_parts(model.config.clone(), model.vocab_size, p.clone());
        let mut g = Graph::new();
        let refs = bind(&mut g, &probe);
        let enc = encode(&mut g, &refs, &probe, &item).unwrap();
        let out = teacher_forced_loss(&mut g, &refs, &probe, &enc, item.target).unwrap();
        out.total_value
    });

    let report = gradcheck::compare(&analytic, &numeric, 1e-3, 1e-6);
    println!(
        "checked {} components: worst relative error {:.3e} at {}",
        report.components, report.worst_rel, report.worst_at
    );
    println!("{}", if report.ok() { "gradients agree" } else { "GRADIENT MISMATCH" });
    Ok(())
}
