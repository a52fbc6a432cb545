//! Training loop: per-document forward/backward on fresh graphs, gradient
//! averaging over the batch in a fixed order, Adam with global-norm
//! clipping. Epoch shuffles are derived from `(seed, epoch)` so a resumed
//! run walks the identical batch sequence.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder;
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{self, Model};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;
use crate::text::{make_batches, Batch, HierDocument, SummaryTarget};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub nll: f64,
    pub comp: f64,
    pub read: f64,
    pub total: f64,
    pub token_acc: f64,
    pub clamped: u64,
}

/// Deterministic shuffle of document indices for one epoch.
pub fn epoch_order(n_docs: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_docs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(epoch as u64 + 1)));
    order.shuffle(&mut rng);
    order
}

pub fn batches_per_epoch(n_docs: usize, batch_size: usize) -> u64 {
    (n_docs as u64 + batch_size as u64 - 1) / batch_size.max(1) as u64
}

/// One optimizer step over a batch: mean of per-document gradients, in
/// batch order. Returns the averaged metrics.
pub fn train_batch(
    model: &mut Model,
    adam: &mut AdamState,
    batch: &Batch,
    epoch: usize,
) -> Result<StepMetrics> {
    let mut grad_sum: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut nll = 0.0;
    let mut comp = 0.0;
    let mut read = 0.0;
    let mut total = 0.0;
    let mut correct = 0usize;
    let mut steps = 0usize;
    let mut clamped = 0u64;

    let b = batch.size as f64;
    for i in 0..batch.size {
        let item = batch.item(i);
        let mut g = Graph::new();
        let refs = model::bind(&mut g, model);
        let enc = model::encode(&mut g, &refs, model, &item)?;
        let out = decoder::teacher_forced_loss(&mut g, &refs, model, &enc, item.target)?;
        nll += out.nll / b;
        comp += out.comp / b;
        read += out.read / b;
        total += out.total_value / b;
        correct += out.correct;
        steps += out.steps;
        clamped += out.clamped as u64;
        let grads = g.grad(out.total)?;
        for (name, grad) in grads {
            match grad_sum.get_mut(&name) {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(grad.data()) {
                        *a += v / b;
                    }
                }
                None => {
                    let mut scaled = grad;
                    for v in scaled.data_mut() {
                        *v /= b;
                    }
                    grad_sum.insert(name, scaled);
                }
            }
        }
    }

    adam_step(&mut model.params, &grad_sum, adam, model.config.lr, model.config.clip_norm)?;
    Ok(StepMetrics {
        step: adam.step,
        epoch,
        nll,
        comp,
        read,
        total,
        token_acc: correct as f64 / steps.max(1) as f64,
        clamped,
    })
}

/// Train for `epochs`, starting from `adam.step` (resume-aware: completed
/// batches of the current epoch are skipped). `on_step` sees every metric
/// row, e.g. for logging or checkpointing.
pub fn train(
    model: &mut Model,
    adam: &mut AdamState,
    docs: &[HierDocument],
    targets: &[SummaryTarget],
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Vec<StepMetrics>> {
    let epochs = model.config.epochs;
    let batch_size = model.config.batch_size;
    let seed = model.config.seed;
    let per_epoch = batches_per_epoch(docs.len(), batch_size);
    let mut metrics = Vec::new();

    let start_epoch = (adam.step / per_epoch.max(1)) as usize;
    let mut skip = adam.step % per_epoch.max(1);

    for epoch in start_epoch..epochs {
        let order = epoch_order(docs.len(), seed, epoch);
        let batches = make_batches(docs, targets, &order, batch_size);
        for batch in batches.iter().skip(skip as usize) {
            let m = train_batch(model, adam, batch, epoch)?;
            on_step(&m);
            metrics.push(m);
        }
        skip = 0;
    }
    Ok(metrics)
}
