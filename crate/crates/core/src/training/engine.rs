use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{crossentropy, one_hot};
use crate::nn::{Adam, ModelGraph, Tensor};
use crate::rng::stream_rng;

const INFER_CHUNK: usize = 256;

/// Mini-batches balanced over classes: consecutive slots cycle through the
/// classes from a random start, each slot drawing a random member.
pub(crate) struct Sampler {
    rng: ChaCha8Rng,
    by_class: Vec<Vec<usize>>,
}

impl Sampler {
    pub fn new(labels: &[usize], seed: u64, stream: u64) -> Self {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut by_class = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class.retain(|c| !c.is_empty());
        Self { rng: stream_rng(seed, stream), by_class }
    }

    pub fn batch(&mut self, size: usize) -> Vec<usize> {
        let k = self.by_class.len();
        let start = self.rng.gen_range(0..k);
        (0..size)
            .map(|i| {
                let members = &self.by_class[(start + i) % k];
                members[self.rng.gen_range(0..members.len())]
            })
            .collect()
    }
}

/// Half the batch from `positive`, half uniformly from the rest.
pub(crate) struct BinarySampler {
    rng: ChaCha8Rng,
    pos: Vec<usize>,
    neg: Vec<usize>,
}

impl BinarySampler {
    pub fn new(is_positive: &[bool], seed: u64, stream: u64) -> Result<Self> {
        let pos: Vec<usize> = (0..is_positive.len()).filter(|&i| is_positive[i]).collect();
        let neg: Vec<usize> = (0..is_positive.len()).filter(|&i| !is_positive[i]).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Dataset("one-vs-all head needs positive and negative examples".into()));
        }
        Ok(Self { rng: stream_rng(seed, stream), pos, neg })
    }

    pub fn batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|i| {
                let pool = if i % 2 == 0 { &self.pos } else { &self.neg };
                pool[self.rng.gen_range(0..pool.len())]
            })
            .collect()
    }
}

pub(crate) fn batches_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch).max(1)
}

pub(crate) fn gather(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Feature extractor and head trained jointly on crossentropy.
pub(crate) fn supervised_step(
    fe: &mut ModelGraph,
    head: &mut ModelGraph,
    opt_fe: &mut Adam,
    opt_head: &mut Adam,
    x: &Tensor,
    labels: &[usize],
    classes: usize,
) -> Result<f64> {
    fe.zero_grad();
    head.zero_grad();
    let h = fe.forward(x)?;
    let p = head.forward(&h)?;
    let (loss, g) = crossentropy(&p, &one_hot(labels, classes)?)?;
    let gh = head.backward(&g)?;
    fe.backward(&gh)?;
    opt_head.step(head)?;
    opt_fe.step(fe)?;
    Ok(loss)
}

/// Head alone on fixed features.
pub(crate) fn head_step(
    head: &mut ModelGraph,
    opt: &mut Adam,
    feats: &Tensor,
    labels: &[usize],
    classes: usize,
) -> Result<f64> {
    head.zero_grad();
    let p = head.forward(feats)?;
    let (loss, g) = crossentropy(&p, &one_hot(labels, classes)?)?;
    head.backward(&g)?;
    opt.step(head)?;
    Ok(loss)
}

/// Inference in fixed-size chunks (concatenated in order).
pub(crate) fn infer_all(model: &ModelGraph, inputs: &Tensor) -> Result<Tensor> {
    let n = inputs.rows();
    let mut rows = Vec::new();
    let mut width = model.output_len();
    for start in (0..n).step_by(INFER_CHUNK) {
        let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(n)).collect();
        let out = model.infer(&inputs.select_rows(&idx))?;
        width = out.row_len();
        rows.extend(out.into_data());
    }
    Tensor::new(vec![n, width], rows)
}

/// Mean crossentropy and accuracy of `head` on fixed features.
pub(crate) fn evaluate_head(head: &ModelGraph, feats: &Tensor, labels: &[usize], classes: usize) -> Result<(f64, f64)> {
    if labels.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty set".into()));
    }
    let p = infer_all(head, feats)?;
    let (loss, _) = crossentropy(&p, &one_hot(labels, classes)?)?;
    let correct = (0..labels.len())
        .filter(|&i| crate::classifiers::predict_closed(p.row(i)).map(|c| c == labels[i]).unwrap_or(false))
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Tracks the best validation loss for the patience rule.
#[derive(Debug, Clone)]
pub(crate) struct Stopper {
    pub best: f64,
    since: usize,
    patience: usize,
    min_delta: f64,
}

impl Stopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { best: f64::INFINITY, since: 0, patience, min_delta }
    }

    /// Records a validation loss; true when it improves on the best by at
    /// least `min_delta`.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss <= self.best - self.min_delta {
            self.best = loss;
            self.since = 0;
            true
        } else {
            self.since += 1;
            false
        }
    }

    /// "Still decreasing": an improvement happened within the patience window.
    pub fn still_decreasing(&self) -> bool {
        self.since < self.patience
    }
}

/// Outcome of fitting a head on frozen features.
pub(crate) struct HeadFit {
    pub head: ModelGraph,
    pub val_acc: f64,
}

/// Trains `head` on fixed features for up to `max_epochs` epochs with the
/// patience rule on validation loss, keeping the best head.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_head(
    mut head: ModelGraph,
    opt: &mut Adam,
    feats: &Tensor,
    labels: &[usize],
    val_feats: &Tensor,
    val_labels: &[usize],
    classes: usize,
    mut next_batch: impl FnMut(usize) -> Vec<usize>,
    batch: usize,
    max_epochs: usize,
    stop: &mut Stopper,
) -> Result<HeadFit> {
    let (l0, a0) = evaluate_head(&head, val_feats, val_labels, classes)?;
    stop.observe(l0);
    let mut best = HeadFit { head: head.clone(), val_acc: a0 };
    for _ in 0..max_epochs {
        for _ in 0..batches_per_epoch(feats.rows(), batch) {
            let idx = next_batch(batch);
            head_step(&mut head, opt, &feats.select_rows(&idx), &gather(labels, &idx), classes)?;
        }
        let (loss, acc) = evaluate_head(&head, val_feats, val_labels, classes)?;
        if stop.observe(loss) {
            best = HeadFit { head: head.clone(), val_acc: acc };
        }
        if !stop.still_decreasing() {
            break;
        }
    }
    Ok(best)
}
