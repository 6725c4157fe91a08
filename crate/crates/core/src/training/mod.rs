//! Loss, optimizer, gradient auditing and the toy training loop.

pub mod data;
pub mod gradcheck;
pub mod loss;
pub mod optim;

pub use data::{gen_toy_dataset, random_image, SplitMix64, ToyDataset};
pub use gradcheck::{finite_diff_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use loss::{cross_entropy, cross_entropy_backward};
pub use optim::{adam_step, AdamConfig, OptimState};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{ParamGrads, Tape};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One line of the training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} loss {:.6} acc {:.4}", self.epoch, self.loss, self.acc)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 32,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

pub fn argmax<T: Scalar>(t: &Tensor<T>) -> usize {
    let mut best = 0;
    for (i, &v) in t.data().iter().enumerate() {
        if v > t.data()[best] {
            best = i;
        }
    }
    best
}

struct SampleResult<T> {
    loss: f64,
    correct: bool,
    grads: ParamGrads<T>,
}

fn sample_step<T: Scalar>(model: &Model<T>, image: Tensor<T>, label: usize) -> Result<SampleResult<T>> {
    let mut tape = Tape::new(&model.store);
    let x = tape.input(image);
    let logits = model.logits_on(&mut tape, x)?;
    let correct = argmax(tape.value(logits)) == label;
    let loss = tape.cross_entropy(logits, label)?;
    let value = tape.value(loss).data()[0].as_f64();
    let grads = tape.backward(loss)?.into_param_grads();
    Ok(SampleResult {
        loss: value,
        correct,
        grads,
    })
}

/// Mean cross-entropy gradient over `indices`, accumulated into
/// `Parameter::grad` after zeroing. Per-sample passes run in parallel; the
/// reduction is a sequential fold in sample order, so results do not depend
/// on the worker count. Returns summed loss and number correct.
pub fn batch_gradient<T: Scalar>(
    model: &mut Model<T>,
    data: &ToyDataset<T>,
    indices: &[usize],
) -> Result<(f64, usize)> {
    let results = indices
        .par_iter()
        .map(|&i| sample_step(model, data.image(i), data.labels[i]))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = results.into_iter();
    let first = iter.next().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (mut loss, mut correct, mut total) = (first.loss, usize::from(first.correct), first.grads);
    for r in iter {
        loss += r.loss;
        correct += usize::from(r.correct);
        total.merge(&r.grads)?;
    }
    let inv = T::one() / T::of(indices.len() as f64);
    for g in total.0.iter_mut().flatten() {
        for v in g.data_mut() {
            *v *= inv;
        }
    }
    model.store.zero_grad();
    total.accumulate_into(&mut model.store)?;
    Ok((loss, correct))
}

/// Shuffled mini-batch Adam on cross-entropy. Stats per epoch are the mean
/// loss and accuracy of the forward passes made during that epoch.
pub fn train_toy<T: Scalar>(
    model: &mut Model<T>,
    data: &ToyDataset<T>,
    opts: TrainOptions,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if model.config.num_classes != data.classes {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            model.config.num_classes, data.classes
        )));
    }
    if opts.batch == 0 {
        return Err(Error::Config("batch size must be ≥ 1".into()));
    }
    let mut state = OptimState::new(&model.store, opts.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(opts.batch) {
            let (l, c) = batch_gradient(model, data, chunk)?;
            loss += l;
            correct += c;
            adam_step(&mut model.store, &mut state)?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss / data.len() as f64,
            acc: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        trace.push(stats);
    }
    Ok(trace)
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &ToyDataset<T>) -> Result<f64> {
    let hits = (0..data.len())
        .into_par_iter()
        .map(|i| {
            Ok(usize::from(
                argmax(&model.forward_classify(&data.image(i))?) == data.labels[i],
            ))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, preset_config, Variant};

    #[test]
    fn argmax_picks_first_max() {
        let t = Tensor::<f32>::new([4], vec![0.0, 2.0, 2.0, -1.0]).unwrap();
        assert_eq!(argmax(&t), 1);
    }

    #[test]
    fn trace_line_format() {
        let s = EpochStats {
            epoch: 3,
            loss: 0.5,
            acc: 0.25,
        };
        assert_eq!(s.to_string(), "epoch 3 loss 0.500000 acc 0.2500");
    }

    #[test]
    fn class_mismatch_rejected() {
        let mut m = build_model::<f32>(&preset_config(Variant::MicroReduced, 5), 0).unwrap();
        let d = gen_toy_dataset::<f32>(0, 10, 10).unwrap();
        assert!(train_toy(&mut m, &d, TrainOptions::default(), |_| {}).is_err());
    }

    #[test]
    fn short_run_is_deterministic() {
        let cfg = preset_config(Variant::MicroReduced, 10);
        let data = gen_toy_dataset::<f32>(1, 20, 10).unwrap();
        let opts = TrainOptions {
            epochs: 2,
            batch: 8,
            seed: 5,
            ..TrainOptions::default()
        };
        let mut a = build_model::<f32>(&cfg, 2).unwrap();
        let mut b = build_model::<f32>(&cfg, 2).unwrap();
        let ta = train_toy(&mut a, &data, opts, |_| {}).unwrap();
        let tb = train_toy(&mut b, &data, opts, |_| {}).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.store.checksum(), b.store.checksum());
        assert!((ta[0].loss - 10f64.ln()).abs() < 0.3);
    }
}
