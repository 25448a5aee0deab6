//! Mini-batch training with best-validation-accuracy checkpointing.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    argmax, loss_and_grad, Network, NetworkConfig, NetworkError, Optimizer, OptimizerKind,
};
use crate::dataset::Dataset;
use crate::encoder::ByteSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop as soon as validation accuracy reaches 1.0.
    pub stop_at_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::default(),
            seed: 0,
            stop_at_perfect: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the checkpointed network.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochStats> {
        self.best_epoch.map(|i| &self.epochs[i])
    }

    /// Comma-separated epoch table; the checkpointed row is flagged.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "epoch,train_loss,train_accuracy,val_loss,val_accuracy,checkpoint"
        )?;
        for (i, e) in self.epochs.iter().enumerate() {
            writeln!(
                w,
                "{},{:.9},{:.6},{:.9},{:.6},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                e.val_loss,
                e.val_accuracy,
                u8::from(self.best_epoch == Some(i))
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize, history: TrainHistory },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mean loss, accuracy and predicted classes in eval mode.
pub fn evaluate(
    net: &Network,
    samples: &[&ByteSample],
) -> Result<(f64, f64, Vec<usize>), NetworkError> {
    let head = net.config().head;
    let per: Vec<(f64, usize)> = samples
        .par_iter()
        .map(|s| {
            let scores = net.scores(&s.values())?;
            let (loss, _) = loss_and_grad(&scores, s.label, head)?;
            Ok((loss, argmax(&scores)))
        })
        .collect::<Result<_, NetworkError>>()?;
    let n = samples.len().max(1) as f64;
    let loss = per.iter().map(|p| p.0).sum::<f64>() / n;
    let correct = per
        .iter()
        .zip(samples)
        .filter(|((_, p), s)| *p == s.label)
        .count();
    Ok((
        loss,
        correct as f64 / n,
        per.into_iter().map(|p| p.1).collect(),
    ))
}

/// Trains on the dataset's train split, checkpointing on its validation
/// split.
pub fn train(
    ds: &Dataset,
    nc: &NetworkConfig,
    tc: &TrainConfig,
) -> Result<(Network, TrainHistory), TrainError> {
    if nc.input_len != ds.sample_len() {
        return Err(TrainError::InvalidConfig(format!(
            "network input length {} differs from dataset sample length {}",
            nc.input_len,
            ds.sample_len()
        )));
    }
    if nc.n_classes != ds.n_classes() {
        return Err(TrainError::InvalidConfig(format!(
            "network has {} classes, dataset {}",
            nc.n_classes,
            ds.n_classes()
        )));
    }
    train_on(
        &ds.subset(&ds.splits.train),
        &ds.subset(&ds.splits.val),
        nc,
        tc,
    )
}

pub fn train_on(
    train: &[&ByteSample],
    val: &[&ByteSample],
    nc: &NetworkConfig,
    tc: &TrainConfig,
) -> Result<(Network, TrainHistory), TrainError> {
    if tc.epochs == 0 {
        return Err(TrainError::InvalidConfig(
            "epochs must be at least 1".into(),
        ));
    }
    if tc.batch_size == 0 {
        return Err(TrainError::InvalidConfig(
            "batch size must be at least 1".into(),
        ));
    }
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut net = Network::new(*nc, tc.seed)?;
    let mut opt = Optimizer::new(tc.optimizer, net.param_count());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(tc.seed ^ 0x5348_5546));
    let inputs: Vec<Vec<f64>> = train.iter().map(|s| s.values()).collect();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Network)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(tc.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let seeds: Vec<u64> = (0..batch.len() as u64)
                .map(|j| mix(net.dropout_seed ^ mix(step.wrapping_mul(1 << 16) + j)))
                .collect();
            step += 1;
            let fwd = net.forward_batch(&xs, &ys, Some(&seeds))?;
            let batch_loss: f64 = fwd.losses.iter().sum();
            if !batch_loss.is_finite() {
                return Err(TrainError::DivergedLoss { epoch, history });
            }
            loss_sum += batch_loss;
            correct += fwd
                .scores()
                .zip(&ys)
                .filter(|(s, y)| argmax(s) == **y)
                .count();
            let grads = net.backward(&fwd)?;
            opt.update(net.params_mut(), &grads);
        }
        let (val_loss, val_accuracy, _) = evaluate(&net, val)?;
        if !val_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch, history });
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            stats.train_loss,
            stats.train_accuracy,
            val_loss,
            val_accuracy
        );
        history.epochs.push(stats);
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            history.best_epoch = Some(history.epochs.len() - 1);
            best = Some((val_accuracy, net.clone()));
        }
        if tc.stop_at_perfect && val_accuracy >= 1.0 {
            history.stopped_early = epoch < tc.epochs;
            break;
        }
    }
    let (_, best_net) = best.expect("at least one epoch ran");
    Ok((best_net, history))
}
