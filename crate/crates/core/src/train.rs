//! Mini-batch training loop and evaluation.
//!
//! Each epoch: pick the learning rate, shuffle the training set, and for each
//! minibatch run forward, loss, backward and one Nesterov step. After the
//! last batch the training (and validation) sets are evaluated with the
//! updated weights, so `train_acc` is the accuracy of the model as saved.
//! All randomness comes from one ChaCha stream seeded by the config, so a
//! run is a pure function of its inputs.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, Augmentation};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::loss::{self, CircleLossConfig};
use crate::metrics::{argmax_rows, MetricsReport};
use crate::network::{ForwardVars, Network};
use crate::optim::{LrSchedule, Nag};
use crate::real::Real;
use crate::tensor::Tensor;

/// Preprocessed samples, each `(1, C, H, W)`, with class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<Tensor<T>>,
    labels: Vec<usize>,
}

impl<T: Real> Dataset<T> {
    pub fn new(samples: Vec<Tensor<T>>, labels: Vec<usize>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(first) = samples.first() {
            let s = first.shape();
            if let Some(bad) = samples.iter().find(|t| t.shape() != s || t.shape().n != 1) {
                return Err(Error::Dimension { op: "dataset", lhs: s, rhs: bad.shape() });
            }
        }
        Ok(Dataset { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Tensor<T>] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Stacks the samples at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let refs: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.samples[i]).collect();
        Ok((Tensor::stack(&refs)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Circle(CircleLossConfig),
    CrossEntropy,
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Circle(c) => c.validate(),
            LossKind::CrossEntropy => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub momentum: f64,
    pub schedule: LrSchedule,
    /// Random flip and padded crop of every training sample, redrawn each epoch.
    pub augment: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub const DEFAULT_BATCH: usize = 32;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;

    /// Circle loss, batch 32, momentum 0.9 and a cosine schedule from `lr`
    /// to 0 over `epochs`.
    pub fn new(epochs: usize, lr: f64) -> Self {
        TrainConfig {
            epochs,
            batch_size: Self::DEFAULT_BATCH,
            loss: LossKind::Circle(CircleLossConfig::default()),
            momentum: Self::DEFAULT_MOMENTUM,
            schedule: LrSchedule::Cosine { lr_max: lr, lr_min: 0.0, period: epochs.max(1) },
            augment: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.loss.validate()?;
        self.schedule.validate()
    }
}

/// One row of the run log. `epoch` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Records the configured loss for a forward pass on `g`.
pub fn loss_graph<T: Real>(
    net: &Network<T>,
    g: &mut Graph<T>,
    vars: ForwardVars,
    labels: &[usize],
    kind: &LossKind,
) -> Result<Var> {
    match kind {
        LossKind::Circle(cfg) => {
            let proxies = net.proxies_graph(g)?;
            g.circle_loss(vars.embedding, labels, proxies, cfg)
        }
        LossKind::CrossEntropy => g.cross_entropy(vars.logits, labels),
    }
}

/// Metrics and mean loss of a network on a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub loss: f64,
    pub predictions: Vec<usize>,
}

/// Argmax-over-logits predictions in dataset order, the confusion-based
/// metrics and the sample-weighted mean loss.
pub fn evaluate<T: Real>(net: &Network<T>, data: &Dataset<T>, kind: &LossKind, batch_size: usize) -> Result<Evaluation> {
    let classes = net.config.num_classes;
    let proxies = kernels::transpose(net.params.value(net.fc_weights))?;
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk)?;
        let out = net.forward(&x, false)?;
        let l = match kind {
            LossKind::Circle(cfg) => loss::circle_loss(&out.embedding, &labels, &proxies, cfg)?,
            LossKind::CrossEntropy => loss::cross_entropy_with_grad(&out.logits, &labels)?.0,
        };
        loss_sum += l.as_f64() * chunk.len() as f64;
        predictions.extend(argmax_rows(&out.logits));
    }
    let report = MetricsReport::from_predictions(data.labels(), &predictions, classes)?;
    Ok(Evaluation {
        report,
        loss: if data.is_empty() { 0.0 } else { loss_sum / data.len() as f64 },
        predictions,
    })
}

/// Trains `net` in place and returns one record per epoch. `on_epoch` sees
/// each record as soon as it is complete.
pub fn train<T: Real>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    val_set: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let classes = net.config.num_classes;
    if let Some(&bad) = train_set.labels().iter().chain(val_set.map_or(&[][..], |v| v.labels())).find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} is outside 0..{classes}")));
    }
    let batch = cfg.batch_size.min(train_set.len());
    let mut optimizer = Nag::new(cfg.momentum, &net.params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut monitored: Vec<f64> = Vec::with_capacity(cfg.epochs);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch, &monitored);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let (x, labels) = if cfg.augment {
                let augmented: Vec<Tensor<T>> = chunk
                    .iter()
                    .map(|&i| augment(&train_set.samples[i], Augmentation::sample(rng.gen())))
                    .collect();
                let refs: Vec<&Tensor<T>> = augmented.iter().collect();
                (Tensor::stack(&refs)?, chunk.iter().map(|&i| train_set.labels[i]).collect())
            } else {
                train_set.batch(chunk)?
            };
            let mut g = Graph::new();
            let input = g.input(x);
            let vars = net.forward_graph(&mut g, input)?;
            let loss = loss_graph(net, &mut g, vars, &labels, &cfg.loss)?;
            let value = g.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { epoch: epoch + 1, batch: b, value });
            }
            net.params.zero_grads();
            g.backward(loss, &mut net.params)?;
            optimizer.step(&mut net.params, lr)?;
            loss_sum += value;
            batches += 1;
        }
        let train_eval = evaluate(net, train_set, &cfg.loss, batch)?;
        let val_eval = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate(net, v, &cfg.loss, batch)?),
            _ => None,
        };
        let train_loss = loss_sum / batches as f64;
        monitored.push(val_eval.as_ref().map_or(train_loss, |v| v.loss));
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            train_acc: train_eval.report.accuracy,
            val_loss: val_eval.as_ref().map(|v| v.loss),
            val_acc: val_eval.as_ref().map(|v| v.report.accuracy),
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}
