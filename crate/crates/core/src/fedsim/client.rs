//! Client-side computation: local training on private data and
//! distillation toward a downloaded teacher.

use crate::data::{batches, Dataset};
use crate::error::{dim_err, Error, Result};
use crate::knowledge::soft_predict;
use crate::nn::{accuracy, cross_entropy, forward, grad_ce, grad_kl_student, kl_divergence_eps, Model};
use crate::seed::{derive_seed, tag};
use crate::tensor::Tensor;

/// One participant: its model and its private train/test shards.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub model: Model,
    /// Index of the architecture group the client belongs to.
    pub group: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    train_x: Tensor,
    train_y: Vec<usize>,
    test_x: Tensor,
    test_y: Vec<usize>,
}

impl ClientState {
    pub fn new(
        id: usize,
        model: Model,
        group: usize,
        dataset: &Dataset,
        train_indices: Vec<usize>,
        test_indices: Vec<usize>,
    ) -> Result<Self> {
        if model.input_dim() != dataset.input_dim() {
            return Err(dim_err(
                format!("client {id} model input"),
                dataset.input_dim(),
                model.input_dim(),
            ));
        }
        if model.output_dim() != dataset.num_classes {
            return Err(dim_err(
                format!("client {id} model output"),
                dataset.num_classes,
                model.output_dim(),
            ));
        }
        let train = dataset.subset(&train_indices);
        let test = dataset.subset(&test_indices);
        Ok(Self {
            id,
            model,
            group,
            train_indices,
            test_indices,
            train_x: train.inputs,
            train_y: train.labels,
            test_x: test.inputs,
            test_y: test.labels,
        })
    }

    /// D_n.
    pub fn num_samples(&self) -> usize {
        self.train_y.len()
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, &self.test_x, &self.test_y)
    }

    /// Mean cross-entropy over the whole private shard.
    pub fn private_loss(&self) -> Result<f64> {
        cross_entropy(&forward(&self.model, &self.train_x)?, &self.train_y)
    }

    pub fn train_accuracy(&self) -> Result<f64> {
        accuracy(&self.model, &self.train_x, &self.train_y)
    }

    /// E epochs of mini-batch SGD on the private cross-entropy. The batch
    /// order is keyed by `(seed, stream, client, round, epoch)`.
    pub fn local_update(
        &mut self,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
        stream: u64,
        round: usize,
    ) -> Result<()> {
        if self.train_y.is_empty() {
            return Err(Error::Configuration(format!(
                "client {} has an empty private shard",
                self.id
            )));
        }
        let positions: Vec<usize> = (0..self.train_y.len()).collect();
        let order_seed = derive_seed(seed, &[stream, self.id as u64, round as u64]);
        for epoch in 0..epochs {
            for batch in batches(&positions, batch_size, order_seed, epoch as u64) {
                let x = self.train_x.select_rows(&batch);
                let y: Vec<usize> = batch.iter().map(|&i| self.train_y[i]).collect();
                let g = grad_ce(&self.model, &x, &y)?;
                self.model.apply_gradients(&g, lr)?;
            }
        }
        if !flat_is_finite(&self.model) {
            return Err(Error::Numeric(format!(
                "client {} diverged during local training",
                self.id
            )));
        }
        Ok(())
    }
}

fn flat_is_finite(model: &Model) -> bool {
    model
        .layers()
        .iter()
        .all(|l| l.weights.is_finite() && l.bias.is_finite())
}

/// `steps` gradient steps of the KL toward a fixed teacher on one public
/// batch. Returns the KL after the last step.
pub fn distill(
    model: &mut Model,
    public_batch: &Tensor,
    teacher: &Tensor,
    steps: usize,
    lr: f64,
    temperature: f64,
    kl_eps: f64,
) -> Result<f64> {
    if teacher.rows() != public_batch.rows() {
        return Err(Error::Protocol(format!(
            "teacher has {} rows for a public batch of {}",
            teacher.rows(),
            public_batch.rows()
        )));
    }
    for _ in 0..steps {
        let g = grad_kl_student(model, public_batch, teacher, temperature)?;
        model.apply_gradients(&g, lr)?;
    }
    if !flat_is_finite(model) {
        return Err(Error::Numeric("model diverged during distillation".into()));
    }
    let student = soft_predict(model, public_batch, temperature)?;
    kl_divergence_eps(teacher, &student, kl_eps)
}

/// Seed stream used for private-data batches.
pub(crate) const LOCAL_STREAM: u64 = tag::LOCAL_BATCH;
pub(crate) const FINETUNE_STREAM: u64 = tag::FINETUNE;
