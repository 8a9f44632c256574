use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Optimizer, StageConfig};
use super::encode::{stream_loss, Encoded};
use super::network::{backward, forward, LogitGrads};
use super::params::Parameters;
use super::ModelError;

/// Batch loss and gradient. The loss is the summed stream loss divided by
/// the number of scored units in the batch; the gradient matches it.
pub fn loss_and_grad(params: &Parameters, batch: &[Encoded]) -> Result<(f64, Vec<f64>), ModelError> {
    let units: usize = batch.iter().map(Encoded::units).sum();
    let scale = 1.0 / units.max(1) as f64;
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for enc in batch {
        let fp = forward(params, &enc.inputs)?;
        let mut dlogits = LogitGrads::zeros_like(&fp);
        total += stream_loss(&fp, enc, &params.config.vocab, Some((&mut dlogits, scale)));
        backward(params, &fp, &dlogits, &mut grad);
    }
    Ok((total * scale, grad))
}

/// Mean per-unit loss over a data set, without gradients.
pub fn evaluate(params: &Parameters, data: &[Encoded]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    let mut units = 0;
    for enc in data {
        let fp = forward(params, &enc.inputs)?;
        total += stream_loss(&fp, enc, &params.config.vocab, None);
        units += enc.units();
    }
    Ok(total / units.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub loss: f64,
}

/// Owns parameters and optimizer state across steps of one stage.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: Parameters,
    stage: StageConfig,
    trainable: Vec<bool>,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Trainer {
    pub fn new(params: Parameters, stage: StageConfig) -> Result<Self, ModelError> {
        stage.validate()?;
        let mut trainable = vec![false; params.len()];
        for info in &params.layout.params {
            if stage.trainable.includes(info.group) {
                trainable[info.range()].iter_mut().for_each(|t| *t = true);
            }
        }
        let n = params.len();
        Ok(Trainer { params, stage, trainable, step: 0, m: vec![0.0; n], v: vec![0.0; n] })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update on `batch`. Frozen parameters are never written. A
    /// non-finite loss or gradient aborts the step and leaves the
    /// parameters untouched.
    pub fn step(&mut self, batch: &[Encoded]) -> Result<StepReport, ModelError> {
        let (loss, grad) = loss_and_grad(&self.params, batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::NonFiniteLoss { step: self.step, loss });
        }
        self.step += 1;
        let lr = self.stage.lr;
        match self.stage.optimizer {
            Optimizer::Sgd => {
                if lr != 0.0 {
                    for ((w, g), &t) in self.params.data.iter_mut().zip(&grad).zip(&self.trainable) {
                        if t {
                            *w -= lr * g;
                        }
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for i in 0..grad.len() {
                    if !self.trainable[i] {
                        continue;
                    }
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    if lr != 0.0 {
                        let mhat = self.m[i] / bc1;
                        let vhat = self.v[i] / bc2;
                        self.params.data[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(StepReport { step: self.step, loss })
    }

    /// Runs `stage.steps` updates over shuffled mini-batches. The shuffle is
    /// driven by `seed`, so runs are reproducible.
    pub fn fit(&mut self, data: &[Encoded], seed: u64, mut on_step: impl FnMut(&StepReport)) -> Result<Vec<f64>, ModelError> {
        if data.is_empty() {
            return Err(ModelError::Config("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = order.len();
        let mut curve = Vec::with_capacity(self.stage.steps);
        let batch_size = self.stage.batch_size.min(data.len());
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..self.stage.steps {
            batch.clear();
            while batch.len() < batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(data[order[cursor]].clone());
                cursor += 1;
            }
            let report = self.step(&batch)?;
            on_step(&report);
            curve.push(report.loss);
        }
        Ok(curve)
    }
}

/// Single plain-SGD step without optimizer state.
pub fn train_step(params: &Parameters, batch: &[Encoded], stage: &StageConfig) -> Result<(Parameters, f64), ModelError> {
    let mut sgd = *stage;
    sgd.optimizer = Optimizer::Sgd;
    let mut trainer = Trainer::new(params.clone(), sgd)?;
    let report = trainer.step(batch)?;
    Ok((trainer.params, report.loss))
}
