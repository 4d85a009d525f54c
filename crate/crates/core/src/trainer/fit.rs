use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::Checkpoint;
use super::loss::{loss_and_grad, LossConfig};
use super::optim::{cosine_anneal_lr, AdamW};
use super::sampler::TimestepSampler;
use super::TrainConfig;
use crate::diffusion::{forward_noise, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::nnet::{ParamStore, UNet};
use crate::rng::{derive_seed, rng_from_seed};

const ORDER_STREAM: u64 = 0x5EED_0001;
const SAMPLE_STREAM: u64 = 0x5EED_0002;

/// The noisy input and regression target drawn for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub t: usize,
    pub eps: Vec<f64>,
    pub x_t: Vec<f64>,
}

/// Trains a [`UNet`] on clean traces. Every random draw is keyed by
/// `(seed, epoch, position)`, so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct Trainer {
    net: UNet,
    sched: DiffusionSchedule,
    sampler: TimestepSampler,
    pub train: TrainConfig,
    pub loss: LossConfig,
}

impl Trainer {
    pub fn new(
        net: UNet,
        sched: DiffusionSchedule,
        train: TrainConfig,
        loss: LossConfig,
    ) -> Result<Self> {
        train.validate()?;
        loss.validate()?;
        if net.config().diffusion_steps != sched.steps {
            return Err(Error::invalid(format!(
                "network embeds {} steps but the schedule has {}",
                net.config().diffusion_steps,
                sched.steps
            )));
        }
        let sampler = TimestepSampler::new(sched.steps)?;
        Ok(Self {
            net,
            sched,
            sampler,
            train,
            loss,
        })
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.sched
    }

    /// Visiting order of the dataset in `epoch` (a seeded shuffle).
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_from_seed(derive_seed(self.train.seed, &[ORDER_STREAM, epoch as u64]));
        order.shuffle(&mut rng);
        order
    }

    /// Timestep and noise for the example at `position` of `epoch`.
    pub fn draw(&self, x0: &[f64], epoch: usize, position: usize) -> Result<Draw> {
        let mut rng = rng_from_seed(derive_seed(
            self.train.seed,
            &[SAMPLE_STREAM, epoch as u64, position as u64],
        ));
        let t = self.sampler.sample(&mut rng);
        let eps: Vec<f64> = (0..x0.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x_t = forward_noise(x0, t, &eps, &self.sched)?;
        Ok(Draw { t, eps, x_t })
    }

    /// Mean loss over a batch and its gradient, accumulated into `grads` in
    /// batch order. `items` pairs each clean trace with its epoch position.
    pub fn batch_gradient(
        &self,
        params: &ParamStore<f32>,
        items: &[(&[f64], usize)],
        epoch: usize,
        grads: &mut [f32],
    ) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / items.len() as f64;
        let mut total = 0.0;
        for &(x0, position) in items {
            let d = self.draw(x0, epoch, position)?;
            let x: Vec<f32> = d.x_t.iter().map(|&v| v as f32).collect();
            let (y, tape) = self.net.forward_tape(params, &x, d.t)?;
            let eps_hat: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
            let (l, g) = loss_and_grad(&d.eps, &eps_hat, x0, &self.loss)?;
            total += l;
            let dy: Vec<f32> = g.iter().map(|&v| (v * scale) as f32).collect();
            self.net.backward(params, &tape, &dy, grads)?;
        }
        Ok(total * scale)
    }

    /// Loss of batch `batch` of `epoch` without touching any state.
    pub fn batch_loss(
        &self,
        params: &ParamStore<f32>,
        data: &[Vec<f64>],
        epoch: usize,
        batch: usize,
    ) -> Result<f64> {
        let order = self.epoch_order(data.len(), epoch);
        let items = self.batch_items(data, &order, batch);
        if items.is_empty() {
            return Err(Error::invalid(format!("batch {batch} is out of range")));
        }
        let mut grads = params.zeros_like();
        self.batch_gradient(params, &items, epoch, &mut grads)
    }

    fn batch_items<'a>(
        &self,
        data: &'a [Vec<f64>],
        order: &[usize],
        batch: usize,
    ) -> Vec<(&'a [f64], usize)> {
        let start = (batch * self.train.batch).min(order.len());
        let end = (start + self.train.batch).min(order.len());
        (start..end)
            .map(|pos| (data[order[pos]].as_slice(), pos))
            .collect()
    }

    pub fn initial_checkpoint(&self) -> Checkpoint {
        let params = self.net.init_params(self.train.seed);
        let mut ck = Checkpoint::fresh(params, &self.sched);
        ck.optimizer = Some(AdamW::new(ck.params.num_params(), self.train.weight_decay));
        ck.meta = self.meta();
        ck
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "train": self.train, "loss": self.loss })
    }

    /// Train until `train.epochs` epochs are complete, starting from `start`
    /// (or a fresh initialisation). `on_epoch` sees the checkpoint after every
    /// epoch and may abort by returning an error.
    pub fn fit<F>(
        &self,
        data: &[Vec<f64>],
        start: Option<Checkpoint>,
        mut on_epoch: F,
    ) -> Result<Checkpoint>
    where
        F: FnMut(&Checkpoint) -> Result<()>,
    {
        let len = self.net.config().input_len;
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if let Some(bad) = data.iter().position(|x| x.len() != len) {
            return Err(Error::invalid(format!(
                "training trace {bad} has length {}, expected {len}",
                data[bad].len()
            )));
        }
        let mut ck = match start {
            Some(ck) => {
                if ck.net_config() != self.net.config() {
                    return Err(Error::Checkpoint(
                        "network config differs from the trainer's".into(),
                    ));
                }
                if ck.steps != self.sched.steps || ck.offset != self.sched.offset {
                    return Err(Error::Checkpoint(
                        "schedule differs from the trainer's".into(),
                    ));
                }
                ck
            }
            None => self.initial_checkpoint(),
        };
        let mut opt = ck
            .optimizer
            .take()
            .unwrap_or_else(|| AdamW::new(ck.params.num_params(), self.train.weight_decay));
        opt.weight_decay = self.train.weight_decay;
        let n_batches = data.len().div_ceil(self.train.batch);
        let mut grads = ck.params.zeros_like();
        while ck.epoch < self.train.epochs {
            let epoch = ck.epoch;
            let lr = cosine_anneal_lr(epoch, self.train.epochs, self.train.lr0, self.train.lr_min);
            let order = self.epoch_order(data.len(), epoch);
            let mut sum = 0.0;
            for b in 0..n_batches {
                let items = self.batch_items(data, &order, b);
                grads.iter_mut().for_each(|g| *g = 0.0);
                let l = match self.batch_gradient(&ck.params, &items, epoch, &mut grads) {
                    Err(Error::NonFinite(what)) => {
                        log::error!("non-finite {what} in epoch {epoch} batch {b}");
                        return Err(Error::Diverged { epoch, batch: b });
                    }
                    r => r?,
                };
                if !l.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged { epoch, batch: b });
                }
                opt.update(ck.params.values_mut(), &grads, lr)?;
                sum += l * items.len() as f64;
                log::debug!("epoch {epoch} batch {b}/{n_batches} loss {l:.5}");
            }
            let mean = sum / data.len() as f64;
            log::info!("epoch {} mean loss {mean:.5} lr {lr:.3e}", epoch + 1);
            ck.loss_history.push(mean);
            ck.epoch += 1;
            ck.meta = self.meta();
            ck.optimizer = Some(opt);
            on_epoch(&ck)?;
            opt = ck.optimizer.take().expect("optimizer restored above");
        }
        ck.optimizer = Some(opt);
        Ok(ck)
    }
}
