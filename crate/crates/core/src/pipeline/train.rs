//! Dataset generation and the training loop.
//!
//! Messages are drawn once from the seed; channel noise is not stored. Each
//! optimizer step draws its own SNR and noise from a stream indexed by the
//! global step, and each epoch visits the dataset in an order drawn from a
//! stream indexed by the epoch. A step is therefore a pure function of
//! `(config, step, weights, moments)`, which is what makes resuming from a
//! checkpoint bitwise equivalent to never stopping.

use rand::seq::SliceRandom;
use rand::Rng;

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use crate::channel::{add_awgn_in_place, modulate, noise_sigma, SnrPoint};
use crate::coding::{encode, CodeSpec, MessageWord};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gridmap::{to_input_grid, GridSpec};
use crate::losses::{ber, loss_on_tape, BerReport};
use crate::nn::{build_unet, Tape, Tensor, UNet};
use crate::rng::{stream, Domain};

/// `num_samples` i.i.d. uniform messages of `block_length` bits.
pub fn gen_dataset(block_length: usize, num_samples: usize, seed: u64) -> Result<Vec<MessageWord>> {
    let mut rng = stream(seed, Domain::Dataset, 0);
    (0..num_samples).map(|_| random_message(block_length, &mut rng)).collect()
}

pub(crate) fn random_message<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<MessageWord> {
    MessageWord::new((0..len).map(|_| rng.random_range(0..2u8)).collect())
}

/// Network input and target for a set of messages sent at one noise level.
pub struct Batch {
    /// `[N, 2, side, side]`
    pub input: Tensor<f32>,
    /// `[N, 1, side, side]`
    pub target: Tensor<f32>,
}

/// Encodes, modulates and corrupts each message with `sigma`, drawing noise
/// from `rng` in message order, and maps the results onto `grid`.
pub fn make_batch<R: Rng + ?Sized>(
    code: &CodeSpec,
    grid: &GridSpec,
    messages: &[&MessageWord],
    sigma: f64,
    rng: &mut R,
) -> Result<Batch> {
    let s = grid.side();
    let cells = grid.cells();
    let n = messages.len();
    let mut input = Vec::with_capacity(n * 2 * cells);
    let mut target = vec![0.0f32; n * cells];
    for (i, msg) in messages.iter().enumerate() {
        let mut rx = modulate(&encode(code, msg).interleave())?.into_symbols();
        add_awgn_in_place(&mut rx, sigma, rng)?;
        let g = to_input_grid(&crate::channel::SymbolBlock::new(rx), grid)?;
        input.extend(g.values().iter().map(|&v| v as f32));
        for (cell, &b) in target[i * cells..].iter_mut().zip(msg.bits()) {
            *cell = b as f32;
        }
    }
    Ok(Batch { input: Tensor::from_vec([n, 2, s, s], input)?, target: Tensor::from_vec([n, 1, s, s], target)? })
}

/// Hard-decision errors of probability grids `[N, 1, side, side]` against messages.
pub fn grid_ber(prob: &Tensor<f32>, messages: &[&MessageWord], grid: &GridSpec) -> Result<BerReport> {
    let mut total = BerReport::default();
    for (i, msg) in messages.iter().enumerate() {
        let p: Vec<f64> = prob.sample(i)[..grid.msg_len()].iter().map(|&x| x as f64).collect();
        total.merge(ber(&p, msg.bits())?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub step: u64,
    pub snr_db: f64,
    pub loss: f64,
    pub ber: f64,
}

/// One row of the training log. Epochs count from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_batch_ber: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    grid: GridSpec,
    model: UNet<f32>,
    adam: Adam<f32>,
    dataset: Vec<MessageWord>,
    order: Option<(usize, Vec<usize>)>,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = build_unet::<f32>(&cfg.net, cfg.seed)?;
        let adam = Adam::new(cfg.lr, model.params());
        Self::assemble(cfg.clone(), model, adam)
    }

    /// Continues from a checkpoint; the schedule resumes at its step.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let model = ckpt.model()?;
        let adam = Adam::from_state(ckpt.config.lr, ckpt.step, ckpt.adam_m.clone(), ckpt.adam_v.clone())?;
        if adam.first_moments().len() != model.params().len() {
            return Err(Error::Shape("checkpoint moments do not match the parameters".into()));
        }
        Self::assemble(ckpt.config.clone(), model, adam)
    }

    fn assemble(cfg: TrainConfig, model: UNet<f32>, adam: Adam<f32>) -> Result<Self> {
        let grid = cfg.grid()?;
        let dataset = gen_dataset(cfg.block_length, cfg.num_samples, cfg.seed)?;
        Ok(Self { cfg, grid, model, adam, dataset, order: None })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn model(&self) -> &UNet<f32> {
        &self.model
    }

    pub fn step_count(&self) -> u64 {
        self.adam.steps()
    }

    /// The final batch of an epoch may be short.
    pub fn batches_per_epoch(&self) -> u64 {
        self.cfg.num_samples.div_ceil(self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.batches_per_epoch() * self.cfg.epochs as u64
    }

    fn epoch_order(&mut self, epoch: usize) -> &[usize] {
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut idx: Vec<usize> = (0..self.dataset.len()).collect();
            idx.shuffle(&mut stream(self.cfg.seed, Domain::Shuffle, epoch as u64));
            self.order = Some((epoch, idx));
        }
        &self.order.as_ref().expect("just set").1
    }

    pub fn train_step(&mut self) -> Result<StepStats> {
        let step = self.step_count();
        let bpe = self.batches_per_epoch();
        let (epoch, b) = ((step / bpe) as usize, (step % bpe) as usize);
        let bs = self.cfg.batch_size;
        let n = self.dataset.len();
        let picked: Vec<usize> = self.epoch_order(epoch)[b * bs..((b + 1) * bs).min(n)].to_vec();
        let messages: Vec<&MessageWord> = picked.iter().map(|&i| &self.dataset[i]).collect();

        let mut rng = stream(self.cfg.seed, Domain::TrainNoise, step);
        let snr_db = if self.cfg.snr_max_db > self.cfg.snr_min_db {
            rng.random_range(self.cfg.snr_min_db..=self.cfg.snr_max_db)
        } else {
            self.cfg.snr_min_db
        };
        let sigma = noise_sigma(SnrPoint::new(snr_db)?, self.cfg.code.rate())?;
        let batch = make_batch(&self.cfg.code, &self.grid, &messages, sigma, &mut rng)?;

        let mut tape = Tape::new();
        let params = self.model.register(&mut tape);
        let x = tape.constant(batch.input);
        let prob = self.model.forward(&mut tape, &params, x)?;
        let loss = loss_on_tape(&mut tape, self.cfg.loss, prob, &batch.target, &self.grid.target_mask())?;
        let loss_value = tape.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { step, snr_db, loss: loss_value });
        }
        let batch_ber = grid_ber(tape.value(prob), &messages, &self.grid)?.ber();
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor<f32>> = params
            .iter()
            .zip(self.model.params())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect();
        self.adam.step(self.model.params_mut(), &grads)?;
        Ok(StepStats { step, snr_db, loss: loss_value, ber: batch_ber })
    }

    /// Runs the remaining steps of the current epoch. After a mid-epoch
    /// resume the row averages only the steps run here.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let bpe = self.batches_per_epoch();
        let epoch = self.step_count() / bpe;
        let (mut loss, mut ber, mut count) = (0.0, 0.0, 0usize);
        while self.step_count() / bpe == epoch {
            let s = self.train_step()?;
            loss += s.loss;
            ber += s.ber;
            count += 1;
        }
        let c = count as f64;
        Ok(EpochLog { epoch: epoch as usize + 1, mean_loss: loss / c, mean_batch_ber: ber / c })
    }

    /// Trains until the configured number of epochs is complete.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.step_count() < self.total_steps() {
            let log = self.run_epoch()?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            grid: self.grid,
            step: self.step_count(),
            params: self.model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            adam_m: self.adam.first_moments().to_vec(),
            adam_v: self.adam.second_moments().to_vec(),
        }
    }
}

/// Trains from scratch per `cfg`.
pub fn train(cfg: &TrainConfig) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut t = Trainer::new(cfg)?;
    let logs = t.run(|_| {})?;
    Ok((t.checkpoint(), logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::standard_code;

    fn tiny() -> TrainConfig {
        TrainConfig {
            block_length: 10,
            net: crate::nn::UNetConfig::new(1, 2),
            batch_size: 4,
            num_samples: 10,
            epochs: 2,
            seed: 9,
            ..TrainConfig::desk(standard_code(2).unwrap())
        }
    }

    #[test]
    fn dataset_is_seeded() {
        let a = gen_dataset(20, 50, 3).unwrap();
        assert_eq!(a, gen_dataset(20, 50, 3).unwrap());
        assert_ne!(a, gen_dataset(20, 50, 4).unwrap());
        assert_eq!(gen_dataset(20, 1, 3).unwrap().len(), 1);
    }

    #[test]
    fn dataset_bits_are_balanced() {
        let d = gen_dataset(1000, 1000, 17).unwrap();
        let ones: usize = d.iter().map(|m| m.bits().iter().filter(|&&b| b == 1).count()).sum();
        let freq = ones as f64 / 1e6;
        assert!((freq - 0.5).abs() < 0.0025, "{freq}");
    }

    #[test]
    fn epochs_cover_the_dataset_with_a_short_last_batch() {
        let mut t = Trainer::new(&tiny()).unwrap();
        assert_eq!(t.batches_per_epoch(), 3);
        let logs = t.run(|_| {}).unwrap();
        assert_eq!(logs.iter().map(|l| l.epoch).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(t.step_count(), 6);
        assert!(logs.iter().all(|l| l.mean_loss.is_finite() && (0.0..=1.0).contains(&l.mean_batch_ber)));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig { epochs: 0, ..tiny() };
        let (ckpt, logs) = train(&cfg).unwrap();
        assert!(logs.is_empty());
        assert_eq!(ckpt.step, 0);
        let init = build_unet::<f32>(&cfg.net, cfg.seed).unwrap();
        let got = ckpt.model().unwrap();
        assert_eq!(got.params(), init.params());
        assert!(ckpt.adam_m.iter().all(|t| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let (a, la) = train(&tiny()).unwrap();
        let (b, lb) = train(&tiny()).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.to_bytes(), b.to_bytes());
        let (c, _) = train(&TrainConfig { seed: 10, ..tiny() }).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }
}
