//! Monte-Carlo BER sweeps and decode latency.

use std::time::Instant;

use rand::Rng;

use super::train::{grid_ber, make_batch, random_message};
use crate::channel::{add_awgn_in_place, modulate, noise_sigma, SnrPoint, SymbolBlock};
use crate::coding::{encode, CodeSpec, MessageWord};
use crate::config::{SweepConfig, MIN_SWEEP_BITS};
use crate::error::{Error, Result};
use crate::gridmap::{grid_spec_for, GridSpec};
use crate::losses::{ber, BerReport};
use crate::nn::{Tensor, UNet};
use crate::rng::{stream, Domain, StreamRng};
use crate::viterbi::{build_trellis, viterbi_decode, Trellis};

/// Blocks decoded per network forward pass during a sweep.
pub const UNET_CHUNK: usize = 64;

#[derive(Clone, Copy)]
pub enum Decoder<'a> {
    Viterbi,
    /// Hard decisions on uncoded BPSK, one symbol per information bit.
    Uncoded,
    UNet(&'a UNet<f32>),
}

impl Decoder<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Decoder::Viterbi => "viterbi",
            Decoder::Uncoded => "uncoded",
            Decoder::UNet(_) => "unet",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub snr_db: f64,
    pub report: BerReport,
}

/// Called on each `[N, 1, side, side]` probability batch before hard
/// decisions; lets tests tamper with cells that must not matter.
pub type OutputHook<'h> = &'h mut dyn FnMut(&mut Tensor<f32>, &GridSpec);

pub fn ber_sweep(
    decoder: Decoder<'_>,
    code: &CodeSpec,
    block_length: usize,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    ber_sweep_with_hook(decoder, code, block_length, cfg, seed, &mut |_, _| {})
}

/// [`ber_sweep`] with an [`OutputHook`] applied to network outputs.
///
/// Point `i` draws messages and noise from its own stream `(seed, i)`, so
/// points are independent of each other and of evaluation order.
pub fn ber_sweep_with_hook(
    decoder: Decoder<'_>,
    code: &CodeSpec,
    block_length: usize,
    cfg: &SweepConfig,
    seed: u64,
    hook: OutputHook<'_>,
) -> Result<Vec<SweepPoint>> {
    if cfg.min_bits < MIN_SWEEP_BITS {
        return Err(Error::InvalidArgument(format!("min_bits must be >= {MIN_SWEEP_BITS}")));
    }
    if block_length == 0 {
        return Err(Error::EmptyMessage);
    }
    let mut runner = match decoder {
        Decoder::Viterbi => Runner::Viterbi(build_trellis(code)),
        Decoder::Uncoded => Runner::Uncoded,
        Decoder::UNet(net) => {
            let grid = grid_spec_for(block_length, code.memory() as usize, net.config().depth)?;
            Runner::UNet(net, grid)
        }
    };
    cfg.snr_list_db
        .iter()
        .enumerate()
        .map(|(i, &snr_db)| {
            let mut rng = stream(seed, Domain::Sweep, i as u64);
            let snr = SnrPoint::new(snr_db)?;
            let mut report = BerReport::default();
            while !(report.bits_counted >= cfg.min_bits
                && (report.bit_errors >= cfg.min_errors || report.bits_counted >= cfg.max_bits))
            {
                report.merge(runner.chunk(code, block_length, snr, &mut rng, hook)?);
            }
            Ok(SweepPoint { snr_db, report })
        })
        .collect()
}

enum Runner<'a> {
    Viterbi(Trellis),
    Uncoded,
    UNet(&'a UNet<f32>, GridSpec),
}

impl Runner<'_> {
    fn chunk(
        &mut self,
        code: &CodeSpec,
        len: usize,
        snr: SnrPoint,
        rng: &mut StreamRng,
        hook: OutputHook<'_>,
    ) -> Result<BerReport> {
        match self {
            Runner::Viterbi(trellis) => {
                let msg = random_message(len, rng)?;
                let rx = transmit(code, &msg, noise_sigma(snr, code.rate())?, rng)?;
                let (decoded, _) = viterbi_decode(trellis, &rx)?;
                let p: Vec<f64> = decoded.bits().iter().map(|&b| b as f64).collect();
                ber(&p, msg.bits())
            }
            Runner::Uncoded => {
                let msg = random_message(len, rng)?;
                let mut rx = modulate(msg.bits())?.into_symbols();
                add_awgn_in_place(&mut rx, noise_sigma(snr, 1.0)?, rng)?;
                let p: Vec<f64> = SymbolBlock::new(rx).hard_decision().iter().map(|&b| b as f64).collect();
                ber(&p, msg.bits())
            }
            Runner::UNet(net, grid) => {
                let msgs = (0..UNET_CHUNK).map(|_| random_message(len, rng)).collect::<Result<Vec<_>>>()?;
                let refs: Vec<&MessageWord> = msgs.iter().collect();
                let batch = make_batch(code, grid, &refs, noise_sigma(snr, code.rate())?, rng)?;
                let mut prob = net.predict(&batch.input)?;
                hook(&mut prob, grid);
                grid_ber(&prob, &refs, grid)
            }
        }
    }
}

fn transmit<R: Rng + ?Sized>(code: &CodeSpec, msg: &MessageWord, sigma: f64, rng: &mut R) -> Result<SymbolBlock> {
    let mut rx = modulate(&encode(code, msg).interleave())?.into_symbols();
    add_awgn_in_place(&mut rx, sigma, rng)?;
    Ok(SymbolBlock::new(rx))
}

/// Wall-clock decode timing. Not deterministic; labeled as timing wherever
/// it is printed.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub decoder: String,
    pub n_blocks: usize,
    pub block_length: usize,
    /// Median over single-block decodes.
    pub median_block_secs: f64,
    /// One batched call over all blocks, divided by the block count.
    pub batched_block_secs: f64,
    pub environment: String,
}

pub fn environment() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let build = if cfg!(debug_assertions) { "debug" } else { "optimized" };
    format!("{}-{}, {cpus} logical cpu(s), {build} build, f32 network", std::env::consts::OS, std::env::consts::ARCH)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times `n_blocks` decodes of fresh blocks received at 4 dB.
pub fn measure_latency(
    decoder: Decoder<'_>,
    code: &CodeSpec,
    block_length: usize,
    n_blocks: usize,
    seed: u64,
) -> Result<LatencyReport> {
    if n_blocks == 0 {
        return Err(Error::InvalidArgument("n_blocks must be >= 1".into()));
    }
    let mut rng = stream(seed, Domain::Misc, 0x1a7);
    let sigma = noise_sigma(SnrPoint::new(4.0)?, code.rate())?;
    let msgs = (0..n_blocks).map(|_| random_message(block_length, &mut rng)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MessageWord> = msgs.iter().collect();
    let (single, batched) = match decoder {
        Decoder::UNet(net) => {
            let grid = grid_spec_for(block_length, code.memory() as usize, net.config().depth)?;
            let batch = make_batch(code, &grid, &refs, sigma, &mut rng)?;
            let per = 2 * grid.cells();
            let [_, c, h, w] = batch.input.shape();
            let mut single = Vec::with_capacity(n_blocks);
            for i in 0..n_blocks {
                let one = Tensor::from_vec([1, c, h, w], batch.input.data()[i * per..(i + 1) * per].to_vec())?;
                let t0 = Instant::now();
                std::hint::black_box(net.predict(&one)?);
                single.push(t0.elapsed().as_secs_f64());
            }
            let t0 = Instant::now();
            std::hint::black_box(net.predict(&batch.input)?);
            (single, t0.elapsed().as_secs_f64())
        }
        Decoder::Viterbi => {
            let trellis = build_trellis(code);
            let rx = refs.iter().map(|m| transmit(code, m, sigma, &mut rng)).collect::<Result<Vec<_>>>()?;
            let mut single = Vec::with_capacity(n_blocks);
            for r in &rx {
                let t0 = Instant::now();
                std::hint::black_box(viterbi_decode(&trellis, r)?);
                single.push(t0.elapsed().as_secs_f64());
            }
            let t0 = Instant::now();
            for r in &rx {
                std::hint::black_box(viterbi_decode(&trellis, r)?);
            }
            (single, t0.elapsed().as_secs_f64())
        }
        Decoder::Uncoded => {
            return Err(Error::InvalidArgument("uncoded transmission has no decoder to time".into()));
        }
    };
    Ok(LatencyReport {
        decoder: decoder.name().to_string(),
        n_blocks,
        block_length,
        median_block_secs: median(single),
        batched_block_secs: batched / n_blocks as f64,
        environment: environment(),
    })
}
