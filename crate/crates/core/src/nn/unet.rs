//! U-shaped fully convolutional decoder.
//!
//! Each block is `relu(conv3x3(relu(conv3x3(x)))) + proj(x)`, where `proj`
//! is the identity when widths agree and a 1x1 convolution otherwise. The
//! contracting path applies a block then 2x2 max pooling per level; the
//! expansive path upsamples with a 2x2 transposed convolution, concatenates
//! the matching skip tensor and applies a block. A 1x1 convolution and a
//! sigmoid produce one probability per cell. There are no dense layers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UNetConfig {
    pub depth: u32,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl UNetConfig {
    /// Two input channels (one per coded stream), one output probability, 3x3 kernels.
    pub fn new(depth: u32, base_channels: usize) -> Self {
        Self { depth, base_channels, in_channels: 2, out_channels: 1, kernel: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("channel counts must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel {} must be odd", self.kernel)));
        }
        if self.depth > 12 {
            return Err(Error::InvalidArgument(format!("depth {} is too large", self.depth)));
        }
        Ok(())
    }

    /// Channel width at level `i` (level `depth` is the bottleneck).
    pub fn width(&self, level: u32) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Conv {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    proj: Option<Conv>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    down: Vec<Block>,
    bottleneck: Block,
    up: Vec<(Conv, Block)>,
    head: Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    cfg: UNetConfig,
    params: Vec<Param<T>>,
    layout: Layout,
}

/// Trainable scalars in a layer: `out * in * k * k + out`.
pub fn conv_param_count(out_c: usize, in_c: usize, k: usize) -> usize {
    out_c * in_c * k * k + out_c
}

struct Builder<T> {
    params: Vec<Param<T>>,
    shapes_only: bool,
    rng: crate::rng::StreamRng,
}

impl<T: Real> Builder<T> {
    fn tensor(&mut self, name: String, shape: [usize; 4], std: f64) -> usize {
        let value = if self.shapes_only || std == 0.0 {
            Tensor::zeros(shape)
        } else {
            let normal = Normal::new(0.0, std).expect("finite std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64(normal.sample(&mut self.rng))).collect();
            Tensor::from_vec(shape, data).expect("shape matches")
        };
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn conv(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) -> Conv {
        self.conv_scaled(name, out_c, in_c, k, 1.0)
    }

    fn conv_scaled(&mut self, name: &str, out_c: usize, in_c: usize, k: usize, gain: f64) -> Conv {
        let std = gain * (2.0 / (in_c * k * k) as f64).sqrt();
        let w = self.tensor(format!("{name}.weight"), [out_c, in_c, k, k], std);
        let b = self.tensor(format!("{name}.bias"), [out_c, 1, 1, 1], 0.0);
        Conv { w, b }
    }

    fn upconv(&mut self, name: &str, in_c: usize, out_c: usize) -> Conv {
        // each output cell sees exactly one tap per input channel
        let std = (2.0 / in_c as f64).sqrt();
        let w = self.tensor(format!("{name}.weight"), [in_c, out_c, 2, 2], std);
        let b = self.tensor(format!("{name}.bias"), [out_c, 1, 1, 1], 0.0);
        Conv { w, b }
    }

    fn block(&mut self, name: &str, in_c: usize, out_c: usize, k: usize) -> Block {
        let conv1 = self.conv(&format!("{name}.conv1"), out_c, in_c, k);
        let conv2 = self.conv(&format!("{name}.conv2"), out_c, out_c, k);
        let proj = (in_c != out_c).then(|| self.conv(&format!("{name}.proj"), out_c, in_c, 1));
        Block { conv1, conv2, proj }
    }
}

fn assemble<T: Real>(cfg: &UNetConfig, seed: u64, shapes_only: bool) -> Result<UNet<T>> {
    cfg.validate()?;
    let mut b = Builder::<T> { params: Vec::new(), shapes_only, rng: stream(seed, Domain::Init, 0) };
    let k = cfg.kernel;
    let mut down = Vec::new();
    let mut in_c = cfg.in_channels;
    for level in 0..cfg.depth {
        let w = cfg.width(level);
        down.push(b.block(&format!("down{level}"), in_c, w, k));
        in_c = w;
    }
    let bottleneck = b.block("bottleneck", in_c, cfg.width(cfg.depth), k);
    let mut up = Vec::new();
    for level in (0..cfg.depth).rev() {
        let w = cfg.width(level);
        let upconv = b.upconv(&format!("up{level}.upconv"), cfg.width(level + 1), w);
        let block = b.block(&format!("up{level}"), 2 * w, w, k);
        up.push((upconv, block));
    }
    // A zero head starts every output at 0.5. He-scaled heads sit on top of
    // residual sums that grow with depth and saturate the sigmoid at init.
    let head = b.conv_scaled("head", cfg.out_channels, cfg.width(0), 1, 0.0);
    Ok(UNet { cfg: *cfg, params: b.params, layout: Layout { down, bottleneck, up, head } })
}

pub fn build_unet<T: Real>(cfg: &UNetConfig, init_seed: u64) -> Result<UNet<T>> {
    assemble(cfg, init_seed, false)
}

/// Per-layer parameter table row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    pub shape: [usize; 4],
    pub count: usize,
}

impl<T: Real> UNet<T> {
    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn summary(&self) -> Vec<LayerSummary> {
        self.params
            .iter()
            .map(|p| LayerSummary { name: p.name.clone(), shape: p.value.shape(), count: p.value.len() })
            .collect()
    }

    /// Replaces all parameters by name; shapes must match the architecture.
    pub fn load_params(&mut self, values: Vec<(String, Tensor<T>)>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (p, (name, value)) in self.params.iter_mut().zip(values) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            cfg: self.cfg,
            params: self.params.iter().map(|p| Param { name: p.name.clone(), value: p.value.cast() }).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Records parameters as gradient-taking leaves, in `params()` order.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        let unit = 1usize << self.cfg.depth;
        if c != self.cfg.in_channels {
            return Err(Error::Shape(format!("network takes {} channels, got {c}", self.cfg.in_channels)));
        }
        if h % unit != 0 || w % unit != 0 {
            return Err(Error::Shape(format!("spatial dims {h}x{w} not divisible by {unit}")));
        }
        Ok(())
    }

    /// Builds the forward graph on `tape`; returns probabilities `[N, 1, H, W]`.
    pub fn forward(&self, tape: &mut Tape<T>, params: &[Var], input: Var) -> Result<Var> {
        self.check_input(tape.value(input).shape())?;
        let conv = |tape: &mut Tape<T>, c: Conv, x: Var| tape.conv2d(x, params[c.w], params[c.b]);
        let block = |tape: &mut Tape<T>, blk: &Block, x: Var| -> Result<Var> {
            let h = conv(tape, blk.conv1, x)?;
            let h = tape.relu(h);
            let h = conv(tape, blk.conv2, h)?;
            let h = tape.relu(h);
            let skip = match blk.proj {
                Some(p) => conv(tape, p, x)?,
                None => x,
            };
            tape.add(h, skip)
        };

        let mut x = input;
        let mut skips = Vec::with_capacity(self.layout.down.len());
        for blk in &self.layout.down {
            let h = block(tape, blk, x)?;
            skips.push(h);
            x = tape.maxpool2(h)?;
        }
        x = block(tape, &self.layout.bottleneck, x)?;
        for ((upconv, blk), skip) in self.layout.up.iter().zip(skips.iter().rev()) {
            let u = tape.upconv2(x, params[upconv.w], params[upconv.b])?;
            let cat = tape.concat(u, *skip)?;
            x = block(tape, blk, cat)?;
        }
        let logits = conv(tape, self.layout.head, x)?;
        Ok(tape.sigmoid(logits))
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &params, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Exact parameter count of the architecture without allocating weights.
pub fn count_params(cfg: &UNetConfig) -> Result<usize> {
    Ok(assemble::<f32>(cfg, 0, true)?.param_count())
}

/// Draws a uniform value in `[lo, hi)`; used by tests and benchmarks.
pub fn uniform_tensor<T: Real, R: Rng>(shape: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(lo..hi))).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}
