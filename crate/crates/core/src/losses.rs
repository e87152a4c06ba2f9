//! Mask-aware training losses (BCE, MSE/PSNR, SSIM) and evaluation
//! metrics (hard-decision BER, NVE).
//!
//! Every function reads only cells where the mask is set, so whatever sits
//! in padding cells, including NaN, cannot affect a result.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Real, Tape, Tensor, Var};

/// Probability clamp for the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;
/// Dynamic range of bit grids. PSNR and SSIM constants are scaled to it.
pub const PEAK: f64 = 1.0;
pub const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
pub const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);
pub const SSIM_C3: f64 = SSIM_C2 / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Bce,
    Mse,
    Ssim,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
            LossKind::Ssim => "ssim",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bce" => Ok(LossKind::Bce),
            "mse" => Ok(LossKind::Mse),
            "ssim" => Ok(LossKind::Ssim),
            "psnr" => Err(Error::InvalidArgument(
                "loss \"psnr\" is not trainable directly; use mse (PSNR is a monotone function of it)".into(),
            )),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss \"{other}\"; expected one of bce, mse, ssim"
            ))),
        }
    }
}

fn masked_count(len: usize, mask: &[bool]) -> Result<usize> {
    if mask.len() != len {
        return Err(Error::Shape(format!("mask has {} cells, grid has {len}", mask.len())));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

fn check_pair(f: &[f64], g: &[f64]) -> Result<()> {
    if f.len() != g.len() {
        return Err(Error::Shape(format!("grids have {} and {} cells", f.len(), g.len())));
    }
    Ok(())
}

/// Mean binary cross-entropy over masked cells and its gradient in `p`.
pub fn bce_with_grad(p: &[f64], u: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_pair(p, u)?;
    let n = masked_count(p.len(), mask)? as f64;
    let mut grad = vec![0.0; p.len()];
    let mut total = 0.0;
    for k in (0..p.len()).filter(|&k| mask[k]) {
        let raw = p[k];
        let pc = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= u[k] * pc.ln() + (1.0 - u[k]) * (1.0 - pc).ln();
        if raw > BCE_EPS && raw < 1.0 - BCE_EPS {
            grad[k] = (pc - u[k]) / (pc * (1.0 - pc)) / n;
        }
    }
    Ok((total / n, grad))
}

pub fn bce_loss(p: &[f64], u: &[f64], mask: &[bool]) -> Result<f64> {
    Ok(bce_with_grad(p, u, mask)?.0)
}

/// Mean squared error over masked cells and its gradient in `f`.
pub fn mse_with_grad(f: &[f64], g: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_pair(f, g)?;
    let n = masked_count(f.len(), mask)? as f64;
    let mut grad = vec![0.0; f.len()];
    let mut total = 0.0;
    for k in (0..f.len()).filter(|&k| mask[k]) {
        let d = f[k] - g[k];
        total += d * d;
        grad[k] = 2.0 * d / n;
    }
    Ok((total / n, grad))
}

/// `10 log10(PEAK^2 / mse)`, `+inf` when the grids agree exactly.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn mse_and_psnr(f: &[f64], g: &[f64], mask: &[bool]) -> Result<(f64, f64)> {
    let (mse, _) = mse_with_grad(f, g, mask)?;
    Ok((mse, psnr_from_mse(mse)))
}

/// Luminance, contrast and structure terms of a single-window SSIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimComponents {
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
}

impl SsimComponents {
    pub fn ssim(&self) -> f64 {
        self.luminance * self.contrast * self.structure
    }
}

struct Moments {
    n: f64,
    mu_f: f64,
    mu_g: f64,
    var_f: f64,
    var_g: f64,
    cov: f64,
}

fn moments(f: &[f64], g: &[f64], mask: &[bool]) -> Result<Moments> {
    check_pair(f, g)?;
    let n = masked_count(f.len(), mask)? as f64;
    let cells = || (0..f.len()).filter(|&k| mask[k]);
    let mu_f = cells().map(|k| f[k]).sum::<f64>() / n;
    let mu_g = cells().map(|k| g[k]).sum::<f64>() / n;
    let (mut var_f, mut var_g, mut cov) = (0.0, 0.0, 0.0);
    for k in cells() {
        let (df, dg) = (f[k] - mu_f, g[k] - mu_g);
        var_f += df * df;
        var_g += dg * dg;
        cov += df * dg;
    }
    Ok(Moments { n, mu_f, mu_g, var_f: var_f / n, var_g: var_g / n, cov: cov / n })
}

/// Global statistics SSIM over the masked cells (population moments).
pub fn ssim_components(f: &[f64], g: &[f64], mask: &[bool]) -> Result<SsimComponents> {
    let m = moments(f, g, mask)?;
    let (sf, sg) = (m.var_f.sqrt(), m.var_g.sqrt());
    Ok(SsimComponents {
        luminance: (2.0 * m.mu_f * m.mu_g + SSIM_C1) / (m.mu_f * m.mu_f + m.mu_g * m.mu_g + SSIM_C1),
        contrast: (2.0 * sf * sg + SSIM_C2) / (m.var_f + m.var_g + SSIM_C2),
        structure: (m.cov + SSIM_C3) / (sf * sg + SSIM_C3),
    })
}

/// SSIM and its gradient in `f`.
///
/// With `C3 = C2 / 2` the contrast-structure product reduces to
/// `(2 cov + C2) / (var_f + var_g + C2)`, which stays differentiable where a
/// standard deviation is zero.
pub fn ssim_with_grad(f: &[f64], g: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    let m = moments(f, g, mask)?;
    let lum_num = 2.0 * m.mu_f * m.mu_g + SSIM_C1;
    let lum_den = m.mu_f * m.mu_f + m.mu_g * m.mu_g + SSIM_C1;
    let cs_num = 2.0 * m.cov + SSIM_C2;
    let cs_den = m.var_f + m.var_g + SSIM_C2;
    let lum = lum_num / lum_den;
    let cs = cs_num / cs_den;

    let dlum = (2.0 * m.mu_g * lum_den - lum_num * 2.0 * m.mu_f) / (m.n * lum_den * lum_den);
    let mut grad = vec![0.0; f.len()];
    for k in (0..f.len()).filter(|&k| mask[k]) {
        let dcs_num = 2.0 * (g[k] - m.mu_g) / m.n;
        let dcs_den = 2.0 * (f[k] - m.mu_f) / m.n;
        let dcs = (dcs_num * cs_den - cs_num * dcs_den) / (cs_den * cs_den);
        grad[k] = dlum * cs + lum * dcs;
    }
    Ok((lum * cs, grad))
}

pub fn ssim(f: &[f64], g: &[f64], mask: &[bool]) -> Result<f64> {
    Ok(ssim_with_grad(f, g, mask)?.0)
}

pub fn ssim_loss(f: &[f64], g: &[f64], mask: &[bool]) -> Result<f64> {
    Ok(1.0 - ssim(f, g, mask)?)
}

/// Loss value and gradient for one grid under `kind`.
pub fn loss_with_grad(kind: LossKind, p: &[f64], target: &[f64], mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    match kind {
        LossKind::Bce => bce_with_grad(p, target, mask),
        LossKind::Mse => mse_with_grad(p, target, mask),
        LossKind::Ssim => {
            let (s, mut grad) = ssim_with_grad(p, target, mask)?;
            grad.iter_mut().for_each(|x| *x = -*x);
            Ok((1.0 - s, grad))
        }
    }
}

/// Records the batch-mean loss of `prob` (`[N, 1, H, W]`) against `target`
/// on the tape. `mask` covers one `H * W` plane and applies to every sample.
pub fn loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    kind: LossKind,
    prob: Var,
    target: &Tensor<T>,
    mask: &[bool],
) -> Result<Var> {
    let p = tape.value(prob);
    if p.shape() != target.shape() || p.channels() != 1 {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} must agree with one channel",
            p.shape(),
            target.shape()
        )));
    }
    let n = p.batch();
    let plane = p.plane();
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for s in 0..n {
        let ps: Vec<f64> = p.sample(s).iter().map(|x| x.as_f64()).collect();
        let ts: Vec<f64> = target.sample(s).iter().map(|x| x.as_f64()).collect();
        debug_assert_eq!(ps.len(), plane);
        let (value, g) = loss_with_grad(kind, &ps, &ts, mask)?;
        total += value;
        grad.extend(g.into_iter().map(|x| T::from_f64(x / n as f64)));
    }
    let grad = Tensor::from_vec(p.shape(), grad)?;
    tape.scalar_fn(prob, total / n as f64, grad)
}

/// Hard-decision bit error counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BerReport {
    pub bits_counted: u64,
    pub bit_errors: u64,
}

impl BerReport {
    pub fn new(bits_counted: u64, bit_errors: u64) -> Self {
        Self { bits_counted, bit_errors }
    }

    pub fn ber(&self) -> f64 {
        if self.bits_counted == 0 {
            0.0
        } else {
            self.bit_errors as f64 / self.bits_counted as f64
        }
    }

    pub fn merge(&mut self, other: BerReport) {
        self.bits_counted += other.bits_counted;
        self.bit_errors += other.bit_errors;
    }
}

/// Counts `k` with `(p_k > 0.5) != u_k`; `p_k = 0.5` decides bit 0.
pub fn ber(p: &[f64], u: &[u8]) -> Result<BerReport> {
    if p.len() != u.len() {
        return Err(Error::LengthMismatch { expected: u.len(), actual: p.len() });
    }
    if p.is_empty() {
        return Err(Error::EmptyMessage);
    }
    let errors = p.iter().zip(u).filter(|(&pk, &uk)| u8::from(pk > 0.5) != uk).count();
    Ok(BerReport::new(p.len() as u64, errors as u64))
}

/// Mean over SNR points of `ber_nnd / ber_viterbi`. A Viterbi BER of
/// exactly zero is replaced by `1 / bits_per_point`.
pub fn nve(ber_nnd: &[f64], ber_viterbi: &[f64], bits_per_point: u64) -> Result<f64> {
    let floors = vec![bits_per_point; ber_viterbi.len()];
    nve_with_floors(ber_nnd, ber_viterbi, &floors)
}

/// [`nve`] with a separate bit count per SNR point.
pub fn nve_with_floors(ber_nnd: &[f64], ber_viterbi: &[f64], bits_per_point: &[u64]) -> Result<f64> {
    if ber_nnd.is_empty() {
        return Err(Error::InvalidArgument("nve needs at least one SNR point".into()));
    }
    if ber_nnd.len() != ber_viterbi.len() || bits_per_point.len() != ber_viterbi.len() {
        return Err(Error::LengthMismatch { expected: ber_viterbi.len(), actual: ber_nnd.len() });
    }
    let mut sum = 0.0;
    for ((&a, &b), &bits) in ber_nnd.iter().zip(ber_viterbi).zip(bits_per_point) {
        if !(a >= 0.0 && b >= 0.0) {
            return Err(Error::InvalidArgument(format!("negative or NaN BER ({a}, {b})")));
        }
        if bits == 0 {
            return Err(Error::InvalidArgument("bits per point must be >= 1".into()));
        }
        let denom = if b == 0.0 { 1.0 / bits as f64 } else { b };
        sum += a / denom;
    }
    Ok(sum / ber_nnd.len() as f64)
}
