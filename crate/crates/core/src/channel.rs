//! BPSK mapping and the AWGN channel.
//!
//! SNR is Eb/N0 per information bit, so the code rate enters the noise
//! standard deviation. Bit 0 maps to `+1.0` and bit 1 to `-1.0`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::coding::check_binary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock(Vec<f64>);

impl SymbolBlock {
    pub fn new(symbols: Vec<f64>) -> Self {
        Self(symbols)
    }

    pub fn symbols(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_symbols(self) -> Vec<f64> {
        self.0
    }

    /// Threshold at zero: positive (or zero) symbols decide bit 0.
    pub fn hard_decision(&self) -> Vec<u8> {
        self.0.iter().map(|&s| u8::from(s < 0.0)).collect()
    }
}

/// Eb/N0 in decibels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SnrPoint(f64);

impl SnrPoint {
    pub fn new(eb_n0_db: f64) -> Result<Self> {
        if !eb_n0_db.is_finite() {
            return Err(Error::InvalidArgument(format!("snr {eb_n0_db} is not finite")));
        }
        Ok(Self(eb_n0_db))
    }

    pub fn db(self) -> f64 {
        self.0
    }

    pub fn linear(self) -> f64 {
        10f64.powf(self.0 / 10.0)
    }
}

pub fn modulate(bits: &[u8]) -> Result<SymbolBlock> {
    check_binary(bits)?;
    Ok(SymbolBlock(bits.iter().map(|&b| 1.0 - 2.0 * b as f64).collect()))
}

/// `sigma = sqrt(1 / (2 * rate * Eb/N0))` for unit-energy symbols.
pub fn noise_sigma(snr: SnrPoint, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("code rate {rate} outside (0, 1]")));
    }
    Ok((1.0 / (2.0 * rate * snr.linear())).sqrt())
}

/// Adds i.i.d. `N(0, sigma^2)` noise, drawing one ziggurat sample per symbol.
pub fn add_awgn<R: Rng + ?Sized>(block: &SymbolBlock, sigma: f64, rng: &mut R) -> Result<SymbolBlock> {
    let mut out = block.clone();
    add_awgn_in_place(&mut out.0, sigma, rng)?;
    Ok(out)
}

pub fn add_awgn_in_place<R: Rng + ?Sized>(symbols: &mut [f64], sigma: f64, rng: &mut R) -> Result<()> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    for s in symbols.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *s += sigma * z;
    }
    Ok(())
}
