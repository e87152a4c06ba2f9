//! Embedding of a received codeword into a square two-channel grid.
//!
//! Coded stream `c` fills channel `c` in row-major order, one trellis step
//! per cell, so input cell `k` and target cell `k` refer to the same time
//! step. Cells past the codeword are padded with `0.0`, which sits halfway
//! between the two BPSK points. The target grid carries only the `L`
//! information bits; tail steps are present in the input but masked out of
//! the target.

use crate::channel::SymbolBlock;
use crate::coding::MessageWord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    msg_len: usize,
    memory: usize,
    side: usize,
    depth: u32,
}

impl GridSpec {
    pub fn msg_len(&self) -> usize {
        self.msg_len
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn valid_steps(&self) -> usize {
        self.msg_len + self.memory
    }

    pub fn depth_divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn cells(&self) -> usize {
        self.side * self.side
    }

    /// Row-major mask over the `L + v` codeword steps.
    pub fn input_mask(&self) -> Vec<bool> {
        (0..self.cells()).map(|k| k < self.valid_steps()).collect()
    }

    /// Row-major mask over the `L` information bits.
    pub fn target_mask(&self) -> Vec<bool> {
        (0..self.cells()).map(|k| k < self.msg_len).collect()
    }
}

/// Smallest square side that is a multiple of `2^depth` and holds `L + v` cells.
pub fn grid_spec_for(msg_len: usize, memory: usize, depth: u32) -> Result<GridSpec> {
    if msg_len == 0 {
        return Err(Error::EmptyMessage);
    }
    if depth > 16 {
        return Err(Error::InvalidArgument(format!("network depth {depth} is unreasonably large")));
    }
    let unit = 1usize << depth;
    let need = msg_len + memory;
    let mut side = unit;
    while side * side < need {
        side += unit;
    }
    Ok(GridSpec { msg_len, memory, side, depth })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputGrid {
    /// `[2, side, side]`, channel-major.
    values: Vec<f64>,
    mask: Vec<bool>,
    side: usize,
}

impl InputGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.side * self.side;
        &self.values[c * n..(c + 1) * n]
    }

    /// Reads the masked cells back into interleaved symbol order.
    pub fn to_symbols(&self) -> SymbolBlock {
        let (a, b) = (self.channel(0), self.channel(1));
        let symbols = self
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .flat_map(|(k, _)| [a[k], b[k]])
            .collect();
        SymbolBlock::new(symbols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    /// `[1, side, side]`
    values: Vec<f64>,
    mask: Vec<bool>,
    side: usize,
}

impl TargetGrid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn side(&self) -> usize {
        self.side
    }
}

pub fn to_input_grid(received: &SymbolBlock, gs: &GridSpec) -> Result<InputGrid> {
    let rx = received.symbols();
    let expected = 2 * gs.valid_steps();
    if rx.len() != expected {
        return Err(Error::LengthMismatch { expected, actual: rx.len() });
    }
    let n = gs.cells();
    let mut values = vec![0.0; 2 * n];
    for (k, pair) in rx.chunks_exact(2).enumerate() {
        values[k] = pair[0];
        values[n + k] = pair[1];
    }
    Ok(InputGrid { values, mask: gs.input_mask(), side: gs.side })
}

pub fn to_target_grid(msg: &MessageWord, gs: &GridSpec) -> Result<TargetGrid> {
    if msg.len() != gs.msg_len {
        return Err(Error::LengthMismatch { expected: gs.msg_len, actual: msg.len() });
    }
    let mut values = vec![0.0; gs.cells()];
    for (cell, &b) in values.iter_mut().zip(msg.bits()) {
        *cell = b as f64;
    }
    Ok(TargetGrid { values, mask: gs.target_mask(), side: gs.side })
}

/// Reads `p_1..p_L` row-major from a `[1, side, side]` probability grid.
pub fn from_output_grid<T: Copy + Into<f64>>(prob_grid: &[T], gs: &GridSpec) -> Result<Vec<f64>> {
    if prob_grid.len() != gs.cells() {
        return Err(Error::Shape(format!(
            "output grid has {} cells, grid spec expects {}x{}",
            prob_grid.len(),
            gs.side,
            gs.side
        )));
    }
    Ok(prob_grid[..gs.msg_len].iter().map(|&p| p.into()).collect())
}
