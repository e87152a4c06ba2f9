//! Rate-1/2 feedforward convolutional codes with zero-tail termination.
//!
//! Generators are tap masks over the window `[u_t, u_{t-1}, .., u_{t-v}]`:
//! bit `v` multiplies the current input and bit 0 the oldest delayed input,
//! so the textbook octal pair `(7, 5)` with `v = 2` is the classic
//! four-state code.

use crate::error::{Error, Result};

/// Largest supported encoder memory. Trellis tables grow as `2^v`.
pub const MAX_MEMORY: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodeSpec {
    generators: [u32; 2],
    memory: u32,
}

impl CodeSpec {
    pub fn new(generators: [u32; 2], memory: u32) -> Result<Self> {
        if memory > MAX_MEMORY {
            return Err(Error::InvalidCode(format!(
                "memory {memory} exceeds the supported maximum {MAX_MEMORY}"
            )));
        }
        let width = memory + 1;
        for &g in &generators {
            if g >> width != 0 {
                return Err(Error::GeneratorMemoryMismatch { generator: g, width });
            }
        }
        let current_tap = 1u32 << memory;
        if generators.iter().all(|g| g & current_tap == 0) {
            return Err(Error::InvalidCode(
                "no generator taps the current input".to_string(),
            ));
        }
        Ok(Self { generators, memory })
    }

    /// Parses octal generator strings such as `["7", "5"]` or `["133", "171"]`.
    pub fn from_octal<S: AsRef<str>>(generators: &[S], memory: u32) -> Result<Self> {
        if generators.len() != 2 {
            return Err(Error::InvalidCode(format!(
                "rate 1/2 codes take exactly 2 generators, got {}",
                generators.len()
            )));
        }
        let mut taps = [0u32; 2];
        for (slot, s) in taps.iter_mut().zip(generators) {
            let s = s.as_ref().trim();
            *slot = u32::from_str_radix(s, 8)
                .map_err(|_| Error::InvalidCode(format!("'{s}' is not an octal generator")))?;
        }
        Self::new(taps, memory)
    }

    pub fn generators(&self) -> [u32; 2] {
        self.generators
    }

    pub fn memory(&self) -> u32 {
        self.memory
    }

    pub fn num_states(&self) -> usize {
        1usize << self.memory
    }

    pub fn rate(&self) -> f64 {
        0.5
    }

    /// Generators as octal strings, e.g. `["7", "5"]`.
    pub fn octal(&self) -> [String; 2] {
        [format!("{:o}", self.generators[0]), format!("{:o}", self.generators[1])]
    }

    /// Short label such as `(7,5)`.
    pub fn label(&self) -> String {
        let [a, b] = self.octal();
        format!("({a},{b})")
    }

    /// Output pair and next state for one encoder step.
    ///
    /// `state` holds the previous `v` inputs, most recent at bit `v - 1`.
    pub fn step(&self, state: usize, input: u8) -> ([u8; 2], usize) {
        let v = self.memory;
        let window = ((input as u32) << v) | state as u32;
        let out = [
            ((window & self.generators[0]).count_ones() & 1) as u8,
            ((window & self.generators[1]).count_ones() & 1) as u8,
        ];
        (out, (window >> 1) as usize)
    }
}

/// Classical rate-1/2 codes keyed by memory. These are the usual
/// maximum-free-distance generators, not values taken from any measurement.
pub fn standard_code(memory: u32) -> Option<CodeSpec> {
    let octal: [&str; 2] = match memory {
        1 => ["3", "1"],
        2 => ["7", "5"],
        3 => ["17", "15"],
        4 => ["35", "23"],
        5 => ["75", "53"],
        6 => ["133", "171"],
        7 => ["247", "371"],
        8 => ["561", "753"],
        _ => return None,
    };
    CodeSpec::from_octal(&octal, memory).ok()
}

/// Information bits `u_1..u_L`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MessageWord(Vec<u8>);

impl MessageWord {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::EmptyMessage);
        }
        check_binary(&bits)?;
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_bits(self) -> Vec<u8> {
        self.0
    }
}

pub(crate) fn check_binary(bits: &[u8]) -> Result<()> {
    match bits.iter().position(|&b| b > 1) {
        Some(index) => Err(Error::NonBinary { index, value: bits[index] }),
        None => Ok(()),
    }
}

/// One output pair per trellis step, `L + v` steps in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeWord {
    pairs: Vec<[u8; 2]>,
}

impl CodeWord {
    pub fn from_pairs(pairs: Vec<[u8; 2]>) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            check_binary(p).map_err(|_| Error::NonBinary { index: i, value: p[0].max(p[1]) })?;
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[[u8; 2]] {
        &self.pairs
    }

    pub fn steps(&self) -> usize {
        self.pairs.len()
    }

    /// `[b0(0), b1(0), b0(1), b1(1), ..]`
    pub fn interleave(&self) -> Vec<u8> {
        self.pairs.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn deinterleave(flat: &[u8]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "interleaved codeword has odd length {}",
                flat.len()
            )));
        }
        check_binary(flat)?;
        Ok(Self { pairs: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect() })
    }
}

/// Encodes `msg` and flushes the register with `v` zero tail bits.
pub fn encode(spec: &CodeSpec, msg: &MessageWord) -> CodeWord {
    let tail = std::iter::repeat_n(0u8, spec.memory() as usize);
    let mut state = 0usize;
    let pairs = msg
        .bits()
        .iter()
        .copied()
        .chain(tail)
        .map(|u| {
            let (out, next) = spec.step(state, u);
            state = next;
            out
        })
        .collect();
    debug_assert_eq!(state, 0);
    CodeWord { pairs }
}

/// Convenience wrapper over raw bits.
pub fn encode_bits(spec: &CodeSpec, bits: &[u8]) -> Result<CodeWord> {
    Ok(encode(spec, &MessageWord::new(bits.to_vec())?))
}
