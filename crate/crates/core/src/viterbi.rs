//! Soft-decision maximum-likelihood decoding on the code trellis.

use crate::channel::{modulate, SymbolBlock};
use crate::coding::{encode, CodeSpec, MessageWord};
use crate::error::{Error, Result};

/// Upper bound on message length accepted by [`brute_force_ml`].
pub const ORACLE_MAX_BITS: usize = 20;

#[derive(Debug, Clone)]
pub struct Trellis {
    spec: CodeSpec,
    num_states: usize,
    /// `next_state[2 * s + u]`
    next_state: Vec<usize>,
    /// `outputs[2 * s + u]`
    outputs: Vec<[u8; 2]>,
    /// Incoming transitions `(prev_state, input)` per state, ascending by `prev_state`.
    predecessors: Vec<Vec<(usize, u8)>>,
}

impl Trellis {
    pub fn new(spec: &CodeSpec) -> Self {
        let num_states = spec.num_states();
        let mut next_state = Vec::with_capacity(2 * num_states);
        let mut outputs = Vec::with_capacity(2 * num_states);
        let mut predecessors = vec![Vec::new(); num_states];
        for s in 0..num_states {
            for u in 0..2u8 {
                let (out, next) = spec.step(s, u);
                next_state.push(next);
                outputs.push(out);
                predecessors[next].push((s, u));
            }
        }
        Self { spec: *spec, num_states, next_state, outputs, predecessors }
    }

    pub fn spec(&self) -> &CodeSpec {
        &self.spec
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn next_state(&self, state: usize, input: u8) -> usize {
        self.next_state[2 * state + input as usize]
    }

    pub fn output(&self, state: usize, input: u8) -> [u8; 2] {
        self.outputs[2 * state + input as usize]
    }

    /// Number of information bits carried by a received block of `len` symbols.
    pub fn message_len(&self, len: usize) -> Result<usize> {
        let v = self.spec.memory() as usize;
        if !len.is_multiple_of(2) || len / 2 <= v {
            return Err(Error::InvalidArgument(format!(
                "received length {len} is not 2(L+{v}) for any L >= 1"
            )));
        }
        Ok(len / 2 - v)
    }
}

pub fn build_trellis(spec: &CodeSpec) -> Trellis {
    Trellis::new(spec)
}

/// Returns the decoded message and its squared Euclidean path metric.
///
/// Start and end state are both 0. On equal metrics the survivor through
/// the lower-numbered predecessor state is kept.
pub fn viterbi_decode(trellis: &Trellis, received: &SymbolBlock) -> Result<(MessageWord, f64)> {
    let rx = received.symbols();
    let msg_len = trellis.message_len(rx.len())?;
    let steps = rx.len() / 2;
    let ns = trellis.num_states;

    // Branch metric for each of the four possible output pairs.
    let pair_metric = |t: usize, out: [u8; 2]| -> f64 {
        let x0 = 1.0 - 2.0 * out[0] as f64;
        let x1 = 1.0 - 2.0 * out[1] as f64;
        (rx[2 * t] - x0).powi(2) + (rx[2 * t + 1] - x1).powi(2)
    };

    let mut metric = vec![f64::INFINITY; ns];
    metric[0] = 0.0;
    let mut next = vec![f64::INFINITY; ns];
    // survivors[t * ns + s] = (prev_state << 1 | input) of the best branch into s at t+1
    let mut survivors = vec![0u32; steps * ns];
    let mut bm = [0.0f64; 4];

    for t in 0..steps {
        for (idx, m) in bm.iter_mut().enumerate() {
            *m = pair_metric(t, [(idx >> 1) as u8, (idx & 1) as u8]);
        }
        for (s_next, preds) in trellis.predecessors.iter().enumerate() {
            let mut best = f64::INFINITY;
            let mut best_branch = 0u32;
            for &(s, u) in preds {
                let out = trellis.outputs[2 * s + u as usize];
                let cand = metric[s] + bm[((out[0] as usize) << 1) | out[1] as usize];
                if cand < best {
                    best = cand;
                    best_branch = ((s as u32) << 1) | u as u32;
                }
            }
            next[s_next] = best;
            survivors[t * ns + s_next] = best_branch;
        }
        std::mem::swap(&mut metric, &mut next);
    }

    let path_metric = metric[0];
    let mut bits = vec![0u8; steps];
    let mut state = 0usize;
    for t in (0..steps).rev() {
        let branch = survivors[t * ns + state] as usize;
        bits[t] = (branch & 1) as u8;
        state = branch >> 1;
    }
    bits.truncate(msg_len);
    Ok((MessageWord::new(bits)?, path_metric))
}

/// Squared Euclidean distance between `received` and the BPSK image of `codeword_bits`.
pub fn squared_distance(received: &[f64], codeword_bits: &[u8]) -> f64 {
    received
        .iter()
        .zip(codeword_bits)
        .map(|(r, &b)| (r - (1.0 - 2.0 * b as f64)).powi(2))
        .sum()
}

/// Exhaustive ML decoding: scores all `2^L` messages, keeping the
/// lexicographically smallest on ties.
pub fn brute_force_ml(spec: &CodeSpec, received: &SymbolBlock) -> Result<MessageWord> {
    let rx = received.symbols();
    let v = spec.memory() as usize;
    if !rx.len().is_multiple_of(2) || rx.len() / 2 <= v {
        return Err(Error::InvalidArgument(format!(
            "received length {} is not 2(L+{v}) for any L >= 1",
            rx.len()
        )));
    }
    let msg_len = rx.len() / 2 - v;
    if msg_len > ORACLE_MAX_BITS {
        return Err(Error::OracleLimit { max: ORACLE_MAX_BITS, requested: msg_len });
    }
    let mut best: Option<(f64, Vec<u8>)> = None;
    for m in 0u32..(1u32 << msg_len) {
        // first message bit is the most significant, so ascending m is lexicographic
        let bits: Vec<u8> = (0..msg_len).map(|i| ((m >> (msg_len - 1 - i)) & 1) as u8).collect();
        let msg = MessageWord::new(bits)?;
        let symbols = modulate(&encode(spec, &msg).interleave())?;
        let d: f64 = rx.iter().zip(symbols.symbols()).map(|(r, x)| (r - x).powi(2)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, msg.into_bits()));
        }
    }
    MessageWord::new(best.map(|(_, b)| b).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{add_awgn, modulate};
    use crate::coding::{encode_bits, standard_code};
    use crate::rng::{stream, Domain};
    use rand::Rng;

    fn code75() -> CodeSpec {
        CodeSpec::from_octal(&["7", "5"], 2).unwrap()
    }

    fn tx(code: &CodeSpec, bits: &[u8]) -> SymbolBlock {
        modulate(&encode_bits(code, bits).unwrap().interleave()).unwrap()
    }

    #[test]
    fn trellis_tables() {
        let t = build_trellis(&code75());
        assert_eq!(t.num_states(), 4);
        assert_eq!(t.output(0, 1), [1, 1]);
        // input 1 enters as the most recent register bit
        assert_eq!(t.next_state(0, 1), 0b10);
        assert_eq!(build_trellis(&standard_code(6).unwrap()).num_states(), 64);
    }

    #[test]
    fn trellis_agrees_with_encoder_and_reaches_all_states() {
        for v in 1..=6 {
            let code = standard_code(v).unwrap();
            let t = build_trellis(&code);
            let mut rng = stream(v as u64, Domain::Misc, 0);
            let bits: Vec<u8> = (0..30).map(|_| rng.random_range(0..2)).collect();
            let cw = encode_bits(&code, &bits).unwrap();
            let mut s = 0;
            for (u, pair) in bits.iter().chain(std::iter::repeat_n(&0, v as usize)).zip(cw.pairs()) {
                assert_eq!(&t.output(s, *u), pair);
                s = t.next_state(s, *u);
            }
            assert_eq!(s, 0);

            let mut reached = vec![false; t.num_states()];
            let mut frontier = vec![0usize];
            reached[0] = true;
            for _ in 0..v {
                frontier = frontier
                    .iter()
                    .flat_map(|&s| [t.next_state(s, 0), t.next_state(s, 1)])
                    .collect();
                for &s in &frontier {
                    reached[s] = true;
                }
            }
            assert!(reached.iter().all(|&r| r));
        }
    }

    #[test]
    fn noiseless_decoding() {
        let t = build_trellis(&code75());
        let (msg, metric) = viterbi_decode(&t, &tx(&code75(), &[1, 0, 1, 1])).unwrap();
        assert_eq!(msg.bits(), &[1, 0, 1, 1]);
        assert_eq!(metric, 0.0);
    }

    #[test]
    fn erasure_decodes_to_zeros() {
        let t = build_trellis(&code75());
        let rx = SymbolBlock::new(vec![0.0; 2 * (5 + 2)]);
        let (msg, _) = viterbi_decode(&t, &rx).unwrap();
        assert_eq!(msg.bits(), &[0; 5]);
        assert_eq!(brute_force_ml(&code75(), &rx).unwrap().bits(), &[0; 5]);
    }

    #[test]
    fn rejects_bad_lengths() {
        let t = build_trellis(&code75());
        assert!(viterbi_decode(&t, &SymbolBlock::new(vec![0.0; 7])).is_err());
        assert!(viterbi_decode(&t, &SymbolBlock::new(vec![0.0; 4])).is_err());
        assert!(matches!(
            brute_force_ml(&code75(), &SymbolBlock::new(vec![0.0; 2 * 23])),
            Err(Error::OracleLimit { .. })
        ));
    }

    #[test]
    fn oracle_single_bit() {
        // codeword of [1] is 11 10 11 -> symbols -1 -1 -1 +1 -1 -1
        let rx = SymbolBlock::new(vec![-0.2, -0.1, -0.3, 0.2, -0.1, -0.4]);
        assert_eq!(brute_force_ml(&code75(), &rx).unwrap().bits(), &[1]);
    }

    #[test]
    fn matches_oracle_under_noise() {
        for code in [code75(), standard_code(3).unwrap(), CodeSpec::from_octal(&["3", "2"], 1).unwrap()] {
            let t = build_trellis(&code);
            let mut rng = stream(11, Domain::Misc, code.memory() as u64);
            for trial in 0..200 {
                let len = 1 + trial % 10;
                let bits: Vec<u8> = (0..len).map(|_| rng.random_range(0..2)).collect();
                let rx = add_awgn(&tx(&code, &bits), 1.0, &mut rng).unwrap();
                let (vit, metric) = viterbi_decode(&t, &rx).unwrap();
                let ml = brute_force_ml(&code, &rx).unwrap();
                assert_eq!(vit, ml, "trial {trial}");
                let cw = encode(&code, &vit).interleave();
                assert!((squared_distance(rx.symbols(), &cw) - metric).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn memoryless_code() {
        let code = CodeSpec::from_octal(&["1", "1"], 0).unwrap();
        let t = build_trellis(&code);
        let rx = SymbolBlock::new(vec![-0.5, -0.2, 0.3, 0.9, -1.0, 0.4]);
        let (msg, _) = viterbi_decode(&t, &rx).unwrap();
        assert_eq!(msg, brute_force_ml(&code, &rx).unwrap());
        assert_eq!(msg.bits(), &[1, 0, 1]);
    }
}
