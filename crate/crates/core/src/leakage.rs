//! Hamming-weight / Hamming-distance leakage models and construction of the
//! 256-guess hypothesis matrix the correlation attack consumes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{round1_sbox_output_byte, Block};
use crate::real::Real;

/// Number of candidate key bytes, and therefore hypothesis rows.
pub const NUM_GUESSES: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LeakageError {
    #[error("plaintext list is empty")]
    EmptyPlaintexts,
    #[error("byte index {0} out of range (state has 8 bytes)")]
    ByteIndexOutOfRange(usize),
    #[error("leak model gain must be finite")]
    NonFiniteGain,
    #[error("leak model noise sigma must be finite and non-negative")]
    InvalidNoiseSigma,
}

/// Count of set bits in a byte.
pub fn hamming_weight(v: u8) -> u8 {
    v.count_ones() as u8
}

/// Number of differing bits between two bytes.
pub fn hamming_distance(u: u8, v: u8) -> u8 {
    hamming_weight(u ^ v)
}

/// Selection of the leakage weighting applied to an intermediate value.
///
/// The weight model reduces an 8-bit intermediate to the 0..=8 scale that is
/// correlated against measured samples. `HammingDistance` with reference 0
/// coincides with `HammingWeight`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeakageModel {
    #[default]
    HammingWeight,
    HammingDistance {
        reference: u8,
    },
}

impl LeakageModel {
    pub fn weight(&self, value: u8) -> u8 {
        match self {
            LeakageModel::HammingWeight => hamming_weight(value),
            LeakageModel::HammingDistance { reference } => hamming_distance(value, *reference),
        }
    }
}

/// Parameters of the linear leakage equation: an emission is
/// `gain * weight(intermediate)` plus zero-mean noise of standard deviation
/// `noise_sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeakModelParams<T> {
    /// Volts per Hamming unit.
    pub gain: T,
    /// Standard deviation of the additive noise term, in volts.
    pub noise_sigma: T,
    pub model: LeakageModel,
}

impl<T: Real> LeakModelParams<T> {
    pub fn validate(&self) -> Result<(), LeakageError> {
        if !self.gain.is_finite() {
            return Err(LeakageError::NonFiniteGain);
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < T::zero() {
            return Err(LeakageError::InvalidNoiseSigma);
        }
        Ok(())
    }

    /// Deterministic part of the emission for one intermediate value.
    pub fn emission(&self, intermediate: u8) -> T {
        self.gain * T::from_u8(self.model.weight(intermediate)).unwrap()
    }
}

/// Predicted leakage weights for all 256 key-byte guesses over a set of
/// traces: row `k`, column `t` holds the weight of the hypothesized round-1
/// S-box output for guess `k` on trace `t`'s plaintext byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HypothesisMatrix {
    values: Vec<u8>,
    num_traces: usize,
    byte_index: usize,
}

impl HypothesisMatrix {
    pub fn num_traces(&self) -> usize {
        self.num_traces
    }

    /// Which state byte (0 = most significant) this matrix targets.
    pub fn byte_index(&self) -> usize {
        self.byte_index
    }

    /// All predicted weights for one key guess, one entry per trace.
    pub fn row(&self, guess: u8) -> &[u8] {
        let k = guess as usize;
        &self.values[k * self.num_traces..(k + 1) * self.num_traces]
    }

    pub fn entry(&self, guess: u8, trace: usize) -> u8 {
        self.values[guess as usize * self.num_traces + trace]
    }
}

/// Build the hypothesis matrix for one target byte position.
pub fn build_hypotheses(
    plaintexts: &[Block],
    byte_index: usize,
    model: LeakageModel,
) -> Result<HypothesisMatrix, LeakageError> {
    if plaintexts.is_empty() {
        return Err(LeakageError::EmptyPlaintexts);
    }
    if byte_index >= 8 {
        return Err(LeakageError::ByteIndexOutOfRange(byte_index));
    }
    let num_traces = plaintexts.len();
    let mut values = vec![0u8; NUM_GUESSES * num_traces];
    for k in 0..NUM_GUESSES {
        let row = &mut values[k * num_traces..(k + 1) * num_traces];
        for (t, pt) in plaintexts.iter().enumerate() {
            row[t] = model.weight(round1_sbox_output_byte(pt[byte_index], k as u8));
        }
    }
    Ok(HypothesisMatrix {
        values,
        num_traces,
        byte_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::gen_plaintexts_byte_sweep;

    fn bit_loop_weight(v: u8) -> u8 {
        (0..8).map(|i| (v >> i) & 1).sum()
    }

    #[test]
    fn hamming_weight_matches_bit_loop_oracle() {
        for v in 0..=255u8 {
            assert_eq!(hamming_weight(v), bit_loop_weight(v));
        }
        // worked example: 10010101 has four set bits
        assert_eq!(hamming_weight(0x95), 4);
        assert_eq!(hamming_weight(0x00), 0);
        assert_eq!(hamming_weight(0xFF), 8);
    }

    #[test]
    fn hamming_distance_reduces_to_weight_at_zero_reference() {
        for u in 0..=255u8 {
            assert_eq!(hamming_distance(u, 0), hamming_weight(u));
            assert_eq!(hamming_distance(u, u), 0);
        }
        assert_eq!(hamming_distance(0x95, 0x00), 4);
        assert_eq!(hamming_distance(0xFF, 0x00), 8);
    }

    #[test]
    fn model_weight_dispatch() {
        assert_eq!(LeakageModel::HammingWeight.weight(0x95), 4);
        assert_eq!(
            LeakageModel::HammingDistance { reference: 0 }.weight(0x95),
            4
        );
        assert_eq!(
            LeakageModel::HammingDistance { reference: 0x95 }.weight(0x95),
            0
        );
    }

    #[test]
    fn params_validation() {
        let ok = LeakModelParams {
            gain: 1.0f64,
            noise_sigma: 0.0,
            model: LeakageModel::HammingWeight,
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.emission(0xCC), 4.0);

        let bad_gain = LeakModelParams {
            gain: f64::INFINITY,
            ..ok
        };
        assert_eq!(bad_gain.validate(), Err(LeakageError::NonFiniteGain));

        let bad_sigma = LeakModelParams {
            noise_sigma: -1.0,
            ..ok
        };
        assert_eq!(bad_sigma.validate(), Err(LeakageError::InvalidNoiseSigma));
    }

    #[test]
    fn hypothesis_entries_follow_the_target_intermediate() {
        let plaintexts = vec![[0u8; 8], [0xAC; 8]];
        let hyp = build_hypotheses(&plaintexts, 0, LeakageModel::HammingWeight).unwrap();
        // HW(sbox_byte(0x00 ^ 0x00)) = HW(0xCC) = 4
        assert_eq!(hyp.entry(0x00, 0), 4);
        // guess equal to the plaintext byte cancels, again HW(0xCC)
        assert_eq!(hyp.entry(0xAC, 1), 4);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            build_hypotheses(&[], 0, LeakageModel::HammingWeight),
            Err(LeakageError::EmptyPlaintexts)
        );
        assert_eq!(
            build_hypotheses(&[[0u8; 8]], 8, LeakageModel::HammingWeight),
            Err(LeakageError::ByteIndexOutOfRange(8))
        );
    }

    /// Under the full 0..=255 sweep, XOR with the guess only permutes the
    /// plaintext bytes, so row `k` is row 0 with columns permuted by
    /// `t -> t ^ k`.
    #[test]
    fn sweep_rows_are_column_permutations_of_row_zero() {
        let plaintexts = gen_plaintexts_byte_sweep(256).unwrap();
        let hyp = build_hypotheses(&plaintexts, 3, LeakageModel::HammingWeight).unwrap();
        let row0 = hyp.row(0);
        for k in 0..=255u8 {
            let row = hyp.row(k);
            for t in 0..256 {
                assert_eq!(row[t], row0[t ^ k as usize]);
            }
        }
    }

    /// S-box bijectivity balances the outputs, so every row of the full
    /// sweep averages to exactly 4.
    #[test]
    fn sweep_row_means_are_exactly_four() {
        let plaintexts = gen_plaintexts_byte_sweep(256).unwrap();
        let hyp = build_hypotheses(&plaintexts, 0, LeakageModel::HammingWeight).unwrap();
        for k in 0..=255u8 {
            let sum: u32 = hyp.row(k).iter().map(|&w| u32::from(w)).sum();
            assert_eq!(sum, 4 * 256);
        }
    }

    #[test]
    fn entries_stay_in_weight_range() {
        let plaintexts = gen_plaintexts_byte_sweep(256).unwrap();
        for model in [
            LeakageModel::HammingWeight,
            LeakageModel::HammingDistance { reference: 0x5A },
        ] {
            let hyp = build_hypotheses(&plaintexts, 0, model).unwrap();
            for k in 0..=255u8 {
                assert!(hyp.row(k).iter().all(|&w| w <= 8));
            }
        }
    }
}
