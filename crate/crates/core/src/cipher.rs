//! Bit-exact PRESENT-80: 64-bit block, 80-bit key, 31 rounds of
//! addRoundKey / sBoxLayer / pLayer plus a final key addition.
//!
//! Every round intermediate is recoverable through [`encrypt_traced`], and
//! [`round1_sbox_output_byte`] exposes the byte-level intermediate the
//! correlation attack targets.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 4-bit substitution box.
pub const SBOX: [u8; 16] = [
    0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD, 0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2,
];

/// Number of substitution/permutation rounds (a 32nd key is used for the
/// final whitening addition).
pub const NUM_ROUNDS: usize = 31;

/// An 8-byte data block in big-endian order: `block[0]` is the most
/// significant byte of the corresponding [`State64`].
pub type Block = [u8; 8];

/// 64-bit cipher state. Bit 0 is the least significant bit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct State64(pub u64);

impl State64 {
    pub fn from_block(block: &Block) -> Self {
        State64(u64::from_be_bytes(*block))
    }

    pub fn to_block(self) -> Block {
        self.0.to_be_bytes()
    }

    /// Byte `i` counted from the most significant end, matching hex notation.
    pub fn byte(self, i: usize) -> u8 {
        assert!(i < 8, "byte index {i} out of range");
        self.to_block()[i]
    }
}

impl fmt::Debug for State64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "State64({:016X})", self.0)
    }
}

impl fmt::Display for State64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016X}", self.0)
    }
}

impl From<u64> for State64 {
    fn from(v: u64) -> Self {
        State64(v)
    }
}

/// Error raised when parsing key or block hex strings.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum HexParseError {
    #[error("expected {expected} hex digits, found {found}")]
    Length { expected: usize, found: usize },
    #[error("invalid hex digit {0:?}")]
    Digit(char),
}

fn parse_hex_bytes(s: &str, out: &mut [u8]) -> Result<(), HexParseError> {
    let digits: String = s.chars().filter(|c| !matches!(c, ' ' | ':' | '_')).collect();
    if digits.len() != out.len() * 2 {
        return Err(HexParseError::Length {
            expected: out.len() * 2,
            found: digits.len(),
        });
    }
    if let Some(bad) = digits.chars().find(|c| !c.is_ascii_hexdigit()) {
        return Err(HexParseError::Digit(bad));
    }
    hex::decode_to_slice(&digits, out).expect("digits validated above");
    Ok(())
}

/// Parse a 16-hex-digit block, ignoring spaces, colons and underscores.
pub fn block_from_hex(s: &str) -> Result<Block, HexParseError> {
    let mut block = [0u8; 8];
    parse_hex_bytes(s, &mut block)?;
    Ok(block)
}

pub fn block_to_hex(block: &Block) -> String {
    hex::encode_upper(block)
}

/// 80-bit key register. Byte 0 is the most significant byte, matching the
/// usual `AC DE FB ...` hex rendering.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyRegister80 {
    bytes: [u8; 10],
}

impl KeyRegister80 {
    pub fn new(bytes: [u8; 10]) -> Self {
        KeyRegister80 { bytes }
    }

    /// Parse a 20-hex-digit key, ignoring spaces, colons and underscores.
    pub fn from_hex(s: &str) -> Result<Self, HexParseError> {
        let mut bytes = [0u8; 10];
        parse_hex_bytes(s, &mut bytes)?;
        Ok(KeyRegister80 { bytes })
    }

    pub fn to_hex(&self) -> String {
        hex::encode_upper(self.bytes)
    }

    pub fn bytes(&self) -> &[u8; 10] {
        &self.bytes
    }

    /// Top 64 bits of the register; this is also the first round key.
    pub fn top64(&self) -> State64 {
        let mut block = [0u8; 8];
        block.copy_from_slice(&self.bytes[..8]);
        State64::from_block(&block)
    }

    /// The round-1 subkey as bytes, most significant first. These are the
    /// eight key bytes a first-round attack can recover.
    pub fn round1_subkey(&self) -> [u8; 8] {
        self.top64().to_block()
    }

    fn to_u128(self) -> u128 {
        self.bytes.iter().fold(0u128, |acc, &b| acc << 8 | u128::from(b))
    }
}

impl fmt::Debug for KeyRegister80 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyRegister80({})", self.to_hex())
    }
}

impl fmt::Display for KeyRegister80 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for KeyRegister80 {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for KeyRegister80 {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        KeyRegister80::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// The 32 round keys derived from an 80-bit key register.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundKeySchedule {
    keys: Vec<State64>,
}

impl RoundKeySchedule {
    /// Round key for round `r` (1-based, 1..=32).
    pub fn round_key(&self, r: usize) -> State64 {
        assert!((1..=NUM_ROUNDS + 1).contains(&r), "round {r} out of range");
        self.keys[r - 1]
    }

    pub fn keys(&self) -> &[State64] {
        &self.keys
    }
}

/// Per-round intermediates captured during an instrumented encryption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundStates {
    pub after_add_round_key: State64,
    pub after_sbox: State64,
    pub after_p_layer: State64,
}

/// All intermediate states of one encryption: one record per substitution
/// round plus the final whitened state (which equals the ciphertext).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptionTrace {
    pub rounds: Vec<RoundStates>,
    pub final_state: State64,
}

/// Substitute one 4-bit value.
pub fn sbox_nibble(x: u8) -> u8 {
    assert!(x < 16, "S-box input {x:#x} exceeds 4 bits");
    SBOX[x as usize]
}

/// Substitute both nibbles of a byte independently, as the byte-oriented
/// target firmware does: `S[b >> 4] << 4 | S[b & 0xF]`.
pub fn sbox_byte(b: u8) -> u8 {
    sbox_nibble(b >> 4) << 4 | sbox_nibble(b & 0xF)
}

/// Apply the S-box to all sixteen nibbles of the state.
pub fn sbox_layer(s: State64) -> State64 {
    let mut out = 0u64;
    for i in (0..64).step_by(4) {
        out |= u64::from(SBOX[((s.0 >> i) & 0xF) as usize]) << i;
    }
    State64(out)
}

/// The bit permutation: bit `i` moves to `16 * i mod 63` for `i < 63`, and
/// bit 63 stays put.
pub fn p_layer(s: State64) -> State64 {
    let mut out = s.0 & (1 << 63);
    for i in 0..63 {
        out |= ((s.0 >> i) & 1) << (16 * i % 63);
    }
    State64(out)
}

/// XOR a round key into the state.
pub fn add_round_key(s: State64, rk: State64) -> State64 {
    State64(s.0 ^ rk.0)
}

const MASK80: u128 = (1 << 80) - 1;

/// Derive all 32 round keys. The register is rotated left by 61 bits, the
/// top nibble is substituted, and the round counter is XORed into bits
/// 19..15 between extractions.
pub fn key_schedule_80(key: &KeyRegister80) -> RoundKeySchedule {
    let mut reg = key.to_u128();
    let mut keys = Vec::with_capacity(NUM_ROUNDS + 1);
    for round in 1..=NUM_ROUNDS + 1 {
        keys.push(State64((reg >> 16) as u64));
        if round <= NUM_ROUNDS {
            reg = ((reg << 61) | (reg >> 19)) & MASK80;
            let top = sbox_nibble((reg >> 76) as u8);
            reg = (reg & !(0xF << 76)) | u128::from(top) << 76;
            reg ^= (round as u128) << 15;
        }
    }
    RoundKeySchedule { keys }
}

/// Encrypt one block with a precomputed schedule.
pub fn encrypt_with_schedule(pt: State64, schedule: &RoundKeySchedule) -> State64 {
    let mut state = pt;
    for r in 1..=NUM_ROUNDS {
        state = p_layer(sbox_layer(add_round_key(state, schedule.round_key(r))));
    }
    add_round_key(state, schedule.round_key(NUM_ROUNDS + 1))
}

/// Encrypt one block.
pub fn encrypt(pt: State64, key: &KeyRegister80) -> State64 {
    encrypt_with_schedule(pt, &key_schedule_80(key))
}

/// Encrypt one block and record every round intermediate.
pub fn encrypt_traced(pt: State64, key: &KeyRegister80) -> (State64, EncryptionTrace) {
    let schedule = key_schedule_80(key);
    let mut rounds = Vec::with_capacity(NUM_ROUNDS);
    let mut state = pt;
    for r in 1..=NUM_ROUNDS {
        let after_add_round_key = add_round_key(state, schedule.round_key(r));
        let after_sbox = sbox_layer(after_add_round_key);
        let after_p_layer = p_layer(after_sbox);
        rounds.push(RoundStates {
            after_add_round_key,
            after_sbox,
            after_p_layer,
        });
        state = after_p_layer;
    }
    let final_state = add_round_key(state, schedule.round_key(NUM_ROUNDS + 1));
    (
        final_state,
        EncryptionTrace {
            rounds,
            final_state,
        },
    )
}

/// The attack's target intermediate: the S-box output byte after the
/// round-1 key addition, `sbox_byte(pt_byte ^ key_byte)`.
pub fn round1_sbox_output_byte(pt_byte: u8, key_byte: u8) -> u8 {
    sbox_byte(pt_byte ^ key_byte)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The key used throughout the attack experiments.
    pub const TEST_KEY_HEX: &str = "AC DE FB 21 F9 23 43 75 C0 E6";

    #[test]
    fn sbox_table_values() {
        assert_eq!(sbox_nibble(0x0), 0xC);
        assert_eq!(sbox_nibble(0xF), 0x2);
        assert_eq!(sbox_nibble(0x5), 0x0);
    }

    #[test]
    fn sbox_is_a_bijection() {
        let mut seen = [false; 16];
        for x in 0..16u8 {
            seen[sbox_nibble(x) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    #[should_panic(expected = "exceeds 4 bits")]
    fn sbox_rejects_wide_input() {
        sbox_nibble(16);
    }

    #[test]
    fn sbox_byte_composes_nibble_lookups() {
        assert_eq!(sbox_byte(0x00), 0xCC);
        assert_eq!(sbox_byte(0xF5), 0x20);
        assert_eq!(sbox_byte(0x5F), 0x02);
        // S(A) = F, S(C) = 4.
        assert_eq!(sbox_byte(0xAC), 0xF4);
        for b in 0..=255u8 {
            assert_eq!(
                sbox_byte(b),
                sbox_nibble(b >> 4) << 4 | sbox_nibble(b & 0xF)
            );
        }
    }

    #[test]
    fn sbox_layer_substitutes_all_nibbles() {
        assert_eq!(sbox_layer(State64(0)).0, 0xCCCC_CCCC_CCCC_CCCC);
        assert_eq!(sbox_layer(State64(!0)).0, 0x2222_2222_2222_2222);
        let mut x = 0x0123_4567_89AB_CDEFu64;
        for _ in 0..10_000 {
            // xorshift keeps the loop dependency-free of the code under test
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let out = sbox_layer(State64(x));
            for i in (0..64).step_by(4) {
                let nib = ((x >> i) & 0xF) as u8;
                assert_eq!(((out.0 >> i) & 0xF) as u8, sbox_nibble(nib));
            }
        }
    }

    #[test]
    fn p_layer_fixes_all_zero_and_all_one_states() {
        assert_eq!(p_layer(State64(0)).0, 0);
        assert_eq!(p_layer(State64(!0)).0, !0);
    }

    #[test]
    fn p_layer_is_a_bijection_on_single_bits() {
        let mut seen = [false; 64];
        for i in 0..64 {
            let out = p_layer(State64(1 << i)).0;
            assert_eq!(out.count_ones(), 1);
            let pos = out.trailing_zeros() as usize;
            assert!(!seen[pos], "position {pos} hit twice");
            seen[pos] = true;
        }
    }

    /// 16^3 = 4096 = 65*63 + 1, so the permutation has order three: applying
    /// it three times is the identity (brute-forced over all single-bit
    /// states here).
    #[test]
    fn p_layer_has_order_three() {
        for i in 0..64 {
            let s = State64(1 << i);
            let p3 = p_layer(p_layer(p_layer(s)));
            assert_eq!(p3, s, "bit {i} does not return after three rounds");
        }
        // Not an involution and not of order four (except on fixed points).
        let s = State64(1 << 1);
        assert_ne!(p_layer(p_layer(s)), s);
        assert_ne!(p_layer(p_layer(p_layer(p_layer(s)))), s);
    }

    #[test]
    fn add_round_key_is_xor() {
        let x = State64(0xACDE_FB21_F923_4375);
        assert_eq!(add_round_key(x, State64(0)), x);
        assert_eq!(add_round_key(x, x), State64(0));
        assert_eq!(add_round_key(x, State64(!0)).0, 0x5321_04DE_06DC_BC8A);
    }

    #[test]
    fn key_parsing_and_rendering() {
        let key = KeyRegister80::from_hex(TEST_KEY_HEX).unwrap();
        assert_eq!(key.to_hex(), "ACDEFB21F9234375C0E6");
        assert_eq!(key.top64().0, 0xACDE_FB21_F923_4375);
        assert_eq!(
            key.round1_subkey(),
            [0xAC, 0xDE, 0xFB, 0x21, 0xF9, 0x23, 0x43, 0x75]
        );
        assert!(matches!(
            KeyRegister80::from_hex("ACDEFB21F9234375C0E"),
            Err(HexParseError::Length { found: 19, .. })
        ));
        assert!(matches!(
            KeyRegister80::from_hex("ACDEFB21F9234375C0EG"),
            Err(HexParseError::Digit('G'))
        ));
    }

    #[test]
    fn first_round_key_is_register_top() {
        let zero = KeyRegister80::new([0; 10]);
        assert_eq!(key_schedule_80(&zero).round_key(1).0, 0);
        let key = KeyRegister80::from_hex(TEST_KEY_HEX).unwrap();
        assert_eq!(key_schedule_80(&key).round_key(1).0, 0xACDE_FB21_F923_4375);
    }

    #[test]
    fn schedule_has_32_keys() {
        let key = KeyRegister80::from_hex(TEST_KEY_HEX).unwrap();
        assert_eq!(key_schedule_80(&key).keys().len(), 32);
    }

    /// Published test vectors for the 80-bit variant.
    #[test]
    fn encrypt_matches_published_vectors() {
        let cases = [
            ("00000000000000000000", 0u64, 0x5579_C138_7B22_8445u64),
            ("FFFFFFFFFFFFFFFFFFFF", 0, 0xE72C_46C0_F594_5049),
            ("00000000000000000000", !0, 0xA112_FFC7_2F68_417B),
            ("FFFFFFFFFFFFFFFFFFFF", !0, 0x3333_DCD3_2132_10D2),
        ];
        for (key_hex, pt, ct) in cases {
            let key = KeyRegister80::from_hex(key_hex).unwrap();
            assert_eq!(encrypt(State64(pt), &key).0, ct, "key {key_hex} pt {pt:016X}");
        }
    }

    #[test]
    fn distinct_plaintexts_give_distinct_ciphertexts() {
        let key = KeyRegister80::from_hex(TEST_KEY_HEX).unwrap();
        let schedule = key_schedule_80(&key);
        let a = encrypt_with_schedule(State64(0x0123_4567_89AB_CDEF), &schedule);
        let b = encrypt_with_schedule(State64(0x0123_4567_89AB_CDEE), &schedule);
        assert_ne!(a, b);
    }

    #[test]
    fn traced_encryption_matches_plain() {
        let key = KeyRegister80::from_hex(TEST_KEY_HEX).unwrap();
        let mut pt = 0xDEAD_BEEF_0BAD_F00Du64;
        for _ in 0..100 {
            pt = pt.wrapping_mul(6364136223846793005).wrapping_add(1);
            let (ct, trace) = encrypt_traced(State64(pt), &key);
            assert_eq!(ct, encrypt(State64(pt), &key));
            assert_eq!(trace.rounds.len(), NUM_ROUNDS);
            assert_eq!(trace.final_state, ct);
            // round 1 record reflects the first subkey addition
            assert_eq!(
                trace.rounds[0].after_add_round_key,
                add_round_key(State64(pt), key.top64())
            );
        }
    }

    #[test]
    fn round1_target_examples() {
        assert_eq!(round1_sbox_output_byte(0x00, 0x00), 0xCC);
        assert_eq!(round1_sbox_output_byte(0xAC, 0xAC), 0xCC);
        assert_eq!(round1_sbox_output_byte(0x00, 0xAC), 0xF4);
    }

    #[test]
    fn block_hex_round_trip() {
        let block = block_from_hex("01 23 45 67 89 AB CD EF").unwrap();
        assert_eq!(block, [0x01, 0x23, 0x45, 0x67, 0x89, 0xAB, 0xCD, 0xEF]);
        assert_eq!(block_to_hex(&block), "0123456789ABCDEF");
        assert_eq!(State64::from_block(&block).0, 0x0123_4567_89AB_CDEF);
        assert_eq!(State64(0x0123_4567_89AB_CDEF).to_block(), block);
        assert_eq!(State64(0x0123_4567_89AB_CDEF).byte(0), 0x01);
        assert_eq!(State64(0x0123_4567_89AB_CDEF).byte(7), 0xEF);
    }
}
