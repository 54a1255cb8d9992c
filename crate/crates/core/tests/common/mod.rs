//! Independent test oracles. The cipher reference works on explicit bit
//! vectors with its own transcription of the substitution table, sharing no
//! code with the library's packed-integer implementation.

/// Substitution table, transcribed independently of the library constant.
const REF_SBOX: [u8; 16] = [
    0x0C, 0x05, 0x06, 0x0B, 0x09, 0x00, 0x0A, 0x0D, 0x03, 0x0E, 0x0F, 0x08, 0x04, 0x07, 0x01,
    0x02,
];

fn nibble_to_bits(v: u8, bits: &mut [bool]) {
    for (i, b) in bits.iter_mut().enumerate().take(4) {
        *b = (v >> i) & 1 == 1;
    }
}

fn bits_to_nibble(bits: &[bool]) -> u8 {
    bits.iter()
        .take(4)
        .enumerate()
        .map(|(i, &b)| u8::from(b) << i)
        .sum()
}

/// Bit-vector PRESENT-80 reference. `key[i]` is key bit `i` (bit 0 least
/// significant); returns the ciphertext as 64 bits in the same order.
pub fn reference_encrypt_bits(plaintext: &[bool; 64], key: &[bool; 80]) -> [bool; 64] {
    // round keys: the top 64 register bits before each of 32 extractions
    let mut register = *key;
    let mut round_keys = Vec::with_capacity(32);
    for round in 1..=32u8 {
        let mut rk = [false; 64];
        rk.copy_from_slice(&register[16..80]);
        round_keys.push(rk);
        if round < 32 {
            // rotate left by 61: bit j moves to (j + 61) mod 80
            let mut rotated = [false; 80];
            for (j, &b) in register.iter().enumerate() {
                rotated[(j + 61) % 80] = b;
            }
            register = rotated;
            // substitute the top nibble (bits 79..76)
            let top = bits_to_nibble(&register[76..80]);
            nibble_to_bits(REF_SBOX[top as usize], &mut register[76..80]);
            // xor the round counter into bits 19..15
            for b in 0..5 {
                register[15 + b] ^= (round >> b) & 1 == 1;
            }
        }
    }

    let mut state = *plaintext;
    for round_key in round_keys.iter().take(31) {
        for (s, &k) in state.iter_mut().zip(round_key.iter()) {
            *s ^= k;
        }
        for nib in 0..16 {
            let v = bits_to_nibble(&state[4 * nib..4 * nib + 4]);
            nibble_to_bits(REF_SBOX[v as usize], &mut state[4 * nib..4 * nib + 4]);
        }
        let mut permuted = [false; 64];
        permuted[63] = state[63];
        for (i, &b) in state.iter().enumerate().take(63) {
            permuted[16 * i % 63] = b;
        }
        state = permuted;
    }
    for (s, &k) in state.iter_mut().zip(round_keys[31].iter()) {
        *s ^= k;
    }
    state
}

pub fn u64_to_bits(v: u64) -> [bool; 64] {
    let mut bits = [false; 64];
    for (i, b) in bits.iter_mut().enumerate() {
        *b = (v >> i) & 1 == 1;
    }
    bits
}

pub fn bits_to_u64(bits: &[bool; 64]) -> u64 {
    bits.iter()
        .enumerate()
        .map(|(i, &b)| u64::from(b) << i)
        .sum()
}

/// Key bytes (most significant first, as in hex notation) to bit vector.
pub fn key_bytes_to_bits(bytes: &[u8; 10]) -> [bool; 80] {
    let mut bits = [false; 80];
    for (byte_idx, &byte) in bytes.iter().enumerate() {
        for bit in 0..8 {
            // byte 0 holds bits 79..72
            bits[(9 - byte_idx) * 8 + bit] = (byte >> bit) & 1 == 1;
        }
    }
    bits
}

/// Reference encryption over u64 block and 10-byte key.
pub fn reference_encrypt(plaintext: u64, key_bytes: &[u8; 10]) -> u64 {
    let ct = reference_encrypt_bits(&u64_to_bits(plaintext), &key_bytes_to_bits(key_bytes));
    bits_to_u64(&ct)
}

/// Small deterministic generator for test inputs, unrelated to the
/// simulator's RNG.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }
}
