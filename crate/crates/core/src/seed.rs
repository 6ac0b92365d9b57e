//! Deterministic derivation of per-use seeds from the run seed.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with an ordered list of stream identifiers.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub(crate) mod stream {
    pub const BATCH: u64 = 1;
    pub const RANDOMIZE: u64 = 2;
    pub const INIT_GEN: u64 = 3;
    pub const INIT_DISC: u64 = 4;
    pub const SYNTH: u64 = 5;
}
