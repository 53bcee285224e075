//! Token-id layout shared by the data pipeline and the model.
//!
//! Ids `0..N_SPECIAL` are reserved; the code `c` at level `ℓ` maps to
//! `ℓ·W + c + N_SPECIAL`.

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const N_SPECIAL: u32 = 2;

pub fn sid_token(level: usize, code: u32, size: usize) -> u32 {
    (level * size) as u32 + code + N_SPECIAL
}

/// Inverse of [`sid_token`]; `None` for special tokens.
pub fn token_sid(token: u32, size: usize) -> Option<(usize, u32)> {
    let t = token.checked_sub(N_SPECIAL)?;
    Some(((t as usize) / size, t % size as u32))
}

pub fn vocab_size(depth: usize, size: usize) -> usize {
    depth * size + N_SPECIAL as usize
}
