use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;

pub const PRIMES: [u32; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];
pub const DEFAULT_SKIP: usize = 10;

/// Radical inverse of `index` in `base`, with digits mapped through `perm`
/// (identity when `None`).
pub fn radical_inverse(mut index: u64, base: u32, perm: Option<&[u32]>) -> f64 {
    let b = base as u64;
    let mut inv_base = 1.0 / base as f64;
    let mut out = 0.0;
    while index > 0 {
        let mut digit = (index % b) as u32;
        if let Some(p) = perm {
            digit = p[digit as usize];
        }
        out += digit as f64 * inv_base;
        inv_base /= base as f64;
        index /= b;
    }
    out
}

/// Digit permutation for `base`; 0 stays 0 so no point maps to 0 or 1.
/// Seed 0 gives the identity (plain Halton).
fn digit_permutation(base: u32, seed: u64) -> Option<Vec<u32>> {
    if seed == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ base as u64);
    let mut rest: Vec<u32> = (1..base).collect();
    rest.shuffle(&mut rng);
    let mut perm = vec![0];
    perm.extend(rest);
    Some(perm)
}

/// `n` consecutive points of the base-`base` sequence after discarding
/// the first `skip` (the sequence starts at index 1).
pub fn halton_sequence(base: u32, skip: usize, n: usize, seed: u64) -> Vec<f64> {
    let perm = digit_permutation(base, seed);
    (0..n)
        .map(|i| radical_inverse((skip + i + 1) as u64, base, perm.as_deref()))
        .collect()
}

/// Uniform draws indexed `[person][draw][dim]`. Dimension `d` uses the
/// `d`-th prime; each person takes the next `n_draws` points of every
/// dimension's sequence.
pub fn halton_draws(
    n_persons: usize,
    n_dims: usize,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>, ModelError> {
    if n_dims > PRIMES.len() {
        return Err(ModelError::UnsupportedDimension(n_dims));
    }
    let seqs: Vec<Vec<f64>> = PRIMES[..n_dims]
        .iter()
        .map(|&p| halton_sequence(p, DEFAULT_SKIP, n_persons * n_draws, seed))
        .collect();
    Ok((0..n_persons)
        .map(|n| {
            (0..n_draws)
                .map(|r| seqs.iter().map(|s| s[n * n_draws + r]).collect())
                .collect()
        })
        .collect())
}
