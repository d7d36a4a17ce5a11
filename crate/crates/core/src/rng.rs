//! Counter-based random streams keyed by (seed, module tag, stream index).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::lattice::C64;

pub mod tag {
    pub const SPHERICAL: u64 = 0x5350_4852;
    pub const NLS: u64 = 0x4e4c_5331;
    pub const GREENS: u64 = 0x4752_4e53;
    pub const LANDSCAPE: u64 = 0x4c41_4e44;
    pub const EXPERIMENT: u64 = 0x4558_5052;
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for stream `index` of module `tag` under `seed`.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let a = mix(seed);
    let b = mix(a ^ tag);
    let c = mix(b ^ 0x6a09_e667_f3bc_c908);
    let e = mix(c ^ seed.rotate_left(17));
    for (i, w) in [a, b, c, e].iter().enumerate() {
        key[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Circular complex Gaussian with E|z|² = var.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Uniform point in the disc of radius r.
pub fn uniform_disc<R: Rng + ?Sized>(rng: &mut R, r: f64) -> C64 {
    let u: f64 = rng.random();
    let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let rad = r * u.sqrt();
    C64::new(rad * phi.cos(), rad * phi.sin())
}
