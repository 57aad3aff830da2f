//! Random sample helpers.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::C64;

/// One draw of `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Adds `CN(0, n0)` noise to every sample in place.
pub fn add_awgn<R: Rng + ?Sized>(rng: &mut R, samples: &mut [C64], n0: f64) {
    if n0 <= 0.0 {
        return;
    }
    for v in samples {
        *v += complex_gaussian(rng, n0);
    }
}
