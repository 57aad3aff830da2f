use rand::Rng;

use crate::daft::{Domain, Frame};
use crate::noise::complex_gaussian;
use crate::{CMatrix, C64};

pub fn random_frame<R: Rng>(rng: &mut R, n: usize, domain: Domain) -> Frame {
    Frame::new((0..n).map(|_| complex_gaussian(rng, 1.0)).collect(), domain)
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_matrix_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
