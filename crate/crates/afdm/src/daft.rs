//! Discrete affine Fourier transform.
//!
//! The DAFT matrix is `A = L(c2) F L(c1)` where `F` is the unitary DFT and
//! `L(c) = diag(exp(-j 2 pi c n^2))`. Modulation maps DAFT-domain symbols to
//! time samples with `A^H`; demodulation applies `A`. Both directions run as
//! chirp multiply, FFT, chirp multiply.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{AfdmError, Result};
use crate::params::AfdmParams;
use crate::{CMatrix, C64};

/// Largest N for which dense matrices are built.
pub const DENSE_LIMIT: usize = 4096;

/// Which domain a [`Frame`] lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Transmitted DAFT-domain symbols.
    Tx,
    /// Received DAFT-domain symbols.
    Rx,
    /// Time-domain samples.
    Time,
}

/// A length-N block of complex samples tagged with its domain.
#[derive(Clone, PartialEq)]
pub struct Frame {
    pub symbols: Vec<C64>,
    pub domain: Domain,
}

impl Frame {
    pub fn new(symbols: Vec<C64>, domain: Domain) -> Self {
        Self { symbols, domain }
    }

    pub fn zeros(n: usize, domain: Domain) -> Self {
        Self::new(vec![C64::new(0.0, 0.0); n], domain)
    }

    pub fn energy(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.symbols.len() != n {
            return Err(AfdmError::LengthMismatch { expected: n, got: self.symbols.len() });
        }
        Ok(())
    }
}

impl Deref for Frame {
    type Target = [C64];
    fn deref(&self) -> &[C64] {
        &self.symbols
    }
}

impl DerefMut for Frame {
    fn deref_mut(&mut self) -> &mut [C64] {
        &mut self.symbols
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame({:?}, N={})", self.domain, self.symbols.len())
    }
}

/// Chirp diagonal `exp(-j 2 pi c n^2)` for `n = 0..N`.
pub fn chirp_diag(c: f64, n: usize) -> Vec<C64> {
    (0..n)
        .map(|k| {
            // reduce c*k^2 modulo 1 before scaling so large k keep precision
            let phase = (c * (k as f64) * (k as f64)).rem_euclid(1.0);
            C64::from_polar(1.0, -2.0 * PI * phase)
        })
        .collect()
}

/// Precomputed chirps and FFT plans for one parameter set.
#[derive(Clone)]
pub struct DaftPlan {
    n: usize,
    chirp1: Vec<C64>,
    chirp2: Vec<C64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl DaftPlan {
    pub fn new(params: &AfdmParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n: params.n,
            chirp1: chirp_diag(params.c1, params.n),
            chirp2: chirp_diag(params.c2, params.n),
            forward: planner.plan_fft_forward(params.n),
            inverse: planner.plan_fft_inverse(params.n),
            scale: 1.0 / (params.n as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `s = A^H x`, DAFT domain to time domain.
    pub fn idaft(&self, x: &Frame) -> Result<Frame> {
        x.check_len(self.n)?;
        let mut buf: Vec<C64> = x.iter().zip(&self.chirp2).map(|(v, c)| v * c.conj()).collect();
        self.inverse.process(&mut buf);
        for (v, c) in buf.iter_mut().zip(&self.chirp1) {
            *v *= c.conj() * self.scale;
        }
        Ok(Frame::new(buf, Domain::Time))
    }

    /// `y = A d`, time domain to DAFT domain.
    pub fn daft(&self, d: &Frame) -> Result<Frame> {
        d.check_len(self.n)?;
        let mut buf: Vec<C64> = d.iter().zip(&self.chirp1).map(|(v, c)| v * c).collect();
        self.forward.process(&mut buf);
        for (v, c) in buf.iter_mut().zip(&self.chirp2) {
            *v *= c * self.scale;
        }
        Ok(Frame::new(buf, Domain::Rx))
    }
}

/// Inverse DAFT (modulation). Plans the FFT on every call; reuse a
/// [`DaftPlan`] in loops.
pub fn idaft(params: &AfdmParams, x: &Frame) -> Result<Frame> {
    DaftPlan::new(params).idaft(x)
}

/// Forward DAFT (demodulation).
pub fn daft(params: &AfdmParams, d: &Frame) -> Result<Frame> {
    DaftPlan::new(params).daft(d)
}

/// Dense unitary DAFT matrix `A = L(c2) F L(c1)`.
pub fn daft_matrix(params: &AfdmParams) -> Result<CMatrix> {
    let n = params.n;
    if n > DENSE_LIMIT {
        return Err(AfdmError::SizeGuard { size: n, limit: DENSE_LIMIT });
    }
    let chirp1 = chirp_diag(params.c1, n);
    let chirp2 = chirp_diag(params.c2, n);
    let scale = 1.0 / (n as f64).sqrt();
    Ok(CMatrix::from_fn(n, n, |m, k| {
        let phase = ((m * k) % n) as f64 / n as f64;
        chirp2[m] * C64::from_polar(scale, -2.0 * PI * phase) * chirp1[k]
    }))
}
