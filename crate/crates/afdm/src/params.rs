//! AFDM frame parameters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{AfdmError, Result};

/// Chirp and channel-support parameters of one AFDM frame.
///
/// Build through [`AfdmParams::new`] so that `c1` follows the full-diversity
/// rule `c1 = (2(alpha_max + k_nu) + 1) / (2N)` and `band` is consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfdmParams {
    /// Number of subcarriers (chirps).
    pub n: usize,
    pub c1: f64,
    pub c2: f64,
    /// Maximum normalized delay in samples.
    pub l_max: usize,
    /// Maximum integer normalized Doppler in subcarrier spacings.
    pub alpha_max: usize,
    /// Spacing factor between delay blocks.
    pub k_nu: usize,
    /// Band width minus one: `(l_max+1)(2(alpha_max+k_nu)+1) - 1`.
    pub band: usize,
}

/// Default second chirp parameter, `1 / (pi N^2)`.
pub fn default_c2(n: usize) -> f64 {
    1.0 / (PI * (n as f64).powi(2))
}

impl AfdmParams {
    /// Validates the diversity bound and `c2` range, then derives `c1` and `band`.
    pub fn new(n: usize, l_max: usize, alpha_max: usize, k_nu: usize, c2: f64) -> Result<Self> {
        let bound = (l_max + 1) * (2 * alpha_max + 1);
        if n == 0 || n < bound {
            return Err(AfdmError::FrameTooSmall { n, bound });
        }
        let limit = 1.0 / (2.0 * n as f64);
        if !(c2 > 0.0 && c2 < limit) {
            return Err(AfdmError::InvalidC2 { c2, limit });
        }
        let block = 2 * (alpha_max + k_nu) + 1;
        Ok(Self { n, c1: block as f64 / (2.0 * n as f64), c2, l_max, alpha_max, k_nu, band: (l_max + 1) * block - 1 })
    }

    /// Same as [`AfdmParams::new`] with `c2 = 1/(pi N^2)`.
    pub fn with_default_c2(n: usize, l_max: usize, alpha_max: usize, k_nu: usize) -> Result<Self> {
        Self::new(n, l_max, alpha_max, k_nu, default_c2(n))
    }

    /// Raw transform parameters with arbitrary chirps and no channel support.
    ///
    /// Only the DAFT routines are meaningful on the result.
    pub fn raw_chirps(n: usize, c1: f64, c2: f64) -> Self {
        Self { n, c1, c2, l_max: 0, alpha_max: 0, k_nu: 0, band: 0 }
    }

    /// Width of one delay block including its guards, `2(alpha_max + k_nu) + 1`.
    pub fn block_width(&self) -> usize {
        2 * (self.alpha_max + self.k_nu) + 1
    }

    /// Offset of the band start relative to the main diagonal, `alpha_max + k_nu`.
    pub fn band_offset(&self) -> usize {
        self.alpha_max + self.k_nu
    }

    /// Number of band entries per row, `L + 1`.
    pub fn band_len(&self) -> usize {
        self.band + 1
    }

    pub fn is_underspread(&self) -> bool {
        self.band + 1 < self.n
    }
}
