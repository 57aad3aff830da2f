//! Embedded-pilot frame layout and pilot/guard overheads.
//!
//! Transmit antenna `t` (zero based) carries one pilot at `(L+1)(t+1) - 1`; the
//! slots `[0, (L+1)N_t + L)` are otherwise zero and data fills the rest of the frame.

use crate::daft::{Domain, Frame};
use crate::error::{AfdmError, Result};
use crate::params::AfdmParams;
use crate::C64;

/// `len` consecutive indices starting at `start`, wrapping modulo `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CyclicRange {
    pub start: usize,
    pub len: usize,
    pub n: usize,
}

impl CyclicRange {
    pub fn iter(&self) -> impl Iterator<Item = usize> {
        let Self { start, len, n } = *self;
        (0..len).map(move |i| (start + i) % n)
    }

    pub fn contains(&self, idx: usize) -> bool {
        (idx + self.n - self.start % self.n) % self.n < self.len
    }

    /// Last index, wrapped.
    pub fn end(&self) -> usize {
        (self.start + self.len - 1) % self.n
    }
}

/// Pilot, guard and data arrangement for `n_t` transmit antennas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpaLayout {
    pub n: usize,
    pub n_t: usize,
    pub band: usize,
    pub band_offset: usize,
    pub pilot_amplitude: f64,
}

impl EpaLayout {
    pub fn new(params: &AfdmParams, n_t: usize, pilot_amplitude: f64) -> Result<Self> {
        let layout = Self { n: params.n, n_t, band: params.band, band_offset: params.band_offset(), pilot_amplitude };
        if n_t == 0 {
            return Err(AfdmError::AntennaIndex("layout needs at least one transmit antenna".into()));
        }
        if !(pilot_amplitude > 0.0 && pilot_amplitude.is_finite()) {
            return Err(AfdmError::Config(format!("pilot amplitude {pilot_amplitude} must be positive")));
        }
        let m_d = layout.data_start();
        if m_d >= params.n {
            return Err(AfdmError::FrameOverflow { m_d, n: params.n });
        }
        Ok(layout)
    }

    /// Pilot amplitude `sqrt(n0 10^(snr_p/10))`.
    pub fn pilot_amplitude_for(n0: f64, snr_p_db: f64) -> f64 {
        (n0 * 10f64.powf(snr_p_db / 10.0)).sqrt()
    }

    /// Pilot slot of transmit antenna `t` (zero based).
    pub fn pilot_index(&self, t: usize) -> usize {
        (self.band + 1) * (t + 1) - 1
    }

    /// First data slot, `(L+1)N_t + L`.
    pub fn data_start(&self) -> usize {
        (self.band + 1) * self.n_t + self.band
    }

    pub fn data_len(&self) -> usize {
        self.n - self.data_start()
    }

    /// Received indices carrying the column band of `H_{r,t}` for antenna `t` (zero based).
    pub fn pilot_rx_range(&self, t: usize) -> Result<CyclicRange> {
        if t >= self.n_t {
            return Err(AfdmError::AntennaIndex(format!("t = {t} with {} transmit antennas", self.n_t)));
        }
        Ok(CyclicRange { start: (self.band_offset + (self.band + 1) * t) % self.n, len: self.band + 1, n: self.n })
    }

    /// All received indices used for estimation, over every transmit antenna.
    pub fn pilot_region(&self) -> CyclicRange {
        CyclicRange { start: self.band_offset % self.n, len: (self.band + 1) * self.n_t, n: self.n }
    }
}

/// Builds one frame per transmit antenna from its data symbols.
pub fn build_epa_frames(layout: &EpaLayout, data: &[Vec<C64>]) -> Result<Vec<Frame>> {
    if data.len() != layout.n_t {
        return Err(AfdmError::LengthMismatch { expected: layout.n_t, got: data.len() });
    }
    let m_d = layout.data_start();
    data.iter()
        .enumerate()
        .map(|(t, d)| {
            if d.len() != layout.data_len() {
                return Err(AfdmError::LengthMismatch { expected: layout.data_len(), got: d.len() });
            }
            let mut frame = Frame::zeros(layout.n, Domain::Tx);
            frame[layout.pilot_index(t)] = C64::new(layout.pilot_amplitude, 0.0);
            frame[m_d..].copy_from_slice(d);
            Ok(frame)
        })
        .collect()
}

/// Pilot and guard slots per transmit antenna, `(N_t+1)(l_max+1)(2(alpha_max+k_nu)+1) - 1`.
pub fn overhead_mimo_afdm(params: &AfdmParams, n_t: usize) -> usize {
    (n_t + 1) * (params.l_max + 1) * params.block_width() - 1
}

/// Embedded-pilot overhead of the MIMO-OTFS counterpart,
/// `((N_t+1) l_max + N_t)(4(alpha_max+k_nu)+1)`.
pub fn overhead_mimo_otfs(l_max: usize, alpha_max: usize, k_nu: usize, n_t: usize) -> usize {
    ((n_t + 1) * l_max + n_t) * (4 * (alpha_max + k_nu) + 1)
}

/// Overheads of one setting as slot counts and percentages of N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    pub n: usize,
    pub n_t: usize,
    pub l_max: usize,
    pub alpha_max: usize,
    pub k_nu: usize,
    pub afdm: usize,
    pub otfs: usize,
}

impl OverheadReport {
    pub fn new(params: &AfdmParams, n_t: usize) -> Self {
        Self {
            n: params.n,
            n_t,
            l_max: params.l_max,
            alpha_max: params.alpha_max,
            k_nu: params.k_nu,
            afdm: overhead_mimo_afdm(params, n_t),
            otfs: overhead_mimo_otfs(params.l_max, params.alpha_max, params.k_nu, n_t),
        }
    }

    pub fn afdm_percent(&self) -> f64 {
        100.0 * self.afdm as f64 / self.n as f64
    }

    pub fn otfs_percent(&self) -> f64 {
        100.0 * self.otfs as f64 / self.n as f64
    }

    /// One table row, e.g. `AFDM 134 (13.09%), OTFS 238 (23.24%)`.
    pub fn summary(&self) -> String {
        format!("AFDM {} ({:.2}%), OTFS {} ({:.2}%)", self.afdm, self.afdm_percent(), self.otfs, self.otfs_percent())
    }
}
