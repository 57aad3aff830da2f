//! Embedded-pilot diagonal reconstruction (EPA-DR) of effective channel matrices.
//!
//! Diagonally adjacent entries of a subchannel matrix differ by a unit-modulus
//! transform factor that depends on the delay and the position but never on the
//! Doppler shift. One received pilot therefore gives one column of the band, and
//! the factors carry every entry of that column along its cyclic diagonal.

use std::f64::consts::PI;
use std::io::{self, Write};

use crate::band::ChannelBand;
use crate::channel::{apply_paths, MimoChannelRealization};
use crate::daft::{DaftPlan, Domain, Frame};
use crate::error::{AfdmError, Result};
use crate::framing::{build_epa_frames, EpaLayout};
use crate::params::AfdmParams;
use crate::{CMatrix, C64};

/// Ratio `H[(m+1) mod N, (m'+1) mod N] / H[m, m']` for any path of delay `l`.
pub fn transform_factor(params: &AfdmParams, l: usize, m: usize, m_prime: usize) -> C64 {
    let n = params.n;
    let last = n - 1;
    let (mf, mpf) = (m as f64, m_prime as f64);
    let base = -((l % n) as f64) / n as f64;
    let chirp = match (m == last, m_prime == last) {
        (true, true) => 0.0,
        (true, false) => params.c2 * (mf * mf + 2.0 * mpf + 1.0),
        (false, true) => -params.c2 * (mpf * mpf + 2.0 * mf + 1.0),
        (false, false) => 2.0 * params.c2 * (mpf - mf),
    };
    C64::from_polar(1.0, 2.0 * PI * (base + chirp.rem_euclid(1.0)))
}

/// The four factors met along one band diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DiagonalFactors {
    /// Interior step with `m' - m = d`.
    main: C64,
    /// Interior step after the diagonal wraps, `m' - m = d -+ N`.
    wrapped: C64,
    /// Step leaving row `N-1`.
    row_wrap: C64,
    /// Step leaving column `N-1`.
    col_wrap: C64,
}

/// Precomputed transform factors for every diagonal of the `L+1` band.
///
/// Depends only on `(N, c1, c2)` and the band geometry, so it is built once and
/// shared by all realizations and antenna pairs.
#[derive(Debug, Clone)]
pub struct TransformFactorTable {
    n: usize,
    offset: usize,
    delays: Vec<usize>,
    diagonals: Vec<DiagonalFactors>,
}

impl TransformFactorTable {
    pub fn new(params: &AfdmParams) -> Self {
        let n = params.n;
        let offset = params.band_offset();
        let width = params.band_len().min(n);
        let mut delays = Vec::with_capacity(width);
        let mut diagonals = Vec::with_capacity(width);
        for q in 0..width {
            let l = slot_delay(params, q);
            let d = q as i64 - offset as i64;
            let at = |m: i64, mp: i64| {
                transform_factor(params, l, m.rem_euclid(n as i64) as usize, mp.rem_euclid(n as i64) as usize)
            };
            let last = n as i64 - 1;
            // representative positions on the diagonal for each case
            let main = if d >= 0 { at(0, d) } else { at(-d, 0) };
            let wrapped = if d >= 0 { at(last - d + 1, 0) } else { at(0, last + d + 1) };
            delays.push(l);
            diagonals.push(DiagonalFactors {
                main,
                wrapped,
                row_wrap: at(last, last + d),
                col_wrap: at(last - d, last),
            });
        }
        Self { n, offset, delays, diagonals }
    }

    /// Number of distinct precomputed factors: four per diagonal, one on the main diagonal.
    pub fn len(&self) -> usize {
        self.diagonals.len() * 4 - 3 * usize::from(self.offset < self.diagonals.len())
    }

    pub fn is_empty(&self) -> bool {
        self.diagonals.is_empty()
    }

    /// Delay block assigned to band slot `q`.
    pub fn slot_delay(&self, q: usize) -> usize {
        self.delays[q]
    }

    /// All stored factor values.
    pub fn values(&self) -> Vec<C64> {
        self.entries().into_iter().map(|e| e.2).collect()
    }

    /// Stored factors labelled by diagonal offset `m' - m` and position case.
    pub fn entries(&self) -> Vec<(i64, &'static str, C64)> {
        let mut out = Vec::with_capacity(self.len());
        for (q, f) in self.diagonals.iter().enumerate() {
            let d = q as i64 - self.offset as i64;
            out.push((d, "interior", f.main));
            if q != self.offset {
                out.push((d, "wrapped", f.wrapped));
                out.push((d, "row_wrap", f.row_wrap));
                out.push((d, "col_wrap", f.col_wrap));
            }
        }
        out
    }

    /// Fault injection: rotates every factor of band slot `q` by `phase` radians.
    pub fn perturb(&mut self, q: usize, phase: f64) {
        let rot = C64::from_polar(1.0, phase);
        if let Some(f) = self.diagonals.get_mut(q) {
            f.main *= rot;
            f.wrapped *= rot;
            f.row_wrap *= rot;
            f.col_wrap *= rot;
        }
    }

    /// Factor for the in-band step out of `(m, m')`, `None` outside the band.
    pub fn lookup(&self, m: usize, m_prime: usize) -> Option<C64> {
        let n = self.n;
        let q = (m_prime + self.offset + n - m % n) % n;
        let f = self.diagonals.get(q)?;
        Some(self.factor_on(f, q, m, m_prime))
    }

    #[inline]
    fn factor_on(&self, f: &DiagonalFactors, q: usize, m: usize, m_prime: usize) -> C64 {
        let last = self.n - 1;
        if q == self.offset {
            return f.main;
        }
        let d = q as i64 - self.offset as i64;
        if m == last {
            f.row_wrap
        } else if m_prime == last {
            f.col_wrap
        } else if m_prime as i64 - m as i64 == d {
            f.main
        } else {
            f.wrapped
        }
    }
}

fn slot_delay(params: &AfdmParams, q: usize) -> usize {
    (q / params.block_width()).min(params.l_max)
}

/// Delay block holding the band coordinate `(m, m')`.
///
/// Guard coordinates between blocks go to the nearest block.
pub fn delay_block_of(params: &AfdmParams, m: usize, m_prime: usize) -> Result<usize> {
    let n = params.n;
    let off = params.band_offset();
    let q = (m_prime % n + off + n - m % n) % n;
    if q >= params.band_len().min(n) {
        return Err(AfdmError::OutsideBand { m, m_prime });
    }
    let d = q as f64 - off as f64;
    let l = (d / params.block_width() as f64).round().max(0.0) as usize;
    Ok(l.min(params.l_max))
}

/// Pilot column estimate: `L+1` values for the rows starting at `first_row`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBand {
    pub first_row: usize,
    pub pilot_col: usize,
    pub values: Vec<C64>,
}

/// Divides the received pilot rows by the pilot, zeroing entries with `|y| < zeta`.
pub fn threshold_detect(y: &Frame, layout: &EpaLayout, t: usize, zeta: f64) -> Result<ColumnBand> {
    if y.len() != layout.n {
        return Err(AfdmError::LengthMismatch { expected: layout.n, got: y.len() });
    }
    let range = layout.pilot_rx_range(t)?;
    let values = range
        .iter()
        .map(|m| if y[m].norm() >= zeta { y[m] / layout.pilot_amplitude } else { C64::new(0.0, 0.0) })
        .collect();
    Ok(ColumnBand { first_row: range.start, pilot_col: layout.pilot_index(t), values })
}

/// Carries each non-zero entry of `column` along its diagonal into `out`.
///
/// Returns the number of complex multiplications spent.
pub fn reconstruct_diagonal(table: &TransformFactorTable, column: &ColumnBand, out: &mut ChannelBand) -> usize {
    let n = table.n;
    let mut mults = 0;
    for (i, &v0) in column.values.iter().enumerate() {
        let mut m = (column.first_row + i) % n;
        let mut mp = column.pilot_col % n;
        let Some(q) = out.slot_of(m, mp) else {
            continue;
        };
        out.set(m, q, v0);
        if v0 == C64::new(0.0, 0.0) {
            continue;
        }
        let f = table.diagonals[q];
        let mut v = v0;
        for _ in 1..n {
            v *= table.factor_on(&f, q, m, mp);
            m = (m + 1) % n;
            mp = (mp + 1) % n;
            out.set(m, q, v);
        }
        mults += n - 1;
    }
    mults
}

/// Rebuilds a full single-delay subchannel matrix from its column `col`.
pub fn reconstruct_subchannel(params: &AfdmParams, column: &[C64], col: usize, delay: usize) -> Result<CMatrix> {
    let n = params.n;
    if column.len() != n {
        return Err(AfdmError::LengthMismatch { expected: n, got: column.len() });
    }
    let mut out = CMatrix::zeros(n, n);
    for (m0, &v0) in column.iter().enumerate() {
        let (mut m, mut mp, mut v) = (m0, col % n, v0);
        out[(m, mp)] = v;
        for _ in 1..n {
            v *= transform_factor(params, delay, m, mp);
            m = (m + 1) % n;
            mp = (mp + 1) % n;
            out[(m, mp)] = v;
        }
    }
    Ok(out)
}

/// Banded estimates of every `H_{r,t}`.
#[derive(Debug, Clone)]
pub struct BandedChannelEstimate {
    pub n_r: usize,
    pub n_t: usize,
    /// Blocks in `r * n_t + t` order.
    pub blocks: Vec<ChannelBand>,
    pub threshold: f64,
    pub pilot_amplitude: f64,
    /// Multiplications spent in reconstruction, per block.
    pub multiplications: Vec<usize>,
}

impl BandedChannelEstimate {
    pub fn block(&self, r: usize, t: usize) -> &ChannelBand {
        &self.blocks[r * self.n_t + t]
    }

    /// `sum_t H_{r,t} x_t` for every receive antenna.
    pub fn apply(&self, x: &[Vec<C64>]) -> Vec<Vec<C64>> {
        (0..self.n_r)
            .map(|r| {
                let mut acc = vec![C64::new(0.0, 0.0); self.blocks[0].n()];
                for (t, xt) in x.iter().enumerate() {
                    for (a, v) in acc.iter_mut().zip(self.block(r, t).mul_vec(xt)) {
                        *a += v;
                    }
                }
                acc
            })
            .collect()
    }

    /// Writes non-zero entries of `H_MIMO` as `row col re im` lines.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.blocks.first().map_or(0, ChannelBand::n);
        writeln!(
            w,
            "# n={n} n_r={} n_t={} threshold={:e} pilot_amplitude={:e}",
            self.n_r, self.n_t, self.threshold, self.pilot_amplitude
        )?;
        writeln!(w, "# row col re im")?;
        for r in 0..self.n_r {
            for t in 0..self.n_t {
                for (m, mp, v) in self.block(r, t).nonzeros() {
                    writeln!(w, "{} {} {:.17e} {:.17e}", r * n + m, t * n + mp, v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs extraction, threshold detection and reconstruction for all antenna pairs.
///
/// `rx` holds one received DAFT-domain frame per receive antenna.
pub fn estimate_mimo(
    params: &AfdmParams,
    rx: &[Frame],
    layout: &EpaLayout,
    zeta: f64,
    table: &TransformFactorTable,
) -> Result<BandedChannelEstimate> {
    if layout.n != params.n || layout.band != params.band {
        return Err(AfdmError::Config("layout does not match the AFDM parameters".into()));
    }
    if rx.is_empty() {
        return Err(AfdmError::AntennaIndex("no receive frames".into()));
    }
    let mut blocks = Vec::with_capacity(rx.len() * layout.n_t);
    let mut multiplications = Vec::with_capacity(blocks.capacity());
    for y in rx {
        for t in 0..layout.n_t {
            let column = threshold_detect(y, layout, t, zeta)?;
            let mut band = ChannelBand::for_params(params);
            multiplications.push(reconstruct_diagonal(table, &column, &mut band));
            blocks.push(band);
        }
    }
    Ok(BandedChannelEstimate {
        n_r: rx.len(),
        n_t: layout.n_t,
        blocks,
        threshold: zeta,
        pilot_amplitude: layout.pilot_amplitude,
        multiplications,
    })
}

/// Received DAFT-domain frames for pilot-only transmission over `realization`,
/// without noise: IDAFT, time-domain channel, DAFT.
pub fn noiseless_pilot_rx(
    params: &AfdmParams,
    realization: &MimoChannelRealization,
    layout: &EpaLayout,
) -> Result<Vec<Frame>> {
    let plan = DaftPlan::new(params);
    let zero = vec![C64::new(0.0, 0.0); layout.data_len()];
    let tx = build_epa_frames(layout, &vec![zero; layout.n_t])?;
    let s: Vec<Frame> = tx.iter().map(|x| plan.idaft(x)).collect::<Result<_>>()?;
    (0..realization.n_r)
        .map(|r| {
            let mut d = Frame::zeros(params.n, Domain::Time);
            for (t, st) in s.iter().enumerate() {
                let part = apply_paths(params, &realization.paths(r, t)?, st)?;
                for (a, b) in d.iter_mut().zip(part.iter()) {
                    *a += b;
                }
            }
            plan.daft(&d)
        })
        .collect()
}

/// `||H_est - H||_F^2 / ||H||_F^2` for a banded estimate of a dense matrix.
pub fn nmse(estimate: &ChannelBand, truth: &CMatrix) -> f64 {
    let n = truth.nrows();
    let mut err = 0.0;
    let mut power = 0.0;
    for m in 0..n {
        for mp in 0..n {
            let h = truth[(m, mp)];
            err += (estimate.get(m, mp) - h).norm_sqr();
            power += h.norm_sqr();
        }
    }
    err / power
}
