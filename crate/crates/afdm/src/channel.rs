//! Doubly selective channels and their DAFT-domain matrices.
//!
//! A path with gain `h`, integer delay `l` and Doppler `nu` acts on time samples as
//! `d[n] = h exp(-j 2 pi nu n / N) s[(n - l) mod N]`. In the DAFT domain the same path
//! becomes `H = A (Delta_nu Pi^l) A^H`, whose entries have the closed form
//! `H[m, m'] = C(l, m, m') F(l, nu, m, m') / N`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::band::ChannelBand;
use crate::daft::{Domain, Frame, DENSE_LIMIT};
use crate::error::{AfdmError, Result};
use crate::noise::complex_gaussian;
use crate::params::AfdmParams;
use crate::{CMatrix, C64};

/// Splits a normalized Doppler into `(alpha, beta)` with `beta` in `(-1/2, 1/2]`.
pub fn split_doppler(nu: f64) -> (i64, f64) {
    let alpha = (nu - 0.5).ceil() as i64;
    (alpha, nu - alpha as f64)
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: C64,
    pub delay: usize,
    pub doppler: f64,
}

impl Path {
    pub fn alpha(&self) -> i64 {
        split_doppler(self.doppler).0
    }

    pub fn beta(&self) -> f64 {
        split_doppler(self.doppler).1
    }

    pub fn validate(&self, params: &AfdmParams) -> Result<()> {
        check_support(params, self.delay, self.doppler)
    }
}

fn check_support(params: &AfdmParams, delay: usize, doppler: f64) -> Result<()> {
    if delay > params.l_max {
        return Err(AfdmError::DelayOutOfRange { delay, l_max: params.l_max });
    }
    let limit = params.alpha_max as f64 + 0.5;
    let alpha = split_doppler(doppler).0;
    if !doppler.is_finite() || doppler.abs() > limit || alpha.unsigned_abs() as usize > params.alpha_max {
        return Err(AfdmError::DopplerOutOfRange { doppler, limit });
    }
    Ok(())
}

/// Delay-Doppler pairs shared by every antenna pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayDopplerProfile {
    pub paths: Vec<(usize, f64)>,
}

impl DelayDopplerProfile {
    pub fn new(paths: Vec<(usize, f64)>) -> Self {
        Self { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Number of paths per delay, `P_l` for `l = 0..=l_max`.
    pub fn per_delay_counts(&self, l_max: usize) -> Vec<usize> {
        let mut counts = vec![0; l_max + 1];
        for &(l, _) in &self.paths {
            if l <= l_max {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn is_integer_doppler(&self) -> bool {
        self.paths.iter().all(|&(_, nu)| nu.fract() == 0.0)
    }

    pub fn validate(&self, params: &AfdmParams) -> Result<()> {
        self.paths.iter().try_for_each(|&(l, nu)| check_support(params, l, nu))
    }
}

/// How path Dopplers are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    /// Fixed `(delay, doppler)` pairs.
    Fixed { paths: Vec<(usize, f64)> },
    /// Jakes Doppler `nu_max cos(theta)`, `theta ~ U[-pi, pi]`, one path per delay entry.
    /// With `integer` set the Doppler is rounded to the nearest integer.
    Jakes {
        delays: Vec<usize>,
        nu_max: f64,
        #[serde(default)]
        integer: bool,
    },
}

impl ProfileSpec {
    pub fn path_count(&self) -> usize {
        match self {
            ProfileSpec::Fixed { paths } => paths.len(),
            ProfileSpec::Jakes { delays, .. } => delays.len(),
        }
    }

    pub fn validate(&self, params: &AfdmParams) -> Result<()> {
        match self {
            ProfileSpec::Fixed { paths } => {
                if paths.is_empty() {
                    return Err(AfdmError::Config("profile has no paths".into()));
                }
                DelayDopplerProfile::new(paths.clone()).validate(params)
            }
            ProfileSpec::Jakes { delays, nu_max, .. } => {
                if delays.is_empty() {
                    return Err(AfdmError::Config("profile has no paths".into()));
                }
                for &l in delays {
                    check_support(params, l, 0.0)?;
                }
                check_support(params, 0, *nu_max)?;
                check_support(params, 0, -*nu_max)
            }
        }
    }

    fn draw_profile<R: Rng + ?Sized>(&self, rng: &mut R) -> DelayDopplerProfile {
        match self {
            ProfileSpec::Fixed { paths } => DelayDopplerProfile::new(paths.clone()),
            ProfileSpec::Jakes { delays, nu_max, integer } => DelayDopplerProfile::new(
                delays
                    .iter()
                    .map(|&l| {
                        let theta = rng.random_range(-PI..PI);
                        let nu = nu_max * theta.cos();
                        (l, if *integer { nu.round() } else { nu })
                    })
                    .collect(),
            ),
        }
    }
}

/// Per-antenna-pair gains over one shared delay-Doppler profile.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoChannelRealization {
    pub n_r: usize,
    pub n_t: usize,
    pub profile: DelayDopplerProfile,
    /// Indexed `[(r * n_t + t) * P + i]` with zero-based antennas.
    gains: Vec<C64>,
}

impl MimoChannelRealization {
    pub fn new(profile: DelayDopplerProfile, n_r: usize, n_t: usize, gains: Vec<C64>) -> Result<Self> {
        let expected = n_r * n_t * profile.len();
        if gains.len() != expected {
            return Err(AfdmError::LengthMismatch { expected, got: gains.len() });
        }
        Ok(Self { n_r, n_t, profile, gains })
    }

    /// Unit gain on every path of every antenna pair.
    pub fn unit_gains(profile: DelayDopplerProfile, n_r: usize, n_t: usize) -> Self {
        let gains = vec![C64::new(1.0, 0.0); n_r * n_t * profile.len()];
        Self { n_r, n_t, profile, gains }
    }

    pub fn gain(&self, r: usize, t: usize, i: usize) -> C64 {
        self.gains[(r * self.n_t + t) * self.profile.len() + i]
    }

    pub fn gains(&self) -> &[C64] {
        &self.gains
    }

    /// Paths between receive antenna `r` and transmit antenna `t` (zero based).
    pub fn paths(&self, r: usize, t: usize) -> Result<Vec<Path>> {
        self.check_pair(r, t)?;
        Ok(self
            .profile
            .paths
            .iter()
            .enumerate()
            .map(|(i, &(delay, doppler))| Path { gain: self.gain(r, t, i), delay, doppler })
            .collect())
    }

    fn check_pair(&self, r: usize, t: usize) -> Result<()> {
        if r >= self.n_r || t >= self.n_t {
            return Err(AfdmError::AntennaIndex(format!("(r={r}, t={t}) with {}x{} antennas", self.n_r, self.n_t)));
        }
        Ok(())
    }
}

/// Draws a realization: Dopplers from `spec`, gains i.i.d. `CN(0, 1/P)`.
pub fn sample_channel<R: Rng + ?Sized>(
    params: &AfdmParams,
    spec: &ProfileSpec,
    n_r: usize,
    n_t: usize,
    rng: &mut R,
) -> Result<MimoChannelRealization> {
    spec.validate(params)?;
    let profile = spec.draw_profile(rng);
    profile.validate(params)?;
    let var = 1.0 / profile.len() as f64;
    let gains = (0..n_r * n_t * profile.len()).map(|_| complex_gaussian(rng, var)).collect();
    MimoChannelRealization::new(profile, n_r, n_t, gains)
}

/// Phase picked up by samples that wrap around the frame start.
///
/// A chirp-periodic prefix repeats `s[N + n] exp(-j 2 pi c1 (N^2 + 2 N n))`; with
/// `2 N c1` integer and N even the factor is exactly one and the channel is a
/// plain cyclic shift.
fn wrap_phase(params: &AfdmParams, n: usize, delay: usize) -> C64 {
    let nn = params.n as f64;
    let k = n as f64 - delay as f64;
    let phase = (params.c1 * (nn * nn + 2.0 * nn * k)).rem_euclid(1.0);
    C64::from_polar(1.0, -2.0 * PI * phase)
}

fn doppler_phasor(nu: f64, n: usize, len: usize) -> C64 {
    let phase = (nu * n as f64 / len as f64).rem_euclid(1.0);
    C64::from_polar(1.0, -2.0 * PI * phase)
}

/// Applies the noiseless time-domain channel between antennas `r` and `t`.
pub fn apply_time_domain(
    params: &AfdmParams,
    realization: &MimoChannelRealization,
    r: usize,
    t: usize,
    s: &Frame,
) -> Result<Frame> {
    let paths = realization.paths(r, t)?;
    apply_paths(params, &paths, s)
}

/// Time-domain channel for an explicit path list.
pub fn apply_paths(params: &AfdmParams, paths: &[Path], s: &Frame) -> Result<Frame> {
    let n = params.n;
    if s.len() != n {
        return Err(AfdmError::LengthMismatch { expected: n, got: s.len() });
    }
    let mut d = vec![C64::new(0.0, 0.0); n];
    for p in paths {
        let l = p.delay % n;
        for (k, out) in d.iter_mut().enumerate() {
            let src = (k + n - l) % n;
            let mut v = p.gain * doppler_phasor(p.doppler, k, n) * s[src];
            if k < l {
                v *= wrap_phase(params, k, l);
            }
            *out += v;
        }
    }
    Ok(Frame::new(d, Domain::Time))
}

/// Dense time-domain subchannel `Delta_nu Pi^l` (with the prefix wrap phase).
pub fn time_subchannel_matrix(params: &AfdmParams, delay: usize, doppler: f64) -> CMatrix {
    let n = params.n;
    let l = delay % n;
    CMatrix::from_fn(n, n, |row, col| {
        if col != (row + n - l) % n {
            return C64::new(0.0, 0.0);
        }
        let mut v = doppler_phasor(doppler, row, n);
        if row < l {
            v *= wrap_phase(params, row, l);
        }
        v
    })
}

/// DAFT-domain column offset of a path's peak, `(alpha + (2(alpha_max+k_nu)+1) l) mod N`.
pub fn index_indicator(params: &AfdmParams, delay: usize, alpha: i64) -> usize {
    let n = params.n as i64;
    (alpha + (params.block_width() * delay) as i64).rem_euclid(n) as usize
}

/// Closed-form entry `H[m, m']` of the DAFT-domain subchannel for `(delay, doppler)`.
pub fn subchannel_entry(params: &AfdmParams, delay: usize, doppler: f64, m: usize, m_prime: usize) -> C64 {
    let n = params.n;
    let nf = n as f64;
    let (alpha, beta) = split_doppler(doppler);
    let ind = index_indicator(params, delay, alpha);
    let k = (m + ind + n - m_prime % n) % n;
    let spread = if beta == 0.0 {
        if k == 0 {
            C64::new(nf, 0.0)
        } else {
            return C64::new(0.0, 0.0);
        }
    } else {
        // geometric sum over n of exp(-j 2 pi n (k + beta) / N)
        let num = C64::from_polar(1.0, -2.0 * PI * beta) - 1.0;
        let den = C64::from_polar(1.0, -2.0 * PI * (k as f64 + beta) / nf) - 1.0;
        num / den
    };
    let (l, mp, mm) = (delay as f64, m_prime as f64, m as f64);
    let phase = (params.c1 * l * l).rem_euclid(1.0) - ((m_prime * delay) % n) as f64 / nf
        + (params.c2 * (mp * mp - mm * mm)).rem_euclid(1.0);
    C64::from_polar(1.0 / nf, 2.0 * PI * phase) * spread
}

/// Dense DAFT-domain subchannel matrix of one unit-gain path.
pub fn subchannel_matrix(params: &AfdmParams, delay: usize, doppler: f64) -> Result<CMatrix> {
    guard(params.n)?;
    Ok(CMatrix::from_fn(params.n, params.n, |m, mp| subchannel_entry(params, delay, doppler, m, mp)))
}

fn guard(size: usize) -> Result<()> {
    if size > DENSE_LIMIT {
        return Err(AfdmError::SizeGuard { size, limit: DENSE_LIMIT });
    }
    Ok(())
}

/// Dense effective matrix `H_{r,t} = sum_i h_i H_i` (zero-based antennas).
pub fn effective_matrix(
    params: &AfdmParams,
    realization: &MimoChannelRealization,
    r: usize,
    t: usize,
) -> Result<CMatrix> {
    let paths = realization.paths(r, t)?;
    let cache = SubchannelCache::new(params, &realization.profile)?;
    Ok(cache.combine(&paths))
}

/// Block matrix `H_MIMO` of size `N N_r x N N_t`.
pub fn assemble_mimo(params: &AfdmParams, realization: &MimoChannelRealization) -> Result<CMatrix> {
    let n = params.n;
    guard(n * realization.n_r.max(realization.n_t))?;
    let cache = SubchannelCache::new(params, &realization.profile)?;
    let mut out = CMatrix::zeros(n * realization.n_r, n * realization.n_t);
    for r in 0..realization.n_r {
        for t in 0..realization.n_t {
            let block = cache.combine(&realization.paths(r, t)?);
            out.view_mut((r * n, t * n), (n, n)).copy_from(&block);
        }
    }
    Ok(out)
}

/// Dense subchannel matrices for a fixed profile, reused across gain draws.
#[derive(Debug, Clone)]
pub struct SubchannelCache {
    matrices: Vec<CMatrix>,
}

impl SubchannelCache {
    pub fn new(params: &AfdmParams, profile: &DelayDopplerProfile) -> Result<Self> {
        let matrices = profile.paths.iter().map(|&(l, nu)| subchannel_matrix(params, l, nu)).collect::<Result<_>>()?;
        Ok(Self { matrices })
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    /// `sum_i gain_i H_i`; path delays/Dopplers must match the cached profile.
    pub fn combine(&self, paths: &[Path]) -> CMatrix {
        let n = self.matrices.first().map_or(0, |m| m.nrows());
        let mut out = CMatrix::zeros(n, n);
        for (h, p) in self.matrices.iter().zip(paths) {
            out.zip_apply(h, |o, v| *o += p.gain * v);
        }
        out
    }

    /// Dense `H_MIMO` for a realization over the cached profile.
    pub fn assemble(&self, realization: &MimoChannelRealization) -> Result<CMatrix> {
        let n = self.matrices.first().map_or(0, |m| m.nrows());
        let mut out = CMatrix::zeros(n * realization.n_r, n * realization.n_t);
        for r in 0..realization.n_r {
            for t in 0..realization.n_t {
                let block = self.combine(&realization.paths(r, t)?);
                out.view_mut((r * n, t * n), (n, n)).copy_from(&block);
            }
        }
        Ok(out)
    }
}

/// Band restriction of the true `H_{r,t}`, built entry by entry in `O(N (L+1) P)`.
pub fn effective_band(
    params: &AfdmParams,
    realization: &MimoChannelRealization,
    r: usize,
    t: usize,
) -> Result<ChannelBand> {
    let paths = realization.paths(r, t)?;
    Ok(band_of_paths(params, &paths))
}

/// Band restriction of `sum_i h_i H_i` for an explicit path list.
pub fn band_of_paths(params: &AfdmParams, paths: &[Path]) -> ChannelBand {
    let mut band = ChannelBand::for_params(params);
    let n = params.n;
    for p in paths {
        let (alpha, beta) = split_doppler(p.doppler);
        if beta == 0.0 {
            // only the central point is non-zero
            let ind = index_indicator(params, p.delay, alpha);
            for m in 0..n {
                let col = (m + ind) % n;
                if let Some(q) = band.slot_of(m, col) {
                    let v = band.at(m, q) + p.gain * subchannel_entry(params, p.delay, p.doppler, m, col);
                    band.set(m, q, v);
                }
            }
        } else {
            for m in 0..n {
                for q in 0..band.width() {
                    let col = band.column(m, q);
                    let v = band.at(m, q) + p.gain * subchannel_entry(params, p.delay, p.doppler, m, col);
                    band.set(m, q, v);
                }
            }
        }
    }
    band
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::daft::{daft_matrix, DaftPlan};
    use crate::test_util::{max_abs_diff, max_matrix_diff, random_frame};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p64() -> AfdmParams {
        AfdmParams::with_default_c2(64, 2, 2, 1).unwrap()
    }

    fn unitarity_error(h: &CMatrix) -> f64 {
        let n = h.nrows();
        max_matrix_diff(&(h * h.adjoint()), &CMatrix::identity(n, n))
    }

    #[test]
    fn doppler_split() {
        assert_eq!(split_doppler(0.5), (0, 0.5));
        assert_eq!(split_doppler(-0.5), (-1, 0.5));
        assert_eq!(split_doppler(1.0), (1, 0.0));
        let (a, b) = split_doppler(0.8);
        assert_eq!(a, 1);
        assert!((b + 0.2).abs() < 1e-15);
        assert_eq!(split_doppler(-2.0), (-2, 0.0));
    }

    #[test]
    fn closed_form_matches_similarity_transform() {
        let p = p64();
        let a = daft_matrix(&p).unwrap();
        for &(l, nu) in &[(0usize, 0.0), (1, 1.0), (2, -2.0), (1, 0.3), (2, -1.7), (0, 2.5)] {
            let dense = &a * time_subchannel_matrix(&p, l, nu) * a.adjoint();
            let closed = subchannel_matrix(&p, l, nu).unwrap();
            assert!(max_matrix_diff(&dense, &closed) < 1e-10, "(l, nu) = ({l}, {nu})");
        }
    }

    #[test]
    fn odd_frame_keeps_closed_form() {
        let p = AfdmParams::with_default_c2(15, 2, 1, 0).unwrap();
        let a = daft_matrix(&p).unwrap();
        let dense = &a * time_subchannel_matrix(&p, 2, 0.4) * a.adjoint();
        assert!(max_matrix_diff(&dense, &subchannel_matrix(&p, 2, 0.4).unwrap()) < 1e-10);
    }

    #[test]
    fn integer_doppler_rows_have_single_unit_entry() {
        let p = p64();
        for &(l, alpha) in &[(0usize, 0i64), (1, -2), (2, 2)] {
            let h = subchannel_matrix(&p, l, alpha as f64).unwrap();
            let ind = index_indicator(&p, l, alpha);
            for m in 0..p.n {
                for mp in 0..p.n {
                    let mag = h[(m, mp)].norm();
                    if mp == (m + ind) % p.n {
                        assert!((mag - 1.0).abs() < 1e-12);
                    } else {
                        assert!(mag < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn subchannels_are_unitary_with_unit_rows() {
        let p = p64();
        for &(l, nu) in &[(0usize, 0.37), (2, -1.2), (1, 2.5)] {
            let h = subchannel_matrix(&p, l, nu).unwrap();
            assert!(unitarity_error(&h) < 1e-10);
            for m in 0..p.n {
                let norm: f64 = h.row(m).iter().map(|v| v.norm_sqr()).sum();
                assert!((norm - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fractional_leakage_decays_from_central_point() {
        let p = p64();
        let (l, nu) = (1usize, 0.3);
        let h = subchannel_matrix(&p, l, nu).unwrap();
        let ind = index_indicator(&p, l, split_doppler(nu).0);
        let half = p.block_width() / 2;
        for m in 0..p.n {
            let centre = h[(m, (m + ind) % p.n)].norm();
            // walk away from the central point on both sides of the delay block
            for dir in [1usize, p.n - 1] {
                let mut prev = centre;
                for step in 1..=half {
                    let col = (m + ind + dir * step) % p.n;
                    let mag = h[(m, col)].norm();
                    assert!(mag < centre);
                    assert!(mag <= prev + 1e-15);
                    prev = mag;
                }
            }
        }
    }

    #[test]
    fn index_indicator_values() {
        let p = AfdmParams::with_default_c2(1024, 4, 4, 0).unwrap();
        assert_eq!(index_indicator(&p, 0, 0), 0);
        assert_eq!(index_indicator(&p, 1, 0), 9);
        let mut seen = std::collections::HashSet::new();
        for l in 0..=p.l_max {
            for a in -(p.alpha_max as i64)..=p.alpha_max as i64 {
                assert!(seen.insert(index_indicator(&p, l, a)));
            }
        }
    }

    #[test]
    fn index_indicator_injective_at_bound() {
        // smallest admissible frame: every (l, alpha) still lands on its own column
        let p = AfdmParams::with_default_c2(6, 1, 1, 0).unwrap();
        let mut seen = std::collections::HashSet::new();
        for l in 0..=1 {
            for a in -1..=1i64 {
                assert!(seen.insert(index_indicator(&p, l, a)));
            }
        }
    }

    #[test]
    fn time_domain_identity_and_shift() {
        let p = p64();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_frame(&mut rng, 64, Domain::Time);
        let id = [Path { gain: C64::new(1.0, 0.0), delay: 0, doppler: 0.0 }];
        assert!(max_abs_diff(&apply_paths(&p, &id, &s).unwrap(), &s) < 1e-15);
        let shift = [Path { gain: C64::new(1.0, 0.0), delay: 2, doppler: 0.0 }];
        let d = apply_paths(&p, &shift, &s).unwrap();
        for k in 0..64 {
            assert!((d[k] - s[(k + 62) % 64]).norm() < 1e-13);
        }
    }

    #[test]
    fn time_domain_matches_dense_sum() {
        let p = p64();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_frame(&mut rng, 64, Domain::Time);
        let paths = [
            Path { gain: C64::new(0.6, -0.2), delay: 0, doppler: 0.4 },
            Path { gain: C64::new(-0.1, 0.9), delay: 2, doppler: -1.3 },
        ];
        let mut dense = CMatrix::zeros(64, 64);
        for path in &paths {
            dense += time_subchannel_matrix(&p, path.delay, path.doppler) * path.gain;
        }
        let expect = dense * nalgebra::DVector::from_column_slice(&s);
        assert!(max_abs_diff(&apply_paths(&p, &paths, &s).unwrap(), expect.as_slice()) < 1e-12);
    }

    #[test]
    fn fixed_profile_realization_is_valid() {
        let p = AfdmParams::with_default_c2(6, 1, 1, 0).unwrap();
        let spec = ProfileSpec::Fixed { paths: vec![(0, 0.0), (1, 1.0)] };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = sample_channel(&p, &spec, 1, 1, &mut rng).unwrap();
        for path in real.paths(0, 0).unwrap() {
            path.validate(&p).unwrap();
        }
        let unit = MimoChannelRealization::unit_gains(real.profile.clone(), 2, 2);
        for path in unit.paths(1, 1).unwrap() {
            path.validate(&p).unwrap();
            assert_eq!(path.gain, C64::new(1.0, 0.0));
        }
    }

    #[test]
    fn delay_out_of_range_is_rejected() {
        let p = AfdmParams::with_default_c2(64, 1, 2, 0).unwrap();
        let spec = ProfileSpec::Jakes { delays: vec![0, 2], nu_max: 2.0, integer: false };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_channel(&p, &spec, 1, 1, &mut rng).unwrap_err(),
            AfdmError::DelayOutOfRange { delay: 2, l_max: 1 }
        );
    }

    #[test]
    fn jakes_gains_and_dopplers() {
        let p = AfdmParams::with_default_c2(64, 2, 2, 1).unwrap();
        let spec = ProfileSpec::Jakes { delays: vec![0, 0, 1, 2], nu_max: 2.0, integer: false };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 10_000;
        let mut power = 0.0;
        for _ in 0..trials {
            let real = sample_channel(&p, &spec, 1, 1, &mut rng).unwrap();
            assert!(real.profile.paths.iter().all(|&(_, nu)| nu.abs() <= 2.0));
            power += real.gains().iter().map(|g| g.norm_sqr()).sum::<f64>();
        }
        let mean = power / trials as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean power {mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = AfdmParams::with_default_c2(64, 2, 2, 1).unwrap();
        let spec = ProfileSpec::Jakes { delays: vec![0, 0, 1, 2], nu_max: 2.0, integer: true };
        let a = sample_channel(&p, &spec, 2, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_channel(&p, &spec, 2, 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.profile.is_integer_doppler());
    }

    #[test]
    fn effective_matrix_matches_pipeline() {
        let p = p64();
        let plan = DaftPlan::new(&p);
        let spec = ProfileSpec::Jakes { delays: vec![0, 0, 1, 2], nu_max: 2.0, integer: false };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let real = sample_channel(&p, &spec, 1, 1, &mut rng).unwrap();
        let h = effective_matrix(&p, &real, 0, 0).unwrap();
        let x = random_frame(&mut rng, 64, Domain::Tx);
        let y = plan.daft(&apply_time_domain(&p, &real, 0, 0, &plan.idaft(&x).unwrap()).unwrap()).unwrap();
        let direct = h * nalgebra::DVector::from_column_slice(&x);
        assert!(max_abs_diff(&y, direct.as_slice()) < 1e-10);
    }

    #[test]
    fn single_path_effective_equals_subchannel() {
        let p = p64();
        let profile = DelayDopplerProfile::new(vec![(1, 0.6)]);
        let real = MimoChannelRealization::unit_gains(profile, 1, 1);
        let h = effective_matrix(&p, &real, 0, 0).unwrap();
        assert!(max_matrix_diff(&h, &subchannel_matrix(&p, 1, 0.6).unwrap()) < 1e-15);
    }

    #[test]
    fn integer_doppler_energy_stays_in_band() {
        let p = p64();
        let spec = ProfileSpec::Jakes { delays: vec![0, 0, 1, 2], nu_max: 2.0, integer: true };
        let real = sample_channel(&p, &spec, 1, 1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let h = effective_matrix(&p, &real, 0, 0).unwrap();
        let band = ChannelBand::for_params(&p);
        for m in 0..p.n {
            for mp in 0..p.n {
                if band.slot_of(m, mp).is_none() {
                    assert!(h[(m, mp)].norm() < 1e-12);
                }
            }
        }
        let b = effective_band(&p, &real, 0, 0).unwrap();
        assert!(max_matrix_diff(&b.to_dense(), &h) < 1e-12);
    }

    #[test]
    fn mimo_blocks_and_pipeline() {
        let p = p64();
        let plan = DaftPlan::new(&p);
        let spec = ProfileSpec::Jakes { delays: vec![0, 1, 2], nu_max: 2.0, integer: false };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let real = sample_channel(&p, &spec, 2, 2, &mut rng).unwrap();
        let big = assemble_mimo(&p, &real).unwrap();
        assert_eq!(big.shape(), (128, 128));
        for r in 0..2 {
            for t in 0..2 {
                let blk = effective_matrix(&p, &real, r, t).unwrap();
                assert!(max_matrix_diff(&big.view((r * 64, t * 64), (64, 64)).into_owned(), &blk) < 1e-15);
            }
        }
        let xs: Vec<Frame> = (0..2).map(|_| random_frame(&mut rng, 64, Domain::Tx)).collect();
        let stacked: Vec<C64> = xs.iter().flat_map(|x| x.iter().copied()).collect();
        let direct = big * nalgebra::DVector::from_column_slice(&stacked);
        for r in 0..2 {
            let mut d = vec![C64::new(0.0, 0.0); 64];
            for (t, x) in xs.iter().enumerate() {
                let rx = apply_time_domain(&p, &real, r, t, &plan.idaft(x).unwrap()).unwrap();
                d.iter_mut().zip(rx.iter()).for_each(|(a, b)| *a += b);
            }
            let y = plan.daft(&Frame::new(d, Domain::Time)).unwrap();
            assert!(max_abs_diff(&y, &direct.as_slice()[r * 64..(r + 1) * 64]) < 1e-10);
        }
        let siso = MimoChannelRealization::unit_gains(real.profile.clone(), 1, 1);
        assert_eq!(assemble_mimo(&p, &siso).unwrap().shape(), (64, 64));
    }

    #[test]
    fn bad_antenna_index() {
        let real = MimoChannelRealization::unit_gains(DelayDopplerProfile::new(vec![(0, 0.0)]), 1, 2);
        assert!(matches!(real.paths(1, 0), Err(AfdmError::AntennaIndex(_))));
    }
}
