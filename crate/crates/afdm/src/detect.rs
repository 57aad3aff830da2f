//! DAFT-domain symbol detection: exact ML by sphere search, Gaussian message
//! passing on the sparse channel graph, and a linear MMSE baseline.
//!
//! Detectors return symbol labels; `Constellation::points()[label]` is the symbol
//! and the label's bits are its Gray-coded bit pattern.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::band::ChannelBand;
use crate::error::{AfdmError, Result};
use crate::{CMatrix, C64};

/// Largest ML search space, `|A|^(N N_t)`.
pub const ML_SEARCH_LIMIT: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    #[serde(alias = "4qam", alias = "qpsk")]
    Qam4,
    #[serde(alias = "16qam")]
    Qam16,
}

/// Unit-energy alphabet with Gray labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    modulation: Modulation,
    points: Vec<C64>,
    bits: usize,
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let points = match modulation {
            Modulation::Bpsk => vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
            Modulation::Qam4 => (0..4)
                .map(|label| {
                    let re = if label & 0b10 == 0 { 1.0 } else { -1.0 };
                    let im = if label & 0b01 == 0 { 1.0 } else { -1.0 };
                    C64::new(re, im) * FRAC_1_SQRT_2
                })
                .collect(),
            Modulation::Qam16 => {
                // per axis: Gray code g sits at level 2 k - 3 with k the inverse Gray of g
                let level = |g: usize| (2 * (g ^ (g >> 1)) as i32 - 3) as f64;
                let scale = 1.0 / 10f64.sqrt();
                (0..16).map(|label| C64::new(level(label >> 2), level(label & 0b11)) * scale).collect()
            }
        };
        let bits = points.len().trailing_zeros() as usize;
        Self { modulation, points, bits }
    }

    pub fn modulation(&self) -> Modulation {
        self.modulation
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits
    }

    pub fn symbol(&self, label: usize) -> C64 {
        self.points[label]
    }

    /// Label of the closest point.
    pub fn nearest(&self, z: C64) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Differing bits between two labels.
    pub fn bit_errors(&self, a: usize, b: usize) -> u32 {
        (a ^ b).count_ones()
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Ml,
    Mp,
    Lmmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    #[serde(default = "default_iterations")]
    pub n_iter: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Noise variance; filled from the SNR by the harness.
    #[serde(default)]
    pub noise_var: f64,
}

fn default_iterations() -> usize {
    20
}

fn default_damping() -> f64 {
    0.6
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        Self { kind, n_iter: default_iterations(), damping: default_damping(), noise_var: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(AfdmError::Config(format!("damping {} outside (0, 1]", self.damping)));
        }
        if !(self.noise_var >= 0.0) {
            return Err(AfdmError::Config(format!("noise variance {} is negative", self.noise_var)));
        }
        Ok(())
    }
}

/// Size of the ML search space for `unknowns` symbols.
pub fn ml_search_space(constellation: &Constellation, unknowns: usize) -> f64 {
    (constellation.len() as f64).powi(unknowns as i32)
}

/// Exact `argmin_x ||y - H x||^2` over the constellation.
///
/// Uses a depth-first sphere search on the QR factor of `H`, which visits every
/// candidate whose partial metric beats the best full candidate found so far and
/// so returns the same minimizer as exhaustive enumeration.
pub fn detect_ml(h: &CMatrix, y: &[C64], constellation: &Constellation) -> Result<Vec<usize>> {
    let (rows, cols) = h.shape();
    if y.len() != rows {
        return Err(AfdmError::LengthMismatch { expected: rows, got: y.len() });
    }
    let size = ml_search_space(constellation, cols);
    if size > ML_SEARCH_LIMIT {
        return Err(AfdmError::SearchSpace { size, limit: ML_SEARCH_LIMIT });
    }
    if rows < cols {
        return Ok(exhaustive_ml(h, y, constellation));
    }
    let qr = h.clone().qr();
    let r = qr.r();
    let z = qr.q().adjoint() * nalgebra::DVector::from_column_slice(y);
    let mut search = Sphere {
        r: &r,
        z: z.as_slice(),
        points: constellation.points(),
        current: vec![0; cols],
        best: vec![0; cols],
        radius: f64::INFINITY,
    };
    search.descend(cols, 0.0);
    Ok(search.best)
}

struct Sphere<'a> {
    r: &'a CMatrix,
    z: &'a [C64],
    points: &'a [C64],
    current: Vec<usize>,
    best: Vec<usize>,
    radius: f64,
}

impl Sphere<'_> {
    /// Fixes symbols `level..` and searches symbol `level - 1`.
    fn descend(&mut self, level: usize, partial: f64) {
        if level == 0 {
            if partial < self.radius {
                self.radius = partial;
                self.best.copy_from_slice(&self.current);
            }
            return;
        }
        let k = level - 1;
        let cols = self.current.len();
        let mut target = self.z[k];
        for j in level..cols {
            target -= self.r[(k, j)] * self.points[self.current[j]];
        }
        let diag = self.r[(k, k)];
        let mut order: Vec<(f64, usize)> =
            self.points.iter().enumerate().map(|(i, p)| ((target - diag * p).norm_sqr(), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (cost, i) in order {
            let next = partial + cost;
            if next >= self.radius {
                break;
            }
            self.current[k] = i;
            self.descend(k, next);
        }
    }
}

fn exhaustive_ml(h: &CMatrix, y: &[C64], constellation: &Constellation) -> Vec<usize> {
    let cols = h.ncols();
    let q = constellation.len();
    let mut labels = vec![0usize; cols];
    let mut best = (labels.clone(), f64::INFINITY);
    loop {
        let x: Vec<C64> = labels.iter().map(|&i| constellation.symbol(i)).collect();
        let metric = residual(h, y, &x);
        if metric < best.1 {
            best = (labels.clone(), metric);
        }
        let mut k = 0;
        while k < cols {
            labels[k] += 1;
            if labels[k] < q {
                break;
            }
            labels[k] = 0;
            k += 1;
        }
        if k == cols {
            return best.0;
        }
    }
}

/// `||y - H x||^2`.
pub fn residual(h: &CMatrix, y: &[C64], x: &[C64]) -> f64 {
    let hx = h * nalgebra::DVector::from_column_slice(x);
    y.iter().zip(hx.iter()).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// Linear MMSE equalization followed by nearest-point slicing.
pub fn detect_lmmse(h: &CMatrix, y: &[C64], n0: f64, constellation: &Constellation) -> Result<Vec<usize>> {
    let (rows, cols) = h.shape();
    if y.len() != rows {
        return Err(AfdmError::LengthMismatch { expected: rows, got: y.len() });
    }
    if !(n0 > 0.0) {
        return Err(AfdmError::Config(format!("LMMSE needs a positive noise variance, got {n0}")));
    }
    let yv = nalgebra::DVector::from_column_slice(y);
    let hh = h.adjoint();
    // (H^H H + N0 I)^-1 H^H y equals H^H (H H^H + N0 I)^-1 y; solve the smaller system
    let soft = if cols <= rows {
        let gram = &hh * h + CMatrix::identity(cols, cols) * C64::new(n0, 0.0);
        let chol = gram.cholesky().ok_or_else(|| AfdmError::Config("singular LMMSE system".into()))?;
        chol.solve(&(&hh * yv))
    } else {
        let gram = h * &hh + CMatrix::identity(rows, rows) * C64::new(n0, 0.0);
        let chol = gram.cholesky().ok_or_else(|| AfdmError::Config("singular LMMSE system".into()))?;
        hh * chol.solve(&yv)
    };
    Ok(soft.iter().map(|&z| constellation.nearest(z)).collect())
}

/// Sparse observation graph: row `i` of the CSR structure is one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannel {
    n_vars: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    coeffs: Vec<C64>,
}

impl SparseChannel {
    /// Builds the graph from per-pair bands (`r * n_t + t` order).
    ///
    /// `rows` lists the observed DAFT indices per receive antenna and `slots` the
    /// unknown symbol indices per transmit antenna; columns outside `slots` are
    /// known zeros and dropped. Variable `t * slots.len() + j` is slot `slots[j]`
    /// of antenna `t`.
    pub fn from_bands(bands: &[ChannelBand], n_r: usize, n_t: usize, rows: &[usize], slots: &[usize]) -> Self {
        let n = bands.first().map_or(0, ChannelBand::n);
        let mut var_of = vec![usize::MAX; n];
        for (j, &s) in slots.iter().enumerate() {
            var_of[s] = j;
        }
        let mut row_ptr = vec![0];
        let (mut cols, mut coeffs) = (Vec::new(), Vec::new());
        for r in 0..n_r {
            for &m in rows {
                for t in 0..n_t {
                    let band = &bands[r * n_t + t];
                    for (q, &v) in band.row(m).iter().enumerate() {
                        let j = var_of[band.column(m, q)];
                        if v != C64::new(0.0, 0.0) && j != usize::MAX {
                            cols.push(t * slots.len() + j);
                            coeffs.push(v);
                        }
                    }
                }
                row_ptr.push(cols.len());
            }
        }
        Self { n_vars: n_t * slots.len(), row_ptr, cols, coeffs }
    }

    /// Graph of a dense matrix, dropping entries with `|h| <= tol`.
    pub fn from_dense(h: &CMatrix, tol: f64) -> Self {
        let mut row_ptr = vec![0];
        let (mut cols, mut coeffs) = (Vec::new(), Vec::new());
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                if h[(i, j)].norm() > tol {
                    cols.push(j);
                    coeffs.push(h[(i, j)]);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n_vars: h.ncols(), row_ptr, cols, coeffs }
    }

    pub fn n_obs(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_edges(&self) -> usize {
        self.cols.len()
    }

    /// Largest number of symbols touching one observation.
    pub fn max_degree(&self) -> usize {
        self.row_ptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpOutput {
    pub symbols: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Edge-symbol metric evaluations, the `N N_r S |A|` unit of work.
    pub operations: u64,
}

/// Gaussian-approximation message passing.
///
/// Each observation sees its symbols through a Gaussian model of the other symbols
/// plus noise; each symbol combines the observations it touches into a damped
/// categorical message. `n_iter = 0` decides from the uniform-prior observation pass.
pub fn detect_mp(
    graph: &SparseChannel,
    y: &[C64],
    constellation: &Constellation,
    config: &DetectorConfig,
) -> Result<MpOutput> {
    config.validate()?;
    if y.len() != graph.n_obs() {
        return Err(AfdmError::LengthMismatch { expected: graph.n_obs(), got: y.len() });
    }
    let q = constellation.len();
    let pts = constellation.points();
    let n_edges = graph.n_edges();
    let n0 = config.noise_var.max(1e-300);

    // edges grouped by variable
    let mut var_ptr = vec![0usize; graph.n_vars + 1];
    for &c in &graph.cols {
        var_ptr[c + 1] += 1;
    }
    for v in 0..graph.n_vars {
        var_ptr[v + 1] += var_ptr[v];
    }
    let mut fill = var_ptr.clone();
    let mut var_edges = vec![0usize; n_edges];
    for (e, &c) in graph.cols.iter().enumerate() {
        var_edges[fill[c]] = e;
        fill[c] += 1;
    }

    // variable-to-observation messages, categorical per edge
    let uniform = 1.0 / q as f64;
    let mut probs = vec![uniform; n_edges * q];
    let prior = Moments::of(pts, &vec![uniform; q]);
    let mut moments = vec![prior; n_edges];
    // observation-to-variable log-likelihoods per edge
    let mut loglik = vec![0.0; n_edges * q];
    let mut posterior = vec![uniform; graph.n_vars * q];
    let mut operations = 0u64;
    let mut converged = false;
    let mut iterations = 0;
    let mut scratch = vec![0.0; q];
    let floor = n0 / 2.0;

    for iter in 0..=config.n_iter {
        // observation pass: interference plus noise as a real bivariate Gaussian
        for i in 0..graph.n_obs() {
            let range = graph.row_ptr[i]..graph.row_ptr[i + 1];
            let mut mu = C64::new(0.0, 0.0);
            let mut cov = Cov2 { rr: floor, ii: floor, ri: 0.0 };
            for e in range.clone() {
                mu += graph.coeffs[e] * moments[e].mean;
                cov.add(&moments[e].scaled(graph.coeffs[e]));
            }
            for e in range {
                let h = graph.coeffs[e];
                let own = moments[e].scaled(h);
                let c =
                    Cov2 { rr: (cov.rr - own.rr).max(floor), ii: (cov.ii - own.ii).max(floor), ri: cov.ri - own.ri };
                let det = (c.rr * c.ii - c.ri * c.ri).max(floor * floor);
                let resid = y[i] - (mu - h * moments[e].mean);
                for (a, p) in pts.iter().enumerate() {
                    let d = resid - h * p;
                    let quad = (c.ii * d.re * d.re - 2.0 * c.ri * d.re * d.im + c.rr * d.im * d.im) / det;
                    loglik[e * q + a] = -0.5 * quad;
                }
                operations += q as u64;
            }
        }

        // variable pass
        let mut change: f64 = 0.0;
        let last = iter == config.n_iter;
        for v in 0..graph.n_vars {
            let edges = &var_edges[var_ptr[v]..var_ptr[v + 1]];
            let total = &mut scratch;
            total.fill(0.0);
            for &e in edges {
                for a in 0..q {
                    total[a] += loglik[e * q + a];
                }
            }
            let mut post = [0.0; 16];
            normalize_log(total, &mut post[..q]);
            for a in 0..q {
                change = change.max((post[a] - posterior[v * q + a]).abs());
                posterior[v * q + a] = post[a];
            }
            if last {
                continue;
            }
            for &e in edges {
                let mut ext = [0.0; 16];
                for a in 0..q {
                    ext[a] = total[a] - loglik[e * q + a];
                }
                let mut norm = [0.0; 16];
                normalize_log(&ext[..q], &mut norm[..q]);
                let ext = norm;
                let damped = &mut probs[e * q..(e + 1) * q];
                for a in 0..q {
                    damped[a] = config.damping * ext[a] + (1.0 - config.damping) * damped[a];
                }
                moments[e] = Moments::of(pts, damped);
            }
        }
        iterations = iter;
        if iter > 0 && change < 1e-4 {
            converged = true;
            break;
        }
    }
    let symbols = (0..graph.n_vars)
        .map(|v| {
            let row = &posterior[v * q..(v + 1) * q];
            (0..q).fold(0, |best, a| if row[a] > row[best] { a } else { best })
        })
        .collect();
    Ok(MpOutput { symbols, converged, iterations, operations })
}

/// Real covariance of a complex quantity: `E[re^2]`, `E[im^2]`, `E[re im]` about the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cov2 {
    rr: f64,
    ii: f64,
    ri: f64,
}

impl Cov2 {
    fn add(&mut self, other: &Cov2) {
        self.rr += other.rr;
        self.ii += other.ii;
        self.ri += other.ri;
    }
}

/// Mean and covariance of a categorical symbol message.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Moments {
    mean: C64,
    cov: Cov2,
}

impl Moments {
    fn of(points: &[C64], probs: &[f64]) -> Self {
        let mean: C64 = points.iter().zip(probs).map(|(p, w)| p * w).sum();
        let mut cov = Cov2 { rr: 0.0, ii: 0.0, ri: 0.0 };
        for (p, w) in points.iter().zip(probs) {
            let d = p - mean;
            cov.rr += w * d.re * d.re;
            cov.ii += w * d.im * d.im;
            cov.ri += w * d.re * d.im;
        }
        Self { mean, cov }
    }

    /// Covariance of `h x`.
    fn scaled(&self, h: C64) -> Cov2 {
        let (a, b) = (h.re, h.im);
        let Cov2 { rr, ii, ri } = self.cov;
        Cov2 {
            rr: a * a * rr - 2.0 * a * b * ri + b * b * ii,
            ii: b * b * rr + 2.0 * a * b * ri + a * a * ii,
            ri: a * b * rr + (a * a - b * b) * ri - a * b * ii,
        }
    }
}

/// Writes the probabilities `exp(logs) / sum exp(logs)` into `out`.
fn normalize_log(logs: &[f64], out: &mut [f64]) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logs) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{DelayDopplerProfile, MimoChannelRealization, SubchannelCache};
    use crate::noise::complex_gaussian;
    use crate::params::AfdmParams;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all() -> [Constellation; 3] {
        [Modulation::Bpsk, Modulation::Qam4, Modulation::Qam16].map(Constellation::new)
    }

    #[test]
    fn unit_energy_and_gray_neighbours() {
        for c in all() {
            assert!((c.mean_energy() - 1.0).abs() < 1e-15);
            assert_eq!(c.len(), 1 << c.bits_per_symbol());
            let min_dist = c
                .points()
                .iter()
                .enumerate()
                .flat_map(|(i, a)| c.points()[i + 1..].iter().map(move |b| (a - b).norm()))
                .fold(f64::INFINITY, f64::min);
            for i in 0..c.len() {
                for j in 0..c.len() {
                    if i != j && ((c.symbol(i) - c.symbol(j)).norm() - min_dist).abs() < 1e-12 {
                        assert_eq!(c.bit_errors(i, j), 1, "{:?} {i} {j}", c.modulation());
                    }
                }
            }
        }
    }

    #[test]
    fn nearest_recovers_points() {
        for c in all() {
            for i in 0..c.len() {
                assert_eq!(c.nearest(c.symbol(i) * 1.05), i);
            }
        }
    }

    fn brute_force(h: &CMatrix, y: &[C64], c: &Constellation) -> (Vec<usize>, f64) {
        let k = h.ncols();
        let total = c.len().pow(k as u32);
        let mut best = (vec![], f64::INFINITY);
        for idx in 0..total {
            let labels: Vec<usize> = (0..k).map(|j| (idx / c.len().pow(j as u32)) % c.len()).collect();
            let mut metric = 0.0;
            for i in 0..h.nrows() {
                let mut acc = y[i];
                for j in 0..k {
                    acc -= h[(i, j)] * c.symbol(labels[j]);
                }
                metric += acc.norm_sqr();
            }
            if metric < best.1 {
                best = (labels, metric);
            }
        }
        best
    }

    fn n6_mimo(rng: &mut ChaCha8Rng) -> CMatrix {
        let p = AfdmParams::with_default_c2(6, 1, 1, 0).unwrap();
        let profile = DelayDopplerProfile::new(vec![(0, 0.0), (1, 1.0)]);
        let gains = (0..8).map(|_| complex_gaussian(rng, 0.5)).collect();
        let real = MimoChannelRealization::new(profile.clone(), 2, 2, gains).unwrap();
        SubchannelCache::new(&p, &profile).unwrap().assemble(&real).unwrap()
    }

    #[test]
    fn ml_matches_brute_force() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let h = n6_mimo(&mut rng);
            let x: Vec<C64> = (0..12).map(|_| bpsk.symbol(rng.random_range(0..2))).collect();
            let n0 = if trial % 2 == 0 { 0.5 } else { 0.05 };
            let y: Vec<C64> = (h.clone() * nalgebra::DVector::from_vec(x))
                .iter()
                .map(|v| v + complex_gaussian(&mut rng, n0))
                .collect();
            let ml = detect_ml(&h, &y, &bpsk).unwrap();
            let (oracle, metric) = brute_force(&h, &y, &bpsk);
            let xs: Vec<C64> = ml.iter().map(|&i| bpsk.symbol(i)).collect();
            assert!((residual(&h, &y, &xs) - metric).abs() < 1e-9);
            assert_eq!(ml, oracle, "trial {trial}");
        }
    }

    #[test]
    fn ml_noiseless_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let qam = Constellation::new(Modulation::Qam4);
        let h = CMatrix::from_fn(5, 4, |_, _| complex_gaussian(&mut rng, 1.0));
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
        let x: Vec<C64> = labels.iter().map(|&i| qam.symbol(i)).collect();
        let y: Vec<C64> = (h.clone() * nalgebra::DVector::from_vec(x)).iter().copied().collect();
        assert_eq!(detect_ml(&h, &y, &qam).unwrap(), labels);
        // wide matrices fall back to enumeration
        let wide = CMatrix::from_fn(3, 4, |_, _| complex_gaussian(&mut rng, 1.0));
        let y3: Vec<C64> = (0..3).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        assert_eq!(detect_ml(&wide, &y3, &qam).unwrap(), brute_force(&wide, &y3, &qam).0);

        let bpsk = Constellation::new(Modulation::Bpsk);
        let eye = CMatrix::identity(6, 6);
        let y: Vec<C64> = [0.9, -0.2, 0.1, -1.3, 0.05, -0.01].iter().map(|&v| C64::new(v, 0.3)).collect();
        let out = detect_ml(&eye, &y, &bpsk).unwrap();
        let signs: Vec<usize> = y.iter().map(|v| usize::from(v.re < 0.0)).collect();
        assert_eq!(out, signs);
    }

    #[test]
    fn ml_guard() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        let h = CMatrix::identity(21, 21);
        let y = vec![C64::new(1.0, 0.0); 21];
        assert!(matches!(detect_ml(&h, &y, &bpsk), Err(AfdmError::SearchSpace { .. })));
    }

    #[test]
    fn lmmse_basics() {
        let qam = Constellation::new(Modulation::Qam16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // random unitary from a QR factor
        let g = CMatrix::from_fn(8, 8, |_, _| complex_gaussian(&mut rng, 1.0));
        let u = g.qr().q();
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..16)).collect();
        let x: Vec<C64> = labels.iter().map(|&i| qam.symbol(i)).collect();
        let y: Vec<C64> = (u.clone() * nalgebra::DVector::from_vec(x)).iter().copied().collect();
        assert_eq!(detect_lmmse(&u, &y, 1e-12, &qam).unwrap(), labels);
        let eye = CMatrix::identity(3, 3);
        let z = [C64::new(0.2, -0.9), C64::new(-0.4, 0.4), C64::new(1.2, 0.0)];
        let out = detect_lmmse(&eye, &z, 0.1, &qam).unwrap();
        for (o, v) in out.iter().zip(z) {
            assert_eq!(*o, qam.nearest(v / 1.1));
        }
        assert!(detect_lmmse(&eye, &z, 0.0, &qam).is_err());
    }

    #[test]
    fn lmmse_agrees_with_ml_at_high_snr() {
        let p = AfdmParams::with_default_c2(64, 1, 1, 0).unwrap();
        let profile = DelayDopplerProfile::new(vec![(1, 1.0)]);
        let h = SubchannelCache::new(&p, &profile).unwrap().matrices()[0].clone() * C64::new(0.8, 0.3);
        let bpsk = Constellation::new(Modulation::Bpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut agree = 0;
        let mut total = 0;
        for _ in 0..20 {
            let labels: Vec<usize> = (0..64).map(|_| rng.random_range(0..2)).collect();
            let x: Vec<C64> = labels.iter().map(|&i| bpsk.symbol(i)).collect();
            let y: Vec<C64> = (h.clone() * nalgebra::DVector::from_vec(x))
                .iter()
                .map(|v| v + complex_gaussian(&mut rng, 0.05))
                .collect();
            let lin = detect_lmmse(&h, &y, 0.05, &bpsk).unwrap();
            // single path: H is a scaled permutation, so per-symbol ML is exact
            let hh = h.adjoint() * nalgebra::DVector::from_vec(y);
            for (k, l) in lin.iter().enumerate() {
                agree += usize::from(*l == bpsk.nearest(hh[k]));
                total += 1;
            }
        }
        assert!(agree as f64 >= 0.95 * total as f64);
    }

    #[test]
    fn mp_on_identity_slices() {
        let qam = Constellation::new(Modulation::Qam4);
        let graph = SparseChannel::from_dense(&CMatrix::identity(10, 10), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<C64> = (0..10).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let mut cfg = DetectorConfig::new(DetectorKind::Mp);
        cfg.noise_var = 0.3;
        let out = detect_mp(&graph, &y, &qam, &cfg).unwrap();
        let sliced: Vec<usize> = y.iter().map(|&v| qam.nearest(v)).collect();
        assert_eq!(out.symbols, sliced);
        assert!(out.converged);
        cfg.n_iter = 0;
        assert_eq!(detect_mp(&graph, &y, &qam, &cfg).unwrap().symbols, sliced);
    }

    #[test]
    fn mp_noiseless_banded_channel() {
        let p = AfdmParams::with_default_c2(128, 2, 2, 0).unwrap();
        let profile = DelayDopplerProfile::new(vec![(0, 0.0), (1, -1.0), (2, 2.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gains = (0..4 * 3).map(|_| complex_gaussian(&mut rng, 1.0 / 3.0)).collect();
        let real = MimoChannelRealization::new(profile, 2, 2, gains).unwrap();
        let bands: Vec<ChannelBand> = (0..2)
            .flat_map(|r| (0..2).map(move |t| (r, t)))
            .map(|(r, t)| crate::channel::effective_band(&p, &real, r, t).unwrap())
            .collect();
        let slots: Vec<usize> = (0..128).collect();
        let graph = SparseChannel::from_bands(&bands, 2, 2, &slots, &slots);
        assert_eq!(graph.max_degree(), 6);
        let qam = Constellation::new(Modulation::Qam4);
        let labels: Vec<usize> = (0..256).map(|_| rng.random_range(0..4)).collect();
        let x: Vec<Vec<C64>> = labels.chunks(128).map(|c| c.iter().map(|&i| qam.symbol(i)).collect()).collect();
        let y: Vec<C64> = (0..2)
            .flat_map(|r| {
                let mut acc = vec![C64::new(0.0, 0.0); 128];
                for t in 0..2 {
                    for (a, v) in acc.iter_mut().zip(bands[r * 2 + t].mul_vec(&x[t])) {
                        *a += v;
                    }
                }
                acc
            })
            .collect();
        let mut cfg = DetectorConfig::new(DetectorKind::Mp);
        cfg.noise_var = 1e-3;
        let out = detect_mp(&graph, &y, &qam, &cfg).unwrap();
        assert_eq!(out.symbols, labels);
        // N N_r S |A| work per iteration
        let per_iter = 128 * 2 * graph.max_degree() * 4;
        assert!(out.operations <= (out.iterations as u64 + 1) * per_iter as u64);
    }

    #[test]
    fn mp_close_to_ml_at_n6() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n0 = 0.3;
        let (mut ml_err, mut mp_err) = (0usize, 0usize);
        let mut cfg = DetectorConfig::new(DetectorKind::Mp);
        cfg.noise_var = n0;
        for _ in 0..10_000 {
            let h = n6_mimo(&mut rng);
            let labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..2)).collect();
            let x: Vec<C64> = labels.iter().map(|&i| bpsk.symbol(i)).collect();
            let y: Vec<C64> = (h.clone() * nalgebra::DVector::from_vec(x))
                .iter()
                .map(|v| v + complex_gaussian(&mut rng, n0))
                .collect();
            let ml = detect_ml(&h, &y, &bpsk).unwrap();
            let mp = detect_mp(&SparseChannel::from_dense(&h, 1e-12), &y, &bpsk, &cfg).unwrap();
            ml_err += ml.iter().zip(&labels).filter(|(a, b)| a != b).count();
            mp_err += mp.symbols.iter().zip(&labels).filter(|(a, b)| a != b).count();
        }
        assert!(ml_err > 0);
        assert!(mp_err <= 2 * ml_err, "mp {mp_err} ml {ml_err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ml_is_never_beaten(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Constellation::new(Modulation::Qam4);
            let h = CMatrix::from_fn(6, 5, |_, _| complex_gaussian(&mut rng, 1.0));
            let y: Vec<C64> = (0..6).map(|_| complex_gaussian(&mut rng, 2.0)).collect();
            let ml = detect_ml(&h, &y, &c).unwrap();
            let best: Vec<C64> = ml.iter().map(|&i| c.symbol(i)).collect();
            let other: Vec<C64> = (0..5).map(|_| c.symbol(rng.random_range(0..4))).collect();
            prop_assert!(residual(&h, &y, &best) <= residual(&h, &y, &other) + 1e-12);
        }

        #[test]
        fn detectors_are_pure(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = Constellation::new(Modulation::Bpsk);
            let h = CMatrix::from_fn(8, 8, |_, _| complex_gaussian(&mut rng, 1.0));
            let y: Vec<C64> = (0..8).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let mut cfg = DetectorConfig::new(DetectorKind::Mp);
            cfg.noise_var = 0.2;
            let g = SparseChannel::from_dense(&h, 0.0);
            prop_assert_eq!(detect_mp(&g, &y, &c, &cfg).unwrap(), detect_mp(&g, &y, &c, &cfg).unwrap());
            prop_assert_eq!(detect_ml(&h, &y, &c).unwrap(), detect_ml(&h, &y, &c).unwrap());
            prop_assert_eq!(detect_lmmse(&h, &y, 0.2, &c).unwrap(), detect_lmmse(&h, &y, 0.2, &c).unwrap());
        }
    }
}
