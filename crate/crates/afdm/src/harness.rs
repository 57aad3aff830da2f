//! Monte-Carlo experiments: BER sweeps, estimation NMSE, diversity slopes and the
//! rank and pairwise-error diagnostics behind the diversity argument.
//!
//! Trial `i` of every sweep point draws from `ChaCha8Rng::seed_from_u64(seed ^ i)`,
//! so all SNR points see the same channels, symbols and unit-variance noise, and
//! results do not depend on the number of worker threads.

use std::io::{self, Write};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::ChannelBand;
use crate::chanest::{estimate_mimo, TransformFactorTable};
use crate::channel::{
    apply_paths, band_of_paths, sample_channel, DelayDopplerProfile, MimoChannelRealization, ProfileSpec,
    SubchannelCache,
};
use crate::daft::{DaftPlan, Domain, Frame, DENSE_LIMIT};
use crate::detect::{
    detect_lmmse, detect_ml, detect_mp, ml_search_space, Constellation, DetectorConfig, DetectorKind, Modulation,
    SparseChannel, ML_SEARCH_LIMIT,
};
use crate::error::{AfdmError, Result};
use crate::framing::{build_epa_frames, EpaLayout};
use crate::noise::complex_gaussian;
use crate::params::AfdmParams;
use crate::{CMatrix, C64};

/// Frame parameters as written in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub n: usize,
    pub l_max: usize,
    pub alpha_max: usize,
    #[serde(default)]
    pub k_nu: usize,
    /// Defaults to `1 / (pi N^2)`.
    #[serde(default)]
    pub c2: Option<f64>,
}

impl ParamsConfig {
    pub fn build(&self) -> Result<AfdmParams> {
        match self.c2 {
            Some(c2) => AfdmParams::new(self.n, self.l_max, self.alpha_max, self.k_nu, c2),
            None => AfdmParams::with_default_c2(self.n, self.l_max, self.alpha_max, self.k_nu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    /// All-data frames detected with the true channel band.
    Perfect,
    /// Embedded-pilot frames detected with the EPA-DR estimate.
    Estimated,
}

/// Adaptive trial budget per SNR point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialPolicy {
    /// Stop once this many bit errors are counted.
    #[serde(default = "default_min_errors")]
    pub min_errors: u64,
    #[serde(default = "default_min_trials")]
    pub min_trials: u64,
    pub max_trials: u64,
    /// Trials per batch; the stopping rule is checked between batches.
    #[serde(default = "default_batch")]
    pub batch: u64,
}

fn default_min_errors() -> u64 {
    100
}

fn default_min_trials() -> u64 {
    1
}

fn default_batch() -> u64 {
    64
}

impl TrialPolicy {
    pub fn fixed(trials: u64) -> Self {
        Self { min_errors: u64::MAX, min_trials: trials, max_trials: trials, batch: default_batch() }
    }
}

fn default_zeta() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub params: ParamsConfig,
    pub n_r: usize,
    pub n_t: usize,
    pub profile: ProfileSpec,
    pub modulation: Modulation,
    pub detector: DetectorConfig,
    /// Data SNR grid in dB; `N0 = 10^(-SNRd/10)`.
    pub snr_db: Vec<f64>,
    /// Pilot SNR in dB (estimated CSI only).
    #[serde(default)]
    pub snr_p_db: Option<f64>,
    /// Threshold as a multiple of `N0`, compared with `|y|`.
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    pub csi: CsiMode,
    pub trials: TrialPolicy,
    pub seed: u64,
    /// Optional fading importance sampling for very low error rates.
    #[serde(default)]
    pub importance: Option<FadingImportance>,
}

/// Defensive importance sampling of the path gains.
///
/// With probability `1 - defensive` one transmit antenna, chosen uniformly, has all
/// its gains drawn with variance scaled by `rho = min(1, 10^((reference_snr_db - SNR)/10))`;
/// otherwise gains follow the true law. Each trial is weighted by the exact
/// likelihood ratio, which is at most `1 / defensive`, so BER stays unbiased.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingImportance {
    pub reference_snr_db: f64,
    #[serde(default = "default_defensive")]
    pub defensive: f64,
}

fn default_defensive() -> f64 {
    0.2
}

impl FadingImportance {
    pub fn scale(&self, snr_db: f64) -> f64 {
        10f64.powf((self.reference_snr_db - snr_db) / 10.0).min(1.0)
    }

    /// Redraws `real` from the biased law and returns the trial weight.
    fn apply<R: Rng + ?Sized>(&self, rng: &mut R, real: &mut MimoChannelRealization, snr_db: f64) -> Result<f64> {
        let rho = self.scale(snr_db);
        let (n_r, n_t, paths) = (real.n_r, real.n_t, real.profile.len());
        if rho >= 1.0 || paths == 0 {
            return Ok(1.0);
        }
        let mut gains = real.gains().to_vec();
        let pick = rng.random::<f64>();
        if pick >= self.defensive {
            let t = (((pick - self.defensive) / (1.0 - self.defensive)) * n_t as f64) as usize;
            let t = t.min(n_t - 1);
            for r in 0..n_r {
                for g in &mut gains[(r * n_t + t) * paths..(r * n_t + t + 1) * paths] {
                    *g *= rho.sqrt();
                }
            }
        }
        // q_t / p over the gains of antenna t, in log form
        let inv_var = paths as f64;
        let mix: f64 = (0..n_t)
            .map(|t| {
                let energy: f64 = (0..n_r)
                    .flat_map(|r| gains[(r * n_t + t) * paths..(r * n_t + t + 1) * paths].iter())
                    .map(|g| g.norm_sqr())
                    .sum();
                let count = (n_r * paths) as f64;
                (-count * rho.ln() - energy * inv_var * (1.0 / rho - 1.0)).exp()
            })
            .sum::<f64>()
            / n_t as f64;
        *real = MimoChannelRealization::new(real.profile.clone(), n_r, n_t, gains)?;
        Ok(1.0 / (self.defensive + (1.0 - self.defensive) * mix))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| AfdmError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<AfdmParams> {
        let params = self.params.build()?;
        if self.n_r == 0 || self.n_t == 0 {
            return Err(AfdmError::Config("antenna counts must be positive".into()));
        }
        self.profile.validate(&params)?;
        self.detector.validate()?;
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| s.is_nan()) {
            return Err(AfdmError::Config("snr_db must list at least one SNR".into()));
        }
        if let Some(is) = &self.importance {
            if !(is.defensive > 0.0 && is.defensive <= 1.0) || is.reference_snr_db.is_nan() {
                return Err(AfdmError::Config("importance needs defensive in (0, 1]".into()));
            }
        }
        if !(self.zeta >= 0.0) {
            return Err(AfdmError::Config(format!("zeta {} must be non-negative", self.zeta)));
        }
        let t = &self.trials;
        if t.max_trials == 0 || t.batch == 0 || t.min_trials > t.max_trials {
            return Err(AfdmError::Config("trial policy needs 0 < min_trials <= max_trials and batch > 0".into()));
        }
        let unknowns = match self.csi {
            CsiMode::Perfect => params.n,
            CsiMode::Estimated => {
                if self.snr_p_db.is_none() {
                    return Err(AfdmError::Config("estimated CSI needs snr_p_db".into()));
                }
                EpaLayout::new(&params, self.n_t, 1.0)?.data_len()
            }
        };
        let constellation = Constellation::new(self.modulation);
        match self.detector.kind {
            DetectorKind::Ml => {
                let size = ml_search_space(&constellation, unknowns * self.n_t);
                if size > ML_SEARCH_LIMIT {
                    return Err(AfdmError::SearchSpace { size, limit: ML_SEARCH_LIMIT });
                }
            }
            DetectorKind::Lmmse => {
                let size = params.n * self.n_r.max(self.n_t);
                if size > DENSE_LIMIT {
                    return Err(AfdmError::SizeGuard { size, limit: DENSE_LIMIT });
                }
            }
            DetectorKind::Mp => {}
        }
        Ok(params)
    }
}

/// Noise variance for a data SNR in dB under unit symbol energy.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub errors: u64,
    pub bits: u64,
    pub trials: u64,
    pub ber: f64,
    /// 95% normal-approximation half-width.
    pub ci_halfwidth: f64,
    pub seed: u64,
}

impl BerPoint {
    fn new(snr_db: f64, errors: u64, bits: u64, trials: u64, seed: u64) -> Self {
        let ber = if bits == 0 { 0.0 } else { errors as f64 / bits as f64 };
        let ci_halfwidth = if bits == 0 { 0.0 } else { 1.96 * (ber * (1.0 - ber) / bits as f64).sqrt() };
        Self { snr_db, errors, bits, trials, ber, ci_halfwidth, seed }
    }

    /// Point from likelihood-weighted trials; `weighted` holds per-trial `w * errors`
    /// sums and their squares.
    fn weighted(snr_db: f64, errors: u64, bits: u64, trials: u64, seed: u64, sum: f64, sum_sq: f64) -> Self {
        let per_trial_bits = bits as f64 / trials as f64;
        let mean = sum / trials as f64;
        let var = (sum_sq / trials as f64 - mean * mean).max(0.0) / trials as f64;
        Self {
            snr_db,
            errors,
            bits,
            trials,
            ber: mean / per_trial_bits,
            ci_halfwidth: 1.96 * var.sqrt() / per_trial_bits,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerResult {
    pub points: Vec<BerPoint>,
    pub runtime_s: f64,
}

impl BerResult {
    /// Points only, for reproducibility comparisons.
    pub fn counts(&self) -> Vec<BerPoint> {
        self.points.clone()
    }
}

/// Writes `snr_db,ber,errors,bits,ci_halfwidth,seed` rows.
pub fn write_ber_csv<W: Write>(points: &[BerPoint], mut w: W) -> io::Result<()> {
    writeln!(w, "snr_db,ber,errors,bits,ci_halfwidth,seed")?;
    for p in points {
        writeln!(w, "{},{:e},{},{},{:e},{}", p.snr_db, p.ber, p.errors, p.bits, p.ci_halfwidth, p.seed)?;
    }
    Ok(())
}

/// Shared, read-only state for one experiment.
struct TrialContext<'a> {
    config: &'a ExperimentConfig,
    params: AfdmParams,
    plan: DaftPlan,
    constellation: Constellation,
    table: Option<TransformFactorTable>,
    fixed_cache: Option<SubchannelCache>,
    rows: Vec<usize>,
    slots: Vec<usize>,
}

impl<'a> TrialContext<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let params = config.validate()?;
        let n = params.n;
        let (rows, slots, table) = match config.csi {
            CsiMode::Perfect => ((0..n).collect(), (0..n).collect(), None),
            CsiMode::Estimated => {
                let layout = EpaLayout::new(&params, config.n_t, 1.0)?;
                let region = layout.pilot_region();
                let rows = (0..n).filter(|&m| !region.contains(m)).collect();
                let slots = (layout.data_start()..n).collect();
                (rows, slots, Some(TransformFactorTable::new(&params)))
            }
        };
        let dense = config.detector.kind != DetectorKind::Mp && config.csi == CsiMode::Perfect;
        let fixed_cache = match (&config.profile, dense) {
            (ProfileSpec::Fixed { paths }, true) => {
                Some(SubchannelCache::new(&params, &DelayDopplerProfile::new(paths.clone()))?)
            }
            _ => None,
        };
        Ok(Self {
            config,
            plan: DaftPlan::new(&params),
            params,
            constellation: Constellation::new(config.modulation),
            table,
            fixed_cache,
            rows,
            slots,
        })
    }

    /// One frame exchange: returns `(bit errors, bits, likelihood weight)`.
    fn run(&self, trial: u64, snr_db: f64, zeta: f64) -> Result<(u64, u64, f64)> {
        let cfg = self.config;
        let p = &self.params;
        let n = p.n;
        let n0 = noise_variance(snr_db);
        let mut rng = trial_rng(cfg.seed, trial);
        let mut real = sample_channel(p, &cfg.profile, cfg.n_r, cfg.n_t, &mut rng)?;
        let weight = match &cfg.importance {
            Some(is) => is.apply(&mut rng, &mut real, snr_db)?,
            None => 1.0,
        };
        let q = self.constellation.len();
        let labels: Vec<Vec<usize>> =
            (0..cfg.n_t).map(|_| (0..self.slots.len()).map(|_| rng.random_range(0..q)).collect()).collect();
        let data: Vec<Vec<C64>> =
            labels.iter().map(|l| l.iter().map(|&i| self.constellation.symbol(i)).collect()).collect();

        let layout = match cfg.csi {
            CsiMode::Perfect => None,
            CsiMode::Estimated => {
                let amp = EpaLayout::pilot_amplitude_for(n0, cfg.snr_p_db.unwrap_or_default());
                Some(EpaLayout::new(p, cfg.n_t, amp)?)
            }
        };
        let tx: Vec<Frame> = match &layout {
            None => data.iter().map(|d| Frame::new(d.clone(), Domain::Tx)).collect(),
            Some(layout) => build_epa_frames(layout, &data)?,
        };
        let time: Vec<Frame> = tx.iter().map(|x| self.plan.idaft(x)).collect::<Result<_>>()?;
        let sigma = n0.sqrt();
        let mut rx = Vec::with_capacity(cfg.n_r);
        for r in 0..cfg.n_r {
            let mut d = Frame::zeros(n, Domain::Time);
            for (t, s) in time.iter().enumerate() {
                let part = apply_paths(p, &real.paths(r, t)?, s)?;
                for (a, b) in d.iter_mut().zip(part.iter()) {
                    *a += b;
                }
            }
            for v in d.iter_mut() {
                *v += complex_gaussian(&mut rng, 1.0) * sigma;
            }
            rx.push(self.plan.daft(&d)?);
        }

        let y: Vec<C64> = rx.iter().flat_map(|f| self.rows.iter().map(move |&m| f[m])).collect();
        let detected = match cfg.detector.kind {
            DetectorKind::Mp => {
                let bands = self.bands(&real, &rx, layout.as_ref(), zeta * n0)?;
                let graph = SparseChannel::from_bands(&bands, cfg.n_r, cfg.n_t, &self.rows, &self.slots);
                let mut det = cfg.detector;
                det.noise_var = n0;
                detect_mp(&graph, &y, &self.constellation, &det)?.symbols
            }
            DetectorKind::Ml | DetectorKind::Lmmse => {
                let h = self.reduced_dense(&real, &rx, layout.as_ref(), zeta * n0)?;
                if cfg.detector.kind == DetectorKind::Ml {
                    detect_ml(&h, &y, &self.constellation)?
                } else {
                    detect_lmmse(&h, &y, n0.max(1e-12), &self.constellation)?
                }
            }
        };
        let flat: Vec<usize> = labels.concat();
        let errors: u64 = flat.iter().zip(&detected).map(|(&a, &b)| self.constellation.bit_errors(a, b) as u64).sum();
        Ok((errors, (flat.len() * self.constellation.bits_per_symbol()) as u64, weight))
    }

    /// Channel bands used by the detector, in `r * n_t + t` order.
    fn bands(
        &self,
        real: &MimoChannelRealization,
        rx: &[Frame],
        layout: Option<&EpaLayout>,
        zeta: f64,
    ) -> Result<Vec<ChannelBand>> {
        match (layout, &self.table) {
            (Some(layout), Some(table)) => Ok(estimate_mimo(&self.params, rx, layout, zeta, table)?.blocks),
            _ => {
                let mut out = Vec::with_capacity(real.n_r * real.n_t);
                for r in 0..real.n_r {
                    for t in 0..real.n_t {
                        out.push(band_of_paths(&self.params, &real.paths(r, t)?));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Dense channel restricted to observed rows and unknown slots.
    fn reduced_dense(
        &self,
        real: &MimoChannelRealization,
        rx: &[Frame],
        layout: Option<&EpaLayout>,
        zeta: f64,
    ) -> Result<CMatrix> {
        let n = self.params.n;
        let (n_r, n_t) = (real.n_r, real.n_t);
        let full = match layout {
            Some(_) => {
                let bands = self.bands(real, rx, layout, zeta)?;
                let mut full = CMatrix::zeros(n * n_r, n * n_t);
                for r in 0..n_r {
                    for t in 0..n_t {
                        full.view_mut((r * n, t * n), (n, n)).copy_from(&bands[r * n_t + t].to_dense());
                    }
                }
                full
            }
            None => match &self.fixed_cache {
                Some(cache) => cache.assemble(real)?,
                None => SubchannelCache::new(&self.params, &real.profile)?.assemble(real)?,
            },
        };
        let (rows, slots) = (&self.rows, &self.slots);
        Ok(CMatrix::from_fn(n_r * rows.len(), n_t * slots.len(), |i, j| {
            full[((i / rows.len()) * n + rows[i % rows.len()], (j / slots.len()) * n + slots[j % slots.len()])]
        }))
    }

    fn sweep_point(&self, snr_db: f64, zeta: f64) -> Result<BerPoint> {
        let policy = self.config.trials;
        let seed = self.config.seed;
        let (mut errors, mut bits, mut trials) = (0u64, 0u64, 0u64);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        while trials < policy.max_trials && (trials < policy.min_trials || errors < policy.min_errors) {
            let end = (trials + policy.batch).min(policy.max_trials);
            let counts =
                (trials..end).into_par_iter().map(|i| self.run(i, snr_db, zeta)).collect::<Result<Vec<_>>>()?;
            // in trial order, so floating sums do not depend on scheduling
            for (e, b, w) in counts {
                errors += e;
                bits += b;
                sum += w * e as f64;
                sum_sq += (w * e as f64).powi(2);
            }
            trials = end;
        }
        Ok(match &self.config.importance {
            Some(is) if is.scale(snr_db) < 1.0 => BerPoint::weighted(snr_db, errors, bits, trials, seed, sum, sum_sq),
            _ => BerPoint::new(snr_db, errors, bits, trials, seed),
        })
    }
}

/// Trial `i` draws from its own ChaCha stream under the master seed, so every SNR
/// point reuses the same channels and noise shapes.
fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// BER at every `snr_db` point of the config.
pub fn run_ber(config: &ExperimentConfig) -> Result<BerResult> {
    let start = Instant::now();
    let ctx = TrialContext::new(config)?;
    let points = config.snr_db.iter().map(|&s| ctx.sweep_point(s, config.zeta)).collect::<Result<_>>()?;
    Ok(BerResult { points, runtime_s: start.elapsed().as_secs_f64() })
}

/// BER at one data SNR for each threshold multiplier, on common trials.
pub fn run_zeta_sweep(config: &ExperimentConfig, snr_db: f64, multipliers: &[f64]) -> Result<Vec<(f64, BerPoint)>> {
    if config.csi != CsiMode::Estimated {
        return Err(AfdmError::Config("threshold sweeps need estimated CSI".into()));
    }
    let ctx = TrialContext::new(config)?;
    multipliers.iter().map(|&z| Ok((z, ctx.sweep_point(snr_db, z)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsePoint {
    pub snr_db: f64,
    /// Mean over trials of the per-block NMSE, in `r * n_t + t` order.
    pub per_block: Vec<f64>,
    /// Mean over trials of `sum ||H_est - H||^2 / sum ||H||^2`.
    pub aggregate: f64,
    pub trials: u64,
}

/// Per-block and aggregate NMSE of a banded estimate against dense truth.
pub fn nmse_blocks(estimate: &[ChannelBand], truth: &[CMatrix]) -> Result<(Vec<f64>, f64)> {
    if estimate.len() != truth.len() {
        return Err(AfdmError::LengthMismatch { expected: truth.len(), got: estimate.len() });
    }
    let mut per_block = Vec::with_capacity(truth.len());
    let (mut err, mut power) = (0.0, 0.0);
    for (e, h) in estimate.iter().zip(truth) {
        if e.n() != h.nrows() || h.nrows() != h.ncols() {
            return Err(AfdmError::LengthMismatch { expected: h.nrows(), got: e.n() });
        }
        let (mut be, mut bp) = (0.0, 0.0);
        for ((m, mp), v) in h.iter().enumerate().map(|(k, v)| ((k % h.nrows(), k / h.nrows()), v)) {
            be += (e.get(m, mp) - v).norm_sqr();
            bp += v.norm_sqr();
        }
        per_block.push(be / bp);
        err += be;
        power += bp;
    }
    Ok((per_block, err / power))
}

/// EPA-DR estimation NMSE at each data SNR of an estimated-CSI config.
///
/// Uses `trials.max_trials` pilot-only frames per point.
pub fn run_nmse(config: &ExperimentConfig) -> Result<Vec<NmsePoint>> {
    let params = config.validate()?;
    if config.csi != CsiMode::Estimated {
        return Err(AfdmError::Config("NMSE runs need estimated CSI".into()));
    }
    let plan = DaftPlan::new(&params);
    let table = TransformFactorTable::new(&params);
    let n = params.n;
    config
        .snr_db
        .iter()
        .map(|&snr| {
            let n0 = noise_variance(snr);
            let amp = EpaLayout::pilot_amplitude_for(n0, config.snr_p_db.unwrap_or_default());
            let layout = EpaLayout::new(&params, config.n_t, amp)?;
            let zero = vec![C64::new(0.0, 0.0); layout.data_len()];
            let tx = build_epa_frames(&layout, &vec![zero; config.n_t])?;
            let time: Vec<Frame> = tx.iter().map(|x| plan.idaft(x)).collect::<Result<_>>()?;
            let blocks = config.n_r * config.n_t;
            let trials = config.trials.max_trials;
            let results = (0..trials)
                .into_par_iter()
                .map(|i| {
                    let mut rng = trial_rng(config.seed, i);
                    let real = sample_channel(&params, &config.profile, config.n_r, config.n_t, &mut rng)?;
                    let mut rx = Vec::with_capacity(config.n_r);
                    for r in 0..config.n_r {
                        let mut d = Frame::zeros(n, Domain::Time);
                        for (t, s) in time.iter().enumerate() {
                            let part = apply_paths(&params, &real.paths(r, t)?, s)?;
                            for (a, b) in d.iter_mut().zip(part.iter()) {
                                *a += b;
                            }
                        }
                        for v in d.iter_mut() {
                            *v += complex_gaussian(&mut rng, n0);
                        }
                        rx.push(plan.daft(&d)?);
                    }
                    let est = estimate_mimo(&params, &rx, &layout, config.zeta * n0, &table)?;
                    let cache = SubchannelCache::new(&params, &real.profile)?;
                    let truth = (0..blocks)
                        .map(|b| Ok(cache.combine(&real.paths(b / config.n_t, b % config.n_t)?)))
                        .collect::<Result<Vec<_>>>()?;
                    nmse_blocks(&est.blocks, &truth)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut per_block = vec![0.0; blocks];
            let mut aggregate = 0.0;
            for (pb, agg) in &results {
                for (a, b) in per_block.iter_mut().zip(pb) {
                    *a += b / trials as f64;
                }
                aggregate += agg / trials as f64;
            }
            Ok(NmsePoint { snr_db: snr, per_block, aggregate, trials })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    /// `(snr_db, ber)` pairs inside the window.
    pub used: Vec<(f64, f64)>,
    /// Least-squares slope of `-log10 BER` against `SNR_dB / 10`.
    pub slope: f64,
    pub target: Option<f64>,
}

/// Fits the high-SNR decay rate over points with BER in `[lo, hi]`.
pub fn diversity_slope(points: &[(f64, f64)], window: (f64, f64)) -> Result<DiversityReport> {
    let used: Vec<(f64, f64)> =
        points.iter().copied().filter(|&(_, ber)| ber > 0.0 && ber >= window.0 && ber <= window.1).collect();
    if used.len() < 2 {
        return Err(AfdmError::InsufficientPoints(used.len()));
    }
    let xs: Vec<f64> = used.iter().map(|p| p.0 / 10.0).collect();
    let ys: Vec<f64> = used.iter().map(|p| -p.1.log10()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AfdmError::InsufficientPoints(1));
    }
    Ok(DiversityReport { used, slope: sxy / sxx, target: None })
}

/// `Phi(x) = [H_1 x, ..., H_P x]` for an integer-Doppler profile.
pub fn build_phi(params: &AfdmParams, profile: &DelayDopplerProfile, x: &[C64]) -> Result<CMatrix> {
    if let Some(&(_, nu)) = profile.paths.iter().find(|p| p.1.fract() != 0.0) {
        return Err(AfdmError::FractionalDoppler(nu));
    }
    if x.len() != params.n {
        return Err(AfdmError::LengthMismatch { expected: params.n, got: x.len() });
    }
    let cache = SubchannelCache::new(params, profile)?;
    let xv = DVector::from_column_slice(x);
    let mut phi = CMatrix::zeros(params.n, profile.len());
    for (i, h) in cache.matrices().iter().enumerate() {
        phi.set_column(i, &(h * &xv));
    }
    Ok(phi)
}

/// Numerical rank with a relative singular-value tolerance.
pub fn rank(m: &CMatrix) -> usize {
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    let tol = top * 1e-9 * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankSearch {
    pub min_rank: usize,
    /// A difference vector attaining the minimum.
    pub witness: Vec<C64>,
    pub vectors: usize,
}

/// Minimum rank of `Phi(delta)` over every nonzero difference of two constellation vectors.
///
/// Enumerates all `|D|^N - 1` difference vectors, with `D` the set of pairwise
/// differences of constellation points.
pub fn min_rank_exhaustive(
    params: &AfdmParams,
    profile: &DelayDopplerProfile,
    modulation: Modulation,
) -> Result<RankSearch> {
    let c = Constellation::new(modulation);
    let mut diffs: Vec<C64> = Vec::new();
    for a in c.points() {
        for b in c.points() {
            let d = a - b;
            if !diffs.iter().any(|e| (e - d).norm() < 1e-12) {
                diffs.push(d);
            }
        }
    }
    let n = params.n;
    let total = (diffs.len() as f64).powi(n as i32);
    if total > ML_SEARCH_LIMIT * 16.0 {
        return Err(AfdmError::SearchSpace { size: total, limit: ML_SEARCH_LIMIT * 16.0 });
    }
    let cache = SubchannelCache::new(params, profile)?;
    if let Some(&(_, nu)) = profile.paths.iter().find(|p| p.1.fract() != 0.0) {
        return Err(AfdmError::FractionalDoppler(nu));
    }
    let zero = diffs.iter().position(|d| d.norm() == 0.0).unwrap_or(0);
    let mut idx = vec![zero; n];
    let mut best = RankSearch { min_rank: usize::MAX, witness: vec![], vectors: 0 };
    loop {
        // next index vector in mixed radix
        let mut k = 0;
        while k < n {
            idx[k] = (idx[k] + 1) % diffs.len();
            if idx[k] != zero {
                break;
            }
            k += 1;
        }
        if k == n {
            break;
        }
        let delta: Vec<C64> = idx.iter().map(|&i| diffs[i]).collect();
        let xv = DVector::from_column_slice(&delta);
        let mut phi = CMatrix::zeros(n, profile.len());
        for (i, h) in cache.matrices().iter().enumerate() {
            phi.set_column(i, &(h * &xv));
        }
        best.vectors += 1;
        let r = rank(&phi);
        if r < best.min_rank {
            best.min_rank = r;
            best.witness = delta;
        }
    }
    Ok(best)
}

/// Chernoff bound `prod_l (1 + lambda_l^2 / (4 P N0))^(-N_r)` on the pairwise error
/// probability for the difference `delta`.
pub fn pep_chernoff(
    params: &AfdmParams,
    profile: &DelayDopplerProfile,
    delta: &[C64],
    n_r: usize,
    n0: f64,
) -> Result<f64> {
    let phi = build_phi(params, profile, delta)?;
    let p = profile.len() as f64;
    Ok(phi.singular_values().iter().map(|s| (1.0 + s * s / (4.0 * p * n0)).powi(-(n_r as i32))).product())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n6_config(paths: Vec<(usize, f64)>, n_r: usize, n_t: usize) -> ExperimentConfig {
        ExperimentConfig {
            name: "n6".into(),
            params: ParamsConfig { n: 6, l_max: 1, alpha_max: 1, k_nu: 0, c2: None },
            n_r,
            n_t,
            profile: ProfileSpec::Fixed { paths },
            modulation: Modulation::Bpsk,
            detector: DetectorConfig::new(DetectorKind::Ml),
            snr_db: vec![5.0, 10.0],
            snr_p_db: None,
            zeta: 6.0,
            csi: CsiMode::Perfect,
            trials: TrialPolicy::fixed(200),
            seed: 17,
            importance: None,
        }
    }

    fn n6() -> AfdmParams {
        AfdmParams::with_default_c2(6, 1, 1, 0).unwrap()
    }

    #[test]
    fn noiseless_ml_is_error_free() {
        let mut cfg = n6_config(vec![(0, 0.0), (1, 1.0)], 2, 2);
        cfg.snr_db = vec![f64::INFINITY];
        let res = run_ber(&cfg).unwrap();
        assert_eq!(res.points[0].errors, 0);
        assert_eq!(res.points[0].bits, 200 * 12);
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = n6_config(vec![(0, 0.0), (1, 1.0)], 1, 1);
        assert_eq!(run_ber(&cfg).unwrap().counts(), run_ber(&cfg).unwrap().counts());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let threaded = pool.install(|| run_ber(&cfg).unwrap());
        assert_eq!(threaded.counts(), run_ber(&cfg).unwrap().counts());
    }

    #[test]
    fn adaptive_policy_stops_on_errors() {
        let mut cfg = n6_config(vec![(0, 0.0), (1, 1.0)], 1, 1);
        cfg.snr_db = vec![0.0];
        cfg.trials = TrialPolicy { min_errors: 50, min_trials: 1, max_trials: 100_000, batch: 16 };
        let p = run_ber(&cfg).unwrap().points[0];
        assert!(p.errors >= 50 && p.trials < 1000 && p.trials.is_multiple_of(16));
        assert!(p.ci_halfwidth > 0.0 && p.ci_halfwidth < p.ber);
    }

    #[test]
    fn importance_sampling_matches_plain_monte_carlo() {
        let mut plain = n6_config(vec![(0, 0.0), (1, 1.0)], 1, 1);
        plain.snr_db = vec![10.0];
        plain.trials = TrialPolicy::fixed(20_000);
        let mut biased = plain.clone();
        biased.importance = Some(FadingImportance { reference_snr_db: 4.0, defensive: 0.2 });
        let a = &run_ber(&plain).unwrap().points[0];
        let b = &run_ber(&biased).unwrap().points[0];
        let tol = 1.5 * (a.ci_halfwidth + b.ci_halfwidth);
        assert!((a.ber - b.ber).abs() < tol, "{} vs {} (tol {tol})", a.ber, b.ber);
        // the biased draw sees more errors for the same trials
        assert!(b.errors > a.errors);
    }

    #[test]
    fn importance_weight_is_one_when_unbiased() {
        let is = FadingImportance { reference_snr_db: 10.0, defensive: 0.2 };
        assert_eq!(is.scale(5.0), 1.0);
        assert!((is.scale(20.0) - 0.1).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let profile = ProfileSpec::Fixed { paths: vec![(0, 0.0), (1, 1.0)] };
        let mut real = sample_channel(&n6(), &profile, 2, 2, &mut rng).unwrap();
        let before = real.gains().to_vec();
        assert_eq!(is.apply(&mut rng, &mut real, 5.0).unwrap(), 1.0);
        assert_eq!(real.gains(), &before[..]);
        for _ in 0..200 {
            let w = is.apply(&mut rng, &mut real, 30.0).unwrap();
            assert!(w > 0.0 && w <= 1.0 / 0.2 + 1e-12);
        }
    }

    #[test]
    fn data_energy_is_unit() {
        for m in [Modulation::Bpsk, Modulation::Qam4, Modulation::Qam16] {
            let c = Constellation::new(m);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let e: f64 = (0..100_000).map(|_| c.symbol(rng.random_range(0..c.len())).norm_sqr()).sum::<f64>() / 1e5;
            assert!((e - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn slope_of_power_law() {
        for order in [2.0, 3.0, 6.0] {
            let pts: Vec<(f64, f64)> =
                (0..12).map(|k| (2.0 * k as f64, 0.3 * 10f64.powf(-order * 0.2 * k as f64))).collect();
            let rep = diversity_slope(&pts, (1e-12, 1.0)).unwrap();
            assert!((rep.slope - order).abs() < 1e-3);
        }
        assert!(matches!(diversity_slope(&[(0.0, 0.1)], (1e-5, 1e-2)), Err(AfdmError::InsufficientPoints(_))));
    }

    #[test]
    fn phi_basics() {
        let p = n6();
        let profile = DelayDopplerProfile::new(vec![(1, 1.0)]);
        let x: Vec<C64> = (0..6).map(|k| C64::new(k as f64, 1.0)).collect();
        let phi = build_phi(&p, &profile, &x).unwrap();
        let h = SubchannelCache::new(&p, &profile).unwrap().matrices()[0].clone();
        let hx = &h * DVector::from_column_slice(&x);
        assert!((phi.column(0) - hx).norm() < 1e-12);
        let two = DelayDopplerProfile::new(vec![(0, 0.0), (1, 1.0)]);
        assert_eq!(build_phi(&p, &two, &[C64::new(0.0, 0.0); 6]).unwrap().norm(), 0.0);
        let frac = DelayDopplerProfile::new(vec![(0, 0.5)]);
        assert!(matches!(build_phi(&p, &frac, &x), Err(AfdmError::FractionalDoppler(_))));
    }

    #[test]
    fn min_rank_equals_path_count() {
        let p = n6();
        for paths in [vec![(0, 0.0), (1, 1.0)], vec![(0, 0.0), (0, 1.0), (1, 1.0)]] {
            let k = paths.len();
            let res = min_rank_exhaustive(&p, &DelayDopplerProfile::new(paths), Modulation::Bpsk).unwrap();
            assert_eq!(res.vectors, 3usize.pow(6) - 1);
            assert_eq!(res.min_rank, k);
        }
    }

    #[test]
    fn chernoff_bound_limits_and_slope() {
        let p = n6();
        let profile = DelayDopplerProfile::new(vec![(0, 0.0), (1, 1.0)]);
        let zero = vec![C64::new(0.0, 0.0); 6];
        assert_eq!(pep_chernoff(&p, &profile, &zero, 2, 0.1).unwrap(), 1.0);
        let witness = min_rank_exhaustive(&p, &profile, Modulation::Bpsk).unwrap().witness;
        assert!(pep_chernoff(&p, &profile, &witness, 2, 1e-12).unwrap() < 1e-30);
        let at = |snr: f64| -pep_chernoff(&p, &profile, &witness, 2, noise_variance(snr)).unwrap().log10();
        let slope = (at(60.0) - at(50.0)) / 1.0;
        assert!((slope - 4.0).abs() < 0.01, "{slope}");
    }

    #[test]
    fn nmse_trivial_cases() {
        let p = n6();
        let h = SubchannelCache::new(&p, &DelayDopplerProfile::new(vec![(1, 1.0)])).unwrap().matrices()[0].clone();
        let exact = ChannelBand::from_dense(&h, p.band_offset(), p.band_len().min(6));
        assert!(nmse_blocks(&[exact], std::slice::from_ref(&h)).unwrap().1 < 1e-30);
        let zero = ChannelBand::for_params(&p);
        assert!((nmse_blocks(&[zero], std::slice::from_ref(&h)).unwrap().1 - 1.0).abs() < 1e-15);
        assert!(nmse_blocks(&[], &[h]).is_err());
    }

    #[test]
    fn config_round_trip_and_errors() {
        let cfg = n6_config(vec![(0, 0.0), (1, 1.0)], 2, 2);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert!(ExperimentConfig::from_toml("n = 3").is_err());
        let mut bad = cfg.clone();
        bad.csi = CsiMode::Estimated;
        assert!(bad.validate().is_err());
        let mut big = cfg;
        big.params.n = 16;
        big.params.l_max = 1;
        assert!(matches!(big.validate(), Err(AfdmError::SearchSpace { .. })));
    }

    #[test]
    fn estimated_csi_tracks_perfect_at_high_pilot_snr() {
        let base = ExperimentConfig {
            name: "est".into(),
            params: ParamsConfig { n: 256, l_max: 2, alpha_max: 2, k_nu: 0, c2: None },
            n_r: 2,
            n_t: 2,
            profile: ProfileSpec::Jakes { delays: vec![0, 0, 1, 2], nu_max: 2.0, integer: true },
            modulation: Modulation::Bpsk,
            detector: DetectorConfig::new(DetectorKind::Mp),
            snr_db: vec![4.0],
            snr_p_db: Some(50.0),
            zeta: 6.0,
            csi: CsiMode::Estimated,
            trials: TrialPolicy::fixed(40),
            seed: 3,
            importance: None,
        };
        let est = run_ber(&base).unwrap().points[0];
        let mut perfect = base.clone();
        perfect.csi = CsiMode::Perfect;
        let per = run_ber(&perfect).unwrap().points[0];
        assert!(est.ber > 0.0 && per.ber > 0.0);
        assert!((est.ber - per.ber).abs() <= 3.0 * (est.ci_halfwidth + per.ci_halfwidth), "{est:?} {per:?}");
    }
}
