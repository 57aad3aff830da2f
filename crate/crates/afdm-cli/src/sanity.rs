//! Fast invariant suite behind `afdm sanity`.

use std::time::Instant;

use afdm::chanest::{
    delay_block_of, estimate_mimo, nmse, noiseless_pilot_rx, reconstruct_subchannel, transform_factor,
    TransformFactorTable,
};
use afdm::channel::{apply_paths, subchannel_matrix, DelayDopplerProfile, MimoChannelRealization, SubchannelCache};
use afdm::daft::{daft_matrix, DaftPlan, Domain, Frame};
use afdm::framing::EpaLayout;
use afdm::noise::complex_gaussian;
use afdm::{AfdmParams, CMatrix, Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{CliError, CliResult};

struct Check {
    name: &'static str,
    /// Worst observed deviation.
    value: f64,
    limit: f64,
    detail: String,
}

fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn max_vec_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize, domain: Domain) -> Frame {
    Frame::new((0..n).map(|_| complex_gaussian(rng, 1.0)).collect(), domain)
}

fn unitarity() -> Result<Check> {
    let mut worst = 0.0f64;
    for n in [8, 64, 256] {
        let a = daft_matrix(&AfdmParams::with_default_c2(n, 0, 0, 0)?)?;
        let gram = &a * a.adjoint();
        worst = worst.max(max_diff(&gram, &CMatrix::identity(n, n)));
    }
    Ok(Check { name: "daft/unitarity", value: worst, limit: 1e-10, detail: "N = 8, 64, 256".into() })
}

fn fast_vs_dense(rng: &mut ChaCha8Rng) -> Result<Check> {
    let p = AfdmParams::with_default_c2(64, 2, 2, 1)?;
    let a = daft_matrix(&p)?;
    let plan = DaftPlan::new(&p);
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let s = random_frame(rng, 64, Domain::Time);
        let dense = &a * nalgebra::DVector::from_column_slice(&s);
        worst = worst.max(max_vec_diff(&plan.daft(&s)?, dense.as_slice()));
    }
    Ok(Check { name: "daft/fast-vs-dense", value: worst, limit: 1e-10, detail: "N = 64".into() })
}

fn duality(rng: &mut ChaCha8Rng) -> Result<Check> {
    let p = AfdmParams::with_default_c2(1024, 2, 2, 1)?;
    let plan = DaftPlan::new(&p);
    let x = random_frame(rng, 1024, Domain::Tx);
    let back = plan.daft(&plan.idaft(&x)?)?;
    let energy = (plan.idaft(&x)?.energy() - x.energy()).abs() / x.energy();
    Ok(Check {
        name: "daft/duality",
        value: max_vec_diff(&back, &x).max(energy),
        limit: 1e-10,
        detail: "DAFT(IDAFT(x)) = x and energy at N = 1024".into(),
    })
}

fn factor_table(table: &TransformFactorTable, p: &AfdmParams) -> Result<Check> {
    let n = p.n;
    let mut worst = 0.0f64;
    for m in 0..n {
        for q in 0..p.band_len() {
            let mp = (m + n + q - p.band_offset()) % n;
            let l = delay_block_of(p, m, mp)?;
            let got = table.lookup(m, mp).unwrap_or_default();
            worst = worst.max((got - transform_factor(p, l, m, mp)).norm());
        }
    }
    Ok(Check {
        name: "chanest/factor-table",
        value: worst,
        limit: 1e-12,
        detail: format!("{} entries against the closed form over every in-band pair, N = {n}", table.len()),
    })
}

fn reconstruction(rng: &mut ChaCha8Rng) -> Result<Check> {
    let mut worst = 0.0f64;
    for n in [64, 1024] {
        let p = AfdmParams::with_default_c2(n, 2, 2, 2)?;
        let l = rng.random_range(0..=2);
        let nu = rng.random_range(-2.4..2.4);
        let h = subchannel_matrix(&p, l, nu)?;
        let col = rng.random_range(0..n);
        let column: Vec<C64> = h.column(col).iter().copied().collect();
        worst = worst.max(max_diff(&reconstruct_subchannel(&p, &column, col, l)?, &h));
    }
    Ok(Check {
        name: "chanest/reconstruction",
        value: worst,
        limit: 1e-9,
        detail: "single fractional path from one column, N = 64, 1024".into(),
    })
}

fn epa_dr(table: &TransformFactorTable, p: &AfdmParams, rng: &mut ChaCha8Rng) -> Result<Check> {
    let profile = DelayDopplerProfile::new(vec![(0, 0.0), (0, 2.0), (1, -1.0), (2, 1.0)]);
    let gains = (0..4 * profile.len()).map(|_| complex_gaussian(rng, 0.25)).collect();
    let real = MimoChannelRealization::new(profile.clone(), 2, 2, gains)?;
    let layout = EpaLayout::new(p, 2, 1.0)?;
    let rx = noiseless_pilot_rx(p, &real, &layout)?;
    let est = estimate_mimo(p, &rx, &layout, 0.0, table)?;
    let cache = SubchannelCache::new(p, &profile)?;
    let mut worst = 0.0f64;
    for r in 0..2 {
        for t in 0..2 {
            worst = worst.max(nmse(est.block(r, t), &cache.combine(&real.paths(r, t)?)));
        }
    }
    Ok(Check {
        name: "chanest/epa-dr-integer",
        value: worst,
        limit: 1e-18,
        detail: format!("2x2 noiseless pilots, worst block NMSE, N = {}", p.n),
    })
}

fn pipeline(rng: &mut ChaCha8Rng) -> Result<Check> {
    let p = AfdmParams::with_default_c2(64, 2, 2, 2)?;
    let profile = DelayDopplerProfile::new(vec![(0, 0.4), (1, -1.7), (2, 2.2)]);
    let gains = (0..profile.len()).map(|_| complex_gaussian(rng, 1.0 / 3.0)).collect();
    let real = MimoChannelRealization::new(profile.clone(), 1, 1, gains)?;
    let paths = real.paths(0, 0)?;
    let plan = DaftPlan::new(&p);
    let x = random_frame(rng, 64, Domain::Tx);
    let y = plan.daft(&apply_paths(&p, &paths, &plan.idaft(&x)?)?)?;
    let h = SubchannelCache::new(&p, &profile)?.combine(&paths);
    let expect = &h * nalgebra::DVector::from_column_slice(&x);
    Ok(Check {
        name: "channel/pipeline",
        value: max_vec_diff(&y, expect.as_slice()),
        limit: 1e-10,
        detail: "time-domain channel vs effective DAFT matrix, fractional Doppler".into(),
    })
}

pub fn run(seed: u64, corrupt_table: bool) -> CliResult<()> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table_params = AfdmParams::with_default_c2(1024, 2, 2, 1).map_err(crate::output::runtime)?;
    let epa_params = AfdmParams::with_default_c2(256, 2, 2, 0).map_err(crate::output::runtime)?;
    let mut table = TransformFactorTable::new(&table_params);
    let mut epa_table = TransformFactorTable::new(&epa_params);
    if corrupt_table {
        table.perturb(table_params.band_offset() + 1, 0.3);
        epa_table.perturb(epa_params.band_offset(), 0.3);
    }
    let results: Vec<(&str, Result<Check>)> = vec![
        ("daft/unitarity", unitarity()),
        ("daft/fast-vs-dense", fast_vs_dense(&mut rng)),
        ("daft/duality", duality(&mut rng)),
        ("channel/pipeline", pipeline(&mut rng)),
        ("chanest/factor-table", factor_table(&table, &table_params)),
        ("chanest/reconstruction", reconstruction(&mut rng)),
        ("chanest/epa-dr-integer", epa_dr(&epa_table, &epa_params, &mut rng)),
    ];
    let total = results.len();
    let mut failed = Vec::new();
    for (name, result) in results {
        match result {
            Ok(c) if c.value <= c.limit => {
                println!("PASS {:<24} {:.2e} <= {:.0e}  {}", c.name, c.value, c.limit, c.detail)
            }
            Ok(c) => {
                println!("FAIL {:<24} {:.2e} >  {:.0e}  {}", c.name, c.value, c.limit, c.detail);
                failed.push(name);
            }
            Err(e) => {
                println!("FAIL {name:<24} {e}");
                failed.push(name);
            }
        }
    }
    println!("{total} checks in {:.1} s", start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("sanity failures: {}", failed.join(", "))))
    }
}
