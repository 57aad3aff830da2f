use std::fmt::Write as _;

use afdm::afdma::{plan_afdma_downlink, plan_afdma_uplink, validate_plan, AfdmaUser, Direction, SlotRole};
use afdm::chanest::TransformFactorTable;
use afdm::framing::OverheadReport;
use afdm::harness::{
    diversity_slope, run_ber, run_nmse, run_zeta_sweep, write_ber_csv, BerPoint, CsiMode, ExperimentConfig,
    ParamsConfig,
};
use serde::{Deserialize, Serialize};

use crate::output::{load_experiment, read_toml, require_out, runtime, write_files, Manifest, MANIFEST};
use crate::{Cli, CliError, CliResult, OverheadArgs, ParamArgs};

fn ber_csv(points: &[BerPoint]) -> CliResult<String> {
    let mut buf = Vec::new();
    write_ber_csv(points, &mut buf).map_err(runtime)?;
    String::from_utf8(buf).map_err(runtime)
}

fn print_points(points: &[BerPoint]) {
    for p in points {
        println!(
            "SNR {:>6.2} dB  BER {:.4e}  ({} errors / {} bits, {} trials)",
            p.snr_db, p.ber, p.errors, p.bits, p.trials
        );
    }
}

pub fn ber(cli: &Cli, zeta_sweep: &[f64]) -> CliResult<()> {
    let (config, _) = load_experiment(cli)?;
    let out = require_out(cli)?;
    if !zeta_sweep.is_empty() {
        return zeta(&config, zeta_sweep, out);
    }
    let result = run_ber(&config).map_err(runtime)?;
    print_points(&result.points);
    let manifest = Manifest::new("ber", Some(config.seed), &config).render()?;
    write_files(out, &[("ber.csv", ber_csv(&result.points)?), (MANIFEST, manifest)])
}

fn zeta(config: &ExperimentConfig, zetas: &[f64], out: &std::path::Path) -> CliResult<()> {
    if config.csi != CsiMode::Estimated || zetas.iter().any(|z| !(*z >= 0.0)) {
        return Err(CliError::Config("--zeta-sweep needs estimated CSI and non-negative thresholds".into()));
    }
    let mut csv = String::from("zeta,snr_db,ber,errors,bits,ci_halfwidth,seed\n");
    for &snr in &config.snr_db {
        for (z, p) in run_zeta_sweep(config, snr, zetas).map_err(runtime)? {
            println!(
                "SNR {:>6.2} dB  zeta {z:>6.2} N0  BER {:.4e}  ({} errors, {} trials)",
                snr, p.ber, p.errors, p.trials
            );
            writeln!(csv, "{z},{},{:e},{},{},{:e},{}", p.snr_db, p.ber, p.errors, p.bits, p.ci_halfwidth, p.seed)
                .unwrap();
        }
    }
    let manifest = Manifest::new("ber", Some(config.seed), config)
        .option("zeta_sweep", toml::Value::Array(zetas.iter().map(|&z| z.into()).collect()))
        .render()?;
    write_files(out, &[("zeta_sweep.csv", csv), (MANIFEST, manifest)])
}

pub fn diversity(cli: &Cli, window: (f64, f64)) -> CliResult<()> {
    let (config, _) = load_experiment(cli)?;
    if !(window.0 > 0.0 && window.0 < window.1) {
        return Err(CliError::Config(format!("--ber-window needs 0 < lo < hi, got {window:?}")));
    }
    let out = require_out(cli)?;
    let result = run_ber(&config).map_err(runtime)?;
    print_points(&result.points);
    let manifest = Manifest::new("diversity", Some(config.seed), &config)
        .option("ber_window", toml::Value::Array(vec![window.0.into(), window.1.into()]))
        .render()?;
    let mut files = vec![("ber.csv", ber_csv(&result.points)?), (MANIFEST, manifest)];
    let pts: Vec<(f64, f64)> = result.points.iter().map(|p| (p.snr_db, p.ber)).collect();
    let fit = diversity_slope(&pts, window);
    let target = (config.profile.path_count() * config.n_r) as f64;
    if let Ok(report) = &fit {
        let (lo, hi) = (report.used[0].0, report.used[report.used.len() - 1].0);
        println!(
            "slope {:.3} over {} points ({lo} to {hi} dB), full diversity {target}",
            report.slope,
            report.used.len()
        );
        files.push((
            "diversity.csv",
            format!(
                "snr_lo_db,snr_hi_db,points,slope,target\n{lo},{hi},{},{},{target}\n",
                report.used.len(),
                report.slope
            ),
        ));
    }
    write_files(out, &files)?;
    fit.map(|_| ()).map_err(runtime)
}

pub fn nmse(cli: &Cli) -> CliResult<()> {
    let (config, _) = load_experiment(cli)?;
    let out = require_out(cli)?;
    let points = run_nmse(&config).map_err(runtime)?;
    let blocks = config.n_r * config.n_t;
    let mut csv = String::from("snr_db,nmse,trials");
    for b in 0..blocks {
        write!(csv, ",nmse_r{}_t{}", b / config.n_t, b % config.n_t).unwrap();
    }
    csv.push('\n');
    for p in &points {
        println!("SNR {:>6.2} dB  NMSE {:.4e}", p.snr_db, p.aggregate);
        write!(csv, "{},{:e},{}", p.snr_db, p.aggregate, p.trials).unwrap();
        for v in &p.per_block {
            write!(csv, ",{v:e}").unwrap();
        }
        csv.push('\n');
    }
    let manifest = Manifest::new("nmse", Some(config.seed), &config).render()?;
    write_files(out, &[("nmse.csv", csv), (MANIFEST, manifest)])
}

fn param_config(args: &ParamArgs) -> ParamsConfig {
    ParamsConfig { n: args.n, l_max: args.l_max, alpha_max: args.alpha_max, k_nu: args.k_nu, c2: args.c2 }
}

/// Parameters from `--config` when given, else from the flags.
fn resolve_params(cli: &Cli, args: &ParamArgs) -> CliResult<(ParamsConfig, Option<usize>)> {
    if cli.config.is_some() {
        let (config, _) = load_experiment(cli)?;
        return Ok((config.params, Some(config.n_t)));
    }
    let params = param_config(args);
    params.build().map_err(|e| CliError::Config(e.to_string()))?;
    Ok((params, None))
}

pub fn overhead(cli: &Cli, args: &OverheadArgs) -> CliResult<()> {
    let (base, n_t) = resolve_params(cli, &args.params)?;
    let n_t = n_t.unwrap_or(args.n_t);
    if n_t == 0 {
        return Err(CliError::Config("--n-t must be positive".into()));
    }
    let sweep = if args.k_nu_sweep.is_empty() { vec![base.k_nu] } else { args.k_nu_sweep.clone() };
    let mut reports = Vec::with_capacity(sweep.len());
    for k_nu in sweep {
        let params = ParamsConfig { k_nu, ..base }.build().map_err(|e| CliError::Config(e.to_string()))?;
        reports.push(OverheadReport::new(&params, n_t));
    }
    let mut csv = String::from("n,n_t,l_max,alpha_max,k_nu,afdm_slots,afdm_percent,otfs_slots,otfs_percent\n");
    for r in &reports {
        if reports.len() > 1 {
            println!("k_nu={}: {}", r.k_nu, r.summary());
        } else {
            println!("{}", r.summary());
        }
        writeln!(
            csv,
            "{},{},{},{},{},{},{:.2},{},{:.2}",
            r.n,
            r.n_t,
            r.l_max,
            r.alpha_max,
            r.k_nu,
            r.afdm,
            r.afdm_percent(),
            r.otfs,
            r.otfs_percent()
        )
        .unwrap();
    }
    if let Some(out) = &cli.out {
        let manifest = Manifest::new("overhead", None, &base)
            .option("n_t", n_t as i64)
            .option("k_nu", toml::Value::Array(reports.iter().map(|r| (r.k_nu as i64).into()).collect()))
            .render()?;
        write_files(out, &[("overhead.csv", csv), (MANIFEST, manifest)])?;
    }
    Ok(())
}

/// Multi-user plan description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub direction: Direction,
    pub n: usize,
    /// Users ordered by band size.
    pub users: Vec<AfdmaUser>,
    /// Downlink `L_max`; defaults to the largest user band.
    #[serde(default)]
    pub band_max: Option<usize>,
    /// Base-station antennas (downlink).
    #[serde(default = "one")]
    pub n_bs: usize,
}

fn one() -> usize {
    1
}

pub fn afdma_plan(cli: &Cli) -> CliResult<()> {
    let config: PlanConfig = read_toml(cli)?;
    let plan = match config.direction {
        Direction::Downlink => {
            let band_max = config.band_max.unwrap_or_else(|| config.users.iter().map(|u| u.band).max().unwrap_or(0));
            plan_afdma_downlink(config.n, &config.users, band_max, config.n_bs)
        }
        Direction::Uplink => plan_afdma_uplink(config.n, &config.users),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "{:?} N={} overhead {} ({:.2}%), padding {}",
        plan.direction,
        plan.n,
        plan.overhead,
        100.0 * plan.overhead as f64 / plan.n as f64,
        plan.padding
    );
    println!("pilots {:?}", plan.pilots);
    for (u, d) in plan.data_blocks.iter().enumerate() {
        println!("user {} data {}..{}", u + 1, d.start, d.end);
    }
    let violations = validate_plan(&plan);
    if let Some(out) = &cli.out {
        let mut csv = String::from("slot,role,owner\n");
        for (slot, role) in plan.slot_roles().iter().enumerate() {
            match role {
                SlotRole::Guard => writeln!(csv, "{slot},guard,"),
                SlotRole::Pilot { owner } => writeln!(csv, "{slot},pilot,{}", owner + 1),
                SlotRole::Data { user } => writeln!(csv, "{slot},data,{}", user + 1),
            }
            .unwrap();
        }
        let manifest = Manifest::new("afdma-plan", None, &config).render()?;
        write_files(out, &[("plan.csv", csv), (MANIFEST, manifest)])?;
    }
    if violations.is_empty() {
        println!("validation: ok");
        Ok(())
    } else {
        for v in &violations {
            println!("violation: {v}");
        }
        Err(CliError::Runtime(format!("{} plan violations", violations.len())))
    }
}

pub fn factors(cli: &Cli, args: &ParamArgs) -> CliResult<()> {
    let (config, _) = resolve_params(cli, args)?;
    let params = config.build().map_err(|e| CliError::Config(e.to_string()))?;
    let table = TransformFactorTable::new(&params);
    let mut csv = String::from("diagonal,case,re,im\n");
    for (d, case, v) in table.entries() {
        writeln!(csv, "{d},{case},{:e},{:e}", v.re, v.im).unwrap();
    }
    match &cli.out {
        Some(out) => {
            println!("{} factors for N={} L={}", table.len(), params.n, params.band);
            let manifest = Manifest::new("factors", None, &config).render()?;
            write_files(out, &[("factors.csv", csv), (MANIFEST, manifest)])
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
