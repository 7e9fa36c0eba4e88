//! Batch front end: configuration, orchestration and file output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::acceptance::{self, michlin_tables, resolvent_family, Check, Settings};
use crate::backtransform::{residual_of_solution, OriginalForcing};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::{CoeffField, Grid};
use crate::linalg::{vec_norm, Vec3, C64};
use crate::linear::{solve_linear, solve_report, Forcing, LinearSolution};
use crate::multiplier::{family_rbound, kahane_check, rbound_estimate, FamilyRBound, RBoundReport, RBoundSample};
use crate::nonlinear::{energy_report, picard_solve, EnergyReport};
use crate::report::{fmt_f64, fmt_opt, write_json, Csv};
use crate::scenarios::{complex_vec3, trial_rng};
use crate::symbol::{log_space, resolvent_sweep, sector_report};

pub const THREADS_ENV: &str = "THERMOPLATE_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "thermoplate", version, about = "Thermoelastic plate spectral simulator and symbol checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `rng.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to THERMOPLATE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Spectral angle of the coupling matrix and the sampled resolvent bound.
    SymbolReport,
    /// Michlin sweeps and R-bound estimates.
    MultiplierCheck,
    /// Linear evolution from the configured data.
    SolveLinear,
    /// Cubic problem by Picard iteration on the whole trajectory.
    SolveNonlinear,
    /// Run the acceptance suite and print a pass/fail table.
    Verify,
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::ConfigInvalid(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

pub fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng.seed = seed;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<i32> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::ConfigInvalid("thread count must be at least 1".into()));
        }
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out)?;
    let start = Instant::now();
    let (code, written) = match cli.command {
        Command::SymbolReport => (EXIT_OK, symbol_report(&cfg, &cli.out)?),
        Command::MultiplierCheck => (EXIT_OK, multiplier_check(&cfg, &cli.out)?),
        Command::SolveLinear => (EXIT_OK, solve_linear_cmd(&cfg, &cli.out)?),
        Command::SolveNonlinear => (EXIT_OK, solve_nonlinear_cmd(&cfg, &cli.out)?),
        Command::Verify => verify(&cfg, &cli.out, cli.quiet)?,
    };
    if !cli.quiet {
        for f in &written {
            println!("wrote {}", cli.out.join(f).display());
        }
        eprintln!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    }
    Ok(code)
}

fn symbol_report(cfg: &Config, out: &Path) -> Result<Vec<&'static str>> {
    let lambdas = cfg.sweep.lambdas.points();
    let zs = log_space(1e-3, 1e3, cfg.sweep.n_zeta);
    let samples = resolvent_sweep(&lambdas, &zs)?;
    write_json(&out.join("sector_report.json"), &sector_report(&samples, cfg.sweep.lambdas.phi()))?;
    let mut csv = Csv::new(&["abs_zeta_sq", "sup_resolvent_norm", "argmax_re_lambda", "argmax_im_lambda"]);
    for row in samples.chunks(lambdas.len()) {
        let best = row
            .iter()
            .max_by(|a, b| a.resolvent_norm.total_cmp(&b.resolvent_norm))
            .expect("nonempty lambda set");
        csv.push(vec![
            fmt_f64(best.abs_zeta_sq),
            fmt_f64(best.resolvent_norm),
            fmt_f64(best.re_lambda),
            fmt_f64(best.im_lambda),
        ]);
    }
    csv.write(&out.join("resolvent_sweep.csv"))?;
    Ok(vec!["sector_report.json", "resolvent_sweep.csv"])
}

#[derive(Serialize)]
struct KahaneSummary {
    trials: usize,
    max_ratio: f64,
    bound: f64,
    violations: usize,
}

#[derive(Serialize)]
struct RBoundSuite {
    seed: u64,
    p: f64,
    n_draws: usize,
    resolvent_family: Vec<RBoundReport>,
    nested_family: Vec<FamilyRBound>,
    kahane: KahaneSummary,
}

fn rbound_suite(cfg: &Config) -> Result<RBoundSuite> {
    let (seed, sw) = (cfg.rng.seed, &cfg.sweep);
    let phi = sw.lambdas.phi();
    let mut families = Vec::new();
    for (i, n) in [8usize, 16, 32, 64].into_iter().enumerate() {
        let mut rng = trial_rng(seed, i as u64);
        let operators = resolvent_family(&mut rng, n, phi)?;
        let vectors: Vec<Vec3> = (0..n).map(|_| complex_vec3(&mut rng)).collect();
        families.push(rbound_estimate(
            &RBoundSample {
                operators,
                vectors,
                n_draws: sw.n_draws,
                seed,
            },
            sw.p,
        )?);
    }
    let mut rng = trial_rng(seed, 100);
    let family = resolvent_family(&mut rng, 6, phi)?;
    let vectors: Vec<Vec3> = (0..2).map(|_| complex_vec3(&mut rng)).collect();
    let nested = (1..=family.len())
        .map(|k| family_rbound(&family[..k], &vectors, sw.p, sw.n_draws, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut kahane = KahaneSummary {
        trials: sw.kahane_trials,
        max_ratio: 0.0,
        bound: 0.0,
        violations: 0,
    };
    for t in 0..sw.kahane_trials as u64 {
        let mut rng = trial_rng(seed, 1000 + t);
        let b: Vec<C64> = (0..4).map(|_| complex_vec3(&mut rng)[0]).collect();
        let a: Vec<C64> = b.iter().map(|bj| bj * complex_vec3(&mut rng)[0].re).collect();
        let x: Vec<Vec3> = (0..4).map(|_| complex_vec3(&mut rng)).collect();
        let r = kahane_check(&a, &b, &x, sw.p, sw.n_draws, seed.wrapping_add(t))?;
        kahane.max_ratio = kahane.max_ratio.max(r.ratio);
        kahane.bound = r.bound;
        kahane.violations += usize::from(!r.holds);
    }
    Ok(RBoundSuite {
        seed,
        p: sw.p,
        n_draws: sw.n_draws,
        resolvent_family: families,
        nested_family: nested,
        kahane,
    })
}

fn multiplier_check(cfg: &Config, out: &Path) -> Result<Vec<&'static str>> {
    let mut csv = Csv::new(&[
        "family",
        "gamma",
        "level",
        "sup",
        "n_lambda",
        "n_xi",
        "k_max",
        "richardson_correction",
        "argmax_re_lambda",
        "argmax_im_lambda",
    ]);
    for (base, doubled) in michlin_tables(&cfg.sweep)? {
        for (level, table) in [(0, &base), (1, &doubled)] {
            for row in &table.rows {
                let gamma: Vec<String> = row.gamma.iter().map(|g| g.to_string()).collect();
                csv.push(vec![
                    table.family.clone(),
                    gamma.join(""),
                    level.to_string(),
                    fmt_f64(row.sup),
                    table.n_lambda.to_string(),
                    table.n_xi.to_string(),
                    table.k_max.to_string(),
                    fmt_f64(row.richardson_correction),
                    fmt_f64(row.argmax_lambda[0]),
                    fmt_f64(row.argmax_lambda[1]),
                ]);
            }
        }
    }
    csv.write(&out.join("michlin_sweep.csv"))?;
    write_json(&out.join("rbound.json"), &rbound_suite(cfg)?)?;
    Ok(vec!["michlin_sweep.csv", "rbound.json"])
}

struct Problem {
    grid: Grid,
    u0: CoeffField,
    forcing: Option<CoeffField>,
}

fn problem(cfg: &Config) -> Result<Problem> {
    let grid = Grid::from_domain(&cfg.domain)?;
    let u0 = cfg.data.initial.build(&grid, &mut trial_rng(cfg.rng.seed, 0))?;
    let forcing = if cfg.data.forcing.is_zero() {
        None
    } else {
        Some(cfg.data.forcing.build(&grid, &mut trial_rng(cfg.rng.seed, 1))?)
    };
    Ok(Problem { grid, u0, forcing })
}

fn trajectory_csv(grid: &Grid, sol: &LinearSolution, stride: usize) -> Csv {
    let dims = grid.dims();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..dims).map(|d| format!("k{d}")));
    for c in 1..=3 {
        header.push(format!("u{c}_re"));
        header.push(format!("u{c}_im"));
    }
    let mut csv = Csv {
        header,
        rows: Vec::new(),
    };
    let last = sol.states.len() - 1;
    for (n, u) in sol.states.iter().enumerate() {
        if n % stride != 0 && n != last {
            continue;
        }
        for m in 0..grid.n_modes() {
            let v = u.mode(m);
            if vec_norm(&v) == 0.0 {
                continue;
            }
            let mut row = vec![fmt_f64(sol.times[n])];
            row.extend(grid.mode_index(m).labels.iter().map(|l| l.to_string()));
            for c in v {
                row.push(fmt_f64(c.re));
                row.push(fmt_f64(c.im));
            }
            csv.push(row);
        }
    }
    csv
}

fn energy_csv(rep: &EnergyReport) -> Csv {
    let mut csv = Csv::new(&["t", "energy", "dissipation", "residual"]);
    for i in 0..rep.times.len() {
        csv.push(vec![
            fmt_f64(rep.times[i]),
            fmt_f64(rep.energy[i]),
            fmt_f64(rep.dissipation[i]),
            fmt_opt(rep.residual[i]),
        ]);
    }
    csv
}

/// `g = F₂` and `h = F₃` per node; the first component of `F` has no
/// counterpart in the original equations.
fn original_forcing(forcing: &[CoeffField]) -> OriginalForcing {
    OriginalForcing {
        g: Some(forcing.iter().map(|f| f.comps[1].clone()).collect()),
        h: Some(forcing.iter().map(|f| f.comps[2].clone()).collect()),
    }
}

fn write_solution_files(
    cfg: &Config,
    out: &Path,
    pr: &Problem,
    sol: &LinearSolution,
    forcing: &Forcing,
    a: f64,
) -> Result<()> {
    trajectory_csv(&pr.grid, sol, cfg.time.output_stride).write(&out.join("trajectory.csv"))?;
    write_json(&out.join("solve_report.json"), &solve_report(&pr.grid, sol, forcing, cfg.data.p)?)?;
    let dealias = cfg.nonlinear.dealias_factor;
    energy_csv(&energy_report(&pr.grid, sol, a, dealias)?).write(&out.join("energy.csv"))?;
    let of = match &pr.forcing {
        Some(g) => original_forcing(&vec![g.clone(); sol.states.len()]),
        None => OriginalForcing::default(),
    };
    let res = residual_of_solution(&pr.grid, sol, &of, a, dealias)?;
    let mut csv = Csv::new(&["t", "r1", "r2"]);
    for i in 0..res.times.len() {
        csv.push(vec![fmt_f64(res.times[i]), fmt_opt(res.r1[i]), fmt_opt(res.r2[i])]);
    }
    csv.write(&out.join("residual.csv"))?;
    Ok(())
}

const SOLVE_FILES: [&str; 4] = ["trajectory.csv", "solve_report.json", "energy.csv", "residual.csv"];

fn solve_linear_cmd(cfg: &Config, out: &Path) -> Result<Vec<&'static str>> {
    let pr = problem(cfg)?;
    let forcing = match &pr.forcing {
        Some(f) => Forcing::Constant(f.clone()),
        None => Forcing::Zero,
    };
    let sol = solve_linear(&pr.grid, &pr.u0, &forcing, &cfg.time.grid())?;
    write_solution_files(cfg, out, &pr, &sol, &forcing, 0.0)?;
    Ok(SOLVE_FILES.to_vec())
}

fn solve_nonlinear_cmd(cfg: &Config, out: &Path) -> Result<Vec<&'static str>> {
    let pr = problem(cfg)?;
    let time = cfg.time.grid();
    let extra = pr.forcing.as_ref().map(|f| vec![f.clone(); time.n_steps + 1]);
    let res = match picard_solve(&pr.grid, &pr.u0, &cfg.nonlinear, &time, extra.as_deref()) {
        Ok(r) => r,
        Err(Error::NoConvergence { trace }) => {
            write_json(&out.join("picard_trace.json"), &trace)?;
            return Err(Error::NoConvergence { trace });
        }
        Err(e) => return Err(e),
    };
    write_json(&out.join("picard_trace.json"), &res.trace)?;
    let forcing = Forcing::Samples(res.forcing.clone());
    write_solution_files(cfg, out, &pr, &res.solution, &forcing, cfg.nonlinear.a)?;
    let mut files = vec!["picard_trace.json"];
    files.extend(SOLVE_FILES);
    Ok(files)
}

fn verify(cfg: &Config, out: &Path, quiet: bool) -> Result<(i32, Vec<&'static str>)> {
    let settings = Settings::from_config(cfg);
    let mut checks: Vec<Check> = Vec::new();
    for &(id, _) in acceptance::CRITERIA.iter() {
        let start = Instant::now();
        let c = acceptance::run(id, &settings);
        if !quiet {
            eprintln!("criterion {id:>2} finished in {:.2}s", start.elapsed().as_secs_f64());
        }
        checks.push(c);
    }
    write_json(&out.join("acceptance.json"), &checks)?;
    let mut csv = Csv::new(&["id", "name", "passed"]);
    for c in &checks {
        csv.push(vec![c.id.to_string(), c.name.clone(), c.passed.to_string()]);
    }
    csv.write(&out.join("acceptance.csv"))?;
    for c in &checks {
        println!("{:>2}  {:<28} {}", c.id, c.name, if c.passed { "PASS" } else { "FAIL" });
        for f in &c.failures {
            println!("      {f}");
        }
    }
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} criteria passed", checks.len());
    let code = if passed == checks.len() { EXIT_OK } else { EXIT_NUMERICAL };
    Ok((code, vec!["acceptance.json", "acceptance.csv"]))
}
