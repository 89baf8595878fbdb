//! Command-line front end: single solves, regularity diagnostics at a
//! point, the two benchmark experiments, and performance profiles.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nslm_core::bench::{
    build_profile_table, objective_quantiles, read_runs_csv, run_experiment1_configured,
    run_experiment2_configured, write_profile_csv, write_profile_svg, write_runs_csv, MetricKind,
    RunRecord,
};
use nslm_core::bilevel::{builtin, BilevelProblem, SettingKind, StationarityPoint, BUILTIN_NAMES};
use nslm_core::mnlcs::{Iterate, MnlcsProblem};
use nslm_core::regularity::{
    check_fb_regularity, check_max_regularity, RegularityReport, Verdict, WitnessParams,
    DEFAULT_ACT_TOL, DEFAULT_RANK_TOL, DEFAULT_SAMPLES_PER_INDEX,
};
use nslm_core::solver::{solve_global, DirectionKind, LmConfig, LmResult, TermCode};
use nslm_core::Vector;

#[derive(Parser)]
#[command(
    name = "nslm",
    about = "Levenberg-Marquardt solvers for nonsmooth complementarity systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Para,
    Var1,
    Var2,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Direction from the max residual (mixLM).
    Mix,
    /// Direction from the Fischer-Burmeister residual (FBLM).
    Fb,
}

/// Solver parameters; unset flags fall back to the config file, then to the
/// benchmark defaults for the chosen problem.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value file; keys are LmConfig field names.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    tau_abs: Option<f64>,
    #[arg(long)]
    tau_abs_stat: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    rho1: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one instance and print the run summary.
    Solve {
        /// Built-in problem name: example8 or transport.
        #[arg(long)]
        problem: String,
        #[arg(long, value_enum)]
        setting: SettingArg,
        /// Penalization weight: fixed for para, initial guess for var1,
        /// and zeta = sqrt(lambda) initialization for var2.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Data seed; only affects the transport problem.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated start: either the full unknown vector or just
        /// (x, y) with multipliers initialized to 1.
        #[arg(long)]
        start: Option<String>,
        /// Write the per-iteration trace to this CSV file.
        #[arg(long, value_name = "CSV")]
        trace: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the regularity diagnostics at a point and exit 0/1/2 for
    /// Pass/Fail/Inconclusive.
    Check {
        /// Built-in problem name: example8 or transport.
        #[arg(long)]
        problem: String,
        #[arg(long, value_enum)]
        setting: SettingArg,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Data seed; only affects the transport problem.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated point, same format as --start of solve.
        #[arg(long)]
        point: String,
    },
    /// Grid sweep on the small nonconvex problem: 121 starts, six methods.
    Experiment1 {
        #[arg(long, default_value = "runs.csv")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Random-start sweep on the inverse transportation problem.
    Experiment2 {
        /// Seed for both the synthetic data and the start points.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        starts: usize,
        #[arg(long, default_value = "runs.csv")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build Dolan-More performance profiles from recorded runs.
    Profile {
        #[arg(long = "in", value_name = "CSV")]
        input: PathBuf,
        /// One of: iters, time, objective, fullsteps.
        #[arg(long)]
        metric: String,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "SVG")]
        svg: Option<PathBuf>,
        /// Positive shift applied to objective and full-step metrics.
        #[arg(long, default_value_t = 1e-6)]
        offset: f64,
        /// Reference objective; defaults to the best value in the file.
        #[arg(long)]
        best_known: Option<f64>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Solve {
            problem,
            setting,
            lambda,
            method,
            seed,
            start,
            trace,
            cfg,
        } => solve(&problem, setting, lambda, method, seed, start.as_deref(), trace, &cfg),
        Cmd::Check {
            problem,
            setting,
            lambda,
            seed,
            point,
        } => check(&problem, setting, lambda, seed, &point),
        Cmd::Experiment1 { out, cfg } => experiment1(&out, &cfg),
        Cmd::Experiment2 {
            seed,
            starts,
            out,
            cfg,
        } => experiment2(seed, starts, &out, &cfg),
        Cmd::Profile {
            input,
            metric,
            out,
            svg,
            offset,
            best_known,
        } => profile(&input, &metric, out.as_deref(), svg.as_deref(), offset, best_known),
    }
}

fn lookup(problem: &str, seed: u64) -> Result<Arc<BilevelProblem<f64>>> {
    builtin(problem, seed).map(Arc::new).ok_or_else(|| {
        anyhow!(
            "unknown problem '{problem}'; built-ins are {}",
            BUILTIN_NAMES.join(", ")
        )
    })
}

fn setting_kind(arg: SettingArg, lambda: f64) -> Result<SettingKind<f64>> {
    if !(lambda > 0.0) {
        bail!("lambda must be positive, got {lambda}");
    }
    Ok(match arg {
        SettingArg::Para => SettingKind::Para(lambda),
        SettingArg::Var1 => SettingKind::Var1,
        SettingArg::Var2 => SettingKind::Var2,
    })
}

/// Benchmark defaults: the grid-sweep parameters for example8, the
/// random-start parameters for transport.
fn default_config(problem: &str, direction: DirectionKind) -> LmConfig<f64> {
    if problem == "transport" {
        nslm_core::bench::experiment2_config(direction)
    } else {
        nslm_core::bench::experiment1_config(direction)
    }
}

fn apply_config(cfg: &mut LmConfig<f64>, args: &ConfigArgs) -> Result<()> {
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("{}:{}: bad value for {key}", path.display(), lineno + 1);
            if key == "max_iter" {
                cfg.max_iter = value.parse().with_context(ctx)?;
                continue;
            }
            let v: f64 = value.parse().with_context(ctx)?;
            match key {
                "kappa" => cfg.kappa = v,
                "tau_abs" => cfg.tau_abs = v,
                "tau_abs_stat" => cfg.tau_abs_stat = v,
                "sigma" => cfg.sigma = v,
                "beta" => cfg.beta = v,
                "gamma1" => cfg.gamma1 = v,
                "gamma2" => cfg.gamma2 = v,
                "rho1" => cfg.rho1 = v,
                "rho2" => cfg.rho2 = v,
                "rho" => cfg.rho = v,
                _ => bail!(
                    "{}:{}: unknown key '{key}' (LmConfig field names expected)",
                    path.display(),
                    lineno + 1
                ),
            }
        }
    }
    macro_rules! flag_overrides {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    flag_overrides!(
        kappa, tau_abs, tau_abs_stat, sigma, beta, gamma1, gamma2, rho1, rho2, rho, max_iter
    );
    Ok(())
}

fn parse_floats(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            tok.parse::<f64>()
                .map_err(|_| anyhow!("'{tok}' is not a number"))
        })
        .collect()
}

/// Builds the initial iterate. Accepts the full stacked unknown vector or
/// just (x, y); multipliers then start at 1 and var2's zeta at sqrt(lambda).
fn initial_point(
    bp: &BilevelProblem<f64>,
    setting: &SettingKind<f64>,
    prob: &MnlcsProblem<f64>,
    lambda: f64,
    spec: Option<&str>,
) -> Result<Iterate<f64>> {
    let (n, m) = (bp.n(), bp.m());
    let from_xy = |x: Vector<f64>, y: Vector<f64>| {
        let pt = StationarityPoint::new(
            x,
            y,
            Vector::from_element(bp.s(), 1.0),
            Vector::from_element(bp.t(), 1.0),
            Vector::from_element(bp.t(), 1.0),
            lambda,
        );
        let pt = match setting {
            SettingKind::Var2 => pt.with_zeta(lambda.sqrt()),
            _ => pt,
        };
        setting.pack(bp, &pt)
    };
    match spec {
        None => Ok(from_xy(Vector::zeros(n), Vector::zeros(m))),
        Some(text) => {
            let vals = parse_floats(text)?;
            if vals.len() == prob.dim() {
                Ok(Iterate::from_stacked(&Vector::from_vec(vals), prob.p1()))
            } else if vals.len() == n + m {
                let x = Vector::from_column_slice(&vals[..n]);
                let y = Vector::from_column_slice(&vals[n..]);
                Ok(from_xy(x, y))
            } else {
                bail!(
                    "start has {} components; expected {} (x, y) or {} (full vector)",
                    vals.len(),
                    n + m,
                    prob.dim()
                )
            }
        }
    }
}

fn term_label(term: TermCode) -> &'static str {
    match term {
        TermCode::MaxIter => "iteration cap reached",
        TermCode::SmallResidual => "residual below tolerance",
        TermCode::StationaryMerit => "merit-gradient below tolerance",
    }
}

fn format_vec(v: &Vector<f64>) -> String {
    let body: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", body.join(", "))
}

#[allow(clippy::too_many_arguments)]
fn solve(
    problem: &str,
    setting_arg: SettingArg,
    lambda: f64,
    method: MethodArg,
    seed: u64,
    start: Option<&str>,
    trace: Option<PathBuf>,
    cfg_args: &ConfigArgs,
) -> Result<ExitCode> {
    let bp = lookup(problem, seed)?;
    let setting = setting_kind(setting_arg, lambda)?;
    let prob = setting.build(&bp);
    let direction = match method {
        MethodArg::Mix => DirectionKind::MaxResidual,
        MethodArg::Fb => DirectionKind::FbResidual,
    };
    let mut cfg = default_config(problem, direction);
    apply_config(&mut cfg, cfg_args)?;
    let z0 = initial_point(&bp, &setting, &prob, lambda, start)?;
    let result = solve_global(&prob, &z0, &cfg)?;

    let method_name = match method {
        MethodArg::Mix => "mixLM",
        MethodArg::Fb => "FBLM",
    };
    println!(
        "problem     {problem} (setting {}, lambda {lambda})",
        setting.name()
    );
    println!(
        "method      {method_name}, {} unknowns, {} residual rows",
        prob.dim(),
        prob.residual_dim()
    );
    println!(
        "term        {} ({})",
        result.term.code(),
        term_label(result.term)
    );
    println!(
        "iterations  {} ({} full LM, {} damped LM, {} gradient)",
        result.iterations, result.full_lm_steps, result.damped_lm_steps, result.gradient_steps
    );
    println!("|F_fb|      {:.6e}", result.final_norm_f_fb);
    println!("|grad Psi|  {:.6e}", result.final_norm_grad);
    let pt = setting.unpack(&bp, &result.z_final);
    let mut xy = Vector::zeros(bp.dim_w());
    xy.rows_mut(0, bp.n()).copy_from(&pt.x);
    xy.rows_mut(bp.n(), bp.m()).copy_from(&pt.y);
    println!("objective   {:.9}", bp.upper_obj(&xy));
    println!("elapsed     {:.3} ms", result.elapsed_seconds * 1e3);
    if bp.n() + bp.m() <= 12 {
        println!("x           {}", format_vec(&pt.x));
        println!("y           {}", format_vec(&pt.y));
    } else {
        println!("x           {} components", bp.n());
        println!("y           {} components", bp.m());
    }

    if let Some(path) = trace {
        write_trace_csv(&result, &path)
            .with_context(|| format!("writing trace to {}", path.display()))?;
        println!("trace       {} rows -> {}", result.trace.len(), path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn write_trace_csv(result: &LmResult<f64>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "iter,psi_fb,norm_F_fb,norm_grad_psi,nu,step_type,alpha")?;
    for t in &result.trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.iter,
            t.psi_fb,
            t.norm_f_fb,
            t.norm_grad_psi,
            t.nu,
            t.step_type.as_str(),
            t.alpha
        )?;
    }
    out.flush()?;
    Ok(())
}

fn print_report(title: &str, report: &RegularityReport<f64>) {
    let verdict = match report.verdict {
        Verdict::Pass => "Pass",
        Verdict::Fail => "Fail",
        Verdict::Inconclusive => "Inconclusive",
    };
    println!("{title}: {verdict}");
    for witness in &report.witnesses {
        println!(
            "  smallest singular value {:.3e} (rank tolerance {:.1e})",
            witness.sigma_min, report.rank_tol
        );
        match &witness.params {
            WitnessParams::Subset(ids) => {
                if ids.is_empty() {
                    println!("  worst member: every biactive pair on the multiplier branch");
                } else {
                    println!("  worst member: constraint-gradient branch on pairs {ids:?}");
                }
            }
            WitnessParams::CircleSamples(samples) => {
                for (i, a, b) in samples {
                    println!("  worst sample at pair {i}: a = {a:.6}, b = {b:.6}");
                }
            }
        }
    }
    for note in &report.notes {
        println!("  note: {note}");
    }
}

fn check(
    problem: &str,
    setting_arg: SettingArg,
    lambda: f64,
    seed: u64,
    point: &str,
) -> Result<ExitCode> {
    let bp = lookup(problem, seed)?;
    let setting = setting_kind(setting_arg, lambda)?;
    let prob = setting.build(&bp);
    let z = initial_point(&bp, &setting, &prob, lambda, Some(point))?;

    println!(
        "problem     {problem} (setting {}, {} unknowns)",
        setting.name(),
        prob.dim()
    );
    println!("|F_max|     {:.6e}", prob.residual_max(&z).norm());
    println!("|F_fb|      {:.6e}", prob.residual_fb(&z).norm());
    println!();

    let max_report = check_max_regularity(&prob, &z, DEFAULT_ACT_TOL, DEFAULT_RANK_TOL);
    print_report("max-residual regularity", &max_report);
    let fb_report = check_fb_regularity(
        &prob,
        &z,
        DEFAULT_ACT_TOL,
        DEFAULT_RANK_TOL,
        DEFAULT_SAMPLES_PER_INDEX,
    );
    print_report("FB regularity", &fb_report);

    let worst = [max_report.verdict, fb_report.verdict]
        .into_iter()
        .max_by_key(|v| match v {
            Verdict::Pass => 0,
            Verdict::Inconclusive => 1,
            Verdict::Fail => 2,
        })
        .unwrap();
    Ok(ExitCode::from(worst.exit_code() as u8))
}

/// One summary line per solver-setting pair.
fn print_sweep_summary(records: &[RunRecord]) {
    let mut keys: Vec<String> = records.iter().map(|r| r.solver_key()).collect();
    keys.dedup();
    println!(
        "{:<14} {:>5} {:>7} {:>7} {:>7} {:>10} {:>12}",
        "solver", "runs", "term=0", "term=1", "term=2", "med iters", "med obj"
    );
    for key in keys {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.solver_key() == key).collect();
        let count = |t: u8| rows.iter().filter(|r| r.term == t).count();
        let mut iters: Vec<usize> = rows.iter().map(|r| r.iterations).collect();
        iters.sort_unstable();
        let owned: Vec<RunRecord> = rows.iter().map(|&r| r.clone()).collect();
        let med_obj = objective_quantiles(&owned, &[0.5])[0];
        println!(
            "{:<14} {:>5} {:>7} {:>7} {:>7} {:>10} {:>12.6}",
            key,
            rows.len(),
            count(0),
            count(1),
            count(2),
            iters[iters.len() / 2],
            med_obj
        );
    }
}

fn write_records(records: &[RunRecord], out: &Path) -> Result<()> {
    let mut w = BufWriter::new(
        File::create(out).with_context(|| format!("creating {}", out.display()))?,
    );
    write_runs_csv(records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn experiment1(out: &Path, cfg_args: &ConfigArgs) -> Result<ExitCode> {
    let records = run_experiment1_configured(
        |cfg| {
            apply_config(cfg, cfg_args).expect("config rejected");
        },
        |_, _| {},
    )?;
    write_records(&records, out)?;
    print_sweep_summary(&records);
    println!("{} records -> {}", records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn experiment2(seed: u64, starts: usize, out: &Path, cfg_args: &ConfigArgs) -> Result<ExitCode> {
    if starts == 0 {
        bail!("--starts must be at least 1");
    }
    let records = run_experiment2_configured(
        seed,
        starts,
        |cfg| {
            apply_config(cfg, cfg_args).expect("config rejected");
        },
        |_, _| {},
    )?;
    write_records(&records, out)?;
    print_sweep_summary(&records);
    println!(
        "seed {seed}, {} starts, {} records -> {}",
        starts,
        records.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn profile(
    input: &Path,
    metric: &str,
    out: Option<&Path>,
    svg: Option<&Path>,
    offset: f64,
    best_known: Option<f64>,
) -> Result<ExitCode> {
    let kind = MetricKind::parse(metric).ok_or_else(|| {
        anyhow!("unknown metric '{metric}'; expected iters, time, objective, or fullsteps")
    })?;
    let file =
        File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = read_runs_csv(BufReader::new(file))?;
    let table = build_profile_table(&records, kind, best_known, offset);

    println!(
        "{} solvers, {} instances, metric {}",
        table.solver_labels.len(),
        table.instances.len(),
        kind.as_str()
    );
    for (s, label) in table.solver_labels.iter().enumerate() {
        let at_one = table.omega[(s, 0)];
        let full_at = table
            .taus
            .iter()
            .enumerate()
            .find(|&(k, _)| table.omega[(s, k)] >= 1.0)
            .map(|(_, &tau)| format!("{tau:.3}"))
            .unwrap_or_else(|| "never".to_string());
        println!("  {label:<14} omega(1) = {at_one:.3}, reaches 1 at tau = {full_at}");
    }

    if let Some(path) = out {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        write_profile_csv(&table, &mut w)?;
        w.flush()?;
        println!("profile CSV -> {}", path.display());
    }
    if let Some(path) = svg {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        );
        write_profile_svg(&table, kind.as_str(), &mut w)?;
        w.flush()?;
        println!("profile SVG -> {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
