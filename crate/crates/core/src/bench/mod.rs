//! Benchmark harness: systematic solver sweeps over the built-in problems,
//! persisted run records, and performance profiles.
//!
//! A sweep runs every combination of method (LM direction from the max or
//! the FB residual) and reformulation setting over a family of start points,
//! producing one [`RunRecord`] per run. Records serialize to a fixed CSV
//! layout and feed the profile pipeline in [`profile`].

pub mod profile;

pub use profile::{
    build_profile_table, metric_transform, perf_profile, perf_ratios, tau_grid, write_profile_csv,
    write_profile_svg, MetricKind, MetricMatrix, ProfileTable, DEFAULT_OFFSET, TAU_GRID_LEN,
};

use crate::bilevel::{make_example8, make_transportation, BilevelProblem, SettingKind, StationarityPoint};
use crate::mnlcs::MnlcsProblem;
use crate::solver::{solve_global, DirectionKind, LmConfig, LmError, LmResult};
use crate::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{self, BufRead, Write};
use std::sync::Arc;

/// Globalized method selector, named after the residual feeding the LM
/// direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    /// Direction from the max residual ("mixLM").
    Mix,
    /// Direction from the FB residual ("FBLM").
    Fb,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Mix => "mixLM",
            MethodKind::Fb => "FBLM",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "mix" | "mixLM" => Some(MethodKind::Mix),
            "fb" | "FBLM" => Some(MethodKind::Fb),
            _ => None,
        }
    }

    pub fn direction(self) -> DirectionKind {
        match self {
            MethodKind::Mix => DirectionKind::MaxResidual,
            MethodKind::Fb => DirectionKind::FbResidual,
        }
    }
}

/// One solver run on one instance, reduced to the reporting columns.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    /// "mixLM" or "FBLM".
    pub solver: String,
    /// "para", "var1", or "var2".
    pub setting: String,
    /// Start-point index within the experiment.
    pub instance: usize,
    pub iterations: usize,
    pub full_lm_steps: usize,
    /// Wall-clock seconds, rounded to microseconds.
    pub time_sec: f64,
    /// Termination code: 0 iteration cap, 1 small residual, 2 merit
    /// stationarity.
    pub term: u8,
    pub final_psi_fb: f64,
    pub final_grad_norm: f64,
    /// Upper-level objective at the final `(x, y)`.
    pub final_objective: f64,
}

impl RunRecord {
    /// Row label used for grouping in profiles, e.g. "mixLM-para".
    pub fn solver_key(&self) -> String {
        format!("{}-{}", self.solver, self.setting)
    }

    fn sort_rank(&self) -> (usize, usize, usize) {
        let method = match self.solver.as_str() {
            "mixLM" => 0,
            "FBLM" => 1,
            _ => 2,
        };
        let setting = match self.setting.as_str() {
            "para" => 0,
            "var1" => 1,
            "var2" => 2,
            _ => 3,
        };
        (method, setting, self.instance)
    }
}

/// Exact header of the run-record CSV.
pub const RUNS_CSV_HEADER: &str =
    "solver,setting,instance,iterations,full_lm_steps,time_sec,term,final_psi_fb,final_grad_norm,final_objective";

/// Writes records in the fixed CSV layout. Times carry exactly six decimal
/// places; all other floats use the shortest round-tripping form.
pub fn write_runs_csv<W: Write>(records: &[RunRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{RUNS_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{},{},{},{}",
            r.solver,
            r.setting,
            r.instance,
            r.iterations,
            r.full_lm_steps,
            r.time_sec,
            r.term,
            r.final_psi_fb,
            r.final_grad_norm,
            r.final_objective
        )?;
    }
    Ok(())
}

/// Reads records written by [`write_runs_csv`].
pub fn read_runs_csv<R: BufRead>(input: R) -> io::Result<Vec<RunRecord>> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("empty file".to_string()))??;
    if header != RUNS_CSV_HEADER {
        return Err(bad(format!("unexpected header: {header}")));
    }
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(bad(format!("line {}: expected 10 fields", k + 2)));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| bad(format!("line {}: {e}", k + 2)))
        };
        let parse_u = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| bad(format!("line {}: {e}", k + 2)))
        };
        let solver = fields[0].to_string();
        let setting = fields[1].to_string();
        if MethodKind::parse(&solver).is_none() {
            return Err(bad(format!("line {}: unknown solver {solver}", k + 2)));
        }
        if !matches!(setting.as_str(), "para" | "var1" | "var2") {
            return Err(bad(format!("line {}: unknown setting {setting}", k + 2)));
        }
        let term = fields[6]
            .parse::<u8>()
            .map_err(|e| bad(format!("line {}: {e}", k + 2)))?;
        if term > 2 {
            return Err(bad(format!("line {}: term code {term} out of range", k + 2)));
        }
        records.push(RunRecord {
            solver,
            setting,
            instance: parse_u(fields[2])?,
            iterations: parse_u(fields[3])?,
            full_lm_steps: parse_u(fields[4])?,
            time_sec: parse_f(fields[5])?,
            term,
            final_psi_fb: parse_f(fields[7])?,
            final_grad_norm: parse_f(fields[8])?,
            final_objective: parse_f(fields[9])?,
        });
    }
    Ok(records)
}

/// Parameter set used for the small nonconvex sweep.
pub fn experiment1_config(kind: DirectionKind) -> LmConfig<f64> {
    LmConfig {
        kappa: 0.8,
        tau_abs: 1e-6,
        tau_abs_stat: 1e-8,
        sigma: 0.5,
        beta: 0.5,
        gamma1: 0.5,
        gamma2: 0.5,
        rho1: 1e-2,
        rho2: 1e-12,
        rho: 1e-2,
        max_iter: 100_000,
        direction_kind: kind,
    }
}

/// Parameter set used for the transportation sweep.
pub fn experiment2_config(kind: DirectionKind) -> LmConfig<f64> {
    LmConfig {
        kappa: 0.9,
        tau_abs: 1e-4,
        tau_abs_stat: 1e-3,
        sigma: 0.4,
        beta: 0.9,
        gamma1: 1e-4,
        gamma2: 0.05,
        rho1: 1e-4,
        rho2: 1e-4,
        rho: 1e-4,
        max_iter: 10_000,
        direction_kind: kind,
    }
}

/// The six (method, setting) combinations every sweep covers, in report
/// order.
pub fn sweep_combinations(lambda: f64) -> Vec<(MethodKind, SettingKind<f64>)> {
    let settings = [SettingKind::Para(lambda), SettingKind::Var1, SettingKind::Var2];
    let mut combos = Vec::with_capacity(6);
    for method in [MethodKind::Mix, MethodKind::Fb] {
        for setting in settings {
            combos.push((method, setting));
        }
    }
    combos
}

/// Runs one method on one packed start and reduces it to a record.
pub fn run_single(
    bp: &BilevelProblem<f64>,
    prob: &MnlcsProblem<f64>,
    setting: SettingKind<f64>,
    method: MethodKind,
    cfg: &LmConfig<f64>,
    start: &StationarityPoint<f64>,
    instance: usize,
) -> Result<(RunRecord, LmResult<f64>), LmError> {
    let mut cfg = *cfg;
    cfg.direction_kind = method.direction();
    let z0 = setting.pack(bp, start);
    let result = solve_global(prob, &z0, &cfg)?;
    let final_pt = setting.unpack(bp, &result.z_final);
    let mut w = Vector::zeros(bp.dim_w());
    w.rows_mut(0, bp.n()).copy_from(&final_pt.x);
    w.rows_mut(bp.n(), bp.m()).copy_from(&final_pt.y);
    let record = RunRecord {
        solver: method.as_str().to_string(),
        setting: setting.name().to_string(),
        instance,
        iterations: result.iterations,
        full_lm_steps: result.full_lm_steps,
        time_sec: (result.elapsed_seconds * 1e6).round() / 1e6,
        term: result.term.code(),
        final_psi_fb: result.final_psi_fb,
        final_grad_norm: result.final_norm_grad,
        final_objective: bp.upper_obj(&w),
    };
    Ok((record, result))
}

fn ones(len: usize) -> Vector<f64> {
    Vector::from_element(len, 1.0)
}

/// The 11 x 11 start grid of the small sweep: `x` over `0..=10`, `y` over
/// `-5..=5`, `x` varying slowest.
pub fn experiment1_starts() -> Vec<(f64, f64)> {
    let mut starts = Vec::with_capacity(121);
    for x in 0..=10 {
        for y in -5..=5 {
            starts.push((x as f64, y as f64));
        }
    }
    starts
}

fn sweep<F>(
    bp: Arc<BilevelProblem<f64>>,
    combos: &[(MethodKind, SettingKind<f64>)],
    starts: &[StationarityPoint<f64>],
    cfg_of: impl Fn(DirectionKind) -> LmConfig<f64> + Sync,
    inspect: F,
) -> Result<Vec<RunRecord>, LmError>
where
    F: Fn(&RunRecord, &LmResult<f64>) + Send + Sync,
{
    let problems: Vec<(MethodKind, SettingKind<f64>, MnlcsProblem<f64>)> = combos
        .iter()
        .map(|&(method, setting)| (method, setting, setting.build(&bp)))
        .collect();
    let tasks: Vec<(usize, usize)> = (0..problems.len())
        .flat_map(|c| (0..starts.len()).map(move |i| (c, i)))
        .collect();
    let mut records = tasks
        .par_iter()
        .map(|&(c, i)| {
            let (method, setting, ref prob) = problems[c];
            let cfg = cfg_of(method.direction());
            let (record, result) =
                run_single(&bp, prob, setting, method, &cfg, &starts[i], i)?;
            inspect(&record, &result);
            Ok(record)
        })
        .collect::<Result<Vec<RunRecord>, LmError>>()?;
    records.sort_by_key(RunRecord::sort_rank);
    Ok(records)
}

/// Six-method sweep over the small nonconvex problem from the 121-point
/// start grid, all multipliers started at 1 and the weight at 1. Fully
/// deterministic. Records come back sorted by (solver, setting, instance).
pub fn run_experiment1() -> Result<Vec<RunRecord>, LmError> {
    run_experiment1_with(|_, _| {})
}

/// [`run_experiment1`] with a per-run callback that still sees the full
/// solver result (including the trace) before it is dropped; runs execute
/// in a worker pool, so the callback must synchronize its own state.
pub fn run_experiment1_with<F>(inspect: F) -> Result<Vec<RunRecord>, LmError>
where
    F: Fn(&RunRecord, &LmResult<f64>) + Send + Sync,
{
    run_experiment1_configured(|_| {}, inspect)
}

/// [`run_experiment1_with`] with configuration overrides applied on top of
/// the experiment's stock parameters, once per method.
pub fn run_experiment1_configured<C, F>(tweak: C, inspect: F) -> Result<Vec<RunRecord>, LmError>
where
    C: Fn(&mut LmConfig<f64>) + Sync,
    F: Fn(&RunRecord, &LmResult<f64>) + Send + Sync,
{
    let bp = Arc::new(make_example8());
    let starts: Vec<StationarityPoint<f64>> = experiment1_starts()
        .into_iter()
        .map(|(x, y)| {
            StationarityPoint::new(
                Vector::from_element(1, x),
                Vector::from_element(1, y),
                ones(1),
                ones(1),
                ones(1),
                1.0,
            )
            .with_zeta(1.0)
        })
        .collect();
    sweep(
        bp,
        &sweep_combinations(1.0),
        &starts,
        |kind| {
            let mut cfg = experiment1_config(kind);
            tweak(&mut cfg);
            cfg
        },
        inspect,
    )
}

/// Start points of the transportation sweep: supplies uniform on `[1, 10]`,
/// flows uniform on `[0, 10]`, one generator stream per start index.
pub fn experiment2_starts(seed: u64, n_starts: usize) -> Vec<(Vector<f64>, Vector<f64>)> {
    (0..n_starts)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let x = Vector::from_fn(5, |_, _| rng.gen_range(1.0..10.0));
            let y = Vector::from_fn(35, |_, _| rng.gen_range(0.0..10.0));
            (x, y)
        })
        .collect()
}

/// Six-method sweep over a seeded transportation instance with `n_starts`
/// random start points; multipliers start at 1 and the squared-weight
/// variable at 1. Identical seeds give identical records up to timing.
pub fn run_experiment2(seed: u64, n_starts: usize) -> Result<Vec<RunRecord>, LmError> {
    run_experiment2_with(seed, n_starts, |_, _| {})
}

/// [`run_experiment2`] with the same per-run callback hook as
/// [`run_experiment1_with`].
pub fn run_experiment2_with<F>(
    seed: u64,
    n_starts: usize,
    inspect: F,
) -> Result<Vec<RunRecord>, LmError>
where
    F: Fn(&RunRecord, &LmResult<f64>) + Send + Sync,
{
    run_experiment2_configured(seed, n_starts, |_| {}, inspect)
}

/// [`run_experiment2_with`] with configuration overrides applied on top of
/// the experiment's stock parameters, once per method.
pub fn run_experiment2_configured<C, F>(
    seed: u64,
    n_starts: usize,
    tweak: C,
    inspect: F,
) -> Result<Vec<RunRecord>, LmError>
where
    C: Fn(&mut LmConfig<f64>) + Sync,
    F: Fn(&RunRecord, &LmResult<f64>) + Send + Sync,
{
    assert!(n_starts >= 1, "need at least one start point");
    let bp = Arc::new(make_transportation(seed));
    let starts: Vec<StationarityPoint<f64>> = experiment2_starts(seed, n_starts)
        .into_iter()
        .map(|(x, y)| {
            StationarityPoint::new(x, y, ones(bp.s()), ones(bp.t()), ones(bp.t()), 1.0)
                .with_zeta(1.0)
        })
        .collect();
    sweep(
        bp,
        &sweep_combinations(1.0),
        &starts,
        |kind| {
            let mut cfg = experiment2_config(kind);
            tweak(&mut cfg);
            cfg
        },
        inspect,
    )
}

/// Reference objective values for profile shifting, where one exists
/// independently of generated data.
pub fn best_known_objective(problem: &str) -> Option<f64> {
    match problem {
        // Upper objective at the known global minimizer (9, 3).
        "example8" => Some(37.0),
        _ => None,
    }
}

/// Empirical quantiles of the final upper objective across records; `qs`
/// entries must lie in `[0, 1]`. Linear interpolation between order
/// statistics.
pub fn objective_quantiles(records: &[RunRecord], qs: &[f64]) -> Vec<f64> {
    assert!(!records.is_empty(), "no records");
    let mut values: Vec<f64> = records.iter().map(|r| r.final_objective).collect();
    values.sort_by(|a, b| a.partial_cmp(b).expect("objectives are finite"));
    qs.iter()
        .map(|&q| {
            assert!((0.0..=1.0).contains(&q), "quantile out of range");
            let pos = q * (values.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            values[lo] * (1.0 - frac) + values[hi] * frac
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::TermCode;
    use std::io::BufReader;
    use std::sync::Mutex;

    #[test]
    fn csv_round_trip_is_field_exact() {
        let records = vec![
            RunRecord {
                solver: "mixLM".into(),
                setting: "para".into(),
                instance: 0,
                iterations: 12,
                full_lm_steps: 11,
                time_sec: 0.001234,
                term: 1,
                final_psi_fb: 3.2121592261202672e-14,
                final_grad_norm: 1.6e-7,
                final_objective: 37.00000000012,
            },
            RunRecord {
                solver: "FBLM".into(),
                setting: "var2".into(),
                instance: 120,
                iterations: 100_000,
                full_lm_steps: 0,
                time_sec: 12.5,
                term: 0,
                final_psi_fb: 0.5,
                final_grad_norm: 2.25,
                final_objective: -1.75,
            },
        ];
        let mut buf = Vec::new();
        write_runs_csv(&records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(RUNS_CSV_HEADER));
        let back = read_runs_csv(BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn csv_rejects_malformed_input() {
        let missing_header = "a,b,c\n";
        assert!(read_runs_csv(BufReader::new(missing_header.as_bytes())).is_err());
        let bad_term = format!("{RUNS_CSV_HEADER}\nmixLM,para,0,1,1,0.000001,7,0,0,0\n");
        assert!(read_runs_csv(BufReader::new(bad_term.as_bytes())).is_err());
        let bad_solver = format!("{RUNS_CSV_HEADER}\nnope,para,0,1,1,0.000001,1,0,0,0\n");
        assert!(read_runs_csv(BufReader::new(bad_solver.as_bytes())).is_err());
    }

    #[test]
    fn experiment1_grid_shape() {
        let starts = experiment1_starts();
        assert_eq!(starts.len(), 121);
        assert_eq!(starts[0], (0.0, -5.0));
        assert_eq!(starts[120], (10.0, 5.0));
        let xs: std::collections::BTreeSet<i64> =
            starts.iter().map(|&(x, _)| x as i64).collect();
        assert_eq!(xs.len(), 11);
    }

    #[test]
    fn experiment2_starts_respect_ranges_and_seed() {
        let a = experiment2_starts(9, 8);
        let b = experiment2_starts(9, 8);
        assert_eq!(a.len(), 8);
        for ((xa, ya), (xb, yb)) in a.iter().zip(&b) {
            assert_eq!(xa, xb);
            assert_eq!(ya, yb);
            assert!(xa.iter().all(|&v| (1.0..10.0).contains(&v)));
            assert!(ya.iter().all(|&v| (0.0..10.0).contains(&v)));
        }
        let c = experiment2_starts(10, 8);
        assert_ne!(a[0].0, c[0].0);
        // Stream splitting: prefixes agree regardless of the total count.
        let prefix = experiment2_starts(9, 3);
        assert_eq!(a[2].0, prefix[2].0);
    }

    #[test]
    fn single_run_produces_sound_record() {
        let bp = Arc::new(make_example8());
        let setting = SettingKind::Para(1.0);
        let prob = setting.build(&bp);
        let cfg = experiment1_config(DirectionKind::MaxResidual);
        let start = StationarityPoint::new(
            Vector::from_element(1, 9.0),
            Vector::from_element(1, 3.0),
            ones(1),
            ones(1),
            ones(1),
            1.0,
        );
        let (record, result) =
            run_single(&bp, &prob, setting, MethodKind::Mix, &cfg, &start, 4).unwrap();
        // The multiplier guess (1,1,1) is not a root, so the run iterates.
        assert!(record.iterations > 0);
        assert_eq!(record.term, TermCode::SmallResidual.code());
        assert_eq!(record.instance, 4);
        assert_eq!(record.solver, "mixLM");
        assert_eq!(record.setting, "para");
        assert_eq!(record.iterations, result.iterations);
        assert!((record.final_objective - 37.0).abs() < 1e-3);
    }

    #[test]
    fn truncated_transport_rerun_is_deterministic_mod_time() {
        let bp = Arc::new(make_transportation(3));
        let setting = SettingKind::Para(1.0);
        let prob = setting.build(&bp);
        let mut cfg = experiment2_config(DirectionKind::FbResidual);
        cfg.max_iter = 200;
        let (x, y) = experiment2_starts(3, 1).pop().unwrap();
        let start = StationarityPoint::new(x, y, ones(bp.s()), ones(bp.t()), ones(bp.t()), 1.0);
        let run = || {
            run_single(&bp, &prob, setting, MethodKind::Fb, &cfg, &start, 0)
                .unwrap()
                .0
        };
        let (mut a, mut b) = (run(), run());
        a.time_sec = 0.0;
        b.time_sec = 0.0;
        assert_eq!(a, b);
        assert!(a.term <= 2);
        assert!(a.final_psi_fb.is_finite());
    }

    #[test]
    fn sweep_callback_sees_every_run() {
        let bp = Arc::new(make_example8());
        let starts: Vec<StationarityPoint<f64>> = [(1.0, 0.0), (5.0, 2.0)]
            .into_iter()
            .map(|(x, y)| {
                StationarityPoint::new(
                    Vector::from_element(1, x),
                    Vector::from_element(1, y),
                    ones(1),
                    ones(1),
                    ones(1),
                    1.0,
                )
                .with_zeta(1.0)
            })
            .collect();
        let seen = Mutex::new(0usize);
        let records = sweep(
            bp,
            &sweep_combinations(1.0),
            &starts,
            |kind| {
                let mut cfg = experiment1_config(kind);
                cfg.max_iter = 500;
                cfg
            },
            |record, result| {
                assert_eq!(record.iterations, result.trace.len());
                *seen.lock().unwrap() += 1;
            },
        )
        .unwrap();
        assert_eq!(records.len(), 12);
        assert_eq!(*seen.lock().unwrap(), 12);
        // Sorted output: mixLM block first, settings in declaration order,
        // instances ascending within each block.
        let keys: Vec<(String, usize)> = records
            .iter()
            .map(|r| (r.solver_key(), r.instance))
            .collect();
        let expected: Vec<(String, usize)> = [
            "mixLM-para",
            "mixLM-var1",
            "mixLM-var2",
            "FBLM-para",
            "FBLM-var1",
            "FBLM-var2",
        ]
        .iter()
        .flat_map(|&key| [(key.to_string(), 0), (key.to_string(), 1)])
        .collect();
        assert_eq!(keys, expected);
    }

    #[test]
    fn quantiles_interpolate_order_statistics() {
        let mut records: Vec<RunRecord> = (0..5)
            .map(|i| RunRecord {
                solver: "mixLM".into(),
                setting: "para".into(),
                instance: i,
                iterations: 1,
                full_lm_steps: 1,
                time_sec: 0.000001,
                term: 1,
                final_psi_fb: 0.0,
                final_grad_norm: 0.0,
                final_objective: i as f64,
            })
            .collect();
        records.swap(0, 3);
        let qs = objective_quantiles(&records, &[0.0, 0.5, 1.0, 0.25]);
        assert_eq!(qs, vec![0.0, 2.0, 4.0, 1.0]);
    }

    #[test]
    fn best_known_registry() {
        assert_eq!(best_known_objective("example8"), Some(37.0));
        assert_eq!(best_known_objective("transport"), None);
    }
}
