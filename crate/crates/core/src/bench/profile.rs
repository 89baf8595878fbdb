//! Performance profiles over run records.
//!
//! For a metric matrix `t` with one row per solver and one column per
//! instance, the performance ratio is `r = t / column-minimum` and the
//! profile of solver `s` is the empirical distribution
//! `omega_s(tau) = |{i : r_{s,i} <= tau}| / instances`. Objective values and
//! full-step fractions are not positive metrics by themselves, so
//! [`metric_transform`] shifts them by a best-known value resp. reflects
//! them around 1, both with a small positive offset.

use super::RunRecord;
use crate::Matrix;
use std::collections::BTreeSet;
use std::io::{self, Write};

/// Number of evaluation points in [`tau_grid`].
pub const TAU_GRID_LEN: usize = 512;
/// Default positive offset for the objective and full-step transforms.
pub const DEFAULT_OFFSET: f64 = 1e-6;

/// Which scalar a run contributes to the metric matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Iterations,
    Time,
    /// `final_objective - best_known + offset`.
    Objective,
    /// `1 - full_lm_steps / iterations + offset`; an instantly converged
    /// run counts as all-full-steps.
    FullLmFraction,
}

impl MetricKind {
    /// Parses the command-line spelling.
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "iters" => Some(MetricKind::Iterations),
            "time" => Some(MetricKind::Time),
            "objective" => Some(MetricKind::Objective),
            "fullsteps" => Some(MetricKind::FullLmFraction),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Iterations => "iters",
            MetricKind::Time => "time",
            MetricKind::Objective => "objective",
            MetricKind::FullLmFraction => "fullsteps",
        }
    }
}

/// Metric values laid out solvers x instances, with the labels that index
/// the rows and columns.
#[derive(Clone, Debug)]
pub struct MetricMatrix {
    pub solver_labels: Vec<String>,
    pub instances: Vec<usize>,
    pub values: Matrix<f64>,
}

/// Ratios, evaluation grid, and profile values for one metric.
#[derive(Clone, Debug)]
pub struct ProfileTable {
    pub solver_labels: Vec<String>,
    pub instances: Vec<usize>,
    /// Raw metric values t_{s,i}.
    pub metrics: Matrix<f64>,
    /// Performance ratios r_{s,i} >= 1.
    pub ratios: Matrix<f64>,
    /// Sorted evaluation grid, starting at 1.
    pub taus: Vec<f64>,
    /// omega_s(tau): rows match `solver_labels`, columns match `taus`.
    pub omega: Matrix<f64>,
}

/// Extracts the metric matrix from run records.
///
/// Rows are the distinct `solver-setting` pairs in sorted order, columns the
/// distinct instance ids; the records must fill that grid exactly once per
/// cell. `best_known` is only used by the objective transform, `offset` by
/// the two transformed metrics (and must then be positive).
pub fn metric_transform(
    records: &[RunRecord],
    kind: MetricKind,
    best_known: f64,
    offset: f64,
) -> MetricMatrix {
    assert!(!records.is_empty(), "no records to profile");
    if matches!(kind, MetricKind::Objective | MetricKind::FullLmFraction) {
        assert!(offset > 0.0, "transformed metrics need a positive offset");
    }
    let solver_labels: Vec<String> = records
        .iter()
        .map(RunRecord::solver_key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let instances: Vec<usize> = records
        .iter()
        .map(|r| r.instance)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let row_of = |r: &RunRecord| {
        solver_labels
            .binary_search(&r.solver_key())
            .expect("label set built from records")
    };
    let col_of = |r: &RunRecord| {
        instances
            .binary_search(&r.instance)
            .expect("instance set built from records")
    };

    let mut values = Matrix::from_element(solver_labels.len(), instances.len(), f64::NAN);
    for r in records {
        let (i, j) = (row_of(r), col_of(r));
        assert!(
            values[(i, j)].is_nan(),
            "duplicate record for solver {} instance {}",
            r.solver_key(),
            r.instance
        );
        values[(i, j)] = match kind {
            MetricKind::Iterations => r.iterations as f64,
            MetricKind::Time => r.time_sec,
            MetricKind::Objective => (r.final_objective - best_known) + offset,
            MetricKind::FullLmFraction => {
                if r.iterations == 0 {
                    offset
                } else {
                    1.0 - r.full_lm_steps as f64 / r.iterations as f64 + offset
                }
            }
        };
    }
    assert!(
        values.iter().all(|v| !v.is_nan()),
        "records do not fill the solver x instance grid"
    );
    MetricMatrix {
        solver_labels,
        instances,
        values,
    }
}

/// Performance ratios: every entry divided by its column minimum.
///
/// Panics if any metric is not strictly positive; the transforms in
/// [`metric_transform`] exist to guarantee that.
pub fn perf_ratios(t: &Matrix<f64>) -> Matrix<f64> {
    assert!(
        t.iter().all(|&v| v > 0.0 && v.is_finite()),
        "performance metrics must be positive and finite"
    );
    let mut r = t.clone();
    for j in 0..t.ncols() {
        let min = t.column(j).min();
        for i in 0..t.nrows() {
            r[(i, j)] = t[(i, j)] / min;
        }
    }
    r
}

/// Log-spaced evaluation grid on `[1, max_ratio]` with [`TAU_GRID_LEN`]
/// points. Degenerates to the constant grid 1 when every ratio is 1.
pub fn tau_grid(max_ratio: f64) -> Vec<f64> {
    assert!(max_ratio >= 1.0, "ratios are bounded below by 1");
    if max_ratio <= 1.0 {
        return vec![1.0; TAU_GRID_LEN];
    }
    let top = max_ratio.ln();
    let mut grid: Vec<f64> = (0..TAU_GRID_LEN)
        .map(|j| (top * j as f64 / (TAU_GRID_LEN - 1) as f64).exp())
        .collect();
    // exp(ln(x)) can land an ulp short of x, which would leave the worst
    // ratio uncounted at the end of the grid; pin the endpoint.
    grid[TAU_GRID_LEN - 1] = max_ratio;
    grid
}

/// Evaluates the profiles `omega_s` on the grid. `taus` must be sorted and
/// start at or above 1.
pub fn perf_profile(r: &Matrix<f64>, taus: &[f64]) -> Matrix<f64> {
    assert!(!taus.is_empty(), "empty evaluation grid");
    assert!(taus[0] >= 1.0, "tau grid must start at 1 or above");
    assert!(
        taus.windows(2).all(|w| w[0] <= w[1]),
        "tau grid must be sorted"
    );
    let instances = r.ncols() as f64;
    let mut omega = Matrix::zeros(r.nrows(), taus.len());
    for s in 0..r.nrows() {
        // Sorting the row turns each omega_s(tau) into a binary search.
        let mut row: Vec<f64> = r.row(s).iter().copied().collect();
        row.sort_by(|a, b| a.partial_cmp(b).expect("ratios are finite"));
        for (k, &tau) in taus.iter().enumerate() {
            let count = row.partition_point(|&v| v <= tau);
            omega[(s, k)] = count as f64 / instances;
        }
    }
    omega
}

/// Full pipeline from records to a profile table.
///
/// `best_known` defaults to the smallest final objective in the records,
/// which keeps the objective transform positive by construction.
pub fn build_profile_table(
    records: &[RunRecord],
    kind: MetricKind,
    best_known: Option<f64>,
    offset: f64,
) -> ProfileTable {
    let best = best_known.unwrap_or_else(|| {
        records
            .iter()
            .map(|r| r.final_objective)
            .fold(f64::INFINITY, f64::min)
    });
    let mm = metric_transform(records, kind, best, offset);
    let ratios = perf_ratios(&mm.values);
    let taus = tau_grid(ratios.max());
    let omega = perf_profile(&ratios, &taus);
    ProfileTable {
        solver_labels: mm.solver_labels,
        instances: mm.instances,
        metrics: mm.values,
        ratios,
        taus,
        omega,
    }
}

/// Writes the profile as CSV: one `tau` column and one column per solver.
pub fn write_profile_csv<W: Write>(table: &ProfileTable, mut out: W) -> io::Result<()> {
    write!(out, "tau")?;
    for label in &table.solver_labels {
        write!(out, ",{label}")?;
    }
    writeln!(out)?;
    for (k, tau) in table.taus.iter().enumerate() {
        write!(out, "{tau}")?;
        for s in 0..table.solver_labels.len() {
            write!(out, ",{}", table.omega[(s, k)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

const SVG_COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Renders the profile as a self-contained SVG step plot with a log-scaled
/// ratio axis.
pub fn write_profile_svg<W: Write>(
    table: &ProfileTable,
    metric_label: &str,
    mut out: W,
) -> io::Result<()> {
    let (width, height) = (800.0, 500.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let tau_max = *table.taus.last().expect("nonempty grid");
    let log_span = tau_max.ln().max(f64::MIN_POSITIVE);
    let x = |tau: f64| -> f64 {
        if tau_max <= 1.0 {
            left
        } else {
            left + plot_w * tau.ln() / log_span
        }
    };
    let y = |omega: f64| -> f64 { top + plot_h * (1.0 - omega) };

    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="13">"#
    )?;
    writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )?;
    writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">Performance profile ({metric_label})</text>"#,
        left + plot_w / 2.0
    )?;

    // Frame and horizontal grid.
    writeln!(
        out,
        r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    )?;
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let yy = y(v);
        if k > 0 && k < 4 {
            writeln!(
                out,
                r##"<line x1="{left}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/>"##,
                left + plot_w
            )?;
        }
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#,
            left - 8.0,
            yy + 4.0
        )?;
    }
    // Ratio ticks at powers of two.
    let mut tick = 1.0f64;
    while tick <= tau_max {
        let xx = x(tick);
        writeln!(
            out,
            r##"<line x1="{xx:.1}" y1="{:.1}" x2="{xx:.1}" y2="{:.1}" stroke="#444"/>"##,
            top + plot_h,
            top + plot_h + 5.0
        )?;
        writeln!(
            out,
            r#"<text x="{xx:.1}" y="{:.1}" text-anchor="middle">{tick}</text>"#,
            top + plot_h + 20.0
        )?;
        tick *= 2.0;
    }
    writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">performance ratio</text>"#,
        left + plot_w / 2.0,
        height - 12.0
    )?;

    // One step curve per solver.
    for (s, label) in table.solver_labels.iter().enumerate() {
        let color = SVG_COLORS[s % SVG_COLORS.len()];
        let mut path = String::new();
        for (k, &tau) in table.taus.iter().enumerate() {
            let (px, py) = (x(tau), y(table.omega[(s, k)]));
            if k == 0 {
                path.push_str(&format!("M {px:.2} {py:.2}"));
            } else {
                // Horizontal-then-vertical segments make the steps explicit.
                path.push_str(&format!(" L {px:.2} {:.2} L {px:.2} {py:.2}", y(table.omega[(s, k - 1)])));
            }
        }
        writeln!(
            out,
            r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.8"/>"#
        )?;
        let ly = top + 16.0 + 18.0 * s as f64;
        writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/>"#,
            left + 10.0,
            left + 34.0
        )?;
        writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" dominant-baseline="middle">{label}</text>"#,
            left + 40.0
        )?;
    }
    writeln!(out, "</svg>")?;
    Ok(())
}
