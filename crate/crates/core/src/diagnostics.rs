//! Per-step monitor rows, end-of-run verdicts, and the pushforward test.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cost::DensityPair;
use crate::domain::DomainSpec;
use crate::dual::{c_transform, inverse_consistency};
use crate::flow::{FlowProblem, FlowState};
use crate::linalg::Vec2;
use crate::scalar::Real;

/// Column names of `monitor.csv`, in order.
pub const MONITOR_COLUMNS: [&str; 16] = [
    "t",
    "dt",
    "max_udot",
    "min_udot",
    "udot_inf",
    "min_eig_w",
    "max_eig_w",
    "boundary_max_hess",
    "obliqueness_margin",
    "max_gbar",
    "det_dt_residual",
    "dual_inverse_error",
    "elliptic_residual",
    "mass_error",
    "mean_u",
    "step",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed report: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorRow {
    pub t: f64,
    pub dt: f64,
    pub max_udot: f64,
    pub min_udot: f64,
    pub udot_inf: f64,
    pub min_eig_w: f64,
    pub max_eig_w: f64,
    pub boundary_max_hess: f64,
    pub obliqueness_margin: f64,
    pub max_gbar: f64,
    pub det_dt_residual: f64,
    pub dual_inverse_error: f64,
    pub elliptic_residual: f64,
    pub mass_error: f64,
    pub mean_u: f64,
    pub step: usize,
}

impl MonitorRow {
    fn values(&self) -> [f64; 15] {
        [
            self.t,
            self.dt,
            self.max_udot,
            self.min_udot,
            self.udot_inf,
            self.min_eig_w,
            self.max_eig_w,
            self.boundary_max_hess,
            self.obliqueness_margin,
            self.max_gbar,
            self.det_dt_residual,
            self.dual_inverse_error,
            self.elliptic_residual,
            self.mass_error,
            self.mean_u,
        ]
    }

    fn from_values(v: &[f64], step: usize) -> Self {
        Self {
            t: v[0],
            dt: v[1],
            max_udot: v[2],
            min_udot: v[3],
            udot_inf: v[4],
            min_eig_w: v[5],
            max_eig_w: v[6],
            boundary_max_hess: v[7],
            obliqueness_margin: v[8],
            max_gbar: v[9],
            det_dt_residual: v[10],
            dual_inverse_error: v[11],
            elliptic_residual: v[12],
            mass_error: v[13],
            mean_u: v[14],
            step,
        }
    }

    /// Evaluates every column at `state`. `target_mass` is `∫g`.
    pub fn compute<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>, target_mass: R) -> Self {
        let grid = &problem.grid;
        let (lo, hi) = state.udot_range();
        let mut eig_lo = R::infinity();
        let mut eig_hi = R::neg_infinity();
        let mut bhess = R::zero();
        for (k, f) in state.fields.iter().enumerate() {
            eig_lo = eig_lo.min(f.eig_min);
            eig_hi = eig_hi.max(f.eig_max);
            if grid.near_boundary[k] {
                bhess = bhess.max(f.hess.max_abs());
            }
        }
        let margin = problem.boundary.obliqueness_margin(
            grid.ghosts
                .iter()
                .zip(&state.boundary)
                .map(|(g, b)| (g.foot, b.p, g.normal)),
        );
        let max_gbar = state
            .boundary
            .iter()
            .fold(R::zero(), |m, b| if b.gbar.is_nan() { R::nan() } else { m.max(b.gbar.abs()) });
        let dual = c_transform(problem, state);
        let dual_err = inverse_consistency(problem, state, &dual).unwrap_or(R::nan());
        Self {
            t: state.t.as_f64(),
            dt: state.dt.as_f64(),
            max_udot: hi.as_f64(),
            min_udot: lo.as_f64(),
            udot_inf: state.udot_inf().as_f64(),
            min_eig_w: eig_lo.as_f64(),
            max_eig_w: eig_hi.as_f64(),
            boundary_max_hess: bhess.as_f64(),
            obliqueness_margin: margin.as_f64(),
            max_gbar: max_gbar.as_f64(),
            det_dt_residual: det_dt_residual(problem, state).as_f64(),
            dual_inverse_error: dual_err.as_f64(),
            elliptic_residual: state.elliptic_residual().as_f64(),
            mass_error: mass_error(problem, state, target_mass).as_f64(),
            mean_u: state.mean_u(grid).as_f64(),
            step: state.steps,
        }
    }
}

/// `max | |det DT| − (f/g∘T) e^{u̇} |`, with `DT` from centered differences of
/// the `T` field, over inside nodes whose axis neighbours are inside.
pub fn det_dt_residual<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>) -> R {
    let grid = &problem.grid;
    let dens = &problem.densities;
    let two_h = R::lit(2.0) * grid.h;
    let tf = |n: usize| match grid.kinds[n] {
        crate::flow::NodeKind::Inside(k) => state.fields[k].t,
        _ => Vec2::new(R::nan(), R::nan()),
    };
    let mut worst = R::zero();
    for (k, &n) in grid.inside.iter().enumerate() {
        if !grid.interior_axis[k] {
            continue;
        }
        let f = &state.fields[k];
        let dx = (tf(n + 1) - tf(n - 1)) * (R::one() / two_h);
        let dy = (tf(n + grid.nx) - tf(n - grid.nx)) * (R::one() / two_h);
        let det_fd = (dx.x * dy.y - dy.x * dx.y).abs();
        let x = grid.position(n);
        let rhs = dens.f(x) / dens.g_ext(f.t) * f.udot.exp();
        worst = worst.max((det_fd - rhs).abs());
    }
    worst
}

/// `|Σ f e^{u̇} w_x − ∫g|` over inside nodes with quadrature weights `w_x`.
pub fn mass_error<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>, target_mass: R) -> R {
    let grid = &problem.grid;
    let mut s = R::zero();
    for (k, &n) in grid.inside.iter().enumerate() {
        s = s + problem.densities.f(grid.position(n)) * state.fields[k].udot.exp() * grid.weights[k];
    }
    (s - target_mass).abs()
}

/// `∫_dom g` by cut-cell quadrature on a lattice of spacing `h`.
pub fn domain_integral<R: Real>(dom: &DomainSpec<R>, g: impl Fn(Vec2<R>) -> R, h: R) -> R {
    let bb = dom.bbox().inflate(h);
    let nx = (bb.width() / h).ceil().to_usize().unwrap_or(0) + 1;
    let ny = (bb.height() / h).ceil().to_usize().unwrap_or(0) + 1;
    let mut s = R::zero();
    for j in 0..ny {
        for i in 0..nx {
            let c = bb.min + Vec2::new(R::lit(i as f64), R::lit(j as f64)) * h;
            let a = dom.cell_area(c, h, crate::flow::QUAD_SUBSAMPLES);
            if a > R::zero() {
                s = s + a * g(c);
            }
        }
    }
    s
}

/// Monitor rows plus the constants the verdicts depend on.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub hx: f64,
    pub steady_tol: f64,
    pub boundary_tol: f64,
    pub rows: Vec<MonitorRow>,
}

impl MonitorReport {
    pub fn new(hx: f64, steady_tol: f64, boundary_tol: f64) -> Self {
        Self {
            hx,
            steady_tol,
            boundary_tol,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut head = String::new();
        let _ = writeln!(head, "# hx={}", self.hx);
        let _ = writeln!(head, "# steady_tol={}", self.steady_tol);
        let _ = writeln!(head, "# boundary_tol={}", self.boundary_tol);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MONITOR_COLUMNS)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.values().iter().map(|v| format!("{v}")).collect();
            rec.push(r.step.to_string());
            w.write_record(&rec)?;
        }
        let body = w.into_inner().map_err(|e| ReportError::Malformed(e.to_string()))?;
        Ok(head + &String::from_utf8_lossy(&body))
    }

    pub fn from_csv(text: &str) -> Result<Self, ReportError> {
        let mut consts = [f64::NAN; 3];
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| ReportError::Malformed(format!("bad header line `{line}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| ReportError::Malformed(format!("bad header value `{line}`")))?;
            match k.trim() {
                "hx" => consts[0] = v,
                "steady_tol" => consts[1] = v,
                "boundary_tol" => consts[2] = v,
                _ => {}
            }
        }
        if consts.iter().any(|c| c.is_nan()) {
            return Err(ReportError::Malformed("missing header constants".into()));
        }
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != MONITOR_COLUMNS {
            return Err(ReportError::Malformed("unexpected column header".into()));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != MONITOR_COLUMNS.len() {
                return Err(ReportError::Malformed(format!("row has {} fields", rec.len())));
            }
            let mut v = [0.0; 15];
            for (k, slot) in v.iter_mut().enumerate() {
                *slot = rec[k]
                    .parse()
                    .map_err(|_| ReportError::Malformed(format!("bad number `{}`", &rec[k])))?;
            }
            let step = rec[15]
                .parse()
                .map_err(|_| ReportError::Malformed(format!("bad step `{}`", &rec[15])))?;
            rows.push(MonitorRow::from_values(&v, step));
        }
        Ok(Self {
            hx: consts[0],
            steady_tol: consts[1],
            boundary_tol: consts[2],
            rows,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// `10·hₓ²`, the slack on inequalities that hold exactly only in the continuum.
    pub fn eps_num(&self) -> f64 {
        10.0 * self.hx * self.hx
    }
}

/// Collects monitor rows at a fixed step cadence.
#[derive(Debug, Clone)]
pub struct Monitor<R> {
    pub report: MonitorReport,
    pub every: usize,
    target_mass: R,
}

impl<R: Real> Monitor<R> {
    pub fn new(problem: &FlowProblem<R>, steady_tol: R, boundary_tol: R, every: usize) -> Self {
        let h = problem.grid.h;
        let dens = problem.densities.clone();
        let target_mass = domain_integral(problem.target(), |y| dens.g(y), h);
        Self {
            report: MonitorReport::new(h.as_f64(), steady_tol.as_f64(), boundary_tol.as_f64()),
            every: every.max(1),
            target_mass,
        }
    }

    /// Records a row when the step count is a multiple of the cadence.
    pub fn observe(&mut self, problem: &FlowProblem<R>, state: &FlowState<R>) {
        if state.steps % self.every == 0 {
            self.push(problem, state);
        }
    }

    /// Records the final state unless it was already recorded.
    pub fn finish(&mut self, problem: &FlowProblem<R>, state: &FlowState<R>) {
        if self.report.rows.last().map(|r| r.step) != Some(state.steps) {
            self.push(problem, state);
        }
    }

    fn push(&mut self, problem: &FlowProblem<R>, state: &FlowState<R>) {
        self.report.rows.push(MonitorRow::compute(problem, state, self.target_mass));
    }
}

/// One line of `verdicts.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub witness: f64,
    pub threshold: f64,
}

impl Verdict {
    fn new(name: &str, pass: bool, witness: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            pass,
            witness,
            threshold,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.name,
            if self.pass { "pass" } else { "fail" },
            self.witness,
            self.threshold
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return None;
        }
        let pass = match f[1] {
            "pass" => true,
            "fail" => false,
            _ => return None,
        };
        Some(Self {
            name: f[0].to_string(),
            pass,
            witness: f[2].parse().ok()?,
            threshold: f[3].parse().ok()?,
        })
    }
}

fn fold_rows(rows: &[MonitorRow], init: f64, f: impl Fn(f64, &MonitorRow) -> f64) -> f64 {
    rows.iter().fold(init, f)
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

fn nan_min(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.min(b)
    }
}

/// Every row's `[min u̇, max u̇]` lies in the initial range widened by `10·hₓ²`.
/// Witness: largest excursion beyond the initial range.
pub fn check_envelope(report: &MonitorReport) -> Verdict {
    let eps = report.eps_num();
    let Some(first) = report.rows.first() else {
        return Verdict::new("udot_envelope", false, f64::NAN, eps);
    };
    let w = fold_rows(&report.rows, 0.0, |m, r| {
        nan_max(m, nan_max(r.max_udot - first.max_udot, first.min_udot - r.min_udot))
    });
    Verdict::new("udot_envelope", w <= eps, w, eps)
}

/// `max eig w ≤ C_fit (1 + boundary max |D²u|)` with `C_fit` twice the ratio at `t = 0`.
pub fn check_c2_coupling(report: &MonitorReport) -> Verdict {
    let Some(first) = report.rows.first() else {
        return Verdict::new("c2_coupling", false, f64::NAN, f64::NAN);
    };
    let ratio = |r: &MonitorRow| r.max_eig_w / (1.0 + r.boundary_max_hess);
    let c_fit = 2.0 * ratio(first);
    let w = fold_rows(&report.rows, f64::NEG_INFINITY, |m, r| nan_max(m, ratio(r)));
    Verdict::new("c2_coupling", w <= c_fit, w, c_fit)
}

pub fn check_positivity(report: &MonitorReport) -> Verdict {
    let w = fold_rows(&report.rows, f64::INFINITY, |m, r| nan_min(m, r.min_eig_w));
    Verdict::new("w_positive", w > 0.0, w, 0.0)
}

pub fn check_obliqueness(report: &MonitorReport) -> Verdict {
    let w = fold_rows(&report.rows, f64::INFINITY, |m, r| nan_min(m, r.obliqueness_margin));
    Verdict::new("obliqueness", w > 0.0, w, 0.0)
}

/// The obliqueness margin never drops below half its initial value.
pub fn check_obliqueness_retention(report: &MonitorReport) -> Verdict {
    let Some(first) = report.rows.first() else {
        return Verdict::new("obliqueness_retention", false, f64::NAN, 0.5);
    };
    let w = fold_rows(&report.rows, f64::INFINITY, |m, r| {
        nan_min(m, r.obliqueness_margin / first.obliqueness_margin)
    });
    Verdict::new("obliqueness_retention", w >= 0.5, w, 0.5)
}

pub fn check_boundary_residual(report: &MonitorReport) -> Verdict {
    let w = fold_rows(&report.rows, 0.0, |m, r| nan_max(m, r.max_gbar));
    Verdict::new("boundary_residual", w <= report.boundary_tol, w, report.boundary_tol)
}

/// Independent-path `det DT` residual within `20·hₓ²` on every row.
pub fn check_det_dt(report: &MonitorReport) -> Verdict {
    let tol = 20.0 * report.hx * report.hx;
    let w = fold_rows(&report.rows, 0.0, |m, r| nan_max(m, r.det_dt_residual));
    Verdict::new("det_dt_identity", w <= tol, w, tol)
}

/// Dual inverse consistency within `10·hₓ²` at the final row.
pub fn check_dual_inverse(report: &MonitorReport) -> Verdict {
    let tol = report.eps_num();
    let w = report.rows.last().map_or(f64::NAN, |r| r.dual_inverse_error);
    Verdict::new("dual_inverse", w <= tol, w, tol)
}

/// Final elliptic residual within `10·τ_steady`.
pub fn check_elliptic_residual(report: &MonitorReport) -> Verdict {
    let tol = 10.0 * report.steady_tol;
    let w = report.rows.last().map_or(f64::NAN, |r| r.elliptic_residual);
    Verdict::new("elliptic_residual", w <= tol, w, tol)
}

/// Rows covering the final `span` steps, if there are at least three of them.
pub fn final_window(report: &MonitorReport, span: usize) -> Option<&[MonitorRow]> {
    let last = report.rows.last()?.step;
    let start = report.rows.iter().position(|r| r.step + span >= last)?;
    let start = if report.rows[start].step + span > last && start > 0 {
        start - 1
    } else {
        start
    };
    let w = &report.rows[start..];
    (w.len() >= 3 && last >= w[0].step + span).then_some(w)
}

/// Least-squares slope of `mean_u` over `t` across the final 100 steps.
pub fn c_infinity(report: &MonitorReport) -> Option<f64> {
    let w = final_window(report, 100)?;
    let hist: Vec<(usize, f64, f64)> = w.iter().map(|r| (r.step, r.t, r.mean_u)).collect();
    crate::flow::estimate_c_infinity(&hist).ok()
}

pub fn check_c_infinity(report: &MonitorReport) -> Verdict {
    let w = c_infinity(report).unwrap_or(f64::NAN);
    Verdict::new("c_infinity", w.abs() <= report.steady_tol, w, report.steady_tol)
}

/// Every verdict that is a function of the monitor report alone.
pub fn report_verdicts(report: &MonitorReport) -> Vec<Verdict> {
    vec![
        check_envelope(report),
        check_c2_coupling(report),
        check_positivity(report),
        check_obliqueness(report),
        check_obliqueness_retention(report),
        check_boundary_residual(report),
        check_det_dt(report),
        check_dual_inverse(report),
        check_elliptic_residual(report),
        check_c_infinity(report),
    ]
}

/// `5·(hₓ + N^{-1/2})`.
pub fn pushforward_threshold(hx: f64, trials: usize) -> f64 {
    5.0 * (hx + 1.0 / (trials as f64).sqrt())
}

/// Random axis-aligned boxes inside `target`: centre uniform in the target,
/// half-widths between 5% and 50% of the inradius, redrawn until all four
/// corners lie inside.
pub fn random_boxes<R: Real>(target: &DomainSpec<R>, trials: usize, rng: &mut impl Rng) -> Vec<(Vec2<R>, Vec2<R>)> {
    let r = target.inradius().as_f64();
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        let c = target.sample_interior(1, rng)[0];
        let hw = Vec2::new(R::lit(rng.gen_range(0.05..0.5) * r), R::lit(rng.gen_range(0.05..0.5) * r));
        let corners = [
            c + hw,
            c - hw,
            c + Vec2::new(hw.x, -hw.y),
            c + Vec2::new(-hw.x, hw.y),
        ];
        if corners.iter().all(|&p| target.contains(p)) {
            out.push((c - hw, c + hw));
        }
    }
    out
}

/// Max over boxes `E` of `|Σ_{T(x) ∈ E} f(x) w_x − ∫_E g|`. `nodes` holds
/// `(x, T(x), w_x)` for each quadrature node.
pub fn pushforward_test<R: Real>(
    nodes: &[(Vec2<R>, Vec2<R>, R)],
    dens: &DensityPair<R>,
    boxes: &[(Vec2<R>, Vec2<R>)],
) -> R {
    let mut worst = R::zero();
    for &(lo, hi) in boxes {
        let inside = |p: Vec2<R>| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
        let mut lhs = R::zero();
        for &(x, t, w) in nodes {
            if inside(t) {
                lhs = lhs + dens.f(x) * w;
            }
        }
        // midpoint rule on a 32 × 32 lattice of the box
        let n = 32;
        let d = (hi - lo) * (R::one() / R::lit(n as f64));
        let mut rhs = R::zero();
        for j in 0..n {
            for i in 0..n {
                let p = lo + Vec2::new(d.x * R::lit(i as f64 + 0.5), d.y * R::lit(j as f64 + 0.5));
                rhs = rhs + dens.g(p);
            }
        }
        rhs = rhs * d.x * d.y;
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// Pushforward nodes `(x, T(x), w_x)` of a state.
pub fn pushforward_nodes<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>) -> Vec<(Vec2<R>, Vec2<R>, R)> {
    let grid = &problem.grid;
    grid.inside
        .iter()
        .enumerate()
        .map(|(k, &n)| (grid.position(n), state.fields[k].t, grid.weights[k]))
        .collect()
}

/// `χ = ⟨β, ν⟩ / (w⁻¹ ν ν)` at ghost `k`, with `β` at the foot and `w` at the
/// inside node nearest the foot.
pub fn chi_factor<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>, k: usize) -> R {
    let g = &problem.grid.ghosts[k];
    let b = &state.boundary[k];
    let nearest = g.stencil[0];
    let w = match problem.grid.kinds[nearest] {
        crate::flow::NodeKind::Inside(i) => state.fields[i].w,
        _ => return R::nan(),
    };
    match problem.boundary.beta_at(g.foot, b.y) {
        Ok(beta) => crate::boundary::chi(beta, g.normal, &w),
        Err(_) => R::nan(),
    }
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn digest_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// `verdicts.txt`: a digest comment followed by one line per verdict.
pub fn format_verdicts(verdicts: &[Verdict], monitor_csv: &str) -> String {
    let mut s = format!("# monitor_sha256={}\n", digest_hex(monitor_csv.as_bytes()));
    for v in verdicts {
        s.push_str(&v.line());
        s.push('\n');
    }
    s
}

/// Parses `verdicts.txt` into its digest and verdicts.
pub fn parse_verdicts(text: &str) -> Result<(String, Vec<Verdict>), ReportError> {
    let mut digest = None;
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some(d) = line.strip_prefix("# monitor_sha256=") {
            digest = Some(d.trim().to_string());
        } else if line.starts_with('#') || line.trim().is_empty() {
            continue;
        } else {
            out.push(Verdict::parse(line).ok_or_else(|| ReportError::Malformed(format!("bad verdict `{line}`")))?);
        }
    }
    let digest = digest.ok_or_else(|| ReportError::Malformed("missing digest".into()))?;
    Ok((digest, out))
}

/// Plot-ready slices of a report: `(file name, csv text)`.
pub fn plot_slices(report: &MonitorReport) -> Vec<(&'static str, String)> {
    let mut env = String::from("t,min_udot,max_udot,udot_inf\n");
    let mut margins = String::from("t,min_eig_w,max_eig_w,obliqueness_margin\n");
    let mut resid = String::from("t,max_gbar,det_dt_residual,dual_inverse_error,elliptic_residual,mass_error\n");
    for r in &report.rows {
        let _ = writeln!(env, "{},{},{},{}", r.t, r.min_udot, r.max_udot, r.udot_inf);
        let _ = writeln!(margins, "{},{},{},{}", r.t, r.min_eig_w, r.max_eig_w, r.obliqueness_margin);
        let _ = writeln!(
            resid,
            "{},{},{},{},{},{}",
            r.t, r.max_gbar, r.det_dt_residual, r.dual_inverse_error, r.elliptic_residual, r.mass_error
        );
    }
    vec![
        ("udot_envelope.csv", env),
        ("margins.csv", margins),
        ("residuals.csv", resid),
    ]
}
