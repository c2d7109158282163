//! Scenario configuration and the `verify` / `run` / `report` commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryBudget, BoundaryOperator};
use crate::cost::{
    audit_mtw, audit_nondegeneracy, derivative_selfcheck, CostModel, DensityPair, SampledMin, SelfCheckReport,
};
use crate::diagnostics::{
    domain_integral, format_verdicts, parse_verdicts, plot_slices, pushforward_test, pushforward_threshold,
    random_boxes, report_verdicts, Monitor, MonitorReport, Verdict,
};
use crate::domain::{audit_uniform_c_convexity, audit_uniform_cstar_convexity, DomainError, DomainSpec};
use crate::flow::{
    format_dump, initialize_u0, read_dump, run, FlowError, FlowProblem, FlowState, Initializer, NodeKind, RunOutcome,
    SolverConfig,
};
use crate::linalg::{Mat2, Vec2};

/// Process exit codes of the three commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    AuditFail = 1,
    NoConvergence = 2,
    InadmissibleInitial = 3,
    VerdictMismatch = 4,
    Io = 5,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Parse(String),
    #[error("unknown {kind} `{name}`")]
    Registry { kind: &'static str, name: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl ScenarioError {
    fn exit(&self) -> ExitCode {
        match self {
            Self::Domain(_) => ExitCode::AuditFail,
            _ => ExitCode::Io,
        }
    }
}

/// A registry name plus its numeric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Named {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitializerConfig {
    /// `T₀ x = S x + b`; `s` is row-major.
    Affine { s: [f64; 4], b: [f64; 2] },
    /// `u₀ ≡ 0`.
    Zero,
    Perturbed { amplitude: f64, base: Box<InitializerConfig> },
}

impl InitializerConfig {
    pub fn build(&self) -> Initializer<f64> {
        match self {
            Self::Affine { s, b } => Initializer::Affine {
                s: Mat2::new(s[0], s[1], s[2], s[3]),
                b: Vec2::new(b[0], b[1]),
            },
            Self::Zero => Initializer::Analytic(std::sync::Arc::new(|_| 0.0)),
            Self::Perturbed { amplitude, base } => Initializer::Perturbed {
                base: Box::new(base.build()),
                amplitude: *amplitude,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub cfl: f64,
    pub steady_tol: f64,
    pub boundary_tol: f64,
    pub max_steps: usize,
    pub min_steps: usize,
    pub monitor_every: usize,
    pub max_halvings: u32,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::<f64>::default();
        Self {
            cfl: d.cfl,
            steady_tol: d.steady_tol,
            boundary_tol: d.boundary_tol,
            max_steps: d.max_steps,
            min_steps: d.min_steps,
            monitor_every: d.monitor_every,
            max_halvings: d.max_halvings,
        }
    }
}

impl SolverSection {
    pub fn config(&self) -> SolverConfig<f64> {
        SolverConfig {
            cfl: self.cfl,
            steady_tol: self.steady_tol,
            boundary_tol: self.boundary_tol,
            max_steps: self.max_steps,
            min_steps: self.min_steps,
            monitor_every: self.monitor_every,
            max_halvings: self.max_halvings,
        }
    }
}

/// Sample counts for the structural audits and the pushforward test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub selfcheck_trials: usize,
    pub pair_samples: usize,
    pub mtw_samples: usize,
    pub convexity_samples: usize,
    pub g_trials: usize,
    pub pushforward_boxes: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            selfcheck_trials: 200,
            pair_samples: 1000,
            mtw_samples: 10_000,
            convexity_samples: 256,
            g_trials: 2000,
            pushforward_boxes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub resolution: usize,
    /// Grid dump cadence in steps; zero writes only the final state.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub cost: Named,
    pub source: Named,
    pub target: Named,
    pub densities: Named,
    pub initializer: InitializerConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub audit: AuditSection,
}

pub const MIN_RESOLUTION: usize = 32;
pub const DENSITY_KINDS: [&str; 1] = ["uniform"];

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if cfg.resolution < MIN_RESOLUTION {
            return Err(ScenarioError::Parse(format!(
                "resolution {} is below {MIN_RESOLUTION}",
                cfg.resolution
            )));
        }
        cfg.solver.config().validate().map_err(ScenarioError::Parse)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

/// Resolved registry entries of a config.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub cost: CostModel<f64>,
    pub densities: DensityPair<f64>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        let cost = CostModel::by_name(&config.cost.name, &config.cost.params).ok_or_else(|| ScenarioError::Registry {
            kind: "cost",
            name: config.cost.name.clone(),
        })?;
        let source = DomainSpec::make(&config.source.name, &config.source.params)?;
        let target = DomainSpec::make(&config.target.name, &config.target.params)?;
        let d = &config.densities;
        let densities = match (d.name.as_str(), d.params.as_slice()) {
            ("uniform", []) => DensityPair::uniform(source, target, 1.0, 1.0),
            ("uniform", [ms, mt]) if *ms > 0.0 && *mt > 0.0 => DensityPair::uniform(source, target, *ms, *mt),
            _ => {
                return Err(ScenarioError::Registry {
                    kind: "densities",
                    name: format!("{}{:?}", d.name, d.params),
                })
            }
        };
        Ok(Self {
            config,
            cost,
            densities,
        })
    }

    pub fn source(&self) -> &DomainSpec<f64> {
        self.densities.source()
    }

    pub fn target(&self) -> &DomainSpec<f64> {
        self.densities.target()
    }

    /// Lattice spacing of the flow grid.
    pub fn grid_spacing(&self) -> f64 {
        let b = self.source().bbox();
        b.width().max(b.height()) / self.config.resolution as f64
    }
}

/// One structural audit result.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    /// `(x, y)` pair attaining a sampled minimum.
    pub at: Option<[f64; 4]>,
}

impl AuditRow {
    fn located(mut self, m: &SampledMin<f64>) -> Self {
        self.at = Some([m.x.x, m.x.y, m.y.x, m.y.y]);
        self
    }

    fn at_most(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            threshold,
            pass: value <= threshold,
            at: None,
        }
    }

    fn above(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            threshold,
            pass: value > threshold,
            at: None,
        }
    }

    fn at_least(name: &'static str, value: f64, threshold: f64) -> Self {
        Self {
            name,
            value,
            threshold,
            pass: value >= threshold,
            at: None,
        }
    }
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut s = String::from("name,value,threshold,pass,x0,x1,y0,y1\n");
    for r in rows {
        let at = r.at.map_or(",,,".to_string(), |a| format!("{},{},{},{}", a[0], a[1], a[2], a[3]));
        s.push_str(&format!("{},{},{},{},{at}\n", r.name, r.value, r.threshold, r.pass));
    }
    s
}

/// Largest `(A1)` round-trip error over random pairs.
pub fn round_trip_error(
    cost: &CostModel<f64>,
    source: &DomainSpec<f64>,
    target: &DomainSpec<f64>,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let xs = source.sample_closure(samples, rng);
    let ys = target.sample_closure(samples, rng);
    let mut worst = 0.0f64;
    for (&x, &y) in xs.iter().zip(&ys) {
        let ey = cost
            .y_from_p(x, cost.grad_x(x, y))
            .map_or(f64::INFINITY, |yy| (yy - y).norm_inf());
        let ex = cost
            .x_from_q(cost.grad_y(x, y), y)
            .map_or(f64::INFINITY, |xx| (xx - x).norm_inf());
        worst = worst.max(ey).max(ex);
    }
    worst
}

pub const ROUND_TRIP_TOL: f64 = 1e-10;
pub const NONDEGENERACY_TOL: f64 = 1e-8;
pub const MTW_TOL: f64 = -1e-5;
/// Relative mass-balance tolerance.
pub const MASS_BALANCE_TOL: f64 = 1e-3;

/// Runs every structural audit; returns the rows and, when it could be
/// built, the certified boundary operator.
pub fn structural_audits(s: &Scenario) -> (Vec<AuditRow>, Option<BoundaryOperator<f64>>) {
    let a = &s.config.audit;
    let (cost, src, tgt) = (&s.cost, s.source(), s.target());
    let mut rows = Vec::new();

    let sc = derivative_selfcheck(cost, a.selfcheck_trials, &mut s.config.rng(1));
    rows.push(AuditRow::at_most("derivative_selfcheck", sc.max_rel_error, SelfCheckReport::THRESHOLD));
    let rt = round_trip_error(cost, src, tgt, a.pair_samples, &mut s.config.rng(2));
    rows.push(AuditRow::at_most("a1_round_trip", rt, ROUND_TRIP_TOL));
    let nd = audit_nondegeneracy(cost, src, tgt, a.pair_samples, &mut s.config.rng(3));
    rows.push(AuditRow::above("a2_nondegeneracy", nd.value, NONDEGENERACY_TOL).located(&nd));
    let sampled = |name, r: Result<SampledMin<f64>, _>, at_least: bool| match r {
        Ok(m) if at_least => AuditRow::at_least(name, m.value, MTW_TOL).located(&m),
        Ok(m) => AuditRow::above(name, m.value, 0.0).located(&m),
        Err(_) => AuditRow::above(name, f64::NAN, 0.0),
    };
    rows.push(sampled("a3w_mtw", audit_mtw(cost, src, tgt, a.mtw_samples, &mut s.config.rng(4)), true));
    rows.push(sampled(
        "source_c_convexity",
        audit_uniform_c_convexity(src, tgt, cost, a.convexity_samples),
        false,
    ));
    rows.push(sampled(
        "target_cstar_convexity",
        audit_uniform_cstar_convexity(tgt, src, cost, a.convexity_samples),
        false,
    ));

    let h = s.grid_spacing();
    let mf = domain_integral(src, |x| s.densities.f(x), h);
    let mg = domain_integral(tgt, |y| s.densities.g(y), h);
    rows.push(AuditRow::at_most("mass_balance", (mf - mg).abs() / mf.max(mg), MASS_BALANCE_TOL));
    rows.push(AuditRow::above("density_lower_bound", s.densities.lambda, 0.0));

    let op = match BoundaryOperator::build(cost, src, tgt, BoundaryBudget::default()) {
        Ok(op) => {
            rows.push(AuditRow::above("g_delta2_certified", op.delta2, 0.0));
            rows.push(match op.audit_g_convexity(a.g_trials, &mut s.config.rng(5)) {
                Ok(m) => AuditRow::at_least("g_convexity_sampled", m.value, 0.0).located(&m),
                Err(_) => AuditRow::at_least("g_convexity_sampled", f64::NAN, 0.0),
            });
            Some(op)
        }
        Err(_) => {
            rows.push(AuditRow::above("g_delta2_certified", f64::NAN, 0.0));
            None
        }
    };
    (rows, op)
}

/// Pushforward nodes rebuilt from a final-state dump: `(x, T(x), w_x)` in
/// dump order, with quadrature weights from a fresh grid.
pub fn dump_nodes(s: &Scenario, dump: &str) -> Result<Vec<(Vec2<f64>, Vec2<f64>, f64)>, String> {
    let grid = crate::flow::Grid::new(s.source(), s.config.resolution).map_err(|e| e.to_string())?;
    let (_, rows) = read_dump(dump)?;
    rows.iter()
        .map(|r| match grid.kinds.get(grid.index(r.i, r.j)) {
            Some(NodeKind::Inside(k)) => Ok((Vec2::new(r.x[0], r.x[1]), Vec2::new(r.t[0], r.t[1]), grid.weights[*k])),
            _ => Err(format!("dump node ({}, {}) is not an inside node", r.i, r.j)),
        })
        .collect()
}

pub fn pushforward_verdict(s: &Scenario, nodes: &[(Vec2<f64>, Vec2<f64>, f64)]) -> Verdict {
    let n = s.config.audit.pushforward_boxes;
    let boxes = random_boxes(s.target(), n, &mut s.config.rng(6));
    let w = pushforward_test(nodes, &s.densities, &boxes);
    let tol = pushforward_threshold(s.grid_spacing(), n);
    Verdict {
        name: "pushforward".into(),
        pass: w <= tol,
        witness: w,
        threshold: tol,
    }
}

/// Every verdict of a finished run: the report verdicts plus the pushforward test.
pub fn all_verdicts(s: &Scenario, report: &MonitorReport, dump: &str) -> Vec<Verdict> {
    let mut v = report_verdicts(report);
    v.push(match dump_nodes(s, dump) {
        Ok(nodes) => pushforward_verdict(s, &nodes),
        Err(_) => Verdict {
            name: "pushforward".into(),
            pass: false,
            witness: f64::NAN,
            threshold: pushforward_threshold(s.grid_spacing(), s.config.audit.pushforward_boxes),
        },
    });
    v
}

fn load_scenario(path: &Path, log: &mut dyn Write) -> Result<Scenario, ExitCode> {
    let cfg = ScenarioConfig::load(path).map_err(|e| {
        let _ = writeln!(log, "error: {e}");
        e.exit()
    })?;
    Scenario::new(cfg).map_err(|e| {
        let _ = writeln!(log, "error: {e}");
        e.exit()
    })
}

fn print_audits(rows: &[AuditRow], log: &mut dyn Write) {
    for r in rows {
        let _ = writeln!(
            log,
            "{:<24} {:>12.4e}  threshold {:>10.3e}  {}",
            r.name,
            r.value,
            r.threshold,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
}

/// Structural gate. Writes `audit.csv` into `out` when given.
pub fn cmd_verify(config: &Path, out: Option<&Path>, log: &mut dyn Write) -> ExitCode {
    let s = match load_scenario(config, log) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let (rows, _) = structural_audits(&s);
    print_audits(&rows, log);
    let out = out.map(Path::to_path_buf).or_else(|| s.config.out.clone());
    if let Some(dir) = out {
        if fs::create_dir_all(&dir)
            .and_then(|_| fs::write(dir.join("audit.csv"), audit_csv(&rows)))
            .is_err()
        {
            let _ = writeln!(log, "error: cannot write {}", dir.display());
            return ExitCode::Io;
        }
    }
    if rows.iter().all(|r| r.pass) {
        ExitCode::Ok
    } else {
        ExitCode::AuditFail
    }
}

/// Result of driving a scenario through the flow.
pub struct RunArtifacts {
    pub problem: FlowProblem<f64>,
    pub state: FlowState<f64>,
    pub report: MonitorReport,
    pub outcome: Result<RunOutcome, FlowError>,
}

/// Builds the problem, initializes and runs; `observer` sees every accepted state.
pub fn drive(
    s: &Scenario,
    op: BoundaryOperator<f64>,
    mut observer: impl FnMut(&FlowProblem<f64>, &FlowState<f64>),
) -> Result<RunArtifacts, FlowError> {
    let cfg = s.config.solver.config();
    let problem = FlowProblem::new(s.cost.clone(), s.densities.clone(), op, s.config.resolution)?;
    let mut state = initialize_u0(&problem, &s.config.initializer.build(), &cfg)?;
    let mut monitor = Monitor::new(&problem, cfg.steady_tol, cfg.boundary_tol, cfg.monitor_every);
    let outcome = run(&problem, &mut state, &cfg, |p, st| {
        monitor.observe(p, st);
        observer(p, st);
    })
    .map(|summary| summary.outcome);
    monitor.finish(&problem, &state);
    Ok(RunArtifacts {
        problem,
        state,
        report: monitor.report,
        outcome,
    })
}

/// Verify, initialize, run and persist.
pub fn cmd_run(config: &Path, out: &Path, log: &mut dyn Write) -> ExitCode {
    let s = match load_scenario(config, log) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if fs::create_dir_all(out).is_err() {
        let _ = writeln!(log, "error: cannot create {}", out.display());
        return ExitCode::Io;
    }
    let (rows, op) = structural_audits(&s);
    print_audits(&rows, log);
    if fs::write(out.join("audit.csv"), audit_csv(&rows)).is_err() {
        return ExitCode::Io;
    }
    let op = match op {
        Some(op) if rows.iter().all(|r| r.pass) => op,
        _ => {
            let _ = writeln!(log, "structural audits failed");
            return ExitCode::AuditFail;
        }
    };

    let every = s.config.snapshot_every;
    let mut io_failed = false;
    let art = drive(&s, op, |p, st| {
        if every > 0 && st.steps % every == 0 {
            let path = out.join(format!("snapshot_{:08}.txt", st.steps));
            io_failed |= fs::write(path, format_dump(p, st)).is_err();
        }
    });
    let art = match art {
        Ok(a) => a,
        Err(e @ FlowError::InadmissibleInitial { .. }) => {
            let _ = writeln!(log, "error: {e}");
            return ExitCode::InadmissibleInitial;
        }
        Err(e @ FlowError::UnsupportedInitializer(_)) => {
            let _ = writeln!(log, "error: {e}");
            return ExitCode::InadmissibleInitial;
        }
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            return ExitCode::AuditFail;
        }
    };

    let dump = format_dump(&art.problem, &art.state);
    let csv = match art.report.to_csv() {
        Ok(c) => c,
        Err(_) => return ExitCode::Io,
    };
    let verdicts = all_verdicts(&s, &art.report, &dump);
    let written = fs::write(out.join("final_state.txt"), &dump)
        .and_then(|_| fs::write(out.join("monitor.csv"), &csv))
        .and_then(|_| fs::write(out.join("verdicts.txt"), format_verdicts(&verdicts, &csv)))
        .and_then(|_| fs::write(out.join("config.toml"), s.config.to_toml()));
    if written.is_err() || io_failed {
        let _ = writeln!(log, "error: cannot write artifacts to {}", out.display());
        return ExitCode::Io;
    }

    for v in &verdicts {
        let _ = writeln!(log, "{}", v.line());
    }
    let _ = writeln!(
        log,
        "steps {}  t {}  residual {:e}",
        art.state.steps,
        art.state.t,
        art.state.udot_inf()
    );
    match art.outcome {
        Ok(RunOutcome::Converged) if verdicts.iter().all(|v| v.pass) => ExitCode::Ok,
        Ok(RunOutcome::Converged) => ExitCode::AuditFail,
        Ok(RunOutcome::MaxStepsExceeded) => {
            let _ = writeln!(log, "max steps reached without convergence");
            ExitCode::NoConvergence
        }
        Err(e) => {
            let _ = writeln!(log, "run aborted: {e}");
            ExitCode::NoConvergence
        }
    }
}

/// Recomputes verdicts from a run directory and writes plot slices into `dir/plots`.
pub fn cmd_report(dir: &Path, log: &mut dyn Write) -> ExitCode {
    let read = |name: &str| fs::read_to_string(dir.join(name));
    let (csv, verdict_text, config_text, dump) =
        match (read("monitor.csv"), read("verdicts.txt"), read("config.toml"), read("final_state.txt")) {
            (Ok(a), Ok(b), Ok(c), Ok(d)) => (a, b, c, d),
            _ => {
                let _ = writeln!(log, "error: {} is not a complete run directory", dir.display());
                return ExitCode::Io;
            }
        };
    let parsed = ScenarioConfig::parse(&config_text).and_then(Scenario::new);
    let (s, report, (digest, stored)) = match (parsed, MonitorReport::from_csv(&csv), parse_verdicts(&verdict_text)) {
        (Ok(s), Ok(r), Ok(v)) => (s, r, v),
        _ => {
            let _ = writeln!(log, "error: cannot parse run artifacts");
            return ExitCode::Io;
        }
    };

    let plots = dir.join("plots");
    let plots_ok = fs::create_dir_all(&plots).is_ok()
        && plot_slices(&report)
            .iter()
            .all(|(name, text)| fs::write(plots.join(name), text).is_ok());
    if !plots_ok {
        return ExitCode::Io;
    }

    let fresh = all_verdicts(&s, &report, &dump);
    let mut mismatch = false;
    if digest != crate::diagnostics::digest_hex(csv.as_bytes()) {
        let _ = writeln!(log, "mismatch: monitor.csv digest differs from verdicts.txt");
        mismatch = true;
    }
    if fresh.len() != stored.len() {
        mismatch = true;
    }
    for (a, b) in fresh.iter().zip(&stored) {
        let same = a.line() == b.line();
        let _ = writeln!(log, "{}{}", a.line(), if same { "" } else { "   (stored differs)" });
        mismatch |= !same;
    }
    if mismatch {
        ExitCode::VerdictMismatch
    } else {
        ExitCode::Ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISC: &str = r#"
name = "t"
seed = 3
resolution = 32
[cost]
name = "bilinear"
[source]
name = "disc"
params = [1.0]
[target]
name = "disc"
params = [1.0]
[densities]
name = "uniform"
[initializer]
kind = "affine"
s = [1, 0, 0, 1]
b = [0, 0]
"#;

    #[test]
    fn config_round_trips_through_toml() {
        let c = ScenarioConfig::parse(DISC).unwrap();
        assert_eq!(ScenarioConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(c.solver, SolverSection::default());
    }

    #[test]
    fn low_resolution_is_rejected() {
        let text = DISC.replace("resolution = 32", "resolution = 16");
        assert!(matches!(ScenarioConfig::parse(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn unknown_cost_is_a_registry_error() {
        let c = ScenarioConfig::parse(&DISC.replace("\"bilinear\"", "\"cubic\"")).unwrap();
        assert!(matches!(Scenario::new(c), Err(ScenarioError::Registry { .. })));
    }

    #[test]
    fn square_source_is_an_audit_failure() {
        let text = DISC.replacen("name = \"disc\"", "name = \"square\"", 1);
        let c = ScenarioConfig::parse(&text).unwrap();
        assert_eq!(Scenario::new(c).unwrap_err().exit(), ExitCode::AuditFail);
    }
}
