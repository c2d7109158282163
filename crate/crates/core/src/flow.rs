//! Explicit finite-difference time stepping of `u̇ = log det(D²u − A) − log B`
//! on a Cartesian grid, with the second boundary condition imposed through
//! ghost nodes outside the domain.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::boundary::BoundaryOperator;
use crate::cost::{CostError, CostModel, DensityPair};
use crate::domain::DomainSpec;
use crate::linalg::{lstsq, Mat2, Vec2};
use crate::scalar::Real;

/// Inside nodes used in each ghost node's quadratic fit.
pub const FIT_POINTS: usize = 12;
/// Side of the subsampling lattice used for cut-cell quadrature.
pub const QUAD_SUBSAMPLES: usize = 32;
/// Largest accepted condition number of a ghost fit.
pub const FIT_CONDITION_CAP: f64 = 1e6;
/// Tolerance for the analytic boundary check of an initial potential.
pub const INITIAL_BOUNDARY_TOL: f64 = 1e-8;
const MIN_COLLAR_CELLS: f64 = 3.0;
const PADDING: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("grid under-resolves the domain: inradius is {cells:.2} cells, need at least 3")]
    UnderResolved { cells: f64 },
    #[error("ghost fit at ({x0}, {x1}) is ill-conditioned (condition {condition:e})")]
    PoorGhostFit { x0: f64, x1: f64, condition: f64 },
    #[error("initial potential fails the {check} check at ({x0}, {x1}): {value:e}")]
    InadmissibleInitial { check: String, x0: f64, x1: f64, value: f64 },
    #[error("initializer `{0}` is not available for this cost")]
    UnsupportedInitializer(String),
    #[error("w lost positivity at ({x0}, {x1}): min eigenvalue {eig:e}")]
    NonconvexNode { x0: f64, x1: f64, eig: f64 },
    #[error("boundary Newton failed at ({x0}, {x1}): residual {residual:e}")]
    BoundaryNewtonFail { x0: f64, x1: f64, residual: f64 },
    #[error("step rejected after {halvings} halvings at t = {t} (last dt {dt:e}): {cause}")]
    StepRejectedForever { t: f64, dt: f64, halvings: u32, cause: String },
    #[error("need at least 3 snapshots spanning 100 steps")]
    InsufficientHistory,
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Index into `Grid::inside`.
    Inside(usize),
    /// Index into `Grid::ghosts`.
    Ghost(usize),
    Exterior,
}

/// A node outside the domain that lies in the stencil of an inside node.
#[derive(Debug, Clone)]
pub struct GhostNode<R> {
    pub node: usize,
    pub x: Vec2<R>,
    /// Nearest boundary point, where the boundary condition is imposed.
    pub foot: Vec2<R>,
    pub normal: Vec2<R>,
    /// Distance from the foot to the ghost node.
    pub s: R,
    pub stencil: [usize; FIT_POINTS],
    /// Linear functionals of the stencil values giving the fit's value,
    /// tangential and normal derivative, and normal second derivative at the foot.
    pub w_value: [R; FIT_POINTS],
    pub w_tangent: [R; FIT_POINTS],
    pub w_normal: [R; FIT_POINTS],
    pub w_nn: [R; FIT_POINTS],
    pub condition: R,
}

impl<R: Real> GhostNode<R> {
    pub fn tangent(&self) -> Vec2<R> {
        self.normal.perp()
    }

    fn apply(&self, w: &[R; FIT_POINTS], u: &[R]) -> R {
        let mut s = R::zero();
        for (k, &n) in self.stencil.iter().enumerate() {
            s = s + w[k] * u[n];
        }
        s
    }
}

/// Uniform Cartesian grid covering a domain, with ghost closures and quadrature weights.
#[derive(Debug, Clone)]
pub struct Grid<R> {
    pub nx: usize,
    pub ny: usize,
    pub h: R,
    pub origin: Vec2<R>,
    pub kinds: Vec<NodeKind>,
    /// Node indices of inside nodes.
    pub inside: Vec<usize>,
    pub ghosts: Vec<GhostNode<R>>,
    /// Quadrature weight of each inside node.
    pub weights: Vec<R>,
    /// Inside nodes with a ghost in their 9-point stencil.
    pub near_boundary: Vec<bool>,
    /// Inside nodes whose four axis neighbours are inside.
    pub interior_axis: Vec<bool>,
    /// Ghost indices ordered by angle around the domain centre.
    pub boundary_order: Vec<usize>,
}

impl<R: Real> Grid<R> {
    /// `resolution` cells across the longer side of the bounding box.
    pub fn new(domain: &DomainSpec<R>, resolution: usize) -> Result<Self, FlowError> {
        let bb = domain.bbox();
        let h = bb.width().max(bb.height()) / R::lit(resolution as f64);
        let cells = (domain.inradius() / h).as_f64();
        if cells < MIN_COLLAR_CELLS {
            return Err(FlowError::UnderResolved { cells });
        }
        let pad = R::lit(PADDING as f64) * h;
        let nx = (bb.width() / h).round().to_usize().unwrap_or(0) + 2 * PADDING + 1;
        let ny = (bb.height() / h).round().to_usize().unwrap_or(0) + 2 * PADDING + 1;
        let origin = bb.min - Vec2::new(pad, pad);
        let pos = |n: usize| origin + Vec2::new(R::lit((n % nx) as f64), R::lit((n / nx) as f64)) * h;

        let mut kinds = vec![NodeKind::Exterior; nx * ny];
        let mut inside = Vec::new();
        for (n, kind) in kinds.iter_mut().enumerate() {
            if domain.contains(pos(n)) {
                *kind = NodeKind::Inside(inside.len());
                inside.push(n);
            }
        }
        let mut ghost_nodes = Vec::new();
        for n in 0..nx * ny {
            if kinds[n] != NodeKind::Exterior {
                continue;
            }
            let (i, j) = ((n % nx) as isize, (n / nx) as isize);
            let touches = neighbours9(i, j).any(|(a, b)| {
                a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny && matches!(kinds[b as usize * nx + a as usize], NodeKind::Inside(_))
            });
            if touches {
                ghost_nodes.push(n);
            }
        }
        let mut ghosts = Vec::with_capacity(ghost_nodes.len());
        for &n in &ghost_nodes {
            kinds[n] = NodeKind::Ghost(ghosts.len());
            ghosts.push(build_ghost(domain, &kinds, nx, ny, h, n, pos(n), &pos)?);
        }

        let near_boundary = inside
            .iter()
            .map(|&n| {
                let (i, j) = ((n % nx) as isize, (n / nx) as isize);
                neighbours9(i, j).any(|(a, b)| matches!(kinds[b as usize * nx + a as usize], NodeKind::Ghost(_)))
            })
            .collect();
        let interior_axis = inside
            .iter()
            .map(|&n| {
                [n + 1, n - 1, n + nx, n - nx]
                    .iter()
                    .all(|&m| matches!(kinds[m], NodeKind::Inside(_)))
            })
            .collect();

        let weights = quadrature_weights(domain, &kinds, &inside, nx, ny, h, &pos);

        let c = domain.center();
        let mut boundary_order: Vec<usize> = (0..ghosts.len()).collect();
        let ang = |g: &GhostNode<R>| {
            let d = g.foot - c;
            d.y.atan2(d.x).as_f64()
        };
        boundary_order.sort_by(|&a, &b| ang(&ghosts[a]).total_cmp(&ang(&ghosts[b])).then(a.cmp(&b)));

        Ok(Self {
            nx,
            ny,
            h,
            origin,
            kinds,
            inside,
            ghosts,
            weights,
            near_boundary,
            interior_axis,
            boundary_order,
        })
    }

    pub fn position(&self, node: usize) -> Vec2<R> {
        self.origin + Vec2::new(R::lit((node % self.nx) as f64), R::lit((node / self.nx) as f64)) * self.h
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    /// Index of the node at `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

fn neighbours9(i: isize, j: isize) -> impl Iterator<Item = (isize, isize)> {
    (-1..=1).flat_map(move |dj| (-1..=1).map(move |di| (i + di, j + dj))).filter(move |&(a, b)| (a, b) != (i, j))
}

#[allow(clippy::too_many_arguments)]
fn build_ghost<R: Real>(
    domain: &DomainSpec<R>,
    kinds: &[NodeKind],
    nx: usize,
    ny: usize,
    h: R,
    node: usize,
    x: Vec2<R>,
    pos: &impl Fn(usize) -> Vec2<R>,
) -> Result<GhostNode<R>, FlowError> {
    let foot = domain.project(x);
    let (i, j) = ((node % nx) as isize, (node / nx) as isize);
    let mut cand: Vec<(R, usize)> = Vec::new();
    for b in (j - 4).max(0)..=(j + 4).min(ny as isize - 1) {
        for a in (i - 4).max(0)..=(i + 4).min(nx as isize - 1) {
            let m = b as usize * nx + a as usize;
            if matches!(kinds[m], NodeKind::Inside(_)) {
                cand.push(((pos(m) - foot.point).norm_sq(), m));
            }
        }
    }
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let fail = |condition: f64| FlowError::PoorGhostFit {
        x0: x.x.as_f64(),
        x1: x.y.as_f64(),
        condition,
    };
    if cand.len() < FIT_POINTS {
        return Err(fail(f64::INFINITY));
    }
    let mut stencil = [0usize; FIT_POINTS];
    for k in 0..FIT_POINTS {
        stencil[k] = cand[k].1;
    }
    let rows: Vec<[R; 6]> = stencil
        .iter()
        .map(|&m| {
            let d = (pos(m) - foot.point) * (R::one() / h);
            [R::one(), d.x, d.y, d.x * d.x, d.x * d.y, d.y * d.y]
        })
        .collect();
    let nu = foot.normal;
    let tau = nu.perp();
    let two = R::lit(2.0);
    let mut w_value = [R::zero(); FIT_POINTS];
    let mut w_tangent = [R::zero(); FIT_POINTS];
    let mut w_normal = [R::zero(); FIT_POINTS];
    let mut w_nn = [R::zero(); FIT_POINTS];
    let mut condition = R::zero();
    for k in 0..FIT_POINTS {
        let mut e = [R::zero(); FIT_POINTS];
        e[k] = R::one();
        let sol = lstsq(&rows, &e).ok_or_else(|| fail(f64::INFINITY))?;
        let c = sol.coeffs;
        condition = sol.condition;
        let grad = Vec2::new(c[1], c[2]) * (R::one() / h);
        let hess = Mat2::new(two * c[3], c[4], c[4], two * c[5]).scale(R::one() / (h * h));
        w_value[k] = c[0];
        w_tangent[k] = grad.dot(tau);
        w_normal[k] = grad.dot(nu);
        w_nn[k] = hess.quad(nu, nu);
    }
    if !(condition.as_f64() <= FIT_CONDITION_CAP) {
        return Err(fail(condition.as_f64()));
    }
    Ok(GhostNode {
        node,
        x,
        foot: foot.point,
        normal: nu,
        s: -foot.distance,
        stencil,
        w_value,
        w_tangent,
        w_normal,
        w_nn,
        condition,
    })
}

/// Cell areas by subsampling, with the share of non-inside cells moved to the
/// nearest inside node so that weights live on inside nodes only.
fn quadrature_weights<R: Real>(
    domain: &DomainSpec<R>,
    kinds: &[NodeKind],
    inside: &[usize],
    nx: usize,
    ny: usize,
    h: R,
    pos: &impl Fn(usize) -> Vec2<R>,
) -> Vec<R> {
    let mut weights: Vec<R> = inside
        .iter()
        .map(|&n| domain.cell_area(pos(n), h, QUAD_SUBSAMPLES))
        .collect();
    for n in 0..nx * ny {
        if matches!(kinds[n], NodeKind::Inside(_)) {
            continue;
        }
        let d = domain.distance(pos(n));
        if d <= -h {
            continue;
        }
        let area = domain.cell_area(pos(n), h, QUAD_SUBSAMPLES);
        if area == R::zero() {
            continue;
        }
        let (i, j) = ((n % nx) as isize, (n / nx) as isize);
        let mut best: Option<(R, usize)> = None;
        for b in (j - 2).max(0)..=(j + 2).min(ny as isize - 1) {
            for a in (i - 2).max(0)..=(i + 2).min(nx as isize - 1) {
                if let NodeKind::Inside(k) = kinds[b as usize * nx + a as usize] {
                    let dd = (pos(b as usize * nx + a as usize) - pos(n)).norm_sq();
                    if best.map_or(true, |(bd, _)| dd < bd) {
                        best = Some((dd, k));
                    }
                }
            }
        }
        if let Some((_, k)) = best {
            weights[k] = weights[k] + area;
        }
    }
    weights
}

/// Step control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<R> {
    /// Safety factor `σ` in `Δt = σ hₓ² / (2 max tr w⁻¹)`.
    pub cfl: R,
    /// Stop once `‖u̇‖_∞` drops below this.
    pub steady_tol: R,
    /// Residual tolerance of the boundary Newton solve.
    pub boundary_tol: R,
    pub max_steps: usize,
    /// Keep stepping at least this long even when already steady.
    pub min_steps: usize,
    /// Monitor row cadence in steps.
    pub monitor_every: usize,
    pub max_halvings: u32,
}

impl<R: Real> Default for SolverConfig<R> {
    fn default() -> Self {
        Self {
            cfl: R::lit(0.5),
            steady_tol: R::lit(1e-8),
            boundary_tol: R::lit(1e-13),
            max_steps: 100_000,
            min_steps: 0,
            monitor_every: 10,
            max_halvings: 20,
        }
    }
}

impl<R: Real> SolverConfig<R> {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cfl > R::zero() && self.cfl <= R::lit(0.9)) {
            return Err(format!("cfl must lie in (0, 0.9], got {}", self.cfl));
        }
        if !(self.steady_tol > R::zero() && self.boundary_tol > R::zero()) {
            return Err("tolerances must be positive".into());
        }
        if self.monitor_every == 0 {
            return Err("monitor cadence must be positive".into());
        }
        Ok(())
    }
}

/// Everything fixed for the duration of a run.
#[derive(Debug, Clone)]
pub struct FlowProblem<R: Real> {
    pub cost: CostModel<R>,
    pub densities: DensityPair<R>,
    pub boundary: BoundaryOperator<R>,
    pub grid: Grid<R>,
}

impl<R: Real> FlowProblem<R> {
    pub fn new(
        cost: CostModel<R>,
        densities: DensityPair<R>,
        boundary: BoundaryOperator<R>,
        resolution: usize,
    ) -> Result<Self, FlowError> {
        let grid = Grid::new(densities.source(), resolution)?;
        Ok(Self {
            cost,
            densities,
            boundary,
            grid,
        })
    }

    pub fn source(&self) -> &DomainSpec<R> {
        self.densities.source()
    }

    pub fn target(&self) -> &DomainSpec<R> {
        self.densities.target()
    }
}

/// Cached per-node quantities at an inside node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFields<R> {
    pub grad: Vec2<R>,
    pub hess: Mat2<R>,
    /// `T = Y(x, ∇u)`.
    pub t: Vec2<R>,
    pub w: Mat2<R>,
    pub b: R,
    pub udot: R,
    pub eig_min: R,
    pub eig_max: R,
}

/// Boundary data at a ghost node's foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostState<R> {
    /// Gradient at the foot.
    pub p: Vec2<R>,
    /// `Y(x_b, p)`.
    pub y: Vec2<R>,
    /// Fitted value at the foot.
    pub value: R,
    /// `Ḡ(x_b, p)` after the Newton solve.
    pub gbar: R,
    pub newton_iters: u32,
}

#[derive(Debug, Clone)]
pub struct FlowState<R> {
    /// Values on every grid node; exterior nodes hold zero.
    pub u: Vec<R>,
    pub t: R,
    pub steps: usize,
    /// Last accepted time step (zero before the first step).
    pub dt: R,
    /// One entry per inside node.
    pub fields: Vec<NodeFields<R>>,
    /// One entry per ghost node.
    pub boundary: Vec<GhostState<R>>,
}

impl<R: Real> FlowState<R> {
    pub fn udot_inf(&self) -> R {
        self.fields.iter().fold(R::zero(), |m, f| m.max(f.udot.abs()))
    }

    pub fn udot_range(&self) -> (R, R) {
        self.fields.iter().fold((R::infinity(), R::neg_infinity()), |(lo, hi), f| {
            (lo.min(f.udot), hi.max(f.udot))
        })
    }

    pub fn mean_u(&self, grid: &Grid<R>) -> R {
        let s: R = grid.inside.iter().map(|&n| self.u[n]).sum();
        s / R::lit(grid.inside.len() as f64)
    }

    /// `max |det w − B|` over inside nodes.
    pub fn elliptic_residual(&self) -> R {
        residual_elliptic(self).into_iter().fold(R::zero(), |m, r| m.max(r.abs()))
    }
}

/// `det w − B` at each inside node.
pub fn residual_elliptic<R: Real>(state: &FlowState<R>) -> Vec<R> {
    state.fields.iter().map(|f| f.w.det() - f.b).collect()
}

/// Starting potentials.
#[derive(Clone)]
pub enum Initializer<R: Real> {
    /// Any closed-form potential.
    Analytic(Arc<dyn Fn(Vec2<R>) -> R + Send + Sync>),
    /// Potential of the affine map `T₀ x = S x + b` (bilinear and quadratic costs).
    Affine { s: Mat2<R>, b: Vec2<R> },
    /// `base + amplitude·(x₁² − x₂²)·ψ(x)²` about the source centre, where
    /// `ψ` is a polynomial defining function; the boundary gradient of the
    /// base is left unchanged.
    Perturbed { base: Box<Initializer<R>>, amplitude: R },
}

impl<R: Real> std::fmt::Debug for Initializer<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Analytic(_) => write!(f, "Analytic"),
            Self::Affine { s, b } => f.debug_struct("Affine").field("s", s).field("b", b).finish(),
            Self::Perturbed { base, amplitude } => f
                .debug_struct("Perturbed")
                .field("base", base)
                .field("amplitude", amplitude)
                .finish(),
        }
    }
}

type Potential<R> = Arc<dyn Fn(Vec2<R>) -> R + Send + Sync>;

impl<R: Real> Initializer<R> {
    pub fn identity() -> Self {
        Self::Affine {
            s: Mat2::identity(),
            b: Vec2::zero(),
        }
    }

    /// Closed-form potential for this initializer.
    pub fn potential(&self, cost: &CostModel<R>, source: &DomainSpec<R>) -> Result<Potential<R>, FlowError> {
        match self {
            Self::Analytic(f) => Ok(f.clone()),
            Self::Affine { s, b } => {
                let m = match cost.name() {
                    "bilinear" => *s,
                    "quadratic" => *s - Mat2::identity(),
                    other => return Err(FlowError::UnsupportedInitializer(format!("affine/{other}"))),
                };
                let b = *b;
                let half = R::lit(0.5);
                Ok(Arc::new(move |x: Vec2<R>| m.quad(x, x) * half + b.dot(x)))
            }
            Self::Perturbed { base, amplitude } => {
                let base = base.potential(cost, source)?;
                let dom = source.clone();
                let c = dom.center();
                let amp = *amplitude;
                Ok(Arc::new(move |x: Vec2<R>| {
                    let d = x - c;
                    let psi = dom.poly_phi(x);
                    base(x) + amp * (d.x * d.x - d.y * d.y) * psi * psi
                }))
            }
        }
    }
}

/// Solves the boundary condition at every ghost foot and writes ghost values into `u`.
pub fn apply_boundary<R: Real>(
    problem: &FlowProblem<R>,
    u: &mut [R],
    previous: Option<&[GhostState<R>]>,
    tol: R,
) -> Result<Vec<GhostState<R>>, FlowError> {
    let grid = &problem.grid;
    let op = &problem.boundary;
    let default_guess = problem.target().center();
    let results: Vec<Result<(R, GhostState<R>), FlowError>> = {
        let u: &[R] = u;
        grid.ghosts
            .par_iter()
            .enumerate()
            .map(|(k, g)| {
                let guess = previous.map_or(default_guess, |p| p[k].y);
                solve_ghost(op, g, u, guess, tol)
            })
            .collect()
    };
    let mut out = Vec::with_capacity(results.len());
    for (g, r) in grid.ghosts.iter().zip(results) {
        let (value, st) = r?;
        u[g.node] = value;
        out.push(st);
    }
    Ok(out)
}

fn solve_ghost<R: Real>(
    op: &BoundaryOperator<R>,
    g: &GhostNode<R>,
    u: &[R],
    guess: Vec2<R>,
    tol: R,
) -> Result<(R, GhostState<R>), FlowError> {
    let fail = |residual: R| FlowError::BoundaryNewtonFail {
        x0: g.foot.x.as_f64(),
        x1: g.foot.y.as_f64(),
        residual: residual.as_f64(),
    };
    let tan = g.apply(&g.w_tangent, u);
    let value = g.apply(&g.w_value, u);
    let unn = g.apply(&g.w_nn, u);
    let tau = g.tangent();
    let nu = g.normal;
    let mut q = g.apply(&g.w_normal, u);
    let eval = |q: R, guess: Vec2<R>| op.gbar_from(g.foot, tau * tan + nu * q, guess);
    let (mut r, mut y) = eval(q, guess).map_err(|_| fail(R::nan()))?;
    let mut iters = 0;
    while !(r.abs() <= tol) {
        if iters >= 50 {
            return Err(fail(r));
        }
        iters += 1;
        let slope = op.beta_at(g.foot, y).map_err(|_| fail(r))?.dot(nu);
        if !(slope > R::zero()) {
            return Err(fail(r));
        }
        let mut step = r / slope;
        if step.abs() <= R::lit(4.0) * R::epsilon() * q.abs().max(R::one()) {
            // at rounding level
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            if let Ok((r1, y1)) = eval(q - step, y) {
                if r1.abs() < r.abs() || r1.abs() <= tol {
                    q = q - step;
                    r = r1;
                    y = y1;
                    accepted = true;
                    break;
                }
            }
            step = step * R::lit(0.5);
        }
        if !accepted {
            return Err(fail(r));
        }
    }
    let half = R::lit(0.5);
    let ghost_value = value + g.s * q + half * g.s * g.s * unn;
    Ok((
        ghost_value,
        GhostState {
            p: tau * tan + nu * q,
            y,
            value,
            gbar: r,
            newton_iters: iters,
        },
    ))
}

/// Recomputes gradients, `w`, `T` and `u̇` at every inside node.
pub fn evaluate_fields<R: Real>(
    problem: &FlowProblem<R>,
    u: &[R],
    previous: Option<&[NodeFields<R>]>,
) -> Result<Vec<NodeFields<R>>, FlowError> {
    let grid = &problem.grid;
    let default_guess = problem.target().center();
    let res: Vec<Result<NodeFields<R>, FlowError>> = grid
        .inside
        .par_iter()
        .enumerate()
        .map(|(k, &n)| {
            let guess = previous.map_or(default_guess, |p| p[k].t);
            eval_rhs(problem, u, n, guess)
        })
        .collect();
    res.into_iter().collect()
}

/// Centered differences, `T`, `w` and `u̇` at inside node `n`.
pub fn eval_rhs<R: Real>(problem: &FlowProblem<R>, u: &[R], n: usize, guess: Vec2<R>) -> Result<NodeFields<R>, FlowError> {
    let grid = &problem.grid;
    let nx = grid.nx;
    let h = grid.h;
    let two = R::lit(2.0);
    let x = grid.position(n);
    let (c, e, w_, nn, s) = (u[n], u[n + 1], u[n - 1], u[n + nx], u[n - nx]);
    let grad = Vec2::new((e - w_) / (two * h), (nn - s) / (two * h));
    let h2 = h * h;
    let uxx = (e - two * c + w_) / h2;
    let uyy = (nn - two * c + s) / h2;
    let uxy = (u[n + nx + 1] - u[n - nx + 1] - u[n + nx - 1] + u[n - nx - 1]) / (R::lit(4.0) * h2);
    let hess = Mat2::new(uxx, uxy, uxy, uyy);
    let t = problem.cost.y_from_p_from(x, grad, guess)?;
    let a = problem.cost.jet(x, t).dxx;
    let w = hess - a;
    let (lo, hi) = w.sym_eigenvalues();
    if !(lo > R::zero()) {
        return Err(FlowError::NonconvexNode {
            x0: x.x.as_f64(),
            x1: x.y.as_f64(),
            eig: lo.as_f64(),
        });
    }
    let b = problem.cost.structure_b_at(&problem.densities, x, t);
    let udot = w.det().ln() - b.ln();
    Ok(NodeFields {
        grad,
        hess,
        t,
        w,
        b,
        udot,
        eig_min: lo,
        eig_max: hi,
    })
}

/// Builds and checks the initial state: `w ≻ 0` at all inside nodes, the
/// boundary condition for the analytic gradient at every foot, and boundary
/// winding number one.
pub fn initialize_u0<R: Real>(
    problem: &FlowProblem<R>,
    init: &Initializer<R>,
    cfg: &SolverConfig<R>,
) -> Result<FlowState<R>, FlowError> {
    let grid = &problem.grid;
    let u0 = init.potential(&problem.cost, problem.source())?;
    let mut u = vec![R::zero(); grid.node_count()];
    for &n in &grid.inside {
        u[n] = u0(grid.position(n));
    }

    let fd = R::lit(1e-5) * problem.source().inradius();
    let analytic_grad = |x: Vec2<R>| {
        let ex = Vec2::new(fd, R::zero());
        let ey = Vec2::new(R::zero(), fd);
        Vec2::new(
            (u0(x + ex) - u0(x - ex)) / (R::lit(2.0) * fd),
            (u0(x + ey) - u0(x - ey)) / (R::lit(2.0) * fd),
        )
    };
    let mut images = Vec::with_capacity(grid.ghosts.len());
    for &k in &grid.boundary_order {
        let g = &grid.ghosts[k];
        let p = analytic_grad(g.foot);
        let inadmissible = |value: f64| FlowError::InadmissibleInitial {
            check: "boundary condition".into(),
            x0: g.foot.x.as_f64(),
            x1: g.foot.y.as_f64(),
            value,
        };
        let y = problem.cost.y_from_p(g.foot, p).map_err(|_| inadmissible(f64::NAN))?;
        let r = problem.boundary.hbar_star(y);
        if !(r.abs() <= R::lit(INITIAL_BOUNDARY_TOL)) {
            return Err(inadmissible(r.as_f64()));
        }
        images.push(y);
    }
    let wind = winding_number(&images, problem.target().center());
    if !((wind - R::one()).abs() < R::lit(0.25)) {
        return Err(FlowError::InadmissibleInitial {
            check: "boundary winding".into(),
            x0: f64::NAN,
            x1: f64::NAN,
            value: wind.as_f64(),
        });
    }

    let boundary = apply_boundary(problem, &mut u, None, cfg.boundary_tol)?;
    let fields = evaluate_fields(problem, &u, None).map_err(|e| match e {
        FlowError::NonconvexNode { x0, x1, eig } => FlowError::InadmissibleInitial {
            check: "w positive definite".into(),
            x0,
            x1,
            value: eig,
        },
        other => other,
    })?;
    Ok(FlowState {
        u,
        t: R::zero(),
        steps: 0,
        dt: R::zero(),
        fields,
        boundary,
    })
}

/// Turns of the closed polygon `pts` around `center`.
pub fn winding_number<R: Real>(pts: &[Vec2<R>], center: Vec2<R>) -> R {
    if pts.is_empty() {
        return R::zero();
    }
    let mut total = R::zero();
    for k in 0..pts.len() {
        let a = pts[k] - center;
        let b = pts[(k + 1) % pts.len()] - center;
        total = total + (a.x * b.y - a.y * b.x).atan2(a.dot(b));
    }
    total / R::TAU()
}

/// The stable step `σ hₓ² / (2 max tr w⁻¹)`.
pub fn stable_dt<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>, cfg: &SolverConfig<R>) -> R {
    let max_tr = state
        .fields
        .iter()
        .fold(R::zero(), |m, f| m.max(f.w.trace() / f.w.det()));
    let h = problem.grid.h;
    cfg.cfl * h * h / (R::lit(2.0) * max_tr)
}

/// One explicit Euler step with rejection and halving.
pub fn step<R: Real>(problem: &FlowProblem<R>, state: &mut FlowState<R>, cfg: &SolverConfig<R>) -> Result<(), FlowError> {
    let mut dt = stable_dt(problem, state, cfg);
    let mut cause = String::new();
    for _ in 0..=cfg.max_halvings {
        match try_step(problem, state, cfg, dt) {
            Ok(next) => {
                *state = next;
                return Ok(());
            }
            Err(e) => cause = e.to_string(),
        }
        dt = dt * R::lit(0.5);
    }
    Err(FlowError::StepRejectedForever {
        t: state.t.as_f64(),
        dt: dt.as_f64(),
        halvings: cfg.max_halvings,
        cause,
    })
}

fn try_step<R: Real>(
    problem: &FlowProblem<R>,
    state: &FlowState<R>,
    cfg: &SolverConfig<R>,
    dt: R,
) -> Result<FlowState<R>, FlowError> {
    let grid = &problem.grid;
    let mut u = state.u.clone();
    for (k, &n) in grid.inside.iter().enumerate() {
        u[n] = u[n] + dt * state.fields[k].udot;
    }
    let boundary = apply_boundary(problem, &mut u, Some(&state.boundary), cfg.boundary_tol)?;
    let fields = evaluate_fields(problem, &u, Some(&state.fields))?;
    if fields.iter().any(|f| !f.udot.is_finite()) {
        return Err(FlowError::NonconvexNode {
            x0: f64::NAN,
            x1: f64::NAN,
            eig: f64::NAN,
        });
    }
    Ok(FlowState {
        u,
        t: state.t + dt,
        steps: state.steps + 1,
        dt,
        fields,
        boundary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Converged,
    MaxStepsExceeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary<R> {
    pub outcome: RunOutcome,
    pub steps: usize,
    pub t: R,
    /// `‖u̇‖_∞` at the final state.
    pub residual: R,
}

/// Steps until `‖u̇‖_∞ < τ_steady` (after at least `min_steps`) or `max_steps`.
/// `observer` sees the initial state and every accepted step.
pub fn run<R: Real>(
    problem: &FlowProblem<R>,
    state: &mut FlowState<R>,
    cfg: &SolverConfig<R>,
    mut observer: impl FnMut(&FlowProblem<R>, &FlowState<R>),
) -> Result<RunSummary<R>, FlowError> {
    observer(problem, state);
    loop {
        let residual = state.udot_inf();
        let outcome = if state.steps >= cfg.min_steps && residual < cfg.steady_tol {
            Some(RunOutcome::Converged)
        } else if state.steps >= cfg.max_steps {
            Some(RunOutcome::MaxStepsExceeded)
        } else {
            None
        };
        if let Some(outcome) = outcome {
            return Ok(RunSummary {
                outcome,
                steps: state.steps,
                t: state.t,
                residual,
            });
        }
        step(problem, state, cfg)?;
        observer(problem, state);
    }
}

/// Least-squares slope of `mean(u)` against `t` from `(step, t, mean u)` snapshots.
pub fn estimate_c_infinity<R: Real>(history: &[(usize, R, R)]) -> Result<R, FlowError> {
    if history.len() < 3 {
        return Err(FlowError::InsufficientHistory);
    }
    let first = history.first().unwrap().0;
    let last = history.last().unwrap().0;
    if last < first + 100 {
        return Err(FlowError::InsufficientHistory);
    }
    let n = R::lit(history.len() as f64);
    let tm = history.iter().map(|s| s.1).sum::<R>() / n;
    let um = history.iter().map(|s| s.2).sum::<R>() / n;
    let mut sxy = R::zero();
    let mut sxx = R::zero();
    for &(_, t, m) in history {
        sxy = sxy + (t - tm) * (m - um);
        sxx = sxx + (t - tm) * (t - tm);
    }
    if !(sxx > R::zero()) {
        return Err(FlowError::InsufficientHistory);
    }
    Ok(sxy / sxx)
}

/// Plain-text dump: header lines, then one row per inside node
/// `i j x y u udot T1 T2 w11 w12 w22`.
pub fn format_dump<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>) -> String {
    let grid = &problem.grid;
    let mut s = String::new();
    let _ = writeln!(s, "# nx={}", grid.nx);
    let _ = writeln!(s, "# ny={}", grid.ny);
    let _ = writeln!(s, "# hx={}", grid.h);
    let _ = writeln!(s, "# t={}", state.t);
    let _ = writeln!(s, "i,j,x,y,u,udot,T1,T2,w11,w12,w22");
    for (k, &n) in grid.inside.iter().enumerate() {
        let f = &state.fields[k];
        let x = grid.position(n);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            n % grid.nx,
            n / grid.nx,
            x.x,
            x.y,
            state.u[n],
            f.udot,
            f.t.x,
            f.t.y,
            f.w.m[0][0],
            f.w.m[0][1],
            f.w.m[1][1]
        );
    }
    s
}

pub fn write_dump<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>, path: &Path) -> io::Result<()> {
    std::fs::write(path, format_dump(problem, state))
}

/// A parsed dump row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DumpRow {
    pub i: usize,
    pub j: usize,
    pub x: [f64; 2],
    pub u: f64,
    pub udot: f64,
    pub t: [f64; 2],
    pub w: [f64; 3],
}

/// Reads a dump written by [`write_dump`]; returns the header time and rows.
pub fn read_dump(text: &str) -> Result<(f64, Vec<DumpRow>), String> {
    let mut t = f64::NAN;
    let mut rows = Vec::new();
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("# t=") {
            t = v.parse().map_err(|e| format!("bad time: {e}"))?;
            continue;
        }
        if line.starts_with('#') || line.starts_with("i,") || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(format!("expected 11 fields, got {}", f.len()));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| format!("field {k}: {e}"));
        rows.push(DumpRow {
            i: f[0].parse().map_err(|e| format!("i: {e}"))?,
            j: f[1].parse().map_err(|e| format!("j: {e}"))?,
            x: [num(2)?, num(3)?],
            u: num(4)?,
            udot: num(5)?,
            t: [num(6)?, num(7)?],
            w: [num(8)?, num(9)?, num(10)?],
        });
    }
    Ok((t, rows))
}
