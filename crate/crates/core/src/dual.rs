//! The c-transform `u*(y) = c(x, y) − u(x)` at `y = T(x)`, sampled on the
//! image cloud of the grid, and the consistency checks it provides.

use thiserror::Error;

use crate::cost::{CostError, CostModel, DensityPair};
use crate::flow::{FlowProblem, FlowState};
use crate::linalg::{Mat2, QuadraticFit, Vec2};
use crate::scalar::Real;

/// Neighbours per local fit.
pub const DUAL_FIT_POINTS: usize = 12;
/// Largest accepted condition number of a local fit.
pub const DUAL_FIT_CONDITION_CAP: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DualError {
    #[error("local fit at ({y0}, {y1}) is ill-conditioned (condition {condition:e})")]
    PoorLocalFit { y0: f64, y1: f64, condition: f64 },
    #[error("dual cloud has fewer than {DUAL_FIT_POINTS} points")]
    TooFewPoints,
    #[error("snapshots come from different grids or the same time")]
    IncompatibleSnapshots,
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// Bucketed point set for nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct PointIndex<R> {
    points: Vec<Vec2<R>>,
    origin: Vec2<R>,
    cell: R,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<R: Real> PointIndex<R> {
    pub fn new(points: Vec<Vec2<R>>) -> Self {
        let mut lo = Vec2::new(R::infinity(), R::infinity());
        let mut hi = Vec2::new(R::neg_infinity(), R::neg_infinity());
        for p in &points {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let n = points.len().max(1);
        let ext = (hi.x - lo.x).max(hi.y - lo.y).max(R::epsilon());
        let area = ((hi.x - lo.x) * (hi.y - lo.y)).max(ext * ext / R::lit(n as f64));
        let cell = (area / R::lit(n as f64)).sqrt() * R::lit(2.0);
        let nx = ((hi.x - lo.x) / cell).floor().to_usize().unwrap_or(0) + 1;
        let ny = ((hi.y - lo.y) / cell).floor().to_usize().unwrap_or(0) + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut index = Self {
            points: Vec::new(),
            origin: lo,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (k, p) in points.iter().enumerate() {
            let (i, j) = index.bucket_of(*p);
            buckets[j * nx + i].push(k);
        }
        index.points = points;
        index.buckets = buckets;
        index
    }

    fn bucket_of(&self, p: Vec2<R>) -> (usize, usize) {
        let f = |v: R, n: usize| {
            let c = (v / self.cell).floor();
            if c < R::zero() {
                0
            } else {
                c.to_usize().unwrap_or(usize::MAX).min(n - 1)
            }
        };
        (f(p.x - self.origin.x, self.nx), f(p.y - self.origin.y, self.ny))
    }

    pub fn points(&self) -> &[Vec2<R>] {
        &self.points
    }

    /// Indices of the `k` nearest points, ties broken by index.
    pub fn nearest(&self, q: Vec2<R>, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        let (ci, cj) = self.bucket_of(q);
        let mut found: Vec<(R, usize)> = Vec::new();
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            let (r, ri) = (ring as isize, ring);
            let (ci, cj) = (ci as isize, cj as isize);
            for j in (cj - r)..=(cj + r) {
                for i in (ci - r)..=(ci + r) {
                    let on_ring = (i - ci).unsigned_abs() == ri || (j - cj).unsigned_abs() == ri;
                    if !on_ring || i < 0 || j < 0 || i as usize >= self.nx || j as usize >= self.ny {
                        continue;
                    }
                    for &m in &self.buckets[j as usize * self.nx + i as usize] {
                        found.push(((self.points[m] - q).norm_sq(), m));
                    }
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                // everything outside the searched square is at least `ring · cell` away
                let covered = self.cell * R::lit(ring as f64);
                if found[k - 1].0 <= covered * covered {
                    break;
                }
            }
        }
        found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        found.truncate(k);
        found.into_iter().map(|(_, m)| m).collect()
    }
}

/// Scattered samples of the dual potential.
#[derive(Debug, Clone)]
pub struct DualState<R> {
    /// `y_k = T(x_k)`.
    pub index: PointIndex<R>,
    /// `u*(y_k)`.
    pub values: Vec<R>,
    /// `x_k`.
    pub sources: Vec<Vec2<R>>,
    /// Number of leading samples that come from inside nodes (the rest are boundary feet).
    pub inside_count: usize,
}

impl<R: Real> DualState<R> {
    pub fn points(&self) -> &[Vec2<R>] {
        self.index.points()
    }

    /// Quadratic least-squares fit of `u*` around `y` on the nearest samples.
    pub fn fit_at(&self, y: Vec2<R>) -> Result<QuadraticFit<R>, DualError> {
        if self.values.len() < DUAL_FIT_POINTS {
            return Err(DualError::TooFewPoints);
        }
        let nb = self.index.nearest(y, DUAL_FIT_POINTS);
        let scale = (self.points()[*nb.last().unwrap()] - y).norm().max(R::epsilon());
        let samples: Vec<(Vec2<R>, R)> = nb.iter().map(|&m| (self.points()[m], self.values[m])).collect();
        let fail = |condition: f64| DualError::PoorLocalFit {
            y0: y.x.as_f64(),
            y1: y.y.as_f64(),
            condition,
        };
        let fit = QuadraticFit::fit(y, scale, &samples).ok_or_else(|| fail(f64::INFINITY))?;
        if !(fit.condition.as_f64() <= DUAL_FIT_CONDITION_CAP) {
            return Err(fail(fit.condition.as_f64()));
        }
        Ok(fit)
    }
}

/// `u*(T(x)) = c(x, T(x)) − u(x)` over inside nodes and boundary feet.
pub fn c_transform<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>) -> DualState<R> {
    let grid = &problem.grid;
    let cost = &problem.cost;
    let n = grid.inside.len() + grid.ghosts.len();
    let mut pts = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for (k, &node) in grid.inside.iter().enumerate() {
        let x = grid.position(node);
        let y = state.fields[k].t;
        pts.push(y);
        values.push(cost.value(x, y) - state.u[node]);
        sources.push(x);
    }
    for (g, b) in grid.ghosts.iter().zip(&state.boundary) {
        pts.push(b.y);
        values.push(cost.value(g.foot, b.y) - b.value);
        sources.push(g.foot);
    }
    DualState {
        index: PointIndex::new(pts),
        values,
        sources,
        inside_count: grid.inside.len(),
    }
}

/// `max |X(∇u*(T(x)), T(x)) − x|` over inside nodes.
pub fn inverse_consistency<R: Real>(problem: &FlowProblem<R>, state: &FlowState<R>, dual: &DualState<R>) -> Result<R, DualError> {
    let mut worst = R::zero();
    for k in 0..dual.inside_count {
        let y = state.fields[k].t;
        let x = dual.sources[k];
        let q = dual.fit_at(y)?.gradient(y);
        let xr = problem.cost.x_from_q_from(q, y, x)?;
        worst = worst.max((xr - x).norm());
    }
    Ok(worst)
}

/// `A*(y, q) = Hess_y c(X(q, y), y)` and `B*(y, q) = |det c_{i,j}| g(y) / f(X(q, y))`
/// with `f` extended outside its domain.
pub fn dual_structure_eval<R: Real>(
    cost: &CostModel<R>,
    dens: &DensityPair<R>,
    y: Vec2<R>,
    q: Vec2<R>,
) -> Result<(Mat2<R>, R), CostError> {
    let x = cost.x_from_q(q, y)?;
    let jet = cost.jet(x, y);
    Ok((jet.dyy, jet.dxy.det().abs() * dens.g(y) / dens.f_ext(x)))
}

/// `max |(u*₂(y) − u*₁(y))/Δt + u̇₁(x)|` over inside nodes with `y = T₁(x)`.
///
/// `u*₁(y)` is exact at the node; `u*₂(y)` is a second-order Taylor expansion
/// from `T₂(x)` with derivatives taken from a local fit of the second cloud.
pub fn dual_time_derivative_error<R: Real>(
    problem: &FlowProblem<R>,
    first: &FlowState<R>,
    second: &FlowState<R>,
    second_dual: &DualState<R>,
) -> Result<R, DualError> {
    let dt = second.t - first.t;
    if !(dt > R::zero()) || first.fields.len() != second.fields.len() {
        return Err(DualError::IncompatibleSnapshots);
    }
    let grid = &problem.grid;
    let half = R::lit(0.5);
    let mut worst = R::zero();
    for (k, &node) in grid.inside.iter().enumerate() {
        let x = grid.position(node);
        let y = first.fields[k].t;
        let y2 = second.fields[k].t;
        let u1 = problem.cost.value(x, y) - first.u[node];
        let u2_at_y2 = second_dual.values[k];
        let fit = second_dual.fit_at(y2)?;
        let d = y - y2;
        let u2 = u2_at_y2 + fit.gradient(y2).dot(d) + half * fit.hessian().quad(d, d);
        let err = ((u2 - u1) / dt + first.fields[k].udot).abs();
        worst = worst.max(err);
    }
    Ok(worst)
}

/// `max ‖c^{k,i} c^{l,j} w*_{kl} − w^{ij}‖ / ‖w^{ij}‖` over the given inside nodes,
/// with `w* = D²u* − A*(y, ∇u*)` from local fits.
pub fn w_conjugacy_error<R: Real>(
    problem: &FlowProblem<R>,
    state: &FlowState<R>,
    dual: &DualState<R>,
    nodes: &[usize],
) -> Result<R, DualError> {
    let mut worst = R::zero();
    for &k in nodes {
        let f = &state.fields[k];
        let x = dual.sources[k];
        let y = f.t;
        let fit = dual.fit_at(y)?;
        let q = fit.gradient(y);
        let xr = problem.cost.x_from_q_from(q, y, x)?;
        let jet = problem.cost.jet(xr, y);
        let w_star = fit.hessian() - jet.dyy;
        let inv = jet.dxy.inverse().ok_or(CostError::SingularJacobian {
            x0: xr.x.as_f64(),
            x1: xr.y.as_f64(),
            y0: y.x.as_f64(),
            y1: y.y.as_f64(),
        })?;
        let lhs = inv.transpose().mul_mat(&w_star).mul_mat(&inv);
        let rhs = match f.w.inverse() {
            Some(m) => m,
            None => return Ok(R::infinity()),
        };
        worst = worst.max((lhs - rhs).max_abs() / rhs.max_abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_matches_brute_force() {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..20 {
                let (a, b) = (i as f64 * 0.1, j as f64 * 0.13);
                pts.push(Vec2::new(a + 0.01 * (b * 7.0).sin(), b + 0.01 * (a * 5.0).cos()));
            }
        }
        let idx = PointIndex::new(pts.clone());
        for q in [Vec2::new(0.5, 0.5), Vec2::new(-1.0, 4.0), Vec2::new(2.9, 0.0), Vec2::new(1.234, 1.777)] {
            let got = idx.nearest(q, 12);
            let mut brute: Vec<(f64, usize)> = pts.iter().enumerate().map(|(k, p)| ((*p - q).norm_sq(), k)).collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<usize> = brute.iter().take(12).map(|b| b.1).collect();
            assert_eq!(got, want);
        }
    }
}
