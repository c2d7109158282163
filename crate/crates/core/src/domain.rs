//! Smooth planar domains described by a defining function, with signed
//! distance, normals, curvature, samplers, and the extended defining
//! functions `h = C d² − d` used for the boundary convexity estimates.

use rand::Rng;
use thiserror::Error;

use crate::cost::{CostError, CostModel, SampledMin};
use crate::linalg::{lstsq, Aabb, Mat2, Vec2};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("bad parameters for domain `{kind}`: {reason}")]
    BadParameters { kind: String, reason: String },
    #[error("domain `{0}` has a nonsmooth boundary")]
    NonSmooth(String),
    #[error("no admissible C found below {cap:e} (boundary margin {margin:e})")]
    NoAdmissibleC { cap: f64, margin: f64 },
    #[error("collar width {eps:e} fell below the minimum {min:e}")]
    CollarTooThin { eps: f64, min: f64 },
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape<R> {
    Disc { center: Vec2<R>, radius: R },
    Ellipse { center: Vec2<R>, a: R, b: R },
    /// `|x/a|ⁿ + |y/b|ⁿ = 1` with even `n ≥ 4`.
    Superellipse { center: Vec2<R>, a: R, b: R, n: i32 },
}

/// Nearest boundary point of a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Foot<R> {
    pub point: Vec2<R>,
    /// Outward unit normal at `point`.
    pub normal: Vec2<R>,
    /// Boundary curvature at `point` (positive for convex).
    pub curvature: R,
    /// Signed distance of the query, positive inside.
    pub distance: R,
}

/// A boundary sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint<R> {
    pub point: Vec2<R>,
    pub normal: Vec2<R>,
    pub curvature: R,
}

impl<R: Real> BoundaryPoint<R> {
    pub fn tangent(&self) -> Vec2<R> {
        self.normal.perp()
    }
}

/// A smooth, bounded, simply connected planar domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec<R> {
    shape: Shape<R>,
}

/// Kinds accepted by [`DomainSpec::make`].
pub const DOMAIN_KINDS: [&str; 3] = ["disc", "ellipse", "superellipse-smooth"];

fn bad<R>(kind: &str, reason: &str) -> Result<R, DomainError> {
    Err(DomainError::BadParameters {
        kind: kind.to_string(),
        reason: reason.to_string(),
    })
}

impl<R: Real> DomainSpec<R> {
    pub fn disc(center: Vec2<R>, radius: R) -> Result<Self, DomainError> {
        if !(radius > R::zero()) {
            return bad("disc", "radius must be positive");
        }
        Ok(Self {
            shape: Shape::Disc { center, radius },
        })
    }

    pub fn ellipse(center: Vec2<R>, a: R, b: R) -> Result<Self, DomainError> {
        if !(a > R::zero() && b > R::zero()) {
            return bad("ellipse", "semi-axes must be positive");
        }
        Ok(Self {
            shape: Shape::Ellipse { center, a, b },
        })
    }

    pub fn superellipse(center: Vec2<R>, a: R, b: R, n: i32) -> Result<Self, DomainError> {
        if !(a > R::zero() && b > R::zero()) {
            return bad("superellipse-smooth", "semi-axes must be positive");
        }
        if n < 4 || n % 2 != 0 {
            return bad("superellipse-smooth", "exponent must be an even integer >= 4");
        }
        Ok(Self {
            shape: Shape::Superellipse { center, a, b, n },
        })
    }

    /// Builds a domain from a kind name and a parameter list:
    /// `disc [r]` or `[cx, cy, r]`; `ellipse [a, b]` or `[cx, cy, a, b]`;
    /// `superellipse-smooth [a, b, n]` or `[cx, cy, a, b, n]`.
    pub fn make(kind: &str, params: &[f64]) -> Result<Self, DomainError> {
        if params.iter().any(|v| !v.is_finite()) {
            return bad(kind, "parameters must be finite");
        }
        let at = |i: usize| R::lit(params[i]);
        match (kind, params.len()) {
            ("disc", 1) => Self::disc(Vec2::zero(), at(0)),
            ("disc", 3) => Self::disc(Vec2::new(at(0), at(1)), at(2)),
            ("ellipse", 2) => Self::ellipse(Vec2::zero(), at(0), at(1)),
            ("ellipse", 4) => Self::ellipse(Vec2::new(at(0), at(1)), at(2), at(3)),
            ("superellipse-smooth", 3) => Self::superellipse(Vec2::zero(), at(0), at(1), params[2] as i32),
            ("superellipse-smooth", 5) => {
                Self::superellipse(Vec2::new(at(0), at(1)), at(2), at(3), params[4] as i32)
            }
            ("square" | "rectangle" | "polygon", _) => Err(DomainError::NonSmooth(kind.to_string())),
            (k, _) if DOMAIN_KINDS.contains(&k) => bad(kind, "wrong number of parameters"),
            _ => bad(kind, "unknown domain kind"),
        }
    }

    pub fn shape(&self) -> &Shape<R> {
        &self.shape
    }

    pub fn center(&self) -> Vec2<R> {
        match self.shape {
            Shape::Disc { center, .. } | Shape::Ellipse { center, .. } | Shape::Superellipse { center, .. } => center,
        }
    }

    pub fn bbox(&self) -> Aabb<R> {
        let (c, hw, hh) = match self.shape {
            Shape::Disc { center, radius } => (center, radius, radius),
            Shape::Ellipse { center, a, b } | Shape::Superellipse { center, a, b, .. } => (center, a, b),
        };
        Aabb::new(c - Vec2::new(hw, hh), c + Vec2::new(hw, hh))
    }

    /// Defining function, negative inside.
    pub fn phi(&self, p: Vec2<R>) -> R {
        match self.shape {
            Shape::Disc { center, radius } => (p - center).norm() - radius,
            Shape::Ellipse { center, a, b } => {
                let d = p - center;
                (d.x / a).powi(2) + (d.y / b).powi(2) - R::one()
            }
            Shape::Superellipse { center, a, b, n } => {
                let d = p - center;
                (d.x / a).powi(n) + (d.y / b).powi(n) - R::one()
            }
        }
    }

    fn phi_derivs(&self, p: Vec2<R>) -> (R, Vec2<R>, Mat2<R>) {
        let two = R::lit(2.0);
        match self.shape {
            Shape::Disc { center, radius } => {
                let d = p - center;
                let r = d.norm();
                let n = d * (R::one() / r);
                let t = n.perp();
                (r - radius, n, t.outer(t).scale(R::one() / r))
            }
            Shape::Ellipse { center, a, b } => {
                let d = p - center;
                let (a2, b2) = (a * a, b * b);
                (
                    d.x * d.x / a2 + d.y * d.y / b2 - R::one(),
                    Vec2::new(two * d.x / a2, two * d.y / b2),
                    Mat2::diag(two / a2, two / b2),
                )
            }
            Shape::Superellipse { center, a, b, n } => {
                let d = p - center;
                let nf = R::lit(n as f64);
                let (u, v) = (d.x / a, d.y / b);
                (
                    u.powi(n) + v.powi(n) - R::one(),
                    Vec2::new(nf * u.powi(n - 1) / a, nf * v.powi(n - 1) / b),
                    Mat2::diag(
                        nf * (nf - R::one()) * u.powi(n - 2) / (a * a),
                        nf * (nf - R::one()) * v.powi(n - 2) / (b * b),
                    ),
                )
            }
        }
    }

    /// Polynomial defining function: `|x − c|²/r² − 1` for discs, `phi` otherwise.
    /// Smooth everywhere, negative inside.
    pub fn poly_phi(&self, p: Vec2<R>) -> R {
        match self.shape {
            Shape::Disc { center, radius } => (p - center).norm_sq() / (radius * radius) - R::one(),
            _ => self.phi(p),
        }
    }

    pub fn contains(&self, p: Vec2<R>) -> bool {
        self.phi(p) < R::zero()
    }

    pub fn area(&self) -> R {
        match self.shape {
            Shape::Disc { radius, .. } => R::PI() * radius * radius,
            Shape::Ellipse { a, b, .. } => R::PI() * a * b,
            Shape::Superellipse { .. } => {
                // shoelace over a fine boundary polygon
                let n = 1 << 14;
                let pts: Vec<Vec2<R>> = (0..n).map(|k| self.boundary_param(self.theta(k, n))).collect();
                let mut s = R::zero();
                for k in 0..n {
                    let (p, q) = (pts[k], pts[(k + 1) % n]);
                    s = s + (p.x * q.y - q.x * p.y);
                }
                s.abs() * R::lit(0.5)
            }
        }
    }

    /// Radius of the largest inscribed disc about the centre.
    pub fn inradius(&self) -> R {
        match self.shape {
            Shape::Disc { radius, .. } => radius,
            Shape::Ellipse { a, b, .. } | Shape::Superellipse { a, b, .. } => a.min(b),
        }
    }

    /// `1 / max curvature`: the largest collar width on which the distance is smooth.
    pub fn reach(&self) -> R {
        match self.shape {
            Shape::Disc { radius, .. } => radius,
            Shape::Ellipse { a, b, .. } => {
                let (lo, hi) = (a.min(b), a.max(b));
                lo * lo / hi
            }
            Shape::Superellipse { .. } => {
                let kmax = self
                    .boundary_samples(2048)
                    .iter()
                    .fold(R::zero(), |m, b| m.max(b.curvature));
                (R::one() / kmax).min(self.inradius())
            }
        }
    }

    fn theta(&self, k: usize, n: usize) -> R {
        R::lit(std::f64::consts::TAU * k as f64 / n as f64)
    }

    /// Boundary point at parameter `theta` (counter-clockwise).
    pub fn boundary_param(&self, theta: R) -> Vec2<R> {
        let (c, s) = (theta.cos(), theta.sin());
        match self.shape {
            Shape::Disc { center, radius } => center + Vec2::new(c, s) * radius,
            Shape::Ellipse { center, a, b } => center + Vec2::new(a * c, b * s),
            Shape::Superellipse { center, a, b, n } => {
                let e = R::lit(2.0 / n as f64);
                let sg = |v: R| if v < R::zero() { -R::one() } else { R::one() };
                center + Vec2::new(a * sg(c) * c.abs().powf(e), b * sg(s) * s.abs().powf(e))
            }
        }
    }

    fn boundary_point_at(&self, p: Vec2<R>) -> BoundaryPoint<R> {
        let (_, g, h) = self.phi_derivs(p);
        let gn = g.norm();
        let normal = g * (R::one() / gn);
        let t = normal.perp();
        BoundaryPoint {
            point: p,
            normal,
            curvature: h.quad(t, t) / gn,
        }
    }

    /// `n` boundary samples, evenly spaced in the boundary parameter.
    pub fn boundary_samples(&self, n: usize) -> Vec<BoundaryPoint<R>> {
        (0..n)
            .map(|k| self.boundary_point_at(self.boundary_param(self.theta(k, n))))
            .collect()
    }

    /// Uniform random interior points by rejection from the bounding box.
    pub fn sample_interior(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec2<R>> {
        let b = self.bbox();
        let (x0, x1) = (b.min.x.as_f64(), b.max.x.as_f64());
        let (y0, y1) = (b.min.y.as_f64(), b.max.y.as_f64());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let p = Vec2::new(R::lit(rng.gen_range(x0..x1)), R::lit(rng.gen_range(y0..y1)));
            if self.contains(p) {
                out.push(p);
            }
        }
        out
    }

    /// Random points of the closure: three quarters interior, one quarter on the boundary.
    pub fn sample_closure(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec2<R>> {
        let nb = n / 4;
        let mut pts = self.sample_interior(n - nb, rng);
        for _ in 0..nb {
            let t = R::lit(rng.gen_range(0.0..std::f64::consts::TAU));
            pts.push(self.boundary_param(t));
        }
        pts
    }

    /// Nearest boundary point, normal, curvature and signed distance.
    pub fn project(&self, p: Vec2<R>) -> Foot<R> {
        let inside = self.contains(p);
        let point = match self.shape {
            Shape::Disc { center, radius } => {
                let d = p - center;
                let r = d.norm();
                let dir = if r > R::zero() {
                    d * (R::one() / r)
                } else {
                    Vec2::new(R::one(), R::zero())
                };
                center + dir * radius
            }
            _ => self.project_newton(p),
        };
        let bp = self.boundary_point_at(point);
        let dist = (p - point).norm();
        Foot {
            point,
            normal: bp.normal,
            curvature: bp.curvature,
            distance: if inside { dist } else { -dist },
        }
    }

    /// Signed distance, positive inside.
    pub fn distance(&self, p: Vec2<R>) -> R {
        self.project(p).distance
    }

    /// Outward normal of the nearest boundary point.
    pub fn normal(&self, p: Vec2<R>) -> Vec2<R> {
        self.project(p).normal
    }

    /// Closest point on the zero level set by Lagrange–Newton from five seeds.
    fn project_newton(&self, p: Vec2<R>) -> Vec2<R> {
        let c = self.center();
        let d = p - c;
        let mut seeds = Vec::with_capacity(5);
        if d.norm() > R::zero() {
            seeds.push(self.boundary_param(d.y.atan2(d.x)));
        }
        for k in 0..4 {
            seeds.push(self.boundary_param(self.theta(k, 4) + R::lit(0.25)));
        }
        let mut best: Option<(R, Vec2<R>)> = None;
        for s in seeds {
            if let Some(z) = self.lagrange_newton(p, s) {
                let dd = (z - p).norm();
                if best.map_or(true, |(b, _)| dd < b) {
                    best = Some((dd, z));
                }
            }
        }
        best.map(|(_, z)| z).unwrap_or_else(|| self.boundary_param(d.y.atan2(d.x)))
    }

    fn lagrange_newton(&self, p: Vec2<R>, seed: Vec2<R>) -> Option<Vec2<R>> {
        let mut z = seed;
        let (_, g, _) = self.phi_derivs(z);
        let mut mu = -(z - p).dot(g) / g.norm_sq();
        let scale = self.inradius();
        for _ in 0..60 {
            let (f, g, h) = self.phi_derivs(z);
            let r = z - p + g * mu;
            if r.norm_inf() <= R::tol(1e-14) * scale && f.abs() <= R::tol(1e-14) {
                return Some(z);
            }
            let m = Mat2::identity() + h.scale(mu);
            let rows = [
                [m.m[0][0], m.m[0][1], g.x],
                [m.m[1][0], m.m[1][1], g.y],
                [g.x, g.y, R::zero()],
            ];
            let sol = lstsq(&rows, &[-r.x, -r.y, -f])?;
            let step = Vec2::new(sol.coeffs[0], sol.coeffs[1]);
            // limit steps to a fraction of the domain size
            let len = step.norm();
            let cap = scale * R::lit(0.5);
            let fac = if len > cap { cap / len } else { R::one() };
            z = z + step * fac;
            mu = mu + sol.coeffs[2] * fac;
            if !z.is_finite() {
                return None;
            }
        }
        let (f, g, _) = self.phi_derivs(z);
        let r = z - p + g * mu;
        (r.norm_inf() <= R::tol(1e-10) * scale && f.abs() <= R::tol(1e-10)).then_some(z)
    }

    /// Gradient and Hessian of the signed distance (positive inside) at `p`,
    /// valid within the reach of the boundary.
    pub fn distance_derivs(&self, p: Vec2<R>) -> (Foot<R>, Vec2<R>, Mat2<R>) {
        let foot = self.project(p);
        let n = foot.normal;
        let t = n.perp();
        let k = foot.curvature;
        let hess = t.outer(t).scale(-k / (R::one() - k * foot.distance));
        (foot, -n, hess)
    }

    /// Quadrature weight of the cell `[x ± h/2] × [y ± h/2]` inside the domain,
    /// by `sub × sub` midpoint subsampling of cut cells.
    pub fn cell_area(&self, center: Vec2<R>, h: R, sub: usize) -> R {
        let half = h * R::lit(0.5);
        let diag = h * R::lit(std::f64::consts::FRAC_1_SQRT_2);
        let dist = self.distance(center);
        if dist >= diag {
            return h * h;
        }
        if dist <= -diag {
            return R::zero();
        }
        let step = h / R::lit(sub as f64);
        let mut count = 0usize;
        for i in 0..sub {
            for j in 0..sub {
                let p = center - Vec2::new(half, half)
                    + Vec2::new(step * R::lit(i as f64 + 0.5), step * R::lit(j as f64 + 0.5));
                if self.contains(p) {
                    count += 1;
                }
            }
        }
        h * h * R::lit(count as f64 / (sub * sub) as f64)
    }
}

/// Which side of the transport problem a domain sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `Ω`, paired with cost corrections `c^{l,k} c_{ij,l}`.
    Source,
    /// `Ω*`, paired with cost corrections `c^{k,l} c_{l,ij}`.
    Target,
}

fn convexity_correction<R: Real>(
    cost: &CostModel<R>,
    side: Side,
    at: Vec2<R>,
    other: Vec2<R>,
    v: Vec2<R>,
) -> Result<Mat2<R>, CostError> {
    let (x, y) = match side {
        Side::Source => (at, other),
        Side::Target => (other, at),
    };
    let jet = cost.jet(x, y);
    let corr = match side {
        Side::Source => CostModel::source_convexity_correction(&jet, v),
        Side::Target => CostModel::target_convexity_correction(&jet, v),
    };
    corr.ok_or(CostError::SingularJacobian {
        x0: x.x.as_f64(),
        x1: x.y.as_f64(),
        y0: y.x.as_f64(),
        y1: y.y.as_f64(),
    })
}

fn boundary_convexity<R: Real>(
    dom: &DomainSpec<R>,
    other: &DomainSpec<R>,
    cost: &CostModel<R>,
    side: Side,
    samples: usize,
) -> Result<SampledMin<R>, CostError> {
    let bps = dom.boundary_samples(samples);
    let others: Vec<Vec2<R>> = lattice_samples(other, (samples / 4).max(8));
    let mut min = SampledMin::empty();
    for bp in &bps {
        let tau = bp.tangent();
        for &o in &others {
            let corr = convexity_correction(cost, side, bp.point, o, bp.normal)?;
            let val = bp.curvature - corr.quad(tau, tau);
            match side {
                Side::Source => min.offer(val, bp.point, o),
                Side::Target => min.offer(val, o, bp.point),
            }
        }
    }
    Ok(min)
}

/// Deterministic sample of a closed domain: a polar lattice plus the boundary.
pub fn lattice_samples<R: Real>(dom: &DomainSpec<R>, n: usize) -> Vec<Vec2<R>> {
    let rings = 4usize;
    let per_ring = (n / (rings + 1)).max(4);
    let c = dom.center();
    let mut pts = vec![c];
    for r in 1..=rings {
        let s = R::lit(r as f64 / rings as f64);
        for k in 0..per_ring {
            let b = dom.boundary_param(R::lit(std::f64::consts::TAU * (k as f64 + 0.5 * r as f64) / per_ring as f64));
            pts.push(c + (b - c) * s);
        }
    }
    pts
}

/// Sampled `δ₁`: the minimum over boundary points `x ∈ ∂Ω`, `y ∈ Ω̄*` and unit
/// tangents of `[D_iν_j − c^{l,k} c_{ij,l} ν_k] τ_i τ_j`.
pub fn audit_uniform_c_convexity<R: Real>(
    source: &DomainSpec<R>,
    target: &DomainSpec<R>,
    cost: &CostModel<R>,
    samples: usize,
) -> Result<SampledMin<R>, CostError> {
    boundary_convexity(source, target, cost, Side::Source, samples)
}

/// Sampled `δ₁*`, the mirror of [`audit_uniform_c_convexity`] on `∂Ω*`.
pub fn audit_uniform_cstar_convexity<R: Real>(
    target: &DomainSpec<R>,
    source: &DomainSpec<R>,
    cost: &CostModel<R>,
    samples: usize,
) -> Result<SampledMin<R>, CostError> {
    boundary_convexity(target, source, cost, Side::Target, samples)
}

/// Point on the c-segment with respect to `y` between `x1` and `x2`.
pub fn c_segment<R: Real>(
    cost: &CostModel<R>,
    y: Vec2<R>,
    x1: Vec2<R>,
    x2: Vec2<R>,
    s: R,
) -> Result<Vec2<R>, CostError> {
    let q = cost.grad_y(x1, y) * (R::one() - s) + cost.grad_y(x2, y) * s;
    cost.x_from_q_from(q, y, x1 * (R::one() - s) + x2 * s)
}

/// `h(x) = C d(x)² − d(x)` on the collar `{0 ≤ d < ε}`, continued inward by a
/// quintic ramp that reaches a negative constant at `d = 2ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDefiningFunction<R> {
    pub domain: DomainSpec<R>,
    pub side: Side,
    /// Weight of the `d²` term.
    pub c: R,
    /// Collar width.
    pub eps: R,
    /// Certified lower bound of the convexity form on the collar (`δ₁/8`).
    pub delta0: R,
    /// Boundary convexity `δ₁` the construction started from.
    pub delta1: R,
    ramp_end: R,
}

impl<R: Real> ExtendedDefiningFunction<R> {
    fn new(domain: DomainSpec<R>, side: Side, c: R, eps: R, delta1: R) -> Self {
        let v0 = c * eps * eps - eps;
        let m0 = R::lit(2.0) * c * eps - R::one();
        Self {
            domain,
            side,
            c,
            eps,
            delta0: delta1 / R::lit(8.0),
            delta1,
            ramp_end: v0 + m0 * eps * R::lit(0.5),
        }
    }

    /// Profile `ψ(d)` and its first two derivatives.
    pub fn profile(&self, d: R) -> (R, R, R) {
        let two = R::lit(2.0);
        if d <= self.eps {
            return (self.c * d * d - d, two * self.c * d - R::one(), two * self.c);
        }
        let len = self.eps;
        if d >= self.eps + len {
            return (self.ramp_end, R::zero(), R::zero());
        }
        let v0 = self.c * self.eps * self.eps - self.eps;
        let m0 = two * self.c * self.eps - R::one();
        let k0 = two * self.c;
        let s = (d - self.eps) / len;
        let (s2, s3) = (s * s, s * s * s);
        let (s4, s5) = (s3 * s, s3 * s2);
        let l = |v: f64| R::lit(v);
        let h0 = R::one() - l(10.0) * s3 + l(15.0) * s4 - l(6.0) * s5;
        let h1 = s - l(6.0) * s3 + l(8.0) * s4 - l(3.0) * s5;
        let h2 = l(0.5) * s2 - l(1.5) * s3 + l(1.5) * s4 - l(0.5) * s5;
        let h5 = l(10.0) * s3 - l(15.0) * s4 + l(6.0) * s5;
        let dh0 = -l(30.0) * s2 + l(60.0) * s3 - l(30.0) * s4;
        let dh1 = R::one() - l(18.0) * s2 + l(32.0) * s3 - l(15.0) * s4;
        let dh2 = s - l(4.5) * s2 + l(6.0) * s3 - l(2.5) * s4;
        let ddh0 = -l(60.0) * s + l(180.0) * s2 - l(120.0) * s3;
        let ddh1 = -l(36.0) * s + l(96.0) * s2 - l(60.0) * s3;
        let ddh2 = R::one() - l(9.0) * s + l(18.0) * s2 - l(10.0) * s3;
        let v = v0 * h0 + len * m0 * h1 + len * len * k0 * h2 + self.ramp_end * h5;
        let dv = (v0 * dh0 + len * m0 * dh1 + len * len * k0 * dh2 - self.ramp_end * dh0) / len;
        let ddv = (v0 * ddh0 + len * m0 * ddh1 + len * len * k0 * ddh2 - self.ramp_end * ddh0) / (len * len);
        (v, dv, ddv)
    }

    pub fn value(&self, x: Vec2<R>) -> R {
        self.profile(self.domain.distance(x)).0
    }

    /// `(h, ∇h, D²h)` at `x`.
    pub fn derivs(&self, x: Vec2<R>) -> (R, Vec2<R>, Mat2<R>) {
        let (foot, gd, hd) = self.domain.distance_derivs(x);
        let (v, dv, ddv) = self.profile(foot.distance);
        (v, gd * dv, hd.scale(dv) + gd.outer(gd).scale(ddv))
    }

    /// Minimum eigenvalue of `D²h − c-correction(∇h)` at `x` against a point of the other domain.
    pub fn convexity_form_min(&self, cost: &CostModel<R>, x: Vec2<R>, other: Vec2<R>) -> Result<R, CostError> {
        let (_, g, h) = self.derivs(x);
        let corr = convexity_correction(cost, self.side, x, other, g)?;
        Ok((h - corr).sym_eigenvalues().0)
    }

    /// Sampled minimum of the collar convexity form at `density` boundary
    /// samples and `depths` depth levels in `[0, ε)`.
    pub fn audit_collar(
        &self,
        cost: &CostModel<R>,
        other: &DomainSpec<R>,
        density: usize,
        depths: usize,
    ) -> Result<SampledMin<R>, CostError> {
        collar_min(&self.domain, other, cost, self.side, self.c, self.eps, density, depths)
    }
}

#[allow(clippy::too_many_arguments)]
fn collar_min<R: Real>(
    dom: &DomainSpec<R>,
    other: &DomainSpec<R>,
    cost: &CostModel<R>,
    side: Side,
    c: R,
    eps: R,
    density: usize,
    depths: usize,
) -> Result<SampledMin<R>, CostError> {
    let probe = ExtendedDefiningFunction::new(dom.clone(), side, c, eps, R::one());
    let others = lattice_samples(other, (density / 4).max(8));
    let mut min = SampledMin::empty();
    for bp in dom.boundary_samples(density) {
        for k in 0..depths {
            let d = eps * R::lit(k as f64 / depths as f64);
            let x = bp.point - bp.normal * d;
            for &o in &others {
                let v = probe.convexity_form_min(cost, x, o)?;
                min.offer(v, x, o);
            }
        }
    }
    Ok(min)
}

/// Parameters of the extended defining function search.
#[derive(Debug, Clone, Copy)]
pub struct ExtensionBudget<R> {
    /// Boundary samples per audit.
    pub boundary_samples: usize,
    /// Depth levels sampled across the collar.
    pub depths: usize,
    /// Smallest acceptable collar width.
    pub min_collar: R,
}

impl<R: Real> Default for ExtensionBudget<R> {
    fn default() -> Self {
        Self {
            boundary_samples: 256,
            depths: 8,
            min_collar: R::zero(),
        }
    }
}

/// Largest number of doublings of `C` tried before giving up.
pub const MAX_C_DOUBLINGS: u32 = 20;

/// Chooses `C` by doubling from `1/δ₁` until the boundary form is at least
/// `δ₁/2`, then halves the collar width from the reach until the collar form
/// is at least `δ₀ = δ₁/8`, `h < 0` on the collar and `Cε ≤ 1/4`.
pub fn build_extended_defining<R: Real>(
    dom: &DomainSpec<R>,
    other: &DomainSpec<R>,
    cost: &CostModel<R>,
    side: Side,
    delta1: R,
    budget: ExtensionBudget<R>,
) -> Result<ExtendedDefiningFunction<R>, DomainError> {
    if !(delta1 > R::zero()) {
        return Err(DomainError::NoAdmissibleC {
            cap: 0.0,
            margin: delta1.as_f64(),
        });
    }
    let c0 = R::one() / delta1;
    let mut c = c0;
    let mut margin = R::neg_infinity();
    let mut found = false;
    for _ in 0..=MAX_C_DOUBLINGS {
        margin = collar_min(dom, other, cost, side, c, R::one(), budget.boundary_samples, 1)?.value;
        if margin >= delta1 * R::lit(0.5) {
            found = true;
            break;
        }
        c = c * R::lit(2.0);
    }
    if !found {
        return Err(DomainError::NoAdmissibleC {
            cap: (c0 * R::lit(2f64.powi(MAX_C_DOUBLINGS as i32))).as_f64(),
            margin: margin.as_f64(),
        });
    }
    let delta0 = delta1 / R::lit(8.0);
    let mut eps = dom.reach();
    while eps >= budget.min_collar && eps > R::zero() {
        let shape_ok = c * eps <= R::lit(0.25);
        if shape_ok {
            let m = collar_min(dom, other, cost, side, c, eps, budget.boundary_samples, budget.depths)?;
            if m.value >= delta0 {
                return Ok(ExtendedDefiningFunction::new(dom.clone(), side, c, eps, delta1));
            }
        }
        eps = eps * R::lit(0.5);
    }
    Err(DomainError::CollarTooThin {
        eps: eps.as_f64(),
        min: budget.min_collar.as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64) -> Vec2<f64> {
        Vec2::new(x, y)
    }

    fn unit_disc() -> DomainSpec<f64> {
        DomainSpec::make("disc", &[1.0]).unwrap()
    }

    #[test]
    fn disc_distance_and_normal() {
        let d = unit_disc();
        assert!((d.distance(v(0.3, 0.4)) - 0.5).abs() < 1e-15);
        let f = d.project(v(0.0, 2.0));
        assert!((f.normal - v(0.0, 1.0)).norm() < 1e-15);
        assert!((f.distance + 1.0).abs() < 1e-15);
        assert!((f.curvature - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ellipse_axis_and_center_distance() {
        let e = DomainSpec::<f64>::make("ellipse", &[2.0, 0.5]).unwrap();
        let f = e.project(v(2.0, 0.0));
        assert!(f.distance.abs() < 1e-12);
        assert!((f.normal - v(1.0, 0.0)).norm() < 1e-10);
        assert!((e.distance(v(0.0, 0.0)) - 0.5).abs() < 1e-10);
        // dense boundary sampling oracle at an off-axis point
        let p = v(0.7, 0.1);
        let brute = (0..200_000)
            .map(|k| (e.boundary_param(std::f64::consts::TAU * k as f64 / 200_000.0) - p).norm())
            .fold(f64::INFINITY, f64::min);
        assert!((e.distance(p) - brute).abs() < 1e-8);
    }

    #[test]
    fn make_rejects_bad_input() {
        assert!(matches!(
            DomainSpec::<f64>::make("disc", &[-1.0]),
            Err(DomainError::BadParameters { .. })
        ));
        assert!(matches!(
            DomainSpec::<f64>::make("square", &[1.0]),
            Err(DomainError::NonSmooth(_))
        ));
        assert!(DomainSpec::<f64>::make("blob", &[1.0]).is_err());
        assert!(DomainSpec::<f64>::make("superellipse-smooth", &[1.0, 1.0, 3.0]).is_err());
    }

    #[test]
    fn normals_match_defining_function_gradient() {
        for dom in [
            unit_disc(),
            DomainSpec::make("ellipse", &[2.0, 0.5]).unwrap(),
            DomainSpec::make("superellipse-smooth", &[1.0, 0.8, 4.0]).unwrap(),
        ] {
            for bp in dom.boundary_samples(64) {
                let f = dom.project(bp.point);
                assert!(f.distance.abs() < 1e-10);
                assert!((f.normal - bp.normal).norm() < 1e-6);
                // ∇(−d) = ν by central differences
                let h = 1e-6;
                let g = v(
                    -(dom.distance(bp.point + v(h, 0.0)) - dom.distance(bp.point - v(h, 0.0))) / (2.0 * h),
                    -(dom.distance(bp.point + v(0.0, h)) - dom.distance(bp.point - v(0.0, h))) / (2.0 * h),
                );
                assert!((g - bp.normal).norm() < 1e-6, "{g:?} vs {:?}", bp.normal);
            }
        }
    }

    #[test]
    fn quadrature_reproduces_disc_area() {
        let d = unit_disc();
        let h = 2.0 / 64.0;
        let mut area = 0.0;
        for i in -40..=40 {
            for j in -40..=40 {
                area += d.cell_area(v(i as f64 * h, j as f64 * h), h, 32);
            }
        }
        assert!((area - std::f64::consts::PI).abs() < 1e-4, "{area}");
    }

    #[test]
    fn convexity_audits_match_curvature() {
        let disc = unit_disc();
        for cost in [CostModel::<f64>::bilinear(), CostModel::quadratic()] {
            let a = audit_uniform_c_convexity(&disc, &disc, &cost, 64).unwrap();
            assert!((a.value - 1.0).abs() < 1e-12);
            let b = audit_uniform_cstar_convexity(&disc, &disc, &cost, 64).unwrap();
            assert!((b.value - 1.0).abs() < 1e-12);
        }
        let cost = CostModel::<f64>::bilinear();
        // ellipse curvature ab/(a²sin²θ+b²cos²θ)^{3/2} is minimal at the minor axis ends: b/a²
        let ell = DomainSpec::make("ellipse", &[2.0, 0.5]).unwrap();
        let oracle = (0..100_000)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 100_000.0;
                1.0 / (4.0 * t.sin().powi(2) + 0.25 * t.cos().powi(2)).powf(1.5)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((oracle - 0.125).abs() < 1e-9);
        let a = audit_uniform_c_convexity(&ell, &disc, &cost, 256).unwrap();
        assert!((a.value - 0.125).abs() < 1e-9, "{}", a.value);
        let tgt = DomainSpec::make("ellipse", &[1.2, 0.9]).unwrap();
        let b = audit_uniform_cstar_convexity(&tgt, &disc, &cost, 256).unwrap();
        assert!((b.value - 0.625).abs() < 1e-9, "{}", b.value);
    }

    #[test]
    fn c_segment_endpoints_and_bilinear_line() {
        let cost = CostModel::<f64>::bilinear();
        let (y, x1, x2) = (v(0.1, 0.2), v(-0.5, 0.3), v(0.4, -0.6));
        assert!((c_segment(&cost, y, x1, x2, 0.0).unwrap() - x1).norm() < 1e-12);
        assert!((c_segment(&cost, y, x1, x2, 1.0).unwrap() - x2).norm() < 1e-12);
        let m = c_segment(&cost, y, x1, x2, 0.3).unwrap();
        assert!((m - (x1 * 0.7 + x2 * 0.3)).norm() < 1e-12);
    }

    #[test]
    fn sqrt_c_segments_stay_inside_disc() {
        let cost = CostModel::<f64>::sqrt();
        let disc = unit_disc();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pts = disc.sample_interior(3, &mut rng);
            for k in 0..=100 {
                let s = k as f64 / 100.0;
                let z = c_segment(&cost, pts[0], pts[1], pts[2], s).unwrap();
                assert!(z.norm() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn extended_defining_function_on_unit_disc() {
        let disc = unit_disc();
        let cost = CostModel::<f64>::bilinear();
        let h = build_extended_defining(&disc, &disc, &cost, Side::Source, 1.0, ExtensionBudget::default()).unwrap();
        assert!(h.c >= 1.0);
        assert!((h.delta0 - 0.125).abs() < 1e-15);
        // property 1: ∇h = ν on the boundary
        for bp in disc.boundary_samples(32) {
            let (val, g, _) = h.derivs(bp.point);
            assert!(val.abs() < 1e-12);
            assert!((g - bp.normal).norm() < 1e-6);
        }
        // property 2: negative on the collar and inside
        for k in 1..100 {
            let x = v(1.0 - k as f64 / 100.0, 0.0);
            assert!(h.value(x) < 0.0);
        }
        assert!(h.value(v(0.0, 0.0)) < 0.0);
        // property 3, and at 4x density the margin stays above δ₀/2
        let m = h.audit_collar(&cost, &disc, 1024, 16).unwrap();
        assert!(m.value >= h.delta0 * 0.5, "{}", m.value);
    }

    #[test]
    fn profile_is_c2_and_monotone() {
        let disc = unit_disc();
        let cost = CostModel::<f64>::bilinear();
        let h = build_extended_defining(&disc, &disc, &cost, Side::Source, 1.0, ExtensionBudget::default()).unwrap();
        let e = h.eps;
        let below = h.profile(e - 1e-12);
        let above = h.profile(e + 1e-12);
        assert!((below.0 - above.0).abs() < 1e-9);
        assert!((below.1 - above.1).abs() < 1e-9);
        assert!((below.2 - above.2).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for k in 0..=400 {
            let (val, _, _) = h.profile(3.0 * e * k as f64 / 400.0);
            assert!(val <= prev + 1e-15);
            prev = val;
        }
    }

    #[test]
    fn collar_too_thin_is_reported() {
        let disc = unit_disc();
        let cost = CostModel::<f64>::bilinear();
        let budget = ExtensionBudget {
            min_collar: 0.9,
            ..ExtensionBudget::default()
        };
        let err = build_extended_defining(&disc, &disc, &cost, Side::Source, 1.0, budget).unwrap_err();
        assert!(matches!(err, DomainError::CollarTooThin { .. }));
    }
}
