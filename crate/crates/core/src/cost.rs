//! Transport costs, their derivative jets, the inverse gradient maps `Y`/`X`
//! and the structure functions `A`, `B` of the flow.
//!
//! Index conventions: `c_{ij}` is the x-Hessian, `c_{i,j} = ∂x_i ∂y_j c` the
//! cross-Hessian (row index from x, column index from y), `c_{ij,l}` has two
//! x-derivatives and one y-derivative, `c_{l,ij}` one x- and two
//! y-derivatives. The inverse `c^{l,k}` of the cross-Hessian carries its row
//! index in y and column index in x, so that `∂Y^l/∂p_k = c^{l,k}`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::domain::DomainSpec;
use crate::linalg::{Aabb, Mat2, Tensor3, Vec2};
use crate::scalar::Real;

/// Iteration cap for the Newton inversions of `∇ₓc` and `∇_y c`.
pub const NEWTON_MAX_ITERS: usize = 50;
/// Absolute per-component residual accepted by the Newton inversions.
pub const NEWTON_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("gradient inversion did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("cross-Hessian singular at x=({x0}, {x1}), y=({y0}, {y1})")]
    SingularJacobian { x0: f64, x1: f64, y0: f64, y1: f64 },
}

/// All derivatives of the cost needed by the solver at one pair `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostJet<R> {
    pub c: R,
    /// `∇ₓc`
    pub dx: Vec2<R>,
    /// `∇_y c`
    pub dy: Vec2<R>,
    /// `c_{ij}`
    pub dxx: Mat2<R>,
    /// `c_{i,j}`
    pub dxy: Mat2<R>,
    /// `∂y_i ∂y_j c`, used by the dual structure matrix.
    pub dyy: Mat2<R>,
    /// `c_{ij,l}` stored as `t[i][j][l]`.
    pub dxxy: Tensor3<R>,
    /// `c_{l,ij}` stored as `t[l][i][j]`.
    pub dxyy: Tensor3<R>,
}

/// Analytic supplier of a cost and its derivatives up to third order.
pub trait CostFunction<R: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: Vec2<R>, y: Vec2<R>) -> R;

    fn jet(&self, x: Vec2<R>, y: Vec2<R>) -> CostJet<R>;

    fn grad_x(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        self.jet(x, y).dx
    }

    fn grad_y(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        self.jet(x, y).dy
    }

    fn cross_hessian(&self, x: Vec2<R>, y: Vec2<R>) -> Mat2<R> {
        self.jet(x, y).dxy
    }
}

/// `c(x, y) = x·y`
#[derive(Debug, Clone, Copy, Default)]
pub struct BilinearCost;

impl<R: Real> CostFunction<R> for BilinearCost {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn value(&self, x: Vec2<R>, y: Vec2<R>) -> R {
        x.dot(y)
    }

    fn jet(&self, x: Vec2<R>, y: Vec2<R>) -> CostJet<R> {
        CostJet {
            c: x.dot(y),
            dx: y,
            dy: x,
            dxx: Mat2::zero(),
            dxy: Mat2::identity(),
            dyy: Mat2::zero(),
            dxxy: Tensor3::zero(),
            dxyy: Tensor3::zero(),
        }
    }

    fn grad_x(&self, _x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        y
    }

    fn grad_y(&self, x: Vec2<R>, _y: Vec2<R>) -> Vec2<R> {
        x
    }

    fn cross_hessian(&self, _x: Vec2<R>, _y: Vec2<R>) -> Mat2<R> {
        Mat2::identity()
    }
}

/// `c(x, y) = −|x − y|²/2`
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticCost;

impl<R: Real> CostFunction<R> for QuadraticCost {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn value(&self, x: Vec2<R>, y: Vec2<R>) -> R {
        -(x - y).norm_sq() * R::lit(0.5)
    }

    fn jet(&self, x: Vec2<R>, y: Vec2<R>) -> CostJet<R> {
        let neg_i = Mat2::identity().scale(-R::one());
        CostJet {
            c: self.value(x, y),
            dx: y - x,
            dy: x - y,
            dxx: neg_i,
            dxy: Mat2::identity(),
            dyy: neg_i,
            dxxy: Tensor3::zero(),
            dxyy: Tensor3::zero(),
        }
    }

    fn grad_x(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        y - x
    }

    fn grad_y(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        x - y
    }

    fn cross_hessian(&self, _x: Vec2<R>, _y: Vec2<R>) -> Mat2<R> {
        Mat2::identity()
    }
}

/// `c(x, y) = −√(1 + |x − y|²)`
#[derive(Debug, Clone, Copy, Default)]
pub struct SqrtCost;

impl SqrtCost {
    /// `∂_i∂_j s` for `s(r) = √(1+|r|²)`.
    fn hess_s<R: Real>(r: Vec2<R>, s: R) -> Mat2<R> {
        let s3 = s * s * s;
        let rr = r.outer(r).scale(R::one() / s3);
        Mat2::identity().scale(R::one() / s) - rr
    }

    /// `∂_i∂_j∂_k s`.
    fn third_s<R: Real>(r: Vec2<R>, s: R) -> Tensor3<R> {
        let s3 = s * s * s;
        let s5 = s3 * s * s;
        let three = R::lit(3.0);
        let d = |a: usize, b: usize| if a == b { R::one() } else { R::zero() };
        let mut t = Tensor3::zero();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let (ri, rj, rk) = (r.get(i), r.get(j), r.get(k));
                    t.t[i][j][k] = -(d(i, j) * rk + d(i, k) * rj + d(j, k) * ri) / s3
                        + three * ri * rj * rk / s5;
                }
            }
        }
        t
    }
}

impl<R: Real> CostFunction<R> for SqrtCost {
    fn name(&self) -> &str {
        "sqrt"
    }

    fn value(&self, x: Vec2<R>, y: Vec2<R>) -> R {
        -(R::one() + (x - y).norm_sq()).sqrt()
    }

    fn jet(&self, x: Vec2<R>, y: Vec2<R>) -> CostJet<R> {
        let r = x - y;
        let s = (R::one() + r.norm_sq()).sqrt();
        let h = Self::hess_s(r, s);
        let t = Self::third_s(r, s);
        let mut dxyy = t;
        for l in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    dxyy.t[l][i][j] = -t.t[l][i][j];
                }
            }
        }
        CostJet {
            c: -s,
            dx: r * (-R::one() / s),
            dy: r * (R::one() / s),
            dxx: h.scale(-R::one()),
            dxy: h,
            dyy: h.scale(-R::one()),
            dxxy: t,
            dxyy,
        }
    }

    fn grad_x(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        let r = x - y;
        r * (-R::one() / (R::one() + r.norm_sq()).sqrt())
    }

    fn grad_y(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        let r = x - y;
        r * (R::one() / (R::one() + r.norm_sq()).sqrt())
    }

    fn cross_hessian(&self, x: Vec2<R>, y: Vec2<R>) -> Mat2<R> {
        let r = x - y;
        Self::hess_s(r, (R::one() + r.norm_sq()).sqrt())
    }
}

/// Where a cost is declared valid: `x` ranges over `x_box`, `y` over `y_box`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityBox<R> {
    pub x_box: Aabb<R>,
    pub y_box: Aabb<R>,
}

impl<R: Real> ValidityBox<R> {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_box: Aabb::centered(R::lit(half_width)),
            y_box: Aabb::centered(R::lit(half_width)),
        }
    }
}

/// A cost supplier together with its validity box. Immutable and cheap to clone.
#[derive(Clone)]
pub struct CostModel<R: Real> {
    func: Arc<dyn CostFunction<R>>,
    validity: ValidityBox<R>,
}

impl<R: Real> fmt::Debug for CostModel<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("name", &self.func.name())
            .field("validity", &self.validity)
            .finish()
    }
}

/// Names accepted by [`CostModel::by_name`].
pub const COST_CATALOG: [&str; 3] = ["bilinear", "quadratic", "sqrt"];

impl<R: Real> CostModel<R> {
    pub fn new(func: Arc<dyn CostFunction<R>>, validity: ValidityBox<R>) -> Self {
        Self { func, validity }
    }

    pub fn bilinear() -> Self {
        Self::new(Arc::new(BilinearCost), ValidityBox::square(1e3))
    }

    pub fn quadratic() -> Self {
        Self::new(Arc::new(QuadraticCost), ValidityBox::square(1e3))
    }

    pub fn sqrt() -> Self {
        Self::new(Arc::new(SqrtCost), ValidityBox::square(1e3))
    }

    /// Looks up a built-in cost. None of the built-ins take parameters.
    pub fn by_name(name: &str, params: &[f64]) -> Option<Self> {
        if !params.is_empty() {
            return None;
        }
        match name {
            "bilinear" => Some(Self::bilinear()),
            "quadratic" => Some(Self::quadratic()),
            "sqrt" => Some(Self::sqrt()),
            _ => None,
        }
    }

    pub fn with_validity(mut self, validity: ValidityBox<R>) -> Self {
        self.validity = validity;
        self
    }

    pub fn name(&self) -> &str {
        self.func.name()
    }

    pub fn validity(&self) -> &ValidityBox<R> {
        &self.validity
    }

    #[inline]
    pub fn value(&self, x: Vec2<R>, y: Vec2<R>) -> R {
        self.func.value(x, y)
    }

    #[inline]
    pub fn jet(&self, x: Vec2<R>, y: Vec2<R>) -> CostJet<R> {
        self.func.jet(x, y)
    }

    #[inline]
    pub fn grad_x(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        self.func.grad_x(x, y)
    }

    #[inline]
    pub fn grad_y(&self, x: Vec2<R>, y: Vec2<R>) -> Vec2<R> {
        self.func.grad_y(x, y)
    }

    #[inline]
    pub fn cross_hessian(&self, x: Vec2<R>, y: Vec2<R>) -> Mat2<R> {
        self.func.cross_hessian(x, y)
    }

    /// `Y(x, p)`: the `y` with `∇ₓc(x, y) = p`, starting Newton from the
    /// centre of the `y` validity box.
    pub fn y_from_p(&self, x: Vec2<R>, p: Vec2<R>) -> Result<Vec2<R>, CostError> {
        self.y_from_p_from(x, p, self.validity.y_box.center())
    }

    /// `Y(x, p)` with an explicit initial guess (typically the previous answer).
    pub fn y_from_p_from(&self, x: Vec2<R>, p: Vec2<R>, guess: Vec2<R>) -> Result<Vec2<R>, CostError> {
        newton_invert(
            guess,
            &self.validity.y_box,
            |y| self.grad_x(x, y) - p,
            |y| self.cross_hessian(x, y),
            |y| (x, y),
        )
    }

    /// `X(q, y)`: the `x` with `∇_y c(x, y) = q`.
    pub fn x_from_q(&self, q: Vec2<R>, y: Vec2<R>) -> Result<Vec2<R>, CostError> {
        self.x_from_q_from(q, y, self.validity.x_box.center())
    }

    pub fn x_from_q_from(&self, q: Vec2<R>, y: Vec2<R>, guess: Vec2<R>) -> Result<Vec2<R>, CostError> {
        newton_invert(
            guess,
            &self.validity.x_box,
            |x| self.grad_y(x, y) - q,
            |x| self.cross_hessian(x, y).transpose(),
            |x| (x, y),
        )
    }

    /// `A(x, p) = Hessₓ c(x, Y(x, p))`.
    pub fn structure_a(&self, x: Vec2<R>, p: Vec2<R>) -> Result<Mat2<R>, CostError> {
        let y = self.y_from_p(x, p)?;
        Ok(self.jet(x, y).dxx)
    }

    /// `B(x, p) = |det c_{i,j}| f(x) / g(Y(x, p))` with the extended target density.
    pub fn structure_b(&self, dens: &DensityPair<R>, x: Vec2<R>, p: Vec2<R>) -> Result<R, CostError> {
        let y = self.y_from_p(x, p)?;
        Ok(self.structure_b_at(dens, x, y))
    }

    /// `B` evaluated with `y = Y(x, p)` already known.
    #[inline]
    pub fn structure_b_at(&self, dens: &DensityPair<R>, x: Vec2<R>, y: Vec2<R>) -> R {
        self.cross_hessian(x, y).det().abs() * dens.f(x) / dens.g_ext(y)
    }

    /// `c^{l,k} c_{ij,l} v_k` at `(x, y)`: the cost correction in the uniform
    /// c-convexity form for the source side.
    pub fn source_convexity_correction(jet: &CostJet<R>, v: Vec2<R>) -> Option<Mat2<R>> {
        let inv = jet.dxy.inverse()?;
        // coefficient per y-index l: Σ_k c^{l,k} v_k
        let w = inv.mul_vec(v);
        Some(jet.dxxy.contract_last(w))
    }

    /// `c^{k,l} c_{l,ij} v_k` at `(x, y)`: the mirror correction for the target side.
    pub fn target_convexity_correction(jet: &CostJet<R>, v: Vec2<R>) -> Option<Mat2<R>> {
        let inv = jet.dxy.inverse()?;
        // coefficient per x-index l: Σ_k v_k c^{k,l}
        let w = inv.vec_mul(v);
        Some(jet.dxyy.contract_first(w))
    }
}

fn newton_invert<R: Real>(
    guess: Vec2<R>,
    bounds: &Aabb<R>,
    residual: impl Fn(Vec2<R>) -> Vec2<R>,
    jacobian: impl Fn(Vec2<R>) -> Mat2<R>,
    pair: impl Fn(Vec2<R>) -> (Vec2<R>, Vec2<R>),
) -> Result<Vec2<R>, CostError> {
    let tol = R::tol(NEWTON_TOL);
    let mut z = guess;
    let mut f = residual(z);
    let mut fnorm = f.norm_inf();
    for iter in 0..NEWTON_MAX_ITERS {
        if fnorm <= tol {
            // one undamped polishing step, kept unless it makes things worse
            if fnorm > R::zero() {
                if let Some(inv) = jacobian(z).inverse() {
                    let trial = z - inv.mul_vec(f);
                    if trial.is_finite() && bounds.contains(trial) && residual(trial).norm_inf() <= fnorm {
                        return Ok(trial);
                    }
                }
            }
            return Ok(z);
        }
        let j = jacobian(z);
        let det = j.det();
        let inv = match j.inverse() {
            Some(inv) if det.abs() > R::epsilon() * j.max_abs() * j.max_abs() => inv,
            _ => {
                let (x, y) = pair(z);
                return Err(CostError::SingularJacobian {
                    x0: x.x.as_f64(),
                    x1: x.y.as_f64(),
                    y0: y.x.as_f64(),
                    y1: y.y.as_f64(),
                });
            }
        };
        let step = inv.mul_vec(f);
        let mut lambda = R::one();
        let mut accepted = false;
        for _ in 0..40 {
            let trial = z - step * lambda;
            if trial.is_finite() && bounds.contains(trial) {
                let ft = residual(trial);
                let n = ft.norm_inf();
                if n < fnorm {
                    z = trial;
                    f = ft;
                    fnorm = n;
                    accepted = true;
                    break;
                }
            }
            lambda = lambda * R::lit(0.5);
        }
        if !accepted {
            return Err(CostError::NoConvergence {
                iterations: iter + 1,
                residual: fnorm.as_f64(),
            });
        }
    }
    if fnorm <= tol {
        Ok(z)
    } else {
        Err(CostError::NoConvergence {
            iterations: NEWTON_MAX_ITERS,
            residual: fnorm.as_f64(),
        })
    }
}

type Density<R> = Arc<dyn Fn(Vec2<R>) -> R + Send + Sync>;

/// Source and target densities with their plane-wide extensions.
///
/// Outside its domain a density is extended by its nearest-boundary value,
/// blended towards `λ/2 + Λ` across a collar of width `ext_width`.
#[derive(Clone)]
pub struct DensityPair<R: Real> {
    f: Density<R>,
    g: Density<R>,
    source: DomainSpec<R>,
    target: DomainSpec<R>,
    pub lambda: R,
    pub big_lambda: R,
    pub ext_width: R,
}

impl<R: Real> fmt::Debug for DensityPair<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityPair")
            .field("lambda", &self.lambda)
            .field("big_lambda", &self.big_lambda)
            .finish()
    }
}

impl<R: Real> DensityPair<R> {
    /// Builds a pair from arbitrary densities; `λ`, `Λ` are taken from
    /// samples of both densities on their domains.
    pub fn new(
        f: Density<R>,
        g: Density<R>,
        source: DomainSpec<R>,
        target: DomainSpec<R>,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut lo = R::infinity();
        let mut hi = R::neg_infinity();
        for p in source.sample_closure(samples, rng) {
            let v = f(p);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        for p in target.sample_closure(samples, rng) {
            let v = g(p);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let ext_width = R::lit(0.25) * target.inradius().min(source.inradius());
        Self {
            f,
            g,
            source,
            target,
            lambda: lo,
            big_lambda: hi,
            ext_width,
        }
    }

    /// Uniform densities carrying total masses `source_mass` and `target_mass`.
    pub fn uniform(source: DomainSpec<R>, target: DomainSpec<R>, source_mass: R, target_mass: R) -> Self {
        let fv = source_mass / source.area();
        let gv = target_mass / target.area();
        let ext_width = R::lit(0.25) * target.inradius().min(source.inradius());
        Self {
            f: Arc::new(move |_| fv),
            g: Arc::new(move |_| gv),
            source,
            target,
            lambda: fv.min(gv),
            big_lambda: fv.max(gv),
            ext_width,
        }
    }

    #[inline]
    pub fn f(&self, x: Vec2<R>) -> R {
        (self.f)(x)
    }

    #[inline]
    pub fn g(&self, y: Vec2<R>) -> R {
        (self.g)(y)
    }

    pub fn f_ext(&self, x: Vec2<R>) -> R {
        self.extend(&self.f, &self.source, x)
    }

    pub fn g_ext(&self, y: Vec2<R>) -> R {
        self.extend(&self.g, &self.target, y)
    }

    fn extend(&self, dens: &Density<R>, dom: &DomainSpec<R>, p: Vec2<R>) -> R {
        if dom.contains(p) {
            return dens(p);
        }
        let foot = dom.project(p);
        let s = (-foot.distance / self.ext_width).min(R::one()).max(R::zero());
        // C² smoothstep
        let rho = s * s * s * (R::lit(10.0) - R::lit(15.0) * s + R::lit(6.0) * s * s);
        let far = self.lambda * R::lit(0.5) + self.big_lambda;
        dens(foot.point) * (R::one() - rho) + far * rho
    }

    pub fn source(&self) -> &DomainSpec<R> {
        &self.source
    }

    pub fn target(&self) -> &DomainSpec<R> {
        &self.target
    }
}

/// Result of comparing analytic derivatives with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfCheckReport {
    pub max_rel_error: f64,
    pub worst_entry: String,
    pub trials: usize,
}

impl SelfCheckReport {
    pub const THRESHOLD: f64 = 1e-5;

    pub fn passed(&self) -> bool {
        self.max_rel_error <= Self::THRESHOLD
    }
}

/// A sampled minimum together with the `(x, y)` pair attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledMin<R> {
    pub value: R,
    pub x: Vec2<R>,
    pub y: Vec2<R>,
}

impl<R: Real> SampledMin<R> {
    pub fn empty() -> Self {
        Self {
            value: R::infinity(),
            x: Vec2::zero(),
            y: Vec2::zero(),
        }
    }

    #[inline]
    pub fn offer(&mut self, value: R, x: Vec2<R>, y: Vec2<R>) {
        if value < self.value || value.is_nan() {
            *self = Self { value, x, y };
        }
    }
}

/// Minimum of `|det c_{i,j}|` over sampled `(x, y) ∈ Ω̄ × Ω̄*`.
pub fn audit_nondegeneracy<R: Real>(
    cost: &CostModel<R>,
    source: &DomainSpec<R>,
    target: &DomainSpec<R>,
    samples: usize,
    rng: &mut impl Rng,
) -> SampledMin<R> {
    let xs = source.sample_closure(samples, rng);
    let ys = target.sample_closure(samples, rng);
    let mut min = SampledMin::empty();
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        min.offer(cost.cross_hessian(x, y).det().abs(), x, y);
    }
    min
}

/// Step for the second-order differences of `A` in `p`.
pub const MTW_FD_STEP: f64 = 1e-4;

/// Sampled minimum of `D_{p_i p_j} A_{kl} ξ_i ξ_j η_k η_l` over unit `ξ ⊥ η`.
pub fn audit_mtw<R: Real>(
    cost: &CostModel<R>,
    source: &DomainSpec<R>,
    target: &DomainSpec<R>,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<SampledMin<R>, CostError> {
    let xs = source.sample_closure(samples, rng);
    let ys = target.sample_closure(samples, rng);
    let h = R::lit(MTW_FD_STEP);
    let mut min = SampledMin::empty();
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        let p = cost.grad_x(x, y);
        let theta = R::lit(rng.gen_range(0.0..std::f64::consts::TAU));
        let xi = Vec2::new(theta.cos(), theta.sin());
        let eta = xi.perp();
        let a0 = cost.structure_a(x, p)?;
        let ap = cost.structure_a(x, p + xi * h)?;
        let am = cost.structure_a(x, p - xi * h)?;
        let d2 = (ap + am - a0.scale(R::lit(2.0))).scale(R::one() / (h * h));
        min.offer(d2.quad(eta, eta), x, y);
    }
    Ok(min)
}

/// Step for [`derivative_selfcheck`].
pub const SELFCHECK_STEP: f64 = 1e-5;

/// Compares every analytic derivative supplier with central differences
/// at random points of the validity boxes.
pub fn derivative_selfcheck<R: Real>(cost: &CostModel<R>, trials: usize, rng: &mut impl Rng) -> SelfCheckReport {
    let h = R::lit(SELFCHECK_STEP);
    let two_h = h + h;
    let vb = cost.validity();
    let sample = |b: &Aabb<R>, rng: &mut dyn rand::RngCore| {
        // keep to a unit-scale neighbourhood of the box centre
        let c = b.center();
        let hw = (b.width() * R::lit(0.5)).min(R::one()).as_f64();
        let hh = (b.height() * R::lit(0.5)).min(R::one()).as_f64();
        c + Vec2::new(R::lit(rng.gen_range(-hw..=hw)), R::lit(rng.gen_range(-hh..=hh)))
    };
    let mut worst = 0.0f64;
    let mut worst_entry = String::from("none");
    let mut record = |name: &str, analytic: R, fd: R| {
        let a = analytic.as_f64();
        let err = (a - fd.as_f64()).abs() / a.abs().max(1.0);
        if err > worst || err.is_nan() {
            worst = if err.is_nan() { f64::INFINITY } else { err };
            worst_entry = name.to_string();
        }
    };
    let e = [Vec2::new(R::one(), R::zero()), Vec2::new(R::zero(), R::one())];
    for _ in 0..trials {
        let x = sample(&vb.x_box, rng);
        let y = sample(&vb.y_box, rng);
        let jet = cost.jet(x, y);
        for k in 0..2 {
            let dk = e[k] * h;
            let jxp = cost.jet(x + dk, y);
            let jxm = cost.jet(x - dk, y);
            let jyp = cost.jet(x, y + dk);
            let jym = cost.jet(x, y - dk);
            record("dx", jet.dx.get(k), (jxp.c - jxm.c) / two_h);
            record("dy", jet.dy.get(k), (jyp.c - jym.c) / two_h);
            for i in 0..2 {
                record("dxx", jet.dxx.m[i][k], (jxp.dx.get(i) - jxm.dx.get(i)) / two_h);
                record("dxy", jet.dxy.m[i][k], (jyp.dx.get(i) - jym.dx.get(i)) / two_h);
                record("dyy", jet.dyy.m[i][k], (jyp.dy.get(i) - jym.dy.get(i)) / two_h);
                for j in 0..2 {
                    record("dxxy", jet.dxxy.t[i][j][k], (jyp.dxx.m[i][j] - jym.dxx.m[i][j]) / two_h);
                    record("dxyy", jet.dxyy.t[i][j][k], (jyp.dxy.m[i][j] - jym.dxy.m[i][j]) / two_h);
                }
            }
            record("grad_x", cost.grad_x(x, y).get(k), jet.dx.get(k));
            record("grad_y", cost.grad_y(x, y).get(k), jet.dy.get(k));
            for i in 0..2 {
                record("cross_hessian", cost.cross_hessian(x, y).m[i][k], jet.dxy.m[i][k]);
            }
        }
    }
    SelfCheckReport {
        max_rel_error: worst,
        worst_entry,
        trials,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn v(x: f64, y: f64) -> Vec2<f64> {
        Vec2::new(x, y)
    }

    #[test]
    fn bilinear_inverse_maps_are_identity() {
        let c = CostModel::<f64>::bilinear();
        let p = v(0.3, -0.7);
        let y = c.y_from_p(v(0.5, 0.1), p).unwrap();
        assert!((y - p).norm_inf() <= 1e-12);
        let x = c.x_from_q(p, v(0.2, 0.2)).unwrap();
        assert!((x - p).norm_inf() <= 1e-12);
    }

    #[test]
    fn quadratic_inverse_maps_shift_by_base_point() {
        let c = CostModel::<f64>::quadratic();
        let (x, p) = (v(0.4, -0.2), v(0.1, 0.3));
        assert!((c.y_from_p(x, p).unwrap() - (x + p)).norm_inf() < 1e-12);
        let y = v(-0.3, 0.6);
        assert!((c.x_from_q(p, y).unwrap() - (y + p)).norm_inf() < 1e-12);
    }

    #[test]
    fn sqrt_inverse_matches_closed_form_from_many_starts() {
        let c = CostModel::<f64>::sqrt();
        let x = v(0.2, -0.1);
        for &p in &[v(0.3, 0.0), v(-0.5, 0.4), v(0.1, -0.85), v(0.0, 0.0)] {
            let closed = x + p * (1.0 / (1.0 - p.norm_sq()).sqrt());
            for &g in &[v(0.0, 0.0), v(1.0, 1.0), v(-1.0, 0.5), closed] {
                let y = c.y_from_p_from(x, p, g).unwrap();
                assert!((y - closed).norm_inf() < 1e-10, "p={p:?} guess={g:?}");
                assert!((c.grad_x(x, y) - p).norm_inf() <= 1e-12);
            }
            let q = p;
            let xq = c.x_from_q(q, x).unwrap();
            assert!((xq - (x + q * (1.0 / (1.0 - q.norm_sq()).sqrt()))).norm_inf() < 1e-10);
        }
    }

    #[test]
    fn sqrt_inverse_rejects_inadmissible_gradient() {
        let c = CostModel::<f64>::sqrt();
        let err = c.y_from_p(v(0.0, 0.0), v(1.2, 0.0)).unwrap_err();
        assert!(matches!(err, CostError::NoConvergence { .. }));
    }

    #[test]
    fn singular_cross_hessian_is_reported() {
        struct Degenerate;
        impl CostFunction<f64> for Degenerate {
            fn name(&self) -> &str {
                "degenerate"
            }
            fn value(&self, x: Vec2<f64>, y: Vec2<f64>) -> f64 {
                x.x * y.x
            }
            fn jet(&self, x: Vec2<f64>, y: Vec2<f64>) -> CostJet<f64> {
                let mut j = BilinearCost.jet(x, y);
                j.dx = v(y.x, 0.0);
                j.dxy = Mat2::diag(1.0, 0.0);
                j
            }
        }
        let c = CostModel::new(Arc::new(Degenerate), ValidityBox::square(10.0));
        let err = c.y_from_p(v(0.0, 0.0), v(0.5, 0.5)).unwrap_err();
        assert!(matches!(err, CostError::SingularJacobian { .. }));
    }

    #[test]
    fn structure_a_catalog() {
        let x = v(0.1, 0.2);
        let p = v(0.3, -0.1);
        assert_eq!(CostModel::<f64>::bilinear().structure_a(x, p).unwrap(), Mat2::zero());
        assert_eq!(
            CostModel::<f64>::quadratic().structure_a(x, p).unwrap(),
            Mat2::identity().scale(-1.0)
        );
    }

    #[test]
    fn sqrt_structure_a_matches_finite_difference_hessian() {
        let c = CostModel::<f64>::sqrt();
        let x = v(0.0, 0.0);
        let p = v(0.3, 0.0);
        let a = c.structure_a(x, p).unwrap();
        let y = c.y_from_p(x, p).unwrap();
        let h = 1e-4;
        let f = |dx: f64, dy: f64| c.value(x + v(dx, dy), y);
        let fd = Mat2::new(
            (f(h, 0.0) - 2.0 * f(0.0, 0.0) + f(-h, 0.0)) / (h * h),
            (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h),
            (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h),
            (f(0.0, h) - 2.0 * f(0.0, 0.0) + f(0.0, -h)) / (h * h),
        );
        assert!((a - fd).max_abs() < 1e-6, "{a:?} vs {fd:?}");
        assert!(a.asymmetry() <= 1e-12);
    }

    #[test]
    fn derivative_selfcheck_catalog() {
        for name in COST_CATALOG {
            let c = CostModel::<f64>::by_name(name, &[]).unwrap();
            let rep = derivative_selfcheck(&c, 50, &mut rng());
            assert!(rep.passed(), "{name}: {rep:?}");
            if name != "sqrt" {
                assert!(rep.max_rel_error < 1e-8, "{name}: {rep:?}");
            }
        }
    }

    #[test]
    fn selfcheck_catches_wrong_supplier() {
        struct Broken;
        impl CostFunction<f64> for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn value(&self, x: Vec2<f64>, y: Vec2<f64>) -> f64 {
                x.dot(y)
            }
            fn jet(&self, x: Vec2<f64>, y: Vec2<f64>) -> CostJet<f64> {
                let mut j = BilinearCost.jet(x, y);
                j.dx = y * 1.01;
                j
            }
        }
        let c = CostModel::new(Arc::new(Broken), ValidityBox::square(1.0));
        assert!(!derivative_selfcheck(&c, 5, &mut rng()).passed());
    }

    #[test]
    fn uniform_densities_give_unit_b() {
        let disc = DomainSpec::<f64>::disc(v(0.0, 0.0), 1.0).unwrap();
        let dens = DensityPair::uniform(disc.clone(), disc.clone(), 1.0, 1.0);
        assert!((dens.f(v(0.1, 0.1)) - 1.0 / std::f64::consts::PI).abs() < 1e-15);
        for cost in [CostModel::<f64>::bilinear(), CostModel::quadratic()] {
            let b = cost.structure_b(&dens, v(0.2, -0.3), v(0.1, 0.2)).unwrap();
            assert!((b - 1.0).abs() < 1e-14);
        }
        // ellipse with ab = 1 onto the unit disc
        let ell = DomainSpec::<f64>::ellipse(v(0.0, 0.0), 2.0, 0.5).unwrap();
        let dens = DensityPair::uniform(ell, disc, 1.0, 1.0);
        let b = CostModel::<f64>::bilinear()
            .structure_b(&dens, v(1.0, 0.1), v(0.5, 0.2))
            .unwrap();
        assert!((b - 1.0).abs() < 1e-14);
    }

    #[test]
    fn density_extension_respects_bounds() {
        let disc = DomainSpec::<f64>::disc(v(0.0, 0.0), 1.0).unwrap();
        let ell = DomainSpec::<f64>::ellipse(v(0.0, 0.0), 1.2, 0.9).unwrap();
        let dens = DensityPair::uniform(disc, ell, 1.0, 1.3);
        let (lo, hi) = (dens.lambda, dens.big_lambda);
        for i in -30..=30 {
            for j in -30..=30 {
                let y = v(i as f64 * 0.1, j as f64 * 0.1);
                let g = dens.g_ext(y);
                assert!(g >= lo / 2.0 && g <= 2.0 * hi, "{y:?} {g}");
            }
        }
    }

    #[test]
    fn catalog_audits() {
        let disc = DomainSpec::<f64>::disc(v(0.0, 0.0), 1.0).unwrap();
        for c in [CostModel::<f64>::bilinear(), CostModel::quadratic()] {
            assert_eq!(audit_nondegeneracy(&c, &disc, &disc, 200, &mut rng()).value, 1.0);
            assert!(audit_mtw(&c, &disc, &disc, 200, &mut rng()).unwrap().value.abs() < 1e-6);
        }
        let s = CostModel::<f64>::sqrt();
        assert!(audit_nondegeneracy(&s, &disc, &disc, 500, &mut rng()).value > 1e-8);
    }

    #[test]
    fn single_precision_inversion() {
        let c = CostModel::<f32>::quadratic();
        let y = c.y_from_p(Vec2::new(0.1, 0.2), Vec2::new(0.3, 0.1)).unwrap();
        assert!((y - Vec2::new(0.4, 0.3)).norm_inf() < 1e-5);
    }
}
