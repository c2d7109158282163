//! The second boundary condition `Ḡ(x, p) = h̄*(Y(x, p)) = 0`, its oblique
//! direction `β`, and the globally p-convex barrier function `G`.

use rand::Rng;
use thiserror::Error;

use crate::cost::{CostError, CostModel, SampledMin};
use crate::domain::{
    audit_uniform_cstar_convexity, build_extended_defining, lattice_samples, DomainError, DomainSpec,
    ExtendedDefiningFunction, ExtensionBudget, Side,
};
use crate::linalg::{Mat2, Vec2};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundaryError {
    #[error("matching condition K²/C₁ < ε*/2 fails: K = {k}, C₁ = {c1}, ε* = {eps}")]
    BadConstants { k: f64, c1: f64, eps: f64 },
    #[error("target domain is not uniformly c*-convex (sampled minimum {0:e})")]
    NotCStarConvex(f64),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// `C²` smoothing of `|s|` by the quartic `αs⁴ + βs² + γ` on `[−a, a]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsSmoothing<R> {
    pub a: R,
    pub alpha: R,
    pub beta: R,
    pub gamma: R,
}

impl<R: Real> AbsSmoothing<R> {
    pub fn new(a: R) -> Self {
        Self {
            a,
            alpha: -R::one() / (R::lit(8.0) * a * a * a),
            beta: R::lit(3.0) / (R::lit(4.0) * a),
            gamma: R::lit(3.0) * a / R::lit(8.0),
        }
    }

    /// `(φ, φ', φ'')` at `s`.
    pub fn eval(&self, s: R) -> (R, R, R) {
        if s.abs() > self.a {
            return (s.abs(), s.signum(), R::zero());
        }
        let s2 = s * s;
        (
            self.alpha * s2 * s2 + self.beta * s2 + self.gamma,
            R::lit(4.0) * self.alpha * s2 * s + R::lit(2.0) * self.beta * s,
            R::lit(12.0) * self.alpha * s2 + R::lit(2.0) * self.beta,
        )
    }
}

/// Sample counts used while building and auditing the operator.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryBudget {
    pub boundary_samples: usize,
    pub depths: usize,
}

impl Default for BoundaryBudget {
    fn default() -> Self {
        Self {
            boundary_samples: 256,
            depths: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryOperator<R: Real> {
    cost: CostModel<R>,
    source: DomainSpec<R>,
    /// Extended defining function `h*` of the target.
    pub h_star: ExtendedDefiningFunction<R>,
    pub smoothing: AbsSmoothing<R>,
    /// `K > sup |∇u|`.
    pub k: R,
    /// Weight of the auxiliary quadratic `h*₁(p) = (|p|² − K²)/C₁`.
    pub c1: R,
    /// Certified p-convexity constant of `G`.
    pub delta2: R,
    /// Sampled minimum singular value of `c^{l,k}`.
    pub sigma_min: R,
}

impl<R: Real> BoundaryOperator<R> {
    /// Builds `h*`, chooses `K` and `C₁`, and certifies `δ₂*`.
    pub fn build(
        cost: &CostModel<R>,
        source: &DomainSpec<R>,
        target: &DomainSpec<R>,
        budget: BoundaryBudget,
    ) -> Result<Self, BoundaryError> {
        let d1 = audit_uniform_cstar_convexity(target, source, cost, budget.boundary_samples)?;
        if !(d1.value > R::zero()) {
            return Err(BoundaryError::NotCStarConvex(d1.value.as_f64()));
        }
        let ext = ExtensionBudget {
            boundary_samples: budget.boundary_samples,
            depths: budget.depths,
            min_collar: R::zero(),
        };
        let h_star = build_extended_defining(target, source, cost, Side::Target, d1.value, ext)?;
        let xs = lattice_samples(source, 256);
        let ys = lattice_samples(target, 256);
        let mut gmax = R::zero();
        let mut smin = R::infinity();
        for &x in &xs {
            for &y in &ys {
                gmax = gmax.max(cost.grad_x(x, y).norm());
                let inv = cost.cross_hessian(x, y).inverse().ok_or(CostError::SingularJacobian {
                    x0: x.x.as_f64(),
                    x1: x.y.as_f64(),
                    y0: y.x.as_f64(),
                    y1: y.y.as_f64(),
                })?;
                smin = smin.min(inv.singular_values().0);
            }
        }
        let k = gmax + R::one();
        let eps = h_star.eps;
        let mut c1 = R::one();
        while k * k / c1 >= eps / R::lit(4.0) {
            c1 = c1 * R::lit(2.0);
        }
        Self::assemble(cost, source, h_star, k, c1, smin)
    }

    /// Assembles the operator from explicit constants, checking the matching condition.
    pub fn assemble(
        cost: &CostModel<R>,
        source: &DomainSpec<R>,
        h_star: ExtendedDefiningFunction<R>,
        k: R,
        c1: R,
        sigma_min: R,
    ) -> Result<Self, BoundaryError> {
        let eps = h_star.eps;
        if !(c1 > R::zero()) || k * k / c1 >= eps / R::lit(2.0) {
            return Err(BoundaryError::BadConstants {
                k: k.as_f64(),
                c1: c1.as_f64(),
                eps: eps.as_f64(),
            });
        }
        let delta2 = (h_star.delta0 * sigma_min * sigma_min).min(R::one() / c1) / R::lit(2.0);
        Ok(Self {
            cost: cost.clone(),
            source: source.clone(),
            smoothing: AbsSmoothing::new(eps / R::lit(16.0)),
            h_star,
            k,
            c1,
            delta2,
            sigma_min,
        })
    }

    pub fn cost(&self) -> &CostModel<R> {
        &self.cost
    }

    pub fn target(&self) -> &DomainSpec<R> {
        &self.h_star.domain
    }

    /// Normalized defining function of the target: minus the signed distance.
    pub fn hbar_star(&self, y: Vec2<R>) -> R {
        -self.target().distance(y)
    }

    /// `Ḡ(x, p) = h̄*(Y(x, p))`.
    pub fn gbar(&self, x: Vec2<R>, p: Vec2<R>) -> Result<R, CostError> {
        Ok(self.hbar_star(self.cost.y_from_p(x, p)?))
    }

    /// `Ḡ` with a Newton guess for `Y`.
    pub fn gbar_from(&self, x: Vec2<R>, p: Vec2<R>, guess: Vec2<R>) -> Result<(R, Vec2<R>), CostError> {
        let y = self.cost.y_from_p_from(x, p, guess)?;
        Ok((self.hbar_star(y), y))
    }

    /// `β_k = h̄*_l c^{l,k}`, the gradient of `Ḡ` in `p`.
    pub fn beta(&self, x: Vec2<R>, p: Vec2<R>) -> Result<Vec2<R>, CostError> {
        let y = self.cost.y_from_p(x, p)?;
        self.beta_at(x, y)
    }

    /// `β` at a known image point `y = Y(x, p)`.
    pub fn beta_at(&self, x: Vec2<R>, y: Vec2<R>) -> Result<Vec2<R>, CostError> {
        let inv = self.cost.cross_hessian(x, y).inverse().ok_or(CostError::SingularJacobian {
            x0: x.x.as_f64(),
            x1: x.y.as_f64(),
            y0: y.x.as_f64(),
            y1: y.y.as_f64(),
        })?;
        Ok(inv.vec_mul(self.target().normal(y)))
    }

    /// `h*₁(p) = (|p|² − K²)/C₁`.
    pub fn h1(&self, p: Vec2<R>) -> R {
        (p.norm_sq() - self.k * self.k) / self.c1
    }

    /// The p-convex function `G(x, p)`: a smoothed maximum of `h*∘Y` and
    /// `h*₁` on the collar preimage, `h*₁` elsewhere.
    pub fn g(&self, x: Vec2<R>, p: Vec2<R>) -> Result<R, CostError> {
        let y = self.cost.y_from_p(x, p)?;
        let h1 = self.h1(p);
        let d = self.target().distance(y);
        if d >= self.h_star.eps {
            return Ok(h1);
        }
        let hs = self.h_star.profile(d).0;
        let half = R::lit(0.5);
        Ok((hs + h1) * half + self.smoothing.eval((hs - h1) * half).0)
    }

    /// `D²ₚₚG ξ ξ` by a central second difference with step `step`.
    pub fn g_second_difference(&self, x: Vec2<R>, p: Vec2<R>, xi: Vec2<R>, step: R) -> Result<R, CostError> {
        let e = xi * step;
        Ok((self.g(x, p + e)? - self.g(x, p)? * R::lit(2.0) + self.g(x, p - e)?) / (step * step))
    }

    /// Sampled minimum of `D²ₚₚG ξ ξ` over `trials` random `(x, y, ξ)` with
    /// `x ∈ Ω̄`, `y ∈ Ω̄*`, `p = ∇ₓc(x, y)`.
    pub fn audit_g_convexity(&self, trials: usize, rng: &mut impl Rng) -> Result<SampledMin<R>, CostError> {
        let xs = self.source.sample_closure(trials, rng);
        let ys = self.target().sample_closure(trials, rng);
        let step = self.smoothing.a * R::lit(0.05);
        let mut min = SampledMin::empty();
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = self.cost.grad_x(x, y);
            let th = R::lit(rng.gen_range(0.0..std::f64::consts::TAU));
            let xi = Vec2::new(th.cos(), th.sin());
            min.offer(self.g_second_difference(x, p, xi, step)?, x, y);
        }
        Ok(min)
    }

    /// Minimum of `⟨β(x, p), ν⟩` over boundary data `(x, p, ν)`; NaN or failed
    /// evaluations count as `−∞`.
    pub fn obliqueness_margin<I>(&self, nodes: I) -> R
    where
        I: IntoIterator<Item = (Vec2<R>, Vec2<R>, Vec2<R>)>,
    {
        let mut m = R::infinity();
        for (x, p, nu) in nodes {
            let v = match self.beta(x, p) {
                Ok(b) => b.dot(nu),
                Err(_) => R::neg_infinity(),
            };
            m = if v.is_nan() { R::neg_infinity() } else { m.min(v) };
        }
        m
    }
}

/// `χ = ⟨β, ν⟩ / (w⁻¹ ν ν)`; NaN if `w` is singular.
pub fn chi<R: Real>(beta: Vec2<R>, nu: Vec2<R>, w: &Mat2<R>) -> R {
    match w.inverse() {
        Some(inv) => beta.dot(nu) / inv.quad(nu, nu),
        None => R::nan(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64) -> Vec2<f64> {
        Vec2::new(x, y)
    }

    fn disc() -> DomainSpec<f64> {
        DomainSpec::make("disc", &[1.0]).unwrap()
    }

    fn op(cost: CostModel<f64>) -> BoundaryOperator<f64> {
        BoundaryOperator::build(&cost, &disc(), &disc(), BoundaryBudget::default()).unwrap()
    }

    #[test]
    fn smoothing_matches_abs_to_second_order() {
        let s = AbsSmoothing::<f64>::new(0.1);
        let (v0, d0, dd0) = s.eval(0.1);
        assert!((v0 - 0.1).abs() < 1e-15);
        assert!((d0 - 1.0).abs() < 1e-13);
        assert!(dd0.abs() < 1e-12);
        let (v1, d1, _) = s.eval(-0.1);
        assert!((v1 - 0.1).abs() < 1e-15 && (d1 + 1.0).abs() < 1e-13);
        for k in -100..=100 {
            let (_, d, dd) = s.eval(0.001 * k as f64);
            assert!(d.abs() <= 1.0 + 1e-12 && dd >= -1e-12);
        }
    }

    #[test]
    fn gbar_and_beta_closed_forms() {
        let b = op(CostModel::bilinear());
        let p = v(0.6, 0.9);
        assert!((b.gbar(v(0.1, 0.2), p).unwrap() - (p.norm() - 1.0)).abs() < 1e-14);
        assert!((b.beta(v(0.1, 0.2), p).unwrap() - p * (1.0 / p.norm())).norm() < 1e-14);
        let q = op(CostModel::quadratic());
        let x = v(0.3, -0.2);
        let y = x + p;
        assert!((q.gbar(x, p).unwrap() - (y.norm() - 1.0)).abs() < 1e-14);
        assert!((q.beta(x, p).unwrap() - y * (1.0 / y.norm())).norm() < 1e-14);
    }

    #[test]
    fn gbar_vanishes_on_target_boundary() {
        for cost in [CostModel::bilinear(), CostModel::quadratic(), CostModel::sqrt()] {
            let o = op(cost.clone());
            for bp in disc().boundary_samples(16) {
                let x = v(0.2, -0.3);
                let p = cost.grad_x(x, bp.point);
                assert!(o.gbar(x, p).unwrap().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sqrt_beta_matches_finite_differences() {
        let o = op(CostModel::sqrt());
        let cost = CostModel::<f64>::sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = disc().sample_closure(200, &mut rng);
        let ys = disc().sample_closure(200, &mut rng);
        for (&x, &y) in xs.iter().zip(&ys) {
            if disc().distance(y) < 1e-3 && disc().distance(y) > 0.0 {
                continue;
            }
            let p = cost.grad_x(x, y);
            let b = o.beta(x, p).unwrap();
            let h = 1e-6;
            let fd = v(
                (o.gbar(x, p + v(h, 0.0)).unwrap() - o.gbar(x, p - v(h, 0.0)).unwrap()) / (2.0 * h),
                (o.gbar(x, p + v(0.0, h)).unwrap() - o.gbar(x, p - v(0.0, h)).unwrap()) / (2.0 * h),
            );
            assert!((b - fd).norm_inf() / b.norm_inf().max(1.0) < 1e-5, "{b:?} {fd:?}");
        }
    }

    #[test]
    fn g_is_h1_away_from_target_boundary() {
        let o = op(CostModel::bilinear());
        let p = v(0.1, 0.05);
        assert_eq!(o.g(v(0.0, 0.0), p).unwrap(), o.h1(p));
    }

    #[test]
    fn g_is_uniformly_convex_and_sandwiched() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cost in [CostModel::bilinear(), CostModel::quadratic(), CostModel::sqrt()] {
            let o = op(cost.clone());
            assert!(o.delta2 > 0.0);
            let m = o.audit_g_convexity(2000, &mut rng).unwrap();
            assert!(m.value >= o.delta2, "{} {} < {} at {:?} {:?} eps {} c {} c1 {}", cost.name(), m.value, o.delta2, m.x, m.y, o.h_star.eps, o.h_star.c, o.c1);
            for bp in disc().boundary_samples(32) {
                for s in [0.0, 0.3, 0.9] {
                    let y = bp.point - bp.normal * (s * o.h_star.eps);
                    let x = v(0.1, 0.1);
                    let p = cost.grad_x(x, y);
                    let hs = o.h_star.value(y);
                    let mx = hs.max(o.h1(p));
                    let g = o.g(x, p).unwrap();
                    assert!(g >= mx - o.smoothing.a - 1e-14 && g <= mx + o.smoothing.a + 1e-14);
                }
            }
        }
    }

    #[test]
    fn bad_constants_rejected() {
        let o = op(CostModel::bilinear());
        let err = BoundaryOperator::assemble(
            &CostModel::bilinear(),
            &disc(),
            o.h_star.clone(),
            o.k,
            1.0,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, BoundaryError::BadConstants { .. }));
    }

    #[test]
    fn chi_and_margin_identity() {
        let o = op(CostModel::bilinear());
        let nodes: Vec<_> = disc()
            .boundary_samples(16)
            .iter()
            .map(|b| (b.point, b.point, b.normal))
            .collect();
        assert!((o.obliqueness_margin(nodes) - 1.0).abs() < 1e-12);
        assert!((chi(v(1.0, 0.0), v(1.0, 0.0), &Mat2::identity()) - 1.0).abs() < 1e-15);
    }
}
