//! Fixed-size planar linear algebra: points, 2x2 matrices, 2x2x2 tensors and
//! a small dense least-squares solver.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2<R> {
    pub x: R,
    pub y: R,
}

impl<R: Real> Vec2<R> {
    #[inline]
    pub fn new(x: R, y: R) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(R::zero(), R::zero())
    }

    #[inline]
    pub fn from_f64(x: f64, y: f64) -> Self {
        Self::new(R::lit(x), R::lit(y))
    }

    #[inline]
    pub fn dot(self, o: Self) -> R {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm_sq(self) -> R {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> R {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_inf(self) -> R {
        self.x.abs().max(self.y.abs())
    }

    /// Counter-clockwise rotation by a right angle.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.x / n, self.y / n)
    }

    #[inline]
    pub fn outer(self, o: Self) -> Mat2<R> {
        Mat2::new(self.x * o.x, self.x * o.y, self.y * o.x, self.y * o.y)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn get(self, i: usize) -> R {
        if i == 0 {
            self.x
        } else {
            self.y
        }
    }

    pub fn cast<S: Real>(self) -> Vec2<S> {
        Vec2::new(S::lit(self.x.as_f64()), S::lit(self.y.as_f64()))
    }
}

impl<R: Real> Add for Vec2<R> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<R: Real> AddAssign for Vec2<R> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x = self.x + o.x;
        self.y = self.y + o.y;
    }
}

impl<R: Real> Sub for Vec2<R> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<R: Real> SubAssign for Vec2<R> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x = self.x - o.x;
        self.y = self.y - o.y;
    }
}

impl<R: Real> Mul<R> for Vec2<R> {
    type Output = Self;
    #[inline]
    fn mul(self, s: R) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<R: Real> Neg for Vec2<R> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Row-major 2x2 matrix, `m[i][j]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2<R> {
    pub m: [[R; 2]; 2],
}

impl<R: Real> Mat2<R> {
    #[inline]
    pub fn new(a11: R, a12: R, a21: R, a22: R) -> Self {
        Self {
            m: [[a11, a12], [a21, a22]],
        }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(R::zero(), R::zero(), R::zero(), R::zero())
    }

    #[inline]
    pub fn identity() -> Self {
        Self::new(R::one(), R::zero(), R::zero(), R::one())
    }

    #[inline]
    pub fn diag(a: R, b: R) -> Self {
        Self::new(a, R::zero(), R::zero(), b)
    }

    #[inline]
    pub fn det(&self) -> R {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    #[inline]
    pub fn trace(&self) -> R {
        self.m[0][0] + self.m[1][1]
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Self::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    /// Inverse, or `None` when the determinant is zero or not finite.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == R::zero() || !d.is_finite() {
            return None;
        }
        Some(Self::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        ))
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec2<R>) -> Vec2<R> {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    /// `vᵀ M` as a vector.
    #[inline]
    pub fn vec_mul(&self, v: Vec2<R>) -> Vec2<R> {
        Vec2::new(
            v.x * self.m[0][0] + v.y * self.m[1][0],
            v.x * self.m[0][1] + v.y * self.m[1][1],
        )
    }

    #[inline]
    pub fn quad(&self, a: Vec2<R>, b: Vec2<R>) -> R {
        a.dot(self.mul_vec(b))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                r.m[i][j] = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j];
            }
        }
        r
    }

    pub fn scale(&self, s: R) -> Self {
        Self::new(self.m[0][0] * s, self.m[0][1] * s, self.m[1][0] * s, self.m[1][1] * s)
    }

    pub fn max_abs(&self) -> R {
        self.m[0][0]
            .abs()
            .max(self.m[0][1].abs())
            .max(self.m[1][0].abs())
            .max(self.m[1][1].abs())
    }

    pub fn asymmetry(&self) -> R {
        (self.m[0][1] - self.m[1][0]).abs()
    }

    /// Eigenvalues `(min, max)` of the symmetric part.
    pub fn sym_eigenvalues(&self) -> (R, R) {
        let half = R::lit(0.5);
        let a = self.m[0][0];
        let d = self.m[1][1];
        let b = (self.m[0][1] + self.m[1][0]) * half;
        let mean = (a + d) * half;
        let rad = ((a - d) * half).hypot(b);
        (mean - rad, mean + rad)
    }

    /// Singular values `(min, max)`.
    pub fn singular_values(&self) -> (R, R) {
        let ata = self.transpose().mul_mat(self);
        let (lo, hi) = ata.sym_eigenvalues();
        (lo.max(R::zero()).sqrt(), hi.max(R::zero()).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<S: Real>(&self) -> Mat2<S> {
        Mat2::new(
            S::lit(self.m[0][0].as_f64()),
            S::lit(self.m[0][1].as_f64()),
            S::lit(self.m[1][0].as_f64()),
            S::lit(self.m[1][1].as_f64()),
        )
    }
}

impl<R: Real> Add for Mat2<R> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }
}

impl<R: Real> Sub for Mat2<R> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(
            self.m[0][0] - o.m[0][0],
            self.m[0][1] - o.m[0][1],
            self.m[1][0] - o.m[1][0],
            self.m[1][1] - o.m[1][1],
        )
    }
}

impl<R> Index<(usize, usize)> for Mat2<R> {
    type Output = R;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &R {
        &self.m[i][j]
    }
}

impl<R> IndexMut<(usize, usize)> for Mat2<R> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut R {
        &mut self.m[i][j]
    }
}

/// 2x2x2 tensor, `t[i][j][k]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tensor3<R> {
    pub t: [[[R; 2]; 2]; 2],
}

impl<R: Real> Tensor3<R> {
    pub fn zero() -> Self {
        Self {
            t: [[[R::zero(); 2]; 2]; 2],
        }
    }

    /// `Σ_k t[i][j][k] v_k`.
    pub fn contract_last(&self, v: Vec2<R>) -> Mat2<R> {
        let mut r = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                r.m[i][j] = self.t[i][j][0] * v.x + self.t[i][j][1] * v.y;
            }
        }
        r
    }

    /// `Σ_i v_i t[i][j][k]`.
    pub fn contract_first(&self, v: Vec2<R>) -> Mat2<R> {
        let mut r = Mat2::zero();
        for j in 0..2 {
            for k in 0..2 {
                r.m[j][k] = v.x * self.t[0][j][k] + v.y * self.t[1][j][k];
            }
        }
        r
    }

    pub fn max_abs(&self) -> R {
        self.t
            .iter()
            .flatten()
            .flatten()
            .fold(R::zero(), |a, v| a.max(v.abs()))
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<R> {
    pub min: Vec2<R>,
    pub max: Vec2<R>,
}

impl<R: Real> Aabb<R> {
    pub fn new(min: Vec2<R>, max: Vec2<R>) -> Self {
        Self { min, max }
    }

    pub fn centered(half_width: R) -> Self {
        Self::new(Vec2::new(-half_width, -half_width), Vec2::new(half_width, half_width))
    }

    pub fn contains(&self, p: Vec2<R>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Vec2<R> {
        (self.min + self.max) * R::lit(0.5)
    }

    pub fn width(&self) -> R {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> R {
        self.max.y - self.min.y
    }

    pub fn inflate(&self, by: R) -> Self {
        let d = Vec2::new(by, by);
        Self::new(self.min - d, self.max + d)
    }
}

/// Solution of a small dense least-squares problem.
#[derive(Debug, Clone, Copy)]
pub struct LstsqSolution<R, const N: usize> {
    pub coeffs: [R; N],
    /// `max |r_ii| / min |r_ii|` of the triangular factor.
    pub condition: R,
}

/// Solves `min ‖A c − b‖₂` by Householder QR. Rows of `a` are equations.
pub fn lstsq<R: Real, const N: usize>(a: &[[R; N]], b: &[R]) -> Option<LstsqSolution<R, N>> {
    let m = a.len();
    if m < N || b.len() != m {
        return None;
    }
    let mut q: Vec<[R; N]> = a.to_vec();
    let mut rhs: Vec<R> = b.to_vec();
    for k in 0..N {
        let mut norm = R::zero();
        for row in q.iter().skip(k) {
            norm = norm.hypot(row[k]);
        }
        if norm == R::zero() {
            return None;
        }
        let alpha = if q[k][k] > R::zero() { -norm } else { norm };
        let mut v: Vec<R> = (k..m).map(|i| q[i][k]).collect();
        v[0] = v[0] - alpha;
        let vnorm_sq: R = v.iter().map(|&x| x * x).sum();
        if vnorm_sq == R::zero() {
            continue;
        }
        let two = R::lit(2.0);
        for j in k..N {
            let s: R = (k..m).map(|i| v[i - k] * q[i][j]).sum();
            let f = two * s / vnorm_sq;
            for i in k..m {
                q[i][j] = q[i][j] - f * v[i - k];
            }
        }
        let s: R = (k..m).map(|i| v[i - k] * rhs[i]).sum();
        let f = two * s / vnorm_sq;
        for i in k..m {
            rhs[i] = rhs[i] - f * v[i - k];
        }
    }
    let mut coeffs = [R::zero(); N];
    let mut dmax = R::zero();
    let mut dmin = R::infinity();
    for i in (0..N).rev() {
        let d = q[i][i];
        if d == R::zero() || !d.is_finite() {
            return None;
        }
        dmax = dmax.max(d.abs());
        dmin = dmin.min(d.abs());
        let mut s = rhs[i];
        for j in i + 1..N {
            s = s - q[i][j] * coeffs[j];
        }
        coeffs[i] = s / d;
    }
    Some(LstsqSolution {
        coeffs,
        condition: dmax / dmin,
    })
}

/// Local quadratic model `c0 + c1 dx + c2 dy + c3 dx² + c4 dx dy + c5 dy²`
/// in coordinates scaled by `scale` around `center`.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticFit<R> {
    pub center: Vec2<R>,
    pub scale: R,
    pub coeffs: [R; 6],
    pub condition: R,
}

impl<R: Real> QuadraticFit<R> {
    /// Least-squares quadratic through `(point, value)` samples.
    pub fn fit(center: Vec2<R>, scale: R, samples: &[(Vec2<R>, R)]) -> Option<Self> {
        let rows: Vec<[R; 6]> = samples
            .iter()
            .map(|&(p, _)| {
                let d = (p - center) * (R::one() / scale);
                [R::one(), d.x, d.y, d.x * d.x, d.x * d.y, d.y * d.y]
            })
            .collect();
        let rhs: Vec<R> = samples.iter().map(|&(_, v)| v).collect();
        let sol = lstsq(&rows, &rhs)?;
        Some(Self {
            center,
            scale,
            coeffs: sol.coeffs,
            condition: sol.condition,
        })
    }

    pub fn value(&self, p: Vec2<R>) -> R {
        let d = (p - self.center) * (R::one() / self.scale);
        let c = &self.coeffs;
        c[0] + c[1] * d.x + c[2] * d.y + c[3] * d.x * d.x + c[4] * d.x * d.y + c[5] * d.y * d.y
    }

    pub fn gradient(&self, p: Vec2<R>) -> Vec2<R> {
        let d = (p - self.center) * (R::one() / self.scale);
        let c = &self.coeffs;
        let two = R::lit(2.0);
        Vec2::new(
            (c[1] + two * c[3] * d.x + c[4] * d.y) / self.scale,
            (c[2] + c[4] * d.x + two * c[5] * d.y) / self.scale,
        )
    }

    pub fn hessian(&self) -> Mat2<R> {
        let c = &self.coeffs;
        let two = R::lit(2.0);
        let s2 = self.scale * self.scale;
        Mat2::new(two * c[3] / s2, c[4] / s2, c[4] / s2, two * c[5] / s2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let a = Mat2::new(2.0, 1.0, -0.5, 3.0);
        let p = a.mul_mat(&a.inverse().unwrap());
        assert!((p - Mat2::identity()).max_abs() < 1e-15);
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
    }

    #[test]
    fn symmetric_eigenvalues() {
        let (lo, hi) = Mat2::<f64>::new(2.0, 1.0, 1.0, 2.0).sym_eigenvalues();
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 3.0).abs() < 1e-15);
    }

    #[test]
    fn lstsq_recovers_quadratic() {
        let f = |p: Vec2<f64>| 1.0 + 2.0 * p.x - p.y + 0.5 * p.x * p.x + 0.25 * p.x * p.y - 3.0 * p.y * p.y;
        let samples: Vec<_> = (-2..=2)
            .flat_map(|i| (-1..=1).map(move |j| Vec2::new(i as f64 * 0.1, j as f64 * 0.1)))
            .map(|p| (p, f(p)))
            .collect();
        let fit = QuadraticFit::fit(Vec2::zero(), 0.1, &samples).unwrap();
        let q = Vec2::new(0.05, -0.02);
        assert!((fit.value(q) - f(q)).abs() < 1e-13);
        let g = fit.gradient(q);
        assert!((g.x - (2.0 + q.x + 0.25 * q.y)).abs() < 1e-12);
        assert!((g.y - (-1.0 + 0.25 * q.x - 6.0 * q.y)).abs() < 1e-12);
        let h = fit.hessian();
        assert!((h - Mat2::new(1.0, 0.25, 0.25, -6.0)).max_abs() < 1e-10);
    }

    #[test]
    fn works_in_single_precision() {
        let a: Mat2<f32> = Mat2::new(4.0, 1.0, 1.0, 3.0);
        let (lo, hi) = a.sym_eigenvalues();
        assert!((lo * hi - a.det()).abs() < 1e-4);
    }
}
