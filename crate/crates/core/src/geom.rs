//! Fixed-size linear algebra on ℝ³, SO(3) and SE(3).
//!
//! Vectors and matrices are nalgebra's `Vector3<f64>` / `Matrix3<f64>`. On top
//! of those this module provides the skew map and its inverse, the `asym`/`sym`
//! projections, the trace inner product on so(3), the exponential and Cayley
//! retractions, and a validated [`Rotation`] newtype.

use std::ops::Mul;

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Tolerance for accepting a matrix as skew-symmetric (or symmetric).
pub const SKEW_TOL: f64 = 1e-12;
/// Frobenius tolerance on ‖RᵀR − I‖ and on |det R − 1| at construction.
pub const ORTHO_TOL: f64 = 1e-12;
/// Below this angle the retractions switch to truncated series coefficients.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// The skew map: `skew(v) * w == v.cross(&w)`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Reads (M₃₂, M₁₃, M₂₁) without checking skew-symmetry.
#[inline]
pub fn unskew_unchecked(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Inverse of [`skew`]. Rejects inputs whose symmetric part exceeds [`SKEW_TOL`].
pub fn unskew(m: &Mat3) -> Result<Vec3> {
    let deviation = (m + m.transpose()).abs().max();
    if deviation > SKEW_TOL * m.abs().max().max(1.0) {
        return Err(Error::NotSkew { deviation });
    }
    Ok(unskew_unchecked(m))
}

/// `asym(A) = A − Aᵀ`
#[inline]
pub fn asym(m: &Mat3) -> Mat3 {
    m - m.transpose()
}

/// `sym(A) = A + Aᵀ`
#[inline]
pub fn sym(m: &Mat3) -> Mat3 {
    m + m.transpose()
}

/// Standard matrix inner product ⟨A, B⟩ = tr[AᵀB].
#[inline]
pub fn frobenius_inner(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

/// Inner product on so(3): ½ tr[Ω₂ᵀ Ω₁], equal to unskew(Ω₂)·unskew(Ω₁).
pub fn lie_inner(omega1: &Mat3, omega2: &Mat3) -> Result<f64> {
    unskew(omega1)?;
    unskew(omega2)?;
    Ok(0.5 * (omega2.transpose() * omega1).trace())
}

pub fn is_symmetric(m: &Mat3, tol: f64) -> bool {
    (m - m.transpose()).abs().max() <= tol * m.abs().max().max(1.0)
}

/// Coefficients (sin r / r, (1 − cos r) / r²) of Rodrigues' formula.
pub(crate) fn rodrigues_coefficients(r: f64) -> (f64, f64) {
    if r < SERIES_THRESHOLD {
        let r2 = r * r;
        (1.0 - r2 / 6.0, 0.5 - r2 / 24.0)
    } else {
        (r.sin() / r, (1.0 - r.cos()) / (r * r))
    }
}

/// Exponential map so(3) → SO(3) via Rodrigues' formula.
pub fn exp_so3(f: &Vec3) -> Rotation {
    let (a, b) = rodrigues_coefficients(f.norm());
    let s = skew(f);
    Rotation(Mat3::identity() + s * a + s * s * b)
}

/// Cayley transform (I + S(f))(I − S(f))⁻¹ in closed form.
pub fn cayley_so3(f: &Vec3) -> Rotation {
    let n2 = f.norm_squared();
    let s = skew(f);
    let k = 2.0 / (1.0 + n2);
    Rotation(Mat3::identity() + s * k + s * s * k)
}

/// A 3×3 matrix known to lie in SO(3).
///
/// Orthogonality is validated once in [`Rotation::new`]; products of rotations
/// are trusted and never re-orthogonalized, so integrator drift stays visible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn new(m: Mat3) -> Result<Self> {
        let orthogonality = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if !(orthogonality <= ORTHO_TOL) || !((det - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::NotRotation { orthogonality, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix without validation. Callers guarantee orthogonality.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Nearest rotation in the Frobenius norm (polar factor, det forced to +1).
    pub fn project(m: &Mat3) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, vt) = match (svd.u, svd.v_t) {
            (Some(u), Some(vt)) => (u, vt),
            _ => return Err(Error::InvalidParameter("SVD failed".into())),
        };
        let mut d = Mat3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(Rotation(u * d * vt))
    }

    /// Rotation by `angle` about a (not necessarily unit) axis.
    pub fn about_axis(axis: &Vec3, angle: f64) -> Self {
        exp_so3(&(axis.normalize() * angle))
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    #[inline]
    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    #[inline]
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// ‖RᵀR − I‖_F
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rigid configuration (x, R) ∈ SE(3), acting on points by z ↦ R z + x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub attitude: Rotation,
}

impl Pose {
    pub fn new(position: Vec3, attitude: Rotation) -> Self {
        Pose { position, attitude }
    }

    pub fn identity() -> Self {
        Pose::new(Vec3::zeros(), Rotation::identity())
    }

    pub fn apply(&self, z: &Vec3) -> Vec3 {
        self.attitude.apply(z) + self.position
    }

    /// Homogeneous product `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(self.attitude.apply(&other.position) + self.position, self.attitude * other.attitude)
    }

    /// (T_{(x,R)})⁻¹ = T_{Rᵀ} ∘ T_{−x}
    pub fn inverse(&self) -> Pose {
        let rt = self.attitude.transpose();
        Pose::new(-rt.apply(&self.position), rt)
    }

    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut h = nalgebra::Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(self.attitude.matrix());
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        h
    }
}

/// Central-difference approximation of ∂f/∂X, one entry at a time.
pub fn fd_matrix_gradient<F>(f: F, x: &Mat3, step: f64) -> Mat3
where
    F: Fn(&Mat3) -> f64,
{
    let mut grad = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut plus = *x;
            let mut minus = *x;
            plus[(i, j)] += step;
            minus[(i, j)] -= step;
            grad[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
    }
    grad
}

/// Central-difference gradient of a scalar field on ℝ³.
pub fn fd_vector_gradient<F>(f: F, x: &Vec3, step: f64) -> Vec3
where
    F: Fn(&Vec3) -> f64,
{
    let mut grad = Vec3::zeros();
    for i in 0..3 {
        let mut plus = *x;
        let mut minus = *x;
        plus[i] += step;
        minus[i] -= step;
        grad[i] = (f(&plus) - f(&minus)) / (2.0 * step);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(a, b, c)| Vec3::new(a, b, c))
    }

    fn mat3() -> impl Strategy<Value = Mat3> {
        proptest::collection::vec(-3.0..3.0f64, 9).prop_map(|v| Mat3::from_row_slice(&v))
    }

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    /// Truncated power series of the matrix exponential.
    fn exp_series(a: &Mat3) -> Mat3 {
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for k in 1..40 {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let s = skew(&Vec3::x());
        assert_eq!(s, Mat3::new(0., 0., 0., 0., 0., -1., 0., 1., 0.));
        let w = skew(&Vec3::new(1., 2., 3.)) * Vec3::new(4., 5., 6.);
        assert_eq!(w, Vec3::new(-3., 6., -3.));
    }

    #[test]
    fn unskew_examples() {
        assert_eq!(unskew(&Mat3::zeros()).unwrap(), Vec3::zeros());
        let v = Vec3::new(1., 2., 3.);
        assert_eq!(unskew(&skew(&v)).unwrap(), v);
        assert!(matches!(unskew(&Mat3::identity()), Err(Error::NotSkew { .. })));
    }

    #[test]
    fn asym_examples() {
        assert_eq!(asym(&Mat3::identity()), Mat3::zeros());
        let s = skew(&Vec3::new(0.3, -1.0, 2.0));
        assert_eq!(asym(&s), s * 2.0);
    }

    #[test]
    fn lie_inner_examples() {
        let e1 = skew(&Vec3::x());
        let e2 = skew(&Vec3::y());
        assert_eq!(lie_inner(&e1, &e1).unwrap(), 1.0);
        assert_eq!(lie_inner(&e1, &e2).unwrap(), 0.0);
        assert!(lie_inner(&Mat3::identity(), &e1).is_err());
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Mat3::identity());
        let f = Vec3::new(FRAC_PI_2, 0., 0.);
        let expected = exp_series(&skew(&f));
        assert!(close(exp_so3(&f).matrix(), &expected, 1e-14));
        assert!(close(&expected, &Mat3::new(1., 0., 0., 0., 0., -1., 0., 1., 0.), 1e-14));
    }

    #[test]
    fn exp_series_branch_is_continuous() {
        let dir = Vec3::new(0.3, -0.5, 0.8).normalize();
        for f in [dir * (SERIES_THRESHOLD * 0.999), dir * (SERIES_THRESHOLD * 1.001)] {
            assert!(close(exp_so3(&f).matrix(), &exp_series(&skew(&f)), 1e-15));
        }
        let tiny = dir * 1e-9;
        assert!(close(exp_so3(&tiny).matrix(), &exp_series(&skew(&tiny)), 1e-16));
    }

    #[test]
    fn cayley_examples() {
        assert_eq!(*cayley_so3(&Vec3::zeros()).matrix(), Mat3::identity());
        // (I + S)(I − S)⁻¹ with the explicit inverse of (I − S)
        let f = Vec3::x();
        let s = skew(&f);
        let n2 = f.norm_squared();
        let inv = (Mat3::identity() * (1.0 + n2) + s + s * s) / (1.0 + n2);
        let oracle = (Mat3::identity() + s) * inv;
        assert!(close(cayley_so3(&f).matrix(), &oracle, 1e-15));
        assert!(close(&oracle, &Mat3::new(1., 0., 0., 0., 0., -1., 0., 1., 0.), 1e-15));
    }

    #[test]
    fn pose_examples() {
        let z = Vec3::new(0.5, -2.0, 7.0);
        assert_eq!(Pose::identity().apply(&z), z);
        let p = Pose::new(Vec3::new(1., 2., 3.), Rotation::identity());
        assert_eq!(p.apply(&Vec3::zeros()), Vec3::new(1., 2., 3.));
    }

    #[test]
    fn fd_gradient_examples() {
        let a = Vec3::new(1.0, -2.0, 0.5);
        let b = Vec3::new(0.3, 0.7, -1.1);
        let x = Mat3::new(0.2, 1.0, -0.3, 0.4, 0.9, 1.3, -0.8, 0.1, 0.6);
        let g = fd_matrix_gradient(|m| (a.transpose() * m * b)[0], &x, 1e-4);
        assert!(close(&g, &(a * b.transpose()), 1e-9));

        let am = Mat3::new(1.0, 2.0, 0.0, -1.0, 0.5, 0.3, 0.2, 0.2, 1.0);
        let bm = Mat3::new(0.1, 0.0, 2.0, 1.0, 1.0, -0.4, 0.0, 0.7, 0.2);
        let g = fd_matrix_gradient(|m| (am * m * bm).trace(), &x, 1e-4);
        assert!(close(&g, &(am.transpose() * bm.transpose()), 1e-9));

        assert_eq!(fd_matrix_gradient(|_| 4.2, &x, 1e-3), Mat3::zeros());
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation::new(Mat3::identity() * 1.01).is_err());
        assert!(Rotation::new(-Mat3::identity()).is_err());
        let r = exp_so3(&Vec3::new(0.4, 1.0, -0.2));
        assert!(Rotation::new(*r.matrix()).is_ok());
        let noisy = r.matrix() + Mat3::from_element(1e-10);
        let projected = Rotation::project(&noisy).unwrap();
        assert!(projected.orthogonality_error() < 1e-14);
        assert!(close(projected.matrix(), r.matrix(), 1e-9));
    }

    proptest! {
        #[test]
        fn skew_identities(v in vec3(), w in vec3(), f in vec3()) {
            let sv = skew(&v);
            prop_assert!((sv * w - v.cross(&w)).norm() <= 1e-12);
            prop_assert_eq!(sv.transpose(), -sv);
            let lhs = sv * sv;
            let rhs = v * v.transpose() - Mat3::identity() * v.norm_squared();
            prop_assert!(close(&lhs, &rhs, 1e-12));
            let sw = skew(&w);
            prop_assert!(close(&skew(&v.cross(&w)), &(sv * sw - sw * sv), 1e-12));
            let r = exp_so3(&f);
            let rm = r.matrix();
            prop_assert!(close(&skew(&(rm * v)), &(rm * sv * rm.transpose()), 1e-12));
            prop_assert_eq!(unskew(&sv).unwrap(), v);
        }

        #[test]
        fn skew_symmetric_trace_orthogonality(v in vec3(), m in mat3()) {
            let p = sym(&m);
            prop_assert!(frobenius_inner(&skew(&v), &p).abs() <= 1e-12);
        }

        #[test]
        fn trace_inner_reduces_to_lie_inner(a in mat3(), v in vec3()) {
            let omega = skew(&v);
            let lhs = frobenius_inner(&a, &omega);
            let rhs = lie_inner(&asym(&a), &omega).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn sym_asym_reconstruct(m in mat3()) {
            prop_assert!(close(&(sym(&m) * 0.5 + asym(&m) * 0.5), &m, 1e-15));
            prop_assert!(is_symmetric(&sym(&m), 1e-15));
            prop_assert!(unskew(&asym(&m)).is_ok());
        }

        #[test]
        fn lie_inner_matches_dot(v in vec3(), w in vec3()) {
            let ip = lie_inner(&skew(&v), &skew(&w)).unwrap();
            prop_assert!((ip - w.dot(&v)).abs() <= 1e-12);
        }

        #[test]
        fn retractions_land_in_so3(dir in vec3(), scale in 0.0..10.0f64) {
            prop_assume!(dir.norm() > 1e-6);
            let f = dir.normalize() * scale;
            for r in [exp_so3(&f), cayley_so3(&f)] {
                prop_assert!(r.orthogonality_error() <= 1e-12);
                prop_assert!((r.matrix().determinant() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn exp_matches_series(dir in vec3(), scale in 0.0..3.0f64) {
            prop_assume!(dir.norm() > 1e-6);
            let f = dir.normalize() * scale;
            prop_assert!(close(exp_so3(&f).matrix(), &exp_series(&skew(&f)), 1e-12));
        }

        #[test]
        fn pose_group_laws(x1 in vec3(), f1 in vec3(), x2 in vec3(), f2 in vec3(), z in vec3()) {
            let a = Pose::new(x1, exp_so3(&f1));
            let b = Pose::new(x2, exp_so3(&f2));
            let ab = a.compose(&b);
            prop_assert!((ab.apply(&z) - a.apply(&b.apply(&z))).norm() <= 1e-12);
            let h = a.to_homogeneous() * b.to_homogeneous();
            prop_assert!((ab.to_homogeneous() - h).abs().max() <= 1e-12);
            let id = a.compose(&a.inverse());
            prop_assert!(id.position.norm() <= 1e-12);
            prop_assert!(close(id.attitude.matrix(), &Mat3::identity(), 1e-12));
            let inv_pointwise = a.attitude.transpose().apply(&(z - a.position));
            prop_assert!((a.inverse().apply(&z) - inv_pointwise).norm() <= 1e-12);
        }
    }
}
