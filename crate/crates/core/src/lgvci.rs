//! Discrete flow and impact maps of the variational collision integrator.
//!
//! The smooth part of the motion is advanced by the discrete Hamiltonian map
//!
//! ```text
//! x' = x + (h/m)γ − ½gh²e₃      γ' = γ − mgh e₃
//! S(hΠ) = asym(F J_d)           Π' = FᵀΠ        R' = RF
//! ```
//!
//! where the relative rotation F is found by Newton's method on a retraction
//! parametrization F = τ(S(f)). Impacts apply an impulse along the gradient of
//! the collision function whose size λ is fixed by conservation of energy.

use serde::{Deserialize, Serialize};

use crate::body::RigidBody;
use crate::contact::{ContactGeometry, Plane};
use crate::error::{Error, Result};
use crate::geom::{asym, cayley_so3, exp_so3, skew, Mat3, Pose, Rotation, Vec3};

pub const STANDARD_GRAVITY: f64 = 9.80665;
/// |λ| below this multiple of the momentum scale counts as a grazing contact.
pub const GRAZING_TOL: f64 = 1e-12;
/// Residual accepted when Newton stagnates at roundoff, relative to max(1, ‖g‖).
const STAGNATION_TOL: f64 = 1e-10;

/// Phase-space state: position, attitude, linear momentum and body-frame
/// angular momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub x: Vec3,
    pub r: Rotation,
    pub gamma: Vec3,
    pub pi: Vec3,
}

impl State {
    pub fn new(x: Vec3, r: Rotation, gamma: Vec3, pi: Vec3) -> Self {
        State { x, r, gamma, pi }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.r)
    }

    /// Angular momentum in the spatial frame, RΠ.
    pub fn spatial_angular_momentum(&self) -> Vec3 {
        self.r * self.pi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Retraction {
    #[default]
    Exp,
    Cayley,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub eps_tol: f64,
    pub max_newton_iters: usize,
    pub retraction: Retraction,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { eps_tol: 1e-15, max_newton_iters: 50, retraction: Retraction::Exp }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("eps_tol must be positive, got {}", self.eps_tol)));
        }
        if self.max_newton_iters < 1 {
            return Err(Error::InvalidParameter("max_newton_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gravity, the fixed plane and the body.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldParams {
    pub g: f64,
    pub plane: Plane,
    pub body: RigidBody,
}

impl WorldParams {
    pub fn new(g: f64, plane: Plane, body: RigidBody) -> Result<Self> {
        if !(g >= 0.0) || !g.is_finite() {
            return Err(Error::InvalidParameter(format!("gravity must be nonnegative, got {g}")));
        }
        Ok(WorldParams { g, plane, body })
    }
}

/// Outcome of the implicit rotation solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSolve {
    pub rotation: Rotation,
    /// Retraction coordinates of F.
    pub f: Vec3,
    pub iterations: usize,
    /// ‖G(f) − g‖ at termination.
    pub residual: f64,
    pub retraction: Retraction,
}

fn residual_and_jacobian(retraction: Retraction, j: &Mat3, f: &Vec3) -> (Vec3, Mat3) {
    let jf = j * f;
    let fjf = f.cross(&jf);
    let coupling = skew(f) * j - skew(&jf);
    match retraction {
        Retraction::Exp => {
            let r = f.norm();
            let (a, b, da, db) = if r < 1e-4 {
                let r2 = r * r;
                (1.0 - r2 / 6.0, 0.5 - r2 / 24.0, -1.0 / 3.0 + r2 / 30.0, -1.0 / 12.0 + r2 / 180.0)
            } else {
                let (s, c) = r.sin_cos();
                let r2 = r * r;
                (s / r, (1.0 - c) / r2, (r * c - s) / (r2 * r), (r * s - 2.0 * (1.0 - c)) / (r2 * r2))
            };
            let g = jf * a + fjf * b;
            let jac = jf * f.transpose() * da + j * a + fjf * f.transpose() * db + coupling * b;
            (g, jac)
        }
        Retraction::Cayley => {
            let k = 2.0 / (1.0 + f.norm_squared());
            let v = jf + fjf;
            let jac = (j + coupling) * k - v * f.transpose() * (k * k);
            (v * k, jac)
        }
    }
}

fn retract(retraction: Retraction, f: &Vec3) -> Rotation {
    match retraction {
        Retraction::Exp => exp_so3(f),
        Retraction::Cayley => cayley_so3(f),
    }
}

fn newton(g_vec: &Vec3, body: &RigidBody, cfg: &SolverConfig, retraction: Retraction) -> Result<RotationSolve> {
    let j = body.inertia();
    let scale = g_vec.norm().max(1.0);
    let tol = cfg.eps_tol * scale;
    let mut f = body.inertia_inverse() * g_vec;
    let mut best = f64::INFINITY;
    for iteration in 0..=cfg.max_newton_iters {
        let (g, jac) = residual_and_jacobian(retraction, j, &f);
        let res = g - g_vec;
        let norm = res.norm();
        let stalled = norm >= 0.5 * best && norm <= STAGNATION_TOL * scale;
        if norm <= tol || stalled || iteration == cfg.max_newton_iters {
            if norm > STAGNATION_TOL * scale && norm > tol {
                return Err(Error::NewtonNonConvergence { iterations: iteration, residual: norm });
            }
            if retraction == Retraction::Exp && f.norm() >= std::f64::consts::PI {
                return Err(Error::SolverPrecondition(format!(
                    "exp coordinates left the injectivity ball (|f| = {})",
                    f.norm()
                )));
            }
            return Ok(RotationSolve {
                rotation: retract(retraction, &f),
                f,
                iterations: iteration,
                residual: norm,
                retraction,
            });
        }
        best = best.min(norm);
        let step =
            jac.lu().solve(&(-res)).ok_or_else(|| Error::SolverPrecondition("singular Newton Jacobian".into()))?;
        f += step;
        if !f.iter().all(|v| v.is_finite()) {
            return Err(Error::NewtonNonConvergence { iterations: iteration + 1, residual: f64::NAN });
        }
    }
    unreachable!("the final iteration always returns")
}

/// Solves S(g) = asym(F J_d) for F ∈ SO(3).
///
/// Convergence is declared when ‖G(f) − g‖ ≤ eps_tol·max(1, ‖g‖). Because
/// the default eps_tol sits at the level of double-precision roundoff, an
/// iteration that stops improving is also accepted once its residual is below
/// 1e−10·max(1, ‖g‖). If the exp-map iteration fails, the Cayley
/// parametrization is tried before giving up.
pub fn solve_relative_rotation_detailed(g_vec: &Vec3, body: &RigidBody, cfg: &SolverConfig) -> Result<RotationSolve> {
    cfg.validate()?;
    if !g_vec.iter().all(|v| v.is_finite()) {
        return Err(Error::SolverPrecondition("non-finite momentum".into()));
    }
    if *g_vec == Vec3::zeros() {
        return Ok(RotationSolve {
            rotation: Rotation::identity(),
            f: Vec3::zeros(),
            iterations: 0,
            residual: 0.0,
            retraction: cfg.retraction,
        });
    }
    match newton(g_vec, body, cfg, cfg.retraction) {
        Ok(sol) => Ok(sol),
        Err(err) if cfg.retraction == Retraction::Exp => newton(g_vec, body, cfg, Retraction::Cayley).map_err(|_| err),
        Err(err) => Err(err),
    }
}

pub fn solve_relative_rotation(g_vec: &Vec3, body: &RigidBody, cfg: &SolverConfig) -> Result<Rotation> {
    Ok(solve_relative_rotation_detailed(g_vec, body, cfg)?.rotation)
}

/// One step of the discrete Hamiltonian flow.
pub fn discrete_flow(s: &State, h: f64, w: &WorldParams, cfg: &SolverConfig) -> Result<State> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("timestep must be positive, got {h}")));
    }
    let m = w.body.mass();
    let e3 = Vec3::z();
    let x = s.x + s.gamma * (h / m) - e3 * (0.5 * w.g * h * h);
    let gamma = s.gamma - e3 * (m * w.g * h);
    let f = solve_relative_rotation(&(s.pi * h), &w.body, cfg)?;
    let pi = f.matrix().transpose() * s.pi;
    Ok(State { x, r: s.r * f, gamma, pi })
}

/// Rate of change of Φ along the motion, ∂Φ/∂x·γ/m + χ·Ω.
pub fn contact_rate(s: &State, cg: &ContactGeometry, w: &WorldParams) -> f64 {
    cg.dphi_dx.dot(&s.gamma) / w.body.mass() + cg.chi.dot(&(w.body.inertia_inverse() * s.pi))
}

/// Elastic impact: γ⁺ = γ⁻ + λ∂Φ/∂x, Π⁺ = Π⁻ + λχ with the nonzero λ that
/// conserves energy,
///
/// ```text
/// λ = −(γ⁻·a/m + χᵀJ⁻¹Π⁻) / (‖a‖²/(2m) + ½χᵀJ⁻¹χ),   a = ∂Φ/∂x.
/// ```
///
/// Contacts that are already separating are rejected with
/// [`Error::Separating`], and contacts whose impulse vanishes with
/// [`Error::Grazing`].
pub fn jump(s: &State, cg: &ContactGeometry, w: &WorldParams) -> Result<(f64, State)> {
    let m = w.body.mass();
    let j_inv = w.body.inertia_inverse();
    let a = cg.dphi_dx;
    let rate = contact_rate(s, cg, w);
    let denom = a.norm_squared() / (2.0 * m) + 0.5 * cg.chi.dot(&(j_inv * cg.chi));
    if !(denom > 0.0) {
        return Err(Error::SingularInertia);
    }
    if rate > 0.0 {
        return Err(Error::Separating { rate });
    }
    let lambda = -rate / denom;
    let momentum_scale = s.gamma.norm() + s.pi.norm();
    if lambda.abs() < GRAZING_TOL * momentum_scale.max(1.0) {
        return Err(Error::Grazing { lambda });
    }
    let plus = State { x: s.x, r: s.r, gamma: s.gamma + a * lambda, pi: s.pi + cg.chi * lambda };
    Ok((lambda, plus))
}

/// Total energy ‖γ‖²/2m + ½ΠᵀJ⁻¹Π + mg e₃ᵀx.
pub fn energy(s: &State, w: &WorldParams) -> f64 {
    let (t, r, v) = energy_parts(s, w);
    t + r + v
}

/// (translational kinetic, rotational kinetic, potential) energy.
pub fn energy_parts(s: &State, w: &WorldParams) -> (f64, f64, f64) {
    let m = w.body.mass();
    (s.gamma.norm_squared() / (2.0 * m), 0.5 * s.pi.dot(&(w.body.inertia_inverse() * s.pi)), m * w.g * s.x.z)
}

/// E_d = (1/2h²)m‖x_{k+1} − x_k‖² + (1/h²)tr[(I − F_k)J_d] + ½mg e₃ᵀ(x_k + x_{k+1})
/// with F_k = R_kᵀR_{k+1}.
pub fn discrete_energy(q_k: &Pose, q_k1: &Pose, h: f64, w: &WorldParams) -> f64 {
    let m = w.body.mass();
    let dx = q_k1.position - q_k.position;
    let f = q_k.attitude.matrix().transpose() * q_k1.attitude.matrix();
    let rot = ((Mat3::identity() - f) * w.body.nonstandard_inertia()).trace();
    0.5 * m * dx.norm_squared() / (h * h) + rot / (h * h) + 0.5 * m * w.g * (q_k.position.z + q_k1.position.z)
}

/// Residuals of the discrete Euler–Lagrange equations at q for steps of
/// length h_prev (into q) and h_next (out of q). Both vanish on triples
/// produced by [`discrete_flow`]; across an impact at q they equal
/// [`impulse_residual`].
pub fn del_residual(q_prev: &Pose, q: &Pose, q_next: &Pose, h_prev: f64, h_next: f64, w: &WorldParams) -> (Vec3, Mat3) {
    let m = w.body.mass();
    let jd = w.body.nonstandard_inertia();
    let trans = (q_next.position - q.position) * (m / h_next) - (q.position - q_prev.position) * (m / h_prev)
        + Vec3::z() * (0.5 * m * w.g * (h_prev + h_next));
    let f_prev = relative(q_prev, q);
    let f = relative(q, q_next);
    let rot = asym(&(jd * f_prev / h_prev - f * jd / h_next));
    (trans, rot)
}

/// R_a⁻¹R_b. On exact rotations this is R_aᵀR_b; on stored attitudes it
/// removes the accumulated orthogonality defect of R_a, which would otherwise
/// be divided by the step length.
fn relative(a: &Pose, b: &Pose) -> Mat3 {
    let ra = a.attitude.matrix();
    ra.try_inverse().unwrap_or_else(|| ra.transpose()) * b.attitude.matrix()
}

/// The momentum jump (γ⁺ − γ⁻, S(Π⁻ − Π⁺)) in the form it appears in
/// [`del_residual`] when the middle pose is an impact point.
pub fn impulse_residual(lambda: f64, cg: &ContactGeometry) -> (Vec3, Mat3) {
    (cg.dphi_dx * lambda, -skew(&cg.chi) * lambda)
}

/// Classical fourth-order Runge–Kutta integration of the smooth equations of
/// motion ẋ = γ/m, γ̇ = −mge₃, Ṙ = RS(Ω), Π̇ = Π × Ω, ignoring the plane.
/// Used only as a reference solution.
pub fn continuous_reference(s: &State, t: f64, w: &WorldParams, substeps: usize) -> Result<State> {
    if substeps < 1 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    let m = w.body.mass();
    let dt = t / substeps as f64;
    let force = -Vec3::z() * (m * w.g);
    let mut x = s.x;
    let mut r = *s.r.matrix();
    let mut gamma = s.gamma;
    let mut pi = s.pi;
    let eval = |_x: &Vec3, r: &Mat3, gamma: &Vec3, pi: &Vec3| {
        let omega = w.body.inertia_inverse() * pi;
        (gamma / m, r * skew(&omega), force, pi.cross(&omega))
    };
    for _ in 0..substeps {
        let k1 = eval(&x, &r, &gamma, &pi);
        let k2 = eval(
            &(x + k1.0 * (dt / 2.0)),
            &(r + k1.1 * (dt / 2.0)),
            &(gamma + k1.2 * (dt / 2.0)),
            &(pi + k1.3 * (dt / 2.0)),
        );
        let k3 = eval(
            &(x + k2.0 * (dt / 2.0)),
            &(r + k2.1 * (dt / 2.0)),
            &(gamma + k2.2 * (dt / 2.0)),
            &(pi + k2.3 * (dt / 2.0)),
        );
        let k4 = eval(&(x + k3.0 * dt), &(r + k3.1 * dt), &(gamma + k3.2 * dt), &(pi + k3.3 * dt));
        x += (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0);
        r += (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0);
        gamma += (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * (dt / 6.0);
        pi += (k1.3 + k2.3 * 2.0 + k3.3 * 2.0 + k4.3) * (dt / 6.0);
    }
    Ok(State { x, r: Rotation::from_matrix_unchecked(r), gamma, pi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{inertia_ellipsoid, Ellipsoid, ShapeNode};
    use crate::contact::phi_general;
    use crate::geom::fd_vector_gradient;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn case1_world() -> WorldParams {
        let e = Ellipsoid::new(2.0, 3.0, 4.0).unwrap();
        let body =
            RigidBody::new(1.0, inertia_ellipsoid(1.0, 2.0, 3.0, 4.0).unwrap(), ShapeNode::ellipsoid(e)).unwrap();
        WorldParams::new(STANDARD_GRAVITY, Plane::horizontal(), body).unwrap()
    }

    fn sphere_world(r: f64) -> WorldParams {
        let e = Ellipsoid::sphere(r).unwrap();
        let body = RigidBody::new(1.0, inertia_ellipsoid(1.0, r, r, r).unwrap(), ShapeNode::ellipsoid(e)).unwrap();
        WorldParams::new(STANDARD_GRAVITY, Plane::horizontal(), body).unwrap()
    }

    fn initial() -> State {
        State::new(
            Vec3::new(0.0, 0.0, 10.0),
            Rotation::identity(),
            Vec3::new(2.0, 2.0, 10.0),
            Vec3::new(4.0, -4.0, 4.0),
        )
    }

    fn rotation_residual(f: &Rotation, g: &Vec3, body: &RigidBody) -> f64 {
        (asym(&(f.matrix() * body.nonstandard_inertia())) - skew(g)).norm()
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let j = *case1_world().body.inertia();
        let f = Vec3::new(0.3, -0.2, 0.5);
        for retraction in [Retraction::Exp, Retraction::Cayley] {
            let (_, jac) = residual_and_jacobian(retraction, &j, &f);
            for row in 0..3 {
                let fd = fd_vector_gradient(|v| residual_and_jacobian(retraction, &j, v).0[row], &f, 1e-6);
                assert!((fd - jac.row(row).transpose()).norm() < 1e-8, "{retraction:?} row {row}");
            }
            // near the series branch
            let tiny = f * 1e-5;
            let (_, jac) = residual_and_jacobian(retraction, &j, &tiny);
            let fd = fd_vector_gradient(|v| residual_and_jacobian(retraction, &j, v).0[0], &tiny, 1e-7);
            assert!((fd - jac.row(0).transpose()).norm() < 1e-7);
        }
    }

    #[test]
    fn residual_function_matches_matrix_equation() {
        let w = case1_world();
        let f = Vec3::new(0.1, 0.4, -0.3);
        for retraction in [Retraction::Exp, Retraction::Cayley] {
            let (g, _) = residual_and_jacobian(retraction, w.body.inertia(), &f);
            let rot = retract(retraction, &f);
            assert!(rotation_residual(&rot, &g, &w.body) < 1e-14);
        }
    }

    #[test]
    fn solve_zero_is_identity() {
        let w = case1_world();
        let f = solve_relative_rotation(&Vec3::zeros(), &w.body, &SolverConfig::default()).unwrap();
        assert_eq!(f, Rotation::identity());
    }

    #[test]
    fn solve_isotropic_closed_form() {
        let j = 0.4;
        let w = sphere_world(1.0);
        let g = Vec3::new(0.1, -0.2, 0.15);
        let sol = solve_relative_rotation_detailed(&g, &w.body, &SolverConfig::default()).unwrap();
        let expected = g.normalize() * (g.norm() / j).asin();
        assert!((sol.f - expected).norm() < 1e-14, "{} vs {}", sol.f, expected);
    }

    #[test]
    fn solve_case1_both_retractions() {
        let w = case1_world();
        let g = Vec3::new(4.0, -4.0, 4.0) * 0.01;
        let mut rots = Vec::new();
        for retraction in [Retraction::Exp, Retraction::Cayley] {
            let cfg = SolverConfig { retraction, ..SolverConfig::default() };
            let sol = solve_relative_rotation_detailed(&g, &w.body, &cfg).unwrap();
            assert_eq!(sol.retraction, retraction);
            assert!(rotation_residual(&sol.rotation, &g, &w.body) <= 1e-13);
            assert!(sol.iterations <= 6);
            rots.push(sol.rotation);
        }
        assert!((rots[0].matrix() - rots[1].matrix()).norm() < 1e-10);
    }

    #[test]
    fn solver_reports_non_convergence() {
        let w = case1_world();
        let cfg = SolverConfig { max_newton_iters: 1, eps_tol: 1e-30, ..SolverConfig::default() };
        let err = solve_relative_rotation(&Vec3::new(1.0, -1.0, 0.8), &w.body, &cfg).unwrap_err();
        assert!(matches!(err, Error::NewtonNonConvergence { .. }), "{err}");
        assert!(SolverConfig { eps_tol: 0.0, ..SolverConfig::default() }.validate().is_err());
    }

    #[test]
    fn flow_first_step() {
        let w = case1_world();
        let s1 = discrete_flow(&initial(), 0.01, &w, &SolverConfig::default()).unwrap();
        let expected_x = Vec3::new(0.02, 0.02, 10.0 + 0.1 - 0.5 * STANDARD_GRAVITY * 1e-4);
        assert!((s1.x - expected_x).norm() < 1e-14);
        assert!((s1.gamma - Vec3::new(2.0, 2.0, 10.0 - 0.0980665)).norm() < 1e-14);
        assert!((s1.pi.norm() - initial().pi.norm()).abs() < 1e-14);
        assert!((s1.spatial_angular_momentum() - initial().spatial_angular_momentum()).norm() < 1e-12);
    }

    #[test]
    fn flow_without_spin_keeps_attitude() {
        let w = case1_world();
        let s = State::new(Vec3::zeros(), Rotation::about_axis(&Vec3::x(), 0.3), Vec3::x(), Vec3::zeros());
        let s1 = discrete_flow(&s, 0.01, &w, &SolverConfig::default()).unwrap();
        assert_eq!(s1.r, s.r);
    }

    #[test]
    fn free_rigid_rotation_conserves_spatial_momentum() {
        let mut w = case1_world();
        w.g = 0.0;
        let cfg = SolverConfig::default();
        let mut s =
            State::new(Vec3::new(1.0, 2.0, 3.0), Rotation::identity(), Vec3::zeros(), Vec3::new(4.0, -4.0, 4.0));
        let s0 = s;
        for _ in 0..10_000 {
            s = discrete_flow(&s, 0.01, &w, &cfg).unwrap();
        }
        assert_eq!(s.x, s0.x);
        assert!((s.spatial_angular_momentum() - s0.spatial_angular_momentum()).norm() < 1e-12);
        assert!((s.pi.norm() - s0.pi.norm()).abs() < 1e-12 * s0.pi.norm());
        assert!(s.r.orthogonality_error() < 1e-11);
    }

    #[test]
    fn free_fall_energy_is_conserved() {
        let w = case1_world();
        let cfg = SolverConfig::default();
        let mut s =
            State::new(Vec3::new(0.0, 0.0, 100.0), Rotation::identity(), Vec3::new(1.0, 0.0, 3.0), Vec3::zeros());
        let e0 = energy(&s, &w);
        for _ in 0..1000 {
            s = discrete_flow(&s, 0.01, &w, &cfg).unwrap();
        }
        assert!((energy(&s, &w) - e0).abs() < 1e-12 * e0.abs());
    }

    #[test]
    fn energy_examples() {
        let w = case1_world();
        let rest = State::new(Vec3::zeros(), Rotation::identity(), Vec3::zeros(), Vec3::zeros());
        assert_eq!(energy(&rest, &w), 0.0);
        let expected = 54.0 + 0.5 * (16.0 / 5.0 + 16.0 / 4.0 + 16.0 / 2.6) + STANDARD_GRAVITY * 10.0;
        assert!((energy(&initial(), &w) - expected).abs() < 1e-12);
        assert!((expected - 158.7434).abs() < 1e-4);
    }

    #[test]
    fn discrete_energy_examples() {
        let w = case1_world();
        let q = Pose::new(Vec3::new(1.0, 2.0, 3.0), Rotation::identity());
        assert!((discrete_energy(&q, &q, 0.01, &w) - STANDARD_GRAVITY * 3.0).abs() < 1e-13);
    }

    #[test]
    fn discrete_energy_is_second_order() {
        let w = case1_world();
        let cfg = SolverConfig::default();
        let errs: Vec<f64> = [0.02_f64, 0.01, 0.005]
            .iter()
            .map(|&h| {
                let s0 = initial();
                let s1 = discrete_flow(&s0, h, &w, &cfg).unwrap();
                let ed = discrete_energy(&s0.pose(), &s1.pose(), h, &w);
                (ed - energy(&s0, &w)).abs()
            })
            .collect();
        for pair in errs.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            assert!(order > 1.8, "observed order {order} from {errs:?}");
        }
    }

    #[test]
    fn del_residual_examples() {
        let mut w = case1_world();
        let cfg = SolverConfig::default();
        let s0 = initial();
        let s1 = discrete_flow(&s0, 0.01, &w, &cfg).unwrap();
        let s2 = discrete_flow(&s1, 0.007, &w, &cfg).unwrap();
        let (t, r) = del_residual(&s0.pose(), &s1.pose(), &s2.pose(), 0.01, 0.007, &w);
        assert!(t.norm() < 1e-10 && r.norm() < 1e-10, "{t} {r}");
        let bumped = Pose::new(s1.x + Vec3::new(1e-3, 0.0, 0.0), s1.r);
        let (t, _) = del_residual(&s0.pose(), &bumped, &s2.pose(), 0.01, 0.007, &w);
        let expected = 1e-3 * (1.0 / 0.01 + 1.0 / 0.007);
        assert!((t.norm() - expected).abs() < 1e-6 * expected);
        w.g = 0.0;
        let q = Pose::new(Vec3::new(0.3, 0.1, 2.0), Rotation::about_axis(&Vec3::y(), 0.4));
        let (t, r) = del_residual(&q, &q, &q, 0.01, 0.02, &w);
        assert_eq!(t, Vec3::zeros());
        assert!(r.norm() < 1e-14);
    }

    #[test]
    fn sphere_jump_is_specular() {
        let w = sphere_world(1.0);
        let s = State::new(
            Vec3::new(0.0, 0.0, 1.0),
            Rotation::identity(),
            Vec3::new(2.0, 2.0, -10.0),
            Vec3::new(0.1, 0.2, 0.3),
        );
        let cg = phi_general(&s.pose(), &w.body, &w.plane).unwrap();
        let (lambda, plus) = jump(&s, &cg, &w).unwrap();
        assert_eq!(lambda, 20.0);
        assert_eq!(plus.gamma, Vec3::new(2.0, 2.0, 10.0));
        assert_eq!(plus.pi, s.pi);
    }

    #[test]
    fn tangential_jump_is_grazing() {
        let w = sphere_world(1.0);
        let s = State::new(Vec3::new(0.0, 0.0, 1.0), Rotation::identity(), Vec3::new(2.0, 2.0, 0.0), Vec3::zeros());
        let cg = phi_general(&s.pose(), &w.body, &w.plane).unwrap();
        assert!(matches!(jump(&s, &cg, &w), Err(Error::Grazing { .. })));
        let up = State { gamma: Vec3::new(0.0, 0.0, 1.0), ..s };
        assert!(matches!(jump(&up, &cg, &w), Err(Error::Separating { .. })));
    }

    #[test]
    fn ellipsoid_jump_conditions() {
        let w = case1_world();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut checked = 0;
        while checked < 50 {
            let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let r = exp_so3(&(axis.normalize() * rng.gen_range(0.0..3.0)));
            let mut s = State::new(
                Vec3::zeros(),
                r,
                Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-10.0..-1.0)),
                Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
            );
            // place on contact
            let cg0 = phi_general(&s.pose(), &w.body, &w.plane).unwrap();
            s.x.z -= cg0.phi;
            let cg = phi_general(&s.pose(), &w.body, &w.plane).unwrap();
            assert!(cg.phi.abs() < 1e-12);
            let (lambda, plus) = match jump(&s, &cg, &w) {
                Ok(v) => v,
                Err(Error::Separating { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            checked += 1;
            assert!(lambda != 0.0);
            assert_eq!(plus.gamma, s.gamma + cg.dphi_dx * lambda);
            assert_eq!(plus.pi, s.pi + cg.chi * lambda);
            let (e0, e1) = (energy(&s, &w), energy(&plus, &w));
            assert!((e1 - e0).abs() <= 1e-10 * e0.abs().max(1.0));
            assert!(contact_rate(&plus, &cg, &w) >= 0.0);
            // horizontal plane: only the vertical momentum changes
            assert_eq!(plus.gamma.x, s.gamma.x);
            assert_eq!(plus.gamma.y, s.gamma.y);
        }
    }

    #[test]
    fn continuous_reference_examples() {
        let mut w = case1_world();
        w.g = 0.0;
        let s = State::new(Vec3::new(1.0, 0.0, 0.0), Rotation::identity(), Vec3::new(1.0, 2.0, -1.0), Vec3::zeros());
        let out = continuous_reference(&s, 2.0, &w, 10).unwrap();
        assert!((out.x - Vec3::new(3.0, 4.0, -2.0)).norm() < 1e-14);
        let spin = State { pi: Vec3::new(4.0, -4.0, 4.0), ..s };
        let out = continuous_reference(&spin, 1.0, &w, 10_000).unwrap();
        let ke = |st: &State| 0.5 * st.pi.dot(&(w.body.inertia_inverse() * st.pi));
        assert!((out.pi.norm() - spin.pi.norm()).abs() < 1e-10);
        assert!((ke(&out) - ke(&spin)).abs() < 1e-10);
    }

    #[test]
    fn flow_converges_to_reference() {
        let w = case1_world();
        let cfg = SolverConfig::default();
        let s0 = State { x: Vec3::new(0.0, 0.0, 100.0), ..initial() };
        let reference = continuous_reference(&s0, 1.0, &w, 20_000).unwrap();
        let errs: Vec<f64> = [0.02_f64, 0.01, 0.005]
            .iter()
            .map(|&h| {
                let steps = (1.0 / h).round() as usize;
                let mut s = s0;
                for _ in 0..steps {
                    s = discrete_flow(&s, h, &w, &cfg).unwrap();
                }
                (s.r.matrix() - reference.r.matrix()).norm() + (s.pi - reference.pi).norm() + (s.x - reference.x).norm()
            })
            .collect();
        for pair in errs.windows(2) {
            let order = (pair[0] / pair[1]).log2();
            assert!(order >= 1.9, "observed order {order} from {errs:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn newton_converges_quickly(gx in -1.0..1.0f64, gy in -1.0..1.0f64, gz in -1.0..1.0f64, scale in 0.0..0.26f64) {
            let w = case1_world();
            let dir = Vec3::new(gx, gy, gz);
            prop_assume!(dir.norm() > 1e-3);
            let g = dir.normalize() * scale;
            let exp = solve_relative_rotation_detailed(&g, &w.body, &SolverConfig::default()).unwrap();
            let cay = solve_relative_rotation_detailed(&g, &w.body, &SolverConfig { retraction: Retraction::Cayley, ..SolverConfig::default() }).unwrap();
            prop_assert!(exp.iterations <= 6, "{} iterations", exp.iterations);
            prop_assert!((exp.rotation.matrix() - cay.rotation.matrix()).norm() < 1e-10);
            prop_assert!(rotation_residual(&exp.rotation, &g, &w.body) < 1e-13);
        }
    }
}
