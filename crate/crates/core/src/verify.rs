//! Verification suites shared by the `lgvci verify` command and the
//! acceptance tests.
//!
//! Every suite returns a [`SuiteReport`] holding measured values next to the
//! thresholds they are judged against, so failures are reported with numbers
//! rather than a bare boolean.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body::{
    inertia_composite, inertia_cube, inertia_ellipsoid, jd_from_j, ConvexPolyhedron, Ellipsoid, RigidBody, ShapeNode,
};
use crate::contact::{phi_general, Plane};
use crate::driver::{run, CollisionEvent, SampleKind, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::geom::{exp_so3, fd_matrix_gradient, Mat3, Pose, Rotation, Vec3};
use crate::lgvci::{
    contact_rate, continuous_reference, del_residual, discrete_energy, discrete_flow, energy, energy_parts,
    impulse_residual, jump, solve_relative_rotation_detailed, Retraction, SolverConfig, State, WorldParams,
};
use crate::scenario::{load_scenario, Scenario};

/// Environment variable overriding the solver tolerance used by the suites.
pub const EPS_TOL_ENV: &str = "LGVCI_EPS_TOL";
pub const DEFAULT_SEED: u64 = 20240601;

pub const SUITES: [&str; 10] = [
    "inertia-reference",
    "jump-conservation",
    "sphere-bounce",
    "long-run",
    "discrete-energy",
    "gradients",
    "solver",
    "convergence",
    "sensitivity",
    "del-equivalence",
];

/// One measured property.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub note: Option<String>,
}

impl Check {
    /// Passes when `measured ≤ threshold`.
    pub fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Check { name: name.into(), measured, threshold, passed: measured <= threshold, note: None }
    }

    /// Passes when `measured ≥ threshold`.
    pub fn at_least(name: &str, measured: f64, threshold: f64) -> Self {
        Check { name: name.into(), measured, threshold, passed: measured >= threshold, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// One line per check, suitable for terminal output.
    pub fn render(&self) -> String {
        let mut out = format!(
            "[{}] {} ({:.2} s)\n",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.elapsed.as_secs_f64()
        );
        for c in &self.checks {
            out.push_str(&format!(
                "    {} {}: measured {:.3e}, threshold {:.3e}{}\n",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.measured,
                c.threshold,
                c.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default()
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("    note: {n}\n"));
        }
        out
    }

    /// Compact single-line status.
    pub fn summary_line(&self) -> String {
        let failing: Vec<&str> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        if failing.is_empty() {
            format!("PASS {}", self.suite)
        } else {
            format!("FAIL {} (failing: {})", self.suite, failing.join(", "))
        }
    }
}

/// The tolerance override from the environment, if set.
pub fn eps_tol_override() -> Result<Option<f64>> {
    match std::env::var(EPS_TOL_ENV) {
        Ok(v) => {
            let tol: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{EPS_TOL_ENV} is not a number: {v:?}")))?;
            SolverConfig { eps_tol: tol, ..SolverConfig::default() }.validate()?;
            Ok(Some(tol))
        }
        Err(_) => Ok(None),
    }
}

/// Default solver settings with the tolerance optionally overridden from the
/// environment.
pub fn solver_from_env() -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(tol) = eps_tol_override()? {
        cfg.eps_tol = tol;
    }
    Ok(cfg)
}

const CASE_FILES: [&str; 4] = [
    include_str!("../../../scenarios/case1.json"),
    include_str!("../../../scenarios/case2.json"),
    include_str!("../../../scenarios/case3.json"),
    include_str!("../../../scenarios/case4.json"),
];

/// One of the four bundled benchmark scenarios (1-based).
pub fn benchmark_case(n: usize) -> Result<Scenario> {
    let text =
        CASE_FILES.get(n.wrapping_sub(1)).ok_or_else(|| Error::InvalidParameter(format!("no bundled case {n}")))?;
    load_scenario(text)
}

/// Shape of the third benchmark body, two overlapping ellipsoids.
pub fn case3_union() -> Result<ShapeNode> {
    let c = Vec3::new(-0.9937128, 0.0, 0.0);
    Ok(ShapeNode::union(
        ShapeNode::ellipsoid_at(Ellipsoid::new(3.0, 4.0, 5.0)?, Vec3::new(1.5, 0.0, 0.0) + c),
        ShapeNode::ellipsoid_at(Ellipsoid::new(6.0, 1.0, 1.0)?, Vec3::new(-4.5, 0.0, 0.0) + c),
    ))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    // uniform on SO(3) via a random unit quaternion
    let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        normal(rng),
        normal(rng),
        normal(rng),
        normal(rng),
    ));
    Rotation::from_matrix_unchecked(*q.to_rotation_matrix().matrix())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

fn rel_diag_error(a: &Mat3, b: &Mat3) -> f64 {
    (0..3).map(|i| ((a[(i, i)] - b[(i, i)]) / b[(i, i)]).abs()).fold(0.0, f64::max)
}

fn suite_inertia_reference() -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let e = inertia_ellipsoid(1.0, 2.0, 3.0, 4.0)?;
    let exact = Mat3::from_diagonal(&Vec3::new(5.0, 4.0, 2.6));
    checks.push(Check::at_most("ellipsoid (2,3,4) equals diag(5, 4, 2.6)", (e - exact).abs().max(), 0.0));
    let cube = inertia_cube(1.0, 2.0 * 3f64.sqrt())?;
    checks.push(
        Check::at_most("cube 2*sqrt(3) equals 2I", (cube - Mat3::identity() * 2.0).abs().max(), 4.0 * f64::EPSILON)
            .with_note("2*sqrt(3) is not representable, so the product is compared within a few ulps"),
    );
    let t = Instant::now();
    let composite = inertia_composite(&case3_union()?, 1.0, 256)?;
    let elapsed = t.elapsed().as_secs_f64();
    let table = Mat3::from_diagonal(&Vec3::new(7.5932718, 9.9326434, 8.2731252));
    checks.push(Check::at_most(
        "union of ellipsoids at resolution 256, relative error",
        rel_diag_error(&composite, &table),
        1e-2,
    ));
    checks.push(Check::at_most(
        "union of ellipsoids off-diagonal magnitude",
        (composite - Mat3::from_diagonal(&composite.diagonal())).abs().max(),
        1e-2,
    ));
    checks.push(Check::at_most("composite runtime [s]", elapsed, 30.0));
    Ok(SuiteReport {
        suite: "inertia-reference".into(),
        checks,
        notes: vec![format!(
            "composite diagonal = ({:.7}, {:.7}, {:.7})",
            composite[(0, 0)],
            composite[(1, 1)],
            composite[(2, 2)]
        )],
        elapsed: start.elapsed(),
    })
}

/// A random approaching contact state for the body of `world`.
fn random_impact_state(rng: &mut ChaCha8Rng, world: &WorldParams) -> Result<State> {
    loop {
        let r = random_rotation(rng);
        let tangent = random_vec(rng, 3.0);
        let mut s = State::new(tangent, r, random_vec(rng, 10.0), random_vec(rng, 10.0));
        let n = *world.plane.normal();
        for _ in 0..3 {
            let cg = phi_general(&s.pose(), &world.body, &world.plane)?;
            s.x -= n * cg.phi;
        }
        let cg = phi_general(&s.pose(), &world.body, &world.plane)?;
        let rate = contact_rate(&s, &cg, world);
        if rate.abs() < 1e-3 {
            continue;
        }
        if rate > 0.0 {
            s.gamma = -s.gamma;
            s.pi = -s.pi;
        }
        return Ok(s);
    }
}

fn suite_jump_conservation(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = ["ellipsoid", "ellipsoid on tilted plane", "union of ellipsoids", "rounded cube"];
    for (i, label) in labels.iter().enumerate() {
        let world = benchmark_case(i + 1)?.world;
        let (mut de, mut perp, mut dpi, mut min_lambda) = (0.0_f64, 0.0_f64, 0.0_f64, f64::INFINITY);
        let mut max_phi = 0.0_f64;
        for _ in 0..1000 {
            let s = random_impact_state(&mut rng, &world)?;
            let cg = phi_general(&s.pose(), &world.body, &world.plane)?;
            max_phi = max_phi.max(cg.phi.abs());
            let (lambda, plus) = jump(&s, &cg, &world)?;
            min_lambda = min_lambda.min(lambda.abs());
            let (t, rot, _) = energy_parts(&s, &world);
            de = de.max((energy(&plus, &world) - energy(&s, &world)).abs() / (t + rot));
            let dg = plus.gamma - s.gamma;
            let a = cg.dphi_dx.normalize();
            perp = perp.max((dg - a * dg.dot(&a)).norm());
            dpi = dpi.max((plus.pi - s.pi - cg.chi * lambda).norm());
        }
        checks.push(Check::at_most(&format!("{label}: max relative energy change"), de, 1e-10));
        checks.push(Check::at_most(&format!("{label}: impulse component orthogonal to dPhi/dx"), perp, 1e-13));
        checks.push(Check::at_most(&format!("{label}: |dPi - lambda chi|"), dpi, 1e-13));
        checks.push(Check::at_least(&format!("{label}: min |lambda|"), min_lambda, f64::MIN_POSITIVE));
        checks.push(Check::at_most(&format!("{label}: |Phi| at impact states"), max_phi, 1e-12));
    }
    let elapsed = start.elapsed().as_secs_f64();
    checks.push(Check::at_most("runtime [s]", elapsed, 10.0));
    Ok(SuiteReport {
        suite: "jump-conservation".into(),
        checks,
        notes: vec!["energy change is relative to the kinetic energy, which is all a jump can alter".into()],
        elapsed: start.elapsed(),
    })
}

pub fn unit_sphere_world(g: f64) -> Result<WorldParams> {
    let body =
        RigidBody::new(1.0, inertia_ellipsoid(1.0, 1.0, 1.0, 1.0)?, ShapeNode::ellipsoid(Ellipsoid::sphere(1.0)?))?;
    WorldParams::new(g, Plane::horizontal(), body)
}

fn suite_sphere_bounce(solver: &SolverConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let world = unit_sphere_world(crate::lgvci::STANDARD_GRAVITY)?;
    let s0 = State::new(Vec3::new(0.0, 0.0, 2.0), Rotation::identity(), Vec3::zeros(), Vec3::zeros());
    let traj = run(&s0, &world, &SimConfig::new(0.01, 1000), solver)?;
    let t_star = (2.0 / world.g).sqrt();
    let mut checks = Vec::new();
    checks.push(Check::at_least("bounces observed", traj.events.len() as f64, 10.0));
    if let Some(first) = traj.events.first() {
        checks.push(Check::at_most("first impact time error [s]", (first.t - t_star).abs(), 1e-12));
    }
    let seq = traj
        .events
        .iter()
        .take(10)
        .enumerate()
        .map(|(k, e)| (e.t - (2 * k + 1) as f64 * t_star).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("impact time sequence error over 10 bounces [s]", seq, 1e-9));
    let bounces = || traj.events.iter().take(10);
    let reflect = bounces().map(|e| (e.state_plus.gamma + e.state_minus.gamma).norm()).fold(0.0, f64::max);
    checks.push(Check::at_most("reflection |gamma+ + gamma-|", reflect, 1e-13));
    let speed = bounces().map(|e| (e.state_plus.gamma.z - (2.0 * world.g).sqrt()).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most("rebound momentum vs sqrt(2g)", speed, 1e-9));
    Ok(SuiteReport { suite: "sphere-bounce".into(), checks, notes: vec![], elapsed: start.elapsed() })
}

fn suite_long_run(solver: &SolverConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let sc = benchmark_case(4)?;
    let sim = SimConfig { steps: 100_000, ..sc.sim };
    let traj = run(&sc.initial, &sc.world, &sim, solver)?;
    let ortho = traj.samples.iter().map(|s| s.state.r.orthogonality_error()).fold(0.0, f64::max);
    let g0 = sc.initial.gamma;
    let planar = traj
        .samples
        .iter()
        .map(|s| (s.state.gamma.x - g0.x).abs().max((s.state.gamma.y - g0.y).abs()))
        .fold(0.0, f64::max);
    let e0 = energy(&sc.initial, &sc.world);
    let e_end = energy(&traj.samples.last().expect("nonempty").state, &sc.world);
    let max_drift =
        traj.samples.iter().map(|s| (energy(&s.state, &sc.world) - e0).abs()).fold(0.0, f64::max) / e0.abs();
    let direction = if e_end > e0 {
        "increasing"
    } else if e_end < e0 {
        "decreasing"
    } else {
        "none"
    };
    let elapsed = start.elapsed().as_secs_f64();
    let checks = vec![
        Check::at_most(
            "completed",
            if traj.termination == crate::driver::Termination::Completed { 0.0 } else { 1.0 },
            0.0,
        ),
        Check::at_most("max |R^T R - I|_F", ortho, 1e-11),
        Check::at_most("max deviation of gamma_1, gamma_2", planar, 1e-12),
        Check::at_most("max relative energy drift", max_drift, 1e-3),
        Check::at_most("runtime [s]", elapsed, 300.0),
    ];
    Ok(SuiteReport {
        suite: "long-run".into(),
        checks,
        notes: vec![format!(
            "{} collisions; final relative drift {:.3e} ({direction})",
            traj.events.len(),
            (e_end - e0) / e0
        )],
        elapsed: start.elapsed(),
    })
}

/// Discrete-energy mismatch E_d(q̃, q_i, (1−α)h) − E_d(q_{i−1}, q̃, αh) for
/// every grid step of a trajectory that contains exactly one impact,
/// relative to the total energy.
pub fn discrete_energy_balance(traj: &Trajectory, world: &WorldParams, h: f64) -> Vec<f64> {
    let grid: Vec<&State> = traj.samples.iter().filter(|s| s.kind == SampleKind::Grid).map(|s| &s.state).collect();
    let mut out = Vec::new();
    for (i, ev) in traj.events.iter().enumerate() {
        let alone = traj.events.get(i.wrapping_sub(1)).is_none_or(|p| p.step != ev.step)
            && traj.events.get(i + 1).is_none_or(|n| n.step != ev.step);
        if !alone || ev.grazing || ev.step + 1 >= grid.len() {
            continue;
        }
        let (before, after) = (grid[ev.step], grid[ev.step + 1]);
        let q = ev.state_minus.pose();
        let left = discrete_energy(&before.pose(), &q, ev.alpha * h, world);
        let right = discrete_energy(&q, &after.pose(), (1.0 - ev.alpha) * h, world);
        out.push((right - left).abs() / energy(&ev.state_minus, world).abs());
    }
    out
}

fn suite_discrete_energy(solver: &SolverConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for n in 1..=4 {
        let sc = benchmark_case(n)?;
        let sim = SimConfig { steps: 10_000, ..sc.sim };
        let traj = run(&sc.initial, &sc.world, &sim, solver)?;
        let balance = discrete_energy_balance(&traj, &sc.world, sim.h);
        let worst = balance.iter().copied().fold(0.0, f64::max);
        let mean = balance.iter().sum::<f64>() / balance.len().max(1) as f64;
        checks.push(Check::at_most(&format!("case {n}: max relative discrete-energy imbalance"), worst, 1e-9));
        notes.push(format!("case {n}: {} single-impact steps, mean imbalance {mean:.3e}", balance.len()));
        if n == 1 {
            let half = SimConfig { h: sim.h / 2.0, steps: 2 * sim.steps, ..sim };
            let fine = run(&sc.initial, &sc.world, &half, solver)?;
            let worst_half = discrete_energy_balance(&fine, &sc.world, half.h).into_iter().fold(0.0, f64::max);
            notes.push(format!("case 1 at h/2: max imbalance {worst_half:.3e}"));
        }
    }
    Ok(SuiteReport { suite: "discrete-energy".into(), checks, notes, elapsed: start.elapsed() })
}

fn random_probable_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(
        Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(5.0..15.0)),
        random_rotation(rng),
    )
}

/// Largest deviation between the analytic partials of Φ and central
/// differences, over `samples` random poses.
pub fn gradient_error(world: &WorldParams, samples: usize, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let h = 1e-6;
    let (mut ex, mut er) = (0.0_f64, 0.0_f64);
    let phi_at = |pose: &Pose| phi_general(pose, &world.body, &world.plane).map(|g| g.phi);
    for _ in 0..samples {
        let pose = random_probable_pose(rng);
        let cg = phi_general(&pose, &world.body, &world.plane)?;
        for k in 0..3 {
            let e = Vec3::ith(k, h);
            let plus = phi_at(&Pose::new(pose.position + e, pose.attitude))?;
            let minus = phi_at(&Pose::new(pose.position - e, pose.attitude))?;
            ex = ex.max(((plus - minus) / (2.0 * h) - cg.dphi_dx[k]).abs());
        }
        let failure = std::cell::RefCell::new(None);
        let fd = fd_matrix_gradient(
            |m| match phi_at(&Pose::new(pose.position, Rotation::from_matrix_unchecked(*m))) {
                Ok(v) => v,
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    f64::NAN
                }
            },
            pose.attitude.matrix(),
            h,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        er = er.max((fd - cg.dphi_dr).abs().max());
    }
    Ok((ex, er))
}

fn suite_gradients(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut checks = Vec::new();
    let labels = [(1, "ellipsoid"), (2, "ellipsoid on tilted plane"), (3, "union of ellipsoids"), (4, "rounded cube")];
    for (n, label) in labels {
        let world = benchmark_case(n)?.world;
        let (ex, er) = gradient_error(&world, 100, &mut rng)?;
        checks.push(Check::at_most(&format!("{label}: dPhi/dx vs central differences"), ex, 1e-6));
        checks.push(Check::at_most(&format!("{label}: dPhi/dR vs central differences"), er, 1e-6));
    }
    // a visibly rounded cube, where the rounding term of dPhi/dR matters
    let rounded =
        RigidBody::new(1.0, inertia_cube(1.0, 2.0)?, ShapeNode::Polyhedron(ConvexPolyhedron::cube(2.0, 0.05)?))?;
    let world = WorldParams::new(crate::lgvci::STANDARD_GRAVITY, Plane::horizontal(), rounded)?;
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let pose = random_probable_pose(&mut rng);
        let cg = phi_general(&pose, &world.body, &world.plane)?;
        for k in 0..3 {
            let w = Vec3::ith(k, 1e-6);
            let plus =
                phi_general(&Pose::new(pose.position, pose.attitude * exp_so3(&w)), &world.body, &world.plane)?.phi;
            let minus =
                phi_general(&Pose::new(pose.position, pose.attitude * exp_so3(&-w)), &world.body, &world.plane)?.phi;
            worst = worst.max(((plus - minus) / 2e-6 - cg.chi[k]).abs());
        }
    }
    checks.push(Check::at_most("cube with eps = 0.05: chi vs derivative along SO(3)", worst, 1e-6));
    Ok(SuiteReport { suite: "gradients".into(), checks, notes: vec![], elapsed: start.elapsed() })
}

fn suite_solver(seed: u64, solver: &SolverConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let (mut worst_res, mut worst_agree, mut max_iters) = (0.0_f64, 0.0_f64, 0usize);
    let mut failures = 0usize;
    for _ in 0..10_000 {
        let q = random_rotation(&mut rng);
        let jd_diag = Vec3::new(rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0));
        let jd = q.matrix() * Mat3::from_diagonal(&jd_diag) * q.matrix().transpose();
        let jd = (jd + jd.transpose()) * 0.5;
        let j = Mat3::identity() * jd.trace() - jd;
        let body = RigidBody::new(1.0, j, ShapeNode::ellipsoid(Ellipsoid::sphere(1.0)?))?;
        let limit = 0.1 * body.min_principal_moment();
        let dir = Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)).normalize();
        let g = dir * rng.gen_range(0.0..limit);
        let exp = solve_relative_rotation_detailed(&g, &body, solver);
        let cay =
            solve_relative_rotation_detailed(&g, &body, &SolverConfig { retraction: Retraction::Cayley, ..*solver });
        let (exp, cay) = match (exp, cay) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                failures += 1;
                continue;
            }
        };
        let jd_body = jd_from_j(body.inertia())?;
        for sol in [&exp, &cay] {
            let res = (crate::geom::asym(&(sol.rotation.matrix() * jd_body)) - crate::geom::skew(&g)).norm();
            worst_res = worst_res.max(res);
        }
        max_iters = max_iters.max(exp.iterations);
        worst_agree = worst_agree.max((exp.rotation.matrix() - cay.rotation.matrix()).norm());
    }
    let checks = vec![
        Check::at_most("solver failures", failures as f64, 0.0),
        Check::at_most("max |asym(F J_d) - S(g)|_F", worst_res, 1e-13),
        Check::at_most("max |F_exp - F_cayley|_F", worst_agree, 1e-10),
        Check::at_most("max Newton iterations (exp)", max_iters as f64, 6.0),
    ];
    Ok(SuiteReport {
        suite: "solver".into(),
        checks,
        notes: vec![format!("eps_tol = {:e}", solver.eps_tol)],
        elapsed: start.elapsed(),
    })
}

/// Error of the discrete flow against the continuous reference at each step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub errors: Vec<(f64, f64)>,
    /// Least-squares slope of log error against log h; `None` when every
    /// error is at the rounding level (see [`ROUNDING_LEVEL`]) and no order
    /// can be fitted.
    pub order: Option<f64>,
}

/// Errors below this fraction of the reference state's magnitude are treated
/// as exact. The reference accumulates rounding over many RK4 substeps.
pub const ROUNDING_LEVEL: f64 = 1e-10;

/// Runs the collision-free flow over `horizon` for each step size and compares
/// against [`continuous_reference`] with `substeps` RK4 steps.
pub fn convergence_study(
    world: &WorldParams,
    initial: &State,
    horizon: f64,
    hs: &[f64],
    substeps: usize,
    solver: &SolverConfig,
) -> Result<ConvergenceReport> {
    if hs.len() < 3 {
        return Err(Error::InvalidParameter(format!("at least 3 step sizes are required, got {}", hs.len())));
    }
    let reference = continuous_reference(initial, horizon, world, substeps)?;
    let mut errors = Vec::with_capacity(hs.len());
    for &h in hs {
        let steps = (horizon / h).round();
        if !(h > 0.0) || ((steps * h - horizon).abs() > 1e-9 * horizon) {
            return Err(Error::InvalidParameter(format!("h = {h} does not divide the horizon {horizon}")));
        }
        let mut s = *initial;
        for _ in 0..steps as usize {
            s = discrete_flow(&s, h, world, solver)?;
            let phi = phi_general(&s.pose(), &world.body, &world.plane)?.phi;
            if phi < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "the body reaches the plane within the horizon (h = {h})"
                )));
            }
        }
        let err = (s.x - reference.x).norm()
            + (s.r.matrix() - reference.r.matrix()).norm()
            + (s.gamma - reference.gamma).norm()
            + (s.pi - reference.pi).norm();
        errors.push((h, err));
    }
    let scale = reference.x.norm() + reference.r.matrix().norm() + reference.gamma.norm() + reference.pi.norm();
    let order = if errors.iter().all(|(_, e)| *e < ROUNDING_LEVEL * scale.max(1.0)) {
        None
    } else {
        let pts: Vec<(f64, f64)> = errors.iter().map(|(h, e)| (h.ln(), e.max(f64::MIN_POSITIVE).ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    };
    Ok(ConvergenceReport { errors, order })
}

fn suite_convergence(solver: &SolverConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let sc = benchmark_case(1)?;
    let rep = convergence_study(&sc.world, &sc.initial, 1.0, &[0.01, 0.005, 0.0025], 40_000, solver)?;
    let mut checks = Vec::new();
    let pairwise = rep.errors.windows(2).map(|p| (p[0].1 / p[1].1).log2()).fold(f64::INFINITY, f64::min);
    checks.push(Check::at_least("fitted order", rep.order.unwrap_or(f64::NAN), 1.9));
    checks.push(Check::at_least("smallest pairwise order", pairwise, 1.9));
    let notes = rep.errors.iter().map(|(h, e)| format!("h = {h}: error {e:.3e}")).collect();
    Ok(SuiteReport { suite: "convergence".into(), checks, notes, elapsed: start.elapsed() })
}

/// Spectral norm of a 3×3 matrix.
fn norm2(m: &Mat3) -> f64 {
    m.singular_values().max()
}

fn suite_sensitivity(solver: &SolverConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let sc = benchmark_case(4)?;
    let sim = SimConfig { steps: 4000, ..sc.sim };
    let base = run(&sc.initial, &sc.world, &sim, solver)?;
    let theta = 1e-8 * std::f64::consts::PI;
    let delta_r = Rotation::about_axis(&Vec3::y(), theta);
    let pos = State { x: sc.initial.x + Vec3::new(0.0, 0.0, 1e-8), ..sc.initial };
    let att = State { r: sc.initial.r * delta_r, ..sc.initial };
    let grid = |t: &Trajectory| -> Vec<State> {
        t.samples.iter().filter(|s| s.kind == SampleKind::Grid).map(|s| s.state).collect()
    };
    let base_grid = grid(&base);
    let tenth = base.events.get(9).map(|e| e.t);
    let mut checks = Vec::new();
    let mut notes = vec![
        format!("reference run has {} collisions", base.events.len()),
        format!(
            "attitude Err(0) equals 2 sin(theta/2) = {:.4e} in the spectral norm, not 1.75e-8",
            2.0 * (theta / 2.0).sin()
        ),
    ];
    for (label, perturbed, expected0) in
        [("position", pos, 1e-8), ("attitude", att, norm2(&(delta_r.matrix() - Mat3::identity())))]
    {
        let traj = run(&perturbed, &sc.world, &sim, solver)?;
        let other = grid(&traj);
        let err: Vec<f64> = base_grid
            .iter()
            .zip(&other)
            .map(|(a, b)| (b.x - a.x).norm() + norm2(&(b.r.matrix() - a.r.matrix())))
            .collect();
        checks.push(
            Check::at_most(
                &format!("{label}: |Err(0) - analytic| / analytic"),
                (err[0] - expected0).abs() / expected0,
                1e-6,
            )
            .with_note(format!("Err(0) = {:.4e}", err[0])),
        );
        let crossing = err.iter().position(|e| *e > 1e-5).map(|k| k as f64 * sim.h);
        let collisions_before = crossing.map(|t| base.events.iter().filter(|e| e.t <= t).count());
        checks.push(
            Check::at_most(
                &format!("{label}: collisions before Err exceeds 1e-5"),
                collisions_before.map_or(f64::INFINITY, |c| c as f64),
                10.0,
            )
            .with_note(format!("crossing at t = {}", crossing.map_or("never".into(), |t| format!("{t:.2}")))),
        );
        if let Some(t10) = tenth {
            let horizon = (t10 / sim.h).ceil() as usize + 1;
            let peak = err.iter().take(horizon + 1).copied().fold(0.0, f64::max);
            checks.push(Check::at_least(&format!("{label}: growth factor by the 10th collision"), peak / err[0], 1e3));
        }
        notes.push(format!("{label}: {} collisions", traj.events.len()));
    }
    Ok(SuiteReport { suite: "sensitivity".into(), checks, notes, elapsed: start.elapsed() })
}

/// Length of the discrete-flow sub-step that produced each sample (zero for
/// the initial sample), paired with the event behind each impact sample.
fn substeps(traj: &Trajectory, h: f64) -> Result<Vec<(f64, Option<&CollisionEvent>)>> {
    let mut out = Vec::with_capacity(traj.samples.len());
    let mut events = traj.events.iter().peekable();
    let mut last_alpha_tot: Option<(usize, f64)> = None;
    for (i, sample) in traj.samples.iter().enumerate() {
        if i == 0 {
            out.push((0.0, None));
            continue;
        }
        match sample.kind {
            SampleKind::Impact => {
                while events.peek().is_some_and(|e| e.t < sample.t) {
                    events.next();
                }
                let ev = events
                    .next()
                    .filter(|e| e.t == sample.t)
                    .ok_or_else(|| Error::Trajectory(format!("no event for the impact sample at t = {}", sample.t)))?;
                last_alpha_tot = Some((ev.step, ev.alpha_tot));
                out.push((ev.alpha * h, Some(ev)));
            }
            SampleKind::Grid => {
                let step = (sample.t / h).round() as usize - 1;
                let dt = match last_alpha_tot {
                    Some((s, a)) if s == step => (1.0 - a) * h,
                    _ => h,
                };
                out.push((dt, None));
            }
        }
    }
    Ok(out)
}

/// Largest translational and rotational DEL residual over consecutive sample
/// triples, with the impulse subtracted at impact samples. Also returns the
/// number of triples centred on an impact.
pub fn del_residual_scan(traj: &Trajectory, world: &WorldParams, h: f64) -> Result<(f64, f64, usize)> {
    let steps = substeps(traj, h)?;
    let (mut wt, mut wr, mut impact_triples) = (0.0_f64, 0.0_f64, 0usize);
    for i in 1..traj.samples.len().saturating_sub(1) {
        let (a, b, c) = (&traj.samples[i - 1], &traj.samples[i], &traj.samples[i + 1]);
        let (mut t, mut r) =
            del_residual(&a.state.pose(), &b.state.pose(), &c.state.pose(), steps[i].0, steps[i + 1].0, world);
        if let Some(ev) = steps[i].1 {
            let cg = phi_general(&ev.state_minus.pose(), &world.body, &world.plane)?;
            let (it, ir) = impulse_residual(ev.lambda, &cg);
            t -= it;
            r -= ir;
            impact_triples += 1;
        }
        wt = wt.max(t.norm());
        wr = wr.max(r.norm());
    }
    Ok((wt, wr, impact_triples))
}

fn suite_del_equivalence(solver: &SolverConfig) -> Result<SuiteReport> {
    let start = Instant::now();
    let sc = benchmark_case(1)?;
    let sim = SimConfig { steps: 1000, ..sc.sim };
    let traj = run(&sc.initial, &sc.world, &sim, solver)?;
    let (wt, wr, n) = del_residual_scan(&traj, &sc.world, sim.h)?;
    let shortest = traj.events.iter().map(|e| e.alpha.min(1.0 - e.alpha_tot)).fold(1.0, f64::min) * sim.h;
    let checks = vec![
        Check::at_least("impact triples examined", n as f64, 1.0),
        Check::at_most("max translational DEL residual", wt, 1e-10),
        Check::at_most("max rotational DEL residual", wr, 1e-10),
    ];
    Ok(SuiteReport {
        suite: "del-equivalence".into(),
        checks,
        notes: vec![
            format!("{} triples, {} events", traj.samples.len().saturating_sub(2), traj.events.len()),
            format!(
                "shortest sub-step {shortest:.3e} s; residual times that length: {:.3e} (translational), {:.3e} (rotational)",
                wt * shortest,
                wr * shortest
            ),
        ],
        elapsed: start.elapsed(),
    })
}

/// Runs one named suite.
pub fn run_suite(name: &str, seed: u64, solver: &SolverConfig) -> Result<SuiteReport> {
    match name {
        "inertia-reference" => suite_inertia_reference(),
        "jump-conservation" => suite_jump_conservation(seed),
        "sphere-bounce" => suite_sphere_bounce(solver),
        "long-run" => suite_long_run(solver),
        "discrete-energy" => suite_discrete_energy(solver),
        "gradients" => suite_gradients(seed),
        "solver" => suite_solver(seed, solver),
        "convergence" => suite_convergence(solver),
        "sensitivity" => suite_sensitivity(solver),
        "del-equivalence" => suite_del_equivalence(solver),
        other => {
            Err(Error::InvalidParameter(format!("unknown suite {other:?}; available: all, {}", SUITES.join(", "))))
        }
    }
}
