//! Scenario files, trajectory and event CSVs, and energy plots.
//!
//! A scenario is a JSON document describing the body, the plane, the initial
//! state and the integration settings. See `scenarios/` for the bundled cases
//! and `README.md` for the schema.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::body::{
    inertia_composite, inertia_cube, inertia_ellipsoid, ConvexPolyhedron, Ellipsoid, RigidBody, ShapeNode,
};
use crate::contact::{phi_general, Plane};
use crate::driver::{SampleKind, SimConfig, Termination, Trajectory};
use crate::error::{Error, Result};
use crate::geom::{Mat3, Rotation, Vec3};
use crate::lgvci::{energy, energy_parts, SolverConfig, State, WorldParams, STANDARD_GRAVITY};

pub const SCHEMA_VERSION: u32 = 1;
/// Stored rotations may deviate from SO(3) by at most this before projection.
pub const ROTATION_LOAD_TOL: f64 = 1e-9;
pub const DEFAULT_QUADRATURE_RESOLUTION: usize = 256;

/// Number of columns in a trajectory CSV row.
pub const TRAJECTORY_COLUMNS: usize = 22;
pub const TRAJECTORY_HEADER: &str = "t,x1,x2,x3,R11,R12,R13,R21,R22,R23,R31,R32,R33,\
gamma1,gamma2,gamma3,Pi1,Pi2,Pi3,kind,energy,phi";
pub const EVENTS_HEADER: &str = "t,step,alpha,alpha_tot,lambda,grazing,energy_minus,energy_plus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BodySpec {
    Ellipsoid { a: f64, b: f64, c: f64 },
    Cube { s: f64, eps: f64 },
    Polyhedron { vertices: Vec<[f64; 3]>, eps: f64 },
    UnionOfEllipsoids { members: Vec<EllipsoidSpec> },
    IntersectionOfEllipsoids { members: Vec<EllipsoidSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum PlaneSpec {
    Normal {
        normal: [f64; 3],
        #[serde(default)]
        offset: f64,
    },
    /// Horizontal plane rotated by `tilt_deg` degrees about the y axis.
    Tilt { tilt_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x: [f64; 3],
    /// Row-major attitude matrix.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub gamma: [f64; 3],
    #[serde(rename = "Pi")]
    pub pi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "OutputSpec::default_trajectory")]
    pub trajectory: String,
    #[serde(default = "OutputSpec::default_events")]
    pub events: String,
    #[serde(default = "OutputSpec::default_plot")]
    pub plot: String,
    #[serde(default = "OutputSpec::default_summary")]
    pub summary: String,
}

impl OutputSpec {
    fn default_trajectory() -> String {
        "trajectory.csv".into()
    }
    fn default_events() -> String {
        "events.csv".into()
    }
    fn default_plot() -> String {
        "energy.svg".into()
    }
    fn default_summary() -> String {
        "summary.json".into()
    }
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            trajectory: Self::default_trajectory(),
            events: Self::default_events(),
            plot: Self::default_plot(),
            summary: Self::default_summary(),
        }
    }
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

fn default_resolution() -> usize {
    DEFAULT_QUADRATURE_RESOLUTION
}

/// The scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    pub body: BodySpec,
    pub mass: f64,
    /// Explicit inertia tensor (rows); computed from the shape when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[[f64; 3]; 3]>,
    /// Grid resolution for sampled inertia of CSG bodies.
    #[serde(default = "default_resolution")]
    pub quadrature_resolution: usize,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub plane: PlaneSpec,
    pub initial: InitialSpec,
    pub sim: SimConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// A validated scenario, ready to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub world: WorldParams,
    pub initial: State,
    pub sim: SimConfig,
    pub solver: SolverConfig,
    /// Frobenius distance by which the stored attitude was moved onto SO(3).
    pub attitude_correction: f64,
}

fn vec3(v: &[f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn member_node(m: &EllipsoidSpec) -> Result<ShapeNode> {
    Ok(ShapeNode::ellipsoid_at(Ellipsoid::new(m.a, m.b, m.c)?, vec3(&m.offset)))
}

/// Builds the shape tree and its inertia tensor.
pub fn build_body(spec: &ScenarioSpec) -> Result<RigidBody> {
    let m = spec.mass;
    let (shape, computed) = match &spec.body {
        BodySpec::Ellipsoid { a, b, c } => {
            let e = Ellipsoid::new(*a, *b, *c)?;
            (ShapeNode::ellipsoid(e), Some(inertia_ellipsoid(m, *a, *b, *c)?))
        }
        BodySpec::Cube { s, eps } => {
            let poly = ConvexPolyhedron::cube(*s, *eps)?;
            (ShapeNode::Polyhedron(poly), Some(inertia_cube(m, *s)?))
        }
        BodySpec::Polyhedron { vertices, eps } => {
            let poly = ConvexPolyhedron::new(vertices.iter().map(vec3).collect(), *eps)?;
            (ShapeNode::Polyhedron(poly), None)
        }
        BodySpec::UnionOfEllipsoids { members } => {
            let mut nodes = members.iter().map(member_node);
            let first = nodes.next().ok_or_else(|| Error::Scenario("union needs members".into()))??;
            let node = nodes.try_fold(first, |acc, n| Ok::<_, Error>(ShapeNode::union(acc, n?)))?;
            (node, None)
        }
        BodySpec::IntersectionOfEllipsoids { members } => {
            if members.len() != 2 {
                return Err(Error::Scenario(format!(
                    "intersection_of_ellipsoids needs exactly 2 members, got {}",
                    members.len()
                )));
            }
            (ShapeNode::intersection(member_node(&members[0])?, member_node(&members[1])?), None)
        }
    };
    let j = match (&spec.inertia, computed) {
        (Some(rows), _) => Mat3::from_fn(|i, k| rows[i][k]),
        (None, Some(j)) => j,
        (None, None) => inertia_composite(&shape, m, spec.quadrature_resolution)?,
    };
    RigidBody::new(m, j, shape)
}

pub fn build_plane(spec: &PlaneSpec) -> Result<Plane> {
    match spec {
        PlaneSpec::Normal { normal, offset } => Plane::new(vec3(normal), *offset),
        PlaneSpec::Tilt { tilt_deg } => Plane::tilted_about_y(tilt_deg.to_radians()),
    }
}

fn build_initial(spec: &InitialSpec) -> Result<(State, f64)> {
    let m = Mat3::from_row_slice(&spec.r);
    let raw = Rotation::from_matrix_unchecked(m);
    let err = raw.orthogonality_error();
    if err > ROTATION_LOAD_TOL || !(m.determinant() > 0.0) {
        return Err(Error::Scenario(format!(
            "initial R is not a rotation (orthogonality error {err:e}, det {})",
            m.determinant()
        )));
    }
    let r = Rotation::project(&m)?;
    let correction = (r.matrix() - m).norm();
    Ok((State::new(vec3(&spec.x), r, vec3(&spec.gamma), vec3(&spec.pi)), correction))
}

/// Validates a parsed scenario document.
pub fn validate_scenario(spec: ScenarioSpec) -> Result<Scenario> {
    if spec.schema_version != SCHEMA_VERSION {
        return Err(Error::Scenario(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            spec.schema_version
        )));
    }
    spec.sim.validate()?;
    spec.solver.validate()?;
    let body = build_body(&spec)?;
    let plane = build_plane(&spec.plane)?;
    let world = WorldParams::new(spec.gravity, plane, body)?;
    let (initial, attitude_correction) = build_initial(&spec.initial)?;
    let phi = phi_general(&initial.pose(), &world.body, &world.plane)?.phi;
    if phi < 0.0 {
        return Err(Error::Inadmissible { phi });
    }
    Ok(Scenario { sim: spec.sim, solver: spec.solver, spec, world, initial, attitude_correction })
}

/// Parses and validates a scenario JSON document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let spec: ScenarioSpec =
        serde_json::from_str(text).map_err(|e| Error::Scenario(format!("invalid scenario document: {e}")))?;
    validate_scenario(spec)
}

pub fn scenario_to_json(spec: &ScenarioSpec) -> Result<String> {
    Ok(serde_json::to_string_pretty(spec)? + "\n")
}

/// Round-trip-exact, fixed-width scientific notation.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn kind_str(k: SampleKind) -> &'static str {
    match k {
        SampleKind::Grid => "grid",
        SampleKind::Impact => "impact",
    }
}

/// Writes one row per sample with the fixed 22-column layout.
pub fn write_trajectory<W: Write>(traj: &Trajectory, w: &WorldParams, sink: &mut W) -> Result<()> {
    writeln!(sink, "{TRAJECTORY_HEADER}")?;
    for s in &traj.samples {
        let st = &s.state;
        let phi = phi_general(&st.pose(), &w.body, &w.plane)?.phi;
        let r = st.r.matrix();
        let mut fields: Vec<String> = Vec::with_capacity(TRAJECTORY_COLUMNS);
        fields.push(num(s.t));
        fields.extend(st.x.iter().map(|v| num(*v)));
        for i in 0..3 {
            for k in 0..3 {
                fields.push(num(r[(i, k)]));
            }
        }
        fields.extend(st.gamma.iter().map(|v| num(*v)));
        fields.extend(st.pi.iter().map(|v| num(*v)));
        fields.push(kind_str(s.kind).into());
        fields.push(num(energy(st, w)));
        fields.push(num(phi));
        debug_assert_eq!(fields.len(), TRAJECTORY_COLUMNS);
        writeln!(sink, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Writes one row per collision event.
pub fn write_events<W: Write>(traj: &Trajectory, w: &WorldParams, sink: &mut W) -> Result<()> {
    writeln!(sink, "{EVENTS_HEADER}")?;
    for e in &traj.events {
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{}",
            num(e.t),
            e.step,
            num(e.alpha),
            num(e.alpha_tot),
            num(e.lambda),
            e.grazing,
            num(energy(&e.state_minus, w)),
            num(energy(&e.state_plus, w)),
        )?;
    }
    Ok(())
}

/// Run statistics written next to the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub h: f64,
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub events: usize,
    pub grazing_events: usize,
    pub multi_impact_steps: usize,
    pub energy_initial: f64,
    pub energy_final: f64,
    /// (E_final − E_initial) / |E_initial|.
    pub relative_energy_drift: f64,
    pub max_relative_energy_deviation: f64,
    pub max_orthogonality_error: f64,
    pub attitude_correction: f64,
}

impl RunSummary {
    pub fn new(sc: &Scenario, traj: &Trajectory) -> Self {
        let w = &sc.world;
        let e0 = energy(&sc.initial, w);
        let scale = e0.abs().max(f64::MIN_POSITIVE);
        let last = traj.samples.last().map_or(sc.initial, |s| s.state);
        let e1 = energy(&last, w);
        let mut multi = 0;
        for (i, ev) in traj.events.iter().enumerate() {
            if i > 0 && traj.events[i - 1].step == ev.step && (i < 2 || traj.events[i - 2].step != ev.step) {
                multi += 1;
            }
        }
        RunSummary {
            name: sc.spec.name.clone(),
            termination: traj.termination,
            failure: traj.failure.clone(),
            h: sc.sim.h,
            steps_requested: sc.sim.steps,
            steps_completed: traj.samples.iter().filter(|s| s.kind == SampleKind::Grid).count() - 1,
            events: traj.events.len(),
            grazing_events: traj.events.iter().filter(|e| e.grazing).count(),
            multi_impact_steps: multi,
            energy_initial: e0,
            energy_final: e1,
            relative_energy_drift: (e1 - e0) / scale,
            max_relative_energy_deviation: traj
                .samples
                .iter()
                .map(|s| (energy(&s.state, w) - e0).abs() / scale)
                .fold(0.0, f64::max),
            max_orthogonality_error: traj.samples.iter().map(|s| s.state.r.orthogonality_error()).fold(0.0, f64::max),
            attitude_correction: sc.attitude_correction,
        }
    }
}

/// One parsed trajectory row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub state: State,
    pub kind: SampleKind,
    pub energy: f64,
    pub phi: f64,
}

pub fn read_trajectory(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRAJECTORY_HEADER => {}
        _ => return Err(Error::Trajectory("missing or unexpected header".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != TRAJECTORY_COLUMNS {
            return Err(Error::Trajectory(format!(
                "line {}: expected {} columns, found {}",
                n + 1,
                TRAJECTORY_COLUMNS,
                fields.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| Error::Trajectory(format!("line {}, column {}: {e}", n + 1, i + 1)))
        };
        let v: Vec<f64> = (0..19).map(parse).collect::<Result<_>>()?;
        let kind = match fields[19] {
            "grid" => SampleKind::Grid,
            "impact" => SampleKind::Impact,
            other => return Err(Error::Trajectory(format!("line {}: unknown kind {other:?}", n + 1))),
        };
        let r = Rotation::from_matrix_unchecked(Mat3::from_row_slice(&v[4..13]));
        let state =
            State::new(Vec3::new(v[1], v[2], v[3]), r, Vec3::new(v[13], v[14], v[15]), Vec3::new(v[16], v[17], v[18]));
        let row = TrajectoryRow { t: v[0], state, kind, energy: parse(20)?, phi: parse(21)? };
        if let Some(prev) = rows.last().map(|r: &TrajectoryRow| r.t) {
            if !(row.t > prev) {
                return Err(Error::Trajectory(format!("line {}: time does not increase", n + 1)));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Energy traces of a trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergySeries {
    pub t: Vec<f64>,
    /// Translational kinetic plus potential energy.
    pub tpe: Vec<f64>,
    /// Rotational kinetic energy.
    pub re: Vec<f64>,
    pub impacts: Vec<f64>,
}

impl EnergySeries {
    pub fn from_states<'a, I>(states: I, w: &WorldParams) -> Self
    where
        I: IntoIterator<Item = (f64, &'a State, SampleKind)>,
    {
        let mut out = EnergySeries::default();
        for (t, s, kind) in states {
            let (tr, rot, pot) = energy_parts(s, w);
            out.t.push(t);
            out.tpe.push(tr + pot);
            out.re.push(rot);
            if kind == SampleKind::Impact {
                out.impacts.push(t);
            }
        }
        out
    }

    pub fn from_trajectory(traj: &Trajectory, w: &WorldParams) -> Self {
        let mut out = Self::from_states(traj.samples.iter().map(|s| (s.t, &s.state, s.kind)), w);
        out.impacts = traj.events.iter().map(|e| e.t).collect();
        out
    }
}

pub fn render_energy_svg(traj: &Trajectory, w: &WorldParams) -> String {
    render_energy_series(&EnergySeries::from_trajectory(traj, w))
}

/// Renders total, T.P.E. and R.E. against time as a standalone SVG 1.1 document.
pub fn render_energy_series(series: &EnergySeries) -> String {
    const WIDTH: f64 = 960.0;
    const HEIGHT: f64 = 540.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;
    let total: Vec<f64> = series.tpe.iter().zip(&series.re).map(|(a, b)| a + b).collect();
    let (t0, t1) = match (series.t.first(), series.t.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => (0.0, 1.0),
    };
    let t_span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let all = total.iter().chain(&series.tpe).chain(&series.re);
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |t: f64| LEFT + (t - t0) / t_span * (WIDTH - LEFT - RIGHT);
    let py = |e: f64| TOP + (hi - e) / (hi - lo) * (HEIGHT - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
    for &t in &series.impacts {
        let x = px(t);
        let _ = writeln!(
            svg,
            r##"<line class="impact" x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#bbb" stroke-width="0.5"/>"##,
            HEIGHT - BOTTOM
        );
    }
    for (label, data, color) in
        [("total", &total, "#000000"), ("T.P.E.", &series.tpe, "#1f77b4"), ("R.E.", &series.re, "#d62728")]
    {
        let points = decimate(&series.t, data, (WIDTH - LEFT - RIGHT) as usize);
        let mut path = String::new();
        for (t, e) in &points {
            let _ = write!(path, "{:.2},{:.2} ", px(*t), py(*e));
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{label}" fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#,
            path.trim_end()
        );
    }
    for (i, (label, color)) in [("total", "#000000"), ("T.P.E.", "#1f77b4"), ("R.E.", "#d62728")].iter().enumerate() {
        let y = TOP + 15.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>"#,
            WIDTH - RIGHT - 70.0
        );
    }
    for (v, y) in [(hi, TOP), (lo, HEIGHT - BOTTOM)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.4}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (v, x, anchor) in [(t0, LEFT, "start"), (t1, WIDTH - RIGHT, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#,
            HEIGHT - BOTTOM + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">time</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">energy</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Keeps the first, minimum, maximum and last point of each of `buckets`
/// equal-time buckets so spikes survive downsampling.
fn decimate(t: &[f64], v: &[f64], buckets: usize) -> Vec<(f64, f64)> {
    if t.len() <= 4 * buckets.max(1) {
        return t.iter().copied().zip(v.iter().copied()).collect();
    }
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let width = (t1 - t0) / buckets as f64;
    let mut out = Vec::with_capacity(4 * buckets);
    let mut start = 0;
    while start < t.len() {
        let b = (((t[start] - t0) / width) as usize).min(buckets - 1);
        let mut end = start;
        while end < t.len() && ((((t[end] - t0) / width) as usize).min(buckets - 1)) == b {
            end += 1;
        }
        let slice = start..end;
        let imin = slice.clone().min_by(|&a, &c| v[a].total_cmp(&v[c])).unwrap_or(start);
        let imax = slice.clone().max_by(|&a, &c| v[a].total_cmp(&v[c])).unwrap_or(start);
        let mut idx = [start, imin, imax, end - 1];
        idx.sort_unstable();
        let mut last = usize::MAX;
        for i in idx {
            if i != last {
                out.push((t[i], v[i]));
                last = i;
            }
        }
        start = end;
    }
    out
}
