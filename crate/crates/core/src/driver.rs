//! Fixed-step time integration with impact detection.
//!
//! Each grid step is first attempted with a plain discrete flow. If the result
//! interpenetrates the plane, the fraction of the step at which contact occurs
//! is located by bisection, the impact map is applied there, and the rest of
//! the step is flowed. This repeats until the step completes without
//! interpenetration or the per-step impact count exceeds `zeno_j_max`.

use serde::{Deserialize, Serialize};

use crate::contact::phi_general;
use crate::error::{Error, Result};
use crate::lgvci::{discrete_flow, jump, SolverConfig, State, WorldParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Grid timestep.
    pub h: f64,
    /// Number of grid steps.
    pub steps: usize,
    /// Impact states satisfy 0 ≤ Φ ≤ contact_tol.
    #[serde(default = "defaults::contact_tol")]
    pub contact_tol: f64,
    /// Maximum number of impacts resolved within one grid step.
    #[serde(default = "defaults::zeno_j_max")]
    pub zeno_j_max: usize,
    #[serde(default = "defaults::bisection_max_iters")]
    pub bisection_max_iters: usize,
}

mod defaults {
    pub fn contact_tol() -> f64 {
        1e-12
    }
    pub fn zeno_j_max() -> usize {
        64
    }
    pub fn bisection_max_iters() -> usize {
        200
    }
}

impl SimConfig {
    pub fn new(h: f64, steps: usize) -> Self {
        SimConfig {
            h,
            steps,
            contact_tol: defaults::contact_tol(),
            zeno_j_max: defaults::zeno_j_max(),
            bisection_max_iters: defaults::bisection_max_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidParameter(format!("h must be positive, got {}", self.h)));
        }
        if self.steps < 1 {
            return Err(Error::InvalidParameter("at least one step is required".into()));
        }
        if !(self.contact_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("contact_tol must be positive, got {}", self.contact_tol)));
        }
        if self.bisection_max_iters < 1 {
            return Err(Error::InvalidParameter("bisection_max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub t: f64,
    /// Grid step in which the impact happened.
    pub step: usize,
    /// Length of the sub-step leading to this impact, in units of h.
    pub alpha: f64,
    /// Fraction of the grid step elapsed at this impact.
    pub alpha_tot: f64,
    pub lambda: f64,
    pub state_minus: State,
    pub state_plus: State,
    /// The contact was tangential or separating and no impulse was applied.
    pub grazing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Grid,
    Impact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub kind: SampleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    ZenoGuard,
    SolverFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<CollisionEvent>,
    pub termination: Termination,
    /// Description of the error that stopped a failed run.
    pub failure: Option<String>,
}

/// Result of advancing one grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub events: Vec<CollisionEvent>,
    /// State at the next grid time, or at the last impact if the Zeno guard fired.
    pub state: State,
    pub zeno: bool,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn phi(s: &State, w: &WorldParams) -> Result<f64> {
    Ok(phi_general(&s.pose(), &w.body, &w.plane)?.phi)
}

/// Finds α ∈ (0, 1) with 0 ≤ Φ(discrete_flow(s, α·h_window)) ≤ contact_tol.
///
/// The admissible end of the bracket is always retained. If the Φ band is not
/// hit before the bracket shrinks below the solver's eps_tol, the admissible
/// end is returned.
pub fn bisect_impact(
    s: &State,
    h_window: f64,
    w: &WorldParams,
    sim: &SimConfig,
    solver: &SolverConfig,
) -> Result<(f64, State)> {
    let start = phi(s, w)?;
    let end_state = discrete_flow(s, h_window, w, solver)?;
    let end = phi(&end_state, w)?;
    if !(start >= 0.0 && end < 0.0) {
        return Err(Error::NoBracket { start, end });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut lo_state: Option<(State, f64)> = None;
    for _ in 0..sim.bisection_max_iters {
        let mid = 0.5 * (lo + hi);
        let cand = discrete_flow(s, mid * h_window, w, solver)?;
        let value = phi(&cand, w)?;
        if (0.0..=sim.contact_tol).contains(&value) {
            return Ok((mid, cand));
        }
        if value > 0.0 {
            lo = mid;
            lo_state = Some((cand, value));
        } else {
            hi = mid;
        }
        if hi - lo <= solver.eps_tol {
            if let Some((state, _)) = lo_state {
                return Ok((lo, state));
            }
            break;
        }
    }
    Err(Error::BisectionExhausted { iterations: sim.bisection_max_iters, phi: lo_state.map_or(start, |(_, v)| v) })
}

/// Advances one grid step of length h starting from the grid time `t0`,
/// resolving every impact inside it.
pub fn resolve_step_with_collisions(
    s: &State,
    step: usize,
    t0: f64,
    w: &WorldParams,
    sim: &SimConfig,
    solver: &SolverConfig,
) -> Result<StepOutcome> {
    let mut events = Vec::new();
    let mut alpha_tot = CompensatedSum::default();
    let mut current = *s;
    loop {
        let remaining = 1.0 - alpha_tot.value();
        if remaining <= 0.0 {
            return Ok(StepOutcome { events, state: current, zeno: false });
        }
        let next = discrete_flow(&current, remaining * sim.h, w, solver)?;
        if phi(&next, w)? >= 0.0 {
            return Ok(StepOutcome { events, state: next, zeno: false });
        }
        if events.len() >= sim.zeno_j_max {
            return Ok(StepOutcome { events, state: current, zeno: true });
        }
        let (fraction, minus) = bisect_impact(&current, remaining * sim.h, w, sim, solver)?;
        let alpha = fraction * remaining;
        alpha_tot.add(alpha);
        let cg = phi_general(&minus.pose(), &w.body, &w.plane)?;
        let (lambda, plus, grazing) = match jump(&minus, &cg, w) {
            Ok((lambda, plus)) => (lambda, plus, false),
            Err(Error::Grazing { .. } | Error::Separating { .. }) => (0.0, minus, true),
            Err(e) => return Err(e),
        };
        events.push(CollisionEvent {
            t: t0 + alpha_tot.value() * sim.h,
            step,
            alpha,
            alpha_tot: alpha_tot.value(),
            lambda,
            state_minus: minus,
            state_plus: plus,
            grazing,
        });
        current = plus;
    }
}

/// Integrates `sim.steps` grid steps from `initial`.
///
/// Solver failures and the Zeno guard end the run early with the
/// corresponding [`Termination`]; the trajectory up to that point is kept.
pub fn run(initial: &State, w: &WorldParams, sim: &SimConfig, solver: &SolverConfig) -> Result<Trajectory> {
    sim.validate()?;
    solver.validate()?;
    let phi0 = phi(initial, w)?;
    if phi0 < 0.0 {
        return Err(Error::Inadmissible { phi: phi0 });
    }
    let mut traj = Trajectory {
        samples: vec![Sample { t: 0.0, state: *initial, kind: SampleKind::Grid }],
        events: Vec::new(),
        termination: Termination::Completed,
        failure: None,
    };
    let mut state = *initial;
    for k in 0..sim.steps {
        let t0 = k as f64 * sim.h;
        let outcome = match resolve_step_with_collisions(&state, k, t0, w, sim, solver) {
            Ok(o) => o,
            Err(e) => {
                traj.termination = Termination::SolverFailure;
                traj.failure = Some(e.to_string());
                return Ok(traj);
            }
        };
        for ev in &outcome.events {
            let last = traj.samples.last().map_or(f64::NEG_INFINITY, |s| s.t);
            if ev.t > last {
                traj.samples.push(Sample { t: ev.t, state: ev.state_plus, kind: SampleKind::Impact });
            }
        }
        traj.events.extend(outcome.events);
        if outcome.zeno {
            traj.termination = Termination::ZenoGuard;
            return Ok(traj);
        }
        state = outcome.state;
        traj.samples.push(Sample { t: (k + 1) as f64 * sim.h, state, kind: SampleKind::Grid });
    }
    Ok(traj)
}
