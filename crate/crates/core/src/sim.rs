//! Deterministic fixed-step integration of the full closed loop.
//!
//! The stacked state is, per agent, its plant state, integral state, and
//! (for output feedback with `m >= 2`) observer state, followed by all
//! generator estimates `z` and auxiliary states `v`. Integration is
//! classical RK4 with a fixed step; parameter switches in the schedule are
//! discontinuities in `w(t)`, and step boundaries land exactly on each
//! switch so the integrator keeps its order inside every phase. A step is
//! shortened only to hit a phase end.
//!
//! Everything is single-threaded and bitwise deterministic: identical
//! scenario, config, and seed reproduce identical trajectories.

use crate::controller::{self, ControllerState, Gains};
use crate::costs::{self, CostEnsemble};
use crate::error::{Error, Result};
use crate::generator::{self, GeneratorGains, GeneratorState};
use crate::graph::Digraph;
use crate::plant::{AffinePlant, StateSpace};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Divergence threshold: any state magnitude beyond this aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Which control law closes the loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerMode {
    Output,
    PartialState,
}

/// Everything needed to run one closed-loop experiment.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub graph: Digraph,
    pub ensemble: CostEnsemble,
    pub plant: AffinePlant,
    pub gains: Gains,
    pub gen_gains: GeneratorGains,
    pub mode: ControllerMode,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.graph.node_count()
    }

    fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble.len() != self.n_agents() {
            return Err(Error::Dimension(format!(
                "{} costs for {} agents",
                self.ensemble.len(),
                self.n_agents()
            )));
        }
        if self.gains.k.len() != self.gains.m {
            return Err(Error::InvalidGains("k length must equal m".into()));
        }
        Ok(())
    }
}

/// Stacked-state offsets.
#[derive(Clone, Copy, Debug)]
struct Layout {
    n_agents: usize,
    n: usize,
    m_obs: usize,
    per_agent: usize,
    z_off: usize,
    v_off: usize,
    dim: usize,
}

impl Layout {
    fn new(sc: &Scenario) -> Layout {
        let n_agents = sc.n_agents();
        let n = sc.plant.n;
        let m_obs = match sc.mode {
            ControllerMode::Output => sc.gains.observer_states(),
            ControllerMode::PartialState => 0,
        };
        let per_agent = n + 1 + m_obs;
        let z_off = n_agents * per_agent;
        Layout {
            n_agents,
            n,
            m_obs,
            per_agent,
            z_off,
            v_off: z_off + n_agents,
            dim: z_off + 2 * n_agents,
        }
    }

    fn x(&self, agent: usize) -> std::ops::Range<usize> {
        let base = agent * self.per_agent;
        base..base + self.n
    }

    fn xi0(&self, agent: usize) -> usize {
        agent * self.per_agent + self.n
    }

    fn chi(&self, agent: usize) -> std::ops::Range<usize> {
        let base = agent * self.per_agent + self.n + 1;
        base..base + self.m_obs
    }
}

/// Simulation horizon, step, schedule, and initial conditions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    /// Step size in seconds.
    pub h: f64,
    pub t_final: f64,
    /// Record every this-many steps (the initial and final instants are
    /// always recorded).
    pub record_stride: usize,
    /// Piecewise-constant parameter schedule; first entry at t = 0.
    pub w_schedule: Vec<(f64, Vec<f64>)>,
    pub initial: InitialCondition,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self, plant: &AffinePlant) -> Result<()> {
        if !(self.h > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::Config("h and t_final must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        if self.w_schedule.is_empty() {
            return Err(Error::Config("schedule needs an entry at t = 0".into()));
        }
        if self.w_schedule[0].0 != 0.0 {
            return Err(Error::Config("first schedule entry must be at t = 0".into()));
        }
        let mut prev = -1.0;
        for (t, w) in &self.w_schedule {
            if *t <= prev {
                return Err(Error::Config("schedule times must increase strictly".into()));
            }
            if *t >= self.t_final {
                return Err(Error::Config(format!(
                    "schedule time {t} is beyond the horizon {}",
                    self.t_final
                )));
            }
            if w.len() != plant.n_params() {
                return Err(Error::Dimension(format!(
                    "schedule entry at t = {t} has {} parameters, plant has {}",
                    w.len(),
                    plant.n_params()
                )));
            }
            prev = *t;
        }
        Ok(())
    }

    /// Parameter vector active at time `t` (left-closed phases).
    pub fn w_at(&self, t: f64) -> &[f64] {
        let mut current = &self.w_schedule[0].1;
        for (ts, w) in &self.w_schedule {
            if *ts <= t {
                current = w;
            } else {
                break;
            }
        }
        current
    }
}

/// How the stacked state is initialized.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// `x = 0`, `xi0 = 0`, `z = 0`, `v = 0`, observer seeded with `y(0)`.
    Default,
    /// Like `Default` but with the given `z(0)`.
    WithZ(Vec<f64>),
    /// Every state drawn uniformly from `[-1, 1]` using the config seed.
    Random,
    /// Fully explicit values.
    Explicit {
        x: Vec<Vec<f64>>,
        xi0: Vec<f64>,
        chi: Vec<Vec<f64>>,
        z: Vec<f64>,
        v: Vec<f64>,
    },
}

/// SplitMix64: tiny, seedable, platform-independent.
pub(crate) struct SplitMix(pub u64);

impl SplitMix {
    /// Uniform in `[-1, 1]`.
    pub fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

/// Recorded closed-loop time series.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `[sample][agent]`
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub xi0: Vec<Vec<f64>>,
    /// `[sample][agent][state]`
    pub x: Vec<Vec<Vec<f64>>>,
    pub chi: Vec<Vec<Vec<f64>>>,
    /// Schedule switch times (without t = 0) for per-phase reporting.
    pub switch_times: Vec<f64>,
    /// Set when the run aborted: `(t, max |state|)`.
    pub diverged: Option<(f64, f64)>,
}

/// One classical RK4 step. Errors on a non-finite intermediate stage.
pub fn rk4_step<F>(rhs: &mut F, state: &[f64], t: f64, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    assert!(h > 0.0);
    let k1 = rhs(t, state);
    let mut stage: Vec<f64> = state.iter().zip(&k1).map(|(s, k)| s + 0.5 * h * k).collect();
    let k2 = rhs(t + 0.5 * h, &stage);
    for ((s, st), k) in state.iter().zip(stage.iter_mut()).zip(&k2) {
        *st = s + 0.5 * h * k;
    }
    let k3 = rhs(t + 0.5 * h, &stage);
    for ((s, st), k) in state.iter().zip(stage.iter_mut()).zip(&k3) {
        *st = s + h * k;
    }
    let k4 = rhs(t + h, &stage);
    let out: Vec<f64> = (0..state.len())
        .map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            t,
            max_abs: f64::INFINITY,
        });
    }
    Ok(out)
}

/// Closed-loop derivative at time `t` with the schedule's `w(t)`.
///
/// Evaluation order: generator derivatives, control values, then plant,
/// observer, and integral derivatives.
pub fn closed_loop_rhs(sc: &Scenario, cfg: &SimConfig, t: f64, state: &[f64]) -> Result<Vec<f64>> {
    let ss = sc.plant.materialize(cfg.w_at(t))?;
    let layout = sc.layout();
    if state.len() != layout.dim {
        return Err(Error::Dimension(format!(
            "state has length {}, layout needs {}",
            state.len(),
            layout.dim
        )));
    }
    Ok(eval_rhs(sc, &layout, &ss, state))
}

fn eval_rhs(sc: &Scenario, layout: &Layout, ss: &StateSpace, state: &[f64]) -> Vec<f64> {
    let n_agents = layout.n_agents;
    let z = &state[layout.z_off..layout.z_off + n_agents];
    let v = &state[layout.v_off..layout.v_off + n_agents];
    let mut out = vec![0.0; layout.dim];

    // Generator block.
    for i in 0..n_agents {
        let mut lap_z = 0.0;
        let mut lap_v = 0.0;
        for j in 0..n_agents {
            let a_ij = sc.graph.weight(i, j);
            if a_ij > 0.0 {
                lap_z += a_ij * (z[i] - z[j]);
                lap_v += a_ij * (v[i] - v[j]);
            }
        }
        out[layout.z_off + i] = -sc.gen_gains.alpha * costs::grad(&sc.ensemble.costs[i], z[i])
            - sc.gen_gains.beta * lap_z
            - lap_v;
        out[layout.v_off + i] = sc.gen_gains.alpha * sc.gen_gains.beta * lap_z;
    }

    // Agents.
    for i in 0..n_agents {
        let x = &state[layout.x(i)];
        let y = crate::linalg::dot(&ss.c, x);
        let u = control_value(sc, layout, ss, state, i, y, z[i]);
        // xdot = A x + B u + E
        for (r, out_r) in out[layout.x(i)].iter_mut().enumerate() {
            let mut acc = ss.e[r] + ss.b[r] * u;
            for (cidx, xv) in x.iter().enumerate() {
                acc += ss.a[(r, cidx)] * xv;
            }
            *out_r = acc;
        }
        out[layout.xi0(i)] = controller::integral_rhs(y, z[i]);
        if layout.m_obs > 0 {
            let chi = &state[layout.chi(i)];
            let innovation = chi[0] - y;
            let chi_out = layout.chi(i);
            for r in 0..layout.m_obs {
                out[chi_out.start + r] = if r + 1 < layout.m_obs {
                    chi[r + 1] - sc.gains.observer_l[r] * innovation
                } else {
                    -sc.gains.observer_l[r] * innovation
                };
            }
        }
    }
    out
}

fn control_value(
    sc: &Scenario,
    layout: &Layout,
    ss: &StateSpace,
    state: &[f64],
    agent: usize,
    y: f64,
    z_i: f64,
) -> f64 {
    let xi0 = state[layout.xi0(agent)];
    match sc.mode {
        ControllerMode::Output => {
            let chi = &state[layout.chi(agent)];
            let cs = ControllerState {
                xi0,
                chi: chi.to_vec(),
            };
            controller::control_output(&sc.gains, &cs, y, z_i)
        }
        ControllerMode::PartialState => controller::partial_state_control(
            &sc.gains,
            xi0,
            &state[layout.x(agent)],
            z_i,
            &ss.a,
            &ss.c,
        ),
    }
}

/// Build the stacked initial state.
pub fn initial_state(sc: &Scenario, cfg: &SimConfig) -> Result<Vec<f64>> {
    let layout = sc.layout();
    let ss0 = sc.plant.materialize(cfg.w_at(0.0))?;
    let mut state = vec![0.0; layout.dim];
    match &cfg.initial {
        InitialCondition::Default => {
            seed_observer(&mut state, &layout, &ss0);
        }
        InitialCondition::WithZ(z0) => {
            if z0.len() != layout.n_agents {
                return Err(Error::Dimension("z(0) must have one entry per agent".into()));
            }
            state[layout.z_off..layout.z_off + layout.n_agents].copy_from_slice(z0);
            seed_observer(&mut state, &layout, &ss0);
        }
        InitialCondition::Random => {
            let mut rng = SplitMix(cfg.seed);
            for s in state.iter_mut() {
                *s = rng.next_f64();
            }
        }
        InitialCondition::Explicit { x, xi0, chi, z, v } => {
            if x.len() != layout.n_agents
                || xi0.len() != layout.n_agents
                || z.len() != layout.n_agents
                || v.len() != layout.n_agents
            {
                return Err(Error::Dimension("explicit initial state per agent".into()));
            }
            for i in 0..layout.n_agents {
                if x[i].len() != layout.n {
                    return Err(Error::Dimension("explicit x(0) has wrong length".into()));
                }
                state[layout.x(i)].copy_from_slice(&x[i]);
                state[layout.xi0(i)] = xi0[i];
                if layout.m_obs > 0 {
                    let given = chi.get(i).map(|c| c.as_slice()).unwrap_or(&[]);
                    if given.len() != layout.m_obs {
                        return Err(Error::Dimension("explicit chi(0) has wrong length".into()));
                    }
                    state[layout.chi(i)].copy_from_slice(given);
                }
                state[layout.z_off + i] = z[i];
                state[layout.v_off + i] = v[i];
            }
        }
    }
    Ok(state)
}

/// Observer default: `chi(0) = (y(0), 0, ..., 0)`.
fn seed_observer(state: &mut [f64], layout: &Layout, ss0: &StateSpace) {
    if layout.m_obs == 0 {
        return;
    }
    for i in 0..layout.n_agents {
        let y0 = crate::linalg::dot(&ss0.c, &state[layout.x(i)]);
        let chi = layout.chi(i);
        state[chi.start] = y0;
    }
}

/// Integrate, returning the (possibly truncated) trajectory together with
/// the divergence error if the run aborted.
pub fn simulate_partial(sc: &Scenario, cfg: &SimConfig) -> Result<(Trajectory, Option<Error>)> {
    sc.validate()?;
    cfg.validate(&sc.plant)?;
    let layout = sc.layout();
    let mut state = initial_state(sc, cfg)?;

    // Materialize each phase once.
    let mut phase_bounds: Vec<(f64, f64, StateSpace)> = Vec::new();
    for (idx, (t_start, w)) in cfg.w_schedule.iter().enumerate() {
        let t_end = cfg
            .w_schedule
            .get(idx + 1)
            .map(|(t, _)| *t)
            .unwrap_or(cfg.t_final);
        phase_bounds.push((*t_start, t_end, sc.plant.materialize(w)?));
    }

    let mut traj = Trajectory {
        switch_times: cfg.w_schedule.iter().skip(1).map(|(t, _)| *t).collect(),
        ..Trajectory::default()
    };

    let record = |traj: &mut Trajectory, t: f64, state: &[f64], ss: &StateSpace| {
        let n_agents = layout.n_agents;
        let mut y_row = Vec::with_capacity(n_agents);
        let mut u_row = Vec::with_capacity(n_agents);
        let mut x_row = Vec::with_capacity(n_agents);
        let mut chi_row = Vec::with_capacity(n_agents);
        let mut xi_row = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let y = crate::linalg::dot(&ss.c, &state[layout.x(i)]);
            let u = control_value(sc, &layout, ss, state, i, y, state[layout.z_off + i]);
            y_row.push(y);
            u_row.push(u);
            x_row.push(state[layout.x(i)].to_vec());
            chi_row.push(state[layout.chi(i)].to_vec());
            xi_row.push(state[layout.xi0(i)]);
        }
        traj.times.push(t);
        traj.y.push(y_row);
        traj.u.push(u_row);
        traj.x.push(x_row);
        traj.chi.push(chi_row);
        traj.xi0.push(xi_row);
        traj.z
            .push(state[layout.z_off..layout.z_off + n_agents].to_vec());
        traj.v
            .push(state[layout.v_off..layout.v_off + n_agents].to_vec());
    };

    record(&mut traj, 0.0, &state, &phase_bounds[0].2);
    let mut global_step: usize = 0;

    for (phase, (t_start, t_end, ss)) in phase_bounds.iter().enumerate() {
        let span = t_end - t_start;
        if span <= 0.0 {
            continue;
        }
        let last_phase = phase + 1 == phase_bounds.len();
        let steps = (span / cfg.h - 1e-9).ceil().max(1.0) as usize;
        let mut rhs = |_t: f64, s: &[f64]| eval_rhs(sc, &layout, ss, s);
        for k in 0..steps {
            let t_k = t_start + k as f64 * cfg.h;
            let h_k = if k + 1 == steps { t_end - t_k } else { cfg.h };
            let t_next = if k + 1 == steps {
                *t_end
            } else {
                t_start + (k + 1) as f64 * cfg.h
            };
            match rk4_step(&mut rhs, &state, t_k, h_k) {
                Ok(next) => state = next,
                Err(_) => {
                    let max_abs = state.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    traj.diverged = Some((t_k, max_abs));
                    return Ok((
                        traj.clone(),
                        Some(Error::Divergence { t: t_k, max_abs }),
                    ));
                }
            }
            global_step += 1;
            let max_abs = state.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if max_abs > DIVERGENCE_LIMIT {
                traj.diverged = Some((t_next, max_abs));
                record(&mut traj, t_next, &state, ss);
                return Ok((
                    traj.clone(),
                    Some(Error::Divergence { t: t_next, max_abs }),
                ));
            }
            let is_final_instant = last_phase && k + 1 == steps;
            if global_step % cfg.record_stride == 0 || is_final_instant {
                record(&mut traj, t_next, &state, ss);
            }
        }
    }
    Ok((traj, None))
}

/// Integrate the closed loop; a divergence aborts with an error.
pub fn simulate(sc: &Scenario, cfg: &SimConfig) -> Result<Trajectory> {
    let (traj, err) = simulate_partial(sc, cfg)?;
    match err {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Generator-only run (no plants): states `z` and `v` under the generator
/// dynamics alone.
pub struct GeneratorRun {
    pub times: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

pub fn simulate_generator(
    ensemble: &CostEnsemble,
    g: &Digraph,
    gains: GeneratorGains,
    z0: &[f64],
    v0: &[f64],
    h: f64,
    t_final: f64,
    record_stride: usize,
) -> Result<GeneratorRun> {
    let n = g.node_count();
    if z0.len() != n || v0.len() != n || ensemble.len() != n {
        return Err(Error::Dimension("generator run needs per-agent z0, v0, cost".into()));
    }
    let mut state: Vec<f64> = z0.iter().chain(v0.iter()).copied().collect();
    let mut rhs = |_t: f64, s: &[f64]| {
        let gs = GeneratorState {
            z: s[..n].to_vec(),
            v: s[n..].to_vec(),
        };
        let (zd, vd) = generator::generator_rhs(&gs, ensemble, g, gains);
        zd.into_iter().chain(vd).collect::<Vec<f64>>()
    };
    let steps = (t_final / h - 1e-9).ceil().max(1.0) as usize;
    let mut run = GeneratorRun {
        times: vec![0.0],
        z: vec![z0.to_vec()],
        v: vec![v0.to_vec()],
    };
    for k in 0..steps {
        let t_k = k as f64 * h;
        let h_k = if k + 1 == steps { t_final - t_k } else { h };
        state = rk4_step(&mut rhs, &state, t_k, h_k)?;
        let max_abs = state.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if max_abs > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                t: t_k + h_k,
                max_abs,
            });
        }
        if (k + 1) % record_stride == 0 || k + 1 == steps {
            run.times.push(if k + 1 == steps { t_final } else { t_k + h_k });
            run.z.push(state[..n].to_vec());
            run.v.push(state[n..].to_vec());
        }
    }
    Ok(run)
}

/// Per-phase convergence statistics.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseStats {
    pub t_start: f64,
    pub t_end: f64,
    /// First recorded time from which the error stays within tolerance
    /// until the end of the phase.
    pub settle_time: Option<f64>,
    /// Max-over-agents error at the last sample of the phase.
    pub final_error: f64,
    pub max_abs_u: f64,
}

/// Distance-to-optimum summary of a run.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub y_star: f64,
    pub tol: f64,
    /// Max-over-agents error at the final recorded instant.
    pub final_error: f64,
    /// First recorded time from which the error stays within tolerance to
    /// the end; `None` when never sustained.
    pub settle_time: Option<f64>,
    pub settled: bool,
    pub max_abs_u: f64,
    pub phases: Vec<PhaseStats>,
    pub diverged: bool,
}

impl fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "optimum y* = {:.6}", self.y_star)?;
        writeln!(f, "tolerance  = {}", self.tol)?;
        writeln!(f, "final max error = {:.6e}", self.final_error)?;
        match self.settle_time {
            Some(t) => writeln!(f, "settled from t = {t:.3} s")?,
            None => writeln!(f, "not settled")?,
        }
        writeln!(f, "max |u| = {:.6}", self.max_abs_u)?;
        if self.diverged {
            writeln!(f, "run DIVERGED before the horizon")?;
        }
        for (i, p) in self.phases.iter().enumerate() {
            write!(
                f,
                "phase {} [{:.3}, {:.3}]: final error {:.4e}, max |u| {:.4}, ",
                i + 1,
                p.t_start,
                p.t_end,
                p.final_error,
                p.max_abs_u
            )?;
            match p.settle_time {
                Some(t) => writeln!(f, "settled from t = {t:.3} s")?,
                None => writeln!(f, "not settled")?,
            }
        }
        Ok(())
    }
}

/// Summarize a trajectory against the optimum.
pub fn convergence_report(traj: &Trajectory, y_star: f64, tol: f64) -> ConvergenceReport {
    assert!(!traj.times.is_empty(), "trajectory must be non-empty");
    let err_at = |idx: usize| -> f64 {
        traj.y[idx]
            .iter()
            .map(|y| (y - y_star).abs())
            .fold(0.0, f64::max)
    };
    let n_samples = traj.times.len();
    let settle_from = |lo: usize, hi: usize| -> Option<f64> {
        // First index in [lo, hi) from which all errors stay <= tol.
        let mut first_bad_after = None;
        for idx in (lo..hi).rev() {
            if err_at(idx) > tol {
                first_bad_after = Some(idx);
                break;
            }
        }
        match first_bad_after {
            None => Some(traj.times[lo]),
            Some(bad) if bad + 1 < hi => Some(traj.times[bad + 1]),
            _ => None,
        }
    };

    let mut phases = Vec::new();
    let mut boundaries = vec![traj.times[0]];
    boundaries.extend(traj.switch_times.iter().copied());
    boundaries.push(*traj.times.last().unwrap());
    for p in 0..boundaries.len() - 1 {
        let t_start = boundaries[p];
        let t_end = boundaries[p + 1];
        // Samples with t_start < t <= t_end, plus t = 0 for the first phase.
        let lo = traj
            .times
            .iter()
            .position(|&t| if p == 0 { t >= t_start } else { t > t_start })
            .unwrap_or(0);
        let hi = traj
            .times
            .iter()
            .rposition(|&t| t <= t_end)
            .map(|i| i + 1)
            .unwrap_or(n_samples);
        if lo >= hi {
            continue;
        }
        let max_abs_u = (lo..hi)
            .flat_map(|idx| traj.u[idx].iter())
            .fold(0.0f64, |m, u| m.max(u.abs()));
        phases.push(PhaseStats {
            t_start,
            t_end,
            settle_time: settle_from(lo, hi),
            final_error: err_at(hi - 1),
            max_abs_u,
        });
    }

    let settle_time = settle_from(0, n_samples);
    let max_abs_u = traj
        .u
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, u| m.max(u.abs()));
    ConvergenceReport {
        y_star,
        tol,
        final_error: err_at(n_samples - 1),
        settled: settle_time.is_some() && traj.diverged.is_none(),
        settle_time,
        max_abs_u,
        phases,
        diverged: traj.diverged.is_some(),
    }
}

/// Write `t, y1..yN, u1..uN, z1..zN` rows at full double precision.
pub fn write_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    use std::io::Write;
    let n_agents = traj.y.first().map_or(0, |row| row.len());
    let mut out = String::new();
    out.push('t');
    for series in ["y", "u", "z"] {
        for i in 1..=n_agents {
            out.push(',');
            out.push_str(series);
            out.push_str(&i.to_string());
        }
    }
    out.push('\n');
    for idx in 0..traj.times.len() {
        out.push_str(&format!("{:.16e}", traj.times[idx]));
        for series in [&traj.y, &traj.u, &traj.z] {
            for val in &series[idx] {
                out.push_str(&format!(",{val:.16e}"));
            }
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Time series parsed back from a trajectory CSV.
#[derive(Debug)]
pub struct CsvData {
    pub times: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

/// Parse a `write_csv` file; errors carry the 1-based line number.
pub fn read_csv(path: &Path) -> Result<CsvData> {
    let content = std::fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::CsvParse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0].trim() != "t" || (cols.len() - 1) % 3 != 0 {
        return Err(Error::CsvParse {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let n_agents = (cols.len() - 1) / 3;
    let mut data = CsvData {
        times: Vec::new(),
        y: Vec::new(),
        u: Vec::new(),
        z: Vec::new(),
    };
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::CsvParse {
                line: idx + 1,
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let parse = |s: &str, line: usize| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| Error::CsvParse {
                line,
                message: format!("bad number {s:?}: {e}"),
            })
        };
        data.times.push(parse(fields[0], idx + 1)?);
        let mut rows = [Vec::new(), Vec::new(), Vec::new()];
        for (block, row) in rows.iter_mut().enumerate() {
            for a in 0..n_agents {
                row.push(parse(fields[1 + block * n_agents + a], idx + 1)?);
            }
        }
        let [y, u, z] = rows;
        data.y.push(y);
        data.u.push(u);
        data.z.push(z);
    }
    if data.times.is_empty() {
        return Err(Error::CsvParse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostFunction;
    use crate::linalg::{self, Lu, Matrix};

    fn example1_scenario(mode: ControllerMode) -> Scenario {
        Scenario {
            graph: Digraph::cycle(4),
            ensemble: CostEnsemble::new(
                [1.0, 3.0, 5.0, 7.0]
                    .iter()
                    .map(|&t| CostFunction::quadratic(2.0, t))
                    .collect(),
            ),
            plant: crate::plant::tests::example1_plant(),
            gains: Gains::new(2, vec![1.0, 2.0], 1.0, 6.0, 10.0).unwrap(),
            gen_gains: GeneratorGains { alpha: 1.0, beta: 15.0 },
            mode,
        }
    }

    fn example1_cfg() -> SimConfig {
        SimConfig {
            h: 1e-3,
            t_final: 50.0,
            record_stride: 10,
            w_schedule: vec![(0.0, vec![0.0])],
            initial: InitialCondition::WithZ(vec![1.0, 3.0, 5.0, 7.0]),
            seed: 0,
        }
    }

    #[test]
    fn rk4_scalar_decay_step() {
        // One RK4 step of xdot = -x is the 4th-degree Taylor sum.
        let mut rhs = |_t: f64, s: &[f64]| vec![-s[0]];
        let next = rk4_step(&mut rhs, &[1.0], 0.0, 0.1).unwrap();
        assert!((next[0] - 0.9048375).abs() < 1e-12);
        assert!((next[0] - (-0.1f64).exp()).abs() <= 1e-7);
    }

    #[test]
    fn rk4_zero_rhs_keeps_state() {
        let mut rhs = |_t: f64, s: &[f64]| vec![0.0; s.len()];
        let next = rk4_step(&mut rhs, &[1.5, -2.5], 3.0, 0.7).unwrap();
        assert_eq!(next, vec![1.5, -2.5]);
    }

    #[test]
    fn rk4_order_four_against_matrix_exponential() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, -3.0]]).unwrap();
        let x0 = vec![1.0, -0.5];
        let t_end = 1.0;
        let exact = linalg::expm(&a).mul_vec(&x0);
        let run = |h: f64| -> f64 {
            let mut rhs = |_t: f64, s: &[f64]| a.mul_vec(s);
            let mut state = x0.clone();
            let steps = (t_end / h).round() as usize;
            for k in 0..steps {
                state = rk4_step(&mut rhs, &state, k as f64 * h, h).unwrap();
            }
            state
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let e1 = run(0.05);
        let e2 = run(0.025);
        let ratio = e1 / e2;
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn equilibrium_state_is_stationary() {
        let sc = example1_scenario(ControllerMode::Output);
        let cfg = example1_cfg();
        let layout = sc.layout();
        let ss = sc.plant.materialize(&[0.0]).unwrap();
        let y_star = costs::global_minimizer(&sc.ensemble, 1e-12).unwrap();

        // Steady (x, u) from [[A, B], [C, 0]] [x; u] = [-E; y*].
        let n = sc.plant.n;
        let mut aug = Matrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = ss.a[(i, j)];
            }
            aug[(i, n)] = ss.b[i];
            aug[(n, i)] = ss.c[i];
        }
        let mut rhs_vec: Vec<f64> = ss.e.iter().map(|e| -e).collect();
        rhs_vec.push(y_star);
        let xu = Lu::factor(&aug).unwrap().solve(&rhs_vec);
        let u_star = xu[n];
        let xi0_star = -u_star / (sc.gains.epsilon * sc.gains.k[0]);

        // v from the regularized least-squares solve of L v = -alpha grad.
        let spec = crate::graph::laplacian(&sc.graph);
        let grad_vec: Vec<f64> = sc
            .ensemble
            .costs
            .iter()
            .map(|c| -sc.gen_gains.alpha * costs::grad(c, y_star))
            .collect();
        let lt = spec.laplacian.transpose();
        let mut normal = lt.matmul(&spec.laplacian);
        for i in 0..4 {
            for j in 0..4 {
                normal[(i, j)] += 1.0;
            }
        }
        let v = Lu::factor(&normal).unwrap().solve(&lt.mul_vec(&grad_vec));

        let mut state = vec![0.0; layout.dim];
        for i in 0..4 {
            state[layout.x(i)].copy_from_slice(&xu[..n]);
            state[layout.xi0(i)] = xi0_star;
            let chi = layout.chi(i);
            state[chi.start] = y_star;
            state[layout.z_off + i] = y_star;
            state[layout.v_off + i] = v[i];
        }
        let dot = closed_loop_rhs(&sc, &cfg, 1.0, &state).unwrap();
        let norm = dot.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1e-6, "equilibrium residual {norm}");
    }

    #[test]
    fn zero_gain_reduces_to_open_loop() {
        // eps -> 0 disables control; with A stable the plant must follow the
        // matrix exponential of the single agent.
        let a0 = Matrix::from_rows(&[vec![-0.4, 1.0], vec![-1.0, -0.9]]).unwrap();
        let plant = AffinePlant::exact(a0.clone(), vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        let mut gains = Gains::new(2, vec![1.0, 2.0], 1.0, 1.0, 1.0).unwrap();
        gains.epsilon = 0.0;
        let sc = Scenario {
            graph: Digraph::new(Matrix::zeros(1, 1)).unwrap(),
            ensemble: CostEnsemble::new(vec![CostFunction::quadratic(1.0, 0.0)]),
            plant,
            gains,
            gen_gains: GeneratorGains { alpha: 1.0, beta: 1.0 },
            mode: ControllerMode::Output,
        };
        let x0 = vec![1.0, -2.0];
        let cfg = SimConfig {
            h: 1e-3,
            t_final: 1.0,
            record_stride: 1000,
            w_schedule: vec![(0.0, vec![])],
            initial: InitialCondition::Explicit {
                x: vec![x0.clone()],
                xi0: vec![0.0],
                chi: vec![vec![1.0, 0.0]],
                z: vec![0.0],
                v: vec![0.0],
            },
            seed: 0,
        };
        let traj = simulate(&sc, &cfg).unwrap();
        let exact = linalg::expm(&a0).mul_vec(&x0);
        let last = traj.x.last().unwrap()[0].clone();
        for (got, want) in last.iter().zip(&exact) {
            assert!((got - want).abs() < 1e-9, "open loop {got} vs {want}");
        }
    }

    #[test]
    fn single_agent_tracks_its_target() {
        // One agent, no edges: the generator reduces to gradient flow on its
        // own cost, and the loop is setpoint tracking.
        let sc = Scenario {
            graph: Digraph::new(Matrix::zeros(1, 1)).unwrap(),
            ensemble: CostEnsemble::new(vec![CostFunction::quadratic(1.0, 2.5)]),
            plant: AffinePlant::exact(
                Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap(),
                vec![0.0, 1.0],
                vec![1.0, 0.0],
            )
            .unwrap(),
            gains: Gains::new(2, vec![1.0, 2.0], 1.0, 6.0, 10.0).unwrap(),
            gen_gains: GeneratorGains { alpha: 1.0, beta: 1.0 },
            mode: ControllerMode::Output,
        };
        let cfg = SimConfig {
            h: 1e-3,
            t_final: 20.0,
            record_stride: 10,
            w_schedule: vec![(0.0, vec![])],
            initial: InitialCondition::Default,
            seed: 0,
        };
        let traj = simulate(&sc, &cfg).unwrap();
        let y_end = traj.y.last().unwrap()[0];
        assert!((y_end - 2.5).abs() < 1e-3, "y(20) = {y_end}");
    }

    #[test]
    fn example1_settles_to_average() {
        let sc = example1_scenario(ControllerMode::Output);
        let traj = simulate(&sc, &example1_cfg()).unwrap();
        let report = convergence_report(&traj, 4.0, 0.05);
        assert!(report.settled, "{report}");
        assert!(report.settle_time.unwrap() < 40.0, "{report}");
        // Gravity compensation: u -> g M = 9.8 at w = 0.
        for u in traj.u.last().unwrap() {
            assert!((u - 9.8).abs() < 1e-2, "steady u = {u}");
        }
    }

    #[test]
    fn divergence_is_reported_with_diagnostic() {
        // Unstable plant with no control authority.
        let a0 = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let plant = AffinePlant::exact(a0, vec![0.0], vec![1.0]).unwrap();
        let mut gains = Gains::new(1, vec![1.0], 1.0, 1.0, 1.0).unwrap();
        gains.epsilon = 0.0;
        let sc = Scenario {
            graph: Digraph::new(Matrix::zeros(1, 1)).unwrap(),
            ensemble: CostEnsemble::new(vec![CostFunction::quadratic(1.0, 0.0)]),
            plant,
            gains,
            gen_gains: GeneratorGains { alpha: 1.0, beta: 1.0 },
            mode: ControllerMode::Output,
        };
        let cfg = SimConfig {
            h: 1e-2,
            t_final: 40.0,
            record_stride: 10,
            w_schedule: vec![(0.0, vec![])],
            initial: InitialCondition::Explicit {
                x: vec![vec![1.0]],
                xi0: vec![0.0],
                chi: vec![vec![]],
                z: vec![0.0],
                v: vec![0.0],
            },
            seed: 0,
        };
        let (traj, err) = simulate_partial(&sc, &cfg).unwrap();
        assert!(traj.diverged.is_some());
        assert!(matches!(err, Some(Error::Divergence { .. })));
        let report = convergence_report(&traj, 0.0, 0.05);
        assert!(!report.settled);
        assert!(report.diverged);
    }

    #[test]
    fn schedule_misalignment_is_handled_by_shortened_steps() {
        // Switch at t = 0.0305 with h = 1e-2: the step is shortened to land
        // exactly on the switch.
        let sc = example1_scenario(ControllerMode::Output);
        let cfg = SimConfig {
            h: 1e-2,
            t_final: 0.05,
            record_stride: 1,
            w_schedule: vec![(0.0, vec![0.0]), (0.0305, vec![0.5])],
            initial: InitialCondition::Default,
            seed: 0,
        };
        let traj = simulate(&sc, &cfg).unwrap();
        assert!(traj.times.iter().any(|&t| (t - 0.0305).abs() < 1e-12));
        assert!((traj.times.last().unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn determinism_bitwise() {
        let sc = example1_scenario(ControllerMode::Output);
        let mut cfg = example1_cfg();
        cfg.t_final = 5.0;
        cfg.initial = InitialCondition::Random;
        cfg.seed = 1234;
        let t1 = simulate(&sc, &cfg).unwrap();
        let t2 = simulate(&sc, &cfg).unwrap();
        assert_eq!(t1.times.len(), t2.times.len());
        for idx in 0..t1.times.len() {
            for a in 0..4 {
                assert_eq!(t1.y[idx][a].to_bits(), t2.y[idx][a].to_bits());
                assert_eq!(t1.u[idx][a].to_bits(), t2.u[idx][a].to_bits());
                assert_eq!(t1.z[idx][a].to_bits(), t2.z[idx][a].to_bits());
            }
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let sc = example1_scenario(ControllerMode::Output);
        let mut cfg = example1_cfg();
        cfg.t_final = 0.5;
        let traj = simulate(&sc, &cfg).unwrap();
        let dir = std::env::temp_dir().join("consensus-core-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.csv");
        write_csv(&path, &traj).unwrap();
        let data = read_csv(&path).unwrap();
        assert_eq!(data.times.len(), traj.times.len());
        for idx in 0..data.times.len() {
            assert_eq!(data.y[idx], traj.y[idx]);
            assert_eq!(data.u[idx], traj.u[idx]);
            assert_eq!(data.z[idx], traj.z[idx]);
        }
        // Truncated field count is reported with its line number.
        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "t,y1,u1,z1\n0.0,1.0,2.0\n").unwrap();
        match read_csv(&bad) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn constant_trajectory_settles_immediately() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            y: vec![vec![4.0], vec![4.0], vec![4.0]],
            u: vec![vec![0.0]; 3],
            z: vec![vec![4.0]; 3],
            v: vec![vec![0.0]; 3],
            xi0: vec![vec![0.0]; 3],
            x: vec![vec![vec![]]; 3],
            chi: vec![vec![vec![]]; 3],
            switch_times: vec![],
            diverged: None,
        };
        let report = convergence_report(&traj, 4.0, 0.05);
        assert_eq!(report.settle_time, Some(0.0));
        assert_eq!(report.final_error, 0.0);
    }
}
