//! JSON scenario configuration, gain resolution, and built-in presets.
//!
//! A scenario file has `graph`, `costs`, `plant`, `gains`, `sim`, and
//! `analysis` sections. Graph edges are 1-indexed and `{"from": j,
//! "to": i}` means agent `i` receives from agent `j`. Deviation matrices
//! are listed per uncertain parameter (position = parameter index), with
//! omitted blocks meaning "this parameter does not enter". Gains may be
//! given as numbers or as `"auto"`, in which case the tuner fills them:
//! `k` from `(s + lambda0)^m`, `alpha`/`beta` from the spectrum rule,
//! `epsilon` from its constructive bound, and `gamma` by certificate
//! search.

use crate::controller::Gains;
use crate::costs::{CostEnsemble, CostFunction};
use crate::error::{Error, Result};
use crate::generator::{self, GeneratorGains};
use crate::graph::{self, Digraph};
use crate::linalg::Matrix;
use crate::plant::{relative_degree, AffinePlant, GridSpec, REL_DEG_TOL};
use crate::sim::{ControllerMode, InitialCondition, Scenario, SimConfig};
use crate::tuning;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub graph: GraphConfig,
    pub costs: Vec<CostFunction>,
    pub plant: PlantConfig,
    #[serde(default)]
    pub gains: GainsConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphConfig {
    pub n: usize,
    pub edges: Vec<EdgeConfig>,
}

/// 1-indexed edge: `to` receives from `from`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub from: usize,
    pub to: usize,
    pub w: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlantConfig {
    pub n: usize,
    pub a0: Vec<Vec<f64>>,
    pub b0: Vec<f64>,
    pub c0: Vec<f64>,
    #[serde(default)]
    pub deviations: Vec<DeviationConfig>,
    #[serde(rename = "box", default)]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub disturbance: Option<Vec<f64>>,
}

/// Per-parameter deviation blocks; omitted blocks are zero.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DeviationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
}

/// A number, or the literal string `"auto"`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaybeAuto {
    Value(f64),
    Auto(AutoKeyword),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum AutoKeyword {
    #[serde(rename = "auto")]
    Auto,
}

impl MaybeAuto {
    pub const AUTO: MaybeAuto = MaybeAuto::Auto(AutoKeyword::Auto);

    pub fn value(self) -> Option<f64> {
        match self {
            MaybeAuto::Value(v) => Some(v),
            MaybeAuto::Auto(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    /// Use the given `alpha`/`beta` values.
    Manual,
    /// Recompute `alpha`/`beta` from the convexity window and the spectrum.
    Formula,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GainsConfig {
    pub tuning: TuningMode,
    /// `k_1 .. k_m`; omitted means `(s + lambda0)^m`.
    pub k: Option<Vec<f64>>,
    pub lambda0: f64,
    pub alpha: MaybeAuto,
    pub beta: MaybeAuto,
    pub epsilon: MaybeAuto,
    pub gamma: MaybeAuto,
    /// Cap for the doubling gamma search.
    pub gamma_max: f64,
}

impl Default for GainsConfig {
    fn default() -> Self {
        GainsConfig {
            tuning: TuningMode::Manual,
            k: None,
            lambda0: 1.0,
            alpha: MaybeAuto::AUTO,
            beta: MaybeAuto::AUTO,
            epsilon: MaybeAuto::AUTO,
            gamma: MaybeAuto::AUTO,
            gamma_max: 1024.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub t: f64,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub h: f64,
    pub t_final: f64,
    pub record_stride: usize,
    /// Piecewise-constant parameter schedule; empty means "nominal w = 0
    /// for the whole horizon".
    pub schedule: Vec<ScheduleEntry>,
    pub seed: u64,
    pub initial: InitialCondition,
    /// Settle tolerance for convergence reports.
    pub tol: f64,
    pub controller: ControllerMode,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            h: 1e-3,
            t_final: 50.0,
            record_stride: 10,
            schedule: Vec::new(),
            seed: 0,
            initial: InitialCondition::Default,
            tol: 0.05,
            controller: ControllerMode::Output,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    /// Interval for the convexity-window sampling check.
    pub interval: [f64; 2],
    pub samples: usize,
    /// Points per axis for box grids (corners are always covered).
    pub grid_points: usize,
    pub balance_tol: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            interval: [-20.0, 20.0],
            samples: 200,
            grid_points: 3,
            balance_tol: graph::BALANCE_TOL,
        }
    }
}

impl AnalysisSection {
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            points_per_axis: self.grid_points,
        }
    }
}

/// A fully resolved scenario: runtime objects plus the record of what the
/// tuner filled in.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub sim: SimConfig,
    pub tol: f64,
    pub analysis: AnalysisSection,
    /// Human-readable notes about auto-resolved gains.
    pub notes: Vec<String>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn build_graph(&self) -> Result<Digraph> {
        let n = self.graph.n;
        let mut edges = Vec::with_capacity(self.graph.edges.len());
        for e in &self.graph.edges {
            if e.from == 0 || e.from > n || e.to == 0 || e.to > n {
                return Err(Error::Config(format!(
                    "edge {} -> {} out of range for n = {n} (nodes are 1-indexed)",
                    e.from, e.to
                )));
            }
            edges.push((e.from - 1, e.to - 1, e.w));
        }
        Digraph::from_edges(n, &edges)
    }

    pub fn build_costs(&self) -> Result<CostEnsemble> {
        for (i, c) in self.costs.iter().enumerate() {
            CostFunction::new(c.family.clone(), c.l_lower, c.l_upper)
                .map_err(|e| Error::Config(format!("cost {}: {e}", i + 1)))?;
        }
        Ok(CostEnsemble::new(self.costs.clone()))
    }

    pub fn build_plant(&self) -> Result<AffinePlant> {
        let p = &self.plant;
        let n = p.n;
        let a0 = Matrix::from_rows(&p.a0)?;
        let n_w = p.bounds.len();
        if p.deviations.len() > n_w {
            return Err(Error::Config(format!(
                "{} deviation blocks but the box has {} intervals",
                p.deviations.len(),
                n_w
            )));
        }
        let mut a_dev = Vec::with_capacity(n_w);
        let mut b_dev = Vec::with_capacity(n_w);
        let mut c_dev = Vec::with_capacity(n_w);
        for k in 0..n_w {
            let dev = p.deviations.get(k).cloned().unwrap_or_default();
            a_dev.push(match dev.a {
                Some(rows) => Matrix::from_rows(&rows)?,
                None => Matrix::zeros(n, n),
            });
            b_dev.push(dev.b.unwrap_or_else(|| vec![0.0; n]));
            c_dev.push(dev.c.unwrap_or_else(|| vec![0.0; n]));
        }
        AffinePlant::new(
            a0,
            p.b0.clone(),
            p.c0.clone(),
            a_dev,
            b_dev,
            c_dev,
            p.bounds.clone(),
            p.disturbance.clone(),
        )
    }

    /// Resolve every `"auto"` gain and assemble the runtime scenario.
    pub fn build(&self) -> Result<Resolved> {
        let graph = self.build_graph()?;
        let ensemble = self.build_costs()?;
        let plant = self.build_plant()?;
        let mut notes = Vec::new();

        let nominal = plant.materialize(&vec![0.0; plant.n_params()])?;
        let (m, _) = relative_degree(&nominal.a, &nominal.b, &nominal.c, REL_DEG_TOL)?;

        let k = match &self.gains.k {
            Some(k) => {
                if k.len() != m {
                    return Err(Error::Config(format!(
                        "k has {} entries, plant relative degree is {m}",
                        k.len()
                    )));
                }
                k.clone()
            }
            None => {
                let k = tuning::stabilizer_gains(m, self.gains.lambda0);
                notes.push(format!(
                    "k = {k:?} from (s + {})^{m}",
                    self.gains.lambda0
                ));
                k
            }
        };

        let spectrum = graph::laplacian(&graph);
        let formula_gains = || -> Result<GeneratorGains> {
            generator::tune_alpha_beta(
                ensemble.l_lower(),
                ensemble.l_upper(),
                spectrum.lambda2(),
                spectrum.lambda_max(),
            )
        };
        let use_formula = self.gains.tuning == TuningMode::Formula;
        let alpha = match (use_formula, self.gains.alpha.value()) {
            (false, Some(v)) => v,
            _ => {
                let g = formula_gains()?;
                notes.push(format!("alpha = {} from the spectrum rule", g.alpha));
                g.alpha
            }
        };
        let beta = match (use_formula, self.gains.beta.value()) {
            (false, Some(v)) => v,
            _ => {
                let g = formula_gains()?;
                notes.push(format!("beta = {} from the spectrum rule", g.beta));
                g.beta
            }
        };
        let gen_gains = GeneratorGains::new(alpha, beta)?;

        let grid = self.analysis.grid();
        let epsilon = match self.gains.epsilon.value() {
            Some(v) => v,
            None => {
                let eb = tuning::epsilon_bound(&plant, &k, tuning::EpsHatPolicy::Formula, grid)?;
                notes.push(format!(
                    "epsilon = {:.6} from the constructive bound (eps_hat = {:.3})",
                    eb.eps_bound, eb.eps_hat
                ));
                eb.eps_bound
            }
        };
        let gamma = match self.gains.gamma.value() {
            Some(v) => v,
            None => {
                let g = tuning::gamma_search(
                    &plant,
                    &ensemble,
                    &graph,
                    &k,
                    self.gains.lambda0,
                    epsilon,
                    gen_gains,
                    grid,
                    self.gains.gamma_max,
                )?;
                notes.push(format!("gamma = {g} from the certificate search"));
                g
            }
        };
        let gains = Gains::new(m, k, self.gains.lambda0, epsilon, gamma)?;

        let schedule: Vec<(f64, Vec<f64>)> = if self.sim.schedule.is_empty() {
            vec![(0.0, vec![0.0; plant.n_params()])]
        } else {
            self.sim
                .schedule
                .iter()
                .map(|e| (e.t, e.w.clone()))
                .collect()
        };
        for (t, w) in &schedule {
            if !plant.box_contains(w) {
                notes.push(format!(
                    "warning: schedule w at t = {t} lies outside the uncertainty box: {w:?}"
                ));
            }
        }
        // The observer's fastest mode scales with gamma; keep roughly ten
        // steps per its time constant.
        if self.sim.h > 0.1 / gamma {
            notes.push(format!(
                "warning: step h = {} is coarse for gamma = {gamma}; keep h <= {}",
                self.sim.h,
                0.1 / gamma
            ));
        }

        let scenario = Scenario {
            graph,
            ensemble,
            plant,
            gains,
            gen_gains,
            mode: self.sim.controller,
        };
        let sim = SimConfig {
            h: self.sim.h,
            t_final: self.sim.t_final,
            record_stride: self.sim.record_stride,
            w_schedule: schedule,
            initial: self.sim.initial.clone(),
            seed: self.sim.seed,
        };
        scenario.validate()?;
        sim.validate(&scenario.plant)?;
        Ok(Resolved {
            scenario,
            sim,
            tol: self.sim.tol,
            analysis: self.analysis,
            notes,
        })
    }
}

/// Gravitational acceleration used by the VTOL preset.
pub const PRESET_GRAVITY: f64 = 9.8;
/// Nominal mass used by the VTOL preset.
pub const PRESET_NOMINAL_MASS: f64 = 1.0;

fn cycle4_config() -> GraphConfig {
    GraphConfig {
        n: 4,
        edges: vec![
            EdgeConfig { from: 1, to: 2, w: 1.0 },
            EdgeConfig { from: 2, to: 3, w: 1.0 },
            EdgeConfig { from: 3, to: 4, w: 1.0 },
            EdgeConfig { from: 4, to: 1, w: 1.0 },
        ],
    }
}

/// Four VTOL vertical channels (double integrators with uncertain input
/// gain and constant gravity) reaching average consensus on their initial
/// generator estimates.
pub fn preset_example1() -> ScenarioConfig {
    use crate::costs::CostFamily;
    let m0 = PRESET_NOMINAL_MASS;
    ScenarioConfig {
        graph: cycle4_config(),
        costs: (0..4)
            .map(|i| CostFunction {
                family: CostFamily::Quadratic {
                    c: 2.0,
                    target: (2 * i + 1) as f64,
                },
                l_lower: 2.0,
                l_upper: 2.0,
            })
            .collect(),
        plant: PlantConfig {
            n: 2,
            a0: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            b0: vec![0.0, 1.0 / m0],
            c0: vec![1.0, 0.0],
            deviations: vec![DeviationConfig {
                a: None,
                b: Some(vec![0.0, 1.0 / m0]),
                c: None,
            }],
            bounds: vec![[-0.5, 1.0]],
            disturbance: Some(vec![0.0, -PRESET_GRAVITY]),
        },
        gains: GainsConfig {
            tuning: TuningMode::Manual,
            k: Some(vec![1.0, 2.0]),
            lambda0: 1.0,
            alpha: MaybeAuto::Value(1.0),
            beta: MaybeAuto::Value(15.0),
            epsilon: MaybeAuto::Value(6.0),
            gamma: MaybeAuto::Value(10.0),
            gamma_max: 1024.0,
        },
        sim: SimSection {
            schedule: vec![ScheduleEntry { t: 0.0, w: vec![0.0] }],
            initial: InitialCondition::WithZ(vec![1.0, 3.0, 5.0, 7.0]),
            ..SimSection::default()
        },
        analysis: AnalysisSection::default(),
    }
}

/// Four third-order uncertain agents with heterogeneous convex costs and a
/// parameter switch at t = 25 s.
pub fn preset_example2() -> ScenarioConfig {
    use crate::costs::CostFamily;
    let zero3 = vec![vec![0.0; 3]; 3];
    let mut a1 = zero3.clone();
    a1[0][0] = 1.0;
    let mut a2 = zero3.clone();
    a2[1][0] = 1.0;
    let mut a3 = zero3.clone();
    a3[2][1] = 1.0;
    ScenarioConfig {
        graph: cycle4_config(),
        costs: vec![
            CostFunction {
                family: CostFamily::Quadratic { c: 1.0, target: 8.0 },
                l_lower: 0.5,
                l_upper: 1.5,
            },
            CostFunction {
                family: CostFamily::ScaledLogQuadratic {
                    a: 160.0,
                    b: 2.0,
                    target: 5.0,
                },
                l_lower: 0.5,
                l_upper: 1.5,
            },
            CostFunction {
                family: CostFamily::SqrtRatioQuadratic { a: 40.0 },
                l_lower: 0.5,
                l_upper: 1.5,
            },
            CostFunction {
                family: CostFamily::LogSumExpQuadratic { s: 0.05 },
                l_lower: 0.5,
                l_upper: 1.5,
            },
        ],
        plant: PlantConfig {
            n: 3,
            a0: vec![
                vec![-1.0, 1.0, 0.0],
                vec![-1.0, 0.0, 1.0],
                vec![1.0, 0.0, 1.0],
            ],
            b0: vec![0.0, 0.0, 1.0],
            c0: vec![0.0, 1.0, 0.0],
            deviations: vec![
                DeviationConfig { a: Some(a1), b: None, c: None },
                DeviationConfig { a: Some(a2), b: None, c: None },
                DeviationConfig {
                    a: Some(a3),
                    b: Some(vec![0.0, 0.0, 1.0]),
                    c: None,
                },
                DeviationConfig {
                    a: None,
                    b: None,
                    c: Some(vec![0.0, 1.0, 0.0]),
                },
            ],
            bounds: vec![[-0.5, 0.5]; 4],
            disturbance: None,
        },
        gains: GainsConfig {
            tuning: TuningMode::Manual,
            k: Some(vec![1.0, 2.0]),
            lambda0: 1.0,
            alpha: MaybeAuto::Value(1.0),
            beta: MaybeAuto::Value(15.0),
            epsilon: MaybeAuto::Value(6.0),
            gamma: MaybeAuto::Value(10.0),
            gamma_max: 1024.0,
        },
        sim: SimSection {
            schedule: vec![
                ScheduleEntry {
                    t: 0.0,
                    w: vec![0.4, 0.3, -0.2, -0.4],
                },
                ScheduleEntry {
                    t: 25.0,
                    w: vec![0.1, -0.2, -0.3, 0.2],
                },
            ],
            ..SimSection::default()
        },
        analysis: AnalysisSection::default(),
    }
}

/// Look up a compiled-in preset by name.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    match name {
        "example1" => Some(preset_example1()),
        "example2" => Some(preset_example2()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_builds_and_matches_expansion() {
        let cfg = preset_example1();
        let resolved = cfg.build().unwrap();
        let sc = &resolved.scenario;
        assert_eq!(sc.n_agents(), 4);
        assert_eq!(sc.gains.k, vec![1.0, 2.0]);
        assert_eq!(sc.gains.epsilon, 6.0);
        assert_eq!(sc.gains.gamma, 10.0);
        assert_eq!(sc.gen_gains.alpha, 1.0);
        assert_eq!(sc.gen_gains.beta, 15.0);
        let spec = graph::laplacian(&sc.graph);
        assert!((spec.lambda2() - 1.0).abs() < 1e-9);
        assert!((spec.lambda_max() - 2.0).abs() < 1e-9);
        let ss = sc.plant.materialize(&[0.0]).unwrap();
        assert_eq!(ss.e, vec![0.0, -PRESET_GRAVITY]);
        assert!(resolved.notes.is_empty());
    }

    #[test]
    fn example2_builds_with_switch() {
        let resolved = preset_example2().build().unwrap();
        assert_eq!(resolved.sim.w_schedule.len(), 2);
        assert_eq!(resolved.sim.w_schedule[1].0, 25.0);
        assert_eq!(resolved.sim.w_schedule[0].1, vec![0.4, 0.3, -0.2, -0.4]);
        assert_eq!(resolved.scenario.plant.n_params(), 4);
    }

    #[test]
    fn json_round_trip_of_presets() {
        for name in ["example1", "example2"] {
            let cfg = preset(name).unwrap();
            let text = cfg.to_json();
            let back = ScenarioConfig::from_json(&text).unwrap();
            assert_eq!(back.to_json(), text);
            back.build().unwrap();
        }
    }

    #[test]
    fn formula_mode_recomputes_generator_gains() {
        let mut cfg = preset_example2();
        cfg.gains.tuning = TuningMode::Formula;
        let resolved = cfg.build().unwrap();
        assert!((resolved.scenario.gen_gains.alpha - 9.0).abs() < 1e-9);
        assert!((resolved.scenario.gen_gains.beta - 1944.0).abs() < 1e-6);
        assert_eq!(resolved.notes.len(), 2);
    }

    #[test]
    fn auto_k_from_lambda0() {
        let mut cfg = preset_example1();
        cfg.gains.k = None;
        cfg.gains.lambda0 = 2.0;
        let resolved = cfg.build().unwrap();
        assert_eq!(resolved.scenario.gains.k, vec![4.0, 4.0]);
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let mut cfg = preset_example1();
        cfg.graph.edges[0].from = 5;
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_indexed_edge_rejected() {
        let mut cfg = preset_example1();
        cfg.graph.edges[0].from = 0;
        assert!(cfg.build().is_err());
    }

    #[test]
    fn wrong_k_length_rejected() {
        let mut cfg = preset_example1();
        cfg.gains.k = Some(vec![1.0, 2.0, 3.0]);
        assert!(cfg.build().is_err());
    }

    #[test]
    fn malformed_json_is_config_error() {
        assert!(matches!(
            ScenarioConfig::from_json("{\"graph\": 7}"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn auto_keyword_parses() {
        let text = r#"{"tuning":"manual","k":[1.0,2.0],"lambda0":1.0,
                       "alpha":1.0,"beta":"auto","epsilon":6.0,
                       "gamma":10.0,"gamma_max":64.0}"#;
        let g: GainsConfig = serde_json::from_str(text).unwrap();
        assert!(g.beta.value().is_none());
        assert_eq!(g.alpha.value(), Some(1.0));
    }
}
