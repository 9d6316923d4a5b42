//! Discrete-time evolution of interactive games.
//!
//! Feedback laws see the state at the left end of each step (and, for laws of
//! derivative order 1, the left difference of the state); the state is then
//! advanced by the right difference, i.e. one explicit Euler step.

mod exclusion;
mod resolve;
mod trajectory;

use thiserror::Error;

use crate::expr::{EvalError, Var};
use crate::model::{GameDefinition, ModelError};

pub use exclusion::exclude_derivative;
pub use resolve::{
    resolve_controls, ControlResolution, ResolutionPlan, NEWTON_DELTA, NEWTON_MAX_ITER, NEWTON_TOL,
};
pub use trajectory::{fmt_f64, Layout, Sample, Trajectory, TrajectoryFormat, TrajectoryIoError};

/// Per-player vectors, indexed by `player id - 1`.
pub type PlayerVectors = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub t: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EngineError {
    #[error("NO_CONVERGENCE: Newton solve did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("SINGULAR_JACOBIAN: condition estimate {condition:e}")]
    SingularJacobian { condition: f64 },
    #[error("SINGULAR_SUBSTITUTION: coefficient of player {player}'s solved law vanishes")]
    SingularSubstitution { player: usize },
    #[error("NON_FINITE_STATE: component {component} at t = {t}")]
    NonFiniteState { t: f64, component: usize },
    #[error("evaluation failed in {context}: {source}")]
    Eval {
        context: String,
        #[source]
        source: EvalError,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("derivative order {order} of player {player} is not supported")]
    UnsupportedOrder { player: usize, order: u8 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl EngineError {
    pub(crate) fn eval(context: impl Into<String>) -> impl FnOnce(EvalError) -> EngineError {
        let context = context.into();
        move |source| EngineError::Eval { context, source }
    }

    /// Numeric failures, as opposed to configuration problems.
    pub fn is_numeric(&self) -> bool {
        !matches!(
            self,
            EngineError::Dimension(_)
                | EngineError::Model(_)
                | EngineError::UnsupportedOrder { .. }
        )
    }
}

/// Supplies pure controls and ε at each grid point.
pub trait Driver {
    /// `(uo, eps)` at grid index `k`, time `t`, state `phi`.
    fn drive(
        &self,
        k: usize,
        t: f64,
        phi: &[f64],
    ) -> Result<(PlayerVectors, PlayerVectors), EngineError>;
}

impl<F> Driver for F
where
    F: Fn(usize, f64, &[f64]) -> Result<(PlayerVectors, PlayerVectors), EngineError>,
{
    fn drive(
        &self,
        k: usize,
        t: f64,
        phi: &[f64],
    ) -> Result<(PlayerVectors, PlayerVectors), EngineError> {
        self(k, t, phi)
    }
}

/// Drives a game by its declared scenario and ground-truth ε
/// (zeros where no ground truth is declared).
pub struct ScenarioDriver<'g> {
    game: &'g GameDefinition,
}

impl<'g> ScenarioDriver<'g> {
    pub fn new(game: &'g GameDefinition) -> Self {
        ScenarioDriver { game }
    }

    pub fn pure_controls(&self, t: f64) -> Result<PlayerVectors, EngineError> {
        let env = crate::expr::Env::new().with(Var::T, t);
        self.game
            .scenario
            .uo
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, e)| {
                        e.evaluate(&env)
                            .map_err(EngineError::eval(format!("scenario.uo[{k}][{j}]")))
                    })
                    .collect()
            })
            .collect()
    }

    pub fn truth_eps(
        &self,
        t: f64,
        phi: &[f64],
        uo: &[Vec<f64>],
    ) -> Result<PlayerVectors, EngineError> {
        let Some(truth) = &self.game.eps_truth else {
            return Ok(self
                .game
                .players
                .iter()
                .map(|p| vec![0.0; p.eps_dim])
                .collect());
        };
        let mut env = crate::expr::Env::new()
            .with(Var::T, t)
            .with(Var::H, self.game.horizon.step);
        for (j, x) in phi.iter().enumerate() {
            env.set(Var::Phi(j), *x);
        }
        for (k, row) in uo.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                env.set(Var::Uo(k + 1, j), *x);
            }
        }
        truth
            .iter()
            .enumerate()
            .map(|(k, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, e)| {
                        e.evaluate(&env)
                            .map_err(EngineError::eval(format!("eps_truth[{k}][{j}]")))
                    })
                    .collect()
            })
            .collect()
    }
}

impl Driver for ScenarioDriver<'_> {
    fn drive(
        &self,
        _k: usize,
        t: f64,
        phi: &[f64],
    ) -> Result<(PlayerVectors, PlayerVectors), EngineError> {
        let uo = self.pure_controls(t)?;
        let eps = self.truth_eps(t, phi, &uo)?;
        Ok((uo, eps))
    }
}

/// Resolves controls at the current state and advances it by one Euler step.
pub fn step(
    game: &GameDefinition,
    state: &StateVector,
    uo: &[Vec<f64>],
    eps: &[Vec<f64>],
    dphi_prev: &[f64],
) -> Result<(StateVector, ControlResolution), EngineError> {
    let plan = ResolutionPlan::new(game)?;
    let res = plan.resolve(state, uo, eps, dphi_prev, None)?;
    let next = plan.advance(state, &res)?;
    Ok((next, res))
}

/// Stateful stepping along the grid: carries the left difference of the state
/// and the previous step's controls (the Newton warm start).
pub struct Stepper<'g> {
    plan: ResolutionPlan<'g>,
    k: usize,
    state: StateVector,
    dphi_prev: Vec<f64>,
    last_u: Option<PlayerVectors>,
}

impl<'g> Stepper<'g> {
    /// Starts at grid index `k` with state `phi` and a zero left difference.
    pub fn new(game: &'g GameDefinition, k: usize, phi: Vec<f64>) -> Result<Self, EngineError> {
        let d = game.state_dim;
        if phi.len() != d {
            return Err(EngineError::Dimension(format!(
                "state has {} entries, game has {d}",
                phi.len()
            )));
        }
        Ok(Stepper {
            plan: ResolutionPlan::new(game)?,
            k,
            state: StateVector {
                t: game.horizon.time(k),
                values: phi,
            },
            dphi_prev: vec![0.0; d],
            last_u: None,
        })
    }

    /// Sets the left difference used by the next resolution.
    pub fn with_left_difference(mut self, dphi: Vec<f64>) -> Self {
        self.dphi_prev = dphi;
        self
    }

    pub fn with_warm_start(mut self, u: PlayerVectors) -> Self {
        self.last_u = Some(u);
        self
    }

    pub fn index(&self) -> usize {
        self.k
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn game(&self) -> &'g GameDefinition {
        self.plan.game()
    }

    /// Resolves controls at the current grid point without advancing.
    pub fn resolve(
        &self,
        uo: &[Vec<f64>],
        eps: &[Vec<f64>],
    ) -> Result<ControlResolution, EngineError> {
        self.plan.resolve(
            &self.state,
            uo,
            eps,
            &self.dphi_prev,
            self.last_u.as_deref(),
        )
    }

    /// Resolves controls and advances one step; returns the resolution used.
    pub fn advance(
        &mut self,
        uo: &[Vec<f64>],
        eps: &[Vec<f64>],
    ) -> Result<ControlResolution, EngineError> {
        let res = self.resolve(uo, eps)?;
        let next = self.plan.advance(&self.state, &res)?;
        let h = self.plan.game().horizon.step;
        self.dphi_prev = next
            .values
            .iter()
            .zip(&self.state.values)
            .map(|(a, b)| (a - b) / h)
            .collect();
        self.k += 1;
        self.state = StateVector {
            t: self.plan.game().horizon.time(self.k),
            values: next.values,
        };
        self.last_u = Some(res.u.clone());
        Ok(res)
    }
}

/// A run that stopped early; `partial` holds every sample recorded before the failure.
#[derive(Debug, Error)]
#[error("{error} (after {} sample(s))", .partial.samples.len())]
pub struct SimulationFailure {
    pub partial: Trajectory,
    #[source]
    pub error: EngineError,
}

/// Runs the game's scenario (a performance) over the full horizon.
pub fn simulate(game: &GameDefinition) -> Result<Trajectory, SimulationFailure> {
    simulate_with(game, &ScenarioDriver::new(game))
}

/// Runs the full horizon with controls supplied by `driver`.
pub fn simulate_with(
    game: &GameDefinition,
    driver: &dyn Driver,
) -> Result<Trajectory, SimulationFailure> {
    let mut traj = Trajectory::empty(game, true);
    let fail = |traj: Trajectory, error| SimulationFailure {
        partial: traj,
        error,
    };
    let mut stepper = match Stepper::new(game, 0, game.initial_state.clone()) {
        Ok(s) => s,
        Err(e) => return Err(fail(traj, e)),
    };
    let steps = game.horizon.steps();
    for k in 0..=steps {
        let t = stepper.state().t;
        let phi = stepper.state().values.clone();
        let outcome = driver.drive(k, t, &phi).and_then(|(uo, eps)| {
            let res = if k < steps {
                stepper.advance(&uo, &eps)?
            } else {
                stepper.resolve(&uo, &eps)?
            };
            Ok(res)
        });
        match outcome {
            Ok(res) => traj
                .samples
                .push(Sample::from_resolution(t, phi, res, true)),
            Err(e) => return Err(fail(traj, e)),
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_game;

    fn lin1() -> GameDefinition {
        load_game(include_str!("../../games/lin1.json")).unwrap()
    }

    fn v(x: &[f64]) -> PlayerVectors {
        x.iter().map(|&a| vec![a]).collect()
    }

    #[test]
    fn one_euler_step_without_feedback() {
        let mut g = lin1();
        g.horizon.step = 0.1;
        let s = StateVector {
            t: 0.0,
            values: vec![0.0],
        };
        let (next, res) = step(&g, &s, &v(&[1.0, -0.5]), &v(&[0.0, 0.0]), &[0.0]).unwrap();
        assert!((next.values[0] - 0.05).abs() < 1e-15);
        assert_eq!(res.u, v(&[1.0, -0.5]));
    }

    #[test]
    fn one_euler_step_with_feedback() {
        let mut g = lin1();
        g.horizon.step = 0.1;
        let phi = 0.7;
        let s = StateVector {
            t: 0.0,
            values: vec![phi],
        };
        let (next, _) = step(&g, &s, &v(&[1.0, -0.5]), &v(&[0.2, 0.1]), &[0.0]).unwrap();
        assert!((next.values[0] - (phi + 0.1 * (0.3 * phi + 0.5))).abs() < 1e-15);
    }

    #[test]
    fn zero_dynamics_is_a_fixed_point() {
        let g = load_game(include_str!("../../games/still.json")).unwrap();
        let s = StateVector {
            t: 0.0,
            values: vec![3.0],
        };
        let (next, _) = step(&g, &s, &v(&[17.0]), &v(&[-4.0]), &[0.0]).unwrap();
        assert_eq!(next.values, vec![3.0]);
    }

    #[test]
    fn simulate_records_every_grid_point() {
        let traj = simulate(&lin1()).unwrap();
        assert_eq!(traj.samples.len(), 1001);
        for (k, s) in traj.samples.iter().enumerate() {
            assert_eq!(s.t, k as f64 * 0.01);
        }
    }

    #[test]
    fn linear_motion_is_exact_without_feedback() {
        let g = load_game(include_str!("../../games/lin1_neutral.json")).unwrap();
        let traj = simulate(&g).unwrap();
        for s in &traj.samples {
            assert!((s.phi[0] - 0.5 * s.t).abs() < 1e-12);
        }
        assert!((traj.samples[100].phi[0] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn closed_form_scalar_linear_ode() {
        let traj = simulate(&lin1()).unwrap();
        let (a, b) = (0.3f64, 0.5f64);
        let exact = b / a * (a.exp() - 1.0);
        assert!((traj.samples[100].phi[0] - exact).abs() < 5e-3);
    }

    #[test]
    fn harmonic_energy_grows_by_euler_factor() {
        let g = load_game(include_str!("../../games/harmonic.json")).unwrap();
        let h = g.horizon.step;
        let traj = simulate(&g).unwrap();
        let energy = |s: &Sample| s.phi[0].powi(2) + s.phi[1].powi(2);
        for (k, s) in traj.samples.iter().enumerate() {
            let bound = (1.0 + h * h).powi(k as i32);
            assert!((energy(s) - bound).abs() < 1e-12 * bound);
        }
    }

    #[test]
    fn left_difference_convention() {
        let doc = r#"{
          "name": "LEFT", "state_dim": 1,
          "players": [{"id": 1, "control_dim": 1, "eps_dim": 0,
            "feedback": {"form": "direct", "exprs": ["dphi[0]"], "max_derivative_order": 1}}],
          "dynamics": ["1 + 0*u[1][0]"],
          "horizon": {"t0": 0, "t1": 0.1, "step": 0.01},
          "scenario": {"uo": [["0"]]}
        }"#;
        let g = load_game(doc).unwrap();
        let traj = simulate(&g).unwrap();
        assert_eq!(traj.samples[0].u[0][0], 0.0);
        for s in &traj.samples[1..] {
            assert!((s.u[0][0] - 1.0).abs() < 1e-12);
        }
        assert!(traj.zero_initial_left_difference);
    }

    #[test]
    fn simulate_is_bit_identical() {
        let g = load_game(include_str!("../../games/filtering.json")).unwrap();
        let a = simulate(&g).unwrap();
        let b = simulate(&g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_returns_partial_trajectory() {
        let doc = r#"{
          "name": "BLOWUP", "state_dim": 1, "initial_state": [1.0],
          "players": [{"id": 1, "control_dim": 1, "eps_dim": 0,
            "feedback": {"form": "direct", "exprs": ["uo[1][0]"]}}],
          "dynamics": ["phi[0]^2 * 1e10"],
          "horizon": {"t0": 0, "t1": 1, "step": 0.1},
          "scenario": {"uo": [["0"]]}
        }"#;
        let g = load_game(doc).unwrap();
        let err = simulate(&g).unwrap_err();
        assert!(matches!(err.error, EngineError::NonFiniteState { .. }));
        assert!(!err.partial.samples.is_empty());
        assert!(err.partial.samples.iter().all(|s| s.phi[0].is_finite()));
    }
}
