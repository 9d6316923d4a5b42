use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{EngineError, PlayerVectors, StateVector};
use crate::expr::{Env, Var};
use crate::model::{direct_dependencies, GameDefinition, LawForm};

/// Finite-difference step for Newton Jacobians.
pub const NEWTON_DELTA: f64 = 1e-7;
/// Max-norm residual tolerance.
pub const NEWTON_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 20;
const CONDITION_LIMIT: f64 = 1e12;
const GUARD_EPS: f64 = 1e-12;

/// Controls in effect over one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlResolution {
    /// Realized controls per player (empty for players without a feedback law).
    pub u: PlayerVectors,
    /// Coalition controls per coalition (empty in plain games).
    pub v: PlayerVectors,
    pub uo: PlayerVectors,
    pub eps: PlayerVectors,
    /// Newton iterations spent on inverse/implicit laws.
    pub iterations: usize,
}

/// Precomputed evaluation order for a game's feedback laws.
pub struct ResolutionPlan<'g> {
    game: &'g GameDefinition,
    /// Direct-law players in dependency order.
    direct_order: Vec<usize>,
    /// `(player, component)` solved by Newton.
    unknowns: Vec<(usize, usize)>,
}

impl<'g> ResolutionPlan<'g> {
    pub fn new(game: &'g GameDefinition) -> Result<Self, EngineError> {
        for p in &game.players {
            if let Some(law) = &p.feedback {
                if law.max_derivative_order > 1 {
                    return Err(EngineError::UnsupportedOrder {
                        player: p.id,
                        order: law.max_derivative_order,
                    });
                }
            }
        }
        let deps = direct_dependencies(game);
        let mut direct_order = Vec::new();
        let mut placed = BTreeMap::new();
        // Kahn-style: repeatedly place players whose direct dependencies are placed.
        while direct_order.len() < deps.len() {
            let before = direct_order.len();
            for (&id, ds) in &deps {
                if placed.contains_key(&id) {
                    continue;
                }
                if ds
                    .iter()
                    .all(|d| placed.contains_key(d) || !deps.contains_key(d))
                {
                    placed.insert(id, ());
                    direct_order.push(id);
                }
            }
            if direct_order.len() == before {
                return Err(EngineError::Dimension(
                    "direct feedback laws are cyclically coupled".into(),
                ));
            }
        }
        let unknowns = game
            .players
            .iter()
            .filter(|p| {
                p.feedback
                    .as_ref()
                    .is_some_and(|l| l.form != LawForm::Direct)
            })
            .flat_map(|p| (0..p.control_dim).map(move |j| (p.id, j)))
            .collect();
        Ok(ResolutionPlan {
            game,
            direct_order,
            unknowns,
        })
    }

    pub fn game(&self) -> &'g GameDefinition {
        self.game
    }

    fn check_dims(
        &self,
        state: &StateVector,
        uo: &[Vec<f64>],
        eps: &[Vec<f64>],
        dphi: &[f64],
    ) -> Result<(), EngineError> {
        let g = self.game;
        let err = |m: String| Err(EngineError::Dimension(m));
        if state.values.len() != g.state_dim || dphi.len() != g.state_dim {
            return err(format!(
                "state and left difference must have {} entries",
                g.state_dim
            ));
        }
        if uo.len() != g.n_players() || eps.len() != g.n_players() {
            return err(format!("expected controls for {} players", g.n_players()));
        }
        for (k, p) in g.players.iter().enumerate() {
            if uo[k].len() != p.control_dim {
                return err(format!(
                    "player {} pure control needs {} entries",
                    p.id, p.control_dim
                ));
            }
            if eps[k].len() != p.eps_dim {
                return err(format!("player {} eps needs {} entries", p.id, p.eps_dim));
            }
        }
        Ok(())
    }

    fn base_env(
        &self,
        state: &StateVector,
        uo: &[Vec<f64>],
        eps: &[Vec<f64>],
        dphi: &[f64],
    ) -> Env {
        let mut env = Env::new();
        env.set(Var::T, state.t).set(Var::H, self.game.horizon.step);
        for (j, (x, dx)) in state.values.iter().zip(dphi).enumerate() {
            env.set(Var::Phi(j), *x).set(Var::DPhi(j), *dx);
        }
        for (k, (row_uo, row_eps)) in uo.iter().zip(eps).enumerate() {
            for (j, x) in row_uo.iter().enumerate() {
                env.set(Var::Uo(k + 1, j), *x);
            }
            for (j, x) in row_eps.iter().enumerate() {
                env.set(Var::Eps(k + 1, j), *x);
            }
        }
        env
    }

    /// Evaluates every direct law in dependency order, writing `u` into `env`.
    fn eval_direct(&self, env: &mut Env) -> Result<(), EngineError> {
        for &id in &self.direct_order {
            let law = self
                .game
                .player(id)
                .and_then(|p| p.feedback.as_ref())
                .expect("planned law");
            if let Some(guard) = &law.guard {
                let g = guard
                    .evaluate(env)
                    .map_err(EngineError::eval(format!("player {id} guard")))?;
                if g.abs() <= GUARD_EPS {
                    return Err(EngineError::SingularSubstitution { player: id });
                }
            }
            for (j, e) in law.exprs.iter().enumerate() {
                let u = e
                    .evaluate(env)
                    .map_err(EngineError::eval(format!("player {id} feedback[{j}]")))?;
                env.set(Var::U(id, j), u);
            }
        }
        Ok(())
    }

    /// Residuals of the inverse/implicit relations at the `u` values bound in `env`.
    fn residuals(&self, env: &mut Env) -> Result<Vec<f64>, EngineError> {
        self.eval_direct(env)?;
        let mut out = Vec::with_capacity(self.unknowns.len());
        for &(id, j) in &self.unknowns {
            let law = self
                .game
                .player(id)
                .and_then(|p| p.feedback.as_ref())
                .expect("planned law");
            let value = law.exprs[j]
                .evaluate(env)
                .map_err(EngineError::eval(format!("player {id} feedback[{j}]")))?;
            out.push(match law.form {
                LawForm::Inverse => value - env.get(&Var::Uo(id, j)).unwrap_or(0.0),
                _ => value,
            });
        }
        Ok(out)
    }

    fn residual_at(&self, env: &Env, x: &[f64]) -> Result<Vec<f64>, EngineError> {
        let mut probe = env.clone();
        for (&(id, j), &value) in self.unknowns.iter().zip(x) {
            probe.set(Var::U(id, j), value);
        }
        self.residuals(&mut probe)
    }

    /// Damped Newton on the inverse/implicit relations.
    fn solve(&self, env: &Env, mut x: Vec<f64>) -> Result<(Vec<f64>, usize), EngineError> {
        let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut r = self.residual_at(env, &x)?;
        if norm(&r) <= NEWTON_TOL {
            return Ok((x, 0));
        }
        let m = x.len();
        for iter in 1..=NEWTON_MAX_ITER {
            // Central differences, one pair of probes per column.
            let mut jac = DMatrix::zeros(m, m);
            for col in 0..m {
                let mut up = x.clone();
                up[col] += NEWTON_DELTA;
                let mut down = x.clone();
                down[col] -= NEWTON_DELTA;
                let (ru, rd) = (self.residual_at(env, &up)?, self.residual_at(env, &down)?);
                for row in 0..m {
                    jac[(row, col)] = (ru[row] - rd[row]) / (2.0 * NEWTON_DELTA);
                }
            }
            let sv = jac.clone().singular_values();
            let (smax, smin) = (sv.max(), sv.min());
            let condition = if smin > 0.0 {
                smax / smin
            } else {
                f64::INFINITY
            };
            if condition > CONDITION_LIMIT {
                return Err(EngineError::SingularJacobian { condition });
            }
            let rhs = -DVector::from_column_slice(&r);
            let dx = jac
                .lu()
                .solve(&rhs)
                .ok_or(EngineError::SingularJacobian { condition })?;
            let current = norm(&r);
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let trial: Vec<f64> = x
                    .iter()
                    .zip(dx.iter())
                    .map(|(a, d)| a + alpha * d)
                    .collect();
                if let Ok(rt) = self.residual_at(env, &trial) {
                    if norm(&rt) < current {
                        accepted = Some((trial, rt));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((xn, rn)) = accepted else {
                return Err(EngineError::NoConvergence {
                    iterations: iter,
                    residual: current,
                });
            };
            x = xn;
            r = rn;
            if norm(&r) <= NEWTON_TOL {
                return Ok((x, iter));
            }
        }
        Err(EngineError::NoConvergence {
            iterations: NEWTON_MAX_ITER,
            residual: norm(&r),
        })
    }

    /// Resolves all controls at `state`.
    ///
    /// `guess` seeds Newton for inverse/implicit laws; without it the pure
    /// controls are used.
    pub fn resolve(
        &self,
        state: &StateVector,
        uo: &[Vec<f64>],
        eps: &[Vec<f64>],
        dphi_prev: &[f64],
        guess: Option<&[Vec<f64>]>,
    ) -> Result<ControlResolution, EngineError> {
        self.check_dims(state, uo, eps, dphi_prev)?;
        let mut env = self.base_env(state, uo, eps, dphi_prev);
        let mut iterations = 0;
        if !self.unknowns.is_empty() {
            let x0: Vec<f64> = self
                .unknowns
                .iter()
                .map(|&(id, j)| {
                    guess
                        .and_then(|g| g.get(id - 1))
                        .and_then(|row| row.get(j))
                        .copied()
                        .unwrap_or(uo[id - 1][j])
                })
                .collect();
            let (x, iters) = self.solve(&env, x0)?;
            iterations = iters;
            for (&(id, j), value) in self.unknowns.iter().zip(x) {
                env.set(Var::U(id, j), value);
            }
        }
        self.eval_direct(&mut env)?;

        let u = self
            .game
            .players
            .iter()
            .map(|p| match p.feedback {
                Some(_) => (0..p.control_dim)
                    .map(|j| env.get(&Var::U(p.id, j)).unwrap_or(f64::NAN))
                    .collect(),
                None => Vec::new(),
            })
            .collect();
        let mut v = Vec::with_capacity(self.game.coalitions.len());
        for c in &self.game.coalitions {
            let row = c
                .exprs
                .iter()
                .enumerate()
                .map(|(j, e)| {
                    e.evaluate(&env)
                        .map_err(EngineError::eval(format!("coalition {} expr[{j}]", c.id)))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            for (j, x) in row.iter().enumerate() {
                env.set(Var::V(c.id, j), *x);
            }
            v.push(row);
        }
        Ok(ControlResolution {
            u,
            v,
            uo: uo.to_vec(),
            eps: eps.to_vec(),
            iterations,
        })
    }

    /// One explicit Euler step from `state` under resolved controls.
    pub fn advance(
        &self,
        state: &StateVector,
        res: &ControlResolution,
    ) -> Result<StateVector, EngineError> {
        let g = self.game;
        let mut env = Env::new();
        env.set(Var::T, state.t).set(Var::H, g.horizon.step);
        for (j, x) in state.values.iter().enumerate() {
            env.set(Var::Phi(j), *x);
        }
        for (k, row) in res.u.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                env.set(Var::U(k + 1, j), *x);
            }
        }
        for (k, row) in res.v.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                env.set(Var::V(k + 1, j), *x);
            }
        }
        let h = g.horizon.step;
        let t_next = state.t + h;
        let mut values = Vec::with_capacity(g.state_dim);
        for (j, e) in g.dynamics.iter().enumerate() {
            let rate = e
                .evaluate(&env)
                .map_err(EngineError::eval(format!("dynamics[{j}]")))?;
            let x = state.values[j] + h * rate;
            if !x.is_finite() {
                return Err(EngineError::NonFiniteState {
                    t: t_next,
                    component: j,
                });
            }
            values.push(x);
        }
        Ok(StateVector { t: t_next, values })
    }
}

/// Resolves every player's (and coalition's) controls at one grid point.
pub fn resolve_controls(
    game: &GameDefinition,
    state: &StateVector,
    uo: &[Vec<f64>],
    eps: &[Vec<f64>],
    dphi_prev: &[f64],
) -> Result<ControlResolution, EngineError> {
    ResolutionPlan::new(game)?.resolve(state, uo, eps, dphi_prev, None)
}
