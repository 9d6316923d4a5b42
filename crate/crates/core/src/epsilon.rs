//! A posteriori recovery of ε from observed play.
//!
//! Each player's direct law `u = f(uo, phi; eps)` is inverted sample by
//! sample with Gauss-Newton on the least-squares residual `u_obs - f`.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{Sample, Trajectory, NEWTON_DELTA, NEWTON_MAX_ITER, NEWTON_TOL};
use crate::expr::{Env, EvalError, Expr, Var};
use crate::model::{GameDefinition, LawForm, ModelError};

/// Default bound on the smallest singular value of the ε-Jacobian.
pub const DEFAULT_THRESHOLD: f64 = 1e-8;
/// Residual accepted when a player has more control components than ε components.
pub const OVERDETERMINED_RESIDUAL: f64 = 1e-6;
const MAX_HALVINGS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Identifiability {
    Identified,
    Unidentifiable,
    NoConvergence,
}

impl fmt::Display for Identifiability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Identifiability::Identified => "IDENTIFIED",
            Identifiability::Unidentifiable => "UNIDENTIFIABLE",
            Identifiability::NoConvergence => "NO_CONVERGENCE",
        })
    }
}

/// One player's ε at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonEstimate {
    pub t: f64,
    pub player: usize,
    /// Absent when the sample is unidentifiable.
    pub eps: Option<Vec<f64>>,
    pub flag: Identifiability,
    /// Max-norm of `u_obs - f` at `eps`; absent together with `eps`.
    pub residual: Option<f64>,
    /// Smallest singular value of the ε-Jacobian at the last iterate.
    pub min_singular_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonTrace {
    pub game: String,
    /// Sample-major, players in id order.
    pub estimates: Vec<EpsilonEstimate>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryOptions {
    /// Start each solve from the previous sample's ε. Turning this off makes
    /// samples independent and lets them run in parallel.
    pub warm_start: bool,
    pub threshold: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            warm_start: true,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Error)]
pub enum EpsilonError {
    #[error("MISSING_COLUMNS: {0}")]
    MissingColumns(String),
    #[error("player {player}: eps_dim {eps_dim} exceeds control_dim {control_dim}")]
    Underdetermined {
        player: usize,
        eps_dim: usize,
        control_dim: usize,
    },
    #[error("evaluation failed at t = {t}: {source}")]
    Eval {
        t: f64,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct Target<'g> {
    player: usize,
    exprs: &'g [Expr],
    eps_dim: usize,
}

pub fn recover_epsilon(
    game: &GameDefinition,
    traj: &Trajectory,
) -> Result<EpsilonTrace, EpsilonError> {
    recover_epsilon_with(game, traj, RecoveryOptions::default())
}

pub fn recover_epsilon_with(
    game: &GameDefinition,
    traj: &Trajectory,
    options: RecoveryOptions,
) -> Result<EpsilonTrace, EpsilonError> {
    let targets = targets(game, traj)?;
    let estimates = if options.warm_start {
        let mut prev: Vec<Vec<f64>> = targets.iter().map(|t| vec![0.0; t.eps_dim]).collect();
        let mut out = Vec::with_capacity(traj.samples.len() * targets.len());
        for s in &traj.samples {
            let row = solve_sample(game, &targets, s, &prev, options)?;
            for (k, est) in row.iter().enumerate() {
                if let (Identifiability::Identified, Some(e)) = (est.flag, &est.eps) {
                    prev[k].clone_from(e);
                }
            }
            out.extend(row);
        }
        out
    } else {
        let zeros: Vec<Vec<f64>> = targets.iter().map(|t| vec![0.0; t.eps_dim]).collect();
        let rows = traj
            .samples
            .par_iter()
            .map(|s| solve_sample(game, &targets, s, &zeros, options))
            .collect::<Result<Vec<_>, _>>()?;
        rows.into_iter().flatten().collect()
    };
    Ok(EpsilonTrace {
        game: traj.game.clone(),
        estimates,
    })
}

fn targets<'g>(
    game: &'g GameDefinition,
    traj: &Trajectory,
) -> Result<Vec<Target<'g>>, EpsilonError> {
    let layout = &traj.layout;
    if layout.uo_dims.len() != game.players.len() || layout.u_dims.len() != game.players.len() {
        return Err(EpsilonError::MissingColumns(format!(
            "trajectory has {} player(s), game `{}` has {}",
            layout.uo_dims.len(),
            game.name,
            game.players.len()
        )));
    }
    let mut out = Vec::new();
    for (k, p) in game.players.iter().enumerate() {
        let Some(law) = &p.feedback else { continue };
        if p.eps_dim == 0 {
            continue;
        }
        if law.form != LawForm::Direct {
            return Err(ModelError::NotDirect {
                player: p.id,
                form: law.form,
            }
            .into());
        }
        if law.max_derivative_order != 0 {
            return Err(ModelError::DerivativeOrder {
                player: p.id,
                order: law.max_derivative_order,
            }
            .into());
        }
        if p.eps_dim > p.control_dim {
            return Err(EpsilonError::Underdetermined {
                player: p.id,
                eps_dim: p.eps_dim,
                control_dim: p.control_dim,
            });
        }
        if layout.u_dims[k] != p.control_dim || layout.uo_dims[k] != p.control_dim {
            return Err(EpsilonError::MissingColumns(format!(
                "u_{0}_* and uo_{0}_* are required",
                p.id
            )));
        }
        out.push(Target {
            player: p.id,
            exprs: &law.exprs,
            eps_dim: p.eps_dim,
        });
    }
    Ok(out)
}

fn sample_env(game: &GameDefinition, s: &Sample) -> Env {
    let mut env = Env::new();
    env.set(Var::T, s.t).set(Var::H, game.horizon.step);
    for (j, x) in s.phi.iter().enumerate() {
        env.set(Var::Phi(j), *x);
    }
    for (k, row) in s.uo.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            env.set(Var::Uo(k + 1, j), *x);
        }
    }
    for (k, row) in s.u.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            env.set(Var::U(k + 1, j), *x);
        }
    }
    env
}

fn solve_sample(
    game: &GameDefinition,
    targets: &[Target<'_>],
    s: &Sample,
    guesses: &[Vec<f64>],
    options: RecoveryOptions,
) -> Result<Vec<EpsilonEstimate>, EpsilonError> {
    let mut env = sample_env(game, s);
    targets
        .iter()
        .zip(guesses)
        .map(|(target, guess)| {
            invert(target, &mut env, &s.u[target.player - 1], guess, options)
                .map_err(|source| EpsilonError::Eval { t: s.t, source })
                .map(|(eps, flag, residual, sigma)| EpsilonEstimate {
                    t: s.t,
                    player: target.player,
                    eps,
                    flag,
                    residual,
                    min_singular_value: sigma,
                })
        })
        .collect()
}

type Inversion = (Option<Vec<f64>>, Identifiability, Option<f64>, f64);

fn invert(
    target: &Target<'_>,
    env: &mut Env,
    observed: &[f64],
    guess: &[f64],
    options: RecoveryOptions,
) -> Result<Inversion, EvalError> {
    let m = target.eps_dim;
    let n = observed.len();
    let residual = |env: &mut Env, eps: &[f64]| -> Result<DVector<f64>, EvalError> {
        for (j, x) in eps.iter().enumerate() {
            env.set(Var::Eps(target.player, j), *x);
        }
        let mut r = DVector::zeros(n);
        for (j, e) in target.exprs.iter().enumerate() {
            r[j] = observed[j] - e.evaluate(env)?;
        }
        Ok(r)
    };

    let mut eps = guess.to_vec();
    let mut r = residual(env, &eps)?;
    let mut sigma = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let mut jac = DMatrix::zeros(n, m);
        for c in 0..m {
            let mut probe = eps.clone();
            probe[c] = eps[c] + NEWTON_DELTA;
            let plus = residual(env, &probe)?;
            probe[c] = eps[c] - NEWTON_DELTA;
            let minus = residual(env, &probe)?;
            jac.set_column(c, &((plus - minus) / (2.0 * NEWTON_DELTA)));
        }
        let svd = jac.svd(true, true);
        sigma = svd.singular_values.min();
        if !(sigma >= options.threshold) {
            return Ok((None, Identifiability::Unidentifiable, None, sigma));
        }
        if r.amax() == 0.0 {
            break;
        }
        let step = match svd.solve(&(-&r), 0.0) {
            Ok(s) => s,
            Err(_) => return Ok((None, Identifiability::Unidentifiable, None, sigma)),
        };
        let norm = r.norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = eps
                .iter()
                .zip(step.iter())
                .map(|(e, d)| e + alpha * d)
                .collect();
            let rt = residual(env, &trial)?;
            if rt.norm() < norm {
                accepted = Some((trial, rt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, rt)) = accepted else { break };
        let moved = step.amax() * alpha;
        eps = trial;
        r = rt;
        if moved <= NEWTON_TOL * 1e-3 * (1.0 + eps.iter().fold(0.0f64, |a, x| a.max(x.abs()))) {
            break;
        }
    }
    let res = r.amax();
    let accept = if n > m {
        OVERDETERMINED_RESIDUAL
    } else {
        NEWTON_TOL
    };
    let flag = if res <= accept {
        Identifiability::Identified
    } else {
        Identifiability::NoConvergence
    };
    Ok((Some(eps), flag, Some(res), sigma))
}

impl EpsilonTrace {
    /// Estimates for one player, in sample order.
    pub fn for_player(&self, player: usize) -> impl Iterator<Item = &EpsilonEstimate> {
        self.estimates.iter().filter(move |e| e.player == player)
    }

    pub fn count(&self, flag: Identifiability) -> usize {
        self.estimates.iter().filter(|e| e.flag == flag).count()
    }

    /// CSV with columns `t,player,eps_0..,flag,residual`; absent values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let width = self
            .estimates
            .iter()
            .filter_map(|e| e.eps.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "player".to_string()];
        header.extend((0..width).map(|j| format!("eps_{j}")));
        header.extend(["flag".to_string(), "residual".to_string()]);
        w.write_record(&header)?;
        for e in &self.estimates {
            let mut row = vec![crate::engine::fmt_f64(e.t), e.player.to_string()];
            for j in 0..width {
                row.push(
                    e.eps
                        .as_ref()
                        .and_then(|v| v.get(j))
                        .map(|x| crate::engine::fmt_f64(*x))
                        .unwrap_or_default(),
                );
            }
            row.push(e.flag.to_string());
            row.push(e.residual.map(crate::engine::fmt_f64).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
