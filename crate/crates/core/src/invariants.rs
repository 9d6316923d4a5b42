//! Scanning candidate quantities `Z` for omens: values that stay constant
//! along a run, or whose rate of change is an affine function of `Z` itself.
//!
//! Both tests read the recurrence on the simulation grid (forward
//! differences `(Z_{k+1} - Z_k) / h`), not a continuum derivative.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{simulate, Trajectory};
use crate::expr::{parse, Env, EvalError, Expr, ParseError, Var};
use crate::model::GameDefinition;
use crate::rng::SplitMix64;

pub const DEFAULT_TOL_REL: f64 = 1e-6;
/// Closed-dynamics residual tolerance is `DEFAULT_TOL_ABS_SCALE * (1 + max|Z|)`.
pub const DEFAULT_TOL_ABS_SCALE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantityCandidate {
    pub name: String,
    pub expr: Expr,
}

impl QuantityCandidate {
    pub fn new(name: impl Into<String>, expr: &str) -> Result<Self, ParseError> {
        Ok(QuantityCandidate {
            name: name.into(),
            expr: parse(expr)?,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateDocument {
    name: String,
    expr: String,
}

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("candidate list: {0}")]
    Json(#[from] serde_json::Error),
    #[error("candidate `{name}`: {source}")]
    Parse {
        name: String,
        #[source]
        source: ParseError,
    },
    #[error("candidate `{name}` reads `{var}`, which is not a trajectory column")]
    Forbidden { name: String, var: Var },
}

/// Reads a JSON list of `{name, expr}`.
pub fn load_candidates(json: &str) -> Result<Vec<QuantityCandidate>, CandidateError> {
    let docs: Vec<CandidateDocument> = serde_json::from_str(json)?;
    docs.into_iter()
        .map(|d| {
            let expr = parse(&d.expr).map_err(|source| CandidateError::Parse {
                name: d.name.clone(),
                source,
            })?;
            if let Some(var) = expr
                .free_variables()
                .into_iter()
                .find(|v| matches!(v, Var::DPhi(_) | Var::V(..)))
            {
                return Err(CandidateError::Forbidden { name: d.name, var });
            }
            Ok(QuantityCandidate { name: d.name, expr })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Invariant,
    ClosedDynamics,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Bound on the relative variation for `INVARIANT`.
    pub tol_rel: f64,
    /// Absolute residual bound for `CLOSED_DYNAMICS`; `None` scales with the series.
    pub tol_abs: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_rel: DEFAULT_TOL_REL,
            tol_abs: None,
        }
    }
}

/// `dZ/dt = c0 + c1 Z` fitted on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZDynamics {
    pub c0: f64,
    pub c1: f64,
    pub residual_rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub name: String,
    pub expr: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_variation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<ZDynamics>,
    /// Residual bound the dynamics were judged against.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_abs: Option<f64>,
    /// `[t_first, t_last]` of the samples used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<[f64; 2]>,
    /// Set when the candidate could not be evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmenReport {
    pub game: String,
    pub tol_rel: f64,
    pub candidates: Vec<CandidateReport>,
}

impl OmenReport {
    pub fn write_json<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.candidates
            .iter()
            .find(|c| c.name == name)
            .and_then(|c| c.verdict)
    }
}

/// `Z(t_k)` at every sample.
pub fn evaluate_quantity(q: &QuantityCandidate, traj: &Trajectory) -> Result<Vec<f64>, EvalError> {
    let mut env = Env::new();
    env.set(Var::H, traj.step);
    traj.samples
        .iter()
        .map(|s| {
            env.set(Var::T, s.t);
            for (j, x) in s.phi.iter().enumerate() {
                env.set(Var::Phi(j), *x);
            }
            for (k, row) in s.u.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    env.set(Var::U(k + 1, j), *x);
                }
            }
            for (k, row) in s.uo.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    env.set(Var::Uo(k + 1, j), *x);
                }
            }
            for (k, row) in s.eps.iter().flatten().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    env.set(Var::Eps(k + 1, j), *x);
                }
            }
            q.expr.evaluate(&env)
        })
        .collect()
}

/// Relative variation `(max - min) / max(1, |mean|)` and whether it is within `tol_rel`.
pub fn test_invariance(series: &[f64], tol_rel: f64) -> (bool, f64) {
    if series.is_empty() {
        return (true, 0.0);
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let variation = (hi - lo) / mean.abs().max(1.0);
    (variation <= tol_rel, variation)
}

/// Least squares of `(Z_{k+1} - Z_k) / h` on `[1, Z_k]`.
///
/// Uses the pseudo-inverse, so a constant series yields the minimum-norm
/// solution `c0 = c1 = 0`. `None` for fewer than 3 samples.
pub fn fit_z_dynamics(series: &[f64], h: f64) -> Option<ZDynamics> {
    if series.len() < 3 {
        return None;
    }
    let n = series.len() - 1;
    let x = DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { series[r] });
    let y = DVector::from_fn(n, |r, _| (series[r + 1] - series[r]) / h);
    let svd = x.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-12;
    let coeffs = svd.solve(&y, cutoff).ok()?;
    let resid = &y - &x * &coeffs;
    Some(ZDynamics {
        c0: coeffs[0],
        c1: coeffs[1],
        residual_rms: (resid.norm_squared() / n as f64).sqrt(),
    })
}

/// Verdict for one series; `INVARIANT` takes precedence over `CLOSED_DYNAMICS`.
pub fn classify(series: &[f64], h: f64, tol: Tolerances) -> (Verdict, f64, Option<ZDynamics>, f64) {
    let (invariant, variation) = test_invariance(series, tol.tol_rel);
    let scale = series.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol_abs = tol.tol_abs.unwrap_or(DEFAULT_TOL_ABS_SCALE * (1.0 + scale));
    let dynamics = fit_z_dynamics(series, h);
    let verdict = if invariant {
        Verdict::Invariant
    } else if dynamics.is_some_and(|d| d.residual_rms <= tol_abs) {
        Verdict::ClosedDynamics
    } else {
        Verdict::Neither
    };
    (verdict, variation, dynamics, tol_abs)
}

/// Applies both tests to every candidate. Evaluation failures are reported
/// per candidate and do not stop the scan.
pub fn scan_omens(
    candidates: &[QuantityCandidate],
    traj: &Trajectory,
    tol: Tolerances,
) -> OmenReport {
    let span = match (traj.samples.first(), traj.samples.last()) {
        (Some(a), Some(b)) => Some([a.t, b.t]),
        _ => None,
    };
    let reports = candidates
        .iter()
        .map(|q| {
            let mut report = CandidateReport {
                name: q.name.clone(),
                expr: q.expr.to_string(),
                verdict: None,
                relative_variation: None,
                dynamics: None,
                tol_abs: None,
                span,
                error: None,
            };
            match evaluate_quantity(q, traj) {
                Ok(series) if series.iter().all(|x| x.is_finite()) => {
                    let (verdict, variation, dynamics, tol_abs) = classify(&series, traj.step, tol);
                    report.verdict = Some(verdict);
                    report.relative_variation = Some(variation);
                    report.dynamics = dynamics;
                    report.tol_abs = Some(tol_abs);
                }
                Ok(_) => report.error = Some("series is not finite".into()),
                Err(e) => report.error = Some(e.to_string()),
            }
            report
        })
        .collect();
    OmenReport {
        game: traj.game.clone(),
        tol_rel: tol.tol_rel,
        candidates: reports,
    }
}

/// How often verdicts change when the scenario is nudged.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub runs: usize,
    pub delta: f64,
    pub seed: u64,
    /// The neighbourhood is a sup-norm ball on constant offsets to the pure
    /// controls; no finer topology on scenarios is attempted.
    pub topology: &'static str,
    /// Per candidate: share of perturbed runs whose verdict differs from the
    /// unperturbed one.
    pub flip_rate: Vec<(String, f64)>,
}

/// Re-runs the scan under `runs` scenarios, each shifting every pure-control
/// component by a seeded constant drawn uniformly from `[-delta, delta]`.
pub fn perturbation_stability(
    game: &GameDefinition,
    candidates: &[QuantityCandidate],
    tol: Tolerances,
    runs: usize,
    delta: f64,
    seed: u64,
) -> Result<StabilityReport, crate::engine::SimulationFailure> {
    let reference = scan_omens(candidates, &simulate(game)?, tol);
    let mut flips = vec![0usize; candidates.len()];
    let mut rng = SplitMix64::new(seed);
    for _ in 0..runs {
        let mut g = game.clone();
        for row in &mut g.scenario.uo {
            for e in row.iter_mut() {
                let shift = rng.uniform(-delta, delta);
                *e = Expr::binary(crate::expr::BinOp::Add, e.clone(), Expr::Num(shift));
            }
        }
        let report = scan_omens(candidates, &simulate(&g)?, tol);
        for (k, (a, b)) in reference
            .candidates
            .iter()
            .zip(&report.candidates)
            .enumerate()
        {
            if a.verdict != b.verdict {
                flips[k] += 1;
            }
        }
    }
    Ok(StabilityReport {
        runs,
        delta,
        seed,
        topology: "sup-norm on constant pure-control offsets",
        flip_rate: candidates
            .iter()
            .zip(flips)
            .map(|(q, f)| {
                (
                    q.name.clone(),
                    if runs == 0 {
                        0.0
                    } else {
                        f as f64 / runs as f64
                    },
                )
            })
            .collect(),
    })
}
