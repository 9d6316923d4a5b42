//! Short-term prediction by unraveling interactivity.
//!
//! An observer predicts the other players' controls with a simple predictor
//! and rolls the game forward as if it were an ordinary game (ε = 0). The
//! realized controls then differ from the Δt-old predictions; those
//! deviations are read as a feedback on the state, fitted by an affine model
//! `d = a + B phi`, and folded back into corrected predictions.
//!
//! [`strategic_analysis`] combines a long-term rollout of the associated
//! ordinary game with the corrected short-term segments.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{
    simulate, EngineError, PlayerVectors, ResolutionPlan, Sample, ScenarioDriver, StateVector,
    Trajectory,
};
use crate::model::{build_associated_game, GameDefinition, LawForm, ModelError};
use crate::rng::SplitMix64;

pub const DEFAULT_LAMBDA: f64 = 1e-8;
pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_LINEAR_WINDOW: usize = 10;
/// Default depth in grid steps.
pub const DEFAULT_DEPTH_STEPS: usize = 50;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("UNKNOWN_PREDICTOR: `{0}` (expected frozen, linear or replay)")]
    UnknownPredictor(String),
    #[error("INSUFFICIENT_HISTORY: {predictor} needs {needed} observed sample(s), {available} available")]
    InsufficientHistory {
        predictor: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("DEPTH_EXCEEDS_CAP: depth {depth} exceeds the admissible depth {cap}")]
    DepthExceedsCap { depth: f64, cap: f64 },
    #[error("BAD_DEPTH: depth {depth} is not a positive multiple of the step {step}")]
    BadDepth { depth: f64, step: f64 },
    #[error("BAD_CONFIG: {0}")]
    BadConfig(String),
    #[error("GAP_IN_LOG: no prediction anchored at t = {t}")]
    GapInLog { t: f64 },
    #[error(
        "INSUFFICIENT_SAMPLES: the fit needs {needed} deviation sample(s), {available} available"
    )]
    InsufficientSamples { needed: usize, available: usize },
    #[error("WINDOW_NOT_COVERED: trajectory does not cover ({t0}, {t0} + {depth}]")]
    WindowNotCovered { t0: f64, depth: f64 },
    #[error("PLAYER_MISMATCH: {0}")]
    PlayerMismatch(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl OracleError {
    pub fn is_insufficient_data(&self) -> bool {
        matches!(
            self,
            OracleError::InsufficientHistory { .. }
                | OracleError::InsufficientSamples { .. }
                | OracleError::WindowNotCovered { .. }
        )
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, OracleError::Engine(e) if e.is_numeric())
    }
}

/// How the observer predicts the other players' pure controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predictor {
    /// Hold the last observed control.
    Frozen,
    /// Extrapolate the least-squares line through the last `window` observations.
    Linear { window: usize },
    /// Read the declared scenario.
    Replay,
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Frozen => "frozen",
            Predictor::Linear { .. } => "linear",
            Predictor::Replay => "replay",
        }
    }

    fn min_history(&self) -> usize {
        match self {
            Predictor::Linear { .. } => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Predictor {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frozen" => Ok(Predictor::Frozen),
            "linear" => Ok(Predictor::Linear {
                window: DEFAULT_LINEAR_WINDOW,
            }),
            "replay" => Ok(Predictor::Replay),
            other => Err(OracleError::UnknownPredictor(other.to_string())),
        }
    }
}

/// Which state the deviations are paired with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// The realized state `phi(t)`.
    Realized,
    /// The state predicted Δt earlier.
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub predictor: Predictor,
    /// Δt; `None` means 50 grid steps.
    pub depth: Option<f64>,
    /// Admissible depth of short-term predictions. Required.
    pub depth_cap: f64,
    /// Fit window W in deviation samples.
    pub window: usize,
    pub lambda: f64,
    pub observer: usize,
    /// Also treat the observer's own controls as interactive.
    pub correct_observer: bool,
    pub pairing: Pairing,
}

impl OracleConfig {
    pub fn new(predictor: Predictor, depth_cap: f64) -> Self {
        OracleConfig {
            predictor,
            depth: None,
            depth_cap,
            window: DEFAULT_WINDOW,
            lambda: DEFAULT_LAMBDA,
            observer: 1,
            correct_observer: false,
            pairing: Pairing::Realized,
        }
    }

    pub fn with_depth(mut self, depth: f64) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }
}

/// A short-term prediction anchored at one grid point.
///
/// Construction enforces the depth cap, so every value of this type is
/// admissible.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    t0: f64,
    #[serde(skip)]
    anchor: usize,
    depth: f64,
    predictor: String,
    players: Vec<usize>,
    times: Vec<f64>,
    /// Per grid point, per predicted player.
    controls: Vec<PlayerVectors>,
    state_path: Vec<Vec<f64>>,
    #[serde(skip)]
    start_controls: PlayerVectors,
}

impl Prediction {
    /// Rejects depths above `cap` and ragged paths.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        anchor: usize,
        t0: f64,
        depth: f64,
        cap: f64,
        predictor: impl Into<String>,
        players: Vec<usize>,
        times: Vec<f64>,
        controls: Vec<PlayerVectors>,
        state_path: Vec<Vec<f64>>,
        start_controls: PlayerVectors,
    ) -> Result<Self, OracleError> {
        if depth > cap * (1.0 + 1e-12) {
            return Err(OracleError::DepthExceedsCap { depth, cap });
        }
        if times.len() != controls.len() || times.len() != state_path.len() {
            return Err(OracleError::BadConfig(
                "prediction paths have different lengths".into(),
            ));
        }
        if controls
            .iter()
            .chain(std::iter::once(&start_controls))
            .any(|c| c.len() != players.len())
        {
            return Err(OracleError::PlayerMismatch(
                "controls do not match the predicted players".into(),
            ));
        }
        Ok(Prediction {
            t0,
            anchor,
            depth,
            predictor: predictor.into(),
            players,
            times,
            controls,
            state_path,
            start_controls,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn anchor(&self) -> usize {
        self.anchor
    }
    pub fn depth(&self) -> f64 {
        self.depth
    }
    pub fn predictor(&self) -> &str {
        &self.predictor
    }
    /// Ids of the predicted players.
    pub fn players(&self) -> &[usize] {
        &self.players
    }
    /// Grid over `(t0, t0 + depth]`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn controls(&self) -> &[PlayerVectors] {
        &self.controls
    }
    pub fn state_path(&self) -> &[Vec<f64>] {
        &self.state_path
    }
    /// Predicted controls at `t0` itself.
    pub fn start_controls(&self) -> &PlayerVectors {
        &self.start_controls
    }
}

/// `d_i(t) = u_i(t) - u_pred_i(t)` for predictions made Δt before `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeviationSeries {
    pub players: Vec<usize>,
    pub pairing: Pairing,
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    /// The state each deviation is paired with.
    pub phi: Vec<Vec<f64>>,
    /// Per sample, per player.
    pub d: Vec<PlayerVectors>,
}

impl DeviationSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Keeps only the last `n` samples.
    pub fn tail(&self, n: usize) -> DeviationSeries {
        let from = self.len().saturating_sub(n);
        DeviationSeries {
            players: self.players.clone(),
            pairing: self.pairing,
            indices: self.indices[from..].to_vec(),
            times: self.times[from..].to_vec(),
            phi: self.phi[from..].to_vec(),
            d: self.d[from..].to_vec(),
        }
    }
}

/// Affine feedback `d = a + B phi` for one player.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlayerFit {
    pub player: usize,
    pub a: Vec<f64>,
    /// `control_dim x state_dim`.
    pub b: Vec<Vec<f64>>,
    pub residual_rms: f64,
}

impl PlayerFit {
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, row)| a + row.iter().zip(phi).map(|(b, x)| b * x).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeedbackFit {
    pub players: Vec<PlayerFit>,
    /// Samples actually used.
    pub window: usize,
    pub lambda: f64,
}

impl FeedbackFit {
    pub fn zero(players: &[usize], control_dims: &[usize], state_dim: usize) -> Self {
        FeedbackFit {
            players: players
                .iter()
                .zip(control_dims)
                .map(|(&player, &c)| PlayerFit {
                    player,
                    a: vec![0.0; c],
                    b: vec![vec![0.0; state_dim]; c],
                    residual_rms: 0.0,
                })
                .collect(),
            window: 0,
            lambda: 0.0,
        }
    }
}

/// Ridge least squares of `d` on `[1, phi]` over the last `window` samples.
pub fn fit_interactivity(
    dev: &DeviationSeries,
    window: usize,
    lambda: f64,
) -> Result<FeedbackFit, OracleError> {
    let data = dev.tail(window);
    let n = data.len();
    let dim = data.phi.first().map_or(0, Vec::len);
    let p = dim + 1;
    if n < p {
        return Err(OracleError::InsufficientSamples {
            needed: p,
            available: n,
        });
    }
    let x = DMatrix::from_fn(n, p, |r, c| if c == 0 { 1.0 } else { data.phi[r][c - 1] });
    let mut gram = x.transpose() * &x;
    for k in 0..p {
        gram[(k, k)] += lambda;
    }
    let chol = gram.clone().cholesky();
    let pinv = if chol.is_none() {
        Some(
            gram.clone()
                .pseudo_inverse(1e-14)
                .map_err(|e| OracleError::BadConfig(e.to_string()))?,
        )
    } else {
        None
    };
    let mut players = Vec::with_capacity(dev.players.len());
    for (idx, &player) in dev.players.iter().enumerate() {
        let c = data.d.first().map_or(0, |row| row[idx].len());
        let y = DMatrix::from_fn(n, c, |r, k| data.d[r][idx][k]);
        let rhs = x.transpose() * &y;
        let theta = match (&chol, &pinv) {
            (Some(ch), _) => ch.solve(&rhs),
            (None, Some(pi)) => pi * &rhs,
            (None, None) => unreachable!(),
        };
        let resid = &y - &x * &theta;
        let residual_rms = if n * c == 0 {
            0.0
        } else {
            (resid.iter().map(|e| e * e).sum::<f64>() / (n * c) as f64).sqrt()
        };
        players.push(PlayerFit {
            player,
            a: (0..c).map(|k| theta[(0, k)]).collect(),
            b: (0..c)
                .map(|k| (0..dim).map(|j| theta[(j + 1, k)]).collect())
                .collect(),
            residual_rms,
        });
    }
    Ok(FeedbackFit {
        players,
        window: n,
        lambda,
    })
}

/// The controls a player is seen to apply: realized `u` under a feedback law,
/// the pure control otherwise.
fn observed(traj_layout_u: &[usize], s: &Sample, player: usize) -> Vec<f64> {
    if traj_layout_u[player - 1] > 0 {
        s.u[player - 1].clone()
    } else {
        s.uo[player - 1].clone()
    }
}

/// Runs the prediction and correction loop for one game: predicts, tracks deviations, fits and corrects.
pub struct Oracle<'g> {
    game: &'g GameDefinition,
    config: OracleConfig,
    plan: ResolutionPlan<'g>,
    steps: usize,
    depth: f64,
    targets: Vec<usize>,
}

/// One control to apply during a rollout.
struct TargetControl {
    uo: Vec<f64>,
    /// Overrides the law's realized control.
    realized: Option<Vec<f64>>,
}

impl<'g> Oracle<'g> {
    pub fn new(game: &'g GameDefinition, config: OracleConfig) -> Result<Self, OracleError> {
        let h = game.horizon.step;
        let depth = config.depth.unwrap_or(DEFAULT_DEPTH_STEPS as f64 * h);
        if !(config.depth_cap > 0.0) {
            return Err(OracleError::BadConfig("depth cap must be positive".into()));
        }
        if depth > config.depth_cap * (1.0 + 1e-12) {
            return Err(OracleError::DepthExceedsCap {
                depth,
                cap: config.depth_cap,
            });
        }
        let steps = (depth / h).round();
        if !(steps >= 1.0) || (steps * h - depth).abs() > 1e-9 * depth.max(1.0) {
            return Err(OracleError::BadDepth { depth, step: h });
        }
        if game.player(config.observer).is_none() {
            return Err(OracleError::BadConfig(format!(
                "observer {} is not a player",
                config.observer
            )));
        }
        if !(config.lambda >= 0.0) || config.window == 0 {
            return Err(OracleError::BadConfig(
                "lambda must be >= 0 and the window positive".into(),
            ));
        }
        if let Predictor::Linear { window } = config.predictor {
            if window < 2 {
                return Err(OracleError::BadConfig(
                    "the linear predictor needs a window of at least 2".into(),
                ));
            }
        }
        let targets = game
            .players
            .iter()
            .map(|p| p.id)
            .filter(|&id| id != config.observer || config.correct_observer)
            .collect();
        Ok(Oracle {
            game,
            plan: ResolutionPlan::new(game)?,
            config,
            steps: steps as usize,
            depth,
            targets,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// Δt in grid steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    /// Players whose controls are predicted and corrected.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// First anchor the predictor can serve.
    pub fn first_anchor(&self) -> usize {
        self.config.predictor.min_history() - 1
    }

    /// Baseline prediction from the history up to and including `anchor`.
    ///
    /// Samples after `anchor` are never read, so a full run may be passed.
    pub fn predict_baseline(
        &self,
        history: &Trajectory,
        anchor: usize,
    ) -> Result<Prediction, OracleError> {
        let predictor = self.config.predictor;
        let available = history.len().min(anchor + 1);
        if history.len() <= anchor || available < predictor.min_history() {
            return Err(OracleError::InsufficientHistory {
                predictor: predictor.name(),
                needed: predictor.min_history().max(anchor + 1),
                available: history.len(),
            });
        }
        let layout_u = &history.layout.u_dims;
        let scen = ScenarioDriver::new(self.game);
        let last = &history.samples[anchor];
        // Least-squares lines (centered) per predicted player.
        let lines: Vec<Option<(f64, Vec<f64>, Vec<f64>)>> = self
            .targets
            .iter()
            .map(|&p| match predictor {
                Predictor::Linear { window } if p != self.config.observer => {
                    let from = (anchor + 1).saturating_sub(window);
                    let pts = &history.samples[from..=anchor];
                    let n = pts.len() as f64;
                    let tbar = pts.iter().map(|s| s.t).sum::<f64>() / n;
                    let stt: f64 = pts.iter().map(|s| (s.t - tbar).powi(2)).sum();
                    let c = observed(layout_u, last, p).len();
                    let mut mean = vec![0.0; c];
                    let mut slope = vec![0.0; c];
                    for j in 0..c {
                        mean[j] = pts.iter().map(|s| observed(layout_u, s, p)[j]).sum::<f64>() / n;
                        slope[j] = pts
                            .iter()
                            .map(|s| (s.t - tbar) * (observed(layout_u, s, p)[j] - mean[j]))
                            .sum::<f64>()
                            / stt;
                    }
                    Some((tbar, mean, slope))
                }
                _ => None,
            })
            .collect();
        let control = |t: f64| -> Result<PlayerVectors, OracleError> {
            let scenario = scen.pure_controls(t)?;
            Ok(self
                .targets
                .iter()
                .zip(&lines)
                .map(|(&p, line)| {
                    if p == self.config.observer {
                        return scenario[p - 1].clone();
                    }
                    match (predictor, line) {
                        (Predictor::Frozen, _) => observed(layout_u, last, p),
                        (Predictor::Replay, _) => scenario[p - 1].clone(),
                        (Predictor::Linear { .. }, Some((tbar, mean, slope))) => mean
                            .iter()
                            .zip(slope)
                            .map(|(m, s)| m + s * (t - tbar))
                            .collect(),
                        (Predictor::Linear { .. }, None) => {
                            unreachable!("line computed for every predicted player")
                        }
                    }
                })
                .collect())
        };
        self.roll(history, anchor, predictor.name().to_string(), |_, t, _| {
            Ok(control(t)?
                .into_iter()
                .map(|uo| TargetControl { uo, realized: None })
                .collect())
        })
    }

    /// Baseline shifted by the fitted feedback on the jointly integrated state.
    pub fn predict_corrected(
        &self,
        history: &Trajectory,
        baseline: &Prediction,
        fit: &FeedbackFit,
    ) -> Result<Prediction, OracleError> {
        let fit_players: Vec<usize> = fit.players.iter().map(|f| f.player).collect();
        if fit_players != baseline.players {
            return Err(OracleError::PlayerMismatch(format!(
                "fit covers players {fit_players:?}, prediction covers {:?}",
                baseline.players
            )));
        }
        let name = format!("{}+corrected", baseline.predictor);
        self.roll(history, baseline.anchor, name, |j, _, phi| {
            let base = if j == 0 {
                &baseline.start_controls
            } else {
                &baseline.controls[j - 1]
            };
            Ok(base
                .iter()
                .zip(&fit.players)
                .map(|(uo, f)| {
                    let hat: Vec<f64> = uo.iter().zip(f.apply(phi)).map(|(u, d)| u + d).collect();
                    if self.has_law(f.player) {
                        TargetControl {
                            uo: uo.clone(),
                            realized: Some(hat),
                        }
                    } else {
                        TargetControl {
                            uo: hat,
                            realized: None,
                        }
                    }
                })
                .collect())
        })
    }

    fn has_law(&self, player: usize) -> bool {
        self.game
            .player(player)
            .is_some_and(|p| p.feedback.is_some())
    }

    /// Rolls forward `steps` steps from the observed state at `anchor` with ε = 0.
    fn roll(
        &self,
        history: &Trajectory,
        anchor: usize,
        predictor: String,
        mut controls: impl FnMut(usize, f64, &[f64]) -> Result<Vec<TargetControl>, OracleError>,
    ) -> Result<Prediction, OracleError> {
        let g = self.game;
        let h = g.horizon.step;
        let start = &history.samples[anchor];
        let mut state = StateVector {
            t: g.horizon.time(anchor),
            values: start.phi.clone(),
        };
        let mut dphi: Vec<f64> = match anchor.checked_sub(1).and_then(|k| history.samples.get(k)) {
            Some(prev) => start
                .phi
                .iter()
                .zip(&prev.phi)
                .map(|(a, b)| (a - b) / h)
                .collect(),
            None => vec![0.0; g.state_dim],
        };
        let zero_eps: PlayerVectors = g.players.iter().map(|p| vec![0.0; p.eps_dim]).collect();
        let scen = ScenarioDriver::new(g);
        let mut guess: Option<PlayerVectors> = None;
        let mut times = Vec::with_capacity(self.steps);
        let mut recorded = Vec::with_capacity(self.steps);
        let mut path = Vec::with_capacity(self.steps);
        let mut start_controls = Vec::new();
        for j in 0..=self.steps {
            let t = g.horizon.time(anchor + j);
            state.t = t;
            let wanted = controls(j, t, &state.values)?;
            let mut uo = scen.pure_controls(t)?;
            for (&p, c) in self.targets.iter().zip(&wanted) {
                uo[p - 1].clone_from(&c.uo);
            }
            let mut res = self
                .plan
                .resolve(&state, &uo, &zero_eps, &dphi, guess.as_deref())?;
            for (&p, c) in self.targets.iter().zip(&wanted) {
                if let Some(u) = &c.realized {
                    res.u[p - 1].clone_from(u);
                }
            }
            let row: PlayerVectors = wanted
                .into_iter()
                .map(|c| c.realized.unwrap_or(c.uo))
                .collect();
            if j == 0 {
                start_controls = row;
            } else {
                times.push(t);
                recorded.push(row);
                path.push(state.values.clone());
            }
            if j < self.steps {
                let next = self.plan.advance(&state, &res)?;
                dphi = next
                    .values
                    .iter()
                    .zip(&state.values)
                    .map(|(a, b)| (a - b) / h)
                    .collect();
                state = next;
                guess = Some(res.u);
            }
        }
        Prediction::new(
            anchor,
            start.t,
            self.depth,
            self.config.depth_cap,
            predictor,
            self.targets.clone(),
            times,
            recorded,
            path,
            start_controls,
        )
    }

    /// The deviation at grid index `k` against the prediction anchored Δt earlier.
    fn deviation_at(
        &self,
        prediction: &Prediction,
        traj: &Trajectory,
        k: usize,
    ) -> (Vec<f64>, PlayerVectors) {
        let s = &traj.samples[k];
        let last = self.steps - 1;
        let phi = match self.config.pairing {
            Pairing::Realized => s.phi.clone(),
            Pairing::Predicted => prediction.state_path[last].clone(),
        };
        let d = self
            .targets
            .iter()
            .zip(&prediction.controls[last])
            .map(|(&p, pred)| {
                observed(&traj.layout.u_dims, s, p)
                    .iter()
                    .zip(pred)
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect();
        (phi, d)
    }

    /// Deviations at every grid point up to `upto` that has a Δt-old prediction in `log`.
    ///
    /// The log must hold one prediction per anchor, contiguous from its first
    /// anchor on.
    pub fn deviation_series(
        &self,
        log: &[Prediction],
        traj: &Trajectory,
        upto: usize,
    ) -> Result<DeviationSeries, OracleError> {
        let mut series = DeviationSeries {
            players: self.targets.clone(),
            pairing: self.config.pairing,
            indices: Vec::new(),
            times: Vec::new(),
            phi: Vec::new(),
            d: Vec::new(),
        };
        let Some(first) = log.first().map(|p| p.anchor) else {
            return Ok(series);
        };
        let upto = upto.min(traj.len().saturating_sub(1));
        for k in (first + self.steps)..=upto {
            let anchor = k - self.steps;
            let Some(p) = log.get(anchor - first).filter(|p| p.anchor == anchor) else {
                return Err(OracleError::GapInLog {
                    t: self.game.horizon.time(anchor),
                });
            };
            let (phi, d) = self.deviation_at(p, traj, k);
            series.indices.push(k);
            series.times.push(traj.samples[k].t);
            series.phi.push(phi);
            series.d.push(d);
        }
        Ok(series)
    }

    /// The full anchor loop over an observed run.
    ///
    /// Every grid point whose window `(t0, t0 + Δt]` lies inside the run is an
    /// anchor. Corrections start once `window` deviations have accumulated;
    /// summary metrics cover those anchors only.
    pub fn run(&self, traj: &Trajectory) -> Result<UnravelingReport, OracleError> {
        let m = self.steps;
        let first = self.first_anchor();
        let n = traj.len();
        if n < first + m + 1 {
            return Err(OracleError::InsufficientHistory {
                predictor: self.config.predictor.name(),
                needed: first + m + 1,
                available: n,
            });
        }
        let last_anchor = n - 1 - m;
        let warm_up = first + m + self.config.window - 1;
        if warm_up > last_anchor {
            return Err(OracleError::InsufficientSamples {
                needed: self.config.window,
                available: (last_anchor + 1).saturating_sub(first + m),
            });
        }
        let mut log: Vec<Prediction> = Vec::with_capacity(last_anchor + 1 - first);
        let mut series = DeviationSeries {
            players: self.targets.clone(),
            pairing: self.config.pairing,
            indices: Vec::new(),
            times: Vec::new(),
            phi: Vec::new(),
            d: Vec::new(),
        };
        let mut anchors = Vec::new();
        let mut corrected_log = Vec::new();
        for k0 in first..=last_anchor {
            if k0 >= first + m {
                let (phi, d) = self.deviation_at(&log[k0 - m - first], traj, k0);
                series.indices.push(k0);
                series.times.push(traj.samples[k0].t);
                series.phi.push(phi);
                series.d.push(d);
            }
            let baseline = self.predict_baseline(traj, k0)?;
            let base_metrics = evaluate_prediction(&baseline, traj)?;
            let mut record = AnchorRecord {
                t0: baseline.t0,
                baseline: base_metrics,
                corrected: None,
                fit: None,
            };
            if k0 >= warm_up {
                let fit = fit_interactivity(&series, self.config.window, self.config.lambda)?;
                let corrected = self.predict_corrected(traj, &baseline, &fit)?;
                record.corrected = Some(evaluate_prediction(&corrected, traj)?);
                record.fit = Some(fit);
                corrected_log.push(corrected);
            }
            anchors.push(record);
            log.push(baseline);
        }
        let scored: Vec<&AnchorRecord> = anchors.iter().filter(|a| a.corrected.is_some()).collect();
        let baseline = MetricsSummary::pool(scored.iter().map(|a| &a.baseline));
        let corrected = MetricsSummary::pool(scored.iter().filter_map(|a| a.corrected.as_ref()));
        let improved = scored
            .iter()
            .filter(|a| {
                a.corrected
                    .as_ref()
                    .is_some_and(|c| c.state_rmse < a.baseline.state_rmse)
            })
            .count();
        Ok(UnravelingReport {
            predictor: self.config.predictor.name().to_string(),
            depth: self.depth,
            window: self.config.window,
            lambda: self.config.lambda,
            observer: self.config.observer,
            warm_up_anchors: warm_up - first,
            improved_fraction: improved as f64 / scored.len() as f64,
            baseline,
            corrected,
            per_anchor: anchors,
            log,
            corrected_log,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlError {
    pub player: usize,
    pub rmse: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionMetrics {
    pub state_rmse: f64,
    pub state_max_abs: f64,
    pub controls: Vec<ControlError>,
}

fn rms_max(errors: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut sum, mut n, mut max) = (0.0, 0usize, 0.0f64);
    for e in errors {
        sum += e * e;
        n += 1;
        max = max.max(e.abs());
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        ((sum / n as f64).sqrt(), max)
    }
}

/// Errors of a prediction against the realized run over its window.
pub fn evaluate_prediction(
    p: &Prediction,
    traj: &Trajectory,
) -> Result<PredictionMetrics, OracleError> {
    let not_covered = || OracleError::WindowNotCovered {
        t0: p.t0,
        depth: p.depth,
    };
    let window = traj
        .samples
        .get(p.anchor + 1..p.anchor + 1 + p.times.len())
        .ok_or_else(not_covered)?;
    let tol = 1e-9 * traj.step;
    if window
        .iter()
        .zip(&p.times)
        .any(|(s, t)| (s.t - t).abs() > tol)
    {
        return Err(not_covered());
    }
    let (state_rmse, state_max_abs) = rms_max(
        window
            .iter()
            .zip(&p.state_path)
            .flat_map(|(s, x)| s.phi.iter().zip(x).map(|(a, b)| a - b)),
    );
    let controls = p
        .players
        .iter()
        .enumerate()
        .map(|(idx, &player)| {
            let (rmse, max_abs) = rms_max(window.iter().zip(&p.controls).flat_map(|(s, c)| {
                observed(&traj.layout.u_dims, s, player)
                    .into_iter()
                    .zip(c[idx].clone())
                    .map(|(a, b)| a - b)
            }));
            ControlError {
                player,
                rmse,
                max_abs,
            }
        })
        .collect();
    Ok(PredictionMetrics {
        state_rmse,
        state_max_abs,
        controls,
    })
}

/// Aggregate over anchors: pooled RMSE and overall max.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub anchors: usize,
    pub state_rmse: f64,
    pub state_max_abs: f64,
    pub controls: Vec<ControlError>,
}

impl MetricsSummary {
    fn pool<'a>(metrics: impl Iterator<Item = &'a PredictionMetrics>) -> Self {
        let all: Vec<&PredictionMetrics> = metrics.collect();
        let n = all.len().max(1) as f64;
        let pooled = |f: &dyn Fn(&PredictionMetrics) -> f64| {
            (all.iter().map(|m| f(m).powi(2)).sum::<f64>() / n).sqrt()
        };
        let worst =
            |f: &dyn Fn(&PredictionMetrics) -> f64| all.iter().map(|m| f(m)).fold(0.0f64, f64::max);
        let players = all.first().map(|m| m.controls.len()).unwrap_or(0);
        MetricsSummary {
            anchors: all.len(),
            state_rmse: pooled(&|m| m.state_rmse),
            state_max_abs: worst(&|m| m.state_max_abs),
            controls: (0..players)
                .map(|k| ControlError {
                    player: all[0].controls[k].player,
                    rmse: pooled(&|m| m.controls[k].rmse),
                    max_abs: worst(&|m| m.controls[k].max_abs),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnchorRecord {
    pub t0: f64,
    pub baseline: PredictionMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrected: Option<PredictionMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FeedbackFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnravelingReport {
    pub predictor: String,
    pub depth: f64,
    pub window: usize,
    pub lambda: f64,
    pub observer: usize,
    /// Anchors served before the fit window filled.
    pub warm_up_anchors: usize,
    /// Share of scored anchors where the corrected state RMSE is strictly lower.
    pub improved_fraction: f64,
    pub baseline: MetricsSummary,
    pub corrected: MetricsSummary,
    pub per_anchor: Vec<AnchorRecord>,
    #[serde(skip)]
    pub log: Vec<Prediction>,
    #[serde(skip)]
    pub corrected_log: Vec<Prediction>,
}

impl UnravelingReport {
    /// Baseline predictions as JSON lines, one per anchor.
    pub fn write_log<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_jsonl(self.log.iter(), out)
    }

    pub fn write_metrics<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)
    }
}

pub fn write_jsonl<'a, W: Write>(
    predictions: impl Iterator<Item = &'a Prediction>,
    mut out: W,
) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Largest gap between realized and scenario controls, in the max norm.
///
/// Zero means the run performed its scenario exactly.
pub fn tactical_divergence(game: &GameDefinition, traj: &Trajectory) -> Result<f64, OracleError> {
    let scen = ScenarioDriver::new(game);
    let mut worst = 0.0f64;
    for s in &traj.samples {
        let uo = scen.pure_controls(s.t)?;
        for p in &game.players {
            let realized = observed(&traj.layout.u_dims, s, p.id);
            for (a, b) in realized.iter().zip(&uo[p.id - 1]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Adds seeded uniform noise of amplitude `amplitude` to every observed control.
pub fn with_observation_noise(traj: &Trajectory, amplitude: f64, seed: u64) -> Trajectory {
    let mut out = traj.clone();
    if amplitude == 0.0 {
        return out;
    }
    let mut rng = SplitMix64::new(seed);
    for s in &mut out.samples {
        for (k, row) in s.u.iter_mut().enumerate() {
            if traj.layout.u_dims[k] > 0 {
                row.iter_mut()
                    .for_each(|x| *x += rng.uniform(-amplitude, amplitude));
            }
        }
    }
    out
}

/// Controls of the virtual ε-players in the long-term rollout.
#[derive(Clone, Debug, PartialEq)]
pub enum VirtualPolicy {
    /// ε-slots held at zero: the ordinary-game view.
    Zero,
    /// Constant ε per original player.
    Constant(PlayerVectors),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StrategicConfig {
    pub oracle: OracleConfig,
    pub virtual_policy: VirtualPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatePath {
    pub t: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub corrected: bool,
    pub prediction: Prediction,
}

/// Local comparison of both layers against the realized run on one window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowComparison {
    pub t0: f64,
    pub long_term_rmse: f64,
    pub segment_rmse: f64,
    /// RMSE between the segment and the long-term path.
    pub disagreement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prognosis {
    pub game: String,
    pub depth: f64,
    pub rule: &'static str,
    /// Rollout of the associated ordinary game.
    pub long_term: StatePath,
    /// The observed run the short-term layer was built on.
    pub realized: StatePath,
    pub segments: Vec<Segment>,
    pub windows: Vec<WindowComparison>,
}

pub const COMBINATION_RULE: &str =
    "inside (t0, t0 + depth] the short-term segment anchored at t0 overrides the long-term path";

impl Prognosis {
    /// The long-term path with the window after `segment` replaced by that segment.
    pub fn combined(&self, segment: usize) -> Vec<Vec<f64>> {
        let mut phi = self.long_term.phi.clone();
        let p = &self.segments[segment].prediction;
        for (j, x) in p.state_path().iter().enumerate() {
            if let Some(slot) = phi.get_mut(p.anchor() + 1 + j) {
                slot.clone_from(x);
            }
        }
        phi
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)
    }
}

fn path_of(traj: &Trajectory) -> StatePath {
    StatePath {
        t: traj.times(),
        phi: traj.samples.iter().map(|s| s.phi.clone()).collect(),
    }
}

fn path_rmse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    rms_max(
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q)),
    )
    .0
}

/// Long-term prediction in the associated ordinary game combined with
/// corrected short-term predictions in the interactive game.
///
/// The interactive game is played under its scenario and ground-truth ε to
/// produce the run the observer sees.
pub fn strategic_analysis(
    game: &GameDefinition,
    config: &StrategicConfig,
) -> Result<Prognosis, OracleError> {
    for p in &game.players {
        if let Some(law) = &p.feedback {
            if law.form != LawForm::Direct || law.max_derivative_order != 0 {
                return Err(ModelError::NotDirect {
                    player: p.id,
                    form: law.form,
                }
                .into());
            }
        }
    }
    let oracle = Oracle::new(game, config.oracle.clone())?;
    let assoc = build_associated_game(game)?;
    let long_term = match &config.virtual_policy {
        VirtualPolicy::Zero => simulate(&assoc.game),
        VirtualPolicy::Constant(eps) => {
            let scen = ScenarioDriver::new(game);
            let slots: PlayerVectors = assoc.game.players.iter().map(|_| Vec::new()).collect();
            let driver = |_k: usize,
                          t: f64,
                          _phi: &[f64]|
             -> Result<(PlayerVectors, PlayerVectors), EngineError> {
                let uo = scen.pure_controls(t)?;
                Ok((assoc.pack_controls(&uo, eps), slots.clone()))
            };
            crate::engine::simulate_with(&assoc.game, &driver)
        }
    }
    .map_err(|f| f.error)?;
    let realized = simulate(game).map_err(|f| f.error)?;
    let report = oracle.run(&realized)?;

    let mut corrected = report.corrected_log.into_iter().peekable();
    let mut segments = Vec::with_capacity(report.log.len());
    let mut windows = Vec::with_capacity(report.log.len());
    for baseline in report.log {
        let segment = match corrected.peek() {
            Some(c) if c.anchor == baseline.anchor => Segment {
                corrected: true,
                prediction: corrected.next().expect("peeked"),
            },
            _ => Segment {
                corrected: false,
                prediction: baseline,
            },
        };
        let p = &segment.prediction;
        let range = p.anchor + 1..p.anchor + 1 + p.times.len();
        let truth: Vec<Vec<f64>> = realized.samples[range.clone()]
            .iter()
            .map(|s| s.phi.clone())
            .collect();
        let lt: Vec<Vec<f64>> = long_term.samples[range]
            .iter()
            .map(|s| s.phi.clone())
            .collect();
        windows.push(WindowComparison {
            t0: p.t0,
            long_term_rmse: path_rmse(&lt, &truth),
            segment_rmse: path_rmse(&p.state_path, &truth),
            disagreement: path_rmse(&p.state_path, &lt),
        });
        segments.push(segment);
    }
    Ok(Prognosis {
        game: game.name.clone(),
        depth: oracle.depth(),
        rule: COMBINATION_RULE,
        long_term: path_of(&long_term),
        realized: path_of(&realized),
        segments,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_game;

    fn lin1() -> GameDefinition {
        load_game(include_str!("../games/lin1.json")).unwrap()
    }

    fn neutral() -> GameDefinition {
        load_game(include_str!("../games/lin1_neutral.json")).unwrap()
    }

    fn series(phi: &[f64], d: impl Fn(f64) -> f64) -> DeviationSeries {
        DeviationSeries {
            players: vec![2],
            pairing: Pairing::Realized,
            indices: (0..phi.len()).collect(),
            times: (0..phi.len()).map(|k| k as f64).collect(),
            phi: phi.iter().map(|&x| vec![x]).collect(),
            d: phi.iter().map(|&x| vec![vec![d(x)]]).collect(),
        }
    }

    #[test]
    fn predictor_names() {
        assert_eq!("frozen".parse::<Predictor>().unwrap(), Predictor::Frozen);
        assert_eq!("replay".parse::<Predictor>().unwrap().name(), "replay");
        assert!(matches!(
            "oracle".parse::<Predictor>(),
            Err(OracleError::UnknownPredictor(_))
        ));
    }

    #[test]
    fn frozen_holds_the_last_observation() {
        let g = neutral();
        let traj = simulate(&g).unwrap();
        let oracle = Oracle::new(&g, OracleConfig::new(Predictor::Frozen, 1.0)).unwrap();
        let p = oracle.predict_baseline(&traj, 10).unwrap();
        assert_eq!(p.times().len(), 50);
        assert!(p.controls().iter().all(|c| c == &vec![vec![-0.5]]));
        assert!((p.times()[0] - 0.11).abs() < 1e-12);
    }

    #[test]
    fn linear_extrapolates_an_exact_line() {
        let mut g = neutral();
        g.scenario.uo[1][0] = crate::expr::parse("t").unwrap();
        let traj = simulate(&g).unwrap();
        let mut config = OracleConfig::new(Predictor::Linear { window: 10 }, 1.0);
        config.depth = Some(0.2);
        let oracle = Oracle::new(&g, config).unwrap();
        let p = oracle.predict_baseline(&traj, 40).unwrap();
        for (t, c) in p.times().iter().zip(p.controls()) {
            assert!((c[0][0] - t).abs() < 1e-9);
        }
        assert!(matches!(
            oracle.predict_baseline(&traj, 0),
            Err(OracleError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn replay_reads_the_scenario() {
        let g = lin1();
        let traj = simulate(&g).unwrap();
        let mut config = OracleConfig::new(Predictor::Replay, 1.0);
        config.correct_observer = true;
        let oracle = Oracle::new(&g, config).unwrap();
        let p = oracle.predict_baseline(&traj, 5).unwrap();
        assert_eq!(p.players(), &[1, 2]);
        assert!(p
            .controls()
            .iter()
            .all(|c| c == &vec![vec![1.0], vec![-0.5]]));
    }

    #[test]
    fn depth_cap_is_enforced_at_construction() {
        let err = Prediction::new(
            0,
            0.0,
            0.6,
            0.5,
            "frozen",
            vec![],
            vec![],
            vec![],
            vec![],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, OracleError::DepthExceedsCap { .. }));
        let g = lin1();
        let config = OracleConfig::new(Predictor::Frozen, 0.5).with_depth(0.6);
        assert!(matches!(
            Oracle::new(&g, config),
            Err(OracleError::DepthExceedsCap { .. })
        ));
        let config = OracleConfig::new(Predictor::Frozen, 0.5).with_depth(0.015);
        assert!(matches!(
            Oracle::new(&g, config),
            Err(OracleError::BadDepth { .. })
        ));
    }

    #[test]
    fn exact_affine_data_is_interpolated() {
        let phi: Vec<f64> = (0..20).map(|k| 0.1 * k as f64).collect();
        let fit = fit_interactivity(&series(&phi, |x| 0.3 * x), 100, DEFAULT_LAMBDA).unwrap();
        let f = &fit.players[0];
        assert!(f.a[0].abs() < 1e-7);
        assert!((f.b[0][0] - 0.3).abs() < 1e-7);
        assert!(f.residual_rms < 1e-7);
        assert_eq!(fit.window, 20);
    }

    #[test]
    fn degenerate_design_gives_minimum_norm() {
        let fit = fit_interactivity(&series(&[2.0; 10], |_| 0.6), 100, DEFAULT_LAMBDA).unwrap();
        let f = &fit.players[0];
        assert!((f.a[0] - 0.12).abs() < 1e-6);
        assert!((f.b[0][0] - 0.24).abs() < 1e-6);
        assert!(f.residual_rms.is_finite());
    }

    #[test]
    fn too_few_samples() {
        let err = fit_interactivity(&series(&[1.0], |x| x), 100, DEFAULT_LAMBDA).unwrap_err();
        assert!(matches!(
            err,
            OracleError::InsufficientSamples {
                needed: 2,
                available: 1
            }
        ));
    }

    #[test]
    fn zero_fit_reproduces_the_baseline() {
        let g = lin1();
        let traj = simulate(&g).unwrap();
        let oracle = Oracle::new(&g, OracleConfig::new(Predictor::Frozen, 1.0)).unwrap();
        let base = oracle.predict_baseline(&traj, 100).unwrap();
        let fit = FeedbackFit::zero(&[2], &[1], 1);
        let corr = oracle.predict_corrected(&traj, &base, &fit).unwrap();
        assert_eq!(corr.state_path(), base.state_path());
        assert_eq!(corr.controls(), base.controls());
    }

    #[test]
    fn deviation_series_needs_a_contiguous_log() {
        let g = lin1();
        let traj = simulate(&g).unwrap();
        let oracle = Oracle::new(
            &g,
            OracleConfig::new(Predictor::Frozen, 1.0).with_depth(0.05),
        )
        .unwrap();
        let mut log: Vec<Prediction> = (0..20)
            .map(|k| oracle.predict_baseline(&traj, k).unwrap())
            .collect();
        let dev = oracle.deviation_series(&log, &traj, 24).unwrap();
        assert_eq!(dev.indices, (5..=24).collect::<Vec<_>>());
        // Frozen at anchor k predicts u2(t_k); the deviation is 0.1 (phi(t) - phi(t - dt)).
        for (k, d) in dev.indices.iter().zip(&dev.d) {
            let expect = 0.1 * traj.samples[*k].phi[0] - 0.1 * traj.samples[k - 5].phi[0];
            assert!((d[0][0] - expect).abs() < 1e-15);
        }
        log.remove(7);
        assert!(matches!(
            oracle.deviation_series(&log, &traj, 24),
            Err(OracleError::GapInLog { .. })
        ));
    }

    #[test]
    fn perfect_prediction_has_zero_deviation() {
        let g = neutral();
        let traj = simulate(&g).unwrap();
        let oracle = Oracle::new(&g, OracleConfig::new(Predictor::Replay, 1.0)).unwrap();
        let log: Vec<Prediction> = (0..100)
            .map(|k| oracle.predict_baseline(&traj, k).unwrap())
            .collect();
        let dev = oracle.deviation_series(&log, &traj, 120).unwrap();
        assert!(dev.d.iter().flatten().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn metrics_of_an_exact_and_an_offset_prediction() {
        let g = neutral();
        let traj = simulate(&g).unwrap();
        let oracle = Oracle::new(&g, OracleConfig::new(Predictor::Replay, 1.0)).unwrap();
        let p = oracle.predict_baseline(&traj, 3).unwrap();
        let m = evaluate_prediction(&p, &traj).unwrap();
        assert_eq!(
            (m.state_rmse, m.state_max_abs, m.controls[0].rmse),
            (0.0, 0.0, 0.0)
        );
        let shifted: Vec<PlayerVectors> = p
            .controls()
            .iter()
            .map(|c| vec![vec![c[0][0] + 0.25]])
            .collect();
        let q = Prediction::new(
            3,
            p.t0(),
            p.depth(),
            1.0,
            "x",
            vec![2],
            p.times().to_vec(),
            shifted,
            p.state_path().to_vec(),
            vec![vec![0.0]],
        )
        .unwrap();
        let m = evaluate_prediction(&q, &traj).unwrap();
        assert!(
            (m.controls[0].rmse - 0.25).abs() < 1e-12
                && (m.controls[0].max_abs - 0.25).abs() < 1e-12
        );
        let late = oracle.predict_baseline(&traj, 990).unwrap();
        assert!(matches!(
            evaluate_prediction(&late, &traj),
            Err(OracleError::WindowNotCovered { .. })
        ));
    }

    #[test]
    fn tactical_divergence_on_lin1() {
        let g = lin1();
        let traj = simulate(&g).unwrap();
        let expect = traj
            .samples
            .iter()
            .map(|s| (0.2 * s.phi[0]).abs().max((0.1 * s.phi[0]).abs()))
            .fold(0.0, f64::max);
        assert!((tactical_divergence(&g, &traj).unwrap() - expect).abs() < 1e-12);
        let g0 = neutral();
        assert_eq!(
            tactical_divergence(&g0, &simulate(&g0).unwrap()).unwrap(),
            0.0
        );
        assert_eq!(
            tactical_divergence(&g, &Trajectory::empty(&g, true)).unwrap(),
            0.0
        );
    }

    #[test]
    fn noise_is_seeded() {
        let g = lin1();
        let traj = simulate(&g).unwrap().truncated(50);
        let a = with_observation_noise(&traj, 1e-3, 7);
        assert_eq!(a, with_observation_noise(&traj, 1e-3, 7));
        assert_ne!(a, with_observation_noise(&traj, 1e-3, 8));
        assert_eq!(a.samples[3].uo, traj.samples[3].uo);
    }

    #[test]
    fn loop_improves_on_lin1() {
        let g = lin1();
        let traj = simulate(&g).unwrap();
        let oracle = Oracle::new(
            &g,
            OracleConfig::new(Predictor::Frozen, 1.0).with_depth(0.5),
        )
        .unwrap();
        let report = oracle.run(&traj).unwrap();
        assert_eq!(report.per_anchor.len(), 951);
        assert_eq!(report.warm_up_anchors, 249);
        assert!(report.corrected.state_rmse < report.baseline.state_rmse);
        assert!(
            report.improved_fraction >= 0.95,
            "{}",
            report.improved_fraction
        );
    }

    #[test]
    fn strategic_pipeline_degenerates_to_simulation() {
        let g = neutral();
        let plain = simulate(&g).unwrap();
        let config = StrategicConfig {
            oracle: OracleConfig::new(Predictor::Replay, 1.0).with_depth(0.5),
            virtual_policy: VirtualPolicy::Zero,
        };
        let prog = strategic_analysis(&g, &config).unwrap();
        for (a, s) in prog.long_term.phi.iter().zip(&plain.samples) {
            assert!((a[0] - s.phi[0]).abs() <= 1e-12);
        }
        assert!(prog.segments.iter().any(|s| s.corrected));
        for seg in &prog.segments {
            let p = &seg.prediction;
            for (j, x) in p.state_path().iter().enumerate() {
                assert!((x[0] - plain.samples[p.anchor() + 1 + j].phi[0]).abs() <= 1e-12);
            }
        }
    }
}
