//! Game definitions: loading, validation and the associated ordinary game.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, ParseError, Var};

/// How a player's realized control relates to its pure control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawForm {
    /// `u[i][j] = expr(uo, phi, dphi, eps, t)`
    Direct,
    /// `uo[i][j] = expr(u, phi, dphi, eps, t)`
    Inverse,
    /// `expr(u, uo, phi, dphi, eps, t) = 0`
    Implicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackLaw {
    pub form: LawForm,
    pub exprs: Vec<Expr>,
    /// 0 or 1: whether `dphi[..]` may appear.
    pub max_derivative_order: u8,
    /// Coefficient that must stay away from zero for the law to be defined.
    /// Set by derivative exclusion when the law came out of a symbolic solve.
    pub guard: Option<Expr>,
}

impl FeedbackLaw {
    pub fn direct(exprs: Vec<Expr>) -> Self {
        FeedbackLaw {
            form: LawForm::Direct,
            exprs,
            max_derivative_order: 0,
            guard: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlayerSpec {
    pub id: usize,
    pub control_dim: usize,
    pub eps_dim: usize,
    /// Required in plain games; optional in coalition games, where only the
    /// coalition controls enter the dynamics.
    pub feedback: Option<FeedbackLaw>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoalitionSpec {
    pub id: usize,
    pub members: BTreeSet<usize>,
    pub control_dim: usize,
    pub exprs: Vec<Expr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub t0: f64,
    pub t1: f64,
    pub step: f64,
}

impl Horizon {
    /// Number of steps on the grid.
    pub fn steps(&self) -> usize {
        ((self.t1 - self.t0) / self.step).round() as usize
    }

    /// Grid time `t0 + k h`.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    fn is_valid(&self) -> bool {
        if !(self.t0.is_finite() && self.t1.is_finite() && self.step.is_finite()) {
            return false;
        }
        if self.t1 <= self.t0 || self.step <= 0.0 {
            return false;
        }
        let n = (self.t1 - self.t0) / self.step;
        (n - n.round()).abs() <= 2.0 * f64::EPSILON * n.round().max(1.0)
    }
}

/// Pure controls as functions of time, one list per player.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub uo: Vec<Vec<Expr>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameDefinition {
    pub name: String,
    pub state_dim: usize,
    pub initial_state: Vec<f64>,
    /// Sorted by id; ids are `1..=n`.
    pub players: Vec<PlayerSpec>,
    pub dynamics: Vec<Expr>,
    /// Empty for plain games.
    pub coalitions: Vec<CoalitionSpec>,
    pub horizon: Horizon,
    pub scenario: Scenario,
    pub eps_truth: Option<Vec<Vec<Expr>>>,
}

impl GameDefinition {
    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn is_coalition_game(&self) -> bool {
        !self.coalitions.is_empty()
    }

    pub fn player(&self, id: usize) -> Option<&PlayerSpec> {
        id.checked_sub(1).and_then(|k| self.players.get(k))
    }

    /// Highest derivative order over all feedback laws.
    pub fn max_derivative_order(&self) -> u8 {
        self.players
            .iter()
            .filter_map(|p| p.feedback.as_ref())
            .map(|l| l.max_derivative_order)
            .max()
            .unwrap_or(0)
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("game documents always serialize")
    }
}

/// Stable diagnostic codes reported by [`validate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagnosticCode {
    BadHorizon,
    DimensionMismatch,
    PlayerIds,
    CoalitionIds,
    UnknownPlayer,
    UnknownCoalition,
    IndexOutOfRange,
    MixedControls,
    ForbiddenVariable,
    ForeignReference,
    NonMemberReference,
    SelfReference,
    DerivativeOrder,
    UnsupportedOrder,
    MissingFeedback,
    CyclicCoupling,
    ScenarioNotTimeOnly,
    NonFiniteValue,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::BadHorizon => "BAD_HORIZON",
            DiagnosticCode::DimensionMismatch => "DIMENSION_MISMATCH",
            DiagnosticCode::PlayerIds => "PLAYER_IDS",
            DiagnosticCode::CoalitionIds => "COALITION_IDS",
            DiagnosticCode::UnknownPlayer => "UNKNOWN_PLAYER",
            DiagnosticCode::UnknownCoalition => "UNKNOWN_COALITION",
            DiagnosticCode::IndexOutOfRange => "INDEX_OUT_OF_RANGE",
            DiagnosticCode::MixedControls => "MIXED_CONTROLS",
            DiagnosticCode::ForbiddenVariable => "FORBIDDEN_VARIABLE",
            DiagnosticCode::ForeignReference => "FOREIGN_REFERENCE",
            DiagnosticCode::NonMemberReference => "NON_MEMBER_REFERENCE",
            DiagnosticCode::SelfReference => "SELF_REFERENCE",
            DiagnosticCode::DerivativeOrder => "DERIVATIVE_ORDER",
            DiagnosticCode::UnsupportedOrder => "UNSUPPORTED_ORDER",
            DiagnosticCode::MissingFeedback => "MISSING_FEEDBACK",
            DiagnosticCode::CyclicCoupling => "CYCLIC_COUPLING",
            DiagnosticCode::ScenarioNotTimeOnly => "SCENARIO_NOT_TIME_ONLY",
            DiagnosticCode::NonFiniteValue => "NON_FINITE_VALUE",
        }
    }
}

impl fmt::Display for DiagnosticCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    /// Location in document terms, e.g. `players[0].feedback.exprs[0]`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("expression error in `{field}`: {source}")]
    Expression {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("invalid game ({} problem(s)): {}", .0.len(), .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

impl LoadError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            LoadError::Invalid(d) => d,
            _ => &[],
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("player {player} has an {form:?} law where a direct law is required")]
    NotDirect { player: usize, form: LawForm },
    #[error("player {player} has derivative order {order}; exclude derivatives first")]
    DerivativeOrder { player: usize, order: u8 },
    #[error("player {player} has no feedback law")]
    MissingFeedback { player: usize },
    #[error("game is invalid: {0:?}")]
    Invalid(Vec<Diagnostic>),
}

// ---------------------------------------------------------------------------
// Document layer

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameDocument {
    pub name: String,
    pub state_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    pub players: Vec<PlayerDocument>,
    pub dynamics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coalitions: Option<Vec<CoalitionDocument>>,
    pub horizon: Horizon,
    pub scenario: ScenarioDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_truth: Option<Vec<Vec<String>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerDocument {
    pub id: usize,
    pub control_dim: usize,
    #[serde(default)]
    pub eps_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackDocument>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackDocument {
    pub form: LawForm,
    pub exprs: Vec<String>,
    #[serde(default)]
    pub max_derivative_order: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoalitionDocument {
    pub id: usize,
    pub members: Vec<usize>,
    pub control_dim: usize,
    pub exprs: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub uo: Vec<Vec<String>>,
}

fn parse_field(field: String, src: &str) -> Result<Expr, LoadError> {
    expr::parse(src).map_err(|source| LoadError::Expression { field, source })
}

fn parse_list(prefix: &str, srcs: &[String]) -> Result<Vec<Expr>, LoadError> {
    srcs.iter()
        .enumerate()
        .map(|(k, s)| parse_field(format!("{prefix}[{k}]"), s))
        .collect()
}

fn parse_nested(prefix: &str, srcs: &[Vec<String>]) -> Result<Vec<Vec<Expr>>, LoadError> {
    srcs.iter()
        .enumerate()
        .map(|(k, row)| parse_list(&format!("{prefix}[{k}]"), row))
        .collect()
}

fn render(list: &[Expr]) -> Vec<String> {
    list.iter().map(Expr::to_string).collect()
}

impl GameDocument {
    /// Parses every expression; structural checks are left to [`validate`].
    pub fn into_definition(self) -> Result<GameDefinition, LoadError> {
        let mut players = Vec::with_capacity(self.players.len());
        for (k, p) in self.players.iter().enumerate() {
            let feedback = match &p.feedback {
                None => None,
                Some(f) => Some(FeedbackLaw {
                    form: f.form,
                    exprs: parse_list(&format!("players[{k}].feedback.exprs"), &f.exprs)?,
                    max_derivative_order: f.max_derivative_order,
                    guard: f
                        .guard
                        .as_deref()
                        .map(|g| parse_field(format!("players[{k}].feedback.guard"), g))
                        .transpose()?,
                }),
            };
            players.push(PlayerSpec {
                id: p.id,
                control_dim: p.control_dim,
                eps_dim: p.eps_dim,
                feedback,
            });
        }
        players.sort_by_key(|p| p.id);
        let mut coalitions = Vec::new();
        for (k, c) in self.coalitions.iter().flatten().enumerate() {
            coalitions.push(CoalitionSpec {
                id: c.id,
                members: c.members.iter().copied().collect(),
                control_dim: c.control_dim,
                exprs: parse_list(&format!("coalitions[{k}].exprs"), &c.exprs)?,
            });
        }
        coalitions.sort_by_key(|c| c.id);
        let state_dim = self.state_dim;
        Ok(GameDefinition {
            name: self.name,
            state_dim,
            initial_state: self.initial_state.unwrap_or_else(|| vec![0.0; state_dim]),
            players,
            dynamics: parse_list("dynamics", &self.dynamics)?,
            coalitions,
            horizon: self.horizon,
            scenario: Scenario {
                uo: parse_nested("scenario.uo", &self.scenario.uo)?,
            },
            eps_truth: self
                .eps_truth
                .as_deref()
                .map(|e| parse_nested("eps_truth", e))
                .transpose()?,
        })
    }
}

impl GameDefinition {
    /// Canonical document form; all expressions rendered fully parenthesized.
    pub fn to_document(&self) -> GameDocument {
        GameDocument {
            name: self.name.clone(),
            state_dim: self.state_dim,
            initial_state: Some(self.initial_state.clone()),
            players: self
                .players
                .iter()
                .map(|p| PlayerDocument {
                    id: p.id,
                    control_dim: p.control_dim,
                    eps_dim: p.eps_dim,
                    feedback: p.feedback.as_ref().map(|f| FeedbackDocument {
                        form: f.form,
                        exprs: render(&f.exprs),
                        max_derivative_order: f.max_derivative_order,
                        guard: f.guard.as_ref().map(Expr::to_string),
                    }),
                })
                .collect(),
            dynamics: render(&self.dynamics),
            coalitions: (!self.coalitions.is_empty()).then(|| {
                self.coalitions
                    .iter()
                    .map(|c| CoalitionDocument {
                        id: c.id,
                        members: c.members.iter().copied().collect(),
                        control_dim: c.control_dim,
                        exprs: render(&c.exprs),
                    })
                    .collect()
            }),
            horizon: self.horizon,
            scenario: ScenarioDocument {
                uo: self.scenario.uo.iter().map(|r| render(r)).collect(),
            },
            eps_truth: self
                .eps_truth
                .as_ref()
                .map(|e| e.iter().map(|r| render(r)).collect()),
        }
    }
}

/// Loads and validates a JSON game document.
pub fn load_game(document: &str) -> Result<GameDefinition, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: GameDocument =
        serde_path_to_error::deserialize(de).map_err(|e| LoadError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let game = doc.into_definition()?;
    let diagnostics = validate(&game);
    if diagnostics.is_empty() {
        Ok(game)
    } else {
        Err(LoadError::Invalid(diagnostics))
    }
}

// ---------------------------------------------------------------------------
// Validation

struct Checker<'g> {
    game: &'g GameDefinition,
    out: Vec<Diagnostic>,
}

/// What a particular expression slot may reference.
struct Scope {
    dphi: bool,
    /// Player whose own `uo`/`eps`/`u` are in scope.
    own: Option<usize>,
    own_u: bool,
    /// Other players' realized controls (cross-coupled feedback).
    other_u: bool,
    u_in_dynamics: bool,
    v_in_dynamics: bool,
    time_only: bool,
}

impl<'g> Checker<'g> {
    fn push(&mut self, code: DiagnosticCode, path: impl Into<String>, message: impl Into<String>) {
        self.out.push(Diagnostic {
            code,
            path: path.into(),
            message: message.into(),
        });
    }

    fn player_dims(&self, id: usize) -> Option<(usize, usize)> {
        self.game.player(id).map(|p| (p.control_dim, p.eps_dim))
    }

    fn check_expr(
        &mut self,
        path: &str,
        e: &Expr,
        scope: &Scope,
        members: Option<&BTreeSet<usize>>,
    ) {
        let d = self.game.state_dim;
        for var in e.free_variables() {
            let bad =
                |c: &mut Self, code, msg: String| c.push(code, path, format!("`{var}`: {msg}"));
            if scope.time_only && var != Var::T {
                bad(
                    self,
                    DiagnosticCode::ScenarioNotTimeOnly,
                    "scenario expressions may only use t".into(),
                );
                continue;
            }
            match var {
                Var::T | Var::H => {}
                Var::Phi(j) => {
                    if j >= d {
                        bad(
                            self,
                            DiagnosticCode::IndexOutOfRange,
                            format!("state has {d} component(s)"),
                        );
                    }
                }
                Var::DPhi(j) => {
                    if !scope.dphi {
                        bad(
                            self,
                            DiagnosticCode::DerivativeOrder,
                            "state derivatives need max_derivative_order = 1".into(),
                        );
                    } else if j >= d {
                        bad(
                            self,
                            DiagnosticCode::IndexOutOfRange,
                            format!("state has {d} component(s)"),
                        );
                    }
                }
                Var::U(i, j) | Var::Uo(i, j) | Var::Eps(i, j) => {
                    let Some((cd, ed)) = self.player_dims(i) else {
                        bad(
                            self,
                            DiagnosticCode::UnknownPlayer,
                            format!("no player {i}"),
                        );
                        continue;
                    };
                    let is_eps = matches!(var, Var::Eps(..));
                    let is_u = matches!(var, Var::U(..));
                    let allowed = if scope.u_in_dynamics || scope.v_in_dynamics {
                        // dynamics
                        if is_u && scope.u_in_dynamics {
                            Ok(())
                        } else if is_u {
                            Err((
                                DiagnosticCode::MixedControls,
                                "coalition dynamics use v[..] only".to_string(),
                            ))
                        } else {
                            Err((
                                DiagnosticCode::ForbiddenVariable,
                                "dynamics see realized controls only".into(),
                            ))
                        }
                    } else if let Some(m) = members {
                        if is_u {
                            Err((
                                DiagnosticCode::ForbiddenVariable,
                                "coalition controls are built from pure controls".into(),
                            ))
                        } else if m.contains(&i) {
                            Ok(())
                        } else {
                            Err((
                                DiagnosticCode::NonMemberReference,
                                format!("player {i} is not a coalition member"),
                            ))
                        }
                    } else if Some(i) == scope.own {
                        if is_u && !scope.own_u {
                            Err((
                                DiagnosticCode::SelfReference,
                                "a direct law defines this control".into(),
                            ))
                        } else {
                            Ok(())
                        }
                    } else if is_u && scope.other_u {
                        Ok(())
                    } else {
                        Err((
                            DiagnosticCode::ForeignReference,
                            format!("player {i}'s private quantity is out of scope"),
                        ))
                    };
                    if let Err((code, msg)) = allowed {
                        bad(self, code, msg);
                        continue;
                    }
                    let dim = if is_eps { ed } else { cd };
                    if j >= dim {
                        bad(
                            self,
                            DiagnosticCode::IndexOutOfRange,
                            format!("dimension is {dim}"),
                        );
                    }
                }
                Var::V(i, j) => {
                    if !scope.v_in_dynamics {
                        let code = if scope.u_in_dynamics {
                            DiagnosticCode::MixedControls
                        } else {
                            DiagnosticCode::ForbiddenVariable
                        };
                        bad(
                            self,
                            code,
                            "coalition controls only appear in coalition dynamics".into(),
                        );
                        continue;
                    }
                    match self.game.coalitions.iter().find(|c| c.id == i) {
                        None => bad(
                            self,
                            DiagnosticCode::UnknownCoalition,
                            format!("no coalition {i}"),
                        ),
                        Some(c) if j >= c.control_dim => bad(
                            self,
                            DiagnosticCode::IndexOutOfRange,
                            format!("dimension is {}", c.control_dim),
                        ),
                        Some(_) => {}
                    }
                }
            }
        }
    }
}

const BASE_SCOPE: Scope = Scope {
    dphi: false,
    own: None,
    own_u: false,
    other_u: false,
    u_in_dynamics: false,
    v_in_dynamics: false,
    time_only: false,
};

/// Checks every structural invariant of a game. Returns one diagnostic per
/// violation; an empty list means the game is valid.
pub fn validate(game: &GameDefinition) -> Vec<Diagnostic> {
    let mut c = Checker {
        game,
        out: Vec::new(),
    };
    let d = game.state_dim;
    let n = game.n_players();

    if !game.horizon.is_valid() {
        c.push(
            DiagnosticCode::BadHorizon,
            "horizon",
            "need finite t0 < t1, step > 0 and an integer number of steps",
        );
    }
    if d == 0 {
        c.push(
            DiagnosticCode::DimensionMismatch,
            "state_dim",
            "state_dim must be positive",
        );
    }
    if game.dynamics.len() != d {
        c.push(
            DiagnosticCode::DimensionMismatch,
            "dynamics",
            format!("expected {d} entries, found {}", game.dynamics.len()),
        );
    }
    if game.initial_state.len() != d {
        c.push(
            DiagnosticCode::DimensionMismatch,
            "initial_state",
            format!("expected {d} entries, found {}", game.initial_state.len()),
        );
    }
    if game.initial_state.iter().any(|x| !x.is_finite()) {
        c.push(
            DiagnosticCode::NonFiniteValue,
            "initial_state",
            "entries must be finite",
        );
    }
    if n == 0 {
        c.push(
            DiagnosticCode::PlayerIds,
            "players",
            "at least one player is required",
        );
    }
    for (k, p) in game.players.iter().enumerate() {
        if p.id != k + 1 {
            c.push(
                DiagnosticCode::PlayerIds,
                format!("players[{k}].id"),
                format!("player ids must be exactly 1..={n} without duplicates"),
            );
            break;
        }
    }
    for (k, co) in game.coalitions.iter().enumerate() {
        if co.id != k + 1 {
            c.push(
                DiagnosticCode::CoalitionIds,
                format!("coalitions[{k}].id"),
                "coalition ids must be exactly 1..=m without duplicates",
            );
            break;
        }
    }

    let coalition_game = game.is_coalition_game();
    let dyn_scope = Scope {
        u_in_dynamics: !coalition_game,
        v_in_dynamics: coalition_game,
        ..BASE_SCOPE
    };
    for (j, e) in game.dynamics.iter().enumerate() {
        c.check_expr(&format!("dynamics[{j}]"), e, &dyn_scope, None);
    }

    for (k, p) in game.players.iter().enumerate() {
        let Some(law) = &p.feedback else {
            if !coalition_game {
                c.push(
                    DiagnosticCode::MissingFeedback,
                    format!("players[{k}].feedback"),
                    "plain games need a feedback law for every player",
                );
            }
            continue;
        };
        if law.max_derivative_order > 1 {
            c.push(
                DiagnosticCode::UnsupportedOrder,
                format!("players[{k}].feedback.max_derivative_order"),
                "only derivative orders 0 and 1 are supported",
            );
        }
        if law.exprs.len() != p.control_dim {
            c.push(
                DiagnosticCode::DimensionMismatch,
                format!("players[{k}].feedback.exprs"),
                format!(
                    "expected {} entries, found {}",
                    p.control_dim,
                    law.exprs.len()
                ),
            );
        }
        let scope = Scope {
            dphi: law.max_derivative_order >= 1,
            own: Some(p.id),
            own_u: law.form != LawForm::Direct,
            other_u: true,
            ..BASE_SCOPE
        };
        for (j, e) in law.exprs.iter().enumerate() {
            c.check_expr(
                &format!("players[{k}].feedback.exprs[{j}]"),
                e,
                &scope,
                None,
            );
        }
        if let Some(g) = &law.guard {
            c.check_expr(&format!("players[{k}].feedback.guard"), g, &scope, None);
        }
    }
    if let Some(cycle) = coupling_cycle(game) {
        c.push(
            DiagnosticCode::CyclicCoupling,
            "players",
            format!("direct laws form a dependency cycle through players {cycle:?}"),
        );
    }

    for (k, co) in game.coalitions.iter().enumerate() {
        if co.members.is_empty() {
            c.push(
                DiagnosticCode::UnknownPlayer,
                format!("coalitions[{k}].members"),
                "coalition has no members",
            );
        }
        for m in &co.members {
            if game.player(*m).is_none() {
                c.push(
                    DiagnosticCode::UnknownPlayer,
                    format!("coalitions[{k}].members"),
                    format!("no player {m}"),
                );
            }
        }
        if co.exprs.len() != co.control_dim {
            c.push(
                DiagnosticCode::DimensionMismatch,
                format!("coalitions[{k}].exprs"),
                format!(
                    "expected {} entries, found {}",
                    co.control_dim,
                    co.exprs.len()
                ),
            );
        }
        for (j, e) in co.exprs.iter().enumerate() {
            c.check_expr(
                &format!("coalitions[{k}].exprs[{j}]"),
                e,
                &BASE_SCOPE,
                Some(&co.members),
            );
        }
    }

    if game.scenario.uo.len() != n {
        c.push(
            DiagnosticCode::DimensionMismatch,
            "scenario.uo",
            format!("expected {n} player rows, found {}", game.scenario.uo.len()),
        );
    }
    let time_scope = Scope {
        time_only: true,
        ..BASE_SCOPE
    };
    for (k, row) in game.scenario.uo.iter().enumerate() {
        if let Some(p) = game.players.get(k) {
            if row.len() != p.control_dim {
                c.push(
                    DiagnosticCode::DimensionMismatch,
                    format!("scenario.uo[{k}]"),
                    format!("expected {} entries, found {}", p.control_dim, row.len()),
                );
            }
        }
        for (j, e) in row.iter().enumerate() {
            c.check_expr(&format!("scenario.uo[{k}][{j}]"), e, &time_scope, None);
        }
    }

    if let Some(truth) = &game.eps_truth {
        if truth.len() != n {
            c.push(
                DiagnosticCode::DimensionMismatch,
                "eps_truth",
                format!("expected {n} player rows, found {}", truth.len()),
            );
        }
        for (k, row) in truth.iter().enumerate() {
            let Some(p) = game.players.get(k) else {
                continue;
            };
            if row.len() != p.eps_dim {
                c.push(
                    DiagnosticCode::DimensionMismatch,
                    format!("eps_truth[{k}]"),
                    format!("expected {} entries, found {}", p.eps_dim, row.len()),
                );
            }
            let scope = Scope {
                own: Some(p.id),
                ..BASE_SCOPE
            };
            for (j, e) in row.iter().enumerate() {
                let path = format!("eps_truth[{k}][{j}]");
                if e.mentions(|v| matches!(v, Var::Eps(..) | Var::U(..))) {
                    c.push(
                        DiagnosticCode::ForbiddenVariable,
                        &path,
                        "ground truth is a function of t, phi and own uo",
                    );
                    continue;
                }
                c.check_expr(&path, e, &scope, None);
            }
        }
    }
    c.out
}

/// Players whose direct laws reference each other's realized controls in a cycle.
fn coupling_cycle(game: &GameDefinition) -> Option<Vec<usize>> {
    let deps = direct_dependencies(game);
    // Iterative DFS with colors.
    let mut color: BTreeMap<usize, u8> = BTreeMap::new();
    for &start in deps.keys() {
        if color.get(&start).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        let mut path = vec![start];
        color.insert(start, 1);
        while let Some((node, next)) = stack.last_mut() {
            let succ = deps.get(node).map(|s| s.as_slice()).unwrap_or(&[]);
            if *next < succ.len() {
                let m = succ[*next];
                *next += 1;
                match color.get(&m).copied().unwrap_or(0) {
                    0 if deps.contains_key(&m) => {
                        color.insert(m, 1);
                        stack.push((m, 0));
                        path.push(m);
                    }
                    1 => {
                        let from = path.iter().position(|&p| p == m).unwrap_or(0);
                        return Some(path[from..].to_vec());
                    }
                    _ => {}
                }
            } else {
                color.insert(*node, 2);
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// For each direct-law player, the other players whose realized controls its law reads.
pub(crate) fn direct_dependencies(game: &GameDefinition) -> BTreeMap<usize, Vec<usize>> {
    let mut deps = BTreeMap::new();
    for p in &game.players {
        let Some(law) = &p.feedback else { continue };
        if law.form != LawForm::Direct {
            continue;
        }
        let mut s = BTreeSet::new();
        for e in law.exprs.iter().chain(law.guard.iter()) {
            for v in e.free_variables() {
                if let Var::U(i, _) = v {
                    if i != p.id {
                        s.insert(i);
                    }
                }
            }
        }
        deps.insert(p.id, s.into_iter().collect());
    }
    deps
}

// ---------------------------------------------------------------------------
// Associated ordinary game

/// Where a virtual player's control components come from in the original game.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VirtualSlot {
    /// Player id of the virtual player in the associated game.
    pub slot: usize,
    /// Original coalition id, for coalition games.
    pub coalition: Option<usize>,
    /// `(player, eps component)` for each control component of the slot.
    pub sources: Vec<(usize, usize)>,
}

/// The ordinary game obtained by promoting every ε to an independent control.
///
/// Players `1..=n` of `game` carry the original pure controls; the remaining
/// players are virtual and carry ε. All laws in `game` are the identity
/// `u = uo`, so its dynamics read the independent controls directly.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociatedGame {
    pub game: GameDefinition,
    pub n_real: usize,
    pub virtual_slots: Vec<VirtualSlot>,
}

impl AssociatedGame {
    pub fn n_slots(&self) -> usize {
        self.game.n_players()
    }

    /// Packs per-player pure controls and ε into the associated game's controls.
    pub fn pack_controls(&self, uo: &[Vec<f64>], eps: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = uo.to_vec();
        for vs in &self.virtual_slots {
            out.push(vs.sources.iter().map(|&(p, j)| eps[p - 1][j]).collect());
        }
        out
    }
}

fn identity_law(id: usize, dim: usize) -> FeedbackLaw {
    FeedbackLaw::direct((0..dim).map(|j| Expr::Var(Var::Uo(id, j))).collect())
}

/// Fully resolved direct-law expressions, with cross-player `u` references
/// replaced by the referenced players' own resolved laws.
pub(crate) fn resolved_direct_laws(
    game: &GameDefinition,
) -> Result<BTreeMap<usize, Vec<Expr>>, ModelError> {
    let mut resolved: BTreeMap<usize, Vec<Expr>> = BTreeMap::new();
    let deps = direct_dependencies(game);
    if coupling_cycle(game).is_some() {
        return Err(ModelError::Invalid(validate(game)));
    }
    fn visit(
        id: usize,
        game: &GameDefinition,
        deps: &BTreeMap<usize, Vec<usize>>,
        resolved: &mut BTreeMap<usize, Vec<Expr>>,
    ) {
        if resolved.contains_key(&id) {
            return;
        }
        for &dep in deps.get(&id).into_iter().flatten() {
            visit(dep, game, deps, resolved);
        }
        let law = game
            .player(id)
            .and_then(|p| p.feedback.as_ref())
            .expect("direct law exists");
        let exprs = law
            .exprs
            .iter()
            .map(|e| {
                e.substitute(&|v| match *v {
                    Var::U(i, j) if i != id => resolved.get(&i).map(|r| r[j].clone()),
                    _ => None,
                })
            })
            .collect();
        resolved.insert(id, exprs);
    }
    for &id in deps.keys() {
        visit(id, game, &deps, &mut resolved);
    }
    Ok(resolved)
}

/// Builds the ordinary game associated with the ε-representation of `game`.
///
/// Plain games get one virtual player per real player (the ensemble doubles);
/// coalition games get one collective virtual player per coalition carrying
/// the ε of all its members.
pub fn build_associated_game(game: &GameDefinition) -> Result<AssociatedGame, ModelError> {
    let n = game.n_players();
    for p in &game.players {
        match &p.feedback {
            Some(law) if law.form != LawForm::Direct => {
                return Err(ModelError::NotDirect {
                    player: p.id,
                    form: law.form,
                })
            }
            Some(law) if law.max_derivative_order != 0 => {
                return Err(ModelError::DerivativeOrder {
                    player: p.id,
                    order: law.max_derivative_order,
                })
            }
            None if !game.is_coalition_game() => {
                return Err(ModelError::MissingFeedback { player: p.id })
            }
            _ => {}
        }
    }

    let mut virtual_slots = Vec::new();
    let dynamics: Vec<Expr> = if game.is_coalition_game() {
        let mut coalition_exprs: BTreeMap<usize, Vec<Expr>> = BTreeMap::new();
        for (k, co) in game.coalitions.iter().enumerate() {
            let slot = n + k + 1;
            let mut sources = Vec::new();
            let mut local: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for &m in &co.members {
                let ed = game.player(m).map_or(0, |p| p.eps_dim);
                for j in 0..ed {
                    local.insert((m, j), sources.len());
                    sources.push((m, j));
                }
            }
            let exprs = co
                .exprs
                .iter()
                .map(|e| {
                    e.substitute(&|v| match *v {
                        Var::Uo(i, j) => Some(Expr::Var(Var::U(i, j))),
                        Var::Eps(i, j) => local.get(&(i, j)).map(|&c| Expr::Var(Var::U(slot, c))),
                        _ => None,
                    })
                })
                .collect();
            coalition_exprs.insert(co.id, exprs);
            virtual_slots.push(VirtualSlot {
                slot,
                coalition: Some(co.id),
                sources,
            });
        }
        game
            .dynamics
            .iter()
            .map(|e| {
                e.substitute(&|v| match *v {
                    Var::V(c, j) => coalition_exprs.get(&c).map(|x| x[j].clone()),
                    _ => None,
                })
            })
            .collect()
    } else {
        for p in &game.players {
            let slot = n + p.id;
            let sources: Vec<(usize, usize)> = (0..p.eps_dim).map(|j| (p.id, j)).collect();
            virtual_slots.push(VirtualSlot {
                slot,
                coalition: None,
                sources,
            });
        }
        let laws = resolved_direct_laws(game)?;
        let laws: BTreeMap<usize, Vec<Expr>> = laws
            .into_iter()
            .map(|(id, exprs)| {
                let exprs = exprs
                    .iter()
                    .map(|e| {
                        e.substitute(&|v| match *v {
                            Var::Uo(i, j) => Some(Expr::Var(Var::U(i, j))),
                            Var::Eps(i, j) => Some(Expr::Var(Var::U(n + i, j))),
                            _ => None,
                        })
                    })
                    .collect();
                (id, exprs)
            })
            .collect();
        game
            .dynamics
            .iter()
            .map(|e| {
                e.substitute(&|v| match *v {
                    Var::U(i, j) => laws.get(&i).map(|x| x[j].clone()),
                    _ => None,
                })
            })
            .collect()
    };

    let mut players: Vec<PlayerSpec> = game
        .players
        .iter()
        .map(|p| PlayerSpec {
            id: p.id,
            control_dim: p.control_dim,
            eps_dim: 0,
            feedback: Some(identity_law(p.id, p.control_dim)),
        })
        .collect();
    let mut scenario = game.scenario.uo.clone();
    for vs in &virtual_slots {
        players.push(PlayerSpec {
            id: vs.slot,
            control_dim: vs.sources.len(),
            eps_dim: 0,
            feedback: Some(identity_law(vs.slot, vs.sources.len())),
        });
        scenario.push(vec![Expr::Num(0.0); vs.sources.len()]);
    }
    let assoc = GameDefinition {
        name: format!("{}/associated", game.name),
        state_dim: game.state_dim,
        initial_state: game.initial_state.clone(),
        players,
        dynamics,
        coalitions: Vec::new(),
        horizon: game.horizon,
        scenario: Scenario { uo: scenario },
        eps_truth: None,
    };
    Ok(AssociatedGame {
        game: assoc,
        n_real: n,
        virtual_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const LIN1: &str = include_str!("../games/lin1.json");

    fn codes(game: &GameDefinition) -> Vec<DiagnosticCode> {
        validate(game).into_iter().map(|d| d.code).collect()
    }

    fn lin1_doc() -> serde_json::Value {
        serde_json::from_str(LIN1).unwrap()
    }

    fn load_value(v: &serde_json::Value) -> Result<GameDefinition, LoadError> {
        load_game(&v.to_string())
    }

    #[test]
    fn lin1_loads() {
        let g = load_game(LIN1).unwrap();
        assert_eq!(g.state_dim, 1);
        assert_eq!(g.n_players(), 2);
        assert!(validate(&g).is_empty());
        assert_eq!(g.horizon.steps(), 1000);
    }

    #[test]
    fn short_dynamics_is_dimension_mismatch() {
        let mut v = lin1_doc();
        v["dynamics"] = serde_json::json!([]);
        let err = load_value(&v).unwrap_err();
        assert!(err
            .diagnostics()
            .iter()
            .any(|d| d.code == DiagnosticCode::DimensionMismatch));
    }

    #[test]
    fn unknown_player_in_feedback() {
        let mut v = lin1_doc();
        v["players"][0]["feedback"]["exprs"][0] = "uo[3][0] + eps[1][0]*phi[0]".into();
        let err = load_value(&v).unwrap_err();
        assert_eq!(err.diagnostics()[0].code, DiagnosticCode::UnknownPlayer);
        assert_eq!(err.diagnostics()[0].path, "players[0].feedback.exprs[0]");
    }

    #[test]
    fn self_reference_and_derivative_order() {
        let mut g = load_game(LIN1).unwrap();
        g.players[0].feedback.as_mut().unwrap().exprs[0] =
            expr::parse("uo[1][0] + u[1][0]").unwrap();
        assert_eq!(codes(&g), vec![DiagnosticCode::SelfReference]);

        let mut g = load_game(LIN1).unwrap();
        g.players[0].feedback.as_mut().unwrap().exprs[0] =
            expr::parse("uo[1][0] + dphi[0]").unwrap();
        assert_eq!(codes(&g), vec![DiagnosticCode::DerivativeOrder]);
        g.players[0].feedback.as_mut().unwrap().max_derivative_order = 1;
        assert!(codes(&g).is_empty());
        g.players[0].feedback.as_mut().unwrap().max_derivative_order = 2;
        assert_eq!(codes(&g), vec![DiagnosticCode::UnsupportedOrder]);
    }

    #[test]
    fn schema_errors_report_path() {
        let mut v = lin1_doc();
        v["horizon"]["step"] = "fast".into();
        match load_value(&v).unwrap_err() {
            LoadError::Schema { path, .. } => assert_eq!(path, "horizon.step"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v = lin1_doc();
        v["extra"] = 1.into();
        assert!(matches!(load_value(&v), Err(LoadError::Schema { .. })));
    }

    #[test]
    fn expression_errors_report_field_and_offset() {
        let mut v = lin1_doc();
        v["dynamics"][0] = "u[1][0] + ".into();
        match load_value(&v).unwrap_err() {
            LoadError::Expression { field, source } => {
                assert_eq!(field, "dynamics[0]");
                assert_eq!(source.offset, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn other_structural_checks() {
        let mut g = load_game(LIN1).unwrap();
        g.dynamics[0] = expr::parse("v[1][0]").unwrap();
        assert_eq!(codes(&g), vec![DiagnosticCode::MixedControls]);

        let mut g = load_game(LIN1).unwrap();
        g.dynamics[0] = expr::parse("u[1][3]").unwrap();
        assert_eq!(codes(&g), vec![DiagnosticCode::IndexOutOfRange]);

        let mut g = load_game(LIN1).unwrap();
        g.scenario.uo[0][0] = expr::parse("phi[0]").unwrap();
        assert_eq!(codes(&g), vec![DiagnosticCode::ScenarioNotTimeOnly]);

        let mut g = load_game(LIN1).unwrap();
        g.horizon.t1 = -1.0;
        assert_eq!(codes(&g), vec![DiagnosticCode::BadHorizon]);

        let mut g = load_game(LIN1).unwrap();
        g.horizon.step = 0.03;
        assert_eq!(codes(&g), vec![DiagnosticCode::BadHorizon]);

        let mut g = load_game(LIN1).unwrap();
        g.players[0].feedback.as_mut().unwrap().exprs[0] = expr::parse("uo[2][0]").unwrap();
        assert_eq!(codes(&g), vec![DiagnosticCode::ForeignReference]);

        let mut g = load_game(LIN1).unwrap();
        g.players[0].feedback.as_mut().unwrap().exprs[0] =
            expr::parse("uo[1][0] + u[2][0]").unwrap();
        assert!(codes(&g).is_empty());
        g.players[1].feedback.as_mut().unwrap().exprs[0] =
            expr::parse("uo[2][0] + u[1][0]").unwrap();
        assert_eq!(codes(&g), vec![DiagnosticCode::CyclicCoupling]);
    }

    #[test]
    fn serialize_is_canonical_and_reloads() {
        let g = load_game(LIN1).unwrap();
        let text = g.serialize();
        let again = load_game(&text).unwrap();
        assert_eq!(g, again);
        assert_eq!(text, again.serialize());
    }

    #[test]
    fn associated_game_doubles_players() {
        let g = load_game(LIN1).unwrap();
        let b = build_associated_game(&g).unwrap();
        assert_eq!(b.n_slots(), 4);
        assert!(validate(&b.game).is_empty(), "{:?}", validate(&b.game));
        assert_eq!(
            b.game.dynamics[0].to_string(),
            "((u[1][0] + (u[3][0] * phi[0])) + (u[2][0] + (u[4][0] * phi[0])))"
        );
    }

    #[test]
    fn zero_eps_virtual_player_is_degenerate_but_legal() {
        let mut g = load_game(LIN1).unwrap();
        g.players[1].eps_dim = 0;
        g.players[1].feedback = Some(identity_law(2, 1));
        g.eps_truth.as_mut().unwrap()[1].clear();
        assert!(validate(&g).is_empty());
        let b = build_associated_game(&g).unwrap();
        assert_eq!(b.game.players[3].control_dim, 0);
        assert!(validate(&b.game).is_empty());
    }

    #[test]
    fn associated_game_needs_direct_order_zero() {
        let mut g = load_game(LIN1).unwrap();
        g.players[0].feedback.as_mut().unwrap().form = LawForm::Inverse;
        assert!(matches!(
            build_associated_game(&g),
            Err(ModelError::NotDirect { player: 1, .. })
        ));
        let mut g = load_game(LIN1).unwrap();
        g.players[0].feedback.as_mut().unwrap().max_derivative_order = 1;
        assert!(matches!(
            build_associated_game(&g),
            Err(ModelError::DerivativeOrder { .. })
        ));
    }

    #[test]
    fn coalition_virtual_players_are_collective() {
        let g = load_game(include_str!("../games/coalition2.json")).unwrap();
        let b = build_associated_game(&g).unwrap();
        assert_eq!(b.n_slots(), g.n_players() + g.coalitions.len());
        assert!(validate(&b.game).is_empty(), "{:?}", validate(&b.game));
        // The shared player contributes its ε to both collective players.
        let shared: Vec<_> = b
            .virtual_slots
            .iter()
            .filter(|vs| vs.sources.iter().any(|&(p, _)| p == 2))
            .collect();
        assert_eq!(shared.len(), 2);
    }
}
