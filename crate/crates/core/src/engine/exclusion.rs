use std::collections::BTreeMap;

use super::EngineError;
use crate::expr::{sym_mul, sym_sub, BinOp, Expr, Var};
use crate::model::{direct_dependencies, FeedbackLaw, GameDefinition, LawForm};

/// Removes state derivatives from every feedback law.
///
/// Each order-1 law is read as a relation `R(u, uo, phi, dphi, eps) = 0`,
/// every `dphi[j]` is replaced by the dynamics `Phi_j` (with the realized
/// controls left symbolic), and the relation is solved for the player's own
/// controls by Cramer's rule when it is affine in them. Otherwise, or when the
/// solved laws would depend on each other cyclically, the relation is kept as
/// an implicit law. Order-0 laws are untouched.
pub fn exclude_derivative(game: &GameDefinition) -> Result<GameDefinition, EngineError> {
    if let Some(p) = game.players.iter().find(|p| {
        p.feedback
            .as_ref()
            .is_some_and(|l| l.max_derivative_order > 1)
    }) {
        return Err(EngineError::UnsupportedOrder {
            player: p.id,
            order: p.feedback.as_ref().map_or(0, |l| l.max_derivative_order),
        });
    }
    if game.max_derivative_order() == 0 {
        return Ok(game.clone());
    }

    // In coalition games the dynamics read v; expand it first.
    let coalition_exprs: BTreeMap<usize, &[Expr]> = game
        .coalitions
        .iter()
        .map(|c| (c.id, c.exprs.as_slice()))
        .collect();
    let rates: Vec<Expr> = game
        .dynamics
        .iter()
        .map(|e| {
            e.substitute(&|v| match *v {
                Var::V(c, j) => coalition_exprs.get(&c).map(|x| x[j].clone()),
                _ => None,
            })
        })
        .collect();
    let substitute_rates = |e: &Expr| {
        e.substitute(&|v| match *v {
            Var::DPhi(j) => rates.get(j).cloned(),
            _ => None,
        })
    };

    let mut out = game.clone();
    let mut implicit_fallback: BTreeMap<usize, FeedbackLaw> = BTreeMap::new();
    for p in out.players.iter_mut() {
        let Some(law) = p.feedback.as_mut() else {
            continue;
        };
        if law.max_derivative_order == 0 {
            continue;
        }
        let residuals: Vec<Expr> = law
            .exprs
            .iter()
            .enumerate()
            .map(|(j, e)| {
                let r = match law.form {
                    LawForm::Direct => sym_sub(Expr::Var(Var::U(p.id, j)), e.clone()),
                    LawForm::Inverse => sym_sub(e.clone(), Expr::Var(Var::Uo(p.id, j))),
                    LawForm::Implicit => e.clone(),
                };
                substitute_rates(&r)
            })
            .collect();
        let implicit = FeedbackLaw {
            form: LawForm::Implicit,
            exprs: residuals.clone(),
            max_derivative_order: 0,
            guard: None,
        };
        let unknowns: Vec<Var> = (0..p.control_dim).map(|j| Var::U(p.id, j)).collect();
        match solve_affine(&residuals, &unknowns) {
            Solved::Direct { exprs, determinant } => {
                *law = FeedbackLaw {
                    form: LawForm::Direct,
                    exprs,
                    max_derivative_order: 0,
                    guard: Some(determinant),
                };
                implicit_fallback.insert(p.id, implicit);
            }
            Solved::Singular => return Err(EngineError::SingularSubstitution { player: p.id }),
            Solved::NotAffine => *law = implicit,
        }
    }

    // Break cycles among the solved laws by reverting members to implicit form.
    while let Some(id) = first_cyclic(&out, &implicit_fallback) {
        let law = implicit_fallback.remove(&id).expect("fallback recorded");
        out.players[id - 1].feedback = Some(law);
    }
    Ok(out)
}

enum Solved {
    Direct { exprs: Vec<Expr>, determinant: Expr },
    Singular,
    NotAffine,
}

/// Solves `R(u) = 0` for `u` when every residual is affine in `u`.
fn solve_affine(residuals: &[Expr], unknowns: &[Var]) -> Solved {
    let mut matrix = Vec::with_capacity(residuals.len());
    let mut rhs = Vec::with_capacity(residuals.len());
    for r in residuals {
        let Some(form) = r.affine_form(unknowns) else {
            return Solved::NotAffine;
        };
        matrix.push(form.coeffs);
        rhs.push(form.rest.map(negate));
    }
    let Some(det) = determinant(&matrix) else {
        return Solved::Singular;
    };
    if det.as_constant() == Some(0.0) {
        return Solved::Singular;
    }
    let exprs = (0..unknowns.len())
        .map(|m| {
            let replaced: Vec<Vec<Option<Expr>>> = matrix
                .iter()
                .zip(&rhs)
                .map(|(row, b)| {
                    let mut row = row.clone();
                    row[m] = b.clone();
                    row
                })
                .collect();
            match determinant(&replaced) {
                None => Expr::Num(0.0),
                Some(num) if unknowns.len() == 1 && matches!(det, Expr::Num(x) if x == 1.0) => num,
                Some(num) => Expr::binary(BinOp::Div, num, det.clone()),
            }
        })
        .collect();
    Solved::Direct {
        exprs,
        determinant: det,
    }
}

fn negate(e: Expr) -> Expr {
    match e {
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

/// Laplace expansion along the first row; `None` is a structural zero.
fn determinant(m: &[Vec<Option<Expr>>]) -> Option<Expr> {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc: Option<Expr> = None;
    for col in 0..n {
        let Some(a) = &m[0][col] else { continue };
        let minor: Vec<Vec<Option<Expr>>> = m[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(c, _)| *c != col)
                    .map(|(_, x)| x.clone())
                    .collect()
            })
            .collect();
        let Some(sub) = determinant(&minor) else {
            continue;
        };
        let term = sym_mul(a.clone(), sub);
        acc = Some(match (acc, col % 2 == 0) {
            (None, true) => term,
            (None, false) => Expr::Neg(Box::new(term)),
            (Some(x), true) => Expr::binary(BinOp::Add, x, term),
            (Some(x), false) => Expr::binary(BinOp::Sub, x, term),
        });
    }
    acc
}

/// A solved player that sits on a dependency cycle, if any.
fn first_cyclic(game: &GameDefinition, solved: &BTreeMap<usize, FeedbackLaw>) -> Option<usize> {
    let deps = direct_dependencies(game);
    for &start in solved.keys() {
        // Reachability from start back to start.
        let mut stack: Vec<usize> = deps.get(&start).cloned().unwrap_or_default();
        let mut seen = std::collections::BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == start {
                return Some(start);
            }
            if seen.insert(n) {
                stack.extend(deps.get(&n).into_iter().flatten().copied());
            }
        }
    }
    None
}
