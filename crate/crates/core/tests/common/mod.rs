#![allow(dead_code)]

use std::path::PathBuf;

use igame::expr::{BinOp, Constant, Expr, Func, Var};
use igame::model::{load_game, GameDefinition};
use igame::rng::SplitMix64;

pub fn game_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("games")
        .join(name)
}

pub fn game(name: &str) -> GameDefinition {
    let text = std::fs::read_to_string(game_path(name)).unwrap();
    load_game(&text).unwrap()
}

/// Random expression tree of bounded depth. Numbers are non-negative, since
/// a literal `-x` reads back as a negation node.
pub fn random_expr(rng: &mut SplitMix64, depth: usize) -> Expr {
    let pick = |rng: &mut SplitMix64, n: u64| (rng.next_u64() % n) as usize;
    if depth == 0 || pick(rng, 4) == 0 {
        return match pick(rng, 4) {
            0 => Expr::Num(match pick(rng, 4) {
                0 => pick(rng, 100) as f64,
                1 => rng.uniform(0.0, 10.0),
                2 => rng.uniform(0.0, 1.0) * 1e-9,
                _ => rng.uniform(1.0, 2.0) * 1e21,
            }),
            1 => Expr::Const(if pick(rng, 2) == 0 {
                Constant::Pi
            } else {
                Constant::E
            }),
            _ => Expr::Var(random_var(rng)),
        };
    }
    match pick(rng, 3) {
        0 => Expr::Neg(Box::new(random_expr(rng, depth - 1))),
        1 => {
            let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][pick(rng, 5)];
            Expr::binary(op, random_expr(rng, depth - 1), random_expr(rng, depth - 1))
        }
        _ => {
            let f = Func::ALL[pick(rng, Func::ALL.len() as u64)];
            Expr::Call(
                f,
                (0..f.arity())
                    .map(|_| random_expr(rng, depth - 1))
                    .collect(),
            )
        }
    }
}

pub fn random_var(rng: &mut SplitMix64) -> Var {
    let i = 1 + (rng.next_u64() % 4) as usize;
    let j = (rng.next_u64() % 3) as usize;
    match rng.next_u64() % 8 {
        0 => Var::T,
        1 => Var::H,
        2 => Var::Phi(j),
        3 => Var::DPhi(j),
        4 => Var::U(i, j),
        5 => Var::Uo(i, j),
        6 => Var::Eps(i, j),
        _ => Var::V(i, j),
    }
}
