//! Predict Δt ahead with an ordinary predictor, fit the prediction errors as
//! affine feedback on the state and use the fit to correct later predictions.

use igame::oracle::{Oracle, OracleConfig, Predictor};
use igame::{load_game, simulate};

fn main() {
    let game = load_game(include_str!("../games/lin1.json")).unwrap();
    let traj = simulate(&game).unwrap();

    for predictor in [Predictor::Frozen, Predictor::Linear { window: 10 }] {
        let config = OracleConfig::new(predictor, 1.0)
            .with_depth(0.5)
            .with_window(200);
        let report = Oracle::new(&game, config).unwrap().run(&traj).unwrap();
        println!(
            "{:<7} anchors {} (warm-up {}): baseline rmse {:.4e}, corrected {:.4e}, improved at {:.1}%",
            report.predictor,
            report.per_anchor.len(),
            report.warm_up_anchors,
            report.baseline.state_rmse,
            report.corrected.state_rmse,
            100.0 * report.improved_fraction
        );
        if let Some(fit) = report.per_anchor.last().and_then(|a| a.fit.as_ref()) {
            for p in &fit.players {
                println!(
                    "        player {} deviation = {:.4} + {:.4} phi",
                    p.player, p.a[0], p.b[0][0]
                );
            }
        }
    }
}
