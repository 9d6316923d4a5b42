//! Combine a long-term rollout of the associated ordinary game with corrected
//! short-term segments of the interactive game.

use igame::load_game;
use igame::oracle::{strategic_analysis, OracleConfig, Predictor, StrategicConfig, VirtualPolicy};

fn main() {
    let game = load_game(include_str!("../games/lin1.json")).unwrap();
    let config = StrategicConfig {
        oracle: OracleConfig::new(Predictor::Frozen, 1.0)
            .with_depth(0.5)
            .with_window(200),
        virtual_policy: VirtualPolicy::Zero,
    };
    let prognosis = strategic_analysis(&game, &config).unwrap();
    println!("rule: {}", prognosis.rule);
    println!(
        "long-term end state {:.4}, realized {:.4}",
        prognosis.long_term.phi.last().unwrap()[0],
        prognosis.realized.phi.last().unwrap()[0]
    );
    let corrected = prognosis.segments.iter().filter(|s| s.corrected).count();
    println!(
        "{} segments, {corrected} corrected",
        prognosis.segments.len()
    );
    for w in prognosis.windows.iter().step_by(100) {
        println!(
            "t0 = {:<5} long-term rmse {:.4e}  segment rmse {:.4e}",
            w.t0, w.long_term_rmse, w.segment_rmse
        );
    }
}
