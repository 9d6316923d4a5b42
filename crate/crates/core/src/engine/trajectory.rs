use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ControlResolution, PlayerVectors};
use crate::model::GameDefinition;

/// Which columns a trajectory carries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub state_dim: usize,
    /// Realized-control width per player (0 when the player has no feedback law).
    pub u_dims: Vec<usize>,
    pub uo_dims: Vec<usize>,
    /// ε width per player; `None` when ε is not known.
    pub eps_dims: Option<Vec<usize>>,
    pub v_dims: Vec<usize>,
}

impl Layout {
    pub fn for_game(game: &GameDefinition, with_eps: bool) -> Self {
        Layout {
            state_dim: game.state_dim,
            u_dims: game
                .players
                .iter()
                .map(|p| {
                    if p.feedback.is_some() {
                        p.control_dim
                    } else {
                        0
                    }
                })
                .collect(),
            uo_dims: game.players.iter().map(|p| p.control_dim).collect(),
            eps_dims: with_eps.then(|| game.players.iter().map(|p| p.eps_dim).collect()),
            v_dims: game.coalitions.iter().map(|c| c.control_dim).collect(),
        }
    }

    /// Column names: `t, phi_j, u_i_j, uo_i_j, eps_i_j, v_c_j`.
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((0..self.state_dim).map(|j| format!("phi_{j}")));
        let block = |cols: &mut Vec<String>, prefix: &str, dims: &[usize]| {
            for (k, &d) in dims.iter().enumerate() {
                cols.extend((0..d).map(|j| format!("{prefix}_{}_{j}", k + 1)));
            }
        };
        block(&mut cols, "u", &self.u_dims);
        block(&mut cols, "uo", &self.uo_dims);
        if let Some(e) = &self.eps_dims {
            block(&mut cols, "eps", e);
        }
        block(&mut cols, "v", &self.v_dims);
        cols
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub phi: Vec<f64>,
    pub u: PlayerVectors,
    pub uo: PlayerVectors,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<PlayerVectors>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub v: PlayerVectors,
}

impl Sample {
    pub fn from_resolution(t: f64, phi: Vec<f64>, res: ControlResolution, with_eps: bool) -> Self {
        Sample {
            t,
            phi,
            u: res.u,
            uo: res.uo,
            eps: with_eps.then_some(res.eps),
            v: res.v,
        }
    }
}

/// Time-indexed record of a run on a uniform grid `t_k = t0 + k h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub game: String,
    pub step: f64,
    pub layout: Layout,
    pub samples: Vec<Sample>,
    /// The left difference at the first grid point is taken as zero.
    pub zero_initial_left_difference: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Csv,
    JsonLines,
}

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad column layout: {0}")]
    Layout(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// 17 significant digits; parses back to the identical value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl Trajectory {
    pub fn empty(game: &GameDefinition, with_eps: bool) -> Self {
        Trajectory {
            game: game.name.clone(),
            step: game.horizon.step,
            layout: Layout::for_game(game, with_eps),
            samples: Vec::new(),
            zero_initial_left_difference: true,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Drops the ε columns, as an observer would see the run.
    pub fn without_eps(mut self) -> Self {
        self.layout.eps_dims = None;
        for s in &mut self.samples {
            s.eps = None;
        }
        self
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Trajectory {
        Trajectory {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            ..self.clone()
        }
    }

    fn row(&self, s: &Sample) -> Vec<String> {
        let mut out = vec![fmt_f64(s.t)];
        out.extend(s.phi.iter().map(|x| fmt_f64(*x)));
        for block in [&s.u, &s.uo] {
            out.extend(block.iter().flatten().map(|x| fmt_f64(*x)));
        }
        if self.layout.eps_dims.is_some() {
            out.extend(s.eps.iter().flatten().flatten().map(|x| fmt_f64(*x)));
        }
        out.extend(s.v.iter().flatten().map(|x| fmt_f64(*x)));
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TrajectoryIoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.layout.header())?;
        for s in &self.samples {
            w.write_record(self.row(s))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TrajectoryIoError> {
        for s in &self.samples {
            let line = serde_json::to_string(s)
                .map_err(|source| TrajectoryIoError::Json { line: 0, source })?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn write<W: Write>(
        &self,
        out: W,
        format: TrajectoryFormat,
    ) -> Result<(), TrajectoryIoError> {
        match format {
            TrajectoryFormat::Csv => self.write_csv(out),
            TrajectoryFormat::JsonLines => self.write_jsonl(out),
        }
    }

    /// Reads a CSV export; the layout is reconstructed from the header and
    /// checked against `game`.
    pub fn read_csv<R: std::io::Read>(
        game: &GameDefinition,
        input: R,
    ) -> Result<Self, TrajectoryIoError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let full = Layout::for_game(game, true);
        let layout = if header == full.header() {
            full
        } else {
            let bare = Layout::for_game(game, false);
            if header != bare.header() {
                return Err(TrajectoryIoError::Layout(format!(
                    "header does not match game `{}`: expected `{}`",
                    game.name,
                    bare.header().join(",")
                )));
            }
            bare
        };
        let mut samples = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let values = rec
                .iter()
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| TrajectoryIoError::Row {
                    row: row + 1,
                    message: e.to_string(),
                })?;
            let mut it = values.into_iter();
            let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
            let t = take(1)[0];
            let phi = take(layout.state_dim);
            let u = layout.u_dims.iter().map(|&d| take(d)).collect();
            let uo = layout.uo_dims.iter().map(|&d| take(d)).collect();
            let eps = layout
                .eps_dims
                .as_ref()
                .map(|dims| dims.iter().map(|&d| take(d)).collect());
            let v = layout.v_dims.iter().map(|&d| take(d)).collect();
            samples.push(Sample {
                t,
                phi,
                u,
                uo,
                eps,
                v,
            });
        }
        Self::assemble(game, layout, samples)
    }

    pub fn read_jsonl<R: BufRead>(
        game: &GameDefinition,
        input: R,
    ) -> Result<Self, TrajectoryIoError> {
        let mut samples: Vec<Sample> = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str(&line).map_err(|source| {
                TrajectoryIoError::Json {
                    line: k + 1,
                    source,
                }
            })?);
        }
        let with_eps = samples.first().is_some_and(|s| s.eps.is_some());
        let layout = Layout::for_game(game, with_eps);
        Self::assemble(game, layout, samples)
    }

    fn assemble(
        game: &GameDefinition,
        layout: Layout,
        samples: Vec<Sample>,
    ) -> Result<Self, TrajectoryIoError> {
        let h = game.horizon.step;
        for (k, s) in samples.iter().enumerate() {
            let widths_ok = s.phi.len() == layout.state_dim
                && s.u.iter().map(Vec::len).eq(layout.u_dims.iter().copied())
                && s.uo.iter().map(Vec::len).eq(layout.uo_dims.iter().copied())
                && s.v.iter().map(Vec::len).eq(layout.v_dims.iter().copied());
            if !widths_ok {
                return Err(TrajectoryIoError::Row {
                    row: k + 1,
                    message: "column widths do not match the game".into(),
                });
            }
            let expected = game.horizon.time(k);
            if (s.t - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(TrajectoryIoError::Row {
                    row: k + 1,
                    message: format!("t = {} is off the grid (expected {expected})", s.t),
                });
            }
        }
        Ok(Trajectory {
            game: game.name.clone(),
            step: h,
            layout,
            samples,
            zero_initial_left_difference: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::simulate;
    use crate::model::load_game;

    #[test]
    fn csv_header_and_rendering() {
        let g = load_game(include_str!("../../games/lin1.json")).unwrap();
        let traj = simulate(&g).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,phi_0,u_1_0,u_2_0,uo_1_0,uo_2_0,eps_1_0,eps_2_0"
        );
        assert_eq!(
            lines.next().unwrap(),
            "0.0000000000000000e0,0.0000000000000000e0,1.0000000000000000e0,-5.0000000000000000e-1,\
             1.0000000000000000e0,-5.0000000000000000e-1,2.0000000000000001e-1,1.0000000000000001e-1"
        );
        assert_eq!(text.lines().count(), 1002);
    }

    #[test]
    fn csv_and_jsonl_read_back_exactly() {
        let g = load_game(include_str!("../../games/coalition2.json")).unwrap();
        let traj = simulate(&g).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert_eq!(Trajectory::read_csv(&g, buf.as_slice()).unwrap(), traj);
        let mut buf = Vec::new();
        traj.write_jsonl(&mut buf).unwrap();
        assert_eq!(Trajectory::read_jsonl(&g, buf.as_slice()).unwrap(), traj);
    }

    #[test]
    fn observed_csv_without_eps() {
        let g = load_game(include_str!("../../games/lin1.json")).unwrap();
        let traj = simulate(&g).unwrap().without_eps();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(&g, buf.as_slice()).unwrap();
        assert!(back.layout.eps_dims.is_none());
        assert_eq!(back, traj);
    }

    #[test]
    fn mismatched_header_is_rejected() {
        let g = load_game(include_str!("../../games/lin1.json")).unwrap();
        let err = Trajectory::read_csv(&g, "t,phi_0\n0,0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TrajectoryIoError::Layout(_)));
    }
}
