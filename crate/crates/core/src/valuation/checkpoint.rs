//! Versioned, checksummed text checkpoints of a running estimator.
//!
//! Floats are stored as the hex of their bit patterns so a reload is exact.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ConvergenceConfig, ConvergenceMonitor, RunState, ValueAccumulator};
use crate::error::{Error, Result};

const MAGIC: &str = "pcwinter-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: RunState,
    pub dataset_hash: String,
    pub config_hash: String,
}

impl Checkpoint {
    /// Fails unless the checkpoint belongs to a tree of `players` players
    /// built from the dataset with hash `dataset_hash`.
    pub fn verify(&self, players: usize, dataset_hash: &str) -> Result<()> {
        if self.state.acc.len() != players {
            return Err(Error::Integrity(format!(
                "checkpoint has {} players, expected {players}",
                self.state.acc.len()
            )));
        }
        if self.dataset_hash != dataset_hash {
            return Err(Error::Integrity(format!(
                "checkpoint dataset {} does not match {dataset_hash}",
                self.dataset_hash
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let acc = &self.state.acc;
        let mon = &self.state.monitor;
        let opt = |v: Option<u64>| v.map_or("-".to_string(), |x| x.to_string());
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "seed {}", acc.seed);
        let _ = writeln!(s, "traversals {}", acc.traversals);
        let _ = writeln!(s, "retrainings {}", acc.retrainings);
        let _ = writeln!(s, "players {}", acc.len());
        let _ = writeln!(s, "dataset {}", or_dash(&self.dataset_hash));
        let _ = writeln!(s, "config {}", or_dash(&self.config_hash));
        let _ = writeln!(
            s,
            "convergence {} {:016x} {:016x}",
            mon.config.window,
            mon.config.tolerance.to_bits(),
            mon.config.epsilon.to_bits()
        );
        let _ = writeln!(s, "last {}", opt(mon.last_traversal()));
        let _ = writeln!(s, "converged {}", opt(mon.converged_at()));
        let _ = writeln!(s, "sums {}", hex_floats(&acc.sums));
        let counts: Vec<String> = acc.counts.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "counts {}", counts.join(" "));
        for snap in mon.snapshots() {
            let _ = writeln!(s, "snapshot {}", hex_floats(snap));
        }
        let digest = hex::encode(Sha256::digest(s.as_bytes()));
        let _ = writeln!(s, "checksum {digest}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body_end = text
            .rfind("checksum ")
            .ok_or_else(|| Error::Integrity("checkpoint has no checksum".into()))?;
        let (body, tail) = text.split_at(body_end);
        let stored = tail["checksum ".len()..].trim();
        let actual = hex::encode(Sha256::digest(body.as_bytes()));
        if stored != actual {
            return Err(Error::Integrity("checkpoint checksum mismatch".into()));
        }
        let mut lines = body.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Integrity("unrecognized checkpoint header".into()));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Integrity(format!("checkpoint is missing {name}")))?;
            line.strip_prefix(name)
                .and_then(|r| {
                    r.strip_prefix(' ')
                        .or(if r.is_empty() { Some("") } else { None })
                })
                .map(str::to_string)
                .ok_or_else(|| Error::Integrity(format!("expected {name}, found {line:?}")))
        };
        let seed = parse_u64(&field("seed")?)?;
        let traversals = parse_u64(&field("traversals")?)?;
        let retrainings = parse_u64(&field("retrainings")?)?;
        let players = parse_u64(&field("players")?)? as usize;
        let dataset_hash = from_dash(field("dataset")?);
        let config_hash = from_dash(field("config")?);
        let conv = field("convergence")?;
        let parts: Vec<&str> = conv.split(' ').collect();
        let [w, tol, eps] = parts[..] else {
            return Err(Error::Integrity("malformed convergence line".into()));
        };
        let config = ConvergenceConfig {
            window: parse_u64(w)? as usize,
            tolerance: parse_hex_float(tol)?,
            epsilon: parse_hex_float(eps)?,
        };
        let last = parse_opt(&field("last")?)?;
        let converged = parse_opt(&field("converged")?)?;
        let sums = parse_hex_floats(&field("sums")?, players)?;
        let counts = field("counts")?;
        let counts: Vec<u64> = counts
            .split_whitespace()
            .map(parse_u64)
            .collect::<Result<_>>()?;
        if counts.len() != players {
            return Err(Error::Integrity(format!(
                "{} counts for {players} players",
                counts.len()
            )));
        }
        let mut history = Vec::new();
        while let Ok(snap) = field("snapshot") {
            history.push(parse_hex_floats(&snap, players)?);
        }
        Ok(Checkpoint {
            state: RunState {
                acc: ValueAccumulator {
                    sums,
                    counts,
                    traversals,
                    retrainings,
                    seed,
                },
                monitor: ConvergenceMonitor::restore(config, history, last, converged),
            },
            dataset_hash,
            config_hash,
        })
    }
}

fn or_dash(s: &str) -> &str {
    if s.is_empty() {
        "-"
    } else {
        s
    }
}

fn from_dash(s: String) -> String {
    if s == "-" {
        String::new()
    } else {
        s
    }
}

fn hex_floats(v: &[f64]) -> String {
    let mut s = String::with_capacity(v.len() * 17);
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{:016x}", x.to_bits());
    }
    s
}

fn parse_u64(s: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| Error::Integrity(format!("bad integer {s:?} in checkpoint")))
}

fn parse_opt(s: &str) -> Result<Option<u64>> {
    if s == "-" {
        Ok(None)
    } else {
        parse_u64(s).map(Some)
    }
}

fn parse_hex_float(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Integrity(format!("bad float {s:?} in checkpoint")))
}

fn parse_hex_floats(s: &str, expected: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(parse_hex_float)
        .collect::<Result<_>>()?;
    if v.len() != expected {
        return Err(Error::Integrity(format!(
            "{} values for {expected} players",
            v.len()
        )));
    }
    Ok(v)
}

pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, cp.to_text()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::p3_tree;
    use crate::valuation::{run_pc_winter, EstimatorConfig, FnGame, RunBudget};

    fn sample() -> Checkpoint {
        let cfg = EstimatorConfig {
            budget: RunBudget {
                max_traversals: Some(25),
                max_wall_clock: None,
            },
            stop_on_convergence: false,
            seed: 5,
            ..EstimatorConfig::default()
        };
        let g = FnGame::new(
            4,
            |s: &[bool]| if s[2] { 0.3 } else { 0.1 } + if s[3] { 0.01 } else { 0.0 },
        );
        let mut state = RunState::new(4, &cfg).unwrap();
        run_pc_winter(&g, &p3_tree(), &cfg, &mut state).unwrap();
        Checkpoint {
            state,
            dataset_hash: "abc".into(),
            config_hash: String::new(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let cp = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        save_checkpoint(&cp, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), cp);
    }

    #[test]
    fn corruption_is_detected() {
        let text = sample()
            .to_text()
            .replacen("traversals 25", "traversals 24", 1);
        assert!(matches!(
            Checkpoint::from_text(&text),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            Checkpoint::from_text("junk"),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn verify_checks_players_and_dataset() {
        let cp = sample();
        assert!(cp.verify(4, "abc").is_ok());
        assert!(matches!(cp.verify(5, "abc"), Err(Error::Integrity(_))));
        assert!(matches!(cp.verify(4, "abd"), Err(Error::Integrity(_))));
    }
}
