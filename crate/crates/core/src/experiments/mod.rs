//! Configuration-driven experiments. Each run returns its output files as
//! bytes so that callers decide where and how to write them.

mod decomposition;
mod forced_return;
mod geometry;
mod range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::green::GreenOracle;
use crate::lattice::{StreamKey, MAX_DIM};
use crate::tilt::{HarmonicTilt, WeightedSample};

pub use decomposition::run_intersection_decomposition;
pub use forced_return::run_forced_return;
pub use geometry::run_level_set_geometry;
pub use range::run_range_intersection;

/// One output file of an experiment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Settings shared by every experiment kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub seed: u64,
    /// Number of walk pairs (or single walks for `forced_return`).
    pub replicas: u64,
    /// Walks stop on first leaving `B(0, stop_radius)`.
    pub stop_radius: u32,
    /// Radius of the Green table used for tilts and capacities.
    #[serde(default = "default_oracle_box")]
    pub oracle_box: u32,
    #[serde(flatten)]
    pub kind: ExperimentKind,
}

fn default_oracle_box() -> u32 {
    12
}

fn default_plain_share() -> f64 {
    0.5
}

fn default_thetas() -> Vec<f64> {
    vec![0.0, 0.2, 0.35]
}

fn default_a_grid() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}

fn default_epsilon() -> f64 {
    0.2
}

fn default_l() -> u32 {
    1
}

fn default_window() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Inside/outside split of `⟨l, l̃⟩` over `D(√t/A) ∩ D̃(√t/A)`.
    Decomposition {
        t: f64,
        #[serde(default = "default_a_grid")]
        a_grid: Vec<f64>,
        #[serde(default)]
        theta: f64,
        #[serde(default = "default_plain_share")]
        plain_share: f64,
    },
    /// Return counts to the origin under a grid of tilt strengths.
    ForcedReturn {
        #[serde(default = "default_thetas")]
        thetas: Vec<f64>,
    },
    /// Volume and capacity of `ℒ(n) ∩ ℒ̃(m)` for a grid of levels.
    Geometry {
        levels: Vec<(u32, u32)>,
        l: u32,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default)]
        theta: f64,
        #[serde(default = "default_plain_share")]
        plain_share: f64,
        /// `κ_d` used when fitting the smallest admissible `C_d`.
        #[serde(default)]
        kappa: Option<f64>,
    },
    /// Tail of `|R_∞ ∩ R̃_∞|`.
    Range {
        /// Half-width of the accepted window around `1 - 2/d`.
        #[serde(default = "default_window")]
        window: f64,
        /// Repeat with re-paired walks and compare the two samples.
        #[serde(default)]
        swap_check: bool,
        /// Volume level reported as `P(|R ∩ R̃| >= L)`.
        #[serde(default = "default_l")]
        l: u32,
    },
}

impl ExperimentConfig {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ExperimentKind::Decomposition { .. } => "decomposition",
            ExperimentKind::ForcedReturn { .. } => "forced_return",
            ExperimentKind::Geometry { .. } => "geometry",
            ExperimentKind::Range { .. } => "range",
        }
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        if !(3..=MAX_DIM).contains(&self.dim) {
            return Err(invalid("dim", "must be in 3..=8"));
        }
        if self.replicas == 0 {
            return Err(invalid("replicas", "must be at least 1"));
        }
        if self.stop_radius == 0 {
            return Err(invalid("stop_radius", "must be at least 1"));
        }
        if self.oracle_box < 4 {
            return Err(invalid("oracle_box", "must be at least 4"));
        }
        let theta_ok = |t: f64| (0.0..1.0).contains(&t);
        let share_ok = |s: f64| s > 0.0 && s <= 1.0;
        match &self.kind {
            ExperimentKind::Decomposition {
                t,
                a_grid,
                theta,
                plain_share,
            } => {
                if !(*t > 0.0 && t.is_finite()) {
                    return Err(invalid("t", "must be positive"));
                }
                if a_grid.is_empty() || a_grid.iter().any(|a| !(*a > 0.0)) {
                    return Err(invalid("a_grid", "needs at least one positive value"));
                }
                if !theta_ok(*theta) {
                    return Err(invalid("theta", "must lie in [0, 1)"));
                }
                if !share_ok(*plain_share) {
                    return Err(invalid("plain_share", "must lie in (0, 1]"));
                }
            }
            ExperimentKind::ForcedReturn { thetas } => {
                if thetas.is_empty() || !thetas.iter().all(|t| theta_ok(*t)) {
                    return Err(invalid("thetas", "need values in [0, 1)"));
                }
                if !thetas.contains(&0.0) {
                    return Err(invalid("thetas", "must include 0 as the plain reference"));
                }
            }
            ExperimentKind::Geometry {
                levels,
                l,
                epsilon,
                theta,
                plain_share,
                kappa,
            } => {
                if levels.is_empty() || levels.iter().any(|&(n, m)| n == 0 || m == 0) {
                    return Err(invalid("levels", "need at least one pair of positive levels"));
                }
                if *l == 0 {
                    return Err(invalid("l", "must be at least 1"));
                }
                let d = self.dim as f64;
                if !(*epsilon > 0.0 && *epsilon < 2.0 / d) {
                    return Err(invalid("epsilon", "must lie in (0, 2/d)"));
                }
                if !theta_ok(*theta) {
                    return Err(invalid("theta", "must lie in [0, 1)"));
                }
                if !share_ok(*plain_share) {
                    return Err(invalid("plain_share", "must lie in (0, 1]"));
                }
                if kappa.is_some_and(|k| !(k > 0.0)) {
                    return Err(invalid("kappa", "must be positive"));
                }
                // visited sites lie within R + 1; capacities need their offsets two inside the box
                if self.oracle_box < 2 * self.stop_radius + 4 {
                    return Err(invalid("oracle_box", "must be at least 2 * stop_radius + 4 for capacities"));
                }
            }
            ExperimentKind::Range { window, l, .. } => {
                if !(*window > 0.0) {
                    return Err(invalid("window", "must be positive"));
                }
                if *l == 0 {
                    return Err(invalid("l", "must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

/// Validates, solves the Green table, and runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    cfg.validate()?;
    let oracle = GreenOracle::solve(cfg.dim, cfg.oracle_box)?;
    run_with_oracle(cfg, &oracle)
}

/// As [`run_experiment`] with a prepared oracle of matching dimension.
pub fn run_with_oracle(cfg: &ExperimentConfig, oracle: &GreenOracle) -> Result<Vec<Artifact>> {
    cfg.validate()?;
    if oracle.dim() != cfg.dim {
        return Err(invalid("dim", "differs from the oracle dimension"));
    }
    match cfg.kind {
        ExperimentKind::Decomposition { .. } => run_intersection_decomposition(cfg, oracle),
        ExperimentKind::ForcedReturn { .. } => run_forced_return(cfg, oracle),
        ExperimentKind::Geometry { .. } => run_level_set_geometry(cfg, oracle),
        ExperimentKind::Range { .. } => run_range_intersection(cfg, oracle),
    }
}

/// Pair `i` uses streams `2i` and `2i + 1`.
pub(crate) fn sample_pair(
    tilt: &HarmonicTilt,
    seed: u64,
    i: u64,
    stop_radius: u32,
    plain_share: f64,
) -> Result<(WeightedSample, WeightedSample)> {
    Ok((
        tilt.sample_mixture(StreamKey::new(seed, 2 * i), stop_radius, plain_share)?,
        tilt.sample_mixture(StreamKey::new(seed, 2 * i + 1), stop_radius, plain_share)?,
    ))
}

/// CSV with a leading `# <kind> v<version>` line, then a header row.
pub(crate) struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub(crate) fn new(kind: &str, version: u32, header: &[&str]) -> Result<Self> {
        let mut buf = Vec::new();
        buf.extend_from_slice(format!("# {kind} v{version}\n").as_bytes());
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub(crate) fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        Ok(self.writer.write_record(fields)?)
    }

    pub(crate) fn finish(self, name: &str) -> Result<Artifact> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| crate::error::Error::Io(e.into_error()))?;
        Ok(Artifact {
            name: name.to_string(),
            bytes,
        })
    }
}

pub(crate) fn json_artifact<T: Serialize>(name: &str, value: &T) -> Result<Artifact> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(Artifact {
        name: name.to_string(),
        bytes,
    })
}

/// Optional float as a CSV field.
pub(crate) fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}
