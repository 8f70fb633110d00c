//! Configs and runners for each subcommand. Runners return artifacts;
//! writing them is left to the caller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ilt_core::capacity::{capacity_mc, equilibrium_solve, variational_lower_bound};
use ilt_core::error::Error;
use ilt_core::experiments::{self, Artifact};
use ilt_core::lattice::simulate_replica;
use ilt_core::moments::{default_exponent_grid, moment_table, tail_fit_weighted, zeta_samples_tilted};
use ilt_core::rate::{minimize_rate, OptimizerConfig};
use ilt_core::sets::{cube, l1_ball, random_connected_set, read_sites};
use ilt_core::stats::ImportanceWeights;
use ilt_core::trail::enumerate::{exhaustive_multinomial_check, exhaustive_trail_check, sampled_trail_check, CheckReport};
use ilt_core::{ExperimentConfig, GreenOracle, Horizon, LatticePoint, StreamKey};

pub type Outcome = std::result::Result<Vec<Artifact>, Error>;

fn invalid(field: &'static str, reason: &str) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.to_string(),
    }
}

fn json_artifact<T: Serialize>(name: &str, value: &T) -> Result<Artifact, Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(Artifact {
        name: name.into(),
        bytes,
    })
}

fn check_dim(dim: usize) -> Result<(), Error> {
    if (3..=8).contains(&dim) {
        Ok(())
    } else {
        Err(Error::InvalidDimension {
            dim,
            expected: "3..=8",
        })
    }
}

/// How a site set is given in a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetSpec {
    Sites(Vec<LatticePoint>),
    L1Ball(i64),
    Cube(i32),
    RandomConnected { size: usize, seed: u64 },
    File(String),
}

impl SetSpec {
    pub fn resolve(&self, dim: usize) -> Result<Vec<LatticePoint>, Error> {
        let sites = match self {
            SetSpec::Sites(s) => s.clone(),
            SetSpec::L1Ball(r) if *r >= 0 => l1_ball(dim, *r),
            SetSpec::Cube(side) if *side >= 1 => cube(dim, *side),
            SetSpec::RandomConnected { size, seed } if *size >= 1 => {
                random_connected_set(dim, *size, &mut ChaCha8Rng::seed_from_u64(*seed))
            }
            SetSpec::File(path) => read_sites(path.as_ref())?,
            _ => return Err(invalid("set", "size parameter out of range")),
        };
        if sites.iter().any(|z| z.dim() != dim) {
            return Err(invalid("set", "site dimension differs from dim"));
        }
        ilt_core::sets::validate_sites(&sites)?;
        Ok(sites)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConfig {
    pub dim: usize,
    pub box_radius: u32,
}

impl GreenConfig {
    pub fn validate(&self) -> Result<(), Error> {
        check_dim(self.dim)?;
        if self.box_radius < 2 {
            return Err(invalid("box_radius", "must be at least 2"));
        }
        Ok(())
    }

    pub fn run(&self) -> Outcome {
        let g = GreenOracle::solve(self.dim, self.box_radius)?;
        let mut table = Vec::new();
        g.export(&mut table)?;
        Ok(vec![
            Artifact {
                name: "green_table.txt".into(),
                bytes: table,
            },
            json_artifact("green_summary.json", &g.summary())?,
        ])
    }
}

fn default_box() -> u32 {
    12
}

fn default_methods() -> Vec<String> {
    vec!["equilibrium".into(), "variational".into()]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityConfig {
    pub dim: usize,
    pub set: SetSpec,
    #[serde(default = "default_box")]
    pub box_radius: u32,
    /// Any of `equilibrium`, `variational`, `escape_mc`.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replicas: u64,
    #[serde(default)]
    pub stop_radius: u32,
}

#[derive(Serialize)]
struct CapacityReport {
    size: usize,
    equilibrium: Option<ilt_core::EquilibriumSolution>,
    escape_mc: Option<ilt_core::EquilibriumSolution>,
    variational: Option<ilt_core::capacity::VariationalBound>,
}

impl CapacityConfig {
    pub fn validate(&self) -> Result<(), Error> {
        check_dim(self.dim)?;
        for m in &self.methods {
            if !["equilibrium", "variational", "escape_mc"].contains(&m.as_str()) {
                return Err(invalid("methods", "unknown method"));
            }
        }
        if self.methods.iter().any(|m| m == "escape_mc") && (self.replicas == 0 || self.stop_radius == 0) {
            return Err(invalid("replicas", "escape_mc needs replicas and stop_radius"));
        }
        self.set.resolve(self.dim).map(|_| ())
    }

    pub fn run(&self) -> Outcome {
        let sites = self.set.resolve(self.dim)?;
        let g = GreenOracle::solve(self.dim, self.box_radius)?;
        let has = |m: &str| self.methods.iter().any(|x| x == m);
        let report = CapacityReport {
            size: sites.len(),
            equilibrium: has("equilibrium").then(|| equilibrium_solve(&sites, &g)).transpose()?,
            escape_mc: has("escape_mc")
                .then(|| capacity_mc(&sites, self.replicas, self.stop_radius, self.seed, &g))
                .transpose()?,
            variational: has("variational").then(|| variational_lower_bound(&sites, &g)).transpose()?,
        };
        Ok(vec![json_artifact("capacity.json", &report)?])
    }
}

fn default_q() -> f64 {
    2.0
}

fn default_n_max() -> u32 {
    4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub dim: usize,
    pub seed: u64,
    pub pairs: u64,
    pub stop_radius: u32,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_n_max")]
    pub n_max: u32,
    #[serde(default = "default_box")]
    pub box_radius: u32,
    /// Harmonic tilt strength; 0 gives plain MC.
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "plain_share")]
    pub plain_share: f64,
}

fn plain_share() -> f64 {
    0.5
}

impl MomentsConfig {
    pub fn validate(&self) -> Result<(), Error> {
        check_dim(self.dim)?;
        if self.pairs == 0 {
            return Err(invalid("pairs", "must be at least 1"));
        }
        if self.stop_radius == 0 {
            return Err(invalid("stop_radius", "must be at least 1"));
        }
        if !(self.q > 1.0 && self.q <= 2.0) {
            return Err(invalid("q", "must lie in (1, 2]"));
        }
        if !(1..=4).contains(&self.n_max) {
            return Err(invalid("n_max", "must be in 1..=4"));
        }
        if !(0.0..1.0).contains(&self.theta) {
            return Err(invalid("theta", "must lie in [0, 1)"));
        }
        if !(self.plain_share > 0.0 && self.plain_share <= 1.0) {
            return Err(invalid("plain_share", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn run(&self) -> Outcome {
        let g = GreenOracle::solve(self.dim, self.box_radius)?;
        let (values, log_w) = zeta_samples_tilted(
            &g,
            self.q,
            self.pairs,
            self.stop_radius,
            self.seed,
            self.theta,
            self.plain_share,
        )?;
        let mut out = Vec::new();
        if self.theta == 0.0 {
            out.push(json_artifact("moments.json", &moment_table(&values, self.q, self.n_max)?)?);
        }
        let fit = tail_fit_weighted(&values, &ImportanceWeights::from_log(&log_w), &default_exponent_grid())?;
        let mut tail = Vec::new();
        fit.write_csv(&mut tail)?;
        out.push(Artifact {
            name: "tail.csv".into(),
            bytes: tail,
        });
        let mut sidecar = fit.fit_json()?.into_bytes();
        sidecar.push(b'\n');
        out.push(Artifact {
            name: "tail_fit.json".into(),
            bytes: sidecar,
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledCheck {
    pub size: usize,
    pub instances: usize,
    pub per_set: usize,
    pub seed: u64,
    #[serde(default = "default_box")]
    pub box_radius: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrailCheckConfig {
    pub dim: usize,
    pub radius: i64,
    pub max_size: usize,
    pub max_len: usize,
    /// Bounds of the multinomial check, `(t, |Λ|)`.
    #[serde(default)]
    pub multinomial: Option<(usize, usize)>,
    #[serde(default)]
    pub sampled: Option<SampledCheck>,
}

#[derive(Serialize)]
struct TrailReport {
    exhaustive: CheckReport,
    multinomial: Option<CheckReport>,
    sampled: Option<CheckReport>,
    passed: bool,
}

impl TrailCheckConfig {
    pub fn validate(&self) -> Result<(), Error> {
        check_dim(self.dim)?;
        if !(1..=3).contains(&self.radius) {
            return Err(invalid("radius", "must be in 1..=3"));
        }
        if !(1..=5).contains(&self.max_size) {
            return Err(invalid("max_size", "must be in 1..=5"));
        }
        if !(1..=10).contains(&self.max_len) {
            return Err(invalid("max_len", "must be in 1..=10"));
        }
        if let Some((t, m)) = self.multinomial {
            if !(1..=8).contains(&t) || !(1..=4).contains(&m) {
                return Err(invalid("multinomial", "needs t in 1..=8 and |Λ| in 1..=4"));
            }
        }
        if let Some(s) = &self.sampled {
            if s.size < 2 || s.per_set == 0 || s.instances == 0 {
                return Err(invalid("sampled", "needs size >= 2 and positive counts"));
            }
        }
        Ok(())
    }

    pub fn run(&self) -> Outcome {
        let exhaustive = exhaustive_trail_check(self.dim, self.radius, self.max_size, self.max_len);
        let multinomial = self.multinomial.map(|(t, m)| exhaustive_multinomial_check(t, m));
        let sampled = match &self.sampled {
            Some(s) => {
                let g = GreenOracle::solve(self.dim, s.box_radius)?;
                Some(sampled_trail_check(&g, s.size, s.instances, s.per_set, s.seed)?)
            }
            None => None,
        };
        let passed = exhaustive.passed()
            && multinomial.as_ref().map_or(true, |r| r.passed())
            && sampled.as_ref().map_or(true, |r| r.passed());
        Ok(vec![json_artifact(
            "trail_check.json",
            &TrailReport {
                exhaustive,
                multinomial,
                sampled,
                passed,
            },
        )?])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub dim: usize,
    pub set: SetSpec,
    #[serde(default = "default_box")]
    pub box_radius: u32,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl RateConfig {
    pub fn validate(&self) -> Result<(), Error> {
        check_dim(self.dim)?;
        let o = &self.optimizer;
        if !(o.initial_step > 0.0 && o.min_step > 0.0 && o.min_step <= o.initial_step) {
            return Err(invalid("optimizer", "steps must satisfy 0 < min_step <= initial_step"));
        }
        if !(o.calibration_tol > 0.0) {
            return Err(invalid("optimizer", "calibration_tol must be positive"));
        }
        self.set.resolve(self.dim).map(|_| ())
    }

    pub fn run(&self) -> Outcome {
        let sites = self.set.resolve(self.dim)?;
        let g = GreenOracle::solve(self.dim, self.box_radius)?;
        let result = minimize_rate(&sites, &g, &self.optimizer)?;
        Ok(vec![json_artifact("rate.json", &result)?])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub dim: usize,
    pub seed: u64,
    pub replicas: u64,
    pub horizon: Horizon,
    #[serde(default = "yes")]
    pub origin_included: bool,
}

fn yes() -> bool {
    true
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), Error> {
        check_dim(self.dim)?;
        if self.replicas == 0 {
            return Err(invalid("replicas", "must be at least 1"));
        }
        self.horizon.validate(self.dim)
    }

    pub fn run(&self) -> Outcome {
        use rayon::prelude::*;
        let fields = (0..self.replicas)
            .into_par_iter()
            .map(|i| simulate_replica(self.dim, StreamKey::new(self.seed, i), self.horizon, self.origin_included))
            .collect::<Result<Vec<_>, _>>()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["replica".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x{i}")));
        header.push("visits".into());
        w.write_record(&header)?;
        let mut summary = csv::Writer::from_writer(Vec::new());
        summary.write_record(["replica", "steps", "range", "visits"])?;
        for (i, f) in fields.iter().enumerate() {
            for (z, c) in f.sorted() {
                let mut row = vec![i.to_string()];
                row.extend(z.coords().iter().map(|a| a.to_string()));
                row.push(c.to_string());
                w.write_record(&row)?;
            }
            summary.write_record([i.to_string(), f.steps().to_string(), f.len().to_string(), f.total().to_string()])?;
        }
        let finish = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| Error::Io(e.into_error()));
        Ok(vec![
            Artifact {
                name: "local_times.csv".into(),
                bytes: finish(w)?,
            },
            Artifact {
                name: "walks.csv".into(),
                bytes: finish(summary)?,
            },
        ])
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Outcome {
    experiments::run_experiment(cfg)
}
