use rayon::prelude::*;
use serde::Serialize;

use super::{json_artifact, opt, sample_pair, Artifact, CsvOut, ExperimentConfig, ExperimentKind};
use crate::capacity::equilibrium_solve;
use crate::error::{Error, Result};
use crate::green::GreenOracle;
use crate::lattice::{level_set, LatticePoint, LevelMode, LocalTimeField};
use crate::stats::ImportanceWeights;
use crate::tilt::{HarmonicTilt, MIN_ESS};
use crate::trail::{intersection_bound_evaluators, IntersectionConstants};

pub const SCHEMA_VERSION: u32 = 1;

/// Width of the capacity histogram bins.
pub const HISTOGRAM_BIN: f64 = 0.1;

/// `ℒ(n) ∩ ℒ̃(m)`, sorted.
pub fn level_intersection(a: &LocalTimeField, b: &LocalTimeField, n: u32, m: u32) -> Vec<LatticePoint> {
    level_set(a, LevelMode::Exactly(n))
        .into_iter()
        .filter(|z| b.get(z) == m)
        .collect()
}

struct Cell {
    volume: usize,
    capacity: Option<f64>,
}

#[derive(Serialize)]
struct LevelSummary {
    n: u32,
    m: u32,
    l: u32,
    threshold: f64,
    probability: f64,
    probability_se: f64,
    conditioned_ess: f64,
    /// False when the conditioned effective sample size is below the floor.
    resolved: bool,
    mean_capacity: Option<f64>,
    below_threshold_fraction: Option<f64>,
    log_lower: f64,
    lower_dominated: bool,
    log_probability: f64,
    kappa: f64,
    /// Smallest `C_d` making the upper form dominate the estimate.
    c_upper_fit: Option<f64>,
}

#[derive(Serialize)]
struct GeometryReport {
    theta: f64,
    plain_share: f64,
    pairs: u64,
    ess: f64,
    epsilon: f64,
    levels: Vec<LevelSummary>,
}

/// Volume and capacity of `ℒ(n) ∩ ℒ̃(m)` over a grid of `(n, m)`.
///
/// Outputs `geometry_pairs.csv`, `geometry_histogram.csv` (capacity
/// conditioned on volume at least `L`) and `geometry.json`.
pub fn run_level_set_geometry(cfg: &ExperimentConfig, oracle: &GreenOracle) -> Result<Vec<Artifact>> {
    let ExperimentKind::Geometry {
        ref levels,
        l,
        epsilon,
        theta,
        plain_share,
        kappa,
    } = cfg.kind
    else {
        unreachable!("dispatched by kind")
    };
    let d = cfg.dim as f64;
    let threshold = (l as f64).powf(1.0 - 2.0 / d + epsilon);
    let kappa = kappa.unwrap_or(1.0 / oracle.g0());
    let tilt = HarmonicTilt::new(theta, oracle)?;
    let pairs: Vec<(f64, Vec<Cell>)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let (a, b) = sample_pair(&tilt, cfg.seed, i, cfg.stop_radius, plain_share)?;
            let cells = levels
                .iter()
                .map(|&(n, m)| {
                    let set = level_intersection(&a.field, &b.field, n, m);
                    let capacity = if !set.is_empty() && set.len() >= l as usize {
                        Some(equilibrium_solve(&set, oracle)?.capacity)
                    } else {
                        None
                    };
                    Ok(Cell {
                        volume: set.len(),
                        capacity,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((a.log_weight + b.log_weight, cells))
        })
        .collect::<Result<_>>()?;

    let log_w: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let weights = ImportanceWeights::from_log(&log_w);
    let ess = weights.ess();
    if ess < MIN_ESS {
        return Err(Error::EffectiveSampleSizeTooSmall { ess, required: MIN_ESS });
    }
    let site_cap = 1.0 / oracle.g0();

    let mut rows = CsvOut::new(
        "geometry",
        SCHEMA_VERSION,
        &["pair", "n", "m", "volume", "capacity", "capacity_bound", "threshold", "log_weight"],
    )?;
    for (i, (lw, cells)) in pairs.iter().enumerate() {
        for (&(n, m), c) in levels.iter().zip(cells) {
            rows.row([
                i.to_string(),
                n.to_string(),
                m.to_string(),
                c.volume.to_string(),
                opt(c.capacity),
                (c.volume as f64 * site_cap).to_string(),
                threshold.to_string(),
                lw.to_string(),
            ])?;
        }
    }

    let mut hist = CsvOut::new(
        "geometry_histogram",
        SCHEMA_VERSION,
        &["n", "m", "bin_low", "bin_high", "weight_fraction"],
    )?;
    let mut summaries = Vec::with_capacity(levels.len());
    for (k, &(n, m)) in levels.iter().enumerate() {
        let hit: Vec<f64> = pairs
            .iter()
            .map(|p| if p.1[k].volume >= l as usize { 1.0 } else { 0.0 })
            .collect();
        let prob = weights.estimate(&hit);
        let cond_lw: Vec<f64> = pairs
            .iter()
            .map(|p| if p.1[k].volume >= l as usize { p.0 } else { f64::NEG_INFINITY })
            .collect();
        let cond = ImportanceWeights::from_log(&cond_lw);
        let cond_ess = if prob.mean > 0.0 { cond.ess() } else { 0.0 };
        let resolved = cond_ess >= MIN_ESS;
        let caps: Vec<f64> = pairs.iter().map(|p| p.1[k].capacity.unwrap_or(0.0)).collect();
        let (mean_capacity, below) = if resolved {
            let below: Vec<f64> = caps.iter().map(|&c| if c <= threshold { 1.0 } else { 0.0 }).collect();
            let total: f64 = cond.weights.iter().sum();
            let top = caps.iter().copied().fold(0.0, f64::max);
            let bins = (top / HISTOGRAM_BIN).floor() as usize + 1;
            let mut mass = vec![0.0; bins];
            for (c, w) in caps.iter().zip(&cond.weights) {
                if *w > 0.0 {
                    mass[(c / HISTOGRAM_BIN).floor() as usize] += w / total;
                }
            }
            for (b, w) in mass.iter().enumerate() {
                hist.row([
                    n.to_string(),
                    m.to_string(),
                    (b as f64 * HISTOGRAM_BIN).to_string(),
                    ((b + 1) as f64 * HISTOGRAM_BIN).to_string(),
                    w.to_string(),
                ])?;
            }
            (Some(cond.estimate(&caps).mean), Some(cond.estimate(&below).mean))
        } else {
            (None, None)
        };
        let consts = IntersectionConstants {
            dim: cfg.dim,
            c_upper: 1.0,
            kappa,
            epsilon,
        };
        let at_one = intersection_bound_evaluators(n as u64, m as u64, l as u64, &consts)?;
        // the upper form scales as C^L
        let c_upper_fit = (prob.mean > 0.0)
            .then(|| ((prob.mean.ln() - at_one.log_upper) / l as f64).exp());
        summaries.push(LevelSummary {
            n,
            m,
            l,
            threshold,
            probability: prob.mean,
            probability_se: prob.se,
            conditioned_ess: cond_ess,
            resolved,
            mean_capacity,
            below_threshold_fraction: below,
            log_lower: at_one.log_lower,
            lower_dominated: prob.mean + 3.0 * prob.se >= at_one.lower,
            log_probability: prob.mean.ln(),
            kappa,
            c_upper_fit,
        });
    }

    Ok(vec![
        rows.finish("geometry_pairs.csv")?,
        hist.finish("geometry_histogram.csv")?,
        json_artifact(
            "geometry.json",
            &GeometryReport {
                theta,
                plain_share,
                pairs: cfg.replicas,
                ess,
                epsilon,
                levels: summaries,
            },
        )?,
    ])
}
