use rayon::prelude::*;
use serde::Serialize;

use super::{json_artifact, sample_pair, Artifact, CsvOut, ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::green::GreenOracle;
use crate::lattice::LocalTimeField;
use crate::stats::ImportanceWeights;
use crate::tilt::{HarmonicTilt, MIN_ESS};

pub const SCHEMA_VERSION: u32 = 1;

struct PairSplit {
    log_weight: f64,
    total: f64,
    /// `(threshold, inside)` per grid entry, the `A = ∞` row last.
    inside: Vec<(f64, f64)>,
}

fn split(a: &LocalTimeField, b: &LocalTimeField, thresholds: &[f64]) -> (f64, Vec<(f64, f64)>) {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut total = 0.0;
    let mut inside = vec![0.0; thresholds.len()];
    for (z, &x) in small.iter() {
        let y = large.get(z);
        if y == 0 {
            continue;
        }
        let prod = x as f64 * y as f64;
        total += prod;
        let low = x.min(y) as f64;
        for (acc, &tau) in inside.iter_mut().zip(thresholds) {
            if low >= tau {
                *acc += prod;
            }
        }
    }
    (total, thresholds.iter().copied().zip(inside).collect())
}

#[derive(Serialize)]
struct Summary {
    t: f64,
    theta: f64,
    plain_share: f64,
    pairs: u64,
    ess: f64,
    exceed_probability: f64,
    exceed_probability_se: f64,
    exceed_ess: f64,
}

/// Splits `⟨l, l̃⟩` into the part carried by sites where both local times
/// reach `√t/A` and the rest.
///
/// Outputs `decomposition_pairs.csv` (one row per pair and `A`),
/// `decomposition_summary.csv` (fractions conditioned on `⟨l, l̃⟩ > t`
/// and unconditioned) and `decomposition.json`.
pub fn run_intersection_decomposition(cfg: &ExperimentConfig, oracle: &GreenOracle) -> Result<Vec<Artifact>> {
    let ExperimentKind::Decomposition {
        t,
        ref a_grid,
        theta,
        plain_share,
    } = cfg.kind
    else {
        unreachable!("dispatched by kind")
    };
    let tilt = HarmonicTilt::new(theta, oracle)?;
    let mut thresholds: Vec<f64> = a_grid.iter().map(|a| t.sqrt() / a).collect();
    thresholds.push(0.0);
    let pairs: Vec<PairSplit> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| {
            let (a, b) = sample_pair(&tilt, cfg.seed, i, cfg.stop_radius, plain_share)?;
            let (total, inside) = split(&a.field, &b.field, &thresholds);
            Ok(PairSplit {
                log_weight: a.log_weight + b.log_weight,
                total,
                inside,
            })
        })
        .collect::<Result<_>>()?;

    let log_w: Vec<f64> = pairs.iter().map(|p| p.log_weight).collect();
    let weights = ImportanceWeights::from_log(&log_w);
    let ess = weights.ess();
    if ess < MIN_ESS {
        return Err(Error::EffectiveSampleSizeTooSmall { ess, required: MIN_ESS });
    }
    let exceed: Vec<f64> = pairs.iter().map(|p| if p.total > t { 1.0 } else { 0.0 }).collect();
    let p_exceed = weights.estimate(&exceed);
    let cond_log_w: Vec<f64> = pairs
        .iter()
        .map(|p| if p.total > t { p.log_weight } else { f64::NEG_INFINITY })
        .collect();
    let cond = ImportanceWeights::from_log(&cond_log_w);
    let exceed_ess = if p_exceed.mean > 0.0 { cond.ess() } else { 0.0 };
    if exceed_ess < MIN_ESS {
        return Err(Error::EffectiveSampleSizeTooSmall {
            ess: exceed_ess,
            required: MIN_ESS,
        });
    }

    let mut rows = CsvOut::new(
        "decomposition",
        SCHEMA_VERSION,
        &["pair", "a", "threshold", "intersection", "inside", "outside", "log_weight"],
    )?;
    for (i, p) in pairs.iter().enumerate() {
        for (k, &(tau, inside)) in p.inside.iter().enumerate() {
            let a = a_grid.get(k).map_or_else(|| "inf".to_string(), |a| a.to_string());
            rows.row([
                i.to_string(),
                a,
                tau.to_string(),
                p.total.to_string(),
                inside.to_string(),
                (p.total - inside).to_string(),
                p.log_weight.to_string(),
            ])?;
        }
    }

    let mut summary = CsvOut::new(
        "decomposition_summary",
        SCHEMA_VERSION,
        &[
            "a",
            "threshold",
            "conditioned_mean_outside_fraction",
            "conditioned_se",
            "conditioned_median_outside_fraction",
            "unconditioned_mean_outside_fraction",
            "unconditioned_se",
        ],
    )?;
    for k in 0..thresholds.len() {
        // pairs that never meet have no split; count them as fully outside
        let frac: Vec<f64> = pairs
            .iter()
            .map(|p| if p.total > 0.0 { 1.0 - p.inside[k].1 / p.total } else { 1.0 })
            .collect();
        let c = cond.estimate(&frac);
        let median = cond.quantile(&frac, 0.5).unwrap_or(f64::NAN);
        let u = weights.estimate(&frac);
        let a = a_grid.get(k).map_or_else(|| "inf".to_string(), |a| a.to_string());
        summary.row([
            a,
            thresholds[k].to_string(),
            c.mean.to_string(),
            c.se.to_string(),
            median.to_string(),
            u.mean.to_string(),
            u.se.to_string(),
        ])?;
    }

    Ok(vec![
        rows.finish("decomposition_pairs.csv")?,
        summary.finish("decomposition_summary.csv")?,
        json_artifact(
            "decomposition.json",
            &Summary {
                t,
                theta,
                plain_share,
                pairs: cfg.replicas,
                ess,
                exceed_probability: p_exceed.mean,
                exceed_probability_se: p_exceed.se,
                exceed_ess,
            },
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticePoint;

    #[test]
    fn split_limits() {
        let o = LatticePoint::origin(5);
        let e = LatticePoint::unit(5, 0);
        let a = LocalTimeField::from_counts(5, [(o, 3), (e, 1)]);
        let b = LocalTimeField::from_counts(5, [(o, 2), (e, 5)]);
        let (total, inside) = split(&a, &b, &[2.5, 1.5, 0.0]);
        assert_eq!(total, 11.0);
        assert_eq!(inside, vec![(2.5, 0.0), (1.5, 6.0), (0.0, 11.0)]);
    }
}
