use rayon::prelude::*;
use serde::Serialize;

use super::{json_artifact, Artifact, CsvOut, ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::green::GreenOracle;
use crate::lattice::{simulate_replica, Horizon, LocalTimeField, StreamKey};
use crate::moments::{default_exponent_grid, tail_fit};
use crate::stats::{ks_two_sample, MeanEstimate};

pub const SCHEMA_VERSION: u32 = 1;

/// `|R ∩ R̃|`, counting the shared starting point.
pub fn range_intersection(a: &LocalTimeField, b: &LocalTimeField) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter(|(z, _)| large.get(z) > 0).count()
}

/// Whether the ranges share at least `l` sites, stopping at the `l`-th.
fn shares_at_least(a: &LocalTimeField, b: &LocalTimeField, l: usize) -> bool {
    a.iter().filter(|(z, _)| b.get(z) > 0).take(l).count() == l
}

#[derive(Serialize)]
struct RangeReport {
    pairs: u64,
    l: u32,
    probability_at_least_l: f64,
    probability_se: f64,
    /// The same event from an early-exit scan, as a cross-check.
    probability_direct_scan: f64,
    mean_volume: f64,
    mean_volume_se: f64,
    alpha: Option<f64>,
    r2: Option<f64>,
    kappa: Option<f64>,
    fit_error: Option<String>,
    kmss_exponent: f64,
    window: f64,
    within_window: bool,
    swap_ks_statistic: Option<f64>,
    swap_ks_p_value: Option<f64>,
}

/// Tail of the range intersection of two plain walks.
///
/// Outputs `range_pairs.csv`, `range_tail.csv` and `range.json`. With
/// `swap_check`, walk `2i + 1` is re-paired with walk `2i + 2` and the two
/// pooled samples are compared by a two-sample KS test.
pub fn run_range_intersection(cfg: &ExperimentConfig, _oracle: &GreenOracle) -> Result<Vec<Artifact>> {
    let ExperimentKind::Range { window, swap_check, l } = cfg.kind else {
        unreachable!("dispatched by kind")
    };
    let horizon = Horizon::TruncatedInfinite {
        stop_radius: cfg.stop_radius,
    };
    let walk = |s: u64| simulate_replica(cfg.dim, StreamKey::new(cfg.seed, s), horizon, true);
    let n = cfg.replicas;
    let rows: Vec<(usize, bool, Option<usize>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = walk(2 * i)?;
            let b = walk(2 * i + 1)?;
            let swapped = if swap_check {
                let c = walk(2 * ((i + 1) % n))?;
                Some(range_intersection(&b, &c))
            } else {
                None
            };
            Ok((range_intersection(&a, &b), shares_at_least(&a, &b, l as usize), swapped))
        })
        .collect::<Result<_>>()?;

    let mut out = CsvOut::new("range", SCHEMA_VERSION, &["pair", "volume", "swapped_volume"])?;
    for (i, r) in rows.iter().enumerate() {
        out.row([i.to_string(), r.0.to_string(), r.2.map_or_else(String::new, |v| v.to_string())])?;
    }
    let volumes: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let hit: Vec<f64> = volumes.iter().map(|&v| if v >= l as f64 { 1.0 } else { 0.0 }).collect();
    let p = MeanEstimate::from_samples(&hit);
    let direct = rows.iter().filter(|r| r.1).count() as f64 / n as f64;
    let mean = MeanEstimate::from_samples(&volumes);

    let kmss = 1.0 - 2.0 / cfg.dim as f64;
    let mut tail_bytes = Vec::new();
    tail_bytes.extend_from_slice(format!("# range_tail v{SCHEMA_VERSION}\n").as_bytes());
    let (alpha, r2, kappa, fit_error) = match tail_fit(&volumes, &default_exponent_grid()) {
        Ok(fit) => {
            fit.write_csv(&mut tail_bytes)?;
            (Some(fit.alpha), Some(fit.r2), Some(fit.kappa), None)
        }
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    let (ks_d, ks_p) = if swap_check {
        let swapped: Vec<f64> = rows.iter().filter_map(|r| r.2.map(|v| v as f64)).collect();
        let (d, p) = ks_two_sample(&volumes, &swapped);
        (Some(d), Some(p))
    } else {
        (None, None)
    };
    let report = RangeReport {
        pairs: n,
        l,
        probability_at_least_l: p.mean,
        probability_se: p.se,
        probability_direct_scan: direct,
        mean_volume: mean.mean,
        mean_volume_se: mean.se,
        alpha,
        r2,
        kappa,
        fit_error,
        kmss_exponent: kmss,
        window,
        within_window: alpha.is_some_and(|a| (a - kmss).abs() <= window + 1e-12),
        swap_ks_statistic: ks_d,
        swap_ks_p_value: ks_p,
    };
    Ok(vec![
        out.finish("range_pairs.csv")?,
        Artifact {
            name: "range_tail.csv".into(),
            bytes: tail_bytes,
        },
        json_artifact("range.json", &report)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticePoint;

    #[test]
    fn counters_agree() {
        let p = |c: &[i32]| LatticePoint::new(c).unwrap();
        let a = LocalTimeField::from_counts(5, [(p(&[0; 5]), 2), (p(&[1, 0, 0, 0, 0]), 1)]);
        let b = LocalTimeField::from_counts(5, [(p(&[0; 5]), 1), (p(&[1, 0, 0, 0, 0]), 3), (p(&[2, 0, 0, 0, 0]), 1)]);
        assert_eq!(range_intersection(&a, &b), 2);
        assert!(shares_at_least(&a, &b, 2));
        assert!(!shares_at_least(&a, &b, 3));
    }
}
