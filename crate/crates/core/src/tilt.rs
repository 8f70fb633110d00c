//! Return-biased importance sampling.
//!
//! The tilted walk moves from `x` to a lazy neighbour `y` with probability
//! proportional to `G(y)^θ`, which pulls it toward the origin. Each path
//! carries the exact log-likelihood ratio of the untilted walk against the
//! tilted one, so self-normalized averages estimate untilted expectations.
//!
//! Far from the origin the tilt acts like a radial drift `-θ(d-2)/r`, so
//! the tilted walk behaves like a walk in dimension `d - 2θ(d-2)`; for
//! `θ >= 1/2` in `d = 5` it no longer escapes quickly and paths get long.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::green::{GreenOracle, PoweredGreen};
use crate::lattice::{Horizon, LatticePoint, LocalTimeField, StreamKey};
use crate::stats::{ImportanceWeights, MeanEstimate};

/// Replicas whose self-normalized effective sample size falls below this
/// are not reported.
pub const MIN_ESS: f64 = 50.0;

/// One path sampled under the tilt.
#[derive(Clone, Debug)]
pub struct WeightedSample {
    pub replica: u64,
    pub field: LocalTimeField,
    /// `ln dP/dQ` of the path.
    pub log_weight: f64,
}

/// Harmonic tilt of strength `theta ∈ [0, 1)`.
#[derive(Clone, Debug)]
pub struct HarmonicTilt<'a> {
    pub theta: f64,
    oracle: &'a GreenOracle,
    potential: PoweredGreen<'a>,
}

impl<'a> HarmonicTilt<'a> {
    pub fn new(theta: f64, oracle: &'a GreenOracle) -> Result<Self> {
        if !(0.0..1.0).contains(&theta) {
            return Err(invalid("theta", "tilt strength must lie in [0, 1)"));
        }
        Ok(Self {
            theta,
            oracle,
            potential: oracle.powered(theta),
        })
    }

    /// Runs one tilted walk from the origin until `‖S‖ > R`; time 0 counts.
    pub fn sample(&self, key: StreamKey, stop_radius: u32) -> Result<WeightedSample> {
        self.run(key, stop_radius, 0.0)
    }

    /// Draws from the defensive mixture `a P + (1 - a) Q` of the plain walk
    /// `P` and the tilt `Q`: the whole path follows `P` with probability `a`.
    /// The returned log weight is `ln dP/d(aP + (1-a)Q) <= ln(1/a)`.
    pub fn sample_mixture(&self, key: StreamKey, stop_radius: u32, plain_share: f64) -> Result<WeightedSample> {
        if !(plain_share > 0.0 && plain_share <= 1.0) {
            return Err(invalid("plain_share", "must lie in (0, 1]"));
        }
        self.run(key, stop_radius, plain_share)
    }

    fn run(&self, key: StreamKey, stop_radius: u32, plain_share: f64) -> Result<WeightedSample> {
        let dim = self.oracle.dim();
        let horizon = Horizon::TruncatedInfinite { stop_radius };
        horizon.validate(dim)?;
        let mut rng = key.rng();
        let plain = self.theta == 0.0 || (plain_share > 0.0 && rng.random::<f64>() < plain_share);
        let mut field = LocalTimeField::empty(dim, horizon, true);
        let mut pos = LatticePoint::origin(dim);
        field.increment(pos);
        let r_sq = (stop_radius as i64).pow(2);
        let ln_uniform = -((2 * dim + 1) as f64).ln();
        // ln dP/dQ along the path
        let mut llr = 0.0;
        let mut steps = 0u64;
        let mut w = vec![0.0; 2 * dim + 1];
        let mut nbrs = Vec::with_capacity(2 * dim + 1);
        while pos.norm_sq() <= r_sq {
            nbrs.clear();
            nbrs.extend(pos.lazy_neighbors());
            if self.theta == 0.0 {
                pos = nbrs[rng.random_range(0..nbrs.len())];
            } else {
                let mut total = 0.0;
                for (slot, y) in w.iter_mut().zip(&nbrs) {
                    *slot = self.potential.get(y);
                    total += *slot;
                }
                let k = if plain {
                    rng.random_range(0..nbrs.len())
                } else {
                    let mut u = rng.random::<f64>() * total;
                    let mut k = nbrs.len() - 1;
                    for (i, &wi) in w.iter().enumerate() {
                        if u < wi {
                            k = i;
                            break;
                        }
                        u -= wi;
                    }
                    k
                };
                llr += ln_uniform - (w[k] / total).ln();
                pos = nbrs[k];
            }
            field.increment(pos);
            steps += 1;
        }
        field.set_steps(steps);
        let log_weight = if plain_share > 0.0 && self.theta > 0.0 {
            // -ln(a + (1 - a) e^{-llr}), evaluated stably
            let (a, b) = (plain_share.ln(), (1.0 - plain_share).ln() - llr);
            let m = a.max(b);
            -(m + ((a - m).exp() + (b - m).exp()).ln())
        } else {
            llr
        };
        Ok(WeightedSample {
            replica: key.stream,
            field,
            log_weight,
        })
    }
}

/// Self-normalized estimate of `E[f]` from weighted samples, or an error
/// when the effective sample size is below [`MIN_ESS`].
pub fn weighted_estimate(log_weights: &[f64], values: &[f64]) -> Result<(MeanEstimate, ImportanceWeights)> {
    let w = ImportanceWeights::from_log(log_weights);
    let ess = w.ess();
    if ess < MIN_ESS {
        return Err(crate::error::Error::EffectiveSampleSizeTooSmall {
            ess,
            required: MIN_ESS,
        });
    }
    Ok((w.estimate(values), w))
}
