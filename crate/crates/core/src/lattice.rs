//! Lattice points, the lazy walk on `Z^d`, and sparse local-time fields.
//!
//! The walk moves uniformly to one of the `2d + 1` sites at l¹-distance at
//! most one from its current position, so it stays put with probability
//! `1 / (2d + 1)`. Infinite-horizon local times are approximated by stopping
//! the walk the first time its Euclidean norm exceeds a stop radius `R`; the
//! expected number of visits missed by doing so is bounded by
//! [`truncation_bias_bound`].

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::green::GreenOracle;

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 8;

/// A site of `Z^d`, `1 <= d <= MAX_DIM`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePoint {
    dim: u8,
    coords: [i32; MAX_DIM],
}

impl LatticePoint {
    pub fn origin(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self {
            dim: dim as u8,
            coords: [0; MAX_DIM],
        }
    }

    pub fn new(coords: &[i32]) -> Result<Self> {
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::InvalidDimension {
                dim: coords.len(),
                expected: "1..=8 coordinates",
            });
        }
        let mut p = Self::origin(coords.len());
        p.coords[..coords.len()].copy_from_slice(coords);
        Ok(p)
    }

    /// The unit vector `e_{axis+1}`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        Self::origin(dim).offset(axis, 1)
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim()]
    }

    pub fn is_origin(&self) -> bool {
        self.coords().iter().all(|&c| c == 0)
    }

    /// Shifts coordinate `axis` by `delta`.
    pub fn offset(mut self, axis: usize, delta: i32) -> Self {
        self.coords[axis] += delta;
        self
    }

    /// Multiplies every coordinate by `k`.
    pub fn scale(mut self, k: i32) -> Self {
        for c in &mut self.coords[..self.dim as usize] {
            *c *= k;
        }
        self
    }

    /// l¹-norm `|z|`.
    pub fn l1(&self) -> i64 {
        self.coords().iter().map(|&c| (c as i64).abs()).sum()
    }

    pub fn norm_sq(&self) -> i64 {
        self.coords().iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    /// Euclidean norm `‖z‖`.
    pub fn norm(&self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn sup_norm(&self) -> i64 {
        self.coords()
            .iter()
            .map(|&c| (c as i64).abs())
            .max()
            .unwrap_or(0)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (*self - *other).norm()
    }

    /// The `2d + 1` sites reachable in one lazy step, the current site last.
    pub fn lazy_neighbors(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        let d = self.dim();
        (0..2 * d + 1).map(move |k| {
            if k == 2 * d {
                *self
            } else {
                self.offset(k / 2, if k % 2 == 0 { 1 } else { -1 })
            }
        })
    }
}

impl std::ops::Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(mut self, rhs: Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim() {
            self.coords[i] -= rhs.coords[i];
        }
        self
    }
}

impl std::ops::Add for LatticePoint {
    type Output = LatticePoint;
    fn add(mut self, rhs: Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim() {
            self.coords[i] += rhs.coords[i];
        }
        self
    }
}

impl std::ops::Neg for LatticePoint {
    type Output = LatticePoint;
    fn neg(self) -> Self {
        self.scale(-1)
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for LatticePoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.coords().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LatticePoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let coords = Vec::<i32>::deserialize(deserializer)?;
        LatticePoint::new(&coords).map_err(serde::de::Error::custom)
    }
}

/// Identifies one independent random stream: a base seed plus a stream index.
///
/// Streams are ChaCha8 keyed by the seed with the stream index as nonce, so a
/// replica's randomness does not depend on which worker runs it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Draws one lazy step: an index in `0..2d+1`, where `2d` means "stay".
#[inline]
pub(crate) fn draw_move<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> usize {
    rng.random_range(0..(2 * dim + 1) as u32) as usize
}

/// Applies a move index to raw coordinates, returning the change in `‖x‖²`.
#[inline]
pub(crate) fn apply_move(coords: &mut [i32], mv: usize, dim: usize) -> i64 {
    if mv == 2 * dim {
        return 0;
    }
    let axis = mv / 2;
    let c = coords[axis] as i64;
    if mv % 2 == 0 {
        coords[axis] += 1;
        2 * c + 1
    } else {
        coords[axis] -= 1;
        -2 * c + 1
    }
}

/// State of a single lazy walk.
#[derive(Clone, Debug)]
pub struct WalkState {
    position: LatticePoint,
    step_count: u64,
    rng: ChaCha8Rng,
}

impl WalkState {
    pub fn new(start: LatticePoint, key: StreamKey) -> Self {
        Self {
            position: start,
            step_count: 0,
            rng: key.rng(),
        }
    }

    pub fn position(&self) -> LatticePoint {
        self.position
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Advances the walk by one lazy step and returns the new position.
    pub fn step(&mut self) -> LatticePoint {
        let dim = self.position.dim();
        let mv = draw_move(&mut self.rng, dim);
        apply_move(&mut self.position.coords, mv, dim);
        self.step_count += 1;
        self.position
    }
}

/// Time horizon of a local-time field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Times `0..=n`.
    Finite(u64),
    /// Run until the first time `‖S_n‖ > stop_radius`.
    TruncatedInfinite { stop_radius: u32 },
}

impl Horizon {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            Horizon::Finite(_) => Ok(()),
            Horizon::TruncatedInfinite { stop_radius } => {
                if stop_radius == 0 {
                    return Err(invalid("stop_radius", "must be at least 1"));
                }
                if dim <= 2 {
                    return Err(Error::NonterminatingTruncation { dim });
                }
                Ok(())
            }
        }
    }
}

/// Sparse visit counts of one trajectory.
#[derive(Clone, Debug)]
pub struct LocalTimeField {
    dim: usize,
    counts: FxHashMap<LatticePoint, u32>,
    horizon: Horizon,
    origin_included: bool,
    steps: u64,
}

impl LocalTimeField {
    pub fn empty(dim: usize, horizon: Horizon, origin_included: bool) -> Self {
        Self {
            dim,
            counts: FxHashMap::default(),
            horizon,
            origin_included,
            steps: 0,
        }
    }

    /// Builds a field from explicit counts; zero counts are dropped.
    pub fn from_counts(
        dim: usize,
        counts: impl IntoIterator<Item = (LatticePoint, u32)>,
    ) -> Self {
        let mut field = Self::empty(dim, Horizon::Finite(0), true);
        for (z, c) in counts {
            if c > 0 {
                *field.counts.entry(z).or_insert(0) += c;
            }
        }
        field
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn set_steps(&mut self, steps: u64) {
        self.steps = steps;
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn origin_included(&self) -> bool {
        self.origin_included
    }

    /// Number of steps simulated.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn get(&self, z: &LatticePoint) -> u32 {
        self.counts.get(z).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| c as u64).sum()
    }

    /// Iterates `(site, count)` pairs in unspecified order.
    pub fn iter(&self) -> impl Iterator<Item = (&LatticePoint, &u32)> {
        self.counts.iter()
    }

    /// `(site, count)` pairs in lexicographic site order.
    pub fn sorted(&self) -> Vec<(LatticePoint, u32)> {
        let mut v: Vec<_> = self.counts.iter().map(|(z, c)| (*z, *c)).collect();
        v.sort_unstable();
        v
    }

    pub fn increment(&mut self, z: LatticePoint) {
        *self.counts.entry(z).or_insert(0) += 1;
    }

    /// The range `{z : l(z) > 0}`, sorted.
    pub fn range(&self) -> Vec<LatticePoint> {
        level_set(self, LevelMode::AtLeast(1.0))
    }
}

/// Simulates replica 0 of `seed`; time 0 is counted.
pub fn simulate_local_times(dim: usize, seed: u64, horizon: Horizon) -> Result<LocalTimeField> {
    simulate_replica(dim, StreamKey::new(seed, 0), horizon, true)
}

/// Simulates the lazy walk from the origin with the given stream.
pub fn simulate_replica(
    dim: usize,
    key: StreamKey,
    horizon: Horizon,
    origin_included: bool,
) -> Result<LocalTimeField> {
    let mut rng = key.rng();
    simulate_with_rng(dim, &mut rng, horizon, origin_included)
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    dim: usize,
    rng: &mut R,
    horizon: Horizon,
    origin_included: bool,
) -> Result<LocalTimeField> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidDimension {
            dim,
            expected: "1..=8",
        });
    }
    horizon.validate(dim)?;
    let mut field = LocalTimeField::empty(dim, horizon, origin_included);
    let mut pos = LatticePoint::origin(dim);
    if origin_included {
        field.increment(pos);
    }
    let mut norm_sq: i64 = 0;
    let mut steps = 0u64;
    match horizon {
        Horizon::Finite(n) => {
            for _ in 0..n {
                let mv = draw_move(rng, dim);
                apply_move(&mut pos.coords, mv, dim);
                field.increment(pos);
            }
            steps = n;
        }
        Horizon::TruncatedInfinite { stop_radius } => {
            let r_sq = (stop_radius as i64) * (stop_radius as i64);
            while norm_sq <= r_sq {
                let mv = draw_move(rng, dim);
                norm_sq += apply_move(&mut pos.coords, mv, dim);
                field.increment(pos);
                steps += 1;
            }
        }
    }
    field.steps = steps;
    Ok(field)
}

/// Level-set predicate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    /// `D(ξ) = {z : l(z) >= ξ}`.
    AtLeast(f64),
    /// `L(n) = {z : l(z) = n}`.
    Exactly(u32),
}

/// Sites of `field` meeting `mode`, sorted lexicographically.
///
/// Only stored sites are candidates, so `AtLeast(ξ)` with `ξ <= 0` returns
/// the range rather than all of `Z^d`.
pub fn level_set(field: &LocalTimeField, mode: LevelMode) -> Vec<LatticePoint> {
    let mut out: Vec<LatticePoint> = field
        .counts
        .iter()
        .filter(|(_, &c)| match mode {
            LevelMode::AtLeast(xi) => c as f64 >= xi,
            LevelMode::Exactly(n) => c == n,
        })
        .map(|(z, _)| *z)
        .collect();
    out.sort_unstable();
    out
}

/// Bound on the visits a truncated walk misses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationCertificate {
    pub stop_radius: u32,
    pub target_set: Vec<LatticePoint>,
    /// Upper bound on `E[Σ_{z∈Λ} (l_∞(z) - l_truncated(z))]`.
    pub bias_bound: f64,
}

/// Bounds the expected number of visits to `targets` after the walk first
/// leaves `B(0, R)`.
///
/// The walk leaves at some `y` with `R < ‖y‖ <= R + 1`; from there the
/// expected number of further visits to `z` is at most `G(y - z)`, and
/// `‖y - z‖ >= R - ‖z‖`. The Green function is bounded by the oracle's radial
/// envelope, which is nonincreasing, so the bound is nonincreasing in `R`.
pub fn truncation_bias_bound(
    stop_radius: u32,
    targets: &[LatticePoint],
    oracle: &GreenOracle,
) -> Result<TruncationCertificate> {
    let half = stop_radius as f64 / 2.0;
    for z in targets {
        let r = z.norm();
        if r > half {
            return Err(Error::RadiusTooSmall {
                distance: r,
                half_radius: half,
            });
        }
    }
    Ok(TruncationCertificate {
        stop_radius,
        target_set: targets.to_vec(),
        bias_bound: post_exit_visit_bound(stop_radius, targets, oracle),
    })
}

/// Same bound as [`truncation_bias_bound`] without the `Λ ⊂ B(0, R/2)`
/// requirement; sites near or beyond the exit shell get the full `G(0)`.
pub fn post_exit_visit_bound(stop_radius: u32, targets: &[LatticePoint], oracle: &GreenOracle) -> f64 {
    let r = stop_radius as f64;
    targets
        .iter()
        .map(|z| {
            let n = z.norm();
            let gap = if n <= r { r - n } else { (n - r - 1.0).max(0.0) };
            oracle.radial_envelope(gap)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms() {
        let z = LatticePoint::new(&[1, -2, 0, 3, 0]).unwrap();
        assert_eq!(z.l1(), 6);
        assert_eq!(z.norm_sq(), 14);
        assert_eq!(z.sup_norm(), 3);
        assert!(LatticePoint::origin(5).is_origin());
        assert_eq!(LatticePoint::origin(5).l1(), 0);
    }

    #[test]
    fn lazy_neighbors_are_the_l1_ball() {
        let z = LatticePoint::new(&[2, 0, -1]).unwrap();
        let nb: Vec<_> = z.lazy_neighbors().collect();
        assert_eq!(nb.len(), 7);
        assert!(nb.iter().all(|y| (*y - z).l1() <= 1));
        let mut dedup = nb.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 7);
    }

    #[test]
    fn serde_as_coordinate_tuple() {
        let z = LatticePoint::new(&[0, 1, -1, 0, 2]).unwrap();
        let s = serde_json::to_string(&z).unwrap();
        assert_eq!(s, "[0,1,-1,0,2]");
        let back: LatticePoint = serde_json::from_str(&s).unwrap();
        assert_eq!(back, z);
        assert!(serde_json::from_str::<LatticePoint>("[]").is_err());
    }

    #[test]
    fn one_dimensional_step_is_uniform_over_three_sites() {
        let mut walk = WalkState::new(LatticePoint::origin(1), StreamKey::new(11, 0));
        let mut hist = [0u32; 3];
        let n = 300_000;
        for _ in 0..n {
            let before = walk.position().coords()[0];
            let after = walk.step().coords()[0];
            hist[(after - before + 1) as usize] += 1;
        }
        for &h in &hist {
            let p = h as f64 / n as f64;
            let se = (1.0 / 3.0 * 2.0 / 3.0 / n as f64).sqrt();
            assert!((p - 1.0 / 3.0).abs() < 4.0 * se, "p = {p}");
        }
        assert_eq!(walk.step_count(), n as u64);
    }

    #[test]
    fn five_dimensional_stay_frequency() {
        let mut walk = WalkState::new(LatticePoint::origin(5), StreamKey::new(3, 1));
        let n = 1_000_000;
        let mut stays = 0u64;
        for _ in 0..n {
            let before = walk.position();
            if walk.step() == before {
                stays += 1;
            }
        }
        let p = stays as f64 / n as f64;
        let se = ((1.0 / 11.0) * (10.0 / 11.0) / n as f64).sqrt();
        assert!((p - 1.0 / 11.0).abs() < 3.0 * se, "stay frequency {p}");
    }

    #[test]
    fn seeded_walks_repeat() {
        let run = || {
            let mut w = WalkState::new(LatticePoint::origin(5), StreamKey::new(42, 7));
            (0..100).map(|_| w.step()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        let mut other = WalkState::new(LatticePoint::origin(5), StreamKey::new(42, 8));
        let b: Vec<_> = (0..100).map(|_| other.step()).collect();
        assert_ne!(run(), b);
    }

    #[test]
    fn finite_zero_is_origin_only() {
        let f = simulate_local_times(5, 1, Horizon::Finite(0)).unwrap();
        assert_eq!(f.sorted(), vec![(LatticePoint::origin(5), 1)]);
    }

    #[test]
    fn excluded_origin_drops_time_zero() {
        let f = simulate_replica(5, StreamKey::new(1, 0), Horizon::Finite(10), false).unwrap();
        assert_eq!(f.total(), 10);
    }

    #[test]
    fn recurrent_truncation_rejected() {
        for d in [1, 2] {
            let err = simulate_local_times(d, 0, Horizon::TruncatedInfinite { stop_radius: 5 });
            assert!(matches!(err, Err(Error::NonterminatingTruncation { .. })));
        }
    }

    #[test]
    fn truncated_walk_stops_outside_radius() {
        let f = simulate_local_times(5, 9, Horizon::TruncatedInfinite { stop_radius: 6 }).unwrap();
        let outside: Vec<_> = f.iter().filter(|(z, _)| z.norm() > 6.0).collect();
        assert_eq!(outside.len(), 1, "exactly the exit site lies outside");
        assert_eq!(f.total(), f.steps() + 1);
    }

    #[test]
    fn level_sets_filter() {
        let e1 = LatticePoint::unit(5, 0);
        let o = LatticePoint::origin(5);
        let f = LocalTimeField::from_counts(5, [(o, 3), (e1, 1)]);
        assert_eq!(level_set(&f, LevelMode::AtLeast(2.0)), vec![o]);
        assert_eq!(level_set(&f, LevelMode::Exactly(1)), vec![e1]);
        assert_eq!(level_set(&f, LevelMode::AtLeast(1.0)), f.range());
        assert_eq!(f.range().len(), 2);
    }
}
