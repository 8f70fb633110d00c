//! Edge occupations, the coalescence hierarchy, trail/stock extraction and
//! the level-set bounds built on them.

pub mod bounds;
pub mod coalesce;
pub mod enumerate;
pub mod extract;
pub mod kernel;
pub mod occupation;

pub use bounds::{intersection_bound_evaluators, level_set_prob_bound, IntersectionBounds, IntersectionConstants, LevelSetBound};
pub use coalesce::{coalesce, CoalescenceHierarchy, Merge};
pub use extract::{extract_trail_stock, LevelCertificate, TrailStock};
pub use kernel::{profile_probability, HittingKernel};
pub use occupation::{edge_occupation, multinomial_count_bound, EdgeOccupation};
