//! Independent subset (Poisson) samples from acyclic relational joins,
//! drawn without materializing the join.
//!
//! Every join result carries a probability derived from its component tuple
//! weights (product, min, max, or sum), and a sample includes each result
//! independently with that probability. Three engines share one counting
//! core:
//!
//! - [`StaticIndex`]: build once, then answer any number of independent
//!   sampling queries by ranked direct access into score buckets.
//! - [`oneshot`]: produce a single sample with batched rank resolution that
//!   avoids the per-access binary search.
//! - [`DynamicIndex`]: insert-only streaming maintenance with approximate
//!   counters; queries reject the dummy positions the approximation adds.
//!
//! The [`oracle`] module holds the brute-force reference sampler and the
//! statistical machinery used to verify all of the above at desk scale, and
//! [`synth`] generates the instances the examples and benches run on.

pub mod cli;
pub mod convolve;
pub mod dynamic;
pub mod error;
pub mod fenwick;
pub mod index_io;
pub mod instance;
pub mod join_tree;
pub mod oneshot;
pub mod oracle;
pub mod query_spec;
pub mod relation;
pub mod rng;
pub mod sampling;
pub mod score;
pub mod static_index;
pub mod synth;

pub use convolve::ConvolveMode;
pub use dynamic::DynamicIndex;
pub use error::{Error, Result};
pub use instance::{Instance, JoinResult};
pub use join_tree::{build_join_tree, JoinTree};
pub use relation::{Relation, Tuple, Value};
pub use rng::SplitRng;
pub use score::{AggKind, Aggregator, Score};
pub use static_index::StaticIndex;
