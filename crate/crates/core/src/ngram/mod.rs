//! Back-off n-gram language model with modified Kneser-Ney smoothing.
//!
//! N-grams are packed into `u128` keys (21 bits per id, first word in the
//! high bits), so all extensions of a context form one contiguous key range in
//! each order's sorted table.

mod arpa;
mod counts;
mod key;
mod model;
mod stats;

pub use arpa::{read_arpa, write_arpa};
pub use counts::{count_ngrams, NGramCounts};
pub use key::{pack, unpack, MAX_ORDER, MAX_VOCAB};
pub use model::{estimate_kn, Discounts, Entry, KnModel, KnOptions, QueryTrace};
pub use stats::{distribution_stats, DistStats};

/// Sentinel log10 probability used in ARPA files for `<s>`.
pub const NO_PROB: f64 = -99.0;
