// Index loops read better than iterator chains over small dense matrices,
// and `!(x >= a)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod error;
pub mod generators;
pub mod linalg;
pub mod markov;
pub mod rates;
pub mod regeneration;
pub mod rng;
pub mod stats;
pub mod transport;
pub mod ustat;

pub use error::{Error, Result};
