//! Digital-twin migration across a vehicle/edge/cloud hierarchy.
//!
//! [`scenario`] builds the world, [`env`] steps it, [`learner`] trains the
//! agents and [`harness`] runs experiments and writes their metrics.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Parallel arrays indexed by node id read better as index loops.
#![allow(clippy::needless_range_loop)]

pub mod costs;
pub mod env;
pub mod error;
pub mod gcn;
pub mod harness;
pub mod learner;
pub mod netlink;
pub mod oracle;
pub mod scenario;
pub mod seed;
pub mod stackelberg;

pub use error::{Error, Result};

// The guide's listings run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/pricing.md")]
    mod pricing {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
