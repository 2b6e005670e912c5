//! Online debiasing of LASSO estimates for high-dimensional linear models
//! whose samples were collected adaptively.
//!
//! Two collection regimes are supported:
//!
//! * vector autoregressive time series, debiased episode by episode with a
//!   predictable sequence of decorrelating matrices ([`debias_ts`]);
//! * two-batch collection where the second batch is sampled conditionally on
//!   an intermediate estimate from the first ([`debias_batch`]).
//!
//! Offline baselines live in [`debias_offline`], inferential primitives in
//! [`inference`], seeded data generators and closed-form moment oracles in
//! [`simgen`], and the Monte Carlo experiment engine in [`harness`].
//!
//! Coordinates are 0-based throughout the API.

pub mod debias_batch;
pub mod debias_offline;
pub mod debias_ts;
pub mod decorrelator;
pub mod error;
pub mod harness;
pub mod inference;
pub mod lasso;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod simgen;

pub use error::{Error, Result};
