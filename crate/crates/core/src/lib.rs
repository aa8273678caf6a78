//! Group-level matching for weakly supervised video individual counting.
//!
//! * [`model`]: detection streams with inflow/outflow flags and the
//!   partitioned similarity matrix of two adjacent frames.
//! * [`loss`]: soft contrastive loss over a Sinkhorn transport plan, hinge
//!   loss on the unmatched block, and their analytic gradient.
//! * [`gradcheck`]: finite-difference checks of that gradient.
//! * [`pseudo`]: pseudo-trajectories read off the transport plans.
//! * [`assign`]: Hungarian and brute-force linear assignment.
//! * [`mcp`]: the memory-based count predictor.
//! * [`metrics`]: MAE, RMSE and WRAE over a set of videos.
//! * [`sim`]: synthetic streams with ground-truth identities.
//! * [`io`]: the JSON Lines stream format.

pub mod assign;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod mcp;
pub mod metrics;
pub mod model;
pub mod pseudo;
pub mod sim;

pub use error::{Error, Result};
