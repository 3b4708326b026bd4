//! Doc-test hooks for the book chapters.
//!
//! Each chapter of the guide in `book/` is included here as a module doc so
//! that its `rust` code fences compile and run under `cargo test --doc`. The
//! modules are empty; they exist only to carry the chapter text.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/ambisonics.md")]
pub mod ambisonics {}

#[doc = include_str!("../../../book/src/rooms.md")]
pub mod rooms {}

#[doc = include_str!("../../../book/src/covariance.md")]
pub mod covariance {}

#[doc = include_str!("../../../book/src/beamformers.md")]
pub mod beamformers {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
