//! Offline video-analytics engine for stalled/crashed vehicle detection in
//! fixed-camera traffic footage.
//!
//! The pipeline runs in two stages. The static stage finds the time and
//! place where a vehicle came to rest: background modeling feeds a
//! pixel-level and a box-level tracking branch, a road mask suppresses
//! parking areas, and ROI backtracking removes the background model's
//! appearance delay from the reported start. The dynamic stage then looks
//! for the crash instant, tracing vehicle trajectories forward over a
//! window and sparse optical flow backward from the stop.

pub mod assign;
pub mod background;
pub mod backtrack;
pub mod detect;
pub mod error;
pub mod ingest;
pub mod mask;
pub mod flow;
pub mod pixel;
pub mod track;
pub mod trajectory;
pub mod types;

pub use error::{Error, Result};
pub use types::{AnomalyEvent, BBox, Branch, Detection, TimeStamp};
