//! Panoptic fusion engine.
//!
//! Takes a set of overlapping instance mask proposals plus a semantic
//! labeling and merges them into a single non-overlapping panoptic map.
//! Overlaps between proposals are resolved by a pairwise occlusion
//! relation (oracle, learned classifier, or plain confidence order)
//! instead of confidence order alone, which mis-ranks occluded objects
//! whenever the detector is more confident about the thing behind.
//!
//! The crate also ships the surrounding tooling: a synthetic scene
//! generator with controllable occlusion structure, ground-truth
//! occlusion derivation, a trainable pairwise occlusion classifier,
//! panoptic quality (PQ) evaluation, and JSON / PNG interchange.

pub mod fusion;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod occlusion;
pub mod scene;
pub mod scenegen;
