//! Desk-scale federated object detection.
//!
//! Clients train a small single-shot grid detector ([`tinydet`]) on non-IID
//! synthetic data ([`synthdata`]); a neutral server combines their weights with
//! sample-weighted federated averaging over communication rounds and stops once
//! the clients' mean reported accuracy clears a threshold ([`fedcore`]).
//! [`detmetrics`] scores detections with COCO-style AP/AR.

pub mod detmetrics;
pub mod exec;
pub mod fedcore;
pub mod params;
pub mod synthdata;
pub mod tinydet;

pub use exec::Execution;
pub use params::{ParamSet, Rng, Tensor};
