//! Batch WiFi + LiDAR SLAM toolkit.
//!
//! Reconstructs a robot trajectory and occupancy-grid map from wheel
//! odometry, WiFi fingerprint scans, and 2D laser scans. Loop closures come
//! from two sources: matching of WiFi fingerprint sequences (first pose-graph
//! optimization) and ICP scan registration (second optimization). A synthetic
//! world simulator generates logs with known ground truth so every stage is
//! verifiable end to end.

pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod geom;
pub mod graph;
pub mod gridmap;
pub mod io;
pub mod kdtree;
pub mod pipeline;
pub mod scanmatch;
pub mod sim;
pub mod seqmatch;
pub mod track;

pub use error::{Error, Result};
