//! Online single-object tracking: a discriminative filter learned by
//! conjugate gradient over a sample memory, fused with template
//! cross-correlation and a gated short-term template.

pub mod classifier;
pub mod error;
pub mod eval;
pub mod featmap;
pub mod features;
pub mod matcher;
pub mod optimizer;
pub mod tracker;

pub use error::{Error, Result};
pub use featmap::{iou, FeatureMap, Rect, ScoreMap};
pub use features::Image;
