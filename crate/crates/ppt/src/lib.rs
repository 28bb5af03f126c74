//! Token-compression engine for vision transformers: a minimal ViT forward
//! pass with an adaptive prune-or-pool stage, an analytical FLOPs
//! accountant, and trace/visualization tooling.

pub mod compress;
pub mod error;
pub mod flops;
pub mod numeric;
pub mod oracle;
pub mod ppm;
pub mod runconfig;
pub mod synthetic;
pub mod trace;
pub mod viz;
pub mod vit;
pub mod weightfile;

pub use error::{Error, Result};
