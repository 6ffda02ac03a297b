//! Point-cloud classification by spectral geometry disentanglement,
//! Kolmogorov-Arnold layers and unified representation attention.
//!
//! The forward pass for one cloud:
//!
//! ```text
//! X ─► affinity graph ─► Laplacian basis ─► band split ─► spectral filter
//!        ├─ sharp  X̂s ─► KANs ─► attention(X, KANs) ─► Ys = X + Ws·KANs ─┐
//!        └─ gentle X̂g ─► KANg ─► attention(X, KANg) ─► Yg = X + Wg·KANg ─┴► Z = [Ys | Yg]
//! Z ─► max/mean pool ─► affine head ─► logits
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod datasets;
pub mod error;
pub mod kan;
pub mod model;
pub mod numerics;
pub mod pointcloud;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, SeededRng};
