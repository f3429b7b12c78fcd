//! Two-scale global-local enrichment solver for linear elasticity on nested
//! tetrahedral meshes, with simulated message-passing ranks.

// Dense kernels index several arrays in lockstep; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod sparse;
pub mod runtime;
pub mod mesh;
pub mod elasticity;
pub mod bench;
pub mod transfer;
pub mod scheduler;
pub mod ddsolver;
pub mod twoscale;
pub mod costmodel;
