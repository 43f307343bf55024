//! pose6d — a self-contained 6D object pose estimation toolkit.
//!
//! The crate covers the full desk-scale pipeline for multi-object pose
//! estimation from keypoint regression:
//!
//! 1. **geometry** – rotation representations (matrix / 6D), perspective
//!    projection, cuboid keypoint sets, farthest point sampling, and the
//!    cross-ratio of collinear point tuples.
//! 2. **matching** – set-prediction matching cost and optimal bipartite
//!    assignment (Kuhn–Munkres).
//! 3. **autodiff** – a minimal reverse-mode tape over small dense matrices,
//!    plus AdamW with global-norm gradient clipping.
//! 4. **losses** – the differentiable training objective: class NLL,
//!    box L1 + generalized IoU, keypoint L1 + cross-ratio consistency, and
//!    model-point pose displacement.
//! 5. **models** – the keypoint-to-rotation MLP and a toy encoder/decoder
//!    set predictor with object queries, with training loops.
//! 6. **pnp** – EPnP and a RANSAC wrapper as the analytic pose-recovery
//!    baseline.
//! 7. **metrics** – ADD / ADD-S / AUC / recall-at-threshold evaluation and
//!    per-class report assembly.
//! 8. **synth** – deterministic synthetic scene generation used by the
//!    training loops, the ablation grid, and the test suite.
//!
//! Everything is `no_std + alloc`; all randomness flows through named,
//! counter-based seed streams so runs are bit-reproducible.

#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod ablation;
pub mod autodiff;
pub mod geometry;
pub mod linalg;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod models;
pub mod pnp;
pub mod rng;
pub mod synth;
