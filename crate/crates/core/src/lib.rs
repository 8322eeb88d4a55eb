//! Logit-only product-of-experts fusion.
//!
//! A pool of independently trained experts is represented only by the logits
//! each one emits per sample. The crate calibrates each expert with a scalar
//! temperature, derives per-sample confidence/disagreement cues from the
//! calibrated distributions, and learns a small gating network that produces
//! simplex weights for a normalized weighted product of the expert
//! distributions. Classification and discrete-time survival are supported.
//!
//! Module map:
//!
//! | module          | contents                                             |
//! |-----------------|------------------------------------------------------|
//! | [`data`]        | domain types, validation, JSONL exchange format      |
//! | [`calibration`] | per-expert temperature scaling                       |
//! | [`cues`]        | confidence, margin, entropy and disagreement cues    |
//! | [`gate`]        | two-layer gating MLP, analytic gradients, trainer    |
//! | [`fusion`]      | weighted product fusion and the baseline combiners   |
//! | [`survival`]    | hazards, survival NLL, bin-wise fusion               |
//! | [`metrics`]     | AUC, ACC, F1, C-index, EffScore, rank tables         |
//! | [`simulator`]   | synthetic heterogeneous expert pools                 |
//! | [`ablation`]    | fusion-mode ablation over synthetic pools            |
//! | [`verify`]      | numerical checks of the product-fusion guarantees    |
//! | [`pipeline`]    | cross-validated calibrate/train/fuse/evaluate runs   |

pub mod ablation;
pub mod calibration;
pub mod cues;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gate;
pub mod metrics;
pub mod pipeline;
pub mod simulator;
pub mod survival;
pub mod verify;

pub use error::{Error, Result};
