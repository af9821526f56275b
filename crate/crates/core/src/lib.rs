//! Prototype-guided adaptive distillation (PGAD) at desk scale.
//!
//! A two-modality teacher (modality A + modality B, fused) distills into a
//! student that only ever sees modality A. Samples that lack modality B are
//! still used: the student pulls their features toward class prototypes built
//! from the teacher's fused features of complete samples, and the teacher is
//! trained on a learnable mix of genuine pairs and same-class pseudo-pairs.
//!
//! Module map:
//!
//! - [`synthdata`]: synthetic two-modality datasets, missingness, stratified folds
//! - [`nets`]: MLP encoders, teacher/student networks with explicit backward passes
//! - [`losses`]: cross-entropy, distillation, contrastive pair, prototype, weighted total
//! - [`prototypes`]: per-class prototype construction and nearest-prototype lookup
//! - [`ams`]: adaptive batch composition between genuine pairs and pseudo-pairs
//! - [`trainer`]: the joint training step, Adam, cosine schedule, `fit`
//! - [`eval`]: MCC/AUC/SEN/SPE, paired t-test, Bonferroni
//! - [`harness`]: cross-validated scenario runs, CSV/markdown reports, comparisons

pub mod ams;
pub mod error;
pub mod eval;
pub mod harness;
pub mod losses;
pub mod nets;
pub mod prototypes;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use error::{PgadError, Result};
