//! All-in-one image restoration by joint half-quadratic splitting.
//!
//! A degraded image is modeled as `O = T ∘ B + D`: a transmission map `T`
//! multiplies the clean image `B` and a degradation map `D` adds to it,
//! which covers rain streaks (`T = 1`), haze (`D = (1 - T) A`), and low
//! light (`D = 0`) in one form. Restoration and degradation modeling are two
//! coupled energies solved together by alternating closed-form data updates
//! with proximal prior steps; the matrices are fitted against a clean/
//! degraded reference pair and carried over to the target image by
//! deterministic patch-similarity attention.
//!
//! The crate is organized as a library first; the `unfold-restore` binary is
//! a thin wrapper over [`cli`]. Every major capability has a runnable
//! example:
//!
//! ```text
//! cargo run --release --example simulate_corpus      # seeded synthetic triples
//! cargo run --release --example classify_degradation # heuristic type classifier
//! cargo run --release --example restore_with_reference
//! cargo run --release --example proximal_priors      # prox operators up close
//! cargo run --release --example dpt_transfer         # patch-attention transfer
//! cargo run --release --example energy_descent       # alternation energy traces
//! cargo run --release --example oracle_suite         # closed-form vs numeric search
//! cargo run --release --example evaluate_metrics     # PSNR / SSIM / losses
//! ```
//!
//! Modules follow the pipeline: [`raster`] (arrays and I/O) → [`degrade`]
//! (forward models and simulators) → [`init`] (classification and initial
//! estimates) → [`priors`] / [`dpt`] / [`solver`] (the unfolding engine) →
//! [`metrics`] and [`oracle`] (evaluation and verification).

pub mod cli;
pub mod degrade;
pub mod dpt;
pub mod error;
pub mod init;
pub mod metrics;
pub mod oracle;
pub mod priors;
pub mod raster;
pub mod solver;
mod util;

pub use degrade::{DegradationKind, DegradationMatrices, SimParams};
pub use error::{Error, Result};
pub use raster::{load_image, save_image, FeatureGrid, Image};
pub use solver::{RestorationResult, SolverConfig, SolverState};
