//! Linear adapters between face-embedding spaces, and evaluation of
//! template-inversion attacks that go through a foundation model's space.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two instantiations.

pub mod adapter;
pub mod attack;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod synth;
mod wire;

pub use adapter::{apply, apply_with, evaluate_mse, fit, fit_validated, AdapterModel, ApplyOptions, Method, Precision, TrainConfig, TrainReport};
pub use attack::{
    ablation_curve, evaluate_sar, render_report, transferability_matrix, AblationPoint, AttackReport, AttackRun, ReferenceMode,
    ReportFormat, ReportRecord,
};
pub use embedding::{pair, EmbeddingRecord, EmbeddingSet, PairedEmbeddings, SampleKey};
pub use error::{Error, Result};
pub use metrics::{build_scores, calibrate_threshold, cosine, OperatingPoint, ScoreSet};
pub use scalar::Scalar;
pub use synth::{embed, make_world, simulate_reconstruction, WorldConfig};

pub type MatrixF32 = linalg::Matrix<f32>;
pub type MatrixF64 = linalg::Matrix<f64>;
pub type AdamF32 = optim::Adam<f32>;
pub type AdamF64 = optim::Adam<f64>;
