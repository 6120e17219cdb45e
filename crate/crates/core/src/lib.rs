//! Photon-number tomography of noisy single-photon states from balanced
//! homodyne data.
//!
//! The pipeline bins phase-averaged quadrature samples into a fixed density
//! histogram and maps it affinely onto the photon-number weights
//! `(w0, w1, w2)`, from which the Wigner value at the origin and `g2(0)`
//! follow in closed form. An expectation-maximisation estimator on the raw
//! samples provides the maximum-likelihood reference.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiations.

pub mod error;
pub mod fock;
pub mod histogram;
pub mod io;
pub mod linear;
pub mod mle;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use fock::{
    apply_loss, component_pdf, fidelity, fit_eta, fit_family_pdf, g2_from_weights, hermite,
    invert_loss, laguerre, quad_pdf, wigner_grid, wigner_origin, wigner_value, EtaFit,
    LossCorrection, PhotonWeights, UniformAxis, WignerGrid,
};
pub use histogram::{bin_centers, build_histogram, DensityHistogram, HistogramConfig};
pub use linear::{
    evaluate, infer, normalize_prediction, predict_raw, train, Evaluation, Inference,
    LinearModel, NormalizedPrediction, StageTimings, TrainConfig,
};
pub use mle::{brute_force_mle, loglik, mle_em, mle_em_from, MleConfig, MleResult};
pub use scalar::Scalar;
pub use synth::{
    child_rng, extract_quadrature, make_dataset, sample_quadratures, sample_weights,
    simulate_trace, Dataset, ModeFunction, QuadratureBatch, TimeTrace,
};

pub type PhotonWeights64 = PhotonWeights<f64>;
pub type PhotonWeights32 = PhotonWeights<f32>;
pub type HistogramConfig64 = HistogramConfig<f64>;
pub type HistogramConfig32 = HistogramConfig<f32>;
pub type DensityHistogram64 = DensityHistogram<f64>;
pub type DensityHistogram32 = DensityHistogram<f32>;
pub type QuadratureBatch64 = QuadratureBatch<f64>;
pub type QuadratureBatch32 = QuadratureBatch<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type LinearModel64 = LinearModel<f64>;
pub type LinearModel32 = LinearModel<f32>;
pub type MleResult64 = MleResult<f64>;
pub type WignerGrid64 = WignerGrid<f64>;
pub type TimeTrace64 = TimeTrace<f64>;
pub type ModeFunction64 = ModeFunction<f64>;
