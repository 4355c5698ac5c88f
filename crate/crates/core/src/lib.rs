//! Large-margin image-set representation and classification.
//!
//! Each image set (a `D x N_i` matrix of feature columns) is modelled twice:
//! as a linear combination of its own images and as a point on its affine
//! hull. Training learns per-set coefficients that keep the two models close
//! while pushing each set's hull point away from other classes and towards its
//! own, using kernel-weighted soft nearest neighbours. Classification assigns a
//! test set to the class that yields the smallest margin-aware energy.
//!
//! Module map:
//!
//! - [`hull`]: image sets, affine hulls and the two linear models
//! - [`neighborhood`]: hull distances, neighbour probabilities and margins
//! - [`solver`]: the accelerated proximal gradient solver for one set
//! - [`trainer`]: the alternating probability / coefficient update loop
//! - [`classifier`]: per-class energies and the nearest-mean baseline
//! - [`dataio`]: manifests, CSV feature files, model files, synthetic data
//! - [`gradcheck`]: finite-difference verification of the solver gradients

pub mod classifier;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod hull;
pub mod neighborhood;
pub mod solver;
pub mod trainer;

pub use classifier::{
    baseline_nearest_mean, class_energy, classify, ClassScore, Classification, ClassifyConfig,
};
pub use dataio::{Dataset, SynthSpec};
pub use error::{Error, Result};
pub use hull::{build_hull, hull_point, sample_point, AffineHull, ImageSet, SetRepresentation};
pub use neighborhood::{
    e_step, gaussian_kernel, probabilistic_margin, set_distance, KernelConfig,
    NeighborProbabilities,
};
pub use solver::{apg_solve, soft_threshold, NeighborTerm, SolveOutcome, SolverConfig};
pub use trainer::{total_objective, train, Sigma, TrainConfig, TrainedModel};
