//! Distance correlation and partial distance correlation for feature
//! spaces of arbitrary (and different) dimensions: estimators with their
//! U-centered unbiased variants, exact gradients for use as training
//! losses, a block stochastic gradient optimizer for coupled model pairs,
//! FGM/PGD attacks, and the desk-scale experiment protocols built on top
//! (independent-feature pair training, layer similarity heatmaps, and
//! disentanglement loss composition).

pub mod attack;
pub mod batch;
pub mod bsg;
pub mod cli;
pub mod dcor;
pub mod dump;
pub mod error;
pub mod experiments;
pub mod export;
pub mod grad;
pub mod nn;
pub mod pdc;
pub mod reference;
pub mod rng;
pub mod synth;

pub use batch::SampleBatch;
pub use dcor::{dcor, pairwise_distances, pearson, DCorReport};
pub use error::{Error, Result};
pub use pdc::{bias_corrected_dcor2, pdcor, pdcov, u_center, u_inner, PDCorReport};
