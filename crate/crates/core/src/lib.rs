//! Joint hierarchical representation learning for the rows and columns of a
//! nonnegative data matrix.
//!
//! Rows (samples) and columns (features) each get a weighted binary tree. The
//! trees are refined by alternating between the two modes: a tree over the
//! features is the ground metric for a tree-Wasserstein distance between
//! samples, that distance is decoded into a sample tree, which in turn is the
//! ground metric between features, and so on until the distances stop
//! changing. Optionally every step filters the data with the Haar wavelets
//! induced by the current trees.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`diffusion`] | Gaussian kernels, diffusion operators, dyadic fractional powers, landmark spectra |
//! | [`hyperbolic`] | multi-scale half-space embedding, product-manifold distance, linkage scores |
//! | [`tree`] | tree decoding, tree metric, postorder intervals, Newick |
//! | [`twd`] | closed-form tree-Wasserstein distance and the snowflake regularizer |
//! | [`wavelet`] | tree Haar bases, coefficient selection and filtering |
//! | [`pipeline`] | the alternating iterations and their diagnostics |
//! | [`eval`] | exact transport oracle, kNN protocol, synthetic toy data |
//! | [`io`] | dense/sparse readers, matrix/tree/history writers |

pub mod diffusion;
pub mod error;
pub mod eval;
pub mod hyperbolic;
pub mod io;
pub mod matrix;
pub mod pipeline;
pub mod tree;
pub mod twd;
pub mod wavelet;

pub use error::{Error, Result};
pub use matrix::{DataMatrix, DistanceMatrix};
pub use tree::WeightedBinaryTree;
