//! Evaluation helpers: an exact transport oracle, the kNN protocol and the
//! synthetic toy data.

mod knn;
mod ot;
mod toy;

pub use knn::{default_k_grid, knn_accuracy, knn_predict, KnnReport, KnnScore, LabeledDistances};
pub use ot::exact_ot;
pub use toy::{generate_toy, Category, Hierarchy, ToyData, ToySpec};
