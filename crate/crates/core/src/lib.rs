//! Robust node classification on noisy, heterophilous heterogeneous graphs.
//!
//! The [`trainer`] combines a feature-similarity encoder ([`knn`]), a learned
//! edge mask over the observed structure ([`hgsl`]) and a class-affinity gate
//! ([`affinity`]) on top of per-type projections and relational GCNs
//! ([`encoders`]). [`perturb`] injects schema-preserving edge noise and
//! [`spectral`] provides block-Laplacian diagnostics. All gradients come from
//! the dense reverse-mode tape in [`numerics`].

pub mod affinity;
pub mod cli;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod hgsl;
pub mod knn;
pub mod numerics;
pub mod perturb;
pub mod spectral;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/structure-learning.md")]
    mod structure_learning {}
    #[doc = include_str!("../../../book/src/affinity.md")]
    mod affinity {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/robustness.md")]
    mod robustness {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
