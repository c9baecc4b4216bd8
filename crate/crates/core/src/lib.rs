//! Cell-level attribute learning for specimen image classification.
//!
//! A specimen image is a bag of segmented cells (interphase and mitotic),
//! each cell carrying bag-of-words histograms for its whole/inner/outer
//! regions. This crate learns small per-region banks of linear attribute
//! classifiers whose per-specimen averages form short, discriminative
//! specimen descriptors (the ARCAD and CRAD schemes), plus the usual
//! comparison baselines: random-projection and kernelized hashing, spectral
//! hashing, iterative quantization, dominant-pattern voting, reliability-
//! weighted voting, and object-bank score averaging.

pub mod attrlearn;
pub mod dataset;
pub mod featmap;
pub mod hashers;
pub mod linsvm;
pub mod model_io;
pub mod numeric;
