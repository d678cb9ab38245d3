//! SpMV optimization toolkit: CSR kernels and optimization variants, a
//! bound-and-bottleneck profiler, structural feature extraction, rule-based
//! and decision-tree bottleneck classifiers, and an end-to-end tuner.

pub mod bounds;
pub mod clsfeature;
pub mod clsprofile;
pub mod featext;
pub mod kernels;
pub mod matcore;
pub mod reference;
pub mod tuner;
pub mod variants;
