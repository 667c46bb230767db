//! Layer-wise probing of speech model representations for phonetic and
//! phonemic contrasts.
//!
//! The pipeline: load time-aligned phone annotations ([`corpus`]), select
//! target phones with stimulus patterns ([`phonepatterns`]), pool per-layer
//! frame representations into per-phone vectors ([`reprstore`]), and score
//! three-way softmax probes ([`probe`]) with a prevalence-weighted
//! multiclass ROC/AUC ([`evalmetrics`]) under nested cross-validation
//! ([`xval`]). [`dimselect`] picks a PCA dimensionality from control
//! contrasts and [`runner`] ties it all together.

pub mod corpus;
pub mod dimselect;
pub mod evalmetrics;
pub mod optim;
pub mod phonepatterns;
pub mod probe;
pub mod reprstore;
pub mod runner;
pub mod xval;
