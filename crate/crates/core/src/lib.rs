//! Desk-scale toolkit for unsupervised machine translation into a
//! very-low-resource language: staged bilingual pretraining, cross-lingual
//! vocabulary transfer via embedding alignment and Levenshtein-filtered
//! lexicon induction, and configurable online/offline/cross-lingual
//! back-translation schedules.
//!
//! Everything runs on CPU at toy dimensions and is verified end-to-end on
//! synthetic language families with known ground truth.

pub mod align;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod lexicon;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod transfer;

pub use error::{Error, Result};
