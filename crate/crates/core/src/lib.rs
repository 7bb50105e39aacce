//! Compression-fingerprint image forgery localization.
//!
//! The pipeline turns a grayscale image into a per-pixel compression
//! fingerprint with a small CNN ([`net`]), summarizes the fingerprint with
//! co-occurrence histograms over sliding windows, clusters the windows with a
//! two-component Gaussian mixture ([`localization`]), and scores the
//! resulting heatmap with the best Matthews correlation over thresholds
//! ([`metrics`]). [`dataset`] builds the training recipes and composite test
//! images; [`runner`] wires the stages into cached, reproducible runs.

pub mod dataset;
pub mod error;
pub mod par;
pub mod seed;

pub use error::{Error, Result};
pub mod io;
pub mod localization;
pub mod metrics;
pub mod net;
pub mod runner;
