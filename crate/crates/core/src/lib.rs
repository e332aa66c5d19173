//! Point-process models for earthquake catalogues.
//!
//! This crate implements two marked temporal point processes on fractional-day
//! time axes:
//!
//! * a multidimensional fractional Hawkes process (MDFHP) whose subprocesses
//!   are magnitude bins that mutually excite through Mittag-Leffler density
//!   kernels, and
//! * the classical ETAS model (temporal, with exponential productivity and a
//!   modified-Omori kernel) as a baseline.
//!
//! The crate covers the full workflow: USGS catalogue ingestion ([`catalog`]),
//! kernel and intensity evaluation ([`mlf`], [`model`]), maximum-likelihood
//! fitting with information criteria and confidence intervals ([`estimate`]),
//! residual diagnostics via the random time change ([`residual`]), thinning
//! simulation ([`simulate`]) and probability forecast scoring by information
//! gain ([`infogain`]).

pub mod catalog;
pub mod estimate;
pub mod infogain;
pub mod mlf;
pub mod model;
pub mod optim;
pub mod quad;
pub mod residual;
pub mod simulate;
