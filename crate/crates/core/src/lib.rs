//! Coordinated multi-AP 60 GHz WLAN simulator.
//!
//! The crate is split along the data flow of the system:
//!
//! - [`propagation`]: antenna patterns, image-method rays and link budgets.
//! - [`radiomap`]: offline fingerprint / best-sector / power databases.
//! - [`learning`]: affinity propagation over fingerprints grouped by best sector.
//! - [`coordinator`]: online AP association, best-beam selection and bad-beam estimation.
//! - [`macsim`]: the discrete-event MAC engine for coordinated and autonomous operation.
//! - [`harness`]: scenario configuration, metrics, sweeps and CSV output.

pub mod coordinator;
pub mod error;
pub mod harness;
pub mod learning;
pub mod macsim;
pub mod propagation;
pub mod radiomap;

pub use error::{Error, Result};
