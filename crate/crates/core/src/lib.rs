//! Orthogonal-score kernel goodness-of-fit tests for parametric lifetime
//! models under complete sampling, left truncation with right censoring,
//! random double truncation and current status observation.
//!
//! A test run fits the null family by maximum likelihood, builds the Gram
//! matrix of the indicator-class score process, removes the span of the
//! likelihood scores, and calibrates the quadratic-form statistic with a
//! multiplier bootstrap:
//!
//! ```
//! use orthofit::{run_test, BootstrapConfig, Family, ObservedSample, TestOptions};
//!
//! let xs: Vec<f64> = (1..=40).map(|i| -(1.0 - i as f64 / 41.0).ln()).collect();
//! let sample = ObservedSample::complete(&xs).unwrap();
//! let boot = BootstrapConfig { b: 99, ..Default::default() };
//! let res = run_test(&sample, Family::Exponential, &boot, &TestOptions::default()).unwrap();
//! assert!(res.p_value > 0.05);
//! ```

pub mod error;
pub mod families;
pub mod goftest;
pub mod io;
pub mod kernelgram;
pub mod mle;
pub mod schemes;
pub mod simlab;

pub use error::{Error, Result, RowIssue, Stage};
pub use families::{Family, Model, Theta};
pub use goftest::{run_test, BootstrapConfig, Multiplier, TestOptions, TestResult};
pub use io::{ingest_csv, QuasarDataset, Report};
pub use kernelgram::{CrossMoment, GramBundle, GridConfig, GridRule};
pub use mle::{fit_mle, FitResult, MleOptions};
pub use schemes::{ObservedSample, Row, Scheme, SchemeScoreEngine};
pub use simlab::{run_study, SimulationConfig, SimulationReport, Study};
