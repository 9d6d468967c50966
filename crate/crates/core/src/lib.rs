//! Lasso and Conservative Lasso estimators, GIC tuning, high-probability
//! event diagnostics and a Monte Carlo study of whether a new user gains by
//! misreporting their attributes to a fitted predictor.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod rng;
pub mod solver;
pub mod tuning;
pub mod weighted;

pub use datagen::{DataGenerator, Dataset, DgpConfig, NewUser, ObservedData};
pub use error::{Error, Result};
pub use experiment::{
    emit_table, run_cell, run_experiment, ExperimentConfig, ICCell, OutputFormat,
};
pub use solver::{fit_lasso, Fit, LassoProblem, SolverSettings};
pub use tuning::{build_grid, gic_select, Estimator, GicSelection, GicSettings, TuningGrid};
pub use weighted::{fit_conservative, ConservativeFit, WeightVector};
