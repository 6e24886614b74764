//! Fractional-order PID benchmarking on a coupled two-tank process:
//! Grünwald–Letnikov operators, plant models, controllers, frequency-domain
//! tuning, closed-loop simulation and a two-level factorial analysis of
//! robustness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controllers;
pub mod error;
pub mod factorial;
pub mod fracops;
pub mod plant;
pub mod simloop;
pub mod tuning;

pub use controllers::{ControllerParams, FractionalPid, NamedController};
pub use error::{Error, Result};
pub use plant::{design_plant, TankState, TransferFunction};
pub use simloop::{simulate, FactorLevels, PlantMode, SimConfig, SimTrace};
pub use tuning::{tune, Family, FrequencySpec, TuneConfig, TuningResult};
