//! Codon-level mRNA design with conditional generative flow networks.

// NaN must fail validation, which `!(x >= 0.0)` expresses directly
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod curriculum;
pub mod env;
pub mod error;
pub mod genetic_code;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod training;
pub mod verify;

pub use env::{Action, ActionMask, CodonDesignEnv, State, Trajectory, Transition};
pub use error::{Error, Result};
pub use genetic_code::{AminoAcid, Base, Codon, MrnaSequence, Protein};
pub use objectives::{ObjectiveConfig, ObjectiveVector, Objectives, WeightVector};
