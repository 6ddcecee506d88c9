#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod irl;
pub mod mdft;
pub mod mdp;
pub mod planner;
pub mod rng;
pub mod zeta;
pub mod orchestrate;
pub mod metrics;
pub mod io;
pub mod experiment;
