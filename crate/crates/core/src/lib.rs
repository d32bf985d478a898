//! Dynamic system and subsystem partitioning of conservative compartmental models.

pub mod cli;
pub mod diact;
pub mod expr;
pub mod interact;
pub mod model;
pub mod odeint;
pub mod partition;
pub mod pathflow;
pub mod staticnet;
