//! Desk-scale traffic flow control stack.
//!
//! The crate simulates a highway platoon (a replayed lead vehicle, automated
//! vehicles, and car-following human drivers) together with the infrastructure
//! around it: a corridor speed planner fed by delayed segment speed estimates
//! and live vehicle pings, decentralized vehicle controllers that track the
//! published plan, polynomial fuel-rate models, macroscopic (box-averaged)
//! traffic fields, a KPI harness, and trajectory optimizers used as
//! performance references.

pub mod cfm;
pub mod control;
pub mod edie;
pub mod energy;
pub mod kpi;
pub mod optim;
pub mod planner;
pub mod sim;
pub mod units;
