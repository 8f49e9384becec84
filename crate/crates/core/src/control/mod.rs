//! Decentralized vehicle controllers.
//!
//! [`accel`] holds the acceleration-based controller deployed on vehicles with
//! a raw acceleration interface; [`acc`] models vehicles driven through their
//! stock adaptive cruise control (setpoints actuated by button presses);
//! [`lane_change`] is the recovery filter that smooths controller output
//! through cut-ins and cut-outs.

pub mod acc;
pub mod accel;
pub mod lane_change;
