//! Desk-scale quasi-static simulator for a bi-manual magnetic block
//! assembly task: two 6-DOF arms, three magnetized blocks, and the
//! actuation pipeline (velocity/acceleration limits, delayed and
//! interpolated position commands, a first-order tracking plant) that
//! sits between a 4 Hz policy and the 100 Hz physics tick.

pub mod actuation;
pub mod env;
pub mod error;
pub mod kinematics;
pub mod pose;
pub mod replay;
pub mod world;

pub use error::SimError;
