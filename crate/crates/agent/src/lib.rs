//! Closed-loop manipulation agent and the kinematic simulator it is
//! evaluated in.

pub mod agent;
pub mod eval;
pub mod sim;
