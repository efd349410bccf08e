//! Task-to-motion building blocks for tabletop and mobile manipulation.
//!
//! * [`kinematics`]: poses, slerp, serial-chain FK and relaxed IK.
//! * [`scene_graph`]: the object-centric episodic world model.
//! * [`occupancy`]: single-view conservative voxel reconstruction.
//! * [`planner`]: ESDF, clearance-constrained A* and trajectory synthesis.
//! * [`primitives`]: the `move_to` / `operate` / `navigate` tool library.

pub mod kinematics;
pub mod occupancy;
pub mod planner;
pub mod primitives;
pub mod scene_graph;
