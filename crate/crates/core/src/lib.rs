//! Deterministic simulator and analysis toolkit for a three-tether planar
//! perturbation rig: bounded tension allocation, wrench-feasible workspace
//! sweeps, tether drive-train force control, gait-synchronised warning
//! scheduling, randomized perturbation sessions, and displacement
//! statistics.

pub mod analysis;
pub mod config;
pub mod drivetrain;
pub mod gait;
pub mod io;
pub mod model;
pub mod session;
pub mod vec2;
pub mod workspace;

pub use config::SimConfig;
pub use drivetrain::{ControllerGains, ForceProfile, ForceTrace, LoadModel, PlantParams};
pub use gait::{Direction, GaitGenConfig, MarkerFrame, WarningModality, WarningSpec};
pub use model::{ForceCommand, Geometry, TetherTensionSet};
pub use session::{RunnerParams, SessionConfig, SessionOutput, TrialRecord, TrialSpec};
pub use vec2::Vec2;
pub use workspace::WorkspaceMap;
