//! Placement of a two-arm surgical robot: model-free setup scores, learned
//! collision proxies, score regressors and a multi-start placement optimizer.

pub mod fastron;
pub mod geometry;
pub mod io;
pub mod kinematics;
pub mod optimizer;
pub mod scoring;
pub mod svr;
pub mod trajectory;
pub mod world;

pub use nalgebra::Vector3;

pub use fastron::{FastronModel, FastronParams, FastronSet, LabeledConfigSet};
pub use geometry::{CollisionReport, GeometricChecker};
pub use kinematics::{ArmFrame, IkResult, IkSettings, JointConfig};
pub use optimizer::{ObjectiveSpec, Solution, Weights};
pub use scoring::{Checker, CheckerKind, CollisionScores, ScoreDataset, ScoreSample};
pub use svr::{ScoreKind, ScoreMaps, SvrModel, SvrParams};
pub use trajectory::{TrajectoryReport, evaluate_setup};
pub use world::{Arm, BasePose, Limits, SetupPose, WorldError, WorldLayout};
