//! Canonical circular trajectories in the RoI and the three-metric setup
//! evaluation: reachability, self-collision-free and environment-collision-free
//! fractions of waypoints.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometricChecker;
use crate::kinematics::{ArmFrame, IkSettings, JointConfig};
use crate::world::{Arm, SetupPose, WorldLayout};

/// Largest tip error counted as reaching a waypoint: half the 6 mm voxel.
pub const REACH_THRESHOLD: f64 = 0.003;
pub const CIRCLE_RADIUS: f64 = 0.02;
pub const WAYPOINTS: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory waypoint {point:?} lies outside the region of interest")]
    OutsideRoi { point: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub radius: f64,
    pub waypoints: usize,
}

impl Trajectory {
    /// Evenly spaced points on the circle, starting on the first in-plane
    /// axis.
    pub fn points(&self) -> Vec<Vector3<f64>> {
        let n = self.normal.normalize();
        let seed = if n.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let e1 = (seed - n * n.dot(&seed)).normalize();
        let e2 = n.cross(&e1);
        (0..self.waypoints)
            .map(|k| {
                let a = TAU * k as f64 / self.waypoints as f64;
                self.center + self.radius * (a.cos() * e1 + a.sin() * e2)
            })
            .collect()
    }
}

/// Nine circles: normal-z circles at the RoI center and at six axis offsets,
/// plus normal-x and normal-y circles at the center. Offsets are the largest
/// that keep every circle 1 mm inside the cube.
pub fn canonical_trajectories(layout: &WorldLayout) -> Result<Vec<Trajectory>, TrajectoryError> {
    let c = layout.roi_center;
    let offset = (0.5 * layout.roi_side - CIRCLE_RADIUS - 1e-3).max(0.0);
    let circle = |center: Vector3<f64>, normal: Vector3<f64>| Trajectory {
        center,
        normal,
        radius: CIRCLE_RADIUS,
        waypoints: WAYPOINTS,
    };
    let mut out = vec![circle(c, Vector3::z())];
    for axis in [Vector3::x(), Vector3::y(), Vector3::z()] {
        for s in [1.0, -1.0] {
            out.push(circle(c + axis * (s * offset), Vector3::z()));
        }
    }
    out.push(circle(c, Vector3::x()));
    out.push(circle(c, Vector3::y()));
    for t in &out {
        for p in t.points() {
            if !layout.roi_contains(&p, 1e-12) {
                return Err(TrajectoryError::OutsideRoi {
                    point: [p.x, p.y, p.z],
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaypointEval {
    pub reachable: bool,
    pub self_free: bool,
    pub env_free: bool,
    pub q_used: JointConfig,
}

/// Posture of the arm that is not being evaluated: shaft aimed at the RoI
/// center, retracted to minimum insertion.
pub fn nominal_config(frame: &ArmFrame, layout: &WorldLayout) -> JointConfig {
    let lim = &layout.joint_limits;
    frame.aim(&layout.roi_center, lim.insertion.lo).clamped(lim)
}

struct Evaluator<'a> {
    layout: &'a WorldLayout,
    checker: GeometricChecker<'a>,
    frames: [ArmFrame; 2],
    nominal: [JointConfig; 2],
    settings: IkSettings,
}

impl<'a> Evaluator<'a> {
    fn new(setup: &SetupPose, layout: &'a WorldLayout) -> Self {
        let frames = [
            ArmFrame::new(&setup.arm1, layout, Arm::One),
            ArmFrame::new(&setup.arm2, layout, Arm::Two),
        ];
        Self {
            layout,
            checker: GeometricChecker::new(layout),
            nominal: [
                nominal_config(&frames[0], layout),
                nominal_config(&frames[1], layout),
            ],
            frames,
            settings: IkSettings::default(),
        }
    }

    fn waypoint(&self, arm: Arm, target: &Vector3<f64>, q_prev: &JointConfig) -> WaypointEval {
        let frame = &self.frames[arm.index()];
        let limits = &self.layout.joint_limits;
        let passes = |q: &JointConfig, tip: &Vector3<f64>, err: f64| {
            err < REACH_THRESHOLD && self.layout.roi_contains(tip, 0.0) && q.within(limits)
        };
        let free = frame.solve_ik(target, &self.settings, q_prev, limits);
        let (reachable, q) = if passes(&free.q, &free.achieved, free.error_norm) {
            (true, free.q)
        } else {
            // Closest tip position the joint limits allow.
            let r = frame.solve_ik_projected(target, &self.settings, q_prev, limits);
            (passes(&r.q, &r.achieved, r.error_norm), r.q)
        };
        let mut qs = self.nominal;
        qs[arm.index()] = q;
        let report = self.checker.check_frames(&self.frames, &qs[0], &qs[1]);
        WaypointEval {
            reachable,
            self_free: !report.self_collision,
            env_free: !report.env_collision(arm),
            q_used: q,
        }
    }

    /// Per-waypoint flags of one arm along a trajectory, warm-starting each
    /// solve from the previous waypoint.
    fn follow(&self, arm: Arm, points: &[Vector3<f64>]) -> Vec<WaypointEval> {
        let frame = &self.frames[arm.index()];
        let limits = &self.layout.joint_limits;
        let mut q = match points.first() {
            Some(p) => frame.aim(p, (p - frame.rcm).norm()).clamped(limits),
            None => return Vec::new(),
        };
        points
            .iter()
            .map(|p| {
                let e = self.waypoint(arm, p, &q);
                q = e.q_used;
                e
            })
            .collect()
    }
}

/// Evaluates one waypoint for `arm`, the other arm held at its nominal
/// posture.
pub fn evaluate_waypoint(
    setup: &SetupPose,
    arm: Arm,
    target: &Vector3<f64>,
    q_prev: &JointConfig,
    layout: &WorldLayout,
) -> WaypointEval {
    Evaluator::new(setup, layout).waypoint(arm, target, q_prev)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub reachability: f64,
    pub self_free: f64,
    pub env_free: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub reachability: MeanStd,
    pub self_free: MeanStd,
    pub env_free: MeanStd,
    pub combined: f64,
    pub per_trajectory: Vec<TrajectoryMetrics>,
}

impl TrajectoryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite report serializes")
    }
}

/// Both arms follow every canonical trajectory; a waypoint counts for a
/// metric only when it holds for both arms.
pub fn evaluate_setup(
    setup: &SetupPose,
    layout: &WorldLayout,
) -> Result<TrajectoryReport, TrajectoryError> {
    let trajectories = canonical_trajectories(layout)?;
    let ev = Evaluator::new(setup, layout);
    let per_trajectory: Vec<TrajectoryMetrics> = trajectories
        .iter()
        .map(|t| {
            let points = t.points();
            let a = ev.follow(Arm::One, &points);
            let b = ev.follow(Arm::Two, &points);
            let frac = |f: &dyn Fn(&WaypointEval, &WaypointEval) -> bool| {
                a.iter().zip(&b).filter(|(x, y)| f(x, y)).count() as f64 / points.len() as f64
            };
            TrajectoryMetrics {
                reachability: frac(&|x, y| x.reachable && y.reachable),
                self_free: frac(&|x, y| x.self_free && y.self_free),
                env_free: frac(&|x, y| x.env_free && y.env_free),
            }
        })
        .collect();
    let col = |f: fn(&TrajectoryMetrics) -> f64| {
        MeanStd::of(&per_trajectory.iter().map(f).collect::<Vec<_>>())
    };
    let reachability = col(|m| m.reachability);
    let self_free = col(|m| m.self_free);
    let env_free = col(|m| m.env_free);
    Ok(TrajectoryReport {
        combined: reachability.mean + self_free.mean + env_free.mean,
        reachability,
        self_free,
        env_free,
        per_trajectory,
    })
}

/// Fixed-layout table with one column per labelled report.
pub fn format_table(columns: &[(&str, &TrajectoryReport)]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<16}", "");
    for (label, _) in columns {
        let _ = write!(s, "{label:>14}");
    }
    s.push('\n');
    let rows: [(&str, fn(&TrajectoryReport) -> MeanStd); 3] = [
        ("Reachability", |r| r.reachability),
        ("Self-coll. free", |r| r.self_free),
        ("Env-coll. free", |r| r.env_free),
    ];
    for (name, get) in rows {
        let _ = write!(s, "{name:<16}");
        for (_, r) in columns {
            let m = get(r);
            let _ = write!(s, "{:>14}", format!("{:.2} ± {:.2}", m.mean, m.std));
        }
        s.push('\n');
    }
    let _ = write!(s, "{:<16}", "Combined");
    for (_, r) in columns {
        let _ = write!(s, "{:>14}", format!("{:.2}", r.combined));
    }
    s.push('\n');
    s
}
