//! World layout: arm bases, remote-center offsets, joint limits, the region of
//! interest, the camera arm, the side walls and the per-arm search grids.
//!
//! A layout is loaded from a JSON document whose keys mirror the field names
//! below. Every key is optional; missing keys take the default layout values.
//! All lengths are meters and all angles radians.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid layout: {0}")]
    Invariant(String),
    #[error("{arm} pose out of range: {what}")]
    OutOfRange { arm: Arm, what: String },
}

/// One of the two patient-side arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::One, Arm::Two];

    pub fn index(self) -> usize {
        match self {
            Arm::One => 0,
            Arm::Two => 1,
        }
    }

    pub fn from_number(n: u8) -> Option<Arm> {
        match n {
            1 => Some(Arm::One),
            2 => Some(Arm::Two),
            _ => None,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "arm{}", self.index() + 1)
    }
}

/// Planar base placement of one arm. `theta` is an offset from the arm's
/// nominal heading.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl BasePose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }
}

/// Joint placement of both arms; the optimization variable.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SetupPose {
    pub arm1: BasePose,
    pub arm2: BasePose,
}

impl SetupPose {
    pub fn new(arm1: BasePose, arm2: BasePose) -> Self {
        Self { arm1, arm2 }
    }

    pub fn arm(&self, arm: Arm) -> &BasePose {
        match arm {
            Arm::One => &self.arm1,
            Arm::Two => &self.arm2,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.arm1.x,
            self.arm1.y,
            self.arm1.theta,
            self.arm2.x,
            self.arm2.y,
            self.arm2.theta,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            arm1: BasePose::new(v[0], v[1], v[2]),
            arm2: BasePose::new(v[3], v[4], v[5]),
        }
    }
}

/// Closed interval `[lo, hi]`, written as a two-element array in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Limits {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Limits {
    fn from(v: [f64; 2]) -> Self {
        Limits::new(v[0], v[1])
    }
}

impl From<Limits> for [f64; 2] {
    fn from(l: Limits) -> Self {
        [l.lo, l.hi]
    }
}

impl Limits {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Affine map onto `[-1, 1]`.
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mid()) / self.half_width()
    }

    pub fn denormalize(&self, u: f64) -> f64 {
        self.mid() + u * self.half_width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointLimits {
    pub yaw: Limits,
    pub pitch: Limits,
    pub insertion: Limits,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            yaw: Limits::new(-1.5, 1.5),
            pitch: Limits::new(-0.9, 0.9),
            insertion: Limits::new(0.05, 0.24),
        }
    }
}

/// Camera arm: endoscope capsule plus the cone enveloping its motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcmLayout {
    pub rcm: Vector3<f64>,
    /// Endoscope direction. When absent the endoscope aims at the RoI center.
    pub direction: Option<Vector3<f64>>,
    pub length: f64,
    pub radius: f64,
    pub cone_half_angle: f64,
    pub cone_height: f64,
}

impl Default for EcmLayout {
    fn default() -> Self {
        Self {
            rcm: Vector3::new(0.0, -0.12, 0.52),
            direction: None,
            length: 0.15,
            radius: 0.006,
            cone_half_angle: PI / 6.0,
            cone_height: 0.30,
        }
    }
}

/// Obstacle half-space `{p : normal · p >= offset}`; `normal` points out of
/// the free region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub center: Vector2<f64>,
    pub half_extent: f64,
}

impl Grid {
    pub fn x_limits(&self) -> Limits {
        Limits::new(self.center.x - self.half_extent, self.center.x + self.half_extent)
    }

    pub fn y_limits(&self) -> Limits {
        Limits::new(self.center.y - self.half_extent, self.center.y + self.half_extent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyRadii {
    pub spar: f64,
    pub shaft_out: f64,
    pub shaft_in: f64,
}

impl Default for BodyRadii {
    fn default() -> Self {
        Self {
            spar: 0.06,
            shaft_out: 0.025,
            shaft_in: 0.005,
        }
    }
}

/// Immutable description of the operating-room scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldLayout {
    pub base_height: f64,
    /// RCM position in the base frame (x along the heading).
    pub rcm_offset: Vector3<f64>,
    pub nominal_heading: [f64; 2],
    pub theta_bound: f64,
    pub joint_limits: JointLimits,
    pub roi_center: Vector3<f64>,
    pub roi_side: f64,
    pub voxel_count_per_axis: usize,
    /// `null` removes the camera arm from the scene.
    pub ecm: Option<EcmLayout>,
    pub walls: [Wall; 2],
    /// Extra clearance required from the walls.
    pub wall_margin: f64,
    pub grids: [Grid; 2],
    pub radii: BodyRadii,
    /// Spar extent behind the RCM along the instrument axis, `[near, far]`.
    pub spar_span: [f64; 2],
    /// Spar lean from vertical toward the base at zero pitch, radians.
    pub spar_tilt: f64,
    pub tool_length: f64,
}

impl Default for WorldLayout {
    fn default() -> Self {
        Self {
            base_height: 0.66,
            rcm_offset: Vector3::new(0.40, 0.0, -0.16),
            nominal_heading: [PI / 6.0, PI - PI / 6.0],
            theta_bound: 0.3,
            joint_limits: JointLimits::default(),
            roi_center: Vector3::new(0.0, 0.0, 0.35),
            roi_side: 0.06,
            voxel_count_per_axis: 5,
            ecm: Some(EcmLayout::default()),
            walls: [
                Wall {
                    normal: Vector3::new(1.0, 0.0, 0.0),
                    offset: 0.85,
                },
                Wall {
                    normal: Vector3::new(-1.0, 0.0, 0.0),
                    offset: 0.85,
                },
            ],
            wall_margin: 0.0,
            grids: [
                Grid {
                    center: Vector2::new(-0.45, -0.25),
                    half_extent: 0.35,
                },
                Grid {
                    center: Vector2::new(0.45, -0.25),
                    half_extent: 0.35,
                },
            ],
            radii: BodyRadii::default(),
            spar_span: [0.10, 0.50],
            spar_tilt: PI / 4.0,
            tool_length: 0.28,
        }
    }
}

fn invariant(ok: bool, what: &str) -> Result<(), WorldError> {
    if ok {
        Ok(())
    } else {
        Err(WorldError::Invariant(what.to_string()))
    }
}

impl WorldLayout {
    /// Loads and validates a layout file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Parses a layout document. Whitespace-only input yields the defaults.
    pub fn from_json_str(text: &str) -> Result<Self, WorldError> {
        let layout = if text.trim().is_empty() {
            WorldLayout::default()
        } else {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de).map_err(|e| WorldError::Parse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        invariant(self.base_height.is_finite(), "base_height must be finite")?;
        invariant(finite(self.rcm_offset.as_slice()), "rcm_offset must be finite")?;
        invariant(self.roi_side > 0.0, "roi_side must be positive")?;
        invariant(
            self.voxel_count_per_axis >= 2,
            "voxel_count_per_axis must be at least 2",
        )?;
        invariant(
            self.theta_bound > 0.0 && self.theta_bound < PI,
            "theta_bound out of range",
        )?;
        let jl = &self.joint_limits;
        for (name, l) in [("yaw", jl.yaw), ("pitch", jl.pitch), ("insertion", jl.insertion)] {
            invariant(l.lo < l.hi, &format!("joint_limits.{name} must satisfy lo < hi"))?;
        }
        invariant(
            jl.insertion.lo > 0.0 && jl.insertion.hi <= self.tool_length,
            "insertion limits must satisfy 0 < lo < hi <= tool_length",
        )?;
        let r = &self.radii;
        invariant(
            r.spar > 0.0 && r.shaft_out > 0.0 && r.shaft_in > 0.0,
            "body radii must be positive",
        )?;
        invariant(
            self.spar_span[0] >= 0.0 && self.spar_span[0] < self.spar_span[1],
            "spar_span must satisfy 0 <= near < far",
        )?;
        invariant(
            (0.0..=PI / 2.0).contains(&self.spar_tilt),
            "spar_tilt must lie in [0, pi/2]",
        )?;
        invariant(self.wall_margin >= 0.0, "wall_margin must be non-negative")?;
        for w in &self.walls {
            invariant(
                (w.normal.norm() - 1.0).abs() <= 1e-9,
                "wall normal must be a unit vector",
            )?;
        }
        for g in &self.grids {
            invariant(g.half_extent > 0.0, "grid half_extent must be positive")?;
        }
        let (g1, g2) = (self.grids[0].x_limits(), self.grids[1].x_limits());
        invariant(
            g1.hi < g2.lo || g2.hi < g1.lo,
            "arm grids must be disjoint in x",
        )?;
        if let Some(ecm) = &self.ecm {
            invariant(
                ecm.cone_half_angle > 0.0 && ecm.cone_half_angle < PI / 2.0,
                "ecm cone half-angle out of range (0, pi/2)",
            )?;
            invariant(ecm.cone_height > 0.0, "ecm cone_height must be positive")?;
            invariant(
                ecm.radius > 0.0 && ecm.length > 0.0,
                "ecm radius and length must be positive",
            )?;
            invariant(
                ecm.direction.map_or(true, |d| d.norm() > 1e-12),
                "ecm direction must be non-zero",
            )?;
            invariant(
                (self.roi_center - ecm.rcm).norm() > 1e-12 || ecm.direction.is_some(),
                "ecm rcm coincides with the RoI center",
            )?;
        }
        Ok(())
    }

    pub fn grid(&self, arm: Arm) -> &Grid {
        &self.grids[arm.index()]
    }

    pub fn heading(&self, arm: Arm) -> f64 {
        self.nominal_heading[arm.index()]
    }

    pub fn theta_limits(&self) -> Limits {
        Limits::new(-self.theta_bound, self.theta_bound)
    }

    /// Unit endoscope direction.
    pub fn ecm_direction(&self) -> Option<Vector3<f64>> {
        self.ecm.as_ref().map(|ecm| {
            ecm.direction
                .unwrap_or(self.roi_center - ecm.rcm)
                .normalize()
        })
    }

    /// Voxel centers of the RoI cube in lexicographic (x, y, z) order.
    pub fn voxel_centers(&self) -> Vec<Vector3<f64>> {
        let n = self.voxel_count_per_axis;
        let step = self.roi_side / n as f64;
        let origin = self.roi_center - Vector3::repeat(0.5 * self.roi_side);
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(
                        origin
                            + Vector3::new(
                                (i as f64 + 0.5) * step,
                                (j as f64 + 0.5) * step,
                                (k as f64 + 0.5) * step,
                            ),
                    );
                }
            }
        }
        out
    }

    /// Whether `p` lies inside the RoI cube (boundary inclusive, with `tol`).
    pub fn roi_contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let half = 0.5 * self.roi_side + tol;
        (p - self.roi_center).iter().all(|c| c.abs() <= half)
    }

    pub fn grid_center_pose(&self, arm: Arm) -> BasePose {
        let c = self.grid(arm).center;
        BasePose::new(c.x, c.y, 0.0)
    }

    pub fn contains_pose(&self, pose: &BasePose, arm: Arm) -> bool {
        self.normalize_base(pose, arm).is_ok()
    }

    /// Maps `(x, y, theta)` affinely onto `[-1, 1]^3`.
    pub fn normalize_base(&self, pose: &BasePose, arm: Arm) -> Result<Vector3<f64>, WorldError> {
        const SLACK: f64 = 1e-12;
        let g = self.grid(arm);
        let u = Vector3::new(
            g.x_limits().normalize(pose.x),
            g.y_limits().normalize(pose.y),
            self.theta_limits().normalize(pose.theta),
        );
        for (c, name) in u.iter().zip(["x", "y", "theta"]) {
            if !c.is_finite() || c.abs() > 1.0 + SLACK {
                return Err(WorldError::OutOfRange {
                    arm,
                    what: format!("{name} normalizes to {c}"),
                });
            }
        }
        Ok(u.map(|c| c.clamp(-1.0, 1.0)))
    }

    pub fn denormalize_base(&self, u: &Vector3<f64>, arm: Arm) -> BasePose {
        let g = self.grid(arm);
        BasePose::new(
            g.x_limits().denormalize(u.x),
            g.y_limits().denormalize(u.y),
            self.theta_limits().denormalize(u.z),
        )
    }

    pub fn normalize_setup(&self, setup: &SetupPose) -> Result<[f64; 6], WorldError> {
        let a = self.normalize_base(&setup.arm1, Arm::One)?;
        let b = self.normalize_base(&setup.arm2, Arm::Two)?;
        Ok([a.x, a.y, a.z, b.x, b.y, b.z])
    }

    pub fn denormalize_setup(&self, u: &[f64; 6]) -> SetupPose {
        SetupPose::new(
            self.denormalize_base(&Vector3::new(u[0], u[1], u[2]), Arm::One),
            self.denormalize_base(&Vector3::new(u[3], u[4], u[5]), Arm::Two),
        )
    }

    /// Canonical JSON used for config digests.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }
}
