//! Analytic collision primitives and the exact collision checker.
//!
//! Every arm is three capsules (spar, extracorporeal shaft, intracorporeal
//! shaft). The camera arm is an endoscope capsule plus a solid cone bounding
//! the endoscope workspace, and the side walls are half-spaces.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{ArmFrame, JointConfig};
use crate::world::{Arm, SetupPose, WorldLayout};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("unsupported primitive pair: {0} / {1}")]
    UnsupportedPair(&'static str, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

/// Solid finite cone: apex, unit axis, half-angle in `(0, pi/2)`, height
/// along the axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cone {
    pub apex: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub half_angle: f64,
    pub height: f64,
}

/// Half-space `{p : normal · p >= offset}`, counted as occupied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Capsule(Capsule),
    Cone(Cone),
    HalfSpace(HalfSpace),
}

impl Primitive {
    fn kind(&self) -> &'static str {
        match self {
            Primitive::Capsule(_) => "capsule",
            Primitive::Cone(_) => "cone",
            Primitive::HalfSpace(_) => "half-space",
        }
    }

    /// The same primitive with every length multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Primitive {
        match *self {
            Primitive::Capsule(c) => Primitive::Capsule(Capsule {
                a: c.a * s,
                b: c.b * s,
                radius: c.radius * s,
            }),
            Primitive::Cone(c) => Primitive::Cone(Cone {
                apex: c.apex * s,
                height: c.height * s,
                ..c
            }),
            Primitive::HalfSpace(h) => Primitive::HalfSpace(HalfSpace {
                offset: h.offset * s,
                ..h
            }),
        }
    }
}

/// Closest points between segments `p1q1` and `p2q2`; returns the segment
/// parameters `(s, t)` and the squared distance.
pub fn segment_closest_params(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (f64, f64, f64) {
    const EPS: f64 = 1e-18;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (s, t, (c1 - c2).norm_squared())
}

pub fn segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    segment_closest_params(p1, q1, p2, q2).2.sqrt()
}

pub fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

fn point_segment_distance_2d(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (px - ax - t * dx, py - ay - t * dy);
    (ex * ex + ey * ey).sqrt()
}

impl Cone {
    /// Euclidean distance from `p` to the solid cone; zero inside.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let tan = self.half_angle.tan();
        self.distance_with_tan(p, tan)
    }

    fn distance_with_tan(&self, p: &Vector3<f64>, tan: f64) -> f64 {
        // Axial/radial coordinates; the solid is the revolved triangle
        // (0,0), (h,0), (h, h tan).
        let v = p - self.apex;
        let a = v.dot(&self.axis);
        let rho = (v - self.axis * a).norm();
        let h = self.height;
        if a >= 0.0 && a <= h && rho <= a * tan {
            return 0.0;
        }
        let rim = h * tan;
        let slant = point_segment_distance_2d(a, rho, 0.0, 0.0, h, rim);
        let base = point_segment_distance_2d(a, rho, h, 0.0, h, rim);
        slant.min(base)
    }
}

fn capsule_capsule(a: &Capsule, b: &Capsule) -> bool {
    let r = a.radius + b.radius;
    segment_closest_params(&a.a, &a.b, &b.a, &b.b).2 <= r * r
}

fn capsule_half_space(c: &Capsule, h: &HalfSpace) -> bool {
    // Signed distance to the obstacle boundary, positive on the free side.
    let sa = h.offset - h.normal.dot(&c.a);
    let sb = h.offset - h.normal.dot(&c.b);
    sa.min(sb) <= c.radius
}

/// Exact capsule/cone test. The distance from a point to a convex set is
/// convex, so its restriction to the segment is a convex function of the
/// segment parameter; golden-section search finds the minimum, with an early
/// exit from a Lipschitz lower bound.
fn capsule_cone(c: &Capsule, cone: &Cone) -> bool {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let tan = cone.half_angle.tan();
    let d = c.b - c.a;
    let len = d.norm();
    let f = |t: f64| cone.distance_with_tan(&(c.a + d * t), tan);
    let r = c.radius;

    let (f0, f1) = (f(0.0), f(1.0));
    if f0 <= r || f1 <= r {
        return true;
    }
    if len == 0.0 {
        return false;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f_1 = f(x1);
    let mut f_2 = f(x2);
    loop {
        let best = f_1.min(f_2);
        if best <= r {
            return true;
        }
        // The distance is `len`-Lipschitz in t; the minimizer lies in [lo, hi].
        if best - len * (hi - lo) > r || len * (hi - lo) < 1e-13 {
            return false;
        }
        if f_1 <= f_2 {
            hi = x2;
            x2 = x1;
            f_2 = f_1;
            x1 = hi - INV_PHI * (hi - lo);
            f_1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f_1 = f_2;
            x2 = lo + INV_PHI * (hi - lo);
            f_2 = f(x2);
        }
    }
}

/// Pairwise overlap test. Supported pairs: capsule/capsule, capsule/cone and
/// capsule/half-space, in either order.
pub fn collide(a: &Primitive, b: &Primitive) -> Result<bool, GeometryError> {
    use Primitive::*;
    match (a, b) {
        (Capsule(x), Capsule(y)) => Ok(capsule_capsule(x, y)),
        (Capsule(x), Cone(y)) | (Cone(y), Capsule(x)) => Ok(capsule_cone(x, y)),
        (Capsule(x), HalfSpace(y)) | (HalfSpace(y), Capsule(x)) => Ok(capsule_half_space(x, y)),
        _ => Err(GeometryError::UnsupportedPair(a.kind(), b.kind())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmBodies {
    pub spar: Capsule,
    pub shaft_out: Capsule,
    pub shaft_in: Capsule,
}

impl ArmBodies {
    pub fn capsules(&self) -> [&Capsule; 3] {
        [&self.spar, &self.shaft_out, &self.shaft_in]
    }

    /// Capsules outside the patient (spar and extracorporeal shaft).
    pub fn extracorporeal(&self) -> [&Capsule; 2] {
        [&self.spar, &self.shaft_out]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmBodies {
    pub endoscope: Capsule,
    pub cone: Cone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodySet {
    pub arms: [ArmBodies; 2],
    pub ecm: Option<EcmBodies>,
    pub walls: [HalfSpace; 2],
}

impl BodySet {
    pub fn body_count(&self) -> usize {
        3 * self.arms.len() + if self.ecm.is_some() { 2 } else { 0 } + self.walls.len()
    }

    pub fn primitives(&self) -> Vec<Primitive> {
        let mut out: Vec<Primitive> = self
            .arms
            .iter()
            .flat_map(|a| a.capsules().map(|c| Primitive::Capsule(*c)))
            .collect();
        if let Some(ecm) = &self.ecm {
            out.push(Primitive::Capsule(ecm.endoscope));
            out.push(Primitive::Cone(ecm.cone));
        }
        out.extend(self.walls.iter().map(|w| Primitive::HalfSpace(*w)));
        out
    }
}

pub fn arm_bodies(frame: &ArmFrame, q: &JointConfig, layout: &WorldLayout) -> ArmBodies {
    let d = frame.direction(q);
    let rcm = frame.rcm;
    let radii = &layout.radii;
    let s = frame.spar_direction(q, layout.spar_tilt);
    let [near, far] = layout.spar_span;
    ArmBodies {
        spar: Capsule {
            a: rcm + s * near,
            b: rcm + s * far,
            radius: radii.spar,
        },
        shaft_out: Capsule {
            a: rcm,
            b: rcm - d * (layout.tool_length - q.insertion),
            radius: radii.shaft_out,
        },
        shaft_in: Capsule {
            a: rcm,
            b: rcm + d * q.insertion,
            radius: radii.shaft_in,
        },
    }
}

pub fn ecm_bodies(layout: &WorldLayout) -> Option<EcmBodies> {
    let ecm = layout.ecm.as_ref()?;
    let dir = layout.ecm_direction()?;
    Some(EcmBodies {
        endoscope: Capsule {
            a: ecm.rcm,
            b: ecm.rcm + dir * ecm.length,
            radius: ecm.radius,
        },
        cone: Cone {
            apex: ecm.rcm,
            axis: -dir,
            half_angle: ecm.cone_half_angle,
            height: ecm.cone_height,
        },
    })
}

pub fn wall_bodies(layout: &WorldLayout) -> [HalfSpace; 2] {
    layout.walls.map(|w| HalfSpace {
        normal: w.normal,
        offset: w.offset - layout.wall_margin,
    })
}

pub fn build_bodies(
    setup: &SetupPose,
    q1: &JointConfig,
    q2: &JointConfig,
    layout: &WorldLayout,
) -> BodySet {
    let f1 = ArmFrame::new(&setup.arm1, layout, Arm::One);
    let f2 = ArmFrame::new(&setup.arm2, layout, Arm::Two);
    BodySet {
        arms: [arm_bodies(&f1, q1, layout), arm_bodies(&f2, q2, layout)],
        ecm: ecm_bodies(layout),
        walls: wall_bodies(layout),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CollisionReport {
    pub self_collision: bool,
    pub env_collision_arm1: bool,
    pub env_collision_arm2: bool,
}

impl CollisionReport {
    pub fn env_collision(&self, arm: Arm) -> bool {
        match arm {
            Arm::One => self.env_collision_arm1,
            Arm::Two => self.env_collision_arm2,
        }
    }
}

fn arm_hits_ecm(arm: &ArmBodies, ecm: &EcmBodies) -> bool {
    arm.capsules()
        .iter()
        .any(|c| capsule_capsule(c, &ecm.endoscope) || capsule_cone(c, &ecm.cone))
}

fn arm_hits_walls(arm: &ArmBodies, walls: &[HalfSpace]) -> bool {
    arm.capsules()
        .iter()
        .any(|c| walls.iter().any(|w| capsule_half_space(c, w)))
}

fn arms_touch(a: &ArmBodies, b: &ArmBodies) -> bool {
    a.capsules()
        .iter()
        .any(|x| b.capsules().iter().any(|y| capsule_capsule(x, y)))
}

/// Reuses pre-built static bodies for repeated checks under one layout.
#[derive(Debug, Clone)]
pub struct GeometricChecker<'a> {
    layout: &'a WorldLayout,
    ecm: Option<EcmBodies>,
    walls: [HalfSpace; 2],
}

impl<'a> GeometricChecker<'a> {
    pub fn new(layout: &'a WorldLayout) -> Self {
        Self {
            layout,
            ecm: ecm_bodies(layout),
            walls: wall_bodies(layout),
        }
    }

    pub fn check_arms(&self, a1: &ArmBodies, a2: &ArmBodies) -> CollisionReport {
        let self_collision = arms_touch(a1, a2)
            || self
                .ecm
                .as_ref()
                .is_some_and(|e| arm_hits_ecm(a1, e) || arm_hits_ecm(a2, e));
        CollisionReport {
            self_collision,
            env_collision_arm1: arm_hits_walls(a1, &self.walls),
            env_collision_arm2: arm_hits_walls(a2, &self.walls),
        }
    }

    pub fn check_frames(
        &self,
        frames: &[ArmFrame; 2],
        q1: &JointConfig,
        q2: &JointConfig,
    ) -> CollisionReport {
        let a1 = arm_bodies(&frames[0], q1, self.layout);
        let a2 = arm_bodies(&frames[1], q2, self.layout);
        self.check_arms(&a1, &a2)
    }

    pub fn check(&self, setup: &SetupPose, q1: &JointConfig, q2: &JointConfig) -> CollisionReport {
        let frames = [
            ArmFrame::new(&setup.arm1, self.layout, Arm::One),
            ArmFrame::new(&setup.arm2, self.layout, Arm::Two),
        ];
        self.check_frames(&frames, q1, q2)
    }

    /// Wall test for a single arm.
    pub fn env_collision(&self, frame: &ArmFrame, q: &JointConfig) -> bool {
        arm_hits_walls(&arm_bodies(frame, q, self.layout), &self.walls)
    }
}

/// Ground-truth collision flags for one two-arm configuration.
pub fn check_setup(
    setup: &SetupPose,
    q1: &JointConfig,
    q2: &JointConfig,
    layout: &WorldLayout,
) -> CollisionReport {
    GeometricChecker::new(layout).check(setup, q1, q2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{forward_kinematics, rcm_from_base, IkSettings};
    use crate::world::{BasePose, Wall};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn cap(a: Vector3<f64>, b: Vector3<f64>, r: f64) -> Primitive {
        Primitive::Capsule(Capsule { a, b, radius: r })
    }

    fn random_point(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        v(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    fn random_primitive(rng: &mut ChaCha8Rng) -> Primitive {
        match rng.random_range(0..3) {
            0 => cap(random_point(rng, 1.0), random_point(rng, 1.0), rng.random_range(0.01..0.3)),
            1 => Primitive::Cone(Cone {
                apex: random_point(rng, 1.0),
                axis: random_point(rng, 1.0).normalize(),
                half_angle: rng.random_range(0.1..1.4),
                height: rng.random_range(0.1..1.0),
            }),
            _ => Primitive::HalfSpace(HalfSpace {
                normal: random_point(rng, 1.0).normalize(),
                offset: rng.random_range(-1.0..1.0),
            }),
        }
    }

    #[test]
    fn shared_endpoint_collides() {
        let a = cap(v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), 0.01);
        let b = cap(v(0.0, 0.0, 0.0), v(0.0, 1.0, 1.0), 0.01);
        assert!(collide(&a, &b).unwrap());
    }

    #[test]
    fn capsule_clear_of_wall() {
        let a = cap(v(-0.5, 0.0, 0.0), v(0.0, 0.3, 0.2), 0.05);
        let wall = Primitive::HalfSpace(HalfSpace {
            normal: v(1.0, 0.0, 0.0),
            offset: 0.85,
        });
        assert!(!collide(&a, &wall).unwrap());
        let near = cap(v(0.0, 0.0, 0.0), v(0.80, 0.0, 0.0), 0.05);
        assert!(collide(&near, &wall).unwrap());
    }

    #[test]
    fn unsupported_pairs_error() {
        let cone = Primitive::Cone(Cone {
            apex: Vector3::zeros(),
            axis: v(0.0, 0.0, 1.0),
            half_angle: 0.5,
            height: 1.0,
        });
        let h = Primitive::HalfSpace(HalfSpace {
            normal: v(1.0, 0.0, 0.0),
            offset: 0.0,
        });
        assert_eq!(
            collide(&cone, &h),
            Err(GeometryError::UnsupportedPair("cone", "half-space"))
        );
        assert!(collide(&cone, &cone).is_err());
        assert!(collide(&h, &h).is_err());
    }

    #[test]
    fn point_cone_distance_cases() {
        let cone = Cone {
            apex: Vector3::zeros(),
            axis: v(0.0, 0.0, 1.0),
            half_angle: std::f64::consts::FRAC_PI_4,
            height: 1.0,
        };
        assert_eq!(cone.distance(&v(0.0, 0.0, 0.5)), 0.0);
        assert_abs_diff_eq!(cone.distance(&v(0.0, 0.0, -0.3)), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(cone.distance(&v(0.0, 0.0, 1.4)), 0.4, epsilon = 1e-12);
        // Outside the slant: distance along the slant normal.
        assert_abs_diff_eq!(
            cone.distance(&v(1.0, 0.0, 0.0)),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        // Beyond the rim corner.
        assert_abs_diff_eq!(cone.distance(&v(2.0, 0.0, 1.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn collide_is_symmetric_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for _ in 0..4000 {
            let a = random_primitive(&mut rng);
            let b = random_primitive(&mut rng);
            let (ab, ba) = (collide(&a, &b), collide(&b, &a));
            assert_eq!(ab.as_ref().ok(), ba.as_ref().ok());
            if let Ok(verdict) = ab {
                checked += 1;
                for s in [0.5, 2.0] {
                    assert_eq!(collide(&a.scaled(s), &b.scaled(s)).unwrap(), verdict);
                }
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn body_count_and_shapes() {
        let layout = WorldLayout::default();
        let setup = SetupPose::new(
            layout.grid_center_pose(Arm::One),
            layout.grid_center_pose(Arm::Two),
        );
        let q1 = JointConfig::new(0.0, 0.0, 0.1);
        let q2 = JointConfig::new(0.0, 0.0, layout.tool_length);
        let bodies = build_bodies(&setup, &q1, &q2, &layout);
        assert_eq!(bodies.body_count(), 10);
        assert_eq!(bodies.primitives().len(), 10);

        let rcm1 = rcm_from_base(&setup.arm1, &layout, Arm::One);
        assert_eq!(bodies.arms[0].shaft_in.a, rcm1);
        assert_abs_diff_eq!(bodies.arms[0].shaft_in.b, rcm1 + v(0.0, 0.0, -0.1), epsilon = 1e-15);
        assert_abs_diff_eq!(
            bodies.arms[0].shaft_in.b,
            forward_kinematics(&setup.arm1, &q1, &layout, Arm::One),
            epsilon = 1e-15
        );
        // Full insertion leaves a zero-length extracorporeal shaft at the RCM.
        let out = bodies.arms[1].shaft_out;
        assert_eq!(out.a, out.b);
        // Shaft lengths add up to the tool length.
        for arm in &bodies.arms {
            let l_out = (arm.shaft_out.b - arm.shaft_out.a).norm();
            let l_in = (arm.shaft_in.b - arm.shaft_in.a).norm();
            assert_abs_diff_eq!(l_out + l_in, layout.tool_length, epsilon = 1e-12);
        }

        let no_ecm = WorldLayout {
            ecm: None,
            ..layout.clone()
        };
        assert_eq!(build_bodies(&setup, &q1, &q2, &no_ecm).body_count(), 8);
    }

    #[test]
    fn distant_walls_never_collide() {
        let layout = WorldLayout {
            walls: [
                Wall {
                    normal: v(1.0, 0.0, 0.0),
                    offset: 1e6,
                },
                Wall {
                    normal: v(-1.0, 0.0, 0.0),
                    offset: 1e6,
                },
            ],
            ..WorldLayout::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let jl = layout.joint_limits;
        for _ in 0..2000 {
            let setup = crate::scoring::random_setup(&layout, &mut rng);
            let q = |rng: &mut ChaCha8Rng| {
                JointConfig::new(
                    rng.random_range(jl.yaw.lo..=jl.yaw.hi),
                    rng.random_range(jl.pitch.lo..=jl.pitch.hi),
                    rng.random_range(jl.insertion.lo..=jl.insertion.hi),
                )
            };
            let (q1, q2) = (q(&mut rng), q(&mut rng));
            let r = check_setup(&setup, &q1, &q2, &layout);
            assert!(!r.env_collision_arm1 && !r.env_collision_arm2);
        }
    }

    #[test]
    fn tips_at_same_point_self_collide() {
        let layout = WorldLayout::default();
        let setup = SetupPose::new(
            layout.grid_center_pose(Arm::One),
            layout.grid_center_pose(Arm::Two),
        );
        let target = layout.roi_center;
        let settings = IkSettings::default();
        let home = JointConfig::home(&layout.joint_limits);
        let r1 = crate::kinematics::solve_ik_dls(&setup.arm1, &target, &settings, &home, &layout, Arm::One);
        let r2 = crate::kinematics::solve_ik_dls(&setup.arm2, &target, &settings, &home, &layout, Arm::Two);
        assert!(r1.converged && r2.converged);
        let bodies = build_bodies(&setup, &r1.q, &r2.q, &layout);
        let gap = segment_distance(
            &bodies.arms[0].shaft_in.a,
            &bodies.arms[0].shaft_in.b,
            &bodies.arms[1].shaft_in.a,
            &bodies.arms[1].shaft_in.b,
        );
        assert!(gap < 1e-5);
        let no_ecm = WorldLayout {
            ecm: None,
            ..layout.clone()
        };
        assert!(check_setup(&setup, &r1.q, &r2.q, &no_ecm).self_collision);
        assert!(check_setup(&setup, &r1.q, &r2.q, &layout).self_collision);
    }

    #[test]
    fn wall_penetration_by_constructed_pose() {
        let layout = WorldLayout::default();
        let g = layout.grid(Arm::Two);
        // Corner nearest the +x wall, heading turned so the spar swings outward.
        let base = BasePose::new(g.x_limits().hi, g.y_limits().lo, 0.3);
        let setup = SetupPose::new(layout.grid_center_pose(Arm::One), base);
        let frame = ArmFrame::new(&base, &layout, Arm::Two);
        // Pitch fully forward tilts the spar back toward the wall.
        let q = JointConfig::new(0.0, layout.joint_limits.pitch.lo, 0.1);
        let bodies = arm_bodies(&frame, &q, &layout);
        let wall = wall_bodies(&layout)[0];
        let signed = bodies
            .capsules()
            .iter()
            .map(|c| (wall.offset - wall.normal.dot(&c.a)).min(wall.offset - wall.normal.dot(&c.b)) - c.radius)
            .fold(f64::INFINITY, f64::min);
        assert!(signed < 0.0, "constructed pose should penetrate, got {signed}");
        let home = JointConfig::home(&layout.joint_limits);
        let r = check_setup(&setup, &home, &q, &layout);
        assert!(r.env_collision_arm2);
    }
}
