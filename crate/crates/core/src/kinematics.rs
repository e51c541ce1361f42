//! Kinematics of a 3-DOF instrument pivoting about a fixed remote center of
//! motion: yaw, pitch and insertion.
//!
//! In the heading frame (x along the arm heading, z up) the shaft direction is
//! `Ry(pitch) * Rx(yaw) * (0, 0, -1)`; the tip sits `insertion` meters from the
//! RCM along that direction.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::world::{Arm, BasePose, JointLimits, WorldLayout};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointConfig {
    pub yaw: f64,
    pub pitch: f64,
    pub insertion: f64,
}

impl JointConfig {
    pub const fn new(yaw: f64, pitch: f64, insertion: f64) -> Self {
        Self {
            yaw,
            pitch,
            insertion,
        }
    }

    pub fn within(&self, limits: &JointLimits) -> bool {
        limits.yaw.contains(self.yaw)
            && limits.pitch.contains(self.pitch)
            && limits.insertion.contains(self.insertion)
    }

    pub fn clamped(&self, limits: &JointLimits) -> Self {
        Self::new(
            limits.yaw.clamp(self.yaw),
            limits.pitch.clamp(self.pitch),
            limits.insertion.clamp(self.insertion),
        )
    }

    /// Zero yaw and pitch at mid insertion.
    pub fn home(limits: &JointLimits) -> Self {
        Self::new(0.0, 0.0, limits.insertion.mid())
    }

    /// Joint values mapped onto `[-1, 1]` by the joint limits.
    pub fn normalized(&self, limits: &JointLimits) -> [f64; 3] {
        [
            limits.yaw.normalize(self.yaw),
            limits.pitch.normalize(self.pitch),
            limits.insertion.normalize(self.insertion),
        ]
    }

    pub fn from_normalized(u: &[f64; 3], limits: &JointLimits) -> Self {
        Self::new(
            limits.yaw.denormalize(u[0]),
            limits.pitch.denormalize(u[1]),
            limits.insertion.denormalize(u[2]),
        )
    }

    fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.yaw, self.pitch, self.insertion)
    }

    fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSettings {
    pub damping: f64,
    pub max_iters: usize,
    pub pos_tol: f64,
    /// Step shrink factor applied while a trial step increases the error.
    pub backtracking: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            damping: 0.05,
            max_iters: 200,
            pos_tol: 1e-6,
            backtracking: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkResult {
    pub q: JointConfig,
    pub achieved: Vector3<f64>,
    pub error_norm: f64,
    pub converged: bool,
    pub within_limits: bool,
    pub iterations: usize,
}

/// RCM position `(x, y, z0) + Rz(heading + theta) * rcm_offset`.
pub fn rcm_from_base(base: &BasePose, layout: &WorldLayout, arm: Arm) -> Vector3<f64> {
    ArmFrame::new(base, layout, arm).rcm
}

pub fn forward_kinematics(
    base: &BasePose,
    q: &JointConfig,
    layout: &WorldLayout,
    arm: Arm,
) -> Vector3<f64> {
    ArmFrame::new(base, layout, arm).tip(q)
}

pub fn solve_ik_dls(
    base: &BasePose,
    target: &Vector3<f64>,
    settings: &IkSettings,
    q_init: &JointConfig,
    layout: &WorldLayout,
    arm: Arm,
) -> IkResult {
    ArmFrame::new(base, layout, arm).solve_ik(target, settings, q_init, &layout.joint_limits)
}

/// Fixed part of one arm's kinematics for a given base pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmFrame {
    pub rcm: Vector3<f64>,
    cos_h: f64,
    sin_h: f64,
    tool_length: f64,
}

impl ArmFrame {
    pub fn new(base: &BasePose, layout: &WorldLayout, arm: Arm) -> Self {
        let heading = layout.heading(arm) + base.theta;
        let (sin_h, cos_h) = heading.sin_cos();
        let o = &layout.rcm_offset;
        let rcm = Vector3::new(
            base.x + cos_h * o.x - sin_h * o.y,
            base.y + sin_h * o.x + cos_h * o.y,
            layout.base_height + o.z,
        );
        Self {
            rcm,
            cos_h,
            sin_h,
            tool_length: layout.tool_length,
        }
    }

    fn to_world(&self, v: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.cos_h * v.x - self.sin_h * v.y,
            self.sin_h * v.x + self.cos_h * v.y,
            v.z,
        )
    }

    fn to_heading(&self, v: Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.cos_h * v.x + self.sin_h * v.y,
            -self.sin_h * v.x + self.cos_h * v.y,
            v.z,
        )
    }

    /// Unit shaft direction, pointing from the RCM toward the tip.
    pub fn direction(&self, q: &JointConfig) -> Vector3<f64> {
        let (s1, c1) = q.yaw.sin_cos();
        let (s2, c2) = q.pitch.sin_cos();
        self.to_world(Vector3::new(-s2 * c1, s1, -c2 * c1))
    }

    /// Unit direction from the RCM along the spar. Pitch is the outermost
    /// joint, so the spar swings with pitch only and stays in the heading
    /// plane; at zero pitch it leans back toward the base by `tilt` from
    /// vertical.
    pub fn spar_direction(&self, q: &JointConfig, tilt: f64) -> Vector3<f64> {
        let (s, c) = (tilt - q.pitch).sin_cos();
        self.to_world(Vector3::new(-s, 0.0, c))
    }

    pub fn tip(&self, q: &JointConfig) -> Vector3<f64> {
        self.rcm + q.insertion * self.direction(q)
    }

    /// Position Jacobian with columns (yaw, pitch, insertion).
    pub fn jacobian(&self, q: &JointConfig) -> Matrix3<f64> {
        let (s1, c1) = q.yaw.sin_cos();
        let (s2, c2) = q.pitch.sin_cos();
        let l = q.insertion;
        let d_yaw = self.to_world(Vector3::new(s2 * s1, c1, c2 * s1) * l);
        let d_pitch = self.to_world(Vector3::new(-c2 * c1, 0.0, s2 * c1) * l);
        let d_ins = self.to_world(Vector3::new(-s2 * c1, s1, -c2 * c1));
        Matrix3::from_columns(&[d_yaw, d_pitch, d_ins])
    }

    /// Joint values pointing the shaft at `target` with the given insertion.
    /// Yaw and pitch are the exact angles; limits are not applied.
    pub fn aim(&self, target: &Vector3<f64>, insertion: f64) -> JointConfig {
        let v = self.to_heading(target - self.rcm);
        let n = v.norm();
        if n == 0.0 {
            return JointConfig::new(0.0, 0.0, insertion);
        }
        let d = v / n;
        let yaw = d.y.clamp(-1.0, 1.0).asin();
        let pitch = (-d.x).atan2(-d.z);
        JointConfig::new(yaw, pitch, insertion)
    }

    /// Damped least-squares IK. Joint limits are only checked on the result;
    /// insertion stays between zero and the tool length.
    pub fn solve_ik(
        &self,
        target: &Vector3<f64>,
        settings: &IkSettings,
        q_init: &JointConfig,
        limits: &JointLimits,
    ) -> IkResult {
        self.iterate(target, settings, q_init, limits, false)
    }

    /// DLS with every trial step projected onto the joint limits. Returns the
    /// feasible configuration closest (locally) to the target.
    pub fn solve_ik_projected(
        &self,
        target: &Vector3<f64>,
        settings: &IkSettings,
        q_init: &JointConfig,
        limits: &JointLimits,
    ) -> IkResult {
        self.iterate(target, settings, &q_init.clamped(limits), limits, true)
    }

    fn iterate(
        &self,
        target: &Vector3<f64>,
        settings: &IkSettings,
        q_init: &JointConfig,
        limits: &JointLimits,
        project: bool,
    ) -> IkResult {
        let lambda2 = settings.damping * settings.damping;
        let mut q = *q_init;
        q.insertion = q.insertion.clamp(0.0, self.tool_length);
        let mut tip = self.tip(&q);
        let mut err = (target - tip).norm();
        let mut iterations = 0;

        while err > settings.pos_tol && iterations < settings.max_iters {
            iterations += 1;
            let e = target - tip;
            let j = self.jacobian(&q);
            let jjt = j * j.transpose() + Matrix3::identity() * lambda2;
            // JJ^T + lambda^2 I is symmetric positive definite for lambda > 0.
            let Some(chol) = jjt.cholesky() else {
                break;
            };
            let dq = j.transpose() * chol.solve(&e);

            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut trial = JointConfig::from_vector(&(q.to_vector() + dq * scale));
                // The tip cannot travel past the tool end.
                trial.insertion = trial.insertion.clamp(0.0, self.tool_length);
                if project {
                    trial = trial.clamped(limits);
                }
                let trial_tip = self.tip(&trial);
                let trial_err = (target - trial_tip).norm();
                if trial_err < err {
                    accepted = Some((trial, trial_tip, trial_err));
                    break;
                }
                scale *= settings.backtracking;
            }
            match accepted {
                Some((nq, ntip, nerr)) => {
                    q = nq;
                    tip = ntip;
                    err = nerr;
                }
                None => break,
            }
        }

        IkResult {
            q,
            achieved: tip,
            error_norm: err,
            converged: err <= settings.pos_tol,
            within_limits: q.within(limits),
            iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn zero_heading_layout() -> WorldLayout {
        WorldLayout {
            nominal_heading: [0.0, 0.0],
            ..WorldLayout::default()
        }
    }

    fn rot_z(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    fn rot_y(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
    }

    fn rot_x(a: f64) -> Matrix3<f64> {
        let (s, c) = a.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }

    #[test]
    fn rcm_for_zero_and_quarter_turn() {
        let layout = zero_heading_layout();
        let base = BasePose::new(0.0, 0.0, 0.0);
        assert_abs_diff_eq!(
            rcm_from_base(&base, &layout, Arm::One),
            Vector3::new(0.40, 0.0, 0.50),
            epsilon = 1e-12
        );
        let layout = WorldLayout {
            nominal_heading: [FRAC_PI_2, 0.0],
            ..layout
        };
        assert_abs_diff_eq!(
            rcm_from_base(&base, &layout, Arm::One),
            Vector3::new(0.0, 0.40, 0.50),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rcm_matches_rotation_matrix() {
        let layout = WorldLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let base = BasePose::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.3..0.3),
            );
            for arm in Arm::BOTH {
                let expect = Vector3::new(base.x, base.y, layout.base_height)
                    + rot_z(layout.heading(arm) + base.theta) * layout.rcm_offset;
                assert_abs_diff_eq!(rcm_from_base(&base, &layout, arm), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_joints_point_down() {
        let layout = zero_heading_layout();
        let base = BasePose::default();
        let rcm = rcm_from_base(&base, &layout, Arm::One);
        let tip = forward_kinematics(&base, &JointConfig::new(0.0, 0.0, 0.1), &layout, Arm::One);
        assert_abs_diff_eq!(tip, rcm + Vector3::new(0.0, 0.0, -0.1), epsilon = 1e-15);
        let tip = forward_kinematics(&base, &JointConfig::new(0.4, -0.2, 0.0), &layout, Arm::One);
        assert_eq!(tip, rcm);
    }

    #[test]
    fn direction_matches_rotation_chain() {
        let layout = WorldLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let base = BasePose::new(-0.4, -0.2, rng.random_range(-0.3..0.3));
            let q = JointConfig::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-0.9..0.9),
                rng.random_range(0.0..0.28),
            );
            let frame = ArmFrame::new(&base, &layout, Arm::One);
            let d = rot_z(layout.heading(Arm::One) + base.theta)
                * rot_y(q.pitch)
                * rot_x(q.yaw)
                * Vector3::new(0.0, 0.0, -1.0);
            assert_abs_diff_eq!(frame.direction(&q), d, epsilon = 1e-12);
            assert!(((frame.tip(&q) - frame.rcm).norm() - q.insertion).abs() <= 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let layout = WorldLayout::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..100 {
            let base = BasePose::new(-0.5, -0.3, rng.random_range(-0.3..0.3));
            let frame = ArmFrame::new(&base, &layout, Arm::One);
            let q = JointConfig::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-0.9..0.9),
                rng.random_range(0.05..0.24),
            );
            let j = frame.jacobian(&q);
            for col in 0..3 {
                let mut qp = q.to_vector();
                let mut qm = q.to_vector();
                qp[col] += h;
                qm[col] -= h;
                let fd = (frame.tip(&JointConfig::from_vector(&qp))
                    - frame.tip(&JointConfig::from_vector(&qm)))
                    / (2.0 * h);
                let rel = (fd - j.column(col)).norm() / j.column(col).norm().max(1e-12);
                assert!(rel <= 1e-5, "column {col}: relative error {rel}");
            }
        }
    }

    #[test]
    fn straight_down_target() {
        let layout = zero_heading_layout();
        let base = BasePose::default();
        let rcm = rcm_from_base(&base, &layout, Arm::One);
        let r = solve_ik_dls(
            &base,
            &(rcm + Vector3::new(0.0, 0.0, -0.15)),
            &IkSettings::default(),
            &JointConfig::home(&layout.joint_limits),
            &layout,
            Arm::One,
        );
        assert!(r.converged);
        assert_abs_diff_eq!(r.q.yaw, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.q.pitch, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.q.insertion, 0.15, epsilon = 1e-6);
    }

    #[test]
    fn unreachable_target_reports_failure() {
        let layout = WorldLayout::default();
        let base = layout.grid_center_pose(Arm::One);
        let rcm = rcm_from_base(&base, &layout, Arm::One);
        let target = rcm + Vector3::new(0.3, 0.0, -0.4);
        assert_abs_diff_eq!((target - rcm).norm(), 0.5, epsilon = 1e-12);
        let r = solve_ik_dls(
            &base,
            &target,
            &IkSettings::default(),
            &JointConfig::home(&layout.joint_limits),
            &layout,
            Arm::One,
        );
        assert!(!r.converged);
        assert!(!r.within_limits);
        assert!((r.error_norm - (target - r.achieved).norm()).abs() < 1e-15);
    }

    #[test]
    fn zero_error_start_is_returned_unchanged() {
        let layout = WorldLayout::default();
        let base = layout.grid_center_pose(Arm::Two);
        let frame = ArmFrame::new(&base, &layout, Arm::Two);
        let q = JointConfig::new(0.2, -0.3, 0.17);
        let r = frame.solve_ik(&frame.tip(&q), &IkSettings::default(), &q, &layout.joint_limits);
        assert_eq!(r.q, q);
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
    }

    #[test]
    fn accepted_steps_never_increase_error() {
        let layout = WorldLayout::default();
        let base = layout.grid_center_pose(Arm::One);
        let frame = ArmFrame::new(&base, &layout, Arm::One);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let target = layout.roi_center
                + Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                );
            let mut last = f64::INFINITY;
            let mut q = JointConfig::home(&layout.joint_limits);
            // Single-iteration calls chained together expose every accepted step.
            let one = IkSettings {
                max_iters: 1,
                ..IkSettings::default()
            };
            for _ in 0..60 {
                let r = frame.solve_ik(&target, &one, &q, &layout.joint_limits);
                assert!(r.error_norm <= last);
                last = r.error_norm;
                q = r.q;
            }
        }
    }

    #[test]
    fn projected_solution_respects_limits() {
        let layout = WorldLayout::default();
        let base = layout.grid_center_pose(Arm::One);
        let frame = ArmFrame::new(&base, &layout, Arm::One);
        let target = frame.rcm + Vector3::new(0.0, 0.0, -0.5);
        let r = frame.solve_ik_projected(
            &target,
            &IkSettings::default(),
            &JointConfig::home(&layout.joint_limits),
            &layout.joint_limits,
        );
        assert!(r.within_limits);
        assert_abs_diff_eq!(r.q.insertion, layout.joint_limits.insertion.hi, epsilon = 1e-9);
    }
}
