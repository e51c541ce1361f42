//! Brute-force references for geometry and kinematics tests. Each one is
//! written from first principles rather than through the library routines.
#![allow(dead_code)]

use armplace::geometry::{Capsule, Cone};
use armplace::Vector3;
use rand::Rng;

pub type V3 = Vector3<f64>;

/// Verdicts this close to contact are not compared.
pub const CONTACT_BAND: f64 = 1e-3;

pub fn point_segment(p: &V3, a: &V3, b: &V3) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(&ab);
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Minimum over `n + 1` evenly spaced points of the first segment. Overshoots
/// the true distance by at most `|a1 - a0| / (2n)`.
pub fn segment_distance_sampled(a0: &V3, a1: &V3, b0: &V3, b1: &V3, n: usize) -> f64 {
    (0..=n)
        .map(|i| {
            let p = a0 + (a1 - a0) * (i as f64 / n as f64);
            point_segment(&p, b0, b1)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Distance from `p` to the solid cone, worked in the meridian half-plane of
/// `p`: the cone's cross-section there is the triangle (0,0), (h,0), (h,h tan).
pub fn point_cone(p: &V3, cone: &Cone) -> f64 {
    let v = p - cone.apex;
    let axial = v.dot(&cone.axis);
    let radial = (v - cone.axis * axial).norm();
    let rim = cone.height * cone.half_angle.tan();
    let inside = axial >= 0.0 && axial <= cone.height && radial * cone.height <= axial * rim;
    if inside {
        return 0.0;
    }
    let q = V3::new(axial, radial, 0.0);
    let apex = V3::zeros();
    let base_center = V3::new(cone.height, 0.0, 0.0);
    let rim_point = V3::new(cone.height, rim, 0.0);
    point_segment(&q, &apex, &rim_point).min(point_segment(&q, &base_center, &rim_point))
}

/// Segment-to-cone distance by dense sampling along the segment. Spacing is
/// at most `CONTACT_BAND`, so the overshoot stays below half the band.
pub fn capsule_cone_sampled(c: &Capsule, cone: &Cone) -> f64 {
    let n = (((c.b - c.a).norm() / CONTACT_BAND).ceil() as usize).max(1);
    (0..=n)
        .map(|i| point_cone(&(c.a + (c.b - c.a) * (i as f64 / n as f64)), cone))
        .fold(f64::INFINITY, f64::min)
}

pub fn random_point<R: Rng>(rng: &mut R, half: f64) -> V3 {
    V3::new(
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
    )
}

pub fn random_capsule<R: Rng>(rng: &mut R, half: f64) -> Capsule {
    Capsule {
        a: random_point(rng, half),
        b: random_point(rng, half),
        radius: rng.random_range(0.005..0.1),
    }
}

pub fn random_cone<R: Rng>(rng: &mut R) -> Cone {
    let axis = loop {
        let v = random_point(rng, 1.0);
        if v.norm() > 0.1 {
            break v.normalize();
        }
    };
    Cone {
        apex: random_point(rng, 0.1),
        axis,
        half_angle: rng.random_range(0.2..1.2),
        height: rng.random_range(0.1..0.4),
    }
}

/// `Some(verdict)` unless `distance` lies within the contact band of `radius`.
pub fn decided(distance: f64, radius: f64) -> Option<bool> {
    if (distance - radius).abs() < CONTACT_BAND {
        None
    } else {
        Some(distance < radius)
    }
}
