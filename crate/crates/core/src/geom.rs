//! Small fixed-size 3-vector helpers used by the mesh and ordering code.

#[allow(unused_imports)]
use num_traits::Float;

/// A point or direction in 3D Euclidean space.
pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Midpoint of the segment `ab`.
pub fn midpoint(a: Vec3, b: Vec3) -> Vec3 {
    [
        0.5 * (a[0] + b[0]),
        0.5 * (a[1] + b[1]),
        0.5 * (a[2] + b[2]),
    ]
}

/// Returns `a / |a|`, or `None` when the norm underflows to ~0.
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n <= f64::MIN_POSITIVE {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

/// Angle in radians between two nonzero vectors, in `[0, pi]`.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let c = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    c.acos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_follows_right_hand_rule() {
        let z = cross([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(z, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(normalize([0.0, 0.0, 0.0]).is_none());
        let u = normalize([3.0, 0.0, 4.0]).unwrap();
        assert!((norm(u) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn angle_between_orthogonal_axes() {
        let a = angle_between([1.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        assert!((a - core::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
