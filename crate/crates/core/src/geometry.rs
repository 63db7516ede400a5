//! Rotation representations.
//!
//! 3-D rotations use the 6-D two-column parameterization with Gram-Schmidt
//! reconstruction (continuous, network-friendly). The planar environment
//! uses normalized (cos, sin) pairs. Degenerate inputs are rejected loudly
//! instead of quietly producing NaN.

use crate::error::{Error, Result};

/// Norm threshold below which a direction is considered degenerate.
pub const DEGENERACY_EPS: f64 = 1e-6;

/// Two stacked 3-vectors: the first two columns of a rotation matrix
/// before orthonormalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot6(pub [f64; 6]);

/// Row-major orthonormal 3x3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotMat3(pub [[f64; 3]; 3]);

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Gram-Schmidt: b1 = normalize(a1), b2 = normalize(a2 - (a2.b1) b1),
/// b3 = b1 x b2; the b_i become the matrix columns. Errors if either
/// direction collapses below [`DEGENERACY_EPS`].
pub fn rot6_to_matrix(r: &Rot6) -> Result<RotMat3> {
    let a1 = [r.0[0], r.0[1], r.0[2]];
    let a2 = [r.0[3], r.0[4], r.0[5]];
    let n1 = norm3(a1);
    if n1 < DEGENERACY_EPS {
        return Err(Error::Degenerate(format!("first 6-D column has norm {n1:.3e}")));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let proj = dot3(a2, b1);
    let r2 = [a2[0] - proj * b1[0], a2[1] - proj * b1[1], a2[2] - proj * b1[2]];
    let n2 = norm3(r2);
    if n2 < DEGENERACY_EPS {
        return Err(Error::Degenerate(format!(
            "second 6-D column is parallel to the first (residual norm {n2:.3e})"
        )));
    }
    let b2 = [r2[0] / n2, r2[1] / n2, r2[2] / n2];
    let b3 = cross3(b1, b2);
    Ok(RotMat3([
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ]))
}

/// First two columns of the matrix, stacked.
pub fn matrix_to_rot6(m: &RotMat3) -> Rot6 {
    Rot6([
        m.0[0][0], m.0[1][0], m.0[2][0],
        m.0[0][1], m.0[1][1], m.0[2][1],
    ])
}

impl RotMat3 {
    pub const IDENTITY: RotMat3 = RotMat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Rodrigues rotation about a (non-zero) axis.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Result<RotMat3> {
        let n = norm3(axis);
        if n < DEGENERACY_EPS {
            return Err(Error::Degenerate("zero-norm rotation axis".into()));
        }
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Ok(RotMat3([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]))
    }

    /// Max absolute deviation from orthonormality (columns unit + mutually
    /// orthogonal + right-handed).
    pub fn orthonormality_error(&self) -> f64 {
        let c = |j: usize| [self.0[0][j], self.0[1][j], self.0[2][j]];
        let (c0, c1, c2) = (c(0), c(1), c(2));
        let mut e: f64 = 0.0;
        e = e.max((norm3(c0) - 1.0).abs());
        e = e.max((norm3(c1) - 1.0).abs());
        e = e.max((norm3(c2) - 1.0).abs());
        e = e.max(dot3(c0, c1).abs());
        e = e.max(dot3(c0, c2).abs());
        e = e.max(dot3(c1, c2).abs());
        let h = cross3(c0, c1);
        e = e.max(
            (h[0] - c2[0]).abs().max((h[1] - c2[1]).abs()).max((h[2] - c2[2]).abs()),
        );
        e
    }
}

/// Planar rotation as a normalized (cos, sin) pair. The environment stores
/// these in f32 to match its observation vector.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlanarRot {
    pub c: f32,
    pub s: f32,
}

impl PlanarRot {
    pub const IDENTITY: PlanarRot = PlanarRot { c: 1.0, s: 0.0 };

    pub fn from_angle(theta: f64) -> PlanarRot {
        let (s, c) = theta.sin_cos();
        PlanarRot { c: c as f32, s: s as f32 }
    }

    pub fn angle(&self) -> f64 {
        (self.s as f64).atan2(self.c as f64)
    }

    /// Composition (angle addition).
    pub fn compose(&self, other: &PlanarRot) -> PlanarRot {
        PlanarRot {
            c: self.c * other.c - self.s * other.s,
            s: self.s * other.c + self.c * other.s,
        }
    }

    pub fn inverse(&self) -> PlanarRot {
        PlanarRot { c: self.c, s: -self.s }
    }

    /// Rotates a 2-vector.
    pub fn rotate(&self, v: [f32; 2]) -> [f32; 2] {
        [self.c * v[0] - self.s * v[1], self.s * v[0] + self.c * v[1]]
    }
}

/// Normalizes an arbitrary (c, s) pair onto the unit circle; zero-norm
/// input is a degeneracy error, not NaN.
pub fn planar_normalize(c: f32, s: f32) -> Result<PlanarRot> {
    let n = ((c as f64) * (c as f64) + (s as f64) * (s as f64)).sqrt();
    if n < DEGENERACY_EPS {
        return Err(Error::Degenerate(format!("planar rotation pair has norm {n:.3e}")));
    }
    Ok(PlanarRot {
        c: (c as f64 / n) as f32,
        s: (s as f64 / n) as f32,
    })
}

/// Unsigned angular distance in [0, pi]. atan2 of the relative rotation's
/// sine/cosine, not arccos of the dot product: arccos amplifies input
/// rounding near 0 and pi, where this distance gates success checks.
pub fn planar_angle_diff(a: &PlanarRot, b: &PlanarRot) -> f64 {
    let dot = (a.c as f64) * (b.c as f64) + (a.s as f64) * (b.s as f64);
    let cross = (a.c as f64) * (b.s as f64) - (a.s as f64) * (b.c as f64);
    cross.abs().atan2(dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identity_round_trip() {
        let r6 = matrix_to_rot6(&RotMat3::IDENTITY);
        assert_eq!(r6.0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let m = rot6_to_matrix(&r6).unwrap();
        assert_eq!(m, RotMat3::IDENTITY);
    }

    #[test]
    fn random_rotations_round_trip() {
        let mut rng = crate::rng::named_rng(21, "geom-test");
        for _ in 0..100 {
            let axis = [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ];
            if norm3(axis) < 1e-3 {
                continue;
            }
            let angle = (rng.gen::<f64>() * 2.0 - 1.0) * std::f64::consts::PI;
            let m = RotMat3::from_axis_angle(axis, angle).unwrap();
            let back = rot6_to_matrix(&matrix_to_rot6(&m)).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!(
                        (m.0[i][j] - back.0[i][j]).abs() <= 1e-6,
                        "entry ({i},{j}) drifted: {} vs {}",
                        m.0[i][j],
                        back.0[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn skewed_inputs_still_produce_rotations() {
        let mut rng = crate::rng::named_rng(22, "geom-test");
        for _ in 0..100 {
            let mut v = [0.0f64; 6];
            for x in &mut v {
                *x = (rng.gen::<f64>() * 2.0 - 1.0) * 3.0;
            }
            match rot6_to_matrix(&Rot6(v)) {
                Ok(m) => assert!(m.orthonormality_error() <= 1e-9),
                Err(Error::Degenerate(_)) => {} // parallel draws are legal rejections
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(
            rot6_to_matrix(&Rot6([0.0; 6])),
            Err(Error::Degenerate(_))
        ));
        // Second column parallel to the first.
        assert!(matches!(
            rot6_to_matrix(&Rot6([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(planar_normalize(0.0, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn planar_normalize_examples() {
        let r = planar_normalize(3.0, 4.0).unwrap();
        assert!((r.c - 0.6).abs() < 1e-7);
        assert!((r.s - 0.8).abs() < 1e-7);
    }

    #[test]
    fn planar_angle_examples() {
        let e = PlanarRot { c: 1.0, s: 0.0 };
        let q = PlanarRot { c: 0.0, s: 1.0 };
        let h = PlanarRot { c: -1.0, s: 0.0 };
        assert!((planar_angle_diff(&e, &q) - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        assert!((planar_angle_diff(&e, &h) - std::f64::consts::PI).abs() < 1e-6);
        assert_eq!(planar_angle_diff(&q, &q), 0.0);
    }

    #[test]
    fn planar_angle_diff_is_a_metric_on_samples() {
        let mut rng = crate::rng::named_rng(23, "geom-test");
        let angles: Vec<f64> = (0..100)
            .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * std::f64::consts::PI)
            .collect();
        let rots: Vec<PlanarRot> = angles.iter().map(|&a| PlanarRot::from_angle(a)).collect();
        for i in 0..rots.len() {
            for j in 0..rots.len() {
                let dij = planar_angle_diff(&rots[i], &rots[j]);
                let dji = planar_angle_diff(&rots[j], &rots[i]);
                assert_eq!(dij, dji, "symmetry violated");
                for k in 0..20 {
                    let djk = planar_angle_diff(&rots[j], &rots[k]);
                    let dik = planar_angle_diff(&rots[i], &rots[k]);
                    assert!(dik <= dij + djk + 1e-9, "triangle inequality violated");
                }
            }
        }
    }

    #[test]
    fn compose_and_inverse() {
        let a = PlanarRot::from_angle(0.7);
        let b = PlanarRot::from_angle(-1.1);
        let ab = a.compose(&b);
        assert!((ab.angle() - (0.7 - 1.1)).abs() < 1e-6);
        let ident = a.compose(&a.inverse());
        assert!(planar_angle_diff(&ident, &PlanarRot::IDENTITY) < 1e-6);
    }
}
