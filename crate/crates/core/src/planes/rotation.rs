use nalgebra::{Matrix3, Vector3};

use super::{PlaneError, PlaneModel};

/// Rotation `R` (first frame to second) best aligning matched plane normals:
/// maximizes `Σ ⟨R n_i, n'_i⟩` by orthogonal Procrustes, with a determinant
/// correction so the result is a proper rotation.
pub fn rotation_from_matched_planes(
    pairs: &[(PlaneModel, PlaneModel)],
) -> Result<Matrix3<f64>, PlaneError> {
    if pairs.len() < 2 {
        return Err(PlaneError::Underdetermined(format!(
            "need at least 2 plane pairs, got {}",
            pairs.len()
        )));
    }
    let mut h = Matrix3::zeros();
    for (a, b) in pairs {
        let (n, m) = (Vector3::from(a.world), Vector3::from(b.world));
        if !(n.norm() > 0.0 && m.norm() > 0.0) {
            return Err(PlaneError::Degenerate("plane with zero normal".into()));
        }
        h += n.normalize() * m.normalize().transpose();
    }
    let svd = h.svd(true, true);
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[1] > 1e-9 * sorted[0]) {
        return Err(PlaneError::Underdetermined(
            "all plane normals are parallel".into(),
        ));
    }
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    // Reflection fix-up goes on the direction of the smallest singular value.
    let mut fix = Vector3::new(1.0, 1.0, 1.0);
    fix[s.imin()] = (v * u.transpose()).determinant().signum();
    Ok(v * Matrix3::from_diagonal(&fix) * u.transpose())
}

/// Angle of a rotation matrix in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};

    fn plane(n: Vector3<f64>) -> PlaneModel {
        PlaneModel {
            affine: [0.0; 3],
            world: n.into(),
            support: 1,
        }
    }

    fn normals() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, -1.0 / 1000.0),
            Vector3::new(0.0, -1.0 / 800.0, -0.0002),
            Vector3::new(1.0 / 900.0, 0.0, -0.0003),
        ]
    }

    #[test]
    fn identical_sets_give_identity() {
        let pairs: Vec<_> = normals()
            .into_iter()
            .map(|n| (plane(n), plane(n)))
            .collect();
        let r = rotation_from_matched_planes(&pairs).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn recovers_a_known_rotation() {
        let axis = Unit::new_normalize(Vector3::new(0.3, -0.8, 0.5));
        let truth = Rotation3::from_axis_angle(&axis, 22.7f64.to_radians());
        // Scaling the coefficients (different plane offsets) must not matter.
        let pairs: Vec<_> = normals()
            .into_iter()
            .map(|n| (plane(n), plane(truth * n * 1.7)))
            .collect();
        let r = rotation_from_matched_planes(&pairs).unwrap();
        assert!(rotation_angle(&(r.transpose() * truth.matrix())) < 1e-9);
        assert!((rotation_angle(&r) - 22.7f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn underdetermined_inputs_fail() {
        let n = normals();
        assert!(rotation_from_matched_planes(&[(plane(n[0]), plane(n[0]))]).is_err());
        let parallel = [
            (plane(n[0]), plane(n[0])),
            (plane(n[0] * 2.0), plane(n[0] * 3.0)),
        ];
        assert!(matches!(
            rotation_from_matched_planes(&parallel),
            Err(PlaneError::Underdetermined(_))
        ));
    }

    #[test]
    fn two_pairs_suffice() {
        let truth = Rotation3::from_euler_angles(0.1, -0.2, 0.3);
        let n = normals();
        let pairs = [
            (plane(n[0]), plane(truth * n[0])),
            (plane(n[1]), plane(truth * n[1])),
        ];
        let r = rotation_from_matched_planes(&pairs).unwrap();
        assert!(rotation_angle(&(r.transpose() * truth.matrix())) < 1e-9);
    }
}
