//! Closed-form eigen-decomposition of 3×3 symmetric matrices.
//!
//! Eigenvalues come from the trigonometric solution of the characteristic
//! cubic. The eigenvector of the most isolated eigenvalue is taken from the
//! best-conditioned cross product of rows of `A − λI`; the second is solved
//! in its orthogonal complement; the third closes the right-handed basis.
//! When two eigenvalues are closer than `GAP_TOL` (relative to the matrix
//! scale) the cyclic Jacobi method takes over.

use nalgebra::{Matrix3, Vector3};

const GAP_TOL: f64 = 1e-12;

/// Eigenvalues in ascending order with matching unit eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetricEigen3 {
    pub values: [f64; 3],
    pub vectors: [Vector3<f64>; 3],
}

pub fn symmetric_eigen3(m: &Matrix3<f64>) -> SymmetricEigen3 {
    let scale = m.abs().max();
    if scale == 0.0 || !scale.is_finite() {
        return SymmetricEigen3 {
            values: [0.0; 3],
            vectors: [Vector3::x(), Vector3::y(), Vector3::z()],
        };
    }
    let a = symmetrize(m) / scale;

    let (values, vectors) = match analytic(&a) {
        Some(r) => r,
        None => jacobi(&a),
    };
    let mut out = SymmetricEigen3 {
        values: [values[0] * scale, values[1] * scale, values[2] * scale],
        vectors,
    };
    sort_ascending(&mut out);
    out
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

fn sort_ascending(e: &mut SymmetricEigen3) {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| e.values[i].total_cmp(&e.values[j]));
    let values = order.map(|i| e.values[i]);
    let vectors = order.map(|i| e.vectors[i]);
    e.values = values;
    e.vectors = vectors;
}

/// Returns `None` when the eigenvalue gap is too small for the direct method.
fn analytic(a: &Matrix3<f64>) -> Option<([f64; 3], [Vector3<f64>; 3])> {
    let (a00, a01, a02, a11, a12, a22) = (
        a[(0, 0)],
        a[(0, 1)],
        a[(0, 2)],
        a[(1, 1)],
        a[(1, 2)],
        a[(2, 2)],
    );
    let off = a01 * a01 + a02 * a02 + a12 * a12;
    if off == 0.0 {
        // Already diagonal.
        return Some((
            [a00, a11, a22],
            [Vector3::x(), Vector3::y(), Vector3::z()],
        ));
    }

    let q = (a00 + a11 + a22) / 3.0;
    let b00 = a00 - q;
    let b11 = a11 - q;
    let b22 = a22 - q;
    let p = ((b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * off) / 6.0).sqrt();
    if p == 0.0 {
        return None;
    }
    let c00 = b11 * b22 - a12 * a12;
    let c01 = a01 * b22 - a12 * a02;
    let c02 = a01 * a12 - b11 * a02;
    let det = (b00 * c00 - a01 * c01 + a02 * c02) / (p * p * p);
    let half_det = (0.5 * det).clamp(-1.0, 1.0);
    let angle = half_det.acos() / 3.0;
    let two_thirds_pi = 2.0 * std::f64::consts::PI / 3.0;
    let beta2 = 2.0 * angle.cos();
    let beta0 = 2.0 * (angle + two_thirds_pi).cos();
    let beta1 = -(beta0 + beta2);
    let lam = [q + p * beta0, q + p * beta1, q + p * beta2];

    let gap = (lam[1] - lam[0]).min(lam[2] - lam[1]);
    if gap < GAP_TOL {
        return None;
    }

    let (first, second, third) = if half_det >= 0.0 {
        // λ2 is the isolated one.
        (2usize, 1usize, 0usize)
    } else {
        (0, 1, 2)
    };
    let v_first = vector_for_isolated(a, lam[first]);
    let v_second = vector_in_complement(a, &v_first, lam[second]);
    let v_third = v_first.cross(&v_second);

    let mut vecs = [Vector3::zeros(); 3];
    vecs[first] = v_first;
    vecs[second] = v_second;
    vecs[third] = v_third.normalize();
    Some((lam, vecs))
}

fn vector_for_isolated(a: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    let m = a - Matrix3::identity() * lambda;
    let r0 = m.row(0).transpose();
    let r1 = m.row(1).transpose();
    let r2 = m.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
        .copied()
        .unwrap_or_else(Vector3::x);
    best.normalize()
}

fn orthonormal_complement(w: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let u = if w.x.abs() > w.y.abs() {
        Vector3::new(-w.z, 0.0, w.x) / (w.x * w.x + w.z * w.z).sqrt()
    } else {
        Vector3::new(0.0, w.z, -w.y) / (w.y * w.y + w.z * w.z).sqrt()
    };
    let v = w.cross(&u);
    (u, v)
}

fn vector_in_complement(a: &Matrix3<f64>, v0: &Vector3<f64>, lambda: f64) -> Vector3<f64> {
    let (u, v) = orthonormal_complement(v0);
    let au = a * u;
    let av = a * v;
    let mut m00 = u.dot(&au) - lambda;
    let mut m01 = u.dot(&av);
    let mut m11 = v.dot(&av) - lambda;
    let (abs00, abs01, abs11) = (m00.abs(), m01.abs(), m11.abs());
    if abs00 >= abs11 {
        let max_abs = abs00.max(abs01);
        if max_abs > 0.0 {
            if abs00 >= abs01 {
                m01 /= m00;
                m00 = 1.0 / (1.0 + m01 * m01).sqrt();
                m01 *= m00;
            } else {
                m00 /= m01;
                m01 = 1.0 / (1.0 + m00 * m00).sqrt();
                m00 *= m01;
            }
            return (u * m01 - v * m00).normalize();
        }
        u
    } else {
        let max_abs = abs11.max(abs01);
        if max_abs > 0.0 {
            if abs11 >= abs01 {
                m01 /= m11;
                m11 = 1.0 / (1.0 + m01 * m01).sqrt();
                m01 *= m11;
            } else {
                m11 /= m01;
                m01 = 1.0 / (1.0 + m11 * m11).sqrt();
                m11 *= m01;
            }
            return (u * m11 - v * m01).normalize();
        }
        u
    }
}

/// Cyclic Jacobi sweeps; converges for any symmetric input.
fn jacobi(a: &Matrix3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let mut d = *a;
    let mut v = Matrix3::<f64>::identity();
    for _ in 0..64 {
        let off = d[(0, 1)].powi(2) + d[(0, 2)].powi(2) + d[(1, 2)].powi(2);
        if off < 1e-300 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = d[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (d[(q, q)] - d[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::<f64>::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            d = rot.transpose() * d * rot;
            d[(p, q)] = 0.0;
            d[(q, p)] = 0.0;
            v *= rot;
        }
    }
    let values = [d[(0, 0)], d[(1, 1)], d[(2, 2)]];
    let vectors = [
        v.column(0).normalize(),
        v.column(1).normalize(),
        v.column(2).normalize(),
    ];
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_decomposition(m: &Matrix3<f64>, e: &SymmetricEigen3, tol: f64) {
        for i in 0..3 {
            let v = e.vectors[i];
            assert!((v.norm() - 1.0).abs() < tol);
            assert!((m * v - v * e.values[i]).norm() < tol * m.abs().max().max(1.0));
            for j in (i + 1)..3 {
                assert!(v.dot(&e.vectors[j]).abs() < tol);
            }
        }
        assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
    }

    #[test]
    fn diagonal_input() {
        let m = Matrix3::from_diagonal(&Vector3::new(3.0, 1.0, 2.0));
        let e = symmetric_eigen3(&m);
        assert_eq!(e.values, [1.0, 2.0, 3.0]);
        assert!((e.vectors[0].abs() - Vector3::y()).norm() < 1e-15);
        assert!((e.vectors[1].abs() - Vector3::z()).norm() < 1e-15);
        assert!((e.vectors[2].abs() - Vector3::x()).norm() < 1e-15);
    }

    #[test]
    fn identity_is_degenerate_but_valid() {
        let e = symmetric_eigen3(&Matrix3::identity());
        assert_eq!(e.values, [1.0, 1.0, 1.0]);
        check_decomposition(&Matrix3::identity(), &e, 1e-12);
    }

    #[test]
    fn rotated_diagonal_recovers_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let r = *RigidTransform::random(&mut rng, 0.0).rotation();
            let m = r * Matrix3::from_diagonal(&Vector3::new(0.1, 1.0, 5.0)) * r.transpose();
            let e = symmetric_eigen3(&m);
            assert!((e.values[0] - 0.1).abs() < 1e-8);
            assert!((e.values[1] - 1.0).abs() < 1e-8);
            assert!((e.values[2] - 5.0).abs() < 1e-8);
            check_decomposition(&m, &e, 1e-7);
        }
    }

    #[test]
    fn near_degenerate_and_rank_deficient_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let spectra = [
            [1.0, 1.0, 2.0],
            [1.0, 1.0 + 1e-13, 2.0],
            [0.0, 0.0, 3.0],
            [0.0, 1.0, 1.0],
            [-2.0, 0.5, 0.5 + 1e-9],
            [1e-20, 1.0, 1e6],
        ];
        for s in spectra {
            for _ in 0..20 {
                let r = *RigidTransform::random(&mut rng, 0.0).rotation();
                let m = r * Matrix3::from_diagonal(&Vector3::from(s)) * r.transpose();
                let m = (m + m.transpose()) * 0.5;
                let e = symmetric_eigen3(&m);
                check_decomposition(&m, &e, 1e-7);
            }
        }
    }

    #[test]
    fn trace_and_determinant_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let mut m = Matrix3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            m = (m + m.transpose()) * 0.5;
            let e = symmetric_eigen3(&m);
            check_decomposition(&m, &e, 1e-7);
            let sum: f64 = e.values.iter().sum();
            let prod: f64 = e.values.iter().product();
            assert!((sum - m.trace()).abs() < 1e-9);
            assert!((prod - m.determinant()).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobi_agrees_with_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let mut m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            m = (m + m.transpose()) * 0.5;
            let (mut jv, _) = jacobi(&m);
            jv.sort_by(f64::total_cmp);
            let e = symmetric_eigen3(&m);
            for i in 0..3 {
                assert!((jv[i] - e.values[i]).abs() < 1e-12);
            }
        }
    }
}
