use thiserror::Error;

use super::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum Svd3Error {
    #[error("svd3 input must be a finite 3x3 matrix")]
    NonFiniteInput,
    #[error("svd3 Jacobi sweep did not converge after {0} sweeps")]
    NoConvergence(usize),
}

const MAX_SWEEPS: usize = 60;

/// Full SVD of a 3x3 matrix: `M = U * diag(S) * V^T` with `U`, `V` orthogonal
/// and `S` descending, non-negative.
///
/// One-sided Jacobi: right-rotations make the columns of `M V` mutually
/// orthogonal; their norms are the singular values. Columns with (near-)zero
/// norm get an orthonormal completion, which keeps `U` orthogonal without
/// disturbing the reconstruction (the corresponding singular value vanishes).
pub fn svd3_decompose(m: &Tensor) -> Result<(Tensor, Tensor, Tensor), Svd3Error> {
    assert_eq!(m.shape(), &[3, 3], "svd3 expects a 3x3 matrix");
    if !m.is_finite() {
        return Err(Svd3Error::NonFiniteInput);
    }

    // w holds M (columns updated in place); v accumulates the rotations.
    let mut w = [[0.0f64; 3]; 3]; // w[r][c]
    for r in 0..3 {
        for c in 0..3 {
            w[r][c] = m.at(r, c);
        }
    }
    let mut v = [[0.0f64; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let mut converged = false;
    let mut sweeps = 0;
    while !converged {
        if sweeps >= MAX_SWEEPS {
            return Err(Svd3Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        converged = true;
        for (i, j) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let mut a = 0.0;
            let mut b = 0.0;
            let mut c = 0.0;
            for r in 0..3 {
                a += w[r][i] * w[r][i];
                b += w[r][j] * w[r][j];
                c += w[r][i] * w[r][j];
            }
            if c.abs() <= 1e-15 * (a * b).sqrt() || c == 0.0 {
                continue;
            }
            converged = false;
            // Jacobi rotation zeroing the (i,j) inner product.
            let zeta = (b - a) / (2.0 * c);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let cs = 1.0 / (1.0 + t * t).sqrt();
            let sn = cs * t;
            for r in 0..3 {
                let wi = w[r][i];
                let wj = w[r][j];
                w[r][i] = cs * wi - sn * wj;
                w[r][j] = sn * wi + cs * wj;
                let vi = v[r][i];
                let vj = v[r][j];
                v[r][i] = cs * vi - sn * vj;
                v[r][j] = sn * vi + cs * vj;
            }
        }
    }

    // Singular values = column norms of W; U columns = normalized W columns.
    let mut s = [0.0f64; 3];
    for (c, sc) in s.iter_mut().enumerate() {
        *sc = (0..3).map(|r| w[r][c] * w[r][c]).sum::<f64>().sqrt();
    }

    // Sort descending, permuting W and V columns consistently.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| s[y].partial_cmp(&s[x]).unwrap());
    let sp = [s[order[0]], s[order[1]], s[order[2]]];
    let mut wp = [[0.0f64; 3]; 3];
    let mut vp = [[0.0f64; 3]; 3];
    for (c, &oc) in order.iter().enumerate() {
        for r in 0..3 {
            wp[r][c] = w[r][oc];
            vp[r][c] = v[r][oc];
        }
    }

    // Normalize U columns; complete (near-)null columns orthonormally. The
    // threshold is relative to the largest singular value so that swapping a
    // noise direction for a clean completion perturbs U*S*V^T by at most
    // ~1e-13 * |M|.
    let tiny = sp[0] * 1e-13 + f64::MIN_POSITIVE;
    let mut u = [[0.0f64; 3]; 3];
    for c in 0..3 {
        if sp[c] > tiny {
            for r in 0..3 {
                u[r][c] = wp[r][c] / sp[c];
            }
        } else if c == 0 {
            // Zero matrix.
            for (r, row) in u.iter_mut().enumerate() {
                row[c] = if r == c { 1.0 } else { 0.0 };
            }
        } else if c == 1 {
            // Any unit vector orthogonal to column 0.
            let u0 = [u[0][0], u[1][0], u[2][0]];
            let pick = if u0[0].abs() < 0.9 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            };
            let cr = cross(u0, pick);
            let n = norm(cr);
            for r in 0..3 {
                u[r][c] = cr[r] / n;
            }
        } else {
            let u0 = [u[0][0], u[1][0], u[2][0]];
            let u1 = [u[0][1], u[1][1], u[2][1]];
            let cr = cross(u0, u1);
            let n = norm(cr);
            for r in 0..3 {
                u[r][c] = cr[r] / n;
            }
        }
    }

    let flat = |m: &[[f64; 3]; 3]| {
        let mut d = Vec::with_capacity(9);
        for row in m.iter() {
            d.extend_from_slice(row);
        }
        d
    };
    Ok((
        Tensor::matrix(3, 3, flat(&u)),
        Tensor::vector(sp.to_vec()),
        Tensor::matrix(3, 3, flat(&vp)),
    ))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Minimum gap between singular values; below `1e-6` the tape backward
/// treats `U` and `V` as constants (the exact derivative blows up near
/// coinciding singular values, which Kabsch hits on symmetric point clouds).
pub(crate) fn min_gap(s: &[f64]) -> f64 {
    let mut g = f64::INFINITY;
    for i in 0..s.len() {
        for j in (i + 1)..s.len() {
            g = g.min((s[i] - s[j]).abs());
        }
    }
    g
}

/// Backward rule for the full square SVD.
///
/// With `F_ij = 1 / (s_j^2 - s_i^2)` off-diagonal, the adjoint of `M` is
/// `U [ (F o (U^T dU - dU^T U)) S  +  diag(dS)  +  S (F o (V^T dV - dV^T V)) ] V^T`.
/// When the singular-value gap is degenerate the rotation-sensitive terms are
/// dropped (straight-through on `U`, `V`).
pub(crate) fn svd3_backward(
    u: &[f64],
    s: &[f64],
    v: &[f64],
    du: &[f64],
    ds: &[f64],
    dv: &[f64],
) -> [f64; 9] {
    let degenerate = min_gap(s) < 1e-6;

    // inner[a][b] accumulates the bracketed 3x3 matrix.
    let mut inner = [[0.0f64; 3]; 3];
    for (i, row) in inner.iter_mut().enumerate() {
        row[i] = ds[i];
    }

    if !degenerate {
        // ut_du = U^T dU, vt_dv = V^T dV (3x3, row-major inputs).
        let mut ut_du = [[0.0f64; 3]; 3];
        let mut vt_dv = [[0.0f64; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut su = 0.0;
                let mut sv = 0.0;
                for k in 0..3 {
                    su += u[k * 3 + a] * du[k * 3 + b];
                    sv += v[k * 3 + a] * dv[k * 3 + b];
                }
                ut_du[a][b] = su;
                vt_dv[a][b] = sv;
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    continue;
                }
                let f = 1.0 / (s[b] * s[b] - s[a] * s[a]);
                let ju = f * (ut_du[a][b] - ut_du[b][a]);
                let jv = f * (vt_dv[a][b] - vt_dv[b][a]);
                inner[a][b] += ju * s[b] + s[a] * jv;
            }
        }
    }

    // dM = U * inner * V^T
    let mut ui = [[0.0f64; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += u[r * 3 + k] * inner[k][c];
            }
            ui[r][c] = acc;
        }
    }
    let mut out = [0.0f64; 9];
    for r in 0..3 {
        for c in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += ui[r][k] * v[c * 3 + k];
            }
            out[r * 3 + c] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::Rng;

    fn check_factorization(m: &Tensor) {
        let (u, s, v) = svd3_decompose(m).unwrap();
        // Reconstruction.
        let mut err: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += u.at(r, k) * s.data()[k] * v.at(c, k);
                }
                err = err.max((acc - m.at(r, c)).abs());
            }
        }
        assert!(err < 1e-10, "reconstruction error {err}");
        // Orthogonality.
        for (q, name) in [(&u, "U"), (&v, "V")] {
            for a in 0..3 {
                for b in 0..3 {
                    let dot: f64 = (0..3).map(|k| q.at(k, a) * q.at(k, b)).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10, "{name} not orthogonal");
                }
            }
        }
        // Ordering and sign.
        assert!(s.data()[0] >= s.data()[1] && s.data()[1] >= s.data()[2]);
        assert!(s.data()[2] >= 0.0);
    }

    #[test]
    fn identity_singular_values() {
        let (_, s, _) = svd3_decompose(&Tensor::eye(3)).unwrap();
        assert_eq!(s.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix() {
        let m = Tensor::matrix(3, 3, vec![3., 0., 0., 0., 2., 0., 0., 0., 1.]);
        let (_, s, _) = svd3_decompose(&m).unwrap();
        assert!((s.data()[0] - 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 2.0).abs() < 1e-12);
        assert!((s.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_matrices_factor_cleanly() {
        let mut rng = Rng::new(42);
        for trial in 0..1000 {
            let data: Vec<f64> = (0..9).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let mut m = Tensor::matrix(3, 3, data);
            // Every fourth trial: force rank deficiency.
            if trial % 4 == 0 {
                let a: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let b: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let mut d = vec![0.0; 9];
                for r in 0..3 {
                    for c in 0..3 {
                        d[r * 3 + c] = a[r] * b[c];
                    }
                }
                if trial % 8 == 0 {
                    // rank 2
                    let a2: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                    let b2: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                    for r in 0..3 {
                        for c in 0..3 {
                            d[r * 3 + c] += a2[r] * b2[c];
                        }
                    }
                }
                m = Tensor::matrix(3, 3, d);
            }
            check_factorization(&m);
        }
    }

    #[test]
    fn zero_matrix() {
        check_factorization(&Tensor::zeros(vec![3, 3]));
    }

    #[test]
    fn non_finite_rejected() {
        let m = Tensor::matrix(3, 3, vec![f64::NAN, 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(svd3_decompose(&m), Err(Svd3Error::NonFiniteInput));
    }
}
