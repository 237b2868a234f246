//! Translation- and rotation-invariant supervision of predicted conformations.
//!
//! K-RMSD aligns the prediction onto the reference with the Kabsch rotation
//! (SVD-based, differentiable end to end) before the mass-weighted RMSD.
//! Distance and ADJ-k losses compare squared pairwise distances directly, so
//! they are additionally reflection-invariant; ADJ-k reweights pairs by the
//! k-th power of the normalized simple adjacency so local structure dominates.

use thiserror::Error;

use crate::chemgraph::MoleculeGraph;
use crate::diffmath::{Rng, Svd3Error, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(#[from] Svd3Error),
}

/// Loss values in the units the result tables use (angstrom; distance loss
/// is additionally reported as 1e-2 angstrom there).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LossReport {
    pub k_rmsd: f64,
    pub dist_loss: f64,
    pub adj_k: f64,
    pub combined: f64,
    pub lambda: f64,
}

/// Whether Kabsch centroids/covariance use atom masses. The RMSD itself is
/// always mass-weighted; this flag only controls the alignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignWeights {
    Mass,
    Uniform,
}

/// Normalized weight vector used for centroids and covariance.
fn align_weights(masses: &[f64], mode: AlignWeights) -> Vec<f64> {
    let n = masses.len();
    match mode {
        AlignWeights::Uniform => vec![1.0 / n as f64; n],
        AlignWeights::Mass => {
            let total: f64 = masses.iter().sum();
            masses.iter().map(|m| m / total).collect()
        }
    }
}

fn weighted_centroid(coords: &Tensor, w: &[f64]) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for (i, wi) in w.iter().enumerate() {
        for k in 0..3 {
            c[k] += wi * coords.at(i, k);
        }
    }
    c
}

/// Kabsch superposition of `q_hat` onto the reference: both point sets are
/// centered on their weighted centroids, the optimal proper rotation comes
/// from the SVD of the weighted cross-covariance (`R = V diag(1,1,d) U^T`
/// with `d = det(V U^T)`, so reflections are never produced), and the result
/// is translated onto the reference centroid.
pub fn kabsch_align<'t>(
    tape: &'t Tape,
    q_hat: Var<'t>,
    q_ref: &Tensor,
    masses: &[f64],
    mode: AlignWeights,
) -> Result<Var<'t>, GeoError> {
    let n = masses.len();
    assert_eq!(q_hat.value().shape(), &[n, 3], "q_hat must be n x 3");
    assert_eq!(q_ref.shape(), &[n, 3], "q_ref must be n x 3");
    let w = align_weights(masses, mode);
    let w_row = tape.constant(Tensor::matrix(1, n, w.clone()));
    let w_vec = tape.constant(Tensor::vector(w.clone()));

    let centroid_hat = q_hat.t().matmul(w_row.t()).reshape(vec![3]);
    let centered_hat = q_hat.add_row(centroid_hat.neg());

    let ref_centroid = weighted_centroid(q_ref, &w);
    let centered_ref: Vec<f64> = (0..n)
        .flat_map(|i| (0..3).map(move |k| (i, k)))
        .map(|(i, k)| q_ref.at(i, k) - ref_centroid[k])
        .collect();
    let centered_ref = tape.constant(Tensor::matrix(n, 3, centered_ref));

    // Weighted cross-covariance, 3x3.
    let cov = centered_hat.scale_rows(w_vec).t().matmul(centered_ref);
    let (u, _s, v) = cov.svd3().map_err(GeoError::DegenerateGeometry)?;

    // det(V U^T) = det(V) det(U); a discrete sign, constant under
    // differentiation away from degeneracies.
    let d = det3(&v.value()) * det3(&u.value());
    let flip = tape.constant(Tensor::matrix(
        3,
        3,
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, d.signum()],
    ));
    let rotation = v.matmul(flip).matmul(u.t());

    let ref_centroid_row = tape.constant(Tensor::vector(ref_centroid.to_vec()));
    Ok(centered_hat.matmul(rotation.t()).add_row(ref_centroid_row))
}

fn det3(m: &Tensor) -> f64 {
    m.at(0, 0) * (m.at(1, 1) * m.at(2, 2) - m.at(1, 2) * m.at(2, 1))
        - m.at(0, 1) * (m.at(1, 0) * m.at(2, 2) - m.at(1, 2) * m.at(2, 0))
        + m.at(0, 2) * (m.at(1, 0) * m.at(2, 1) - m.at(1, 1) * m.at(2, 0))
}

/// Mass-weighted RMSD after Kabsch alignment:
/// `sqrt(sum_i m_i |q_i^K - q_i^R|^2 / sum_i m_i)`.
pub fn k_rmsd<'t>(
    tape: &'t Tape,
    q_hat: Var<'t>,
    q_ref: &Tensor,
    masses: &[f64],
    mode: AlignWeights,
) -> Result<Var<'t>, GeoError> {
    let aligned = kabsch_align(tape, q_hat, q_ref, masses, mode)?;
    let diff = aligned.sub(tape.constant(q_ref.clone()));
    let m_total: f64 = masses.iter().sum();
    let m_vec = tape.constant(Tensor::vector(masses.to_vec()));
    Ok(diff
        .square()
        .sum_axis(1)
        .mul(m_vec)
        .sum()
        .scale(1.0 / m_total)
        .sqrt())
}

/// Squared pairwise distance matrix `D_ij = |x_i - x_j|^2` (grouped so the
/// result is exactly symmetric with zero diagonal).
fn squared_distances<'t>(tape: &'t Tape, x: Var<'t>) -> Var<'t> {
    let n = x.value().rows();
    let gram = x.matmul(x.t());
    let diag_positions: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let r = gram
        .reshape(vec![n * n, 1])
        .gather_rows(&diag_positions)
        .reshape(vec![n]);
    let ones = tape.constant(Tensor::full(vec![n], 1.0));
    r.outer(ones).add(ones.outer(r)).sub(gram.scale(2.0))
}

/// Root-mean-square mismatch of squared pairwise distances over all n^2
/// ordered pairs: `sqrt((1/n^2) sum_ij (D_hat_ij - D_ref_ij)^2)`.
pub fn dist_loss<'t>(tape: &'t Tape, q_hat: Var<'t>, q_ref: &Tensor) -> Var<'t> {
    let d_hat = squared_distances(tape, q_hat);
    let d_ref = reference_squared_distances(q_ref);
    d_hat.sub(tape.constant(d_ref)).square().mean().sqrt()
}

/// ADJ-k loss: pairs weighted by the k-th power of the normalized simple
/// adjacency: `sqrt((1/n) sum_ij (A~^k)_ij (D_hat_ij - D_ref_ij)^2)`.
pub fn adj_k_loss<'t>(
    tape: &'t Tape,
    q_hat: Var<'t>,
    q_ref: &Tensor,
    adj_pow_k: &Tensor,
) -> Var<'t> {
    let n = q_hat.value().rows();
    assert_eq!(adj_pow_k.shape(), &[n, n]);
    let d_hat = squared_distances(tape, q_hat);
    let d_ref = reference_squared_distances(q_ref);
    d_hat
        .sub(tape.constant(d_ref))
        .square()
        .mul(tape.constant(adj_pow_k.clone()))
        .sum()
        .scale(1.0 / n as f64)
        .sqrt()
}

/// `L = K-RMSD + lambda * ADJ-k`; `lambda = 0` reduces to K-RMSD alone.
pub fn combined_loss<'t>(
    tape: &'t Tape,
    q_hat: Var<'t>,
    q_ref: &Tensor,
    masses: &[f64],
    adj_pow_k: &Tensor,
    lambda: f64,
    mode: AlignWeights,
) -> Result<Var<'t>, GeoError> {
    let k = k_rmsd(tape, q_hat, q_ref, masses, mode)?;
    if lambda == 0.0 {
        return Ok(k);
    }
    let adj = adj_k_loss(tape, q_hat, q_ref, adj_pow_k);
    Ok(k.add(adj.scale(lambda)))
}

fn reference_squared_distances(q_ref: &Tensor) -> Tensor {
    let n = q_ref.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..3 {
                let diff = q_ref.at(i, k) - q_ref.at(j, k);
                acc += diff * diff;
            }
            d[i * n + j] = acc;
        }
    }
    Tensor::matrix(n, n, d)
}

/// Normalized simple adjacency for ADJ-k: bond existence regardless of type,
/// plus self-loops, symmetrically normalized like a GCN adjacency.
pub fn normalized_simple_adjacency(mol: &MoleculeGraph) -> Tensor {
    let n = mol.atom_count();
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for bond in &mol.bonds {
        let (i, j) = bond.endpoints;
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    let mut deg = vec![0.0f64; n];
    for (i, d) in deg.iter_mut().enumerate() {
        *d = a[i * n..(i + 1) * n].iter().sum::<f64>();
    }
    let dinv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= dinv[i] * dinv[j];
        }
    }
    Tensor::matrix(n, n, a)
}

/// Dense matrix power by repeated multiplication (k is small).
pub fn matrix_power(a: &Tensor, k: usize) -> Tensor {
    let n = a.rows();
    assert!(k >= 1);
    let mut out = a.clone();
    for _ in 1..k {
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let v = out.at(i, l);
                if v == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[i * n + j] += v * a.at(l, j);
                }
            }
        }
        out = Tensor::matrix(n, n, next);
    }
    out
}

/// All four loss values from plain tensors (fresh tape internally).
pub fn evaluate_losses(
    q_hat: &Tensor,
    q_ref: &Tensor,
    masses: &[f64],
    adj_pow_k: &Tensor,
    lambda: f64,
    mode: AlignWeights,
) -> Result<LossReport, GeoError> {
    let tape = Tape::new();
    let qh = tape.constant(q_hat.clone());
    let k = k_rmsd(&tape, qh, q_ref, masses, mode)?.value().value();
    let d = dist_loss(&tape, qh, q_ref).value().value();
    let a = adj_k_loss(&tape, qh, q_ref, adj_pow_k).value().value();
    Ok(LossReport {
        k_rmsd: k,
        dist_loss: d,
        adj_k: a,
        combined: k + lambda * a,
        lambda,
    })
}

/// Uniform random proper rotation (unit-quaternion sampling).
pub fn random_rotation(rng: &mut Rng) -> Tensor {
    // Shoemake's method over the unit quaternion sphere.
    let u1 = rng.uniform();
    let u2 = rng.uniform();
    let u3 = rng.uniform();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t2, t3) = (std::f64::consts::TAU * u2, std::f64::consts::TAU * u3);
    let (x, y, z, w) = (a * t2.sin(), a * t2.cos(), b * t3.sin(), b * t3.cos());
    Tensor::matrix(
        3,
        3,
        vec![
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    )
}

/// Apply `x -> R x + t` to every row (a rigid motion when R is a rotation).
pub fn apply_rigid(coords: &Tensor, rotation: &Tensor, translation: [f64; 3]) -> Tensor {
    let n = coords.rows();
    let mut out = vec![0.0; n * 3];
    for i in 0..n {
        for r in 0..3 {
            let mut acc = translation[r];
            for c in 0..3 {
                acc += rotation.at(r, c) * coords.at(i, c);
            }
            out[i * 3 + r] = acc;
        }
    }
    Tensor::matrix(n, 3, out)
}
