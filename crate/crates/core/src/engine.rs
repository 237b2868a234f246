//! Discretized dissipative Hamiltonian dynamics over implicit coordinates.
//!
//! Per step (explicit Euler, all force blocks evaluated at step `t` and the
//! two updates applied simultaneously):
//!
//! ```text
//! q(t+1) = q(t) + eta * dH/dp
//! p(t+1) = p(t) - eta * (dH/dq + m_i * dPhi/dp)
//! ```
//!
//! Energies are quadratic forms with learnable matrices: kinetic
//! `|W_T p_i|^2 / 2m_i`, Rayleigh dissipation `|W_phi p_i|^2 / 2m_i^2`, and a
//! softened Lennard-Jones potential `u_ij = s_ij^-2 - s_ij^-1` over learned
//! squared distances `s_ij = |W_U (q_i - q_j)|^2`, floored at `eps_r` with
//! zero gradient in the clamped region. Parameters are shared across steps,
//! so the checkpoint size depends only on `d_f`, never on the depth `T`.

use thiserror::Error;

use crate::diffmath::{ParamSet, Tape, Tensor, Var};

/// Relative atomic masses are normalized as `m_i = M_i / 50`.
pub const MASS_NORMALIZER: f64 = 50.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("non-finite state at step {step} (step size too large?)")]
    NonFinite { step: usize },
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EngineConfig {
    pub d_f: usize,
    /// Integrator step size.
    pub eta: f64,
    pub t_steps: usize,
    /// Floor on the learned squared pair distance.
    pub eps_r: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            d_f: 32,
            eta: 0.04,
            t_steps: 20,
            eps_r: 1e-6,
        }
    }
}

/// Checkpoint names and shapes; a function of `d_f` only.
pub fn param_spec(d_f: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        ("eng.w_t".into(), vec![d_f, d_f]),
        ("eng.w_phi".into(), vec![d_f, d_f]),
        ("eng.w_u".into(), vec![d_f, d_f]),
        ("eng.w_trans".into(), vec![d_f, 3]),
    ]
}

/// Engine parameters bound to one tape, with the Gram products the force
/// expressions reuse every step.
pub struct EngineBind<'t> {
    pub w_t: Var<'t>,
    pub w_phi: Var<'t>,
    pub w_u: Var<'t>,
    pub w_trans: Var<'t>,
    gram_t: Var<'t>,
    gram_phi: Var<'t>,
    gram_u: Var<'t>,
}

pub fn bind<'t>(tape: &'t Tape, params: &ParamSet) -> EngineBind<'t> {
    let w_t = tape.bind(params, "eng.w_t");
    let w_phi = tape.bind(params, "eng.w_phi");
    let w_u = tape.bind(params, "eng.w_u");
    let w_trans = tape.bind(params, "eng.w_trans");
    EngineBind {
        w_t,
        w_phi,
        w_u,
        w_trans,
        gram_t: w_t.t().matmul(w_t),
        gram_phi: w_phi.t().matmul(w_phi),
        gram_u: w_u.t().matmul(w_u),
    }
}

/// Mass-derived constant vectors used by the quadratic forms.
pub struct MassVectors<'t> {
    /// Normalized masses `M_i / 50`.
    pub m: Vec<f64>,
    inv_m: Var<'t>,
    inv_2m: Var<'t>,
    inv_2m2: Var<'t>,
}

impl<'t> MassVectors<'t> {
    pub fn new(tape: &'t Tape, relative_masses: &[f64]) -> Self {
        let m: Vec<f64> = relative_masses
            .iter()
            .map(|w| {
                assert!(*w > 0.0, "mass must be positive");
                w / MASS_NORMALIZER
            })
            .collect();
        let inv_m = tape.constant(Tensor::vector(m.iter().map(|v| 1.0 / v).collect()));
        let inv_2m = tape.constant(Tensor::vector(m.iter().map(|v| 1.0 / (2.0 * v)).collect()));
        let inv_2m2 = tape.constant(Tensor::vector(
            m.iter().map(|v| 1.0 / (2.0 * v * v)).collect(),
        ));
        MassVectors {
            m,
            inv_m,
            inv_2m,
            inv_2m2,
        }
    }
}

/// Per-atom kinetic energies `|W_T p_i|^2 / 2m_i` (an n-vector, always >= 0).
pub fn kinetic_terms<'t>(p: Var<'t>, w_t: Var<'t>, masses: &MassVectors<'t>) -> Var<'t> {
    let x = p.matmul(w_t.t());
    x.square().sum_axis(1).mul(masses.inv_2m)
}

/// Per-atom Rayleigh dissipation `|W_phi p_i|^2 / 2m_i^2`.
pub fn dissipation_terms<'t>(p: Var<'t>, w_phi: Var<'t>, masses: &MassVectors<'t>) -> Var<'t> {
    let x = p.matmul(w_phi.t());
    x.square().sum_axis(1).mul(masses.inv_2m2)
}

/// Learned squared pair distances `s_ij = max(eps_r, |W_U (q_i - q_j)|^2)`
/// plus the constant masks the potential and forces share.
struct PairTable<'t> {
    s: Var<'t>,
    /// 1 where the pair contributes gradient: i != j and s above the floor.
    active_mask: Tensor,
    /// 1 off the diagonal (the potential's summation domain).
    offdiag_mask: Tensor,
}

fn pair_table<'t>(tape: &'t Tape, q: Var<'t>, w_u: Var<'t>, eps_r: f64) -> PairTable<'t> {
    let n = q.value().rows();
    // s_ij = r_i + r_j - 2 G_ij with G = Y Y^T, Y = Q W_U^T. This grouping
    // (rather than Q (W^T W) Q^T) makes G, and hence s, bitwise symmetric,
    // and taking r from the Gram diagonal keeps s_ii == 0 exactly.
    let y = q.matmul(w_u.t());
    let gram = y.matmul(y.t());
    let diag_positions: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let r = gram
        .reshape(vec![n * n, 1])
        .gather_rows(&diag_positions)
        .reshape(vec![n]);
    let ones = tape.constant(Tensor::full(vec![n], 1.0));
    let s_raw = r.outer(ones).add(ones.outer(r)).sub(gram.scale(2.0));
    let s = s_raw.clamp_min(eps_r);

    let raw = s_raw.value();
    let mut active = vec![0.0; n * n];
    let mut offdiag = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                offdiag[i * n + j] = 1.0;
                if raw.at(i, j) > eps_r {
                    active[i * n + j] = 1.0;
                }
            }
        }
    }
    PairTable {
        s,
        active_mask: Tensor::matrix(n, n, active),
        offdiag_mask: Tensor::matrix(n, n, offdiag),
    }
}

/// Total potential `U = sum_{i != j} (s_ij^-2 - s_ij^-1)`; every unordered
/// pair is counted twice, exactly as written.
pub fn potential<'t>(tape: &'t Tape, q: Var<'t>, bind: &EngineBind<'t>, eps_r: f64) -> Var<'t> {
    let table = pair_table(tape, q, bind.w_u, eps_r);
    potential_from_table(tape, &table)
}

fn potential_from_table<'t>(tape: &'t Tape, table: &PairTable<'t>) -> Var<'t> {
    let inv = table.s.recip();
    let u = inv.square().sub(inv);
    u.mul(tape.constant(table.offdiag_mask.clone())).sum()
}

/// The three force blocks of one step, all evaluated from the same state.
pub struct Forces<'t> {
    /// dH/dq = dU/dq (closed form, zero on clamped pairs).
    pub dh_dq: Var<'t>,
    /// dH/dp = dT/dp = W_T^T W_T p_i / m_i.
    pub dh_dp: Var<'t>,
    /// m_i dPhi/dp = W_phi^T W_phi p_i / m_i.
    pub m_dphi_dp: Var<'t>,
}

pub fn forces<'t>(
    tape: &'t Tape,
    q: Var<'t>,
    p: Var<'t>,
    bind: &EngineBind<'t>,
    masses: &MassVectors<'t>,
    eps_r: f64,
) -> Forces<'t> {
    let dh_dp = p.matmul(bind.gram_t).scale_rows(masses.inv_m);
    let m_dphi_dp = p.matmul(bind.gram_phi).scale_rows(masses.inv_m);

    let table = pair_table(tape, q, bind.w_u, eps_r);
    // U double-counts unordered pairs, so each atom collects its pair term
    // from both orientations:
    //   dU/dq_i = sum_j 4(-2 s^-3 + s^-2) W_U^T W_U (q_i - q_j)
    // on active pairs ==> dU/dQ = (diag(C 1) - C) Q W_U^T W_U.
    let inv = table.s.recip();
    let inv2 = inv.square();
    let inv3 = inv2.mul(inv);
    let coeff = inv3
        .scale(-8.0)
        .add(inv2.scale(4.0))
        .mul(tape.constant(table.active_mask.clone()));
    let row_sums = coeff.sum_axis(1);
    let dh_dq = q
        .scale_rows(row_sums)
        .sub(coeff.matmul(q))
        .matmul(bind.gram_u);

    Forces {
        dh_dq,
        dh_dp,
        m_dphi_dp,
    }
}

/// Scalar energy bookkeeping for one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyRecord {
    pub kinetic: f64,
    pub potential: f64,
    pub hamiltonian: f64,
    pub dissipation: f64,
}

/// One explicit-Euler step. Both updates read only the incoming state.
pub fn step<'t>(
    tape: &'t Tape,
    q: Var<'t>,
    p: Var<'t>,
    bind: &EngineBind<'t>,
    masses: &MassVectors<'t>,
    cfg: &EngineConfig,
) -> (Var<'t>, Var<'t>) {
    let f = forces(tape, q, p, bind, masses, cfg.eps_r);
    let q_next = q.add(f.dh_dp.scale(cfg.eta));
    let p_next = p.sub(f.dh_dq.add(f.m_dphi_dp).scale(cfg.eta));
    (q_next, p_next)
}

/// Full rollout: `t_steps` applications of [`step`] with per-state energies.
pub struct Trajectory<'t> {
    /// `t_steps + 1` states, `states[0] = (q0, p0)`.
    pub states: Vec<(Var<'t>, Var<'t>)>,
    pub energies: Vec<EnergyRecord>,
}

impl<'t> Trajectory<'t> {
    pub fn final_q(&self) -> Var<'t> {
        self.states.last().unwrap().0
    }

    pub fn final_p(&self) -> Var<'t> {
        self.states.last().unwrap().1
    }
}

pub fn rollout<'t>(
    tape: &'t Tape,
    q0: Var<'t>,
    p0: Var<'t>,
    bind: &EngineBind<'t>,
    masses: &MassVectors<'t>,
    cfg: &EngineConfig,
) -> Result<Trajectory<'t>, EngineError> {
    let energy = |q: Var<'t>, p: Var<'t>| -> EnergyRecord {
        let kin = kinetic_terms(p, bind.w_t, masses).sum().value().value();
        let pot = potential(tape, q, bind, cfg.eps_r).value().value();
        let dis = dissipation_terms(p, bind.w_phi, masses)
            .sum()
            .value()
            .value();
        EnergyRecord {
            kinetic: kin,
            potential: pot,
            hamiltonian: kin + pot,
            dissipation: dis,
        }
    };

    let mut states = Vec::with_capacity(cfg.t_steps + 1);
    let mut energies = Vec::with_capacity(cfg.t_steps + 1);
    states.push((q0, p0));
    energies.push(energy(q0, p0));
    let (mut q, mut p) = (q0, p0);
    for t in 0..cfg.t_steps {
        let (qn, pn) = step(tape, q, p, bind, masses, cfg);
        if !qn.value().is_finite() || !pn.value().is_finite() {
            return Err(EngineError::NonFinite { step: t + 1 });
        }
        q = qn;
        p = pn;
        states.push((q, p));
        energies.push(energy(q, p));
    }
    Ok(Trajectory { states, energies })
}

/// Linear projection of implicit positions into real 3D space.
pub fn project3d<'t>(q: Var<'t>, w_trans: Var<'t>) -> Var<'t> {
    q.matmul(w_trans)
}
