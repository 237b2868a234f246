//! Conformation-aware molecular fingerprints.
//!
//! A message-passing network in the attentive-FP style: per-edge attention
//! energies and messages incorporate relative implicit geometry
//! `r_ij = (q_i ++ p_i) - (q_j ++ p_j)`, node states update through a shared
//! GRU, and a virtual meta node connected to all atoms runs M passes of
//! global attentive pooling to produce the molecule fingerprint. Removing
//! the q,p channels everywhere gives the geometry-free variant; lifting real
//! 3D coordinates through small MLPs gives the real-conformation variant.

use crate::chemgraph::MoleculeGraph;
use crate::diffmath::{ParamSet, Tape, Tensor, Var};

/// Where the fingerprint's q,p inputs come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConfMode {
    /// Final-step engine outputs.
    Engine,
    /// No geometry channels at all ("w/o conf.").
    WithoutConf,
    /// Real coordinates lifted by MLPs ("real conf.").
    RealConf,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FpConfig {
    /// Node and fingerprint width.
    pub hidden: usize,
    /// Message-passing layers (L).
    pub layers: usize,
    /// Global readout passes (M).
    pub readout_passes: usize,
    /// Width of each of q and p.
    pub d_f: usize,
    pub conf_mode: ConfMode,
    /// Output width of the prediction head.
    pub tasks: usize,
    /// Apply leaky-relu(0.2) to attention energies (GAT parity); the default
    /// keeps them linear.
    pub leaky_attention: bool,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            hidden: 200,
            layers: 2,
            readout_passes: 2,
            d_f: 32,
            conf_mode: ConfMode::Engine,
            tasks: 1,
            leaky_attention: false,
        }
    }
}

impl FpConfig {
    /// Width of the q,p channels in concatenations (0 without conformation).
    pub fn qp_width(&self) -> usize {
        match self.conf_mode {
            ConfMode::WithoutConf => 0,
            _ => 2 * self.d_f,
        }
    }
}

/// Checkpoint names and shapes for all fingerprint parameters.
pub fn param_spec(cfg: &FpConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden;
    let r = cfg.qp_width();
    let mut spec = vec![
        (
            "fp.atom_mlp.w1".into(),
            vec![crate::chemgraph::ATOM_FEATURES, h],
        ),
        ("fp.atom_mlp.b1".into(), vec![h]),
        ("fp.atom_mlp.w2".into(), vec![h, h]),
        ("fp.atom_mlp.b2".into(), vec![h]),
        (
            "fp.bond_mlp.w1".into(),
            vec![crate::chemgraph::BOND_FEATURES, h],
        ),
        ("fp.bond_mlp.b1".into(), vec![h]),
        ("fp.bond_mlp.w2".into(), vec![h, h]),
        ("fp.bond_mlp.b2".into(), vec![h]),
    ];
    for l in 0..cfg.layers {
        spec.push((format!("fp.layer{l}.w_eps"), vec![h + r, 1]));
        spec.push((format!("fp.layer{l}.w_msg"), vec![2 * h + r, h]));
    }
    spec.push(("fp.gru_local.wx".into(), vec![h, 3 * h]));
    spec.push(("fp.gru_local.wh".into(), vec![h, 3 * h]));
    spec.push(("fp.gru_local.b".into(), vec![3 * h]));
    for m in 0..cfg.readout_passes {
        spec.push((format!("fp.readout{m}.w_eta"), vec![2 * h + r, 1]));
        spec.push((format!("fp.readout{m}.w_s"), vec![h + r, h]));
    }
    spec.push(("fp.gru_global.wx".into(), vec![h, 3 * h]));
    spec.push(("fp.gru_global.wh".into(), vec![h, 3 * h]));
    spec.push(("fp.gru_global.b".into(), vec![3 * h]));
    spec.push(("fp.head.w".into(), vec![h, cfg.tasks]));
    spec.push(("fp.head.b".into(), vec![cfg.tasks]));
    if cfg.conf_mode == ConfMode::RealConf {
        for lift in ["q", "p"] {
            spec.push((format!("fp.lift_{lift}.w1"), vec![3, cfg.d_f]));
            spec.push((format!("fp.lift_{lift}.b1"), vec![cfg.d_f]));
            spec.push((format!("fp.lift_{lift}.w2"), vec![cfg.d_f, cfg.d_f]));
            spec.push((format!("fp.lift_{lift}.b2"), vec![cfg.d_f]));
        }
    }
    spec
}

fn mlp2<'t>(tape: &'t Tape, x: Var<'t>, params: &ParamSet, prefix: &str) -> Var<'t> {
    let w1 = tape.bind(params, &format!("{prefix}.w1"));
    let b1 = tape.bind(params, &format!("{prefix}.b1"));
    let w2 = tape.bind(params, &format!("{prefix}.w2"));
    let b2 = tape.bind(params, &format!("{prefix}.b2"));
    x.matmul(w1).add_row(b1).relu().matmul(w2).add_row(b2)
}

/// Shared GRU cell operating on row-batched states.
struct GruCell<'t> {
    wx: Var<'t>,
    wh: Var<'t>,
    b: Var<'t>,
    hidden: usize,
}

impl<'t> GruCell<'t> {
    fn bind(tape: &'t Tape, params: &ParamSet, prefix: &str, hidden: usize) -> Self {
        GruCell {
            wx: tape.bind(params, &format!("{prefix}.wx")),
            wh: tape.bind(params, &format!("{prefix}.wh")),
            b: tape.bind(params, &format!("{prefix}.b")),
            hidden,
        }
    }

    /// `h' = (1 - z) h + z tanh(x W_xn + (r h) W_hn + b_n)`.
    fn step(&self, h: Var<'t>, x: Var<'t>) -> Var<'t> {
        let d = self.hidden;
        let xw = x.matmul(self.wx);
        let r = xw
            .slice(1, 0, d)
            .add(h.matmul(self.wh.slice(1, 0, d)))
            .add_row(self.b.slice(0, 0, d))
            .sigmoid();
        let z = xw
            .slice(1, d, 2 * d)
            .add(h.matmul(self.wh.slice(1, d, 2 * d)))
            .add_row(self.b.slice(0, d, 2 * d))
            .sigmoid();
        let n = xw
            .slice(1, 2 * d, 3 * d)
            .add(r.mul(h).matmul(self.wh.slice(1, 2 * d, 3 * d)))
            .add_row(self.b.slice(0, 2 * d, 3 * d))
            .tanh();
        h.sub(z.mul(h)).add(z.mul(n))
    }
}

/// `h0_i = MLP(v_i)` and `f_ij = MLP(e_ij)`.
pub fn init_states<'t>(
    tape: &'t Tape,
    mol: &MoleculeGraph,
    params: &ParamSet,
) -> (Var<'t>, Option<Var<'t>>) {
    let x = tape.constant(Tensor::from_rows(&mol.atom_features));
    let h0 = mlp2(tape, x, params, "fp.atom_mlp");
    let f_bond = if mol.bond_count() > 0 {
        let e = tape.constant(Tensor::from_rows(&mol.bond_features));
        Some(mlp2(tape, e, params, "fp.bond_mlp"))
    } else {
        None
    };
    (h0, f_bond)
}

struct EdgeIndex {
    /// Flat (i*n + j) positions of the directed edges.
    positions: Vec<usize>,
    /// Bond index per directed edge (each bond appears twice).
    bond_of_edge: Vec<usize>,
    /// 1 where the atom has at least one neighbor.
    connected: Vec<f64>,
    edge_mask: Tensor,
    neg_inf_off_edges: Tensor,
}

fn edge_index(mol: &MoleculeGraph) -> EdgeIndex {
    let n = mol.atom_count();
    let mut positions = Vec::with_capacity(2 * mol.bond_count());
    let mut bond_of_edge = Vec::with_capacity(2 * mol.bond_count());
    let mut connected = vec![0.0; n];
    let mut mask = vec![0.0; n * n];
    for (bi, bond) in mol.bonds.iter().enumerate() {
        let (i, j) = bond.endpoints;
        for (a, b) in [(i, j), (j, i)] {
            positions.push(a * n + b);
            bond_of_edge.push(bi);
            mask[a * n + b] = 1.0;
        }
        connected[i] = 1.0;
        connected[j] = 1.0;
    }
    let neg: Vec<f64> = mask.iter().map(|&m| (1.0 - m) * -1e30).collect();
    EdgeIndex {
        positions,
        bond_of_edge,
        connected,
        edge_mask: Tensor::matrix(n, n, mask),
        neg_inf_off_edges: Tensor::matrix(n, n, neg),
    }
}

/// One attentive message-passing layer: softmax attention over neighbors from
/// `eps_ij = w_eps . (f_ij ++ r_ij)`, messages
/// `m_i = sum_j alpha_ij W_msg [h_i ++ r_ij ++ h_j]`, GRU update. Atoms with
/// no neighbors keep their state unchanged.
#[allow(clippy::too_many_arguments)]
pub fn mp_layer<'t>(
    tape: &'t Tape,
    mol: &MoleculeGraph,
    h: Var<'t>,
    f_bond: Option<Var<'t>>,
    qp: Option<Var<'t>>,
    params: &ParamSet,
    cfg: &FpConfig,
    layer: usize,
) -> Var<'t> {
    let n = mol.atom_count();
    if mol.bond_count() == 0 {
        return h;
    }
    let f_bond = f_bond.expect("bonded molecule carries bond states");
    let hidden = cfg.hidden;
    let r = cfg.qp_width();
    let w_eps = tape.bind(params, &format!("fp.layer{layer}.w_eps"));
    let w_msg = tape.bind(params, &format!("fp.layer{layer}.w_msg"));
    let edges = edge_index(mol);

    // Attention energies, assembled densely: the bond-feature part is
    // symmetric per bond; the geometry part is u_i - u_j (antisymmetric).
    let eps_bond = f_bond.matmul(w_eps.slice(0, 0, hidden)); // B x 1
    let eps_dir = eps_bond
        .gather_rows(&edges.bond_of_edge)
        .reshape(vec![edges.positions.len()])
        .scatter_flat(vec![n, n], &edges.positions);
    let mut energies = eps_dir;
    if let Some(qp) = qp {
        let u = qp
            .matmul(w_eps.slice(0, hidden, hidden + r))
            .reshape(vec![n]);
        let ones = tape.constant(Tensor::full(vec![n], 1.0));
        let geom = u.outer(ones).sub(ones.outer(u));
        energies = energies.add(geom.mul(tape.constant(edges.edge_mask.clone())));
    }
    if cfg.leaky_attention {
        // leaky_relu(0.2) = relu(x) - 0.2 relu(-x); off-edge zeros stay zero.
        energies = energies.relu().sub(energies.neg().relu().scale(0.2));
    }
    let alpha = energies
        .add(tape.constant(edges.neg_inf_off_edges.clone()))
        .softmax(1)
        .mul(tape.constant(edges.edge_mask.clone()));

    // Messages via the block decomposition of W_msg over [h_i ++ r_ij ++ h_j].
    let row_sums = alpha.sum_axis(1);
    let w_self = w_msg.slice(0, 0, hidden);
    let w_nbr = w_msg.slice(0, hidden + r, 2 * hidden + r);
    let mut message = h
        .matmul(w_self)
        .scale_rows(row_sums)
        .add(alpha.matmul(h).matmul(w_nbr));
    if let Some(qp) = qp {
        let w_rel = w_msg.slice(0, hidden, hidden + r);
        let rel = qp.scale_rows(row_sums).sub(alpha.matmul(qp));
        message = message.add(rel.matmul(w_rel));
    }

    let gru = GruCell::bind(tape, params, "fp.gru_local", hidden);
    let updated = gru.step(h, message);

    // Isolated atoms bypass the update.
    let conn = tape.constant(Tensor::vector(edges.connected.clone()));
    let not_conn = tape.constant(Tensor::vector(
        edges.connected.iter().map(|c| 1.0 - c).collect(),
    ));
    updated.scale_rows(conn).add(h.scale_rows(not_conn))
}

/// Global attentive readout over a meta node connected to all atoms.
/// `M = 0` degenerates to mean pooling.
pub fn readout<'t>(
    tape: &'t Tape,
    h_final: Var<'t>,
    qp: Option<Var<'t>>,
    params: &ParamSet,
    cfg: &FpConfig,
) -> Var<'t> {
    let n = h_final.value().rows();
    let hidden = cfg.hidden;
    let r = cfg.qp_width();
    let mean_row = tape.constant(Tensor::matrix(1, n, vec![1.0 / n as f64; n]));
    let mut h_g = mean_row.matmul(h_final); // 1 x hidden

    let atom_side = match qp {
        Some(qp) => tape.concat(1, &[qp, h_final]),
        None => h_final,
    };
    let gru = GruCell::bind(tape, params, "fp.gru_global", hidden);
    let ones = tape.constant(Tensor::full(vec![n], 1.0));
    for m in 0..cfg.readout_passes {
        let w_eta = tape.bind(params, &format!("fp.readout{m}.w_eta"));
        let w_s = tape.bind(params, &format!("fp.readout{m}.w_s"));
        // eta_i = w_eta . [h_g ++ qp_i ++ h_i]; the h_g part is shared by all
        // atoms (softmax-invariant, kept for fidelity to the layout).
        let shared = h_g.matmul(w_eta.slice(0, 0, hidden)).reshape(vec![1]);
        let per_atom = atom_side
            .matmul(w_eta.slice(0, hidden, 2 * hidden + r))
            .reshape(vec![n]);
        let eta = per_atom.add(shared.outer(ones).reshape(vec![n]));
        let beta = eta.softmax(0);
        let s_g = beta.reshape(vec![1, n]).matmul(atom_side).matmul(w_s);
        h_g = gru.step(h_g, s_g);
    }
    h_g
}

/// Lift real 3D coordinates into `d_f`-wide pseudo-positions; pseudo-momentum
/// comes from lifting the zero vector.
pub fn lift_real_conformation<'t>(
    tape: &'t Tape,
    coords: &Tensor,
    params: &ParamSet,
) -> (Var<'t>, Var<'t>) {
    let n = coords.rows();
    let c = tape.constant(coords.clone());
    let zeros = tape.constant(Tensor::zeros(vec![n, 3]));
    let q = mlp2(tape, c, params, "fp.lift_q");
    let p = mlp2(tape, zeros, params, "fp.lift_p");
    (q, p)
}

/// Full fingerprint forward pass. `conf` carries the (q, p) pair for
/// [`ConfMode::Engine`] / [`ConfMode::RealConf`] and must be `None` for
/// [`ConfMode::WithoutConf`].
pub fn fingerprint_forward<'t>(
    tape: &'t Tape,
    mol: &MoleculeGraph,
    conf: Option<(Var<'t>, Var<'t>)>,
    params: &ParamSet,
    cfg: &FpConfig,
) -> Var<'t> {
    let qp = match (cfg.conf_mode, conf) {
        (ConfMode::WithoutConf, None) => None,
        (ConfMode::WithoutConf, Some(_)) => {
            panic!("conf provided for the geometry-free variant")
        }
        (_, Some((q, p))) => Some(tape.concat(1, &[q, p])),
        (mode, None) => panic!("{mode:?} requires (q, p) inputs"),
    };
    let (mut h, f_bond) = init_states(tape, mol, params);
    for l in 0..cfg.layers {
        h = mp_layer(tape, mol, h, f_bond, qp, params, cfg, l);
    }
    readout(tape, h, qp, params, cfg)
}

/// Linear property head on a fingerprint; raw outputs (classification runs
/// them through a sigmoid at loss/metric time).
pub fn predict<'t>(tape: &'t Tape, fingerprint: Var<'t>, params: &ParamSet) -> Var<'t> {
    let w = tape.bind(params, "fp.head.w");
    let b = tape.bind(params, "fp.head.b");
    fingerprint.matmul(w).add_row(b)
}
