//! Initial implicit positions and momentums from the molecular graph.
//!
//! A learned bond-strength adjacency feeds two independent DenseNet-style GCN
//! stacks (one for positions, one for momentums). GCN outputs alone cannot
//! separate atoms with identical chemical environments (benzene carbons), so
//! an LSTM consumes the concatenated hidden layers in SMILES order and emits
//! unique per-atom vectors.

use thiserror::Error;

use crate::chemgraph::MoleculeGraph;
use crate::diffmath::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(
        "degenerate encoder output: two q0 rows coincide (min pairwise distance {0:.3e}); re-init"
    )]
    DegenerateOutput(f64),
}

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    /// Width of the implicit position/momentum space.
    pub d_f: usize,
    /// Hidden widths of the GCN stack (depth = len).
    pub gcn_widths: Vec<usize>,
    /// Hidden width of the bond-strength MLP.
    pub bond_hidden: usize,
    /// `false` replaces the LSTM with a per-atom linear map (ablation).
    pub use_lstm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_f: 32,
            gcn_widths: vec![64, 64, 64],
            bond_hidden: 64,
            use_lstm: true,
        }
    }
}

impl EncoderConfig {
    /// Width of the DenseNet concatenation fed to the sequence encoder.
    pub fn concat_width(&self) -> usize {
        crate::chemgraph::ATOM_FEATURES + self.gcn_widths.iter().sum::<usize>()
    }
}

/// Checkpoint names and shapes for all encoder parameters.
pub fn param_spec(cfg: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let mut spec = Vec::new();
    let tuple_width = 2 * crate::chemgraph::ATOM_FEATURES + crate::chemgraph::BOND_FEATURES;
    spec.push(("enc.bond.w1".into(), vec![tuple_width, cfg.bond_hidden]));
    spec.push(("enc.bond.b1".into(), vec![cfg.bond_hidden]));
    spec.push(("enc.bond.w2".into(), vec![cfg.bond_hidden, 1]));
    spec.push(("enc.bond.b2".into(), vec![1]));
    for stack in ["q", "p"] {
        let mut in_w = crate::chemgraph::ATOM_FEATURES;
        for (l, &w) in cfg.gcn_widths.iter().enumerate() {
            spec.push((format!("enc.gcn_{stack}.w{l}"), vec![in_w, w]));
            in_w = w;
        }
        if cfg.use_lstm {
            spec.push((
                format!("enc.lstm_{stack}.wx"),
                vec![cfg.concat_width(), 4 * cfg.d_f],
            ));
            spec.push((format!("enc.lstm_{stack}.wh"), vec![cfg.d_f, 4 * cfg.d_f]));
            spec.push((format!("enc.lstm_{stack}.b"), vec![4 * cfg.d_f]));
        } else {
            spec.push((
                format!("enc.lin_{stack}.w"),
                vec![cfg.concat_width(), cfg.d_f],
            ));
            spec.push((format!("enc.lin_{stack}.b"), vec![cfg.d_f]));
        }
    }
    spec
}

pub struct EncoderOutput<'t> {
    pub q0: Var<'t>,
    pub p0: Var<'t>,
    /// Learned bond-strength adjacency (symmetric, zero off-bond).
    pub adjacency: Var<'t>,
    /// Normalized adjacency actually fed to the GCN stacks.
    pub a_hat: Var<'t>,
}

/// Learned adjacency: `A_ij = sigmoid(MLP(v_i ++ e_ij ++ v_j))` on bonded
/// pairs, zero elsewhere. The atom-bond-atom tuple is order-sensitive, so
/// both orientations are evaluated and averaged, making `A` exactly
/// symmetric.
pub fn bond_strength<'t>(tape: &'t Tape, mol: &MoleculeGraph, params: &ParamSet) -> Var<'t> {
    let n = mol.atom_count();
    let tuple_width = 2 * crate::chemgraph::ATOM_FEATURES + crate::chemgraph::BOND_FEATURES;
    let mut rows: Vec<f64> = Vec::with_capacity(2 * mol.bond_count() * tuple_width);
    let mut positions: Vec<usize> = Vec::with_capacity(2 * mol.bond_count());
    for (bi, bond) in mol.bonds.iter().enumerate() {
        let (i, j) = bond.endpoints;
        for (a, b) in [(i, j), (j, i)] {
            rows.extend_from_slice(&mol.atom_features[a]);
            rows.extend_from_slice(&mol.bond_features[bi]);
            rows.extend_from_slice(&mol.atom_features[b]);
            positions.push(a * n + b);
        }
    }
    let pairs = positions.len();
    if pairs == 0 {
        return tape.constant(Tensor::zeros(vec![n, n]));
    }
    let tuples = tape.constant(Tensor::matrix(pairs, tuple_width, rows));
    let w1 = tape.bind(params, "enc.bond.w1");
    let b1 = tape.bind(params, "enc.bond.b1");
    let w2 = tape.bind(params, "enc.bond.w2");
    let b2 = tape.bind(params, "enc.bond.b2");
    let hidden = tuples.matmul(w1).add_row(b1).relu();
    let logits = hidden.matmul(w2).add_row(b2).sigmoid();
    let directed = logits
        .reshape(vec![pairs])
        .scatter_flat(vec![n, n], &positions);
    directed.add(directed.t()).scale(0.5)
}

/// `D^{-1/2} (A + c I) D^{-1/2}` where `c` is the molecule's mean bond
/// strength (1 when there are no bonds), so isolated atoms keep a finite
/// normalization.
pub fn normalize_adjacency<'t>(tape: &'t Tape, adjacency: Var<'t>, bond_count: usize) -> Var<'t> {
    let n = adjacency.value().rows();
    let diag_positions: Vec<usize> = (0..n).map(|i| i * n + i).collect();
    let self_loop = if bond_count > 0 {
        let mean = adjacency.sum().scale(1.0 / (2 * bond_count) as f64);
        let ones = tape.constant(Tensor::full(vec![n], 1.0));
        mean.reshape(vec![1]).outer(ones).reshape(vec![n])
    } else {
        tape.constant(Tensor::full(vec![n], 1.0))
    };
    let with_loops = adjacency.add(self_loop.scatter_flat(vec![n, n], &diag_positions));
    let d_inv_sqrt = with_loops.sum_axis(1).sqrt().recip();
    with_loops.scale_rows(d_inv_sqrt).scale_cols(d_inv_sqrt)
}

/// GCN stack returning every hidden layer `[f0 .. fL]` with `f0 = X` and
/// `f(l+1) = relu(A_hat f(l) W(l))`, for DenseNet-style concatenation.
pub fn dense_gcn<'t>(x: Var<'t>, a_hat: Var<'t>, weights: &[Var<'t>]) -> Vec<Var<'t>> {
    assert!(!weights.is_empty(), "dense_gcn needs at least one layer");
    let mut layers = vec![x];
    for &w in weights {
        let prev = *layers.last().unwrap();
        layers.push(a_hat.matmul(prev).matmul(w).relu());
    }
    layers
}

struct LstmCell<'t> {
    wx: Var<'t>,
    wh: Var<'t>,
    b: Var<'t>,
    hidden: usize,
}

impl<'t> LstmCell<'t> {
    fn bind(tape: &'t Tape, params: &ParamSet, prefix: &str, hidden: usize) -> Self {
        LstmCell {
            wx: tape.bind(params, &format!("{prefix}.wx")),
            wh: tape.bind(params, &format!("{prefix}.wh")),
            b: tape.bind(params, &format!("{prefix}.b")),
            hidden,
        }
    }

    fn step(&self, x: Var<'t>, h: Var<'t>, c: Var<'t>) -> (Var<'t>, Var<'t>) {
        let d = self.hidden;
        let z = x.matmul(self.wx).add(h.matmul(self.wh)).add_row(self.b);
        let i = z.slice(1, 0, d).sigmoid();
        let f = z.slice(1, d, 2 * d).sigmoid();
        let g = z.slice(1, 2 * d, 3 * d).tanh();
        let o = z.slice(1, 3 * d, 4 * d).sigmoid();
        let c_next = f.mul(c).add(i.mul(g));
        let h_next = o.mul(c_next.tanh());
        (h_next, c_next)
    }
}

/// Run one GCN stack + sequence encoder, producing an `n x d_f` matrix in
/// atom order.
fn encode_stack<'t>(
    tape: &'t Tape,
    mol: &MoleculeGraph,
    params: &ParamSet,
    cfg: &EncoderConfig,
    stack: &str,
    x: Var<'t>,
    a_hat: Var<'t>,
) -> Var<'t> {
    let weights: Vec<Var<'t>> = (0..cfg.gcn_widths.len())
        .map(|l| tape.bind(params, &format!("enc.gcn_{stack}.w{l}")))
        .collect();
    let layers = dense_gcn(x, a_hat, &weights);
    let dense = tape.concat(1, &layers);

    if !cfg.use_lstm {
        let w = tape.bind(params, &format!("enc.lin_{stack}.w"));
        let b = tape.bind(params, &format!("enc.lin_{stack}.b"));
        return dense.matmul(w).add_row(b);
    }

    let cell = LstmCell::bind(tape, params, &format!("enc.lstm_{stack}"), cfg.d_f);
    let mut h = tape.constant(Tensor::zeros(vec![1, cfg.d_f]));
    let mut c = tape.constant(Tensor::zeros(vec![1, cfg.d_f]));
    let mut outputs = Vec::with_capacity(mol.atom_count());
    for &atom in &mol.smiles_order {
        let x_t = dense.row(atom);
        let (h_next, c_next) = cell.step(x_t, h, c);
        h = h_next;
        c = c_next;
        outputs.push(h);
    }
    let stacked = tape.concat(0, &outputs);
    // Row k of `stacked` belongs to atom smiles_order[k]; restore atom order.
    stacked.gather_rows(&mol.smiles_order_inverse())
}

/// Encode a molecule into initial positions `q0` and momentums `p0`
/// (`n x d_f` each), fed in SMILES order so equivalent atoms still receive
/// unique outputs. Errors when two `q0` rows coincide within 1e-8.
pub fn encode_initial<'t>(
    tape: &'t Tape,
    mol: &MoleculeGraph,
    params: &ParamSet,
    cfg: &EncoderConfig,
) -> Result<EncoderOutput<'t>, EncoderError> {
    let adjacency = bond_strength(tape, mol, params);
    let a_hat = normalize_adjacency(tape, adjacency, mol.bond_count());
    let x = tape.constant(Tensor::from_rows(&mol.atom_features));
    let q0 = encode_stack(tape, mol, params, cfg, "q", x, a_hat);
    let p0 = encode_stack(tape, mol, params, cfg, "p", x, a_hat);

    if cfg.use_lstm {
        let min_dist = min_pairwise_distance(&q0.value());
        if mol.atom_count() > 1 && min_dist <= 1e-8 {
            return Err(EncoderError::DegenerateOutput(min_dist));
        }
    }
    Ok(EncoderOutput {
        q0,
        p0,
        adjacency,
        a_hat,
    })
}

fn min_pairwise_distance(m: &Tensor) -> f64 {
    let n = m.rows();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = m
                .row_slice(i)
                .iter()
                .zip(m.row_slice(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            best = best.min(d);
        }
    }
    best
}
