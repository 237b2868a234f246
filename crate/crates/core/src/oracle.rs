//! Named gradient checks over every differentiable operation, from core ops
//! to the full pipelines. The CLI `gradcheck` command and the acceptance
//! suite both run this list.

use crate::chemgraph::parse_smiles;
use crate::diffmath::{grad_check, init_params, scalar_fn, ParamSet, Rng, Tape, Tensor};
use crate::encoder::{self, EncoderConfig};
use crate::engine::{self, MassVectors};
use crate::fingerprint::{self, ConfMode, FpConfig};
use crate::geoloss::{self, AlignWeights};
use crate::trainer::{Stage, TrainConfig};

#[derive(Clone, Debug)]
pub struct OracleCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub threshold: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

fn rand_matrix(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::matrix(
        r,
        c,
        (0..r * c).map(|_| rng.uniform_in(-scale, scale)).collect(),
    )
}

/// Run every check; errors inside a check surface as an infinite error so the
/// caller still gets a full report.
pub fn run_gradient_oracle(seed: u64) -> Vec<OracleCheck> {
    let mut rng = Rng::new(seed);
    let mut checks = Vec::new();
    let mut push = |name: &'static str, result: Result<f64, String>, threshold: f64| {
        let err = result.unwrap_or(f64::INFINITY);
        checks.push(OracleCheck {
            name,
            max_rel_error: err,
            threshold,
        });
    };

    push("core-ops", core_ops(&mut rng), 1e-5);
    push("svd3", svd3(&mut rng), 1e-5);
    push("engine-energies", energies(&mut rng), 1e-4);
    push(
        "engine-forces-vs-potential",
        forces_vs_potential(&mut rng),
        1e-6,
    );
    push("geometric-losses", losses(&mut rng), 1e-4);
    push("stage1-pipeline", stage1_pipeline(), 1e-4);
    push("stage2-pipeline", stage2_pipeline(), 1e-4);
    checks
}

fn core_ops(rng: &mut Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut params = ParamSet::new();
        params.insert("a", rand_positive(rng, 3, 4));
        params.insert("b", rand_positive(rng, 4, 3));
        params.insert(
            "v",
            Tensor::vector((0..3).map(|_| rng.uniform_in(0.3, 1.0)).collect()),
        );
        let f = scalar_fn(|tape, p| {
            let a = tape.bind(p, "a");
            let b = tape.bind(p, "b");
            let v = tape.bind(p, "v");
            let m = a.matmul(b);
            let s = m
                .sigmoid()
                .sum()
                .add(m.tanh().mean())
                .add(m.relu().sum().scale(0.1))
                .add(m.exp().softmax(1).square().sum())
                .add(m.clamp_min(0.4).log().sum().scale(0.05))
                .add(m.sqrt().sum().scale(0.1))
                .add(m.recip().sum().scale(0.01))
                .add(m.t().slice(1, 0, 2).sum())
                .add(m.scale_rows(v).scale_cols(v).sum_axis(0).dot(v))
                .add(v.outer(v).sum())
                .add(m.add_row(v).softmax(0).square().sum())
                .add(m.gather_rows(&[2, 0]).mean())
                .add(tape.concat(1, &[m, m.neg()]).square().mean());
            s.sub(m.sum().scale(0.3)).add_scalar(1.0)
        });
        worst = worst.max(grad_check(f, &params, 1e-5).map_err(|e| e.to_string())?);
    }
    Ok(worst)
}

fn rand_positive(rng: &mut Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform_in(0.2, 1.5)).collect())
}

fn svd3(rng: &mut Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 10 {
        let m = rand_matrix(rng, 3, 3, 1.5);
        let (_, s, _) = crate::diffmath::svd3_decompose(&m).map_err(|e| e.to_string())?;
        let sd = s.data();
        let gap = (sd[0] - sd[1]).min(sd[1] - sd[2]);
        if gap < 0.05 {
            continue; // straight-through region; the oracle does not apply
        }
        done += 1;
        let mut params = ParamSet::new();
        params.insert("m", m);
        let f = scalar_fn(|tape, p| {
            let m = tape.bind(p, "m");
            let (u, s, v) = m.svd3().unwrap();
            let su = u
                .square()
                .scale_rows(tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])))
                .sum();
            let ss = s
                .mul(s)
                .dot(tape.constant(Tensor::vector(vec![0.5, 1.0, 2.0])));
            let sv = v.slice(1, 0, 1).square().sum();
            su.add(ss).add(sv)
        });
        worst = worst.max(grad_check(f, &params, 1e-5).map_err(|e| e.to_string())?);
    }
    Ok(worst)
}

fn energies(rng: &mut Rng) -> Result<f64, String> {
    let d = 4;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let mut params = ParamSet::new();
        params.insert("eng.w_t", rand_matrix(rng, d, d, 0.8));
        params.insert("eng.w_phi", rand_matrix(rng, d, d, 0.8));
        params.insert("eng.w_u", rand_matrix(rng, d, d, 0.6));
        params.insert("eng.w_trans", rand_matrix(rng, d, 3, 0.8));
        params.insert("q", rand_matrix(rng, 4, d, 1.2));
        params.insert("p", rand_matrix(rng, 4, d, 0.8));
        let f = scalar_fn(|tape, pr| {
            let b = engine::bind(tape, pr);
            let masses = MassVectors::new(tape, &[12.011, 15.999, 14.007, 18.998]);
            let q = tape.bind(pr, "q");
            let p = tape.bind(pr, "p");
            let kin = engine::kinetic_terms(p, b.w_t, &masses).sum();
            let dis = engine::dissipation_terms(p, b.w_phi, &masses).sum();
            let pot = engine::potential(tape, q, &b, 1e-6);
            kin.add(dis).add(pot)
        });
        worst = worst.max(grad_check(f, &params, 1e-5).map_err(|e| e.to_string())?);
    }
    Ok(worst)
}

/// Closed-form forces against central differences of the scalar potential,
/// over 20 random instances (direct comparison, no tape in the middle).
fn forces_vs_potential(rng: &mut Rng) -> Result<f64, String> {
    let d = 5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut params = ParamSet::new();
        params.insert("eng.w_t", Tensor::eye(d));
        params.insert("eng.w_phi", Tensor::zeros(vec![d, d]));
        params.insert("eng.w_u", rand_matrix(rng, d, d, 0.6));
        params.insert("eng.w_trans", Tensor::zeros(vec![d, 3]));
        let q0 = rand_matrix(rng, 4, d, 1.0);

        let analytic = {
            let tape = Tape::new();
            let b = engine::bind(&tape, &params);
            let masses = MassVectors::new(&tape, &[50.0; 4]);
            let qv = tape.constant(q0.clone());
            let pv = tape.constant(Tensor::zeros(vec![4, d]));
            engine::forces(&tape, qv, pv, &b, &masses, 1e-6)
                .dh_dq
                .value()
        };
        let eval = |q: &Tensor| -> f64 {
            let tape = Tape::new();
            let b = engine::bind(&tape, &params);
            let qv = tape.constant(q.clone());
            engine::potential(&tape, qv, &b, 1e-6).value().value()
        };
        let eps = 1e-6;
        for k in 0..q0.len() {
            let x = q0.data()[k];
            let fd = (eval(&q0.with_element(k, x + eps)) - eval(&q0.with_element(k, x - eps)))
                / (2.0 * eps);
            let a = analytic.data()[k];
            let rel = (a - fd).abs() / (1e-8f64).max(a.abs() + fd.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn losses(rng: &mut Rng) -> Result<f64, String> {
    let mol = parse_smiles("CC(=O)O").map_err(|e| e.to_string())?;
    let masses = mol.masses();
    let a3 = geoloss::matrix_power(&geoloss::normalized_simple_adjacency(&mol), 3);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let q_ref = rand_matrix(rng, 4, 3, 2.0);
        let mut params = ParamSet::new();
        params.insert("q_hat", rand_matrix(rng, 4, 3, 2.0));
        let f = scalar_fn(|tape, p| {
            let qh = tape.bind(p, "q_hat");
            let k = geoloss::k_rmsd(tape, qh, &q_ref, &masses, AlignWeights::Mass).unwrap();
            let d = geoloss::dist_loss(tape, qh, &q_ref);
            let a = geoloss::adj_k_loss(tape, qh, &q_ref, &a3);
            k.add(d).add(a)
        });
        worst = worst.max(grad_check(f, &params, 1e-4).map_err(|e| e.to_string())?);
    }
    Ok(worst)
}

fn stage1_pipeline() -> Result<f64, String> {
    let mol = parse_smiles("CC(=O)CO").map_err(|e| e.to_string())?;
    let mut rng = Rng::new(4242);
    let q_ref = rand_matrix(&mut rng, mol.atom_count(), 3, 1.5);
    let masses = mol.masses();
    let a3 = geoloss::matrix_power(&geoloss::normalized_simple_adjacency(&mol), 3);
    let enc_cfg = EncoderConfig {
        d_f: 4,
        gcn_widths: vec![6],
        bond_hidden: 6,
        use_lstm: true,
    };
    let eng_cfg = engine::EngineConfig {
        d_f: 4,
        eta: 0.03,
        t_steps: 3,
        eps_r: 1e-6,
    };
    let mut spec = encoder::param_spec(&enc_cfg);
    spec.extend(engine::param_spec(4));
    let params = init_params(&spec, 31);
    let f = scalar_fn(|tape, p| {
        let enc = encoder::encode_initial(tape, &mol, p, &enc_cfg).unwrap();
        let b = engine::bind(tape, p);
        let mv = MassVectors::new(tape, &masses);
        let traj = engine::rollout(tape, enc.q0, enc.p0, &b, &mv, &eng_cfg).unwrap();
        let q3 = engine::project3d(traj.final_q(), b.w_trans);
        geoloss::combined_loss(tape, q3, &q_ref, &masses, &a3, 1.0, AlignWeights::Mass).unwrap()
    });
    grad_check(f, &params, 1e-4).map_err(|e| e.to_string())
}

/// Property loss through the fingerprint, back through (q, p) into the
/// engine and encoder parameters, on a 5-atom molecule.
fn stage2_pipeline() -> Result<f64, String> {
    let mol = parse_smiles("CC(=O)CO").map_err(|e| e.to_string())?;
    let masses = mol.masses();
    let cfg = TrainConfig {
        stage: Stage::Fingerprint,
        d_f: 4,
        t_steps: 2,
        gcn_widths: vec![6],
        bond_hidden: 6,
        hidden: 6,
        layers: 1,
        readout_passes: 1,
        conf_mode: ConfMode::Engine,
        ..TrainConfig::default()
    };
    let fp_cfg = FpConfig {
        hidden: 6,
        layers: 1,
        readout_passes: 1,
        d_f: 4,
        conf_mode: ConfMode::Engine,
        tasks: 1,
        leaky_attention: false,
    };
    let mut spec = encoder::param_spec(&cfg.encoder_config());
    spec.extend(engine::param_spec(4));
    spec.extend(fingerprint::param_spec(&fp_cfg));
    let params = init_params(&spec, 77);
    let enc_cfg = cfg.encoder_config();
    let eng_cfg = cfg.engine_config();
    let f = scalar_fn(|tape, p| {
        let enc = encoder::encode_initial(tape, &mol, p, &enc_cfg).unwrap();
        let b = engine::bind(tape, p);
        let mv = MassVectors::new(tape, &masses);
        let traj = engine::rollout(tape, enc.q0, enc.p0, &b, &mv, &eng_cfg).unwrap();
        let fp = fingerprint::fingerprint_forward(
            tape,
            &mol,
            Some((traj.final_q(), traj.final_p())),
            p,
            &fp_cfg,
        );
        let out = fingerprint::predict(tape, fp, p);
        out.sub(tape.constant(Tensor::matrix(1, 1, vec![0.7])))
            .square()
            .sum()
    });
    grad_check(f, &params, 1e-4).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_oracle_passes() {
        for check in run_gradient_oracle(11) {
            assert!(
                check.passed(),
                "{}: {} >= {}",
                check.name,
                check.max_rel_error,
                check.threshold
            );
        }
    }
}
