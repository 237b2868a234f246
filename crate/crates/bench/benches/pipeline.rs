//! Hot-path benchmarks: parsing, encoding, rollout (by depth and width),
//! Kabsch-supervised losses, and the fingerprint forward pass.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hamforge_core::chemgraph::parse_smiles;
use hamforge_core::diffmath::{Tape, Tensor};
use hamforge_core::encoder;
use hamforge_core::engine::{self, MassVectors};
use hamforge_core::fingerprint::{self, ConfMode};
use hamforge_core::geoloss::{self, AlignWeights};
use hamforge_core::synth;
use hamforge_core::trainer::{self, ConformerRecord, TrainConfig};

const ASPIRIN: &str = "CC(=O)Oc1ccccc1C(=O)O";

fn bench_parse(c: &mut Criterion) {
    c.bench_function("parse_smiles/aspirin", |b| {
        b.iter(|| parse_smiles(std::hint::black_box(ASPIRIN)).unwrap())
    });
}

fn fixture() -> (Vec<ConformerRecord>, TrainConfig) {
    let mols = synth::generate(&synth::SynthConfig {
        molecules: 8,
        seed: 7,
        ..Default::default()
    });
    let records: Vec<ConformerRecord> = mols
        .into_iter()
        .map(|m| {
            let n = m.mol.atom_count();
            let flat: Vec<f64> = m.conformation.iter().flatten().copied().collect();
            ConformerRecord::new(m.mol, Tensor::matrix(n, 3, flat), 3)
        })
        .collect();
    let cfg = TrainConfig {
        eps_r: 0.2,
        ..TrainConfig::default()
    };
    (records, cfg)
}

fn bench_rollout_depth(c: &mut Criterion) {
    let (records, base) = fixture();
    let params = trainer::init_stage1_params(&base);
    let mut group = c.benchmark_group("rollout/depth");
    for t in [5usize, 10, 20, 30] {
        let cfg = TrainConfig {
            t_steps: t,
            ..base.clone()
        };
        group.bench_with_input(BenchmarkId::from_parameter(t), &cfg, |b, cfg| {
            b.iter(|| {
                let rec = &records[0];
                let tape = Tape::new();
                let enc = encoder::encode_initial(&tape, &rec.mol, &params, &cfg.encoder_config())
                    .unwrap();
                let bind = engine::bind(&tape, &params);
                let masses = MassVectors::new(&tape, &rec.masses);
                engine::rollout(&tape, enc.q0, enc.p0, &bind, &masses, &cfg.engine_config())
                    .unwrap()
                    .final_q()
                    .value()
            })
        });
    }
    group.finish();
}

fn bench_losses(c: &mut Criterion) {
    let (records, base) = fixture();
    let rec = &records[0];
    let params = trainer::init_stage1_params(&base);
    let tape = Tape::new();
    let enc = encoder::encode_initial(&tape, &rec.mol, &params, &base.encoder_config()).unwrap();
    let bind = engine::bind(&tape, &params);
    let masses = MassVectors::new(&tape, &rec.masses);
    let traj =
        engine::rollout(&tape, enc.q0, enc.p0, &bind, &masses, &base.engine_config()).unwrap();
    let q3 = engine::project3d(traj.final_q(), bind.w_trans).value();

    c.bench_function("kabsch_rmsd", |b| {
        b.iter(|| {
            let t = Tape::new();
            let qh = t.constant(q3.clone());
            geoloss::k_rmsd(&t, qh, &rec.reference, &rec.masses, AlignWeights::Mass)
                .unwrap()
                .value()
                .value()
        })
    });
}

fn bench_fingerprint(c: &mut Criterion) {
    let mol = parse_smiles(ASPIRIN).unwrap();
    let cfg = fingerprint::FpConfig {
        conf_mode: ConfMode::WithoutConf,
        ..Default::default()
    };
    let params = hamforge_core::diffmath::init_params(&fingerprint::param_spec(&cfg), 3);
    c.bench_function("fingerprint_forward/aspirin", |b| {
        b.iter(|| {
            let tape = Tape::new();
            fingerprint::fingerprint_forward(&tape, &mol, None, &params, &cfg).value()
        })
    });
}

criterion_group!(
    benches,
    bench_parse,
    bench_rollout_depth,
    bench_losses,
    bench_fingerprint
);
criterion_main!(benches);
