//! Two-stage training: the Hamiltonian engine learns conformations first,
//! then the fingerprint generator learns property targets (with the engine
//! frozen by default). Splits, target normalization, metrics, histories and
//! checkpoints all run off a single seed; batch gradients are reduced in
//! record order, so runs are bit-reproducible.

mod adam;
mod metrics;
mod split;

pub use adam::Adam;
pub use metrics::{
    compute_metrics, roc_auc, roc_auc_bruteforce, MetricError, Metrics, TaskMetrics,
};
pub use split::{split, SplitError, SplitSpec};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemgraph::MoleculeGraph;
use crate::diffmath::{init_params, GradSet, ParamSet, Rng, Tape, Tensor};
use crate::encoder::{self, EncoderConfig};
use crate::engine::{self, EngineConfig, MassVectors};
use crate::fingerprint::{self, ConfMode, FpConfig};
use crate::geoloss::{self, AlignWeights};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("all targets have zero variance on the training split")]
    ZeroVariance,
    #[error("no conformations available for engine training")]
    NoConformations,
    #[error("stage-1 checkpoint required for the conformation-aware variant")]
    CheckpointMissing,
    #[error("molecule {index}: {message}")]
    Molecule { index: usize, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Engine,
    Fingerprint,
}

/// Which metric the task uses; it also selects the training loss
/// (squared error for RMSE tasks, absolute error for MAE tasks,
/// cross-entropy for classification).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Rmse,
    Mae,
    Roc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the ADJ-k loss in the stage-1 objective.
    pub lambda: f64,
    pub eta: f64,
    pub t_steps: usize,
    pub d_f: usize,
    /// Fingerprint message-passing layers (L).
    pub layers: usize,
    /// Fingerprint readout passes (M).
    pub readout_passes: usize,
    pub hidden: usize,
    pub gcn_widths: Vec<usize>,
    pub bond_hidden: usize,
    pub use_lstm: bool,
    /// `false` zeroes and freezes the dissipation matrix.
    pub dissipation: bool,
    pub eps_r: f64,
    pub seed: u64,
    pub patience: usize,
    pub grad_clip: f64,
    /// Parallel workers for per-molecule batch work; 0 = available cores.
    pub workers: usize,
    pub task: TaskKind,
    pub conf_mode: ConfMode,
    pub finetune_engine: bool,
    pub mass_weighted_align: bool,
    pub adj_k: usize,
    pub leaky_attention: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Engine,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            lambda: 1.0,
            eta: 0.04,
            t_steps: 20,
            d_f: 32,
            layers: 2,
            readout_passes: 2,
            hidden: 200,
            gcn_widths: vec![64, 64, 64],
            bond_hidden: 64,
            use_lstm: true,
            dissipation: true,
            eps_r: 1e-6,
            seed: 17,
            patience: 8,
            grad_clip: 10.0,
            workers: 0,
            task: TaskKind::Rmse,
            conf_mode: ConfMode::Engine,
            finetune_engine: false,
            mass_weighted_align: true,
            adj_k: 3,
            leaky_attention: false,
        }
    }
}

impl TrainConfig {
    /// Stage-appropriate defaults (the fingerprint stage trains slower).
    pub fn default_for(stage: Stage) -> Self {
        let mut cfg = TrainConfig {
            stage,
            ..TrainConfig::default()
        };
        if stage == Stage::Fingerprint {
            cfg.learning_rate = 5e-4;
        }
        cfg
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            d_f: self.d_f,
            eta: self.eta,
            t_steps: self.t_steps,
            eps_r: self.eps_r,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_f: self.d_f,
            gcn_widths: self.gcn_widths.clone(),
            bond_hidden: self.bond_hidden,
            use_lstm: self.use_lstm,
        }
    }

    pub fn fp_config(&self, tasks: usize) -> FpConfig {
        FpConfig {
            hidden: self.hidden,
            layers: self.layers,
            readout_passes: self.readout_passes,
            d_f: self.d_f,
            conf_mode: self.conf_mode,
            tasks,
            leaky_attention: self.leaky_attention,
        }
    }

    pub fn align(&self) -> AlignWeights {
        if self.mass_weighted_align {
            AlignWeights::Mass
        } else {
            AlignWeights::Uniform
        }
    }
}

/// Per-task normalization statistics, computed on the training split only.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
    /// Tasks with zero variance are dropped (masked everywhere).
    pub kept: bool,
}

impl TargetStats {
    pub fn identity() -> Self {
        TargetStats {
            mean: 0.0,
            std: 1.0,
            kept: true,
        }
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// z-score statistics per task from the given (training) target rows.
/// Constant tasks are dropped with `kept = false`; if nothing survives the
/// result is [`TrainError::ZeroVariance`].
pub fn normalize_targets(
    train_targets: &[&Vec<Option<f64>>],
    tasks: usize,
) -> Result<Vec<TargetStats>, TrainError> {
    let mut stats = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let values: Vec<f64> = train_targets.iter().filter_map(|row| row[t]).collect();
        if values.is_empty() {
            stats.push(TargetStats {
                mean: 0.0,
                std: 1.0,
                kept: false,
            });
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 0.0 {
            stats.push(TargetStats {
                mean,
                std,
                kept: true,
            });
        } else {
            stats.push(TargetStats {
                mean,
                std: 1.0,
                kept: false,
            });
        }
    }
    if stats.iter().all(|s| !s.kept) {
        return Err(TrainError::ZeroVariance);
    }
    Ok(stats)
}

/// One molecule of the conformation-supervision dataset, with the constants
/// the loss needs precomputed.
#[derive(Clone, Debug)]
pub struct ConformerRecord {
    pub mol: MoleculeGraph,
    /// Reference heavy-atom conformation, n x 3 angstrom.
    pub reference: Tensor,
    pub masses: Vec<f64>,
    /// k-th power of the normalized simple adjacency for the ADJ-k loss.
    pub adj_k: Tensor,
}

impl ConformerRecord {
    pub fn new(mol: MoleculeGraph, reference: Tensor, adj_k_power: usize) -> Self {
        assert_eq!(reference.shape(), &[mol.atom_count(), 3]);
        let masses = mol.masses();
        let adj_k = geoloss::matrix_power(
            &geoloss::normalized_simple_adjacency(&mol),
            adj_k_power.max(1),
        );
        ConformerRecord {
            mol,
            reference,
            masses,
            adj_k,
        }
    }
}

/// History row; written to CSV. Engine-stage rows carry the two geometric
/// validation metrics, fingerprint-stage rows leave them empty.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_k_rmsd: Option<f64>,
    pub val_dist_loss: Option<f64>,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = String::from("epoch,train_loss,val_loss,val_k_rmsd,val_dist_loss\n");
    for rec in history {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.epoch,
            rec.train_loss,
            rec.val_loss,
            fmt(rec.val_k_rmsd),
            fmt(rec.val_dist_loss)
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

/// Full parameter name/shape list for the stage-1 model.
pub fn stage1_param_spec(cfg: &TrainConfig) -> Vec<(String, Vec<usize>)> {
    let mut spec = encoder::param_spec(&cfg.encoder_config());
    spec.extend(engine::param_spec(cfg.d_f));
    spec
}

/// Initialize stage-1 parameters; the no-dissipation ablation zeroes and
/// freezes the dissipation matrix.
///
/// The engine matrices get special scales: with plain Glorot the encoder's
/// initial positions sit deep in the repulsive core of the pair potential
/// (tiny learned distances), and the first epochs are spent recovering from
/// the resulting blow-up. Scaling the distance metric up and starting the
/// dissipation near the identity keeps a fresh rollout bounded.
pub fn init_stage1_params(cfg: &TrainConfig) -> ParamSet {
    let mut params = init_params(&stage1_param_spec(cfg), cfg.seed);
    let w_u = params.get("eng.w_u").clone();
    params.set(
        "eng.w_u",
        Tensor::new(
            w_u.shape().to_vec(),
            w_u.data().iter().map(|v| v * 8.0).collect(),
        ),
    );
    let w_trans = params.get("eng.w_trans").clone();
    params.set(
        "eng.w_trans",
        Tensor::new(
            w_trans.shape().to_vec(),
            w_trans.data().iter().map(|v| v * 0.3).collect(),
        ),
    );
    if !cfg.dissipation {
        params.set("eng.w_phi", Tensor::zeros(vec![cfg.d_f, cfg.d_f]));
        params.freeze("eng.w_phi");
    }
    params
}

struct MoleculeResult {
    loss: f64,
    grads: GradSet,
}

fn stage1_forward(
    rec: &ConformerRecord,
    params: &ParamSet,
    cfg: &TrainConfig,
    with_grads: bool,
) -> Result<(f64, Option<GradSet>, geoloss::LossReport), String> {
    let tape = Tape::new();
    let enc = encoder::encode_initial(&tape, &rec.mol, params, &cfg.encoder_config())
        .map_err(|e| e.to_string())?;
    let bind = engine::bind(&tape, params);
    let masses = MassVectors::new(&tape, &rec.masses);
    let traj = engine::rollout(&tape, enc.q0, enc.p0, &bind, &masses, &cfg.engine_config())
        .map_err(|e| e.to_string())?;
    let q3 = engine::project3d(traj.final_q(), bind.w_trans);
    let align = cfg.align();
    let k = geoloss::k_rmsd(&tape, q3, &rec.reference, &rec.masses, align)
        .map_err(|e| e.to_string())?;
    let adj = geoloss::adj_k_loss(&tape, q3, &rec.reference, &rec.adj_k);
    let dist = geoloss::dist_loss(&tape, q3, &rec.reference);
    let loss = if cfg.lambda == 0.0 {
        k
    } else {
        k.add(adj.scale(cfg.lambda))
    };
    let loss_value = loss.value().value();
    if !loss_value.is_finite() {
        return Err("non-finite loss".into());
    }
    let report = geoloss::LossReport {
        k_rmsd: k.value().value(),
        dist_loss: dist.value().value(),
        adj_k: adj.value().value(),
        combined: loss_value,
        lambda: cfg.lambda,
    };
    let grads = if with_grads {
        let g = tape.backward(loss).into_gradset();
        if !g.is_finite() {
            return Err("non-finite gradient".into());
        }
        Some(g)
    } else {
        None
    };
    Ok((loss_value, grads, report))
}

fn build_pool(workers: usize) -> rayon::ThreadPool {
    // 0 = one thread per available core (reductions are order-fixed, so the
    // worker count never changes results).
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
}

/// Mean loss and mean gradient over a batch; per-molecule work may run in
/// parallel but the reduction always folds in index order.
fn batch_gradients<F>(
    pool: &rayon::ThreadPool,
    indices: &[usize],
    forward: F,
) -> Result<(f64, GradSet), TrainError>
where
    F: Fn(usize) -> Result<MoleculeResult, TrainError> + Sync,
{
    use rayon::prelude::*;
    let results: Vec<Result<MoleculeResult, TrainError>> =
        pool.install(|| indices.par_iter().map(|&i| forward(i)).collect());
    let mut total_loss = 0.0;
    let mut grads = GradSet::new();
    let count = indices.len() as f64;
    for result in results {
        let r = result?;
        total_loss += r.loss;
        grads.add_scaled(&r.grads, 1.0 / count);
    }
    Ok((total_loss / count, grads))
}

pub struct EngineOutcome {
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Stage 1: minimize the combined geometric loss with Adam, early-stopping on
/// the validation loss; returns the best-validation parameters.
pub fn train_engine(
    records: &[ConformerRecord],
    cfg: &TrainConfig,
) -> Result<EngineOutcome, TrainError> {
    train_engine_from(records, init_stage1_params(cfg), cfg)
}

/// As [`train_engine`] but starting from the given parameters.
pub fn train_engine_from(
    records: &[ConformerRecord],
    mut params: ParamSet,
    cfg: &TrainConfig,
) -> Result<EngineOutcome, TrainError> {
    if records.is_empty() {
        return Err(TrainError::NoConformations);
    }
    let split = split(records.len(), cfg.seed)?;
    let pool = build_pool(cfg.workers);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = Rng::new(cfg.seed ^ 0x0bad_5eed);

    let mut history = Vec::new();
    let mut best: Option<(f64, ParamSet, usize)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order = split.train.clone();
        rng.shuffle(&mut order);
        let mut train_loss_acc = 0.0;
        let mut batches = 0.0f64;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (loss, grads) = batch_gradients(&pool, batch, |i| {
                let (loss, grads, _) = stage1_forward(&records[i], &params, cfg, true)
                    .map_err(|message| TrainError::Molecule { index: i, message })?;
                Ok(MoleculeResult {
                    loss,
                    grads: grads.unwrap(),
                })
            })?;
            adam.update(&mut params, &grads, cfg.grad_clip);
            train_loss_acc += loss;
            batches += 1.0;
        }

        let val = evaluate_engine(records, &split.val, &params, cfg)?;
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss_acc / batches.max(1.0),
            val_loss: val.combined,
            val_k_rmsd: Some(val.k_rmsd),
            val_dist_loss: Some(val.dist_loss),
        });

        let improved = best
            .as_ref()
            .map(|(b, _, _)| val.combined < *b)
            .unwrap_or(true);
        if improved {
            best = Some((val.combined, params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch");
    Ok(EngineOutcome {
        params: best_params,
        history,
        best_epoch,
    })
}

/// Mean geometric losses of the current engine over a subset of records.
pub fn evaluate_engine(
    records: &[ConformerRecord],
    indices: &[usize],
    params: &ParamSet,
    cfg: &TrainConfig,
) -> Result<geoloss::LossReport, TrainError> {
    assert!(!indices.is_empty(), "empty evaluation subset");
    let mut k = 0.0;
    let mut d = 0.0;
    let mut a = 0.0;
    let mut c = 0.0;
    for &i in indices {
        let (_, _, report) = stage1_forward(&records[i], params, cfg, false)
            .map_err(|message| TrainError::Molecule { index: i, message })?;
        k += report.k_rmsd;
        d += report.dist_loss;
        a += report.adj_k;
        c += report.combined;
    }
    let n = indices.len() as f64;
    Ok(geoloss::LossReport {
        k_rmsd: k / n,
        dist_loss: d / n,
        adj_k: a / n,
        combined: c / n,
        lambda: cfg.lambda,
    })
}

/// One molecule of the property dataset.
#[derive(Clone, Debug)]
pub struct FpRecord {
    pub mol: MoleculeGraph,
    pub targets: Vec<Option<f64>>,
    /// Real conformation, required by [`ConfMode::RealConf`] only.
    pub conformation: Option<Tensor>,
}

pub struct FpOutcome {
    /// Fingerprint parameters (plus engine parameters when finetuning).
    pub params: ParamSet,
    pub stats: Vec<TargetStats>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Run the (frozen) encoder + engine forward and return final (q, p) values.
fn engine_qp(
    mol: &MoleculeGraph,
    engine_params: &ParamSet,
    cfg: &TrainConfig,
) -> Result<(Tensor, Tensor), String> {
    let tape = Tape::new();
    let enc = encoder::encode_initial(&tape, mol, engine_params, &cfg.encoder_config())
        .map_err(|e| e.to_string())?;
    let bind = engine::bind(&tape, engine_params);
    let masses = MassVectors::new(&tape, &mol.masses());
    let traj = engine::rollout(&tape, enc.q0, enc.p0, &bind, &masses, &cfg.engine_config())
        .map_err(|e| e.to_string())?;
    Ok((traj.final_q().value(), traj.final_p().value()))
}

#[allow(clippy::too_many_arguments)]
fn stage2_forward(
    rec: &FpRecord,
    qp_cache: Option<&(Tensor, Tensor)>,
    params: &ParamSet,
    engine_params: Option<&ParamSet>,
    cfg: &TrainConfig,
    stats: &[TargetStats],
    tasks: usize,
    with_grads: bool,
) -> Result<(f64, Option<GradSet>), String> {
    let tape = Tape::new();
    let fp_cfg = cfg.fp_config(tasks);
    let conf = match cfg.conf_mode {
        ConfMode::WithoutConf => None,
        ConfMode::RealConf => {
            let coords = rec
                .conformation
                .as_ref()
                .ok_or("missing conformation for the real-conformation variant")?;
            Some(fingerprint::lift_real_conformation(&tape, coords, params))
        }
        ConfMode::Engine => {
            if let Some(cache) = qp_cache {
                Some((
                    tape.constant(cache.0.clone()),
                    tape.constant(cache.1.clone()),
                ))
            } else {
                // Finetuning: engine parameters live in `params` and stay
                // differentiable end to end.
                let _ = engine_params;
                let enc = encoder::encode_initial(&tape, &rec.mol, params, &cfg.encoder_config())
                    .map_err(|e| e.to_string())?;
                let bind = engine::bind(&tape, params);
                let masses = MassVectors::new(&tape, &rec.mol.masses());
                let traj =
                    engine::rollout(&tape, enc.q0, enc.p0, &bind, &masses, &cfg.engine_config())
                        .map_err(|e| e.to_string())?;
                Some((traj.final_q(), traj.final_p()))
            }
        }
    };
    let fp = fingerprint::fingerprint_forward(&tape, &rec.mol, conf, params, &fp_cfg);
    let out = fingerprint::predict(&tape, fp, params); // 1 x tasks

    // Masked per-task loss against normalized targets.
    let mut mask = vec![0.0; tasks];
    let mut z = vec![0.0; tasks];
    let mut active = 0usize;
    for t in 0..tasks {
        if let Some(y) = rec.targets[t] {
            if stats[t].kept {
                mask[t] = 1.0;
                z[t] = match cfg.task {
                    TaskKind::Roc => y,
                    _ => stats[t].normalize(y),
                };
                active += 1;
            }
        }
    }
    if active == 0 {
        return Err("no unmasked targets".into());
    }
    let mask_v = tape.constant(Tensor::matrix(1, tasks, mask));
    let z_v = tape.constant(Tensor::matrix(1, tasks, z));
    let per_task = match cfg.task {
        TaskKind::Rmse => out.sub(z_v).square(),
        TaskKind::Mae => {
            let diff = out.sub(z_v);
            diff.relu().add(diff.neg().relu())
        }
        TaskKind::Roc => {
            // Stable binary cross-entropy with logits:
            // relu(x) - x*y + log(1 + exp(-|x|)).
            let abs = out.relu().add(out.neg().relu());
            out.relu()
                .sub(out.mul(z_v))
                .add(abs.neg().exp().add_scalar(1.0).log())
        }
    };
    let loss = per_task.mul(mask_v).sum().scale(1.0 / active as f64);
    let loss_value = loss.value().value();
    if !loss_value.is_finite() {
        return Err("non-finite loss".into());
    }
    let grads = if with_grads {
        let g = tape.backward(loss).into_gradset();
        if !g.is_finite() {
            return Err("non-finite gradient".into());
        }
        Some(g)
    } else {
        None
    };
    Ok((loss_value, grads))
}

/// Stage 2: train the fingerprint generator on property targets. The engine
/// checkpoint is required for [`ConfMode::Engine`]; it stays frozen unless
/// `finetune_engine` is set (in which case its parameters join the optimizer).
pub fn train_fingerprint(
    records: &[FpRecord],
    engine_params: Option<&ParamSet>,
    cfg: &TrainConfig,
) -> Result<FpOutcome, TrainError> {
    let tasks = records
        .first()
        .map(|r| r.targets.len())
        .ok_or(TrainError::ZeroVariance)?;
    if cfg.conf_mode == ConfMode::Engine && engine_params.is_none() {
        return Err(TrainError::CheckpointMissing);
    }
    if cfg.conf_mode == ConfMode::RealConf && records.iter().any(|r| r.conformation.is_none()) {
        return Err(TrainError::NoConformations);
    }
    let split = split(records.len(), cfg.seed)?;

    let stats = match cfg.task {
        TaskKind::Roc => vec![TargetStats::identity(); tasks],
        _ => {
            let train_rows: Vec<&Vec<Option<f64>>> =
                split.train.iter().map(|&i| &records[i].targets).collect();
            normalize_targets(&train_rows, tasks)?
        }
    };

    let mut params = init_params(&fingerprint::param_spec(&cfg.fp_config(tasks)), cfg.seed);
    if cfg.conf_mode == ConfMode::Engine && cfg.finetune_engine {
        params.merge(engine_params.unwrap().clone());
    }

    // Frozen engine: compute each molecule's (q, p) once.
    let pool = build_pool(cfg.workers);
    let qp_cache: Option<Vec<(Tensor, Tensor)>> =
        if cfg.conf_mode == ConfMode::Engine && !cfg.finetune_engine {
            use rayon::prelude::*;
            let eng = engine_params.unwrap();
            let cache: Vec<Result<(Tensor, Tensor), TrainError>> = pool.install(|| {
                records
                    .par_iter()
                    .enumerate()
                    .map(|(i, rec)| {
                        engine_qp(&rec.mol, eng, cfg)
                            .map_err(|message| TrainError::Molecule { index: i, message })
                    })
                    .collect()
            });
            Some(cache.into_iter().collect::<Result<Vec<_>, _>>()?)
        } else {
            None
        };

    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = Rng::new(cfg.seed ^ 0x0bad_5eed);
    let mut history = Vec::new();
    let mut best: Option<(f64, ParamSet, usize)> = None;
    let mut since_best = 0usize;

    // Records with every target masked cannot contribute.
    let usable = |i: usize| {
        records[i]
            .targets
            .iter()
            .zip(&stats)
            .any(|(t, s)| t.is_some() && s.kept)
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = split.train.iter().copied().filter(|&i| usable(i)).collect();
        rng.shuffle(&mut order);
        let mut train_loss_acc = 0.0;
        let mut batches = 0.0f64;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let (loss, grads) = batch_gradients(&pool, batch, |i| {
                let (loss, grads) = stage2_forward(
                    &records[i],
                    qp_cache.as_ref().map(|c| &c[i]),
                    &params,
                    engine_params,
                    cfg,
                    &stats,
                    tasks,
                    true,
                )
                .map_err(|message| TrainError::Molecule { index: i, message })?;
                Ok(MoleculeResult {
                    loss,
                    grads: grads.unwrap(),
                })
            })?;
            adam.update(&mut params, &grads, cfg.grad_clip);
            train_loss_acc += loss;
            batches += 1.0;
        }

        let val_indices: Vec<usize> = split.val.iter().copied().filter(|&i| usable(i)).collect();
        let mut val_loss = 0.0;
        for &i in &val_indices {
            let (loss, _) = stage2_forward(
                &records[i],
                qp_cache.as_ref().map(|c| &c[i]),
                &params,
                engine_params,
                cfg,
                &stats,
                tasks,
                false,
            )
            .map_err(|message| TrainError::Molecule { index: i, message })?;
            val_loss += loss;
        }
        val_loss /= val_indices.len().max(1) as f64;

        history.push(EpochRecord {
            epoch,
            train_loss: train_loss_acc / batches.max(1.0),
            val_loss,
            val_k_rmsd: None,
            val_dist_loss: None,
        });

        let improved = best.as_ref().map(|(b, _, _)| val_loss < *b).unwrap_or(true);
        if improved {
            best = Some((val_loss, params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                break;
            }
        }
    }

    let (_, best_params, best_epoch) = best.expect("at least one epoch");
    Ok(FpOutcome {
        params: best_params,
        stats,
        history,
        best_epoch,
    })
}

/// De-normalized predictions (probabilities for classification) for every
/// record, in record order.
pub fn predict_records(
    records: &[FpRecord],
    engine_params: Option<&ParamSet>,
    fp_params: &ParamSet,
    cfg: &TrainConfig,
    stats: &[TargetStats],
    tasks: usize,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let fp_cfg = cfg.fp_config(tasks);
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let tape = Tape::new();
        let conf = match cfg.conf_mode {
            ConfMode::WithoutConf => None,
            ConfMode::RealConf => {
                let coords = rec.conformation.as_ref().ok_or(TrainError::Molecule {
                    index: i,
                    message: "missing conformation".into(),
                })?;
                Some(fingerprint::lift_real_conformation(
                    &tape, coords, fp_params,
                ))
            }
            ConfMode::Engine => {
                let source = if cfg.finetune_engine {
                    fp_params
                } else {
                    engine_params.ok_or(TrainError::CheckpointMissing)?
                };
                let (q, p) = engine_qp(&rec.mol, source, cfg)
                    .map_err(|message| TrainError::Molecule { index: i, message })?;
                Some((tape.constant(q), tape.constant(p)))
            }
        };
        let fp = fingerprint::fingerprint_forward(&tape, &rec.mol, conf, fp_params, &fp_cfg);
        let raw = fingerprint::predict(&tape, fp, fp_params);
        let raw = match cfg.task {
            TaskKind::Roc => raw.sigmoid().value(),
            _ => raw.value(),
        };
        let row: Vec<f64> = (0..tasks)
            .map(|t| match cfg.task {
                TaskKind::Roc => raw.data()[t],
                _ => stats[t].denormalize(raw.data()[t]),
            })
            .collect();
        out.push(row);
    }
    Ok(out)
}

/// Raw fingerprints (one row per record) under the same conformation
/// plumbing as [`predict_records`].
pub fn compute_fingerprints(
    records: &[FpRecord],
    engine_params: Option<&ParamSet>,
    fp_params: &ParamSet,
    cfg: &TrainConfig,
    tasks: usize,
) -> Result<Vec<Vec<f64>>, TrainError> {
    let fp_cfg = cfg.fp_config(tasks);
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let tape = Tape::new();
        let conf = match cfg.conf_mode {
            ConfMode::WithoutConf => None,
            ConfMode::RealConf => {
                let coords = rec.conformation.as_ref().ok_or(TrainError::Molecule {
                    index: i,
                    message: "missing conformation".into(),
                })?;
                Some(fingerprint::lift_real_conformation(
                    &tape, coords, fp_params,
                ))
            }
            ConfMode::Engine => {
                let source = if cfg.finetune_engine {
                    fp_params
                } else {
                    engine_params.ok_or(TrainError::CheckpointMissing)?
                };
                let (q, p) = engine_qp(&rec.mol, source, cfg)
                    .map_err(|message| TrainError::Molecule { index: i, message })?;
                Some((tape.constant(q), tape.constant(p)))
            }
        };
        let fp = fingerprint::fingerprint_forward(&tape, &rec.mol, conf, fp_params, &fp_cfg);
        out.push(fp.value().data().to_vec());
    }
    Ok(out)
}

/// Metrics over a subset of records given full-dataset predictions.
pub fn evaluate_subset(
    records: &[FpRecord],
    predictions: &[Vec<f64>],
    indices: &[usize],
    tasks: usize,
) -> Result<Metrics, TrainError> {
    let targets: Vec<Vec<Option<f64>>> = indices
        .iter()
        .map(|&i| records[i].targets.clone())
        .collect();
    let preds: Vec<Vec<f64>> = indices.iter().map(|&i| predictions[i].clone()).collect();
    Ok(compute_metrics(&targets, &preds, tasks)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 8,
            d_f: 6,
            t_steps: 3,
            gcn_widths: vec![12, 12],
            bond_hidden: 12,
            hidden: 12,
            layers: 1,
            readout_passes: 1,
            seed: 5,
            workers: 1,
            ..TrainConfig::default()
        }
    }

    fn conformer_records(n: usize, seed: u64) -> Vec<ConformerRecord> {
        let mols = synth::generate(&synth::SynthConfig {
            molecules: n,
            seed,
            ..synth::SynthConfig::default()
        });
        mols.into_iter()
            .map(|m| {
                let flat: Vec<f64> = m.conformation.iter().flatten().copied().collect();
                let reference = Tensor::matrix(m.mol.atom_count(), 3, flat);
                ConformerRecord::new(m.mol, reference, 3)
            })
            .collect()
    }

    fn fp_records(n: usize, seed: u64, classify: bool) -> Vec<FpRecord> {
        let mols = synth::generate(&synth::SynthConfig {
            molecules: n,
            seed,
            ..synth::SynthConfig::default()
        });
        let mut rng = Rng::new(seed ^ 99);
        mols.into_iter()
            .map(|m| {
                let y = if classify {
                    synth::heteroatom_rich_label(&m.mol)
                } else {
                    synth::solubility_like_target(&m.mol, &mut rng)
                };
                FpRecord {
                    mol: m.mol,
                    targets: vec![Some(y)],
                    conformation: None,
                }
            })
            .collect()
    }

    #[test]
    fn one_epoch_history() {
        let records = conformer_records(10, 1);
        let cfg = tiny_cfg();
        let outcome = train_engine(&records, &cfg).unwrap();
        assert_eq!(outcome.history.len(), 1);
        assert!(outcome.history[0].train_loss.is_finite());
        assert!(outcome.history[0].val_loss.is_finite());
    }

    #[test]
    fn lambda_zero_val_loss_is_krmsd() {
        let records = conformer_records(10, 2);
        let cfg = TrainConfig {
            lambda: 0.0,
            ..tiny_cfg()
        };
        let outcome = train_engine(&records, &cfg).unwrap();
        let last = outcome.history.last().unwrap();
        assert_eq!(last.val_loss, last.val_k_rmsd.unwrap());
    }

    #[test]
    fn overfit_fixture_loss_decreases() {
        let records = conformer_records(50, 3);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 50,
            learning_rate: 1e-3,
            patience: 10,
            ..tiny_cfg()
        };
        let outcome = train_engine(&records, &cfg).unwrap();
        assert_eq!(outcome.history.len(), 5);
        for w in outcome.history.windows(2) {
            assert!(
                w[1].train_loss <= w[0].train_loss + 1e-9,
                "train loss rose: {} -> {}",
                w[0].train_loss,
                w[1].train_loss
            );
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let records = conformer_records(12, 4);
        let cfg = TrainConfig {
            epochs: 2,
            ..tiny_cfg()
        };
        let a = train_engine(&records, &cfg).unwrap();
        let b = train_engine(&records, &cfg).unwrap();
        for (name, t) in a.params.iter() {
            let u = b.params.get(name);
            for (x, y) in t.data().iter().zip(u.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "param {name} differs");
            }
        }
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
    }

    #[test]
    fn empty_dataset_is_no_conformations() {
        let cfg = tiny_cfg();
        assert!(matches!(
            train_engine(&[], &cfg),
            Err(TrainError::NoConformations)
        ));
    }

    #[test]
    fn normalization_roundtrip_and_errors() {
        let rows = [
            vec![Some(1.0), Some(5.0)],
            vec![Some(3.0), Some(5.0)],
            vec![Some(5.0), Some(5.0)],
        ];
        let refs: Vec<&Vec<Option<f64>>> = rows.iter().collect();
        let stats = normalize_targets(&refs, 2).unwrap();
        assert!(stats[0].kept);
        assert!(!stats[1].kept, "constant task dropped");
        let z = stats[0].normalize(4.2);
        assert!((stats[0].denormalize(z) - 4.2).abs() < 1e-12);
        // Normalized train values: mean 0, std 1.
        let zs: Vec<f64> = [1.0, 3.0, 5.0]
            .iter()
            .map(|&v| stats[0].normalize(v))
            .collect();
        let mean: f64 = zs.iter().sum::<f64>() / 3.0;
        let var: f64 = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);

        let constant = [vec![Some(2.0)], vec![Some(2.0)], vec![Some(2.0)]];
        let refs: Vec<&Vec<Option<f64>>> = constant.iter().collect();
        assert!(matches!(
            normalize_targets(&refs, 1),
            Err(TrainError::ZeroVariance)
        ));
    }

    #[test]
    fn fingerprint_without_conf_trains_without_checkpoint() {
        let records = fp_records(12, 6, false);
        let cfg = TrainConfig {
            stage: Stage::Fingerprint,
            conf_mode: ConfMode::WithoutConf,
            learning_rate: 5e-4,
            ..tiny_cfg()
        };
        let outcome = train_fingerprint(&records, None, &cfg).unwrap();
        assert_eq!(outcome.history.len(), 1);
    }

    #[test]
    fn engine_mode_requires_checkpoint() {
        let records = fp_records(12, 6, false);
        let cfg = TrainConfig {
            stage: Stage::Fingerprint,
            conf_mode: ConfMode::Engine,
            ..tiny_cfg()
        };
        assert!(matches!(
            train_fingerprint(&records, None, &cfg),
            Err(TrainError::CheckpointMissing)
        ));
    }

    #[test]
    fn frozen_engine_params_untouched_by_stage2() {
        let conformers = conformer_records(10, 7);
        let cfg1 = tiny_cfg();
        let engine_out = train_engine(&conformers, &cfg1).unwrap();

        let records = fp_records(12, 8, false);
        let cfg2 = TrainConfig {
            stage: Stage::Fingerprint,
            conf_mode: ConfMode::Engine,
            epochs: 2,
            ..tiny_cfg()
        };
        let before: Vec<(String, Vec<u64>)> = engine_out
            .params
            .iter()
            .map(|(n, t)| {
                (
                    n.to_string(),
                    t.data().iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect();
        let outcome = train_fingerprint(&records, Some(&engine_out.params), &cfg2).unwrap();
        // The trained parameter set contains no engine tensors at all; the
        // checkpoint we passed in is unchanged.
        assert!(outcome.params.iter().all(|(n, _)| n.starts_with("fp.")));
        for (name, bits) in before {
            let now: Vec<u64> = engine_out
                .params
                .get(&name)
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(bits, now);
        }
    }

    #[test]
    fn separable_classification_overfits_to_auc_one() {
        // Fraction-based labels: mean-pooled readouts see per-atom fractions
        // directly, so this target is separable at small widths.
        let records: Vec<FpRecord> = fp_records(40, 9, true)
            .into_iter()
            .map(|mut r| {
                let hetero = r
                    .mol
                    .atoms
                    .iter()
                    .filter(|a| a.element == "O" || a.element == "N")
                    .count() as f64;
                let frac = hetero / r.mol.atom_count() as f64;
                r.targets = vec![Some(if frac >= 0.3 { 1.0 } else { 0.0 })];
                r
            })
            .collect();
        let cfg = TrainConfig {
            stage: Stage::Fingerprint,
            conf_mode: ConfMode::WithoutConf,
            task: TaskKind::Roc,
            epochs: 200,
            batch_size: 40,
            learning_rate: 3e-3,
            patience: 200,
            ..tiny_cfg()
        };
        let outcome = train_fingerprint(&records, None, &cfg).unwrap();
        let preds =
            predict_records(&records, None, &outcome.params, &cfg, &outcome.stats, 1).unwrap();
        let train_indices: Vec<usize> = split(records.len(), cfg.seed).unwrap().train;
        let metrics = evaluate_subset(&records, &preds, &train_indices, 1).unwrap();
        let auc = metrics.roc_auc.expect("both classes present");
        assert!(auc > 0.99, "train ROC-AUC {auc}");
    }

    #[test]
    fn zero_head_zero_targets_zero_loss() {
        let records = fp_records(12, 10, false);
        let zeroed: Vec<FpRecord> = records
            .into_iter()
            .map(|mut r| {
                r.targets = vec![Some(0.0)];
                r
            })
            .collect();
        let cfg = TrainConfig {
            stage: Stage::Fingerprint,
            conf_mode: ConfMode::WithoutConf,
            ..tiny_cfg()
        };
        let mut params = init_params(&fingerprint::param_spec(&cfg.fp_config(1)), 3);
        params.set("fp.head.w", Tensor::zeros(vec![cfg.hidden, 1]));
        let stats = vec![TargetStats::identity()];
        let (loss, _) =
            stage2_forward(&zeroed[0], None, &params, None, &cfg, &stats, 1, false).unwrap();
        assert_eq!(loss, 0.0);
    }
}
