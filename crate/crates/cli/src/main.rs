//! Command-line front end: ingestion, two-stage training, evaluation,
//! ablations, hyperparameter sweeps, and geometry exports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure. `HAMFORGE_SEED` overrides the config seed; `--workers 1`
//! guarantees byte-identical outputs for a fixed seed (the default reduction
//! is order-fixed, so higher worker counts reproduce too).

mod config;
mod data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hamforge_core::chemgraph::XyzFrame;
use hamforge_core::diffmath::{load_checkpoint, save_checkpoint, ParamSet, Tape};
use hamforge_core::engine::MassVectors;
use hamforge_core::fingerprint::ConfMode;
use hamforge_core::trainer::{self, split, Stage, TrainConfig, TrainError};
use hamforge_core::{encoder, engine, geoloss};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Molecule { .. } => CliError::Numeric(e.to_string()),
            TrainError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "hamforge",
    version,
    about = "Learnable dissipative Hamiltonian dynamics for molecular conformations and fingerprints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the Hamiltonian engine on known conformations
    TrainEngine(TrainEngineArgs),
    /// Train the fingerprint generator on property targets
    TrainFp(TrainFpArgs),
    /// Evaluate a fingerprint checkpoint; prints metrics as JSON
    Eval(EvalArgs),
    /// Predict conformations and write one XYZ per molecule
    PredictConf(PredictConfArgs),
    /// Export an engine trajectory as multi-frame XYZ
    ExportTraj(ExportTrajArgs),
    /// Run the finite-difference gradient oracle over every operation
    Gradcheck(GradcheckArgs),
    /// Train an engine ablation variant
    Ablate(AblateArgs),
    /// Sweep one engine hyperparameter; writes a CSV of losses and timings
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonTrainArgs {
    /// Training config JSON (missing keys take stage defaults)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (HAMFORGE_SEED wins over this)
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel workers for batch evaluation
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct TrainEngineArgs {
    /// Dataset CSV (smiles,<targets...>)
    #[arg(long)]
    data: PathBuf,
    /// Conformations: concatenated SDF or a directory of .xyz files
    #[arg(long)]
    conf: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// History CSV path (default: <out>.history.csv)
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum VariantFlag {
    /// Conformation-aware (engine outputs feed the fingerprint)
    Full,
    /// Geometry-free fingerprint ("w/o conf.")
    NoConf,
    /// Real conformations lifted by MLPs ("real conf.")
    RealConf,
}

#[derive(Args)]
struct TrainFpArgs {
    #[arg(long)]
    data: PathBuf,
    /// Stage-1 checkpoint (required for the full variant)
    #[arg(long)]
    engine: Option<PathBuf>,
    /// Conformations (required for the real-conf variant)
    #[arg(long)]
    conf: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantFlag::Full)]
    variant: VariantFlag,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitFlag {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct EvalArgs {
    /// Stage-2 checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Conformations (real-conf checkpoints only)
    #[arg(long)]
    conf: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitFlag::Test)]
    split: SplitFlag,
    /// Also write every molecule's fingerprint as CSV rows
    #[arg(long)]
    export_fp: Option<PathBuf>,
}

#[derive(Args)]
struct PredictConfArgs {
    /// Stage-1 checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Reference conformations; when given, outputs are Kabsch-aligned to them
    #[arg(long)]
    conf: Option<PathBuf>,
    /// Output directory for mol_<row>.xyz files
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportTrajArgs {
    /// Stage-1 checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Dataset row to simulate
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AblateVariant {
    /// Replace the LSTM with a per-atom linear map
    NoLstm,
    /// No dynamics: T = 0
    NoDyn,
    /// No dissipation: W_phi zeroed and frozen
    NoPhi,
    /// Train without the ADJ-3 term: lambda = 0
    NoAdj3,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    variant: AblateVariant,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    conf: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    T,
    Df,
    Eta,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated numeric values
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    conf: PathBuf,
    /// Output CSV (value, test distance loss, seconds, diverged)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonTrainArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::TrainEngine(args) => train_engine_cmd(args, None),
        Command::TrainFp(args) => train_fp_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::PredictConf(args) => predict_conf_cmd(args),
        Command::ExportTraj(args) => export_traj_cmd(args),
        Command::Gradcheck(args) => gradcheck_cmd(args),
        Command::Ablate(args) => {
            let variant = args.variant;
            train_engine_cmd(
                TrainEngineArgs {
                    data: args.data,
                    conf: Some(args.conf),
                    out: args.out,
                    history: args.history,
                    common: args.common,
                },
                Some(variant),
            )
        }
        Command::Sweep(args) => sweep_cmd(args),
    }
}

fn train_engine_cmd(args: TrainEngineArgs, variant: Option<AblateVariant>) -> Result<(), CliError> {
    let mut cfg = config::load_config(
        args.common.config.as_deref(),
        Stage::Engine,
        args.common.seed,
        args.common.workers,
    )?;
    match variant {
        Some(AblateVariant::NoLstm) => cfg.use_lstm = false,
        Some(AblateVariant::NoDyn) => cfg.t_steps = 0,
        Some(AblateVariant::NoPhi) => cfg.dissipation = false,
        Some(AblateVariant::NoAdj3) => cfg.lambda = 0.0,
        None => {}
    }
    let conf = args
        .conf
        .as_deref()
        .ok_or_else(|| CliError::Data(format!("--conf: {}", TrainError::NoConformations)))?;
    let (_, records) = data::load_conformer_records(&args.data, conf, cfg.adj_k)?;
    let skipped_note = records.len();
    eprintln!("training engine on {skipped_note} molecules");

    let outcome = trainer::train_engine(&records, &cfg)?;
    save_checkpoint(
        &args.out,
        &outcome.params,
        serde_json::to_value(&cfg).expect("config serializes"),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let history_path = history_path(&args.out, args.history.as_deref());
    trainer::write_history(&history_path, &outcome.history).map_err(CliError::from_io)?;

    let split = split(records.len(), cfg.seed).map_err(TrainError::from)?;
    let test = trainer::evaluate_engine(&records, &split.test, &outcome.params, &cfg)?;
    print_table1(&test);
    Ok(())
}

fn print_table1(report: &geoloss::LossReport) {
    println!("Kabsch-RMSD (Å): {:.4}", report.k_rmsd);
    println!("Distance Loss (10⁻² Å): {:.4}", report.dist_loss * 100.0);
}

fn history_path(out: &Path, flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => {
            let mut s = out.as_os_str().to_os_string();
            s.push(".history.csv");
            PathBuf::from(s)
        }
    }
}

impl CliError {
    fn from_io(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Stage-2 checkpoints embed everything evaluation needs: fingerprint
/// parameters (plus frozen engine parameters for the full variant), the
/// config, task names, and normalization statistics.
#[derive(serde::Serialize, serde::Deserialize)]
struct FpCheckpointMeta {
    config: TrainConfig,
    target_names: Vec<String>,
    stats: Vec<trainer::TargetStats>,
}

fn train_fp_cmd(args: TrainFpArgs) -> Result<(), CliError> {
    let mut cfg = config::load_config(
        args.common.config.as_deref(),
        Stage::Fingerprint,
        args.common.seed,
        args.common.workers,
    )?;
    cfg.conf_mode = match args.variant {
        VariantFlag::Full => ConfMode::Engine,
        VariantFlag::NoConf => ConfMode::WithoutConf,
        VariantFlag::RealConf => ConfMode::RealConf,
    };
    if cfg.conf_mode == ConfMode::RealConf && args.conf.is_none() {
        return Err(CliError::Data("the real-conf variant needs --conf".into()));
    }
    let (ds, records) = data::load_fp_records(&args.data, args.conf.as_deref())?;
    if ds.skipped > 0 {
        eprintln!("skipped {} unparseable rows", ds.skipped);
    }

    let engine_params: Option<ParamSet> = match (&args.engine, cfg.conf_mode) {
        (Some(path), ConfMode::Engine) => {
            let (params, hp) = load_checkpoint(path).map_err(|e| CliError::Data(e.to_string()))?;
            // Stage-1 hyperparameters must agree on the shared dimensions.
            if let Ok(engine_cfg) = serde_json::from_value::<TrainConfig>(hp) {
                cfg.d_f = engine_cfg.d_f;
                cfg.eta = engine_cfg.eta;
                cfg.t_steps = engine_cfg.t_steps;
                cfg.eps_r = engine_cfg.eps_r;
                cfg.gcn_widths = engine_cfg.gcn_widths;
                cfg.bond_hidden = engine_cfg.bond_hidden;
                cfg.use_lstm = engine_cfg.use_lstm;
            }
            Some(params)
        }
        (None, ConfMode::Engine) => return Err(TrainError::CheckpointMissing.into()),
        _ => None,
    };

    let outcome = trainer::train_fingerprint(&records, engine_params.as_ref(), &cfg)?;
    let mut save_params = outcome.params.clone();
    if cfg.conf_mode == ConfMode::Engine && !cfg.finetune_engine {
        let mut engine = engine_params.unwrap();
        for name in engine.names().map(str::to_string).collect::<Vec<_>>() {
            engine.freeze(&name);
        }
        save_params.merge(engine);
    }
    let meta = FpCheckpointMeta {
        config: cfg.clone(),
        target_names: ds.target_names.clone(),
        stats: outcome.stats.clone(),
    };
    save_checkpoint(
        &args.out,
        &save_params,
        serde_json::to_value(&meta).expect("meta serializes"),
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    let history_path = history_path(&args.out, args.history.as_deref());
    trainer::write_history(&history_path, &outcome.history).map_err(CliError::from_io)?;

    // Test metrics at the end of training.
    let tasks = ds.target_names.len();
    let preds = trainer::predict_records(
        &records,
        None,
        &save_params,
        &eval_config(&cfg),
        &outcome.stats,
        tasks,
    )?;
    let split = split(records.len(), cfg.seed).map_err(TrainError::from)?;
    let metrics = trainer::evaluate_subset(&records, &preds, &split.test, tasks)?;
    println!("{}", metrics_json(&metrics));
    Ok(())
}

/// For prediction with a merged checkpoint the engine parameters live inside
/// the same set, which is what the finetuned path expects.
fn eval_config(cfg: &TrainConfig) -> TrainConfig {
    let mut out = cfg.clone();
    if out.conf_mode == ConfMode::Engine {
        out.finetune_engine = true;
    }
    out
}

fn metrics_json(metrics: &trainer::Metrics) -> String {
    serde_json::json!({
        "mae": metrics.mae,
        "rmse": metrics.rmse,
        "roc_auc": metrics.roc_auc,
        "per_task": metrics.per_task.iter().map(|t| {
            serde_json::json!({"mae": t.mae, "rmse": t.rmse, "roc_auc": t.roc_auc})
        }).collect::<Vec<_>>(),
    })
    .to_string()
}

fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    let (params, hp) = load_checkpoint(&args.ckpt).map_err(|e| CliError::Data(e.to_string()))?;
    let meta: FpCheckpointMeta = serde_json::from_value(hp)
        .map_err(|e| CliError::Data(format!("not a fingerprint checkpoint: {e}")))?;
    let (ds, records) = data::load_fp_records(&args.data, args.conf.as_deref())?;
    let tasks = ds.target_names.len();
    if tasks != meta.target_names.len() {
        return Err(CliError::Data(format!(
            "checkpoint was trained on {} tasks, dataset has {tasks}",
            meta.target_names.len()
        )));
    }
    let cfg = eval_config(&meta.config);
    let preds = trainer::predict_records(&records, None, &params, &cfg, &meta.stats, tasks)?;
    let split = split(records.len(), meta.config.seed).map_err(TrainError::from)?;
    let indices: Vec<usize> = match args.split {
        SplitFlag::Train => split.train,
        SplitFlag::Val => split.val,
        SplitFlag::Test => split.test,
        SplitFlag::All => (0..records.len()).collect(),
    };
    let metrics = trainer::evaluate_subset(&records, &preds, &indices, tasks)?;
    if let Some(path) = &args.export_fp {
        let fps = trainer::compute_fingerprints(&records, None, &params, &cfg, tasks)?;
        let mut out = String::new();
        for row in &fps {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(CliError::from_io)?;
        eprintln!("wrote {} fingerprints to {}", fps.len(), path.display());
    }
    println!("{}", metrics_json(&metrics));
    Ok(())
}

fn load_stage1(ckpt: &Path) -> Result<(ParamSet, TrainConfig), CliError> {
    let (params, hp) = load_checkpoint(ckpt).map_err(|e| CliError::Data(e.to_string()))?;
    let cfg: TrainConfig = serde_json::from_value(hp)
        .map_err(|e| CliError::Data(format!("not an engine checkpoint: {e}")))?;
    Ok((params, cfg))
}

fn predict_conf_cmd(args: PredictConfArgs) -> Result<(), CliError> {
    let (params, cfg) = load_stage1(&args.ckpt)?;
    let ds = hamforge_core::chemgraph::read_dataset(&args.data)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let confs = match &args.conf {
        Some(path) => Some(data::load_conformations(
            path,
            ds.records.len() + ds.skipped,
        )?),
        None => None,
    };
    std::fs::create_dir_all(&args.out_dir).map_err(CliError::from_io)?;

    for rec in &ds.records {
        let predicted = predict_coordinates(&rec.mol, &params, &cfg)
            .map_err(|m| CliError::Numeric(format!("row {}: {m}", rec.row)))?;
        let coords = match &confs {
            Some(confs) => {
                let reference = &confs[rec.row];
                if reference.len() != rec.mol.atom_count() {
                    return Err(CliError::Data(format!(
                        "row {}: conformation size mismatch",
                        rec.row
                    )));
                }
                let flat: Vec<f64> = reference.iter().flatten().copied().collect();
                let ref_t = hamforge_core::diffmath::Tensor::matrix(rec.mol.atom_count(), 3, flat);
                let tape = Tape::new();
                let qh = tape.constant(predicted);
                geoloss::kabsch_align(&tape, qh, &ref_t, &rec.mol.masses(), cfg.align())
                    .map_err(|e| CliError::Numeric(e.to_string()))?
                    .value()
            }
            None => predicted,
        };
        let frame = XyzFrame {
            comment: format!("row {} predicted conformation", rec.row),
            elements: rec.mol.atoms.iter().map(|a| a.element.clone()).collect(),
            coords: (0..rec.mol.atom_count())
                .map(|i| [coords.at(i, 0), coords.at(i, 1), coords.at(i, 2)])
                .collect(),
        };
        let path = args.out_dir.join(format!("mol_{:06}.xyz", rec.row));
        hamforge_core::chemgraph::write_xyz(&path, &frame)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    eprintln!(
        "wrote {} conformations to {}",
        ds.records.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn predict_coordinates(
    mol: &hamforge_core::MoleculeGraph,
    params: &ParamSet,
    cfg: &TrainConfig,
) -> Result<hamforge_core::Tensor, String> {
    let tape = Tape::new();
    let enc = encoder::encode_initial(&tape, mol, params, &cfg.encoder_config())
        .map_err(|e| e.to_string())?;
    let bind = engine::bind(&tape, params);
    let masses = MassVectors::new(&tape, &mol.masses());
    let traj = engine::rollout(&tape, enc.q0, enc.p0, &bind, &masses, &cfg.engine_config())
        .map_err(|e| e.to_string())?;
    Ok(engine::project3d(traj.final_q(), bind.w_trans).value())
}

fn export_traj_cmd(args: ExportTrajArgs) -> Result<(), CliError> {
    let (params, cfg) = load_stage1(&args.ckpt)?;
    let ds = hamforge_core::chemgraph::read_dataset(&args.data)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.data.display())))?;
    let rec = ds
        .records
        .iter()
        .find(|r| r.row == args.index)
        .ok_or_else(|| CliError::Data(format!("row {} not in dataset", args.index)))?;

    let tape = Tape::new();
    let enc = encoder::encode_initial(&tape, &rec.mol, &params, &cfg.encoder_config())
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let bind = engine::bind(&tape, &params);
    let masses = MassVectors::new(&tape, &rec.mol.masses());
    let traj = engine::rollout(&tape, enc.q0, enc.p0, &bind, &masses, &cfg.engine_config())
        .map_err(|e| CliError::Numeric(e.to_string()))?;

    let elements: Vec<String> = rec.mol.atoms.iter().map(|a| a.element.clone()).collect();
    let frames: Vec<XyzFrame> = traj
        .states
        .iter()
        .enumerate()
        .map(|(t, (q, _))| {
            let coords = engine::project3d(*q, bind.w_trans).value();
            XyzFrame {
                comment: format!(
                    "step {t} kinetic {:.6} potential {:.6}",
                    traj.energies[t].kinetic, traj.energies[t].potential
                ),
                elements: elements.clone(),
                coords: (0..rec.mol.atom_count())
                    .map(|i| [coords.at(i, 0), coords.at(i, 1), coords.at(i, 2)])
                    .collect(),
            }
        })
        .collect();
    hamforge_core::chemgraph::write_xyz_frames(&args.out, &frames)
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!("{} frames", frames.len());
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<(), CliError> {
    let checks = hamforge_core::oracle::run_gradient_oracle(args.seed);
    let mut failed = false;
    for check in &checks {
        println!(
            "{} {:<28} max rel error {:.3e} (threshold {:.0e})",
            if check.passed() { "PASS" } else { "FAIL" },
            check.name,
            check.max_rel_error,
            check.threshold
        );
        failed |= !check.passed();
    }
    if failed {
        return Err(CliError::Numeric("gradient oracle failed".into()));
    }
    Ok(())
}

fn sweep_cmd(args: SweepArgs) -> Result<(), CliError> {
    if args.values.is_empty() {
        return Err(CliError::Config("--values must not be empty".into()));
    }
    let base = config::load_config(
        args.common.config.as_deref(),
        Stage::Engine,
        args.common.seed,
        args.common.workers,
    )?;
    let (_, records) = data::load_conformer_records(&args.data, &args.conf, base.adj_k)?;

    let mut rows = Vec::new();
    for &value in &args.values {
        let mut cfg = base.clone();
        match args.param {
            SweepParam::T => cfg.t_steps = value as usize,
            SweepParam::Df => cfg.d_f = value as usize,
            SweepParam::Eta => cfg.eta = value,
        }
        let start = Instant::now();
        let result = trainer::train_engine(&records, &cfg).and_then(|outcome| {
            let split = split(records.len(), cfg.seed)?;
            trainer::evaluate_engine(&records, &split.test, &outcome.params, &cfg)
        });
        let seconds = start.elapsed().as_secs_f64();
        // Diverged: numerics went non-finite, or the loss is so large the
        // run is useless for a sweep curve (64-bit floats absorb explosions
        // that would overflow in 32-bit).
        match result {
            Ok(report) if report.dist_loss.is_finite() && report.dist_loss < 1e6 => {
                eprintln!(
                    "{:?}={value}: test distance loss {:.5} ({seconds:.1}s)",
                    args.param, report.dist_loss
                );
                rows.push((value, Some(report.dist_loss), seconds, false));
            }
            Ok(report) => {
                eprintln!(
                    "{:?}={value}: diverged (test distance loss {:e})",
                    args.param, report.dist_loss
                );
                rows.push((value, Some(report.dist_loss), seconds, true));
            }
            Err(TrainError::Molecule { index, message }) => {
                eprintln!(
                    "{:?}={value}: diverged at molecule {index}: {message}",
                    args.param
                );
                rows.push((value, None, seconds, true));
            }
            Err(e) => return Err(e.into()),
        }
    }

    let mut csv = String::from("value,test_dist_loss,seconds,diverged\n");
    for (value, loss, seconds, diverged) in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            value,
            loss.map(|l| l.to_string()).unwrap_or_default(),
            seconds,
            diverged
        ));
    }
    std::fs::write(&args.out, csv).map_err(CliError::from_io)?;
    Ok(())
}
