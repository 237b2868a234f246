use std::path::Path;

use hamforge_core::trainer::{Stage, TrainConfig};

use crate::CliError;

/// Load a training config: stage defaults, overlaid with the JSON file's
/// fields, then the seed/worker overrides. `HAMFORGE_SEED` wins over both
/// the file and the flag.
pub fn load_config(
    path: Option<&Path>,
    stage: Stage,
    seed_flag: Option<u64>,
    workers_flag: Option<usize>,
) -> Result<TrainConfig, CliError> {
    let mut value = serde_json::to_value(TrainConfig::default_for(stage)).expect("serializable");
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let overlay: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let obj = overlay.as_object().ok_or_else(|| {
            CliError::Config(format!("{}: expected a JSON object", path.display()))
        })?;
        let base = value.as_object_mut().unwrap();
        for (k, v) in obj {
            if !base.contains_key(k) {
                return Err(CliError::Config(format!(
                    "{}: unknown config key `{k}`",
                    path.display()
                )));
            }
            base.insert(k.clone(), v.clone());
        }
    }
    let mut cfg: TrainConfig = serde_json::from_value(value)
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    cfg.stage = stage;
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    if let Ok(env_seed) = std::env::var("HAMFORGE_SEED") {
        cfg.seed = env_seed.parse().map_err(|_| {
            CliError::Config(format!("HAMFORGE_SEED=`{env_seed}` is not an integer"))
        })?;
    }
    if let Some(w) = workers_flag {
        if w == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        cfg.workers = w;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &TrainConfig) -> Result<(), CliError> {
    let positive = [
        ("epochs", cfg.epochs as f64),
        ("batch_size", cfg.batch_size as f64),
        ("learning_rate", cfg.learning_rate),
        ("eta", cfg.eta),
        ("d_f", cfg.d_f as f64),
        ("hidden", cfg.hidden as f64),
        ("eps_r", cfg.eps_r),
    ];
    for (name, v) in positive {
        if v <= 0.0 || !v.is_finite() {
            return Err(CliError::Config(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if cfg.lambda < 0.0 {
        return Err(CliError::Config("lambda must be >= 0".into()));
    }
    Ok(())
}
