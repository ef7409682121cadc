use transvec::diffcore::AdamConfig;
use transvec::losses::{DistMetric, LossConfig};
use transvec::networks::ArchitectureSpec;
use transvec::trainer::{resume, DirSink, Directions, SiameseSharing, TrainState, TrainingConfig};

use crate::common::{load_images, load_state};
use crate::config::RunConfig;
use crate::error::CliError;

pub fn training_config(cfg: &RunConfig) -> Result<TrainingConfig, CliError> {
    let arch = ArchitectureSpec {
        latent_dim: cfg.get("latent_dim")?,
        ..ArchitectureSpec::new(cfg.get("image_size")?, cfg.get("base_filters")?)
    };
    let loss = LossConfig {
        margin: cfg.get("margin")?,
        dist_metric: match cfg.choice("dist_metric", &["cosine", "cosine_plus_l2"])? {
            "cosine" => DistMetric::Cosine,
            _ => DistMetric::CosinePlusL2,
        },
        l2_weight: cfg.get("l2_weight")?,
        adv_weight: cfg.get("adv_weight")?,
        travel_weight: cfg.get("travel_weight")?,
    };
    let adam = AdamConfig {
        lr: cfg.get("lr")?,
        beta1: cfg.get("beta1")?,
        beta2: cfg.get("beta2")?,
        epsilon: cfg.get("adam_epsilon")?,
    };
    let config = TrainingConfig {
        loss,
        adam,
        batch_size: cfg.get("batch_size")?,
        directions: match cfg.choice("directions", &["both", "xy_only"])? {
            "both" => Directions::Both,
            _ => Directions::XyOnly,
        },
        siamese_sharing: match cfg.choice("siamese_sharing", &["per_direction", "shared"])? {
            "per_direction" => SiameseSharing::PerDirection,
            _ => SiameseSharing::Shared,
        },
        checkpoint_every: cfg.get("checkpoint_every")?,
        log_every: cfg.get("log_every")?,
        ..TrainingConfig::new(arch, cfg.get("steps")?, cfg.seed()?)
    };
    config.validate()?;
    Ok(config)
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let config = training_config(cfg)?;
    let size = config.arch.image_size;
    let x = load_images(&cfg.path("data_x"), size)?;
    let y = load_images(&cfg.path("data_y"), size)?;
    let state = match cfg.optional_path("resume") {
        Some(path) => {
            let mut state = load_state(&path)?;
            state.check_compatible(&config)?;
            log::info!("resuming from step {} of {}", state.step, path.display());
            state.config = config;
            state
        }
        None => TrainState::init(config)?,
    };
    let mut sink = DirSink::new(&cfg.out_dir())?;
    let started = std::time::Instant::now();
    let done = resume(state, &x, &y, &mut sink)?;
    log::info!(
        "trained to step {} in {:.1} s; checkpoint at {}",
        done.step,
        started.elapsed().as_secs_f64(),
        sink.latest_path().display()
    );
    Ok(())
}
