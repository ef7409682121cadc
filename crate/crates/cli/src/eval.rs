use transvec::eval::{
    evaluate_direction, DirectionInputs, DiscriminatorScoreConfig, EvalReport, FeatureExtractor,
    FeatureExtractorSpec, MetricSet,
};
use transvec::networks::ArchitectureSpec;
use transvec::trainer::Direction;

use crate::common::{direction_name, ground_truth, load_images, load_state, write_json};
use crate::config::RunConfig;
use crate::error::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let metrics = MetricSet::parse(cfg.raw("metric"))?;
    let state = load_state(&cfg.path("checkpoint"))?;
    let d = state.config.arch.image_size;
    let count: usize = cfg.get("count")?;
    let seed = cfg.seed()?;
    let (path_x, path_y) = (cfg.path("data_x"), cfg.path("data_y"));
    let mut x = load_images(&path_x, d)?;
    let mut y = load_images(&path_y, d)?;
    x.truncate(count);
    y.truncate(count);

    let extractor = FeatureExtractor::seeded(FeatureExtractorSpec {
        feature_dim: cfg.get("fid_dim")?,
        ..FeatureExtractorSpec::random(d, seed)
    })?;
    let disc = DiscriminatorScoreConfig {
        train_steps: cfg.get("disc_steps")?,
        ..DiscriminatorScoreConfig::new(
            ArchitectureSpec::new(d, state.config.arch.base_filters),
            seed,
        )
    };

    let mut reports = Vec::new();
    for (dir, sources, targets, source_path) in [
        (Direction::Xy, &x, &y, &path_x),
        (Direction::Yx, &y, &x, &path_y),
    ] {
        let Some(g) = state.generator(dir) else {
            continue;
        };
        let generated = g.infer_many(sources, 32)?;
        let truth = ground_truth(source_path, sources.len(), d)?;
        if truth.as_ref().is_some_and(|t| t.len() != sources.len()) {
            return Err(CliError::usage(format!(
                "{}/factors.json lists fewer samples than images",
                source_path.display()
            )));
        }
        let inputs = DirectionInputs {
            direction: direction_name(dir).to_string(),
            sources,
            generated: &generated,
            real_targets: targets,
            ground_truth: truth.as_deref(),
            siamese: Some(state.siamese_for(dir)),
        };
        let report = evaluate_direction(&inputs, &extractor, &disc, metrics)?;
        log::info!("{}: {report:?}", inputs.direction);
        reports.push(report);
    }
    let report = EvalReport::from_directions(reports, extractor.spec.clone())?;
    write_json(&cfg.out_dir().join("eval_report.json"), &report)
}
