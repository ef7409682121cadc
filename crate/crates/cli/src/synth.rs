use transvec::data::{export_dataset, gen_domain, SyntheticKind, SyntheticSpec};

use crate::config::RunConfig;
use crate::error::CliError;

/// Writes `domain_x` (beads) and `domain_y` (grid) under the output directory.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir();
    let seed = cfg.seed()?;
    let count: usize = cfg.get("count")?;
    if count == 0 {
        return Err(CliError::usage(
            "count must be positive; refusing to write an empty dataset",
        ));
    }
    for (name, kind, domain_seed) in [
        ("domain_x", SyntheticKind::Beads, seed),
        ("domain_y", SyntheticKind::Grid, seed.wrapping_add(1)),
    ] {
        let spec = SyntheticSpec {
            image_size: cfg.get("image_size")?,
            cells_per_side: cfg.get("cells_per_side")?,
            min_objects: cfg.get("min_objects")?,
            max_objects: cfg.get("max_objects")?,
            ..SyntheticSpec::new(kind, count, domain_seed)
        };
        let samples = gen_domain(&spec)?;
        let dir = out.join(name);
        if dir.exists() {
            // only reached under --force; stale files would leak into the folder
            std::fs::remove_dir_all(&dir)
                .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        }
        export_dataset(&spec, &samples, &dir)?;
        log::info!("wrote {count} {kind:?} images to {}", dir.display());
    }
    Ok(())
}
