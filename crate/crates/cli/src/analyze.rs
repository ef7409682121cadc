use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use transvec::diffcore::Tensor;
use transvec::eval::export::{heatmap_png, scatter_png, write_csv};
use transvec::eval::{
    latent_vectors, pairwise_distance_correlation, pca_projection, pixel_vectors, salience_map,
};
use transvec::trainer::{Direction, TrainState};

use crate::common::{
    generator, ground_truth, load_images, load_state, parse_direction, write_json,
};
use crate::config::RunConfig;
use crate::error::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let mode = cfg
        .choice("mode", &["salience", "pca", "distances"])?
        .to_string();
    let state = load_state(&cfg.path("checkpoint"))?;
    let direction = parse_direction(cfg)?;
    generator(&state, direction)?;
    match mode.as_str() {
        "salience" => salience(cfg, &state, direction),
        "pca" => pca(cfg, &state, direction),
        _ => distances(cfg, &state, direction),
    }
}

fn source_key(direction: Direction) -> (&'static str, &'static str) {
    match direction {
        Direction::Xy => ("data_x", "data_y"),
        Direction::Yx => ("data_y", "data_x"),
    }
}

fn salience(cfg: &RunConfig, state: &TrainState, direction: Direction) -> Result<(), CliError> {
    let d = state.config.arch.image_size;
    let g = generator(state, direction)?;
    let mut inputs = load_images(&cfg.path(source_key(direction).0), d)?;
    inputs.truncate(cfg.get::<usize>("salience_count")?.max(1));
    let tile: usize = cfg.get("tile")?;
    let out = cfg.out_dir();
    for (i, image) in inputs.iter().enumerate() {
        let map = salience_map(g, &image.cast(), tile, 16)?;
        heatmap_png(&map, 8, &out.join(format!("salience_{i:03}.png")))?;
        let rows: Vec<Vec<f64>> = map.data().chunks(d).map(<[f64]>::to_vec).collect();
        let header: Vec<String> = (0..d).map(|c| format!("col{c}")).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&out.join(format!("salience_{i:03}.csv")), &header, &rows)?;
        transvec::data::save_png(image, &out.join(format!("input_{i:03}.png")))?;
    }
    log::info!("wrote {} salience maps", inputs.len());
    Ok(())
}

/// Siamese embeddings of real and generated images of both domains, projected
/// to two principal components.
fn pca(cfg: &RunConfig, state: &TrainState, direction: Direction) -> Result<(), CliError> {
    let d = state.config.arch.image_size;
    let count: usize = cfg.get("count")?;
    let mut x = load_images(&cfg.path("data_x"), d)?;
    let mut y = load_images(&cfg.path("data_y"), d)?;
    x.truncate(count);
    y.truncate(count);
    let mut classes: Vec<(&str, &str, Vec<Tensor<f32>>)> = Vec::new();
    if let Some(g) = state.generator(Direction::Yx) {
        classes.push(("x", "generated", g.infer_many(&y, 32)?));
    }
    if let Some(g) = state.generator(Direction::Xy) {
        classes.push(("y", "generated", g.infer_many(&x, 32)?));
    }
    classes.insert(0, ("x", "real", x));
    classes.insert(1, ("y", "real", y));
    if classes.len() < 4 {
        log::warn!("checkpoint has one generator; plotting three point classes");
    }
    let siamese = state.siamese_for(direction);
    let mut points = Vec::new();
    let mut groups = Vec::new();
    let mut labels = Vec::new();
    for (k, (domain, source, images)) in classes.iter().enumerate() {
        for v in latent_vectors(siamese, images)? {
            points.push(v);
            groups.push(k);
            labels.push((*domain, *source));
        }
    }
    let projection = pca_projection(&points, 2)?;
    let out = cfg.out_dir();
    let mut csv = String::from("pc1,pc2,domain,source\n");
    for (p, (domain, source)) in projection.points.iter().zip(&labels) {
        let _ = writeln!(csv, "{},{},{domain},{source}", p[0], p[1]);
    }
    let path = out.join("pca.csv");
    std::fs::write(&path, csv)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    scatter_png(&projection.points, &groups, 512, &out.join("pca.png"))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        classes: Vec<String>,
        explained_variance: &'a [f64],
        explained_ratio: &'a [f64],
        rank_deficient: bool,
    }
    write_json(
        &out.join("pca.json"),
        &Summary {
            classes: classes.iter().map(|(d, s, _)| format!("{d}/{s}")).collect(),
            explained_variance: &projection.explained_variance,
            explained_ratio: &projection.explained_ratio,
            rank_deficient: projection.rank_deficient,
        },
    )
}

fn pair_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dist = |u: &[f64], v: &[f64]| {
        u.iter()
            .zip(v)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    };
    let mut rows = Vec::new();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            rows.push(vec![
                i as f64,
                j as f64,
                dist(&a[i], &a[j]),
                dist(&b[i], &b[j]),
            ]);
        }
    }
    rows
}

fn write_scatter(
    out: &Path,
    name: &str,
    a: &[Vec<f64>],
    b: &[Vec<f64>],
) -> Result<Option<f64>, CliError> {
    let rows = pair_rows(a, b);
    write_csv(
        &out.join(format!("{name}.csv")),
        &["i", "j", "distance_a", "distance_b"],
        &rows,
    )?;
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r[2..].to_vec()).collect();
    scatter_png(
        &points,
        &vec![0; points.len()],
        512,
        &out.join(format!("{name}.png")),
    )?;
    match pairwise_distance_correlation(a, b) {
        Ok(r2) => Ok(Some(r2)),
        Err(transvec::Error::Undefined(why)) => {
            log::warn!("{name}: {why}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Pairwise distances between sources against distances between their
/// correct translations, their generated translations, and (in the siamese
/// space) the generated translations.
fn distances(cfg: &RunConfig, state: &TrainState, direction: Direction) -> Result<(), CliError> {
    let d = state.config.arch.image_size;
    let source_path = cfg.path(source_key(direction).0);
    let mut sources = load_images(&source_path, d)?;
    sources.truncate(cfg.get("count")?);
    let generated = generator(state, direction)?.infer_many(&sources, 32)?;
    let siamese = state.siamese_for(direction);
    let out = cfg.out_dir();
    let source_pixels = pixel_vectors(&sources);

    #[derive(Serialize)]
    struct Summary {
        pairs: usize,
        r2_pixel_pixel: Option<f64>,
        r2_pixel_gen: Option<f64>,
        r2_latent_latent: Option<f64>,
    }
    let r2_pixel_pixel = match ground_truth(&source_path, sources.len(), d)? {
        Some(truth) if truth.len() == sources.len() => {
            write_scatter(&out, "pixel_pixel", &source_pixels, &pixel_vectors(&truth))?
        }
        _ => {
            log::warn!(
                "{} has no usable factors.json; skipping pixel_pixel",
                source_path.display()
            );
            None
        }
    };
    let summary = Summary {
        pairs: sources.len() * sources.len().saturating_sub(1) / 2,
        r2_pixel_pixel,
        r2_pixel_gen: write_scatter(
            &out,
            "pixel_gen",
            &source_pixels,
            &pixel_vectors(&generated),
        )?,
        r2_latent_latent: write_scatter(
            &out,
            "latent_latent",
            &latent_vectors(siamese, &sources)?,
            &latent_vectors(siamese, &generated)?,
        )?,
    };
    write_json(&out.join("distances.json"), &summary)
}
