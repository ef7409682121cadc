use std::collections::BTreeSet;

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use transvec::data::{
    center_crop_resize, denormalize_to_rgb8, export_dataset, gen_beads_domain, gen_grid_domain,
    load_factor_manifest, load_image_folder, manipulation_sequence, normalize_rgb8, render,
    FactorRecord, GridGeometry, SyntheticKind, SyntheticSpec,
};
use transvec::diffcore::Tensor;
use transvec::Error;

fn noise_image(w: u32, h: u32, seed: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let v = x.wrapping_mul(2654435761) ^ y.wrapping_mul(40503) ^ seed.wrapping_mul(97);
        Rgb([
            (v % 251) as u8,
            ((v >> 8) % 256) as u8,
            ((v >> 16) % 241) as u8,
        ])
    })
}

/// Bilinear resize written as a direct sum of tent-filter weights over every
/// source pixel of the centered square crop.
fn tent_oracle(img: &RgbImage, size: usize) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let side = w.min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let pos = |o: usize| {
        ((o as f64 + 0.5) * side as f64 / size as f64 - 0.5).clamp(0.0, (side - 1) as f64)
    };
    let tent = |a: f64, b: usize| (1.0 - (a - b as f64).abs()).max(0.0);
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        for oy in 0..size {
            for ox in 0..size {
                let (sx, sy) = (pos(ox), pos(oy));
                let mut acc = 0.0;
                for y in 0..side {
                    let wy = tent(sy, y);
                    if wy == 0.0 {
                        continue;
                    }
                    for x in 0..side {
                        let wx = tent(sx, x);
                        acc += wx * wy * img.get_pixel((x0 + x) as u32, (y0 + y) as u32)[c] as f64;
                    }
                }
                out[(c * size + oy) * size + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn crop_and_resize_matches_tent_oracle() {
    let img = noise_image(200, 100, 3);
    let fast = center_crop_resize(img.as_raw(), 200, 100, 32);
    let oracle = tent_oracle(&img, 32);
    let worst = fast
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "max deviation {worst}");

    // upsampling path as well
    let small = noise_image(7, 9, 4);
    let fast = center_crop_resize(small.as_raw(), 7, 9, 16);
    let oracle = tent_oracle(&small, 16);
    for (a, b) in fast.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn folder_loading_is_sorted_and_normalized() {
    let dir = tempfile::tempdir().unwrap();
    noise_image(200, 100, 1)
        .save(dir.path().join("c.png"))
        .unwrap();
    noise_image(16, 16, 2)
        .save(dir.path().join("a.png"))
        .unwrap();
    RgbaImage::from_pixel(20, 20, Rgba([255, 0, 10, 7]))
        .save(dir.path().join("b.png"))
        .unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let (images, manifest) = load_image_folder(dir.path(), 16).unwrap();
    assert_eq!(manifest.files, ["a.png", "b.png", "c.png"]);
    assert_eq!(images.len(), 3);
    for img in &images {
        assert_eq!(img.shape(), &[3, 16, 16]);
        assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    // alpha is dropped, colour kept
    assert_eq!(images[1].data()[0], 1.0);
    assert_eq!(images[1].data()[256], -1.0);

    let oracle = tent_oracle(&noise_image(200, 100, 1), 16);
    for (a, b) in images[2].data().iter().zip(&oracle) {
        assert!((*a as f64 - normalize_rgb8(*b)).abs() < 1e-6);
    }
}

#[test]
fn same_size_image_round_trips_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let src = noise_image(24, 24, 9);
    src.save(dir.path().join("x.png")).unwrap();
    let (images, _) = load_image_folder(dir.path(), 24).unwrap();
    let back = denormalize_to_rgb8(&images[0]).unwrap();
    for (a, b) in src.pixels().zip(back.pixels()) {
        for c in 0..3 {
            let err = (a[c] as f64 - b[c] as f64).abs() / 255.0;
            assert!(err <= 1.0 / 255.0);
        }
    }
}

#[test]
fn folder_errors_name_the_problem() {
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_image_folder(empty.path(), 16),
        Err(Error::Config(_))
    ));

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
    let err = load_image_folder(dir.path(), 16).unwrap_err();
    assert!(err.to_string().contains("broken.png"), "{err}");
}

const NINE: [[usize; 2]; 9] = [
    [0, 0],
    [0, 1],
    [0, 2],
    [1, 2],
    [1, 1],
    [1, 0],
    [2, 0],
    [2, 1],
    [2, 2],
];

fn changed_cells(a: &Tensor<f32>, b: &Tensor<f32>, g: &GridGeometry) -> BTreeSet<[usize; 2]> {
    let d = g.image_size;
    let cell = g.cell_px();
    let mut cells = BTreeSet::new();
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if x != y {
            let p = i % (d * d);
            cells.insert([p / d / cell, p % d / cell]);
        }
    }
    cells
}

#[test]
fn manipulation_frames_differ_only_in_the_moved_cells() {
    let g = GridGeometry::new(32, 4).unwrap();
    let base = FactorRecord::new(&g, vec![[3, 3], [3, 0], [0, 3]], 1, 2).unwrap();
    for kind in [SyntheticKind::Beads, SyntheticKind::Grid] {
        let frames = manipulation_sequence(kind, &g, &base, &NINE).unwrap();
        assert_eq!(frames.len(), 9);
        for i in 0..9 {
            assert_eq!(frames[i].factors.cells.last(), Some(&NINE[i]));
            for j in i + 1..9 {
                let expected: BTreeSet<_> = [NINE[i], NINE[j]].into();
                let changed = changed_cells(&frames[i].image, &frames[j].image, &g);
                assert_eq!(changed, expected, "{kind:?} frames {i} and {j}");
            }
        }
    }
}

#[test]
fn domains_share_the_sampled_factor_space() {
    let spec = SyntheticSpec::new(SyntheticKind::Beads, 40, 11);
    let beads = gen_beads_domain(&spec).unwrap();
    let grid = gen_grid_domain(&spec).unwrap();
    for s in beads.iter().chain(&grid) {
        assert_eq!(s.image.shape(), &[3, 32, 32]);
        assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(s
            .factors
            .centroids
            .iter()
            .all(|c| c[0] < 32.0 && c[1] < 32.0));
    }
}

#[test]
fn export_writes_images_and_factor_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::new(SyntheticKind::Grid, 3, 5);
    let samples = gen_grid_domain(&spec).unwrap();
    export_dataset(&spec, &samples, dir.path()).unwrap();
    let (images, manifest) = load_image_folder(dir.path(), 32).unwrap();
    assert_eq!(manifest.files, ["00000.png", "00001.png", "00002.png"]);
    for (img, s) in images.iter().zip(&samples) {
        // rendering already quantizes to 8-bit levels, so export is lossless
        for (a, b) in img.data().iter().zip(s.image.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("factors.json")).unwrap()).unwrap();
    assert_eq!(json["kind"], "grid");
    assert_eq!(json["cells_per_side"], 4);
    let rows = json["samples"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["file"], "00000.png");
    assert_eq!(rows[0]["count"], samples[0].factors.count);
    let loaded = load_factor_manifest(dir.path()).unwrap();
    assert_eq!(loaded.kind, SyntheticKind::Grid);
    for (entry, s) in loaded.samples.iter().zip(&samples) {
        assert_eq!(entry.factors, s.factors);
        let again = render(loaded.kind, &loaded.geometry().unwrap(), &entry.factors);
        assert_eq!(again.data(), s.image.data());
    }
}
