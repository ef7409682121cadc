//! Procedural beads and grid domains.
//!
//! Both domains place `k` objects on the cells of a square grid. The beads
//! domain draws anti-aliased discs threaded on horizontal rods over a dark
//! background and may occupy any set of cells. The grid domain draws light
//! squares inside a dark lattice and only samples edge-connected cell sets,
//! so its configuration space is a strict subset of the beads domain's.
//! A [`FactorRecord`] fully determines an image, and either renderer accepts
//! any record.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::folder::{normalize_rgb8, save_png};
use crate::diffcore::Tensor;
use crate::{Error, Result};

/// Object colors; object `i` of a record uses `PALETTES[palette][i % 6]`.
pub const PALETTES: [[[u8; 3]; 6]; 4] = [
    [
        [230, 60, 50],
        [250, 170, 40],
        [240, 230, 70],
        [80, 200, 90],
        [60, 150, 240],
        [200, 90, 220],
    ],
    [
        [250, 120, 150],
        [250, 200, 160],
        [150, 240, 200],
        [120, 210, 250],
        [190, 170, 250],
        [250, 250, 190],
    ],
    [
        [200, 120, 60],
        [220, 180, 100],
        [170, 200, 90],
        [100, 180, 170],
        [230, 140, 110],
        [210, 210, 160],
    ],
    [
        [120, 250, 250],
        [250, 120, 250],
        [250, 250, 120],
        [140, 250, 140],
        [250, 160, 110],
        [170, 170, 250],
    ],
];

pub const BACKGROUNDS: [[u8; 3]; 3] = [[18, 18, 24], [30, 22, 16], [14, 28, 26]];

const ROD_LIFT: f64 = 45.0;
const LATTICE: [f64; 3] = [72.0, 72.0, 78.0];
const DISC_RADIUS: f64 = 0.4;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Beads,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub image_size: usize,
    pub cells_per_side: usize,
}

impl GridGeometry {
    pub fn new(image_size: usize, cells_per_side: usize) -> Result<Self> {
        if cells_per_side == 0
            || image_size % cells_per_side != 0
            || image_size / cells_per_side < 4
        {
            return Err(Error::Config(format!(
                "{cells_per_side} cells per side do not tile a {image_size}px image"
            )));
        }
        Ok(Self {
            image_size,
            cells_per_side,
        })
    }

    pub fn cell_px(&self) -> usize {
        self.image_size / self.cells_per_side
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    /// Pixel-space `(x, y)` center of a `(row, col)` cell.
    pub fn centroid(&self, cell: [usize; 2]) -> [f64; 2] {
        let c = self.cell_px() as f64;
        [(cell[1] as f64 + 0.5) * c, (cell[0] as f64 + 0.5) * c]
    }

    /// Half-open pixel rectangle `(x0, y0, x1, y1)` of a cell.
    pub fn cell_rect(&self, cell: [usize; 2]) -> (usize, usize, usize, usize) {
        let c = self.cell_px();
        (
            cell[1] * c,
            cell[0] * c,
            (cell[1] + 1) * c,
            (cell[0] + 1) * c,
        )
    }

    pub fn contains(&self, cell: [usize; 2]) -> bool {
        cell[0] < self.cells_per_side && cell[1] < self.cells_per_side
    }
}

/// Ground-truth generative factors of one synthetic image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRecord {
    /// Occupied `(row, col)` cells in drawing order.
    pub cells: Vec<[usize; 2]>,
    /// Pixel-space `(x, y)` object centers, parallel to `cells`.
    pub centroids: Vec<[f64; 2]>,
    pub count: usize,
    pub palette: usize,
    pub background: usize,
}

impl FactorRecord {
    pub fn new(
        geometry: &GridGeometry,
        cells: Vec<[usize; 2]>,
        palette: usize,
        background: usize,
    ) -> Result<Self> {
        if palette >= PALETTES.len() || background >= BACKGROUNDS.len() {
            return Err(Error::Config(format!(
                "palette {palette} / background {background} out of range"
            )));
        }
        let mut seen = BTreeSet::new();
        for &cell in &cells {
            if !geometry.contains(cell) {
                return Err(Error::Config(format!("cell {cell:?} is outside the grid")));
            }
            if !seen.insert(cell) {
                return Err(Error::Config(format!("cell {cell:?} is occupied twice")));
            }
        }
        Ok(Self {
            centroids: cells.iter().map(|&c| geometry.centroid(c)).collect(),
            count: cells.len(),
            cells,
            palette,
            background,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub count: usize,
    pub seed: u64,
    pub image_size: usize,
    pub cells_per_side: usize,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, count: usize, seed: u64) -> Self {
        Self {
            kind,
            count,
            seed,
            image_size: 32,
            cells_per_side: 4,
            min_objects: 3,
            max_objects: 6,
        }
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.image_size, self.cells_per_side)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub factors: FactorRecord,
}

struct Canvas {
    size: usize,
    rgb: Vec<f64>,
}

impl Canvas {
    fn filled(size: usize, color: [f64; 3]) -> Self {
        let mut rgb = vec![0.0; 3 * size * size];
        for (c, &v) in color.iter().enumerate() {
            rgb[c * size * size..(c + 1) * size * size].fill(v);
        }
        Self { size, rgb }
    }

    fn blend(&mut self, x: usize, y: usize, color: [f64; 3], alpha: f64) {
        let n = self.size * self.size;
        for (c, &v) in color.iter().enumerate() {
            let p = &mut self.rgb[c * n + y * self.size + x];
            *p = *p * (1.0 - alpha) + v * alpha;
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        let data = self
            .rgb
            .iter()
            .map(|&v| normalize_rgb8(v.round().clamp(0.0, 255.0)) as f32)
            .collect();
        Tensor::new(vec![3, self.size, self.size], data).expect("canvas shape")
    }
}

fn to_f64(c: [u8; 3]) -> [f64; 3] {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

fn object_color(factors: &FactorRecord, index: usize) -> [f64; 3] {
    to_f64(PALETTES[factors.palette][index % PALETTES[0].len()])
}

fn render_beads(geometry: &GridGeometry, factors: &FactorRecord) -> Tensor<f32> {
    let d = geometry.image_size;
    let bg = to_f64(BACKGROUNDS[factors.background]);
    let mut canvas = Canvas::filled(d, bg);
    let rod = bg.map(|v| v + ROD_LIFT);
    for row in 0..geometry.cells_per_side {
        let y = geometry.centroid([row, 0])[1].floor() as usize;
        for x in 0..d {
            canvas.blend(x, y, rod, 1.0);
        }
    }
    let radius = DISC_RADIUS * geometry.cell_px() as f64;
    let step = 1.0 / SUPERSAMPLE as f64;
    for (i, &cell) in factors.cells.iter().enumerate() {
        let [cx, cy] = geometry.centroid(cell);
        let color = object_color(factors, i);
        let (x0, y0, x1, y1) = geometry.cell_rect(cell);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let px = x as f64 + (sx as f64 + 0.5) * step;
                        let py = y as f64 + (sy as f64 + 0.5) * step;
                        if (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    canvas.blend(
                        x,
                        y,
                        color,
                        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64,
                    );
                }
            }
        }
    }
    canvas.into_tensor()
}

fn render_grid(geometry: &GridGeometry, factors: &FactorRecord) -> Tensor<f32> {
    let d = geometry.image_size;
    let cell = geometry.cell_px();
    let mut canvas = Canvas::filled(d, to_f64(BACKGROUNDS[factors.background]));
    for y in 0..d {
        for x in 0..d {
            if x % cell == 0 || y % cell == 0 {
                canvas.blend(x, y, LATTICE, 1.0);
            }
        }
    }
    for (i, &c) in factors.cells.iter().enumerate() {
        // light tint of the palette color
        let color = object_color(factors, i).map(|v| 0.4 * v + 0.6 * 255.0);
        let (x0, y0, x1, y1) = geometry.cell_rect(c);
        for y in y0 + 1..y1 - 1 {
            for x in x0 + 1..x1 - 1 {
                canvas.blend(x, y, color, 1.0);
            }
        }
    }
    canvas.into_tensor()
}

/// Renders a factor record as a `(3, d, d)` image in `[-1, 1]`.
pub fn render(kind: SyntheticKind, geometry: &GridGeometry, factors: &FactorRecord) -> Tensor<f32> {
    match kind {
        SyntheticKind::Beads => render_beads(geometry, factors),
        SyntheticKind::Grid => render_grid(geometry, factors),
    }
}

fn all_cells(geometry: &GridGeometry) -> Vec<[usize; 2]> {
    let n = geometry.cells_per_side;
    (0..n).flat_map(|r| (0..n).map(move |c| [r, c])).collect()
}

fn sample_free_cells(rng: &mut ChaCha8Rng, geometry: &GridGeometry, k: usize) -> Vec<[usize; 2]> {
    let mut cells = all_cells(geometry);
    cells.shuffle(rng);
    cells.truncate(k);
    cells
}

/// Grows an edge-connected set of `k` cells from a random seed cell.
fn sample_connected_cells(
    rng: &mut ChaCha8Rng,
    geometry: &GridGeometry,
    k: usize,
) -> Vec<[usize; 2]> {
    if k == 0 {
        return Vec::new();
    }
    let n = geometry.cells_per_side;
    let start = *all_cells(geometry).choose(rng).expect("non-empty grid");
    let mut cells = vec![start];
    let mut occupied: BTreeSet<[usize; 2]> = cells.iter().copied().collect();
    while cells.len() < k {
        let mut frontier = BTreeSet::new();
        for &[r, c] in &cells {
            let neighbours = [
                (r.wrapping_sub(1), c),
                (r + 1, c),
                (r, c.wrapping_sub(1)),
                (r, c + 1),
            ];
            for (nr, nc) in neighbours {
                if nr < n && nc < n && !occupied.contains(&[nr, nc]) {
                    frontier.insert([nr, nc]);
                }
            }
        }
        let frontier: Vec<_> = frontier.into_iter().collect();
        let next = *frontier.choose(rng).expect("connected grid has a frontier");
        occupied.insert(next);
        cells.push(next);
    }
    cells
}

/// Samples `spec.count` images of the requested domain.
pub fn gen_domain(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    let geometry = spec.geometry()?;
    if spec.min_objects > spec.max_objects {
        return Err(Error::Config(format!(
            "object range {}..={} is empty",
            spec.min_objects, spec.max_objects
        )));
    }
    if spec.max_objects > geometry.num_cells() {
        return Err(Error::Config(format!(
            "{} objects do not fit on {} cells",
            spec.max_objects,
            geometry.num_cells()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|_| {
            let k = rng.random_range(spec.min_objects..=spec.max_objects);
            let cells = match spec.kind {
                SyntheticKind::Beads => sample_free_cells(&mut rng, &geometry, k),
                SyntheticKind::Grid => sample_connected_cells(&mut rng, &geometry, k),
            };
            let palette = rng.random_range(0..PALETTES.len());
            let background = rng.random_range(0..BACKGROUNDS.len());
            let factors = FactorRecord::new(&geometry, cells, palette, background)?;
            Ok(Sample {
                image: render(spec.kind, &geometry, &factors),
                factors,
            })
        })
        .collect()
}

pub fn gen_beads_domain(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    gen_domain(&SyntheticSpec {
        kind: SyntheticKind::Beads,
        ..spec.clone()
    })
}

pub fn gen_grid_domain(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    gen_domain(&SyntheticSpec {
        kind: SyntheticKind::Grid,
        ..spec.clone()
    })
}

/// One frame per path cell: the base objects stay put and one extra object
/// (drawn last, with the next palette color) sits on the path cell.
pub fn manipulation_sequence(
    kind: SyntheticKind,
    geometry: &GridGeometry,
    base: &FactorRecord,
    cell_path: &[[usize; 2]],
) -> Result<Vec<Sample>> {
    cell_path
        .iter()
        .map(|&cell| {
            if !geometry.contains(cell) {
                return Err(Error::Config(format!(
                    "path cell {cell:?} is outside the grid"
                )));
            }
            if base.cells.contains(&cell) {
                return Err(Error::Config(format!(
                    "path cell {cell:?} is already occupied"
                )));
            }
            let mut cells = base.cells.clone();
            cells.push(cell);
            let factors = FactorRecord::new(geometry, cells, base.palette, base.background)?;
            Ok(Sample {
                image: render(kind, geometry, &factors),
                factors,
            })
        })
        .collect()
}

/// Contents of a dataset folder's `factors.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorManifest {
    pub kind: SyntheticKind,
    pub image_size: usize,
    pub cells_per_side: usize,
    pub samples: Vec<FactorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorEntry {
    pub file: String,
    #[serde(flatten)]
    pub factors: FactorRecord,
}

impl FactorManifest {
    pub fn geometry(&self) -> Result<GridGeometry> {
        GridGeometry::new(self.image_size, self.cells_per_side)
    }
}

/// Writes `00000.png, 00001.png, ...` plus `factors.json` into `dir`.
pub fn export_dataset(spec: &SyntheticSpec, samples: &[Sample], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let file = format!("{i:05}.png");
        save_png(&sample.image, &dir.join(&file))?;
        entries.push(FactorEntry {
            file,
            factors: sample.factors.clone(),
        });
    }
    let manifest = FactorManifest {
        kind: spec.kind,
        image_size: spec.image_size,
        cells_per_side: spec.cells_per_side,
        samples: entries,
    };
    let path = dir.join("factors.json");
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::io(path, e))
}

/// Reads `dir/factors.json`, checking every record against the stored grid.
pub fn load_factor_manifest(dir: &Path) -> Result<FactorManifest> {
    let path = dir.join("factors.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: FactorManifest = serde_json::from_slice(&bytes)?;
    let geometry = manifest.geometry()?;
    for entry in &manifest.samples {
        let f = &entry.factors;
        FactorRecord::new(&geometry, f.cells.clone(), f.palette, f.background)?;
    }
    Ok(manifest)
}

/// A fixed nine-position manipulation: the moved object snakes through the
/// top-left 3x3 block while three static objects sit outside it.
pub fn default_manipulation(geometry: &GridGeometry) -> Result<(FactorRecord, Vec<[usize; 2]>)> {
    let n = geometry.cells_per_side;
    if n < 4 {
        return Err(Error::Config(format!(
            "the manipulation path needs at least 4 cells per side, got {n}"
        )));
    }
    let path = vec![
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
    let base = FactorRecord::new(geometry, vec![[n - 1, n - 1], [n - 1, 0], [0, n - 1]], 0, 0)?;
    Ok((base, path))
}
