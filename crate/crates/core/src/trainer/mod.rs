//! Alternating discriminator, generator and siamese updates.
//!
//! Every step runs, per direction, a discriminator update on a real and a
//! generated batch (two separate batch-norm passes), a generator update on the
//! adversarial plus transformation-vector objective, and a siamese update on
//! the margin plus transformation-vector objective computed against the
//! freshly updated generator.

mod checkpoint;

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::data::{gather_batch, BatchSampler, SamplerState};
use crate::diffcore::{AdamConfig, AdamState, Gradients, Graph, ParameterSet, Tensor};
use crate::losses::{
    compose_losses, d_loss_term, g_adv_term, generator_objective, margin_term, siamese_objective,
    travel_term, LossBreakdown, LossConfig, LossParts,
};
use crate::networks::{ArchitectureSpec, Forward, Mode, NetworkParams, Role};
use crate::{Error, Result};

/// Number of recent loss rows kept inside the training state.
pub const HISTORY_CAPACITY: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directions {
    XyOnly,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiameseSharing {
    PerDirection,
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Xy,
    Yx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub arch: ArchitectureSpec,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub directions: Directions,
    pub siamese_sharing: SiameseSharing,
    /// Intermediate checkpoint period in steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Period of info-level progress messages; 0 silences them.
    pub log_every: u64,
}

impl TrainingConfig {
    pub fn new(arch: ArchitectureSpec, steps: u64, seed: u64) -> Self {
        Self {
            arch,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 16,
            steps,
            seed,
            directions: Directions::Both,
            siamese_sharing: SiameseSharing::PerDirection,
            checkpoint_every: 0,
            log_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for pairwise losses, got {}",
                self.batch_size
            )));
        }
        let a = self.adam;
        let ok = a.lr > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.epsilon >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }
}

/// A network together with its optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainee {
    pub net: NetworkParams<f32>,
    pub opt: AdamState<f32>,
}

impl Trainee {
    fn new(net: NetworkParams<f32>, adam: AdamConfig) -> Self {
        let opt = AdamState::new(&net.params, adam);
        Self { net, opt }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionNets {
    pub generator: Trainee,
    pub discriminator: Trainee,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub xy: LossBreakdown,
    pub yx: Option<LossBreakdown>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainingConfig,
    pub step: u64,
    pub xy: DirectionNets,
    pub yx: Option<DirectionNets>,
    /// `[s_xy, s_yx]` per direction, `[s]` when shared, `[s_xy]` for one direction.
    pub siamese: Vec<Trainee>,
    /// Batch streams over the X and Y datasets.
    pub samplers: [SamplerState; 2],
    pub history: VecDeque<HistoryEntry>,
}

impl TrainState {
    /// Fresh networks and optimizers. All seeds derive from `config.seed`; the
    /// X→Y triple is identical whether or not the reverse direction is trained.
    pub fn init(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut seeds = [0u64; 8];
        for s in &mut seeds {
            *s = rng.next_u64();
        }
        let [g_xy, d_y, s_xy, g_yx, d_x, s_yx, sample_x, sample_y] = seeds;
        let arch = &config.arch;
        let adam = config.adam;
        let nets = |g: u64, d: u64| -> Result<DirectionNets> {
            Ok(DirectionNets {
                generator: Trainee::new(NetworkParams::build(arch, Role::Generator, g)?, adam),
                discriminator: Trainee::new(
                    NetworkParams::build(arch, Role::Discriminator, d)?,
                    adam,
                ),
            })
        };
        let xy = nets(g_xy, d_y)?;
        let yx = match config.directions {
            Directions::XyOnly => None,
            Directions::Both => Some(nets(g_yx, d_x)?),
        };
        let mut siamese = vec![Trainee::new(
            NetworkParams::build(arch, Role::Siamese, s_xy)?,
            adam,
        )];
        if yx.is_some() && config.siamese_sharing == SiameseSharing::PerDirection {
            siamese.push(Trainee::new(
                NetworkParams::build(arch, Role::Siamese, s_yx)?,
                adam,
            ));
        }
        let sampler = |seed| SamplerState {
            seed,
            epoch: 0,
            cursor: 0,
        };
        Ok(Self {
            samplers: [sampler(sample_x), sampler(sample_y)],
            config,
            step: 0,
            xy,
            yx,
            siamese,
            history: VecDeque::new(),
        })
    }

    pub fn direction(&self, dir: Direction) -> Option<&DirectionNets> {
        match dir {
            Direction::Xy => Some(&self.xy),
            Direction::Yx => self.yx.as_ref(),
        }
    }

    pub fn generator(&self, dir: Direction) -> Option<&NetworkParams<f32>> {
        self.direction(dir).map(|n| &n.generator.net)
    }

    pub fn siamese_for(&self, dir: Direction) -> &NetworkParams<f32> {
        &self.siamese[siamese_index(dir, self.siamese.len())].net
    }

    /// Whether `config` may continue from this state. Only the step budget
    /// and logging cadence may differ.
    pub fn check_compatible(&self, config: &TrainingConfig) -> Result<()> {
        let mine = &self.config;
        let mismatch = |what: &str| Err(Error::Incompatible(format!("{what} differs")));
        if mine.arch != config.arch {
            return Err(Error::Incompatible(format!(
                "architecture {:?} vs {:?}",
                mine.arch, config.arch
            )));
        }
        if mine.loss != config.loss {
            return mismatch("loss configuration");
        }
        if mine.adam != config.adam {
            return mismatch("optimizer configuration");
        }
        if mine.batch_size != config.batch_size {
            return mismatch("batch size");
        }
        if mine.seed != config.seed {
            return mismatch("seed");
        }
        if mine.directions != config.directions || mine.siamese_sharing != config.siamese_sharing {
            return mismatch("network layout");
        }
        Ok(())
    }

    /// Every trainee with its checkpoint key, in a fixed order.
    pub fn trainees(&self) -> Vec<(&'static str, &Trainee)> {
        let mut out = vec![
            ("g_xy", &self.xy.generator),
            ("d_y", &self.xy.discriminator),
        ];
        if let Some(yx) = &self.yx {
            out.push(("g_yx", &yx.generator));
            out.push(("d_x", &yx.discriminator));
        }
        let keys: &[&'static str] = match self.siamese.len() {
            2 => &["s_xy", "s_yx"],
            _ if self.yx.is_some() => &["s"],
            _ => &["s_xy"],
        };
        out.extend(keys.iter().copied().zip(self.siamese.iter()));
        out
    }
}

fn siamese_index(dir: Direction, count: usize) -> usize {
    match dir {
        Direction::Yx if count == 2 => 1,
        _ => 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub xy: LossBreakdown,
    pub yx: Option<LossBreakdown>,
}

fn collect_grads(
    grads: &Gradients<f32>,
    net: &NetworkParams<f32>,
    forwards: &[&Forward<f32>],
) -> ParameterSet<f32> {
    net.params
        .names()
        .map(|name| {
            let mut total = grads.wrt(forwards[0].params[name]);
            for f in &forwards[1..] {
                let more = grads.wrt(f.params[name]);
                for (a, b) in total.data_mut().iter_mut().zip(more.data()) {
                    *a += b;
                }
            }
            (name.to_string(), total)
        })
        .collect()
}

fn grad_norm(grads: &ParameterSet<f32>) -> f64 {
    grads
        .iter()
        .map(|(_, t)| t.norm().powi(2))
        .sum::<f64>()
        .sqrt()
}

fn scalar(graph: &Graph<f32>, v: crate::diffcore::Var) -> f64 {
    graph.value(v).item() as f64
}

fn ensure_finite(step: u64, phase: &str, loss: f64, grads: &ParameterSet<f32>) -> Result<()> {
    let norm = grad_norm(grads);
    if loss.is_finite() && norm.is_finite() {
        return Ok(());
    }
    let detail = format!("{phase}: loss {loss}, gradient norm {norm}");
    log::error!("step {step}: {detail}");
    Err(Error::NonFinite { step, detail })
}

/// Generator output in train mode without recording gradients or statistics.
fn generate(g: &NetworkParams<f32>, source: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut graph = Graph::new();
    let x = graph.constant(source.clone());
    let out = g.forward(&mut graph, x, Mode::Train, false)?;
    Ok(graph.value(out.output).clone())
}

fn discriminator_update(
    step: u64,
    tag: &str,
    nets: &mut DirectionNets,
    source: &Tensor<f32>,
    target: &Tensor<f32>,
) -> Result<f64> {
    let fake = generate(&nets.generator.net, source)?;
    let d = &mut nets.discriminator;
    let mut graph = Graph::new();
    let real_in = graph.constant(target.clone());
    let real = d.net.forward(&mut graph, real_in, Mode::Train, true)?;
    let fake_in = graph.constant(fake);
    let fake = d.net.forward(&mut graph, fake_in, Mode::Train, true)?;
    let loss = d_loss_term(&mut graph, real.output, fake.output)?;
    let value = scalar(&graph, loss);
    let grads = collect_grads(&graph.backward(loss)?, &d.net, &[&real, &fake]);
    ensure_finite(step, &format!("{tag} discriminator"), value, &grads)?;
    d.opt.step(&mut d.net.params, &grads)?;
    d.net.commit_stats(&real.stats);
    d.net.commit_stats(&fake.stats);
    Ok(value)
}

fn generator_update(
    step: u64,
    tag: &str,
    nets: &mut DirectionNets,
    siamese: &NetworkParams<f32>,
    source: &Tensor<f32>,
    cfg: &LossConfig,
) -> Result<(f64, f64)> {
    let mut graph = Graph::new();
    let src = graph.constant(source.clone());
    let g = &mut nets.generator;
    let gen = g.net.forward(&mut graph, src, Mode::Train, true)?;
    let judged = nets
        .discriminator
        .net
        .forward(&mut graph, gen.output, Mode::Train, false)?;
    let adv = g_adv_term(&mut graph, judged.output);
    let real_latents = siamese.forward(&mut graph, src, Mode::Train, false)?;
    let gen_latents = siamese.forward(&mut graph, gen.output, Mode::Train, false)?;
    let travel = travel_term(&mut graph, real_latents.output, gen_latents.output, cfg)?;
    let objective = generator_objective(&mut graph, adv, travel, cfg)?;
    let (adv_value, travel_value) = (scalar(&graph, adv), scalar(&graph, travel));
    let grads = collect_grads(&graph.backward(objective)?, &g.net, &[&gen]);
    ensure_finite(
        step,
        &format!("{tag} generator (adv {adv_value}, travel {travel_value})"),
        scalar(&graph, objective),
        &grads,
    )?;
    g.opt.step(&mut g.net.params, &grads)?;
    g.net.commit_stats(&gen.stats);
    Ok((adv_value, travel_value))
}

/// One siamese update over any number of `(source, generated)` batch pairs;
/// returns the margin loss of each pair.
fn siamese_update(
    step: u64,
    s: &mut Trainee,
    pairs: &[(&Tensor<f32>, Tensor<f32>)],
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let mut graph = Graph::new();
    let mut forwards = Vec::new();
    let mut margins = Vec::new();
    let mut total = None;
    for (source, generated) in pairs {
        let src = graph.constant((*source).clone());
        let real = s.net.forward(&mut graph, src, Mode::Train, true)?;
        let gen_in = graph.constant(generated.clone());
        let gen = s.net.forward(&mut graph, gen_in, Mode::Train, true)?;
        let margin = margin_term(&mut graph, real.output, cfg)?;
        let travel = travel_term(&mut graph, real.output, gen.output, cfg)?;
        let objective = siamese_objective(&mut graph, margin, travel, cfg)?;
        margins.push(scalar(&graph, margin));
        total = Some(match total {
            None => objective,
            Some(t) => graph.add(t, objective)?,
        });
        forwards.push(real);
        forwards.push(gen);
    }
    let Some(total) = total else {
        return Ok(margins);
    };
    let refs: Vec<&Forward<f32>> = forwards.iter().collect();
    let grads = collect_grads(&graph.backward(total)?, &s.net, &refs);
    ensure_finite(step, "siamese", scalar(&graph, total), &grads)?;
    s.opt.step(&mut s.net.params, &grads)?;
    for f in &forwards {
        s.net.commit_stats(&f.stats);
    }
    Ok(margins)
}

/// Advances every network by one optimizer step on the given batches.
pub fn train_step(
    state: &mut TrainState,
    batch_x: &Tensor<f32>,
    batch_y: &Tensor<f32>,
) -> Result<StepReport> {
    for (name, batch) in [("x", batch_x), ("y", batch_y)] {
        let expected = [state.config.arch.channels, state.config.arch.image_size];
        let s = batch.shape();
        if s.len() != 4
            || s[0] < 2
            || s[1] != expected[0]
            || s[2] != expected[1]
            || s[3] != expected[1]
        {
            return Err(Error::Config(format!(
                "batch_{name} has shape {s:?}; expected (>=2, {}, {d}, {d})",
                expected[0],
                d = expected[1]
            )));
        }
    }
    let step = state.step + 1;
    let cfg = state.config.loss.clone();
    let shared = state.siamese.len() == 1 && state.yx.is_some();
    let siamese_count = state.siamese.len();

    let mut parts = Vec::new();
    let mut pending = Vec::new();
    let directions = [
        (Direction::Xy, "x->y", batch_x, batch_y),
        (Direction::Yx, "y->x", batch_y, batch_x),
    ];
    for (dir, tag, source, target) in directions {
        let nets = match dir {
            Direction::Xy => &mut state.xy,
            Direction::Yx => match state.yx.as_mut() {
                Some(n) => n,
                None => continue,
            },
        };
        let si = siamese_index(dir, siamese_count);
        let l_d = discriminator_update(step, tag, nets, source, target)?;
        let (l_adv_g, l_travel) =
            generator_update(step, tag, nets, &state.siamese[si].net, source, &cfg)?;
        let regenerated = generate(&nets.generator.net, source)?;
        let mut p = LossParts {
            l_adv_g,
            l_travel,
            l_sc: 0.0,
            l_d,
        };
        if shared {
            pending.push((source, regenerated));
        } else {
            p.l_sc =
                siamese_update(step, &mut state.siamese[si], &[(source, regenerated)], &cfg)?[0];
        }
        parts.push(p);
    }
    if shared {
        let margins = siamese_update(step, &mut state.siamese[0], &pending, &cfg)?;
        for (p, m) in parts.iter_mut().zip(margins) {
            p.l_sc = m;
        }
    }

    let breakdowns: Vec<LossBreakdown> =
        parts.into_iter().map(|p| compose_losses(p, &cfg)).collect();
    let report = StepReport {
        step,
        xy: breakdowns[0],
        yx: breakdowns.get(1).copied(),
    };
    state.step = step;
    state.history.push_back(HistoryEntry {
        step,
        xy: report.xy,
        yx: report.yx,
    });
    while state.history.len() > HISTORY_CAPACITY {
        state.history.pop_front();
    }
    Ok(report)
}

/// One line of the metrics log. Top-level losses average the trained directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub l_d: f64,
    pub l_adv_g: f64,
    pub l_travel: f64,
    pub l_sc: f64,
    pub wall_ms: f64,
    pub xy: LossBreakdown,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub yx: Option<LossBreakdown>,
}

impl MetricsRow {
    fn new(report: &StepReport, wall_ms: f64) -> Self {
        let all: Vec<&LossBreakdown> = std::iter::once(&report.xy).chain(&report.yx).collect();
        let mean =
            |f: fn(&LossBreakdown) -> f64| all.iter().map(|b| f(b)).sum::<f64>() / all.len() as f64;
        Self {
            step: report.step,
            l_d: mean(|b| b.l_d),
            l_adv_g: mean(|b| b.l_adv_g),
            l_travel: mean(|b| b.l_travel),
            l_sc: mean(|b| b.l_sc),
            wall_ms,
            xy: report.xy,
            yx: report.yx,
        }
    }
}

/// Receives metrics rows and checkpoints emitted by [`train`].
pub trait TrainSink {
    fn metrics(&mut self, row: &MetricsRow) -> Result<()>;
    fn checkpoint(&mut self, state: &TrainState) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl TrainSink for NullSink {
    fn metrics(&mut self, _: &MetricsRow) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Keeps rows in memory and remembers at which steps checkpoints were taken.
#[derive(Default)]
pub struct MemorySink {
    pub rows: Vec<MetricsRow>,
    pub checkpoint_steps: Vec<u64>,
}

impl TrainSink for MemorySink {
    fn metrics(&mut self, row: &MetricsRow) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainState) -> Result<()> {
        self.checkpoint_steps.push(state.step);
        Ok(())
    }
}

/// Appends rows to `<dir>/metrics.jsonl` and writes `<dir>/checkpoint_<step>.trvl`
/// plus a copy at `<dir>/latest.trvl`.
pub struct DirSink {
    dir: PathBuf,
    log: File,
}

impl DirSink {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.jsonl");
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
        })
    }

    pub fn latest_path(&self) -> PathBuf {
        self.dir.join("latest.trvl")
    }
}

impl TrainSink for DirSink {
    fn metrics(&mut self, row: &MetricsRow) -> Result<()> {
        let mut line = serde_json::to_vec(row)?;
        line.push(b'\n');
        let path = self.dir.join("metrics.jsonl");
        self.log.write_all(&line).map_err(|e| Error::io(path, e))
    }

    fn checkpoint(&mut self, state: &TrainState) -> Result<()> {
        let bytes = encode_checkpoint(state)?;
        for path in [
            self.dir.join(format!("checkpoint_{:06}.trvl", state.step)),
            self.latest_path(),
        ] {
            std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Trains from freshly initialized networks for `config.steps` steps.
pub fn train(
    config: TrainingConfig,
    dataset_x: &[Tensor<f32>],
    dataset_y: &[Tensor<f32>],
    sink: &mut dyn TrainSink,
) -> Result<TrainState> {
    let state = TrainState::init(config)?;
    resume(state, dataset_x, dataset_y, sink)
}

/// Continues `state` until `state.config.steps`, then emits a final checkpoint.
pub fn resume(
    mut state: TrainState,
    dataset_x: &[Tensor<f32>],
    dataset_y: &[Tensor<f32>],
    sink: &mut dyn TrainSink,
) -> Result<TrainState> {
    let batch = state.config.batch_size;
    let mut sampler_x = BatchSampler::restore(dataset_x.len(), batch, state.samplers[0])?;
    let mut sampler_y = BatchSampler::restore(dataset_y.len(), batch, state.samplers[1])?;
    let (every_ckpt, every_log) = (state.config.checkpoint_every, state.config.log_every);
    while state.step < state.config.steps {
        let started = Instant::now();
        let bx = gather_batch(dataset_x, &sampler_x.next_batch())?;
        let by = gather_batch(dataset_y, &sampler_y.next_batch())?;
        state.samplers = [sampler_x.state(), sampler_y.state()];
        let report = train_step(&mut state, &bx, &by)?;
        let row = MetricsRow::new(&report, started.elapsed().as_secs_f64() * 1e3);
        if every_log > 0 && report.step % every_log == 0 {
            log::info!(
                "step {} l_d {:.4} l_adv_g {:.4} l_travel {:.4} l_sc {:.4} ({:.0} ms)",
                row.step,
                row.l_d,
                row.l_adv_g,
                row.l_travel,
                row.l_sc,
                row.wall_ms
            );
        }
        sink.metrics(&row)?;
        if every_ckpt > 0 && state.step % every_ckpt == 0 && state.step < state.config.steps {
            sink.checkpoint(&state)?;
        }
    }
    sink.checkpoint(&state)?;
    Ok(state)
}
