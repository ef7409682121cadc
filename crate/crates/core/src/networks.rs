//! Generator, discriminator and siamese encoder.
//!
//! Every network is described by a list of [`LayerSpec`]s produced by
//! [`layer_shape_plan`]; building a network realizes the planned parameter
//! shapes and forward passes replay the plan on a [`Graph`].

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{BnMode, Graph, ParameterSet, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Standard deviation of the normal initializer for kernels and weights.
pub const INIT_STD: f64 = 0.02;

/// Running batch-norm statistics keep this fraction of their old value.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
    Siamese,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// Pixels per side; a power of two, at least 16.
    pub image_size: usize,
    pub channels: usize,
    pub base_filters: usize,
    pub filter_cap_multiple: usize,
    pub latent_dim: usize,
}

impl ArchitectureSpec {
    pub fn new(image_size: usize, base_filters: usize) -> Self {
        Self {
            image_size,
            channels: 3,
            base_filters,
            filter_cap_multiple: 8,
            latent_dim: 1000,
        }
    }

    pub fn with_latent_dim(mut self, latent_dim: usize) -> Self {
        self.latent_dim = latent_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.image_size;
        if d < 16 || !d.is_power_of_two() {
            return Err(Error::Config(format!(
                "image size must be a power of two >= 16, got {d}"
            )));
        }
        if self.channels == 0 || self.base_filters == 0 || self.latent_dim == 0 {
            return Err(Error::Config(
                "channels, base filters and latent dim must be positive".into(),
            ));
        }
        if self.filter_cap_multiple == 0 {
            return Err(Error::Config("filter cap multiple must be positive".into()));
        }
        Ok(())
    }

    /// Stride-2 layers needed to bring the image down to 4x4.
    pub fn disc_depth(&self) -> usize {
        (self.image_size.trailing_zeros() as usize).saturating_sub(2)
    }

    fn cap(&self, filters: usize) -> usize {
        filters.min(self.filter_cap_multiple * self.base_filters)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    ConvS2,
    ConvTransposeS2,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
    Sigmoid,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub filters: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    /// Encoder layer whose activation is concatenated onto this layer's input.
    pub skip_source: Option<usize>,
}

/// One row of a static shape trace. Shapes exclude the batch axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlannedLayer {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub params: Vec<(String, Vec<usize>)>,
}

fn layer_params(spec: &LayerSpec, in_channels: usize) -> Vec<(String, Vec<usize>)> {
    let name = &spec.name;
    let mut params = match spec.kind {
        LayerKind::ConvS2 => vec![(
            format!("{name}.kernel"),
            vec![spec.filters, in_channels, 4, 4],
        )],
        LayerKind::ConvTransposeS2 => {
            vec![(
                format!("{name}.kernel"),
                vec![in_channels, spec.filters, 4, 4],
            )]
        }
        LayerKind::Dense => vec![(format!("{name}.weight"), vec![in_channels, spec.filters])],
    };
    if spec.batch_norm {
        params.push((format!("{name}.gain"), vec![spec.filters]));
        params.push((format!("{name}.shift"), vec![spec.filters]));
    } else {
        params.push((format!("{name}.bias"), vec![spec.filters]));
    }
    params
}

fn conv_trunk(arch: &ArchitectureSpec, head: usize, head_act: Activation) -> Vec<PlannedLayer> {
    let n = arch.base_filters;
    let mut layers = Vec::new();
    let mut channels = arch.channels;
    let mut extent = arch.image_size;
    for k in 0..arch.disc_depth() {
        let spec = LayerSpec {
            name: format!("conv{k}"),
            kind: LayerKind::ConvS2,
            filters: arch.cap(n << k),
            activation: Activation::LeakyRelu,
            batch_norm: k > 0,
            skip_source: None,
        };
        let params = layer_params(&spec, channels);
        let input_shape = vec![channels, extent, extent];
        extent /= 2;
        channels = spec.filters;
        layers.push(PlannedLayer {
            spec,
            input_shape,
            output_shape: vec![channels, extent, extent],
            params,
        });
    }
    let flat = channels * extent * extent;
    let spec = LayerSpec {
        name: "dense".into(),
        kind: LayerKind::Dense,
        filters: head,
        activation: head_act,
        batch_norm: false,
        skip_source: None,
    };
    let params = layer_params(&spec, flat);
    layers.push(PlannedLayer {
        spec,
        input_shape: vec![flat],
        output_shape: vec![head],
        params,
    });
    layers
}

fn encoder_filters(arch: &ArchitectureSpec, depth: usize) -> Vec<usize> {
    let n = arch.base_filters;
    let listed = [n, 2 * n, 4 * n, 4 * n, 4 * n];
    (0..depth)
        .map(|k| arch.cap(*listed.get(k).unwrap_or(&(4 * n))))
        .collect()
}

/// Decoder layers before the output layer: the tail of the listed
/// `8n, 8n, 8n, 4n, 2n` schedule, padded with `8n` for deeper networks.
fn decoder_filters(arch: &ArchitectureSpec, count: usize) -> Vec<usize> {
    let n = arch.base_filters;
    let listed = [8 * n, 8 * n, 8 * n, 4 * n, 2 * n];
    let mut filters: Vec<usize> = listed[listed.len().saturating_sub(count)..].to_vec();
    while filters.len() < count {
        filters.insert(0, 8 * n);
    }
    filters.into_iter().map(|f| arch.cap(f)).collect()
}

fn generator_plan(arch: &ArchitectureSpec) -> Vec<PlannedLayer> {
    let depth = arch.disc_depth();
    let enc = encoder_filters(arch, depth);
    let dec = decoder_filters(arch, depth - 1);
    let mut layers = Vec::new();
    let mut channels = arch.channels;
    let mut extent = arch.image_size;
    for (k, &filters) in enc.iter().enumerate() {
        let spec = LayerSpec {
            name: format!("enc{k}"),
            kind: LayerKind::ConvS2,
            filters,
            activation: Activation::LeakyRelu,
            batch_norm: true,
            skip_source: None,
        };
        let params = layer_params(&spec, channels);
        let input_shape = vec![channels, extent, extent];
        extent /= 2;
        channels = filters;
        layers.push(PlannedLayer {
            spec,
            input_shape,
            output_shape: vec![channels, extent, extent],
            params,
        });
    }
    let total_up = depth;
    for k in 0..total_up {
        let is_output = k == total_up - 1;
        let skip_source = (k > 0).then(|| depth - 1 - k);
        let in_channels = channels + skip_source.map_or(0, |s| enc[s]);
        let spec = LayerSpec {
            name: if is_output {
                "out".into()
            } else {
                format!("dec{k}")
            },
            kind: LayerKind::ConvTransposeS2,
            filters: if is_output { arch.channels } else { dec[k] },
            activation: if is_output {
                Activation::Tanh
            } else {
                Activation::LeakyRelu
            },
            batch_norm: !is_output,
            skip_source,
        };
        let params = layer_params(&spec, in_channels);
        let input_shape = vec![in_channels, extent, extent];
        extent *= 2;
        channels = spec.filters;
        layers.push(PlannedLayer {
            spec,
            input_shape,
            output_shape: vec![channels, extent, extent],
            params,
        });
    }
    layers
}

/// Complete static shape trace for a role.
pub fn layer_shape_plan(arch: &ArchitectureSpec, role: Role) -> Result<Vec<PlannedLayer>> {
    arch.validate()?;
    Ok(match role {
        Role::Generator => generator_plan(arch),
        Role::Discriminator => conv_trunk(arch, 1, Activation::Sigmoid),
        Role::Siamese => conv_trunk(arch, arch.latent_dim, Activation::Identity),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by a train-mode forward pass, per layer.
pub type StatUpdates<T> = Vec<(String, Vec<T>, Vec<T>)>;

pub struct Forward<T> {
    pub output: Var,
    /// Flattened activation feeding the dense head (discriminator and siamese).
    pub features: Option<Var>,
    pub params: BTreeMap<String, Var>,
    pub stats: StatUpdates<T>,
}

/// A built network: layer list, trainable parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub role: Role,
    pub arch: ArchitectureSpec,
    pub layers: Vec<LayerSpec>,
    pub params: ParameterSet<T>,
    /// `<layer>.running_mean` and `<layer>.running_var` for batch-norm layers.
    pub running: ParameterSet<T>,
}

pub fn build_generator<T: Scalar>(arch: &ArchitectureSpec, seed: u64) -> Result<NetworkParams<T>> {
    NetworkParams::build(arch, Role::Generator, seed)
}

pub fn build_discriminator<T: Scalar>(
    arch: &ArchitectureSpec,
    seed: u64,
) -> Result<NetworkParams<T>> {
    NetworkParams::build(arch, Role::Discriminator, seed)
}

pub fn build_siamese<T: Scalar>(arch: &ArchitectureSpec, seed: u64) -> Result<NetworkParams<T>> {
    NetworkParams::build(arch, Role::Siamese, seed)
}

impl<T: Scalar> NetworkParams<T> {
    pub fn build(arch: &ArchitectureSpec, role: Role, seed: u64) -> Result<Self> {
        let plan = layer_shape_plan(arch, role)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let mut running = ParameterSet::new();
        for layer in &plan {
            for (name, shape) in &layer.params {
                let value = if name.ends_with(".kernel") || name.ends_with(".weight") {
                    Tensor::randn(shape, INIT_STD, &mut rng)
                } else if name.ends_with(".gain") {
                    Tensor::full(shape, T::one())
                } else {
                    Tensor::zeros(shape)
                };
                params.insert(name.clone(), value)?;
            }
            if layer.spec.batch_norm {
                let f = layer.spec.filters;
                let name = &layer.spec.name;
                running.insert(format!("{name}.running_mean"), Tensor::zeros(&[f]))?;
                running.insert(format!("{name}.running_var"), Tensor::full(&[f], T::one()))?;
            }
        }
        let net = Self {
            role,
            arch: arch.clone(),
            layers: plan.into_iter().map(|l| l.spec).collect(),
            params,
            running,
        };
        net.verify_against_plan()?;
        Ok(net)
    }

    /// Reassembles a network from stored tensors, checking them against the plan.
    pub fn from_parts(
        arch: &ArchitectureSpec,
        role: Role,
        params: ParameterSet<T>,
        running: ParameterSet<T>,
    ) -> Result<Self> {
        let plan = layer_shape_plan(arch, role)?;
        let net = Self {
            role,
            arch: arch.clone(),
            layers: plan.into_iter().map(|l| l.spec).collect(),
            params,
            running,
        };
        net.verify_against_plan()?;
        let expected: ParameterSet<T> = net
            .layers
            .iter()
            .filter(|l| l.batch_norm)
            .flat_map(|l| {
                ["running_mean", "running_var"]
                    .map(|w| (format!("{}.{w}", l.name), Tensor::zeros(&[l.filters])))
            })
            .collect();
        expected.check_aligned(&net.running)?;
        Ok(net)
    }

    /// Checks that every realized parameter matches the planned shape exactly.
    pub fn verify_against_plan(&self) -> Result<()> {
        let plan = layer_shape_plan(&self.arch, self.role)?;
        let expected: BTreeMap<&str, &[usize]> = plan
            .iter()
            .flat_map(|l| l.params.iter().map(|(n, s)| (n.as_str(), s.as_slice())))
            .collect();
        if expected.len() != self.params.len() {
            return Err(Error::Config(format!(
                "{:?} has {} parameters, plan has {}",
                self.role,
                self.params.len(),
                expected.len()
            )));
        }
        for (name, tensor) in self.params.iter() {
            match expected.get(name) {
                Some(shape) if *shape == tensor.shape() => {}
                Some(shape) => return Err(Error::shape("parameter plan", shape, tensor.shape())),
                None => return Err(Error::Config(format!("unplanned parameter {name}"))),
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            role: self.role,
            arch: self.arch.clone(),
            layers: self.layers.clone(),
            params: self.params.cast(),
            running: self.running.cast(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Records `input` on `graph` and replays the layer list on it. With
    /// `trainable` the parameters become gradient-carrying leaves.
    pub fn forward(
        &self,
        graph: &mut Graph<T>,
        input: Var,
        mode: Mode,
        trainable: bool,
    ) -> Result<Forward<T>> {
        let d = self.arch.image_size;
        let expected = [self.arch.channels, d, d];
        let shape = graph.shape(input);
        if shape.len() != 4 || shape[1..] != expected {
            return Err(Error::shape("network input", shape, &expected));
        }
        let mut bound = BTreeMap::new();
        for (name, value) in self.params.iter() {
            let var = if trainable {
                graph.param(value.clone())
            } else {
                graph.constant(value.clone())
            };
            bound.insert(name.to_string(), var);
        }
        let mut stats = Vec::new();
        let mut encoder_outputs: Vec<Var> = Vec::new();
        let mut features = None;
        let mut x = input;
        for spec in &self.layers {
            let p = |role: &str| bound[&format!("{}.{role}", spec.name)];
            let bias = (!spec.batch_norm).then(|| p("bias"));
            if let Some(src) = spec.skip_source {
                x = graph.concat_channels(x, encoder_outputs[src])?;
            }
            x = match spec.kind {
                LayerKind::ConvS2 => graph.conv2d_s2(x, p("kernel"), bias)?,
                LayerKind::ConvTransposeS2 => graph.conv_transpose2d_s2(x, p("kernel"), bias)?,
                LayerKind::Dense => {
                    let flat = graph.flatten(x)?;
                    features = Some(flat);
                    graph.dense(flat, p("weight"), bias)?
                }
            };
            if spec.batch_norm {
                let (gain, shift) = (p("gain"), p("shift"));
                let (y, batch) = match mode {
                    Mode::Train => graph.batch_norm(x, gain, shift, BnMode::Train)?,
                    Mode::Eval => {
                        let mean = self.running_stat(&spec.name, "running_mean")?;
                        let var = self.running_stat(&spec.name, "running_var")?;
                        graph.batch_norm(
                            x,
                            gain,
                            shift,
                            BnMode::Eval {
                                mean: mean.data(),
                                var: var.data(),
                            },
                        )?
                    }
                };
                if let Some((mean, var)) = batch {
                    stats.push((spec.name.clone(), mean, var));
                }
                x = y;
            }
            x = match spec.activation {
                Activation::LeakyRelu => graph.leaky_relu(x),
                Activation::Tanh => graph.tanh(x),
                Activation::Sigmoid => graph.sigmoid(x),
                Activation::Identity => x,
            };
            if spec.name.starts_with("enc") {
                encoder_outputs.push(x);
            }
        }
        Ok(Forward {
            output: x,
            features,
            params: bound,
            stats,
        })
    }

    fn running_stat(&self, layer: &str, which: &str) -> Result<&Tensor<T>> {
        self.running
            .get(&format!("{layer}.{which}"))
            .ok_or_else(|| Error::Config(format!("missing {which} for {layer}")))
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn commit_stats(&mut self, stats: &StatUpdates<T>) {
        let keep = T::of(BN_MOMENTUM);
        let take = T::of(1.0 - BN_MOMENTUM);
        for (layer, mean, var) in stats {
            for (which, batch) in [("running_mean", mean), ("running_var", var)] {
                if let Some(r) = self.running.get_mut(&format!("{layer}.{which}")) {
                    for (rv, &bv) in r.data_mut().iter_mut().zip(batch) {
                        *rv = keep * *rv + take * bv;
                    }
                }
            }
        }
    }

    /// Eval-mode forward without gradients.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let x = graph.constant(batch.clone());
        let out = self.forward(&mut graph, x, Mode::Eval, false)?;
        Ok(graph.value(out.output).clone())
    }

    /// Eval-mode flattened trunk activation (the input of the dense head).
    pub fn infer_features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let x = graph.constant(batch.clone());
        let out = self.forward(&mut graph, x, Mode::Eval, false)?;
        let features = out
            .features
            .ok_or_else(|| Error::Config("generator has no feature trunk".into()))?;
        Ok(graph.value(features).clone())
    }

    /// [`infer`](Self::infer) over a long list of images in chunks.
    pub fn infer_many(&self, images: &[Tensor<T>], chunk: usize) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::with_capacity(images.len());
        for part in images.chunks(chunk.max(1)) {
            out.extend(self.infer(&Tensor::stack(part)?)?.unstack());
        }
        Ok(out)
    }
}
