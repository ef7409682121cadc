use crate::diffcore::{Graph, Scalar, Tensor};
use crate::networks::{Mode, NetworkParams};
use crate::{Error, Result};

/// A map whose vector-Jacobian products can be evaluated on a batch.
///
/// The map must act on each batch element independently, as an eval-mode
/// network does.
pub trait DifferentiableMap {
    /// Per-sample `(C, H, W)` input shape.
    fn input_shape(&self) -> Vec<usize>;
    /// Per-sample output shape.
    fn output_shape(&self) -> Vec<usize>;
    /// For inputs `(B, ..)` and output cotangents `(B, ..)`, returns `Jᵀ c` per sample.
    fn vjp(&self, inputs: &Tensor<f64>, cotangents: &Tensor<f64>) -> Result<Tensor<f64>>;
}

impl<T: Scalar> DifferentiableMap for NetworkParams<T> {
    fn input_shape(&self) -> Vec<usize> {
        vec![
            self.arch.channels,
            self.arch.image_size,
            self.arch.image_size,
        ]
    }

    fn output_shape(&self) -> Vec<usize> {
        let mut probe = Graph::<T>::new();
        let mut shape = vec![1];
        shape.extend(self.input_shape());
        let x = probe.constant(Tensor::zeros(&shape));
        match self.forward(&mut probe, x, Mode::Eval, false) {
            Ok(f) => probe.shape(f.output)[1..].to_vec(),
            Err(_) => Vec::new(),
        }
    }

    fn vjp(&self, inputs: &Tensor<f64>, cotangents: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut graph = Graph::<T>::new();
        let x = graph.param(inputs.cast());
        let out = self.forward(&mut graph, x, Mode::Eval, false)?;
        if graph.shape(out.output) != cotangents.shape() {
            return Err(Error::shape(
                "vjp cotangent",
                graph.shape(out.output),
                cotangents.shape(),
            ));
        }
        let c = graph.constant(cotangents.cast());
        let weighted = graph.mul(out.output, c)?;
        let probe = graph.sum(weighted);
        Ok(graph.backward(probe)?.wrt(x).cast())
    }
}

/// Per-input-pixel sensitivity map.
///
/// Each probe is the sum of the outputs in one `tile x tile` spatial block of
/// one output channel. The map at input pixel `p` is the L2 norm, over probes
/// and input channels, of `∂probe/∂x_p`. With `tile = 1` every probe is a
/// single output element and the map is exactly the column norm of the full
/// Jacobian; larger tiles trade exactness for `tile²` fewer backward passes.
/// Probes are evaluated `batch` at a time on copies of the input.
pub fn salience_map(
    map: &dyn DifferentiableMap,
    image: &Tensor<f64>,
    tile: usize,
    batch: usize,
) -> Result<Tensor<f64>> {
    let in_shape = map.input_shape();
    if image.shape() != in_shape.as_slice() {
        return Err(Error::shape("salience input", image.shape(), &in_shape));
    }
    let out_shape = map.output_shape();
    let (oc, oh, ow) = match *out_shape.as_slice() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::Config(format!(
                "salience needs image outputs, got {out_shape:?}"
            )))
        }
    };
    let tile = tile.max(1);
    let mut probes: Vec<(usize, usize, usize)> = Vec::new();
    for c in 0..oc {
        for ty in (0..oh).step_by(tile) {
            for tx in (0..ow).step_by(tile) {
                probes.push((c, ty, tx));
            }
        }
    }
    let (ic, ih, iw) = (in_shape[0], in_shape[1], in_shape[2]);
    let mut squared = vec![0.0; ih * iw];
    let out_len = oc * oh * ow;
    for group in probes.chunks(batch.max(1)) {
        let b = group.len();
        let inputs = Tensor::stack(&vec![image.clone(); b])?;
        let mut cot = vec![0.0; b * out_len];
        for (k, &(c, ty, tx)) in group.iter().enumerate() {
            for y in ty..(ty + tile).min(oh) {
                for x in tx..(tx + tile).min(ow) {
                    cot[k * out_len + (c * oh + y) * ow + x] = 1.0;
                }
            }
        }
        let mut cshape = vec![b];
        cshape.extend_from_slice(&out_shape);
        let grads = map.vjp(&inputs, &Tensor::new(cshape, cot)?)?;
        for g in grads.data().chunks(ic * ih * iw) {
            for ch in 0..ic {
                for (p, s) in squared.iter_mut().enumerate() {
                    *s += g[ch * ih * iw + p].powi(2);
                }
            }
        }
    }
    Tensor::new(vec![ih, iw], squared.into_iter().map(f64::sqrt).collect())
}
