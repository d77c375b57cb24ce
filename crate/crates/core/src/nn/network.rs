use rand::Rng;

use super::layer::{
    conv_backward, conv_forward, dense_backward, dense_forward, dueling_backward, dueling_forward,
    ConvGeom,
};
use super::{LayerSpec, NnError, Scalar, Tensor};

/// Parameter tensors of a sequential network, one (possibly empty) group per
/// layer, in the order given by [`LayerSpec::param_shapes`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights<T> {
    pub layers: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> NetworkWeights<T> {
    pub fn zeros(spec: &[LayerSpec]) -> Self {
        NetworkWeights {
            layers: spec
                .iter()
                .map(|l| l.param_shapes().iter().map(|s| Tensor::zeros(s)).collect())
                .collect(),
        }
    }

    /// Glorot-uniform kernels in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng>(spec: &[LayerSpec], rng: &mut R) -> Self {
        let layers = spec
            .iter()
            .map(|l| {
                l.param_shapes()
                    .iter()
                    .zip(l.fans())
                    .map(|(shape, (fan_in, fan_out))| {
                        if fan_in + fan_out == 0 {
                            return Tensor::zeros(shape);
                        }
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
                    })
                    .collect()
            })
            .collect();
        NetworkWeights { layers }
    }

    pub fn validate(&self, spec: &[LayerSpec]) -> Result<(), NnError> {
        if self.layers.len() != spec.len() {
            return Err(NnError::ParamMismatch(format!(
                "{} parameter groups for {} layers",
                self.layers.len(),
                spec.len()
            )));
        }
        for (i, (group, layer)) in self.layers.iter().zip(spec).enumerate() {
            let shapes = layer.param_shapes();
            if group.len() != shapes.len()
                || group.iter().zip(&shapes).any(|(t, s)| t.shape() != s.as_slice())
            {
                return Err(NnError::ParamMismatch(format!(
                    "layer {} ({}) expects parameter shapes {:?}",
                    i,
                    layer.kind_name(),
                    shapes
                )));
            }
        }
        Ok(())
    }

    pub fn same_shapes(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
            })
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flatten()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flatten()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().all(|t| t.data().iter().all(|v| *v == T::zero()))
    }

    pub fn cast<U: Scalar>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            layers: self
                .layers
                .iter()
                .map(|g| g.iter().map(Tensor::cast).collect())
                .collect(),
        }
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for &v in t.data() {
                h ^= v.bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h ^= t.len() as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Everything [`backward`] needs from a [`forward`] pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input to each layer (batch-major).
    inputs: Vec<Tensor<T>>,
    /// Output shape of the final layer.
    output_shape: Vec<usize>,
    /// Value and advantage streams of a dueling head, if present.
    streams: Option<(Tensor<T>, Tensor<T>)>,
    weights_fingerprint: u64,
    spec: Vec<LayerSpec>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Value-stream output `[n, 1]` of the dueling head.
    pub fn value_stream(&self) -> Option<&Tensor<T>> {
        self.streams.as_ref().map(|(v, _)| v)
    }

    /// Advantage-stream output `[n, actions]` of the dueling head.
    pub fn advantage_stream(&self) -> Option<&Tensor<T>> {
        self.streams.as_ref().map(|(_, a)| a)
    }

    pub fn layer_input(&self, layer: usize) -> Option<&Tensor<T>> {
        self.inputs.get(layer)
    }
}

/// Per-sample shape after every layer, starting with the input shape.
pub fn shape_flow(spec: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>, NnError> {
    let mut flow = vec![input.to_vec()];
    for (i, layer) in spec.iter().enumerate() {
        layer.validate(i)?;
        let next = layer.output_shape(i, flow.last().unwrap())?;
        flow.push(next);
    }
    Ok(flow)
}

/// Per-sample output shape of the whole network.
pub fn output_shape(spec: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>, NnError> {
    Ok(shape_flow(spec, input)?.pop().unwrap())
}

fn with_batch(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

/// Runs the network on a batch. `input` carries a leading batch axis.
pub fn forward<T: Scalar>(
    spec: &[LayerSpec],
    weights: &NetworkWeights<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
    weights.validate(spec)?;
    if input.shape().len() < 2 {
        return Err(NnError::ShapeMismatch {
            layer: 0,
            kind: spec.first().map(LayerSpec::kind_name).unwrap_or("input"),
            expected: "a leading batch axis".into(),
            got: input.shape().to_vec(),
        });
    }
    let batch = input.shape()[0];
    let flow = shape_flow(spec, &input.shape()[1..])?;

    let mut inputs = Vec::with_capacity(spec.len());
    let mut streams = None;
    let mut current = input.clone();
    for (i, layer) in spec.iter().enumerate() {
        let out_shape = with_batch(batch, &flow[i + 1]);
        let params = &weights.layers[i];
        let next = match *layer {
            LayerSpec::Conv { .. } => {
                let g = ConvGeom::new(layer, current.shape(), &out_shape);
                let mut out = Tensor::zeros(&out_shape);
                conv_forward(&g, current.data(), params[0].data(), params[1].data(), out.data_mut());
                out
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let mut out = Tensor::zeros(&out_shape);
                dense_forward(
                    current.data(),
                    in_dim,
                    params[0].data(),
                    params[1].data(),
                    out_dim,
                    out.data_mut(),
                );
                out
            }
            LayerSpec::Relu => {
                let data = current.data().iter().map(|&v| v.max(T::zero())).collect();
                Tensor::from_vec(&out_shape, data)?
            }
            LayerSpec::Flatten => current.clone().reshape(&out_shape)?,
            LayerSpec::DuelingSplit { in_dim, num_actions } => {
                let (q, v, a) = dueling_forward(current.data(), in_dim, params, num_actions);
                streams = Some((
                    Tensor::from_vec(&[batch, 1], v)?,
                    Tensor::from_vec(&[batch, num_actions], a)?,
                ));
                Tensor::from_vec(&out_shape, q)?
            }
        };
        inputs.push(std::mem::replace(&mut current, next));
    }
    let cache = ForwardCache {
        inputs,
        output_shape: current.shape().to_vec(),
        streams,
        weights_fingerprint: weights.fingerprint(),
        spec: spec.to_vec(),
    };
    Ok((current, cache))
}

/// Reverse-mode pass. Returns parameter gradients shaped like `weights` and
/// the gradient with respect to the network input.
pub fn backward<T: Scalar>(
    spec: &[LayerSpec],
    weights: &NetworkWeights<T>,
    cache: &ForwardCache<T>,
    output_grad: &Tensor<T>,
) -> Result<(NetworkWeights<T>, Tensor<T>), NnError> {
    backward_impl(spec, weights, cache, output_grad, true).map(|(g, dx)| (g, dx.unwrap()))
}

/// Like [`backward`] but skips the input gradient of the first layer.
pub(crate) fn backward_params<T: Scalar>(
    spec: &[LayerSpec],
    weights: &NetworkWeights<T>,
    cache: &ForwardCache<T>,
    output_grad: &Tensor<T>,
) -> Result<NetworkWeights<T>, NnError> {
    backward_impl(spec, weights, cache, output_grad, false).map(|(g, _)| g)
}

fn backward_impl<T: Scalar>(
    spec: &[LayerSpec],
    weights: &NetworkWeights<T>,
    cache: &ForwardCache<T>,
    output_grad: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(NetworkWeights<T>, Option<Tensor<T>>), NnError> {
    weights.validate(spec)?;
    if cache.spec != spec {
        return Err(NnError::StaleCache("produced by a different layer sequence".into()));
    }
    if cache.weights_fingerprint != weights.fingerprint() {
        return Err(NnError::StaleCache("weights changed since the forward pass".into()));
    }
    if output_grad.shape() != cache.output_shape.as_slice() {
        return Err(NnError::StaleCache(format!(
            "output gradient shape {:?} differs from forward output {:?}",
            output_grad.shape(),
            cache.output_shape
        )));
    }

    let mut grads = NetworkWeights::zeros(spec);
    let mut dcur = output_grad.clone();
    for i in (0..spec.len()).rev() {
        let layer = &spec[i];
        let input = &cache.inputs[i];
        let params = &weights.layers[i];
        let need_dx = want_input_grad || i > 0;
        let dx: Option<Vec<T>> = match *layer {
            LayerSpec::Conv { .. } => {
                let g = ConvGeom::new(layer, input.shape(), dcur.shape());
                let (dw, db, dx) =
                    conv_backward(&g, input.data(), params[0].data(), dcur.data(), need_dx);
                grads.layers[i][0].data_mut().copy_from_slice(&dw);
                grads.layers[i][1].data_mut().copy_from_slice(&db);
                dx
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let (dw, db, dx) =
                    dense_backward(input.data(), in_dim, params[0].data(), out_dim, dcur.data(), need_dx);
                grads.layers[i][0].data_mut().copy_from_slice(&dw);
                grads.layers[i][1].data_mut().copy_from_slice(&db);
                dx
            }
            LayerSpec::Relu => Some(
                input
                    .data()
                    .iter()
                    .zip(dcur.data())
                    .map(|(&x, &d)| if x > T::zero() { d } else { T::zero() })
                    .collect(),
            ),
            LayerSpec::Flatten => Some(dcur.data().to_vec()),
            LayerSpec::DuelingSplit { in_dim, num_actions } => {
                let (pg, dx) =
                    dueling_backward(input.data(), in_dim, params, num_actions, dcur.data(), need_dx);
                for (dst, src) in grads.layers[i].iter_mut().zip(pg) {
                    dst.data_mut().copy_from_slice(&src);
                }
                dx
            }
        };
        match dx {
            Some(d) => dcur = Tensor::from_vec(input.shape(), d)?,
            None => return Ok((grads, None)),
        }
    }
    Ok((grads, Some(dcur)))
}
