use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::{NnError, Scalar, Tensor};

/// One layer of a sequential network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// 2-D convolution over NHWC input with symmetric zero padding.
    Conv {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        in_channels: usize,
        out_channels: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    /// Collapses every non-batch axis into one.
    Flatten,
    /// Value stream (`in -> 1`) and advantage stream (`in -> actions`)
    /// recombined as `Q = V + A - mean(A)`.
    DuelingSplit {
        in_dim: usize,
        num_actions: usize,
    },
}

/// Output extent of a strided convolution, or `None` if the kernel does not
/// fit in the padded input.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (0, 0),
            in_channels,
            out_channels,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::DuelingSplit { .. } => "dueling-split",
        }
    }

    pub(crate) fn validate(&self, index: usize) -> Result<(), NnError> {
        let bad = |reason: &str| {
            Err(NnError::InvalidSpec {
                layer: index,
                reason: reason.to_string(),
            })
        };
        match *self {
            LayerSpec::Conv {
                kernel,
                stride,
                in_channels,
                out_channels,
                ..
            } => {
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return bad("kernel and stride must be positive");
                }
                if in_channels == 0 || out_channels == 0 {
                    return bad("channel counts must be positive");
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return bad("dimensions must be positive");
                }
            }
            LayerSpec::DuelingSplit { in_dim, num_actions } => {
                if in_dim == 0 || num_actions == 0 {
                    return bad("dimensions must be positive");
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = |expected: String| NnError::ShapeMismatch {
            layer: index,
            kind: self.kind_name(),
            expected,
            got: input.to_vec(),
        };
        match *self {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                in_channels,
                out_channels,
            } => {
                if input.len() != 3 || input[2] != in_channels {
                    return Err(mismatch(format!("[h, w, {}]", in_channels)));
                }
                let oh = conv_output_size(input[0], kernel.0, stride.0, padding.0);
                let ow = conv_output_size(input[1], kernel.1, stride.1, padding.1);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![oh, ow, out_channels]),
                    _ => Err(mismatch(format!(
                        "spatial extent of at least {}x{} after padding",
                        kernel.0, kernel.1
                    ))),
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return Err(mismatch(format!("[{}]", in_dim)));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::DuelingSplit { in_dim, num_actions } => {
                if input != [in_dim] {
                    return Err(mismatch(format!("[{}]", in_dim)));
                }
                Ok(vec![num_actions])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => vec![
                vec![kernel.0, kernel.1, in_channels, out_channels],
                vec![out_channels],
            ],
            LayerSpec::Dense { in_dim, out_dim } => vec![vec![in_dim, out_dim], vec![out_dim]],
            LayerSpec::DuelingSplit { in_dim, num_actions } => vec![
                vec![in_dim, 1],
                vec![1],
                vec![in_dim, num_actions],
                vec![num_actions],
            ],
            LayerSpec::Relu | LayerSpec::Flatten => vec![],
        }
    }

    /// Glorot fan-in / fan-out for each parameter tensor (biases report zero).
    pub(crate) fn fans(&self) -> Vec<(usize, usize)> {
        match *self {
            LayerSpec::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => {
                let area = kernel.0 * kernel.1;
                vec![(area * in_channels, area * out_channels), (0, 0)]
            }
            LayerSpec::Dense { in_dim, out_dim } => vec![(in_dim, out_dim), (0, 0)],
            LayerSpec::DuelingSplit { in_dim, num_actions } => {
                vec![(in_dim, 1), (0, 0), (in_dim, num_actions), (0, 0)]
            }
            LayerSpec::Relu | LayerSpec::Flatten => vec![],
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                in_channels,
                out_channels,
            } => write!(
                f,
                "conv kernel={}x{} stride={}x{} padding={}x{} in={} out={}",
                kernel.0, kernel.1, stride.0, stride.1, padding.0, padding.1, in_channels, out_channels
            ),
            LayerSpec::Dense { in_dim, out_dim } => write!(f, "dense in={} out={}", in_dim, out_dim),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::DuelingSplit { in_dim, num_actions } => {
                write!(f, "dueling-split in={} actions={}", in_dim, num_actions)
            }
        }
    }
}

impl FromStr for LayerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or("empty layer description")?;
        let mut fields = std::collections::HashMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| format!("malformed field `{}`", w))?;
            fields.insert(k, v);
        }
        let get = |key: &str| -> Result<usize, String> {
            fields
                .get(key)
                .ok_or_else(|| format!("{} layer is missing `{}`", kind, key))?
                .parse()
                .map_err(|e| format!("bad `{}`: {}", key, e))
        };
        let pair = |key: &str| -> Result<(usize, usize), String> {
            let v = fields
                .get(key)
                .ok_or_else(|| format!("{} layer is missing `{}`", kind, key))?;
            let (a, b) = v.split_once('x').ok_or_else(|| format!("bad `{}`: {}", key, v))?;
            Ok((
                a.parse().map_err(|e| format!("bad `{}`: {}", key, e))?,
                b.parse().map_err(|e| format!("bad `{}`: {}", key, e))?,
            ))
        };
        match kind {
            "conv" => Ok(LayerSpec::Conv {
                kernel: pair("kernel")?,
                stride: pair("stride")?,
                padding: pair("padding")?,
                in_channels: get("in")?,
                out_channels: get("out")?,
            }),
            "dense" => Ok(LayerSpec::Dense {
                in_dim: get("in")?,
                out_dim: get("out")?,
            }),
            "relu" => Ok(LayerSpec::Relu),
            "flatten" => Ok(LayerSpec::Flatten),
            "dueling-split" => Ok(LayerSpec::DuelingSplit {
                in_dim: get("in")?,
                num_actions: get("actions")?,
            }),
            other => Err(format!("unknown layer kind `{}`", other)),
        }
    }
}

// ---------------------------------------------------------------------------
// Kernels. Inputs are batch-major; shapes were validated by the caller.

pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub oh: usize,
    pub ow: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn new(spec: &LayerSpec, input: &[usize], output: &[usize]) -> Self {
        let LayerSpec::Conv {
            kernel,
            stride,
            padding,
            ..
        } = *spec
        else {
            unreachable!("ConvGeom on a non-conv layer")
        };
        ConvGeom {
            n: input[0],
            h: input[1],
            w: input[2],
            cin: input[3],
            oh: output[1],
            ow: output[2],
            cout: output[3],
            kh: kernel.0,
            kw: kernel.1,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
        }
    }

    /// Input coordinate for output coordinate `o` and kernel offset `k`.
    #[inline]
    fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = o * stride + k;
        if pos < pad || pos - pad >= extent {
            None
        } else {
            Some(pos - pad)
        }
    }
}

#[inline]
fn axpy<T: Scalar>(acc: &mut [T], alpha: T, x: &[T]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub(crate) fn conv_forward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let row_len = g.ow * g.cout;
    out.par_chunks_mut(row_len).enumerate().for_each(|(row, out_row)| {
        let n = row / g.oh;
        let oy = row % g.oh;
        for ox in 0..g.ow {
            let acc = &mut out_row[ox * g.cout..(ox + 1) * g.cout];
            acc.copy_from_slice(bias);
            for ky in 0..g.kh {
                let Some(iy) = ConvGeom::source(oy, ky, g.sh, g.ph, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = ConvGeom::source(ox, kx, g.sw, g.pw, g.w) else {
                        continue;
                    };
                    let base = ((n * g.h + iy) * g.w + ix) * g.cin;
                    let x = &input[base..base + g.cin];
                    let wblock = &weight[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ci, &xv) in x.iter().enumerate() {
                        if xv != T::zero() {
                            axpy(acc, xv, &wblock[ci * g.cout..(ci + 1) * g.cout]);
                        }
                    }
                }
            }
        }
    });
}

/// Returns (kernel grad, bias grad, optional input grad).
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    weight: &[T],
    dout: &[T],
    want_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let block = g.cin * g.cout;
    let mut dw = vec![T::zero(); g.kh * g.kw * block];
    // Each (ky, kx) block accumulates over every output position in a fixed
    // order, so the parallel split is deterministic.
    dw.par_chunks_mut(block).enumerate().for_each(|(k, dblock)| {
        let ky = k / g.kw;
        let kx = k % g.kw;
        for n in 0..g.n {
            for oy in 0..g.oh {
                let Some(iy) = ConvGeom::source(oy, ky, g.sh, g.ph, g.h) else {
                    continue;
                };
                for ox in 0..g.ow {
                    let Some(ix) = ConvGeom::source(ox, kx, g.sw, g.pw, g.w) else {
                        continue;
                    };
                    let base = ((n * g.h + iy) * g.w + ix) * g.cin;
                    let x = &input[base..base + g.cin];
                    let d = &dout[((n * g.oh + oy) * g.ow + ox) * g.cout..][..g.cout];
                    for (ci, &xv) in x.iter().enumerate() {
                        if xv != T::zero() {
                            axpy(&mut dblock[ci * g.cout..(ci + 1) * g.cout], xv, d);
                        }
                    }
                }
            }
        }
    });

    let mut db = vec![T::zero(); g.cout];
    for d in dout.chunks(g.cout) {
        for (b, &v) in db.iter_mut().zip(d) {
            *b += v;
        }
    }

    let dx = want_input_grad.then(|| {
        let per_sample = g.h * g.w * g.cin;
        let mut dx = vec![T::zero(); g.n * per_sample];
        dx.par_chunks_mut(per_sample).enumerate().for_each(|(n, dxs)| {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let d = &dout[((n * g.oh + oy) * g.ow + ox) * g.cout..][..g.cout];
                    if d.iter().all(|&v| v == T::zero()) {
                        continue;
                    }
                    for ky in 0..g.kh {
                        let Some(iy) = ConvGeom::source(oy, ky, g.sh, g.ph, g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let Some(ix) = ConvGeom::source(ox, kx, g.sw, g.pw, g.w) else {
                                continue;
                            };
                            let base = (iy * g.w + ix) * g.cin;
                            let wblock = &weight[(ky * g.kw + kx) * block..][..block];
                            for ci in 0..g.cin {
                                dxs[base + ci] += dot(&wblock[ci * g.cout..(ci + 1) * g.cout], d);
                            }
                        }
                    }
                }
            }
        });
        dx
    });
    (dw, db, dx)
}

/// `out[n, :] = bias + x[n, :] · weight` with `weight` laid out `[in, out]`.
pub(crate) fn dense_forward<T: Scalar>(
    input: &[T],
    in_dim: usize,
    weight: &[T],
    bias: &[T],
    out_dim: usize,
    out: &mut [T],
) {
    out.par_chunks_mut(out_dim).enumerate().for_each(|(n, o)| {
        o.copy_from_slice(bias);
        let x = &input[n * in_dim..(n + 1) * in_dim];
        for (i, &xv) in x.iter().enumerate() {
            if xv != T::zero() {
                axpy(o, xv, &weight[i * out_dim..(i + 1) * out_dim]);
            }
        }
    });
}

pub(crate) fn dense_backward<T: Scalar>(
    input: &[T],
    in_dim: usize,
    weight: &[T],
    out_dim: usize,
    dout: &[T],
    want_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let batch = dout.len() / out_dim;
    let mut dw = vec![T::zero(); in_dim * out_dim];
    dw.par_chunks_mut(out_dim).enumerate().for_each(|(i, row)| {
        for n in 0..batch {
            let xv = input[n * in_dim + i];
            if xv != T::zero() {
                axpy(row, xv, &dout[n * out_dim..(n + 1) * out_dim]);
            }
        }
    });
    let mut db = vec![T::zero(); out_dim];
    for d in dout.chunks(out_dim) {
        for (b, &v) in db.iter_mut().zip(d) {
            *b += v;
        }
    }
    let dx = want_input_grad.then(|| {
        let mut dx = vec![T::zero(); batch * in_dim];
        dx.par_chunks_mut(in_dim).enumerate().for_each(|(n, dxs)| {
            let d = &dout[n * out_dim..(n + 1) * out_dim];
            for (i, v) in dxs.iter_mut().enumerate() {
                *v = dot(&weight[i * out_dim..(i + 1) * out_dim], d);
            }
        });
        dx
    });
    (dw, db, dx)
}

/// Dueling merge. Returns `(q, value, advantage)` flattened per batch row.
pub(crate) fn dueling_forward<T: Scalar>(
    input: &[T],
    in_dim: usize,
    params: &[Tensor<T>],
    actions: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let batch = input.len() / in_dim;
    let mut value = vec![T::zero(); batch];
    let mut adv = vec![T::zero(); batch * actions];
    dense_forward(input, in_dim, params[0].data(), params[1].data(), 1, &mut value);
    dense_forward(input, in_dim, params[2].data(), params[3].data(), actions, &mut adv);
    let inv = T::one() / T::from_f64(actions as f64);
    let mut q = vec![T::zero(); batch * actions];
    for n in 0..batch {
        let a = &adv[n * actions..(n + 1) * actions];
        let mean = a.iter().copied().sum::<T>() * inv;
        for (qv, &av) in q[n * actions..(n + 1) * actions].iter_mut().zip(a) {
            *qv = value[n] + (av - mean);
        }
    }
    (q, value, adv)
}

pub(crate) fn dueling_backward<T: Scalar>(
    input: &[T],
    in_dim: usize,
    params: &[Tensor<T>],
    actions: usize,
    dq: &[T],
    want_input_grad: bool,
) -> (Vec<Vec<T>>, Option<Vec<T>>) {
    let batch = dq.len() / actions;
    let inv = T::one() / T::from_f64(actions as f64);
    let mut dvalue = vec![T::zero(); batch];
    let mut dadv = vec![T::zero(); batch * actions];
    for n in 0..batch {
        let d = &dq[n * actions..(n + 1) * actions];
        let total = d.iter().copied().sum::<T>();
        dvalue[n] = total;
        let mean = total * inv;
        for (da, &dv) in dadv[n * actions..(n + 1) * actions].iter_mut().zip(d) {
            *da = dv - mean;
        }
    }
    let (dwv, dbv, dxv) = dense_backward(input, in_dim, params[0].data(), 1, &dvalue, want_input_grad);
    let (dwa, dba, dxa) =
        dense_backward(input, in_dim, params[2].data(), actions, &dadv, want_input_grad);
    let dx = match (dxv, dxa) {
        (Some(mut a), Some(b)) => {
            for (x, y) in a.iter_mut().zip(&b) {
                *x += *y;
            }
            Some(a)
        }
        _ => None,
    };
    (vec![dwv, dbv, dwa, dba], dx)
}
