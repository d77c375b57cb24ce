use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{backward_params, forward};
use super::{LayerSpec, NetworkWeights, NnError, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Approximate number of parameters to probe, spread over every tensor.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over probed parameters of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_relative_error: f64,
    /// Probes compared against the analytic gradient.
    pub checked: usize,
    /// Probes left out because `±step` flipped the sign of some ReLU input;
    /// the loss is not differentiable between those points.
    pub kinked: usize,
    /// Every probed analytic and numeric gradient was exactly zero.
    pub degenerate: bool,
    /// `(layer, tensor, index)` of the worst parameter.
    pub worst: Option<(usize, usize, usize)>,
}

/// Compares reverse-mode parameter gradients with central finite differences
/// of `loss`, which maps the network output to `(scalar, d scalar / d output)`.
pub fn grad_check<F>(
    spec: &[LayerSpec],
    weights: &NetworkWeights<f64>,
    input: &Tensor<f64>,
    loss: F,
    config: GradCheckConfig,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
{
    let (out, cache) = forward(spec, weights, input)?;
    let (_, dout) = loss(&out);
    let pattern = relu_pattern(spec, &cache);
    let analytic = backward_params(spec, weights, &cache, &dout)?;

    let locations: Vec<(usize, usize)> = weights
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, g)| (0..g.len()).map(move |p| (l, p)))
        .collect();
    let per_tensor = config.samples.div_ceil(locations.len().max(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut probe = weights.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        kinked: 0,
        degenerate: true,
        worst: None,
    };
    for (l, p) in locations {
        let len = weights.layers[l][p].len();
        let picks = sample(&mut rng, len, per_tensor.min(len));
        for idx in picks.iter() {
            let original = weights.layers[l][p].data()[idx];
            probe.layers[l][p].data_mut()[idx] = original + config.step;
            let (plus_out, plus_cache) = forward(spec, &probe, input)?;
            probe.layers[l][p].data_mut()[idx] = original - config.step;
            let (minus_out, minus_cache) = forward(spec, &probe, input)?;
            probe.layers[l][p].data_mut()[idx] = original;
            if relu_pattern(spec, &plus_cache) != pattern || relu_pattern(spec, &minus_cache) != pattern {
                report.kinked += 1;
                continue;
            }
            let plus = loss(&plus_out).0;
            let minus = loss(&minus_out).0;

            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic.layers[l][p].data()[idx];
            if a != 0.0 || numeric != 0.0 {
                report.degenerate = false;
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = Some((l, p, idx));
            }
            report.checked += 1;
        }
    }
    if report.degenerate {
        report.max_relative_error = 0.0;
    }
    Ok(report)
}

/// Which ReLU inputs are positive, over every ReLU layer.
fn relu_pattern<T: super::Scalar>(spec: &[LayerSpec], cache: &super::ForwardCache<T>) -> Vec<bool> {
    spec.iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Relu))
        .flat_map(|(i, _)| cache.layer_input(i).into_iter().flat_map(|t| t.data().iter().map(|&v| v > T::zero())))
        .collect()
}
