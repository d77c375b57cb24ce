use super::{LayerSpec, NetworkWeights, NnError, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    /// `w <- w - lr * g`.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators mirroring the network weights plus a step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub first_moment: NetworkWeights<T>,
    pub second_moment: NetworkWeights<T>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, spec: &[LayerSpec]) -> Self {
        OptimizerState {
            kind,
            first_moment: NetworkWeights::zeros(spec),
            second_moment: NetworkWeights::zeros(spec),
            step: 0,
        }
    }

    /// Applies one update in place. Gradients are checked for finiteness
    /// before anything is modified.
    pub fn apply_update(
        &mut self,
        weights: &mut NetworkWeights<T>,
        grads: &NetworkWeights<T>,
        learning_rate: f64,
    ) -> Result<(), NnError> {
        if !weights.same_shapes(grads)
            || !weights.same_shapes(&self.first_moment)
            || !weights.same_shapes(&self.second_moment)
        {
            return Err(NnError::ParamMismatch(
                "weights, gradients and optimizer state must share shapes".into(),
            ));
        }
        for (l, group) in grads.layers.iter().enumerate() {
            for (p, t) in group.iter().enumerate() {
                if !t.is_finite() {
                    return Err(NnError::NonFiniteGradient { layer: l, param: p });
                }
            }
        }

        self.step += 1;
        let lr = T::from_f64(learning_rate);
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in weights.tensors_mut().zip(grads.tensors()) {
                    for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
                        *wv = *wv - lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let correction1 = T::from_f64(1.0 - beta1.powi(t));
                let correction2 = T::from_f64(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (T::from_f64(beta1), T::from_f64(beta2), T::from_f64(eps));
                let one = T::one();
                let moments = self
                    .first_moment
                    .tensors_mut()
                    .zip(self.second_moment.tensors_mut());
                for ((w, g), (m, v)) in weights.tensors_mut().zip(grads.tensors()).zip(moments) {
                    let w = w.data_mut().iter_mut();
                    let mv = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
                    for ((wv, &gv), (mv, vv)) in w.zip(g.data()).zip(mv) {
                        *mv = b1 * *mv + (one - b1) * gv;
                        *vv = b2 * *vv + (one - b2) * gv * gv;
                        let m_hat = *mv / correction1;
                        let v_hat = *vv / correction2;
                        *wv = *wv - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> Vec<LayerSpec> {
        vec![LayerSpec::Dense { in_dim: 3, out_dim: 2 }]
    }

    #[test]
    fn sgd_step_is_w_minus_lr_g() {
        let spec = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = NetworkWeights::<f32>::glorot(&spec, &mut rng);
        let before = w.clone();
        let mut g = NetworkWeights::<f32>::zeros(&spec);
        for t in g.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, &spec);
        opt.apply_update(&mut w, &g, 0.25).unwrap();
        for ((a, b), gr) in w.tensors().zip(before.tensors()).zip(g.tensors()) {
            for ((&after, &orig), &gv) in a.data().iter().zip(b.data()).zip(gr.data()) {
                assert_eq!(after, orig - 0.25f32 * gv);
            }
        }
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_grads_leave_weights_and_count_step() {
        let spec = spec();
        let mut w = NetworkWeights::<f32>::glorot(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        let before = w.clone();
        let g = NetworkWeights::zeros(&spec);
        for kind in [OptimizerKind::Sgd, OptimizerKind::adam()] {
            let mut opt = OptimizerState::new(kind, &spec);
            opt.apply_update(&mut w, &g, 1e-3).unwrap();
            assert_eq!(w, before);
            assert_eq!(opt.step, 1);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let spec = spec();
        let mut w = NetworkWeights::<f32>::glorot(&spec, &mut ChaCha8Rng::seed_from_u64(5));
        let before = w.clone();
        let mut g = NetworkWeights::<f32>::zeros(&spec);
        g.layers[0][1].data_mut()[1] = f32::NAN;
        let mut opt = OptimizerState::new(OptimizerKind::adam(), &spec);
        let err = opt.apply_update(&mut w, &g, 1e-3).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient { layer: 0, param: 1 });
        assert_eq!(w, before);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn identical_update_sequences_are_bit_identical() {
        let run = || {
            let spec = spec();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut w = NetworkWeights::<f32>::glorot(&spec, &mut rng);
            let mut opt = OptimizerState::new(OptimizerKind::adam(), &spec);
            for _ in 0..50 {
                let mut g = NetworkWeights::<f32>::zeros(&spec);
                for t in g.tensors_mut() {
                    *t = Tensor::from_fn(t.shape(), |_| rng.gen_range(-1.0..1.0));
                }
                opt.apply_update(&mut w, &g, 1e-2).unwrap();
            }
            (w, opt)
        };
        let (w1, o1) = run();
        let (w2, o2) = run();
        assert_eq!(w1.fingerprint(), w2.fingerprint());
        assert_eq!(o1, o2);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // With bias correction the first Adam step is lr * g / (|g| + eps).
        let spec = spec();
        let mut w = NetworkWeights::<f64>::zeros(&spec);
        let mut g = NetworkWeights::<f64>::zeros(&spec);
        g.layers[0][0].data_mut()[0] = 4.0;
        g.layers[0][0].data_mut()[1] = -0.5;
        let mut opt = OptimizerState::new(OptimizerKind::adam(), &spec);
        opt.apply_update(&mut w, &g, 0.1).unwrap();
        let d = w.layers[0][0].data();
        assert!((d[0] + 0.1).abs() < 1e-8);
        assert!((d[1] - 0.1).abs() < 1e-7);
    }
}
