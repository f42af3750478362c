use crate::error::{NusaError, Result};

use super::{Gradients, Network};

/// Bias-corrected Adam moments for every parameter of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(net: &Network, learning_rate: f64) -> Self {
        AdamState {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of `net` in place.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let template = Gradients::zeros_like(net);
    if !template.same_shape(grads)
        || !template.same_shape(&state.first_moment)
        || !template.same_shape(&state.second_moment)
    {
        return Err(NusaError::invalid(
            "gradient or optimizer state shape does not match the network",
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    for (m, g) in state.first_moment.pairs_mut(grads) {
        m.iter_mut()
            .zip(g)
            .for_each(|(m, g)| *m = b1 * *m + (1.0 - b1) * g);
    }
    for (v, g) in state.second_moment.pairs_mut(grads) {
        v.iter_mut()
            .zip(g)
            .for_each(|(v, g)| *v = b2 * *v + (1.0 - b2) * g * g);
    }

    // Collect the per-parameter steps in the same flattened order as the
    // moments, then apply them layer by layer.
    let m = state.first_moment.flatten();
    let v = state.second_moment.flatten();
    let lr = state.learning_rate;
    let eps = state.epsilon;
    let mut idx = 0;
    let mut step = |p: &mut f64| {
        let m_hat = m[idx] / c1;
        let v_hat = v[idx] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
        idx += 1;
    };
    for (l, layer) in net.layers_mut().iter_mut().enumerate() {
        layer.weights.as_mut_slice().iter_mut().for_each(&mut step);
        if let Some(b) = layer.bias.as_mut() {
            let mut values = b.as_slice().to_vec();
            values.iter_mut().for_each(&mut step);
            *b = crate::linalg::DenseVector::new(values).map_err(|_| {
                NusaError::Numeric(format!("non-finite bias after Adam step in layer {l}"))
            })?;
        }
        if layer.weights.as_slice().iter().any(|w| !w.is_finite()) {
            return Err(NusaError::Numeric(format!(
                "non-finite weight after Adam step in layer {l}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use crate::rng::Rng;

    fn params(net: &Network) -> Vec<f64> {
        let mut g = Gradients::zeros_like(net);
        for (l, layer) in net.layers().iter().enumerate() {
            g.layers[l].weights = layer.weights().as_slice().to_vec();
            g.layers[l].bias = layer.bias().map(|b| b.as_slice().to_vec());
        }
        g.flatten()
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let mut rng = Rng::new(3);
        let mut net = Network::random(3, &[2], 2, Activation::Sigmoid, &mut rng).unwrap();
        let before = params(&net);
        let mut grads = Gradients::zeros_like(&net);
        // |g| >= 0.05 keeps eps/|g| well under the 1e-6 tolerance
        let scales = [5e-2, -2.0, 5e2, -7e-2];
        for (i, p) in grads.layers[0].weights.iter_mut().enumerate() {
            *p = scales[i % scales.len()];
        }
        let mut state = AdamState::new(&net, 0.01);
        adam_step(&mut net, &grads, &mut state).unwrap();
        let after = params(&net);
        let g = grads.flatten();
        for ((b, a), gi) in before.iter().zip(&after).zip(&g) {
            // hand evaluation at t=1: m_hat = g, v_hat = g^2
            let expected = if *gi == 0.0 {
                0.0
            } else {
                -0.01 * gi / (gi.abs() + 1e-8)
            };
            let delta = a - b;
            assert!(
                (delta - expected).abs() <= 1e-6 * 0.01,
                "{delta} vs {expected}"
            );
            if *gi != 0.0 {
                assert!((delta + 0.01 * gi.signum()).abs() <= 1e-6 * 0.01);
            }
        }
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut rng = Rng::new(3);
        let mut net = Network::random(3, &[2], 2, Activation::Sigmoid, &mut rng).unwrap();
        let before = net.clone();
        let grads = Gradients::zeros_like(&net);
        let mut state = AdamState::new(&net, 0.01);
        for _ in 0..10 {
            adam_step(&mut net, &grads, &mut state).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn deterministic_sequences() {
        let run = || {
            let mut rng = Rng::new(77);
            let mut net = Network::random(4, &[3], 2, Activation::Sigmoid, &mut rng).unwrap();
            let mut state = AdamState::new(&net, 0.01);
            for _ in 0..20 {
                let mut g = Gradients::zeros_like(&net);
                for layer in g.layers.iter_mut() {
                    layer.weights.iter_mut().for_each(|w| *w = rng.normal());
                }
                adam_step(&mut net, &g, &mut state).unwrap();
            }
            params(&net)
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = Rng::new(3);
        let mut a = Network::random(3, &[2], 2, Activation::Sigmoid, &mut rng).unwrap();
        let b = Network::random(3, &[4], 2, Activation::Sigmoid, &mut rng).unwrap();
        let mut state = AdamState::new(&a, 0.01);
        assert!(adam_step(&mut a, &Gradients::zeros_like(&b), &mut state).is_err());
    }
}
