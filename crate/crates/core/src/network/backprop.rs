use crate::error::{NusaError, Result};

use super::{ForwardTrace, Network};

/// Gradient of one layer's parameters; `weights` is row-major like the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights().as_slice().len()],
                    bias: l.bias().map(|b| vec![0.0; b.dim()]),
                })
                .collect(),
        }
    }

    fn slices(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weights).chain(l.bias.as_ref()))
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weights).chain(l.bias.as_mut()))
    }

    pub fn same_shape(&self, other: &Gradients) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .slices()
                .zip(other.slices())
                .all(|(a, b)| a.len() == b.len())
            && self.slices().count() == other.slices().count()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.slices_mut().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// All entries in layer order: weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.slices().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn pairs_mut<'a>(
        &'a mut self,
        other: &'a Gradients,
    ) -> impl Iterator<Item = (&'a mut Vec<f64>, &'a Vec<f64>)> {
        self.slices_mut().zip(other.slices())
    }
}

/// Extra gradient terms added during backpropagation: `inputs[l]` is added
/// to the gradient with respect to layer `l`'s input, `weights[l]` to its
/// weight gradient.
#[derive(Debug, Clone, Default)]
pub(crate) struct Injection {
    pub inputs: Vec<Option<Vec<f64>>>,
    pub weights: Vec<Option<Vec<f64>>>,
}

fn check_trace(net: &Network, trace: &ForwardTrace) -> Result<()> {
    let n = net.layers().len();
    if trace.layer_inputs.len() != n || trace.pre_activations.len() != n {
        return Err(NusaError::invalid(format!(
            "trace has {} layers, network has {n}",
            trace.layer_inputs.len()
        )));
    }
    for (layer, (x, z)) in net
        .layers()
        .iter()
        .zip(trace.layer_inputs.iter().zip(&trace.pre_activations))
    {
        if x.dim() != layer.in_dim() || z.dim() != layer.out_dim() {
            return Err(NusaError::invalid("trace does not match network shapes"));
        }
    }
    if trace.output.dim() != net.num_classes() {
        return Err(NusaError::invalid("trace output does not match network"));
    }
    Ok(())
}

/// Exact gradient of the softmax cross-entropy loss for one sample.
pub fn backward(net: &Network, trace: &ForwardTrace, label: usize) -> Result<Gradients> {
    backward_with_injection(net, trace, label, None)
}

pub(crate) fn backward_with_injection(
    net: &Network,
    trace: &ForwardTrace,
    label: usize,
    injection: Option<&Injection>,
) -> Result<Gradients> {
    check_trace(net, trace)?;
    if label >= net.num_classes() {
        return Err(NusaError::LabelOutOfRange {
            label,
            num_classes: net.num_classes(),
        });
    }
    let mut grads = Gradients::zeros_like(net);

    // d loss / d (final activation output) = p - onehot
    let mut upstream: Vec<f64> = trace.output.as_slice().to_vec();
    upstream[label] -= 1.0;

    for l in (0..net.layers().len()).rev() {
        let layer = &net.layers()[l];
        let z = trace.pre_activations[l].as_slice();
        let delta: Vec<f64> = upstream
            .iter()
            .zip(z)
            .map(|(g, &t)| g * layer.activation().derivative(t))
            .collect();
        let x = trace.layer_inputs[l].as_slice();
        let gl = &mut grads.layers[l];
        let cols = layer.in_dim();
        for (i, &d) in delta.iter().enumerate() {
            let row = &mut gl.weights[i * cols..(i + 1) * cols];
            row.iter_mut().zip(x).for_each(|(g, xi)| *g = d * xi);
        }
        if let Some(b) = gl.bias.as_mut() {
            b.copy_from_slice(&delta);
        }
        let mut gx = layer.weights().matvec_transposed_slice(&delta);
        if let Some(inj) = injection {
            if let Some(Some(extra)) = inj.weights.get(l) {
                gl.weights.iter_mut().zip(extra).for_each(|(g, e)| *g += e);
            }
            if let Some(Some(extra)) = inj.inputs.get(l) {
                gx.iter_mut().zip(extra).for_each(|(g, e)| *g += e);
            }
        }
        upstream = gx;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseVector;
    use crate::network::{cross_entropy_loss, Activation};
    use crate::rng::Rng;

    fn loss_at(net: &Network, x: &DenseVector, label: usize) -> f64 {
        let t = net.forward_with_trace(x).unwrap();
        cross_entropy_loss(&t.output, label).unwrap()
    }

    /// Central finite differences over every parameter.
    fn numeric_gradient(net: &Network, x: &DenseVector, label: usize, h: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..net.layers().len() {
            let nw = net.layers()[l].weights().as_slice().len();
            for k in 0..nw {
                let mut plus = net.clone();
                plus.layers_mut()[l].weights.as_mut_slice()[k] += h;
                let mut minus = net.clone();
                minus.layers_mut()[l].weights.as_mut_slice()[k] -= h;
                out.push((loss_at(&plus, x, label) - loss_at(&minus, x, label)) / (2.0 * h));
            }
            let nb = net.layers()[l].bias().map_or(0, DenseVector::dim);
            for k in 0..nb {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut bp = plus.layers()[l].bias().unwrap().as_slice().to_vec();
                bp[k] += h;
                plus.layers_mut()[l].bias = Some(DenseVector::new(bp).unwrap());
                let mut bm = minus.layers()[l].bias().unwrap().as_slice().to_vec();
                bm[k] -= h;
                minus.layers_mut()[l].bias = Some(DenseVector::new(bm).unwrap());
                out.push((loss_at(&plus, x, label) - loss_at(&minus, x, label)) / (2.0 * h));
            }
        }
        out
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = Rng::new(31);
        let net = Network::random(8, &[6], 3, Activation::Sigmoid, &mut rng).unwrap();
        for trial in 0..5 {
            let x = DenseVector::new((0..8).map(|_| rng.normal()).collect()).unwrap();
            let label = trial % 3;
            let t = net.forward_with_trace(&x).unwrap();
            let g = backward(&net, &t, label).unwrap().flatten();
            let n = numeric_gradient(&net, &x, label, 1e-5);
            for (a, b) in g.iter().zip(&n) {
                let scale = a.abs().max(b.abs());
                if scale > 1e-6 {
                    assert!((a - b).abs() / scale < 1e-4, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn saturated_correct_prediction_has_no_gradient() {
        use crate::linalg::DenseMatrix;
        use crate::network::DenseLayer;
        let w = DenseMatrix::from_rows(&[vec![100.0, 0.0], vec![-100.0, 0.0]]).unwrap();
        let net =
            Network::new(vec![DenseLayer::new(w, None, Activation::Identity).unwrap()]).unwrap();
        let x = DenseVector::new(vec![1.0, 0.0]).unwrap();
        let t = net.forward_with_trace(&x).unwrap();
        assert!(backward(&net, &t, 0).unwrap().norm() < 1e-6);
    }

    #[test]
    fn batch_gradient_is_linear() {
        let mut rng = Rng::new(2);
        let net = Network::random(4, &[3], 2, Activation::Sigmoid, &mut rng).unwrap();
        let x1 = DenseVector::new((0..4).map(|_| rng.normal()).collect()).unwrap();
        let x2 = DenseVector::new((0..4).map(|_| rng.normal()).collect()).unwrap();
        let g1 = backward(&net, &net.forward_with_trace(&x1).unwrap(), 0).unwrap();
        let g2 = backward(&net, &net.forward_with_trace(&x2).unwrap(), 1).unwrap();
        let mut mean = Gradients::zeros_like(&net);
        mean.add_scaled(&g1, 0.5);
        mean.add_scaled(&g2, 0.5);

        // finite differences of the mean loss as the independent route
        let h = 1e-6;
        let mean_loss = |n: &Network| 0.5 * (loss_at(n, &x1, 0) + loss_at(n, &x2, 1));
        let mut plus = net.clone();
        plus.layers_mut()[0].weights.as_mut_slice()[0] += h;
        let mut minus = net.clone();
        minus.layers_mut()[0].weights.as_mut_slice()[0] -= h;
        let fd = (mean_loss(&plus) - mean_loss(&minus)) / (2.0 * h);
        assert!((fd - mean.flatten()[0]).abs() < 1e-8);

        let direct: Vec<f64> = g1
            .flatten()
            .iter()
            .zip(g2.flatten())
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        for (a, b) in direct.iter().zip(mean.flatten()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_trace() {
        let mut rng = Rng::new(2);
        let a = Network::random(4, &[3], 2, Activation::Sigmoid, &mut rng).unwrap();
        let b = Network::random(4, &[5], 2, Activation::Sigmoid, &mut rng).unwrap();
        let x = DenseVector::new(vec![1.0; 4]).unwrap();
        let t = a.forward_with_trace(&x).unwrap();
        assert!(backward(&b, &t, 0).is_err());
        assert!(backward(&a, &t, 2).is_err());
    }
}
