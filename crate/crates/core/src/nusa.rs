//! Null space analysis of dense layers.
//!
//! For a layer with weights `W` and input `x`, the score
//! `‖P(W) x‖ / ‖x‖` measures how much of `x` the layer can see, where `P(W)`
//! projects onto the row space of `W`. The complement `x − P(W)x` lies in the
//! null space and has no effect on the layer output. A network trained to
//! keep this score high on its training data gives low scores to inputs
//! whose energy falls into the null spaces, which is used to flag outliers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{NusaError, Result};
use crate::linalg::{
    self, norm, qr_row_space_basis, Cholesky, DenseMatrix, DenseVector, OrthonormalBasis,
    DEFAULT_RANK_TOL,
};
use crate::network::{
    backward_with_injection, cross_entropy_loss, ForwardTrace, Gradients, Injection, Network,
};
use crate::rng::Rng;

pub const DEFAULT_NORM_EPSILON: f64 = 1e-12;
pub const DEFAULT_GRAD_EPSILON: f64 = 1e-8;
pub const DEFAULT_THRESHOLD_PERCENTILE: f64 = 5.0;

/// Direction in which the regularizer pushes training scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NusaSign {
    /// Objective is `loss − λ·term`: inliers are trained towards high scores.
    MaximizeInlierScore,
    /// Objective is `loss + λ·term`.
    MinimizeInlierScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelector {
    /// Every layer with `in_dim > out_dim`.
    Auto,
    Explicit(Vec<usize>),
}

impl std::str::FromStr for NusaSign {
    type Err = NusaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maximize_inlier_score" => Ok(NusaSign::MaximizeInlierScore),
            "minimize_inlier_score" => Ok(NusaSign::MinimizeInlierScore),
            other => Err(NusaError::invalid(format!("unknown nusa sign `{other}`"))),
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = NusaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "sum" => Ok(Aggregation::Sum),
            other => Err(NusaError::invalid(format!("unknown aggregation `{other}`"))),
        }
    }
}

impl std::str::FromStr for LayerSelector {
    type Err = NusaError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(LayerSelector::Auto);
        }
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| NusaError::invalid(format!("bad layer index `{t}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(LayerSelector::Explicit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NusaConfig {
    pub lambda: f64,
    pub sign: NusaSign,
    pub layers: LayerSelector,
    pub aggregation: Aggregation,
    pub norm_epsilon: f64,
    pub grad_epsilon: f64,
    pub rank_tol: f64,
}

impl Default for NusaConfig {
    fn default() -> Self {
        NusaConfig {
            lambda: 0.1,
            sign: NusaSign::MaximizeInlierScore,
            layers: LayerSelector::Auto,
            aggregation: Aggregation::Mean,
            norm_epsilon: DEFAULT_NORM_EPSILON,
            grad_epsilon: DEFAULT_GRAD_EPSILON,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

impl NusaConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        NusaConfig {
            lambda,
            ..NusaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(NusaError::invalid(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Indices of the layers that contribute to the score.
    pub fn resolve_layers(&self, net: &Network) -> Result<Vec<usize>> {
        let layers = match &self.layers {
            LayerSelector::Auto => net
                .layers()
                .iter()
                .enumerate()
                .filter(|(_, l)| l.in_dim() > l.out_dim())
                .map(|(i, _)| i)
                .collect::<Vec<_>>(),
            LayerSelector::Explicit(ids) => {
                if let Some(&bad) = ids.iter().find(|&&i| i >= net.layers().len()) {
                    return Err(NusaError::invalid(format!(
                        "layer {bad} selected but the network has {} layers",
                        net.layers().len()
                    )));
                }
                ids.clone()
            }
        };
        if layers.is_empty() {
            return Err(NusaError::invalid(
                "no layers selected for null space analysis (no layer reduces dimension)",
            ));
        }
        Ok(layers)
    }

    fn aggregate(&self, scores: &[f64]) -> f64 {
        let sum: f64 = scores.iter().sum();
        match self.aggregation {
            Aggregation::Sum => sum,
            Aggregation::Mean => sum / scores.len() as f64,
        }
    }

    fn aggregation_weight(&self, count: usize) -> f64 {
        match self.aggregation {
            Aggregation::Sum => 1.0,
            Aggregation::Mean => 1.0 / count as f64,
        }
    }

    fn signed_lambda(&self) -> f64 {
        match self.sign {
            NusaSign::MaximizeInlierScore => -self.lambda,
            NusaSign::MinimizeInlierScore => self.lambda,
        }
    }
}

/// Score of `x` against a row-space basis; `None` if `‖x‖ ≤ norm_epsilon`.
fn basis_score(basis: &OrthonormalBasis, x: &[f64], norm_epsilon: f64) -> Option<f64> {
    let xn = norm(x);
    if xn <= norm_epsilon {
        return None;
    }
    let visible = norm(&basis.coordinates(x));
    Some((visible / xn).clamp(0.0, 1.0))
}

/// `‖P(W)x‖ / ‖x‖` with `P(W)` built from a pivoted QR of `Wᵀ`.
pub fn layer_nusa_score(w: &DenseMatrix, x: &DenseVector, rank_tol: f64) -> Result<f64> {
    if x.dim() != w.cols() {
        return Err(NusaError::DimensionMismatch {
            expected: w.cols(),
            actual: x.dim(),
        });
    }
    let basis = qr_row_space_basis(w, rank_tol)?;
    basis_score(&basis, x.as_slice(), DEFAULT_NORM_EPSILON).ok_or_else(|| {
        NusaError::Degenerate(format!(
            "input norm {} is at or below {DEFAULT_NORM_EPSILON}",
            x.norm()
        ))
    })
}

/// Row-space data for one layer, fixed while its weights are unchanged.
#[derive(Debug, Clone)]
pub struct LayerGeometry {
    basis: OrthonormalBasis,
    gram: Option<Cholesky>,
}

impl LayerGeometry {
    /// Scoring only.
    pub fn for_scoring(w: &DenseMatrix, rank_tol: f64) -> Result<Self> {
        Ok(LayerGeometry {
            basis: qr_row_space_basis(w, rank_tol)?,
            gram: None,
        })
    }

    /// Scoring and gradients; requires full row rank.
    pub fn for_gradients(w: &DenseMatrix, rank_tol: f64) -> Result<Self> {
        let basis = qr_row_space_basis(w, rank_tol)?;
        if basis.rank() < w.rows() {
            return Err(NusaError::Numeric(format!(
                "weight matrix {}x{} has rank {}; gradients need full row rank",
                w.rows(),
                w.cols(),
                basis.rank()
            )));
        }
        let gram = Cholesky::new(&w.gram())?;
        Ok(LayerGeometry {
            basis,
            gram: Some(gram),
        })
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NusaGradient {
    pub score: f64,
    /// Row-major, same shape as `W`.
    pub grad_w: Vec<f64>,
    pub grad_x: Vec<f64>,
    /// Set when the score or input norm is too small and zero gradients
    /// were returned instead.
    pub degenerate: bool,
}

fn gradient_with_geometry(
    geom: &LayerGeometry,
    w: &DenseMatrix,
    x: &[f64],
    norm_epsilon: f64,
    grad_epsilon: f64,
) -> NusaGradient {
    let gram = geom.gram.as_ref().expect("geometry built for gradients");
    let zero = |score: f64| NusaGradient {
        score,
        grad_w: vec![0.0; w.rows() * w.cols()],
        grad_x: vec![0.0; x.len()],
        degenerate: true,
    };
    let sq = linalg::dot(x, x);
    if sq <= norm_epsilon * norm_epsilon {
        return zero(0.0);
    }
    let px = geom.basis.project_slice(x);
    let r = norm(&px) / sq.sqrt();
    if r <= grad_epsilon {
        return zero(r);
    }
    let denom = r * sq;
    let r2 = r * r;
    let grad_x = px
        .iter()
        .zip(x)
        .map(|(p, xi)| (p - r2 * xi) / denom)
        .collect();
    // v = (W Wᵀ)⁻¹ W x ; grad_W = v (x − Px)ᵀ / (r ‖x‖²)
    let v = gram.solve(&w.matvec_slice(x));
    let resid: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
    let mut grad_w = Vec::with_capacity(w.rows() * w.cols());
    for vi in &v {
        grad_w.extend(resid.iter().map(|e| vi * e / denom));
    }
    NusaGradient {
        score: r,
        grad_w,
        grad_x,
        degenerate: false,
    }
}

/// Closed-form gradients of the layer score with respect to `W` and `x`.
pub fn layer_nusa_gradient(w: &DenseMatrix, x: &DenseVector) -> Result<NusaGradient> {
    if x.dim() != w.cols() {
        return Err(NusaError::DimensionMismatch {
            expected: w.cols(),
            actual: x.dim(),
        });
    }
    let geom = LayerGeometry::for_gradients(w, DEFAULT_RANK_TOL)?;
    Ok(gradient_with_geometry(
        &geom,
        w,
        x.as_slice(),
        DEFAULT_NORM_EPSILON,
        DEFAULT_GRAD_EPSILON,
    ))
}

/// Precomputed row-space bases for the selected layers of a frozen network.
#[derive(Debug, Clone)]
pub struct NusaScorer<'a> {
    net: &'a Network,
    cfg: NusaConfig,
    layers: Vec<usize>,
    geometry: Vec<LayerGeometry>,
}

impl<'a> NusaScorer<'a> {
    pub fn new(net: &'a Network, cfg: &NusaConfig) -> Result<Self> {
        Self::build(net, cfg, false)
    }

    fn build(net: &'a Network, cfg: &NusaConfig, with_gradients: bool) -> Result<Self> {
        let layers = cfg.resolve_layers(net)?;
        let geometry = layers
            .iter()
            .map(|&l| {
                let w = net.layers()[l].weights();
                if with_gradients {
                    LayerGeometry::for_gradients(w, cfg.rank_tol)
                } else {
                    LayerGeometry::for_scoring(w, cfg.rank_tol)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NusaScorer {
            net,
            cfg: cfg.clone(),
            layers,
            geometry,
        })
    }

    pub fn selected_layers(&self) -> &[usize] {
        &self.layers
    }

    /// Per-layer scores for a trace; degenerate inputs score 0.
    pub fn layer_scores(&self, trace: &ForwardTrace) -> Vec<f64> {
        self.layers
            .iter()
            .zip(&self.geometry)
            .map(|(&l, g)| {
                basis_score(
                    &g.basis,
                    trace.layer_inputs[l].as_slice(),
                    self.cfg.norm_epsilon,
                )
                .unwrap_or(0.0)
            })
            .collect()
    }

    pub fn aggregate(&self, trace: &ForwardTrace) -> f64 {
        self.cfg.aggregate(&self.layer_scores(trace))
    }

    pub fn report(&self, x: &DenseVector, threshold: f64) -> Result<NusaReport> {
        let trace = self.net.forward_with_trace(x)?;
        let predicted_class = crate::network::argmax(trace.output.as_slice());
        if x.norm() <= self.cfg.norm_epsilon {
            return Ok(NusaReport {
                per_layer_scores: vec![0.0; self.layers.len()],
                aggregate_score: 0.0,
                predicted_class,
                is_outlier: true,
                threshold_used: threshold,
            });
        }
        let per_layer_scores = self.layer_scores(&trace);
        let aggregate_score = self.cfg.aggregate(&per_layer_scores);
        Ok(NusaReport {
            per_layer_scores,
            aggregate_score,
            predicted_class,
            is_outlier: is_outlier(aggregate_score, threshold),
            threshold_used: threshold,
        })
    }

    /// Value and gradient of the full objective for one labeled sample.
    fn sample_objective(&self, trace: &ForwardTrace, label: usize) -> Result<SampleObjective> {
        let n = self.net.layers().len();
        let weight = self.cfg.signed_lambda() * self.cfg.aggregation_weight(self.layers.len());
        let mut injection = Injection {
            inputs: vec![None; n],
            weights: vec![None; n],
        };
        let mut scores = Vec::with_capacity(self.layers.len());
        for (&l, geom) in self.layers.iter().zip(&self.geometry) {
            let g = gradient_with_geometry(
                geom,
                self.net.layers()[l].weights(),
                trace.layer_inputs[l].as_slice(),
                self.cfg.norm_epsilon,
                self.cfg.grad_epsilon,
            );
            scores.push(g.score);
            if weight != 0.0 && !g.degenerate {
                let scale = |v: Vec<f64>| v.into_iter().map(|e| weight * e).collect::<Vec<_>>();
                injection.weights[l] = Some(scale(g.grad_w));
                injection.inputs[l] = Some(scale(g.grad_x));
            }
        }
        let class_loss = cross_entropy_loss(&trace.output, label)?;
        let nusa_term = self.cfg.aggregate(&scores);
        let gradients = backward_with_injection(self.net, trace, label, Some(&injection))?;
        Ok(SampleObjective {
            class_loss,
            nusa_term,
            objective: nusa_objective(class_loss, nusa_term, &self.cfg),
            gradients,
        })
    }
}

/// Everything the training loop needs from one sample.
#[derive(Debug, Clone)]
pub struct SampleObjective {
    pub class_loss: f64,
    pub nusa_term: f64,
    pub objective: f64,
    pub gradients: Gradients,
}

/// Training-time evaluator: bases and Gram factors for the current weights,
/// rebuilt after every optimizer step. With `lambda == 0` the score is only
/// reported, and a network without selectable layers reports `NaN`.
pub struct ObjectiveEvaluator<'a> {
    net: &'a Network,
    cfg: NusaConfig,
    scorer: Option<NusaScorer<'a>>,
}

impl<'a> ObjectiveEvaluator<'a> {
    pub fn new(net: &'a Network, cfg: &NusaConfig) -> Result<Self> {
        let scorer = if cfg.lambda == 0.0 {
            NusaScorer::build(net, cfg, false).ok()
        } else {
            Some(NusaScorer::build(net, cfg, true)?)
        };
        Ok(ObjectiveEvaluator {
            net,
            cfg: cfg.clone(),
            scorer,
        })
    }

    pub fn evaluate(
        &self,
        x: &DenseVector,
        label: usize,
    ) -> Result<(ForwardTrace, SampleObjective)> {
        let trace = self.net.forward_with_trace(x)?;
        let obj = match &self.scorer {
            Some(scorer) if self.cfg.lambda != 0.0 => scorer.sample_objective(&trace, label)?,
            _ => {
                let class_loss = cross_entropy_loss(&trace.output, label)?;
                SampleObjective {
                    class_loss,
                    nusa_term: self
                        .scorer
                        .as_ref()
                        .map_or(f64::NAN, |s| s.aggregate(&trace)),
                    objective: class_loss,
                    gradients: crate::network::backward(self.net, &trace, label)?,
                }
            }
        };
        Ok((trace, obj))
    }
}

/// Full objective and its gradient for one sample.
pub fn objective_gradients(
    net: &Network,
    x: &DenseVector,
    label: usize,
    cfg: &NusaConfig,
) -> Result<SampleObjective> {
    let scorer = NusaScorer::build(net, cfg, true)?;
    let trace = net.forward_with_trace(x)?;
    scorer.sample_objective(&trace, label)
}

/// Aggregated score over the selected layers, recomputing every projector
/// from the current weights.
pub fn network_nusa_term(net: &Network, trace: &ForwardTrace, cfg: &NusaConfig) -> Result<f64> {
    let scorer = NusaScorer::new(net, cfg)?;
    if trace.layer_inputs.len() != net.layers().len() {
        return Err(NusaError::invalid("trace does not match network"));
    }
    Ok(scorer.aggregate(trace))
}

pub fn nusa_objective(class_loss: f64, nusa_term: f64, cfg: &NusaConfig) -> f64 {
    class_loss + cfg.signed_lambda() * nusa_term
}

pub fn is_outlier(score: f64, threshold: f64) -> bool {
    score <= threshold
}

/// Percentile of `values` by linear interpolation between order statistics
/// (position `(n − 1)·p/100` in the sorted list).
pub fn percentile(values: &[f64], pct: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(NusaError::EmptyDataset);
    }
    if !(0.0..=100.0).contains(&pct) {
        return Err(NusaError::invalid(format!(
            "percentile must be in [0, 100], got {pct}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * pct / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Threshold at the given percentile of calibration-set aggregate scores.
pub fn calibrate_threshold(
    net: &Network,
    calibration_data: &LabeledDataset,
    cfg: &NusaConfig,
    percentile_value: f64,
) -> Result<f64> {
    if calibration_data.is_empty() {
        return Err(NusaError::EmptyDataset);
    }
    let scores = aggregate_scores(net, calibration_data.features(), cfg)?;
    percentile(&scores, percentile_value)
}

/// Aggregate score of every sample, in input order.
pub fn aggregate_scores(net: &Network, xs: &[DenseVector], cfg: &NusaConfig) -> Result<Vec<f64>> {
    let scorer = NusaScorer::new(net, cfg)?;
    xs.par_iter()
        .map(|x| {
            scorer
                .report(x, f64::NEG_INFINITY)
                .map(|r| r.aggregate_score)
        })
        .collect()
}

/// Per-sample decision following the thresholded test procedure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NusaReport {
    pub per_layer_scores: Vec<f64>,
    pub aggregate_score: f64,
    pub predicted_class: usize,
    pub is_outlier: bool,
    pub threshold_used: f64,
}

pub fn detect(
    net: &Network,
    x: &DenseVector,
    threshold: f64,
    cfg: &NusaConfig,
) -> Result<NusaReport> {
    NusaScorer::new(net, cfg)?.report(x, threshold)
}

/// Reports in input order; samples are scored in parallel.
pub fn detect_batch(
    net: &Network,
    xs: &[DenseVector],
    threshold: f64,
    cfg: &NusaConfig,
) -> Result<Vec<NusaReport>> {
    let scorer = NusaScorer::new(net, cfg)?;
    xs.par_iter().map(|x| scorer.report(x, threshold)).collect()
}

/// `x + magnitude·z` for a seeded random unit vector `z` in the null space of
/// the first layer. The network output is unchanged up to rounding.
pub fn null_space_perturbation(
    net: &Network,
    x: &DenseVector,
    magnitude: f64,
    seed: u64,
) -> Result<DenseVector> {
    if x.dim() != net.input_dim() {
        return Err(NusaError::DimensionMismatch {
            expected: net.input_dim(),
            actual: x.dim(),
        });
    }
    if !magnitude.is_finite() {
        return Err(NusaError::invalid("perturbation magnitude must be finite"));
    }
    let w = net.layers()[0].weights();
    let null = linalg::null_space_basis(w, DEFAULT_RANK_TOL)?;
    if null.rank() == 0 {
        return Err(NusaError::Unsupported(format!(
            "first layer ({}x{}) has a trivial null space",
            w.rows(),
            w.cols()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut z = vec![0.0; x.dim()];
    let mut zn = 0.0;
    while zn == 0.0 {
        let coeffs: Vec<f64> = (0..null.rank()).map(|_| rng.normal()).collect();
        z.iter_mut().for_each(|e| *e = 0.0);
        for (c, b) in coeffs.iter().zip(null.vectors()) {
            z.iter_mut()
                .zip(b.as_slice())
                .for_each(|(zi, bi)| *zi += c * bi);
        }
        zn = norm(&z);
    }
    DenseVector::new(
        x.as_slice()
            .iter()
            .zip(&z)
            .map(|(xi, zi)| xi + magnitude * zi / zn)
            .collect(),
    )
}
