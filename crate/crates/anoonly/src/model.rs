//! The scoring network: a feature-enhancer MLP, a normalizer seated between
//! the enhancer and the output layer, and a linear anomaly classifier whose
//! squared output norm is the anomaly score.
//!
//! The normalizer slot is the interesting part. With batch normalization the
//! rows of a training batch are statistically coupled: every row's gradient
//! picks up the batch mean and variance contributed mostly by the abundant
//! unlabeled rows, which is what lets a loss defined on a handful of labeled
//! anomalies still shape the representation of everything else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batchnorm::BatchNormLayer;
use crate::dense::{DenseGrads, DenseLayer};
use crate::error::{Error, Result};
use crate::layernorm::LayerNormLayer;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, z: &Matrix) -> Matrix {
        match self {
            Activation::Relu => z.map(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Tanh => z.map(f64::tanh),
            Activation::Identity => z.clone(),
        }
    }

    /// Derivative evaluated at the pre-activation.
    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Which normalizer sits between the enhancer and the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKind {
    BatchNorm { affine: bool },
    LayerNorm,
    None,
}

#[derive(Debug, Clone)]
pub enum Normalizer {
    BatchNorm(BatchNormLayer),
    LayerNorm(LayerNormLayer),
    None,
}

impl Normalizer {
    pub fn kind(&self) -> NormalizerKind {
        match self {
            Normalizer::BatchNorm(bn) => NormalizerKind::BatchNorm { affine: bn.affine() },
            Normalizer::LayerNorm(_) => NormalizerKind::LayerNorm,
            Normalizer::None => NormalizerKind::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Everything needed to build a model deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecipe {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Width of the classifier output whose squared norm is the score.
    pub rep_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub normalizer: NormalizerKind,
    /// A free classifier bias can translate scores arbitrarily, so it is off
    /// unless explicitly requested.
    #[serde(default)]
    pub classifier_bias: bool,
    pub seed: u64,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for ModelRecipe {
    fn default() -> Self {
        ModelRecipe {
            input_dim: 16,
            hidden_dims: vec![64, 32],
            rep_dim: 16,
            activation: Activation::Relu,
            normalizer: NormalizerKind::BatchNorm { affine: true },
            classifier_bias: false,
            seed: 7,
        }
    }
}

impl ModelRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.rep_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("model dimensions must all be >= 1"));
        }
        Ok(())
    }

    /// Width of the hidden batch entering the normalizer.
    pub fn norm_dim(&self) -> usize {
        *self.hidden_dims.last().unwrap_or(&self.input_dim)
    }
}

/// Gradients for every trainable parameter plus the input gradient.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub enhancer: Vec<DenseGrads>,
    pub norm_affine: Option<(Vec<f64>, Vec<f64>)>,
    pub classifier: DenseGrads,
    pub input: Matrix,
}

#[derive(Debug, Clone)]
pub struct SSADModel {
    recipe: ModelRecipe,
    enhancer: Vec<DenseLayer>,
    activation: Activation,
    normalizer: Normalizer,
    classifier: DenseLayer,
    mode: Mode,
    /// When set, train-mode batch norm normalizes with running statistics
    /// instead of batch statistics (for degenerate batch sizes).
    bn_frozen: bool,
    cached_preacts: Vec<Matrix>,
    cached_hidden: Option<Matrix>,
}

/// Deterministic construction: one recipe and seed always yield bitwise
/// identical parameters.
pub fn build_model(recipe: &ModelRecipe) -> Result<SSADModel> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut enhancer = Vec::new();
    let mut prev = recipe.input_dim;
    for &h in &recipe.hidden_dims {
        enhancer.push(DenseLayer::init(prev, h, true, &mut rng));
        prev = h;
    }
    let norm_dim = prev;
    let normalizer = match recipe.normalizer {
        NormalizerKind::BatchNorm { affine } => {
            Normalizer::BatchNorm(BatchNormLayer::with_defaults(norm_dim, affine))
        }
        NormalizerKind::LayerNorm => Normalizer::LayerNorm(LayerNormLayer::with_defaults(norm_dim)),
        NormalizerKind::None => Normalizer::None,
    };
    let classifier = DenseLayer::init(norm_dim, recipe.rep_dim, recipe.classifier_bias, &mut rng);
    Ok(SSADModel {
        recipe: recipe.clone(),
        enhancer,
        activation: recipe.activation,
        normalizer,
        classifier,
        mode: Mode::Train,
        bn_frozen: false,
        cached_preacts: Vec::new(),
        cached_hidden: None,
    })
}

impl SSADModel {
    pub fn recipe(&self) -> &ModelRecipe {
        &self.recipe
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn normalizer_kind(&self) -> NormalizerKind {
        self.normalizer.kind()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn enhancer_layers(&self) -> &[DenseLayer] {
        &self.enhancer
    }

    pub fn classifier(&self) -> &DenseLayer {
        &self.classifier
    }

    pub fn set_bn_frozen(&mut self, frozen: bool) {
        self.bn_frozen = frozen;
    }

    /// The enhancer output cached by the last train-mode forward.
    pub fn last_hidden(&self) -> Option<&Matrix> {
        self.cached_hidden.as_ref()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in &self.enhancer {
            n += l.param_count();
        }
        if let Normalizer::BatchNorm(bn) = &self.normalizer {
            n += bn.param_count();
        }
        n + self.classifier.param_count()
    }

    /// Flat parameter vector in construction order.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.enhancer {
            l.push_params(&mut out);
        }
        if let Normalizer::BatchNorm(bn) = &self.normalizer {
            bn.push_params(&mut out);
        }
        self.classifier.push_params(&mut out);
        out
    }

    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                op: "set_param_vector",
                expected: format!("{} parameters", self.param_count()),
                got: format!("{}", params.len()),
            });
        }
        let mut it = params.iter();
        for l in &mut self.enhancer {
            l.pull_params(&mut it);
        }
        if let Normalizer::BatchNorm(bn) = &mut self.normalizer {
            bn.pull_params(&mut it);
        }
        self.classifier.pull_params(&mut it);
        Ok(())
    }

    /// Flatten gradients in the same order as [`param_vector`].
    pub fn grads_to_vec(&self, grads: &ModelGrads) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for g in &grads.enhancer {
            out.extend_from_slice(g.weight.as_slice());
            if let Some(b) = &g.bias {
                out.extend_from_slice(b);
            }
        }
        if let Some((gg, gb)) = &grads.norm_affine {
            out.extend_from_slice(gg);
            out.extend_from_slice(gb);
        }
        out.extend_from_slice(grads.classifier.weight.as_slice());
        if let Some(b) = &grads.classifier.bias {
            out.extend_from_slice(b);
        }
        out
    }

    /// The activation sits between dense layers; the last enhancer layer is
    /// linear, so the hidden batch entering the normalizer is unconstrained
    /// and can actually be standardized.
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.recipe.input_dim {
            return Err(Error::Shape {
                op: "model_forward",
                expected: format!("{} input columns", self.recipe.input_dim),
                got: format!("{}", x.cols()),
            });
        }
        self.cached_preacts.clear();
        let n_layers = self.enhancer.len();
        let mut a = x.clone();
        for (idx, layer) in self.enhancer.iter_mut().enumerate() {
            let z = layer.forward(&a)?;
            a = if idx + 1 < n_layers {
                self.activation.apply(&z)
            } else {
                z.clone()
            };
            self.cached_preacts.push(z);
        }
        self.cached_hidden = Some(a.clone());
        let normed = match (&mut self.normalizer, self.mode) {
            (Normalizer::BatchNorm(bn), Mode::Train) => {
                if self.bn_frozen {
                    bn.forward_train_frozen(&a)?
                } else {
                    bn.forward_train(&a)?
                }
            }
            (Normalizer::BatchNorm(bn), Mode::Eval) => bn.forward_eval(&a)?,
            (Normalizer::LayerNorm(ln), Mode::Train) => ln.forward(&a)?,
            (Normalizer::LayerNorm(ln), Mode::Eval) => ln.forward_eval(&a)?,
            (Normalizer::None, _) => a,
        };
        self.classifier.forward(&normed)
    }

    /// Per-row squared Euclidean norm of the network output.
    pub fn score(&mut self, x: &Matrix) -> Result<Vec<f64>> {
        let out = self.forward(x)?;
        Ok(scores_from_output(&out))
    }

    pub fn backward(&mut self, grad_output: &Matrix) -> Result<ModelGrads> {
        self.backward_with_hidden_grad(grad_output, None)
    }

    /// Backward with an optional extra gradient injected at the enhancer
    /// output (the pre-normalizer hidden batch). Losses defined directly on
    /// that hidden batch enter here.
    pub fn backward_with_hidden_grad(
        &mut self,
        grad_output: &Matrix,
        hidden_grad: Option<&Matrix>,
    ) -> Result<ModelGrads> {
        let (mut g, classifier_grads) = self.classifier.backward(grad_output)?;
        g = match &mut self.normalizer {
            Normalizer::BatchNorm(bn) => bn.backward(&g)?,
            Normalizer::LayerNorm(ln) => ln.backward(&g)?,
            Normalizer::None => g,
        };
        if let Some(h) = hidden_grad {
            if h.rows() != g.rows() || h.cols() != g.cols() {
                return Err(Error::Shape {
                    op: "backward_with_hidden_grad",
                    expected: format!("{}x{}", g.rows(), g.cols()),
                    got: format!("{}x{}", h.rows(), h.cols()),
                });
            }
            for (a, b) in g.as_mut_slice().iter_mut().zip(h.as_slice()) {
                *a += b;
            }
        }
        let norm_affine = match &mut self.normalizer {
            Normalizer::BatchNorm(bn) => bn.take_affine_grads(),
            _ => None,
        };
        let n_layers = self.enhancer.len();
        let mut enhancer_grads = vec![None; n_layers];
        for idx in (0..n_layers).rev() {
            let z = &self.cached_preacts[idx];
            if z.rows() != g.rows() || z.cols() != g.cols() {
                return Err(Error::NoForwardCache { layer: "model" });
            }
            // the last enhancer layer is linear: no activation to undo
            let gz = if idx + 1 < n_layers {
                let mut gz = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        gz.set(i, j, g.get(i, j) * self.activation.derivative(z.get(i, j)));
                    }
                }
                gz
            } else {
                g
            };
            let (gi, dg) = self.enhancer[idx].backward(&gz)?;
            enhancer_grads[idx] = Some(dg);
            g = gi;
        }
        Ok(ModelGrads {
            enhancer: enhancer_grads.into_iter().map(|g| g.unwrap()).collect(),
            norm_affine,
            classifier: classifier_grads,
            input: g,
        })
    }

    /// Squared L2 norm of all dense weights (biases and affine excluded).
    pub fn weight_squared_norm(&self) -> f64 {
        let mut acc = 0.0;
        for l in &self.enhancer {
            acc += l.weight().as_slice().iter().map(|w| w * w).sum::<f64>();
        }
        acc + self
            .classifier
            .weight()
            .as_slice()
            .iter()
            .map(|w| w * w)
            .sum::<f64>()
    }

    /// Add `2 * lambda * w` to every dense weight gradient in place.
    pub fn add_weight_decay(&self, grads: &mut ModelGrads, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for (layer, g) in self.enhancer.iter().zip(grads.enhancer.iter_mut()) {
            for (gw, w) in g.weight.as_mut_slice().iter_mut().zip(layer.weight().as_slice()) {
                *gw += 2.0 * lambda * w;
            }
        }
        for (gw, w) in grads
            .classifier
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(self.classifier.weight().as_slice())
        {
            *gw += 2.0 * lambda * w;
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (running_mean, running_var) = match &self.normalizer {
            Normalizer::BatchNorm(bn) => (bn.running_mean().to_vec(), bn.running_var().to_vec()),
            _ => (Vec::new(), Vec::new()),
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            recipe: self.recipe.clone(),
            params: self.param_vector(),
            running_mean,
            running_var,
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Flat serialized model state; parameter order equals construction order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub recipe: ModelRecipe,
    pub params: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Checkpoint {
    pub fn restore(&self) -> Result<SSADModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut model = build_model(&self.recipe)?;
        model.set_param_vector(&self.params)?;
        if let Normalizer::BatchNorm(bn) = &mut model.normalizer {
            bn.set_running_stats(self.running_mean.clone(), self.running_var.clone())?;
        }
        Ok(model)
    }
}

pub fn scores_from_output(out: &Matrix) -> Vec<f64> {
    (0..out.rows())
        .map(|i| out.row(i).iter().map(|v| v * v).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};

    fn small_recipe(normalizer: NormalizerKind) -> ModelRecipe {
        ModelRecipe {
            input_dim: 4,
            hidden_dims: vec![6],
            rep_dim: 3,
            activation: Activation::Tanh,
            normalizer,
            classifier_bias: false,
            seed: 99,
        }
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn construction_is_deterministic() {
        let recipe = ModelRecipe {
            input_dim: 4,
            hidden_dims: vec![8],
            rep_dim: 2,
            seed: 7,
            ..ModelRecipe::default()
        };
        let a = build_model(&recipe).unwrap();
        let b = build_model(&recipe).unwrap();
        assert_eq!(a.param_vector(), b.param_vector());
    }

    #[test]
    fn empty_enhancer_normalizes_raw_features() {
        let recipe = ModelRecipe {
            input_dim: 4,
            hidden_dims: vec![],
            rep_dim: 2,
            normalizer: NormalizerKind::BatchNorm { affine: false },
            ..ModelRecipe::default()
        };
        let mut model = build_model(&recipe).unwrap();
        assert!(model.enhancer_layers().is_empty());
        assert_eq!(recipe.norm_dim(), 4);
        let x = random_batch(8, 4, 1);
        assert_eq!(model.forward(&x).unwrap().cols(), 2);
    }

    #[test]
    fn parameter_count_by_construction() {
        let mut recipe = ModelRecipe {
            input_dim: 4,
            hidden_dims: vec![8],
            rep_dim: 2,
            normalizer: NormalizerKind::BatchNorm { affine: false },
            classifier_bias: true,
            ..ModelRecipe::default()
        };
        let model = build_model(&recipe).unwrap();
        assert_eq!(model.param_count(), 4 * 8 + 8 + 8 * 2 + 2); // 58
        recipe.classifier_bias = false;
        assert_eq!(build_model(&recipe).unwrap().param_count(), 56);
    }

    #[test]
    fn zero_dims_rejected() {
        let recipe = ModelRecipe {
            input_dim: 0,
            ..ModelRecipe::default()
        };
        assert!(build_model(&recipe).is_err());
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let mut model = build_model(&small_recipe(NormalizerKind::None)).unwrap();
        model.set_mode(Mode::Eval);
        let zeros = vec![0.0; model.param_count()];
        model.set_param_vector(&zeros).unwrap();
        let s = model.score(&random_batch(5, 4, 2)).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn score_is_squared_norm_and_order_preserving() {
        let mut model = build_model(&small_recipe(NormalizerKind::None)).unwrap();
        model.set_mode(Mode::Eval);
        let x = random_batch(6, 4, 3);
        let out = model.forward(&x).unwrap();
        let s = model.score(&x).unwrap();
        for i in 0..6 {
            let manual: f64 = out.row(i).iter().map(|v| v * v).sum();
            assert!((s[i] - manual).abs() < 1e-15);
        }
        // permutation of rows permutes scores
        let order = [3usize, 0, 5, 1, 4, 2];
        let sp = model.score(&x.select_rows(&order)).unwrap();
        for (pos, &src) in order.iter().enumerate() {
            assert_eq!(sp[pos], s[src]);
        }
    }

    #[test]
    fn squared_norm_of_output_row() {
        let out = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(scores_from_output(&out), vec![25.0]);
    }

    #[test]
    fn none_normalizer_equals_chained_dense() {
        let recipe = ModelRecipe {
            activation: Activation::Relu,
            hidden_dims: vec![6, 5],
            ..small_recipe(NormalizerKind::None)
        };
        let mut model = build_model(&recipe).unwrap();
        let x = random_batch(7, 4, 4);
        let out = model.forward(&x).unwrap();

        // dense -> relu -> dense (linear representation) -> classifier
        let mut layers = model.enhancer.clone();
        let mut hand = layers[0].forward(&x).unwrap().map(|v| v.max(0.0));
        hand = layers[1].forward(&hand).unwrap();
        let hand_out = model.classifier.clone().forward(&hand).unwrap();
        for (a, b) in out.as_slice().iter().zip(hand_out.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn train_and_eval_agree_without_batch_coupling() {
        for kind in [NormalizerKind::None, NormalizerKind::LayerNorm] {
            let mut model = build_model(&small_recipe(kind)).unwrap();
            let x = random_batch(6, 4, 5);
            model.set_mode(Mode::Train);
            let train_scores = model.score(&x).unwrap();
            model.set_mode(Mode::Eval);
            let eval_scores = model.score(&x).unwrap();
            assert_eq!(train_scores, eval_scores, "normalizer {kind:?}");
        }
    }

    #[test]
    fn train_and_eval_differ_with_batch_norm() {
        let mut model = build_model(&small_recipe(NormalizerKind::BatchNorm { affine: false }))
            .unwrap();
        let x = random_batch(6, 4, 6);
        model.set_mode(Mode::Train);
        let a = model.score(&x).unwrap();
        model.set_mode(Mode::Eval);
        let b = model.score(&x).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn eval_scores_are_batch_independent() {
        let mut model = build_model(&small_recipe(NormalizerKind::BatchNorm { affine: true }))
            .unwrap();
        model.set_mode(Mode::Train);
        model.forward(&random_batch(8, 4, 7)).unwrap();
        model.set_mode(Mode::Eval);
        let x = random_batch(6, 4, 8);
        let all = model.score(&x).unwrap();
        let first = model.score(&x.select_rows(&[0, 1, 2])).unwrap();
        let second = model.score(&x.select_rows(&[3, 4, 5])).unwrap();
        let concat: Vec<f64> = first.into_iter().chain(second).collect();
        assert_eq!(all, concat);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_grads() {
        let mut model = build_model(&small_recipe(NormalizerKind::BatchNorm { affine: true }))
            .unwrap();
        let x = random_batch(6, 4, 9);
        let out = model.forward(&x).unwrap();
        let grads = model
            .backward(&Matrix::zeros(out.rows(), out.cols()))
            .unwrap();
        let v = model.grads_to_vec(&grads);
        assert!(v.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut model = build_model(&small_recipe(NormalizerKind::None)).unwrap();
        assert!(model.backward(&Matrix::zeros(2, 3)).is_err());
    }

    fn model_fd_check(kind: NormalizerKind, seed: u64) {
        let recipe = small_recipe(kind);
        let base = build_model(&recipe).unwrap();
        let x = random_batch(16, 4, seed);
        let probe = random_batch(16, 3, seed + 1);

        let eval = |p: &[f64]| {
            let mut m = base.clone();
            m.set_param_vector(p).unwrap();
            let y = m.forward(&x).unwrap();
            y.as_slice()
                .iter()
                .zip(probe.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut m = base.clone();
        m.forward(&x).unwrap();
        let grads = m.backward(&probe).unwrap();
        let analytic = m.grads_to_vec(&grads);
        let report = grad_check(
            eval,
            &base.param_vector(),
            &analytic,
            &GradCheckConfig::default().with_rel_tol(1e-4),
        )
        .unwrap();
        assert!(
            report.passed,
            "{kind:?}: rel diff {}",
            report.max_rel_diff
        );
    }

    #[test]
    fn whole_model_gradients_match_finite_differences() {
        model_fd_check(NormalizerKind::None, 20);
        model_fd_check(NormalizerKind::LayerNorm, 21);
        model_fd_check(NormalizerKind::BatchNorm { affine: false }, 22);
        model_fd_check(NormalizerKind::BatchNorm { affine: true }, 23);
    }

    #[test]
    fn batch_norm_couples_rows_through_statistics() {
        // Gradient seeded only on the first two rows still reaches the inputs
        // of every other row via the batch statistics.
        let mut model = build_model(&small_recipe(NormalizerKind::BatchNorm { affine: false }))
            .unwrap();
        let x = random_batch(8, 4, 30);
        let out = model.forward(&x).unwrap();
        let mut probe = Matrix::zeros(8, 3);
        for j in 0..3 {
            probe.set(0, j, 1.0);
            probe.set(1, j, -0.5);
        }
        let _ = out;
        let grads = model.backward(&probe).unwrap();
        for i in 2..8 {
            let norm: f64 = grads.input.row(i).iter().map(|v| v * v).sum();
            assert!(norm > 1e-12, "row {i} input gradient unexpectedly zero");
        }

        // Without batch coupling the untouched rows get exactly zero.
        let mut plain = build_model(&small_recipe(NormalizerKind::None)).unwrap();
        plain.forward(&x).unwrap();
        let grads = plain.backward(&probe).unwrap();
        for i in 2..8 {
            assert!(grads.input.row(i).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn checkpoint_roundtrip_exact() {
        let mut model = build_model(&small_recipe(NormalizerKind::BatchNorm { affine: true }))
            .unwrap();
        model.forward(&random_batch(8, 4, 40)).unwrap();
        let ckpt = model.to_checkpoint();
        let json = serde_json::to_string(&ckpt).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = back.restore().unwrap();
        assert_eq!(restored.param_vector(), model.param_vector());
        let x = random_batch(5, 4, 41);
        let mut m1 = model.clone();
        let mut m2 = restored;
        m1.set_mode(Mode::Eval);
        m2.set_mode(Mode::Eval);
        assert_eq!(m1.score(&x).unwrap(), m2.score(&x).unwrap());
    }
}
