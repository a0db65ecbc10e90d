use super::{
    bce_from_logit, check_classes, epoch_orders, featurize, sigmoid, ClassifyError, Example, FeatureVector, FeatureView,
    FitReport, Optimizer, Scorer, TrainConfig, DEFAULT_DIM,
};
use crate::preprocess::TokenSequence;

/// L2-regularized logistic regression over hashed n-grams.
///
/// Objective: mean binary cross-entropy plus `l2 * |w|^2` (bias excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub model_id: String,
    pub view: FeatureView,
    pub dim: u32,
    pub hash_seed: u64,
    weights: Vec<f64>,
    bias: f64,
    trained: bool,
}

impl LogisticModel {
    pub fn new(model_id: impl Into<String>, view: FeatureView, dim: u32, hash_seed: u64) -> Self {
        Self { model_id: model_id.into(), view, dim, hash_seed, weights: vec![0.0; dim as usize], bias: 0.0, trained: false }
    }

    pub fn word(model_id: impl Into<String>) -> Self {
        Self::new(model_id, FeatureView::WORD_1_4, DEFAULT_DIM, 0)
    }

    /// A ready-to-use model with explicit parameters.
    pub fn from_parameters(
        model_id: impl Into<String>,
        view: FeatureView,
        hash_seed: u64,
        weights: Vec<f64>,
        bias: f64,
    ) -> Self {
        let dim = weights.len() as u32;
        Self { model_id: model_id.into(), view, dim, hash_seed, weights, bias, trained: true }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn set_parameters(&mut self, weights: Vec<f64>, bias: f64) {
        assert_eq!(weights.len(), self.dim as usize, "weight length must equal dim");
        self.weights = weights;
        self.bias = bias;
    }

    pub fn features(&self, seq: &TokenSequence) -> FeatureVector {
        featurize(seq, self.view, self.dim, self.hash_seed)
    }

    fn logit(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    /// Training objective on pre-computed features.
    pub fn objective(&self, data: &[(FeatureVector, bool)], l2: f64) -> f64 {
        let n = data.len().max(1) as f64;
        let bce: f64 = data.iter().map(|(x, y)| bce_from_logit(self.logit(x), *y)).sum::<f64>() / n;
        bce + l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Dense gradient of [`objective`](Self::objective): `(d/dw, d/db)`.
    pub fn gradient(&self, data: &[(FeatureVector, bool)], l2: f64) -> (Vec<f64>, f64) {
        let n = data.len().max(1) as f64;
        let mut gw: Vec<f64> = self.weights.iter().map(|w| 2.0 * l2 * w).collect();
        let mut gb = 0.0;
        for (x, y) in data {
            let r = (sigmoid(self.logit(x)) - if *y { 1.0 } else { 0.0 }) / n;
            for &(i, v) in &x.entries {
                gw[i as usize] += r * v;
            }
            gb += r;
        }
        (gw, gb)
    }

    /// Largest step size for which full-batch gradient descent is guaranteed
    /// not to increase the objective: `1 / L` with
    /// `L = max_i (|x_i|^2 + 1) / 4 + 2 * l2`.
    pub fn stability_bound(data: &[(FeatureVector, bool)], l2: f64) -> f64 {
        let max_sq = data.iter().map(|(x, _)| x.norm_sq() + 1.0).fold(1.0, f64::max);
        1.0 / (max_sq / 4.0 + 2.0 * l2)
    }

    pub fn fit(&mut self, examples: &[Example<'_>], cfg: &TrainConfig) -> Result<FitReport, ClassifyError> {
        let data: Vec<(FeatureVector, bool)> = examples.iter().map(|e| (self.features(e.seq), e.label)).collect();
        self.fit_features(&data, cfg)
    }

    pub fn fit_features(&mut self, data: &[(FeatureVector, bool)], cfg: &TrainConfig) -> Result<FitReport, ClassifyError> {
        cfg.validate()?;
        check_classes(data, |(_, y)| *y)?;
        let dim = self.dim as usize;
        self.weights = vec![0.0; dim];
        // Start at the base-rate logit so frequent words need not carry the
        // intercept on imbalanced data.
        let rate = data.iter().filter(|(_, y)| *y).count() as f64 / data.len() as f64;
        self.bias = (rate / (1.0 - rate)).ln();

        let adam = matches!(cfg.optimizer, Optimizer::Adam { .. });
        let (mut m, mut v) = if adam { (vec![0.0; dim], vec![0.0; dim]) } else { (Vec::new(), Vec::new()) };
        let (mut mb, mut vb) = (0.0, 0.0);
        let mut scratch = vec![0.0; dim];
        let mut active = vec![false; dim];
        let mut touched: Vec<u32> = Vec::new();
        let mut step = 0i32;
        let mut report = FitReport::default();

        for order in epoch_orders(data.len(), cfg.epochs, cfg.seed) {
            for chunk in order.chunks(cfg.minibatch) {
                step += 1;
                let b = chunk.len() as f64;
                let mut gb = 0.0;
                for &k in chunk {
                    let (x, y) = &data[k];
                    let r = sigmoid(self.logit(x)) - if *y { 1.0 } else { 0.0 };
                    for &(i, val) in &x.entries {
                        if !active[i as usize] {
                            active[i as usize] = true;
                            touched.push(i);
                        }
                        scratch[i as usize] += r * val;
                    }
                    gb += r;
                }
                gb /= b;
                match cfg.optimizer {
                    Optimizer::Sgd { lr } => {
                        for &i in &touched {
                            let i = i as usize;
                            let g = scratch[i] / b + 2.0 * cfg.l2 * self.weights[i];
                            self.weights[i] -= lr * g;
                            scratch[i] = 0.0;
                            active[i] = false;
                        }
                        self.bias -= lr * gb;
                    }
                    Optimizer::Adam { lr, beta1, beta2, eps } => {
                        // Dense update: untouched coordinates still see the
                        // penalty gradient and decaying moments.
                        let c1 = 1.0 - beta1.powi(step);
                        let c2 = 1.0 - beta2.powi(step);
                        let decay = 2.0 * cfg.l2;
                        for i in 0..dim {
                            let g = scratch[i] / b + decay * self.weights[i];
                            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                            self.weights[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        }
                        for &i in &touched {
                            scratch[i as usize] = 0.0;
                            active[i as usize] = false;
                        }
                        mb = beta1 * mb + (1.0 - beta1) * gb;
                        vb = beta2 * vb + (1.0 - beta2) * gb * gb;
                        self.bias -= lr * (mb / c1) / ((vb / c2).sqrt() + eps);
                    }
                }
                touched.clear();
            }
            report.epoch_losses.push(self.objective(data, cfg.l2));
        }
        self.trained = true;
        Ok(report)
    }

    pub fn predict_features(&self, x: &FeatureVector) -> f64 {
        sigmoid(self.logit(x))
    }
}

impl Scorer for LogisticModel {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError> {
        if !self.trained {
            return Err(ClassifyError::Untrained(self.model_id.clone()));
        }
        Ok(self.predict_features(&self.features(seq)))
    }
}
