use super::{
    bce_from_logit, check_classes, epoch_orders, featurize, sigmoid, ClassifyError, Example, FeatureVector, FeatureView,
    FitReport, Scorer, TrainConfig,
};
use crate::preprocess::TokenSequence;

/// Averaged perceptron with Platt-scaled scores as probabilities.
///
/// The perceptron itself ignores `l2` and the optimizer settings; only
/// `epochs` and `seed` apply.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronModel {
    pub model_id: String,
    pub view: FeatureView,
    pub dim: u32,
    pub hash_seed: u64,
    weights: Vec<f64>,
    bias: f64,
    /// `p = sigmoid(a * score + b)`.
    platt: (f64, f64),
    trained: bool,
}

impl PerceptronModel {
    pub fn new(model_id: impl Into<String>, view: FeatureView, dim: u32, hash_seed: u64) -> Self {
        Self {
            model_id: model_id.into(),
            view,
            dim,
            hash_seed,
            weights: vec![0.0; dim as usize],
            bias: 0.0,
            platt: (1.0, 0.0),
            trained: false,
        }
    }

    pub fn from_parameters(
        model_id: impl Into<String>,
        view: FeatureView,
        hash_seed: u64,
        weights: Vec<f64>,
        bias: f64,
        platt: (f64, f64),
    ) -> Self {
        let dim = weights.len() as u32;
        Self { model_id: model_id.into(), view, dim, hash_seed, weights, bias, platt, trained: true }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn platt(&self) -> (f64, f64) {
        self.platt
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn features(&self, seq: &TokenSequence) -> FeatureVector {
        featurize(seq, self.view, self.dim, self.hash_seed)
    }

    fn score(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn fit(&mut self, examples: &[Example<'_>], cfg: &TrainConfig) -> Result<FitReport, ClassifyError> {
        let data: Vec<(FeatureVector, bool)> = examples.iter().map(|e| (self.features(e.seq), e.label)).collect();
        self.fit_features(&data, cfg)
    }

    pub fn fit_features(&mut self, data: &[(FeatureVector, bool)], cfg: &TrainConfig) -> Result<FitReport, ClassifyError> {
        cfg.validate()?;
        check_classes(data, |(_, y)| *y)?;
        let dim = self.dim as usize;
        // Running weights w and the step-weighted sum u; the average is w - u / c.
        let mut w = vec![0.0; dim];
        let mut u = vec![0.0; dim];
        let (mut wb, mut ub) = (0.0, 0.0);
        let mut c = 1.0;
        let mut report = FitReport::default();

        for order in epoch_orders(data.len(), cfg.epochs, cfg.seed) {
            for k in order {
                let (x, y) = &data[k];
                let t = if *y { 1.0 } else { -1.0 };
                let s = x.dot(&w) + wb;
                if t * s <= 0.0 {
                    for &(i, v) in &x.entries {
                        w[i as usize] += t * v;
                        u[i as usize] += c * t * v;
                    }
                    wb += t;
                    ub += c * t;
                }
                c += 1.0;
            }
            self.weights = w.iter().zip(&u).map(|(wi, ui)| wi - ui / c).collect();
            self.bias = wb - ub / c;
            let scores: Vec<f64> = data.iter().map(|(x, _)| self.score(x)).collect();
            self.platt = platt_fit(&scores, data.iter().map(|(_, y)| *y));
            let (a, b) = self.platt;
            let n = data.len() as f64;
            let bce = scores.iter().zip(data).map(|(s, (_, y))| bce_from_logit(a * s + b, *y)).sum::<f64>() / n;
            report.epoch_losses.push(bce);
        }
        self.trained = true;
        Ok(report)
    }

    pub fn predict_features(&self, x: &FeatureVector) -> f64 {
        let (a, b) = self.platt;
        sigmoid(a * self.score(x) + b)
    }
}

impl Scorer for PerceptronModel {
    fn predict_proba(&self, seq: &TokenSequence) -> Result<f64, ClassifyError> {
        if !self.trained {
            return Err(ClassifyError::Untrained(self.model_id.clone()));
        }
        Ok(self.predict_features(&self.features(seq)))
    }
}

/// Platt scaling with the usual smoothed targets, fitted by damped Newton.
fn platt_fit(scores: &[f64], labels: impl Iterator<Item = bool>) -> (f64, f64) {
    let labels: Vec<bool> = labels.collect();
    let n_pos = labels.iter().filter(|y| **y).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|y| if *y { hi } else { lo }).collect();
    // Scale scores so Newton starts in a sane region.
    let spread = scores.iter().map(|s| s.abs()).fold(0.0, f64::max).max(1e-12);
    let (mut a, mut b) = (1.0 / spread, ((n_neg + 1.0) / (n_pos + 1.0)).ln() * -1.0);
    let loss = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(s, t)| {
                let z = a * s + b;
                bce_from_logit(z, true) * t + bce_from_logit(z, false) * (1.0 - t)
            })
            .sum()
    };
    let mut cur = loss(a, b);
    for _ in 0..100 {
        let (mut g1, mut g2, mut h11, mut h12, mut h22) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (s, t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let d = p - t;
            let q = p * (1.0 - p);
            g1 += d * s;
            g2 += d;
            h11 += q * s * s;
            h12 += q * s;
            h22 += q;
        }
        if g1.abs() < 1e-9 && g2.abs() < 1e-9 {
            break;
        }
        let det = h11 * h22 - h12 * h12;
        if det.abs() < 1e-300 {
            break;
        }
        let da = (h22 * g1 - h12 * g2) / det;
        let db = (h11 * g2 - h12 * g1) / det;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a - step * da, b - step * db);
            let next = loss(na, nb);
            if next <= cur + 1e-12 {
                a = na;
                b = nb;
                cur = next;
                break;
            }
            step /= 2.0;
            if step < 1e-8 {
                return (a, b);
            }
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::new(s, s.split_whitespace().map(String::from).collect())
    }

    #[test]
    fn separates_marker() {
        let pos = seq("alpha beta hate");
        let neg = seq("alpha beta calm");
        let ex: Vec<Example> = (0..30)
            .map(|i| Example { seq: if i % 3 == 0 { &pos } else { &neg }, label: i % 3 == 0 })
            .collect();
        let mut m = PerceptronModel::new("p", FeatureView::WORD_1_4, 512, 0);
        let r = m.fit(&ex, &TrainConfig::default()).unwrap();
        assert!(m.predict_proba(&pos).unwrap() > 0.5);
        assert!(m.predict_proba(&neg).unwrap() < 0.5);
        assert!(r.epoch_losses.last() <= r.epoch_losses.first());
    }

    #[test]
    fn untrained_errors() {
        let m = PerceptronModel::new("p", FeatureView::WORD_1_4, 16, 0);
        assert!(m.predict_proba(&seq("x")).is_err());
    }

    #[test]
    fn platt_is_monotone_increasing() {
        let scores = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let labels = [false, false, true, false, true, true];
        let (a, _) = platt_fit(&scores, labels.into_iter());
        assert!(a > 0.0);
    }
}
