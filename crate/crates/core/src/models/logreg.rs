//! Conversation-level logistic regression over bag-of-words counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::features::{BowVector, Vocabulary};

pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LogRegModel {
    pub fn zeros(k: usize, l2: f64) -> Self {
        LogRegModel {
            weights: vec![0.0; k],
            bias: 0.0,
            l2,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.predict_proba(x) > 0.5)
    }

    /// Mean cross-entropy plus `l2 / 2 * |w|^2` (bias unregularized).
    pub fn objective(&self, xs: &[Vec<f64>], ys: &[u8]) -> f64 {
        let data: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| {
                let z = self.score(x);
                z.max(0.0) - z * f64::from(y) + (-z.abs()).exp().ln_1p()
            })
            .sum::<f64>()
            / xs.len() as f64;
        data + 0.5 * self.l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Full-batch gradient descent from zero weights.
///
/// The step is `min(learning_rate, 1 / L)` with `L` an upper bound on the
/// objective's curvature, so raw counts of any scale converge. Stops when the
/// objective improves by less than [`CONVERGENCE_TOLERANCE`] or after
/// `max_epochs` steps. The seed only fixes the summation order.
pub fn logreg_train(data: &[(BowVector, u8)], config: &TrainConfig, l2: f64) -> Result<LogRegModel> {
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::invalid(format!("l2 must be non-negative, got {l2}")));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if data.len() < 2 {
        return Err(Error::invalid("logistic regression needs at least 2 examples"));
    }
    for class in 0..2u8 {
        if !data.iter().any(|(_, y)| *y == class) {
            return Err(Error::MissingClass {
                split: "logreg training data".into(),
                class,
            });
        }
    }
    let k = data[0].0.counts.len();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| data[i].0.to_f64()).collect();
    let ys: Vec<u8> = order.iter().map(|&i| data[i].1).collect();
    if xs.iter().any(|x| x.len() != k) {
        return Err(Error::invalid("bag-of-words vectors differ in length"));
    }

    let n = xs.len() as f64;
    let curvature = 0.25 * xs.iter().map(|x| 1.0 + x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n + l2;
    let step = config.learning_rate.min(1.0 / curvature);

    let mut model = LogRegModel::zeros(k, l2);
    let mut previous = model.objective(&xs, &ys);
    let mut grad = vec![0.0; k];
    for _ in 0..config.max_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_bias = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let r = model.predict_proba(x) - f64::from(y);
            grad_bias += r;
            for (g, v) in grad.iter_mut().zip(x) {
                *g += r * v;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= step * (g / n + l2 * *w);
        }
        model.bias -= step * grad_bias / n;
        let current = model.objective(&xs, &ys);
        if !current.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
        }
        let improvement = previous - current;
        previous = current;
        if improvement < CONVERGENCE_TOLERANCE {
            break;
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopWeights {
    /// Most positive first.
    pub positive: Vec<(String, f64)>,
    /// Most negative first.
    pub negative: Vec<(String, f64)>,
}

/// `word (+6.1)` style rendering, one decimal with explicit sign.
pub fn format_weight(word: &str, weight: f64) -> String {
    format!("{word} ({weight:+.1})")
}

/// The `k` largest and `k` smallest signed weights mapped back to words.
pub fn logreg_top_weights(model: &LogRegModel, vocab: &Vocabulary, k: usize) -> Result<TopWeights> {
    if k > vocab.len() || vocab.len() != model.weights.len() {
        return Err(Error::invalid(format!(
            "cannot take top {k} of {} weights over a vocabulary of {}",
            model.weights.len(),
            vocab.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = model.weights.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let word = |(i, w): &(usize, f64)| (vocab.words()[*i].clone(), *w);
    let positive = ranked.iter().take(k).map(word).collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let negative = ranked.iter().take(k).map(word).collect();
    Ok(TopWeights { positive, negative })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bow(v: &[u32]) -> BowVector {
        BowVector { counts: v.to_vec() }
    }

    #[test]
    fn zero_model_is_indifferent() {
        let m = LogRegModel::zeros(3, 0.0);
        assert_eq!(m.predict_proba(&[4.0, 0.0, 9.0]), 0.5);
    }

    #[test]
    fn separates_two_points() {
        let data = vec![(bow(&[3, 0]), 1), (bow(&[0, 3]), 0)];
        let config = TrainConfig { learning_rate: 1.0, max_epochs: 1000, ..TrainConfig::default() };
        let m = logreg_train(&data, &config, 0.0).unwrap();
        for (x, y) in &data {
            assert_eq!(m.predict(&x.to_f64()), *y);
        }
    }

    #[test]
    fn huge_penalty_flattens_weights() {
        let data = vec![(bow(&[3, 0, 1]), 1), (bow(&[0, 3, 1]), 0), (bow(&[5, 1, 0]), 1)];
        let config = TrainConfig { learning_rate: 1.0, max_epochs: 1000, ..TrainConfig::default() };
        let m = logreg_train(&data, &config, 1e6).unwrap();
        let max = m.weights.iter().fold(0.0f64, |a, w| a.max(w.abs()));
        assert!(max < 1e-3, "max weight {max}");
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![(bow(&[1]), 1), (bow(&[2]), 1)];
        assert!(matches!(logreg_train(&data, &TrainConfig::default(), 0.0), Err(Error::MissingClass { class: 0, .. })));
    }

    #[test]
    fn top_weights() {
        let vocab = Vocabulary::from_words(vec!["a".into(), "b".into(), "c".into()], "t").unwrap();
        let m = LogRegModel { weights: vec![2.0, -3.0, 1.0], bias: 0.0, l2: 0.0 };
        let top = logreg_top_weights(&m, &vocab, 1).unwrap();
        assert_eq!(top.positive, vec![("a".to_string(), 2.0)]);
        assert_eq!(top.negative, vec![("b".to_string(), -3.0)]);
        let all = logreg_top_weights(&m, &vocab, 3).unwrap();
        assert_eq!(all.positive.iter().map(|p| p.0.as_str()).collect::<Vec<_>>(), ["a", "c", "b"]);
        assert!(logreg_top_weights(&m, &vocab, 4).is_err());
    }

    #[test]
    fn weight_rendering() {
        assert_eq!(format_weight("pollution", 6.1), "pollution (+6.1)");
        assert_eq!(format_weight("environment", -7.5), "environment (-7.5)");
    }

    #[test]
    fn monotone_rescaling_keeps_decisions() {
        let m = LogRegModel { weights: vec![0.7, -1.3], bias: 0.2, l2: 0.0 };
        for x in [[1.0, 0.0], [0.0, 1.0], [2.0, 1.0], [0.1, 0.1]] {
            let s = m.score(&x);
            for f in [|v: f64| 3.0 * v, |v: f64| v.powi(3), |v: f64| v.tanh()] {
                assert_eq!(s > 0.0, f(s) > 0.0);
            }
        }
    }
}
