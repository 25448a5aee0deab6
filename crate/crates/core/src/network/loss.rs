use serde::{Deserialize, Serialize};

use super::NetworkError;

/// Output head: how class scores become probabilities and a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Softmax over classes with categorical cross-entropy.
    SoftmaxCrossEntropy,
    /// Independent sigmoid per class, binary cross-entropy summed over
    /// classes against the one-hot target.
    SigmoidPerClass,
}

impl std::str::FromStr for Head {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softmax" | "softmax-cross-entropy" => Ok(Head::SoftmaxCrossEntropy),
            "sigmoid" | "sigmoid-per-class" => Ok(Head::SigmoidPerClass),
            other => Err(format!("unknown head '{other}'")),
        }
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn probabilities(scores: &[f64], head: Head) -> Vec<f64> {
    match head {
        Head::SoftmaxCrossEntropy => softmax(scores),
        Head::SigmoidPerClass => scores.iter().map(|&s| sigmoid(s)).collect(),
    }
}

/// Loss of one sample and its gradient with respect to the scores.
pub fn loss_and_grad(
    scores: &[f64],
    label: usize,
    head: Head,
) -> Result<(f64, Vec<f64>), NetworkError> {
    let n = scores.len();
    if n < 2 {
        return Err(NetworkError::InvalidConfig(format!(
            "need at least 2 classes, got {n}"
        )));
    }
    if label >= n {
        return Err(NetworkError::InvalidLabel {
            label,
            n_classes: n,
        });
    }
    match head {
        Head::SoftmaxCrossEntropy => {
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
            let loss = log_sum - scores[label];
            let mut grad = softmax(scores);
            grad[label] -= 1.0;
            Ok((loss, grad))
        }
        Head::SigmoidPerClass => {
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(n);
            for (k, &s) in scores.iter().enumerate() {
                let target = if k == label { 1.0 } else { 0.0 };
                // -[t ln σ(s) + (1-t) ln(1-σ(s))] = softplus(s) - t·s
                loss += softplus(s) - target * s;
                grad.push(sigmoid(s) - target);
            }
            Ok((loss, grad))
        }
    }
}
