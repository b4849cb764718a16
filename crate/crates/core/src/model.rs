//! Classifiers under audit: per-group threshold policies (the object
//! the debiaser manipulates) and a logistic model trained by full-batch
//! gradient descent, plus exact extraction of the prediction law.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::JointTable;
use crate::population::{Dataset, GroupId, PopulationSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("group {0} has no samples; its weight is unidentifiable")]
    MissingGroup(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample weights must match dataset length and be positive")]
    BadWeights,
}

/// Deterministic per-group cutoffs on the score level: predicts 1 iff
/// x >= thresholds[a]. A threshold of K rejects everyone in the group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub thresholds: Vec<usize>,
}

impl ThresholdPolicy {
    pub fn accept_all(num_groups: usize) -> Self {
        Self {
            thresholds: vec![0; num_groups],
        }
    }

    /// Semicolon-joined threshold vector, as written to trace CSV.
    pub fn to_compact_string(&self) -> String {
        self.thresholds
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Parameters of the logistic model over (normalized score, one-hot
/// group): sigmoid(weight_score * x / score_scale + weights_group[a] + bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub weight_score: f64,
    pub weights_group: Vec<f64>,
    pub bias: f64,
    pub score_scale: f64,
}

impl LogisticParams {
    pub fn logit(&self, x: usize, a: GroupId) -> f64 {
        self.weight_score * (x as f64 / self.score_scale) + self.weights_group[a.0] + self.bias
    }

    pub fn probability(&self, x: usize, a: GroupId) -> f64 {
        sigmoid(self.logit(x, a))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classifier {
    Threshold { policy: ThresholdPolicy },
    Logistic { params: LogisticParams, cutoff: f64 },
}

impl Classifier {
    pub fn logistic(params: LogisticParams) -> Self {
        Classifier::Logistic {
            params,
            cutoff: 0.5,
        }
    }

    pub fn num_groups(&self) -> usize {
        match self {
            Classifier::Threshold { policy } => policy.thresholds.len(),
            Classifier::Logistic { params, .. } => params.weights_group.len(),
        }
    }
}

/// The black-box query surface: everything the auditor is allowed to
/// see of a model under audit.
pub trait Predictor {
    fn predict(&self, x: usize, a: GroupId) -> bool;
    fn num_groups(&self) -> usize;
}

impl Predictor for Classifier {
    fn predict(&self, x: usize, a: GroupId) -> bool {
        predict(self, x, a)
    }

    fn num_groups(&self) -> usize {
        Classifier::num_groups(self)
    }
}

impl Predictor for ThresholdPolicy {
    fn predict(&self, x: usize, a: GroupId) -> bool {
        x >= self.thresholds[a.0]
    }

    fn num_groups(&self) -> usize {
        self.thresholds.len()
    }
}

/// Deterministic prediction. A sigmoid value exactly at the cutoff
/// predicts 1.
pub fn predict(c: &Classifier, x: usize, a: GroupId) -> bool {
    match c {
        Classifier::Threshold { policy } => x >= policy.thresholds[a.0],
        Classifier::Logistic { params, cutoff } => params.probability(x, a) >= *cutoff,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
            l2_penalty: 0.0,
        }
    }
}

/// Mean cross-entropy loss of the logistic model on a weighted dataset,
/// plus the L2 penalty term.
pub fn logistic_loss(
    params: &LogisticParams,
    data: &Dataset,
    weights: Option<&[f64]>,
    l2_penalty: f64,
) -> f64 {
    let mut loss = 0.0;
    let mut wsum = 0.0;
    for (i, s) in data.samples.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        let z = params.logit(s.x, s.a);
        // log(1+e^z) - y*z, computed stably.
        let log1pe = if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        };
        loss += w * (log1pe - if s.y { z } else { 0.0 });
        wsum += w;
    }
    let mut penalty = params.weight_score * params.weight_score + params.bias * params.bias;
    for &wg in &params.weights_group {
        penalty += wg * wg;
    }
    loss / wsum + l2_penalty * penalty
}

/// Trains the logistic model by full-batch gradient descent on mean
/// cross-entropy with L2 penalty. The rng is used only for the uniform
/// [-0.01, 0.01] initialization, so identical seeds give identical
/// parameter trajectories.
pub fn train_erm<R: Rng + ?Sized>(
    data: &Dataset,
    num_groups: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LogisticParams, ModelError> {
    train_erm_weighted(data, None, num_groups, cfg, rng)
}

pub fn train_erm_weighted<R: Rng + ?Sized>(
    data: &Dataset,
    sample_weights: Option<&[f64]>,
    num_groups: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LogisticParams, ModelError> {
    if data.samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some(ws) = sample_weights {
        if ws.len() != data.samples.len() || ws.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(ModelError::BadWeights);
        }
    }
    let mut seen = vec![false; num_groups];
    let mut max_x = 0usize;
    for s in &data.samples {
        if s.a.0 >= num_groups {
            return Err(ModelError::MissingGroup(s.a.0));
        }
        seen[s.a.0] = true;
        max_x = max_x.max(s.x);
    }
    if let Some(a) = seen.iter().position(|&s| !s) {
        return Err(ModelError::MissingGroup(a));
    }

    let score_scale = max_x.max(1) as f64;
    let init = |rng: &mut R| rng.random::<f64>() * 0.02 - 0.01;
    let mut params = LogisticParams {
        weight_score: init(rng),
        weights_group: (0..num_groups).map(|_| init(rng)).collect(),
        bias: init(rng),
        score_scale,
    };

    let wsum: f64 = match sample_weights {
        Some(ws) => ws.iter().sum(),
        None => data.samples.len() as f64,
    };
    for _ in 0..cfg.epochs {
        let mut g_score = 0.0;
        let mut g_bias = 0.0;
        let mut g_group = vec![0.0; num_groups];
        for (i, s) in data.samples.iter().enumerate() {
            let w = sample_weights.map_or(1.0, |ws| ws[i]);
            let err = w * (params.probability(s.x, s.a) - if s.y { 1.0 } else { 0.0 });
            g_score += err * (s.x as f64 / score_scale);
            g_group[s.a.0] += err;
            g_bias += err;
        }
        let lr = cfg.learning_rate;
        let l2 = 2.0 * cfg.l2_penalty;
        params.weight_score -= lr * (g_score / wsum + l2 * params.weight_score);
        params.bias -= lr * (g_bias / wsum + l2 * params.bias);
        for (a, g) in g_group.iter().enumerate() {
            params.weights_group[a] -= lr * (g / wsum + l2 * params.weights_group[a]);
        }
    }
    Ok(params)
}

/// Exact law of (A, Y, Yhat) under `spec`:
/// P(a, y, yhat) = sum_x 1[predict(x,a) = yhat] * w_a * P[x|a] * P[y|x,a].
pub fn prediction_distribution(c: &Classifier, spec: &PopulationSpec) -> JointTable {
    prediction_distribution_of(c, spec)
}

/// Same as [`prediction_distribution`], but usable for any predictor
/// (threshold policies in particular).
pub fn prediction_distribution_of<P: Predictor + ?Sized>(
    p: &P,
    spec: &PopulationSpec,
) -> JointTable {
    assert_eq!(p.num_groups(), spec.num_groups(), "group count mismatch");
    let mut table = JointTable::zero(spec.num_groups());
    for cell in crate::population::enumerate(spec) {
        let yhat = p.predict(cell.x, cell.a) as usize;
        let q = cell.label_prob;
        table.masses[cell.a.0][1][yhat] += cell.joint_mass * q;
        table.masses[cell.a.0][0][yhat] += cell.joint_mass * (1.0 - q);
    }
    table
}

/// Exact misclassification probability P(Yhat != Y) under `spec`.
pub fn exact_error<P: Predictor + ?Sized>(p: &P, spec: &PopulationSpec) -> f64 {
    let mut err = 0.0;
    for cell in crate::population::enumerate(spec) {
        let yhat = p.predict(cell.x, cell.a);
        let q = cell.label_prob;
        err += cell.joint_mass * if yhat { 1.0 - q } else { q };
    }
    err
}
