//! Dynamic debiasing: per-group threshold calibration driven by the
//! auditor's empirical table, a reweighing pre-processor, and the
//! full-information oracle used as the regret baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auditor::AuditQuery;
use crate::metrics::{exact_metric, JointTable, MetricError, MetricKind};
use crate::model::ThresholdPolicy;
use crate::population::{enumerate, Dataset, PopulationSpec};

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error("group {0} has no observations")]
    MissingGroup(usize),
    #[error("every candidate policy left the metric undefined")]
    NoFeasiblePolicy,
    #[error("empty (group={a}, label={y}) cell; reweighing undefined")]
    EmptyCell { a: usize, y: usize },
}

fn default_max_sweeps() -> u32 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiaserConfig {
    /// Weight on bias vs error in the objective
    /// lambda * bias + (1 - lambda) * error.
    pub lambda: f64,
    pub target_metric: MetricKind,
    /// Exponential smoothing of the empirical table across rounds;
    /// 0 disables it.
    #[serde(default)]
    pub smoothing: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: u32,
}

impl DebiaserConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must be in [0,1], got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(format!("smoothing must be in [0,1], got {}", self.smoothing));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasDecision {
    pub policy: ThresholdPolicy,
    pub predicted_bias: f64,
    pub predicted_error: f64,
    pub objective: f64,
}

/// Normalized mass over (group, score, label) — the substrate the
/// threshold search evaluates candidate policies on. Built either from
/// empirical counts (the deployed path) or from exact enumeration (the
/// oracle path).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLabelTable {
    /// `mass[a][x][y]`, summing to 1.
    pub mass: Vec<Vec<[f64; 2]>>,
}

impl ScoreLabelTable {
    pub fn num_groups(&self) -> usize {
        self.mass.len()
    }

    pub fn num_score_levels(&self) -> usize {
        self.mass.first().map_or(0, |g| g.len())
    }

    pub fn from_queries(
        queries: &[AuditQuery],
        num_groups: usize,
        num_score_levels: usize,
    ) -> Result<Self, DebiasError> {
        let mut counts = vec![vec![[0.0f64; 2]; num_score_levels]; num_groups];
        for q in queries {
            counts[q.a.0][q.x][q.y as usize] += 1.0;
        }
        Self::from_mass(counts)
    }

    pub fn from_spec(spec: &PopulationSpec) -> Result<Self, DebiasError> {
        let mut mass = vec![vec![[0.0f64; 2]; spec.num_score_levels]; spec.num_groups()];
        for cell in enumerate(spec) {
            mass[cell.a.0][cell.x][1] = cell.joint_mass * cell.label_prob;
            mass[cell.a.0][cell.x][0] = cell.joint_mass * (1.0 - cell.label_prob);
        }
        Self::from_mass(mass)
    }

    fn from_mass(mut mass: Vec<Vec<[f64; 2]>>) -> Result<Self, DebiasError> {
        let mut total = 0.0;
        for (a, group) in mass.iter().enumerate() {
            let gsum: f64 = group.iter().map(|c| c[0] + c[1]).sum();
            if gsum <= 0.0 {
                return Err(DebiasError::MissingGroup(a));
            }
            total += gsum;
        }
        for cell in mass.iter_mut().flatten() {
            cell[0] /= total;
            cell[1] /= total;
        }
        Ok(Self { mass })
    }

    /// Exponentially smooths `self` toward a previous table:
    /// alpha * prev + (1 - alpha) * self, cellwise.
    pub fn smoothed_with(&self, prev: &ScoreLabelTable, alpha: f64) -> ScoreLabelTable {
        let mass = self
            .mass
            .iter()
            .zip(&prev.mass)
            .map(|(ga, gp)| {
                ga.iter()
                    .zip(gp)
                    .map(|(ca, cp)| {
                        [
                            alpha * cp[0] + (1.0 - alpha) * ca[0],
                            alpha * cp[1] + (1.0 - alpha) * ca[1],
                        ]
                    })
                    .collect()
            })
            .collect();
        ScoreLabelTable { mass }
    }

    /// Joint law of (group, label, prediction) induced by a candidate
    /// threshold policy over this table.
    fn joint_under(&self, policy: &ThresholdPolicy) -> JointTable {
        let mut table = JointTable::zero(self.num_groups());
        for (a, group) in self.mass.iter().enumerate() {
            let tau = policy.thresholds[a];
            for (x, cell) in group.iter().enumerate() {
                let yhat = (x >= tau) as usize;
                table.masses[a][0][yhat] += cell[0];
                table.masses[a][1][yhat] += cell[1];
            }
        }
        table
    }

    /// Misclassification mass of a candidate policy.
    fn error_under(&self, policy: &ThresholdPolicy) -> f64 {
        let mut err = 0.0;
        for (a, group) in self.mass.iter().enumerate() {
            let tau = policy.thresholds[a];
            for (x, cell) in group.iter().enumerate() {
                err += if x >= tau { cell[0] } else { cell[1] };
            }
        }
        err
    }
}

fn evaluate_policy(
    table: &ScoreLabelTable,
    policy: &ThresholdPolicy,
    metric: MetricKind,
) -> Result<(f64, f64), MetricError> {
    let joint = table.joint_under(policy);
    let bias = exact_metric(metric, &joint)?.value;
    Ok((bias, table.error_under(policy)))
}

const EXHAUSTIVE_LIMIT: f64 = 1e6;

/// Finds the objective-minimizing per-group threshold policy over the
/// given table. Exhaustive when (K+1)^g <= 10^6 candidate policies,
/// coordinate descent from the all-zeros start otherwise. Candidates
/// whose metric is undefined are skipped; ties break to the
/// lexicographically smallest threshold vector.
pub fn search_thresholds(
    table: &ScoreLabelTable,
    cfg: &DebiaserConfig,
) -> Result<DebiasDecision, DebiasError> {
    let g = table.num_groups();
    let k = table.num_score_levels();
    let candidates = ((k + 1) as f64).powi(g as i32);
    let best = if candidates <= EXHAUSTIVE_LIMIT {
        exhaustive_search(table, cfg, g, k)
    } else {
        coordinate_descent(table, cfg, g, k)
    };
    let (policy, bias, error) = best.ok_or(DebiasError::NoFeasiblePolicy)?;
    let objective = cfg.lambda * bias + (1.0 - cfg.lambda) * error;
    Ok(DebiasDecision {
        policy,
        predicted_bias: bias,
        predicted_error: error,
        objective,
    })
}

fn objective(cfg: &DebiaserConfig, bias: f64, error: f64) -> f64 {
    cfg.lambda * bias + (1.0 - cfg.lambda) * error
}

fn exhaustive_search(
    table: &ScoreLabelTable,
    cfg: &DebiaserConfig,
    g: usize,
    k: usize,
) -> Option<(ThresholdPolicy, f64, f64)> {
    let mut best: Option<(ThresholdPolicy, f64, f64)> = None;
    let mut thresholds = vec![0usize; g];
    loop {
        let policy = ThresholdPolicy {
            thresholds: thresholds.clone(),
        };
        if let Ok((bias, error)) = evaluate_policy(table, &policy, cfg.target_metric) {
            let obj = objective(cfg, bias, error);
            // Lexicographic enumeration order + strict improvement keeps
            // the first (smallest) vector among exact ties.
            if best
                .as_ref()
                .is_none_or(|(_, b, e)| obj < objective(cfg, *b, *e))
            {
                best = Some((policy, bias, error));
            }
        }
        // Odometer increment over the threshold grid, last group fastest.
        let mut i = g;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if thresholds[i] < k {
                thresholds[i] += 1;
                break;
            }
            thresholds[i] = 0;
        }
    }
}

fn coordinate_descent(
    table: &ScoreLabelTable,
    cfg: &DebiaserConfig,
    g: usize,
    k: usize,
) -> Option<(ThresholdPolicy, f64, f64)> {
    // Deterministic multi-start: accept-all, reject-all, and the
    // per-group error-minimizing vector. Single-coordinate moves cannot
    // cross objective ridges, so a few spread-out starts cover most of
    // the local-minimum mass.
    let error_min: Vec<usize> = (0..g)
        .map(|a| {
            (0..=k)
                .min_by(|&t1, &t2| {
                    let err = |tau: usize| -> f64 {
                        table.mass[a]
                            .iter()
                            .enumerate()
                            .map(|(x, c)| if x >= tau { c[0] } else { c[1] })
                            .sum()
                    };
                    err(t1).partial_cmp(&err(t2)).expect("finite masses")
                })
                .unwrap_or(0)
        })
        .collect();
    let starts = [vec![0usize; g], error_min, vec![k; g]];
    let mut best: Option<(ThresholdPolicy, f64, f64)> = None;
    for start in starts {
        if let Some((policy, bias, error)) = descend_from(table, cfg, g, k, start) {
            let obj = objective(cfg, bias, error);
            let better = match &best {
                None => true,
                Some((bp, bb, be)) => {
                    let bobj = objective(cfg, *bb, *be);
                    obj < bobj || (obj == bobj && policy.thresholds < bp.thresholds)
                }
            };
            if better {
                best = Some((policy, bias, error));
            }
        }
    }
    best
}

fn descend_from(
    table: &ScoreLabelTable,
    cfg: &DebiaserConfig,
    g: usize,
    k: usize,
    mut current: Vec<usize>,
) -> Option<(ThresholdPolicy, f64, f64)> {
    let mut best: Option<(ThresholdPolicy, f64, f64)> = None;
    for _ in 0..cfg.max_sweeps {
        let mut changed = false;
        for a in 0..g {
            let mut local: Option<(usize, f64, f64)> = None;
            for tau in 0..=k {
                let mut cand = current.clone();
                cand[a] = tau;
                let policy = ThresholdPolicy { thresholds: cand };
                if let Ok((bias, error)) = evaluate_policy(table, &policy, cfg.target_metric) {
                    let obj = objective(cfg, bias, error);
                    if local
                        .as_ref()
                        .is_none_or(|(_, b, e)| obj < objective(cfg, *b, *e))
                    {
                        local = Some((tau, bias, error));
                    }
                }
            }
            if let Some((tau, bias, error)) = local {
                if tau != current[a] {
                    changed = true;
                }
                current[a] = tau;
                best = Some((
                    ThresholdPolicy {
                        thresholds: current.clone(),
                    },
                    bias,
                    error,
                ));
            }
        }
        if !changed {
            break;
        }
    }
    best
}

/// Post-processing debiaser: chooses next round's threshold policy from
/// the audited empirical (group, score, label) frequencies.
pub fn post_process(
    empirical_table: &ScoreLabelTable,
    cfg: &DebiaserConfig,
) -> Result<DebiasDecision, DebiasError> {
    search_thresholds(empirical_table, cfg)
}

/// Full-information baseline: the identical search run on the exact
/// enumeration of the population. Its objective lower-bounds every
/// policy in the threshold grid.
pub fn oracle_debias(
    spec: &PopulationSpec,
    cfg: &DebiaserConfig,
) -> Result<DebiasDecision, DebiasError> {
    search_thresholds(&ScoreLabelTable::from_spec(spec)?, cfg)
}

/// Independence-restoring sample weights: weight of cell (a, y) is
/// P(a) * P(y) / P(a, y) over the empirical counts. Every sample gets
/// the weight of its cell.
pub fn reweigh(data: &Dataset) -> Result<Vec<f64>, DebiasError> {
    let num_groups = data
        .samples
        .iter()
        .map(|s| s.a.0)
        .max()
        .map_or(0, |m| m + 1);
    let n = data.samples.len() as f64;
    let mut cell = vec![[0.0f64; 2]; num_groups];
    for s in &data.samples {
        cell[s.a.0][s.y as usize] += 1.0;
    }
    for (a, c) in cell.iter().enumerate() {
        for (y, &count) in c.iter().enumerate() {
            if count == 0.0 {
                return Err(DebiasError::EmptyCell { a, y });
            }
        }
    }
    let p_a: Vec<f64> = cell.iter().map(|c| (c[0] + c[1]) / n).collect();
    let p_y = [
        cell.iter().map(|c| c[0]).sum::<f64>() / n,
        cell.iter().map(|c| c[1]).sum::<f64>() / n,
    ];
    Ok(data
        .samples
        .iter()
        .map(|s| {
            let y = s.y as usize;
            p_a[s.a.0] * p_y[y] / (cell[s.a.0][y] / n)
        })
        .collect())
}
