//! Bias measures computed exactly from a joint distribution table and
//! empirically from labeled predictions.
//!
//! All five metric kinds reduce to conditional probabilities of the
//! joint law of (group, label, prediction); the exact and empirical
//! paths share one formula over a [`JointTable`], differing only in
//! where the masses come from.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::GroupId;

/// Conditioning events with probability below this are treated as
/// undefined rather than silently evaluating 0/0.
pub const COND_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("conditioning event '{0}' has probability below 1e-12")]
    UndefinedConditional(String),
    #[error("conditioning cell '{cell}' has {count} observations, need {min_cell}")]
    InsufficientSupport {
        cell: String,
        count: u64,
        min_cell: u64,
    },
    #[error("joint table invalid: {0}")]
    InvalidTable(String),
}

/// Joint distribution over (group, label, prediction).
/// `masses[a][y][yhat]`, nonnegative, summing to 1 within 1e-10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub masses: Vec<[[f64; 2]; 2]>,
}

impl JointTable {
    pub fn zero(num_groups: usize) -> Self {
        Self {
            masses: vec![[[0.0; 2]; 2]; num_groups],
        }
    }

    pub fn num_groups(&self) -> usize {
        self.masses.len()
    }

    pub fn total(&self) -> f64 {
        self.masses
            .iter()
            .map(|g| g[0][0] + g[0][1] + g[1][0] + g[1][1])
            .sum()
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.masses.is_empty() {
            return Err(MetricError::InvalidTable("no groups".into()));
        }
        for g in &self.masses {
            for row in g {
                for &m in row {
                    if m < 0.0 {
                        return Err(MetricError::InvalidTable(format!("negative mass {m}")));
                    }
                }
            }
        }
        let t = self.total();
        if (t - 1.0).abs() > 1e-10 {
            return Err(MetricError::InvalidTable(format!("total mass {t}")));
        }
        Ok(())
    }

    /// P(A = a).
    pub fn group_mass(&self, a: usize) -> f64 {
        let g = &self.masses[a];
        g[0][0] + g[0][1] + g[1][0] + g[1][1]
    }

    /// P(A = a, Y = 1).
    pub fn positive_label_mass(&self, a: usize) -> f64 {
        self.masses[a][1][0] + self.masses[a][1][1]
    }

    /// P(A = a, Yhat = v).
    pub fn prediction_mass(&self, a: usize, v: usize) -> f64 {
        self.masses[a][0][v] + self.masses[a][1][v]
    }

    /// Total-variation distance: half the sum of absolute cell
    /// differences. Panics if group counts differ.
    pub fn tv_distance(&self, other: &JointTable) -> f64 {
        assert_eq!(self.num_groups(), other.num_groups());
        let mut sum = 0.0;
        for (ga, gb) in self.masses.iter().zip(&other.masses) {
            for y in 0..2 {
                for v in 0..2 {
                    sum += (ga[y][v] - gb[y][v]).abs();
                }
            }
        }
        sum / 2.0
    }

    /// Normalized table from raw per-cell counts.
    pub fn from_counts(counts: &[[[u64; 2]; 2]]) -> Self {
        let total: u64 = counts
            .iter()
            .map(|g| g[0][0] + g[0][1] + g[1][0] + g[1][1])
            .sum();
        let t = total.max(1) as f64;
        Self {
            masses: counts
                .iter()
                .map(|g| {
                    [
                        [g[0][0] as f64 / t, g[0][1] as f64 / t],
                        [g[1][0] as f64 / t, g[1][1] as f64 / t],
                    ]
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "DP_RATIO")]
    DpRatio,
    #[serde(rename = "EO")]
    Eo,
    #[serde(rename = "PVP")]
    Pvp,
    /// Alias of DP_RATIO; always computes the identical quantity.
    #[serde(rename = "SELECTION_RATE_RATIO")]
    SelectionRateRatio,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Sp,
        MetricKind::DpRatio,
        MetricKind::Eo,
        MetricKind::Pvp,
        MetricKind::SelectionRateRatio,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Sp => "SP",
            MetricKind::DpRatio => "DP_RATIO",
            MetricKind::Eo => "EO",
            MetricKind::Pvp => "PVP",
            MetricKind::SelectionRateRatio => "SELECTION_RATE_RATIO",
        }
    }

    /// Number of conditioning cells the estimator must populate for a
    /// population with `g` groups.
    pub fn num_conditioning_cells(&self, g: usize) -> usize {
        match self {
            MetricKind::Sp | MetricKind::DpRatio | MetricKind::SelectionRateRatio => g,
            MetricKind::Eo => g,
            MetricKind::Pvp => 2 * g,
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SP" => Ok(MetricKind::Sp),
            "DP_RATIO" => Ok(MetricKind::DpRatio),
            "EO" => Ok(MetricKind::Eo),
            "PVP" => Ok(MetricKind::Pvp),
            "SELECTION_RATE_RATIO" => Ok(MetricKind::SelectionRateRatio),
            other => Err(format!("unknown metric kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
    /// Per-conditioning-cell observation counts; empirical case only.
    /// Ordered as the groups are, with PVP listing the yhat=1 cells
    /// first then the yhat=0 cells.
    pub support_counts: Option<Vec<u64>>,
}

fn spread(rates: &[f64]) -> f64 {
    let max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Acceptance rate P(yhat=1 | a) per group; errors if any group has
/// (near-)zero mass.
fn acceptance_rates(table: &JointTable) -> Result<Vec<f64>, MetricError> {
    (0..table.num_groups())
        .map(|a| {
            let denom = table.group_mass(a);
            if denom < COND_FLOOR {
                return Err(MetricError::UndefinedConditional(format!("A={a}")));
            }
            Ok(table.prediction_mass(a, 1) / denom)
        })
        .collect()
}

fn metric_from_table(kind: MetricKind, table: &JointTable) -> Result<f64, MetricError> {
    match kind {
        MetricKind::Sp => Ok(spread(&acceptance_rates(table)?)),
        MetricKind::DpRatio | MetricKind::SelectionRateRatio => {
            let rates = acceptance_rates(table)?;
            let max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max < COND_FLOOR {
                return Err(MetricError::UndefinedConditional(
                    "all acceptance rates zero".into(),
                ));
            }
            let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok(min / max)
        }
        MetricKind::Eo => {
            let tprs: Vec<f64> = (0..table.num_groups())
                .map(|a| {
                    let denom = table.positive_label_mass(a);
                    if denom < COND_FLOOR {
                        return Err(MetricError::UndefinedConditional(format!("Y=1, A={a}")));
                    }
                    Ok(table.masses[a][1][1] / denom)
                })
                .collect::<Result<_, _>>()?;
            Ok(spread(&tprs))
        }
        MetricKind::Pvp => {
            let mut spreads = [0.0; 2];
            for (v, slot) in spreads.iter_mut().enumerate() {
                let ppvs: Vec<f64> = (0..table.num_groups())
                    .map(|a| {
                        let denom = table.prediction_mass(a, v);
                        if denom < COND_FLOOR {
                            return Err(MetricError::UndefinedConditional(format!(
                                "Yhat={v}, A={a}"
                            )));
                        }
                        Ok(table.masses[a][1][v] / denom)
                    })
                    .collect::<Result<_, _>>()?;
                *slot = spread(&ppvs);
            }
            Ok(spreads[0].max(spreads[1]))
        }
    }
}

/// Exact metric value from a joint distribution table.
pub fn exact_metric(kind: MetricKind, table: &JointTable) -> Result<MetricValue, MetricError> {
    table.validate()?;
    Ok(MetricValue {
        kind,
        value: metric_from_table(kind, table)?,
        support_counts: None,
    })
}

/// One labeled-prediction observation: (group, true label, prediction).
pub type Observation = (GroupId, bool, bool);

pub const DEFAULT_MIN_CELL: u64 = 10;

/// Raw counts over (group, label, prediction) from observations.
pub fn count_table(data: &[Observation], num_groups: usize) -> Vec<[[u64; 2]; 2]> {
    let mut counts = vec![[[0u64; 2]; 2]; num_groups];
    for &(a, y, yhat) in data {
        counts[a.0][y as usize][yhat as usize] += 1;
    }
    counts
}

/// Plug-in estimate of a metric from labeled predictions. Fails with
/// `InsufficientSupport` if any conditioning cell has fewer than
/// `min_cell` observations.
pub fn empirical_metric(
    kind: MetricKind,
    data: &[Observation],
    min_cell: u64,
) -> Result<MetricValue, MetricError> {
    if data.is_empty() {
        return Err(MetricError::InvalidTable("empty data".into()));
    }
    let num_groups = data.iter().map(|(a, _, _)| a.0).max().unwrap() + 1;
    let counts = count_table(data, num_groups);

    let support: Vec<(String, u64)> = match kind {
        MetricKind::Sp | MetricKind::DpRatio | MetricKind::SelectionRateRatio => (0..num_groups)
            .map(|a| {
                let c = counts[a].iter().flatten().sum();
                (format!("A={a}"), c)
            })
            .collect(),
        MetricKind::Eo => (0..num_groups)
            .map(|a| (format!("Y=1, A={a}"), counts[a][1][0] + counts[a][1][1]))
            .collect(),
        MetricKind::Pvp => {
            let mut cells = Vec::with_capacity(2 * num_groups);
            for v in [1usize, 0] {
                for (a, c) in counts.iter().enumerate() {
                    cells.push((format!("Yhat={v}, A={a}"), c[0][v] + c[1][v]));
                }
            }
            cells
        }
    };
    for (cell, count) in &support {
        if *count < min_cell {
            return Err(MetricError::InsufficientSupport {
                cell: cell.clone(),
                count: *count,
                min_cell,
            });
        }
    }

    let table = JointTable::from_counts(&counts);
    Ok(MetricValue {
        kind,
        value: metric_from_table(kind, &table)?,
        support_counts: Some(support.into_iter().map(|(_, c)| c).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Table with given per-group masses, acceptance rates independent
    /// of label (label split 50/50 and prediction independent of y).
    fn rate_table(weights: &[f64], rates: &[f64]) -> JointTable {
        let masses = weights
            .iter()
            .zip(rates)
            .map(|(&w, &r)| {
                [
                    [w * 0.5 * (1.0 - r), w * 0.5 * r],
                    [w * 0.5 * (1.0 - r), w * 0.5 * r],
                ]
            })
            .collect();
        JointTable { masses }
    }

    #[test]
    fn worked_acceptance_rates() {
        let table = rate_table(&[0.5, 0.5], &[0.8, 0.6]);
        let sp = exact_metric(MetricKind::Sp, &table).unwrap();
        assert!((sp.value - 0.2).abs() < 1e-12);
        let dp = exact_metric(MetricKind::DpRatio, &table).unwrap();
        assert!((dp.value - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfect_classifier_has_zero_eo_and_pvp() {
        // Mass only where yhat == y, both labels present per group.
        let table = JointTable {
            masses: vec![
                [[0.2, 0.0], [0.0, 0.3]],
                [[0.1, 0.0], [0.0, 0.4]],
            ],
        };
        assert_eq!(exact_metric(MetricKind::Eo, &table).unwrap().value, 0.0);
        assert_eq!(exact_metric(MetricKind::Pvp, &table).unwrap().value, 0.0);
    }

    #[test]
    fn zero_mass_group_is_undefined() {
        let table = JointTable {
            masses: vec![[[0.5, 0.0], [0.0, 0.5]], [[0.0, 0.0], [0.0, 0.0]]],
        };
        assert!(matches!(
            exact_metric(MetricKind::Sp, &table),
            Err(MetricError::UndefinedConditional(_))
        ));
    }

    #[test]
    fn all_reject_dp_ratio_undefined() {
        let table = JointTable {
            masses: vec![[[0.3, 0.0], [0.2, 0.0]], [[0.3, 0.0], [0.2, 0.0]]],
        };
        assert!(matches!(
            exact_metric(MetricKind::DpRatio, &table),
            Err(MetricError::UndefinedConditional(_))
        ));
    }

    // Independent re-derivation by direct summation over explicit cell
    // lists, kept apart from the JointTable accessor path.
    fn brute_force_metric(kind: MetricKind, table: &JointTable) -> Result<f64, ()> {
        let g = table.num_groups();
        let cells: Vec<(usize, usize, usize, f64)> = (0..g)
            .flat_map(|a| {
                (0..2).flat_map(move |y| (0..2).map(move |v| (a, y, v)))
            })
            .map(|(a, y, v)| (a, y, v, table.masses[a][y][v]))
            .collect();
        let cond = |pred: &dyn Fn(usize, usize, usize) -> bool,
                    ev: &dyn Fn(usize, usize, usize) -> bool|
         -> Result<f64, ()> {
            let den: f64 = cells
                .iter()
                .filter(|(a, y, v, _)| pred(*a, *y, *v))
                .map(|c| c.3)
                .sum();
            if den < 1e-12 {
                return Err(());
            }
            let num: f64 = cells
                .iter()
                .filter(|(a, y, v, _)| pred(*a, *y, *v) && ev(*a, *y, *v))
                .map(|c| c.3)
                .sum();
            Ok(num / den)
        };
        match kind {
            MetricKind::Sp | MetricKind::DpRatio | MetricKind::SelectionRateRatio => {
                let rates: Vec<f64> = (0..g)
                    .map(|grp| cond(&|a, _, _| a == grp, &|_, _, v| v == 1))
                    .collect::<Result<_, _>>()?;
                let max = rates.iter().cloned().fold(f64::MIN, f64::max);
                let min = rates.iter().cloned().fold(f64::MAX, f64::min);
                if kind == MetricKind::Sp {
                    Ok(max - min)
                } else if max < 1e-12 {
                    Err(())
                } else {
                    Ok(min / max)
                }
            }
            MetricKind::Eo => {
                let tprs: Vec<f64> = (0..g)
                    .map(|grp| cond(&|a, y, _| a == grp && y == 1, &|_, _, v| v == 1))
                    .collect::<Result<_, _>>()?;
                let mut worst: f64 = 0.0;
                for i in 0..g {
                    for j in 0..g {
                        worst = worst.max((tprs[i] - tprs[j]).abs());
                    }
                }
                Ok(worst)
            }
            MetricKind::Pvp => {
                let mut outer: f64 = 0.0;
                for val in 0..2 {
                    let ppvs: Vec<f64> = (0..g)
                        .map(|grp| cond(&|a, _, v| a == grp && v == val, &|_, y, _| y == 1))
                        .collect::<Result<_, _>>()?;
                    let max = ppvs.iter().cloned().fold(f64::MIN, f64::max);
                    let min = ppvs.iter().cloned().fold(f64::MAX, f64::min);
                    outer = outer.max(max - min);
                }
                Ok(outer)
            }
        }
    }

    #[test]
    fn exact_metric_matches_brute_force_on_random_tables() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let g = rng.random_range(2..=4);
            let mut masses = vec![[[0.0f64; 2]; 2]; g];
            let mut total = 0.0;
            for cell in masses.iter_mut().flatten().flatten() {
                *cell = 0.01 + rng.random::<f64>();
                total += *cell;
            }
            for cell in masses.iter_mut().flatten().flatten() {
                *cell /= total;
            }
            let table = JointTable { masses };
            for kind in MetricKind::ALL {
                let expected = brute_force_metric(kind, &table).unwrap();
                let got = exact_metric(kind, &table).unwrap().value;
                assert!(
                    (got - expected).abs() < 1e-12,
                    "{kind}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn empirical_independence_gives_zero_sp() {
        // Same acceptance frequency per group by construction.
        let mut data = Vec::new();
        for a in 0..2 {
            for _ in 0..30 {
                data.push((GroupId(a), true, true));
                data.push((GroupId(a), false, false));
            }
        }
        let sp = empirical_metric(MetricKind::Sp, &data, 10).unwrap();
        assert_eq!(sp.value, 0.0);
    }

    #[test]
    fn single_group_sp_zero_dp_one() {
        let data: Vec<Observation> = (0..40)
            .map(|i| (GroupId(0), i % 2 == 0, i % 3 == 0))
            .collect();
        assert_eq!(empirical_metric(MetricKind::Sp, &data, 10).unwrap().value, 0.0);
        assert_eq!(
            empirical_metric(MetricKind::DpRatio, &data, 10).unwrap().value,
            1.0
        );
    }

    #[test]
    fn insufficient_support_detected() {
        let mut data: Vec<Observation> = (0..50).map(|_| (GroupId(0), true, true)).collect();
        data.push((GroupId(1), true, true));
        assert!(matches!(
            empirical_metric(MetricKind::Sp, &data, 10),
            Err(MetricError::InsufficientSupport { .. })
        ));
    }

    #[test]
    fn selection_rate_ratio_is_dp_ratio_bitwise() {
        let table = rate_table(&[0.4, 0.6], &[0.55, 0.9]);
        let dp = exact_metric(MetricKind::DpRatio, &table).unwrap().value;
        let srr = exact_metric(MetricKind::SelectionRateRatio, &table).unwrap().value;
        assert_eq!(dp.to_bits(), srr.to_bits());
    }

    #[test]
    fn group_permutation_leaves_metrics_unchanged() {
        let table = JointTable {
            masses: vec![
                [[0.10, 0.05], [0.05, 0.20]],
                [[0.15, 0.10], [0.10, 0.25]],
            ],
        };
        let permuted = JointTable {
            masses: vec![table.masses[1], table.masses[0]],
        };
        for kind in MetricKind::ALL {
            let a = exact_metric(kind, &table).unwrap().value;
            let b = exact_metric(kind, &permuted).unwrap().value;
            assert!((a - b).abs() < 1e-15, "{kind}");
        }
    }

    #[test]
    fn sp_zero_iff_dp_one() {
        let t1 = rate_table(&[0.5, 0.5], &[0.7, 0.7]);
        assert_eq!(exact_metric(MetricKind::Sp, &t1).unwrap().value, 0.0);
        assert_eq!(exact_metric(MetricKind::DpRatio, &t1).unwrap().value, 1.0);
        let t2 = rate_table(&[0.5, 0.5], &[0.7, 0.5]);
        assert!(exact_metric(MetricKind::Sp, &t2).unwrap().value > 0.0);
        assert!(exact_metric(MetricKind::DpRatio, &t2).unwrap().value < 1.0);
    }
}
