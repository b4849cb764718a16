//! Finite synthetic populations with sensitive groups and a drift
//! schedule. Every distribution here is exactly enumerable, which is
//! what makes the downstream metric oracles possible.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MASS_TOL: f64 = 1e-12;

/// Index of a sensitive group within its owning [`PopulationSpec`].
///
/// Compound groups (e.g. race x sex) are flattened into a single index;
/// the group name records the combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub usize);

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("group_weights must sum to 1 (got {0})")]
    WeightsNotNormalized(f64),
    #[error("score_dist row {group} must sum to 1 (got {sum})")]
    ScoreDistNotNormalized { group: usize, sum: f64 },
    #[error("negative probability in {0}")]
    NegativeProbability(&'static str),
    #[error("label_prob entry {0} outside [0,1]")]
    LabelProbOutOfRange(f64),
    #[error("inconsistent dimensions: {0}")]
    DimensionMismatch(String),
    #[error("schedule keyframes must start at t=0 and be strictly increasing")]
    BadKeyframeTimes,
    #[error("all keyframes must share group count and score-level count")]
    KeyframeShapeMismatch,
    #[error("schedule needs at least one keyframe")]
    EmptySchedule,
}

/// A finite population: groups with weights `w_a`, a categorical score
/// distribution `P[x|a]` per group over `num_score_levels` levels, and
/// a label probability `q(x,a) = P[Y=1|x,a]` per (group, score) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub group_names: Vec<String>,
    pub num_score_levels: usize,
    pub group_weights: Vec<f64>,
    /// Indexed `score_dist[group][score]`.
    pub score_dist: Vec<Vec<f64>>,
    /// Indexed `label_prob[group][score]`.
    pub label_prob: Vec<Vec<f64>>,
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), PopulationError> {
        let g = self.group_names.len();
        let k = self.num_score_levels;
        if g == 0 || k == 0 {
            return Err(PopulationError::DimensionMismatch(
                "need at least one group and one score level".into(),
            ));
        }
        if self.group_weights.len() != g {
            return Err(PopulationError::DimensionMismatch(format!(
                "group_weights has {} entries for {} groups",
                self.group_weights.len(),
                g
            )));
        }
        if self.score_dist.len() != g || self.label_prob.len() != g {
            return Err(PopulationError::DimensionMismatch(
                "score_dist/label_prob must have one row per group".into(),
            ));
        }
        if self.group_weights.iter().any(|&w| w < 0.0) {
            return Err(PopulationError::NegativeProbability("group_weights"));
        }
        let wsum: f64 = self.group_weights.iter().sum();
        if (wsum - 1.0).abs() > MASS_TOL {
            return Err(PopulationError::WeightsNotNormalized(wsum));
        }
        for (a, row) in self.score_dist.iter().enumerate() {
            if row.len() != k {
                return Err(PopulationError::DimensionMismatch(format!(
                    "score_dist row {a} has {} entries for {k} levels",
                    row.len()
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(PopulationError::NegativeProbability("score_dist"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > MASS_TOL {
                return Err(PopulationError::ScoreDistNotNormalized { group: a, sum });
            }
        }
        for row in &self.label_prob {
            if row.len() != k {
                return Err(PopulationError::DimensionMismatch(
                    "label_prob rows must have one entry per score level".into(),
                ));
            }
            for &q in row {
                if !(0.0..=1.0).contains(&q) {
                    return Err(PopulationError::LabelProbOutOfRange(q));
                }
            }
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }
}

/// Piecewise-linear time evolution of a population. Keyframe times are
/// strictly increasing with the first at t = 0; between keyframes each
/// field interpolates componentwise, past the last keyframe the spec is
/// constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub keyframes: Vec<Keyframe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub time: u64,
    pub spec: PopulationSpec,
}

impl DriftSchedule {
    pub fn new(keyframes: Vec<Keyframe>) -> Result<Self, PopulationError> {
        if keyframes.is_empty() {
            return Err(PopulationError::EmptySchedule);
        }
        if keyframes[0].time != 0 {
            return Err(PopulationError::BadKeyframeTimes);
        }
        for w in keyframes.windows(2) {
            if w[1].time <= w[0].time {
                return Err(PopulationError::BadKeyframeTimes);
            }
        }
        let g = keyframes[0].spec.num_groups();
        let k = keyframes[0].spec.num_score_levels;
        for kf in &keyframes {
            kf.spec.validate()?;
            if kf.spec.num_groups() != g || kf.spec.num_score_levels != k {
                return Err(PopulationError::KeyframeShapeMismatch);
            }
        }
        Ok(Self { keyframes })
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        Self::new(self.keyframes.clone()).map(|_| ())
    }

    /// Static schedule: one keyframe at t = 0.
    pub fn constant(spec: PopulationSpec) -> Result<Self, PopulationError> {
        Self::new(vec![Keyframe { time: 0, spec }])
    }
}

/// Realizes the population at time `t`: exact keyframes at keyframe
/// times, componentwise linear interpolation in between, constant
/// extrapolation beyond the last keyframe.
pub fn spec_at(schedule: &DriftSchedule, t: u64) -> PopulationSpec {
    let kfs = &schedule.keyframes;
    let last = kfs.last().expect("schedule validated nonempty");
    if t >= last.time {
        return last.spec.clone();
    }
    let idx = kfs.partition_point(|kf| kf.time <= t);
    // idx >= 1 because kfs[0].time == 0 <= t, and idx < len because t < last.time.
    let lo = &kfs[idx - 1];
    let hi = &kfs[idx];
    if lo.time == t {
        return lo.spec.clone();
    }
    let lambda = (t - lo.time) as f64 / (hi.time - lo.time) as f64;
    lerp_spec(&lo.spec, &hi.spec, lambda)
}

fn lerp(a: f64, b: f64, lambda: f64) -> f64 {
    a + (b - a) * lambda
}

fn lerp_spec(a: &PopulationSpec, b: &PopulationSpec, lambda: f64) -> PopulationSpec {
    PopulationSpec {
        group_names: a.group_names.clone(),
        num_score_levels: a.num_score_levels,
        group_weights: a
            .group_weights
            .iter()
            .zip(&b.group_weights)
            .map(|(&x, &y)| lerp(x, y, lambda))
            .collect(),
        score_dist: a
            .score_dist
            .iter()
            .zip(&b.score_dist)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| lerp(x, y, lambda)).collect())
            .collect(),
        label_prob: a
            .label_prob
            .iter()
            .zip(&b.label_prob)
            .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| lerp(x, y, lambda)).collect())
            .collect(),
    }
}

/// One observation: score level, group, binary label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub x: usize,
    pub a: GroupId,
    pub y: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub drawn_at: u64,
}

/// Inverse-CDF draw from a nonnegative weight vector summing to ~1.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draws `n` i.i.d. samples: a ~ group_weights, x ~ score_dist[a],
/// y ~ Bernoulli(label_prob[a][x]). Identical rng state gives an
/// identical dataset.
pub fn draw<R: Rng + ?Sized>(spec: &PopulationSpec, n: usize, rng: &mut R) -> Dataset {
    draw_at(spec, n, 0, rng)
}

pub fn draw_at<R: Rng + ?Sized>(spec: &PopulationSpec, n: usize, t: u64, rng: &mut R) -> Dataset {
    assert!(n >= 1, "draw requires n >= 1");
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let a = sample_categorical(&spec.group_weights, rng);
        let x = sample_categorical(&spec.score_dist[a], rng);
        let y = rng.random::<f64>() < spec.label_prob[a][x];
        samples.push(Sample { x, a: GroupId(a), y });
    }
    Dataset { samples, drawn_at: t }
}

/// Draws one sample conditioned on group `a` (used by the stratified
/// sampler): x ~ score_dist[a], y ~ Bernoulli(label_prob[a][x]).
pub fn draw_in_group<R: Rng + ?Sized>(spec: &PopulationSpec, a: GroupId, rng: &mut R) -> Sample {
    let x = sample_categorical(&spec.score_dist[a.0], rng);
    let y = rng.random::<f64>() < spec.label_prob[a.0][x];
    Sample { x, a, y }
}

/// One cell of the exact enumeration: joint mass P(x,a) = w_a * P[x|a]
/// and the conditional label probability q(x,a).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub x: usize,
    pub a: GroupId,
    pub joint_mass: f64,
    pub label_prob: f64,
}

/// Full enumeration of the (x, a) cells — the brute-force oracle that
/// every exact metric computation is built on. Masses sum to 1.
pub fn enumerate(spec: &PopulationSpec) -> Vec<Cell> {
    let mut cells = Vec::with_capacity(spec.num_groups() * spec.num_score_levels);
    for (a, &w) in spec.group_weights.iter().enumerate() {
        for x in 0..spec.num_score_levels {
            cells.push(Cell {
                x,
                a: GroupId(a),
                joint_mass: w * spec.score_dist[a][x],
                label_prob: spec.label_prob[a][x],
            });
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn two_group_spec(w0: f64) -> PopulationSpec {
        PopulationSpec {
            group_names: vec!["a".into(), "b".into()],
            num_score_levels: 4,
            group_weights: vec![w0, 1.0 - w0],
            score_dist: vec![
                vec![0.4, 0.3, 0.2, 0.1],
                vec![0.1, 0.2, 0.3, 0.4],
            ],
            label_prob: vec![
                vec![0.1, 0.4, 0.6, 0.9],
                vec![0.2, 0.5, 0.7, 0.8],
            ],
        }
    }

    #[test]
    fn constant_extrapolation_returns_same_spec() {
        let spec = two_group_spec(0.3);
        let sched = DriftSchedule::constant(spec.clone()).unwrap();
        assert_eq!(spec_at(&sched, 17), spec);
    }

    #[test]
    fn midpoint_interpolation() {
        let mut s0 = two_group_spec(0.2);
        let mut s1 = two_group_spec(0.4);
        s0.group_weights = vec![0.2, 0.8];
        s1.group_weights = vec![0.4, 0.6];
        let sched = DriftSchedule::new(vec![
            Keyframe { time: 0, spec: s0 },
            Keyframe { time: 10, spec: s1 },
        ])
        .unwrap();
        let mid = spec_at(&sched, 5);
        assert!((mid.group_weights[0] - 0.3).abs() < 1e-15);
        assert!((mid.group_weights[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn interpolated_specs_stay_valid_over_sweep() {
        let sched = DriftSchedule::new(vec![
            Keyframe { time: 0, spec: two_group_spec(0.2) },
            Keyframe { time: 40, spec: two_group_spec(0.7) },
            Keyframe { time: 80, spec: two_group_spec(0.5) },
        ])
        .unwrap();
        for t in 0..=100 {
            spec_at(&sched, t).validate().unwrap();
        }
    }

    #[test]
    fn degenerate_spec_draws_constant_samples() {
        let spec = PopulationSpec {
            group_names: vec!["only".into()],
            num_score_levels: 1,
            group_weights: vec![1.0],
            score_dist: vec![vec![1.0]],
            label_prob: vec![vec![1.0]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = draw(&spec, 50, &mut rng);
        assert!(ds.samples.iter().all(|s| s.x == 0 && s.a == GroupId(0) && s.y));
    }

    #[test]
    fn identical_seed_identical_dataset() {
        let spec = two_group_spec(0.3);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(draw(&spec, 1000, &mut r1), draw(&spec, 1000, &mut r2));
    }

    #[test]
    fn group_frequencies_follow_weights() {
        let spec = two_group_spec(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ds = draw(&spec, 100_000, &mut rng);
        let n0 = ds.samples.iter().filter(|s| s.a == GroupId(0)).count();
        let freq = n0 as f64 / ds.samples.len() as f64;
        assert!((freq - 0.3).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn enumerate_uniform_spec_gives_equal_cells() {
        let spec = PopulationSpec {
            group_names: vec!["a".into(), "b".into()],
            num_score_levels: 2,
            group_weights: vec![0.5, 0.5],
            score_dist: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            label_prob: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        };
        let cells = enumerate(&spec);
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| (c.joint_mass - 0.25).abs() < 1e-15));
    }

    #[test]
    fn enumerate_masses_sum_to_one_and_condition_back() {
        let spec = two_group_spec(0.3);
        let cells = enumerate(&spec);
        let total: f64 = cells.iter().map(|c| c.joint_mass).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for a in 0..2 {
            let ga: f64 = cells
                .iter()
                .filter(|c| c.a == GroupId(a))
                .map(|c| c.joint_mass)
                .sum();
            for x in 0..spec.num_score_levels {
                let cell = cells.iter().find(|c| c.a == GroupId(a) && c.x == x).unwrap();
                assert!((cell.joint_mass / ga - spec.score_dist[a][x]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_weights_rejected() {
        let mut spec = two_group_spec(0.3);
        spec.group_weights = vec![0.3, 0.6];
        assert!(matches!(
            spec.validate(),
            Err(PopulationError::WeightsNotNormalized(_))
        ));
    }

    #[test]
    fn keyframes_must_start_at_zero() {
        let res = DriftSchedule::new(vec![Keyframe { time: 3, spec: two_group_spec(0.3) }]);
        assert!(matches!(res, Err(PopulationError::BadKeyframeTimes)));
    }
}
