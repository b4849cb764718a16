//! The audit/debias feedback loop: drift, retrain, audit, debias,
//! record — with value and regret accounting against the
//! full-information oracle baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

use crate::auditor::{
    audit_anytime_full, manipulation_certificate, AnytimeAuditorState, AuditorConfig,
};
use crate::debiaser::{oracle_debias, post_process, DebiaserConfig, ScoreLabelTable};
use crate::metrics::{exact_metric, MetricKind};
use crate::model::{
    exact_error, prediction_distribution_of, train_erm_weighted, Classifier, Predictor,
    ThresholdPolicy, TrainConfig,
};
use crate::population::{draw_at, spec_at, DriftSchedule, GroupId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPhase {
    pub start: u64,
    pub metric: MetricKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub horizon: u64,
    pub schedule: DriftSchedule,
    /// Active bias measure per time range; first phase must start at t = 1.
    pub metric_schedule: Vec<MetricPhase>,
    pub retrain_every: u64,
    pub n_train: usize,
    #[serde(default)]
    pub train: TrainConfig,
    /// Reweigh the training draw before each retrain.
    #[serde(default)]
    pub reweigh: bool,
    /// Replace the deployed debiaser with the full-information oracle at
    /// every round (regret baseline sanity configuration).
    #[serde(default)]
    pub use_oracle_debiaser: bool,
    pub auditor: AuditorConfig,
    pub debiaser: DebiaserConfig,
    pub seed: u64,
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon < 1 {
            return Err("horizon must be >= 1".into());
        }
        if self.retrain_every < 1 {
            return Err("retrain_every must be >= 1".into());
        }
        if self.n_train < 1 {
            return Err("n_train must be >= 1".into());
        }
        self.schedule.validate().map_err(|e| e.to_string())?;
        if self.metric_schedule.first().map(|p| p.start) != Some(1) {
            return Err("metric_schedule must begin with a phase at t = 1".into());
        }
        for w in self.metric_schedule.windows(2) {
            if w[1].start <= w[0].start {
                return Err("metric_schedule start times must strictly increase".into());
            }
        }
        self.auditor.validate()?;
        self.debiaser.validate()?;
        Ok(())
    }

    pub fn metric_at(&self, t: u64) -> MetricKind {
        self.metric_schedule
            .iter()
            .rev()
            .find(|p| p.start <= t)
            .map(|p| p.metric)
            .expect("metric_schedule validated nonempty with start at 1")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub metric: MetricKind,
    pub exact_bias: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples_used: u64,
    pub exact_error: f64,
    /// The debias decision produced this round (deployed from t + 1).
    pub policy: ThresholdPolicy,
    pub oracle_bias: f64,
    pub certificate_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameTrace {
    pub rounds: Vec<RoundRecord>,
    pub v_t_estimated: f64,
    pub v_t_exact: f64,
    pub regret_estimated: f64,
    pub regret_exact: f64,
    /// Rounds whose exact bias fell outside the audit interval.
    pub anytime_violations: u64,
    /// Smallest t such that the debias decision is unchanged from t on.
    pub policy_settled_at: u64,
}

#[derive(Debug, Error)]
#[error("game aborted at round {round}: {message}")]
pub struct GameAbort {
    pub round: u64,
    pub message: String,
    /// Rounds completed before the abort.
    pub partial: Vec<RoundRecord>,
}

/// What is actually serving predictions in a given round.
enum Deployed {
    Base(Classifier),
    Policy(ThresholdPolicy),
}

impl Predictor for Deployed {
    fn predict(&self, x: usize, a: GroupId) -> bool {
        match self {
            Deployed::Base(c) => c.predict(x, a),
            Deployed::Policy(p) => p.predict(x, a),
        }
    }

    fn num_groups(&self) -> usize {
        match self {
            Deployed::Base(c) => Predictor::num_groups(c),
            Deployed::Policy(p) => Predictor::num_groups(p),
        }
    }
}

/// Runs the full game: for each round, realize the drifted population,
/// retrain on cadence, audit the deployed classifier under the active
/// metric, debias from the audited empirical table, and record exact
/// quantities via enumeration. Deterministic given the seed.
pub fn run(cfg: &GameConfig) -> Result<GameTrace, GameAbort> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut auditor_state = AnytimeAuditorState::new(cfg.auditor.clone());
    let mut rounds: Vec<RoundRecord> = Vec::with_capacity(cfg.horizon as usize);
    let mut deployed: Option<Deployed> = None;
    let mut prev_table: Option<ScoreLabelTable> = None;

    let abort = |t: u64, msg: String, rounds: &[RoundRecord]| GameAbort {
        round: t,
        message: msg,
        partial: rounds.to_vec(),
    };

    for t in 1..=cfg.horizon {
        let spec = spec_at(&cfg.schedule, t);
        let metric = cfg.metric_at(t);
        let auditor_cfg = AuditorConfig {
            metric,
            ..cfg.auditor.clone()
        };
        auditor_state.config = auditor_cfg.clone();
        let debiaser_cfg = DebiaserConfig {
            target_metric: metric,
            ..cfg.debiaser.clone()
        };

        if (t - 1) % cfg.retrain_every == 0 {
            let data = draw_at(&spec, cfg.n_train, t, &mut rng);
            let weights = if cfg.reweigh {
                Some(
                    crate::debiaser::reweigh(&data)
                        .map_err(|e| abort(t, e.to_string(), &rounds))?,
                )
            } else {
                None
            };
            let params = train_erm_weighted(
                &data,
                weights.as_deref(),
                spec.num_groups(),
                &cfg.train,
                &mut rng,
            )
            .map_err(|e| abort(t, e.to_string(), &rounds))?;
            let base = Classifier::logistic(params);
            // The freshly trained base serves only until the first debias
            // decision exists; thereafter the policy chain is deployed.
            if deployed.is_none() {
                deployed = Some(Deployed::Base(base));
            }
        }

        if cfg.use_oracle_debiaser {
            let d = oracle_debias(&spec, &debiaser_cfg)
                .map_err(|e| abort(t, e.to_string(), &rounds))?;
            deployed = Some(Deployed::Policy(d.policy));
        }

        let current = deployed.as_ref().expect("retrain at t=1 deploys the base");

        let outcome = audit_anytime_full(&mut auditor_state, current, &spec, &mut rng)
            .map_err(|e| abort(t, e.to_string(), &rounds))?;

        let exact_table = prediction_distribution_of(current, &spec);
        let exact_bias = exact_metric(metric, &exact_table)
            .map_err(|e| abort(t, e.to_string(), &rounds))?
            .value;
        let err = exact_error(current, &spec);
        let cert = manipulation_certificate(current, &spec, &auditor_cfg)
            .map_err(|e| abort(t, e.to_string(), &rounds))?;

        let oracle = oracle_debias(&spec, &debiaser_cfg)
            .map_err(|e| abort(t, e.to_string(), &rounds))?;

        let raw_table = ScoreLabelTable::from_queries(
            &outcome.queries,
            spec.num_groups(),
            spec.num_score_levels,
        )
        .map_err(|e| abort(t, e.to_string(), &rounds))?;
        let table = match (&prev_table, cfg.debiaser.smoothing > 0.0) {
            (Some(prev), true) => raw_table.smoothed_with(prev, cfg.debiaser.smoothing),
            _ => raw_table,
        };
        let decision =
            post_process(&table, &debiaser_cfg).map_err(|e| abort(t, e.to_string(), &rounds))?;
        prev_table = Some(table);

        rounds.push(RoundRecord {
            t,
            metric,
            exact_bias,
            estimate: outcome.estimate.estimate,
            ci_low: outcome.estimate.ci_low,
            ci_high: outcome.estimate.ci_high,
            samples_used: outcome.estimate.samples_used,
            exact_error: err,
            policy: decision.policy.clone(),
            oracle_bias: oracle.predicted_bias,
            certificate_radius: cert.radius,
        });

        if !cfg.use_oracle_debiaser {
            deployed = Some(Deployed::Policy(decision.policy));
        }
    }

    Ok(finish_trace(rounds))
}

fn finish_trace(rounds: Vec<RoundRecord>) -> GameTrace {
    let n = rounds.len() as f64;
    let v_t_estimated = rounds.iter().map(|r| r.estimate).sum::<f64>() / n;
    let v_t_exact = rounds.iter().map(|r| r.exact_bias).sum::<f64>() / n;
    let oracle_mean = rounds.iter().map(|r| r.oracle_bias).sum::<f64>() / n;
    let anytime_violations = rounds
        .iter()
        .filter(|r| r.exact_bias < r.ci_low || r.exact_bias > r.ci_high)
        .count() as u64;
    let last_policy = &rounds.last().expect("horizon >= 1").policy;
    let policy_settled_at = rounds
        .iter()
        .rev()
        .take_while(|r| &r.policy == last_policy)
        .last()
        .map(|r| r.t)
        .unwrap_or(1);
    GameTrace {
        v_t_estimated,
        v_t_exact,
        regret_estimated: v_t_estimated - oracle_mean,
        regret_exact: v_t_exact - oracle_mean,
        anytime_violations,
        policy_settled_at,
        rounds,
    }
}

/// Average estimated and exact bias over the horizon.
pub fn value(trace: &GameTrace) -> (f64, f64) {
    (trace.v_t_estimated, trace.v_t_exact)
}

/// Deployed average bias minus the oracle-baseline average: the
/// as-estimated form and the exact-exact form (only the latter carries
/// a sign guarantee).
pub fn regret(trace: &GameTrace) -> (f64, f64) {
    (trace.regret_estimated, trace.regret_exact)
}

pub const TRACE_CSV_HEADER: [&str; 11] = [
    "t",
    "metric",
    "exact_bias",
    "estimate",
    "ci_low",
    "ci_high",
    "samples",
    "exact_error",
    "thresholds",
    "oracle_bias",
    "cert_radius",
];

pub fn write_trace_csv<W: Write>(trace: &GameTrace, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_CSV_HEADER)?;
    for r in &trace.rounds {
        w.write_record([
            r.t.to_string(),
            r.metric.name().to_string(),
            r.exact_bias.to_string(),
            r.estimate.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.samples_used.to_string(),
            r.exact_error.to_string(),
            r.policy.to_compact_string(),
            r.oracle_bias.to_string(),
            r.certificate_radius.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSummary {
    pub v_t_estimated: f64,
    pub v_t_exact: f64,
    pub regret_estimated: f64,
    pub regret_exact: f64,
    pub anytime_violations: u64,
    pub policy_settled_at: u64,
    pub seed: u64,
    pub config: GameConfig,
}

pub fn summarize(trace: &GameTrace, cfg: &GameConfig) -> GameSummary {
    GameSummary {
        v_t_estimated: trace.v_t_estimated,
        v_t_exact: trace.v_t_exact,
        regret_estimated: trace.regret_estimated,
        regret_exact: trace.regret_exact,
        anytime_violations: trace.anytime_violations,
        policy_settled_at: trace.policy_settled_at,
        seed: cfg.seed,
        config: cfg.clone(),
    }
}

pub fn write_outputs(trace: &GameTrace, cfg: &GameConfig, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let trace_file = std::fs::File::create(dir.join("trace.csv"))?;
    write_trace_csv(trace, trace_file).map_err(std::io::Error::other)?;
    let summary = summarize(trace, cfg);
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(dir.join("summary.json"), json + "\n")
}
