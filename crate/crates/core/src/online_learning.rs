//! Learning the penalty functions from bandit feedback.
//!
//! Each source keeps per-age loss statistics from the slots where it was
//! scheduled. At the end of an episode the estimates are turned into
//! optimistic penalties `f̃ = max(f̂ − d, 0)`, solved by value iteration, and
//! blended into a slowly-frozen value function `J̃`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::{PenaltyTable, Provenance};
use crate::policies::{
    self, AoiVector, LagrangeState, LambdaMode, ScheduleDecision, Scheduler, TieBreak,
};
use crate::relaxed_mdp::{self, Decision, GainIndexTable, ViOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Statistics restart every episode.
    #[default]
    PerEpisode,
    /// Statistics accumulate over all episodes.
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub delta_bound: usize,
    /// Confidence level parameter, `0 < η ≤ 1`.
    pub eta: f64,
    /// Mixing rate of the value function, `0 < ζ < 1`.
    pub zeta: f64,
    /// Losses above this value are clipped before being recorded.
    pub loss_cap: Option<f64>,
    /// Scale applied to the unit-range Hoeffding radius.
    pub radius_scale: f64,
    pub count_mode: CountMode,
    /// Replace `f̃` by its running maximum over ages, the smallest
    /// nondecreasing function above the per-age lower confidence bounds.
    pub monotone: bool,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "zeta must lie in (0, 1), got {}",
                self.zeta
            )));
        }
        if !(self.radius_scale >= 0.0) {
            return Err(Error::InvalidArgument(
                "radius scale must be nonnegative".into(),
            ));
        }
        if matches!(self.loss_cap, Some(c) if !(c > 0.0)) {
            return Err(Error::InvalidArgument("loss cap must be positive".into()));
        }
        if self.delta_bound < 2 {
            return Err(Error::InvalidArgument(
                "delta_bound must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Hoeffding radius `sqrt(ln(2/η) / (2 max(n, 1)))` for unit-range losses.
pub fn confidence_radius(eta: f64, count: u64) -> f64 {
    ((2.0 / eta).ln() / (2.0 * count.max(1) as f64)).sqrt()
}

/// Per-episode statistics of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    /// `max_δ |f̂_{k−1}(δ) − f̂_k(δ)|`, absent after the first episode.
    pub beta: Option<f64>,
    /// Largest (scaled) radius over ages.
    pub max_d: f64,
    /// `||J̃_k − J̃_{k−1}||_∞`, absent after the first episode.
    pub jtilde_change: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OnlineSourceEstimator {
    pub source: usize,
    cfg: EstimatorConfig,
    ep_counts: Vec<u64>,
    ep_sums: Vec<f64>,
    cum_counts: Vec<u64>,
    cum_sums: Vec<f64>,
    fhat: Vec<f64>,
    radius: Vec<f64>,
    ftilde: Vec<f64>,
    prev_fhat: Option<Vec<f64>>,
    j_opt: Option<Vec<f64>>,
    jtilde: Option<Vec<f64>>,
    episodes: usize,
}

impl OnlineSourceEstimator {
    pub fn new(source: usize, cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        let db = cfg.delta_bound;
        Ok(Self {
            source,
            cfg,
            ep_counts: vec![0; db],
            ep_sums: vec![0.0; db],
            cum_counts: vec![0; db],
            cum_sums: vec![0.0; db],
            fhat: vec![0.0; db],
            radius: vec![0.0; db],
            ftilde: vec![0.0; db],
            prev_fhat: None,
            j_opt: None,
            jtilde: None,
            episodes: 0,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.cfg
    }

    pub fn record_feedback(&mut self, delta: usize, loss: f64) {
        debug_assert!(loss >= 0.0 && loss.is_finite(), "loss {loss}");
        let loss = self.cfg.loss_cap.map_or(loss, |c| loss.min(c));
        let i = delta.clamp(1, self.cfg.delta_bound) - 1;
        self.ep_counts[i] += 1;
        self.ep_sums[i] += loss;
        self.cum_counts[i] += 1;
        self.cum_sums[i] += loss;
    }

    fn counts_and_sums(&self) -> (&[u64], &[f64]) {
        match self.cfg.count_mode {
            CountMode::PerEpisode => (&self.ep_counts, &self.ep_sums),
            CountMode::Cumulative => (&self.cum_counts, &self.cum_sums),
        }
    }

    /// Current empirical means `sum / max(N, 1)` from the active statistics.
    pub fn empirical(&self) -> Vec<f64> {
        let (n, s) = self.counts_and_sums();
        n.iter()
            .zip(s)
            .map(|(&n, &s)| s / n.max(1) as f64)
            .collect()
    }

    pub fn counts(&self) -> &[u64] {
        self.counts_and_sums().0
    }

    pub fn fhat(&self) -> &[f64] {
        &self.fhat
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn ftilde(&self) -> &[f64] {
        &self.ftilde
    }

    pub fn jtilde(&self) -> Option<&[f64]> {
        self.jtilde.as_deref()
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Closes an episode: refreshes `f̂`, `d`, `f̃`, solves for the optimistic
    /// value at multiplier `lambda` and mixes it into `J̃`.
    pub fn end_episode(&mut self, lambda: f64, gamma: f64, vi: ViOptions) -> Result<EpisodeStats> {
        let fhat = self.empirical();
        let eta = self.cfg.eta;
        let scale = self.cfg.radius_scale;
        let radius: Vec<f64> = self
            .counts_and_sums()
            .0
            .iter()
            .map(|&n| scale * confidence_radius(eta, n))
            .collect();
        let mut ftilde: Vec<f64> = fhat
            .iter()
            .zip(&radius)
            .map(|(f, d)| (f - d).max(0.0))
            .collect();
        if self.cfg.monotone {
            for i in 1..ftilde.len() {
                ftilde[i] = ftilde[i].max(ftilde[i - 1]);
            }
        }
        let table = PenaltyTable::new(self.source, ftilde.clone(), Provenance::Empirical)?;
        let j =
            relaxed_mdp::value_iteration_from(&table, gamma, lambda, vi, self.j_opt.as_deref())?;
        let j_opt = j.values().to_vec();

        let beta = self.prev_fhat.as_ref().map(|p| max_abs_diff(p, &fhat));
        let (jtilde, change) = match self.jtilde.take() {
            None => (j_opt.clone(), None),
            Some(prev) => {
                let w = self.cfg.zeta.powi(self.episodes as i32);
                let next: Vec<f64> = j_opt
                    .iter()
                    .zip(&prev)
                    .map(|(o, p)| w * o + (1.0 - w) * p)
                    .collect();
                let change = max_abs_diff(&next, &prev);
                (next, Some(change))
            }
        };
        let max_d = radius.iter().copied().fold(0.0, f64::max);

        self.jtilde = Some(jtilde);
        self.j_opt = Some(j_opt);
        self.prev_fhat = Some(fhat.clone());
        self.fhat = fhat;
        self.radius = radius;
        self.ftilde = ftilde;
        self.episodes += 1;
        self.ep_counts.iter_mut().for_each(|c| *c = 0);
        self.ep_sums.iter_mut().for_each(|s| *s = 0.0);
        Ok(EpisodeStats {
            beta,
            max_d,
            jtilde_change: change,
        })
    }

    /// Gain indices from `J̃`, if an episode has been closed.
    pub fn gain_table(&self, lambda: f64, gamma: f64) -> Option<GainIndexTable> {
        self.jtilde
            .as_ref()
            .map(|j| GainIndexTable::from_values(self.source, gamma, lambda, j))
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Unconstrained per-source threshold decisions on `J̃`.
pub fn online_threshold_decide(
    ests: &[OnlineSourceEstimator],
    aoi: &AoiVector,
    lambda: f64,
    gamma: f64,
) -> Vec<Decision> {
    ests.iter()
        .enumerate()
        .map(|(m, e)| match e.gain_table(lambda, gamma) {
            Some(g) => relaxed_mdp::threshold_decide(&g, aoi.get(m), lambda, gamma),
            None => Decision::Idle,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub episode: usize,
    pub source: usize,
    pub beta: Option<f64>,
    pub max_d: f64,
    pub jtilde_change: Option<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub entries: Vec<TraceEntry>,
}

impl ConvergenceTrace {
    /// First episode at which every source's β falls below `threshold`.
    pub fn first_episode_below(&self, threshold: f64) -> Option<usize> {
        let mut episodes: Vec<usize> = self.entries.iter().map(|e| e.episode).collect();
        episodes.dedup();
        episodes.into_iter().find(|&k| {
            let mut at_k = self.entries.iter().filter(|e| e.episode == k).peekable();
            at_k.peek().is_some() && at_k.all(|e| matches!(e.beta, Some(b) if b < threshold))
        })
    }

    /// Largest β over sources at each episode, in episode order.
    pub fn max_beta_per_episode(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for e in &self.entries {
            let Some(b) = e.beta else { continue };
            match out.last_mut() {
                Some((k, v)) if *k == e.episode => *v = v.max(b),
                _ => out.push((e.episode, b)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    pub estimator: EstimatorConfig,
    pub channels: usize,
    pub gamma: f64,
    pub theta: f64,
    pub lambda_mode: LambdaMode,
    pub tiebreak: TieBreak,
}

/// Online Maximum Gain First: MAF during the first episode, then top-`N` by
/// gains of the learned `J̃`.
#[derive(Debug, Clone)]
pub struct OnlineMgf {
    cfg: OnlineConfig,
    estimators: Vec<OnlineSourceEstimator>,
    gains: Option<Vec<GainIndexTable>>,
    lagrange: LagrangeState,
    episode: usize,
    trace: ConvergenceTrace,
}

impl OnlineMgf {
    pub fn new(num_sources: usize, cfg: OnlineConfig) -> Result<Self> {
        if cfg.channels == 0 || cfg.channels > num_sources {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ N ≤ M, got N={}",
                cfg.channels
            )));
        }
        let estimators = (0..num_sources)
            .map(|m| OnlineSourceEstimator::new(m, cfg.estimator))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            estimators,
            gains: None,
            lagrange: LagrangeState::new(cfg.theta)?,
            episode: 0,
            trace: ConvergenceTrace::default(),
        })
    }

    pub fn estimators(&self) -> &[OnlineSourceEstimator] {
        &self.estimators
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    pub fn episode(&self) -> usize {
        self.episode
    }
}

impl Scheduler for OnlineMgf {
    fn name(&self) -> &str {
        "Online-MGF"
    }

    fn decide(&mut self, aoi: &AoiVector, rng: &mut dyn RngCore) -> ScheduleDecision {
        match &self.gains {
            None => policies::maf_decide(aoi, self.cfg.channels, self.cfg.tiebreak, rng),
            Some(gains) => {
                let (d, active) = policies::gain_decide(
                    gains,
                    aoi,
                    self.lagrange.lambda,
                    self.cfg.gamma,
                    self.cfg.channels,
                    self.cfg.tiebreak,
                    rng,
                );
                self.lagrange.record(aoi.time, self.cfg.gamma, active);
                d
            }
        }
    }

    fn feedback(&mut self, source: usize, age: usize, loss: f64) {
        self.estimators[source].record_feedback(age, loss);
    }

    fn end_episode(&mut self) -> Result<()> {
        if self.gains.is_some() && self.cfg.lambda_mode == LambdaMode::Subgradient {
            self.lagrange
                .episode_update(self.cfg.channels, self.cfg.gamma);
        } else {
            self.lagrange.subgrad_acc = 0.0;
        }
        let lambda = self.lagrange.lambda;
        let gamma = self.cfg.gamma;
        let mut gains = Vec::with_capacity(self.estimators.len());
        for est in &mut self.estimators {
            let stats = est.end_episode(lambda, gamma, ViOptions::default())?;
            self.trace.entries.push(TraceEntry {
                episode: self.episode,
                source: est.source,
                beta: stats.beta,
                max_d: stats.max_d,
                jtilde_change: stats.jtilde_change,
                lambda,
            });
            gains.push(est.gain_table(lambda, gamma).expect("episode just closed"));
        }
        self.gains = Some(gains);
        self.episode += 1;
        Ok(())
    }

    fn lagrange(&self) -> Option<&LagrangeState> {
        Some(&self.lagrange)
    }
}

/// One `(episode, source)` evaluation of the value-gap bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRecord {
    pub episode: usize,
    pub source: usize,
    pub j_gap: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGapReport {
    pub records: Vec<BoundRecord>,
    /// Per source, the fraction of checked episodes where the bound held.
    pub fraction_by_source: Vec<f64>,
}

impl ValueGapReport {
    pub fn min_fraction(&self) -> f64 {
        self.fraction_by_source.iter().copied().fold(1.0, f64::min)
    }
}

/// Checks `||J_k − J_{k−1}||_∞ ≤ (2 max_δ d_{k−1} + β_k) / (1 − γ)` where
/// `J_k` solves the relaxed Bellman equation for the realized penalty table
/// of episode `k` (`realized[k][m]`) at multiplier `lambda`, and `β_k`,
/// `d_{k−1}` come from the learning trace.
pub fn check_value_gap_bound(
    realized: &[Vec<PenaltyTable>],
    trace: &ConvergenceTrace,
    gamma: f64,
    lambda: f64,
) -> Result<ValueGapReport> {
    let Some(first) = realized.first() else {
        return Err(Error::InvalidArgument("no episodes to check".into()));
    };
    let nsrc = first.len();
    let values: Vec<Vec<Vec<f64>>> = realized
        .iter()
        .map(|tables| {
            tables
                .iter()
                .map(|t| {
                    relaxed_mdp::value_iteration(t, gamma, lambda, ViOptions::default())
                        .map(|j| j.values().to_vec())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let lookup = |k: usize, m: usize| {
        trace
            .entries
            .iter()
            .find(|e| e.episode == k && e.source == m)
    };
    let mut records = Vec::new();
    for k in 1..realized.len() {
        for m in 0..nsrc {
            let (Some(now), Some(before)) = (lookup(k, m), lookup(k - 1, m)) else {
                continue;
            };
            let Some(beta) = now.beta else { continue };
            let j_gap = max_abs_diff(&values[k][m], &values[k - 1][m]);
            let bound = (2.0 * before.max_d + beta) / (1.0 - gamma);
            records.push(BoundRecord {
                episode: k,
                source: m,
                j_gap,
                bound,
                holds: j_gap <= bound,
            });
        }
    }
    let fraction_by_source = (0..nsrc)
        .map(|m| {
            let mine: Vec<&BoundRecord> = records.iter().filter(|r| r.source == m).collect();
            if mine.is_empty() {
                1.0
            } else {
                mine.iter().filter(|r| r.holds).count() as f64 / mine.len() as f64
            }
        })
        .collect();
    Ok(ValueGapReport {
        records,
        fraction_by_source,
    })
}
