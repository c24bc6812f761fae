//! Closed-loop slot-by-slot simulation.
//!
//! Each slot: the receiver predicts every target from its retained packets,
//! losses are realized, the scheduler picks sources from the AoI vector,
//! the chosen sources' packets are delivered for the next slot, and the
//! signal advances. Every episode starts from a fresh stationary draw with
//! all sources at age 1.

use std::collections::HashMap;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::info_measures::gaussian_conditional;
use crate::penalty::{PenaltyTable, Provenance};
use crate::policies::{advance_aoi, AoiVector, ScheduleDecision, Scheduler};
use crate::signal::{self, GaussMarkovModel, SimRng, UpdatePacket};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub gamma: f64,
    pub delta_bound: usize,
    pub episode_len: usize,
    /// Keep a per-slot record in each [`EpisodeLog`].
    pub record_slots: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if self.delta_bound < 2 || self.episode_len == 0 {
            return Err(Error::InvalidArgument(
                "delta_bound ≥ 2 and episode_len ≥ 1 required".into(),
            ));
        }
        Ok(())
    }
}

/// What the receiver holds: the latest delivered packet of every source.
#[derive(Debug, Clone)]
pub struct ReceiverState {
    retained: Vec<UpdatePacket>,
}

impl ReceiverState {
    pub fn retained(&self) -> &[UpdatePacket] {
        &self.retained
    }

    /// Age and value of the freshest retained observation of each state.
    pub fn freshest(&self, now: i64) -> Vec<(usize, f64)> {
        let n = self.retained.len();
        let mut best: Vec<Option<(usize, f64)>> = vec![None; n];
        for pkt in &self.retained {
            let age = (now - pkt.gen_time) as usize;
            for src in 0..n {
                if let Some(v) = pkt.content(src) {
                    if best[src].is_none_or(|(a, _)| age < a) {
                        best[src] = Some((age, v));
                    }
                }
            }
        }
        best.into_iter()
            .map(|b| b.expect("own state always retained"))
            .collect()
    }

    /// Effective content ages at time `now`.
    pub fn effective_ages(&self, now: i64) -> Vec<usize> {
        self.freshest(now).into_iter().map(|(a, _)| a).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub t: usize,
    pub ages: Vec<usize>,
    pub effective_ages: Vec<usize>,
    pub chosen: Vec<usize>,
    pub losses: Vec<f64>,
    /// Sources carried by each delivered packet, in `chosen` order.
    pub piggyback: Vec<Vec<usize>>,
}

/// Per source and AoI, the sum and count of realized losses over every slot
/// of an episode (not just scheduled ones).
#[derive(Debug, Clone, PartialEq)]
pub struct FullInfoTable {
    pub sums: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
}

impl FullInfoTable {
    fn new(num_sources: usize, delta_bound: usize) -> Self {
        Self {
            sums: vec![vec![0.0; delta_bound]; num_sources],
            counts: vec![vec![0; delta_bound]; num_sources],
        }
    }

    /// Mean loss per age, zero where an age was never visited.
    pub fn table(&self, m: usize) -> Result<PenaltyTable> {
        let values = self.sums[m]
            .iter()
            .zip(&self.counts[m])
            .map(|(s, &n)| s / n.max(1) as f64)
            .collect();
        PenaltyTable::new(m, values, Provenance::Empirical)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub slots: usize,
    /// `Σ_t γ^t Σ_m L_m(t)`.
    pub discounted_loss: f64,
    pub total_loss: f64,
    pub schedule_counts: Vec<u64>,
    pub full_info: FullInfoTable,
    /// Multiplier in force during the episode and the subgradient
    /// accumulated in it, for policies that keep one.
    pub lambda: Option<f64>,
    pub subgrad: Option<f64>,
    pub records: Option<Vec<SlotRecord>>,
}

impl EpisodeLog {
    /// Recomputes the discounted sum from the slot records.
    pub fn recompute_discounted(&self, gamma: f64) -> Option<f64> {
        self.records.as_ref().map(|r| {
            r.iter()
                .map(|s| gamma.powi(s.t as i32) * s.losses.iter().sum::<f64>())
                .sum()
        })
    }
}

/// A simulation run: one model, one seed, consecutive episodes.
pub struct Simulation {
    model: GaussMarkovModel,
    cfg: SimConfig,
    rng: SimRng,
    diagonal: bool,
    weight_cache: HashMap<(usize, Vec<(usize, usize)>), Vec<f64>>,
    episodes_run: usize,
}

impl Simulation {
    pub fn new(model: GaussMarkovModel, cfg: SimConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let diagonal = model.is_noise_diagonal();
        if !diagonal {
            for m in 0..model.num_sources() {
                model.stationary_variance(m)?;
            }
        }
        Ok(Self {
            model,
            cfg,
            rng: SimRng::new(seed),
            diagonal,
            weight_cache: HashMap::new(),
            episodes_run: 0,
        })
    }

    pub fn model(&self) -> &GaussMarkovModel {
        &self.model
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    fn predict(&mut self, receiver: &ReceiverState, now: i64) -> Result<Vec<f64>> {
        let nsrc = self.model.num_sources();
        if self.diagonal {
            return Ok(receiver
                .freshest(now)
                .into_iter()
                .enumerate()
                .map(|(m, (age, v))| self.model.ar_coeff(m).powi(age as i32) * v)
                .collect());
        }
        let mut obs: Vec<(usize, usize, f64)> = Vec::new();
        for pkt in receiver.retained() {
            let age = (now - pkt.gen_time) as usize;
            for n in 0..nsrc {
                if let Some(v) = pkt.content(n) {
                    obs.push((n, age, v));
                }
            }
        }
        obs.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        obs.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        let key: Vec<(usize, usize)> = obs.iter().map(|&(n, a, _)| (n, a)).collect();
        (0..nsrc)
            .map(|m| {
                let cache_key = (m, key.clone());
                let w = match self.weight_cache.get(&cache_key) {
                    Some(w) => w.clone(),
                    None => {
                        let w = gaussian_conditional(&self.model, m, &key)?.weights;
                        if self.weight_cache.len() < 100_000 {
                            self.weight_cache.insert(cache_key, w.clone());
                        }
                        w
                    }
                };
                Ok(w.iter().zip(&obs).map(|(w, o)| w * o.2).sum())
            })
            .collect()
    }

    /// Runs one episode of `episode_len` slots with `policy`.
    pub fn run_episode(&mut self, policy: &mut dyn Scheduler) -> Result<EpisodeLog> {
        let nsrc = self.model.num_sources();
        let db = self.cfg.delta_bound;
        let gamma = self.cfg.gamma;
        let episode = self.episodes_run;
        policy.begin_episode(episode)?;
        let lambda = policy.lagrange().map(|l| l.lambda);

        // Every source delivered a packet generated at t = -1.
        let mut state = signal::initial_state(&self.model, -1, &mut self.rng.init);
        let retained = (0..nsrc)
            .map(|m| signal::emit_update(&self.model, &state, m, &mut self.rng.piggyback))
            .collect();
        let mut receiver = ReceiverState { retained };
        state = signal::step(&self.model, &state, &mut self.rng.noise)?;
        let mut aoi = AoiVector::ones(nsrc, db);

        let mut log = EpisodeLog {
            episode,
            slots: self.cfg.episode_len,
            discounted_loss: 0.0,
            total_loss: 0.0,
            schedule_counts: vec![0; nsrc],
            full_info: FullInfoTable::new(nsrc, db),
            lambda,
            subgrad: None,
            records: self.cfg.record_slots.then(Vec::new),
        };
        let mut discount = 1.0;
        for t in 0..self.cfg.episode_len {
            let now = state.time;
            let preds = self.predict(&receiver, now)?;
            let losses: Vec<f64> = preds
                .iter()
                .zip(&state.states)
                .map(|(p, z)| (z - p) * (z - p))
                .collect();
            if let Some(m) = losses.iter().position(|l| !l.is_finite()) {
                return Err(Error::NonFinite {
                    time: now,
                    src: m,
                    value: losses[m],
                });
            }
            let slot_loss: f64 = losses.iter().sum();
            log.discounted_loss += discount * slot_loss;
            log.total_loss += slot_loss;
            discount *= gamma;
            for m in 0..nsrc {
                let i = aoi.get(m) - 1;
                log.full_info.sums[m][i] += losses[m];
                log.full_info.counts[m][i] += 1;
            }

            let decision = policy.decide(&aoi, &mut self.rng.policy);
            check_decision(&decision, nsrc)?;

            // Packets are drawn for every source so the piggyback stream
            // does not depend on the decision.
            let packets: Vec<UpdatePacket> = (0..nsrc)
                .map(|m| signal::emit_update(&self.model, &state, m, &mut self.rng.piggyback))
                .collect();
            for &m in decision.chosen() {
                policy.feedback(m, aoi.get(m), losses[m]);
                log.schedule_counts[m] += 1;
            }
            if let Some(records) = log.records.as_mut() {
                records.push(SlotRecord {
                    t,
                    ages: aoi.ages().to_vec(),
                    effective_ages: receiver.effective_ages(now),
                    chosen: decision.chosen().to_vec(),
                    losses: losses.clone(),
                    piggyback: decision
                        .chosen()
                        .iter()
                        .map(|&m| packets[m].piggyback.keys().copied().collect())
                        .collect(),
                });
            }
            for &m in decision.chosen() {
                receiver.retained[m] = packets[m].clone();
            }
            aoi = advance_aoi(&aoi, &decision);
            state = signal::step(&self.model, &state, &mut self.rng.noise)?;
        }
        log.subgrad = policy.lagrange().map(|l| l.subgrad_acc);
        policy.end_episode()?;
        self.episodes_run += 1;
        Ok(log)
    }
}

fn check_decision(d: &ScheduleDecision, nsrc: usize) -> Result<()> {
    ScheduleDecision::new(d.chosen().to_vec(), nsrc).map(|_| ())
}

/// One episode with a fresh simulation seeded by `seed`.
pub fn run_episode(
    model: &GaussMarkovModel,
    policy: &mut dyn Scheduler,
    cfg: SimConfig,
    seed: u64,
) -> Result<EpisodeLog> {
    Simulation::new(model.clone(), cfg, seed)?.run_episode(policy)
}

/// Evaluation protocol: per seed, `warmup_episodes` unscored training
/// episodes followed by `episodes` scored ones.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub sim: SimConfig,
    pub warmup_episodes: usize,
    pub episodes: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    /// Mean over seeds of each seed's average discounted episode loss.
    pub mean: f64,
    /// Half-width of the 95% Student-t interval across seeds; infinite with
    /// a single seed.
    pub ci95: f64,
    pub n_seeds: usize,
    pub n_episodes: usize,
    pub per_seed: Vec<f64>,
    /// Fraction of scored slots in which each source was scheduled.
    pub schedule_share: Vec<f64>,
}

impl EvalSummary {
    pub fn interval(&self) -> (f64, f64) {
        (self.mean - self.ci95, self.mean + self.ci95)
    }
}

/// Mean and 95% half-width of a sample.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive dof")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Runs every seed (in parallel) with a fresh policy from `make_policy`.
pub fn evaluate_policy<F>(
    model: &GaussMarkovModel,
    make_policy: F,
    cfg: &EvalConfig,
) -> Result<EvalSummary>
where
    F: Fn(u64) -> Result<Box<dyn Scheduler>> + Sync,
{
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one seed is required".into(),
        ));
    }
    if cfg.episodes == 0 {
        return Err(Error::InvalidArgument(
            "at least one scored episode is required".into(),
        ));
    }
    let sim_cfg = SimConfig {
        record_slots: false,
        ..cfg.sim
    };
    let per_seed: Vec<(f64, Vec<u64>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut policy = make_policy(seed)?;
            let mut sim = Simulation::new(model.clone(), sim_cfg, seed)?;
            for _ in 0..cfg.warmup_episodes {
                sim.run_episode(policy.as_mut())?;
            }
            let mut total = 0.0;
            let mut counts = vec![0u64; model.num_sources()];
            for _ in 0..cfg.episodes {
                let log = sim.run_episode(policy.as_mut())?;
                total += log.discounted_loss;
                for (c, n) in counts.iter_mut().zip(&log.schedule_counts) {
                    *c += n;
                }
            }
            Ok((total / cfg.episodes as f64, counts))
        })
        .collect::<Result<_>>()?;
    let means: Vec<f64> = per_seed.iter().map(|(m, _)| *m).collect();
    let (mean, ci95) = mean_ci95(&means);
    let slots = (cfg.seeds.len() * cfg.episodes * cfg.sim.episode_len) as f64;
    let schedule_share = (0..model.num_sources())
        .map(|m| per_seed.iter().map(|(_, c)| c[m] as f64).sum::<f64>() / slots)
        .collect();
    Ok(EvalSummary {
        mean,
        ci95,
        n_seeds: cfg.seeds.len(),
        n_episodes: cfg.episodes,
        per_seed: means,
        schedule_share,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{Maf, RoundRobin, TieBreak};
    use nalgebra::DMatrix;

    fn cfg(len: usize) -> SimConfig {
        SimConfig {
            gamma: 0.7,
            delta_bound: 20,
            episode_len: len,
            record_slots: true,
        }
    }

    #[test]
    fn noiseless_model_has_zero_loss() {
        let model = GaussMarkovModel::noiseless(vec![1.0, 1.0], DMatrix::identity(2, 2)).unwrap();
        let mut p = RoundRobin::new(2, 1).unwrap();
        let log = run_episode(&model, &mut p, cfg(50), 3).unwrap();
        assert_eq!(log.total_loss, 0.0);
    }

    #[test]
    fn discounted_sum_matches_records() {
        let model = GaussMarkovModel::default_model(&[0.9, 0.7, 0.5], 0.5).unwrap();
        let mut p = Maf::new(1, TieBreak::LowestIndex);
        let log = run_episode(&model, &mut p, cfg(100), 5).unwrap();
        let again = log.recompute_discounted(0.7).unwrap();
        assert!((again - log.discounted_loss).abs() <= 1e-12 * log.discounted_loss.max(1.0));
        assert!(log.discounted_loss >= 0.0);
        assert_eq!(log.schedule_counts.iter().sum::<u64>(), 100);
    }

    #[test]
    fn same_seed_same_log() {
        let model = GaussMarkovModel::default_model(&[0.9, 0.7], 0.6).unwrap();
        let a = run_episode(&model, &mut Maf::new(1, TieBreak::LowestIndex), cfg(80), 11).unwrap();
        let b = run_episode(&model, &mut Maf::new(1, TieBreak::LowestIndex), cfg(80), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn effective_age_bounded_by_aoi() {
        let model = GaussMarkovModel::default_model(&[0.9, 0.9, 0.9], 0.7).unwrap();
        let mut p = RoundRobin::new(3, 1).unwrap();
        let log = run_episode(&model, &mut p, cfg(200), 2).unwrap();
        for r in log.records.unwrap() {
            for (e, a) in r.effective_ages.iter().zip(&r.ages) {
                assert!(e <= a);
            }
        }
    }

    #[test]
    fn ci_of_constant_sample_is_zero() {
        let (m, h) = mean_ci95(&[2.0, 2.0, 2.0]);
        assert_eq!(m, 2.0);
        assert_eq!(h, 0.0);
        let (_, h) = mean_ci95(&[1.0]);
        assert!(h.is_infinite());
        // t_{0.975, 1} = 12.706...
        let (_, h) = mean_ci95(&[0.0, 2.0]);
        assert!((h - 12.706_204_736 * 1.0).abs() < 1e-6, "{h}");
    }
}
