//! Scheduling policies behind one interface.
//!
//! A scheduler sees only the AoI vector and, for learning policies, the
//! losses of the sources it scheduled. It never sees signal values.

use rand::seq::index;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::info_measures::prediction_error;
use crate::penalty::{JointPenalty, PenaltyTable};
use crate::relaxed_mdp::{self, CyclicSearchResult, GainIndexTable, ViOptions};
use crate::signal::GaussMarkovModel;

/// AoI of every source at slot `time` of the current episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AoiVector {
    pub time: u64,
    ages: Vec<usize>,
    delta_bound: usize,
}

impl AoiVector {
    /// All sources at age 1, as if every source delivered in the previous slot.
    pub fn ones(num_sources: usize, delta_bound: usize) -> Self {
        Self {
            time: 0,
            ages: vec![1; num_sources],
            delta_bound,
        }
    }

    pub fn from_ages(ages: Vec<usize>, delta_bound: usize) -> Result<Self> {
        if ages.iter().any(|&d| d == 0 || d > delta_bound) {
            return Err(Error::InvalidArgument(format!(
                "ages must lie in 1..={delta_bound}"
            )));
        }
        Ok(Self {
            time: 0,
            ages,
            delta_bound,
        })
    }

    pub fn get(&self, m: usize) -> usize {
        self.ages[m]
    }

    pub fn ages(&self) -> &[usize] {
        &self.ages
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn delta_bound(&self) -> usize {
        self.delta_bound
    }
}

/// Scheduled sources drop to age 1; the rest age by one, saturating.
pub fn advance_aoi(aoi: &AoiVector, decision: &ScheduleDecision) -> AoiVector {
    let mut ages: Vec<usize> = aoi
        .ages
        .iter()
        .map(|&d| (d + 1).min(aoi.delta_bound))
        .collect();
    for &m in decision.chosen() {
        ages[m] = 1;
    }
    AoiVector {
        time: aoi.time + 1,
        ages,
        delta_bound: aoi.delta_bound,
    }
}

/// Exactly `N` distinct sources, in priority order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleDecision {
    chosen: Vec<usize>,
}

impl ScheduleDecision {
    pub fn new(chosen: Vec<usize>, num_sources: usize) -> Result<Self> {
        let mut sorted = chosen.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != chosen.len() || chosen.iter().any(|&m| m >= num_sources) {
            return Err(Error::InvalidArgument(format!(
                "invalid schedule {chosen:?} for {num_sources} sources"
            )));
        }
        Ok(Self { chosen })
    }

    pub fn chosen(&self) -> &[usize] {
        &self.chosen
    }

    pub fn contains(&self, m: usize) -> bool {
        self.chosen.contains(&m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    Random,
}

/// The `n` highest scores. Ties go to the lowest index, or to a uniformly
/// random order drawn from `rng` with [`TieBreak::Random`].
pub fn top_n(
    scores: &[f64],
    n: usize,
    tiebreak: TieBreak,
    rng: &mut dyn RngCore,
) -> ScheduleDecision {
    let mut order: Vec<(usize, u64)> = match tiebreak {
        TieBreak::LowestIndex => (0..scores.len()).map(|i| (i, 0)).collect(),
        TieBreak::Random => (0..scores.len()).map(|i| (i, rng.random())).collect(),
    };
    order.sort_by(|&(i, ki), &(j, kj)| {
        scores[j]
            .total_cmp(&scores[i])
            .then(ki.cmp(&kj))
            .then(i.cmp(&j))
    });
    ScheduleDecision {
        chosen: order.into_iter().take(n).map(|(i, _)| i).collect(),
    }
}

/// Lagrange multiplier with its subgradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeState {
    pub lambda: f64,
    pub theta: f64,
    /// Episode counter, starting at 1.
    pub k: usize,
    pub subgrad_acc: f64,
    pub history: Vec<f64>,
}

impl LagrangeState {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "step scale must be positive, got {theta}"
            )));
        }
        Ok(Self {
            lambda: 0.0,
            theta,
            k: 1,
            subgrad_acc: 0.0,
            history: vec![0.0],
        })
    }

    /// Adds `γ^t` times the number of sources whose gain beat `λ/γ` at slot `t`.
    pub fn record(&mut self, t: u64, gamma: f64, active: usize) {
        self.subgrad_acc += gamma.powi(t as i32) * active as f64;
    }

    /// `λ ← λ + (θ/k)(Subgrad − N/(1−γ))`, then resets the accumulator.
    pub fn episode_update(&mut self, channels: usize, gamma: f64) {
        self.lambda +=
            self.theta / self.k as f64 * (self.subgrad_acc - channels as f64 / (1.0 - gamma));
        self.subgrad_acc = 0.0;
        self.k += 1;
        self.history.push(self.lambda);
    }
}

pub trait Scheduler: Send {
    fn name(&self) -> &str;

    fn begin_episode(&mut self, _episode: usize) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, aoi: &AoiVector, rng: &mut dyn RngCore) -> ScheduleDecision;

    /// Loss of target `source` at a slot where it was scheduled with AoI `age`.
    fn feedback(&mut self, _source: usize, _age: usize, _loss: f64) {}

    fn end_episode(&mut self) -> Result<()> {
        Ok(())
    }

    fn lagrange(&self) -> Option<&LagrangeState> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Subgradient updates after every episode.
    #[default]
    Subgradient,
    /// λ held at its initial value.
    Fixed,
}

/// Maximum Gain First with known penalty tables.
#[derive(Debug, Clone)]
pub struct Mgf {
    tables: Vec<PenaltyTable>,
    channels: usize,
    gamma: f64,
    tiebreak: TieBreak,
    mode: LambdaMode,
    lagrange: LagrangeState,
    gains: Vec<GainIndexTable>,
    solved_for: f64,
}

impl Mgf {
    pub fn new(
        tables: Vec<PenaltyTable>,
        channels: usize,
        gamma: f64,
        theta: f64,
        tiebreak: TieBreak,
        mode: LambdaMode,
    ) -> Result<Self> {
        Self::with_lambda(tables, channels, gamma, theta, tiebreak, mode, 0.0)
    }

    pub fn with_lambda(
        tables: Vec<PenaltyTable>,
        channels: usize,
        gamma: f64,
        theta: f64,
        tiebreak: TieBreak,
        mode: LambdaMode,
        lambda: f64,
    ) -> Result<Self> {
        check_channels(channels, tables.len())?;
        let mut lagrange = LagrangeState::new(theta)?;
        lagrange.lambda = lambda;
        lagrange.history = vec![lambda];
        let gains = solve_gains(&tables, gamma, lambda)?;
        Ok(Self {
            tables,
            channels,
            gamma,
            tiebreak,
            mode,
            lagrange,
            gains,
            solved_for: lambda,
        })
    }

    pub fn gains(&self) -> &[GainIndexTable] {
        &self.gains
    }
}

fn check_channels(channels: usize, num_sources: usize) -> Result<()> {
    if channels == 0 || channels > num_sources {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ N ≤ M, got N={channels}, M={num_sources}"
        )));
    }
    Ok(())
}

pub(crate) fn solve_gains(
    tables: &[PenaltyTable],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<GainIndexTable>> {
    tables
        .iter()
        .map(|t| {
            relaxed_mdp::value_iteration(t, gamma, lambda, ViOptions::default())
                .map(|j| relaxed_mdp::gain_index(&j))
        })
        .collect()
}

/// Top-`N` by gain, and the number of gains above `λ/γ` for the subgradient.
pub(crate) fn gain_decide(
    gains: &[GainIndexTable],
    aoi: &AoiVector,
    lambda: f64,
    gamma: f64,
    channels: usize,
    tiebreak: TieBreak,
    rng: &mut dyn RngCore,
) -> (ScheduleDecision, usize) {
    let alpha: Vec<f64> = gains
        .iter()
        .enumerate()
        .map(|(m, g)| g.get(aoi.get(m)))
        .collect();
    let active = alpha.iter().filter(|&&a| a > lambda / gamma).count();
    (top_n(&alpha, channels, tiebreak, rng), active)
}

impl Scheduler for Mgf {
    fn name(&self) -> &str {
        "MGF"
    }

    fn begin_episode(&mut self, _episode: usize) -> Result<()> {
        if self.lagrange.lambda != self.solved_for {
            self.gains = solve_gains(&self.tables, self.gamma, self.lagrange.lambda)?;
            self.solved_for = self.lagrange.lambda;
        }
        Ok(())
    }

    fn decide(&mut self, aoi: &AoiVector, rng: &mut dyn RngCore) -> ScheduleDecision {
        let (d, active) = gain_decide(
            &self.gains,
            aoi,
            self.lagrange.lambda,
            self.gamma,
            self.channels,
            self.tiebreak,
            rng,
        );
        self.lagrange.record(aoi.time, self.gamma, active);
        d
    }

    fn end_episode(&mut self) -> Result<()> {
        match self.mode {
            LambdaMode::Subgradient => self.lagrange.episode_update(self.channels, self.gamma),
            LambdaMode::Fixed => self.lagrange.subgrad_acc = 0.0,
        }
        Ok(())
    }

    fn lagrange(&self) -> Option<&LagrangeState> {
        Some(&self.lagrange)
    }
}

/// Maximum Age First.
#[derive(Debug, Clone)]
pub struct Maf {
    channels: usize,
    tiebreak: TieBreak,
}

impl Maf {
    pub fn new(channels: usize, tiebreak: TieBreak) -> Self {
        Self { channels, tiebreak }
    }
}

pub fn maf_decide(
    aoi: &AoiVector,
    channels: usize,
    tiebreak: TieBreak,
    rng: &mut dyn RngCore,
) -> ScheduleDecision {
    let ages: Vec<f64> = aoi.ages().iter().map(|&d| d as f64).collect();
    top_n(&ages, channels, tiebreak, rng)
}

impl Scheduler for Maf {
    fn name(&self) -> &str {
        "MAF"
    }

    fn decide(&mut self, aoi: &AoiVector, rng: &mut dyn RngCore) -> ScheduleDecision {
        maf_decide(aoi, self.channels, self.tiebreak, rng)
    }
}

/// Stationary randomized policy: `N` draws without replacement with
/// probabilities proportional to the weights.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    weights: Vec<f64>,
    channels: usize,
}

impl RandomPolicy {
    pub fn new(weights: Vec<f64>, channels: usize) -> Result<Self> {
        check_channels(channels, weights.len())?;
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "random policy weights must be positive".into(),
            ));
        }
        Ok(Self { weights, channels })
    }

    pub fn uniform(num_sources: usize, channels: usize) -> Result<Self> {
        Self::new(vec![1.0; num_sources], channels)
    }
}

impl Scheduler for RandomPolicy {
    fn name(&self) -> &str {
        "Random"
    }

    fn decide(&mut self, _aoi: &AoiVector, rng: &mut dyn RngCore) -> ScheduleDecision {
        let m = self.weights.len();
        if self.channels == m {
            return ScheduleDecision {
                chosen: (0..m).collect(),
            };
        }
        let w = &self.weights;
        let picked = index::sample_weighted(rng, m, |i| w[i], self.channels)
            .expect("weights validated at construction");
        ScheduleDecision {
            chosen: picked.into_iter().collect(),
        }
    }
}

/// Maximum Expected Error: top-`N` by each source's own prediction error at
/// its current AoI, ignoring piggybacked content.
#[derive(Debug, Clone)]
pub struct Mee {
    coeffs: Vec<(f64, f64)>,
    channels: usize,
    tiebreak: TieBreak,
}

impl Mee {
    pub fn new(model: &GaussMarkovModel, channels: usize, tiebreak: TieBreak) -> Result<Self> {
        check_channels(channels, model.num_sources())?;
        let coeffs = (0..model.num_sources())
            .map(|m| (model.ar_coeff(m), model.noise_var(m)))
            .collect();
        Ok(Self {
            coeffs,
            channels,
            tiebreak,
        })
    }
}

impl Scheduler for Mee {
    fn name(&self) -> &str {
        "MEE"
    }

    fn decide(&mut self, aoi: &AoiVector, rng: &mut dyn RngCore) -> ScheduleDecision {
        let err: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(m, &(a, q))| prediction_error(a, q, aoi.get(m)))
            .collect();
        top_n(&err, self.channels, self.tiebreak, rng)
    }
}

/// Exponential-moving-average max-weight policy.
///
/// Source `n`'s tracked error `ṽ_n` is an EMA of its expected error under the
/// known piggyback structure. Scheduling `m` refreshes every target it may
/// carry, so its weight is `Σ_n p_{n,m} (ṽ_n − v_n(1))`.
#[derive(Debug, Clone)]
pub struct Emam {
    joint: JointPenalty,
    fresh: Vec<f64>,
    ema: Vec<f64>,
    rate: f64,
    channels: usize,
    tiebreak: TieBreak,
}

impl Emam {
    pub fn new(
        model: &GaussMarkovModel,
        channels: usize,
        rate: f64,
        tiebreak: TieBreak,
    ) -> Result<Self> {
        check_channels(channels, model.num_sources())?;
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "EMA rate must lie in (0, 1], got {rate}"
            )));
        }
        let fresh: Vec<f64> = (0..model.num_sources())
            .map(|m| prediction_error(model.ar_coeff(m), model.noise_var(m), 1))
            .collect();
        Ok(Self {
            joint: JointPenalty::new(model.clone())?,
            ema: fresh.clone(),
            fresh,
            rate,
            channels,
            tiebreak,
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        let model = self.joint.model();
        (0..model.num_sources())
            .map(|m| {
                (0..model.num_sources())
                    .map(|n| model.piggyback_prob(n, m) * (self.ema[n] - self.fresh[n]))
                    .sum()
            })
            .collect()
    }
}

impl Scheduler for Emam {
    fn name(&self) -> &str {
        "EMAM"
    }

    fn begin_episode(&mut self, _episode: usize) -> Result<()> {
        self.ema.clone_from(&self.fresh);
        Ok(())
    }

    fn decide(&mut self, aoi: &AoiVector, rng: &mut dyn RngCore) -> ScheduleDecision {
        for (n, e) in self.ema.iter_mut().enumerate() {
            let current = self.joint.evaluate(n, aoi.ages()).expect("validated model");
            *e += self.rate * (current - *e);
        }
        let d = top_n(&self.weights(), self.channels, self.tiebreak, rng);
        // A scheduled source's tracked error restarts from the fresh level so
        // the lagging average does not keep re-selecting it.
        for &m in d.chosen() {
            for (n, e) in self.ema.iter_mut().enumerate() {
                if self.joint.model().piggyback_prob(n, m) >= 1.0 {
                    *e = self.fresh[n];
                }
            }
        }
        d
    }
}

/// Periodic two-source schedule from a cyclic search.
#[derive(Debug, Clone)]
pub struct Cyclic2 {
    tau1: usize,
    tau2: usize,
    pos: usize,
}

impl Cyclic2 {
    pub fn new(result: &CyclicSearchResult, num_sources: usize) -> Result<Self> {
        if num_sources != 2 {
            return Err(Error::Unsupported(format!(
                "cyclic schedule needs 2 sources, got {num_sources}"
            )));
        }
        if result.tau1 + result.tau2 == 0 {
            return Err(Error::InvalidArgument(
                "cycle must have positive length".into(),
            ));
        }
        Ok(Self {
            tau1: result.tau1,
            tau2: result.tau2,
            pos: 0,
        })
    }
}

/// Source scheduled at position `slot` of a `(tau1, tau2)` cycle.
pub fn cyclic2_decide(tau1: usize, tau2: usize, slot: usize) -> ScheduleDecision {
    let source = if slot % (tau1 + tau2) < tau1 { 0 } else { 1 };
    ScheduleDecision {
        chosen: vec![source],
    }
}

impl Scheduler for Cyclic2 {
    fn name(&self) -> &str {
        "Cyclic"
    }

    fn begin_episode(&mut self, _episode: usize) -> Result<()> {
        self.pos = 0;
        Ok(())
    }

    fn decide(&mut self, _aoi: &AoiVector, _rng: &mut dyn RngCore) -> ScheduleDecision {
        let d = cyclic2_decide(self.tau1, self.tau2, self.pos);
        self.pos += 1;
        d
    }
}

/// Serves sources `0, 1, ..., M−1` in turn, `N` per slot.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    num_sources: usize,
    channels: usize,
    next: usize,
}

impl RoundRobin {
    pub fn new(num_sources: usize, channels: usize) -> Result<Self> {
        check_channels(channels, num_sources)?;
        Ok(Self {
            num_sources,
            channels,
            next: 0,
        })
    }
}

impl Scheduler for RoundRobin {
    fn name(&self) -> &str {
        "RoundRobin"
    }

    fn begin_episode(&mut self, _episode: usize) -> Result<()> {
        self.next = 0;
        Ok(())
    }

    fn decide(&mut self, _aoi: &AoiVector, _rng: &mut dyn RngCore) -> ScheduleDecision {
        let chosen = (0..self.channels)
            .map(|i| (self.next + i) % self.num_sources)
            .collect();
        self.next = (self.next + self.channels) % self.num_sources;
        ScheduleDecision { chosen }
    }
}
