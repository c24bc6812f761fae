//! Per-source relaxed MDP, gain indices, two-source cyclic search and
//! brute-force joint MDP oracles.
//!
//! Every solver works on the truncated AoI space `1..=delta_bound` where an
//! idle source at the bound stays at the bound.

use crate::error::{Error, Result};
use crate::penalty::{JointCost, PenaltyTable};

/// Largest joint state space the oracles accept.
pub const MAX_JOINT_STATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 100_000,
        }
    }
}

/// `J_{m,λ}(δ) = f(δ) + min{λ + γ J(1), γ J(min(δ+1, δ_bound))}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub source: usize,
    pub gamma: f64,
    pub lambda: f64,
    values: Vec<f64>,
    /// `||T J - J||_∞` for the returned `J`.
    pub residual: f64,
    pub sweeps: usize,
    pub residual_history: Vec<f64>,
}

impl ValueFunction {
    pub fn get(&self, delta: usize) -> f64 {
        self.values[delta.clamp(1, self.values.len()) - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn delta_bound(&self) -> usize {
        self.values.len()
    }
}

/// One application of the relaxed Bellman operator.
pub fn bellman(f: &[f64], j: &[f64], gamma: f64, lambda: f64, out: &mut [f64]) {
    let db = f.len();
    let active = lambda + gamma * j[0];
    for d in 0..db {
        let idle = gamma * j[(d + 1).min(db - 1)];
        out[d] = f[d] + active.min(idle);
    }
}

pub fn bellman_residual(f: &[f64], j: &[f64], gamma: f64, lambda: f64) -> f64 {
    let mut tj = vec![0.0; f.len()];
    bellman(f, j, gamma, lambda, &mut tj);
    sup_distance(&tj, j)
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "discount must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

pub fn value_iteration(
    f: &PenaltyTable,
    gamma: f64,
    lambda: f64,
    opts: ViOptions,
) -> Result<ValueFunction> {
    value_iteration_from(f, gamma, lambda, opts, None)
}

/// Value iteration started from `init` (zeros when `None`).
pub fn value_iteration_from(
    f: &PenaltyTable,
    gamma: f64,
    lambda: f64,
    opts: ViOptions,
    init: Option<&[f64]>,
) -> Result<ValueFunction> {
    check_gamma(gamma)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite multiplier {lambda}"
        )));
    }
    let fv = f.values();
    if let Some(d) = fv.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinitePenalty { delta: d + 1 });
    }
    let mut j = match init {
        Some(v) if v.len() == fv.len() => v.to_vec(),
        Some(_) => {
            return Err(Error::InvalidArgument(
                "initial value length mismatch".into(),
            ))
        }
        None => vec![0.0; fv.len()],
    };
    let mut next = vec![0.0; fv.len()];
    let mut history = Vec::new();
    for sweep in 0..opts.max_sweeps {
        bellman(fv, &j, gamma, lambda, &mut next);
        let r = sup_distance(&next, &j);
        history.push(r);
        if r <= opts.tol {
            return Ok(ValueFunction {
                source: f.source,
                gamma,
                lambda,
                values: j,
                residual: r,
                sweeps: sweep,
                residual_history: history,
            });
        }
        std::mem::swap(&mut j, &mut next);
    }
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        residual: *history.last().unwrap_or(&f64::NAN),
    })
}

/// `α(δ) = J(min(δ+1, δ_bound)) - J(1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainIndexTable {
    pub source: usize,
    pub gamma: f64,
    pub lambda: f64,
    alpha: Vec<f64>,
}

impl GainIndexTable {
    pub fn from_values(source: usize, gamma: f64, lambda: f64, j: &[f64]) -> Self {
        let db = j.len();
        let alpha = (0..db).map(|d| j[(d + 1).min(db - 1)] - j[0]).collect();
        Self {
            source,
            gamma,
            lambda,
            alpha,
        }
    }

    pub fn get(&self, delta: usize) -> f64 {
        self.alpha[delta.clamp(1, self.alpha.len()) - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }
}

pub fn gain_index(j: &ValueFunction) -> GainIndexTable {
    GainIndexTable::from_values(j.source, j.gamma, j.lambda, j.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Schedule,
    Idle,
}

/// Schedule iff `α(δ) > λ/γ`; equality idles.
pub fn threshold_decide(alpha: &GainIndexTable, delta: usize, lambda: f64, gamma: f64) -> Decision {
    if alpha.get(delta) > lambda / gamma {
        Decision::Schedule
    } else {
        Decision::Idle
    }
}

/// The same decision read off the state-action values: schedule iff
/// `Q(δ, schedule) < Q(δ, idle)`.
pub fn q_difference_decide(
    j: &ValueFunction,
    f: &PenaltyTable,
    delta: usize,
    lambda: f64,
    gamma: f64,
) -> Decision {
    let q_active = f.get(delta) + lambda + gamma * j.get(1);
    let q_idle = f.get(delta) + gamma * j.get(delta + 1);
    if q_active < q_idle {
        Decision::Schedule
    } else {
        Decision::Idle
    }
}

/// Best two-source cycle: source 0 for `tau1` slots, then source 1 for `tau2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicSearchResult {
    pub tau1: usize,
    pub tau2: usize,
    /// Long-run average of `g_0 + g_1`.
    pub l_opt: f64,
    pub search_cap: usize,
    /// Set when the minimiser sits on the search cap, so a longer period
    /// might do better.
    pub touches_cap: bool,
}

/// Long-run average cost of the cycle `(tau1, tau2)`.
///
/// In the cycle the AoI pairs after source-0 transmissions are
/// `(1, 2), ..., (1, tau1 + 1)` and after source-1 transmissions
/// `(2, 1), ..., (tau2 + 1, 1)`, saturating at the bound. A zero phase means
/// the other source is served forever, so its partner's age sits at the bound.
pub fn cyclic_cost(g: &dyn JointCost, delta_bound: usize, tau1: usize, tau2: usize) -> f64 {
    assert!(tau1 + tau2 >= 1, "cycle must have positive length");
    let c = |a: usize, b: usize| g.total(&[a.min(delta_bound), b.min(delta_bound)]);
    match (tau1, tau2) {
        (_, 0) => c(1, delta_bound),
        (0, _) => c(delta_bound, 1),
        _ => {
            let s1: f64 = (0..tau1).map(|k| c(1, 2 + k)).sum();
            let s2: f64 = (0..tau2).map(|j| c(2 + j, 1)).sum();
            (s1 + s2) / (tau1 + tau2) as f64
        }
    }
}

/// Exhaustive search over `0 ≤ tau1, tau2 ≤ cap` with `tau1 + tau2 ≥ 1`.
/// Ties go to the lexicographically smallest pair; all one-phase cycles
/// coincide, so they are reported as `(1, 0)` or `(0, 1)`.
pub fn cyclic_search(
    g: &dyn JointCost,
    delta_bound: usize,
    cap: usize,
) -> Result<CyclicSearchResult> {
    if g.num_sources() != 2 {
        return Err(Error::Unsupported(format!(
            "cyclic search needs 2 sources, got {}",
            g.num_sources()
        )));
    }
    if cap < 1 || delta_bound < 2 {
        return Err(Error::InvalidArgument(
            "cap must be ≥ 1 and delta_bound ≥ 2".into(),
        ));
    }
    let c = |a: usize, b: usize| g.total(&[a.min(delta_bound), b.min(delta_bound)]);
    let mut pre1 = vec![0.0; cap + 1];
    let mut pre2 = vec![0.0; cap + 1];
    for k in 0..cap {
        pre1[k + 1] = pre1[k] + c(1, 2 + k);
        pre2[k + 1] = pre2[k] + c(2 + k, 1);
    }
    let mut best = (f64::INFINITY, 0, 0);
    for tau1 in 0..=cap {
        for tau2 in 0..=cap {
            let value = match (tau1, tau2) {
                (0, 0) => continue,
                (1, 0) => c(1, delta_bound),
                (0, 1) => c(delta_bound, 1),
                (_, 0) | (0, _) => continue,
                _ => (pre1[tau1] + pre2[tau2]) / (tau1 + tau2) as f64,
            };
            // Relative slack keeps ties from flipping on rounding noise.
            if !best.0.is_finite() || value < best.0 - 1e-12 * best.0.abs().max(1.0) {
                best = (value, tau1, tau2);
            }
        }
    }
    let (l_opt, tau1, tau2) = best;
    Ok(CyclicSearchResult {
        tau1,
        tau2,
        l_opt,
        search_cap: cap,
        touches_cap: tau1 == cap || tau2 == cap,
    })
}

/// The truncated joint AoI space with mixed-radix state indices (source 0
/// fastest) and every `N`-subset of sources as an action.
#[derive(Debug, Clone)]
pub struct JointStateSpace {
    pub num_sources: usize,
    pub delta_bound: usize,
    pub channels: usize,
    actions: Vec<Vec<usize>>,
    next: Vec<Vec<usize>>,
    cost: Vec<f64>,
}

impl JointStateSpace {
    pub fn new(g: &dyn JointCost, delta_bound: usize, channels: usize) -> Result<Self> {
        let m = g.num_sources();
        if channels == 0 || channels > m {
            return Err(Error::InvalidArgument(format!(
                "channels must be in 1..={m}, got {channels}"
            )));
        }
        let states = (delta_bound as u128).saturating_pow(m as u32);
        if states > MAX_JOINT_STATES as u128 {
            return Err(Error::StateSpaceTooLarge {
                states,
                limit: MAX_JOINT_STATES,
            });
        }
        let states = states as usize;
        let actions = combinations(m, channels);
        let mut space = Self {
            num_sources: m,
            delta_bound,
            channels,
            actions,
            next: Vec::with_capacity(states),
            cost: Vec::with_capacity(states),
        };
        for s in 0..states {
            let ages = space.ages(s);
            space.cost.push(g.total(&ages));
            let nexts = space
                .actions
                .iter()
                .map(|a| {
                    let mut n = ages.clone();
                    for (i, d) in n.iter_mut().enumerate() {
                        *d = if a.contains(&i) {
                            1
                        } else {
                            (*d + 1).min(delta_bound)
                        };
                    }
                    space.index(&n)
                })
                .collect();
            space.next.push(nexts);
        }
        Ok(space)
    }

    pub fn num_states(&self) -> usize {
        self.cost.len()
    }

    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn index(&self, ages: &[usize]) -> usize {
        ages.iter().rev().fold(0, |acc, &d| {
            acc * self.delta_bound + (d.min(self.delta_bound) - 1)
        })
    }

    pub fn ages(&self, mut s: usize) -> Vec<usize> {
        (0..self.num_sources)
            .map(|_| {
                let d = s % self.delta_bound + 1;
                s /= self.delta_bound;
                d
            })
            .collect()
    }

    pub fn cost(&self, s: usize) -> f64 {
        self.cost[s]
    }

    pub fn next(&self, s: usize, action: usize) -> usize {
        self.next[s][action]
    }
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

/// Optimal discounted values and a greedy decision table.
#[derive(Debug, Clone)]
pub struct JointSolution {
    pub space: JointStateSpace,
    pub values: Vec<f64>,
    /// Action index per state.
    pub policy: Vec<usize>,
    pub residual: f64,
    pub sweeps: usize,
}

impl JointSolution {
    pub fn value(&self, ages: &[usize]) -> f64 {
        self.values[self.space.index(ages)]
    }

    pub fn decide(&self, ages: &[usize]) -> &[usize] {
        &self.space.actions[self.policy[self.space.index(ages)]]
    }
}

fn greedy(space: &JointStateSpace, h: &[f64], s: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for a in 0..space.actions.len() {
        let v = h[space.next(s, a)];
        if v < best.1 - 1e-12 * v.abs().max(1.0) {
            best = (a, v);
        }
    }
    best
}

/// Discounted joint optimum: `V(s) = c(s) + γ min_a V(next(s, a))`.
pub fn joint_discounted(
    g: &dyn JointCost,
    delta_bound: usize,
    channels: usize,
    gamma: f64,
    opts: ViOptions,
) -> Result<JointSolution> {
    check_gamma(gamma)?;
    let space = JointStateSpace::new(g, delta_bound, channels)?;
    let n = space.num_states();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for sweep in 0..opts.max_sweeps {
        for s in 0..n {
            next[s] = space.cost(s) + gamma * greedy(&space, &v, s).1;
        }
        let r = sup_distance(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if r <= opts.tol {
            let policy = (0..n).map(|s| greedy(&space, &v, s).0).collect();
            return Ok(JointSolution {
                space,
                values: v,
                policy,
                residual: r,
                sweeps: sweep + 1,
            });
        }
    }
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        residual: f64::NAN,
    })
}

/// Discounted value of a fixed decision table.
pub fn evaluate_joint_policy(
    g: &dyn JointCost,
    space: &JointStateSpace,
    policy: &[usize],
    gamma: f64,
    opts: ViOptions,
) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let n = space.num_states();
    if policy.len() != n {
        return Err(Error::InvalidArgument("policy table size mismatch".into()));
    }
    let cost: Vec<f64> = (0..n).map(|s| g.total(&space.ages(s))).collect();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..opts.max_sweeps {
        for s in 0..n {
            next[s] = cost[s] + gamma * v[space.next(s, policy[s])];
        }
        let r = sup_distance(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if r <= opts.tol {
            return Ok(v);
        }
    }
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        residual: f64::NAN,
    })
}

#[derive(Debug, Clone)]
pub struct AverageCostSolution {
    pub space: JointStateSpace,
    /// Optimal long-run average cost.
    pub gain: f64,
    pub bias: Vec<f64>,
    pub policy: Vec<usize>,
    pub iterations: usize,
}

impl AverageCostSolution {
    pub fn decide(&self, ages: &[usize]) -> &[usize] {
        &self.space.actions[self.policy[self.space.index(ages)]]
    }
}

/// Average-cost optimum by relative value iteration.
///
/// Transitions are mixed with a self-loop, `P' = ½P + ½I` with halved
/// costs, which keeps the optimal gain and bias but removes periodicity
/// from the deterministic AoI dynamics.
pub fn joint_average_cost(
    g: &dyn JointCost,
    delta_bound: usize,
    channels: usize,
    opts: ViOptions,
) -> Result<AverageCostSolution> {
    const TAU: f64 = 0.5;
    let space = JointStateSpace::new(g, delta_bound, channels)?;
    let n = space.num_states();
    let mut h = vec![0.0; n];
    let mut w = vec![0.0; n];
    for it in 0..opts.max_sweeps {
        for s in 0..n {
            w[s] = TAU * (space.cost(s) + greedy(&space, &h, s).1) + (1.0 - TAU) * h[s];
        }
        let (lo, hi) = w
            .iter()
            .zip(&h)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a - b), hi.max(a - b))
            });
        let reference = w[0];
        for (hs, ws) in h.iter_mut().zip(&w) {
            *hs = ws - reference;
        }
        if hi - lo <= opts.tol * TAU {
            let gain = 0.5 * (lo + hi) / TAU;
            let policy = (0..n).map(|s| greedy(&space, &h, s).0).collect();
            return Ok(AverageCostSolution {
                space,
                gain,
                bias: h,
                policy,
                iterations: it + 1,
            });
        }
    }
    Err(Error::NotConverged {
        sweeps: opts.max_sweeps,
        residual: f64::NAN,
    })
}
