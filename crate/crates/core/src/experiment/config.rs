//! TOML experiment configuration.
//!
//! Every section except `[model]` may be omitted. Unknown keys are rejected.
//!
//! ```toml
//! [model]
//! num_sources = 10
//! channels = 1
//! a_squared_halves = [0.9, 0.7]   # or a_squared = [...], one per source
//! p = 0.6                         # or piggyback = [[...]], entry (n, m)
//! # noise_cov = [[...]]           # identity when absent
//!
//! [sim]
//! gamma = 0.7
//! delta_bound = 50
//! episode_len = 100
//! episodes = 200
//! warmup_episodes = 100
//! seeds = 20
//! base_seed = 0
//!
//! [policies]
//! list = ["mgf", "online_mgf", "maf", "random", "mee", "emam"]
//!
//! [sweep]
//! axis = "p"                      # p | m | zeta | r | none
//! values = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::online_learning::{CountMode, EstimatorConfig, OnlineConfig};
use crate::policies::{LambdaMode, TieBreak};
use crate::signal::GaussMarkovModel;
use crate::sim_engine::{EvalConfig, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub policies: PolicySection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub beta_trace: BetaTraceSection,
    /// Default output path; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_sources: usize,
    pub channels: usize,
    pub a_squared: Option<Vec<f64>>,
    /// `a²` of the first and second half of the sources (first half rounded up).
    pub a_squared_halves: [f64; 2],
    pub p: f64,
    pub piggyback: Option<Vec<Vec<f64>>>,
    pub noise_cov: Option<Vec<Vec<f64>>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_sources: 10,
            channels: 1,
            a_squared: None,
            a_squared_halves: [0.9, 0.7],
            p: 0.6,
            piggyback: None,
            noise_cov: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub gamma: f64,
    pub delta_bound: usize,
    pub episode_len: usize,
    pub episodes: usize,
    pub warmup_episodes: usize,
    pub seeds: usize,
    pub base_seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            delta_bound: 50,
            episode_len: 100,
            episodes: 200,
            warmup_episodes: 100,
            seeds: 20,
            base_seed: 0,
        }
    }
}

impl SimSection {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed + i).collect()
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            gamma: self.gamma,
            delta_bound: self.delta_bound,
            episode_len: self.episode_len,
            record_slots: false,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            sim: self.sim_config(),
            warmup_episodes: self.warmup_episodes,
            episodes: self.episodes,
            seeds: self.seed_list(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Mgf,
    OnlineMgf,
    Maf,
    Random,
    Mee,
    Emam,
    RoundRobin,
    /// Optimal two-source cycle; needs `M = 2`, `N = 1`.
    Cyclic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    ModelDerived,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub list: Vec<PolicyKind>,
    pub tiebreak: TieBreak,
    pub mgf: MgfParams,
    pub online_mgf: OnlineParams,
    pub emam: EmamParams,
    pub random: RandomParams,
    pub cyclic: CyclicParams,
}

impl Default for PolicySection {
    fn default() -> Self {
        use PolicyKind::*;
        Self {
            list: vec![Mgf, OnlineMgf, Maf, Random, Mee, Emam],
            tiebreak: TieBreak::LowestIndex,
            mgf: MgfParams::default(),
            online_mgf: OnlineParams::default(),
            emam: EmamParams::default(),
            random: RandomParams::default(),
            cyclic: CyclicParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgfParams {
    pub theta: f64,
    pub lambda_mode: LambdaMode,
    pub initial_lambda: f64,
    pub penalty: PenaltyKind,
}

impl Default for MgfParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            lambda_mode: LambdaMode::Subgradient,
            initial_lambda: 0.0,
            penalty: PenaltyKind::ModelDerived,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineParams {
    pub eta: f64,
    pub zeta: f64,
    pub theta: f64,
    pub lambda_mode: LambdaMode,
    /// Loss cap `B` as a multiple of the largest stationary variance.
    pub loss_cap_factor: f64,
    /// Absolute loss cap; overrides `loss_cap_factor`. Required when a
    /// source is not stationary.
    pub loss_cap: Option<f64>,
    pub count_mode: CountMode,
    pub monotone: bool,
}

impl Default for OnlineParams {
    fn default() -> Self {
        Self {
            eta: 0.05,
            zeta: 0.3,
            theta: 1.0,
            lambda_mode: LambdaMode::Subgradient,
            loss_cap_factor: 4.0,
            loss_cap: None,
            count_mode: CountMode::PerEpisode,
            monotone: false,
        }
    }
}

impl OnlineParams {
    /// The loss cap `B`, which also scales the unit-range confidence radius.
    pub fn cap_for(&self, model: &GaussMarkovModel) -> Result<f64> {
        if let Some(b) = self.loss_cap {
            return Ok(b);
        }
        let mut max_var: f64 = 0.0;
        for m in 0..model.num_sources() {
            let v = model.stationary_variance(m).map_err(|_| {
                Error::Config(
                    "online_mgf.loss_cap must be set explicitly when a source is not stationary"
                        .into(),
                )
            })?;
            max_var = max_var.max(v);
        }
        if !(max_var > 0.0) {
            return Err(Error::Config(
                "online_mgf.loss_cap must be set explicitly for a noiseless model".into(),
            ));
        }
        Ok(self.loss_cap_factor * max_var)
    }

    pub fn online_config(
        &self,
        model: &GaussMarkovModel,
        sim: &SimSection,
        channels: usize,
        tiebreak: TieBreak,
    ) -> Result<OnlineConfig> {
        let cap = self.cap_for(model)?;
        let estimator = EstimatorConfig {
            delta_bound: sim.delta_bound,
            eta: self.eta,
            zeta: self.zeta,
            loss_cap: Some(cap),
            radius_scale: cap,
            count_mode: self.count_mode,
            monotone: self.monotone,
        };
        estimator
            .validate()
            .map_err(|e| Error::Config(format!("online_mgf: {e}")))?;
        Ok(OnlineConfig {
            estimator,
            channels,
            gamma: sim.gamma,
            theta: self.theta,
            lambda_mode: self.lambda_mode,
            tiebreak,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmamParams {
    pub rate: f64,
}

impl Default for EmamParams {
    fn default() -> Self {
        Self { rate: 0.1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomParams {
    /// Scheduling weights, uniform when absent.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CyclicParams {
    pub cap: usize,
}

impl Default for CyclicParams {
    fn default() -> Self {
        Self { cap: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    P,
    M,
    Zeta,
    /// Replicate the model `r` times with `r·N` channels.
    R,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::P => "p",
            SweepAxis::M => "m",
            SweepAxis::Zeta => "zeta",
            SweepAxis::R => "r",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub p_values: Vec<f64>,
    /// AoI grid for the lower-bound audit and for ε.
    pub grid_bound: usize,
    pub tolerance: f64,
    pub gap_tolerance: f64,
    /// `a²` of the two-source instances for the cycle and gap audits.
    pub pair_a_squared: [f64; 2],
    /// Truncation of the joint two-source oracles.
    pub joint_delta_bound: usize,
    pub cyclic_instances: usize,
    pub cyclic_delta_bound: usize,
    pub cyclic_tolerance: f64,
    pub seed: u64,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            p_values: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            grid_bound: 50,
            tolerance: 1e-9,
            gap_tolerance: 1e-6,
            pair_a_squared: [0.9, 0.7],
            joint_delta_bound: 30,
            cyclic_instances: 50,
            cyclic_delta_bound: 15,
            cyclic_tolerance: 1e-6,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaTraceSection {
    pub zetas: Vec<f64>,
    pub episodes: usize,
    pub seeds: usize,
    pub threshold: f64,
}

impl Default for BetaTraceSection {
    fn default() -> Self {
        Self {
            zetas: vec![0.3, 0.6, 0.9],
            episodes: 100,
            seeds: 10,
            threshold: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = &self.model;
        if m.num_sources < 2 {
            return bad("model.num_sources must be at least 2".into());
        }
        if m.channels == 0 || m.channels >= m.num_sources {
            return bad(format!(
                "model.channels must satisfy 1 ≤ N < M, got N={} M={}",
                m.channels, m.num_sources
            ));
        }
        let s = &self.sim;
        if !(s.gamma > 0.0 && s.gamma < 1.0) {
            return bad(format!("sim.gamma must lie in (0, 1), got {}", s.gamma));
        }
        if s.delta_bound < 2 || s.episode_len == 0 || s.episodes == 0 || s.seeds == 0 {
            return bad(
                "sim.delta_bound ≥ 2 and sim.episode_len, sim.episodes, sim.seeds ≥ 1 are required"
                    .into(),
            );
        }
        if self.policies.list.is_empty() {
            return bad("policies.list must not be empty".into());
        }
        let sw = &self.sweep;
        if sw.axis != SweepAxis::None && sw.values.is_empty() {
            return bad(format!(
                "sweep.values must not be empty for axis {}",
                sw.axis.as_str()
            ));
        }
        match sw.axis {
            SweepAxis::P if m.piggyback.is_some() => {
                return bad(
                    "a p sweep needs the default piggyback model, not model.piggyback".into(),
                )
            }
            SweepAxis::M
                if m.a_squared.is_some() || m.piggyback.is_some() || m.noise_cov.is_some() =>
            {
                return bad(
                    "an M sweep needs a_squared_halves and the default piggyback and noise model"
                        .into(),
                )
            }
            SweepAxis::M | SweepAxis::R => {
                if let Some(v) = sw.values.iter().find(|v| !(v.fract() == 0.0 && **v >= 1.0)) {
                    return bad(format!("sweep value {v} must be a positive integer"));
                }
            }
            _ => {}
        }
        if sw.axis == SweepAxis::M {
            if let Some(v) = sw.values.iter().find(|v| (**v as usize) <= m.channels) {
                return bad(format!("M = {v} must exceed model.channels"));
            }
        }
        if self.audit.p_values.is_empty()
            || self.audit.grid_bound < 2
            || self.audit.joint_delta_bound < 2
        {
            return bad("audit.p_values must be nonempty and audit grid bounds ≥ 2".into());
        }
        if self.beta_trace.zetas.is_empty()
            || self.beta_trace.episodes < 2
            || self.beta_trace.seeds == 0
        {
            return bad("beta_trace needs zetas, at least 2 episodes and 1 seed".into());
        }
        // Building the base model catches shape and range errors early.
        self.base_model()?;
        for &v in &sw.values {
            self.point(sw.axis, v)?;
        }
        Ok(())
    }

    /// The model described by `[model]`.
    pub fn base_model(&self) -> Result<GaussMarkovModel> {
        self.model_with(self.model.num_sources, self.model.p)
    }

    fn model_with(&self, num_sources: usize, p: f64) -> Result<GaussMarkovModel> {
        let cfg = &self.model;
        let a2: Vec<f64> = match &cfg.a_squared {
            Some(list) if list.len() != num_sources => {
                return Err(Error::Config(format!(
                    "model.a_squared has {} entries, expected {num_sources}",
                    list.len()
                )))
            }
            Some(list) => list.clone(),
            None => {
                let first = num_sources.div_ceil(2);
                (0..num_sources)
                    .map(|i| cfg.a_squared_halves[usize::from(i >= first)])
                    .collect()
            }
        };
        if a2.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("a² values must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "piggyback probability {p} outside [0, 1]"
            )));
        }
        let noise = match &cfg.noise_cov {
            Some(rows) => matrix(rows, num_sources, "model.noise_cov")?,
            None => DMatrix::identity(num_sources, num_sources),
        };
        let piggyback = match &cfg.piggyback {
            Some(rows) => matrix(rows, num_sources, "model.piggyback")?,
            None => {
                let mut pb = DMatrix::identity(num_sources, num_sources);
                for n in 1..num_sources {
                    pb[(n, 0)] = p;
                }
                pb
            }
        };
        GaussMarkovModel::new(a2.iter().map(|v| v.sqrt()).collect(), noise, piggyback)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// The model, channel count and online ζ at one sweep value.
    pub fn point(&self, axis: SweepAxis, value: f64) -> Result<SweepPoint> {
        let mut pt = SweepPoint {
            value: (axis != SweepAxis::None).then_some(value),
            model: self.base_model()?,
            channels: self.model.channels,
            zeta: self.policies.online_mgf.zeta,
            replicas: 1,
        };
        match axis {
            SweepAxis::None => {}
            SweepAxis::P => pt.model = self.model_with(self.model.num_sources, value)?,
            SweepAxis::M => pt.model = self.model_with(value as usize, self.model.p)?,
            SweepAxis::Zeta => {
                if !(value > 0.0 && value < 1.0) {
                    return Err(Error::Config(format!("ζ = {value} outside (0, 1)")));
                }
                pt.zeta = value;
            }
            SweepAxis::R => {
                let r = value as usize;
                pt.model = replicate(&pt.model, r)?;
                pt.channels *= r;
                pt.replicas = r;
            }
        }
        Ok(pt)
    }

    /// All sweep points in order.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        match self.sweep.axis {
            SweepAxis::None => Ok(vec![self.point(SweepAxis::None, 0.0)?]),
            axis => self
                .sweep
                .values
                .iter()
                .map(|&v| self.point(axis, v))
                .collect(),
        }
    }
}

/// One resolved sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: Option<f64>,
    pub model: GaussMarkovModel,
    pub channels: usize,
    pub zeta: f64,
    /// Copies of the base model; results are divided by this.
    pub replicas: usize,
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be {n}×{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// `r` independent copies of `model` with block-diagonal noise and
/// piggyback structure.
pub fn replicate(model: &GaussMarkovModel, r: usize) -> Result<GaussMarkovModel> {
    if r == 0 {
        return Err(Error::Config("replication factor must be positive".into()));
    }
    let m = model.num_sources();
    let n = m * r;
    let block = |src: &DMatrix<f64>| {
        DMatrix::from_fn(n, n, |i, j| {
            if i / m == j / m {
                src[(i % m, j % m)]
            } else {
                0.0
            }
        })
    };
    let coeffs = (0..n).map(|i| model.ar_coeff(i % m)).collect();
    GaussMarkovModel::new(coeffs, block(model.noise_cov()), block(model.piggyback()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("[model]\n").unwrap();
        assert_eq!(cfg.model.num_sources, 10);
        assert_eq!(cfg.sim.gamma, 0.7);
        let model = cfg.base_model().unwrap();
        assert_eq!(model.ar_coeff(4), 0.9f64.sqrt());
        assert_eq!(model.ar_coeff(5), 0.7f64.sqrt());
        assert_eq!(model.piggyback_prob(3, 0), 0.6);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[model]\nchannels = 10\n",
            "[model]\n[sim]\ngamma = 1.0\n",
            "[model]\nbogus = 1\n",
            "[model]\n[sweep]\naxis = \"p\"\n",
            "[model]\n[sweep]\naxis = \"m\"\nvalues = [2.5]\n",
            "[model]\na_squared = [0.9]\n",
            "[model]\np = 1.5\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn replication_is_block_diagonal() {
        let base = GaussMarkovModel::default_model(&[0.9, 0.7, 0.7], 0.5).unwrap();
        let rep = replicate(&base, 3).unwrap();
        assert_eq!(rep.num_sources(), 9);
        assert_eq!(rep.piggyback_prob(4, 3), 0.5);
        assert_eq!(rep.piggyback_prob(4, 0), 0.0);
        assert_eq!(rep.ar_coeff(6), base.ar_coeff(0));
    }

    #[test]
    fn sweep_points() {
        let cfg = ExperimentConfig::from_toml(
            "[model]\nchannels = 1\n[sweep]\naxis = \"m\"\nvalues = [4, 6]\n",
        )
        .unwrap();
        let pts = cfg.points().unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].model.num_sources(), 6);
        let cfg = ExperimentConfig::from_toml(
            "[model]\nnum_sources = 4\n[sweep]\naxis = \"r\"\nvalues = [2]\n",
        )
        .unwrap();
        let pt = &cfg.points().unwrap()[0];
        assert_eq!(
            (pt.model.num_sources(), pt.channels, pt.replicas),
            (8, 2, 2)
        );
    }
}
