//! Sweeps, β traces and penalty export.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::config::{ExperimentConfig, PenaltyKind, PolicyKind, SweepPoint};
use crate::error::{Error, Result};
use crate::online_learning::{check_value_gap_bound, ConvergenceTrace, OnlineMgf, ValueGapReport};
use crate::penalty::{self, JointPenalty, PenaltyMode, PenaltyTable, TruncationConfig};
use crate::policies::{Cyclic2, Emam, Maf, Mee, Mgf, RandomPolicy, RoundRobin, Scheduler};
use crate::relaxed_mdp;
use crate::sim_engine::{evaluate_policy, EvalSummary, Simulation};

/// One CSV line of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub sweep_axis: String,
    pub sweep_value: Option<f64>,
    pub policy: String,
    pub mean_disc_error: f64,
    pub ci95: f64,
    pub n_seeds: usize,
    pub n_episodes: usize,
    pub wall_ms: u128,
}

/// Penalty tables for every source of `model`.
pub fn penalty_tables(
    model: &crate::GaussMarkovModel,
    delta_bound: usize,
    kind: PenaltyKind,
) -> Result<Vec<PenaltyTable>> {
    let cfg = TruncationConfig::new(delta_bound)?;
    let mode = match kind {
        PenaltyKind::ModelDerived => PenaltyMode::ModelDerived,
        PenaltyKind::ClosedForm => PenaltyMode::ClosedForm,
    };
    (0..model.num_sources())
        .map(|m| penalty::build_f_table(model, m, cfg, mode))
        .collect()
}

/// Builds fresh schedulers of one kind at one sweep point.
pub struct PolicyFactory<'a> {
    cfg: &'a ExperimentConfig,
    point: &'a SweepPoint,
    kind: PolicyKind,
    tables: Option<Vec<PenaltyTable>>,
    cycle: Option<relaxed_mdp::CyclicSearchResult>,
}

impl<'a> PolicyFactory<'a> {
    pub fn new(cfg: &'a ExperimentConfig, point: &'a SweepPoint, kind: PolicyKind) -> Result<Self> {
        let db = cfg.sim.delta_bound;
        let tables = match kind {
            PolicyKind::Mgf => Some(penalty_tables(&point.model, db, cfg.policies.mgf.penalty)?),
            _ => None,
        };
        let cycle = match kind {
            PolicyKind::Cyclic => {
                if point.model.num_sources() != 2 || point.channels != 1 {
                    return Err(Error::Config(
                        "the cyclic policy needs M = 2 and N = 1".into(),
                    ));
                }
                let g = JointPenalty::new(point.model.clone())?;
                Some(relaxed_mdp::cyclic_search(&g, db, cfg.policies.cyclic.cap)?)
            }
            _ => None,
        };
        Ok(Self {
            cfg,
            point,
            kind,
            tables,
            cycle,
        })
    }

    pub fn build(&self) -> Result<Box<dyn Scheduler>> {
        let p = &self.cfg.policies;
        let model = &self.point.model;
        let n = self.point.channels;
        let nsrc = model.num_sources();
        Ok(match self.kind {
            PolicyKind::Mgf => {
                let tables = self.tables.clone().expect("built for MGF");
                Box::new(Mgf::with_lambda(
                    tables,
                    n,
                    self.cfg.sim.gamma,
                    p.mgf.theta,
                    p.tiebreak,
                    p.mgf.lambda_mode,
                    p.mgf.initial_lambda,
                )?)
            }
            PolicyKind::OnlineMgf => {
                let mut params = p.online_mgf.clone();
                params.zeta = self.point.zeta;
                Box::new(OnlineMgf::new(
                    nsrc,
                    params.online_config(model, &self.cfg.sim, n, p.tiebreak)?,
                )?)
            }
            PolicyKind::Maf => Box::new(Maf::new(n, p.tiebreak)),
            PolicyKind::Random => match &p.random.weights {
                Some(w) if w.len() == nsrc => Box::new(RandomPolicy::new(w.clone(), n)?),
                Some(w) => {
                    return Err(Error::Config(format!(
                        "random.weights has {} entries, expected {nsrc}",
                        w.len()
                    )))
                }
                None => Box::new(RandomPolicy::uniform(nsrc, n)?),
            },
            PolicyKind::Mee => Box::new(Mee::new(model, n, p.tiebreak)?),
            PolicyKind::Emam => Box::new(Emam::new(model, n, p.emam.rate, p.tiebreak)?),
            PolicyKind::RoundRobin => Box::new(RoundRobin::new(nsrc, n)?),
            PolicyKind::Cyclic => Box::new(Cyclic2::new(
                self.cycle.as_ref().expect("built for cyclic"),
                nsrc,
            )?),
        })
    }
}

/// Evaluates one policy at one sweep point.
pub fn evaluate_point(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    kind: PolicyKind,
) -> Result<EvalSummary> {
    let factory = PolicyFactory::new(cfg, point, kind)?;
    evaluate_policy(&point.model, |_| factory.build(), &cfg.sim.eval_config())
}

/// Runs every (sweep point, policy) pair in order.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for point in cfg.points()? {
        for &kind in &cfg.policies.list {
            let start = Instant::now();
            let s = evaluate_point(cfg, &point, kind)?;
            let scale = point.replicas as f64;
            rows.push(ResultRow {
                sweep_axis: cfg.sweep.axis.as_str().to_string(),
                sweep_value: point.value,
                policy: policy_name(kind).to_string(),
                mean_disc_error: s.mean / scale,
                ci95: s.ci95 / scale,
                n_seeds: s.n_seeds,
                n_episodes: s.n_episodes,
                wall_ms: start.elapsed().as_millis(),
            });
        }
    }
    Ok(rows)
}

pub fn policy_name(kind: PolicyKind) -> &'static str {
    match kind {
        PolicyKind::Mgf => "MGF",
        PolicyKind::OnlineMgf => "Online-MGF",
        PolicyKind::Maf => "MAF",
        PolicyKind::Random => "Random",
        PolicyKind::Mee => "MEE",
        PolicyKind::Emam => "EMAM",
        PolicyKind::RoundRobin => "RoundRobin",
        PolicyKind::Cyclic => "Cyclic",
    }
}

pub fn write_rows<W: Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One Online-MGF learning run.
#[derive(Debug, Clone)]
pub struct BetaRun {
    pub zeta: f64,
    pub seed: u64,
    pub trace: ConvergenceTrace,
    /// Per episode, the full-information mean loss table of every source.
    pub realized: Vec<Vec<PenaltyTable>>,
}

impl BetaRun {
    /// First episode where every source's β is below `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<usize> {
        self.trace.first_episode_below(threshold)
    }

    /// The per-episode value-gap check at the multiplier of `lambda`.
    pub fn value_gap(&self, gamma: f64, lambda: f64) -> Result<ValueGapReport> {
        check_value_gap_bound(&self.realized, &self.trace, gamma, lambda)
    }
}

/// Learns from scratch with one ζ and seed for `episodes` episodes.
pub fn learning_run(
    cfg: &ExperimentConfig,
    zeta: f64,
    seed: u64,
    episodes: usize,
) -> Result<BetaRun> {
    let model = cfg.base_model()?;
    let mut params = cfg.policies.online_mgf.clone();
    params.zeta = zeta;
    let oc = params.online_config(&model, &cfg.sim, cfg.model.channels, cfg.policies.tiebreak)?;
    let mut policy = OnlineMgf::new(model.num_sources(), oc)?;
    let mut sim = Simulation::new(model.clone(), cfg.sim.sim_config(), seed)?;
    let mut realized = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let log = sim.run_episode(&mut policy)?;
        realized.push(
            (0..model.num_sources())
                .map(|m| log.full_info.table(m))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(BetaRun {
        zeta,
        seed,
        trace: policy.trace().clone(),
        realized,
    })
}

/// Learning runs for every configured ζ and seed, in parallel.
pub fn beta_trace(cfg: &ExperimentConfig) -> Result<Vec<BetaRun>> {
    use rayon::prelude::*;
    let bt = &cfg.beta_trace;
    let jobs: Vec<(f64, u64)> = bt
        .zetas
        .iter()
        .flat_map(|&z| (0..bt.seeds as u64).map(move |s| (z, cfg.sim.base_seed + s)))
        .collect();
    jobs.par_iter()
        .map(|&(z, s)| learning_run(cfg, z, s, bt.episodes))
        .collect()
}

#[derive(Debug, Serialize)]
struct BetaRow {
    zeta: f64,
    seed: u64,
    episode: usize,
    source: usize,
    beta: Option<f64>,
    max_d: f64,
}

/// Columns: zeta, seed, episode, source, beta, max_d. β is empty for the
/// first episode.
pub fn write_beta_rows<W: Write>(writer: W, runs: &[BetaRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for run in runs {
        for e in &run.trace.entries {
            w.serialize(BetaRow {
                zeta: run.zeta,
                seed: run.seed,
                episode: e.episode,
                source: e.source,
                beta: e.beta,
                max_d: e.max_d,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Median of the first-below episode per ζ; runs that never get there
/// count as `episodes`.
pub fn median_first_below(
    runs: &[BetaRun],
    zeta: f64,
    threshold: f64,
    episodes: usize,
) -> Option<f64> {
    let mut xs: Vec<f64> = runs
        .iter()
        .filter(|r| r.zeta == zeta)
        .map(|r| r.first_below(threshold).unwrap_or(episodes) as f64)
        .collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Writes the configured model's penalty tables.
pub fn export_penalties<W: Write>(cfg: &ExperimentConfig, writer: W) -> Result<Vec<PenaltyTable>> {
    let tables = penalty_tables(
        &cfg.base_model()?,
        cfg.sim.delta_bound,
        cfg.policies.mgf.penalty,
    )?;
    penalty::write_tables(writer, &tables)?;
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            "[model]\nnum_sources = 3\np = 0.5\n[sim]\nepisodes = 2\nwarmup_episodes = 1\nseeds = 2\nepisode_len = 30\ndelta_bound = 20\n\
             [policies]\nlist = [\"mgf\", \"maf\", \"online_mgf\", \"round_robin\"]\n[sweep]\naxis = \"p\"\nvalues = [0.0, 1.0]\n",
        )
        .unwrap()
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = small();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(
                (x.sweep_value, &x.policy, x.mean_disc_error, x.ci95),
                (y.sweep_value, &y.policy, y.mean_disc_error, y.ci95)
            );
        }
        let mut out = Vec::new();
        write_rows(&mut out, &a).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(
            "sweep_axis,sweep_value,policy,mean_disc_error,ci95,n_seeds,n_episodes,wall_ms\n"
        ));
        assert!(text.contains("p,1.0,MGF,"));
    }

    #[test]
    fn cyclic_needs_two_sources() {
        let mut cfg = small();
        cfg.policies.list = vec![PolicyKind::Cyclic];
        assert!(matches!(run(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn beta_rows_have_header() {
        let mut cfg = small();
        cfg.beta_trace.zetas = vec![0.3];
        cfg.beta_trace.seeds = 1;
        cfg.beta_trace.episodes = 3;
        let runs = beta_trace(&cfg).unwrap();
        let mut out = Vec::new();
        write_beta_rows(&mut out, &runs).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("zeta,seed,episode,source,beta,max_d\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 3);
        assert_eq!(median_first_below(&runs, 0.3, -1.0, 3), Some(3.0));
    }
}
