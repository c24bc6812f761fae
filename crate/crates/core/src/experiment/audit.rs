//! Inequality and oracle audits on small instances.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, PenaltyKind, SweepAxis};
use super::runner::penalty_tables;
use crate::error::Result;
use crate::info_measures::epsilon_mn;
use crate::penalty::{
    check_lower_bound, JointCost, JointPenalty, LowerBoundReport, SeparableCost, TabulatedCost,
};
use crate::relaxed_mdp::{
    cyclic_search, evaluate_joint_policy, joint_average_cost, joint_discounted, ViOptions,
};
use crate::signal::GaussMarkovModel;

/// Lower-bound audit of `f_m ≤ g_m ≤ f_m + 2 max ε²` at one `p`.
#[derive(Debug, Clone)]
pub struct LowerBoundAudit {
    pub p: f64,
    pub report: LowerBoundReport,
    /// At `p = 0` the gap must vanish; this is `max |g − f|` then.
    pub zero_gap: Option<f64>,
}

impl LowerBoundAudit {
    pub fn passed(&self) -> bool {
        self.report.passed() && self.zero_gap.is_none_or(|g| g <= self.report.tolerance)
    }
}

/// One cycle-versus-oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicCase {
    pub label: String,
    pub cyclic: f64,
    pub oracle: f64,
    pub tau: (usize, usize),
    pub touches_cap: bool,
}

impl CyclicCase {
    pub fn error(&self) -> f64 {
        (self.cyclic - self.oracle).abs()
    }
}

#[derive(Debug, Clone)]
pub struct CyclicAudit {
    pub cases: Vec<CyclicCase>,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl CyclicAudit {
    pub fn max_error(&self) -> f64 {
        self.cases.iter().map(CyclicCase::error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.error() <= self.tolerance)
    }
}

/// Optimality gap of the policy that is optimal for the separable
/// approximation, measured on the exact joint penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct GapAudit {
    pub p: f64,
    /// `max_s V_{π_f}(s) − V_opt(s)`.
    pub gap: f64,
    /// `(2 / (1 − γ)) Σ_m max_n ε²_{m,n}`.
    pub bound: f64,
    pub tolerance: f64,
}

impl GapAudit {
    pub fn passed(&self) -> bool {
        self.gap >= -self.tolerance && self.gap <= self.bound + self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub lower_bound: Vec<LowerBoundAudit>,
    pub cyclic: CyclicAudit,
    pub gap: Vec<GapAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.lower_bound.iter().all(LowerBoundAudit::passed)
            && self.cyclic.passed()
            && self.gap.iter().all(GapAudit::passed)
    }

    pub fn render(&self) -> String {
        let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut s = String::new();
        let _ = writeln!(s, "# lower bound: f_m <= g_m <= f_m + 2 max eps^2");
        for a in &self.lower_bound {
            let r = &a.report;
            let min_gap = r
                .sources
                .iter()
                .map(|x| x.min_gap)
                .fold(f64::INFINITY, f64::min);
            let slack = r
                .sources
                .iter()
                .map(|x| 2.0 * x.max_epsilon_squared - x.max_gap)
                .fold(f64::INFINITY, f64::min);
            let _ = writeln!(
                s,
                "{} p={} min_gap={:.3e} min_slack={:.3e}",
                mark(a.passed()),
                a.p,
                min_gap,
                slack
            );
            if let Some(z) = a.zero_gap {
                let _ = writeln!(s, "     max|gap| at p=0: {z:.3e}");
            }
            for (m, ages, gap) in &r.counterexamples {
                let _ = writeln!(
                    s,
                    "     counterexample: target {m} ages {ages:?} gap {gap:.6e}"
                );
            }
        }
        let c = &self.cyclic;
        let _ = writeln!(s, "# cyclic search vs relative value iteration");
        let _ = writeln!(
            s,
            "{} {} cases, max |diff| = {:.3e}, {:.2}s",
            mark(c.passed()),
            c.cases.len(),
            c.max_error(),
            c.elapsed.as_secs_f64()
        );
        for case in c
            .cases
            .iter()
            .filter(|x| x.error() > c.tolerance || x.touches_cap)
        {
            let _ = writeln!(
                s,
                "     {}: cyclic {:.9} tau {:?} oracle {:.9}{}",
                case.label,
                case.cyclic,
                case.tau,
                case.oracle,
                if case.touches_cap {
                    " (cycle touches search cap)"
                } else {
                    ""
                }
            );
        }
        let _ = writeln!(s, "# approximation gap on two-source instances");
        for g in &self.gap {
            let _ = writeln!(
                s,
                "{} p={} gap={:.6e} bound={:.6e}",
                mark(g.passed()),
                g.p,
                g.gap,
                g.bound
            );
        }
        let _ = writeln!(s, "overall: {}", mark(self.passed()));
        s
    }
}

/// Models for the configured `p` grid; a custom piggyback matrix yields
/// only the base model.
fn p_models(cfg: &ExperimentConfig) -> Result<Vec<(f64, GaussMarkovModel)>> {
    if cfg.model.piggyback.is_some() {
        return Ok(vec![(cfg.model.p, cfg.base_model()?)]);
    }
    cfg.audit
        .p_values
        .iter()
        .map(|&p| Ok((p, cfg.point(SweepAxis::P, p)?.model)))
        .collect()
}

pub fn lower_bound_audit(cfg: &ExperimentConfig) -> Result<Vec<LowerBoundAudit>> {
    let a = &cfg.audit;
    p_models(cfg)?
        .into_iter()
        .map(|(p, model)| {
            let tables = penalty_tables(&model, a.grid_bound, PenaltyKind::ModelDerived)?;
            let joint = JointPenalty::new(model)?;
            let report = check_lower_bound(&joint, &tables, a.grid_bound, a.tolerance)?;
            let zero_gap = (p == 0.0).then(|| {
                report
                    .sources
                    .iter()
                    .map(|x| x.min_gap.abs().max(x.max_gap.abs()))
                    .fold(0.0, f64::max)
            });
            Ok(LowerBoundAudit {
                p,
                report,
                zero_gap,
            })
        })
        .collect()
}

/// A random two-source cost, nondecreasing in both ages.
pub fn random_monotone_instance(rng: &mut impl Rng, delta_bound: usize) -> Result<TabulatedCost> {
    let mut inc = || -> Vec<f64> {
        let mut acc = 0.0;
        (0..delta_bound)
            .map(|_| {
                acc += rng.random::<f64>();
                acc
            })
            .collect()
    };
    let own = [inc(), inc()];
    let cross = [inc(), inc()];
    let w: [f64; 2] = [rng.random(), rng.random()];
    TabulatedCost::from_fn(2, delta_bound, |m, ages| {
        let other = 1 - m;
        own[m][ages[m] - 1] + w[m] * cross[m][ages[other] - 1].min(own[m][ages[m] - 1])
    })
}

fn pair_model(cfg: &ExperimentConfig, p: f64) -> Result<GaussMarkovModel> {
    GaussMarkovModel::default_model(&cfg.audit.pair_a_squared, p)
}

pub fn cyclic_audit(cfg: &ExperimentConfig) -> Result<CyclicAudit> {
    let a = &cfg.audit;
    let start = Instant::now();
    let opts = ViOptions {
        tol: 1e-12,
        max_sweeps: 2_000_000,
    };
    let cap = cfg.policies.cyclic.cap;
    let mut cases = Vec::new();
    let mut check = |label: String, g: &dyn JointCost, db: usize| -> Result<()> {
        let cyc = cyclic_search(g, db, cap)?;
        let oracle = joint_average_cost(g, db, 1, opts)?;
        cases.push(CyclicCase {
            label,
            cyclic: cyc.l_opt,
            oracle: oracle.gain,
            tau: (cyc.tau1, cyc.tau2),
            touches_cap: cyc.touches_cap,
        });
        Ok(())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for i in 0..a.cyclic_instances {
        let g = random_monotone_instance(&mut rng, a.cyclic_delta_bound)?;
        check(format!("random instance {i}"), &g, a.cyclic_delta_bound)?;
    }
    for &p in &a.p_values {
        let g = JointPenalty::new(pair_model(cfg, p)?)?;
        let table = TabulatedCost::from_fn(2, a.cyclic_delta_bound, |m, ages| g.cost(m, ages))?;
        check(
            format!("two-source model p={p}"),
            &table,
            a.cyclic_delta_bound,
        )?;
    }
    Ok(CyclicAudit {
        cases,
        tolerance: a.cyclic_tolerance,
        elapsed: start.elapsed(),
    })
}

pub fn gap_audit(cfg: &ExperimentConfig) -> Result<Vec<GapAudit>> {
    let a = &cfg.audit;
    let gamma = cfg.sim.gamma;
    let db = a.joint_delta_bound;
    let opts = ViOptions {
        tol: 1e-11,
        max_sweeps: 1_000_000,
    };
    a.p_values
        .iter()
        .map(|&p| {
            let model = pair_model(cfg, p)?;
            let joint = JointPenalty::new(model.clone())?;
            let g = TabulatedCost::from_fn(2, db, |m, ages| joint.cost(m, ages))?;
            let f = SeparableCost {
                tables: penalty_tables(&model, db, PenaltyKind::ModelDerived)?,
            };
            let opt = joint_discounted(&g, db, 1, gamma, opts)?;
            let approx = joint_discounted(&f, db, 1, gamma, opts)?;
            let v_f = evaluate_joint_policy(&g, &approx.space, &approx.policy, gamma, opts)?;
            let gap = v_f
                .iter()
                .zip(&opt.values)
                .map(|(x, y)| x - y)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut eps_sum = 0.0;
            for m in 0..2 {
                eps_sum += epsilon_mn(&model, m, 1 - m, db)?.squared;
            }
            Ok(GapAudit {
                p,
                gap,
                bound: 2.0 / (1.0 - gamma) * eps_sum,
                tolerance: a.gap_tolerance,
            })
        })
        .collect()
}

pub fn audit(cfg: &ExperimentConfig) -> Result<AuditReport> {
    Ok(AuditReport {
        lower_bound: lower_bound_audit(cfg)?,
        cyclic: cyclic_audit(cfg)?,
        gap: gap_audit(cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_audit_passes() {
        let cfg = ExperimentConfig::from_toml(
            "[model]\nnum_sources = 3\n[audit]\np_values = [0.0, 0.6]\ngrid_bound = 12\njoint_delta_bound = 10\ncyclic_instances = 5\ncyclic_delta_bound = 8\n",
        )
        .unwrap();
        let rep = audit(&cfg).unwrap();
        assert!(rep.passed(), "{}", rep.render());
        assert_eq!(rep.lower_bound[0].zero_gap, Some(0.0));
        assert!(rep.gap[0].gap.abs() < 1e-6);
        assert!(rep.render().ends_with("overall: PASS\n"));
    }

    #[test]
    fn random_instances_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_monotone_instance(&mut rng, 6).unwrap();
        for m in 0..2 {
            for i in 1..=6 {
                for j in 1..6 {
                    assert!(g.cost(m, &[i, j]) <= g.cost(m, &[i, j + 1]));
                    assert!(g.cost(m, &[j, i]) <= g.cost(m, &[j + 1, i]));
                }
            }
        }
    }
}
