//! Closed-loop checks of the simulator and schedulers against independent
//! bookkeeping and analytic values.

use corrsched_core::online_learning::{CountMode, EstimatorConfig, OnlineConfig, OnlineMgf};
use corrsched_core::penalty::{
    build_f_table, JointCost, JointPenalty, PenaltyMode, PenaltyTable, Provenance, TruncationConfig,
};
use corrsched_core::policies::{
    Cyclic2, LambdaMode, Maf, Mgf, RandomPolicy, RoundRobin, Scheduler, TieBreak,
};
use corrsched_core::relaxed_mdp::cyclic_search;
use corrsched_core::sim_engine::{SimConfig, Simulation};
use corrsched_core::GaussMarkovModel;

fn cfg(len: usize, delta_bound: usize) -> SimConfig {
    SimConfig {
        gamma: 0.7,
        delta_bound,
        episode_len: len,
        record_slots: true,
    }
}

fn tables(model: &GaussMarkovModel, db: usize) -> Vec<PenaltyTable> {
    (0..model.num_sources())
        .map(|m| {
            build_f_table(
                model,
                m,
                TruncationConfig::new(db).unwrap(),
                PenaltyMode::ModelDerived,
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn effective_age_follows_packet_recursion() {
    let model = GaussMarkovModel::default_model(&[0.9, 0.9, 0.7, 0.7], 0.6).unwrap();
    let mut policy = RandomPolicy::uniform(4, 1).unwrap();
    let mut sim = Simulation::new(model, cfg(300, 500), 11).unwrap();
    for _ in 0..3 {
        let log = sim.run_episode(&mut policy).unwrap();
        let recs = log.records.unwrap();
        let mut e = vec![1usize; 4];
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.effective_ages, e, "slot {i}");
            for n in 0..4 {
                assert!(r.effective_ages[n] <= r.ages[n]);
            }
            let carried: &[usize] = r
                .chosen
                .iter()
                .position(|&c| c == 0)
                .map_or(&[], |k| &r.piggyback[k]);
            let source0 = r.chosen.contains(&0);
            for n in 0..4 {
                e[n] = if r.chosen.contains(&n) {
                    1
                } else if source0 {
                    // A new packet from the carrier replaces the old one, so
                    // content it lacks falls back to the source's own age.
                    if carried.contains(&n) {
                        1
                    } else {
                        r.ages[n] + 1
                    }
                } else {
                    e[n] + 1
                };
            }
        }
    }
}

#[test]
fn single_source_loss_is_one_step_error() {
    let model = GaussMarkovModel::default_model(&[0.9], 0.0).unwrap();
    let mut policy = Maf::new(1, TieBreak::LowestIndex);
    let mut sim = Simulation::new(model, cfg(1000, 20), 5).unwrap();
    let mut losses = Vec::new();
    for _ in 0..10 {
        let log = sim.run_episode(&mut policy).unwrap();
        for r in log.records.unwrap() {
            assert_eq!(r.ages, vec![1]);
            losses.push(r.losses[0]);
        }
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    // Squared standard normal: variance 2.
    assert!((mean - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "mean {mean}");
}

#[test]
fn round_robin_losses_match_joint_penalty() {
    let model = GaussMarkovModel::default_model(&[0.9, 0.7], 0.6).unwrap();
    let g = JointPenalty::new(model.clone()).unwrap();
    let mut policy = RoundRobin::new(2, 1).unwrap();
    let mut sim = Simulation::new(model, cfg(200, 20), 3).unwrap();
    let mut bins: std::collections::BTreeMap<(usize, Vec<usize>), Vec<f64>> = Default::default();
    for _ in 0..100 {
        let log = sim.run_episode(&mut policy).unwrap();
        for r in log.records.unwrap().into_iter().skip(2) {
            for m in 0..2 {
                bins.entry((m, r.ages.clone()))
                    .or_default()
                    .push(r.losses[m]);
            }
        }
    }
    for ((m, ages), xs) in bins {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = g.cost(m, &ages);
        assert!(
            (mean - expected).abs() < 3.0 * (var / n).sqrt(),
            "target {m} ages {ages:?}: {mean} vs {expected}"
        );
    }
}

#[test]
fn mgf_reduces_to_maf_for_identical_sources() {
    let model = GaussMarkovModel::default_model(&[0.8; 4], 0.0).unwrap();
    let t = tables(&model, 60);
    assert!(t[0].values().windows(2).all(|w| w[0] < w[1]));
    let mut mgf = Mgf::with_lambda(
        t,
        1,
        0.7,
        1.0,
        TieBreak::LowestIndex,
        LambdaMode::Fixed,
        0.0,
    )
    .unwrap();
    let mut maf = Maf::new(1, TieBreak::LowestIndex);
    let a = Simulation::new(model.clone(), cfg(1000, 60), 9)
        .unwrap()
        .run_episode(&mut mgf)
        .unwrap();
    let b = Simulation::new(model, cfg(1000, 60), 9)
        .unwrap()
        .run_episode(&mut maf)
        .unwrap();
    let da: Vec<_> = a.records.unwrap().into_iter().map(|r| r.chosen).collect();
    let db: Vec<_> = b.records.unwrap().into_iter().map(|r| r.chosen).collect();
    assert_eq!(da, db);
}

#[test]
fn mgf_with_flat_penalties_serves_lowest_index() {
    let flat: Vec<PenaltyTable> = (0..3)
        .map(|m| PenaltyTable::new(m, vec![1.0; 20], Provenance::External).unwrap())
        .collect();
    let model = GaussMarkovModel::default_model(&[0.9, 0.9, 0.9], 0.3).unwrap();
    let mut mgf = Mgf::new(flat, 1, 0.7, 1.0, TieBreak::LowestIndex, LambdaMode::Fixed).unwrap();
    let log = Simulation::new(model, cfg(100, 20), 1)
        .unwrap()
        .run_episode(&mut mgf)
        .unwrap();
    assert_eq!(log.schedule_counts, vec![100, 0, 0]);
}

#[test]
fn maf_visits_every_source_once_per_round() {
    let model = GaussMarkovModel::default_model(&[0.9; 5], 0.5).unwrap();
    let mut maf = Maf::new(1, TieBreak::LowestIndex);
    let log = Simulation::new(model, cfg(5, 20), 1)
        .unwrap()
        .run_episode(&mut maf)
        .unwrap();
    let mut order: Vec<usize> = log
        .records
        .unwrap()
        .into_iter()
        .map(|r| r.chosen[0])
        .collect();
    order.sort_unstable();
    assert_eq!(order, vec![0, 1, 2, 3, 4]);
}

#[test]
fn mgf_favours_the_carrier_when_it_carries_everything() {
    let a2: Vec<f64> = (0..10).map(|i| if i < 5 { 0.9 } else { 0.7 }).collect();
    let model = GaussMarkovModel::default_model(&a2, 1.0).unwrap();
    let mut mgf = Mgf::new(
        tables(&model, 50),
        1,
        0.7,
        1.0,
        TieBreak::LowestIndex,
        LambdaMode::Subgradient,
    )
    .unwrap();
    let mut sim = Simulation::new(model, cfg(100, 50), 2).unwrap();
    let mut counts = [0u64; 2];
    for _ in 0..10 {
        let log = sim.run_episode(&mut mgf).unwrap();
        counts[0] += log.schedule_counts[0];
        counts[1] += 100;
    }
    assert!(counts[0] as f64 >= 0.5 * counts[1] as f64, "{counts:?}");
}

#[test]
fn random_policy_frequency() {
    let model = GaussMarkovModel::default_model(&[0.5; 4], 0.0).unwrap();
    let mut pol = RandomPolicy::uniform(4, 1).unwrap();
    let mut sim = Simulation::new(
        model,
        SimConfig {
            record_slots: false,
            ..cfg(1000, 20)
        },
        4,
    )
    .unwrap();
    let mut counts = [0u64; 4];
    for _ in 0..100 {
        let log = sim.run_episode(&mut pol).unwrap();
        for (c, n) in counts.iter_mut().zip(&log.schedule_counts) {
            *c += n;
        }
    }
    let n = 100_000.0;
    let sd = (n * 0.25 * 0.75f64).sqrt();
    for c in counts {
        assert!((c as f64 - n / 4.0).abs() < 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn lagrange_multiplier_settles() {
    let a2: Vec<f64> = (0..10).map(|i| if i < 5 { 0.9 } else { 0.7 }).collect();
    let model = GaussMarkovModel::default_model(&a2, 0.6).unwrap();
    let mut mgf = Mgf::new(
        tables(&model, 50),
        1,
        0.7,
        1.0,
        TieBreak::LowestIndex,
        LambdaMode::Subgradient,
    )
    .unwrap();
    let mut sim = Simulation::new(
        model,
        SimConfig {
            record_slots: false,
            ..cfg(100, 50)
        },
        8,
    )
    .unwrap();
    for _ in 0..200 {
        sim.run_episode(&mut mgf).unwrap();
    }
    let hist = &mgf.lagrange().unwrap().history;
    assert_eq!(hist.len(), 201);
    let tail = &hist[150..];
    let spread = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().copied().fold(f64::INFINITY, f64::min);
    let early = &hist[10..60];
    let early_spread = early.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - early.iter().copied().fold(f64::INFINITY, f64::min);
    // Diminishing steps: late oscillation is a fraction of the early one.
    assert!(
        spread < 0.25 * early_spread,
        "tail spread {spread}, early spread {early_spread}"
    );
}

fn online(zeta: f64, model: &GaussMarkovModel) -> OnlineMgf {
    let cap = 4.0
        * (0..model.num_sources())
            .map(|m| model.stationary_variance(m).unwrap())
            .fold(0.0, f64::max);
    let est = EstimatorConfig {
        delta_bound: 50,
        eta: 0.05,
        zeta,
        loss_cap: Some(cap),
        radius_scale: cap,
        count_mode: CountMode::PerEpisode,
        monotone: false,
    };
    let oc = OnlineConfig {
        estimator: est,
        channels: 1,
        gamma: 0.7,
        theta: 1.0,
        lambda_mode: LambdaMode::Subgradient,
        tiebreak: TieBreak::LowestIndex,
    };
    OnlineMgf::new(model.num_sources(), oc).unwrap()
}

#[test]
fn online_mgf_starts_as_maf_and_its_values_settle() {
    let model = GaussMarkovModel::default_model(&[0.9, 0.9, 0.9, 0.7, 0.7, 0.7], 0.6).unwrap();
    let mut pol = online(0.3, &model);
    let mut maf = Maf::new(1, TieBreak::LowestIndex);
    let a = Simulation::new(model.clone(), cfg(100, 50), 6)
        .unwrap()
        .run_episode(&mut pol)
        .unwrap();
    let b = Simulation::new(model.clone(), cfg(100, 50), 6)
        .unwrap()
        .run_episode(&mut maf)
        .unwrap();
    let chosen = |l: corrsched_core::sim_engine::EpisodeLog| {
        l.records
            .unwrap()
            .into_iter()
            .map(|r| r.chosen)
            .collect::<Vec<_>>()
    };
    assert_eq!(chosen(a), chosen(b));

    let mut pol = online(0.3, &model);
    let mut sim = Simulation::new(
        model,
        SimConfig {
            record_slots: false,
            ..cfg(100, 50)
        },
        6,
    )
    .unwrap();
    for _ in 0..200 {
        sim.run_episode(&mut pol).unwrap();
    }
    let last = pol
        .trace()
        .entries
        .iter()
        .filter(|e| e.episode == 199)
        .map(|e| e.jtilde_change.unwrap())
        .fold(0.0, f64::max);
    assert!(last < 1e-3, "final J̃ change {last}");
}

#[test]
fn cyclic_schedule_attains_searched_average() {
    let model = GaussMarkovModel::default_model(&[0.9, 0.7], 0.6).unwrap();
    let g = JointPenalty::new(model.clone()).unwrap();
    let db = 30;
    let res = cyclic_search(&g, db, 200).unwrap();
    let mut pol = Cyclic2::new(&res, 2).unwrap();
    let period = res.tau1 + res.tau2;
    let len = 50 * period + 2 * db;
    let log = Simulation::new(model, cfg(len, db), 1)
        .unwrap()
        .run_episode(&mut pol)
        .unwrap();
    let recs = log.records.unwrap();
    // Skip the transient, then average g over whole periods.
    let window = &recs[recs.len() - 40 * period..];
    let avg = window.iter().map(|r| g.total(&r.ages)).sum::<f64>() / window.len() as f64;
    assert!((avg - res.l_opt).abs() < 1e-6, "{avg} vs {}", res.l_opt);
}

#[test]
fn discounted_sum_is_consistent_for_every_policy() {
    let model = GaussMarkovModel::default_model(&[0.9, 0.8, 0.7], 0.4).unwrap();
    let mut policies: Vec<Box<dyn Scheduler>> = vec![
        Box::new(Maf::new(1, TieBreak::Random)),
        Box::new(RandomPolicy::uniform(3, 2).unwrap()),
        Box::new(
            Mgf::new(
                tables(&model, 20),
                1,
                0.7,
                1.0,
                TieBreak::LowestIndex,
                LambdaMode::Subgradient,
            )
            .unwrap(),
        ),
    ];
    for p in policies.iter_mut() {
        let log = Simulation::new(model.clone(), cfg(80, 20), 12)
            .unwrap()
            .run_episode(p.as_mut())
            .unwrap();
        let again = log.recompute_discounted(0.7).unwrap();
        assert!((again - log.discounted_loss).abs() <= 1e-12 * again.max(1.0));
        assert_eq!(log.records.unwrap().len(), 80);
    }
}
