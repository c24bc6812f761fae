//! Monte-Carlo checks of the penalty tables and ε against simulated signals.

use corrsched_core::info_measures::epsilon_mn;
use corrsched_core::penalty::{
    build_f_table, empirical_table, f_closed_form, PenaltyMode, StateDataset, TruncationConfig,
};
use corrsched_core::signal::{emit_update, initial_state, step, stream_rng, SignalState, Stream};
use corrsched_core::GaussMarkovModel;

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn closed_form_matches_simulated_prediction_error() {
    for a2 in [0.7, 0.9, 1.0] {
        let model = GaussMarkovModel::default_model(&[a2], 0.0).unwrap();
        let a = model.ar_coeff(0);
        let mut rng = stream_rng(21, Stream::Noise);
        let mut errors: Vec<Vec<f64>> = vec![Vec::new(); 10];
        for _ in 0..20_000 {
            let start = initial_state(&model, 0, &mut rng);
            let mut s = start.clone();
            for d in 1..=10 {
                s = step(&model, &s, &mut rng).unwrap();
                errors[d - 1].push((s.states[0] - a.powi(d as i32) * start.states[0]).powi(2));
            }
        }
        for (d, e) in (1..=10).zip(&errors) {
            let (mean, se) = mean_and_se(e);
            let expected = f_closed_form(a, 1.0, d);
            assert!(
                (mean - expected).abs() < 3.0 * se,
                "a²={a2} δ={d}: {mean} vs {expected} (se {se})"
            );
        }
    }
}

#[test]
fn model_derived_penalty_matches_packet_conditioning() {
    let model = GaussMarkovModel::default_model(&[0.9, 0.9], 0.6).unwrap();
    let table = build_f_table(
        &model,
        1,
        TruncationConfig::new(10).unwrap(),
        PenaltyMode::ModelDerived,
    )
    .unwrap();
    assert!((table.get(3) - 1.684).abs() < 1e-12, "{}", table.get(3));

    let a = model.ar_coeff(1);
    let mut noise = stream_rng(5, Stream::Noise);
    let mut pig = stream_rng(5, Stream::Piggyback);
    let delta = 3;
    let mut errors = Vec::new();
    for _ in 0..100_000 {
        let start = initial_state(&model, 0, &mut noise);
        let mut s: SignalState = start.clone();
        for _ in 0..delta - 1 {
            s = step(&model, &s, &mut noise).unwrap();
        }
        // The carrier's packet from the previous slot, then the target slot.
        let packet = emit_update(&model, &s, 0, &mut pig);
        let next = step(&model, &s, &mut noise).unwrap();
        let estimate = match packet.content(1) {
            Some(z) => a * z,
            None => a.powi(delta as i32) * start.states[1],
        };
        errors.push((next.states[1] - estimate).powi(2));
    }
    let (mean, se) = mean_and_se(&errors);
    assert!(
        (mean - table.get(delta)).abs() < 3.0 * se,
        "{mean} vs {} (se {se})",
        table.get(delta)
    );
}

#[test]
fn epsilon_with_certain_piggyback() {
    let model = GaussMarkovModel::default_model(&[0.9, 0.9], 1.0).unwrap();
    let eps = epsilon_mn(&model, 1, 0, 50).unwrap();
    let oracle = (1..=50)
        .map(|d| (0..d).map(|k| 0.9f64.powi(k)).sum::<f64>() - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        (eps.squared - oracle).abs() < 1e-10,
        "{} vs {oracle}",
        eps.squared
    );
    assert!((eps.value - oracle.sqrt()).abs() < 1e-10);

    let none = GaussMarkovModel::default_model(&[0.9, 0.9], 0.0).unwrap();
    assert_eq!(epsilon_mn(&none, 1, 0, 20).unwrap().squared, 0.0);
}

#[test]
fn empirical_table_approaches_closed_form() {
    let model = GaussMarkovModel::default_model(&[0.8, 0.6], 0.0).unwrap();
    let mut rng = stream_rng(9, Stream::Noise);
    let mut s = initial_state(&model, 0, &mut rng);
    let mut rows = Vec::with_capacity(200_000);
    for _ in 0..200_000 {
        rows.push(s.states.clone());
        s = step(&model, &s, &mut rng).unwrap();
    }
    let data = StateDataset::new(rows).unwrap();
    for m in 0..2 {
        let emp = empirical_table(&data, m, 8, 100).unwrap();
        let closed = build_f_table(
            &model,
            m,
            TruncationConfig::new(8).unwrap(),
            PenaltyMode::ClosedForm,
        )
        .unwrap();
        for d in 1..=8 {
            let rel = (emp.get(d) - closed.get(d)).abs() / closed.get(d);
            assert!(
                rel < 0.02,
                "source {m} δ={d}: {} vs {}",
                emp.get(d),
                closed.get(d)
            );
        }
    }
    assert!(empirical_table(&data, 0, 8, 10_000_000).is_err());
}
