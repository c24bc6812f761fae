//! Conditional prediction errors (L-entropies) for the inference targets.
//!
//! With quadratic loss the L-conditional entropy of a target given some
//! observations is the minimum mean-squared error of predicting it, which is
//! available in closed form for the Gaussian sources of [`crate::signal`].
//! The empirical estimators work on arbitrary samples.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::signal::GaussMarkovModel;

/// Largest number of piggyback indicator combinations enumerated exactly.
const MAX_ENUMERATED_PAIRS: usize = 16;
/// Largest AoI grid searched exhaustively by [`epsilon_mn`].
const MAX_GRID_POINTS: u128 = 1_000_000;

/// Loss function used by the empirical estimators.
#[derive(Clone)]
pub enum LossSpec {
    /// Squared error; `cap` clips each per-sample loss when set.
    Quadratic { cap: Option<f64> },
    /// A user loss `loss(y, a)` minimised over a finite action set.
    Finite {
        actions: Vec<f64>,
        loss: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        bound: Option<f64>,
    },
}

impl LossSpec {
    pub fn quadratic() -> Self {
        LossSpec::Quadratic { cap: None }
    }

    pub fn capped_quadratic(cap: f64) -> Result<Self> {
        if !(cap > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss cap must be positive, got {cap}"
            )));
        }
        Ok(LossSpec::Quadratic { cap: Some(cap) })
    }

    /// The loss bound `B`, or `None` when the loss is unbounded.
    pub fn bound(&self) -> Option<f64> {
        match self {
            LossSpec::Quadratic { cap } => *cap,
            LossSpec::Finite { bound, .. } => *bound,
        }
    }
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Quadratic { cap } => f.debug_struct("Quadratic").field("cap", cap).finish(),
            LossSpec::Finite { actions, bound, .. } => f
                .debug_struct("Finite")
                .field("actions", actions)
                .field("bound", bound)
                .finish_non_exhaustive(),
        }
    }
}

/// For each source, the age of the freshest observation of its state that the
/// estimator holds, or `None` when it holds nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditioningSet {
    ages: Vec<Option<usize>>,
}

impl ConditioningSet {
    pub fn empty(num_sources: usize) -> Self {
        Self {
            ages: vec![None; num_sources],
        }
    }

    pub fn from_ages(ages: Vec<Option<usize>>) -> Result<Self> {
        if ages.iter().flatten().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("content ages start at 1".into()));
        }
        Ok(Self { ages })
    }

    /// Adds an observation of `source` at `age`, keeping the fresher one.
    pub fn with(mut self, source: usize, age: usize) -> Self {
        assert!(age >= 1, "content ages start at 1");
        let slot = &mut self.ages[source];
        *slot = Some(slot.map_or(age, |d| d.min(age)));
        self
    }

    pub fn age(&self, source: usize) -> Option<usize> {
        self.ages[source]
    }

    pub fn ages(&self) -> &[Option<usize>] {
        &self.ages
    }
}

/// Prediction error of an AR(1) state from an observation `d` slots old:
/// `q * sum_{k<d} a^(2k)`, summed term by term.
pub fn prediction_error(a: f64, q: f64, d: usize) -> f64 {
    let a2 = a * a;
    let mut term = q;
    let mut total = 0.0;
    for _ in 0..d {
        total += term;
        term *= a2;
    }
    total
}

/// `Cov(Z[i, t-s], Z[j, t-r])` under the stationary law.
pub fn lagged_covariance(
    model: &GaussMarkovModel,
    i: usize,
    s: usize,
    j: usize,
    r: usize,
) -> Result<f64> {
    let (ai, aj) = (model.ar_coeff(i), model.ar_coeff(j));
    let denom = 1.0 - ai * aj;
    if denom <= 0.0 {
        let src = if ai.abs() >= 1.0 { i } else { j };
        return Err(Error::Nonstationary {
            src,
            a_squared: model.ar_coeff(src).powi(2),
        });
    }
    let gamma = model.noise_cov()[(i, j)] / denom;
    Ok(if s <= r {
        ai.powi((r - s) as i32) * gamma
    } else {
        aj.powi((s - r) as i32) * gamma
    })
}

/// Linear MMSE predictor of `Z[m, t]` from observations `(source, age)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub weights: Vec<f64>,
    pub variance: f64,
}

/// Conditions `Z[m, t]` on jointly Gaussian observations `Z[n, t - age]`.
/// Requires every involved source to be stationary.
pub fn gaussian_conditional(
    model: &GaussMarkovModel,
    m: usize,
    obs: &[(usize, usize)],
) -> Result<GaussianConditional> {
    let prior = lagged_covariance(model, m, 0, m, 0)?;
    if obs.is_empty() {
        return Ok(GaussianConditional {
            weights: Vec::new(),
            variance: prior,
        });
    }
    let k = obs.len();
    let mut sigma = DMatrix::zeros(k, k);
    let mut cross = DVector::zeros(k);
    for (a, &(i, s)) in obs.iter().enumerate() {
        cross[a] = lagged_covariance(model, m, 0, i, s)?;
        for (b, &(j, r)) in obs.iter().enumerate().skip(a) {
            let c = lagged_covariance(model, i, s, j, r)?;
            sigma[(a, b)] = c;
            sigma[(b, a)] = c;
        }
    }
    // Pseudo-inverse tolerates duplicated or perfectly dependent observations.
    let svd = sigma.svd(true, true);
    let weights = svd
        .solve(&cross, 1e-12 * prior.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Singular(e.to_string()))?;
    let variance = (prior - weights.dot(&cross)).max(0.0);
    Ok(GaussianConditional {
        weights: weights.iter().copied().collect(),
        variance,
    })
}

/// Minimum mean-squared error of predicting `Z[m, t]` from the freshest
/// observation of each source listed in `cond`.
///
/// With independent noise only source `m`'s own content matters and the
/// error is [`prediction_error`] at that age. Correlated noise uses the
/// stationary Gaussian conditional.
pub fn h_l_quadratic_gaussian(
    model: &GaussMarkovModel,
    m: usize,
    cond: &ConditioningSet,
) -> Result<f64> {
    if model.is_noise_diagonal() {
        return match cond.age(m) {
            Some(d) => Ok(prediction_error(model.ar_coeff(m), model.noise_var(m), d)),
            None => model
                .stationary_variance(m)
                .map_err(|_| Error::UnboundedEntropy { src: m }),
        };
    }
    let obs: Vec<(usize, usize)> = cond
        .ages()
        .iter()
        .enumerate()
        .filter_map(|(n, d)| d.map(|d| (n, d)))
        .collect();
    if obs.is_empty() && model.ar_coeff(m).abs() >= 1.0 {
        return Err(Error::UnboundedEntropy { src: m });
    }
    Ok(gaussian_conditional(model, m, &obs)?.variance)
}

/// Expected prediction error of `Z[m, t]` when the receiver holds the most
/// recent packet of every source, source `k`'s packet being `ages[k]` slots
/// old, averaged over which states those packets happened to piggyback.
pub fn h_l_retained(model: &GaussMarkovModel, m: usize, ages: &[usize]) -> Result<f64> {
    check_ages(model, ages)?;
    if model.is_noise_diagonal() {
        let (a, q) = (model.ar_coeff(m), model.noise_var(m));
        let mut carriers: Vec<(usize, f64)> = model
            .carriers_of(m)
            .filter(|&k| ages[k] < ages[m])
            .map(|k| (ages[k], model.piggyback_prob(m, k)))
            .collect();
        carriers.sort_by_key(|&(d, _)| d);
        let mut miss = 1.0;
        let mut total = 0.0;
        for (d, p) in carriers {
            total += miss * p * prediction_error(a, q, d);
            miss *= 1.0 - p;
        }
        return Ok(total + miss * prediction_error(a, q, ages[m]));
    }
    enumerate_retained(model, ages, |obs| {
        Ok(gaussian_conditional(model, m, obs)?.variance)
    })
}

/// Averages `eval` over all piggyback indicator outcomes of the retained
/// packets, passing the full observation list for each outcome.
fn enumerate_retained<F>(model: &GaussMarkovModel, ages: &[usize], mut eval: F) -> Result<f64>
where
    F: FnMut(&[(usize, usize)]) -> Result<f64>,
{
    let nsrc = model.num_sources();
    let mut sure = Vec::new();
    let mut uncertain = Vec::new();
    for k in 0..nsrc {
        sure.push((k, ages[k]));
        for n in 0..nsrc {
            if n == k {
                continue;
            }
            let p = model.piggyback_prob(n, k);
            if p >= 1.0 {
                sure.push((n, ages[k]));
            } else if p > 0.0 {
                uncertain.push((n, ages[k], p));
            }
        }
    }
    if uncertain.len() > MAX_ENUMERATED_PAIRS {
        return Err(Error::Unsupported(format!(
            "{} uncertain piggyback pairs exceed the enumeration limit {MAX_ENUMERATED_PAIRS}",
            uncertain.len()
        )));
    }
    let mut total = 0.0;
    for mask in 0u32..(1 << uncertain.len()) {
        let mut weight = 1.0;
        let mut obs = sure.clone();
        for (bit, &(n, d, p)) in uncertain.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                weight *= p;
                obs.push((n, d));
            } else {
                weight *= 1.0 - p;
            }
        }
        if weight == 0.0 {
            continue;
        }
        obs.sort_unstable();
        obs.dedup();
        total += weight * eval(&obs)?;
    }
    Ok(total)
}

fn check_ages(model: &GaussMarkovModel, ages: &[usize]) -> Result<()> {
    if ages.len() != model.num_sources() {
        return Err(Error::InvalidArgument(format!(
            "expected {} ages, got {}",
            model.num_sources(),
            ages.len()
        )));
    }
    if ages.contains(&0) {
        return Err(Error::InvalidArgument("AoI values start at 1".into()));
    }
    Ok(())
}

/// L-conditional mutual information between target `m` and a fresh packet of
/// source `n` generated one slot ago, given retained packets at `ages`.
pub fn cmi_fresh_update(
    model: &GaussMarkovModel,
    m: usize,
    n: usize,
    ages: &[usize],
) -> Result<f64> {
    check_ages(model, ages)?;
    let before = h_l_retained(model, m, ages)?;
    if model.is_noise_diagonal() {
        // A fresh packet from n helps target m only if it carries m's state,
        // and then it pins the error to the one-step value.
        if n == m {
            return Ok(before - prediction_error(model.ar_coeff(m), model.noise_var(m), 1));
        }
        let p = model.piggyback_prob(m, n);
        let fresh = prediction_error(model.ar_coeff(m), model.noise_var(m), 1);
        return Ok(p * (before - fresh));
    }
    // General noise: average over both the retained packets' and the fresh
    // packet's piggyback indicators.
    let nsrc = model.num_sources();
    let extra: Vec<(usize, f64)> = (0..nsrc)
        .filter(|&k| k != n)
        .map(|k| (k, model.piggyback_prob(k, n)))
        .filter(|&(_, p)| p > 0.0)
        .collect();
    let after = enumerate_retained(model, ages, |obs| {
        let mut acc = 0.0;
        let uncertain: Vec<(usize, f64)> =
            extra.iter().copied().filter(|&(_, p)| p < 1.0).collect();
        if uncertain.len() > MAX_ENUMERATED_PAIRS {
            return Err(Error::Unsupported(
                "too many piggyback pairs in fresh packet".into(),
            ));
        }
        for mask in 0u32..(1 << uncertain.len()) {
            let mut weight = 1.0;
            let mut all = obs.to_vec();
            all.push((n, 1));
            all.extend(
                extra
                    .iter()
                    .filter(|&&(_, p)| p >= 1.0)
                    .map(|&(k, _)| (k, 1)),
            );
            for (bit, &(k, p)) in uncertain.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    weight *= p;
                    all.push((k, 1));
                } else {
                    weight *= 1.0 - p;
                }
            }
            if weight == 0.0 {
                continue;
            }
            all.sort_unstable();
            all.dedup();
            acc += weight * gaussian_conditional(model, m, &all)?.variance;
        }
        Ok(acc)
    })?;
    Ok((before - after).max(0.0))
}

/// Result of [`epsilon_mn`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonReport {
    pub target: usize,
    pub source: usize,
    /// `ε²`: the largest conditional mutual information found on the grid.
    pub squared: f64,
    pub value: f64,
    pub argmax: Vec<usize>,
    pub delta_bound: usize,
    pub grid_points: u128,
    /// Whether the grid was searched exhaustively rather than at its
    /// all-stale corner.
    pub exhaustive: bool,
    /// Gap between the supremum over unbounded ages and the grid maximum
    /// (infinite for random-walk targets).
    pub truncation_error: f64,
}

/// `ε_{m,n}`: square root of the largest information a fresh packet of
/// source `n` adds about target `m` over the AoI grid `1..=delta_bound`.
pub fn epsilon_mn(
    model: &GaussMarkovModel,
    m: usize,
    n: usize,
    delta_bound: usize,
) -> Result<EpsilonReport> {
    let nsrc = model.num_sources();
    if m >= nsrc || n >= nsrc || m == n {
        return Err(Error::InvalidArgument(format!(
            "need distinct sources, got m={m}, n={n}"
        )));
    }
    if delta_bound < 1 {
        return Err(Error::InvalidArgument(
            "delta_bound must be at least 1".into(),
        ));
    }
    // Coordinates that can influence target m; the rest are held at 1.
    let coords: Vec<usize> = if model.is_noise_diagonal() {
        std::iter::once(m).chain(model.carriers_of(m)).collect()
    } else {
        (0..nsrc).collect()
    };
    let grid_points = (delta_bound as u128).saturating_pow(coords.len() as u32);
    let mut best = (f64::NEG_INFINITY, vec![1; nsrc]);
    let exhaustive = grid_points <= MAX_GRID_POINTS;
    if exhaustive {
        let mut ages = vec![1usize; nsrc];
        loop {
            let v = cmi_fresh_update(model, m, n, &ages)?;
            if v > best.0 {
                best = (v, ages.clone());
            }
            if !advance_grid(&mut ages, &coords, delta_bound) {
                break;
            }
        }
    } else {
        // Information is largest when everything retained is stalest.
        let ages = vec![delta_bound; nsrc];
        best = (cmi_fresh_update(model, m, n, &ages)?, ages);
    }
    let squared = best.0.max(0.0);
    let truncation_error = if model.is_noise_diagonal() {
        let p = model.piggyback_prob(m, n);
        if p == 0.0 {
            0.0
        } else {
            match model.stationary_variance(m) {
                Ok(s) => {
                    p * (s - prediction_error(model.ar_coeff(m), model.noise_var(m), delta_bound))
                }
                Err(_) => f64::INFINITY,
            }
        }
    } else {
        f64::NAN
    };
    Ok(EpsilonReport {
        target: m,
        source: n,
        squared,
        value: squared.sqrt(),
        argmax: best.1,
        delta_bound,
        grid_points,
        exhaustive,
        truncation_error,
    })
}

/// Odometer step over the listed coordinates; returns false after the last point.
pub(crate) fn advance_grid(ages: &mut [usize], coords: &[usize], bound: usize) -> bool {
    for &c in coords {
        if ages[c] < bound {
            ages[c] += 1;
            return true;
        }
        ages[c] = 1;
    }
    false
}

/// One conditioning sample: the target value, an exact-match bin key (AoI
/// values, piggyback indicators, ...) and continuous features observed.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub target: f64,
    pub key: Vec<i64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinEstimate {
    pub key: Vec<i64>,
    pub count: usize,
    /// Average loss of the best predictor within the bin.
    pub loss: f64,
}

/// Per-bin empirical conditional entropies.
///
/// For quadratic loss the best predictor in a bin is the least-squares affine
/// function of the features (the sample mean when there are none). For a
/// finite loss the best constant action is chosen and features are ignored.
pub fn h_l_empirical_bins(samples: &[Sample], loss: &LossSpec) -> Result<Vec<BinEstimate>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut bins: BTreeMap<&[i64], Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        bins.entry(s.key.as_slice()).or_default().push(s);
    }
    bins.into_iter()
        .map(|(key, members)| {
            let loss = match loss {
                LossSpec::Quadratic { cap } => quadratic_bin_loss(&members, *cap)?,
                LossSpec::Finite { actions, loss, .. } => {
                    finite_bin_loss(&members, actions, loss.as_ref())?
                }
            };
            Ok(BinEstimate {
                key: key.to_vec(),
                count: members.len(),
                loss,
            })
        })
        .collect()
}

/// Occupancy-weighted average of [`h_l_empirical_bins`].
pub fn h_l_empirical(samples: &[Sample], loss: &LossSpec) -> Result<f64> {
    let bins = h_l_empirical_bins(samples, loss)?;
    let total: usize = bins.iter().map(|b| b.count).sum();
    Ok(bins.iter().map(|b| b.loss * b.count as f64).sum::<f64>() / total as f64)
}

fn quadratic_bin_loss(members: &[&Sample], cap: Option<f64>) -> Result<f64> {
    let n = members.len();
    let k = members[0].features.len();
    if members.iter().any(|s| s.features.len() != k) {
        return Err(Error::InvalidArgument(
            "samples in one bin have different feature counts".into(),
        ));
    }
    let residuals: Vec<f64> = if k == 0 {
        let mean = members.iter().map(|s| s.target).sum::<f64>() / n as f64;
        members.iter().map(|s| s.target - mean).collect()
    } else {
        let x = DMatrix::from_fn(n, k + 1, |r, c| {
            if c == 0 {
                1.0
            } else {
                members[r].features[c - 1]
            }
        });
        let y = DVector::from_iterator(n, members.iter().map(|s| s.target));
        let beta = x
            .clone()
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| Error::Singular(e.to_string()))?;
        (y - x * beta).iter().copied().collect()
    };
    let clip = |l: f64| cap.map_or(l, |c| l.min(c));
    Ok(residuals.iter().map(|r| clip(r * r)).sum::<f64>() / n as f64)
}

fn finite_bin_loss(
    members: &[&Sample],
    actions: &[f64],
    loss: &(dyn Fn(f64, f64) -> f64 + Send + Sync),
) -> Result<f64> {
    if actions.is_empty() {
        return Err(Error::InvalidArgument(
            "finite loss needs at least one action".into(),
        ));
    }
    let n = members.len() as f64;
    Ok(actions
        .iter()
        .map(|&a| members.iter().map(|s| loss(s.target, a)).sum::<f64>() / n)
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_step_error_is_noise_variance() {
        assert_eq!(prediction_error(0.9f64.sqrt(), 1.0, 1), 1.0);
        assert_abs_diff_eq!(
            prediction_error(0.9f64.sqrt(), 1.0, 2),
            1.9,
            epsilon = 1e-12
        );
        assert_eq!(prediction_error(1.0, 1.0, 3), 3.0);
        assert_eq!(prediction_error(0.5, 2.0, 0), 0.0);
    }

    #[test]
    fn conditioning_absent_content() {
        let model = GaussMarkovModel::default_model(&[0.9, 1.0], 0.0).unwrap();
        let empty = ConditioningSet::empty(2);
        assert_abs_diff_eq!(
            h_l_quadratic_gaussian(&model, 0, &empty).unwrap(),
            10.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            h_l_quadratic_gaussian(&model, 1, &empty),
            Err(Error::UnboundedEntropy { src: 1 })
        ));
        let c = ConditioningSet::empty(2).with(1, 3);
        assert_eq!(h_l_quadratic_gaussian(&model, 1, &c).unwrap(), 3.0);
    }

    #[test]
    fn with_keeps_freshest() {
        let c = ConditioningSet::empty(3).with(0, 5).with(0, 2).with(0, 9);
        assert_eq!(c.age(0), Some(2));
        assert_eq!(c.age(1), None);
    }

    #[test]
    fn gaussian_conditional_diagonal_matches_closed_form() {
        let model = GaussMarkovModel::default_model(&[0.9, 0.7], 0.0).unwrap();
        for d in 1..8 {
            let g = gaussian_conditional(&model, 0, &[(0, d), (1, 1)]).unwrap();
            assert_abs_diff_eq!(
                g.variance,
                prediction_error(0.9f64.sqrt(), 1.0, d),
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(g.weights[0], 0.9f64.sqrt().powi(d as i32), epsilon = 1e-10);
            assert_abs_diff_eq!(g.weights[1], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn duplicate_observations_are_harmless() {
        let model = GaussMarkovModel::default_model(&[0.5], 0.0).unwrap();
        let g = gaussian_conditional(&model, 0, &[(0, 2), (0, 2)]).unwrap();
        assert_abs_diff_eq!(
            g.variance,
            prediction_error(0.5f64.sqrt(), 1.0, 2),
            epsilon = 1e-10
        );
    }

    #[test]
    fn retained_default_model_formula() {
        let p = 0.6;
        let model = GaussMarkovModel::default_model(&[0.9, 0.9, 0.7], p).unwrap();
        let v = |a2: f64, d| prediction_error(a2.sqrt(), 1.0, d);
        for d1 in 1..8 {
            for dm in 1..8 {
                for d3 in 1..4 {
                    let ages = [d1, dm, d3];
                    let g1 = h_l_retained(&model, 1, &ages).unwrap();
                    let want = p * v(0.9, d1.min(dm)) + (1.0 - p) * v(0.9, dm);
                    assert_abs_diff_eq!(g1, want, epsilon = 1e-12);
                    let g0 = h_l_retained(&model, 0, &ages).unwrap();
                    assert_abs_diff_eq!(g0, v(0.9, d1), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn epsilon_default_model() {
        let model = GaussMarkovModel::default_model(&[0.9, 0.9], 1.0).unwrap();
        let rep = epsilon_mn(&model, 1, 0, 50).unwrap();
        let v50: f64 = (0..50).map(|k| 0.9f64.powi(k)).sum();
        assert_abs_diff_eq!(rep.squared, v50 - 1.0, epsilon = 1e-9);
        assert!(rep.exhaustive);
        assert_abs_diff_eq!(rep.truncation_error, 10.0 - v50, epsilon = 1e-9);
        // source 1 does not carry source 0's state
        assert_eq!(epsilon_mn(&model, 0, 1, 50).unwrap().squared, 0.0);
        let zero = GaussMarkovModel::default_model(&[0.9, 0.9], 0.0).unwrap();
        assert_eq!(epsilon_mn(&zero, 1, 0, 50).unwrap().squared, 0.0);
    }

    #[test]
    fn empirical_trivial_cases() {
        let constant: Vec<Sample> = (0..10)
            .map(|_| Sample {
                target: 3.5,
                key: vec![],
                features: vec![],
            })
            .collect();
        assert_eq!(
            h_l_empirical(&constant, &LossSpec::quadratic()).unwrap(),
            0.0
        );
        let two: Vec<Sample> = (0..10)
            .map(|i| Sample {
                target: if i % 2 == 0 { 0.0 } else { 2.0 },
                key: vec![],
                features: vec![],
            })
            .collect();
        assert_abs_diff_eq!(
            h_l_empirical(&two, &LossSpec::quadratic()).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(matches!(
            h_l_empirical(&[], &LossSpec::quadratic()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn empirical_bins_weighted_by_occupancy() {
        let mut samples = Vec::new();
        for i in 0..4 {
            samples.push(Sample {
                target: if i % 2 == 0 { -1.0 } else { 1.0 },
                key: vec![1],
                features: vec![],
            });
        }
        for _ in 0..4 {
            samples.push(Sample {
                target: 7.0,
                key: vec![2],
                features: vec![],
            });
        }
        let bins = h_l_empirical_bins(&samples, &LossSpec::quadratic()).unwrap();
        assert_eq!(bins.len(), 2);
        assert_abs_diff_eq!(bins[0].loss, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            h_l_empirical(&samples, &LossSpec::quadratic()).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn empirical_finite_action_loss() {
        // 0-1 loss over actions {0, 1}: predicting the majority class.
        let loss = LossSpec::Finite {
            actions: vec![0.0, 1.0],
            loss: Arc::new(|y, a| if y == a { 0.0 } else { 1.0 }),
            bound: Some(1.0),
        };
        let samples: Vec<Sample> = [1.0, 1.0, 1.0, 0.0]
            .iter()
            .map(|&y| Sample {
                target: y,
                key: vec![],
                features: vec![],
            })
            .collect();
        assert_abs_diff_eq!(
            h_l_empirical(&samples, &loss).unwrap(),
            0.25,
            epsilon = 1e-12
        );
        assert_eq!(loss.bound(), Some(1.0));
    }

    #[test]
    fn empirical_regression_removes_linear_signal() {
        let samples: Vec<Sample> = (0..20)
            .map(|i| {
                let x = i as f64;
                Sample {
                    target: 2.0 * x + 1.0,
                    key: vec![0],
                    features: vec![x],
                }
            })
            .collect();
        assert!(h_l_empirical(&samples, &LossSpec::quadratic()).unwrap() < 1e-18);
    }

    #[test]
    fn capped_loss_clips() {
        let samples: Vec<Sample> = [0.0, 10.0]
            .iter()
            .map(|&y| Sample {
                target: y,
                key: vec![],
                features: vec![],
            })
            .collect();
        let capped = LossSpec::capped_quadratic(4.0).unwrap();
        assert_abs_diff_eq!(
            h_l_empirical(&samples, &capped).unwrap(),
            4.0,
            epsilon = 1e-12
        );
        assert!(LossSpec::capped_quadratic(0.0).is_err());
    }
}
