//! Penalty functions: single-source tables `f_m(δ)` and the joint penalty
//! `g_m(δ_1, ..., δ_M)`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info_measures::{self, LossSpec, Sample};
use crate::signal::GaussMarkovModel;

/// Largest reduced grid [`check_lower_bound`] walks.
const MAX_AUDIT_POINTS: u128 = 10_000_000;

/// AoI truncation: ages above `delta_bound` are treated as `delta_bound`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub delta_bound: usize,
}

impl TruncationConfig {
    pub fn new(delta_bound: usize) -> Result<Self> {
        if delta_bound < 2 {
            return Err(Error::InvalidArgument(format!(
                "delta_bound must be at least 2, got {delta_bound}"
            )));
        }
        Ok(Self { delta_bound })
    }
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self { delta_bound: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    ModelDerived,
    Empirical,
    /// Imported from a file or supplied directly.
    External,
}

/// `f_m(δ)` for `δ = 1..=delta_bound`; lookups beyond the bound saturate.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTable {
    pub source: usize,
    values: Vec<f64>,
    pub provenance: Provenance,
}

impl PenaltyTable {
    pub fn new(source: usize, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "penalty table must not be empty".into(),
            ));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinitePenalty { delta: i + 1 });
            }
            if *v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "negative penalty {v} at age {}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            source,
            values,
            provenance,
        })
    }

    /// `f(δ)`, with `δ > delta_bound` read as `delta_bound`.
    pub fn get(&self, delta: usize) -> f64 {
        debug_assert!(delta >= 1);
        self.values[delta.clamp(1, self.values.len()) - 1]
    }

    pub fn delta_bound(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    source: usize,
    delta: usize,
    value: f64,
}

/// Writes tables as `source,delta,value` rows.
pub fn write_tables<W: Write>(writer: W, tables: &[PenaltyTable]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in tables {
        for (i, &value) in t.values.iter().enumerate() {
            w.serialize(TableRow {
                source: t.source,
                delta: i + 1,
                value,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads tables written by [`write_tables`]. Each source's ages must run
/// contiguously from 1.
pub fn read_tables<R: Read>(reader: R) -> Result<Vec<PenaltyTable>> {
    let mut rows: Vec<TableRow> = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|r| (r.source, r.delta));
    let mut tables: Vec<PenaltyTable> = Vec::new();
    let mut current: Option<(usize, Vec<f64>)> = None;
    for r in rows {
        match &mut current {
            Some((s, vals)) if *s == r.source => {
                if r.delta != vals.len() + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "source {} has a gap or duplicate at age {}",
                        r.source, r.delta
                    )));
                }
                vals.push(r.value);
            }
            _ => {
                if let Some((s, vals)) = current.take() {
                    tables.push(PenaltyTable::new(s, vals, Provenance::External)?);
                }
                if r.delta != 1 {
                    return Err(Error::InvalidArgument(format!(
                        "source {} does not start at age 1",
                        r.source
                    )));
                }
                current = Some((r.source, vec![r.value]));
            }
        }
    }
    if let Some((s, vals)) = current {
        tables.push(PenaltyTable::new(s, vals, Provenance::External)?);
    }
    Ok(tables)
}

pub fn save_tables(path: &Path, tables: &[PenaltyTable]) -> Result<()> {
    write_tables(std::fs::File::create(path)?, tables)
}

pub fn load_tables(path: &Path) -> Result<Vec<PenaltyTable>> {
    read_tables(std::fs::File::open(path)?)
}

/// Variance of source `m`'s noise given all other noise components:
/// the Schur complement `q_mm - q_m Q_{-m}^{-1} q_m^T`.
pub fn qbar(q: &DMatrix<f64>, m: usize) -> Result<f64> {
    let n = q.nrows();
    if q.ncols() != n || m >= n {
        return Err(Error::InvalidArgument(
            "qbar needs a square matrix and a valid index".into(),
        ));
    }
    if n == 1 {
        return Ok(q[(0, 0)]);
    }
    let others: Vec<usize> = (0..n).filter(|&i| i != m).collect();
    let rest = q.select_rows(&others).select_columns(&others);
    let cross = q.select_rows(&[m]).select_columns(&others);
    let inv = rest
        .cholesky()
        .ok_or_else(|| Error::Singular("covariance of the other noise components".into()))?
        .inverse();
    Ok(q[(m, m)] - (&cross * inv * cross.transpose())[(0, 0)])
}

/// `q̄ δ` for a unit root, `q̄ (a^(2δ) - 1) / (a² - 1)` otherwise.
pub fn f_closed_form(a: f64, qbar: f64, delta: usize) -> f64 {
    let a2 = a * a;
    if a2 == 1.0 {
        qbar * delta as f64
    } else {
        qbar * (a2.powi(delta as i32) - 1.0) / (a2 - 1.0)
    }
}

/// A state trajectory, one row per slot and one column per source.
///
/// The text form is comma-separated with an optional header row.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDataset {
    rows: Vec<Vec<f64>>,
}

impl StateDataset {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptyDataset);
        };
        let width = first.len();
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument(
                "dataset rows must have the same nonzero width".into(),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Self { rows })
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> =
                record.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(r) => rows.push(r),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::InvalidArgument(format!("row {}: {e}", i + 1))),
            }
        }
        Self::new(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn num_sources(&self) -> usize {
        self.rows[0].len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Samples for target `m` at age `delta`: `Z[m, t]` with features
    /// `Z[m, t - delta]` and `Z[n, t - 1]` for every `n != m`.
    pub fn samples(&self, m: usize, delta: usize) -> Vec<Sample> {
        let nsrc = self.num_sources();
        (delta.max(1)..self.rows.len())
            .map(|t| {
                let mut features = vec![self.rows[t - delta][m]];
                features.extend((0..nsrc).filter(|&n| n != m).map(|n| self.rows[t - 1][n]));
                Sample {
                    target: self.rows[t][m],
                    key: vec![delta as i64],
                    features,
                }
            })
            .collect()
    }
}

/// How [`build_f_table`] obtains `f_m`.
#[derive(Debug, Clone, Copy)]
pub enum PenaltyMode<'a> {
    /// Gaussian closed form with the conditional noise variance; ignores
    /// piggybacking.
    ClosedForm,
    /// The joint penalty with every other source at age 1.
    ModelDerived,
    /// Regression on a recorded trajectory.
    Empirical {
        data: &'a StateDataset,
        min_samples: usize,
    },
}

pub fn build_f_table(
    model: &GaussMarkovModel,
    m: usize,
    cfg: TruncationConfig,
    mode: PenaltyMode<'_>,
) -> Result<PenaltyTable> {
    if m >= model.num_sources() {
        return Err(Error::InvalidArgument(format!("source {m} out of range")));
    }
    let db = cfg.delta_bound;
    match mode {
        PenaltyMode::ClosedForm => {
            let qb = qbar(model.noise_cov(), m)?;
            let values = (1..=db)
                .map(|d| f_closed_form(model.ar_coeff(m), qb, d))
                .collect();
            PenaltyTable::new(m, values, Provenance::ClosedForm)
        }
        PenaltyMode::ModelDerived => {
            let joint = JointPenalty::new(model.clone())?;
            let mut ages = vec![1; model.num_sources()];
            let values = (1..=db)
                .map(|d| {
                    ages[m] = d;
                    joint.evaluate(m, &ages)
                })
                .collect::<Result<Vec<_>>>()?;
            PenaltyTable::new(m, values, Provenance::ModelDerived)
        }
        PenaltyMode::Empirical { data, min_samples } => {
            if data.num_sources() != model.num_sources() {
                return Err(Error::InvalidArgument(format!(
                    "dataset has {} columns, model has {} sources",
                    data.num_sources(),
                    model.num_sources()
                )));
            }
            empirical_table(data, m, db, min_samples.max(1))
        }
    }
}

/// Empirical `f_m` from a trajectory alone (no model needed).
pub fn empirical_table(
    data: &StateDataset,
    m: usize,
    delta_bound: usize,
    min_samples: usize,
) -> Result<PenaltyTable> {
    if m >= data.num_sources() {
        return Err(Error::InvalidArgument(format!("source {m} out of range")));
    }
    let loss = LossSpec::quadratic();
    let mut values = Vec::with_capacity(delta_bound);
    let mut missing = Vec::new();
    for d in 1..=delta_bound {
        let samples = data.samples(m, d);
        if samples.len() < min_samples || samples.is_empty() {
            missing.push(d);
            continue;
        }
        values.push(info_measures::h_l_empirical(&samples, &loss)?);
    }
    if !missing.is_empty() {
        return Err(Error::InsufficientSamples {
            src: m,
            ages: missing,
        });
    }
    PenaltyTable::new(m, values, Provenance::Empirical)
}

/// Any per-target cost that depends on the full AoI vector.
pub trait JointCost: Sync {
    fn num_sources(&self) -> usize;

    /// Cost of target `m` when the AoI vector is `ages` (all entries ≥ 1).
    fn cost(&self, m: usize, ages: &[usize]) -> f64;

    fn total(&self, ages: &[usize]) -> f64 {
        (0..self.num_sources()).map(|m| self.cost(m, ages)).sum()
    }
}

/// The exact penalty `g_m` of a Gaussian model under retain-latest-packet
/// receiver semantics.
#[derive(Debug, Clone)]
pub struct JointPenalty {
    model: GaussMarkovModel,
}

impl JointPenalty {
    pub fn new(model: GaussMarkovModel) -> Result<Self> {
        Ok(Self { model })
    }

    pub fn model(&self) -> &GaussMarkovModel {
        &self.model
    }

    pub fn evaluate(&self, m: usize, ages: &[usize]) -> Result<f64> {
        info_measures::h_l_retained(&self.model, m, ages)
    }

    /// Sources whose AoI can change `g_m`; `m` first.
    pub fn relevant_sources(&self, m: usize) -> Vec<usize> {
        if self.model.is_noise_diagonal() {
            std::iter::once(m)
                .chain(self.model.carriers_of(m))
                .collect()
        } else {
            (0..self.model.num_sources()).collect()
        }
    }
}

impl JointCost for JointPenalty {
    fn num_sources(&self) -> usize {
        self.model.num_sources()
    }

    fn cost(&self, m: usize, ages: &[usize]) -> f64 {
        self.evaluate(m, ages)
            .expect("joint penalty evaluation failed")
    }
}

/// `g_m = f_m(δ_m)`: the single-source approximation as a joint cost.
#[derive(Debug, Clone)]
pub struct SeparableCost {
    pub tables: Vec<PenaltyTable>,
}

impl JointCost for SeparableCost {
    fn num_sources(&self) -> usize {
        self.tables.len()
    }

    fn cost(&self, m: usize, ages: &[usize]) -> f64 {
        self.tables[m].get(ages[m])
    }
}

/// A dense joint cost given per target as a function of the whole AoI
/// vector, indexed in mixed radix with source 0 fastest.
#[derive(Debug, Clone)]
pub struct TabulatedCost {
    delta_bound: usize,
    num_sources: usize,
    values: Vec<Vec<f64>>,
}

impl TabulatedCost {
    pub fn from_fn<F: FnMut(usize, &[usize]) -> f64>(
        num_sources: usize,
        delta_bound: usize,
        mut f: F,
    ) -> Result<Self> {
        let states = (delta_bound as u128).pow(num_sources as u32);
        if states > 10_000_000 {
            return Err(Error::StateSpaceTooLarge {
                states,
                limit: 10_000_000,
            });
        }
        let all: Vec<usize> = (0..num_sources).collect();
        let mut values = vec![Vec::with_capacity(states as usize); num_sources];
        let mut ages = vec![1usize; num_sources];
        loop {
            for (m, column) in values.iter_mut().enumerate() {
                column.push(f(m, &ages));
            }
            if !info_measures::advance_grid(&mut ages, &all, delta_bound) {
                break;
            }
        }
        Ok(Self {
            delta_bound,
            num_sources,
            values,
        })
    }

    pub fn delta_bound(&self) -> usize {
        self.delta_bound
    }
}

impl JointCost for TabulatedCost {
    fn num_sources(&self) -> usize {
        self.num_sources
    }

    fn cost(&self, m: usize, ages: &[usize]) -> f64 {
        let mut idx = 0;
        for &d in ages.iter().rev() {
            idx = idx * self.delta_bound + (d.min(self.delta_bound) - 1);
        }
        self.values[m][idx]
    }
}

/// Outcome of [`check_lower_bound`] for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceBoundReport {
    pub source: usize,
    pub min_gap: f64,
    pub argmin: Vec<usize>,
    pub max_gap: f64,
    pub argmax: Vec<usize>,
    /// `max_n ε²_{m,n}`.
    pub max_epsilon_squared: f64,
    pub lower_bound_holds: bool,
    pub gap_bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub sources: Vec<SourceBoundReport>,
    pub tolerance: f64,
    /// `(source, ages, gap)` for every grid point violating either bound.
    pub counterexamples: Vec<(usize, Vec<usize>, f64)>,
}

impl LowerBoundReport {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// Checks `f_m(δ_m) ≤ g_m(δ) ≤ f_m(δ_m) + 2 max_n ε²_{m,n}` over the AoI
/// grid `1..=grid_bound` for the coordinates `g_m` depends on.
pub fn check_lower_bound(
    joint: &JointPenalty,
    tables: &[PenaltyTable],
    grid_bound: usize,
    tolerance: f64,
) -> Result<LowerBoundReport> {
    let model = joint.model();
    let nsrc = model.num_sources();
    if tables.len() != nsrc {
        return Err(Error::InvalidArgument(format!(
            "expected {nsrc} tables, got {}",
            tables.len()
        )));
    }
    let mut sources = Vec::with_capacity(nsrc);
    let mut counterexamples = Vec::new();
    for m in 0..nsrc {
        let coords = joint.relevant_sources(m);
        let points = (grid_bound as u128).saturating_pow(coords.len() as u32);
        if points > MAX_AUDIT_POINTS {
            return Err(Error::StateSpaceTooLarge {
                states: points,
                limit: MAX_AUDIT_POINTS as usize,
            });
        }
        let eps2 = (0..nsrc)
            .filter(|&n| n != m)
            .map(|n| info_measures::epsilon_mn(model, m, n, grid_bound).map(|r| r.squared))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let limit = 2.0 * eps2 + tolerance;
        let mut rep = SourceBoundReport {
            source: m,
            min_gap: f64::INFINITY,
            argmin: Vec::new(),
            max_gap: f64::NEG_INFINITY,
            argmax: Vec::new(),
            max_epsilon_squared: eps2,
            lower_bound_holds: true,
            gap_bound_holds: true,
        };
        let mut ages = vec![1usize; nsrc];
        loop {
            let gap = joint.evaluate(m, &ages)? - tables[m].get(ages[m]);
            if gap < rep.min_gap {
                rep.min_gap = gap;
                rep.argmin = ages.clone();
            }
            if gap > rep.max_gap {
                rep.max_gap = gap;
                rep.argmax = ages.clone();
            }
            if gap < -tolerance || gap > limit {
                rep.lower_bound_holds &= gap >= -tolerance;
                rep.gap_bound_holds &= gap <= limit;
                if counterexamples.len() < 100 {
                    counterexamples.push((m, ages.clone(), gap));
                }
            }
            if !info_measures::advance_grid(&mut ages, &coords, grid_bound) {
                break;
            }
        }
        sources.push(rep);
    }
    Ok(LowerBoundReport {
        sources,
        tolerance,
        counterexamples,
    })
}
