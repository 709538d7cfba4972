//! Repeated random calibration/test splits and hyperparameter sweeps.
//!
//! Trial `i` uses a split and tie-breaking draws derived only from
//! `(master_seed, i)`, so every score spec and every sweep value sees exactly
//! the same partitions. Trials run in parallel; results are collected in
//! trial order.

use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate_scores, check_alpha, Example, PredictionSet};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, AggregateResult, TrialResult};
use crate::score::{rank, score, ScoreKind, ScoreSpec, UMode};
use crate::seeds;

/// Calibration share of the pooled calibration + test data (13.5 / 30).
pub const DEFAULT_CAL_FRACTION: f64 = 0.45;
pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub alpha: f64,
    pub specs: Vec<ScoreSpec>,
    pub n_trials: usize,
    pub cal_fraction: f64,
    pub test_fraction: f64,
    pub master_seed: u64,
    /// Replace empty prediction sets by the top-ranked class.
    #[serde(default)]
    pub fill_empty_with_argmax: bool,
}

impl ExperimentPlan {
    pub fn new(specs: Vec<ScoreSpec>, master_seed: u64) -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            specs,
            n_trials: DEFAULT_TRIALS,
            cal_fraction: DEFAULT_CAL_FRACTION,
            test_fraction: 1.0 - DEFAULT_CAL_FRACTION,
            master_seed,
            fill_empty_with_argmax: false,
        }
    }

    pub fn with_trials(mut self, n_trials: usize) -> Self {
        self.n_trials = n_trials;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_cal_fraction(mut self, cal_fraction: f64) -> Self {
        self.cal_fraction = cal_fraction;
        self.test_fraction = 1.0 - cal_fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_fractions(self.cal_fraction, self.test_fraction)?;
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
        }
        if self.specs.is_empty() {
            return Err(Error::InvalidConfig("no score specs given".into()));
        }
        Ok(())
    }
}

fn check_fractions(cal: f64, test: f64) -> Result<()> {
    if !(cal > 0.0 && test > 0.0 && (cal + test - 1.0).abs() < 1e-9) {
        return Err(Error::InvalidConfig(format!(
            "fractions must be positive and sum to 1, got {cal} + {test}"
        )));
    }
    Ok(())
}

/// Indices of one calibration/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub trial: usize,
    pub seed: u64,
    pub cal: Vec<usize>,
    pub test: Vec<usize>,
}

/// The partition used by trial `trial`; depends only on the arguments.
pub fn split(n: usize, cal_fraction: f64, master_seed: u64, trial: usize) -> Result<Split> {
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, available: n });
    }
    let n_cal = ((n as f64 * cal_fraction).round() as usize).clamp(1, n - 1);
    let seed = seeds::derive(master_seed, &[seeds::TAG_TRIAL, trial as u64]);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeds::rng(seeds::derive(seed, &[seeds::TAG_SPLIT])));
    let test = idx.split_off(n_cal);
    Ok(Split {
        trial,
        seed,
        cal: idx,
        test,
    })
}

/// Result of one spec on one split, with the sets it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub result: TrialResult,
    pub sets: Vec<PredictionSet>,
    pub labels: Vec<usize>,
}

/// Calibrate `spec` on the split's calibration part and predict its test part.
/// The tie-breaking draw of data index `j` is `object_u(split.seed, j)`.
pub fn evaluate_split(
    data: &[Example],
    split: &Split,
    spec: &ScoreSpec,
    alpha: f64,
    fill_empty_with_argmax: bool,
) -> Result<TrialOutcome> {
    let num_classes = data.first().ok_or(Error::EmptyInput)?.0.num_classes();
    let u = |j: usize| seeds::object_u(split.seed, j as u64);
    let cal_scores = split
        .cal
        .iter()
        .map(|&j| {
            let (p, y) = &data[j];
            score(p, spec, *y, spec.u_mode.resolve(u(j)))
        })
        .collect::<Result<Vec<_>>>()?;
    let record = calibrate_scores(cal_scores, *spec, alpha, num_classes)?;
    let mut sets = Vec::with_capacity(split.test.len());
    let mut labels = Vec::with_capacity(split.test.len());
    for &j in &split.test {
        let (p, y) = &data[j];
        let mut set = record.predict_set(p, u(j))?;
        if set.is_empty() && fill_empty_with_argmax {
            set = PredictionSet::from_classes(vec![rank(p).order()[0]]);
        }
        sets.push(set);
        labels.push(*y);
    }
    let result = TrialResult::from_sets(
        split.trial,
        split.seed,
        *spec,
        alpha,
        split.cal.len(),
        record.q_cal,
        &sets,
        &labels,
    )?;
    Ok(TrialOutcome { result, sets, labels })
}

fn check_data(data: &[Example]) -> Result<usize> {
    if data.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: data.len(),
        });
    }
    let k = data[0].0.num_classes();
    for (p, y) in data {
        if p.num_classes() != k {
            return Err(Error::ClassCountMismatch {
                expected: k,
                found: p.num_classes(),
            });
        }
        if *y >= k {
            return Err(Error::ClassOutOfRange { class: *y, num_classes: k });
        }
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecResult {
    pub spec: ScoreSpec,
    pub trials: Vec<TrialResult>,
    pub aggregate: AggregateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub plan: ExperimentPlan,
    pub per_spec: Vec<SpecResult>,
}

impl ExperimentResult {
    pub fn get(&self, kind: ScoreKind) -> Option<&SpecResult> {
        self.per_spec.iter().find(|r| r.spec.kind == kind)
    }
}

pub fn run_experiment(data: &[Example], plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let k = check_data(data)?;
    for spec in &plan.specs {
        spec.validate(k)?;
    }
    let per_trial: Vec<Vec<TrialResult>> = (0..plan.n_trials)
        .into_par_iter()
        .map(|t| {
            let split = split(data.len(), plan.cal_fraction, plan.master_seed, t)?;
            plan.specs
                .iter()
                .map(|spec| {
                    evaluate_split(data, &split, spec, plan.alpha, plan.fill_empty_with_argmax)
                        .map(|o| o.result)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let per_spec = plan
        .specs
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let trials: Vec<TrialResult> = per_trial.iter().map(|row| row[s].clone()).collect();
            Ok(SpecResult {
                spec: *spec,
                aggregate: aggregate(&trials)?,
                trials,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ExperimentResult {
        plan: plan.clone(),
        per_spec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lambda,
    Gamma,
}

impl SweepParam {
    /// The score kind regularized by this parameter.
    pub fn kind(self) -> ScoreKind {
        match self {
            SweepParam::Lambda => ScoreKind::Raps,
            SweepParam::Gamma => ScoreKind::RePip,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lambda" => Ok(SweepParam::Lambda),
            "gamma" => Ok(SweepParam::Gamma),
            other => Err(Error::InvalidConfig(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub param: SweepParam,
    pub grid: Vec<f64>,
    pub k_reg: usize,
    pub trials: usize,
    pub cal_fraction: f64,
    pub u_mode: UMode,
}

impl SweepPlan {
    pub fn new(param: SweepParam, grid: Vec<f64>, k_reg: usize, trials: usize) -> Self {
        Self {
            param,
            grid,
            k_reg,
            trials,
            cal_fraction: DEFAULT_CAL_FRACTION,
            u_mode: UMode::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        if self.grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("sweep grid values must be >= 0".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("sweep grid must be strictly ascending".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        check_fractions(self.cal_fraction, 1.0 - self.cal_fraction)
    }

    pub fn spec_for(&self, value: f64) -> ScoreSpec {
        let spec = ScoreSpec::new(self.param.kind())
            .with_k_reg(self.k_reg)
            .with_u_mode(self.u_mode);
        match self.param {
            SweepParam::Lambda => spec.with_lambda(value),
            SweepParam::Gamma => spec.with_gamma(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub trial: usize,
    pub q_cal: f64,
    pub coverage: f64,
    pub efficiency: f64,
    pub informativeness: f64,
}

/// How often two neighbouring grid values produced identical prediction sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationNote {
    pub from: f64,
    pub to: f64,
    pub identical_trials: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub plan: SweepPlan,
    pub alpha: f64,
    pub master_seed: u64,
    /// Ordered by grid value, then trial.
    pub rows: Vec<SweepRow>,
    pub saturation: Vec<SaturationNote>,
}

fn sets_digest(sets: &[PredictionSet]) -> u64 {
    let mut h = DefaultHasher::new();
    sets.hash(&mut h);
    h.finish()
}

/// Evaluate every grid value on the same `sweep.trials` splits.
pub fn run_sweep(
    data: &[Example],
    sweep: &SweepPlan,
    kind: ScoreKind,
    alpha: f64,
    master_seed: u64,
) -> Result<SweepResult> {
    sweep.validate()?;
    check_alpha(alpha)?;
    if kind != sweep.param.kind() {
        return Err(Error::InvalidConfig(format!(
            "{} is not the regularization parameter of {kind}",
            sweep.param.as_str()
        )));
    }
    let k = check_data(data)?;
    sweep.spec_for(0.0).validate(k)?;

    // per trial: (row, digest) for each grid value
    let per_trial: Vec<Vec<(SweepRow, u64)>> = (0..sweep.trials)
        .into_par_iter()
        .map(|t| {
            let split = split(data.len(), sweep.cal_fraction, master_seed, t)?;
            sweep
                .grid
                .iter()
                .map(|&value| {
                    let outcome = evaluate_split(data, &split, &sweep.spec_for(value), alpha, false)?;
                    let r = &outcome.result;
                    Ok((
                        SweepRow {
                            value,
                            trial: t,
                            q_cal: r.q_cal,
                            coverage: r.coverage,
                            efficiency: r.efficiency,
                            informativeness: r.informativeness,
                        },
                        sets_digest(&outcome.sets),
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(sweep.grid.len() * sweep.trials);
    for g in 0..sweep.grid.len() {
        rows.extend(per_trial.iter().map(|trial| trial[g].0.clone()));
    }
    let saturation = sweep
        .grid
        .windows(2)
        .enumerate()
        .map(|(g, pair)| SaturationNote {
            from: pair[0],
            to: pair[1],
            identical_trials: per_trial.iter().filter(|t| t[g].1 == t[g + 1].1).count(),
            trials: sweep.trials,
        })
        .collect();
    Ok(SweepResult {
        plan: sweep.clone(),
        alpha,
        master_seed,
        rows,
        saturation,
    })
}

/// Directional comparison of score kinds. Report only: the orderings depend
/// on the data and are never asserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Whether IP has the smallest mean set size, if IP was run.
    pub ip_smallest_set_size: Option<bool>,
    /// Kind with the highest mean singleton fraction.
    pub most_informative: ScoreKind,
    /// Whether that kind is MS, PIP or RePIP.
    pub informative_leader_expected: bool,
    pub lines: Vec<String>,
}

impl ComparisonReport {
    pub fn from_result(result: &ExperimentResult) -> Self {
        let mean_eff = |r: &SpecResult| r.aggregate.efficiency.mean;
        let mean_inf = |r: &SpecResult| r.aggregate.informativeness.mean;
        let smallest = result
            .per_spec
            .iter()
            .min_by(|a, b| mean_eff(a).total_cmp(&mean_eff(b)))
            .expect("experiment has at least one spec");
        let most = result
            .per_spec
            .iter()
            .max_by(|a, b| mean_inf(a).total_cmp(&mean_inf(b)))
            .expect("experiment has at least one spec");
        let ip_smallest = result
            .get(ScoreKind::Ip)
            .map(|ip| mean_eff(ip) <= mean_eff(smallest));
        let expected = matches!(most.spec.kind, ScoreKind::Ms | ScoreKind::Pip | ScoreKind::RePip);

        let mut lines = Vec::new();
        for r in &result.per_spec {
            lines.push(format!(
                "{:<28} coverage {:.4}  set size {:.4}  singletons {:.4}",
                r.spec.label(),
                r.aggregate.coverage.mean,
                mean_eff(r),
                mean_inf(r)
            ));
        }
        let mut line = String::new();
        match ip_smallest {
            Some(true) => line.push_str("IP has the smallest mean set size"),
            Some(false) => {
                let _ = write!(line, "deviation: smallest mean set size is {}, not IP", smallest.spec.label());
            }
            None => line.push_str("IP not run; set-size ordering not checked"),
        }
        lines.push(line);
        if expected {
            lines.push(format!("{} has the highest singleton fraction", most.spec.label()));
        } else {
            lines.push(format!(
                "deviation: highest singleton fraction is {}, not MS/PIP/RePIP",
                most.spec.label()
            ));
        }
        Self {
            ip_smallest_set_size: ip_smallest,
            most_informative: most.spec.kind,
            informative_leader_expected: expected,
            lines,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
