//! Coverage, efficiency and informativeness of prediction sets, plus
//! aggregation over repeated trials.

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSet;
use crate::error::{Error, Result};
use crate::score::ScoreSpec;

/// Fraction of sets containing their true label. Empty sets count as misses.
pub fn coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = sets
        .iter()
        .zip(labels)
        .filter(|(set, &y)| set.contains(y))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Mean set size.
pub fn efficiency(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: usize = sets.iter().map(PredictionSet::size).sum();
    Ok(total as f64 / sets.len() as f64)
}

/// Fraction of singleton sets.
pub fn informativeness(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let singletons = sets.iter().filter(|s| s.size() == 1).count();
    Ok(singletons as f64 / sets.len() as f64)
}

/// Metrics of one calibrate/test split for one score spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub spec: ScoreSpec,
    pub alpha: f64,
    pub n_cal: usize,
    pub n_test: usize,
    pub q_cal: f64,
    pub coverage: f64,
    pub efficiency: f64,
    pub informativeness: f64,
}

impl TrialResult {
    /// Evaluate `sets` against `labels`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_sets(
        trial: usize,
        seed: u64,
        spec: ScoreSpec,
        alpha: f64,
        n_cal: usize,
        q_cal: f64,
        sets: &[PredictionSet],
        labels: &[usize],
    ) -> Result<Self> {
        Ok(Self {
            trial,
            seed,
            spec,
            alpha,
            n_cal,
            n_test: sets.len(),
            q_cal,
            coverage: coverage(sets, labels)?,
            efficiency: efficiency(sets)?,
            informativeness: informativeness(sets)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            mean,
            std,
            min,
            max,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub spec: ScoreSpec,
    pub alpha: f64,
    pub n_trials: usize,
    pub coverage: MetricSummary,
    pub efficiency: MetricSummary,
    pub informativeness: MetricSummary,
}

/// Summarize trials of a single spec and alpha. Trials are ordered by trial
/// index first, so the result does not depend on input order.
pub fn aggregate(trials: &[TrialResult]) -> Result<AggregateResult> {
    let first = trials.first().ok_or(Error::EmptyInput)?;
    if trials
        .iter()
        .any(|t| t.spec != first.spec || t.alpha != first.alpha)
    {
        return Err(Error::MixedTrials);
    }
    let mut ordered: Vec<&TrialResult> = trials.iter().collect();
    ordered.sort_by_key(|t| (t.trial, t.seed));
    let column = |f: fn(&TrialResult) -> f64| ordered.iter().map(|t| f(t)).collect::<Vec<_>>();
    Ok(AggregateResult {
        spec: first.spec,
        alpha: first.alpha,
        n_trials: trials.len(),
        coverage: MetricSummary::from_values(column(|t| t.coverage))?,
        efficiency: MetricSummary::from_values(column(|t| t.efficiency))?,
        informativeness: MetricSummary::from_values(column(|t| t.informativeness))?,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::score::ScoreKind;

    fn sets() -> Vec<PredictionSet> {
        vec![
            PredictionSet::from_classes(vec![1]),
            PredictionSet::from_classes(vec![1, 2]),
            PredictionSet::default(),
        ]
    }

    #[test]
    fn metric_examples() {
        assert_abs_diff_eq!(coverage(&sets(), &[1, 1, 1]).unwrap(), 2.0 / 3.0);
        assert_abs_diff_eq!(efficiency(&sets()).unwrap(), 1.0);
        assert_abs_diff_eq!(informativeness(&sets()).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn full_and_empty_sets() {
        let full = vec![PredictionSet::from_classes((0..13).collect()); 4];
        assert_eq!(coverage(&full, &[0, 5, 12, 3]).unwrap(), 1.0);
        assert_eq!(efficiency(&full).unwrap(), 13.0);
        assert_eq!(informativeness(&full).unwrap(), 0.0);

        let empty = vec![PredictionSet::default(); 3];
        assert_eq!(coverage(&empty, &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(efficiency(&empty).unwrap(), 0.0);
        assert_eq!(informativeness(&empty).unwrap(), 0.0);

        let singles: Vec<_> = (0..5).map(|k| PredictionSet::from_classes(vec![k])).collect();
        assert_eq!(efficiency(&singles).unwrap(), 1.0);
        assert_eq!(informativeness(&singles).unwrap(), 1.0);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(coverage(&sets(), &[1]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(coverage(&[], &[]), Err(Error::EmptyInput)));
        assert!(matches!(efficiency(&[]), Err(Error::EmptyInput)));
        assert!(matches!(informativeness(&[]), Err(Error::EmptyInput)));
    }

    fn trial(i: usize, cov: f64) -> TrialResult {
        TrialResult {
            trial: i,
            seed: i as u64 * 17,
            spec: ScoreSpec::new(ScoreKind::Pip),
            alpha: 0.1,
            n_cal: 10,
            n_test: 10,
            q_cal: 1.0,
            coverage: cov,
            efficiency: 1.0 + i as f64,
            informativeness: 0.5,
        }
    }

    #[test]
    fn aggregate_single_and_pair() {
        let one = aggregate(&[trial(0, 0.85)]).unwrap();
        assert_eq!(one.coverage.mean, 0.85);
        assert_eq!(one.coverage.std, 0.0);

        let two = aggregate(&[trial(0, 0.8), trial(1, 1.0)]).unwrap();
        assert_abs_diff_eq!(two.coverage.mean, 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(two.coverage.std, (0.02f64).sqrt(), epsilon = 1e-15);
        assert_eq!(two.coverage.min, 0.8);
        assert_eq!(two.coverage.max, 1.0);
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let trials: Vec<_> = (0..7).map(|i| trial(i, 0.8 + 0.03 * i as f64)).collect();
        let mut reversed = trials.clone();
        reversed.reverse();
        assert_eq!(aggregate(&trials).unwrap(), aggregate(&reversed).unwrap());
    }

    #[test]
    fn aggregate_rejects_mixed_specs() {
        let mut other = trial(1, 0.9);
        other.spec = ScoreSpec::new(ScoreKind::Ms);
        assert!(matches!(aggregate(&[trial(0, 0.9), other]), Err(Error::MixedTrials)));
        assert!(matches!(aggregate(&[]), Err(Error::EmptyInput)));
    }
}
