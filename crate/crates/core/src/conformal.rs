//! Split-conformal calibration and prediction sets.
//!
//! Calibration sorts the nonconformity scores of held-out examples and keeps
//! the `ceil((n + 1)(1 - alpha))`-th smallest as the threshold `q_cal`. When
//! that index exceeds `n` the threshold is `+inf` and every class is kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{score, score_all_classes, ProbabilityVector, ScoreSpec};
use crate::seeds;

/// A labelled classifier output.
pub type Example = (ProbabilityVector, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub q_cal: f64,
    pub alpha: f64,
    pub n_cal: usize,
    pub num_classes: usize,
    pub spec: ScoreSpec,
    /// Calibration scores in ascending order.
    pub sorted_scores: Vec<f64>,
}

/// A set of class indices, kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    classes: Vec<usize>,
}

impl PredictionSet {
    pub fn from_classes(mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        Self { classes }
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn size(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.binary_search(&class).is_ok()
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// 1-based order-statistic index `ceil((n + 1)(1 - alpha))`, or `None` when
/// it exceeds `n`.
pub fn quantile_index(n: usize, alpha: f64) -> Option<usize> {
    let target = (n as f64 + 1.0) * (1.0 - alpha);
    // Absorb representation error such as 10 * 0.9 landing just above 9.
    let index = (target - 1e-9).ceil().max(1.0) as usize;
    (index <= n).then_some(index)
}

/// Build a calibration record from precomputed scores of the true classes.
pub fn calibrate_scores(
    mut scores: Vec<f64>,
    spec: ScoreSpec,
    alpha: f64,
    num_classes: usize,
) -> Result<CalibrationRecord> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore(bad));
    }
    spec.validate(num_classes)?;
    scores.sort_by(f64::total_cmp);
    let n_cal = scores.len();
    let q_cal = quantile_index(n_cal, alpha).map_or(f64::INFINITY, |i| scores[i - 1]);
    Ok(CalibrationRecord {
        q_cal,
        alpha,
        n_cal,
        num_classes,
        spec,
        sorted_scores: scores,
    })
}

/// Calibrate `spec` on `cal_data`. The tie-breaking `u` of example `i` is
/// derived from `(seed, i)`.
pub fn calibrate(cal_data: &[Example], spec: ScoreSpec, alpha: f64, seed: u64) -> Result<CalibrationRecord> {
    check_alpha(alpha)?;
    let num_classes = cal_data.first().ok_or(Error::EmptyCalibration)?.0.num_classes();
    spec.validate(num_classes)?;
    let scores = cal_data
        .iter()
        .enumerate()
        .map(|(i, (p, y))| {
            if p.num_classes() != num_classes {
                return Err(Error::ClassCountMismatch {
                    expected: num_classes,
                    found: p.num_classes(),
                });
            }
            let u = spec.u_mode.resolve(seeds::object_u(seed, i as u64));
            score(p, &spec, *y, u)
        })
        .collect::<Result<Vec<_>>>()?;
    calibrate_scores(scores, spec, alpha, num_classes)
}

impl CalibrationRecord {
    /// Classes whose score does not exceed `q_cal`.
    pub fn predict_set(&self, p: &ProbabilityVector, u: f64) -> Result<PredictionSet> {
        if p.num_classes() != self.num_classes {
            return Err(Error::ClassCountMismatch {
                expected: self.num_classes,
                found: p.num_classes(),
            });
        }
        let u = self.spec.u_mode.resolve(u);
        let scores = score_all_classes(p, &self.spec, u)?;
        Ok(PredictionSet {
            classes: scores
                .iter()
                .enumerate()
                .filter(|(_, &s)| s <= self.q_cal)
                .map(|(k, _)| k)
                .collect(),
        })
    }
}

/// Free-function form of [`CalibrationRecord::predict_set`].
pub fn predict_set(p: &ProbabilityVector, record: &CalibrationRecord, u: f64) -> Result<PredictionSet> {
    record.predict_set(p, u)
}
