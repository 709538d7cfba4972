//! Nonconformity scores for classification.
//!
//! All scores are computed from a validated [`ProbabilityVector`] and share a
//! single descending-probability [`Ranking`]. Lower scores mean "more
//! conforming". Randomness for the APS/RAPS tie-breaking term is passed in by
//! the caller, so every function here is pure.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Estimated class probabilities for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validate and wrap `probs`. Vectors off the simplex are rejected, never
    /// renormalized.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::TooFewClasses(probs.len()));
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidProbability { index, value });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::NotOnSimplex {
                sum,
                tolerance: SIMPLEX_TOLERANCE,
            });
        }
        Ok(Self(probs))
    }

    /// Uniform distribution over `num_classes` classes.
    pub fn uniform(num_classes: usize) -> Result<Self> {
        Self::new(vec![1.0 / num_classes as f64; num_classes])
    }

    /// All mass on `class`.
    pub fn one_hot(num_classes: usize, class: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::ClassOutOfRange { class, num_classes });
        }
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        Self::new(probs)
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class < self.0.len() {
            Ok(())
        } else {
            Err(Error::ClassOutOfRange {
                class,
                num_classes: self.0.len(),
            })
        }
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

/// Classes sorted by descending probability, ties broken by ascending class
/// index.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    order: Vec<usize>,
    rank_of: Vec<usize>,
    sorted_probs: Vec<f64>,
}

impl Ranking {
    /// Class indices from most to least probable.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// 1-based rank of `class`.
    pub fn rank_of(&self, class: usize) -> usize {
        self.rank_of[class]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.rank_of
    }

    /// Probabilities in non-increasing order; `sorted_probs()[r - 1]` is the
    /// probability at rank `r`.
    pub fn sorted_probs(&self) -> &[f64] {
        &self.sorted_probs
    }

    /// Largest probability among classes other than `class`.
    fn max_other(&self, class: usize) -> f64 {
        if self.order[0] == class {
            self.sorted_probs[1]
        } else {
            self.sorted_probs[0]
        }
    }
}

pub fn rank(p: &ProbabilityVector) -> Ranking {
    let probs = p.as_slice();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Stable sort keeps ascending index order among equal probabilities.
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut rank_of = vec![0; probs.len()];
    for (pos, &class) in order.iter().enumerate() {
        rank_of[class] = pos + 1;
    }
    let sorted_probs = order.iter().map(|&k| probs[k]).collect();
    Ranking {
        order,
        rank_of,
        sorted_probs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Ip,
    Ms,
    Aps,
    Raps,
    Pip,
    #[serde(rename = "repip")]
    RePip,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 6] = [
        ScoreKind::Ip,
        ScoreKind::Ms,
        ScoreKind::Aps,
        ScoreKind::Raps,
        ScoreKind::Pip,
        ScoreKind::RePip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Ip => "ip",
            ScoreKind::Ms => "ms",
            ScoreKind::Aps => "aps",
            ScoreKind::Raps => "raps",
            ScoreKind::Pip => "pip",
            ScoreKind::RePip => "repip",
        }
    }

    /// Whether the score has a random tie-breaking term.
    pub fn uses_u(self) -> bool {
        matches!(self, ScoreKind::Aps | ScoreKind::Raps)
    }

    pub fn uses_k_reg(self) -> bool {
        matches!(self, ScoreKind::Raps | ScoreKind::RePip)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown score kind '{s}'")))
    }
}

/// Source of the APS/RAPS tie-breaking value `u`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UMode {
    /// One pseudorandom draw per object from a seeded stream.
    #[default]
    Random,
    Fixed(f64),
}

impl UMode {
    /// The `u` to use given a pseudorandom draw for this object.
    pub fn resolve(self, draw: f64) -> f64 {
        match self {
            UMode::Random => draw,
            UMode::Fixed(u) => u,
        }
    }
}

impl fmt::Display for UMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UMode::Random => f.write_str("random"),
            UMode::Fixed(u) => write!(f, "fixed:{u}"),
        }
    }
}

impl FromStr for UMode {
    type Err = Error;

    /// Accepts `random`, `fixed` (u = 1) or `fixed:<u>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mode = match s {
            "random" => UMode::Random,
            "fixed" => UMode::Fixed(1.0),
            _ => {
                let value = s
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("invalid u mode '{s}'")))?;
                UMode::Fixed(value)
            }
        };
        if let UMode::Fixed(u) = mode {
            check_u(u)?;
        }
        Ok(mode)
    }
}

/// A nonconformity function and its hyperparameters. Hyperparameters that the
/// chosen kind does not use are carried but ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub kind: ScoreKind,
    /// RAPS penalty weight.
    pub lambda: f64,
    /// RePIP penalty weight.
    pub gamma: f64,
    /// Rank from which RAPS/RePIP start penalizing.
    pub k_reg: usize,
    pub u_mode: UMode,
}

impl ScoreSpec {
    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            lambda: 0.0,
            gamma: 0.0,
            k_reg: 1,
            u_mode: UMode::Random,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_k_reg(mut self, k_reg: usize) -> Self {
        self.k_reg = k_reg;
        self
    }

    pub fn with_u_mode(mut self, u_mode: UMode) -> Self {
        self.u_mode = u_mode;
        self
    }

    /// Check the hyperparameters the kind actually uses against `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.kind {
            ScoreKind::Raps => check_weight("lambda", self.lambda)?,
            ScoreKind::RePip => check_weight("gamma", self.gamma)?,
            _ => {}
        }
        if self.kind.uses_k_reg() && (self.k_reg == 0 || self.k_reg > num_classes) {
            return Err(Error::InvalidKReg {
                k_reg: self.k_reg,
                num_classes,
            });
        }
        if let (true, UMode::Fixed(u)) = (self.kind.uses_u(), self.u_mode) {
            check_u(u)?;
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `raps(lambda=0.02,k_reg=3)`.
    pub fn label(&self) -> String {
        match self.kind {
            ScoreKind::Raps => format!("raps(lambda={},k_reg={})", self.lambda, self.k_reg),
            ScoreKind::RePip => format!("repip(gamma={},k_reg={})", self.gamma, self.k_reg),
            kind => kind.to_string(),
        }
    }
}

fn check_weight(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::NegativeHyperparameter { name, value })
    }
}

fn check_u(u: f64) -> Result<()> {
    if u > 0.0 && u <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidU(u))
    }
}

fn rank_penalty(weight: f64, rank: usize, k_reg: usize) -> f64 {
    weight * rank.saturating_sub(k_reg) as f64
}

/// Inverse probability (hinge) score `1 - p_y`.
pub fn score_ip(p: &ProbabilityVector, y: usize) -> Result<f64> {
    p.check_class(y)?;
    Ok(1.0 - p.get(y))
}

/// Margin score: best competing probability minus `p_y`.
pub fn score_ms(p: &ProbabilityVector, y: usize) -> Result<f64> {
    p.check_class(y)?;
    let max_other = p
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(max_other - p.get(y))
}

/// Adaptive prediction sets: mass ranked strictly above `y` plus `u * p_y`.
pub fn score_aps(p: &ProbabilityVector, y: usize, u: f64) -> Result<f64> {
    p.check_class(y)?;
    check_u(u)?;
    let ranking = rank(p);
    let r = ranking.rank_of(y);
    let above: f64 = ranking.sorted_probs()[..r - 1].iter().sum();
    Ok(above + u * ranking.sorted_probs()[r - 1])
}

/// APS plus `lambda * (R(y) - k_reg)^+`.
pub fn score_raps(p: &ProbabilityVector, y: usize, u: f64, lambda: f64, k_reg: usize) -> Result<f64> {
    check_weight("lambda", lambda)?;
    let aps = score_aps(p, y, u)?;
    Ok(aps + rank_penalty(lambda, rank(p).rank_of(y), k_reg))
}

/// `1 - p_y` plus the higher-ranked probabilities weighted by inverse rank.
pub fn score_pip(p: &ProbabilityVector, y: usize) -> Result<f64> {
    p.check_class(y)?;
    let ranking = rank(p);
    let r = ranking.rank_of(y);
    let penalty: f64 = ranking.sorted_probs()[..r - 1]
        .iter()
        .enumerate()
        .map(|(i, &v)| v / (i + 1) as f64)
        .sum();
    Ok((1.0 - p.get(y)) + penalty)
}

/// PIP plus `gamma * (R(y) - k_reg)^+`.
pub fn score_repip(p: &ProbabilityVector, y: usize, gamma: f64, k_reg: usize) -> Result<f64> {
    check_weight("gamma", gamma)?;
    let pip = score_pip(p, y)?;
    Ok(pip + rank_penalty(gamma, rank(p).rank_of(y), k_reg))
}

/// Score of class `y` under `spec`.
pub fn score(p: &ProbabilityVector, spec: &ScoreSpec, y: usize, u: f64) -> Result<f64> {
    match spec.kind {
        ScoreKind::Ip => score_ip(p, y),
        ScoreKind::Ms => score_ms(p, y),
        ScoreKind::Aps => score_aps(p, y, u),
        ScoreKind::Raps => score_raps(p, y, u, spec.lambda, spec.k_reg),
        ScoreKind::Pip => score_pip(p, y),
        ScoreKind::RePip => score_repip(p, y, spec.gamma, spec.k_reg),
    }
}

/// Scores of every class for one object, sharing a single ranking and a
/// single `u`. Runs in `O(K log K)`.
pub fn score_all_classes(p: &ProbabilityVector, spec: &ScoreSpec, u: f64) -> Result<Vec<f64>> {
    let k = p.num_classes();
    spec.validate(k)?;
    if spec.kind.uses_u() {
        check_u(u)?;
    }
    let probs = p.as_slice();
    match spec.kind {
        ScoreKind::Ip => return Ok(probs.iter().map(|&v| 1.0 - v).collect()),
        ScoreKind::Ms => {
            let ranking = rank(p);
            return Ok((0..k).map(|y| ranking.max_other(y) - probs[y]).collect());
        }
        _ => {}
    }

    let ranking = rank(p);
    let sorted = ranking.sorted_probs();
    // prefix[r] holds the rank-ordered sum over the first r entries, matching
    // the summation order of the scalar functions.
    let mut prefix = Vec::with_capacity(k);
    let mut acc = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        prefix.push(acc);
        acc += match spec.kind {
            ScoreKind::Pip | ScoreKind::RePip => v / (i + 1) as f64,
            _ => v,
        };
    }

    let scores = (0..k)
        .map(|y| {
            let r = ranking.rank_of(y);
            match spec.kind {
                ScoreKind::Aps => prefix[r - 1] + u * sorted[r - 1],
                ScoreKind::Raps => {
                    prefix[r - 1] + u * sorted[r - 1] + rank_penalty(spec.lambda, r, spec.k_reg)
                }
                ScoreKind::Pip => (1.0 - probs[y]) + prefix[r - 1],
                ScoreKind::RePip => {
                    (1.0 - probs[y]) + prefix[r - 1] + rank_penalty(spec.gamma, r, spec.k_reg)
                }
                ScoreKind::Ip | ScoreKind::Ms => unreachable!(),
            }
        })
        .collect();
    Ok(scores)
}
