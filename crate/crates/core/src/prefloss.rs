//! Preference loss kernels over candidate sequence log-probabilities.
//!
//! A [`LossBatch`] holds, for one prompt, the policy and reference
//! log-probabilities of `N + 1` candidates with the gold output at index 0.
//! With implicit rewards `s_i = beta * (policy_i - ref_i)`:
//!
//! ```text
//! ce       = -policy_0
//! dpo      = -log sigmoid(s_0 - s_j)                  (two candidates)
//! listwise = -log softmax(s)_0 = logsumexp(s) - s_0
//! hybrid   = (1 - lambda) * listwise + lambda * ce
//! ```
//!
//! Every kernel returns its value together with the analytic gradient with
//! respect to the policy log-probabilities. [`finite_difference_check`]
//! verifies those gradients with central differences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::{pairwise_mean, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("policy has {policy} candidates but reference has {reference}")]
    LengthMismatch { policy: usize, reference: usize },
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("beta must be positive and finite")]
    InvalidBeta,
    #[error("lambda must lie in [0, 1]")]
    InvalidLambda,
    #[error("pairwise loss needs exactly 2 candidates, got {0}")]
    NotPairwise(usize),
    #[error("candidate index {index} out of range for {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("need one positive length per candidate")]
    InvalidLengths,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch<T> {
    policy_logp: Vec<T>,
    ref_logp: Vec<T>,
    beta: T,
    lambda: T,
}

impl<T: Scalar> LossBatch<T> {
    pub fn new(
        policy_logp: Vec<T>,
        ref_logp: Vec<T>,
        beta: T,
        lambda: T,
    ) -> Result<Self, LossError> {
        if policy_logp.len() != ref_logp.len() {
            return Err(LossError::LengthMismatch {
                policy: policy_logp.len(),
                reference: ref_logp.len(),
            });
        }
        if policy_logp.iter().chain(&ref_logp).any(|v| !v.is_finite())
            || !beta.is_finite()
            || !lambda.is_finite()
        {
            return Err(LossError::NonFinite);
        }
        if policy_logp.len() < 2 {
            return Err(LossError::TooFewCandidates(policy_logp.len()));
        }
        if beta.is_nan() || beta <= T::zero() {
            return Err(LossError::InvalidBeta);
        }
        if !(T::zero()..=T::one()).contains(&lambda) {
            return Err(LossError::InvalidLambda);
        }
        Ok(LossBatch {
            policy_logp,
            ref_logp,
            beta,
            lambda,
        })
    }

    pub fn policy_logp(&self) -> &[T] {
        &self.policy_logp
    }

    pub fn ref_logp(&self) -> &[T] {
        &self.ref_logp
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Number of candidates, `N + 1`.
    pub fn len(&self) -> usize {
        self.policy_logp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policy_logp.is_empty()
    }

    /// Same batch with a different policy vector.
    pub fn with_policy(&self, policy_logp: Vec<T>) -> Result<Self, LossError> {
        LossBatch::new(policy_logp, self.ref_logp.clone(), self.beta, self.lambda)
    }

    /// The two-candidate batch `{gold, j}`.
    pub fn pair(&self, j: usize) -> Result<Self, LossError> {
        if j == 0 || j >= self.len() {
            return Err(LossError::IndexOutOfRange {
                index: j,
                len: self.len(),
            });
        }
        LossBatch::new(
            vec![self.policy_logp[0], self.policy_logp[j]],
            vec![self.ref_logp[0], self.ref_logp[j]],
            self.beta,
            self.lambda,
        )
    }

    /// Divides every log-probability by its candidate's token length.
    /// Off by default: the kernels use raw sequence log-probabilities.
    pub fn length_normalized(&self, lengths: &[usize]) -> Result<Self, LossError> {
        if lengths.len() != self.len() || lengths.contains(&0) {
            return Err(LossError::InvalidLengths);
        }
        let norm = |v: &[T]| -> Vec<T> {
            v.iter()
                .zip(lengths)
                .map(|(&x, &n)| x / T::from_usize(n).expect("length fits scalar"))
                .collect()
        };
        LossBatch::new(
            norm(&self.policy_logp),
            norm(&self.ref_logp),
            self.beta,
            self.lambda,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<T> {
    pub value: T,
    /// d value / d policy_logp_i.
    pub gradient: Vec<T>,
    /// Implicit rewards `s_i`.
    pub rewards: Vec<T>,
    /// Softmax of the rewards over all candidates.
    pub distribution: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Dpo,
    Listwise,
    Hybrid,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Ce,
        LossKind::Dpo,
        LossKind::Listwise,
        LossKind::Hybrid,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Dpo => "dpo",
            LossKind::Listwise => "listwise",
            LossKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ce" => Ok(LossKind::Ce),
            "dpo" | "pairwise" | "dpo_pairwise" => Ok(LossKind::Dpo),
            "listwise" => Ok(LossKind::Listwise),
            "hybrid" => Ok(LossKind::Hybrid),
            other => Err(format!("unknown loss kind {other:?}")),
        }
    }
}

pub fn implicit_rewards<T: Scalar>(batch: &LossBatch<T>) -> Vec<T> {
    batch
        .policy_logp
        .iter()
        .zip(&batch.ref_logp)
        .map(|(&p, &r)| batch.beta * (p - r))
        .collect()
}

fn max_of<T: Scalar>(s: &[T]) -> T {
    s.iter().copied().fold(T::neg_infinity(), T::max)
}

pub fn logsumexp<T: Scalar>(s: &[T]) -> T {
    let m = max_of(s);
    if !m.is_finite() {
        return m;
    }
    m + s.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

/// Softmax with max-subtraction.
pub fn listwise_distribution<T: Scalar>(s: &[T]) -> Vec<T> {
    let m = max_of(s);
    let e: Vec<T> = s.iter().map(|&x| (x - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log sigmoid(x)` without overflow for large `|x|`.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn diagnostics<T: Scalar>(batch: &LossBatch<T>) -> (Vec<T>, Vec<T>) {
    let rewards = implicit_rewards(batch);
    let distribution = listwise_distribution(&rewards);
    (rewards, distribution)
}

pub fn loss_ce<T: Scalar>(batch: &LossBatch<T>) -> LossResult<T> {
    let (rewards, distribution) = diagnostics(batch);
    let mut gradient = vec![T::zero(); batch.len()];
    gradient[0] = -T::one();
    LossResult {
        value: -batch.policy_logp[0],
        gradient,
        rewards,
        distribution,
    }
}

/// Pairwise DPO on a two-candidate batch (winner at index 0).
pub fn loss_dpo_pairwise<T: Scalar>(batch: &LossBatch<T>) -> Result<LossResult<T>, LossError> {
    if batch.len() != 2 {
        return Err(LossError::NotPairwise(batch.len()));
    }
    let (rewards, distribution) = diagnostics(batch);
    let margin = rewards[0] - rewards[1];
    let push = batch.beta * sigmoid(-margin);
    Ok(LossResult {
        value: -log_sigmoid(margin),
        gradient: vec![-push, push],
        rewards,
        distribution,
    })
}

/// Listwise softmax cross-entropy with all target mass on the gold
/// candidate.
pub fn loss_listwise<T: Scalar>(batch: &LossBatch<T>) -> LossResult<T> {
    let (rewards, distribution) = diagnostics(batch);
    let value = logsumexp(&rewards) - rewards[0];
    let gradient = distribution
        .iter()
        .enumerate()
        .map(|(i, &p)| batch.beta * if i == 0 { p - T::one() } else { p })
        .collect();
    LossResult {
        value,
        gradient,
        rewards,
        distribution,
    }
}

pub fn loss_hybrid<T: Scalar>(batch: &LossBatch<T>) -> LossResult<T> {
    let list = loss_listwise(batch);
    let ce = loss_ce(batch);
    let lambda = batch.lambda;
    let keep = T::one() - lambda;
    LossResult {
        value: keep * list.value + lambda * ce.value,
        gradient: list
            .gradient
            .iter()
            .zip(&ce.gradient)
            .map(|(&gl, &gc)| keep * gl + lambda * gc)
            .collect(),
        rewards: list.rewards,
        distribution: list.distribution,
    }
}

pub fn evaluate<T: Scalar>(
    kind: LossKind,
    batch: &LossBatch<T>,
) -> Result<LossResult<T>, LossError> {
    match kind {
        LossKind::Ce => Ok(loss_ce(batch)),
        LossKind::Dpo => loss_dpo_pairwise(batch),
        LossKind::Listwise => Ok(loss_listwise(batch)),
        LossKind::Hybrid => Ok(loss_hybrid(batch)),
    }
}

/// Mean of per-sample loss values with pairwise summation.
pub fn mean_loss<T: Scalar>(results: &[LossResult<T>]) -> T {
    let values: Vec<T> = results.iter().map(|r| r.value).collect();
    pairwise_mean(&values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck<T> {
    pub analytic: Vec<T>,
    pub numeric: Vec<T>,
    /// Max over coordinates of `|a - n| / max(|a|, |n|, 1)`.
    pub max_rel_error: T,
}

impl<T: Scalar> GradCheck<T> {
    pub fn passes(&self, tolerance: T) -> bool {
        self.max_rel_error < tolerance
    }
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_FD_TOLERANCE: f64 = 1e-6;

/// Relative error with the denominator floored at 1.
pub fn relative_error<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / a.abs().max(b.abs()).max(T::one())
}

/// Compares the analytic gradient of `kind` against central differences
/// with step `h` on every policy coordinate.
pub fn finite_difference_check<T: Scalar>(
    kind: LossKind,
    batch: &LossBatch<T>,
    h: T,
) -> Result<GradCheck<T>, LossError> {
    let analytic = evaluate(kind, batch)?.gradient;
    let two_h = h + h;
    let mut numeric = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let mut plus = batch.policy_logp.clone();
        let mut minus = batch.policy_logp.clone();
        plus[i] = plus[i] + h;
        minus[i] = minus[i] - h;
        let fp = evaluate(kind, &batch.with_policy(plus)?)?.value;
        let fm = evaluate(kind, &batch.with_policy(minus)?)?.value;
        numeric.push((fp - fm) / two_h);
    }
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(T::zero(), T::max);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error,
    })
}
