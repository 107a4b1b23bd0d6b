//! Empirical CVaR machinery and the two fairness losses.
//!
//! Every objective here has the piecewise-linear form
//!
//! ```text
//! F(λ) = λ + 1/(α·c) · Σ_i [ℓ_i − λ]_+
//! ```
//!
//! whose minimizer is the k-th largest loss with `k = ⌈α·c⌉`. The
//! demographic-agnostic loss applies it once over all samples. The
//! demographic-aware loss applies it inside every group (`α_g`, `n_g`) and then
//! again over the resulting group losses (`α`, `|G|`).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// Relative slack used when snapping `α·c` to an integer before taking the ceiling.
const TAIL_COUNT_SNAP: f64 = 1e-9;
const BISECTION_MAX_ITERS: usize = 200;
const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("loss vector is empty")]
    Empty,
    #[error("loss at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("alpha must lie in (0, 1], got {alpha}")]
    InvalidAlpha { alpha: f64 },
    #[error("scale count must be at least 1")]
    InvalidScaleCount,
    #[error("k = {k} is outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("objective is unbounded below: alpha * scale_count = {mass} exceeds the {n} available losses")]
    Unbounded { mass: f64, n: usize },
    #[error("partition has no groups")]
    EmptyPartition,
    #[error("group `{group}` has no members")]
    EmptyGroup { group: String },
    #[error("group `{group}` is declared twice")]
    DuplicateGroup { group: String },
    #[error("partition covers {partition} samples but {losses} losses were given")]
    SizeMismatch { partition: usize, losses: usize },
    #[error("sample {index} refers to unknown group index {group}")]
    UnknownGroup { index: usize, group: usize },
}

/// Per-sample losses; non-empty and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> LossVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, LossError> {
        if values.is_empty() {
            return Err(LossError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(LossError::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[T]) -> Result<Self, LossError> {
        Self::new(values.to_vec())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    /// Indices sorted by (value descending, index ascending).
    pub fn descending_order(&self) -> Vec<usize> {
        descending_order(&self.values)
    }
}

/// CVaR level and the count that the `1/(α·c)` factor divides by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvarParams<T> {
    alpha: T,
    scale_count: usize,
}

impl<T: Scalar> CvarParams<T> {
    pub fn new(alpha: T, scale_count: usize) -> Result<Self, LossError> {
        check_alpha(alpha)?;
        if scale_count == 0 {
            return Err(LossError::InvalidScaleCount);
        }
        Ok(Self { alpha, scale_count })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn scale_count(&self) -> usize {
        self.scale_count
    }

    /// `α · c`, the tail mass measured in samples.
    pub fn tail_mass(&self) -> T {
        self.alpha * T::from_count(self.scale_count)
    }

    /// `k = ⌈α·c⌉` clamped to `[1, n]`.
    ///
    /// Products that land within a relative 1e-9 of an integer are snapped to
    /// it first, so `0.7 · 10` gives 7 rather than 8.
    pub fn tail_count(&self, n: usize) -> usize {
        let mass = self.tail_mass().to_f64_lossy();
        let nearest = mass.round();
        let k = if (mass - nearest).abs() <= TAIL_COUNT_SNAP * mass.max(1.0) {
            nearest
        } else {
            mass.ceil()
        };
        (k as usize).clamp(1, n.max(1))
    }

    fn inverse_mass(&self) -> T {
        T::one() / self.tail_mass()
    }

    fn check_bounded(&self, n: usize) -> Result<(), LossError> {
        if self.tail_count(n) == n && self.tail_mass().to_f64_lossy() > n as f64 * (1.0 + TAIL_COUNT_SNAP) {
            return Err(LossError::Unbounded {
                mass: self.tail_mass().to_f64_lossy(),
                n,
            });
        }
        Ok(())
    }
}

/// Disjoint assignment of sample indices to labelled groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    labels: Vec<String>,
    membership: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl GroupPartition {
    /// Builds a partition from one label per sample. Groups are ordered by label.
    pub fn from_labels<S: AsRef<str>>(sample_labels: &[S]) -> Result<Self, LossError> {
        if sample_labels.is_empty() {
            return Err(LossError::EmptyPartition);
        }
        let mut index_of: BTreeMap<&str, usize> = BTreeMap::new();
        for label in sample_labels {
            index_of.entry(label.as_ref()).or_insert(0);
        }
        for (i, slot) in index_of.values_mut().enumerate() {
            *slot = i;
        }
        let labels = index_of.keys().map(|s| s.to_string()).collect();
        let membership = sample_labels.iter().map(|l| index_of[l.as_ref()]).collect();
        Self::new(labels, membership)
    }

    /// Builds a partition from explicit group labels and per-sample group indices.
    pub fn new(labels: Vec<String>, membership: Vec<usize>) -> Result<Self, LossError> {
        if labels.is_empty() {
            return Err(LossError::EmptyPartition);
        }
        let mut seen = std::collections::BTreeSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(LossError::DuplicateGroup { group: label.clone() });
            }
        }
        let mut members = vec![Vec::new(); labels.len()];
        for (index, &group) in membership.iter().enumerate() {
            if group >= labels.len() {
                return Err(LossError::UnknownGroup { index, group });
            }
            members[group].push(index);
        }
        if let Some(g) = members.iter().position(Vec::is_empty) {
            return Err(LossError::EmptyGroup {
                group: labels[g].clone(),
            });
        }
        Ok(Self {
            labels,
            membership,
            members,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.membership.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_of(&self, sample: usize) -> usize {
        self.membership[sample]
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn group_size(&self, group: usize) -> usize {
        self.members[group].len()
    }
}

/// Minimizer of a CVaR objective and the objective value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSolution<T> {
    pub lambda_star: T,
    pub objective: T,
}

/// Loss value, thresholds and activation pattern of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub per_group: Option<BTreeMap<String, T>>,
    pub lambda_outer: T,
    pub lambda_per_group: Option<BTreeMap<String, T>>,
    /// Sample contributes to the strict-indicator subgradient.
    pub active_mask: Vec<bool>,
}

/// How samples sitting exactly on the optimal threshold are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgradientRule {
    /// `1[ℓ_i > λ*]` as written in the update rule; the sample that defines
    /// `λ*` receives no weight.
    #[default]
    Strict,
    /// The sample that defines `λ*` receives the residual weight
    /// `1 − (k−1)/(α·c)`, which makes the weights the gradient of the
    /// minimized objective wherever the losses are untied.
    Exact,
}

pub fn hinge<T: Scalar>(x: T) -> T {
    x.max(T::zero())
}

/// `λ + 1/(α·c) · Σ [ℓ_i − λ]_+`.
pub fn cvar_objective<T: Scalar>(losses: &LossVector<T>, params: &CvarParams<T>, lambda: T) -> T {
    let excess = losses
        .as_slice()
        .iter()
        .fold(T::zero(), |acc, &l| acc + hinge(l - lambda));
    lambda + excess * params.inverse_mass()
}

/// Exact minimizer of [`cvar_objective`]: `λ*` is the `⌈α·c⌉`-th largest loss.
pub fn solve_lambda<T: Scalar>(losses: &LossVector<T>, params: &CvarParams<T>) -> Result<LambdaSolution<T>, LossError> {
    let order = losses.descending_order();
    solve_with_order(losses, params, &order)
}

fn solve_with_order<T: Scalar>(
    losses: &LossVector<T>,
    params: &CvarParams<T>,
    order: &[usize],
) -> Result<LambdaSolution<T>, LossError> {
    let n = losses.len();
    params.check_bounded(n)?;
    let k = params.tail_count(n);
    let values = losses.as_slice();
    let lambda_star = values[order[k - 1]];
    // only the k−1 losses ranked above λ* can exceed it; summing them in rank
    // order makes the result independent of sample order
    let excess = order[..k - 1]
        .iter()
        .fold(T::zero(), |acc, &i| acc + (values[i] - lambda_star));
    Ok(LambdaSolution {
        lambda_star,
        objective: lambda_star + excess * params.inverse_mass(),
    })
}

/// Bisection on the sign of the objective's slope over `[min ℓ, max ℓ]`.
///
/// Slower and only accurate to the bisection tolerance; kept as an
/// independent cross-check of [`solve_lambda`].
pub fn solve_lambda_bisection<T: Scalar>(
    losses: &LossVector<T>,
    params: &CvarParams<T>,
) -> Result<LambdaSolution<T>, LossError> {
    let values = losses.as_slice();
    params.check_bounded(values.len())?;
    let mass = params.tail_mass();
    let mut lo = values.iter().copied().fold(T::infinity(), T::min);
    let mut hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    let tol = T::from_f64_lossy(BISECTION_TOL) * T::one().max(hi - lo);
    for _ in 0..BISECTION_MAX_ITERS {
        if hi - lo <= tol {
            break;
        }
        let mid = lo + (hi - lo) / T::from_f64_lossy(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        let above = values.iter().filter(|&&l| l > mid).count();
        // slope = 1 − above/mass; negative slope means the minimum lies right of mid
        if T::from_count(above) > mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaSolution {
        lambda_star: hi,
        objective: cvar_objective(losses, params, hi),
    })
}

/// Mean of the `k` largest losses.
pub fn top_k_average<T: Scalar>(losses: &LossVector<T>, k: usize) -> Result<T, LossError> {
    let n = losses.len();
    if k == 0 || k > n {
        return Err(LossError::KOutOfRange { k, n });
    }
    let values = losses.as_slice();
    let order = losses.descending_order();
    let sum = order[..k].iter().fold(T::zero(), |acc, &i| acc + values[i]);
    Ok(sum / T::from_count(k))
}

/// Empirical CVaR over all samples.
pub fn dag_fdd_loss<T: Scalar>(losses: &LossVector<T>, alpha: T) -> Result<LossBreakdown<T>, LossError> {
    let params = CvarParams::new(alpha, losses.len())?;
    let solution = solve_lambda(losses, &params)?;
    let active_mask = losses.as_slice().iter().map(|&l| l > solution.lambda_star).collect();
    Ok(LossBreakdown {
        total: solution.objective,
        per_group: None,
        lambda_outer: solution.lambda_star,
        lambda_per_group: None,
        active_mask,
    })
}

/// Inner CVaR of one group, equal to the top-`k_g` average when `α_g·n_g` is integral.
///
/// `α_g < 1/n_g` is accepted and behaves like `k_g = 1` (the group maximum).
pub fn group_loss<T: Scalar>(losses: &LossVector<T>, alpha_g: T) -> Result<LambdaSolution<T>, LossError> {
    let params = CvarParams::new(alpha_g, losses.len())?;
    solve_lambda(losses, &params)
}

struct GroupSolve<T> {
    losses: Vec<LossVector<T>>,
    orders: Vec<Vec<usize>>,
    inner: Vec<LambdaSolution<T>>,
    group_losses: LossVector<T>,
    outer: LambdaSolution<T>,
    outer_order: Vec<usize>,
}

fn solve_groups<T: Scalar>(
    losses: &LossVector<T>,
    partition: &GroupPartition,
    alpha: T,
    alpha_g: T,
) -> Result<GroupSolve<T>, LossError> {
    check_alpha(alpha)?;
    check_alpha(alpha_g)?;
    if partition.num_samples() != losses.len() {
        return Err(LossError::SizeMismatch {
            partition: partition.num_samples(),
            losses: losses.len(),
        });
    }
    let values = losses.as_slice();
    let mut group_vecs = Vec::with_capacity(partition.num_groups());
    let mut orders = Vec::with_capacity(partition.num_groups());
    let mut inner = Vec::with_capacity(partition.num_groups());
    for g in 0..partition.num_groups() {
        let group = LossVector {
            values: partition.members(g).iter().map(|&i| values[i]).collect(),
        };
        let order = group.descending_order();
        let params = CvarParams::new(alpha_g, group.len())?;
        inner.push(solve_with_order(&group, &params, &order)?);
        orders.push(order);
        group_vecs.push(group);
    }
    let group_losses = LossVector::new(inner.iter().map(|s| s.objective).collect())?;
    let outer_params = CvarParams::new(alpha, group_losses.len())?;
    let outer_order = group_losses.descending_order();
    let outer = solve_with_order(&group_losses, &outer_params, &outer_order)?;
    Ok(GroupSolve {
        losses: group_vecs,
        orders,
        inner,
        group_losses,
        outer,
        outer_order,
    })
}

/// Outer CVaR (level `α`, over groups) of inner per-group CVaRs (level `α_g`).
pub fn daw_fdd_loss<T: Scalar>(
    losses: &LossVector<T>,
    partition: &GroupPartition,
    alpha: T,
    alpha_g: T,
) -> Result<LossBreakdown<T>, LossError> {
    let solve = solve_groups(losses, partition, alpha, alpha_g)?;
    let labels = partition.labels();
    let per_group = labels
        .iter()
        .zip(&solve.inner)
        .map(|(l, s)| (l.clone(), s.objective))
        .collect();
    let lambda_per_group = labels
        .iter()
        .zip(&solve.inner)
        .map(|(l, s)| (l.clone(), s.lambda_star))
        .collect();
    let active_mask = losses
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let g = partition.group_of(i);
            l > solve.inner[g].lambda_star && solve.inner[g].objective > solve.outer.lambda_star
        })
        .collect();
    Ok(LossBreakdown {
        total: solve.outer.objective,
        per_group: Some(per_group),
        lambda_outer: solve.outer.lambda_star,
        lambda_per_group: Some(lambda_per_group),
        active_mask,
    })
}

/// Per-item weights `w_i` such that `Σ_i w_i ∇ℓ_i` is a subgradient of the
/// minimized CVaR objective.
fn cvar_weights<T: Scalar>(
    losses: &LossVector<T>,
    params: &CvarParams<T>,
    order: &[usize],
    lambda_star: T,
    rule: SubgradientRule,
) -> Vec<T> {
    let values = losses.as_slice();
    let scale = params.inverse_mass();
    match rule {
        SubgradientRule::Strict => values
            .iter()
            .map(|&l| if l > lambda_star { scale } else { T::zero() })
            .collect(),
        SubgradientRule::Exact => {
            let k = params.tail_count(values.len());
            let mut weights = vec![T::zero(); values.len()];
            for &i in &order[..k - 1] {
                weights[i] = scale;
            }
            let residual = T::one() - T::from_count(k - 1) * scale;
            weights[order[k - 1]] = residual.max(T::zero());
            weights
        }
    }
}

/// Per-sample weights for the demographic-agnostic update.
///
/// Under [`SubgradientRule::Strict`], `w_i = 1/(α·n) · 1[ℓ_i > λ*]`.
pub fn dag_fdd_grad_scale<T: Scalar>(
    losses: &LossVector<T>,
    alpha: T,
    rule: SubgradientRule,
) -> Result<Vec<T>, LossError> {
    let params = CvarParams::new(alpha, losses.len())?;
    let order = losses.descending_order();
    let solution = solve_with_order(losses, &params, &order)?;
    Ok(cvar_weights(losses, &params, &order, solution.lambda_star, rule))
}

/// Per-sample weights for the demographic-aware update.
///
/// Under [`SubgradientRule::Strict`],
/// `w_i = 1/(α|G|) · 1/(α_g n_g) · 1[ℓ_i > λ_{g(i)}] · 1[L_{g(i)} > λ]`.
pub fn daw_fdd_grad_scale<T: Scalar>(
    losses: &LossVector<T>,
    partition: &GroupPartition,
    alpha: T,
    alpha_g: T,
    rule: SubgradientRule,
) -> Result<Vec<T>, LossError> {
    let solve = solve_groups(losses, partition, alpha, alpha_g)?;
    let outer_params = CvarParams::new(alpha, solve.group_losses.len())?;
    let group_weights = cvar_weights(
        &solve.group_losses,
        &outer_params,
        &solve.outer_order,
        solve.outer.lambda_star,
        rule,
    );
    let mut weights = vec![T::zero(); losses.len()];
    for (g, &group_weight) in group_weights.iter().enumerate() {
        if group_weight == T::zero() {
            continue;
        }
        let params = CvarParams::new(alpha_g, solve.losses[g].len())?;
        let inner = cvar_weights(
            &solve.losses[g],
            &params,
            &solve.orders[g],
            solve.inner[g].lambda_star,
            rule,
        );
        for (&sample, w) in partition.members(g).iter().zip(inner) {
            weights[sample] = group_weight * w;
        }
    }
    Ok(weights)
}

/// CVaR of the mean-centred group losses; zero when all groups are equal.
pub fn deviation_measure<T: Scalar>(group_losses: &[T], alpha: T) -> Result<T, LossError> {
    let losses = LossVector::from_slice(group_losses)?;
    let n = T::from_count(losses.len());
    let mean = group_losses.iter().fold(T::zero(), |a, &b| a + b) / n;
    let centered = LossVector::new(group_losses.iter().map(|&l| l - mean).collect())?;
    let params = CvarParams::new(alpha, centered.len())?;
    Ok(solve_lambda(&centered, &params)?.objective)
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<(), LossError> {
    if !(alpha > T::zero() && alpha <= T::one()) {
        return Err(LossError::InvalidAlpha {
            alpha: alpha.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

fn descending_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}
