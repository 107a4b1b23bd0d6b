//! Minibatch training, evaluation and the hyperparameter sweep.
//!
//! Every batch computes per-sample BCE losses, re-solves the CVaR thresholds
//! on that batch and takes one plain SGD step `θ ← θ − η Σ_i w_i ∇ℓ_i` with
//! the weights from [`crate::losses`]. The baseline uses `w_i = 1/|batch|`.
//!
//! DAW-FDD batches only see the groups that happen to be present: the outer
//! CVaR runs over those groups. Batches are drawn with group-stratified
//! shuffling, so every group with at least `n / batch_size` members shows up in
//! every batch.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Grouping};
use crate::losses::{
    dag_fdd_grad_scale, dag_fdd_loss, daw_fdd_grad_scale, daw_fdd_loss, GroupPartition, LossBreakdown, LossError,
    LossVector, SubgradientRule,
};
use crate::metrics::{
    metrics_report, overall_metrics, EvalRecord, MetricsError, MetricsReport, OverallMetrics, DEFAULT_THRESHOLD,
};
use crate::model::{bce_loss, Architecture, Checkpoint, ModelError, ModelParams};
use crate::rng;

/// Values reported for the FF++/Xception setting, used as defaults.
pub const DEFAULT_DAG_ALPHA: f64 = 0.5;
pub const DEFAULT_DAW_ALPHA: f64 = 0.5;
pub const DEFAULT_DAW_ALPHA_G: f64 = 0.9;
pub const DEFAULT_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
/// Selected points may lose at most 5% of the baseline validation AUC.
pub const AUC_RETENTION: f64 = 0.95;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("non-finite loss at epoch {epoch}, batch {batch}, sample id {sample}")]
    NonFiniteLoss { epoch: usize, batch: usize, sample: u64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossMode {
    Baseline,
    DagFdd { alpha: f64 },
    DawFdd { alpha: f64, alpha_g: f64 },
}

impl LossMode {
    pub fn name(&self) -> &'static str {
        match self {
            LossMode::Baseline => "baseline",
            LossMode::DagFdd { .. } => "dag_fdd",
            LossMode::DawFdd { .. } => "daw_fdd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchitectureSpec {
    Logistic,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
}

fn default_hidden() -> usize {
    16
}

impl ArchitectureSpec {
    pub fn resolve(&self, dim: usize) -> Architecture {
        match *self {
            ArchitectureSpec::Logistic => Architecture::Logistic { dim },
            ArchitectureSpec::Mlp { hidden } => Architecture::Mlp { dim, hidden },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub architecture: ArchitectureSpec,
    /// Attribute(s) defining the groups of the demographic-aware loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_definition: Option<Grouping>,
    #[serde(default)]
    pub subgradient: SubgradientRule,
}

impl TrainConfig {
    /// Desk-scale defaults: batch 128, 50 epochs, η = 0.05 (logistic) or 0.01 (MLP).
    pub fn desk(loss: LossMode, architecture: ArchitectureSpec, seed: u64) -> Self {
        let learning_rate = match architecture {
            ArchitectureSpec::Logistic => 0.05,
            ArchitectureSpec::Mlp { .. } => 0.01,
        };
        Self {
            loss,
            epochs: 50,
            batch_size: 128,
            learning_rate,
            seed,
            architecture,
            group_definition: matches!(loss, LossMode::DawFdd { .. }).then_some(Grouping::Intersection),
            subgradient: SubgradientRule::Strict,
        }
    }

    /// Batch 640, 200 epochs, η = 5e-4.
    pub fn paper_profile(loss: LossMode, architecture: ArchitectureSpec, seed: u64) -> Self {
        Self {
            epochs: 200,
            batch_size: 640,
            learning_rate: 5e-4,
            ..Self::desk(loss, architecture, seed)
        }
    }

    pub fn with_loss(&self, loss: LossMode) -> Self {
        let mut c = self.clone();
        c.loss = loss;
        if matches!(loss, LossMode::DawFdd { .. }) && c.group_definition.is_none() {
            c.group_definition = Some(Grouping::Intersection);
        }
        c
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a positive finite number");
        }
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if let ArchitectureSpec::Mlp { hidden: 0 } = self.architecture {
            return bad("mlp hidden width must be ≥ 1");
        }
        let level_ok = |a: f64| a > 0.0 && a <= 1.0;
        match self.loss {
            LossMode::Baseline => {}
            LossMode::DagFdd { alpha } => {
                if !level_ok(alpha) {
                    return bad("alpha must lie in (0, 1]");
                }
            }
            LossMode::DawFdd { alpha, alpha_g } => {
                if !level_ok(alpha) || !level_ok(alpha_g) {
                    return bad("alpha and alpha_g must lie in (0, 1]");
                }
                if self.group_definition.is_none() {
                    return bad("daw_fdd requires the `group_definition` field");
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let config: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Training objective of the configured loss over the full training set,
    /// evaluated at the end of the epoch.
    pub train_loss: f64,
    /// Mean of the per-batch objectives seen during the epoch.
    pub batch_loss_mean: Option<f64>,
    /// Mean outer λ over the epoch's batches (CVaR modes only).
    pub lambda_mean: Option<f64>,
    /// Mean per-group λ over the batches containing the group (DAW-FDD only).
    pub lambda_per_group: Option<BTreeMap<String, f64>>,
    pub val: Option<MetricsReport>,
    pub val_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    /// State before the first update.
    pub initial: EpochLog,
    pub epochs: Vec<EpochLog>,
    pub final_params: Checkpoint,
}

impl TrainLog {
    pub fn params(&self) -> ModelParams<f64> {
        self.final_params
            .clone()
            .try_into()
            .expect("checkpoint produced by training is valid")
    }

    /// `epoch,loss,lambda,val_auc,val_f_fpr,val_g_fpr`, one row per epoch.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lambda,val_auc,val_f_fpr,val_g_fpr\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                opt(e.lambda_mean),
                opt(e.val.as_ref().map(|r| r.overall.auc)),
                opt(e.val.as_ref().map(|r| r.fairness.f_fpr)),
                opt(e.val.as_ref().map(|r| r.fairness.g_fpr)),
            );
        }
        out
    }
}

/// What one batch looked like; passed to the observer of [`train_with_observer`].
#[derive(Debug)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub losses: &'a [f64],
    pub group_keys: Vec<&'a str>,
    pub objective: f64,
    pub breakdown: Option<&'a LossBreakdown<f64>>,
    pub weights: &'a [f64],
}

struct Objective {
    value: f64,
    breakdown: Option<LossBreakdown<f64>>,
}

fn objective(mode: LossMode, losses: &LossVector<f64>, keys: &[&str]) -> Result<Objective, TrainError> {
    Ok(match mode {
        LossMode::Baseline => Objective {
            value: losses.as_slice().iter().sum::<f64>() / losses.len() as f64,
            breakdown: None,
        },
        LossMode::DagFdd { alpha } => {
            let b = dag_fdd_loss(losses, alpha)?;
            Objective {
                value: b.total,
                breakdown: Some(b),
            }
        }
        LossMode::DawFdd { alpha, alpha_g } => {
            let partition = GroupPartition::from_labels(keys)?;
            let b = daw_fdd_loss(losses, &partition, alpha, alpha_g)?;
            Objective {
                value: b.total,
                breakdown: Some(b),
            }
        }
    })
}

/// Per-sample gradient weights of one batch under `mode`.
pub fn sample_weights(
    mode: LossMode,
    rule: SubgradientRule,
    losses: &LossVector<f64>,
    keys: &[&str],
) -> Result<Vec<f64>, TrainError> {
    Ok(match mode {
        LossMode::Baseline => vec![1.0 / losses.len() as f64; losses.len()],
        LossMode::DagFdd { alpha } => dag_fdd_grad_scale(losses, alpha, rule)?,
        LossMode::DawFdd { alpha, alpha_g } => {
            let partition = GroupPartition::from_labels(keys)?;
            daw_fdd_grad_scale(losses, &partition, alpha, alpha_g, rule)?
        }
    })
}

/// Value of the `mode` objective on one batch; `keys` are the batch's group keys.
pub fn mode_objective(mode: LossMode, losses: &LossVector<f64>, keys: &[&str]) -> Result<f64, TrainError> {
    Ok(objective(mode, losses, keys)?.value)
}

/// Per-sample BCE of `params` over `indices` of `dataset`.
pub fn sample_losses(params: &ModelParams<f64>, dataset: &Dataset, indices: &[usize]) -> Result<Vec<f64>, TrainError> {
    let samples = dataset.samples();
    indices
        .iter()
        .map(|&i| {
            let s = &samples[i];
            Ok(bce_loss(&params.forward(&s.features)?, s.label))
        })
        .collect()
}

/// `Σ_i w_i ∇_θ ℓ_i` over `indices`, accumulated in index order.
pub fn weighted_gradient(
    params: &ModelParams<f64>,
    dataset: &Dataset,
    indices: &[usize],
    weights: &[f64],
) -> Result<Vec<f64>, TrainError> {
    let mut grad = vec![0.0; params.weights().len()];
    weighted_gradient_into(params, dataset, indices, weights, &mut grad)?;
    Ok(grad)
}

fn weighted_gradient_into(
    params: &ModelParams<f64>,
    dataset: &Dataset,
    indices: &[usize],
    weights: &[f64],
    grad: &mut [f64],
) -> Result<(), TrainError> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    for (&i, &w) in indices.iter().zip(weights) {
        let s = &dataset.samples()[i];
        params.accumulate_backward(&s.features, s.label, w, grad)?;
    }
    Ok(())
}

/// Orders sample indices so that every stratum is spread evenly along the
/// sequence: each stratum is shuffled, its j-th member gets position
/// `(j + u)/n_stratum` for a per-stratum offset `u ~ U(0,1)`, and the sequence
/// is sorted by position.
fn stratified_order<R: Rng>(strata: &[usize], num_strata: usize, rng: &mut R) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_strata];
    for (i, &s) in strata.iter().enumerate() {
        members[s].push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(strata.len());
    for (s, m) in members.iter_mut().enumerate() {
        m.shuffle(rng);
        let offset: f64 = rng.random();
        let n = m.len() as f64;
        keyed.extend(m.iter().enumerate().map(|(j, &i)| ((j as f64 + offset) / n, s, i)));
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

pub fn train(train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<TrainLog, TrainError> {
    train_with_observer(train_set, val_set, config, |_| {})
}

/// [`train`] with a callback invoked after every batch's weights are computed.
pub fn train_with_observer<F>(
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    mut observer: F,
) -> Result<TrainLog, TrainError>
where
    F: FnMut(&BatchEvent<'_>),
{
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let architecture = config.architecture.resolve(train_set.dim());
    let mut params = ModelParams::<f64>::init(architecture, &mut rng::derived(config.seed, 0))?;
    let mut shuffle_rng = rng::derived(config.seed, 1);

    let loss_keys = train_set.group_keys(config.group_definition.unwrap_or(Grouping::Intersection))?;
    let strata_partition = train_set.partition(Grouping::Intersection)?;
    let all: Vec<usize> = (0..train_set.len()).collect();
    let all_keys: Vec<&str> = loss_keys.iter().map(String::as_str).collect();

    let summarize = |params: &ModelParams<f64>, epoch: usize| -> Result<EpochLog, TrainError> {
        let losses = LossVector::new(sample_losses(params, train_set, &all)?)?;
        let obj = objective(config.loss, &losses, &all_keys)?;
        let (val, val_error) = match validation_report(params, val_set) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(EpochLog {
            epoch,
            train_loss: obj.value,
            batch_loss_mean: None,
            lambda_mean: None,
            lambda_per_group: None,
            val,
            val_error,
        })
    };

    let initial = summarize(&params, 0)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0; architecture.num_weights()];
    for epoch in 1..=config.epochs {
        let order = stratified_order(
            strata_partition.membership(),
            strata_partition.num_groups(),
            &mut shuffle_rng,
        );
        let mut batch_objectives = Vec::new();
        let mut lambdas = Vec::new();
        let mut group_lambdas: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (batch, indices) in order.chunks(config.batch_size).enumerate() {
            let raw = sample_losses(&params, train_set, indices)?;
            if let Some(pos) = raw.iter().position(|l| !l.is_finite()) {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch,
                    sample: train_set.samples()[indices[pos]].id,
                });
            }
            let losses = LossVector::new(raw)?;
            let keys: Vec<&str> = indices.iter().map(|&i| loss_keys[i].as_str()).collect();
            let obj = objective(config.loss, &losses, &keys)?;
            let weights = sample_weights(config.loss, config.subgradient, &losses, &keys)?;
            observer(&BatchEvent {
                epoch,
                batch,
                losses: losses.as_slice(),
                group_keys: keys,
                objective: obj.value,
                breakdown: obj.breakdown.as_ref(),
                weights: &weights,
            });
            batch_objectives.push(obj.value);
            if let Some(b) = &obj.breakdown {
                lambdas.push(b.lambda_outer);
                for (g, &l) in b.lambda_per_group.iter().flatten() {
                    let e = group_lambdas.entry(g.clone()).or_insert((0.0, 0));
                    e.0 += l;
                    e.1 += 1;
                }
            }

            weighted_gradient_into(&params, train_set, indices, &weights, &mut grad)?;
            params = params.step(&grad, config.learning_rate)?;
        }
        let mut log = summarize(&params, epoch)?;
        log.batch_loss_mean = Some(mean(&batch_objectives));
        log.lambda_mean = (!lambdas.is_empty()).then(|| mean(&lambdas));
        if matches!(config.loss, LossMode::DawFdd { .. }) {
            log.lambda_per_group = Some(group_lambdas.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect());
        }
        epochs.push(log);
    }
    Ok(TrainLog {
        config: config.clone(),
        initial,
        epochs,
        final_params: Checkpoint::from(&params),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn validation_report(params: &ModelParams<f64>, val_set: &Dataset) -> Result<MetricsReport, TrainError> {
    let records = eval_records(params, val_set, Grouping::Intersection)?;
    Ok(metrics_report(&records, DEFAULT_THRESHOLD)?)
}

/// Scores every sample and tags it with its group key under `grouping`.
pub fn eval_records(
    params: &ModelParams<f64>,
    dataset: &Dataset,
    grouping: Grouping,
) -> Result<Vec<EvalRecord<f64>>, TrainError> {
    let keys = dataset.group_keys(grouping)?;
    dataset
        .samples()
        .iter()
        .zip(keys)
        .map(|(s, group)| {
            Ok(EvalRecord {
                score: params.forward(&s.features)?.score,
                label: s.label,
                group,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    pub grouping: Grouping,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: OverallMetrics,
    pub groupings: Vec<GroupingReport>,
}

/// Overall detection metrics plus one fairness report per requested grouping.
pub fn evaluate(
    params: &ModelParams<f64>,
    dataset: &Dataset,
    groupings: &[Grouping],
) -> Result<Evaluation, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::Data(DataError::Empty));
    }
    let records = eval_records(params, dataset, Grouping::Intersection)?;
    let overall = overall_metrics(&records, DEFAULT_THRESHOLD)?;
    let groupings = groupings
        .iter()
        .map(|&grouping| {
            let records = eval_records(params, dataset, grouping)?;
            Ok(GroupingReport {
                grouping,
                report: metrics_report(&records, DEFAULT_THRESHOLD)?,
            })
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(Evaluation { overall, groupings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    DagFdd,
    DawFdd,
}

impl SweepMode {
    fn grid_modes(&self, grid: &[f64]) -> Vec<LossMode> {
        match self {
            SweepMode::DagFdd => grid.iter().map(|&alpha| LossMode::DagFdd { alpha }).collect(),
            SweepMode::DawFdd => grid
                .iter()
                .flat_map(|&alpha| grid.iter().map(move |&alpha_g| LossMode::DawFdd { alpha, alpha_g }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub loss: LossMode,
    pub failed: bool,
    pub error: Option<String>,
    pub val_auc: Option<f64>,
    pub val_f_fpr: Option<f64>,
    pub val_g_fpr: Option<f64>,
    pub passes_filter: bool,
    pub report: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: SweepMode,
    pub grid: Vec<f64>,
    pub base_config: TrainConfig,
    pub baseline_val_auc: f64,
    pub baseline_report: MetricsReport,
    /// `AUC_RETENTION · baseline_val_auc`.
    pub auc_floor: f64,
    pub points: Vec<SweepPoint>,
    /// Index into `points`.
    pub chosen: Option<usize>,
    /// No point reached the AUC floor; `chosen` is then the best-AUC point.
    pub filter_empty: bool,
}

impl SweepResult {
    pub fn chosen_point(&self) -> Option<&SweepPoint> {
        self.chosen.map(|i| &self.points[i])
    }
}

/// A finished sweep with the trained parameters kept in memory.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub result: SweepResult,
    pub baseline: ModelParams<f64>,
    pub models: Vec<Option<ModelParams<f64>>>,
}

impl SweepOutcome {
    pub fn chosen_params(&self) -> Option<&ModelParams<f64>> {
        self.result.chosen.and_then(|i| self.models[i].as_ref())
    }
}

/// Picks the passing point with the smallest validation F_FPR (first on ties);
/// if nothing passes, the completed point with the largest validation AUC.
pub fn select_point(points: &[SweepPoint]) -> (Option<usize>, bool) {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if !p.passes_filter {
            continue;
        }
        let f = p.val_f_fpr.expect("passing points carry metrics");
        if best.is_none_or(|(_, b)| f < b) {
            best = Some((i, f));
        }
    }
    if let Some((i, _)) = best {
        return (Some(i), false);
    }
    let mut fallback: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(a) = p.val_auc {
            if fallback.is_none_or(|(_, b)| a > b) {
                fallback = Some((i, a));
            }
        }
    }
    (fallback.map(|(i, _)| i), true)
}

/// Trains the baseline with `base`, then one model per grid point, and
/// applies the selection rule on the validation set (intersection groups).
///
/// `jobs > 1` trains grid points on a thread pool; results do not depend on it.
pub fn sweep(
    train_set: &Dataset,
    val_set: &Dataset,
    base: &TrainConfig,
    mode: SweepMode,
    grid: &[f64],
    jobs: usize,
) -> Result<SweepOutcome, TrainError> {
    if grid.is_empty() {
        return Err(TrainError::Config("sweep grid is empty".into()));
    }
    let base = base.with_loss(LossMode::Baseline);
    base.validate()?;
    let baseline_log = train(train_set, val_set, &base)?;
    let baseline = baseline_log.params();
    let baseline_report = validation_report(&baseline, val_set)?;
    let baseline_val_auc = baseline_report.overall.auc;
    let auc_floor = AUC_RETENTION * baseline_val_auc;

    let run = |loss: LossMode| -> (SweepPoint, Option<ModelParams<f64>>) {
        let config = base.with_loss(loss);
        let outcome = train(train_set, val_set, &config).and_then(|log| {
            let params = log.params();
            let report = validation_report(&params, val_set)?;
            Ok((params, report))
        });
        match outcome {
            Ok((params, report)) => (
                SweepPoint {
                    loss,
                    failed: false,
                    error: None,
                    val_auc: Some(report.overall.auc),
                    val_f_fpr: Some(report.fairness.f_fpr),
                    val_g_fpr: Some(report.fairness.g_fpr),
                    passes_filter: report.overall.auc >= auc_floor,
                    report: Some(report),
                },
                Some(params),
            ),
            Err(e) => (
                SweepPoint {
                    loss,
                    failed: true,
                    error: Some(e.to_string()),
                    val_auc: None,
                    val_f_fpr: None,
                    val_g_fpr: None,
                    passes_filter: false,
                    report: None,
                },
                None,
            ),
        }
    };

    let modes = mode.grid_modes(grid);
    let results: Vec<(SweepPoint, Option<ModelParams<f64>>)> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TrainError::Config(format!("thread pool: {e}")))?;
        pool.install(|| modes.par_iter().map(|&m| run(m)).collect())
    } else {
        modes.iter().map(|&m| run(m)).collect()
    };
    let (points, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let (chosen, filter_empty) = select_point(&points);
    Ok(SweepOutcome {
        result: SweepResult {
            mode,
            grid: grid.to_vec(),
            base_config: base,
            baseline_val_auc,
            baseline_report,
            auc_floor,
            points,
            chosen,
            filter_empty,
        },
        baseline,
        models,
    })
}
