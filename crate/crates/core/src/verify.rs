//! Property checks behind the `verify` command.
//!
//! Each check compares the library against a brute-force reference written
//! out here (grid/breakpoint minimization, literal metric sums, central finite
//! differences) on seeded random instances.

use rand::Rng;

use crate::data::{Dataset, Label, Sample};
use crate::losses::{
    cvar_objective, dag_fdd_loss, daw_fdd_loss, deviation_measure, solve_lambda, solve_lambda_bisection, top_k_average,
    CvarParams, GroupPartition, LossVector, SubgradientRule,
};
use crate::metrics::{auc, confusion_rates, fairness_metrics, EvalRecord};
use crate::model::{bce_loss, Architecture, ModelParams};
use crate::rng::{self, DetRng};
use crate::trainer::{mode_objective, sample_losses, sample_weights, weighted_gradient, LossMode};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&mut DetRng) -> Result<String, String>;

const CHECKS: [(&str, Check); 10] = [
    ("top-k average equals minimized CVaR objective", check_top_k_equivalence),
    ("optimal threshold is an order statistic", check_order_statistic),
    ("order-statistic and bisection solvers agree", check_bisection),
    ("CVaR bounds every sufficiently large group mean", check_dro_bound),
    ("group CVaR = mean + deviation measure", check_decomposition),
    ("special-case presets (mean, CVaR of means, worst group)", check_presets),
    ("model gradients match finite differences", check_model_gradients),
    ("DAG-FDD gradients match finite differences", check_dag_gradients),
    ("DAW-FDD gradients match finite differences", check_daw_gradients),
    ("metrics match literal definitions", check_metrics),
];

/// Runs every check with a fixed seed.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, check))| {
            let mut r = rng::derived(seed, i as u64);
            match check(&mut r) {
                Ok(detail) => CheckOutcome {
                    name,
                    passed: true,
                    detail,
                },
                Err(detail) => CheckOutcome {
                    name,
                    passed: false,
                    detail,
                },
            }
        })
        .collect()
}

fn random_losses(r: &mut DetRng, max_n: usize) -> Vec<f64> {
    let n = r.random_range(1..=max_n);
    (0..n).map(|_| r.random_range(-5.0..5.0)).collect()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Minimum of `λ + Σ[ℓ−λ]_+ / mass` over the breakpoints `λ ∈ {ℓ_i}`.
fn breakpoint_minimum(losses: &[f64], mass: f64) -> f64 {
    losses
        .iter()
        .map(|&lambda| lambda + losses.iter().map(|&l| (l - lambda).max(0.0)).sum::<f64>() / mass)
        .fold(f64::INFINITY, f64::min)
}

fn check_top_k_equivalence(r: &mut DetRng) -> Result<String, String> {
    let mut cases = 0;
    for _ in 0..1000 {
        let v = random_losses(r, 50);
        let lv = LossVector::from_slice(&v).map_err(|e| e.to_string())?;
        for k in 1..=v.len() {
            let top = top_k_average(&lv, k).map_err(|e| e.to_string())?;
            let oracle = breakpoint_minimum(&v, k as f64);
            if !rel_close(top, oracle, 1e-9) {
                return Err(format!("n={} k={k}: top-k {top} vs minimum {oracle}", v.len()));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} (vector, k) pairs"))
}

fn check_order_statistic(r: &mut DetRng) -> Result<String, String> {
    for _ in 0..200 {
        let v = random_losses(r, 40);
        let alpha = r.random_range(0.01..=1.0);
        let lv = LossVector::from_slice(&v).unwrap();
        let p = CvarParams::new(alpha, v.len()).unwrap();
        let sol = solve_lambda(&lv, &p).map_err(|e| e.to_string())?;
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sol.lambda_star != sorted[p.tail_count(v.len()) - 1] {
            return Err(format!("λ* = {} is not the expected order statistic", sol.lambda_star));
        }
        let slack = 1e-12 * sol.objective.abs().max(1.0);
        let probes = (0..1000).map(|_| r.random_range(-6.0..6.0)).chain(v.iter().copied());
        for lambda in probes.collect::<Vec<_>>() {
            let f = cvar_objective(&lv, &p, lambda);
            if sol.objective > f + slack {
                return Err(format!("objective {} exceeds {f} at λ = {lambda}", sol.objective));
            }
        }
    }
    Ok("200 instances × 1000 probes".into())
}

fn check_bisection(r: &mut DetRng) -> Result<String, String> {
    for _ in 0..200 {
        let v = random_losses(r, 40);
        let alpha = r.random_range(0.01..=1.0);
        let lv = LossVector::from_slice(&v).unwrap();
        let p = CvarParams::new(alpha, v.len()).unwrap();
        let a = solve_lambda(&lv, &p).unwrap().objective;
        let b = solve_lambda_bisection(&lv, &p).unwrap().objective;
        if !rel_close(a, b, 1e-9) {
            return Err(format!("exact {a} vs bisection {b}"));
        }
    }
    Ok("200 instances".into())
}

fn random_partition(r: &mut DetRng, max_groups: usize, max_size: usize) -> Vec<usize> {
    let groups = r.random_range(1..=max_groups);
    let mut membership = Vec::new();
    for g in 0..groups {
        let size = r.random_range(1..=max_size);
        membership.extend(std::iter::repeat_n(g, size));
    }
    membership
}

fn group_means(v: &[f64], membership: &[usize]) -> Vec<f64> {
    let groups = membership.iter().max().map_or(0, |m| m + 1);
    (0..groups)
        .map(|g| {
            let members: Vec<f64> = v
                .iter()
                .zip(membership)
                .filter(|(_, &m)| m == g)
                .map(|(&x, _)| x)
                .collect();
            members.iter().sum::<f64>() / members.len() as f64
        })
        .collect()
}

fn check_dro_bound(r: &mut DetRng) -> Result<String, String> {
    for _ in 0..1000 {
        let membership = random_partition(r, 4, 10);
        let n = membership.len();
        let v: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let min_share = (0..=*membership.iter().max().unwrap())
            .map(|g| membership.iter().filter(|&&m| m == g).count())
            .min()
            .unwrap() as f64
            / n as f64;
        let alpha = min_share * r.random_range(0.05..1.0);
        let total = dag_fdd_loss(&LossVector::from_slice(&v).unwrap(), alpha).unwrap().total;
        let worst = group_means(&v, &membership)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if total < worst {
            return Err(format!("CVaR {total} below worst group mean {worst} (α = {alpha})"));
        }
    }
    Ok("1000 partitioned instances".into())
}

fn check_decomposition(r: &mut DetRng) -> Result<String, String> {
    for _ in 0..1000 {
        let g = random_losses(r, 12);
        let alpha = r.random_range(0.01..=1.0);
        let outer = solve_lambda(
            &LossVector::from_slice(&g).unwrap(),
            &CvarParams::new(alpha, g.len()).unwrap(),
        )
        .unwrap()
        .objective;
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let dev = deviation_measure(&g, alpha).unwrap();
        if !rel_close(outer, mean + dev, 1e-9) {
            return Err(format!("{outer} ≠ {mean} + {dev}"));
        }
    }
    Ok("1000 instances".into())
}

/// CVaR of `values` written as a fractional tail sum.
fn fractional_tail_mean(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mass = alpha * values.len() as f64;
    let mut remaining = mass;
    let mut acc = 0.0;
    for x in sorted {
        let take = remaining.min(1.0);
        if take <= 1e-12 {
            break;
        }
        acc += take * x;
        remaining -= take;
    }
    acc / mass
}

fn check_presets(r: &mut DetRng) -> Result<String, String> {
    for _ in 0..300 {
        let membership = random_partition(r, 5, 8);
        let v: Vec<f64> = (0..membership.len()).map(|_| r.random_range(0.0..4.0)).collect();
        let labels: Vec<String> = membership.iter().map(|m| format!("g{m}")).collect();
        let partition = GroupPartition::from_labels(&labels).unwrap();
        let lv = LossVector::from_slice(&v).unwrap();
        let means = group_means(&v, &membership);
        let groups = means.len() as f64;
        let mean_of_means = means.iter().sum::<f64>() / groups;
        let a = daw_fdd_loss(&lv, &partition, 1.0, 1.0).unwrap().total;
        if !rel_close(a, mean_of_means, 1e-12) {
            return Err(format!("mean of group means: {a} vs {mean_of_means}"));
        }
        let alpha = r.random_range(0.05..1.0);
        let b = daw_fdd_loss(&lv, &partition, alpha, 1.0).unwrap().total;
        let oracle = fractional_tail_mean(&means, alpha);
        if !rel_close(b, oracle, 1e-12) {
            return Err(format!("CVaR of group means at α = {alpha}: {b} vs {oracle}"));
        }
        let c = daw_fdd_loss(&lv, &partition, 1.0 / groups, 1.0).unwrap().total;
        let worst = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !rel_close(c, worst, 1e-12) {
            return Err(format!("worst group: {c} vs {worst}"));
        }
    }
    Ok("300 partitioned instances × 3 presets".into())
}

fn random_dataset(r: &mut DetRng, n: usize, dim: usize, groups: usize) -> Dataset {
    let samples = (0..n)
        .map(|i| Sample {
            id: i as u64,
            features: (0..dim).map(|_| r.random_range(-2.0..2.0)).collect(),
            label: if r.random_bool(0.5) { Label::Fake } else { Label::Real },
            group: format!("g{}", i % groups),
        })
        .collect();
    Dataset::new(dim, samples).unwrap()
}

fn random_params(r: &mut DetRng, arch: Architecture) -> ModelParams<f64> {
    let w = (0..arch.num_weights()).map(|_| r.random_range(-1.5..1.5)).collect();
    ModelParams::new(arch, w).unwrap()
}

fn central_difference<F: Fn(&ModelParams<f64>) -> f64>(params: &ModelParams<f64>, f: F, h: f64) -> Vec<f64> {
    (0..params.weights().len())
        .map(|i| {
            let mut plus = params.weights().to_vec();
            let mut minus = plus.clone();
            plus[i] += h;
            minus[i] -= h;
            (f(&params.with_weights(plus).unwrap()) - f(&params.with_weights(minus).unwrap())) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-8)
}

fn min_gap(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn relu_margin(params: &ModelParams<f64>, data: &Dataset) -> f64 {
    let Architecture::Mlp { dim, hidden } = params.architecture() else {
        return f64::INFINITY;
    };
    let w = params.weights();
    let mut margin = f64::INFINITY;
    for s in data.samples() {
        for j in 0..hidden {
            let pre: f64 = (0..dim).map(|i| w[j * dim + i] * s.features[i]).sum::<f64>() + w[dim * hidden + j];
            margin = margin.min(pre.abs());
        }
    }
    margin
}

const ARCHS: [Architecture; 2] = [
    Architecture::Logistic { dim: 3 },
    Architecture::Mlp { dim: 3, hidden: 4 },
];

fn check_model_gradients(r: &mut DetRng) -> Result<String, String> {
    for arch in ARCHS {
        let mut done = 0;
        while done < 50 {
            let params = random_params(r, arch);
            let data = random_dataset(r, 1, 3, 1);
            if relu_margin(&params, &data) < 1e-4 {
                continue;
            }
            let s = &data.samples()[0];
            let g = params.backward(&s.features, s.label, 1.0).unwrap();
            let fd = central_difference(&params, |p| bce_loss(&p.forward(&s.features).unwrap(), s.label), 1e-6);
            let err = relative_error(&g, &fd);
            if err >= 1e-6 {
                return Err(format!("{}: relative error {err:.3e}", arch.name()));
            }
            done += 1;
        }
    }
    Ok("50 points per architecture".into())
}

/// Non-degenerate: losses untied by more than `margin` within each group and
/// across group losses, and no ReLU pre-activation near zero.
fn gradient_check(r: &mut DetRng, mode_for: fn(&mut DetRng) -> LossMode) -> Result<String, String> {
    let margin = 1e-4;
    for arch in ARCHS {
        let mut done = 0;
        let mut attempts = 0;
        while done < 100 {
            attempts += 1;
            if attempts > 100_000 {
                return Err(format!("{}: could not draw non-degenerate points", arch.name()));
            }
            let data = random_dataset(r, 12, 3, 3);
            let params = random_params(r, arch);
            let mode = mode_for(r);
            let idx: Vec<usize> = (0..data.len()).collect();
            let keys_owned = data.group_keys(crate::data::Grouping::Intersection).unwrap();
            let keys: Vec<&str> = keys_owned.iter().map(String::as_str).collect();
            let losses = sample_losses(&params, &data, &idx).unwrap();
            if relu_margin(&params, &data) < margin || min_gap(&losses) < margin {
                continue;
            }
            let lv = LossVector::from_slice(&losses).unwrap();
            if let LossMode::DawFdd { alpha_g, .. } = mode {
                let partition = GroupPartition::from_labels(&keys).unwrap();
                let b = daw_fdd_loss(&lv, &partition, 1.0, alpha_g).unwrap();
                let group_losses: Vec<f64> = b.per_group.unwrap().into_values().collect();
                if min_gap(&group_losses) < margin {
                    continue;
                }
            }
            let total = |p: &ModelParams<f64>| {
                let l = LossVector::new(sample_losses(p, &data, &idx).unwrap()).unwrap();
                mode_objective(mode, &l, &keys).unwrap()
            };
            let weights = sample_weights(mode, SubgradientRule::Exact, &lv, &keys).unwrap();
            let g = weighted_gradient(&params, &data, &idx, &weights).unwrap();
            let fd = central_difference(&params, total, 1e-6);
            let err = relative_error(&g, &fd);
            if err >= 1e-4 {
                return Err(format!("{} {mode:?}: relative error {err:.3e}", arch.name()));
            }
            done += 1;
        }
    }
    Ok("100 non-degenerate points per architecture".into())
}

fn check_dag_gradients(r: &mut DetRng) -> Result<String, String> {
    gradient_check(r, |r| LossMode::DagFdd {
        alpha: r.random_range(0.05..=1.0),
    })
}

fn check_daw_gradients(r: &mut DetRng) -> Result<String, String> {
    gradient_check(r, |r| LossMode::DawFdd {
        alpha: r.random_range(0.05..=1.0),
        alpha_g: r.random_range(0.05..=1.0),
    })
}

fn random_records(r: &mut DetRng) -> Vec<EvalRecord<f64>> {
    let groups = r.random_range(1..=4);
    let n = r.random_range(2 * groups..=30.max(2 * groups));
    let mut out: Vec<EvalRecord<f64>> = (0..n)
        .map(|i| EvalRecord {
            // coarse grid so ties and exact-threshold scores occur
            score: r.random_range(0..=20) as f64 / 20.0,
            label: if r.random_bool(0.5) { Label::Fake } else { Label::Real },
            group: format!("g{}", i % groups),
        })
        .collect();
    // every group gets one sample of each class
    for g in 0..groups {
        out[g].label = Label::Real;
        out[g + groups].label = Label::Fake;
    }
    out
}

fn literal_rate(records: &[EvalRecord<f64>], group: Option<&str>, class: Label) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for rec in records {
        if rec.label == class && group.is_none_or(|g| rec.group == g) {
            den += 1.0;
            if rec.score > 0.5 {
                num += 1.0;
            }
        }
    }
    num / den
}

fn check_metrics(r: &mut DetRng) -> Result<String, String> {
    for _ in 0..500 {
        let recs = random_records(r);
        let mut groups: Vec<String> = recs.iter().map(|x| x.group.clone()).collect();
        groups.sort();
        groups.dedup();
        let fpr = |g: Option<&str>| literal_rate(&recs, g, Label::Real);
        let tpr = |g: Option<&str>| literal_rate(&recs, g, Label::Fake);
        let g_fpr = groups
            .iter()
            .flat_map(|a| groups.iter().map(move |b| (a, b)))
            .map(|(a, b)| (fpr(Some(a)) - fpr(Some(b))).abs())
            .fold(0.0, f64::max);
        let f_fpr: f64 = groups.iter().map(|g| (fpr(Some(g)) - fpr(None)).abs()).sum();
        let f_eo: f64 = groups
            .iter()
            .map(|g| (fpr(Some(g)) - fpr(None)).abs() + (tpr(Some(g)) - tpr(None)).abs())
            .sum();
        let fair = fairness_metrics(&recs, 0.5).map_err(|e| e.to_string())?;
        for (name, got, want) in [
            ("G_FPR", fair.g_fpr, g_fpr),
            ("F_FPR", fair.f_fpr, f_fpr),
            ("F_EO", fair.f_eo, f_eo),
        ] {
            if (got - want).abs() > 1e-12 {
                return Err(format!("{name}: {got} vs {want}"));
            }
        }
        let rates = confusion_rates(&recs, 0.5, None).unwrap();
        let acc = recs.iter().filter(|x| (x.score > 0.5) == x.label.is_fake()).count() as f64 / recs.len() as f64;
        let mut pairs = 0.0;
        let mut wins = 0.0;
        for f in recs.iter().filter(|x| x.label.is_fake()) {
            for t in recs.iter().filter(|x| !x.label.is_fake()) {
                pairs += 1.0;
                wins += if f.score > t.score {
                    1.0
                } else if f.score == t.score {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let got_auc = auc(&recs, None).unwrap();
        for (name, got, want) in [
            ("FPR", rates.fpr, fpr(None)),
            ("TPR", rates.tpr, tpr(None)),
            ("ACC", rates.acc, acc),
            ("AUC", got_auc, wins / pairs),
        ] {
            if (got - want).abs() > 1e-12 {
                return Err(format!("{name}: {got} vs {want}"));
            }
        }
    }
    Ok("500 record sets".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for outcome in run_all(2024) {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }

    #[test]
    fn fractional_tail_mean_examples() {
        assert_eq!(fractional_tail_mean(&[1.0, 2.0, 3.0, 4.0], 0.5), 3.5);
        assert!((fractional_tail_mean(&[1.0, 2.0, 3.0, 4.0], 0.6) - 3.25).abs() < 1e-15);
    }
}
