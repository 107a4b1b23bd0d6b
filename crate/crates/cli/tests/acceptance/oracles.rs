//! Reference computations written directly from the definitions, with no
//! calls into the library.

use std::collections::BTreeMap;

/// `λ + Σ[ℓ−λ]_+ / mass`.
pub fn cvar_form(losses: &[f64], mass: f64, lambda: f64) -> f64 {
    lambda + losses.iter().map(|&l| (l - lambda).max(0.0)).sum::<f64>() / mass
}

/// Minimum of the CVaR form over λ. The function is convex piecewise linear
/// with kinks at the losses, so the minimum sits on one of them.
pub fn cvar_min(losses: &[f64], mass: f64) -> f64 {
    losses
        .iter()
        .map(|&l| cvar_form(losses, mass, l))
        .fold(f64::INFINITY, f64::min)
}

/// Average of the `mass` largest values, counting the last one fractionally.
pub fn tail_mean(values: &[f64], mass: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let mut left = mass;
    let mut acc = 0.0;
    for x in v {
        let take = left.min(1.0);
        if take <= 1e-12 {
            break;
        }
        acc += take * x;
        left -= take;
    }
    acc / mass
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-group value lists keyed by group label.
pub fn by_group<'a>(values: &[f64], groups: &[&'a str]) -> BTreeMap<&'a str, Vec<f64>> {
    let mut out: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (&v, &g) in values.iter().zip(groups) {
        out.entry(g).or_default().push(v);
    }
    out
}

/// Inner CVaR per group at level `alpha_g`, then outer CVaR over groups at `alpha`.
pub fn daw_total(losses: &[f64], groups: &[&str], alpha: f64, alpha_g: f64) -> f64 {
    let group_losses: Vec<f64> = by_group(losses, groups)
        .values()
        .map(|v| cvar_min(v, alpha_g * v.len() as f64))
        .collect();
    cvar_min(&group_losses, alpha * group_losses.len() as f64)
}

pub fn dag_total(losses: &[f64], alpha: f64) -> f64 {
    cvar_min(losses, alpha * losses.len() as f64)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit.
pub fn bce_from_logit(z: f64, fake: bool) -> f64 {
    if fake {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Logistic weights `[w.., b]`; MLP weights `[W (h×d row-major), b1, v, b2]`.
pub fn logit(weights: &[f64], hidden: Option<usize>, x: &[f64]) -> f64 {
    let d = x.len();
    match hidden {
        None => x.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>() + weights[d],
        Some(h) => {
            let (w1, rest) = weights.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (v, b2) = rest.split_at(h);
            (0..h)
                .map(|j| {
                    let pre: f64 = (0..d).map(|i| w1[j * d + i] * x[i]).sum::<f64>() + b1[j];
                    v[j] * pre.max(0.0)
                })
                .sum::<f64>()
                + b2[0]
        }
    }
}

pub struct Record {
    pub score: f64,
    pub fake: bool,
    pub group: String,
}

fn rate(records: &[Record], group: Option<&str>, fake: bool) -> f64 {
    let pool: Vec<&Record> = records
        .iter()
        .filter(|r| r.fake == fake && group.is_none_or(|g| r.group == g))
        .collect();
    pool.iter().filter(|r| r.score > 0.5).count() as f64 / pool.len() as f64
}

pub fn fpr(records: &[Record], group: Option<&str>) -> f64 {
    rate(records, group, false)
}

pub fn tpr(records: &[Record], group: Option<&str>) -> f64 {
    rate(records, group, true)
}

pub fn acc(records: &[Record]) -> f64 {
    records.iter().filter(|r| (r.score > 0.5) == r.fake).count() as f64 / records.len() as f64
}

/// Fraction of (fake, real) pairs ranked correctly, ties counting one half.
pub fn auc(records: &[Record]) -> f64 {
    let mut pairs = 0.0;
    let mut good = 0.0;
    for f in records.iter().filter(|r| r.fake) {
        for t in records.iter().filter(|r| !r.fake) {
            pairs += 1.0;
            if f.score > t.score {
                good += 1.0;
            } else if f.score == t.score {
                good += 0.5;
            }
        }
    }
    good / pairs
}

pub fn group_names(records: &[Record]) -> Vec<&str> {
    let mut g: Vec<&str> = records.iter().map(|r| r.group.as_str()).collect();
    g.sort();
    g.dedup();
    g
}

pub fn g_fpr(records: &[Record]) -> f64 {
    let groups = group_names(records);
    let mut worst = 0.0f64;
    for a in &groups {
        for b in &groups {
            worst = worst.max((fpr(records, Some(a)) - fpr(records, Some(b))).abs());
        }
    }
    worst
}

pub fn f_fpr(records: &[Record]) -> f64 {
    let all = fpr(records, None);
    group_names(records)
        .iter()
        .map(|g| (fpr(records, Some(g)) - all).abs())
        .sum()
}

pub fn f_eo(records: &[Record]) -> f64 {
    let (all_f, all_t) = (fpr(records, None), tpr(records, None));
    group_names(records)
        .iter()
        .map(|g| (fpr(records, Some(g)) - all_f).abs() + (tpr(records, Some(g)) - all_t).abs())
        .sum()
}
