//! Samples, synthetic generation, CSV I/O and stratified splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{GroupPartition, LossError};
use crate::rng;
use crate::Scalar;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    FractionMismatch([f64; 3]),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("sample {id} has no component {index} in group label `{group}`")]
    MissingAttribute { id: u64, index: usize, group: String },
    #[error(transparent)]
    Partition(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// 0 = real, 1 = fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn from_digit(d: u8) -> Option<Self> {
        match d {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn digit(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    pub fn as_scalar<T: Scalar>(self) -> T {
        match self {
            Label::Real => T::zero(),
            Label::Fake => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: Label,
    /// Full group label; attributes are separated by `-` (e.g. `F-A`).
    pub group: String,
}

/// Which attribute(s) of the group label define the groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// The whole label, i.e. the intersection of all attributes.
    Intersection,
    /// The `i`-th `-`-separated component of the label.
    Attribute(usize),
}

impl Grouping {
    pub fn key<'a>(&self, group: &'a str) -> Option<&'a str> {
        match *self {
            Grouping::Intersection => Some(group),
            Grouping::Attribute(i) => group.split('-').nth(i),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grouping::Intersection => write!(f, "intersection"),
            Grouping::Attribute(i) => write!(f, "attr{i}"),
        }
    }
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "intersection" {
            return Ok(Grouping::Intersection);
        }
        s.strip_prefix("attr")
            .and_then(|i| i.parse().ok())
            .map(Grouping::Attribute)
            .ok_or_else(|| format!("unknown grouping `{s}` (expected `intersection` or `attr<N>`)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self, DataError> {
        for s in &samples {
            if s.features.len() != dim {
                return Err(DataError::InvalidConfig(format!(
                    "sample {} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.group.is_empty() {
                return Err(DataError::InvalidConfig(format!("sample {} has an empty group", s.id)));
            }
        }
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Group key of every sample under `grouping`.
    pub fn group_keys(&self, grouping: Grouping) -> Result<Vec<String>, DataError> {
        self.samples
            .iter()
            .map(|s| {
                grouping
                    .key(&s.group)
                    .map(str::to_string)
                    .ok_or_else(|| DataError::MissingAttribute {
                        id: s.id,
                        index: match grouping {
                            Grouping::Attribute(i) => i,
                            Grouping::Intersection => 0,
                        },
                        group: s.group.clone(),
                    })
            })
            .collect()
    }

    pub fn partition(&self, grouping: Grouping) -> Result<GroupPartition, DataError> {
        Ok(GroupPartition::from_labels(&self.group_keys(grouping)?)?)
    }

    pub fn groups(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.group.as_str()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub label: String,
    pub mixture_weight: f64,
    pub fake_fraction: f64,
    pub real_center: Vec<f64>,
    pub fake_center: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub dim: usize,
    pub groups: Vec<GroupSpec>,
    pub n_total: usize,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.dim == 0 {
            return bad("dim must be ≥ 1".into());
        }
        if self.n_total == 0 {
            return bad("n_total must be ≥ 1".into());
        }
        if self.groups.is_empty() {
            return bad("at least one group is required".into());
        }
        let mut labels = BTreeSet::new();
        for g in &self.groups {
            if g.label.is_empty() || !labels.insert(g.label.as_str()) {
                return bad(format!("group label `{}` is empty or repeated", g.label));
            }
            if !(g.mixture_weight >= 0.0 && g.mixture_weight.is_finite()) {
                return bad(format!("group `{}`: mixture_weight must be ≥ 0", g.label));
            }
            if !(g.fake_fraction > 0.0 && g.fake_fraction < 1.0) {
                return bad(format!("group `{}`: fake_fraction must lie in (0, 1)", g.label));
            }
            if !(g.noise_std > 0.0 && g.noise_std.is_finite()) {
                return bad(format!("group `{}`: noise_std must be > 0", g.label));
            }
            if g.real_center.len() != self.dim || g.fake_center.len() != self.dim {
                return bad(format!("group `{}`: centers must have length {}", g.label, self.dim));
            }
            if g.real_center.iter().chain(&g.fake_center).any(|c| !c.is_finite()) {
                return bad(format!("group `{}`: centers must be finite", g.label));
            }
        }
        let total: f64 = self.groups.iter().map(|g| g.mixture_weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return bad(format!("mixture weights sum to {total}, expected 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let config: Self = serde_json::from_str(text).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

impl GeneratorConfig {
    /// Four intersection groups `{M,F}-{A,B}` in six dimensions. Feature 0
    /// carries the signal, feature 1 is noise and features 2..6 mark the group.
    /// `M-A`, `M-B`, `F-A` have balanced labels and centers 6, 5 and 4 noise
    /// units apart. `F-B` is ten times rarer, 30% fake, 0.5 units apart and
    /// shifted toward the fake side of the shared boundary.
    pub fn biased(seed: u64, n_total: usize) -> Self {
        let group = |label: &str, weight: f64, fake_fraction: f64, centre: f64, gap: f64, slot: usize| {
            let mut real = vec![0.0; 6];
            real[0] = centre - gap / 2.0;
            real[slot] = 3.0;
            let mut fake = real.clone();
            fake[0] = centre + gap / 2.0;
            GroupSpec {
                label: label.to_string(),
                mixture_weight: weight,
                fake_fraction,
                real_center: real,
                fake_center: fake,
                noise_std: 1.0,
            }
        };
        let major = 10.0 / 31.0;
        Self {
            seed,
            dim: 6,
            groups: vec![
                group("M-A", major, 0.5, 0.0, 6.0, 2),
                group("M-B", major, 0.5, 0.0, 5.0, 3),
                group("F-A", major, 0.5, 0.0, 4.0, 4),
                group("F-B", 1.0 / 31.0, 0.3, 2.0, 0.5, 5),
            ],
            n_total,
        }
    }

    /// Same layout as [`GeneratorConfig::biased`] but every group is identical
    /// apart from its marker feature.
    pub fn symmetric(seed: u64, n_total: usize) -> Self {
        let mut config = Self::biased(seed, n_total);
        for g in &mut config.groups {
            g.mixture_weight = 0.25;
            g.fake_fraction = 0.5;
            g.real_center[0] = -2.0;
            g.fake_center[0] = 2.0;
        }
        config
    }
}

/// Draws `n_total` samples: group from the mixture weights, label from the
/// group's fake fraction, features from `N(center, noise_std²·I)`.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset, DataError> {
    config.validate()?;
    let mut r = rng::seeded(config.seed);
    let mut samples = Vec::with_capacity(config.n_total);
    for id in 0..config.n_total {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut chosen = config.groups.len() - 1;
        for (g, spec) in config.groups.iter().enumerate() {
            acc += spec.mixture_weight;
            if u < acc {
                chosen = g;
                break;
            }
        }
        let spec = &config.groups[chosen];
        let label = if r.random::<f64>() < spec.fake_fraction {
            Label::Fake
        } else {
            Label::Real
        };
        let center = match label {
            Label::Real => &spec.real_center,
            Label::Fake => &spec.fake_center,
        };
        let features = center
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut r);
                c + spec.noise_std * z
            })
            .collect();
        samples.push(Sample {
            id: id as u64,
            features,
            label,
            group: spec.label.clone(),
        });
    }
    Dataset::new(config.dim, samples)
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Stratified split by (group, label).
///
/// Each cell is shuffled and cut by largest-remainder rounding; cells with at
/// least three members contribute at least one sample to every part. Samples
/// keep their original relative order within each part.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split, DataError> {
    if fractions.iter().any(|f| f.is_nan() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > WEIGHT_SUM_TOL
    {
        return Err(DataError::FractionMismatch(fractions));
    }
    let mut cells: BTreeMap<(&str, Label), Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        cells.entry((s.group.as_str(), s.label)).or_default().push(i);
    }
    let mut r = rng::seeded(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for members in cells.values_mut() {
        members.shuffle(&mut r);
        let counts = allocate(members.len(), fractions);
        let mut start = 0;
        for (part, count) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&members[start..start + count]);
            start += count;
        }
    }
    let [mut train, mut val, mut test] = parts;
    for p in [&mut train, &mut val, &mut test] {
        p.sort_unstable();
    }
    Ok(Split {
        train: dataset.subset(&train),
        val: dataset.subset(&val),
        test: dataset.subset(&test),
    })
}

fn allocate(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut remaining = n - counts.iter().sum::<usize>();
    let mut by_remainder = [0, 1, 2];
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in by_remainder.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    if n >= 3 {
        for i in 0..3 {
            if counts[i] == 0 && fractions[i] > 0.0 {
                let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
    }
    counts
}

const FIXED_COLUMNS: [&str; 3] = ["id", "label", "group"];

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let malformed = |line: u64, message: String| DataError::Malformed { line, message };
    if header.len() < FIXED_COLUMNS.len() || header.iter().take(3).ne(FIXED_COLUMNS) {
        return Err(malformed(1, "header must start with `id,label,group`".into()));
    }
    let dim = header.len() - FIXED_COLUMNS.len();
    for (j, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{j}") {
            return Err(malformed(
                1,
                format!("feature column {j} must be named `f{j}`, found `{name}`"),
            ));
        }
    }
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(malformed(
                line,
                format!("expected {} columns, found {}", header.len(), record.len()),
            ));
        }
        let id = record[0]
            .parse::<u64>()
            .map_err(|_| malformed(line, format!("id `{}` is not a non-negative integer", &record[0])))?;
        let label = record[1]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_digit)
            .ok_or_else(|| malformed(line, format!("label `{}` is not 0 or 1", &record[1])))?;
        let group = record[2].to_string();
        if group.is_empty() {
            return Err(malformed(line, "group is empty".into()));
        }
        let features = record
            .iter()
            .skip(3)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(line, format!("feature `{f}` is not a finite number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        samples.push(Sample {
            id,
            features,
            label,
            group,
        });
    }
    Dataset::new(dim, samples)
}

pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dataset.dim).map(|j| format!("f{j}")));
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for s in &dataset.samples {
        row.clear();
        row.push(s.id.to_string());
        row.push(s.label.digit().to_string());
        row.push(s.group.clone());
        // `Display` for f64 is the shortest decimal string that parses back exactly
        row.extend(s.features.iter().map(|f| f.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_csv(std::fs::File::open(path)?)
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut buf = Vec::new();
    write_csv(dataset, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
