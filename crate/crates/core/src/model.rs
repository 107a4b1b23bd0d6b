//! Small binary classifiers with hand-written gradients.
//!
//! Parameters live in one flat vector so the trainer can treat every
//! architecture the same way. Layouts:
//!
//! * logistic(d): `[w_0 .. w_{d-1}, b]`
//! * mlp(d, h): `[W (h×d, row-major), b_1 (h), v (h), b_2]`
//!
//! `logit = w·x + b` or `logit = v·relu(W x + b_1) + b_2`, and the score is
//! `sigmoid(logit)`, the probability of the fake class.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;
use crate::Scalar;

const SCORE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("architecture needs {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weight {index} is not finite")]
    NonFinite { index: usize },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Logistic { dim: usize },
    Mlp { dim: usize, hidden: usize },
}

impl Architecture {
    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Logistic { dim } | Architecture::Mlp { dim, .. } => dim,
        }
    }

    pub fn num_weights(&self) -> usize {
        match *self {
            Architecture::Logistic { dim } => dim + 1,
            Architecture::Mlp { dim, hidden } => dim * hidden + 2 * hidden + 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Logistic { .. } => "logistic",
            Architecture::Mlp { .. } => "mlp",
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Architecture::Logistic { dim } => vec![dim],
            Architecture::Mlp { dim, hidden } => vec![dim, hidden],
        }
    }

    pub fn from_parts(name: &str, dims: &[usize]) -> Result<Self, ModelError> {
        let arch = match (name, dims) {
            ("logistic", [dim]) => Architecture::Logistic { dim: *dim },
            ("mlp", [dim, hidden]) => Architecture::Mlp {
                dim: *dim,
                hidden: *hidden,
            },
            _ => return Err(ModelError::InvalidArchitecture(format!("`{name}` with dims {dims:?}"))),
        };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Architecture::Logistic { dim: 0 } => {
                Err(ModelError::InvalidArchitecture("input dimension must be ≥ 1".into()))
            }
            Architecture::Mlp { dim, hidden } if dim == 0 || hidden == 0 => Err(ModelError::InvalidArchitecture(
                "input and hidden dimensions must be ≥ 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub score: T,
    pub logit: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    architecture: Architecture,
    weights: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(architecture: Architecture, weights: Vec<T>) -> Result<Self, ModelError> {
        architecture.validate()?;
        let expected = architecture.num_weights();
        if weights.len() != expected {
            return Err(ModelError::WeightCount {
                expected,
                got: weights.len(),
            });
        }
        if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Self { architecture, weights })
    }

    pub fn zeros(architecture: Architecture) -> Result<Self, ModelError> {
        Self::new(architecture, vec![T::zero(); architecture.num_weights()])
    }

    /// Weights ~ U(−1/√fan_in, 1/√fan_in), biases zero.
    pub fn init<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Result<Self, ModelError> {
        architecture.validate()?;
        let mut weights = vec![T::zero(); architecture.num_weights()];
        let mut fill = |slice: &mut [T], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in slice {
                *w = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        };
        match architecture {
            Architecture::Logistic { dim } => fill(&mut weights[..dim], dim),
            Architecture::Mlp { dim, hidden } => {
                fill(&mut weights[..dim * hidden], dim);
                let v = dim * hidden + hidden;
                fill(&mut weights[v..v + hidden], hidden);
            }
        }
        Ok(Self { architecture, weights })
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn forward(&self, features: &[T]) -> Result<Prediction<T>, ModelError> {
        self.check_dim(features)?;
        let logit = match self.architecture {
            Architecture::Logistic { dim } => dot(&self.weights[..dim], features) + self.weights[dim],
            Architecture::Mlp { dim, hidden } => {
                let (w1, rest) = self.weights.split_at(dim * hidden);
                let (b1, rest) = rest.split_at(hidden);
                let (v, b2) = rest.split_at(hidden);
                let mut z = b2[0];
                for j in 0..hidden {
                    let pre = dot(&w1[j * dim..(j + 1) * dim], features) + b1[j];
                    z = z + v[j] * pre.max(T::zero());
                }
                z
            }
        };
        Ok(Prediction {
            score: sigmoid(logit),
            logit,
        })
    }

    /// `upstream_weight · ∂ bce(forward(x), y) / ∂θ`.
    pub fn backward(&self, features: &[T], label: Label, upstream_weight: T) -> Result<Vec<T>, ModelError> {
        let mut grad = vec![T::zero(); self.weights.len()];
        self.accumulate_backward(features, label, upstream_weight, &mut grad)?;
        Ok(grad)
    }

    /// Adds `upstream_weight · ∂ bce/∂θ` into `grad`.
    pub fn accumulate_backward(
        &self,
        features: &[T],
        label: Label,
        upstream_weight: T,
        grad: &mut [T],
    ) -> Result<(), ModelError> {
        self.check_dim(features)?;
        if grad.len() != self.weights.len() {
            return Err(ModelError::WeightCount {
                expected: self.weights.len(),
                got: grad.len(),
            });
        }
        if upstream_weight == T::zero() {
            return Ok(());
        }
        let y = label.as_scalar::<T>();
        match self.architecture {
            Architecture::Logistic { dim } => {
                let score = self.forward(features)?.score;
                let d_logit = upstream_weight * (score - y);
                for (g, &x) in grad[..dim].iter_mut().zip(features) {
                    *g = *g + d_logit * x;
                }
                grad[dim] = grad[dim] + d_logit;
            }
            Architecture::Mlp { dim, hidden } => {
                let (w1, rest) = self.weights.split_at(dim * hidden);
                let (b1, rest) = rest.split_at(hidden);
                let (v, b2) = rest.split_at(hidden);
                let mut pre = Vec::with_capacity(hidden);
                let mut z = b2[0];
                for j in 0..hidden {
                    let p = dot(&w1[j * dim..(j + 1) * dim], features) + b1[j];
                    z = z + v[j] * p.max(T::zero());
                    pre.push(p);
                }
                let d_logit = upstream_weight * (sigmoid(z) - y);
                let (g_w1, g_rest) = grad.split_at_mut(dim * hidden);
                let (g_b1, g_rest) = g_rest.split_at_mut(hidden);
                let (g_v, g_b2) = g_rest.split_at_mut(hidden);
                g_b2[0] = g_b2[0] + d_logit;
                for j in 0..hidden {
                    if pre[j] <= T::zero() {
                        continue;
                    }
                    g_v[j] = g_v[j] + d_logit * pre[j];
                    let d_pre = d_logit * v[j];
                    g_b1[j] = g_b1[j] + d_pre;
                    for (g, &x) in g_w1[j * dim..(j + 1) * dim].iter_mut().zip(features) {
                        *g = *g + d_pre * x;
                    }
                }
            }
        }
        Ok(())
    }

    /// `θ − step · grad`.
    pub fn step(&self, grad: &[T], step: T) -> Result<Self, ModelError> {
        if grad.len() != self.weights.len() {
            return Err(ModelError::WeightCount {
                expected: self.weights.len(),
                got: grad.len(),
            });
        }
        let weights = self.weights.iter().zip(grad).map(|(&w, &g)| w - step * g).collect();
        Self::new(self.architecture, weights)
    }

    pub fn with_weights(&self, weights: Vec<T>) -> Result<Self, ModelError> {
        Self::new(self.architecture, weights)
    }

    fn check_dim(&self, features: &[T]) -> Result<(), ModelError> {
        let expected = self.architecture.input_dim();
        if features.len() != expected {
            return Err(ModelError::DimensionMismatch {
                expected,
                got: features.len(),
            });
        }
        Ok(())
    }
}

/// Binary cross-entropy with the score clamped away from 0 and 1.
pub fn bce_loss<T: Scalar>(pred: &Prediction<T>, label: Label) -> T {
    let eps = T::from_f64_lossy(SCORE_CLAMP).max(T::epsilon());
    let s = pred.score.max(eps).min(T::one() - eps);
    match label {
        Label::Fake => -s.ln(),
        Label::Real => -(T::one() - s).ln(),
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// On-disk checkpoint: `{architecture, dims, weights}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub architecture: String,
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
}

impl From<&ModelParams<f64>> for Checkpoint {
    fn from(params: &ModelParams<f64>) -> Self {
        Checkpoint {
            architecture: params.architecture.name().to_string(),
            dims: params.architecture.dims(),
            weights: params.weights.clone(),
        }
    }
}

impl TryFrom<Checkpoint> for ModelParams<f64> {
    type Error = ModelError;

    fn try_from(c: Checkpoint) -> Result<Self, Self::Error> {
        let arch = Architecture::from_parts(&c.architecture, &c.dims)?;
        ModelParams::new(arch, c.weights)
    }
}

impl ModelParams<f64> {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Checkpoint::from(self)).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        c.try_into()
    }
}
