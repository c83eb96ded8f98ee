//! Lifetime laws for individuals of the splitting tree.
//!
//! The exact (Markov) machinery needs lifetimes that are finite mixtures of
//! hypoexponential distributions: with probability `p_i` a lifetime is the sum
//! of `n_i` independent exponential stages with rates `γ_{i,1..n_i}`. Every law
//! here is normalised to unit mean, so that the birth rate `δ` is also the mean
//! number of children per individual.
//!
//! The forward simulator additionally accepts laws that are not phase-type
//! (a deterministic lifetime, or a tabulated quantile function); those only
//! exist behind [`LifetimeSampler`].

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed deviation of `Σ p_i` from one.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;
/// Allowed deviation of the mean lifetime from one. Decimal config files carry
/// rates such as `0.6666666667`, so this is looser than the weight check.
pub const MEAN_TOLERANCE: f64 = 1e-9;

/// Names accepted by [`LifetimeSampler::builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["exp1", "gamma22", "mix", "det1"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LifetimeError {
    #[error("phase-type spec has no components")]
    NoComponents,
    #[error("components[{component}].p = {weight} is outside (0, 1]")]
    InvalidWeight { component: usize, weight: f64 },
    #[error("components[{component}].rates is empty")]
    NoStages { component: usize },
    #[error("components[{component}].rates[{stage}] = {rate} is not a positive finite rate")]
    NonPositiveRate {
        component: usize,
        stage: usize,
        rate: f64,
    },
    #[error("components[*].p sums to {sum}, expected 1 within {WEIGHT_TOLERANCE:e}")]
    WeightSum { sum: f64 },
    #[error("mean lifetime is {mean}, expected 1 within {MEAN_TOLERANCE:e}")]
    MeanNotUnit { mean: f64 },
    #[error("Laplace transform argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("deterministic lifetime must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("invalid quantile table: {0}")]
    InvalidQuantileTable(String),
    #[error("unknown lifetime distribution `{0}` (expected one of exp1, gamma22, mix, det1)")]
    UnknownName(String),
    #[error("cannot parse phase-type spec: {0}")]
    Parse(String),
}

/// One hypoexponential component of the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseComponent {
    #[serde(rename = "p")]
    pub weight: f64,
    #[serde(rename = "rates")]
    pub stage_rates: Vec<f64>,
}

impl PhaseComponent {
    pub fn new(weight: f64, stage_rates: Vec<f64>) -> Self {
        Self {
            weight,
            stage_rates,
        }
    }

    /// Mean of this component alone, `Σ_j 1/γ_{i,j}`.
    pub fn mean(&self) -> f64 {
        self.stage_rates.iter().map(|g| g.recip()).sum()
    }

    pub fn stages(&self) -> usize {
        self.stage_rates.len()
    }
}

#[derive(Deserialize)]
struct RawPhaseTypeSpec {
    components: Vec<PhaseComponent>,
}

/// A validated finite mixture of hypoexponential distributions with unit mean.
///
/// Rates are stored exactly as given; a spec whose mean is not one is rejected
/// rather than rescaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPhaseTypeSpec")]
pub struct PhaseTypeSpec {
    components: Vec<PhaseComponent>,
    #[serde(skip)]
    cumulative_weights: Vec<f64>,
}

impl TryFrom<RawPhaseTypeSpec> for PhaseTypeSpec {
    type Error = LifetimeError;

    fn try_from(raw: RawPhaseTypeSpec) -> Result<Self, Self::Error> {
        PhaseTypeSpec::validate(raw.components)
    }
}

impl PhaseTypeSpec {
    /// Checks every invariant of the mixture and returns the validated spec.
    pub fn validate(components: Vec<PhaseComponent>) -> Result<Self, LifetimeError> {
        if components.is_empty() {
            return Err(LifetimeError::NoComponents);
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(LifetimeError::InvalidWeight {
                    component: i,
                    weight: c.weight,
                });
            }
            if c.stage_rates.is_empty() {
                return Err(LifetimeError::NoStages { component: i });
            }
            for (j, &rate) in c.stage_rates.iter().enumerate() {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(LifetimeError::NonPositiveRate {
                        component: i,
                        stage: j,
                        rate,
                    });
                }
            }
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(LifetimeError::WeightSum { sum });
        }
        let mean: f64 = components.iter().map(|c| c.weight * c.mean()).sum();
        if (mean - 1.0).abs() > MEAN_TOLERANCE {
            return Err(LifetimeError::MeanNotUnit { mean });
        }
        let mut acc = 0.0;
        let cumulative_weights = components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        Ok(Self {
            components,
            cumulative_weights,
        })
    }

    /// `Exp(1)`.
    pub fn exp1() -> Self {
        Self::validate(vec![PhaseComponent::new(1.0, vec![1.0])]).expect("exp1 is valid")
    }

    /// `Gamma(2, 2)` written as two `Exp(2)` stages.
    pub fn gamma22() -> Self {
        Self::validate(vec![PhaseComponent::new(1.0, vec![2.0, 2.0])]).expect("gamma22 is valid")
    }

    /// Equal mixture of `Exp(2)` and `Exp(2/3)`.
    pub fn mix() -> Self {
        Self::validate(vec![
            PhaseComponent::new(0.5, vec![2.0]),
            PhaseComponent::new(0.5, vec![2.0 / 3.0]),
        ])
        .expect("mix is valid")
    }

    /// Phase-type builtins by name; `det1` is not phase-type and yields `None`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "exp1" => Some(Self::exp1()),
            "gamma22" => Some(Self::gamma22()),
            "mix" => Some(Self::mix()),
            _ => None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LifetimeError> {
        serde_json::from_str(text).map_err(|e| LifetimeError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serialises")
    }

    pub fn components(&self) -> &[PhaseComponent] {
        &self.components
    }

    /// Number of mixture components `m`.
    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Stage counts `n_1..n_m`.
    pub fn stage_layout(&self) -> Vec<usize> {
        self.components.iter().map(PhaseComponent::stages).collect()
    }

    /// Total number of stages `S = Σ n_i`.
    pub fn total_stages(&self) -> usize {
        self.components.iter().map(PhaseComponent::stages).sum()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean()).sum()
    }

    /// Draws a component with probability `p_i`, then sums its exponential stages.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let component = self.sample_component(rng);
        self.components[component]
            .stage_rates
            .iter()
            .map(|&rate| {
                let e: f64 = Exp1.sample(rng);
                e / rate
            })
            .sum()
    }

    /// Index of a mixture component drawn with probability `p_i`.
    pub fn sample_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.components.len() == 1 {
            return 0;
        }
        let total = *self.cumulative_weights.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        self.cumulative_weights
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.components.len() - 1)
    }

    /// `E(e^{-sQ}) = Σ_i p_i Π_j γ_{i,j}/(γ_{i,j}+s)`.
    pub fn laplace_transform(&self, s: f64) -> Result<f64, LifetimeError> {
        if !(s >= 0.0) {
            return Err(LifetimeError::NegativeArgument(s));
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.weight
                    * c.stage_rates
                        .iter()
                        .map(|&g| g / (g + s))
                        .product::<f64>()
            })
            .sum())
    }

    /// `E(1 - e^{-sQ})`, evaluated without cancellation for small `s`.
    pub fn laplace_complement(&self, s: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let log_factor: f64 = c.stage_rates.iter().map(|&g| (s / g).ln_1p()).sum();
                -c.weight * (-log_factor).exp_m1()
            })
            .sum()
    }

    /// Stage occupancy `q_{i,j} = p_i/γ_{i,j}`.
    pub fn stage_occupancy(&self) -> StageOccupancy {
        StageOccupancy {
            values: self
                .components
                .iter()
                .map(|c| c.stage_rates.iter().map(|&g| c.weight / g).collect())
                .collect(),
        }
    }
}

/// Probability `q_{i,j}` that an alive individual is in stage `j` of component `i`
/// (in the subcritical regenerating chain).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOccupancy {
    values: Vec<Vec<f64>>,
}

impl StageOccupancy {
    pub fn get(&self, component: usize, stage: usize) -> f64 {
        self.values[component][stage]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Values flattened in stage order `(1,1), (1,2), ..., (m, n_m)`.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }
}

/// Piecewise-linear quantile function through knots `(u_i, x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    probabilities: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileTable {
    /// Knots must start at `u = 0`, end at `u = 1`, be strictly increasing in `u`,
    /// nondecreasing and nonnegative in `x`.
    pub fn new(probabilities: Vec<f64>, values: Vec<f64>) -> Result<Self, LifetimeError> {
        let bad = |msg: &str| Err(LifetimeError::InvalidQuantileTable(msg.to_string()));
        if probabilities.len() != values.len() || probabilities.len() < 2 {
            return bad("need at least two knots with matching lengths");
        }
        if probabilities[0] != 0.0 || *probabilities.last().unwrap() != 1.0 {
            return bad("probabilities must run from 0 to 1");
        }
        if probabilities.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("probabilities must be strictly increasing");
        }
        if values.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("values must be finite and nonnegative");
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return bad("values must be nondecreasing");
        }
        let table = Self {
            probabilities,
            values,
        };
        if !(table.mean() > 0.0) {
            return bad("mean must be positive");
        }
        Ok(table)
    }

    /// Exact mean of the piecewise-linear quantile function.
    pub fn mean(&self) -> f64 {
        self.probabilities
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(u, x)| (u[1] - u[0]) * 0.5 * (x[0] + x[1]))
            .sum()
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let seg = self
            .probabilities
            .partition_point(|&p| p <= u)
            .clamp(1, self.probabilities.len() - 1);
        let (u0, u1) = (self.probabilities[seg - 1], self.probabilities[seg]);
        let (x0, x1) = (self.values[seg - 1], self.values[seg]);
        x0 + (x1 - x0) * (u - u0) / (u1 - u0)
    }
}

/// Any lifetime law the forward simulator can draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LifetimeSampler {
    PhaseType(PhaseTypeSpec),
    Deterministic { duration: f64 },
    Quantile(QuantileTable),
}

impl LifetimeSampler {
    /// `exp1`, `gamma22`, `mix` (phase-type) or `det1` (`Q ≡ 1`).
    pub fn builtin(name: &str) -> Result<Self, LifetimeError> {
        if name == "det1" {
            return Ok(Self::Deterministic { duration: 1.0 });
        }
        PhaseTypeSpec::builtin(name)
            .map(Self::PhaseType)
            .ok_or_else(|| LifetimeError::UnknownName(name.to_string()))
    }

    pub fn deterministic(duration: f64) -> Result<Self, LifetimeError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(LifetimeError::InvalidDuration(duration));
        }
        Ok(Self::Deterministic { duration })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::PhaseType(spec) => spec.sample(rng),
            Self::Deterministic { duration } => *duration,
            Self::Quantile(table) => {
                let u: f64 = Open01.sample(rng);
                table.quantile(u)
            }
        }
    }

    /// Exact mean of the law (not estimated).
    pub fn mean(&self) -> f64 {
        match self {
            Self::PhaseType(spec) => spec.mean(),
            Self::Deterministic { duration } => *duration,
            Self::Quantile(table) => table.mean(),
        }
    }

    pub fn has_unit_mean(&self) -> bool {
        (self.mean() - 1.0).abs() <= MEAN_TOLERANCE
    }

    pub fn as_phase_type(&self) -> Option<&PhaseTypeSpec> {
        match self {
            Self::PhaseType(spec) => Some(spec),
            _ => None,
        }
    }
}

impl From<PhaseTypeSpec> for LifetimeSampler {
    fn from(spec: PhaseTypeSpec) -> Self {
        Self::PhaseType(spec)
    }
}
