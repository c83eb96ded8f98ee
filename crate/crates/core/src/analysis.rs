//! Closed-form theory: expected occupation times, extinction time, total
//! progeny, the Malthusian parameter and the moment estimators of `δ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifetime::PhaseTypeSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("δ must be finite and nonnegative, got {0}")]
    InvalidDelta(f64),
    #[error("K must be at least {min}, got {k}")]
    InvalidLevel { k: usize, min: usize },
    #[error("{what} is finite only for δ < 1, got δ = {delta}")]
    NotSubcritical { what: &'static str, delta: f64 },
    #[error("the Malthusian parameter needs δ > 1, got {0}")]
    NotSupercritical(f64),
    #[error("the occupation estimator needs a declared sub- or supercritical regime")]
    CriticalRegime,
    #[error("observation must be positive and finite, got {0}")]
    InvalidObservation(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl Regime {
    pub fn of(delta: f64) -> Self {
        if delta < 1.0 {
            Self::Subcritical
        } else if delta == 1.0 {
            Self::Critical
        } else {
            Self::Supercritical
        }
    }
}

/// `E(A_K) = δ^(K-1) / (K (1∨δ)^K)`, for `δ ≥ 0` and `K ≥ 1`.
pub fn expected_occupation(delta: f64, k: usize) -> f64 {
    debug_assert!(k >= 1 && delta >= 0.0);
    let top = delta.max(1.0);
    // (δ/top)^(K-1) / (K top) stays in range for large δ and K
    (delta / top).powi(k as i32 - 1) / (k as f64 * top)
}

/// `E(T) = -ln(1-δ)/δ`, equal to one at `δ = 0`.
pub fn expected_extinction_time(delta: f64) -> Result<f64, AnalysisError> {
    check_delta(delta)?;
    if delta >= 1.0 {
        return Err(AnalysisError::NotSubcritical {
            what: "E(T)",
            delta,
        });
    }
    if delta == 0.0 {
        return Ok(1.0);
    }
    Ok(-(-delta).ln_1p() / delta)
}

/// `E(N) = 1/(1-δ)`.
pub fn mean_total_progeny(delta: f64) -> Result<f64, AnalysisError> {
    check_delta(delta)?;
    if delta >= 1.0 {
        return Err(AnalysisError::NotSubcritical {
            what: "E(N)",
            delta,
        });
    }
    Ok(1.0 / (1.0 - delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Malthusian {
    pub eta: f64,
    /// Extinction probability `1 - η/δ`.
    pub z: f64,
    /// `|δ (1 - L_Q(η))/η - 1|` at the returned root.
    pub residual: f64,
}

/// Root of `δ (1 - E e^{-ηQ}) / η = 1` by bisection on `[1e-12, δ]`.
pub fn malthusian_eta(spec: &PhaseTypeSpec, delta: f64) -> Result<Malthusian, AnalysisError> {
    check_delta(delta)?;
    if delta <= 1.0 {
        return Err(AnalysisError::NotSupercritical(delta));
    }
    // decreasing in η: δE(Q) - 1 > 0 near zero, -L_Q(δ) < 0 at η = δ
    let h = |eta: f64| delta * spec.laplace_complement(eta) / eta - 1.0;
    let eta = bisect(h, 1e-12, delta);
    Ok(Malthusian {
        eta,
        z: 1.0 - eta / delta,
        residual: h(eta).abs(),
    })
}

/// Moment estimator of δ from an observed mean occupation `t_K`.
pub fn estimate_delta_from_ak(k: usize, t_k: f64, regime: Regime) -> Result<f64, AnalysisError> {
    if k < 2 {
        return Err(AnalysisError::InvalidLevel { k, min: 2 });
    }
    if !(t_k > 0.0 && t_k.is_finite()) {
        return Err(AnalysisError::InvalidObservation(t_k));
    }
    let kt = k as f64 * t_k;
    match regime {
        Regime::Subcritical => Ok(kt.powf(1.0 / (k as f64 - 1.0))),
        Regime::Supercritical => Ok(1.0 / kt),
        Regime::Critical => Err(AnalysisError::CriticalRegime),
    }
}

/// Largest root of `1 - δ = e^{-δt}` in `[0, 1)`; zero when `t ≤ 1`.
pub fn estimate_delta_from_t(t: f64) -> Result<f64, AnalysisError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(AnalysisError::InvalidObservation(t));
    }
    if t <= 1.0 {
        return Ok(0.0);
    }
    // (1 - e^{-δt})/δ - 1 falls from t - 1 > 0 at δ = 0 to -e^{-t} at δ = 1
    let g = |d: f64| if d == 0.0 { t - 1.0 } else { -(-d * t).exp_m1() / d - 1.0 };
    Ok(bisect(g, 0.0, 1.0))
}

/// `Σ_i q_{i,n_i} γ_{i,n_i}`, which equals `Σ_i p_i = 1`.
pub fn local_time_regeneration_intensity(spec: &PhaseTypeSpec) -> f64 {
    let q = spec.stage_occupancy();
    spec.components()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let last = c.stage_rates.len() - 1;
            q.get(i, last) * c.stage_rates[last]
        })
        .sum()
}

/// Theory values for one δ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryValues {
    pub delta: f64,
    pub regime: Regime,
    /// `E(A_K)` for `K = 1..=k_max`.
    pub occupation: Vec<f64>,
    pub extinction_time: Option<f64>,
    pub mean_total_progeny: Option<f64>,
    pub malthusian: Option<Malthusian>,
}

impl TheoryValues {
    pub fn new(spec: &PhaseTypeSpec, delta: f64, k_max: usize) -> Result<Self, AnalysisError> {
        check_delta(delta)?;
        let regime = Regime::of(delta);
        let subcritical = regime == Regime::Subcritical;
        Ok(Self {
            delta,
            regime,
            occupation: (1..=k_max).map(|k| expected_occupation(delta, k)).collect(),
            extinction_time: subcritical.then(|| expected_extinction_time(delta)).transpose()?,
            mean_total_progeny: subcritical.then(|| mean_total_progeny(delta)).transpose()?,
            malthusian: (regime == Regime::Supercritical)
                .then(|| malthusian_eta(spec, delta))
                .transpose()?,
        })
    }
}

fn check_delta(delta: f64) -> Result<(), AnalysisError> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(AnalysisError::InvalidDelta(delta))
    }
}

/// Bisection for a decreasing function with `f(lo) > 0 > f(hi)`, run until
/// the bracket stops shrinking.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v > 0.0 {
            lo = mid;
        } else if v < 0.0 {
            hi = mid;
        } else {
            return mid;
        }
    }
    if f(lo).abs() <= f(hi).abs() {
        lo
    } else {
        hi
    }
}
