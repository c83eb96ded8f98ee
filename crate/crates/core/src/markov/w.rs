//! The supercritical stage weights `w` of the restricted process `P_N`.
//!
//! For a fixed scalar `D` the balance equations
//!
//! ```text
//! γ_{i,1} + δ = p_i δ / w_{i,1} + D
//! γ_{i,j} + δ = γ_{i,j-1} w_{i,j-1} / w_{i,j} + D
//! ```
//!
//! are solved by forward substitution through the stages. Writing `W(D) = Σ w`
//! and `F(D) = Σ_l γ_{l,n_l} w_{l,n_l}`, summing the equations gives
//! `F - D = (δ - D)(1 - W)`, so the remaining condition `D = F` with `Σ w = 1`
//! reduces to `W(D) = 1`. `W` increases from 0 to ∞ on `(-∞, δ + min γ)`,
//! hence the positive solution is unique.

use serde::Serialize;

use super::MarkovError;
use crate::lifetime::PhaseTypeSpec;

/// Residual tolerance on the balance equations and on `Σ w = 1`.
pub const W_TOLERANCE: f64 = 1e-10;

const NEWTON_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WSolverOptions {
    pub max_iterations: usize,
    pub damping: f64,
}

impl Default for WSolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            damping: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WMethod {
    DampedFixedPoint,
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WVector {
    values: Vec<Vec<f64>>,
    d: f64,
    residual: f64,
    iterations: usize,
    method: WMethod,
}

impl WVector {
    /// `w_{i,j}` with `component` and `stage` counted from zero.
    pub fn get(&self, component: usize, stage: usize) -> f64 {
        self.values[component][stage]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    /// `D = Σ_l w_{l,n_l} γ_{l,n_l}`.
    pub fn d(&self) -> f64 {
        self.d
    }

    /// Largest absolute residual over the balance equations and `Σ w - 1`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn method(&self) -> WMethod {
        self.method
    }
}

pub fn solve_w(spec: &PhaseTypeSpec, delta: f64) -> Result<WVector, MarkovError> {
    solve_w_with(spec, delta, WSolverOptions::default())
}

pub fn solve_w_with(spec: &PhaseTypeSpec, delta: f64, options: WSolverOptions) -> Result<WVector, MarkovError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(MarkovError::InvalidDelta {
            delta,
            reason: "the w equations need δ > 0",
        });
    }
    let pole = delta
        + spec
            .components()
            .iter()
            .flat_map(|c| c.stage_rates.iter().copied())
            .fold(f64::INFINITY, f64::min);

    // Damped iteration D ← (1-θ)D + θ F(D)/W(D), started at Σ q_{l,n_l} γ_{l,n_l} = 1.
    let mut d = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iterations {
        iterations += 1;
        let Some(w) = forward(spec, delta, d, pole) else {
            break;
        };
        let (total, f) = totals(spec, &w);
        let next = (1.0 - options.damping) * d + options.damping * f / total;
        if !next.is_finite() {
            break;
        }
        let step = (next - d).abs();
        d = next;
        if step <= 1e-15 * d.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if converged {
        let candidate = finish(spec, delta, d, pole, iterations, WMethod::DampedFixedPoint);
        if let Some(w) = candidate.filter(|w| w.residual < W_TOLERANCE) {
            return Ok(w);
        }
    }

    let (d, newton_iterations) = newton(spec, delta, pole, NEWTON_ITERATIONS)?;
    let w = finish(spec, delta, d, pole, iterations + newton_iterations, WMethod::Newton).ok_or(
        MarkovError::NonConvergence {
            iterations: iterations + newton_iterations,
            residual: f64::NAN,
        },
    )?;
    if w.residual < W_TOLERANCE {
        Ok(w)
    } else {
        Err(MarkovError::NonConvergence {
            iterations: w.iterations,
            residual: w.residual,
        })
    }
}

/// Forward substitution for a given `D`; `None` when some `w` would not be positive.
fn forward(spec: &PhaseTypeSpec, delta: f64, d: f64, pole: f64) -> Option<Vec<Vec<f64>>> {
    if !(d < pole) {
        return None;
    }
    let w: Vec<Vec<f64>> = spec
        .components()
        .iter()
        .map(|c| {
            let mut prev = c.weight * delta;
            c.stage_rates
                .iter()
                .map(|&g| {
                    let v = prev / (g + delta - d);
                    prev = g * v;
                    v
                })
                .collect()
        })
        .collect();
    w.iter().flatten().all(|v| *v > 0.0 && v.is_finite()).then_some(w)
}

/// `(W, F)` for a stage-weight table.
fn totals(spec: &PhaseTypeSpec, w: &[Vec<f64>]) -> (f64, f64) {
    let total = w.iter().flatten().sum();
    let f = spec
        .components()
        .iter()
        .zip(w)
        .map(|(c, wi)| c.stage_rates.last().unwrap() * wi.last().unwrap())
        .sum();
    (total, f)
}

/// `W(D)` and `dW/dD = Σ_{i,j} w_{i,j} Σ_{j' ≤ j} 1/(γ_{i,j'} + δ - D)`.
fn w_and_slope(spec: &PhaseTypeSpec, delta: f64, d: f64) -> (f64, f64) {
    let mut total = 0.0;
    let mut slope = 0.0;
    for c in spec.components() {
        let mut prev = c.weight * delta;
        let mut log_derivative = 0.0;
        for &g in &c.stage_rates {
            let denom = g + delta - d;
            let v = prev / denom;
            log_derivative += 1.0 / denom;
            total += v;
            slope += v * log_derivative;
            prev = g * v;
        }
    }
    (total, slope)
}

/// Safeguarded Newton on `W(D) = 1` over the bracket `(lo, pole)`.
fn newton(spec: &PhaseTypeSpec, delta: f64, pole: f64, max_iterations: usize) -> Result<(f64, usize), MarkovError> {
    let mut lo = pole - 1.0;
    let mut expansions = 0;
    while w_and_slope(spec, delta, lo).0 >= 1.0 {
        lo = pole - 2.0 * (pole - lo);
        expansions += 1;
        if expansions > 200 {
            return Err(MarkovError::NonConvergence {
                iterations: expansions,
                residual: f64::NAN,
            });
        }
    }
    let mut hi = pole;
    let mut d = lo;
    for it in 1..=max_iterations {
        let (total, slope) = w_and_slope(spec, delta, d);
        let f = total - 1.0;
        if f.abs() < 1e-15 {
            return Ok((d, it));
        }
        if f < 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let step = d - f / slope;
        d = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * d.abs().max(1.0) {
            return Ok((d, it));
        }
    }
    Err(MarkovError::NonConvergence {
        iterations: max_iterations,
        residual: (w_and_slope(spec, delta, d).0 - 1.0).abs(),
    })
}

fn finish(spec: &PhaseTypeSpec, delta: f64, d: f64, pole: f64, iterations: usize, method: WMethod) -> Option<WVector> {
    let mut w = forward(spec, delta, d, pole)?;
    let (total, _) = totals(spec, &w);
    w.iter_mut().flatten().for_each(|v| *v /= total);
    let (_, d) = totals(spec, &w);
    let residual = balance_residual(spec, delta, &w, d);
    Some(WVector {
        values: w,
        d,
        residual,
        iterations,
        method,
    })
}

/// Largest residual of the two balance equations and of `Σ w = 1`.
fn balance_residual(spec: &PhaseTypeSpec, delta: f64, w: &[Vec<f64>], d: f64) -> f64 {
    let mut worst = (w.iter().flatten().sum::<f64>() - 1.0).abs();
    for (c, wi) in spec.components().iter().zip(w) {
        let mut inflow = c.weight * delta;
        for (&g, &v) in c.stage_rates.iter().zip(wi) {
            worst = worst.max((g + delta - inflow / v - d).abs());
            inflow = g * v;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetime::PhaseComponent;

    #[test]
    fn gamma22_closed_form() {
        for delta in [0.3, 1.0, 2.0, 5.0] {
            let w = solve_w(&PhaseTypeSpec::gamma22(), delta).unwrap();
            let w1 = (-delta + (delta * delta + 8.0 * delta).sqrt()) / 4.0;
            assert!((w.get(0, 0) - w1).abs() < 1e-12, "δ = {delta}");
            assert!((w.get(0, 1) - (1.0 - w1)).abs() < 1e-12);
            assert!(w.residual() < W_TOLERANCE);
        }
    }

    #[test]
    fn critical_w_is_q_after_one_step() {
        for spec in [PhaseTypeSpec::exp1(), PhaseTypeSpec::gamma22(), PhaseTypeSpec::mix()] {
            let w = solve_w(&spec, 1.0).unwrap();
            for (a, b) in w.flat().iter().zip(spec.stage_occupancy().flat()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(w.method(), WMethod::DampedFixedPoint);
            assert!(w.iterations() <= 2);
        }
    }

    #[test]
    fn exp1_is_trivial() {
        let w = solve_w(&PhaseTypeSpec::exp1(), 3.7).unwrap();
        assert_eq!(w.flat(), vec![1.0]);
        assert!(solve_w(&PhaseTypeSpec::exp1(), 0.0).is_err());
    }

    #[test]
    fn newton_fallback_agrees_with_fixed_point() {
        let spec = PhaseTypeSpec::validate(vec![
            PhaseComponent::new(0.3, vec![1.0, 2.0]),
            PhaseComponent::new(0.7, vec![14.0 / 11.0]),
        ])
        .unwrap();
        let fixed = solve_w(&spec, 2.5).unwrap();
        assert_eq!(fixed.method(), WMethod::DampedFixedPoint);
        let starved = WSolverOptions {
            max_iterations: 1,
            damping: 0.5,
        };
        let newton = solve_w_with(&spec, 2.5, starved).unwrap();
        assert_eq!(newton.method(), WMethod::Newton);
        for (a, b) in fixed.flat().iter().zip(newton.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
