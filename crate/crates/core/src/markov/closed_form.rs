//! Product-form stationary laws of the regeneration chain (`δ < 1`) and of the
//! restricted population process `P_N`.

use super::state::level;
use super::w::WVector;
use super::MarkovError;
use crate::lifetime::PhaseTypeSpec;

/// `C = -δ / ln(1-δ)` for `δ ∈ (0, 1)`.
pub fn subcritical_constant(delta: f64) -> Result<f64, MarkovError> {
    check_subcritical(delta)?;
    Ok(delta / -(-delta).ln_1p())
}

/// Level mass `φ_K = C δ^(K-1) / K`.
pub fn subcritical_level_mass(delta: f64, k: usize) -> Result<f64, MarkovError> {
    if k == 0 {
        return Err(MarkovError::LevelOutOfRange { level: k, max: usize::MAX });
    }
    Ok(subcritical_constant(delta)? * delta.powi(k as i32 - 1) / k as f64)
}

/// `π_k = C (K-1)! δ^(K-1) Π q^k / k!` with `q_{i,j} = p_i/γ_{i,j}`.
pub fn closed_form_pi_subcritical(spec: &PhaseTypeSpec, delta: f64, counts: &[u32]) -> Result<f64, MarkovError> {
    let c = subcritical_constant(delta)?;
    let q = spec.stage_occupancy().flat();
    if counts.len() != q.len() {
        return Err(MarkovError::ShapeMismatch(format!(
            "state has {} stages, spec has {}",
            counts.len(),
            q.len()
        )));
    }
    let k = level(counts);
    if k == 0 {
        return Err(MarkovError::LevelOutOfRange { level: 0, max: usize::MAX });
    }
    let log = c.ln() + ln_factorial(k - 1) + (k - 1) as f64 * delta.ln() + log_multinomial_tail(counts, &q);
    Ok(log.exp())
}

/// `L_N = (Σ_{j=1}^N 1/j)^(-1)`.
pub fn harmonic_normaliser(n: usize) -> f64 {
    // summed from the small terms upwards
    (1..=n).rev().map(|j| 1.0 / j as f64).sum::<f64>().recip()
}

/// Level mass `φ_K^N = L_N / K` of `P_N`.
pub fn supercritical_level_mass(n: usize, k: usize) -> Result<f64, MarkovError> {
    if k == 0 || k > n {
        return Err(MarkovError::LevelOutOfRange { level: k, max: n });
    }
    Ok(harmonic_normaliser(n) / k as f64)
}

/// `π_k^N = L_N (K-1)! Π w^k / k!`.
pub fn closed_form_pi_supercritical(w: &WVector, n: usize, counts: &[u32]) -> Result<f64, MarkovError> {
    let flat = w.flat();
    if counts.len() != flat.len() {
        return Err(MarkovError::ShapeMismatch(format!(
            "state has {} stages, w has {}",
            counts.len(),
            flat.len()
        )));
    }
    let k = level(counts);
    if k == 0 || k > n {
        return Err(MarkovError::LevelOutOfRange { level: k, max: n });
    }
    let log = harmonic_normaliser(n).ln() + ln_factorial(k - 1) + log_multinomial_tail(counts, &flat);
    Ok(log.exp())
}

/// Multinomial mass `K! Π w^k / k!` of a level-`K` state.
pub(crate) fn multinomial_mass(counts: &[u32], w: &[f64]) -> f64 {
    (ln_factorial(level(counts)) + log_multinomial_tail(counts, w)).exp()
}

/// `Σ k ln x - ln k!`, with `0·ln 0` read as zero.
fn log_multinomial_tail(counts: &[u32], x: &[f64]) -> f64 {
    counts
        .iter()
        .zip(x)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &v)| c as f64 * v.ln() - ln_factorial(c as usize))
        .sum()
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn check_subcritical(delta: f64) -> Result<(), MarkovError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(MarkovError::InvalidDelta {
            delta,
            reason: "the product form needs 0 < δ < 1",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subcritical_constants() {
        assert!((subcritical_constant(0.5).unwrap() - 0.721348).abs() < 1e-6);
        assert!((subcritical_level_mass(0.5, 2).unwrap() - 0.180337).abs() < 1e-6);
        let pi = closed_form_pi_subcritical(&PhaseTypeSpec::gamma22(), 0.5, &[1, 1]).unwrap();
        assert!((pi - 0.0901685).abs() < 1e-7);
        assert!(subcritical_constant(1.0).is_err());
        assert!(subcritical_constant(0.0).is_err());
    }

    #[test]
    fn harmonic_level_masses() {
        assert!((harmonic_normaliser(4) - 0.48).abs() < 1e-15);
        assert_eq!(harmonic_normaliser(1), 1.0);
        let masses: Vec<f64> = (1..=4).map(|k| supercritical_level_mass(4, k).unwrap()).collect();
        for (m, e) in masses.iter().zip([0.48, 0.24, 0.16, 0.12]) {
            assert!((m - e).abs() < 1e-15);
        }
        assert!(supercritical_level_mass(4, 5).is_err());
    }

    #[test]
    fn small_factorials() {
        assert_eq!(ln_factorial(0), 0.0);
        assert!((ln_factorial(5) - 120f64.ln()).abs() < 1e-14);
        assert!((multinomial_mass(&[1, 1], &[0.5, 0.5]) - 0.5).abs() < 1e-15);
    }
}
