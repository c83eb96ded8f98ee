//! Sparse direct solves: stationary laws, balance checks and expected
//! occupation times of the absorbing chain.

use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};
use serde::Serialize;
use serde_json::json;

use super::generator::{build_branching_generator, GeneratorMatrix};
use super::state::StateSpace;
use super::MarkovError;
use crate::lifetime::PhaseTypeSpec;

/// Tolerance on `‖πG‖_∞` for an accepted stationary solve.
pub const STATIONARY_RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDist {
    probabilities: Vec<f64>,
    residual: f64,
}

impl StationaryDist {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probabilities[index]
    }

    /// `‖πG‖_∞` after normalisation.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// `φ_K = Σ_{k ∈ level K} π_k`.
    pub fn level_mass(&self, space: &StateSpace, k: usize) -> f64 {
        self.probabilities[space.level_range(k)].iter().sum()
    }

    /// JSON list of `{state, probability}` with nested count labels.
    pub fn to_json(&self, space: &StateSpace) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| json!({ "state": space.nested(i), "probability": p }))
            .collect();
        json!({ "residual": self.residual, "distribution": rows })
    }
}

/// Solves `πG = 0`, `Σπ = 1` with the balance equation of state 0 replaced by
/// the pin `π_0 = 1`, one step of iterative refinement, then normalisation.
pub fn solve_stationary(g: &GeneratorMatrix) -> Result<StationaryDist, MarkovError> {
    if g.sink().is_some() {
        return Err(MarkovError::NotRecurrent);
    }
    let n = g.dim();
    if n == 1 {
        return Ok(StationaryDist {
            probabilities: vec![1.0],
            residual: 0.0,
        });
    }
    // Unknowns π_1..π_{n-1}; equations are the columns 1..n-1 of πG = 0.
    let keep = |i: usize| i != 0;
    let matrix = restrict(g, keep, 1.0)?;
    let rhs: Vec<f64> = (1..n).map(|c| -g.rate(0, c)).collect();
    let reduced = solve_transposed(&matrix, g, keep, 1.0, &rhs)?;

    let mut pi = Vec::with_capacity(n);
    pi.push(1.0);
    pi.extend(reduced);
    if pi.iter().any(|p| !p.is_finite() || *p < -1e-12) {
        return Err(MarkovError::NumericalFailure {
            what: "stationary solve produced negative or non-finite mass",
            residual: f64::NAN,
        });
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p = p.max(0.0) / total);
    let residual = left_product(g, &pi).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(residual < STATIONARY_RESIDUAL_TOLERANCE) {
        return Err(MarkovError::NumericalFailure {
            what: "stationary residual above tolerance",
            residual,
        });
    }
    Ok(StationaryDist {
        probabilities: pi,
        residual,
    })
}

/// Largest relative full-balance residual of a candidate distribution:
/// `|Σ_h π_h G_{h,k} - π_k (-G_{k,k})| / max(inflow, outflow)` over states
/// with any flow.
pub fn balance_residuals(pi: &[f64], g: &GeneratorMatrix) -> Result<f64, MarkovError> {
    if pi.len() != g.dim() {
        return Err(MarkovError::ShapeMismatch(format!(
            "distribution has {} entries, generator {}",
            pi.len(),
            g.dim()
        )));
    }
    let mut inflow = vec![0.0; g.dim()];
    for (h, &p) in pi.iter().enumerate() {
        for (k, rate) in g.row(h) {
            inflow[k] += p * rate;
        }
    }
    Ok(inflow
        .iter()
        .enumerate()
        .filter(|&(k, _)| Some(k) != g.sink())
        .map(|(k, &inn)| {
            let out = -pi[k] * g.diagonal(k);
            let scale = inn.abs().max(out.abs());
            if scale == 0.0 {
                0.0
            } else {
                (inn - out).abs() / scale
            }
        })
        .fold(0.0, f64::max))
}

/// `E(A_K)` for `K = 1..=k_max` from the absorbing chain killed above
/// `n_trunc`, started from a newborn of component `i` with probability `p_i`.
///
/// At `δ = 1` the killing bias decays like `1/N`; the value returned there is
/// the Richardson combination `2E_{2N} - E_N`.
pub fn expected_occupation_exact(
    spec: &PhaseTypeSpec,
    delta: f64,
    k_max: usize,
    n_trunc: usize,
) -> Result<Vec<f64>, MarkovError> {
    if delta == 1.0 {
        let coarse = expected_occupation_truncated(spec, delta, k_max, n_trunc)?;
        let fine = expected_occupation_truncated(spec, delta, k_max, 2 * n_trunc)?;
        Ok(fine.iter().zip(&coarse).map(|(f, c)| 2.0 * f - c).collect())
    } else {
        expected_occupation_truncated(spec, delta, k_max, n_trunc)
    }
}

/// The killed-chain occupation times without extrapolation.
pub fn expected_occupation_truncated(
    spec: &PhaseTypeSpec,
    delta: f64,
    k_max: usize,
    n_trunc: usize,
) -> Result<Vec<f64>, MarkovError> {
    if k_max == 0 || k_max >= n_trunc {
        return Err(MarkovError::KMaxTooLarge { k_max, n_trunc });
    }
    let space = StateSpace::enumerate(&spec.stage_layout(), n_trunc, true)?;
    let g = build_branching_generator(spec, delta, &space)?;
    let sink = g.sink().expect("killed chain");
    // transient states are 1..space.len(); index 0 is the empty state
    let transient = |i: usize| i != 0 && i != sink;
    let matrix = restrict(&g, transient, -1.0)?;
    let mut start = vec![0.0; space.len() - 1];
    for (l, c) in spec.components().iter().enumerate() {
        let mut e = vec![0u32; space.stages()];
        e[space.stage_index(l, 0)] = 1;
        start[space.index_of(&e).expect("level one") - 1] += c.weight;
    }
    let times = solve_transposed(&matrix, &g, transient, -1.0, &start)?;
    if times.iter().any(|t| !t.is_finite() || *t < -1e-12) {
        return Err(MarkovError::NumericalFailure {
            what: "occupation solve produced negative or non-finite times",
            residual: f64::NAN,
        });
    }
    Ok((1..=k_max)
        .map(|k| {
            let r = space.level_range(k);
            times[r.start - 1..r.end - 1].iter().sum()
        })
        .collect())
}

/// `scale · G` restricted to the kept states, renumbered in order.
fn restrict(g: &GeneratorMatrix, keep: impl Fn(usize) -> bool, scale: f64) -> Result<SparseColMat<usize, f64>, MarkovError> {
    let map = renumber(g.dim(), &keep);
    let n = map.iter().flatten().count();
    let mut triplets = Vec::with_capacity(g.off_diagonal_count() + n);
    for i in 0..g.dim() {
        let Some(ri) = map[i] else { continue };
        triplets.push(Triplet::new(ri, ri, scale * g.diagonal(i)));
        for (j, rate) in g.row(i) {
            if let Some(cj) = map[j] {
                triplets.push(Triplet::new(ri, cj, scale * rate));
            }
        }
    }
    SparseColMat::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| MarkovError::Singular(format!("matrix assembly failed: {e:?}")))
}

fn renumber(dim: usize, keep: &impl Fn(usize) -> bool) -> Vec<Option<usize>> {
    let mut next = 0;
    (0..dim)
        .map(|i| {
            keep(i).then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Solves `Aᵀ x = b` by sparse LU with one refinement step, where `A` is the
/// restriction of `scale · G` built by [`restrict`].
fn solve_transposed(
    matrix: &SparseColMat<usize, f64>,
    g: &GeneratorMatrix,
    keep: impl Fn(usize) -> bool,
    scale: f64,
    rhs: &[f64],
) -> Result<Vec<f64>, MarkovError> {
    let lu = matrix
        .sp_lu()
        .map_err(|e| MarkovError::Singular(format!("sparse LU failed: {e:?}")))?;
    let n = rhs.len();
    let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    lu.solve_transpose_in_place_with_conj(Conj::No, x.as_mut());

    let map = renumber(g.dim(), &keep);
    let residual = |x: &Mat<f64>| -> Vec<f64> {
        let mut r = rhs.to_vec();
        for i in 0..g.dim() {
            let Some(ri) = map[i] else { continue };
            let xi = x[(ri, 0)];
            r[ri] -= scale * g.diagonal(i) * xi;
            for (j, rate) in g.row(i) {
                if let Some(cj) = map[j] {
                    r[cj] -= scale * rate * xi;
                }
            }
        }
        r
    };
    let r = residual(&x);
    let mut correction = Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
    lu.solve_transpose_in_place_with_conj(Conj::No, correction.as_mut());
    Ok((0..n).map(|i| x[(i, 0)] + correction[(i, 0)]).collect())
}

/// `πG` as a row vector.
fn left_product(g: &GeneratorMatrix, pi: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = (0..g.dim()).map(|i| pi[i] * g.diagonal(i)).collect();
    for (h, &p) in pi.iter().enumerate() {
        for (k, rate) in g.row(h) {
            out[k] += p * rate;
        }
    }
    out
}
