//! Monte Carlo experiments built on [`Simulation`]: the insensitivity table,
//! the two counterexamples (age-varying intensity, batch births) and the
//! growth of the truncated occupation time `T_N`.

use serde::Serialize;

use super::{
    AgeIntensity, BirthModel, Estimate, Simulation, SimulationError, StoppingPolicy,
};
use crate::analysis::expected_occupation;
use crate::lifetime::LifetimeSampler;
use crate::report::fmt_sig;

pub const COMPARISON_CSV_HEADER: &str =
    "experiment,delta,dist,K,estimate,stderr,theory,z_score,n_reps,capped_frac,seed";

/// One `(distribution, K)` line of a simulated-versus-theory table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub experiment: String,
    pub delta: f64,
    pub dist: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub theory: f64,
    pub z_score: f64,
    pub n_reps: u64,
    pub capped_frac: f64,
    pub seed: u64,
}

impl ComparisonRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            fmt_sig(self.delta),
            self.dist,
            self.k,
            fmt_sig(self.estimate),
            fmt_sig(self.stderr),
            fmt_sig(self.theory),
            fmt_sig(self.z_score),
            self.n_reps,
            fmt_sig(self.capped_frac),
            self.seed
        )
    }
}

/// Estimates `E(A_K)`, `K = 1..=k_max`, under each lifetime law and compares
/// them with `δ^(K-1)/(K (1∨δ)^K)`.
#[allow(clippy::too_many_arguments)]
pub fn insensitivity_experiment(
    delta: f64,
    samplers: &[(String, LifetimeSampler)],
    k_max: usize,
    replicates: u64,
    seed: u64,
    policy: StoppingPolicy,
    workers: usize,
) -> Result<Vec<ComparisonRow>, SimulationError> {
    if let Some((_, s)) = samplers.iter().find(|(_, s)| !s.has_unit_mean()) {
        return Err(SimulationError::NonUnitMean(s.mean()));
    }
    let mut rows = Vec::with_capacity(samplers.len() * k_max);
    for (name, sampler) in samplers {
        let sim = Simulation::new(
            sampler.clone(),
            BirthModel::Homogeneous { rate: delta },
            policy,
            k_max,
        )?;
        let summary = sim.monte_carlo(replicates, seed, workers)?;
        for k in 1..=k_max {
            let est = summary.occupation(k);
            let theory = expected_occupation(delta, k);
            rows.push(ComparisonRow {
                experiment: "insensitivity".to_string(),
                delta,
                dist: name.clone(),
                k,
                estimate: est.mean,
                stderr: est.std_error,
                theory,
                z_score: est.z_score(theory),
                n_reps: replicates,
                capped_frac: summary.capped_fraction(),
                seed,
            });
        }
    }
    Ok(rows)
}

/// `Â_1` under front- and back-loaded birth intensities with `Q ≡ 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeVaryingComparison {
    pub delta: f64,
    pub front_loaded: Estimate,
    pub back_loaded: Estimate,
    pub pooled_std_error: f64,
    /// `(back - front) / pooled_std_error`.
    pub z_score: f64,
    pub replicates: u64,
}

pub fn counterexample_age_varying(
    delta: f64,
    front_loaded: &AgeIntensity,
    back_loaded: &AgeIntensity,
    replicates: u64,
    seed: u64,
    policy: StoppingPolicy,
    workers: usize,
) -> Result<AgeVaryingComparison, SimulationError> {
    for profile in [front_loaded, back_loaded] {
        let mass = profile.mass(1.0);
        if (mass - delta).abs() > 1e-9 * delta.max(1.0) {
            return Err(SimulationError::IntensityMass { mass, delta });
        }
    }
    let run = |profile: &AgeIntensity| -> Result<Estimate, SimulationError> {
        let sim = Simulation::new(
            LifetimeSampler::deterministic(1.0).expect("unit duration"),
            BirthModel::AgeVarying(profile.clone()),
            policy,
            1,
        )?;
        Ok(sim.monte_carlo(replicates, seed, workers)?.occupation(1))
    };
    let front = run(front_loaded)?;
    let back = run(back_loaded)?;
    Ok(AgeVaryingComparison {
        delta,
        front_loaded: front,
        back_loaded: back,
        pooled_std_error: back.pooled_error(&front),
        z_score: back.difference_z(&front),
        replicates,
    })
}

/// Per-K `Â_K` under batch births with `Q ≡ 1` and `Q ~ Exp(1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchComparison {
    pub delta: f64,
    pub batch_size: u32,
    pub deterministic: Vec<Estimate>,
    pub exponential: Vec<Estimate>,
    /// `(det - exp) / pooled_std_error` per K.
    pub z_scores: Vec<f64>,
    pub replicates: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn counterexample_batch(
    delta: f64,
    batch_size: u32,
    k_max: usize,
    replicates: u64,
    seed: u64,
    policy: StoppingPolicy,
    workers: usize,
) -> Result<BatchComparison, SimulationError> {
    if batch_size < 2 {
        return Err(SimulationError::InvalidExperiment(
            "batch counterexample needs batch size >= 2".into(),
        ));
    }
    let run = |name: &str| -> Result<Vec<Estimate>, SimulationError> {
        let sim = Simulation::new(
            LifetimeSampler::builtin(name).expect("builtin"),
            BirthModel::Batch {
                rate: delta,
                batch_size,
            },
            policy,
            k_max,
        )?;
        Ok(sim.monte_carlo(replicates, seed, workers)?.occupations())
    };
    let deterministic = run("det1")?;
    let exponential = run("exp1")?;
    let z_scores = deterministic
        .iter()
        .zip(&exponential)
        .map(|(d, e)| d.difference_z(e))
        .collect();
    Ok(BatchComparison {
        delta,
        batch_size,
        deterministic,
        exponential,
        z_scores,
        replicates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TnGrowthPoint {
    pub n: u64,
    /// Mean time spent in `{1..N}` before first reaching `N+1` or extinction.
    pub time: Estimate,
    pub extinction_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TnGrowth {
    pub delta: f64,
    pub points: Vec<TnGrowthPoint>,
    /// Least-squares slope of mean `T_N` against `ln N`.
    pub slope: f64,
    pub intercept: f64,
    pub replicates: u64,
}

/// Regresses the mean of `T_N` on `ln N`; the slope tends to `1/δ`.
pub fn tn_growth_experiment(
    delta: f64,
    sampler: &LifetimeSampler,
    n_list: &[u64],
    replicates: u64,
    seed: u64,
    workers: usize,
) -> Result<TnGrowth, SimulationError> {
    if !(delta > 1.0) {
        return Err(SimulationError::InvalidExperiment(format!(
            "T_N growth needs a supercritical δ > 1, got {delta}"
        )));
    }
    if n_list.len() < 3 {
        return Err(SimulationError::InvalidExperiment(
            "T_N growth needs at least three population levels".into(),
        ));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(SimulationError::InvalidExperiment(
            "population levels must be positive and strictly increasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let policy = StoppingPolicy {
            population_cap: Some(n + 1),
            event_cap: u64::MAX,
            time_cap: None,
        };
        let sim = Simulation::new(
            sampler.clone(),
            BirthModel::Homogeneous { rate: delta },
            policy,
            1,
        )?;
        let summary = sim.monte_carlo(replicates, seed, workers)?;
        points.push(TnGrowthPoint {
            n,
            time: summary.total_time(),
            extinction_frequency: summary.extinction_frequency().mean,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.time.mean).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(TnGrowth {
        delta,
        points,
        slope,
        intercept,
        replicates,
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
