//! Event-driven simulation of the population size `X(u)` of a splitting tree.
//!
//! The process starts from one newborn individual. Whole lifetimes are drawn at
//! birth and kept in a death-time priority queue. Between consecutive events
//! the current level `X` is constant, and the elapsed time is credited to the
//! occupation time `A_X`.
//!
//! Birth models:
//! - [`BirthModel::Homogeneous`]: every individual gives birth at rate `δ`. The
//!   aggregate clock `Exp(Xδ)` is redrawn after every event, which is exact by
//!   memorylessness.
//! - [`BirthModel::AgeVarying`]: birth intensity depends on age, simulated by
//!   thinning proposals at the declared bound `λ_max`.
//! - [`BirthModel::Batch`]: birth events at rate `δ` per individual, each adding
//!   `b` newborns at once.

mod experiments;
mod summary;

use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lifetime::LifetimeSampler;
use crate::rng::replicate_stream;

pub use experiments::{
    counterexample_age_varying, counterexample_batch, insensitivity_experiment,
    tn_growth_experiment, AgeVaryingComparison, BatchComparison, ComparisonRow, TnGrowth,
    TnGrowthPoint, COMPARISON_CSV_HEADER,
};
pub use summary::{Estimate, ExactSum, Moments, MonteCarloSummary};

/// Default population cap for supercritical runs.
pub const DEFAULT_POPULATION_CAP: u64 = 1000;
/// Default event cap (critical runs never go extinct in bounded time).
pub const DEFAULT_EVENT_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("birth rate must be finite and nonnegative, got {0}")]
    InvalidRate(f64),
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("event cap must be at least 1")]
    InvalidEventCap,
    #[error("population cap must be at least 1")]
    InvalidPopulationCap,
    #[error("time cap must be positive, got {0}")]
    InvalidTimeCap(f64),
    #[error("K_max must be at least 1")]
    InvalidKMax,
    #[error("replicate count must be at least 1")]
    NoReplicates,
    #[error("invalid intensity profile: {0}")]
    InvalidIntensity(String),
    #[error("intensity profile mass {mass} does not match δ = {delta}")]
    IntensityMass { mass: f64, delta: f64 },
    #[error("lifetime law must have unit mean, got mean {0}")]
    NonUnitMean(f64),
    #[error("intensity {value} at age {age} exceeds the declared bound {bound}")]
    IntensityBoundExceeded { age: f64, value: f64, bound: f64 },
    #[error("schedule inconsistency: {0}")]
    InvariantViolation(String),
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: u64,
        #[source]
        source: Box<SimulationError>,
    },
}

/// One constant-rate piece `[start, end)` of an age-dependent intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityPiece {
    pub start: f64,
    pub end: f64,
    pub rate: f64,
}

/// Step-function birth intensity `λ(a)` with a declared upper bound `λ_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeIntensity {
    pieces: Vec<IntensityPiece>,
    bound: f64,
}

impl AgeIntensity {
    /// The bound is taken as declared; a thinning draw that finds `λ(a)`
    /// above it is a hard fault at simulation time.
    pub fn new(pieces: Vec<IntensityPiece>, bound: f64) -> Result<Self, SimulationError> {
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(SimulationError::InvalidIntensity(format!(
                "bound {bound} must be finite and nonnegative"
            )));
        }
        for p in &pieces {
            if !(p.start >= 0.0 && p.end > p.start && p.end.is_finite()) {
                return Err(SimulationError::InvalidIntensity(format!(
                    "piece [{}, {}) is not a valid age interval",
                    p.start, p.end
                )));
            }
            if !(p.rate >= 0.0 && p.rate.is_finite()) {
                return Err(SimulationError::InvalidIntensity(format!(
                    "piece rate {} must be finite and nonnegative",
                    p.rate
                )));
            }
        }
        Ok(Self { pieces, bound })
    }

    /// Mass `δ` concentrated uniformly on ages `[0, 0.1]`.
    pub fn front_loaded(delta: f64) -> Result<Self, SimulationError> {
        Self::concentrated(delta, 0.0, 0.1)
    }

    /// Mass `δ` concentrated uniformly on ages `[0.9, 1]`.
    pub fn back_loaded(delta: f64) -> Result<Self, SimulationError> {
        Self::concentrated(delta, 0.9, 1.0)
    }

    fn concentrated(delta: f64, start: f64, end: f64) -> Result<Self, SimulationError> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(SimulationError::InvalidRate(delta));
        }
        let rate = delta / (end - start);
        Self::new(vec![IntensityPiece { start, end, rate }], rate)
    }

    pub fn at(&self, age: f64) -> f64 {
        self.pieces
            .iter()
            .filter(|p| age >= p.start && age < p.end)
            .map(|p| p.rate)
            .sum()
    }

    /// `∫_0^horizon λ(a) da`.
    pub fn mass(&self, horizon: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.rate * (p.end.min(horizon) - p.start).max(0.0))
            .sum()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BirthModel {
    Homogeneous { rate: f64 },
    AgeVarying(AgeIntensity),
    Batch { rate: f64, batch_size: u32 },
}

impl BirthModel {
    fn validate(&self) -> Result<(), SimulationError> {
        match self {
            Self::Homogeneous { rate } | Self::Batch { rate, .. }
                if !(rate.is_finite() && *rate >= 0.0) =>
            {
                Err(SimulationError::InvalidRate(*rate))
            }
            Self::Batch { batch_size: 0, .. } => Err(SimulationError::InvalidBatchSize),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingPolicy {
    /// Stop as soon as `X` reaches this level.
    pub population_cap: Option<u64>,
    pub event_cap: u64,
    /// Stop at this time, crediting occupation up to it.
    pub time_cap: Option<f64>,
}

impl Default for StoppingPolicy {
    fn default() -> Self {
        Self {
            population_cap: Some(DEFAULT_POPULATION_CAP),
            event_cap: DEFAULT_EVENT_CAP,
            time_cap: None,
        }
    }
}

impl StoppingPolicy {
    /// Only the event cap, as a safety net.
    pub fn uncapped(event_cap: u64) -> Self {
        Self {
            population_cap: None,
            event_cap,
            time_cap: None,
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        if self.event_cap == 0 {
            return Err(SimulationError::InvalidEventCap);
        }
        if self.population_cap == Some(0) {
            return Err(SimulationError::InvalidPopulationCap);
        }
        if let Some(t) = self.time_cap {
            if !(t > 0.0) {
                return Err(SimulationError::InvalidTimeCap(t));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Extinction,
    PopulationCap,
    EventCap,
    TimeCap,
}

/// Output of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationRecord {
    /// Time spent at levels `1..=K_max` (`a_k[K-1]` for level `K`).
    pub a_k: Vec<f64>,
    /// Time spent at levels above `K_max`.
    pub above_k_max_time: f64,
    /// `Σ K·dt` over the time spent above `K_max`.
    pub above_k_max_weighted: f64,
    /// Time until the stop (the extinction time `T` when extinct).
    pub total_time: f64,
    /// Individuals ever born, the ancestor included.
    pub total_births: u64,
    /// `∫ X(u) du` up to the stop.
    pub integral_x: f64,
    /// Sum of every lifetime drawn; equals `integral_x` on extinction.
    pub lifetime_sum: f64,
    pub events: u64,
    pub stop_reason: StopReason,
}

impl OccupationRecord {
    fn new(k_max: usize) -> Self {
        Self {
            a_k: vec![0.0; k_max],
            above_k_max_time: 0.0,
            above_k_max_weighted: 0.0,
            total_time: 0.0,
            total_births: 0,
            integral_x: 0.0,
            lifetime_sum: 0.0,
            events: 0,
            stop_reason: StopReason::Extinction,
        }
    }

    fn dwell(&mut self, level: u64, dt: f64) {
        let k = level as usize;
        if k <= self.a_k.len() {
            self.a_k[k - 1] += dt;
        } else {
            self.above_k_max_time += dt;
            self.above_k_max_weighted += level as f64 * dt;
        }
        self.total_time += dt;
        self.integral_x += level as f64 * dt;
    }

    /// `Σ_K K·a_K` including the weighted remainder above `K_max`.
    pub fn weighted_occupation(&self) -> f64 {
        self.a_k
            .iter()
            .enumerate()
            .map(|(i, a)| (i + 1) as f64 * a)
            .sum::<f64>()
            + self.above_k_max_weighted
    }

    /// `Σ_K a_K` over all levels.
    pub fn total_occupation(&self) -> f64 {
        self.a_k.iter().sum::<f64>() + self.above_k_max_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Alive {
    death: f64,
    birth: f64,
}

impl Eq for Alive {}

impl Ord for Alive {
    // BinaryHeap is a max-heap; the earliest death must come out first.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .death
            .total_cmp(&self.death)
            .then_with(|| other.birth.total_cmp(&self.birth))
    }
}

impl PartialOrd for Alive {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// A fully specified simulation: lifetime law, birth model, caps and the
/// number of occupation levels recorded individually.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    sampler: LifetimeSampler,
    model: BirthModel,
    policy: StoppingPolicy,
    k_max: usize,
}

impl Simulation {
    pub fn new(
        sampler: LifetimeSampler,
        model: BirthModel,
        policy: StoppingPolicy,
        k_max: usize,
    ) -> Result<Self, SimulationError> {
        model.validate()?;
        policy.validate()?;
        if k_max == 0 {
            return Err(SimulationError::InvalidKMax);
        }
        Ok(Self {
            sampler,
            model,
            policy,
            k_max,
        })
    }

    pub fn sampler(&self) -> &LifetimeSampler {
        &self.sampler
    }

    pub fn model(&self) -> &BirthModel {
        &self.model
    }

    pub fn policy(&self) -> &StoppingPolicy {
        &self.policy
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Simulates one realisation from a single newborn ancestor.
    pub fn run_replicate<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<OccupationRecord, SimulationError> {
        let mut record = OccupationRecord::new(self.k_max);
        let mut alive: BinaryHeap<Alive> = BinaryHeap::new();
        let mut now = 0.0f64;
        self.spawn(&mut alive, &mut record, now, 1, rng);

        let (per_capita_rate, batch) = match &self.model {
            BirthModel::Homogeneous { rate } => (*rate, 1),
            BirthModel::Batch { rate, batch_size } => (*rate, *batch_size as u64),
            BirthModel::AgeVarying(intensity) => (intensity.bound(), 1),
        };

        loop {
            let level = alive.len() as u64;
            if level == 0 {
                record.stop_reason = StopReason::Extinction;
                break;
            }
            if self.policy.population_cap.is_some_and(|cap| level >= cap) {
                record.stop_reason = StopReason::PopulationCap;
                break;
            }
            let next_death = alive.peek().map(|a| a.death).expect("non-empty");
            if next_death < now {
                return Err(SimulationError::InvariantViolation(format!(
                    "death at {next_death} scheduled before current time {now}"
                )));
            }
            let clock = per_capita_rate * level as f64;
            let next_birth = if clock > 0.0 {
                let e: f64 = Exp1.sample(rng);
                now + e / clock
            } else {
                f64::INFINITY
            };
            let birth_first = next_birth < next_death;
            let t_next = if birth_first { next_birth } else { next_death };

            if let Some(cap) = self.policy.time_cap {
                if t_next > cap {
                    record.dwell(level, cap - now);
                    record.stop_reason = StopReason::TimeCap;
                    break;
                }
            }
            record.dwell(level, t_next - now);
            now = t_next;

            if birth_first {
                if let BirthModel::AgeVarying(intensity) = &self.model {
                    let pick = rng.random_range(0..alive.len());
                    let age = now - alive.as_slice()[pick].birth;
                    let value = intensity.at(age);
                    if value > intensity.bound() {
                        return Err(SimulationError::IntensityBoundExceeded {
                            age,
                            value,
                            bound: intensity.bound(),
                        });
                    }
                    // rejected proposals leave the state unchanged
                    if rng.random::<f64>() * intensity.bound() >= value {
                        continue;
                    }
                }
                self.spawn(&mut alive, &mut record, now, batch, rng);
            } else {
                alive.pop();
            }
            record.events += 1;
            if record.events >= self.policy.event_cap && !alive.is_empty() {
                record.stop_reason = StopReason::EventCap;
                break;
            }
        }
        Ok(record)
    }

    fn spawn<R: Rng + ?Sized>(
        &self,
        alive: &mut BinaryHeap<Alive>,
        record: &mut OccupationRecord,
        now: f64,
        count: u64,
        rng: &mut R,
    ) {
        for _ in 0..count {
            let life = self.sampler.draw(rng);
            record.lifetime_sum += life;
            alive.push(Alive {
                death: now + life,
                birth: now,
            });
        }
        record.total_births += count;
    }

    /// Runs `replicates` independent realisations, replicate `i` on stream
    /// `(master_seed, i)`. The summary is identical for every worker count.
    pub fn monte_carlo(
        &self,
        replicates: u64,
        master_seed: u64,
        workers: usize,
    ) -> Result<MonteCarloSummary, SimulationError> {
        if replicates == 0 {
            return Err(SimulationError::NoReplicates);
        }
        let empty = || MonteCarloSummary::new(self.k_max, master_seed);
        let run = || {
            (0..replicates)
                .into_par_iter()
                .try_fold(empty, |mut acc, index| {
                    let mut rng = replicate_stream(master_seed, index);
                    let record =
                        self.run_replicate(&mut rng)
                            .map_err(|e| SimulationError::Replicate {
                                index,
                                source: Box::new(e),
                            })?;
                    acc.push(&record);
                    Ok(acc)
                })
                .try_reduce(empty, |a, b| Ok(a.merge(&b)))
        };
        match rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetime::PhaseTypeSpec;
    use crate::rng::replicate_stream;

    fn homogeneous(dist: &str, delta: f64, policy: StoppingPolicy, k_max: usize) -> Simulation {
        Simulation::new(
            LifetimeSampler::builtin(dist).unwrap(),
            BirthModel::Homogeneous { rate: delta },
            policy,
            k_max,
        )
        .unwrap()
    }

    #[test]
    fn no_births_gives_one_lifetime() {
        for dist in ["exp1", "gamma22", "mix", "det1"] {
            let sim = homogeneous(dist, 0.0, StoppingPolicy::default(), 3);
            let mut rng = replicate_stream(1, 0);
            let r = sim.run_replicate(&mut rng).unwrap();
            assert_eq!(r.total_births, 1);
            assert_eq!(r.stop_reason, StopReason::Extinction);
            assert_eq!(r.a_k[0], r.total_time);
            assert_eq!(r.a_k[0], r.lifetime_sum);
            assert_eq!(&r.a_k[1..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn accounting_identities_hold_per_replicate() {
        let sim = homogeneous("mix", 0.9, StoppingPolicy::uncapped(1_000_000), 3);
        for i in 0..2000 {
            let mut rng = replicate_stream(9, i);
            let r = sim.run_replicate(&mut rng).unwrap();
            assert_eq!(r.stop_reason, StopReason::Extinction);
            let tol = 1e-12 * r.integral_x.max(1.0);
            assert!((r.weighted_occupation() - r.integral_x).abs() <= tol);
            assert!((r.total_occupation() - r.total_time).abs() <= 1e-12 * r.total_time.max(1.0));
            // Σ Q_j = ∫ X(u) du on extinction
            assert!((r.lifetime_sum - r.integral_x).abs() <= 1e-9 * r.integral_x.max(1.0));
        }
    }

    #[test]
    fn population_cap_stops_at_level() {
        let sim = homogeneous("exp1", 3.0, StoppingPolicy::default(), 2);
        let mut capped = 0;
        for i in 0..200 {
            let r = sim.run_replicate(&mut replicate_stream(2, i)).unwrap();
            match r.stop_reason {
                StopReason::PopulationCap => capped += 1,
                StopReason::Extinction => {}
                other => panic!("unexpected stop {other:?}"),
            }
        }
        assert!(capped > 100);
    }

    #[test]
    fn event_and_time_caps_trigger() {
        let policy = StoppingPolicy {
            population_cap: None,
            event_cap: 5,
            time_cap: None,
        };
        let sim = homogeneous("exp1", 5.0, policy, 2);
        let r = sim.run_replicate(&mut replicate_stream(3, 0)).unwrap();
        assert!(r.events <= 5);
        let policy = StoppingPolicy {
            population_cap: None,
            event_cap: u64::MAX,
            time_cap: Some(0.5),
        };
        let sim = homogeneous("det1", 0.0, policy, 2);
        let r = sim.run_replicate(&mut replicate_stream(3, 0)).unwrap();
        assert_eq!(r.stop_reason, StopReason::TimeCap);
        assert_eq!(r.total_time, 0.5);
    }

    #[test]
    fn thinning_bound_violation_is_a_fault() {
        let intensity = AgeIntensity::new(
            vec![IntensityPiece {
                start: 0.0,
                end: 1.0,
                rate: 5.0,
            }],
            1.0,
        )
        .unwrap();
        let sim = Simulation::new(
            LifetimeSampler::builtin("det1").unwrap(),
            BirthModel::AgeVarying(intensity),
            StoppingPolicy::default(),
            2,
        )
        .unwrap();
        let err = (0..50)
            .find_map(|i| sim.run_replicate(&mut replicate_stream(4, i)).err())
            .expect("a proposal must land inside the profile");
        assert!(matches!(err, SimulationError::IntensityBoundExceeded { .. }));
    }

    #[test]
    fn batch_births_insert_whole_batches() {
        let sim = Simulation::new(
            LifetimeSampler::builtin("det1").unwrap(),
            BirthModel::Batch {
                rate: 0.7,
                batch_size: 3,
            },
            StoppingPolicy::default(),
            8,
        )
        .unwrap();
        for i in 0..200 {
            let r = sim.run_replicate(&mut replicate_stream(5, i)).unwrap();
            assert_eq!((r.total_births - 1) % 3, 0);
        }
    }

    #[test]
    fn invalid_configuration_is_rejected() {
        let s = LifetimeSampler::PhaseType(PhaseTypeSpec::exp1());
        assert_eq!(
            Simulation::new(s.clone(), BirthModel::Homogeneous { rate: -1.0 }, StoppingPolicy::default(), 3),
            Err(SimulationError::InvalidRate(-1.0))
        );
        assert_eq!(
            Simulation::new(
                s.clone(),
                BirthModel::Batch { rate: 1.0, batch_size: 0 },
                StoppingPolicy::default(),
                3
            ),
            Err(SimulationError::InvalidBatchSize)
        );
        assert_eq!(
            Simulation::new(s.clone(), BirthModel::Homogeneous { rate: 1.0 }, StoppingPolicy::uncapped(0), 3),
            Err(SimulationError::InvalidEventCap)
        );
        assert_eq!(
            Simulation::new(s, BirthModel::Homogeneous { rate: 1.0 }, StoppingPolicy::default(), 0),
            Err(SimulationError::InvalidKMax)
        );
    }

    #[test]
    fn summaries_do_not_depend_on_worker_count() {
        let sim = homogeneous("gamma22", 0.8, StoppingPolicy::default(), 4);
        let one = sim.monte_carlo(3000, 77, 1).unwrap();
        let four = sim.monte_carlo(3000, 77, 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one.replicates(), 3000);
    }
}
