//! A second, independently written simulator used as a reference.
//!
//! Instead of racing birth clocks against a death queue, every individual's
//! whole offspring schedule is drawn at its birth (Poisson counts with uniform
//! ages over the fertile window), and all births and deaths are then replayed
//! from one global event queue. The `#[ignore]`d runs at 10^6 replicates fixed
//! the reference values frozen into the acceptance suite.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use occupancy_core::lifetime::LifetimeSampler;
use occupancy_core::simulate::{
    counterexample_age_varying, counterexample_batch, AgeIntensity, BirthModel, Estimate, Moments, Simulation,
    StoppingPolicy,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, Poisson};

#[derive(Clone, Copy)]
enum Law {
    Unit,
    Exp,
}

#[derive(Clone, Copy)]
enum Fertility {
    /// Rate `δ` over the whole life.
    Constant(f64),
    /// Total mass `δ` spread uniformly over ages `[start, end]`.
    Window { delta: f64, start: f64, end: f64 },
}

#[derive(Clone, Copy)]
struct Oracle {
    law: Law,
    fertility: Fertility,
    batch: u32,
    cap: u64,
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Event(f64, i64);

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl Oracle {
    fn schedule<R: Rng>(&self, born: f64, rng: &mut R, queue: &mut BinaryHeap<Reverse<Event>>) {
        let life = match self.law {
            Law::Unit => 1.0,
            Law::Exp => Exp1.sample(rng),
        };
        queue.push(Reverse(Event(born + life, -1)));
        let (rate, start, end) = match self.fertility {
            Fertility::Constant(delta) => (delta, 0.0, life),
            Fertility::Window { delta, start, end } => (delta / (end - start), start, end.min(life)),
        };
        if end <= start || rate == 0.0 {
            return;
        }
        let mean = rate * (end - start);
        let count = Poisson::new(mean).unwrap().sample(rng) as u64;
        for _ in 0..count {
            let age = start + (end - start) * rng.random::<f64>();
            queue.push(Reverse(Event(born + age, self.batch as i64)));
        }
    }

    /// Time spent at levels `1..=k_max`.
    fn run<R: Rng>(&self, k_max: usize, rng: &mut R) -> Vec<f64> {
        let mut a = vec![0.0; k_max];
        let mut queue = BinaryHeap::new();
        self.schedule(0.0, rng, &mut queue);
        let (mut now, mut x) = (0.0, 1i64);
        while x > 0 && (x as u64) < self.cap {
            let Reverse(Event(t, change)) = queue.pop().expect("alive individuals have events");
            if (x as usize) <= k_max {
                a[x as usize - 1] += t - now;
            }
            now = t;
            x += change;
            for _ in 0..change.max(0) {
                self.schedule(now, rng, &mut queue);
            }
        }
        a
    }

    fn estimate(&self, k_max: usize, replicates: u64, seed: u64) -> Vec<Estimate> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut moments = vec![Moments::default(); k_max];
        for _ in 0..replicates {
            for (m, a) in moments.iter_mut().zip(self.run(k_max, &mut rng)) {
                m.push(a);
            }
        }
        moments.iter().map(Moments::estimate).collect()
    }
}

fn front(delta: f64) -> Fertility {
    Fertility::Window { delta, start: 0.0, end: 0.1 }
}

fn back(delta: f64) -> Fertility {
    Fertility::Window { delta, start: 0.9, end: 1.0 }
}

fn agree(sim: &Estimate, oracle: &Estimate, what: &str) {
    let z = sim.difference_z(oracle);
    assert!(z.abs() <= 4.0, "{what}: simulator {sim:?} vs oracle {oracle:?} (z = {z:.2})");
}

#[test]
fn oracle_reproduces_homogeneous_theory() {
    let oracle = Oracle {
        law: Law::Exp,
        fertility: Fertility::Constant(0.5),
        batch: 1,
        cap: 1000,
    };
    let est = oracle.estimate(3, 50_000, 11);
    for (k, e) in est.iter().enumerate() {
        let theory = 0.5f64.powi(k as i32) / (k + 1) as f64;
        assert!(e.z_score(theory).abs() <= 4.0, "K = {}: {e:?}", k + 1);
    }
}

#[test]
fn simulator_matches_oracle_on_counterexamples() {
    let reps = 20_000;
    let policy = StoppingPolicy::default();
    let age = counterexample_age_varying(
        10.0,
        &AgeIntensity::front_loaded(10.0).unwrap(),
        &AgeIntensity::back_loaded(10.0).unwrap(),
        reps,
        5,
        policy,
        1,
    )
    .unwrap();
    let unit_front = Oracle { law: Law::Unit, fertility: front(10.0), batch: 1, cap: 1000 };
    let unit_back = Oracle { fertility: back(10.0), ..unit_front };
    agree(&age.front_loaded, &unit_front.estimate(1, reps, 6)[0], "front-loaded A_1");
    agree(&age.back_loaded, &unit_back.estimate(1, reps, 7)[0], "back-loaded A_1");

    let batch = counterexample_batch(1.5, 2, 2, reps, 8, policy, 1).unwrap();
    let det = Oracle { law: Law::Unit, fertility: Fertility::Constant(1.5), batch: 2, cap: 1000 };
    let exp = Oracle { law: Law::Exp, ..det };
    let (det_o, exp_o) = (det.estimate(2, reps, 9), exp.estimate(2, reps, 10));
    for k in 0..2 {
        agree(&batch.deterministic[k], &det_o[k], "batch det1");
        agree(&batch.exponential[k], &exp_o[k], "batch exp1");
    }
}

#[test]
fn batch_of_one_is_the_homogeneous_model() {
    let sim = Simulation::new(
        LifetimeSampler::builtin("exp1").unwrap(),
        BirthModel::Batch { rate: 0.5, batch_size: 1 },
        StoppingPolicy::default(),
        2,
    )
    .unwrap();
    let a2 = sim.monte_carlo(200_000, 3, 1).unwrap().occupation(2);
    assert!(a2.z_score(0.25).abs() <= 4.0, "{a2:?}");
}

/// Reference values for the acceptance suite; run with `--ignored --nocapture`.
#[test]
#[ignore]
fn reference_values_at_one_million_replicates() {
    let reps = 1_000_000;
    let unit_front = Oracle { law: Law::Unit, fertility: front(10.0), batch: 1, cap: 1000 };
    let unit_back = Oracle { fertility: back(10.0), ..unit_front };
    println!("age-varying front A_1 = {:?}", unit_front.estimate(1, reps, 101)[0]);
    println!("age-varying back  A_1 = {:?}", unit_back.estimate(1, reps, 102)[0]);
    let det = Oracle { law: Law::Unit, fertility: Fertility::Constant(1.5), batch: 2, cap: 1000 };
    let exp = Oracle { law: Law::Exp, ..det };
    println!("batch det1 A_1 = {:?}", det.estimate(1, reps, 103)[0]);
    println!("batch exp1 A_1 = {:?}", exp.estimate(1, reps, 104)[0]);
}
