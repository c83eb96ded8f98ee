//! Replicate aggregation.
//!
//! Sums are kept in an exact fixed-point superaccumulator, so a summary does not
//! depend on the order in which replicates were folded in. Merging the summaries
//! of two disjoint replicate sets is bit-identical to summarising their union,
//! which is what makes the parallel driver independent of the worker count.

use serde::Serialize;

use super::{OccupationRecord, StopReason};

const LIMB_BITS: u32 = 32;
const LIMB_MASK: i64 = (1 << LIMB_BITS) - 1;
/// Bit position of 2^0 inside the accumulator (smallest subnormal is 2^-1074).
const BIAS: i32 = 1074;
/// 2098 bits of f64 range plus carry headroom.
const LIMBS: usize = 68;
/// Additions allowed between carry propagations (each adds < 2^32 per limb).
const MAX_PENDING: u32 = 1 << 29;

/// Exact sum of finite `f64` values.
#[derive(Clone)]
pub struct ExactSum {
    limbs: [i64; LIMBS],
    pending: u32,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self {
            limbs: [0; LIMBS],
            pending: 0,
        }
    }
}

impl std::fmt::Debug for ExactSum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactSum({})", self.value())
    }
}

impl PartialEq for ExactSum {
    fn eq(&self, other: &Self) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.normalize();
        b.normalize();
        a.limbs == b.limbs
    }
}

impl ExactSum {
    pub fn add(&mut self, x: f64) {
        debug_assert!(x.is_finite(), "ExactSum only accepts finite values");
        if x == 0.0 || !x.is_finite() {
            return;
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let biased_exp = ((bits >> 52) & 0x7ff) as i32;
        let fraction = bits & ((1u64 << 52) - 1);
        // x = mantissa * 2^(shift - BIAS)
        let (mantissa, shift) = if biased_exp == 0 {
            (fraction, 0)
        } else {
            (fraction | (1u64 << 52), biased_exp - 1)
        };
        let limb = (shift as u32 / LIMB_BITS) as usize;
        let offset = shift as u32 % LIMB_BITS;
        let wide = (mantissa as u128) << offset;
        let sign = if negative { -1 } else { 1 };
        for k in 0..3 {
            let chunk = ((wide >> (k * LIMB_BITS)) as i64) & LIMB_MASK;
            if chunk != 0 {
                self.limbs[limb + k as usize] += sign * chunk;
            }
        }
        self.pending += 1;
        if self.pending >= MAX_PENDING {
            self.normalize();
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        if self.pending + other.pending >= MAX_PENDING {
            self.normalize();
        }
        let mut o = other.clone();
        if self.pending + o.pending >= MAX_PENDING {
            o.normalize();
        }
        for (a, b) in self.limbs.iter_mut().zip(o.limbs.iter()) {
            *a += *b;
        }
        self.pending += o.pending;
    }

    /// Propagates carries so every limb but the top one lies in `[0, 2^32)`.
    fn normalize(&mut self) {
        let mut carry = 0i64;
        for limb in self.limbs.iter_mut().take(LIMBS - 1) {
            let v = *limb + carry;
            carry = v >> LIMB_BITS;
            *limb = v & LIMB_MASK;
        }
        self.limbs[LIMBS - 1] += carry;
        self.pending = 0;
    }

    /// The exact sum rounded to the nearest `f64`.
    pub fn value(&self) -> f64 {
        let mut acc = self.clone();
        acc.normalize();
        let negative = acc.limbs[LIMBS - 1] < 0;
        if negative {
            for limb in acc.limbs.iter_mut() {
                *limb = -*limb;
            }
            acc.normalize();
        }
        let Some(top) = acc.limbs.iter().rposition(|&l| l != 0) else {
            return 0.0;
        };
        let take = |i: isize| -> u128 {
            if i < 0 {
                0
            } else {
                acc.limbs[i as usize] as u128
            }
        };
        let top = top as isize;
        let mut head = (take(top) << 64) | (take(top - 1) << 32) | take(top - 2);
        let sticky = top >= 3 && acc.limbs[..(top - 2) as usize].iter().any(|&l| l != 0);
        if sticky {
            head |= 1;
        }
        let magnitude = ldexp(head as f64, (top as i32 - 2) * LIMB_BITS as i32 - BIAS);
        if negative {
            -magnitude
        } else {
            magnitude
        }
    }
}

fn ldexp(mut x: f64, mut exp: i32) -> f64 {
    while exp > 1000 {
        x *= 2f64.powi(1000);
        exp -= 1000;
    }
    while exp < -1000 {
        x *= 2f64.powi(-1000);
        exp += 1000;
    }
    x * 2f64.powi(exp)
}

/// Count, sum and sum of squares of one per-replicate quantity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    n: u64,
    sum: ExactSum,
    sum_sq: ExactSum,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum.value() / self.n as f64
    }

    /// Sample standard deviation (denominator `n - 1`).
    pub fn std_dev(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let s = self.sum.value();
        let var = (self.sum_sq.value() - s * s / n) / (n - 1.0);
        var.max(0.0).sqrt()
    }

    /// Sample standard deviation over `√n`.
    pub fn std_error(&self) -> f64 {
        self.std_dev() / (self.n as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            std_error: self.std_error(),
        }
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    /// `(mean - target) / std_error`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.std_error
    }

    /// z-score of `self - other` using the pooled error `√(se₁² + se₂²)`.
    pub fn difference_z(&self, other: &Estimate) -> f64 {
        (self.mean - other.mean) / self.pooled_error(other)
    }

    pub fn pooled_error(&self, other: &Estimate) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

/// Aggregate of many [`OccupationRecord`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    master_seed: u64,
    occupation: Vec<Moments>,
    above_k_max: Moments,
    total_time: Moments,
    total_births: Moments,
    integral_x: Moments,
    extinct: Moments,
    capped: Moments,
}

impl MonteCarloSummary {
    pub fn new(k_max: usize, master_seed: u64) -> Self {
        Self {
            master_seed,
            occupation: vec![Moments::default(); k_max],
            above_k_max: Moments::default(),
            total_time: Moments::default(),
            total_births: Moments::default(),
            integral_x: Moments::default(),
            extinct: Moments::default(),
            capped: Moments::default(),
        }
    }

    pub fn push(&mut self, record: &OccupationRecord) {
        debug_assert_eq!(record.a_k.len(), self.occupation.len());
        for (m, &a) in self.occupation.iter_mut().zip(&record.a_k) {
            m.push(a);
        }
        self.above_k_max.push(record.above_k_max_time);
        self.total_time.push(record.total_time);
        self.total_births.push(record.total_births as f64);
        self.integral_x.push(record.integral_x);
        let extinct = record.stop_reason == StopReason::Extinction;
        self.extinct.push(if extinct { 1.0 } else { 0.0 });
        self.capped.push(if extinct { 0.0 } else { 1.0 });
    }

    /// Combines two summaries of disjoint replicate sets.
    pub fn merge(mut self, other: &MonteCarloSummary) -> Self {
        assert_eq!(self.occupation.len(), other.occupation.len(), "K_max mismatch");
        for (a, b) in self.occupation.iter_mut().zip(&other.occupation) {
            a.merge(b);
        }
        self.above_k_max.merge(&other.above_k_max);
        self.total_time.merge(&other.total_time);
        self.total_births.merge(&other.total_births);
        self.integral_x.merge(&other.integral_x);
        self.extinct.merge(&other.extinct);
        self.capped.merge(&other.capped);
        self
    }

    pub fn replicates(&self) -> u64 {
        self.total_time.count()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn k_max(&self) -> usize {
        self.occupation.len()
    }

    /// Estimate of `E(A_K)`, `K` counted from one.
    pub fn occupation(&self, k: usize) -> Estimate {
        self.occupation[k - 1].estimate()
    }

    pub fn occupations(&self) -> Vec<Estimate> {
        self.occupation.iter().map(Moments::estimate).collect()
    }

    /// Time spent above `K_max`.
    pub fn above_k_max(&self) -> Estimate {
        self.above_k_max.estimate()
    }

    pub fn total_time(&self) -> Estimate {
        self.total_time.estimate()
    }

    pub fn total_births(&self) -> Estimate {
        self.total_births.estimate()
    }

    pub fn integral_x(&self) -> Estimate {
        self.integral_x.estimate()
    }

    pub fn extinction_frequency(&self) -> Estimate {
        self.extinct.estimate()
    }

    /// Fraction of replicates stopped by any cap rather than by extinction.
    pub fn capped_fraction(&self) -> f64 {
        self.capped.mean()
    }
}
