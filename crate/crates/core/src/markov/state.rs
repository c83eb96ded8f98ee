//! Population states `k = (k_{i,j})` and their graded lexicographic enumeration.

use std::ops::Range;

use serde::Serialize;

use super::MarkovError;

/// Default ceiling on the number of enumerated states.
pub const DEFAULT_STATE_BUDGET: usize = 4_000_000;

/// Counts of alive individuals per (component, stage), flattened in stage order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct StateVector {
    counts: Vec<u32>,
}

impl StateVector {
    pub fn new(counts: Vec<u32>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn level(&self) -> usize {
        level(&self.counts)
    }
}

pub(crate) fn level(counts: &[u32]) -> usize {
    counts.iter().map(|&c| c as usize).sum()
}

/// All states with `1 ≤ K ≤ N` (plus the empty state on request).
///
/// Levels are contiguous and in increasing order; inside a level the states
/// are sorted in descending lexicographic order, so level `K` starts with
/// `K·e_{1,1}` and ends with `K·e_{m,n_m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    layout: Vec<usize>,
    stage_offsets: Vec<usize>,
    max_level: usize,
    include_empty: bool,
    /// `level_start[K]` is the index of the first state at level `K`.
    level_start: Vec<usize>,
    counts: Vec<u32>,
}

impl StateSpace {
    pub fn enumerate(layout: &[usize], max_level: usize, include_empty: bool) -> Result<Self, MarkovError> {
        Self::enumerate_with_budget(layout, max_level, include_empty, DEFAULT_STATE_BUDGET)
    }

    pub fn enumerate_with_budget(
        layout: &[usize],
        max_level: usize,
        include_empty: bool,
        budget: usize,
    ) -> Result<Self, MarkovError> {
        if max_level == 0 {
            return Err(MarkovError::InvalidTruncation(max_level));
        }
        if layout.is_empty() || layout.contains(&0) {
            return Err(MarkovError::ShapeMismatch("empty stage layout".into()));
        }
        let stages: usize = layout.iter().sum();
        let first = if include_empty { 0 } else { 1 };
        let mut total: u128 = 0;
        for k in first..=max_level {
            total = level_size(k, stages)
                .and_then(|c| total.checked_add(c))
                .ok_or(MarkovError::Capacity { states: u128::MAX, budget })?;
        }
        if total > budget as u128 {
            return Err(MarkovError::Capacity { states: total, budget });
        }

        let mut level_start = vec![0usize; max_level + 2];
        let mut counts = Vec::with_capacity(total as usize * stages);
        let mut scratch = vec![0u32; stages];
        for k in 0..=max_level {
            level_start[k] = counts.len() / stages;
            if k >= first {
                push_compositions(k as u32, 0, &mut scratch, &mut counts);
            }
        }
        level_start[max_level + 1] = counts.len() / stages;

        let mut stage_offsets = Vec::with_capacity(layout.len());
        let mut acc = 0;
        for &n in layout {
            stage_offsets.push(acc);
            acc += n;
        }
        Ok(Self {
            layout: layout.to_vec(),
            stage_offsets,
            max_level,
            include_empty,
            level_start,
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.level_start[self.max_level + 1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn stages(&self) -> usize {
        self.layout.iter().sum()
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn includes_empty(&self) -> bool {
        self.include_empty
    }

    /// Flat stage index of stage `stage` (from zero) of component `component`.
    pub fn stage_index(&self, component: usize, stage: usize) -> usize {
        self.stage_offsets[component] + stage
    }

    pub fn state(&self, index: usize) -> &[u32] {
        let s = self.stages();
        &self.counts[index * s..(index + 1) * s]
    }

    pub fn state_vector(&self, index: usize) -> StateVector {
        StateVector::new(self.state(index).to_vec())
    }

    /// Counts grouped per component, e.g. `[[1, 0], [2]]`.
    pub fn nested(&self, index: usize) -> Vec<Vec<u32>> {
        let state = self.state(index);
        self.stage_offsets
            .iter()
            .zip(&self.layout)
            .map(|(&o, &n)| state[o..o + n].to_vec())
            .collect()
    }

    pub fn level_of(&self, index: usize) -> usize {
        self.level_start.partition_point(|&s| s <= index) - 1
    }

    /// Index range of the states at level `k` (empty outside the space).
    pub fn level_range(&self, k: usize) -> Range<usize> {
        if k > self.max_level {
            return self.len()..self.len();
        }
        self.level_start[k]..self.level_start[k + 1]
    }

    /// Index of `counts`, computed by ranking rather than lookup.
    pub fn index_of(&self, counts: &[u32]) -> Option<usize> {
        if counts.len() != self.stages() {
            return None;
        }
        let k = level(counts);
        if k > self.max_level || (k == 0 && !self.include_empty) {
            return None;
        }
        Some(self.level_start[k] + rank_in_level(counts, k))
    }
}

/// `C(K+S-1, S-1)`, the number of states at level `K` over `S` stages.
pub fn level_size(k: usize, stages: usize) -> Option<u128> {
    binomial((k + stages - 1) as u128, (stages - 1) as u128)
}

fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc = C(n - k + i + 1, i + 1) after the division
        acc = acc.checked_mul(n - k + i + 1)? / (i + 1);
    }
    Some(acc)
}

fn push_compositions(remaining: u32, position: usize, scratch: &mut [u32], out: &mut Vec<u32>) {
    if position + 1 == scratch.len() {
        scratch[position] = remaining;
        out.extend_from_slice(scratch);
        return;
    }
    for v in (0..=remaining).rev() {
        scratch[position] = v;
        push_compositions(remaining - v, position + 1, scratch, out);
    }
}

/// Position of `counts` among the level-`k` states in descending lex order.
fn rank_in_level(counts: &[u32], k: usize) -> usize {
    let s = counts.len();
    let mut rank: u128 = 0;
    let mut remaining = k as u128;
    for (i, &c) in counts.iter().enumerate().take(s - 1) {
        let c = c as u128;
        let tail = (s - i - 1) as u128;
        if remaining > c {
            // states sharing the prefix but with a larger value at position i
            rank += binomial(remaining - c - 1 + tail, tail).expect("within enumerated range");
        }
        remaining -= c;
    }
    rank as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_stars_and_bars() {
        let gamma22 = StateSpace::enumerate(&[2], 3, false).unwrap();
        assert_eq!(gamma22.len(), 9);
        assert_eq!(StateSpace::enumerate(&[2], 3, true).unwrap().len(), 10);
        assert_eq!(StateSpace::enumerate(&[1], 5, false).unwrap().len(), 5);
        assert_eq!(StateSpace::enumerate(&[1, 1], 1, false).unwrap().len(), 2);
        let big = StateSpace::enumerate(&[2, 1], 7, false).unwrap();
        for k in 1..=7 {
            assert_eq!(big.level_range(k).len() as u128, level_size(k, 3).unwrap());
        }
    }

    #[test]
    fn ordering_is_graded_descending_lex() {
        let space = StateSpace::enumerate(&[2], 2, true).unwrap();
        let states: Vec<&[u32]> = (0..space.len()).map(|i| space.state(i)).collect();
        assert_eq!(
            states,
            vec![&[0, 0][..], &[1, 0], &[0, 1], &[2, 0], &[1, 1], &[0, 2]]
        );
        assert_eq!(space.nested(4), vec![vec![1, 1]]);
        let mix = StateSpace::enumerate(&[1, 2], 1, false).unwrap();
        assert_eq!(mix.nested(0), vec![vec![1], vec![0, 0]]);
        assert_eq!(mix.stage_index(1, 1), 2);
    }

    #[test]
    fn ranking_inverts_enumeration() {
        for (layout, n, empty) in [(&[1usize][..], 30, true), (&[2], 12, false), (&[2, 1], 9, true), (&[1, 3, 1], 6, false)] {
            let space = StateSpace::enumerate(layout, n, empty).unwrap();
            for i in 0..space.len() {
                assert_eq!(space.index_of(space.state(i)), Some(i));
                assert_eq!(space.level_of(i), level(space.state(i)));
            }
        }
        let space = StateSpace::enumerate(&[2], 3, false).unwrap();
        assert_eq!(space.index_of(&[0, 0]), None);
        assert_eq!(space.index_of(&[4, 0]), None);
        assert_eq!(space.index_of(&[1]), None);
    }

    #[test]
    fn capacity_is_enforced() {
        let err = StateSpace::enumerate_with_budget(&[2, 2], 100, false, 1000).unwrap_err();
        assert!(matches!(err, MarkovError::Capacity { .. }));
        assert!(StateSpace::enumerate(&[2], 0, false).is_err());
    }
}
