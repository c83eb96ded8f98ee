//! Sparse generators of the branching chain and its modifications.

use serde::Serialize;
use serde_json::json;

use super::closed_form::multinomial_mass;
use super::state::StateSpace;
use super::w::{WVector, W_TOLERANCE};
use super::MarkovError;
use crate::lifetime::PhaseTypeSpec;

/// What happens to births out of the top level of a truncated chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Routed to an absorbing sink.
    Kill,
    /// Suppressed: the chain stays where it is.
    Censor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Absorbed at the empty state; births out of level `N` are killed.
    Absorbing,
    /// The sole individual's death restarts with one newborn.
    Regeneration { boundary: Boundary },
    /// `P_N`: births at `N` restart at level one; the sole individual's death
    /// jumps to level `N`.
    Population { n: usize },
}

/// Row-compressed off-diagonal rates plus the diagonal.
///
/// States are those of the [`StateSpace`] the generator was built on; a killed
/// chain has one extra absorbing sink state at index `space.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    kind: GeneratorKind,
    sink: Option<usize>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    /// Number of states, the sink included.
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn sink(&self) -> Option<usize> {
        self.sink
    }

    /// Off-diagonal entries `(column, rate)` of a row, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.rates[r].iter().copied())
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Entry `(i, j)`, diagonal included.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        let r = self.row_start[i]..self.row_start[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(pos) => self.rates[r.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn off_diagonal_count(&self) -> usize {
        self.cols.len()
    }

    /// `max_i |Σ_j G_{i,j}|` relative to the row's total rate.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                let off: f64 = self.row(i).map(|(_, r)| r).sum();
                (off + self.diag[i]).abs() / off.max(1.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn min_off_diagonal(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `row,col,rate` triplets, diagonal included, in row-major order.
    pub fn to_triplet_csv(&self) -> String {
        let mut out = String::from("row,col,rate\n");
        for i in 0..self.dim() {
            let mut entries: Vec<(usize, f64)> = self.row(i).collect();
            entries.push((i, self.diag[i]));
            entries.sort_by_key(|e| e.0);
            for (j, rate) in entries {
                out.push_str(&format!("{i},{j},{rate}\n"));
            }
        }
        out
    }

    /// JSON with the state labels as nested count arrays (the sink as `"sink"`).
    pub fn to_json(&self, space: &StateSpace) -> serde_json::Value {
        let states: Vec<serde_json::Value> = (0..self.dim())
            .map(|i| {
                if Some(i) == self.sink {
                    json!("sink")
                } else {
                    json!(space.nested(i))
                }
            })
            .collect();
        let mut entries = Vec::new();
        for i in 0..self.dim() {
            entries.push(json!([i, i, self.diag[i]]));
            for (j, rate) in self.row(i) {
                entries.push(json!([i, j, rate]));
            }
        }
        json!({ "generator": self.kind, "states": states, "entries": entries })
    }
}

/// Absorbing branching chain on a space that includes the empty state.
pub fn build_branching_generator(spec: &PhaseTypeSpec, delta: f64, space: &StateSpace) -> Result<GeneratorMatrix, MarkovError> {
    check_delta(delta)?;
    check_layout(spec, space)?;
    if !space.includes_empty() {
        return Err(MarkovError::ShapeMismatch(
            "the absorbing chain needs the empty state".into(),
        ));
    }
    Ok(build(spec, delta, space, GeneratorKind::Absorbing, None))
}

/// Regeneration chain with births out of the top level censored.
pub fn build_regeneration_generator(spec: &PhaseTypeSpec, delta: f64, space: &StateSpace) -> Result<GeneratorMatrix, MarkovError> {
    build_regeneration_generator_with(spec, delta, space, Boundary::Censor)
}

pub fn build_regeneration_generator_with(
    spec: &PhaseTypeSpec,
    delta: f64,
    space: &StateSpace,
    boundary: Boundary,
) -> Result<GeneratorMatrix, MarkovError> {
    check_delta(delta)?;
    if delta >= 1.0 {
        return Err(MarkovError::InvalidDelta {
            delta,
            reason: "the regeneration chain is positive recurrent only for δ < 1",
        });
    }
    check_layout(spec, space)?;
    check_no_empty(space)?;
    Ok(build(spec, delta, space, GeneratorKind::Regeneration { boundary }, None))
}

/// `P_N` with `N = space.max_level()`.
pub fn build_population_process_generator(
    spec: &PhaseTypeSpec,
    delta: f64,
    space: &StateSpace,
    w: &WVector,
) -> Result<GeneratorMatrix, MarkovError> {
    check_delta(delta)?;
    check_layout(spec, space)?;
    check_no_empty(space)?;
    if w.flat().len() != space.stages() {
        return Err(MarkovError::ShapeMismatch("w does not match the stage layout".into()));
    }
    if !(w.residual() < W_TOLERANCE) {
        return Err(MarkovError::WResidual(w.residual()));
    }
    let n = space.max_level();
    Ok(build(spec, delta, space, GeneratorKind::Population { n }, Some(&w.flat())))
}

fn check_delta(delta: f64) -> Result<(), MarkovError> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(MarkovError::InvalidDelta {
            delta,
            reason: "birth rate must be finite and nonnegative",
        })
    }
}

fn check_layout(spec: &PhaseTypeSpec, space: &StateSpace) -> Result<(), MarkovError> {
    if spec.stage_layout() == space.layout() {
        Ok(())
    } else {
        Err(MarkovError::ShapeMismatch(format!(
            "spec layout {:?} differs from state space layout {:?}",
            spec.stage_layout(),
            space.layout()
        )))
    }
}

fn check_no_empty(space: &StateSpace) -> Result<(), MarkovError> {
    if space.includes_empty() {
        Err(MarkovError::ShapeMismatch(
            "this chain is defined on levels 1..N only".into(),
        ))
    } else {
        Ok(())
    }
}

fn build(spec: &PhaseTypeSpec, delta: f64, space: &StateSpace, kind: GeneratorKind, w: Option<&[f64]>) -> GeneratorMatrix {
    let n = space.max_level();
    let killed = matches!(
        kind,
        GeneratorKind::Absorbing | GeneratorKind::Regeneration { boundary: Boundary::Kill }
    );
    let sink = killed.then_some(space.len());
    let dim = space.len() + usize::from(killed);

    let components = spec.components();
    let first_stage: Vec<usize> = (0..components.len()).map(|i| space.stage_index(i, 0)).collect();
    let newborn: Vec<usize> = first_stage
        .iter()
        .map(|&s| {
            let mut e = vec![0u32; space.stages()];
            e[s] = 1;
            space.index_of(&e).expect("level one is enumerated")
        })
        .collect();
    // Multinomial(N, w) targets of the sole individual's death in P_N.
    let restart_at_top: Vec<(usize, f64)> = match w {
        Some(w) => space.level_range(n).map(|t| (t, multinomial_mass(space.state(t), w))).collect(),
        None => Vec::new(),
    };

    let mut row_start = Vec::with_capacity(dim + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    let mut diag = vec![0.0; dim];
    let mut row: Vec<(usize, f64)> = Vec::new();
    let mut target = vec![0u32; space.stages()];

    for index in 0..space.len() {
        row_start.push(cols.len());
        row.clear();
        let state = space.state(index);
        let k = space.level_of(index);
        if k == 0 {
            continue;
        }
        let mut push = |col: usize, rate: f64| {
            if rate > 0.0 && col != index {
                row.push((col, rate));
            }
        };

        for (i, c) in components.iter().enumerate() {
            let last = c.stage_rates.len() - 1;
            for (j, &gamma) in c.stage_rates.iter().enumerate() {
                let s = first_stage[i] + j;
                if state[s] == 0 {
                    continue;
                }
                let rate = state[s] as f64 * gamma;
                target.copy_from_slice(state);
                target[s] -= 1;
                if j < last {
                    target[s + 1] += 1;
                    push(space.index_of(&target).expect("same level"), rate);
                } else if k >= 2 {
                    push(space.index_of(&target).expect("level below"), rate);
                } else {
                    match kind {
                        GeneratorKind::Absorbing => push(space.index_of(&target).expect("empty state"), rate),
                        GeneratorKind::Regeneration { .. } => {
                            for (l, comp) in components.iter().enumerate() {
                                push(newborn[l], rate * comp.weight);
                            }
                        }
                        GeneratorKind::Population { .. } => {
                            for &(t, mass) in &restart_at_top {
                                push(t, rate * mass);
                            }
                        }
                    }
                }
            }
        }

        for (l, comp) in components.iter().enumerate() {
            let rate = k as f64 * delta * comp.weight;
            if k < n {
                target.copy_from_slice(state);
                target[first_stage[l]] += 1;
                push(space.index_of(&target).expect("level above"), rate);
            } else {
                match kind {
                    GeneratorKind::Population { .. } => push(newborn[l], rate),
                    GeneratorKind::Regeneration { boundary: Boundary::Censor } => {}
                    _ => push(sink.expect("killed chain has a sink"), rate),
                }
            }
        }

        row.sort_by_key(|e| e.0);
        let mut total = 0.0;
        let mut previous: Option<usize> = None;
        for &(col, rate) in row.iter() {
            total += rate;
            if previous == Some(col) {
                *rates.last_mut().expect("merged entry") += rate;
            } else {
                cols.push(col);
                rates.push(rate);
                previous = Some(col);
            }
        }
        diag[index] = -total;
    }
    if killed {
        row_start.push(cols.len());
    }
    row_start.push(cols.len());

    GeneratorMatrix {
        kind,
        sink,
        row_start,
        cols,
        rates,
        diag,
    }
}
