//! Exact eigen-analysis of the tagged-lineage chain on a capacity-bounded
//! state space.
//!
//! A state is a pair `(tag type, composition)` with the tag alive inside the
//! composition. On such finite spaces the lineage chain's generator is a
//! sparse matrix; its dominant triplet `(lambda, h, gamma)` gives the growth
//! rate, the harmonic weight, and the stationary ancestral law, all to
//! near machine precision.

use std::collections::HashMap;

use crate::error::EigenError;
use crate::model::{ModelSpec, OffspringVector, PopVector, PsiFunction, TypeId};

/// All pairs `(r, v)` with `v_r >= 1` and `1 <= ||v|| <= zbar`, ordered by
/// type then lexicographically by composition.
pub struct StateSpace {
    states: Vec<(TypeId, PopVector)>,
    index: HashMap<(TypeId, PopVector), usize>,
    zbar: u32,
}

pub const DEFAULT_STATE_LIMIT: usize = 200_000;

pub fn enumerate_states(
    num_types: usize,
    zbar: u32,
    limit: usize,
) -> Result<StateSpace, EigenError> {
    let mut states = Vec::new();
    let mut v = vec![0u32; num_types];
    for r in 0..num_types {
        push_compositions(&mut states, &mut v, 0, zbar, r, limit)?;
    }
    let index = states
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    Ok(StateSpace {
        states,
        index,
        zbar,
    })
}

fn push_compositions(
    out: &mut Vec<(TypeId, PopVector)>,
    v: &mut Vec<u32>,
    pos: usize,
    budget: u32,
    r: usize,
    limit: usize,
) -> Result<(), EigenError> {
    if pos == v.len() {
        let pv = PopVector::new(v.clone());
        if pv.norm1() >= 1 && pv.count(TypeId(r as u32)) >= 1 {
            if out.len() >= limit {
                return Err(EigenError::StateLimitExceeded { limit });
            }
            out.push((TypeId(r as u32), pv));
        }
        return Ok(());
    }
    for c in 0..=budget {
        v[pos] = c;
        push_compositions(out, v, pos + 1, budget - c, r, limit)?;
    }
    v[pos] = 0;
    Ok(())
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn zbar(&self) -> u32 {
        self.zbar
    }

    pub fn state(&self, i: usize) -> &(TypeId, PopVector) {
        &self.states[i]
    }

    pub fn states(&self) -> &[(TypeId, PopVector)] {
        &self.states
    }

    pub fn index_of(&self, ty: TypeId, comp: &PopVector) -> Result<usize, EigenError> {
        self.index
            .get(&(ty, comp.clone()))
            .copied()
            .ok_or_else(|| EigenError::StateNotFound {
                ty,
                composition: comp.to_string(),
            })
    }
}

/// Enumerate the lineage state space of a model; needs a finite capacity.
pub fn state_space_of(model: &ModelSpec, limit: usize) -> Result<StateSpace, EigenError> {
    let zbar = model
        .kernel()
        .capacity()
        .ok_or(EigenError::CapacityRequired)?;
    enumerate_states(model.num_types(), zbar, limit)
}

/// Row-sparse generator of the tagged-lineage chain. Off-diagonal entries
/// are nonnegative; the diagonal holds the negated total event rate, so row
/// sums equal the net offspring excess of the tag's own branching.
pub struct SparseGenerator {
    pub rows: Vec<Vec<(u32, f64)>>,
    pub diag: Vec<f64>,
}

impl SparseGenerator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.rows[i].iter().map(|(_, r)| r).sum::<f64>()
    }

    /// `out = (G + shift I) x`.
    fn apply_shifted(&self, shift: f64, x: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let mut acc = (self.diag[i] + shift) * x[i];
            for &(j, r) in &self.rows[i] {
                acc += r * x[j as usize];
            }
            out[i] = acc;
        }
    }

    /// `out = x (G + shift I)` for a row vector `x`.
    fn apply_shifted_left(&self, shift: f64, x: &[f64], out: &mut [f64]) {
        for (o, (&d, &xi)) in out.iter_mut().zip(self.diag.iter().zip(x)) {
            *o = (d + shift) * xi;
        }
        for i in 0..self.len() {
            for &(j, r) in &self.rows[i] {
                out[j as usize] += r * x[i];
            }
        }
    }
}

/// Assemble the lineage-chain generator over an enumerated state space.
///
/// From `(x, z)`: the tag branches with offspring `k` and the tag slot moves
/// to each offspring type `w` with weight `k_w`; any of the other `z_y`
/// individuals (minus the tag's own slot) branches and only the composition
/// moves; the diagonal subtracts the total event rate, so the tag's death
/// shows up as a row-sum deficit rather than a transition.
pub fn build_generator(
    model: &ModelSpec,
    space: &StateSpace,
) -> Result<SparseGenerator, EigenError> {
    let n = space.len();
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    let mut diag = vec![0.0f64; n];
    for (i, (x, z)) in space.states().iter().enumerate() {
        let mut row: HashMap<usize, f64> = HashMap::new();
        let mut total_rate = 0.0f64;
        for (y, count) in z.present() {
            for entry_idx in 0..model.kernel().support(y).len() {
                let rate = model.kernel().rate_entry(y, z, entry_idx);
                if rate == 0.0 {
                    continue;
                }
                total_rate += count as f64 * rate;
                let k = &model.kernel().support(y)[entry_idx].offspring;
                let znew = z.after_event(y, k);
                if y == *x {
                    // tag slot branches: one of the k children carries it on
                    for (w, kw) in k.present() {
                        let target = space
                            .index_of(w, &znew)
                            .expect("capacity-gated event stays inside the space");
                        *row.entry(target).or_insert(0.0) += rate * kw as f64;
                    }
                    // the other count-1 individuals of the tag's type
                    if count > 1 {
                        let target = space
                            .index_of(*x, &znew)
                            .expect("tag slot unaffected by a bystander event");
                        *row.entry(target).or_insert(0.0) += (count - 1) as f64 * rate;
                    }
                } else {
                    let target = space
                        .index_of(*x, &znew)
                        .expect("tag slot unaffected by a bystander event");
                    *row.entry(target).or_insert(0.0) += count as f64 * rate;
                }
            }
        }
        diag[i] = -total_rate;
        // self-transitions fold into the diagonal
        if let Some(selfr) = row.remove(&i) {
            diag[i] += selfr;
        }
        let mut r: Vec<(u32, f64)> = row.into_iter().map(|(j, v)| (j as u32, v)).collect();
        r.sort_unstable_by_key(|&(j, _)| j);
        rows.push(r);
    }
    Ok(SparseGenerator { rows, diag })
}

/// Verify every state reaches and is reached by state 0 through positive
/// rates; reports a witness pair otherwise.
pub fn irreducibility_check(g: &SparseGenerator) -> Result<(), EigenError> {
    let n = g.len();
    let reach = |transpose: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        // adjacency of the transpose is built once for the backward pass
        let mut incoming: Vec<Vec<u32>> = vec![Vec::new(); if transpose { n } else { 0 }];
        if transpose {
            for (i, row) in g.rows.iter().enumerate() {
                for &(j, r) in row {
                    if r > 0.0 {
                        incoming[j as usize].push(i as u32);
                    }
                }
            }
        }
        while let Some(i) = stack.pop() {
            if transpose {
                for &p in &incoming[i] {
                    if !seen[p as usize] {
                        seen[p as usize] = true;
                        stack.push(p as usize);
                    }
                }
            } else {
                for &(j, r) in &g.rows[i] {
                    if r > 0.0 && !seen[j as usize] {
                        seen[j as usize] = true;
                        stack.push(j as usize);
                    }
                }
            }
        }
        seen
    };
    let fwd = reach(false);
    if let Some(t) = fwd.iter().position(|&s| !s) {
        return Err(EigenError::NotIrreducible { from: 0, to: t });
    }
    let bwd = reach(true);
    if let Some(t) = bwd.iter().position(|&s| !s) {
        return Err(EigenError::NotIrreducible { from: t, to: 0 });
    }
    Ok(())
}

/// Dominant triplet of the lineage generator: growth rate `lambda`, positive
/// right vector `h`, positive left vector `gamma`, normalised so that
/// `sum(gamma) = 1` and `sum(gamma h) = 1`.
#[derive(Clone, Debug)]
pub struct PerronTriplet {
    pub lambda: f64,
    pub h: Vec<f64>,
    pub gamma: Vec<f64>,
    pub residual_right: f64,
    pub residual_left: f64,
    pub iterations: u64,
}

const POWER_TARGET: f64 = 1e-11;
const POWER_MAX_ITERS: u64 = 4_000_000;

pub fn perron_frobenius(g: &SparseGenerator) -> Result<PerronTriplet, EigenError> {
    irreducibility_check(g)?;
    let n = g.len();
    // unit shift past the largest diagonal keeps every diagonal entry of the
    // shifted matrix strictly positive, which rules out periodicity
    let shift = 1.0 + g.diag.iter().fold(0.0f64, |m, &d| m.max(d.abs()));
    let mut h = vec![1.0f64 / n as f64; n];
    let mut gamma = vec![1.0f64 / n as f64; n];
    let mut next = vec![0.0f64; n];
    let mut iters = 0u64;
    let mut last_resid = f64::INFINITY;
    loop {
        g.apply_shifted(shift, &h, &mut next);
        l1_normalize(&mut next);
        std::mem::swap(&mut h, &mut next);
        g.apply_shifted_left(shift, &gamma, &mut next);
        l1_normalize(&mut next);
        std::mem::swap(&mut gamma, &mut next);
        iters += 1;
        // the convergence test applies the final normalisation first, since
        // rescaling h against gamma magnifies its residual by the same factor
        if iters % 64 == 0 || iters < 8 {
            let inner: f64 = gamma.iter().zip(&h).map(|(a, b)| a * b).sum();
            let hs: Vec<f64> = h.iter().map(|v| v / inner).collect();
            let mut gh = vec![0.0f64; n];
            g.apply_shifted(0.0, &hs, &mut gh);
            // with sum(gamma hs) = 1 this inner product is the Rayleigh
            // estimate of the growth rate, second-order accurate
            let lambda: f64 = gamma.iter().zip(&gh).map(|(a, b)| a * b).sum();
            let residual_right = (0..n)
                .map(|i| (gh[i] - lambda * hs[i]).abs())
                .fold(0.0f64, f64::max);
            let mut gg = vec![0.0f64; n];
            g.apply_shifted_left(0.0, &gamma, &mut gg);
            let residual_left = (0..n)
                .map(|i| (gg[i] - lambda * gamma[i]).abs())
                .fold(0.0f64, f64::max);
            last_resid = residual_right.max(residual_left);
            if last_resid <= POWER_TARGET {
                return Ok(PerronTriplet {
                    lambda,
                    h: hs,
                    gamma,
                    residual_right,
                    residual_left,
                    iterations: iters,
                });
            }
        }
        if iters >= POWER_MAX_ITERS {
            return Err(EigenError::NoConvergence {
                iters,
                increment: last_resid,
            });
        }
    }
}

fn l1_normalize(v: &mut [f64]) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    for x in v {
        *x /= norm;
    }
}

/// Stationary law of the lineage chain: `pi = gamma .* h` under the triplet
/// normalisation.
pub fn stationary_law(trip: &PerronTriplet) -> Vec<f64> {
    trip.gamma
        .iter()
        .zip(&trip.h)
        .map(|(g, h)| g * h)
        .collect()
}

/// Stationary law keyed by state, for comparisons against empirical
/// occupation measures.
pub fn stationary_map(
    space: &StateSpace,
    trip: &PerronTriplet,
) -> HashMap<(TypeId, PopVector), f64> {
    stationary_law(trip)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (space.state(i).clone(), p))
        .collect()
}

/// Long-run rate of ancestral branch events out of state `a` with offspring
/// `k`: `gamma_a . rate_k(a) . <k, h(., znew)>`. Zero if the event is
/// capacity-gated.
pub fn ancestral_branch_intensity(
    model: &ModelSpec,
    space: &StateSpace,
    trip: &PerronTriplet,
    a: usize,
    k: &OffspringVector,
) -> f64 {
    let (x, z) = space.state(a);
    let rate = model.kernel().rate(*x, z, k);
    if rate == 0.0 {
        return 0.0;
    }
    let znew = z.after_event(*x, k);
    let mut inner = 0.0;
    for (w, kw) in k.present() {
        let idx = space
            .index_of(w, &znew)
            .expect("capacity-gated event stays inside the space");
        inner += kw as f64 * trip.h[idx];
    }
    trip.gamma[a] * rate * inner
}

/// Package the right eigenvector as a tabulated weight function usable by
/// the biased simulator.
pub fn psi_from_triplet(space: &StateSpace, trip: &PerronTriplet, name: &str) -> PsiFunction {
    let entries = space
        .states()
        .iter()
        .cloned()
        .zip(trip.h.iter().copied())
        .map(|((ty, comp), h)| ((ty, comp), h));
    PsiFunction::tabulated(name, entries).expect("positive eigenvector")
}
