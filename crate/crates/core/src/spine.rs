//! Biased branch rates for the tagged-lineage (spine) construction.
//!
//! Under a strictly positive weight function psi, the tagged individual of
//! type `x` in composition `z` branches with offspring `k` at
//!
//! ```text
//! spine_rate_k(x, z)  =  rate_k(x, z) * <k, psi(., z - e(x) + k)> / psi(x, z)
//! ```
//!
//! and each untagged individual of type `y` branches at
//!
//! ```text
//! nonspine_rate_k(y | x, z)  =  rate_k(y, z) * psi(x, z - e(y) + k) / psi(x, z)
//! ```
//!
//! after which the tag moves to an offspring of type `w` with probability
//! proportional to `k_w * psi(w, z_new)`. Every simulator and estimator takes
//! these rates from here; nothing else re-derives them.

use crate::error::ModelError;
use crate::model::{ModelSpec, OffspringVector, PopVector, PsiFunction, TypeId};

/// All event rates of the biased process at a state `(x, z)`, grouped by
/// acting type and support entry.
#[derive(Clone, Debug)]
pub struct BiasedRates {
    /// Per support entry of the spine type: the biased branch rate.
    pub spine: Vec<f64>,
    pub spine_total: f64,
    /// `nonspine[y][i]`: biased per-individual rate of entry `i` of type `y`.
    pub nonspine: Vec<Vec<f64>>,
    /// Per type: number of untagged individuals times their total rate.
    pub nonspine_type_total: Vec<f64>,
    pub nonspine_total: f64,
}

impl BiasedRates {
    pub fn total(&self) -> f64 {
        self.spine_total + self.nonspine_total
    }
}

/// Biased rate of the spine branching with offspring `k`.
pub fn spine_branch_rate(
    model: &ModelSpec,
    psi: &PsiFunction,
    x: TypeId,
    z: &PopVector,
    k: &OffspringVector,
) -> Result<f64, ModelError> {
    if z.count(x) == 0 {
        return Err(ModelError::EmptyType(x));
    }
    let base = model.kernel().rate(x, z, k);
    if base == 0.0 || k.norm1() == 0 {
        // a spine death has zero biased rate: <0, psi> = 0
        return Ok(0.0);
    }
    let znew = z.after_event(x, k);
    Ok(base * offspring_inner(psi, k, &znew) / psi.eval(x, z))
}

/// Biased rate of an untagged individual of type `y` branching with offspring
/// `k`, given the spine is at `(x, z)`.
pub fn nonspine_branch_rate(
    model: &ModelSpec,
    psi: &PsiFunction,
    y: TypeId,
    x: TypeId,
    z: &PopVector,
    k: &OffspringVector,
) -> Result<f64, ModelError> {
    if z.count(x) == 0 {
        return Err(ModelError::EmptyType(x));
    }
    if z.count(y) <= u32::from(y == x) {
        return Err(ModelError::EmptyType(y));
    }
    let base = model.kernel().rate(y, z, k);
    if base == 0.0 {
        return Ok(0.0);
    }
    let znew = z.after_event(y, k);
    Ok(base * psi.eval(x, &znew) / psi.eval(x, z))
}

/// Probability that the tag lands on an offspring of type `y` after the spine
/// branches with offspring `k` from `(x, z)`; `z_new = z - e(x) + k`.
/// Individuals within the chosen type are picked uniformly.
pub fn spine_choice_prob(
    psi: &PsiFunction,
    y: TypeId,
    k: &OffspringVector,
    x: TypeId,
    z: &PopVector,
) -> f64 {
    if k.count(y) == 0 {
        return 0.0;
    }
    let znew = z.after_event(x, k);
    k.count(y) as f64 * psi.eval(y, &znew) / offspring_inner(psi, k, &znew)
}

/// `<k, psi(., znew)>` over the types present in `k`.
fn offspring_inner(psi: &PsiFunction, k: &OffspringVector, znew: &PopVector) -> f64 {
    let mut s = 0.0;
    for (w, kw) in k.present() {
        s += kw as f64 * psi.eval(w, znew);
    }
    s
}

/// Every biased rate at `(x, z)` in one pass. `distortion` scales the spine
/// branch rates only; 1.0 is the faithful construction and anything else
/// deliberately breaks it (used to verify that the comparison harness detects
/// a broken construction).
pub fn biased_rates(
    model: &ModelSpec,
    psi: &PsiFunction,
    x: TypeId,
    z: &PopVector,
    distortion: f64,
) -> Result<BiasedRates, ModelError> {
    if z.count(x) == 0 {
        return Err(ModelError::EmptyType(x));
    }
    let psi_here = psi.eval(x, z);
    let num_types = model.num_types();
    let mut scratch = z.clone();

    let support_x = model.kernel().support(x);
    let mut spine = Vec::with_capacity(support_x.len());
    let mut spine_total = 0.0;
    for i in 0..support_x.len() {
        let base = model.kernel().rate_entry(x, z, i);
        let k = &support_x[i].offspring;
        let r = if base == 0.0 || k.norm1() == 0 {
            0.0
        } else {
            scratch.apply_event(x, k);
            let inner = offspring_inner(psi, k, &scratch);
            scratch.unapply_event(x, k);
            distortion * base * inner / psi_here
        };
        spine.push(r);
        spine_total += r;
    }

    let mut nonspine = vec![Vec::new(); num_types];
    let mut nonspine_type_total = vec![0.0; num_types];
    let mut nonspine_total = 0.0;
    for yi in 0..num_types {
        let y = TypeId(yi as u32);
        let bystanders = z.count(y) - u32::from(y == x);
        if bystanders == 0 {
            continue;
        }
        let support_y = model.kernel().support(y);
        let mut rates = Vec::with_capacity(support_y.len());
        let mut per_individual = 0.0;
        for i in 0..support_y.len() {
            let base = model.kernel().rate_entry(y, z, i);
            let r = if base == 0.0 {
                0.0
            } else {
                let k = &support_y[i].offspring;
                scratch.apply_event(y, k);
                let v = base * psi.eval(x, &scratch) / psi_here;
                scratch.unapply_event(y, k);
                v
            };
            rates.push(r);
            per_individual += r;
        }
        nonspine[yi] = rates;
        nonspine_type_total[yi] = bystanders as f64 * per_individual;
        nonspine_total += nonspine_type_total[yi];
    }

    Ok(BiasedRates {
        spine,
        spine_total,
        nonspine,
        nonspine_type_total,
        nonspine_total,
    })
}

/// Jump rates of the reduced chain `V = ||Xi||_1 - 1` of the constant-weight
/// spine construction of a single-type model: from `v`, the chain jumps to
/// `v + k - 1` at rate `(k + v) * rate_k(v + 1)`.
///
/// Returns `(k, new_state, rate)` per support entry. The `k = 0` entry at
/// `v = 0` has rate zero, so the reduced chain never leaves `N_0`.
pub fn xi_minus_one_rates(model: &ModelSpec, v: u32) -> Vec<(u32, u32, f64)> {
    debug_assert_eq!(model.num_types(), 1, "reduced chain is single-type");
    let z = PopVector::new(vec![v + 1]);
    let x = TypeId(0);
    model
        .kernel()
        .support(x)
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let k = entry.offspring.norm1();
            let rate = (k + v) as f64 * model.kernel().rate_entry(x, &z, i);
            (k, (v + k).saturating_sub(1), rate)
        })
        .collect()
}

/// Stationary branch intensity of the ancestral lineage under the
/// size-reciprocal weight: `pi_hat_k = k * sum_z pi(z) rate_k(z) z / (z-1+k)`.
///
/// `pi[z]` is the stationary law of the population size (`pi[0]` ignored).
pub fn pi_hat(pi: &[f64], model: &ModelSpec, k: u32) -> f64 {
    debug_assert_eq!(model.num_types(), 1, "lineage intensity is single-type");
    let x = TypeId(0);
    let kv = PopVector::new(vec![k]);
    let mut acc = 0.0;
    for (z, &pz) in pi.iter().enumerate().skip(1) {
        if pz == 0.0 {
            continue;
        }
        let zv = PopVector::new(vec![z as u32]);
        let rate = model.kernel().rate(x, &zv, &kv);
        if rate > 0.0 {
            acc += pz * k as f64 * rate * z as f64 / (z as f64 - 1.0 + k as f64);
        }
    }
    acc
}
