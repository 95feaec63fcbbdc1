//! Exact jump-chain simulation of the population, of its spine construction,
//! and of mass decorations along trees.
//!
//! Every engine draws one exponential holding time from the total event rate
//! and then picks the event category; no discretisation error enters anywhere.
//! An event budget (`max_events`) stands in for explosion: a run that exhausts
//! the budget before the horizon is reported as `Censored` and carries zero
//! weight on the biased side.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::SimError;
use crate::genealogy::{GenealogyTree, NodeId};
use crate::model::{ModelSpec, OffspringVector, PopVector, PsiFunction, TypeId};
use crate::rng::replica_rng;
use crate::spine::biased_rates;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub horizon: f64,
    pub max_events: u64,
    pub record_tree: bool,
    pub seed: u64,
    pub replica: u64,
}

pub const DEFAULT_MAX_EVENTS: u64 = 1_000_000;

impl SimConfig {
    pub fn new(horizon: f64) -> Self {
        SimConfig {
            horizon,
            max_events: DEFAULT_MAX_EVENTS,
            record_tree: true,
            seed: 0,
            replica: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replica(mut self, replica: u64) -> Self {
        self.replica = replica;
        self
    }

    pub fn with_max_events(mut self, max_events: u64) -> Self {
        self.max_events = max_events;
        self
    }

    pub fn without_tree(mut self) -> Self {
        self.record_tree = false;
        self
    }

    /// Engine RNG for this replica; `purpose` is one of [`crate::rng::tag`].
    pub fn rng_for(&self, purpose: u64) -> ChaCha8Rng {
        replica_rng(self.seed, purpose, self.replica)
    }
}

#[derive(Copy, Clone, PartialEq, Debug)]
pub enum SimStatus {
    /// Reached the horizon (or ran out of possible events).
    Completed,
    /// Population hit zero at the given time.
    Extinct(f64),
    /// Event budget exhausted at the given time; proxy for explosion.
    Censored(f64),
}

impl SimStatus {
    pub fn is_censored(&self) -> bool {
        matches!(self, SimStatus::Censored(_))
    }
}

#[derive(Debug)]
pub struct SimOutcome {
    /// Present when the run recorded genealogy.
    pub tree: Option<GenealogyTree>,
    pub final_composition: PopVector,
    pub status: SimStatus,
}

/// One step of the spine trajectory: the tag sat on `node` (of type `ty`)
/// from `time` until the next entry.
#[derive(Clone, Debug)]
pub struct SpineStep {
    pub time: f64,
    pub node: NodeId,
    pub ty: TypeId,
}

#[derive(Debug)]
pub struct SpineOutcome {
    pub tree: GenealogyTree,
    pub spine_path: Vec<SpineStep>,
    /// Integral of lambda along the spine up to the horizon.
    pub lambda_integral: f64,
    /// psi evaluated at the terminal spine state.
    pub terminal_psi: f64,
    pub final_composition: PopVector,
    pub status: SimStatus,
    pub spine_node: NodeId,
    pub spine_type: TypeId,
}

/// How the distinguished individual is drawn from the alive population.
#[derive(Clone)]
pub enum SamplingLaw {
    Uniform,
    Weighted(Arc<dyn Fn(&GenealogyTree, NodeId) -> f64 + Send + Sync>),
}

impl SamplingLaw {
    pub fn sample(
        &self,
        tree: &GenealogyTree,
        t: f64,
        rng: &mut impl Rng,
    ) -> Result<NodeId, SimError> {
        match self {
            SamplingLaw::Uniform => tree.sample_individual(t, |_, _| 1.0, rng),
            SamplingLaw::Weighted(w) => tree.sample_individual(t, |tr, id| w(tr, id), rng),
        }
    }
}

/// Simulate the original process. With `record_tree` the full genealogy and
/// event log are returned; otherwise only the composition chain is run.
pub fn simulate_original(model: &ModelSpec, cfg: &SimConfig, rng: &mut impl Rng) -> SimOutcome {
    if !cfg.record_tree {
        let (status, z) = composition_chain(
            model,
            cfg.horizon,
            cfg.max_events,
            rng,
            |_t0, _t1, _z| {},
        );
        return SimOutcome {
            tree: None,
            final_composition: z,
            status,
        };
    }

    let mut tree = GenealogyTree::new(model.initial(), model.num_types());
    let mut alive: Vec<Vec<NodeId>> = vec![Vec::new(); model.num_types()];
    for &root in tree.roots() {
        alive[tree.node(root).type_id.index()].push(root);
    }
    let mut z = model.initial_composition().clone();
    let mut t = 0.0_f64;
    let mut events = 0u64;
    let mut type_rates = vec![0.0f64; model.num_types()];

    let status = loop {
        let mut total = 0.0;
        for yi in 0..model.num_types() {
            let count = z.as_slice()[yi];
            type_rates[yi] = if count == 0 {
                0.0
            } else {
                let per = model
                    .kernel()
                    .total_rate(TypeId(yi as u32), &z)
                    .expect("present type");
                count as f64 * per
            };
            total += type_rates[yi];
        }
        if total == 0.0 {
            break SimStatus::Completed;
        }
        let hold: f64 = Exp1.sample(rng);
        let t_next = t + hold / total;
        if t_next > cfg.horizon {
            break SimStatus::Completed;
        }
        if events >= cfg.max_events {
            break SimStatus::Censored(t);
        }
        // type, then support entry, then individual
        let y = pick_weighted_index(rng, &type_rates, total);
        let ty = TypeId(y as u32);
        let entry = pick_support_entry(model, ty, &z, rng);
        let k = model.kernel().support(ty)[entry].offspring.clone();
        let child_types = model.assignment().sample(&k, rng);
        let idx = rng.random_range(0..alive[y].len());
        let actor = alive[y].swap_remove(idx);
        let first_child = tree.record_branch(actor, t_next, k.clone(), child_types);
        let branch = tree.node(actor).branch.as_ref().expect("just branched");
        for (j, &cty) in branch.child_types.clone().iter().enumerate() {
            alive[cty.index()].push(NodeId(first_child.0 + j as u32));
        }
        z.apply_event(ty, &k);
        t = t_next;
        events += 1;
        if z.is_empty() {
            break SimStatus::Extinct(t);
        }
    };

    SimOutcome {
        tree: Some(tree),
        final_composition: z,
        status,
    }
}

/// Composition-level chain of the original process, without genealogy.
/// `on_hold(t0, t1, z)` is called for every maximal constant interval,
/// including the final stretch up to the horizon.
pub fn composition_chain(
    model: &ModelSpec,
    horizon: f64,
    max_events: u64,
    rng: &mut impl Rng,
    mut on_hold: impl FnMut(f64, f64, &PopVector),
) -> (SimStatus, PopVector) {
    let mut z = model.initial_composition().clone();
    let mut t = 0.0_f64;
    let mut events = 0u64;
    let mut type_rates = vec![0.0f64; model.num_types()];
    let status = loop {
        let mut total = 0.0;
        for yi in 0..model.num_types() {
            let count = z.as_slice()[yi];
            type_rates[yi] = if count == 0 {
                0.0
            } else {
                count as f64
                    * model
                        .kernel()
                        .total_rate(TypeId(yi as u32), &z)
                        .expect("present type")
            };
            total += type_rates[yi];
        }
        if total == 0.0 {
            on_hold(t, horizon, &z);
            break SimStatus::Completed;
        }
        let hold: f64 = Exp1.sample(rng);
        let t_next = t + hold / total;
        if t_next > horizon {
            on_hold(t, horizon, &z);
            break SimStatus::Completed;
        }
        if events >= max_events {
            on_hold(t, t_next.min(horizon), &z);
            break SimStatus::Censored(t);
        }
        let y = pick_weighted_index(rng, &type_rates, total);
        let ty = TypeId(y as u32);
        let entry = pick_support_entry(model, ty, &z, rng);
        let k = model.kernel().support(ty)[entry].offspring.clone();
        // the assignment law and the actor pick are drawn even without a
        // tree so the composition chain consumes the same stream as the
        // genealogical engine would
        let _ = model.assignment().sample(&k, rng);
        let _ = rng.random_range(0..z.as_slice()[y] as usize);
        on_hold(t, t_next, &z);
        z.apply_event(ty, &k);
        t = t_next;
        events += 1;
        if z.is_empty() {
            break SimStatus::Extinct(t);
        }
    };
    (status, z)
}

pub(crate) fn pick_weighted_index(rng: &mut impl Rng, weights: &[f64], total: f64) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        last = i;
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    last
}

fn pick_support_entry(model: &ModelSpec, y: TypeId, z: &PopVector, rng: &mut impl Rng) -> usize {
    let n = model.kernel().support(y).len();
    let mut rates = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let r = model.kernel().rate_entry(y, z, i);
        rates.push(r);
        total += r;
    }
    pick_weighted_index(rng, &rates, total)
}

/// Simulate the spine construction under `psi`, with full genealogy.
///
/// The initial tag is drawn with probability `v_x psi(x, v) / <v, psi(., v)>`.
/// The tag never dies; every run ends `Completed` or `Censored`.
pub fn simulate_spine(
    model: &ModelSpec,
    psi: &PsiFunction,
    cfg: &SimConfig,
    rng: &mut impl Rng,
) -> SpineOutcome {
    simulate_spine_distorted(model, psi, cfg, rng, 1.0)
}

/// [`simulate_spine`] with the spine branch rates multiplied by `distortion`.
/// Anything other than 1.0 deliberately breaks the construction; comparison
/// harnesses use this to prove they can detect a broken one.
pub fn simulate_spine_distorted(
    model: &ModelSpec,
    psi: &PsiFunction,
    cfg: &SimConfig,
    rng: &mut impl Rng,
    distortion: f64,
) -> SpineOutcome {
    let mut tree = GenealogyTree::new(model.initial(), model.num_types());
    let mut alive: Vec<Vec<NodeId>> = vec![Vec::new(); model.num_types()];
    for &root in tree.roots() {
        alive[tree.node(root).type_id.index()].push(root);
    }
    let mut z = model.initial_composition().clone();

    // initial tag
    let root_weights: Vec<f64> = tree
        .roots()
        .iter()
        .map(|&r| psi.eval(tree.node(r).type_id, &z))
        .collect();
    let total_w: f64 = root_weights.iter().sum();
    let spine_root = tree.roots()[pick_weighted_index(rng, &root_weights, total_w)];
    let mut spine_node = spine_root;
    let mut spine_type = tree.node(spine_root).type_id;
    let mut spine_path = vec![SpineStep {
        time: 0.0,
        node: spine_node,
        ty: spine_type,
    }];

    let mut t = 0.0_f64;
    let mut lambda_integral = 0.0_f64;
    let mut events = 0u64;

    let status = loop {
        let rates = biased_rates(model, psi, spine_type, &z, distortion).expect("spine alive");
        let lambda = model
            .lambda_of(psi, spine_type, &z)
            .expect("spine type present");
        let total = rates.total();
        if total == 0.0 {
            lambda_integral += (cfg.horizon - t) * lambda;
            break SimStatus::Completed;
        }
        let hold: f64 = Exp1.sample(rng);
        let t_next = t + hold / total;
        if t_next > cfg.horizon {
            lambda_integral += (cfg.horizon - t) * lambda;
            break SimStatus::Completed;
        }
        if events >= cfg.max_events {
            break SimStatus::Censored(t);
        }
        lambda_integral += (t_next - t) * lambda;

        if rng.random::<f64>() * total < rates.spine_total {
            // spine branch
            let entry = pick_weighted_index(rng, &rates.spine, rates.spine_total);
            let k = model.kernel().support(spine_type)[entry].offspring.clone();
            debug_assert!(k.norm1() > 0, "spine death has zero biased rate");
            let child_types = model.assignment().sample(&k, rng);
            let old_type = spine_type;
            let old_node = spine_node;
            z.apply_event(old_type, &k);
            // tag moves to an offspring, each weighted by psi at the new state
            let child_weights: Vec<f64> =
                child_types.iter().map(|&cty| psi.eval(cty, &z)).collect();
            let cw_total: f64 = child_weights.iter().sum();
            let chosen = pick_weighted_index(rng, &child_weights, cw_total);
            let first_child = tree.record_branch(old_node, t_next, k, child_types.clone());
            let spine_pos = alive[old_type.index()]
                .iter()
                .position(|&n| n == old_node)
                .expect("spine listed alive");
            alive[old_type.index()].swap_remove(spine_pos);
            for (j, &cty) in child_types.iter().enumerate() {
                alive[cty.index()].push(NodeId(first_child.0 + j as u32));
            }
            spine_node = NodeId(first_child.0 + chosen as u32);
            spine_type = child_types[chosen];
            spine_path.push(SpineStep {
                time: t_next,
                node: spine_node,
                ty: spine_type,
            });
        } else {
            // untagged branch
            let y = pick_weighted_index(rng, &rates.nonspine_type_total, rates.nonspine_total);
            let ty = TypeId(y as u32);
            let entry_rates = &rates.nonspine[y];
            let per_total: f64 = entry_rates.iter().sum();
            let entry = pick_weighted_index(rng, entry_rates, per_total);
            let k = model.kernel().support(ty)[entry].offspring.clone();
            let child_types = model.assignment().sample(&k, rng);
            let bystanders = alive[y].len() - usize::from(ty == spine_type);
            debug_assert!(bystanders > 0);
            let mut idx = rng.random_range(0..bystanders);
            if ty == spine_type {
                // skip over the tag's slot
                let spine_pos = alive[y]
                    .iter()
                    .position(|&n| n == spine_node)
                    .expect("spine listed alive");
                if idx >= spine_pos {
                    idx += 1;
                }
            }
            let actor = alive[y].swap_remove(idx);
            let first_child = tree.record_branch(actor, t_next, k.clone(), child_types.clone());
            for (j, &cty) in child_types.iter().enumerate() {
                alive[cty.index()].push(NodeId(first_child.0 + j as u32));
            }
            z.apply_event(ty, &k);
        }
        t = t_next;
        events += 1;
        debug_assert!(z.count(spine_type) >= 1, "tag lost its individual");
    };

    let terminal_psi = psi.eval(spine_type, &z);
    SpineOutcome {
        tree,
        spine_path,
        lambda_integral,
        terminal_psi,
        final_composition: z,
        status,
        spine_node,
        spine_type,
    }
}

/// Change-of-measure weight of a spine run under the sampling law `p`:
/// `exp(integral lambda) / psi(terminal) * p(tag | tree)`, and 0 for censored
/// runs.
pub fn spine_weight(out: &SpineOutcome, p: &SamplingLaw) -> f64 {
    if out.status.is_censored() {
        return 0.0;
    }
    let l = out.lambda_integral.exp();
    match p {
        SamplingLaw::Uniform => {
            // product first: for the size-reciprocal weight the denominator
            // is exactly 1
            l / (out.terminal_psi * out.final_composition.norm1() as f64)
        }
        SamplingLaw::Weighted(w) => {
            let alive = out.tree.alive_set(horizon_of(out));
            let total: f64 = alive.iter().map(|&id| w(&out.tree, id)).sum();
            l * w(&out.tree, out.spine_node) / (out.terminal_psi * total)
        }
    }
}

/// Terminal time of a spine run: the last recorded state persists to the
/// horizon, so any time past the final event identifies the alive set. Uses
/// the maximum event time, which is safe because the tree is never queried
/// beyond the horizon.
fn horizon_of(out: &SpineOutcome) -> f64 {
    out.tree
        .events()
        .last()
        .map_or(0.0, |e| e.time)
        .max(out.spine_path.last().map_or(0.0, |s| s.time))
}

/// Result of a composition-level spine run.
#[derive(Debug)]
pub struct SpineChainResult {
    pub status: SimStatus,
    pub lambda_integral: f64,
    pub final_type: TypeId,
    pub final_composition: PopVector,
}

/// Composition-level spine chain: tracks only `(tag type, composition)`.
/// `on_hold(t0, t1, ty, z)` sees every constant interval; `on_spine_branch(t,
/// k, new_type)` fires whenever the tag itself branches.
pub fn spine_chain(
    model: &ModelSpec,
    psi: &PsiFunction,
    horizon: f64,
    max_events: u64,
    rng: &mut impl Rng,
    mut on_hold: impl FnMut(f64, f64, TypeId, &PopVector),
    mut on_spine_branch: impl FnMut(f64, &OffspringVector, TypeId),
) -> SpineChainResult {
    let mut z = model.initial_composition().clone();
    let weights: Vec<f64> = z
        .present()
        .map(|(ty, count)| count as f64 * psi.eval(ty, &z))
        .collect();
    let present: Vec<TypeId> = z.present().map(|(ty, _)| ty).collect();
    let total_w: f64 = weights.iter().sum();
    let mut spine_type = present[pick_weighted_index(rng, &weights, total_w)];

    let mut t = 0.0_f64;
    let mut lambda_integral = 0.0_f64;
    let mut events = 0u64;
    let status = loop {
        let rates = biased_rates(model, psi, spine_type, &z, 1.0).expect("spine alive");
        let lambda = model
            .lambda_of(psi, spine_type, &z)
            .expect("spine type present");
        let total = rates.total();
        if total == 0.0 {
            lambda_integral += (horizon - t) * lambda;
            on_hold(t, horizon, spine_type, &z);
            break SimStatus::Completed;
        }
        let hold: f64 = Exp1.sample(rng);
        let t_next = t + hold / total;
        if t_next > horizon {
            lambda_integral += (horizon - t) * lambda;
            on_hold(t, horizon, spine_type, &z);
            break SimStatus::Completed;
        }
        if events >= max_events {
            on_hold(t, t_next.min(horizon), spine_type, &z);
            break SimStatus::Censored(t);
        }
        lambda_integral += (t_next - t) * lambda;
        on_hold(t, t_next, spine_type, &z);

        if rng.random::<f64>() * total < rates.spine_total {
            let entry = pick_weighted_index(rng, &rates.spine, rates.spine_total);
            let k = model.kernel().support(spine_type)[entry].offspring.clone();
            let child_types = model.assignment().sample(&k, rng);
            z.apply_event(spine_type, &k);
            let child_weights: Vec<f64> =
                child_types.iter().map(|&cty| psi.eval(cty, &z)).collect();
            let cw_total: f64 = child_weights.iter().sum();
            spine_type = child_types[pick_weighted_index(rng, &child_weights, cw_total)];
            on_spine_branch(t_next, &k, spine_type);
        } else {
            let y = pick_weighted_index(rng, &rates.nonspine_type_total, rates.nonspine_total);
            let ty = TypeId(y as u32);
            let entry_rates = &rates.nonspine[y];
            let per_total: f64 = entry_rates.iter().sum();
            let entry = pick_weighted_index(rng, entry_rates, per_total);
            let k = model.kernel().support(ty)[entry].offspring.clone();
            // the assignment law and the actor pick are drawn even without a
            // tree so the chain consumes the same stream as the genealogical
            // engine would
            let _ = model.assignment().sample(&k, rng);
            let bystanders = z.count(ty) as usize - usize::from(ty == spine_type);
            let _ = rng.random_range(0..bystanders);
            z.apply_event(ty, &k);
        }
        t = t_next;
        events += 1;
    };
    SpineChainResult {
        status,
        lambda_integral,
        final_type: spine_type,
        final_composition: z,
    }
}

/// Law of the mass fraction a child keeps at a division; symmetric about 1/2.
#[derive(Clone, Debug)]
pub enum FractionLaw {
    PointMass(f64),
    /// Beta(alpha, alpha).
    Beta { alpha: f64 },
    Uniform,
}

impl FractionLaw {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            FractionLaw::PointMass(f) => *f,
            FractionLaw::Beta { alpha } => rand_distr::Beta::new(*alpha, *alpha)
                .expect("valid alpha")
                .sample(rng),
            FractionLaw::Uniform => rng.random::<f64>(),
        }
    }

    /// `E[log(1/F)]`, in closed form.
    pub fn mean_log_inverse(&self) -> f64 {
        match self {
            FractionLaw::PointMass(f) => -f.ln(),
            // -E[ln Beta(a,a)] = digamma(2a) - digamma(a)
            FractionLaw::Beta { alpha } => {
                statrs::function::gamma::digamma(2.0 * alpha)
                    - statrs::function::gamma::digamma(*alpha)
            }
            FractionLaw::Uniform => 1.0,
        }
    }
}

/// Masses assigned to every node of a recorded tree.
#[derive(Debug)]
pub struct TreeMasses {
    pub r: f64,
    /// Mass at birth, indexed by arena position.
    pub birth_mass: Vec<f64>,
}

impl TreeMasses {
    pub fn mass_at(&self, tree: &GenealogyTree, node: NodeId, t: f64) -> f64 {
        let rec = tree.node(node);
        debug_assert!(rec.alive_at(t) || rec.end_time >= t);
        self.birth_mass[node.index()] * (self.r * (t - rec.birth_time)).exp()
    }
}

/// Piecewise-exponential mass path of the tagged individual.
#[derive(Debug)]
pub struct MassPath {
    pub r: f64,
    /// `(time, mass just after time)`, starting at `(0, initial mass)`.
    pub points: Vec<(f64, f64)>,
}

impl MassPath {
    pub fn mass_at(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|&(s, _)| s <= t);
        let (s, m) = self.points[idx - 1];
        m * (self.r * (t - s)).exp()
    }
}

pub enum MassBase<'a> {
    Tree(&'a SimOutcome),
    Spine(&'a SpineOutcome),
}

pub enum MassDecoration {
    Tree(TreeMasses),
    Path(MassPath),
}

/// Decorate a binary-division genealogy with exponentially growing masses.
///
/// Each individual grows at rate `r`; at a division the children receive the
/// fractions `(F, 1 - F)` of the parent mass, `F` drawn from `law`. On a
/// spine outcome only the tagged lineage is decorated, which reproduces the
/// tagged-mass process without touching the rest of the tree.
pub fn simulate_mass_decoration(
    model: &ModelSpec,
    base: MassBase<'_>,
    r: f64,
    law: &FractionLaw,
    initial_mass: f64,
    rng: &mut impl Rng,
) -> Result<MassDecoration, SimError> {
    if model.num_types() != 1
        || model
            .kernel()
            .support(TypeId(0))
            .iter()
            .any(|e| !matches!(e.offspring.norm1(), 0 | 2))
    {
        return Err(SimError::ModelShape);
    }
    match base {
        MassBase::Tree(out) => {
            let tree = out.tree.as_ref().ok_or(SimError::ModelShape)?;
            let mut birth_mass = vec![0.0f64; tree.len()];
            for &root in tree.roots() {
                birth_mass[root.index()] = initial_mass;
            }
            // children occupy later arena slots, so one forward pass suffices
            for i in 0..tree.len() {
                let rec = tree.node(NodeId(i as u32));
                let Some(branch) = rec.branch.as_ref() else {
                    continue;
                };
                if branch.child_types.is_empty() {
                    continue;
                }
                let mass_end = birth_mass[i] * (r * (rec.end_time - rec.birth_time)).exp();
                let f = law.sample(rng);
                birth_mass[branch.first_child.index()] = f * mass_end;
                birth_mass[branch.first_child.index() + 1] = (1.0 - f) * mass_end;
            }
            Ok(MassDecoration::Tree(TreeMasses { r, birth_mass }))
        }
        MassBase::Spine(out) => {
            let mut points = Vec::with_capacity(out.spine_path.len());
            points.push((0.0, initial_mass));
            let mut prev_time = 0.0;
            let mut mass = initial_mass;
            for step in &out.spine_path[1..] {
                mass *= (r * (step.time - prev_time)).exp();
                mass *= law.sample(rng);
                prev_time = step.time;
                points.push((step.time, mass));
            }
            Ok(MassDecoration::Path(MassPath { r, points }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LogisticBD;
    use crate::rng::tag;
    use crate::stats::{ks_one_sample, mean_and_se};

    fn logistic(b: f64, c: f64, v: u32) -> ModelSpec {
        LogisticBD { b, c }.model(v).unwrap()
    }

    #[test]
    fn pure_death_goes_extinct() {
        let entries = vec![crate::model::SupportEntry {
            offspring: PopVector::zeros(1),
            rate: crate::model::RateFn::Constant(2.0),
        }];
        let m = ModelSpec::single_type("x", entries, None, 5).unwrap();
        let cfg = SimConfig::new(100.0);
        let mut rng = cfg.rng_for(tag::ORIGINAL);
        let out = simulate_original(&m, &cfg, &mut rng);
        assert!(matches!(out.status, SimStatus::Extinct(_)));
        assert!(out.final_composition.is_empty());
        let tree = out.tree.unwrap();
        assert_eq!(tree.len(), 5);
        assert_eq!(tree.events().len(), 5);
    }

    #[test]
    fn event_budget_censors_fast_growth() {
        let m = logistic(50.0, 0.0, 1);
        let cfg = SimConfig::new(10.0).with_max_events(100);
        let mut rng = cfg.rng_for(tag::ORIGINAL);
        let out = simulate_original(&m, &cfg, &mut rng);
        assert!(out.status.is_censored());
    }

    #[test]
    fn tree_composition_matches_final_composition() {
        let m = logistic(1.0, 0.4, 3);
        for replica in 0..20 {
            let cfg = SimConfig::new(3.0).with_seed(9).with_replica(replica);
            let mut rng = cfg.rng_for(tag::ORIGINAL);
            let out = simulate_original(&m, &cfg, &mut rng);
            let tree = out.tree.unwrap();
            assert_eq!(tree.composition_at(3.0), out.final_composition);
            assert_eq!(
                tree.alive_set(3.0).len(),
                out.final_composition.norm1() as usize
            );
        }
    }

    #[test]
    fn lean_and_tree_runs_agree_on_the_same_stream() {
        let m = logistic(1.0, 0.5, 3);
        for replica in 0..10 {
            let cfg = SimConfig::new(2.0).with_seed(4).with_replica(replica);
            let mut r1 = cfg.rng_for(tag::ORIGINAL);
            let mut r2 = cfg.rng_for(tag::ORIGINAL);
            let full = simulate_original(&m, &cfg, &mut r1);
            let (status, z) = composition_chain(&m, 2.0, cfg.max_events, &mut r2, |_, _, _| {});
            assert_eq!(z, full.final_composition);
            assert_eq!(status, full.status);
        }
    }

    #[test]
    fn holding_times_are_exponential() {
        // holds that begin in composition z = 2 are Exp(z (b + c(z-1)))
        let m = logistic(1.0, 0.5, 2);
        let rate = 2.0 * (1.0 + 0.5);
        let mut holds = Vec::new();
        for replica in 0..4000 {
            let cfg = SimConfig::new(4.0).with_seed(11).with_replica(replica);
            let mut rng = cfg.rng_for(tag::ORIGINAL);
            let mut first = None;
            composition_chain(&m, 4.0, 10_000, &mut rng, |t0, t1, z| {
                if first.is_none() && z.norm1() == 2 && t1 < 4.0 {
                    first = Some(t1 - t0);
                }
            });
            if let Some(h) = first {
                holds.push(h);
            }
        }
        assert!(holds.len() > 3000);
        let res = ks_one_sample(&holds, |x| 1.0 - (-rate * x).exp()).unwrap();
        assert!(res.p_value > 0.01, "p = {}", res.p_value);
    }

    #[test]
    fn spine_tag_is_always_alive() {
        let m = logistic(1.0, 1.0, 2);
        let psi = PsiFunction::inverse_size();
        for replica in 0..50 {
            let cfg = SimConfig::new(3.0).with_seed(5).with_replica(replica);
            let mut rng = cfg.rng_for(tag::SPINE);
            let out = simulate_spine(&m, &psi, &cfg, &mut rng);
            assert!(!out.status.is_censored());
            // the tag's node is alive at the horizon and its type matches
            assert!(out.tree.node(out.spine_node).alive_at(3.0));
            assert_eq!(out.tree.node(out.spine_node).type_id, out.spine_type);
            // the recorded path is a descent: each step's node is a child of
            // the previous step's node
            for w in out.spine_path.windows(2) {
                assert_eq!(out.tree.node(w[1].node).parent, Some(w[0].node));
            }
            assert!(out.final_composition.count(out.spine_type) >= 1);
        }
    }

    #[test]
    fn inverse_size_weights_are_exactly_one() {
        // with no singleton deaths, the biased run reweights to exactly 1
        let m = logistic(1.0, 1.0, 1);
        let psi = PsiFunction::inverse_size();
        for replica in 0..200 {
            let cfg = SimConfig::new(5.0).with_seed(3).with_replica(replica);
            let mut rng = cfg.rng_for(tag::SPINE);
            let out = simulate_spine(&m, &psi, &cfg, &mut rng);
            let w = spine_weight(&out, &SamplingLaw::Uniform);
            assert_eq!(w, 1.0, "replica {replica}: weight {w:e}");
        }
    }

    #[test]
    fn spine_chain_matches_tree_spine_marginal() {
        // same stream, same jump chain: lean and full spine runs agree
        let m = logistic(1.0, 1.0, 2);
        let psi = PsiFunction::one();
        for replica in 0..10 {
            let cfg = SimConfig::new(2.0).with_seed(8).with_replica(replica);
            let mut r1 = cfg.rng_for(tag::SPINE);
            let mut r2 = cfg.rng_for(tag::SPINE);
            let full = simulate_spine(&m, &psi, &cfg, &mut r1);
            let lean = spine_chain(&m, &psi, 2.0, cfg.max_events, &mut r2, |_, _, _, _| {}, |_, _, _| {});
            assert_eq!(lean.final_composition, full.final_composition);
            assert_eq!(lean.final_type, full.spine_type);
            assert!((lean.lambda_integral - full.lambda_integral).abs() < 1e-12);
        }
    }

    #[test]
    fn size_biased_spine_population_dominates() {
        // constant weight tilts the law toward larger populations: the mean of
        // Xi(t) must exceed the mean of Z(t) by a clear margin
        let m = logistic(1.0, 0.5, 1);
        let psi = PsiFunction::one();
        let n = 2000;
        let mut plain = Vec::with_capacity(n);
        let mut biased = Vec::with_capacity(n);
        for replica in 0..n as u64 {
            let cfg = SimConfig::new(2.0).with_seed(21).with_replica(replica).without_tree();
            let mut r1 = cfg.rng_for(tag::ORIGINAL);
            let out = simulate_original(&m, &cfg, &mut r1);
            plain.push(out.final_composition.norm1() as f64);
            let mut r2 = cfg.rng_for(tag::SPINE);
            let lean = spine_chain(&m, &psi, 2.0, cfg.max_events, &mut r2, |_, _, _, _| {}, |_, _, _| {});
            biased.push(lean.final_composition.norm1() as f64);
        }
        let (mp, _) = mean_and_se(&plain);
        let (mb, _) = mean_and_se(&biased);
        assert!(mb > mp + 0.3, "plain {mp}, biased {mb}");
    }

    #[test]
    fn mass_decoration_conserves_total_mass() {
        // without deaths, the alive masses always sum to e^{rt} * initial
        let entries = vec![crate::model::SupportEntry {
            offspring: PopVector::new(vec![2]),
            rate: crate::model::RateFn::Constant(1.0),
        }];
        let m = ModelSpec::single_type("cell", entries, None, 1).unwrap();
        let cfg = SimConfig::new(3.0).with_seed(13);
        let mut rng = cfg.rng_for(tag::ORIGINAL);
        let out = simulate_original(&m, &cfg, &mut rng);
        let mut mass_rng = cfg.rng_for(tag::MASS);
        let dec = simulate_mass_decoration(
            &m,
            MassBase::Tree(&out),
            0.7,
            &FractionLaw::Uniform,
            1.0,
            &mut mass_rng,
        )
        .unwrap();
        let MassDecoration::Tree(masses) = dec else {
            panic!("tree decoration expected")
        };
        let tree = out.tree.as_ref().unwrap();
        for &t in &[0.5, 1.5, 3.0] {
            let total: f64 = tree
                .alive_set(t)
                .iter()
                .map(|&id| masses.mass_at(tree, id, t))
                .sum();
            let expected = (0.7 * t).exp();
            assert!(
                (total - expected).abs() < 1e-9 * expected,
                "t = {t}: {total} vs {expected}"
            );
        }
    }

    #[test]
    fn mass_decoration_rejects_non_binary_kernels() {
        let entries = vec![crate::model::SupportEntry {
            offspring: PopVector::new(vec![3]),
            rate: crate::model::RateFn::Constant(1.0),
        }];
        let m = ModelSpec::single_type("x", entries, None, 1).unwrap();
        let cfg = SimConfig::new(1.0);
        let mut rng = cfg.rng_for(tag::ORIGINAL);
        let out = simulate_original(&m, &cfg, &mut rng);
        let mut mass_rng = cfg.rng_for(tag::MASS);
        assert!(matches!(
            simulate_mass_decoration(
                &m,
                MassBase::Tree(&out),
                0.5,
                &FractionLaw::Uniform,
                1.0,
                &mut mass_rng
            ),
            Err(SimError::ModelShape)
        ));
    }

    #[test]
    fn fraction_law_log_moments() {
        assert!((FractionLaw::PointMass(0.5).mean_log_inverse() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((FractionLaw::Uniform.mean_log_inverse() - 1.0).abs() < 1e-15);
        // digamma(2) - digamma(1) = 1
        assert!((FractionLaw::Beta { alpha: 1.0 }.mean_log_inverse() - 1.0).abs() < 1e-12);
        // Monte Carlo cross-check for Beta(2,2)
        let law = FractionLaw::Beta { alpha: 2.0 };
        let mut rng = replica_rng(77, tag::MASS, 0);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            acc += -law.sample(&mut rng).ln();
        }
        let mc = acc / n as f64;
        assert!(
            (mc - law.mean_log_inverse()).abs() < 5e-3,
            "mc {mc} vs closed form {}",
            law.mean_log_inverse()
        );
    }
}
