//! Genealogical trees of branching populations.
//!
//! Nodes live in an arena; a node stores its parent index and its rank among
//! the siblings, so the full path label (the classical `(u_1, ..., u_n)`
//! addressing: child `i` of `u` is `u.i`) is reconstructed on demand instead
//! of being stored per node. Roots carry the label of the founding individual.
//!
//! The event log keeps the jump chain in time order, which makes the
//! composition trajectory and any lineage statistic replayable without
//! re-simulating.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use rand::Rng;

use crate::error::SimError;
use crate::model::{OffspringVector, PopVector, TypeId};

/// Arena index of a node.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Path label: root label followed by child ranks, displayed as `3.1.2`.
/// Ordering is lexicographic on the path, so sorting labels is deterministic.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Label(pub Vec<u32>);

impl Label {
    /// Label of the `i`-th child (1-based).
    pub fn child(&self, i: u32) -> Label {
        let mut v = self.0.clone();
        v.push(i);
        Label(v)
    }

    pub fn generation(&self) -> usize {
        self.0.len() - 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, part) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{part}")?;
        }
        Ok(())
    }
}

/// Branch data of a node that has reproduced (or died, with zero offspring).
#[derive(Clone, Debug)]
pub struct BranchInfo {
    pub offspring: OffspringVector,
    /// Types of the children in sibling order; empty for a death.
    pub child_types: Vec<TypeId>,
    /// Children occupy consecutive arena slots starting here. Meaningless
    /// when `child_types` is empty.
    pub first_child: NodeId,
}

#[derive(Clone, Debug)]
pub struct NodeRecord {
    pub parent: Option<NodeId>,
    /// Sibling rank (1-based); for roots, the founding label.
    pub child_rank: u32,
    pub type_id: TypeId,
    pub birth_time: f64,
    /// Branch or death time; `INFINITY` while the individual is alive.
    pub end_time: f64,
    pub branch: Option<BranchInfo>,
}

impl NodeRecord {
    #[inline]
    pub fn alive_at(&self, t: f64) -> bool {
        self.birth_time <= t && t < self.end_time
    }
}

/// One jump of the population chain.
#[derive(Clone, Debug)]
pub struct EventRecord {
    pub time: f64,
    pub node: NodeId,
    pub offspring: OffspringVector,
}

#[derive(Clone, Debug)]
pub struct GenealogyTree {
    nodes: Vec<NodeRecord>,
    events: Vec<EventRecord>,
    roots: Vec<NodeId>,
    initial_composition: PopVector,
}

impl GenealogyTree {
    pub fn new(initial: &[(u32, TypeId)], num_types: usize) -> Self {
        let mut counts = vec![0u32; num_types];
        let mut nodes = Vec::with_capacity(initial.len());
        let mut roots = Vec::with_capacity(initial.len());
        for (i, &(label, ty)) in initial.iter().enumerate() {
            counts[ty.index()] += 1;
            roots.push(NodeId(i as u32));
            nodes.push(NodeRecord {
                parent: None,
                child_rank: label,
                type_id: ty,
                birth_time: 0.0,
                end_time: f64::INFINITY,
                branch: None,
            });
        }
        GenealogyTree {
            nodes,
            events: Vec::new(),
            roots,
            initial_composition: PopVector::new(counts),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &NodeRecord {
        &self.nodes[id.index()]
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn initial_composition(&self) -> &PopVector {
        &self.initial_composition
    }

    /// Close `node` at `time` with offspring `k`, appending the children to
    /// the arena in sibling order. Returns the id of the first child.
    pub fn record_branch(
        &mut self,
        node: NodeId,
        time: f64,
        offspring: OffspringVector,
        child_types: Vec<TypeId>,
    ) -> NodeId {
        let first_child = NodeId(self.nodes.len() as u32);
        for (j, &ty) in child_types.iter().enumerate() {
            self.nodes.push(NodeRecord {
                parent: Some(node),
                child_rank: (j + 1) as u32,
                type_id: ty,
                birth_time: time,
                end_time: f64::INFINITY,
                branch: None,
            });
        }
        let rec = &mut self.nodes[node.index()];
        debug_assert!(rec.end_time.is_infinite(), "node branched twice");
        rec.end_time = time;
        rec.branch = Some(BranchInfo {
            offspring: offspring.clone(),
            child_types,
            first_child,
        });
        self.events.push(EventRecord {
            time,
            node,
            offspring,
        });
        first_child
    }

    /// Full path label of a node.
    pub fn label_of(&self, id: NodeId) -> Label {
        let mut parts = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            let rec = &self.nodes[c.index()];
            parts.push(rec.child_rank);
            cur = rec.parent;
        }
        parts.reverse();
        Label(parts)
    }

    /// Node with the given path label, if it occurs in this tree.
    pub fn find_label(&self, label: &Label) -> Option<NodeId> {
        let first = *label.0.first()?;
        let root = *self
            .roots
            .iter()
            .find(|&&r| self.nodes[r.index()].child_rank == first)?;
        let mut cur = root;
        for &rank in &label.0[1..] {
            let branch = self.nodes[cur.index()].branch.as_ref()?;
            if rank == 0 || rank as usize > branch.child_types.len() {
                return None;
            }
            cur = NodeId(branch.first_child.0 + rank - 1);
        }
        Some(cur)
    }

    /// Individuals alive at `t` (born no later than `t`, not yet branched).
    pub fn alive_set(&self, t: f64) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive_at(t))
            .map(|(i, _)| NodeId(i as u32))
            .collect()
    }

    /// Composition at `t`, replayed from the event log.
    pub fn composition_at(&self, t: f64) -> PopVector {
        let mut z = self.initial_composition.clone();
        for ev in &self.events {
            if ev.time > t {
                break;
            }
            let ty = self.nodes[ev.node.index()].type_id;
            z.apply_event(ty, &ev.offspring);
        }
        z
    }

    /// Copy of the tree with everything after `t` removed: nodes born later
    /// are dropped and branches after `t` are reopened.
    pub fn truncate(&self, t: f64) -> GenealogyTree {
        let mut keep = vec![false; self.nodes.len()];
        let mut new_index = vec![u32::MAX; self.nodes.len()];
        let mut count = 0u32;
        for (i, n) in self.nodes.iter().enumerate() {
            if n.birth_time <= t {
                keep[i] = true;
                new_index[i] = count;
                count += 1;
            }
        }
        let mut nodes = Vec::with_capacity(count as usize);
        for (i, n) in self.nodes.iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let branched = n.end_time <= t;
            nodes.push(NodeRecord {
                parent: n.parent.map(|p| NodeId(new_index[p.index()])),
                child_rank: n.child_rank,
                type_id: n.type_id,
                birth_time: n.birth_time,
                end_time: if branched { n.end_time } else { f64::INFINITY },
                branch: if branched {
                    n.branch.as_ref().map(|b| BranchInfo {
                        offspring: b.offspring.clone(),
                        child_types: b.child_types.clone(),
                        // a childless branch stores a dangling first_child
                        // that must not be remapped
                        first_child: if b.child_types.is_empty() {
                            NodeId(count)
                        } else {
                            NodeId(new_index[b.first_child.index()])
                        },
                    })
                } else {
                    None
                },
            });
        }
        GenealogyTree {
            nodes,
            events: self.events.iter().filter(|e| e.time <= t).cloned().collect(),
            roots: self.roots.clone(),
            initial_composition: self.initial_composition.clone(),
        }
    }

    /// Draw an individual alive at `t` with probability proportional to
    /// `weights`. Uniform sampling is `|_, _| 1.0`.
    pub fn sample_individual(
        &self,
        t: f64,
        weights: impl Fn(&GenealogyTree, NodeId) -> f64,
        rng: &mut impl Rng,
    ) -> Result<NodeId, SimError> {
        let alive = self.alive_set(t);
        if alive.is_empty() {
            return Err(SimError::EmptyPopulation(t));
        }
        let w: Vec<f64> = alive.iter().map(|&id| weights(self, id)).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(SimError::DegenerateWeights(t));
        }
        let mut u = rng.random::<f64>() * total;
        for (i, &wi) in w.iter().enumerate() {
            u -= wi;
            if u <= 0.0 {
                return Ok(alive[i]);
            }
        }
        Ok(*alive.last().expect("alive set checked nonempty"))
    }

    /// Chain of ancestors of `u` from the root down to `u` itself.
    pub fn ancestor_chain(&self, u: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::new();
        let mut cur = Some(u);
        while let Some(c) = cur {
            chain.push(c);
            cur = self.nodes[c.index()].parent;
        }
        chain.reverse();
        chain
    }

    /// Occupation times and branch counts along the ancestral lineage of `u`
    /// up to `t`. Occupation is keyed by (ancestor type, composition); branch
    /// counts additionally by the offspring vector, with the composition taken
    /// just before the branch event.
    pub fn lineage_statistics(&self, u: NodeId, t: f64) -> Result<LineageStats, SimError> {
        let node = &self.nodes[u.index()];
        if node.birth_time > t {
            return Err(SimError::UnknownLabel(self.label_of(u).to_string()));
        }
        let chain = self.ancestor_chain(u);
        let mut occupation: HashMap<(TypeId, PopVector), f64> = HashMap::new();
        let mut branch_counts: HashMap<(TypeId, PopVector, OffspringVector), u64> = HashMap::new();

        let mut z = self.initial_composition.clone();
        let mut chain_pos = 0usize;
        let mut prev_time = 0.0_f64;
        for ev in &self.events {
            let ev_time = ev.time.min(t);
            if ev_time > prev_time {
                let anc = &self.nodes[chain[chain_pos].index()];
                *occupation.entry((anc.type_id, z.clone())).or_insert(0.0) +=
                    ev_time - prev_time;
            }
            if ev.time > t {
                prev_time = t;
                break;
            }
            let actor = ev.node;
            let actor_ty = self.nodes[actor.index()].type_id;
            if actor == chain[chain_pos] {
                *branch_counts
                    .entry((actor_ty, z.clone(), ev.offspring.clone()))
                    .or_insert(0) += 1;
                chain_pos += 1;
                debug_assert!(chain_pos < chain.len(), "lineage ended before t");
            }
            z.apply_event(actor_ty, &ev.offspring);
            prev_time = ev.time;
        }
        if t > prev_time {
            let anc = &self.nodes[chain[chain_pos].index()];
            *occupation.entry((anc.type_id, z.clone())).or_insert(0.0) += t - prev_time;
        }
        Ok(LineageStats {
            occupation,
            branch_counts,
        })
    }

    /// Newline-delimited node dump: `label;type;birth;end;offspring-vector`.
    pub fn write_nodes(&self, mut w: impl Write) -> io::Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            let label = self.label_of(NodeId(i as u32));
            let k = match &n.branch {
                Some(b) => b.offspring.to_string(),
                None => String::new(),
            };
            let end = if n.end_time.is_finite() {
                format!("{}", n.end_time)
            } else {
                "inf".to_string()
            };
            writeln!(w, "{label};{};{};{end};{k}", n.type_id.0, n.birth_time)?;
        }
        Ok(())
    }

    /// Event log as CSV: `t,label,k`.
    pub fn write_events(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "t,label,k")?;
        for ev in &self.events {
            writeln!(
                w,
                "{},{},{}",
                ev.time,
                self.label_of(ev.node),
                ev.offspring
            )?;
        }
        Ok(())
    }
}

/// Per-lineage occupation and branch statistics.
#[derive(Clone, Debug)]
pub struct LineageStats {
    pub occupation: HashMap<(TypeId, PopVector), f64>,
    pub branch_counts: HashMap<(TypeId, PopVector, OffspringVector), u64>,
}

impl LineageStats {
    pub fn occupation_of(&self, ty: TypeId, z: &PopVector) -> f64 {
        self.occupation
            .get(&(ty, z.clone()))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn branches_of(&self, ty: TypeId, z: &PopVector, k: &OffspringVector) -> u64 {
        self.branch_counts
            .get(&(ty, z.clone(), k.clone()))
            .copied()
            .unwrap_or(0)
    }

    pub fn total_branches(&self) -> u64 {
        self.branch_counts.values().sum()
    }
}

/// Dissimilarity between two trees: symmetric difference of their label sets,
/// plus, for shared labels, the birth-time difference, a life-length term
/// (difference of life lengths when both nodes have branched, 1 when exactly
/// one has, 0 when both are still alive), the l1 distance of the offspring
/// vectors (a node without a branch counts as zero offspring) and 1 for a
/// type mismatch. Zero exactly when the recorded histories agree.
pub fn tree_distance(a: &GenealogyTree, b: &GenealogyTree) -> f64 {
    fn index(t: &GenealogyTree) -> HashMap<Label, NodeId> {
        (0..t.len())
            .map(|i| (t.label_of(NodeId(i as u32)), NodeId(i as u32)))
            .collect()
    }
    let ia = index(a);
    let ib = index(b);
    // Accumulate shared-label terms in sorted label order so the result is
    // deterministic and exactly symmetric in its arguments.
    let mut shared: Vec<(&Label, NodeId, NodeId)> = ia
        .iter()
        .filter_map(|(label, &na)| ib.get(label).map(|&nb| (label, na, nb)))
        .collect();
    shared.sort_by(|x, y| x.0.cmp(y.0));
    let mut d = 0.0;
    for &(_, na, nb) in &shared {
        let ra = a.node(na);
        let rb = b.node(nb);
        d += (ra.birth_time - rb.birth_time).abs();
        d += match (ra.end_time.is_finite(), rb.end_time.is_finite()) {
            (true, true) => ((ra.end_time - ra.birth_time) - (rb.end_time - rb.birth_time)).abs(),
            (false, false) => 0.0,
            _ => 1.0,
        };
        d += offspring_l1(ra, rb);
        if ra.type_id != rb.type_id {
            d += 1.0;
        }
    }
    d + ((ia.len() - shared.len()) + (ib.len() - shared.len())) as f64
}

fn offspring_l1(a: &NodeRecord, b: &NodeRecord) -> f64 {
    let zero_a;
    let zero_b;
    let ka = match &a.branch {
        Some(x) => &x.offspring,
        None => {
            zero_a = PopVector::zeros(a_dim(a, b));
            &zero_a
        }
    };
    let kb = match &b.branch {
        Some(x) => &x.offspring,
        None => {
            zero_b = PopVector::zeros(a_dim(b, a));
            &zero_b
        }
    };
    ka.as_slice()
        .iter()
        .zip(kb.as_slice())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).abs())
        .sum()
}

fn a_dim(n: &NodeRecord, other: &NodeRecord) -> usize {
    n.branch
        .as_ref()
        .or(other.branch.as_ref())
        .map_or(1, |b| b.offspring.num_types())
}

/// Piecewise-constant composition trajectory, for repeated lookups.
pub struct CompositionTimeline {
    /// `comps[i]` holds on `[times[i], times[i+1])`; `times[0] == 0`.
    times: Vec<f64>,
    comps: Vec<PopVector>,
}

impl CompositionTimeline {
    pub fn from_tree(tree: &GenealogyTree) -> Self {
        let mut times = Vec::with_capacity(tree.events().len() + 1);
        let mut comps = Vec::with_capacity(tree.events().len() + 1);
        times.push(0.0);
        let mut z = tree.initial_composition().clone();
        comps.push(z.clone());
        for ev in tree.events() {
            let ty = tree.node(ev.node).type_id;
            z.apply_event(ty, &ev.offspring);
            times.push(ev.time);
            comps.push(z.clone());
        }
        CompositionTimeline { times, comps }
    }

    pub fn at(&self, t: f64) -> &PopVector {
        let idx = self.times.partition_point(|&s| s <= t);
        &self.comps[idx - 1]
    }

    /// Visit each constant piece of `[0, t)` as `(start, end, composition)`.
    pub fn for_each_interval(&self, t: f64, mut visit: impl FnMut(f64, f64, &PopVector)) {
        for i in 0..self.times.len() {
            let start = self.times[i];
            if start >= t {
                break;
            }
            let end = if i + 1 < self.times.len() {
                self.times[i + 1].min(t)
            } else {
                t
            };
            if end > start {
                visit(start, end, &self.comps[i]);
            }
        }
    }

    /// Time spent in composition `z0` before `t`.
    pub fn occupation(&self, z0: &PopVector, t: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_interval(t, |s, e, z| {
            if z == z0 {
                acc += e - s;
            }
        });
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_type_tree() -> GenealogyTree {
        // root 1 of type 0 splits at t=1.0 into (type 0, type 1);
        // the type-1 child dies at t=1.5
        let mut tree = GenealogyTree::new(&[(1, TypeId(0))], 2);
        let first = tree.record_branch(
            NodeId(0),
            1.0,
            PopVector::new(vec![1, 1]),
            vec![TypeId(0), TypeId(1)],
        );
        assert_eq!(first, NodeId(1));
        tree.record_branch(NodeId(2), 1.5, PopVector::zeros(2), vec![]);
        tree
    }

    #[test]
    fn labels_and_lookup_round_trip() {
        let tree = two_type_tree();
        for i in 0..tree.len() {
            let id = NodeId(i as u32);
            let label = tree.label_of(id);
            assert_eq!(tree.find_label(&label), Some(id));
        }
        assert_eq!(tree.label_of(NodeId(2)).to_string(), "1.2");
    }

    #[test]
    fn child_label_appends_rank() {
        let l = Label(vec![1, 2]);
        assert_eq!(l.child(1).0, vec![1, 2, 1]);
        assert_eq!(l.child(3).to_string(), "1.2.3");
    }

    #[test]
    fn alive_set_tracks_events() {
        let tree = two_type_tree();
        assert_eq!(tree.alive_set(0.5), vec![NodeId(0)]);
        assert_eq!(tree.alive_set(1.2).len(), 2);
        assert_eq!(tree.alive_set(2.0), vec![NodeId(1)]);
    }

    #[test]
    fn composition_replay_matches_alive_counts() {
        let tree = two_type_tree();
        for &t in &[0.0, 0.5, 1.0, 1.2, 1.5, 3.0] {
            let z = tree.composition_at(t);
            assert_eq!(z.norm1() as usize, tree.alive_set(t).len(), "t = {t}");
        }
    }

    #[test]
    fn truncate_drops_later_history() {
        let tree = two_type_tree();
        let cut = tree.truncate(1.2);
        assert_eq!(cut.len(), 3);
        assert_eq!(cut.events().len(), 1);
        // the death at 1.5 is reopened
        assert!(cut.node(NodeId(2)).end_time.is_infinite());
        let full = tree.truncate(10.0);
        assert_eq!(tree_distance(&full, &tree), 0.0);
    }

    #[test]
    fn lineage_statistics_single_split() {
        // one binary split in a population of size 1
        let mut tree = GenealogyTree::new(&[(1, TypeId(0))], 1);
        tree.record_branch(
            NodeId(0),
            0.7,
            PopVector::new(vec![2]),
            vec![TypeId(0), TypeId(0)],
        );
        let stats = tree.lineage_statistics(NodeId(1), 2.0).unwrap();
        assert_eq!(stats.total_branches(), 1);
        assert_eq!(
            stats.branches_of(TypeId(0), &PopVector::new(vec![1]), &PopVector::new(vec![2])),
            1
        );
        let occ1 = stats.occupation_of(TypeId(0), &PopVector::new(vec![1]));
        let occ2 = stats.occupation_of(TypeId(0), &PopVector::new(vec![2]));
        assert!((occ1 - 0.7).abs() < 1e-12);
        assert!((occ2 - 1.3).abs() < 1e-12);
    }

    #[test]
    fn distance_zero_for_identical_trees() {
        let tree = two_type_tree();
        assert_eq!(tree_distance(&tree, &tree), 0.0);
    }

    #[test]
    fn distance_counts_life_length_difference() {
        let a = two_type_tree();
        let mut b = GenealogyTree::new(&[(1, TypeId(0))], 2);
        b.record_branch(
            NodeId(0),
            1.0,
            PopVector::new(vec![1, 1]),
            vec![TypeId(0), TypeId(1)],
        );
        b.record_branch(NodeId(2), 1.8, PopVector::zeros(2), vec![]);
        let d = tree_distance(&a, &b);
        assert!((d - 0.3).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn distance_counts_extra_leaf() {
        let a = two_type_tree();
        let b = a.truncate(0.5);
        // two leaves of `a` are missing from `b`, and the shared root has a
        // branch in `a` only: |k| difference 2 on the root
        let d = tree_distance(&a, &b);
        assert!(d >= 1.0);
    }

    #[test]
    fn timeline_matches_direct_replay() {
        let tree = two_type_tree();
        let tl = CompositionTimeline::from_tree(&tree);
        for &t in &[0.0, 0.9, 1.0, 1.4, 1.5, 2.5] {
            assert_eq!(*tl.at(t), tree.composition_at(t), "t = {t}");
        }
        let mut total = 0.0;
        tl.for_each_interval(2.0, |s, e, _| total += e - s);
        assert!((total - 2.0).abs() < 1e-12);
    }
}
