//! Randomized invariants: replay equivalence between the genealogical and
//! lean engines, closure of the biased rate identity, tree dissimilarity
//! behaviour, truncation consistency, and the offspring assignment law.

use proptest::prelude::*;
use rand::Rng;

use spinesim_core::genealogy::tree_distance;
use spinesim_core::model::RateKernel;
use spinesim_core::models::LogisticBD;
use spinesim_core::rng::{replica_rng, tag};
use spinesim_core::simulate::{composition_chain, simulate_original, simulate_spine, spine_chain,
    spine_weight};
use spinesim_core::spine::biased_rates;
use spinesim_core::eigen::state_space_of;
use spinesim_core::{
    GenealogyTree, ModelSpec, PopVector, PsiFunction, RateFn, SamplingLaw, SimConfig,
    SupportEntry, TypeAssignmentLaw, TypeId,
};

fn logistic_tree(b: f64, c: f64, v: u32, t: f64, seed: u64, replica: u64) -> GenealogyTree {
    let model = LogisticBD { b, c }.model(v).unwrap();
    let cfg = SimConfig::new(t).with_seed(seed).with_replica(replica);
    let mut rng = cfg.rng_for(tag::ORIGINAL);
    simulate_original(&model, &cfg, &mut rng).tree.unwrap()
}

/// Splitting model with constant rates, a death entry, own-type fission, and
/// cross-type switches, gated by a shared capacity.
fn capacity_model(seed: u64, num_types: usize, zbar: u32) -> ModelSpec {
    let mut rng = replica_rng(seed, tag::GENERIC, 0);
    let mut support = Vec::with_capacity(num_types);
    for x in 0..num_types {
        let mut entries = vec![SupportEntry {
            offspring: PopVector::zeros(num_types),
            rate: RateFn::Constant(0.1 + 0.4 * rng.random::<f64>()),
        }];
        let mut own = vec![0u32; num_types];
        own[x] = 2;
        entries.push(SupportEntry {
            offspring: PopVector::new(own),
            rate: RateFn::Constant(0.2 + 0.8 * rng.random::<f64>()),
        });
        for y in 0..num_types {
            if y == x {
                continue;
            }
            let mut sw = vec![0u32; num_types];
            sw[y] = 1;
            entries.push(SupportEntry {
                offspring: PopVector::new(sw),
                rate: RateFn::Constant(0.1 + 0.5 * rng.random::<f64>()),
            });
        }
        support.push(entries);
    }
    let initial = (0..num_types as u32).map(|x| (x + 1, TypeId(x))).collect();
    ModelSpec::new(
        (0..num_types).map(|i| format!("t{i}")).collect(),
        RateKernel::new(support, Some(zbar)),
        TypeAssignmentLaw::ExchangeableUniform,
        initial,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The lean composition chain consumes the same stream as the tree
    /// engine, so an identical seed must give an identical outcome.
    #[test]
    fn lean_chain_replays_the_tree_engine(
        seed in any::<u64>(),
        replica in 0u64..64,
        b in 0.5f64..1.5,
        c in 0.2f64..1.0,
        v in 1u32..4,
        t in 0.5f64..3.0,
    ) {
        let model = LogisticBD { b, c }.model(v).unwrap();
        let cfg = SimConfig::new(t).with_seed(seed).with_replica(replica);
        let mut tree_rng = cfg.rng_for(tag::ORIGINAL);
        let full = simulate_original(&model, &cfg, &mut tree_rng);
        let mut lean_rng = cfg.rng_for(tag::ORIGINAL);
        let (status, z) = composition_chain(&model, t, cfg.max_events, &mut lean_rng, |_, _, _| {});
        prop_assert_eq!(full.status, status);
        prop_assert_eq!(&full.final_composition, &z);
    }

    /// Same contract for the biased pair, including the type carried by the
    /// tag and the accumulated weight exponent.
    #[test]
    fn lean_spine_chain_replays_the_spine_engine(
        seed in any::<u64>(),
        replica in 0u64..64,
        model_seed in 0u64..32,
        t in 0.5f64..3.0,
    ) {
        let model = capacity_model(model_seed, 2, 4);
        let psi = PsiFunction::inverse_size();
        let cfg = SimConfig::new(t).with_seed(seed).with_replica(replica);
        let mut tree_rng = cfg.rng_for(tag::SPINE);
        let full = simulate_spine(&model, &psi, &cfg, &mut tree_rng);
        let mut lean_rng = cfg.rng_for(tag::SPINE);
        let lean = spine_chain(
            &model,
            &psi,
            t,
            cfg.max_events,
            &mut lean_rng,
            |_, _, _, _| {},
            |_, _, _| {},
        );
        prop_assert_eq!(full.status, lean.status);
        prop_assert_eq!(full.spine_type, lean.final_type);
        prop_assert_eq!(&full.final_composition, &lean.final_composition);
        prop_assert_eq!(full.lambda_integral.to_bits(), lean.lambda_integral.to_bits());
    }

    /// Total biased outflow minus the weight-growth rate equals the total
    /// original outflow, at every state and for any positive weight table.
    #[test]
    fn biased_rates_close_the_identity(
        model_seed in 0u64..64,
        num_types in 1usize..4,
        zbar in 2u32..6,
        state_pick in any::<prop::sample::Index>(),
        psi_seed in any::<u64>(),
    ) {
        let model = capacity_model(model_seed, num_types, zbar);
        let space = state_space_of(&model, 2_000).unwrap();
        let mut psi_rng = replica_rng(psi_seed, tag::GENERIC, 1);
        let psi = PsiFunction::tabulated(
            "random-table",
            space
                .states()
                .iter()
                .cloned()
                .map(|s| (s, 0.25 + 3.75 * psi_rng.random::<f64>())),
        )
        .unwrap();

        let (x, z) = space.state(state_pick.index(space.len())).clone();
        let rates = biased_rates(&model, &psi, x, &z, 1.0).unwrap();
        let lambda = model.lambda_of(&psi, x, &z).unwrap();
        let original_total: f64 = (0..num_types)
            .map(|yi| {
                let y = TypeId(yi as u32);
                if z.count(y) == 0 {
                    0.0
                } else {
                    z.count(y) as f64 * model.total_rate(y, &z).unwrap()
                }
            })
            .sum();
        let err = (rates.total() - lambda - original_total).abs();
        prop_assert!(
            err <= 1e-9 * original_total.max(1.0),
            "identity off by {err} at ({x:?}, {z:?})"
        );
    }

    /// The dissimilarity vanishes exactly on identical histories and is
    /// symmetric and nonnegative across independent ones.
    #[test]
    fn dissimilarity_is_zero_on_self_and_symmetric(
        seed_a in any::<u64>(),
        seed_b in any::<u64>(),
        t in 0.5f64..2.5,
    ) {
        let a = logistic_tree(1.0, 0.5, 2, t, seed_a, 0);
        let b = logistic_tree(1.0, 0.5, 2, t, seed_b, 1);
        prop_assert_eq!(tree_distance(&a, &a), 0.0);
        prop_assert_eq!(tree_distance(&b, &b), 0.0);
        let ab = tree_distance(&a, &b);
        prop_assert_eq!(ab, tree_distance(&b, &a));
        prop_assert!(ab >= 0.0);
    }

    /// Trees whose event logs differ are strictly separated.
    #[test]
    fn dissimilarity_separates_different_histories(
        seed in any::<u64>(),
        t in 0.5f64..2.5,
    ) {
        let a = logistic_tree(1.0, 0.5, 2, t, seed, 0);
        let b = logistic_tree(1.0, 0.5, 2, t, seed, 1);
        let times = |tr: &GenealogyTree| {
            tr.events().iter().map(|e| e.time.to_bits()).collect::<Vec<_>>()
        };
        prop_assume!(times(&a) != times(&b));
        prop_assert!(tree_distance(&a, &b) > 0.0);
    }

    /// Truncation keeps the past intact: compositions at earlier times and
    /// the labels alive at the cut agree with the untruncated tree.
    #[test]
    fn truncation_preserves_the_past(
        seed in any::<u64>(),
        t in 1.0f64..3.0,
        frac in 0.1f64..0.9,
        probe in 0.0f64..1.0,
    ) {
        let tree = logistic_tree(1.0, 0.4, 3, t, seed, 0);
        let cut = frac * t;
        let head = tree.truncate(cut);
        let s = probe * cut;
        prop_assert_eq!(tree.composition_at(s), head.composition_at(s));

        let labels = |tr: &GenealogyTree, at: f64| {
            let mut ls: Vec<String> = tr
                .alive_set(at)
                .into_iter()
                .map(|id| tr.label_of(id).to_string())
                .collect();
            ls.sort();
            ls
        };
        prop_assert_eq!(labels(&tree, cut), labels(&head, cut));
    }

    /// The exchangeable assignment returns exactly the requested multiset of
    /// child types, for any offspring vector.
    #[test]
    fn assignment_matches_the_offspring_vector(
        counts in prop::collection::vec(0u32..4, 1..4),
        seed in any::<u64>(),
    ) {
        let k = PopVector::new(counts.clone());
        let mut rng = replica_rng(seed, tag::GENERIC, 2);
        let types = TypeAssignmentLaw::ExchangeableUniform.sample(&k, &mut rng);
        let mut seen = vec![0u32; counts.len()];
        for ty in types {
            seen[ty.index()] += 1;
        }
        prop_assert_eq!(seen, counts);
    }

    /// A run's change-of-measure weight is positive unless the event budget
    /// censored it, in which case it is exactly zero.
    #[test]
    fn weight_is_zero_exactly_on_censoring(
        seed in any::<u64>(),
        budget in 1u64..40,
    ) {
        let model = LogisticBD { b: 1.5, c: 0.3 }.model(2).unwrap();
        let psi = PsiFunction::inverse_size();
        let cfg = SimConfig::new(4.0).with_seed(seed).with_max_events(budget);
        let mut rng = cfg.rng_for(tag::SPINE);
        let out = simulate_spine(&model, &psi, &cfg, &mut rng);
        let w = spine_weight(&out, &SamplingLaw::Uniform);
        prop_assert!(w >= 0.0);
        prop_assert_eq!(w == 0.0, out.status.is_censored());
    }
}
