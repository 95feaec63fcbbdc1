//! Monte Carlo estimators for the two sides of the lineage-weighting
//! identities, plus the distribution tests used to compare samples.
//!
//! Both sides of every identity evaluate the *same* functional code on a
//! genealogy, so a disagreement can only come from the simulated laws or the
//! weights, not from divergent bookkeeping. The two sides always consume
//! disjoint random streams.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{SimError, StatsError};
use crate::genealogy::{GenealogyTree, NodeId};
use crate::model::{ModelSpec, OffspringVector, PopVector, PsiFunction, TypeId};
use crate::rng::{replica_rng, tag};
use crate::simulate::{
    composition_chain, simulate_original, simulate_spine_distorted, spine_chain, spine_weight,
    SamplingLaw, SimConfig, SimStatus,
};

/// Sum with pairwise splitting; the error grows logarithmically in the length
/// instead of linearly, and the result does not depend on thread count
/// because it is always applied to an ordered buffer.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n;
    if values.len() == 1 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
    /// Replicas that exhausted their event budget; they contribute zero.
    pub censored: u64,
}

impl Estimate {
    pub fn from_values(values: &[f64], censored: u64) -> Estimate {
        let (mean, std_error) = mean_and_se(values);
        Estimate {
            mean,
            std_error,
            n: values.len() as u64,
            censored,
        }
    }
}

/// A matched pair of estimates of the same quantity.
#[derive(Clone, Debug)]
pub struct PairedCheck {
    pub lhs: Estimate,
    pub rhs: Estimate,
}

impl PairedCheck {
    pub fn combined_se(&self) -> f64 {
        (self.lhs.std_error.powi(2) + self.rhs.std_error.powi(2)).sqrt()
    }

    pub fn zscore(&self) -> f64 {
        (self.lhs.mean - self.rhs.mean) / self.combined_se()
    }

    pub fn within(&self, sigmas: f64) -> bool {
        self.zscore().abs() <= sigmas
    }
}

/// A bounded measurement of a genealogy as seen from one sampled individual
/// at time `t`. The same evaluator runs on the plain tree with a uniformly
/// sampled individual and on the biased tree with the tagged individual.
#[derive(Clone)]
pub enum Functional {
    /// Number of individuals alive.
    PopulationSize,
    /// Branch events along the sampled individual's ancestral line.
    LineageBranchCount,
    /// Time the ancestral line spent as `ty` while the composition was `comp`.
    LineageOccupation { ty: TypeId, comp: PopVector },
    /// Ancestral branch events from state `(ty, comp)` with offspring `k`.
    LineageBranch {
        ty: TypeId,
        comp: PopVector,
        k: OffspringVector,
    },
    Custom(Arc<dyn Fn(&GenealogyTree, NodeId, f64) -> f64 + Send + Sync>),
}

impl Functional {
    pub fn eval(&self, tree: &GenealogyTree, node: NodeId, t: f64) -> Result<f64, SimError> {
        match self {
            Functional::PopulationSize => Ok(tree.composition_at(t).norm1() as f64),
            Functional::LineageBranchCount => {
                Ok(tree.lineage_statistics(node, t)?.total_branches() as f64)
            }
            Functional::LineageOccupation { ty, comp } => {
                Ok(tree.lineage_statistics(node, t)?.occupation_of(*ty, comp))
            }
            Functional::LineageBranch { ty, comp, k } => {
                Ok(tree.lineage_statistics(node, t)?.branches_of(*ty, comp, k) as f64)
            }
            Functional::Custom(f) => Ok(f(tree, node, t)),
        }
    }
}

/// Direct side of the identity: simulate the population, pick an individual
/// by `law`, evaluate each functional; a dead population contributes zero.
pub fn original_side(
    model: &ModelSpec,
    functionals: &[Functional],
    law: &SamplingLaw,
    t: f64,
    n: u64,
    seed: u64,
) -> Result<Vec<Estimate>, StatsError> {
    if n < 2 {
        return Err(StatsError::NotEnoughReplicas { min: 2, got: n });
    }
    let rows: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|replica| {
            let cfg = SimConfig::new(t).with_seed(seed).with_replica(replica);
            let mut rng = cfg.rng_for(tag::ORIGINAL);
            let out = simulate_original(model, &cfg, &mut rng);
            if out.status.is_censored() {
                return Ok((vec![0.0; functionals.len()], true));
            }
            let tree = out.tree.as_ref().expect("tree recorded");
            if out.final_composition.is_empty() {
                return Ok((vec![0.0; functionals.len()], false));
            }
            let mut pick_rng = cfg.rng_for(tag::SAMPLER);
            let node = law.sample(tree, t, &mut pick_rng)?;
            let mut vals = Vec::with_capacity(functionals.len());
            for f in functionals {
                vals.push(f.eval(tree, node, t)?);
            }
            Ok((vals, false))
        })
        .collect::<Result<_, SimError>>()?;
    Ok(collate(rows, functionals.len()))
}

/// Weighted side of the identity: simulate the biased construction, weight
/// each run, evaluate the same functionals at the tagged individual, and
/// scale by the initial inner product.
pub fn spine_side(
    model: &ModelSpec,
    psi: &PsiFunction,
    functionals: &[Functional],
    law: &SamplingLaw,
    t: f64,
    n: u64,
    seed: u64,
) -> Result<Vec<Estimate>, StatsError> {
    spine_side_distorted(model, psi, functionals, law, t, n, seed, 1.0)
}

/// [`spine_side`] with a deliberate multiplicative error on the tagged
/// branch rates; harnesses use a non-unit distortion to prove the comparison
/// would catch a wrong construction.
#[allow(clippy::too_many_arguments)]
pub fn spine_side_distorted(
    model: &ModelSpec,
    psi: &PsiFunction,
    functionals: &[Functional],
    law: &SamplingLaw,
    t: f64,
    n: u64,
    seed: u64,
    distortion: f64,
) -> Result<Vec<Estimate>, StatsError> {
    if n < 2 {
        return Err(StatsError::NotEnoughReplicas { min: 2, got: n });
    }
    let prefactor = psi.initial_inner(model.initial_composition());
    let rows: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|replica| {
            let cfg = SimConfig::new(t).with_seed(seed).with_replica(replica);
            let mut rng = cfg.rng_for(tag::SPINE);
            let out = simulate_spine_distorted(model, psi, &cfg, &mut rng, distortion);
            if out.status.is_censored() {
                return Ok((vec![0.0; functionals.len()], true));
            }
            let w = prefactor * spine_weight(&out, law);
            let mut vals = Vec::with_capacity(functionals.len());
            for f in functionals {
                vals.push(w * f.eval(&out.tree, out.spine_node, t)?);
            }
            Ok((vals, false))
        })
        .collect::<Result<_, SimError>>()?;
    Ok(collate(rows, functionals.len()))
}

fn collate(rows: Vec<(Vec<f64>, bool)>, width: usize) -> Vec<Estimate> {
    let censored = rows.iter().filter(|(_, c)| *c).count() as u64;
    (0..width)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|(vals, _)| vals[j]).collect();
            Estimate::from_values(&col, censored)
        })
        .collect()
}

/// Run both sides of the identity on disjoint streams and pair them up.
#[allow(clippy::too_many_arguments)]
pub fn two_sided_check(
    model: &ModelSpec,
    psi: &PsiFunction,
    functionals: &[Functional],
    law: &SamplingLaw,
    t: f64,
    n: u64,
    seed: u64,
) -> Result<Vec<PairedCheck>, StatsError> {
    let lhs = original_side(model, functionals, law, t, n, seed)?;
    let rhs = spine_side(model, psi, functionals, law, t, n, seed)?;
    Ok(lhs
        .into_iter()
        .zip(rhs)
        .map(|(l, r)| PairedCheck { lhs: l, rhs: r })
        .collect())
}

/// A functional of one ancestral line as a path `(type, composition)_s` up
/// to `t`, summed over all alive individuals on the direct side.
#[derive(Clone)]
pub enum PathFunctional {
    /// Constant one: the identity then equates the mean population size with
    /// the mean lineage weight.
    One,
    /// Time spent as `ty` while the composition equalled `comp`.
    OccupationOf { ty: TypeId, comp: PopVector },
    /// Number of branch events on the line with offspring vector `k`.
    BranchesWithOffspring(OffspringVector),
}

impl PathFunctional {
    fn eval_stats(&self, stats: &crate::genealogy::LineageStats) -> f64 {
        match self {
            PathFunctional::One => 1.0,
            PathFunctional::OccupationOf { ty, comp } => stats.occupation_of(*ty, comp),
            PathFunctional::BranchesWithOffspring(k) => stats
                .branch_counts
                .iter()
                .filter(|((_, _, bk), _)| bk == k)
                .map(|(_, &c)| c as f64)
                .sum(),
        }
    }
}

/// Population-sum identity: the expected sum of `g` over the ancestral lines
/// of all alive individuals equals the initial inner product times the
/// weighted expectation of `g` along the tagged line.
pub fn many_to_one_check(
    model: &ModelSpec,
    psi: &PsiFunction,
    g: &PathFunctional,
    t: f64,
    n: u64,
    seed: u64,
) -> Result<PairedCheck, StatsError> {
    if n < 2 {
        return Err(StatsError::NotEnoughReplicas { min: 2, got: n });
    }
    let lhs_rows: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|replica| {
            let cfg = SimConfig::new(t).with_seed(seed).with_replica(replica);
            let mut rng = cfg.rng_for(tag::ORIGINAL);
            let out = simulate_original(model, &cfg, &mut rng);
            if out.status.is_censored() {
                return Ok((0.0, true));
            }
            let tree = out.tree.as_ref().expect("tree recorded");
            let mut acc = 0.0;
            for u in tree.alive_set(t) {
                acc += g.eval_stats(&tree.lineage_statistics(u, t)?);
            }
            Ok((acc, false))
        })
        .collect::<Result<_, SimError>>()?;

    let prefactor = psi.initial_inner(model.initial_composition());
    let rhs_rows: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, tag::SPINE, replica);
            let mut acc = 0.0f64;
            let acc_cell = std::cell::Cell::new(0.0f64);
            let res = spine_chain(
                model,
                psi,
                t,
                crate::simulate::DEFAULT_MAX_EVENTS,
                &mut rng,
                |t0, t1, ty, z| {
                    if let PathFunctional::OccupationOf { ty: want, comp } = g {
                        if ty == *want && z == comp {
                            acc_cell.set(acc_cell.get() + (t1 - t0));
                        }
                    }
                },
                |_, k, _| {
                    if let PathFunctional::BranchesWithOffspring(want) = g {
                        if k == want {
                            acc_cell.set(acc_cell.get() + 1.0);
                        }
                    }
                },
            );
            if res.status.is_censored() {
                return (0.0, true);
            }
            acc += acc_cell.get();
            if matches!(g, PathFunctional::One) {
                acc = 1.0;
            }
            let weight = res.lambda_integral.exp() / psi.eval(res.final_type, &res.final_composition);
            (prefactor * weight * acc, false)
        })
        .collect();

    let censored_l = lhs_rows.iter().filter(|(_, c)| *c).count() as u64;
    let censored_r = rhs_rows.iter().filter(|(_, c)| *c).count() as u64;
    let lvals: Vec<f64> = lhs_rows.iter().map(|(v, _)| *v).collect();
    let rvals: Vec<f64> = rhs_rows.iter().map(|(v, _)| *v).collect();
    Ok(PairedCheck {
        lhs: Estimate::from_values(&lvals, censored_l),
        rhs: Estimate::from_values(&rvals, censored_r),
    })
}

/// Estimate `E[exp(-integral of lambda) * sum_x Z_t(x) psi(x, Z_t)]`, which
/// equals the initial inner product when the weight-growth rate `lambda`
/// depends only on the composition. A population that dies contributes zero.
///
/// Errors if `lambda` differs across present types anywhere on a path, since
/// the compensator is then lineage-dependent and this estimator inapplicable.
pub fn additive_martingale_estimate(
    model: &ModelSpec,
    psi: &PsiFunction,
    t: f64,
    n: u64,
    seed: u64,
) -> Result<Estimate, StatsError> {
    if n < 2 {
        return Err(StatsError::NotEnoughReplicas { min: 2, got: n });
    }
    let rows: Vec<(f64, bool)> = (0..n)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, tag::ORIGINAL, replica);
            let integral = std::cell::Cell::new(0.0f64);
            let spread = std::cell::Cell::new(0.0f64);
            let (status, z) = composition_chain(
                model,
                t,
                crate::simulate::DEFAULT_MAX_EVENTS,
                &mut rng,
                |t0, t1, z| {
                    let mut lam = None;
                    for (ty, _) in z.present() {
                        let l = model.lambda_of(psi, ty, z).expect("present type");
                        match lam {
                            None => lam = Some(l),
                            Some(first) => {
                                spread.set(spread.get().max((l - first).abs()));
                            }
                        }
                    }
                    if let Some(l) = lam {
                        integral.set(integral.get() + l * (t1 - t0));
                    }
                },
            );
            if spread.get() > 1e-9 {
                return Err(StatsError::AssumptionViolated(format!(
                    "lambda varies across types by {:e}; the scalar compensator does not apply",
                    spread.get()
                )));
            }
            if status.is_censored() {
                return Ok((0.0, true));
            }
            let mut terminal = 0.0;
            for (ty, count) in z.present() {
                terminal += count as f64 * psi.eval(ty, &z);
            }
            Ok(((-integral.get()).exp() * terminal, false))
        })
        .collect::<Result<_, StatsError>>()?;
    let censored = rows.iter().filter(|(_, c)| *c).count() as u64;
    let vals: Vec<f64> = rows.iter().map(|(v, _)| *v).collect();
    Ok(Estimate::from_values(&vals, censored))
}

/// Sample the population size at `t` under the original law, one lean run
/// per replica. Extinct runs report zero.
pub fn original_size_sample(model: &ModelSpec, t: f64, n: u64, seed: u64) -> Vec<u32> {
    (0..n)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, tag::ORIGINAL, replica);
            let (_, z) = composition_chain(
                model,
                t,
                crate::simulate::DEFAULT_MAX_EVENTS,
                &mut rng,
                |_, _, _| {},
            );
            z.norm1()
        })
        .collect()
}

/// Sample the population size at `t` under the biased law.
pub fn spine_size_sample(
    model: &ModelSpec,
    psi: &PsiFunction,
    t: f64,
    n: u64,
    seed: u64,
) -> Vec<u32> {
    (0..n)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, tag::SPINE, replica);
            let res = spine_chain(
                model,
                psi,
                t,
                crate::simulate::DEFAULT_MAX_EVENTS,
                &mut rng,
                |_, _, _, _| {},
                |_, _, _| {},
            );
            res.final_composition.norm1()
        })
        .collect()
}

/// Time-average occupation of `(tag type, composition)` along one long
/// biased run, discarding `burn_in`; the a.s. limit is the stationary law.
pub fn spine_occupation_average(
    model: &ModelSpec,
    psi: &PsiFunction,
    horizon: f64,
    burn_in: f64,
    seed: u64,
) -> HashMap<(TypeId, PopVector), f64> {
    let mut occ: HashMap<(TypeId, PopVector), f64> = HashMap::new();
    let mut rng = replica_rng(seed, tag::SPINE, 0);
    spine_chain(
        model,
        psi,
        horizon,
        u64::MAX,
        &mut rng,
        |t0, t1, ty, z| {
            let lo = t0.max(burn_in);
            if t1 > lo {
                *occ.entry((ty, z.clone())).or_insert(0.0) += t1 - lo;
            }
        },
        |_, _, _| {},
    );
    let span = horizon - burn_in;
    for v in occ.values_mut() {
        *v /= span;
    }
    occ
}

/// Long-run rate of tagged branch events from state `(ty, comp)` with
/// offspring `k`, along one biased run of length `horizon`.
pub fn biased_branch_rate_average(
    model: &ModelSpec,
    psi: &PsiFunction,
    state: (TypeId, PopVector),
    k: &OffspringVector,
    horizon: f64,
    burn_in: f64,
    seed: u64,
) -> f64 {
    let mut rng = replica_rng(seed, tag::SPINE, 0);
    let count = std::cell::Cell::new(0u64);
    let last_hold: std::cell::RefCell<Option<(TypeId, PopVector, f64)>> =
        std::cell::RefCell::new(None);
    let want_k = k.clone();
    spine_chain(
        model,
        psi,
        horizon,
        u64::MAX,
        &mut rng,
        |_, t1, ty, z| {
            *last_hold.borrow_mut() = Some((ty, z.clone(), t1));
        },
        |t, bk, _| {
            if t < burn_in || *bk != want_k {
                return;
            }
            if let Some((ty, z, t1)) = last_hold.borrow().as_ref() {
                // the state before this branch is the hold that ended at it
                if (t - t1).abs() < 1e-12 && *ty == state.0 && *z == state.1 {
                    count.set(count.get() + 1);
                }
            }
        },
    );
    count.get() as f64 / (horizon - burn_in)
}

/// Mean rate of ancestral branch events from `(ty, comp)` with offspring `k`
/// along the lineage of an individual picked uniformly at `t`, under the
/// original law. Dead populations are skipped, not averaged as zero.
#[allow(clippy::too_many_arguments)]
pub fn ancestral_branch_rate_original(
    model: &ModelSpec,
    state: (TypeId, PopVector),
    k: &OffspringVector,
    t: f64,
    n: u64,
    seed: u64,
) -> Result<Estimate, StatsError> {
    let rows: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|replica| {
            let cfg = SimConfig::new(t).with_seed(seed).with_replica(replica);
            let mut rng = cfg.rng_for(tag::ORIGINAL);
            let out = simulate_original(model, &cfg, &mut rng);
            if out.status != SimStatus::Completed {
                return Ok(None);
            }
            let tree = out.tree.as_ref().expect("tree recorded");
            let mut pick_rng = cfg.rng_for(tag::SAMPLER);
            let u = tree.sample_individual(t, |_, _| 1.0, &mut pick_rng)?;
            let stats = tree.lineage_statistics(u, t)?;
            Ok(Some(stats.branches_of(state.0, &state.1, k) as f64 / t))
        })
        .collect::<Result<_, SimError>>()?;
    let vals: Vec<f64> = rows.iter().filter_map(|v| *v).collect();
    if vals.len() < 2 {
        return Err(StatsError::DegenerateSample(
            "population survived in fewer than two replicas".into(),
        ));
    }
    Ok(Estimate::from_values(&vals, 0))
}

/// Per-replica least-squares slope of `log ||Z||` over uniformly spaced
/// sample points in `[window.0, window.1]`, averaged across replicas.
/// Replicas whose population dies before the window ends are dropped.
pub fn log_growth_slope(
    model: &ModelSpec,
    window: (f64, f64),
    points: usize,
    n: u64,
    seed: u64,
) -> Result<Estimate, StatsError> {
    assert!(window.1 > window.0 && points >= 2);
    let grid: Vec<f64> = (0..points)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / (points - 1) as f64)
        .collect();
    let rows: Vec<Option<f64>> = (0..n)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, tag::ORIGINAL, replica);
            let logs = std::cell::RefCell::new(vec![f64::NAN; grid.len()]);
            // run a hair past the window so the final grid point lands inside
            // a half-open hold interval
            let (status, _z) = composition_chain(
                model,
                window.1 + 1e-6,
                crate::simulate::DEFAULT_MAX_EVENTS,
                &mut rng,
                |t0, t1, z| {
                    let mut logs = logs.borrow_mut();
                    for (i, &g) in grid.iter().enumerate() {
                        if g >= t0 && g < t1 {
                            logs[i] = (z.norm1() as f64).ln();
                        }
                    }
                },
            );
            let logs = logs.into_inner();
            if status.is_censored() || logs.iter().any(|v| v.is_nan() || !v.is_finite()) {
                return None;
            }
            Some(ols_slope(&grid, &logs))
        })
        .collect();
    let vals: Vec<f64> = rows.iter().filter_map(|v| *v).collect();
    if vals.len() < 2 {
        return Err(StatsError::DegenerateSample(
            "fewer than two replicas produced a full window".into(),
        ));
    }
    Ok(Estimate::from_values(&vals, 0))
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Sample the reduced size chain `V = ||Xi|| - 1` of the constant-weight
/// biased construction, simulated directly from its own jump rates rather
/// than through the population. Used to cross-check the two descriptions.
pub fn reduced_chain_sample(model: &ModelSpec, t: f64, n: u64, seed: u64) -> Vec<u32> {
    use rand::Rng;
    use rand_distr::{Distribution, Exp1};
    let v0 = model.initial_composition().norm1() - 1;
    (0..n)
        .into_par_iter()
        .map(|replica| {
            let mut rng = replica_rng(seed, tag::REDUCED, replica);
            let mut v = v0;
            let mut now = 0.0f64;
            loop {
                let rates = crate::spine::xi_minus_one_rates(model, v);
                let total: f64 = rates.iter().map(|(_, _, r)| r).sum();
                if total == 0.0 {
                    break;
                }
                let e: f64 = Exp1.sample(&mut rng);
                now += e / total;
                if now > t {
                    break;
                }
                let mut u = rng.random::<f64>() * total;
                let mut next = v;
                for (_, target, r) in &rates {
                    if *r == 0.0 {
                        continue;
                    }
                    next = *target;
                    u -= r;
                    if u <= 0.0 {
                        break;
                    }
                }
                v = next;
            }
            v
        })
        .collect()
}

/// Result of a hypothesis test.
#[derive(Clone, Copy, Debug)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample chi-squared homogeneity test on integer-valued samples.
/// Adjacent values are pooled until every bin's expected count is at least
/// five in the smaller sample.
pub fn chi2_two_sample(a: &[u32], b: &[u32]) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::DegenerateSample("empty sample".into()));
    }
    let max = a.iter().chain(b).max().copied().unwrap_or(0) as usize;
    let mut ca = vec![0u64; max + 1];
    let mut cb = vec![0u64; max + 1];
    for &v in a {
        ca[v as usize] += 1;
    }
    for &v in b {
        cb[v as usize] += 1;
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let n_small = na.min(nb);
    let total = na + nb;
    // pool adjacent raw values left to right
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc_a = 0.0f64;
    let mut acc_b = 0.0f64;
    for i in 0..=max {
        acc_a += ca[i] as f64;
        acc_b += cb[i] as f64;
        let pooled_p = (acc_a + acc_b) / total;
        if n_small * pooled_p >= 5.0 {
            bins.push((acc_a, acc_b));
            acc_a = 0.0;
            acc_b = 0.0;
        }
    }
    if acc_a + acc_b > 0.0 {
        if let Some(last) = bins.last_mut() {
            last.0 += acc_a;
            last.1 += acc_b;
        } else {
            bins.push((acc_a, acc_b));
        }
    }
    if bins.len() < 2 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    let mut x2 = 0.0f64;
    for &(oa, ob) in &bins {
        let p = (oa + ob) / total;
        let ea = na * p;
        let eb = nb * p;
        x2 += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
    }
    let df = (bins.len() - 1) as f64;
    let dist = statrs::distribution::ChiSquared::new(df)
        .map_err(|e| StatsError::DegenerateSample(e.to_string()))?;
    use statrs::distribution::ContinuousCDF;
    let p_value = (1.0 - dist.cdf(x2)).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: x2,
        p_value,
    })
}

fn ks_asymptotic_p(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0f64;
    let mut sign = 1.0f64;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic tail formula. Ties
/// are handled by stepping both empirical laws through equal values before
/// comparing, which makes the test conservative on lattice data.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    if a.len() < 4 || b.len() < 4 {
        return Err(StatsError::DegenerateSample(
            "need at least four points per sample".into(),
        ));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        let fa = i as f64 / na as f64;
        let fb = j as f64 / nb as f64;
        d = d.max((fa - fb).abs());
    }
    let ne = (na as f64 * nb as f64) / (na + nb) as f64;
    let sqrt_ne = ne.sqrt();
    let lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
    Ok(TestResult {
        statistic: d,
        p_value: ks_asymptotic_p(lambda),
    })
}

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult, StatsError> {
    if a.len() < 4 {
        return Err(StatsError::DegenerateSample(
            "need at least four points".into(),
        ));
    }
    let mut xs = a.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(TestResult {
        statistic: d,
        p_value: ks_asymptotic_p(lambda),
    })
}

/// Total variation distance between two laws given as aligned probability
/// vectors; missing tail entries count as zero.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    let mut acc = 0.0;
    for i in 0..len {
        let pi = p.get(i).copied().unwrap_or(0.0);
        let qi = q.get(i).copied().unwrap_or(0.0);
        acc += (pi - qi).abs();
    }
    0.5 * acc
}

/// Total variation distance between two laws on an arbitrary discrete space.
pub fn tv_distance_maps<K: Eq + Hash>(p: &HashMap<K, f64>, q: &HashMap<K, f64>) -> f64 {
    let mut acc = 0.0;
    for (k, pv) in p {
        acc += (pv - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, qv) in q {
        if !p.contains_key(k) {
            acc += qv.abs();
        }
    }
    0.5 * acc
}

/// Empirical probability mass function of integer samples on `0..len`.
pub fn empirical_pmf(samples: &[u32], len: usize) -> Vec<f64> {
    let mut pmf = vec![0.0f64; len];
    let w = 1.0 / samples.len() as f64;
    for &s in samples {
        if (s as usize) < len {
            pmf[s as usize] += w;
        }
    }
    pmf
}
