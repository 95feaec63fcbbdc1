//! Ready-made model families, their exact reference quantities, and the
//! deterministic large-population limit.

use std::sync::Arc;

use rand::Rng;

use crate::error::{ModelError, OdeError};
use crate::model::{ModelSpec, PopVector, RateFn, SupportEntry, TypeId};
use crate::rng::{replica_rng, tag};
use crate::simulate::{pick_weighted_index, spine_chain, FractionLaw, DEFAULT_MAX_EVENTS};
use crate::spine::pi_hat;

/// Binary-splitting birth-death model with crowding: each individual splits
/// in two at rate `b` and dies at rate `c * (population - 1)`.
///
/// A singleton never dies, so the size chain on `{1, 2, ...}` is positive
/// recurrent with stationary law proportional to `(b/c)^z / z!`.
#[derive(Copy, Clone, Debug)]
pub struct LogisticBD {
    pub b: f64,
    pub c: f64,
}

impl LogisticBD {
    pub fn model(&self, initial: u32) -> Result<ModelSpec, ModelError> {
        let entries = vec![
            SupportEntry {
                offspring: PopVector::new(vec![2]),
                rate: RateFn::Constant(self.b),
            },
            SupportEntry {
                offspring: PopVector::zeros(1),
                rate: RateFn::LogisticDeath(self.c),
            },
        ];
        ModelSpec::single_type("cell", entries, None, initial)
    }

    pub fn stationary_law(&self, zmax: usize) -> Vec<f64> {
        logistic_stationary(self.b, self.c, zmax)
    }

    /// Carrying capacity of the density limit, `b / c`.
    pub fn equilibrium_density(&self) -> f64 {
        self.b / self.c
    }

    /// Density-limit counterpart: per-individual split rate `b`, per-individual
    /// death rate `c * total density`.
    pub fn large_n(&self, initial_density: f64) -> LargeNModel {
        let b = self.b;
        let c = self.c;
        LargeNModel::new(
            vec!["cell".into()],
            vec![vec![
                DensityEntry {
                    offspring: PopVector::new(vec![2]),
                    rate: Arc::new(move |_: &[f64]| b) as DensityRate,
                },
                DensityEntry {
                    offspring: PopVector::zeros(1),
                    rate: Arc::new(move |zeta: &[f64]| c * zeta[0]) as DensityRate,
                },
            ]],
            vec![initial_density],
        )
        .expect("well-formed density model")
    }
}

/// Stationary law of [`LogisticBD`] population size, as a vector indexed by
/// size (`out[0] = 0`). Normalised by the exact series sum `e^{b/c} - 1`;
/// the truncated tail beyond `zmax` is left out, so pick `zmax` well past
/// `b / c`.
pub fn logistic_stationary(b: f64, c: f64, zmax: usize) -> Vec<f64> {
    assert!(b > 0.0 && c > 0.0, "stationary law needs b > 0 and c > 0");
    let theta = b / c;
    let norm = theta.exp_m1();
    let mut pi = vec![0.0f64; zmax + 1];
    let mut term = theta;
    for (z, slot) in pi.iter_mut().enumerate().skip(1) {
        *slot = term / norm;
        term *= theta / (z as f64 + 1.0);
    }
    pi
}

/// Single-type model whose biased lineage chain has exactly two states:
/// splits gate off at the capacity of two, and only the pair state can lose
/// an individual. The population never dies out because a singleton keeps a
/// zero death rate.
pub fn capacity_two_model(b: f64, d: f64) -> ModelSpec {
    let entries = vec![
        SupportEntry {
            offspring: PopVector::new(vec![2]),
            rate: RateFn::Constant(b),
        },
        SupportEntry {
            offspring: PopVector::zeros(1),
            rate: RateFn::LogisticDeath(d),
        },
    ];
    ModelSpec::single_type("cell", entries, Some(2), 1).expect("well-formed model")
}

/// Two interconverting types with births, deaths, and switching, capped at
/// four individuals. Every event class has positive rate somewhere, so the
/// biased lineage chain on the capped state space is irreducible.
pub fn two_type_switch_model() -> ModelSpec {
    let birth_a = SupportEntry {
        offspring: PopVector::new(vec![2, 0]),
        rate: RateFn::Constant(1.0),
    };
    let death_a = SupportEntry {
        offspring: PopVector::zeros(2),
        rate: RateFn::Constant(0.3),
    };
    let switch_a = SupportEntry {
        offspring: PopVector::new(vec![0, 1]),
        rate: RateFn::Constant(0.5),
    };
    let birth_b = SupportEntry {
        offspring: PopVector::new(vec![0, 2]),
        rate: RateFn::Constant(0.8),
    };
    let death_b = SupportEntry {
        offspring: PopVector::zeros(2),
        rate: RateFn::Constant(0.6),
    };
    let switch_b = SupportEntry {
        offspring: PopVector::new(vec![1, 0]),
        rate: RateFn::Constant(0.4),
    };
    ModelSpec::new(
        vec!["a".into(), "b".into()],
        crate::model::RateKernel::new(
            vec![
                vec![birth_a, death_a, switch_a],
                vec![birth_b, death_b, switch_b],
            ],
            Some(4),
        ),
        crate::model::TypeAssignmentLaw::ExchangeableUniform,
        vec![(1, TypeId(0)), (2, TypeId(1))],
    )
    .expect("well-formed model")
}

/// Pure binary fission whose split rate decays toward `b` as the population
/// grows: `b + eps / (1 + ln(1 + z)^2)`. The excess rate is summable along
/// the growth path, so `log Z(t) - b t` converges and the long-run slope of
/// `log Z` is exactly `b`.
#[derive(Copy, Clone, Debug)]
pub struct DecayingBirth {
    pub b: f64,
    pub eps: f64,
}

impl DecayingBirth {
    pub fn model(&self, initial: u32) -> Result<ModelSpec, ModelError> {
        let b = self.b;
        let eps = self.eps;
        let entries = vec![SupportEntry {
            offspring: PopVector::new(vec![2]),
            rate: RateFn::Custom(Arc::new(move |z: &PopVector| {
                let lnz = (1.0 + z.norm1() as f64).ln();
                b + eps / (1.0 + lnz * lnz)
            })),
        }];
        ModelSpec::single_type("cell", entries, None, initial)
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Phase {
    Growing,
    Regulated,
    /// The slope estimate is too close to zero to call at this precision.
    Inconclusive,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Growing => write!(f, "growing"),
            Phase::Regulated => write!(f, "regulated"),
            Phase::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PhaseResult {
    pub phase: Phase,
    /// Monte Carlo estimate of `log(mass at horizon) / horizon` of the tagged
    /// fragment.
    pub slope_estimate: f64,
    pub slope_se: f64,
    /// `r - threshold`.
    pub theoretical_slope: f64,
    pub threshold: f64,
}

/// A crowding-regulated cell population carrying exponentially growing mass.
///
/// Cells follow [`LogisticBD`]; each cell's mass grows at rate `r` and splits
/// into fractions `(F, 1 - F)` at division. The tagged fragment, followed
/// along a size-debiased lineage, grows at asymptotic rate
/// `r - (stationary division rate) * E[log 1/F]`; mass along a typical
/// lineage survives exactly when `r` exceeds the threshold.
#[derive(Clone, Debug)]
pub struct GrowthFragmentation {
    pub b: f64,
    pub c: f64,
    /// Exponential mass growth rate of a single cell.
    pub r: f64,
    pub law: FractionLaw,
    pub initial: u32,
}

impl GrowthFragmentation {
    pub fn population(&self) -> Result<ModelSpec, ModelError> {
        LogisticBD {
            b: self.b,
            c: self.c,
        }
        .model(self.initial)
    }

    /// Long-run division rate along the size-debiased lineage, in closed
    /// form: `2 b (1 - c/b + 1 / (e^{b/c} - 1))`.
    pub fn lineage_division_rate(&self) -> f64 {
        let theta = self.b / self.c;
        2.0 * self.b * (1.0 - 1.0 / theta + 1.0 / theta.exp_m1())
    }

    /// Same quantity through the stationary-law series; agrees with
    /// [`Self::lineage_division_rate`] to near machine precision and guards
    /// the closed form against algebra slips.
    pub fn lineage_division_rate_series(&self, zmax: usize) -> f64 {
        let model = self.population().expect("well-formed model");
        let pi = logistic_stationary(self.b, self.c, zmax);
        pi_hat(&pi, &model, 2)
    }

    /// Critical growth rate `r*`: the tagged fragment mass is tight below it
    /// and diverges above it.
    pub fn threshold(&self) -> f64 {
        self.lineage_division_rate() * self.law.mean_log_inverse()
    }

    pub fn theoretical_slope(&self) -> f64 {
        self.r - self.threshold()
    }

    /// Estimate the tagged-fragment mass slope over `paths` independent
    /// lineages of length `horizon` and classify the phase. A path
    /// contributes `(r * horizon + sum of log F) / horizon`; division times
    /// carry no information beyond their count, so the fractions are drawn
    /// after the lineage run from a dedicated stream.
    pub fn classify(&self, horizon: f64, paths: u32, seed: u64) -> PhaseResult {
        let model = self.population().expect("well-formed model");
        let psi = crate::model::PsiFunction::inverse_size();
        let mut slopes = Vec::with_capacity(paths as usize);
        for p in 0..paths {
            let mut rng = replica_rng(seed, tag::PHASE, p as u64);
            let mut divisions = 0u64;
            let res = spine_chain(
                &model,
                &psi,
                horizon,
                DEFAULT_MAX_EVENTS,
                &mut rng,
                |_, _, _, _| {},
                |_, _, _| divisions += 1,
            );
            debug_assert!(!res.status.is_censored());
            let mut mass_rng = replica_rng(seed, tag::MASS, p as u64);
            let mut log_mass = self.r * horizon;
            for _ in 0..divisions {
                log_mass += self.law.sample(&mut mass_rng).ln();
            }
            slopes.push(log_mass / horizon);
        }
        let n = slopes.len() as f64;
        let mean = slopes.iter().sum::<f64>() / n;
        let var = slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let phase = if mean > 3.0 * se {
            Phase::Growing
        } else if mean < -3.0 * se {
            Phase::Regulated
        } else {
            Phase::Inconclusive
        };
        PhaseResult {
            phase,
            slope_estimate: mean,
            slope_se: se,
            theoretical_slope: self.theoretical_slope(),
            threshold: self.threshold(),
        }
    }
}

/// Per-individual event rate as a function of the type density vector.
pub type DensityRate = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub struct DensityEntry {
    pub offspring: PopVector,
    pub rate: DensityRate,
}

/// A branching model parametrised by density rather than headcount: the
/// per-individual rate of event `(x, k)` is a function of `z / N`. Carries
/// both the fluid limit (an ODE on densities) and the finite-`N` models that
/// converge to it.
pub struct LargeNModel {
    type_names: Vec<String>,
    entries: Vec<Vec<DensityEntry>>,
    initial_density: Vec<f64>,
}

impl LargeNModel {
    pub fn new(
        type_names: Vec<String>,
        entries: Vec<Vec<DensityEntry>>,
        initial_density: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let d = type_names.len();
        if entries.len() != d || initial_density.len() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: entries.len().max(initial_density.len()),
            });
        }
        for per_type in &entries {
            for e in per_type {
                if e.offspring.num_types() != d {
                    return Err(ModelError::DimensionMismatch {
                        expected: d,
                        got: e.offspring.num_types(),
                    });
                }
            }
        }
        if initial_density.iter().all(|&v| v <= 0.0) {
            return Err(ModelError::EmptyInitial);
        }
        Ok(LargeNModel {
            type_names,
            entries,
            initial_density,
        })
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn initial_density(&self) -> &[f64] {
        &self.initial_density
    }

    pub fn rate(&self, x: TypeId, entry: usize, zeta: &[f64]) -> f64 {
        (self.entries[x.index()][entry].rate)(zeta)
    }

    pub fn total_rate(&self, x: TypeId, zeta: &[f64]) -> f64 {
        self.entries[x.index()]
            .iter()
            .map(|e| (e.rate)(zeta))
            .sum()
    }

    /// Mean growth matrix `A(zeta)`: `A[x][y] = sum_k rate_k(x, zeta) k_y`
    /// minus the total event rate of `x` on the diagonal. The density flow is
    /// `zeta' = zeta A(zeta)` with `zeta` as a row vector.
    pub fn growth_matrix(&self, zeta: &[f64]) -> Vec<Vec<f64>> {
        let d = self.num_types();
        let mut a = vec![vec![0.0f64; d]; d];
        for x in 0..d {
            for e in &self.entries[x] {
                let r = (e.rate)(zeta);
                for y in 0..d {
                    a[x][y] += r * e.offspring.as_slice()[y] as f64;
                }
                a[x][x] -= r;
            }
        }
        a
    }

    pub fn flow(&self, zeta: &[f64]) -> Vec<f64> {
        let a = self.growth_matrix(zeta);
        let d = self.num_types();
        let mut out = vec![0.0f64; d];
        for (y, slot) in out.iter_mut().enumerate() {
            for x in 0..d {
                *slot += zeta[x] * a[x][y];
            }
        }
        out
    }

    /// Integrate the density flow from the initial density with a fixed-step
    /// fourth-order Runge-Kutta scheme. The path is re-integrated at half the
    /// step and the coarse/fine sup discrepancy is reported, so a caller can
    /// reject an under-resolved run. The returned path is the fine one.
    pub fn solve(&self, t_end: f64, steps: usize) -> Result<OdePath, OdeError> {
        let coarse = self.integrate(t_end, steps)?;
        let fine = self.integrate(t_end, 2 * steps)?;
        let mut sup = 0.0f64;
        for (i, state) in coarse.iter().enumerate() {
            for (y, v) in state.iter().enumerate() {
                sup = sup.max((v - fine[2 * i][y]).abs());
            }
        }
        let dt = t_end / (2 * steps) as f64;
        let times = (0..fine.len()).map(|i| i as f64 * dt).collect();
        Ok(OdePath {
            times,
            states: fine,
            halving_sup_error: sup,
        })
    }

    fn integrate(&self, t_end: f64, steps: usize) -> Result<Vec<Vec<f64>>, OdeError> {
        let dt = t_end / steps as f64;
        let mut states = Vec::with_capacity(steps + 1);
        let mut z = self.initial_density.clone();
        states.push(z.clone());
        let d = self.num_types();
        for i in 0..steps {
            let k1 = self.flow(&z);
            let z2: Vec<f64> = (0..d).map(|y| z[y] + 0.5 * dt * k1[y]).collect();
            let k2 = self.flow(&z2);
            let z3: Vec<f64> = (0..d).map(|y| z[y] + 0.5 * dt * k2[y]).collect();
            let k3 = self.flow(&z3);
            let z4: Vec<f64> = (0..d).map(|y| z[y] + dt * k3[y]).collect();
            let k4 = self.flow(&z4);
            for y in 0..d {
                z[y] += dt / 6.0 * (k1[y] + 2.0 * k2[y] + 2.0 * k3[y] + k4[y]);
                if z[y] < 0.0 {
                    if z[y] < -1e-9 {
                        return Err(OdeError::PositivityLoss {
                            time: (i + 1) as f64 * dt,
                            index: y,
                        });
                    }
                    z[y] = 0.0;
                }
            }
            states.push(z.clone());
        }
        Ok(states)
    }

    /// The finite-`N` model: `N * initial_density` individuals (rounded), with
    /// every rate evaluated at `z / N`.
    pub fn scaled_model(&self, n: u32) -> Result<ModelSpec, ModelError> {
        let d = self.num_types();
        let mut support = Vec::with_capacity(d);
        for per_type in &self.entries {
            let mut entries = Vec::with_capacity(per_type.len());
            for e in per_type {
                let rate = Arc::clone(&e.rate);
                let scale = 1.0 / n as f64;
                entries.push(SupportEntry {
                    offspring: e.offspring.clone(),
                    rate: RateFn::Custom(Arc::new(move |z: &PopVector| {
                        let zeta: Vec<f64> =
                            z.as_slice().iter().map(|&c| c as f64 * scale).collect();
                        rate(&zeta)
                    })),
                });
            }
            support.push(entries);
        }
        let mut initial = Vec::new();
        let mut label = 1u32;
        for (x, &dens) in self.initial_density.iter().enumerate() {
            let count = (dens * n as f64).round() as u32;
            for _ in 0..count {
                initial.push((label, TypeId(x as u32)));
                label += 1;
            }
        }
        ModelSpec::new(
            self.type_names.clone(),
            crate::model::RateKernel::new(support, None),
            crate::model::TypeAssignmentLaw::ExchangeableUniform,
            initial,
        )
    }

    /// Reproductive value at an equilibrium density: the positive right null
    /// vector `phi` of `A(zstar)`, normalised so `<zstar, phi> = 1`. Fails if
    /// `zstar` does not annul the flow or if the lineage growth rate at
    /// `zstar` is not zero.
    pub fn reproductive_value(&self, zstar: &[f64], tol: f64) -> Result<Vec<f64>, OdeError> {
        let flow = self.flow(zstar);
        let residual = flow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if residual > tol {
            return Err(OdeError::NotAnEquilibrium { residual, tol });
        }
        let a = self.growth_matrix(zstar);
        let d = self.num_types();
        // shift makes the matrix nonnegative so power iteration finds the
        // dominant direction; the dominant eigenvalue of a Metzler matrix
        // with a positive left null vector is zero
        let shift = 1.0 + a.iter().enumerate().fold(0.0f64, |m, (x, row)| m.max(row[x].abs()));
        let mut phi = vec![1.0f64; d];
        for _ in 0..200_000 {
            let mut next = vec![0.0f64; d];
            for x in 0..d {
                let mut acc = shift * phi[x];
                for y in 0..d {
                    acc += a[x][y] * phi[y];
                }
                next[x] = acc;
            }
            let norm: f64 = next.iter().map(|v| v.abs()).sum();
            for v in &mut next {
                *v /= norm;
            }
            let delta = next
                .iter()
                .zip(&phi)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            phi = next;
            if delta < 1e-15 {
                break;
            }
        }
        // a nonzero residual of A phi means the dominant eigenvalue is not
        // zero, so zstar is not an equilibrium of the lineage dynamics
        let gap = (0..d)
            .map(|x| (0..d).map(|y| a[x][y] * phi[y]).sum::<f64>().abs())
            .fold(0.0f64, f64::max);
        let scale: f64 = phi.iter().map(|v| v.abs()).sum();
        if gap > tol.max(1e-9) * scale.max(1.0) * (1.0 + shift) {
            return Err(OdeError::NotAnEquilibrium {
                residual: gap,
                tol: tol.max(1e-9),
            });
        }
        let inner: f64 = zstar.iter().zip(&phi).map(|(z, p)| z * p).sum();
        Ok(phi.iter().map(|p| p / inner).collect())
    }

    /// Tagged-lineage jump rate at density `zeta` for a tag of type `x`,
    /// per support entry: `rate_k(x, zeta) <k, psi> / psi_x`.
    fn lineage_entry_rates(&self, psi: &[f64], x: TypeId, zeta: &[f64]) -> Vec<f64> {
        self.entries[x.index()]
            .iter()
            .map(|e| {
                let inner: f64 = e
                    .offspring
                    .as_slice()
                    .iter()
                    .zip(psi)
                    .map(|(&k, p)| k as f64 * p)
                    .sum();
                (e.rate)(zeta) * inner / psi[x.index()]
            })
            .collect()
    }

    /// Instantaneous weight-growth rate of the tagged lineage:
    /// `(A(zeta) psi)_x / psi_x`. Zero at an equilibrium with `psi` the
    /// reproductive value.
    pub fn lineage_lambda(&self, psi: &[f64], x: TypeId, zeta: &[f64]) -> f64 {
        let a = self.growth_matrix(zeta);
        let num: f64 = (0..self.num_types())
            .map(|y| a[x.index()][y] * psi[y])
            .sum();
        num / psi[x.index()]
    }

    /// Simulate the tagged lineage along a deterministic density path by
    /// thinning: each grid interval gets a majorant of 1.25 times the largest
    /// sampled jump rate, candidate events arrive at the majorant rate, and a
    /// candidate is kept with probability actual/majorant. A rate above the
    /// majorant aborts the run instead of silently under-sampling.
    pub fn simulate_limit_spine(
        &self,
        path: &OdePath,
        psi: &[f64],
        horizon: f64,
        rng: &mut impl Rng,
    ) -> Result<LimitSpinePath, OdeError> {
        use rand_distr::{Distribution, Exp1};
        assert!(horizon <= path.times.last().copied().unwrap_or(0.0) + 1e-12);
        let zeta0 = &path.states[0];
        let weights: Vec<f64> = (0..self.num_types())
            .map(|x| zeta0[x] * psi[x])
            .collect();
        let wtot: f64 = weights.iter().sum();
        let mut x = TypeId(pick_weighted_index(rng, &weights, wtot) as u32);
        let mut steps = vec![(0.0, x)];
        let mut lambda_integral = 0.0f64;
        let mut t = 0.0f64;
        let mut seg = 0usize;
        while t < horizon - 1e-14 {
            let grid_next = path.times[seg + 1];
            let seg_end = grid_next.min(horizon);
            let z_a = path.at(t);
            let z_b = path.at(seg_end);
            let z_m = path.at(0.5 * (t + seg_end));
            let r_a: f64 = self.lineage_entry_rates(psi, x, &z_a).iter().sum();
            let r_b: f64 = self.lineage_entry_rates(psi, x, &z_b).iter().sum();
            let r_m: f64 = self.lineage_entry_rates(psi, x, &z_m).iter().sum();
            let bound = 1.25 * r_a.max(r_b).max(r_m);
            let candidate = if bound > 0.0 {
                let e: f64 = Exp1.sample(rng);
                t + e / bound
            } else {
                f64::INFINITY
            };
            if candidate >= seg_end {
                // no candidate in this segment: advance to its end
                lambda_integral += 0.5
                    * (self.lineage_lambda(psi, x, &z_a) + self.lineage_lambda(psi, x, &z_b))
                    * (seg_end - t);
                t = seg_end;
                if t >= grid_next - 1e-15 && seg + 2 < path.times.len() {
                    seg += 1;
                }
                continue;
            }
            let z_c = path.at(candidate);
            let entry_rates = self.lineage_entry_rates(psi, x, &z_c);
            let actual: f64 = entry_rates.iter().sum();
            if actual > bound {
                return Err(OdeError::MajorantExceeded {
                    time: candidate,
                    actual,
                    bound,
                });
            }
            lambda_integral += 0.5
                * (self.lineage_lambda(psi, x, &z_a) + self.lineage_lambda(psi, x, &z_c))
                * (candidate - t);
            t = candidate;
            if rng.random::<f64>() * bound < actual {
                let entry = pick_weighted_index(rng, &entry_rates, actual);
                let k = &self.entries[x.index()][entry].offspring;
                let child_weights: Vec<f64> = (0..self.num_types())
                    .map(|y| k.as_slice()[y] as f64 * psi[y])
                    .collect();
                let cw: f64 = child_weights.iter().sum();
                x = TypeId(pick_weighted_index(rng, &child_weights, cw) as u32);
                steps.push((t, x));
            }
        }
        Ok(LimitSpinePath {
            steps,
            lambda_integral,
        })
    }
}

/// Density trajectory on a uniform grid, with the coarse-versus-fine
/// integration discrepancy attached.
pub struct OdePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub halving_sup_error: f64,
}

impl OdePath {
    /// Linear interpolation between grid states.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let hi = self.times.partition_point(|&s| s < t).max(1);
        let (t0, t1) = (self.times[hi - 1], self.times[hi]);
        let w = (t - t0) / (t1 - t0);
        self.states[hi - 1]
            .iter()
            .zip(&self.states[hi])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("nonempty path")
    }
}

/// Jump chain of the tagged lineage along a deterministic density path.
pub struct LimitSpinePath {
    /// `(time, type)` after each accepted jump, starting at time zero.
    pub steps: Vec<(f64, TypeId)>,
    pub lambda_integral: f64,
}

impl LimitSpinePath {
    /// Fraction of `[0, horizon]` spent in each type.
    pub fn occupation(&self, horizon: f64, num_types: usize) -> Vec<f64> {
        let mut occ = vec![0.0f64; num_types];
        for (i, &(t, x)) in self.steps.iter().enumerate() {
            let end = self
                .steps
                .get(i + 1)
                .map_or(horizon, |&(s, _)| s.min(horizon));
            if end > t {
                occ[x.index()] += end - t;
            }
        }
        for v in &mut occ {
            *v /= horizon;
        }
        occ
    }
}

/// Epidemic contact model in density form: a susceptible individual becomes
/// infected at rate `beta * infected density`; an infected individual is
/// removed at rate `gamma`.
pub fn sir_large_n(beta: f64, gamma: f64, s0: f64, i0: f64) -> LargeNModel {
    let infect = DensityEntry {
        offspring: PopVector::new(vec![0, 1]),
        rate: Arc::new(move |zeta: &[f64]| beta * zeta[1]) as DensityRate,
    };
    let recover = DensityEntry {
        offspring: PopVector::zeros(2),
        rate: Arc::new(move |_: &[f64]| gamma) as DensityRate,
    };
    LargeNModel::new(
        vec!["susceptible".into(), "infected".into()],
        vec![vec![infect], vec![recover]],
        vec![s0, i0],
    )
    .expect("well-formed density model")
}

/// Two interconverting types with shared crowding in density form: type `x`
/// splits at `b[x]`, dies at `c * total density`, switches at `sigma`.
pub fn switching_large_n(b: [f64; 2], c: f64, sigma: f64, initial: [f64; 2]) -> LargeNModel {
    let mut entries = Vec::with_capacity(2);
    for x in 0..2usize {
        let own = if x == 0 {
            PopVector::new(vec![2, 0])
        } else {
            PopVector::new(vec![0, 2])
        };
        let other = if x == 0 {
            PopVector::new(vec![0, 1])
        } else {
            PopVector::new(vec![1, 0])
        };
        let bx = b[x];
        entries.push(vec![
            DensityEntry {
                offspring: own,
                rate: Arc::new(move |_: &[f64]| bx) as DensityRate,
            },
            DensityEntry {
                offspring: PopVector::zeros(2),
                rate: Arc::new(move |zeta: &[f64]| c * (zeta[0] + zeta[1])) as DensityRate,
            },
            DensityEntry {
                offspring: other,
                rate: Arc::new(move |_: &[f64]| sigma) as DensityRate,
            },
        ]);
    }
    LargeNModel::new(
        vec!["a".into(), "b".into()],
        entries,
        initial.to_vec(),
    )
    .expect("well-formed density model")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PsiFunction;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logistic_stationary_is_a_distribution_with_poisson_shape() {
        let pi = logistic_stationary(2.0, 1.0, 80);
        let total: f64 = pi.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // detailed balance: pi(z) z b = pi(z+1) (z+1) c z
        for z in 1..20usize {
            let up = pi[z] * z as f64 * 2.0;
            let down = pi[z + 1] * (z + 1) as f64 * 1.0 * z as f64;
            assert_abs_diff_eq!(up, down, epsilon = 1e-13);
        }
    }

    #[test]
    fn lineage_division_rate_routes_agree() {
        for (b, c) in [(1.0, 1.0), (2.0, 1.0), (0.7, 0.3)] {
            let gf = GrowthFragmentation {
                b,
                c,
                r: 1.0,
                law: FractionLaw::PointMass(0.5),
                initial: 1,
            };
            let closed = gf.lineage_division_rate();
            let series = gf.lineage_division_rate_series(200);
            assert!(
                (closed - series).abs() <= 1e-10,
                "b={b} c={c}: {closed} vs {series}"
            );
        }
    }

    #[test]
    fn threshold_for_symmetric_split_matches_known_value() {
        let gf = GrowthFragmentation {
            b: 1.0,
            c: 1.0,
            r: 1.0,
            law: FractionLaw::PointMass(0.5),
            initial: 1,
        };
        // 2 ln 2 / (e - 1)
        let expected = 2.0 * std::f64::consts::LN_2 / (std::f64::consts::E - 1.0);
        assert_abs_diff_eq!(gf.threshold(), expected, epsilon = 1e-12);
    }

    #[test]
    fn phase_classification_is_correct_away_from_threshold() {
        let base = GrowthFragmentation {
            b: 1.0,
            c: 1.0,
            r: 0.4,
            law: FractionLaw::PointMass(0.5),
            initial: 1,
        };
        let low = base.classify(120.0, 24, 42);
        assert_eq!(low.phase, Phase::Regulated);
        let mut high = base.clone();
        high.r = 1.2;
        let res = high.classify(120.0, 24, 43);
        assert_eq!(res.phase, Phase::Growing);
        assert!(res.slope_estimate > 0.0);
    }

    #[test]
    fn capacity_two_model_props() {
        let m = capacity_two_model(1.0, 1.0);
        let one = PopVector::new(vec![1]);
        let two = PopVector::new(vec![2]);
        // splits gate off at the cap; singletons cannot die
        assert_abs_diff_eq!(m.total_rate(TypeId(0), &one).unwrap(), 1.0);
        assert_abs_diff_eq!(m.total_rate(TypeId(0), &two).unwrap(), 1.0);
        let birth = PopVector::new(vec![2]);
        assert_eq!(m.kernel().rate(TypeId(0), &two, &birth), 0.0);
    }

    #[test]
    fn logistic_ode_matches_closed_form() {
        // density flow z' = z (b - c z) has the classical sigmoid solution
        let lb = LogisticBD { b: 1.0, c: 0.5 };
        let hn = lb.large_n(0.4);
        let path = hn.solve(6.0, 600).unwrap();
        assert!(path.halving_sup_error < 1e-8);
        let k = lb.equilibrium_density();
        for t in [0.5f64, 1.0, 3.0, 6.0] {
            let exact = k / (1.0 + (k / 0.4 - 1.0) * (-t).exp());
            let got = path.at(t)[0];
            assert_abs_diff_eq!(got, exact, epsilon = 1e-8);
        }
    }

    #[test]
    fn sir_flow_keeps_its_first_integral() {
        // s + i - (gamma/beta) ln s is conserved along the flow
        let m = sir_large_n(3.0, 1.0, 0.99, 0.01);
        let path = m.solve(12.0, 1200).unwrap();
        let inv = |s: f64, i: f64| s + i - (1.0 / 3.0) * s.ln();
        let start = inv(0.99, 0.01);
        for idx in [100, 600, 2399] {
            let st = &path.states[idx];
            assert_abs_diff_eq!(inv(st[0], st[1]), start, epsilon = 1e-7);
        }
        // the epidemic burns out: infected density ends near zero and the
        // susceptible pool is visibly depleted
        let end = path.final_state();
        assert!(end[1] < 1e-3);
        assert!(end[0] < 0.1);
    }

    #[test]
    fn growth_matrix_diagonal_subtracts_total_rate() {
        let m = sir_large_n(2.0, 0.7, 0.9, 0.1);
        let a = m.growth_matrix(&[0.9, 0.1]);
        // susceptible row: infection at beta*i moves mass to infected
        assert_abs_diff_eq!(a[0][0], -0.2, epsilon = 1e-14);
        assert_abs_diff_eq!(a[0][1], 0.2, epsilon = 1e-14);
        // infected row: removal only
        assert_abs_diff_eq!(a[1][0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[1][1], -0.7, epsilon = 1e-14);
    }

    #[test]
    fn positivity_loss_is_reported() {
        // plain exponential decay stays positive on any grid
        let m = LargeNModel::new(
            vec!["x".into()],
            vec![vec![DensityEntry {
                offspring: PopVector::zeros(1),
                rate: Arc::new(|_: &[f64]| 1.0) as DensityRate,
            }]],
            vec![0.5],
        )
        .unwrap();
        assert!(m.solve(5.0, 100).is_ok());
        // a stiff quadratic pull started far above equilibrium makes the
        // fixed-step integrator overshoot below zero on a coarse grid
        let stiff = LogisticBD { b: 1.0, c: 10.0 }.large_n(5.0);
        assert!(matches!(
            stiff.solve(5.0, 4),
            Err(OdeError::PositivityLoss { .. })
        ));
    }

    #[test]
    fn scaled_model_rates_use_density() {
        let lb = LogisticBD { b: 1.0, c: 0.5 };
        let hn = lb.large_n(0.4);
        let m = hn.scaled_model(100).unwrap();
        assert_eq!(m.initial_composition().norm1(), 40);
        let z = PopVector::new(vec![80]);
        // per-individual death rate c * z/N = 0.5 * 0.8
        let death = PopVector::zeros(1);
        assert_abs_diff_eq!(m.kernel().rate(TypeId(0), &z, &death), 0.4, epsilon = 1e-14);
    }

    #[test]
    fn reproductive_value_at_symmetric_equilibrium() {
        let m = switching_large_n([1.0, 1.0], 0.5, 0.3, [1.0, 1.0]);
        // equilibrium: total density K = b/c, split evenly
        let zstar = [1.0, 1.0];
        let phi = m.reproductive_value(&zstar, 1e-9).unwrap();
        assert_abs_diff_eq!(phi[0], phi[1], epsilon = 1e-10);
        let inner: f64 = zstar.iter().zip(&phi).map(|(z, p)| z * p).sum();
        assert_abs_diff_eq!(inner, 1.0, epsilon = 1e-12);
        // lineage growth rate vanishes at the equilibrium
        assert!(m.lineage_lambda(&phi, TypeId(0), &zstar).abs() < 1e-9);
    }

    #[test]
    fn reproductive_value_rejects_non_equilibrium() {
        let m = switching_large_n([1.0, 1.0], 0.5, 0.3, [1.0, 1.0]);
        assert!(matches!(
            m.reproductive_value(&[0.3, 0.3], 1e-9),
            Err(OdeError::NotAnEquilibrium { .. })
        ));
    }

    #[test]
    fn limit_spine_occupation_matches_reproductive_decomposition() {
        // at an asymmetric equilibrium, the tagged lineage spends a fraction
        // z*_x phi_x of its time in type x
        let m = switching_large_n([1.3, 0.8], 0.5, 0.4, [1.0, 1.0]);
        let relax = m.solve(200.0, 4000).unwrap();
        let zstar = relax.final_state().to_vec();
        let flow_norm = m
            .flow(&zstar)
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(flow_norm < 1e-8, "flow residual {flow_norm}");
        let phi = m.reproductive_value(&zstar, 1e-6).unwrap();
        // restart the flow from the equilibrium: the path is constant
        let eq = switching_large_n([1.3, 0.8], 0.5, 0.4, [zstar[0], zstar[1]]);
        let horizon = 4000.0;
        let path = eq.solve(horizon, 2000).unwrap();
        let mut rng = replica_rng(99, tag::LIMIT, 0);
        let spine = eq.simulate_limit_spine(&path, &phi, horizon, &mut rng).unwrap();
        assert!(
            spine.lambda_integral.abs() < 1e-4,
            "lambda integral {}",
            spine.lambda_integral
        );
        let occ = spine.occupation(horizon, 2);
        let expect: Vec<f64> = zstar.iter().zip(&phi).map(|(z, p)| z * p).collect();
        for x in 0..2 {
            assert!(
                (occ[x] - expect[x]).abs() < 0.05,
                "type {x}: occupation {} vs {}",
                occ[x],
                expect[x]
            );
        }
        assert!(spine.steps.len() > 1000, "lineage barely jumped");
    }

    #[test]
    fn decaying_birth_rate_decreases_toward_base() {
        let db = DecayingBirth { b: 0.2, eps: 0.1 };
        let m = db.model(5).unwrap();
        let small = m
            .total_rate(TypeId(0), &PopVector::new(vec![5]))
            .unwrap();
        let large = m
            .total_rate(TypeId(0), &PopVector::new(vec![100_000]))
            .unwrap();
        assert!(small > large);
        assert!(large > 0.2 && large < 0.201);
    }

    #[test]
    fn two_type_switch_model_is_well_formed() {
        let m = two_type_switch_model();
        assert_eq!(m.num_types(), 2);
        let z = PopVector::new(vec![1, 1]);
        assert!(m.total_rate(TypeId(0), &z).unwrap() > 0.0);
        assert!(m.total_rate(TypeId(1), &z).unwrap() > 0.0);
        // the one-weight lineage chain still has finite rates at the cap
        let psi = PsiFunction::one();
        let full = PopVector::new(vec![2, 2]);
        let rates = crate::spine::biased_rates(&m, &psi, TypeId(0), &full, 1.0).unwrap();
        assert!(rates.total().is_finite());
    }
}
