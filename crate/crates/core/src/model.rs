//! Population model: type space, compositions, rate kernels, weight functions
//! and the associated first-moment generator.
//!
//! A model describes individuals carrying a type from a finite set. An
//! individual of type `x` in composition `z` is replaced by the offspring
//! described by a vector `k` (counts per type) at rate `rate(x, z, k)`; the
//! composition jumps to `z + k - e(x)`. A zero offspring vector is a death.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::error::ModelError;

/// Index into the finite type space.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub u32);

impl TypeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Debug for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TypeId({})", self.0)
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Counts per type with a cached l1 norm.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PopVector {
    counts: Vec<u32>,
    norm1: u32,
}

/// Offspring vectors share the composition representation; the zero vector
/// encodes a death.
pub type OffspringVector = PopVector;

impl PopVector {
    pub fn new(counts: Vec<u32>) -> Self {
        let norm1 = counts.iter().sum();
        PopVector { counts, norm1 }
    }

    pub fn zeros(num_types: usize) -> Self {
        PopVector {
            counts: vec![0; num_types],
            norm1: 0,
        }
    }

    /// Basis vector with a single individual of type `x`.
    pub fn unit(num_types: usize, x: TypeId) -> Self {
        let mut counts = vec![0; num_types];
        counts[x.index()] = 1;
        PopVector { counts, norm1: 1 }
    }

    #[inline]
    pub fn count(&self, x: TypeId) -> u32 {
        self.counts[x.index()]
    }

    #[inline]
    pub fn norm1(&self) -> u32 {
        self.norm1
    }

    #[inline]
    pub fn num_types(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.norm1 == 0
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    /// Types with at least one individual.
    pub fn present(&self) -> impl Iterator<Item = (TypeId, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (TypeId(i as u32), c))
    }

    /// In-place `z + k - e(x)`. The caller must ensure `z_x >= 1`.
    pub fn apply_event(&mut self, x: TypeId, k: &OffspringVector) {
        debug_assert!(self.counts[x.index()] >= 1, "event on an absent type");
        for (c, kc) in self.counts.iter_mut().zip(k.counts.iter()) {
            *c += kc;
        }
        self.counts[x.index()] -= 1;
        self.norm1 = self.norm1 + k.norm1 - 1;
    }

    /// Undo of [`apply_event`]: `z - k + e(x)`.
    pub fn unapply_event(&mut self, x: TypeId, k: &OffspringVector) {
        self.counts[x.index()] += 1;
        for (c, kc) in self.counts.iter_mut().zip(k.counts.iter()) {
            debug_assert!(*c >= *kc);
            *c -= kc;
        }
        self.norm1 = self.norm1 + 1 - k.norm1;
    }

    pub fn after_event(&self, x: TypeId, k: &OffspringVector) -> PopVector {
        let mut out = self.clone();
        out.apply_event(x, k);
        out
    }
}

impl fmt::Debug for PopVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for PopVector {
    /// Pipe-separated counts, e.g. `2|0`; used in CSV exports.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, "|")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Rate of one offspring vector as a function of the composition.
#[derive(Clone)]
pub enum RateFn {
    Constant(f64),
    /// `coeff * (||z||_1 - 1)`: each individual dies at a rate proportional to
    /// the number of competitors.
    LogisticDeath(f64),
    /// `base + <coeffs, z>`.
    Affine { base: f64, coeffs: Vec<f64> },
    /// Constant rate that switches off when the post-event population would
    /// exceed `zbar`. A kernel-level capacity does the same for every entry;
    /// this variant lets a single entry carry its own bound.
    CapacityGated { value: f64, zbar: u32 },
    Custom(Arc<dyn Fn(&PopVector) -> f64 + Send + Sync>),
}

impl RateFn {
    fn eval(&self, z: &PopVector, post_norm: u32) -> f64 {
        match self {
            RateFn::Constant(v) => *v,
            RateFn::LogisticDeath(c) => *c * (z.norm1().saturating_sub(1)) as f64,
            RateFn::Affine { base, coeffs } => {
                let mut r = *base;
                for (c, zc) in coeffs.iter().zip(z.as_slice()) {
                    r += c * *zc as f64;
                }
                r
            }
            RateFn::CapacityGated { value, zbar } => {
                if post_norm > *zbar {
                    0.0
                } else {
                    *value
                }
            }
            RateFn::Custom(f) => f(z),
        }
    }
}

impl fmt::Debug for RateFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFn::Constant(v) => write!(f, "Constant({v})"),
            RateFn::LogisticDeath(c) => write!(f, "LogisticDeath({c})"),
            RateFn::Affine { base, coeffs } => write!(f, "Affine({base} + <{coeffs:?}, z>)"),
            RateFn::CapacityGated { value, zbar } => {
                write!(f, "CapacityGated({value}, zbar={zbar})")
            }
            RateFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// One admissible offspring vector of a type together with its rate.
#[derive(Clone, Debug)]
pub struct SupportEntry {
    pub offspring: OffspringVector,
    pub rate: RateFn,
}

/// Finite-support branching rates, optionally capped at a carrying capacity.
///
/// With a capacity `zbar`, every rate vanishes whenever the post-event
/// population `||z + k - e(x)||_1` would exceed `zbar`.
#[derive(Clone, Debug)]
pub struct RateKernel {
    support: Vec<Vec<SupportEntry>>,
    capacity: Option<u32>,
}

impl RateKernel {
    pub fn new(support: Vec<Vec<SupportEntry>>, capacity: Option<u32>) -> Self {
        RateKernel { support, capacity }
    }

    pub fn num_types(&self) -> usize {
        self.support.len()
    }

    pub fn capacity(&self) -> Option<u32> {
        self.capacity
    }

    pub fn support(&self, x: TypeId) -> &[SupportEntry] {
        &self.support[x.index()]
    }

    /// Post-event population size for an event `(x, k)` in composition `z`.
    #[inline]
    fn post_norm(z: &PopVector, k: &OffspringVector) -> u32 {
        z.norm1() + k.norm1() - 1
    }

    /// Gated rate of the `i`-th support entry of type `x`.
    #[inline]
    pub fn rate_entry(&self, x: TypeId, z: &PopVector, i: usize) -> f64 {
        let entry = &self.support[x.index()][i];
        let post = Self::post_norm(z, &entry.offspring);
        if let Some(zbar) = self.capacity {
            if post > zbar {
                return 0.0;
            }
        }
        entry.rate.eval(z, post)
    }

    /// Gated rate for an explicit offspring vector; zero if `k` is not in the
    /// declared support of `x`.
    pub fn rate(&self, x: TypeId, z: &PopVector, k: &OffspringVector) -> f64 {
        for (i, entry) in self.support[x.index()].iter().enumerate() {
            if entry.offspring == *k {
                return self.rate_entry(x, z, i);
            }
        }
        0.0
    }

    /// Total branch rate `sum_k rate(x, z, k)` of one individual of type `x`.
    pub fn total_rate(&self, x: TypeId, z: &PopVector) -> Result<f64, ModelError> {
        if z.count(x) == 0 {
            return Err(ModelError::EmptyType(x));
        }
        let mut total = 0.0;
        for i in 0..self.support[x.index()].len() {
            let r = self.rate_entry(x, z, i);
            if r < 0.0 {
                return Err(ModelError::NegativeRate { ty: x, value: r });
            }
            total += r;
        }
        Ok(total)
    }
}

/// How an offspring vector is laid out as an ordered tuple of types.
///
/// The default assigns types exchangeably: every ordering of the offspring
/// multiset is equally likely.
#[derive(Clone)]
pub enum TypeAssignmentLaw {
    ExchangeableUniform,
    Custom(Arc<dyn Fn(&OffspringVector, &mut dyn RngCore) -> Vec<TypeId> + Send + Sync>),
}

impl TypeAssignmentLaw {
    /// Ordered offspring types; the multiset of the result always equals `k`.
    pub fn sample(&self, k: &OffspringVector, rng: &mut dyn RngCore) -> Vec<TypeId> {
        match self {
            TypeAssignmentLaw::ExchangeableUniform => {
                let mut out = Vec::with_capacity(k.norm1() as usize);
                for (ty, count) in k.present() {
                    for _ in 0..count {
                        out.push(ty);
                    }
                }
                out.shuffle(&mut RngAdapter(rng));
                out
            }
            TypeAssignmentLaw::Custom(f) => {
                let out = f(k, rng);
                debug_assert_eq!(out.len(), k.norm1() as usize);
                out
            }
        }
    }
}

impl fmt::Debug for TypeAssignmentLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeAssignmentLaw::ExchangeableUniform => write!(f, "ExchangeableUniform"),
            TypeAssignmentLaw::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// `&mut dyn RngCore` does not implement `Rng` directly; this shim forwards
/// the core methods so slice utilities work on trait objects.
struct RngAdapter<'a>(&'a mut dyn RngCore);

impl RngCore for RngAdapter<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
}

/// Reciprocal of a positive integer-valued float, nudged by up to two ulps so
/// that `n * exact_recip(n)` rounds to exactly 1.0 whenever some double can
/// achieve that. Every `n <= 236` has such a partner; 237 is the first integer
/// whose product grid skips over 1.0 entirely, in which case the correctly
/// rounded reciprocal is returned and the product is off by at most one ulp.
/// Keeps size-reciprocal weight functions free of spurious last-bit drift for
/// the population sizes a capacity-regulated run actually visits.
pub(crate) fn exact_recip(n: f64) -> f64 {
    let u = 1.0 / n;
    for delta in [0i64, -1, 1, -2, 2] {
        let c = f64::from_bits((u.to_bits() as i64 + delta) as u64);
        if n * c == 1.0 {
            return c;
        }
    }
    u
}

/// Strictly positive weight function on (type, composition) pairs.
#[derive(Clone)]
pub struct PsiFunction {
    name: String,
    kind: PsiKind,
}

#[derive(Clone)]
enum PsiKind {
    One,
    InverseSize,
    Tabulated(Arc<std::collections::HashMap<(TypeId, PopVector), f64>>),
    Custom(Arc<dyn Fn(TypeId, &PopVector) -> f64 + Send + Sync>),
}

impl PsiFunction {
    /// Constant weight 1; biases branch events by total offspring count.
    pub fn one() -> Self {
        PsiFunction {
            name: "one".into(),
            kind: PsiKind::One,
        }
    }

    /// `1 / ||z||_1`, the uniform-sampling weight.
    pub fn inverse_size() -> Self {
        PsiFunction {
            name: "inverse-size".into(),
            kind: PsiKind::InverseSize,
        }
    }

    pub fn tabulated(
        name: impl Into<String>,
        entries: impl IntoIterator<Item = ((TypeId, PopVector), f64)>,
    ) -> Result<Self, ModelError> {
        let map: std::collections::HashMap<_, _> = entries.into_iter().collect();
        for ((ty, _), &v) in map.iter() {
            if !(v > 0.0) {
                return Err(ModelError::NonPositivePsi { ty: *ty, value: v });
            }
        }
        Ok(PsiFunction {
            name: name.into(),
            kind: PsiKind::Tabulated(Arc::new(map)),
        })
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(TypeId, &PopVector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PsiFunction {
            name: name.into(),
            kind: PsiKind::Custom(Arc::new(f)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Evaluate at `(x, z)`; requires `z_x >= 1`.
    ///
    /// Panics when a tabulated function is asked for a state outside its
    /// table: reachable states of a capacity-bounded model are always
    /// enumerated up front, so a miss is a defect, not an input error.
    pub fn eval(&self, x: TypeId, z: &PopVector) -> f64 {
        debug_assert!(z.count(x) >= 1, "psi evaluated at an absent type");
        match &self.kind {
            PsiKind::One => 1.0,
            PsiKind::InverseSize => exact_recip(z.norm1() as f64),
            PsiKind::Tabulated(map) => match map.get(&(x, z.clone())) {
                Some(v) => *v,
                None => panic!("tabulated psi has no value for ({x}, {z})"),
            },
            PsiKind::Custom(f) => {
                let v = f(x, z);
                debug_assert!(v > 0.0, "psi must be positive, got {v} at ({x}, {z})");
                v
            }
        }
    }

    /// `<v, psi(., v)> = sum_x v_x psi(x, v)`, the normalising constant of the
    /// initial tagged-individual law.
    pub fn initial_inner(&self, v: &PopVector) -> f64 {
        let mut s = 0.0;
        for (ty, count) in v.present() {
            s += count as f64 * self.eval(ty, v);
        }
        s
    }
}

impl fmt::Debug for PsiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PsiFunction({})", self.name)
    }
}

/// Complete model: types, rates, offspring type assignment and the initial
/// population (labelled individuals).
#[derive(Clone, Debug)]
pub struct ModelSpec {
    type_names: Vec<String>,
    kernel: RateKernel,
    assignment: TypeAssignmentLaw,
    initial: Vec<(u32, TypeId)>,
    initial_composition: PopVector,
}

impl ModelSpec {
    pub fn new(
        type_names: Vec<String>,
        kernel: RateKernel,
        assignment: TypeAssignmentLaw,
        initial: Vec<(u32, TypeId)>,
    ) -> Result<Self, ModelError> {
        if initial.is_empty() {
            return Err(ModelError::EmptyInitial);
        }
        let num_types = type_names.len();
        if kernel.num_types() != num_types {
            return Err(ModelError::DimensionMismatch {
                expected: num_types,
                got: kernel.num_types(),
            });
        }
        for entries in &kernel.support {
            for e in entries {
                if e.offspring.num_types() != num_types {
                    return Err(ModelError::DimensionMismatch {
                        expected: num_types,
                        got: e.offspring.num_types(),
                    });
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut counts = vec![0u32; num_types];
        for &(label, ty) in &initial {
            if !seen.insert(label) {
                return Err(ModelError::DuplicateLabel(label));
            }
            counts[ty.index()] += 1;
        }
        Ok(ModelSpec {
            type_names,
            kernel,
            assignment,
            initial,
            initial_composition: PopVector::new(counts),
        })
    }

    /// Single-type model with individuals labelled `1..=n`.
    pub fn single_type(
        name: impl Into<String>,
        entries: Vec<SupportEntry>,
        capacity: Option<u32>,
        initial_count: u32,
    ) -> Result<Self, ModelError> {
        let initial = (1..=initial_count).map(|i| (i, TypeId(0))).collect();
        ModelSpec::new(
            vec![name.into()],
            RateKernel::new(vec![entries], capacity),
            TypeAssignmentLaw::ExchangeableUniform,
            initial,
        )
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_name(&self, x: TypeId) -> &str {
        &self.type_names[x.index()]
    }

    pub fn type_by_name(&self, name: &str) -> Option<TypeId> {
        self.type_names
            .iter()
            .position(|n| n == name)
            .map(|i| TypeId(i as u32))
    }

    pub fn kernel(&self) -> &RateKernel {
        &self.kernel
    }

    pub fn assignment(&self) -> &TypeAssignmentLaw {
        &self.assignment
    }

    pub fn initial(&self) -> &[(u32, TypeId)] {
        &self.initial
    }

    pub fn initial_composition(&self) -> &PopVector {
        &self.initial_composition
    }

    pub fn total_rate(&self, x: TypeId, z: &PopVector) -> Result<f64, ModelError> {
        self.kernel.total_rate(x, z)
    }

    /// First-moment generator of the tagged-individual pair `(type, composition)`
    /// applied to `f` at `(x, z)`:
    ///
    /// the tagged individual branches and `f` is summed over its offspring;
    /// any other individual branches and moves the composition; the diagonal
    /// removes the total event rate. Terms are grouped per `(actor, k)` so
    /// that each group is a small bracket; zero coefficients are skipped
    /// before `f` is evaluated, which keeps `f` inside its domain.
    pub fn generator_apply(
        &self,
        f: &dyn Fn(TypeId, &PopVector) -> f64,
        x: TypeId,
        z: &PopVector,
    ) -> Result<f64, ModelError> {
        if z.count(x) == 0 {
            return Err(ModelError::EmptyType(x));
        }
        if self.num_types() == 1 {
            return self.generator_apply_single(f, x, z);
        }
        let f_here = f(x, z);
        let mut acc = 0.0;
        let mut scratch = z.clone();
        for (y, zy) in z.present() {
            for i in 0..self.kernel.support(y).len() {
                let rate = self.kernel.rate_entry(y, z, i);
                if rate == 0.0 {
                    continue;
                }
                let k = &self.kernel.support(y)[i].offspring;
                scratch.apply_event(y, k);
                let mut bracket = 0.0;
                if y == x {
                    for (w, kw) in k.present() {
                        bracket += kw as f64 * f(w, &scratch);
                    }
                }
                let bystanders = zy - u32::from(y == x);
                if bystanders > 0 {
                    bracket += bystanders as f64 * f(x, &scratch);
                }
                bracket -= zy as f64 * f_here;
                scratch.unapply_event(y, k);
                acc += rate * bracket;
            }
        }
        Ok(acc)
    }

    /// Single-type specialisation: `sum_k rate_k(z) [(z+k-1) f(z+k-1) - z f(z)]`.
    /// The integer prefactors multiply `f` directly, so weight functions with
    /// exactly-cancelling products (such as the size reciprocal) produce an
    /// exact zero.
    fn generator_apply_single(
        &self,
        f: &dyn Fn(TypeId, &PopVector) -> f64,
        x: TypeId,
        z: &PopVector,
    ) -> Result<f64, ModelError> {
        let zn = z.norm1();
        let f_here = f(x, z);
        let mut acc = 0.0;
        let mut scratch = z.clone();
        for i in 0..self.kernel.support(x).len() {
            let rate = self.kernel.rate_entry(x, z, i);
            if rate == 0.0 {
                continue;
            }
            let k = &self.kernel.support(x)[i].offspring;
            let post = zn + k.norm1() - 1;
            let mut bracket = -(zn as f64) * f_here;
            if post > 0 {
                scratch.apply_event(x, k);
                bracket += post as f64 * f(x, &scratch);
                scratch.unapply_event(x, k);
            }
            acc += rate * bracket;
        }
        Ok(acc)
    }

    /// `lambda(x, z) = (G psi)(x, z) / psi(x, z)`, the local exponential
    /// growth rate of the weighted population seen from the tagged individual.
    pub fn lambda_of(
        &self,
        psi: &PsiFunction,
        x: TypeId,
        z: &PopVector,
    ) -> Result<f64, ModelError> {
        let g = self.generator_apply(&|y, w| psi.eval(y, w), x, z)?;
        Ok(g / psi.eval(x, z))
    }
}
