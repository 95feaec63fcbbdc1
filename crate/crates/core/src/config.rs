//! TOML configuration for the command-line tools.
//!
//! A config names the model (types, rate entries, initial composition), the
//! weight function, and the run parameters. The seed is mandatory: runs must
//! be reproducible from their config alone, so nothing falls back to clock
//! entropy.

use std::path::Path;

use serde::Deserialize;

use crate::error::ConfigError;
use crate::model::{
    ModelSpec, PopVector, PsiFunction, RateFn, RateKernel, SupportEntry, TypeAssignmentLaw, TypeId,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub psi: Option<PsiSection>,
    pub run: RunSection,
    pub output: Option<OutputSection>,
    pub compare: Option<CompareSection>,
    pub phase: Option<PhaseSection>,
    pub odelimit: Option<OdeLimitSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Label used in report rows; defaults to "custom".
    pub name: Option<String>,
    pub types: Vec<String>,
    pub capacity: Option<u32>,
    #[serde(rename = "rate", default)]
    pub rates: Vec<RateEntrySection>,
    pub initial: InitialSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntrySection {
    /// Acting type, by name.
    #[serde(rename = "type")]
    pub acting: String,
    /// Offspring counts per type, aligned with `model.types`.
    pub offspring: Vec<u32>,
    pub kind: RateKind,
    /// Rate for `constant` and `capacity-gated`; coefficient for
    /// `logistic-death`.
    pub value: Option<f64>,
    /// Intercept for `affine`.
    pub base: Option<f64>,
    /// Per-type slope for `affine`.
    pub coeffs: Option<Vec<f64>>,
    /// Bound for `capacity-gated`; defaults to the model capacity.
    pub zbar: Option<u32>,
}

#[derive(Copy, Clone, Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    Constant,
    LogisticDeath,
    Affine,
    CapacityGated,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Individuals per type, aligned with `model.types`.
    pub counts: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiSection {
    pub builtin: PsiKind,
    /// Required when `builtin = "tabulated"`.
    pub entries: Option<Vec<PsiEntrySection>>,
}

#[derive(Copy, Clone, Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiKind {
    InverseSize,
    ConstantOne,
    /// Solve the capacity-bounded lineage eigenproblem and use its right
    /// eigenvector.
    EigenH,
    Tabulated,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiEntrySection {
    #[serde(rename = "type")]
    pub ty: String,
    pub composition: Vec<u32>,
    pub value: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Horizon.
    pub t: f64,
    pub replicas: u64,
    /// Mandatory: reruns of the same config must agree byte for byte.
    pub seed: u64,
    pub max_events: Option<u64>,
    /// Worker threads; 0 or absent picks the library default.
    pub threads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    /// Dump full genealogies for this many leading replicas.
    pub trees: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Functionals to compare; defaults to population size, lineage branch
    /// count, and lineage occupation of the initial state.
    pub functionals: Option<Vec<String>>,
    /// Acceptance band in combined standard errors.
    pub sigmas: Option<f64>,
    /// Multiplier on the tagged branch rates; any value other than 1 breaks
    /// the construction on purpose so the comparison can be seen to fail.
    pub distortion: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    /// Per-capita birth rates to sweep.
    pub b: Vec<f64>,
    /// Crowding coefficients to sweep.
    pub c: Vec<f64>,
    /// Mass growth rates to classify.
    pub r: Vec<f64>,
    pub fraction: FractionSection,
    pub paths: Option<u32>,
    pub horizon: Option<f64>,
    /// Founding individuals per path.
    pub initial: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionSection {
    pub kind: FractionKind,
    /// Fraction for `point-mass`.
    pub value: Option<f64>,
    /// Shape for `beta`.
    pub alpha: Option<f64>,
}

#[derive(Copy, Clone, Debug, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FractionKind {
    PointMass,
    Beta,
    Uniform,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum OdeLimitSection {
    Logistic {
        b: f64,
        c: f64,
        initial: f64,
        horizon: Option<f64>,
        ns: Option<Vec<u32>>,
        steps: Option<usize>,
    },
    Sir {
        beta: f64,
        gamma: f64,
        s0: f64,
        i0: f64,
        horizon: Option<f64>,
        ns: Option<Vec<u32>>,
        steps: Option<usize>,
    },
}

impl ConfigFile {
    pub fn from_path(path: &Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    pub fn build_model(&self) -> Result<ModelSpec, ConfigError> {
        self.model.build()
    }

    /// Resolve the weight function; `eigen-h` solves the lineage
    /// eigenproblem on the model's capacity-bounded state space.
    pub fn build_psi(&self, model: &ModelSpec) -> Result<PsiFunction, ConfigError> {
        let Some(section) = &self.psi else {
            return Ok(PsiFunction::inverse_size());
        };
        match section.builtin {
            PsiKind::InverseSize => Ok(PsiFunction::inverse_size()),
            PsiKind::ConstantOne => Ok(PsiFunction::one()),
            PsiKind::EigenH => {
                let space = crate::eigen::state_space_of(model, crate::eigen::DEFAULT_STATE_LIMIT)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let g = crate::eigen::build_generator(model, &space)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let trip = crate::eigen::perron_frobenius(&g)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(crate::eigen::psi_from_triplet(&space, &trip, "eigen-h"))
            }
            PsiKind::Tabulated => {
                let entries = section.entries.as_ref().ok_or_else(|| {
                    ConfigError::Invalid("psi.builtin = \"tabulated\" needs psi.entries".into())
                })?;
                let mut table = Vec::with_capacity(entries.len());
                for e in entries {
                    let ty = self.model.type_id(&e.ty)?;
                    if e.composition.len() != self.model.types.len() {
                        return Err(ConfigError::Invalid(format!(
                            "psi entry composition has {} entries, model has {} types",
                            e.composition.len(),
                            self.model.types.len()
                        )));
                    }
                    table.push(((ty, PopVector::new(e.composition.clone())), e.value));
                }
                PsiFunction::tabulated("tabulated", table)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }
}

impl ModelSection {
    fn type_id(&self, name: &str) -> Result<TypeId, ConfigError> {
        self.types
            .iter()
            .position(|t| t == name)
            .map(|i| TypeId(i as u32))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown type name \"{name}\"")))
    }

    pub fn build(&self) -> Result<ModelSpec, ConfigError> {
        let d = self.types.len();
        if d == 0 {
            return Err(ConfigError::Invalid("model.types is empty".into()));
        }
        if self.rates.is_empty() {
            return Err(ConfigError::Invalid("model declares no rate entries".into()));
        }
        let mut support: Vec<Vec<SupportEntry>> = vec![Vec::new(); d];
        for entry in &self.rates {
            let ty = self.type_id(&entry.acting)?;
            if entry.offspring.len() != d {
                return Err(ConfigError::Invalid(format!(
                    "offspring vector for type \"{}\" has {} entries, model has {d} types",
                    entry.acting,
                    entry.offspring.len()
                )));
            }
            let rate = entry.build_rate(self, d)?;
            support[ty.index()].push(SupportEntry {
                offspring: PopVector::new(entry.offspring.clone()),
                rate,
            });
        }
        if self.initial.counts.len() != d {
            return Err(ConfigError::Invalid(format!(
                "initial.counts has {} entries, model has {d} types",
                self.initial.counts.len()
            )));
        }
        let mut initial = Vec::new();
        let mut label = 1u32;
        for (x, &count) in self.initial.counts.iter().enumerate() {
            for _ in 0..count {
                initial.push((label, TypeId(x as u32)));
                label += 1;
            }
        }
        Ok(ModelSpec::new(
            self.types.clone(),
            RateKernel::new(support, self.capacity),
            TypeAssignmentLaw::ExchangeableUniform,
            initial,
        )?)
    }
}

impl RateEntrySection {
    fn build_rate(&self, model: &ModelSection, d: usize) -> Result<RateFn, ConfigError> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "rate entry for \"{}\" ({:?}) needs `{what}`",
                    self.acting, self.kind
                ))
            })
        };
        match self.kind {
            RateKind::Constant => Ok(RateFn::Constant(need(self.value, "value")?)),
            RateKind::LogisticDeath => Ok(RateFn::LogisticDeath(need(self.value, "value")?)),
            RateKind::Affine => {
                let coeffs = self.coeffs.clone().ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "rate entry for \"{}\" (affine) needs `coeffs`",
                        self.acting
                    ))
                })?;
                if coeffs.len() != d {
                    return Err(ConfigError::Invalid(format!(
                        "affine coeffs for \"{}\" has {} entries, model has {d} types",
                        self.acting,
                        coeffs.len()
                    )));
                }
                Ok(RateFn::Affine {
                    base: self.base.unwrap_or(0.0),
                    coeffs,
                })
            }
            RateKind::CapacityGated => {
                let zbar = self.zbar.or(model.capacity).ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "rate entry for \"{}\" (capacity-gated) needs `zbar` or a model capacity",
                        self.acting
                    ))
                })?;
                Ok(RateFn::CapacityGated {
                    value: need(self.value, "value")?,
                    zbar,
                })
            }
        }
    }
}

impl FractionSection {
    pub fn build(&self) -> Result<crate::simulate::FractionLaw, ConfigError> {
        match self.kind {
            FractionKind::PointMass => {
                let v = self.value.ok_or_else(|| {
                    ConfigError::Invalid("fraction.kind = \"point-mass\" needs `value`".into())
                })?;
                if !(0.0 < v && v < 1.0) {
                    return Err(ConfigError::Invalid(format!(
                        "fraction value {v} is outside (0, 1)"
                    )));
                }
                Ok(crate::simulate::FractionLaw::PointMass(v))
            }
            FractionKind::Beta => {
                let alpha = self.alpha.ok_or_else(|| {
                    ConfigError::Invalid("fraction.kind = \"beta\" needs `alpha`".into())
                })?;
                if alpha <= 0.0 {
                    return Err(ConfigError::Invalid(format!(
                        "fraction alpha {alpha} must be positive"
                    )));
                }
                Ok(crate::simulate::FractionLaw::Beta { alpha })
            }
            FractionKind::Uniform => Ok(crate::simulate::FractionLaw::Uniform),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOGISTIC: &str = r#"
        [model]
        types = ["cell"]

        [[model.rate]]
        type = "cell"
        offspring = [2]
        kind = "constant"
        value = 1.0

        [[model.rate]]
        type = "cell"
        offspring = [0]
        kind = "logistic-death"
        value = 0.5

        [model.initial]
        counts = [3]

        [run]
        t = 1.5
        replicas = 1000
        seed = 7
    "#;

    #[test]
    fn logistic_config_builds() {
        let cfg: ConfigFile = toml::from_str(LOGISTIC).unwrap();
        let model = cfg.build_model().unwrap();
        assert_eq!(model.num_types(), 1);
        assert_eq!(model.initial_composition().norm1(), 3);
        let z = PopVector::new(vec![4]);
        // rate 1 + 0.5 * 3 per individual
        assert!((model.total_rate(TypeId(0), &z).unwrap() - 2.5).abs() < 1e-14);
        let psi = cfg.build_psi(&model).unwrap();
        assert_eq!(psi.name(), "inverse-size");
    }

    #[test]
    fn missing_seed_is_a_parse_error() {
        let text = LOGISTIC.replace("seed = 7", "");
        let err = toml::from_str::<ConfigFile>(&text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn unknown_type_is_rejected() {
        let text = LOGISTIC.replace("type = \"cell\"\n        offspring = [2]", "type = \"oops\"\n        offspring = [2]");
        let cfg: ConfigFile = toml::from_str(&text).unwrap();
        let err = cfg.build_model().unwrap_err();
        assert!(err.to_string().contains("oops"), "{err}");
    }

    #[test]
    fn eigen_psi_requires_capacity() {
        let text = LOGISTIC.to_string()
            + r#"
        [psi]
        builtin = "eigen-h"
        "#;
        let cfg: ConfigFile = toml::from_str(&text).unwrap();
        let model = cfg.build_model().unwrap();
        assert!(cfg.build_psi(&model).is_err());
    }

    #[test]
    fn eigen_psi_builds_with_capacity() {
        let text = LOGISTIC.replace("types = [\"cell\"]", "types = [\"cell\"]\n        capacity = 2")
            + r#"
        [psi]
        builtin = "eigen-h"
        "#;
        let cfg: ConfigFile = toml::from_str(&text).unwrap();
        let model = cfg.build_model().unwrap();
        let psi = cfg.build_psi(&model).unwrap();
        // two states; the weight is the right eigenvector
        let one = PopVector::new(vec![1]);
        let two = PopVector::new(vec![2]);
        let ratio = psi.eval(TypeId(0), &one) / psi.eval(TypeId(0), &two);
        // with b = 1, d = 0.5 the ratio h(1)/h(2) solves the two-state
        // eigenproblem; it must at least be finite and positive
        assert!(ratio.is_finite() && ratio > 0.0);
    }

    #[test]
    fn tabulated_psi_roundtrip() {
        let text = LOGISTIC.to_string()
            + r#"
        [psi]
        builtin = "tabulated"
        entries = [
            { type = "cell", composition = [1], value = 0.9 },
            { type = "cell", composition = [2], value = 0.4 },
        ]
        "#;
        let cfg: ConfigFile = toml::from_str(&text).unwrap();
        let model = cfg.build_model().unwrap();
        let psi = cfg.build_psi(&model).unwrap();
        assert!((psi.eval(TypeId(0), &PopVector::new(vec![2])) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn fraction_laws_build_and_validate() {
        let ok = FractionSection {
            kind: FractionKind::PointMass,
            value: Some(0.5),
            alpha: None,
        };
        assert!(ok.build().is_ok());
        let bad = FractionSection {
            kind: FractionKind::PointMass,
            value: Some(1.5),
            alpha: None,
        };
        assert!(bad.build().is_err());
        let beta = FractionSection {
            kind: FractionKind::Beta,
            value: None,
            alpha: Some(2.0),
        };
        assert!(beta.build().is_ok());
    }

    #[test]
    fn phase_and_odelimit_sections_parse() {
        let text = LOGISTIC.to_string()
            + r#"
        [phase]
        b = [1.0]
        c = [1.0]
        r = [0.4, 1.2]
        paths = 32

        [phase.fraction]
        kind = "point-mass"
        value = 0.5

        [odelimit]
        model = "logistic"
        b = 1.0
        c = 1.0
        initial = 0.4
        ns = [100, 1000]
        "#;
        let cfg: ConfigFile = toml::from_str(&text).unwrap();
        let phase = cfg.phase.as_ref().unwrap();
        assert_eq!(phase.r.len(), 2);
        assert!(matches!(
            cfg.odelimit.as_ref().unwrap(),
            OdeLimitSection::Logistic { .. }
        ));
    }
}
