//! Scenario files.
//!
//! The native format is TOML with one section per module; a file ending in
//! `.json` is read as the JSON mirror of the same structure.

use std::fmt;
use std::path::{Path, PathBuf};

use rvm_core::energetics::ConeResolution;
use rvm_core::fields::FieldResolution;
use rvm_core::radiation::RadiationResolution;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Fields,
    Radiation,
    Energetics,
    Evolve,
    Verify,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [
        Pipeline::Fields,
        Pipeline::Radiation,
        Pipeline::Energetics,
        Pipeline::Evolve,
        Pipeline::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Fields => "fields",
            Pipeline::Radiation => "radiation",
            Pipeline::Energetics => "energetics",
            Pipeline::Evolve => "evolve",
            Pipeline::Verify => "verify",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == text.trim())
    }

    /// Parses a comma-separated list; `none` selects nothing.
    pub fn parse_list(text: &str) -> Result<Vec<Self>, CliError> {
        if text.trim() == "none" {
            return Ok(Vec::new());
        }
        text.split(',')
            .map(|t| {
                Self::parse(t).ok_or_else(|| {
                    CliError::Config(format!(
                        "--pipeline: unknown pipeline `{}` (expected fields, radiation, energetics, evolve, verify or none)",
                        t.trim()
                    ))
                })
            })
            .collect()
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Vacuum,
    Dipole {
        amplitude: f64,
        omega: f64,
        sigma: f64,
        /// Emission window `[0, pulse]`; continuous emission when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pulse: Option<f64>,
    },
    Blob {
        charge: f64,
        sigma: f64,
    },
    /// Particle ensemble evolved by the dynamics section.
    Ensemble {
        /// Snapshot file, relative to the scenario file.
        file: PathBuf,
        smoothing: f64,
        /// `[charge, mass]` per species.
        species: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DirectionRule {
    Lebedev26,
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Direction grid for radiation slices and fluxes.
    pub directions: DirectionRule,
    pub direction_polar: usize,
    pub direction_azimuth: usize,
    pub field: FieldResolution,
    pub radiation: RadiationResolution,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            directions: DirectionRule::Lebedev26,
            direction_polar: 8,
            direction_azimuth: 16,
            field: FieldResolution::default(),
            radiation: RadiationResolution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldsSpec {
    /// Evaluation events `[t, x1, x2, x3]`.
    pub points: Vec<[f64; 4]>,
    /// Finite-difference step of the Maxwell spot checks.
    pub maxwell_step: f64,
}

impl Default for FieldsSpec {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            maxwell_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiationSpec {
    pub u_grid: Vec<f64>,
    /// Step of the centred differences for the second radiation path.
    pub du: f64,
}

impl Default for RadiationSpec {
    fn default() -> Self {
        Self {
            u_grid: Vec::new(),
            du: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatterKind {
    None,
    Static,
    Reservoir,
    Particles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergeticsSpec {
    pub u_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub r_ladder: Vec<f64>,
    /// Step of the `u`/`v` derivatives of the masses.
    pub du: f64,
    pub matter: MatterKind,
    /// Rest energy per unit profile weight for `static` matter.
    pub kappa: f64,
    /// Chebyshev nodes of the reservoir work tables.
    pub reservoir_nodes: usize,
    pub reservoir_safety: f64,
    /// Also tabulate the cone boundary term (and the cone identity when `v_grid == u_grid`).
    pub boundary_terms: bool,
    /// Extra flux samples `[u0, u1, n]` for the peak flux.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_scan: Option<(f64, f64, usize)>,
    pub cone: ConeResolution,
}

impl Default for EnergeticsSpec {
    fn default() -> Self {
        Self {
            u_grid: Vec::new(),
            v_grid: Vec::new(),
            r_ladder: Vec::new(),
            du: 1e-3,
            matter: MatterKind::None,
            kappa: 1.0,
            reservoir_nodes: 64,
            reservoir_safety: 1.5,
            boundary_terms: false,
            peak_scan: None,
            cone: ConeResolution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSpec {
    pub t_end: f64,
    /// Couple the particles to their own retarded field; free streaming otherwise.
    pub self_consistent: bool,
    pub slab: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step: f64,
    /// Trajectory log keeps every `stride`-th level.
    pub stride: usize,
    pub field: FieldResolution,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        let s = rvm_core::dynamics::SlabSchedule::default();
        Self {
            t_end: 1.0,
            self_consistent: true,
            slab: s.slab,
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
            step: s.step,
            stride: 1,
            field: FieldResolution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// `(M, N)` identities, relative to `max|M|` (resp. `max|M|²`).
    pub mn: f64,
    /// Radiation-field identities, centred-difference path.
    pub radiation_b: f64,
    /// Radiation-field identities, direct path.
    pub radiation_a: f64,
    /// `|N - k∧M| / max|M|`.
    pub planar: f64,
    /// `|dM∨/du + flux|` as a fraction of the peak flux.
    pub mass_loss: f64,
    /// `|dM∧/dv|` as a fraction of the peak flux.
    pub conservation: f64,
    /// `|m∨ - m∧ - 𝔮| / m∨`.
    pub identity: f64,
    /// Relative centred-difference Maxwell residuals.
    pub maxwell: f64,
    /// Relative spread of `M∨` and `M∧` for non-radiating sources.
    pub static_mass: f64,
    /// Peak flux (and squared `max|E^rad|`) at or below which a source counts as non-radiating.
    pub flux_floor: f64,
    /// Bound on `max|E^rad|` for non-radiating sources.
    pub static_radiation: f64,
    pub picard_iterations: usize,
    /// Allowed growth `𝒫(t) / 𝒫(0)` of the momentum support.
    pub momentum_growth: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mn: 1e-10,
            radiation_b: 1e-10,
            radiation_a: 1e-6,
            planar: 1e-10,
            mass_loss: 0.02,
            conservation: 0.02,
            identity: 1e-4,
            maxwell: 1e-5,
            static_mass: 1e-6,
            flux_floor: 1e-20,
            static_radiation: 1e-10,
            picard_iterations: 8,
            momentum_growth: 2.0,
        }
    }
}

impl Tolerances {
    /// Every residual tolerance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mn: self.mn * factor,
            radiation_b: self.radiation_b * factor,
            radiation_a: self.radiation_a * factor,
            planar: self.planar * factor,
            mass_loss: self.mass_loss * factor,
            conservation: self.conservation * factor,
            identity: self.identity * factor,
            maxwell: self.maxwell * factor,
            static_mass: self.static_mass * factor,
            static_radiation: self.static_radiation * factor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub pipelines: Vec<Pipeline>,
    pub source: SourceSpec,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub fields: FieldsSpec,
    #[serde(default)]
    pub radiation: RadiationSpec,
    #[serde(default)]
    pub energetics: EnergeticsSpec,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSpec,
}

fn bad(field: &str, message: impl fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {message}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn finite_list(field: &str, v: &[f64]) -> Result<(), CliError> {
    match v.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(bad(field, format!("non-finite entry {x}"))),
        None => Ok(()),
    }
}

fn non_empty(field: &str, v: &[f64], needed_by: Pipeline) -> Result<(), CliError> {
    if v.is_empty() {
        Err(bad(field, format!("must not be empty for the `{needed_by}` pipeline")))
    } else {
        Ok(())
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes to JSON")
    }

    /// Reads and validates a scenario file; relative paths inside it are
    /// resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut sc = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        if let SourceSpec::Ensemble { file, .. } = &mut sc.source {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn runs(&self, p: Pipeline) -> bool {
        self.pipelines.contains(&p)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.trim().is_empty() {
            return Err(bad("name", "must not be empty"));
        }
        match &self.source {
            SourceSpec::Vacuum => {}
            SourceSpec::Dipole {
                amplitude,
                omega,
                sigma,
                pulse,
            } => {
                if !amplitude.is_finite() {
                    return Err(bad("source.amplitude", "must be finite"));
                }
                positive("source.omega", *omega)?;
                positive("source.sigma", *sigma)?;
                if let Some(p) = pulse {
                    positive("source.pulse", *p)?;
                }
            }
            SourceSpec::Blob { charge, sigma } => {
                if !charge.is_finite() {
                    return Err(bad("source.charge", "must be finite"));
                }
                positive("source.sigma", *sigma)?;
            }
            SourceSpec::Ensemble {
                smoothing, species, ..
            } => {
                positive("source.smoothing", *smoothing)?;
                if species.is_empty() {
                    return Err(bad("source.species", "at least one species is required"));
                }
                for (i, [q, m]) in species.iter().enumerate() {
                    if !q.is_finite() {
                        return Err(bad(&format!("source.species[{i}]"), "charge must be finite"));
                    }
                    positive(&format!("source.species[{i}] mass"), *m)?;
                }
            }
        }
        self.quadrature.field.validate().map_err(|e| bad("quadrature.field", e))?;
        self.quadrature
            .radiation
            .validate()
            .map_err(|e| bad("quadrature.radiation", e))?;
        if self.quadrature.directions == DirectionRule::Product
            && (self.quadrature.direction_polar == 0 || self.quadrature.direction_azimuth == 0)
        {
            return Err(bad("quadrature.direction_polar", "product grids need positive node counts"));
        }

        for (i, p) in self.fields.points.iter().enumerate() {
            finite_list(&format!("fields.points[{i}]"), p)?;
        }
        positive("fields.maxwell_step", self.fields.maxwell_step)?;

        finite_list("radiation.u_grid", &self.radiation.u_grid)?;
        positive("radiation.du", self.radiation.du)?;
        if self.runs(Pipeline::Radiation) {
            non_empty("radiation.u_grid", &self.radiation.u_grid, Pipeline::Radiation)?;
        }

        let e = &self.energetics;
        finite_list("energetics.u_grid", &e.u_grid)?;
        finite_list("energetics.v_grid", &e.v_grid)?;
        finite_list("energetics.r_ladder", &e.r_ladder)?;
        if e.r_ladder.iter().any(|r| !(*r > 0.0)) {
            return Err(bad("energetics.r_ladder", "radii must be positive"));
        }
        if e.r_ladder.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("energetics.r_ladder", "must be strictly increasing"));
        }
        positive("energetics.du", e.du)?;
        positive("energetics.kappa", e.kappa)?;
        positive("energetics.reservoir_safety", e.reservoir_safety)?;
        if e.reservoir_nodes < 2 {
            return Err(bad("energetics.reservoir_nodes", "at least 2 nodes are required"));
        }
        if let Some((a, b, n)) = e.peak_scan {
            if !(b > a) || n < 1 {
                return Err(bad("energetics.peak_scan", "needs u0 < u1 and n >= 1"));
            }
        }
        e.cone.validate().map_err(|err| bad("energetics.cone", err))?;
        if self.runs(Pipeline::Energetics) {
            non_empty("energetics.u_grid", &e.u_grid, Pipeline::Energetics)?;
            non_empty("energetics.v_grid", &e.v_grid, Pipeline::Energetics)?;
            non_empty("energetics.r_ladder", &e.r_ladder, Pipeline::Energetics)?;
        }
        match (e.matter, &self.source) {
            (MatterKind::Static, SourceSpec::Blob { .. }) => {}
            (MatterKind::Static, _) => {
                return Err(bad("energetics.matter", "`static` matter needs a `blob` source"));
            }
            (MatterKind::Reservoir, SourceSpec::Dipole { pulse: Some(_), .. }) => {}
            (MatterKind::Reservoir, _) => {
                return Err(bad(
                    "energetics.matter",
                    "`reservoir` matter needs a `dipole` source with a finite pulse",
                ));
            }
            (MatterKind::Particles, SourceSpec::Ensemble { .. }) => {}
            (MatterKind::Particles, _) => {
                return Err(bad("energetics.matter", "`particles` matter needs an `ensemble` source"));
            }
            (MatterKind::None, _) => {}
        }

        let d = &self.dynamics;
        if !(d.t_end >= 0.0) || !d.t_end.is_finite() {
            return Err(bad("dynamics.t_end", format!("must be non-negative, got {}", d.t_end)));
        }
        positive("dynamics.slab", d.slab)?;
        positive("dynamics.tolerance", d.tolerance)?;
        positive("dynamics.step", d.step)?;
        if d.max_iterations == 0 {
            return Err(bad("dynamics.max_iterations", "must be at least 1"));
        }
        if d.stride == 0 {
            return Err(bad("dynamics.stride", "must be at least 1"));
        }
        d.field.validate().map_err(|err| bad("dynamics.field", err))?;
        if self.runs(Pipeline::Evolve) && !matches!(self.source, SourceSpec::Ensemble { .. }) {
            return Err(bad("pipelines", "`evolve` needs an `ensemble` source"));
        }

        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.mn", t.mn),
            ("tolerances.radiation_b", t.radiation_b),
            ("tolerances.radiation_a", t.radiation_a),
            ("tolerances.planar", t.planar),
            ("tolerances.mass_loss", t.mass_loss),
            ("tolerances.conservation", t.conservation),
            ("tolerances.identity", t.identity),
            ("tolerances.maxwell", t.maxwell),
            ("tolerances.static_mass", t.static_mass),
            ("tolerances.flux_floor", t.flux_floor),
            ("tolerances.static_radiation", t.static_radiation),
            ("tolerances.momentum_growth", t.momentum_growth),
        ] {
            positive(name, v)?;
        }
        if t.picard_iterations == 0 {
            return Err(bad("tolerances.picard_iterations", "must be at least 1"));
        }
        Ok(())
    }
}
