//! Energy on light cones.
//!
//! The local energy and momentum densities are
//! `e = (|E|² + |B|²)/8π + e_m` and `𝔭 = E∧B/4π + 𝔭_m`, with a matter part
//! supplied by a [`MatterModel`]. The cone integrals
//!
//! - `m∨(r,u) = ∫_{|x|≤r} (e - 𝔭·k)(u + |x|, x) dx` (future cone of `(u, 0)`),
//! - `m∧(r,v) = ∫_{|x|≤r} (e + 𝔭·k)(v - |x|, x) dx` (past cone of `(v, 0)`),
//! - `𝔮(r,u) = -∫_{S_r} ∫_u^{u+2r} 𝔭·k (v - r, x) dv dS`
//!
//! are evaluated with nested radial shells, and their `r → ∞` limits by
//! Richardson extrapolation in `1/r`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::extrapolate::{extrapolate_ladder, LadderExtrapolation};
use crate::fields::{eval_field, FieldQuadrature, FieldValue, Propagation};
use crate::geometry::{omega_domain, DirectionGrid, GaussLegendre};
use crate::radiation::{compute_radiation, RadiationQuadrature, RadiationSlice};
use crate::sources::{GaussianProfile, ParticleHistory, SourceHistory};
use crate::{Error, Result, Vec3};

/// Energy and momentum density at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EnergyDensitySample {
    pub e: f64,
    pub p: Vec3,
}

impl EnergyDensitySample {
    /// `e - 𝔭·k`, non-negative for every unit `k`.
    pub fn outgoing(&self, k: &Vec3) -> f64 {
        self.e - self.p.dot(k)
    }

    /// `e + 𝔭·k`.
    pub fn incoming(&self, k: &Vec3) -> f64 {
        self.e + self.p.dot(k)
    }

    /// `e - |𝔭|`.
    pub fn dominance(&self) -> f64 {
        self.e - self.p.norm()
    }

    pub fn from_field(f: &FieldValue) -> Self {
        Self {
            e: f.energy_density(),
            p: f.e.cross(&f.b) / (4.0 * PI),
        }
    }
}

/// Matter energy and momentum densities.
pub trait MatterModel: Send + Sync {
    fn density(&self, t: f64, x: &Vec3) -> Result<(f64, Vec3)>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoMatter;

impl MatterModel for NoMatter {
    fn density(&self, _t: f64, _x: &Vec3) -> Result<(f64, Vec3)> {
        Ok((0.0, Vec3::zeros()))
    }
    fn describe(&self) -> String {
        "none".into()
    }
}

/// Matter at rest with energy density `κ g(x)`.
#[derive(Debug, Clone, Copy)]
pub struct StaticMatter {
    pub profile: GaussianProfile,
    pub kappa: f64,
}

impl MatterModel for StaticMatter {
    fn density(&self, _t: f64, x: &Vec3) -> Result<(f64, Vec3)> {
        Ok((self.kappa * self.profile.value(x), Vec3::zeros()))
    }
    fn describe(&self) -> String {
        format!("static rest energy {} on a Gaussian profile", crate::fmt_f64(self.kappa))
    }
}

/// Mollified particle energy and momentum.
pub struct ParticleMatter(pub Arc<ParticleHistory>);

impl MatterModel for ParticleMatter {
    fn density(&self, t: f64, x: &Vec3) -> Result<(f64, Vec3)> {
        self.0.matter_density(t, x)
    }
    fn describe(&self) -> String {
        format!("{} mollified macro-particles", self.0.particle_count())
    }
}

/// Chebyshev antiderivative table on `[a, b]`.
#[derive(Debug, Clone)]
struct ChebIntegral {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl ChebIntegral {
    /// Antiderivative (vanishing at `a`) of the interpolant of `f` at `n` Chebyshev points.
    fn from_samples(a: f64, b: f64, values: &[f64]) -> Self {
        let n = values.len();
        let mut c = vec![0.0; n + 2];
        for (k, ck) in c.iter_mut().enumerate().take(n) {
            let mut s = 0.0;
            for (j, v) in values.iter().enumerate() {
                s += v * (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
            }
            *ck = 2.0 * s / n as f64;
        }
        let half = 0.5 * (b - a);
        let mut big = vec![0.0; n + 1];
        for k in 1..=n {
            big[k] = half * (c[k - 1] - c[k + 1]) / (2.0 * k as f64);
        }
        // F(-1) = 0
        let mut at_minus_one = 0.0;
        for (k, v) in big.iter().enumerate().skip(1) {
            at_minus_one += if k % 2 == 0 { *v } else { -*v };
        }
        big[0] = -2.0 * at_minus_one;
        Self { a, b, coeffs: big }
    }

    fn nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let x = (PI * (j as f64 + 0.5) / n as f64).cos();
                0.5 * (a + b) + 0.5 * (b - a) * x
            })
            .collect()
    }

    fn eval(&self, t: f64) -> f64 {
        let tc = t.clamp(self.a, self.b);
        let x = (2.0 * tc - self.a - self.b) / (self.b - self.a);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &ck in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + ck;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + 0.5 * self.coeffs[0]
    }
}

/// Matter model for prescribed analytic sources: a reservoir at rest that
/// exchanges energy with the field through the work `j·E`,
///
/// `e_m(t,x) = κ g(x) + ∫_{t0}^{t} (j·E)(s,x) ds`, `𝔭_m = 0`.
///
/// Together with the field densities this satisfies `∂_t e + ∇·𝔭 = 0`. The
/// source current must vanish outside the activity window `[t0, t1]` and
/// outside the support of `g`; `κ` is chosen so that `e_m ≥ 0`.
pub struct DriverReservoir {
    src: Arc<dyn SourceHistory>,
    weight: GaussianProfile,
    kappa: f64,
    window: (f64, f64),
    nodes: usize,
    quadrature: Arc<FieldQuadrature>,
    propagation: Propagation,
    tables: Mutex<HashMap<[u64; 3], Arc<ChebIntegral>>>,
}

impl DriverReservoir {
    pub fn new(
        src: Arc<dyn SourceHistory>,
        weight: GaussianProfile,
        window: (f64, f64),
        nodes: usize,
        quadrature: Arc<FieldQuadrature>,
        propagation: Propagation,
    ) -> Result<Self> {
        if !(window.1 > window.0) || !window.0.is_finite() || !window.1.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "reservoir activity window must be a finite interval, got {window:?}"
            )));
        }
        if nodes < 4 {
            return Err(Error::InvalidParameter(
                "reservoir needs at least 4 Chebyshev nodes".into(),
            ));
        }
        Ok(Self {
            src,
            weight,
            kappa: 0.0,
            window,
            nodes,
            quadrature,
            propagation,
            tables: Mutex::new(HashMap::new()),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn set_kappa(&mut self, kappa: f64) {
        self.kappa = kappa;
    }

    /// Sets `κ = safety · max(-W/g)` over the probe points and a dense time
    /// sample, which makes `e_m ≥ 0` there. Returns the chosen `κ`.
    pub fn calibrate(&mut self, probes: &[Vec3], safety: f64) -> Result<f64> {
        let times = ChebIntegral::nodes(self.window.0, self.window.1, 4 * self.nodes);
        let ratios: Vec<f64> = probes
            .par_iter()
            .map(|x| {
                let g = self.weight.value(x);
                if g <= 0.0 {
                    return Ok(0.0);
                }
                let table = self.table(x)?;
                Ok(times
                    .iter()
                    .chain(std::iter::once(&self.window.1))
                    .fold(0.0f64, |m, &t| m.max(-table.eval(t) / g)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let worst = ratios.iter().fold(0.0f64, |a, &b| a.max(b));
        self.kappa = safety * worst;
        Ok(self.kappa)
    }

    fn key(x: &Vec3) -> [u64; 3] {
        [x.x.to_bits(), x.y.to_bits(), x.z.to_bits()]
    }

    fn table(&self, x: &Vec3) -> Result<Arc<ChebIntegral>> {
        let key = Self::key(x);
        if let Some(t) = self.tables.lock().unwrap().get(&key) {
            return Ok(t.clone());
        }
        let (a, b) = self.window;
        let times = ChebIntegral::nodes(a, b, self.nodes);
        let mut power = Vec::with_capacity(times.len());
        for &t in &times {
            let j = self.src.sample(t, x)?.j;
            let p = if j == Vec3::zeros() {
                0.0
            } else {
                j.dot(&eval_field(self.src.as_ref(), t, x, &self.quadrature, self.propagation)?.e)
            };
            power.push(p);
        }
        let table = Arc::new(ChebIntegral::from_samples(a, b, &power));
        self.tables.lock().unwrap().insert(key, table.clone());
        Ok(table)
    }

    /// Work done on the reservoir up to time `t`.
    pub fn work(&self, t: f64, x: &Vec3) -> Result<f64> {
        if self.weight.value(x) <= 0.0 || t <= self.window.0 {
            return Ok(0.0);
        }
        Ok(self.table(x)?.eval(t))
    }
}

impl MatterModel for DriverReservoir {
    fn density(&self, t: f64, x: &Vec3) -> Result<(f64, Vec3)> {
        let g = self.weight.value(x);
        if g <= 0.0 {
            return Ok((0.0, Vec3::zeros()));
        }
        Ok((self.kappa * g + self.work(t, x)?, Vec3::zeros()))
    }
    fn describe(&self) -> String {
        format!(
            "driver reservoir (kappa {}, activity window [{}, {}])",
            crate::fmt_f64(self.kappa),
            crate::fmt_f64(self.window.0),
            crate::fmt_f64(self.window.1)
        )
    }
}

/// Source, field rule and matter model of an energetics run.
#[derive(Clone)]
pub struct EnergyModel {
    pub src: Arc<dyn SourceHistory>,
    pub quadrature: Arc<FieldQuadrature>,
    pub propagation: Propagation,
    pub matter: Arc<dyn MatterModel>,
}

impl EnergyModel {
    pub fn retarded(
        src: Arc<dyn SourceHistory>,
        quadrature: Arc<FieldQuadrature>,
        matter: Arc<dyn MatterModel>,
    ) -> Self {
        Self {
            src,
            quadrature,
            propagation: Propagation::Retarded,
            matter,
        }
    }

    pub fn field(&self, t: f64, x: &Vec3) -> Result<FieldValue> {
        eval_field(self.src.as_ref(), t, x, &self.quadrature, self.propagation)
    }

    pub fn density(&self, t: f64, x: &Vec3) -> Result<EnergyDensitySample> {
        let f = self.field(t, x)?;
        let (em, pm) = self.matter.density(t, x)?;
        let mut s = EnergyDensitySample::from_field(&f);
        s.e += em;
        s.p += pm;
        Ok(s)
    }
}

/// `(e, 𝔭)` at `(t, x)`.
pub fn energy_momentum(model: &EnergyModel, t: f64, x: &Vec3) -> Result<EnergyDensitySample> {
    model.density(t, x)
}

/// Node counts for cone and sphere integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeResolution {
    /// Radial nodes on the core ball that contains the matter.
    pub core_radial: usize,
    /// Radial nodes per doubling of the radius outside the core.
    pub per_octave: usize,
    /// Largest allowed spacing between radial or time nodes.
    pub max_spacing: f64,
    pub polar: usize,
    pub azimuth: usize,
    /// Minimum number of time nodes for sphere-time integrals.
    pub time_nodes: usize,
}

impl Default for ConeResolution {
    fn default() -> Self {
        Self {
            core_radial: 24,
            per_octave: 12,
            max_spacing: 0.5,
            polar: 16,
            azimuth: 16,
            time_nodes: 16,
        }
    }
}

impl ConeResolution {
    pub fn validate(&self) -> Result<()> {
        if self.core_radial == 0
            || self.per_octave == 0
            || self.polar == 0
            || self.azimuth == 0
            || self.time_nodes == 0
            || !(self.max_spacing > 0.0)
        {
            return Err(Error::InvalidParameter(
                "cone resolution counts and spacing must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Every count multiplied by `factor` and the spacing divided by it.
    pub fn refined(&self, factor: f64) -> Self {
        let f = |n: usize| ((n as f64 * factor).ceil() as usize).max(1);
        Self {
            core_radial: f(self.core_radial),
            per_octave: f(self.per_octave),
            max_spacing: self.max_spacing / factor,
            polar: f(self.polar),
            azimuth: if self.azimuth == 1 { 1 } else { f(self.azimuth) },
            time_nodes: f(self.time_nodes),
        }
    }

    pub fn directions(&self) -> DirectionGrid {
        DirectionGrid::product(self.polar, self.azimuth)
    }

    fn segment_nodes(&self, a: f64, b: f64) -> usize {
        let by_octave = if a > 0.0 {
            (self.per_octave as f64 * (b / a).log2()).ceil() as usize
        } else {
            self.core_radial
        };
        let by_spacing = ((b - a) / self.max_spacing).ceil() as usize;
        by_octave.max(by_spacing).max(2)
    }

    /// Radial nodes and weights (without the `r²` factor) on `[0, radius]`,
    /// split at `core`, at doublings of `core`, and at every `breaks` entry.
    fn radial_segments(&self, core: f64, breaks: &[f64]) -> Vec<(f64, f64, Vec<(f64, f64)>)> {
        let top = breaks.iter().fold(0.0f64, |m, &b| m.max(b));
        let mut points = vec![0.0];
        let mut c = core.min(top);
        while c < top {
            points.push(c);
            c *= 2.0;
        }
        points.extend(breaks.iter().copied());
        points.push(top);
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * top.max(1.0));
        points
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let n = if a == 0.0 && b <= core * (1.0 + 1e-12) {
                    self.core_radial.max(((b - a) / self.max_spacing).ceil() as usize)
                } else {
                    self.segment_nodes(a.max(f64::MIN_POSITIVE), b)
                };
                let gl = GaussLegendre::new(n);
                (a, b, gl.mapped(a, b).collect())
            })
            .collect()
    }

    /// Core-ball nodes used by the cone integrals for a given core radius.
    pub fn core_nodes(&self, core: f64) -> Vec<Vec3> {
        let dirs = self.directions();
        let n = self.core_radial.max((core / self.max_spacing).ceil() as usize);
        let gl = GaussLegendre::new(n);
        gl.mapped(0.0, core)
            .flat_map(|(r, _)| dirs.nodes().iter().map(move |k| k * r).collect::<Vec<_>>())
            .collect()
    }
}

/// Which null cone through the origin is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeKind {
    /// Future cone of `(u, 0)`: points `(u + |x|, x)`, integrand `e - 𝔭·k`.
    Future,
    /// Past cone of `(v, 0)`: points `(v - |x|, x)`, integrand `e + 𝔭·k`.
    Past,
}

fn core_radius(model: &EnergyModel, time: f64) -> Result<f64> {
    let env = model.src.envelope();
    omega_domain(time, env.radius, env.speed)
}

/// Cone integrals at every radius of `radii` (any order), sharing nodes.
pub fn cone_mass_profile(
    model: &EnergyModel,
    kind: ConeKind,
    time: f64,
    radii: &[f64],
    res: &ConeResolution,
) -> Result<Vec<f64>> {
    res.validate()?;
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidParameter("cone radii must be positive".into()));
    }
    let core = core_radius(model, time)?;
    let segments = res.radial_segments(core, radii);
    let dirs = res.directions();
    // Flatten (segment, radial node, direction) for a parallel map.
    let mut cells = Vec::new();
    for (si, (_, _, nodes)) in segments.iter().enumerate() {
        for &(r, wr) in nodes {
            for (k, wk) in dirs.iter() {
                cells.push((si, r, *k, wr * r * r * wk));
            }
        }
    }
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(_, r, k, w)| {
            let x = k * r;
            let (t, sign) = match kind {
                ConeKind::Future => (time + r, -1.0),
                ConeKind::Past => (time - r, 1.0),
            };
            let d = model.density(t, &x)?;
            Ok(w * (d.e + sign * d.p.dot(&k)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut per_segment = vec![0.0; segments.len()];
    for (cell, v) in cells.iter().zip(&values) {
        per_segment[cell.0] += v;
    }
    Ok(radii
        .iter()
        .map(|&r| {
            segments
                .iter()
                .zip(&per_segment)
                .filter(|((_, b, _), _)| *b <= r * (1.0 + 1e-12))
                .map(|(_, v)| v)
                .sum()
        })
        .collect())
}

pub fn cone_mass_retarded(model: &EnergyModel, r: f64, u: f64, res: &ConeResolution) -> Result<f64> {
    Ok(cone_mass_profile(model, ConeKind::Future, u, &[r], res)?[0])
}

pub fn cone_mass_advanced(model: &EnergyModel, r: f64, v: f64, res: &ConeResolution) -> Result<f64> {
    Ok(cone_mass_profile(model, ConeKind::Past, v, &[r], res)?[0])
}

fn time_rule(a: f64, b: f64, res: &ConeResolution) -> Vec<(f64, f64)> {
    let n = res
        .time_nodes
        .max(((b - a) / res.max_spacing).ceil() as usize);
    GaussLegendre::new(n).mapped(a, b).collect()
}

/// Integral of `g(t, r k)` over `S_r` and a time interval; `t(τ)` maps the
/// integration variable to physical time.
fn sphere_time_integral(
    model: &EnergyModel,
    r: f64,
    span: (f64, f64),
    time_of: impl Fn(f64) -> f64 + Sync,
    integrand: impl Fn(&EnergyDensitySample, &Vec3) -> f64 + Sync,
    res: &ConeResolution,
) -> Result<f64> {
    let times = time_rule(span.0, span.1, res);
    let dirs = res.directions();
    let mut cells = Vec::with_capacity(times.len() * dirs.len());
    for &(tau, wt) in &times {
        for (k, wk) in dirs.iter() {
            cells.push((tau, *k, wt * wk * r * r));
        }
    }
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(tau, k, w)| {
            let d = model.density(time_of(tau), &(k * r))?;
            Ok(w * integrand(&d, &k))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum())
}

/// `𝔮(r,u) = -∫_{S_r} ∫_u^{u+2r} 𝔭·k (v - r, x) dv dS`.
pub fn boundary_term(model: &EnergyModel, r: f64, u: f64, res: &ConeResolution) -> Result<f64> {
    let v = sphere_time_integral(model, r, (u, u + 2.0 * r), |v| v - r, |d, k| d.p.dot(k), res)?;
    Ok(-v)
}

/// Ladder and extrapolated limit of a cone mass.
#[derive(Debug, Clone, Serialize)]
pub struct MassReport {
    pub time: f64,
    pub kind: ConeKind,
    pub ladder: LadderExtrapolation,
    /// Every ladder value is non-negative and so is the limit (up to `1e-12` relative).
    pub non_negative: bool,
    /// Ladder values are non-decreasing in `r`.
    pub monotone: bool,
}

impl MassReport {
    pub fn limit(&self) -> f64 {
        self.ladder.limit
    }
}

fn mass_report(
    model: &EnergyModel,
    kind: ConeKind,
    time: f64,
    ladder: &[f64],
    res: &ConeResolution,
) -> Result<MassReport> {
    let values = cone_mass_profile(model, kind, time, ladder, res)?;
    let ext = extrapolate_ladder(ladder, &values)?;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slack = 1e-12 * scale;
    Ok(MassReport {
        time,
        kind,
        non_negative: values.iter().all(|v| *v >= -slack) && ext.limit >= -slack,
        monotone: values.windows(2).all(|w| w[1] >= w[0] - slack),
        ladder: ext,
    })
}

/// `M∨(u) = lim m∨(r,u)`.
pub fn bondi_mass(model: &EnergyModel, u: f64, ladder: &[f64], res: &ConeResolution) -> Result<MassReport> {
    mass_report(model, ConeKind::Future, u, ladder, res)
}

/// `M∧(v) = lim m∧(r,v)`.
pub fn advanced_mass(model: &EnergyModel, v: f64, ladder: &[f64], res: &ConeResolution) -> Result<MassReport> {
    mass_report(model, ConeKind::Past, v, ladder, res)
}

/// `(1/4π) Σ_k w_k |E^rad(u,k)|²` (path A).
pub fn outgoing_flux(slice: &RadiationSlice) -> f64 {
    slice
        .records
        .iter()
        .map(|r| r.weight * r.e_rad.norm_squared())
        .sum::<f64>()
        / (4.0 * PI)
}

/// Centred-difference balance of a cone mass.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub time: f64,
    pub step: f64,
    pub mass_minus: f64,
    pub mass_plus: f64,
    pub derivative: f64,
    /// Radiated power at `time` (zero for the advanced balance).
    pub flux: f64,
    /// `derivative + flux`.
    pub residual: f64,
    pub converged: bool,
}

impl BalanceReport {
    /// `|residual| / max(scale, floor)`.
    pub fn relative_to(&self, scale: f64, floor: f64) -> f64 {
        self.residual.abs() / scale.max(floor)
    }
}

/// Radiation inputs of the mass-loss balance.
#[derive(Debug, Clone)]
pub struct FluxSettings {
    pub grid: DirectionGrid,
    pub quadrature: RadiationQuadrature,
    pub du: f64,
}

/// `dM∨/du + flux(u)`, which vanishes for an isolated retarded solution.
pub fn mass_loss_residual(
    model: &EnergyModel,
    u: f64,
    du: f64,
    ladder: &[f64],
    res: &ConeResolution,
    flux: &FluxSettings,
) -> Result<BalanceReport> {
    if !(du > 0.0) {
        return Err(Error::InvalidParameter(format!("du must be positive, got {du}")));
    }
    let plus = bondi_mass(model, u + du, ladder, res)?;
    let minus = bondi_mass(model, u - du, ladder, res)?;
    let slice = compute_radiation(model.src.as_ref(), u, &flux.grid, &flux.quadrature, flux.du)?;
    let f = outgoing_flux(&slice);
    let derivative = (plus.limit() - minus.limit()) / (2.0 * du);
    Ok(BalanceReport {
        time: u,
        step: du,
        mass_minus: minus.limit(),
        mass_plus: plus.limit(),
        derivative,
        flux: f,
        residual: derivative + f,
        converged: plus.ladder.converged && minus.ladder.converged,
    })
}

/// `dM∧/dv`, which vanishes in the absence of incoming radiation.
pub fn advanced_conservation_residual(
    model: &EnergyModel,
    v: f64,
    dv: f64,
    ladder: &[f64],
    res: &ConeResolution,
) -> Result<BalanceReport> {
    if !(dv > 0.0) {
        return Err(Error::InvalidParameter(format!("dv must be positive, got {dv}")));
    }
    let plus = advanced_mass(model, v + dv, ladder, res)?;
    let minus = advanced_mass(model, v - dv, ladder, res)?;
    let derivative = (plus.limit() - minus.limit()) / (2.0 * dv);
    Ok(BalanceReport {
        time: v,
        step: dv,
        mass_minus: minus.limit(),
        mass_plus: plus.limit(),
        derivative,
        flux: 0.0,
        residual: derivative,
        converged: plus.ladder.converged && minus.ladder.converged,
    })
}

/// Energies carried through large spheres by outgoing and incoming waves.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyInOut {
    pub interval: (f64, f64),
    /// `lim ∫_{u1}^{u2} ∫_{S_r} S·k (u + r, x) dS du`.
    pub e_out: f64,
    /// `lim ∫_{v1}^{v2} ∫_{S_r} -S·k (v - r, x) dS dv`.
    pub e_in: f64,
    pub out_ladder: LadderExtrapolation,
    pub in_ladder: LadderExtrapolation,
}

pub fn energy_in_out(
    model: &EnergyModel,
    interval: (f64, f64),
    ladder: &[f64],
    res: &ConeResolution,
) -> Result<EnergyInOut> {
    let field_only = |d: &EnergyDensitySample, k: &Vec3| d.p.dot(k);
    let mut outs = Vec::with_capacity(ladder.len());
    let mut ins = Vec::with_capacity(ladder.len());
    for &r in ladder {
        outs.push(sphere_time_integral(model, r, interval, |u| u + r, field_only, res)?);
        ins.push(-sphere_time_integral(model, r, interval, |v| v - r, field_only, res)?);
    }
    let out_ladder = extrapolate_ladder(ladder, &outs)?;
    let in_ladder = extrapolate_ladder(ladder, &ins)?;
    Ok(EnergyInOut {
        interval,
        e_out: out_ladder.limit,
        e_in: in_ladder.limit,
        out_ladder,
        in_ladder,
    })
}

/// `∫_{u1}^{u2} flux(u) du` from radiation slices at Gauss-Legendre nodes.
pub fn radiated_energy(
    src: &dyn SourceHistory,
    interval: (f64, f64),
    nodes: usize,
    flux: &FluxSettings,
) -> Result<f64> {
    let gl = GaussLegendre::new(nodes.max(1));
    let mut total = 0.0;
    for (u, w) in gl.mapped(interval.0, interval.1) {
        let slice = compute_radiation(src, u, &flux.grid, &flux.quadrature, flux.du)?;
        total += w * outgoing_flux(&slice);
    }
    Ok(total)
}

/// Pointwise replay of the cone identity
/// `∂_u (e - 𝔭·k)(u + |x|, x) = -∂_x·[𝔭(u + |x|, x)]` by centred differences.
/// Returns `(left, right)`.
pub fn cone_identity_audit(model: &EnergyModel, u: f64, x: &Vec3, h: f64) -> Result<(f64, f64)> {
    let r = x.norm();
    let k = x / r;
    let g = |uu: f64| -> Result<f64> { Ok(model.density(uu + r, x)?.outgoing(&k)) };
    let left = (g(u + h)? - g(u - h)?) / (2.0 * h);
    let mut div = 0.0;
    for axis in 0..3 {
        let mut e = Vec3::zeros();
        e[axis] = h;
        let xp = x + e;
        let xm = x - e;
        let pp = model.density(u + xp.norm(), &xp)?.p[axis];
        let pm = model.density(u + xm.norm(), &xm)?.p[axis];
        div += (pp - pm) / (2.0 * h);
    }
    Ok((left, -div))
}

/// `(∂_t e + ∇·𝔭, |∂_t e| + |∇·𝔭|)` by centred differences.
pub fn local_conservation_residual(model: &EnergyModel, t: f64, x: &Vec3, h: f64) -> Result<(f64, f64)> {
    let dt = (model.density(t + h, x)?.e - model.density(t - h, x)?.e) / (2.0 * h);
    let mut div = 0.0;
    for axis in 0..3 {
        let mut e = Vec3::zeros();
        e[axis] = h;
        div += (model.density(t, &(x + e))?.p[axis] - model.density(t, &(x - e))?.p[axis]) / (2.0 * h);
    }
    Ok((dt + div, dt.abs() + div.abs()))
}

/// Tables and limits assembled by an energetics run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EnergyLedger {
    #[serde(rename = "rvm-ledger")]
    pub schema: u32,
    pub matter: String,
    pub u_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub r_ladder: Vec<f64>,
    /// `m∨[u][r]`.
    pub m_ret: Vec<Vec<f64>>,
    /// `m∧[v][r]`.
    pub m_adv: Vec<Vec<f64>>,
    /// `𝔮[u][r]`.
    pub q: Vec<Vec<f64>>,
    /// `m∨[u][r] - m∧[u][r] - 𝔮[u][r]` (only when `v_grid == u_grid`).
    pub identity_defect: Vec<Vec<f64>>,
    pub bondi: Vec<f64>,
    pub bondi_converged: Vec<bool>,
    pub advanced: Vec<f64>,
    pub flux: Vec<f64>,
    pub loss_residual: Vec<f64>,
    pub conservation_residual: Vec<f64>,
}

/// Inputs of [`assemble_ledger`].
#[derive(Debug, Clone)]
pub struct LedgerPlan {
    pub u_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub r_ladder: Vec<f64>,
    pub du: f64,
    pub cone: ConeResolution,
    pub flux: FluxSettings,
    pub boundary_terms: bool,
}

pub fn assemble_ledger(model: &EnergyModel, plan: &LedgerPlan) -> Result<EnergyLedger> {
    let ladder = &plan.r_ladder;
    if ladder.is_empty() || ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "r-ladder must be non-empty and strictly increasing".into(),
        ));
    }
    let mut ledger = EnergyLedger {
        schema: 1,
        matter: model.matter.describe(),
        u_grid: plan.u_grid.clone(),
        v_grid: plan.v_grid.clone(),
        r_ladder: ladder.clone(),
        ..Default::default()
    };
    for &u in &plan.u_grid {
        let rep = bondi_mass(model, u, ladder, &plan.cone)?;
        ledger.m_ret.push(rep.ladder.values.clone());
        ledger.bondi.push(rep.limit());
        ledger.bondi_converged.push(rep.ladder.converged);
        let bal = mass_loss_residual(model, u, plan.du, ladder, &plan.cone, &plan.flux)?;
        ledger.flux.push(bal.flux);
        ledger.loss_residual.push(bal.residual);
        if plan.boundary_terms {
            let row = ladder
                .iter()
                .map(|&r| boundary_term(model, r, u, &plan.cone))
                .collect::<Result<Vec<f64>>>()?;
            ledger.q.push(row);
        }
    }
    for &v in &plan.v_grid {
        let rep = advanced_mass(model, v, ladder, &plan.cone)?;
        ledger.m_adv.push(rep.ladder.values.clone());
        ledger.advanced.push(rep.limit());
        let bal = advanced_conservation_residual(model, v, plan.du, ladder, &plan.cone)?;
        ledger.conservation_residual.push(bal.residual);
    }
    if plan.boundary_terms && plan.v_grid == plan.u_grid {
        ledger.identity_defect = ledger
            .m_ret
            .iter()
            .zip(&ledger.m_adv)
            .zip(&ledger.q)
            .map(|((a, b), c)| a.iter().zip(b).zip(c).map(|((a, b), c)| a - b - c).collect())
            .collect();
    }
    Ok(ledger)
}
