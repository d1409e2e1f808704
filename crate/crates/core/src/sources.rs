//! Charge and current densities with their first space-time derivatives.
//!
//! A [`SourceHistory`] is a sum of compactly supported *lumps*. Each lump has a
//! centre worldline, a support radius around that centre and a bound on the
//! centre's speed; the field and radiation quadratures use this geometry to
//! place their nodes. Analytic sources consist of a single static lump,
//! particle histories have one lump per macro-particle.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::ops::AddAssign;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Densities and derivatives at one space-time point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SourceSample {
    pub rho: f64,
    pub j: Vec3,
    pub grad_rho: Vec3,
    pub dt_rho: f64,
    pub dt_j: Vec3,
    pub div_j: f64,
    pub curl_j: Vec3,
}

impl AddAssign for SourceSample {
    fn add_assign(&mut self, o: Self) {
        self.rho += o.rho;
        self.j += o.j;
        self.grad_rho += o.grad_rho;
        self.dt_rho += o.dt_rho;
        self.dt_j += o.dt_j;
        self.div_j += o.div_j;
        self.curl_j += o.curl_j;
    }
}

/// Support bound `|x| < R + a|t|` with `0 ≤ a < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportEnvelope {
    pub radius: f64,
    pub speed: f64,
}

impl SupportEnvelope {
    pub fn new(radius: f64, speed: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "envelope radius must be positive, got {radius}"
            )));
        }
        if !(0.0..1.0).contains(&speed) {
            return Err(Error::InvalidParameter(format!(
                "envelope speed must lie in [0, 1), got {speed}"
            )));
        }
        Ok(Self { radius, speed })
    }

    pub fn radius_at(&self, t: f64) -> f64 {
        self.radius + self.speed * t.abs()
    }
}

/// Time interval on which a source may be queried. Either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub const ALL: TimeWindow = TimeWindow {
        start: f64::NEG_INFINITY,
        end: f64::INFINITY,
    };

    pub fn until(end: f64) -> Self {
        Self {
            start: f64::NEG_INFINITY,
            end,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutsideWindow {
                t,
                start: self.start,
                end: self.end,
            })
        }
    }

    pub fn intersect(&self, other: &TimeWindow) -> TimeWindow {
        TimeWindow {
            start: self.start.max(other.start),
            end: self.end.min(other.end),
        }
    }
}

/// Queryable space-time source.
pub trait SourceHistory: Send + Sync {
    fn envelope(&self) -> SupportEnvelope;

    fn window(&self) -> TimeWindow;

    fn lump_count(&self) -> usize;

    /// Support radius of a lump around its centre.
    fn lump_radius(&self, lump: usize) -> f64;

    /// Bound on the speed of the lump centre (`< 1`).
    fn lump_speed(&self, lump: usize) -> f64;

    /// Centre position and velocity of a lump at time `t`.
    fn lump_motion(&self, lump: usize, t: f64) -> Result<(Vec3, Vec3)>;

    fn lump_center(&self, lump: usize, t: f64) -> Result<Vec3> {
        Ok(self.lump_motion(lump, t)?.0)
    }

    /// Contribution of one lump at `(t, y)`.
    fn lump_sample(&self, lump: usize, t: f64, y: &Vec3) -> Result<SourceSample>;

    /// Total densities at `(t, y)`.
    fn sample(&self, t: f64, y: &Vec3) -> Result<SourceSample> {
        let mut acc = SourceSample::default();
        for lump in 0..self.lump_count() {
            acc += self.lump_sample(lump, t, y)?;
        }
        Ok(acc)
    }
}

impl<S: SourceHistory + ?Sized> SourceHistory for Arc<S> {
    fn envelope(&self) -> SupportEnvelope {
        (**self).envelope()
    }
    fn window(&self) -> TimeWindow {
        (**self).window()
    }
    fn lump_count(&self) -> usize {
        (**self).lump_count()
    }
    fn lump_radius(&self, lump: usize) -> f64 {
        (**self).lump_radius(lump)
    }
    fn lump_speed(&self, lump: usize) -> f64 {
        (**self).lump_speed(lump)
    }
    fn lump_motion(&self, lump: usize, t: f64) -> Result<(Vec3, Vec3)> {
        (**self).lump_motion(lump, t)
    }
    fn lump_sample(&self, lump: usize, t: f64, y: &Vec3) -> Result<SourceSample> {
        (**self).lump_sample(lump, t, y)
    }
    fn sample(&self, t: f64, y: &Vec3) -> Result<SourceSample> {
        (**self).sample(t, y)
    }
}

/// `∂_t ρ + ∇·j` at `(t, x)`.
pub fn continuity_residual(src: &dyn SourceHistory, t: f64, x: &Vec3) -> Result<f64> {
    src.window().check(t)?;
    let s = src.sample(t, x)?;
    Ok(s.dt_rho + s.div_j)
}

/// `R + a|t|`.
pub fn support_radius(src: &dyn SourceHistory, t: f64) -> f64 {
    src.envelope().radius_at(t)
}

// ---------------------------------------------------------------------------
// Analytic sources
// ---------------------------------------------------------------------------

/// Truncation radius of the Gaussian profiles in units of `σ`.
pub const GAUSSIAN_CUTOFF: f64 = 8.0;

/// Normalised Gaussian `exp(-r²/2σ²)`, truncated at `8σ` and renormalised so
/// that it integrates to one over the truncation ball.
#[derive(Debug, Clone, Copy)]
pub struct GaussianProfile {
    sigma: f64,
    norm: f64,
    cutoff: f64,
}

impl GaussianProfile {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Gaussian width must be positive, got {sigma}"
            )));
        }
        let a = GAUSSIAN_CUTOFF;
        // Mass of the standard 3D normal outside radius a:
        // erfc(a/√2) + √(2/π) a e^{-a²/2}, with the asymptotic erfc series.
        let z = a / 2f64.sqrt();
        let erfc = (-z * z).exp() / (z * PI.sqrt()) * (1.0 - 0.5 / (z * z) + 0.75 / z.powi(4));
        let tail = erfc + (2.0 / PI).sqrt() * a * (-0.5 * a * a).exp();
        let norm = 1.0 / ((2.0 * PI).powf(1.5) * sigma.powi(3) * (1.0 - tail));
        Ok(Self {
            sigma,
            norm,
            cutoff: a * sigma,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    #[inline]
    pub fn value(&self, y: &Vec3) -> f64 {
        let r2 = y.norm_squared();
        if r2 >= self.cutoff * self.cutoff {
            return 0.0;
        }
        self.norm * (-0.5 * r2 / (self.sigma * self.sigma)).exp()
    }

    /// Value and gradient.
    #[inline]
    pub fn value_grad(&self, y: &Vec3) -> (f64, Vec3) {
        let g = self.value(y);
        (g, y * (-g / (self.sigma * self.sigma)))
    }
}

/// Neutral oscillating dipole `d(t) = d0 sin(ωt) w(t) ẑ` smeared over a
/// Gaussian profile `g`:
///
/// `ρ = -d(t)·∇g`, `j = ḋ(t) g`,
///
/// so the continuity equation holds identically. The optional pulse window is
/// `w(t) = sin⁴(πt/T)` on `[0, T]` and zero elsewhere, which makes the source
/// vanish before `t = 0` and after `t = T`.
#[derive(Debug, Clone)]
pub struct AnalyticDipole {
    d0: f64,
    omega: f64,
    profile: GaussianProfile,
    pulse: Option<f64>,
}

/// Moment and its first two derivatives along `ẑ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentDerivatives {
    pub d: f64,
    pub d1: f64,
    pub d2: f64,
}

impl AnalyticDipole {
    pub fn profile(&self) -> &GaussianProfile {
        &self.profile
    }

    pub fn amplitude(&self) -> f64 {
        self.d0
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn pulse(&self) -> Option<f64> {
        self.pulse
    }

    /// Restricts emission to `[0, duration]` with a `sin⁴` window.
    pub fn with_pulse(mut self, duration: f64) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "pulse duration must be positive, got {duration}"
            )));
        }
        self.pulse = Some(duration);
        Ok(self)
    }

    pub fn moment(&self, t: f64) -> MomentDerivatives {
        let (s, c) = (self.omega * t).sin_cos();
        let f = self.d0 * s;
        let f1 = self.d0 * self.omega * c;
        let f2 = -self.d0 * self.omega * self.omega * s;
        match self.pulse {
            None => MomentDerivatives { d: f, d1: f1, d2: f2 },
            Some(period) => {
                if t <= 0.0 || t >= period {
                    return MomentDerivatives { d: 0.0, d1: 0.0, d2: 0.0 };
                }
                let k = PI / period;
                let (ws, wc) = (k * t).sin_cos();
                let w = ws.powi(4);
                let w1 = 4.0 * ws.powi(3) * wc * k;
                let w2 = k * k * (12.0 * ws * ws * wc * wc - 4.0 * ws.powi(4));
                MomentDerivatives {
                    d: f * w,
                    d1: f1 * w + f * w1,
                    d2: f2 * w + 2.0 * f1 * w1 + f * w2,
                }
            }
        }
    }

    /// Characteristic period `2π/ω` (infinite for a frozen dipole).
    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }
}

/// Builds the Gaussian dipole oscillator.
pub fn analytic_dipole(d0: f64, omega: f64, sigma: f64) -> Result<AnalyticDipole> {
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "dipole frequency must be non-negative, got {omega}"
        )));
    }
    if !d0.is_finite() {
        return Err(Error::InvalidParameter("dipole amplitude must be finite".into()));
    }
    Ok(AnalyticDipole {
        d0,
        omega,
        profile: GaussianProfile::new(sigma)?,
        pulse: None,
    })
}

impl AnalyticDipole {
    #[inline]
    fn sample_at(&self, t: f64, y: &Vec3) -> SourceSample {
        let (g, grad) = self.profile.value_grad(y);
        if g == 0.0 {
            return SourceSample::default();
        }
        let s2 = self.profile.sigma * self.profile.sigma;
        // Hessian of g applied to ẑ.
        let hz = y * (g * y.z / (s2 * s2)) - Vec3::z() * (g / s2);
        let MomentDerivatives { d, d1, d2 } = self.moment(t);
        SourceSample {
            rho: -d * grad.z,
            j: Vec3::new(0.0, 0.0, d1 * g),
            grad_rho: hz * (-d),
            dt_rho: -d1 * grad.z,
            dt_j: Vec3::new(0.0, 0.0, d2 * g),
            div_j: d1 * grad.z,
            curl_j: Vec3::new(grad.y * d1, -grad.x * d1, 0.0),
        }
    }
}

impl SourceHistory for AnalyticDipole {
    fn envelope(&self) -> SupportEnvelope {
        SupportEnvelope {
            radius: self.profile.cutoff,
            speed: 0.0,
        }
    }
    fn window(&self) -> TimeWindow {
        TimeWindow::ALL
    }
    fn lump_count(&self) -> usize {
        1
    }
    fn lump_radius(&self, _lump: usize) -> f64 {
        self.profile.cutoff
    }
    fn lump_speed(&self, _lump: usize) -> f64 {
        0.0
    }
    fn lump_motion(&self, _lump: usize, _t: f64) -> Result<(Vec3, Vec3)> {
        Ok((Vec3::zeros(), Vec3::zeros()))
    }
    fn lump_sample(&self, _lump: usize, t: f64, y: &Vec3) -> Result<SourceSample> {
        Ok(self.sample_at(t, y))
    }
}

/// Static Gaussian charge `ρ = Q g`, `j = 0`.
#[derive(Debug, Clone)]
pub struct StaticBlob {
    charge: f64,
    profile: GaussianProfile,
}

impl StaticBlob {
    pub fn new(charge: f64, sigma: f64) -> Result<Self> {
        Ok(Self {
            charge,
            profile: GaussianProfile::new(sigma)?,
        })
    }

    pub fn charge(&self) -> f64 {
        self.charge
    }

    pub fn profile(&self) -> &GaussianProfile {
        &self.profile
    }

    /// Electrostatic self-energy `Q²/(2√π σ)` of the (untruncated) Gaussian.
    pub fn field_energy(&self) -> f64 {
        self.charge * self.charge / (2.0 * PI.sqrt() * self.profile.sigma)
    }
}

impl SourceHistory for StaticBlob {
    fn envelope(&self) -> SupportEnvelope {
        SupportEnvelope {
            radius: self.profile.cutoff,
            speed: 0.0,
        }
    }
    fn window(&self) -> TimeWindow {
        TimeWindow::ALL
    }
    fn lump_count(&self) -> usize {
        1
    }
    fn lump_radius(&self, _lump: usize) -> f64 {
        self.profile.cutoff
    }
    fn lump_speed(&self, _lump: usize) -> f64 {
        0.0
    }
    fn lump_motion(&self, _lump: usize, _t: f64) -> Result<(Vec3, Vec3)> {
        Ok((Vec3::zeros(), Vec3::zeros()))
    }
    fn lump_sample(&self, _lump: usize, _t: f64, y: &Vec3) -> Result<SourceSample> {
        let (g, grad) = self.profile.value_grad(y);
        Ok(SourceSample {
            rho: self.charge * g,
            grad_rho: grad * self.charge,
            ..Default::default()
        })
    }
}

/// The empty source.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vacuum;

impl SourceHistory for Vacuum {
    fn envelope(&self) -> SupportEnvelope {
        SupportEnvelope {
            radius: 1.0,
            speed: 0.0,
        }
    }
    fn window(&self) -> TimeWindow {
        TimeWindow::ALL
    }
    fn lump_count(&self) -> usize {
        0
    }
    fn lump_radius(&self, _lump: usize) -> f64 {
        0.0
    }
    fn lump_speed(&self, _lump: usize) -> f64 {
        0.0
    }
    fn lump_motion(&self, lump: usize, _t: f64) -> Result<(Vec3, Vec3)> {
        Err(Error::InvalidParameter(format!("vacuum has no lump {lump}")))
    }
    fn lump_sample(&self, lump: usize, _t: f64, _y: &Vec3) -> Result<SourceSample> {
        Err(Error::InvalidParameter(format!("vacuum has no lump {lump}")))
    }
}

/// Superposition of sources; lumps are concatenated.
#[derive(Clone)]
pub struct SourceSum {
    parts: Vec<Arc<dyn SourceHistory>>,
    offsets: Vec<usize>,
}

impl SourceSum {
    pub fn new(parts: Vec<Arc<dyn SourceHistory>>) -> Self {
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for p in &parts {
            acc += p.lump_count();
            offsets.push(acc);
        }
        Self { parts, offsets }
    }

    fn locate(&self, lump: usize) -> (usize, usize) {
        let part = self.offsets.partition_point(|&o| o <= lump) - 1;
        (part, lump - self.offsets[part])
    }
}

impl SourceHistory for SourceSum {
    fn envelope(&self) -> SupportEnvelope {
        self.parts.iter().fold(
            SupportEnvelope {
                radius: f64::MIN_POSITIVE,
                speed: 0.0,
            },
            |acc, p| {
                let e = p.envelope();
                SupportEnvelope {
                    radius: acc.radius.max(e.radius),
                    speed: acc.speed.max(e.speed),
                }
            },
        )
    }
    fn window(&self) -> TimeWindow {
        self.parts
            .iter()
            .fold(TimeWindow::ALL, |w, p| w.intersect(&p.window()))
    }
    fn lump_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn lump_radius(&self, lump: usize) -> f64 {
        let (p, l) = self.locate(lump);
        self.parts[p].lump_radius(l)
    }
    fn lump_speed(&self, lump: usize) -> f64 {
        let (p, l) = self.locate(lump);
        self.parts[p].lump_speed(l)
    }
    fn lump_motion(&self, lump: usize, t: f64) -> Result<(Vec3, Vec3)> {
        let (p, l) = self.locate(lump);
        self.parts[p].lump_motion(l, t)
    }
    fn lump_sample(&self, lump: usize, t: f64, y: &Vec3) -> Result<SourceSample> {
        let (p, l) = self.locate(lump);
        self.parts[p].lump_sample(l, t, y)
    }
}

/// Refuses queries at times later than `limit`. Used to certify that a field
/// evaluated at time `t` only reads source data from times `≤ t`.
pub struct CausalGuard<'a> {
    inner: &'a dyn SourceHistory,
    limit: f64,
}

impl<'a> CausalGuard<'a> {
    pub fn new(inner: &'a dyn SourceHistory, limit: f64) -> Self {
        Self { inner, limit }
    }

    fn check(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * (1.0 + self.limit.abs());
        if t > self.limit + slack {
            Err(Error::Causality {
                requested: t,
                limit: self.limit,
            })
        } else {
            Ok(())
        }
    }
}

impl SourceHistory for CausalGuard<'_> {
    fn envelope(&self) -> SupportEnvelope {
        self.inner.envelope()
    }
    fn window(&self) -> TimeWindow {
        self.inner.window()
    }
    fn lump_count(&self) -> usize {
        self.inner.lump_count()
    }
    fn lump_radius(&self, lump: usize) -> f64 {
        self.inner.lump_radius(lump)
    }
    fn lump_speed(&self, lump: usize) -> f64 {
        self.inner.lump_speed(lump)
    }
    fn lump_motion(&self, lump: usize, t: f64) -> Result<(Vec3, Vec3)> {
        self.check(t)?;
        self.inner.lump_motion(lump, t)
    }
    fn lump_sample(&self, lump: usize, t: f64, y: &Vec3) -> Result<SourceSample> {
        self.check(t)?;
        self.inner.lump_sample(lump, t, y)
    }
}

// ---------------------------------------------------------------------------
// Particles
// ---------------------------------------------------------------------------

/// Charge and rest mass of one species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeciesParams {
    pub charge: f64,
    pub mass: f64,
}

impl SpeciesParams {
    pub fn new(charge: f64, mass: f64) -> Result<Self> {
        if !(mass > 0.0) || !mass.is_finite() || !charge.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "species needs finite charge and positive mass, got q={charge}, m={mass}"
            )));
        }
        Ok(Self { charge, mass })
    }

    /// Relativistic velocity `p/√(m² + p²)`.
    #[inline]
    pub fn velocity(&self, p: &Vec3) -> Vec3 {
        p / (self.mass * self.mass + p.norm_squared()).sqrt()
    }

    #[inline]
    pub fn energy(&self, p: &Vec3) -> f64 {
        (self.mass * self.mass + p.norm_squared()).sqrt()
    }
}

/// C² (for `power = 3`) compactly supported bump
/// `K(y) = c (1 - |y|²/h²)^power` for `|y| < h`, normalised to unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    radius: f64,
    power: i32,
    norm: f64,
}

impl Mollifier {
    pub fn new(radius: f64) -> Result<Self> {
        Self::with_power(radius, 3)
    }

    pub fn with_power(radius: f64, power: i32) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing length must be positive, got {radius}"
            )));
        }
        if power < 3 {
            return Err(Error::InvalidParameter(format!(
                "mollifier power must be at least 3 for C² moments, got {power}"
            )));
        }
        // ∫_0^1 s²(1-s²)^p ds = p! / (2 Π_{k=0}^{p} (k + 3/2))
        let mut integral = 0.5;
        for k in 0..=power {
            integral /= k as f64 + 1.5;
            if k >= 1 {
                integral *= k as f64;
            }
        }
        let norm = 1.0 / (4.0 * PI * radius.powi(3) * integral);
        Ok(Self {
            radius,
            power,
            norm,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn power(&self) -> i32 {
        self.power
    }

    /// Peak value `K(0)`.
    pub fn peak(&self) -> f64 {
        self.norm
    }

    #[inline]
    pub fn value(&self, y: &Vec3) -> f64 {
        let q = 1.0 - y.norm_squared() / (self.radius * self.radius);
        if q <= 0.0 {
            0.0
        } else {
            self.norm * q.powi(self.power)
        }
    }

    #[inline]
    pub fn value_grad(&self, y: &Vec3) -> (f64, Vec3) {
        let h2 = self.radius * self.radius;
        let q = 1.0 - y.norm_squared() / h2;
        if q <= 0.0 {
            return (0.0, Vec3::zeros());
        }
        let qp1 = q.powi(self.power - 1);
        let value = self.norm * qp1 * q;
        let grad = y * (-2.0 * self.norm * self.power as f64 * qp1 / h2);
        (value, grad)
    }
}

/// One macro-particle of an ensemble snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub species: usize,
    pub x: Vec3,
    pub p: Vec3,
    pub weight: f64,
}

/// Weighted macro-particles sampling the distribution functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub smoothing: f64,
}

pub const ENSEMBLE_HEADER: &str = "# rvm-ensemble v1";

impl ParticleEnsemble {
    pub fn new(particles: Vec<Particle>, smoothing: f64) -> Self {
        Self {
            particles,
            smoothing,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn validate(&self, species: &[SpeciesParams]) -> Result<()> {
        if self.particles.is_empty() {
            return Err(Error::InvalidParameter("ensemble is empty".into()));
        }
        if !(self.smoothing > 0.0) || !self.smoothing.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing length must be positive, got {}",
                self.smoothing
            )));
        }
        for (i, p) in self.particles.iter().enumerate() {
            let finite = p.x.iter().chain(p.p.iter()).all(|v| v.is_finite()) && p.weight.is_finite();
            if !finite {
                return Err(Error::NonFinite(i));
            }
            if p.weight < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "particle {i} has negative weight {}",
                    p.weight
                )));
            }
            if p.species >= species.len() {
                return Err(Error::InvalidParameter(format!(
                    "particle {i} refers to unknown species {}",
                    p.species
                )));
            }
        }
        Ok(())
    }

    /// `𝒫 = max |p|`.
    pub fn momentum_bound(&self) -> f64 {
        self.particles.iter().fold(0.0, |m, p| m.max(p.p.norm()))
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{ENSEMBLE_HEADER}")?;
        for p in &self.particles {
            writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                p.species,
                crate::fmt_f64(p.x.x),
                crate::fmt_f64(p.x.y),
                crate::fmt_f64(p.x.z),
                crate::fmt_f64(p.p.x),
                crate::fmt_f64(p.p.y),
                crate::fmt_f64(p.p.z),
                crate::fmt_f64(p.weight)
            )?;
        }
        Ok(())
    }

    /// Parses the columnar format; the smoothing length is not part of the file.
    pub fn read_from(input: impl BufRead, smoothing: f64) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim() == ENSEMBLE_HEADER => {}
            Some((_, Err(e))) => return Err(e.into()),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("expected header `{ENSEMBLE_HEADER}`"),
                })
            }
        }
        let mut particles = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split_whitespace().collect();
            let err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            if cols.len() != 8 {
                return Err(err(format!("expected 8 columns, found {}", cols.len())));
            }
            let species = cols[0]
                .parse::<usize>()
                .map_err(|e| err(format!("species index: {e}")))?;
            let mut v = [0.0; 7];
            for (slot, text) in v.iter_mut().zip(&cols[1..]) {
                *slot = text.parse::<f64>().map_err(|e| err(format!("`{text}`: {e}")))?;
            }
            particles.push(Particle {
                species,
                x: Vec3::new(v[0], v[1], v[2]),
                p: Vec3::new(v[3], v[4], v[5]),
                weight: v[6],
            });
        }
        Ok(Self {
            particles,
            smoothing,
        })
    }
}

/// Trajectory sample of one particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot {
    pub x: Vec3,
    pub p: Vec3,
    /// `p̂` at the knot; the Hermite interpolant matches it.
    pub v: Vec3,
}

/// Particle trajectories on a uniform time lattice, interpolated by cubic
/// Hermite splines. Before the first knot the particles move on straight lines
/// with their initial velocities.
///
/// The current is built from the time derivative of the interpolated
/// positions, so `∂_t ρ + ∇·j = 0` holds exactly for every interpolant.
#[derive(Debug, Clone)]
pub struct ParticleHistory {
    species: Vec<SpeciesParams>,
    kinds: Vec<usize>,
    weights: Vec<f64>,
    mollifier: Mollifier,
    t0: f64,
    step: f64,
    /// `knots[k][i]`: particle `i` at time `t0 + k·step`.
    knots: Vec<Vec<Knot>>,
    envelope: SupportEnvelope,
}

/// State of one particle at an arbitrary time.
#[derive(Debug, Clone, Copy)]
pub struct Kinematics {
    pub x: Vec3,
    pub v: Vec3,
    pub a: Vec3,
}

impl ParticleHistory {
    /// Starts a history from an ensemble snapshot at `t0`.
    pub fn start(
        ensemble: &ParticleEnsemble,
        species: &[SpeciesParams],
        t0: f64,
        step: f64,
    ) -> Result<Self> {
        ensemble.validate(species)?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "trajectory sampling step must be positive, got {step}"
            )));
        }
        let mollifier = Mollifier::new(ensemble.smoothing)?;
        let knots0: Vec<Knot> = ensemble
            .particles
            .iter()
            .map(|p| Knot {
                x: p.x,
                p: p.p,
                v: species[p.species].velocity(&p.p),
            })
            .collect();
        let mut h = Self {
            species: species.to_vec(),
            kinds: ensemble.particles.iter().map(|p| p.species).collect(),
            weights: ensemble.particles.iter().map(|p| p.weight).collect(),
            mollifier,
            t0,
            step,
            knots: vec![knots0],
            envelope: SupportEnvelope {
                radius: 1.0,
                speed: 0.0,
            },
        };
        h.refresh_envelope();
        Ok(h)
    }

    pub fn with_mollifier(mut self, mollifier: Mollifier) -> Self {
        self.mollifier = mollifier;
        self.refresh_envelope();
        self
    }

    fn refresh_envelope(&mut self) {
        let speed = self
            .knots
            .iter()
            .flatten()
            .fold(0.0f64, |m, k| m.max(k.v.norm()));
        let first = &self.knots[0];
        let r0 = first.iter().fold(0.0f64, |m, k| m.max(k.x.norm()));
        self.envelope = SupportEnvelope {
            radius: r0 + self.mollifier.radius() + speed * self.t0.abs(),
            speed,
        };
    }

    /// Appends one time level of knots (one per particle).
    pub fn push_level(&mut self, level: Vec<Knot>) -> Result<()> {
        if level.len() != self.kinds.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} knots, got {}",
                self.kinds.len(),
                level.len()
            )));
        }
        for (i, k) in level.iter().enumerate() {
            if !k.x.iter().chain(k.p.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        self.knots.push(level);
        self.refresh_envelope();
        Ok(())
    }

    /// Drops the knots after level `keep - 1`.
    pub fn truncate_levels(&mut self, keep: usize) {
        self.knots.truncate(keep.max(1));
        self.refresh_envelope();
    }

    pub fn levels(&self) -> usize {
        self.knots.len()
    }

    pub fn level(&self, k: usize) -> &[Knot] {
        &self.knots[k]
    }

    pub fn level_time(&self, k: usize) -> f64 {
        self.t0 + self.step * k as f64
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    pub fn end_time(&self) -> f64 {
        self.level_time(self.knots.len() - 1)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn species(&self) -> &[SpeciesParams] {
        &self.species
    }

    pub fn particle_species(&self, i: usize) -> usize {
        self.kinds[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn particle_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn mollifier(&self) -> &Mollifier {
        &self.mollifier
    }

    /// Largest `|p|` over all knots.
    pub fn momentum_bound(&self) -> f64 {
        self.knots
            .iter()
            .flatten()
            .fold(0.0, |m, k| m.max(k.p.norm()))
    }

    /// Position, velocity and acceleration of particle `i` at time `t`.
    pub fn kinematics(&self, i: usize, t: f64) -> Result<Kinematics> {
        let end = self.end_time();
        if t > end + 1e-12 * (1.0 + end.abs()) || t.is_nan() {
            return Err(Error::OutsideWindow {
                t,
                start: f64::NEG_INFINITY,
                end,
            });
        }
        if t <= self.t0 || self.knots.len() == 1 {
            let k = &self.knots[0][i];
            return Ok(Kinematics {
                x: k.x + k.v * (t - self.t0),
                v: k.v,
                a: Vec3::zeros(),
            });
        }
        let pos = (t - self.t0) / self.step;
        let n = (pos.floor() as usize).min(self.knots.len() - 2);
        let tau = pos - n as f64;
        let (a, b) = (&self.knots[n][i], &self.knots[n + 1][i]);
        let dt = self.step;
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let x = a.x * (2.0 * t3 - 3.0 * t2 + 1.0)
            + a.v * (dt * (t3 - 2.0 * t2 + tau))
            + b.x * (-2.0 * t3 + 3.0 * t2)
            + b.v * (dt * (t3 - t2));
        let v = (a.x * (6.0 * t2 - 6.0 * tau) + b.x * (-6.0 * t2 + 6.0 * tau)) / dt
            + a.v * (3.0 * t2 - 4.0 * tau + 1.0)
            + b.v * (3.0 * t2 - 2.0 * tau);
        let acc = (a.x * (12.0 * tau - 6.0) + b.x * (-12.0 * tau + 6.0)) / (dt * dt)
            + (a.v * (6.0 * tau - 4.0) + b.v * (6.0 * tau - 2.0)) / dt;
        Ok(Kinematics { x, v, a: acc })
    }

    /// Matter energy density `Σ w √(m²+p²) K` and momentum density `Σ w p K`.
    pub fn matter_density(&self, t: f64, y: &Vec3) -> Result<(f64, Vec3)> {
        let mut e = 0.0;
        let mut p = Vec3::zeros();
        for i in 0..self.kinds.len() {
            let kin = self.kinematics(i, t)?;
            let k = self.mollifier.value(&(y - kin.x));
            if k == 0.0 {
                continue;
            }
            let sp = &self.species[self.kinds[i]];
            // Momentum from the interpolated velocity keeps p̂ consistent with j.
            let v2 = kin.v.norm_squared().min(1.0 - 1e-15);
            let gamma = 1.0 / (1.0 - v2).sqrt();
            let w = self.weights[i] * k;
            e += w * sp.mass * gamma;
            p += kin.v * (w * sp.mass * gamma);
        }
        Ok((e, p))
    }

    /// Net charge `Σ q w`.
    pub fn total_charge(&self) -> f64 {
        self.kinds
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| self.species[s].charge * w)
            .sum()
    }
}

impl SourceHistory for ParticleHistory {
    fn envelope(&self) -> SupportEnvelope {
        self.envelope
    }
    fn window(&self) -> TimeWindow {
        TimeWindow::until(self.end_time())
    }
    fn lump_count(&self) -> usize {
        self.kinds.len()
    }
    fn lump_radius(&self, _lump: usize) -> f64 {
        self.mollifier.radius()
    }
    fn lump_speed(&self, _lump: usize) -> f64 {
        self.envelope.speed
    }
    fn lump_motion(&self, lump: usize, t: f64) -> Result<(Vec3, Vec3)> {
        let kin = self.kinematics(lump, t)?;
        Ok((kin.x, kin.v))
    }
    fn lump_sample(&self, lump: usize, t: f64, y: &Vec3) -> Result<SourceSample> {
        let kin = self.kinematics(lump, t)?;
        let qw = self.species[self.kinds[lump]].charge * self.weights[lump];
        let (k, grad) = self.mollifier.value_grad(&(y - kin.x));
        if k == 0.0 {
            return Ok(SourceSample::default());
        }
        let v_grad = kin.v.dot(&grad);
        Ok(SourceSample {
            rho: qw * k,
            j: kin.v * (qw * k),
            grad_rho: grad * qw,
            dt_rho: -qw * v_grad,
            dt_j: (kin.a * k - kin.v * v_grad) * qw,
            div_j: qw * v_grad,
            curl_j: grad.cross(&kin.v) * qw,
        })
    }
}

/// Moments of an ensemble whose particles stream freely (no fields) up to
/// `horizon`, sampled every `step`.
pub fn moments_from_ensemble(
    ensemble: &ParticleEnsemble,
    species: &[SpeciesParams],
    horizon: f64,
    step: f64,
) -> Result<ParticleHistory> {
    let mut h = ParticleHistory::start(ensemble, species, 0.0, step)?;
    let levels = (horizon / step).ceil().max(0.0) as usize;
    for k in 1..=levels {
        let t = step * k as f64;
        let level = h.knots[0]
            .iter()
            .map(|k0| Knot {
                x: k0.x + k0.v * t,
                p: k0.p,
                v: k0.v,
            })
            .collect();
        h.push_level(level)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ball_quadrature, BallGrid, DirectionGrid};

    fn fine_ball(radius: f64) -> BallGrid {
        ball_quadrature(radius, 40, 24).unwrap()
    }

    #[test]
    fn gaussian_profile_integrates_to_one() {
        let g = GaussianProfile::new(0.7).unwrap();
        let ball = fine_ball(g.cutoff());
        assert!((ball.integrate(|y| g.value(y)) - 1.0).abs() < 1e-10);
        assert!(GaussianProfile::new(0.0).is_err());
    }

    #[test]
    fn mollifier_normalisation_and_gradient() {
        for power in [3, 4, 6] {
            let m = Mollifier::with_power(0.8, power).unwrap();
            let ball = ball_quadrature(0.8, 24, 4).unwrap();
            assert!((ball.integrate(|y| m.value(y)) - 1.0).abs() < 1e-12, "power {power}");
            let y = Vec3::new(0.1, -0.3, 0.25);
            let (_, grad) = m.value_grad(&y);
            let h = 1e-6;
            for axis in 0..3 {
                let mut e = Vec3::zeros();
                e[axis] = h;
                let fd = (m.value(&(y + e)) - m.value(&(y - e))) / (2.0 * h);
                assert!((fd - grad[axis]).abs() < 1e-6 * m.peak());
            }
        }
        assert!(Mollifier::new(0.0).is_err());
        assert!(Mollifier::with_power(1.0, 2).is_err());
    }

    #[test]
    fn frozen_dipole_is_empty() {
        let d = analytic_dipole(1.0, 0.0, 1.0).unwrap();
        for t in [-3.0, 0.0, 5.0] {
            let s = d.sample(t, &Vec3::new(0.3, 0.2, -0.5)).unwrap();
            assert_eq!(s.j, Vec3::zeros());
            assert_eq!(s.rho, 0.0);
        }
    }

    #[test]
    fn dipole_is_neutral_and_current_integrates_to_moment_rate() {
        let d = analytic_dipole(1.3, 0.05, 1.0).unwrap();
        let ball = fine_ball(8.0);
        for t in [0.0, 3.0, 17.0] {
            let q = ball.integrate(|y| d.sample(t, y).unwrap().rho);
            assert!(q.abs() < 1e-10, "charge {q}");
            let jz = ball.integrate(|y| d.sample(t, y).unwrap().j.z);
            let expect = d.moment(t).d1;
            assert!((jz - expect).abs() <= 1e-6 * expect.abs().max(1e-12));
            let pz = ball.integrate(|y| y.z * d.sample(t, y).unwrap().rho);
            assert!((pz - d.moment(t).d).abs() < 1e-9);
        }
    }

    #[test]
    fn dipole_continuity_is_exact() {
        let d = analytic_dipole(0.7, 0.9, 1.2).unwrap().with_pulse(20.0).unwrap();
        for (t, x) in [(1.0, Vec3::new(0.5, 0.1, -0.2)), (7.3, Vec3::new(-2.0, 1.0, 0.4))] {
            assert!(continuity_residual(&d, t, &x).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn dipole_derivatives_match_finite_differences() {
        let d = analytic_dipole(0.7, 0.9, 1.2).unwrap().with_pulse(20.0).unwrap();
        let t = 6.1;
        let h = 1e-5;
        let m0 = d.moment(t);
        let (mp, mm) = (d.moment(t + h), d.moment(t - h));
        assert!(((mp.d - mm.d) / (2.0 * h) - m0.d1).abs() < 1e-8);
        assert!(((mp.d1 - mm.d1) / (2.0 * h) - m0.d2).abs() < 1e-8);
        let y = Vec3::new(0.4, -0.6, 0.9);
        let s = d.sample(t, &y).unwrap();
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = h;
            let fd = (d.sample(t, &(y + e)).unwrap().rho - d.sample(t, &(y - e)).unwrap().rho) / (2.0 * h);
            assert!((fd - s.grad_rho[axis]).abs() < 1e-8);
        }
        let fd_t = (d.sample(t + h, &y).unwrap().j - d.sample(t - h, &y).unwrap().j) / (2.0 * h);
        assert!((fd_t - s.dt_j).norm() < 1e-8);
        // curl j by central differences
        let jd = |dy: Vec3| d.sample(t, &(y + dy)).unwrap().j;
        let dj = |axis: usize| {
            let mut e = Vec3::zeros();
            e[axis] = h;
            (jd(e) - jd(-e)) / (2.0 * h)
        };
        let (dx, dy, dz) = (dj(0), dj(1), dj(2));
        let curl = Vec3::new(dy.z - dz.y, dz.x - dx.z, dx.y - dy.x);
        assert!((curl - s.curl_j).norm() < 1e-8);
    }

    #[test]
    fn pulse_window_switches_off() {
        let d = analytic_dipole(1.0, 1.0, 1.0).unwrap().with_pulse(10.0).unwrap();
        assert_eq!(d.moment(-1.0).d, 0.0);
        assert_eq!(d.moment(11.0).d1, 0.0);
        assert!(d.moment(5.0).d.abs() > 0.0);
    }

    #[test]
    fn support_radius_formula() {
        let blob = StaticBlob::new(1.0, 0.125).unwrap();
        assert_eq!(support_radius(&blob, 10.0), 1.0);
        let e = SupportEnvelope::new(1.0, 0.5).unwrap();
        assert_eq!(e.radius_at(-4.0), 3.0);
        assert!(SupportEnvelope::new(1.0, 1.0).is_err());
    }

    #[test]
    fn densities_vanish_outside_envelope() {
        let d = analytic_dipole(1.0, 0.4, 0.5).unwrap();
        let dirs = DirectionGrid::product(10, 10);
        for (i, k) in dirs.nodes().iter().enumerate() {
            let t = -20.0 + i as f64 * 0.4;
            let r = 1.01 * support_radius(&d, t);
            let s = d.sample(t, &(k * r)).unwrap();
            assert_eq!(s, SourceSample::default());
        }
    }

    fn species() -> Vec<SpeciesParams> {
        vec![SpeciesParams::new(1.0, 1.0).unwrap(), SpeciesParams::new(-1.0, 2.0).unwrap()]
    }

    #[test]
    fn ensemble_with_zero_weights_has_no_moments() {
        let ens = ParticleEnsemble::new(
            vec![Particle {
                species: 0,
                x: Vec3::zeros(),
                p: Vec3::new(0.3, 0.0, 0.0),
                weight: 0.0,
            }],
            0.5,
        );
        let h = moments_from_ensemble(&ens, &species(), 2.0, 0.1).unwrap();
        let s = h.sample(1.0, &Vec3::new(0.3, 0.0, 0.1)).unwrap();
        assert_eq!(s.rho, 0.0);
        assert_eq!(s.j, Vec3::zeros());
    }

    #[test]
    fn resting_ensemble_is_static_and_currentless() {
        let ens = ParticleEnsemble::new(
            vec![
                Particle { species: 0, x: Vec3::new(0.2, 0.0, 0.0), p: Vec3::zeros(), weight: 1.0 },
                Particle { species: 1, x: Vec3::new(-0.4, 0.1, 0.0), p: Vec3::zeros(), weight: 2.0 },
            ],
            0.5,
        );
        let h = moments_from_ensemble(&ens, &species(), 3.0, 0.25).unwrap();
        let y = Vec3::new(0.0, 0.05, 0.1);
        let a = h.sample(0.3, &y).unwrap();
        let b = h.sample(2.7, &y).unwrap();
        assert_eq!(a.rho, b.rho);
        assert_eq!(a.j, Vec3::zeros());
        assert_eq!(continuity_residual(&h, 1.1, &y).unwrap(), 0.0);
    }

    #[test]
    fn single_particle_charge_is_conserved() {
        let ens = ParticleEnsemble::new(
            vec![Particle { species: 0, x: Vec3::new(0.1, 0.0, 0.0), p: Vec3::new(0.2, 0.1, 0.0), weight: 1.0 }],
            0.6,
        );
        let h = moments_from_ensemble(&ens, &species(), 4.0, 0.5).unwrap();
        for t in [-2.0, 0.0, 1.3, 3.9] {
            let c = h.lump_center(0, t).unwrap();
            let ball = BallGrid::shell(c, 0.0, 0.6, 24, &DirectionGrid::product(8, 8)).unwrap();
            let q = ball.integrate(|y| h.sample(t, y).unwrap().rho);
            assert!((q - 1.0).abs() < 1e-10, "t={t} q={q}");
        }
    }

    #[test]
    fn hermite_current_satisfies_continuity() {
        let ens = ParticleEnsemble::new(
            vec![Particle { species: 0, x: Vec3::zeros(), p: Vec3::new(0.2, 0.0, 0.0), weight: 1.0 }],
            0.6,
        );
        let sp = species();
        let mut h = ParticleHistory::start(&ens, &sp, 0.0, 0.5).unwrap();
        // A curved path: knots on a circle.
        for k in 1..6 {
            let t = 0.5 * k as f64;
            let x = Vec3::new(t.sin(), 1.0 - t.cos(), 0.0) * 0.2;
            let v = Vec3::new(t.cos(), t.sin(), 0.0) * 0.2;
            let p = v / (1.0 - v.norm_squared()).sqrt();
            h.push_level(vec![Knot { x, p, v }]).unwrap();
        }
        let y = Vec3::new(0.3, 0.2, 0.05);
        for t in [0.3, 1.2, 2.45] {
            let s = h.sample(t, &y).unwrap();
            let scale = h.mollifier().peak();
            assert!((s.dt_rho + s.div_j).abs() < 1e-14 * scale);
            // ∂_t ρ against finite differences of the interpolated trajectory
            let e = 1e-6;
            let fd = (h.sample(t + e, &y).unwrap().rho - h.sample(t - e, &y).unwrap().rho) / (2.0 * e);
            assert!((fd - s.dt_rho).abs() < 1e-6 * scale);
            let fdj = (h.sample(t + e, &y).unwrap().j - h.sample(t - e, &y).unwrap().j) / (2.0 * e);
            assert!((fdj - s.dt_j).norm() < 1e-5 * scale);
        }
        assert!(matches!(h.sample(2.6, &y), Err(Error::OutsideWindow { .. })));
    }

    #[test]
    fn ballistic_past_stays_inside_envelope() {
        let ens = ParticleEnsemble::new(
            vec![
                Particle { species: 0, x: Vec3::new(1.0, 0.0, 0.0), p: Vec3::new(0.5, 0.0, 0.0), weight: 1.0 },
                Particle { species: 1, x: Vec3::new(0.0, -0.5, 0.0), p: Vec3::new(0.0, -0.9, 0.4), weight: 1.0 },
            ],
            0.3,
        );
        let h = moments_from_ensemble(&ens, &species(), 5.0, 0.5).unwrap();
        let env = h.envelope();
        assert!(env.speed < 1.0);
        for t in [-10.0, -1.0, 0.0, 2.0, 5.0] {
            for i in 0..2 {
                let c = h.lump_center(i, t).unwrap();
                assert!(c.norm() + 0.3 <= env.radius_at(t) + 1e-12);
            }
        }
    }

    #[test]
    fn invalid_ensembles_are_rejected() {
        let sp = species();
        let bad = ParticleEnsemble::new(
            vec![Particle { species: 0, x: Vec3::new(f64::NAN, 0.0, 0.0), p: Vec3::zeros(), weight: 1.0 }],
            0.3,
        );
        assert!(matches!(bad.validate(&sp), Err(Error::NonFinite(0))));
        let empty = ParticleEnsemble::new(vec![], 0.3);
        assert!(empty.validate(&sp).is_err());
        let neg = ParticleEnsemble::new(
            vec![Particle { species: 0, x: Vec3::zeros(), p: Vec3::zeros(), weight: -1.0 }],
            0.3,
        );
        assert!(neg.validate(&sp).is_err());
        assert!(SpeciesParams::new(1.0, 0.0).is_err());
    }

    #[test]
    fn ensemble_text_format() {
        let ens = ParticleEnsemble::new(
            vec![
                Particle { species: 1, x: Vec3::new(0.1, -2.5e-7, 3.0), p: Vec3::new(1.0 / 3.0, 0.0, -0.2), weight: 0.125 },
                Particle { species: 0, x: Vec3::new(1e300, 0.0, -0.0), p: Vec3::zeros(), weight: 2.0 },
            ],
            0.4,
        );
        let mut buf = Vec::new();
        ens.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# rvm-ensemble v1\n1 0.1 -2.5e-7 3.0 "));
        let back = ParticleEnsemble::read_from(&buf[..], 0.4).unwrap();
        assert_eq!(back, ens);
        assert!(ParticleEnsemble::read_from(&b"0 1 2 3\n"[..], 0.4).is_err());
        let short = format!("{ENSEMBLE_HEADER}\n0 1 2 3\n");
        assert!(matches!(
            ParticleEnsemble::read_from(short.as_bytes(), 0.4),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn causal_guard_blocks_future_reads() {
        let d = analytic_dipole(1.0, 1.0, 1.0).unwrap();
        let g = CausalGuard::new(&d, 2.0);
        assert!(g.sample(1.9, &Vec3::zeros()).is_ok());
        assert!(matches!(g.sample(2.1, &Vec3::zeros()), Err(Error::Causality { .. })));
    }

    #[test]
    fn source_sum_concatenates_lumps() {
        let a: Arc<dyn SourceHistory> = Arc::new(StaticBlob::new(1.0, 1.0).unwrap());
        let b: Arc<dyn SourceHistory> = Arc::new(analytic_dipole(1.0, 1.0, 0.5).unwrap());
        let s = SourceSum::new(vec![a.clone(), b.clone()]);
        assert_eq!(s.lump_count(), 2);
        let y = Vec3::new(0.2, 0.1, 0.3);
        let mut expect = a.sample(1.0, &y).unwrap();
        expect += b.sample(1.0, &y).unwrap();
        assert_eq!(s.sample(1.0, &y).unwrap(), expect);
        assert_eq!(s.envelope().radius, 8.0);
    }
}
