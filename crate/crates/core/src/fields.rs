//! Retarded field evaluation.
//!
//! With `F_E = -(∇ρ + ∂_t j)` and `F_B = ∇∧j` the retarded field is
//! `φ(t,x) = ∫ F(t - |x-y|, y) dy / |x-y|`. The integral is split over the
//! lumps of the source and each lump is integrated in one of three ways,
//! depending on the retarded distance `d` from `x` to the lump centre and the
//! lump's enclosing radius `ρ = h/(1-a)`:
//!
//! - `d < ρ`: spherical coordinates centred at `x` over the whole sphere,
//!   `s ∈ [0, d+ρ]`; the measure `dy/|x-y| = s ds dΩ` has no singularity.
//! - `ρ ≤ d < far_ratio·ρ`: the same coordinates restricted to the cone of
//!   directions that can hit the lump, `s ∈ [d-ρ, d+ρ]`.
//! - `d ≥ far_ratio·ρ`: the lump is parametrised by its body coordinate
//!   `w = y - X(τ)`, where `τ` is the retarded time of `y`. The map `w ↦ y`
//!   has Jacobian `1/(1 + n·V)` and the integrand is smooth on `|w| ≤ h`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::ops::{Add, AddAssign, Mul, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{DirectionGrid, Frame, GaussLegendre};
use crate::sources::{SourceHistory, SourceSample};
use crate::{extrapolate, Error, Result, Vec3};

/// Electromagnetic field pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldValue {
    pub e: Vec3,
    pub b: Vec3,
}

impl FieldValue {
    pub const ZERO: FieldValue = FieldValue {
        e: Vec3::new(0.0, 0.0, 0.0),
        b: Vec3::new(0.0, 0.0, 0.0),
    };

    pub fn new(e: Vec3, b: Vec3) -> Self {
        Self { e, b }
    }

    /// `√(|E|² + |B|²)`.
    pub fn magnitude(&self) -> f64 {
        (self.e.norm_squared() + self.b.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }

    /// Field energy density `(|E|² + |B|²)/8π`.
    pub fn energy_density(&self) -> f64 {
        (self.e.norm_squared() + self.b.norm_squared()) / (8.0 * PI)
    }
}

impl Add for FieldValue {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.e + o.e, self.b + o.b)
    }
}

impl Sub for FieldValue {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.e - o.e, self.b - o.b)
    }
}

impl AddAssign for FieldValue {
    fn add_assign(&mut self, o: Self) {
        self.e += o.e;
        self.b += o.b;
    }
}

impl Mul<f64> for FieldValue {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.e * s, self.b * s)
    }
}

/// Poynting vector `S = (E ∧ B)/4π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoyntingSample {
    pub s: Vec3,
}

pub fn poynting(fv: &FieldValue) -> PoyntingSample {
    PoyntingSample {
        s: fv.e.cross(&fv.b) / (4.0 * PI),
    }
}

/// Which light cone the source is integrated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    Retarded,
    /// Future cone; only used to build negative controls.
    Advanced,
}

impl Propagation {
    /// `+1` for retarded, `-1` for advanced: source time is `t - sign·s`.
    #[inline]
    fn sign(self) -> f64 {
        match self {
            Propagation::Retarded => 1.0,
            Propagation::Advanced => -1.0,
        }
    }
}

/// Quadrature parameters for field evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldResolution {
    /// Radial Gauss-Legendre nodes on the lump body ball.
    pub far_radial: usize,
    pub far_polar: usize,
    pub far_azimuth: usize,
    /// Panels per enclosing radius for the `s` integration near a lump.
    pub near_panels: usize,
    pub near_panel_nodes: usize,
    pub near_polar: usize,
    pub near_azimuth: usize,
    /// Body-coordinate quadrature is used once `d ≥ far_ratio·ρ`.
    pub far_ratio: f64,
}

impl Default for FieldResolution {
    fn default() -> Self {
        Self {
            far_radial: 24,
            far_polar: 12,
            far_azimuth: 24,
            near_panels: 4,
            near_panel_nodes: 8,
            near_polar: 32,
            near_azimuth: 16,
            far_ratio: 2.0,
        }
    }
}

impl FieldResolution {
    /// Coarse settings for smoke runs and benchmarks.
    pub fn coarse() -> Self {
        Self {
            far_radial: 12,
            far_polar: 6,
            far_azimuth: 12,
            near_panels: 2,
            near_panel_nodes: 6,
            near_polar: 12,
            near_azimuth: 8,
            far_ratio: 2.0,
        }
    }

    /// Every node count multiplied by `factor` (rounded up).
    pub fn scaled(&self, factor: f64) -> Self {
        let f = |n: usize| ((n as f64 * factor).ceil() as usize).max(1);
        Self {
            far_radial: f(self.far_radial),
            far_polar: f(self.far_polar),
            far_azimuth: f(self.far_azimuth),
            near_panels: f(self.near_panels),
            near_panel_nodes: self.near_panel_nodes,
            near_polar: f(self.near_polar),
            near_azimuth: f(self.near_azimuth),
            far_ratio: self.far_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.far_radial,
            self.far_polar,
            self.far_azimuth,
            self.near_panels,
            self.near_panel_nodes,
            self.near_polar,
            self.near_azimuth,
        ];
        if counts.iter().any(|&n| n == 0) {
            return Err(Error::InvalidParameter(
                "field resolution node counts must be positive".into(),
            ));
        }
        if !(self.far_ratio > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "far_ratio must exceed 1, got {}",
                self.far_ratio
            )));
        }
        Ok(())
    }
}

/// Precomputed rules for a [`FieldResolution`]; shared by all evaluations.
#[derive(Debug, Clone)]
pub struct FieldQuadrature {
    res: FieldResolution,
    /// Body-ball rule on the unit ball: `(unit offset, weight)`.
    body: Vec<(Vec3, f64)>,
    panel: GaussLegendre,
    near_polar: GaussLegendre,
    /// Full-sphere rule with the pole along `ẑ`.
    sphere: Vec<(Vec3, f64)>,
    azimuth_trig: Vec<(f64, f64)>,
}

impl FieldQuadrature {
    pub fn new(res: FieldResolution) -> Result<Self> {
        res.validate()?;
        let radial = GaussLegendre::new(res.far_radial);
        let dirs = DirectionGrid::product(res.far_polar, res.far_azimuth);
        let mut body = Vec::with_capacity(radial.len() * dirs.len());
        for (r, wr) in radial.mapped(0.0, 1.0) {
            for (k, wk) in dirs.iter() {
                body.push((k * r, wr * r * r * wk));
            }
        }
        let sphere_grid = DirectionGrid::product(res.near_polar, res.near_azimuth);
        let sphere = sphere_grid.iter().map(|(k, w)| (*k, w)).collect();
        let dphi = 2.0 * PI / res.near_azimuth as f64;
        let azimuth_trig = (0..res.near_azimuth)
            .map(|m| {
                let phi = (m as f64 + 0.5) * dphi;
                (phi.cos(), phi.sin())
            })
            .collect();
        Ok(Self {
            res,
            body,
            panel: GaussLegendre::new(res.near_panel_nodes),
            near_polar: GaussLegendre::new(res.near_polar),
            sphere,
            azimuth_trig,
        })
    }

    pub fn resolution(&self) -> &FieldResolution {
        &self.res
    }
}

impl Default for FieldQuadrature {
    fn default() -> Self {
        Self::new(FieldResolution::default()).expect("default resolution is valid")
    }
}

const MAX_CONE_ITERATIONS: usize = 400;

/// Solves `τ = t - sign·|x - X(τ) - w|` by fixed-point iteration (a
/// contraction with factor equal to the lump speed bound).
fn solve_cone_time(
    src: &dyn SourceHistory,
    lump: usize,
    t: f64,
    x: &Vec3,
    w: &Vec3,
    sign: f64,
    start: f64,
) -> Result<(f64, Vec3, Vec3)> {
    let speed = src.lump_speed(lump);
    let tol = 1e-14 * (1.0 + t.abs() + x.norm());
    let mut tau = start;
    for _ in 0..MAX_CONE_ITERATIONS {
        let (c, v) = src.lump_motion(lump, tau)?;
        let next = t - sign * (x - c - w).norm();
        if speed == 0.0 || (next - tau).abs() <= tol {
            let (c, v) = if speed == 0.0 { (c, v) } else { src.lump_motion(lump, next)? };
            return Ok((next, c, v));
        }
        tau = next;
    }
    Err(Error::Resolution(format!(
        "light-cone time of lump {lump} did not converge at t = {t}"
    )))
}

#[inline]
fn kernel(s: &SourceSample) -> (Vec3, Vec3) {
    (-(s.grad_rho + s.dt_j), s.curl_j)
}

/// Retarded distance from `x` to the centre of a lump and the associated
/// source time.
fn lump_distance(
    src: &dyn SourceHistory,
    lump: usize,
    t: f64,
    x: &Vec3,
    sign: f64,
) -> Result<(f64, Vec3, f64)> {
    let (tau, c, _) = solve_cone_time(src, lump, t, x, &Vec3::zeros(), sign, t)?;
    Ok((tau, c, (x - c).norm()))
}

fn lump_field(
    src: &dyn SourceHistory,
    lump: usize,
    t: f64,
    x: &Vec3,
    q: &FieldQuadrature,
    prop: Propagation,
) -> Result<FieldValue> {
    let sign = prop.sign();
    let h = src.lump_radius(lump);
    let speed = src.lump_speed(lump);
    if !(speed < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lump {lump} speed bound {speed} is not below 1"
        )));
    }
    let enclosing = h / (1.0 - speed);
    let (tau_c, centre, d) = lump_distance(src, lump, t, x, sign)?;
    let mut e = Vec3::zeros();
    let mut b = Vec3::zeros();

    if d >= q.res.far_ratio * enclosing {
        for (unit, weight) in &q.body {
            let w = unit * h;
            let (tau, c, v) = solve_cone_time(src, lump, t, x, &w, sign, tau_c)?;
            let y = c + w;
            let diff = y - x;
            let s = diff.norm();
            let n = diff / s;
            let jac = 1.0 / (1.0 + sign * n.dot(&v));
            let smp = src.lump_sample(lump, tau, &y)?;
            let (fe, fb) = kernel(&smp);
            let f = weight * h * h * h * jac / s;
            e += fe * f;
            b += fb * f;
        }
        return Ok(FieldValue::new(e, b));
    }

    // Pole aimed at the centre, tilted towards ẑ when `d → 0` so the rule
    // turns continuously with `x`.
    let axis = centre - x + Vec3::z() * (1e-3 * enclosing);
    let frame = if axis.norm() > 0.0 {
        Frame::along(axis)
    } else {
        Frame::along(Vec3::z())
    };
    // Direction rule and s-range.
    let (dirs, s_lo, s_hi): (Vec<(Vec3, f64)>, f64, f64) = if d < enclosing {
        let dirs = q
            .sphere
            .iter()
            .map(|(k, w)| (frame.to_world(k.x, k.y, k.z), *w))
            .collect();
        (dirs, 0.0, d + enclosing)
    } else {
        let half = (enclosing / d).min(1.0).asin();
        let dphi = 2.0 * PI / q.res.near_azimuth as f64;
        let mut dirs = Vec::with_capacity(q.near_polar.len() * q.azimuth_trig.len());
        for (theta, wt) in q.near_polar.mapped(0.0, half) {
            let (st, ct) = theta.sin_cos();
            for &(cp, sp) in &q.azimuth_trig {
                dirs.push((frame.to_world(st * cp, st * sp, ct), wt * st * dphi));
            }
        }
        (dirs, (d - enclosing).max(0.0), d + enclosing)
    };
    // both ranges are at most 2ρ long
    let panels = 2 * q.res.near_panels;
    let step = (s_hi - s_lo) / panels as f64;
    let h2 = h * h;
    for p in 0..panels {
        let a = s_lo + step * p as f64;
        for (s, ws) in q.panel.mapped(a, a + step) {
            let tau = t - sign * s;
            let (c, _) = src.lump_motion(lump, tau)?;
            let rel = x - c;
            for (k, wk) in &dirs {
                let y_rel = rel + k * s;
                if y_rel.norm_squared() >= h2 {
                    continue;
                }
                let smp = src.lump_sample(lump, tau, &(x + k * s))?;
                let (fe, fb) = kernel(&smp);
                let f = ws * s * wk;
                e += fe * f;
                b += fb * f;
            }
        }
    }
    Ok(FieldValue::new(e, b))
}

/// Field of `src` at `(t, x)` on the given light cone.
pub fn eval_field(
    src: &dyn SourceHistory,
    t: f64,
    x: &Vec3,
    q: &FieldQuadrature,
    prop: Propagation,
) -> Result<FieldValue> {
    if !t.is_finite() || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "non-finite evaluation point t={t}, x={x:?}"
        )));
    }
    let window = src.window();
    if prop == Propagation::Retarded {
        window.check(t)?;
    } else {
        window.check(t + bounding_domain(src, t, x)? + x.norm())?;
    }
    if window.start.is_finite() {
        // Earliest retarded time that can meet the support.
        let r = bounding_domain(src, t, x)?;
        window.check(t - sign_distance(prop) * (x.norm() + r))?;
    }
    let mut total = FieldValue::ZERO;
    for lump in 0..src.lump_count() {
        total += lump_field(src, lump, t, x, q, prop)?;
    }
    Ok(total)
}

fn sign_distance(prop: Propagation) -> f64 {
    prop.sign()
}

/// Retarded field `(E_ret, B_ret)` at `(t, x)`.
pub fn eval_retarded(
    src: &dyn SourceHistory,
    t: f64,
    x: &Vec3,
    q: &FieldQuadrature,
) -> Result<FieldValue> {
    eval_field(src, t, x, q, Propagation::Retarded)
}

/// Data-parallel evaluation at many points; the output order matches the input.
pub fn eval_batch(
    src: &dyn SourceHistory,
    points: &[(f64, Vec3)],
    q: &FieldQuadrature,
    prop: Propagation,
) -> Result<Vec<FieldValue>> {
    points
        .par_iter()
        .map(|(t, x)| eval_field(src, *t, x, q, prop))
        .collect()
}

/// Radius `r*` with `Ξ_a(t,x) ⊆ {|y| ≤ r*}` for an envelope `(R, a)`.
pub fn bounding_radius(radius: f64, speed: f64, t: f64, x: &Vec3) -> Result<f64> {
    if !(0.0..1.0).contains(&speed) {
        return Err(Error::InvalidParameter(format!(
            "envelope speed must lie in [0, 1), got {speed}"
        )));
    }
    let xn = x.norm();
    let safe = (radius + speed * (t.abs() + xn)) / (1.0 - speed);
    let mut best = safe;
    // The retarded time t - |x-y| keeps one sign over the safe ball.
    if t >= xn + safe {
        best = best.min((radius + speed * (t + xn)) / (1.0 + speed));
    } else if (xn - safe).max(0.0) >= t {
        best = best.min((radius + speed * (xn - t)) / (1.0 - speed));
    }
    Ok(best)
}

/// Bounding radius of the retarded integration domain at `(t, x)`.
pub fn bounding_domain(src: &dyn SourceHistory, t: f64, x: &Vec3) -> Result<f64> {
    let env = src.envelope();
    bounding_radius(env.radius, env.speed, t, x)
}

/// Anything that can supply an electromagnetic field at a space-time point.
pub trait FieldProvider: Sync {
    fn field(&self, t: f64, x: &Vec3) -> Result<FieldValue>;
}

/// Spatially and temporally constant field.
#[derive(Debug, Clone, Copy)]
pub struct UniformField(pub FieldValue);

impl FieldProvider for UniformField {
    fn field(&self, _t: f64, _x: &Vec3) -> Result<FieldValue> {
        Ok(self.0)
    }
}

/// Field generated by a source through the retarded (or advanced) integral.
pub struct SourceField<'a> {
    pub src: &'a dyn SourceHistory,
    pub quadrature: &'a FieldQuadrature,
    pub propagation: Propagation,
}

impl<'a> SourceField<'a> {
    pub fn retarded(src: &'a dyn SourceHistory, quadrature: &'a FieldQuadrature) -> Self {
        Self {
            src,
            quadrature,
            propagation: Propagation::Retarded,
        }
    }

    pub fn advanced(src: &'a dyn SourceHistory, quadrature: &'a FieldQuadrature) -> Self {
        Self {
            src,
            quadrature,
            propagation: Propagation::Advanced,
        }
    }
}

impl FieldProvider for SourceField<'_> {
    fn field(&self, t: f64, x: &Vec3) -> Result<FieldValue> {
        eval_field(self.src, t, x, self.quadrature, self.propagation)
    }
}

/// Ray along which a decay profile is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Ray {
    /// Fixed retarded time `u`: points `(u + r, r k)`.
    Retarded(f64),
    /// Fixed advanced time `v`: points `(v - r, r k)`.
    Advanced(f64),
    /// Fixed time `t`: points `(t, r k)`.
    Fixed(f64),
}

impl Ray {
    pub fn time_at(&self, r: f64) -> f64 {
        match *self {
            Ray::Retarded(u) => u + r,
            Ray::Advanced(v) => v - r,
            Ray::Fixed(t) => t,
        }
    }
}

/// `|F_ret|` along a ray with a fitted power law `C r^p`.
#[derive(Debug, Clone, Serialize)]
pub struct DecayTable {
    pub ray: Ray,
    pub direction: [f64; 3],
    pub radii: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub exponent: f64,
    pub constant: f64,
}

pub fn decay_diagnostic(
    src: &dyn SourceHistory,
    ray: Ray,
    k: &Vec3,
    radii: &[f64],
    q: &FieldQuadrature,
) -> Result<DecayTable> {
    let k = k.normalize();
    let points: Vec<(f64, Vec3)> = radii.iter().map(|&r| (ray.time_at(r), k * r)).collect();
    let values = eval_batch(src, &points, q, Propagation::Retarded)?;
    let magnitudes: Vec<f64> = values.iter().map(FieldValue::magnitude).collect();
    let (exponent, intercept) = extrapolate::loglog_fit(radii, &magnitudes)?;
    Ok(DecayTable {
        ray,
        direction: [k.x, k.y, k.z],
        radii: radii.to_vec(),
        magnitudes,
        exponent,
        constant: intercept.exp(),
    })
}

/// Centred-difference Maxwell residuals of the computed field.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MaxwellResiduals {
    pub step: f64,
    /// `∇·B`.
    pub div_b: f64,
    /// `|∇∧E + ∂_t B|`.
    pub faraday: f64,
    /// Frobenius norm of `∇B`.
    pub div_b_scale: f64,
    /// `|∇E| + |∂_t B|`.
    pub faraday_scale: f64,
}

impl MaxwellResiduals {
    pub fn relative_div_b(&self) -> f64 {
        self.div_b.abs() / self.div_b_scale.max(f64::MIN_POSITIVE)
    }

    pub fn relative_faraday(&self) -> f64 {
        self.faraday / self.faraday_scale.max(f64::MIN_POSITIVE)
    }
}

pub fn maxwell_residuals(
    src: &dyn SourceHistory,
    t: f64,
    x: &Vec3,
    h: f64,
    q: &FieldQuadrature,
) -> Result<MaxwellResiduals> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut points = Vec::with_capacity(8);
    for axis in 0..3 {
        let mut e = Vec3::zeros();
        e[axis] = h;
        points.push((t, x + e));
        points.push((t, x - e));
    }
    points.push((t + h, *x));
    points.push((t - h, *x));
    let f = eval_batch(src, &points, q, Propagation::Retarded)?;
    // grad[i] = ∂_i F
    let grad: Vec<FieldValue> = (0..3)
        .map(|i| (f[2 * i] - f[2 * i + 1]) * (0.5 / h))
        .collect();
    let dt_b = (f[6].b - f[7].b) * (0.5 / h);
    let div_b = grad[0].b.x + grad[1].b.y + grad[2].b.z;
    let curl_e = Vec3::new(
        grad[1].e.z - grad[2].e.y,
        grad[2].e.x - grad[0].e.z,
        grad[0].e.y - grad[1].e.x,
    );
    let frob = |sel: fn(&FieldValue) -> Vec3| {
        grad.iter().map(|g| sel(g).norm_squared()).sum::<f64>().sqrt()
    };
    Ok(MaxwellResiduals {
        step: h,
        div_b,
        faraday: (curl_e + dt_b).norm(),
        div_b_scale: frob(|g| g.b),
        faraday_scale: frob(|g| g.e) + dt_b.norm(),
    })
}

/// One row of the field export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub t: f64,
    pub x: Vec3,
    pub field: FieldValue,
}

pub const FIELDS_CSV_HEADER: &str = "t,x1,x2,x3,E1,E2,E3,B1,B2,B3";

pub fn write_fields_csv(mut out: impl Write, rows: &[FieldSample]) -> Result<()> {
    writeln!(out, "{FIELDS_CSV_HEADER}")?;
    for r in rows {
        let vals = [
            r.t, r.x.x, r.x.y, r.x.z, r.field.e.x, r.field.e.y, r.field.e.z, r.field.b.x,
            r.field.b.y, r.field.b.z,
        ];
        let line: Vec<String> = vals.iter().map(|v| crate::fmt_f64(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_fields_csv(input: impl BufRead) -> Result<Vec<FieldSample>> {
    let mut rows = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if idx == 0 {
            if line.trim() != FIELDS_CSV_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    message: "unexpected fields.csv header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if vals.len() != 10 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 10 columns, found {}", vals.len()),
            });
        }
        rows.push(FieldSample {
            t: vals[0],
            x: Vec3::new(vals[1], vals[2], vals[3]),
            field: FieldValue::new(
                Vec3::new(vals[4], vals[5], vals[6]),
                Vec3::new(vals[7], vals[8], vals[9]),
            ),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{analytic_dipole, StaticBlob, Vacuum};

    fn rel(a: Vec3, b: Vec3) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn vacuum_has_no_field() {
        let q = FieldQuadrature::new(FieldResolution::coarse()).unwrap();
        let f = eval_retarded(&Vacuum, 3.0, &Vec3::new(1.0, 2.0, 3.0), &q).unwrap();
        assert_eq!(f, FieldValue::ZERO);
    }

    #[test]
    fn coulomb_outside_blob_in_every_regime() {
        let blob = StaticBlob::new(2.0, 0.5).unwrap();
        let q = FieldQuadrature::default();
        // inside-cap boundary, cap regime, far regime
        for r in [4.0, 5.5, 12.0, 40.0] {
            let x = Vec3::new(0.3, -0.5, 0.8).normalize() * r;
            let f = eval_retarded(&blob, 1.0, &x, &q).unwrap();
            let coulomb = x * (2.0 / r.powi(3));
            assert!(rel(f.e, coulomb) < 1e-6, "r={r} rel={}", rel(f.e, coulomb));
            assert_eq!(f.b, Vec3::zeros());
        }
    }

    #[test]
    fn field_inside_blob_matches_gauss_law() {
        // E(r) = Q erf-profile enclosed charge / r²
        let sigma = 1.0;
        let blob = StaticBlob::new(1.0, sigma).unwrap();
        let q = FieldQuadrature::default();
        let r: f64 = 1.3;
        let x = Vec3::new(0.0, 0.0, r);
        let f = eval_retarded(&blob, 0.0, &x, &q).unwrap();
        // enclosed fraction of a 3D Gaussian: erf(z/√2) - √(2/π) z e^{-z²/2}
        let z = r / sigma;
        let erf = libm_erf(z / 2f64.sqrt());
        let frac = erf - (2.0 / PI).sqrt() * z * (-0.5 * z * z).exp();
        let expect = frac / (r * r);
        assert!((f.e.z - expect).abs() < 1e-7 * expect, "{} vs {}", f.e.z, expect);
    }

    // Abramowitz-Stegun 7.1.26 is too crude; use the series, fine for z < 3.
    fn libm_erf(z: f64) -> f64 {
        let mut sum = 0.0;
        let mut term = z;
        let mut n = 0;
        while term.abs() > 1e-17 {
            sum += term / (2 * n + 1) as f64;
            n += 1;
            term *= -z * z / n as f64;
        }
        2.0 / PI.sqrt() * sum
    }

    #[test]
    fn quasi_static_dipole_near_zone() {
        let d = analytic_dipole(1.0, 0.01, 0.5).unwrap();
        let q = FieldQuadrature::default();
        // phase where ḋ vanishes at the retarded time
        let x = Vec3::new(3.0, 1.0, 5.0);
        let t = 0.5 * PI / 0.01 + x.norm();
        let f = eval_retarded(&d, t, &x, &q).unwrap();
        let r = x.norm();
        let k = x / r;
        let dm = Vec3::z() * d.moment(t - r).d;
        let oracle = (k * (3.0 * dm.dot(&k)) - dm) / r.powi(3);
        assert!(rel(f.e, oracle) < 0.05, "rel {}", rel(f.e, oracle));
    }

    fn point_dipole_field(d: &crate::sources::AnalyticDipole, t: f64, x: &Vec3) -> FieldValue {
        let r = x.norm();
        let k = x / r;
        let m = d.moment(t - r);
        let (p, p1, p2) = (Vec3::z() * m.d, Vec3::z() * m.d1, Vec3::z() * m.d2);
        let e = (k * (3.0 * k.dot(&p)) - p) / r.powi(3)
            + (k * (3.0 * k.dot(&p1)) - p1) / (r * r)
            + k.cross(&k.cross(&p2)) / r;
        let b = p1.cross(&k) / (r * r) + p2.cross(&k) / r;
        FieldValue::new(e, b)
    }

    #[test]
    fn compact_dipole_matches_point_dipole_field() {
        let d = analytic_dipole(1.0, 0.2, 0.3).unwrap();
        let q = FieldQuadrature::default();
        for (t, x) in [
            (3.0, Vec3::new(2.0, 0.0, 2.5)),
            (10.0, Vec3::new(-5.0, 4.0, 1.0)),
            (30.0, Vec3::new(10.0, 20.0, -15.0)),
        ] {
            let f = eval_retarded(&d, t, &x, &q).unwrap();
            let o = point_dipole_field(&d, t, &x);
            assert!((f - o).magnitude() < 1e-2 * o.magnitude(), "x={x:?}");
        }
    }

    #[test]
    fn linearity_of_superposition() {
        use crate::sources::SourceSum;
        use std::sync::Arc;
        let a: Arc<dyn SourceHistory> = Arc::new(analytic_dipole(1.0, 0.7, 0.5).unwrap());
        let b: Arc<dyn SourceHistory> = Arc::new(StaticBlob::new(0.3, 0.8).unwrap());
        let sum = SourceSum::new(vec![a.clone(), b.clone()]);
        let q = FieldQuadrature::new(FieldResolution::coarse()).unwrap();
        for x in [Vec3::new(0.5, 0.2, 0.1), Vec3::new(3.0, 4.0, -2.0), Vec3::new(20.0, 1.0, 0.0)] {
            let fs = eval_retarded(&sum, 2.0, &x, &q).unwrap();
            let fa = eval_retarded(a.as_ref(), 2.0, &x, &q).unwrap();
            let fb = eval_retarded(b.as_ref(), 2.0, &x, &q).unwrap();
            let diff = (fs - (fa + fb)).magnitude();
            assert!(diff <= 1e-12 * fs.magnitude());
        }
    }

    #[test]
    fn bounding_domain_examples() {
        assert_eq!(bounding_radius(1.0, 0.0, 5.0, &Vec3::new(3.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(bounding_radius(1.0, 0.5, 0.0, &Vec3::zeros()).unwrap(), 2.0);
        assert!(bounding_radius(1.0, 1.0, 0.0, &Vec3::zeros()).is_err());
        let blob = StaticBlob::new(1.0, 0.25).unwrap();
        assert_eq!(bounding_domain(&blob, -7.0, &Vec3::new(0.0, 9.0, 0.0)).unwrap(), 2.0);
    }

    #[test]
    fn poynting_examples() {
        let s = poynting(&FieldValue::new(Vec3::x(), Vec3::y()));
        assert!((s.s - Vec3::z() / (4.0 * PI)).norm() < 1e-16);
        assert_eq!(poynting(&FieldValue::new(Vec3::x(), Vec3::zeros())).s, Vec3::zeros());
        assert_eq!(poynting(&FieldValue::new(Vec3::x(), Vec3::x() * 3.0)).s, Vec3::zeros());
    }

    #[test]
    fn fields_csv_round_trip() {
        let rows = vec![FieldSample {
            t: 0.1,
            x: Vec3::new(1.0 / 3.0, -2.0, 1e-300),
            field: FieldValue::new(Vec3::new(1.5, f64::MIN_POSITIVE, -0.0), Vec3::new(7.0, 8.0, 9.0)),
        }];
        let mut buf = Vec::new();
        write_fields_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"t,x1,x2,x3,E1,E2,E3,B1,B2,B3\n"));
        assert_eq!(read_fields_csv(&buf[..]).unwrap(), rows);
    }
}
