//! Far-field data at future null infinity.
//!
//! For a direction `k` and retarded time `u` the source is integrated over
//! the tilted slice `{(u + k·y, y)}`:
//!
//! - `J(u,k) = ∫ j(u + k·y, y) dy`, from which `M = (J·k)k - J` and
//!   `N = J ∧ k` are formed,
//! - `E^rad = -∫ (∇ρ + ∂_t j)(u + k·y, y) dy`, `B^rad = ∫ (∇∧j)(u + k·y, y) dy`
//!   (path A), or centred differences of `M` and `N` in `u` (path B).
//!
//! Because `M` and `N` are built from the same discrete sum `J`, the
//! algebraic identities between them hold to rounding error.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fields::{eval_batch, FieldQuadrature, FieldValue, Propagation};
use crate::geometry::{omega_domain, DirectionGrid, GaussLegendre};
use crate::sources::SourceHistory;
use crate::{extrapolate, Error, Result, Vec3};

/// Where the tilted-slice integral puts its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiationDomain {
    /// One ball per lump in body coordinates `w = y - X(τ)`.
    LumpAdapted,
    /// A single ball of radius `(1-a)⁻¹(R + a|u|)` about the origin.
    Envelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiationResolution {
    pub radial: usize,
    pub polar: usize,
    pub azimuth: usize,
    pub domain: RadiationDomain,
}

impl Default for RadiationResolution {
    fn default() -> Self {
        Self {
            radial: 24,
            polar: 12,
            azimuth: 24,
            domain: RadiationDomain::LumpAdapted,
        }
    }
}

impl RadiationResolution {
    pub fn validate(&self) -> Result<()> {
        if self.radial == 0 || self.polar == 0 || self.azimuth == 0 {
            return Err(Error::InvalidParameter(
                "radiation resolution node counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Unit-ball rule for a [`RadiationResolution`].
#[derive(Debug, Clone)]
pub struct RadiationQuadrature {
    res: RadiationResolution,
    ball: Vec<(Vec3, f64)>,
}

impl RadiationQuadrature {
    pub fn new(res: RadiationResolution) -> Result<Self> {
        res.validate()?;
        let radial = GaussLegendre::new(res.radial);
        let dirs = DirectionGrid::product(res.polar, res.azimuth);
        let mut ball = Vec::with_capacity(radial.len() * dirs.len());
        for (r, wr) in radial.mapped(0.0, 1.0) {
            for (k, wk) in dirs.iter() {
                ball.push((k * r, wr * r * r * wk));
            }
        }
        Ok(Self { res, ball })
    }

    pub fn resolution(&self) -> &RadiationResolution {
        &self.res
    }
}

impl Default for RadiationQuadrature {
    fn default() -> Self {
        Self::new(RadiationResolution::default()).expect("default resolution is valid")
    }
}

/// Raw tilted-slice integrals for one `(u, k)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TiltedIntegrals {
    /// `∫ j`.
    pub j: Vec3,
    /// `-∫ (∇ρ + ∂_t j)`.
    pub e: Vec3,
    /// `∫ ∇∧j`.
    pub b: Vec3,
}

const MAX_SLICE_ITERATIONS: usize = 400;

/// Solves `τ = u + k·(X(τ) + w)`.
fn slice_time(
    src: &dyn SourceHistory,
    lump: usize,
    u: f64,
    k: &Vec3,
    w: &Vec3,
    start: f64,
) -> Result<(f64, Vec3, Vec3)> {
    let speed = src.lump_speed(lump);
    let tol = 1e-14 * (1.0 + u.abs());
    let mut tau = start;
    for _ in 0..MAX_SLICE_ITERATIONS {
        let (c, v) = src.lump_motion(lump, tau)?;
        let next = u + k.dot(&(c + w));
        if speed == 0.0 || (next - tau).abs() <= tol {
            let (c, v) = if speed == 0.0 { (c, v) } else { src.lump_motion(lump, next)? };
            return Ok((next, c, v));
        }
        tau = next;
    }
    Err(Error::Resolution(format!(
        "tilted-slice time of lump {lump} did not converge at u = {u}"
    )))
}

/// Integrals over the slice `{(u + k·y, y)}`.
pub fn tilted_integrals(
    src: &dyn SourceHistory,
    u: f64,
    k: &Vec3,
    q: &RadiationQuadrature,
    with_derivatives: bool,
) -> Result<TiltedIntegrals> {
    let mut acc = TiltedIntegrals::default();
    let mut add = |s: &crate::sources::SourceSample, f: f64| {
        acc.j += s.j * f;
        if with_derivatives {
            acc.e -= (s.grad_rho + s.dt_j) * f;
            acc.b += s.curl_j * f;
        }
    };
    match q.res.domain {
        RadiationDomain::LumpAdapted => {
            for lump in 0..src.lump_count() {
                let h = src.lump_radius(lump);
                let h3 = h * h * h;
                let (tau_c, _, _) = slice_time(src, lump, u, k, &Vec3::zeros(), u)?;
                for (unit, weight) in &q.ball {
                    let w = unit * h;
                    let (tau, c, v) = slice_time(src, lump, u, k, &w, tau_c)?;
                    let jac = 1.0 / (1.0 - k.dot(&v));
                    let s = src.lump_sample(lump, tau, &(c + w))?;
                    add(&s, weight * h3 * jac);
                }
            }
        }
        RadiationDomain::Envelope => {
            let env = src.envelope();
            let radius = omega_domain(u, env.radius, env.speed)?;
            let r3 = radius.powi(3);
            for (unit, weight) in &q.ball {
                let y = unit * radius;
                let s = src.sample(u + k.dot(&y), &y)?;
                add(&s, weight * r3);
            }
        }
    }
    Ok(acc)
}

#[inline]
fn m_from_j(j: &Vec3, k: &Vec3) -> Vec3 {
    k * j.dot(k) - j
}

#[inline]
fn n_from_j(j: &Vec3, k: &Vec3) -> Vec3 {
    j.cross(k)
}

/// Far-field data for one direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiationRecord {
    pub k: Vec3,
    /// Solid-angle weight of `k` in the direction grid.
    pub weight: f64,
    pub m: Vec3,
    pub n: Vec3,
    /// Path A (direct integrals).
    pub e_rad: Vec3,
    pub b_rad: Vec3,
    /// Path B (centred differences of `M`, `N`), when computed.
    pub e_rad_fd: Option<Vec3>,
    pub b_rad_fd: Option<Vec3>,
}

/// Far-field data at one retarded time over a direction grid.
#[derive(Debug, Clone, Serialize)]
pub struct RadiationSlice {
    pub u: f64,
    pub du: Option<f64>,
    pub records: Vec<RadiationRecord>,
    /// `max_k |A - B| / max_k |A|` over `(E^rad, B^rad)`; zero when path B is absent.
    pub ab_discrepancy: f64,
}

impl RadiationSlice {
    pub fn max_m(&self) -> f64 {
        self.records.iter().fold(0.0, |a, r| a.max(r.m.norm()))
    }

    pub fn max_e_rad(&self) -> f64 {
        self.records.iter().fold(0.0, |a, r| a.max(r.e_rad.norm()))
    }
}

/// `M(u,k)` and `N(u,k)` on a direction grid (radiation fields left at zero).
pub fn compute_mn(
    src: &dyn SourceHistory,
    u: f64,
    grid: &DirectionGrid,
    q: &RadiationQuadrature,
) -> Result<RadiationSlice> {
    let records = grid
        .nodes()
        .par_iter()
        .zip(grid.weights().par_iter())
        .map(|(k, &weight)| {
            let t = tilted_integrals(src, u, k, q, false)?;
            Ok(RadiationRecord {
                k: *k,
                weight,
                m: m_from_j(&t.j, k),
                n: n_from_j(&t.j, k),
                e_rad: Vec3::zeros(),
                b_rad: Vec3::zeros(),
                e_rad_fd: None,
                b_rad_fd: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RadiationSlice {
        u,
        du: None,
        records,
        ab_discrepancy: 0.0,
    })
}

/// `M`, `N` and the radiation field by both paths.
pub fn compute_radiation(
    src: &dyn SourceHistory,
    u: f64,
    grid: &DirectionGrid,
    q: &RadiationQuadrature,
    du: f64,
) -> Result<RadiationSlice> {
    if !(du > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radiation time step must be positive, got {du}"
        )));
    }
    let records = grid
        .nodes()
        .par_iter()
        .zip(grid.weights().par_iter())
        .map(|(k, &weight)| {
            let c = tilted_integrals(src, u, k, q, true)?;
            let p = tilted_integrals(src, u + du, k, q, false)?;
            let m = tilted_integrals(src, u - du, k, q, false)?;
            let dj = (p.j - m.j) / (2.0 * du);
            Ok(RadiationRecord {
                k: *k,
                weight,
                m: m_from_j(&c.j, k),
                n: n_from_j(&c.j, k),
                e_rad: c.e,
                b_rad: c.b,
                e_rad_fd: Some(m_from_j(&dj, k)),
                b_rad_fd: Some(n_from_j(&dj, k)),
            })
        })
        .collect::<Result<Vec<RadiationRecord>>>()?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for r in &records {
        let de = r.e_rad - r.e_rad_fd.unwrap();
        let db = r.b_rad - r.b_rad_fd.unwrap();
        worst = worst.max((de.norm_squared() + db.norm_squared()).sqrt());
        scale = scale.max((r.e_rad.norm_squared() + r.b_rad.norm_squared()).sqrt());
    }
    Ok(RadiationSlice {
        u,
        du: Some(du),
        records,
        ab_discrepancy: if scale > 0.0 { worst / scale } else { worst },
    })
}

/// The four normalised residuals of a pair `(P, Q)` of transverse fields:
/// `max(|P·k|, |Q·k|)`, `|P·Q|`, `||P| - |Q||`, `|(P∧Q)·k - |P|²|`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairResiduals {
    pub transverse: f64,
    pub orthogonal: f64,
    pub equal_length: f64,
    pub orientation: f64,
}

impl PairResiduals {
    pub fn max(&self) -> f64 {
        self.transverse
            .max(self.orthogonal)
            .max(self.equal_length)
            .max(self.orientation)
    }
}

/// Residuals of `(P_i, Q_i)` at directions `k_i`, normalised by `max|P|`
/// (linear ones) and `max|P|²` (quadratic ones).
pub fn pair_residuals(samples: &[(Vec3, Vec3, Vec3)]) -> PairResiduals {
    let scale = samples.iter().fold(0.0f64, |a, (_, p, _)| a.max(p.norm()));
    let s1 = if scale > 0.0 { scale } else { 1.0 };
    let s2 = s1 * s1;
    let mut r = PairResiduals::default();
    for (k, p, q) in samples {
        r.transverse = r.transverse.max(p.dot(k).abs().max(q.dot(k).abs()) / s1);
        r.orthogonal = r.orthogonal.max(p.dot(q).abs() / s2);
        r.equal_length = r.equal_length.max((p.norm() - q.norm()).abs() / s1);
        r.orientation = r
            .orientation
            .max((p.cross(q).dot(k) - p.norm_squared()).abs() / s2);
    }
    r
}

/// All identity residuals of a slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub u: f64,
    /// `(M, N)`.
    pub mn: PairResiduals,
    /// `(E^rad, B^rad)` by path A.
    pub radiation_a: PairResiduals,
    /// `(E^rad, B^rad)` by path B.
    pub radiation_b: Option<PairResiduals>,
    /// `max |N - k∧M| / max|M|`.
    pub planar: f64,
}

pub fn identity_residuals(slice: &RadiationSlice) -> IdentityResiduals {
    let mn: Vec<_> = slice.records.iter().map(|r| (r.k, r.m, r.n)).collect();
    let rad: Vec<_> = slice.records.iter().map(|r| (r.k, r.e_rad, r.b_rad)).collect();
    let fd: Option<Vec<_>> = slice
        .records
        .iter()
        .map(|r| Some((r.k, r.e_rad_fd?, r.b_rad_fd?)))
        .collect();
    let scale = slice.max_m();
    let s1 = if scale > 0.0 { scale } else { 1.0 };
    let planar = slice
        .records
        .iter()
        .fold(0.0f64, |a, r| a.max((r.n - r.k.cross(&r.m)).norm() / s1));
    IdentityResiduals {
        u: slice.u,
        mn: pair_residuals(&mn),
        radiation_a: pair_residuals(&rad),
        radiation_b: fd.map(|v| pair_residuals(&v)),
        planar,
    }
}

/// Largest `|(j·k)k - j|` on the boundary sphere of `Ω_a(u)`; the
/// integration by parts behind `E^rad = ∂_u M` needs it to vanish.
pub fn boundary_integrand_max(
    src: &dyn SourceHistory,
    u: f64,
    k: &Vec3,
    sphere: &DirectionGrid,
) -> Result<f64> {
    let env = src.envelope();
    let radius = omega_domain(u, env.radius, env.speed)?;
    let mut worst: f64 = 0.0;
    for n in sphere.nodes() {
        let y = n * radius;
        let s = src.sample(u + k.dot(&y), &y)?;
        worst = worst.max(m_from_j(&s.j, k).norm());
    }
    Ok(worst)
}

/// Ladder of `|x| F_ret(u + |x|, x)` approaching the radiation field.
#[derive(Debug, Clone, Serialize)]
pub struct FarFieldTable {
    pub u: f64,
    pub k: Vec3,
    pub radii: Vec<f64>,
    pub scaled: Vec<FieldValue>,
    /// `| |x| F_ret - F^rad |` for each radius.
    pub differences: Vec<f64>,
    pub radiation: FieldValue,
    /// Log-log slope of `differences` against the radii.
    pub rate: f64,
    /// Richardson limit (in `1/r`) of the scaled field over the whole ladder.
    pub extrapolated: FieldValue,
    /// `|extrapolated - F^rad| / |F^rad|`.
    pub limit_discrepancy: f64,
}

pub fn far_field_convergence(
    src: &dyn SourceHistory,
    u: f64,
    k: &Vec3,
    radii: &[f64],
    fq: &FieldQuadrature,
    rq: &RadiationQuadrature,
) -> Result<FarFieldTable> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "far-field ladder needs at least two strictly increasing radii".into(),
        ));
    }
    let k = k.normalize();
    let points: Vec<(f64, Vec3)> = radii.iter().map(|&r| (u + r, k * r)).collect();
    let fields = eval_batch(src, &points, fq, Propagation::Retarded)?;
    let scaled: Vec<FieldValue> = fields.iter().zip(radii).map(|(f, &r)| *f * r).collect();
    let t = tilted_integrals(src, u, &k, rq, true)?;
    let radiation = FieldValue::new(t.e, t.b);
    let differences: Vec<f64> = scaled.iter().map(|s| (*s - radiation).magnitude()).collect();
    let (rate, _) = extrapolate::loglog_fit(radii, &differences)?;
    let steps: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
    let comp = |sel: &dyn Fn(&FieldValue) -> f64| -> Result<f64> {
        let vals: Vec<f64> = scaled.iter().map(sel).collect();
        extrapolate::richardson_to_zero(&steps, &vals)
    };
    let extrapolated = FieldValue::new(
        Vec3::new(comp(&|f| f.e.x)?, comp(&|f| f.e.y)?, comp(&|f| f.e.z)?),
        Vec3::new(comp(&|f| f.b.x)?, comp(&|f| f.b.y)?, comp(&|f| f.b.z)?),
    );
    let denom = radiation.magnitude();
    let limit_discrepancy = (extrapolated - radiation).magnitude() / if denom > 0.0 { denom } else { 1.0 };
    Ok(FarFieldTable {
        u,
        k,
        radii: radii.to_vec(),
        scaled,
        differences,
        radiation,
        rate,
        extrapolated,
        limit_discrepancy,
    })
}

pub const RADIATION_CSV_HEADER: &str =
    "u,k1,k2,k3,M1,M2,M3,N1,N2,N3,Erad1,Erad2,Erad3,Brad1,Brad2,Brad3";

pub fn write_radiation_csv(mut out: impl Write, slices: &[RadiationSlice]) -> Result<()> {
    writeln!(out, "{RADIATION_CSV_HEADER}")?;
    for s in slices {
        for r in &s.records {
            let mut cols = vec![crate::fmt_f64(s.u)];
            for v in [r.k, r.m, r.n, r.e_rad, r.b_rad] {
                cols.extend(v.iter().map(|c| crate::fmt_f64(*c)));
            }
            writeln!(out, "{}", cols.join(","))?;
        }
    }
    Ok(())
}

/// JSON block with the residuals of each slice.
pub fn residuals_json(slices: &[RadiationSlice]) -> serde_json::Value {
    let list: Vec<_> = slices
        .iter()
        .map(|s| {
            serde_json::json!({
                "u": s.u,
                "du": s.du,
                "ab_discrepancy": s.ab_discrepancy,
                "residuals": identity_residuals(s),
            })
        })
        .collect();
    serde_json::Value::Array(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{analytic_dipole, StaticBlob, Vacuum};

    #[test]
    fn hand_checked_pairs() {
        let r = pair_residuals(&[(Vec3::z(), Vec3::x(), Vec3::y())]);
        assert_eq!(r.max(), 0.0);
        for (q, rr) in [(1.0, 0.0), (0.3, -2.0), (-1.5, 0.25)] {
            let m = Vec3::new(q, rr, 0.0);
            let n = Vec3::new(-rr, q, 0.0);
            assert!(pair_residuals(&[(Vec3::z(), m, n)]).max() < 1e-15);
        }
        let bad = pair_residuals(&[(Vec3::z(), Vec3::x(), Vec3::x())]);
        assert!(bad.orthogonal > 0.5);
    }

    #[test]
    fn currentless_sources_do_not_radiate() {
        let grid = DirectionGrid::lebedev26();
        let q = RadiationQuadrature::default();
        let s = compute_radiation(&StaticBlob::new(1.0, 0.5).unwrap(), 2.0, &grid, &q, 0.01).unwrap();
        for r in &s.records {
            assert_eq!(r.m, Vec3::zeros());
            assert!(r.e_rad.norm() < 1e-10 && r.b_rad.norm() < 1e-10);
        }
        let v = compute_mn(&Vacuum, 0.0, &grid, &q).unwrap();
        assert!(v.records.iter().all(|r| r.m == Vec3::zeros() && r.n == Vec3::zeros()));
    }

    #[test]
    fn compact_dipole_matches_point_formulas() {
        let d = analytic_dipole(1.0, 0.05, 1.0).unwrap();
        let grid = DirectionGrid::lebedev26();
        let q = RadiationQuadrature::default();
        let u = 7.0;
        let s = compute_radiation(&d, u, &grid, &q, 1e-3 * d.period()).unwrap();
        let m = d.moment(u);
        let (d1, d2) = (Vec3::z() * m.d1, Vec3::z() * m.d2);
        let mmax = d1.norm();
        let emax = d2.norm();
        for r in &s.records {
            let k = r.k;
            assert!((r.m - (k * d1.dot(&k) - d1)).norm() <= 0.02 * mmax);
            assert!((r.n - d1.cross(&k)).norm() <= 0.02 * mmax);
            assert!((r.e_rad - k.cross(&k.cross(&d2))).norm() <= 0.02 * emax);
            assert!((r.b_rad - d2.cross(&k)).norm() <= 0.02 * emax);
        }
    }

    #[test]
    fn envelope_domain_agrees_for_static_lumps() {
        let d = analytic_dipole(1.0, 0.4, 0.7).unwrap();
        let grid = DirectionGrid::lebedev26();
        let a = compute_mn(&d, 1.3, &grid, &RadiationQuadrature::default()).unwrap();
        let env = RadiationQuadrature::new(RadiationResolution {
            domain: RadiationDomain::Envelope,
            ..Default::default()
        })
        .unwrap();
        let b = compute_mn(&d, 1.3, &grid, &env).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert!((x.m - y.m).norm() < 1e-12);
        }
    }

    #[test]
    fn boundary_integrand_vanishes() {
        let d = analytic_dipole(1.0, 0.4, 0.7).unwrap();
        let v = boundary_integrand_max(&d, 2.0, &Vec3::x(), &DirectionGrid::product(8, 16)).unwrap();
        // Only the e^{-32} truncation level of the Gaussian remains.
        assert!(v < 1e-14, "{v}");
    }

    #[test]
    fn radiation_csv_layout() {
        let d = analytic_dipole(1.0, 0.4, 0.7).unwrap();
        let grid = DirectionGrid::lebedev26();
        let s = compute_radiation(&d, 1.0, &grid, &RadiationQuadrature::default(), 0.01).unwrap();
        let mut buf = Vec::new();
        write_radiation_csv(&mut buf, std::slice::from_ref(&s)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RADIATION_CSV_HEADER);
        assert_eq!(lines.clone().count(), 26);
        assert_eq!(lines.next().unwrap().split(',').count(), 16);
        let json = residuals_json(&[s]);
        assert!(json[0]["residuals"]["mn"]["orthogonal"].as_f64().unwrap() < 1e-12);
    }
}
