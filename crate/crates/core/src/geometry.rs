//! Quadrature rules and spacetime geometry primitives.
//!
//! Every integral in the crate is built from three rules: Gauss-Legendre on an
//! interval, a product rule on the unit sphere (Gauss-Legendre in the polar
//! cosine times a uniform azimuthal rule) and the tensor product of the two on
//! balls and spherical shells.

use std::f64::consts::PI;

use crate::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Highest polynomial degree accepted by [`sphere_quadrature`].
pub const MAX_SPHERE_ORDER: usize = 255;

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..(n + 1) / 2 {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let (pn, pn1) = if n == 0 { (1.0, 0.0) } else { (p1, p0) };
    let d = n as f64 * (x * pn - pn1) / (x * x - 1.0);
    (pn, d)
}

/// Quadrature rule on the unit sphere. Weights carry the solid angle, so a
/// full-sphere grid sums to `4π`.
#[derive(Debug, Clone)]
pub struct DirectionGrid {
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    order: usize,
}

impl DirectionGrid {
    /// Product rule: `n_polar` Gauss-Legendre nodes in `cos θ` times
    /// `n_azimuth` equally spaced azimuths. Exact for spherical harmonics of
    /// degree `min(2 n_polar - 1, n_azimuth - 1)`.
    pub fn product(n_polar: usize, n_azimuth: usize) -> Self {
        assert!(n_polar >= 1 && n_azimuth >= 1);
        let gl = GaussLegendre::new(n_polar);
        let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        let dphi = 2.0 * PI / n_azimuth as f64;
        for (&c, &w) in gl.nodes().iter().zip(gl.weights()) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for m in 0..n_azimuth {
                let phi = (m as f64 + 0.5) * dphi;
                nodes.push(Vec3::new(s * phi.cos(), s * phi.sin(), c));
                weights.push(w * dphi);
            }
        }
        let order = (2 * n_polar - 1).min(n_azimuth - 1);
        Self {
            nodes,
            weights,
            order,
        }
    }

    /// The 26-point octahedral rule (6 vertices, 12 edge midpoints, 8 cube
    /// corners); exact up to degree 7.
    pub fn lebedev26() -> Self {
        let mut nodes = Vec::with_capacity(26);
        let mut weights = Vec::with_capacity(26);
        let four_pi = 4.0 * PI;
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut v = Vec3::zeros();
                v[axis] = sign;
                nodes.push(v);
                weights.push(four_pi / 21.0);
            }
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            for sa in [1.0, -1.0] {
                for sb in [1.0, -1.0] {
                    let mut v = Vec3::zeros();
                    v[a] = sa * h;
                    v[b] = sb * h;
                    nodes.push(v);
                    weights.push(four_pi * 4.0 / 105.0);
                }
            }
        }
        let c = 1.0 / 3f64.sqrt();
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                for sz in [1.0, -1.0] {
                    nodes.push(Vec3::new(sx * c, sy * c, sz * c));
                    weights.push(four_pi * 9.0 / 280.0);
                }
            }
        }
        Self {
            nodes,
            weights,
            order: 7,
        }
    }

    /// Directions within `half_angle` of `axis`: Gauss-Legendre in the polar
    /// angle (with the `sin θ` Jacobian folded into the weights) times a
    /// uniform azimuthal rule.
    pub fn cap(axis: Vec3, half_angle: f64, polar: &GaussLegendre, n_azimuth: usize) -> Self {
        let frame = Frame::along(axis);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(polar.len() * n_azimuth);
        let mut weights = Vec::with_capacity(polar.len() * n_azimuth);
        let trig: Vec<(f64, f64)> = (0..n_azimuth)
            .map(|m| {
                let phi = (m as f64 + 0.5) * dphi;
                (phi.cos(), phi.sin())
            })
            .collect();
        for (theta, w) in polar.mapped(0.0, half_angle) {
            let (st, ct) = theta.sin_cos();
            for &(cp, sp) in &trig {
                nodes.push(frame.to_world(st * cp, st * sp, ct));
                weights.push(w * st * dphi);
            }
        }
        Self {
            nodes,
            weights,
            order: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Declared polynomial exactness degree (0 for cap grids).
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec3, f64)> {
        self.nodes.iter().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, mut f: impl FnMut(&Vec3) -> f64) -> f64 {
        self.iter().map(|(k, w)| w * f(k)).sum()
    }

    /// The grid with every node mapped through the rotation `rot`.
    pub fn rotated(&self, rot: &nalgebra::Rotation3<f64>) -> Self {
        Self {
            nodes: self.nodes.iter().map(|k| rot * k).collect(),
            weights: self.weights.clone(),
            order: self.order,
        }
    }
}

/// Direction grid exact for polynomials in `k` up to `order`.
pub fn sphere_quadrature(order: usize) -> Result<DirectionGrid> {
    if order == 0 {
        return Err(Error::InvalidParameter(
            "sphere quadrature order must be at least 1".into(),
        ));
    }
    if order > MAX_SPHERE_ORDER {
        return Err(Error::OrderTooHigh {
            requested: order,
            max: MAX_SPHERE_ORDER,
        });
    }
    let n_polar = order / 2 + 1;
    // Even azimuth count keeps the grid antipodally symmetric.
    let mut n_azimuth = order + 1;
    if n_azimuth % 2 == 1 {
        n_azimuth += 1;
    }
    Ok(DirectionGrid::product(n_polar, n_azimuth))
}

/// Orthonormal frame whose third axis is a given direction.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
}

impl Frame {
    pub fn along(axis: Vec3) -> Self {
        let e3 = axis.normalize();
        let helper = if e3.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        let e1 = helper.cross(&e3).normalize();
        let e2 = e3.cross(&e1);
        Self { e1, e2, e3 }
    }

    #[inline]
    pub fn to_world(&self, a: f64, b: f64, c: f64) -> Vec3 {
        self.e1 * a + self.e2 * b + self.e3 * c
    }
}

/// Volume rule on a ball or spherical shell. Weights carry volume.
#[derive(Debug, Clone)]
pub struct BallGrid {
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
    center: Vec3,
    inner_radius: f64,
    radius: f64,
}

impl BallGrid {
    /// Shell `inner ≤ |y - center| ≤ outer`: Gauss-Legendre in the radius
    /// (weight `r²` folded in) times `dirs`.
    pub fn shell(
        center: Vec3,
        inner: f64,
        outer: f64,
        radial_nodes: usize,
        dirs: &DirectionGrid,
    ) -> Result<Self> {
        if !(outer > 0.0) || inner < 0.0 || inner >= outer {
            return Err(Error::InvalidParameter(format!(
                "shell radii must satisfy 0 <= inner < outer, got [{inner}, {outer}]"
            )));
        }
        if radial_nodes == 0 {
            return Err(Error::InvalidParameter(
                "at least one radial node is required".into(),
            ));
        }
        let gl = GaussLegendre::new(radial_nodes);
        let mut nodes = Vec::with_capacity(radial_nodes * dirs.len());
        let mut weights = Vec::with_capacity(radial_nodes * dirs.len());
        for (r, wr) in gl.mapped(inner, outer) {
            for (k, wk) in dirs.iter() {
                nodes.push(center + k * r);
                weights.push(wr * r * r * wk);
            }
        }
        Ok(Self {
            nodes,
            weights,
            center,
            inner_radius: inner,
            radius: outer,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec3, f64)> {
        self.nodes.iter().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, mut f: impl FnMut(&Vec3) -> f64) -> f64 {
        self.iter().map(|(y, w)| w * f(y)).sum()
    }

    /// Analytic volume of the covered region.
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * (self.radius.powi(3) - self.inner_radius.powi(3))
    }
}

/// Ball of the given radius around the origin.
pub fn ball_quadrature(radius: f64, radial_nodes: usize, angular_order: usize) -> Result<BallGrid> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    let dirs = sphere_quadrature(angular_order)?;
    BallGrid::shell(Vec3::zeros(), 0.0, radius, radial_nodes, &dirs)
}

/// Radius `(1-a)^{-1}(R + a|u|)` of the ball that contains the support of the
/// sources on the tilted slice `{(u + k·y, y)}` for every direction `k`.
pub fn omega_domain(u: f64, support_radius: f64, speed: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&speed) {
        return Err(Error::InvalidParameter(format!(
            "support speed a must satisfy 0 <= a < 1, got {speed}"
        )));
    }
    if !(support_radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "support radius R must be positive, got {support_radius}"
        )));
    }
    Ok((support_radius + speed * u.abs()) / (1.0 - speed))
}

/// Retarded time `u = t - r`, advanced time `v = t + r` and radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeCoordinates {
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

impl ConeCoordinates {
    pub fn from_event(t: f64, x: &Vec3) -> Self {
        let r = x.norm();
        Self {
            u: t - r,
            v: t + r,
            r,
        }
    }

    pub fn from_retarded(u: f64, r: f64) -> Self {
        Self { u, v: u + 2.0 * r, r }
    }

    pub fn from_advanced(v: f64, r: f64) -> Self {
        Self { u: v - 2.0 * r, v, r }
    }

    pub fn time(&self) -> f64 {
        0.5 * (self.u + self.v)
    }

    /// `v - u - 2r`, zero for consistent coordinates.
    pub fn consistency_defect(&self) -> f64 {
        self.v - self.u - 2.0 * self.r
    }
}
