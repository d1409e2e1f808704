//! Characteristics of the Vlasov equation and the self-consistent evolution.
//!
//! Particles follow `dX/ds = P̂`, `dP/ds = q (E + P̂ ∧ B)` with
//! `P̂ = P/√(m² + |P|²)`. In a self-consistent run the field is the retarded
//! field of the particles themselves; it is obtained slab by slab with a
//! Picard iteration, which converges because the field at time `t` only uses
//! the sources at times `≤ t`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fields::{eval_retarded, FieldProvider, FieldQuadrature, FieldValue};
use crate::sources::{
    CausalGuard, Knot, ParticleEnsemble, ParticleHistory, SourceHistory, SpeciesParams,
};
use crate::{fmt_f64, Error, Result, Vec3};

/// Default integrator step.
pub const DEFAULT_STEP: f64 = 0.02;

/// Phase-space point of one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicState {
    pub x: Vec3,
    pub p: Vec3,
    pub species: usize,
}

fn rhs(sp: &SpeciesParams, p: &Vec3, f: &FieldValue) -> (Vec3, Vec3) {
    let v = sp.velocity(p);
    (v, (f.e + v.cross(&f.b)) * sp.charge)
}

fn rk4_step(
    field: &dyn FieldProvider,
    sp: &SpeciesParams,
    t: f64,
    h: f64,
    x: Vec3,
    p: Vec3,
) -> Result<(Vec3, Vec3)> {
    let f1 = field.field(t, &x)?;
    let (k1x, k1p) = rhs(sp, &p, &f1);
    let (x2, p2) = (x + k1x * (0.5 * h), p + k1p * (0.5 * h));
    let (k2x, k2p) = rhs(sp, &p2, &field.field(t + 0.5 * h, &x2)?);
    let (x3, p3) = (x + k2x * (0.5 * h), p + k2p * (0.5 * h));
    let (k3x, k3p) = rhs(sp, &p3, &field.field(t + 0.5 * h, &x3)?);
    let (x4, p4) = (x + k3x * h, p + k3p * h);
    let (k4x, k4p) = rhs(sp, &p4, &field.field(t + h, &x4)?);
    Ok((
        x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0),
        p + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0),
    ))
}

fn step_count(t0: f64, t1: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !t0.is_finite() || !t1.is_finite() || t1 < t0 {
        return Err(Error::InvalidParameter(format!(
            "push needs t0 <= t1 and a positive step, got [{t0}, {t1}] with step {step}"
        )));
    }
    Ok(((t1 - t0) / step - 1e-9).ceil().max(0.0) as usize)
}

/// Classical fourth-order Runge-Kutta push of every state from `t0` to `t1`.
/// `P̂` is always formed from the mass shell, so `|P̂| < 1` for any finite `P`.
pub fn push_characteristics(
    states: &[CharacteristicState],
    species: &[SpeciesParams],
    field: &dyn FieldProvider,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<Vec<CharacteristicState>> {
    let mut traj = push_recording(states, species, field, t0, t1, step)?;
    Ok(traj.pop().unwrap())
}

/// Like [`push_characteristics`] but returns the states at every step,
/// `t0 + k (t1 - t0)/n` for `k = 0..=n`.
pub fn push_recording(
    states: &[CharacteristicState],
    species: &[SpeciesParams],
    field: &dyn FieldProvider,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<Vec<Vec<CharacteristicState>>> {
    let n = step_count(t0, t1, step)?;
    for s in states {
        if s.species >= species.len() {
            return Err(Error::InvalidParameter(format!("unknown species {}", s.species)));
        }
    }
    let h = if n == 0 { 0.0 } else { (t1 - t0) / n as f64 };
    let per_particle: Vec<Vec<CharacteristicState>> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let sp = &species[s.species];
            let mut out = Vec::with_capacity(n + 1);
            out.push(*s);
            let (mut x, mut p) = (s.x, s.p);
            for k in 0..n {
                let t = t0 + h * k as f64;
                (x, p) = rk4_step(field, sp, t, h, x, p)?;
                if !x.iter().chain(p.iter()).all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(i));
                }
                out.push(CharacteristicState { x, p, species: s.species });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..=n)
        .map(|k| per_particle.iter().map(|traj| traj[k]).collect())
        .collect())
}

/// Slab length, fixed-point tolerance, iteration cap and integrator step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabSchedule {
    pub slab: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step: f64,
}

impl Default for SlabSchedule {
    fn default() -> Self {
        Self {
            slab: 0.5,
            tolerance: 1e-10,
            max_iterations: 8,
            step: DEFAULT_STEP,
        }
    }
}

impl SlabSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.slab > 0.0) || !(self.tolerance > 0.0) || !(self.step > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidParameter(format!(
                "slab schedule needs positive slab, tolerance, step and iteration cap, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Steps per slab and the step actually used (the slab is split evenly).
    pub fn steps_per_slab(&self) -> (usize, f64) {
        let m = (self.slab / self.step).round().max(1.0) as usize;
        (m, self.slab / m as f64)
    }
}

/// Retarded field of a history, refusing any source query later than the
/// evaluation time.
pub struct GuardedRetardedField<'a> {
    pub history: &'a dyn SourceHistory,
    pub quadrature: &'a FieldQuadrature,
}

impl FieldProvider for GuardedRetardedField<'_> {
    fn field(&self, t: f64, x: &Vec3) -> Result<FieldValue> {
        let guard = CausalGuard::new(self.history, t);
        eval_retarded(&guard, t, x, self.quadrature)
    }
}

/// Outcome of one slab of the Picard iteration.
#[derive(Debug, Clone, Serialize)]
pub struct SlabReport {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub iterations: usize,
    /// `sup(|ΔX| + |ΔP|)/Δt_slab` of the last iteration.
    pub residual: f64,
    /// Ratio of the last two residuals.
    pub contraction: f64,
    /// Residual of every iteration.
    pub history: Vec<f64>,
    /// `max |P|` at the end of the slab.
    pub momentum_support: f64,
    /// Every particle satisfies `|X| ≤ R + a t` at the slab knots.
    pub within_envelope: bool,
}

/// One line of the trajectory log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub species: usize,
    pub x: Vec3,
    pub p: Vec3,
}

pub const TRAJECTORY_HEADER: &str = "t species x1 x2 x3 p1 p2 p3";

/// Writes every `stride`-th time level of a history.
pub fn write_trajectory_log(out: &mut impl Write, history: &ParticleHistory, stride: usize) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for row in trajectory_rows(history, stride) {
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            fmt_f64(row.t),
            row.species,
            fmt_f64(row.x.x),
            fmt_f64(row.x.y),
            fmt_f64(row.x.z),
            fmt_f64(row.p.x),
            fmt_f64(row.p.y),
            fmt_f64(row.p.z)
        )?;
    }
    Ok(())
}

pub fn trajectory_rows(history: &ParticleHistory, stride: usize) -> Vec<LogRow> {
    let stride = stride.max(1);
    let last = history.levels() - 1;
    let mut rows = Vec::new();
    for k in (0..=last).filter(|k| k % stride == 0 || *k == last) {
        for (i, knot) in history.level(k).iter().enumerate() {
            rows.push(LogRow {
                t: history.level_time(k),
                species: history.particle_species(i),
                x: knot.x,
                p: knot.p,
            });
        }
    }
    rows
}

/// Result of a self-consistent run.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub history: ParticleHistory,
    pub slabs: Vec<SlabReport>,
    /// `(t, 𝒫(t))` at every slab boundary, starting at `t = 0`.
    pub momentum_support: Vec<(f64, f64)>,
    /// Convention used for the sources at `t < 0`.
    pub past_continuation: &'static str,
}

fn knots_of(states: &[CharacteristicState], species: &[SpeciesParams]) -> Vec<Knot> {
    states
        .iter()
        .map(|s| Knot {
            x: s.x,
            p: s.p,
            v: species[s.species].velocity(&s.p),
        })
        .collect()
}

fn states_of(history: &ParticleHistory, level: usize) -> Vec<CharacteristicState> {
    history
        .level(level)
        .iter()
        .enumerate()
        .map(|(i, k)| CharacteristicState {
            x: k.x,
            p: k.p,
            species: history.particle_species(i),
        })
        .collect()
}

/// Evolves an ensemble in its own retarded field from `t = 0` to `t_end`.
///
/// Before `t = 0` the particles move on straight lines with their initial
/// velocities. Each slab starts from a ballistic guess, then alternates
/// (field of the current guess) → (push) → (new guess) until the trajectories
/// change by less than the tolerance.
pub fn evolve_self_consistent(
    ensemble: &ParticleEnsemble,
    species: &[SpeciesParams],
    schedule: &SlabSchedule,
    quadrature: &FieldQuadrature,
    t_end: f64,
) -> Result<Evolution> {
    schedule.validate()?;
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_end must be non-negative, got {t_end}")));
    }
    let (m, h) = schedule.steps_per_slab();
    let mut history = ParticleHistory::start(ensemble, species, 0.0, h)?;
    let r0 = history
        .level(0)
        .iter()
        .fold(0.0f64, |a, k| a.max(k.x.norm()));
    let mut support = vec![(0.0, history.momentum_bound())];
    let mut slabs = Vec::new();
    let slab_count = (t_end / schedule.slab - 1e-9).ceil().max(0.0) as usize;
    for index in 0..slab_count {
        let base = history.levels();
        let t_start = history.level_time(base - 1);
        let start = states_of(&history, base - 1);
        // ballistic guess
        for j in 1..=m {
            let level = start
                .iter()
                .map(|s| {
                    let v = species[s.species].velocity(&s.p);
                    Knot { x: s.x + v * (h * j as f64), p: s.p, v }
                })
                .collect();
            history.push_level(level)?;
        }
        let t_stop = history.end_time();
        let mut residual = f64::INFINITY;
        let mut contraction = f64::NAN;
        let mut iterations = 0;
        let mut trace = Vec::new();
        while iterations < schedule.max_iterations {
            iterations += 1;
            let field = GuardedRetardedField {
                history: &history,
                quadrature,
            };
            let levels = push_recording(&start, species, &field, t_start, t_stop, h)?;
            let mut change = 0.0f64;
            for (j, level) in levels.iter().enumerate().skip(1) {
                for (s, old) in level.iter().zip(history.level(base - 1 + j)) {
                    change = change.max((s.x - old.x).norm() + (s.p - old.p).norm());
                }
            }
            let new_residual = change / schedule.slab;
            contraction = if residual.is_finite() && residual > 0.0 {
                new_residual / residual
            } else {
                f64::NAN
            };
            residual = new_residual;
            trace.push(residual);
            let mut next = history.clone();
            next.truncate_levels(base);
            for level in levels.iter().skip(1) {
                next.push_level(knots_of(level, species))?;
            }
            history = next;
            if residual < schedule.tolerance {
                break;
            }
        }
        if residual >= schedule.tolerance {
            return Err(Error::NoConvergence {
                slab: index,
                iterations,
                contraction,
            });
        }
        let a = history.envelope().speed;
        let within_envelope = (base - 1..history.levels()).all(|k| {
            let t = history.level_time(k);
            history
                .level(k)
                .iter()
                .all(|knot| knot.x.norm() <= r0 + a * t + 1e-12 * (1.0 + r0))
        });
        let p_max = history.momentum_bound();
        support.push((t_stop, p_max));
        slabs.push(SlabReport {
            index,
            t_start,
            t_end: t_stop,
            iterations,
            residual,
            contraction,
            history: trace,
            momentum_support: p_max,
            within_envelope,
        });
    }
    Ok(Evolution {
        history,
        slabs,
        momentum_support: support,
        past_continuation: "ballistic",
    })
}

/// `𝒫 = max |P|` over particles and recorded times.
pub fn momentum_support(history: &ParticleHistory) -> f64 {
    history.momentum_bound()
}

/// Size of the initial data: `Σ_α (‖ρ_α‖_∞ + ‖∇ρ_α‖_∞)` for the mollified
/// number densities of each species, bounded by summing the kernel peaks.
/// Reported as a diagnostic only.
pub fn data_norm(ensemble: &ParticleEnsemble, species: &[SpeciesParams]) -> Result<f64> {
    ensemble.validate(species)?;
    let k = crate::sources::Mollifier::new(ensemble.smoothing)?;
    let h = k.radius();
    // sup of |∇K| for K = c(1 - s²)³, s = |y|/h: at s = 1/√5
    let s: f64 = 1.0 / 5f64.sqrt();
    let grad_peak = k.peak() * 6.0 * s * (1.0 - s * s).powi(2) / h;
    let mut per_species = vec![0.0; species.len()];
    for p in &ensemble.particles {
        per_species[p.species] += p.weight.abs() * (k.peak() + grad_peak);
    }
    Ok(per_species.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{FieldResolution, UniformField};
    use crate::sources::Particle;

    fn one(x: Vec3, p: Vec3) -> Vec<CharacteristicState> {
        vec![CharacteristicState { x, p, species: 0 }]
    }

    #[test]
    fn free_streaming_is_exact() {
        let sp = [SpeciesParams::new(1.0, 2.0).unwrap()];
        let p = Vec3::new(0.3, -1.0, 0.5);
        let x0 = Vec3::new(1.0, 2.0, 3.0);
        let out = push_characteristics(&one(x0, p), &sp, &UniformField(FieldValue::ZERO), 0.0, 3.0, 0.1).unwrap();
        let v = sp[0].velocity(&p);
        assert!((out[0].x - (x0 + v * 3.0)).norm() < 1e-14);
        assert_eq!(out[0].p, p);
    }

    #[test]
    fn uniform_acceleration_from_rest() {
        let sp = [SpeciesParams::new(0.5, 1.0).unwrap()];
        let e = Vec3::new(0.0, 0.0, 0.8);
        let field = UniformField(FieldValue::new(e, Vec3::zeros()));
        let t = 5.0;
        let out = push_characteristics(&one(Vec3::zeros(), Vec3::zeros()), &sp, &field, 0.0, t, 0.05).unwrap();
        let pz = 0.5 * 0.8 * t;
        assert!((out[0].p.z - pz).abs() < 1e-12);
        // x(t) = (√(m² + (qEt)²) - m)/(qE)
        let xz = ((1.0 + pz * pz).sqrt() - 1.0) / 0.4;
        assert!((out[0].x.z - xz).abs() < 1e-8, "{}", out[0].x.z - xz);
    }

    #[test]
    fn gyration_conserves_speed() {
        let sp = [SpeciesParams::new(1.0, 1.0).unwrap()];
        let b0 = 1.0;
        let field = UniformField(FieldValue::new(Vec3::zeros(), Vec3::z() * b0));
        let p0 = Vec3::new(1.0, 0.0, 0.0);
        let omega = b0 / sp[0].energy(&p0);
        let period = 2.0 * std::f64::consts::PI / omega;
        let out = push_characteristics(&one(Vec3::zeros(), p0), &sp, &field, 0.0, 10.0 * period, DEFAULT_STEP).unwrap();
        assert!((out[0].p.norm() - 1.0).abs() < 1e-8);
        // back to the start after whole periods
        assert!((out[0].p - p0).norm() < 1e-5);
        assert!(out[0].x.norm() < 1e-5);
    }

    #[test]
    fn neutral_ensemble_streams_freely() {
        let sp = [SpeciesParams::new(0.0, 1.0).unwrap()];
        let ens = ParticleEnsemble::new(
            vec![
                Particle { species: 0, x: Vec3::new(1.0, 0.0, 0.0), p: Vec3::new(0.1, 0.2, 0.0), weight: 1.0 },
                Particle { species: 0, x: Vec3::new(-1.0, 0.5, 0.0), p: Vec3::new(0.0, 0.0, -0.3), weight: 2.0 },
            ],
            0.4,
        );
        let q = FieldQuadrature::new(FieldResolution::coarse()).unwrap();
        let sched = SlabSchedule { slab: 0.5, step: 0.1, ..Default::default() };
        let run = evolve_self_consistent(&ens, &sp, &sched, &q, 1.0).unwrap();
        assert_eq!(run.slabs.len(), 2);
        for s in &run.slabs {
            assert_eq!(s.iterations, 1);
            assert!(s.within_envelope);
        }
        let t = run.history.end_time();
        for (i, p) in ens.particles.iter().enumerate() {
            let k = run.history.kinematics(i, t).unwrap();
            assert!((k.x - (p.x + sp[0].velocity(&p.p) * t)).norm() < 1e-14);
        }
        assert_eq!(momentum_support(&run.history), ens.momentum_bound());
        assert_eq!(run.past_continuation, "ballistic");
    }

    #[test]
    fn trajectory_log_layout() {
        let sp = [SpeciesParams::new(0.0, 1.0).unwrap()];
        let ens = ParticleEnsemble::new(
            vec![Particle { species: 0, x: Vec3::zeros(), p: Vec3::x(), weight: 1.0 }],
            0.4,
        );
        let h = crate::sources::moments_from_ensemble(&ens, &sp, 1.0, 0.25).unwrap();
        let mut buf = Vec::new();
        write_trajectory_log(&mut buf, &h, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER);
        assert_eq!(lines.len(), 4); // levels 0, 2, 4
        assert_eq!(lines[3].split_whitespace().count(), 8);
    }

    #[test]
    fn schedule_validation() {
        assert!(SlabSchedule { slab: 0.0, ..Default::default() }.validate().is_err());
        assert!(SlabSchedule { tolerance: -1.0, ..Default::default() }.validate().is_err());
        let (m, h) = SlabSchedule { slab: 0.5, step: 0.12, ..Default::default() }.steps_per_slab();
        assert_eq!(m, 4);
        assert!((h - 0.125).abs() < 1e-15);
    }
}
