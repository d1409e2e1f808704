//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use rvm_core::sources::{analytic_dipole, AnalyticDipole, Particle, ParticleEnsemble, SpeciesParams};
use rvm_core::Vec3;

/// The pulsed reference dipole: `d0 = 1`, `ω = 0.5`, `σ = 1`, two periods.
pub fn reference_dipole() -> Arc<AnalyticDipole> {
    let period = 4.0 * std::f64::consts::PI;
    Arc::new(analytic_dipole(1.0, 0.5, 1.0).unwrap().with_pulse(2.0 * period).unwrap())
}

/// `n` weakly charged particles on a line, alternating in sign.
pub fn line_ensemble(n: usize) -> (ParticleEnsemble, Vec<SpeciesParams>) {
    let species = vec![
        SpeciesParams::new(0.05, 1.0).unwrap(),
        SpeciesParams::new(-0.05, 1.0).unwrap(),
    ];
    let particles = (0..n)
        .map(|i| Particle {
            species: i % 2,
            x: Vec3::new(i as f64 - 0.5 * (n as f64 - 1.0), 0.3 * (i % 3) as f64, 0.0),
            p: Vec3::new(0.0, 0.05, -0.02 * (i % 2) as f64),
            weight: 1.0,
        })
        .collect();
    (ParticleEnsemble::new(particles, 0.5), species)
}
