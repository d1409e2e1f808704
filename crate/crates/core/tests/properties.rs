use std::sync::Arc;

use proptest::prelude::*;
use rvm_core::dynamics::{push_recording, CharacteristicState};
use rvm_core::energetics::{cone_mass_profile, ConeKind, ConeResolution, EnergyDensitySample, EnergyModel, NoMatter};
use rvm_core::extrapolate::richardson_to_zero;
use rvm_core::fields::{eval_retarded, FieldQuadrature, FieldResolution, FieldValue, UniformField};
use rvm_core::geometry::{ball_quadrature, ConeCoordinates, DirectionGrid, GaussLegendre};
use rvm_core::radiation::{compute_mn, identity_residuals, RadiationQuadrature};
use rvm_core::sources::{
    analytic_dipole, continuity_residual, support_radius, Knot, Mollifier, Particle, ParticleEnsemble, ParticleHistory,
    SourceHistory, SpeciesParams, StaticBlob,
};
use rvm_core::Vec3;

fn vec3(lo: f64, hi: f64) -> impl Strategy<Value = Vec3> {
    (lo..hi, lo..hi, lo..hi).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn coarse() -> FieldQuadrature {
    FieldQuadrature::new(FieldResolution::coarse()).unwrap()
}

fn accelerated_history(p: &[Vec3]) -> ParticleHistory {
    let sp = [SpeciesParams::new(1.0, 1.0).unwrap(), SpeciesParams::new(-1.0, 3.0).unwrap()];
    let particles = p
        .iter()
        .enumerate()
        .map(|(i, p)| Particle {
            species: i % 2,
            x: Vec3::new(0.4 * i as f64 - 0.6, 0.1, -0.2),
            p: *p,
            weight: 1.0 + 0.1 * i as f64,
        })
        .collect();
    let ens = ParticleEnsemble::new(particles, 0.5);
    let mut h = ParticleHistory::start(&ens, &sp, 0.0, 0.05).unwrap();
    let states: Vec<CharacteristicState> = ens
        .particles
        .iter()
        .map(|p| CharacteristicState { x: p.x, p: p.p, species: p.species })
        .collect();
    let field = UniformField(FieldValue::new(Vec3::new(0.0, 0.0, 0.3), Vec3::new(0.2, 0.0, 1.0)));
    for level in push_recording(&states, &sp, &field, 0.0, 2.0, 0.05).unwrap().into_iter().skip(1) {
        h.push_level(level.iter().map(|s| Knot { x: s.x, p: s.p, v: sp[s.species].velocity(&s.p) }).collect())
            .unwrap();
    }
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gauss_legendre_is_exact_to_degree_2n_minus_1(n in 2usize..12, a in -2.0f64..0.0, b in 0.5f64..3.0) {
        let gl = GaussLegendre::new(n);
        let deg = (2 * n - 1) as i32;
        let got = gl.integrate(a, b, |x| x.powi(deg));
        let want = (b.powi(deg + 1) - a.powi(deg + 1)) / (deg + 1) as f64;
        prop_assert!((got - want).abs() <= 1e-11 * want.abs().max(1.0));
    }

    #[test]
    fn sphere_rules_integrate_constants_to_four_pi(np in 2usize..20, na in 1usize..20) {
        let g = DirectionGrid::product(np, na);
        prop_assert!((g.integrate(|_| 1.0) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        prop_assert!(g.nodes().iter().all(|k| (k.norm() - 1.0).abs() < 1e-14));
    }

    #[test]
    fn cone_coordinates_are_consistent(t in -50.0f64..50.0, x in vec3(-30.0, 30.0)) {
        let c = ConeCoordinates::from_event(t, &x);
        prop_assert!(c.consistency_defect().abs() <= 1e-12 * (1.0 + t.abs() + c.r));
        prop_assert!((c.time() - t).abs() <= 1e-12 * (1.0 + t.abs() + c.r));
        let back = ConeCoordinates::from_retarded(c.u, c.r);
        prop_assert!((back.v - c.v).abs() <= 1e-12 * (1.0 + c.v.abs()));
    }

    #[test]
    fn richardson_removes_polynomial_tails(c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, c2 in -5.0f64..5.0) {
        let radii = [10.0, 20.0, 40.0];
        let steps: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
        let values: Vec<f64> = steps.iter().map(|h| c0 + c1 * h + c2 * h * h).collect();
        prop_assert!((richardson_to_zero(&steps, &values).unwrap() - c0).abs() < 1e-11);
    }

    #[test]
    fn mollifier_has_unit_mass(radius in 0.1f64..3.0, power in 3i32..7) {
        let m = Mollifier::with_power(radius, power).unwrap();
        let ball = ball_quadrature(radius, 16, 3).unwrap();
        prop_assert!((ball.integrate(|y| m.value(y)) - 1.0).abs() < 1e-12);
        prop_assert!(m.value(&Vec3::new(radius, 0.0, 0.0)) == 0.0);
    }

    #[test]
    fn energy_density_dominates_momentum(e in vec3(-3.0, 3.0), b in vec3(-3.0, 3.0), k in vec3(-1.0, 1.0)) {
        prop_assume!(k.norm() > 1e-3);
        let k = k.normalize();
        let s = EnergyDensitySample::from_field(&FieldValue::new(e, b));
        prop_assert!(s.dominance() >= -1e-15 * s.e);
        prop_assert!(s.outgoing(&k) >= -1e-15 * s.e);
        prop_assert!(s.incoming(&k) >= -1e-15 * s.e);
    }

    #[test]
    fn ensemble_file_round_trip_is_exact(
        rows in prop::collection::vec((0usize..3, vec3(-1e3, 1e3), vec3(-10.0, 10.0), 1e-6f64..10.0), 0..12),
    ) {
        let particles: Vec<Particle> = rows
            .into_iter()
            .map(|(species, x, p, weight)| Particle { species, x, p, weight })
            .collect();
        let ens = ParticleEnsemble::new(particles, 0.3);
        let mut buf = Vec::new();
        ens.write_to(&mut buf).unwrap();
        let back = ParticleEnsemble::read_from(buf.as_slice(), 0.3).unwrap();
        prop_assert_eq!(back.particles, ens.particles);
    }

    #[test]
    fn dipole_satisfies_continuity(d0 in 0.1f64..2.0, omega in 0.05f64..1.0, t in 0.0f64..20.0, x in vec3(-3.0, 3.0)) {
        let d = analytic_dipole(d0, omega, 1.0).unwrap();
        let s = d.sample(t, &x).unwrap();
        let scale = d0 * (1.0 + omega) * 1e-12;
        prop_assert!(continuity_residual(&d, t, &x).unwrap().abs() <= scale.max(1e-14 * (s.dt_rho.abs() + s.div_j.abs())));
    }

    #[test]
    fn ensemble_satisfies_continuity(
        p in prop::collection::vec(vec3(-1.0, 1.0), 1..4),
        t in 0.0f64..2.0,
        x in vec3(-1.5, 1.5),
    ) {
        let h = accelerated_history(&p);
        let s = h.sample(t, &x).unwrap();
        let r = continuity_residual(&h, t, &x).unwrap();
        prop_assert!(r.abs() <= 1e-10 * (1.0 + s.dt_rho.abs() + s.div_j.abs()));
    }

    #[test]
    fn sources_vanish_outside_their_envelope(d0 in 0.1f64..2.0, t in 0.0f64..10.0, dir in vec3(-1.0, 1.0), extra in 0.0f64..5.0) {
        prop_assume!(dir.norm() > 1e-3);
        let d = analytic_dipole(d0, 0.5, 1.0).unwrap();
        let x = dir.normalize() * (support_radius(&d, t) * (1.0 + 1e-9) + extra);
        let s = d.sample(t, &x).unwrap();
        prop_assert_eq!(s.rho, 0.0);
        prop_assert_eq!(s.j, Vec3::zeros());
    }

    #[test]
    fn mn_identities_hold_at_every_u(d0 in 0.1f64..2.0, omega in 0.1f64..1.0, u in -3.0f64..15.0) {
        let d = analytic_dipole(d0, omega, 1.0).unwrap();
        let slice = compute_mn(&d, u, &DirectionGrid::lebedev26(), &RadiationQuadrature::default()).unwrap();
        let r = identity_residuals(&slice);
        prop_assert!(r.mn.max() < 1e-10);
        prop_assert!(r.planar < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn retarded_field_is_linear_in_the_source(a in 0.1f64..2.0, b in 0.1f64..2.0, t in 1.0f64..10.0, x in vec3(-4.0, 4.0)) {
        let q = coarse();
        let fa = eval_retarded(&analytic_dipole(a, 0.5, 1.0).unwrap(), t, &x, &q).unwrap();
        let fb = eval_retarded(&analytic_dipole(b, 0.5, 1.0).unwrap(), t, &x, &q).unwrap();
        let fab = eval_retarded(&analytic_dipole(a + b, 0.5, 1.0).unwrap(), t, &x, &q).unwrap();
        let diff = fab - (fa + fb);
        prop_assert!(diff.magnitude() <= 1e-12 * fab.magnitude().max(1e-12));
    }

    #[test]
    fn future_cone_energy_grows_with_radius(q in 0.2f64..2.0, u in -5.0f64..5.0) {
        let blob = Arc::new(StaticBlob::new(q, 1.0).unwrap());
        let model = EnergyModel::retarded(blob, Arc::new(coarse()), Arc::new(NoMatter));
        let res = ConeResolution { azimuth: 1, polar: 8, ..Default::default() };
        let radii = [1.0, 2.0, 4.0, 8.0, 16.0];
        let m = cone_mass_profile(&model, ConeKind::Future, u, &radii, &res).unwrap();
        prop_assert!(m[0] >= 0.0);
        for w in m.windows(2) {
            prop_assert!(w[1] >= w[0] * (1.0 - 1e-12));
        }
    }
}
