use proptest::prelude::*;
use rvm_cli::config::{MatterKind, SourceSpec};
use rvm_cli::{Pipeline, Scenario};

fn grid() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, 1..6)
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        0.01f64..10.0,
        0.01f64..5.0,
        prop::option::of(1.0f64..100.0),
        grid(),
        grid(),
        prop::collection::vec(0.1f64..1e3, 1..5),
        1e-14f64..1.0,
        prop::sample::subsequence(Pipeline::ALL.to_vec(), 0..=4),
    )
        .prop_map(|(omega, sigma, pulse, u, v, steps, tol, pipelines)| {
            let mut sc = Scenario::from_toml("name = \"p\"\n[source]\nkind = \"vacuum\"\n").unwrap();
            sc.pipelines = pipelines.into_iter().filter(|p| *p != Pipeline::Evolve).collect();
            sc.source = SourceSpec::Dipole { amplitude: 1.0 / omega, omega, sigma, pulse };
            sc.radiation.u_grid = u.clone();
            sc.energetics.u_grid = u;
            sc.energetics.v_grid = v;
            let mut r = 0.0;
            sc.energetics.r_ladder = steps.iter().map(|s| { r += s; r }).collect();
            sc.energetics.matter = if pulse.is_some() { MatterKind::Reservoir } else { MatterKind::None };
            sc.tolerances.mn = tol;
            sc.tolerances.mass_loss = tol.sqrt();
            sc
        })
}

proptest! {
    #[test]
    fn toml_round_trip_is_idempotent(sc in scenario()) {
        sc.validate().unwrap();
        let text = sc.to_toml();
        let back = Scenario::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn json_mirror_round_trip_is_idempotent(sc in scenario()) {
        let text = sc.to_json();
        let back = Scenario::from_json(&text).unwrap();
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(Scenario::from_toml(&back.to_toml()).unwrap(), sc);
    }
}
