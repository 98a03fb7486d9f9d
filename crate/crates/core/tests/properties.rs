use nilheat::discretization::io::{decode_field, encode_field};
use nilheat::discretization::{e, field_inner, integrate, xi, Grid, ScalarField, StencilOrder};
use nilheat::calculus::streaming::laplacian;
use nilheat::geometry::{build_model, lichnerowicz, polarized_lichnerowicz, GeometricTensors, Geometry, Model, ModelKind};
use nilheat::harness::{grid_label, parse_grid_list};
use nilheat::heat::{decode_checkpoint, encode_checkpoint, mass, step, stability_limit, FlowState};
use nilheat::report::observed_order;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cr_model(order: StencilOrder) -> Model {
    build_model(ModelKind::Cr, 1, &[8, 8, 16], order).unwrap().0
}

fn field_from(grid: &Grid, coeffs: &[f64]) -> ScalarField {
    ScalarField::from_fn(grid, |p| {
        let mut v = 0.0;
        for (i, c) in coeffs.iter().enumerate() {
            let axis = i % p.len();
            v += c * ((i as f64 + 1.0) * std::f64::consts::TAU * p[axis] + 0.3 * i as f64).sin();
        }
        v
    })
}

fn noise(grid: &Grid, seed: u64, lo: f64, hi: f64) -> ScalarField {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect();
    ScalarField::from_values(grid, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn field_roundtrip(seed in any::<u64>()) {
        let model = cr_model(StencilOrder::Four);
        let f = noise(&model.grid, seed, -1e3, 1e3);
        let bytes = encode_field(&model.grid, &f).unwrap();
        let back = decode_field(&bytes).unwrap().into_field(&model.grid).unwrap();
        prop_assert_eq!(back.values, f.values);
    }

    #[test]
    fn checkpoint_roundtrip(seed in any::<u64>(), t in 0.0f64..10.0, steps in 0u64..1_000_000, dt in 1e-9f64..1.0) {
        let model = cr_model(StencilOrder::Two);
        let u = noise(&model.grid, seed, 0.1, 3.0);
        let state = FlowState { t, u, step_count: steps, dt };
        let bytes = encode_checkpoint(&model.grid, &state).unwrap();
        let back = decode_checkpoint(&bytes).unwrap().into_state(&model.grid).unwrap();
        prop_assert_eq!(back.t, t);
        prop_assert_eq!(back.step_count, steps);
        prop_assert_eq!(back.dt, dt);
        prop_assert_eq!(back.u.values, state.u.values);
    }

    #[test]
    fn truncated_field_rejected(seed in any::<u64>(), cut in 1usize..64) {
        let model = cr_model(StencilOrder::Four);
        let f = noise(&model.grid, seed, -1.0, 1.0);
        let bytes = encode_field(&model.grid, &f).unwrap();
        prop_assert!(decode_field(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn frame_fields_skew_adjoint(s1 in any::<u64>(), s2 in any::<u64>(), a in 0usize..2, p in prop_oneof![Just(StencilOrder::Two), Just(StencilOrder::Four)]) {
        let model = cr_model(p);
        let g = &model.grid;
        let f = noise(g, s1, -1.0, 1.0);
        let h = noise(g, s2, -1.0, 1.0);
        let lhs = field_inner(g, &f, &e(g, &h, a).unwrap()).unwrap();
        let rhs = -field_inner(g, &h, &e(g, &f, a).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
        let lhs = field_inner(g, &f, &xi(g, &h, 0).unwrap()).unwrap();
        let rhs = -field_inner(g, &h, &xi(g, &f, 0).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn derivatives_integrate_to_zero(seed in any::<u64>(), a in 0usize..4) {
        let model = build_model(ModelKind::Cr, 2, &[8, 8, 8, 8, 16], StencilOrder::Four).unwrap().0;
        let g = &model.grid;
        let f = noise(g, seed, -1.0, 1.0);
        let d = e(g, &f, a).unwrap();
        prop_assert!(integrate(g, &d).unwrap().abs() < 1e-12 * d.max_abs().max(1.0));
    }

    #[test]
    fn laplacian_nonpositive(coeffs in prop::collection::vec(-2.0f64..2.0, 1..6), seed in any::<u64>()) {
        let model = cr_model(StencilOrder::Four);
        let g = &model.grid;
        let mut f = field_from(g, &coeffs);
        f.axpy(0.1, &noise(g, seed, -1.0, 1.0));
        let q = field_inner(g, &f, &laplacian(g, &f).unwrap()).unwrap();
        prop_assert!(q <= 1e-12 * field_inner(g, &f, &f).unwrap().max(1.0));
    }

    #[test]
    fn grid_list_roundtrip(ladder in prop::collection::vec(prop::collection::vec(1usize..4096, 3..8), 1..5)) {
        let text = ladder.iter().map(|s| grid_label(s)).collect::<Vec<_>>().join(",");
        prop_assert_eq!(parse_grid_list(&text).unwrap(), ladder);
    }

    #[test]
    fn lichnerowicz_quadratic(kind in prop_oneof![Just(ModelKind::Cr), Just(ModelKind::Qc)], seed in any::<u64>(), c in -5.0f64..5.0, xs in prop::collection::vec(-1.0f64..1.0, 8), ys in prop::collection::vec(-1.0f64..1.0, 8)) {
        let n = if kind == ModelKind::Cr { 2 } else { 1 };
        let geom = Geometry::new(kind, n).unwrap();
        let m = geom.spec.m;
        let tensors = GeometricTensors::synthetic(&geom, &mut ChaCha8Rng::seed_from_u64(seed));
        let x = &xs[..m];
        let y = &ys[..m];
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let l = lichnerowicz(&geom, &tensors, x).unwrap();
        let lc = lichnerowicz(&geom, &tensors, &cx).unwrap();
        prop_assert!((lc - c * c * l).abs() < 1e-12 * (1.0 + lc.abs()));
        let xy = polarized_lichnerowicz(&geom, &tensors, x, y).unwrap();
        let yx = polarized_lichnerowicz(&geom, &tensors, y, x).unwrap();
        prop_assert!((xy - yx).abs() < 1e-12 * (1.0 + xy.abs()));
        let sum: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let pol = 0.25 * (lichnerowicz(&geom, &tensors, &sum).unwrap() - lichnerowicz(&geom, &tensors, &diff).unwrap());
        prop_assert!((pol - xy).abs() < 1e-12 * (1.0 + xy.abs()));
    }

    #[test]
    fn rk4_step_conserves_mass(seed in any::<u64>(), frac in 0.05f64..1.0) {
        let model = cr_model(StencilOrder::Four);
        let g = &model.grid;
        let u = noise(g, seed, 0.5, 1.5);
        let dt = frac * stability_limit(g);
        let s0 = FlowState::new(u, dt).unwrap();
        let s1 = step(g, &s0, dt).unwrap();
        let (m0, m1) = (mass(g, &s0).unwrap(), mass(g, &s1).unwrap());
        prop_assert!((m1 - m0).abs() < 1e-13 * m0);
    }

    #[test]
    fn order_of_power_law(p in 0.5f64..8.0, c in 1e-6f64..1e3, h in 1e-3f64..0.5, r in 1.2f64..4.0) {
        let e1 = c * h.powf(p);
        let e2 = c * (h / r).powf(p);
        let q = observed_order(e1, h, e2, h / r).unwrap();
        prop_assert!((q - p).abs() < 1e-9);
    }
}

#[test]
fn zero_residual_has_no_order() {
    assert_eq!(observed_order(0.0, 0.1, 1e-3, 0.05), None);
    assert_eq!(observed_order(1e-3, 0.1, 1e-4, 0.1), None);
}

#[test]
fn oversized_grid_rejected() {
    let huge = 1usize << 40;
    assert!(build_model(ModelKind::Cr, 1, &[huge, huge, huge], StencilOrder::Four).is_err());
    assert!(build_model(ModelKind::Cr, 1, &[4096, 4096, 32768], StencilOrder::Four).is_err());
    assert!(nilheat::harness::SuiteConfig::from_toml_str("model = \"cr\"\nn = 1\ngrid = \"18446744073709551615x2x2\"\n").is_err());
}

#[test]
fn fuzz_seeds_are_valid_inputs() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus");
    let read = |sub: &str, name: &str| std::fs::read(dir.join(sub).join(name)).unwrap();
    for name in ["cr1.toml", "cr2_modes.toml", "qc_list.toml"] {
        let text = String::from_utf8(read("config", name)).unwrap();
        nilheat::harness::SuiteConfig::from_toml_str(&text).unwrap();
    }
    for name in ["cr1", "cr2", "qc"] {
        parse_grid_list(std::str::from_utf8(&read("grid_spec", name)).unwrap()).unwrap();
    }
    for name in ["cr_small", "qc_small"] {
        decode_field(&read("field_decode", name)).unwrap();
    }
    assert!(decode_field(&read("field_decode", "truncated")).is_err());
    for name in ["cr_small", "t_zero"] {
        decode_checkpoint(&read("checkpoint_decode", name)).unwrap();
    }
}
