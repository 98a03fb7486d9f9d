use std::f64::consts::PI;

use super::streaming as st;
use super::*;
use crate::discretization::{integrate, make_initial_density, InitialDataSpec, StencilOrder};
use crate::geometry::{small_model, ModelKind};
use crate::heat::PotentialTriple;
use crate::report::observed_order;

fn bump(model: &Model, seed: u64) -> ScalarField {
    make_initial_density(&InitialDataSpec::bump(0.5, seed), &model.geometry, &model.grid).unwrap()
}

fn max_rel(a: &ScalarField, b: &ScalarField) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1e-300);
    a.zip_map(b, |x, y| x - y).max_abs() / scale
}

fn cr1(sizes: &[usize]) -> (Model, GeometricTensors) {
    small_model(ModelKind::Cr, 1, sizes, StencilOrder::Four)
}

#[test]
fn constants_give_exact_zeros() {
    let cases = [
        small_model(ModelKind::Cr, 1, &[8, 8, 16], StencilOrder::Four),
        small_model(ModelKind::Cr, 2, &[8, 8, 8, 8, 8], StencilOrder::Two),
        small_model(ModelKind::Qc, 1, &[6; 7], StencilOrder::Two),
    ];
    for (model, tensors) in &cases {
        let f = ScalarField::constant(&model.grid, 2.5);
        let db = covariant_derivatives(model, &f, 3).unwrap();
        assert_eq!(db.third().unwrap().max_abs(), 0.0);
        assert_eq!(db.mixed().unwrap().iter().map(|x| x.max_abs()).fold(0.0, f64::max), 0.0);
        assert_eq!(sub_laplacian(&model.grid, &f).unwrap().max_abs(), 0.0);
        assert_eq!(traceless_hessian_sq(&db, model).unwrap().max_abs(), 0.0);
        assert_eq!(p_form(&db, model, tensors).unwrap().max_abs(), 0.0);
        assert_eq!(r_form(&db, model).unwrap().max_abs(), 0.0);
        assert_eq!(c_operator(model, &f, tensors).unwrap().max_abs(), 0.0);
        assert_eq!(ricci_identity_residual(&db, model).unwrap().abs, 0.0);
        assert_eq!(bochner_residual(&db, model, tensors).unwrap().abs, 0.0);
        let mode = ChangeOfVariableMode::GeneralPhi(GeneralPhi::MinusTwoLog);
        assert_eq!(change_of_variable_residual(model, &f, mode, tensors).unwrap().abs, 0.0);
        assert_eq!(change_of_variable_residual(model, &f, ChangeOfVariableMode::SqrtU, tensors).unwrap().abs, 0.0);
        let pt = PotentialTriple::from_density(&model.grid, f).unwrap();
        assert_eq!(dt_lap_residual(model, &pt).unwrap().abs, 0.0);
    }
}

#[test]
fn bundle_and_streaming_routes_agree() {
    let cases = [
        cr1(&[16, 16, 32]),
        small_model(ModelKind::Cr, 2, &[8, 8, 8, 8, 8], StencilOrder::Four),
        small_model(ModelKind::Qc, 1, &[6; 7], StencilOrder::Two),
    ];
    for (model, tensors) in &cases {
        let f = bump(model, 3);
        let db = covariant_derivatives(model, &f, 3).unwrap();
        let p = p_form(&db, model, tensors).unwrap();
        let ps = st::p_components(model, &f, tensors).unwrap();
        for (a, b) in p.components.iter().zip(&ps) {
            assert!(max_rel(a, b) < 1e-10);
        }
        let pf_bundle = bilinear_field(&db.grad.components, &Matrix::identity(model.m(), model.m()), &p.components);
        assert!(max_rel(&pf_bundle, &st::p_function(model, &f, tensors).unwrap()) < 1e-10);
        let r = r_form(&db, model).unwrap();
        let rf = bilinear_field(&db.grad.components, &Matrix::identity(model.m(), model.m()), &r.components);
        assert!(max_rel(&rf, &st::r_function(model, &f).unwrap()) < 1e-10);
        assert!(max_rel(&traceless_hessian_sq(&db, model).unwrap(), &st::traceless_hessian_sq(model, &f).unwrap()) < 1e-10);
        assert!(max_rel(&c_operator(model, &f, tensors).unwrap(), &st::c_operator(model, &f, tensors).unwrap()) < 1e-9);
        let (r1, r2) = (ricci_identity_residual(&db, model).unwrap(), st::ricci_identity_residual(model, &f).unwrap());
        assert!((r1.abs - r2.abs).abs() <= 1e-8 * r1.abs.max(1e-14), "{} vs {}", r1.abs, r2.abs);
        let (b1, b2) = (bochner_residual(&db, model, tensors).unwrap(), st::bochner_residual(model, &f, tensors).unwrap());
        assert!((b1.abs - b2.abs).abs() <= 1e-8 * b1.abs, "{} vs {}", b1.abs, b2.abs);
    }
}

#[test]
fn sub_laplacian_of_sine() {
    let mut errs = Vec::new();
    for n in [16, 32] {
        let (model, _) = cr1(&[n, n, 2 * n]);
        let g = &model.grid;
        let f = ScalarField::from_fn(g, |p| (2.0 * PI * p[0]).sin());
        let lap = sub_laplacian(g, &f).unwrap();
        let exact = f.scale(-4.0 * PI * PI);
        errs.push((lap.zip_map(&exact, |a, b| a - b).max_abs(), g.h_ref()));
    }
    let o = observed_order(errs[0].0, errs[0].1, errs[1].0, errs[1].1).unwrap();
    assert!((3.7..=4.5).contains(&o), "order {o}");
}

#[test]
fn trace_of_hessian_is_laplacian() {
    let (model, _) = cr1(&[16, 16, 32]);
    let f = bump(&model, 1);
    let db = covariant_derivatives(&model, &f, 2).unwrap();
    let hess = db.hess().unwrap();
    let mut tr = ScalarField::zeros(&model.grid);
    for a in 0..model.m() {
        tr.axpy(1.0, hess.get(&[a, a]));
    }
    assert!(max_rel(&tr, &sub_laplacian(&model.grid, &f).unwrap()) < 1e-12);
}

#[test]
fn flipped_omega_sign_does_not_converge() {
    let mut right = Vec::new();
    let mut wrong = Vec::new();
    for n in [16, 32] {
        let (model, _) = cr1(&[n, n, 2 * n]);
        let f = bump(&model, 2);
        let db = covariant_derivatives(&model, &f, 2).unwrap();
        right.push(ricci_identity_residual(&db, &model).unwrap());
        wrong.push(ricci_identity_residual_signed(&db, &model, -1.0).unwrap());
    }
    assert!(right[1].abs < 0.2 * right[0].abs);
    assert!(wrong[1].rel > 0.1, "flipped residual {}", wrong[1].rel);
    assert!(wrong[1].abs > 0.5 * wrong[0].abs);
}

#[test]
fn linear_change_of_variable_is_exact() {
    let (model, tensors) = cr1(&[16, 16, 32]);
    let big_f = bump(&model, 5);
    let r = change_of_variable_residual(
        &model,
        &big_f,
        ChangeOfVariableMode::GeneralPhi(GeneralPhi::Linear(-1.7)),
        &tensors,
    )
    .unwrap();
    assert!(r.rel < 1e-12, "{}", r.rel);
    let neg = big_f.scale(-1.0);
    assert!(matches!(
        change_of_variable_residual(&model, &neg, ChangeOfVariableMode::SqrtU, &tensors),
        Err(Error::NotPositive { .. })
    ));
}

#[test]
fn c_operator_divergence_form() {
    let (model, tensors) = cr1(&[16, 16, 32]);
    let f = bump(&model, 7).map(f64::ln);
    let c = c_operator(&model, &f, &tensors).unwrap();
    let total = integrate(&model.grid, &c).unwrap();
    let scale = integrate(&model.grid, &c.map(f64::abs)).unwrap();
    assert!(total.abs() <= 1e-12 * scale, "{total} vs {scale}");
    let fc = integrate_by(&model.grid, |i| f.values[i] * c.values[i]).unwrap();
    let pf = integrate(&model.grid, &st::p_function(&model, &f, &tensors).unwrap()).unwrap();
    assert!((fc + pf).abs() <= 1e-10 * pf.abs(), "{fc} vs {pf}");
}

#[test]
fn p_form_is_linear() {
    let (model, tensors) = cr1(&[16, 16, 32]);
    let (f, g) = (bump(&model, 8), bump(&model, 9));
    let h = f.zip_map(&g, |a, b| 2.0 * a - 0.5 * b);
    let pf = st::p_components(&model, &f, &tensors).unwrap();
    let pg = st::p_components(&model, &g, &tensors).unwrap();
    let ph = st::p_components(&model, &h, &tensors).unwrap();
    for a in 0..model.m() {
        let comb = pf[a].zip_map(&pg[a], |x, y| 2.0 * x - 0.5 * y);
        assert!(max_rel(&ph[a], &comb) < 1e-12);
    }
}

#[test]
fn u_term_rejected_at_n1() {
    let (model, mut tensors) = small_model(ModelKind::Qc, 1, &[6; 7], StencilOrder::Two);
    tensors.u = Some(Matrix::zeros(4, 4));
    assert!(matches!(p_torsion_matrix(&model.geometry, &tensors), Err(Error::UTermAtN1)));
}

#[test]
fn traceless_part_of_pure_trace_hessian() {
    // f = |x|^2 / 2 localized on the lattice by a product of cosines has
    // Hessian close to the identity near the origin; check the pointwise value there.
    let (model, _) = cr1(&[32, 32, 64]);
    let g = &model.grid;
    let f = ScalarField::from_fn(g, |p| {
        let c = |x: f64| (1.0 - (2.0 * PI * x).cos()) / (4.0 * PI * PI);
        c(p[0]) + c(p[1])
    });
    let db = covariant_derivatives(&model, &f, 2).unwrap();
    let t = traceless_hessian_sq(&db, &model).unwrap();
    let origin = g.flat_index(&[16, 16, 32]);
    assert!(t.values[origin].abs() < 1e-6, "{}", t.values[origin]);
    assert!(t.min() > -1e-6);
}
