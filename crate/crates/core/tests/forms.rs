use std::collections::BTreeSet;
use std::sync::Arc;

use nsdwr::forms::{
    derivative_value, form_value, jacobian, newton_solve, residual, second_derivative, CellValues, FormContext,
    NewtonControls,
};
use nsdwr::geometry::{build_benchmark_mesh, build_rectangle_mesh, DomainSpec, Mesh};
use nsdwr::linalg::norm2;
use nsdwr::space::{FeSystem, MixedVector};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn mesh(seed: u64) -> Arc<Mesh> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut m = build_benchmark_mesh(&DomainSpec::default(), 0);
    let act = m.active_cells();
    let marked: BTreeSet<usize> = (0..5).map(|_| act[rng.gen_range(0..act.len())]).collect();
    m = m.refine(&marked).unwrap();
    Arc::new(m)
}

fn random_field(sys: &FeSystem, rng: &mut StdRng, homogeneous: bool) -> MixedVector {
    let mut v = sys.vector((0..sys.n_dofs()).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
    if homogeneous {
        sys.constraints().distribute_homogeneous(&mut v.values);
    } else {
        sys.constraints().distribute(&mut v.values);
    }
    v
}

#[test]
fn zero_field_has_zero_residual() {
    let sys = Arc::new(FeSystem::new(mesh(1), 2).unwrap());
    let ctx = FormContext::new(Arc::clone(&sys), true).unwrap();
    let r = residual(&ctx, &sys.zeros()).unwrap();
    assert!(r.iter().all(|&x| x == 0.0));
}

#[test]
fn shear_flow_has_no_convection() {
    let sys = Arc::new(FeSystem::new(mesh(2), 2).unwrap());
    let u = sys.interpolate(|x| [x[1], 0.0, 0.0]);
    let a = residual(&FormContext::new(Arc::clone(&sys), true).unwrap(), &u).unwrap();
    let b = residual(&FormContext::new(Arc::clone(&sys), false).unwrap(), &u).unwrap();
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    assert!(norm2(&d) < 1e-15, "{}", norm2(&d));
}

#[test]
fn divergence_free_field_has_zero_pressure_rows() {
    let m = Arc::new(build_rectangle_mesh(&DomainSpec::default(), [0.0, 1.0], [0.0, 1.0], 1, 1));
    let sys = Arc::new(FeSystem::new(m, 2).unwrap());
    let ctx = FormContext::new(Arc::clone(&sys), true).unwrap();
    let u = sys.interpolate(|x| [x[0], -x[1], 0.0]);
    let mut cv = CellValues::default();
    ctx.reinit(0, &mut cv);
    let mut local = Vec::new();
    sys.gather(&u, 0, &mut local);
    let mut r = vec![0.0; 22];
    ctx.cell_residual(&cv, &local, &mut r);
    assert!(r[18..].iter().all(|x| x.abs() < 1e-13), "{:?}", &r[18..]);
}

#[test]
fn jacobian_matches_finite_differences() {
    let sys = Arc::new(FeSystem::new(mesh(3), 2).unwrap());
    let ctx = FormContext::new(Arc::clone(&sys), true).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    let u = random_field(&sys, &mut rng, false);
    let d = random_field(&sys, &mut rng, true);
    let pattern = Arc::new(sys.sparsity_pattern());
    let j = jacobian(&ctx, &u, &pattern).unwrap();
    let mut jd = vec![0.0; sys.n_dofs()];
    j.matvec(&d.values, &mut jd);
    sys.constraints().zero_constrained(&mut jd);
    let r0 = residual(&ctx, &u).unwrap();
    let mut errs = Vec::new();
    for eps in [1e-4, 1e-5, 1e-6] {
        let r1 = residual(&ctx, &u.axpy(eps, &d).unwrap()).unwrap();
        let diff: Vec<f64> = (0..r0.len()).map(|i| (r1[i] - r0[i]) / eps - jd[i]).collect();
        errs.push(norm2(&diff));
    }
    // A is quadratic: the forward difference error is exactly eps·A″(d,d)/2.
    assert!(errs[0] / errs[1] > 9.0 && errs[0] / errs[1] < 11.0, "{errs:?}");
    assert!(errs[1] / errs[2] > 5.0, "{errs:?}");
}

#[test]
fn stokes_jacobian_velocity_block_is_symmetric() {
    let sys = Arc::new(FeSystem::new(mesh(4), 2).unwrap());
    let ctx = FormContext::new(Arc::clone(&sys), true).unwrap();
    let pattern = Arc::new(sys.sparsity_pattern());
    let j = jacobian(&ctx, &sys.zeros(), &pattern).unwrap();
    let stokes = jacobian(&FormContext::new(Arc::clone(&sys), false).unwrap(), &sys.zeros(), &pattern).unwrap();
    assert_eq!(j.values(), stokes.values());
    for i in 0..sys.n_dofs() {
        for &c in pattern.row(i) {
            let c = c as usize;
            let (ci, cc) = (sys.dofs().component(i), sys.dofs().component(c));
            if ci < 2 && cc < 2 {
                assert!((j.get(i, c) - j.get(c, i)).abs() < 1e-13);
            } else if ci < 2 && cc == 2 && !sys.constraints().is_constrained(i) {
                assert!((j.get(i, c) + j.get(c, i)).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn newton_on_stokes_takes_one_step() {
    let sys = Arc::new(FeSystem::new(mesh(5), 2).unwrap());
    let ctx = FormContext::new(Arc::clone(&sys), false).unwrap();
    let out = newton_solve(&ctx, &sys.initial_guess(), &NewtonControls { polish_steps: 0, ..Default::default() }, None).unwrap();
    assert!(out.report.converged);
    assert_eq!(out.report.steps.len(), 2);
    assert_eq!(out.report.steps[1].damping, 1.0);
    let again = newton_solve(&ctx, &out.u, &NewtonControls::default(), None).unwrap();
    assert!(again.report.steps.iter().all(|s| s.damping == 1.0));
    assert!(again.report.steps.len() <= 1 + NewtonControls::default().polish_steps);
}

#[test]
fn navier_stokes_newton_converges_quadratically() {
    let sys = Arc::new(FeSystem::new(Arc::new(build_benchmark_mesh(&DomainSpec::default(), 1)), 2).unwrap());
    let stokes = newton_solve(
        &FormContext::new(Arc::clone(&sys), false).unwrap(),
        &sys.initial_guess(),
        &NewtonControls::default(),
        None,
    )
    .unwrap();
    let ctx = FormContext::new(Arc::clone(&sys), true).unwrap();
    let out = newton_solve(&ctx, &stokes.u, &NewtonControls { polish_steps: 0, ..Default::default() }, None).unwrap();
    let r: Vec<f64> = out.report.steps.iter().map(|s| s.residual_norm).collect();
    assert!(out.report.converged && *r.last().unwrap() <= 1e-11, "{r:?}");
    let n = r.len();
    assert!(n >= 4);
    // Quadratic tail: r_{k+1} ≤ C r_k² with a moderate C.
    let c = r[n - 2] / (r[n - 3] * r[n - 3]);
    assert!(c < 1e4, "{r:?}");
    let full = residual(&ctx, &out.u).unwrap();
    assert!(norm2(&full) <= 1e-11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn taylor_identity_and_vanishing_third_difference(seed in 0u64..10_000) {
        let sys = Arc::new(FeSystem::new(mesh(seed % 7), 2).unwrap());
        let ctx = FormContext::new(Arc::clone(&sys), true).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let u = random_field(&sys, &mut rng, false);
        let d = random_field(&sys, &mut rng, true);
        let v = random_field(&sys, &mut rng, true);
        let lhs = form_value(&ctx, &u.axpy(1.0, &d).unwrap(), &v).unwrap();
        let a0 = form_value(&ctx, &u, &v).unwrap();
        let a1 = derivative_value(&ctx, &u, &d, &v).unwrap();
        let a2 = second_derivative(&ctx, &d, &d, &v).unwrap();
        let rhs = a0 + a1 + 0.5 * a2;
        let scale = a0.abs() + a1.abs() + a2.abs();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{} vs {}", lhs, rhs);

        let f = |s: f64| form_value(&ctx, &u.axpy(s, &d).unwrap(), &v).unwrap();
        let h = 0.5;
        let third = f(3.0 * h) - 3.0 * f(2.0 * h) + 3.0 * f(h) - f(0.0);
        prop_assert!(third.abs() <= 1e-12 * scale, "{}", third);

        let e = random_field(&sys, &mut rng, true);
        let s1 = second_derivative(&ctx, &d, &e, &v).unwrap();
        let s2 = second_derivative(&ctx, &e, &d, &v).unwrap();
        prop_assert!((s1 - s2).abs() <= 1e-14 * s1.abs().max(1.0));
        prop_assert_eq!(second_derivative(&ctx, &sys.zeros(), &e, &v).unwrap(), 0.0);
    }
}
