use std::sync::Arc;

use nsdwr::forms::{newton_solve, FormContext, NewtonControls};
use nsdwr::geometry::{build_benchmark_mesh, BoundaryTag, DomainSpec, Mesh};
use nsdwr::goals::{evaluate_goals, CombinedWeights, Functional, GoalKind, GoalValues};
use nsdwr::space::FeSystem;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn system(level: usize, k: usize) -> FeSystem {
    FeSystem::new(Arc::new(build_benchmark_mesh(&DomainSpec::default(), level)), k).unwrap()
}

/// Area enclosed by the polygonal cylinder boundary.
fn hole_area(mesh: &Mesh) -> f64 {
    let mut a = 0.0;
    for (c, l, tag) in mesh.boundary_faces() {
        if tag == BoundaryTag::Cylinder {
            let v = mesh.cell(c).vertices;
            let [i, j] = nsdwr::geometry::LOCAL_EDGES[l];
            let (p, q) = (mesh.vertex(v[i]), mesh.vertex(v[j]));
            // Triangle fan from the center; orientation-free.
            let (x1, y1, x2, y2) = (p[0] - 0.2, p[1] - 0.2, q[0] - 0.2, q[1] - 0.2);
            a += 0.5 * (x1 * y2 - x2 * y1).abs();
        }
    }
    a
}

/// Physical pressure `P` enters as `p = −P`.
fn with_pressure(sys: &FeSystem, f: impl Fn([f64; 2]) -> f64) -> nsdwr::space::MixedVector {
    sys.interpolate(|x| [0.0, 0.0, -f(x)])
}

#[test]
fn pressure_difference_examples() {
    let sys = system(0, 2);
    assert!(evaluate_goals(&sys, &with_pressure(&sys, |_| 3.0)).unwrap().dp.abs() < 1e-14);
    let dp = evaluate_goals(&sys, &with_pressure(&sys, |x| x[0])).unwrap().dp;
    assert!((dp + 0.1).abs() < 1e-14, "{dp}");
    let dp = evaluate_goals(&sys, &with_pressure(&sys, |x| x[1])).unwrap().dp;
    assert!(dp.abs() < 1e-14);
}

#[test]
fn drag_lift_examples() {
    for level in 0..3 {
        let sys = system(level, 2);
        let area = hole_area(sys.mesh());
        let g = evaluate_goals(&sys, &with_pressure(&sys, |_| 1.0)).unwrap();
        assert!(g.drag.abs() < 1e-12 && g.lift.abs() < 1e-12);
        let g = evaluate_goals(&sys, &with_pressure(&sys, |x| x[0])).unwrap();
        assert!((g.drag + 500.0 * area).abs() < 1e-10, "{} {}", g.drag, -500.0 * area);
        assert!(g.lift.abs() < 1e-10);
        let g = evaluate_goals(&sys, &with_pressure(&sys, |x| x[1])).unwrap();
        assert!((g.lift + 500.0 * area).abs() < 1e-10);
        let rot = sys.interpolate(|x| [-(x[1] - 0.2), x[0] - 0.2, 0.0]);
        let g = evaluate_goals(&sys, &rot).unwrap();
        assert!(g.drag.abs() < 1e-12 && g.lift.abs() < 1e-12);
    }
}

#[test]
fn functionals_are_linear_and_match_rhs() {
    let sys = system(1, 2);
    let mut rng = StdRng::seed_from_u64(4);
    for kind in [GoalKind::PressureDiff, GoalKind::Drag, GoalKind::Lift] {
        let f = Functional::new(&sys, kind.unit_weights().unwrap()).unwrap();
        let rhs = f.rhs(&sys).unwrap();
        for _ in 0..5 {
            let mut v = sys.vector((0..sys.n_dofs()).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
            sys.constraints().distribute_homogeneous(&mut v.values);
            let w = sys.vector((0..sys.n_dofs()).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let j = f.apply(&sys, &v).unwrap();
            let r: f64 = rhs.iter().zip(&v.values).map(|(a, b)| a * b).sum();
            assert!((j - r).abs() <= 1e-12 * j.abs().max(1e-3), "{kind:?}: {j} vs {r}");
            let (a, b) = (0.7, -1.3);
            let lhs = f.apply(&sys, &v.axpy(b / a, &w).unwrap()).unwrap() * a;
            let rhs2 = a * j + b * f.apply(&sys, &w).unwrap();
            assert!((lhs - rhs2).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
        if kind == GoalKind::PressureDiff {
            let nz: Vec<usize> = (0..rhs.len()).filter(|&i| rhs[i] != 0.0).collect();
            assert!(nz.iter().all(|&i| sys.dofs().component(i) == 2));
        }
    }
}

#[test]
fn drag_ignores_constant_pressure_shift() {
    let sys = system(1, 4);
    let mut rng = StdRng::seed_from_u64(5);
    let v = sys.vector((0..sys.n_dofs()).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let shift = sys.interpolate(|_| [0.0, 0.0, 2.5]);
    let a = evaluate_goals(&sys, &v).unwrap();
    let b = evaluate_goals(&sys, &v.axpy(1.0, &shift).unwrap()).unwrap();
    assert!((a.drag - b.drag).abs() < 1e-11 && (a.lift - b.lift).abs() < 1e-11);
}

#[test]
fn combined_weights() {
    let base = GoalValues { dp: 1.0, drag: 2.0, lift: -4.0 };
    let plus = GoalValues { dp: 1.0 + 1e-3, drag: 2.0 - 1e-5, lift: -4.0 + 1e-6 };
    let w = CombinedWeights::fix(base, plus);
    assert_eq!(w.signs, [1.0, -1.0, 1.0]);
    assert_eq!(w.value(plus), 0.0);
    let want = 1e-3 / 1.0 + 1e-5 / 2.0 + 1e-6 / 4.0;
    assert!((w.enriched_difference() - want).abs() < 1e-10 * want);
    assert!((w.value(plus) - w.value(base) - want).abs() < 1e-15);
    let same = CombinedWeights::fix(base, base);
    assert_eq!(same.signs, [0.0; 3]);
    assert_eq!(same.enriched_difference(), 0.0);
    let zero = CombinedWeights::fix(GoalValues { dp: 0.0, drag: 1.0, lift: 1.0 }, plus);
    assert_eq!(zero.omega[0], 0.0);
}

#[test]
fn combined_rhs_is_weighted_sum() {
    let sys = system(1, 2);
    let w = CombinedWeights {
        base: [1.0, 2.0, 4.0],
        plus: [2.0, 3.0, 5.0],
        signs: [1.0; 3],
        omega: [1.0, 0.5, 0.25],
    };
    let comb = Functional::new(&sys, w.omega).unwrap().rhs(&sys).unwrap();
    let parts: Vec<Vec<f64>> = [GoalKind::PressureDiff, GoalKind::Drag, GoalKind::Lift]
        .iter()
        .map(|k| Functional::new(&sys, k.unit_weights().unwrap()).unwrap().rhs(&sys).unwrap())
        .collect();
    for i in 0..sys.n_dofs() {
        let want = parts[0][i] + parts[1][i] / 2.0 + parts[2][i] / 4.0;
        assert!((comb[i] - want).abs() <= 1e-13 * want.abs().max(1.0));
    }
}

#[test]
fn benchmark_drag_is_positive() {
    let sys = Arc::new(system(2, 2));
    let stokes = newton_solve(
        &FormContext::new(Arc::clone(&sys), false).unwrap(),
        &sys.initial_guess(),
        &NewtonControls::default(),
        None,
    )
    .unwrap();
    let ns = newton_solve(&FormContext::new(Arc::clone(&sys), true).unwrap(), &stokes.u, &NewtonControls::default(), None)
        .unwrap();
    let g = evaluate_goals(&sys, &ns.u).unwrap();
    eprintln!("level 2: {g:?} dofs {}", sys.n_dofs());
    assert!((g.drag - 5.58).abs() < 0.3, "{g:?}");
    assert!((g.dp - 0.1175).abs() < 0.01, "{g:?}");
}
