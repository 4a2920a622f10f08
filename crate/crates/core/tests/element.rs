use nsdwr::element::{gauss_1d, gauss_rule, CellMapping, LagrangeBasis, Lagrange1d};
use proptest::prelude::*;

#[test]
fn quadratic_line_values() {
    let l = Lagrange1d::new(2);
    let v = l.values(0.25);
    let want = [0.375, 0.75, -0.125];
    for (a, b) in v.iter().zip(want) {
        assert!((a - b).abs() < 1e-15, "{v:?}");
    }
}

#[test]
fn gauss_rules_integrate_monomials() {
    for n in 1..=8 {
        let (p, w) = gauss_1d(n).unwrap();
        for d in 0..2 * n {
            let s: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(d as i32)).sum();
            assert!((s - 1.0 / (d as f64 + 1.0)).abs() < 1e-14, "n={n} d={d}");
        }
    }
    assert!(gauss_1d(0).is_err() && gauss_1d(9).is_err());
}

#[test]
fn five_point_rule_is_exact_for_degree_nine() {
    let q = gauss_rule(3).unwrap();
    let s: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[0].powi(5) * p[1].powi(5)).sum();
    assert!((s - 1.0 / 36.0).abs() < 1e-15);
    let q = gauss_rule(5).unwrap();
    let s: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * p[0].powi(9) * p[1].powi(9)).sum();
    assert!((s - 0.01).abs() < 1e-15);
}

#[test]
fn unsupported_degree_is_rejected() {
    assert!(LagrangeBasis::new(3).is_err());
    assert!(LagrangeBasis::new(2).unwrap().shape_eval(9, [0.0, 0.0]).is_err());
}

#[test]
fn basis_is_nodal() {
    for k in [1, 2, 4] {
        let b = LagrangeBasis::new(k).unwrap();
        for i in 0..b.n_nodes() {
            for j in 0..b.n_nodes() {
                let (v, _) = b.shape_eval(j, b.node(i)).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-13, "k={k} i={i} j={j}");
            }
        }
    }
}

#[test]
fn trapezoid_area() {
    let m = CellMapping::new([[0.0, 0.0], [1.0, 0.0], [1.5, 1.0], [0.0, 1.0]]);
    assert!((m.area() - 1.25).abs() < 1e-15);
    let q = gauss_rule(3).unwrap();
    let s: f64 = q.points.iter().zip(&q.weights).map(|(p, w)| w * m.eval(*p).det).sum();
    assert!((s - 1.25).abs() < 1e-14);
}

#[test]
fn inverted_cell_is_detected() {
    let m = CellMapping::new([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]);
    assert!(m.map_cell([0.5, 0.5]).is_err());
}

fn quad() -> impl Strategy<Value = [[f64; 2]; 4]> {
    prop::array::uniform4(prop::array::uniform2(-0.15f64..0.15)).prop_map(|d| {
        let base = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mut v = base;
        for i in 0..4 {
            v[i] = [base[i][0] + d[i][0], base[i][1] + d[i][1]];
        }
        v
    })
}

proptest! {
    #[test]
    fn partition_of_unity(k in prop::sample::select(vec![1usize, 2, 4]), x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let b = LagrangeBasis::new(k).unwrap();
        let t = b.tabulate(&[[x, y]]);
        let s: f64 = t.values_at(0).iter().sum();
        let g = t.grads_at(0).iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(g[0].abs() < 1e-10 && g[1].abs() < 1e-10);
    }

    #[test]
    fn mass_matrix_quadrature_is_exact(v in quad(), k in prop::sample::select(vec![1usize, 2])) {
        // Products of degree-k shapes against an affine-free bilinear jacobian
        // have degree 2k+1 per direction; k+2 points suffice.
        let b = LagrangeBasis::new(k).unwrap();
        let m = CellMapping::new(v);
        let mass = |n: usize| {
            let q = gauss_rule(n).unwrap();
            let t = b.tabulate(&q.points);
            let mut out = vec![0.0; b.n_nodes() * b.n_nodes()];
            for (qi, (p, w)) in q.points.iter().zip(&q.weights).enumerate() {
                let det = m.eval(*p).det;
                let vals = t.values_at(qi);
                for i in 0..b.n_nodes() {
                    for j in 0..b.n_nodes() {
                        out[i * b.n_nodes() + j] += w * det * vals[i] * vals[j];
                    }
                }
            }
            out
        };
        let (a, c) = (mass(k + 2), mass(8));
        for (x, y) in a.iter().zip(&c) {
            prop_assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_push_forward_matches_finite_differences(v in quad(), s in 0.1f64..0.9, t in 0.1f64..0.9, i in 0usize..9) {
        let b = LagrangeBasis::new(2).unwrap();
        let m = CellMapping::new(v);
        let mp = m.eval([s, t]);
        let (_, g) = b.shape_eval(i, [s, t]).unwrap();
        let grad = mp.push_forward(g);
        let h = 1e-6;
        for a in 0..2 {
            let mut x = mp.x;
            x[a] += h;
            let xp = m.invert(x, 1e-3).unwrap();
            x[a] -= 2.0 * h;
            let xm = m.invert(x, 1e-3).unwrap();
            let fd = (b.shape_eval(i, xp).unwrap().0 - b.shape_eval(i, xm).unwrap().0) / (2.0 * h);
            prop_assert!((fd - grad[a]).abs() < 1e-6 * (1.0 + grad[a].abs()), "{} vs {}", fd, grad[a]);
        }
    }

    #[test]
    fn invert_round_trips(v in quad(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let m = CellMapping::new(v);
        let xi = m.invert(m.point([s, t]), 1e-10).unwrap();
        prop_assert!((xi[0] - s).abs() < 1e-12 && (xi[1] - t).abs() < 1e-12);
    }
}
