use std::collections::BTreeSet;

use nsdwr::geometry::{build_benchmark_mesh, BoundaryTag, DomainSpec, Mesh};
use proptest::prelude::*;

fn spec() -> DomainSpec {
    DomainSpec::default()
}

fn cylinder_vertices(mesh: &Mesh) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for e in mesh.edges() {
        if e.tag == Some(BoundaryTag::Cylinder) {
            out.extend(e.vertices.iter().map(|&v| mesh.vertex(v)));
        }
    }
    out
}

fn check_invariants(mesh: &Mesh) {
    let s = mesh.spec();
    for &c in mesh.active_cells() {
        let m = mesh.mapping(c);
        for xi in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
            assert!(m.eval(xi).det > 0.0, "cell {c} inverted");
        }
    }
    assert!(mesh.max_level_jump() <= 1);
    for p in cylinder_vertices(mesh) {
        let r = (p[0] - s.cylinder_center[0]).hypot(p[1] - s.cylinder_center[1]);
        assert!((r - s.cylinder_radius).abs() < 1e-12);
    }
    for (e, edge) in mesh.edges().iter().enumerate() {
        if edge.children.is_some() {
            continue;
        }
        let active: Vec<usize> = edge.cells.iter().copied().filter(|&c| mesh.cell(c).is_active()).collect();
        let coarse = edge.parent.map_or(0, |p| {
            mesh.edge(p).cells.iter().filter(|&&c| mesh.cell(c).is_active()).count()
        });
        assert!(active.len() + coarse <= 2, "edge {e}");
        assert!(active.len() + coarse >= 1, "edge {e} has no cell");
        assert_eq!(edge.tag.is_some(), active.len() + coarse == 1, "edge {e} tag mismatch");
    }
}

#[test]
fn coarse_mesh_layout() {
    let mesh = build_benchmark_mesh(&spec(), 0);
    assert!((40..=200).contains(&mesh.n_active()));
    let cyl = mesh.edges().iter().filter(|e| e.tag == Some(BoundaryTag::Cylinder)).count();
    assert!(cyl >= 8);
    check_invariants(&mesh);
}

#[test]
fn inflow_length_is_channel_height() {
    let mesh = build_benchmark_mesh(&spec(), 0);
    let len: f64 = mesh
        .boundary_faces()
        .iter()
        .filter(|f| f.2 == BoundaryTag::Inflow)
        .map(|&(_, _, _)| 0.0)
        .sum::<f64>()
        + mesh
            .edges()
            .iter()
            .filter(|e| e.tag == Some(BoundaryTag::Inflow) && e.children.is_none())
            .map(|e| {
                let (a, b) = (mesh.vertex(e.vertices[0]), mesh.vertex(e.vertices[1]));
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .sum::<f64>();
    assert!((len - 0.41).abs() < 1e-12);
}

#[test]
fn area_converges_from_above() {
    let s = spec();
    let exact = s.area();
    assert!((exact - 0.894146).abs() < 1e-6);
    let mut prev = f64::INFINITY;
    let mut mesh = build_benchmark_mesh(&s, 0);
    for _ in 0..5 {
        let a = mesh.area();
        // The hole is an inscribed polygon, so it is smaller than the disk.
        assert!(a > exact);
        assert!(a <= prev);
        prev = a;
        mesh = mesh.uniform_refine();
    }
    assert!(prev - exact < 1e-5);
}

#[test]
fn single_interior_mark() {
    let mesh = build_benchmark_mesh(&spec(), 0);
    let c = *mesh.active_cells().last().unwrap();
    let fine = mesh.refine(&BTreeSet::from([c])).unwrap();
    assert_eq!(fine.n_active(), mesh.n_active() + 3);
    assert!(!fine.cell(c).is_active());
    check_invariants(&fine);
}

#[test]
fn cylinder_midpoints_are_projected() {
    let s = spec();
    let mesh = build_benchmark_mesh(&s, 0);
    let c = mesh
        .active_cells()
        .iter()
        .copied()
        .find(|&c| mesh.cell(c).edges.iter().any(|&e| mesh.edge(e).tag == Some(BoundaryTag::Cylinder)))
        .unwrap();
    let fine = mesh.refine(&BTreeSet::from([c])).unwrap();
    let kids: f64 = fine.cell(c).children.unwrap().iter().map(|&k| fine.mapping(k).area()).sum();
    assert!(kids < mesh.mapping(c).area() - 1e-6);
    for &e in &mesh.cell(c).edges {
        if mesh.edge(e).tag == Some(BoundaryTag::Cylinder) {
            let m = fine.vertex(fine.edge(e).midpoint.unwrap());
            let r = (m[0] - 0.2).hypot(m[1] - 0.2);
            assert!((r - 0.05).abs() < 1e-12);
            let [a, b] = mesh.edge(e).vertices;
            let chord = [0.5 * (mesh.vertex(a)[0] + mesh.vertex(b)[0]), 0.5 * (mesh.vertex(a)[1] + mesh.vertex(b)[1])];
            assert!((chord[0] - m[0]).hypot(chord[1] - m[1]) > 1e-4);
            // The children do not tile the parent's bilinear image: the
            // projected point is off the parent's edge.
            let xi = mesh.mapping(c).invert(m, 1.0).unwrap();
            assert!(xi.iter().all(|&t| t > 1e-4 && t < 1.0 - 1e-4), "{xi:?}");
        }
    }
}

#[test]
fn straight_midpoints_are_exact() {
    let mesh = build_benchmark_mesh(&spec(), 0);
    let fine = mesh.uniform_refine();
    for (i, e) in mesh.edges().iter().enumerate() {
        if e.tag != Some(BoundaryTag::Cylinder) {
            let [a, b] = e.vertices;
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            let m = fine.vertex(fine.edge(i).midpoint.unwrap());
            assert_eq!(m, [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
        }
    }
}

#[test]
fn marking_everything_is_uniform_refinement() {
    let mesh = build_benchmark_mesh(&spec(), 0);
    let all: BTreeSet<usize> = mesh.active_cells().iter().copied().collect();
    assert_eq!(mesh.refine(&all).unwrap(), mesh.uniform_refine());
    assert_eq!(mesh.uniform_refine().n_active(), 4 * mesh.n_active());
    assert!(mesh.uniform_refine().hanging_edges().is_empty());
}

#[test]
fn uniform_refinement_keeps_hanging_pattern() {
    let mesh = build_benchmark_mesh(&spec(), 0);
    let fine = mesh.refine(&BTreeSet::from([3, 40])).unwrap();
    let before = fine.hanging_edges().len();
    assert!(before > 0);
    let u = fine.uniform_refine();
    assert_eq!(u.hanging_edges().len(), 2 * before);
    check_invariants(&u);
}

#[test]
fn invalid_mark_is_rejected() {
    let mesh = build_benchmark_mesh(&spec(), 0);
    let fine = mesh.uniform_refine();
    assert!(fine.refine(&BTreeSet::from([0])).is_err());
    assert!(fine.refine(&BTreeSet::from([usize::MAX])).is_err());
}

#[test]
fn pre_refinements_and_determinism() {
    let a = build_benchmark_mesh(&spec(), 2);
    let b = build_benchmark_mesh(&spec(), 0).uniform_refine().uniform_refine();
    assert_eq!(a, b);
    assert_eq!(a.n_active(), 16 * 64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn random_refinement_sequences_stay_valid(seeds in prop::collection::vec(prop::collection::vec(any::<u32>(), 1..6), 1..6)) {
        let mut mesh = build_benchmark_mesh(&spec(), 0);
        let mut prev_area = mesh.area();
        for picks in seeds {
            let active = mesh.active_cells();
            let marked: BTreeSet<usize> = picks.iter().map(|&p| active[p as usize % active.len()]).collect();
            let survivors: Vec<(usize, [usize; 4])> = active.iter().filter(|c| !marked.contains(c)).map(|&c| (c, mesh.cell(c).vertices)).collect();
            let next = mesh.refine(&marked).unwrap();
            let again = mesh.refine(&marked).unwrap();
            prop_assert_eq!(&next, &again);
            for (c, v) in survivors {
                prop_assert_eq!(next.cell(c).vertices, v);
            }
            check_invariants(&next);
            let a = next.area();
            prop_assert!(a <= prev_area + 1e-15 && a > next.spec().area());
            prev_area = a;
            mesh = next;
        }
    }
}
