//! Benchmark geometry and the hierarchical quadrilateral mesh.

use std::collections::{BTreeSet, HashMap};

use crate::element::CellMapping;
use crate::error::{Error, Result};

/// Channel-with-cylinder geometry and flow constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DomainSpec {
    pub channel_length: f64,
    pub channel_height: f64,
    pub cylinder_center: [f64; 2],
    pub cylinder_radius: f64,
    pub viscosity: f64,
    pub inflow_peak: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            channel_length: 2.2,
            channel_height: 0.41,
            cylinder_center: [0.2, 0.2],
            cylinder_radius: 0.05,
            viscosity: 1e-3,
            inflow_peak: 0.3,
        }
    }
}

impl DomainSpec {
    /// Parabolic inflow profile `(U 4y(H−y)/H², 0)`.
    pub fn inflow(&self, y: f64) -> [f64; 2] {
        let h = self.channel_height;
        [self.inflow_peak * 4.0 * y * (h - y) / (h * h), 0.0]
    }

    /// Exact area of the channel minus the disk.
    pub fn area(&self) -> f64 {
        self.channel_length * self.channel_height
            - std::f64::consts::PI * self.cylinder_radius * self.cylinder_radius
    }

    fn project_to_circle(&self, p: [f64; 2]) -> [f64; 2] {
        let c = self.cylinder_center;
        let d = [p[0] - c[0], p[1] - c[1]];
        let s = self.cylinder_radius / d[0].hypot(d[1]);
        [c[0] + s * d[0], c[1] + s * d[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    NoSlip,
    Cylinder,
}

impl BoundaryTag {
    pub fn is_dirichlet(self) -> bool {
        !matches!(self, BoundaryTag::Outflow)
    }
}

/// Local edges as (first, second) local vertex, oriented along increasing
/// reference coordinate: bottom, right, top, left.
pub const LOCAL_EDGES: [[usize; 2]; 4] = [[0, 1], [1, 2], [3, 2], [0, 3]];

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub parent: Option<usize>,
    /// Halves `[(v0, mid), (mid, v1)]` once split.
    pub children: Option<[usize; 2]>,
    pub midpoint: Option<usize>,
    pub tag: Option<BoundaryTag>,
    /// Cells (of any generation) having this edge as one of their four.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub vertices: [usize; 4],
    pub edges: [usize; 4],
    pub level: u32,
    pub parent: Option<usize>,
    pub children: Option<[usize; 4]>,
}

impl Cell {
    pub fn is_active(&self) -> bool {
        self.children.is_none()
    }
}

/// Hierarchical quadrilateral mesh. Cells are never removed, so a cell id
/// stays valid across refinements.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    spec: DomainSpec,
    vertices: Vec<[f64; 2]>,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    active: Vec<usize>,
}

impl Mesh {
    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Active cell ids, ascending.
    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn mapping(&self, c: usize) -> CellMapping {
        let v = self.cells[c].vertices;
        CellMapping::new([self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]], self.vertices[v[3]]])
    }

    pub fn area(&self) -> f64 {
        self.active.iter().map(|&c| self.mapping(c).area()).sum()
    }

    /// Whether local edge `l` of cell `c` runs along the global edge's orientation.
    pub fn edge_aligned(&self, c: usize, l: usize) -> bool {
        let cell = &self.cells[c];
        cell.vertices[LOCAL_EDGES[l][0]] == self.edges[cell.edges[l]].vertices[0]
    }

    /// Split edges that still have an active cell on their unsplit side.
    pub fn hanging_edges(&self) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&e| {
                let ed = &self.edges[e];
                ed.children.is_some() && ed.cells.iter().any(|&c| self.cells[c].is_active())
            })
            .collect()
    }

    /// Boundary edges of active cells with their tag.
    pub fn boundary_faces(&self) -> Vec<(usize, usize, BoundaryTag)> {
        let mut out = Vec::new();
        for &c in &self.active {
            for (l, &e) in self.cells[c].edges.iter().enumerate() {
                if let Some(tag) = self.edges[e].tag {
                    out.push((c, l, tag));
                }
            }
        }
        out
    }

    /// Largest level difference between active cells sharing (part of) an edge.
    pub fn max_level_jump(&self) -> u32 {
        let mut worst = 0;
        for &c in &self.active {
            let lc = self.cells[c].level;
            for &e in &self.cells[c].edges {
                let mut stack = vec![e];
                while let Some(x) = stack.pop() {
                    let ed = &self.edges[x];
                    for &n in &ed.cells {
                        if n != c && self.cells[n].is_active() {
                            worst = worst.max(self.cells[n].level.abs_diff(lc));
                        }
                    }
                    if let Some(ch) = ed.children {
                        stack.extend(ch);
                    }
                }
                let mut up = self.edges[e].parent;
                while let Some(p) = up {
                    for &n in &self.edges[p].cells {
                        if self.cells[n].is_active() {
                            worst = worst.max(self.cells[n].level.abs_diff(lc));
                        }
                    }
                    up = self.edges[p].parent;
                }
            }
        }
        worst
    }

    /// Refines the marked active cells plus whatever is needed to keep the
    /// mesh 1-irregular.
    pub fn refine(&self, marked: &BTreeSet<usize>) -> Result<Mesh> {
        for &c in marked {
            if c >= self.cells.len() || !self.cells[c].is_active() {
                return Err(Error::OutOfRange { what: "active cell", index: c, limit: self.cells.len() });
            }
        }
        let mut set = marked.clone();
        let mut work: Vec<usize> = marked.iter().copied().collect();
        while let Some(c) = work.pop() {
            for &e in &self.cells[c].edges {
                if let Some(p) = self.edges[e].parent {
                    for &n in &self.edges[p].cells {
                        if self.cells[n].is_active() && set.insert(n) {
                            work.push(n);
                        }
                    }
                }
            }
        }
        let mut order: Vec<usize> = set.into_iter().collect();
        order.sort_by_key(|&c| (self.cells[c].level, c));
        let mut mesh = self.clone();
        for c in order {
            mesh.refine_cell(c);
        }
        mesh.active = (0..mesh.cells.len()).filter(|&c| mesh.cells[c].is_active()).collect();
        Ok(mesh)
    }

    pub fn uniform_refine(&self) -> Mesh {
        let all: BTreeSet<usize> = self.active.iter().copied().collect();
        self.refine(&all).expect("active cells are valid marks")
    }

    fn add_vertex(&mut self, p: [f64; 2]) -> usize {
        self.vertices.push(p);
        self.vertices.len() - 1
    }

    fn add_edge(&mut self, a: usize, b: usize, parent: Option<usize>, tag: Option<BoundaryTag>) -> usize {
        self.edges.push(Edge { vertices: [a, b], parent, children: None, midpoint: None, tag, cells: Vec::new() });
        self.edges.len() - 1
    }

    fn split_edge(&mut self, e: usize) -> usize {
        if let Some(m) = self.edges[e].midpoint {
            return m;
        }
        let [a, b] = self.edges[e].vertices;
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let mut mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        let tag = self.edges[e].tag;
        if tag == Some(BoundaryTag::Cylinder) {
            mid = self.spec.project_to_circle(mid);
        }
        let m = self.add_vertex(mid);
        let c0 = self.add_edge(a, m, Some(e), tag);
        let c1 = self.add_edge(m, b, Some(e), tag);
        self.edges[e].children = Some([c0, c1]);
        self.edges[e].midpoint = Some(m);
        m
    }

    /// The half of split edge `e` that touches vertex `v`.
    fn half(&self, e: usize, v: usize) -> usize {
        let [c0, c1] = self.edges[e].children.expect("edge is split");
        if self.edges[c0].vertices.contains(&v) {
            c0
        } else {
            c1
        }
    }

    fn refine_cell(&mut self, c: usize) {
        let Cell { vertices: v, edges: e, level, .. } = self.cells[c].clone();
        let m: Vec<usize> = e.iter().map(|&ei| self.split_edge(ei)).collect();
        let p: Vec<[f64; 2]> = v.iter().map(|&i| self.vertices[i]).collect();
        let center = self.add_vertex([
            0.25 * (p[0][0] + p[1][0] + p[2][0] + p[3][0]),
            0.25 * (p[0][1] + p[1][1] + p[2][1] + p[3][1]),
        ]);
        let ib = self.add_edge(m[0], center, None, None);
        let it = self.add_edge(center, m[2], None, None);
        let il = self.add_edge(m[3], center, None, None);
        let ir = self.add_edge(center, m[1], None, None);
        let kids = [
            ([v[0], m[0], center, m[3]], [self.half(e[0], v[0]), ib, il, self.half(e[3], v[0])]),
            ([m[0], v[1], m[1], center], [self.half(e[0], v[1]), self.half(e[1], v[1]), ir, ib]),
            ([center, m[1], v[2], m[2]], [ir, self.half(e[1], v[2]), self.half(e[2], v[2]), it]),
            ([m[3], center, m[2], v[3]], [il, it, self.half(e[2], v[3]), self.half(e[3], v[3])]),
        ];
        let first = self.cells.len();
        for (q, (verts, edges)) in kids.into_iter().enumerate() {
            for &ed in &edges {
                self.edges[ed].cells.push(first + q);
            }
            self.cells.push(Cell { vertices: verts, edges, level: level + 1, parent: Some(c), children: None });
        }
        self.cells[c].children = Some([first, first + 1, first + 2, first + 3]);
    }
}

/// Builds the benchmark mesh: an eight-cell ring around the cylinder grafted
/// into a tensor grid of the channel, then `pre_refinements` uniform
/// refinements.
pub fn build_benchmark_mesh(spec: &DomainSpec, pre_refinements: usize) -> Mesh {
    let xs = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2];
    let ys = [0.0, 0.1, 0.2, 0.3, 0.41];
    let scale_x = spec.channel_length / 2.2;
    let scale_y = spec.channel_height / 0.41;
    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut grid: HashMap<(usize, usize), usize> = HashMap::new();
    let mut grid_vertex = |i: usize, j: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
        *grid.entry((i, j)).or_insert_with(|| {
            vertices.push([xs[i] * scale_x, ys[j] * scale_y]);
            vertices.len() - 1
        })
    };
    let mut quads: Vec<[usize; 4]> = Vec::new();
    for j in 0..ys.len() - 1 {
        for i in 0..xs.len() - 1 {
            if (1..=2).contains(&i) && (1..=2).contains(&j) {
                continue;
            }
            quads.push([
                grid_vertex(i, j, &mut vertices),
                grid_vertex(i + 1, j, &mut vertices),
                grid_vertex(i + 1, j + 1, &mut vertices),
                grid_vertex(i, j + 1, &mut vertices),
            ]);
        }
    }
    // Box around the cylinder, counter-clockwise from east.
    let box_ij = [(3, 2), (3, 3), (2, 3), (1, 3), (1, 2), (1, 1), (2, 1), (3, 1)];
    let outer: Vec<usize> = box_ij.iter().map(|&(i, j)| grid_vertex(i, j, &mut vertices)).collect();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let dirs = [[1.0, 0.0], [h, h], [0.0, 1.0], [-h, h], [-1.0, 0.0], [-h, -h], [0.0, -1.0], [h, -h]];
    let (c, r) = (spec.cylinder_center, spec.cylinder_radius);
    let inner: Vec<usize> = dirs
        .iter()
        .map(|d| {
            vertices.push([c[0] + r * d[0], c[1] + r * d[1]]);
            vertices.len() - 1
        })
        .collect();
    for k in 0..8 {
        let k1 = (k + 1) % 8;
        quads.push([inner[k], outer[k], outer[k1], inner[k1]]);
    }

    let mut mesh = Mesh { spec: *spec, vertices, cells: Vec::new(), edges: Vec::new(), active: Vec::new() };
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for (id, q) in quads.iter().enumerate() {
        let mut edges = [0; 4];
        for (l, le) in LOCAL_EDGES.iter().enumerate() {
            let (a, b) = (q[le[0]], q[le[1]]);
            let key = (a.min(b), a.max(b));
            let e = match lookup.get(&key) {
                Some(&e) => e,
                None => {
                    let e = mesh.add_edge(a, b, None, None);
                    lookup.insert(key, e);
                    e
                }
            };
            mesh.edges[e].cells.push(id);
            edges[l] = e;
        }
        mesh.cells.push(Cell { vertices: *q, edges, level: 0, parent: None, children: None });
    }
    let inner_set: BTreeSet<usize> = inner.iter().copied().collect();
    let (len, height) = (spec.channel_length, spec.channel_height);
    for e in 0..mesh.edges.len() {
        if mesh.edges[e].cells.len() != 1 {
            continue;
        }
        let [a, b] = mesh.edges[e].vertices;
        let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
        let tag = if inner_set.contains(&a) && inner_set.contains(&b) {
            BoundaryTag::Cylinder
        } else if pa[0] == 0.0 && pb[0] == 0.0 {
            BoundaryTag::Inflow
        } else if pa[0] == len && pb[0] == len {
            BoundaryTag::Outflow
        } else {
            debug_assert!((pa[1] == 0.0 && pb[1] == 0.0) || (pa[1] == height && pb[1] == height));
            BoundaryTag::NoSlip
        };
        mesh.edges[e].tag = Some(tag);
    }
    mesh.active = (0..mesh.cells.len()).collect();
    for _ in 0..pre_refinements {
        mesh = mesh.uniform_refine();
    }
    mesh
}

/// Axis-aligned rectangle split into `nx × ny` cells, all boundary edges
/// tagged `NoSlip` except `x = x0` (`Inflow`) and `x = x1` (`Outflow`).
/// Used for small test problems away from the cylinder.
pub fn build_rectangle_mesh(spec: &DomainSpec, x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Mesh {
    let mut mesh = Mesh { spec: *spec, vertices: Vec::new(), cells: Vec::new(), edges: Vec::new(), active: Vec::new() };
    for j in 0..=ny {
        for i in 0..=nx {
            let t = [i as f64 / nx as f64, j as f64 / ny as f64];
            mesh.vertices.push([x[0] + t[0] * (x[1] - x[0]), y[0] + t[1] * (y[1] - y[0])]);
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for j in 0..ny {
        for i in 0..nx {
            let q = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)];
            let id = mesh.cells.len();
            let mut edges = [0; 4];
            for (l, le) in LOCAL_EDGES.iter().enumerate() {
                let (a, b) = (q[le[0]], q[le[1]]);
                let key = (a.min(b), a.max(b));
                let e = match lookup.get(&key) {
                    Some(&e) => e,
                    None => {
                        let e = mesh.add_edge(a, b, None, None);
                        lookup.insert(key, e);
                        e
                    }
                };
                mesh.edges[e].cells.push(id);
                edges[l] = e;
            }
            mesh.cells.push(Cell { vertices: q, edges, level: 0, parent: None, children: None });
        }
    }
    for e in 0..mesh.edges.len() {
        if mesh.edges[e].cells.len() == 1 {
            let [a, b] = mesh.edges[e].vertices;
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            mesh.edges[e].tag = Some(if pa[0] == x[0] && pb[0] == x[0] {
                BoundaryTag::Inflow
            } else if pa[0] == x[1] && pb[0] == x[1] {
                BoundaryTag::Outflow
            } else {
                BoundaryTag::NoSlip
            });
        }
    }
    mesh.active = (0..mesh.cells.len()).collect();
    mesh
}
