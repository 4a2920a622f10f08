//! Global mixed spaces: numbering, hanging-node and Dirichlet constraints,
//! and transfer of coefficient vectors between spaces.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::element::LagrangeBasis;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, DomainSpec, Mesh, LOCAL_EDGES};
use crate::linalg::{SparseMatrix, SparsityPattern};

const NONE: u32 = u32::MAX;

/// Reference-coordinate offset of child `q` inside its parent.
pub const CHILD_OFFSETS: [[f64; 2]; 4] = [[0.0, 0.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum NodeKey {
    Vertex(u32),
    Edge(u32, u8),
    Interior(u32, u16),
}

/// One constrained dof: `x[dof] = Σ w x[master] + inhomogeneity`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLine {
    pub dof: u32,
    pub entries: Vec<(u32, f64)>,
    pub inhomogeneity: f64,
}

/// Constraint rows after chain elimination: masters are never constrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    index: Vec<u32>,
    lines: Vec<ConstraintLine>,
}

impl ConstraintSet {
    pub fn empty(n: usize) -> Self {
        Self { index: vec![NONE; n], lines: Vec::new() }
    }

    /// Builds a closed set from raw rows whose masters may themselves be
    /// constrained. Rows must not form cycles.
    pub fn from_raw(n: usize, raw: Vec<ConstraintLine>) -> Result<Self> {
        let mut pos = vec![NONE; n];
        for (i, l) in raw.iter().enumerate() {
            if pos[l.dof as usize] != NONE {
                return Err(Error::Incompatible(format!("dof {} constrained twice", l.dof)));
            }
            pos[l.dof as usize] = i as u32;
        }
        let mut resolved: Vec<Option<ConstraintLine>> = vec![None; raw.len()];
        fn resolve(
            i: usize,
            raw: &[ConstraintLine],
            pos: &[u32],
            resolved: &mut Vec<Option<ConstraintLine>>,
            depth: usize,
        ) -> Result<()> {
            if resolved[i].is_some() {
                return Ok(());
            }
            if depth > 64 {
                return Err(Error::Incompatible("cyclic constraints".into()));
            }
            let mut acc: HashMap<u32, f64> = HashMap::new();
            let mut inhom = raw[i].inhomogeneity;
            for &(m, w) in &raw[i].entries {
                let p = pos[m as usize];
                if p == NONE {
                    *acc.entry(m).or_insert(0.0) += w;
                } else {
                    resolve(p as usize, raw, pos, resolved, depth + 1)?;
                    let sub = resolved[p as usize].as_ref().expect("resolved");
                    inhom += w * sub.inhomogeneity;
                    for &(mm, ww) in &sub.entries {
                        *acc.entry(mm).or_insert(0.0) += w * ww;
                    }
                }
            }
            let mut entries: Vec<(u32, f64)> = acc.into_iter().collect();
            entries.sort_unstable_by_key(|e| e.0);
            resolved[i] = Some(ConstraintLine { dof: raw[i].dof, entries, inhomogeneity: inhom });
            Ok(())
        }
        for i in 0..raw.len() {
            resolve(i, &raw, &pos, &mut resolved, 0)?;
        }
        let mut lines: Vec<ConstraintLine> = resolved.into_iter().map(|l| l.expect("resolved")).collect();
        lines.sort_unstable_by_key(|l| l.dof);
        let mut index = vec![NONE; n];
        for (i, l) in lines.iter().enumerate() {
            index[l.dof as usize] = i as u32;
        }
        Ok(Self { index, lines })
    }

    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn lines(&self) -> &[ConstraintLine] {
        &self.lines
    }

    #[inline]
    pub fn is_constrained(&self, i: usize) -> bool {
        self.index[i] != NONE
    }

    pub fn line(&self, i: usize) -> Option<&ConstraintLine> {
        let p = self.index[i];
        (p != NONE).then(|| &self.lines[p as usize])
    }

    /// Sets every constrained entry from its masters and inhomogeneity.
    pub fn distribute(&self, v: &mut [f64]) {
        for l in &self.lines {
            v[l.dof as usize] = l.entries.iter().map(|&(m, w)| w * v[m as usize]).sum::<f64>() + l.inhomogeneity;
        }
    }

    /// As [`distribute`](Self::distribute) with all inhomogeneities taken as zero.
    pub fn distribute_homogeneous(&self, v: &mut [f64]) {
        for l in &self.lines {
            v[l.dof as usize] = l.entries.iter().map(|&(m, w)| w * v[m as usize]).sum::<f64>();
        }
    }

    pub fn zero_constrained(&self, v: &mut [f64]) {
        for l in &self.lines {
            v[l.dof as usize] = 0.0;
        }
    }

    /// Appends `(target, weight)` pairs that a contribution to global dof `g`
    /// is redirected to.
    #[inline]
    pub fn expand(&self, g: u32, out: &mut Vec<(u32, f64)>) {
        match self.line(g as usize) {
            None => out.push((g, 1.0)),
            Some(l) => out.extend_from_slice(&l.entries),
        }
    }

    /// Condensed targets of each local dof, flattened with offsets.
    pub fn expand_all(&self, dofs: &[u32], targets: &mut Vec<(u32, f64)>, offsets: &mut Vec<usize>) {
        targets.clear();
        offsets.clear();
        offsets.push(0);
        for &g in dofs {
            self.expand(g, targets);
            offsets.push(targets.len());
        }
    }

    /// Adds a local vector into the condensed global vector.
    pub fn add_vector(&self, dofs: &[u32], local: &[f64], global: &mut [f64]) {
        for (&g, &v) in dofs.iter().zip(local) {
            match self.line(g as usize) {
                None => global[g as usize] += v,
                Some(l) => {
                    for &(m, w) in &l.entries {
                        global[m as usize] += w * v;
                    }
                }
            }
        }
    }

    /// Adds a row-major local matrix into the condensed global matrix.
    pub fn add_matrix(&self, dofs: &[u32], local: &[f64], a: &mut SparseMatrix, scratch: &mut ExpandScratch) {
        let n = dofs.len();
        self.expand_all(dofs, &mut scratch.targets, &mut scratch.offsets);
        let (t, o) = (&scratch.targets, &scratch.offsets);
        let pattern = Arc::clone(a.pattern());
        let values = a.values_mut();
        for i in 0..n {
            for &(ri, wi) in &t[o[i]..o[i + 1]] {
                let row = pattern.row(ri as usize);
                let base = pattern.row_ptr()[ri as usize];
                for j in 0..n {
                    let k = local[i * n + j];
                    if k == 0.0 {
                        continue;
                    }
                    for &(cj, wj) in &t[o[j]..o[j + 1]] {
                        let p = row.binary_search(&cj).expect("entry in sparsity pattern");
                        values[base + p] += wi * wj * k;
                    }
                }
            }
        }
    }

    /// Puts ones on the diagonal of constrained rows.
    pub fn finish_matrix(&self, a: &mut SparseMatrix) {
        for l in &self.lines {
            let i = l.dof as usize;
            a.add(i, i, 1.0);
        }
    }
}

#[derive(Debug, Default)]
pub struct ExpandScratch {
    targets: Vec<(u32, f64)>,
    offsets: Vec<usize>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Continuous Lagrange space with several scalar components of given
/// degrees on the active cells of a mesh.
#[derive(Debug, Clone)]
pub struct DofHandler {
    mesh: Arc<Mesh>,
    bases: Vec<LagrangeBasis>,
    offsets: Vec<usize>,
    n_local: usize,
    cell_pos: Vec<u32>,
    cell_dofs: Vec<u32>,
    n_dofs: usize,
    component: Vec<u8>,
    points: Vec<[f64; 2]>,
    keys: Vec<HashMap<NodeKey, u32>>,
}

impl DofHandler {
    pub fn new(mesh: Arc<Mesh>, degrees: &[usize]) -> Result<Self> {
        let bases: Vec<LagrangeBasis> = degrees.iter().map(|&d| LagrangeBasis::new(d)).collect::<Result<_>>()?;
        let mut offsets = vec![0];
        for b in &bases {
            offsets.push(offsets.last().unwrap() + b.n_nodes());
        }
        let n_local = *offsets.last().unwrap();
        let mut cell_pos = vec![NONE; mesh.cells().len()];
        for (p, &c) in mesh.active_cells().iter().enumerate() {
            cell_pos[c] = p as u32;
        }
        let mut keys: Vec<HashMap<NodeKey, u32>> = vec![HashMap::new(); bases.len()];
        let mut cell_dofs = Vec::with_capacity(mesh.n_active() * n_local);
        let mut component = Vec::new();
        let mut points = Vec::new();
        for &c in mesh.active_cells() {
            let map = mesh.mapping(c);
            for (comp, b) in bases.iter().enumerate() {
                for i in 0..b.n_nodes() {
                    let key = node_key(&mesh, c, b.degree(), i);
                    let next = component.len() as u32;
                    let g = *keys[comp].entry(key).or_insert(next);
                    if g == next {
                        component.push(comp as u8);
                        points.push(map.point(b.node(i)));
                    }
                    cell_dofs.push(g);
                }
            }
        }
        let n_dofs = component.len();
        Ok(Self { mesh, bases, offsets, n_local, cell_pos, cell_dofs, n_dofs, component, points, keys })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_components(&self) -> usize {
        self.bases.len()
    }

    pub fn basis(&self, comp: usize) -> &LagrangeBasis {
        &self.bases[comp]
    }

    /// Local index of the first node of component `comp`.
    pub fn local_offset(&self, comp: usize) -> usize {
        self.offsets[comp]
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    /// Position of an active cell in the active list.
    pub fn position(&self, cell: usize) -> Option<usize> {
        self.cell_pos.get(cell).copied().filter(|&p| p != NONE).map(|p| p as usize)
    }

    pub fn cell_dofs(&self, pos: usize) -> &[u32] {
        &self.cell_dofs[pos * self.n_local..(pos + 1) * self.n_local]
    }

    pub fn component(&self, dof: usize) -> usize {
        self.component[dof] as usize
    }

    pub fn support_point(&self, dof: usize) -> [f64; 2] {
        self.points[dof]
    }

    fn dof_of(&self, comp: usize, key: NodeKey) -> Option<u32> {
        self.keys[comp].get(&key).copied()
    }

    /// Raw hanging-node rows for all components.
    pub fn hanging_lines(&self) -> Result<Vec<ConstraintLine>> {
        let mut out = Vec::new();
        for p in self.mesh.hanging_edges() {
            let edge = self.mesh.edge(p);
            let [a, b] = edge.vertices;
            let [c0, c1] = edge.children.expect("hanging edge is split");
            let mid = edge.midpoint.expect("hanging edge is split");
            for comp in 0..self.bases.len() {
                let line = self.bases[comp].line();
                let d = line.degree();
                let master_key = |q: usize| {
                    if q == 0 {
                        NodeKey::Vertex(a as u32)
                    } else if q == d {
                        NodeKey::Vertex(b as u32)
                    } else {
                        NodeKey::Edge(p as u32, q as u8)
                    }
                };
                let masters: Vec<u32> = (0..=d)
                    .map(|q| self.dof_of(comp, master_key(q)).ok_or_else(|| missing("hanging master")))
                    .collect::<Result<_>>()?;
                let mut slaves = vec![(NodeKey::Vertex(mid as u32), 0.5)];
                for s in 1..d {
                    let t = s as f64 / (2 * d) as f64;
                    slaves.push((NodeKey::Edge(c0 as u32, s as u8), t));
                    slaves.push((NodeKey::Edge(c1 as u32, s as u8), 0.5 + t));
                }
                for (key, t) in slaves {
                    let dof = self.dof_of(comp, key).ok_or_else(|| missing("hanging slave"))?;
                    let entries = (0..=d)
                        .map(|q| (masters[q], line.value(q, t)))
                        .filter(|&(_, w)| w != 0.0)
                        .collect();
                    out.push(ConstraintLine { dof, entries, inhomogeneity: 0.0 });
                }
            }
        }
        Ok(out)
    }
}

fn missing(what: &str) -> Error {
    Error::Incompatible(format!("{what} node not found; mesh is not 1-irregular"))
}

fn node_key(mesh: &Mesh, c: usize, k: usize, local: usize) -> NodeKey {
    let cell = mesh.cell(c);
    let (i, j) = (local % (k + 1), local / (k + 1));
    let corner = match (i == 0, i == k, j == 0, j == k) {
        (true, _, true, _) => Some(0),
        (_, true, true, _) => Some(1),
        (_, true, _, true) => Some(2),
        (true, _, _, true) => Some(3),
        _ => None,
    };
    if let Some(v) = corner {
        return NodeKey::Vertex(cell.vertices[v] as u32);
    }
    let (l, m) = if j == 0 {
        (0, i)
    } else if i == k {
        (1, j)
    } else if j == k {
        (2, i)
    } else if i == 0 {
        (3, j)
    } else {
        return NodeKey::Interior(c as u32, local as u16);
    };
    let m = if mesh.edge_aligned(c, l) { m } else { k - m };
    NodeKey::Edge(cell.edges[l] as u32, m as u8)
}

/// Field value at a point: velocity, velocity gradient (`g[a][b] = ∂_b u_a`)
/// and the pressure unknown.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldValue {
    pub u: [f64; 2],
    pub grad_u: [[f64; 2]; 2],
    pub p: f64,
    pub grad_p: [f64; 2],
}

/// Coefficient vector tied to one [`FeSystem`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixedVector {
    pub values: Vec<f64>,
    system: u64,
}

impl MixedVector {
    pub fn system_id(&self) -> u64 {
        self.system
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + alpha * other`, on the same system.
    pub fn axpy(&self, alpha: f64, other: &MixedVector) -> Result<MixedVector> {
        if self.system != other.system {
            return Err(Error::Incompatible("vectors live on different systems".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect();
        Ok(MixedVector { values, system: self.system })
    }
}

/// Taylor-Hood space `[Q_k]² × Q_{k/2}` with Dirichlet and hanging-node
/// constraints. Components are ordered `u_x, u_y, p`.
#[derive(Debug, Clone)]
pub struct FeSystem {
    id: u64,
    dofs: DofHandler,
    vel_degree: usize,
    constraints: ConstraintSet,
    spec: DomainSpec,
}

impl FeSystem {
    pub fn new(mesh: Arc<Mesh>, vel_degree: usize) -> Result<Self> {
        if !matches!(vel_degree, 2 | 4) {
            return Err(Error::Config(format!("velocity degree must be 2 or 4, got {vel_degree}")));
        }
        let spec = *mesh.spec();
        let dofs = DofHandler::new(mesh, &[vel_degree, vel_degree, vel_degree / 2])?;
        let n = dofs.n_dofs();
        let mut dirichlet: Vec<Option<f64>> = vec![None; n];
        let mesh = Arc::clone(dofs.mesh());
        let faces = mesh.boundary_faces();
        let k = vel_degree;
        for pass in [true, false] {
            for &(c, l, tag) in &faces {
                let inflow = tag == BoundaryTag::Inflow;
                if tag == BoundaryTag::Outflow || inflow != pass {
                    continue;
                }
                let pos = dofs.position(c).expect("active cell");
                let cd = dofs.cell_dofs(pos);
                for comp in 0..2 {
                    for node in edge_nodes(k, l) {
                        let g = cd[dofs.local_offset(comp) + node] as usize;
                        let value = if inflow { spec.inflow(dofs.support_point(g)[1])[comp] } else { 0.0 };
                        dirichlet[g] = Some(value);
                    }
                }
            }
        }
        let mut raw: Vec<ConstraintLine> = dirichlet
            .iter()
            .enumerate()
            .filter_map(|(g, v)| v.map(|v| ConstraintLine { dof: g as u32, entries: vec![], inhomogeneity: v }))
            .collect();
        raw.extend(dofs.hanging_lines()?);
        let constraints = ConstraintSet::from_raw(n, raw)?;
        let id = NEXT_ID.fetch_add(1, Ordering::Relaxed);
        Ok(Self { id, dofs, vel_degree, constraints, spec })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dofs(&self) -> &DofHandler {
        &self.dofs
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.dofs.mesh()
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.n_dofs()
    }

    pub fn vel_degree(&self) -> usize {
        self.vel_degree
    }

    pub fn pre_degree(&self) -> usize {
        self.vel_degree / 2
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn zeros(&self) -> MixedVector {
        MixedVector { values: vec![0.0; self.n_dofs()], system: self.id }
    }

    /// Wraps raw coefficients.
    pub fn vector(&self, values: Vec<f64>) -> Result<MixedVector> {
        if values.len() != self.n_dofs() {
            return Err(Error::Incompatible(format!("length {} for {} dofs", values.len(), self.n_dofs())));
        }
        Ok(MixedVector { values, system: self.id })
    }

    pub fn check(&self, v: &MixedVector) -> Result<()> {
        if v.system != self.id {
            return Err(Error::Incompatible("vector belongs to a different system".into()));
        }
        Ok(())
    }

    /// The zero field with boundary values imposed.
    pub fn initial_guess(&self) -> MixedVector {
        let mut v = self.zeros();
        self.constraints.distribute(&mut v.values);
        v
    }

    /// Nodal interpolant of `f(x) = (u_x, u_y, p)`, without constraints applied.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> [f64; 3]) -> MixedVector {
        let values =
            (0..self.n_dofs()).map(|g| f(self.dofs.support_point(g))[self.dofs.component(g)]).collect();
        MixedVector { values, system: self.id }
    }

    /// Sparsity of the condensed operator.
    pub fn sparsity_pattern(&self) -> SparsityPattern {
        let n = self.n_dofs();
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut t = Vec::new();
        let mut o = Vec::new();
        for pos in 0..self.mesh().n_active() {
            self.constraints.expand_all(self.dofs.cell_dofs(pos), &mut t, &mut o);
            let mut set: Vec<u32> = t.iter().map(|e| e.0).collect();
            set.sort_unstable();
            set.dedup();
            for &r in &set {
                rows[r as usize].extend_from_slice(&set);
            }
            if pos % 256 == 255 {
                for r in &set {
                    let row = &mut rows[*r as usize];
                    if row.len() > 4 * set.len() {
                        row.sort_unstable();
                        row.dedup();
                    }
                }
            }
        }
        SparsityPattern::from_rows(n, rows)
    }

    /// Local coefficients of `v` on the active cell at `pos`.
    pub fn gather(&self, v: &MixedVector, pos: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.dofs.cell_dofs(pos).iter().map(|&g| v.values[g as usize]));
    }

    /// Evaluates the field at reference point `xi` of active cell `cell`.
    pub fn eval_in_cell(&self, v: &MixedVector, cell: usize, xi: [f64; 2]) -> Result<FieldValue> {
        self.check(v)?;
        let pos = self.dofs.position(cell).ok_or(Error::OutOfRange {
            what: "active cell",
            index: cell,
            limit: self.mesh().cells().len(),
        })?;
        let mp = self.mesh().mapping(cell).eval(xi);
        let cd = self.dofs.cell_dofs(pos);
        let mut out = FieldValue::default();
        for comp in 0..3 {
            let b = self.dofs.basis(comp);
            let off = self.dofs.local_offset(comp);
            for i in 0..b.n_nodes() {
                let (val, g) = b.shape_eval(i, xi)?;
                let c = v.values[cd[off + i] as usize];
                let g = mp.push_forward(g);
                if comp < 2 {
                    out.u[comp] += c * val;
                    out.grad_u[comp][0] += c * g[0];
                    out.grad_u[comp][1] += c * g[1];
                } else {
                    out.p += c * val;
                    out.grad_p[0] += c * g[0];
                    out.grad_p[1] += c * g[1];
                }
            }
        }
        Ok(out)
    }

    /// Evaluates the field at a physical point.
    pub fn eval_at(&self, v: &MixedVector, x: [f64; 2]) -> Result<FieldValue> {
        let (cell, xi) = locate(self.mesh(), x)?;
        self.eval_in_cell(v, cell, xi)
    }

    /// Re-expresses `src` (living on `src_sys`) on this system. Each active
    /// cell here must be an active cell of the source mesh or a descendant of
    /// one; values are taken through reference coordinates. Constraints of
    /// this system are applied afterwards, with boundary values if
    /// `homogeneous` is false and zero boundary values otherwise.
    pub fn transfer_from(&self, src_sys: &FeSystem, src: &MixedVector, homogeneous: bool) -> Result<MixedVector> {
        src_sys.check(src)?;
        let smesh = src_sys.mesh();
        let tmesh = self.mesh();
        let mut out = self.zeros();
        let mut local = Vec::new();
        for (pos, &c) in tmesh.active_cells().iter().enumerate() {
            let (anc, off, scale) = ancestor_in(tmesh, smesh, src_sys.dofs(), c)?;
            let spos = src_sys.dofs.position(anc).expect("ancestor is active in source");
            src_sys.gather(src, spos, &mut local);
            let cd = self.dofs.cell_dofs(pos);
            for comp in 0..3 {
                let tb = self.dofs.basis(comp);
                let sb = src_sys.dofs.basis(comp);
                let (toff, soff) = (self.dofs.local_offset(comp), src_sys.dofs.local_offset(comp));
                for i in 0..tb.n_nodes() {
                    let xn = tb.node(i);
                    let xi = [off[0] + scale * xn[0], off[1] + scale * xn[1]];
                    let mut val = 0.0;
                    for j in 0..sb.n_nodes() {
                        val += local[soff + j] * sb.shape_eval(j, xi)?.0;
                    }
                    out.values[cd[toff + i] as usize] = val;
                }
            }
        }
        if homogeneous {
            self.constraints.distribute_homogeneous(&mut out.values);
        } else {
            self.constraints.distribute(&mut out.values);
        }
        Ok(out)
    }
}

/// Local node indices of degree-`k` nodes on local edge `l`, endpoints included.
pub fn edge_nodes(k: usize, l: usize) -> Vec<usize> {
    let [a, b] = LOCAL_EDGES[l];
    let corner = |v: usize| match v {
        0 => 0,
        1 => k,
        2 => (k + 1) * (k + 1) - 1,
        _ => k * (k + 1),
    };
    let (s, e) = (corner(a), corner(b));
    let step = (e - s) / k;
    (0..=k).map(|m| s + m * step).collect()
}

/// The ancestor of `cell` (in `tmesh`) that is active in the source space,
/// with the affine map `ξ_anc = off + scale ξ_cell`.
pub fn ancestor_in(tmesh: &Mesh, smesh: &Mesh, sdofs: &DofHandler, cell: usize) -> Result<(usize, [f64; 2], f64)> {
    let mut c = cell;
    let mut off = [0.0, 0.0];
    let mut scale = 1.0;
    loop {
        if c < smesh.cells().len() && sdofs.position(c).is_some() {
            if smesh.cell(c).vertices != tmesh.cell(c).vertices {
                return Err(Error::Incompatible("meshes do not share a refinement history".into()));
            }
            return Ok((c, off, scale));
        }
        let parent = tmesh
            .cell(c)
            .parent
            .ok_or_else(|| Error::Incompatible("target cell has no active ancestor in the source mesh".into()))?;
        let q = tmesh.cell(parent).children.expect("parent has children").iter().position(|&k| k == c).unwrap();
        off = [CHILD_OFFSETS[q][0] + 0.5 * off[0], CHILD_OFFSETS[q][1] + 0.5 * off[1]];
        scale *= 0.5;
        c = parent;
    }
}

/// Finds an active cell containing `x` and its reference coordinates.
pub fn locate(mesh: &Mesh, x: [f64; 2]) -> Result<(usize, [f64; 2])> {
    let tol = 1e-10;
    for &c in mesh.active_cells() {
        let m = mesh.mapping(c);
        let v = m.vertices;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in v {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if (0..2).any(|a| x[a] < lo[a] - tol || x[a] > hi[a] + tol) {
            continue;
        }
        if let Some(xi) = m.invert(x, 1e-12) {
            return Ok((c, [xi[0].clamp(0.0, 1.0), xi[1].clamp(0.0, 1.0)]));
        }
    }
    Err(Error::PointOutsideMesh { x: x[0], y: x[1] })
}

/// Continuous Q1 hat functions of a mesh with hanging vertices eliminated;
/// they sum to one everywhere.
#[derive(Debug, Clone)]
pub struct HatSpace {
    dofs: DofHandler,
    constraints: ConstraintSet,
}

impl HatSpace {
    pub fn new(mesh: Arc<Mesh>) -> Result<Self> {
        let dofs = DofHandler::new(mesh, &[1])?;
        let constraints = ConstraintSet::from_raw(dofs.n_dofs(), dofs.hanging_lines()?)?;
        Ok(Self { dofs, constraints })
    }

    pub fn dofs(&self) -> &DofHandler {
        &self.dofs
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    /// Number of active cells on which each hat is nonzero.
    pub fn support_sizes(&self) -> Vec<usize> {
        let mut count = vec![0usize; self.dofs.n_dofs()];
        let mut t = Vec::new();
        let mut seen = Vec::new();
        for pos in 0..self.dofs.mesh().n_active() {
            seen.clear();
            for &g in self.dofs.cell_dofs(pos) {
                t.clear();
                self.constraints.expand(g, &mut t);
                seen.extend(t.iter().map(|e| e.0));
            }
            seen.sort_unstable();
            seen.dedup();
            for &g in &seen {
                count[g as usize] += 1;
            }
        }
        count
    }
}
