//! Pressure difference, drag and lift, and their normalized combination.
//!
//! The pressure unknown of the form is the negative physical pressure, so
//! the functionals below act on `P = −p`.

use crate::element::{gauss_1d, CellMapping};
use crate::error::{Error, Result};
use crate::forms::{Integrand, TestValue};
use crate::geometry::{BoundaryTag, LOCAL_EDGES};
use crate::space::{locate, FeSystem, MixedVector};

pub const GOAL_SCALE: f64 = 500.0;
pub const X1: [f64; 2] = [0.15, 0.2];
pub const X2: [f64; 2] = [0.25, 0.2];
/// Gauss points per cylinder edge.
pub const FACE_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalKind {
    #[serde(rename = "dp")]
    PressureDiff,
    Drag,
    Lift,
    Combined,
}

impl GoalKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(Self::PressureDiff),
            "drag" => Ok(Self::Drag),
            "lift" => Ok(Self::Lift),
            "combined" => Ok(Self::Combined),
            _ => Err(Error::Config(format!("unknown goal '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PressureDiff => "dp",
            Self::Drag => "drag",
            Self::Lift => "lift",
            Self::Combined => "combined",
        }
    }

    /// Component weights of a single goal; `None` for the combination.
    pub fn unit_weights(self) -> Option<[f64; 3]> {
        match self {
            Self::PressureDiff => Some([1.0, 0.0, 0.0]),
            Self::Drag => Some([0.0, 1.0, 0.0]),
            Self::Lift => Some([0.0, 0.0, 1.0]),
            Self::Combined => None,
        }
    }
}

/// `(Δp, c_drag, c_lift)` of one field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GoalValues {
    pub dp: f64,
    pub drag: f64,
    pub lift: f64,
}

impl GoalValues {
    pub fn as_array(&self) -> [f64; 3] {
        [self.dp, self.drag, self.lift]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { dp: a[0], drag: a[1], lift: a[2] }
    }
}

/// One weighted point of a functional: `weight · it(v(x))` at reference
/// point `xi` of cell `cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalPoint {
    pub cell: usize,
    pub xi: [f64; 2],
    pub weight: f64,
    pub it: Integrand,
}

/// A linear functional on one system, `Σ_i w_i J_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    pub weights: [f64; 3],
    pub points: Vec<GoalPoint>,
}

impl Functional {
    pub fn new(sys: &FeSystem, weights: [f64; 3]) -> Result<Self> {
        let mesh = sys.mesh();
        let mut points = Vec::new();
        if weights[0] != 0.0 {
            for (x, sign) in [(X1, -1.0), (X2, 1.0)] {
                let (cell, xi) = locate(mesh, x)?;
                let it = Integrand { fp: 1.0, ..Default::default() };
                points.push(GoalPoint { cell, xi, weight: sign * weights[0], it });
            }
        }
        if weights[1] != 0.0 || weights[2] != 0.0 {
            let (t, w) = gauss_1d(FACE_POINTS)?;
            let nu = sys.spec().viscosity;
            let e = [weights[1], weights[2]];
            for (cell, l, tag) in mesh.boundary_faces() {
                if tag != BoundaryTag::Cylinder {
                    continue;
                }
                let map = mesh.mapping(cell);
                let (n, len) = ball_normal(&map, l);
                let mut it = Integrand::default();
                for a in 0..2 {
                    for b in 0..2 {
                        it.fgu[a][b] = GOAL_SCALE * nu * (e[a] * n[b] + e[b] * n[a]);
                    }
                }
                it.fp = GOAL_SCALE * (n[0] * e[0] + n[1] * e[1]);
                for (tq, wq) in t.iter().zip(&w) {
                    points.push(GoalPoint { cell, xi: edge_point(l, *tq), weight: wq * len, it });
                }
            }
        }
        Ok(Self { weights, points })
    }

    /// Value on a field given by its test data at each point.
    pub fn apply_with(&self, mut tv: impl FnMut(&GoalPoint) -> Result<TestValue>) -> Result<f64> {
        let mut s = 0.0;
        for gp in &self.points {
            s += gp.weight * gp.it.apply(&tv(gp)?);
        }
        Ok(s)
    }

    pub fn apply(&self, sys: &FeSystem, v: &MixedVector) -> Result<f64> {
        self.apply_with(|gp| test_value(sys, v, gp.cell, gp.xi))
    }

    /// `J(φ_i)` for the constrained basis; constrained rows zero.
    pub fn rhs(&self, sys: &FeSystem) -> Result<Vec<f64>> {
        let mut out = vec![0.0; sys.n_dofs()];
        let dofs = sys.dofs();
        let mut local = vec![0.0; dofs.n_local()];
        for gp in &self.points {
            let pos = dofs.position(gp.cell).expect("active cell");
            let mp = sys.mesh().mapping(gp.cell).eval(gp.xi);
            local.iter_mut().for_each(|x| *x = 0.0);
            for comp in 0..3 {
                let b = dofs.basis(comp);
                let off = dofs.local_offset(comp);
                for i in 0..b.n_nodes() {
                    let (val, g) = b.shape_eval(i, gp.xi)?;
                    let g = mp.push_forward(g);
                    let mut t = TestValue::default();
                    if comp < 2 {
                        t.v[comp] = val;
                        t.gv[comp] = g;
                    } else {
                        t.q = val;
                    }
                    local[off + i] = gp.weight * gp.it.apply(&t);
                }
            }
            sys.constraints().add_vector(dofs.cell_dofs(pos), &local, &mut out);
        }
        sys.constraints().zero_constrained(&mut out);
        Ok(out)
    }
}

/// Test data of field `v` at reference point `xi` of `cell`.
pub fn test_value(sys: &FeSystem, v: &MixedVector, cell: usize, xi: [f64; 2]) -> Result<TestValue> {
    let f = sys.eval_in_cell(v, cell, xi)?;
    Ok(TestValue { v: f.u, gv: f.grad_u, q: f.p })
}

/// Reference point at parameter `t` along local edge `l`.
pub fn edge_point(l: usize, t: f64) -> [f64; 2] {
    match l {
        0 => [t, 0.0],
        1 => [1.0, t],
        2 => [t, 1.0],
        _ => [0.0, t],
    }
}

/// Unit normal of local edge `l` pointing into the cell (out of the ball for
/// a cylinder edge), and the edge length.
pub fn ball_normal(map: &CellMapping, l: usize) -> ([f64; 2], f64) {
    let [a, b] = LOCAL_EDGES[l];
    let (pa, pb) = (map.vertices[a], map.vertices[b]);
    let t = [pb[0] - pa[0], pb[1] - pa[1]];
    let len = t[0].hypot(t[1]);
    // Edges 0 and 1 run counter-clockwise, 2 and 3 clockwise.
    let s = if l < 2 { 1.0 } else { -1.0 };
    let outward = [s * t[1] / len, -s * t[0] / len];
    ([-outward[0], -outward[1]], len)
}

/// All three goal values of a field.
pub fn evaluate_goals(sys: &FeSystem, v: &MixedVector) -> Result<GoalValues> {
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let mut w = [0.0; 3];
        w[k] = 1.0;
        *o = Functional::new(sys, w)?.apply(sys, v)?;
    }
    Ok(GoalValues::from_array(out))
}

/// Frozen sign weights of the combined goal for one adaptive step.
///
/// `J_E(v) = Σ_i s_i (J_i(v) − J_i(u⁺)) / |J_i(u_h)|`, so `J_E(u⁺) = 0` and
/// `J_E(u⁺) − J_E(u_h) = Σ_i |J_i(u⁺) − J_i(u_h)| / |J_i(u_h)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedWeights {
    pub base: [f64; 3],
    pub plus: [f64; 3],
    pub signs: [f64; 3],
    pub omega: [f64; 3],
}

impl CombinedWeights {
    pub fn fix(base: GoalValues, plus: GoalValues) -> Self {
        let (b, p) = (base.as_array(), plus.as_array());
        let mut signs = [0.0; 3];
        let mut omega = [0.0; 3];
        for i in 0..3 {
            let d = p[i] - b[i];
            signs[i] = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            if b[i] == 0.0 {
                log::warn!("goal component {i} vanishes on the base solution; excluded from the combination");
            } else {
                omega[i] = signs[i] / b[i].abs();
            }
        }
        Self { base: b, plus: p, signs, omega }
    }

    /// `J_E` at a field with goal values `v`.
    pub fn value(&self, v: GoalValues) -> f64 {
        let v = v.as_array();
        (0..3).map(|i| self.omega[i] * (v[i] - self.plus[i])).sum()
    }

    /// `J_E(u⁺) − J_E(u_h)`.
    pub fn enriched_difference(&self) -> f64 {
        (0..3).map(|i| self.omega[i] * (self.plus[i] - self.base[i])).sum()
    }
}
