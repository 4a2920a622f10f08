//! Reference-element machinery on the unit square `[0,1]²`.

use crate::error::{Error, Result};

/// Gauss–Legendre points and weights on `[0, 1]`.
pub fn gauss_1d(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=8).contains(&n) {
        return Err(Error::OutOfRange { what: "gauss point count", index: n, limit: 8 });
    }
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        pts[i] = 0.5 * (1.0 - x);
        pts[n - 1 - i] = 0.5 * (1.0 + x);
        wts[i] = 0.5 * w;
        wts[n - 1 - i] = 0.5 * w;
    }
    Ok((pts, wts))
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product rule on the unit square; weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn gauss_rule(n: usize) -> Result<QuadratureRule> {
    let (p, w) = gauss_1d(n)?;
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push([p[i], p[j]]);
            weights.push(w[i] * w[j]);
        }
    }
    Ok(QuadratureRule { points, weights })
}

/// Lagrange polynomials on `k + 1` equispaced nodes of `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lagrange1d {
    nodes: Vec<f64>,
    denom: Vec<f64>,
}

impl Lagrange1d {
    pub fn new(degree: usize) -> Self {
        let nodes: Vec<f64> = (0..=degree).map(|m| m as f64 / degree as f64).collect();
        let denom = (0..=degree)
            .map(|m| {
                (0..=degree).filter(|&l| l != m).map(|l| nodes[m] - nodes[l]).product::<f64>()
            })
            .collect();
        Self { nodes, denom }
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn value(&self, m: usize, t: f64) -> f64 {
        let mut p = 1.0;
        for (l, &xl) in self.nodes.iter().enumerate() {
            if l != m {
                p *= t - xl;
            }
        }
        p / self.denom[m]
    }

    pub fn derivative(&self, m: usize, t: f64) -> f64 {
        let mut s = 0.0;
        for q in (0..self.nodes.len()).filter(|&q| q != m) {
            let mut p = 1.0;
            for (l, &xl) in self.nodes.iter().enumerate() {
                if l != m && l != q {
                    p *= t - xl;
                }
            }
            s += p;
        }
        s / self.denom[m]
    }

    pub fn values(&self, t: f64) -> Vec<f64> {
        (0..self.nodes.len()).map(|m| self.value(m, t)).collect()
    }
}

/// Tensor-product Lagrange basis of degree `k`. Local node `(i, j)` sits at
/// `(i/k, j/k)` and has index `j (k+1) + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    line: Lagrange1d,
}

impl LagrangeBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if !matches!(degree, 1 | 2 | 4) {
            return Err(Error::Config(format!("unsupported element degree {degree}")));
        }
        Ok(Self { line: Lagrange1d::new(degree) })
    }

    pub fn degree(&self) -> usize {
        self.line.degree()
    }

    pub fn line(&self) -> &Lagrange1d {
        &self.line
    }

    pub fn n_nodes(&self) -> usize {
        let k = self.degree() + 1;
        k * k
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        let k = self.degree() + 1;
        [self.line.nodes[i % k], self.line.nodes[i / k]]
    }

    pub fn shape_eval(&self, i: usize, xi: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let n = self.n_nodes();
        if i >= n {
            return Err(Error::OutOfRange { what: "shape function", index: i, limit: n });
        }
        let k = self.degree() + 1;
        let (a, b) = (i % k, i / k);
        let (va, vb) = (self.line.value(a, xi[0]), self.line.value(b, xi[1]));
        let (da, db) = (self.line.derivative(a, xi[0]), self.line.derivative(b, xi[1]));
        Ok((va * vb, [da * vb, va * db]))
    }

    /// Values and reference gradients of all shape functions at `points`.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> ShapeTable {
        let k = self.degree() + 1;
        let n = k * k;
        let mut values = Vec::with_capacity(points.len() * n);
        let mut grads = Vec::with_capacity(points.len() * n);
        for p in points {
            let vx: Vec<f64> = (0..k).map(|m| self.line.value(m, p[0])).collect();
            let vy: Vec<f64> = (0..k).map(|m| self.line.value(m, p[1])).collect();
            let dx: Vec<f64> = (0..k).map(|m| self.line.derivative(m, p[0])).collect();
            let dy: Vec<f64> = (0..k).map(|m| self.line.derivative(m, p[1])).collect();
            for j in 0..k {
                for i in 0..k {
                    values.push(vx[i] * vy[j]);
                    grads.push([dx[i] * vy[j], vx[i] * dy[j]]);
                }
            }
        }
        ShapeTable { n_shapes: n, values, grads }
    }
}

/// Shape values and reference gradients, point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTable {
    pub n_shapes: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

impl ShapeTable {
    pub fn values_at(&self, q: usize) -> &[f64] {
        &self.values[q * self.n_shapes..(q + 1) * self.n_shapes]
    }

    pub fn grads_at(&self, q: usize) -> &[[f64; 2]] {
        &self.grads[q * self.n_shapes..(q + 1) * self.n_shapes]
    }
}

/// Bilinear map from the unit square onto a quadrilateral with
/// counter-clockwise vertices `v0 (0,0)`, `v1 (1,0)`, `v2 (1,1)`, `v3 (0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMapping {
    pub vertices: [[f64; 2]; 4],
}

/// Geometry of the bilinear map at one reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappedPoint {
    pub x: [f64; 2],
    pub det: f64,
    /// `J^{-T}`, row-major.
    pub inv_t: [[f64; 2]; 2],
}

impl MappedPoint {
    /// Physical gradient from a reference gradient.
    #[inline]
    pub fn push_forward(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1],
            self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1],
        ]
    }
}

impl CellMapping {
    pub fn new(vertices: [[f64; 2]; 4]) -> Self {
        Self { vertices }
    }

    pub fn point(&self, xi: [f64; 2]) -> [f64; 2] {
        let [v0, v1, v2, v3] = self.vertices;
        let (s, t) = (xi[0], xi[1]);
        let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
        [
            w[0] * v0[0] + w[1] * v1[0] + w[2] * v2[0] + w[3] * v3[0],
            w[0] * v0[1] + w[1] * v1[1] + w[2] * v2[1] + w[3] * v3[1],
        ]
    }

    /// Jacobian `∂x/∂ξ`, row-major (`j[a][b] = ∂x_a/∂ξ_b`).
    pub fn jacobian(&self, xi: [f64; 2]) -> [[f64; 2]; 2] {
        let [v0, v1, v2, v3] = self.vertices;
        let (s, t) = (xi[0], xi[1]);
        let mut j = [[0.0; 2]; 2];
        for a in 0..2 {
            j[a][0] = (1.0 - t) * (v1[a] - v0[a]) + t * (v2[a] - v3[a]);
            j[a][1] = (1.0 - s) * (v3[a] - v0[a]) + s * (v2[a] - v1[a]);
        }
        j
    }

    #[inline]
    pub fn eval(&self, xi: [f64; 2]) -> MappedPoint {
        let j = self.jacobian(xi);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_t = [[j[1][1] / det, -j[1][0] / det], [-j[0][1] / det, j[0][0] / det]];
        MappedPoint { x: self.point(xi), det, inv_t }
    }

    /// Like [`eval`](Self::eval), failing on a non-positive determinant.
    pub fn map_cell(&self, xi: [f64; 2]) -> Result<MappedPoint> {
        let m = self.eval(xi);
        if m.det > 0.0 {
            Ok(m)
        } else {
            Err(Error::InvertedCell { cell: usize::MAX })
        }
    }

    /// Exact area of the quadrilateral.
    pub fn area(&self) -> f64 {
        let v = self.vertices;
        0.5 * (0..4)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % 4]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    /// Reference coordinates of the physical point `x`, if it lies in the
    /// closed cell up to `tol` in reference coordinates. Not clamped.
    pub fn invert(&self, x: [f64; 2], tol: f64) -> Option<[f64; 2]> {
        let mut xi = [0.5, 0.5];
        for _ in 0..50 {
            let p = self.point(xi);
            let r = [x[0] - p[0], x[1] - p[1]];
            let j = self.jacobian(xi);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det == 0.0 {
                return None;
            }
            let d = [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (-j[1][0] * r[0] + j[0][0] * r[1]) / det];
            xi[0] += d[0];
            xi[1] += d[1];
            if d[0].abs() + d[1].abs() < 1e-14 {
                break;
            }
        }
        let inside = xi.iter().all(|&c| (-tol..=1.0 + tol).contains(&c));
        inside.then_some(xi)
    }
}
