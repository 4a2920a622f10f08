//! The Navier-Stokes form, its derivatives, and the damped Newton solver.

use std::sync::Arc;

use crate::element::{gauss_rule, QuadratureRule, ShapeTable};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Analysis, DirectSolver, SparseMatrix, DEFAULT_DOF_CAP};
use crate::space::{ExpandScratch, FeSystem, MixedVector};

/// Volume Gauss points per direction, for every degree.
pub const VOLUME_POINTS: usize = 5;

/// Test-function data at one point: velocity, its gradient
/// (`gv[a][b] = ∂_b v_a`) and pressure.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TestValue {
    pub v: [f64; 2],
    pub gv: [[f64; 2]; 2],
    pub q: f64,
}

/// A pointwise linear functional `fu·v + fgu:∇v + fp q`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Integrand {
    pub fu: [f64; 2],
    pub fgu: [[f64; 2]; 2],
    pub fp: f64,
}

impl Integrand {
    #[inline]
    pub fn apply(&self, t: &TestValue) -> f64 {
        self.fu[0] * t.v[0]
            + self.fu[1] * t.v[1]
            + self.fgu[0][0] * t.gv[0][0]
            + self.fgu[0][1] * t.gv[0][1]
            + self.fgu[1][0] * t.gv[1][0]
            + self.fgu[1][1] * t.gv[1][1]
            + self.fp * t.q
    }
}

/// Field data at a quadrature point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QpField {
    pub u: [f64; 2],
    pub gu: [[f64; 2]; 2],
    pub p: f64,
}

/// Shape data of one cell at the volume quadrature points.
#[derive(Debug, Clone, Default)]
pub struct CellValues {
    pub jxw: Vec<f64>,
    pub x: Vec<[f64; 2]>,
    /// Physical velocity-shape gradients, point-major.
    pub vgrad: Vec<[f64; 2]>,
    pub pgrad: Vec<[f64; 2]>,
}

/// Everything needed to evaluate the form on one system.
#[derive(Debug, Clone)]
pub struct FormContext {
    system: Arc<FeSystem>,
    nu: f64,
    convection: bool,
    quad: QuadratureRule,
    vtab: ShapeTable,
    ptab: ShapeTable,
}

impl FormContext {
    pub fn new(system: Arc<FeSystem>, convection: bool) -> Result<Self> {
        let quad = gauss_rule(VOLUME_POINTS)?;
        let vtab = system.dofs().basis(0).tabulate(&quad.points);
        let ptab = system.dofs().basis(2).tabulate(&quad.points);
        let nu = system.spec().viscosity;
        Ok(Self { system, nu, convection, quad, vtab, ptab })
    }

    pub fn system(&self) -> &Arc<FeSystem> {
        &self.system
    }

    pub fn convection(&self) -> bool {
        self.convection
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn vel_table(&self) -> &ShapeTable {
        &self.vtab
    }

    pub fn pre_table(&self) -> &ShapeTable {
        &self.ptab
    }

    pub fn n_vel(&self) -> usize {
        self.vtab.n_shapes
    }

    pub fn n_pre(&self) -> usize {
        self.ptab.n_shapes
    }

    /// Fills `cv` for the active cell at position `pos`.
    pub fn reinit(&self, pos: usize, cv: &mut CellValues) {
        let cell = self.system.mesh().active_cells()[pos];
        let map = self.system.mesh().mapping(cell);
        cv.jxw.clear();
        cv.x.clear();
        cv.vgrad.clear();
        cv.pgrad.clear();
        for (q, (pt, w)) in self.quad.points.iter().zip(&self.quad.weights).enumerate() {
            let mp = map.eval(*pt);
            cv.jxw.push(w * mp.det);
            cv.x.push(mp.x);
            cv.vgrad.extend(self.vtab.grads_at(q).iter().map(|g| mp.push_forward(*g)));
            cv.pgrad.extend(self.ptab.grads_at(q).iter().map(|g| mp.push_forward(*g)));
        }
    }

    /// Field values at quadrature point `q` from local coefficients.
    #[inline]
    pub fn field(&self, cv: &CellValues, q: usize, local: &[f64]) -> QpField {
        let (nv, np) = (self.n_vel(), self.n_pre());
        let vals = self.vtab.values_at(q);
        let grads = &cv.vgrad[q * nv..(q + 1) * nv];
        let mut f = QpField::default();
        for i in 0..nv {
            let (c0, c1) = (local[i], local[nv + i]);
            f.u[0] += c0 * vals[i];
            f.u[1] += c1 * vals[i];
            f.gu[0][0] += c0 * grads[i][0];
            f.gu[0][1] += c0 * grads[i][1];
            f.gu[1][0] += c1 * grads[i][0];
            f.gu[1][1] += c1 * grads[i][1];
        }
        let pv = self.ptab.values_at(q);
        for i in 0..np {
            f.p += local[2 * nv + i] * pv[i];
        }
        f
    }

    /// Test-function data at quadrature point `q` from local coefficients.
    #[inline]
    pub fn test_value(&self, cv: &CellValues, q: usize, local: &[f64]) -> TestValue {
        let f = self.field(cv, q, local);
        TestValue { v: f.u, gv: f.gu, q: f.p }
    }

    /// `A(u)(·)` as a pointwise functional of the test function.
    #[inline]
    pub fn primal_integrand(&self, f: &QpField) -> Integrand {
        let nu = self.nu;
        let mut it = Integrand::default();
        for a in 0..2 {
            for b in 0..2 {
                it.fgu[a][b] = nu * (f.gu[a][b] + f.gu[b][a]);
            }
            it.fgu[a][a] += f.p;
        }
        if self.convection {
            for a in 0..2 {
                it.fu[a] = f.u[0] * f.gu[a][0] + f.u[1] * f.gu[a][1];
            }
        }
        it.fp = -(f.gu[0][0] + f.gu[1][1]);
        it
    }

    /// `A′(u)(·, z)` as a pointwise functional of the direction.
    #[inline]
    pub fn adjoint_integrand(&self, u: &QpField, z: &QpField) -> Integrand {
        let nu = self.nu;
        let mut it = Integrand::default();
        for a in 0..2 {
            for b in 0..2 {
                it.fgu[a][b] = nu * (z.gu[a][b] + z.gu[b][a]);
            }
            it.fgu[a][a] -= z.p;
        }
        if self.convection {
            for b in 0..2 {
                it.fu[b] = u.gu[0][b] * z.u[0] + u.gu[1][b] * z.u[1];
                for a in 0..2 {
                    it.fgu[a][b] += u.u[b] * z.u[a];
                }
            }
        }
        it.fp = z.gu[0][0] + z.gu[1][1];
        it
    }

    /// `A″(e1, e2, ·)` as a pointwise functional (velocity part only).
    #[inline]
    pub fn second_integrand(&self, e1: &QpField, e2: &QpField) -> Integrand {
        let mut it = Integrand::default();
        if self.convection {
            for a in 0..2 {
                it.fu[a] = e1.u[0] * e2.gu[a][0]
                    + e1.u[1] * e2.gu[a][1]
                    + e2.u[0] * e1.gu[a][0]
                    + e2.u[1] * e1.gu[a][1];
            }
        }
        it
    }

    /// Integrates `it` against every local shape function.
    #[inline]
    fn scatter(&self, cv: &CellValues, q: usize, it: &Integrand, out: &mut [f64]) {
        let (nv, np) = (self.n_vel(), self.n_pre());
        let w = cv.jxw[q];
        let vals = self.vtab.values_at(q);
        let grads = &cv.vgrad[q * nv..(q + 1) * nv];
        for i in 0..nv {
            let (phi, g) = (vals[i], grads[i]);
            out[i] += w * (it.fu[0] * phi + it.fgu[0][0] * g[0] + it.fgu[0][1] * g[1]);
            out[nv + i] += w * (it.fu[1] * phi + it.fgu[1][0] * g[0] + it.fgu[1][1] * g[1]);
        }
        let pv = self.ptab.values_at(q);
        for i in 0..np {
            out[2 * nv + i] += w * it.fp * pv[i];
        }
    }

    /// Local residual vector `A(u)(φ_i)` of the cell at `pos`.
    pub fn cell_residual(&self, cv: &CellValues, local_u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for q in 0..cv.jxw.len() {
            let f = self.field(cv, q, local_u);
            let it = self.primal_integrand(&f);
            self.scatter(cv, q, &it, out);
        }
    }

    /// Local Jacobian `A′(u)(φ_j, φ_i)`, row `i` (test), column `j` (trial).
    pub fn cell_jacobian(&self, cv: &CellValues, local_u: &[f64], out: &mut [f64]) {
        let (nv, np) = (self.n_vel(), self.n_pre());
        let n = 2 * nv + np;
        out.iter_mut().for_each(|x| *x = 0.0);
        let nu = self.nu;
        for q in 0..cv.jxw.len() {
            let f = self.field(cv, q, local_u);
            let w = cv.jxw[q];
            let vals = self.vtab.values_at(q);
            let grads = &cv.vgrad[q * nv..(q + 1) * nv];
            let pv = self.ptab.values_at(q);
            let conv = if self.convection { 1.0 } else { 0.0 };
            let adv: Vec<f64> = (0..nv).map(|j| conv * (f.u[0] * grads[j][0] + f.u[1] * grads[j][1])).collect();
            for i in 0..nv {
                let (phi_i, gi) = (w * vals[i], grads[i]);
                let gi = [w * gi[0], w * gi[1]];
                let r0 = i * n;
                let r1 = (nv + i) * n;
                for j in 0..nv {
                    let (phi_j, gj) = (vals[j], grads[j]);
                    let g = gj[0] * gi[0] + gj[1] * gi[1];
                    let cj = conv * phi_j;
                    out[r0 + j] += nu * (g + gj[0] * gi[0]) + (cj * f.gu[0][0] + adv[j]) * phi_i;
                    out[r0 + nv + j] += nu * gj[0] * gi[1] + cj * f.gu[0][1] * phi_i;
                    out[r1 + j] += nu * gj[1] * gi[0] + cj * f.gu[1][0] * phi_i;
                    out[r1 + nv + j] += nu * (g + gj[1] * gi[1]) + (cj * f.gu[1][1] + adv[j]) * phi_i;
                }
                for j in 0..np {
                    out[r0 + 2 * nv + j] += pv[j] * gi[0];
                    out[r1 + 2 * nv + j] += pv[j] * gi[1];
                }
            }
            for i in 0..np {
                let r = (2 * nv + i) * n;
                let psi = w * pv[i];
                for j in 0..nv {
                    out[r + j] -= grads[j][0] * psi;
                    out[r + nv + j] -= grads[j][1] * psi;
                }
            }
        }
    }
}

/// Condensed residual `A(u)(φ_i)` over the constrained test basis;
/// constrained rows are zero.
pub fn residual(ctx: &FormContext, u: &MixedVector) -> Result<Vec<f64>> {
    let sys = ctx.system();
    sys.check(u)?;
    let mut out = vec![0.0; sys.n_dofs()];
    let mut cv = CellValues::default();
    let mut local = Vec::new();
    let mut r = vec![0.0; sys.dofs().n_local()];
    for pos in 0..sys.mesh().n_active() {
        ctx.reinit(pos, &mut cv);
        sys.gather(u, pos, &mut local);
        ctx.cell_residual(&cv, &local, &mut r);
        sys.constraints().add_vector(sys.dofs().cell_dofs(pos), &r, &mut out);
    }
    sys.constraints().zero_constrained(&mut out);
    Ok(out)
}

/// Condensed Jacobian with unit rows for constrained dofs.
pub fn jacobian(ctx: &FormContext, u: &MixedVector, pattern: &Arc<crate::linalg::SparsityPattern>) -> Result<SparseMatrix> {
    let sys = ctx.system();
    sys.check(u)?;
    let mut a = SparseMatrix::zeros(Arc::clone(pattern));
    let mut cv = CellValues::default();
    let mut local = Vec::new();
    let n = sys.dofs().n_local();
    let mut k = vec![0.0; n * n];
    let mut scratch = ExpandScratch::default();
    for pos in 0..sys.mesh().n_active() {
        ctx.reinit(pos, &mut cv);
        sys.gather(u, pos, &mut local);
        ctx.cell_jacobian(&cv, &local, &mut k);
        sys.constraints().add_matrix(sys.dofs().cell_dofs(pos), &k, &mut a, &mut scratch);
    }
    sys.constraints().finish_matrix(&mut a);
    Ok(a)
}

/// Sum over cells of a per-quadrature-point scalar, pairwise-reduced.
pub fn integrate_cells(
    ctx: &FormContext,
    vectors: &[&MixedVector],
    mut f: impl FnMut(&FormContext, &CellValues, usize, &[Vec<f64>]) -> f64,
) -> Result<f64> {
    Ok(pairwise_sum(&cell_integrals(ctx, vectors, &mut f)?))
}

/// Per-cell integrals of a per-point scalar built from local coefficient
/// vectors of `vectors`.
pub fn cell_integrals(
    ctx: &FormContext,
    vectors: &[&MixedVector],
    f: &mut impl FnMut(&FormContext, &CellValues, usize, &[Vec<f64>]) -> f64,
) -> Result<Vec<f64>> {
    let sys = ctx.system();
    for v in vectors {
        sys.check(v)?;
    }
    let mut cv = CellValues::default();
    let mut locals: Vec<Vec<f64>> = vec![Vec::new(); vectors.len()];
    let mut out = Vec::with_capacity(sys.mesh().n_active());
    for pos in 0..sys.mesh().n_active() {
        ctx.reinit(pos, &mut cv);
        for (l, v) in locals.iter_mut().zip(vectors) {
            sys.gather(v, pos, l);
        }
        let mut s = 0.0;
        for q in 0..cv.jxw.len() {
            s += cv.jxw[q] * f(ctx, &cv, q, &locals);
        }
        out.push(s);
    }
    Ok(out)
}

/// `A(u)(v)` for any `v` on the same system.
pub fn form_value(ctx: &FormContext, u: &MixedVector, v: &MixedVector) -> Result<f64> {
    integrate_cells(ctx, &[u, v], |ctx, cv, q, l| {
        let it = ctx.primal_integrand(&ctx.field(cv, q, &l[0]));
        it.apply(&ctx.test_value(cv, q, &l[1]))
    })
}

/// `A′(u)(d, v)`.
pub fn derivative_value(ctx: &FormContext, u: &MixedVector, d: &MixedVector, v: &MixedVector) -> Result<f64> {
    integrate_cells(ctx, &[u, d, v], |ctx, cv, q, l| {
        let it = ctx.adjoint_integrand(&ctx.field(cv, q, &l[0]), &ctx.field(cv, q, &l[2]));
        it.apply(&ctx.test_value(cv, q, &l[1]))
    })
}

/// `A″(e1, e2, v)`; independent of the linearization point.
pub fn second_derivative(ctx: &FormContext, e1: &MixedVector, e2: &MixedVector, v: &MixedVector) -> Result<f64> {
    integrate_cells(ctx, &[e1, e2, v], |ctx, cv, q, l| {
        let it = ctx.second_integrand(&ctx.field(cv, q, &l[0]), &ctx.field(cv, q, &l[1]));
        it.apply(&ctx.test_value(cv, q, &l[2]))
    })
}

/// Sum with a fixed binary reduction tree.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NewtonControls {
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Line search tries `1, 1/2, …, 2^-max_halvings`.
    pub max_halvings: u32,
    /// Extra steps with the final Jacobian to push the residual to round-off.
    pub polish_steps: usize,
    pub balance_fraction: f64,
    pub dof_cap: usize,
}

impl Default for NewtonControls {
    fn default() -> Self {
        Self { abs_tol: 1e-11, max_iter: 30, max_halvings: 6, polish_steps: 2, balance_fraction: 1e-2, dof_cap: DEFAULT_DOF_CAP }
    }
}

/// Weight for logging the iteration error `ρ(u_k)(z)` against an estimate.
#[derive(Debug, Clone, Copy)]
pub struct Balance<'a> {
    pub z: &'a MixedVector,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStep {
    pub iteration: usize,
    pub residual_norm: f64,
    pub damping: f64,
    pub weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub steps: Vec<NewtonStep>,
    pub converged: bool,
    pub residual_norm: f64,
    /// Iteration at which `|ρ(u)(z)|` first fell below the balance threshold.
    pub balanced_at: Option<usize>,
}

/// Converged solution together with a factorization of the Jacobian at
/// (nearly) the solution, reusable for adjoint solves.
pub struct NewtonOutcome {
    pub u: MixedVector,
    pub report: NewtonReport,
    pub analysis: Arc<Analysis>,
    pub pattern: Arc<crate::linalg::SparsityPattern>,
    pub solver: DirectSolver,
}

/// Damped Newton iteration from `u0`; boundary values and hanging
/// constraints of `u0` are re-imposed first.
pub fn newton_solve(
    ctx: &FormContext,
    u0: &MixedVector,
    controls: &NewtonControls,
    balance: Option<Balance<'_>>,
) -> Result<NewtonOutcome> {
    let sys = ctx.system();
    sys.check(u0)?;
    if sys.n_dofs() > controls.dof_cap {
        return Err(Error::TooLarge { n: sys.n_dofs(), cap: controls.dof_cap });
    }
    let pattern = Arc::new(sys.sparsity_pattern());
    let analysis = Arc::new(Analysis::new(&pattern)?);
    let mut u = u0.clone();
    sys.constraints().distribute(&mut u.values);
    let mut r = residual(ctx, &u)?;
    let mut rnorm = norm2(&r);
    let weighted = |r: &[f64]| balance.map(|b| -dot(r, &b.z.values));
    let mut report = NewtonReport { steps: Vec::new(), converged: false, residual_norm: rnorm, balanced_at: None };
    let log_step = |report: &mut NewtonReport, it: usize, rn: f64, damping: f64, r: &[f64]| {
        let w = weighted(r);
        log::info!(
            "newton it={it} residual={rn:.6e} damping={damping:.6e} rho={}",
            w.map_or("-".to_string(), |w| format!("{w:.6e}"))
        );
        if let (Some(w), Some(b)) = (w, balance) {
            if report.balanced_at.is_none() && w.abs() <= controls.balance_fraction * b.eta.abs() {
                report.balanced_at = Some(it);
            }
        }
        report.steps.push(NewtonStep { iteration: it, residual_norm: rn, damping, weighted: w });
    };
    log_step(&mut report, 0, rnorm, 1.0, &r);
    let mut it = 0;
    while rnorm > controls.abs_tol {
        if it >= controls.max_iter {
            return Err(Error::NewtonNotConverged { iterations: it, residual: rnorm });
        }
        it += 1;
        let a = jacobian(ctx, &u, &pattern)?;
        let solver = DirectSolver::new(&a, &analysis, controls.dof_cap)?;
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let (mut d, _) = solver.solve(&a, &rhs, false);
        sys.constraints().distribute_homogeneous(&mut d);
        let mut accepted = None;
        for k in 0..=controls.max_halvings {
            let lambda = 0.5f64.powi(k as i32);
            let trial = u.axpy(lambda, &sys.vector(d.clone())?)?;
            let rt = residual(ctx, &trial)?;
            let rtn = norm2(&rt);
            if !rtn.is_finite() {
                return Err(Error::NonFinite { iteration: it });
            }
            if rtn < rnorm {
                accepted = Some((trial, rt, rtn, lambda));
                break;
            }
        }
        match accepted {
            Some((t, rt, rtn, lambda)) => {
                u = t;
                r = rt;
                rnorm = rtn;
                log_step(&mut report, it, rnorm, lambda, &r);
            }
            None => {
                log::warn!("newton: no decrease at iteration {it}, residual {rnorm:.3e}");
                return Err(Error::NewtonNotConverged { iterations: it, residual: rnorm });
            }
        }
    }
    report.converged = true;
    let a = jacobian(ctx, &u, &pattern)?;
    let solver = DirectSolver::new(&a, &analysis, controls.dof_cap)?;
    for _ in 0..controls.polish_steps {
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let (mut d, _) = solver.solve(&a, &rhs, false);
        sys.constraints().distribute_homogeneous(&mut d);
        let trial = u.axpy(1.0, &sys.vector(d)?)?;
        let rt = residual(ctx, &trial)?;
        let rtn = norm2(&rt);
        if !(rtn < rnorm) {
            break;
        }
        u = trial;
        r = rt;
        rnorm = rtn;
        it += 1;
        log_step(&mut report, it, rnorm, 1.0, &r);
    }
    report.residual_norm = rnorm;
    Ok(NewtonOutcome { u, report, analysis, pattern, solver })
}
