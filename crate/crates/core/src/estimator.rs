//! Adjoint solves and the hierarchical dual-weighted residual estimator.
//!
//! With `ũ, z̃` the base primal/adjoint pair and `u⁺, z⁺` the enriched pair,
//! the estimator is
//!
//! ```text
//! η⁺ = ½ρ(ũ)(z⁺ − z̃) + ½ρ*(ũ, z̃)(u⁺ − ũ)
//! ρ(ũ)(v)     = −A(ũ)(v)
//! ρ*(ũ, z̃)(v) = J′(ũ)(v) − A′(ũ)(v, z̃)
//! ```
//!
//! evaluated on the enriched system after embedding `ũ` and `z̃`.

use std::sync::Arc;

use crate::element::LagrangeBasis;
use crate::error::{Error, Result};
use crate::forms::{
    form_value, integrate_cells, jacobian, pairwise_sum, second_derivative, CellValues, FormContext, QpField,
    TestValue,
};
use crate::geometry::Mesh;
use crate::goals::Functional;
use crate::linalg::{norm2, Analysis, DirectSolver, SparsityPattern, DEFAULT_DOF_CAP};
use crate::space::{ancestor_in, FeSystem, HatSpace, MixedVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Enrichment {
    /// Doubled polynomial degrees on the same mesh.
    P,
    /// Same degrees on the uniformly refined mesh.
    H,
}

impl Enrichment {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Self::P),
            "h" => Ok(Self::H),
            _ => Err(Error::Config(format!("unknown enrichment '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::P => "p",
            Self::H => "h",
        }
    }

    /// The enriched system over a base mesh.
    pub fn build(self, base: &Arc<Mesh>) -> Result<Arc<FeSystem>> {
        let sys = match self {
            Self::P => FeSystem::new(Arc::clone(base), 4)?,
            Self::H => FeSystem::new(Arc::new(base.uniform_refine()), 2)?,
        };
        Ok(Arc::new(sys))
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub z: MixedVector,
    /// Algebraic residual of the condensed transposed system.
    pub residual_norm: f64,
    pub residual_scale: f64,
}

/// A factorization to reuse for the adjoint system, with its pattern.
pub struct Factorization<'a> {
    pub solver: &'a DirectSolver,
    pub pattern: &'a Arc<SparsityPattern>,
}

/// Solves `A′(u)(v, z) = J(v)` for all `v` with zero Dirichlet data.
///
/// The Jacobian is assembled at `u`. A supplied factorization (typically of
/// a nearby Jacobian) is used with iterative refinement against it;
/// otherwise the Jacobian is factorized afresh.
pub fn solve_adjoint(
    ctx: &FormContext,
    u: &MixedVector,
    goal: &Functional,
    reuse: Option<Factorization<'_>>,
) -> Result<AdjointSolution> {
    let sys = ctx.system();
    let rhs = goal.rhs(sys)?;
    if rhs.iter().all(|&x| x == 0.0) {
        return Ok(AdjointSolution { z: sys.zeros(), residual_norm: 0.0, residual_scale: 0.0 });
    }
    let (z, report) = match reuse {
        Some(f) => {
            let a = jacobian(ctx, u, f.pattern)?;
            f.solver.solve(&a, &rhs, true)
        }
        None => {
            let pattern = Arc::new(sys.sparsity_pattern());
            let a = jacobian(ctx, u, &pattern)?;
            let analysis = Analysis::new(&pattern)?;
            let solver = DirectSolver::new(&a, &analysis, DEFAULT_DOF_CAP.max(sys.n_dofs()))?;
            solver.solve(&a, &rhs, true)
        }
    };
    if !report.residual_norm.is_finite() {
        return Err(Error::SingularMatrix { row: 0 });
    }
    let mut z = sys.vector(z)?;
    sys.constraints().distribute_homogeneous(&mut z.values);
    log::debug!("adjoint residual={:.3e} scale={:.3e}", report.residual_norm, report.residual_scale);
    Ok(AdjointSolution { z, residual_norm: report.residual_norm, residual_scale: report.residual_scale })
}

/// `ρ(u)(v) = −A(u)(v)`.
pub fn primal_residual(ctx: &FormContext, u: &MixedVector, v: &MixedVector) -> Result<f64> {
    Ok(-form_value(ctx, u, v)?)
}

/// `ρ*(u, z)(v) = J(v) − A′(u)(v, z)`.
pub fn adjoint_residual(
    ctx: &FormContext,
    goal: &Functional,
    u: &MixedVector,
    z: &MixedVector,
    v: &MixedVector,
) -> Result<f64> {
    let sys = ctx.system();
    Ok(goal.apply(sys, v)? - crate::forms::derivative_value(ctx, u, v, z)?)
}

/// The four solutions of one step, with the base fields embedded into the
/// enriched system.
pub struct StepFields<'a> {
    pub base: &'a FormContext,
    pub enriched: &'a FormContext,
    pub u_h: &'a MixedVector,
    pub z_h: &'a MixedVector,
    pub u_plus: &'a MixedVector,
    pub z_plus: &'a MixedVector,
    /// Goal on the enriched system.
    pub goal: &'a Functional,
}

/// Embedded base fields and the differences to the enriched solutions.
#[derive(Debug, Clone)]
pub struct Embedded {
    pub u: MixedVector,
    pub z: MixedVector,
    /// `u⁺ − ũ`.
    pub e: MixedVector,
    /// `z⁺ − z̃`.
    pub e_star: MixedVector,
}

impl StepFields<'_> {
    pub fn embed(&self) -> Result<Embedded> {
        let (bs, es) = (self.base.system(), self.enriched.system());
        bs.check(self.u_h)?;
        bs.check(self.z_h)?;
        es.check(self.u_plus)?;
        es.check(self.z_plus)?;
        let u = es.transfer_from(bs, self.u_h, false)?;
        let z = es.transfer_from(bs, self.z_h, true)?;
        let e = self.u_plus.axpy(-1.0, &u)?;
        let e_star = self.z_plus.axpy(-1.0, &z)?;
        Ok(Embedded { u, z, e, e_star })
    }
}

/// `(½ρ(ũ)(z⁺ − z̃), ½ρ*(ũ, z̃)(u⁺ − ũ))` on the enriched system.
pub fn eta_parts(f: &StepFields<'_>, m: &Embedded) -> Result<(f64, f64)> {
    let ctx = f.enriched;
    let primal = 0.5 * primal_residual(ctx, &m.u, &m.e_star)?;
    let adjoint = 0.5 * adjoint_residual(ctx, f.goal, &m.u, &m.z, &m.e)?;
    Ok((primal, adjoint))
}

/// `ρ(u_h)(z_h)` on the base system.
pub fn iteration_part(f: &StepFields<'_>) -> Result<f64> {
    primal_residual(f.base, f.u_h, f.z_h)
}

/// The cubic remainder by 2-point Gauss quadrature in `s` of
/// `½[J‴ − A‴(e,e,e,z̃+se*) − 3A″(e,e,e*)] s(s−1)`; both third derivatives
/// vanish for a quadratic form and a linear goal.
pub fn remainder_quadrature(ctx: &FormContext, e: &MixedVector, e_star: &MixedVector) -> Result<f64> {
    let a2 = second_derivative(ctx, e, e, e_star)?;
    let g = 0.5 / 3f64.sqrt();
    let mut s = 0.0;
    for t in [0.5 - g, 0.5 + g] {
        s += 0.5 * (0.5 * (-3.0 * a2) * t * (t - 1.0));
    }
    Ok(s)
}

/// The cubic remainder in closed form, `½((e·∇)e, e*_u)`.
pub fn remainder_closed(ctx: &FormContext, e: &MixedVector, e_star: &MixedVector) -> Result<f64> {
    if !ctx.convection() {
        return Ok(0.0);
    }
    integrate_cells(ctx, &[e, e_star], |ctx, cv, q, l| {
        let f = ctx.field(cv, q, &l[0]);
        let w = ctx.field(cv, q, &l[1]);
        let mut s = 0.0;
        for a in 0..2 {
            s += (f.u[0] * f.gu[a][0] + f.u[1] * f.gu[a][1]) * w.u[a];
        }
        0.5 * s
    })
}

/// `||ΔJ| − |η⁺ + ρ(u_h)(z_h) + η_R||`.
pub fn gap(delta_j: f64, eta_plus: f64, iter_part: f64, eta_r: f64) -> f64 {
    (delta_j.abs() - (eta_plus + iter_part + eta_r).abs()).abs()
}

/// `η / |error|`, `NaN` when the error vanishes.
pub fn effectivity(eta: f64, error: f64) -> f64 {
    if error == 0.0 {
        f64::NAN
    } else {
        eta / error.abs()
    }
}

/// Whether the enriched solution is strictly closer to the reference.
pub fn saturation_holds(j_base: f64, j_plus: f64, j_ref: f64) -> bool {
    (j_plus - j_ref).abs() < (j_base - j_ref).abs()
}

/// Partition-of-unity indicators of the base mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Indicators {
    /// Per base vertex hat, `η_i`.
    pub vertex: Vec<f64>,
    /// `(cell id, η_K)` for each active base cell, ascending ids.
    pub cells: Vec<(usize, f64)>,
}

impl Indicators {
    pub fn vertex_sum(&self) -> f64 {
        pairwise_sum(&self.vertex)
    }

    pub fn cell_sum(&self) -> f64 {
        let v: Vec<f64> = self.cells.iter().map(|c| c.1).collect();
        pairwise_sum(&v)
    }
}

/// Test data of `w ψ` from those of `w` and the hat `ψ`.
#[inline]
fn times_hat(w: &QpField, psi: f64, gpsi: [f64; 2]) -> TestValue {
    let mut t = TestValue { v: [w.u[0] * psi, w.u[1] * psi], q: w.p * psi, ..Default::default() };
    for a in 0..2 {
        for b in 0..2 {
            t.gv[a][b] = psi * w.gu[a][b] + w.u[a] * gpsi[b];
        }
    }
    t
}

/// Localizes `η⁺` with the Q1 hats of the base mesh: for each hat `ψ_i`,
/// `η_i = ½ρ(ũ)((z⁺ − z̃)ψ_i) + ½ρ*(ũ, z̃)((u⁺ − ũ)ψ_i)`. Cell values are
/// `η_K = Σ_{i: K ⊂ supp ψ_i} η_i / #supp ψ_i`, so both sums equal `η⁺`.
pub fn localize(f: &StepFields<'_>, m: &Embedded) -> Result<Indicators> {
    let bmesh = f.base.system().mesh();
    let hats = HatSpace::new(Arc::clone(bmesh))?;
    let hb = LagrangeBasis::new(1)?;
    let ctx = f.enriched;
    let sys = ctx.system();
    let emesh = sys.mesh();
    let n_hat = hats.dofs().n_dofs();
    let mut eta = vec![0.0; n_hat];
    let mut cv = CellValues::default();
    let (mut lu, mut lz, mut le, mut ls) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut local = [0.0; 4];
    let mut expanded = Vec::new();

    let mut scatter = |anc_pos: usize, local: &[f64; 4], eta: &mut [f64]| {
        for (a, &g) in hats.dofs().cell_dofs(anc_pos).iter().enumerate() {
            expanded.clear();
            hats.constraints().expand(g, &mut expanded);
            for &(t, w) in &expanded {
                eta[t as usize] += w * local[a];
            }
        }
    };
    let hat_eval = |off: [f64; 2], scale: f64, xi: [f64; 2]| -> Result<[(f64, [f64; 2]); 4]> {
        let x = [off[0] + scale * xi[0], off[1] + scale * xi[1]];
        let mut out = [(0.0, [0.0; 2]); 4];
        for (a, o) in out.iter_mut().enumerate() {
            let (v, g) = hb.shape_eval(a, x)?;
            *o = (v, [scale * g[0], scale * g[1]]);
        }
        Ok(out)
    };

    for (pos, &c) in emesh.active_cells().iter().enumerate() {
        let (anc, off, scale) = ancestor_in(emesh, bmesh, hats.dofs(), c)?;
        let anc_pos = hats.dofs().position(anc).expect("active base cell");
        ctx.reinit(pos, &mut cv);
        sys.gather(&m.u, pos, &mut lu);
        sys.gather(&m.z, pos, &mut lz);
        sys.gather(&m.e, pos, &mut le);
        sys.gather(&m.e_star, pos, &mut ls);
        let map = emesh.mapping(c);
        local.iter_mut().for_each(|x| *x = 0.0);
        for (q, pt) in ctx.quadrature().points.iter().enumerate() {
            let fu = ctx.field(&cv, q, &lu);
            let fz = ctx.field(&cv, q, &lz);
            let fe = ctx.field(&cv, q, &le);
            let fs = ctx.field(&cv, q, &ls);
            let ip = ctx.primal_integrand(&fu);
            let ia = ctx.adjoint_integrand(&fu, &fz);
            let mp = map.eval(*pt);
            for (a, (psi, g)) in hat_eval(off, scale, *pt)?.into_iter().enumerate() {
                let g = mp.push_forward(g);
                let r = -ip.apply(&times_hat(&fs, psi, g)) - ia.apply(&times_hat(&fe, psi, g));
                local[a] += 0.5 * cv.jxw[q] * r;
            }
        }
        scatter(anc_pos, &local, &mut eta);
    }

    for gp in &f.goal.points {
        let (anc, off, scale) = ancestor_in(emesh, bmesh, hats.dofs(), gp.cell)?;
        let anc_pos = hats.dofs().position(anc).expect("active base cell");
        let fv = sys.eval_in_cell(&m.e, gp.cell, gp.xi)?;
        let w = QpField { u: fv.u, gu: fv.grad_u, p: fv.p };
        let mp = emesh.mapping(gp.cell).eval(gp.xi);
        for (a, (psi, g)) in hat_eval(off, scale, gp.xi)?.into_iter().enumerate() {
            local[a] = 0.5 * gp.weight * gp.it.apply(&times_hat(&w, psi, mp.push_forward(g)));
        }
        scatter(anc_pos, &local, &mut eta);
    }

    let support = hats.support_sizes();
    let mut cells = Vec::with_capacity(bmesh.n_active());
    for (pos, &c) in bmesh.active_cells().iter().enumerate() {
        expanded.clear();
        let mut seen: Vec<u32> = Vec::new();
        for &g in hats.dofs().cell_dofs(pos) {
            let mut t = Vec::new();
            hats.constraints().expand(g, &mut t);
            seen.extend(t.iter().map(|e| e.0));
        }
        seen.sort_unstable();
        seen.dedup();
        let v: Vec<f64> = seen.iter().map(|&g| eta[g as usize] / support[g as usize] as f64).collect();
        cells.push((c, pairwise_sum(&v)));
    }
    Ok(Indicators { vertex: eta, cells })
}

/// All scalar parts of one estimator evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorBreakdown {
    pub enrichment: Enrichment,
    pub eta_plus: f64,
    pub part_primal: f64,
    pub part_adjoint: f64,
    pub iter_part: f64,
    pub eta_r: f64,
    /// Quadrature evaluation of the remainder, for cross-checking.
    pub eta_r_quadrature: f64,
    /// `J(u⁺) − J(u_h)` of the estimated goal.
    pub delta_j: f64,
    pub eta_e: f64,
    /// Filled in once a reference value is known.
    pub i_eff: f64,
    pub indicators: Indicators,
}

/// Evaluates every estimator part for one step; `delta_j` is the goal
/// difference between the enriched and the base solution.
pub fn estimate(f: &StepFields<'_>, enrichment: Enrichment, delta_j: f64) -> Result<EstimatorBreakdown> {
    let m = f.embed()?;
    let (part_primal, part_adjoint) = eta_parts(f, &m)?;
    let eta_plus = part_primal + part_adjoint;
    let iter_part = iteration_part(f)?;
    let eta_r = remainder_closed(f.enriched, &m.e, &m.e_star)?;
    let eta_r_quadrature = remainder_quadrature(f.enriched, &m.e, &m.e_star)?;
    let indicators = localize(f, &m)?;
    let eta_e = gap(delta_j, eta_plus, iter_part, eta_r);
    log::info!(
        "estimate {}: eta+={eta_plus:.6e} primal={part_primal:.6e} adjoint={part_adjoint:.6e} iter={iter_part:.3e} \
         eta_R={eta_r:.3e} dJ={delta_j:.6e} gap={eta_e:.3e}",
        enrichment.name()
    );
    Ok(EstimatorBreakdown {
        enrichment,
        eta_plus,
        part_primal,
        part_adjoint,
        iter_part,
        eta_r,
        eta_r_quadrature,
        delta_j,
        eta_e,
        i_eff: f64::NAN,
        indicators,
    })
}

/// Residual norm of the condensed primal system, for Galerkin checks.
pub fn residual_norm(ctx: &FormContext, u: &MixedVector) -> Result<f64> {
    Ok(norm2(&crate::forms::residual(ctx, u)?))
}
