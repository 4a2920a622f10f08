//! The adaptive loop: solve, enrich, estimate, localize, mark, refine.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimator::{
    effectivity, estimate, saturation_holds, solve_adjoint, Enrichment, EstimatorBreakdown, Factorization,
    StepFields,
};
use crate::forms::{newton_solve, pairwise_sum, FormContext, NewtonControls, NewtonOutcome};
use crate::geometry::{build_benchmark_mesh, DomainSpec, Mesh};
use crate::goals::{evaluate_goals, CombinedWeights, Functional, GoalKind, GoalValues};
use crate::space::{FeSystem, MixedVector};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub enrichment: Enrichment,
    pub goal: GoalKind,
    /// Bulk marking fraction in `[0, 1]`.
    pub theta: f64,
    /// Largest base system that is still solved.
    pub max_dofs: usize,
    pub max_steps: usize,
    pub newton: NewtonControls,
    /// Drops the convection term.
    pub stokes: bool,
    /// Uniform refinements of the coarse benchmark mesh before step 0.
    pub initial_refinements: usize,
    pub domain: DomainSpec,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            enrichment: Enrichment::P,
            goal: GoalKind::Combined,
            theta: 0.3,
            max_dofs: 100_000,
            max_steps: 30,
            newton: NewtonControls::default(),
            stokes: false,
            initial_refinements: 0,
            domain: DomainSpec::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if self.max_dofs > self.newton.dof_cap {
            return Err(Error::Config(format!(
                "max_dofs {} exceeds the solver cap {}",
                self.max_dofs, self.newton.dof_cap
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds per phase of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimes {
    pub solve_base: f64,
    pub solve_enriched: f64,
    pub adjoint: f64,
    pub estimate: f64,
    pub refine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopRecord {
    pub step: usize,
    pub dofs_primal: usize,
    pub dofs_enriched: usize,
    pub n_cells: usize,
    pub goal: GoalKind,
    pub base: GoalValues,
    pub enriched: GoalValues,
    /// Weights of the estimated goal, `J = Σ w_i J_i`.
    pub weights: [f64; 3],
    pub estimator: EstimatorBreakdown,
    /// `J(u_ref) − J(u_h)` and `J(u_ref) − J(u⁺)` of the estimated goal.
    pub err_ref: f64,
    pub err_ref_enriched: f64,
    /// Per functional `(Δp, drag, lift)`.
    pub saturation: [Option<bool>; 3],
    pub newton_iterations: [usize; 2],
    pub times: PhaseTimes,
}

impl LoopRecord {
    /// Fills reference errors, effectivity and saturation flags.
    ///
    /// For the combined goal the errors use the unlinearized
    /// `J_E(v) = −Σ_i |J_i(u⁺) − J_i(v)| / |J_i(u_h)|`.
    pub fn apply_reference(&mut self, reference: &GoalValues) {
        let (r, b, p) = (reference.as_array(), self.base.as_array(), self.enriched.as_array());
        let w = self.weights;
        if self.goal == GoalKind::Combined {
            let terms = |f: &dyn Fn(usize) -> f64| -> f64 {
                (0..3).filter(|&i| b[i] != 0.0).map(|i| f(i) / b[i].abs()).sum()
            };
            self.err_ref = terms(&|i| (p[i] - b[i]).abs() - (p[i] - r[i]).abs());
            self.err_ref_enriched = terms(&|i| -(p[i] - r[i]).abs());
        } else {
            self.err_ref = (0..3).map(|i| w[i] * (r[i] - b[i])).sum();
            self.err_ref_enriched = (0..3).map(|i| w[i] * (r[i] - p[i])).sum();
        }
        self.estimator.i_eff = effectivity(self.estimator.eta_plus, self.err_ref);
        for i in 0..3 {
            self.saturation[i] = Some(saturation_holds(b[i], p[i], r[i]));
        }
    }
}

/// Everything of a finished step, for output hooks.
pub struct StepView<'a> {
    pub record: &'a LoopRecord,
    pub system: &'a FeSystem,
    pub u: &'a MixedVector,
    pub z: &'a MixedVector,
}

/// Records of a run; `failure` is set when a step aborted.
#[derive(Debug)]
pub struct RunResult {
    pub records: Vec<LoopRecord>,
    pub failure: Option<Error>,
}

/// Bulk marking: cells sorted by `|η_K|` descending (ties by ascending id),
/// the shortest prefix holding at least `θ` of the total mass.
pub fn mark_cells(indicators: &[(usize, f64)], theta: f64) -> BTreeSet<usize> {
    if theta >= 1.0 {
        return indicators.iter().map(|c| c.0).collect();
    }
    let mut order: Vec<(usize, f64)> = indicators.iter().map(|&(c, v)| (c, v.abs())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let abs: Vec<f64> = indicators.iter().map(|c| c.1.abs()).collect();
    let target = theta * pairwise_sum(&abs);
    let mut marked = BTreeSet::new();
    let mut acc = 0.0;
    for (c, v) in order {
        if acc >= target {
            break;
        }
        marked.insert(c);
        acc += v;
    }
    marked
}

fn solve(
    sys: &Arc<FeSystem>,
    guess: Option<&MixedVector>,
    config: &AdaptiveConfig,
) -> Result<(FormContext, NewtonOutcome, usize)> {
    let ctx = FormContext::new(Arc::clone(sys), !config.stokes)?;
    let mut iterations = 0;
    let start = match guess {
        Some(g) => g.clone(),
        None if config.stokes => sys.initial_guess(),
        None => {
            let stokes = FormContext::new(Arc::clone(sys), false)?;
            let out = newton_solve(&stokes, &sys.initial_guess(), &config.newton, None)?;
            iterations += out.report.steps.len() - 1;
            out.u
        }
    };
    let out = newton_solve(&ctx, &start, &config.newton, None)?;
    iterations += out.report.steps.len() - 1;
    Ok((ctx, out, iterations))
}

fn goal_weights(config: &AdaptiveConfig, base: GoalValues, plus: GoalValues) -> ([f64; 3], f64) {
    match config.goal.unit_weights() {
        Some(w) => {
            let d: f64 = (0..3).map(|i| w[i] * (plus.as_array()[i] - base.as_array()[i])).sum();
            (w, d)
        }
        None => {
            let cw = CombinedWeights::fix(base, plus);
            (cw.omega, cw.enriched_difference())
        }
    }
}

/// One solve–estimate pass on a fixed base mesh.
pub fn run_step(
    config: &AdaptiveConfig,
    step: usize,
    mesh: &Arc<Mesh>,
    guess: Option<&MixedVector>,
    guess_system: Option<&FeSystem>,
    mut observer: impl FnMut(&StepView<'_>),
) -> Result<(LoopRecord, Arc<FeSystem>, MixedVector)> {
    let mut times = PhaseTimes::default();
    let t = Instant::now();
    let bsys = Arc::new(FeSystem::new(Arc::clone(mesh), 2)?);
    let guess = match (guess, guess_system) {
        (Some(g), Some(gs)) => Some(bsys.transfer_from(gs, g, false)?),
        _ => None,
    };
    let (bctx, bout, bits) = solve(&bsys, guess.as_ref(), config)?;
    times.solve_base = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let esys = config.enrichment.build(mesh)?;
    let eguess = esys.transfer_from(&bsys, &bout.u, false)?;
    let (ectx, eout, eits) = solve(&esys, Some(&eguess), config)?;
    times.solve_enriched = t.elapsed().as_secs_f64();

    let base = evaluate_goals(&bsys, &bout.u)?;
    let enriched = evaluate_goals(&esys, &eout.u)?;
    let (weights, delta_j) = goal_weights(config, base, enriched);

    let t = Instant::now();
    let bgoal = Functional::new(&bsys, weights)?;
    let egoal = Functional::new(&esys, weights)?;
    let zb = solve_adjoint(&bctx, &bout.u, &bgoal, Some(Factorization { solver: &bout.solver, pattern: &bout.pattern }))?;
    let ze = solve_adjoint(&ectx, &eout.u, &egoal, Some(Factorization { solver: &eout.solver, pattern: &eout.pattern }))?;
    drop(eout.solver);
    times.adjoint = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let fields = StepFields {
        base: &bctx,
        enriched: &ectx,
        u_h: &bout.u,
        z_h: &zb.z,
        u_plus: &eout.u,
        z_plus: &ze.z,
        goal: &egoal,
    };
    let estimator = estimate(&fields, config.enrichment, delta_j)?;
    times.estimate = t.elapsed().as_secs_f64();

    let record = LoopRecord {
        step,
        dofs_primal: bsys.n_dofs(),
        dofs_enriched: esys.n_dofs(),
        n_cells: mesh.n_active(),
        goal: config.goal,
        base,
        enriched,
        weights,
        estimator,
        err_ref: f64::NAN,
        err_ref_enriched: f64::NAN,
        saturation: [None; 3],
        newton_iterations: [bits, eits],
        times,
    };
    observer(&StepView { record: &record, system: &bsys, u: &bout.u, z: &zb.z });
    Ok((record, bsys, bout.u))
}

/// The adaptive loop. Stops before a mesh whose base system exceeds
/// `max_dofs`, after `max_steps` records, or when nothing is marked.
pub fn run_adaptive(config: &AdaptiveConfig, mut observer: impl FnMut(&StepView<'_>)) -> RunResult {
    let mut records = Vec::new();
    if let Err(e) = config.validate() {
        return RunResult { records, failure: Some(e) };
    }
    let mut mesh = Arc::new(build_benchmark_mesh(&config.domain, config.initial_refinements));
    let mut previous: Option<(Arc<FeSystem>, MixedVector)> = None;
    for step in 0..config.max_steps {
        let n = match FeSystem::new(Arc::clone(&mesh), 2) {
            Ok(s) => s.n_dofs(),
            Err(e) => return RunResult { records, failure: Some(e) },
        };
        if n > config.max_dofs {
            log::info!("step {step}: {n} base dofs exceed the limit {}; stopping", config.max_dofs);
            break;
        }
        log::info!("step {step}: {} cells, {n} base dofs", mesh.n_active());
        let (g, gs) = match &previous {
            Some((s, u)) => (Some(u), Some(s.as_ref())),
            None => (None, None),
        };
        let (mut record, bsys, u) = match run_step(config, step, &mesh, g, gs, &mut observer) {
            Ok(r) => r,
            Err(e) => {
                log::error!("step {step} failed: {e}");
                return RunResult { records, failure: Some(e) };
            }
        };
        let t = Instant::now();
        let marked = mark_cells(&record.estimator.indicators.cells, config.theta);
        let done = marked.is_empty();
        if done {
            log::info!("step {step}: no cells marked; stopping");
        } else {
            match mesh.refine(&marked) {
                Ok(m) => mesh = Arc::new(m),
                Err(e) => return RunResult { records, failure: Some(e) },
            }
        }
        record.times.refine = t.elapsed().as_secs_f64();
        records.push(record);
        previous = Some((bsys, u));
        if done {
            break;
        }
    }
    RunResult { records, failure: None }
}

/// The same pipeline with every cell marked.
pub fn run_uniform(config: &AdaptiveConfig, observer: impl FnMut(&StepView<'_>)) -> RunResult {
    let config = AdaptiveConfig { theta: 1.0, ..config.clone() };
    run_adaptive(&config, observer)
}
