//! Reference goal values from uniform high-order solves, cached on disk.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forms::{newton_solve, FormContext, NewtonControls};
use crate::geometry::{build_benchmark_mesh, DomainSpec};
use crate::goals::{evaluate_goals, GoalValues};
use crate::space::FeSystem;

/// Solves with `[Q4]² × Q2` on two consecutive uniform levels and
/// extrapolates assuming second-order convergence, the rate of the
/// polygonal boundary approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub fine_level: usize,
    pub stokes: bool,
    pub domain: DomainSpec,
    #[serde(skip)]
    pub newton: Option<NewtonControls>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { fine_level: 4, stokes: false, domain: DomainSpec::default(), newton: None }
    }
}

impl ReferenceConfig {
    /// Hex digest identifying everything the values depend on.
    pub fn hash(&self) -> String {
        let d = &self.domain;
        let key = format!(
            "reference v1; degree 4; levels {} {}; stokes {}; nu {:e}; peak {:e}; h {:e}; l {:e}; c ({:e}, {:e}); r {:e}",
            self.fine_level.saturating_sub(1),
            self.fine_level,
            self.stokes,
            d.viscosity,
            d.inflow_peak,
            d.channel_height,
            d.channel_length,
            d.cylinder_center[0],
            d.cylinder_center[1],
            d.cylinder_radius
        );
        let digest = Sha256::digest(key.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelValues {
    pub level: usize,
    pub dofs: usize,
    pub dp: f64,
    pub drag: f64,
    pub lift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub hash: String,
    pub dp: f64,
    pub drag: f64,
    pub lift: f64,
    pub levels: Vec<LevelValues>,
}

impl Reference {
    pub fn values(&self) -> GoalValues {
        GoalValues { dp: self.dp, drag: self.drag, lift: self.lift }
    }
}

/// Goal values of the `[Q4]² × Q2` solution on uniform level `level`.
pub fn solve_level(cfg: &ReferenceConfig, level: usize) -> Result<LevelValues> {
    let newton = cfg.newton.unwrap_or(NewtonControls { dof_cap: 2_000_000, ..Default::default() });
    let sys = Arc::new(FeSystem::new(Arc::new(build_benchmark_mesh(&cfg.domain, level)), 4)?);
    log::info!("reference level {level}: {} dofs", sys.n_dofs());
    let u0 = {
        let stokes = FormContext::new(Arc::clone(&sys), false)?;
        newton_solve(&stokes, &sys.initial_guess(), &newton, None)?.u
    };
    let u = if cfg.stokes {
        u0
    } else {
        newton_solve(&FormContext::new(Arc::clone(&sys), true)?, &u0, &newton, None)?.u
    };
    let g = evaluate_goals(&sys, &u)?;
    Ok(LevelValues { level, dofs: sys.n_dofs(), dp: g.dp, drag: g.drag, lift: g.lift })
}

/// `f + (f − c)/3`, componentwise.
pub fn extrapolate(coarse: GoalValues, fine: GoalValues) -> GoalValues {
    let (c, f) = (coarse.as_array(), fine.as_array());
    GoalValues::from_array(std::array::from_fn(|i| f[i] + (f[i] - c[i]) / 3.0))
}

pub fn compute_reference(cfg: &ReferenceConfig) -> Result<Reference> {
    if cfg.fine_level == 0 {
        return Err(Error::Config("reference fine level must be at least 1".into()));
    }
    let coarse = solve_level(cfg, cfg.fine_level - 1)?;
    let fine = solve_level(cfg, cfg.fine_level)?;
    let lv = |l: &LevelValues| GoalValues { dp: l.dp, drag: l.drag, lift: l.lift };
    let v = extrapolate(lv(&coarse), lv(&fine));
    Ok(Reference { hash: cfg.hash(), dp: v.dp, drag: v.drag, lift: v.lift, levels: vec![coarse, fine] })
}

/// Loads the cached reference at `path` if its hash matches, otherwise
/// computes and stores it.
pub fn load_or_compute(path: &Path, cfg: &ReferenceConfig) -> Result<Reference> {
    let hash = cfg.hash();
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        match toml::from_str::<Reference>(&text) {
            Ok(r) if r.hash == hash => {
                log::info!("reference loaded from {}", path.display());
                return Ok(r);
            }
            Ok(_) => log::info!("reference cache {} is stale; recomputing", path.display()),
            Err(e) => log::warn!("unreadable reference cache {}: {e}; recomputing", path.display()),
        }
    }
    let r = compute_reference(cfg)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = toml::to_string(&r).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(r)
}
