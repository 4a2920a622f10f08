//! Run configuration, CSV records, VTK output and figure data files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptivity::{AdaptiveConfig, LoopRecord};
use crate::error::{Error, Result};
use crate::estimator::Enrichment;
use crate::forms::NewtonControls;
use crate::geometry::DomainSpec;
use crate::goals::{GoalKind, GoalValues};
use crate::space::{FeSystem, MixedVector};

/// Machine epsilon of `f64` as used for round-off comparisons, `2⁻⁵²`.
pub const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub enrichment: Enrichment,
    pub goal: GoalKind,
    pub theta: f64,
    pub max_dofs: usize,
    pub max_steps: usize,
    pub stokes: bool,
    pub initial_refinements: usize,
    /// Mark every cell instead of bulk marking.
    pub uniform: bool,
    pub out: PathBuf,
    pub emit_vtk: bool,
    pub emit_figures: bool,
    pub reference_cache: PathBuf,
    /// Finer of the two uniform levels used for the reference values.
    pub reference_level: usize,
    pub newton: NewtonControls,
    pub domain: DomainSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AdaptiveConfig::default();
        Self {
            enrichment: a.enrichment,
            goal: a.goal,
            theta: a.theta,
            max_dofs: a.max_dofs,
            max_steps: a.max_steps,
            stokes: a.stokes,
            initial_refinements: a.initial_refinements,
            uniform: false,
            out: PathBuf::from("out"),
            emit_vtk: false,
            emit_figures: false,
            reference_cache: PathBuf::from("reference.toml"),
            reference_level: 4,
            newton: a.newton,
            domain: a.domain,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn adaptive(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            enrichment: self.enrichment,
            goal: self.goal,
            theta: if self.uniform { 1.0 } else { self.theta },
            max_dofs: self.max_dofs,
            max_steps: self.max_steps,
            newton: self.newton,
            stokes: self.stokes,
            initial_refinements: self.initial_refinements,
            domain: self.domain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adaptive().validate()?;
        if self.reference_level == 0 {
            return Err(Error::Config("reference_level must be at least 1".into()));
        }
        Ok(())
    }
}

pub const CSV_COLUMNS: [&str; 22] = [
    "step",
    "dofs_primal",
    "dofs_enriched",
    "dp",
    "drag",
    "lift",
    "J_E",
    "dp_enriched",
    "drag_enriched",
    "lift_enriched",
    "eta_plus",
    "part_primal",
    "part_adjoint",
    "iter_part",
    "eta_R",
    "eta_E",
    "I_eff",
    "err_ref",
    "err_ref_enriched",
    "sat_dp",
    "sat_drag",
    "sat_lift",
];

/// One CSV line. `j_e` is `J(u⁺) − J(u_h)` of the estimated goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub step: usize,
    pub dofs_primal: usize,
    pub dofs_enriched: usize,
    pub base: GoalValues,
    pub j_e: f64,
    pub enriched: GoalValues,
    pub eta_plus: f64,
    pub part_primal: f64,
    pub part_adjoint: f64,
    pub iter_part: f64,
    pub eta_r: f64,
    pub eta_e: f64,
    pub i_eff: f64,
    pub err_ref: f64,
    pub err_ref_enriched: f64,
    pub saturation: [Option<bool>; 3],
}

impl CsvRow {
    pub fn from_record(r: &LoopRecord) -> Self {
        let e = &r.estimator;
        Self {
            step: r.step,
            dofs_primal: r.dofs_primal,
            dofs_enriched: r.dofs_enriched,
            base: r.base,
            j_e: e.delta_j,
            enriched: r.enriched,
            eta_plus: e.eta_plus,
            part_primal: e.part_primal,
            part_adjoint: e.part_adjoint,
            iter_part: e.iter_part,
            eta_r: e.eta_r,
            eta_e: e.eta_e,
            i_eff: e.i_eff,
            err_ref: r.err_ref,
            err_ref_enriched: r.err_ref_enriched,
            saturation: r.saturation,
        }
    }

    /// Bitwise equality, so that `NaN` fields compare equal to themselves.
    pub fn same_bits(&self, o: &Self) -> bool {
        let a = self.floats();
        let b = o.floats();
        self.step == o.step
            && self.dofs_primal == o.dofs_primal
            && self.dofs_enriched == o.dofs_enriched
            && self.saturation == o.saturation
            && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    fn floats(&self) -> [f64; 16] {
        [
            self.base.dp,
            self.base.drag,
            self.base.lift,
            self.j_e,
            self.enriched.dp,
            self.enriched.drag,
            self.enriched.lift,
            self.eta_plus,
            self.part_primal,
            self.part_adjoint,
            self.iter_part,
            self.eta_r,
            self.eta_e,
            self.i_eff,
            self.err_ref,
            self.err_ref_enriched,
        ]
    }

    fn to_line(self) -> String {
        let mut s = format!("{},{},{}", self.step, self.dofs_primal, self.dofs_enriched);
        for x in self.floats() {
            write!(s, ",{x:.16e}").unwrap();
        }
        for f in self.saturation {
            s.push(',');
            if let Some(b) = f {
                s.push_str(if b { "true" } else { "false" });
            }
        }
        s
    }

    fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != CSV_COLUMNS.len() {
            return Err(Error::Config(format!("csv row has {} fields, expected {}", f.len(), CSV_COLUMNS.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Config(format!("bad integer '{s}': {e}")));
        let mut x = [0.0; 16];
        for (k, v) in x.iter_mut().enumerate() {
            *v = f[3 + k].parse().map_err(|e| Error::Config(format!("bad number '{}': {e}", f[3 + k])))?;
        }
        let mut saturation = [None; 3];
        for (k, s) in saturation.iter_mut().enumerate() {
            *s = match f[19 + k] {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                o => return Err(Error::Config(format!("bad flag '{o}'"))),
            };
        }
        Ok(Self {
            step: int(f[0])?,
            dofs_primal: int(f[1])?,
            dofs_enriched: int(f[2])?,
            base: GoalValues { dp: x[0], drag: x[1], lift: x[2] },
            j_e: x[3],
            enriched: GoalValues { dp: x[4], drag: x[5], lift: x[6] },
            eta_plus: x[7],
            part_primal: x[8],
            part_adjoint: x[9],
            iter_part: x[10],
            eta_r: x[11],
            eta_e: x[12],
            i_eff: x[13],
            err_ref: x[14],
            err_ref_enriched: x[15],
            saturation,
        })
    }
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut s = CSV_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MissingData(format!("{} is empty", path.display())))?;
    if header != CSV_COLUMNS.join(",") {
        return Err(Error::Config(format!("unexpected csv header in {}", path.display())));
    }
    lines.filter(|l| !l.is_empty()).map(CsvRow::parse).collect()
}

/// Legacy ASCII VTK file of the base mesh with `u`, `p`, `z_u`, `z_p` at the
/// vertices and the indicators as cell data.
pub fn write_vtk(
    path: &Path,
    sys: &FeSystem,
    u: &MixedVector,
    z: &MixedVector,
    indicators: &[(usize, f64)],
) -> Result<()> {
    let mesh = sys.mesh();
    let nv = mesh.vertices().len();
    let mut owner: Vec<Option<(usize, [f64; 2])>> = vec![None; nv];
    const CORNERS: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    for &c in mesh.active_cells() {
        for (k, &v) in mesh.cell(c).vertices.iter().enumerate() {
            owner[v].get_or_insert((c, CORNERS[k]));
        }
    }
    let mut fu = vec![[0.0; 3]; nv];
    let mut fz = vec![[0.0; 3]; nv];
    for v in 0..nv {
        if let Some((c, xi)) = owner[v] {
            let a = sys.eval_in_cell(u, c, xi)?;
            let b = sys.eval_in_cell(z, c, xi)?;
            fu[v] = [a.u[0], a.u[1], a.p];
            fz[v] = [b.u[0], b.u[1], b.p];
        }
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nnavier-stokes step\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(s, "POINTS {nv} double").unwrap();
    for p in mesh.vertices() {
        writeln!(s, "{:.16e} {:.16e} 0", p[0], p[1]).unwrap();
    }
    let cells = mesh.active_cells();
    writeln!(s, "CELLS {} {}", cells.len(), 5 * cells.len()).unwrap();
    for &c in cells {
        let v = mesh.cell(c).vertices;
        writeln!(s, "4 {} {} {} {}", v[0], v[1], v[2], v[3]).unwrap();
    }
    writeln!(s, "CELL_TYPES {}", cells.len()).unwrap();
    for _ in cells {
        s.push_str("9\n");
    }
    writeln!(s, "POINT_DATA {nv}").unwrap();
    for (name, f) in [("u", &fu), ("z_u", &fz)] {
        writeln!(s, "VECTORS {name} double").unwrap();
        for x in f.iter() {
            writeln!(s, "{:.16e} {:.16e} 0", x[0], x[1]).unwrap();
        }
    }
    for (name, f) in [("p", &fu), ("z_p", &fz)] {
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for x in f.iter() {
            writeln!(s, "{:.16e}", x[2]).unwrap();
        }
    }
    writeln!(s, "CELL_DATA {}\nSCALARS indicator double 1\nLOOKUP_TABLE default", cells.len()).unwrap();
    let mut it = indicators.iter().peekable();
    for &c in cells {
        let v = match it.peek() {
            Some(&&(id, v)) if id == c => {
                it.next();
                v
            }
            _ => 0.0,
        };
        writeln!(s, "{v:.16e}").unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Record sets of the paired runs that feed the figure files.
pub struct FigureRuns<'a> {
    pub p: &'a [CsvRow],
    pub h: &'a [CsvRow],
    pub uniform: &'a [CsvRow],
    pub reference: GoalValues,
}

fn relative(v: f64, r: f64) -> f64 {
    ((v - r) / r).abs()
}

/// Writes a data file with one block per series, blocks separated by two
/// blank lines.
fn write_blocks(path: &Path, title: &str, columns: &str, blocks: &[(&str, Vec<Vec<f64>>)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {title}")?;
    for (k, (name, rows)) in blocks.iter().enumerate() {
        if k > 0 {
            writeln!(f, "\n")?;
        }
        writeln!(f, "# series {name}\n# {columns}")?;
        let mut last = f64::NEG_INFINITY;
        for row in rows {
            if row[0] <= last {
                continue;
            }
            last = row[0];
            let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Writes the figure data files into `dir` and returns their paths.
pub fn emit_figures(dir: &Path, runs: &FigureRuns<'_>) -> Result<Vec<PathBuf>> {
    if runs.p.is_empty() || runs.h.is_empty() || runs.uniform.is_empty() {
        return Err(Error::MissingData("figures need non-empty p, h and uniform runs".into()));
    }
    std::fs::create_dir_all(dir)?;
    let r = runs.reference;
    let dofs = |x: &CsvRow| x.dofs_primal as f64;
    let mut out = Vec::new();

    let path = dir.join("fig2_effectivity.dat");
    let ieff = |rows: &[CsvRow]| rows.iter().filter(|x| x.i_eff.is_finite()).map(|x| vec![dofs(x), x.i_eff, 1.0]).collect();
    write_blocks(&path, "effectivity indices", "dofs I_eff one", &[("p", ieff(runs.p)), ("h", ieff(runs.h))])?;
    out.push(path);

    let path = dir.join("fig3_saturation.dat");
    let sat = |rows: &[CsvRow]| {
        rows.iter().map(|x| vec![dofs(x), x.err_ref.abs(), x.err_ref_enriched.abs()]).collect()
    };
    write_blocks(
        &path,
        "errors of the solution and the enriched solution in the estimated goal",
        "dofs |J(u_h)-J(u)| |J(u+)-J(u)|",
        &[("p", sat(runs.p)), ("h", sat(runs.h))],
    )?;
    out.push(path);

    for (name, file, idx) in
        [("lift", "fig4_lift.dat", 2usize), ("drag", "fig5_drag.dat", 1), ("dp", "fig6_dp.dat", 0)]
    {
        let path = dir.join(file);
        let rv = r.as_array()[idx];
        let err = |rows: &[CsvRow]| {
            rows.iter().map(|x| vec![dofs(x), relative(x.base.as_array()[idx], rv)]).collect()
        };
        write_blocks(
            &path,
            &format!("relative error in {name}"),
            "dofs relative_error",
            &[("p", err(runs.p)), ("h", err(runs.h)), ("uniform", err(runs.uniform))],
        )?;
        out.push(path);
    }

    let path = dir.join("fig7_remainder_gap.dat");
    let rg = |rows: &[CsvRow]| {
        rows.iter().map(|x| vec![dofs(x), x.eta_r.abs(), x.eta_e, EPS * x.dofs_enriched as f64]).collect()
    };
    write_blocks(
        &path,
        "remainder and gap parts",
        "dofs |eta_R| eta_E eps*dofs_enriched",
        &[("p", rg(runs.p)), ("h", rg(runs.h))],
    )?;
    out.push(path);
    Ok(out)
}

/// Parses a figure data file into its named blocks of rows.
pub fn read_blocks(path: &Path) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut blocks: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("# series ") {
            blocks.push((name.to_string(), Vec::new()));
        } else if !line.starts_with('#') && !line.trim().is_empty() {
            let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let row = row.map_err(|e| Error::Config(format!("bad data line '{line}': {e}")))?;
            blocks.last_mut().ok_or_else(|| Error::Config("data before series header".into()))?.1.push(row);
        }
    }
    Ok(blocks)
}

/// Paths written by [`execute`] and the records of each run.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub runs: Vec<(String, Vec<CsvRow>)>,
}

fn run_one(
    cfg: &RunConfig,
    adaptive: &AdaptiveConfig,
    dir: &Path,
    reference: &GoalValues,
    out: &mut RunOutput,
) -> Result<Vec<CsvRow>> {
    std::fs::create_dir_all(dir)?;
    let mut vtk_error = None;
    let result = crate::adaptivity::run_adaptive(adaptive, |view| {
        if cfg.emit_vtk && vtk_error.is_none() {
            let path = dir.join(format!("step_{}.vtk", view.record.step));
            let cells = &view.record.estimator.indicators.cells;
            match write_vtk(&path, view.system, view.u, view.z, cells) {
                Ok(()) => out.files.push(path),
                Err(e) => vtk_error = Some(e),
            }
        }
    });
    let mut records = result.records;
    for r in &mut records {
        r.apply_reference(reference);
    }
    let rows: Vec<CsvRow> = records.iter().map(CsvRow::from_record).collect();
    let path = dir.join("records.csv");
    write_csv(&path, &rows)?;
    out.files.push(path);
    if let Some(e) = vtk_error {
        return Err(e);
    }
    if let Some(e) = result.failure {
        return Err(e);
    }
    Ok(rows)
}

/// Runs the configured computation and writes every output file.
pub fn execute(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut out = RunOutput::default();
    let path = cfg.out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()?)?;
    out.files.push(path);

    let rcfg = crate::reference::ReferenceConfig {
        fine_level: cfg.reference_level,
        stokes: cfg.stokes,
        domain: cfg.domain,
        newton: None,
    };
    let reference = crate::reference::load_or_compute(&cfg.reference_cache, &rcfg)?.values();
    log::info!("reference values: {reference:?}");

    if !cfg.emit_figures {
        let rows = run_one(cfg, &cfg.adaptive(), &cfg.out, &reference, &mut out)?;
        out.runs.push((if cfg.uniform { "uniform" } else { cfg.enrichment.name() }.to_string(), rows));
        return Ok(out);
    }
    let base = RunConfig { uniform: false, ..cfg.clone() };
    for (name, enrichment, uniform) in [("p", Enrichment::P, false), ("h", Enrichment::H, false), ("uniform", Enrichment::P, true)] {
        let c = RunConfig { enrichment, uniform, ..base.clone() };
        let rows = run_one(&c, &c.adaptive(), &cfg.out.join(name), &reference, &mut out)?;
        out.runs.push((name.to_string(), rows));
    }
    let runs = FigureRuns { p: &out.runs[0].1, h: &out.runs[1].1, uniform: &out.runs[2].1, reference };
    let files = emit_figures(&cfg.out.join("figures"), &runs)?;
    out.files.extend(files);
    Ok(out)
}

/// Process exit code for an error: 2 configuration, 4 I/O, 3 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) => 4,
        _ => 3,
    }
}
