//! The solve pipelines, the run report and report comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hps::adaptivity::{adaptive_solve, solve_with, AdaptiveOptions, IterationLog};
use hps::field::SolutionField;
use hps::meshtree::{InterpOptions, MeshTree, NonFinitePolicy};
use hps::problems::{catalog, relative_error, relative_error_vs_field, BenchmarkProblem, Problem, ProblemParams};
use hps::solver::{BuildOptions, SolverTree};
use hps::{HpsError, Result, Scalar};

use crate::config::{Mode, RunConfig};
use crate::io;

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub problem: String,
    pub mode: String,
    pub formulation: String,
    pub n_c: usize,
    pub epsilon: f64,
    pub n_initial: usize,
    pub n_final: usize,
    pub n_returned: usize,
    pub t_initial: f64,
    pub t_final: f64,
    pub t_solve: f64,
    pub memory_bytes: usize,
    pub e_rel: Option<f64>,
    /// `exact`, `uniform:<leaves>` or `none`.
    pub reference: String,
    pub converged: bool,
    pub iterations: Vec<IterationLog>,
}

fn sci(v: f64) -> String {
    format!("{v:.2e}")
}

impl RunReport {
    /// `key = value` lines; quantities to three significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("problem", self.problem.clone());
        kv("mode", self.mode.clone());
        kv("formulation", self.formulation.clone());
        kv("n_c", self.n_c.to_string());
        kv("epsilon", sci(self.epsilon));
        kv("N_i", self.n_initial.to_string());
        kv("N_f", self.n_final.to_string());
        kv("N_returned", self.n_returned.to_string());
        kv("T_i", sci(self.t_initial));
        kv("T_f", sci(self.t_final));
        kv("T_s", sci(self.t_solve));
        kv("R_bytes", self.memory_bytes.to_string());
        kv("R", format!("{:.3}", self.memory_bytes as f64 / 1e9));
        kv("E_rel", self.e_rel.map_or("none".into(), sci));
        kv("reference", self.reference.clone());
        kv("converged", self.converged.to_string());
        s
    }

    /// Parse a report file. The iteration log lives in its own file and is
    /// left empty.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HpsError::Parse(format!("report line {}: expected `key = value`", k + 1)))?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| HpsError::Parse(format!("report: missing `{k}`")))
        };
        fn parse<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
            v.parse().map_err(|_| HpsError::Parse(format!("report: bad value for `{k}`: `{v}`")))
        }
        let e_rel = match get("E_rel")?.as_str() {
            "none" => None,
            v => Some(parse("E_rel", v.to_string())?),
        };
        Ok(RunReport {
            problem: get("problem")?,
            mode: get("mode")?,
            formulation: get("formulation")?,
            n_c: parse("n_c", get("n_c")?)?,
            epsilon: parse("epsilon", get("epsilon")?)?,
            n_initial: parse("N_i", get("N_i")?)?,
            n_final: parse("N_f", get("N_f")?)?,
            n_returned: parse("N_returned", get("N_returned")?)?,
            t_initial: parse("T_i", get("T_i")?)?,
            t_final: parse("T_f", get("T_f")?)?,
            t_solve: parse("T_s", get("T_s")?)?,
            memory_bytes: parse("R_bytes", get("R_bytes")?)?,
            e_rel,
            reference: get("reference")?,
            converged: parse("converged", get("converged")?)?,
            iterations: Vec::new(),
        })
    }
}

/// A finished run: its report and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

struct Solved<T: Scalar> {
    report: RunReport,
    mesh: MeshTree,
    field: SolutionField<T>,
}

fn params(cfg: &RunConfig) -> ProblemParams {
    ProblemParams {
        alpha: cfg.alpha,
        omega: cfg.omega,
        eta: cfg.eta,
    }
}

fn execute<T: Scalar>(p: &BenchmarkProblem<T>, cfg: &RunConfig) -> Result<Solved<T>> {
    let mut report = RunReport {
        problem: p.name.to_string(),
        mode: cfg.mode.name().to_string(),
        formulation: p.formulation.name().to_string(),
        n_c: cfg.n_c,
        epsilon: cfg.epsilon,
        n_initial: 0,
        n_final: 0,
        n_returned: 0,
        t_initial: 0.0,
        t_final: 0.0,
        t_solve: 0.0,
        memory_bytes: 0,
        e_rel: None,
        reference: "none".into(),
        converged: true,
        iterations: Vec::new(),
    };
    let (mesh, field) = match cfg.mode {
        Mode::Uniform => {
            let levels = cfg.uniform_levels.expect("validated");
            let mesh = MeshTree::uniform(p.domain, cfg.n_c, levels)?;
            let opts = BuildOptions {
                retain_for_update: cfg.retain_for_update.unwrap_or(false),
                recompute_leaves: false,
                threads: cfg.threads,
            };
            let t0 = Instant::now();
            let tree = SolverTree::build(mesh, p.pde.clone(), p.formulation, opts)?;
            report.t_final = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let field = solve_with(&tree, &p.boundary)?;
            report.t_solve = t1.elapsed().as_secs_f64();
            report.n_initial = tree.mesh().num_leaves();
            report.n_final = report.n_initial;
            report.n_returned = report.n_initial;
            report.memory_bytes = tree.memory_report()?.total;
            (tree.mesh().clone(), field)
        }
        Mode::Adaptive => {
            let opts = AdaptiveOptions {
                max_iterations: cfg.max_iterations,
                seed_levels: cfg.seed_levels,
                interp: InterpOptions {
                    max_depth: cfg.max_depth,
                    on_nonfinite: NonFinitePolicy::Skip,
                    ..InterpOptions::default()
                },
                threads: cfg.threads,
            };
            let r = adaptive_solve(&p.pde, &p.boundary, p.domain, cfg.epsilon, cfg.n_c, p.formulation, &opts)?;
            report.n_initial = r.report.n_initial;
            report.n_final = r.report.n_final;
            report.n_returned = r.report.n_returned;
            report.t_initial = r.report.t_initial;
            report.t_final = r.report.t_final;
            report.t_solve = r.report.t_solve;
            report.converged = r.report.converged;
            report.iterations = r.report.iterations.clone();
            report.memory_bytes = r.solver.memory_report()?.total;
            (r.solver.mesh().clone(), r.solution)
        }
    };
    if let Some(exact) = &p.exact {
        report.e_rel = Some(relative_error(&field, &**exact)?.mean);
        report.reference = "exact".into();
    } else if let Some(levels) = cfg.reference_levels {
        let opts = BuildOptions {
            retain_for_update: false,
            recompute_leaves: true,
            threads: cfg.threads,
        };
        let tree = SolverTree::build(MeshTree::uniform(p.domain, cfg.n_c, levels)?, p.pde.clone(), p.formulation, opts)?;
        let reference = solve_with(&tree, &p.boundary)?;
        report.e_rel = Some(relative_error_vs_field(&field, &reference)?.mean);
        report.reference = format!("uniform:{}", tree.mesh().num_leaves());
    }
    Ok(Solved { report, mesh, field })
}

fn write_outputs<T: Scalar>(cfg: &RunConfig, solved: &Solved<T>) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let files = [
        ("mesh.txt", solved.mesh.export_leaves()),
        (
            "solution.txt",
            io::write_solution(&io::solution_records(&solved.field)?, T::IS_COMPLEX),
        ),
        ("report.txt", solved.report.to_text()),
        ("iterations.txt", io::write_iterations(&solved.report.iterations)),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text)?;
        out.push(path);
    }
    Ok(out)
}

/// Run the configured pipeline and write `mesh.txt`, `solution.txt`,
/// `report.txt` and `iterations.txt` into the output directory.
pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    hps::use_sequential_kernels();
    let problem = catalog(&cfg.problem, params(cfg))?;
    let (report, files) = match problem {
        Problem::Real(p) => {
            let s = execute(&p, cfg)?;
            (s.report.clone(), write_outputs(cfg, &s)?)
        }
        Problem::Complex(p) => {
            let s = execute(&p, cfg)?;
            (s.report.clone(), write_outputs(cfg, &s)?)
        }
    };
    Ok(Outcome { report, files })
}

/// Side-by-side table of two reports with deltas `b - a`.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<String> {
    if a.problem != b.problem {
        return Err(HpsError::InvalidArgument(format!(
            "reports are for different problems: `{}` and `{}`",
            a.problem, b.problem
        )));
    }
    let count = |v: usize| Some(v as f64);
    // (name, a, b, integer valued)
    let rows: [(&str, Option<f64>, Option<f64>, bool); 8] = [
        ("n_c", count(a.n_c), count(b.n_c), true),
        ("N_i", count(a.n_initial), count(b.n_initial), true),
        ("N_f", count(a.n_final), count(b.n_final), true),
        ("T_i", Some(a.t_initial), Some(b.t_initial), false),
        ("T_f", Some(a.t_final), Some(b.t_final), false),
        ("T_s", Some(a.t_solve), Some(b.t_solve), false),
        ("R_bytes", count(a.memory_bytes), count(b.memory_bytes), true),
        ("E_rel", a.e_rel, b.e_rel, false),
    ];
    let cell = |v: Option<f64>, int: bool| match v {
        None => "-".to_string(),
        Some(x) if int => format!("{x:.0}"),
        Some(x) => format!("{x:.3e}"),
    };
    let mut s = format!("problem: {}\n", a.problem);
    let _ = writeln!(s, "{:<8} {:>12} {:>12} {:>12}", "quantity", "a", "b", "delta");
    for (name, x, y, int) in rows {
        let d = match (x, y) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        };
        let _ = writeln!(s, "{:<8} {:>12} {:>12} {:>12}", name, cell(x, int), cell(y, int), cell(d, int));
    }
    Ok(s)
}

pub fn compare_files(a: &Path, b: &Path) -> Result<String> {
    let ra = RunReport::from_text(&fs::read_to_string(a)?)?;
    let rb = RunReport::from_text(&fs::read_to_string(b)?)?;
    compare(&ra, &rb)
}
