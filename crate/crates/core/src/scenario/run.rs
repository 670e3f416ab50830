//! Scenario assembly and the `run` / `gradcheck` drivers.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::adjoint::{DesiredState, Targets, Weights};
use crate::error::{Error, Result};
use crate::forward::{extract_interface, solve_forward, AllenCahn, ControlField, PhaseTrajectory, StepScheme};
use crate::grid::{Field, SpatialGrid, TimeGrid};
use crate::mpec::{solve_mpec, HomotopyOutcome, MpecSolution, StageRecord};
use crate::potentials::Potential;
use crate::reduced::{gradient_check, hessian_symmetry_check, random_control, GradCheckRow, ReducedProblem, SymmetryRow};
use crate::scenario::config::{PotentialKind, RunMode, ScenarioConfig};
use crate::scenario::io::{format_float, table_csv, write_atomic, write_field, write_history};
use crate::trn::{trn_minimize, warm_start, OptimizationResult};

/// Everything needed to set up a reduced problem from a config.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub model: AllenCahn,
    pub c0: Field,
    pub targets: Targets,
    pub weights: Weights,
}

/// Largest deviation of a vector field from the Gibbs simplex (negativity or sum).
fn simplex_violation(c: &Field) -> f64 {
    let mut worst: f64 = 0.0;
    let mut node = vec![0.0; c.ncomp()];
    for k in 0..c.nodes() {
        c.node(k, &mut node);
        let sum: f64 = node.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        for v in &node {
            worst = worst.max(-v);
        }
    }
    worst
}

impl Scenario {
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        let grid = SpatialGrid::new(config.x_min, config.x_max, config.y_min, config.y_max, config.nx, config.ny)
            .map_err(|e| Error::ConfigValidation(e.to_string()))?;
        let time = TimeGrid::new(config.t_final, config.steps).map_err(|e| Error::ConfigValidation(e.to_string()))?;
        let potential = match config.potential {
            PotentialKind::DoubleWell => Potential::DoubleWell,
            PotentialKind::Obstacle => Potential::obstacle(config.homotopy.sigma_0, config.phases)
                .map_err(|e| Error::ConfigValidation(e.to_string()))?,
        };
        let model = AllenCahn::new(grid.clone(), config.epsilon, potential).map_err(|e| Error::ConfigValidation(e.to_string()))?;
        let ncomp = config.ncomp();
        let profile = |name: &str, p: &crate::scenario::profiles::Profile| {
            p.evaluate(&grid, config.epsilon, ncomp)
                .map_err(|e| Error::ConfigValidation(format!("{name}: {e}")))
        };
        let c0 = profile("initial", &config.initial)?;
        let terminal = profile("target", &config.target)?;
        let desired = profile("desired", &config.desired)?;
        if config.potential == PotentialKind::Obstacle {
            for (name, f) in [("initial", &c0), ("target", &terminal), ("desired", &desired)] {
                let v = simplex_violation(f);
                if v > 1e-12 {
                    return Err(Error::ConfigValidation(format!(
                        "{name} profile leaves the Gibbs simplex by {v:e}"
                    )));
                }
            }
        }
        let weights = Weights::new(config.nu_t, config.nu_d, config.nu_f).map_err(|e| Error::ConfigValidation(e.to_string()))?;
        Ok(Scenario {
            config: config.clone(),
            grid,
            time,
            model,
            c0,
            targets: Targets {
                terminal,
                desired: DesiredState::Constant(desired),
            },
            weights,
        })
    }

    pub fn problem(&self, scheme: StepScheme) -> Result<ReducedProblem> {
        ReducedProblem::new(
            self.model.clone(),
            self.c0.clone(),
            self.targets.clone(),
            self.weights,
            self.time,
            scheme,
        )
    }

    pub fn zero_control(&self) -> ControlField {
        ControlField::zeros(&self.grid, self.time, self.model.ncomp())
    }

    /// Snapshot steps for `t = 0, T/2, 3T/4, T`.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let m = self.time.steps;
        let mut s = vec![0, m.div_ceil(2), (3 * m + 2) / 4, m];
        s.dedup();
        s
    }
}

/// Smooth-case optimization: optional semi-implicit warm start, then TRN
/// with the configured scheme.
pub fn optimize_smooth(scenario: &Scenario, scheme: StepScheme) -> Result<(ReducedProblem, OptimizationResult<ControlField>)> {
    let mut problem = scenario.problem(scheme)?;
    let cfg = &scenario.config;
    let mut f0 = scenario.zero_control();
    if cfg.warm_start && scheme == StepScheme::Implicit {
        f0 = warm_start(&mut problem, &f0, &cfg.trust_region);
    }
    let mut state = cfg.trust_region.clone();
    let result = trn_minimize(&mut problem, &f0, &mut state).map_err(|e| e.with_context("trust-region Newton"))?;
    Ok((problem, result))
}

pub fn solve_obstacle(scenario: &Scenario, scheme: StepScheme) -> Result<(ReducedProblem, MpecSolution)> {
    let mut problem = scenario.problem(scheme)?;
    let f0 = scenario.zero_control();
    let sol = solve_mpec(&mut problem, &f0, &scenario.config.homotopy, &scenario.config.trust_region)?;
    Ok((problem, sol))
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub paper_scale: bool,
    pub scheme: Option<StepScheme>,
    pub forward_only: bool,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: String,
    pub mode: &'static str,
    /// False when the optimizer stopped without meeting its tolerance or a homotopy stage failed.
    pub success: bool,
    pub objective: Option<f64>,
    pub grad_norm: Option<f64>,
    pub forward_solves: u64,
    pub homotopy: Option<HomotopyOutcome>,
    pub files: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let p = self.path(name);
        write_atomic(&p, contents)
    }
}

/// Control with the last component dropped for vector problems (`f_N = -sum of the others`).
fn reported_control(f: &Field, grid: &SpatialGrid) -> Result<Field> {
    if f.ncomp() == 1 {
        return Ok(f.clone());
    }
    let keep = f.ncomp() - 1;
    Field::from_data(grid, keep, f.data()[..keep * f.nodes()].to_vec())
}

fn write_trajectory_outputs(w: &mut Writer, sc: &Scenario, traj: &PhaseTrajectory, control: &ControlField) -> Result<()> {
    let grid = &sc.grid;
    for m in sc.snapshot_steps() {
        write_field(traj.state(m), grid, &w.path(&format!("state_m{m:05}.csv")))?;
        if m > 0 {
            write_field(&reported_control(control.at(m), grid)?, grid, &w.path(&format!("control_m{m:05}.csv")))?;
        }
    }
    let norms = control.norms_per_step(grid);
    let rows: Vec<Vec<String>> = norms
        .iter()
        .enumerate()
        .map(|(i, n)| vec![(i + 1).to_string(), format_float(sc.time.time(i + 1)), format_float(*n)])
        .collect();
    w.text("control_norm.csv", &table_csv(&["step", "t", "norm"], &rows))?;

    let mut rows = Vec::new();
    if sc.model.ncomp() == 1 {
        let mut prev_r = None;
        for m in 0..=traj.steps() {
            let c = traj.state(m);
            let d = extract_interface(c, grid, 0.0)?;
            let velocity = prev_r.map_or(0.0, |r: f64| (d.radius - r) / sc.time.tau());
            prev_r = Some(d.radius);
            rows.push(vec![
                m.to_string(),
                format_float(sc.time.time(m)),
                format_float(d.radius),
                format_float(d.area),
                d.components.to_string(),
                format_float(sc.model.energy(c)),
                format_float(velocity),
            ]);
        }
        w.text(
            "interface.csv",
            &table_csv(&["step", "t", "radius", "area", "components", "energy", "velocity"], &rows),
        )?;
    } else {
        let n = sc.model.ncomp();
        for m in 0..=traj.steps() {
            let c = traj.state(m);
            let mut row = vec![
                m.to_string(),
                format_float(sc.time.time(m)),
                format_float(sc.model.energy(c)),
                format_float(simplex_violation(c).max(0.0)),
                format_float(c.min_value()),
            ];
            for i in 0..n {
                let mass: f64 = c.component(i).iter().zip(grid.weights()).map(|(a, b)| a * b).sum();
                row.push(format_float(mass));
            }
            rows.push(row);
        }
        let mut header = vec!["step".to_string(), "t".into(), "energy".into(), "simplex_error".into(), "min_c".into()];
        header.extend((1..=n).map(|i| format!("mass{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        w.text("phases.csv", &table_csv(&header, &rows))?;
    }
    Ok(())
}

pub const STAGES_HEADER: &[&str] = &[
    "stage",
    "sigma",
    "alpha",
    "residual",
    "objective",
    "grad_norm",
    "converged",
    "trn_iterations",
    "min_c",
    "min_xi",
    "pairing",
    "negativity",
    "zeta_p",
    "zeta_c_plus",
    "p_xi",
    "xi_energy",
    "simplex_error",
    "forward_solves",
];

pub fn stage_row(s: &StageRecord) -> Vec<String> {
    vec![
        s.stage.to_string(),
        format_float(s.sigma),
        s.alpha.map_or_else(|| "none".to_string(), format_float),
        format_float(s.residual),
        format_float(s.objective),
        format_float(s.grad_norm),
        s.converged.to_string(),
        s.trn_iterations.to_string(),
        format_float(s.complementarity.min_c),
        format_float(s.complementarity.min_xi),
        format_float(s.complementarity.pairing),
        format_float(s.complementarity.negativity),
        format_float(s.stationarity.zeta_p),
        format_float(s.stationarity.zeta_c_plus),
        format_float(s.stationarity.p_xi),
        format_float(s.xi_energy),
        format_float(s.simplex_error),
        s.forward_solves.to_string(),
    ]
}

fn summary(report: &RunReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), format_float);
    let rows = vec![
        vec!["scenario".to_string(), report.scenario.clone()],
        vec!["mode".into(), report.mode.into()],
        vec!["success".into(), report.success.to_string()],
        vec!["objective".into(), opt(report.objective)],
        vec!["grad_norm".into(), opt(report.grad_norm)],
        vec!["forward_solves".into(), report.forward_solves.to_string()],
        vec![
            "homotopy".into(),
            report.homotopy.map_or_else(|| "none".to_string(), |h| format!("{h:?}")),
        ],
    ];
    table_csv(&["key", "value"], &rows)
}

/// Runs a scenario and writes its outputs into `opts.out_dir`.
pub fn run_scenario(config: &ScenarioConfig, opts: &RunOptions) -> Result<RunReport> {
    let config = if opts.paper_scale { config.paper_scale() } else { config.clone() };
    let scheme = opts.scheme.unwrap_or(config.scheme);
    let sc = Scenario::build(&config)?;
    let mut w = Writer::new(&opts.out_dir)?;
    let forward_only = opts.forward_only || config.mode == RunMode::Forward;
    info!(
        "scenario {}: {}x{} nodes, {} steps, scheme {}",
        config.scenario,
        config.nx,
        config.ny,
        config.steps,
        scheme.name()
    );

    let mut report = RunReport {
        scenario: config.scenario.clone(),
        mode: "forward",
        success: true,
        objective: None,
        grad_norm: None,
        forward_solves: 0,
        homotopy: None,
        files: Vec::new(),
    };

    if forward_only {
        let control = sc.zero_control();
        let traj = solve_forward(&sc.model, &sc.c0, &control, scheme).map_err(|e| e.with_context("forward solve"))?;
        let mut problem = sc.problem(scheme)?;
        report.objective = Some(problem.eval_objective(&control)?);
        report.forward_solves = problem.counters().total();
        write_trajectory_outputs(&mut w, &sc, &traj, &control)?;
    } else if config.potential == PotentialKind::Obstacle {
        report.mode = "homotopy";
        let (problem, sol) = solve_obstacle(&sc, scheme)?;
        write_history(&sol.history, &w.path("history.csv"))?;
        let rows: Vec<Vec<String>> = sol.stages.iter().map(stage_row).collect();
        w.text("stages.csv", &table_csv(STAGES_HEADER, &rows))?;
        write_trajectory_outputs(&mut w, &sc, &sol.trajectory, &sol.control)?;
        let last = sol.stages.last().expect("at least one stage");
        report.objective = Some(last.objective);
        report.grad_norm = Some(last.grad_norm);
        report.forward_solves = problem.counters().total();
        report.homotopy = Some(sol.outcome);
        report.success = sol.outcome != HomotopyOutcome::StageFailed;
    } else {
        report.mode = "optimize";
        let (mut problem, result) = optimize_smooth(&sc, scheme)?;
        write_history(&result.history, &w.path("history.csv"))?;
        let traj = problem.state(&result.solution)?.clone();
        write_trajectory_outputs(&mut w, &sc, &traj, &result.solution)?;
        report.objective = Some(result.objective);
        report.grad_norm = Some(result.grad_norm);
        report.forward_solves = problem.counters().total();
        report.success = result.converged;
        if !result.converged {
            warn!("optimizer stopped before reaching tol = {:e}", config.trust_region.tol);
        }
    }
    let text = summary(&report);
    w.text("summary.csv", &text)?;
    report.files = w.files;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub gradient: Vec<GradCheckRow>,
    pub symmetry: Vec<SymmetryRow>,
}

/// Finite-difference gradient check and Hessian symmetry check at a seeded random control.
pub fn run_gradcheck(config: &ScenarioConfig, scheme: Option<StepScheme>) -> Result<GradcheckReport> {
    let sc = Scenario::build(config)?;
    let mut problem = sc.problem(scheme.unwrap_or(config.scheme))?;
    let f = random_control(&problem, config.seed, 1.0);
    let gradient = gradient_check(&mut problem, &f, config.gradcheck_directions, config.gradcheck_step, config.seed.wrapping_add(1000))?;
    let symmetry = hessian_symmetry_check(&mut problem, &f, 10, config.seed.wrapping_add(2000))?;
    Ok(GradcheckReport { gradient, symmetry })
}
