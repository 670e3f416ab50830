//! Penalization homotopy for the obstacle potential.
//!
//! Each stage minimizes the reduced functional with the regularized
//! potential `Psi_sigma` and recovers the multiplier estimates
//! `xi = -D psi_sigma(c)` and `zeta = -D^2 psi_sigma(c) p`. The relaxed
//! complementarity `|(xi, c)| / eps <= alpha` drives the schedule. Every
//! stage after the first uses the next `sigma`; a stage that meets the
//! current `alpha` moves the target one level down. The homotopy stops once
//! the last `alpha` level is met or the `sigma` schedule runs out.

use log::{info, warn};

use crate::adjoint::AdjointTrajectory;
use crate::error::{Error, Result};
use crate::forward::{ControlField, PhaseTrajectory};
use crate::grid::{dot, Field, SpatialGrid, TimeGrid};
use crate::potentials::{penalty, Potential};
use crate::reduced::ReducedProblem;
use crate::trn::{trn_minimize, IterationRecord, TrustRegionState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomotopySchedule {
    pub sigma_0: f64,
    pub sigma_factor: f64,
    /// Smallest admissible penalization parameter.
    pub sigma_min: f64,
    pub alpha_0: f64,
    pub alpha_factor: f64,
    pub alpha_min: f64,
}

impl Default for HomotopySchedule {
    fn default() -> Self {
        HomotopySchedule {
            sigma_0: 0.1,
            sigma_factor: 0.1,
            sigma_min: 1e-10,
            alpha_0: 1.0,
            alpha_factor: 0.1,
            alpha_min: 1e-9,
        }
    }
}

impl HomotopySchedule {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !(self.sigma_0 > 0.0 && self.sigma_0 < 0.25) {
            return Err(Error::InvalidParameter(format!("sigma_0 must lie in (0, 1/4), got {}", self.sigma_0)));
        }
        if !unit(self.sigma_factor) || !unit(self.alpha_factor) {
            return Err(Error::InvalidParameter("schedule factors must lie in (0, 1)".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_0) {
            return Err(Error::InvalidParameter("sigma_min must lie in (0, sigma_0]".into()));
        }
        if !(self.alpha_0 > 0.0 && self.alpha_min > 0.0 && self.alpha_min <= self.alpha_0) {
            return Err(Error::InvalidParameter("alpha schedule must satisfy 0 < alpha_min <= alpha_0".into()));
        }
        Ok(())
    }

    /// `alpha_0, alpha_0 * factor, ...` down to `alpha_min` (inclusive up to round-off).
    pub fn alphas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut a = self.alpha_0;
        while a >= self.alpha_min * (1.0 - 1e-9) {
            out.push(a);
            a *= self.alpha_factor;
        }
        out
    }

    /// `sigma_0, sigma_0 * factor, ...` while above `sigma_min` (inclusive up to round-off).
    pub fn sigmas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut s = self.sigma_0;
        while s >= self.sigma_min * (1.0 - 1e-9) {
            out.push(s);
            s *= self.sigma_factor;
        }
        out
    }
}

/// Multiplier estimates for steps `m = 1..M` (index `m - 1`).
#[derive(Clone, Debug)]
pub struct MultiplierFields {
    pub xi: Vec<Field>,
    pub zeta: Vec<Field>,
}

/// `xi_m = -psi'_sigma(c_m)` and `zeta_m = -psi''_sigma(c_m) p_m` componentwise.
pub fn recover_multipliers(sigma: f64, traj: &PhaseTrajectory, adjoint: &AdjointTrajectory) -> Result<MultiplierFields> {
    if adjoint.len() != traj.steps() {
        return Err(Error::TrajectoryMismatch(format!(
            "adjoint has {} steps, state has {}",
            adjoint.len(),
            traj.steps()
        )));
    }
    let mut xi = Vec::with_capacity(traj.steps());
    let mut zeta = Vec::with_capacity(traj.steps());
    for m in 1..=traj.steps() {
        let c = traj.state(m);
        let p = adjoint.at(m);
        let mut x = c.clone();
        let mut z = p.clone();
        for ((xv, zv), &cv) in x.data_mut().iter_mut().zip(z.data_mut()).zip(c.data()) {
            let d = penalty(sigma, cv);
            *xv = -d[1];
            *zv *= -d[2];
        }
        xi.push(x);
        zeta.push(z);
    }
    Ok(MultiplierFields { xi, zeta })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplementarityReport {
    pub min_c: f64,
    pub min_xi: f64,
    /// `(xi, c)` in `L2(Omega_T)`.
    pub pairing: f64,
    /// `|max(0, -c)|` in `L2(Omega_T)`.
    pub negativity: f64,
}

/// Right-endpoint rule `tau * sum_{m=1..M} term(m)`.
fn space_time(time: &TimeGrid, term: impl FnMut(usize) -> f64) -> f64 {
    (1..=time.steps).map(term).sum::<f64>() * time.tau()
}

/// Sign and pairing diagnostics for `c >= 0, xi >= 0, (xi, c) = 0`.
/// `c` and `xi` hold the steps `m = 1..M`.
pub fn complementarity_report(c: &[Field], xi: &[Field], grid: &SpatialGrid, time: &TimeGrid) -> Result<ComplementarityReport> {
    if c.len() != xi.len() || c.len() != time.steps {
        return Err(Error::TrajectoryMismatch(format!(
            "expected {} steps, got c: {}, xi: {}",
            time.steps,
            c.len(),
            xi.len()
        )));
    }
    for (a, b) in c.iter().zip(xi) {
        a.check_shape(b)?;
        a.check_grid(grid)?;
    }
    let min_c = c.iter().map(Field::min_value).fold(f64::INFINITY, f64::min);
    let min_xi = xi.iter().map(Field::min_value).fold(f64::INFINITY, f64::min);
    let pairing = space_time(time, |m| dot(&xi[m - 1], &c[m - 1], grid));
    let neg_sq = space_time(time, |m| {
        let mut n = c[m - 1].clone();
        n.data_mut().iter_mut().for_each(|v| *v = (-*v).max(0.0));
        dot(&n, &n, grid)
    });
    Ok(ComplementarityReport {
        min_c,
        min_xi,
        pairing,
        negativity: neg_sq.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationarityDiagnostics {
    pub zeta_p: f64,
    pub zeta_c_plus: f64,
    pub p_xi: f64,
}

/// `(zeta, p)`, `(zeta, max(0, c))` and `(p, xi)` in `L2(Omega_T)`.
pub fn stationarity_diagnostics(
    c: &[Field],
    p: &[Field],
    mult: &MultiplierFields,
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<StationarityDiagnostics> {
    let n = time.steps;
    if c.len() != n || p.len() != n || mult.xi.len() != n || mult.zeta.len() != n {
        return Err(Error::TrajectoryMismatch("stationarity inputs must all have M steps".into()));
    }
    let zeta_p = space_time(time, |m| dot(&mult.zeta[m - 1], &p[m - 1], grid));
    let zeta_c_plus = space_time(time, |m| {
        let mut cp = c[m - 1].clone();
        cp.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        dot(&mult.zeta[m - 1], &cp, grid)
    });
    let p_xi = space_time(time, |m| dot(&p[m - 1], &mult.xi[m - 1], grid));
    Ok(StationarityDiagnostics {
        zeta_p,
        zeta_c_plus,
        p_xi,
    })
}

#[derive(Clone, Debug)]
pub struct StageRecord {
    pub stage: usize,
    pub sigma: f64,
    /// Smallest scheduled `alpha` satisfied so far, if any.
    pub alpha: Option<f64>,
    /// `|(xi, c)| / eps`.
    pub residual: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub trn_iterations: usize,
    pub complementarity: ComplementarityReport,
    pub stationarity: StationarityDiagnostics,
    /// `1/2 |xi|^2` in `L2(Omega_T)`.
    pub xi_energy: f64,
    /// `max |sum_i c_i - 1|` over all nodes and steps.
    pub simplex_error: f64,
    pub forward_solves: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HomotopyOutcome {
    /// The smallest scheduled `alpha` was met.
    TargetMet,
    /// The sigma floor was reached first.
    SigmaFloor,
    /// A stage failed; results are from the last successful stage.
    StageFailed,
}

#[derive(Clone, Debug)]
pub struct MpecSolution {
    pub control: ControlField,
    pub trajectory: PhaseTrajectory,
    pub adjoint: AdjointTrajectory,
    pub multipliers: MultiplierFields,
    pub stages: Vec<StageRecord>,
    pub outcome: HomotopyOutcome,
    /// Concatenated optimizer histories of all stages.
    pub history: Vec<IterationRecord>,
    pub failure: Option<String>,
}

impl MpecSolution {
    pub fn final_sigma(&self) -> f64 {
        self.stages.last().map_or(f64::NAN, |s| s.sigma)
    }
}

struct StageResult {
    record: StageRecord,
    control: ControlField,
    trajectory: PhaseTrajectory,
    adjoint: AdjointTrajectory,
    multipliers: MultiplierFields,
}

fn run_stage(
    problem: &mut ReducedProblem,
    sigma: f64,
    f0: &ControlField,
    settings: &TrustRegionState,
    stage: usize,
    history: &mut Vec<IterationRecord>,
) -> Result<StageResult> {
    let phases = problem.model.ncomp();
    problem.set_potential(Potential::obstacle(sigma, phases)?)?;
    let mut state = settings.clone();
    state.history.clear();
    let opt = trn_minimize(problem, f0, &mut state)?;
    history.extend(opt.history.iter().copied());
    if !opt.converged {
        warn!("homotopy stage {stage} (sigma = {sigma:e}) stopped at |g| = {:e}", opt.grad_norm);
    }
    let f = opt.solution;
    let objective = problem.eval_objective(&f)?;
    let trajectory = problem.state(&f)?.clone();
    let adjoint = problem.adjoint(&f)?.clone();
    let multipliers = recover_multipliers(sigma, &trajectory, &adjoint)?;
    let grid = problem.model.grid.clone();
    let time = problem.time;
    let states = &trajectory.states()[1..];
    let complementarity = complementarity_report(states, &multipliers.xi, &grid, &time)?;
    let stationarity = stationarity_diagnostics(states, adjoint.steps(), &multipliers, &grid, &time)?;
    let xi_energy = 0.5 * space_time(&time, |m| dot(&multipliers.xi[m - 1], &multipliers.xi[m - 1], &grid));
    let simplex_error = trajectory
        .states()
        .iter()
        .flat_map(|c| {
            (0..c.nodes()).map(move |k| ((0..c.ncomp()).map(|i| c.get(i, k)).sum::<f64>() - 1.0).abs())
        })
        .fold(0.0, f64::max);
    let record = StageRecord {
        stage,
        sigma,
        alpha: None,
        residual: complementarity.pairing.abs() / problem.model.epsilon,
        objective,
        grad_norm: opt.grad_norm,
        converged: opt.converged,
        trn_iterations: opt.history.len(),
        complementarity,
        stationarity,
        xi_energy,
        simplex_error,
        forward_solves: problem.counters().total(),
    };
    Ok(StageResult {
        record,
        control: f,
        trajectory,
        adjoint,
        multipliers,
    })
}

/// Runs the sigma/alpha homotopy from `f0`. The problem's potential is
/// replaced stage by stage; it must be a vector (obstacle) problem.
pub fn solve_mpec(
    problem: &mut ReducedProblem,
    f0: &ControlField,
    schedule: &HomotopySchedule,
    settings: &TrustRegionState,
) -> Result<MpecSolution> {
    schedule.validate()?;
    if !problem.model.potential.is_vector() {
        return Err(Error::InvalidParameter("the homotopy needs an obstacle (vector) problem".into()));
    }
    let alphas = schedule.alphas();
    let sigmas = schedule.sigmas();
    let mut next_alpha = 0;
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<StageResult> = None;
    let mut f = f0.clone();
    let mut outcome = HomotopyOutcome::SigmaFloor;
    let mut failure = None;

    for (k, &sigma) in sigmas.iter().enumerate() {
        let mut res = match run_stage(problem, sigma, &f, settings, k, &mut history) {
            Ok(r) => r,
            Err(e) => {
                let e = e.with_context(format!("homotopy stage {k} (sigma = {sigma:e})"));
                if best.is_none() {
                    return Err(e);
                }
                warn!("{e}; keeping the previous stage");
                failure = Some(e.to_string());
                outcome = HomotopyOutcome::StageFailed;
                break;
            }
        };
        // one alpha level per stage, so each level gets its own sigma stage
        if next_alpha < alphas.len() && res.record.residual <= alphas[next_alpha] {
            next_alpha += 1;
        }
        res.record.alpha = next_alpha.checked_sub(1).map(|i| alphas[i]);
        info!(
            "stage {k}: sigma={sigma:e} residual={:e} J={:e} alpha={:?}",
            res.record.residual, res.record.objective, res.record.alpha
        );
        stages.push(res.record.clone());
        f = res.control.clone();
        best = Some(res);
        if next_alpha == alphas.len() {
            outcome = HomotopyOutcome::TargetMet;
            break;
        }
    }
    if outcome == HomotopyOutcome::SigmaFloor {
        warn!("complementarity target not reached before the sigma floor {:e}", schedule.sigma_min);
    }
    let best = best.expect("at least one stage ran");
    Ok(MpecSolution {
        control: best.control,
        trajectory: best.trajectory,
        adjoint: best.adjoint,
        multipliers: best.multipliers,
        stages,
        outcome,
        history,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{DesiredState, Targets, Weights};
    use crate::forward::{AllenCahn, StepScheme};
    use proptest::prelude::*;

    fn grid() -> SpatialGrid {
        SpatialGrid::square(0.0, 1.0, 6).unwrap()
    }

    #[test]
    fn schedules() {
        let s = HomotopySchedule::default();
        s.validate().unwrap();
        let a = s.alphas();
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], 1.0);
        assert!((a[9] / 1e-9 - 1.0).abs() < 1e-9);
        assert!(a.windows(2).all(|w| w[1] < w[0]));
        let sg = s.sigmas();
        assert_eq!(sg.len(), a.len());
        assert!(sg.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        let bad = HomotopySchedule {
            sigma_factor: 1.0,
            ..s
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn vertex_equilibrium_report() {
        let g = grid();
        let time = TimeGrid::new(1e-3, 2).unwrap();
        let c = vec![Field::uniform(&g, &[1.0, 0.0, 0.0]); 2];
        let xi = vec![Field::uniform(&g, &[0.0, 1.0, 1.0]); 2];
        let r = complementarity_report(&c, &xi, &g, &time).unwrap();
        assert_eq!((r.min_c, r.min_xi, r.pairing, r.negativity), (0.0, 0.0, 0.0, 0.0));
        // P(c + xi) = 0: c + xi is a multiple of the ones vector
        let s: Vec<f64> = [1.0, 0.0, 0.0].iter().zip([0.0, 1.0, 1.0]).map(|(a, b)| a + b).collect();
        assert!(s.iter().all(|v| *v == s[0]));
    }

    #[test]
    fn negativity_is_quadrature_of_violation() {
        let g = grid();
        let time = TimeGrid::new(1e-3, 2).unwrap();
        let mut c1 = Field::uniform(&g, &[0.5, 0.5]);
        let node = g.index(2, 3);
        c1.set_node(node, &[-0.1, 1.1]);
        let c = vec![Field::uniform(&g, &[0.5, 0.5]), c1];
        let xi = vec![Field::zeros(&g, 2); 2];
        let r = complementarity_report(&c, &xi, &g, &time).unwrap();
        let want = (time.tau() * g.weights()[node] * 0.01).sqrt();
        assert!((r.negativity - want).abs() < 1e-15 * want);
        assert_eq!(r.pairing, 0.0);
        assert_eq!(r.min_c, -0.1);
    }

    #[test]
    fn stationarity_vanishes_for_zero_adjoint_and_interior_states() {
        let g = grid();
        let time = TimeGrid::new(1e-3, 2).unwrap();
        let c = vec![Field::uniform(&g, &[0.2, 0.3, 0.5]); 2];
        let p0 = vec![Field::zeros(&g, 3); 2];
        let mult = MultiplierFields {
            xi: vec![Field::uniform(&g, &[0.0, 0.4, 0.0]); 2],
            zeta: vec![Field::zeros(&g, 3); 2],
        };
        let d = stationarity_diagnostics(&c, &p0, &mult, &g, &time).unwrap();
        assert_eq!((d.zeta_p, d.zeta_c_plus, d.p_xi), (0.0, 0.0, 0.0));
    }

    fn barycenter_problem() -> ReducedProblem {
        let g = grid();
        let model = AllenCahn::new(g.clone(), 0.1, Potential::obstacle(0.1, 3).unwrap()).unwrap();
        let c0 = Field::uniform(&g, &[1.0 / 3.0; 3]);
        let targets = Targets {
            terminal: c0.clone(),
            desired: DesiredState::Constant(c0.clone()),
        };
        let time = TimeGrid::new(3e-4, 3).unwrap();
        ReducedProblem::new(model, c0, targets, Weights::new(1.0, 1.0, 1e-3).unwrap(), time, StepScheme::Implicit).unwrap()
    }

    #[test]
    fn barycenter_is_optimal_with_inactive_penalty() {
        let mut p = barycenter_problem();
        let f0 = p.zero_control();
        // three alpha levels need three sigma stages: one level per stage
        let sched = HomotopySchedule {
            sigma_min: 1e-3,
            alpha_min: 1e-2,
            ..Default::default()
        };
        let sol = solve_mpec(&mut p, &f0, &sched, &TrustRegionState::default()).unwrap();
        assert!(sol.control.max_abs() < 1e-12);
        assert_eq!(sol.outcome, HomotopyOutcome::TargetMet);
        assert_eq!(sol.stages.len(), 3);
        assert!((sol.stages[2].alpha.unwrap() / 1e-2 - 1.0).abs() < 1e-12);
        for s in &sol.stages {
            assert_eq!(s.complementarity.pairing, 0.0);
            assert!(s.simplex_error < 1e-14);
        }
        assert!(sol.multipliers.xi.iter().all(|x| x.max_abs() == 0.0));
    }

    #[test]
    fn scalar_problem_is_rejected() {
        let g = grid();
        let model = AllenCahn::new(g.clone(), 0.1, Potential::DoubleWell).unwrap();
        let c0 = Field::zeros(&g, 1);
        let targets = Targets {
            terminal: c0.clone(),
            desired: DesiredState::Constant(c0.clone()),
        };
        let time = TimeGrid::new(1e-3, 2).unwrap();
        let mut p = ReducedProblem::new(model, c0, targets, Weights::new(1.0, 0.0, 1e-2).unwrap(), time, StepScheme::Implicit).unwrap();
        let f0 = p.zero_control();
        assert!(solve_mpec(&mut p, &f0, &HomotopySchedule::default(), &TrustRegionState::default()).is_err());
    }

    proptest! {
        #[test]
        fn xi_nonnegative_and_supported_on_negative_part(vals in proptest::collection::vec(-0.5f64..1.0, 3), sigma in 1e-4f64..0.2) {
            for &c in &vals {
                let xi = -penalty(sigma, c)[1];
                prop_assert!(xi >= -1e-12);
                if c >= 0.0 {
                    prop_assert_eq!(xi, 0.0);
                }
            }
        }
    }
}
