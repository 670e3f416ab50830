//! Trust-region Newton with a Steihaug truncated-CG subproblem solver,
//! an Armijo steepest-descent baseline, and a semi-implicit warm start.

use std::cell::RefCell;
use std::fmt;

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::forward::{ControlField, StepScheme};
use crate::reduced::ReducedProblem;

/// Vector-space operations needed by the optimizers. Inner products come
/// from the [`Minimizable`] problem since they may depend on a grid.
pub trait Vector: Clone {
    fn axpy(&mut self, alpha: f64, x: &Self);
    fn scale(&mut self, alpha: f64);
    fn zeros_like(&self) -> Self;
}

impl Vector for Vec<f64> {
    fn axpy(&mut self, alpha: f64, x: &Self) {
        for (a, b) in self.iter_mut().zip(x) {
            *a += alpha * b;
        }
    }

    fn scale(&mut self, alpha: f64) {
        self.iter_mut().for_each(|a| *a *= alpha);
    }

    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
}

impl Vector for ControlField {
    fn axpy(&mut self, alpha: f64, x: &Self) {
        ControlField::axpy(self, alpha, x);
    }

    fn scale(&mut self, alpha: f64) {
        ControlField::scale(self, alpha);
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.scale(0.0);
        z
    }
}

/// A smooth objective with gradient and Hessian-vector products.
pub trait Minimizable {
    type Point: Vector;

    fn objective(&mut self, x: &Self::Point) -> Result<f64>;
    fn gradient(&mut self, x: &Self::Point) -> Result<Self::Point>;
    fn hess_vec(&mut self, x: &Self::Point, d: &Self::Point) -> Result<Self::Point>;
    fn inner(&self, a: &Self::Point, b: &Self::Point) -> f64;

    /// Cumulative cost measure (PDE solves for the reduced problem).
    fn cost(&self) -> u64 {
        0
    }

    fn norm(&self, a: &Self::Point) -> f64 {
        self.inner(a, a).sqrt()
    }
}

impl Minimizable for ReducedProblem {
    type Point = ControlField;

    fn objective(&mut self, x: &ControlField) -> Result<f64> {
        self.eval_objective(x)
    }

    fn gradient(&mut self, x: &ControlField) -> Result<ControlField> {
        self.eval_gradient(x)
    }

    fn hess_vec(&mut self, x: &ControlField, d: &ControlField) -> Result<ControlField> {
        ReducedProblem::hess_vec(self, x, d)
    }

    fn inner(&self, a: &ControlField, b: &ControlField) -> f64 {
        ReducedProblem::inner(self, a, b)
    }

    fn cost(&self) -> u64 {
        self.counters().total()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepStatus {
    Interior,
    Boundary,
    NegativeCurvature,
    MaxCg,
}

impl StepStatus {
    pub fn name(&self) -> &'static str {
        match self {
            StepStatus::Interior => "interior",
            StepStatus::Boundary => "boundary",
            StepStatus::NegativeCurvature => "negative_curvature",
            StepStatus::MaxCg => "max_cg",
        }
    }

    pub fn on_boundary(&self) -> bool {
        matches!(self, StepStatus::Boundary | StepStatus::NegativeCurvature)
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct SteihaugStep<P> {
    pub step: P,
    pub status: StepStatus,
    pub cg_iterations: usize,
    /// `m(0) - m(step)`, never negative.
    pub predicted_decrease: f64,
    pub norm: f64,
}

/// Roots of `|z + t d| = delta`, smaller first.
fn boundary_roots(zz: f64, zd: f64, dd: f64, delta: f64) -> (f64, f64) {
    let c = zz - delta * delta;
    let disc = (zd * zd - dd * c).max(0.0).sqrt();
    // stable quadratic formula; c <= 0 so the roots have opposite signs
    let q = -(zd + zd.signum() * disc);
    if q == 0.0 {
        let t = (-c / dd).sqrt();
        return (-t, t);
    }
    let (a, b) = (q / dd, c / q);
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Approximately minimizes `m(s) = <g, s> + 1/2 <s, H s>` subject to `|s| <= delta`.
pub fn steihaug_cg<P, I, H>(grad: &P, inner: I, mut hess: H, delta: f64, tol_cg: f64, max_iter: usize) -> Result<SteihaugStep<P>>
where
    P: Vector,
    I: Fn(&P, &P) -> f64,
    H: FnMut(&P) -> Result<P>,
{
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("trust radius must be positive, got {delta}")));
    }
    let mut z = grad.zeros_like();
    let mut hz = grad.zeros_like();
    let mut r = grad.clone();
    let mut d = grad.clone();
    d.scale(-1.0);
    let gnorm = inner(grad, grad).sqrt();
    let mut rr = gnorm * gnorm;
    let target = tol_cg * gnorm;

    let model = |z: &P, hz: &P| inner(grad, z) + 0.5 * inner(z, hz);
    let finish = |z: P, hz: &P, status, it| {
        let m = model(&z, hz);
        let norm = inner(&z, &z).sqrt();
        SteihaugStep {
            predicted_decrease: (-m).max(0.0),
            norm,
            step: z,
            status,
            cg_iterations: it,
        }
    };

    if gnorm <= target || gnorm == 0.0 {
        return Ok(finish(z, &hz, StepStatus::Interior, 0));
    }

    for it in 1..=max_iter {
        let hd = hess(&d)?;
        let dhd = inner(&d, &hd);
        let zz = inner(&z, &z);
        let zd = inner(&z, &d);
        let dd = inner(&d, &d);
        if !(dhd > 0.0) {
            // follow d to whichever boundary point has the lower model value
            let (t1, t2) = boundary_roots(zz, zd, dd, delta);
            let slope = inner(grad, &d) + inner(&hz, &d);
            let mval = |t: f64| t * slope + 0.5 * t * t * dhd;
            let t = if mval(t1) < mval(t2) { t1 } else { t2 };
            z.axpy(t, &d);
            hz.axpy(t, &hd);
            return Ok(finish(z, &hz, StepStatus::NegativeCurvature, it));
        }
        let alpha = rr / dhd;
        let next_sq = zz + 2.0 * alpha * zd + alpha * alpha * dd;
        if next_sq.sqrt() >= delta {
            let (_, t) = boundary_roots(zz, zd, dd, delta);
            z.axpy(t, &d);
            hz.axpy(t, &hd);
            return Ok(finish(z, &hz, StepStatus::Boundary, it));
        }
        z.axpy(alpha, &d);
        hz.axpy(alpha, &hd);
        r.axpy(alpha, &hd);
        let rr_new = inner(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(finish(z, &hz, StepStatus::Interior, it));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        d.scale(beta);
        d.axpy(-1.0, &r);
    }
    Ok(finish(z, &hz, StepStatus::MaxCg, max_iter))
}

/// Outcome of one outer iteration, as written to the history log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordStatus {
    Step { status: StepStatus, accepted: bool },
    LineSearch { accepted: bool },
    Converged,
    IterationCap,
    Failed,
}

impl fmt::Display for RecordStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordStatus::Step { status, accepted: true } => write!(f, "{status}"),
            RecordStatus::Step { status, accepted: false } => write!(f, "{status}-rejected"),
            RecordStatus::LineSearch { accepted: true } => f.write_str("armijo"),
            RecordStatus::LineSearch { accepted: false } => f.write_str("armijo-failed"),
            RecordStatus::Converged => f.write_str("converged"),
            RecordStatus::IterationCap => f.write_str("iteration_cap"),
            RecordStatus::Failed => f.write_str("failed"),
        }
    }
}

/// One history row: values at the iterate entering iteration `iter`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    /// Trust radius (TRN) or accepted step length (gradient descent).
    pub delta: f64,
    pub cg_iters: usize,
    pub status: RecordStatus,
    /// Cumulative cost after this iteration.
    pub forward_solves: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrustRegionState {
    pub delta: f64,
    pub delta_max: f64,
    pub eta_accept: f64,
    pub eta_shrink: f64,
    pub eta_expand: f64,
    pub shrink_factor: f64,
    pub expand_factor: f64,
    pub tol: f64,
    pub tol_cg: f64,
    /// Use `min(0.5, sqrt(|g|))` as relative CG tolerance, floored at `tol_cg`.
    pub forcing: bool,
    pub max_iter: usize,
    pub max_cg: usize,
    pub history: Vec<IterationRecord>,
}

impl Default for TrustRegionState {
    fn default() -> Self {
        TrustRegionState {
            delta: 1.0,
            delta_max: 1e3,
            eta_accept: 0.1,
            eta_shrink: 0.25,
            eta_expand: 0.75,
            shrink_factor: 0.25,
            expand_factor: 2.0,
            tol: 1e-8,
            tol_cg: 1e-13,
            forcing: false,
            max_iter: 200,
            max_cg: 500,
            history: Vec::new(),
        }
    }
}

impl TrustRegionState {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.eta_accept
            && self.eta_accept <= self.eta_shrink
            && self.eta_shrink < self.eta_expand
            && self.eta_expand < 1.0;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "thresholds must satisfy 0 < eta_accept <= eta_shrink < eta_expand < 1, got {}, {}, {}",
                self.eta_accept, self.eta_shrink, self.eta_expand
            )));
        }
        if !(self.delta > 0.0 && self.delta <= self.delta_max) {
            return Err(Error::InvalidParameter(format!(
                "trust radius {} outside (0, {}]",
                self.delta, self.delta_max
            )));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0 && self.expand_factor > 1.0) {
            return Err(Error::InvalidParameter("shrink factor must be in (0,1), expand factor > 1".into()));
        }
        if !(self.tol > 0.0 && self.tol_cg > 0.0) || self.max_iter == 0 || self.max_cg == 0 {
            return Err(Error::InvalidParameter("tolerances and iteration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OptimizationResult<P> {
    pub solution: P,
    pub objective: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

impl<P> OptimizationResult<P> {
    /// Outer iterations that produced an accepted step.
    pub fn accepted_steps(&self) -> usize {
        self.history
            .iter()
            .filter(|r| matches!(r.status, RecordStatus::Step { accepted: true, .. } | RecordStatus::LineSearch { accepted: true }))
            .count()
    }
}

/// Whether a predicted decrease is too small to compare with an objective difference.
fn below_roundoff(pred: f64, j: f64) -> bool {
    pred <= 1e-12 * j.abs().max(f64::MIN_POSITIVE)
}

/// Trust-region Newton iteration from `f0`. The history is also appended to `state.history`.
pub fn trn_minimize<M: Minimizable>(problem: &mut M, f0: &M::Point, state: &mut TrustRegionState) -> Result<OptimizationResult<M::Point>> {
    state.validate()?;
    let mut f = f0.clone();
    let mut j = problem.objective(&f)?;
    let mut g = problem.gradient(&f)?;
    let mut gnorm = problem.norm(&g);
    let mut history = Vec::new();

    for iter in 0..=state.max_iter {
        if !(j.is_finite() && gnorm.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite objective or gradient at iteration {iter}")));
        }
        if gnorm < state.tol {
            history.push(IterationRecord {
                iter,
                j,
                grad_norm: gnorm,
                delta: state.delta,
                cg_iters: 0,
                status: RecordStatus::Converged,
                forward_solves: problem.cost(),
            });
            break;
        }
        if iter == state.max_iter {
            warn!("trust-region Newton hit the iteration cap with |g| = {gnorm:e}");
            history.push(IterationRecord {
                iter,
                j,
                grad_norm: gnorm,
                delta: state.delta,
                cg_iters: 0,
                status: RecordStatus::IterationCap,
                forward_solves: problem.cost(),
            });
            break;
        }

        let rel = if state.forcing {
            gnorm.sqrt().min(0.5).max(state.tol_cg)
        } else {
            state.tol_cg
        };
        let delta = state.delta;
        let sub = {
            let cell = RefCell::new(&mut *problem);
            let fref = &f;
            steihaug_cg(
                &g,
                |a, b| cell.borrow().inner(a, b),
                |d| cell.borrow_mut().hess_vec(fref, d),
                delta,
                rel,
                state.max_cg,
            )?
        };

        let mut trial = f.clone();
        trial.axpy(1.0, &sub.step);
        let trial_j = match problem.objective(&trial) {
            Ok(v) if v.is_finite() => Some(v),
            Ok(_) => None,
            Err(e) => {
                debug!("trial evaluation failed: {e}");
                None
            }
        };

        let pred = sub.predicted_decrease;
        let (rho, accepted, trial_g) = match trial_j {
            None => (f64::NEG_INFINITY, false, None),
            Some(tj) if below_roundoff(pred, j) => {
                // decreases are not resolvable in j; judge by the gradient instead
                let tg = problem.gradient(&trial)?;
                let tn = problem.norm(&tg);
                let ok = tn < gnorm && tj <= j + 1e-12 * j.abs();
                (if ok { 1.0 } else { 0.0 }, ok, Some((tg, tn)))
            }
            Some(tj) => {
                let rho = (j - tj) / pred;
                (rho, rho >= state.eta_accept && tj < j, None)
            }
        };

        history.push(IterationRecord {
            iter,
            j,
            grad_norm: gnorm,
            delta,
            cg_iters: sub.cg_iterations,
            status: RecordStatus::Step {
                status: sub.status,
                accepted,
            },
            forward_solves: problem.cost(),
        });
        debug!(
            "trn {iter}: j={j:e} |g|={gnorm:e} delta={delta:e} |s|={:e} rho={rho:e} cg={} {}",
            sub.norm, sub.cg_iterations, sub.status
        );

        if rho < state.eta_shrink {
            state.delta = (state.shrink_factor * sub.norm.min(delta)).max(f64::MIN_POSITIVE);
        } else if rho > state.eta_expand && sub.status.on_boundary() {
            state.delta = (state.expand_factor * delta).min(state.delta_max);
        }

        if accepted {
            f = trial;
            j = trial_j.expect("accepted steps have finite objective");
            let (ng, nn) = match trial_g {
                Some(pair) => pair,
                None => {
                    let ng = problem.gradient(&f)?;
                    let nn = problem.norm(&ng);
                    (ng, nn)
                }
            };
            g = ng;
            gnorm = nn;
        } else if state.delta < 1e-14 * problem.norm(&f).max(1.0) {
            warn!("trust radius collapsed to {:e}", state.delta);
            history.push(IterationRecord {
                iter: iter + 1,
                j,
                grad_norm: gnorm,
                delta: state.delta,
                cg_iters: 0,
                status: RecordStatus::Failed,
                forward_solves: problem.cost(),
            });
            break;
        }
    }

    let converged = matches!(history.last().map(|r| r.status), Some(RecordStatus::Converged));
    info!(
        "trust-region Newton: {} iterations, j = {j:e}, |g| = {gnorm:e}, converged = {converged}",
        history.len()
    );
    state.history.extend(history.iter().copied());
    Ok(OptimizationResult {
        solution: f,
        objective: j,
        grad_norm: gnorm,
        converged,
        history,
    })
}

/// Steepest descent with Armijo backtracking. Each search starts from twice
/// the previously accepted step length.
pub fn gradient_descent_reference<M: Minimizable>(
    problem: &mut M,
    f0: &M::Point,
    tol: f64,
    max_iter: usize,
) -> Result<OptimizationResult<M::Point>> {
    const C1: f64 = 1e-4;
    const BACKTRACK: f64 = 0.5;
    const MAX_BACKTRACKS: usize = 60;

    let mut f = f0.clone();
    let mut j = problem.objective(&f)?;
    let mut g = problem.gradient(&f)?;
    let mut gnorm = problem.norm(&g);
    let mut alpha = 1.0;
    let mut history = Vec::new();

    for iter in 0..=max_iter {
        if gnorm < tol {
            history.push(IterationRecord {
                iter,
                j,
                grad_norm: gnorm,
                delta: alpha,
                cg_iters: 0,
                status: RecordStatus::Converged,
                forward_solves: problem.cost(),
            });
            break;
        }
        if iter == max_iter {
            history.push(IterationRecord {
                iter,
                j,
                grad_norm: gnorm,
                delta: alpha,
                cg_iters: 0,
                status: RecordStatus::IterationCap,
                forward_solves: problem.cost(),
            });
            break;
        }
        let mut found = None;
        let mut t = alpha;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = f.clone();
            trial.axpy(-t, &g);
            // failed or non-finite trial evaluations just shorten the step
            match problem.objective(&trial) {
                Ok(tj) if tj.is_finite() && below_roundoff(t * gnorm * gnorm, j) => {
                    let tg = problem.gradient(&trial)?;
                    let tn = problem.norm(&tg);
                    if tn < gnorm && tj <= j + 1e-12 * j.abs() {
                        found = Some((trial, tj, Some((tg, tn))));
                        break;
                    }
                }
                Ok(tj) if tj <= j - C1 * t * gnorm * gnorm => {
                    found = Some((trial, tj, None));
                    break;
                }
                _ => {}
            }
            t *= BACKTRACK;
        }
        let accepted = found.is_some();
        history.push(IterationRecord {
            iter,
            j,
            grad_norm: gnorm,
            delta: t,
            cg_iters: 0,
            status: RecordStatus::LineSearch { accepted },
            forward_solves: problem.cost(),
        });
        match found {
            Some((trial, tj, known)) => {
                f = trial;
                j = tj;
                (g, gnorm) = match known {
                    Some(pair) => pair,
                    None => {
                        let ng = problem.gradient(&f)?;
                        let nn = problem.norm(&ng);
                        (ng, nn)
                    }
                };
                alpha = 2.0 * t;
            }
            None => {
                warn!("Armijo backtracking failed at |g| = {gnorm:e}");
                break;
            }
        }
    }
    let converged = matches!(history.last().map(|r| r.status), Some(RecordStatus::Converged));
    Ok(OptimizationResult {
        solution: f,
        objective: j,
        grad_norm: gnorm,
        converged,
        history,
    })
}

/// Loose tolerance for the semi-implicit initialization phase.
pub const WARM_START_TOL: f64 = 1e-3;

/// Runs TRN on the semi-implicit version of `problem` to [`WARM_START_TOL`]
/// and returns its minimizer. Solve counts are charged to `problem`.
pub fn warm_start(problem: &mut ReducedProblem, f0: &ControlField, settings: &TrustRegionState) -> ControlField {
    let mut semi = problem.with_scheme(StepScheme::SemiImplicit);
    let mut state = settings.clone();
    state.tol = WARM_START_TOL;
    state.history.clear();
    let out = trn_minimize(&mut semi, f0, &mut state);
    problem.add_counters(semi.counters());
    match out {
        Ok(r) => r.solution,
        Err(e) => {
            warn!("warm start failed, using the initial control: {e}");
            f0.clone()
        }
    }
}
