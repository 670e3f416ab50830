//! Discrete adjoints of the forward schemes and the linearized sweeps used
//! for Hessian-vector products.
//!
//! The adjoint is derived from the Lagrangian of the fully discrete problem
//! (objective with the right-endpoint rule, one constraint per time step),
//! so the resulting gradient is the exact derivative of the discrete
//! objective. Multipliers `p_m` are paired with the controls `f_m`,
//! `m = 1..M`; the terminal datum `nu_T (c_M - c_T) / eps` acts as `p_{M+1}`.
//!
//! Implicit scheme, with `J_m = eps/tau - eps Laplacian + (1/eps) P D^2 Psi(c_m) P`:
//!
//! ```text
//! J_m p_m = nu_d P (c_m - c_d,m) + (eps/tau) p_{m+1}
//! ```
//!
//! Semi-implicit scheme, with `A = eps/tau - eps Laplacian`:
//!
//! ```text
//! A p_m = nu_d P (c_m - c_d,m) + (eps/tau) p_{m+1} - (1/eps) P (D^2 Psi(c_m) p_{m+1})   (m < M)
//! A p_M = nu_d P (c_M - c_d,M) + (eps/tau) p_{M+1}
//! ```

use crate::error::{Error, Result};
use crate::forward::{AllenCahn, ControlField, PhaseTrajectory, StepScheme};
use crate::grid::Field;

/// Objective weights `nu_T`, `nu_d`, `nu_f`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    pub nu_t: f64,
    pub nu_d: f64,
    pub nu_f: f64,
}

impl Weights {
    pub fn new(nu_t: f64, nu_d: f64, nu_f: f64) -> Result<Self> {
        for (name, v) in [("nu_T", nu_t), ("nu_d", nu_d), ("nu_f", nu_f)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be a finite nonnegative weight, got {v}")));
            }
        }
        Ok(Weights { nu_t, nu_d, nu_f })
    }
}

/// Desired evolution `c_d` at `t_1..t_M`.
#[derive(Clone, Debug, PartialEq)]
pub enum DesiredState {
    Constant(Field),
    PerStep(Vec<Field>),
}

impl DesiredState {
    /// Desired state at step `m` (1-based).
    pub fn at(&self, m: usize) -> &Field {
        match self {
            DesiredState::Constant(f) => f,
            DesiredState::PerStep(v) => &v[m - 1],
        }
    }
}

/// Terminal target `c_T` and desired evolution `c_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub terminal: Field,
    pub desired: DesiredState,
}

#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    multipliers: Vec<Field>,
    terminal: Field,
}

impl AdjointTrajectory {
    /// Multiplier paired with step `m` (1-based).
    pub fn at(&self, m: usize) -> &Field {
        &self.multipliers[m - 1]
    }

    pub fn steps(&self) -> &[Field] {
        &self.multipliers
    }

    /// `nu_T (c_M - c_T) / eps`, the datum at `t_M`.
    pub fn terminal(&self) -> &Field {
        &self.terminal
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    /// The multipliers as a control-shaped field (used by the gradient).
    pub fn as_control(&self, traj: &PhaseTrajectory) -> ControlField {
        ControlField::from_steps(traj.time, self.multipliers.clone()).expect("adjoint has one field per step")
    }
}

/// Which adjoint recursion to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointMode {
    /// Exact discrete adjoint of the scheme that produced the trajectory.
    Consistent,
    /// Always use the implicit-scheme recursion, whatever the trajectory's scheme.
    /// Applied to semi-implicit trajectories this gives an inconsistent gradient.
    ImplicitFormulas,
}

fn check_trajectory(model: &AllenCahn, traj: &PhaseTrajectory) -> Result<()> {
    if !traj.is_uniform() {
        return Err(Error::TrajectoryMismatch(
            "trajectory contains bisected steps; its discrete adjoint is not the nominal scheme's".into(),
        ));
    }
    if traj.grid != model.grid || traj.epsilon != model.epsilon {
        return Err(Error::TrajectoryMismatch("trajectory was produced on a different grid or epsilon".into()));
    }
    if traj.final_state().ncomp() != model.ncomp() {
        return Err(Error::TrajectoryMismatch("trajectory and potential disagree on components".into()));
    }
    Ok(())
}

fn check_targets(traj: &PhaseTrajectory, targets: &Targets) -> Result<()> {
    traj.final_state().check_shape(&targets.terminal)?;
    match &targets.desired {
        DesiredState::Constant(f) => traj.final_state().check_shape(f),
        DesiredState::PerStep(v) => {
            if v.len() != traj.steps() {
                return Err(Error::DimensionMismatch {
                    expected: traj.steps(),
                    found: v.len(),
                });
            }
            v.iter().try_for_each(|f| traj.final_state().check_shape(f))
        }
    }
}

fn effective_scheme(traj: &PhaseTrajectory, mode: AdjointMode) -> StepScheme {
    match mode {
        AdjointMode::Consistent => traj.scheme,
        AdjointMode::ImplicitFormulas => StepScheme::Implicit,
    }
}

/// `a * x * y` elementwise, accumulated into `out`.
fn add_product(out: &mut Field, a: f64, x: &Field, y: &Field) {
    for ((o, &xv), &yv) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
        *o += a * xv * yv;
    }
}

fn add_triple(out: &mut Field, a: f64, x: &Field, y: &Field, z: &Field) {
    for (((o, &xv), &yv), &zv) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()).zip(z.data()) {
        *o += a * xv * yv * zv;
    }
}

/// Backward recursion for the adjoint state.
pub fn solve_adjoint(model: &AllenCahn, traj: &PhaseTrajectory, targets: &Targets, weights: Weights) -> Result<AdjointTrajectory> {
    solve_adjoint_with(model, traj, targets, weights, AdjointMode::Consistent)
}

pub fn solve_adjoint_with(
    model: &AllenCahn,
    traj: &PhaseTrajectory,
    targets: &Targets,
    weights: Weights,
    mode: AdjointMode,
) -> Result<AdjointTrajectory> {
    check_trajectory(model, traj)?;
    check_targets(traj, targets)?;
    let scheme = effective_scheme(traj, mode);
    let grid = &model.grid;
    let eps = model.epsilon;
    let tau = traj.time.tau();
    let steps = traj.steps();
    let ncomp = model.ncomp();
    let rtol = model.options.linear_rtol;
    let max_iter = model.options.cg_max_iter;

    let mut terminal = Field::difference(traj.final_state(), &targets.terminal);
    terminal.scale(weights.nu_t / eps);
    model.potential.project(&mut terminal);

    let mut multipliers = vec![Field::zeros(grid, ncomp); steps];
    let mut next = terminal.clone();
    for m in (1..=steps).rev() {
        let c = traj.state(m);
        let mut rhs = next.clone();
        rhs.scale(eps / tau);
        if weights.nu_d != 0.0 {
            let diff = Field::difference(c, targets.desired.at(m));
            rhs.axpy(weights.nu_d, &diff);
        }
        let hess = model.hessian_diag(c);
        if scheme == StepScheme::SemiImplicit && m < steps {
            add_product(&mut rhs, -1.0 / eps, &hess, &next);
        }
        model.potential.project(&mut rhs);
        let mut p = next.clone();
        let op = match scheme {
            StepScheme::Implicit => model.operator(tau, Some(&hess)),
            StepScheme::SemiImplicit => model.operator(tau, None),
        };
        op.solve(&rhs, &mut p, rtol, max_iter)
            .map_err(|e| e.with_context(format!("adjoint step {m}")))?;
        model.potential.project(&mut p);
        multipliers[m - 1] = p.clone();
        next = p;
    }
    Ok(AdjointTrajectory { multipliers, terminal })
}

/// Response `delta c_1..delta c_M` of the discrete state to a control direction
/// (`delta c_0 = 0`). Index `m - 1` holds step `m`.
pub fn linearized_forward(model: &AllenCahn, traj: &PhaseTrajectory, direction: &ControlField) -> Result<Vec<Field>> {
    check_trajectory(model, traj)?;
    if direction.len() != traj.steps() {
        return Err(Error::DimensionMismatch {
            expected: traj.steps(),
            found: direction.len(),
        });
    }
    let grid = &model.grid;
    let eps = model.epsilon;
    let tau = traj.time.tau();
    let ncomp = model.ncomp();
    let mut out: Vec<Field> = Vec::with_capacity(traj.steps());
    let mut prev = Field::zeros(grid, ncomp);
    for m in 1..=traj.steps() {
        let mut rhs = prev.clone();
        rhs.scale(eps / tau);
        rhs.axpy(1.0, direction.at(m));
        if traj.scheme == StepScheme::SemiImplicit {
            let h_prev = model.hessian_diag(traj.state(m - 1));
            add_product(&mut rhs, -1.0 / eps, &h_prev, &prev);
        }
        model.potential.project(&mut rhs);
        let mut dc = prev.clone();
        match traj.scheme {
            StepScheme::Implicit => {
                let hess = model.hessian_diag(traj.state(m));
                model
                    .operator(tau, Some(&hess))
                    .solve(&rhs, &mut dc, model.options.linear_rtol, model.options.cg_max_iter)
            }
            StepScheme::SemiImplicit => model.operator(tau, None).solve(
                &rhs,
                &mut dc,
                model.options.linear_rtol,
                model.options.cg_max_iter,
            ),
        }
        .map_err(|e| e.with_context(format!("linearized forward step {m}")))?;
        model.potential.project(&mut dc);
        out.push(dc.clone());
        prev = dc;
    }
    Ok(out)
}

/// Second-order adjoint `delta p` for the state response `dc` (from
/// [`linearized_forward`]) and adjoint `p` at the same control.
///
/// The `nu_d` source is included only when `track_desired` is set; without it
/// the result is the Hessian derived for `nu_d = 0`.
pub fn linearized_backward(
    model: &AllenCahn,
    traj: &PhaseTrajectory,
    adjoint: &AdjointTrajectory,
    dc: &[Field],
    weights: Weights,
    track_desired: bool,
) -> Result<Vec<Field>> {
    check_trajectory(model, traj)?;
    let steps = traj.steps();
    if dc.len() != steps || adjoint.len() != steps {
        return Err(Error::TrajectoryMismatch(format!(
            "expected {steps} steps, got linearized state {} and adjoint {}",
            dc.len(),
            adjoint.len()
        )));
    }
    let grid = &model.grid;
    let eps = model.epsilon;
    let tau = traj.time.tau();
    let ncomp = model.ncomp();

    let mut next = dc[steps - 1].clone();
    next.scale(weights.nu_t / eps);
    model.potential.project(&mut next);

    let mut out = vec![Field::zeros(grid, ncomp); steps];
    for m in (1..=steps).rev() {
        let c = traj.state(m);
        let dcm = &dc[m - 1];
        let mut rhs = next.clone();
        rhs.scale(eps / tau);
        if track_desired && weights.nu_d != 0.0 {
            rhs.axpy(weights.nu_d, dcm);
        }
        let third = model.third_diag(c);
        let hess = model.hessian_diag(c);
        match traj.scheme {
            StepScheme::Implicit => {
                add_triple(&mut rhs, -1.0 / eps, &third, dcm, adjoint.at(m));
            }
            StepScheme::SemiImplicit => {
                if m < steps {
                    add_product(&mut rhs, -1.0 / eps, &hess, &next);
                    add_triple(&mut rhs, -1.0 / eps, &third, dcm, adjoint.at(m + 1));
                }
            }
        }
        model.potential.project(&mut rhs);
        let mut dp = next.clone();
        let op = match traj.scheme {
            StepScheme::Implicit => model.operator(tau, Some(&hess)),
            StepScheme::SemiImplicit => model.operator(tau, None),
        };
        op.solve(&rhs, &mut dp, model.options.linear_rtol, model.options.cg_max_iter)
            .map_err(|e| e.with_context(format!("linearized backward step {m}")))?;
        model.potential.project(&mut dp);
        out[m - 1] = dp.clone();
        next = dp;
    }
    Ok(out)
}
