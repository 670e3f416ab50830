//! Time stepping for the controlled Allen-Cahn equation
//!
//! ```text
//! eps dc/dt - eps Laplacian c + (1/eps) P D Psi(c) = f,   grad c . n = 0,
//! ```
//!
//! where `P` is the identity for the scalar double well and the projection
//! onto the simplex tangent space for vector (obstacle) models.

use log::warn;

use crate::error::{Error, Result};
use crate::grid::{dot, laplacian_into, Field, SpatialGrid, TimeGrid};
use crate::krylov::{cg_solve, CgOptions, CgOutcome};
use crate::potentials::Potential;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepScheme {
    /// Potential and Laplacian both implicit (Newton per step).
    Implicit,
    /// Laplacian implicit, potential derivative lagged (one SPD solve per step).
    SemiImplicit,
}

impl StepScheme {
    pub fn name(&self) -> &'static str {
        match self {
            StepScheme::Implicit => "implicit",
            StepScheme::SemiImplicit => "semi",
        }
    }
}

impl std::str::FromStr for StepScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "implicit" => Ok(StepScheme::Implicit),
            "semi" | "semi-implicit" | "semi_implicit" => Ok(StepScheme::SemiImplicit),
            other => Err(Error::InvalidParameter(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Max-norm tolerance on the implicit step residual.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative tolerance of the cg solves inside Newton.
    pub newton_cg_rtol: f64,
    /// Relative tolerance of all linear (semi-implicit, adjoint, linearized) solves.
    pub linear_rtol: f64,
    pub cg_max_iter: usize,
    /// How many times a failing implicit step may be bisected.
    pub max_bisections: u32,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            newton_tol: 1e-12,
            newton_max_iter: 50,
            newton_cg_rtol: 1e-10,
            linear_rtol: 1e-12,
            cg_max_iter: 20_000,
            max_bisections: 6,
        }
    }
}

/// Phase-field dynamics on a fixed grid: `eps`, the potential and solver knobs.
#[derive(Clone, Debug)]
pub struct AllenCahn {
    pub grid: SpatialGrid,
    pub epsilon: f64,
    pub potential: Potential,
    pub options: SolverOptions,
}

/// Frozen-coefficient step operator
/// `v -> (eps/tau) v - eps Laplacian v + (1/eps) P (h * P v)` on the tangent
/// space, and `(eps/tau) v` on the normal direction of vector fields.
/// With `hess == None` the potential term is dropped (semi-implicit operator).
pub(crate) struct StepOperator<'a> {
    pub grid: &'a SpatialGrid,
    pub eps: f64,
    pub tau: f64,
    pub hess: Option<&'a Field>,
    pub vector: bool,
}

impl StepOperator<'_> {
    pub fn apply(&self, v: &Field, out: &mut Field) {
        let mass = self.eps / self.tau;
        let inv_eps = 1.0 / self.eps;
        if self.vector {
            // Inputs are in the tangent space up to round-off; keep them there.
            let mut pv = v.clone();
            crate::potentials::project_field(&mut pv);
            laplacian_into(&pv, self.grid, out);
            match self.hess {
                Some(h) => {
                    for ((o, &x), &hx) in out.data_mut().iter_mut().zip(pv.data()).zip(h.data()) {
                        *o = mass * x - self.eps * *o + inv_eps * hx * x;
                    }
                }
                None => {
                    for (o, &x) in out.data_mut().iter_mut().zip(pv.data()) {
                        *o = mass * x - self.eps * *o;
                    }
                }
            }
            crate::potentials::project_field(out);
            // Act as the mass term on the normal direction so the operator is
            // definite on the whole space; round-off there is then damped
            // instead of accumulating in the null space of P.
            for ((o, &x), &px) in out.data_mut().iter_mut().zip(v.data()).zip(pv.data()) {
                *o += mass * (x - px);
            }
        } else {
            laplacian_into(v, self.grid, out);
            match self.hess {
                Some(h) => {
                    for ((o, &x), &hx) in out.data_mut().iter_mut().zip(v.data()).zip(h.data()) {
                        *o = mass * x - self.eps * *o + inv_eps * hx * x;
                    }
                }
                None => {
                    for (o, &x) in out.data_mut().iter_mut().zip(v.data()) {
                        *o = mass * x - self.eps * *o;
                    }
                }
            }
        }
    }

    pub fn solve(&self, rhs: &Field, x: &mut Field, rtol: f64, max_iter: usize) -> Result<CgOutcome> {
        let opts = CgOptions {
            rtol,
            atol: 1e-300,
            max_iter,
        };
        cg_solve(self.grid, |v, o| self.apply(v, o), rhs, x, opts)
    }
}

impl AllenCahn {
    pub fn new(grid: SpatialGrid, epsilon: f64, potential: Potential) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(AllenCahn {
            grid,
            epsilon,
            potential,
            options: SolverOptions::default(),
        })
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn ncomp(&self) -> usize {
        self.potential.ncomp()
    }

    pub(crate) fn operator<'a>(&'a self, tau: f64, hess: Option<&'a Field>) -> StepOperator<'a> {
        StepOperator {
            grid: &self.grid,
            eps: self.epsilon,
            tau,
            hess,
            vector: self.potential.is_vector(),
        }
    }

    fn check_inputs(&self, c_prev: &Field, f: &Field, tau: f64) -> Result<()> {
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {tau}")));
        }
        c_prev.check_grid(&self.grid)?;
        if c_prev.ncomp() != self.ncomp() {
            return Err(Error::DimensionMismatch {
                expected: self.ncomp(),
                found: c_prev.ncomp(),
            });
        }
        c_prev.check_shape(f)
    }

    /// `(1/eps) P D Psi(c)`
    pub(crate) fn potential_force(&self, c: &Field) -> Field {
        let mut g = Field::zeros(&self.grid, c.ncomp());
        self.potential.grad_field(c, &mut g);
        g.scale(1.0 / self.epsilon);
        self.potential.project(&mut g);
        g
    }

    pub(crate) fn hessian_diag(&self, c: &Field) -> Field {
        let mut h = Field::zeros(&self.grid, c.ncomp());
        self.potential.hess_field(c, &mut h);
        h
    }

    pub(crate) fn third_diag(&self, c: &Field) -> Field {
        let mut t = Field::zeros(&self.grid, c.ncomp());
        self.potential.third_field(c, &mut t);
        t
    }

    /// Strong-form residual of one implicit step.
    pub fn implicit_residual(&self, c: &Field, c_prev: &Field, f: &Field, tau: f64) -> Field {
        let eps = self.epsilon;
        let mut r = Field::zeros(&self.grid, c.ncomp());
        laplacian_into(c, &self.grid, &mut r);
        let pot = self.potential_force(c);
        let mass = eps / tau;
        for ((((o, &x), &xp), &p), &fv) in r
            .data_mut()
            .iter_mut()
            .zip(c.data())
            .zip(c_prev.data())
            .zip(pot.data())
            .zip(f.data())
        {
            *o = mass * (x - xp) - eps * *o + p - fv;
        }
        self.potential.project(&mut r);
        r
    }

    /// One implicit Euler step by Newton's method with cg inner solves.
    pub fn step_implicit(&self, c_prev: &Field, f: &Field, tau: f64) -> Result<Field> {
        self.check_inputs(c_prev, f, tau)?;
        self.newton_step(c_prev, f, tau, 0)
    }

    fn newton_step(&self, c_prev: &Field, f: &Field, tau: f64, step: usize) -> Result<Field> {
        let opts = &self.options;
        let mut c = c_prev.clone();
        let mut delta = Field::zeros(&self.grid, c.ncomp());
        let mut residual = self.implicit_residual(&c, c_prev, f, tau);
        let mut rnorm = residual.max_abs();
        let r0 = rnorm.max(1e-300);
        for it in 0..opts.newton_max_iter {
            if rnorm <= opts.newton_tol {
                return Ok(c);
            }
            let hess = self.hessian_diag(&c);
            residual.scale(-1.0);
            delta.fill(0.0);
            let op = self.operator(tau, Some(&hess));
            op.solve(&residual, &mut delta, opts.newton_cg_rtol, opts.cg_max_iter)?;
            self.potential.project(&mut delta);
            c.axpy(1.0, &delta);
            residual = self.implicit_residual(&c, c_prev, f, tau);
            let new_norm = residual.max_abs();
            if !new_norm.is_finite() || new_norm > 1e8 * r0 {
                return Err(Error::NewtonNotConverged {
                    step,
                    iterations: it + 1,
                    residual: new_norm,
                });
            }
            // Round-off floor: the update no longer changes the iterate.
            let scale = c.max_abs().max(1.0);
            if new_norm > opts.newton_tol && delta.max_abs() <= 8.0 * f64::EPSILON * scale && new_norm <= 1e-9 {
                return Ok(c);
            }
            rnorm = new_norm;
        }
        if rnorm <= opts.newton_tol {
            return Ok(c);
        }
        Err(Error::NewtonNotConverged {
            step,
            iterations: opts.newton_max_iter,
            residual: rnorm,
        })
    }

    /// One semi-implicit step: `(eps/tau - eps Laplacian) c = (eps/tau) c_prev + f - (1/eps) P D Psi(c_prev)`.
    pub fn step_semi_implicit(&self, c_prev: &Field, f: &Field, tau: f64) -> Result<Field> {
        self.check_inputs(c_prev, f, tau)?;
        // Solve for the increment so the relative cg tolerance acts on the change.
        let eps = self.epsilon;
        let mut rhs = Field::zeros(&self.grid, c_prev.ncomp());
        laplacian_into(c_prev, &self.grid, &mut rhs);
        let pot = self.potential_force(c_prev);
        for ((o, &p), &fv) in rhs.data_mut().iter_mut().zip(pot.data()).zip(f.data()) {
            *o = eps * *o + fv - p;
        }
        self.potential.project(&mut rhs);
        let mut delta = Field::zeros(&self.grid, c_prev.ncomp());
        self.operator(tau, None)
            .solve(&rhs, &mut delta, self.options.linear_rtol, self.options.cg_max_iter)?;
        self.potential.project(&mut delta);
        let mut c = c_prev.clone();
        c.axpy(1.0, &delta);
        Ok(c)
    }

    /// Implicit step with bisection of `tau` when Newton fails. Returns the
    /// new state and the number of internal sub-steps used.
    fn step_implicit_safeguarded(&self, c_prev: &Field, f: &Field, tau: f64, step: usize) -> Result<(Field, u32)> {
        match self.newton_step(c_prev, f, tau, step) {
            Ok(c) => Ok((c, 1)),
            Err(first) => {
                let mut pieces = 2u32;
                for _ in 0..self.options.max_bisections {
                    let sub = tau / pieces as f64;
                    let mut c = c_prev.clone();
                    let mut ok = true;
                    for _ in 0..pieces {
                        match self.newton_step(&c, f, sub, step) {
                            Ok(next) => c = next,
                            Err(_) => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok {
                        warn!("implicit step {step}: Newton failed at tau={tau:e}, recovered with {pieces} sub-steps");
                        return Ok((c, pieces));
                    }
                    pieces *= 2;
                }
                Err(first)
            }
        }
    }

    /// `(eps/2) |grad c|^2 + (1/eps) Psi(c)` integrated with forward differences
    /// and lumped quadrature.
    pub fn energy(&self, c: &Field) -> f64 {
        energy(c, self.epsilon, &self.potential, &self.grid)
    }
}

/// Distributed control at `t_1..t_M`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    time: TimeGrid,
    steps: Vec<Field>,
}

impl ControlField {
    pub fn zeros(grid: &SpatialGrid, time: TimeGrid, ncomp: usize) -> Self {
        ControlField {
            time,
            steps: vec![Field::zeros(grid, ncomp); time.steps],
        }
    }

    pub fn from_steps(time: TimeGrid, steps: Vec<Field>) -> Result<Self> {
        if steps.len() != time.steps {
            return Err(Error::DimensionMismatch {
                expected: time.steps,
                found: steps.len(),
            });
        }
        if let Some(first) = steps.first() {
            for s in &steps {
                first.check_shape(s)?;
            }
        }
        Ok(ControlField { time, steps })
    }

    pub fn constant(grid: &SpatialGrid, time: TimeGrid, value: &[f64]) -> Self {
        ControlField {
            time,
            steps: vec![Field::uniform(grid, value); time.steps],
        }
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn ncomp(&self) -> usize {
        self.steps[0].ncomp()
    }

    /// Control acting on step `m` (1-based, `t_m`).
    pub fn at(&self, m: usize) -> &Field {
        &self.steps[m - 1]
    }

    pub fn at_mut(&mut self, m: usize) -> &mut Field {
        &mut self.steps[m - 1]
    }

    pub fn steps(&self) -> &[Field] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [Field] {
        &mut self.steps
    }

    pub fn axpy(&mut self, alpha: f64, x: &ControlField) {
        for (a, b) in self.steps.iter_mut().zip(&x.steps) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.steps.iter_mut().for_each(|s| s.scale(alpha));
    }

    /// Space-time inner product with the right-endpoint rule.
    pub fn dot(&self, other: &ControlField, grid: &SpatialGrid) -> f64 {
        self.time.tau() * self.steps.iter().zip(&other.steps).map(|(a, b)| dot(a, b, grid)).sum::<f64>()
    }

    pub fn norm(&self, grid: &SpatialGrid) -> f64 {
        self.dot(self, grid).sqrt()
    }

    /// `||f(t_m)||_{L2(Omega)}` for `m = 1..M`.
    pub fn norms_per_step(&self, grid: &SpatialGrid) -> Vec<f64> {
        self.steps.iter().map(|s| dot(s, s, grid).sqrt()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, s| m.max(s.max_abs()))
    }

    /// Projects every node onto the simplex tangent space (vector controls).
    pub fn project_tangent(&mut self) {
        for s in &mut self.steps {
            crate::potentials::project_field(s);
        }
    }

    /// Content hash of the raw bit patterns, used to key solver caches.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.time.steps.hash(&mut h);
        self.time.t_final.to_bits().hash(&mut h);
        for s in &self.steps {
            s.ncomp().hash(&mut h);
            for v in s.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// States `c(t_0), ..., c(t_M)` of one forward solve.
#[derive(Clone, Debug)]
pub struct PhaseTrajectory {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub epsilon: f64,
    pub scheme: StepScheme,
    states: Vec<Field>,
    substeps: Vec<u32>,
}

impl PhaseTrajectory {
    pub fn state(&self, m: usize) -> &Field {
        &self.states[m]
    }

    pub fn states(&self) -> &[Field] {
        &self.states
    }

    pub fn final_state(&self) -> &Field {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// Internal sub-steps per time step (1 unless Newton needed bisection).
    pub fn substeps(&self) -> &[u32] {
        &self.substeps
    }

    /// True when every step is a single step of the nominal scheme, i.e. the
    /// discrete adjoint of that scheme is exact for this trajectory.
    pub fn is_uniform(&self) -> bool {
        self.substeps.iter().all(|&s| s == 1)
    }
}

fn validate_vector_inputs(model: &AllenCahn, c0: &Field, control: &ControlField) -> Result<()> {
    if !model.potential.is_vector() {
        return Ok(());
    }
    let sum = c0.component_sum();
    let worst = sum.iter().fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
    if worst > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "initial phase field leaves the affine simplex (|sum c - 1| = {worst:e})"
        )));
    }
    let scale = control.max_abs().max(1.0);
    for (m, s) in control.steps().iter().enumerate() {
        let w = s.component_sum().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if w > 1e-10 * scale {
            return Err(Error::InvalidParameter(format!(
                "control at step {} leaves the tangent space (|sum f| = {w:e})",
                m + 1
            )));
        }
    }
    Ok(())
}

/// Runs the chosen stepper from `c0` under `control`.
pub fn solve_forward(model: &AllenCahn, c0: &Field, control: &ControlField, scheme: StepScheme) -> Result<PhaseTrajectory> {
    c0.check_grid(&model.grid)?;
    if c0.ncomp() != model.ncomp() || control.ncomp() != model.ncomp() {
        return Err(Error::DimensionMismatch {
            expected: model.ncomp(),
            found: c0.ncomp().max(control.ncomp()),
        });
    }
    validate_vector_inputs(model, c0, control)?;
    let time = control.time();
    let tau = time.tau();
    let mut states = Vec::with_capacity(time.steps + 1);
    let mut substeps = Vec::with_capacity(time.steps);
    states.push(c0.clone());
    for m in 1..=time.steps {
        let prev = &states[m - 1];
        let f = control.at(m);
        let (next, pieces) = match scheme {
            StepScheme::Implicit => model.step_implicit_safeguarded(prev, f, tau, m)?,
            StepScheme::SemiImplicit => (model.step_semi_implicit(prev, f, tau)?, 1),
        };
        if !next.is_finite() {
            return Err(Error::NewtonNotConverged {
                step: m,
                iterations: 0,
                residual: f64::NAN,
            });
        }
        states.push(next);
        substeps.push(pieces);
    }
    Ok(PhaseTrajectory {
        grid: model.grid.clone(),
        time,
        epsilon: model.epsilon,
        scheme,
        states,
        substeps,
    })
}

/// Ginzburg-Landau energy without elastic contribution.
pub fn energy(c: &Field, eps: f64, model: &Potential, grid: &SpatialGrid) -> f64 {
    let gradient: f64 = (0..c.ncomp()).map(|k| grid.dirichlet_form(c.component(k))).sum();
    let mut node = vec![0.0; c.ncomp()];
    let mut bulk = 0.0;
    let w = grid.weights();
    for (k, wk) in w.iter().enumerate() {
        c.node(k, &mut node);
        bulk += wk * model.value(&node);
    }
    0.5 * eps * gradient + bulk / eps
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceDiagnostics {
    /// `sqrt(area / pi)` of the superlevel set.
    pub radius: f64,
    pub area: f64,
    /// 4-connected components of `{c > level}`.
    pub components: usize,
}

/// Superlevel-set area, equivalent radius and connected components of a scalar field.
pub fn extract_interface(c: &Field, grid: &SpatialGrid, level: f64) -> Result<InterfaceDiagnostics> {
    c.check_grid(grid)?;
    if c.ncomp() != 1 {
        return Err(Error::InvalidParameter("interface extraction needs a scalar field".into()));
    }
    let v = c.component(0);
    let inside: Vec<bool> = v.iter().map(|&x| x > level).collect();
    let area: f64 = inside.iter().zip(grid.weights()).filter(|(i, _)| **i).map(|(_, w)| w).sum();

    let (nx, ny) = (grid.nx, grid.ny);
    let mut seen = vec![false; inside.len()];
    let mut components = 0;
    let mut stack = Vec::new();
    for start in 0..inside.len() {
        if !inside[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (i, j) = (k % nx, k / nx);
            let mut visit = |n: usize| {
                if inside[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                visit(k - 1);
            }
            if i + 1 < nx {
                visit(k + 1);
            }
            if j > 0 {
                visit(k - nx);
            }
            if j + 1 < ny {
                visit(k + nx);
            }
        }
    }
    Ok(InterfaceDiagnostics {
        radius: (area / std::f64::consts::PI).sqrt(),
        area,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(n: usize, eps: f64) -> AllenCahn {
        AllenCahn::new(SpatialGrid::square(-1.0, 1.0, n).unwrap(), eps, Potential::DoubleWell).unwrap()
    }

    fn circle(grid: &SpatialGrid, r: f64, eps: f64) -> Field {
        Field::from_fn(grid, |x, y| ((r - (x * x + y * y).sqrt()) / (2f64.sqrt() * eps)).tanh())
    }

    #[test]
    fn pure_phase_is_stationary() {
        let m = scalar_model(9, 0.1);
        let one = Field::constant(&m.grid, 1, 1.0);
        let f = Field::zeros(&m.grid, 1);
        assert_eq!(m.step_implicit(&one, &f, 1e-3).unwrap(), one);
        assert_eq!(m.step_semi_implicit(&one, &f, 1e-3).unwrap(), one);
        let zero = Field::zeros(&m.grid, 1);
        assert_eq!(m.step_implicit(&zero, &f, 1e-3).unwrap(), zero);
    }

    #[test]
    fn barycenter_is_stationary() {
        let g = SpatialGrid::square(0.0, 1.0, 8).unwrap();
        let m = AllenCahn::new(g.clone(), 0.1, Potential::obstacle(0.05, 3).unwrap()).unwrap();
        let bary = Field::uniform(&g, &[1.0 / 3.0; 3]);
        let f = Field::zeros(&g, 3);
        let next = m.step_implicit(&bary, &f, 1e-4).unwrap();
        let mut d = next.clone();
        d.axpy(-1.0, &bary);
        assert!(d.max_abs() < 1e-14);
    }

    #[test]
    fn implicit_step_meets_residual_tolerance() {
        let m = scalar_model(33, 0.1);
        let c0 = circle(&m.grid, 0.5, 0.1);
        let f = Field::from_fn(&m.grid, |x, y| x - 0.5 * y);
        let tau = 5e-3;
        let c1 = m.step_implicit(&c0, &f, tau).unwrap();
        let r = m.implicit_residual(&c1, &c0, &f, tau);
        assert!(r.max_abs() <= 1e-12, "{}", r.max_abs());
    }

    #[test]
    fn semi_implicit_is_consistent() {
        let m = scalar_model(33, 0.1);
        let c0 = circle(&m.grid, 0.5, 0.1);
        let f = Field::zeros(&m.grid, 1);
        let change = |tau: f64| {
            let mut d = m.step_semi_implicit(&c0, &f, tau).unwrap();
            d.axpy(-1.0, &c0);
            d.max_abs()
        };
        let (a, b) = (change(1e-3), change(5e-4));
        assert!((a / b - 2.0).abs() < 0.1, "{a} {b}");
    }

    #[test]
    fn schemes_agree_to_second_order_per_step() {
        let m = scalar_model(33, 0.1);
        let c0 = circle(&m.grid, 0.5, 0.1);
        let f = Field::zeros(&m.grid, 1);
        let gap = |tau: f64| {
            let mut d = m.step_semi_implicit(&c0, &f, tau).unwrap();
            d.axpy(-1.0, &m.step_implicit(&c0, &f, tau).unwrap());
            d.max_abs()
        };
        let (a, b) = (gap(1e-3), gap(5e-4));
        assert!((a / b - 4.0).abs() < 0.4, "{a} {b} ratio {}", a / b);
    }

    #[test]
    fn vector_steps_keep_simplex() {
        let g = SpatialGrid::square(0.0, 1.0, 20).unwrap();
        let m = AllenCahn::new(g.clone(), 0.1, Potential::obstacle(0.01, 3).unwrap()).unwrap();
        let c0 = Field::from_fn_vector(&g, 3, |x, y, out| {
            let a = (0.5 + (0.4 - x) * 4.0).clamp(0.0, 1.0);
            let b = (0.5 + (0.6 - y) * 4.0).clamp(0.0, 1.0) * (1.0 - a);
            out.copy_from_slice(&[a, b, 1.0 - a - b]);
        });
        let time = TimeGrid::new(5e-4, 5).unwrap();
        let mut control = ControlField::zeros(&g, time, 3);
        for s in control.steps_mut() {
            *s = Field::from_fn_vector(&g, 3, |x, y, out| out.copy_from_slice(&[x - y, y, -x]));
        }
        for scheme in [StepScheme::Implicit, StepScheme::SemiImplicit] {
            let traj = solve_forward(&m, &c0, &control, scheme).unwrap();
            for c in traj.states() {
                let worst = c.component_sum().iter().fold(0.0f64, |a, s| a.max((s - 1.0).abs()));
                assert!(worst <= 1e-12, "{worst}");
            }
        }
    }

    #[test]
    fn rejects_control_outside_tangent_space() {
        let g = SpatialGrid::square(0.0, 1.0, 6).unwrap();
        let m = AllenCahn::new(g.clone(), 0.1, Potential::obstacle(0.01, 3).unwrap()).unwrap();
        let c0 = Field::uniform(&g, &[1.0 / 3.0; 3]);
        let control = ControlField::constant(&g, TimeGrid::new(1e-3, 2).unwrap(), &[1.0, 0.0, 0.0]);
        assert!(solve_forward(&m, &c0, &control, StepScheme::Implicit).is_err());
    }

    #[test]
    fn constant_trajectory_for_pure_phase() {
        let m = scalar_model(10, 0.1);
        let one = Field::constant(&m.grid, 1, 1.0);
        let control = ControlField::zeros(&m.grid, TimeGrid::new(0.01, 4).unwrap(), 1);
        let traj = solve_forward(&m, &one, &control, StepScheme::Implicit).unwrap();
        assert!(traj.states().iter().all(|s| *s == one));
        assert!(traj.is_uniform());
    }

    #[test]
    fn energy_of_constants() {
        let m = scalar_model(11, 0.05);
        assert_eq!(m.energy(&Field::constant(&m.grid, 1, 1.0)), 0.0);
        let e = m.energy(&Field::zeros(&m.grid, 1));
        assert!((e - 1.0 / 0.05).abs() < 1e-12);
    }

    #[test]
    fn energy_decreases_and_stays_bounded() {
        let eps = 0.08;
        let m = scalar_model(41, eps);
        let c0 = circle(&m.grid, 0.5, eps);
        let control = ControlField::zeros(&m.grid, TimeGrid::new(20.0 * eps * eps, 20).unwrap(), 1);
        let traj = solve_forward(&m, &c0, &control, StepScheme::Implicit).unwrap();
        let e: Vec<f64> = traj.states().iter().map(|c| m.energy(c)).collect();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        for c in traj.states() {
            assert!(c.data().iter().all(|v| v.abs() <= 1.0 + 1e-8));
        }
    }

    #[test]
    fn interface_diagnostics() {
        let g = SpatialGrid::square(-1.0, 1.0, 101).unwrap();
        let disk = Field::from_fn(&g, |x, y| if x * x + y * y < 0.25 { 1.0 } else { -1.0 });
        let d = extract_interface(&disk, &g, 0.0).unwrap();
        assert_eq!(d.components, 1);
        assert!((d.radius - 0.5).abs() <= g.hx, "{}", d.radius);
        let empty = extract_interface(&Field::constant(&g, 1, -1.0), &g, 0.0).unwrap();
        assert_eq!((empty.radius, empty.components), (0.0, 0));
        let two = Field::from_fn(&g, |x, y| {
            let a = (x - 0.4).powi(2) + y * y < 0.0625;
            let b = (x + 0.4).powi(2) + y * y < 0.0625;
            if a || b { 1.0 } else { -1.0 }
        });
        assert_eq!(extract_interface(&two, &g, 0.0).unwrap().components, 2);
    }
}
