//! Reduced objective `j(f) = J(S(f), f)` with its L2 gradient and
//! Hessian-vector products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint::{
    linearized_backward, linearized_forward, solve_adjoint_with, AdjointMode, AdjointTrajectory, Targets, Weights,
};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, AllenCahn, ControlField, PhaseTrajectory, StepScheme};
use crate::grid::{dot, Field, TimeGrid};
use crate::potentials::Potential;

/// Space-time PDE solves performed so far, by kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolveCounters {
    pub forward: u64,
    pub adjoint: u64,
    pub linearized_forward: u64,
    pub linearized_backward: u64,
}

impl SolveCounters {
    pub fn total(&self) -> u64 {
        self.forward + self.adjoint + self.linearized_forward + self.linearized_backward
    }
}

struct Cached {
    fingerprint: u64,
    control: ControlField,
    trajectory: PhaseTrajectory,
    objective: f64,
    adjoint: Option<AdjointTrajectory>,
}

pub struct ReducedProblem {
    pub model: AllenCahn,
    pub c0: Field,
    pub targets: Targets,
    pub weights: Weights,
    pub time: TimeGrid,
    pub scheme: StepScheme,
    pub adjoint_mode: AdjointMode,
    /// Include the `nu_d` source in the second-order adjoint.
    pub hessian_tracks_desired: bool,
    cache: Option<Cached>,
    counters: SolveCounters,
}

impl ReducedProblem {
    pub fn new(model: AllenCahn, c0: Field, targets: Targets, weights: Weights, time: TimeGrid, scheme: StepScheme) -> Result<Self> {
        c0.check_grid(&model.grid)?;
        if c0.ncomp() != model.ncomp() {
            return Err(Error::DimensionMismatch {
                expected: model.ncomp(),
                found: c0.ncomp(),
            });
        }
        c0.check_shape(&targets.terminal)?;
        Ok(ReducedProblem {
            model,
            c0,
            targets,
            weights,
            time,
            scheme,
            adjoint_mode: AdjointMode::Consistent,
            hessian_tracks_desired: true,
            cache: None,
            counters: SolveCounters::default(),
        })
    }

    /// Copy of the problem using another time-stepping scheme (fresh cache and counters).
    pub fn with_scheme(&self, scheme: StepScheme) -> Self {
        ReducedProblem {
            model: self.model.clone(),
            c0: self.c0.clone(),
            targets: self.targets.clone(),
            weights: self.weights,
            time: self.time,
            scheme,
            adjoint_mode: self.adjoint_mode,
            hessian_tracks_desired: self.hessian_tracks_desired,
            cache: None,
            counters: SolveCounters::default(),
        }
    }

    /// Replaces the potential (e.g. a new penalization parameter) and drops cached solves.
    pub fn set_potential(&mut self, potential: Potential) -> Result<()> {
        if potential.ncomp() != self.model.ncomp() {
            return Err(Error::DimensionMismatch {
                expected: self.model.ncomp(),
                found: potential.ncomp(),
            });
        }
        self.model.potential = potential;
        self.cache = None;
        Ok(())
    }

    pub fn counters(&self) -> SolveCounters {
        self.counters
    }

    pub fn add_counters(&mut self, other: SolveCounters) {
        self.counters.forward += other.forward;
        self.counters.adjoint += other.adjoint;
        self.counters.linearized_forward += other.linearized_forward;
        self.counters.linearized_backward += other.linearized_backward;
    }

    pub fn zero_control(&self) -> ControlField {
        ControlField::zeros(&self.model.grid, self.time, self.model.ncomp())
    }

    pub fn inner(&self, a: &ControlField, b: &ControlField) -> f64 {
        a.dot(b, &self.model.grid)
    }

    fn check_control(&self, f: &ControlField) -> Result<()> {
        if f.len() != self.time.steps || f.time() != self.time {
            return Err(Error::DimensionMismatch {
                expected: self.time.steps,
                found: f.len(),
            });
        }
        f.at(1).check_shape(&self.c0)
    }

    fn ensure_state(&mut self, f: &ControlField) -> Result<&mut Cached> {
        self.check_control(f)?;
        let fp = f.fingerprint();
        let hit = matches!(&self.cache, Some(c) if c.fingerprint == fp && c.control == *f);
        if !hit {
            let trajectory = solve_forward(&self.model, &self.c0, f, self.scheme)?;
            self.counters.forward += 1;
            let objective = self.objective_of(&trajectory, f);
            self.cache = Some(Cached {
                fingerprint: fp,
                control: f.clone(),
                trajectory,
                objective,
                adjoint: None,
            });
        }
        Ok(self.cache.as_mut().expect("cache filled above"))
    }

    fn objective_of(&self, traj: &PhaseTrajectory, f: &ControlField) -> f64 {
        let grid = &self.model.grid;
        let w = self.weights;
        let tau = self.time.tau();
        let eps = self.model.epsilon;
        let terminal = Field::difference(traj.final_state(), &self.targets.terminal);
        let mut j = 0.5 * w.nu_t * dot(&terminal, &terminal, grid);
        if w.nu_d != 0.0 {
            let mut track = 0.0;
            for m in 1..=self.time.steps {
                let d = Field::difference(traj.state(m), self.targets.desired.at(m));
                track += dot(&d, &d, grid);
            }
            j += 0.5 * w.nu_d * tau * track;
        }
        if w.nu_f != 0.0 {
            j += 0.5 * w.nu_f / eps * f.dot(f, grid);
        }
        j
    }

    /// `(nu_T/2)|c(T) - c_T|^2 + (nu_d/2)|c - c_d|^2 + (nu_f/(2 eps))|f|^2`
    pub fn eval_objective(&mut self, f: &ControlField) -> Result<f64> {
        Ok(self.ensure_state(f)?.objective)
    }

    /// State trajectory at `f` (solving if not cached).
    pub fn state(&mut self, f: &ControlField) -> Result<&PhaseTrajectory> {
        Ok(&self.ensure_state(f)?.trajectory)
    }

    fn ensure_adjoint(&mut self, f: &ControlField) -> Result<()> {
        let (model, targets, weights, mode) = (self.model.clone(), self.targets.clone(), self.weights, self.adjoint_mode);
        let cached = self.ensure_state(f)?;
        if cached.adjoint.is_none() {
            let p = solve_adjoint_with(&model, &cached.trajectory, &targets, weights, mode)?;
            cached.adjoint = Some(p);
            self.counters.adjoint += 1;
        }
        Ok(())
    }

    /// Adjoint trajectory at `f`.
    pub fn adjoint(&mut self, f: &ControlField) -> Result<&AdjointTrajectory> {
        self.ensure_adjoint(f)?;
        Ok(self.cache.as_ref().and_then(|c| c.adjoint.as_ref()).expect("adjoint cached"))
    }

    /// `(nu_f/eps) f + p`
    pub fn eval_gradient(&mut self, f: &ControlField) -> Result<ControlField> {
        self.ensure_adjoint(f)?;
        let cached = self.cache.as_ref().expect("cache present");
        let p = cached.adjoint.as_ref().expect("adjoint present");
        let mut g = p.as_control(&cached.trajectory);
        g.axpy(self.weights.nu_f / self.model.epsilon, f);
        if self.model.potential.is_vector() {
            g.project_tangent();
        }
        Ok(g)
    }

    /// `(nu_f/eps) df + dp` via one linearized forward and one linearized backward sweep.
    pub fn hess_vec(&mut self, f: &ControlField, df: &ControlField) -> Result<ControlField> {
        self.check_control(df)?;
        self.ensure_adjoint(f)?;
        let cached = self.cache.as_ref().expect("cache present");
        let traj = &cached.trajectory;
        let p = cached.adjoint.as_ref().expect("adjoint present");
        let dc = linearized_forward(&self.model, traj, df)?;
        let dp = linearized_backward(&self.model, traj, p, &dc, self.weights, self.hessian_tracks_desired)?;
        self.counters.linearized_forward += 1;
        self.counters.linearized_backward += 1;
        let mut out = ControlField::from_steps(self.time, dp)?;
        out.axpy(self.weights.nu_f / self.model.epsilon, df);
        if self.model.potential.is_vector() {
            out.project_tangent();
        }
        Ok(out)
    }
}

/// Deterministic pseudo-random control with entries in `[-amplitude, amplitude]`,
/// projected to the tangent space for vector problems.
pub fn random_control(problem: &ReducedProblem, seed: u64, amplitude: f64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = problem.zero_control();
    for s in f.steps_mut() {
        for v in s.data_mut() {
            *v = amplitude * rng.gen_range(-1.0..1.0);
        }
    }
    if problem.model.potential.is_vector() {
        f.project_tangent();
    }
    f
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckRow {
    pub direction: usize,
    pub finite_difference: f64,
    pub adjoint: f64,
    pub relative_error: f64,
}

/// Central differences of `j` against `<grad j, d>` in seeded random directions.
pub fn gradient_check(problem: &mut ReducedProblem, f: &ControlField, directions: usize, h: f64, seed: u64) -> Result<Vec<GradCheckRow>> {
    let g = problem.eval_gradient(f)?;
    let mut rows = Vec::with_capacity(directions);
    for k in 0..directions {
        let d = random_control(problem, seed.wrapping_add(k as u64 + 1), 1.0);
        let mut fp = f.clone();
        fp.axpy(h, &d);
        let mut fm = f.clone();
        fm.axpy(-h, &d);
        let jp = problem.eval_objective(&fp)?;
        let jm = problem.eval_objective(&fm)?;
        let fd = (jp - jm) / (2.0 * h);
        let ad = problem.inner(&g, &d);
        let scale = fd.abs().max(ad.abs()).max(f64::MIN_POSITIVE);
        rows.push(GradCheckRow {
            direction: k,
            finite_difference: fd,
            adjoint: ad,
            relative_error: (fd - ad).abs() / scale,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug)]
pub struct SymmetryRow {
    pub pair: usize,
    pub uhv: f64,
    pub vhu: f64,
    pub relative_error: f64,
}

/// `<H u, v>` against `<u, H v>` for seeded random pairs.
pub fn hessian_symmetry_check(problem: &mut ReducedProblem, f: &ControlField, pairs: usize, seed: u64) -> Result<Vec<SymmetryRow>> {
    let mut rows = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let u = random_control(problem, seed.wrapping_add(2 * k as u64 + 1), 1.0);
        let v = random_control(problem, seed.wrapping_add(2 * k as u64 + 2), 1.0);
        let hu = problem.hess_vec(f, &u)?;
        let hv = problem.hess_vec(f, &v)?;
        let a = problem.inner(&hu, &v);
        let b = problem.inner(&u, &hv);
        rows.push(SymmetryRow {
            pair: k,
            uhv: a,
            vhu: b,
            relative_error: (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::DesiredState;
    use crate::grid::SpatialGrid;

    fn problem(n: usize, steps: usize, weights: Weights, scheme: StepScheme) -> ReducedProblem {
        let g = SpatialGrid::square(-1.0, 1.0, n).unwrap();
        let eps = 0.1;
        let model = AllenCahn::new(g.clone(), eps, Potential::DoubleWell).unwrap();
        let c0 = Field::from_fn(&g, |x, y| ((0.5 - (x * x + y * y).sqrt()) / (2f64.sqrt() * eps)).tanh());
        let targets = Targets {
            terminal: c0.clone(),
            desired: DesiredState::Constant(Field::from_fn(&g, |x, _| (x / 0.2).tanh())),
        };
        let time = TimeGrid::new(0.005 * steps as f64, steps).unwrap();
        ReducedProblem::new(model, c0, targets, weights, time, scheme).unwrap()
    }

    #[test]
    fn objective_closed_forms() {
        let mut p = problem(10, 4, Weights::new(0.0, 0.0, 0.3).unwrap(), StepScheme::Implicit);
        assert_eq!(p.eval_objective(&p.zero_control()).unwrap(), 0.0);
        let kappa = 0.7;
        let f = ControlField::constant(&p.model.grid, p.time, &[kappa]);
        let j = p.eval_objective(&f).unwrap();
        let want = 0.3 / (2.0 * 0.1) * kappa * kappa * 4.0 * p.time.t_final;
        assert!((j - want).abs() < 1e-12 * want, "{j} {want}");

        // pure phase that is its own target
        let g = p.model.grid.clone();
        p.c0 = Field::constant(&g, 1, 1.0);
        p.targets.terminal = p.c0.clone();
        p.weights = Weights::new(1.0, 0.0, 0.3).unwrap();
        p.cache = None;
        assert_eq!(p.eval_objective(&p.zero_control()).unwrap(), 0.0);
    }

    #[test]
    fn gradient_without_tracking_is_regularization() {
        let mut p = problem(10, 4, Weights::new(0.0, 0.0, 0.3).unwrap(), StepScheme::Implicit);
        let f = random_control(&p, 3, 1.0);
        let g = p.eval_gradient(&f).unwrap();
        let mut want = f.clone();
        want.scale(0.3 / 0.1);
        assert_eq!(g, want);
        let h = p.hess_vec(&f, &f).unwrap();
        assert_eq!(h, want);
        assert!(p.inner(&h, &f) > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_both_schemes() {
        for scheme in [StepScheme::Implicit, StepScheme::SemiImplicit] {
            let mut p = problem(12, 6, Weights::new(1.0, 0.5, 0.01).unwrap(), scheme);
            let f = random_control(&p, 11, 1.0);
            let rows = gradient_check(&mut p, &f, 5, 1e-5, 99).unwrap();
            for r in rows {
                assert!(r.relative_error < 1e-6, "{scheme:?}: {r:?}");
            }
        }
    }

    #[test]
    fn hessian_is_symmetric_and_matches_gradient_differences() {
        for scheme in [StepScheme::Implicit, StepScheme::SemiImplicit] {
            let mut p = problem(12, 6, Weights::new(1.0, 0.5, 0.01).unwrap(), scheme);
            let f = random_control(&p, 5, 1.0);
            for r in hessian_symmetry_check(&mut p, &f, 3, 7).unwrap() {
                assert!(r.relative_error < 1e-8, "{scheme:?}: {r:?}");
            }
            let d = random_control(&p, 8, 1.0);
            let hd = p.hess_vec(&f, &d).unwrap();
            let g0 = p.eval_gradient(&f).unwrap();
            let err = |h: f64, p: &mut ReducedProblem| {
                let mut fp = f.clone();
                fp.axpy(h, &d);
                let mut q = p.eval_gradient(&fp).unwrap();
                q.axpy(-1.0, &g0);
                q.scale(1.0 / h);
                q.axpy(-1.0, &hd);
                q.norm(&p.model.grid) / hd.norm(&p.model.grid)
            };
            let (a, b) = (err(1e-3, &mut p), err(1e-4, &mut p));
            assert!(b < a && a / b > 5.0, "{scheme:?}: {a} {b}");
        }
    }

    #[test]
    fn cache_avoids_repeated_solves() {
        let mut p = problem(8, 3, Weights::new(1.0, 0.0, 0.01).unwrap(), StepScheme::Implicit);
        let f = random_control(&p, 1, 1.0);
        p.eval_objective(&f).unwrap();
        p.eval_gradient(&f).unwrap();
        p.eval_objective(&f).unwrap();
        assert_eq!(p.counters().forward, 1);
        assert_eq!(p.counters().adjoint, 1);
        let mut g = f.clone();
        g.at_mut(1).data_mut()[0] += 1e-3;
        p.eval_objective(&g).unwrap();
        assert_eq!(p.counters().forward, 2);
    }
}
