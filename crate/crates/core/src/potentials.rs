//! Bulk potentials: the scalar double well and the regularized multi-obstacle
//! potential, with derivatives up to third order.
//!
//! The obstacle regularization is a sum of one-dimensional penalties, so its
//! Hessian and third derivative are diagonal and stored componentwise.

use crate::error::{Error, Result};
use crate::grid::Field;

/// `Psi(c) = (c^2 - 1)^2 / 4`
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleWell;

impl DoubleWell {
    #[inline]
    pub fn value(c: f64) -> f64 {
        let s = c * c - 1.0;
        0.25 * s * s
    }
    #[inline]
    pub fn d1(c: f64) -> f64 {
        c * c * c - c
    }
    #[inline]
    pub fn d2(c: f64) -> f64 {
        3.0 * c * c - 1.0
    }
    #[inline]
    pub fn d3(c: f64) -> f64 {
        6.0 * c
    }
}

/// `Psi_sigma(c) = -|c|^2 / 2 + sum_i penalty_sigma(c_i)` on `R^N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizedObstacle {
    sigma: f64,
    phases: usize,
}

impl RegularizedObstacle {
    pub fn new(sigma: f64, phases: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 0.25) {
            return Err(Error::InvalidParameter(format!("sigma must lie in (0, 1/4), got {sigma}")));
        }
        if phases < 2 {
            return Err(Error::InvalidParameter(format!("obstacle potential needs N >= 2 phases, got {phases}")));
        }
        Ok(RegularizedObstacle { sigma, phases })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    /// The C^2 convex penalty and its first three derivatives at `r`.
    #[inline]
    pub fn penalty(&self, r: f64) -> [f64; 4] {
        penalty(self.sigma, r)
    }
}

/// Piecewise cubic/quadratic penalty of `r < 0`; zero for `r >= 0`.
#[inline]
pub fn penalty(sigma: f64, r: f64) -> [f64; 4] {
    if r >= 0.0 {
        [0.0; 4]
    } else if r > -sigma {
        let s2 = sigma * sigma;
        [-r * r * r / (6.0 * s2), -r * r / (2.0 * s2), -r / s2, -1.0 / s2]
    } else {
        let q = r + 0.5 * sigma;
        [q * q / (2.0 * sigma) + sigma / 24.0, q / sigma, 1.0 / sigma, 0.0]
    }
}

/// The quadratic branch of the penalty, used to check C^2 matching at `-sigma`.
#[doc(hidden)]
pub fn penalty_outer_branch(sigma: f64, r: f64) -> [f64; 3] {
    let q = r + 0.5 * sigma;
    [q * q / (2.0 * sigma) + sigma / 24.0, q / sigma, 1.0 / sigma]
}

/// The cubic branch of the penalty.
#[doc(hidden)]
pub fn penalty_inner_branch(sigma: f64, r: f64) -> [f64; 3] {
    let s2 = sigma * sigma;
    [-r * r * r / (6.0 * s2), -r * r / (2.0 * s2), -r / s2]
}

/// Affine simplex `{sum v_i = 1}`, its tangent space, and the Gibbs simplex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimplexGeometry {
    pub phases: usize,
}

impl SimplexGeometry {
    pub fn new(phases: usize) -> Self {
        SimplexGeometry { phases }
    }

    /// Largest violation of nonnegativity or of the unit sum.
    pub fn gibbs_violation(&self, v: &[f64]) -> f64 {
        let sum: f64 = v.iter().sum();
        let neg = v.iter().fold(0.0f64, |m, x| m.max(-x));
        neg.max((sum - 1.0).abs())
    }

    pub fn in_tangent(&self, v: &[f64], tol: f64) -> bool {
        v.iter().sum::<f64>().abs() <= tol
    }
}

/// `v - 1 * mean(v)`
pub fn project_tangent(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_tangent_in_place(&mut out);
    out
}

#[inline]
pub fn project_tangent_in_place(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Projects every node of a vector field onto the tangent space.
pub fn project_field(f: &mut Field) {
    let n = f.ncomp();
    if n < 2 {
        return;
    }
    let mean = f.component_sum();
    let inv = 1.0 / n as f64;
    for k in 0..n {
        for (v, s) in f.component_mut(k).iter_mut().zip(&mean) {
            *v -= s * inv;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess_diag: Vec<f64>,
    pub third_diag: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Potential {
    DoubleWell,
    Obstacle(RegularizedObstacle),
}

impl Potential {
    pub fn obstacle(sigma: f64, phases: usize) -> Result<Self> {
        Ok(Potential::Obstacle(RegularizedObstacle::new(sigma, phases)?))
    }

    /// Components per node (1 for the scalar double well).
    pub fn ncomp(&self) -> usize {
        match self {
            Potential::DoubleWell => 1,
            Potential::Obstacle(o) => o.phases,
        }
    }

    /// Whether the dynamics are projected onto the simplex tangent space.
    pub fn is_vector(&self) -> bool {
        matches!(self, Potential::Obstacle(_))
    }

    pub fn value(&self, c: &[f64]) -> f64 {
        match self {
            Potential::DoubleWell => DoubleWell::value(c[0]),
            Potential::Obstacle(o) => c.iter().map(|&ci| -0.5 * ci * ci + o.penalty(ci)[0]).sum(),
        }
    }

    /// Unprojected gradient, diagonal Hessian and diagonal third derivative.
    pub fn eval(&self, c: &[f64]) -> Result<Derivatives> {
        if c.len() != self.ncomp() {
            return Err(Error::DimensionMismatch {
                expected: self.ncomp(),
                found: c.len(),
            });
        }
        Ok(match self {
            Potential::DoubleWell => {
                let x = c[0];
                Derivatives {
                    value: DoubleWell::value(x),
                    grad: vec![DoubleWell::d1(x)],
                    hess_diag: vec![DoubleWell::d2(x)],
                    third_diag: vec![DoubleWell::d3(x)],
                }
            }
            Potential::Obstacle(o) => {
                let mut d = Derivatives {
                    value: 0.0,
                    grad: Vec::with_capacity(c.len()),
                    hess_diag: Vec::with_capacity(c.len()),
                    third_diag: Vec::with_capacity(c.len()),
                };
                for &ci in c {
                    let p = o.penalty(ci);
                    d.value += -0.5 * ci * ci + p[0];
                    d.grad.push(-ci + p[1]);
                    d.hess_diag.push(-1.0 + p[2]);
                    d.third_diag.push(p[3]);
                }
                d
            }
        })
    }

    /// Nodewise `D Psi(c)` (not projected).
    pub(crate) fn grad_field(&self, c: &Field, out: &mut Field) {
        match self {
            Potential::DoubleWell => {
                for (o, &x) in out.data_mut().iter_mut().zip(c.data()) {
                    *o = DoubleWell::d1(x);
                }
            }
            Potential::Obstacle(o) => {
                let s = o.sigma;
                for (out, &x) in out.data_mut().iter_mut().zip(c.data()) {
                    *out = -x + penalty(s, x)[1];
                }
            }
        }
    }

    /// Nodewise diagonal of `D^2 Psi(c)`.
    pub(crate) fn hess_field(&self, c: &Field, out: &mut Field) {
        match self {
            Potential::DoubleWell => {
                for (o, &x) in out.data_mut().iter_mut().zip(c.data()) {
                    *o = DoubleWell::d2(x);
                }
            }
            Potential::Obstacle(o) => {
                let s = o.sigma;
                for (out, &x) in out.data_mut().iter_mut().zip(c.data()) {
                    *out = -1.0 + penalty(s, x)[2];
                }
            }
        }
    }

    /// Nodewise diagonal of `D^3 Psi(c)`.
    pub(crate) fn third_field(&self, c: &Field, out: &mut Field) {
        match self {
            Potential::DoubleWell => {
                for (o, &x) in out.data_mut().iter_mut().zip(c.data()) {
                    *o = DoubleWell::d3(x);
                }
            }
            Potential::Obstacle(o) => {
                let s = o.sigma;
                for (out, &x) in out.data_mut().iter_mut().zip(c.data()) {
                    *out = penalty(s, x)[3];
                }
            }
        }
    }

    /// Applies the simplex tangent projection for vector models; no-op otherwise.
    pub(crate) fn project(&self, f: &mut Field) {
        if self.is_vector() {
            project_field(f);
        }
    }
}

/// Value and derivatives of `model` at one phase value `c`.
pub fn eval_derivatives(model: &Potential, c: &[f64]) -> Result<Derivatives> {
    model.eval(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn double_well_values() {
        let d = eval_derivatives(&Potential::DoubleWell, &[1.0]).unwrap();
        assert_eq!((d.value, d.grad[0], d.hess_diag[0], d.third_diag[0]), (0.0, 0.0, 2.0, 6.0));
        let d = eval_derivatives(&Potential::DoubleWell, &[0.0]).unwrap();
        assert_eq!((d.value, d.grad[0], d.hess_diag[0], d.third_diag[0]), (0.25, 0.0, -1.0, 0.0));
    }

    #[test]
    fn penalty_branches_match_at_minus_sigma() {
        for sigma in [0.2, 0.1, 0.01, 1e-4] {
            let a = penalty_inner_branch(sigma, -sigma);
            let b = penalty_outer_branch(sigma, -sigma);
            assert!((a[0] - sigma / 6.0).abs() < 1e-14 && (b[0] - sigma / 6.0).abs() < 1e-14);
            assert!((a[1] + 0.5).abs() < 1e-14 && (b[1] + 0.5).abs() < 1e-14);
            assert!((a[2] - 1.0 / sigma).abs() <= 1e-14 / sigma && (b[2] - 1.0 / sigma).abs() <= 1e-14 / sigma);
            // C^2 at zero
            let z = penalty_inner_branch(sigma, 0.0);
            assert_eq!(z.map(f64::abs), [0.0; 3]);
        }
    }

    #[test]
    fn sigma_bounds() {
        assert!(RegularizedObstacle::new(0.0, 3).is_err());
        assert!(RegularizedObstacle::new(0.25, 3).is_err());
        assert!(RegularizedObstacle::new(0.1, 1).is_err());
        assert!(RegularizedObstacle::new(0.249, 2).is_ok());
    }

    #[test]
    fn obstacle_derivatives_include_quadratic_part() {
        let p = Potential::obstacle(0.1, 3).unwrap();
        let d = p.eval(&[0.5, 0.5, 0.0]).unwrap();
        assert_eq!(d.grad, vec![-0.5, -0.5, 0.0]);
        assert_eq!(d.hess_diag, vec![-1.0; 3]);
        assert!(p.eval(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn penalty_is_convex() {
        let sigma = 0.05;
        let n = 100_000;
        for k in 0..=n {
            let r = -1.0 + 2.0 * k as f64 / n as f64;
            assert!(penalty(sigma, r)[2] >= 0.0);
        }
    }

    #[test]
    fn penalty_blows_up_as_sigma_shrinks() {
        let v: Vec<f64> = [0.1, 0.01, 0.001].iter().map(|&s| penalty(s, -0.1)[0]).collect();
        assert!(v[0] < v[1] && v[1] < v[2], "{v:?}");
        assert_eq!(penalty(1e-6, 0.3)[0], 0.0);
    }

    #[test]
    fn tangent_projection_examples() {
        let p = project_tangent(&[1.0, 0.0, 0.0]);
        let want = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(project_tangent(&[1.0, 1.0, 1.0]), vec![0.0; 3]);
        let t = [0.25, -0.5, 0.25];
        assert_eq!(project_tangent(&t), t.to_vec());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let models = [Potential::DoubleWell, Potential::obstacle(0.08, 3).unwrap()];
        let points: [&[f64]; 4] = [&[0.3], &[-1.2], &[0.7, -0.05, 0.35], &[-0.2, 0.9, 0.3]];
        for (model, c) in [(models[0], points[0]), (models[0], points[1]), (models[1], points[2]), (models[1], points[3])] {
            let d = model.eval(c).unwrap();
            let mut prev = f64::INFINITY;
            for h in [1e-3, 1e-4, 1e-5] {
                let mut worst: f64 = 0.0;
                for i in 0..c.len() {
                    let at = |s: f64| {
                        let mut x = c.to_vec();
                        x[i] += s;
                        model.eval(&x).unwrap()
                    };
                    let (p, m) = (at(h), at(-h));
                    worst = worst.max(((p.value - m.value) / (2.0 * h) - d.grad[i]).abs());
                    worst = worst.max(((p.grad[i] - m.grad[i]) / (2.0 * h) - d.hess_diag[i]).abs());
                    worst = worst.max(((p.hess_diag[i] - m.hess_diag[i]) / (2.0 * h) - d.third_diag[i]).abs());
                }
                assert!(worst < 50.0 * h * h + 1e-9, "h={h} err={worst}");
                assert!(worst <= prev + 1e-9);
                prev = worst;
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_orthogonal_projector(v in prop::collection::vec(-5.0f64..5.0, 4), w in prop::collection::vec(-5.0f64..5.0, 4)) {
            let pv = project_tangent(&v);
            let pw = project_tangent(&w);
            let lhs: f64 = pv.iter().zip(&w).map(|(a, b)| a * b).sum();
            let rhs: f64 = v.iter().zip(&pw).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-13);
            let ppv = project_tangent(&pv);
            for (a, b) in ppv.iter().zip(&pv) {
                prop_assert!((a - b).abs() < 1e-14);
            }
            prop_assert!(pv.iter().sum::<f64>().abs() < 1e-13);
        }
    }
}
