//! Uniform structured grids on a rectangle.
//!
//! Fields are stored node-centered, component-major, and row-major inside each
//! component (`j` outer, `i` inner). The discrete Laplacian uses ghost-node
//! reflection for the homogeneous Neumann condition, and inner products use
//! lumped (trapezoidal) weights. With these two choices `W * Laplacian` is a
//! symmetric matrix, so the Laplacian is self-adjoint in the weighted inner
//! product.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Grids with at least this many nodes run stencil loops in parallel.
const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Clone, Debug)]
pub struct SpatialGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    weights: Arc<[f64]>,
}

impl PartialEq for SpatialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.y_min == other.y_min
            && self.y_max == other.y_max
    }
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes per axis, got {nx}x{ny}"
            )));
        }
        if !(x_max > x_min) || !(y_max > y_min) || !(x_max - x_min).is_finite() || !(y_max - y_min).is_finite() {
            return Err(Error::InvalidGrid(format!(
                "degenerate domain ({x_min}, {x_max}) x ({y_min}, {y_max})"
            )));
        }
        let hx = (x_max - x_min) / (nx - 1) as f64;
        let hy = (y_max - y_min) / (ny - 1) as f64;
        let axis = |n: usize, h: f64, k: usize| if k == 0 || k == n - 1 { 0.5 * h } else { h };
        let mut weights = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let wy = axis(ny, hy, j);
            for i in 0..nx {
                weights.push(axis(nx, hx, i) * wy);
            }
        }
        Ok(SpatialGrid {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
            hx,
            hy,
            weights: weights.into(),
        })
    }

    /// Square grid on `(lo, hi)^2`.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(lo, hi, lo, hi, n, n)
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x_min + i as f64 * self.hx, self.y_min + j as f64 * self.hy)
    }

    /// Position of the node with flat index `k`.
    #[inline]
    pub fn node_position(&self, k: usize) -> (f64, f64) {
        self.position(k % self.nx, k / self.nx)
    }

    /// Lumped quadrature weights, one per node.
    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub(crate) fn parallel(&self) -> bool {
        self.nodes() >= PAR_THRESHOLD
    }

    /// Weighted sum `sum_k w_k a_k b_k` over one scalar component.
    ///
    /// Rows are summed first and the row sums are then added in order, so the
    /// result does not depend on the number of worker threads.
    pub(crate) fn weighted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let nx = self.nx;
        let row = |j: usize| {
            let off = j * nx;
            let mut s = 0.0;
            for i in 0..nx {
                s += self.weights[off + i] * a[off + i] * b[off + i];
            }
            s
        };
        if self.parallel() {
            let rows: Vec<f64> = (0..self.ny).into_par_iter().map(row).collect();
            rows.iter().sum()
        } else {
            (0..self.ny).map(row).sum()
        }
    }

    /// Five-point Neumann Laplacian of one scalar component, written to `out`.
    pub(crate) fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let cx = 1.0 / (self.hx * self.hx);
        let cy = 1.0 / (self.hy * self.hy);
        let row = |j: usize, out_row: &mut [f64]| {
            let jm = if j == 0 { 1 } else { j - 1 };
            let jp = if j == ny - 1 { ny - 2 } else { j + 1 };
            let (r, rm, rp) = (j * nx, jm * nx, jp * nx);
            for i in 0..nx {
                let im = if i == 0 { 1 } else { i - 1 };
                let ip = if i == nx - 1 { nx - 2 } else { i + 1 };
                let c = u[r + i];
                out_row[i] = cx * (u[r + im] - 2.0 * c + u[r + ip]) + cy * (u[rm + i] - 2.0 * c + u[rp + i]);
            }
        };
        if self.parallel() {
            out.par_chunks_mut(nx).enumerate().for_each(|(j, o)| row(j, o));
        } else {
            out.chunks_mut(nx).enumerate().for_each(|(j, o)| row(j, o));
        }
    }

    /// `sum over edges` of weighted squared forward differences, i.e.
    /// `<-Laplacian u, u>` computed edge by edge.
    pub(crate) fn dirichlet_form(&self, u: &[f64]) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let axis = |n: usize, h: f64, k: usize| if k == 0 || k == n - 1 { 0.5 * h } else { h };
        let mut total = 0.0;
        for j in 0..ny {
            let wy = axis(ny, self.hy, j);
            let mut row = 0.0;
            for i in 0..nx {
                let k = j * nx + i;
                if i + 1 < nx {
                    let d = (u[k + 1] - u[k]) / self.hx;
                    row += self.hx * wy * d * d;
                }
                if j + 1 < ny {
                    let d = (u[k + nx] - u[k]) / self.hy;
                    row += self.hy * axis(nx, self.hx, i) * d * d;
                }
            }
            total += row;
        }
        total
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("time grid needs at least one step".into()));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
        }
        Ok(TimeGrid { t_final, steps })
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    #[inline]
    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.tau()
    }

    /// Right-endpoint rectangle rule over samples at `t_1..t_M`.
    pub fn integrate(&self, samples: &[f64]) -> Result<f64> {
        if samples.len() != self.steps {
            return Err(Error::DimensionMismatch {
                expected: self.steps,
                found: samples.len(),
            });
        }
        Ok(self.tau() * samples.iter().sum::<f64>())
    }
}

/// Nodal values of a scalar (`ncomp == 1`) or vector-valued field.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    ncomp: usize,
    nodes: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &SpatialGrid, ncomp: usize) -> Self {
        Self::constant(grid, ncomp, 0.0)
    }

    pub fn constant(grid: &SpatialGrid, ncomp: usize, value: f64) -> Self {
        assert!(ncomp >= 1, "field needs at least one component");
        Field {
            ncomp,
            nodes: grid.nodes(),
            data: vec![value; ncomp * grid.nodes()],
        }
    }

    /// Field with the same value vector at every node.
    pub fn uniform(grid: &SpatialGrid, value: &[f64]) -> Self {
        let mut f = Self::zeros(grid, value.len());
        for (k, v) in value.iter().enumerate() {
            f.component_mut(k).fill(*v);
        }
        f
    }

    /// Scalar field from a function of position.
    pub fn from_fn(grid: &SpatialGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = (0..grid.nodes())
            .map(|k| {
                let (x, y) = grid.node_position(k);
                f(x, y)
            })
            .collect();
        Field {
            ncomp: 1,
            nodes: grid.nodes(),
            data,
        }
    }

    /// Vector field from a function writing all components at a position.
    pub fn from_fn_vector(grid: &SpatialGrid, ncomp: usize, f: impl Fn(f64, f64, &mut [f64])) -> Self {
        let mut out = Self::zeros(grid, ncomp);
        let mut buf = vec![0.0; ncomp];
        for node in 0..grid.nodes() {
            let (x, y) = grid.node_position(node);
            f(x, y, &mut buf);
            out.set_node(node, &buf);
        }
        out
    }

    /// Wraps raw component-major data.
    pub fn from_data(grid: &SpatialGrid, ncomp: usize, data: Vec<f64>) -> Result<Self> {
        if ncomp == 0 || data.len() != ncomp * grid.nodes() {
            return Err(Error::DimensionMismatch {
                expected: ncomp * grid.nodes(),
                found: data.len(),
            });
        }
        Ok(Field {
            ncomp,
            nodes: grid.nodes(),
            data,
        })
    }

    #[inline]
    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn component(&self, k: usize) -> &[f64] {
        &self.data[k * self.nodes..(k + 1) * self.nodes]
    }

    #[inline]
    pub fn component_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.nodes..(k + 1) * self.nodes]
    }

    #[inline]
    pub fn get(&self, k: usize, node: usize) -> f64 {
        self.data[k * self.nodes + node]
    }

    pub fn node(&self, node: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.ncomp) {
            *o = self.data[k * self.nodes + node];
        }
    }

    pub fn set_node(&mut self, node: usize, values: &[f64]) {
        for (k, v) in values.iter().enumerate().take(self.ncomp) {
            self.data[k * self.nodes + node] = *v;
        }
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.ncomp == other.ncomp && self.nodes == other.nodes
    }

    pub(crate) fn check_shape(&self, other: &Field) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.data.len(),
                found: other.data.len(),
            })
        }
    }

    pub(crate) fn check_grid(&self, grid: &SpatialGrid) -> Result<()> {
        if self.nodes == grid.nodes() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: grid.nodes(),
                found: self.nodes,
            })
        }
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Field) {
        debug_assert!(self.same_shape(x));
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `a - b`
    pub fn difference(a: &Field, b: &Field) -> Field {
        let mut out = a.clone();
        out.axpy(-1.0, b);
        out
    }

    /// Componentwise sum at each node, as a scalar field.
    pub fn component_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.nodes];
        for k in 0..self.ncomp {
            for (acc, v) in s.iter_mut().zip(self.component(k)) {
                *acc += v;
            }
        }
        s
    }
}

/// Five-point Laplacian with homogeneous Neumann reflection, per component.
pub fn laplacian_apply(field: &Field, grid: &SpatialGrid) -> Result<Field> {
    field.check_grid(grid)?;
    let mut out = Field::zeros(grid, field.ncomp());
    laplacian_into(field, grid, &mut out);
    Ok(out)
}

pub(crate) fn laplacian_into(field: &Field, grid: &SpatialGrid, out: &mut Field) {
    for k in 0..field.ncomp() {
        let nodes = field.nodes;
        let src = &field.data[k * nodes..(k + 1) * nodes];
        grid.laplacian_into(src, out.component_mut(k));
    }
}

/// Lumped L2 inner product, summed over components.
pub fn inner_product(a: &Field, b: &Field, grid: &SpatialGrid) -> Result<f64> {
    a.check_shape(b)?;
    a.check_grid(grid)?;
    Ok(dot(a, b, grid))
}

#[inline]
pub(crate) fn dot(a: &Field, b: &Field, grid: &SpatialGrid) -> f64 {
    (0..a.ncomp()).map(|k| grid.weighted_dot(a.component(k), b.component(k))).sum()
}

/// Lumped L2 norm `sqrt(<a, a>_W)`.
pub fn norm(a: &Field, grid: &SpatialGrid) -> f64 {
    dot(a, a, grid).sqrt()
}

/// Right-endpoint rectangle rule `tau * sum_{m=1}^{M} g_m`.
pub fn time_integral(samples: &[f64], time: &TimeGrid) -> Result<f64> {
    time.integrate(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn laplacian_of_constant_vanishes() {
        let g = SpatialGrid::new(-1.0, 2.0, 0.0, 1.0, 7, 5).unwrap();
        let lap = laplacian_apply(&Field::constant(&g, 1, 1.0), &g).unwrap();
        assert!(lap.max_abs() == 0.0);
    }

    #[test]
    fn laplacian_center_spike() {
        let g = SpatialGrid::square(0.0, 2.0, 3).unwrap();
        let mut f = Field::zeros(&g, 1);
        f.data_mut()[g.index(1, 1)] = 1.0;
        let lap = laplacian_apply(&f, &g).unwrap();
        assert_eq!(lap.get(0, g.index(1, 1)), -4.0);
        for (i, j) in [(0, 1), (2, 1), (1, 0), (1, 2)] {
            // Reflection doubles the inward neighbor in the normal direction;
            // scaled by the halved boundary weight the stiffness entry is +1.
            let k = g.index(i, j);
            assert_eq!(lap.get(0, k), 2.0, "node ({i},{j})");
            assert_eq!(g.weights()[k] * lap.get(0, k), 1.0);
        }
        assert_eq!(g.weights()[g.index(1, 1)] * lap.get(0, g.index(1, 1)), -4.0);
        for (i, j) in [(0, 0), (2, 0), (0, 2), (2, 2)] {
            assert_eq!(lap.get(0, g.index(i, j)), 0.0);
        }
    }

    #[test]
    fn laplacian_exact_for_quadratics() {
        let g = SpatialGrid::square(-1.0, 1.0, 65).unwrap();
        let f = Field::from_fn(&g, |x, _| x * x);
        let lap = laplacian_apply(&f, &g).unwrap();
        for j in 1..64 {
            for i in 1..64 {
                assert!((lap.get(0, g.index(i, j)) - 2.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_rejects_wrong_size() {
        let g = SpatialGrid::square(0.0, 1.0, 4).unwrap();
        let other = SpatialGrid::square(0.0, 1.0, 5).unwrap();
        let f = Field::zeros(&other, 1);
        assert!(matches!(laplacian_apply(&f, &g), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn weights_sum_to_area() {
        let g = SpatialGrid::new(-1.0, 1.0, -1.0, 1.0, 17, 9).unwrap();
        let one = Field::constant(&g, 1, 1.0);
        assert_eq!(inner_product(&one, &one, &g).unwrap(), 4.0);
        assert!(g.weights().iter().all(|w| *w > 0.0));
        let zero = Field::zeros(&g, 1);
        assert_eq!(inner_product(&one, &zero, &g).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_of_x_squared() {
        let g = SpatialGrid::square(-1.0, 1.0, 129).unwrap();
        let x = Field::from_fn(&g, |x, _| x);
        let v = inner_product(&x, &x, &g).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn inner_product_shape_mismatch() {
        let g = SpatialGrid::square(0.0, 1.0, 4).unwrap();
        let a = Field::zeros(&g, 1);
        let b = Field::zeros(&g, 2);
        assert!(inner_product(&a, &b, &g).is_err());
    }

    #[test]
    fn rectangle_rule() {
        let t = TimeGrid::new(1.0, 10).unwrap();
        assert!((time_integral(&[1.0; 10], &t).unwrap() - 1.0).abs() < 1e-15);
        let s: Vec<f64> = (1..=10).map(|m| t.time(m)).collect();
        assert!((time_integral(&s, &t).unwrap() - 0.55).abs() < 1e-15);
        assert!(time_integral(&s[..9], &t).is_err());
    }

    #[test]
    fn rectangle_rule_first_order() {
        let err = |m: usize| {
            let t = TimeGrid::new(1.0, m).unwrap();
            let s: Vec<f64> = (1..=m).map(|k| t.time(k).powi(2)).collect();
            (time_integral(&s, &t).unwrap() - 1.0 / 3.0).abs()
        };
        let (e10, e1000) = (err(10), err(1000));
        // error ~ tau/2 for the right-endpoint rule
        assert!((e10 / e1000 - 100.0).abs() < 5.0, "{e10} {e1000}");
    }

    #[test]
    fn dirichlet_form_matches_laplacian() {
        let g = SpatialGrid::new(0.0, 1.0, -0.5, 0.5, 9, 12).unwrap();
        let u = Field::from_fn(&g, |x, y| (3.0 * x).sin() * y + x * x);
        let lap = laplacian_apply(&u, &g).unwrap();
        let a = -inner_product(&lap, &u, &g).unwrap();
        let b = g.dirichlet_form(u.data());
        assert!((a - b).abs() < 1e-12 * b.abs());
    }

    fn random_field(g: &SpatialGrid, seed: u64) -> Field {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..g.nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Field::from_data(g, 1, data).unwrap()
    }

    proptest! {
        #[test]
        fn laplacian_is_self_adjoint(seed in 0u64..1000, nx in 2usize..20, ny in 2usize..20) {
            let g = SpatialGrid::new(-1.0, 1.0, 0.0, 0.7, nx, ny).unwrap();
            let a = random_field(&g, seed);
            let b = random_field(&g, seed + 7919);
            let la = laplacian_apply(&a, &g).unwrap();
            let lb = laplacian_apply(&b, &g).unwrap();
            let lhs = inner_product(&la, &b, &g).unwrap();
            let rhs = inner_product(&a, &lb, &g).unwrap();
            let scale = norm(&a, &g) * norm(&b, &g);
            // operator norm ~ 8/h^2 enters the round-off
            let opnorm = 4.0 / (g.hx * g.hx) + 4.0 / (g.hy * g.hy);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale * opnorm.max(1.0), "{} vs {}", lhs, rhs);
            let one = Field::constant(&g, 1, 1.0);
            prop_assert!(inner_product(&la, &one, &g).unwrap().abs() <= 1e-12 * norm(&a, &g) * opnorm.max(1.0));
        }
    }
}
