//! Matrix-free conjugate gradients in the lumped L2 inner product.

use crate::error::{Error, Result};
use crate::grid::{dot, Field, SpatialGrid};

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Stop when `||r|| <= rtol * ||b||`.
    pub rtol: f64,
    /// Absolute floor on the residual norm.
    pub atol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rtol: 1e-12,
            atol: 1e-300,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` for an operator that is symmetric positive definite with
/// respect to the grid's weighted inner product. `x` holds the initial guess.
pub fn cg_solve<A>(grid: &SpatialGrid, mut apply: A, b: &Field, x: &mut Field, opts: CgOptions) -> Result<CgOutcome>
where
    A: FnMut(&Field, &mut Field),
{
    let bnorm = dot(b, b, grid).sqrt();
    let target = (opts.rtol * bnorm).max(opts.atol);

    let mut r = b.clone();
    let mut ap = Field::zeros(grid, b.ncomp());
    if x.max_abs() > 0.0 {
        apply(x, &mut ap);
        r.axpy(-1.0, &ap);
    }
    let mut rr = dot(&r, &r, grid);
    if rr.sqrt() <= target || bnorm == 0.0 && rr == 0.0 {
        return Ok(CgOutcome {
            iterations: 0,
            residual: rr.sqrt(),
        });
    }
    let mut p = r.clone();
    for it in 1..=opts.max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap, grid);
        if !(pap > 0.0) {
            return Err(Error::CgBreakdown { curvature: pap });
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_new = dot(&r, &r, grid);
        if rr_new.sqrt() <= target {
            return Ok(CgOutcome {
                iterations: it,
                residual: rr_new.sqrt(),
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        // p = r + beta p
        for (pv, rv) in p.data_mut().iter_mut().zip(r.data()) {
            *pv = rv + beta * *pv;
        }
    }
    Err(Error::CgNotConverged {
        iterations: opts.max_iter,
        residual: rr.sqrt(),
    })
}
