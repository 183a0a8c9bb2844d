//! Box-constrained BFGS with Armijo backtracking, minimizing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub grad_tol: f64,
    /// Largest allowed change of any coordinate in one step.
    pub max_step: f64,
}

pub(crate) struct BfgsResult {
    pub x: Vec<f64>,
    pub iterations: usize,
}

fn projected(g: &DVector<f64>, x: &DVector<f64>, lower: &[f64], upper: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        g.len(),
        (0..g.len()).map(|j| {
            if (x[j] <= lower[j] && g[j] > 0.0) || (x[j] >= upper[j] && g[j] < 0.0) {
                0.0
            } else {
                g[j]
            }
        }),
    )
}

/// Minimizes `objective` from `x0`. `objective` returns `(value, gradient)`.
pub(crate) fn minimize<F>(
    mut objective: F,
    x0: &[f64],
    inverse_hessian: DMatrix<f64>,
    lower: &[f64],
    upper: &[f64],
    opts: BfgsOptions,
) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let clamp = |v: DVector<f64>| {
        DVector::from_iterator(d, (0..d).map(|j| v[j].clamp(lower[j], upper[j])))
    };
    let mut x = clamp(DVector::from_column_slice(x0));
    let (mut f, g) = objective(x.as_slice())?;
    let mut g = DVector::from_vec(g);
    let initial_h = inverse_hessian;
    let mut h = initial_h.clone();
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;

    loop {
        let pg = projected(&g, &x, lower, upper);
        let gnorm = pg.amax();
        if gnorm < opts.grad_tol && last_change < opts.rel_tol {
            break;
        }
        if gnorm < 0.1 * opts.grad_tol {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: gnorm,
                last_iterate: x.as_slice().to_vec(),
            });
        }
        iterations += 1;

        let mut dir = -(&h * &pg);
        for j in 0..d {
            if pg[j] == 0.0 {
                dir[j] = 0.0;
            }
        }
        if dir.dot(&pg) >= 0.0 {
            h = initial_h.clone();
            dir = -(&h * &pg);
            for j in 0..d {
                if pg[j] == 0.0 {
                    dir[j] = 0.0;
                }
            }
            if dir.dot(&pg) >= 0.0 {
                dir = -pg.clone();
            }
        }
        let biggest = dir.amax();
        let mut t = if biggest > opts.max_step {
            opts.max_step / biggest
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..50 {
            let trial = clamp(&x + &dir * t);
            match objective(trial.as_slice()) {
                Ok((ft, gt)) if ft.is_finite() => {
                    let actual = &trial - &x;
                    let predicted = g.dot(&actual);
                    if ft <= f + 1e-4 * predicted || (ft <= f && actual.amax() < 1e-12) {
                        accepted = Some((trial, ft, DVector::from_vec(gt)));
                        break;
                    }
                }
                Ok(_) => {}
                Err(e @ Error::NonConvergence { .. }) if t < 1e-6 => return Err(e),
                Err(Error::NonConvergence { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No descent at working precision: accept the current point if
            // the gradient is already small on the objective's scale.
            if gnorm < opts.grad_tol * (1.0 + f.abs()).sqrt() {
                break;
            }
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: gnorm,
                last_iterate: x.as_slice().to_vec(),
            });
        };
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (H y s^T + s y^T H) + (rho^2 y^T H y + rho) s s^T
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        last_change = (fn_ - f).abs() / f.abs().max(1.0);
        x = xn;
        f = fn_;
        g = gn;
    }
    Ok(BfgsResult {
        x: x.as_slice().to_vec(),
        iterations,
    })
}
