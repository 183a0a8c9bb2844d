use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{mean_and_term, ETA_CLAMP};

/// Singular-value ratio below which the standardized design is rejected.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// A fitted linear predictor within this distance of the clamp means the
/// coefficients ran off to infinity.
const SEPARATION_ETA: f64 = ETA_CLAMP - 5.0;

pub(crate) struct FixedFit {
    pub beta: Vec<f64>,
    /// Inverse of the quasi-likelihood information `X^T W X` at the optimum.
    pub covariance: DMatrix<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Rejects designs whose column-standardized singular values span more than
/// ten orders of magnitude.
pub(crate) fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() < x.ncols() {
        return Err(Error::SingularDesign { ratio: 0.0 });
    }
    let mut z = x.clone();
    for mut col in z.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::SingularDesign { ratio: 0.0 });
        }
        col /= norm;
    }
    let sv = z.singular_values();
    let max = sv.max();
    let min = sv.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < RANK_TOL {
        return Err(Error::SingularDesign { ratio });
    }
    Ok(())
}

struct Point {
    objective: f64,
    gradient: DVector<f64>,
    information: DMatrix<f64>,
    max_eta: f64,
}

fn evaluate(y: &[f64], x: &DMatrix<f64>, offset: Option<&[f64]>, beta: &DVector<f64>) -> Point {
    let p = x.ncols();
    let mut eta = x * beta;
    if let Some(off) = offset {
        for (e, o) in eta.iter_mut().zip(off) {
            *e += o;
        }
    }
    let mut objective = 0.0;
    let mut gradient = DVector::zeros(p);
    let mut information = DMatrix::zeros(p, p);
    let mut max_eta: f64 = 0.0;
    for (i, &e) in eta.iter().enumerate() {
        max_eta = max_eta.max(e.abs());
        let (mu, term) = mean_and_term(y[i], e);
        let w = mu * (1.0 - mu);
        let r = y[i] - mu;
        objective += term;
        let row = x.row(i);
        for a in 0..p {
            let xa = row[a];
            gradient[a] += r * xa;
            let wa = w * xa;
            for b in 0..=a {
                information[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            information[(b, a)] = information[(a, b)];
        }
    }
    Point {
        objective,
        gradient,
        information,
        max_eta,
    }
}

/// Newton-Raphson with step halving on the (concave) quasi-log-likelihood.
pub(crate) fn newton(
    y: &[f64],
    x: &DMatrix<f64>,
    offset: Option<&[f64]>,
    max_iterations: usize,
) -> Result<FixedFit> {
    check_rank(x)?;
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut point = evaluate(y, x, offset, &beta);
    let mut iterations = 0;
    loop {
        let gnorm = point.gradient.amax();
        if gnorm < 1e-12 * (1.0 + point.objective.abs()) {
            break;
        }
        if iterations >= max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: gnorm,
                last_iterate: beta.as_slice().to_vec(),
            });
        }
        iterations += 1;
        let step = match point.information.clone().cholesky() {
            Some(ch) => ch.solve(&point.gradient),
            None if point.max_eta >= SEPARATION_ETA => {
                return Err(Error::Separation {
                    max_eta: point.max_eta,
                })
            }
            None => return Err(Error::SingularDesign { ratio: 0.0 }),
        };
        let mut t = 1.0;
        let accepted = loop {
            let trial = &beta + &step * t;
            let next = evaluate(y, x, offset, &trial);
            if next.objective >= point.objective - 1e-13 * point.objective.abs() {
                break Some((trial, next));
            }
            t *= 0.5;
            if t < 1e-10 {
                break None;
            }
        };
        match accepted {
            Some((b, next)) => {
                let change = (next.objective - point.objective).abs();
                let step_size = (&b - &beta).amax();
                beta = b;
                point = next;
                if step_size < 1e-12 && change <= 1e-14 * (1.0 + point.objective.abs()) {
                    break;
                }
            }
            None => break,
        }
    }
    if point.max_eta >= SEPARATION_ETA {
        return Err(Error::Separation {
            max_eta: point.max_eta,
        });
    }
    let gnorm = point.gradient.amax();
    if gnorm > 1e-6 {
        return Err(Error::NonConvergence {
            iterations,
            gradient_norm: gnorm,
            last_iterate: beta.as_slice().to_vec(),
        });
    }
    let covariance = point
        .information
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularDesign { ratio: 0.0 })?;
    Ok(FixedFit {
        beta: beta.as_slice().to_vec(),
        covariance,
        objective: point.objective,
        iterations,
    })
}
