//! Laplace-approximated marginal quasi-log-likelihood for random intercepts.
//!
//! Random effects are written `b = Lambda u` with `u ~ N(0, I)` and
//! `Lambda = diag(sigma_f)` repeated over the levels of each factor. For fixed
//! `(beta, sigma)` the joint objective
//!
//! `h(u) = l(X beta + Z Lambda u) - |u|^2 / 2`
//!
//! is maximized over `u` by Newton's method, and the marginal objective is
//!
//! `F = h(u_hat) - log det(A) / 2`, with `A = I + Lambda Z^T W Z Lambda`,
//!
//! `W = diag(mu (1 - mu))`. At `sigma = 0` this reduces exactly to the
//! fixed-effects quasi-log-likelihood. The gradient of `F` with respect to
//! `beta` and `tau_f = log sigma_f^2` is analytic, including the dependence
//! of `u_hat` and `W` on the parameters.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::mean_and_term;

const MAX_INNER: usize = 100;
const INNER_TOL: f64 = 1e-10;

/// One grouping factor's contribution to the random-effect vector `u`.
#[derive(Debug, Clone)]
pub(crate) struct FactorIndex {
    pub start: usize,
    pub levels: usize,
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct MixedProblem<'a> {
    y: &'a [f64],
    /// Row-major `n x p` design.
    x: Vec<f64>,
    p: usize,
    factors: Vec<FactorIndex>,
    q: usize,
}

/// `A^{-1}`; diagonal when there is a single factor.
enum Precision {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Precision {
    #[inline]
    fn at(&self, a: usize, b: usize) -> f64 {
        match self {
            Precision::Diagonal(d) => {
                if a == b {
                    d[a]
                } else {
                    0.0
                }
            }
            Precision::Dense(m) => m[(a, b)],
        }
    }

    fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Precision::Diagonal(d) => {
                let mut out = v.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            Precision::Dense(m) => m * v,
        }
    }
}

pub(crate) struct Evaluation {
    pub value: f64,
    /// Gradient with respect to `(beta, tau)`.
    pub gradient: Vec<f64>,
    pub modes: Vec<f64>,
}

struct RowState {
    mu: Vec<f64>,
    h: f64,
}

impl<'a> MixedProblem<'a> {
    pub fn new(y: &'a [f64], x: &DMatrix<f64>, factors: Vec<FactorIndex>) -> Self {
        let n = x.nrows();
        let p = x.ncols();
        let mut rows = Vec::with_capacity(n * p);
        for i in 0..n {
            rows.extend(x.row(i).iter());
        }
        let q = factors.iter().map(|f| f.levels).sum();
        Self {
            y,
            x: rows,
            p,
            factors,
            q,
        }
    }

    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn n_modes(&self) -> usize {
        self.q
    }

    pub fn factor(&self, f: usize) -> &FactorIndex {
        &self.factors[f]
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn fixed_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn state(&self, eta0: &[f64], sigma: &[f64], u: &[f64]) -> RowState {
        let n = self.n();
        let mut eta = eta0.to_vec();
        for (f, fac) in self.factors.iter().enumerate() {
            let s = sigma[f];
            for (e, &l) in eta.iter_mut().zip(&fac.assignment) {
                *e += s * u[fac.start + l];
            }
        }
        let mut mu = Vec::with_capacity(n);
        let mut h = 0.0;
        for (i, &e) in eta.iter().enumerate() {
            let (m, term) = mean_and_term(self.y[i], e);
            mu.push(m);
            h += term;
        }
        h -= 0.5 * u.iter().map(|v| v * v).sum::<f64>();
        RowState { mu, h }
    }

    /// `M^T (y - mu) - u`.
    fn mode_gradient(&self, st: &RowState, sigma: &[f64], u: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = u.iter().map(|v| -v).collect();
        for (f, fac) in self.factors.iter().enumerate() {
            let s = sigma[f];
            for (i, &l) in fac.assignment.iter().enumerate() {
                g[fac.start + l] += s * (self.y[i] - st.mu[i]);
            }
        }
        g
    }

    /// Factorizes `A = I + M^T W M`, returning `(A^{-1}, log det A)`.
    fn precision(&self, st: &RowState, sigma: &[f64]) -> Result<(Precision, f64)> {
        if self.factors.len() == 1 {
            let fac = &self.factors[0];
            let s2 = sigma[0] * sigma[0];
            let mut d = vec![1.0; self.q];
            for (i, &l) in fac.assignment.iter().enumerate() {
                let mu = st.mu[i];
                d[l] += s2 * mu * (1.0 - mu);
            }
            let logdet = d.iter().map(|v| v.ln()).sum();
            return Ok((Precision::Diagonal(d.iter().map(|v| 1.0 / v).collect()), logdet));
        }
        let mut a = DMatrix::<f64>::identity(self.q, self.q);
        let ks: Vec<&FactorIndex> = self.factors.iter().collect();
        for i in 0..self.n() {
            let mu = st.mu[i];
            let w = mu * (1.0 - mu);
            for (f, ff) in ks.iter().enumerate() {
                let kf = ff.start + ff.assignment[i];
                for (g, fg) in ks.iter().enumerate() {
                    let kg = fg.start + fg.assignment[i];
                    a[(kf, kg)] += sigma[f] * sigma[g] * w;
                }
            }
        }
        let chol = a.cholesky().ok_or_else(|| Error::NonConvergence {
            iterations: 0,
            gradient_norm: f64::NAN,
            last_iterate: sigma.to_vec(),
        })?;
        let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok((Precision::Dense(chol.inverse()), logdet))
    }

    /// Conditional modes `u_hat` for fixed `(beta, sigma)` by damped Newton.
    fn modes(&self, eta0: &[f64], sigma: &[f64], start: &[f64]) -> Result<(Vec<f64>, RowState)> {
        let mut u = start.to_vec();
        let mut st = self.state(eta0, sigma, &u);
        for _ in 0..MAX_INNER {
            let g = self.mode_gradient(&st, sigma, &u);
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax < INNER_TOL {
                return Ok((u, st));
            }
            let (prec, _) = self.precision(&st, sigma)?;
            let step = prec.apply(&DMatrix::from_column_slice(self.q, 1, &g));
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
                let next = self.state(eta0, sigma, &trial);
                if next.h >= st.h - 1e-14 * st.h.abs() {
                    let moved = step.amax() * t;
                    u = trial;
                    st = next;
                    if moved < 1e-13 {
                        return Ok((u, st));
                    }
                    break;
                }
                t *= 0.5;
                if t < 1e-10 {
                    // No ascent possible at working precision.
                    return Ok((u, st));
                }
            }
        }
        let g = self.mode_gradient(&st, sigma, &u);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < 1e-6 {
            return Ok((u, st));
        }
        Err(Error::NonConvergence {
            iterations: MAX_INNER,
            gradient_norm: gmax,
            last_iterate: u,
        })
    }

    /// Marginal objective only.
    #[cfg(test)]
    pub fn value(&self, beta: &[f64], sigma: &[f64], start: &[f64]) -> Result<(f64, Vec<f64>)> {
        let eta0 = self.fixed_predictor(beta);
        let (u, st) = self.modes(&eta0, sigma, start)?;
        let (_, logdet) = self.precision(&st, sigma)?;
        Ok((st.h - 0.5 * logdet, u))
    }

    /// Curvature of the marginal objective in `beta` at fixed `sigma`,
    /// ignoring the change of the log-determinant term:
    /// `X^T W X - C^T A^{-1} C` with `C = Lambda Z^T W X`. Also returns the modes.
    pub fn beta_information(&self, beta: &[f64], sigma: &[f64], start: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let p = self.p;
        let eta0 = self.fixed_predictor(beta);
        let (u, st) = self.modes(&eta0, sigma, start)?;
        let (prec, _) = self.precision(&st, sigma)?;
        let mut xwx = DMatrix::<f64>::zeros(p, p);
        let mut c = DMatrix::<f64>::zeros(self.q, p);
        for i in 0..self.n() {
            let mu = st.mu[i];
            let w = mu * (1.0 - mu);
            let xi = self.row(i);
            for a in 0..p {
                for b in 0..p {
                    xwx[(a, b)] += w * xi[a] * xi[b];
                }
            }
            for (f, fac) in self.factors.iter().enumerate() {
                let k = fac.start + fac.assignment[i];
                for j in 0..p {
                    c[(k, j)] += sigma[f] * w * xi[j];
                }
            }
        }
        let info = xwx - c.transpose() * prec.apply(&c);
        Ok((info, u))
    }

    /// Marginal objective and its gradient in `(beta, tau)`, `tau_f = log sigma_f^2`.
    pub fn evaluate(&self, beta: &[f64], sigma: &[f64], start: &[f64]) -> Result<Evaluation> {
        let n = self.n();
        let p = self.p;
        let nf = self.factors.len();
        let eta0 = self.fixed_predictor(beta);
        let (u, st) = self.modes(&eta0, sigma, start)?;
        let (prec, logdet) = self.precision(&st, sigma)?;
        let value = st.h - 0.5 * logdet;

        let keys = |i: usize| -> [usize; 2] {
            let mut k = [0usize; 2];
            for (f, fac) in self.factors.iter().enumerate() {
                k[f] = fac.start + fac.assignment[i];
            }
            k
        };

        // Row quantities: residual, weight, dw/deta, leverage m_i^T A^{-1} m_i.
        let mut resid = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        let mut dweight = Vec::with_capacity(n);
        let mut leverage = Vec::with_capacity(n);
        // trace_sigma[f] = 2 sum_i w_i sum_g sigma_g Ainv[k_g(i), k_f(i)]
        let mut trace_sigma = [0.0f64; 2];
        for i in 0..n {
            let mu = st.mu[i];
            let w = mu * (1.0 - mu);
            resid.push(self.y[i] - mu);
            weight.push(w);
            dweight.push(w * (1.0 - 2.0 * mu));
            let k = keys(i);
            let mut lev = 0.0;
            for f in 0..nf {
                let mut col = 0.0;
                for g in 0..nf {
                    col += sigma[g] * prec.at(k[g], k[f]);
                }
                lev += sigma[f] * col;
                trace_sigma[f] += 2.0 * w * col;
            }
            leverage.push(lev);
        }

        // Implicit derivatives of the modes: A du = rhs.
        let mut rhs = DMatrix::<f64>::zeros(self.q, p + nf);
        for i in 0..n {
            let k = keys(i);
            let xi = self.row(i);
            for f in 0..nf {
                let sw = sigma[f] * weight[i];
                for j in 0..p {
                    rhs[(k[f], j)] -= sw * xi[j];
                }
            }
            for f in 0..nf {
                let a = u[k[f]];
                rhs[(k[f], p + f)] += resid[i];
                for g in 0..nf {
                    rhs[(k[g], p + f)] -= sigma[g] * weight[i] * a;
                }
            }
        }
        let du = prec.apply(&rhs);

        let mut gradient = vec![0.0; p + nf];
        for i in 0..n {
            let k = keys(i);
            let xi = self.row(i);
            let curv = dweight[i] * leverage[i];
            for j in 0..p {
                let mut deta = xi[j];
                for f in 0..nf {
                    deta += sigma[f] * du[(k[f], j)];
                }
                gradient[j] += resid[i] * xi[j] - 0.5 * curv * deta;
            }
            for f in 0..nf {
                let a = u[k[f]];
                let mut deta = a;
                for g in 0..nf {
                    deta += sigma[g] * du[(k[g], p + f)];
                }
                gradient[p + f] += resid[i] * a - 0.5 * curv * deta;
            }
        }
        for f in 0..nf {
            gradient[p + f] -= 0.5 * trace_sigma[f];
            // d/dtau = d/dsigma * sigma / 2
            gradient[p + f] *= 0.5 * sigma[f];
        }
        // Clamped rows contribute nothing; guard against stray NaN anyway.
        if gradient.iter().any(|g| !g.is_finite()) || !value.is_finite() {
            return Err(Error::NonConvergence {
                iterations: 0,
                gradient_norm: f64::NAN,
                last_iterate: beta.iter().chain(sigma).copied().collect(),
            });
        }
        Ok(Evaluation {
            value,
            gradient,
            modes: u,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::quasi_term;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem_data(
        n: usize,
        p: usize,
        levels: &[usize],
        crossed: bool,
        seed: u64,
    ) -> (Vec<f64>, DMatrix<f64>, Vec<FactorIndex>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.5..1.5) });
        let mut factors = Vec::new();
        let mut start = 0;
        for (f, &k) in levels.iter().enumerate() {
            let assignment: Vec<usize> = (0..n)
                .map(|i| if crossed || f == 0 { (i * (f + 1) + i / k) % k } else { (i % levels[0]) % k })
                .collect();
            factors.push(FactorIndex {
                start,
                levels: k,
                assignment,
            });
            start += k;
        }
        let y = (0..n)
            .map(|_| {
                let v: f64 = rng.random();
                if v < 0.15 {
                    0.0
                } else if v > 0.85 {
                    1.0
                } else {
                    rng.random()
                }
            })
            .collect();
        (y, x, factors)
    }

    fn check_gradient(levels: &[usize], crossed: bool, seed: u64) {
        let (y, x, factors) = problem_data(60, 3, levels, crossed, seed);
        let prob = MixedProblem::new(&y, &x, factors);
        let beta = [0.2, -0.4, 0.3];
        let tau: Vec<f64> = (0..levels.len()).map(|f| (0.3 + 0.4 * f as f64).ln()).collect();
        let sigma: Vec<f64> = tau.iter().map(|t| (0.5 * t).exp()).collect();
        let zero = vec![0.0; prob.n_modes()];
        let ev = prob.evaluate(&beta, &sigma, &zero).unwrap();
        let h = 1e-5;
        let mut params: Vec<f64> = beta.iter().chain(&tau).copied().collect();
        for j in 0..params.len() {
            let orig = params[j];
            let f = |v: f64, params: &mut Vec<f64>| {
                params[j] = v;
                let b = &params[..3];
                let s: Vec<f64> = params[3..].iter().map(|t| (0.5 * t).exp()).collect();
                prob.value(b, &s, &zero).unwrap().0
            };
            let fd = (f(orig + h, &mut params) - f(orig - h, &mut params)) / (2.0 * h);
            params[j] = orig;
            assert!(
                (fd - ev.gradient[j]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {j}: analytic {} vs fd {fd}",
                ev.gradient[j]
            );
        }
    }

    #[test]
    fn gradient_single_factor() {
        check_gradient(&[6], true, 1);
        check_gradient(&[10], true, 2);
    }

    #[test]
    fn gradient_two_factors() {
        check_gradient(&[5, 4], true, 3);
        check_gradient(&[6, 3], false, 4);
    }

    #[test]
    fn zero_variance_is_fixed_objective() {
        let (y, x, factors) = problem_data(40, 3, &[5], true, 9);
        let prob = MixedProblem::new(&y, &x, factors);
        let beta = [0.1, 0.5, -0.2];
        let (v, _) = prob.value(&beta, &[0.0], &[0.0; 5]).unwrap();
        let fixed: f64 = (0..40)
            .map(|i| {
                let e: f64 = (0..3).map(|j| x[(i, j)] * beta[j]).sum();
                quasi_term(y[i], e)
            })
            .sum();
        assert!((v - fixed).abs() < 1e-10);
    }
}
