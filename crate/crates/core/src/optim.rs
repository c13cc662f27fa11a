//! Finite differences and a BFGS minimizer with backtracking line search.
//!
//! The minimizer works in coordinates rescaled by the square root of the
//! diagonal curvature at the start point, so that a unit move changes the
//! objective by roughly one unit along every axis. Gradients and Hessians are
//! taken by fixed-step differences in those coordinates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Finite-difference gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
    /// Coordinates where only a one-sided difference was available.
    pub one_sided: Vec<usize>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Central differences with per-coordinate `steps`, falling back to a
/// one-sided difference where one neighbor evaluates to a non-finite value.
pub fn central_gradient<F>(f: &F, x: &[f64], steps: &[f64]) -> Result<Gradient>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::Degenerate("objective not finite at the evaluation point".into()));
    }
    let comps: Vec<(f64, bool)> = (0..x.len())
        .into_par_iter()
        .map(|k| {
            let h = steps[k];
            let mut xp = x.to_vec();
            xp[k] = x[k] + h;
            let fp = f(&xp);
            xp[k] = x[k] - h;
            let fm = f(&xp);
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => Ok(((fp - fm) / (2.0 * h), false)),
                (true, false) => Ok(((fp - f0) / h, true)),
                (false, true) => Ok(((f0 - fm) / h, true)),
                (false, false) => Err(Error::Degenerate(format!(
                    "objective not finite on either side of coordinate {k}"
                ))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(Gradient {
        one_sided: comps
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.1.then_some(k))
            .collect(),
        values: comps.into_iter().map(|c| c.0).collect(),
    })
}

/// Symmetric finite-difference Hessian with per-coordinate `steps`.
pub fn hessian<F>(f: &F, x: &[f64], steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x.len();
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::Degenerate("objective not finite at the evaluation point".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let eval = |moves: &[(usize, f64)]| {
        let mut xp = x.to_vec();
        for &(k, d) in moves {
            xp[k] += d;
        }
        f(&xp)
    };
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (hi, hj) = (steps[i], steps[j]);
            let v = if i == j {
                (eval(&[(i, hi)]) - 2.0 * f0 + eval(&[(i, -hi)])) / (hi * hi)
            } else {
                (eval(&[(i, hi), (j, hj)]) - eval(&[(i, hi), (j, -hj)]) - eval(&[(i, -hi), (j, hj)])
                    + eval(&[(i, -hi), (j, -hj)]))
                    / (4.0 * hi * hj)
            };
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Degenerate(format!("non-finite Hessian entry ({i}, {j})")))
            }
        })
        .collect::<Result<_>>()?;
    let mut h = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(entries) {
        h[(i, j)] = v;
        h[(j, i)] = v;
    }
    Ok(h)
}

/// Absolute diagonal curvature of `f` at `x`, probing with steps that change
/// `f` by a moderate amount. Flat or erratic directions get `floor`.
pub fn diagonal_curvature<F>(f: &F, x: &[f64], floor: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let f0 = f(x);
    (0..x.len())
        .into_par_iter()
        .map(|k| {
            let mut h = 1e-2 * x[k].abs().max(1.0);
            let mut best = floor;
            for _ in 0..16 {
                let mut xp = x.to_vec();
                xp[k] = x[k] + h;
                let fp = f(&xp);
                xp[k] = x[k] - h;
                let fm = f(&xp);
                let change = (fp - f0).abs().max((fm - f0).abs());
                if !change.is_finite() || change > 10.0 {
                    h /= 10.0;
                    continue;
                }
                best = ((fp - 2.0 * f0 + fm) / (h * h)).abs().max(floor);
                if change < 1e-4 {
                    h *= 10.0;
                    continue;
                }
                break;
            }
            best
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convergence {
    Converged,
    MaxIter,
    LineSearchFail,
}

impl Convergence {
    pub fn as_str(self) -> &'static str {
        match self {
            Convergence::Converged => "converged",
            Convergence::MaxIter => "max-iter",
            Convergence::LineSearchFail => "line-search-fail",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖g‖ < grad_tol · (1 + |f|)` in scaled coordinates.
    pub grad_tol: f64,
    pub max_backtracks: usize,
    /// Difference step in scaled coordinates.
    pub fd_step: f64,
    /// Longest trial step in scaled coordinates.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-4,
            max_backtracks: 40,
            fd_step: 1e-4,
            max_step: 20.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: Convergence,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    /// Scale of each coordinate (square root of the start curvature).
    pub scales: Vec<f64>,
    pub one_sided: bool,
}

/// Minimize `f` from `x0`.
pub fn minimize<F>(f: &F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::Degenerate("objective not finite at the start point".into()));
    }
    let scales: Vec<f64> = diagonal_curvature(f, x0, 1e-8).iter().map(|c| c.sqrt()).collect();
    let to_x = |u: &[f64]| -> Vec<f64> { u.iter().zip(&scales).map(|(u, s)| u / s).collect() };
    let fu = |u: &[f64]| f(&to_x(u));
    let steps = vec![opts.fd_step; n];

    let mut u = DVector::from_iterator(n, x0.iter().zip(&scales).map(|(x, s)| x * s));
    let mut value = f0;
    let mut grad = central_gradient(&fu, u.as_slice(), &steps)?;
    let mut one_sided = !grad.one_sided.is_empty();
    let mut g = DVector::from_vec(grad.values.clone());
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![value];
    let mut status = Convergence::MaxIter;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if g.norm() < opts.grad_tol * (1.0 + value.abs()) {
            status = Convergence::Converged;
            break;
        }
        let mut p = -(&h_inv * &g);
        if g.dot(&p) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            p = -g.clone();
        }
        let longest = p.amax();
        if longest > opts.max_step {
            p *= opts.max_step / longest;
        }
        let slope = g.dot(&p);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = &u + &p * alpha;
            let ft = fu(trial.as_slice());
            if ft.is_finite() && ft <= value + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            if fresh {
                status = Convergence::LineSearchFail;
                break;
            }
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        iterations += 1;
        let new_grad = central_gradient(&fu, trial.as_slice(), &steps)?;
        one_sided |= !new_grad.one_sided.is_empty();
        let g_new = DVector::from_vec(new_grad.values.clone());
        let s = &trial - &u;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // Initial scaling of the inverse Hessian.
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        u = trial;
        value = ft;
        g = g_new;
        grad = new_grad;
        trace.push(value);
    }
    Ok(BfgsResult {
        x: to_x(u.as_slice()),
        value,
        grad_norm: DVector::from_vec(grad.values).norm(),
        iterations,
        status,
        trace,
        scales,
        one_sided,
    })
}

/// Repeated [`minimize`] runs, each rescaled at the previous optimum, until
/// a run no longer improves the objective or `restarts` runs have been made.
///
/// A start point far from the optimum can give a scaling that makes the
/// gradient test pass prematurely; rescaling removes that.
pub fn minimize_with_restarts<F>(f: &F, x0: &[f64], opts: &BfgsOptions, restarts: usize) -> Result<BfgsResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut best = minimize(f, x0, opts)?;
    for _ in 0..restarts {
        if best.iterations >= opts.max_iter {
            break;
        }
        let budget = BfgsOptions {
            max_iter: opts.max_iter - best.iterations,
            ..opts.clone()
        };
        let next = minimize(f, &best.x, &budget)?;
        let gain = best.value - next.value;
        best.trace.extend_from_slice(&next.trace[1..]);
        best.iterations += next.iterations;
        best.one_sided |= next.one_sided;
        best.x = next.x;
        best.value = next.value;
        best.grad_norm = next.grad_norm;
        best.status = next.status;
        best.scales = next.scales;
        if gain <= 1e-8 * (1.0 + best.value.abs()) {
            break;
        }
    }
    Ok(best)
}
