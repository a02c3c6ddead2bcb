//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The line search is the bracketing/zoom scheme of Nocedal & Wright
//! (Algorithms 3.5 and 3.6) with safeguarded cubic interpolation. Value
//! comparisons, both the sufficient-decrease test and the test against
//! the bracket's low end, carry a few ulps of slack on `f`, so that near
//! the optimum, where objective differences fall below rounding, the
//! bracket is steered by the (still accurate) directional derivative.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{GsrError, Result};

#[derive(Debug, Clone, Copy)]
pub struct LbfgsSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const MAX_LINE_SEARCH_EVALS: usize = 50;

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
    grad: Option<DVector<f64>>,
}

/// Minimizes `f`, where `eval(x)` returns `(f(x), ∇f(x))`.
pub fn minimize<F>(mut eval: F, x0: DVector<f64>, s: &LbfgsSettings) -> Result<LbfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut f, mut g) = eval(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(GsrError::NonFinite("objective at the initial point".into()));
    }
    let mut history: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(s.memory);

    for iter in 0..s.max_iters {
        let gnorm = g.amax();
        if gnorm <= s.grad_tol {
            return Ok(LbfgsOutcome {
                x,
                value: f,
                grad_norm: gnorm,
                iterations: iter,
            });
        }

        let mut dir = -two_loop(&g, &history);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            // curvature memory went stale; restart from steepest descent
            history.clear();
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / g.norm()).min(1.0)
        } else {
            1.0
        };

        let step = line_search(&mut eval, &x, f, slope, &dir, alpha0, s).map_err(|reason| {
            GsrError::LineSearch { iter, reason }
        })?;
        let x_new = &x + &dir * step.alpha;
        let (f_new, g_new) = step.eval;

        let sv = &x_new - &x;
        let yv = &g_new - &g;
        let sy = sv.dot(&yv);
        if sy > f64::EPSILON * sv.norm() * yv.norm() {
            if history.len() == s.memory {
                history.pop_front();
            }
            history.push_back((sv, yv, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }

    let gnorm = g.amax();
    if gnorm <= s.grad_tol {
        return Ok(LbfgsOutcome {
            x,
            value: f,
            grad_norm: gnorm,
            iterations: s.max_iters,
        });
    }
    Err(GsrError::NotConverged {
        iters: s.max_iters,
        grad_norm: gnorm,
    })
}

/// `H_k·g` by the two-loop recursion, with `H_0 = (sᵀy / yᵀy)·I`.
fn two_loop(g: &DVector<f64>, history: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (sv, yv, rho) in history.iter().rev() {
        let a = rho * sv.dot(&q);
        q.axpy(-a, yv, 1.0);
        alphas.push(a);
    }
    if let Some((sv, yv, _)) = history.back() {
        q *= sv.dot(yv) / yv.dot(yv);
    }
    for ((sv, yv, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * yv.dot(&q);
        q.axpy(a - b, sv, 1.0);
    }
    q
}

struct Accepted {
    alpha: f64,
    eval: (f64, DVector<f64>),
}

fn line_search<F>(
    eval: &mut F,
    x: &DVector<f64>,
    f0: f64,
    slope0: f64,
    dir: &DVector<f64>,
    alpha0: f64,
    s: &LbfgsSettings,
) -> std::result::Result<Accepted, String>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let slack = 8.0 * f64::EPSILON * (f0.abs() + 1.0);
    let armijo = |alpha: f64, value: f64| value <= f0 + s.c1 * alpha * slope0 + slack;
    let worse = |value: f64, than: f64| value > than + slack;
    let mut evals = 0;
    let mut probe = |alpha: f64, evals: &mut usize| {
        *evals += 1;
        let (value, g) = eval(&(x + dir * alpha));
        let slope = g.dot(dir);
        Point {
            alpha,
            value,
            slope,
            grad: Some(g),
        }
    };

    let mut prev = Point {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        grad: None,
    };
    let mut alpha = alpha0;
    let mut first = true;
    loop {
        if evals >= MAX_LINE_SEARCH_EVALS {
            return Err("bracketing phase exhausted its evaluations".into());
        }
        let cur = probe(alpha, &mut evals);
        if !cur.value.is_finite() || !cur.slope.is_finite() {
            // overshoot into a non-finite region: shrink and retry
            alpha = 0.5 * (prev.alpha + alpha);
            continue;
        }
        if !armijo(cur.alpha, cur.value) || (!first && worse(cur.value, prev.value)) {
            return zoom(prev, cur, &mut probe, &mut evals, &armijo, &worse, slope0, s);
        }
        if cur.slope.abs() <= -s.c2 * slope0 {
            return Ok(cur.accept());
        }
        if cur.slope >= 0.0 {
            return zoom(cur, prev, &mut probe, &mut evals, &armijo, &worse, slope0, s);
        }
        first = false;
        alpha = cur.alpha * 2.0;
        prev = cur;
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<P, A, W>(
    mut lo: Point,
    mut hi: Point,
    probe: &mut P,
    evals: &mut usize,
    armijo: &A,
    worse: &W,
    slope0: f64,
    s: &LbfgsSettings,
) -> std::result::Result<Accepted, String>
where
    P: FnMut(f64, &mut usize) -> Point,
    A: Fn(f64, f64) -> bool,
    W: Fn(f64, f64) -> bool,
{
    while *evals < MAX_LINE_SEARCH_EVALS {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1.0) {
            break;
        }
        let guess = cubic_minimizer(&lo, &hi).unwrap_or(0.5 * (a + b));
        let alpha = guess.clamp(a + 0.1 * width, b - 0.1 * width);
        let cur = probe(alpha, evals);
        if !cur.value.is_finite() || !armijo(cur.alpha, cur.value) || worse(cur.value, lo.value) {
            hi = cur;
            continue;
        }
        if cur.slope.abs() <= -s.c2 * slope0 {
            return Ok(cur.accept());
        }
        if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
            hi = lo;
        }
        lo = cur;
    }
    // Curvature condition unmet, but `lo` still satisfies sufficient
    // decrease; near the optimum rounding makes the bracket collapse first.
    if lo.alpha > 0.0 {
        return Ok(lo.accept());
    }
    Err(format!(
        "no acceptable step in [{:.3e}, {:.3e}]",
        lo.alpha.min(hi.alpha),
        lo.alpha.max(hi.alpha)
    ))
}

impl Point {
    fn accept(self) -> Accepted {
        Accepted {
            alpha: self.alpha,
            eval: (self.value, self.grad.expect("probed point carries its gradient")),
        }
    }
}

/// Minimizer of the cubic matching values and slopes at both points.
fn cubic_minimizer(p: &Point, q: &Point) -> Option<f64> {
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = disc.sqrt().copysign(q.alpha - p.alpha);
    let t = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(tol: f64) -> LbfgsSettings {
        LbfgsSettings {
            grad_tol: tol,
            max_iters: 500,
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
        }
    }

    #[test]
    fn rosenbrock() {
        let eval = |v: &DVector<f64>| {
            let (x, y) = (v[0], v[1]);
            let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                200.0 * (y - x * x),
            ]);
            (f, g)
        };
        let out = minimize(eval, DVector::from_vec(vec![-1.2, 1.0]), &settings(1e-10)).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-8, "{:?}", out.x);
        assert!((out.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ill_conditioned_quadratic_to_tight_tolerance() {
        let scales = [1e-2, 1.0, 30.0, 1e3];
        let eval = |v: &DVector<f64>| {
            let f = v.iter().zip(scales).map(|(x, s)| 0.5 * s * (x - 1.0) * (x - 1.0)).sum();
            let g = DVector::from_iterator(4, v.iter().zip(scales).map(|(x, s)| s * (x - 1.0)));
            (f, g)
        };
        let out = minimize(eval, DVector::zeros(4), &settings(1e-12)).unwrap();
        assert!(out.grad_norm <= 1e-12);
    }

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        // f(a) = (a - 2)^2 (a + 1): local min at 2
        let f = |a: f64| (a - 2.0).powi(2) * (a + 1.0);
        let df = |a: f64| 2.0 * (a - 2.0) * (a + 1.0) + (a - 2.0).powi(2);
        let p = Point { alpha: 1.0, value: f(1.0), slope: df(1.0), grad: None };
        let q = Point { alpha: 3.0, value: f(3.0), slope: df(3.0), grad: None };
        assert!((cubic_minimizer(&p, &q).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let eval = |v: &DVector<f64>| (0.5 * v.norm_squared(), v.clone());
        let s = LbfgsSettings {
            max_iters: 0,
            ..settings(1e-12)
        };
        let err = minimize(eval, DVector::from_vec(vec![1.0]), &s).unwrap_err();
        assert!(matches!(err, GsrError::NotConverged { iters: 0, .. }));
    }
}
