//! Limited-memory BFGS with a backtracking line search.
//!
//! Only accepted iterates enter the trace. A step is accepted on sufficient
//! decrease (Armijo), or, once the objective differences sink to rounding
//! level, on the approximate Wolfe conditions: the value may not rise by more
//! than a few ulps and the directional derivative must shrink. Without the
//! second rule strongly penalized problems cannot reach tight gradient
//! tolerances, since the decrease they still need is below f64 resolution.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    /// Stop once the gradient infinity-norm falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 10_000,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationLimit,
    /// No decrease could be found along the search or steepest-descent direction.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(g: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (k, p) in pairs.iter().enumerate().rev() {
        alpha[k] = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= alpha[k] * yi);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, p) in pairs.iter().enumerate() {
        let beta = p.rho * dot(&p.y, &q);
        q.iter_mut()
            .zip(&p.s)
            .for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f`, which returns the objective and writes its gradient.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const C1: f64 = 1e-4;
    const SIGMA: f64 = 0.9;
    const DELTA: f64 = 0.1;
    const MAX_BACKTRACK: usize = 60;

    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut trace = vec![fx];
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&g) <= opts.tol {
            break Termination::Converged;
        }
        if iterations >= opts.max_iter {
            break Termination::IterationLimit;
        }

        let mut accepted = false;
        let mut f_acc = fx;
        // First try the quasi-Newton direction, then plain steepest descent.
        for attempt in 0..2 {
            let (d, step0) = if attempt == 0 && !pairs.is_empty() {
                (two_loop(&g, &pairs), 1.0)
            } else {
                let gn = dot(&g, &g).sqrt();
                (g.iter().map(|v| -v).collect::<Vec<_>>(), (1.0 / gn).min(1.0))
            };
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                pairs.clear();
                continue;
            }
            let mut step = step0;
            let mut best: Option<(f64, f64)> = None;
            for _ in 0..MAX_BACKTRACK {
                x_new
                    .iter_mut()
                    .zip(&x)
                    .zip(&d)
                    .for_each(|((xn, xi), di)| *xn = xi + step * di);
                let f_try = f(&x_new, &mut g_new);
                if f_try.is_finite() {
                    let noise = 64.0 * f64::EPSILON * fx.abs().max(f64::MIN_POSITIVE);
                    let approx_wolfe = f_try <= fx + noise && {
                        let slope_new = dot(&g_new, &d);
                        slope_new >= SIGMA * slope && slope_new <= (2.0 * DELTA - 1.0) * slope
                    };
                    if f_try <= fx + C1 * step * slope || approx_wolfe {
                        best = None;
                        f_acc = f_try;
                        accepted = true;
                        break;
                    }
                    if f_try < fx && best.is_none_or(|(bf, _)| f_try < bf) {
                        best = Some((f_try, step));
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                if let Some((_, s)) = best {
                    x_new
                        .iter_mut()
                        .zip(&x)
                        .zip(&d)
                        .for_each(|((xn, xi), di)| *xn = xi + s * di);
                    f_acc = f(&x_new, &mut g_new);
                    accepted = true;
                }
            }
            if accepted {
                break;
            }
            pairs.clear();
        }
        if !accepted {
            break Termination::Stalled;
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_acc;
        trace.push(fx);
        iterations += 1;
    };

    Minimum {
        grad_inf: inf_norm(&g),
        x,
        value: fx,
        iterations,
        termination,
        trace,
    }
}
