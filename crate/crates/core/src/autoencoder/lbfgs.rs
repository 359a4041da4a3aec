//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once `‖∇f‖ < tolerance`.
    pub tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 20, max_iters: 1000, tolerance: 1e-10, c1: 1e-4, max_backtracks: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIters,
    /// Neither the quasi-Newton step nor a gradient step decreased `f`.
    Stalled,
    /// `f` or its gradient became non-finite; the result holds the last
    /// finite iterate.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub evals: usize,
    /// Best-so-far objective after each iteration (entry 0 is the start).
    pub history: Vec<f64>,
    /// Iterations where the line search failed and a gradient step was used.
    pub fallbacks: usize,
    pub status: Status,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

/// Minimizes `fg`, which returns the objective and its gradient.
pub fn minimize<F>(mut fg: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut evals = 1;
    let mut history = vec![f];
    if !finite(f, &g) {
        return LbfgsResult { x, f, iters: 0, evals, history, fallbacks: 0, status: Status::Diverged };
    }
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut fallbacks = 0;
    let mut last_step = 1.0;
    let mut status = Status::MaxIters;
    let mut iters = 0;

    while iters < opts.max_iters {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < opts.tolerance {
            status = Status::Converged;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match mem.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / gnorm,
        };
        for v in &mut q {
            *v *= gamma;
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            mem.clear();
            dir = g.iter().map(|v| -v / gnorm).collect();
            slope = -gnorm;
        }

        let mut accepted = None;
        let mut alpha = 1.0;
        let mut saw_nonfinite = false;
        for _ in 0..opts.max_backtracks {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            let (fnew, gnew) = fg(&xn);
            evals += 1;
            if finite(fnew, &gnew) {
                if fnew <= f + opts.c1 * alpha * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            } else {
                saw_nonfinite = true;
            }
            alpha *= 0.5;
        }
        if accepted.is_none() {
            // gradient step, halving its length until anything improves
            fallbacks += 1;
            let mut h = 0.5 * last_step / gnorm;
            for _ in 0..opts.max_backtracks {
                let xn: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - h * b).collect();
                let (fnew, gnew) = fg(&xn);
                evals += 1;
                if finite(fnew, &gnew) && fnew < f {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
                saw_nonfinite |= !finite(fnew, &gnew);
                h *= 0.5;
            }
            mem.clear();
        }
        let Some((xn, fnew, gnew)) = accepted else {
            status = if saw_nonfinite { Status::Diverged } else { Status::Stalled };
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        last_step = dot(&s, &s).sqrt();
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fnew;
        g = gnew;
        iters += 1;
        history.push(f);
    }
    LbfgsResult { x, f, iters, evals, history, fallbacks, status }
}
