//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the gradient sup-norm is at or below this.
    pub gtol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Trial steps allowed per strong-Wolfe search (bracketing plus zoom).
    pub max_trials: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iter: 5000, gtol: 1e-4, c1: 1e-4, c2: 0.9, max_trials: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// Neither the Wolfe search nor backtracking found a decrease.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_sup: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
    /// Steps that needed the backtracking fallback.
    pub fallback_steps: usize,
}

/// Objective diverged to a non-finite value at the start point.
#[derive(Debug, Clone)]
pub struct NonFiniteObjective {
    pub x: Vec<f64>,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Trial {
    alpha: f64,
    f: f64,
    d: f64,
}

struct Evaluator<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    p: &'a [f64],
    x_trial: Vec<f64>,
    g_trial: Vec<f64>,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Evaluator<'_, F> {
    fn eval(&mut self, alpha: f64) -> Trial {
        self.evals += 1;
        for ((xt, &xi), &pi) in self.x_trial.iter_mut().zip(self.x).zip(self.p) {
            *xt = xi + alpha * pi;
        }
        let f = (self.objective)(&self.x_trial, &mut self.g_trial);
        let d = dot(&self.g_trial, self.p);
        Trial { alpha, f, d }
    }
}

/// Minimizer of the cubic through two points with known slopes, or `None`
/// when it does not exist.
fn cubic_min(a: &Trial, b: &Trial) -> Option<f64> {
    if !a.f.is_finite() || !b.f.is_finite() {
        return None;
    }
    let d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.d * b.d;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.d - a.d + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

/// Strong-Wolfe search (bracketing phase, then zoom with safeguarded cubic
/// interpolation). Leaves the accepted point in the evaluator's trial buffers.
fn wolfe_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    ev: &mut Evaluator<'_, F>,
    f0: f64,
    d0: f64,
    alpha0: f64,
    opts: &LbfgsOptions,
) -> Option<Trial> {
    let sufficient = |t: &Trial| t.f.is_finite() && t.f <= f0 + opts.c1 * t.alpha * d0;
    let curvature = |t: &Trial| t.d.abs() <= -opts.c2 * d0;

    let mut prev = Trial { alpha: 0.0, f: f0, d: d0 };
    let mut alpha = alpha0;
    let mut trials = 0;
    let (mut lo, mut hi) = loop {
        if trials >= opts.max_trials {
            return None;
        }
        trials += 1;
        let t = ev.eval(alpha);
        if !sufficient(&t) || (trials > 1 && t.f >= prev.f) {
            break (prev, t);
        }
        if curvature(&t) {
            return Some(t);
        }
        if t.d >= 0.0 {
            break (t, prev);
        }
        alpha = t.alpha * 2.0;
        prev = t;
    };

    while trials < opts.max_trials {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= f64::EPSILON * b.max(1.0) {
            return None;
        }
        let guard = 0.1 * width;
        let alpha = match cubic_min(&lo, &hi) {
            Some(t) if t >= a + guard && t <= b - guard => t,
            _ => 0.5 * (a + b),
        };
        trials += 1;
        let t = ev.eval(alpha);
        if !sufficient(&t) || t.f >= lo.f {
            hi = t;
        } else {
            if curvature(&t) {
                return Some(t);
            }
            if t.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    None
}

/// Armijo backtracking from `alpha0`, halving the step.
fn backtrack<F: FnMut(&[f64], &mut [f64]) -> f64>(
    ev: &mut Evaluator<'_, F>,
    f0: f64,
    d0: f64,
    alpha0: f64,
    c1: f64,
) -> Option<Trial> {
    let mut alpha = alpha0;
    for _ in 0..60 {
        let t = ev.eval(alpha);
        if t.f.is_finite() && t.f <= f0 + c1 * alpha * d0 {
            return Some(t);
        }
        alpha *= 0.5;
    }
    None
}

/// Minimizes `objective` starting from `x0`. The objective writes the
/// gradient into its second argument and returns the value.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsResult, NonFiniteObjective>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(NonFiniteObjective { x, iterations: 0 });
    }
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut fallback_steps = 0;
    let mut p = vec![0.0; n];
    let mut alpha_hist = vec![0.0; opts.memory.max(1)];

    let termination = loop {
        if sup_norm(&g) <= opts.gtol {
            break Termination::GradientTolerance;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }

        // two-loop recursion: p = -H g
        p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &p);
            alpha_hist[k] = a;
            p.iter_mut().zip(y).for_each(|(pi, yi)| *pi -= a * yi);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            p.iter_mut().for_each(|pi| *pi *= gamma);
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let beta = rho * dot(y, &p);
            let a = alpha_hist[k];
            p.iter_mut().zip(s).for_each(|(pi, si)| *pi += (a - beta) * si);
        }
        let mut d0 = dot(&g, &p);
        if d0 >= 0.0 || !d0.is_finite() {
            pairs.clear();
            p.iter_mut().zip(&g).for_each(|(pi, gi)| *pi = -gi);
            d0 = dot(&g, &p);
        }

        let alpha0 = if pairs.is_empty() { (1.0 / dot(&g, &g).sqrt()).min(1.0) } else { 1.0 };
        let mut ev = Evaluator {
            objective: &mut objective,
            x: &x,
            p: &p,
            x_trial: vec![0.0; n],
            g_trial: vec![0.0; n],
            evals: 0,
        };
        let accepted = match wolfe_search(&mut ev, f, d0, alpha0, opts) {
            Some(t) => Some(t),
            None => {
                fallback_steps += 1;
                backtrack(&mut ev, f, d0, alpha0, opts.c1)
            }
        };
        let Some(trial) = accepted else {
            break Termination::LineSearchFailed;
        };
        let Evaluator { x_trial, g_trial, .. } = ev;

        let s: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) && opts.memory > 0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_trial;
        g = g_trial;
        f = trial.f;
        iterations += 1;
        history.push(f);
    };

    Ok(LbfgsResult { grad_sup: sup_norm(&g), x, f, iterations, termination, history, fallback_steps })
}
