//! Projected limited-memory quasi-Newton minimization over a box.
//!
//! Two-loop L-BFGS recursion on the reduced gradient (coordinates pinned at
//! an active bound are frozen), Armijo backtracking along the projected
//! search path, and the usual positive-curvature filter on stored pairs.
//! Nothing here is randomized: the iterate sequence is a pure function of
//! the objective, the start point, and the options.

use std::collections::VecDeque;

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone)]
pub struct Options {
    /// Curvature pairs retained by the two-loop recursion.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the projected gradient's infinity norm falls below this.
    pub g_tol: f64,
    /// Stop when an accepted step decreases f by less than
    /// `f_tol · max(1, |f|)`.
    pub f_tol: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            memory: 10,
            max_iters: 500,
            g_tol: 1e-9,
            f_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Whether a convergence test (gradient or objective decrease) fired,
    /// as opposed to running out of iterations or line-search progress.
    pub converged: bool,
    /// Objective after every accepted step, starting with f(x₀).
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Backtracking Armijo search along the projected path
/// `x(α) = clamp(x + α·d)`. Returns the accepted objective value with
/// `x_new`/`g_new` filled in, or None if no step along `d` makes progress.
fn try_step<F: FnMut(&[f64], &mut [f64]) -> f64>(
    f_g: &mut F,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    lo: &[f64],
    hi: &[f64],
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<f64> {
    let n = x.len();
    let mut step = 1.0;
    for _ in 0..60 {
        for i in 0..n {
            x_new[i] = (x[i] + step * d[i]).clamp(lo[i], hi[i]);
        }
        if x_new.iter().zip(x).all(|(a, b)| a == b) {
            return None;
        }
        let gdx: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
        if gdx < 0.0 {
            let f_new = f_g(x_new, g_new);
            if f_new.is_finite() && f_new <= f + 1e-4 * gdx {
                return Some(f_new);
            }
        }
        step *= 0.5;
    }
    None
}

/// Minimize `f` over `{x : lo ≤ x ≤ hi}` starting from the projection of
/// `x0`. The objective callback writes the gradient into its second
/// argument and returns the value.
pub fn minimize<F>(
    mut f_g: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &Options,
) -> Result<Outcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    if lo.len() != n || hi.len() != n {
        return Err(Error::InvalidArgument {
            what: "bounds must match the variable count".into(),
        });
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "bounds must satisfy lo <= hi and the start must be finite".into(),
        });
    }

    let mut x: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(i, &v)| v.clamp(lo[i], hi[i]))
        .collect();
    let mut g = vec![0.0; n];
    let mut f = f_g(&x, &mut g);
    if !f.is_finite() {
        return Err(Error::InvalidArgument {
            what: "objective is not finite at the start point".into(),
        });
    }
    let mut history = vec![f];

    let mut s_list: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_list: VecDeque<Vec<f64>> = VecDeque::new();
    let mut rho_list: VecDeque<f64> = VecDeque::new();

    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_iters {
        // Projected-gradient convergence test.
        let pg = (0..n)
            .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
            .fold(0.0, f64::max);
        if pg <= opts.g_tol {
            converged = true;
            break;
        }

        let frozen: Vec<bool> = (0..n)
            .map(|i| (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0))
            .collect();
        let gr: Vec<f64> = (0..n).map(|i| if frozen[i] { 0.0 } else { g[i] }).collect();

        // Two-loop recursion on the reduced gradient.
        let mut d: Vec<f64> = gr.iter().map(|v| -v).collect();
        let k = s_list.len();
        let mut alpha = vec![0.0; k];
        for j in (0..k).rev() {
            alpha[j] = rho_list[j] * dot(&s_list[j], &d);
            for i in 0..n {
                d[i] -= alpha[j] * y_list[j][i];
            }
        }
        if k > 0 {
            let sy = 1.0 / rho_list[k - 1];
            let yy = dot(&y_list[k - 1], &y_list[k - 1]);
            if yy > 0.0 {
                let scale = sy / yy;
                d.iter_mut().for_each(|v| *v *= scale);
            }
        }
        for j in 0..k {
            let beta = rho_list[j] * dot(&y_list[j], &d);
            for i in 0..n {
                d[i] += (alpha[j] - beta) * s_list[j][i];
            }
        }
        for i in 0..n {
            if frozen[i] {
                d[i] = 0.0;
            }
        }
        // Stale curvature can turn the model direction uphill; fall back.
        if dot(&g, &d) >= 0.0 {
            d = gr.iter().map(|v| -v).collect();
        }

        let mut f_next = try_step(&mut f_g, &x, f, &g, &d, lo, hi, &mut x_new, &mut g_new);
        if f_next.is_none() {
            // Retry once as plain projected steepest descent.
            s_list.clear();
            y_list.clear();
            rho_list.clear();
            let sd: Vec<f64> = gr.iter().map(|v| -v).collect();
            f_next = try_step(&mut f_g, &x, f, &g, &sd, lo, hi, &mut x_new, &mut g_new);
        }
        let Some(f_new) = f_next else {
            break; // no direction makes progress at any feasible step
        };

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if s_list.len() == opts.memory {
                s_list.pop_front();
                y_list.pop_front();
                rho_list.pop_front();
            }
            s_list.push_back(s);
            y_list.push_back(y);
            rho_list.push_back(1.0 / sy);
        }

        let decrease = f - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;
        history.push(f);
        iters += 1;

        if decrease <= opts.f_tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    Ok(Outcome {
        x,
        f,
        iterations: iters,
        converged,
        history,
    })
}
