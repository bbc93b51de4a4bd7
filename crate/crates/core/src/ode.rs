//! Adaptive Dormand–Prince 5(4) integrator over flat complex state buffers.
//!
//! Embedded error estimate with PI-free standard step control, FSAL reuse,
//! and exact landing on a caller-supplied increasing list of stop times
//! (sample points, envelope breakpoints). Non-stiff use: after the rotating
//! frame transformation the fastest dynamics are detunings of order the band
//! width, well inside the explicit stability region at practical steps.

use num_complex::Complex64;

use crate::error::Error;
use crate::Result;

// Butcher tableau (Dormand & Prince, order 5(4), 7 stages, FSAL).
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 20_000_000,
        }
    }
}

impl Dopri5 {
    /// Integrate `y' = rhs(t, y)` from `t0`, stopping exactly on each entry
    /// of `stops` (strictly increasing, all ≥ `t0`) and invoking
    /// `on_stop(index, t, y)` there. A stop equal to `t0` fires immediately
    /// against the initial state.
    pub fn integrate<F, S>(
        &self,
        mut rhs: F,
        t0: f64,
        y0: &[Complex64],
        stops: &[f64],
        mut on_stop: S,
    ) -> Result<()>
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
        S: FnMut(usize, f64, &[Complex64]) -> Result<()>,
    {
        let n = y0.len();
        let mut y = y0.to_vec();
        let mut t = t0;

        let mut k: Vec<Vec<Complex64>> = (0..7).map(|_| vec![Complex64::ZERO; n]).collect();
        let mut ytmp = vec![Complex64::ZERO; n];
        let mut ynew = vec![Complex64::ZERO; n];

        let mut stop_iter = stops.iter().copied().enumerate().peekable();
        while let Some(&(idx, ts)) = stop_iter.peek() {
            if ts > t {
                break;
            }
            on_stop(idx, t, &y)?;
            stop_iter.next();
        }
        let Some(&(_, mut t_target)) = stop_iter.peek() else {
            return Ok(());
        };
        let t_end = *stops.last().expect("nonempty stops");

        // First-step guess; the controller recovers quickly from a poor one.
        let mut h = ((t_end - t0) * 1e-4).min(1.0).max(1e-12);
        let mut steps = 0usize;
        let mut fsal_valid = false;

        while t < t_end {
            if steps >= self.max_steps {
                return Err(Error::StepControl {
                    t,
                    what: format!("step budget exhausted ({} steps)", self.max_steps),
                });
            }
            steps += 1;

            let capped = h >= t_target - t;
            let h_used = if capped { t_target - t } else { h };
            if h_used <= f64::EPSILON * t.abs().max(1.0) {
                return Err(Error::StepControl {
                    t,
                    what: "step size underflow".into(),
                });
            }

            if !fsal_valid {
                let (head, tail) = k.split_at_mut(1);
                let _ = tail;
                rhs(t, &y, &mut head[0]);
                fsal_valid = true;
            }

            macro_rules! stage {
                ($si:expr, $coeffs:expr) => {{
                    for c in 0..n {
                        let mut acc = Complex64::ZERO;
                        for (j, &a) in $coeffs.iter().enumerate() {
                            if a != 0.0 {
                                acc += a * k[j][c];
                            }
                        }
                        ytmp[c] = y[c] + h_used * acc;
                    }
                    let (done, rest) = k.split_at_mut($si);
                    rhs(t + C[$si] * h_used, &ytmp, &mut rest[0]);
                    let _ = done;
                }};
            }
            stage!(1, A2);
            stage!(2, A3);
            stage!(3, A4);
            stage!(4, A5);
            stage!(5, A6);
            // Stage 7 evaluates at the 5th-order solution point (FSAL).
            for c in 0..n {
                let mut acc = Complex64::ZERO;
                for (j, &b) in B5.iter().enumerate() {
                    if b != 0.0 {
                        acc += b * k[j][c];
                    }
                }
                ynew[c] = y[c] + h_used * acc;
            }
            {
                let (done, rest) = k.split_at_mut(6);
                rhs(t + h_used, &ynew, &mut rest[0]);
                let _ = done;
            }

            // Embedded 4th/5th-order error, RMS-scaled per component.
            let mut err_sq = 0.0;
            for c in 0..n {
                let mut e = Complex64::ZERO;
                for j in 0..7 {
                    let d = B5[j] - B4[j];
                    if d != 0.0 {
                        e += d * k[j][c];
                    }
                }
                let scale = self.atol + self.rtol * y[c].norm().max(ynew[c].norm());
                let r = h_used * e.norm() / scale;
                err_sq += r * r;
            }
            let err = (err_sq / n.max(1) as f64).sqrt();

            if err.is_finite() && err <= 1.0 {
                t = if capped { t_target } else { t + h_used };
                std::mem::swap(&mut y, &mut ynew);
                k.swap(0, 6); // FSAL: last stage is the next first stage.

                while let Some(&(idx, ts)) = stop_iter.peek() {
                    if ts > t {
                        break;
                    }
                    on_stop(idx, t, &y)?;
                    stop_iter.next();
                }
                match stop_iter.peek() {
                    Some(&(_, ts)) => t_target = ts,
                    None => break,
                }

                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = (h * fac).max(1e-300);
            } else {
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
                } else {
                    0.1
                };
                h = h_used * fac;
                // k1 at (t, y) is still valid for the retry.
            }
        }
        Ok(())
    }
}

/// Adaptive Simpson quadrature of a real integrand; used for envelope
/// normalization and pulse-moment bookkeeping, not for dynamics.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        // Accept when within tolerance, or when the Richardson defect is at
        // the round-off floor of the panel sums themselves: below that the
        // requested tolerance is unresolvable and refinement only recurses
        // into noise.
        let noise_floor =
            30.0 * f64::EPSILON * (left.abs() + right.abs() + whole.abs());
        if depth == 0 || (left + right - whole).abs() <= (15.0 * tol).max(noise_floor) {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(f, a, fa, b, fb, fm, whole, tol, 48)
}
