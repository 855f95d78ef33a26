//! Generalized Pareto likelihood and its maximization.
//!
//! Parameters are optimized over `(ξ, η = ln σ)` by BFGS with analytic
//! gradients and a backtracking line search that never leaves the feasible
//! set `{ξ ∈ (−1, 1), 1 + ξx/σ > 0 for every x}`. Several starts are tried
//! (moment estimates, the exponential fit, a negative-shape start) and the
//! best optimum kept. `ξ = 0` is the exponential density exactly, with no
//! numerical limit involved.

use super::{Interval, Sample, TailError};

/// Open bounds on the shape parameter.
pub const SHAPE_BOUND: f64 = 1.0;
const SHAPE_MARGIN: f64 = 1e-9;

const MAX_ITERATIONS: u32 = 500;
const GRADIENT_TOLERANCE: f64 = 1e-9;

/// 95% point of χ²(1).
pub(crate) const CHI2_1_95: f64 = 3.841_458_820_694_124;

/// `(u/(1+u) − ln(1+u)) / u²`, with a series near zero.
fn h(u: f64) -> f64 {
    if u.abs() < 1e-3 {
        -0.5 + u * (2.0 / 3.0 + u * (-0.75 + u * 0.8))
    } else {
        (u / (1.0 + u) - u.ln_1p()) / (u * u)
    }
}

/// `ln(1 + ξz) / ξ`, equal to `z` at `ξ = 0`.
fn g(xi: f64, z: f64) -> f64 {
    if xi == 0.0 {
        z
    } else {
        (xi * z).ln_1p() / xi
    }
}

/// Log-likelihood and gradient `(∂/∂ξ, ∂/∂η)`. Returns `None` off the
/// support.
pub(crate) fn log_likelihood_grad(samples: &[Sample], xi: f64, eta: f64) -> Option<(f64, [f64; 2])> {
    if !(xi.is_finite() && eta.is_finite()) {
        return None;
    }
    let inv_sigma = (-eta).exp();
    let mut ll = 0.0;
    let mut d_xi = 0.0;
    let mut d_eta = 0.0;
    for s in samples {
        let z = s.excess * inv_sigma;
        let u = xi * z;
        let w = 1.0 + u;
        if w <= 0.0 {
            return None;
        }
        ll += -eta - w.ln() - g(xi, z);
        d_xi += -z / w - z * z * h(u);
        d_eta += -1.0 + (xi + 1.0) * z / w;
        if s.entry > 0.0 {
            let zt = s.entry * inv_sigma;
            let ut = xi * zt;
            let wt = 1.0 + ut;
            ll += g(xi, zt);
            d_xi += zt * zt * h(ut);
            d_eta += -zt / wt;
        }
    }
    ll.is_finite().then_some((ll, [d_xi, d_eta]))
}

/// Log-likelihood only.
pub fn log_likelihood(samples: &[Sample], xi: f64, sigma: f64) -> Option<f64> {
    if !(sigma > 0.0) {
        return None;
    }
    log_likelihood_grad(samples, xi, sigma.ln()).map(|(ll, _)| ll)
}

fn in_shape_bounds(xi: f64) -> bool {
    xi > -SHAPE_BOUND + SHAPE_MARGIN && xi < SHAPE_BOUND - SHAPE_MARGIN
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Optimum {
    pub xi: f64,
    pub sigma: f64,
    pub log_likelihood: f64,
    pub iterations: u32,
    pub gradient_norm: f64,
    pub converged: bool,
}

fn bfgs(samples: &[Sample], start: [f64; 2]) -> Option<Optimum> {
    let f = |p: [f64; 2]| -> Option<(f64, [f64; 2])> {
        if !in_shape_bounds(p[0]) {
            return None;
        }
        log_likelihood_grad(samples, p[0], p[1]).map(|(ll, g)| (-ll, [-g[0], -g[1]]))
    };
    let n = samples.len() as f64;
    let mut x = start;
    let (mut fx, mut gx) = f(x)?;
    // Inverse Hessian approximation.
    let mut hinv = [[1.0 / n, 0.0], [0.0, 1.0 / n]];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        let gnorm = gx[0].abs().max(gx[1].abs());
        if gnorm <= GRADIENT_TOLERANCE * n.max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = [
            -(hinv[0][0] * gx[0] + hinv[0][1] * gx[1]),
            -(hinv[1][0] * gx[0] + hinv[1][1] * gx[1]),
        ];
        let mut slope = d[0] * gx[0] + d[1] * gx[1];
        if slope >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            hinv = [[1.0 / n, 0.0], [0.0, 1.0 / n]];
            d = [-gx[0] / n, -gx[1] / n];
            slope = d[0] * gx[0] + d[1] * gx[1];
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = [x[0] + t * d[0], x[1] + t * d[1]];
            if let Some((fc, gc)) = f(cand) {
                if fc <= fx + 1e-4 * t * slope {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fxn, gxn)) = accepted else {
            // No progress possible at floating-point resolution.
            converged = gx[0].abs().max(gx[1].abs()) <= 1e-5 * n.max(1.0);
            break;
        };
        let s = [xn[0] - x[0], xn[1] - x[1]];
        let y = [gxn[0] - gx[0], gxn[1] - gx[1]];
        let sy = s[0] * y[0] + s[1] * y[1];
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            // H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ
            let hy = [
                hinv[0][0] * y[0] + hinv[0][1] * y[1],
                hinv[1][0] * y[0] + hinv[1][1] * y[1],
            ];
            let yhy = y[0] * hy[0] + y[1] * hy[1];
            for i in 0..2 {
                for j in 0..2 {
                    hinv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let improvement = fx - fxn;
        x = xn;
        fx = fxn;
        gx = gxn;
        if improvement.abs() <= 1e-15 * fx.abs().max(1.0) && s[0].abs().max(s[1].abs()) < 1e-12 {
            converged = gx[0].abs().max(gx[1].abs()) <= 1e-5 * n.max(1.0);
            break;
        }
    }
    Some(Optimum {
        xi: x[0],
        sigma: x[1].exp(),
        log_likelihood: -fx,
        iterations,
        gradient_norm: gx[0].abs().max(gx[1].abs()),
        converged,
    })
}

/// Start points: method of moments, the exponential MLE, and a negative
/// shape pinned just inside the support.
fn starts(samples: &[Sample]) -> Vec<[f64; 2]> {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.excess - s.entry).sum::<f64>() / n;
    let raw_mean = samples.iter().map(|s| s.excess).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.excess - raw_mean).powi(2)).sum::<f64>() / n;
    let max = samples.iter().map(|s| s.excess).fold(0.0, f64::max);
    let mut out = vec![[0.0, mean.ln()]];
    if var > 0.0 {
        let ratio = raw_mean * raw_mean / var;
        let xi = (0.5 * (1.0 - ratio)).clamp(-0.9, 0.9);
        let sigma = 0.5 * raw_mean * (ratio + 1.0);
        if sigma > 0.0 && 1.0 + xi * max / sigma > 0.0 {
            out.push([xi, sigma.ln()]);
        }
    }
    let xi = -0.3;
    let sigma = (1.3 * raw_mean).max(-xi * max * 1.05);
    out.push([xi, sigma.ln()]);
    out
}

pub(crate) fn maximize(samples: &[Sample]) -> Result<Optimum, TailError> {
    let mut best: Option<Optimum> = None;
    for start in starts(samples) {
        if let Some(opt) = bfgs(samples, start) {
            if best.is_none_or(|b| opt.log_likelihood > b.log_likelihood) {
                best = Some(opt);
            }
        }
    }
    let best = best.ok_or(TailError::NoFeasibleStart)?;
    if !best.converged {
        return Err(TailError::NotConverged {
            iterations: best.iterations,
            gradient_norm: best.gradient_norm,
            log_likelihood: best.log_likelihood,
        });
    }
    Ok(best)
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_8;
    let mut c = b - R * (b - a);
    let mut d = a + R * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (a.abs() + b.abs()).max(1e-12) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - R * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + R * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn max_excess(samples: &[Sample]) -> f64 {
    samples.iter().map(|s| s.excess).fold(0.0, f64::max)
}

/// `max_σ ℓ(ξ, σ)` for fixed ξ.
pub(crate) fn profile_over_scale(samples: &[Sample], xi: f64, hint_sigma: f64) -> f64 {
    let max = max_excess(samples);
    let lo_sigma = if xi < 0.0 { -xi * max } else { 0.0 };
    let lo = if lo_sigma > 0.0 {
        lo_sigma.ln() + 1e-12
    } else {
        (hint_sigma * 1e-6).ln()
    };
    let hi = (hint_sigma.max(max) * 1e3).ln();
    let eval = |eta: f64| log_likelihood_grad(samples, xi, eta).map_or(f64::NEG_INFINITY, |(ll, _)| ll);
    golden_max(eval, lo, hi).1
}

/// `max_ξ ℓ(ξ, σ)` for fixed σ.
pub(crate) fn profile_over_shape(samples: &[Sample], sigma: f64) -> f64 {
    let max = max_excess(samples);
    let lo = (-sigma / max).max(-SHAPE_BOUND + SHAPE_MARGIN) + 1e-12;
    let hi = SHAPE_BOUND - SHAPE_MARGIN;
    let eta = sigma.ln();
    let eval = |xi: f64| log_likelihood_grad(samples, xi, eta).map_or(f64::NEG_INFINITY, |(ll, _)| ll);
    golden_max(eval, lo, hi).1
}

/// Where the profile deviance crosses the χ²(1) 95% point, searching from
/// the optimum towards `bound`. Returns `bound` if it never crosses.
fn deviance_crossing(profile: impl Fn(f64) -> f64, best_ll: f64, at: f64, bound: f64) -> f64 {
    let crosses = |v: f64| 2.0 * (best_ll - profile(v)) > CHI2_1_95;
    if !crosses(bound) {
        return bound;
    }
    let (mut inside, mut outside) = (at, bound);
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if crosses(mid) {
            outside = mid;
        } else {
            inside = mid;
        }
        if (outside - inside).abs() < 1e-9 * (1.0 + at.abs()) {
            break;
        }
    }
    0.5 * (inside + outside)
}

/// Profile-likelihood 95% interval for ξ.
pub(crate) fn shape_interval(samples: &[Sample], opt: &Optimum) -> Interval {
    let profile = |xi: f64| profile_over_scale(samples, xi, opt.sigma);
    let lo_bound = -SHAPE_BOUND + 1e-6;
    let hi_bound = SHAPE_BOUND - 1e-6;
    Interval {
        low: deviance_crossing(profile, opt.log_likelihood, opt.xi, lo_bound),
        high: deviance_crossing(profile, opt.log_likelihood, opt.xi, hi_bound),
    }
}

/// Profile-likelihood 95% interval for σ, searched on `ln σ`.
pub(crate) fn scale_interval(samples: &[Sample], opt: &Optimum) -> Interval {
    let profile = |eta: f64| profile_over_shape(samples, eta.exp());
    let eta = opt.sigma.ln();
    let max = max_excess(samples);
    // Smallest σ with any feasible ξ > −1 is max·(1 − margin).
    let lo_bound = (max * (1.0 - SHAPE_BOUND + 1e-6)).max(opt.sigma * 1e-6).ln().max(eta - 50.0);
    let hi_bound = eta + 20.0;
    Interval {
        low: deviance_crossing(profile, opt.log_likelihood, eta, lo_bound).exp(),
        high: deviance_crossing(profile, opt.log_likelihood, eta, hi_bound).exp(),
    }
}
