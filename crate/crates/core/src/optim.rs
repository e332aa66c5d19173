//! General-purpose numerical optimisation used by the fitting code.
//!
//! Everything here minimises; likelihood callers negate. The stack is:
//!
//! * [`nelder_mead`] — derivative-free simplex search with dimension-adaptive
//!   expansion/contraction coefficients, robust to the `+inf` plateaus that
//!   invalid parameter vectors map to;
//! * [`bfgs`] — quasi-Newton polish with central-difference gradients and a
//!   backtracking Armijo line search, run from the simplex optimum;
//! * [`bisect`] — scalar root bracketing for profile score equations;
//! * [`hessian_fd`] — central second differences on a grid of `±h` stencils;
//! * [`cholesky`] / [`cholesky_inverse`] — dense SPD factorisation for
//!   turning a negated Hessian into a covariance matrix.

/// Outcome of an optimisation run.
#[derive(Debug, Clone)]
pub struct OptimResult {
    /// Best point found.
    pub x: Vec<f64>,
    /// Objective value there.
    pub f: f64,
    /// Number of objective evaluations consumed.
    pub evals: usize,
    /// Whether the stopping tolerance was met before the evaluation budget.
    pub converged: bool,
}

/// Nelder–Mead simplex minimisation.
///
/// Coefficients follow the dimension-adaptive scheme (reflection 1,
/// expansion `1 + 2/n`, contraction `0.75 - 1/(2n)`, shrink `1 - 1/n`),
/// which behaves much better than the classical constants once `n` is in
/// the tens. The initial simplex is `x0` plus `step` along each axis.
///
/// Infinite objective values are legal anywhere except at `x0` itself: the
/// simplex contracts away from them.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_evals: usize,
) -> OptimResult {
    let n = x0.len();
    assert!(n >= 1, "need at least one dimension");
    let (alpha, beta, gamma, delta) = (
        1.0,
        1.0 + 2.0 / n as f64,
        0.75 - 1.0 / (2.0 * n as f64),
        1.0 - 1.0 / n as f64,
    );

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };

    // Simplex as (value, point), kept sorted ascending by value.
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evals);
    assert!(f0.is_finite(), "objective must be finite at the start point");
    simplex.push((f0, x0.to_vec()));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((v, x));
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut converged = false;
    while evals < max_evals {
        let spread = simplex[n].0 - simplex[0].0;
        let diam = (0..n)
            .map(|j| {
                let lo = simplex.iter().map(|(_, x)| x[j]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|(_, x)| x[j]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0f64, f64::max);
        if spread <= tol * (simplex[0].0.abs() + tol) && diam <= tol.sqrt() {
            converged = true;
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (_, x) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let at = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst.1)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let xr = at(alpha);
        let fr = eval(&xr, &mut evals);
        let accepted = if fr < simplex[0].0 {
            // Try to expand past the reflection.
            let xe = at(beta);
            let fe = eval(&xe, &mut evals);
            if fe < fr { (fe, xe) } else { (fr, xr) }
        } else if fr < simplex[n - 1].0 {
            (fr, xr)
        } else {
            // Contract, outside or inside depending on the reflection.
            let (xc, fc) = if fr < worst.0 {
                let xc = at(gamma);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = at(-gamma);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < worst.0.min(fr) {
                (fc, xc)
            } else {
                // Shrink everything towards the best vertex.
                let best = simplex[0].1.clone();
                for k in 1..=n {
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&simplex[k].1)
                        .map(|(b, x)| b + delta * (x - b))
                        .collect();
                    let v = eval(&x, &mut evals);
                    simplex[k] = (v, x);
                }
                simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
                continue;
            }
        };
        simplex[n] = accepted;
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let (f_best, x_best) = simplex.swap_remove(0);
    OptimResult { x: x_best, f: f_best, evals, converged }
}

/// NaN-guarded objective evaluation with an eval counter.
fn eval_guarded<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], evals: &mut usize) -> f64 {
    *evals += 1;
    let v = f(x);
    if v.is_nan() { f64::INFINITY } else { v }
}

/// NaN-guarded central-difference gradient with an eval counter.
fn grad_guarded<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    h: f64,
    evals: &mut usize,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = eval_guarded(f, &probe, evals);
        probe[i] = x[i] - h;
        let fm = eval_guarded(f, &probe, evals);
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference gradient with per-coordinate step `h`.
pub fn gradient_fd<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// BFGS minimisation with numerical gradients.
///
/// Uses the inverse-Hessian update with a curvature guard and a backtracking
/// Armijo line search. Intended as a short polish from an already-good point;
/// stops when the max-norm of the gradient drops below `tol_g`, when the line
/// search cannot find a decrease, or after `max_iters` iterations.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    grad_h: f64,
    tol_g: f64,
    max_iters: usize,
) -> OptimResult {
    let n = x0.len();
    let mut evals = 0usize;

    let mut x = x0.to_vec();
    let mut fx = eval_guarded(&mut f, &x, &mut evals);
    if !fx.is_finite() {
        return OptimResult { x, f: fx, evals, converged: false };
    }
    let mut g = grad_guarded(&mut f, &x, grad_h, &mut evals);

    // Inverse Hessian approximation, started at the identity.
    let mut h_inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = false;
    for _ in 0..max_iters {
        if g.iter().all(|gi| gi.abs() < tol_g) {
            converged = true;
            break;
        }
        // Search direction d = -H_inv g.
        let d: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h_inv[i][j] * g[j]).sum::<f64>())
            .collect();
        let slope: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
        if slope >= 0.0 {
            // Not a descent direction (stale curvature); reset to steepest.
            for (i, row) in h_inv.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { 1.0 } else { 0.0 };
                }
            }
            continue;
        }

        // Backtracking Armijo line search.
        let mut t = 1.0;
        let mut x_new = Vec::new();
        let mut f_new = f64::INFINITY;
        let mut ok = false;
        for _ in 0..40 {
            x_new = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            f_new = eval_guarded(&mut f, &x_new, &mut evals);
            if f_new <= fx + 1e-4 * t * slope {
                ok = true;
                break;
            }
            t *= 0.5;
        }
        if !ok {
            break;
        }

        let g_new = grad_guarded(&mut f, &x_new, grad_h, &mut evals);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            // Standard inverse update: H <- (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ.
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h_inv[i][j] * y[j]).sum::<f64>())
                .collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                        + rho * rho * yhy * s[i] * s[j]
                        + rho * s[i] * s[j];
                }
            }
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    OptimResult { x, f: fx, evals, converged }
}

/// Bracketing bisection for a scalar root of `f` on `[lo, hi]`.
///
/// Requires a sign change across the bracket; returns `None` otherwise.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol {
            return Some(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Dense Hessian by central second differences with absolute step `h`.
///
/// Costs `2n² + O(n)` objective evaluations; symmetric by construction.
pub fn hessian_fd<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let f0 = f(x);
    let mut probe = x.to_vec();
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..n {
            probe[i] = x[i] + h;
            probe[j] = x[j] + h;
            let fpp = f(&probe);
            probe[j] = x[j] - h;
            let fpm = f(&probe);
            probe[i] = x[i] - h;
            let fmm = f(&probe);
            probe[j] = x[j] + h;
            let fmp = f(&probe);
            probe[i] = x[i];
            probe[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

/// Cholesky factor `L` (lower triangular, `A = L Lᵀ`) of a symmetric
/// positive-definite matrix, or `None` if a pivot is not positive.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// Full inverse of a symmetric positive-definite matrix via its Cholesky
/// factor; `None` if the matrix is not positive definite.
pub fn cholesky_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let l = cholesky(a)?;
    // Invert L by forward substitution, column by column.
    let mut linv = vec![vec![0.0; n]; n];
    for j in 0..n {
        linv[j][j] = 1.0 / l[j][j];
        for i in (j + 1)..n {
            let mut sum = 0.0;
            for k in j..i {
                sum -= l[i][k] * linv[k][j];
            }
            linv[i][j] = sum / l[i][i];
        }
    }
    // A⁻¹ = L⁻ᵀ L⁻¹.
    let mut inv = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = 0.0;
            for k in i.max(j)..n {
                sum += linv[k][i] * linv[k][j];
            }
            inv[i][j] = sum;
            inv[j][i] = sum;
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        let mut s = 0.0;
        for w in x.windows(2) {
            s += 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2);
        }
        s
    }

    #[test]
    fn nelder_mead_solves_rosenbrock() {
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], 0.5, 1e-12, 20_000);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4, "x = {:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_handles_infinite_regions() {
        // Quadratic bowl with an infinite wall: the optimum is reachable but
        // much of the space is forbidden, as with invalid parameter vectors.
        let f = |x: &[f64]| {
            if x.iter().any(|&v| v <= 0.0) {
                f64::INFINITY
            } else {
                x.iter().map(|&v| (v.ln()).powi(2)).sum()
            }
        };
        let r = nelder_mead(f, &[5.0, 0.2, 3.0], 0.5, 1e-12, 20_000);
        for &xi in &r.x {
            assert!((xi - 1.0).abs() < 1e-4, "x = {:?}", r.x);
        }
    }

    #[test]
    fn nelder_mead_high_dimension_quadratic() {
        let n = 14;
        let f = |x: &[f64]| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| (1.0 + i as f64) * (v - i as f64).powi(2))
                .sum::<f64>()
        };
        let x0 = vec![0.5; n];
        let r = nelder_mead(f, &x0, 1.0, 1e-13, 200_000);
        for (i, &xi) in r.x.iter().enumerate() {
            assert!((xi - i as f64).abs() < 1e-3, "coord {i}: {xi}");
        }
    }

    #[test]
    fn bfgs_polishes_rosenbrock() {
        // Start near the optimum, as after a simplex pass.
        let r = bfgs(rosenbrock, &[0.99, 0.98], 1e-6, 1e-8, 200);
        assert!((r.x[0] - 1.0).abs() < 1e-6, "x = {:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-6);
        assert!(r.f < 1e-12);
    }

    #[test]
    fn bfgs_quadratic_converges_fast() {
        let f = |x: &[f64]| 3.0 * (x[0] - 2.0) * (x[0] - 2.0) + (x[1] + 1.0) * (x[1] + 1.0);
        let r = bfgs(f, &[10.0, -10.0], 1e-6, 1e-9, 100);
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() < 1e-6);
        assert!((r.x[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn bisect_finds_scalar_roots() {
        let r = bisect(|x| x.cos() - x, 0.0, 1.0, 1e-12).unwrap();
        assert!((r - 0.7390851332151607).abs() < 1e-10);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_none());
    }

    #[test]
    fn hessian_matches_analytic_quadratic() {
        // f = x'Ax/2 with known A.
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.25], [0.5, -0.25, 2.0]];
        let mut f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
            }
            s
        };
        let h = hessian_fd(&mut f, &[0.3, -0.7, 1.1], 1e-4);
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[i][j] - a[i][j]).abs() < 1e-5, "H[{i}][{j}] = {}", h[i][j]);
            }
        }
    }

    #[test]
    fn cholesky_inverse_round_trips() {
        let a = vec![
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.25],
            vec![0.5, -0.25, 2.0],
        ];
        let inv = cholesky_inverse(&a).unwrap();
        // A · A⁻¹ = I.
        for i in 0..3 {
            for j in 0..3 {
                let prod: f64 = (0..3).map(|k| a[i][k] * inv[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod - want).abs() < 1e-12, "({i},{j}) = {prod}");
            }
        }
        // Indefinite input is rejected.
        let bad = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(cholesky(&bad).is_none());
    }
}
