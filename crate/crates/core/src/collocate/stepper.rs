//! Plain collocation integrator for explicit right-hand sides.
//!
//! This is the oracle-grade path used by tests (and by light-profile style
//! cross-checks): no optimization, just a damped Newton solve of the
//! collocation system per interval with a finite-difference Jacobian.

use super::radau::CollocationScheme;

/// Solve one collocation interval for `dx/dt = f(t, x)`.
///
/// Returns the end state (the last Radau node).
pub fn step<F>(scheme: &CollocationScheme, f: F, t0: f64, h: f64, x0: &[f64]) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = x0.len();
    let d = scheme.degree;
    // unknowns: states at the d collocation nodes, stacked
    let mut xs: Vec<f64> = (0..d).flat_map(|_| x0.iter().copied()).collect();
    let mut res = vec![0.0; n * d];
    let residual = |xs: &[f64], res: &mut [f64]| {
        let mut fx = vec![0.0; n];
        for j in 0..d {
            let tj = t0 + scheme.points[j] * h;
            f(tj, &xs[j * n..(j + 1) * n], &mut fx);
            for i in 0..n {
                let mut acc = scheme.dmat[j][0] * x0[i];
                for (r, chunk) in xs.chunks_exact(n).enumerate() {
                    acc += scheme.dmat[j][r + 1] * chunk[i];
                }
                res[j * n + i] = acc - h * fx[i];
            }
        }
    };

    let m = n * d;
    for _ in 0..50 {
        residual(&xs, &mut res);
        let norm = res.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        if norm < 1e-13 {
            break;
        }
        // finite-difference Jacobian; systems here are small
        let mut jac = vec![0.0; m * m];
        let mut pert = xs.clone();
        let mut res2 = vec![0.0; m];
        for c in 0..m {
            let eps = 1e-7 * (1.0 + xs[c].abs());
            pert[c] = xs[c] + eps;
            residual(&pert, &mut res2);
            pert[c] = xs[c];
            for r in 0..m {
                jac[r * m + c] = (res2[r] - res[r]) / eps;
            }
        }
        let neg: Vec<f64> = res.iter().map(|r| -r).collect();
        let delta = solve_dense(&mut jac.clone(), &neg, m);
        for (x, dx) in xs.iter_mut().zip(&delta) {
            *x += dx;
        }
    }
    xs[(d - 1) * n..].to_vec()
}

/// Integrate over [t0, tf] with `n_intervals` equal collocation intervals.
pub fn integrate<F>(
    scheme: &CollocationScheme,
    f: F,
    t0: f64,
    tf: f64,
    n_intervals: usize,
    x0: &[f64],
) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let h = (tf - t0) / n_intervals as f64;
    let mut x = x0.to_vec();
    for k in 0..n_intervals {
        x = step(scheme, &f, t0 + k as f64 * h, h, &x);
    }
    x
}

/// Gaussian elimination with partial pivoting; `a` is row-major n x n.
fn solve_dense(a: &mut [f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        let diag = a[col * n + col];
        for r in (col + 1)..n {
            let factor = a[r * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= factor * a[col * n + c];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col * n + col];
        for r in 0..col {
            x[r] -= a[r * n + col] * x[col];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy_and_order() {
        // |x(1) - e^-1| small, and halving h raises accuracy by >= 2^d
        for d in 1..=3usize {
            let scheme = CollocationScheme::radau(d).unwrap();
            let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = -x[0];
            let exact = (-1.0f64).exp();
            let mut prev_err = f64::NAN;
            for n in [5usize, 10, 20, 40] {
                let x = integrate(&scheme, f, 0.0, 1.0, n, &[1.0]);
                let err = (x[0] - exact).abs();
                if !prev_err.is_nan() && prev_err > 1e-13 && err > 1e-14 {
                    let ratio = prev_err / err;
                    assert!(
                        ratio >= (1 << d) as f64 * 0.9,
                        "degree {d}, n {n}: order ratio {ratio}"
                    );
                }
                prev_err = err;
            }
            if d == 3 {
                let x = integrate(&scheme, f, 0.0, 1.0, 20, &[1.0]);
                assert!((x[0] - exact).abs() <= 1e-6, "degree 3 error {}", (x[0] - exact).abs());
            }
        }
    }

    #[test]
    fn polynomial_rhs_is_exact() {
        // rhs of degree <= d-1 gives an exact polynomial trajectory; the
        // Radau end point is additionally exact up to quadrature order 2d-2
        for d in 1..=5usize {
            let scheme = CollocationScheme::radau(d).unwrap();
            let max_exact_deg = if d == 1 { 0 } else { 2 * d - 2 };
            for q in 0..=max_exact_deg {
                let f = move |t: f64, _x: &[f64], out: &mut [f64]| out[0] = t.powi(q as i32);
                let x = step(&scheme, f, 0.0, 1.0, &[0.0]);
                let want = 1.0 / (q as f64 + 1.0);
                assert!(
                    (x[0] - want).abs() < 1e-12,
                    "d={d} rhs degree {q}: {} vs {want}",
                    x[0]
                );
            }
        }
    }

    #[test]
    fn stiff_problem_is_stable() {
        let scheme = CollocationScheme::radau(3).unwrap();
        let f = |_t: f64, x: &[f64], out: &mut [f64]| out[0] = -1e4 * x[0];
        let x = integrate(&scheme, f, 0.0, 1.0, 10, &[1.0]);
        assert!(x[0].abs() < 1e-10, "stiff decay diverged: {}", x[0]);
    }
}
