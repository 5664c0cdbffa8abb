//! Small numerical routines shared across the crate: bracketed 1-D
//! minimization, adaptive quadrature, and a dense Levenberg-Marquardt
//! least-squares solver with numeric Jacobians.

/// Golden-section minimization of a unimodal function on `[a, b]`.
///
/// Returns `(x_min, f(x_min))` with the bracket shrunk to a relative
/// width of `rel_tol`.
pub fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    rel_tol: f64,
) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > rel_tol * (a.abs() + b.abs()).max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fc < fx && fc < fd {
        (c, fc)
    } else if fd < fx {
        (d, fd)
    } else {
        (x, fx)
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    // `tol` is relative; the scale comes from a coarse scan so peaked
    // integrands in SI units (magnitudes 1e-6..1e9) behave alike. The scan
    // points also seed fixed panels, so a feature narrower than the whole
    // interval cannot hide from the top-level error estimate.
    let n_panels = 32;
    let xs: Vec<f64> = (0..=n_panels)
        .map(|i| a + (b - a) * i as f64 / n_panels as f64)
        .collect();
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let fmax = fs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = ((b - a) * fmax).max(f64::MIN_POSITIVE);
    let abs_tol = tol * scale / n_panels as f64;
    let floor = 1e-16 * scale;
    let mut total = 0.0;
    for i in 0..n_panels {
        let (pa, pb) = (xs[i], xs[i + 1]);
        let m = 0.5 * (pa + pb);
        let fm = f(m);
        let whole = simpson_rule(pa, pb, fs[i], fm, fs[i + 1]);
        total += simpson_recurse(f, pa, pb, fs[i], fm, fs[i + 1], whole, abs_tol, floor, 32);
    }
    total
}

fn simpson_rule(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    tol_floor: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_rule(a, m, fa, flm, fm);
    let right = simpson_rule(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        let half = (0.5 * tol).max(tol_floor);
        simpson_recurse(f, a, m, fa, flm, fm, left, half, tol_floor, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, half, tol_floor, depth - 1)
    }
}

/// Outcome of a Levenberg-Marquardt fit.
#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// Sum of squared (weighted) residuals at the solution.
    pub residual_norm: f64,
    /// Diagonal of the parameter covariance estimate, scaled by the reduced
    /// chi-square. Empty when the normal matrix was singular.
    pub covariance_diag: Vec<f64>,
    pub converged: bool,
}

/// Dense Levenberg-Marquardt with a forward-difference Jacobian.
///
/// `residuals(p, out)` fills `out` with the residual vector at `p`.
pub fn levenberg_marquardt<F>(
    mut residuals: F,
    p0: &[f64],
    n_res: usize,
    max_iter: usize,
) -> LmFit
where
    F: FnMut(&[f64], &mut [f64]),
{
    let np = p0.len();
    let mut p = p0.to_vec();
    let mut r = vec![0.0; n_res];
    let mut r_try = vec![0.0; n_res];
    residuals(&p, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut jac = vec![0.0; n_res * np];
    let mut converged = false;

    for _ in 0..max_iter {
        // Forward-difference Jacobian.
        let mut p_step = p.clone();
        for j in 0..np {
            let h = 1e-7 * p[j].abs().max(1e-7);
            p_step[j] = p[j] + h;
            residuals(&p_step, &mut r_try);
            for i in 0..n_res {
                jac[i * np + j] = (r_try[i] - r[i]) / h;
            }
            p_step[j] = p[j];
        }
        // Normal equations J^T J + lambda diag, J^T r.
        let mut jtj = vec![0.0; np * np];
        let mut jtr = vec![0.0; np];
        for i in 0..n_res {
            for j in 0..np {
                let jij = jac[i * np + j];
                jtr[j] += jij * r[i];
                for l in j..np {
                    jtj[j * np + l] += jij * jac[i * np + l];
                }
            }
        }
        for j in 0..np {
            for l in 0..j {
                jtj[j * np + l] = jtj[l * np + j];
            }
        }

        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for j in 0..np {
                a[j * np + j] += lambda * jtj[j * np + j].max(1e-12);
            }
            let Some(step) = solve_dense(&a, &jtr, np) else {
                lambda *= 10.0;
                continue;
            };
            let p_try: Vec<f64> = p.iter().zip(&step).map(|(pi, s)| pi - s).collect();
            residuals(&p_try, &mut r_try);
            let cost_try: f64 = r_try.iter().map(|v| v * v).sum();
            if cost_try.is_finite() && cost_try < cost {
                let rel_drop = (cost - cost_try) / cost.max(1e-300);
                p = p_try;
                std::mem::swap(&mut r, &mut r_try);
                cost = cost_try;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_drop < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    // Covariance from (J^T J)^{-1} * reduced chi-square.
    let mut cov_diag = Vec::new();
    if n_res > np {
        let mut jtj = vec![0.0; np * np];
        let mut p_step = p.clone();
        residuals(&p, &mut r);
        for j in 0..np {
            let h = 1e-7 * p[j].abs().max(1e-7);
            p_step[j] = p[j] + h;
            residuals(&p_step, &mut r_try);
            for i in 0..n_res {
                jac[i * np + j] = (r_try[i] - r[i]) / h;
            }
            p_step[j] = p[j];
        }
        for i in 0..n_res {
            for j in 0..np {
                for l in 0..np {
                    jtj[j * np + l] += jac[i * np + j] * jac[i * np + l];
                }
            }
        }
        if let Some(inv_diag) = invert_diag(&jtj, np) {
            let red_chi2 = cost / (n_res - np) as f64;
            cov_diag = inv_diag.into_iter().map(|v| v * red_chi2).collect();
        }
    }

    LmFit {
        params: p,
        residual_norm: cost,
        covariance_diag: cov_diag,
        converged,
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_dense(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if m[row * n + col].abs() > m[piv * n + col].abs() {
                piv = row;
            }
        }
        if m[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            x[row] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

/// Diagonal of the inverse of a symmetric positive-definite matrix, by
/// solving against unit vectors.
fn invert_diag(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut diag = Vec::with_capacity(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = solve_dense(a, &e, n)?;
        diag.push(col[j]);
        e[j] = 0.0;
    }
    Some(diag)
}

/// Centered moving mean; windows shrink symmetrically at the edges.
pub fn moving_mean(values: &[f64], window: usize) -> Vec<f64> {
    let n = values.len();
    let half = window / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let slice = &values[lo..hi];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn golden_section_finds_quadratic_min() {
        let (x, fx) = golden_section_min(|x| (x - 2.5) * (x - 2.5) + 1.0, 0.0, 10.0, 1e-10);
        assert_relative_eq!(x, 2.5, max_relative = 1e-7);
        assert_relative_eq!(fx, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn simpson_integrates_gaussian() {
        let f = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = adaptive_simpson(&f, -10.0, 10.0, 1e-10);
        assert_relative_eq!(v, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lm_recovers_exponential_params() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let truth = [2.0, 1.3];
        let ys: Vec<f64> = xs.iter().map(|&x| truth[0] * (-truth[1] * x).exp()).collect();
        let fit = levenberg_marquardt(
            |p, out| {
                for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
                    out[i] = p[0] * (-p[1] * x).exp() - y;
                }
            },
            &[1.0, 1.0],
            xs.len(),
            200,
        );
        assert_relative_eq!(fit.params[0], truth[0], max_relative = 1e-6);
        assert_relative_eq!(fit.params[1], truth[1], max_relative = 1e-6);
    }
}
