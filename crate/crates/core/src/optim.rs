//! Quasi-Newton minimisation and finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

/// Stopping rules for [`minimize_bfgs`].
#[derive(Debug, Clone, Copy)]
pub struct BfgsConfig {
    pub max_iter: usize,
    /// Relative change in the objective below which the run may stop.
    pub rel_tol: f64,
    /// Gradient max-norm below which the run may stop.
    pub grad_tol: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            rel_tol: 1e-9,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Step for central differences at coordinate value `v`.
#[inline]
pub fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central-difference gradient with step `1e-6 * (1 + |x_i|)`.
pub fn fd_gradient(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], grad: &mut [f64]) {
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
}

/// Central second-difference Hessian with step `1e-4 * (1 + |x_i|)`.
pub fn fd_hessian(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + h[i];
        let fp = f(&xp);
        xp[i] = x[i] - h[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x, g);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f` with BFGS. `f(x, grad)` returns the objective and writes the
/// gradient; non-finite values are treated as `+inf` and rejected by the
/// line search.
///
/// Stops when the relative objective change and the gradient max-norm are both
/// below tolerance (`converged = true`), or when the iteration cap is hit or
/// the line search cannot make progress (`converged = false`, unless the
/// gradient criterion already holds).
pub fn minimize_bfgs(
    f: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: &[f64],
    config: &BfgsConfig,
) -> Minimum {
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = obj.eval(&x, &mut g);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut converged = false;
    let mut iterations = 0;

    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            gradient: g,
            converged: false,
            iterations: 0,
            evaluations: obj.evals,
        };
    }
    if max_abs(&g) < config.grad_tol {
        converged = true;
    }

    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    while !converged && iterations < config.max_iter {
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&hinv * &gv)).iter().copied().collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            // Not a descent direction: reset the curvature estimate.
            hinv = DMatrix::identity(n, n);
            first = true;
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let init_step = if first {
            (1.0 / max_abs(&g).max(1e-12)).min(1.0)
        } else {
            1.0
        };
        let Some((step, fnew)) = line_search(&mut obj, &x, fx, &dir, slope, init_step, &mut xn, &mut gn) else {
            if first {
                break;
            }
            hinv = DMatrix::identity(n, n);
            first = true;
            continue;
        };
        let s: Vec<f64> = dir.iter().map(|d| d * step).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let rel = (fx - fnew).abs() / fx.abs().max(1e-300).max(1.0);
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        fx = fnew;

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                hinv = DMatrix::identity(n, n) * scale;
                first = false;
            }
            let sv = DVector::from_vec(s);
            let yv = DVector::from_vec(y);
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (H y s' + s y' H) + (rho^2 y'Hy + rho) s s'
            hinv -= (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
            hinv += (&sv * sv.transpose()) * (rho * rho * yhy + rho);
        }
        if rel < config.rel_tol && max_abs(&g) < config.grad_tol {
            converged = true;
        }
    }
    if !converged && max_abs(&g) < config.grad_tol {
        converged = true;
    }
    Minimum {
        x,
        value: fx,
        gradient: g,
        converged,
        iterations,
        evaluations: obj.evals,
    }
}

/// Strong-Wolfe line search (bracketing + zoom with safeguarded cubic
/// interpolation). Writes the accepted point and gradient into `xn`/`gn`.
#[allow(clippy::too_many_arguments)]
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Counted<F>,
    x: &[f64],
    f0: f64,
    dir: &[f64],
    slope0: f64,
    init_step: f64,
    xn: &mut [f64],
    gn: &mut [f64],
) -> Option<(f64, f64)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut eval = |a: f64, xn: &mut [f64], gn: &mut [f64]| -> (f64, f64) {
        for ((xi, x0), d) in xn.iter_mut().zip(x).zip(dir) {
            *xi = x0 + a * d;
        }
        let v = obj.eval(xn, gn);
        (v, dot(gn, dir))
    };

    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = slope0;
    let mut a = init_step;
    let mut best: Option<(f64, f64)> = None;
    for iter in 0..40 {
        let (fa, da) = eval(a, xn, gn);
        if fa.is_finite() && fa < f0 && best.map_or(true, |(_, fb)| fa < fb) {
            best = Some((a, fa));
        }
        if !fa.is_finite() {
            // Shrink into the finite region.
            a = a_prev + 0.1 * (a - a_prev);
            if a - a_prev < 1e-20 {
                break;
            }
            continue;
        }
        if fa > f0 + C1 * a * slope0 || (iter > 0 && fa >= f_prev) {
            return zoom(&mut eval, f0, slope0, (a_prev, f_prev, d_prev), (a, fa, da), xn, gn)
                .or_else(|| best.map(|(ab, fb)| finalize(&mut eval, ab, fb, xn, gn)));
        }
        if da.abs() <= -C2 * slope0 {
            return Some((a, fa));
        }
        if da >= 0.0 {
            return zoom(&mut eval, f0, slope0, (a, fa, da), (a_prev, f_prev, d_prev), xn, gn)
                .or_else(|| best.map(|(ab, fb)| finalize(&mut eval, ab, fb, xn, gn)));
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
    }
    best.map(|(ab, fb)| finalize(&mut eval, ab, fb, xn, gn))
}

fn finalize(
    eval: &mut impl FnMut(f64, &mut [f64], &mut [f64]) -> (f64, f64),
    a: f64,
    _f: f64,
    xn: &mut [f64],
    gn: &mut [f64],
) -> (f64, f64) {
    let (fa, _) = eval(a, xn, gn);
    (a, fa)
}

fn cubic_min(a0: f64, f0: f64, d0: f64, a1: f64, f1: f64, d1: f64) -> Option<f64> {
    let d1_ = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d1_ * d1_ - d0 * d1;
    if disc < 0.0 {
        return None;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let m = a1 - (a1 - a0) * (d1 + d2 - d1_) / (d1 - d0 + 2.0 * d2);
    m.is_finite().then_some(m)
}

fn zoom(
    eval: &mut impl FnMut(f64, &mut [f64], &mut [f64]) -> (f64, f64),
    f0: f64,
    slope0: f64,
    lo: (f64, f64, f64),
    hi: (f64, f64, f64),
    xn: &mut [f64],
    gn: &mut [f64],
) -> Option<(f64, f64)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let (mut alo, mut flo, mut dlo) = lo;
    let (mut ahi, mut fhi, mut dhi) = hi;
    for _ in 0..40 {
        let (left, right) = if alo < ahi { (alo, ahi) } else { (ahi, alo) };
        let width = right - left;
        if width < 1e-16 * right.abs().max(1e-16) {
            break;
        }
        let mut a = if fhi.is_finite() {
            cubic_min(alo, flo, dlo, ahi, fhi, dhi).unwrap_or(0.5 * (alo + ahi))
        } else {
            0.5 * (alo + ahi)
        };
        if !(a > left + 0.1 * width && a < right - 0.1 * width) {
            a = 0.5 * (alo + ahi);
        }
        let (fa, da) = eval(a, xn, gn);
        if !fa.is_finite() || fa > f0 + C1 * a * slope0 || fa >= flo {
            ahi = a;
            fhi = fa;
            dhi = da;
        } else {
            if da.abs() <= -C2 * slope0 {
                return Some((a, fa));
            }
            if da * (ahi - alo) >= 0.0 {
                ahi = alo;
                fhi = flo;
                dhi = dlo;
            }
            alo = a;
            flo = fa;
            dlo = da;
        }
    }
    if alo > 0.0 && flo < f0 {
        let (fa, _) = eval(alo, xn, gn);
        return Some((alo, fa));
    }
    None
}
