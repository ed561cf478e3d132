//! Small numerical kernels shared by the solvers: polynomial helpers,
//! bracketing root finders, adaptive Gauss-Kronrod quadrature and an
//! adaptive Dormand-Prince 5(4) integrator.

/// Evaluate `sum c[k] x^k` by Horner's rule.
pub fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// Coefficients of the derivative polynomial.
pub fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &a)| k as f64 * a)
        .collect()
}

/// Product of two polynomials in ascending-coefficient form.
pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Sum of two polynomials.
pub fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| a.get(k).copied().unwrap_or(0.0) + b.get(k).copied().unwrap_or(0.0))
        .collect()
}

/// Drop trailing zero coefficients.
pub fn poly_trim(mut c: Vec<f64>) -> Vec<f64> {
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    c
}

/// Synthetic division by `(x - r)`; the remainder is discarded.
pub fn poly_deflate(c: &[f64], r: f64) -> Vec<f64> {
    let n = c.len();
    if n <= 1 {
        return vec![0.0];
    }
    let mut q = vec![0.0; n - 1];
    let mut acc = c[n - 1];
    for k in (1..n - 1).rev() {
        q[k] = acc;
        acc = c[k] + acc * r;
    }
    q[0] = acc;
    q
}

/// Bisection to machine precision on a bracket with a sign change.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Brent's method. Requires `f(a)` and `f(b)` of opposite sign.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> Option<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if (fa < 0.0) == (fb < 0.0) || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if (fb < 0.0) == (fc < 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Some(b)
}

/// All real roots of a polynomial inside `[lo, hi]`, ascending.
///
/// Roots of the derivative split the interval into monotone pieces, each
/// of which holds at most one root. Double roots are reported once when the
/// polynomial touches zero at a critical point.
pub fn poly_real_roots(c: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let c = poly_trim(c.to_vec());
    if c.len() <= 1 {
        return Vec::new();
    }
    if c.len() == 2 {
        let r = -c[0] / c[1];
        return if r >= lo && r <= hi { vec![r] } else { Vec::new() };
    }
    let crit = poly_real_roots(&poly_deriv(&c), lo, hi);
    let mut knots = vec![lo];
    knots.extend(crit.iter().copied().filter(|&x| x > lo && x < hi));
    knots.push(hi);
    let scale: f64 = c.iter().map(|a| a.abs()).sum::<f64>().max(1e-300);
    let mut roots: Vec<f64> = Vec::new();
    let mut piece_has_root = vec![false; knots.len() - 1];
    for (i, w) in knots.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let fa = poly_eval(&c, a);
        let fb = poly_eval(&c, b);
        if fa == 0.0 {
            roots.push(a);
            piece_has_root[i] = true;
        } else if (fa < 0.0) != (fb < 0.0) && fb != 0.0 {
            roots.push(bisect(|x| poly_eval(&c, x), a, b));
            piece_has_root[i] = true;
        }
    }
    if poly_eval(&c, hi) == 0.0 {
        roots.push(hi);
    }
    // tangential zeros at interior critical points with no neighbouring crossing
    for k in 1..knots.len() - 1 {
        let x = knots[k];
        if !piece_has_root[k - 1]
            && !piece_has_root[k]
            && poly_eval(&c, x).abs() <= 16.0 * f64::EPSILON * scale
        {
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    roots
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature with global error control.
/// Returns the integral and the estimated absolute error.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    let mut iter = 0;
    while err > abs_tol.max(rel_tol * total.abs()) && iter < 2000 {
        iter += 1;
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (lo, hi, pv, pe) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            parts.push((lo, hi, pv, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        total += v1 + v2 - pv;
        err += e1 + e2 - pe;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    let total: f64 = parts.iter().map(|p| p.2).sum();
    let err: f64 = parts.iter().map(|p| p.3).sum();
    (total, err)
}

/// Fixed 15-point Kronrod rule, used where many short panels are summed.
pub fn kronrod15<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    gk15(&mut f, a, b).0
}

/// Composite Simpson weights on a uniform grid with an even number of intervals.
/// Falls back to a trapezoid on the last interval when the count is odd.
pub fn simpson(y: &[f64], h: f64) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let intervals = n - 1;
    let even = intervals - intervals % 2;
    let mut s = 0.0;
    let mut k = 0;
    while k < even {
        s += y[k] + 4.0 * y[k + 1] + y[k + 2];
        k += 2;
    }
    s *= h / 3.0;
    if even < intervals {
        s += 0.5 * h * (y[n - 2] + y[n - 1]);
    }
    s
}

/// Result of an ODE integration on a prescribed output grid.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub steps: usize,
}

/// Failure modes of [`dopri5`].
#[derive(Debug, Clone, PartialEq)]
pub enum OdeError {
    StepUnderflow { t: f64 },
    NonFinite { t: f64 },
    TooManySteps,
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive Dormand-Prince 5(4) integration of `y' = f(t, y)`, reporting the
/// state at each time in `t_out` (ascending, starting at the initial time).
pub fn dopri5<F>(mut f: F, y0: &[f64], t_out: &[f64], rtol: f64, atol: f64) -> Result<OdeSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t_out[0];
    let mut ys = vec![y.clone()];
    let span = (t_out[t_out.len() - 1] - t).abs().max(1e-300);
    let mut h = span * 1e-3;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut steps = 0usize;
    f(t, &y, &mut k[0]);
    for &target in &t_out[1..] {
        while t < target {
            if steps > 5_000_000 {
                return Err(OdeError::TooManySteps);
            }
            let last = t + h >= target;
            let hs = if last { target - t } else { h };
            let stage = |k: &mut Vec<Vec<f64>>, tmp: &mut Vec<f64>, f: &mut F, idx: usize, c: f64, a: &[f64]| {
                for i in 0..n {
                    let mut s = y[i];
                    for (j, &aj) in a.iter().enumerate() {
                        s += hs * aj * k[j][i];
                    }
                    tmp[i] = s;
                }
                let (head, tail) = k.split_at_mut(idx);
                let _ = head;
                f(t + c * hs, tmp, &mut tail[0]);
            };
            stage(&mut k, &mut tmp, &mut f, 1, 0.2, &[A21]);
            stage(&mut k, &mut tmp, &mut f, 2, 0.3, &[A31, A32]);
            stage(&mut k, &mut tmp, &mut f, 3, 0.8, &[A41, A42, A43]);
            stage(&mut k, &mut tmp, &mut f, 4, 8.0 / 9.0, &[A51, A52, A53, A54]);
            stage(&mut k, &mut tmp, &mut f, 5, 1.0, &[A61, A62, A63, A64, A65]);
            for i in 0..n {
                ynew[i] = y[i] + hs * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
            }
            {
                let (head, tail) = k.split_at_mut(6);
                f(t + hs, &ynew, &mut tail[0]);
                let _ = head;
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let e = hs
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
                let sc = atol + rtol * y[i].abs().max(ynew[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                if hs < span * 1e-15 {
                    return Err(OdeError::NonFinite { t });
                }
                h = hs * 0.1;
                continue;
            }
            steps += 1;
            if err <= 1.0 {
                t = if last { target } else { t + hs };
                y.copy_from_slice(&ynew);
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(OdeError::NonFinite { t });
                }
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            let hnew = hs * fac;
            if !last || err > 1.0 {
                h = hnew;
            } else {
                h = h.max(hnew);
            }
            if h < span * 1e-16 {
                return Err(OdeError::StepUnderflow { t });
            }
        }
        ys.push(y.clone());
    }
    Ok(OdeSolution { t: t_out.to_vec(), y: ys, steps })
}

/// Richardson extrapolation for a second-order discretisation sampled at
/// step `h` and `h/2`.
pub fn richardson2(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

/// Numerically stable `ln(2 cosh x)`.
pub fn ln_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// Log-sum-exp of a slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Natural log of the binomial coefficient.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// Exact binomial coefficient as f64 (exact while it fits in 2^53).
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1u128;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r as f64
}
