//! Continuous-time open-boundary instanton.
//!
//! Along a saddle of the open-chain functional the vector magnetization
//! `(m_x, i m_y, m_z)` obeys
//!
//! ```text
//! d m_x/dτ = -2λ (i m_y),  d(i m_y)/dτ = 2Γ m_z - 2λ m_x,  d m_z/dτ = 2Γ (i m_y)
//! ```
//!
//! with `λ = g'(m_z)`. Two integrals of motion follow: the energy
//! `ε = -Γ m_x - g(m_z)` and `ℓ² = m_x² - (i m_y)² + m_z²`, with `ℓ = 1`
//! for open chains. Eliminating `m_x` and `m_y` gives `|ṁ_z| = 2 sqrt(f)`
//! with the polynomial `f(m) = (ε + g)² - Γ²(1 - m²)`. The endpoints satisfy
//! `m_x = 1`, i.e. `g(m_{1,2}) = -Γ - ε`, and `i m_y = m_z` at `τ = 0`,
//! `i m_y = -m_z` at `τ = β`.
//!
//! The phase-space orbit of fixed `ε` lives in the region `f ≥ 0`,
//! `ε + g < 0`, bounded by turning points where `f = 0`. A path leaves the
//! start curve moving away from `m = 0` and reaches the end curve moving
//! towards it; in between it may reflect at turning points. The solver
//! enumerates these paths on every orbit, solves `T(ε) = β` for each family
//! and classifies the solutions.

use crate::model::{binary_entropy, entropy_prime, ModelSpec};
use crate::numerics::{
    brent, dopri5, integrate, kronrod15, poly_add, poly_deflate, poly_deriv, poly_eval, poly_mul, poly_real_roots,
    simpson,
};
use crate::Error;

const QUAD_ABS: f64 = 1e-15;
const QUAD_REL: f64 = 1e-13;

/// Critical point of the landscape `U(m) = -g(m) - Γ sqrt(1 - m²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub m: f64,
    pub u: f64,
    pub is_min: bool,
}

/// Wells and barrier of `U`, the `p = 0` section of the energy surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub critical: Vec<CriticalPoint>,
    pub m_meta: f64,
    pub m_glob: f64,
    pub m_top: f64,
}

fn u_of(spec: &ModelSpec, m: f64) -> f64 {
    -spec.cost.g(m) - spec.gamma * (1.0 - m * m).max(0.0).sqrt()
}

/// Locate the critical points of `U`. They solve `g'(m) sqrt(1-m²) = Γ m`,
/// i.e. roots of `g'² (1 - m²) - Γ² m²` with `sign g' = sign m`.
pub fn landscape(spec: &ModelSpec) -> Result<Landscape, Error> {
    let g1 = poly_deriv(spec.cost.coefficients());
    let poly = poly_add(
        &poly_mul(&poly_mul(&g1, &g1), &[1.0, 0.0, -1.0]),
        &[0.0, 0.0, -spec.gamma * spec.gamma],
    );
    let lim = 1.0 - 1e-12;
    let mut critical = Vec::new();
    for m in poly_real_roots(&poly, -lim, lim) {
        let gp = spec.cost.g1(m);
        let lhs = gp * (1.0 - m * m).sqrt();
        if (lhs - spec.gamma * m).abs() > 1e-8 * (1.0 + lhs.abs()) {
            continue;
        }
        let upp = -spec.cost.g2(m) + spec.gamma / (1.0 - m * m).powf(1.5);
        critical.push(CriticalPoint { m, u: u_of(spec, m), is_min: upp > 0.0 });
    }
    let wells: Vec<&CriticalPoint> = critical.iter().filter(|c| c.is_min).collect();
    if wells.len() < 2 {
        return Err(Error::NoSolution(format!(
            "landscape has {} well(s); a metastable structure needs two",
            wells.len()
        )));
    }
    let glob = wells.iter().min_by(|a, b| a.u.partial_cmp(&b.u).unwrap()).unwrap();
    let meta = wells
        .iter()
        .filter(|w| w.m != glob.m)
        .max_by(|a, b| a.u.partial_cmp(&b.u).unwrap())
        .unwrap();
    let (lo, hi) = (meta.m.min(glob.m), meta.m.max(glob.m));
    let top = critical
        .iter()
        .filter(|c| !c.is_min && c.m > lo && c.m < hi)
        .max_by(|a, b| a.u.partial_cmp(&b.u).unwrap())
        .ok_or_else(|| Error::NoSolution("no barrier between wells".into()))?;
    Ok(Landscape { m_meta: meta.m, m_glob: glob.m, m_top: top.m, critical })
}

/// `|ṁ_z| = 2 sqrt((ε + g)² - Γ²(1 - m²))`.
pub fn velocity(m: f64, eps: f64, spec: &ModelSpec) -> Result<f64, Error> {
    let f = f_value(spec, eps, m);
    if f < 0.0 {
        return Err(Error::Parameter(format!("m = {m} is in the classically allowed region at ε = {eps}")));
    }
    Ok(2.0 * f.sqrt())
}

fn f_value(spec: &ModelSpec, eps: f64, m: f64) -> f64 {
    let e = eps + spec.cost.g(m);
    e * e - spec.gamma * spec.gamma * (1.0 - m * m)
}

/// `|p| = arccosh(|ε + g| / (Γ sqrt(1 - m²)))`, evaluated as an `asinh`.
pub fn momentum(m: f64, eps: f64, spec: &ModelSpec) -> Result<f64, Error> {
    let f = f_value(spec, eps, m);
    if f < 0.0 || m.abs() >= 1.0 {
        return Err(Error::Parameter(format!("momentum undefined at m = {m}, ε = {eps}")));
    }
    Ok((f.sqrt() / (spec.gamma * (1.0 - m * m).sqrt())).asinh())
}

/// All roots of `g(m) = -Γ - ε` in `(-1, 1)`.
pub fn end_roots(eps: f64, spec: &ModelSpec) -> Vec<f64> {
    let mut c = spec.cost.coefficients().to_vec();
    c[0] += spec.gamma + eps;
    let lim = 1.0 - 1e-13;
    poly_real_roots(&c, -lim, lim)
}

/// The two outermost roots of `g(m) = -Γ - ε`.
pub fn endpoints_for_energy(eps: f64, spec: &ModelSpec) -> Result<(f64, f64), Error> {
    let r = end_roots(eps, spec);
    if r.len() < 2 {
        return Err(Error::NoSolution(format!("{} endpoint root(s) at ε = {eps}", r.len())));
    }
    Ok((r[0], r[r.len() - 1]))
}

fn f_poly(spec: &ModelSpec, eps: f64) -> Vec<f64> {
    let mut e = spec.cost.coefficients().to_vec();
    e[0] += eps;
    let g2 = spec.gamma * spec.gamma;
    poly_add(&poly_mul(&e, &e), &[-g2, 0.0, g2])
}

/// Turning points on the `m_x > 0` branch.
fn turning_points(spec: &ModelSpec, eps: f64, fp: &[f64]) -> Vec<f64> {
    let lim = 1.0 - 1e-13;
    poly_real_roots(fp, -lim, lim)
        .into_iter()
        .filter(|&m| eps + spec.cost.g(m) < 0.0)
        .collect()
}

/// One monotone piece of a path.
#[derive(Debug, Clone)]
struct Leg {
    start: f64,
    end: f64,
    param: LegParam,
}

#[derive(Debug, Clone)]
enum LegParam {
    /// both ends turning: `m = lo + (hi-lo) sin²(θ/2)`, `q = -f/((m-lo)(m-hi))`
    Both { lo: f64, hi: f64, q: Vec<f64> },
    /// turning point `t`, regular end `e`: `m = t + (e-t) sin² u`, `q = f/(m-t)`
    One { t: f64, e: f64, q: Vec<f64>, from_turning: bool },
    /// no turning point: plain `m` parametrisation
    Plain,
}

/// Point on a leg: `m`, `dτ/du` and `sqrt f`.
#[derive(Debug, Clone, Copy)]
struct LegPoint {
    m: f64,
    w: f64,
    sf: f64,
}

impl Leg {
    fn new(start: f64, end: f64, t_start: bool, t_end: bool, fp: &[f64]) -> Self {
        let param = match (t_start, t_end) {
            (true, true) => {
                let (lo, hi) = (start.min(end), start.max(end));
                let q = poly_deflate(&poly_deflate(fp, lo), hi).iter().map(|c| -c).collect();
                LegParam::Both { lo, hi, q }
            }
            (true, false) => LegParam::One { t: start, e: end, q: poly_deflate(fp, start), from_turning: true },
            (false, true) => LegParam::One { t: end, e: start, q: poly_deflate(fp, end), from_turning: false },
            (false, false) => LegParam::Plain,
        };
        Self { start, end, param }
    }

    fn u_max(&self) -> f64 {
        match self.param {
            LegParam::Both { .. } => std::f64::consts::PI,
            LegParam::One { .. } => std::f64::consts::FRAC_PI_2,
            LegParam::Plain => 1.0,
        }
    }

    fn direction(&self) -> f64 {
        (self.end - self.start).signum()
    }

    fn point(&self, u: f64, spec: &ModelSpec, eps: f64) -> LegPoint {
        match &self.param {
            LegParam::Both { lo, hi, q } => {
                let s2 = (0.5 * u).sin().powi(2);
                let m = if self.start <= self.end { lo + (hi - lo) * s2 } else { hi - (hi - lo) * s2 };
                let qv = poly_eval(q, m).abs();
                let sq = qv.sqrt();
                LegPoint { m, w: 0.5 / sq, sf: 0.5 * (hi - lo) * u.sin() * sq }
            }
            LegParam::One { t, e, q, from_turning } => {
                // angle measured from the turning point
                let v = if *from_turning { u } else { std::f64::consts::FRAC_PI_2 - u };
                let m = t + (e - t) * v.sin().powi(2);
                let qv = poly_eval(q, m).abs();
                let span = (e - t).abs().sqrt();
                LegPoint { m, w: span * v.cos() / qv.sqrt(), sf: span * v.sin() * qv.sqrt() }
            }
            LegParam::Plain => {
                let m = self.start + (self.end - self.start) * u;
                let sf = f_value(spec, eps, m).max(0.0).sqrt();
                LegPoint { m, w: (self.end - self.start).abs() / (2.0 * sf), sf }
            }
        }
    }

    /// `∫ X dτ` over the leg.
    fn integrate<F: Fn(LegPoint) -> f64>(&self, spec: &ModelSpec, eps: f64, x: F) -> f64 {
        self.integrate_tol(spec, eps, x, QUAD_REL)
    }

    fn integrate_tol<F: Fn(LegPoint) -> f64>(&self, spec: &ModelSpec, eps: f64, x: F, rel: f64) -> f64 {
        integrate(|u| { let p = self.point(u, spec, eps); x(p) * p.w }, 0.0, self.u_max(), QUAD_ABS, rel).0
    }
}

/// A candidate path at fixed `ε`: legs from a start root to an end root.
#[derive(Debug, Clone)]
pub struct PathShape {
    pub eps: f64,
    pub m1: f64,
    pub m2: f64,
    /// index of the start root among the sorted endpoint roots
    pub start_index: usize,
    /// ordinal of the end-curve crossing along the orbit (0 = first)
    pub hit: usize,
    legs: Vec<Leg>,
    pub m_min: f64,
    pub m_max: f64,
}

/// Enumerate candidate paths at energy `ε`, up to `max_hits` end-curve
/// crossings per start point.
fn path_shapes(spec: &ModelSpec, eps: f64, max_hits: usize) -> Vec<PathShape> {
    let roots = end_roots(eps, spec);
    let fp = f_poly(spec, eps);
    let tp = turning_points(spec, eps, &fp);
    let mut out = Vec::new();
    for (si, &r) in roots.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        // forbidden component containing r
        let lo_t = tp.iter().copied().filter(|&t| t < r).fold(None, |a: Option<f64>, t| Some(a.map_or(t, |x| x.max(t))));
        let hi_t = tp.iter().copied().filter(|&t| t > r).fold(None, |a: Option<f64>, t| Some(a.map_or(t, |x| x.min(t))));
        // roots in the same component, and a check that no allowed gap separates them
        let lo = lo_t.unwrap_or(-1.0);
        let hi = hi_t.unwrap_or(1.0);
        let comp_roots: Vec<f64> = roots.iter().copied().filter(|&x| x > lo && x < hi && x != 0.0).collect();
        // unfold: s in [0, L) upper half (moving right), [L, 2L) lower half (moving left)
        let len = hi - lo;
        let cyclic = lo_t.is_some() && hi_t.is_some();
        let s_of = |m: f64, dir: f64| if dir > 0.0 { m - lo } else { len + (hi - m) };
        let s0 = s_of(r, r.signum());
        let mut hits: Vec<(f64, f64)> = Vec::new();
        for &x in &comp_roots {
            let s = s_of(x, -x.signum());
            let d = (s - s0).rem_euclid(2.0 * len);
            if d == 0.0 {
                continue;
            }
            let windings = if cyclic { 2 } else { 1 };
            for w in 0..windings {
                hits.push((d + 2.0 * len * w as f64, x));
            }
        }
        hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // walks that pass an edge at ±1 are rejected by build_legs
        let mut k = 0;
        for &(dist, x) in hits.iter() {
            if k >= max_hits {
                break;
            }
            let legs = build_legs(s0, s0 + dist, lo, hi, len, &fp, lo_t.is_some(), hi_t.is_some());
            let Some(legs) = legs else { continue };
            k += 1;
            let (mut m_min, mut m_max) = (r.min(x), r.max(x));
            for l in &legs {
                m_min = m_min.min(l.start).min(l.end);
                m_max = m_max.max(l.start).max(l.end);
            }
            out.push(PathShape { eps, m1: r, m2: x, start_index: si, hit: k - 1, legs, m_min, m_max });
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn build_legs(s0: f64, s1: f64, lo: f64, hi: f64, len: f64, fp: &[f64], lo_turn: bool, hi_turn: bool) -> Option<Vec<Leg>> {
    let m_of = |s: f64| {
        let s = s.rem_euclid(2.0 * len);
        if s < len {
            lo + s
        } else {
            hi - (s - len)
        }
    };
    // knots at multiples of len between s0 and s1
    let mut knots = vec![s0];
    let mut k = (s0 / len).floor() + 1.0;
    while k * len < s1 {
        knots.push(k * len);
        k += 1.0;
    }
    knots.push(s1);
    let mut legs = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ka = (a / len).round();
        let a_is_knot = (a - ka * len).abs() < 1e-300 && a != s0;
        let kb = (b / len).round();
        let b_is_knot = (b - kb * len).abs() < 1e-300 && b != s1;
        let turn_at = |kk: f64| -> bool {
            if (kk as i64).rem_euclid(2) == 1 {
                hi_turn
            } else {
                lo_turn
            }
        };
        let ta = a_is_knot && turn_at(ka);
        let tb = b_is_knot && turn_at(kb);
        if (a_is_knot && !ta) || (b_is_knot && !tb) {
            return None;
        }
        let ms = if a_is_knot { if (ka as i64).rem_euclid(2) == 1 { hi } else { lo } } else { m_of(a) };
        let me = if b_is_knot { if (kb as i64).rem_euclid(2) == 1 { hi } else { lo } } else { m_of(b) };
        if ms == me {
            continue;
        }
        legs.push(Leg::new(ms, me, ta, tb, fp));
    }
    Some(legs)
}

impl PathShape {
    /// Total imaginary time.
    pub fn time(&self, spec: &ModelSpec) -> f64 {
        self.legs.iter().map(|l| l.integrate(spec, self.eps, |_| 1.0)).sum()
    }

    fn time_coarse(&self, spec: &ModelSpec) -> f64 {
        self.legs.iter().map(|l| l.integrate_tol(spec, self.eps, |_| 1.0, 1e-8)).sum()
    }

    fn leg_times(&self, spec: &ModelSpec) -> Vec<f64> {
        self.legs.iter().map(|l| l.integrate(spec, self.eps, |_| 1.0)).collect()
    }

    fn integral<F: Fn(LegPoint) -> f64 + Copy>(&self, spec: &ModelSpec, x: F) -> f64 {
        self.legs.iter().map(|l| l.integrate(spec, self.eps, x)).sum()
    }

    pub fn crosses(&self, m: f64) -> bool {
        self.m_min <= m && m <= self.m_max
    }
}

/// Which stationary point of the open functional a trajectory represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Saddle,
    Minimum,
}

/// Solution of `T(ε) = β` with its free energy.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub eps: f64,
    /// `None` for the static solution `m ≡ 0`.
    pub shape: Option<PathShape>,
    pub free_energy: f64,
    pub crosses_top: bool,
    pub on_meta_side: bool,
}

/// Continuous-time open-boundary trajectory and its invariants.
#[derive(Debug, Clone)]
pub struct InstantonTrajectory {
    pub taus: Vec<f64>,
    pub m_z: Vec<f64>,
    pub m_x: Vec<f64>,
    pub i_m_y: Vec<f64>,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub ell: f64,
    pub m1: f64,
    pub m2: f64,
    pub p1: f64,
    pub p2: f64,
    pub integral_i: f64,
    pub kappa: f64,
    pub branch: Branch,
    pub beta: f64,
    /// `∫ (m g' - g) dτ`
    pub integral_mg: f64,
    /// `∫ p dm` along the path
    pub wkb_action: f64,
    pub is_static: bool,
    shape: Option<PathShape>,
    leg_times: Vec<f64>,
    spec: ModelSpec,
}

/// Trajectory sampled on a uniform grid of this many points by default.
pub const DEFAULT_GRID: usize = 1024;

/// Instanton state at one time: `(m_z, m_x, i m_y, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub m_z: f64,
    pub m_x: f64,
    pub i_m_y: f64,
    pub p: f64,
}

impl InstantonTrajectory {
    fn build(spec: &ModelSpec, beta: f64, cand: &Candidate, branch: Branch, grid: usize) -> Self {
        let g = spec.gamma;
        let (eps, shape) = (cand.eps, cand.shape.clone());
        let (m1, m2, integral_i, integral_mg, wkb_action, leg_times, is_static) = match &shape {
            None => {
                let e0 = spec.cost.g(0.0);
                (0.0, 0.0, beta * (eps + e0).abs(), -beta * e0, 0.0, Vec::new(), true)
            }
            Some(s) => {
                let ii = s.integral(spec, |p| (eps + spec.cost.g(p.m)).abs() / (1.0 - p.m * p.m));
                let mg = s.integral(spec, |p| p.m * spec.cost.g1(p.m) - spec.cost.g(p.m));
                // ∫|p| |dm| = ∫ |p| 2 sqrt(f) dτ
                let a = s.integral(spec, |p| 2.0 * p.sf * (p.sf / (g * (1.0 - p.m * p.m).sqrt())).asinh());
                (s.m1, s.m2, ii, mg, a, s.leg_times(spec), false)
            }
        };
        let p1 = m1.atanh();
        let p2 = -m2.atanh();
        let kappa = (2.0 * integral_i - 0.5 * ((1.0 - m1 * m1).ln() + (1.0 - m2 * m2).ln())).exp();
        let mut t = Self {
            taus: Vec::new(),
            m_z: Vec::new(),
            m_x: Vec::new(),
            i_m_y: Vec::new(),
            momentum: Vec::new(),
            energy: eps,
            ell: 1.0,
            m1,
            m2,
            p1,
            p2,
            integral_i,
            kappa,
            branch,
            beta,
            integral_mg,
            wkb_action,
            is_static,
            shape,
            leg_times,
            spec: spec.clone(),
        };
        t.resample(grid);
        t
    }

    /// Resample the stored grids on `n` uniform points in `[0, β]`.
    pub fn resample(&mut self, n: usize) {
        let n = n.max(2);
        self.taus = (0..n).map(|k| self.beta * k as f64 / (n - 1) as f64).collect();
        let states: Vec<State> = self.taus.iter().map(|&t| self.state_at(t)).collect();
        self.m_z = states.iter().map(|s| s.m_z).collect();
        self.m_x = states.iter().map(|s| s.m_x).collect();
        self.i_m_y = states.iter().map(|s| s.i_m_y).collect();
        self.momentum = states.iter().map(|s| s.p).collect();
        let l2: Vec<f64> = states.iter().map(|s| s.m_x * s.m_x - s.i_m_y * s.i_m_y + s.m_z * s.m_z).collect();
        self.ell = (l2.iter().sum::<f64>() / l2.len() as f64).sqrt();
    }

    /// State at an arbitrary time by inverting the leg time integrals.
    pub fn state_at(&self, tau: f64) -> State {
        let spec = &self.spec;
        let Some(shape) = &self.shape else {
            return State { m_z: 0.0, m_x: -(self.energy + spec.cost.g(0.0)) / spec.gamma, i_m_y: 0.0, p: 0.0 };
        };
        let eps = self.energy;
        let mut t = tau.clamp(0.0, self.beta);
        let mut idx = 0;
        while idx + 1 < shape.legs.len() && t > self.leg_times[idx] {
            t -= self.leg_times[idx];
            idx += 1;
        }
        let leg = &shape.legs[idx];
        let t = t.min(self.leg_times[idx]);
        let weight = |u: f64| leg.point(u, spec, eps).w;
        // coarse panels, then Brent inside the panel
        let panels = 32;
        let umax = leg.u_max();
        let mut acc = 0.0;
        let mut u_at = umax;
        let mut base = 0.0;
        let mut lo_u = 0.0;
        for k in 0..panels {
            let a = umax * k as f64 / panels as f64;
            let b = umax * (k + 1) as f64 / panels as f64;
            let seg = integrate(weight, a, b, QUAD_ABS, QUAD_REL).0;
            if acc + seg >= t || k == panels - 1 {
                base = acc;
                lo_u = a;
                u_at = b;
                break;
            }
            acc += seg;
        }
        let target = t - base;
        let u = if target <= 0.0 {
            lo_u
        } else {
            brent(|u| kronrod15_adaptive(weight, lo_u, u) - target, lo_u, u_at, 1e-15, 200).unwrap_or(u_at)
        };
        let p = leg.point(u, spec, eps);
        let d = leg.direction();
        let m = p.m;
        State {
            m_z: m,
            m_x: -(eps + spec.cost.g(m)) / spec.gamma,
            i_m_y: d * p.sf / spec.gamma,
            p: d * (p.sf / (spec.gamma * (1.0 - m * m).sqrt())).asinh(),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }
}

fn kronrod15_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if b - a < 1e-3 {
        kronrod15(&f, a, b)
    } else {
        integrate(&f, a, b, QUAD_ABS, QUAD_REL).0
    }
}

/// All solutions of `T(ε) = β` and the landscape used to classify them.
#[derive(Debug, Clone)]
pub struct ShootReport {
    pub landscape: Landscape,
    pub candidates: Vec<Candidate>,
}

fn g_range(spec: &ModelSpec) -> (f64, f64) {
    let d = poly_deriv(spec.cost.coefficients());
    let mut pts = poly_real_roots(&d, -1.0, 1.0);
    pts.push(-1.0);
    pts.push(1.0);
    let vals: Vec<f64> = pts.iter().map(|&m| spec.cost.g(m)).collect();
    (vals.iter().cloned().fold(f64::MAX, f64::min), vals.iter().cloned().fold(f64::MIN, f64::max))
}

/// Energies at which the orbit topology can change.
fn special_energies(spec: &ModelSpec, land: &Landscape) -> Vec<f64> {
    let (gmin, gmax) = g_range(spec);
    let (lo, hi) = (-spec.gamma - gmax, -spec.gamma - gmin);
    let mut v = vec![lo, hi, -spec.gamma - spec.cost.g(0.0), -spec.cost.g(1.0), -spec.cost.g(-1.0)];
    v.extend(land.critical.iter().map(|c| c.u));
    for m in poly_real_roots(&poly_deriv(spec.cost.coefficients()), -1.0, 1.0) {
        v.push(-spec.gamma - spec.cost.g(m));
    }
    v.retain(|&e| e >= lo && e <= hi);
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + a.abs()));
    v
}

/// Grid points clustered double-exponentially at both ends of `(a, b)`.
fn clustered_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (1..n)
        .map(|k| {
            let t = -3.2 + 6.4 * k as f64 / n as f64;
            let x = 0.5 * (1.0 + (std::f64::consts::FRAC_PI_2 * t.sinh()).tanh());
            a + (b - a) * x
        })
        .filter(|&e| e > a && e < b)
        .collect()
}

const MAX_HITS: usize = 4;
const SCAN_POINTS: usize = 96;

fn family_key(s: &PathShape) -> (usize, usize) {
    (s.start_index, s.hit)
}

fn shape_for(spec: &ModelSpec, eps: f64, key: (usize, usize), n_roots: usize) -> Option<PathShape> {
    if end_roots(eps, spec).len() != n_roots {
        return None;
    }
    path_shapes(spec, eps, MAX_HITS).into_iter().find(|s| family_key(s) == key)
}

/// Solve `T(ε) = β` on every path family and classify the solutions.
pub fn solve_all(spec: &ModelSpec, beta: f64) -> Result<ShootReport, Error> {
    let land = landscape(spec)?;
    let specials = special_energies(spec, &land);
    let side = (land.m_meta - land.m_top).signum();
    let mut cands: Vec<Candidate> = Vec::new();
    for w in specials.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 1e-13 * (1.0 + a.abs()) {
            continue;
        }
        let grid = clustered_grid(a, b, SCAN_POINTS);
        let mut prev: Vec<((usize, usize), f64, f64, usize)> = Vec::new();
        for &eps in &grid {
            let n_roots = end_roots(eps, spec).len();
            let shapes = path_shapes(spec, eps, MAX_HITS);
            let cur: Vec<((usize, usize), f64, f64, usize)> =
                shapes.iter().map(|s| (family_key(s), eps, s.time_coarse(spec) - beta, n_roots)).collect();
            for &(key, e1, r1, nr) in &cur {
                if let Some(&(_, e0, r0, nr0)) = prev.iter().find(|p| p.0 == key) {
                    if nr0 == nr && r0.is_finite() && r1.is_finite() && (r0 < 0.0) != (r1 < 0.0) {
                        let root = brent(
                            |e| shape_for(spec, e, key, nr).map(|s| s.time(spec) - beta).unwrap_or(f64::NAN),
                            e0,
                            e1,
                            1e-16,
                            200,
                        );
                        if let Some(e) = root {
                            if let Some(s) = shape_for(spec, e, key, nr) {
                                // near a well T(ε) is steep enough that ε resolution limits T
                                let ulp = 4.0 * f64::EPSILON * e.abs().max(1e-300);
                                let slope = shape_for(spec, e + ulp, key, nr)
                                    .map(|x| (x.time(spec) - s.time(spec)).abs())
                                    .unwrap_or(0.0);
                                // a jump in T is a family switch, not a root
                                let tol = (1e-9 * beta.max(1.0)).max(4.0 * slope);
                                if slope < 1e-2 * beta.max(1.0) && (s.time(spec) - beta).abs() < tol {
                                    cands.push(candidate(spec, beta, e, Some(s), &land, side));
                                }
                            }
                        }
                    }
                }
            }
            prev = cur;
        }
    }
    if spec.cost.g1(0.0).abs() < 1e-14 {
        let eps = -spec.gamma - spec.cost.g(0.0);
        cands.push(candidate(spec, beta, eps, None, &land, side));
    }
    // de-duplicate solutions found from both sides of a scan point
    let mut uniq: Vec<Candidate> = Vec::new();
    for c in cands {
        let dup = uniq.iter().any(|u| {
            (u.eps - c.eps).abs() < 1e-11
                && match (&u.shape, &c.shape) {
                    (Some(x), Some(y)) => (x.m1 - y.m1).abs() < 1e-9 && (x.m2 - y.m2).abs() < 1e-9 && x.legs.len() == y.legs.len(),
                    (None, None) => true,
                    _ => false,
                }
        });
        if !dup {
            uniq.push(c);
        }
    }
    uniq.sort_by(|a, b| a.free_energy.partial_cmp(&b.free_energy).unwrap());
    Ok(ShootReport { landscape: land, candidates: uniq })
}

fn candidate(spec: &ModelSpec, beta: f64, eps: f64, shape: Option<PathShape>, land: &Landscape, side: f64) -> Candidate {
    let tmp = Candidate { eps, shape: shape.clone(), free_energy: 0.0, crosses_top: false, on_meta_side: false };
    let t = InstantonTrajectory::build(spec, beta, &tmp, Branch::Saddle, 2);
    let f = free_energy_ob(&t, spec);
    let (crosses, meta) = match &shape {
        Some(s) => (s.crosses(land.m_top), (s.m_min - land.m_top) * side > 0.0 && (s.m_max - land.m_top) * side > 0.0),
        None => (false, (0.0 - land.m_top) * side > 0.0),
    };
    Candidate { eps, shape, free_energy: f, crosses_top: crosses, on_meta_side: meta }
}

impl ShootReport {
    /// Members of a branch, lowest free energy first. Saddles are paths
    /// across the barrier top. At high temperature the saddle moves past the
    /// top; with no crossing path, the saddle is the lowest path that is
    /// neither the metastable nor the global-basin minimum.
    fn members(&self, branch: Branch) -> Vec<&Candidate> {
        match branch {
            Branch::Minimum => self.candidates.iter().filter(|c| c.on_meta_side).collect(),
            Branch::Saddle => {
                let crossing: Vec<&Candidate> = self.candidates.iter().filter(|c| c.crosses_top).collect();
                if !crossing.is_empty() {
                    return crossing;
                }
                let f_meta = self.candidates.iter().find(|c| c.on_meta_side).map(|c| c.free_energy);
                let glob = self.candidates.iter().find(|c| !c.on_meta_side).map(|c| c.eps);
                self.candidates
                    .iter()
                    .filter(|c| !c.on_meta_side && Some(c.eps) != glob)
                    .filter(|c| f_meta.map_or(true, |f| c.free_energy > f))
                    .collect()
            }
        }
    }

    /// Lowest free-energy solution of the requested branch.
    pub fn best(&self, branch: Branch) -> Option<&Candidate> {
        self.members(branch).into_iter().next()
    }

    /// Solutions of the branch other than the chosen one.
    pub fn alternatives(&self, branch: Branch) -> Vec<&Candidate> {
        self.members(branch).into_iter().skip(1).collect()
    }
}

/// Time of flight of the first path family of the given branch at `ε`.
pub fn time_of_flight(eps: f64, spec: &ModelSpec, branch: Branch) -> Result<f64, Error> {
    let land = landscape(spec)?;
    let side = (land.m_meta - land.m_top).signum();
    let shapes = path_shapes(spec, eps, MAX_HITS);
    let pick = shapes.iter().find(|s| match branch {
        Branch::Saddle => s.crosses(land.m_top),
        Branch::Minimum => (s.m_min - land.m_top) * side > 0.0 && (s.m_max - land.m_top) * side > 0.0,
    });
    pick.map(|s| s.time(spec))
        .ok_or_else(|| Error::NoSolution(format!("no {branch:?} path at ε = {eps}")))
}

/// Solve for the trajectory of `branch` at inverse temperature `beta`.
pub fn shoot(spec: &ModelSpec, beta: f64, branch: Branch) -> Result<InstantonTrajectory, Error> {
    shoot_with_grid(spec, beta, branch, DEFAULT_GRID)
}

pub fn shoot_with_grid(spec: &ModelSpec, beta: f64, branch: Branch, grid: usize) -> Result<InstantonTrajectory, Error> {
    let rep = solve_all(spec, beta)?;
    let best = rep
        .best(branch)
        .ok_or_else(|| Error::NoSolution(format!("no {branch:?} solution at β = {beta}")))?;
    Ok(InstantonTrajectory::build(spec, beta, best, branch, grid))
}

/// Build the trajectory for a specific candidate of a report.
pub fn trajectory_for(spec: &ModelSpec, beta: f64, cand: &Candidate, branch: Branch, grid: usize) -> InstantonTrajectory {
    InstantonTrajectory::build(spec, beta, cand, branch, grid)
}

/// `𝓘 = ∫ |ε + g(m)| / (1 - m²) dτ`.
pub fn integral_i(traj: &InstantonTrajectory) -> f64 {
    traj.integral_i
}

/// The same integral by Simpson's rule on the stored uniform grid.
pub fn integral_i_on_grid(traj: &InstantonTrajectory) -> f64 {
    let h = traj.beta / (traj.taus.len() - 1) as f64;
    let y: Vec<f64> = traj
        .m_z
        .iter()
        .map(|&m| (traj.energy + traj.spec.cost.g(m)).abs() / (1.0 - m * m))
        .collect();
    simpson(&y, h)
}

/// Per-spin free energy
/// `β𝓕 = ∫(m g' - g) dτ - ln 2 - 𝓘 + ¼(ln(1-m1²) + ln(1-m2²))`.
pub fn free_energy_ob(traj: &InstantonTrajectory, _spec: &ModelSpec) -> f64 {
    let (m1, m2) = (traj.m1, traj.m2);
    let bf = traj.integral_mg - 2f64.ln() - traj.integral_i + 0.25 * ((1.0 - m1 * m1).ln() + (1.0 - m2 * m2).ln());
    bf / traj.beta
}

/// WKB assembly `β𝓕 = βε + ½(∫p dm - Q(m1) - Q(m2))`.
pub fn wkb_free_energy(traj: &InstantonTrajectory, _spec: &ModelSpec) -> f64 {
    let q = |m: f64| binary_entropy(m).unwrap_or(0.0);
    (traj.beta * traj.energy + 0.5 * (traj.wkb_action - q(traj.m1) - q(traj.m2))) / traj.beta
}

/// Both routes to `κ`, plus the ζ-propagation checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaResult {
    /// `ln κ = 2𝓘 - ½(ln(1-m1²) + ln(1-m2²))`
    pub closed: f64,
    /// `(tr ω K / 2)²` with `K` integrated along the trajectory
    pub direct: f64,
    /// `√2 ζ_z(β) / (1 - m2²)` from the ζ equation
    pub zeta: f64,
    /// `ϱ(β) = i ζ_y(β) / ζ_z(β)`
    pub rho_beta: f64,
    /// `ϱ(0)`
    pub rho_zero: f64,
}

/// Integrate the 2×2 propagator `dK/dτ = (Γσ_x + λσ_z) K` and the
/// linearised vector equation for `ζ` along the trajectory.
pub fn propagator_kappa(traj: &InstantonTrajectory, spec: &ModelSpec) -> Result<KappaResult, Error> {
    let g = spec.gamma;
    let y0 = [1.0, 0.0, 0.0, 1.0, 0.0, std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
    let rhs = |t: f64, y: &[f64], d: &mut [f64]| {
        let l = spec.cost.g1(traj.state_at(t).m_z);
        // K = [[y0, y1], [y2, y3]]
        d[0] = g * y[2] + l * y[0];
        d[1] = g * y[3] + l * y[1];
        d[2] = g * y[0] - l * y[2];
        d[3] = g * y[1] - l * y[3];
        // ζ = (x, i y, z)
        d[4] = -2.0 * l * y[5];
        d[5] = 2.0 * g * y[6] - 2.0 * l * y[4];
        d[6] = 2.0 * g * y[5];
    };
    let sol = dopri5(rhs, &y0, &[0.0, traj.beta], 1e-12, 1e-14)
        .map_err(|e| Error::Numerical(format!("propagator integration failed: {e:?}")))?;
    let y = &sol.y[1];
    let tr_omega_k = y[0] + y[1] + y[2] + y[3];
    let direct = (0.5 * tr_omega_k).powi(2);
    let m2 = traj.m2;
    Ok(KappaResult {
        closed: traj.kappa,
        direct,
        zeta: std::f64::consts::SQRT_2 * y[6] / (1.0 - m2 * m2),
        rho_beta: y[5] / y[6],
        rho_zero: y0[5] / y0[6],
    })
}

/// `(ΔF_OB, F_saddle, F_min)`.
pub fn barrier(spec: &ModelSpec, beta: f64) -> Result<(f64, f64, f64), Error> {
    let rep = solve_all(spec, beta)?;
    let s = rep.best(Branch::Saddle).ok_or_else(|| Error::NoSolution(format!("no saddle at β = {beta}")))?;
    let m = rep.best(Branch::Minimum).ok_or_else(|| Error::NoSolution(format!("no minimum at β = {beta}")))?;
    Ok((s.free_energy - m.free_energy, s.free_energy, m.free_energy))
}

/// Right-hand side of the vector saddle equations for `(m_x, i m_y, m_z)`.
pub fn vector_rhs(spec: &ModelSpec, y: &[f64], d: &mut [f64]) {
    let l = spec.cost.g1(y[2]);
    d[0] = -2.0 * l * y[1];
    d[1] = 2.0 * spec.gamma * y[2] - 2.0 * l * y[0];
    d[2] = 2.0 * spec.gamma * y[1];
}

/// Endpoint momentum residuals `(p1 + Q'(m1), p2 - Q'(m2))`.
pub fn endpoint_momentum_residuals(traj: &InstantonTrajectory) -> (f64, f64) {
    let q = |m: f64| entropy_prime(m).unwrap_or(f64::NAN);
    let s0 = traj.state_at(0.0);
    let s1 = traj.state_at(traj.beta);
    (s0.p + q(traj.m1), s1.p - q(traj.m2))
}
