//! Discrete mean-field free energy on the replica chain and its saddles.
//!
//! For a field profile `λ(τ)` the single-spin weight is the ordered product
//! of transfer matrices `L(λ) = c · e^{ΓΔσ_x} e^{Δλσ_z}` with
//! `c = e^{βJ}/cosh ΓΔ`. Periodic chains use `tr K`, open chains
//! `tr(ω K)` with `ω = 1 + σ_x`. Products are kept as a normalised matrix and
//! a separate log scale. [`free_energy`] drops the constant `R ln c`, which
//! diverges as `R → ∞`, so that its values converge to the continuum
//! functional; [`free_energy_raw`] keeps it.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};

use crate::model::{Boundary, ModelSpec, QmcParams};
use crate::numerics::ln_2cosh;
use crate::Error;

/// A 2×2 transfer matrix with strictly positive entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub entries: Matrix2<f64>,
}

/// `L(λ) = [[e^{βJ}, e^{-βJ}], [e^{-βJ}, e^{βJ}]] · diag(e^{βλ/R}, e^{-βλ/R})`.
pub fn transfer_matrix(lambda: f64, spec: &ModelSpec, params: &QmcParams) -> Result<TransferMatrix, Error> {
    if !lambda.is_finite() {
        return Err(Error::Parameter("field must be finite".into()));
    }
    let bj = spec.beta * params.coupling;
    let a = params.delta(spec) * lambda;
    let (p, q) = ((bj + a).exp(), (-bj + a).exp());
    let (r, s) = ((-bj - a).exp(), (bj - a).exp());
    let entries = Matrix2::new(p, r, q, s);
    if entries.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::Numerical(format!("transfer matrix overflow (βJ = {bj}, Δλ = {a})")));
    }
    Ok(TransferMatrix { entries })
}

/// Field and magnetization on the `R` slices.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldProfile {
    pub lambdas: Vec<f64>,
    pub magnetizations: Vec<f64>,
    pub boundary: Boundary,
}

impl FieldProfile {
    /// Profile with `λ = g'(m)` on every slice.
    pub fn from_magnetizations(spec: &ModelSpec, m: Vec<f64>, boundary: Boundary) -> Self {
        let lambdas = m.iter().map(|&x| spec.cost.g1(x)).collect();
        Self { lambdas, magnetizations: m, boundary }
    }

    pub fn replicas(&self) -> usize {
        self.lambdas.len()
    }
}

fn sigma_z() -> Matrix2<f64> {
    Matrix2::new(1.0, 0.0, 0.0, -1.0)
}

fn sigma_x() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, 1.0, 0.0)
}

/// `i σ_y`, a real matrix.
fn i_sigma_y() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

fn omega(boundary: Boundary) -> Matrix2<f64> {
    match boundary {
        Boundary::Periodic => Matrix2::identity(),
        Boundary::Open => Matrix2::new(1.0, 1.0, 1.0, 1.0),
    }
}

/// Matrix with a separate natural-log scale.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    m: Matrix2<f64>,
    ln: f64,
}

impl Scaled {
    fn new(m: Matrix2<f64>) -> Self {
        Self { m, ln: 0.0 }.renorm()
    }

    fn renorm(mut self) -> Self {
        let s = self.m.amax();
        if s > 0.0 && s.is_finite() {
            self.m /= s;
            self.ln += s.ln();
        }
        self
    }

    fn mul(&self, rhs: &Scaled) -> Scaled {
        Scaled { m: self.m * rhs.m, ln: self.ln + rhs.ln }.renorm()
    }
}

/// Prefix and suffix products of the normalised factors
/// `L̂_k = e^{ΓΔσ_x} e^{Δλ_kσ_z}` for a given profile.
struct Chain {
    factors: Vec<Matrix2<f64>>,
    /// `P_k = L̂_{k-1} ⋯ L̂_0`, `P_0 = 1`, for `k = 0..=R`.
    prefix: Vec<Scaled>,
    /// `S_k = B L̂_{R-1} ⋯ L̂_k`, `S_R = B`, for `k = 0..=R`.
    suffix: Vec<Scaled>,
    /// `ln tr(B L̂_{R-1} ⋯ L̂_0)`.
    ln_z: f64,
}

impl Chain {
    fn new(lambdas: &[f64], spec: &ModelSpec, params: &QmcParams, boundary: Boundary) -> Result<Self, Error> {
        let r = lambdas.len();
        if r != params.replicas {
            return Err(Error::Dimension(format!("profile has {r} slices, params expect {}", params.replicas)));
        }
        let d = params.delta(spec);
        let x = spec.gamma * d;
        let (ch, sh) = (x.cosh(), x.sinh());
        let factors: Vec<Matrix2<f64>> = lambdas
            .iter()
            .map(|&l| {
                let (ep, em) = ((d * l).exp(), (-d * l).exp());
                Matrix2::new(ch * ep, sh * em, sh * ep, ch * em)
            })
            .collect();
        if factors.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("transfer factor overflow".into()));
        }
        let mut prefix = Vec::with_capacity(r + 1);
        prefix.push(Scaled { m: Matrix2::identity(), ln: 0.0 });
        for k in 0..r {
            let next = Scaled::new(factors[k]).mul(&prefix[k]);
            prefix.push(next);
        }
        let mut suffix = vec![Scaled { m: omega(boundary), ln: 0.0 }; r + 1];
        for k in (0..r).rev() {
            suffix[k] = suffix[k + 1].mul(&Scaled::new(factors[k]));
        }
        let tr = suffix[0].m.trace();
        if !(tr > 0.0) {
            return Err(Error::Numerical("non-positive chain trace".into()));
        }
        let ln_z = tr.ln() + suffix[0].ln;
        Ok(Self { factors, prefix, suffix, ln_z })
    }

    /// `tr(S_k A P_k) / Z`.
    fn insert(&self, k: usize, a: &Matrix2<f64>) -> f64 {
        let s = &self.suffix[k];
        let p = &self.prefix[k];
        (s.m * a * p.m).trace() * (s.ln + p.ln - self.ln_z).exp()
    }

    fn slice_m(&self) -> Vec<f64> {
        let sz = sigma_z();
        (0..self.factors.len()).map(|k| self.insert(k, &sz)).collect()
    }

    /// Connected correlations `⟨σ_iσ_j⟩ - m_i m_j`.
    fn covariance(&self, m: &[f64]) -> DMatrix<f64> {
        let r = self.factors.len();
        let sz = sigma_z();
        let mut c = DMatrix::zeros(r, r);
        for i in 0..r {
            c[(i, i)] = 1.0 - m[i] * m[i];
            let mut x = Scaled { m: sz * self.prefix[i].m, ln: self.prefix[i].ln };
            for j in i + 1..r {
                x = Scaled::new(self.factors[j - 1]).mul(&x);
                let s = &self.suffix[j];
                let v = (s.m * sz * x.m).trace() * (s.ln + x.ln - self.ln_z).exp();
                let cij = v - m[i] * m[j];
                c[(i, j)] = cij;
                c[(j, i)] = cij;
            }
        }
        c
    }
}

/// `ln 𝓥` of the normalised chain (constant `R ln c` removed).
pub fn ln_trace_normalized(profile: &FieldProfile, spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    Ok(Chain::new(&profile.lambdas, spec, params, profile.boundary)?.ln_z)
}

/// `ln c` with `c = e^{βJ}/cosh ΓΔ`, the per-slice normalisation.
pub fn ln_slice_constant(spec: &ModelSpec, params: &QmcParams) -> f64 {
    spec.beta * params.coupling - (spec.gamma * params.delta(spec)).cosh().ln()
}

/// `ln 𝓥` for the raw transfer matrices of [`transfer_matrix`].
pub fn ln_trace_partition(profile: &FieldProfile, spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    Ok(ln_trace_normalized(profile, spec, params)? + params.replicas as f64 * ln_slice_constant(spec, params))
}

/// `𝓥 = tr K` (periodic) or `tr(ω K)` (open).
pub fn trace_partition(profile: &FieldProfile, spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    let v = ln_trace_partition(profile, spec, params)?.exp();
    if !v.is_finite() {
        return Err(Error::Numerical("partition overflows f64; use ln_trace_partition".into()));
    }
    Ok(v)
}

/// `m(τ) = tr[K^{R-1,τ} σ_z K^{τ-1,0}] / 𝓥`, ω inserted for open chains.
pub fn slice_magnetization(profile: &FieldProfile, spec: &ModelSpec, params: &QmcParams) -> Result<Vec<f64>, Error> {
    Ok(Chain::new(&profile.lambdas, spec, params, profile.boundary)?.slice_m())
}

/// Vector magnetization `(m_x, i m_y, m_z)` at the `R+1` knots between
/// slices. Knot `k` sits to the right of slice `k`, knot `R` at `τ = β`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMagnetization {
    pub m_x: Vec<f64>,
    pub i_m_y: Vec<f64>,
    pub m_z: Vec<f64>,
}

impl VectorMagnetization {
    /// `m_x² - (i m_y)² + m_z²` per knot.
    pub fn ell_squared(&self) -> Vec<f64> {
        (0..self.m_x.len())
            .map(|k| self.m_x[k].powi(2) - self.i_m_y[k].powi(2) + self.m_z[k].powi(2))
            .collect()
    }
}

pub fn vector_magnetization(
    profile: &FieldProfile,
    spec: &ModelSpec,
    params: &QmcParams,
) -> Result<VectorMagnetization, Error> {
    let ch = Chain::new(&profile.lambdas, spec, params, profile.boundary)?;
    let r = profile.replicas();
    let (sx, sy, sz) = (sigma_x(), i_sigma_y(), sigma_z());
    Ok(VectorMagnetization {
        m_x: (0..=r).map(|k| ch.insert(k, &sx)).collect(),
        i_m_y: (0..=r).map(|k| ch.insert(k, &sy)).collect(),
        m_z: (0..=r).map(|k| ch.insert(k, &sz)).collect(),
    })
}

/// `(1/R) Σ (λ m - g(m)) - (1/β) ln 𝓥̂` in the continuum normalisation.
pub fn free_energy(profile: &FieldProfile, spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    let r = profile.replicas() as f64;
    let local: f64 = profile
        .lambdas
        .iter()
        .zip(&profile.magnetizations)
        .map(|(&l, &m)| l * m - spec.cost.g(m))
        .sum::<f64>()
        / r;
    Ok(local - ln_trace_normalized(profile, spec, params)? / spec.beta)
}

/// Same functional with the raw transfer matrices.
pub fn free_energy_raw(profile: &FieldProfile, spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    Ok(free_energy(profile, spec, params)? - params.replicas as f64 * ln_slice_constant(spec, params) / spec.beta)
}

/// Free energy as a function of `m` alone, with `λ = g'(m)`.
pub fn reduced_free_energy(spec: &ModelSpec, params: &QmcParams, boundary: Boundary, m: &[f64]) -> Result<f64, Error> {
    free_energy(&FieldProfile::from_magnetizations(spec, m.to_vec(), boundary), spec, params)
}

/// Analytic gradient of [`reduced_free_energy`]:
/// `∂F/∂m_k = (1/R) g''(m_k) (m_k - M_k(g'(m)))`.
pub fn reduced_gradient(spec: &ModelSpec, params: &QmcParams, boundary: Boundary, m: &[f64]) -> Result<Vec<f64>, Error> {
    let prof = FieldProfile::from_magnetizations(spec, m.to_vec(), boundary);
    let mm = slice_magnetization(&prof, spec, params)?;
    let r = m.len() as f64;
    Ok(m.iter().zip(&mm).map(|(&a, &b)| spec.cost.g2(a) * (a - b) / r).collect())
}

/// Continuum free energy of a static profile `m ≡ const`, `λ = g'(m)`.
pub fn static_free_energy_continuum(spec: &ModelSpec, boundary: Boundary, m: f64) -> f64 {
    let l = spec.cost.g1(m);
    let h = spec.gamma.hypot(l);
    let b = spec.beta;
    let ln_v = match boundary {
        Boundary::Periodic => ln_2cosh(b * h),
        // tr(ω e^{β h·σ}) = 2 cosh βh + 2 (Γ/h) sinh βh
        Boundary::Open => {
            let t = spec.gamma / h;
            b * h + (0.5 * (1.0 + t) + 0.5 * (1.0 - t) * (-2.0 * b * h).exp()).ln() + 2f64.ln()
        }
    };
    l * m - spec.cost.g(m) - ln_v / b
}

/// Minimum over `m` of [`static_free_energy_continuum`], by grid scan and
/// golden-section refinement. Returns `(m, F)`.
pub fn static_minimum_continuum(spec: &ModelSpec, boundary: Boundary) -> (f64, f64) {
    let f = |m: f64| static_free_energy_continuum(spec, boundary, m);
    let n = 4000;
    let grid: Vec<f64> = (0..=n).map(|k| -1.0 + 2.0 * k as f64 / n as f64).map(|x| x.clamp(-0.999999, 0.999999)).collect();
    let mut best = (grid[0], f(grid[0]));
    let mut k_best = 0;
    for (k, &m) in grid.iter().enumerate() {
        let v = f(m);
        if v < best.1 {
            best = (m, v);
            k_best = k;
        }
    }
    let (mut a, mut b) = (grid[k_best.saturating_sub(1)], grid[(k_best + 1).min(n)]);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let m = 0.5 * (a + b);
    let v = f(m);
    if v < best.1 {
        (m, v)
    } else {
        best
    }
}

/// Classification of a stationary point by its Morse index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaddleKind {
    Minimum,
    Saddle,
}

/// Converged stationary point of the reduced free energy.
#[derive(Debug, Clone)]
pub struct SaddleResult {
    pub profile: FieldProfile,
    /// Per-spin free energy, continuum normalisation.
    pub free_energy: f64,
    pub free_energy_raw: f64,
    pub residual_norm: f64,
    pub kind: SaddleKind,
    pub requested: SaddleKind,
    /// Number of negative curvature directions.
    pub morse_index: usize,
    pub iterations: usize,
}

/// Options for [`solve_saddle`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_iter: 200 }
    }
}

const M_CLAMP: f64 = 1.0 - 1e-13;

/// Newton iteration on `m - M(g'(m)) = 0` with the analytic Jacobian
/// `1 - Δ·Cov·diag(g''(m))` and a backtracking line search.
pub fn solve_saddle(
    spec: &ModelSpec,
    params: &QmcParams,
    boundary: Boundary,
    initial_guess: &FieldProfile,
    kind: SaddleKind,
) -> Result<SaddleResult, Error> {
    solve_saddle_with(spec, params, boundary, initial_guess, kind, SolveOptions::default())
}

pub fn solve_saddle_with(
    spec: &ModelSpec,
    params: &QmcParams,
    boundary: Boundary,
    initial_guess: &FieldProfile,
    kind: SaddleKind,
    opts: SolveOptions,
) -> Result<SaddleResult, Error> {
    let r = params.replicas;
    if initial_guess.replicas() != r {
        return Err(Error::Dimension("initial guess length differs from R".into()));
    }
    let d = params.delta(spec);
    let mut m: Vec<f64> = initial_guess.magnetizations.iter().map(|x| x.clamp(-M_CLAMP, M_CLAMP)).collect();
    let lam = |m: &[f64]| -> Vec<f64> { m.iter().map(|&x| spec.cost.g1(x)).collect() };
    let residual = |m: &[f64]| -> Result<(Vec<f64>, Chain, Vec<f64>), Error> {
        let ch = Chain::new(&lam(m), spec, params, boundary)?;
        let mm = ch.slice_m();
        let res = m.iter().zip(&mm).map(|(a, b)| a - b).collect();
        Ok((res, ch, mm))
    };
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let (mut res, mut chain, mut mm) = residual(&m)?;
    let mut norm = sup(&res);
    let mut iter = 0;
    while norm > opts.tolerance {
        if iter >= opts.max_iter {
            return Err(Error::Convergence(format!("saddle residual {norm:e} after {iter} iterations")));
        }
        iter += 1;
        let cov = chain.covariance(&mm);
        let mut jac = DMatrix::<f64>::identity(r, r);
        for i in 0..r {
            for j in 0..r {
                jac[(i, j)] -= d * cov[(i, j)] * spec.cost.g2(m[j]);
            }
        }
        let rhs = DVector::from_iterator(r, res.iter().map(|x| -x));
        let lu = jac.clone().lu();
        let step = match lu.solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                let sv = jac.singular_values();
                let cond = sv.max() / sv.min();
                return Err(Error::Numerical(format!("singular saddle Jacobian (condition ≈ {cond:e})")));
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = m.iter().zip(step.iter()).map(|(a, s)| (a + t * s).clamp(-M_CLAMP, M_CLAMP)).collect();
            if let Ok((r2, c2, mm2)) = residual(&trial) {
                let n2 = sup(&r2);
                if n2 < norm {
                    m = trial;
                    res = r2;
                    chain = c2;
                    mm = mm2;
                    norm = n2;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if norm <= opts.tolerance.max(1e-10) {
                break;
            }
            return Err(Error::Convergence(format!("line search stalled at residual {norm:e}")));
        }
    }
    let profile = FieldProfile::from_magnetizations(spec, m.clone(), boundary);
    let fe = free_energy(&profile, spec, params)?;
    let cov = chain.covariance(&mm);
    let morse_index = morse_index(&cov, &m, spec, d);
    let kind_found = if morse_index == 0 { SaddleKind::Minimum } else { SaddleKind::Saddle };
    Ok(SaddleResult {
        free_energy_raw: fe - r as f64 * ln_slice_constant(spec, params) / spec.beta,
        profile,
        free_energy: fe,
        residual_norm: norm,
        kind: kind_found,
        requested: kind,
        morse_index,
        iterations: iter,
    })
}

/// Negative eigenvalues of `(ΔC)^{-1} - diag(g'')`, counted through the
/// congruent matrix `1 - (ΔC)^{1/2} diag(g'') (ΔC)^{1/2}`.
fn morse_index(cov: &DMatrix<f64>, m: &[f64], spec: &ModelSpec, d: f64) -> usize {
    let r = m.len();
    let e = SymmetricEigen::new(cov * d);
    let sq = DMatrix::from_diagonal(&e.eigenvalues.map(|x| x.max(0.0).sqrt()));
    let half = &e.eigenvectors * sq * e.eigenvectors.transpose();
    let g2 = DMatrix::from_diagonal(&DVector::from_iterator(r, m.iter().map(|&x| spec.cost.g2(x))));
    let a = DMatrix::<f64>::identity(r, r) - &half * g2 * &half;
    let ev = SymmetricEigen::new(0.5 * (&a + a.transpose())).eigenvalues;
    ev.iter().filter(|&&x| x < -1e-9).count()
}

/// Constant profile.
pub fn static_guess(spec: &ModelSpec, replicas: usize, boundary: Boundary, m0: f64) -> FieldProfile {
    FieldProfile::from_magnetizations(spec, vec![m0; replicas], boundary)
}

/// Kink profile between `m_from` and `m_to`. Open chains get a single
/// logistic ramp centred at `β/2`; periodic chains ramp up at `β/4` and
/// back down at `3β/4`. `width` is the ramp width in units of β.
pub fn kink_guess(
    spec: &ModelSpec,
    replicas: usize,
    boundary: Boundary,
    m_from: f64,
    m_to: f64,
    width: f64,
) -> FieldProfile {
    let w = width.max(1e-3);
    let s = |x: f64| 1.0 / (1.0 + (-x / w).exp());
    let m = (0..replicas)
        .map(|k| {
            let t = (k as f64 + 0.5) / replicas as f64;
            let shape = match boundary {
                Boundary::Open => s(t - 0.5),
                Boundary::Periodic => s(t - 0.25) - s(t - 0.75),
            };
            m_from + (m_to - m_from) * shape
        })
        .collect();
    FieldProfile::from_magnetizations(spec, m, boundary)
}

/// Bump profile `m_from → m_to → m_from` for either boundary.
pub fn bump_guess(
    spec: &ModelSpec,
    replicas: usize,
    boundary: Boundary,
    m_from: f64,
    m_to: f64,
    width: f64,
) -> FieldProfile {
    let mut p = kink_guess(spec, replicas, Boundary::Periodic, m_from, m_to, width);
    p.boundary = boundary;
    p
}

/// Profile sampled from a continuous-time function at slice midpoints
/// `τ_k = (k + ½) β/R`.
pub fn sampled_guess<F: Fn(f64) -> f64>(spec: &ModelSpec, replicas: usize, boundary: Boundary, f: F) -> FieldProfile {
    let d = spec.beta / replicas as f64;
    let m = (0..replicas).map(|k| f((k as f64 + 0.5) * d)).collect();
    FieldProfile::from_magnetizations(spec, m, boundary)
}

/// Saddle free energy on `R` and `2R` slices, Richardson-extrapolated
/// under the `O(Δ²)` Trotter error of the midpoint slicing. The fine
/// solve is seeded by interpolating the coarse solution.
pub fn extrapolated_saddle(
    spec: &ModelSpec,
    replicas: usize,
    boundary: Boundary,
    guess: &FieldProfile,
    kind: SaddleKind,
) -> Result<(f64, SaddleResult, SaddleResult), Error> {
    let p1 = QmcParams::new(spec, replicas, boundary)?;
    let s1 = solve_saddle(spec, &p1, boundary, guess, kind)?;
    let p2 = QmcParams::new(spec, 2 * replicas, boundary)?;
    let fine = refine_profile(spec, &s1.profile);
    let s2 = solve_saddle(spec, &p2, boundary, &fine, kind)?;
    Ok((crate::numerics::richardson2(s1.free_energy, s2.free_energy), s1, s2))
}

/// Periodic barrier `F_saddle - F_min` between a static minimum near
/// `m_meta` and the lowest index-1 saddle reached from a static guess at
/// `m_top` or from bumps of several amplitudes and widths.
pub fn periodic_barrier(
    spec: &ModelSpec,
    replicas: usize,
    m_meta: f64,
    m_top: f64,
) -> Result<(f64, SaddleResult, SaddleResult), Error> {
    let b = Boundary::Periodic;
    let p = QmcParams::new(spec, replicas, b)?;
    let min = solve_saddle(spec, &p, b, &static_guess(spec, replicas, b, m_meta), SaddleKind::Minimum)?;
    let mut guesses = vec![static_guess(spec, replicas, b, m_top)];
    let far = 0.9 * (m_top - m_meta).signum();
    for to in [m_top, 0.5 * (m_top + far), far] {
        for w in [0.03, 0.06, 0.12] {
            guesses.push(bump_guess(spec, replicas, b, m_meta, to, w));
        }
    }
    let mut best: Option<SaddleResult> = None;
    for g in &guesses {
        if let Ok(x) = solve_saddle(spec, &p, b, g, SaddleKind::Saddle) {
            if x.morse_index == 1 && best.as_ref().map_or(true, |y| x.free_energy < y.free_energy) {
                best = Some(x);
            }
        }
    }
    let sad = best.ok_or_else(|| Error::NoSolution("no index-1 periodic saddle".into()))?;
    Ok((sad.free_energy - min.free_energy, sad, min))
}

/// Linear interpolation of a profile onto twice as many slices.
pub fn refine_profile(spec: &ModelSpec, p: &FieldProfile) -> FieldProfile {
    let r = p.replicas();
    let m = &p.magnetizations;
    let at = |x: f64| -> f64 {
        // x in slice-index units, midpoints at integers
        let periodic = p.boundary == Boundary::Periodic;
        let lo = x.floor();
        let w = x - lo;
        let idx = |i: i64| -> f64 {
            if periodic {
                m[i.rem_euclid(r as i64) as usize]
            } else {
                m[i.clamp(0, r as i64 - 1) as usize]
            }
        };
        (1.0 - w) * idx(lo as i64) + w * idx(lo as i64 + 1)
    };
    let fine = (0..2 * r).map(|k| at((k as f64 + 0.5) / 2.0 - 0.5)).collect();
    FieldProfile::from_magnetizations(spec, fine, p.boundary)
}
