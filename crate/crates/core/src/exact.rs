//! Exact reference values: sector-resolved diagonalisation of the
//! collective-spin Hamiltonian and exhaustive Trotter partition sums.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::model::{qmc_energy, Boundary, ModelSpec, QmcParams, SpinPath};
use crate::numerics::{binomial, ln_binomial, log_sum_exp};
use crate::Error;

/// Default cap on the collective-spin dimension.
pub const DEFAULT_DIM_CAP: usize = 4096;
/// Largest N for which all sectors are diagonalised.
pub const SECTOR_N_CAP: usize = 24;
/// Largest N·R for exhaustive enumeration.
pub const BRUTE_FORCE_CAP: usize = 22;

/// Hamiltonian block for total spin `S`, basis `|S, M⟩` with `M = -S..S`.
#[derive(Debug, Clone)]
pub struct SymmetricHamiltonian {
    pub two_s: usize,
    pub matrix: DMatrix<f64>,
}

impl SymmetricHamiltonian {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }
}

/// All total-spin sectors with their multiplicities.
#[derive(Debug, Clone)]
pub struct SectorDecomposition {
    pub sectors: Vec<(f64, u64, SymmetricHamiltonian)>,
}

impl SectorDecomposition {
    pub fn total_dimension(&self) -> f64 {
        self.sectors.iter().map(|(_, k, h)| *k as f64 * h.dimension() as f64).sum()
    }
}

/// Block for total spin `two_s/2` of an `N`-spin system. The magnetization
/// argument of `g` is `2M/N` in every sector.
pub fn build_sector(spec: &ModelSpec, two_s: usize) -> SymmetricHamiltonian {
    let n = spec.n_spins as f64;
    let dim = two_s + 1;
    let s = two_s as f64 / 2.0;
    let mut h = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mz = -s + k as f64;
        h[(k, k)] = -n * spec.cost.g(2.0 * mz / n);
        if k + 1 < dim {
            let amp = (s * (s + 1.0) - mz * (mz + 1.0)).max(0.0).sqrt();
            h[(k + 1, k)] = -spec.gamma * amp;
            h[(k, k + 1)] = -spec.gamma * amp;
        }
    }
    SymmetricHamiltonian { two_s, matrix: h }
}

/// Maximal-spin block, dimension `N+1`.
pub fn build_symmetric_hamiltonian(spec: &ModelSpec) -> Result<SymmetricHamiltonian, Error> {
    build_symmetric_hamiltonian_capped(spec, DEFAULT_DIM_CAP)
}

pub fn build_symmetric_hamiltonian_capped(spec: &ModelSpec, cap: usize) -> Result<SymmetricHamiltonian, Error> {
    if spec.n_spins + 1 > cap {
        return Err(Error::Cap(format!("dimension {} exceeds cap {cap}", spec.n_spins + 1)));
    }
    Ok(build_sector(spec, spec.n_spins))
}

/// Multiplicity of total spin `S = two_s/2`: `C(N, N/2-S) - C(N, N/2-S-1)`.
pub fn sector_multiplicity(n: usize, two_s: usize) -> u64 {
    let k = (n - two_s) / 2;
    let a = binomial(n as u64, k as u64) as u64;
    let b = if k == 0 { 0 } else { binomial(n as u64, k as u64 - 1) as u64 };
    a - b
}

pub fn sector_decomposition(spec: &ModelSpec) -> Result<SectorDecomposition, Error> {
    let n = spec.n_spins;
    if n > SECTOR_N_CAP {
        return Err(Error::Cap(format!("N = {n} exceeds sector cap {SECTOR_N_CAP}")));
    }
    let sectors = (0..=n / 2)
        .map(|k| n - 2 * k)
        .map(|two_s| (two_s as f64 / 2.0, sector_multiplicity(n, two_s), build_sector(spec, two_s)))
        .collect();
    Ok(SectorDecomposition { sectors })
}

fn eigen(h: &SymmetricHamiltonian) -> Result<(DVector<f64>, DMatrix<f64>), Error> {
    let e = SymmetricEigen::new(h.matrix.clone());
    // residual check ‖Hv - λv‖
    for k in 0..e.eigenvalues.len() {
        let v = e.eigenvectors.column(k);
        let r = (&h.matrix * v - v * e.eigenvalues[k]).norm();
        let scale = h.matrix.norm().max(1.0);
        if r > 1e-12 * scale {
            return Err(Error::Numerical(format!("eigen residual {r:e} too large")));
        }
    }
    Ok((e.eigenvalues, e.eigenvectors))
}

/// `ln tr e^{-βH}` over all sectors.
pub fn ln_partition_periodic(spec: &ModelSpec) -> Result<f64, Error> {
    let dec = sector_decomposition(spec)?;
    let mut terms = Vec::new();
    for (_, mult, h) in &dec.sectors {
        let (ev, _) = eigen(h)?;
        let lm = (*mult as f64).ln();
        terms.extend(ev.iter().map(|&e| lm - spec.beta * e));
    }
    Ok(log_sum_exp(&terms))
}

/// `tr e^{-βH}`.
pub fn partition_periodic(spec: &ModelSpec) -> Result<f64, Error> {
    Ok(ln_partition_periodic(spec)?.exp())
}

/// `ln ⟨s|e^{-βH}|s⟩` with `|s⟩` the unnormalised uniform superposition.
pub fn ln_partition_open(spec: &ModelSpec) -> Result<f64, Error> {
    if spec.n_spins > SECTOR_N_CAP.max(DEFAULT_DIM_CAP - 1) {
        return Err(Error::Cap(format!("N = {} too large", spec.n_spins)));
    }
    let h = build_symmetric_hamiltonian(spec)?;
    let n = spec.n_spins as u64;
    let s = DVector::from_iterator(
        h.dimension(),
        (0..=n).map(|k| (0.5 * ln_binomial(n, k)).exp()),
    );
    let (ev, vecs) = eigen(&h)?;
    let mut terms = Vec::new();
    for k in 0..ev.len() {
        let ov = vecs.column(k).dot(&s);
        if ov != 0.0 {
            terms.push(2.0 * ov.abs().ln() - spec.beta * ev[k]);
        }
    }
    Ok(log_sum_exp(&terms))
}

pub fn partition_open(spec: &ModelSpec) -> Result<f64, Error> {
    Ok(ln_partition_open(spec)?.exp())
}

/// Lowest eigenvalues of the maximal-spin block.
pub fn spectrum_head(spec: &ModelSpec, count: usize) -> Result<Vec<f64>, Error> {
    let h = build_symmetric_hamiltonian(spec)?;
    let (ev, _) = eigen(&h)?;
    let mut v: Vec<f64> = ev.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.truncate(count);
    Ok(v)
}

/// `E_1 - E_0` within the maximal-spin block.
pub fn spectral_gap(spec: &ModelSpec) -> Result<f64, Error> {
    let v = spectrum_head(spec, 2)?;
    if v.len() < 2 {
        return Err(Error::Parameter("gap needs at least two levels".into()));
    }
    Ok(v[1] - v[0])
}

/// Logarithm of the Trotter normalisation that turns `Σ exp(-β H_QMC)` into
/// the Trotter approximation of the quantum partition function.
///
/// For one spin and one link, `⟨σ'|e^{ΓΔσ_x}|σ⟩` is `cosh ΓΔ` for equal and
/// `sinh ΓΔ` for opposite spins, i.e. `sqrt(sinh ΓΔ cosh ΓΔ) e^{βJσσ'}` since
/// `e^{2βJ} = coth ΓΔ`. A periodic chain has `N R` links. The open chain
/// `⟨s|(e^{ΓΔΣσ_x} e^{ΔNg})^R|s⟩` has `N (R-1)` links plus a leftmost
/// `e^{ΓΔΣσ_x}` acting on `⟨s|` with eigenvalue `e^{NΓΔ}`.
pub fn ln_trotter_normalization(spec: &ModelSpec, params: &QmcParams) -> f64 {
    let d = params.delta(spec);
    let x = spec.gamma * d;
    let ln_sc = 0.5 * (x.sinh() * x.cosh()).ln();
    let n = spec.n_spins as f64;
    let r = params.replicas as f64;
    match params.boundary {
        Boundary::Periodic => n * r * ln_sc,
        Boundary::Open => n * x + n * (r - 1.0) * ln_sc,
    }
}

/// Exhaustive `ln Z_QMC` over all `2^{NR}` paths, normalisation included.
pub fn ln_brute_force_qmc_partition(spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    let n = spec.n_spins;
    let r = params.replicas;
    if n * r > BRUTE_FORCE_CAP {
        return Err(Error::Cap(format!("N·R = {} exceeds {BRUTE_FORCE_CAP}", n * r)));
    }
    let bits = n * r;
    let mut path = SpinPath::uniform(n, r, params.boundary, -1);
    let mut energies = Vec::with_capacity(1 << bits);
    for code in 0u64..(1u64 << bits) {
        for t in 0..r {
            for j in 0..n {
                path.set(t, j, if (code >> (t * n + j)) & 1 == 1 { 1 } else { -1 });
            }
        }
        energies.push(-spec.beta * qmc_energy(&path, spec, params)?);
    }
    Ok(log_sum_exp(&energies) + ln_trotter_normalization(spec, params))
}

pub fn brute_force_qmc_partition(spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    Ok(ln_brute_force_qmc_partition(spec, params)?.exp())
}

/// Largest N for the exact slice-transfer evaluation.
pub const TRANSFER_N_CAP: usize = 10;

/// The same normalised sum as [`ln_brute_force_qmc_partition`], evaluated
/// exactly as a product of `2^N × 2^N` slice-transfer matrices. The link
/// matrix carries `cosh ΓΔ`/`sinh ΓΔ` per spin, which is the weight
/// `sqrt(sinh cosh) e^{βJσσ'}` with its normalisation.
pub fn ln_transfer_qmc_partition(spec: &ModelSpec, params: &QmcParams) -> Result<f64, Error> {
    let n = spec.n_spins;
    if n > TRANSFER_N_CAP {
        return Err(Error::Cap(format!("N = {n} exceeds transfer cap {TRANSFER_N_CAP}")));
    }
    let dim = 1usize << n;
    let x = spec.gamma * params.delta(spec);
    let (ch, sh) = (x.cosh(), x.sinh());
    let nf = n as f64;
    let mut link = DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            let diff = (a ^ b).count_ones() as i32;
            link[(a, b)] = ch.powi(n as i32 - diff) * sh.powi(diff);
        }
    }
    let diag: Vec<f64> = (0..dim)
        .map(|a| {
            let m = (2.0 * a.count_ones() as f64 - nf) / nf;
            (params.delta(spec) * nf * spec.cost.g(m)).exp()
        })
        .collect();
    // slice step: v -> D L v, normalised as we go
    let mut log_scale = 0.0;
    let step = |v: &DMatrix<f64>| -> DMatrix<f64> {
        let mut w = &link * v;
        for a in 0..dim {
            for c in 0..w.ncols() {
                w[(a, c)] *= diag[a];
            }
        }
        w
    };
    match params.boundary {
        Boundary::Periodic => {
            let mut p = DMatrix::<f64>::identity(dim, dim);
            for _ in 0..params.replicas {
                p = step(&p);
                let s = p.amax();
                p /= s;
                log_scale += s.ln();
            }
            Ok(p.trace().ln() + log_scale)
        }
        Boundary::Open => {
            let mut v = DMatrix::from_iterator(dim, 1, diag.iter().copied());
            for _ in 1..params.replicas {
                v = step(&v);
                let s = v.amax();
                v /= s;
                log_scale += s.ln();
            }
            Ok(v.sum().ln() + log_scale + nf * x)
        }
    }
}
