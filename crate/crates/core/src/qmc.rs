//! Metropolis path-integral Monte Carlo and escape-time measurement.
//!
//! Configurations are weighted by `exp(-β H_QMC)`. A sweep proposes `R·N`
//! single-spin flips in an order drawn afresh every sweep. The engine keeps
//! the per-slice up counts and the integer bond sum, so the energy can be
//! recomputed exactly at any time; a floating running total is kept as well
//! for bookkeeping checks.
//!
//! Random numbers come from ChaCha8. Independent chains use the same key
//! derived from the base seed and distinct stream ids, so chains never
//! overlap and any single chain can be replayed alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{classical_free_energy, qmc_energy, Boundary, ModelSpec, QmcParams, SpinPath};
use crate::Error;

/// Stream id for chain `(n, seed)`.
pub fn stream_id(n: usize, seed: u64) -> u64 {
    ((n as u64) << 40) ^ seed
}

/// RNG for one chain.
pub fn chain_rng(base_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct SweepEngine {
    pub path: SpinPath,
    pub spec: ModelSpec,
    pub params: QmcParams,
    pub rng_seed: u64,
    pub sweep_count: u64,
    rng: ChaCha8Rng,
    up: Vec<usize>,
    bond: i64,
    running_energy: f64,
    accepted: u64,
    proposed: u64,
    /// `prob[(u * 2 + s) * 5 + (nb + 2)]`
    prob: Vec<f64>,
    delta_e: Vec<f64>,
    order: Vec<u32>,
}

impl SweepEngine {
    pub fn new(path: SpinPath, spec: &ModelSpec, params: &QmcParams, rng_seed: u64, stream: u64) -> Result<Self, Error> {
        let running_energy = qmc_energy(&path, spec, params)?;
        let (n, r) = (spec.n_spins, params.replicas);
        let up = (0..r).map(|t| path.up_count(t)).collect();
        let links = if params.boundary == Boundary::Open { r - 1 } else { r };
        let bond = (0..links).map(|t| path.overlap(t, (t + 1) % r)).sum();
        let (prob, delta_e) = tables(spec, params);
        Ok(Self {
            path,
            spec: spec.clone(),
            params: *params,
            rng_seed,
            sweep_count: 0,
            rng: chain_rng(rng_seed, stream),
            up,
            bond,
            running_energy,
            accepted: 0,
            proposed: 0,
            prob,
            delta_e,
            order: (0..(n * r) as u32).collect(),
        })
    }

    /// Energy from the integer bookkeeping.
    pub fn energy(&self) -> f64 {
        let n = self.spec.n_spins as f64;
        let r = self.params.replicas as f64;
        let field: f64 = self.up.iter().map(|&u| self.spec.cost.g((2.0 * u as f64 - n) / n)).sum();
        -self.params.coupling * self.bond as f64 - n / r * field
    }

    /// Energy accumulated flip by flip.
    pub fn running_energy(&self) -> f64 {
        self.running_energy
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Slice-averaged magnetization `(1/R) Σ_τ m(τ)`.
    pub fn mean_magnetization(&self) -> f64 {
        let n = self.spec.n_spins as f64;
        let total: usize = self.up.iter().sum();
        (2.0 * total as f64 - n * self.up.len() as f64) / (n * self.up.len() as f64)
    }

    pub fn up_counts(&self) -> &[usize] {
        &self.up
    }

    fn neighbour_sum(&self, t: usize, j: usize) -> i64 {
        let r = self.params.replicas;
        let open = self.params.boundary == Boundary::Open;
        let mut nb = 0;
        if !(open && t + 1 == r) {
            nb += self.path.get((t + 1) % r, j) as i64;
        }
        if !(open && t == 0) {
            nb += self.path.get((t + r - 1) % r, j) as i64;
        }
        nb
    }

    /// One sweep of `R·N` proposals in a freshly shuffled order.
    pub fn sweep(&mut self) {
        let n = self.spec.n_spins;
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(&mut self.rng);
        for &site in &order {
            let (t, j) = (site as usize / n, site as usize % n);
            let s = self.path.get(t, j) as i64;
            let nb = self.neighbour_sum(t, j);
            let key = (self.up[t] * 2 + usize::from(s > 0)) * 5 + (nb + 2) as usize;
            let p = self.prob[key];
            self.proposed += 1;
            if p >= 1.0 || self.rng.gen::<f64>() < p {
                self.path.flip(t, j);
                self.bond -= 2 * s * nb;
                if s > 0 {
                    self.up[t] -= 1;
                } else {
                    self.up[t] += 1;
                }
                self.running_energy += self.delta_e[key];
                self.accepted += 1;
            }
        }
        self.order = order;
        self.sweep_count += 1;
    }
}

fn tables(spec: &ModelSpec, params: &QmcParams) -> (Vec<f64>, Vec<f64>) {
    let n = spec.n_spins;
    let nf = n as f64;
    let rf = params.replicas as f64;
    let mut prob = vec![0.0; (n + 1) * 10];
    let mut de = vec![0.0; (n + 1) * 10];
    for u in 0..=n {
        let m = (2.0 * u as f64 - nf) / nf;
        for (si, s) in [(0usize, -1.0f64), (1, 1.0)] {
            for nb in -2i64..=2 {
                let m_new = m - 2.0 * s / nf;
                let d = 2.0 * params.coupling * s * nb as f64 - nf / rf * (spec.cost.g(m_new) - spec.cost.g(m));
                let k = (u * 2 + si) * 5 + (nb + 2) as usize;
                de[k] = d;
                prob[k] = (-spec.beta * d).exp().min(1.0);
            }
        }
    }
    (prob, de)
}

/// Advance the engine by one sweep.
pub fn metropolis_sweep(engine: &mut SweepEngine) {
    engine.sweep();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeRecord {
    pub n_spins: usize,
    pub seed: u64,
    pub boundary: Boundary,
    pub first_passage_sweeps: u64,
    pub threshold: f64,
    pub censored: bool,
}

/// Sweeps until `m̄` first reaches `threshold` from the side of `start_well`.
/// The path is reset to the uniform configuration at `start_well`.
pub fn first_passage(engine: &mut SweepEngine, start_well: f64, threshold: f64, budget: u64) -> Result<EscapeRecord, Error> {
    let (n, r) = (engine.spec.n_spins, engine.params.replicas);
    let path = SpinPath::with_magnetization(n, r, engine.params.boundary, start_well);
    let rng = engine.rng.clone();
    let seed = engine.rng_seed;
    *engine = SweepEngine { rng, ..SweepEngine::new(path, &engine.spec, &engine.params, seed, 0)? };
    let side = (start_well - threshold).signum();
    let crossed = |e: &SweepEngine| (e.mean_magnetization() - threshold) * side <= 0.0;
    let mut rec = EscapeRecord {
        n_spins: n,
        seed,
        boundary: engine.params.boundary,
        first_passage_sweeps: 0,
        threshold,
        censored: false,
    };
    if crossed(engine) {
        return Ok(rec);
    }
    for k in 1..=budget {
        engine.sweep();
        if crossed(engine) {
            rec.first_passage_sweeps = k;
            return Ok(rec);
        }
    }
    rec.first_passage_sweeps = budget;
    rec.censored = true;
    Ok(rec)
}

/// Wells and barrier top of the classical free energy `-g(m) - Q(m)/β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalWells {
    pub m_meta: f64,
    pub m_glob: f64,
    pub m_top: f64,
}

pub fn classical_wells(spec: &ModelSpec) -> Result<ClassicalWells, Error> {
    // wells sit exponentially close to ±1 at low temperature, so scan in atanh m
    let k = 8000;
    let grid: Vec<f64> = (1..k).map(|i| (-20.0 + 40.0 * i as f64 / k as f64).tanh()).collect();
    let f: Vec<f64> = grid.iter().map(|&m| classical_free_energy(spec, m)).collect::<Result<_, _>>()?;
    let refine = |i: usize, sign: f64| {
        let h = |m: f64| sign * classical_free_energy(spec, m).unwrap_or(f64::MAX);
        let (mut a, mut b) = (grid[i - 1], grid[i + 1]);
        let gr = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - gr * (b - a);
            let d = a + gr * (b - a);
            if h(c) < h(d) {
                b = d
            } else {
                a = c
            }
        }
        0.5 * (a + b)
    };
    let mins: Vec<usize> = (1..grid.len() - 1).filter(|&i| f[i] < f[i - 1] && f[i] <= f[i + 1]).collect();
    if mins.len() < 2 {
        return Err(Error::NoSolution(format!("classical free energy has {} minima", mins.len())));
    }
    let glob = *mins.iter().min_by(|&&a, &&b| f[a].partial_cmp(&f[b]).unwrap()).unwrap();
    let meta = *mins.iter().filter(|&&i| i != glob).max_by(|&&a, &&b| f[a].partial_cmp(&f[b]).unwrap()).unwrap();
    let (lo, hi) = (meta.min(glob), meta.max(glob));
    let top = (lo + 1..hi).max_by(|&a, &b| f[a].partial_cmp(&f[b]).unwrap()).unwrap();
    Ok(ClassicalWells { m_meta: refine(meta, 1.0), m_glob: refine(glob, 1.0), m_top: refine(top, -1.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeConfig {
    pub replicas: usize,
    pub boundary: Boundary,
    pub n_values: Vec<usize>,
    pub seeds: u64,
    pub budget: u64,
    pub base_seed: u64,
    /// `None` selects the classical barrier top.
    pub threshold: Option<f64>,
    /// `None` selects the classical metastable well.
    pub start_well: Option<f64>,
    pub min_uncensored: usize,
    pub bootstrap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeSummary {
    pub n_spins: usize,
    pub uncensored: usize,
    pub censored: usize,
    /// censored exponential estimate `Σ t / #uncensored`
    pub mean_sweeps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeFit {
    pub records: Vec<EscapeRecord>,
    pub summaries: Vec<EscapeSummary>,
    pub threshold: f64,
    pub start_well: f64,
    pub intercept: Option<f64>,
    pub slope: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    /// reason the fit was refused, if it was
    pub refused: Option<String>,
}

/// Censored exponential estimate of the mean passage time.
pub fn censored_mean(records: &[&EscapeRecord]) -> Option<f64> {
    let k = records.iter().filter(|r| !r.censored).count();
    if k == 0 {
        return None;
    }
    let total: f64 = records.iter().map(|r| r.first_passage_sweeps as f64).sum();
    Some(total / k as f64)
}

/// Least-squares line `y = a + b x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

fn validate(cfg: &EscapeConfig) -> Result<(), Error> {
    if cfg.n_values.is_empty() {
        return Err(Error::Parameter("n-list is empty".into()));
    }
    if cfg.seeds == 0 || cfg.budget == 0 {
        return Err(Error::Parameter("seeds and budget must be positive".into()));
    }
    Ok(())
}

fn sorted_ns(cfg: &EscapeConfig) -> Vec<usize> {
    let mut ns = cfg.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    ns
}

/// Start magnetisation and threshold, defaulting to the classical wells.
pub fn escape_endpoints(template: &ModelSpec, cfg: &EscapeConfig) -> Result<(f64, f64), Error> {
    let wells = classical_wells(template)?;
    Ok((cfg.start_well.unwrap_or(wells.m_meta), cfg.threshold.unwrap_or(wells.m_top)))
}

/// All seeds of one system size, in seed order.
pub fn escape_records(
    template: &ModelSpec,
    cfg: &EscapeConfig,
    n: usize,
    start: f64,
    threshold: f64,
) -> Result<Vec<EscapeRecord>, Error> {
    let spec = template.with_n(n)?;
    let params = QmcParams::new(&spec, cfg.replicas, cfg.boundary)?;
    (0..cfg.seeds)
        .into_par_iter()
        .map(|seed| -> Result<EscapeRecord, Error> {
            let path = SpinPath::with_magnetization(n, cfg.replicas, cfg.boundary, start);
            let mut e = SweepEngine::new(path, &spec, &params, cfg.base_seed, stream_id(n, seed))?;
            let mut rec = first_passage(&mut e, start, threshold, cfg.budget)?;
            rec.seed = seed;
            Ok(rec)
        })
        .collect()
}

/// Summaries, the `ln τ̂ = a + b N` fit and its bootstrap interval.
pub fn fit_escape(records: Vec<EscapeRecord>, cfg: &EscapeConfig, start: f64, threshold: f64) -> EscapeFit {
    let ns = sorted_ns(cfg);
    let summaries: Vec<EscapeSummary> = ns
        .iter()
        .map(|&n| {
            let rs: Vec<&EscapeRecord> = records.iter().filter(|r| r.n_spins == n).collect();
            let unc = rs.iter().filter(|r| !r.censored).count();
            EscapeSummary {
                n_spins: n,
                uncensored: unc,
                censored: rs.len() - unc,
                mean_sweeps: censored_mean(&rs).unwrap_or(f64::INFINITY),
            }
        })
        .collect();
    let mut fit = EscapeFit {
        records,
        summaries,
        threshold,
        start_well: start,
        intercept: None,
        slope: None,
        slope_ci: None,
        refused: None,
    };
    if let Some(bad) = fit.summaries.iter().find(|s| s.uncensored < cfg.min_uncensored) {
        fit.refused = Some(format!(
            "N = {} has {} uncensored records, {} required",
            bad.n_spins, bad.uncensored, cfg.min_uncensored
        ));
        return fit;
    }
    if ns.len() < 2 {
        fit.refused = Some("a slope needs at least two N values".into());
        return fit;
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = fit.summaries.iter().map(|s| s.mean_sweeps.ln()).collect();
    let (a, b) = linear_fit(&x, &y);
    fit.intercept = Some(a);
    fit.slope = Some(b);
    fit.slope_ci = bootstrap_slope(&fit.records, &ns, cfg.bootstrap, cfg.base_seed);
    fit
}

/// Run every `(N, seed)` chain and fit `ln τ̂ = a + b N`.
pub fn escape_experiment(template: &ModelSpec, cfg: &EscapeConfig) -> Result<EscapeFit, Error> {
    validate(cfg)?;
    let (start, threshold) = escape_endpoints(template, cfg)?;
    let mut records = Vec::new();
    for n in sorted_ns(cfg) {
        records.extend(escape_records(template, cfg, n, start, threshold)?);
    }
    Ok(fit_escape(records, cfg, start, threshold))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    key: String,
    records: Vec<EscapeRecord>,
}

/// [`escape_experiment`] that stores finished system sizes in `path` and
/// skips them on a rerun with the same model and configuration.
pub fn escape_experiment_checkpointed(
    template: &ModelSpec,
    cfg: &EscapeConfig,
    path: &std::path::Path,
) -> Result<EscapeFit, Error> {
    validate(cfg)?;
    let (start, threshold) = escape_endpoints(template, cfg)?;
    let key = format!("{template:?}|{cfg:?}");
    let mut ck = std::fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<Checkpoint>(&t).ok())
        .filter(|c| c.key == key)
        .unwrap_or(Checkpoint { key, records: Vec::new() });
    for n in sorted_ns(cfg) {
        if ck.records.iter().any(|r| r.n_spins == n) {
            continue;
        }
        ck.records.extend(escape_records(template, cfg, n, start, threshold)?);
        let text = serde_json::to_string(&ck).map_err(|e| Error::Numerical(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| Error::Parameter(format!("checkpoint {}: {e}", path.display())))?;
    }
    Ok(fit_escape(ck.records, cfg, start, threshold))
}

/// Percentile 95% interval of the slope, resampling records within each N.
pub fn bootstrap_slope(records: &[EscapeRecord], ns: &[usize], reps: usize, seed: u64) -> Option<(f64, f64)> {
    if reps == 0 {
        return None;
    }
    let groups: Vec<Vec<&EscapeRecord>> = ns.iter().map(|&n| records.iter().filter(|r| r.n_spins == n).collect()).collect();
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut rng = chain_rng(seed, u64::MAX);
    let mut slopes = Vec::with_capacity(reps);
    'rep: for _ in 0..reps {
        let mut y = Vec::with_capacity(ns.len());
        for g in &groups {
            let sample: Vec<&EscapeRecord> = (0..g.len()).map(|_| g[rng.gen_range(0..g.len())]).collect();
            match censored_mean(&sample) {
                Some(t) => y.push(t.ln()),
                None => continue 'rep,
            }
        }
        slopes.push(linear_fit(&x, &y).1);
    }
    if slopes.is_empty() {
        return None;
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| slopes[((p * (slopes.len() - 1) as f64).round() as usize).min(slopes.len() - 1)];
    Some((q(0.025), q(0.975)))
}

/// One-sided Mann–Whitney test that `a` is stochastically smaller than `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    pub u: f64,
    pub z: f64,
    /// normal-approximation p-value for `a < b`
    pub p_value: f64,
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> MannWhitney {
    let mut all: Vec<(f64, usize)> = a.iter().map(|&v| (v, 0)).chain(b.iter().map(|&v| (v, 1))).collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut ranks = vec![0.0; all.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for rk in ranks.iter_mut().take(j + 1).skip(i) {
            *rk = r;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let r1: f64 = all.iter().zip(&ranks).filter(|(x, _)| x.1 == 0).map(|(_, r)| r).sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let z = (u - n1 * n2 / 2.0) / var.sqrt();
    MannWhitney { u, z, p_value: normal_cdf(z) }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function (Numerical Recipes Chebyshev fit, 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Time-averaged slice magnetizations over `sweeps` sweeps after `burn_in`.
pub fn average_profile(engine: &mut SweepEngine, burn_in: u64, sweeps: u64) -> Vec<f64> {
    for _ in 0..burn_in {
        engine.sweep();
    }
    let n = engine.spec.n_spins as f64;
    let mut acc = vec![0.0; engine.params.replicas];
    for _ in 0..sweeps {
        engine.sweep();
        for (a, &u) in acc.iter_mut().zip(engine.up_counts()) {
            *a += (2.0 * u as f64 - n) / n;
        }
    }
    acc.iter().map(|a| a / sweeps as f64).collect()
}
