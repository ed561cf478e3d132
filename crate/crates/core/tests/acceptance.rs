//! Acceptance suite. Prints one PASS/FAIL line per criterion and never
//! panics on a failed criterion, so every line is always visible.
//!
//! The escape-rate criterion runs a reduced pilot by default. Set
//! `TUNNELQMC_FULL=1` for the full system-size protocol; it checkpoints
//! to `TUNNELQMC_CHECKPOINT_DIR` (default: the system temp dir).

use std::time::Instant;

use tunnelqmc::coherent;
use tunnelqmc::exact::{ln_brute_force_qmc_partition, ln_partition_open, ln_partition_periodic, ln_transfer_qmc_partition};
use tunnelqmc::instanton::{
    self, barrier, endpoint_momentum_residuals, free_energy_ob, landscape, propagator_kappa, shoot, wkb_free_energy, Branch,
    InstantonTrajectory,
};
use tunnelqmc::meanfield::{
    extrapolated_saddle, periodic_barrier, reduced_free_energy, reduced_gradient, sampled_guess, solve_saddle,
    static_free_energy_continuum, static_guess, vector_magnetization, SaddleKind, SaddleResult,
};
use tunnelqmc::qmc::{escape_experiment, escape_experiment_checkpointed, EscapeConfig, EscapeFit};
use tunnelqmc::{Boundary, CostFunction, ModelSpec, QmcParams};

type Outcome = Result<(bool, String), String>;

fn p3(beta: f64) -> ModelSpec {
    ModelSpec::new(16, beta, 0.5, CostFunction::p_spin(3)).unwrap()
}

/// Parameter set of the escape experiment: per-spin exponents 0.1 to 0.3.
fn escape_model(n: usize) -> ModelSpec {
    ModelSpec::new(n, 4.0, 0.5, CostFunction::tilted_quadratic(0.05)).unwrap()
}

/// Family used for the speedup shape across temperatures.
fn speedup_model(beta: f64) -> ModelSpec {
    ModelSpec::new(32, beta, 0.2, CostFunction::tilted_quadratic(0.01)).unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn open_saddle_from(spec: &ModelSpec, tr: &InstantonTrajectory, r: usize, kind: SaddleKind) -> Result<SaddleResult, String> {
    let p = QmcParams::new(spec, r, Boundary::Open).map_err(err)?;
    let guess = sampled_guess(spec, r, Boundary::Open, |t| tr.state_at(t).m_z);
    solve_saddle(spec, &p, Boundary::Open, &guess, kind).map_err(err)
}

fn c1_trotter() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [2usize, 3] {
        let s = ModelSpec::new(n, 2.0, 0.5, CostFunction::p_spin(3)).unwrap();
        for b in [Boundary::Periodic, Boundary::Open] {
            let exact = match b {
                Boundary::Periodic => ln_partition_periodic(&s),
                Boundary::Open => ln_partition_open(&s),
            }
            .map_err(err)?;
            let mut errs = Vec::new();
            for r in [8usize, 16, 32, 64] {
                let p = QmcParams::new(&s, r, b).map_err(err)?;
                let lz = ln_transfer_qmc_partition(&s, &p).map_err(err)?;
                errs.push((lz - exact).exp_m1().abs());
            }
            let mono = errs.windows(2).all(|w| w[1] < w[0]);
            ok &= mono && errs[3] < 1e-2;
            parts.push(format!("N={n} {b:?} err@64={:.2e}{}", errs[3], if mono { "" } else { " non-monotone" }));
        }
        // the transfer evaluator against full enumeration where it is affordable
        if n == 2 {
            for b in [Boundary::Periodic, Boundary::Open] {
                let p = QmcParams::new(&s, 8, b).map_err(err)?;
                let d = (ln_transfer_qmc_partition(&s, &p).map_err(err)? - ln_brute_force_qmc_partition(&s, &p).map_err(err)?).abs();
                ok &= d < 1e-10;
                parts.push(format!("enum {b:?} Δ={d:.1e}"));
            }
        }
    }
    Ok((ok, parts.join("; ")))
}

fn c2_stationarity() -> Outcome {
    let s = p3(4.0);
    let r = 128;
    let land = landscape(&s).map_err(err)?;
    let mut found: Vec<(&str, Boundary, SaddleResult)> = Vec::new();
    let (_, sad, min) = periodic_barrier(&s, r, land.m_meta, land.m_top).map_err(err)?;
    found.push(("min", Boundary::Periodic, min));
    found.push(("instanton", Boundary::Periodic, sad));
    for (name, branch, kind) in [("min", Branch::Minimum, SaddleKind::Minimum), ("instanton", Branch::Saddle, SaddleKind::Saddle)] {
        let tr = shoot(&s, 4.0, branch).map_err(err)?;
        found.push((name, Boundary::Open, open_saddle_from(&s, &tr, r, kind)?));
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, b, res) in &found {
        let p = QmcParams::new(&s, r, *b).map_err(err)?;
        let m = res.profile.magnetizations.clone();
        let g = reduced_gradient(&s, &p, *b, &m).map_err(err)?;
        let mut fd_max = 0.0f64;
        for k in [0, 1, r / 3, r / 2, r - 1] {
            let h = 1e-5;
            let mut up = m.clone();
            up[k] += h;
            let mut dn = m.clone();
            dn[k] -= h;
            let fd = (reduced_free_energy(&s, &p, *b, &up).map_err(err)? - reduced_free_energy(&s, &p, *b, &dn).map_err(err)?)
                / (2.0 * h);
            fd_max = fd_max.max((r as f64 * fd).abs());
        }
        let g_max = g.iter().fold(0.0f64, |a, x| a.max((r as f64 * x).abs()));
        ok &= res.residual_norm <= 1e-10 && fd_max <= 1e-8;
        parts.push(format!("{b:?} {name}: res={:.1e} grad={g_max:.1e} fd={fd_max:.1e}", res.residual_norm));
    }
    Ok((ok, parts.join("; ")))
}

fn c3_free_energy_identity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [2.0, 4.0, 8.0] {
        let s = p3(beta);
        for (branch, kind) in [(Branch::Saddle, SaddleKind::Saddle), (Branch::Minimum, SaddleKind::Minimum)] {
            let tr = match shoot(&s, beta, branch) {
                Ok(t) => t,
                Err(e) => {
                    ok = false;
                    parts.push(format!("β={beta} {branch:?}: {e}"));
                    continue;
                }
            };
            let f44 = free_energy_ob(&tr, &s);
            let fw = wkb_free_energy(&tr, &s);
            let guess = sampled_guess(&s, 128, Boundary::Open, |t| tr.state_at(t).m_z);
            let (rich, _, _) = extrapolated_saddle(&s, 128, Boundary::Open, &guess, kind).map_err(err)?;
            let (d1, d2) = ((f44 - fw).abs(), (f44 - rich).abs());
            ok &= d1 <= 1e-10 && d2 <= 1e-4;
            parts.push(format!("β={beta} {branch:?}: |Δwkb|={d1:.1e} |Δdisc|={d2:.1e}"));
        }
    }
    Ok((ok, parts.join("; ")))
}

fn trajectories() -> Vec<(String, ModelSpec, InstantonTrajectory)> {
    let mut out = Vec::new();
    for beta in [2.0, 4.0, 8.0] {
        let s = p3(beta);
        for br in [Branch::Saddle, Branch::Minimum] {
            if let Ok(t) = shoot(&s, beta, br) {
                out.push((format!("p3 β={beta} {br:?}"), s.clone(), t));
            }
        }
    }
    let s = escape_model(32);
    for br in [Branch::Saddle, Branch::Minimum] {
        if let Ok(t) = shoot(&s, 4.0, br) {
            out.push((format!("tilted β=4 {br:?}"), s.clone(), t));
        }
    }
    out
}

fn c4_invariants() -> Outcome {
    let trs = trajectories();
    if trs.len() < 8 {
        return Ok((false, format!("only {} of 8 trajectories solved", trs.len())));
    }
    let (mut de, mut dl, mut dp, mut dg, mut pmin) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for (_, s, t) in &trs {
        if t.is_static {
            continue;
        }
        for k in 0..t.taus.len() {
            de = de.max((-s.gamma * t.m_x[k] - s.cost.g(t.m_z[k]) - t.energy).abs());
            dl = dl.max((t.m_x[k].powi(2) - t.i_m_y[k].powi(2) + t.m_z[k].powi(2) - 1.0).abs());
        }
        let (r1, r2) = endpoint_momentum_residuals(t);
        dp = dp.max(r1.abs()).max(r2.abs());
        dg = dg.max((s.cost.g(t.m1) - s.cost.g(t.m2)).abs());
        if t.m1 != 0.0 {
            pmin = pmin.min(t.p1.abs()).min(t.p2.abs());
        }
    }
    let ok = de <= 1e-8 && dl <= 1e-8 && dp <= 1e-6 && dg <= 1e-10 && pmin > 0.01;
    Ok((ok, format!("{} paths: ε {de:.1e}, ℓ {dl:.1e}, p-ends {dp:.1e}, g ends {dg:.1e}, min |p_end| {pmin:.3}", trs.len())))
}

fn c5_kappa() -> Outcome {
    let mut worst = 0.0f64;
    let mut n = 0;
    for (_, s, t) in trajectories() {
        if t.is_static {
            continue;
        }
        let k = propagator_kappa(&t, &s).map_err(err)?;
        worst = worst.max((k.closed / k.direct - 1.0).abs());
        n += 1;
    }
    Ok((n > 0 && worst <= 1e-6, format!("{n} paths, max |κ_closed/κ_direct - 1| = {worst:.1e}")))
}

fn c6_nonstatic_minimum() -> Outcome {
    let s = escape_model(32);
    let land = landscape(&s).map_err(err)?;
    let t = shoot(&s, 4.0, Branch::Minimum).map_err(err)?;
    let f = free_energy_ob(&t, &s);
    // lowest static open profile in the metastable basin
    let side = (land.m_meta - land.m_top).signum();
    let k = 20000;
    let grid: Vec<f64> = (1..k)
        .map(|i| land.m_top + side * (1.0 - side * land.m_top) * i as f64 / k as f64)
        .filter(|m| m.abs() < 1.0)
        .collect();
    let fs = grid.iter().map(|&m| static_free_energy_continuum(&s, Boundary::Open, m)).fold(f64::INFINITY, f64::min);
    let gap = fs - f;
    Ok((!t.is_static && gap >= 1e-4, format!("F_min={f:.6} best static={fs:.6} gap={gap:.2e}")))
}

fn c7_angular_momentum() -> Outcome {
    let mut ok = true;
    let mut dev = 0.0f64;
    for beta in [2.0, 4.0, 8.0] {
        let s = p3(beta);
        for (branch, kind) in [(Branch::Saddle, SaddleKind::Saddle), (Branch::Minimum, SaddleKind::Minimum)] {
            let tr = shoot(&s, beta, branch).map_err(err)?;
            let res = open_saddle_from(&s, &tr, 128, kind)?;
            let p = QmcParams::new(&s, 128, Boundary::Open).map_err(err)?;
            let v = vector_magnetization(&res.profile, &s, &p).map_err(err)?;
            dev = v.ell_squared().iter().fold(dev, |a, x| a.max((x.sqrt() - 1.0).abs()));
        }
    }
    ok &= dev <= 1e-6;
    let s = p3(2.0);
    let land = landscape(&s).map_err(err)?;
    let p = QmcParams::new(&s, 32, Boundary::Periodic).map_err(err)?;
    let res = solve_saddle(&s, &p, Boundary::Periodic, &static_guess(&s, 32, Boundary::Periodic, land.m_top), SaddleKind::Saddle)
        .map_err(err)?;
    let l2 = vector_magnetization(&res.profile, &s, &p).map_err(err)?.ell_squared();
    let ell = l2[0].sqrt();
    let spread = l2.iter().fold(0.0f64, |a, x| a.max((x - l2[0]).abs()));
    ok &= res.kind == SaddleKind::Saddle && ell < 1.0 - 1e-3 && spread < 1e-10;
    Ok((ok, format!("OBC max ||m|-1| = {dev:.1e}; PBC β=2 saddle ℓ = {ell:.4} (spread {spread:.1e})")))
}

fn escape_fit(boundary: Boundary, ns: Vec<usize>, full: bool) -> Result<EscapeFit, String> {
    let budget = std::env::var("TUNNELQMC_BUDGET").ok().and_then(|v| v.parse().ok()).unwrap_or(if full { 1_000_000_000 } else { 2_000_000 });
    let cfg = EscapeConfig {
        replicas: 64,
        boundary,
        n_values: ns,
        seeds: 40,
        budget,
        base_seed: 20231,
        threshold: None,
        start_well: None,
        min_uncensored: 40,
        bootstrap: 400,
    };
    let s = escape_model(24);
    if full {
        let dir = std::env::var("TUNNELQMC_CHECKPOINT_DIR").map(std::path::PathBuf::from).unwrap_or_else(|_| std::env::temp_dir());
        let path = dir.join(format!("tunnelqmc-acceptance-{boundary:?}.json"));
        escape_experiment_checkpointed(&s, &cfg, &path).map_err(err)
    } else {
        escape_experiment(&s, &cfg).map_err(err)
    }
}

/// Theory exponents `β ΔF` per spin for the escape model.
fn escape_theory() -> Result<(f64, f64), String> {
    let s = escape_model(32);
    let land = landscape(&s).map_err(err)?;
    let pbc = 4.0 * periodic_barrier(&s, 64, land.m_meta, land.m_top).map_err(err)?.0;
    let obc = 4.0 * barrier(&s, 4.0).map_err(err)?.0;
    Ok((pbc, obc))
}

fn c8_escape(sim: &mut Option<(f64, f64)>) -> Outcome {
    let full = std::env::var("TUNNELQMC_FULL").map(|v| v == "1").unwrap_or(false);
    let (tp, to) = escape_theory()?;
    let (np, no) = if full {
        (vec![24, 32, 40, 48, 56], vec![24, 32, 40, 48, 56])
    } else {
        (vec![8, 10, 12, 14, 16], vec![8, 12, 16, 20, 24])
    };
    let fp = escape_fit(Boundary::Periodic, np, full)?;
    let fo = escape_fit(Boundary::Open, no, full)?;
    let show = |f: &EscapeFit, theory: f64| match (f.slope, &f.refused) {
        (Some(b), None) => {
            let (lo, hi) = f.slope_ci.unwrap_or((f64::NAN, f64::NAN));
            (Some(b), format!("b={b:.4} [{lo:.4}, {hi:.4}] theory {theory:.4} dev {:+.1}%", 100.0 * (b / theory - 1.0)))
        }
        (_, r) => (None, format!("refused: {}", r.clone().unwrap_or_default())),
    };
    let (bp, sp) = show(&fp, tp);
    let (bo, so) = show(&fo, to);
    let within = |b: Option<f64>, t: f64| b.map_or(false, |b| (b / t - 1.0).abs() <= 0.15);
    if let (Some(p), Some(o)) = (bp, bo) {
        *sim = Some((p, o));
    }
    let met = within(bp, tp) && within(bo, to);
    let mode = if full {
        "full protocol N=24..56".to_string()
    } else {
        format!("pilot only, N=8..16 PBC / 8..24 OBC, not the N=24..56 protocol (tolerances {})", if met { "met" } else { "missed" })
    };
    Ok((full && met, format!("PBC {sp}; OBC {so}; {mode}")))
}

fn c9_speedup(sim: Option<(f64, f64)>) -> Outcome {
    let betas = [4.0, 6.0, 8.0, 12.0, 16.0];
    let mut rs = Vec::new();
    for &beta in &betas {
        let s = speedup_model(beta);
        let land = landscape(&s).map_err(err)?;
        let (dp, _, _) = periodic_barrier(&s, (16.0 * beta) as usize, land.m_meta, land.m_top).map_err(err)?;
        let (dob, _, _) = barrier(&s, beta).map_err(err)?;
        rs.push(dp / dob);
    }
    let ok = rs.iter().all(|&r| r <= 2.05) && *rs.last().unwrap() >= 1.9;
    let table: Vec<String> = betas.iter().zip(&rs).map(|(b, r)| format!("β={b}: {r:.3}")).collect();
    let (tp, to) = escape_theory()?;
    let simr = sim.map_or("n/a".to_string(), |(p, o)| format!("{:.2}", p / o));
    Ok((ok, format!("theory r {}; escape set β=4: theory r={:.2}, QMC r={simr}", table.join(", "), tp / to)))
}

fn c10_coherent() -> Outcome {
    let mut dev = 0.0f64;
    let mut res = 0.0f64;
    let cases = [p3(4.0).with_n(4).unwrap(), escape_model(3)];
    for s in &cases {
        let inst = shoot(s, s.beta, Branch::Saddle).map_err(err)?;
        let coh = coherent::from_instanton(&inst, s.n_spins, coherent::DEFAULT_GRID).map_err(err)?;
        dev = dev.max(coherent::max_deviation(&coh, &inst));
        res = res.max(coherent::vector_residual(&coh, s));
    }
    Ok((dev <= 1e-6 && res <= 1e-8, format!("max deviation {dev:.1e}, vector-equation residual {res:.1e}")))
}

// runs without the libtest harness so the report is never captured;
// failed criteria are reported, not turned into a nonzero exit
fn main() {
    let _ = instanton::DEFAULT_GRID;
    let mut sim = None;
    let mut lines: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let out = f();
        let dt = t0.elapsed().as_secs_f64();
        let (tag, detail) = match &out {
            Ok((true, d)) => ("PASS", d.clone()),
            Ok((false, d)) => ("FAIL", d.clone()),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        println!("{tag} [{id}] {name}: {detail} ({dt:.1}s)");
        lines.push((id, name, out, dt));
    };
    run(1, "Trotter/oracle consistency", &mut c1_trotter);
    run(2, "saddle stationarity", &mut c2_stationarity);
    run(3, "free-energy identity", &mut c3_free_energy_identity);
    run(4, "instanton invariants", &mut c4_invariants);
    run(5, "kappa dual route", &mut c5_kappa);
    run(6, "nonstatic open minimum", &mut c6_nonstatic_minimum);
    run(7, "angular-momentum contrast", &mut c7_angular_momentum);
    run(8, "escape-rate scaling", &mut || c8_escape(&mut sim));
    run(9, "speedup shape", &mut || c9_speedup(sim));
    run(10, "coherent-state reduction", &mut c10_coherent);
    let passed = lines.iter().filter(|l| matches!(l.2, Ok((true, _)))).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
}
