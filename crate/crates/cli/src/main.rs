//! `tunnelqmc` command-line harness.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
//! 4 budget or censoring failure. Errors are printed to stderr as JSON.

mod config;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use tunnelqmc::coherent;
use tunnelqmc::exact;
use tunnelqmc::instanton::{self, Branch};
use tunnelqmc::meanfield::{self, SaddleKind};
use tunnelqmc::qmc::{self, EscapeFit};
use tunnelqmc::{Boundary, ErrorCategory, ModelSpec, QmcParams};

use crate::config::ExperimentConfig;
use crate::output::{num, Run, TaskSeed};

#[derive(Parser, Debug)]
#[command(name = "tunnelqmc", version, about = "QMC escape dynamics and instanton theory for transverse-field spin models")]
struct Cli {
    /// JSON experiment configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output root; each subcommand writes into `<root>/<subcommand>`
    #[arg(long, global = true, env = "TUNNELQMC_OUTPUT_ROOT")]
    out: Option<PathBuf>,
    /// also write gnuplot scripts next to the data
    #[arg(long, global = true)]
    emit_gnuplot: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone, Default)]
struct ModelArgs {
    #[arg(long)]
    n_spins: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// ascending coefficients of g(m), comma separated, e.g. `0,0,0,1`
    #[arg(long, allow_hyphen_values = true)]
    g_poly: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BoundaryArg {
    Open,
    Periodic,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Open => Boundary::Open,
            BoundaryArg::Periodic => Boundary::Periodic,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum KindArg {
    Min,
    Instanton,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GuessArg {
    Static,
    Kink,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BranchArg {
    Saddle,
    Min,
}

#[derive(Args, Debug, Clone, Default)]
struct QmcArgs {
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    start_well: Option<f64>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    min_uncensored: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Exact partition functions and low spectrum
    Exact {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 6)]
        levels: usize,
    },
    /// Discrete mean-field stationary point
    Saddle {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum)]
        boundary: Option<BoundaryArg>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long, value_enum, default_value = "instanton")]
        kind: KindArg,
        #[arg(long, value_enum, default_value = "static")]
        guess: GuessArg,
    },
    /// Continuous-time open-boundary instanton
    Instanton {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "saddle")]
        branch: BranchArg,
        #[arg(long, default_value_t = instanton::DEFAULT_GRID)]
        grid: usize,
    },
    /// Symmetric coherent-state trajectory against the instanton
    CoherentCheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = coherent::DEFAULT_GRID)]
        grid: usize,
    },
    /// QMC first-passage experiment and exponent fit
    Escape {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        qmc: QmcArgs,
        #[arg(long, value_enum)]
        boundary: Option<BoundaryArg>,
        /// system sizes, comma separated
        #[arg(long)]
        n_list: Option<String>,
        /// resume file; finished system sizes are skipped on rerun
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// refit with thresholds at these fractions of the start-to-threshold
        /// distance, e.g. `0.8,1.2`
        #[arg(long)]
        threshold_scan: Option<String>,
    },
    /// Barriers, saddles and escape fits for both boundaries over a β sweep
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        qmc: QmcArgs,
        /// inverse temperatures, comma separated
        #[arg(long)]
        betas: Option<String>,
        #[arg(long)]
        n_list: Option<String>,
        /// theory only
        #[arg(long)]
        skip_qmc: bool,
    },
}

#[derive(Debug)]
struct Failure {
    code: i32,
    category: &'static str,
    message: String,
}

impl Failure {
    fn config(m: impl Into<String>) -> Self {
        Self { code: 2, category: "config", message: m.into() }
    }
    fn numerical(m: impl Into<String>) -> Self {
        Self { code: 3, category: "numerical", message: m.into() }
    }
    fn budget(m: impl Into<String>) -> Self {
        Self { code: 4, category: "budget", message: m.into() }
    }
}

impl From<tunnelqmc::Error> for Failure {
    fn from(e: tunnelqmc::Error) -> Self {
        match e.category() {
            ErrorCategory::Config => Failure::config(e.to_string()),
            ErrorCategory::Numerical => Failure::numerical(e.to_string()),
            ErrorCategory::Budget => Failure::budget(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(format!("output: {e}"))
    }
}

type Res<T> = Result<T, Failure>;

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Res<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|_| Failure::config(format!("{what}: cannot parse '{x}'"))))
        .collect()
}

fn apply_model(cfg: &mut ExperimentConfig, m: &ModelArgs) -> Res<()> {
    if let Some(n) = m.n_spins {
        cfg.model.n_spins = n;
    }
    if let Some(b) = m.beta {
        cfg.model.beta = b;
    }
    if let Some(g) = m.gamma {
        cfg.model.gamma = g;
    }
    if let Some(p) = &m.g_poly {
        cfg.model.g_poly = parse_list(p, "--g-poly")?;
    }
    Ok(())
}

fn apply_qmc(cfg: &mut ExperimentConfig, q: &QmcArgs) {
    let c = &mut cfg.qmc;
    if let Some(v) = q.replicas {
        c.replicas = v;
    }
    if let Some(v) = q.seeds {
        c.seeds = v;
    }
    if let Some(v) = q.budget {
        c.budget = v;
    }
    if q.threshold.is_some() {
        c.threshold = q.threshold;
    }
    if q.start_well.is_some() {
        c.start_well = q.start_well;
    }
    if let Some(v) = q.base_seed {
        c.base_seed = v;
    }
    if let Some(v) = q.min_uncensored {
        c.min_uncensored = v;
    }
    if let Some(v) = q.bootstrap {
        c.bootstrap = v;
    }
}

fn output_root(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("tunnelqmc-out"))
}

fn kind_name(k: SaddleKind) -> &'static str {
    match k {
        SaddleKind::Minimum => "min",
        SaddleKind::Saddle => "instanton",
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            emit_failure(&Failure::config(e.to_string().trim().to_string()));
        }
    };
    match run(&cli) {
        Ok(summary) => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
        Err(f) => emit_failure(&f),
    }
}

fn emit_failure(f: &Failure) -> ! {
    let v = json!({ "error": { "code": f.code, "category": f.category, "message": f.message } });
    eprintln!("{v}");
    std::process::exit(f.code);
}

fn run(cli: &Cli) -> Res<Value> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::config(format!("config {}: {e}", p.display())))?;
            ExperimentConfig::from_json(&text).map_err(Failure::config)?
        }
        None => ExperimentConfig::default(),
    };
    match &cli.cmd {
        Cmd::Exact { model, levels } => {
            apply_model(&mut cfg, model)?;
            cmd_exact(cli, &cfg, *levels)
        }
        Cmd::Saddle { model, boundary, replicas, kind, guess } => {
            apply_model(&mut cfg, model)?;
            if let Some(b) = boundary {
                cfg.qmc.boundary = (*b).into();
            }
            if let Some(r) = replicas {
                cfg.qmc.replicas = *r;
            }
            cmd_saddle(cli, &cfg, *kind, *guess)
        }
        Cmd::Instanton { model, branch, grid } => {
            apply_model(&mut cfg, model)?;
            cmd_instanton(cli, &cfg, *branch, *grid)
        }
        Cmd::CoherentCheck { model, grid } => {
            apply_model(&mut cfg, model)?;
            cmd_coherent(cli, &cfg, *grid)
        }
        Cmd::Escape { model, qmc, boundary, n_list, checkpoint, threshold_scan } => {
            apply_model(&mut cfg, model)?;
            apply_qmc(&mut cfg, qmc);
            if let Some(b) = boundary {
                cfg.qmc.boundary = (*b).into();
            }
            if let Some(l) = n_list {
                cfg.sweep.n_values = parse_list(l, "--n-list")?;
            }
            let scan = match threshold_scan {
                Some(t) => parse_list(t, "--threshold-scan")?,
                None => Vec::new(),
            };
            cmd_escape(cli, &cfg, checkpoint.as_deref(), &scan)
        }
        Cmd::Compare { model, qmc, betas, n_list, skip_qmc } => {
            apply_model(&mut cfg, model)?;
            apply_qmc(&mut cfg, qmc);
            if let Some(b) = betas {
                cfg.sweep.betas = parse_list(b, "--betas")?;
            }
            if let Some(l) = n_list {
                cfg.sweep.n_values = parse_list(l, "--n-list")?;
            }
            cmd_compare(cli, &cfg, *skip_qmc)
        }
    }
}

fn cmd_exact(cli: &Cli, cfg: &ExperimentConfig, levels: usize) -> Res<Value> {
    let spec = cfg.model.spec()?;
    let lz_p = exact::ln_partition_periodic(&spec)?;
    let lz_o = exact::ln_partition_open(&spec)?;
    let head = exact::spectrum_head(&spec, levels)?;
    let gap = exact::spectral_gap(&spec)?;
    let v = json!({
        "Z_pbc": lz_p.exp(),
        "Z_obc": lz_o.exp(),
        "ln_Z_pbc": lz_p,
        "ln_Z_obc": lz_o,
        "gap": gap,
        "spectrum_head": head,
        "provenance": {
            "Z_pbc": "exact::partition_periodic (sector trace of e^{-βH})",
            "Z_obc": "exact::partition_open (Σ_s ⟨s|e^{-βH}|s⟩ over product states)",
            "gap": "exact::spectral_gap (symmetric sector)",
            "spectrum_head": "exact::spectrum_head (symmetric sector)"
        }
    });
    let mut run = Run::new(&output_root(cli, cfg), "exact", cli.emit_gnuplot)?;
    run.write_json("exact.json", &v)?;
    run.finish(cfg)?;
    Ok(v)
}

fn saddle_guess(spec: &ModelSpec, r: usize, b: Boundary, kind: KindArg, guess: GuessArg) -> Res<meanfield::FieldProfile> {
    let land = instanton::landscape(spec)?;
    Ok(match (guess, kind, b) {
        (GuessArg::Static, KindArg::Min, _) => meanfield::static_guess(spec, r, b, land.m_meta),
        (GuessArg::Static, KindArg::Instanton, _) => meanfield::static_guess(spec, r, b, land.m_top),
        (GuessArg::Kink, _, Boundary::Open) => meanfield::kink_guess(spec, r, b, land.m_meta, land.m_glob, 0.1),
        (GuessArg::Kink, _, Boundary::Periodic) => meanfield::bump_guess(spec, r, b, land.m_meta, land.m_glob, 0.06),
    })
}

fn cmd_saddle(cli: &Cli, cfg: &ExperimentConfig, kind: KindArg, guess: GuessArg) -> Res<Value> {
    let spec = cfg.model.spec()?;
    let (r, b) = (cfg.qmc.replicas, cfg.qmc.boundary);
    let params = QmcParams::new(&spec, r, b)?;
    let want = match kind {
        KindArg::Min => SaddleKind::Minimum,
        KindArg::Instanton => SaddleKind::Saddle,
    };
    let g = saddle_guess(&spec, r, b, kind, guess)?;
    let res = meanfield::solve_saddle(&spec, &params, b, &g, want)?;
    let v = meanfield::vector_magnetization(&res.profile, &spec, &params)?;
    let rows: Vec<Vec<String>> = (0..=r)
        .map(|k| {
            let slice = |x: &[f64]| if k < r { num(x[k]) } else { String::new() };
            vec![
                k.to_string(),
                slice(&res.profile.lambdas),
                slice(&res.profile.magnetizations),
                num(v.m_x[k]),
                num(v.i_m_y[k]),
                num(v.m_z[k]),
            ]
        })
        .collect();
    let summary = json!({
        "free_energy": res.free_energy,
        "residual": res.residual_norm,
        "kind": kind_name(res.kind),
        "requested": kind_name(res.requested),
        "morse_index": res.morse_index,
        "iterations": res.iterations,
        "boundary": b,
        "replicas": r,
        "provenance": {
            "free_energy": "meanfield::free_energy (transfer-matrix trace, continuum normalisation)",
            "residual": "meanfield::solve_saddle (|m - M(g'(m))|)",
            "morse_index": "meanfield::solve_saddle (Hessian eigenvalues)"
        }
    });
    let mut run = Run::new(&output_root(cli, cfg), "saddle", cli.emit_gnuplot)?;
    run.write_csv("profile.csv", &["tau_index", "lambda", "m", "m_x", "i_m_y", "m_z"], &rows)?;
    run.plot("profile.csv", 1, &[(3, "linespoints"), (6, "lines")], false)?;
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    Ok(summary)
}

fn cmd_instanton(cli: &Cli, cfg: &ExperimentConfig, branch: BranchArg, grid: usize) -> Res<Value> {
    let spec = cfg.model.spec()?;
    let beta = spec.beta;
    let br = match branch {
        BranchArg::Saddle => Branch::Saddle,
        BranchArg::Min => Branch::Minimum,
    };
    if grid < 2 {
        return Err(Failure::config("--grid must be at least 2"));
    }
    let rep = instanton::solve_all(&spec, beta)?;
    let best = rep.best(br).ok_or_else(|| Failure::numerical(format!("no {br:?} solution at β = {beta}")))?;
    let t = instanton::trajectory_for(&spec, beta, best, br, grid);
    let rows: Vec<Vec<String>> = (0..t.taus.len())
        .map(|k| vec![num(t.taus[k]), num(t.m_z[k]), num(t.m_x[k]), num(t.i_m_y[k]), num(t.momentum[k])])
        .collect();
    let alts: Vec<Value> = rep.alternatives(br).iter().map(|c| json!({ "eps": c.eps, "F_ob": c.free_energy })).collect();
    let summary = json!({
        "eps": t.energy,
        "ell": t.ell,
        "m1": t.m1,
        "m2": t.m2,
        "p1": t.p1,
        "p2": t.p2,
        "I": t.integral_i,
        "kappa": t.kappa,
        "F_ob": instanton::free_energy_ob(&t, &spec),
        "F_wkb": instanton::wkb_free_energy(&t, &spec),
        "branch": br,
        "is_static": t.is_static,
        "alternatives": alts,
        "provenance": {
            "eps": "instanton::solve_all (Brent on T(ε) = β)",
            "I": "instanton::integral_i (leg quadrature)",
            "kappa": "instanton::InstantonTrajectory (closed form from I and end points)",
            "F_ob": "instanton::free_energy_ob (∫(m g' - g) - ln 2 - I + ¼ Σ ln(1 - m²))",
            "F_wkb": "instanton::wkb_free_energy (βε + ½(∫p dm - Q(m1) - Q(m2)))"
        }
    });
    let mut run = Run::new(&output_root(cli, cfg), "instanton", cli.emit_gnuplot)?;
    run.write_csv("trajectory.csv", &["tau", "m_z", "m_x", "i_m_y", "p"], &rows)?;
    run.plot("trajectory.csv", 1, &[(2, "lines"), (3, "lines"), (5, "lines")], false)?;
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    Ok(summary)
}

fn cmd_coherent(cli: &Cli, cfg: &ExperimentConfig, grid: usize) -> Res<Value> {
    let spec = cfg.model.spec()?;
    let inst = instanton::shoot(&spec, spec.beta, Branch::Saddle)?;
    let coh = coherent::from_instanton(&inst, spec.n_spins, grid)?;
    let parts = coherent::action(&coh, &spec)?;
    let summary = json!({
        "max_deviation": coherent::max_deviation(&coh, &inst),
        "vector_residual": coherent::vector_residual(&coh, &spec),
        "berry": parts.berry,
        "energy": parts.energy,
        "action": parts.total(),
        "tunneling_exponent": coherent::tunneling_exponent(&coh),
        "instanton_action": coherent::instanton_action(&inst, spec.n_spins),
        "provenance": {
            "max_deviation": "coherent::max_deviation (pointwise vs instanton trajectory)",
            "vector_residual": "coherent::vector_residual (vector saddle equations on the grid)",
            "action": "coherent::action (Berry term + ∫H, Simpson)",
            "instanton_action": "coherent::instanton_action (end-point formula)"
        }
    });
    let rows: Vec<Vec<String>> = (0..coh.taus.len())
        .map(|k| {
            let [x, y, z] = coh.vector(0, k);
            vec![num(coh.taus[k]), num(coh.theta[0][k]), num(coh.varphi[0][k]), num(x), num(y), num(z)]
        })
        .collect();
    let mut run = Run::new(&output_root(cli, cfg), "coherent-check", cli.emit_gnuplot)?;
    run.write_csv("coherent.csv", &["tau", "theta", "varphi", "n_x", "i_n_y", "n_z"], &rows)?;
    run.plot("coherent.csv", 1, &[(2, "lines"), (3, "lines")], false)?;
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    Ok(summary)
}

fn record_rows(fit: &EscapeFit) -> Vec<Vec<String>> {
    fit.records
        .iter()
        .map(|r| {
            vec![
                r.n_spins.to_string(),
                r.seed.to_string(),
                r.boundary.to_string(),
                r.first_passage_sweeps.to_string(),
                r.censored.to_string(),
                num(r.threshold),
            ]
        })
        .collect()
}

fn summary_rows(fit: &EscapeFit) -> Vec<Vec<String>> {
    fit.summaries
        .iter()
        .map(|s| vec![s.n_spins.to_string(), s.uncensored.to_string(), s.censored.to_string(), num(s.mean_sweeps), num(s.mean_sweeps.ln())])
        .collect()
}

fn fit_json(fit: &EscapeFit) -> Value {
    json!({
        "intercept": fit.intercept,
        "slope": fit.slope,
        "slope_ci": fit.slope_ci,
        "refused": fit.refused,
        "threshold": fit.threshold,
        "start_well": fit.start_well,
        "summaries": fit.summaries,
    })
}

fn validate_escape(cfg: &ExperimentConfig) -> Res<()> {
    if cfg.sweep.n_values.is_empty() {
        return Err(Failure::config("n-list is empty"));
    }
    if cfg.qmc.seeds == 0 || cfg.qmc.budget == 0 {
        return Err(Failure::config("seeds and budget must be positive"));
    }
    Ok(())
}

fn seed_entries(cfg: &ExperimentConfig, label: &str, ns: &[usize]) -> Vec<TaskSeed> {
    ns.iter()
        .flat_map(|&n| {
            (0..cfg.qmc.seeds).map(move |s| TaskSeed {
                task: format!("{label} N={n} seed={s}"),
                base_seed: cfg.qmc.base_seed,
                stream: qmc::stream_id(n, s),
            })
        })
        .collect()
}

fn cmd_escape(cli: &Cli, cfg: &ExperimentConfig, checkpoint: Option<&std::path::Path>, scan: &[f64]) -> Res<Value> {
    validate_escape(cfg)?;
    let spec = cfg.model.spec()?;
    let b = cfg.qmc.boundary;
    let ecfg = cfg.escape_config(b, cfg.sweep.n_values.clone());
    let fit = match checkpoint {
        Some(p) => qmc::escape_experiment_checkpointed(&spec, &ecfg, p)?,
        None => qmc::escape_experiment(&spec, &ecfg)?,
    };
    let mut summary = fit_json(&fit);
    summary["boundary"] = json!(b);
    summary["provenance"] = json!({
        "slope": "qmc::escape_experiment (least squares of ln τ̂ on N, τ̂ = Σt / #uncensored)",
        "slope_ci": "qmc::bootstrap_slope (percentile 95%)"
    });
    let mut scan_rows = Vec::new();
    let mut scan_json = Vec::new();
    for &frac in scan {
        let mut c = ecfg.clone();
        c.start_well = Some(fit.start_well);
        c.threshold = Some(fit.start_well + frac * (fit.threshold - fit.start_well));
        let f = qmc::escape_experiment(&spec, &c)?;
        scan_rows.push(vec![
            num(frac),
            num(f.threshold),
            f.slope.map(num).unwrap_or_default(),
            f.refused.clone().unwrap_or_default(),
        ]);
        scan_json.push(json!({ "fraction": frac, "threshold": f.threshold, "slope": f.slope, "refused": f.refused }));
    }
    if !scan.is_empty() {
        summary["threshold_sensitivity"] = json!(scan_json);
    }
    let mut run = Run::new(&output_root(cli, cfg), "escape", cli.emit_gnuplot)?;
    if !scan.is_empty() {
        run.write_csv("threshold_scan.csv", &["fraction", "threshold", "slope", "refused"], &scan_rows)?;
    }
    let mut ns = cfg.sweep.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    run.seeds = seed_entries(cfg, &b.to_string(), &ns);
    run.write_csv("records.csv", &["n_spins", "seed", "boundary", "first_passage_sweeps", "censored", "threshold"], &record_rows(&fit))?;
    run.write_csv("escape_summary.csv", &["n_spins", "uncensored", "censored", "mean_sweeps", "ln_mean_sweeps"], &summary_rows(&fit))?;
    run.plot("escape_summary.csv", 1, &[(4, "linespoints")], true)?;
    run.write_json("fit.json", &summary)?;
    run.finish(cfg)?;
    if let Some(r) = &fit.refused {
        return Err(Failure::budget(format!("fit refused: {r}")));
    }
    Ok(summary)
}

fn cmd_compare(cli: &Cli, cfg: &ExperimentConfig, skip_qmc: bool) -> Res<Value> {
    if cfg.sweep.betas.is_empty() {
        return Err(Failure::config("β list is empty"));
    }
    if !skip_qmc {
        validate_escape(cfg)?;
    }
    let base = cfg.model.spec()?;
    let mut ns = cfg.sweep.n_values.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut table: Vec<Value> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    let mut seeds = Vec::new();
    let push = |rows: &mut Vec<Vec<String>>, beta: f64, q: &str, v: f64, prov: &str| {
        rows.push(vec![num(beta), q.to_string(), num(v), prov.to_string()]);
    };
    for (i, &beta) in cfg.sweep.betas.iter().enumerate() {
        let spec = base.with_beta(beta)?;
        let r = cfg.sweep.replicas_for(i, beta);
        let land = instanton::landscape(&spec)?;
        let mut entry = json!({ "beta": beta, "replicas": r });
        let ob = instanton::barrier(&spec, beta);
        let pb = meanfield::periodic_barrier(&spec, r, land.m_meta, land.m_top);
        let obm = open_meanfield_barrier(&spec, r);
        match &ob {
            Ok((d, _, _)) => {
                push(&mut rows, beta, "dF_obc_instanton", *d, "instanton::barrier (F_OB saddle - minimum)");
                entry["dF_obc_instanton"] = json!(d);
            }
            Err(e) => failures.push(format!("β={beta} OBC instanton: {e}")),
        }
        match &obm {
            Ok(d) => {
                push(&mut rows, beta, "dF_obc_meanfield", *d, "meanfield::solve_saddle (open, seeded by instanton paths)");
                entry["dF_obc_meanfield"] = json!(d);
            }
            Err(e) => failures.push(format!("β={beta} OBC meanfield: {e}")),
        }
        match &pb {
            Ok((d, _, _)) => {
                push(&mut rows, beta, "dF_pbc_meanfield", *d, "meanfield::periodic_barrier (index-1 saddle - minimum)");
                entry["dF_pbc_meanfield"] = json!(d);
            }
            Err(e) => failures.push(format!("β={beta} PBC meanfield: {e}")),
        }
        if let (Ok((o, _, _)), Ok((p, _, _))) = (&ob, &pb) {
            push(&mut rows, beta, "r_theory", p / o, "dF_pbc_meanfield / dF_obc_instanton");
            entry["r_theory"] = json!(p / o);
        }
        if !skip_qmc {
            let mut slopes = [None, None];
            for (k, b) in [Boundary::Periodic, Boundary::Open].into_iter().enumerate() {
                let mut ecfg = cfg.escape_config(b, ns.clone());
                ecfg.replicas = r;
                seeds.extend(seed_entries(cfg, &format!("β={beta} {b}"), &ns));
                let fit = qmc::escape_experiment(&spec, &ecfg)?;
                let name = if b == Boundary::Periodic { "b_pbc_qmc" } else { "b_obc_qmc" };
                match (fit.slope, &fit.refused) {
                    (Some(s), None) => {
                        push(&mut rows, beta, name, s, "qmc::escape_experiment (slope of ln τ̂ vs N)");
                        entry[name] = json!(s);
                        slopes[k] = Some(s);
                    }
                    (_, refused) => failures.push(format!("β={beta} {b} escape refused: {}", refused.clone().unwrap_or_default())),
                }
            }
            if let [Some(p), Some(o)] = slopes {
                push(&mut rows, beta, "r_qmc", p / o, "b_pbc_qmc / b_obc_qmc");
                entry["r_qmc"] = json!(p / o);
            }
        }
        table.push(entry);
    }
    let summary = json!({ "table": table, "failures": failures });
    let mut run = Run::new(&output_root(cli, cfg), "compare", cli.emit_gnuplot)?;
    run.seeds = seeds;
    run.write_csv("compare.csv", &["beta", "quantity", "value", "provenance"], &rows)?;
    let wide: Vec<Vec<String>> = table
        .iter()
        .map(|e| {
            let g = |k: &str| e.get(k).and_then(Value::as_f64).map(num).unwrap_or_default();
            vec![g("beta"), g("r_theory"), g("r_qmc")]
        })
        .collect();
    run.write_csv("speedup.csv", &["beta", "r_theory", "r_qmc"], &wide)?;
    run.plot("speedup.csv", 1, &[(2, "linespoints"), (3, "points")], false)?;
    run.write_json("summary.json", &summary)?;
    run.finish(cfg)?;
    if !failures.is_empty() {
        let censoring = failures.iter().all(|f| f.contains("refused"));
        let msg = failures.join("; ");
        return Err(if censoring { Failure::budget(msg) } else { Failure::numerical(msg) });
    }
    Ok(summary)
}

fn open_meanfield_barrier(spec: &ModelSpec, r: usize) -> Result<f64, tunnelqmc::Error> {
    let b = Boundary::Open;
    let p = QmcParams::new(spec, r, b)?;
    let mut f = [0.0; 2];
    for (k, (br, kind)) in [(Branch::Saddle, SaddleKind::Saddle), (Branch::Minimum, SaddleKind::Minimum)].into_iter().enumerate() {
        let t = instanton::shoot(spec, spec.beta, br)?;
        let g = meanfield::sampled_guess(spec, r, b, |tau| t.state_at(tau).m_z);
        f[k] = meanfield::solve_saddle(spec, &p, b, &g, kind)?.free_energy;
    }
    Ok(f[0] - f[1])
}
