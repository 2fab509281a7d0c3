use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bestchoice::design::{best_choice, estimate_propensities};
use bestchoice::dist::{regime_classify, variance_vkt, McConfig};
use bestchoice::error::Error;
use bestchoice::inference::{
    ci_constrained, ci_neyman, ci_wald, diff_in_means, estimate_variance, CiMethod, HcVariant,
    ObservedData,
};
use bestchoice::io::{
    align_outcomes, load_population, read_assignment_csv, read_outcomes_csv,
    simulation_report_csv, write_assignment_csv, DesignSidecar, RunManifest, SimulateFileConfig,
};
use bestchoice::population::{compute_moments, compute_moments_ridged, trim, TrimSpec};
use bestchoice::sim::{compute_truth, gamma_diagnostic, run_replications, worst_case_mse, SimConfig};
use bestchoice::Result;

#[derive(Parser)]
#[command(name = "bestchoice", version, about = "Best-choice rerandomization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw T candidate randomizations and keep the most balanced one.
    Design(DesignArgs),
    /// Analyze observed outcomes under a best-choice design.
    Analyze(AnalyzeArgs),
    /// Run a repeated-sampling simulation from a config file.
    Simulate(SimulateArgs),
    /// Design diagnostics.
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
}

#[derive(Args)]
struct DesignArgs {
    /// Covariate CSV (unit_id + numeric columns).
    #[arg(long)]
    covariates: PathBuf,
    /// Treated-arm size.
    #[arg(long)]
    n1: usize,
    /// Number of candidate randomizations T.
    #[arg(long = "tries", visible_alias = "T")]
    tries: usize,
    /// Master seed; drawn from entropy (and printed) when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Winsorize covariates before balancing.
    #[arg(long)]
    trim: bool,
    #[arg(long, default_value_t = 0.025)]
    trim_lo: f64,
    #[arg(long, default_value_t = 0.975)]
    trim_hi: f64,
    /// Add a small ridge when the covariate covariance is ill conditioned.
    #[arg(long)]
    ridge: bool,
    /// Output assignment CSV path; a JSON sidecar lands next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    assignment: PathBuf,
    /// Outcomes CSV with columns unit_id,y.
    #[arg(long)]
    outcomes: PathBuf,
    #[arg(long)]
    covariates: PathBuf,
    /// Design sidecar JSON; supplies T when --tries is not given.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    /// Number of candidate draws the design used (required without --sidecar).
    #[arg(long = "tries", visible_alias = "T")]
    tries: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "constrained")]
    method: CiMethod,
    #[arg(long, default_value = "hc2")]
    hc: HcVariant,
    #[arg(long, default_value_t = 200_000)]
    mc_draws: usize,
    /// Monte-Carlo seed for the constrained quantile.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Key-value config file.
    config: PathBuf,
    /// Report JSON path (stdout when absent).
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Flat per-cell CSV path.
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DiagnoseCmd {
    /// CSV grid of v_{K,T} over K and T lists.
    Vkt(VktArgs),
    /// Asymptotic regime classification for one (K, T).
    Regime(RegimeArgs),
    /// Per-unit Monte-Carlo propensity scores under the design.
    Propensity(PropensityArgs),
    /// Worst-case bias/RMSE of the design relative to the CRE.
    Worstcase(WorstcaseArgs),
    /// Berry-Esseen-type diagnostic gamma_n for a simulation population.
    Gamma(GammaArgs),
}

#[derive(Args)]
struct VktArgs {
    /// Comma-separated K values.
    #[arg(long = "K", value_delimiter = ',')]
    k: Vec<usize>,
    /// Comma-separated T values.
    #[arg(long = "T", value_delimiter = ',')]
    t: Vec<usize>,
    #[arg(long, default_value_t = 200_000)]
    draws: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RegimeArgs {
    #[arg(long = "K")]
    k: usize,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 200_000)]
    draws: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PropensityArgs {
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    n1: usize,
    #[arg(long = "tries", visible_alias = "T")]
    tries: usize,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct WorstcaseArgs {
    #[arg(long)]
    covariates: PathBuf,
    #[arg(long)]
    n1: usize,
    #[arg(long = "tries", visible_alias = "T")]
    tries: usize,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Winsorize covariates before the design step.
    #[arg(long)]
    trim: bool,
}

#[derive(Args)]
struct GammaArgs {
    /// Population CSV with y1,y0 columns.
    #[arg(long)]
    population: PathBuf,
    #[arg(long)]
    n1: usize,
    /// Use only the first K_used covariates.
    #[arg(long)]
    k_used: Option<usize>,
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s: u64 = rand::random();
            eprintln!("no --seed given; using entropy seed {s}");
            s
        }
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn cmd_design(args: &DesignArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let raw = fs::read(&args.covariates)?;
    let pop = load_population(&args.covariates)?;
    let pop = if args.trim {
        trim(&pop, &TrimSpec::new(args.trim_lo, args.trim_hi)?)
    } else {
        pop
    };
    let moments = if args.ridge {
        compute_moments_ridged(&pop, args.n1, None)?
    } else {
        compute_moments(&pop, args.n1)?
    };
    let result = best_choice(&pop, &moments, args.tries, seed)?;

    write_assignment_csv(&args.out, &pop.unit_ids, &result.chosen)?;
    let manifest = RunManifest::new(
        "design",
        &[
            &raw,
            format!("n1={} T={} trim={} ridge={}", args.n1, args.tries, args.trim, args.ridge)
                .as_bytes(),
        ],
        seed,
    );
    let sidecar = DesignSidecar {
        m_min: result.m_min,
        tries: result.tries,
        chosen_index: result.chosen_index,
        tie_count: result.tie_count,
        master_seed: result.seed_info.master_seed,
        driver_stream: result.seed_info.driver_stream,
        m_summary: result.m_quantiles,
        ridged: moments.ridged,
        manifest,
    };
    fs::write(sidecar_path(&args.out), serde_json::to_string_pretty(&sidecar)?)?;
    println!(
        "wrote {} (m_min = {:.6}, ties = {})",
        args.out.display(),
        result.m_min,
        result.tie_count
    );
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput {
    #[serde(flatten)]
    result: bestchoice::inference::InferenceResult,
    #[serde(rename = "T")]
    tries: usize,
    manifest: RunManifest,
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let tries = match (args.tries, &args.sidecar) {
        (Some(t), _) => t,
        (None, Some(path)) => {
            let sidecar: DesignSidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
            sidecar.tries
        }
        (None, None) => {
            return Err(Error::Config {
                field: "tries".into(),
                msg: "the CI depends on the design's T; pass --tries or --sidecar".into(),
            })
        }
    };
    let (ids, assignment) = read_assignment_csv(&args.assignment)?;
    let pop = load_population(&args.covariates)?;
    if pop.unit_ids != ids {
        return Err(Error::UnitMismatch(
            "assignment and covariate files disagree on unit ids".into(),
        ));
    }
    let outcomes = read_outcomes_csv(&args.outcomes)?;
    let y_obs = align_outcomes(&ids, &outcomes)?;
    let n1 = assignment.n1;
    let data = ObservedData::new(assignment, y_obs, pop.covariates.clone())?;
    let moments = compute_moments(&pop, n1)?;

    let seed = resolve_seed(args.seed);
    let result = match args.method {
        CiMethod::Neyman => ci_neyman(&data, args.alpha)?,
        CiMethod::Wald => {
            let variance = estimate_variance(&data, &moments, args.hc)?;
            ci_wald(diff_in_means(&data), &variance, args.alpha)?
        }
        CiMethod::Constrained => {
            let variance = estimate_variance(&data, &moments, args.hc)?;
            let mc = McConfig::new(args.mc_draws, seed)?;
            ci_constrained(diff_in_means(&data), &variance, pop.k, tries, args.alpha, &mc)?
        }
    };

    let manifest = RunManifest::new(
        "analyze",
        &[
            &fs::read(&args.assignment)?,
            &fs::read(&args.outcomes)?,
            &fs::read(&args.covariates)?,
            format!(
                "alpha={} method={} hc={} T={} mc_draws={}",
                args.alpha, args.method, args.hc, tries, args.mc_draws
            )
            .as_bytes(),
        ],
        seed,
    );
    let out = AnalyzeOutput { result, tries, manifest };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct SimulateOutput {
    #[serde(flatten)]
    report: bestchoice::sim::SimulationReport,
    manifest: RunManifest,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config_text = fs::read_to_string(&args.config)?;
    let file_cfg = SimulateFileConfig::parse(&config_text)?;
    let pop_path = args
        .config
        .parent()
        .unwrap_or(Path::new("."))
        .join(&file_cfg.population);
    let pop_path = if Path::new(&file_cfg.population).is_absolute() {
        PathBuf::from(&file_cfg.population)
    } else {
        pop_path
    };
    let pop_raw = fs::read(&pop_path)?;
    let pop = load_population(&pop_path)?;
    let seed = resolve_seed(file_cfg.seed);
    let mc = match file_cfg.mc_draws {
        Some(d) => McConfig::new(d, seed)?,
        None => McConfig::with_seed(seed),
    };
    let cfg = SimConfig {
        k_used: file_cfg.k_used.unwrap_or(pop.k),
        pop,
        n1: file_cfg.n1,
        tries: file_cfg.tries,
        reps: file_cfg.reps,
        alpha: file_cfg.alpha,
        methods: file_cfg.methods,
        hc_variants: file_cfg.hc,
        master_seed: seed,
        mc,
    };
    let report = run_replications(&cfg)?;
    let manifest = RunManifest::new("simulate", &[config_text.as_bytes(), &pop_raw], seed);
    let csv = simulation_report_csv(&report);
    let out = SimulateOutput { report, manifest };
    let json = serde_json::to_string_pretty(&out)?;
    match &args.out_json {
        Some(path) => fs::write(path, &json)?,
        None => println!("{json}"),
    }
    if let Some(path) = &args.out_csv {
        fs::write(path, &csv)?;
    }
    Ok(())
}

fn cmd_diagnose(cmd: &DiagnoseCmd) -> Result<()> {
    match cmd {
        DiagnoseCmd::Vkt(args) => {
            if args.k.is_empty() || args.t.is_empty() {
                return Err(Error::Invalid("need at least one K and one T".into()));
            }
            let seed = resolve_seed(args.seed);
            let mc = McConfig::new(args.draws, seed)?;
            let mut header = String::from("K");
            for &t in &args.t {
                header.push_str(&format!(",T={t}"));
            }
            println!("{header}");
            for &k in &args.k {
                let mut row = k.to_string();
                for &t in &args.t {
                    let est = variance_vkt(k, t, &mc)?;
                    row.push_str(&format!(",{:.6}", est.value));
                }
                println!("{row}");
            }
        }
        DiagnoseCmd::Regime(args) => {
            let seed = resolve_seed(args.seed);
            let mc = McConfig::new(args.draws, seed)?;
            let report = regime_classify(args.k, args.t, &mc)?;
            let manifest = RunManifest::new(
                "diagnose regime",
                &[format!("K={} T={} draws={}", args.k, args.t, args.draws).as_bytes()],
                seed,
            );
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                report: bestchoice::dist::RegimeReport,
                manifest: RunManifest,
            }
            println!("{}", serde_json::to_string_pretty(&Out { report, manifest })?);
        }
        DiagnoseCmd::Propensity(args) => {
            let seed = resolve_seed(args.seed);
            let pop = load_population(&args.covariates)?;
            let moments = compute_moments(&pop, args.n1)?;
            let props = estimate_propensities(&pop, &moments, args.tries, args.reps, seed)?;
            println!("unit_id,propensity");
            for (id, p) in pop.unit_ids.iter().zip(props) {
                println!("{id},{p:.6}");
            }
        }
        DiagnoseCmd::Worstcase(args) => {
            let seed = resolve_seed(args.seed);
            let pop = load_population(&args.covariates)?;
            let pop = if args.trim { trim(&pop, &TrimSpec::default()) } else { pop };
            let wc = worst_case_mse(&pop, args.n1, args.tries, args.reps, seed)?;
            let manifest = RunManifest::new(
                "diagnose worstcase",
                &[
                    &fs::read(&args.covariates)?,
                    format!("n1={} T={} reps={} trim={}", args.n1, args.tries, args.reps, args.trim)
                        .as_bytes(),
                ],
                seed,
            );
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                worst_case: bestchoice::sim::WorstCase,
                manifest: RunManifest,
            }
            println!("{}", serde_json::to_string_pretty(&Out { worst_case: wc, manifest })?);
        }
        DiagnoseCmd::Gamma(args) => {
            let pop = load_population(&args.population)?;
            let k_used = args.k_used.unwrap_or(pop.k);
            let truth = compute_truth(&pop, args.n1, k_used)?;
            let popk = pop.first_covariates(k_used)?;
            // truth already embeds gamma; recompute here only to keep the
            // two code paths honest in debug builds
            debug_assert_eq!(gamma_diagnostic(&popk, args.n1)?, truth.gamma_n);
            let manifest = RunManifest::new(
                "diagnose gamma",
                &[&fs::read(&args.population)?, format!("n1={} K_used={k_used}", args.n1).as_bytes()],
                0,
            );
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                truth: bestchoice::sim::TruthSummary,
                manifest: RunManifest,
            }
            println!("{}", serde_json::to_string_pretty(&Out { truth, manifest })?);
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Design(args) => cmd_design(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Diagnose(cmd) => cmd_diagnose(cmd),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
