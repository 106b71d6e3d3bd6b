//! `alphascreen`: simulate studies, screen real return panels, replicate tables.

mod reference;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alphascreen::methods::{run_method, Method, MethodOptions};
use alphascreen::panel::{check_alignment, FactorPanel, ReturnPanel};
use alphascreen::simulation::{
    builtin, generate_panel, replication_rng, run_study, write_records, MetricsReport, ReplicationRecord,
    SimulationScenario, StudyConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "alphascreen", version, about = "FDR-controlled alpha screening with latent factors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo study from a scenario file.
    Simulate(SimulateArgs),
    /// Screen one window of observed returns.
    Analyze(AnalyzeArgs),
    /// Rerun a built-in design and print it next to the published values.
    ReplicateTable(ReplicateArgs),
}

#[derive(Args)]
struct Common {
    /// Latent factor count; estimated by eigenvalue ratio when omitted.
    #[arg(long, env = "ALPHASCREEN_RANK")]
    rank: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "ALPHASCREEN_THREADS", default_value_t = 0)]
    threads: usize,
    /// Output directory, created if missing.
    #[arg(long, env = "ALPHASCREEN_OUT", default_value = ".")]
    out: PathBuf,
    /// Long-run variance in SBH.
    #[arg(long, env = "ALPHASCREEN_HAC")]
    hac: bool,
    /// Scale c of the negative-control threshold c·ln(n)/√n.
    #[arg(long, env = "ALPHASCREEN_GAMMA_SCALE", default_value_t = 1.0)]
    gamma_scale: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long, env = "ALPHASCREEN_SCENARIO")]
    scenario: PathBuf,
    #[arg(long, env = "ALPHASCREEN_METHOD", value_delimiter = ',', default_value = "yd")]
    method: Vec<Method>,
    #[arg(long, env = "ALPHASCREEN_BETA", value_delimiter = ',', default_value = "0.05,0.1,0.15")]
    beta: Vec<f64>,
    #[arg(long, env = "ALPHASCREEN_REPS", default_value_t = 300)]
    reps: usize,
    /// Replaces the scenario seed.
    #[arg(long, env = "ALPHASCREEN_SEED")]
    seed: Option<u64>,
    /// Also write replication 0 as returns.csv, factors.csv and truth.csv.
    #[arg(long)]
    dump_panel: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Returns CSV: `entity_id` then one column per period.
    #[arg(long, env = "ALPHASCREEN_RETURNS")]
    returns: PathBuf,
    /// Factors CSV: `period` then one column per factor.
    #[arg(long, env = "ALPHASCREEN_FACTORS")]
    factors: PathBuf,
    #[arg(long, env = "ALPHASCREEN_METHOD", default_value = "yd")]
    method: Method,
    #[arg(long, env = "ALPHASCREEN_BETA", default_value_t = 0.1)]
    beta: f64,
    /// Seed of the self-normalized limit law simulation.
    #[arg(long, env = "ALPHASCREEN_SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "figure1")]
    Figure1,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(long, env = "ALPHASCREEN_TABLE")]
    table: Table,
    #[arg(long, env = "ALPHASCREEN_REPS", default_value_t = 300)]
    reps: usize,
    /// Replaces the built-in seeds; block k uses `seed + k`.
    #[arg(long, env = "ALPHASCREEN_SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

/// Exit code 2 for bad input, 1 for failures while computing.
enum Failure {
    Config(String),
    Runtime(String),
}

fn config(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

type Outcome = std::result::Result<(), Failure>;

const REPLICATE_METHODS: [Method; 5] = [Method::Yd, Method::YdR, Method::Sbh, Method::Sn, Method::Bh];
const LEVELS: [f64; 3] = [0.05, 0.10, 0.15];
const FIGURE_NUS: [f64; 3] = [0.2, 0.3, 0.4];

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::ReplicateTable(a) => replicate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn options(c: &Common, sn_seed: Option<u64>) -> std::result::Result<MethodOptions, Failure> {
    if !(c.gamma_scale > 0.0) {
        return Err(config(format!("--gamma-scale must be positive, got {}", c.gamma_scale)));
    }
    let mut o = MethodOptions { rank: c.rank, gamma_scale: c.gamma_scale, hac: c.hac, ..Default::default() };
    if let Some(s) = sn_seed {
        o.sn_seed = s;
    }
    Ok(o)
}

fn check_betas(betas: &[f64]) -> Outcome {
    if betas.is_empty() {
        return Err(config("no FDR level given"));
    }
    match betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
        Some(b) => Err(config(format!("FDR level {b} outside (0, 1)"))),
        None => Ok(()),
    }
}

fn check_reps(reps: usize) -> Outcome {
    if reps == 0 {
        return Err(config("--reps must be at least 1"));
    }
    Ok(())
}

fn existing(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(config(format!("{}: no such file", path.display())))
    }
}

fn out_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| config(format!("cannot create {}: {e}", dir.display())))
}

fn create(path: PathBuf) -> std::result::Result<BufWriter<File>, Failure> {
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Outcome {
    check_betas(&a.beta)?;
    check_reps(a.reps)?;
    let opts = options(&a.common, None)?;
    existing(&a.scenario)?;
    let text = fs::read_to_string(&a.scenario).map_err(|e| config(format!("{}: {e}", a.scenario.display())))?;
    let mut sc = SimulationScenario::from_json(&text).map_err(config)?;
    if let Some(s) = a.seed {
        sc.seed = s;
    }
    sc.validate().map_err(config)?;
    out_dir(&a.common.out)?;

    if a.dump_panel {
        let g = generate_panel(&sc, &mut replication_rng(sc.seed, 0)).map_err(runtime)?;
        g.returns.write_csv(create(a.common.out.join("returns.csv"))?).map_err(runtime)?;
        g.factors.write_csv(create(a.common.out.join("factors.csv"))?).map_err(runtime)?;
        let mut truth = String::from("entity_id,alpha\n");
        for (id, v) in g.returns.entity_ids().iter().zip(&g.alpha) {
            writeln!(truth, "{id},{v:?}").expect("string write");
        }
        fs::write(a.common.out.join("truth.csv"), truth).map_err(runtime)?;
    }

    let cfg = StudyConfig {
        methods: a.method.clone(),
        betas: a.beta.clone(),
        replications: a.reps,
        threads: a.common.threads,
        options: opts,
    };
    let outcome = run_study(&sc, &cfg).map_err(runtime)?;
    outcome.write_reports(create(a.common.out.join("report.csv"))?).map_err(runtime)?;
    outcome.write_records(create(a.common.out.join("replications.csv"))?).map_err(runtime)?;
    for (rep, m, msg) in &outcome.failures {
        log::warn!("replication {rep} {m}: {msg}");
    }
    print!("{}", format_reports("", &outcome.reports, None));
    if outcome.reports.iter().all(|r| r.replications == 0) {
        return Err(runtime("every replication failed"));
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Outcome {
    check_betas(&[a.beta])?;
    let opts = options(&a.common, a.seed)?;
    existing(&a.returns)?;
    existing(&a.factors)?;
    let x = ReturnPanel::read_csv(&a.returns).map_err(config)?;
    let f = FactorPanel::read_csv(&a.factors).map_err(config)?;
    check_alignment(&x, &f).map_err(config)?;
    out_dir(&a.common.out)?;
    if a.common.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(a.common.threads)
            .build_global()
            .map_err(runtime)?;
    }

    let outcome = run_method(a.method, &x, &f, a.beta, &opts).map_err(runtime)?;
    outcome.write_csv(x.entity_ids(), create(a.common.out.join("selection.csv"))?).map_err(runtime)?;
    let meta = outcome.metadata_line(x.n());
    fs::write(a.common.out.join("selection.json"), format!("{meta}\n")).map_err(runtime)?;
    if let Some(split) = &outcome.split {
        split.write_csv(x.entity_ids(), create(a.common.out.join("split.csv"))?).map_err(runtime)?;
    }
    println!("{meta}");
    Ok(())
}

fn replicate(a: ReplicateArgs) -> Outcome {
    check_reps(a.reps)?;
    out_dir(&a.common.out)?;
    let seeded = |mut sc: SimulationScenario, k: u64| {
        if let Some(s) = a.seed {
            sc.seed = s.wrapping_add(k);
        }
        sc
    };
    let study = |sc: &SimulationScenario, opts: MethodOptions| {
        let cfg = StudyConfig {
            methods: REPLICATE_METHODS.to_vec(),
            betas: LEVELS.to_vec(),
            replications: a.reps,
            threads: a.common.threads,
            options: opts,
        };
        run_study(sc, &cfg).map_err(runtime)
    };

    match a.table {
        Table::One | Table::Two => {
            let (name, rows, blocks) = match a.table {
                Table::One => (
                    "table1",
                    reference::TABLE1,
                    vec![("normal", builtin::table1_normal()), ("lognormal", builtin::table1_lognormal())],
                ),
                _ => ("table2", reference::TABLE2, vec![("garch_arma", builtin::table2_garch_arma())]),
            };
            let mut csv = csv::Writer::from_writer(create(a.common.out.join(format!("{name}.csv")))?);
            csv.write_record([
                "block",
                "method",
                "beta",
                "mean_fdr",
                "sd_fdr",
                "mean_power",
                "sd_power",
                "replications",
                "reference_fdr",
                "reference_power",
            ])
            .map_err(runtime)?;
            let mut text = String::new();
            for (k, (block, sc)) in blocks.into_iter().enumerate() {
                let sc = seeded(sc, k as u64);
                let outcome = study(&sc, options(&a.common, None)?)?;
                for r in &outcome.reports {
                    let reference = reference::lookup(rows, block, &r.method, r.beta);
                    let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
                    csv.write_record([
                        block.to_string(),
                        r.method.clone(),
                        r.beta.to_string(),
                        format!("{:.4}", r.mean_fdr),
                        format!("{:.4}", r.sd_fdr),
                        format!("{:.4}", r.mean_power),
                        format!("{:.4}", r.sd_power),
                        r.replications.to_string(),
                        cell(reference.map(|x| x.0)),
                        cell(reference.map(|x| x.1)),
                    ])
                    .map_err(runtime)?;
                }
                text.push_str(&format_reports(block, &outcome.reports, Some(rows)));
            }
            csv.flush().map_err(runtime)?;
            fs::write(a.common.out.join(format!("{name}.txt")), &text).map_err(runtime)?;
            print!("{text}");
        }
        Table::Figure1 => {
            let base = seeded(builtin::figure1_hetero(), 0);
            let mut opts = options(&a.common, None)?;
            opts.hac = true;
            let mut reports: Vec<(f64, MetricsReport)> = Vec::new();
            let mut records: Vec<ReplicationRecord> = Vec::new();
            let mut text = String::new();
            for nu in FIGURE_NUS {
                let mut sc = base.clone();
                sc.nu = nu;
                let outcome = study(&sc, opts)?;
                text.push_str(&format_reports(&format!("nu={nu}"), &outcome.reports, None));
                reports.extend(outcome.reports.into_iter().map(|r| (nu, r)));
                records.extend(outcome.records);
            }
            let mut csv = csv::Writer::from_writer(create(a.common.out.join("figure1.csv"))?);
            csv.write_record(["method", "beta", "nu", "mean_fdr", "sd_fdr", "mean_power", "sd_power", "replications"])
                .map_err(runtime)?;
            for (nu, r) in &reports {
                csv.write_record([
                    r.method.clone(),
                    r.beta.to_string(),
                    nu.to_string(),
                    format!("{:.4}", r.mean_fdr),
                    format!("{:.4}", r.sd_fdr),
                    format!("{:.4}", r.mean_power),
                    format!("{:.4}", r.sd_power),
                    r.replications.to_string(),
                ])
                .map_err(runtime)?;
            }
            csv.flush().map_err(runtime)?;
            write_records(&records, create(a.common.out.join("figure1_replications.csv"))?).map_err(runtime)?;
            fs::write(a.common.out.join("figure1.txt"), &text).map_err(runtime)?;
            print!("{text}");
        }
    }
    Ok(())
}

/// Fixed-width table; the reference columns appear only when `rows` is given.
fn format_reports(block: &str, reports: &[MetricsReport], rows: Option<&[reference::Row]>) -> String {
    let mut s = String::new();
    if !block.is_empty() {
        writeln!(s, "[{block}]").expect("string write");
    }
    write!(s, "{:<7}{:>6}{:>16}{:>16}", "method", "beta", "FDR% (sd)", "power% (sd)").expect("string write");
    if rows.is_some() {
        write!(s, "{:>10}{:>10}", "ref FDR", "ref pow").expect("string write");
    }
    s.push('\n');
    for r in reports {
        write!(
            s,
            "{:<7}{:>6.2}{:>9.2} ({:>5.2}){:>9.2} ({:>5.2})",
            r.method, r.beta, r.mean_fdr, r.sd_fdr, r.mean_power, r.sd_power
        )
        .expect("string write");
        if let Some(rows) = rows {
            match reference::lookup(rows, block, &r.method, r.beta) {
                Some((f, p)) => write!(s, "{f:>10.2}{p:>10.2}"),
                None => write!(s, "{:>10}{:>10}", "-", "-"),
            }
            .expect("string write");
        }
        s.push('\n');
    }
    s
}
