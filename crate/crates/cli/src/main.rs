//! `dhsim`: run district heating scenarios and check their certificates.
//!
//! Exit codes: 0 success, 1 certificate failure, 2 scenario error,
//! 3 runtime abort.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dhs_core::analysis::{run_checks, write_report, CertificateRegistry, CertificateReport};
use dhs_core::integrate::simulate;
use dhs_core::scenario::random::random_scenario_file;
use dhs_core::scenario::{read_scenario_file, ScenarioFile};
use dhs_core::trace::{write_gnuplot_data, write_trace, SimulationTrace};

const EXIT_CERTIFICATE: u8 = 1;
const EXIT_SCENARIO: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "dhsim", version, about = "District heating network simulator with stability certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv, report.txt and report.json.
    Run {
        /// Scenario JSON file, or `random` together with --seed.
        scenario: String,
        out_dir: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
        /// Also write trace.dat and plot.gp for gnuplot.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Simulate a scenario and print the certificate report.
    Verify {
        /// Scenario JSON file, or `random` together with --seed.
        scenario: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run every check on a batch of random scenarios.
    Sweep {
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of checks.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
        /// Write the canonical form of every failing scenario here.
        #[arg(long)]
        keep_failures: Option<PathBuf>,
    },
    /// List the registered certificate checks.
    Checks,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Step size override (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon override (s).
    #[arg(long)]
    t_end: Option<f64>,
    /// Record every n-th step.
    #[arg(long)]
    record_every: Option<usize>,
    /// Clamp inputs to the scenario's saturation limits.
    #[arg(long)]
    saturate: bool,
    /// Comma-separated subset of checks.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
    /// Seed for the `random` scenario.
    #[arg(long)]
    seed: Option<u64>,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn scenario(message: impl ToString) -> Self {
        Failure {
            code: EXIT_SCENARIO,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out_dir,
            flags,
            gnuplot,
        } => cmd_run(&scenario, &out_dir, &flags, gnuplot),
        Command::Verify { scenario, flags } => cmd_verify(&scenario, &flags),
        Command::Sweep {
            count,
            seed,
            checks,
            keep_failures,
        } => cmd_sweep(count, seed, checks, keep_failures.as_deref()),
        Command::Checks => {
            for c in CertificateRegistry::with_builtins().iter() {
                println!("{:<20} {}", c.name(), c.description());
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(scenario: &str, flags: &RunFlags) -> Result<ScenarioFile, Failure> {
    let mut file = if scenario == "random" {
        let seed = flags
            .seed
            .ok_or_else(|| Failure::scenario("`random` needs --seed"))?;
        random_scenario_file(seed)
    } else {
        read_scenario_file(Path::new(scenario)).map_err(Failure::scenario)?
    };
    if let Some(dt) = flags.dt {
        file.integrator.dt_s = dt;
    }
    if let Some(t) = flags.t_end {
        file.integrator.t_end_s = t;
    }
    if let Some(n) = flags.record_every {
        file.integrator.record_every = n;
    }
    if flags.saturate {
        file.integrator.saturation = true;
    }
    if let Some(c) = &flags.checks {
        file.analysis.checks = Some(c.clone());
    }
    Ok(file)
}

fn simulate_and_check(file: &ScenarioFile) -> Result<(SimulationTrace, CertificateReport), Failure> {
    let scenario = file.validate().map_err(Failure::scenario)?;
    let trace = simulate(&scenario).map_err(|e| Failure::runtime(format!("simulation aborted: {e}")))?;
    let report = run_checks(&CertificateRegistry::with_builtins(), &scenario, &trace, None)
        .map_err(Failure::scenario)?;
    Ok((trace, report))
}

fn status_code(report: &CertificateReport) -> u8 {
    if report.all_passed() {
        0
    } else {
        EXIT_CERTIFICATE
    }
}

fn cmd_run(scenario: &str, out_dir: &Path, flags: &RunFlags, gnuplot: bool) -> Result<u8, Failure> {
    let file = load(scenario, flags)?;
    let (trace, report) = simulate_and_check(&file)?;
    let io = |what: &str, e: &dyn std::fmt::Display| Failure::runtime(format!("writing {what}: {e}"));
    fs::create_dir_all(out_dir).map_err(|e| io("output directory", &e))?;
    write_trace(&trace, &out_dir.join("trace.csv")).map_err(|e| io("trace.csv", &e))?;
    write_report(&report, &out_dir.join("report.txt"), &out_dir.join("report.json"))
        .map_err(|e| io("report", &e))?;
    if gnuplot {
        let data = fs::File::create(out_dir.join("trace.dat")).map_err(|e| io("trace.dat", &e))?;
        write_gnuplot_data(&trace, std::io::BufWriter::new(data)).map_err(|e| io("trace.dat", &e))?;
        fs::write(out_dir.join("plot.gp"), gnuplot_script(&trace)).map_err(|e| io("plot.gp", &e))?;
    }
    print!("{}", report.to_text());
    println!("wrote {} samples to {}", trace.samples.len(), out_dir.display());
    Ok(status_code(&report))
}

fn cmd_verify(scenario: &str, flags: &RunFlags) -> Result<u8, Failure> {
    let file = load(scenario, flags)?;
    let (_, report) = simulate_and_check(&file)?;
    print!("{}", report.to_text());
    Ok(status_code(&report))
}

fn cmd_sweep(
    count: u64,
    seed: u64,
    checks: Option<Vec<String>>,
    keep: Option<&Path>,
) -> Result<u8, Failure> {
    let seeds: Vec<u64> = (seed..seed + count).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = seeds.len().div_ceil(workers).max(1);
    let results: Vec<(u64, ScenarioFile, Result<CertificateReport, Failure>)> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                let checks = checks.clone();
                s.spawn(move || {
                    part.iter()
                        .map(|&k| {
                            let mut file = random_scenario_file(k);
                            file.analysis.checks = checks.clone();
                            let r = simulate_and_check(&file).map(|(_, r)| r);
                            (k, file, r)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });

    let mut worst = 0u8;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (k, file, r) in &results {
        let (code, line) = match r {
            Ok(report) => {
                let failed: Vec<&str> = report.failures().map(|v| v.name.as_str()).collect();
                if failed.is_empty() {
                    (0, "pass".to_string())
                } else {
                    (EXIT_CERTIFICATE, format!("FAIL {}", failed.join(",")))
                }
            }
            Err(f) => (f.code, format!("ERROR {}", f.message.replace('\n', " "))),
        };
        let _ = writeln!(out, "seed {k}: {line}");
        if code != 0 {
            if let Some(dir) = keep {
                fs::create_dir_all(dir).map_err(Failure::runtime)?;
                let json = serde_json::to_string_pretty(file).map_err(Failure::runtime)?;
                fs::write(dir.join(format!("random-{k}.json")), json).map_err(Failure::runtime)?;
            }
        }
        worst = worst.max(code);
    }
    let failed = results.iter().filter(|(_, _, r)| !matches!(r, Ok(rep) if rep.all_passed())).count();
    let _ = writeln!(out, "{} scenarios, {} failed", results.len(), failed);
    Ok(worst)
}

fn gnuplot_script(trace: &SimulationTrace) -> String {
    let col = |prefix: &str| -> Vec<(usize, String)> {
        trace
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.starts_with(prefix) && c[prefix.len()..].parse::<usize>().is_ok())
            .map(|(k, c)| (k + 1, c.clone()))
            .collect()
    };
    let panels = [
        ("T_p_", "producer temperature (degC)"),
        ("V_sh_", "hot-layer volume (m3)"),
        ("T_c_", "consumer temperature (degC)"),
        ("P_p_", "producer power"),
        ("q_p_", "producer flow (m3/s)"),
        ("q_c_", "consumer flow (m3/s)"),
    ];
    let mut s = String::from(
        "set terminal pngcairo size 1400,1200\nset output 'plot.png'\n\
         set multiplot layout 3,2\nset xlabel 't (h)'\nset key outside right\n",
    );
    for (prefix, label) in panels {
        let series: Vec<String> = col(prefix)
            .into_iter()
            .map(|(k, name)| format!("'trace.dat' using ($1/3600):{k} with lines title '{name}'"))
            .collect();
        s.push_str(&format!("set ylabel '{label}'\nplot {}\n", series.join(", \\\n     ")));
    }
    s.push_str("unset multiplot\n");
    s
}
