use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use whcert::cert::Cert;
use whcert::error::Error;
use whcert::graph::WhGraph;
use whcert::problem::Problem;
use whcert::schedule::Schedule;
use whcert::systems::SystemModel;
use whcert::wh::{LossWord, WhConstraint};
use whcert::{simulate, sos, validate, CertStatus, GbfVariant};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_UNKNOWN: u8 = 4;
const EXIT_COUNTEREXAMPLE: u8 = 5;
const EXIT_INVALID: u8 = 6;

/// Safety certification for control loops under weakly-hard packet
/// loss.
#[derive(Parser)]
#[command(name = "whcert", version)]
struct Cli {
    /// Seed for every randomized sampling step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Builds the constraint's graph and prints it as JSON or DOT.
    Graph {
        #[arg(long)]
        r: u32,
        #[arg(long)]
        s: u32,
        /// Emit Graphviz DOT instead of JSON.
        #[arg(long)]
        dot: bool,
        /// Cross-check graph acceptance against the window semantics
        /// for every word up to this length.
        #[arg(long)]
        check_len: Option<u32>,
    },
    /// Searches for a barrier certificate of the given variant.
    Verify {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        variant: GbfVariant,
        /// JSON settings file; any subset of fields overrides the
        /// defaults.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Write the certificate here on success.
        #[arg(long)]
        cert_out: Option<PathBuf>,
    },
    /// Searches for a stabilizing gain together with its certificate.
    Synthesize {
        #[arg(long)]
        problem: PathBuf,
        /// Starting gain, row-major with rows separated by ';'
        /// (e.g. "-0.35,-0.85"). Defaults to the problem's controller.
        #[arg(long, allow_hyphen_values = true)]
        k_init: Option<String>,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        cert_out: Option<PathBuf>,
    },
    /// Rolls the closed loop forward under a loss word and prints the
    /// trajectory as CSV.
    Simulate {
        #[arg(long)]
        problem: PathBuf,
        /// Delivery bits, e.g. 1000011100.
        #[arg(long)]
        word: String,
        /// Initial state, comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// Certificate whose barrier is evaluated along the rollout.
        #[arg(long)]
        cert: Option<PathBuf>,
        /// Print the per-edge decrease ledger instead of the CSV
        /// (needs --cert).
        #[arg(long)]
        monitor: bool,
    },
    /// Hunts for an unsafe rollout over all admissible words up to a
    /// horizon.
    Falsify {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        horizon: usize,
        /// Number of sampled initial states (axis extremes are always
        /// included).
        #[arg(long)]
        samples: usize,
    },
    /// Re-checks a certificate against the problem by dense sampling.
    Validate {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        samples: usize,
    },
    /// Tabulates one node's barrier on an axis-aligned grid.
    Levelset {
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        node: String,
        /// One lo:hi:count range per certificate coordinate,
        /// comma-separated.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("WHCERT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(EXIT_CONFIG),
                _ => ExitCode::from(EXIT_ERROR),
            }
        }
    }
}

fn load_problem(path: &PathBuf) -> Result<Problem, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    Problem::from_json_str(&text)
}

fn load_schedule(path: Option<&PathBuf>, seed: u64) -> Result<Schedule, Error> {
    let mut sched = match path {
        None => Schedule::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config {
                path: format!("{}:{}", p.display(), e.line()),
                msg: e.to_string(),
            })?
        }
    };
    sched.seed = seed;
    Ok(sched)
}

fn load_cert(path: &PathBuf) -> Result<Cert, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    Cert::from_json_str(&text)
}

fn parse_vector(text: &str, what: &str) -> Result<DVector<f64>, Error> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match vals {
        Ok(v) if !v.is_empty() => Ok(DVector::from_vec(v)),
        _ => Err(Error::Config {
            path: what.to_string(),
            msg: format!("expected comma-separated numbers, got {text:?}"),
        }),
    }
}

fn parse_word(text: &str) -> Result<LossWord, Error> {
    let mut bits = Vec::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '1' => bits.push(true),
            '0' => bits.push(false),
            _ => {
                return Err(Error::Config {
                    path: "word".into(),
                    msg: format!("loss words are strings over {{0, 1}}, got {text:?}"),
                })
            }
        }
    }
    Ok(LossWord::new(bits))
}

fn parse_grid(text: &str) -> Result<Vec<(f64, f64, usize)>, Error> {
    let bad = |msg: String| Error::Config { path: "grid".into(), msg };
    text.split(',')
        .map(|axis| {
            let parts: Vec<&str> = axis.split(':').collect();
            if parts.len() != 3 {
                return Err(bad(format!("axis {axis:?} is not lo:hi:count")));
            }
            let lo = parts[0].trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
            let hi = parts[1].trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
            let n = parts[2].trim().parse::<usize>().map_err(|e| bad(e.to_string()))?;
            Ok((lo, hi, n))
        })
        .collect()
}

fn report_json(rep: &whcert::CertReport) -> serde_json::Value {
    serde_json::json!({
        "status": format!("{:?}", rep.status),
        "residual": rep.residual,
        "solver_status": rep.solver_status,
        "wall_ms": rep.wall_ms,
        "note": rep.note,
    })
}

fn finish_verify(
    rep: whcert::CertReport,
    cert_out: Option<&PathBuf>,
) -> Result<u8, Error> {
    println!("{}", serde_json::to_string_pretty(&report_json(&rep)).unwrap());
    if let (Some(path), Some(cert)) = (cert_out, rep.cert.as_ref()) {
        fs::write(path, cert.to_json_string()).map_err(|e| Error::Config {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    }
    Ok(match rep.status {
        CertStatus::Certified => EXIT_OK,
        CertStatus::Infeasible => EXIT_INFEASIBLE,
        CertStatus::Unknown => EXIT_UNKNOWN,
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.cmd {
        Cmd::Graph { r, s, dot, check_len } => {
            let graph = WhGraph::build(WhConstraint::new(r, s)?);
            if let Some(len) = check_len {
                if let Some(word) = graph.language_check(len)? {
                    println!("mismatch at {word}");
                    return Ok(EXIT_ERROR);
                }
            }
            if dot {
                print!("{}", graph.to_dot());
            } else {
                println!("{}", serde_json::to_string_pretty(&graph.to_json()).unwrap());
            }
            Ok(EXIT_OK)
        }
        Cmd::Verify { problem, variant, schedule, cert_out } => {
            let problem = load_problem(&problem)?;
            let sched = load_schedule(schedule.as_ref(), cli.seed)?;
            let rep = match &problem.model {
                SystemModel::Linear(_) => whcert::lmi::verify(&problem, variant, &sched)?,
                SystemModel::Poly(_) => sos::verify_sos(&problem, variant, &sched)?,
            };
            finish_verify(rep, cert_out.as_ref())
        }
        Cmd::Synthesize { problem, k_init, schedule, cert_out } => {
            let problem = load_problem(&problem)?;
            let sched = load_schedule(schedule.as_ref(), cli.seed)?;
            let k0 = match k_init {
                None => None,
                Some(text) => {
                    let rows: Vec<Vec<f64>> = text
                        .split(';')
                        .map(|row| parse_vector(row, "k_init").map(|v| v.iter().copied().collect()))
                        .collect::<Result<_, _>>()?;
                    let cols = rows[0].len();
                    Some(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
                }
            };
            let (k, rep) = whcert::lmi::synthesize(&problem, &sched, k0)?;
            let gain: Vec<Vec<f64>> =
                (0..k.nrows()).map(|i| (0..k.ncols()).map(|j| k[(i, j)]).collect()).collect();
            let mut out = report_json(&rep);
            out["gain"] = serde_json::json!(gain);
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
            if let (Some(path), Some(cert)) = (cert_out.as_ref(), rep.cert.as_ref()) {
                fs::write(path, cert.to_json_string()).map_err(|e| Error::Config {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
            }
            Ok(match rep.status {
                CertStatus::Certified => EXIT_OK,
                CertStatus::Infeasible => EXIT_INFEASIBLE,
                CertStatus::Unknown => EXIT_UNKNOWN,
            })
        }
        Cmd::Simulate { problem, word, x0, cert, monitor } => {
            let problem = load_problem(&problem)?;
            let word = parse_word(&word)?;
            let x0 = parse_vector(&x0, "x0")?;
            let cert = cert.as_ref().map(load_cert).transpose()?;
            let traj = simulate::simulate(&problem, &word, &x0)?;
            if monitor {
                let cert = cert.as_ref().ok_or_else(|| Error::Config {
                    path: "cert".into(),
                    msg: "--monitor needs --cert".into(),
                })?;
                let rep = simulate::monitor(&problem, cert, &traj, 1e-7)?;
                println!("{}", serde_json::to_string_pretty(&rep).unwrap());
                return Ok(if rep.pass { EXIT_OK } else { EXIT_INVALID });
            }
            print!("{}", traj.to_csv(cert.as_ref())?);
            Ok(EXIT_OK)
        }
        Cmd::Falsify { problem, horizon, samples } => {
            let problem = load_problem(&problem)?;
            let rep = simulate::falsify(&problem, horizon, samples, cli.seed)?;
            println!("{}", serde_json::to_string_pretty(&rep).unwrap());
            Ok(if rep.counterexample.is_some() { EXIT_COUNTEREXAMPLE } else { EXIT_OK })
        }
        Cmd::Validate { problem, cert, samples } => {
            let problem = load_problem(&problem)?;
            let cert = load_cert(&cert)?;
            let rep = validate::validate_cert(&problem, &cert, samples, 1e-6, cli.seed)?;
            println!("{}", serde_json::to_string_pretty(&rep).unwrap());
            Ok(if rep.pass { EXIT_OK } else { EXIT_INVALID })
        }
        Cmd::Levelset { cert, node, grid } => {
            let cert = load_cert(&cert)?;
            let grid = parse_grid(&grid)?;
            print!("{}", validate::levelset_csv(&cert, &node, &grid)?);
            Ok(EXIT_OK)
        }
    }
}
