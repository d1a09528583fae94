use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use semiq::config::{ExperimentConfig, Transport};
use semiq::experiments::{self as ex, RunOutput, SWEEP_DELTAS, SWEEP_EPSILONS};
use semiq::report::{write_games, write_report, write_transcript};
use semiq::testbed::Testbed;
use semiq_core::ftlift::ft_params;
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "semiq", version, about = "Monte Carlo experiments over simulated semi-quantum tokens")]
struct Cli {
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Transport::Inproc)]
    transport: Transport,
    /// Report path; game logs and transcripts go next to it as .csv and .jsonl.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Overrides on top of each experiment's defaults.
#[derive(Args, Clone, Default)]
struct Knobs {
    #[arg(long)]
    lambda: Option<u16>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    ell: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Single-token sign and verify under injected noise.
    TokCorrectness(#[command(flatten)] Knobs),
    /// Minimal odd repetition count for a target failure probability.
    FtCalibrate {
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// Print the full table over the standard grid instead.
        #[arg(long)]
        sweep: bool,
    },
    /// Monte Carlo FT signing against the exact tail.
    FtSign(#[command(flatten)] Knobs),
    /// Adversarial schedules trying to sign both bits.
    DoubleSign(#[command(flatten)] Knobs),
    /// One-time programs: honest use and second attempts.
    OtpRun(#[command(flatten)] Knobs),
    /// Sealed-payload splicing attacks.
    Splice(#[command(flatten)] Knobs),
    /// Accumulator chain, or chain failure rate when --p is given.
    RamRun {
        #[command(flatten)]
        knobs: Knobs,
        /// Per-evaluation failure probability to inject.
        #[arg(long)]
        p: Option<f64>,
    },
    /// Random programs against the reference interpreter.
    RamEquivalence(#[command(flatten)] Knobs),
    /// Token accounting of noisy fault-tolerant chains.
    RamOverhead(#[command(flatten)] Knobs),
    /// Honest one-time memory reads.
    OtmDemo(#[command(flatten)] Knobs),
    /// Scripted attacks on one-time memories.
    OtmAdversary(#[command(flatten)] Knobs),
    /// Honest and bricked copy-protected chains.
    CpChain(#[command(flatten)] Knobs),
    /// The pirate game with a built-in strategy.
    CpPirate {
        #[command(flatten)]
        knobs: Knobs,
        #[arg(long, default_value = "forward")]
        strategy: String,
    },
}

impl Knobs {
    fn apply(&self, mut c: ExperimentConfig) -> ExperimentConfig {
        c.lambda = self.lambda.unwrap_or(c.lambda);
        c.delta = self.delta.unwrap_or(c.delta);
        c.eps_target = self.eps.unwrap_or(c.eps_target);
        c.n = self.n.unwrap_or(c.n);
        c.ell = self.ell.unwrap_or(c.ell);
        c.trials = self.trials.unwrap_or(c.trials);
        c
    }
}

fn base(cli: &Cli) -> ExperimentConfig {
    ExperimentConfig {
        seed: cli.seed,
        transport: cli.transport,
        output_path: cli.output.clone(),
        ..ExperimentConfig::default()
    }
}

fn with(c: ExperimentConfig, f: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut c = c;
    f(&mut c);
    c
}

fn ft_calibrate(delta: f64, eps: f64, sweep: bool) -> Result<bool> {
    if !sweep {
        let p = ft_params(delta, eps)?;
        println!("w={} tail={:.6e}", p.w, p.tail());
        return Ok(p.tail() <= eps);
    }
    print!("{:>6}", "delta");
    for e in SWEEP_EPSILONS {
        print!(" {e:>8.0e}");
    }
    println!();
    let grid = ex::ft_grid()?;
    for (row, d) in grid.points.chunks(SWEEP_EPSILONS.len()).zip(SWEEP_DELTAS) {
        print!("{d:>6.2}");
        for p in row {
            print!(" {:>8}", p.w);
        }
        println!();
    }
    println!(
        "minimal={} monotone={} belowHoeffding={} fittedC={:.4}",
        grid.minimal, grid.monotone, grid.below_hoeffding, grid.fitted_c
    );
    Ok(grid.minimal && grid.monotone && grid.below_hoeffding)
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn emit(out: &RunOutput, path: Option<&Path>) -> Result<()> {
    for line in &out.summary {
        eprintln!("{line}");
    }
    let Some(path) = path else {
        return Ok(write_report(io::stdout().lock(), &out.report)?);
    };
    let open = |p: PathBuf| File::create(&p).map(BufWriter::new).with_context(|| format!("creating {}", p.display()));
    write_report(open(path.to_path_buf())?, &out.report)?;
    if !out.games.is_empty() {
        write_games(open(sibling(path, "csv"))?, &out.games)?;
    }
    if !out.transcript.entries.is_empty() {
        write_transcript(open(sibling(path, "jsonl"))?, &out.transcript)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let b = base(cli);
    let out = match &cli.command {
        Command::FtCalibrate { delta, eps, sweep } => return ft_calibrate(*delta, *eps, *sweep),
        Command::TokCorrectness(k) => ex::tok_correctness(&k.apply(b))?,
        Command::FtSign(k) => ex::ft_sign_rate(&k.apply(with(b, |c| c.trials = 100_000)))?,
        Command::DoubleSign(k) => ex::double_sign(&k.apply(b))?,
        Command::OtpRun(k) => {
            let c = k.apply(with(b, |c| c.trials = 1_000));
            ex::otp_run(&c, &Testbed::new(&c)?)?
        }
        Command::Splice(k) => {
            let c = k.apply(with(b, |c| {
                c.trials = 1_000;
                c.n = 4;
            }));
            ex::splice(&c, &Testbed::new(&c)?)?
        }
        Command::RamRun { knobs, p } => {
            let c = knobs.apply(with(b, |c| {
                c.lambda = 64;
                c.n = 4;
            }));
            match p {
                None => {
                    let c = with(c, |c| c.ell = knobs.ell.unwrap_or(100));
                    ex::ram_accumulator(&c, &Testbed::new(&c)?)?
                }
                Some(p) => {
                    let c = with(c, |c| c.eps_target = *p);
                    ex::ram_failure(&c, &Testbed::new(&c)?)?
                }
            }
        }
        Command::RamEquivalence(k) => {
            let c = k.apply(with(b, |c| {
                c.lambda = 64;
                c.ell = 100;
                c.trials = 50;
            }));
            ex::ram_equivalence(&c, &Testbed::new(&c)?)?
        }
        Command::RamOverhead(k) => {
            let c = k.apply(with(b, |c| {
                c.lambda = 64;
                c.delta = 0.4;
                c.eps_target = 0.1;
                c.n = 1;
                c.trials = 100;
            }));
            ex::ram_overhead(&c, &Testbed::new(&c)?)?
        }
        Command::OtmDemo(k) => {
            let c = k.apply(with(b, |c| {
                c.lambda = 64;
                c.delta = 0.4;
                c.eps_target = 0.01;
                c.trials = 1_000;
            }));
            ex::otm_demo(&c, &Testbed::new(&c)?)?
        }
        Command::OtmAdversary(k) => {
            let c = k.apply(with(b, |c| c.lambda = 64));
            ex::otm_adversary(&c, &Testbed::new(&c)?)?
        }
        Command::CpChain(k) => {
            let c = k.apply(with(b, |c| {
                c.lambda = 64;
                c.trials = 100;
            }));
            ex::cp_chain(&c, &Testbed::new(&c)?)?
        }
        Command::CpPirate { knobs, strategy } => {
            let c = knobs.apply(b);
            ex::cp_pirate(&c, &Testbed::new(&c)?, strategy)?
        }
    };
    emit(&out, cli.output.as_deref())?;
    Ok(out.report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
