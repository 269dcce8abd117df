use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stackelberg_ibr::analysis::{kappa, write_reports_csv};
use stackelberg_ibr::error::Result;
use stackelberg_ibr::experiment::{self, ExperimentConfig, OracleChoice, ResultBundle};
use stackelberg_ibr::game::{generate_instance, Conditioning};

#[derive(Parser)]
#[command(name = "stackelberg-ibr", version, about = "Leader descent with inexact follower best responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random quadratic game and write it as TOML.
    Generate {
        n: usize,
        m: usize,
        /// Instance seed (same as --seed).
        seed: Option<u64>,
        #[arg(long = "seed")]
        seed_flag: Option<u64>,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Diagonal shift added to every random block.
        #[arg(long, default_value_t = Conditioning::default().shift)]
        shift: f64,
        #[arg(long, default_value_t = Conditioning::default().scale)]
        scale: f64,
    },
    /// Sweep epsilon and seeds, writing a result bundle.
    Run(ExperimentArgs),
    /// Like `run`, skipping epsilons where the convergence condition fails.
    Tightness(ExperimentArgs),
    /// Print the theory constants for each epsilon.
    Analyze(ExperimentArgs),
    /// Flatten a result bundle into plotting tables.
    PlotData {
        bundle: PathBuf,
        /// Output directory; the bundle itself if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base oracle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds per epsilon.
    #[arg(long)]
    seeds: Option<usize>,
    /// Comma-separated epsilon list.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    oracle: Option<OracleChoice>,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.seeds {
            cfg.seeds_per_epsilon = v;
        }
        if let Some(v) = &self.eps {
            cfg.epsilons = v.clone();
        }
        if let Some(v) = self.alpha {
            cfg.solver.alpha = v;
        }
        if let Some(v) = self.delta {
            cfg.solver.delta = v;
        }
        if let Some(v) = self.iters {
            cfg.solver.iters = v;
        }
        if let Some(v) = self.oracle {
            cfg.oracle.kind = v;
        }
        Ok(cfg)
    }
}

fn report_bundle(bundle: &ResultBundle) {
    for note in &bundle.manifest.notes {
        eprintln!("note: {note}");
    }
    for agg in experiment::aggregate(&bundle.summary()) {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        println!(
            "eps={:<8} runs={:<3} f(x_T)-f*={:.6e} ||x_T-x*||={:.6e} bound={} gap={}",
            agg.epsilon,
            agg.runs,
            agg.mean_steady_state_error,
            agg.mean_err_x,
            fmt(agg.theorem_bound),
            fmt(agg.mean_gap)
        );
    }
    println!("wrote {}", bundle.dir.display());
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { n, m, seed, seed_flag, out, shift, scale } => {
            let seed = seed_flag.or(seed).unwrap_or(0);
            let cond = Conditioning { shift, scale, ..Conditioning::default() };
            let generated = generate_instance(n, m, seed, &cond)?;
            let game = generated.game;
            let text = game.to_toml()?;
            let c = game.smoothness_constants();
            let k = kappa(&game)?;
            let info = format!(
                "lambda_min(H_f) = {}\nL_f = {}\nkappa (tight) = {}\nkappa (certified) = {}\nrejections = {}",
                c.mu_f, c.l_f, k.tight, k.certified, generated.rejections
            );
            match out {
                Some(path) => {
                    std::fs::write(&path, text)?;
                    println!("{info}\nwrote {}", path.display());
                }
                None => {
                    print!("{text}");
                    eprintln!("{info}");
                }
            }
        }
        Command::Run(args) => report_bundle(&experiment::cmd_run(&args.config()?)?),
        Command::Tightness(args) => report_bundle(&experiment::cmd_tightness(&args.config()?)?),
        Command::Analyze(args) => {
            let cfg = args.config()?;
            cfg.validate()?;
            let game = cfg.game()?;
            let reports = experiment::cmd_analyze(&game, &cfg.plan(game.n())?, &cfg.epsilons)?;
            for (i, r) in reports.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                print!("{}", experiment::format_report(r));
            }
            if let Some(dir) = args.out {
                std::fs::create_dir_all(&dir)?;
                write_reports_csv(std::fs::File::create(dir.join(experiment::ANALYSIS_FILE))?, &reports)?;
            }
        }
        Command::PlotData { bundle, out } => {
            let out = out.unwrap_or_else(|| bundle.clone());
            experiment::write_plot_data(&bundle, &out)?;
            println!("wrote {} and {}", out.join(experiment::CONVERGENCE_FILE).display(), out.join(experiment::TIGHTNESS_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
