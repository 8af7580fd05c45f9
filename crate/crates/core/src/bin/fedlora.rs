//! Command-line front end: `synth`, `theory` and `fed`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedlora::experiments::{
    execute_run, execute_theory, synth_defaults, FlatConfig, RunConfig, RunSummary, TheoryStudy,
};
use fedlora::federation::Algorithm;
use fedlora::Result;

#[derive(Parser)]
#[command(name = "fedlora", version, about = "Deterministic federated LoRA fine-tuning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-client synthetic low-rank regression study.
    Synth {
        #[arg(long)]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory [default: runs/synth-<algorithm>-<seed>].
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Key-value file overriding the study defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Convergence harness on random quadratic bilevel problems.
    Theory {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Key-value file of study parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        instances: Option<usize>,
        /// Steps T per instance.
        #[arg(long)]
        steps: Option<usize>,
        /// Lower-level strong convexity μ.
        #[arg(long)]
        mu: Option<f64>,
        /// Smoothness L (must be >= μ).
        #[arg(long)]
        smoothness: Option<f64>,
        /// Remove the coupling between the levels.
        #[arg(long)]
        decoupled: bool,
    },
    /// Federated run described entirely by a configuration file.
    Fed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/fed")]
        out_dir: PathBuf,
    },
}

fn report(summary: &RunSummary) {
    println!("metrics: {}", summary.metrics_path.display());
    for r in &summary.final_records {
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        println!(
            "client {}: step {} train {:.6} test {:.6} eff_rank {} rank_k {}",
            r.client_id,
            r.step,
            r.train_loss,
            r.test_loss,
            opt(r.eff_rank),
            opt(r.current_rank_k)
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            algorithm,
            seed,
            out_dir,
            config,
        } => {
            let mut cfg = synth_defaults(algorithm, seed);
            if let Some(path) = config {
                cfg.apply(&FlatConfig::load(path, &[])?)?;
            }
            let out = out_dir.unwrap_or_else(|| PathBuf::from(format!("runs/synth-{algorithm}-{seed}")));
            report(&execute_run("synth", &cfg, out, None)?);
        }
        Command::Theory {
            seed,
            out_dir,
            config,
            instances,
            steps,
            mu,
            smoothness,
            decoupled,
        } => {
            let mut study = match config {
                Some(path) => TheoryStudy::load(path)?,
                None => TheoryStudy::default(),
            };
            study.seed = seed.unwrap_or(study.seed);
            study.instances = instances.unwrap_or(study.instances);
            study.steps = steps.unwrap_or(study.steps);
            study.mu = mu.or(study.mu);
            study.smoothness = smoothness.or(study.smoothness);
            study.decoupled |= decoupled;
            let out = out_dir.unwrap_or_else(|| PathBuf::from(format!("runs/theory-{}", study.seed)));
            let summary = execute_theory(&study, &out)?;
            for s in &summary.instances {
                let ratio = s.decay_ratio.map_or("-".to_string(), |r| format!("{r:.4}"));
                println!(
                    "instance {}: mu {:.3} L {:.3} eta {:.3e} decay_ratio {ratio} violations {}/{}",
                    s.instance, s.mu, s.smoothness, s.eta, s.contraction_violations, s.bias_violations
                );
            }
            let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
            println!("decay ratio: {}", verdict(summary.decay_pass));
            println!("lemma bounds: {}", verdict(summary.lemma_pass));
            println!("output: {}", out.display());
        }
        Command::Fed {
            config,
            algorithm,
            seed,
            out_dir,
        } => {
            let mut cfg = RunConfig::load(config)?;
            cfg.apply(&FlatConfig {
                algorithm,
                seed,
                ..FlatConfig::default()
            })?;
            report(&execute_run("fed", &cfg, out_dir, None)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
