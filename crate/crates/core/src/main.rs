use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use makima_core::pipeline::{
    emit_artifacts, load_manifest, run_edit, Component, EditConfig, Profile,
};
use makima_core::propagation::SigmaMode;
use makima_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "makima",
    version,
    about = "Multi-attribute video editing on a toy diffusion backbone"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Invert the source frames and denoise them under the target prompt.
    Edit {
        #[arg(long)]
        config: PathBuf,
        /// Write per-step attention scores under `attn/`.
        #[arg(long)]
        dump_attn: bool,
        #[arg(long)]
        profile: Option<Profile>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sigma: Option<SigmaMode>,
        /// May be repeated.
        #[arg(long, value_name = "modulation|injection|propagation")]
        disable: Vec<Component>,
    },
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MAKIMA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "MAKIMA_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Edit {
            config,
            dump_attn,
            profile,
            seed,
            sigma,
            disable,
        } => {
            let mut cfg = EditConfig::load(&config)?;
            cfg.dump_attention |= dump_attn;
            if let Some(p) = profile {
                cfg.profile = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(s) = sigma {
                cfg.sigma = s;
            }
            cfg.disable.extend(disable);
            cfg.validate()?;
            let inputs = load_manifest(&cfg.manifest, cfg.frames.as_deref(), cfg.max_frames)?;
            let outcome = run_edit(&cfg, &inputs)?;
            for path in emit_artifacts(&outcome, &cfg.output_dir)? {
                log::info!("wrote {}", path.display());
            }
            let m = &outcome.report.metrics;
            println!(
                "clip_t_like={:.6} clip_f_like={:.6} frame_acc_like={:.3} runtime_seconds={:.2}",
                m.clip_t_like, m.clip_f_like, m.frame_acc_like, outcome.report.runtime_seconds
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
