use std::path::PathBuf;
use std::process::ExitCode;

use cac_cli::commands::{self, AttackOptions, EvalOptions, PreviewOptions};
use cac_cli::{CliError, ExperimentConfig};
use cac_core::env::ViewpointRegime;
use cac_core::evaluation::BrightnessChoice;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cac", about = "Camouflage attacks against toy two-stage detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    Fv,
    Rv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Light {
    Any,
    Bright,
    Dark,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and train the declared detectors.
    Train {
        config: PathBuf,
        /// Train only this detector.
        #[arg(long)]
        model: Option<String>,
    },
    /// Optimize a camouflage texture against one detector.
    Attack {
        config: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        target_class: Option<String>,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Run directory name under `attacks/`.
        #[arg(long)]
        name: Option<String>,
    },
    /// Evaluate a texture on the target object.
    Eval {
        config: PathBuf,
        /// original, natural, naive, random, or a .raw/.png texture.
        #[arg(long, default_value = "original")]
        texture: String,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum, default_value = "fv")]
        regime: Regime,
        #[arg(long, value_enum)]
        brightness: Option<Light>,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Merge evaluation directories into one table with drop rates.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, env = "CAC_OUTPUT_DIR", default_value = "runs")]
        out: PathBuf,
    },
    /// Render the textured object (and optionally attention maps).
    RenderPreview {
        config: PathBuf,
        #[arg(long, default_value = "original")]
        texture: String,
        #[arg(long, default_value_t = 6)]
        views: usize,
        /// Adds Grad-CAM overlays from this detector.
        #[arg(long)]
        model: Option<String>,
        /// Class explained by the overlays.
        #[arg(long)]
        class: Option<String>,
        #[arg(long)]
        name: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, model } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_train(&cfg, model.as_deref())?;
        }
        Command::Attack {
            config,
            model,
            target_class,
            top_n,
            iterations,
            name,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_attack(
                &cfg,
                &AttackOptions {
                    model: model.as_deref(),
                    target_class: target_class.as_deref(),
                    top_n,
                    iterations,
                    name: name.as_deref(),
                },
            )?;
        }
        Command::Eval {
            config,
            texture,
            model,
            regime,
            brightness,
            views,
            name,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let viewpoint = match regime {
                Regime::Fv => ViewpointRegime::Free,
                Regime::Rv => ViewpointRegime::Restricted {
                    alpha_deg: cfg.evaluation.restricted_alpha_deg,
                },
            };
            let brightness = brightness.map(|b| match b {
                Light::Any => BrightnessChoice::Any,
                Light::Bright => BrightnessChoice::Bright,
                Light::Dark => BrightnessChoice::Dark,
                Light::Both => BrightnessChoice::Both,
            });
            commands::cmd_eval(
                &cfg,
                &EvalOptions {
                    texture: &texture,
                    model: model.as_deref(),
                    viewpoint,
                    brightness,
                    views,
                    name: name.as_deref(),
                },
            )?;
        }
        Command::Report { dirs, out } => {
            commands::cmd_report(&dirs, &out.join("report"))?;
        }
        Command::RenderPreview {
            config,
            texture,
            views,
            model,
            class,
            name,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_render_preview(
                &cfg,
                &PreviewOptions {
                    texture: &texture,
                    views,
                    model: model.as_deref(),
                    class: class.as_deref(),
                    name: name.as_deref(),
                },
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
