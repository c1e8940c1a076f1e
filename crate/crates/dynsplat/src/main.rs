use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynsplat::config::{RunConfig, SeedMasks};
use dynsplat::pipeline::{self, RunDir, StageRecord, BASELINE};
use dynsplat::protocol::serve_request;
use dynsplat::{Result, RunError};
use dynsplat_core::optimize::RefineFlags;
use serde_json::json;

/// Dynamic Gaussian-splat reconstruction with pseudo-multi-view refinement.
///
/// Exit codes: 0 ok, 2 config, 3 data, 4 numeric failure, 5 enhancer protocol.
#[derive(Parser)]
#[command(name = "dynsplat", version)]
struct Cli {
    /// Run directory; every relative path is resolved against it.
    #[arg(long, global = true, default_value = ".")]
    run_dir: PathBuf,
    /// TOML config (default: <run-dir>/config.toml when present, else built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone, Copy)]
struct RefineArgs {
    /// Supervise pseudo views on the whole image instead of their dynamic masks.
    #[arg(long)]
    no_dr: bool,
    /// Skip pass 1 (sampled-pose optimization).
    #[arg(long)]
    no_so: bool,
}

impl RefineArgs {
    fn flags(self) -> RefineFlags {
        RefineFlags { use_dr: !self.no_dr, use_so: !self.no_so }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset.
    Synth,
    /// Phase-1 baseline training.
    Train {
        /// Static/dynamic partition used for seeding.
        #[arg(long, value_enum)]
        seed_masks: Option<SeedMasks>,
        /// Continue from the latest baseline checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Sample the new training cameras.
    SampleCams,
    /// Build the pseudo multi-view dataset in one batch.
    BuildPseudo {
        /// External enhancer command (the request directory is appended as last argument).
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        external_cmd: Option<Vec<String>>,
    },
    /// Diffusion-aware refinement from the baseline checkpoint.
    Refine {
        #[command(flatten)]
        ablation: RefineArgs,
        /// Continue from the latest checkpoint of this variant.
        #[arg(long)]
        resume: bool,
    },
    /// Render held-out views of a model and write the metric reports.
    Eval {
        /// baseline, full, no-so, no-dr or naive (default: full if refined, else baseline).
        #[arg(long)]
        model: Option<String>,
    },
    /// All stages in sequence.
    FullRun {
        #[command(flatten)]
        ablation: RefineArgs,
        #[arg(long, value_enum)]
        seed_masks: Option<SeedMasks>,
    },
    /// Identity-copy responder for the enhancer exchange protocol.
    IdentityResponder {
        /// Request directory.
        request_dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(p) => RunConfig::load(p),
        None => {
            let p = cli.run_dir.join("config.toml");
            if p.is_file() {
                RunConfig::load(&p)
            } else {
                Ok(RunConfig::default())
            }
        }
    }
}

fn rel(run: &RunDir, p: &Path) -> String {
    p.strip_prefix(&run.root).unwrap_or(p).display().to_string()
}

fn run(cli: Cli) -> Result<()> {
    if let Cmd::IdentityResponder { request_dir } = &cli.command {
        serve_request(request_dir, &mut |img, _| Ok(img.clone()))?;
        return Ok(());
    }
    let mut cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.run_dir).map_err(|e| RunError::io(&cli.run_dir, e))?;
    let run = RunDir::new(&cli.run_dir);
    let (command, flags, outputs) = match cli.command {
        Cmd::Synth => {
            let dir = pipeline::synth(&run, &cfg)?;
            ("synth", json!({}), vec![rel(&run, &dir)])
        }
        Cmd::Train { seed_masks, resume } => {
            if let Some(m) = seed_masks {
                cfg.init.seed_masks = m;
            }
            pipeline::train(&run, &cfg, cfg.init.seed_masks, resume)?;
            ("train", json!({ "seed_masks": cfg.init.seed_masks, "resume": resume }), vec![rel(&run, &run.checkpoint(BASELINE))])
        }
        Cmd::SampleCams => {
            let sc = pipeline::sample_cams(&run, &cfg)?;
            println!("{} cameras ({} per timestep), extremes {:?}", sc.trajectory.len(), sc.per_timestep, sc.extremes);
            ("sample-cams", json!({}), vec![rel(&run, &run.sampled())])
        }
        Cmd::BuildPseudo { external_cmd } => {
            if let Some(c) = &external_cmd {
                cfg.enhancer.mode = dynsplat_core::enhance::EnhancerMode::External;
                cfg.external.command = c.clone();
            }
            let n = pipeline::build_pseudo(&run, &cfg, external_cmd.clone())?;
            println!("{n} pseudo views");
            ("build-pseudo", json!({ "external_cmd": external_cmd }), vec![rel(&run, &run.pseudo())])
        }
        Cmd::Refine { ablation, resume } => {
            let flags = ablation.flags();
            pipeline::refine(&run, &cfg, flags, resume)?;
            let model = pipeline::variant_name(flags);
            ("refine", json!({ "use_dr": flags.use_dr, "use_so": flags.use_so, "model": model, "resume": resume }), vec![
                rel(&run, &run.checkpoint(model)),
            ])
        }
        Cmd::Eval { model } => {
            let model = model.unwrap_or_else(|| {
                if run.checkpoint("full").is_file() { "full".into() } else { BASELINE.into() }
            });
            let report = pipeline::eval(&run, &cfg, &model)?;
            print!("{}", pipeline::report_table(&model, &report));
            ("eval", json!({ "model": model }), vec![rel(&run, &run.eval(&model))])
        }
        Cmd::FullRun { ablation, seed_masks } => {
            if let Some(m) = seed_masks {
                cfg.init.seed_masks = m;
            }
            let flags = ablation.flags();
            let (base, refined) = pipeline::full_run(&run, &cfg, flags, cfg.init.seed_masks)?;
            let model = pipeline::variant_name(flags);
            print!("{}", pipeline::report_table(BASELINE, &base));
            print!("{}", pipeline::report_table(model, &refined));
            let outputs = vec![rel(&run, &run.eval(BASELINE)), rel(&run, &run.eval(model))];
            ("full-run", json!({ "use_dr": flags.use_dr, "use_so": flags.use_so, "seed_masks": cfg.init.seed_masks }), outputs)
        }
        Cmd::IdentityResponder { .. } => unreachable!(),
    };
    pipeline::record_stage(&run, StageRecord { command: command.into(), flags, config: cfg, outputs })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
