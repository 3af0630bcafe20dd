//! Command-line surface. Exit codes: 0 success, 1 usage or configuration
//! error, 2 pipeline error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::pipeline::{self, out_dir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PIPELINE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "meshrecon", version, about = "Template-deformation mesh reconstruction from voxel volumes")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set fit.convergence_tol=1e-5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic intensity volume and its mask.
    Synth {
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract the pseudo-gold surface of a mask.
    Extract {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the template to a target surface.
    Fit {
        /// Mask volume; defines the grid and, without --target, the target.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy network on synthetic cases.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlap and surface-distance metrics for a predicted mesh.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a mesh for topological and geometric defects.
    Validate {
        #[arg(long)]
        mesh: PathBuf,
        /// Reference surface for deviation fractions.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Volume used to convert normalized meshes to mm.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a binary STL in mm with the material sidecar.
    Export {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Refuse meshes that fail the audit.
        #[arg(long)]
        cfd: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut sets = cli.set.clone();
    if let Some(s) = cli.seed {
        sets.push(format!("seed={s}"));
    }
    match &cli.command {
        Command::Synth { dims: Some(d), .. } => sets.push(format!("synth.dims={d}")),
        Command::Train { epochs: Some(e), .. } => sets.push(format!("train.epochs={e}")),
        Command::Fit { template: Some(t), .. } => sets.push(format!("paths.template={:?}", t.display().to_string())),
        _ => {}
    }
    base.with_overrides(&sets)
}

fn execute(cfg: &RunConfig, command: Command) -> Result<Vec<String>> {
    let wrote = |m: crate::io::RunManifest, dir: &std::path::Path| {
        m.outputs.iter().map(|f| format!("wrote {}", dir.join(&f.path).display())).collect::<Vec<_>>()
    };
    Ok(match command {
        Command::Synth { out, .. } => {
            let dir = out_dir(cfg, out);
            wrote(pipeline::synth(cfg, &dir)?, &dir)
        }
        Command::Extract { mask, out } => {
            let dir = out_dir(cfg, out);
            wrote(pipeline::extract(cfg, &mask, &dir)?, &dir)
        }
        Command::Fit { mask, target, out, .. } => {
            let dir = out_dir(cfg, out);
            wrote(pipeline::fit(cfg, &mask, target.as_deref(), &dir)?, &dir)
        }
        Command::Train { out, .. } => {
            let dir = out_dir(cfg, out);
            let (m, dice) = pipeline::train(cfg, &dir)?;
            let mut lines = wrote(m, &dir);
            lines.push(format!("held-out dice {dice:.4}"));
            lines
        }
        Command::Eval { pred, mask, gold, case, out } => {
            let dir = out_dir(cfg, out);
            wrote(pipeline::eval(cfg, &pred, &mask, gold.as_deref(), case.as_deref(), &dir)?, &dir)
        }
        Command::Validate { mesh, reference, mask, out } => {
            let dir = out_dir(cfg, out);
            let (m, report) = pipeline::validate(cfg, &mesh, reference.as_deref(), mask.as_deref(), &dir)?;
            let mut lines = vec![report.summary()];
            lines.extend(wrote(m, &dir));
            lines
        }
        Command::Export { mesh, mask, cfd, out } => {
            let dir = out_dir(cfg, out);
            wrote(pipeline::export(cfg, &mesh, mask.as_deref(), cfd, &dir)?, &dir)
        }
    })
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match execute(&cfg, cli.command) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::ExportRefused(_) = e {
                eprintln!("the mesh was not written; run `validate` for the full report");
            }
            EXIT_PIPELINE
        }
    }
}
