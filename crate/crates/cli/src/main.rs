use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dgns::metrics::{EmdConfig, MetricReport};
use dgns::pipeline::{
    evaluate, evaluation_times, export_mesh_sequence, generate_synthetic, load_dataset, render_eval, Model, Split, SyntheticSpec,
    TrainConfig, Trainer,
};
use dgns::{Error, Result};

#[derive(Parser)]
#[command(name = "dgns", version, about = "Dynamic scene reconstruction with Gaussian splats and a neural SDF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an analytic scene into a dataset directory.
    Generate {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        /// Resolution as WxH.
        #[arg(long, default_value = "128x128", value_parser = parse_res)]
        res: (usize, usize),
        #[arg(long)]
        out: PathBuf,
        /// Freeze the scene at its middle state.
        #[arg(long = "static")]
        still: bool,
        /// Every Nth frame goes to the test split.
        #[arg(long, default_value_t = 0)]
        holdout: usize,
        /// Marching-cubes resolution of the ground-truth meshes (0 skips them).
        #[arg(long, default_value_t = 256)]
        gt_res: usize,
    },
    /// Train both branches on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// TOML config; the built-in desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Schedule scale relative to the 40k-iteration schedule.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render dataset views from a checkpoint and score them.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// train, test or all.
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
    },
    /// Extract surface meshes at the given times.
    Mesh {
        #[arg(long)]
        ckpt: PathBuf,
        /// Comma-separated times in [0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        timesteps: Vec<f64>,
        #[arg(long, default_value_t = 128)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
        /// Dataset with ground-truth meshes for CD/EMD.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print a built-in config preset as TOML.
    Config {
        /// desk or full.
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Image and mesh metrics of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path; a CSV is written next to it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        /// Number of evaluation timesteps for meshes.
        #[arg(long, default_value_t = 6)]
        meshes: usize,
        #[arg(long, default_value_t = 128)]
        mesh_res: usize,
    },
}

fn parse_res(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let p = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| format!("bad size '{v}'"));
    Ok((p(w)?, p(h)?))
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            Self::Train => Some(Split::Train),
            Self::Test => Some(Split::Test),
            Self::All => None,
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            scene,
            frames,
            res,
            out,
            still,
            holdout,
            gt_res,
        } => {
            let spec = SyntheticSpec {
                scene,
                frames,
                width: res.0,
                height: res.1,
                motion: !still,
                holdout,
                gt_mesh_res: gt_res,
            };
            let ds = generate_synthetic(&spec, &out)?;
            println!("wrote {} frames to {}", ds.frames.len(), out.display());
        }
        Command::Train {
            data,
            config,
            out,
            scale,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::desk(),
            };
            if let Some(s) = scale {
                cfg.scale = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let ds = load_dataset(&data)?;
            let mut trainer = Trainer::new(ds, &cfg, Some(&out))?;
            let total = trainer.schedule().total;
            let records = trainer.run_with(|info| {
                let r = &info.record;
                if r.iteration % 100 == 0 || r.iteration == total {
                    log::info!("iter {}/{} loss {:.5} gaussians {} ({:.0} ms)", r.iteration, total, r.total, r.gaussians, r.ms);
                }
            })?;
            let last = records.last().map_or(f64::NAN, |r| r.total);
            println!("trained {total} iterations, final loss {last:.5}; checkpoint {}", out.join("model.ckpt").display());
        }
        Command::Render { ckpt, data, out, split } => {
            let (model, it) = Model::load(&ckpt)?;
            let ds = load_dataset(&data)?;
            let frames = render_eval(&model, it, &ds, split.split(), Some(&out))?;
            let report = MetricReport::new(&scene_name(&ds), frames, Vec::new(), EmdConfig::default().epsilon);
            report.write(&out)?;
            println!("rendered {} frames to {}", report.frames.len(), out.display());
        }
        Command::Mesh {
            ckpt,
            timesteps,
            res,
            out,
            data,
        } => {
            let (model, _) = Model::load(&ckpt)?;
            let ds = data.as_deref().map(load_dataset).transpose()?;
            let rows = export_mesh_sequence(&model, &timesteps, res, &out, ds.as_ref())?;
            let empty = rows.iter().filter(|r| r.faces == 0).count();
            if ds.is_some() {
                let name = ds.as_ref().map(scene_name).unwrap_or_default();
                MetricReport::new(&name, Vec::new(), rows.clone(), EmdConfig::default().epsilon).write(&out)?;
            }
            println!("wrote {} meshes to {} ({empty} empty)", rows.len() - empty, out.display());
        }
        Command::Config { preset } => {
            let cfg = match preset.as_str() {
                "desk" => TrainConfig::desk(),
                "full" => TrainConfig::default(),
                other => return Err(Error::Config(format!("unknown preset '{other}', expected desk or full"))),
            };
            print!("{}", cfg.to_toml());
        }
        Command::Eval {
            ckpt,
            data,
            report,
            split,
            meshes,
            mesh_res,
        } => {
            let (model, it) = Model::load(&ckpt)?;
            let ds = load_dataset(&data)?;
            let dir = report.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
            let work = dir.join("eval");
            let times = evaluation_times(&ds, meshes);
            let r = evaluate(&model, it, &ds, split.split(), &times, mesh_res, &work)?;
            std::fs::write(&report, serde_json::to_string_pretty(&r)?)?;
            std::fs::write(report.with_extension("csv"), r.to_csv())?;
            let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            println!(
                "psnr {} ssim {} cd {} emd {}",
                opt(r.mean_psnr),
                opt(r.mean_ssim),
                opt(r.mean_cd),
                opt(r.mean_emd)
            );
        }
    }
    Ok(())
}

fn scene_name(ds: &dgns::pipeline::Dataset) -> String {
    ds.scene.clone().unwrap_or_else(|| ds.root.display().to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}

/// `{"error": kind, "message": text}` on a single line.
fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
