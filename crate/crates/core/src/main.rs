use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use see360::inference::{encode_png, plan_render, LoadedModel};
use see360::scene::{build_scene, emit_dataset, grid_locations, DatasetManifest};
use see360::service::{serve, ServiceState};
use see360::trainer::{evaluate, sweep_tau, train, write_sweep_csv, TrainConfig};
use see360::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "see360", version, about = "Panoramic view interpolation between two reference views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural scene from several capture locations.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Billboards per 60° sector.
        #[arg(long, default_value_t = 3)]
        complexity: usize,
        /// Number of training locations.
        #[arg(long, default_value_t = 4)]
        locations: usize,
        /// Yaw step in whole degrees.
        #[arg(long, default_value_t = 5)]
        step: u32,
        /// WIDTHxHEIGHT.
        #[arg(long, default_value = "64x48", value_parser = parse_size)]
        size: (usize, usize),
        /// Also capture a held-out location at the origin.
        #[arg(long)]
        holdout: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a TOML config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Predict one view and write it as PNG.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        loc: usize,
        #[arg(long, allow_hyphen_values = true)]
        yaw: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score held-out views; writes eval.csv and eval.json.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Mean PSNR for several reference spacings; writes sweep_tau.csv.
    SweepTau {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "60,90,120")]
        taus: Vec<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 8360)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got `{s}`"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
    Ok((w, h))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            seed,
            complexity,
            locations,
            step,
            size: (width, height),
            holdout,
            out,
        } => {
            let scene = build_scene(seed, complexity)?;
            let m = emit_dataset(&scene, &grid_locations(locations, holdout), step, height, width, &out)?;
            println!("wrote {} views to {}", m.records.len(), out.display());
        }
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let outcome = train(&cfg)?;
            let last = outcome.curve.last();
            println!(
                "trained {} iterations; final loss_g {}; outputs in {}",
                outcome.checkpoint.iteration,
                last.map_or(f64::NAN, |l| l.loss_g),
                cfg.out_dir.display()
            );
        }
        Command::Render {
            ckpt,
            dataset,
            loc,
            yaw,
            out,
        } => {
            let model = LoadedModel::load(&ckpt)?;
            let m = DatasetManifest::load(&dataset)?;
            let plan = plan_render(model.config.tau_deg, model.config.delta, yaw, None)?;
            let view = |y: f64| -> Result<Tensor<f32>> {
                m.load_rgb(loc, y.round() as u32 % 360)?.reshape(&[1, 3, m.height, m.width])
            };
            let gt = m
                .view(loc, plan.snapped_yaw.round() as u32 % 360)
                .map(|_| view(plan.snapped_yaw))
                .transpose()?;
            let image = model.predict(
                &view(plan.left_yaw)?,
                &view(plan.right_yaw)?,
                std::slice::from_ref(&plan.code),
                gt.as_ref(),
            )?;
            std::fs::write(&out, encode_png(&image)?).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            println!(
                "yaw {} snapped to {} between references {} and {}",
                plan.requested_yaw, plan.snapped_yaw, plan.left_yaw, plan.right_yaw
            );
        }
        Command::Eval {
            ckpt,
            dataset,
            tau,
            out,
        } => {
            let model = LoadedModel::load(&ckpt)?;
            let m = DatasetManifest::load(&dataset)?;
            let report = evaluate(&model, &m, tau.unwrap_or(model.config.tau_deg))?;
            report.write(&out, "eval")?;
            println!(
                "{} views: mean PSNR {:.3} dB (baseline {:.3}), mean SSIM {:.4} (baseline {:.4})",
                report.rows.len(),
                report.mean_psnr,
                report.mean_baseline_psnr,
                report.mean_ssim,
                report.mean_baseline_ssim
            );
        }
        Command::SweepTau {
            ckpt,
            dataset,
            taus,
            out,
        } => {
            let model = LoadedModel::load(&ckpt)?;
            let m = DatasetManifest::load(&dataset)?;
            let rows = sweep_tau(&model, &m, &taus)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write_sweep_csv(&rows, &out.join("sweep_tau.csv"))?;
            for r in &rows {
                println!("tau {:>5}: mean PSNR {:.3} dB over {} views", r.tau_deg, r.mean_psnr, r.rows);
            }
        }
        Command::Serve {
            ckpt,
            dataset,
            port,
            host,
        } => {
            let state = ServiceState::load(&ckpt, &dataset)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
                path: PathBuf::from("tokio runtime"),
                source: e,
            })?;
            rt.block_on(serve(state, SocketAddr::new(host, port)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
