use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fgwarp::data_io::{
    generate_synthetic, read_davis_layout, write_image, write_masks, write_sequences, ReadMode,
};
use fgwarp::eval::{evaluate, flow_colorize, masked_warped_frame, read_label_sequences, warp_diff};
use fgwarp::model::{load_checkpoint, save_checkpoint};
use fgwarp::training::{train, TrainState};
use fgwarp::warp::flo::{read_flo, write_flo};
use fgwarp::warp::warp_array;
use fgwarp::{Error, RunConfig};

#[derive(Parser)]
#[command(
    name = "fgwarp",
    version,
    about = "Mask propagation with foreground-targeted flow warping"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sequences in the DAVIS layout.
    Gen {
        /// Config file; only `synthetic.*` keys are used.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override a config key, e.g. `--set synthetic.num_sequences=40`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Train flow module and segmenter on a fully annotated DAVIS-layout dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory; also receives `train_log.jsonl`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Propagate first-frame masks through every sequence.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write `<dir>/<sequence>/<object>/NNNNN.flo` for every predicted step.
        #[arg(long)]
        dump_flows: Option<PathBuf>,
        /// Write flow, warp-difference and masked-warped-frame images.
        #[arg(long)]
        viz: Option<PathBuf>,
    },
    /// Score predicted label maps against ground truth (J, F, J&F).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Score the first frame too.
        #[arg(long)]
        include_first_frame: bool,
    },
    /// Color-code a `.flo` file.
    Viz {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Failure> {
    let mut run = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
        run.set(k.trim(), v.trim())?;
    }
    run.validate()?;
    Ok(run)
}

fn gen(spec: Option<&Path>, out: &Path, overrides: &[String]) -> Result<(), Failure> {
    let run = run_config(spec, overrides)?;
    let seqs = generate_synthetic(&run.synthetic)?;
    write_sequences(out, &seqs)?;
    eprintln!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(())
}

fn train_cmd(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    overrides: &[String],
) -> Result<(), Failure> {
    let run = run_config(config, overrides)?;
    let dataset = read_davis_layout(data, ReadMode::Full)?;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_failure(&log_path, e))?);
    let mut state = TrainState::new(&run)?;
    let start = Instant::now();
    let mut log_err = None;
    train(&mut state, &run.train, &dataset, |m, st| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err = Some(e);
        }
        eprintln!(
            "epoch {:>3}  total {:+.4}  mfl {:+.4}  vfl {:.5}  seg {:+.4}  seg {} flow {}  {:.0}s",
            m.epoch,
            m.total,
            m.mfl,
            m.vfl,
            m.seg,
            if m.seg_trainable { "on " } else { "off" },
            if m.flow_trainable { "on " } else { "off" },
            start.elapsed().as_secs_f64()
        );
        save_checkpoint(out, &run, &st.model)
    })?;
    if let Some(e) = log_err {
        return Err(io_failure(&log_path, e));
    }
    eprintln!("checkpoint written to {}", out.display());
    Ok(())
}

fn infer(
    ckpt: &Path,
    data: &Path,
    out: &Path,
    dump_flows: Option<&Path>,
    viz: Option<&Path>,
) -> Result<(), Failure> {
    let (_, model) = load_checkpoint(ckpt)?;
    let seqs = read_davis_layout(data, ReadMode::FirstFrameOnly)?;
    for seq in &seqs {
        let (h, w) = seq.dims()?;
        let prop = model.propagate(seq)?;
        write_masks(out, &seq.name, &prop.label_maps(&seq.object_ids)?, h, w)?;
        for (k, &id) in seq.object_ids.iter().enumerate() {
            let sub = |root: &Path| -> Result<PathBuf, Failure> {
                let d = root.join(&seq.name).join(id.to_string());
                fs::create_dir_all(&d).map_err(|e| io_failure(&d, e))?;
                Ok(d)
            };
            if let Some(root) = dump_flows {
                let d = sub(root)?;
                for (i, flow) in prop.flows[k].iter().enumerate() {
                    write_flo(&d.join(format!("{:05}.flo", i + 1)), flow)?;
                }
            }
            if let Some(root) = viz {
                let d = sub(root)?;
                for (i, flow) in prop.flows[k].iter().enumerate() {
                    let t = i + 1;
                    let prev_mask = &prop.masks[k][i];
                    let warped_mask = warp_array(prev_mask, flow)?;
                    let warped_frame = warp_array(&seq.frames[i], flow)?;
                    write_image(&d.join(format!("{t:05}_flow.png")), &flow_colorize(flow)?)?;
                    write_image(
                        &d.join(format!("{t:05}_diff.png")),
                        &warp_diff(prev_mask, &warped_mask)?,
                    )?;
                    write_image(
                        &d.join(format!("{t:05}_masked.png")),
                        &masked_warped_frame(&warped_frame, &warped_mask)?,
                    )?;
                }
            }
        }
    }
    eprintln!(
        "wrote predictions for {} sequences to {}",
        seqs.len(),
        out.display()
    );
    Ok(())
}

fn eval_cmd(
    pred: &Path,
    gt: &Path,
    report: &Path,
    include_first_frame: bool,
) -> Result<(), Failure> {
    let p = read_label_sequences(pred)?;
    let g = read_label_sequences(gt)?;
    let r = evaluate(&p, &g, !include_first_frame)?;
    if let Some(parent) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
    }
    fs::write(report, r.to_json()).map_err(|e| io_failure(report, e))?;
    println!(
        "J {:.4}  F {:.4}  J&F {:.4}",
        r.global.j, r.global.f, r.global.jf
    );
    Ok(())
}

fn viz_cmd(flow: &Path, out: &Path) -> Result<(), Failure> {
    write_image(out, &flow_colorize(&read_flo(flow)?)?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Gen {
            spec,
            out,
            overrides,
        } => gen(spec.as_deref(), out, overrides),
        Command::Train {
            config,
            data,
            out,
            overrides,
        } => train_cmd(config.as_deref(), data, out, overrides),
        Command::Infer {
            ckpt,
            data,
            out,
            dump_flows,
            viz,
        } => infer(ckpt, data, out, dump_flows.as_deref(), viz.as_deref()),
        Command::Eval {
            pred,
            gt,
            report,
            include_first_frame,
        } => eval_cmd(pred, gt, report, *include_first_frame),
        Command::Viz { flow, out } => viz_cmd(flow, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
