use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use smoothalign::config::RunConfig;
use smoothalign::dataset::{build_dataset, load_dataset, save_dataset, Split};
use smoothalign::dtw::{accumulate, align, hard_path, inference_cost};
use smoothalign::error::{Error, Result};
use smoothalign::eval::{evaluate_split, kendalls_tau};
use smoothalign::io;
use smoothalign::loss::loss_terms;
use smoothalign::sequence::{l2_normalize, FeatureSequence};
use smoothalign::smoothmin::{smooth_min_penalty, OperatorKind};
use smoothalign::train::{initial_checkpoint, train_from, Checkpoint};
use smoothalign::{contrastive_cost, random_gradient_check};

const CONFIG_ARCHIVE: &str = "run_config.toml";

#[derive(Parser)]
#[command(name = "smoothalign", version, about = "Differentiable sequence alignment")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the dataset directory for `gen`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen,
    /// Train an embedding model on a generated dataset.
    Train {
        /// Continue from this checkpoint instead of `resume` in the configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Align two sequence files.
    Align {
        /// Embed both sequences with this model first; raw features are aligned otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        a: PathBuf,
        b: PathBuf,
        /// Also write the cost and accumulated-cost matrices as CSV.
        #[arg(long)]
        emit_cost: bool,
    },
    /// Score held-out pairs of a dataset.
    Eval {
        #[arg(long, conflicts_with = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Score the noise-free latent states instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Compare analytic gradients with central differences on random inputs.
    CheckGrad,
    /// Write smoothness-penalty curves for both relaxed operators as CSV.
    PlotPenalty {
        #[arg(long, default_value_t = 6.0)]
        max_delta: f64,
        #[arg(long, default_value_t = 301)]
        samples: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericFailure { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let out = cli.common.out.clone();
    match cli.command {
        Command::Gen => {
            if let Some(o) = out {
                cfg.dataset_dir = o;
            }
            cmd_gen(&cfg)
        }
        Command::Train { resume } => {
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if resume.is_some() {
                cfg.resume = resume;
            }
            cmd_train(&cfg)
        }
        Command::Align {
            checkpoint,
            a,
            b,
            emit_cost,
        } => {
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cmd_align(&cfg, checkpoint.as_deref(), &a, &b, emit_cost)
        }
        Command::Eval { checkpoint, oracle } => {
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cmd_eval(&cfg, checkpoint.as_deref(), oracle)
        }
        Command::CheckGrad => cmd_check_grad(&cfg),
        Command::PlotPenalty { max_delta, samples } => {
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            cmd_plot_penalty(&cfg, max_delta, samples)
        }
    }
}

fn archive_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    io::write_string(&dir.join(CONFIG_ARCHIVE), &cfg.to_toml())
}

fn to_json(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn cmd_gen(cfg: &RunConfig) -> Result<u8> {
    cfg.validate()?;
    let ds = build_dataset(&cfg.dataset(), cfg.seed)?;
    save_dataset(&ds, &cfg.dataset_dir)?;
    archive_config(cfg, &cfg.dataset_dir)?;
    println!(
        "wrote {} sequences from {} processes to {}",
        ds.sequences.len(),
        ds.processes.len(),
        cfg.dataset_dir.display()
    );
    Ok(0)
}

fn cmd_train(cfg: &RunConfig) -> Result<u8> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset_dir)?;
    let (loss, training) = (cfg.loss(), cfg.training());
    let split = Split::last_per_process(&ds, training.holdout_per_process);
    smoothalign::train::check_trainable(&ds, &split, &loss, &training)?;
    let start = match &cfg.resume {
        Some(p) => {
            let mut ck = Checkpoint::load(p)?;
            let mut expected = training.clone();
            expected.steps = ck.training.steps;
            if ck.loss != loss || ck.training != expected {
                return Err(Error::Config(format!(
                    "{} was trained with a different configuration",
                    p.display()
                )));
            }
            if ck.step > training.steps {
                return Err(Error::Config(format!(
                    "checkpoint is already at step {}, beyond steps = {}",
                    ck.step, training.steps
                )));
            }
            ck.training.steps = training.steps;
            ck
        }
        None => initial_checkpoint(&ds, &loss, &training)?,
    };
    let total = training.steps;
    let every = (total / 20).max(1);
    let ck = train_from(&ds, &split, start, |step, value| {
        if (step + 1) % every == 0 || step + 1 == total {
            eprintln!("step {:>6}/{total}  loss {value:.6}", step + 1);
        }
    })?;

    io::create_dir_all(&cfg.out_dir)?;
    ck.save(&cfg.out_dir.join("checkpoint.json"))?;
    let mut trace = String::from("step,loss\n");
    for (i, v) in ck.loss_trace.iter().enumerate() {
        trace.push_str(&format!("{i},{}\n", io::fmt_f64(*v)));
    }
    io::write_string(&cfg.out_dir.join("loss_trace.csv"), &trace)?;
    archive_config(cfg, &cfg.out_dir)?;
    println!("trained {} steps; outputs in {}", ck.step, cfg.out_dir.display());
    Ok(0)
}

fn embed_or_normalize(model: Option<&Checkpoint>, s: &FeatureSequence) -> Result<FeatureSequence> {
    match model {
        Some(ck) => ck.model.embed(s),
        None => l2_normalize(s),
    }
}

fn cmd_align(cfg: &RunConfig, checkpoint: Option<&Path>, a: &Path, b: &Path, emit_cost: bool) -> Result<u8> {
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    let loss = ck.as_ref().map(|c| c.loss).unwrap_or_else(|| cfg.loss());
    loss.validate()?;
    let (sa, sb) = (io::read_sequence(a)?, io::read_sequence(b)?);
    let x = embed_or_normalize(ck.as_ref(), &sa)?;
    let y = embed_or_normalize(ck.as_ref(), &sb)?;

    let terms = loss_terms(&x, &y, &loss)?;
    let path = align(&x, &y, loss.beta)?;
    path.validate(x.len(), y.len())?;
    let tau = if x.len() >= 2 && y.len() >= 2 {
        Some(kendalls_tau(&x, &y)?)
    } else {
        None
    };
    let report = json!({
        "a": a,
        "b": b,
        "lengths": [x.len(), y.len()],
        "loss": loss,
        "path": path.steps,
        "align_xy": terms.align_xy,
        "align_yx": terms.align_yx,
        "gcc": terms.gcc,
        "total": terms.total,
        "kendalls_tau": tau,
    });
    io::create_dir_all(&cfg.out_dir)?;
    io::write_string(&cfg.out_dir.join("alignment.json"), &to_json(&report))?;
    if emit_cost {
        let sm = loss.smooth_min();
        let c_xy = contrastive_cost(&x, &y, loss.beta)?;
        let r_xy = accumulate(&c_xy, sm)?;
        let c_inf = inference_cost(&x, &y, loss.beta)?;
        let r_hard = accumulate(&c_inf, smoothalign::SmoothMinConfig::hard())?;
        debug_assert_eq!(hard_path(&c_inf)?, path);
        io::write_string(&cfg.out_dir.join("cost_xy.csv"), &io::matrix_to_csv(&c_xy.values))?;
        io::write_string(&cfg.out_dir.join("accumulated_xy.csv"), &io::matrix_to_csv(&r_xy.values))?;
        io::write_string(
            &cfg.out_dir.join("accumulated_inference.csv"),
            &io::matrix_to_csv(&r_hard.values),
        )?;
    }
    archive_config(cfg, &cfg.out_dir)?;
    println!(
        "path of {} steps; align_xy {:.6}, align_yx {:.6}, gcc {:.6}",
        path.len(),
        terms.align_xy,
        terms.align_yx,
        terms.gcc
    );
    Ok(0)
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, oracle: bool) -> Result<u8> {
    let ds = load_dataset(&cfg.dataset_dir)?;
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    let holdout = ck
        .as_ref()
        .map(|c| c.training.holdout_per_process)
        .unwrap_or(cfg.holdout_per_process);
    let beta = ck.as_ref().map(|c| c.loss.beta).unwrap_or(cfg.beta);
    let split = Split::last_per_process(&ds, holdout);
    let report = match (&ck, oracle) {
        (_, true) => evaluate_split(&ds, &split, beta, |i| ds.oracle_embedding(i))?,
        (Some(c), false) => evaluate_split(&ds, &split, beta, |i| c.model.embed(&ds.sequences[i].data))?,
        (None, false) => evaluate_split(&ds, &split, beta, |i| l2_normalize(&ds.sequences[i].data))?,
    };
    io::create_dir_all(&cfg.out_dir)?;
    io::write_string(&cfg.out_dir.join("eval_report.json"), &report.to_json())?;
    archive_config(cfg, &cfg.out_dir)?;
    println!(
        "{} pairs: kendalls_tau {:.4}, alignment_error {:.4}, phase_accuracy {:.4}",
        report.pairs.len(),
        report.kendalls_tau,
        report.mean_alignment_error,
        report.phase_accuracy
    );
    Ok(0)
}

fn cmd_check_grad(cfg: &RunConfig) -> Result<u8> {
    cfg.validate()?;
    let loss = cfg.loss();
    if loss.gamma == 0.0 || loss.kind == OperatorKind::HardMin {
        return Err(Error::Config(
            "gradient check needs gamma > 0 and a relaxed operator; the hard minimum has no gradient".into(),
        ));
    }
    let s = random_gradient_check(
        &loss,
        cfg.grad_trials,
        cfg.grad_max_len,
        cfg.grad_max_dim,
        cfg.grad_step,
        cfg.seed,
    )?;
    let pass = s.worst_relative_error < cfg.grad_threshold;
    println!(
        "{}: worst relative error {:.3e} over {} trials (m, n, d = {:?}); threshold {:.1e}",
        if pass { "PASS" } else { "FAIL" },
        s.worst_relative_error,
        s.trials,
        s.worst_shape,
        cfg.grad_threshold
    );
    Ok(if pass { 0 } else { 2 })
}

fn cmd_plot_penalty(cfg: &RunConfig, max_delta: f64, samples: usize) -> Result<u8> {
    if samples < 2 || !(max_delta > 0.0) {
        return Err(Error::Config("need samples >= 2 and max_delta > 0".into()));
    }
    let mut csv = String::from("delta,smooth_min_tie,smooth_min_far,min_gamma_tie,min_gamma_far\n");
    for k in 0..samples {
        let d = max_delta * k as f64 / (samples - 1) as f64;
        let tie = [0.0, d, d];
        let far = [0.0, d];
        let row = [
            smooth_min_penalty(&tie, 1.0, OperatorKind::SmoothMin)?,
            smooth_min_penalty(&far, 1.0, OperatorKind::SmoothMin)?,
            smooth_min_penalty(&tie, 1.0, OperatorKind::MinGamma)?,
            smooth_min_penalty(&far, 1.0, OperatorKind::MinGamma)?,
        ];
        let cells: Vec<String> = std::iter::once(d).chain(row).map(io::fmt_f64).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    io::create_dir_all(&cfg.out_dir)?;
    io::write_string(&cfg.out_dir.join("penalty_curves.csv"), &csv)?;
    println!("wrote {}", cfg.out_dir.join("penalty_curves.csv").display());
    Ok(0)
}
