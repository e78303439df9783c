//! Command-line front end.
//!
//! Every subcommand prints tab-separated results on stdout. Failures print a
//! single JSON object `{"error": <kind>, "message": <text>}` on stderr and
//! exit with status 1 (2 for malformed command lines).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pamsr::config::TrainConfig;
use pamsr::data::pgm::write_pgm;
use pamsr::data::{load_pairs, read_split, split_dataset, synth_veins, write_sparse_dir, write_split, Pair};
use pamsr::interp::evaluate_baseline;
use pamsr::metrics::fmt_db;
use pamsr::pipeline::{compare_with_bicubic, evaluate_model, infer_dir, load_model_for_scale, se_ablation_table};
use pamsr::train::train;
use pamsr::Error;

#[derive(Parser)]
#[command(
    name = "pamsr",
    version,
    about = "Restore grid-sparse microscopy images to full resolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-sample every image of a directory (keep pixel (i·s, j·s)).
    Downsample {
        #[arg(long)]
        scale: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Write a seeded 80/10/10 split of `<root>/full` to `<root>/split.txt`.
    Split {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Train from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Restore every image of a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Directory of ground-truth images with matching names.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Compare a checkpoint with bicubic on the test split (all pairs without a split file).
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        scale: usize,
        /// Checkpoint of the same network trained without SE blocks.
        #[arg(long)]
        ablation_ckpt: Option<PathBuf>,
    },
    /// Bicubic PSNR/SSIM on the test split (all pairs without a split file).
    Baseline {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        scale: usize,
    },
    /// Generate synthetic vein images.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

fn json_escape(s: &str) -> String {
    serde_json::Value::String(s.to_string()).to_string()
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = format!(
        "{{\"error\":{},\"message\":{}}}",
        json_escape(kind),
        json_escape(&message.replace('\n', " "))
    );
    eprintln!("{line}");
    ExitCode::from(code)
}

/// Test pairs when `<root>/split.txt` exists, otherwise every pair.
fn evaluation_pairs(root: &Path, scale: usize) -> pamsr::Result<Vec<Pair>> {
    let pairs = load_pairs(root, scale)?;
    let split_path = root.join("split.txt");
    let pairs = if split_path.exists() {
        let split = read_split(&split_path)?;
        pairs.into_iter().filter(|p| split.test.contains(&p.id)).collect()
    } else {
        pairs
    };
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("no evaluation pairs under {}", root.display())));
    }
    Ok(pairs)
}

fn run(command: Command, out: &mut impl Write) -> pamsr::Result<()> {
    let io = |e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match command {
        Command::Downsample { scale, input, output } => {
            let n = write_sparse_dir(&input, &output, scale)?;
            writeln!(out, "downsampled\t{n}").map_err(io)?;
        }
        Command::Split { root, seed } => {
            let ids: Vec<String> = pamsr::data::pgm_files(&root.join("full"))?
                .iter()
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            let split = split_dataset(&ids, seed)?;
            write_split(&root.join("split.txt"), &split)?;
            writeln!(
                out,
                "train\t{}\nval\t{}\ntest\t{}",
                split.train.len(),
                split.validation.len(),
                split.test.len()
            )
            .map_err(io)?;
        }
        Command::Train { config, overrides } => {
            let cfg = TrainConfig::from_file(&config, &overrides)?;
            let outcome = train(&cfg)?;
            let last = outcome.history.last().map(|r| r.loss).unwrap_or(f32::NAN);
            writeln!(out, "steps\t{}", outcome.history.len()).map_err(io)?;
            writeln!(out, "final_loss\t{last}").map_err(io)?;
            match outcome.best_val_psnr {
                Some(p) => writeln!(out, "best_val_psnr\t{}", fmt_db(p)),
                None => writeln!(out, "best_val_psnr\tNA"),
            }
            .map_err(io)?;
            writeln!(out, "checkpoint\t{}", cfg.checkpoint_out.display()).map_err(io)?;
        }
        Command::Infer {
            ckpt,
            scale,
            input,
            output,
            reference,
        } => {
            let model = load_model_for_scale(&ckpt, scale)?;
            for r in infer_dir(&model, &input, &output, reference.as_deref())? {
                match r.score {
                    Some((p, s)) => writeln!(out, "{}\t{}\t{}\t{s:.6}", r.id, r.output.display(), fmt_db(p)),
                    None => writeln!(out, "{}\t{}", r.id, r.output.display()),
                }
                .map_err(io)?;
            }
        }
        Command::Evaluate {
            ckpt,
            root,
            scale,
            ablation_ckpt,
        } => {
            let model = load_model_for_scale(&ckpt, scale)?;
            let pairs = evaluation_pairs(&root, scale)?;
            let cmp = compare_with_bicubic(&model, &pairs)?;
            write!(out, "{}", cmp.to_tsv()).map_err(io)?;
            if let Some(path) = ablation_ckpt {
                let plain = load_model_for_scale(&path, scale)?;
                let without = evaluate_model(&plain, &pairs)?;
                writeln!(out).map_err(io)?;
                write!(out, "{}", se_ablation_table(&without, &cmp.model)).map_err(io)?;
            }
        }
        Command::Baseline { root, scale } => {
            let pairs = evaluation_pairs(&root, scale)?;
            write!(out, "{}", evaluate_baseline(&pairs, scale)?.to_tsv()).map_err(io)?;
        }
        Command::Synth {
            seed,
            count,
            size,
            output,
        } => {
            std::fs::create_dir_all(&output).map_err(|e| Error::Io {
                path: output.clone(),
                source: e,
            })?;
            for i in 0..count {
                let s = seed + i;
                let path = output.join(format!("vein_{s:05}.pgm"));
                write_pgm(&path, &synth_veins(s, size)?)?;
                writeln!(out, "{}", path.display()).map_err(io)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli.command, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
