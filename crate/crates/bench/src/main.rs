use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featrack_bench::run::{write_csv, DETECT_HEADER, TRACK_HEADER};
use featrack_bench::{
    load_sequence, run_detect, run_track, run_track_sweep, write_pan_sequence, InputError, PanSpec, RunConfig,
    RunReport, SweepAxis,
};

#[derive(Parser)]
#[command(name = "featrack-bench", version, about = "Time and check featrack on PGM image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect features on every frame.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        /// Check every emitted feature against the reference detector.
        #[arg(long)]
        oracle: bool,
        /// With --oracle, exit with status 2 if any false positive is found.
        #[arg(long)]
        strict: bool,
    },
    /// Run a full detect-and-track session.
    Track {
        #[command(flatten)]
        common: CommonArgs,
        /// Extra sessions varying target counts (25,50,100) or parameter
        /// modes (TRANSLATION,FULL).
        #[arg(long)]
        sweep: Option<SweepAxis>,
    },
    /// Write a synthetic panning sequence of PGM frames.
    Synth {
        /// Output directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 752)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        /// Camera motion in pixels per frame.
        #[arg(long, default_value_t = 1)]
        speed: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Per-frame gain oscillation amplitude.
        #[arg(long, default_value_t = 0.0)]
        gain_amplitude: f64,
        /// Per-frame offset oscillation amplitude, in intensity levels.
        #[arg(long, default_value_t = 0.0)]
        offset_amplitude: f64,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Directory of PGM frames, processed in file-name order.
    sequence: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature CSV path; the report is also written next to it as
    /// `<stem>.report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Pyramid levels searched for features, overriding the config.
    #[arg(long)]
    levels: Option<usize>,
}

enum Failure {
    Input(InputError),
    Conformance(u64),
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Self::Input(e)
    }
}

fn report_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().unwrap_or_default().to_string_lossy();
    csv.with_file_name(format!("{stem}.report.json"))
}

fn emit<T: serde::Serialize>(report: &RunReport, out: Option<&Path>, header: &[&str], rows: &[T]) -> Result<(), InputError> {
    let text = report.to_text() + "\n";
    if let Some(path) = out {
        let io = |source| InputError::Io {
            path: path.to_owned(),
            source,
        };
        write_csv(BufWriter::new(File::create(path).map_err(io)?), header, rows)?;
        let rp = report_path(path);
        std::fs::write(&rp, &text).map_err(|source| InputError::Io { path: rp, source })?;
    }
    // a closed pipe on stdout is not a failure of the run
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
    Ok(())
}

fn prepare(common: &CommonArgs) -> Result<(RunConfig, Vec<featrack_bench::Frame>), InputError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(l) = common.levels {
        cfg.levels = l;
        cfg.frontend()?;
    }
    let frames = load_sequence(&common.sequence)?;
    Ok((cfg, frames))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Detect { common, oracle, strict } => {
            let (cfg, frames) = prepare(&common)?;
            let (report, rows) = run_detect(&frames, &cfg, oracle)?;
            emit(&report, common.out.as_deref(), &DETECT_HEADER, &rows)?;
            match report.conformance {
                Some(c) if strict && c.false_positives > 0 => Err(Failure::Conformance(c.false_positives)),
                _ => Ok(()),
            }
        }
        Command::Track { common, sweep } => {
            let (cfg, frames) = prepare(&common)?;
            let (mut report, rows) = run_track(&frames, &cfg)?;
            if let Some(axis) = &sweep {
                report.sweep = run_track_sweep(&frames, &cfg, axis)?;
            }
            emit(&report, common.out.as_deref(), &TRACK_HEADER, &rows)?;
            Ok(())
        }
        Command::Synth {
            dir,
            frames,
            width,
            height,
            speed,
            seed,
            gain_amplitude,
            offset_amplitude,
        } => {
            let spec = PanSpec {
                frames,
                width,
                height,
                speed,
                seed,
                gain_amplitude,
                offset_amplitude,
            };
            let n = write_pan_sequence(&dir, &spec)?;
            eprintln!("wrote {n} frames to {}", dir.display());
            Ok(())
        }
    }
}

fn threads_of(command: &Command) -> Option<usize> {
    match command {
        Command::Detect { common, .. } | Command::Track { common, .. } => common.threads,
        Command::Synth { .. } => None,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are input errors; 2 is reserved for conformance
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_of(&cli.command) {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Conformance(n)) => {
            eprintln!("conformance failure: {n} emitted features are not reference corners");
            ExitCode::from(2)
        }
    }
}
