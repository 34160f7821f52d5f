//! The `resfu` command-line tool.
//!
//! Exit codes: 0 success, 1 failed check, 2 I/O or parse error, 3 shape or
//! ratio mismatch. The worker thread count follows `RAYON_NUM_THREADS`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

use crate::bench::{run_bench, BenchConfig};
use crate::bundle::{deserialize_params, serialize_params};
use crate::error::Error;
use crate::guided_filter::GuidedFilterConfig;
use crate::ops::{bilinear_resize, nearest_resize};
use crate::selfcheck::run_selfcheck;
use crate::tensor::FeatureMap;
use crate::upsampler::{
    generate_params, inner_product_upsample, resfu_upsample_traced, ResfuParams, UpsampleConfig, DEFAULT_KERNEL,
};
use crate::visualize::{visualize, VisualizeMode};

#[derive(Debug, Parser)]
#[command(name = "resfu", version, about = "Guided similarity-based feature upsampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic weight bundle (.rsfw).
    GenWeights {
        /// Channels of the low-resolution input to be upsampled.
        #[arg(long)]
        cin: usize,
        /// Channels of the high-resolution guide.
        #[arg(long)]
        cguide: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_KERNEL)]
        kernel: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Upsample an input feature map under the guidance of a high-resolution feature.
    Upsample {
        #[arg(long)]
        input: PathBuf,
        /// Required unless a plain interpolation baseline is selected.
        #[arg(long)]
        guide: Option<PathBuf>,
        /// Required unless a plain interpolation baseline is selected.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        ratio: usize,
        #[arg(long, default_value_t = DEFAULT_KERNEL)]
        kernel: usize,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        fused: bool,
        /// Write every intermediate as .rsft into this directory.
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a feature map as a binary PPM image.
    Visualize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Pca)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Run every oracle, gradient, determinism and format check.
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also exercise this weight bundle.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Time fused vs naive aggregation and decomposed vs direct PCDC.
    Bench {
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long, default_value_t = 64)]
        w: usize,
        #[arg(long, default_value_t = 32)]
        c: usize,
        #[arg(long, default_value_t = 4)]
        ratio: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Bilinear,
    Nearest,
    Innerprod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Pca,
    Channel,
}

/// An error ready for the terminal: message plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn at(path: &Path, err: Error) -> Self {
        Self {
            code: err.exit_code(),
            message: format!("{}: {err}", path.display()),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: 2,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Self {
            code: err.exit_code(),
            message: err.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn read_map(path: &Path) -> CliResult<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    FeatureMap::from_bytes(&bytes).map_err(|e| Failure::at(path, e))
}

fn read_params(path: &Path) -> CliResult<ResfuParams> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    deserialize_params(&bytes, GuidedFilterConfig::default()).map_err(|e| Failure::at(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value.as_deref().ok_or_else(|| Failure {
        code: 2,
        message: format!("--{flag} is required for this upsampling mode"),
    })
}

fn dump(dir: &Option<PathBuf>, maps: &[(&str, &FeatureMap)]) -> CliResult {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    for (name, map) in maps {
        write_file(&dir.join(format!("{name}.rsft")), &map.to_bytes())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_upsample(
    input: &Path,
    guide: &Option<PathBuf>,
    weights: &Option<PathBuf>,
    ratio: usize,
    kernel: usize,
    baseline: Option<Baseline>,
    fused: bool,
    dump_dir: &Option<PathBuf>,
    out: &Path,
) -> CliResult {
    if ratio == 0 {
        return Err(Failure::from(Error::InvalidArgument("--ratio must be >= 1".into())));
    }
    let x = read_map(input)?;
    let (hh, ww) = (x.height() * ratio, x.width() * ratio);
    let output = match baseline {
        Some(Baseline::Bilinear) => bilinear_resize(&x, hh, ww),
        Some(Baseline::Nearest) => nearest_resize(&x, hh, ww),
        Some(Baseline::Innerprod) | None => {
            let y = read_map(require(guide, "guide")?)?;
            let weights_path = require(weights, "weights")?;
            let params = read_params(weights_path)?;
            let cfg = UpsampleConfig {
                ratio,
                kernel,
                fused,
                gf: params.gf,
                ..UpsampleConfig::default()
            };
            if baseline == Some(Baseline::Innerprod) {
                let t = inner_product_upsample(&x, &y, &params, &cfg)?;
                dump(dump_dir, &[("q", &t.q), ("k_up", &t.k_up), ("kernels", t.kernels.as_map())])?;
                t.output
            } else {
                let t = resfu_upsample_traced(&x, &y, &params, &cfg)?;
                dump(
                    dump_dir,
                    &[
                        ("q", &t.q),
                        ("k_up", &t.k_up),
                        ("q_gf", &t.q_gf),
                        ("q_gs", &t.q_gs),
                        ("s_s", t.s_s.as_map()),
                        ("s_d", t.s_d.as_map()),
                        ("kernels", t.kernels.as_map()),
                    ],
                )?;
                t.output
            }
        }
    };
    write_file(out, &output.to_bytes())
}

fn execute(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::GenWeights {
            cin,
            cguide,
            seed,
            kernel,
            out,
        } => {
            let cfg = UpsampleConfig {
                seed,
                kernel,
                ..UpsampleConfig::default()
            };
            let params = generate_params(cguide, cin, &cfg)?;
            write_file(&out, &serialize_params(&params))?;
        }
        Command::Upsample {
            input,
            guide,
            weights,
            ratio,
            kernel,
            baseline,
            fused,
            dump_dir,
            out,
        } => cmd_upsample(&input, &guide, &weights, ratio, kernel, baseline, fused, &dump_dir, &out)?,
        Command::Visualize {
            input,
            out,
            mode,
            channel,
        } => {
            let map = read_map(&input)?;
            let mode = match mode {
                Mode::Pca => VisualizeMode::Pca,
                Mode::Channel => VisualizeMode::Channel(channel),
            };
            let ppm = visualize(&map, mode).map_err(|e| Failure::at(&input, e))?;
            write_file(&out, &ppm)?;
        }
        Command::Selfcheck { seed, weights } => {
            let results = run_selfcheck(seed, weights.as_deref());
            for r in &results {
                println!("{r}");
            }
            let passed = results.iter().filter(|r| r.passed).count();
            println!("{passed}/{} checks passed", results.len());
            return Ok(if passed == results.len() { 0 } else { 1 });
        }
        Command::Bench {
            h,
            w,
            c,
            ratio,
            iters,
            seed,
        } => {
            let report = run_bench(&BenchConfig {
                h,
                w,
                c,
                ratio,
                iters,
                seed,
            })?;
            print!("{report}");
        }
    }
    Ok(0)
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_upsample_flags() {
        let cli = Cli::try_parse_from([
            "resfu", "upsample", "--input", "x.rsft", "--guide", "y.rsft", "--weights", "w.rsfw", "--ratio", "4",
            "--fused", "false", "--dump-dir", "d", "--out", "o.rsft",
        ])
        .unwrap();
        match cli.command {
            Command::Upsample {
                ratio, fused, kernel, ..
            } => assert_eq!((ratio, fused, kernel), (4, false, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_flags_are_errors() {
        assert!(Cli::try_parse_from(["resfu", "selfcheck", "--bogus"]).is_err());
        assert_eq!(run(["resfu", "bench", "--nope", "1"]), 2);
    }

    #[test]
    fn baseline_values() {
        let cli = Cli::try_parse_from(["resfu", "upsample", "--input", "a", "--ratio", "2", "--baseline", "nearest", "--out", "b"]).unwrap();
        assert!(matches!(cli.command, Command::Upsample { baseline: Some(Baseline::Nearest), .. }));
    }
}
