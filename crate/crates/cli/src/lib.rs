//! `hvc` command-line front end. [`run`] parses an argument vector, does the
//! work and returns the process exit status: 0 on success, 1 when the
//! operation failed (I/O, backend trouble, an attack that found nothing) and
//! 2 for usage errors.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use hvc_core::attack::{
    self, calibrate_threshold, generic_attack, improved_attack, AttackOutcome, ImprovedOptions,
    MockOracle, RemoteConfig, RemoteTranscriber, TranscriberBackend,
};
use hvc_core::audio::{self, read_wav_file, write_wav, CANONICAL_RATE};
use hvc_core::channel::{self, ChannelConfig};
use hvc_core::dsp;
use hvc_core::features::{self, AnalysisWindow, FeatureConfig, SpectrumKind};
use hvc_core::perturb::{self, inclusive_range, parse_hfa_list, ParamGrid, PerturbationParams};
use hvc_core::spectrogram::{self, SpectrogramConfig};
use hvc_core::vad;
use hvc_core::AudioBuffer;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Parser)]
#[command(
    name = "hvc",
    version,
    about = "Audio perturbation toolkit for speech recognition robustness testing"
)]
struct Cli {
    /// Seed for every random choice (RPG phases, channel noise, calibration).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Working sample rate; inputs at other rates are refused unless --resample is given.
    #[arg(long, global = true, default_value_t = CANONICAL_RATE)]
    rate: u32,
    /// Resample inputs to --rate instead of refusing them.
    #[arg(long, global = true)]
    resample: bool,
    /// Write 32-bit float WAVs instead of 16-bit PCM.
    #[arg(long, global = true)]
    float: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply one perturbation point to a WAV file.
    Perturb {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        point: PointArgs,
    },
    /// Write one WAV per grid point plus a manifest.
    Sweep {
        input: PathBuf,
        outdir: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Print the MFCC (or MFSC) matrix, one frame per line.
    Features {
        input: PathBuf,
        #[command(flatten)]
        config: FeatureArgs,
    },
    /// Feature distance and per-window spectral magnitude difference of two files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Window for the magnitude comparison.
        #[arg(long, default_value_t = 20.0)]
        window_ms: f64,
        #[command(flatten)]
        config: FeatureArgs,
    },
    /// Print detected speech regions as `start<TAB>end` seconds.
    Vad { input: PathBuf },
    /// Pass audio through a simulated playback channel.
    Simulate {
        input: PathBuf,
        output: PathBuf,
        /// `transparent`, `harsh`, or a channel config file.
        #[arg(long)]
        channel: String,
    },
    /// Search for a perturbation the backend still transcribes.
    Attack(AttackArgs),
    /// Render a log-magnitude spectrogram as a binary PGM image.
    Spectrogram {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 20.0)]
        frame_ms: f64,
        #[arg(long, default_value_t = 10.0)]
        hop_ms: f64,
        #[arg(long, default_value_t = 80.0)]
        range_db: f64,
    },
}

#[derive(Debug, Args)]
struct PointArgs {
    #[arg(long)]
    tdi_ms: Option<f64>,
    #[arg(long)]
    rpg_ms: Option<f64>,
    /// Comma-separated `frequency:amplitude` tones.
    #[arg(long)]
    hfa: Option<String>,
    /// Time-scaling factor in percent (>= 100).
    #[arg(long)]
    ts: Option<f64>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// `start:stop:step` in ms.
    #[arg(long)]
    tdi_ms_range: Option<String>,
    #[arg(long)]
    rpg_ms_range: Option<String>,
    /// One HFA tone set per use, e.g. `--hfa 7000:0.1 --hfa 7000:0.2`.
    #[arg(long)]
    hfa: Vec<String>,
    /// `start:stop:step` in percent.
    #[arg(long)]
    ts_range: Option<String>,
}

#[derive(Debug, Args)]
struct FeatureArgs {
    /// Log mel energies instead of cepstral coefficients.
    #[arg(long)]
    mfsc: bool,
    #[arg(long, default_value_t = 20.0)]
    frame_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    hop_ms: f64,
    #[arg(long, default_value_t = 26)]
    filters: usize,
    #[arg(long, default_value_t = 13)]
    coefficients: usize,
    /// Use a rectangular analysis window instead of Hamming.
    #[arg(long)]
    rectangular: bool,
    /// Filter magnitudes instead of power.
    #[arg(long)]
    magnitude: bool,
    #[arg(long)]
    pre_emphasis: Option<f64>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    input: PathBuf,
    #[arg(long)]
    target_phrase: String,
    /// `mock:REF.wav:THRESHOLD` (THRESHOLD may be `auto`) or `remote:CONFIG`.
    #[arg(long)]
    backend: String,
    /// Where the winning sample goes; defaults to `<input>.attack.wav`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Query budget; defaults to 10 for the mock and to the config's value for remote.
    #[arg(long)]
    budget: Option<usize>,
    #[command(flatten)]
    grid: GridArgs,
    /// Word boundaries as sample indices (comma-separated); enables the per-word attack.
    #[arg(long)]
    split_at: Option<String>,
    /// Derive word boundaries from gaps between detected speech regions.
    #[arg(long)]
    split_vad: bool,
    /// Settings kept per word in the per-word attack.
    #[arg(long, default_value_t = 3)]
    per_word: usize,
    /// Keep a per-word setting only within this feature distance of the clean word.
    #[arg(long)]
    word_threshold: Option<f64>,
}

/// Marks errors caused by bad invocations rather than failed operations.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn exit_code(err: &anyhow::Error) -> i32 {
    let is_usage = err.chain().any(|e| {
        e.is::<Usage>()
            || matches!(
                e.downcast_ref::<hvc_core::Error>(),
                Some(hvc_core::Error::Parameter(_))
            )
    });
    if is_usage {
        2
    } else {
        1
    }
}

/// Runs one invocation. `args` includes the program name.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}

struct Ctx {
    seed: u64,
    rate: u32,
    resample: bool,
    float: bool,
}

impl Ctx {
    fn load(&self, path: &Path) -> Result<AudioBuffer> {
        let audio = read_wav_file(path).with_context(|| format!("reading {}", path.display()))?;
        audio::canonicalize(audio, self.rate, self.resample)
            .with_context(|| format!("{} (pass --resample to convert)", path.display()))
    }

    fn encode(&self, audio: &AudioBuffer) -> Vec<u8> {
        if self.float {
            audio::write_wav_float(audio)
        } else {
            write_wav(audio)
        }
    }

    fn save(&self, path: &Path, audio: &AudioBuffer) -> Result<()> {
        std::fs::write(path, self.encode(audio))
            .with_context(|| format!("writing {}", path.display()))
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let ctx = Ctx {
        seed: cli.seed,
        rate: cli.rate,
        resample: cli.resample,
        float: cli.float,
    };
    match &cli.command {
        Command::Perturb {
            input,
            output,
            point,
        } => {
            let audio = ctx.load(input)?;
            let params = point_params(point, ctx.seed)?;
            ctx.save(output, &perturb::generate(&audio, &params)?)?;
        }
        Command::Sweep {
            input,
            outdir,
            grid,
        } => {
            let audio = ctx.load(input)?;
            let grid = param_grid(grid, ctx.seed)?;
            let written = sweep(&ctx, &audio, &grid, outdir)?;
            writeln!(out, "wrote {} files and {}", written, MANIFEST_NAME)?;
        }
        Command::Features { input, config } => {
            let audio = ctx.load(input)?;
            let m = features::extract_features(&audio, &feature_config(config)?)?;
            out.write_all(m.to_text().as_bytes())?;
        }
        Command::Compare {
            a,
            b,
            window_ms,
            config,
        } => {
            let (a, b) = (ctx.load(a)?, ctx.load(b)?);
            let config = feature_config(config)?;
            let d = features::feature_distance(
                &features::extract_features(&a, &config)?,
                &features::extract_features(&b, &config)?,
            )?;
            let window = a.ms_to_samples(*window_ms);
            writeln!(out, "feature_distance\t{d:.6}")?;
            writeln!(out, "window_samples\t{window}")?;
            writeln!(
                out,
                "max_magnitude_rel_diff\t{:.3e}",
                window_magnitude_diff(&a, &b, window)
            )?;
        }
        Command::Vad { input } => {
            let audio = ctx.load(input)?;
            out.write_all(vad::format_regions(&vad::detect_speech(&audio)).as_bytes())?;
        }
        Command::Simulate {
            input,
            output,
            channel,
        } => {
            let audio = ctx.load(input)?;
            let config = match ChannelConfig::preset(channel) {
                Some(preset) => ChannelConfig {
                    noise_seed: ctx.seed,
                    ..preset
                },
                None if Path::new(channel).is_file() => ChannelConfig::load(channel)
                    .with_context(|| format!("channel config {channel}"))?,
                None => return Err(usage(format!("`{channel}` is neither a preset nor a file"))),
            };
            let result = channel::simulate(&audio, &config)?;
            if result.scale != 1.0 {
                writeln!(out, "rescaled by {:.4} to avoid clipping", result.scale)?;
            }
            ctx.save(output, &result.audio)?;
        }
        Command::Attack(args) => return run_attack(&ctx, args, out),
        Command::Spectrogram {
            input,
            output,
            frame_ms,
            hop_ms,
            range_db,
        } => {
            let audio = ctx.load(input)?;
            let config = SpectrogramConfig {
                frame_ms: *frame_ms,
                hop_ms: *hop_ms,
                dynamic_range_db: *range_db,
            };
            let pgm = spectrogram::render_pgm(&audio, &config)?;
            std::fs::write(output, pgm).with_context(|| format!("writing {}", output.display()))?;
        }
    }
    Ok(0)
}

fn point_params(p: &PointArgs, seed: u64) -> Result<PerturbationParams> {
    Ok(PerturbationParams {
        tdi_window_ms: p.tdi_ms,
        rpg_window_ms: p.rpg_ms,
        rpg_seed: seed,
        hfa_components: match &p.hfa {
            Some(s) => parse_hfa_list(s)?,
            None => Vec::new(),
        },
        ts_factor_percent: p.ts,
    })
}

fn parse_range(flag: &str, text: &str) -> Result<Vec<Option<f64>>> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums = parts
        .iter()
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("--{flag}: `{text}` is not start:stop:step")))?;
    let values = match nums[..] {
        [single] => vec![single],
        [start, stop, step] => inclusive_range(start, stop, step)?,
        _ => return Err(usage(format!("--{flag}: `{text}` is not start:stop:step"))),
    };
    Ok(values.into_iter().map(Some).collect())
}

fn param_grid(g: &GridArgs, seed: u64) -> Result<ParamGrid> {
    let mut grid = ParamGrid {
        rpg_seed: seed,
        ..ParamGrid::default()
    };
    if let Some(r) = &g.tdi_ms_range {
        grid.tdi_ms = parse_range("tdi-ms-range", r)?;
    }
    if let Some(r) = &g.rpg_ms_range {
        grid.rpg_ms = parse_range("rpg-ms-range", r)?;
    }
    if let Some(r) = &g.ts_range {
        grid.ts_percent = parse_range("ts-range", r)?;
    }
    if !g.hfa.is_empty() {
        grid.hfa = g
            .hfa
            .iter()
            .map(|s| parse_hfa_list(s))
            .collect::<hvc_core::Result<_>>()?;
    }
    Ok(grid)
}

/// One manifest line per file: `name<TAB>key=value<TAB>...`.
pub fn manifest_line(name: &str, params: &PerturbationParams) -> String {
    format!("{name}\t{params}")
}

pub fn parse_manifest(text: &str) -> Result<Vec<(String, PerturbationParams)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let (name, params) = line
                .split_once('\t')
                .ok_or_else(|| anyhow!("manifest line {}: no tab after the file name", i + 1))?;
            let params = params
                .parse()
                .with_context(|| format!("manifest line {}", i + 1))?;
            Ok((name.to_string(), params))
        })
        .collect()
}

fn sweep(ctx: &Ctx, audio: &AudioBuffer, grid: &ParamGrid, outdir: &Path) -> Result<usize> {
    let points = perturb::expand_grid(grid)?;
    for p in &points {
        p.validate(audio.sample_rate)?;
    }
    std::fs::create_dir_all(outdir).with_context(|| format!("creating {}", outdir.display()))?;
    let width = points.len().to_string().len().max(3);
    // Files are independent; the manifest is assembled afterwards in grid order.
    let names = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let name = format!("sweep_{:0width$}.wav", i + 1);
            let bytes = ctx.encode(&perturb::generate(audio, p)?);
            std::fs::write(outdir.join(&name), bytes).with_context(|| format!("writing {name}"))?;
            Ok(name)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest: String = names
        .iter()
        .zip(&points)
        .map(|(n, p)| manifest_line(n, p) + "\n")
        .collect();
    std::fs::write(outdir.join(MANIFEST_NAME), manifest)?;
    Ok(points.len())
}

fn feature_config(a: &FeatureArgs) -> Result<FeatureConfig> {
    let config = FeatureConfig {
        frame_ms: a.frame_ms,
        hop_ms: a.hop_ms,
        window: if a.rectangular {
            AnalysisWindow::Rectangular
        } else {
            AnalysisWindow::Hamming
        },
        n_mel_filters: a.filters,
        n_coefficients: a.coefficients,
        include_dct: !a.mfsc,
        spectrum: if a.magnitude {
            SpectrumKind::Magnitude
        } else {
            SpectrumKind::Power
        },
        pre_emphasis: a.pre_emphasis,
        ..FeatureConfig::default()
    };
    config.validate()?;
    Ok(config)
}

/// Largest per-window relative difference of exact-length DFT magnitudes,
/// over the full windows both files share.
pub fn window_magnitude_diff(a: &AudioBuffer, b: &AudioBuffer, window: usize) -> f64 {
    let n = a.len().min(b.len()) / window * window;
    a.samples[..n]
        .chunks(window)
        .zip(b.samples[..n].chunks(window))
        .map(|(x, y)| {
            let mx = dsp::magnitude(&dsp::dft_real_exact(x, a.sample_rate));
            let my = dsp::magnitude(&dsp::dft_real_exact(y, b.sample_rate));
            let scale = mx.iter().fold(0.0f64, |m, v| m.max(*v));
            let diff = mx
                .iter()
                .zip(&my)
                .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            if scale > 0.0 {
                diff / scale
            } else {
                diff
            }
        })
        .fold(0.0, f64::max)
}

fn word_cuts(args: &AttackArgs, audio: &AudioBuffer) -> Result<Option<Vec<usize>>> {
    if let Some(list) = &args.split_at {
        let cuts = list
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| {
                usage(format!(
                    "--split-at: `{list}` is not a list of sample indices"
                ))
            })?;
        return Ok(Some(cuts));
    }
    if args.split_vad {
        let regions = vad::detect_speech(audio);
        let fs = audio.sample_rate as f64;
        let cuts = regions
            .windows(2)
            .map(|w| (0.5 * (w[0].end + w[1].start) * fs).round() as usize)
            .collect();
        return Ok(Some(cuts));
    }
    Ok(None)
}

fn build_backend(ctx: &Ctx, args: &AttackArgs) -> Result<Box<dyn TranscriberBackend>> {
    if let Some(rest) = args.backend.strip_prefix("mock:") {
        let (path, threshold) = rest
            .rsplit_once(':')
            .ok_or_else(|| usage("mock backend is mock:REF.wav:THRESHOLD"))?;
        let reference = ctx.load(Path::new(path))?;
        let threshold = if threshold == "auto" {
            let config = FeatureConfig::default();
            calibrate_threshold(
                std::slice::from_ref(&reference),
                &config,
                &[ctx.seed],
                ctx.seed,
            )?
            .threshold
        } else {
            threshold
                .parse::<f64>()
                .map_err(|_| usage(format!("mock threshold `{threshold}` is not a number")))?
        };
        let oracle = MockOracle::new(&reference, args.target_phrase.clone(), threshold)?
            .with_budget(args.budget.unwrap_or(attack::DEFAULT_BUDGET));
        Ok(Box::new(oracle))
    } else if let Some(path) = args.backend.strip_prefix("remote:") {
        let mut config =
            RemoteConfig::load(path).with_context(|| format!("remote config {path}"))?;
        if let Some(b) = args.budget {
            config.budget = b;
        }
        Ok(Box::new(RemoteTranscriber::new(
            config,
            args.target_phrase.clone(),
        )?))
    } else {
        Err(usage(format!("unknown backend `{}`", args.backend)))
    }
}

fn run_attack(ctx: &Ctx, args: &AttackArgs, out: &mut dyn Write) -> Result<i32> {
    let audio = ctx.load(&args.input)?;
    let mut grid = param_grid(&args.grid, ctx.seed)?;
    if args.grid.tdi_ms_range.is_none() && args.grid.rpg_ms_range.is_none() {
        grid.tdi_ms = ParamGrid::default_tdi_schedule().tdi_ms;
    }
    let schedule = perturb::expand_grid(&grid)?;
    let mut backend = build_backend(ctx, args)?;
    let outcome = match word_cuts(args, &audio)? {
        Some(cuts) => {
            let words = audio.split_at_samples(&cuts)?;
            let options = ImprovedOptions {
                per_word_variants: args.per_word,
                word_feature_threshold: args.word_threshold.unwrap_or(f64::INFINITY),
                ..ImprovedOptions::default()
            };
            improved_attack(&words, &options, backend.as_mut(), &schedule)?
        }
        None => generic_attack(&audio, backend.as_mut(), &schedule)?,
    };
    match outcome {
        AttackOutcome::Accepted { candidate, history } => {
            let path = args.out.clone().unwrap_or_else(|| {
                let mut p = args.input.clone().into_os_string();
                p.push(".attack.wav");
                PathBuf::from(p)
            });
            ctx.save(&path, &candidate.audio)?;
            writeln!(out, "winner\t{}", path.display())?;
            writeln!(out, "queries\t{}", history.len())?;
            for (i, p) in candidate.params.iter().enumerate() {
                writeln!(out, "params[{i}]\t{p}")?;
            }
            if let Some(v) = &candidate.verdict {
                writeln!(out, "transcript\t{}", v.transcript)?;
            }
            Ok(0)
        }
        AttackOutcome::Exhausted(report) => {
            writeln!(out, "no accepted candidate ({:?})", report.reason)?;
            writeln!(out, "queries\t{}", report.verdicts.len())?;
            for r in &report.verdicts {
                let params: Vec<String> = r.params.iter().map(ToString::to_string).collect();
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    r.verdict.query_index,
                    if r.verdict.accepted {
                        "accept"
                    } else {
                        "reject"
                    },
                    params.join(" | ")
                )?;
            }
            Ok(1)
        }
    }
}
