//! Command-line surface for the lyrics alignment toolkit.
//!
//! Subcommands: `align`, `timed-transcribe`, `eval`, `mix`, `augment`,
//! `synth`, `train-demo`. Exit codes: 0 success, 1 validation failure,
//! 2 I/O failure, 3 acceptance-threshold failure.

mod eval;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lyralign_core::align::{align_lyrics, alignment_to_json, AlignError, AlignmentSource};
use lyralign_core::codec::{CodecError, Lexicon, LyricsSequence};
use lyralign_core::demo::{run_demo, DemoConfig, DemoError};
use lyralign_core::fsutil::write_atomic;
use lyralign_core::loss::framewise_targets_from_alignment;
use lyralign_core::mix::{augment_dataset, mix_at_snr, ClipPolicy, MixError, MixSpec};
use lyralign_core::model::{synth_dataset, write_features, ModelError, SynthSpec, TrainConfig};
use lyralign_core::posteriogram::{read_posteriogram, Posteriogram, PosteriogramError};
use lyralign_core::wav::{read_wav, write_wav, WavError};
use ndarray::Array2;

#[derive(Parser)]
#[command(
    name = "lyralign",
    version,
    about = "Syllable-posteriogram lyrics alignment, SNR augmentation, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align groundtruth lyrics against a posteriogram (Viterbi forced alignment).
    Align(AlignArgs),
    /// Align an externally produced transcript; the output is marked as predicted.
    TimedTranscribe(TranscribeArgs),
    /// Evaluate predicted alignments or transcripts against references.
    Eval(eval::EvalArgs),
    /// Mix one vocal with one accompaniment at a target SNR.
    Mix(MixArgs),
    /// Mix every vocal in a directory at each SNR with seeded-random accompaniments.
    Augment(AugmentArgs),
    /// Generate a synthetic dataset (features, alignments, lyrics, lexicon).
    Synth(SynthArgs),
    /// Train the toy model on synthetic data and check the end-to-end thresholds.
    TrainDemo(TrainDemoArgs),
}

#[derive(Args)]
struct AlignArgs {
    /// PSTG posteriogram file.
    #[arg(long)]
    posteriogram: PathBuf,
    /// UTF-8 text file with the lyrics (whitespace ignored).
    #[arg(long)]
    lyrics: PathBuf,
    /// Lexicon TSV (character<TAB>syllable).
    #[arg(long)]
    lexicon: PathBuf,
    /// Output alignment JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TranscribeArgs {
    /// PSTG posteriogram file.
    #[arg(long)]
    posteriogram: PathBuf,
    /// UTF-8 text file with the predicted lyrics.
    #[arg(long)]
    transcript: PathBuf,
    /// Lexicon TSV (character<TAB>syllable).
    #[arg(long)]
    lexicon: PathBuf,
    /// Output alignment JSON (marked "source": "predicted").
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ClipPolicyArg {
    Normalize,
    HardClip,
}

impl From<ClipPolicyArg> for ClipPolicy {
    fn from(value: ClipPolicyArg) -> Self {
        match value {
            ClipPolicyArg::Normalize => ClipPolicy::Normalize,
            ClipPolicyArg::HardClip => ClipPolicy::HardClip,
        }
    }
}

#[derive(Args)]
struct MixArgs {
    /// Vocal WAV (16-bit PCM mono).
    #[arg(long)]
    vocal: PathBuf,
    /// Accompaniment WAV (same sample rate as the vocal).
    #[arg(long)]
    accomp: PathBuf,
    /// Vocal-to-accompaniment SNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr: f64,
    /// Seed for the accompaniment segment offset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// What to do when the mix exceeds full scale.
    #[arg(long, value_enum, default_value_t = ClipPolicyArg::Normalize)]
    clip_policy: ClipPolicyArg,
    /// Output WAV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory of vocal WAVs.
    #[arg(long)]
    vocal_dir: PathBuf,
    /// Directory of accompaniment WAVs.
    #[arg(long)]
    accomp_dir: PathBuf,
    /// Comma-separated SNR list in dB.
    #[arg(long, default_value = "0,-5,-10", allow_hyphen_values = true)]
    snrs: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for mixed WAVs and manifest.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of syllable classes (silence and blank come on top).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    /// Distance between class-conditional feature means.
    #[arg(long, default_value_t = 5.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    /// Sequence length range in frames, MIN:MAX.
    #[arg(long, default_value = "80:120")]
    frames: String,
    /// Segment length range in frames, MIN:MAX.
    #[arg(long, default_value = "4:12")]
    segments: String,
    #[arg(long, default_value_t = 0.02)]
    frame_hop: f64,
    /// Number of items to generate.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainDemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 24)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    context: usize,
    #[arg(long, default_value_t = 200)]
    train_items: usize,
    #[arg(long, default_value_t = 40)]
    holdout_items: usize,
    /// Save the trained model checkpoint (TOYM) here.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Write the report as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad inputs or contract violations: exit 1.
    Validation(String),
    /// Filesystem problems: exit 2.
    Io(String),
    /// The demo ran but missed an acceptance threshold: exit 3.
    Threshold(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Threshold(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) | CliError::Threshold(m) => m,
        }
    }
}

pub type CliResult = Result<(), CliError>;

pub fn validation(err: impl std::fmt::Display) -> CliError {
    CliError::Validation(err.to_string())
}

pub fn map_codec(err: CodecError) -> CliError {
    match err {
        CodecError::Io { .. } => CliError::Io(err.to_string()),
        _ => validation(err),
    }
}

pub fn map_pstg(err: PosteriogramError) -> CliError {
    match err {
        PosteriogramError::Io { .. } => CliError::Io(err.to_string()),
        _ => validation(err),
    }
}

pub fn map_align(err: AlignError) -> CliError {
    match err {
        AlignError::Io { .. } => CliError::Io(err.to_string()),
        AlignError::Codec(inner) => map_codec(inner),
        _ => validation(err),
    }
}

fn map_mix(err: MixError) -> CliError {
    match err {
        MixError::Io { .. } => CliError::Io(err.to_string()),
        MixError::Wav(WavError::Read { .. } | WavError::Write { .. }) => {
            CliError::Io(err.to_string())
        }
        _ => validation(err),
    }
}

fn map_wav(err: WavError) -> CliError {
    match err {
        WavError::Read { .. } | WavError::Write { .. } => CliError::Io(err.to_string()),
        _ => validation(err),
    }
}

fn map_model(err: ModelError) -> CliError {
    match err {
        ModelError::Io { .. } => CliError::Io(err.to_string()),
        _ => validation(err),
    }
}

fn map_demo(err: DemoError) -> CliError {
    match err {
        DemoError::Model(inner) => map_model(inner),
        other => validation(other),
    }
}

/// Inputs are checked up front so commands fail before doing any work.
pub fn require_file(path: &Path) -> CliResult {
    match fs::metadata(path) {
        Ok(meta) if meta.is_file() => Ok(()),
        Ok(_) => Err(CliError::Io(format!(
            "{} exists but is not a regular file",
            path.display()
        ))),
        Err(err) => Err(CliError::Io(format!("{}: {err}", path.display()))),
    }
}

fn require_dir(path: &Path) -> CliResult {
    match fs::metadata(path) {
        Ok(meta) if meta.is_dir() => Ok(()),
        Ok(_) => Err(CliError::Io(format!(
            "{} exists but is not a directory",
            path.display()
        ))),
        Err(err) => Err(CliError::Io(format!("{}: {err}", path.display()))),
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|err| CliError::Io(format!("{}: {err}", path.display())))
}

pub fn write_output(path: &Path, bytes: &[u8]) -> CliResult {
    write_atomic(path, bytes).map_err(|err| CliError::Io(format!("{}: {err}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Align(args) => cmd_align(&args),
        Command::TimedTranscribe(args) => cmd_timed_transcribe(&args),
        Command::Eval(args) => eval::cmd_eval(&args),
        Command::Mix(args) => cmd_mix(&args),
        Command::Augment(args) => cmd_augment(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::TrainDemo(args) => cmd_train_demo(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn run_alignment(
    posteriogram: &Path,
    text_path: &Path,
    lexicon: &Path,
    out: &Path,
    source: AlignmentSource,
) -> CliResult {
    require_file(posteriogram)?;
    require_file(text_path)?;
    require_file(lexicon)?;
    let lex = Lexicon::load(lexicon).map_err(map_codec)?;
    let lyrics = LyricsSequence::from_text(&read_text(text_path)?);
    let p: Posteriogram<f64> = read_posteriogram(posteriogram).map_err(map_pstg)?;
    let (result, score) = align_lyrics(&p, &lyrics, &lex).map_err(map_align)?;
    let result = result.with_source(source);
    write_output(out, alignment_to_json(&result).as_bytes())?;
    println!(
        "aligned {} characters over {:.3}s (path log score {score:.3}) -> {}",
        result.len(),
        p.duration(),
        out.display()
    );
    Ok(())
}

fn cmd_align(args: &AlignArgs) -> CliResult {
    run_alignment(
        &args.posteriogram,
        &args.lyrics,
        &args.lexicon,
        &args.out,
        AlignmentSource::Reference,
    )
}

fn cmd_timed_transcribe(args: &TranscribeArgs) -> CliResult {
    run_alignment(
        &args.posteriogram,
        &args.transcript,
        &args.lexicon,
        &args.out,
        AlignmentSource::Predicted,
    )
}

fn cmd_mix(args: &MixArgs) -> CliResult {
    require_file(&args.vocal)?;
    require_file(&args.accomp)?;
    let vocal = read_wav::<f64>(&args.vocal).map_err(map_wav)?;
    let accomp = read_wav::<f64>(&args.accomp).map_err(map_wav)?;
    let spec = MixSpec {
        snr_db: args.snr,
        seed: args.seed,
        clip_policy: args.clip_policy.into(),
    };
    let mixed = mix_at_snr(&vocal, &accomp, &spec).map_err(map_mix)?;
    write_wav(&mixed, &args.out).map_err(map_wav)?;
    println!(
        "mixed {} samples at {} dB -> {}",
        mixed.len(),
        args.snr,
        args.out.display()
    );
    Ok(())
}

fn parse_snrs(text: &str) -> Result<Vec<f64>, CliError> {
    let snrs = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|_| CliError::Validation(format!("cannot parse SNR list {text:?}")))?;
    if snrs.is_empty() || snrs.iter().any(|s| !s.is_finite()) {
        return Err(CliError::Validation(format!("invalid SNR list {text:?}")));
    }
    Ok(snrs)
}

fn cmd_augment(args: &AugmentArgs) -> CliResult {
    require_dir(&args.vocal_dir)?;
    require_dir(&args.accomp_dir)?;
    let snrs = parse_snrs(&args.snrs)?;
    let manifest = augment_dataset::<f64>(
        &args.vocal_dir,
        &args.accomp_dir,
        &snrs,
        args.seed,
        &args.out_dir,
    )
    .map_err(map_mix)?;
    let errors = manifest.error_count();
    let total = manifest.rows.len();
    println!(
        "{} of {total} mixes written, manifest at {}",
        total - errors,
        args.out_dir.join("manifest.csv").display()
    );
    for row in manifest.rows.iter().filter(|r| r.is_error()) {
        eprintln!("warning: {} @ {} dB: {}", row.vocal, row.snr_db, row.output);
    }
    if errors > 0 {
        return Err(CliError::Validation(format!(
            "{errors} of {total} augmentations failed; see manifest"
        )));
    }
    Ok(())
}

fn parse_range(text: &str, what: &str) -> Result<(usize, usize), CliError> {
    let parse = |s: &str| s.trim().parse::<usize>().ok();
    text.split_once(':')
        .and_then(|(lo, hi)| Some((parse(lo)?, parse(hi)?)))
        .ok_or_else(|| {
            CliError::Validation(format!("cannot parse {what} range {text:?} (MIN:MAX)"))
        })
}

/// Sharp ground-truth posteriogram for a synthesized item: 0.9 on the
/// true class, the rest spread uniformly. Lets the align and eval
/// commands run on synthetic data without a trained model.
fn oracle_posteriogram(
    item: &lyralign_core::model::SynthItem<f64>,
    lex: &Lexicon,
) -> Result<Posteriogram<f64>, CliError> {
    let t_count = item.features.frame_count();
    let class_count = lex.class_count();
    let targets =
        framewise_targets_from_alignment(&item.reference, t_count, item.features.frame_hop, lex)
            .map_err(validation)?;
    let off_value = 0.1 / (class_count - 1) as f64;
    let mut probs = Array2::from_elem((t_count, class_count), off_value);
    for (t, &label) in targets.labels().iter().enumerate() {
        probs[(t, label.index())] = 0.9;
    }
    Posteriogram::new(probs, item.features.frame_hop).map_err(map_pstg)
}

fn cmd_synth(args: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        class_count: args.classes,
        feature_dim: args.feature_dim,
        separation: args.separation,
        noise_std: args.noise_std,
        frames_range: parse_range(&args.frames, "frames")?,
        segment_range: parse_range(&args.segments, "segments")?,
        frame_hop: args.frame_hop,
        seed: args.seed,
    };
    let items = synth_dataset::<f64>(&spec, args.count).map_err(map_model)?;
    fs::create_dir_all(&args.out_dir)
        .map_err(|err| CliError::Io(format!("{}: {err}", args.out_dir.display())))?;

    let lex = spec.lexicon();
    let mut lexicon_tsv = String::new();
    for class in 0..spec.class_count {
        let _ = writeln!(lexicon_tsv, "{}\ts{class}", spec.character_for_class(class));
    }
    write_output(&args.out_dir.join("lexicon.tsv"), lexicon_tsv.as_bytes())?;

    for (i, item) in items.iter().enumerate() {
        let stem = format!("item_{i:04}");
        write_features(&item.features, args.out_dir.join(format!("{stem}.feat")))
            .map_err(map_model)?;
        lyralign_core::align::write_alignment(
            &item.reference,
            args.out_dir.join(format!("{stem}.align.json")),
        )
        .map_err(map_align)?;
        let text: String = item.lyrics.chars().iter().collect();
        write_output(
            &args.out_dir.join(format!("{stem}.txt")),
            format!("{text}\n").as_bytes(),
        )?;
        let oracle = oracle_posteriogram(item, &lex)?;
        lyralign_core::posteriogram::write_posteriogram(
            &oracle,
            args.out_dir.join(format!("{stem}.pstg")),
        )
        .map_err(map_pstg)?;
    }
    println!(
        "wrote {} items (feat + align.json + txt + pstg) and lexicon.tsv to {}",
        items.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_train_demo(args: &TrainDemoArgs) -> CliResult {
    let mut config = DemoConfig::default().with_seed(args.seed);
    config.train = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch_size,
    };
    config.hidden = args.hidden;
    config.context = args.context;
    config.train_items = args.train_items;
    config.holdout_items = args.holdout_items;

    let run = run_demo::<f64>(&config).map_err(map_demo)?;
    let report = &run.report;
    if let Some(path) = &args.save_model {
        run.model.save(path).map_err(map_model)?;
    }

    let json = serde_json::json!({
        "loss_curve": report.loss_curve,
        "holdout_framewise_accuracy": report.holdout_accuracy,
        "median_boundary_error_s": report.median_boundary_error,
        "mae_s": report.mae,
        "frame_hop_s": report.frame_hop,
        "thresholds": {
            "accuracy_min": report.accuracy_threshold,
            "median_boundary_error_max_s": report.boundary_threshold,
        },
        "pass": report.meets_thresholds(),
    });
    if let Some(path) = &args.out {
        let mut body = serde_json::to_string_pretty(&json).expect("report serializes");
        body.push('\n');
        write_output(path, body.as_bytes())?;
    }
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json).expect("report serializes")
        );
    } else {
        for (epoch, loss) in report.loss_curve.iter().enumerate() {
            println!("epoch {:3}  mean loss {loss:.4}", epoch + 1);
        }
        println!(
            "holdout framewise accuracy  {:.4} (threshold {:.2})",
            report.holdout_accuracy, report.accuracy_threshold
        );
        println!(
            "median boundary error       {:.4} s (threshold {:.4} s)",
            report.median_boundary_error, report.boundary_threshold
        );
        println!("boundary MAE                {:.4} s", report.mae);
    }

    if report.holdout_accuracy < report.accuracy_threshold {
        return Err(CliError::Threshold(format!(
            "framewise accuracy {:.4} below the {:.2} threshold",
            report.holdout_accuracy, report.accuracy_threshold
        )));
    }
    if report.median_boundary_error > report.boundary_threshold {
        return Err(CliError::Threshold(format!(
            "median boundary error {:.4}s above the {:.4}s threshold",
            report.median_boundary_error, report.boundary_threshold
        )));
    }
    Ok(())
}
