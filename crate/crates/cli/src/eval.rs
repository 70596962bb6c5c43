//! The `eval` subcommand: pairs prediction and reference files by stem,
//! scores each pair, and aggregates corpus-level metrics (pooled edit
//! counts for CER/PER, duration-weighted means for MAE/PCAS).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use lyralign_core::align::{read_alignment, AlignmentResult};
use lyralign_core::codec::{Lexicon, LyricsSequence};
use lyralign_core::metrics::{levenshtein, mae, pcas, EvalReport, PcasMode};

use crate::{map_codec, require_file, validation, CliError, CliResult};

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted alignment JSONs or transcripts: a directory or one file.
    #[arg(long)]
    pred: PathBuf,
    /// Reference alignment JSONs or transcripts, paired by filename stem.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Lexicon TSV; required for per and pcas-pronoun.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Comma-separated subset of: mae,cer,per,pcas-exact,pcas-pronoun.
    #[arg(long)]
    metrics: Option<String>,
    /// Write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Metric {
    Mae,
    Cer,
    Per,
    PcasExact,
    PcasPronoun,
}

impl Metric {
    const ALL: [Metric; 5] = [
        Metric::Mae,
        Metric::Cer,
        Metric::Per,
        Metric::PcasExact,
        Metric::PcasPronoun,
    ];

    fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Cer => "cer",
            Metric::Per => "per",
            Metric::PcasExact => "pcas-exact",
            Metric::PcasPronoun => "pcas-pronoun",
        }
    }

    fn parse(text: &str) -> Result<Metric, CliError> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == text)
            .ok_or_else(|| {
                CliError::Validation(format!(
                    "unknown metric {text:?}; expected one of mae, cer, per, pcas-exact, pcas-pronoun"
                ))
            })
    }

    fn needs_lexicon(self) -> bool {
        matches!(self, Metric::Per | Metric::PcasPronoun)
    }
}

/// One evaluation input: a full alignment or a bare transcript.
enum PairSide {
    Alignment(AlignmentResult),
    Text(LyricsSequence),
}

impl PairSide {
    fn characters(&self) -> LyricsSequence {
        match self {
            PairSide::Alignment(a) => a.characters(),
            PairSide::Text(t) => t.clone(),
        }
    }

    fn alignment(&self) -> Option<&AlignmentResult> {
        match self {
            PairSide::Alignment(a) => Some(a),
            PairSide::Text(_) => None,
        }
    }
}

fn is_eval_input(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json") || e.eq_ignore_ascii_case("txt"))
}

fn collect_inputs(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let meta = fs::metadata(path)
        .map_err(|err| CliError::Io(format!("{}: {err}", path.display())))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|err| CliError::Io(format!("{}: {err}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_eval_input(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "no .json or .txt evaluation inputs in {}",
            path.display()
        )));
    }
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_side(path: &Path) -> Result<PairSide, String> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        read_alignment(path)
            .map(PairSide::Alignment)
            .map_err(|err| err.to_string())
    } else {
        fs::read_to_string(path)
            .map(|text| PairSide::Text(LyricsSequence::from_text(&text)))
            .map_err(|err| err.to_string())
    }
}

fn syllable_seq(seq: &LyricsSequence, lex: &Lexicon) -> Result<Vec<String>, String> {
    seq.chars()
        .iter()
        .map(|&c| lex.syllable_str(c).map(str::to_string).map_err(|e| e.to_string()))
        .collect()
}

#[derive(Default)]
struct CorpusTotals {
    cer_edits: usize,
    cer_ref_len: usize,
    per_edits: usize,
    per_ref_len: usize,
    mae_weighted: f64,
    mae_duration: f64,
    pcas_exact_weighted: f64,
    pcas_exact_duration: f64,
    pcas_pronoun_weighted: f64,
    pcas_pronoun_duration: f64,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult {
    let requested: Vec<Metric> = match &args.metrics {
        Some(list) => list
            .split(',')
            .map(|s| Metric::parse(s.trim()))
            .collect::<Result<_, _>>()?,
        None => Metric::ALL.to_vec(),
    };
    let explicit = args.metrics.is_some();

    let lex = match &args.lexicon {
        Some(path) => {
            require_file(path)?;
            Some(Lexicon::load(path).map_err(map_codec)?)
        }
        None => None,
    };
    if lex.is_none() {
        if let Some(m) = requested.iter().find(|m| m.needs_lexicon()) {
            if explicit {
                return Err(CliError::Validation(format!(
                    "metric {} needs --lexicon",
                    m.name()
                )));
            }
        }
    }
    let active: Vec<Metric> = requested
        .into_iter()
        .filter(|m| lex.is_some() || !m.needs_lexicon())
        .collect();

    let preds = collect_inputs(&args.pred)?;
    let refs = collect_inputs(&args.reference)?;
    let both_single_files = fs::metadata(&args.pred).is_ok_and(|m| m.is_file())
        && fs::metadata(&args.reference).is_ok_and(|m| m.is_file());
    let ref_by_stem: BTreeMap<String, PathBuf> =
        refs.iter().map(|p| (stem_of(p), p.clone())).collect();

    let mut warnings: Vec<String> = Vec::new();
    let mut files: BTreeMap<String, EvalReport> = BTreeMap::new();
    let mut totals = CorpusTotals::default();

    for pred_path in &preds {
        let stem = stem_of(pred_path);
        // Two explicit files pair directly; directories pair by stem.
        let ref_path = if both_single_files {
            &refs[0]
        } else if let Some(path) = ref_by_stem.get(&stem) {
            path
        } else {
            warnings.push(format!("{stem}: no reference file; skipped"));
            continue;
        };
        let pred = match load_side(pred_path) {
            Ok(side) => side,
            Err(err) => {
                warnings.push(format!("{stem}: {err}; skipped"));
                continue;
            }
        };
        let reference = match load_side(ref_path) {
            Ok(side) => side,
            Err(err) => {
                warnings.push(format!("{stem}: {err}; skipped"));
                continue;
            }
        };

        let mut report = EvalReport::new();
        let pred_chars = pred.characters();
        let ref_chars = reference.characters();
        for &metric in &active {
            match metric {
                Metric::Cer => {
                    if ref_chars.is_empty() {
                        warnings.push(format!("{stem}: empty reference; cer skipped"));
                        continue;
                    }
                    let edits = levenshtein(pred_chars.chars(), ref_chars.chars());
                    report.insert("cer", edits as f64 / ref_chars.len() as f64);
                    totals.cer_edits += edits;
                    totals.cer_ref_len += ref_chars.len();
                }
                Metric::Per => {
                    let lex = lex.as_ref().expect("filtered above");
                    if ref_chars.is_empty() {
                        warnings.push(format!("{stem}: empty reference; per skipped"));
                        continue;
                    }
                    let seqs = syllable_seq(&pred_chars, lex)
                        .and_then(|p| syllable_seq(&ref_chars, lex).map(|r| (p, r)));
                    match seqs {
                        Ok((p, r)) => {
                            let edits = levenshtein(&p, &r);
                            report.insert("per", edits as f64 / r.len() as f64);
                            totals.per_edits += edits;
                            totals.per_ref_len += r.len();
                        }
                        Err(err) => warnings.push(format!("{stem}: {err}; per skipped")),
                    }
                }
                Metric::Mae => {
                    let (Some(p), Some(r)) = (pred.alignment(), reference.alignment()) else {
                        continue;
                    };
                    match mae(p, r) {
                        Ok(value) => {
                            let duration = p.max_offset().max(r.max_offset()).max(f64::MIN_POSITIVE);
                            report.insert("mae", value);
                            totals.mae_weighted += value * duration;
                            totals.mae_duration += duration;
                        }
                        Err(err) => warnings.push(format!("{stem}: {err}; mae skipped")),
                    }
                }
                Metric::PcasExact | Metric::PcasPronoun => {
                    let (Some(p), Some(r)) = (pred.alignment(), reference.alignment()) else {
                        continue;
                    };
                    let lex_for_mode;
                    let lex_ref = match metric {
                        Metric::PcasPronoun => lex.as_ref().expect("filtered above"),
                        _ => {
                            // PCAS-exact compares characters; the lexicon
                            // argument is unused, so an empty one serves.
                            lex_for_mode = Lexicon::from_pairs::<_, String>([]).expect("empty");
                            lex.as_ref().unwrap_or(&lex_for_mode)
                        }
                    };
                    let mode = if metric == Metric::PcasExact {
                        PcasMode::Exact
                    } else {
                        PcasMode::Pronoun
                    };
                    let total_duration = p.max_offset().max(r.max_offset());
                    if total_duration <= 0.0 {
                        warnings.push(format!("{stem}: empty timeline; {} skipped", metric.name()));
                        continue;
                    }
                    match pcas(p, r, total_duration, mode, lex_ref) {
                        Ok(value) => {
                            report.insert(metric.name(), value);
                            if metric == Metric::PcasExact {
                                totals.pcas_exact_weighted += value * total_duration;
                                totals.pcas_exact_duration += total_duration;
                            } else {
                                totals.pcas_pronoun_weighted += value * total_duration;
                                totals.pcas_pronoun_duration += total_duration;
                            }
                        }
                        Err(err) => {
                            warnings.push(format!("{stem}: {err}; {} skipped", metric.name()))
                        }
                    }
                }
            }
        }
        if !report.is_empty() {
            files.insert(stem, report);
        }
    }

    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    if files.is_empty() {
        return Err(validation("no file pair produced any metric"));
    }

    let mut corpus = EvalReport::new();
    if totals.cer_ref_len > 0 {
        corpus.insert("cer", totals.cer_edits as f64 / totals.cer_ref_len as f64);
    }
    if totals.per_ref_len > 0 {
        corpus.insert("per", totals.per_edits as f64 / totals.per_ref_len as f64);
    }
    if totals.mae_duration > 0.0 {
        corpus.insert("mae", totals.mae_weighted / totals.mae_duration);
    }
    if totals.pcas_exact_duration > 0.0 {
        corpus.insert(
            "pcas-exact",
            totals.pcas_exact_weighted / totals.pcas_exact_duration,
        );
    }
    if totals.pcas_pronoun_duration > 0.0 {
        corpus.insert(
            "pcas-pronoun",
            totals.pcas_pronoun_weighted / totals.pcas_pronoun_duration,
        );
    }

    let json = serde_json::json!({ "files": files, "corpus": corpus });
    if let Some(path) = &args.out {
        let mut body = serde_json::to_string_pretty(&json).expect("report serializes");
        body.push('\n');
        crate::write_output(path, body.as_bytes())?;
    }
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json).expect("report serializes")
        );
    } else {
        for (stem, report) in &files {
            let line: Vec<String> = report
                .iter()
                .map(|(name, value)| format!("{name}={value:.4}"))
                .collect();
            println!("{stem}: {}", line.join("  "));
        }
        println!("\ncorpus ({} file pairs):", files.len());
        print!("{corpus}");
    }
    Ok(())
}
