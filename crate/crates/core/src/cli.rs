//! The `pcr` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::detection::{read_dump_all, AssociationMode};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_map, MapTarget};
use crate::fsutil::{read_json, write_atomic, write_json};
use crate::pipeline::{summarize_manifest, summarize_records};
use crate::regression::{
    clamp_estimate, fit_piecewise, fit_summaries, leave_one_out, design, EvalReport, LooOptions, Method, ReportTable,
    RegressionModel,
};
use crate::scoring::{DatasetSummary, ScoreConfig};
use crate::synth::{build_meta, SourceSpec, Variant};

#[derive(Debug, Parser)]
#[command(name = "pcr", version, about = "Label-free mAP estimation from pre- and post-NMS boxes")]
pub struct Cli {
    /// Seed for synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Score configuration as inline JSON or a path to a JSON file.
    #[arg(long, global = true, value_name = "JSON")]
    pub params: Option<String>,
    #[command(flatten)]
    pub overrides: ParamOverrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Individual hyperparameter flags; applied on top of `--params`.
#[derive(Debug, Default, Args)]
pub struct ParamOverrides {
    /// Confidence threshold c.
    #[arg(long, global = true)]
    pub c: Option<f64>,
    /// Consistency sigmoid scale (negative).
    #[arg(long = "k-c", global = true, allow_negative_numbers = true)]
    pub k_c: Option<f64>,
    /// Reliability sigmoid scale (positive).
    #[arg(long = "k-r", global = true)]
    pub k_r: Option<f64>,
    /// Reliability weight floor.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Leave center closeness unclamped.
    #[arg(long, global = true)]
    pub raw_cc: bool,
    /// Count each candidate once in the reliability numerator.
    #[arg(long, global = true)]
    pub dedup_numerator: bool,
    /// NMS IoU threshold.
    #[arg(long, global = true)]
    pub nms_iou: Option<f64>,
    /// Candidates below this confidence are dropped before NMS.
    #[arg(long, global = true)]
    pub score_floor: Option<f64>,
    /// How candidates are tied to finals when a dump lacks the mapping.
    #[arg(long, global = true, value_parser = parse_association)]
    pub association: Option<AssociationMode>,
    /// IoU threshold for overlap association.
    #[arg(long, global = true)]
    pub association_iou: Option<f64>,
}

/// Stdout writes that tolerate a closed pipe (`pcr ... | head`).
macro_rules! emit_raw {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = write!(std::io::stdout().lock(), $($arg)*);
    }};
}

macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn parse_association(s: &str) -> std::result::Result<AssociationMode, String> {
    match s {
        "suppression" => Ok(AssociationMode::Suppression),
        "overlap" => Ok(AssociationMode::Overlap),
        _ => Err(format!("expected `suppression` or `overlap`, got `{s}`")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic meta-dataset.
    Synth(SynthArgs),
    /// Score a dump, or every dump of a manifest.
    Score(ScoreArgs),
    /// COCO-style mAP of a dump with ground truth.
    EvalMap(EvalMapArgs),
    /// Fit a regression model on dataset summaries.
    Fit(FitArgs),
    /// Apply a fitted model to dataset summaries.
    Estimate(EstimateArgs),
    /// Leave-one-out comparison of methods.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; must not already contain the datasets.
    #[arg(long)]
    pub out: PathBuf,
    /// Images per dataset.
    #[arg(long, default_value_t = 100)]
    pub images: usize,
    /// JSON list of sources replacing the default bank (ignores --seed and --images).
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// JSON list of degradation variants replacing the default ten.
    #[arg(long)]
    pub variants: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// A detection dump (JSONL).
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// A meta-dataset manifest; writes one summary per dataset.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset id recorded in the summary (default: the dump's file stem).
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalMapArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Regression target: map, map50 or map75.
    #[arg(long, default_value = "map")]
    pub target: MapTarget,
    /// Drop untransformed (severity 0) summaries from training.
    #[arg(long)]
    pub exclude_untransformed: bool,
    /// Fit a piecewise model split at this mAP.
    #[arg(long, value_name = "THRESHOLD", num_args = 0..=1, default_missing_value = "0.05")]
    pub piecewise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Summaries JSON written by `score --manifest`.
    #[arg(long)]
    pub summaries: PathBuf,
    /// Named method or `+`-joined features.
    #[arg(long, default_value = "pcr")]
    pub method: Method,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A summary JSON (one object or a list).
    #[arg(long)]
    pub summary: PathBuf,
    /// Expected feature set; rejected if the model was fit on another.
    #[arg(long)]
    pub method: Option<Method>,
    /// Also write the estimates as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Summaries JSON, one per column. Repeatable.
    #[arg(long, required = true)]
    pub summaries: Vec<PathBuf>,
    /// Column labels (default: parent directory or file stem).
    #[arg(long)]
    pub label: Vec<String>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',', default_values = ["pcr", "ps", "es", "ac", "atc"])]
    pub methods: Vec<Method>,
    /// One column per severity, training only on that severity.
    #[arg(long)]
    pub by_severity: bool,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Also write the table and per-method reports as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ParamOverrides {
    fn apply(&self, config: &mut ScoreConfig) {
        let p = &mut config.pcr;
        p.c = self.c.unwrap_or(p.c);
        p.k_c = self.k_c.unwrap_or(p.k_c);
        p.k_r = self.k_r.unwrap_or(p.k_r);
        p.alpha = self.alpha.unwrap_or(p.alpha);
        p.clamp_cc &= !self.raw_cc;
        p.dedup_numerator |= self.dedup_numerator;
        let post = &mut config.post;
        post.iou_threshold = self.nms_iou.unwrap_or(post.iou_threshold);
        post.score_floor = self.score_floor.unwrap_or(post.score_floor);
        post.association = self.association.unwrap_or(post.association);
        post.association_iou = self.association_iou.or(post.association_iou);
    }
}

fn score_config(cli: &Cli) -> Result<ScoreConfig> {
    let mut config = match &cli.params {
        None => ScoreConfig::default(),
        Some(p) if p.trim_start().starts_with('{') => serde_json::from_str(p).map_err(|e| Error::InvalidParam {
            name: "params",
            message: e.to_string(),
        })?,
        Some(p) => read_json(Path::new(p))?,
    };
    cli.overrides.apply(&mut config);
    config.pcr.validate()?;
    config.post.validate()?;
    Ok(config)
}

fn read_summaries(path: &Path) -> Result<Vec<DatasetSummary>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<DatasetSummary>),
        One(Box<DatasetSummary>),
    }
    Ok(match read_json(path)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(s) => vec![*s],
    })
}

fn loo_options(t: &TargetArgs, severity: Option<u8>) -> LooOptions {
    LooOptions {
        target: t.target,
        exclude_untransformed: t.exclude_untransformed,
        piecewise: t.piecewise,
        severity,
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let bank = match &args.bank {
        Some(p) => read_json(p)?,
        None => SourceSpec::default_bank(cli.seed, args.images),
    };
    let variants = match &args.variants {
        Some(p) => read_json(p)?,
        None => Variant::default_set(),
    };
    let manifest = build_meta(&bank, &variants, &args.out)?;
    emit!(
        "wrote {} datasets from {} sources to {}",
        manifest.datasets.len(),
        manifest.sources.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_score(config: &ScoreConfig, args: &ScoreArgs) -> Result<()> {
    if let Some(manifest) = &args.manifest {
        let summaries = summarize_manifest(manifest, config)?;
        let path = args.out.join("summaries.json");
        write_json(&path, &summaries)?;
        emit!("wrote {} summaries to {}", summaries.len(), path.display());
        return Ok(());
    }
    let input = args.input.as_ref().expect("clap requires input or manifest");
    let records = read_dump_all(input)?;
    let id = args.id.clone().unwrap_or_else(|| {
        input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let (scores, summary) = summarize_records(&records, config, &id)?;
    let mut lines = Vec::new();
    for s in &scores {
        serde_json::to_writer(&mut lines, s).expect("serializable scores");
        lines.push(b'\n');
    }
    write_atomic(&args.out.join("scores.jsonl"), &lines)?;
    write_json(&args.out.join("summary.json"), &summary)?;
    emit!(
        "{}: {} images  consistency {:.4}  reliability {:.4}",
        summary.dataset_id, summary.n_images, summary.consistency, summary.reliability
    );
    Ok(())
}

fn cmd_eval_map(config: &ScoreConfig, args: &EvalMapArgs) -> Result<()> {
    let records: Vec<_> = read_dump_all(&args.input)?
        .iter()
        .map(|r| r.resolve(&config.post))
        .collect();
    let report = evaluate_map(&records)?;
    emit_raw!("{report}");
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let summaries = read_summaries(&args.summaries)?;
    let train: Vec<&DatasetSummary> = summaries
        .iter()
        .filter(|s| !(args.target.exclude_untransformed && s.severity == Some(0)))
        .collect();
    let model = match args.target.piecewise {
        Some(t) => {
            let (rows, targets) = design(&train, &args.method.features, args.target.target)?;
            fit_piecewise(&rows, &targets, &args.method.features, t)?
        }
        None => fit_summaries(&train, &args.method.features, args.target.target)?,
    };
    write_json(&args.out, &model)?;
    emit!(
        "fit {} on {} summaries: weights {:?}",
        args.method,
        train.len(),
        model.weights
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct Estimate {
    dataset_id: String,
    estimate: f64,
    estimate_raw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_map: Option<f64>,
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let model: RegressionModel = read_json(&args.model)?;
    if let Some(m) = &args.method {
        if m.features != model.feature_names {
            return Err(Error::FeatureMismatch {
                expected: model.feature_names.clone(),
                got: m.features.clone(),
            });
        }
    }
    let estimates = read_summaries(&args.summary)?
        .iter()
        .map(|s| {
            let raw = model.predict(s)?;
            Ok(Estimate {
                dataset_id: s.dataset_id.clone(),
                estimate: clamp_estimate(raw),
                estimate_raw: raw,
                true_map: s.true_map,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for e in &estimates {
        emit!("{}\t{:.4}", e.dataset_id, e.estimate);
    }
    if let Some(out) = &args.out {
        write_json(out, &estimates)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportOutput {
    table: ReportTable,
    /// `reports[c][m]`: column `c`, method `m`.
    reports: Vec<Vec<EvalReport>>,
}

fn column_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(dir) if stem == "summaries" => dir.to_string_lossy().into_owned(),
        _ => stem,
    }
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    if !args.label.is_empty() && args.label.len() != args.summaries.len() {
        return Err(Error::InvalidParam {
            name: "label",
            message: format!("{} labels for {} summaries files", args.label.len(), args.summaries.len()),
        });
    }
    let mut columns = Vec::new();
    let mut runs = Vec::new();
    for (i, path) in args.summaries.iter().enumerate() {
        let summaries = read_summaries(path)?;
        let label = args.label.get(i).cloned().unwrap_or_else(|| column_label(path));
        if args.by_severity {
            let mut severities: Vec<u8> = summaries.iter().filter_map(|s| s.severity).filter(|&s| s > 0).collect();
            severities.sort_unstable();
            severities.dedup();
            for sev in severities {
                let name = if args.summaries.len() > 1 { format!("{label}:s{sev}") } else { format!("s{sev}") };
                columns.push(name);
                runs.push((summaries.clone(), Some(sev)));
            }
        } else {
            columns.push(label);
            runs.push((summaries, None));
        }
    }
    let reports: Vec<Vec<EvalReport>> = runs
        .iter()
        .map(|(summaries, sev)| {
            args.methods
                .iter()
                .map(|m| leave_one_out(summaries, m, &loo_options(&args.target, *sev)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let names: Vec<String> = args.methods.iter().map(|m| m.name.clone()).collect();
    let rmse = (0..names.len())
        .map(|m| reports.iter().map(|col| col[m].rmse).collect())
        .collect();
    let table = ReportTable::new(columns, &names, rmse);
    emit_raw!("{table}");
    if let Some(out) = &args.out {
        write_json(out, &ReportOutput { table, reports })?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = score_config(cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Score(a) => cmd_score(&config, a),
        Command::EvalMap(a) => cmd_eval_map(&config, a),
        Command::Fit(a) => cmd_fit(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Report(a) => cmd_report(a),
    }
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
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.jobs {
        Some(0) => Err(Error::InvalidParam {
            name: "jobs",
            message: "must be positive".into(),
        }),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::InvalidParam {
                name: "jobs",
                message: e.to_string(),
            }),
        },
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
