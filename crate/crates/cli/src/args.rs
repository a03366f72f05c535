use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use idtrace_core::captioner::CaptionMode;
use idtrace_core::extraction::Criterion;
use idtrace_core::gateway::BackendKind;
use idtrace_core::Execution;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "idtrace", version, about = "Identity-consistency tooling for long-video captions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Each one overrides the matching
/// value from `--config`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GlobalArgs {
    /// TOML configuration file
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Model backend: http_chat, replay or mock:<name>
    #[arg(long, global = true, value_name = "KIND")]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Base URL of an OpenAI-compatible API
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Fixture directory; model responses are recorded here and read back
    /// by the replay backend
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Maximum concurrent model requests
    #[arg(long, global = true, value_name = "N")]
    pub in_flight: Option<usize>,
    /// parallel or sequential
    #[arg(long, global = true, value_name = "MODE")]
    pub execution: Option<Execution>,
    /// Directory of prompt overrides, one <name>.txt per template
    #[arg(long, global = true, value_name = "DIR")]
    pub prompts: Option<PathBuf>,
    /// Log more on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Score predicted identity sequences against the dataset's ground truth
    Evaluate(EvaluateArgs),
    /// Turn free-text captions into per-identity frame sequences
    Extract(ExtractArgs),
    /// Caption every clip in one of the captioning modes
    Caption(CaptionArgs),
    /// Search the feature catalog for a strong feature set
    SfsSearch(SfsSearchArgs),
    /// Measure how well a feature set keeps people re-identifiable
    SfsEval(SfsEvalArgs),
    /// Precision and recall of the pair judge under each criterion
    JudgeBench(JudgeBenchArgs),
    /// Model-judged caption score and text coverage against references
    Score(ScoreArgs),
    /// Compare the metrics of several runs
    Report(ReportArgs),
    /// Write a synthetic dataset manifest
    Synth(SynthArgs),
    /// Re-execute a recorded run against its fixtures and compare outputs
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Prediction file or directory of prediction files
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Fail when the clip ids of the two inputs differ
    #[arg(long)]
    pub strict: bool,
    /// Row name used by `report`
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct JudgeOptions {
    /// llm, exact, overlap, profile or token
    #[arg(long)]
    pub judge: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// features, actions, environment or unrestricted
    #[arg(long)]
    pub criterion: Option<Criterion>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Caption file (JSON map or records) or directory of caption files
    #[arg(long, value_name = "PATH")]
    pub captions: PathBuf,
    #[command(flatten)]
    pub judge: JudgeOptions,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CaptionArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// st, mtsc_text, mtsc_notext, mtdc, rice or baseline
    #[arg(long)]
    pub mode: Option<CaptionMode>,
    /// Frames per window in rice mode
    #[arg(long, value_name = "N")]
    pub window: Option<u32>,
    /// Feature catalog JSON; the built-in catalog when omitted
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Comma-separated feature set; the catalog's own set when omitted
    #[arg(long, value_delimiter = ',')]
    pub sfs: Option<Vec<String>>,
    #[command(flatten)]
    pub judge: JudgeOptions,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LabInputs {
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Scene-format JSON; the built-in formats when omitted
    #[arg(long, value_name = "FILE")]
    pub formats: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SfsSearchArgs {
    #[command(flatten)]
    pub lab: LabInputs,
    /// Largest combination size
    #[arg(long, value_name = "N")]
    pub max_n: Option<usize>,
    /// Continue from a state file written by an interrupted search
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SfsEvalArgs {
    #[command(flatten)]
    pub lab: LabInputs,
    #[arg(long, value_delimiter = ',')]
    pub sfs: Option<Vec<String>>,
    /// Trials per scene format and mode
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct JudgeBenchArgs {
    #[command(flatten)]
    pub lab: LabInputs,
    /// Criteria to benchmark; all of them when omitted
    #[arg(long, value_delimiter = ',')]
    pub criterion: Vec<Criterion>,
    #[arg(long, value_name = "N")]
    pub pairs: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub captions: PathBuf,
    /// Reference captions; rendered from the ground truth when omitted
    #[arg(long, value_name = "PATH")]
    pub references: Option<PathBuf>,
    /// Cosine threshold for text coverage
    #[arg(long, default_value_t = 0.7)]
    pub rho: f64,
    #[arg(long)]
    pub no_coverage: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    /// Run directories holding run.json and metrics.json
    #[arg(long, required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Also write the report into this directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub clips: u64,
    #[arg(long, default_value_t = 30)]
    pub frames: u32,
    #[arg(long, default_value_t = 8)]
    pub ids: u32,
    /// Probability that an identity appears in a given frame
    #[arg(long, default_value_t = 0.5)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// run.json of the recorded run
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evaluate(_) => "evaluate",
            Command::Extract(_) => "extract",
            Command::Caption(_) => "caption",
            Command::SfsSearch(_) => "sfs-search",
            Command::SfsEval(_) => "sfs-eval",
            Command::JudgeBench(_) => "judge-bench",
            Command::Score(_) => "score",
            Command::Report(_) => "report",
            Command::Synth(_) => "synth",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn out_dir(&self) -> Option<&Path> {
        Some(match self {
            Command::Evaluate(a) => &a.out,
            Command::Extract(a) => &a.out,
            Command::Caption(a) => &a.out,
            Command::SfsSearch(a) => &a.out,
            Command::SfsEval(a) => &a.out,
            Command::JudgeBench(a) => &a.out,
            Command::Score(a) => &a.out,
            Command::Report(a) => return a.out.as_deref(),
            Command::Synth(a) => &a.out,
            Command::Rerun(a) => &a.out,
        })
    }

    pub fn set_out(&mut self, dir: PathBuf) {
        match self {
            Command::Evaluate(a) => a.out = dir,
            Command::Extract(a) => a.out = dir,
            Command::Caption(a) => a.out = dir,
            Command::SfsSearch(a) => a.out = dir,
            Command::SfsEval(a) => a.out = dir,
            Command::JudgeBench(a) => a.out = dir,
            Command::Score(a) => a.out = dir,
            Command::Report(a) => a.out = Some(dir),
            Command::Synth(a) => a.out = dir,
            Command::Rerun(a) => a.out = dir,
        }
    }

    /// Files and directories the command reads.
    pub fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self {
            Command::Evaluate(a) => v.extend([a.dataset.as_path(), a.predictions.as_path()]),
            Command::Extract(a) => v.extend([a.dataset.as_path(), a.captions.as_path()]),
            Command::Caption(a) => {
                v.push(&a.dataset);
                v.extend(a.catalog.as_deref());
            }
            Command::SfsSearch(a) => {
                v.extend(a.lab.catalog.as_deref());
                v.extend(a.lab.formats.as_deref());
                v.extend(a.resume.as_deref());
            }
            Command::SfsEval(a) => {
                v.extend(a.lab.catalog.as_deref());
                v.extend(a.lab.formats.as_deref());
            }
            Command::JudgeBench(a) => v.extend(a.lab.catalog.as_deref()),
            Command::Score(a) => {
                v.extend([a.dataset.as_path(), a.captions.as_path()]);
                v.extend(a.references.as_deref());
            }
            Command::Report(a) => v.extend(a.runs.iter().map(PathBuf::as_path)),
            Command::Synth(_) => {}
            Command::Rerun(a) => v.push(&a.manifest),
        }
        v
    }
}
