use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use idtrace_core::captioner::run_pipeline;
use idtrace_core::dataset::{load_dataset, load_predictions, write_atomic, write_dataset, synthesize_clip, PredictionFile};
use idtrace_core::extraction::{judge_by_name, Criterion, Extractor, Judge};
use idtrace_core::gateway::{mock, BackendKind, Gateway};
use idtrace_core::metrics::{
    aggregate_reports, evaluate_batch, evaluate_clip, gpt_score, render_report, split_sub_sentences,
    text_coverage, AggregateReport, ClipPair, CoverageInput, IdMatchReport,
};
use idtrace_core::prompt::PromptSet;
use idtrace_core::render::{clip_caption, DescriptionStyle};
use idtrace_core::sfslab::{
    builtin_formats, evaluate_sfs_strength, generate_pairs, judge_criterion_bench, load_formats,
    resume_search, search_sfs, FeatureCatalog, SceneFormat, SearchConfig, SearchState, SfsError,
};
use idtrace_core::{par, AnnotatedClip, IdSequence};
use serde::{Deserialize, Serialize};

use crate::args::{
    CaptionArgs, Command, EvaluateArgs, ExtractArgs, JudgeBenchArgs, LabInputs, ReportArgs, ReportFormat,
    ScoreArgs, SfsEvalArgs, SfsSearchArgs, SynthArgs,
};
use crate::config::RunConfig;
use crate::report::{self, METRICS_FILE};
use crate::{CliError, ErrorKind, Outcome};

type CmdResult = Result<Outcome, CliError>;

pub(crate) fn dispatch(command: &Command, config: &RunConfig) -> CmdResult {
    match command {
        Command::Evaluate(a) => evaluate(a, config),
        Command::Extract(a) => extract(a, config),
        Command::Caption(a) => caption(a, config),
        Command::SfsSearch(a) => sfs_search(a, config),
        Command::SfsEval(a) => sfs_eval(a, config),
        Command::JudgeBench(a) => judge_bench(a, config),
        Command::Score(a) => score(a, config),
        Command::Report(a) => report_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Rerun(_) => Err(CliError::Usage(anyhow!("rerun cannot be nested"))),
    }
}

/// A clip id made safe for use as a file name.
fn file_stem(clip_id: &str) -> String {
    clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .usage()
}

fn prompts(config: &RunConfig) -> Result<PromptSet, CliError> {
    match &config.prompts {
        Some(dir) => PromptSet::with_overrides(dir).usage(),
        None => Ok(PromptSet::builtin()),
    }
}

/// Builds the configured gateway. Mock backends get the clips so they
/// can answer from the ground truth.
fn gateway(config: &RunConfig, clips: Option<&[AnnotatedClip]>) -> Result<Gateway, CliError> {
    let g = &config.gateway;
    match &g.backend {
        BackendKind::Mock(name) => Gateway::with_backend(g, mock::builtin(name, clips).usage()?).usage(),
        _ => Gateway::new(g).usage(),
    }
}

fn stats(gw: &Gateway) -> Option<serde_json::Value> {
    serde_json::to_value(gw.stats()).ok()
}

fn load_clips(path: &Path, config: &RunConfig) -> Result<Vec<AnnotatedClip>, CliError> {
    load_dataset(path, config.missing_images).usage()
}

fn load_catalog(path: Option<&Path>) -> Result<FeatureCatalog, CliError> {
    match path {
        Some(p) => FeatureCatalog::load(p).usage(),
        None => Ok(FeatureCatalog::builtin()),
    }
}

fn load_lab(lab: &LabInputs) -> Result<(FeatureCatalog, Vec<SceneFormat>), CliError> {
    let catalog = load_catalog(lab.catalog.as_deref())?;
    let formats = match &lab.formats {
        Some(p) => load_formats(p).usage()?,
        None => builtin_formats(),
    };
    Ok((catalog, formats))
}

/// Pairs every clip with its entry from `items`. Ids present on only one
/// side are an error under `strict`, otherwise they are skipped with a
/// warning.
fn pair_up<'c, T>(
    clips: &'c [AnnotatedClip],
    mut items: BTreeMap<String, T>,
    what: &str,
    strict: bool,
) -> Result<Vec<(&'c AnnotatedClip, T)>, CliError> {
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for clip in clips {
        match items.remove(&clip.clip_id) {
            Some(item) => pairs.push((clip, item)),
            None => missing.push(clip.clip_id.clone()),
        }
    }
    let extra: Vec<String> = items.into_keys().collect();
    if strict && !(missing.is_empty() && extra.is_empty()) {
        return Err(CliError::Usage(anyhow!(
            "clip ids differ: no {what} for [{}]; {what} for unknown clips [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    for id in &missing {
        log::warn!("clip {id}: no {what}, skipped");
    }
    for id in &extra {
        log::warn!("{what} for unknown clip {id}, skipped");
    }
    Ok(pairs)
}

#[derive(Deserialize)]
struct CaptionRecord {
    clip_id: String,
    caption: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CaptionDoc {
    One(CaptionRecord),
    Many(Vec<CaptionRecord>),
    Map(BTreeMap<String, String>),
}

fn parse_captions(path: &Path, out: &mut BTreeMap<String, String>) -> anyhow::Result<()> {
    let doc: CaptionDoc = read_json(path)?;
    let records = match doc {
        CaptionDoc::One(r) => vec![(r.clip_id, r.caption)],
        CaptionDoc::Many(v) => v.into_iter().map(|r| (r.clip_id, r.caption)).collect(),
        CaptionDoc::Map(m) => m.into_iter().collect(),
    };
    for (id, caption) in records {
        if out.insert(id.clone(), caption).is_some() {
            anyhow::bail!("{}: duplicate caption for clip {id}", path.display());
        }
    }
    Ok(())
}

/// Captions keyed by clip id, from one JSON file (a record, a list of
/// records or an id → text map) or a directory of such files.
fn load_captions(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            parse_captions(&f, &mut out)?;
        }
    } else {
        parse_captions(path, &mut out)?;
    }
    Ok(out)
}

fn print_scores(agg: &AggregateReport) {
    println!("{:<8}{:>10}{:>10}{:>12}", "", "precision", "recall", "similarity");
    for (name, b) in [("pooled", agg.pooled), ("macro", agg.macro_avg)] {
        println!("{name:<8}{:>10.3}{:>10.3}{:>12.3}", b.precision, b.recall, b.sequence_similarity);
    }
    println!("clips: {}", agg.clips);
}

fn write_metrics(out: &Path, reports: &[IdMatchReport]) -> Result<AggregateReport, CliError> {
    let agg = aggregate_reports(reports).failed()?;
    let text = render_report(reports, &agg).usage()?;
    write_atomic(&out.join(METRICS_FILE), text.as_bytes()).failed()?;
    Ok(agg)
}

fn write_failures(out: &Path, failures: &[String]) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    write_json(&out.join("failures.json"), failures).failed()
}

fn evaluate(a: &EvaluateArgs, config: &RunConfig) -> CmdResult {
    let clips = load_clips(&a.dataset, config)?;
    let mut preds = BTreeMap::new();
    for p in load_predictions(&a.predictions).usage()? {
        let seqs = p.sequences().usage()?;
        if preds.insert(p.clip_id.clone(), seqs).is_some() {
            return Err(CliError::Usage(anyhow!("duplicate predictions for clip {}", p.clip_id)));
        }
    }
    let pairs = pair_up(&clips, preds, "predictions", a.strict)?;
    let batch: Vec<ClipPair> = pairs
        .iter()
        .map(|(c, p)| ClipPair {
            clip_id: &c.clip_id,
            predicted: p,
            ground_truth: &c.ground_truth,
        })
        .collect();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, c) in evaluate_batch(config.execution, &batch).into_iter().zip(&batch) {
        match r {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(format!("{}: {e}", c.clip_id)),
        }
    }
    if reports.is_empty() {
        return Err(CliError::Failed(anyhow!("no clip could be evaluated")));
    }
    create_out(&a.out)?;
    let agg = write_metrics(&a.out, &reports)?;
    write_failures(&a.out, &failures)?;
    print_scores(&agg);
    Ok(Outcome {
        failures,
        label: a.label.clone(),
        gateway: None,
    })
}

fn make_judge<'a>(config: &RunConfig, gw: &'a Gateway, prompts: &'a PromptSet) -> Result<Box<dyn Judge + 'a>, CliError> {
    let p = &config.pipeline;
    if !(p.threshold > 0.0 && p.threshold <= 1.0) {
        return Err(CliError::Usage(anyhow!("threshold must lie in (0, 1], got {}", p.threshold)));
    }
    judge_by_name(&p.judge, gw, prompts, p.judge_criterion)
        .ok_or_else(|| CliError::Usage(anyhow!("unknown judge '{}' (expected llm, exact, overlap, profile or token)", p.judge)))
}

fn write_predictions(out: &Path, clip_id: &str, seqs: &[IdSequence]) -> anyhow::Result<()> {
    let p = PredictionFile::from_sequences(clip_id, seqs);
    write_json(&out.join("predictions").join(format!("{}.json", file_stem(clip_id))), &p)
}

fn extract(a: &ExtractArgs, config: &RunConfig) -> CmdResult {
    let clips = load_clips(&a.dataset, config)?;
    let captions = load_captions(&a.captions).usage()?;
    let pairs = pair_up(&clips, captions, "caption", a.strict)?;
    let prompts = prompts(config)?;
    let gw = gateway(config, Some(&clips))?;
    let judge = make_judge(config, &gw, &prompts)?;
    let ex = Extractor {
        gateway: &gw,
        prompts: &prompts,
        judge: judge.as_ref(),
        threshold: config.pipeline.threshold,
        criterion: config.pipeline.judge_criterion,
    };
    create_out(&a.out)?;
    let results = par::map(config.execution, &pairs, |(clip, caption)| ex.run(caption, clip));
    let mut failures = Vec::new();
    for ((clip, _), r) in pairs.iter().zip(results) {
        match r {
            Ok(x) => {
                write_predictions(&a.out, &clip.clip_id, &x.sequences).failed()?;
                x.write_audit(&a.out.join("audit").join(file_stem(&clip.clip_id))).failed()?;
            }
            Err(e) => failures.push(format!("{}: {e}", clip.clip_id)),
        }
    }
    write_failures(&a.out, &failures)?;
    println!("extracted {} of {} clip(s)", pairs.len() - failures.len(), pairs.len());
    Ok(Outcome {
        failures,
        label: None,
        gateway: stats(&gw),
    })
}

fn caption(a: &CaptionArgs, config: &RunConfig) -> CmdResult {
    let clips = load_clips(&a.dataset, config)?;
    let catalog = load_catalog(a.catalog.as_deref())?;
    let mut pc = config.pipeline.clone();
    if pc.sfs.is_empty() {
        pc.sfs = catalog.sfs.clone();
    }
    catalog.with_sfs(pc.sfs.clone()).usage()?;
    pc.validate().usage()?;
    let prompts = prompts(config)?;
    let gw = gateway(config, Some(&clips))?;
    make_judge(config, &gw, &prompts)?;
    create_out(&a.out)?;
    let results = par::map(config.execution, &clips, |clip| run_pipeline(clip, &pc, &prompts, &gw, config.execution));
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for (clip, r) in clips.iter().zip(results) {
        let stem = file_stem(&clip.clip_id);
        match r {
            Ok(o) => {
                write_json(&a.out.join("captions").join(format!("{stem}.json")), &o.caption).failed()?;
                write_predictions(&a.out, &clip.clip_id, &o.sequences).failed()?;
                o.audit.write(&a.out.join("audit").join(&stem)).failed()?;
                for e in &o.audit.errors {
                    failures.push(format!("{}: {} stage: {}", clip.clip_id, e.stage, e.message));
                }
                match evaluate_clip(&clip.clip_id, &o.sequences, &clip.ground_truth) {
                    Ok(r) => reports.push(r),
                    Err(e) => log::warn!("clip {}: not scored: {e}", clip.clip_id),
                }
            }
            Err(e) => failures.push(format!("{}: {e}", clip.clip_id)),
        }
    }
    if !reports.is_empty() {
        let agg = write_metrics(&a.out, &reports)?;
        print_scores(&agg);
    }
    write_failures(&a.out, &failures)?;
    Ok(Outcome {
        failures,
        label: Some(a.label.clone().unwrap_or_else(|| pc.mode.to_string())),
        gateway: stats(&gw),
    })
}

#[derive(Serialize)]
struct SfsResult<'a> {
    sfs: &'a [String],
    trace_hash: String,
    rounds: usize,
    pruned: usize,
}

fn sfs_search(a: &SfsSearchArgs, config: &RunConfig) -> CmdResult {
    let (catalog, formats) = load_lab(&a.lab)?;
    let prompts = prompts(config)?;
    let sc = SearchConfig {
        catalog: &catalog,
        formats: &formats,
        budget: config.search.clone(),
        prune: config.prune,
        judge_prompt: prompts.get("sfs_trial").usage()?,
        execution: config.execution,
    };
    let resume: Option<SearchState> = a.resume.as_deref().map(read_json).transpose().usage()?;
    let gw = gateway(config, None)?;
    let result = match resume {
        Some(state) => resume_search(&sc, &gw, state),
        None => search_sfs(&sc, &gw),
    };
    create_out(&a.out)?;
    let state_path = a.out.join("state.json");
    let mut failures = Vec::new();
    match result {
        Ok(outcome) => {
            write_json(&state_path, &outcome.state).failed()?;
            let summary = SfsResult {
                sfs: &outcome.sfs,
                trace_hash: outcome.state.trace_hash(),
                rounds: outcome.state.rounds.len(),
                pruned: outcome.state.pruned.len(),
            };
            write_json(&a.out.join("sfs.json"), &summary).failed()?;
            println!("sfs ({}): {}", outcome.sfs.len(), outcome.sfs.join(", "));
            println!("trace hash: {}", summary.trace_hash);
        }
        Err(SfsError::Interrupted { source, state }) => {
            write_json(&state_path, &state).failed()?;
            failures.push(format!(
                "search interrupted in round {}: {source}; continue with --resume {}",
                state.n,
                state_path.display()
            ));
        }
        Err(e @ (SfsError::Catalog(_) | SfsError::Spec(_) | SfsError::Prompt(_))) => return Err(CliError::Usage(e.into())),
        Err(e) => return Err(CliError::Failed(e.into())),
    }
    Ok(Outcome {
        failures,
        label: None,
        gateway: stats(&gw),
    })
}

fn sfs_eval(a: &SfsEvalArgs, config: &RunConfig) -> CmdResult {
    let (catalog, formats) = load_lab(&a.lab)?;
    let sfs = a.sfs.clone().unwrap_or_else(|| catalog.sfs.clone());
    catalog.with_sfs(sfs.clone()).usage()?;
    let prompts = prompts(config)?;
    let gw = gateway(config, None)?;
    let scores = evaluate_sfs_strength(
        &sfs,
        &catalog,
        &formats,
        &config.strength,
        prompts.get("sfs_trial").usage()?,
        &gw,
        config.execution,
    )
    .failed()?;
    create_out(&a.out)?;
    #[derive(Serialize)]
    struct Doc<'a, S> {
        sfs: &'a [String],
        scores: S,
    }
    write_json(&a.out.join("strength.json"), &Doc { sfs: &sfs, scores: &scores }).failed()?;
    println!("{:<18}{:>8}", "mode", "score");
    for (name, v) in [("base", scores.base), ("mixture", scores.mixture), ("mixture contrast", scores.mixture_contrast)] {
        println!("{name:<18}{v:>8.3}");
    }
    println!("trials: {} ({} excluded)", scores.trials, scores.excluded);
    Ok(Outcome {
        failures: Vec::new(),
        label: None,
        gateway: stats(&gw),
    })
}

fn judge_bench(a: &JudgeBenchArgs, config: &RunConfig) -> CmdResult {
    let (catalog, _) = load_lab(&a.lab)?;
    let criteria: Vec<Criterion> = if a.criterion.is_empty() { Criterion::ALL.to_vec() } else { a.criterion.clone() };
    let pairs = generate_pairs(&catalog, &config.pairs).usage()?;
    let prompts = prompts(config)?;
    let gw = gateway(config, None)?;
    create_out(&a.out)?;
    write_json(&a.out.join("pairs.json"), &pairs).failed()?;
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for c in criteria {
        match judge_criterion_bench(&pairs, c, &prompts, &gw, config.execution) {
            Ok(r) => results.push(r),
            Err(e) => failures.push(format!("{c:?}: {e}")),
        }
    }
    write_json(&a.out.join("bench.json"), &results).failed()?;
    write_failures(&a.out, &failures)?;
    println!("{:<14}{:>10}{:>10}", "criterion", "precision", "recall");
    for r in &results {
        println!("{:<14}{:>10.3}{:>10.3}", r.criterion, r.precision, r.recall);
    }
    Ok(Outcome {
        failures,
        label: None,
        gateway: stats(&gw),
    })
}

#[derive(Serialize)]
struct ClipScore {
    clip_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    gpt_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    raw: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn score(a: &ScoreArgs, config: &RunConfig) -> CmdResult {
    if !(a.rho > 0.0 && a.rho <= 1.0) {
        return Err(CliError::Usage(anyhow!("rho must lie in (0, 1], got {}", a.rho)));
    }
    let clips = load_clips(&a.dataset, config)?;
    let captions = load_captions(&a.captions).usage()?;
    let references = a.references.as_deref().map(load_captions).transpose().usage()?;
    let pairs = pair_up(&clips, captions, "caption", a.strict)?;
    let prompts = prompts(config)?;
    let rubric = prompts.get("gpt_score").usage()?;
    let gw = gateway(config, Some(&clips))?;
    let mut jobs = Vec::new();
    for (clip, caption) in pairs {
        let reference = match &references {
            Some(r) => match r.get(&clip.clip_id) {
                Some(t) => t.clone(),
                None => {
                    log::warn!("clip {}: no reference caption, skipped", clip.clip_id);
                    continue;
                }
            },
            None => clip_caption(clip, &DescriptionStyle::Full),
        };
        jobs.push((clip.clip_id.clone(), caption, reference));
    }
    let scored = par::map(config.execution, &jobs, |(id, caption, reference)| {
        let mut s = ClipScore {
            clip_id: id.clone(),
            gpt_score: None,
            raw: None,
            coverage: None,
            error: None,
        };
        match gpt_score(caption, reference, &gw, rubric) {
            Ok(g) => {
                s.gpt_score = Some(g.score);
                s.raw = Some(g.raw);
            }
            Err(e) => s.error = Some(e.to_string()),
        }
        if !a.no_coverage && s.error.is_none() {
            let input = CoverageInput::from_caption(split_sub_sentences(reference), caption, a.rho);
            match text_coverage(&input, &gw) {
                Ok(c) => s.coverage = Some(c),
                Err(e) => s.error = Some(e.to_string()),
            }
        }
        s
    });
    let failures: Vec<String> = scored
        .iter()
        .filter_map(|s| s.error.as_ref().map(|e| format!("{}: {e}", s.clip_id)))
        .collect();
    #[derive(Serialize)]
    struct Doc<'a> {
        clips: &'a [ClipScore],
        mean_gpt_score: Option<f64>,
        mean_coverage: Option<f64>,
    }
    let doc = Doc {
        clips: &scored,
        mean_gpt_score: mean(scored.iter().filter_map(|s| s.gpt_score)),
        mean_coverage: mean(scored.iter().filter_map(|s| s.coverage)),
    };
    create_out(&a.out)?;
    write_json(&a.out.join("scores.json"), &doc).failed()?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    println!("mean score: {}  mean coverage: {}", fmt(doc.mean_gpt_score), fmt(doc.mean_coverage));
    Ok(Outcome {
        failures,
        label: None,
        gateway: stats(&gw),
    })
}

fn report_cmd(a: &ReportArgs) -> CmdResult {
    let rows = report::collect(&a.runs).usage()?;
    let (text, name) = match a.format {
        ReportFormat::Table => (report::render_table(&rows), "report.txt"),
        ReportFormat::Csv => (report::to_csv(&rows).failed()?, "report.csv"),
    };
    print!("{text}");
    if let Some(out) = &a.out {
        create_out(out)?;
        write_atomic(&out.join(name), text.as_bytes()).failed()?;
    }
    Ok(Outcome::default())
}

fn synth(a: &SynthArgs) -> CmdResult {
    if a.clips == 0 {
        return Err(CliError::Usage(anyhow!("--clips must be at least 1")));
    }
    let clips = (0..a.clips)
        .map(|i| synthesize_clip(a.seed.wrapping_add(i), a.frames, a.ids, a.rate))
        .collect::<Result<Vec<_>, _>>()
        .usage()?;
    create_out(&a.out)?;
    write_dataset(&a.out.join("dataset.json"), &clips).failed()?;
    println!("wrote {} clip(s) to {}", clips.len(), a.out.join("dataset.json").display());
    Ok(Outcome::default())
}
