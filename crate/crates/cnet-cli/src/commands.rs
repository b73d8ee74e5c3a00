//! Command implementations. Every command reads an [`ExperimentConfig`],
//! works inside its `output_dir`, and is deterministic for fixed seeds:
//! re-running writes byte-identical files except for wall-time fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use cnet::datapipe::{
    chunk_by_time, dedup, load_csv, make_groups, normalize_range, relevancy_scores, smote,
    stratified_split, Dataset, GroupOrder,
};
use cnet::evalkit::{
    compare_report, confusion, metrics, multi_run, ComparisonTable, MetricsReport, RunMetrics,
};
use cnet::growth::{ifl_feature_groups, ifl_transfer, refit, GrowthTrace};
use cnet::netgraph::NetworkGraph;
use cnet::traincore::{train, Criterion, TrainResult};
use cnet::Error;

use crate::config::ExperimentConfig;

/// A library error tagged with the pipeline stage it happened in. The stage
/// both prefixes the message and decides the exit code for contract errors.
#[derive(Debug)]
pub struct CliError {
    pub stage: String,
    pub training: bool,
    pub source: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.source)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            Error::Io { .. } => 2,
            Error::Csv(_) | Error::CsvCell { .. } | Error::Format(_) | Error::Json(_)
            | Error::EmptyDataset(_) => 3,
            _ if self.training => 4,
            _ => 2,
        }
    }
}

type CmdResult<T> = std::result::Result<T, CliError>;

/// Tags errors from a non-training stage (exit 2 for contract errors).
fn stage<T>(name: &str, r: cnet::Result<T>) -> CmdResult<T> {
    r.map_err(|source| CliError { stage: name.into(), training: false, source })
}

/// Tags errors from a training stage (exit 4 for contract errors).
fn training<T>(name: &str, r: cnet::Result<T>) -> CmdResult<T> {
    r.map_err(|source| CliError { stage: name.into(), training: true, source })
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> cnet::Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> CmdResult<()> {
    stage(
        "output directory",
        fs::create_dir_all(&cfg.output_dir)
            .map_err(|e| Error::io(cfg.output_dir.display().to_string(), e)),
    )
}

/// Writes the post-override configuration next to the artifacts and echoes it
/// to stderr, so every result is reproducible from its own output directory.
pub fn echo_effective_config(cfg: &ExperimentConfig) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    let path = cfg.out_path("effective_config.json");
    stage("effective config", save_json(&path, cfg))?;
    eprintln!(
        "effective config written to {} :\n{}",
        path.display(),
        serde_json::to_string_pretty(cfg).expect("config serializes")
    );
    Ok(())
}

fn load_part(cfg: &ExperimentConfig, chunk: usize, part: &str) -> CmdResult<Dataset> {
    let path = cfg.chunk_path(chunk, part);
    stage(&format!("loading chunk{chunk} {part}"), Dataset::load(&path))
}

/// Validation data is optional under the train-loss criterion; required (and
/// so loaded unconditionally) under validation accuracy.
fn load_valid(cfg: &ExperimentConfig, chunk: usize) -> CmdResult<Option<Dataset>> {
    let path = cfg.chunk_path(chunk, "valid");
    if cfg.train.criterion == Criterion::TrainLoss && !path.exists() {
        return Ok(None);
    }
    Ok(Some(load_part(cfg, chunk, "valid")?))
}

fn eval_metrics(net: &NetworkGraph, data: &Dataset, wall_time: f64) -> cnet::Result<RunMetrics> {
    let mut preds = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        preds.push(net.forward(data.row(i))?);
    }
    let mut m = metrics(&confusion(&preds, data.labels(), 0.5)?);
    m.wall_time = wall_time;
    Ok(m)
}

/// Aggregates already-computed per-run metrics into a report.
fn report_of(rows: &[RunMetrics], seeds: &[u64]) -> cnet::Result<MetricsReport> {
    multi_run(|idx, _| Ok(rows[idx]), seeds)
}

fn save_report(
    cfg: &ExperimentConfig,
    name: &str,
    rows: &[RunMetrics],
    seeds: &[u64],
) -> CmdResult<MetricsReport> {
    let report = stage("aggregating metrics", report_of(rows, seeds))?;
    let path = cfg.out_path(&format!("{name}.metrics.json"));
    stage("writing metrics", save_report_file(&report, &path))?;
    println!(
        "{name}: precision={:.4} recall={:.4} f1={:.4} fnr={:.4} accuracy={:.4} ({} runs) -> {}",
        report.precision,
        report.recall,
        report.f1,
        report.fnr,
        report.accuracy,
        report.runs,
        path.display()
    );
    Ok(report)
}

fn save_report_file(report: &MetricsReport, path: &Path) -> cnet::Result<()> {
    report.save(path)
}

#[derive(Serialize)]
struct TrainTraceFile<'a> {
    format: &'static str,
    version: u32,
    runs: &'a [TrainResult],
}

#[derive(Serialize)]
struct GrowthTraceFile<'a> {
    format: &'static str,
    version: u32,
    runs: &'a [Vec<GrowthTrace>],
}

fn save_train_trace(cfg: &ExperimentConfig, name: &str, runs: &[TrainResult]) -> CmdResult<()> {
    let file = TrainTraceFile { format: "cnet-train-trace", version: 1, runs };
    stage("writing trace", save_json(&cfg.out_path(&format!("{name}.trace.json")), &file))
}

fn save_growth_trace(cfg: &ExperimentConfig, name: &str, runs: &[Vec<GrowthTrace>]) -> CmdResult<()> {
    let file = GrowthTraceFile { format: "cnet-growth-trace", version: 1, runs };
    stage("writing trace", save_json(&cfg.out_path(&format!("{name}.trace.json")), &file))
}

// ---------------------------------------------------------------------------
// prepare

#[derive(Serialize)]
struct PartSummary {
    name: String,
    rows: usize,
    negatives: usize,
    positives: usize,
}

#[derive(Serialize)]
struct ChunkSummary {
    name: String,
    parts: Vec<PartSummary>,
}

#[derive(Serialize)]
struct RebalanceSummary {
    target_ratio: f64,
    majority: usize,
    minority_before: usize,
    minority_after: usize,
}

#[derive(Serialize)]
struct PrepareSummary {
    format: &'static str,
    version: u32,
    rows_loaded: usize,
    duplicates_removed: usize,
    rows_after_dedup: usize,
    negatives_after_dedup: usize,
    positives_after_dedup: usize,
    /// Class counts if the whole deduplicated dataset were rebalanced at the
    /// configured ratio; a diagnostic for comparison against external counts.
    full_rebalance: RebalanceSummary,
    normalization_warnings: Vec<String>,
    chunks: Vec<ChunkSummary>,
}

fn part_summary(name: &str, ds: &Dataset) -> PartSummary {
    let (negatives, positives) = ds.class_counts();
    PartSummary { name: name.into(), rows: ds.n(), negatives, positives }
}

/// Raw CSV → deduplicated, time-chunked, split, normalized, SMOTE-rebalanced
/// chunk part files plus a summary of every count along the way.
pub fn cmd_prepare(cfg: &ExperimentConfig) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    let seed = cfg.seeds()[0];

    // the time column stays in as a feature here so duplicate detection sees
    // complete rows
    let raw = stage(
        "loading csv",
        load_csv(&cfg.raw_csv, &cfg.label_column, &cfg.drop_columns),
    )?;
    println!("loaded {} rows x {} features from {}", raw.n(), raw.width(), cfg.raw_csv.display());

    let (deduped, removed) = stage("dedup", dedup(&raw))?;
    let (neg, pos) = deduped.class_counts();
    println!("dedup removed {removed} duplicate rows; {} remain ({pos} positive / {neg} negative)", deduped.n());

    // full-dataset rebalance diagnostic at the configured ratio
    let rebalanced = stage("rebalance diagnostic", smote(&deduped, cfg.smote_ratio, cfg.smote_k, seed))?;
    let (reb_neg, reb_pos) = rebalanced.class_counts();
    let (minority_before, majority) = if pos <= neg { (pos, neg) } else { (neg, pos) };
    let minority_after = reb_pos.min(reb_neg).max(minority_before);
    println!(
        "full-dataset rebalance at ratio {}: minority {minority_before} -> {minority_after} (majority {majority})",
        cfg.smote_ratio
    );

    let mut featured = deduped;
    let times = stage(
        "extracting time column",
        featured.remove_feature(&cfg.time_column),
    )?;
    let (chunk1, chunk2) = stage("time chunking", chunk_by_time(&featured, &times, cfg.chunk_boundary))?;
    println!("chunk boundary {}: chunk1 {} rows, chunk2 {} rows", cfg.chunk_boundary, chunk1.n(), chunk2.n());

    let spec = stage("split spec", cfg.split_spec(seed))?;
    let parts1 = stage("splitting chunk1", stratified_split(&chunk1, &spec))?;
    let parts2 = stage("splitting chunk2", stratified_split(&chunk2, &spec))?;

    // one normalization record, fitted on chunk1's training part, applied to
    // every part of both chunks so all phases see the same feature scale
    let (_, record) = stage(
        "fitting normalization",
        normalize_range(&parts1[0].1, cfg.normalize_lo, cfg.normalize_hi),
    )?;
    stage("writing normalization record", save_json(&cfg.out_path("normalization.json"), &record))?;

    let train_part = cfg.train_part().to_string();
    let mut chunks = Vec::new();
    for (chunk_no, parts) in [(1usize, parts1), (2usize, parts2)] {
        let mut summaries = Vec::new();
        for (name, part) in &parts {
            let mut ds = stage("normalizing", record.apply(part))?;
            if *name == train_part {
                ds = stage("smote", smote(&ds, cfg.smote_ratio, cfg.smote_k, seed))?;
            }
            let path = cfg.chunk_path(chunk_no, name);
            stage("writing chunk part", ds.save(&path))?;
            let s = part_summary(name, &ds);
            println!(
                "chunk{chunk_no} {name}: {} rows ({} positive / {} negative) -> {}",
                s.rows,
                s.positives,
                s.negatives,
                path.display()
            );
            summaries.push(s);
        }
        chunks.push(ChunkSummary { name: format!("chunk{chunk_no}"), parts: summaries });
    }

    let summary = PrepareSummary {
        format: "cnet-prepare-summary",
        version: 1,
        rows_loaded: raw.n(),
        duplicates_removed: removed,
        rows_after_dedup: featured.n(),
        negatives_after_dedup: neg,
        positives_after_dedup: pos,
        full_rebalance: RebalanceSummary {
            target_ratio: cfg.smote_ratio,
            majority,
            minority_before,
            minority_after,
        },
        normalization_warnings: record.warnings.clone(),
        chunks,
    };
    let path = cfg.out_path("prepare_summary.json");
    stage("writing summary", save_json(&path, &summary))?;
    println!("summary -> {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// training commands

/// Trains the fixed-topology initial network on chunk 1, once per seed.
pub fn cmd_train_initial(cfg: &ExperimentConfig) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    let train_data = load_part(cfg, 1, cfg.train_part())?;
    let valid = load_valid(cfg, 1)?;
    let test = load_part(cfg, 1, "test")?;
    let seeds = cfg.seeds();

    let mut rows = Vec::with_capacity(seeds.len());
    let mut traces = Vec::with_capacity(seeds.len());
    for (idx, &seed) in seeds.iter().enumerate() {
        let mut net = training(
            "building network",
            NetworkGraph::new_network(
                train_data.width(),
                &cfg.layer_widths,
                cfg.activation,
                cfg.output_activation,
                cfg.hidden_init,
                seed,
            ),
        )?;
        let result = training(
            "training initial model",
            train(&mut net, &train_data, valid.as_ref(), &cfg.train_config(seed)),
        )?;
        rows.push(stage("evaluating", eval_metrics(&net, &test, result.wall_time))?);
        traces.push(result);
        if idx == 0 {
            stage("saving model", net.save_model(cfg.out_path("initial.cnet.json")))?;
        }
    }
    save_train_trace(cfg, "initial", &traces)?;
    save_report(cfg, "initial", &rows, &seeds)?;
    Ok(())
}

/// Unfreezes a saved model and continues training it on chunk 2.
pub fn cmd_refit(cfg: &ExperimentConfig, model: Option<&Path>) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    let default_model = cfg.out_path("initial.cnet.json");
    let model_path = model.unwrap_or(&default_model);
    let initial = stage("loading model", NetworkGraph::load_model(model_path))?;
    let train_data = load_part(cfg, 2, cfg.train_part())?;
    let valid = load_valid(cfg, 2)?;
    let test = load_part(cfg, 2, "test")?;
    let seeds = cfg.seeds();

    let mut rows = Vec::with_capacity(seeds.len());
    let mut traces = Vec::with_capacity(seeds.len());
    for (idx, &seed) in seeds.iter().enumerate() {
        let (net, result) = training(
            "refitting",
            refit(&initial, &train_data, valid.as_ref(), &cfg.train_config(seed)),
        )?;
        rows.push(stage("evaluating", eval_metrics(&net, &test, result.wall_time))?);
        traces.push(result);
        if idx == 0 {
            stage("saving model", net.save_model(cfg.out_path("refit.cnet.json")))?;
        }
    }
    save_train_trace(cfg, "refit", &traces)?;
    save_report(cfg, "refit", &rows, &seeds)?;
    Ok(())
}

fn order_slug(order: GroupOrder) -> &'static str {
    match order {
        GroupOrder::Descending => "descending",
        GroupOrder::Ascending => "ascending",
        GroupOrder::None => "none",
    }
}

/// Incremental feature-group learning on chunk 1, growing one sub-network per
/// relevancy group in the requested order.
pub fn cmd_grow_groups(cfg: &ExperimentConfig, order: Option<GroupOrder>) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    let order = order.unwrap_or(cfg.group_order);
    let train_data = load_part(cfg, 1, cfg.train_part())?;
    let valid = load_valid(cfg, 1)?;
    let test = load_part(cfg, 1, "test")?;
    let seeds = cfg.seeds();

    let scores = stage("relevancy scores", relevancy_scores(&train_data, cfg.relevancy))?;
    let k = if order == GroupOrder::None { 1 } else { cfg.n_groups };
    let plan = stage("grouping features", make_groups(&scores, k, order))?;
    println!(
        "{} feature groups ({}), mean relevancy per group: {:?}",
        plan.groups.len(),
        order_slug(order),
        plan.groups.iter().map(|g| (g.mean_relevancy * 1e4).round() / 1e4).collect::<Vec<_>>()
    );

    let slug = order_slug(order);
    let mut rows = Vec::with_capacity(seeds.len());
    let mut traces = Vec::with_capacity(seeds.len());
    for (idx, &seed) in seeds.iter().enumerate() {
        let (net, run_traces) = training(
            "growing on feature groups",
            ifl_feature_groups(&train_data, valid.as_ref(), &plan, &cfg.growth_config(seed), seed),
        )?;
        let wall: f64 = run_traces.iter().map(|t| t.total_wall_time()).sum();
        rows.push(stage("evaluating", eval_metrics(&net, &test, wall))?);
        traces.push(run_traces);
        if idx == 0 {
            stage(
                "saving model",
                net.save_model(cfg.out_path(&format!("grow_groups_{slug}.cnet.json"))),
            )?;
        }
    }
    save_growth_trace(cfg, &format!("grow_groups_{slug}"), &traces)?;
    save_report(cfg, &format!("grow_groups_{slug}"), &rows, &seeds)?;
    Ok(())
}

/// Chunk-to-chunk transfer growth; also emits the three baseline reports
/// (initial on chunk 1, initial on chunk 2, refit on chunk 2) so `compare`
/// can build the four-model table.
pub fn cmd_grow_transfer(cfg: &ExperimentConfig) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    let c1_train = load_part(cfg, 1, cfg.train_part())?;
    let c1_valid = load_valid(cfg, 1)?;
    let c1_test = load_part(cfg, 1, "test")?;
    let c2_train = load_part(cfg, 2, cfg.train_part())?;
    let c2_valid = load_valid(cfg, 2)?;
    let c2_test = load_part(cfg, 2, "test")?;
    let seeds = cfg.seeds();

    let mut final_rows = Vec::new();
    let mut refit_rows = Vec::new();
    let mut init_c1_rows = Vec::new();
    let mut init_c2_rows = Vec::new();
    let mut traces_all = Vec::new();
    for (idx, &seed) in seeds.iter().enumerate() {
        let (final_net, traces, state) = training(
            "transfer growth",
            ifl_transfer(
                &c1_train,
                c1_valid.as_ref(),
                &c2_train,
                c2_valid.as_ref(),
                &cfg.layer_widths,
                &cfg.growth_config(seed),
                seed,
            ),
        )?;
        let grow_time: f64 = traces.iter().map(|t| t.total_wall_time()).sum();
        final_rows.push(stage("evaluating", eval_metrics(&final_net, &c2_test, grow_time))?);
        refit_rows.push(stage(
            "evaluating",
            eval_metrics(&state.refitted, &c2_test, state.refit_result.wall_time),
        )?);
        init_c1_rows.push(stage(
            "evaluating",
            eval_metrics(&state.initial, &c1_test, state.initial_result.wall_time),
        )?);
        init_c2_rows.push(stage(
            "evaluating",
            eval_metrics(&state.initial, &c2_test, state.initial_result.wall_time),
        )?);
        traces_all.push(traces);
        if idx == 0 {
            stage("saving model", final_net.save_model(cfg.out_path("transfer.cnet.json")))?;
        }
    }
    save_growth_trace(cfg, "transfer", &traces_all)?;
    let r_init_c1 = save_report(cfg, "initial_chunk1", &init_c1_rows, &seeds)?;
    let r_init_c2 = save_report(cfg, "initial_chunk2", &init_c2_rows, &seeds)?;
    let r_refit = save_report(cfg, "refit_baseline", &refit_rows, &seeds)?;
    let r_final = save_report(cfg, "transfer", &final_rows, &seeds)?;

    let table = stage(
        "building comparison",
        compare_report(&[
            ("initial_chunk1".into(), r_init_c1),
            ("initial_chunk2".into(), r_init_c2),
            ("refit".into(), r_refit),
            ("final".into(), r_final),
        ]),
    )?;
    print!("{table}");
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate / compare

/// Evaluates a saved model against a prepared dataset file.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    model: &Path,
    data: &Path,
    threshold: f64,
    name: Option<&str>,
) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    if !(0.0..=1.0).contains(&threshold) {
        return stage(
            "evaluate",
            Err(Error::InvalidArgument(format!("threshold {threshold} must be in [0, 1]"))),
        );
    }
    let net = stage("loading model", NetworkGraph::load_model(model))?;
    let ds = stage("loading dataset", Dataset::load(data))?;
    let mut preds = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        preds.push(stage("evaluating", net.forward(ds.row(i)))?);
    }
    let m = metrics(&stage("evaluating", confusion(&preds, ds.labels(), threshold))?);
    let report = MetricsReport::single(m);
    let default_name = model
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".cnet").to_string())
        .unwrap_or_else(|| "model".into());
    let name = name.unwrap_or(&default_name);
    let path = cfg.out_path(&format!("{name}.metrics.json"));
    stage("writing metrics", report.save(&path))?;
    println!(
        "{name} on {}: precision={:.4} recall={:.4} f1={:.4} fnr={:.4} accuracy={:.4} -> {}",
        data.display(),
        m.precision,
        m.recall,
        m.f1,
        m.fnr,
        m.accuracy,
        path.display()
    );
    Ok(())
}

/// Loads metrics reports, prints the aligned comparison table (deltas are
/// against the first report) and writes the structured comparison file.
pub fn cmd_compare(cfg: &ExperimentConfig, reports: &[PathBuf]) -> CmdResult<()> {
    ensure_output_dir(cfg)?;
    if reports.len() < 2 {
        return stage(
            "compare",
            Err(Error::InvalidArgument("compare needs at least 2 report files".into())),
        );
    }
    let mut named = Vec::with_capacity(reports.len());
    for path in reports {
        let report = stage(&format!("loading report {}", path.display()), MetricsReport::load(path))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".metrics").to_string())
            .unwrap_or_else(|| path.display().to_string());
        named.push((name, report));
    }
    let table = stage("building comparison", compare_report(&named))?;
    print!("{table}");
    let path = cfg.out_path("comparison.json");
    stage("writing comparison", ComparisonTable::save(&table, &path))?;
    println!("comparison -> {}", path.display());
    Ok(())
}
