use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use serde::Serialize;
use trapsift::backend::{load_backend, InferenceBackend, InputTensor};
use trapsift::bench::{measure_memory, run_bench, BenchConfig, BenchReport};
use trapsift::filterpipe::watch::{watch_directory, WatchOptions, WatchQueue, DEFAULT_PATTERNS};
use trapsift::filterpipe::{
    preprocess, run_filter, simulate_filter, FilterAction, FilterConfig, FilterOutcome, PreprocessSpec, SavingsReport,
};
use trapsift::manifest::{parse_manifest, summarize, to_labeled, LabelPolicy, LabelingSummary, ParseStats, SetSummary};
use trapsift::metrics::{calibrate_threshold, compare_runs, curve_auc, pr_auc, pr_curve, CompareConfig, OperatingPoint};
use trapsift::report::{
    latency_auc_svg, pr_curves_svg, read_curve_csv_file, write_curve_csv_file, write_json_file, write_text_file,
    LatencyAucPoint, NamedCurve,
};
use trapsift::scorestore::{join, read_scores_file, JoinStats, RunManifest};
use trapsift::splitgen::{split_by_location, split_by_time, Assignment, SplitPlan};
use trapsift::{CalibrationResult, EvalSet, LabeledSet};

use crate::error::{require_file, CliError, CliResult};
use crate::{
    BackendArgs, BenchArgs, Command, CompareArgs, FilterArgs, IngestArgs, PlotArgs, ScoreArgs, SimulateArgs, SplitArgs,
    SplitPolicy,
};

const FALLBACK_SIZE: u32 = 224;

pub fn run(command: Command) -> CliResult {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Bench(a) => bench(a),
        Command::Filter(a) => filter(a),
        Command::Simulate(a) => simulate(a),
        Command::Plot(a) => plot(a),
    }
}

fn check_unit(flag: &str, v: f64, open_low: bool) -> CliResult {
    let ok = if open_low { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
    if ok {
        Ok(())
    } else {
        Err(CliError::usage(format!("{flag} must lie in {}0, 1]", if open_low { "(" } else { "[" })))
    }
}

#[derive(Serialize)]
struct IngestSummary {
    parse: ParseStats,
    labeling: LabelingSummary,
    #[serde(flatten)]
    set: SetSummary,
}

fn ingest(a: IngestArgs) -> CliResult {
    require_file("--manifest", &a.manifest)?;
    if let Some(p) = &a.season_map {
        require_file("--season-map", p)?;
    }
    let policy = LabelPolicy::new(&a.empty_categories, a.require_bbox).map_err(|e| CliError::usage(e.to_string()))?;

    let mut manifest = parse_manifest(&a.manifest)?;
    if let Some(p) = &a.season_map {
        manifest.apply_season_map(fs::File::open(p)?)?;
    }
    let (set, labeling) = to_labeled(&manifest, &policy);
    set.write_csv_file(&a.out)?;
    let summary = IngestSummary {
        parse: manifest.stats,
        labeling,
        set: summarize(&set),
    };
    if let Some(p) = &a.summary {
        write_json_file(p, &summary)?;
    }
    println!(
        "{} images labeled: {} empty, {} nonempty, {} locations; {} excluded by policy, {} corrupt, {} unannotated",
        labeling.labeled,
        summary.set.classes.empty,
        summary.set.classes.nonempty,
        summary.set.per_location.len(),
        labeling.excluded_count,
        manifest.stats.corrupt_excluded,
        manifest.stats.unannotated_excluded,
    );
    Ok(())
}

/// Seasons ordered by length then text, so "S2" sorts before "S10".
fn default_season_assignment(set: &LabeledSet) -> CliResult<Assignment> {
    let seasons: BTreeSet<(usize, &str)> = set
        .items
        .iter()
        .filter_map(|i| i.season.as_deref())
        .map(|s| (s.len(), s))
        .collect();
    let seasons: Vec<&str> = seasons.into_iter().map(|(_, s)| s).collect();
    let six: [&str; 6] = seasons.as_slice().try_into().map_err(|_| {
        CliError::usage(format!(
            "time split without --assignment needs exactly 6 seasons, found {}",
            seasons.len()
        ))
    })?;
    Ok(Assignment::first_six_seasons(six))
}

fn split(a: SplitArgs) -> CliResult {
    require_file("--labels", &a.labels)?;
    if let Some(p) = &a.assignment {
        require_file("--assignment", p)?;
    }
    if a.split == SplitPolicy::Location && a.assignment.is_none() {
        return Err(CliError::usage("location split needs --assignment"));
    }
    if a.bbox_only {
        match &a.manifest {
            Some(p) => require_file("--manifest", p)?,
            None => return Err(CliError::usage("--bbox-only needs --manifest")),
        }
    }

    let set = LabeledSet::read_csv_file(&a.labels)?;
    let routed = match a.split {
        SplitPolicy::Location => {
            let assignment = Assignment::read_csv_file(a.assignment.as_ref().expect("checked above"))?;
            split_by_location(&set, &assignment)?
        }
        SplitPolicy::Time => {
            let assignment = match &a.assignment {
                Some(p) => Assignment::read_csv_file(p)?,
                None => default_season_assignment(&set)?,
            };
            split_by_time(&set, &assignment)?
        }
    };
    let manifest = match (&a.manifest, a.bbox_only) {
        (Some(p), true) => Some(parse_manifest(p)?),
        _ => None,
    };
    let plan = SplitPlan {
        holdout_locations: a.holdout,
        bbox_only: a.bbox_only,
        empty_cap: (a.cap > 0).then_some(a.cap),
        balance: a.balance.clone(),
        seed: a.seed,
    };
    let result = plan.apply(routed, manifest.as_ref())?;
    result.write_dir(&a.out)?;
    for (name, c) in &result.provenance.counts {
        println!("{name}: {} empty, {} nonempty", c.empty, c.nonempty);
    }
    Ok(())
}

fn load_eval(scores: &Path, labels: &Path) -> CliResult<(RunManifest, EvalSet, JoinStats)> {
    let labels = LabeledSet::read_csv_file(labels)?;
    let (run, records) = read_scores_file(scores)?;
    let (e, stats) = join(&records, &labels)?;
    if stats.unmatched_scores + stats.unmatched_labels > 0 {
        log::warn!(
            "{}: {} scores without labels, {} labels without scores",
            run.run_id,
            stats.unmatched_scores,
            stats.unmatched_labels
        );
    }
    Ok((run, e, stats))
}

fn print_point(prefix: &str, p: &OperatingPoint) {
    println!(
        "{prefix}threshold {:.6}  precision {:.4}  recall {:.4}  tnr {:.4}",
        p.threshold, p.precision, p.recall, p.tnr
    );
}

fn calibrate(a: ScoreArgs) -> CliResult {
    require_file("--scores", &a.scores)?;
    require_file("--labels", &a.labels)?;
    check_unit("--target-recall", a.target_recall, true)?;
    let (_, e, _) = load_eval(&a.scores, &a.labels)?;
    let c = calibrate_threshold(&e, a.target_recall)?;
    write_json_file(&a.out, &c)?;
    print_point("", &c.point);
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    run: RunManifest,
    join: JoinStats,
    n_items: usize,
    positives: usize,
    negatives: usize,
    pr_auc: f64,
    calibration: CalibrationResult,
}

fn eval(a: ScoreArgs) -> CliResult {
    require_file("--scores", &a.scores)?;
    require_file("--labels", &a.labels)?;
    check_unit("--target-recall", a.target_recall, true)?;
    let (run, e, join) = load_eval(&a.scores, &a.labels)?;
    let curve = pr_curve(&e)?;
    let report = EvalReport {
        run,
        join,
        n_items: e.len(),
        positives: e.positives(),
        negatives: e.negatives(),
        pr_auc: pr_auc(&e)?,
        calibration: calibrate_threshold(&e, a.target_recall)?,
    };
    fs::create_dir_all(&a.out)?;
    write_curve_csv_file(&a.out.join("curve.csv"), &curve)?;
    write_json_file(&a.out.join("eval.json"), &report)?;
    println!("{}: PR-AUC {:.4} over {} images", report.run.run_id, report.pr_auc, report.n_items);
    print_point("", &report.calibration.point);
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult {
    if a.scores.len() != 2 {
        return Err(CliError::usage("compare needs exactly two --scores"));
    }
    for p in &a.scores {
        require_file("--scores", p)?;
    }
    require_file("--labels", &a.labels)?;
    check_unit("--target-recall", a.target_recall, true)?;
    if !(a.margin >= 0.0) {
        return Err(CliError::usage("--margin must be non-negative"));
    }
    let (run_a, ea, _) = load_eval(&a.scores[0], &a.labels)?;
    let (run_b, eb, _) = load_eval(&a.scores[1], &a.labels)?;
    let config = CompareConfig {
        target_recall: a.target_recall,
        tnr_margin: a.margin,
    };
    let delta = compare_runs(&run_a.run_id, &ea, &run_b.run_id, &eb, config)?;
    write_json_file(&a.out, &delta)?;
    print_point(&format!("{}: ", delta.run_a), &delta.point_a);
    print_point(&format!("{}: ", delta.run_b), &delta.point_b);
    println!(
        "tnr delta {:+.4}, precision delta {:+.4}{}",
        delta.tnr_delta,
        delta.precision_delta,
        if delta.degraded { "  DEGRADED" } else { "" }
    );
    Ok(())
}

fn check_backend_args(b: &BackendArgs) -> CliResult {
    if !trapsift::backend::available_backends().contains(&b.backend.as_str()) {
        return Err(CliError::usage(format!(
            "unknown backend {:?}; available: {}",
            b.backend,
            trapsift::backend::available_backends().join(", ")
        )));
    }
    require_file("--model", &b.model)
}

fn resolve_spec(b: &BackendArgs, model_resolution: Option<u32>) -> CliResult<PreprocessSpec> {
    let size = b.size.or(model_resolution).unwrap_or(FALLBACK_SIZE);
    PreprocessSpec::new(size, b.scale.into()).map_err(|e| CliError::usage(e.to_string()))
}

fn bench_input(a: &BenchArgs, spec: &PreprocessSpec) -> CliResult<(InputTensor, String)> {
    match &a.input {
        Some(p) => {
            let bytes = fs::read(p)?;
            let tensor = preprocess(&bytes, spec).map_err(CliError::data)?;
            Ok((tensor.with_source(p.display().to_string()), p.display().to_string()))
        }
        None => Ok((
            InputTensor::filled(spec.target_size as usize, 0.0),
            format!("constant {0}x{0}", spec.target_size),
        )),
    }
}

fn bench(a: BenchArgs) -> CliResult {
    check_backend_args(&a.backend)?;
    if let Some(p) = &a.input {
        require_file("--input", p)?;
    }
    if a.runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    let load = || load_backend(&a.backend.backend, &a.backend.model);

    let (mut backend, peak) = if a.memory {
        // The resolution is needed before the measured load.
        let resolution = match a.backend.size {
            Some(_) => None,
            None => load()?.metadata().input_resolution,
        };
        let spec = resolve_spec(&a.backend, resolution)?;
        let (input, _) = bench_input(&a, &spec)?;
        let (backend, mem) = measure_memory(load, &input)?;
        if !mem.peak_was_reset {
            log::warn!("could not reset the peak RSS counter; the peak may predate the model load");
        }
        (backend, Some(mem.peak_rss_bytes))
    } else {
        (load()?, None)
    };
    let metadata = backend.metadata();
    let spec = resolve_spec(&a.backend, metadata.input_resolution)?;
    spec.validate_for(&metadata).map_err(|e| CliError::usage(e.to_string()))?;
    let (input, label) = bench_input(&a, &spec)?;
    let mut config = BenchConfig::new(input).runs(a.warmup, a.runs);
    config.input_label = label;

    let mut report: BenchReport = run_bench(&mut backend, &config)?;
    report.peak_memory_bytes = peak;
    write_json_file(&a.out, &report)?;
    println!(
        "{} ({}): mean {:.3} ms, std {:.3}, p50 {:.3}, p95 {:.3} over {} runs",
        metadata.model_name,
        metadata.backend_id,
        report.stats.mean_ms,
        report.stats.std_ms,
        report.stats.p50_ms,
        report.stats.p95_ms,
        report.runs.len()
    );
    if let Some(b) = peak {
        println!("peak resident memory {:.1} MB", b as f64 / 1_000_000.0);
    }
    Ok(())
}

fn read_calibration(path: &Path) -> CliResult<CalibrationResult> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn resolve_threshold(threshold: Option<f64>, calibration: Option<&PathBuf>) -> CliResult<f64> {
    match (threshold, calibration) {
        (Some(t), _) => Ok(t),
        (None, Some(p)) => Ok(read_calibration(p)?.threshold),
        (None, None) => Err(CliError::usage("give --threshold or --calibration")),
    }
}

fn expand_inputs(inputs: &[PathBuf], patterns: &[String]) -> CliResult<Vec<PathBuf>> {
    let queue = WatchQueue::new(patterns, Duration::ZERO).map_err(|e| CliError::usage(e.to_string()))?;
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && queue.matches(f))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn filter(a: FilterArgs) -> CliResult {
    check_backend_args(&a.backend)?;
    if let Some(t) = a.threshold {
        check_unit("--threshold", t, false)?;
    }
    if let Some(p) = &a.calibration {
        require_file("--calibration", p)?;
    }
    let action: FilterAction = a.action.parse().map_err(CliError::usage)?;
    if action == FilterAction::MoveToDir && a.quarantine.is_none() {
        return Err(CliError::usage("--action move needs --quarantine"));
    }
    match &a.watch {
        Some(dir) if !dir.is_dir() => {
            return Err(CliError::usage(format!("--watch: no such directory {}", dir.display())))
        }
        None if a.inputs.is_empty() => return Err(CliError::usage("give image paths or --watch")),
        _ => {}
    }
    for p in &a.inputs {
        if !p.exists() {
            return Err(CliError::usage(format!("no such input {}", p.display())));
        }
    }
    let patterns: Vec<String> = if a.patterns.is_empty() {
        DEFAULT_PATTERNS.iter().map(|s| s.to_string()).collect()
    } else {
        a.patterns.clone()
    };

    let threshold = resolve_threshold(a.threshold, a.calibration.as_ref())?;
    check_unit("threshold", threshold, false)?;
    let mut backend = load_backend(&a.backend.backend, &a.backend.model)?;
    let metadata = backend.metadata();
    if metadata.quantization_warning {
        log::warn!("{} uses operations that quantize poorly", metadata.model_name);
    }
    let spec = resolve_spec(&a.backend, metadata.input_resolution)?;
    let mut cfg = FilterConfig::new(threshold, action).log_to(&a.out);
    cfg.quarantine_dir = a.quarantine.clone();
    cfg.write_markers = a.markers;

    let outcome: FilterOutcome = match &a.watch {
        Some(dir) => {
            let options = WatchOptions {
                patterns,
                idle_timeout: a.idle_timeout.map(Duration::from_secs_f64),
                ..WatchOptions::default()
            };
            watch_directory(dir, &cfg, &spec, &mut backend, &options, &AtomicBool::new(false))?
        }
        None => {
            let files = expand_inputs(&a.inputs, &patterns)?;
            run_filter(&cfg, &spec, &mut backend, &files)?
        }
    };
    if let Some(p) = &a.report {
        write_json_file(p, &outcome.report)?;
    }
    print_savings(&outcome.report);
    Ok(())
}

fn print_savings(r: &SavingsReport) {
    println!(
        "{} processed, {} discarded ({:.1}%), {} bytes saved, {} errors",
        r.n_processed,
        r.n_discarded,
        r.discard_fraction * 100.0,
        r.bytes_saved,
        r.n_errors
    );
}

#[derive(Serialize)]
struct SimulationReport {
    run_id: String,
    point: OperatingPoint,
    savings: SavingsReport,
}

fn simulate(a: SimulateArgs) -> CliResult {
    require_file("--scores", &a.scores)?;
    require_file("--labels", &a.labels)?;
    if let Some(p) = &a.calibration {
        require_file("--calibration", p)?;
    }
    if let Some(p) = &a.manifest {
        require_file("--manifest", p)?;
    }
    if let Some(t) = a.threshold {
        check_unit("--threshold", t, false)?;
    }
    let threshold = resolve_threshold(a.threshold, a.calibration.as_ref())?;
    let (run, e, _) = load_eval(&a.scores, &a.labels)?;
    let sizes: Option<HashMap<String, u64>> = match &a.manifest {
        Some(p) => Some(
            parse_manifest(p)?
                .images
                .into_iter()
                .filter_map(|r| r.byte_size.map(|b| (r.image_id, b)))
                .collect(),
        ),
        None => None,
    };
    let (point, savings) = simulate_filter(&e, threshold, sizes.as_ref());
    let report = SimulationReport {
        run_id: run.run_id,
        point,
        savings,
    };
    write_json_file(&a.out, &report)?;
    print_point(&format!("{}: ", report.run_id), &report.point);
    print_savings(&report.savings);
    Ok(())
}

fn curve_name(path: &Path, labels: &[String], i: usize) -> String {
    labels.get(i).cloned().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("curve {}", i + 1))
    })
}

fn plot(a: PlotArgs) -> CliResult {
    if a.curves.is_empty() {
        return Err(CliError::usage("plot needs at least one --curve"));
    }
    for p in a.curves.iter().chain(&a.benches) {
        require_file("input", p)?;
    }
    if a.scatter && a.benches.len() != a.curves.len() {
        return Err(CliError::usage("--scatter needs one --bench per --curve"));
    }
    if !a.labels.is_empty() && a.labels.len() != a.curves.len() {
        return Err(CliError::usage("give one --label per --curve or none"));
    }

    let mut curves = Vec::with_capacity(a.curves.len());
    for (i, p) in a.curves.iter().enumerate() {
        curves.push(NamedCurve {
            name: curve_name(p, &a.labels, i),
            curve: read_curve_csv_file(p)?,
        });
    }
    let svg = if a.scatter {
        let mut points = Vec::with_capacity(curves.len());
        for (c, b) in curves.iter().zip(&a.benches) {
            let text = fs::read_to_string(b)?;
            let report: BenchReport =
                serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", b.display())))?;
            let name = if a.labels.is_empty() {
                report.backend.model_name.clone()
            } else {
                c.name.clone()
            };
            points.push(LatencyAucPoint {
                name,
                latency_ms: report.stats.mean_ms,
                pr_auc: curve_auc(&c.curve),
            });
        }
        latency_auc_svg(&points)?
    } else {
        pr_curves_svg(&curves)?
    };
    write_text_file(&a.out, &svg)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
