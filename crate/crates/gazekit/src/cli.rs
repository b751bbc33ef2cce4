//! Command implementations behind the `gazekit` binary.
//!
//! Every command is a plain function over a [`RunConfig`], so the examples
//! and tests drive the exact code paths the CLI does. All artifacts are
//! reproducible from (config, seed): nothing written here contains a
//! timestamp.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{augment_classifier_set, augment_regressor_set};
use crate::classifier::{grid_search_cv, train_svc, SmoOptions, SvcModel};
use crate::config::RunConfig;
use crate::dataset::{
    annotate_gaze, read_jsonl, split_by_subject, write_jsonl, GazeAnnotation, GazeClass,
    KeypointFrame, SplitPlan,
};
use crate::error::{Error, Result};
use crate::features::{build_feature, LabeledFeature, RegressionSample};
use crate::pipeline::{aggregate_splits, evaluate_split, run, EvalReport, FrameFailure, FrameRecord};
use crate::regressor::{train, CguRegressor, RegressorModel};
use crate::synthgen::generate_dataset;

/// Per-class counts of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub total: usize,
    pub per_class: [(GazeClass, usize); 4],
    pub path: PathBuf,
}

/// Generates the synthetic dataset configured in `[scene]` and writes it as
/// JSONL.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<SynthSummary> {
    let frames = generate_dataset(&config.scene)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_jsonl(out, &frames)?;
    let mut per_class = GazeClass::ALL.map(|c| (c, 0usize));
    for frame in &frames {
        if let Some(label) = frame.label {
            per_class[label.index()].1 += 1;
        }
    }
    Ok(SynthSummary {
        total: frames.len(),
        per_class,
        path: out.to_path_buf(),
    })
}

/// One annotation output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub frame_id: String,
    #[serde(flatten)]
    pub annotation: GazeAnnotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSummary {
    pub annotated: usize,
    pub skipped_no_target: usize,
}

/// Computes the ground-truth gaze annotation for every frame that carries a
/// target point and writes them as JSONL.
pub fn cmd_annotate(config: &RunConfig, input: &Path, out: &Path) -> Result<AnnotateSummary> {
    let frames = read_jsonl(input, config.strict_ingestion)?;
    let file = File::create(out)?;
    let mut writer = BufWriter::new(file);
    let mut annotated = 0;
    let mut skipped = 0;
    for frame in &frames {
        match frame.target_ccs {
            Some(target) => {
                let depth = frame.centroid_depth.unwrap_or(config.depth.0);
                let annotation = annotate_gaze(frame, target, depth)?;
                serde_json::to_writer(
                    &mut writer,
                    &AnnotationRecord {
                        frame_id: frame.frame_id.clone(),
                        annotation,
                    },
                )?;
                writer.write_all(b"\n")?;
                annotated += 1;
            }
            None => skipped += 1,
        }
    }
    writer.flush()?;
    Ok(AnnotateSummary {
        annotated,
        skipped_no_target: skipped,
    })
}

/// Draws the subject-wise split plan and writes it as JSON.
pub fn cmd_split(config: &RunConfig, input: &Path, out: &Path) -> Result<SplitPlan> {
    let frames = read_jsonl(input, config.strict_ingestion)?;
    let plan = split_by_subject(&frames, config.split.k, config.split.ratio, config.split.seed)?;
    let file = File::create(out)?;
    serde_json::to_writer_pretty(BufWriter::new(file), &plan)?;
    Ok(plan)
}

/// What one split was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTrainInfo {
    pub split: usize,
    pub c: f64,
    pub gamma: f64,
    pub classifier_samples: usize,
    pub regressor_samples: usize,
    pub support_vectors: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub splits: Vec<SplitTrainInfo>,
}

fn classifier_samples(frames: &[&KeypointFrame]) -> Result<Vec<LabeledFeature>> {
    frames
        .iter()
        .map(|frame| {
            let label = frame
                .label
                .ok_or_else(|| Error::MissingLabel(frame.frame_id.clone()))?;
            Ok(LabeledFeature {
                feature: build_feature(frame)?,
                label,
            })
        })
        .collect()
}

fn regressor_samples(frames: &[&KeypointFrame], default_depth: f64) -> Result<Vec<RegressionSample>> {
    let mut samples = Vec::new();
    for frame in frames {
        if frame.label != Some(GazeClass::Workspace) {
            continue;
        }
        let target = frame
            .target_ccs
            .ok_or_else(|| Error::MissingTarget(frame.frame_id.clone()))?;
        let depth = frame.centroid_depth.unwrap_or(default_depth);
        let annotation = annotate_gaze(frame, target, depth)?;
        samples.push(RegressionSample {
            feature: build_feature(frame)?,
            gaze2d: annotation.gaze2d,
        });
    }
    Ok(samples)
}

/// Trains one classifier/regressor pair per split and persists them under
/// `model_dir/split_<i>/`, together with the split plan, any grid-search
/// report and a training summary.
pub fn cmd_train(config: &RunConfig, dataset: &Path, model_dir: &Path) -> Result<TrainSummary> {
    let frames = read_jsonl(dataset, config.strict_ingestion)?;
    let plan = split_by_subject(&frames, config.split.k, config.split.ratio, config.split.seed)?;
    fs::create_dir_all(model_dir)?;
    let plan_file = File::create(model_dir.join("split_plan.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(plan_file), &plan)?;

    let smo = SmoOptions {
        tol: config.svc.tol,
        ..SmoOptions::default()
    };
    let mut summary = TrainSummary { splits: Vec::new() };
    for (idx, split) in plan.splits.iter().enumerate() {
        let (train_frames, _) = split.partition(&frames);
        let split_dir = model_dir.join(format!("split_{idx}"));
        fs::create_dir_all(&split_dir)?;

        // Classifier: build features, augment, pick hyperparameters, train.
        let base = classifier_samples(&train_frames)?;
        let augmented = augment_classifier_set(&base, &config.augment);
        let (c, gamma) = if config.svc.grid_search {
            let report = grid_search_cv(
                &augmented,
                &config.svc.grid,
                config.svc.folds,
                config.split.seed,
                smo,
            )?;
            let file = File::create(split_dir.join("grid_report.json"))?;
            serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
            (report.selected_c, report.selected_gamma)
        } else {
            (config.svc.c, config.svc.gamma.resolve(&augmented))
        };
        let svc = train_svc(&augmented, c, gamma, smo)?;
        svc.save(&split_dir.join("svc.json"))?;

        // Regressor: annotate workspace frames, augment, train.
        let ws = regressor_samples(&train_frames, config.depth.0)?;
        let ws_augmented = augment_regressor_set(&ws, &config.augment);
        let (net, report) = train(&ws_augmented, &config.train)?;
        let model = RegressorModel::new(net, config.train);
        model.save(&split_dir.join("regressor.json"))?;
        let log_file = File::create(split_dir.join("train_log.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(log_file), &report)?;

        summary.splits.push(SplitTrainInfo {
            split: idx,
            c,
            gamma,
            classifier_samples: augmented.len(),
            regressor_samples: ws_augmented.len(),
            support_vectors: std::array::from_fn(|m| svc.machines[m].support_vectors.len()),
        });
    }
    let summary_file = File::create(model_dir.join("training_summary.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(summary_file), &summary)?;
    Ok(summary)
}

/// Evaluates the per-split models on their test subjects and writes the
/// aggregated report (JSON and an aligned text table).
pub fn cmd_eval(
    config: &RunConfig,
    dataset: &Path,
    model_dir: &Path,
    report_dir: &Path,
) -> Result<EvalReport> {
    let frames = read_jsonl(dataset, config.strict_ingestion)?;
    let plan_path = model_dir.join("split_plan.json");
    let plan_file =
        File::open(&plan_path).map_err(|_| Error::ModelMissing(plan_path.display().to_string()))?;
    let plan: SplitPlan = serde_json::from_reader(BufReader::new(plan_file))?;

    let mut split_metrics = Vec::new();
    for (idx, split) in plan.splits.iter().enumerate() {
        let split_dir = model_dir.join(format!("split_{idx}"));
        let svc = SvcModel::load(&split_dir.join("svc.json"))?;
        let regressor = RegressorModel::load(&split_dir.join("regressor.json"))?;
        let (_, test_frames) = split.partition(&frames);
        let owned: Vec<KeypointFrame> = test_frames.into_iter().cloned().collect();
        split_metrics.push(evaluate_split(
            &owned,
            &svc,
            &regressor.net,
            config.depth.0,
            config.eval,
        )?);
    }
    let report = aggregate_splits(split_metrics);

    fs::create_dir_all(report_dir)?;
    let json_file = File::create(report_dir.join("report.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(json_file), &report)?;
    fs::write(report_dir.join("report.txt"), report.render_table())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferSummary {
    pub frames: usize,
    pub failures: usize,
}

/// Streams JSONL frames through the pipeline, one output record per input
/// record in input order; per-frame failures become failure records.
pub fn cmd_infer(
    svc_path: &Path,
    regressor_path: &Path,
    input: &Path,
    output: &Path,
    default_depth: f64,
    strict: bool,
) -> Result<InferSummary> {
    let svc = SvcModel::load(svc_path)?;
    let regressor = RegressorModel::load(regressor_path)?;
    let reader = BufReader::new(File::open(input)?);
    let file = File::create(output)?;
    let mut writer = BufWriter::new(file);
    let mut frames = 0usize;
    let mut failures = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = infer_line(&line, idx + 1, &svc, &regressor.net, default_depth, strict)?;
        if matches!(record, FrameRecord::Failed(_)) {
            failures += 1;
        }
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
        frames += 1;
    }
    writer.flush()?;
    Ok(InferSummary { frames, failures })
}

fn infer_line(
    line: &str,
    line_no: usize,
    svc: &SvcModel,
    regressor: &CguRegressor,
    default_depth: f64,
    strict: bool,
) -> Result<FrameRecord> {
    let frame: KeypointFrame = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
        line: line_no,
        message: e.to_string(),
    })?;
    if let Err(message) = frame.validate() {
        return Err(Error::MalformedRecord {
            line: line_no,
            message,
        });
    }
    if strict && !frame.extra.is_empty() {
        return Err(Error::MalformedRecord {
            line: line_no,
            message: "unknown fields in strict mode".into(),
        });
    }
    Ok(match run(&frame, svc, regressor, default_depth) {
        Ok(result) => FrameRecord::Ok(result),
        Err(err) => FrameRecord::Failed(FrameFailure {
            frame_id: frame.frame_id.clone(),
            error: err.to_string(),
        }),
    })
}
