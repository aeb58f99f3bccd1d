use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use vssdet::io::{load_corpus, write_atomic, write_corpus, write_mask};
use vssdet::losses::{Loss, VssParams};
use vssdet::metrics::{descending_thresholds, pr_points, roc_points_pooled, CurvePoints};
use vssdet::model::{read_checkpoint, write_checkpoint, ModelConfig, Network, PriorMode};
use vssdet::phantom::{generate_corpus, LongitudinalStudy, PhantomSpec, TimepointSelection};
use vssdet::pipeline::{
    ensemble_predictions, evaluate_predictions, predict_corpus, review_queue, EvalConfig, EvalReport,
    OraclePredictor, Predictor, ZeroPredictor, TABLE1_HEADER, TABLE2_HEADER,
};
use vssdet::trainer::{train as run_training, TrainConfig};

use crate::{
    BaselineArg, CurveMode, CurvesArgs, EnsembleArgs, EvalArgs, LossArg, ModelArg, PhantomArgs, PriorArg,
    TimepointArg, TrainArgs,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_INTERNAL: u8 = 3;

/// Bad arguments or configuration detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<vssdet::Error>() {
        Some(vssdet::Error::Generation { .. }) => EXIT_USAGE,
        Some(err) if err.is_data_error() => EXIT_DATA,
        Some(_) => EXIT_INTERNAL,
        None => EXIT_INTERNAL,
    }
}

fn selection(t: TimepointArg) -> TimepointSelection {
    match t {
        TimepointArg::All => TimepointSelection::All,
        TimepointArg::WithPrior => TimepointSelection::WithPrior,
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

/// `dir/stem.suffix` for a path `dir/stem.ext`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct SizeClasses {
    /// Under 100 mm³.
    tiny: usize,
    larger: usize,
}

#[derive(Serialize)]
struct PhantomSummary {
    n_patients: usize,
    n_timepoints: usize,
    lesions_by_size: SizeClasses,
    manifest: PathBuf,
}

pub fn phantom(args: PhantomArgs) -> Result<()> {
    let mut spec: PhantomSpec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| vssdet::Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("invalid phantom spec {}: {e}", path.display())))?
        }
        None => PhantomSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let studies = generate_corpus(&spec, args.n_patients)?;
    let manifest = write_corpus(&studies, &args.out)?;
    let mut sizes = SizeClasses { tiny: 0, larger: 0 };
    for study in &studies {
        for tp in &study.timepoints {
            for l in &tp.lesion_records {
                if l.volume_mm3(spec.spacing_mm) < 100.0 {
                    sizes.tiny += 1;
                } else {
                    sizes.larger += 1;
                }
            }
        }
    }
    let summary = PhantomSummary {
        n_patients: studies.len(),
        n_timepoints: spec.n_timepoints,
        lesions_by_size: sizes,
        manifest,
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn model_config(model: ModelArg, prior: PriorArg, seed: u64) -> ModelConfig {
    let base = match model {
        ModelArg::Desk => ModelConfig::desk(),
        ModelArg::Full => ModelConfig::default(),
    };
    ModelConfig {
        prior_mode: match prior {
            PriorArg::None => PriorMode::None,
            PriorArg::Channel => PriorMode::Channel,
            PriorArg::Path => PriorMode::Path,
        },
        seed,
        ..base
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&args.manifest)?;
    let loss = match args.loss {
        LossArg::Bce => Loss::Bce,
        LossArg::Dice => Loss::Dice,
        LossArg::Sse => Loss::Sse { alpha: args.alpha },
        LossArg::Jvss => Loss::Jvss(VssParams::with_alpha(args.alpha).map_err(|e| UsageError(e.to_string()))?),
    };
    let config = TrainConfig {
        loss,
        epochs: args.epochs,
        segments_per_epoch: args.segments_per_epoch,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        timepoints: selection(args.timepoints),
        seed: args.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let model = model_config(args.model, args.prior_mode, args.seed);
    let (checkpoint, log) = run_training(&corpus, &model, &config)?;
    write_checkpoint(&checkpoint, &args.out)?;
    write_json(&log, &sibling(&args.out, "log.json"))?;
    let last = log.epochs.last().map(|e| e.train_loss);
    eprintln!(
        "trained {} epochs, final loss {}, checkpoint {}",
        log.epochs.len(),
        last.map(|l| format!("{l:.4}")).unwrap_or_else(|| "n/a".into()),
        log.checkpoint_id
    );
    Ok(())
}

enum AnyPredictor {
    Network(Box<Network>),
    Oracle,
    Zero,
}

impl AnyPredictor {
    fn load(ckpt: Option<&Path>, baseline: Option<BaselineArg>) -> Result<Self> {
        match (ckpt, baseline) {
            (_, Some(BaselineArg::Oracle)) => Ok(Self::Oracle),
            (_, Some(BaselineArg::Zero)) => Ok(Self::Zero),
            (Some(path), None) => Ok(Self::Network(Box::new(read_checkpoint(path)?.network()?))),
            (None, None) => Err(UsageError("a checkpoint or a baseline predictor is required".into()).into()),
        }
    }

    fn as_dyn(&self) -> &dyn Predictor {
        match self {
            Self::Network(n) => n.as_ref(),
            Self::Oracle => &OraclePredictor,
            Self::Zero => &ZeroPredictor,
        }
    }
}

fn check_grid(corpus: &[LongitudinalStudy], predictor: &AnyPredictor) -> Result<()> {
    if let AnyPredictor::Network(net) = predictor {
        let out = net.config().output_size_for(net.config().infer_size).unwrap_or(0);
        for s in corpus {
            if s.dims().iter().any(|&d| d < out) {
                return Err(vssdet::Error::invalid(format!(
                    "study {} grid {:?} is smaller than the checkpoint's {out}-voxel output tile",
                    s.patient_id,
                    s.dims()
                ))
                .into());
            }
        }
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&args.manifest)?;
    let predictor = AnyPredictor::load(args.ckpt.as_deref(), args.baseline)?;
    check_grid(&corpus, &predictor)?;
    let config = EvalConfig {
        threshold: args.threshold as f32,
        tile_size: args.tile_size,
        timepoints: selection(args.timepoints),
    };
    let predictions = predict_corpus(predictor.as_dyn(), &corpus, config.timepoints)?;
    let report = evaluate_predictions(&predictions, &corpus, &config)?;
    write_json(&report, &args.report)?;
    let name = args.name.clone().unwrap_or_else(|| {
        args.ckpt
            .as_deref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{:?}", args.baseline.expect("group")).to_lowercase())
    });
    write_atomic(
        &sibling(&args.report, "table1.csv"),
        format!("{TABLE1_HEADER}\n{}\n", report.table1_row(&name)).as_bytes(),
    )?;
    write_atomic(
        &sibling(&args.report, "table2.csv"),
        format!("{TABLE2_HEADER}\n{}\n", report.table2_row(&name)).as_bytes(),
    )?;
    println!("{TABLE2_HEADER}\n{}", report.table2_row(&name));
    Ok(())
}

#[derive(Serialize)]
struct ComponentRow {
    id: u32,
    tag: vssdet::ensemble::Tag,
    source: vssdet::ensemble::Source,
    n_voxels: usize,
}

pub fn ensemble(args: EnsembleArgs) -> Result<()> {
    let corpus = load_corpus(&args.manifest)?;
    let sens = AnyPredictor::load(Some(&args.ckpt_sens), None)?;
    let spec = AnyPredictor::load(Some(&args.ckpt_spec), None)?;
    check_grid(&corpus, &sens)?;
    check_grid(&corpus, &spec)?;
    let sel = selection(args.timepoints);
    let a = predict_corpus(sens.as_dyn(), &corpus, sel)?;
    let b = predict_corpus(spec.as_dyn(), &corpus, sel)?;
    let threshold = args.threshold as f32;
    let outputs = ensemble_predictions(&a, &b, threshold)?;
    for o in &outputs {
        let study = &corpus[o.study];
        let dir = args.out.join(&study.patient_id);
        let mut mask = o.annotated.mask.clone();
        mask.meta = study.timepoints[o.timepoint].reference_mask.meta.clone();
        write_mask(&mask, &dir.join(format!("t{}_union.vxg", o.timepoint)))?;
        let rows: Vec<ComponentRow> = o
            .annotated
            .components
            .iter()
            .map(|c| ComponentRow {
                id: c.id,
                tag: c.tag,
                source: c.source,
                n_voxels: c.size(),
            })
            .collect();
        write_json(&rows, &dir.join(format!("t{}_components.json", o.timepoint)))?;
    }
    let queue = review_queue(&outputs, &corpus, threshold);
    write_json(&queue, &args.out.join("review_queue.json"))?;
    println!(
        "{} confirmed, {} candidates for review ({:.2} per volume)",
        queue.total_confirmed, queue.total_candidates, queue.candidates_per_volume
    );
    Ok(())
}

fn write_curve(curve: &CurvePoints, prefix: &Path) -> Result<()> {
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    write_atomic(&with(".csv"), curve.to_csv().as_bytes())?;
    write_json(curve, &with(".json"))?;
    crate::plot::write_curve_png(&curve.points, &with(".png")).context("writing plot")?;
    println!("auc,{:.4}", curve.auc);
    Ok(())
}

pub fn curves(args: CurvesArgs) -> Result<()> {
    let curve = match args.mode {
        CurveMode::Roc => {
            let manifest = args.manifest.as_deref().ok_or_else(|| UsageError("--manifest is required".into()))?;
            let corpus = load_corpus(manifest)?;
            let predictor = AnyPredictor::load(args.ckpt.as_deref(), args.baseline)?;
            check_grid(&corpus, &predictor)?;
            let predictions = predict_corpus(predictor.as_dyn(), &corpus, selection(args.timepoints))?;
            let pairs: Vec<_> = predictions
                .iter()
                .map(|p| (&p.probability, &corpus[p.study].timepoints[p.timepoint].reference_mask))
                .collect();
            roc_points_pooled(&pairs, args.tile_size, &descending_thresholds(args.steps))?
        }
        CurveMode::Pr => {
            let mut points = Vec::with_capacity(args.reports.len());
            for path in &args.reports {
                let text = std::fs::read_to_string(path).map_err(|e| vssdet::Error::io(path, e))?;
                let report: EvalReport = serde_json::from_str(&text)
                    .map_err(|e| vssdet::Error::Manifest(format!("{}: {e}", path.display())))?;
                points.push((report.lesion.sensitivity, report.lesion.precision));
            }
            pr_points(&points)?
        }
    };
    write_curve(&curve, &args.out)
}
