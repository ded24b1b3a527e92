use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tongue_core::data::{
    fold_attribute_counts, load_manifest, split_folds, synth_sample, write_manifest, FoldPlan, SampleRecord, SynthConfig,
};
use tongue_core::imgcore::{load_image, load_mask, save_image, save_mask, GrayImage, Image, Mask};
use tongue_core::metrics::{roc_curve, MetricReport};
use tongue_core::orientation::{draw_overlay, estimate_axis, upright_orient, OrientationParams};
use tongue_core::pipeline::{prepare, views_sample, PipelineParams};
use tongue_core::regions::{separate_regions, RegionParams};
use tongue_core::signnet::{
    attr_weights, positive_counts, stack_batch, train, FurRule, LossWeights, Sample, SignNet, SignNetConfig, TrainConfig,
    ATTRIBUTE_COUNT, ATTRIBUTE_NAMES,
};
use tongue_core::tensorad::Checkpoint;

use crate::args::*;
use crate::config::UsageError;
use crate::predictions::{read_predictions, write_predictions, PredictionRow};

/// Stored in the checkpoint header so `predict` can rebuild the pipeline.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub network: SignNetConfig,
    pub orientation: OrientationParams,
    pub regions: RegionParams,
    pub fold: Option<usize>,
    pub best_epoch: usize,
    pub best_f1: f64,
}

pub fn run(cmd: Command) -> Result<()> {
    if cmd.common().workers == 0 {
        return Err(UsageError("--workers must be at least 1".into()).into());
    }
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Normalize(a) => normalize(a),
        Command::Separate(a) => separate(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Roc(a) => roc(a),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Runs `f` over `items` on `workers` threads; results keep input order.
fn par_map<I: Sync, R: Send>(workers: usize, items: &[I], f: impl Fn(usize, &I) -> Result<R> + Sync) -> Result<Vec<R>> {
    pool(workers)?.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn create_file(p: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    Ok(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
}

fn write_json<T: Serialize>(p: &Path, value: &T) -> Result<()> {
    let mut w = create_file(p)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Manifest rows plus the directory their relative paths hang off.
struct Manifest {
    records: Vec<SampleRecord>,
    base: PathBuf,
}

impl Manifest {
    fn load(path: &Path) -> Result<Self> {
        let records = load_manifest(path).with_context(|| format!("manifest {}", path.display()))?;
        if records.is_empty() {
            bail!("manifest {} has no rows", path.display());
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { records, base })
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Image and mask of row `i` (rows are numbered from 1 in messages).
    fn load_pair(&self, i: usize) -> Result<(Image, Mask)> {
        let r = &self.records[i];
        let img_path = self.resolve(&r.image_path);
        let img = load_image(&img_path).with_context(|| format!("row {}: image {}", i + 1, img_path.display()))?;
        let Some(mask_rel) = &r.mask_path else {
            bail!("row {}: {} has no mask_path", i + 1, r.image_path);
        };
        let mask_path = self.resolve(mask_rel);
        let mask = load_mask(&mask_path).with_context(|| format!("row {}: mask {}", i + 1, mask_path.display()))?;
        Ok((img, mask))
    }

    /// File stems, checked to be unique so outputs cannot collide.
    fn stems(&self) -> Result<Vec<String>> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let stem = Path::new(&r.image_path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| anyhow!("row {}: no file name in {:?}", i + 1, r.image_path))?;
                if !seen.insert(stem.clone()) {
                    bail!("row {}: output name {stem:?} already used by an earlier row", i + 1);
                }
                Ok(stem)
            })
            .collect()
    }
}

fn orientation_params(a: &OrientArgs) -> OrientationParams {
    OrientationParams {
        alpha: a.alpha,
        smoothing: a.smoothing,
        margin: a.margin,
        ..OrientationParams::default()
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        count: a.count,
        side: a.side,
        rotation_range: (-a.max_rotation, a.max_rotation),
        probabilities: [a.probability; ATTRIBUTE_COUNT],
        noise: a.noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    create_dir(&a.out.join("images"))?;
    create_dir(&a.out.join("masks"))?;
    let indices: Vec<usize> = (0..a.count).collect();
    let records = par_map(a.common.workers, &indices, |_, &i| {
        let s = synth_sample(&cfg, i);
        let name = format!("synth_{i:05}");
        let image_path = format!("images/{name}.png");
        let mask_path = format!("masks/{name}.png");
        save_image(&s.image, a.out.join(&image_path))?;
        save_mask(&s.mask, a.out.join(&mask_path))?;
        Ok(SampleRecord {
            image_path,
            mask_path: Some(mask_path),
            subject_id: name,
            attrs: s.labels,
            age: None,
            gender: None,
        })
    })?;
    write_manifest(create_file(&a.out.join("manifest.csv"))?, &records)?;
    println!("wrote {} synthetic tongues to {}", records.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct OrientationRow {
    image_path: String,
    theta: f64,
    applied_rotation: f64,
    passes: usize,
}

fn normalize(a: NormalizeArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let params = orientation_params(&a.orient);
    params.validate()?;
    let stems = m.stems()?;
    for dir in ["images", "masks"] {
        create_dir(&a.out.join(dir))?;
    }
    if a.overlay {
        create_dir(&a.out.join("overlays"))?;
    }
    let rows = par_map(a.common.workers, &m.records, |i, r| {
        let (img, mask) = m.load_pair(i)?;
        let up = upright_orient(&img, &mask, &params).with_context(|| format!("row {}: {}", i + 1, r.image_path))?;
        let image_path = format!("images/{}.png", stems[i]);
        let mask_path = format!("masks/{}.png", stems[i]);
        save_image(&up.image, a.out.join(&image_path))?;
        save_mask(&up.mask, a.out.join(&mask_path))?;
        if a.overlay {
            let est = estimate_axis(&GrayImage::from_mask(&mask), &params)?;
            save_image(&draw_overlay(&img, &est), a.out.join(format!("overlays/{}.png", stems[i])))?;
        }
        let rec = SampleRecord {
            image_path: image_path.clone(),
            mask_path: Some(mask_path),
            ..r.clone()
        };
        let row = OrientationRow {
            image_path,
            theta: up.theta,
            applied_rotation: up.applied_rotation,
            passes: up.passes,
        };
        Ok((rec, row))
    })?;
    let (records, orient): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    write_manifest(create_file(&a.out.join("manifest.csv"))?, &records)?;
    let mut w = csv::Writer::from_writer(create_file(&a.out.join("orientation.csv"))?);
    for row in &orient {
        w.serialize(row)?;
    }
    w.flush()?;
    println!("uprighted {} images into {}", records.len(), a.out.display());
    Ok(())
}

fn separate(a: SeparateArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let params = RegionParams {
        edge_ratio: a.region.edge_ratio,
    };
    let stems = m.stems()?;
    create_dir(&a.out)?;
    par_map(a.common.workers, &m.records, |i, r| {
        let (img, mask) = m.load_pair(i)?;
        let whole = img.masked(&mask).with_context(|| format!("row {}: {}", i + 1, r.image_path))?;
        let pair = separate_regions(&whole, &mask, &params).with_context(|| format!("row {}: {}", i + 1, r.image_path))?;
        let stem = &stems[i];
        save_image(&pair.body, a.out.join(format!("{stem}.body.png")))?;
        save_image(&pair.edge, a.out.join(format!("{stem}.edge.png")))?;
        save_mask(&pair.body_mask, a.out.join(format!("{stem}.body_mask.png")))?;
        save_mask(&pair.edge_mask, a.out.join(format!("{stem}.edge_mask.png")))?;
        Ok(())
    })?;
    println!("separated {} images into {}", m.records.len(), a.out.display());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let m = Manifest::load(&a.manifest)?;
    let plan = split_folds(&m.records, a.k, a.holdout, a.seed)?;
    write_json(&a.out, &plan)?;
    let counts = fold_attribute_counts(&m.records, &plan);
    for (i, (s, n)) in counts.subjects.iter().zip(&counts.images).enumerate() {
        println!("fold {i}: {s} subjects, {n} images");
    }
    println!("hold-out: {} subjects, {} images", plan.holdout.len(), counts.holdout_images);
    Ok(())
}

fn prepare_samples(m: &Manifest, params: &PipelineParams, side: usize, workers: usize) -> Result<Vec<Sample<f64>>> {
    par_map(workers, &m.records, |i, r| {
        let (img, mask) = m.load_pair(i)?;
        let views = prepare(&img, &mask, params, side).with_context(|| format!("row {}: {}", i + 1, r.image_path))?;
        Ok(views_sample(&views, r.attrs))
    })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let network = SignNetConfig {
        input_side: a.side,
        widths: a.widths.clone(),
        blocks: a.blocks,
        d_model: a.d_model,
        ffn_mult: a.ffn_mult,
        fur: FurRule {
            include_redspot: a.fur_includes_redspot,
        },
    };
    network.validate()?;
    let pipeline = PipelineParams {
        orientation: orientation_params(&a.orient),
        regions: RegionParams {
            edge_ratio: a.region.edge_ratio,
        },
    };
    let m = Manifest::load(&a.manifest)?;
    let plan: Option<FoldPlan> = match &a.plan {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("fold plan {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("fold plan {}", p.display()))?)
        }
        None => None,
    };
    eprintln!("preparing {} images at {} px", m.records.len(), a.side);
    let samples = prepare_samples(&m, &pipeline, a.side, a.common.workers)?;

    let runs: Vec<Option<usize>> = match (&plan, a.fold) {
        (None, _) => vec![None],
        (Some(p), Some(f)) if f >= p.k() => bail!("--fold {f} out of range for a {}-fold plan", p.k()),
        (Some(_), Some(f)) => vec![Some(f)],
        (Some(p), None) => (0..p.k()).map(Some).collect(),
    };
    for fold in runs {
        let (train_set, val_set): (Vec<Sample<f64>>, Option<Vec<Sample<f64>>>) = match (&plan, fold) {
            (Some(p), Some(f)) => {
                let mut tr = Vec::new();
                let mut va = Vec::new();
                for (r, s) in m.records.iter().zip(&samples) {
                    match p.fold_of(&r.subject_id) {
                        Some(g) if g == f => va.push(s.clone()),
                        Some(_) => tr.push(s.clone()),
                        None => {}
                    }
                }
                (tr, Some(va))
            }
            _ => (samples.clone(), None),
        };
        let alpha = match a.class_weights {
            ClassWeights::Uniform => [1.0; ATTRIBUTE_COUNT],
            ClassWeights::Median => {
                let labels: Vec<_> = train_set.iter().map(|s| s.labels).collect();
                attr_weights::<f64>(&positive_counts(&labels)).context("class weights from the training split")?
            }
        };
        let weights = LossWeights {
            w_color: a.w_color,
            w_fur: a.w_fur,
            alpha,
        };
        let cfg = TrainConfig {
            lr: a.lr,
            batch_size: a.batch_size,
            epochs: a.epochs,
            seed: a.seed,
            weight_decay: a.weight_decay,
            max_steps: a.max_steps,
            stop_at_f1: a.stop_at_f1,
        };
        let dir = match fold {
            Some(f) => a.out.join(format!("fold{f}")),
            None => a.out.clone(),
        };
        create_dir(&dir)?;
        let mut log = create_file(&dir.join("log.jsonl"))?;
        let mut log_err = None;
        let mut net = SignNet::<f64>::new(network.clone(), a.seed)?;
        let label = fold.map_or("all".to_string(), |f| format!("fold {f}"));
        eprintln!("{label}: {} training, {} validation samples", train_set.len(), val_set.as_ref().map_or(0, Vec::len));
        let report = train(&mut net, &train_set, val_set.as_deref(), &weights, &cfg, |e| {
            eprintln!("{label} epoch {} {}: loss {:.4}, average F1 {:.4}", e.epoch, e.split, e.loss, e.average_f1);
            if let Err(err) = serde_json::to_writer(&mut log, e).map_err(anyhow::Error::from).and_then(|_| Ok(writeln!(log)?)) {
                log_err.get_or_insert(err);
            }
        })?;
        if let Some(err) = log_err {
            return Err(err.context(format!("writing {}", dir.join("log.jsonl").display())));
        }
        log.flush()?;
        let meta = ModelMeta {
            network: network.clone(),
            orientation: pipeline.orientation.clone(),
            regions: pipeline.regions,
            fold,
            best_epoch: report.best_epoch,
            best_f1: report.best_f1,
        };
        let ckpt = Checkpoint::new(a.seed, Some(serde_json::to_value(&meta)?), net.params().clone());
        ckpt.save(dir.join("model.ckpt"))?;
        write_json(&dir.join("report.json"), &report)?;
        println!(
            "{label}: best average F1 {:.4} at epoch {} after {} steps -> {}",
            report.best_f1,
            report.best_epoch,
            report.steps,
            dir.join("model.ckpt").display()
        );
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::<f64>::load(&a.checkpoint).with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    let meta: ModelMeta = serde_json::from_value(
        ckpt.meta
            .clone()
            .ok_or_else(|| anyhow!("checkpoint {} carries no model settings", a.checkpoint.display()))?,
    )
    .with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    let net = SignNet::from_params(meta.network.clone(), ckpt.params)?;
    let m = Manifest::load(&a.manifest)?;
    let pipeline = PipelineParams {
        orientation: meta.orientation.clone(),
        regions: meta.regions,
    };
    let samples = prepare_samples(&m, &pipeline, meta.network.input_side, a.common.workers)?;
    let mut rows = Vec::with_capacity(samples.len());
    for (chunk, recs) in samples.chunks(a.batch_size.max(1)).zip(m.records.chunks(a.batch_size.max(1))) {
        let refs: Vec<&Sample<f64>> = chunk.iter().collect();
        let b = stack_batch(&refs)?;
        for (p, r) in net.predict(&b.whole, &b.body, &b.edge)?.iter().zip(recs) {
            rows.push(PredictionRow {
                image_path: r.image_path.clone(),
                bits: p.attr_bits(),
                scores: Some(p.attr_probs()),
            });
        }
    }
    write_predictions(create_file(&a.out)?, &rows)?;
    println!("wrote {} predictions to {}", rows.len(), a.out.display());
    Ok(())
}

struct Joined {
    pred: Vec<[bool; ATTRIBUTE_COUNT]>,
    truth: Vec<[bool; ATTRIBUTE_COUNT]>,
    scores: Option<Vec<Vec<f64>>>,
}

/// Pairs every manifest row with its prediction by image path.
fn join(predictions: &Path, manifest: &Path) -> Result<Joined> {
    let rows = read_predictions(predictions)?;
    let m = Manifest::load(manifest)?;
    let by_path: HashMap<&str, &PredictionRow> = rows.iter().map(|r| (r.image_path.as_str(), r)).collect();
    let mut out = Joined {
        pred: Vec::new(),
        truth: Vec::new(),
        scores: rows.iter().all(|r| r.scores.is_some()).then(Vec::new),
    };
    for (i, r) in m.records.iter().enumerate() {
        let p = by_path.get(r.image_path.as_str()).ok_or_else(|| {
            anyhow!("{}: no prediction for manifest row {} ({})", predictions.display(), i + 1, r.image_path)
        })?;
        out.pred.push(p.bits);
        out.truth.push(r.attrs.0);
        if let (Some(s), Some(ps)) = (out.scores.as_mut(), p.scores) {
            s.push(ps.to_vec());
        }
    }
    let known: HashSet<&str> = m.records.iter().map(|r| r.image_path.as_str()).collect();
    if let Some(extra) = rows.iter().find(|r| !known.contains(r.image_path.as_str())) {
        bail!("{}: {} is not in manifest {}", predictions.display(), extra.image_path, manifest.display());
    }
    Ok(out)
}

fn write_roc(dir: &Path, j: &Joined) -> Result<Vec<(String, Option<f64>)>> {
    let scores = j
        .scores
        .as_ref()
        .ok_or_else(|| anyhow!("ROC curves need score columns in the predictions file"))?;
    create_dir(dir)?;
    let mut aucs = Vec::new();
    for (k, name) in ATTRIBUTE_NAMES.iter().enumerate() {
        let s: Vec<f64> = scores.iter().map(|row| row[k]).collect();
        let t: Vec<bool> = j.truth.iter().map(|row| row[k]).collect();
        match roc_curve(&s, &t) {
            Ok(curve) => {
                let mut w = create_file(&dir.join(format!("{name}.roc.txt")))?;
                writeln!(w, "# fpr tpr")?;
                for (fpr, tpr) in &curve.points {
                    writeln!(w, "{fpr} {tpr}")?;
                }
                w.flush()?;
                aucs.push((name.to_string(), Some(curve.auc)));
            }
            Err(tongue_core::metrics::MetricError::SingleClass) => aucs.push((name.to_string(), None)),
            Err(e) => return Err(e).context(format!("ROC for {name}")),
        }
    }
    let summary: serde_json::Map<String, serde_json::Value> = aucs.iter().map(|(n, a)| (n.clone(), serde_json::json!(a))).collect();
    write_json(&dir.join("auc.json"), &summary)?;
    Ok(aucs)
}

fn eval(a: EvalArgs) -> Result<()> {
    let j = join(&a.predictions, &a.manifest)?;
    let report = MetricReport::build(&ATTRIBUTE_NAMES, &j.pred, &j.truth, j.scores.as_deref())?;
    write_json(&a.out, &report)?;
    if let Some(dir) = &a.roc_dir {
        write_roc(dir, &j)?;
    }
    println!(
        "{} samples: average accuracy {:.4}, average F1 {:.4}, Jaccard {:.4}",
        report.samples, report.average_accuracy, report.average_f1, report.jaccard
    );
    Ok(())
}

fn roc(a: RocArgs) -> Result<()> {
    let j = join(&a.predictions, &a.manifest)?;
    for (name, auc) in write_roc(&a.out, &j)? {
        match auc {
            Some(v) => println!("{name}: AUC {v:.4}"),
            None => println!("{name}: single-class labels, no curve"),
        }
    }
    Ok(())
}
