use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{KeepCheckpoints, OptimKind, ScheduleKind, Scheme, TrainConfig};
use super::data::{load_data, DataBundle};
use super::manifest::{select_best, BestPointer, DigestPair, EpochRecord, Metrics, RunDir, RunManifest, RunStatus};
use super::schedule::{lr_at, WarmupCosine};
use crate::adapt::{
    uda_objective, CdanHead, DomainDiscriminator, GrlSchedule, JointEmbedder, LossBreakdown, MccConfig, SourceBatch,
    TargetBatch, UdaTerms, UdaWeights,
};
use crate::backbone::{load_backbone, load_checkpoint, save_checkpoint, CheckpointMeta, ClassifierModel, Trainable};
use crate::datakit::{
    batch_labels, derive_seed, single_epoch, AugmentationPolicy, BatchBuilder, Domain, DomainDataset, PairedLoader,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalReport};
use crate::tensor::{argmax_rows, Graph, Optimizer, ParamStore, UpdateRule};

type Model = ClassifierModel<f32>;

const HEAD_SALT: u64 = 0x6865_6164;
const DISC_SALT: u64 = 0x6469_7363;
const EMBED_SALT: u64 = 0x656d_6264;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Parallel augmentation. Results are identical either way.
    pub parallel: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            parallel: false,
        }
    }
}

pub struct TrainOutcome {
    pub manifest: RunManifest,
    /// Weights after the last completed step.
    pub model: Model,
    pub run_dir: PathBuf,
}

/// Loads data and dispatches on the configured scheme.
pub fn run_config(cfg: &TrainConfig, opts: &RunOptions) -> Result<TrainOutcome> {
    let data = load_data(&cfg.data)?;
    match cfg.scheme {
        Scheme::Ch | Scheme::Ft => {
            let model = init_model(cfg, data.class_names().len())?;
            train_source_only(cfg, model, &data, opts)
        }
        Scheme::ChFt => train_ch_ft(cfg, &data, opts),
        Scheme::Uda => {
            let model = init_model(cfg, data.class_names().len())?;
            train_uda(cfg, model, &data, opts)
        }
    }
}

/// Backbone from `init_checkpoint`, or a fresh backbone with a new head.
pub fn init_model(cfg: &TrainConfig, num_classes: usize) -> Result<Model> {
    match cfg.init_path() {
        Some(path) => {
            let (model, _) = load_checkpoint::<f32>(&path)?;
            check_compatible(cfg, &model, num_classes, &path)?;
            Ok(model)
        }
        None => {
            let mut model = load_backbone::<f32>(&cfg.model.spec()?, cfg.seed)?;
            model.replace_head(num_classes, derive_seed(&[cfg.seed, HEAD_SALT]))?;
            Ok(model)
        }
    }
}

fn check_compatible(cfg: &TrainConfig, model: &Model, num_classes: usize, path: &Path) -> Result<()> {
    if model.num_classes() != num_classes {
        return Err(Error::config(format!(
            "checkpoint {} has {} classes, data has {num_classes}",
            path.display(),
            model.num_classes()
        )));
    }
    let spec = cfg.model.spec()?;
    if model.spec().resolution != spec.resolution || model.feature_dim() != spec.feature_dim {
        return Err(Error::config(format!(
            "checkpoint {} was trained at resolution {} with d_f {}, config asks for {} and {}",
            path.display(),
            model.spec().resolution,
            model.feature_dim(),
            spec.resolution,
            spec.feature_dim
        )));
    }
    Ok(())
}

fn store_digest(store: &ParamStore<f32>) -> String {
    let mut h = Sha256::new();
    for (_, p) in store.iter() {
        h.update(p.name.as_bytes());
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn update_rule(cfg: &TrainConfig) -> UpdateRule {
    match cfg.optim_kind() {
        OptimKind::Sgd => UpdateRule::Sgd {
            momentum: cfg.optim.momentum,
            weight_decay: cfg.weight_decay(),
        },
        OptimKind::Adamw => UpdateRule::adamw(cfg.weight_decay()),
    }
}

struct LrPlan {
    schedule: Option<WarmupCosine>,
    lr: f64,
}

impl LrPlan {
    fn new(cfg: &TrainConfig, steps_per_epoch: usize) -> Self {
        let schedule = match cfg.schedule_kind() {
            ScheduleKind::None => None,
            ScheduleKind::WarmupCosine => Some(WarmupCosine::from_epochs(
                cfg.optim.lr,
                cfg.warmup_epochs(),
                cfg.epochs,
                steps_per_epoch,
            )),
        };
        Self {
            schedule,
            lr: cfg.optim.lr,
        }
    }

    fn at(&self, step: u64) -> f64 {
        self.schedule.as_ref().map_or(self.lr, |s| lr_at(step, s))
    }
}

/// Running means over an epoch.
#[derive(Default)]
struct Tally {
    n: usize,
    sums: std::collections::BTreeMap<&'static str, f64>,
}

impl Tally {
    fn add(&mut self, key: &'static str, v: f64) {
        *self.sums.entry(key).or_default() += v;
    }

    fn means(&self) -> std::collections::BTreeMap<String, f64> {
        self.sums
            .iter()
            .map(|(k, v)| (k.to_string(), v / self.n.max(1) as f64))
            .collect()
    }
}

/// Epoch-end bookkeeping shared by all schemes.
struct Session<'a> {
    cfg: &'a TrainConfig,
    data: &'a DataBundle,
    dir: RunDir,
    manifest: RunManifest,
    parallel: bool,
}

impl<'a> Session<'a> {
    fn start(cfg: &'a TrainConfig, data: &'a DataBundle, opts: &RunOptions) -> Result<Self> {
        let dir = RunDir::create(&opts.out_dir, cfg)?;
        let manifest = RunManifest::new(cfg, data.class_names().to_vec());
        dir.write(&manifest)?;
        Ok(Self {
            cfg,
            data,
            dir,
            manifest,
            parallel: opts.parallel,
        })
    }

    fn evaluate_all(&self, model: &Model) -> Result<Vec<(&'static str, EvalReport)>> {
        let mut out = Vec::new();
        let b = self.cfg.eval_batch_size;
        if let Some(val) = &self.data.source_val {
            out.push(("val", evaluate(model, val, b, self.parallel)?));
        }
        out.push(("target", evaluate(model, &self.data.target, b, self.parallel)?));
        Ok(out)
    }

    fn end_epoch(&mut self, epoch: usize, steps: usize, model: &Model, train: Tally) -> Result<()> {
        let mut metrics = Metrics::new();
        metrics.insert("train".into(), train.means());
        let reports = self.evaluate_all(model)?;
        for (split, r) in &reports {
            let m = metrics.entry(split.to_string()).or_default();
            m.insert("top1".into(), r.micro_accuracy);
            m.insert("macro".into(), r.macro_mean);
        }
        let rel = RunDir::checkpoint_rel(epoch);
        let provenance = json!({
            "run": self.cfg.name,
            "scheme": self.cfg.scheme.as_str(),
            "method": self.manifest.method_label,
            "epoch": epoch,
            "epochs": self.cfg.epochs,
            "seed": self.cfg.seed,
            "config_hash": self.manifest.config_hash,
            "init_checkpoint": self.cfg.init_checkpoint,
            "upstream": self.manifest.provenance,
        });
        save_checkpoint(
            model,
            &CheckpointMeta::for_model(model, provenance),
            &self.dir.path(&rel),
        )?;
        self.manifest.epochs.push(EpochRecord {
            epoch,
            steps,
            metrics,
            checkpoint: Some(rel),
        });
        let sel = self.cfg.selection;
        let best_idx = select_best(&self.manifest.epochs, sel).ok();
        let previous = self.manifest.best.clone();
        if let Some(i) = best_idx {
            let rec = &self.manifest.epochs[i];
            self.manifest.best = Some(BestPointer {
                epoch: rec.epoch,
                metric: sel,
                value: rec.metric(sel).unwrap_or(f64::NAN),
                checkpoint: rec.checkpoint.clone(),
            });
            if rec.epoch == epoch {
                self.manifest.best_reports = reports.iter().map(|(s, r)| (s.to_string(), r.clone())).collect();
            }
        }
        self.manifest.final_reports = reports.into_iter().map(|(s, r)| (s.to_string(), r)).collect();
        if self.cfg.keep_checkpoints == KeepCheckpoints::Best {
            self.prune(previous.as_ref().and_then(|b| b.checkpoint.clone()), epoch)?;
        }
        self.dir.write(&self.manifest)?;
        let rec = self.manifest.epochs.last().expect("just pushed");
        info!(
            "{} epoch {epoch}/{}: {}",
            self.cfg.name,
            self.cfg.epochs,
            rec.metrics
                .iter()
                .flat_map(|(s, m)| m.iter().map(move |(k, v)| format!("{s}.{k}={v:.4}")))
                .collect::<Vec<_>>()
                .join(" ")
        );
        Ok(())
    }

    /// Drops every checkpoint except the current best.
    fn prune(&mut self, previous_best: Option<String>, epoch: usize) -> Result<()> {
        let best = self.manifest.best.as_ref().and_then(|b| b.checkpoint.clone());
        let mut stale = vec![previous_best];
        stale.push(Some(RunDir::checkpoint_rel(epoch)));
        for rel in stale.into_iter().flatten() {
            if Some(&rel) != best.as_ref() {
                let p = self.dir.path(&rel);
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
                for rec in &mut self.manifest.epochs {
                    if rec.checkpoint.as_deref() == Some(rel.as_str()) {
                        rec.checkpoint = None;
                    }
                }
            }
        }
        Ok(())
    }

    fn abort(&mut self, reason: String) -> Result<()> {
        warn!("{}: aborting, {reason}", self.cfg.name);
        self.manifest.status = RunStatus::AbortedUnstable;
        self.manifest.abort_reason = Some(reason);
        self.dir.write(&self.manifest)
    }

    fn finish(mut self, model: Model) -> Result<TrainOutcome> {
        if self.manifest.status == RunStatus::Running {
            self.manifest.status = RunStatus::Completed;
        }
        self.dir.write(&self.manifest)?;
        Ok(TrainOutcome {
            manifest: self.manifest,
            model,
            run_dir: self.dir.root().to_path_buf(),
        })
    }
}

fn train_policy(cfg: &TrainConfig, model: &Model) -> AugmentationPolicy {
    AugmentationPolicy::new(cfg.augmentation, model.spec().resolution)
}

/// Cross-entropy training on source batches: CH (head only, SGD, constant
/// rate) or FT (all parameters, AdamW, warmup-cosine).
pub fn train_source_only(
    cfg: &TrainConfig,
    mut model: Model,
    data: &DataBundle,
    opts: &RunOptions,
) -> Result<TrainOutcome> {
    let trainable = match cfg.scheme {
        Scheme::Ch => Trainable::HeadOnly,
        Scheme::Ft | Scheme::ChFt => Trainable::All,
        Scheme::Uda => return Err(Error::config("scheme uda goes through train_uda")),
    };
    if data.source.num_classes() != model.num_classes() {
        return Err(Error::config("model head does not match the source class count"));
    }
    model.set_trainable(trainable);
    let mut session = Session::start(cfg, data, opts)?;
    if let Some(p) = cfg.init_path() {
        session.manifest.provenance = checkpoint_provenance(&p)?;
    }
    let source = &data.source;
    let steps = source.len() / cfg.batch_size;
    if steps == 0 {
        return Err(Error::config(format!(
            "batch size {} exceeds the source set ({} samples)",
            cfg.batch_size,
            source.len()
        )));
    }
    let plan = LrPlan::new(cfg, steps);
    let mut opt = Optimizer::new(update_rule(cfg), cfg.optim.lr);
    let builder = BatchBuilder::new(train_policy(cfg, &model), cfg.seed, opts.parallel);
    let mut global = 0u64;
    'epochs: for epoch in 1..=cfg.epochs {
        let batches = single_epoch(source.len(), cfg.batch_size, cfg.seed, epoch, Domain::Source)?;
        let mut tally = Tally::default();
        for (step, idx) in batches.iter().enumerate() {
            let lr = plan.at(global);
            let x = builder.images::<f32>(source, idx, epoch, step)?;
            let labels = batch_labels(source, idx)?;
            let (loss, correct, grads) = {
                let mut g = Graph::new();
                let bound = model.params.bind(&mut g);
                let xv = g.constant(x);
                let (_, z) = model.forward(&mut g, &bound, xv)?;
                let loss = g.cross_entropy(z, &labels);
                let lv = g.value(loss).item() as f64;
                let correct = argmax_rows(g.value(z))
                    .iter()
                    .zip(&labels)
                    .filter(|(p, y)| p == y)
                    .count();
                let mut gr = g.backward(loss);
                (lv, correct, bound.grads(&mut gr))
            };
            if !loss.is_finite() || !grads.all_finite() {
                session.abort(format!("non-finite loss at epoch {epoch}, step {step}"))?;
                break 'epochs;
            }
            opt.set_lr(lr);
            opt.step(&mut model.params, &grads);
            global += 1;
            tally.n += 1;
            tally.add("loss", loss);
            tally.add("accuracy", 100.0 * correct as f64 / labels.len() as f64);
            tally.add("lr", lr);
        }
        if !model.params.iter().all(|(_, p)| p.value.all_finite()) {
            session.abort(format!("non-finite parameters after epoch {epoch}"))?;
            break;
        }
        session.end_epoch(epoch, steps, &model, tally)?;
    }
    session.finish(model)
}

fn checkpoint_provenance(path: &Path) -> Result<serde_json::Value> {
    let (_, meta) = load_checkpoint::<f32>(path)?;
    Ok(json!({ "init_checkpoint": path.to_string_lossy(), "checkpoint": meta.provenance }))
}

/// FT from the best CH checkpoint named by `init_checkpoint`. The manifest
/// records the CH epochs so the total budget is CH plus FT epochs.
pub fn train_ch_ft(cfg: &TrainConfig, data: &DataBundle, opts: &RunOptions) -> Result<TrainOutcome> {
    let path = cfg
        .init_path()
        .ok_or_else(|| Error::config("ch_ft needs init_checkpoint pointing at a CH checkpoint"))?;
    if !path.is_file() {
        return Err(Error::config(format!(
            "CH checkpoint {} does not exist",
            path.display()
        )));
    }
    let model = init_model(cfg, data.class_names().len())?;
    let mut out = train_source_only(cfg, model, data, opts)?;
    let ch_epochs = out.manifest.provenance["checkpoint"]["epochs"].as_u64();
    out.manifest.provenance["ch_epochs"] = json!(ch_epochs);
    out.manifest.provenance["total_epochs"] = json!(ch_epochs.map(|c| c as usize + cfg.epochs));
    RunDir::create(&out.run_dir, cfg)?.write(&out.manifest)?;
    Ok(out)
}

/// Joint training of classifier and discriminator on paired batches with
/// one optimizer. Target labels are never read inside the step loop.
pub fn train_uda(cfg: &TrainConfig, mut model: Model, data: &DataBundle, opts: &RunOptions) -> Result<TrainOutcome> {
    let uda = cfg
        .uda
        .as_ref()
        .ok_or_else(|| Error::config("scheme uda requires a [uda] section"))?;
    let (source, target) = (&data.source, &data.target);
    if source.num_classes() != model.num_classes() || target.num_classes() != model.num_classes() {
        return Err(Error::config("model head does not match the dataset class count"));
    }
    model.set_trainable(Trainable::All);
    let mut session = Session::start(cfg, data, opts)?;
    if let Some(p) = cfg.init_path() {
        session.manifest.provenance = checkpoint_provenance(&p)?;
    }
    let (d_f, c) = (model.feature_dim(), model.num_classes());
    let embedder = JointEmbedder::<f32>::new(d_f, c, uda.random_dim, derive_seed(&[cfg.seed, EMBED_SALT]));
    let mut disc =
        DomainDiscriminator::<f32>::new(embedder.output_dim(), uda.hidden, derive_seed(&[cfg.seed, DISC_SALT]));
    let disc_start = store_digest(&disc.params);
    let loader = PairedLoader::new(source, target, cfg.batch_size, cfg.seed)?;
    let steps = loader.steps_per_epoch();
    let plan = LrPlan::new(cfg, steps);
    let mut grl = GrlSchedule::new((steps * cfg.epochs) as u64);
    let mut opt = Optimizer::new(update_rule(cfg), cfg.optim.lr);
    let builder = BatchBuilder::new(train_policy(cfg, &model), cfg.seed, opts.parallel);
    let mcc = MccConfig {
        temperature: uda.mcc_temperature,
        detach_weights: uda.detach_mcc_weights,
    };
    let weights = UdaWeights {
        cdan: uda.cdan_weight,
        mcc: uda.mcc_weight,
    };
    let mut leaked = 0u64;
    let mut global = 0u64;
    'epochs: for epoch in 1..=cfg.epochs {
        let mut tally = Tally::default();
        for (step, pair) in loader.epoch(epoch).iter().enumerate() {
            let reads_before = target.label_reads();
            let lr = plan.at(global);
            let lambda = grl.lambda();
            let xs = builder.images::<f32>(source, &pair.source, epoch, step)?;
            let xt = builder.images::<f32>(target, &pair.target, epoch, step)?;
            let labels = batch_labels(source, &pair.source)?;
            let (parts, correct, mgrads, dgrads) = {
                let mut g = Graph::new();
                let mb = model.params.bind(&mut g);
                let db = disc.params.bind(&mut g);
                let xs = g.constant(xs);
                let xt = g.constant(xt);
                let (fs, zs) = model.forward(&mut g, &mb, xs)?;
                let (ft, zt) = model.forward(&mut g, &mb, xt)?;
                let head = CdanHead {
                    discriminator: &disc,
                    bound: &db,
                    embedder: &embedder,
                };
                let terms = UdaTerms {
                    method: uda.method,
                    weights,
                    cdan: Some(head),
                    lambda: lambda as f32,
                    entropy_conditioning: uda.entropy_conditioning,
                    mcc: mcc.clone(),
                };
                let result = uda_objective(
                    &mut g,
                    SourceBatch {
                        features: fs,
                        logits: zs,
                        labels: &labels,
                    },
                    TargetBatch {
                        features: ft,
                        logits: zt,
                    },
                    &terms,
                );
                let (total, parts) = match result {
                    Ok(v) => v,
                    Err(Error::Numeric(m)) => {
                        session.abort(format!("epoch {epoch}, step {step}: {m}"))?;
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                let correct = argmax_rows(g.value(zs))
                    .iter()
                    .zip(&labels)
                    .filter(|(p, y)| p == y)
                    .count();
                let mut gr = g.backward(total);
                (parts, correct, mb.grads(&mut gr), db.grads(&mut gr))
            };
            leaked += (target.label_reads() - reads_before) as u64;
            if leaked != 0 {
                return Err(Error::Contract(format!(
                    "{}: target labels were read during optimization",
                    cfg.name
                )));
            }
            if !parts.total.is_finite() || !mgrads.all_finite() || !dgrads.all_finite() {
                session.abort(format!("non-finite loss at epoch {epoch}, step {step}"))?;
                break 'epochs;
            }
            opt.set_lr(lr);
            opt.step(&mut model.params, &mgrads);
            opt.step(&mut disc.params, &dgrads);
            grl.advance();
            global += 1;
            record_parts(&mut tally, &parts, lr, lambda, correct, labels.len());
        }
        if !model.params.iter().all(|(_, p)| p.value.all_finite()) {
            session.abort(format!("non-finite parameters after epoch {epoch}"))?;
            break;
        }
        session.end_epoch(epoch, steps, &model, tally)?;
    }
    session.manifest.target_label_reads_in_optimization = Some(leaked);
    session.manifest.discriminator_digest = Some(DigestPair {
        start: disc_start,
        end: store_digest(&disc.params),
    });
    session.finish(model)
}

fn record_parts(t: &mut Tally, p: &LossBreakdown, lr: f64, lambda: f64, correct: usize, n: usize) {
    t.n += 1;
    t.add("loss", p.total);
    t.add("source_ce", p.source_ce);
    t.add("cdan", p.cdan);
    t.add("mcc", p.mcc);
    t.add("disc_acc", p.discriminator_accuracy);
    t.add("accuracy", 100.0 * correct as f64 / n as f64);
    t.add("lr", lr);
    t.add("grl_lambda", lambda);
}

/// Evaluation-only helper: report of `model` on `dataset`.
pub fn evaluate_model(model: &Model, dataset: &DomainDataset, batch: usize) -> Result<EvalReport> {
    evaluate(model, dataset, batch, false)
}
