//! Cartesian experiment grids over a base config.

use std::collections::HashSet;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use udakit::adapt::UdaMethod;
use udakit::datakit::AugmentationKind;
use udakit::trainer::{RunManifest, RunStatus, Scheme, TrainConfig};
use udakit::{Error, Result};

/// Placeholder for "the best CH cell's checkpoint", resolved after the
/// CH cells have run.
pub const CH_BEST: &str = "@ch-best";
pub const DEFAULT_CAP: usize = 256;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    pub backbone: Option<Vec<String>>,
    pub scheme: Option<Vec<Scheme>>,
    pub augmentation: Option<Vec<AugmentationKind>>,
    pub lr: Option<Vec<f64>>,
    pub uda_method: Option<Vec<UdaMethod>>,
    /// `"hub"`, `"ch"` (best CH cell of this grid) or a checkpoint path.
    pub init_checkpoint: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Used for `init_checkpoint = "ch"` when the grid has no CH cells.
    pub ch_checkpoint: Option<String>,
    /// Overrides on top of `base` for a CH run executed before the cells
    /// that need one, when neither CH cells nor `ch_checkpoint` exist.
    pub ch_base: Option<toml::Table>,
    pub base: toml::Table,
    #[serde(default)]
    pub axes: Axes,
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub label: String,
    pub config: TrainConfig,
}

impl Cell {
    pub fn needs_ch(&self) -> bool {
        self.config.init_checkpoint.as_deref() == Some(CH_BEST)
    }
}

fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>) -> Result<Vec<Option<T>>> {
    match values {
        None => Ok(vec![None]),
        Some(v) if v.is_empty() => Err(Error::config(format!("grid axis {name:?} is empty"))),
        Some(v) => Ok(v.iter().cloned().map(Some).collect()),
    }
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("grid spec: {}", e.message())))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::config(format!("grid spec {} does not exist", path.display())),
            _ => Error::io(path, e),
        })?;
        let mut spec = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = std::fs::canonicalize(&base).unwrap_or(base);
        spec.absolutize(&base);
        Ok(spec)
    }

    /// Makes relative data and checkpoint paths relative to `base`.
    fn absolutize(&mut self, base: &Path) {
        let fix = |v: &mut toml::Value| {
            if let Some(s) = v.as_str() {
                if s != "hub" && s != "ch" && !s.starts_with('@') && Path::new(s).is_relative() {
                    *v = toml::Value::String(base.join(s).to_string_lossy().into_owned());
                }
            }
        };
        if let Some(data) = self.base.get_mut("data").and_then(|d| d.as_table_mut()) {
            for key in [
                "source",
                "target",
                "source_val",
                "source_list",
                "source_root",
                "target_list",
                "target_root",
                "source_val_list",
            ] {
                if let Some(v) = data.get_mut(key) {
                    fix(v);
                }
            }
        }
        if let Some(v) = self.base.get_mut("init_checkpoint") {
            fix(v);
        }
        if let Some(inits) = &mut self.axes.init_checkpoint {
            for s in inits.iter_mut() {
                let mut v = toml::Value::String(s.clone());
                fix(&mut v);
                *s = v.as_str().unwrap_or_default().to_string();
            }
        }
        if let Some(c) = &mut self.ch_checkpoint {
            let mut v = toml::Value::String(c.clone());
            fix(&mut v);
            *c = v.as_str().unwrap_or_default().to_string();
        }
    }

    /// All cells in axis order (backbone, scheme, augmentation, lr, method,
    /// init). Invalid cells are errors; duplicates are dropped with a
    /// warning returned alongside.
    pub fn expand(&self) -> Result<(Vec<Cell>, Vec<String>)> {
        let a = &self.axes;
        let backbones = axis("backbone", &a.backbone)?;
        let schemes = axis("scheme", &a.scheme)?;
        let augs = axis("augmentation", &a.augmentation)?;
        let lrs = axis("lr", &a.lr)?;
        let methods = axis("uda_method", &a.uda_method)?;
        let inits = axis("init_checkpoint", &a.init_checkpoint)?;
        let total = backbones.len() * schemes.len() * augs.len() * lrs.len() * methods.len() * inits.len();
        if total > self.cap {
            return Err(Error::config(format!(
                "grid expands to {total} cells, cap is {}",
                self.cap
            )));
        }
        let mut cells = Vec::new();
        let mut warnings = Vec::new();
        let mut seen = HashSet::new();
        for bb in &backbones {
            for sc in &schemes {
                for au in &augs {
                    for lr in &lrs {
                        for me in &methods {
                            for ini in &inits {
                                let mut t = self.base.clone();
                                let mut parts = Vec::new();
                                if let Some(b) = bb {
                                    table(&mut t, "model").insert("backbone".into(), b.clone().into());
                                    parts.push(b.replace('/', "-"));
                                }
                                if let Some(s) = sc {
                                    t.insert("scheme".into(), s.as_str().into());
                                    parts.push(s.as_str().to_string());
                                }
                                if let Some(x) = au {
                                    t.insert("augmentation".into(), x.as_str().into());
                                    parts.push(x.as_str().to_string());
                                }
                                if let Some(l) = lr {
                                    table(&mut t, "optim").insert("lr".into(), (*l).into());
                                    parts.push(format!("lr{l:e}"));
                                }
                                if let Some(m) = me {
                                    table(&mut t, "uda").insert("method".into(), m.as_str().into());
                                    parts.push(m.as_str().to_string());
                                }
                                if let Some(i) = ini {
                                    let v = if i == "ch" { CH_BEST.to_string() } else { i.clone() };
                                    t.insert("init_checkpoint".into(), v.into());
                                    parts.push(format!(
                                        "init-{}",
                                        match i.as_str() {
                                            "hub" | "ch" => i.clone(),
                                            _ => Path::new(i)
                                                .file_stem()
                                                .map(|s| s.to_string_lossy().into_owned())
                                                .unwrap_or_else(|| "path".into()),
                                        }
                                    ));
                                }
                                let label = if parts.is_empty() {
                                    "base".to_string()
                                } else {
                                    parts.join("_")
                                };
                                let index = cells.len();
                                let base_name = t.get("name").and_then(|v| v.as_str()).unwrap_or("grid").to_string();
                                t.insert("name".into(), format!("{base_name}-{label}").into());
                                let text = toml::to_string(&t).map_err(|e| Error::config(e.to_string()))?;
                                let config = TrainConfig::from_toml_str(&text)
                                    .map_err(|e| Error::config(format!("grid cell {label}: {e}")))?;
                                if !seen.insert(config.hash()) {
                                    warnings.push(format!("duplicate grid cell {label} dropped"));
                                    continue;
                                }
                                cells.push(Cell { index, label, config });
                            }
                        }
                    }
                }
            }
        }
        if cells.iter().any(Cell::needs_ch)
            && self.ch_checkpoint.is_none()
            && self.ch_base.is_none()
            && !cells.iter().any(|c| c.config.scheme == Scheme::Ch)
        {
            return Err(Error::config(
                "init_checkpoint \"ch\" needs CH cells in the grid, ch_base or a ch_checkpoint path",
            ));
        }
        self.ch_config()?;
        Ok((cells, warnings))
    }

    /// The prerequisite CH run described by `ch_base`, if any.
    pub fn ch_config(&self) -> Result<Option<TrainConfig>> {
        let Some(over) = &self.ch_base else { return Ok(None) };
        let mut t = self.base.clone();
        t.remove("uda");
        t.remove("init_checkpoint");
        t.remove("schedule");
        if let Some(optim) = t.get_mut("optim").and_then(|o| o.as_table_mut()) {
            optim.remove("kind");
            optim.remove("weight_decay");
        }
        t.insert("scheme".into(), "ch".into());
        for (k, v) in over {
            match (t.get_mut(k), v) {
                (Some(toml::Value::Table(dst)), toml::Value::Table(src)) => {
                    for (ik, iv) in src {
                        dst.insert(ik.clone(), iv.clone());
                    }
                }
                _ => {
                    t.insert(k.clone(), v.clone());
                }
            }
        }
        let base_name = t.get("name").and_then(|v| v.as_str()).unwrap_or("grid").to_string();
        if over.get("name").is_none() {
            t.insert("name".into(), format!("{base_name}-ch").into());
        }
        let text = toml::to_string(&t).map_err(|e| Error::config(e.to_string()))?;
        TrainConfig::from_toml_str(&text)
            .map(Some)
            .map_err(|e| Error::config(format!("ch_base: {e}")))
    }
}

fn table<'t>(t: &'t mut toml::Table, key: &str) -> &'t mut toml::Table {
    t.entry(key.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .expect("section is a table")
}

/// Outcome of one cell for the summary.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub run_dir: PathBuf,
    pub status: String,
    /// Checkpoint the cell actually started from.
    pub init_checkpoint: Option<String>,
    pub manifest: Option<RunManifest>,
}

/// Runs the cells: independent ones first, then those initialised from
/// the best CH cell. `runner(config_path, run_dir)` executes one cell.
pub fn run_grid(
    spec: &GridSpec,
    cells: &[Cell],
    out: &Path,
    parallel: usize,
    runner: &(dyn Fn(&Path, &Path) -> std::result::Result<(), String> + Sync),
) -> Result<Vec<CellResult>> {
    let cfg_dir = out.join("configs");
    std::fs::create_dir_all(&cfg_dir).map_err(|e| Error::io(&cfg_dir, e))?;
    let mut results: Vec<Option<CellResult>> = vec![None; cells.len()];
    let (first, second): (Vec<&Cell>, Vec<&Cell>) = cells.iter().partition(|c| !c.needs_ch());
    run_batch(&first, out, parallel, runner, &mut results, cells)?;
    let mut ch_best = best_ch_checkpoint(cells, &results).or_else(|| spec.ch_checkpoint.clone());
    if ch_best.is_none() && !second.is_empty() {
        if let Some(cfg) = spec.ch_config()? {
            ch_best = run_prerequisite(&cfg, out, runner)?;
        }
    }
    let mut prepared = Vec::new();
    for c in second {
        let pos = cells.iter().position(|x| x.index == c.index).expect("cell");
        match &ch_best {
            Some(path) => {
                let mut c = c.clone();
                c.config.init_checkpoint = Some(path.clone());
                prepared.push(c);
            }
            None => {
                results[pos] = Some(CellResult {
                    run_dir: run_dir(out, c),
                    status: "skipped: no completed CH cell".into(),
                    init_checkpoint: c.config.init_checkpoint.clone(),
                    manifest: None,
                });
            }
        }
    }
    let refs: Vec<&Cell> = prepared.iter().collect();
    run_batch(&refs, out, parallel, runner, &mut results, cells)?;
    Ok(results.into_iter().map(|r| r.expect("every cell ran")).collect())
}

/// Runs the `ch_base` configuration and returns its best checkpoint.
fn run_prerequisite(
    cfg: &TrainConfig,
    out: &Path,
    runner: &(dyn Fn(&Path, &Path) -> std::result::Result<(), String> + Sync),
) -> Result<Option<String>> {
    let cfg_path = out.join("configs").join("ch-base.toml");
    udakit::io::write_atomic(&cfg_path, cfg.to_toml().as_bytes())?;
    let dir = out.join("runs").join("ch-base");
    if let Err(e) = runner(&cfg_path, &dir) {
        log::warn!("ch_base run failed: {e}");
        return Ok(None);
    }
    let m = RunManifest::read(&dir)?;
    Ok(m.best
        .and_then(|b| b.checkpoint)
        .map(|ck| dir.join(ck).to_string_lossy().into_owned()))
}

fn run_dir(out: &Path, c: &Cell) -> PathBuf {
    out.join("runs").join(format!("{:03}-{}", c.index, c.label))
}

fn run_batch(
    batch: &[&Cell],
    out: &Path,
    parallel: usize,
    runner: &(dyn Fn(&Path, &Path) -> std::result::Result<(), String> + Sync),
    results: &mut [Option<CellResult>],
    all: &[Cell],
) -> Result<()> {
    let mut jobs = Vec::new();
    for c in batch {
        let cfg_path = out.join("configs").join(format!("{:03}-{}.toml", c.index, c.label));
        udakit::io::write_atomic(&cfg_path, c.config.to_toml().as_bytes())?;
        jobs.push((c.index, cfg_path, run_dir(out, c), c.config.init_checkpoint.clone()));
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let done = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..parallel.max(1).min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((index, cfg, dir, init)) = jobs.get(i) else {
                    break;
                };
                let outcome = runner(cfg, dir);
                done.lock()
                    .expect("poisoned")
                    .push((*index, dir.clone(), init.clone(), outcome));
            });
        }
    });
    for (index, dir, init_checkpoint, outcome) in done.into_inner().expect("poisoned") {
        let manifest = RunManifest::read(&dir).ok();
        let status = match (&outcome, &manifest) {
            (Ok(()), Some(m)) => m.status.as_str().to_string(),
            (Ok(()), None) => "failed: no manifest".into(),
            (Err(e), _) => format!("failed: {e}"),
        };
        let pos = all.iter().position(|c| c.index == index).expect("cell");
        results[pos] = Some(CellResult {
            run_dir: dir,
            status,
            init_checkpoint,
            manifest,
        });
    }
    Ok(())
}

/// Best-epoch checkpoint of the highest-scoring completed CH cell.
fn best_ch_checkpoint(cells: &[Cell], results: &[Option<CellResult>]) -> Option<String> {
    let mut best: Option<(f64, String)> = None;
    for (c, r) in cells.iter().zip(results) {
        let Some(r) = r else { continue };
        let Some(m) = &r.manifest else { continue };
        if c.config.scheme != Scheme::Ch || m.status == RunStatus::Running {
            continue;
        }
        let Some(b) = &m.best else { continue };
        let Some(ck) = &b.checkpoint else { continue };
        if best.as_ref().is_none_or(|(v, _)| b.value > *v) {
            best = Some((b.value, r.run_dir.join(ck).to_string_lossy().into_owned()));
        }
    }
    best.map(|(_, p)| p)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite())
        .map(|x| format!("{x:.2}"))
        .unwrap_or_default()
}

/// One row per cell in the order
/// `model, pretraining, scheme, method, init, transform, lr` then metrics
/// at the best epoch.
pub fn summary_csv(cells: &[Cell], results: &[CellResult]) -> String {
    let mut out = String::from(
        "cell,model,pretraining,scheme,uda_method,init_checkpoint,transform,lr,status,epochs,best_epoch,val_top1,target_macro,target_micro,run_dir\n",
    );
    for (c, r) in cells.iter().zip(results) {
        let cfg = &c.config;
        let pre = if cfg.model.backbone == "compact" { "none" } else { "hub" };
        let method = cfg.uda.as_ref().map(|u| u.method.as_str()).unwrap_or("");
        let init = r.init_checkpoint.clone().unwrap_or_else(|| "hub".into());
        let (epochs, best_epoch, val, macro_, micro) = match &r.manifest {
            Some(m) => {
                let best = m
                    .best
                    .as_ref()
                    .and_then(|b| m.epochs.iter().find(|e| e.epoch == b.epoch));
                let get = |s: &str, k: &str| best.and_then(|e| e.metrics.get(s)).and_then(|x| x.get(k)).copied();
                (
                    m.epochs.len().to_string(),
                    best.map(|e| e.epoch.to_string()).unwrap_or_default(),
                    fmt_metric(get("val", "top1")),
                    fmt_metric(get("target", "macro")),
                    fmt_metric(get("target", "top1")),
                )
            }
            None => Default::default(),
        };
        let cells = [
            c.label.clone(),
            cfg.model.backbone.clone(),
            pre.to_string(),
            cfg.scheme.as_str().to_string(),
            method.to_string(),
            init,
            cfg.augmentation.as_str().to_string(),
            format!("{}", cfg.optim.lr),
            r.status.clone(),
            epochs,
            best_epoch,
            val,
            macro_,
            micro,
            r.run_dir.to_string_lossy().into_owned(),
        ];
        let escaped: Vec<String> = cells
            .iter()
            .map(|s| {
                if s.contains([',', '"', '\n']) {
                    format!("\"{}\"", s.replace('"', "\"\""))
                } else {
                    s.clone()
                }
            })
            .collect();
        writeln!(out, "{}", escaped.join(",")).unwrap();
    }
    out
}
