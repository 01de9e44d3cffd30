//! Subcommand implementations. Each returns the paths it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cac_core::attack::{self, RunDir};
use cac_core::detector::{checkpoint, Architecture, DetectorModel};
use cac_core::env::{EnvCondition, ViewpointRegime};
use cac_core::evaluation::{self, BrightnessChoice, ReportRow};
use cac_core::io;
use cac_core::mesh::Mesh;
use cac_core::patterns::{simple_texture, SimpleKind};
use cac_core::render;
use cac_core::rng;
use cac_core::scenes::{self, ClassCatalog, LabeledImage};
use cac_core::texture::TextureMap;
use serde::{Deserialize, Serialize};

use crate::config::{class_id, ExperimentConfig};
use crate::error::{CliError, Result};

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::Io { path: p.into(), source: e })
}

/// What a cached dataset was generated from.
#[derive(Serialize, Deserialize, PartialEq)]
struct DatasetKey {
    seed: u64,
    dataset: crate::config::DatasetSection,
    env: cac_core::env::EnvDistribution,
    vehicle_obj: String,
}

fn dataset_key(cfg: &ExperimentConfig, catalog: &ClassCatalog) -> String {
    let key = DatasetKey {
        seed: cfg.seed,
        dataset: cfg.dataset.clone(),
        env: cfg.env.clone(),
        vehicle_obj: catalog.mesh(1).to_obj(),
    };
    serde_json::to_string(&key).expect("key serializes")
}

/// Train and held-out scenes, reusing the cache under `output_dir/dataset`
/// when it was generated from the same settings.
pub fn datasets(cfg: &ExperimentConfig, catalog: &ClassCatalog) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let dir = cfg.output_dir.join("dataset");
    let key = dataset_key(cfg, catalog);
    let key_path = dir.join("key.json");
    if std::fs::read_to_string(&key_path).is_ok_and(|k| k == key) {
        return Ok((scenes::load_dataset(&dir.join("train"))?, scenes::load_dataset(&dir.join("test"))?));
    }
    let d = &cfg.dataset;
    let train = scenes::generate_dataset(catalog, d.train_count, &cfg.env, &d.layout, d.image_size, rng::child_seed(&mut rng::stream(cfg.seed, "dataset-train")))?;
    let test = scenes::generate_dataset(catalog, d.test_count, &cfg.env, &d.layout, d.image_size, rng::child_seed(&mut rng::stream(cfg.seed, "dataset-test")))?;
    for (name, data) in [("train", &train), ("test", &test)] {
        mkdir(&dir.join(name))?;
        scenes::save_dataset(&dir.join(name), data)?;
    }
    io::write_atomic(&key_path, key.as_bytes())?;
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub arch: String,
    pub params: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub heldout_p05: f64,
}

/// Trains every declared detector (or only `only`).
pub fn cmd_train(cfg: &ExperimentConfig, only: Option<&str>) -> Result<Vec<TrainSummary>> {
    let catalog = cfg.catalog()?;
    let specs: Vec<_> = match only {
        Some(n) => vec![cfg.detector(Some(n))?.clone()],
        None => cfg.detectors.clone(),
    };
    let (train, test) = datasets(cfg, &catalog)?;
    let dir = cfg.models_dir();
    mkdir(&dir)?;
    let mut out = Vec::new();
    for spec in specs {
        let mut arch = Architecture::by_name(&spec.arch, catalog.len()).expect("validated");
        arch.input_size = cfg.dataset.image_size;
        arch.validate()?;
        let (model, log) = cac_core::detector::train_detector(arch, &train, &spec.train, &mut rng::stream(cfg.seed, &format!("train-{}", spec.name)))?;
        checkpoint::save(&cfg.checkpoint_path(&spec.name), &model)?;
        io::write_csv(&dir.join(format!("{}_log.csv", spec.name)), |w| {
            w.write_record(["step", "loss", "rpn_cls", "rpn_box", "head"])?;
            for r in &log.records {
                w.write_record([r.step.to_string(), format!("{:.6}", r.loss), format!("{:.6}", r.rpn_cls), format!("{:.6}", r.rpn_box), format!("{:.6}", r.head)])?;
            }
            Ok(())
        })?;
        let summary = TrainSummary {
            name: spec.name.clone(),
            arch: spec.arch.clone(),
            params: model.num_params(),
            steps: spec.train.steps,
            final_loss: log.trailing_loss(100),
            heldout_p05: evaluation::scene_precision(&model, &test)?,
        };
        println!(
            "{}: {} params, {} steps, final loss {:.4}, held-out P@0.5 {:.3}",
            summary.name, summary.params, summary.steps, summary.final_loss, summary.heldout_p05
        );
        out.push(summary);
    }
    let path = dir.join(match only {
        Some(n) => format!("summary_{n}.csv"),
        None => "summary.csv".into(),
    });
    io::write_csv(&path, |w| {
        w.write_record(["name", "arch", "params", "steps", "final_loss", "heldout_p05"])?;
        for s in &out {
            w.write_record([s.name.clone(), s.arch.clone(), s.params.to_string(), s.steps.to_string(), format!("{:.6}", s.final_loss), format!("{:.4}", s.heldout_p05)])?;
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn load_model(cfg: &ExperimentConfig, name: Option<&str>) -> Result<(String, DetectorModel)> {
    let spec = cfg.detector(name)?;
    let path = cfg.checkpoint_path(&spec.name);
    if !path.exists() {
        return Err(CliError::Precondition(format!("checkpoint {} not found; run `cac train` first", path.display())));
    }
    Ok((spec.name.clone(), checkpoint::load(&path)?))
}

/// Texture named by `spec`: `original`, `natural`, `naive`, `random`, or a
/// `.raw`/`.png` file.
pub fn resolve_texture(spec: &str, mesh: &Mesh, seed: u64) -> Result<(String, TextureMap)> {
    let base = evaluation::original_texture(mesh);
    let simple = |k: SimpleKind| simple_texture(k, mesh, 4, &mut rng::stream(seed, &format!("texture-{}", k.name())));
    Ok(match spec {
        "original" => ("original".into(), base),
        "natural" => ("natural".into(), simple(SimpleKind::Natural)),
        "naive" => ("naive".into(), simple(SimpleKind::Naive)),
        "random" => ("random".into(), simple(SimpleKind::Random)),
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(CliError::config("--texture", format!("{path} is neither a texture file nor one of original, natural, naive, random")));
            }
            let stem = p.parent().and_then(|d| d.file_name()).map(|d| d.to_string_lossy().to_string()).unwrap_or_else(|| "texture".into());
            (stem, io::load_texture(p, &base)?)
        }
    })
}

/// Object renders at canonical viewpoints with neutral lighting.
pub fn preview_envs(count: usize) -> Vec<EnvCondition> {
    (0..count)
        .map(|i| {
            let mut e = EnvCondition::canonical(2.4);
            e.azimuth = std::f64::consts::TAU * i as f64 / count as f64;
            e.elevation = 20f64.to_radians();
            e.background = [0.85, 0.85, 0.85];
            e
        })
        .collect()
}

/// Horizontal strip of HWC images of equal size.
fn strip(images: &[Vec<f32>], size: usize) -> Vec<f32> {
    let n = images.len();
    let mut out = vec![0.0; n * size * size * 3];
    for (k, img) in images.iter().enumerate() {
        for r in 0..size {
            let dst = (r * n * size + k * size) * 3;
            out[dst..dst + size * 3].copy_from_slice(&img[r * size * 3..(r + 1) * size * 3]);
        }
    }
    out
}

fn save_previews(path: &Path, mesh: &Mesh, tex: &TextureMap, size: usize, count: usize) -> Result<()> {
    let imgs: Vec<Vec<f32>> = preview_envs(count)
        .iter()
        .map(|e| render::render(mesh, tex, e, size, &mut rng::stream(0, "preview")).map(|r| r.rgb))
        .collect::<cac_core::Result<_>>()?;
    io::save_png(path, count * size, size, &strip(&imgs, size))?;
    Ok(())
}

pub struct AttackOptions<'a> {
    pub model: Option<&'a str>,
    pub target_class: Option<&'a str>,
    pub top_n: Option<usize>,
    pub iterations: Option<usize>,
    pub name: Option<&'a str>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub run_dir: PathBuf,
    pub start_goal_prob: f64,
    pub end_goal_prob: f64,
    pub iterations: usize,
}

/// Probe samples for the before/after goal probability.
const PROBE_SAMPLES: usize = 16;

pub fn cmd_attack(cfg: &ExperimentConfig, opts: &AttackOptions) -> Result<AttackSummary> {
    let catalog = cfg.catalog()?;
    let mut acfg = cfg.attack_config(&catalog)?;
    if let Some(t) = opts.target_class {
        acfg.target_class = class_id(&catalog, t, "--target-class")?;
    }
    if let Some(n) = opts.top_n {
        acfg.top_n = n;
    }
    if let Some(n) = opts.iterations {
        acfg.iterations = n;
    }
    acfg.validate(catalog.len()).map_err(|e| CliError::config("attack", e.to_string()))?;
    let (model_name, model) = load_model(cfg, opts.model)?;
    let mesh = catalog.mesh(acfg.true_class).clone();
    let initial = match &cfg.attack.initial_texture {
        Some(p) => io::load_texture(p, &evaluation::original_texture(&mesh))?,
        None => evaluation::original_texture(&mesh),
    };
    let names = catalog.names();
    let run_name = opts.name.map(String::from).unwrap_or_else(|| format!("{model_name}_{}_n{}", names[acfg.goal_class()], acfg.top_n));
    let dir = cfg.output_dir.join("attacks").join(run_name);
    let extra = serde_json::json!({
        "seed": cfg.seed,
        "model": model_name,
        "object_class": names[acfg.true_class],
        "goal_class": names[acfg.goal_class()],
        "env": cfg.env,
    });
    let run = RunDir::create(&dir, &acfg, &extra)?;
    let probe_seed = rng::child_seed(&mut rng::stream(cfg.seed, "attack-probe"));
    let start = attack::mean_goal_probability(&model, &mesh, &initial, &cfg.env, &acfg, PROBE_SAMPLES, probe_seed)?;
    let every = acfg.checkpoint_every;
    let mut hook = |s: &attack::AttackState| -> cac_core::Result<()> {
        if !s.invariants_hold() {
            return Err(cac_core::Error::InvalidTexture(format!("texture invariants broken at iteration {}", s.iteration)));
        }
        if every > 0 && s.iteration % every == 0 {
            run.checkpoint(s)?;
            run.write_history(&s.history)?;
        }
        Ok(())
    };
    let attack_seed = rng::child_seed(&mut rng::stream(cfg.seed, "attack"));
    let state = attack::run_cac(&mesh, &initial, &model, &cfg.env, &acfg, attack_seed, Some(&mut hook))?;
    run.finish(&state)?;
    let end = attack::mean_goal_probability(&model, &mesh, &state.texture, &cfg.env, &acfg, PROBE_SAMPLES, probe_seed)?;
    save_previews(&dir.join("preview.png"), &mesh, &state.texture, model.arch.input_size, 6)?;
    let summary = AttackSummary {
        run_dir: dir.clone(),
        start_goal_prob: start,
        end_goal_prob: end,
        iterations: state.iteration,
    };
    io::write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializes").as_bytes())?;
    println!(
        "attack {}: {} iterations, mean {} probability {:.3} -> {:.3}",
        dir.display(),
        state.iteration,
        names[acfg.goal_class()],
        start,
        end
    );
    Ok(summary)
}

pub struct EvalOptions<'a> {
    pub texture: &'a str,
    pub model: Option<&'a str>,
    pub viewpoint: ViewpointRegime,
    pub brightness: Option<BrightnessChoice>,
    pub views: Option<usize>,
    pub name: Option<&'a str>,
}

pub fn cmd_eval(cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<(PathBuf, ReportRow)> {
    let catalog = cfg.catalog()?;
    let object = class_id(&catalog, &cfg.attack.object_class, "attack.object_class")?;
    let target = class_id(&catalog, &cfg.attack.target_class, "attack.target_class")?;
    let mesh = catalog.mesh(object);
    let (tex_name, tex) = resolve_texture(opts.texture, mesh, cfg.seed)?;
    let regime = cfg.regime(
        &catalog,
        opts.viewpoint,
        opts.brightness.unwrap_or(cfg.evaluation.brightness),
        opts.views.unwrap_or(cfg.evaluation.views),
    )?;
    let (model_name, model) = load_model(cfg, opts.model)?;
    let eval_seed = rng::child_seed(&mut rng::stream(cfg.seed, "evaluation"));
    let views = evaluation::evaluate_views(&model, mesh, &tex, object, &regime, &cfg.env, eval_seed)?;
    let summary = evaluation::summarize(&views, Some(target), regime.distance_bins.as_deref()).map_err(|e| CliError::Precondition(e.to_string()))?;
    let name = opts
        .name
        .map(String::from)
        .unwrap_or_else(|| format!("{tex_name}_{model_name}_{}_{}", regime.viewpoint.short_name(), regime.brightness.name()));
    let dir = cfg.output_dir.join("eval").join(name);
    mkdir(&dir)?;
    let row = ReportRow::new(&tex_name, &model_name, &regime, &summary, None);
    io::write_csv(&dir.join("summary.csv"), |w| {
        w.write_record(ReportRow::HEADER)?;
        w.write_record(row.record())
    })?;
    let names = catalog.names();
    io::write_csv(&dir.join("views.csv"), |w| {
        w.write_record(["view", "brightness", "camera_distance", "azimuth_deg", "elevation_deg", "in_frame", "hit", "top_class", "detections"])?;
        for (i, v) in views.iter().enumerate() {
            w.write_record([
                i.to_string(),
                v.preset.map_or("any", |p| if p == cac_core::env::Brightness::Bright { "bright" } else { "dark" }).to_string(),
                format!("{:.4}", v.env.camera_distance),
                format!("{:.3}", v.env.azimuth.to_degrees()),
                format!("{:.3}", v.env.elevation.to_degrees()),
                v.ground_truth.is_some().to_string(),
                v.hit.to_string(),
                v.top_class.map_or(String::new(), |c| names[c].clone()),
                v.detections.len().to_string(),
            ])?;
        }
        Ok(())
    })?;
    io::write_csv(&dir.join("bins.csv"), |w| {
        w.write_record(["distance_lo", "distance_hi", "views", "hits", "p05"])?;
        for b in &summary.bins {
            w.write_record([format!("{}", b.lo), format!("{}", b.hi), b.views.to_string(), b.hits.to_string(), b.p05.map_or(String::new(), |p| format!("{p:.4}"))])?;
        }
        Ok(())
    })?;
    // first few evaluation renders for inspection
    let shown: Vec<Vec<f32>> = views
        .iter()
        .take(4)
        .map(|v| render::render(mesh, &tex, &v.env, model.arch.input_size, &mut rng::stream(0, "eval-preview")).map(|r| r.rgb))
        .collect::<cac_core::Result<_>>()?;
    io::save_png(&dir.join("views.png"), shown.len() * model.arch.input_size, model.arch.input_size, &strip(&shown, model.arch.input_size))?;
    println!("{}", format_table(std::slice::from_ref(&row)));
    Ok((dir, row))
}

/// Reads `summary.csv` rows of evaluation directories and recomputes drop
/// rates against the `original` row of the same model, viewpoint and
/// brightness.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<Vec<ReportRow>> {
    if dirs.is_empty() {
        return Err(CliError::config("run directories", "give at least one evaluation directory"));
    }
    let mut rows = Vec::new();
    for d in dirs {
        rows.extend(read_summary(&d.join("summary.csv"))?);
    }
    let baseline = |r: &ReportRow| {
        rows.iter()
            .find(|b| b.texture == "original" && b.model == r.model && b.viewpoint == r.viewpoint && b.brightness == r.brightness)
            .map(|b| b.p05)
    };
    if !rows.iter().any(|r| baseline(r).is_some()) {
        return Err(CliError::Precondition("no `original` baseline row among the given directories".into()));
    }
    let merged: Vec<ReportRow> = rows
        .iter()
        .map(|r| ReportRow {
            drop: baseline(r).map(|b| evaluation::drop_rate(b, r.p05)),
            ..r.clone()
        })
        .collect();
    mkdir(out)?;
    io::write_csv(&out.join("report.csv"), |w| {
        w.write_record(ReportRow::HEADER)?;
        for r in &merged {
            w.write_record(r.record())?;
        }
        Ok(())
    })?;
    let table = format_table(&merged);
    io::write_atomic(&out.join("report.txt"), table.as_bytes())?;
    println!("{table}");
    Ok(merged)
}

fn read_summary(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.into(), source: e })?;
    let bad = |m: &str| CliError::Core(cac_core::Error::format(path, m));
    let mut lines = text.lines();
    if lines.next() != Some(ReportRow::HEADER.join(",").as_str()) {
        return Err(bad("unexpected header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != ReportRow::HEADER.len() {
                return Err(bad("wrong field count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(ReportRow {
                texture: f[0].into(),
                model: f[1].into(),
                viewpoint: f[2].into(),
                brightness: f[3].into(),
                views: f[4].parse().map_err(|_| bad("bad view count"))?,
                p05: num(f[5])?,
                detections: f[6].parse().map_err(|_| bad("bad detection count"))?,
                target_fraction: opt(f[7])?,
                vanish_fraction: num(f[8])?,
                drop: opt(f[9])?,
            })
        })
        .collect()
}

/// Texture rows by model columns; each cell is `P@0.5 (drop)`, blank where
/// the texture was not evaluated on that model.
pub fn format_table(rows: &[ReportRow]) -> String {
    let mut models: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut textures: Vec<String> = Vec::new();
    for r in rows {
        let col = format!("{}/{}/{}", r.model, r.viewpoint, r.brightness);
        if !models.contains(&col) {
            models.push(col.clone());
        }
        if !textures.contains(&r.texture) {
            textures.push(r.texture.clone());
        }
        let cell = match r.drop {
            Some(d) => format!("{:.2} ({:.2})", r.p05, d),
            None => format!("{:.2}", r.p05),
        };
        cells.insert((r.texture.clone(), col), cell);
    }
    let w = models.iter().map(|m| m.len()).max().unwrap_or(0).max(12);
    let tw = textures.iter().map(|t| t.len()).max().unwrap_or(0).max(7);
    let mut s = format!("{:tw$}", "texture");
    for m in &models {
        let _ = write!(s, "  {m:>w$}");
    }
    s.push('\n');
    for t in &textures {
        let _ = write!(s, "{t:tw$}");
        for m in &models {
            let c = cells.get(&(t.clone(), m.clone())).map_or("", |c| c.as_str());
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
    }
    s
}

pub struct PreviewOptions<'a> {
    pub texture: &'a str,
    pub views: usize,
    pub model: Option<&'a str>,
    pub class: Option<&'a str>,
    pub name: Option<&'a str>,
}

/// Renders the object at canonical viewpoints; with a model, adds a row of
/// class activation maps.
pub fn cmd_render_preview(cfg: &ExperimentConfig, opts: &PreviewOptions) -> Result<PathBuf> {
    let catalog = cfg.catalog()?;
    let object = class_id(&catalog, &cfg.attack.object_class, "attack.object_class")?;
    let mesh = catalog.mesh(object);
    let (tex_name, tex) = resolve_texture(opts.texture, mesh, cfg.seed)?;
    if opts.views == 0 {
        return Err(CliError::config("--views", "must be at least 1"));
    }
    let dir = cfg.output_dir.join("previews");
    mkdir(&dir)?;
    let name = opts.name.map(String::from).unwrap_or(tex_name);
    let size = cfg.dataset.image_size;
    let renders: Vec<render::RenderedImage> = preview_envs(opts.views)
        .iter()
        .map(|e| render::render(mesh, &tex, e, size, &mut rng::stream(0, "preview")))
        .collect::<cac_core::Result<_>>()?;
    let mut rows: Vec<f32> = strip(&renders.iter().map(|r| r.rgb.clone()).collect::<Vec<_>>(), size);
    let mut height = size;
    if opts.model.is_some() || opts.class.is_some() {
        let (_, model) = load_model(cfg, opts.model)?;
        let class = class_id(&catalog, opts.class.unwrap_or(&cfg.attack.object_class), "--class")?;
        let cams: Vec<Vec<f32>> = renders
            .iter()
            .map(|r| evaluation::grad_cam(&model, &r.to_chw(), class, None).map(|h| h.overlay(&r.rgb)))
            .collect::<cac_core::Result<_>>()?;
        rows.extend(strip(&cams, size));
        height += size;
    }
    let path = dir.join(format!("{name}.png"));
    io::save_png(&path, opts.views * size, height, &rows)?;
    println!("wrote {}", path.display());
    Ok(path)
}
