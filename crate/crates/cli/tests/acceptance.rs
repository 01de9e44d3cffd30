//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion. A
//! criterion that measures below its bar is reported, not fatal; the run
//! exits non-zero only when a criterion could not be evaluated at all.
//!
//! Artifacts land under `$CARGO_TARGET_TMPDIR/acceptance`. The directory is
//! wiped first unless `CAC_ACCEPTANCE_REUSE=1`, in which case trained
//! detectors and finished attack runs found there are reused.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cac_autodiff::{grad_check_at, op_suite};
use cac_cli::commands::{self, AttackOptions, EvalOptions};
use cac_cli::config::DetectorSpec;
use cac_cli::ExperimentConfig;
use cac_core::attack::{self, AttackConfig, AttackMode, AttackState};
use cac_core::boxes::{self, BBox};
use cac_core::detector::DetectorModel;
use cac_core::env::{self, EnvCondition, EnvDistribution, ViewpointRegime};
use cac_core::evaluation::{self, BrightnessChoice, ReportRow};
use cac_core::patterns::random_mosaic;
use cac_core::rng::{stream, substream};
use cac_core::scenes::ClassCatalog;
use rand::Rng;

const SEED: u64 = 20_24;
const SWEEP_N: [usize; 3] = [8, 32, 128];
const SWEEP_SEEDS: [u64; 3] = [11, 12, 13];
/// Iterations per top-n sweep run.
const SWEEP_ITERATIONS: usize = 300;

struct Line {
    id: u32,
    title: &'static str,
    passed: bool,
    errored: bool,
    detail: String,
}

struct Suite {
    lines: Vec<Line>,
}

impl Suite {
    fn record(&mut self, id: u32, title: &'static str, passed: bool, detail: String) {
        println!("criterion {id:>2} {} {title}: {detail}", if passed { "PASS" } else { "FAIL" });
        self.lines.push(Line { id, title, passed, errored: false, detail });
    }

    fn error(&mut self, id: u32, title: &'static str, e: impl std::fmt::Display) {
        self.record(id, title, false, format!("error: {e}"));
        if let Some(l) = self.lines.last_mut() {
            l.errored = true;
        }
    }
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn reuse() -> bool {
    std::env::var("CAC_ACCEPTANCE_REUSE").is_ok_and(|v| v == "1")
}

fn experiment(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(&format!("seed = {SEED}")).expect("default config is valid");
    cfg.output_dir = dir.to_path_buf();
    cfg
}

// ---------------------------------------------------------------- criterion 1

fn gradient_correctness(s: &mut Suite, model: &DetectorModel) {
    const T: &str = "gradient correctness";
    let t0 = Instant::now();
    let mut worst_op = (0.0f64, String::new());
    let mut op_ok = true;
    for seed in 0..3 {
        match op_suite(seed) {
            Ok(checks) => {
                for c in checks {
                    op_ok &= c.report.passed(1e-4);
                    if c.report.max_rel_error >= worst_op.0 {
                        worst_op = (c.report.max_rel_error, format!("{}[{}]", c.op, c.leaf));
                    }
                }
            }
            Err(e) => return s.error(1, T, e),
        }
    }
    let chain = (|| -> Res<(f64, usize)> {
        let mesh = ClassCatalog::standard().mesh(1).clone();
        let base = evaluation::original_texture(&mesh);
        let tex = base.with_rgb(random_mosaic(base.width, base.height, 1, &mut stream(SEED, "chain-paint")))?;
        let mut e = EnvCondition::canonical(2.2);
        e.azimuth = 0.5;
        e.elevation = 0.25;
        let cfg = AttackConfig::default();
        let sg = attack::fixed_env_graph(model, &mesh, &tex, &e.with_neutral_photometrics(), &cfg, SEED)?.ok_or("object not in view")?;
        let grad = sg.graph.backward(sg.loss)?.get(sg.texture).into_data();
        let (w, h) = (tex.width, tex.height);
        // texel and its four neighbours paintable
        let interior = |t: usize| {
            let (r, c) = (t / w, t % w);
            r > 0 && c > 0 && r + 1 < h && c + 1 < w && [t - 1, t + 1, t - w, t + w, t].iter().all(|&n| tex.trainable[n])
        };
        let gmax = grad.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
        let live: Vec<usize> = (0..grad.len()).filter(|&i| interior(i / 3) && grad[i].abs() > 1e-4 * gmax).collect();
        if live.len() < 100 {
            return Err(format!("only {} texels carry gradient", live.len()).into());
        }
        let picked: Vec<usize> = (0..100).map(|k| live[k * live.len() / 100]).collect();
        let r = grad_check_at(&sg.graph, sg.texture, sg.loss, &picked, 1e-4)?;
        if let Some(why) = r.skipped {
            return Err(why.into());
        }
        Ok((r.max_rel_error, r.checked))
    })();
    let elapsed = t0.elapsed();
    match chain {
        Ok((err, n)) => s.record(
            1,
            T,
            op_ok && err <= 1e-3 && elapsed < Duration::from_secs(120),
            format!(
                "worst op {} rel {:.2e} (<= 1e-4); full chain {n} texels rel {err:.2e} (<= 1e-3); {} (< 120s)",
                worst_op.1,
                worst_op.0,
                secs(elapsed)
            ),
        ),
        Err(e) => s.error(1, T, e),
    }
}

// ---------------------------------------------------------------- criterion 2

/// Greedy suppression written out pairwise: candidates in descending score
/// (lower index first on ties), kept when no kept box overlaps at `thr`.
fn reference_nms(bxs: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..bxs.len()).collect();
    let mut keep = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (a, b) = (remaining[best], remaining[k]);
            if scores[b] > scores[a] || (scores[b] == scores[a] && b < a) {
                best = k;
            }
        }
        let i = remaining.remove(best);
        if keep.iter().all(|&j: &usize| overlap_ratio(&bxs[i], &bxs[j]) < thr) {
            keep.push(i);
        }
    }
    keep
}

/// IoU from per-axis overlaps.
fn overlap_ratio(a: &BBox, b: &BBox) -> f64 {
    let seg = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| (hi1.min(hi2) - lo1.max(lo2)).max(0.0);
    let inter = seg(a[0], a[2], b[0], b[2]) * seg(a[1], a[3], b[1], b[3]);
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    inter / union
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let x: f64 = rng.random_range(0.0..120.0);
    let y: f64 = rng.random_range(0.0..120.0);
    [x, y, x + rng.random_range(0.5..60.0), y + rng.random_range(0.5..60.0)]
}

fn oracle_equivalence(s: &mut Suite) {
    let mut nms_bad = 0;
    for i in 0..1000 {
        let mut rng = substream(SEED, "nms", i);
        let n = rng.random_range(1..=200);
        let bxs: Vec<BBox> = (0..n).map(|_| random_box(&mut rng)).collect();
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..40) as f64 / 40.0).collect();
        let thr = [0.3, 0.5, 0.7][i as usize % 3];
        if boxes::nms(&bxs, &scores, thr) != reference_nms(&bxs, &scores, thr) {
            nms_bad += 1;
        }
    }
    let mut rng = stream(SEED, "iou");
    let mut iou_bad = 0;
    for _ in 0..100_000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let v = boxes::iou(&a, &b);
        let ok = v == boxes::iou(&b, &a)
            && (0.0..=1.0).contains(&v)
            && (v - overlap_ratio(&a, &b)).abs() <= 1e-12
            && (boxes::iou(&a, &a) - 1.0).abs() <= 1e-12;
        iou_bad += usize::from(!ok);
    }
    let seventh = boxes::iou(&[0.0, 0.0, 2.0, 2.0], &[1.0, 1.0, 3.0, 3.0]);
    let seventh_ok = (seventh - 1.0 / 7.0).abs() <= 1e-12;
    s.record(
        2,
        "oracle equivalence",
        nms_bad == 0 && iou_bad == 0 && seventh_ok,
        format!("nms mismatches {nms_bad}/1000; iou property failures {iou_bad}/100000; 1/7 case {seventh:.12}"),
    );
}

// ---------------------------------------------------------------- criterion 3

struct Trained {
    a: DetectorModel,
}

fn train_one(cfg: &ExperimentConfig, name: &str) -> Res<(f64, Duration)> {
    let stamp = cfg.models_dir().join(format!("{name}.acceptance.json"));
    let spec = serde_json::to_string(cfg.detector(Some(name))?)?;
    if reuse() && cfg.checkpoint_path(name).exists() {
        if let Ok(text) = std::fs::read_to_string(&stamp) {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            if v["spec"] == spec.as_str() {
                return Ok((v["heldout"].as_f64().unwrap_or(0.0), Duration::from_secs_f64(v["seconds"].as_f64().unwrap_or(0.0))));
            }
        }
    }
    let t0 = Instant::now();
    let summary = commands::cmd_train(cfg, Some(name))?;
    let elapsed = t0.elapsed();
    let heldout = summary[0].heldout_p05;
    let v = serde_json::json!({ "spec": spec, "heldout": heldout, "seconds": elapsed.as_secs_f64() });
    std::fs::write(&stamp, v.to_string())?;
    Ok((heldout, elapsed))
}

fn eval(cfg: &ExperimentConfig, texture: &str, model: &str, viewpoint: ViewpointRegime, name: &str) -> Res<ReportRow> {
    let opts = EvalOptions {
        texture,
        model: Some(model),
        viewpoint,
        brightness: Some(BrightnessChoice::Any),
        views: Some(200),
        name: Some(name),
    };
    Ok(commands::cmd_eval(cfg, &opts)?.1)
}

fn clean_detectors(s: &mut Suite, cfg: &ExperimentConfig) -> Option<Trained> {
    const T: &str = "clean detector sanity";
    let run = || -> Res<(String, bool, Trained)> {
        let mut detail = Vec::new();
        let mut ok = true;
        for name in ["A", "B"] {
            let (heldout, took) = train_one(cfg, name)?;
            let row = eval(cfg, "original", name, ViewpointRegime::Free, &format!("original_{name}_fv"))?;
            ok &= heldout >= 0.9 && row.p05 >= 0.9 && took <= Duration::from_secs(1800);
            detail.push(format!("{name}: held-out {heldout:.3}, vehicle FV {:.3}, trained in {}", row.p05, secs(took)));
        }
        let (_, a) = commands::load_model(cfg, Some("A"))?;
        Ok((detail.join("; ") + " (>= 0.9, <= 1800s)", ok, Trained { a }))
    };
    match run() {
        Ok((detail, ok, t)) => {
            s.record(3, T, ok, detail);
            Some(t)
        }
        Err(e) => {
            s.error(3, T, e);
            None
        }
    }
}

// ---------------------------------------------------------------- criterion 4

fn simple_textures(s: &mut Suite, cfg: &ExperimentConfig) -> Option<f64> {
    const T: &str = "simple-texture robustness";
    let run = || -> Res<(String, bool, f64)> {
        let base = eval(cfg, "original", "A", ViewpointRegime::Free, "original_A_fv")?.p05;
        let mut ok = true;
        let mut parts = vec![format!("original {base:.3}")];
        for kind in ["natural", "naive", "random"] {
            let p = eval(cfg, kind, "A", ViewpointRegime::Free, &format!("{kind}_A_fv"))?.p05;
            let d = evaluation::drop_rate(base, p);
            ok &= d <= 0.25;
            parts.push(format!("{kind} {p:.3} (drop {d:.3})"));
        }
        Ok((parts.join(", ") + "; drops <= 0.25", ok, base))
    };
    match run() {
        Ok((detail, ok, base)) => {
            s.record(4, T, ok, detail);
            Some(base)
        }
        Err(e) => {
            s.error(4, T, e);
            None
        }
    }
}

// ---------------------------------------------------------------- attacks

/// Runs (or reuses) an attack on detector A and returns its final texture path.
fn attack_run(cfg: &ExperimentConfig, name: &str) -> Res<(PathBuf, Duration)> {
    let dir = cfg.output_dir.join("attacks").join(name);
    let done = dir.join("acceptance.json");
    let key = serde_json::to_string(&cfg.attack)?;
    if reuse() {
        if let Ok(text) = std::fs::read_to_string(&done) {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            if v["key"] == key.as_str() && dir.join("final.raw").exists() {
                return Ok((dir.join("final.raw"), Duration::from_secs_f64(v["seconds"].as_f64().unwrap_or(0.0))));
            }
        }
    }
    let opts = AttackOptions {
        model: Some("A"),
        target_class: None,
        top_n: None,
        iterations: None,
        name: Some(name),
    };
    let t0 = Instant::now();
    let summary = commands::cmd_attack(cfg, &opts)?;
    let took = t0.elapsed();
    std::fs::write(&done, serde_json::json!({ "key": key, "seconds": took.as_secs_f64() }).to_string())?;
    Ok((summary.run_dir.join("final.raw"), took))
}

fn bins(dir: &Path) -> Res<Vec<Option<f64>>> {
    let text = std::fs::read_to_string(dir.join("bins.csv"))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.rsplit(',').next().and_then(|v| v.parse().ok()))
        .collect())
}

struct CacTexture {
    path: String,
}

// ---------------------------------------------------------------- criterion 5

fn white_box(s: &mut Suite, cfg: &ExperimentConfig, base: f64) -> Option<CacTexture> {
    const T: &str = "white-box CAC efficacy";
    let run = || -> Res<(String, bool, CacTexture)> {
        let (tex, took) = attack_run(cfg, "cac_A")?;
        let path = tex.to_string_lossy().to_string();
        let row = eval(cfg, &path, "A", ViewpointRegime::Free, "cac_A_fv")?;
        let d = evaluation::drop_rate(base, row.p05);
        let frac = row.target_fraction.unwrap_or(0.0);
        let a = &cfg.attack;
        let ok = row.p05 <= 0.3 && d >= 0.6 && frac >= 0.5 && a.iterations <= 1000 && a.env_samples == 8 && took <= Duration::from_secs(7200);
        Ok((
            format!(
                "N={} B={} n={}: FV P@0.5 {:.3} (<= 0.3), drop {d:.3} (>= 0.6), target-class views {frac:.3} (>= 0.5), {} (<= 7200s)",
                a.iterations,
                a.env_samples,
                a.top_n,
                row.p05,
                secs(took)
            ),
            ok,
            CacTexture { path },
        ))
    };
    match run() {
        Ok((detail, ok, tex)) => {
            s.record(5, T, ok, detail);
            Some(tex)
        }
        Err(e) => {
            s.error(5, T, e);
            None
        }
    }
}

// ---------------------------------------------------------------- criterion 6

/// Spearman rank correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn topn_trend(s: &mut Suite, cfg: &ExperimentConfig, model: &DetectorModel) {
    const T: &str = "top-n denseness trend";
    let run = || -> Res<(String, bool)> {
        let catalog = cfg.catalog()?;
        let mut template = cfg.attack_config(&catalog)?;
        template.iterations = SWEEP_ITERATIONS;
        let mesh = catalog.mesh(template.true_class);
        let initial = evaluation::original_texture(mesh);
        let regime = cfg.regime(&catalog, ViewpointRegime::Free, BrightnessChoice::Any, 200)?;
        let cache = cfg.output_dir.join("sweep.json");
        let key = serde_json::to_string(&(&template, &SWEEP_N, &SWEEP_SEEDS))?;
        let cached: Option<Vec<(u64, usize, f64)>> = reuse()
            .then(|| std::fs::read_to_string(&cache).ok())
            .flatten()
            .and_then(|t| serde_json::from_str::<(String, Vec<(u64, usize, f64)>)>(&t).ok())
            .filter(|(k, _)| *k == key)
            .map(|(_, v)| v);
        let points = match cached {
            Some(v) => v,
            None => {
                let mut v = Vec::new();
                for seed in SWEEP_SEEDS {
                    for p in evaluation::topn_sweep(model, mesh, &initial, &template, &SWEEP_N, &regime, &cfg.env, seed)? {
                        v.push((seed, p.top_n, p.summary.p05));
                    }
                }
                std::fs::write(&cache, serde_json::to_string(&(&key, &v))?)?;
                v
            }
        };
        let mean_at = |n: usize| {
            let ps: Vec<f64> = points.iter().filter(|p| p.1 == n).map(|p| p.2).collect();
            ps.iter().sum::<f64>() / ps.len() as f64
        };
        let (lo, hi) = (mean_at(SWEEP_N[0]), mean_at(SWEEP_N[2]));
        let rho = spearman(&points.iter().map(|p| p.1 as f64).collect::<Vec<_>>(), &points.iter().map(|p| p.2).collect::<Vec<_>>());
        let per: Vec<String> = SWEEP_N.iter().map(|&n| format!("n={n} {:.3}", mean_at(n))).collect();
        let ok = hi <= lo && rho.is_some_and(|r| r < 0.0);
        Ok((
            format!(
                "{} seeds x N={}: mean P@0.5 {}; P(128) <= P(8); spearman {} (< 0)",
                SWEEP_SEEDS.len(),
                SWEEP_ITERATIONS,
                per.join(", "),
                rho.map_or("undefined".into(), |r| format!("{r:.3}"))
            ),
            ok,
        ))
    };
    match run() {
        Ok((detail, ok)) => s.record(6, T, ok, detail),
        Err(e) => s.error(6, T, e),
    }
}

// ---------------------------------------------------------------- criteria 7-9

fn transfer(s: &mut Suite, cfg: &ExperimentConfig, cac: &CacTexture) {
    const T: &str = "black-box transfer";
    let run = || -> Res<(String, bool)> {
        let base = eval(cfg, "original", "B", ViewpointRegime::Free, "original_B_fv")?.p05;
        let cac_p = eval(cfg, &cac.path, "B", ViewpointRegime::Free, "cac_B_fv")?.p05;
        let rand_p = eval(cfg, "random", "B", ViewpointRegime::Free, "random_B_fv")?.p05;
        let (dc, dr) = (evaluation::drop_rate(base, cac_p), evaluation::drop_rate(base, rand_p));
        Ok((format!("B original {base:.3}; CAC(A) drop {dc:.3}; random drop {dr:.3}; margin {:.3} (>= 0.15)", dc - dr), dc - dr >= 0.15))
    };
    match run() {
        Ok((detail, ok)) => s.record(7, T, ok, detail),
        Err(e) => s.error(7, T, e),
    }
}

fn restricted_vs_free(s: &mut Suite, cfg: &ExperimentConfig, cac: &CacTexture) {
    const T: &str = "RV vs FV";
    let run = || -> Res<(String, bool)> {
        let alpha = cfg.evaluation.restricted_alpha_deg;
        let mut wins = 0;
        let mut parts = Vec::new();
        for k in 0..3u64 {
            let mut c = cfg.clone();
            c.seed = SEED + 100 + k;
            let fv = eval(&c, &cac.path, "A", ViewpointRegime::Free, &format!("cac_A_fv_s{k}"))?.p05;
            let rv = eval(&c, &cac.path, "A", ViewpointRegime::Restricted { alpha_deg: alpha }, &format!("cac_A_rv_s{k}"))?.p05;
            wins += usize::from(rv >= fv - 0.05);
            parts.push(format!("RV {rv:.3} / FV {fv:.3}"));
        }
        Ok((format!("{}; {wins}/3 satisfy RV >= FV - 0.05 (majority)", parts.join(", ")), wins >= 2))
    };
    match run() {
        Ok((detail, ok)) => s.record(8, T, ok, detail),
        Err(e) => s.error(8, T, e),
    }
}

fn distance_trend(s: &mut Suite, cfg: &ExperimentConfig) {
    const T: &str = "distance trend";
    match bins(&cfg.output_dir.join("eval").join("cac_A_fv")) {
        Ok(b) => {
            let vals: Vec<f64> = b.iter().flatten().copied().collect();
            let ok = vals.len() == b.len() && vals.len() >= 2 && vals.windows(2).all(|w| w[1] >= w[0] - 0.1);
            let shown: Vec<String> = b.iter().map(|v| v.map_or("-".into(), |p| format!("{p:.3}"))).collect();
            s.record(9, T, ok, format!("per-bin P@0.5 near to far [{}]; adjacent tolerance 0.1", shown.join(", ")));
        }
        Err(e) => s.error(9, T, e),
    }
}

// ---------------------------------------------------------------- criterion 10

fn sampler_bounds(s: &mut Suite, model: Option<&DetectorModel>) {
    const T: &str = "sampler and texture bounds";
    let dist = EnvDistribution::default();
    let mut rng = stream(SEED, "bounds");
    let mut out = 0;
    for _ in 0..100_000 {
        let e = env::sample_env(&dist, None, &mut rng);
        let inside = (1.0..=6.0).contains(&e.camera_distance)
            && e.translation.iter().all(|t| (-0.05..=0.05).contains(t))
            && (0.5..=2.0).contains(&e.light_mul)
            && e.channel_mul.iter().all(|m| (0.7..=1.3).contains(m))
            && (0.0..=0.1).contains(&e.noise_std)
            && dist.contains(&e);
        out += usize::from(!inside);
    }
    let rv = ViewpointRegime::restricted_default();
    let worst = (0..100_000)
        .map(|_| env::angle_from_side_axis(env::sample_viewpoint(&rv, &dist, &mut rng).azimuth).to_degrees())
        .fold(0.0f64, f64::max);
    let texture = model.map(|m| -> Res<(usize, usize)> {
        let mesh = ClassCatalog::standard().mesh(1).clone();
        let initial = evaluation::original_texture(&mesh);
        let mut cfg = AttackConfig {
            iterations: 25,
            ..Default::default()
        };
        // large steps push values against the clip bounds
        cfg.optimizer.step_size = 0.2;
        let (mut checked, mut broken) = (0, 0);
        let mut hook = |st: &AttackState| -> cac_core::Result<()> {
            checked += 1;
            broken += usize::from(!st.invariants_hold());
            Ok(())
        };
        attack::run_cac(&mesh, &initial, m, &dist, &cfg, SEED, Some(&mut hook))?;
        Ok((checked, broken))
    });
    match texture {
        Some(Ok((checked, broken))) => s.record(
            10,
            T,
            out == 0 && worst <= 60.0 + 1e-9 && checked == 25 && broken == 0,
            format!("{out}/100000 draws out of bounds; max RV offset {worst:.3} deg (<= 60); texture invariants broken {broken}/{checked} iterations"),
        ),
        Some(Err(e)) => s.error(10, T, e),
        None => s.error(10, T, "no trained detector for the in-run texture check"),
    }
}

// ---------------------------------------------------------------- criterion 11

fn disappearance(s: &mut Suite, cfg: &ExperimentConfig) {
    const T: &str = "disappearance variant";
    let run = || -> Res<(String, bool)> {
        let mut c = cfg.clone();
        c.attack.mode = AttackMode::Disappearance;
        let (tex, took) = attack_run(&c, "vanish_A")?;
        let row = eval(cfg, &tex.to_string_lossy(), "A", ViewpointRegime::Free, "vanish_A_fv")?;
        Ok((
            format!("{} views with no object-overlapping detection: {:.3} (>= 0.7); attack {}", row.views, row.vanish_fraction, secs(took)),
            row.vanish_fraction >= 0.7,
        ))
    };
    match run() {
        Ok((detail, ok)) => s.record(11, T, ok, detail),
        Err(e) => s.error(11, T, e),
    }
}

// ---------------------------------------------------------------- criterion 12

fn snapshot(dir: &Path) -> Res<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn determinism(s: &mut Suite) {
    const T: &str = "determinism";
    let run = || -> Res<(String, bool)> {
        let dir = root().join("determinism");
        let once = || -> Res<BTreeMap<PathBuf, Vec<u8>>> {
            let _ = std::fs::remove_dir_all(&dir);
            let mut cfg = experiment(&dir);
            cfg.dataset.train_count = 24;
            cfg.dataset.test_count = 8;
            let mut spec = DetectorSpec::named("A");
            spec.train.steps = 20;
            cfg.detectors = vec![spec];
            cfg.attack.iterations = 3;
            cfg.attack.env_samples = 2;
            cfg.attack.top_n = 16;
            cfg.attack.checkpoint_every = 1;
            commands::cmd_train(&cfg, None)?;
            let a = commands::cmd_attack(
                &cfg,
                &AttackOptions {
                    model: None,
                    target_class: None,
                    top_n: None,
                    iterations: None,
                    name: Some("det"),
                },
            )?;
            let tex = a.run_dir.join("final.raw").to_string_lossy().to_string();
            for (t, name) in [("original", "orig"), (tex.as_str(), "cac")] {
                commands::cmd_eval(
                    &cfg,
                    &EvalOptions {
                        texture: t,
                        model: None,
                        viewpoint: ViewpointRegime::Free,
                        brightness: None,
                        views: Some(12),
                        name: Some(name),
                    },
                )?;
            }
            snapshot(&dir)
        };
        let first = once()?;
        let second = once()?;
        let differing: Vec<String> = first
            .keys()
            .chain(second.keys())
            .filter(|k| first.get(*k) != second.get(*k))
            .map(|k| k.display().to_string())
            .collect();
        let kinds = |ext: &str| first.keys().filter(|k| k.extension().is_some_and(|e| e == ext)).count();
        Ok((
            format!(
                "{} files compared ({} checkpoints, {} textures, {} CSVs); differing: {}",
                first.len(),
                kinds("cacdet"),
                kinds("raw"),
                kinds("csv"),
                if differing.is_empty() { "none".into() } else { differing.join(" ") }
            ),
            differing.is_empty() && kinds("cacdet") > 0 && kinds("raw") > 0 && kinds("csv") > 0,
        ))
    };
    match run() {
        Ok((detail, ok)) => s.record(12, T, ok, detail),
        Err(e) => s.error(12, T, e),
    }
}

fn main() -> ExitCode {
    let dir = root();
    if !reuse() {
        let _ = std::fs::remove_dir_all(&dir);
    }
    std::fs::create_dir_all(&dir).expect("acceptance directory");
    let cfg = experiment(&dir.join("main"));
    let t0 = Instant::now();
    let mut s = Suite { lines: Vec::new() };

    oracle_equivalence(&mut s);
    let trained = clean_detectors(&mut s, &cfg);
    match &trained {
        Some(t) => gradient_correctness(&mut s, &t.a),
        None => s.error(1, "gradient correctness", "no trained detector"),
    }
    sampler_bounds(&mut s, trained.as_ref().map(|t| &t.a));
    let base = simple_textures(&mut s, &cfg);
    let cac = match base {
        Some(b) if trained.is_some() => white_box(&mut s, &cfg, b),
        _ => {
            s.error(5, "white-box CAC efficacy", "no baseline");
            None
        }
    };
    match &cac {
        Some(c) => {
            transfer(&mut s, &cfg, c);
            restricted_vs_free(&mut s, &cfg, c);
            distance_trend(&mut s, &cfg);
        }
        None => {
            for (id, t) in [(7, "black-box transfer"), (8, "RV vs FV"), (9, "distance trend")] {
                s.error(id, t, "no CAC texture");
            }
        }
    }
    match &trained {
        Some(t) => topn_trend(&mut s, &cfg, &t.a),
        None => s.error(6, "top-n denseness trend", "no trained detector"),
    }
    if trained.is_some() {
        disappearance(&mut s, &cfg);
    } else {
        s.error(11, "disappearance variant", "no trained detector");
    }
    determinism(&mut s);

    s.lines.sort_by_key(|l| l.id);
    let passed = s.lines.iter().filter(|l| l.passed).count();
    println!("\nsummary: {passed}/{} passed ({})", s.lines.len(), secs(t0.elapsed()));
    for l in &s.lines {
        println!("  {:>2} {} {}", l.id, if l.passed { "PASS" } else { "FAIL" }, l.title);
    }
    let errored: Vec<&Line> = s.lines.iter().filter(|l| l.errored).collect();
    for l in &errored {
        eprintln!("criterion {} could not be evaluated: {}", l.id, l.detail);
    }
    if errored.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
