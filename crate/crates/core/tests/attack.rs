use cac_autodiff::{grad_check_at, Graph};
use cac_core::attack::*;
use cac_core::detector::{Architecture, DetectorModel, Layer, Proposal};
use cac_core::env::{EnvCondition, EnvDistribution};
use cac_core::rng::stream;
use cac_core::scenes::{ClassCatalog, BACKGROUND};
use cac_core::texture::TextureMap;
use cac_core::{render, Error};

fn tiny() -> Architecture {
    Architecture {
        name: "tiny".into(),
        input_size: 64,
        backbone: vec![Layer::Conv { out: 8 }, Layer::Pool, Layer::Conv { out: 16 }, Layer::Pool, Layer::Conv { out: 16 }, Layer::Pool],
        rpn_channels: 16,
        hidden: 32,
        ..Architecture::a(4)
    }
}

fn side_env() -> EnvCondition {
    let mut env = EnvCondition::canonical(2.2);
    env.azimuth = 0.5;
    env.elevation = 0.25;
    env
}

fn setup() -> (DetectorModel, cac_core::mesh::Mesh, TextureMap) {
    let mesh = ClassCatalog::standard().mesh(1).clone();
    let tex = TextureMap::solid(&mesh, [0.45, 0.5, 0.55]);
    (DetectorModel::init(tiny(), &mut stream(1, "init")).unwrap(), mesh, tex)
}

/// Independent mean cross-entropy from raw logits.
fn ce_oracle(logits: &[f32], k: usize, goal: usize) -> f64 {
    let rows: Vec<&[f32]> = logits.chunks(k).collect();
    rows.iter()
        .map(|r| {
            let m = r.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
            lse - r[goal] as f64
        })
        .sum::<f64>()
        / rows.len() as f64
}

fn pass_on_scene(model: &DetectorModel, mesh: &cac_core::mesh::Mesh, tex: &TextureMap) -> (Graph, cac_core::detector::Pass, Vec<Proposal>) {
    let mut g = Graph::new();
    let t = g.constant(tex.to_tensor());
    let img = render::render_graph(&mut g, t, mesh, &side_env(), 64, &mut stream(2, "r")).unwrap();
    let pass = model.forward(&mut g, img, false).unwrap();
    let props = model.proposals(&g, &pass, 40).proposals;
    (g, pass, props)
}

#[test]
fn dense_loss_matches_oracle_and_is_linear_in_sets() {
    let (model, mesh, tex) = setup();
    let (mut g, pass, props) = pass_on_scene(&model, &mesh, &tex);
    assert!(props.len() >= 4);
    let bxs: Vec<_> = props.iter().map(|p| p.bbox).collect();
    let logits = model.roi_logits(&mut g, &pass, &bxs).unwrap();
    let raw = g.value(logits).data().to_vec();
    for goal in [2, BACKGROUND] {
        let l = dense_proposal_loss(&model, &mut g, &pass, &props, goal).unwrap();
        assert!((g.value(l).item() as f64 - ce_oracle(&raw, 5, goal)).abs() < 1e-5);
    }
    let d = disappearance_loss(&model, &mut g, &pass, &props).unwrap();
    assert!((g.value(d).item() as f64 - ce_oracle(&raw, 5, BACKGROUND)).abs() < 1e-5);
    // size-weighted union of two disjoint proposal sets
    let (p1, p2) = props.split_at(props.len() / 3);
    let l1 = dense_proposal_loss(&model, &mut g, &pass, p1, 2).unwrap();
    let l2 = dense_proposal_loss(&model, &mut g, &pass, p2, 2).unwrap();
    let all = dense_proposal_loss(&model, &mut g, &pass, &props, 2).unwrap();
    let mix = (p1.len() as f64 * g.value(l1).item() as f64 + p2.len() as f64 * g.value(l2).item() as f64) / props.len() as f64;
    assert!((g.value(all).item() as f64 - mix).abs() < 1e-5);
    assert!(matches!(dense_proposal_loss(&model, &mut g, &pass, &[], 2), Err(Error::NoProposals)));
}

#[test]
fn full_chain_gradient_matches_finite_differences() {
    let (model, mesh, tex) = setup();
    // distinct texel values keep max-pool windows free of exact ties
    let tex = tex.with_rgb(cac_core::patterns::random_mosaic(tex.width, tex.height, 1, &mut stream(3, "paint"))).unwrap();
    let cfg = AttackConfig {
        top_n: 32,
        ..Default::default()
    };
    let sg = fixed_env_graph(&model, &mesh, &tex, &side_env().with_neutral_photometrics(), &cfg, 3).unwrap().expect("object in view");
    let grad = sg.graph.backward(sg.loss).unwrap().get(sg.texture).into_data();
    let (w, h) = (tex.width, tex.height);
    let interior = |t: usize| {
        let (r, c) = (t / w, t % w);
        r > 0 && c > 0 && r + 1 < h && c + 1 < w && [t - 1, t + 1, t - w, t + w, t].iter().all(|&n| tex.trainable[n])
    };
    let gmax = grad.iter().fold(0.0f32, |a, &v| a.max(v.abs()));
    let live: Vec<usize> = (0..grad.len()).filter(|&i| interior(i / 3) && grad[i].abs() > 1e-4 * gmax).collect();
    assert!(live.len() >= 100, "only {} live texels", live.len());
    let picked: Vec<usize> = (0..100).map(|k| live[k * live.len() / 100]).collect();
    let report = grad_check_at(&sg.graph, sg.texture, sg.loss, &picked, 1e-4).unwrap();
    assert!(report.skipped.is_none(), "{report:?}");
    assert_eq!(report.checked, 100);
    assert!(report.max_rel_error <= 1e-3, "{report:?}");
}

#[test]
fn zero_iterations_return_initial_texture() {
    let (model, mesh, tex) = setup();
    let cfg = AttackConfig {
        iterations: 0,
        ..Default::default()
    };
    let s = run_cac(&mesh, &tex, &model, &EnvDistribution::default(), &cfg, 1, None).unwrap();
    assert_eq!(s.texture, tex);
    assert!(s.history.is_empty());
}

#[test]
fn zero_step_size_leaves_texture_unchanged() {
    let (model, mesh, tex) = setup();
    let mut cfg = AttackConfig {
        iterations: 2,
        env_samples: 2,
        top_n: 16,
        ..Default::default()
    };
    cfg.optimizer.step_size = 0.0;
    let s = run_cac(&mesh, &tex, &model, &EnvDistribution::default(), &cfg, 1, None).unwrap();
    assert_eq!(s.texture.rgb, tex.rgb);
    assert_eq!(s.history.len(), 2);
}

#[test]
fn invariants_hold_after_every_iteration() {
    let (model, mesh, tex) = setup();
    let cfg = AttackConfig {
        iterations: 4,
        env_samples: 2,
        top_n: 16,
        optimizer: cac_core::optim::AdamConfig {
            step_size: 0.3,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut checks = 0;
    let mut hook = |s: &AttackState| {
        assert!(s.invariants_hold());
        checks += 1;
        Ok(())
    };
    let s = run_cac(&mesh, &tex, &model, &EnvDistribution::default(), &cfg, 2, Some(&mut hook)).unwrap();
    assert_eq!(checks, 4);
    assert_ne!(s.texture.rgb, tex.rgb);
    assert!(s.history.iter().all(|r| r.skipped || r.loss.is_finite()));
}

#[test]
fn runs_are_deterministic() {
    let (model, mesh, tex) = setup();
    let cfg = AttackConfig {
        iterations: 2,
        env_samples: 3,
        top_n: 16,
        ..Default::default()
    };
    let dist = EnvDistribution::default();
    let a = run_cac(&mesh, &tex, &model, &dist, &cfg, 5, None).unwrap();
    let b = run_cac(&mesh, &tex, &model, &dist, &cfg, 5, None).unwrap();
    assert_eq!(a.texture, b.texture);
    assert_eq!(format!("{:?}", a.history), format!("{:?}", b.history));
}

#[test]
fn sample_without_object_is_skipped() {
    let (model, mesh, tex) = setup();
    let mut env = side_env();
    // object pushed far outside the frame
    env.translation = [50.0, 50.0];
    let dist = EnvDistribution::degenerate(&env);
    let cfg = AttackConfig {
        iterations: 1,
        env_samples: 2,
        ..Default::default()
    };
    let s = run_cac(&mesh, &tex, &model, &dist, &cfg, 1, None).unwrap();
    assert!(s.history[0].skipped);
    assert_eq!(s.texture, tex);
}

#[test]
fn config_validation() {
    let ok = AttackConfig::default();
    assert!(ok.validate(4).is_ok());
    assert!(AttackConfig { target_class: 1, ..ok.clone() }.validate(4).is_err());
    assert!(AttackConfig { top_n: 0, ..ok.clone() }.validate(4).is_err());
    assert!(AttackConfig { env_samples: 0, ..ok.clone() }.validate(4).is_err());
    assert!(AttackConfig { target_class: 9, ..ok.clone() }.validate(4).is_err());
    let dis = AttackConfig {
        mode: AttackMode::Disappearance,
        target_class: 1,
        ..ok
    };
    assert!(dis.validate(4).is_ok());
    assert_eq!(dis.goal_class(), BACKGROUND);
}

#[test]
fn run_dir_writes_artifacts() {
    let (model, mesh, tex) = setup();
    let dir = tempfile::tempdir().unwrap();
    let cfg = AttackConfig {
        iterations: 1,
        env_samples: 1,
        top_n: 8,
        ..Default::default()
    };
    let s = run_cac(&mesh, &tex, &model, &EnvDistribution::default(), &cfg, 1, None).unwrap();
    let rd = RunDir::create(dir.path(), &cfg, &serde_json::json!({"seed": 1})).unwrap();
    rd.checkpoint(&s).unwrap();
    rd.finish(&s).unwrap();
    for f in ["config.json", "loss.csv", "final.raw", "final.png", "texture_00001.raw"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back = cac_core::io::load_texture(&dir.path().join("final.raw"), &tex).unwrap();
    assert_eq!(back.rgb, s.texture.rgb);
}
