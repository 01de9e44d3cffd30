use cac_core::boxes;
use cac_core::camera::ViewPose;
use cac_core::env::{EnvCondition, EnvDistribution};
use cac_core::mesh::MeshBuilder;
use cac_core::rng::stream;
use cac_core::scenes::*;

fn unit_cube() -> cac_core::mesh::Mesh {
    MeshBuilder::new().cuboid([-0.5; 3], [0.5; 3], [true; 6], [1, 1, 1], [0.5; 3]).finish()
}

fn covered_box(li: &LabeledImage, instance: u32) -> Option<boxes::BBox> {
    let s = li.image.size;
    let mut b: Option<[usize; 4]> = None;
    for (i, c) in li.image.coverage.iter().enumerate() {
        if c.is_some_and(|(inst, _)| inst == instance) {
            let (r, col) = (i / s, i % s);
            let e = b.get_or_insert([col, r, col, r]);
            *e = [e[0].min(col), e[1].min(r), e[2].max(col), e[3].max(r)];
        }
    }
    b.map(|[x0, y0, x1, y1]| [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64])
}

#[test]
fn same_seed_same_scene() {
    let cat = ClassCatalog::standard();
    let dist = EnvDistribution::default();
    let a = generate_dataset(&cat, 1, &dist, &SceneLayout::default(), 64, 9).unwrap();
    let b = generate_dataset(&cat, 1, &dist, &SceneLayout::default(), 64, 9).unwrap();
    assert_eq!(a[0].image.rgb, b[0].image.rgb);
    assert_eq!(a[0].ground_truths, b[0].ground_truths);
}

#[test]
fn zero_instances_give_empty_scene() {
    let layout = SceneLayout {
        min_instances: 0,
        max_instances: 0,
        ..Default::default()
    };
    let data = generate_dataset(&ClassCatalog::standard(), 3, &EnvDistribution::default(), &layout, 32, 1).unwrap();
    assert!(data.iter().all(|d| d.ground_truths.is_empty()));
}

#[test]
fn zero_count_rejected() {
    assert!(generate_dataset(&ClassCatalog::standard(), 0, &EnvDistribution::default(), &SceneLayout::default(), 32, 1).is_err());
}

#[test]
fn class_histogram_is_uniform() {
    let cat = ClassCatalog::standard();
    let data = generate_dataset(&cat, 1000, &EnvDistribution::default(), &SceneLayout::default(), 64, 3).unwrap();
    let mut hist = vec![0usize; cat.len() + 1];
    for d in &data {
        for g in &d.ground_truths {
            hist[g.class_id] += 1;
        }
    }
    assert_eq!(hist[BACKGROUND], 0);
    let n: usize = hist.iter().sum();
    let p = 1.0 / cat.len() as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for &h in &hist[1..] {
        assert!((h as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{hist:?}");
    }
}

#[test]
fn scenes_respect_layout_invariants() {
    let data = generate_dataset(&ClassCatalog::standard(), 300, &EnvDistribution::default(), &SceneLayout::default(), 128, 4).unwrap();
    for d in &data {
        assert!((1..=3).contains(&d.ground_truths.len()));
        for (i, a) in d.ground_truths.iter().enumerate() {
            assert!(boxes::is_valid(&a.bbox));
            assert!(a.bbox[0] >= 0.0 && a.bbox[1] >= 0.0 && a.bbox[2] <= 128.0 && a.bbox[3] <= 128.0);
            assert!(covered_box(d, i as u32).is_some(), "instance {i} fully hidden");
            for b in &d.ground_truths[i + 1..] {
                assert!(boxes::iou(&a.bbox, &b.bbox) < 0.3);
                let inter = boxes::area(&[a.bbox[0].max(b.bbox[0]), a.bbox[1].max(b.bbox[1]), a.bbox[2].min(b.bbox[2]), a.bbox[3].min(b.bbox[3])]);
                assert!(inter < 0.3 * boxes::area(&a.bbox).min(boxes::area(&b.bbox)));
            }
        }
    }
}

#[test]
fn ground_truth_matches_covered_pixels() {
    let layout = SceneLayout {
        max_instances: 1,
        ..Default::default()
    };
    let data = generate_dataset(&ClassCatalog::standard(), 300, &EnvDistribution::default(), &layout, 128, 5).unwrap();
    for d in &data {
        let gt = d.ground_truths[0].bbox;
        let cov = covered_box(d, 0).expect("object covers pixels");
        assert!(boxes::iou(&gt, &cov) >= 0.9, "gt {gt:?} covered {cov:?}");
    }
}

#[test]
fn cube_box_matches_hand_projection() {
    let cube = unit_cube();
    let pose = ViewPose::from_env(&EnvCondition::canonical(3.0));
    let f = 64.0 / 30f64.to_radians().tan();
    // nearest face at depth 2.5 spans the widest extent
    let half = f * 0.5 / 2.5;
    let b = projected_box(&cube, &pose, 128).unwrap();
    for (got, want) in b.iter().zip([64.0 - half, 64.0 - half, 64.0 + half, 64.0 + half]) {
        assert!((got - want).abs() < 1e-9, "{b:?}");
    }
    let gt = ground_truth_box(&cube, &pose, 128).unwrap();
    assert_eq!(gt, [(64.0 - half).round(), (64.0 - half).round(), (64.0 + half).round(), (64.0 + half).round()]);
}

#[test]
fn object_out_of_frame_has_no_box() {
    let cube = unit_cube();
    let mut env = EnvCondition::canonical(3.0);
    env.translation = [40.0, 0.0];
    assert_eq!(ground_truth_box(&cube, &ViewPose::from_env(&env), 128), None);
}

#[test]
fn box_ignores_photometrics() {
    let cat = ClassCatalog::standard();
    let mesh = cat.mesh(1);
    let tex = cac_core::texture::TextureMap::solid(mesh, [0.3, 0.6, 0.2]);
    let mut env = EnvCondition::canonical(2.5);
    env.azimuth = 0.7;
    let a = target_scene(mesh, &tex, &env, 1, 96, &mut stream(1, "a")).unwrap().unwrap();
    env.light_mul = 1.8;
    env.channel_add = [0.1, -0.1, 0.05];
    env.noise_std = 0.08;
    env.background = [0.9, 0.1, 0.4];
    let b = target_scene(mesh, &tex, &env, 1, 96, &mut stream(1, "b")).unwrap().unwrap();
    assert_eq!(a.ground_truths, b.ground_truths);
    assert_ne!(a.image.rgb, b.image.rgb);
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&ClassCatalog::standard(), 5, &EnvDistribution::default(), &SceneLayout::default(), 48, 6).unwrap();
    save_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.image.rgb, b.image.rgb);
        assert_eq!(a.ground_truths, b.ground_truths);
    }
}
