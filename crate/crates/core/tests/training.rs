use std::collections::HashSet;
use std::fs;

use proptest::prelude::*;
use spoofsmith::data::*;
use spoofsmith::models::*;
use spoofsmith::rng::Stream;
use spoofsmith::train::*;
use spoofsmith::{backward, Error, GradientMap, Tensor};
use tempfile::{tempdir, TempDir};

// ---- Adam -------------------------------------------------------------

/// Textbook scalar Adam.
fn scalar_adam(
    mut p: f64,
    steps: usize,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    grad: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let (mut m, mut v) = (0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = grad(p);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        p -= lr * mh / (vh.sqrt() + eps);
        out.push(p);
    }
    out
}

fn scalar_store(p: f64) -> ParamStore<f64> {
    let mut s = ParamStore::default();
    s.params.insert(
        "p".into(),
        Tensor::from_vec(vec![p], &[1])
            .unwrap()
            .with_requires_grad(true),
    );
    s
}

#[test]
fn adam_trajectory_on_square_matches_reference() {
    let cfg = AdamConfig {
        lr: 0.05,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let want = scalar_adam(1.5, 10, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, |p| 2.0 * p);
    let mut store = scalar_store(1.5);
    let mut st = AdamState::new(&store).unwrap();
    for w in want {
        let p = store.params["p"].clone();
        let grads = backward(&p.mul(&p).unwrap().sum()).unwrap();
        adam_step(&mut store, &grads, &mut st, &cfg).unwrap();
        assert!((store.params["p"].data()[0] - w).abs() < 1e-10);
    }
    assert_eq!(st.step, 10);
}

#[test]
fn adam_single_step_example() {
    let mut store = scalar_store(1.0);
    let mut st = AdamState::new(&store).unwrap();
    let p = store.params["p"].clone();
    let grads = backward(&p.sum()).unwrap();
    adam_step(
        &mut store,
        &grads,
        &mut st,
        &AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
    )
    .unwrap();
    assert!((store.params["p"].data()[0] - 0.999).abs() < 1e-9);
}

proptest! {
    #[test]
    fn adam_zero_gradient_is_a_fixed_point(vals in prop::collection::vec(-10.0f64..10.0, 1..8), steps in 1usize..6) {
        let mut store = ParamStore::<f64>::default();
        store.params.insert("w".into(), Tensor::from_vec(vals.clone(), &[vals.len()]).unwrap().with_requires_grad(true));
        let mut st = AdamState::new(&store).unwrap();
        for _ in 0..steps {
            adam_step(&mut store, &GradientMap::default(), &mut st, &AdamConfig::gan()).unwrap();
        }
        prop_assert_eq!(store.params["w"].to_vec(), vals);
        prop_assert_eq!(st.step, steps as u64);
    }
}

// ---- split ------------------------------------------------------------

fn manifest(bona: usize, attack: usize) -> DatasetManifest {
    let mut entries = Vec::new();
    for i in 0..bona {
        let mut e = Entry::new(format!("b{i}.png"), Label::BonaFide);
        e.eye = if i % 2 == 0 { Eye::Left } else { Eye::Right };
        entries.push(e);
    }
    for i in 0..attack {
        entries.push(Entry::new(format!("a{i}.png"), Label::Attack));
    }
    DatasetManifest::new(entries).unwrap()
}

fn paths(m: &DatasetManifest) -> Vec<String> {
    m.entries.iter().map(|e| e.path.clone()).collect()
}

#[test]
fn split_200_is_160_40() {
    let cfg = SplitConfig {
        stratify_by_label: false,
        ..Default::default()
    };
    let (tr, te) = split_dataset(&manifest(120, 80), &cfg).unwrap();
    assert_eq!((tr.len(), te.len()), (160, 40));
}

#[test]
fn stratified_split_is_per_label() {
    let (tr, te) = split_dataset(&manifest(100, 100), &SplitConfig::default()).unwrap();
    assert_eq!(
        (tr.count(Label::BonaFide), tr.count(Label::Attack)),
        (80, 80)
    );
    assert_eq!(
        (te.count(Label::BonaFide), te.count(Label::Attack)),
        (20, 20)
    );
}

#[test]
fn split_is_seeded() {
    let m = manifest(60, 40);
    let a = split_dataset(
        &m,
        &SplitConfig {
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let b = split_dataset(
        &m,
        &SplitConfig {
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let c = split_dataset(
        &m,
        &SplitConfig {
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(paths(&a.0), paths(&b.0));
    assert_eq!(paths(&a.1), paths(&b.1));
    assert_ne!(paths(&a.0), paths(&c.0));
    assert_eq!(a.0.len(), c.0.len());
}

#[test]
fn tiny_stratum_needs_the_fallback() {
    let m = manifest(10, 1);
    assert!(matches!(
        split_dataset(&m, &SplitConfig::default()),
        Err(Error::Stratification(_))
    ));
    let cfg = SplitConfig {
        allow_unstratified: true,
        ..Default::default()
    };
    let (tr, te) = split_dataset(&m, &cfg).unwrap();
    assert_eq!((tr.len(), te.len()), (9, 2));
}

#[test]
fn split_by_eye_as_well() {
    let cfg = SplitConfig {
        stratify_by_eye: true,
        ..Default::default()
    };
    let (tr, _) = split_dataset(&manifest(20, 10), &cfg).unwrap();
    let left = tr.entries.iter().filter(|e| e.eye == Eye::Left).count();
    let right = tr.entries.iter().filter(|e| e.eye == Eye::Right).count();
    assert_eq!((left, right), (8, 8));
}

#[test]
fn split_rejects_bad_inputs() {
    assert!(matches!(
        split_dataset(&DatasetManifest::default(), &SplitConfig::default()),
        Err(Error::EmptyInput(_))
    ));
    let cfg = SplitConfig {
        train_fraction: 1.0,
        ..Default::default()
    };
    assert!(matches!(
        split_dataset(&manifest(4, 4), &cfg),
        Err(Error::Config(_))
    ));
}

fn check_partition(m: &DatasetManifest, tr: &DatasetManifest, te: &DatasetManifest) {
    let a: HashSet<String> = paths(tr).into_iter().collect();
    let b: HashSet<String> = paths(te).into_iter().collect();
    assert!(a.is_disjoint(&b));
    let all: HashSet<String> = paths(m).into_iter().collect();
    assert_eq!(&a | &b, all);
}

#[test]
fn split_sizes_for_every_n_up_to_1000() {
    let plain = SplitConfig {
        stratify_by_label: false,
        seed: 3,
        ..Default::default()
    };
    for n in 1..1000 {
        let m = manifest(n / 2, n - n / 2);
        let (tr, te) = split_dataset(&m, &plain).unwrap();
        assert_eq!(tr.len(), (0.8 * n as f64).round() as usize, "n={n}");
        check_partition(&m, &tr, &te);
        if n >= 4 {
            let (tr, te) = split_dataset(
                &m,
                &SplitConfig {
                    seed: 3,
                    ..Default::default()
                },
            )
            .unwrap();
            let want = |k: usize| (0.8 * k as f64).round() as usize;
            assert_eq!(tr.count(Label::BonaFide), want(n / 2), "n={n}");
            assert_eq!(tr.count(Label::Attack), want(n - n / 2), "n={n}");
            check_partition(&m, &tr, &te);
        }
    }
}

proptest! {
    #[test]
    fn split_fraction_rule(bona in 2usize..120, attack in 2usize..120, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let m = manifest(bona, attack);
        let cfg = SplitConfig { train_fraction: frac, seed, ..Default::default() };
        let (tr, te) = split_dataset(&m, &cfg).unwrap();
        prop_assert_eq!(tr.count(Label::BonaFide), train_count(bona, frac));
        prop_assert_eq!(tr.count(Label::Attack), train_count(attack, frac));
        prop_assert_eq!(tr.len() + te.len(), bona + attack);
    }
}

// ---- augmentation -----------------------------------------------------

#[test]
fn flip_example_and_involution() {
    let img = Tensor::from_vec(vec![1.0 / 4.0, 2.0 / 4.0, 3.0 / 4.0, 1.0], &[1, 2, 2]).unwrap();
    let always = Augmenter {
        flip_p: 1.0,
        ..Default::default()
    };
    let mut s = Stream::new(0);
    let once = always.apply(&img, &[AugmentOp::Hflip], &mut s).unwrap();
    assert_eq!(once.to_vec(), vec![2.0 / 4.0, 1.0 / 4.0, 1.0, 3.0 / 4.0]);
    let twice = always.apply(&once, &[AugmentOp::Hflip], &mut s).unwrap();
    assert_eq!(twice.to_vec(), img.to_vec());
}

#[test]
fn augmentation_keeps_shape_and_range() {
    let mut s = Stream::new(12);
    let data: Vec<f32> = (0..3 * 12 * 10)
        .map(|_| s.uniform(-1.0, 1.0) as f32)
        .collect();
    let img = Tensor::from_vec(data, &[3, 12, 10]).unwrap();
    let mut flips = 0;
    for i in 0..1000 {
        let out = augment(&img, &AugmentOp::ALL, &mut Stream::derive(1, "aug", i)).unwrap();
        assert_eq!(out.shape(), img.shape());
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let one = augment(&img, &[AugmentOp::Hflip], &mut Stream::derive(2, "aug", i)).unwrap();
        flips += (one.to_vec() != img.to_vec()) as usize;
    }
    assert!((400..600).contains(&flips), "{flips}");
}

#[test]
fn rotation_of_a_constant_image_is_constant() {
    let img = Tensor::from_vec(vec![0.25f32; 2 * 9 * 9], &[2, 9, 9]).unwrap();
    for op in [AugmentOp::Rotate, AugmentOp::CropResize] {
        let out = augment(&img, &[op], &mut Stream::new(4)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}

#[test]
fn op_names_parse() {
    assert_eq!(
        parse_ops("hflip, rotate,crop_resize,brightness").unwrap(),
        AugmentOp::ALL.to_vec()
    );
    assert!(parse_ops("").unwrap().is_empty());
    assert!(matches!(parse_ops("hflip,shear"), Err(Error::Config(_))));
}

// ---- GAN --------------------------------------------------------------

fn toy(count: usize, res: usize, seed: u64) -> (TempDir, DatasetManifest) {
    let dir = tempdir().unwrap();
    let m = gen_toy_corpus(count, res, seed, dir.path()).unwrap();
    (dir, m)
}

fn small_gan(res: usize, seed: u64) -> (NetworkSpec, NetworkSpec) {
    let shape = ImageShape::square(3, res);
    (
        build_dcgan_generator(LatentSpec { z_dim: 16 }, shape, 0.125, seed).unwrap(),
        build_dcgan_discriminator(shape, 0.125, seed + 1).unwrap(),
    )
}

fn gan_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        real_per_iter: 8,
        batch_size: 4,
        epochs,
        seed: 21,
        ..TrainConfig::gan()
    }
}

#[test]
fn gan_epoch_is_reproducible() {
    let (_d, m) = toy(24, 16, 1);
    let run = || {
        let (g, d) = small_gan(16, 5);
        train_gan(&m, g, d, &gan_cfg(1)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.len(), 3);
    assert_eq!(a.history, b.history);
    assert!(a.generator.store.bitwise_eq(&b.generator.store));
    assert!(a.discriminator.store.bitwise_eq(&b.discriminator.store));
}

#[test]
fn generator_output_stays_in_range() {
    let (_d, m) = toy(16, 16, 2);
    let (g, d) = small_gan(16, 8);
    let mut st = train_gan(&m, g, d, &gan_cfg(2)).unwrap();
    let z = latent_batch(0, "probe", 0, 6, 16).unwrap();
    for mode in [spoofsmith::nn::Mode::Train, spoofsmith::nn::Mode::Eval] {
        let out = st.generator.forward(&z, mode).unwrap();
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn gan_needs_a_batch_of_reals() {
    let (_d, m) = toy(3, 16, 3);
    let (g, d) = small_gan(16, 1);
    assert!(matches!(
        train_gan(&m, g, d, &gan_cfg(1)),
        Err(Error::InsufficientData(_))
    ));
}

#[derive(Default)]
struct Labels {
    seen: Vec<(u64, GanPhase, BatchSource, Vec<f32>)>,
}

impl GanObserver for Labels {
    fn on_targets(&mut self, iter: u64, phase: GanPhase, source: BatchSource, targets: &[f32]) {
        self.seen.push((iter, phase, source, targets.to_vec()));
    }
}

#[test]
fn gan_label_discipline() {
    let (_d, m) = toy(16, 16, 4);
    let (g, d) = small_gan(16, 2);
    let mut st = GanState::new(g, d).unwrap();
    let reals = decode_manifest(&m, ImageShape::square(3, 16)).unwrap();
    let mut obs = Labels::default();
    run_gan(&mut st, &reals, &gan_cfg(2), None, Some(&mut obs)).unwrap();
    assert_eq!(obs.seen.len(), 3 * 4);
    for (_, phase, source, t) in &obs.seen {
        let want = match (phase, source) {
            (GanPhase::Discriminator, BatchSource::Real) => 1.0,
            (GanPhase::Discriminator, BatchSource::Synthetic) => 0.0,
            (GanPhase::Generator, BatchSource::Synthetic) => 1.0,
            (GanPhase::Generator, BatchSource::Real) => panic!("generator step never sees reals"),
        };
        assert_eq!(t.len(), 8);
        assert!(t.iter().all(|&v| v == want));
    }
}

#[test]
fn gan_resume_is_bitwise_equivalent() {
    let (_d, m) = toy(16, 16, 5);
    let reals = decode_manifest(&m, ImageShape::square(3, 16)).unwrap();
    let cfg = gan_cfg(5);
    let sched = GanSchedule::new(reals.len(), &cfg).unwrap();

    let (g, d) = small_gan(16, 3);
    let mut straight = GanState::new(g, d).unwrap();
    run_gan(&mut straight, &reals, &cfg, Some(10), None).unwrap();

    let (g, d) = small_gan(16, 3);
    let mut first = GanState::new(g, d).unwrap();
    run_gan(&mut first, &reals, &cfg, Some(5), None).unwrap();
    let (gc, dc) = first.to_checkpoints(&cfg, &sched);
    let gc = Checkpoint::from_bytes(&gc.to_bytes().unwrap()).unwrap();
    let dc = Checkpoint::from_bytes(&dc.to_bytes().unwrap()).unwrap();
    let mut resumed = GanState::from_checkpoints(gc, dc, &cfg).unwrap();
    drop(first);
    run_gan(&mut resumed, &reals, &cfg, Some(10), None).unwrap();

    assert_eq!(resumed.iteration, 10);
    assert_eq!(resumed.history, straight.history);
    assert!(resumed
        .generator
        .store
        .bitwise_eq(&straight.generator.store));
    assert!(resumed
        .discriminator
        .store
        .bitwise_eq(&straight.discriminator.store));
    assert!(resumed.g_adam.bitwise_eq(&straight.g_adam));
    assert!(resumed.d_adam.bitwise_eq(&straight.d_adam));

    // a different learning rate is a different run
    let (gc, dc) = straight.to_checkpoints(&cfg, &sched);
    let other = TrainConfig {
        learning_rate: 1e-3,
        ..cfg.clone()
    };
    assert!(matches!(
        GanState::from_checkpoints(gc, dc, &other),
        Err(Error::ConfigMismatch { .. })
    ));
}

#[test]
fn discriminator_beats_chance_after_30_epochs_at_32px() {
    let (_d, m) = toy(64, 32, 6);
    let (g, d) = small_gan(32, 11);
    let cfg = TrainConfig {
        real_per_iter: 16,
        epochs: 30,
        seed: 2,
        ..TrainConfig::gan()
    };
    let mut st = train_gan(&m, g, d, &cfg).unwrap();
    let (_p, probe) = toy(32, 32, 99);
    let real = Tensor::stack(&decode_manifest(&probe, ImageShape::square(3, 32)).unwrap()).unwrap();
    let fake = st
        .generator
        .predict(&latent_batch(99, "probe", 0, 32, 16).unwrap())
        .unwrap();
    let acc = discriminator_accuracy(&mut st.discriminator, &real, &fake).unwrap();
    assert!(acc > 0.5, "{acc}");
}

// ---- synthesis --------------------------------------------------------

#[test]
fn synthesis_counts_names_and_determinism() {
    let (mut g, _) = small_gan(16, 4);
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let m = synthesize(&mut g, 5, 42, a.path()).unwrap();
    synthesize(&mut g, 5, 42, b.path()).unwrap();
    assert_eq!(m.len(), 5);
    assert!(m.entries.iter().all(|e| e.label == Label::Attack));
    assert_eq!(m.entries[3].path, "synth_s42_000003.png");
    for e in &m.entries {
        assert_eq!(
            fs::read(e.file()).unwrap(),
            fs::read(b.path().join(&e.path)).unwrap()
        );
    }
    let img = decode_image(&m.entries[0].file(), ImageShape::square(3, 16)).unwrap();
    assert_eq!(img.shape(), &[3, 16, 16]);

    let empty = tempdir().unwrap();
    let out = empty.path().join("none");
    assert!(synthesize(&mut g, 0, 1, &out).unwrap().is_empty());
    let pngs = fs::read_dir(&out).unwrap().filter(|e| {
        e.as_ref()
            .unwrap()
            .path()
            .extension()
            .is_some_and(|x| x == "png")
    });
    assert_eq!(pngs.count(), 0);
}

#[test]
fn synthesis_of_ten_thousand() {
    let (mut g, _) = small_gan(16, 4);
    let dir = tempdir().unwrap();
    let m = synthesize(&mut g, 10_000, 1, dir.path()).unwrap();
    assert_eq!(m.count(Label::Attack), 10_000);
    assert_eq!(
        load_manifest(&dir.path().join(MANIFEST_FILE))
            .unwrap()
            .len(),
        10_000
    );
}

#[test]
fn synthesis_into_a_file_path_fails() {
    let (mut g, _) = small_gan(16, 4);
    let dir = tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    assert!(matches!(
        synthesize(&mut g, 2, 1, &blocker),
        Err(Error::Io { .. })
    ));
}

// ---- classifier -------------------------------------------------------

/// Procedural reals plus an untrained generator's output at 32 px.
fn labeled_set(n: usize) -> (TempDir, TempDir, DatasetManifest) {
    let (rd, real) = toy(n, 32, 8);
    let (mut g, _) = small_gan(32, 9);
    let fd = tempdir().unwrap();
    let fake = synthesize(&mut g, n, 3, fd.path()).unwrap();
    (rd, fd, DatasetManifest::merge(&[&real, &fake]).unwrap())
}

fn classifier(seed: u64) -> NetworkSpec {
    build_modified_vggnet(ImageShape::square(3, 32), 0.125, 32, seed).unwrap()
}

fn cls_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        seed: 17,
        ..TrainConfig::classifier()
    }
}

#[test]
fn untrained_classifier_is_near_chance() {
    let (_a, _b, m) = labeled_set(40);
    let out = train_classifier(&m, classifier(1), &cls_cfg(0), &SplitConfig::default()).unwrap();
    assert_eq!(out.report.samples, 16);
    assert!(
        (0.3..=0.7).contains(&out.report.accuracy),
        "{}",
        out.report.accuracy
    );
    assert_eq!(out.train.len(), 64);
}

#[test]
fn classifier_training_is_reproducible_and_learns() {
    let (_a, _b, m) = labeled_set(40);
    let run = || train_classifier(&m, classifier(2), &cls_cfg(3), &SplitConfig::default()).unwrap();
    let (x, y) = (run(), run());
    assert!(x.state.net.store.bitwise_eq(&y.state.net.store));
    assert_eq!(x.report, y.report);
    assert_eq!(x.state.history.len(), 3);
    assert!(x.state.history[2].train_loss < x.state.history[0].train_loss);
}

#[test]
fn classifier_resume_is_bitwise_equivalent() {
    let (_a, _b, m) = labeled_set(20);
    let split = SplitConfig::default();
    let cfg = cls_cfg(2);
    let shape = ImageShape::square(3, 32);
    let (_, _, train, test) = prepare_classifier_data(&m, shape, &split).unwrap();

    let mut straight = ClassifierState::new(classifier(3)).unwrap();
    run_classifier(&mut straight, &train, &test, &cfg, None).unwrap();

    let mut first = ClassifierState::new(classifier(3)).unwrap();
    run_classifier(&mut first, &train, &test, &cfg, Some(1)).unwrap();
    let ck =
        Checkpoint::from_bytes(&first.to_checkpoint(&cfg, &split).to_bytes().unwrap()).unwrap();
    let mut resumed = ClassifierState::from_checkpoint(ck, &cfg, &split).unwrap();
    run_classifier(&mut resumed, &train, &test, &cfg, None).unwrap();

    assert!(resumed.net.store.bitwise_eq(&straight.net.store));
    assert!(resumed.adam.bitwise_eq(&straight.adam));
    assert_eq!(resumed.history, straight.history);
    let other = SplitConfig { seed: 5, ..split };
    let ck = straight.to_checkpoint(&cfg, &SplitConfig::default());
    assert!(matches!(
        ClassifierState::from_checkpoint(ck, &cfg, &other),
        Err(Error::ConfigMismatch { .. })
    ));
}

#[test]
fn single_label_manifest_is_insufficient() {
    let (_d, m) = toy(10, 32, 1);
    let err =
        train_classifier(&m, classifier(1), &cls_cfg(1), &SplitConfig::default()).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)));
}

#[test]
fn config_validation() {
    assert!(TrainConfig {
        batch_size: 1,
        ..TrainConfig::gan()
    }
    .validate()
    .is_err());
    assert!(TrainConfig {
        beta1: 1.0,
        ..TrainConfig::gan()
    }
    .validate()
    .is_err());
    assert!(TrainConfig::classifier().validate().is_ok());
    assert_eq!(TrainConfig::gan().real_per_iter, 200);
    assert_eq!(TrainConfig::gan().target_synthetic, 10_000);
    let a = TrainConfig::gan();
    assert_eq!(
        a.resume_hash(),
        TrainConfig {
            epochs: 99,
            ..a.clone()
        }
        .resume_hash()
    );
    assert_ne!(a.resume_hash(), TrainConfig { seed: 1, ..a }.resume_hash());
}
