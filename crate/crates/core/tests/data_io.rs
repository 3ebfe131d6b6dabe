use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use proptest::prelude::*;
use spoofsmith::data::*;
use spoofsmith::models::{build_dcgan_generator, ImageShape, LatentSpec};
use spoofsmith::train::AdamState;
use spoofsmith::{Error, Tensor};
use tempfile::tempdir;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn manifest_with_two_lines() {
    let dir = tempdir().unwrap();
    let p = write(
        dir.path(),
        "m.jsonl",
        "{\"path\":\"a.png\",\"label\":\"bona_fide\",\"eye\":\"left\"}\n{\"path\":\"b.png\",\"label\":\"attack\"}\n",
    );
    let m = load_manifest(&p).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.entries[0].eye, Eye::Left);
    assert_eq!(m.entries[1].eye, Eye::Unknown);
    assert_eq!(m.entries[1].label, Label::Attack);
    assert_eq!(m.entries[0].file(), dir.path().join("a.png"));
}

#[test]
fn empty_manifest_is_valid() {
    let dir = tempdir().unwrap();
    let p = write(dir.path(), "m.jsonl", "");
    assert!(load_manifest(&p).unwrap().is_empty());
}

#[test]
fn unknown_label_names_the_line() {
    let dir = tempdir().unwrap();
    let p = write(
        dir.path(),
        "m.jsonl",
        "{\"path\":\"a.png\",\"label\":\"bona_fide\"}\n{\"path\":\"b.png\",\"label\":\"fake\"}\n",
    );
    match load_manifest(&p).unwrap_err() {
        Error::Parse { line, message, .. } => {
            assert_eq!(line, 2);
            assert!(message.contains("fake"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_json_is_a_parse_error() {
    let dir = tempdir().unwrap();
    let p = write(
        dir.path(),
        "m.jsonl",
        "{\"path\":\"a.png\",\"label\":\"attack\"}\n{not json\n",
    );
    assert!(matches!(
        load_manifest(&p),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn duplicate_paths_are_rejected() {
    let dir = tempdir().unwrap();
    let p = write(
        dir.path(),
        "m.jsonl",
        "{\"path\":\"a.png\",\"label\":\"attack\"}\n{\"path\":\"a.png\",\"label\":\"bona_fide\"}\n",
    );
    assert!(matches!(load_manifest(&p), Err(Error::Validation(_))));
}

#[test]
fn unknown_fields_survive_a_rewrite() {
    let dir = tempdir().unwrap();
    let line = "{\"path\":\"a.png\",\"label\":\"attack\",\"eye\":\"right\",\"subset\":\"s1\",\"camera\":\"x\",\"score\":0.25}";
    let p = write(dir.path(), "m.jsonl", &format!("{line}\n"));
    let m = load_manifest(&p).unwrap();
    let out = dir.path().join("out.jsonl");
    m.save(&out).unwrap();
    assert_eq!(fs::read_to_string(&out).unwrap(), format!("{line}\n"));
}

fn gray_png(path: &Path, w: u32, h: u32, v: u8) {
    ImageBuffer::<Luma<u8>, _>::from_pixel(w, h, Luma([v]))
        .save(path)
        .unwrap();
}

#[test]
fn decode_endpoints_are_exact() {
    let dir = tempdir().unwrap();
    for (v, want) in [(0u8, -1.0f32), (255, 1.0)] {
        let p = dir.path().join(format!("{v}.png"));
        gray_png(&p, 5, 4, v);
        for ch in [1, 3] {
            let t = decode_image(&p, ImageShape::new(ch, 4, 5)).unwrap();
            assert_eq!(t.shape(), &[ch, 4, 5]);
            assert!(t.data().iter().all(|&x| x == want));
            // resized as well
            let t = decode_image(&p, ImageShape::new(ch, 7, 3)).unwrap();
            assert!(t.data().iter().all(|&x| x == want), "{:?}", t.data());
        }
    }
}

#[test]
fn decode_encode_round_trip_within_quantization() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("rgb.png");
    let img = ImageBuffer::<Rgb<u8>, _>::from_fn(9, 6, |x, y| {
        Rgb([(x * 28) as u8, (y * 40) as u8, ((x * y) % 256) as u8])
    });
    img.save(&p).unwrap();
    let shape = ImageShape::new(3, 6, 9);
    let a = decode_image(&p, shape).unwrap();
    let q = dir.path().join("again.png");
    encode_image(&a, &q).unwrap();
    let b = decode_image(&q, shape).unwrap();
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= 1.0 / 127.5, "{worst}");
    // channel layout: red plane first
    assert_eq!(a.data()[1], 28.0 / 127.5 - 1.0);
}

#[test]
fn encode_zero_is_mid_gray() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("z.png");
    encode_image(&Tensor::zeros(&[3, 8, 8]).unwrap(), &p).unwrap();
    let img = image::open(&p).unwrap();
    assert_eq!(img.color(), image::ColorType::Rgb8);
    assert_eq!((img.width(), img.height()), (8, 8));
    assert!(img.to_rgb8().pixels().all(|px| px.0 == [128, 128, 128]));
    assert_eq!(to_pixel(-1.0), 0);
    assert_eq!(to_pixel(1.0), 255);
    assert_eq!(to_pixel(7.0), 255);
}

#[test]
fn sixteen_bit_and_garbage_are_decode_errors() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("deep.png");
    ImageBuffer::<Luma<u16>, _>::from_pixel(3, 3, Luma([1000u16]))
        .save(&p)
        .unwrap();
    assert!(matches!(
        decode_image(&p, ImageShape::new(1, 3, 3)),
        Err(Error::Decode { .. })
    ));
    let g = write(dir.path(), "junk.png", "not a png at all");
    assert!(matches!(
        decode_image(&g, ImageShape::new(1, 3, 3)),
        Err(Error::Decode { .. })
    ));
}

#[test]
fn toy_corpus_alternates_eyes_and_is_reproducible() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let m = gen_toy_corpus(10, 32, 9, a.path()).unwrap();
    gen_toy_corpus(10, 32, 9, b.path()).unwrap();
    assert_eq!(m.len(), 10);
    assert_eq!(m.entries.iter().filter(|e| e.eye == Eye::Left).count(), 5);
    assert_eq!(m.entries.iter().filter(|e| e.eye == Eye::Right).count(), 5);
    assert!(m.entries.iter().all(|e| e.label == Label::BonaFide));
    for e in &m.entries {
        assert_eq!(
            fs::read(e.file()).unwrap(),
            fs::read(b.path().join(&e.path)).unwrap()
        );
    }
    assert_eq!(
        load_manifest(&a.path().join(MANIFEST_FILE)).unwrap().len(),
        10
    );
    let c = tempdir().unwrap();
    gen_toy_corpus(1, 32, 10, c.path()).unwrap();
    assert_ne!(
        fs::read(c.path().join("toy_00000.png")).unwrap(),
        fs::read(a.path().join("toy_00000.png")).unwrap()
    );
}

#[test]
fn toy_corpus_pixel_mean_is_moderate() {
    let dir = tempdir().unwrap();
    let m = gen_toy_corpus(500, 64, 1, dir.path()).unwrap();
    let imgs = decode_manifest(&m, ImageShape::square(3, 64)).unwrap();
    let total: f64 = imgs
        .iter()
        .flat_map(|t| t.data().iter())
        .map(|&v| v as f64)
        .sum();
    let mean = total / (imgs.len() * 3 * 64 * 64) as f64;
    assert!((-0.5..=0.5).contains(&mean), "{mean}");
    let per: Vec<f64> = imgs
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).sum::<f64>())
        .collect();
    assert!(per.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn toy_corpus_rejects_zero_count() {
    let dir = tempdir().unwrap();
    assert!(gen_toy_corpus(0, 32, 1, dir.path()).is_err());
}

#[test]
fn blob_layout_is_bit_exact() {
    let t = Tensor::<f32>::from_vec(vec![1.0, -2.0], &[2, 1]).unwrap();
    let b = encode_blob(&t);
    let mut want = b"PADT".to_vec();
    want.extend_from_slice(&[1, 0, 2, 0]);
    want.extend_from_slice(&2u64.to_le_bytes());
    want.extend_from_slice(&1u64.to_le_bytes());
    want.extend_from_slice(&1.0f32.to_le_bytes());
    want.extend_from_slice(&(-2.0f32).to_le_bytes());
    assert_eq!(b, want);
    let h = read_blob_header(&b).unwrap();
    assert_eq!(h.len, b.len());
}

#[test]
fn blob_errors() {
    let t = Tensor::<f64>::from_vec(vec![0.5; 6], &[2, 3]).unwrap();
    let b = encode_blob(&t);
    for cut in 0..b.len() {
        assert!(
            matches!(decode_blob::<f64>(&b[..cut]), Err(Error::Corruption(_))),
            "cut {cut}"
        );
    }
    let mut v = b.clone();
    v[4] = 2;
    assert!(matches!(
        decode_blob::<f64>(&v),
        Err(Error::UnsupportedVersion {
            found: 2,
            expected: 1
        })
    ));
    assert!(matches!(
        decode_blob::<f32>(&b),
        Err(Error::InvalidArgument(_))
    ));
    let dir = tempdir().unwrap();
    let p = dir.path().join("t.padt");
    save_tensor(&t, &p).unwrap();
    assert!(load_tensor::<f64>(&p).unwrap().bitwise_eq(&t));
}

fn shapes() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..=4)
}

proptest! {
    #[test]
    fn blob_round_trip_f32(shape in shapes(), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut s = spoofsmith::rng::Stream::new(seed);
        let data: Vec<f32> = (0..n).map(|_| f32::from_bits(s.next_u64() as u32)).collect();
        let t = Tensor::from_vec(data, &shape).unwrap();
        let (back, used) = decode_blob::<f32>(&encode_blob(&t)).unwrap();
        prop_assert!(back.bitwise_eq(&t));
        prop_assert_eq!(used, 8 + 8 * shape.len() + 4 * n);
    }

    #[test]
    fn blob_round_trip_f64(shape in shapes(), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let mut s = spoofsmith::rng::Stream::new(seed);
        let data: Vec<f64> = (0..n).map(|_| f64::from_bits(s.next_u64())).collect();
        let t = Tensor::from_vec(data, &shape).unwrap();
        let (back, _) = decode_blob::<f64>(&encode_blob(&t)).unwrap();
        prop_assert!(back.bitwise_eq(&t));
    }
}

fn sample_checkpoint() -> Checkpoint {
    let g =
        build_dcgan_generator(LatentSpec { z_dim: 8 }, ImageShape::square(1, 16), 0.05, 3).unwrap();
    let adam = AdamState::new(&g.store).unwrap();
    let meta = CheckpointMeta {
        kind: "generator".into(),
        config_hash: "abc".into(),
        seed: 3,
        iteration: 12,
        epoch: 2,
        rng_cursor: 12,
        extra: serde_json::json!({"history": [{"iter": 0, "d_loss": 0.1, "g_loss": 1.0 / 3.0}]}),
    };
    Checkpoint::new(g, Some(adam), meta)
}

#[test]
fn checkpoint_resave_is_byte_identical() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let c = sample_checkpoint();
    save_checkpoint(&c, &a).unwrap();
    let loaded: Checkpoint = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(loaded.network.store.bitwise_eq(&c.network.store));
    assert!(loaded.adam.unwrap().bitwise_eq(c.adam.as_ref().unwrap()));
    assert_eq!(loaded.meta, c.meta);
    assert_eq!(&fs::read(&a).unwrap()[..5], b"PADC\x01");
}

#[test]
fn truncated_checkpoint_is_corruption() {
    let bytes = sample_checkpoint().to_bytes().unwrap();
    let step = (bytes.len() / 97).max(1);
    for cut in (5..bytes.len()).step_by(step).chain([bytes.len() - 1]) {
        match Checkpoint::<f32>::from_bytes(&bytes[..cut]) {
            Err(Error::Corruption(_)) => {}
            other => panic!("cut {cut}: {:?}", other.map(|_| ())),
        }
    }
}

#[test]
fn flipped_blob_byte_is_detected() {
    let mut bytes = sample_checkpoint().to_bytes().unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x40;
    assert!(matches!(
        Checkpoint::<f32>::from_bytes(&bytes),
        Err(Error::Corruption(_))
    ));
}

#[test]
fn checkpoint_version_and_dtype_checks() {
    let mut bytes = sample_checkpoint().to_bytes().unwrap();
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(&bytes),
        Err(Error::InvalidArgument(_))
    ));
    bytes[4] = 9;
    assert!(matches!(
        Checkpoint::<f32>::from_bytes(&bytes),
        Err(Error::UnsupportedVersion {
            found: 9,
            expected: 1
        })
    ));
    assert!(matches!(
        Checkpoint::<f32>::from_bytes(b"NOPE"),
        Err(Error::Corruption(_))
    ));
}
