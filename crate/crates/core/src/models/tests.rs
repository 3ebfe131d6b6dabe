use super::*;
use crate::nn::Mode;
use crate::tensor::{Fill, Tensor};

fn rgb(side: usize) -> ImageShape {
    ImageShape::square(3, side)
}

#[test]
fn vggnet_counts_and_head() {
    let arch = modified_vggnet_arch(rgb(64), 1.0, 256).unwrap();
    assert_eq!(
        arch.counts(),
        LayerCounts {
            conv2d: 14,
            maxpool: 5,
            flatten: 1,
            dense: 2
        }
    );
    let shapes = arch.shapes().unwrap();
    let flatten_at = arch
        .layers
        .iter()
        .position(|l| l.kind == LayerKind::Flatten)
        .unwrap();
    assert_eq!(shapes[flatten_at + 1], vec![512 * 2 * 2]);
    let last = arch.layers.last().unwrap();
    assert_eq!(last.activation, Activation::Sigmoid);
    assert!(matches!(
        last.kind,
        LayerKind::Dense {
            out_features: 1,
            ..
        }
    ));
    assert_eq!(arch.output_shape().unwrap(), vec![1]);
}

#[test]
fn vggnet_parameter_count_by_hand() {
    // conv: Σ (in·9 + 1)·out over the 14 layers; dense: 2048·256 + 256, 256 + 1
    let conv = (3 * 9 + 1) * 64
        + (64 * 9 + 1) * 64
        + (64 * 9 + 1) * 128
        + (128 * 9 + 1) * 128
        + (128 * 9 + 1) * 256
        + 2 * (256 * 9 + 1) * 256
        + (256 * 9 + 1) * 512
        + 6 * (512 * 9 + 1) * 512;
    let dense = 2048 * 256 + 256 + 256 + 1;
    assert_eq!(conv + dense, 17_599_297);
    let net: NetworkSpec<f32> = build_modified_vggnet(rgb(64), 1.0, 256, 0).unwrap();
    assert_eq!(net.param_count(), 17_599_297);
}

#[test]
fn vggnet_divisibility_rule() {
    assert!(modified_vggnet_arch(rgb(32), 1.0, 256).is_ok());
    let err = modified_vggnet_arch(rgb(48), 1.0, 256).unwrap_err();
    assert!(matches!(err, crate::Error::InvalidShape(_)));
    assert!(modified_vggnet_arch(ImageShape::new(1, 64, 96), 0.25, 16).is_ok());
}

#[test]
fn vggnet_forward_is_a_probability() {
    let mut net: NetworkSpec<f32> = build_modified_vggnet(rgb(32), 0.125, 16, 3).unwrap();
    let x = Tensor::create(&[4, 3, 32, 32], Fill::Uniform { lo: -1.0, hi: 1.0 }, 1).unwrap();
    let y = net.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.shape(), &[4, 1]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    let a = net.predict(&x).unwrap();
    let b = net.predict(&x).unwrap();
    assert!(a.bitwise_eq(&b));
}

#[test]
fn generator_doubles_resolution() {
    let arch = dcgan_generator_arch(LatentSpec::default(), rgb(64), 1.0).unwrap();
    let sides: Vec<usize> = arch
        .shapes()
        .unwrap()
        .into_iter()
        .filter(|s| s.len() == 3)
        .map(|s| s[1])
        .collect();
    let mut dedup = sides.clone();
    dedup.dedup();
    assert_eq!(dedup, vec![4, 8, 16, 32, 64]);
    assert_eq!(arch.output_shape().unwrap(), vec![3, 64, 64]);
    assert_eq!(arch.layers.last().unwrap().activation, Activation::Tanh);
}

#[test]
fn generator_rejects_bad_resolutions() {
    for side in [8, 24, 48] {
        assert!(dcgan_generator_arch(LatentSpec::default(), rgb(side), 1.0).is_err());
    }
    assert!(dcgan_generator_arch(LatentSpec::default(), ImageShape::new(3, 32, 64), 1.0).is_err());
}

#[test]
fn generator_output_is_bounded_and_deterministic() {
    let mut g: NetworkSpec<f32> =
        build_dcgan_generator(LatentSpec::default(), rgb(32), 0.125, 5).unwrap();
    let z = Tensor::zeros(&[2, 100]).unwrap();
    let a = g.predict(&z).unwrap();
    assert_eq!(a.shape(), &[2, 3, 32, 32]);
    assert!(a
        .data()
        .iter()
        .all(|v| v.is_finite() && (-1.0..=1.0).contains(v)));
    let b = g.predict(&z).unwrap();
    assert!(a.bitwise_eq(&b));
}

#[test]
fn discriminator_scores_are_probabilities() {
    let mut d: NetworkSpec<f32> = build_dcgan_discriminator(rgb(64), 0.125, 2).unwrap();
    let x = Tensor::create(&[3, 3, 64, 64], Fill::Uniform { lo: -1.0, hi: 1.0 }, 4).unwrap();
    let y = d.forward(&x, Mode::Train).unwrap();
    assert_eq!(y.shape(), &[3, 1]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn discriminator_treats_identical_inputs_identically() {
    let mut d: NetworkSpec<f32> = build_dcgan_discriminator(rgb(16), 1.0, 2).unwrap();
    let gray = Tensor::create(&[5, 3, 16, 16], Fill::Constant(0.1), 0).unwrap();
    let y = d.predict(&gray).unwrap();
    assert!(y.data().iter().all(|&v| v == y.data()[0]));
}

#[test]
fn gan_pair_duality() {
    for side in [16, 32, 64] {
        let g = dcgan_generator_arch(LatentSpec::default(), rgb(side), 0.25).unwrap();
        let d = dcgan_discriminator_arch(rgb(side), 0.25).unwrap();
        check_gan_pair(&g, &d).unwrap();
    }
    let g = dcgan_generator_arch(LatentSpec::default(), rgb(32), 0.25).unwrap();
    let d = dcgan_discriminator_arch(rgb(64), 0.25).unwrap();
    assert!(check_gan_pair(&g, &d).is_err());
}

#[test]
fn empty_network_is_identity() {
    let arch = Architecture {
        role: Role::Custom,
        input: vec![2, 2],
        layers: vec![],
        init: Init::He,
    };
    let mut net = NetworkSpec::<f64>::initialize(arch, 0).unwrap();
    let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 2, 2]).unwrap();
    assert_eq!(net.forward(&x, Mode::Eval).unwrap().data(), x.data());
    assert!(net
        .forward(&Tensor::zeros(&[1, 4]).unwrap(), Mode::Eval)
        .is_err());
}

#[test]
fn from_parts_checks_shapes() {
    let net: NetworkSpec<f32> = build_dcgan_discriminator(rgb(16), 0.25, 1).unwrap();
    let rebuilt = NetworkSpec::from_parts(net.arch.clone(), net.store.clone()).unwrap();
    assert!(rebuilt.store.bitwise_eq(&net.store));
    let mut broken = net.store.clone();
    broken.params.pop_first();
    assert!(NetworkSpec::from_parts(net.arch.clone(), broken).is_err());
}
