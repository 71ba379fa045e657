mod common;

use proptest::prelude::*;
use rga::cli::RunConfig;
use rga::data::augment::{flip, rotate};
use rga::data::io::quantize;
use rga::data::{batch_order, Augment, Flip, Sampling};
use rga::loss::{bce_loss, dice_loss, iou_loss, LossKind};
use rga::metrics::{binarize, confusion, error_map, metrics};
use rga::nn::checkpoint::Checkpoint;
use rga::nn::{ModelConfig, RgaNet};
use rga::optim::Plateau;
use rga::tensor::ops;
use rga::Tensor;

fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    proptest::collection::vec(-1.0f32..1.0, n).prop_map(move |v| Tensor::from_vec(&shape, v).unwrap())
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(any::<bool>(), h * w)
        .prop_map(move |v| Tensor::from_vec(&[1, 1, h, w], v.into_iter().map(|b| b as u8 as f32).collect()).unwrap())
}

fn unit(h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(0.001f32..0.999, h * w).prop_map(move |v| Tensor::from_vec(&[1, 1, h, w], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flips_are_involutions(t in tensor([1, 2, 5, 7])) {
        for f in [Flip::Horizontal, Flip::Vertical] {
            prop_assert_eq!(flip(&flip(&t, f).unwrap(), f).unwrap(), t.clone());
        }
    }

    #[test]
    fn four_quarter_turns_are_identity(t in tensor([1, 3, 6, 6])) {
        let mut r = t.clone();
        for _ in 0..4 {
            r = rotate(&r, 90, Sampling::Bilinear).unwrap();
        }
        prop_assert_eq!(r, t);
    }

    #[test]
    fn rotations_keep_masks_binary(m in mask(9, 9), deg in 1u16..=360) {
        let r = rotate(&m, deg, Sampling::Nearest).unwrap();
        prop_assert!(r.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(r.shape(), m.shape());
    }

    #[test]
    fn augment_text_round_trips(deg in 1u16..=360, k in 0usize..5) {
        let a = match k {
            0 => Augment::Identity,
            1 => Augment::Flip(Flip::Horizontal),
            2 => Augment::Flip(Flip::Vertical),
            3 => Augment::Rotate(deg),
            _ => Augment::RotateFlip(deg, Flip::Vertical),
        };
        prop_assert_eq!(a.to_string().parse::<Augment>().unwrap(), a);
    }

    #[test]
    fn batch_order_partitions(len in 0usize..200, bs in 1usize..17, seed: u64, epoch in 0u64..100) {
        let batches = batch_order(len, bs, seed, epoch).unwrap();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= bs));
        let mut all = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert_eq!(batches, batch_order(len, bs, seed, epoch).unwrap());
    }

    #[test]
    fn quantize_is_monotone_and_exact_on_bytes(a in 0.0f32..=1.0, b in 0.0f32..=1.0, byte: u8) {
        prop_assert!((a <= b) == (quantize(a) <= quantize(b)) || quantize(a) == quantize(b));
        prop_assert_eq!(quantize(byte as f32 / 255.0), byte);
    }

    #[test]
    fn confusion_partitions_pixels(p in mask(8, 8), g in mask(8, 8)) {
        let c = confusion(&p, &g).unwrap();
        prop_assert_eq!(c.total(), 64);
        prop_assert_eq!(c.tp + c.fn_, g.sum() as u64);
        prop_assert_eq!(c.tp + c.fp, p.sum() as u64);
        prop_assert_eq!(c, common::brute_confusion(&p, &g));
    }

    #[test]
    fn jaccard_and_f1_agree(p in mask(8, 8), g in mask(8, 8)) {
        let m = metrics(&confusion(&p, &g).unwrap()).unwrap();
        prop_assert!((m.jaccard - m.f1 / (2.0 - m.f1)).abs() < 1e-12);
        for v in common::metric_values(&m) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn error_map_colors_match_counts(p in mask(6, 7), g in mask(6, 7)) {
        let map = error_map(&p, &g).unwrap();
        let c = confusion(&p, &g).unwrap();
        let plane = 42;
        let count = |rgb: [f32; 3]| (0..plane)
            .filter(|&i| (0..3).all(|ch| map.data()[ch * plane + i] == rgb[ch]))
            .count() as u64;
        prop_assert_eq!(count([0.0, 1.0, 0.0]), c.tp);
        prop_assert_eq!(count([1.0, 0.0, 0.0]), c.fn_);
        prop_assert_eq!(count([0.0, 0.0, 1.0]), c.fp);
        prop_assert_eq!(count([0.0, 0.0, 0.0]), c.tn);
    }

    #[test]
    fn binarize_ties_are_foreground(t in unit(4, 4)) {
        let mut t = t;
        t.data_mut()[0] = 0.5;
        let b = binarize(&t, 0.5);
        prop_assert_eq!(b.data()[0], 1.0);
        prop_assert!(b.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn losses_are_bounded_and_vanish_at_the_target(p in unit(5, 5), g in mask(5, 5)) {
        for l in [dice_loss(&p, &g, 1.0).unwrap(), iou_loss(&p, &g, 1.0).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&l));
        }
        prop_assert!(bce_loss(&p, &g).unwrap() >= 0.0);
        prop_assert!(dice_loss(&g, &g, 1.0).unwrap() < 1e-12);
        for kind in LossKind::ALL {
            prop_assert!(kind.evaluate(&p, &g).unwrap().is_finite());
        }
    }

    #[test]
    fn sigmoid_stays_in_open_unit_interval(t in tensor([1, 1, 3, 3])) {
        let s = ops::sigmoid(&t.map(|v| v * 20.0));
        prop_assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn batchnorm_output_is_standardized(t in tensor([2, 3, 4, 4])) {
        let gamma = Tensor::ones(&[3]);
        let beta = Tensor::zeros(&[3]);
        let (y, _, _) = ops::batchnorm_train(&t, &gamma, &beta, 1e-5).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| (0..16).map(move |i| (n, i)))
                .map(|(n, i)| y.data()[(n * 3 + c) * 16 + i] as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / 32.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            prop_assert!(mean.abs() < 1e-5);
            let raw: Vec<f64> = (0..2)
                .flat_map(|n| (0..16).map(move |i| (n, i)))
                .map(|(n, i)| t.data()[(n * 3 + c) * 16 + i] as f64)
                .collect();
            let rm = raw.iter().sum::<f64>() / 32.0;
            let rv = raw.iter().map(|v| (v - rm).powi(2)).sum::<f64>() / 32.0;
            prop_assert!((var - rv / (rv + 1e-5)).abs() < 1e-4);
        }
    }

    #[test]
    fn plateau_never_raises_lr_or_drops_below_floor(seq in proptest::collection::vec(0.0f64..2.0, 1..60)) {
        let mut p = Plateau::new(2);
        let mut lr = 1e-3;
        for v in seq {
            let next = p.step(v, lr).unwrap();
            prop_assert!(next <= lr && next >= 1e-6);
            lr = next;
        }
    }

    #[test]
    fn run_config_resolved_round_trips(
        epochs in 0usize..500,
        batch in 1usize..64,
        seed: u64,
        lr_exp in -6i32..-1,
        kind in 0usize..5,
        plain: bool,
    ) {
        let mut cfg = RunConfig {
            epochs,
            batch,
            seed,
            lr: 10f64.powi(lr_exp) * 3.0,
            loss: LossKind::ALL[kind],
            ..RunConfig::default()
        };
        if plain {
            cfg.model = ModelConfig::plain_unet();
        }
        prop_assert_eq!(RunConfig::parse(&cfg.resolved()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_bytes_round_trip(seed: u64) {
        let net = RgaNet::new(ModelConfig::with_filters([2, 3, 4, 5]), seed).unwrap();
        let ckpt = Checkpoint::from_model(&net, None);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), ckpt.to_bytes());
        let restored = RgaNet::from_checkpoint(&back).unwrap();
        let x = Tensor::from_fn(&[1, 3, 16, 16], |i| (i % 7) as f32 / 7.0);
        prop_assert_eq!(restored.predict(&x).unwrap(), net.predict(&x).unwrap());
    }
}
