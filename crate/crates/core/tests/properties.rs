use invface::corpus::{sample_prior, CorpusShard, PriorSpec, Record};
use invface::evaluation::iou;
use invface::face_model::rotation_matrix;
use invface::illumination::{irradiance, ShCoefficients};
use invface::image::{Mask, RgbImage};
use invface::math::{determinant, mat_mul, transpose};
use invface::params::{ParamGroup, ParamLayout};
use invface::regressor::optim::Accumulators;
use invface::regressor::{normalize_input, AdaDelta, LossMetric};
use proptest::prelude::*;

fn unit_vector() -> impl Strategy<Value = [f64; 3]> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        [r * phi.cos(), r * phi.sin(), z]
    })
}

fn mask(w: usize, h: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), w * h).prop_map(move |bits| Mask {
        width: w,
        height: h,
        bits,
    })
}

proptest! {
    #[test]
    fn rotations_are_proper_orthogonal(a in -3.2f64..3.2, b in -3.2f64..3.2, c in -3.2f64..3.2) {
        let r = rotation_matrix(a, b, c);
        let rtr = mat_mul(&transpose(&r), &r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((v - id).abs() < 1e-12);
            }
        }
        prop_assert!((determinant(&r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn irradiance_is_non_negative(n in unit_vector(), c in prop::collection::vec(-2.0f64..2.0, 27)) {
        let coeffs = ShCoefficients::from_slice(&c).unwrap();
        prop_assert!(irradiance(&coeffs, n).unwrap().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn iou_is_bounded_and_symmetric(a in mask(5, 4), b in mask(5, 4)) {
        let ab = iou(&a, &b).unwrap();
        prop_assert!((0.0..=100.0).contains(&ab));
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert_eq!(iou(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn mask_packing_round_trips(m in mask(7, 3)) {
        prop_assert_eq!(Mask::unpack(7, 3, &m.pack()).unwrap(), m);
    }

    #[test]
    fn ppm_round_trips(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
        let data = (0..w * h * 3).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
        let img = RgbImage::from_raw(w, h, data).unwrap();
        prop_assert_eq!(RgbImage::from_ppm(&img.to_ppm()).unwrap(), img);
    }

    #[test]
    fn normalized_input_is_in_range(w in 1usize..40, h in 1usize..40, r in 1usize..20, v in any::<u8>()) {
        let img = RgbImage::from_raw(w, h, vec![v; w * h * 3]).unwrap();
        let out = normalize_input(&img, r).unwrap();
        prop_assert_eq!(out.len(), 3 * r * r);
        let expected = v as f32 / 255.0 - 0.5;
        prop_assert!(out.iter().all(|&x| (-0.5..=0.5).contains(&x) && (x - expected).abs() < 1e-5));
    }

    #[test]
    fn loss_is_a_non_negative_quadratic(
        p in prop::collection::vec(-10.0f64..10.0, 33),
        t in prop::collection::vec(-10.0f64..10.0, 33),
    ) {
        let metric = LossMetric::euclidean(ParamLayout::new(1, 1, 1));
        let l = metric.eval(&p, &t).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(metric.eval(&p, &p).unwrap(), 0.0);
        prop_assert!((l - metric.eval(&t, &p).unwrap()).abs() <= 1e-9 * l.max(1.0));
    }

    #[test]
    fn adadelta_moves_against_the_gradient(g in prop::collection::vec(-1.0f32..1.0, 8)) {
        let opt = AdaDelta { weight_decay: 0.0, ..AdaDelta::default() };
        let mut w = [0.0f32; 8];
        let mut acc = Accumulators::zeros([8]);
        opt.step(&mut [&mut w[..]], std::slice::from_ref(&g), &mut acc).unwrap();
        for (wi, gi) in w.iter().zip(&g) {
            prop_assert!(wi.is_finite());
            prop_assert!(*wi * *gi <= 0.0);
        }
    }

    #[test]
    fn prior_groups_depend_only_on_seed_record_and_group(index in 0u64..1_000_000, seed in any::<u64>()) {
        let prior = PriorSpec { rng_seed: seed, ..PriorSpec::default() };
        let a = sample_prior(&prior, ParamLayout::new(4, 3, 2), index);
        let b = sample_prior(&prior, ParamLayout::new(9, 5, 7), index);
        prop_assert_eq!(a.group(ParamGroup::Rotation), b.group(ParamGroup::Rotation));
        prop_assert_eq!(a.group(ParamGroup::Illumination), b.group(ParamGroup::Illumination));
        prop_assert_eq!(&a.shape()[..4], &b.shape()[..4]);
    }

    #[test]
    fn shard_bytes_round_trip(n in 1usize..5, seed in any::<u64>()) {
        let records: Vec<Record> = (0..n)
            .map(|i| {
                let mut image = RgbImage::black(3, 2);
                image.set_pixel(i % 3, 1, [i as u8, seed as u8, 9]);
                let mut mask = Mask::empty(3, 2);
                mask.bits[i % 6] = true;
                Record { params: vec![i as f32 * 0.5; 33], image, mask }
            })
            .collect();
        let shard = CorpusShard::from_records(33, 3, 2, seed, records).unwrap();
        let bytes = shard.to_bytes();
        let back = CorpusShard::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.len(), n);
    }
}

#[test]
fn empty_shard_is_rejected() {
    assert!(matches!(
        CorpusShard::from_records(33, 3, 2, 0, Vec::new()),
        Err(invface::Error::EmptyCorpus)
    ));
}
