use cbir_core::descriptor::{describe, gem_pool, l2_norm, DescribeInput, DescriptorConfig, Encoder, FeatureMap};
use cbir_core::frangi::{
    eigen_symmetric, eigenvector_for, frangi_filter, frangi_response, frangi_response_2d, residual, EigenTriple,
    FrangiParams, SymmetricMatrix,
};
use cbir_core::imagecore::{augment, crop_roi, resize_bilinear, AugmentSpec, BBox, ImageGrid};
use cbir_core::metric::{cosine_distance, triplet_loss, TrainConfig};
use cbir_core::retrieval::{build_index, query, EvalSetting, IndexEntry, QueryOptions};
use proptest::prelude::*;

fn grid(max_w: usize, max_h: usize) -> impl Strategy<Value = ImageGrid> {
    (1..=max_w, 1..=max_h).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0..1.0f64, w * h).prop_map(move |d| ImageGrid::new(w, h, 1, d).unwrap())
    })
}

/// An image with a box strictly inside it, and a box inside that box
/// (in the first box's coordinates).
fn nested_boxes() -> impl Strategy<Value = (ImageGrid, BBox, BBox)> {
    grid(12, 12).prop_flat_map(|img| {
        let (w, h) = (img.width() as u32, img.height() as u32);
        (Just(img), 0..w, 0..h).prop_flat_map(move |(img, l, t)| {
            (Just(img), Just(l), Just(t), (l + 1)..=w, (t + 1)..=h).prop_flat_map(|(img, l, t, r, b)| {
                let outer = BBox::new(l, t, r, b);
                let (ow, oh) = (r - l, b - t);
                (Just(img), Just(outer), 0..ow, 0..oh).prop_flat_map(move |(img, outer, il, it)| {
                    ((il + 1)..=ow, (it + 1)..=oh)
                        .prop_map(move |(ir, ib)| (img.clone(), outer, BBox::new(il, it, ir, ib)))
                })
            })
        })
    })
}

fn unit(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("nonzero", |v| l2_norm(v) > 1e-3)
        .prop_map(|v| {
            let n = l2_norm(&v);
            v.into_iter().map(|x| x / n).collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nested_crops_compose((img, outer, inner) in nested_boxes()) {
        let twice = crop_roi(&crop_roi(&img, &outer).unwrap(), &inner).unwrap();
        let once = crop_roi(&img, &outer.compose(&inner)).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn resize_stays_within_input_range(img in grid(9, 9), w in 1usize..20, h in 1usize..20) {
        let (lo, hi) = img.min_max();
        let out = resize_bilinear(&img, w, h).unwrap();
        prop_assert_eq!((out.width(), out.height()), (w, h));
        for &v in out.data() {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn augment_is_pure_and_clamped(
        img in grid(10, 10),
        flip_h in 0.0..=1.0f64,
        flip_v in 0.0..=1.0f64,
        hi in 0.0..1.5f64,
        jitter in 0.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let spec = AugmentSpec { flip_h, flip_v, blur_sigma_range: [0.0, hi], intensity_jitter: jitter, seed };
        let a = augment(&img, &spec).unwrap();
        let b = augment(&img, &spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!((a.width(), a.height()), (img.width(), img.height()));
        prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn response_is_bounded(l1 in -50.0..50.0f64, l2 in -50.0..50.0f64, l3 in -50.0..50.0f64) {
        let p = FrangiParams::default();
        let e = EigenTriple::from_unordered([l1, l2, l3]);
        let v = frangi_response(e, &p);
        prop_assert!((0.0..=1.0).contains(&v));
        if e.l2 > 0.0 || e.l3 > 0.0 {
            prop_assert_eq!(v, 0.0);
        }
        let soft = FrangiParams { soft_suppression: true, ..FrangiParams::default() };
        prop_assert!((0.0..=1.0).contains(&frangi_response(e, &soft)));
    }

    #[test]
    fn planar_response_is_bounded(a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let (l1, l2) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
        let v = frangi_response_2d(l1, l2, &FrangiParams::default());
        prop_assert!((0.0..=1.0).contains(&v));
        if l2 > 0.0 {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn eigenpairs_have_small_residual(
        v3 in prop::collection::vec(-100.0..100.0f64, 6),
        v2 in prop::collection::vec(-100.0..100.0f64, 3),
    ) {
        for m in [
            SymmetricMatrix::Three([v3[0], v3[1], v3[2], v3[3], v3[4], v3[5]]),
            SymmetricMatrix::Two([v2[0], v2[1], v2[2]]),
        ] {
            let bound = 1e-8 * (1.0 + m.frobenius_norm());
            let values = eigen_symmetric(&m);
            prop_assert!(values.windows(2).all(|w| w[0].abs() <= w[1].abs()));
            for lambda in values {
                let v = eigenvector_for(&m, lambda);
                prop_assert!((l2_norm(&v) - 1.0).abs() < 1e-12);
                prop_assert!(residual(&m, lambda, &v) <= bound);
            }
        }
    }

    #[test]
    fn gem_between_min_and_max(values in prop::collection::vec(0.0..10.0f64, 2..40), p in 0.1..20.0f64) {
        let n = values.len();
        let fm = FeatureMap::new(1, n, 1, values.clone(), "t").unwrap();
        let g = gem_pool(&fm, p, 1e-6).unwrap()[0];
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min).max(1e-6);
        let hi = values.iter().cloned().fold(0.0, f64::max).max(1e-6);
        prop_assert!(g >= lo * (1.0 - 1e-12) && g <= hi * (1.0 + 1e-12), "{} not in [{}, {}]", g, lo, hi);
    }

    #[test]
    fn gem_monotone_in_p(values in prop::collection::vec(0.01..10.0f64, 2..40), p in 0.2..10.0f64, dp in 0.1..5.0f64) {
        let n = values.len();
        prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-6));
        let fm = FeatureMap::new(1, n, 1, values, "t").unwrap();
        let a = gem_pool(&fm, p, 1e-6).unwrap()[0];
        let b = gem_pool(&fm, p + dp, 1e-6).unwrap()[0];
        prop_assert!(b > a);
    }

    #[test]
    fn describe_is_unit_and_scale_invariant(
        values in prop::collection::vec(0.0..5.0f64, 3 * 16),
        k in 0.01..100.0f64,
        p in 0.5..8.0f64,
    ) {
        prop_assume!(values.iter().any(|&v| v > 1e-3));
        let fm = FeatureMap::new(3, 4, 4, values, "ext").unwrap();
        let cfg = DescriptorConfig { encoder: Encoder::Precomputed, gem_p: p, ..DescriptorConfig::default() };
        let a = describe(DescribeInput::Features(&fm), &cfg).unwrap();
        let b = describe(DescribeInput::Features(&fm.scaled(k)), &cfg).unwrap();
        prop_assert!((l2_norm(&a.vector) - 1.0).abs() <= 1e-9);
        for (x, y) in a.vector.iter().zip(&b.vector) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn cosine_distance_symmetric_and_zero_on_self(
        i in prop::collection::vec(-10.0..10.0f64, 1..12),
        j in prop::collection::vec(-10.0..10.0f64, 1..12),
    ) {
        prop_assume!(l2_norm(&i) > 0.0 && l2_norm(&j) > 0.0);
        prop_assert_eq!(cosine_distance(&i, &i).unwrap(), 0.0);
        if i.len() == j.len() {
            let d = cosine_distance(&i, &j).unwrap();
            prop_assert_eq!(d, cosine_distance(&j, &i).unwrap());
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }

    #[test]
    fn triplet_loss_bounds(a in unit(5), p in unit(5), n in unit(5), m in 0.01..2.0f64) {
        let l = triplet_loss(&a, &p, &n, m).unwrap();
        prop_assert!(l >= 0.0 && l <= 0.5 * (m + 2.0));
    }

    #[test]
    fn schedule_endpoints(lr in 1e-4..1.0f64, iterations in 2usize..200) {
        let cfg = TrainConfig { learning_rate: lr, iterations, ..TrainConfig::default() };
        prop_assert_eq!(cfg.learning_rate_at(0), lr);
        prop_assert!(cfg.learning_rate_at(iterations - 1) <= 1e-3 * lr);
    }

    #[test]
    fn ranking_invariant_under_squared_distance(
        vecs in prop::collection::vec(unit(4), 1..30),
        q in unit(4),
        k in 1usize..40,
    ) {
        let entries: Vec<IndexEntry> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| IndexEntry {
                id: format!("e{i}"),
                embedding: v.clone(),
                patient_id: format!("P{}", i % 3),
                study_id: "S".into(),
                lesion_type: "x".into(),
            })
            .collect();
        let index = build_index(entries).unwrap();
        let got = query(&index, &q, &QueryOptions { k, ..QueryOptions::default() }).unwrap();
        let mut order: Vec<(usize, f64)> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| (i, cosine_distance(&q, v).unwrap().powi(2)))
            .collect();
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let want: Vec<String> = order.iter().take(k).map(|(i, _)| format!("e{i}")).collect();
        prop_assert_eq!(got.ids(), want.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn settings_partition_the_pool(vecs in prop::collection::vec(unit(3), 2..20), q in unit(3)) {
        let entries: Vec<IndexEntry> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| IndexEntry {
                id: format!("e{i}"),
                embedding: v.clone(),
                patient_id: format!("P{}", i % 3),
                study_id: "S".into(),
                lesion_type: "x".into(),
            })
            .collect();
        let index = build_index(entries).unwrap();
        let run = |setting| {
            query(&index, &q, &QueryOptions { k: 100, setting, patient_id: Some("P1"), exclude_id: None })
                .unwrap()
                .hits
                .len()
        };
        prop_assert_eq!(
            run(EvalSetting::SamePatient) + run(EvalSetting::CrossPatient),
            run(EvalSetting::AllPatients)
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adding_a_scale_never_lowers_the_response(img in grid(14, 14).prop_filter("3px", |g| g.width() >= 3 && g.height() >= 3), extra in 0.5..4.0f64) {
        let base = FrangiParams::default().with_scales(vec![1.0, 2.0]);
        let mut scales = vec![1.0, 2.0, extra];
        scales.sort_by(f64::total_cmp);
        scales.dedup();
        let more = FrangiParams::default().with_scales(scales);
        let a = frangi_filter(&img, &base).unwrap();
        let b = frangi_filter(&img, &more).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(y >= x);
        }
        prop_assert!(b.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(b.argmax_scale.iter().all(|s| more.scales.contains(s)));
    }

    #[test]
    fn frangi_filter_is_bit_deterministic(img in grid(16, 16).prop_filter("3px", |g| g.width() >= 3 && g.height() >= 3)) {
        let p = FrangiParams::default().with_scales(vec![0.8, 1.6, 3.0]);
        prop_assert_eq!(frangi_filter(&img, &p).unwrap(), frangi_filter(&img, &p).unwrap());
    }
}
