use gad_core::attribution::{AttributionMap, Method};
use gad_core::checkpoint::{Checkpoint, TrainingKind};
use gad_core::dataset::netpbm::{self, Raster};
use gad_core::dataset::{normalize, Dataset, Sample};
use gad_core::eval::hull::{convex_hull, rasterize_hull, HullMask, Point};
use gad_core::eval::{
    compute_rs, select_top_pixels, supplementary_mask, SelectionMode, SensitivityOutput,
};
use gad_core::gad::{distance_logits, intersect_steps, AlphaPair, ClassPairing};
use gad_core::ops::{maxpool2x2_backward, maxpool2x2_forward, relu_backward};
use gad_core::zoo::{init_weights, SmallCnnSpec};
use gad_core::{ReluBackwardMode, Tensor};
use proptest::prelude::*;
use std::path::Path;

fn tensor(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f32..2.0, n)
        .prop_map(move |d| Tensor::new(shape.to_vec(), d).unwrap())
}

fn map_of(values: Vec<f32>, side: usize) -> AttributionMap {
    AttributionMap {
        class: 0,
        method: Method::Saliency,
        height: side,
        width: side,
        values,
    }
}

fn argsort(col: impl Iterator<Item = f32>) -> Vec<usize> {
    let v: Vec<f32> = col.collect();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pool_backward_routes_every_gradient_once(x in tensor(&[2, 4, 6]), g in tensor(&[2, 2, 3])) {
        let (_, cache) = maxpool2x2_forward(&x).unwrap();
        let gi = maxpool2x2_backward(&g, &cache).unwrap();
        // Each upstream value lands on exactly one input cell, so the multiset
        // of routed values equals the upstream values and the sums agree.
        let mut routed: Vec<f32> = cache.argmax.iter().map(|&i| gi.data()[i]).collect();
        let mut up = g.data().to_vec();
        routed.sort_by(f32::total_cmp);
        up.sort_by(f32::total_cmp);
        prop_assert_eq!(routed, up);
        let rest = (0..gi.len()).filter(|i| !cache.argmax.contains(i));
        prop_assert!(rest.into_iter().all(|i| gi.data()[i] == 0.0));
        let a: f64 = gi.data().iter().map(|&v| v as f64).sum();
        let b: f64 = g.data().iter().map(|&v| v as f64).sum();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relu_modes_have_the_stated_supports(x in tensor(&[3, 4, 4]), g in tensor(&[3, 4, 4])) {
        let s = relu_backward(&g, &x, ReluBackwardMode::Standard).unwrap();
        let d = relu_backward(&g, &x, ReluBackwardMode::Deconv).unwrap();
        let gb = relu_backward(&g, &x, ReluBackwardMode::Guided).unwrap();
        for i in 0..x.len() {
            let (xi, gi) = (x.data()[i], g.data()[i]);
            if xi <= 0.0 { prop_assert_eq!(s.data()[i], 0.0); }
            if gi <= 0.0 { prop_assert_eq!(d.data()[i], 0.0); }
            let both = s.data()[i] != 0.0 && d.data()[i] != 0.0;
            prop_assert_eq!(gb.data()[i] != 0.0, both);
        }
    }

    #[test]
    fn distancing_preserves_column_orders(
        rows in prop::collection::vec(prop::collection::vec(-5.0f32..5.0, 4), 2..24),
        alpha in 0usize..5,
        which in 0usize..3,
    ) {
        let n = rows.len();
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let pairing = match which {
            0 => ClassPairing::TwoClass { k: 1, l: 2 },
            1 => ClassPairing::OneVsAll { k: 3 },
            _ => ClassPairing::HalfSplit { cluster_a: vec![0, 2], cluster_b: vec![1, 3] },
        };
        let a = 2.0 * alpha as f32;
        let t = distance_logits(&rows, &labels, &pairing, AlphaPair::symmetric(a)).unwrap();
        // Every selected row gets exactly one rule.
        let mut seen = t.indices.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), t.indices.len());
        for class in 0..4 {
            let members: Vec<usize> = (0..t.indices.len()).filter(|&r| labels[t.indices[r]] == class).collect();
            for col in 0..4 {
                let orig = argsort(members.iter().map(|&r| rows[t.indices[r]][col]));
                let tgt = argsort(members.iter().map(|&r| t.rows[r][col]));
                prop_assert_eq!(orig, tgt);
            }
        }
    }

    #[test]
    fn intersection_only_shrinks(
        orig in prop::collection::vec(-1.0f32..1.0, 16),
        supports in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 16), 0..6),
    ) {
        let o = map_of(orig, 4);
        let maps: Vec<AttributionMap> = supports.into_iter().map(|v| map_of(v, 4)).collect();
        let steps = intersect_steps(&o, &maps).unwrap();
        let mut prev: Vec<usize> = o.positive_support();
        for (j, s) in steps.iter().enumerate() {
            let cur = s.positive_support();
            prop_assert!(cur.iter().all(|i| prev.contains(i)));
            // Exactly the pixels positive in every map so far.
            let expect: Vec<usize> = (0..16)
                .filter(|&i| o.values[i] > 0.0 && maps[..=j].iter().all(|m| m.values[i] > 0.0))
                .collect();
            prop_assert_eq!(&cur, &expect);
            prev = cur;
        }
    }

    #[test]
    fn hull_area_never_drops_when_points_are_added(
        base in prop::collection::vec((0i64..16, 0i64..16), 1..20),
        extra in prop::collection::vec((0i64..16, 0i64..16), 1..10),
    ) {
        let area = |ps: &[(i64, i64)]| {
            let pts: Vec<Point> = ps.iter().map(|&(x, y)| Point::new(x, y)).collect();
            rasterize_hull(&convex_hull(&pts).unwrap(), 16, 16, 0).area()
        };
        let all: Vec<(i64, i64)> = base.iter().chain(&extra).copied().collect();
        prop_assert!(area(&all) >= area(&base));
    }

    #[test]
    fn supplementary_partitions_the_original(
        big in prop::collection::vec(0u8..2, 64),
        keep in prop::collection::vec(0u8..2, 64),
    ) {
        let m_orig = HullMask { height: 8, width: 8, class: 0, values: big.clone() };
        let sub: Vec<u8> = big.iter().zip(&keep).map(|(a, b)| a & b).collect();
        let m_gad = HullMask { values: sub.clone(), ..m_orig.clone() };
        let sup = supplementary_mask(&m_orig, &m_gad).unwrap();
        for i in 0..64 {
            prop_assert_eq!(sup.values[i] + sub[i].min(big[i]), big[i]);
        }
    }

    #[test]
    fn top_fraction_selects_ceiling_count(
        values in prop::collection::vec(-1.0f32..1.0, 25),
        pct in 1u32..=100,
    ) {
        let fraction = pct as f32 / 100.0;
        let map = map_of(values.clone(), 5);
        let sel = select_top_pixels(&map, SelectionMode::TopFraction { fraction }).unwrap();
        let ceil = |n: usize| (pct as usize * n).div_ceil(100);
        prop_assert_eq!(sel.pixels.len(), ceil(25));
        let pos = values.iter().filter(|&&v| v > 0.0).count();
        let sel = select_top_pixels(&map, SelectionMode::TopFractionPositive { fraction }).unwrap();
        prop_assert_eq!(sel.pixels.len(), ceil(pos));
        prop_assert!(sel.pixels.iter().all(|&(r, c)| map.get(r, c) > 0.0));
    }

    #[test]
    fn netpbm_round_trip(w in 1usize..12, h in 1usize..12, rgb in any::<bool>(), seed in any::<u64>()) {
        let channels = if rgb { 3 } else { 1 };
        let mut r = Raster::new(w, h, channels);
        for (i, p) in r.pixels.iter_mut().enumerate() {
            *p = (seed.wrapping_mul(i as u64 + 1) >> 7) as u8;
        }
        prop_assert_eq!(netpbm::decode(&r.encode(), Path::new("mem")).unwrap(), r);
    }

    #[test]
    fn normalization_inverts(values in prop::collection::vec(0.0f32..1.0, 2 * 16)) {
        let sample = |i: usize| Sample {
            image: Tensor::new(vec![1, 4, 4], values[i * 16..(i + 1) * 16].to_vec()).unwrap(),
            label: i,
            id: format!("s{i}"),
        };
        let ds = Dataset { class_names: vec!["a".into(), "b".into()], train: vec![sample(0), sample(1)], eval: vec![] };
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let (norm, stats) = normalize(&ds).unwrap();
        for (n, s) in norm.train.iter().zip(&ds.train) {
            let back = stats.invert(&n.image);
            for (a, b) in back.data().iter().zip(s.image.data()) {
                prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip_is_identity(seed in any::<u64>(), classes in 2usize..5) {
        let arch = SmallCnnSpec::new(1, classes).unwrap().architecture();
        let model = init_weights(&arch, seed).unwrap();
        let ck = Checkpoint {
            model,
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            kind: TrainingKind::Classifier,
        };
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        prop_assert!(back.model.bit_eq(&ck.model));
        prop_assert_eq!(back.class_names, ck.class_names);
    }

    #[test]
    fn empty_occlusion_has_zero_sensitivity(seed in any::<u64>(), class in 0usize..2) {
        let arch = SmallCnnSpec::new(1, 2).unwrap().architecture();
        let model = init_weights(&arch, seed).unwrap();
        let image = Tensor::filled(&[1, 32, 32], 0.3);
        let mask = HullMask::empty(32, 32, class);
        let rs = compute_rs(&model, &image, &mask, class, SensitivityOutput::Logit);
        // An empty mask has no area, so the ratio is reported as undefined
        // and the underlying logit change is exactly zero.
        prop_assert!(rs.is_err());
        let occluded = gad_core::eval::occlude(&image, &mask).unwrap();
        prop_assert!(occluded.bit_eq(&image));
        let (a, b) = (model.forward(&image).unwrap(), model.forward(&occluded).unwrap());
        prop_assert_eq!(a.data()[class] - b.data()[class], 0.0);
    }
}
