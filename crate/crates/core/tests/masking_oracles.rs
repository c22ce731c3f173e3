use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mtl_sparse_opt::masking::{
    apply_mask, build_global_mask, build_mask, build_psn_mask, build_random_mask,
    build_reverse_mask, expected_selected, k_for_fraction, Mask, MaskVariant,
};
use mtl_sparse_opt::model::ParamVector;
use mtl_sparse_opt::model::{Activation, Architecture, ParamKind};
use mtl_sparse_opt::MtlModel;

fn model(seed: u64) -> MtlModel {
    let arch = Architecture {
        d_in: 6,
        trunk: vec![5, 4],
        heads: vec![2, 2],
        trunk_activation: Activation::Tanh,
        shared_head_init: false,
    };
    MtlModel::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Brute force: a weight is kept iff fewer than `k` weights in its row beat
/// it (strictly larger magnitude, or equal magnitude at a lower column).
fn per_row_oracle(m: &MtlModel, k: usize, largest: bool) -> Vec<bool> {
    let mut bits = Vec::new();
    for layer in m.trunk() {
        for r in 0..layer.fan_out() {
            let row = layer.weights.row(r);
            for c in 0..row.len() {
                let beats = (0..row.len())
                    .filter(|&o| {
                        let (a, b) = (row[o].abs(), row[c].abs());
                        let better = if largest { a > b } else { a < b };
                        better || (a == b && o < c)
                    })
                    .count();
                bits.push(beats < k.min(row.len()));
            }
        }
        bits.extend(std::iter::repeat_n(true, layer.fan_out()));
    }
    bits
}

#[test]
fn psn_and_reverse_match_brute_force() {
    for seed in 0..5 {
        let m = model(seed);
        for k in 1..=6 {
            assert_eq!(
                build_psn_mask(&m, k).unwrap().bits(),
                per_row_oracle(&m, k, true).as_slice()
            );
            assert_eq!(
                build_reverse_mask(&m, k).unwrap().bits(),
                per_row_oracle(&m, k, false).as_slice()
            );
        }
    }
}

#[test]
fn reverse_is_the_complement_of_psn() {
    // Layer fan-ins are 6 and 5; pick k so that psn(k) ∪ reverse(fan_in − k)
    // covers every weight of the first layer exactly once.
    let m = model(7);
    let layout = m.layout().clone();
    let first = layout.weights().next().unwrap().clone();
    for k in 1..6 {
        let top = build_psn_mask(&m, k).unwrap();
        let bottom = build_reverse_mask(&m, 6 - k).unwrap();
        for o in first.range() {
            assert!(top.bits()[o] ^ bottom.bits()[o], "offset {o}, k {k}");
        }
    }
}

#[test]
fn global_matches_sorted_oracle() {
    let m = model(3);
    let layout = m.layout().clone();
    let shared = m.shared_params();
    let mut mags: Vec<f64> = layout
        .weights()
        .flat_map(|e| e.range())
        .map(|o| shared.0[o].abs())
        .collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mask = build_global_mask(&m, 0.25).unwrap();
    let take = (0.25 * mags.len() as f64).ceil() as usize;
    let threshold = mags[take - 1];
    for e in layout.weights() {
        for o in e.range() {
            assert_eq!(mask.bits()[o], shared.0[o].abs() >= threshold, "offset {o}");
        }
    }
}

#[test]
fn biases_always_selected_and_counts_match() {
    let m = model(1);
    let layout = m.layout().clone();
    for variant in [
        MaskVariant::Psn,
        MaskVariant::Reverse,
        MaskVariant::Random,
        MaskVariant::Global,
        MaskVariant::Dense,
    ] {
        let mask = build_mask(&m, variant, 2, 0.4, 11).unwrap();
        assert_eq!(
            mask.selected_count(),
            expected_selected(&layout, variant, 2, 0.4),
            "{variant:?}"
        );
        assert_eq!(
            mask.selected_count(),
            mask.bits().iter().filter(|&&b| b).count()
        );
        for e in layout.entries.iter().filter(|e| e.kind == ParamKind::Bias) {
            assert!(mask.bits()[e.range()].iter().all(|&b| b));
        }
    }
}

#[test]
fn random_mask_is_seeded_and_per_layer() {
    let m = model(2);
    let a = build_random_mask(&m, 0.3, 5).unwrap();
    assert_eq!(a, build_random_mask(&m, 0.3, 5).unwrap());
    assert_ne!(a, build_random_mask(&m, 0.3, 6).unwrap());
    for e in m.layout().weights() {
        let kept = a.bits()[e.range()].iter().filter(|&&b| b).count();
        assert_eq!(kept, (0.3 * e.len as f64).ceil() as usize);
    }
}

#[test]
fn apply_mask_zeroes_exactly_the_unselected() {
    let m = model(4);
    let mask = build_psn_mask(&m, 2).unwrap();
    let g = ParamVector((0..mask.len()).map(|i| i as f64 + 1.0).collect());
    let out = apply_mask(&mask, &g).unwrap();
    for (i, (&o, &b)) in out.0.iter().zip(mask.bits()).enumerate() {
        assert_eq!(o, if b { g.0[i] } else { 0.0 });
    }
    assert!(apply_mask(&mask, &ParamVector::<f64>::zeros(3)).is_err());
}

#[test]
fn text_round_trip() {
    let m = model(6);
    for variant in [MaskVariant::Psn, MaskVariant::Random, MaskVariant::Dense] {
        let mask = build_mask(&m, variant, 3, 0.5, 1).unwrap();
        assert_eq!(Mask::from_text(&mask.to_text()).unwrap(), mask);
    }
}

#[test]
fn default_trunk_fraction_maps_to_exact_k() {
    let spec = mtl_sparse_opt::RunConfig::default().benchmark_spec();
    let m = MtlModel::init(
        &spec.student_architecture(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let k = k_for_fraction(m.layout(), 0.3);
    assert_eq!(k, 12);
    let mask = build_psn_mask(&m, k).unwrap();
    assert!((mask.weight_fraction(m.layout()) - 0.3).abs() < 1e-12);
}
