use proptest::prelude::*;

use mtl_sparse_opt::combiners::{
    combine, combine_average, combine_cagrad, combine_mgda, pcgrad_project, project_to_simplex,
    CombinerParams, MethodKind,
};
use mtl_sparse_opt::metrics::detect_conflict;
use mtl_sparse_opt::scalar::dot;
use mtl_sparse_opt::{TaskGradientSet, TaskGradientSetF32};

const METHODS: [MethodKind; 7] = [
    MethodKind::Joint,
    MethodKind::PcGrad,
    MethodKind::CaGrad,
    MethodKind::GradDrop,
    MethodKind::Mgda,
    MethodKind::ImtlG,
    MethodKind::NashMtl,
];

fn rows(
    t: std::ops::Range<usize>,
    p: std::ops::Range<usize>,
) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (t, p)
        .prop_flat_map(|(t, p)| prop::collection::vec(prop::collection::vec(-10.0..10.0f64, p), t))
}

proptest! {
    #[test]
    fn conflict_is_symmetric(a in prop::collection::vec(-5.0..5.0f64, 6), b in prop::collection::vec(-5.0..5.0f64, 6)) {
        let ab = detect_conflict(&a, &b).unwrap();
        let ba = detect_conflict(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=1.0).contains(&ab.0));
    }

    #[test]
    fn conflict_is_scale_free(
        a in prop::collection::vec(-5.0..5.0f64, 6),
        b in prop::collection::vec(-5.0..5.0f64, 6),
        s in 1e-3..1e3f64,
        t in 1e-3..1e3f64,
    ) {
        let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
        let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
        // Skip near-orthogonal pairs where rounding may flip the sign.
        let c = detect_conflict(&a, &b).unwrap().0;
        prop_assume!(c.abs() > 1e-9);
        prop_assert_eq!(detect_conflict(&sa, &tb).unwrap().1, detect_conflict(&a, &b).unwrap().1);
    }

    #[test]
    fn average_is_linear(g in rows(2..5, 1..8), s in -4.0..4.0f64) {
        let set = TaskGradientSet::from_rows(g.clone()).unwrap();
        let scaled = TaskGradientSet::from_rows(g.iter().map(|r| r.iter().map(|x| x * s).collect()).collect()).unwrap();
        let a = combine_average(&set).direction.0;
        let b = combine_average(&scaled).direction.0;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x * s - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn every_combiner_is_finite(g in rows(2..5, 1..8), seed in any::<u64>()) {
        let set = TaskGradientSet::from_rows(g).unwrap();
        let params = CombinerParams::default();
        for m in METHODS {
            let r = combine(m, &params, &set, seed).unwrap();
            prop_assert_eq!(r.direction.len(), set.dim());
            prop_assert!(r.direction.is_finite(), "{m} produced a non-finite direction");
        }
    }

    #[test]
    fn mgda_beats_every_vertex(g in rows(2..5, 2..8)) {
        let set = TaskGradientSet::from_rows(g.clone()).unwrap();
        let r = combine_mgda(&set, 200).unwrap();
        let d = &r.direction.0;
        let n = dot(d, d);
        for row in &g {
            prop_assert!(n <= dot(row, row) * (1.0 + 1e-9) + 1e-12);
        }
        let w = r.task_weights.unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn pcgrad_pair_post_condition(g in rows(2..3, 2..8), seed in any::<u64>()) {
        let set = TaskGradientSet::from_rows(g.clone()).unwrap();
        let (proj, _) = pcgrad_project(&set, seed);
        for (i, j) in [(0, 1), (1, 0)] {
            let bound = 1e-12 * dot(&proj[i], &proj[i]).sqrt() * dot(&g[j], &g[j]).sqrt();
            prop_assert!(dot(&proj[i], &g[j]) >= -bound);
        }
    }

    #[test]
    fn simplex_projection_is_feasible(v in prop::collection::vec(-20.0..20.0f64, 1..7)) {
        let w = project_to_simplex(&v);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn cagrad_on_identical_rows(v in prop::collection::vec(-5.0..5.0f64, 1..6), t in 2usize..5) {
        prop_assume!(dot(&v, &v) > 1e-6);
        let set = TaskGradientSet::from_rows(vec![v.clone(); t]).unwrap();
        let d = combine_cagrad(&set, 0.4, 50).unwrap().direction.0;
        for (x, y) in d.iter().zip(&v) {
            prop_assert!((x - 1.4 * y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn mgda_hand_examples() {
    let set = TaskGradientSet::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let r = combine_mgda(&set, 100).unwrap();
    assert_eq!(r.direction.0, vec![0.5, 0.5]);
    let set = TaskGradientSet::from_rows(vec![vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let r = combine_mgda(&set, 100).unwrap();
    assert_eq!(r.task_weights.unwrap(), vec![0.0, 1.0]);
    assert_eq!(r.direction.0, vec![1.0, 0.0]);
    let set = TaskGradientSet::from_rows(vec![vec![1.0, -2.0], vec![-1.0, 2.0]]).unwrap();
    assert!(combine_mgda(&set, 100)
        .unwrap()
        .direction
        .0
        .iter()
        .all(|&x| x == 0.0));
}

#[test]
fn combiners_work_in_f32() {
    let set = TaskGradientSetF32::from_rows(vec![
        vec![1.0, 0.5, -0.25],
        vec![-0.5, 1.0, 0.75],
        vec![0.2, -0.1, 1.0],
    ])
    .unwrap();
    for m in METHODS {
        let r = combine(m, &CombinerParams::default(), &set, 9).unwrap();
        assert!(r.direction.is_finite(), "{m}");
    }
}
