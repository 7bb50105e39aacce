use comprint_core::localization::{
    build_feature_field, em_fit, heatmap_from_responsibilities, localize, quantize_residual, reduce_dimension,
    LocalizationParams, ResidualQuantizer,
};
use comprint_core::metrics::{max_mcc, ThresholdMode};
use comprint_core::net::Comprint;
use comprint_core::seed;
use ndarray::Array2;
use rand_distr::{Distribution, Normal};

/// White noise on the left half, column-pair duplicated noise on the right.
fn two_texture_comprint(size: usize, seed_value: u64) -> (Comprint, Array2<u8>) {
    let mut rng = seed::rng(seed_value);
    let n = Normal::new(0.0f32, 1.0).unwrap();
    let white = Array2::from_shape_fn((size, size), |_| n.sample(&mut rng));
    let values = Array2::from_shape_fn((size, size), |(y, x)| {
        if x < size / 2 {
            white[(y, x)]
        } else {
            white[(y, x & !1)]
        }
    });
    let mask = Array2::from_shape_fn((size, size), |(_, x)| u8::from(x >= size / 2));
    (Comprint::new(values, "toy", "synthetic").unwrap(), mask)
}

fn params() -> LocalizationParams {
    let mut p = LocalizationParams {
        window: 32,
        stride: 8,
        dim: 10,
        ..LocalizationParams::default()
    };
    p.em.restarts = 4;
    p
}

#[test]
fn two_textures_are_separated() {
    for s in 0..3 {
        let (c, mask) = two_texture_comprint(192, s);
        let (heatmap, record) = localize(&c, &params()).unwrap();
        assert_eq!(heatmap.values.dim(), (192, 192));
        assert_eq!(record.feature_dim, 25);
        assert_eq!((record.grid.rows, record.grid.cols), (21, 21));
        let curve = max_mcc(&heatmap.values, &mask, ThresholdMode::Exhaustive).unwrap();
        assert!(curve.best_mcc > 0.8, "seed {s}: best MCC {}", curve.best_mcc);
    }
}

#[test]
fn label_swap_leaves_the_score_unchanged() {
    let (c, mask) = two_texture_comprint(128, 7);
    let p = params();
    let q = ResidualQuantizer::adaptive(&c.values, p.truncation, p.step_scale).unwrap();
    let field = build_feature_field(&quantize_residual(&c.values, &q).unwrap(), p.truncation, p.window, p.stride, p.order)
        .unwrap();
    let reduced = reduce_dimension(&field, p.dim).unwrap();
    let state = em_fit(&reduced.vectors, reduced.degenerate, &p.em).unwrap();
    let a = heatmap_from_responsibilities(&state, &reduced.vectors, &reduced.geometry, "toy", "m").unwrap();
    let b = heatmap_from_responsibilities(&state.swapped(), &reduced.vectors, &reduced.geometry, "toy", "m").unwrap();
    assert_eq!(b.values, a.negated().values);
    let ma = max_mcc(&a.values, &mask, ThresholdMode::Exhaustive).unwrap();
    let mb = max_mcc(&b.values, &mask, ThresholdMode::Exhaustive).unwrap();
    assert_eq!(ma.best_mcc, mb.best_mcc);
    assert_ne!(ma.polarity, mb.polarity);
}

#[test]
fn localize_is_deterministic() {
    let (c, _) = two_texture_comprint(128, 3);
    let (a, ra) = localize(&c, &params()).unwrap();
    let (b, rb) = localize(&c, &params()).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn flat_comprint_gives_a_flat_heatmap() {
    let c = Comprint::new(Array2::zeros((96, 96)), "flat", "m").unwrap();
    let (heatmap, record) = localize(&c, &params()).unwrap();
    assert!(record.state.degenerate);
    assert!(heatmap.values.iter().all(|&v| v == 0.0));
}
