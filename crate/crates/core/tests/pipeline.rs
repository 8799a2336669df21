//! Seeded end-to-end checks on simulated data.

use biwhiten::biwhiten::{biwhiten, rank, spectrum, BiwhitenOptions};
use biwhiten::simulate::{gen_signal, sample_counts, NoiseFamily, SignalSpec};
use biwhiten::{
    default_beta_grid, ks_distance, select_beta, split_validate, AdaptOptions, AlphaBeta, DenseMatrix, MpLaw,
    NoiseModel, SplitAxis, SplitModel,
};

fn poisson_counts(spec: &SignalSpec, seed: u64) -> DenseMatrix {
    let x = gen_signal(spec, seed).unwrap();
    sample_counts(&x, NoiseFamily::Poisson, seed).unwrap()
}

#[test]
fn low_rank_bulk_sits_inside_the_edges() {
    let y = poisson_counts(&SignalSpec::lognormal_uniform(300, 1000, 10), 7);
    let report = rank(&y, &NoiseModel::poisson(), &BiwhitenOptions::default()).unwrap();
    assert_eq!(report.rank, 10);
    let block = report.largest_block().unwrap();
    let (lo, hi) = MpLaw::standard(block.esd.m(), block.esd.n()).unwrap().edges();
    let eig = block.esd.eigenvalues();
    assert_eq!(eig.iter().filter(|&&v| v > hi).count(), 10);
    let inside = eig[10..].iter().filter(|&&v| v >= 0.9 * lo && v <= hi).count();
    assert!(inside as f64 >= 0.99 * (eig.len() - 10) as f64);
}

#[test]
fn transposed_input_gives_the_same_rank() {
    let y = poisson_counts(&SignalSpec::lognormal_uniform(120, 300, 4), 3);
    let opts = BiwhitenOptions::default();
    let a = rank(&y, &NoiseModel::poisson(), &opts).unwrap();
    let b = rank(&y.transpose(), &NoiseModel::poisson(), &opts).unwrap();
    assert_eq!(a.rank, b.rank);
    let (ea, eb) = (a.blocks[0].esd.eigenvalues(), b.blocks[0].esd.eigenvalues());
    for (p, q) in ea.iter().zip(eb) {
        assert!((p - q).abs() <= 1e-9 * ea[0]);
    }
}

#[test]
fn ks_ignores_the_scaling_gauge() {
    let y = poisson_counts(&SignalSpec::full_rank(150, 300), 2);
    let model = NoiseModel::alphabeta(AlphaBeta::new(1.0, 0.3).unwrap());
    let bw = biwhiten(&y, &model, &BiwhitenOptions::default()).unwrap();
    let block = bw.largest_block().unwrap();
    let base = spectrum(&block.y_hat).unwrap();
    let law = MpLaw::standard(base.m(), base.n()).unwrap();
    let mut factors = block.factors.clone();
    factors.x.iter_mut().for_each(|v| *v *= 7.3);
    factors.y.iter_mut().for_each(|v| *v /= 7.3);
    let (u, w) = (factors.row_factors(), factors.col_factors());
    let moved = DenseMatrix::from_fn(block.rows.len(), block.cols.len(), |i, j| {
        u[i] * y[(block.rows[i], block.cols[j])] * w[j]
    });
    let other = spectrum(&moved).unwrap();
    let (a, b) = (ks_distance(&base, &law).unwrap(), ks_distance(&other, &law).unwrap());
    assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
}

#[test]
fn selection_prefers_small_beta_for_poisson_data() {
    for seed in 1..=10 {
        let y = poisson_counts(&SignalSpec::full_rank(500, 1000), seed);
        let report = select_beta(&y, &default_beta_grid(), &AdaptOptions::default()).unwrap();
        assert!(report.selected.beta <= 0.1, "seed {seed}: β = {}", report.selected.beta);
    }
}

#[test]
fn alpha_is_near_one_for_poisson_low_rank_data() {
    let y = poisson_counts(&SignalSpec::lognormal_uniform(1000, 2000, 10), 1);
    let report = select_beta(&y, &[0.0], &AdaptOptions::default()).unwrap();
    let alpha = report.selected.alpha;
    assert!((0.95..=1.05).contains(&alpha), "α = {alpha}");
}

#[test]
fn correct_model_beats_forced_quadratic_variance() {
    let y = poisson_counts(&SignalSpec::mild_heteroskedastic(300, 600, 5, 2.0), 4);
    let opts = AdaptOptions::default();
    let adaptive = select_beta(&y, &default_beta_grid(), &opts).unwrap();
    let forced = select_beta(&y, &[1.0], &opts).unwrap();
    assert!(adaptive.min_ks <= forced.min_ks);
}

#[test]
fn split_validation_accepts_the_poisson_model() {
    let y = poisson_counts(&SignalSpec::lognormal_uniform(1000, 2000, 10), 1);
    let model = SplitModel::Fixed {
        model: NoiseModel::poisson(),
        match_alpha: false,
    };
    let v = split_validate(&y, &model, 2, SplitAxis::Columns, 1, &AdaptOptions::default()).unwrap();
    assert_eq!(v.trials, 2);
    assert!(v.mean_ks < 0.03, "mean KS {}", v.mean_ks);
    assert!(v.mean_pvalue > 0.01, "mean p {}", v.mean_pvalue);
}

#[test]
fn adaptive_selection_is_deterministic() {
    let y = poisson_counts(&SignalSpec::mild_heteroskedastic(80, 160, 3, 3.0), 9);
    let opts = AdaptOptions::default();
    let a = select_beta(&y, &default_beta_grid(), &opts).unwrap();
    let b = select_beta(&y, &default_beta_grid(), &opts).unwrap();
    assert_eq!(a, b);
}
