use biwhiten::biwhiten::{numerical_rank, rank_threshold, singular_values};
use biwhiten::io::Histogram;
use biwhiten::scaling::{decompose_blocks, diagnose, sinkhorn_scale, sinkhorn_scale_from, SinkhornOptions};
use biwhiten::simulate::homogenize;
use biwhiten::{
    estimate_rank, ks_distance, ks_pvalue, select_alpha, AlphaBeta, DenseMatrix, Esd, MpLaw, QvfParams,
};
use proptest::prelude::*;

fn gamma() -> impl Strategy<Value = f64> {
    0.05f64..=1.0
}

fn positive_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DenseMatrix> {
    (2..=max_rows, 2..=max_cols).prop_flat_map(|(m, n)| {
        prop::collection::vec(-3.0f64..3.0, m * n)
            .prop_map(move |v| DenseMatrix::from_iterator(m, n, v.into_iter().map(f64::exp)))
    })
}

fn quantile_esd(law: &MpLaw, m: usize, n: usize) -> Esd {
    let eig = (1..=m)
        .map(|k| {
            let p = (k as f64 - 0.5) / m as f64;
            let (mut a, mut b) = law.edges();
            for _ in 0..100 {
                let mid = 0.5 * (a + b);
                if law.cdf(mid) < p {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect();
    Esd::new(eig, m, n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mp_cdf_is_monotone_and_normalized(g in gamma(), sigma in 0.2f64..3.0) {
        let law = MpLaw::new(g, sigma).unwrap();
        let (lo, hi) = law.edges();
        let mut prev = 0.0;
        for k in 0..=1000 {
            let tau = lo - 1.0 + (hi - lo + 2.0) * k as f64 / 1000.0;
            let f = law.cdf(tau);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!(f >= prev);
            prev = f;
        }
        prop_assert!((law.cdf(hi) - 1.0).abs() <= 1e-8);
        prop_assert!(law.pdf(lo - 0.1) == 0.0 && law.pdf(hi + 0.1) == 0.0);
    }

    #[test]
    fn mp_cdf_is_scale_equivariant(g in gamma(), sigma in 0.2f64..3.0, u in 0.0f64..1.0) {
        let law = MpLaw::new(g, sigma).unwrap();
        let unit = MpLaw::new(g, 1.0).unwrap();
        let (lo, hi) = law.edges();
        let tau = lo + u * (hi - lo);
        prop_assert!((law.cdf(tau) - unit.cdf(tau / (sigma * sigma))).abs() <= 1e-10);
    }

    #[test]
    fn median_splits_the_mass(g in gamma()) {
        let law = MpLaw::new(g, 1.0).unwrap();
        prop_assert!((law.cdf(law.median()) - 0.5).abs() <= 1e-9);
    }

    #[test]
    fn quantile_placed_spectrum_is_close(g in 0.1f64..=1.0, m in 10usize..80) {
        let n = ((m as f64) / g).ceil() as usize;
        let law = MpLaw::standard(m, n).unwrap();
        let esd = quantile_esd(&law, m, n);
        prop_assert!(ks_distance(&esd, &law).unwrap() <= 0.5 / m as f64 + 1e-8);
    }

    #[test]
    fn ks_pvalue_is_nonincreasing(m in 1usize..5000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (p_lo, p_hi) = (ks_pvalue(lo, m), ks_pvalue(hi, m));
        prop_assert!((0.0..=1.0).contains(&p_lo) && (0.0..=1.0).contains(&p_hi));
        prop_assert!(p_hi <= p_lo);
    }

    #[test]
    fn sinkhorn_meets_targets_and_gauge(a in positive_matrix(12, 20), seed in any::<u64>()) {
        let (m, n) = a.shape();
        let opts = SinkhornOptions::default();
        let (r, c) = (vec![n as f64; m], vec![m as f64; n]);
        let f = sinkhorn_scale(&a, &r, &c, &opts).unwrap();
        let s = f.apply(&a);
        for i in 0..m {
            prop_assert!((s.row(i).sum() - n as f64).abs() <= opts.tol);
        }
        for j in 0..n {
            prop_assert!((s.column(j).sum() - m as f64).abs() <= opts.tol);
        }
        let mx = f.x.iter().sum::<f64>() / m as f64;
        let my = f.y.iter().sum::<f64>() / n as f64;
        prop_assert!((mx - my).abs() <= 1e-12 * mx.max(my));

        let x0: Vec<f64> = (0..m).map(|i| 1.0 + ((seed >> (i % 60)) & 0xff) as f64).collect();
        let g = sinkhorn_scale_from(&a, &r, &c, &x0, &opts).unwrap();
        for i in 0..m {
            for j in 0..n {
                let (p, q) = (f.x[i] * f.y[j], g.x[i] * g.y[j]);
                prop_assert!((p - q).abs() <= 1e-8 * p);
            }
        }
    }

    #[test]
    fn positive_scaling_preserves_numerical_rank(
        r in 1usize..5,
        left in prop::collection::vec(0.1f64..2.0, 15 * 5),
        right in prop::collection::vec(0.1f64..2.0, 5 * 25),
        du in prop::collection::vec(-2.0f64..2.0, 15),
        dv in prop::collection::vec(-2.0f64..2.0, 25),
    ) {
        let u = DenseMatrix::from_fn(15, r, |i, k| left[i * 5 + k]);
        let v = DenseMatrix::from_fn(r, 25, |k, j| right[k * 25 + j]);
        let x = &u * &v;
        let scaled = DenseMatrix::from_fn(15, 25, |i, j| du[i].exp() * x[(i, j)] * dv[j].exp());
        let base = numerical_rank(&x, 1e-9).unwrap();
        prop_assert_eq!(base, r);
        prop_assert_eq!(numerical_rank(&scaled, 1e-9).unwrap(), base);
    }

    #[test]
    fn eigen_and_singular_thresholds_agree(a in positive_matrix(15, 30)) {
        let (rows, cols) = a.shape();
        let (m, n) = (rows.min(cols), rows.max(cols));
        let s = singular_values(&a).unwrap();
        // random spectrum around the edge after centering
        let mid = s[s.len() / 2];
        let shifted: Vec<f64> = s.iter().map(|v| v / mid * (n as f64).sqrt() * 1.2).collect();
        let eig: Vec<f64> = shifted.iter().map(|v| v * v / n as f64).collect();
        let esd = Esd::new(eig, m, n).unwrap();
        let by_eig = estimate_rank(&esd, 0.0);
        let edge = (n as f64).sqrt() + (m as f64).sqrt();
        let by_sv = shifted.iter().filter(|&&v| v > edge).count();
        prop_assert_eq!(by_eig, by_sv);
        prop_assert!((rank_threshold(&esd, 0.0) * n as f64 - edge * edge).abs() <= 1e-9 * edge * edge);
    }

    #[test]
    fn singular_values_ignore_orientation(a in positive_matrix(10, 25)) {
        let s = singular_values(&a).unwrap();
        let t = singular_values(&a.transpose()).unwrap();
        prop_assert_eq!(s.len(), t.len());
        for (p, q) in s.iter().zip(&t) {
            prop_assert!((p - q).abs() <= 1e-10 * s[0]);
        }
    }

    #[test]
    fn alpha_is_homogeneous(eig in prop::collection::vec(0.01f64..5.0, 1..60), s in 0.01f64..100.0) {
        let m = eig.len();
        let esd = Esd::new(eig, m, 2 * m).unwrap();
        let a = select_alpha(&esd).unwrap();
        let b = select_alpha(&esd.scaled(s)).unwrap();
        prop_assert!((b - s * a).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn alphabeta_round_trips(alpha in 0.05f64..0.95, beta in 0.0f64..=1.0, y in 0.0f64..200.0) {
        let ab = AlphaBeta::new(alpha, beta).unwrap();
        let q = ab.to_qvf().unwrap();
        let back = q.to_alphabeta().unwrap();
        prop_assert!((back.alpha - alpha).abs() <= 1e-12);
        prop_assert!((back.beta - beta).abs() <= 1e-12);
        let direct = ab.estimate(y);
        let via = q.unbiased_estimate(y).unwrap();
        prop_assert!((direct - via).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn estimators_are_nonnegative(b in 0.0f64..5.0, c in 0.0f64..5.0, y in 0.0f64..1e4) {
        let q = QvfParams::new(0.0, b, c);
        prop_assert!(q.unbiased_estimate(y).unwrap() >= 0.0);
    }

    #[test]
    fn homogenize_preserves_class_multisets(
        m in 1usize..6,
        labels in prop::collection::vec(0usize..3, 2..20),
        seed in any::<u64>(),
    ) {
        let n = labels.len();
        let y = DenseMatrix::from_fn(m, n, |i, j| ((i * 31 + j * 17) % 11) as f64);
        let h = homogenize(&y, &labels, seed).unwrap();
        for class in 0..3 {
            let cols: Vec<usize> = (0..n).filter(|&j| labels[j] == class).collect();
            for i in 0..m {
                let mut before: Vec<f64> = cols.iter().map(|&j| y[(i, j)]).collect();
                let mut after: Vec<f64> = cols.iter().map(|&j| h[(i, j)]).collect();
                before.sort_by(f64::total_cmp);
                after.sort_by(f64::total_cmp);
                prop_assert_eq!(before, after);
            }
        }
    }

    #[test]
    fn positive_matrices_are_clean(a in positive_matrix(10, 10)) {
        let d = diagnose(&a);
        prop_assert!(d.is_clean());
        prop_assert_eq!(decompose_blocks(&a).unwrap().len(), 1);
    }

    #[test]
    fn histogram_accounts_for_every_value(values in prop::collection::vec(-1.0f64..6.0, 0..300)) {
        let h = Histogram::new(&values, 0.0, 4.0, 50);
        prop_assert_eq!(h.total(), values.len());
    }
}
