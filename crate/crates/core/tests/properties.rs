use std::sync::Arc;

use proptest::prelude::*;
use vps::config::BuilderKind;
use vps::layer::{base_forward, spectral_clip, LowRankFactors};
use vps::linalg::{Matrix, SeededRng};
use vps::policy::interpolate;
use vps::selector::{build, hybrid_build, input_scores, sc_build, sk_build};
use vps::verify::numeric_loss;
use vps::{GradSignal, LinearLayer, VpsConfig, VpsLayer};

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::random_normal(rows, cols, 1.0, &mut SeededRng::new(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipped_columns_respect_the_threshold(
        d_in in 1usize..20, d_out in 1usize..20, r in 1usize..5, scale in 0.01f64..5.0,
        tau in 0.05f64..2.0, seed in any::<u64>(),
    ) {
        let mut rng = SeededRng::new(seed);
        let f = LowRankFactors {
            a: Matrix::random_normal(d_in, r, scale, &mut rng),
            b: Matrix::random_normal(d_out, r, scale, &mut rng),
        };
        let c = spectral_clip(f.clone(), tau);
        for j in 0..r {
            let before = f.a.col_norm(j) * f.b.col_norm(j);
            let after = c.a.col_norm(j) * c.b.col_norm(j);
            prop_assert!(after <= tau * (1.0 + 1e-12));
            if before <= tau {
                prop_assert_eq!(c.a.col(j), f.a.col(j));
                prop_assert_eq!(c.b.col(j), f.b.col(j));
            }
        }
    }

    #[test]
    fn top_k_inputs_dominate_the_rest(n in 1usize..10, d in 2usize..30, seed in any::<u64>(), kf in 0.0f64..1.0) {
        let x = random(n, d, seed);
        let h = random(n, d, seed ^ 1);
        let k = 1 + ((d - 1) as f64 * kf) as usize;
        let sel = sk_build(&x, &h, k, 1).unwrap();
        let scores = input_scores(&x);
        let chosen = sel.in_indices.as_slice();
        let mut uniq = chosen.to_vec();
        uniq.sort();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), k);
        let floor = chosen.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
        for i in (0..d).filter(|i| !chosen.contains(i)) {
            prop_assert!(scores[i] <= floor);
        }
    }

    #[test]
    fn hybrid_dispatches_on_the_gradient_flag(n in 3usize..12, d in 4usize..16, seed in any::<u64>(), r in 1usize..4) {
        let x = random(n, d, seed);
        let h = random(n, d, seed ^ 7);
        let k = r + 1;
        prop_assert_eq!(hybrid_build(&x, &h, k, r, 1e-3, GradSignal::ABSENT).unwrap(), sk_build(&x, &h, k, r).unwrap());
        let sc = sc_build(&x, &h, k, r, 1e-3).unwrap();
        prop_assert_eq!(&hybrid_build(&x, &h, k, r, 1e-3, GradSignal::present(None)).unwrap(), &sc);
        prop_assert_eq!(build(BuilderKind::Sc, &x, &h, k, r, 1e-3, GradSignal::ABSENT, None).unwrap(), sc);
    }

    #[test]
    fn zero_strength_layer_is_exactly_the_base_map(n in 1usize..8, d_in in 2usize..24, d_out in 2usize..24, seed in any::<u64>()) {
        let base = LinearLayer::new(random(d_out, d_in, seed), None).unwrap();
        let x = random(n, d_in, seed ^ 3);
        let mut layer = VpsLayer::new("p", base.clone(), Arc::new(VpsConfig::disabled()));
        prop_assert_eq!(layer.forward(&x).unwrap(), base_forward(&x, &base).unwrap());
    }

    #[test]
    fn policy_grows_with_sigma(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let bounds = VpsConfig::default().bounds();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = interpolate(lo, &bounds);
        let q = interpolate(hi, &bounds);
        prop_assert!(p.r <= q.r && p.k <= q.k && p.gamma <= q.gamma);
        prop_assert!(p.r <= p.k);
    }

    #[test]
    fn numeric_loss_is_a_symmetric_square(a in -1e6f64..1e6, b in -1e6f64..1e6) {
        let (sa, sb) = (format!("{a}"), format!("{b}"));
        let l = numeric_loss(&sa, &sb);
        prop_assert_eq!(l, numeric_loss(&sb, &sa));
        prop_assert!((l - (a - b).powi(2)).abs() <= 1e-9 * (1.0 + l));
    }
}
