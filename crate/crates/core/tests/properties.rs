mod common;

use nalgebra::{DMatrix, DVector};
use polyland::dynamics::{Objective, TensorObjective};
use polyland::network::tau;
use polyland::quadlandscape::QuadMetric;
use polyland::{NetworkParams, SymTensor};
use proptest::prelude::*;

fn sym(vals: &[f64], n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_row_slice(n, n, &vals[..n * n]);
    (&a + a.transpose()) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn network_matches_its_tensor(
        n in 1usize..4,
        d in 1usize..5,
        r in 1usize..4,
        vals in prop::collection::vec(-1.0f64..1.0, 20),
    ) {
        let alpha = DVector::from_column_slice(&vals[..r]);
        let w = DMatrix::from_row_slice(r, n, &vals[4..4 + r * n]);
        let p = NetworkParams::new(alpha, w, d).unwrap();
        let x = &vals[16..16 + n];
        let direct = p.evaluate(x);
        let via_tensor = tau(&p).evaluate(x).unwrap();
        prop_assert!((direct - via_tensor).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn standard_iid_norm_is_the_gaussian_moment_norm(
        n in 1usize..5,
        vals in prop::collection::vec(-2.0f64..2.0, 32),
    ) {
        let s = sym(&vals[..16], n);
        let t = sym(&vals[16..], n);
        let moment = common::gaussian_metric(n, 2);
        let ms = SymTensor::from_matrix(&s).unwrap();
        let mt = SymTensor::from_matrix(&t).unwrap();
        let expected = moment.inner(&ms, &mt).unwrap();
        let iid = QuadMetric::Iid { mu2: 1.0, mu4: 3.0 }.inner(&s, &t);
        let gauss = QuadMetric::Gaussian.inner(&s, &t);
        prop_assert!((iid - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
        prop_assert!((2.0 * gauss - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
    }

    #[test]
    fn tensor_gradient_matches_finite_differences(
        d in 2usize..5,
        seed in 0u64..1000,
    ) {
        let (n, r) = (2, 3);
        let mut rng = common::rng(seed);
        let metric = common::gaussian_metric(n, d);
        let obj = TensorObjective::new(metric, common::random_tensor(n, d, &mut rng)).unwrap();
        let flat: Vec<f64> = (0..r * (n + 1)).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let p = NetworkParams::from_flat(&flat, r, n, d).unwrap();
        let (_, ga, gw) = obj.gradient(&p).unwrap();
        let mut analytic: Vec<f64> = ga.iter().copied().collect();
        for i in 0..r {
            analytic.extend(gw.row(i).iter());
        }
        let h = 1e-6;
        for k in 0..flat.len() {
            let mut up = flat.clone();
            up[k] += h;
            let mut dn = flat.clone();
            dn[k] -= h;
            let lu = obj.loss(&NetworkParams::from_flat(&up, r, n, d).unwrap()).unwrap();
            let ld = obj.loss(&NetworkParams::from_flat(&dn, r, n, d).unwrap()).unwrap();
            let fd = (lu - ld) / (2.0 * h);
            prop_assert!((fd - analytic[k]).abs() <= 1e-5 * (1.0 + analytic[k].abs()), "coordinate {k}: {fd} vs {}", analytic[k]);
        }
    }
}
