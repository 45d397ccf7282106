use dyson_taylor_core::dyson::OperatorSpec;
use dyson_taylor_core::kernel::{
    approx_kernel, frak_p, hermite_apply, CenterRule, GaussData, KernelEvaluator, ZCache,
};
use dyson_taylor_core::opalg::Exponents;
use dyson_taylor_core::verify::{convergence_order, exact_const_kernel};
use proptest::prelude::*;

fn spd(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim * dim).prop_map(move |m| {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = (0..dim).map(|k| m[i * dim + k] * m[j * dim + k]).sum();
            }
            a[i * dim + i] += 0.3;
        }
        a
    })
}

/// `D^gamma G` by nested central differences, one Richardson step in `h`.
fn numeric_derivative(g: &GaussData, gamma: &[u32], w: &[f64], h: f64) -> f64 {
    fn nested(g: &GaussData, gamma: &mut Vec<u32>, w: &mut Vec<f64>, h: f64) -> f64 {
        match gamma.iter().position(|&k| k > 0) {
            None => g.eval(w),
            Some(i) => {
                gamma[i] -= 1;
                w[i] += h;
                let plus = nested(g, gamma, w, h);
                w[i] -= 2.0 * h;
                let minus = nested(g, gamma, w, h);
                w[i] += h;
                gamma[i] += 1;
                (plus - minus) / (2.0 * h)
            }
        }
    }
    let coarse = nested(g, &mut gamma.to_vec(), &mut w.to_vec(), h);
    let fine = nested(g, &mut gamma.to_vec(), &mut w.to_vec(), h / 2.0);
    (4.0 * fine - coarse) / 3.0
}

fn gamma_up_to(dim: usize, total: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..=total, dim).prop_map(move |mut e| {
        while e.iter().sum::<u32>() > total {
            let i = (0..e.len()).max_by_key(|&i| e[i]).unwrap();
            e[i] -= 1;
        }
        e
    })
}

fn hermite_case() -> impl Strategy<Value = (Vec<f64>, Vec<u32>, Vec<f64>)> {
    (1usize..=2).prop_flat_map(|dim| {
        (
            spd(dim),
            gamma_up_to(dim, 4),
            prop::collection::vec(-2.0f64..2.0, dim),
        )
    })
}

const COEFS: [&str; 4] = ["1 + x1^2/4", "2 + sin(x1)/2", "exp(-x1^2)/4 + 1", "3/2 + x1/5"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hermite_matches_numeric_derivatives((a, gamma, w) in hermite_case()) {
        let dim = w.len();
        let g = GaussData::new(vec![0.0; dim], a).unwrap();
        let h = hermite_apply(&Exponents(gamma.clone()), &g);
        let exact = h.eval(&w) * g.eval(&w);
        let numeric = numeric_derivative(&g, &gamma, &w, 2e-2);
        let scale = g.eval(&vec![0.0; dim]);
        prop_assert!(
            (exact - numeric).abs() <= 1e-5 * (exact.abs() + scale),
            "gamma {:?}: {} vs {}", gamma, exact, numeric
        );
    }

    #[test]
    fn exact_kernel_equals_order_zero_kernel(
        a in spd(2),
        t in 0.01f64..2.0,
        x in prop::collection::vec(0.1f64..3.0, 2),
        y in prop::collection::vec(0.1f64..3.0, 2),
        rule in prop::sample::select(CenterRule::all_builtin().to_vec()),
    ) {
        let text: Vec<String> = a.iter().map(|v| format!("{v:e}")).collect();
        let spec = OperatorSpec::parse(
            2,
            &[vec![&text[0], &text[1]], vec![&text[2], &text[3]]],
            &["0", "0"],
            "0",
            0.01,
        )
        .unwrap()
        .with_positive_orthant(true);
        let approx = approx_kernel(&spec, 0, rule, t, &x, &y).unwrap();
        let exact = exact_const_kernel(&a, &[0.0, 0.0], 0.0, t, &x, &y).unwrap();
        prop_assert!((approx - exact).abs() <= 1e-13 * exact.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_rule_fixes_the_diagonal(x in prop::collection::vec(0.001f64..50.0, 1..=4)) {
        let mut z = vec![0.0; x.len()];
        for rule in CenterRule::all_builtin() {
            rule.apply(&x, &x, &mut z).unwrap();
            prop_assert_eq!(&z, &x, "{}", rule);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn kernel_poly_degree_bounds_1d(a in 0usize..4, b in 0usize..4, z in -2.0f64..2.0) {
        let spec = OperatorSpec::parse(1, &[vec![COEFS[a]]], &[COEFS[b]], "x1^2/3", 0.5).unwrap();
        for ell in 0..=4 {
            let p = frak_p(&spec, ell, &[z]).unwrap();
            prop_assert!(p.degree_xz() <= ell as i64);
            prop_assert!(p.degree_xy() <= 3 * ell as i64);
        }
        let p0 = frak_p(&spec, 0, &[z]).unwrap();
        let terms: Vec<(Vec<u32>, Vec<u32>, f64)> =
            p0.terms().map(|(a, b, c)| (a.clone(), b.clone(), c)).collect();
        prop_assert_eq!(terms, vec![(vec![0], vec![0], 1.0)]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2))]

    #[test]
    fn kernel_poly_degree_bounds_2d(a in 0usize..4, z in prop::collection::vec(-1.0f64..1.0, 2)) {
        let spec = OperatorSpec::parse(
            2,
            &[vec![COEFS[a], "x1*x2/10"], vec!["x1*x2/10", "2 + cos(x1)/2"]],
            &["x2", "sin(x1)"],
            "x1*x2",
            0.25,
        )
        .unwrap();
        for ell in 0..=4 {
            let p = frak_p(&spec, ell, &z).unwrap();
            prop_assert!(p.degree_xz() <= ell as i64);
            prop_assert!(p.degree_xy() <= 3 * ell as i64);
        }
    }
}

#[test]
fn order_two_residual_against_constant_coefficient_kernel() {
    for (a, b, c) in [(1.0, 0.7, -0.4), (2.5, -1.2, 0.3), (0.6, 0.0, 1.1)] {
        let spec = OperatorSpec::parse(
            1,
            &[vec![&a.to_string()]],
            &[&b.to_string()],
            &c.to_string(),
            0.5,
        )
        .unwrap();
        let ev = KernelEvaluator::new(&spec, 2, CenterRule::X).unwrap();
        let mut cache = ZCache::new();
        let ts: Vec<f64> = (4..=10).map(|k| 2f64.powi(-k)).collect();
        let x = -0.4;
        let residuals: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let approx = ev.eval(&mut cache, t, &[x], &[x]).unwrap();
                let exact = exact_const_kernel(&[a], &[b], c, t, &[x], &[x]).unwrap();
                (approx - exact).abs()
            })
            .collect();
        let slope = convergence_order(&residuals, &ts, 0.0).unwrap().slope;
        assert!(slope >= 1.4, "a={a} b={b} c={c}: slope {slope}");
    }
}
