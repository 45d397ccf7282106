use dyson_taylor_core::dyson::{
    assemble_p_alpha, assemble_p_ell, enumerate_indices, simplex_integrate, MultiIndex,
    OperatorSpec, SigmaPoly,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

type Q = BigRational;

/// Iterated integral over `1 >= s_1 >= ... >= s_k >= 0`, innermost first.
fn moment_oracle(e: &[u32]) -> Q {
    let mut v = Q::from_integer(BigInt::from(1));
    for j in 0..e.len() {
        let ej: u32 = e[j..].iter().map(|x| x + 1).sum();
        v /= Q::from_integer(BigInt::from(ej));
    }
    v
}

const COEFS: [&str; 6] = ["1 + x1^2/4", "2 + sin(x1)/2", "exp(-x1^2)/4 + 1", "3/2", "x1/3", "cos(x1)"];

fn spec_1d() -> impl Strategy<Value = OperatorSpec> {
    (0usize..3, 3usize..6, 3usize..6).prop_map(|(a, b, c)| {
        OperatorSpec::parse(1, &[vec![COEFS[a]]], &[COEFS[b]], COEFS[c], 0.25).unwrap()
    })
}

fn spec_2d() -> impl Strategy<Value = OperatorSpec> {
    (0usize..3, 0usize..3, 3usize..6).prop_map(|(a, d, b)| {
        OperatorSpec::parse(
            2,
            &[vec![COEFS[a], "x1*x2/10"], vec!["x1*x2/10", COEFS[d]]],
            &[COEFS[b], "x2"],
            "x1*x2",
            0.25,
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simplex_integral_matches_iterated_oracle(e in prop::collection::vec(0u32..=4, 1..=5)) {
        let k = e.len();
        let p = SigmaPoly::monomial(e.clone(), Q::from_integer(BigInt::from(1)));
        prop_assert_eq!(simplex_integrate(&p, k), moment_oracle(&e));
    }

    #[test]
    fn p_alpha_degree_and_order_bounds_1d(spec in spec_1d(), ell in 1u32..=4, pick in any::<prop::sample::Index>()) {
        let set = enumerate_indices(ell);
        let alpha = &set[pick.index(set.len())];
        let (deg, ord) = assemble_p_alpha(&spec, alpha).unwrap().degree_order();
        let k = alpha.k() as i64;
        prop_assert!(deg <= ell as i64 && ord <= 2 * k + ell as i64, "{alpha}: ({deg}, {ord})");
    }

    #[test]
    fn constant_diffusion_has_no_corrections(
        a in 1i64..=5,
        off in -1i64..=1,
        d in 1i64..=5,
        ell in 1usize..=3,
    ) {
        let (a, off, d) = (a.to_string(), off.to_string(), d.to_string());
        let spec = OperatorSpec::parse(2, &[vec![&a, &off], vec![&off, &d]], &["0", "0"], "0", 0.5).unwrap();
        prop_assert!(assemble_p_ell(&spec, ell).unwrap().is_zero());
        let one_d = OperatorSpec::parse(1, &[vec![&a]], &["0"], "0", 0.5).unwrap();
        prop_assert!(assemble_p_ell(&one_d, ell).unwrap().is_zero());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn p_alpha_degree_and_order_bounds_2d(spec in spec_2d(), ell in 1u32..=4, pick in any::<prop::sample::Index>()) {
        let set = enumerate_indices(ell);
        let alpha = &set[pick.index(set.len())];
        let (deg, ord) = assemble_p_alpha(&spec, alpha).unwrap().degree_order();
        let k = alpha.k() as i64;
        prop_assert!(deg <= ell as i64 && ord <= 2 * k + ell as i64, "{alpha}: ({deg}, {ord})");
    }
}

#[test]
fn every_index_has_its_level() {
    for ell in 1..=8 {
        for alpha in enumerate_indices(ell) {
            assert!(alpha.is_valid());
            assert_eq!(alpha.ell(), ell);
            assert!(alpha.k() as u32 <= ell);
        }
    }
    assert_eq!(
        enumerate_indices(3),
        vec![
            MultiIndex(vec![3]),
            MultiIndex(vec![1, 2]),
            MultiIndex(vec![2, 1]),
            MultiIndex(vec![1, 1, 1])
        ]
    );
}
