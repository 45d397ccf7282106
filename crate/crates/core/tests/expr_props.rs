use dyson_taylor_core::expr::{parse, Expr};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

const DIM: usize = 2;

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0..DIM).prop_map(Expr::var),
        (-5i64..=5).prop_map(Expr::integer),
        (-7i64..=7, 1i64..=6)
            .prop_map(|(p, q)| Expr::rational(BigRational::new(BigInt::from(p), BigInt::from(q)))),
        (-2.0f64..2.0).prop_map(Expr::real),
    ]
}

/// Smooth on all of `R^2`; growth is kept moderate so derivatives stay O(1e3).
fn smooth_expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(3, 16, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..=3).prop_map(Expr::sum),
            prop::collection::vec(inner.clone(), 2..=3).prop_map(Expr::product),
            (inner.clone(), 0i32..=3).prop_map(|(e, n)| Expr::pow(e, n)),
            inner.clone().prop_map(Expr::neg),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner
                .clone()
                .prop_map(|e| Expr::exp(Expr::sin(e))),
            inner.clone().prop_map(|e| Expr::log(Expr::sum(vec![
                Expr::one(),
                Expr::pow(e, 2)
            ]))),
            inner.prop_map(|e| Expr::pow(
                Expr::sum(vec![Expr::integer(2), Expr::pow(e, 2)]),
                -1
            )),
        ]
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, DIM)
}

fn central_difference(e: &Expr, i: usize, p: &[f64], h: f64) -> f64 {
    let mut plus = p.to_vec();
    let mut minus = p.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (e.eval(&plus).unwrap() - e.eval(&minus).unwrap()) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn derivative_matches_central_difference(e in smooth_expr(), i in 0..DIM, p in point()) {
        let d = e.diff(i).eval(&p).unwrap();
        let fd = central_difference(&e, i, &p, 1e-5);
        let scale = 1.0 + d.abs() + e.eval(&p).unwrap().abs();
        prop_assert!((d - fd).abs() <= 1e-6 * scale, "{e}: exact {d}, fd {fd}");
    }

    #[test]
    fn partial_derivatives_commute(e in smooth_expr(), p in point()) {
        let ij = e.diff(0).diff(1).eval(&p).unwrap();
        let ji = e.diff(1).diff(0).eval(&p).unwrap();
        prop_assert!((ij - ji).abs() <= 1e-9 * (1.0 + ij.abs()), "{e}: {ij} vs {ji}");
    }

    #[test]
    fn print_then_parse_is_identity(e in smooth_expr()) {
        let printed = e.to_string();
        let back = parse(&printed, DIM).unwrap();
        prop_assert_eq!(back, e, "{}", printed);
    }

    #[test]
    fn compiled_agrees_with_tree(e in smooth_expr(), p in point()) {
        let tree = e.eval(&p).unwrap();
        let fast = e.compile().eval(&p).unwrap();
        prop_assert!((tree - fast).abs() <= 1e-12 * (1.0 + tree.abs()));
    }
}
