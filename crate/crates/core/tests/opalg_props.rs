use std::collections::BTreeMap;

use dyson_taylor_core::dyson::{taylor_term, OperatorSpec};
use dyson_taylor_core::opalg::{ad_power, Atom, DiffOp, Exponents, SymbolicOp};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;

type Q = BigRational;
type Poly = BTreeMap<Vec<u32>, Q>;

fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Multi-index with total degree at most `total`.
fn multi(dim: usize, total: u32) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0..=total, dim).prop_map(move |mut e| {
        while e.iter().sum::<u32>() > total {
            let i = (0..e.len()).max_by_key(|&i| e[i]).unwrap();
            e[i] -= 1;
        }
        e
    })
}

fn op(dim: usize, max_deg: u32, max_ord: u32, terms: usize) -> impl Strategy<Value = DiffOp<Q>> {
    prop::collection::vec(
        (multi(dim, max_deg), multi(dim, max_ord), -6i64..=6, 1i64..=4),
        1..=terms,
    )
    .prop_map(move |ts| {
        DiffOp::from_terms(
            dim,
            ts.into_iter()
                .map(|(b, g, n, d)| (Exponents(b), Exponents(g), q(n, d))),
        )
    })
}

fn triple() -> impl Strategy<Value = (DiffOp<Q>, DiffOp<Q>, DiffOp<Q>)> {
    (1usize..=2).prop_flat_map(|dim| (op(dim, 2, 2, 4), op(dim, 2, 2, 4), op(dim, 2, 2, 4)))
}

/// `c w^beta D^gamma` applied to a polynomial in `w`.
fn apply(op: &DiffOp<Q>, p: &Poly) -> Poly {
    let mut out = Poly::new();
    for (beta, gamma, c) in op.terms() {
        for (delta, d) in p {
            let mut coef = c * d;
            let mut e = Vec::with_capacity(delta.len());
            let mut vanishes = false;
            for i in 0..delta.len() {
                if gamma.0[i] > delta[i] {
                    vanishes = true;
                    break;
                }
                for r in 0..gamma.0[i] {
                    coef *= Q::from_integer(BigInt::from(delta[i] - r));
                }
                e.push(delta[i] - gamma.0[i] + beta.0[i]);
            }
            if vanishes {
                continue;
            }
            let slot = out.entry(e).or_insert_with(Q::zero);
            *slot += coef;
        }
    }
    out.retain(|_, c| !c.is_zero());
    out
}

fn monomials(dim: usize, max_total: u32) -> Vec<Poly> {
    let mut out = Vec::new();
    let mut e = vec![0u32; dim];
    loop {
        if e.iter().sum::<u32>() <= max_total {
            out.push(Poly::from([(e.clone(), q(1, 1))]));
        }
        let mut i = 0;
        loop {
            if i == dim {
                return out;
            }
            if e[i] < max_total {
                e[i] += 1;
                break;
            }
            e[i] = 0;
            i += 1;
        }
    }
}

fn sub(a: &Poly, b: &Poly) -> Poly {
    let mut out = a.clone();
    for (e, c) in b {
        let slot = out.entry(e.clone()).or_insert_with(Q::zero);
        *slot -= c;
    }
    out.retain(|_, c| !c.is_zero());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn commutator_is_antisymmetric((a, b, _) in triple()) {
        let ab = a.commutator(&b).unwrap();
        let ba = b.commutator(&a).unwrap();
        prop_assert_eq!(ab, ba.neg());
    }

    #[test]
    fn jacobi_identity((a, b, c) in triple()) {
        let t1 = a.commutator(&b.commutator(&c).unwrap()).unwrap();
        let t2 = b.commutator(&c.commutator(&a).unwrap()).unwrap();
        let t3 = c.commutator(&a.commutator(&b).unwrap()).unwrap();
        prop_assert!(t1.add(&t2).unwrap().add(&t3).unwrap().is_zero());
    }

    #[test]
    fn composition_matches_monomial_oracle((a, b, c) in triple()) {
        let dim = a.dim();
        let ab = a.compose(&b).unwrap();
        let comm = a.commutator(&c).unwrap();
        for m in monomials(dim, 6) {
            prop_assert_eq!(apply(&ab, &m), apply(&a, &apply(&b, &m)));
            let direct = sub(&apply(&a, &apply(&c, &m)), &apply(&c, &apply(&a, &m)));
            prop_assert_eq!(apply(&comm, &m), direct);
        }
    }

    #[test]
    fn ad_power_stays_in_class(
        (m, l0, lm) in (1usize..=2, 0u32..=6)
            .prop_flat_map(|(dim, m)| (Just(m), op(dim, 0, 2, 3), op(dim, m, 2, 4)))
    ) {
        for k in 0..=(m as usize) {
            let (deg, ord) = ad_power(&l0, &lm, k).unwrap().degree_order();
            prop_assert!(deg <= m as i64 - k as i64 && ord <= k as i64 + 2);
        }
        prop_assert!(ad_power(&l0, &lm, m as usize + 1).unwrap().is_zero());
    }

    #[test]
    fn symbolic_algebra_commutes_with_atom_evaluation(
        seed in any::<u64>(),
        m in 1usize..=3,
    ) {
        let spec = OperatorSpec::parse(
            2,
            &[vec!["1 + x1^2/4", "x1*x2/8"], vec!["x1*x2/8", "2 + sin(x2)"]],
            &["x2", "cos(x1)"],
            "x1^2",
            0.5,
        )
        .unwrap();
        let l0 = taylor_term(&spec, 0);
        let lm = taylor_term(&spec, m);
        let symbolic = ad_power(&l0, &lm, 2).unwrap();
        let value = atom_values(seed);
        let eval = |o: &SymbolicOp| o.map_coefs(|c| c.eval_exact(&value));
        let numeric = ad_power(&eval(&l0), &eval(&lm), 2).unwrap();
        prop_assert_eq!(eval(&symbolic), numeric);
    }
}

/// Deterministic pseudo-random rational for each atom.
fn atom_values(seed: u64) -> impl Fn(&Atom) -> Q {
    move |a: &Atom| {
        let text = format!("{a:?}{seed}");
        let h = text
            .bytes()
            .fold(1469598103934665603u64, |h, b| (h ^ b as u64).wrapping_mul(1099511628211));
        q((h % 17) as i64 - 8, 1 + (h >> 32) as i64 % 5)
    }
}
