use alloc::string::String;
use alloc::vec::Vec;

use crate::expr::{parse, Expr, ExprError};
use crate::linalg;
use crate::opalg::{Atom, Field};
use crate::ring::ratio;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("in {field}: {source}")]
    Expr { field: String, source: ExprError },
    #[error("operator shape: {0}")]
    Shape(&'static str),
    #[error("ellipticity constant must be positive and finite, got {0}")]
    Gamma(f64),
    #[error("diffusion matrix is not positive definite at {point:?}")]
    NotPositiveDefinite { point: Vec<f64> },
    #[error("ellipticity violated at {point:?}: smallest eigenvalue {min_eigenvalue} < gamma {gamma}")]
    Ellipticity {
        point: Vec<f64>,
        min_eigenvalue: f64,
        gamma: f64,
    },
}

/// `L = sum a_ij D_i D_j + sum b_k D_k + c` with coefficients given as
/// expressions over `x1..xN`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    dim: usize,
    a: Vec<Vec<Expr>>,
    b: Vec<Expr>,
    c: Expr,
    gamma: f64,
    positive_orthant: bool,
}

impl OperatorSpec {
    /// The diffusion matrix is symmetrized: entries that differ become
    /// `(a_ij + a_ji)/2`.
    pub fn new(
        dim: usize,
        a: Vec<Vec<Expr>>,
        b: Vec<Expr>,
        c: Expr,
        gamma: f64,
    ) -> Result<Self, SpecError> {
        if dim == 0 {
            return Err(SpecError::Shape("dimension must be at least 1"));
        }
        if a.len() != dim || a.iter().any(|row| row.len() != dim) {
            return Err(SpecError::Shape("diffusion matrix must be dim x dim"));
        }
        if b.len() != dim {
            return Err(SpecError::Shape("drift vector must have dim entries"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(SpecError::Gamma(gamma));
        }
        let mut sym = a.clone();
        for i in 0..dim {
            for j in (i + 1)..dim {
                let s = if a[i][j] == a[j][i] {
                    a[i][j].clone()
                } else {
                    Expr::product(alloc::vec![
                        Expr::rational(ratio(1, 2)),
                        Expr::sum(alloc::vec![a[i][j].clone(), a[j][i].clone()])
                    ])
                };
                sym[i][j] = s.clone();
                sym[j][i] = s;
            }
        }
        Ok(OperatorSpec {
            dim,
            a: sym,
            b,
            c,
            gamma,
            positive_orthant: false,
        })
    }

    /// Parse every coefficient from expression text.
    pub fn parse(
        dim: usize,
        a: &[Vec<&str>],
        b: &[&str],
        c: &str,
        gamma: f64,
    ) -> Result<Self, SpecError> {
        let field = |name: String, text: &str| {
            parse(text, dim).map_err(|source| SpecError::Expr {
                field: name,
                source,
            })
        };
        let mut am = Vec::with_capacity(a.len());
        for (i, row) in a.iter().enumerate() {
            let mut r = Vec::with_capacity(row.len());
            for (j, t) in row.iter().enumerate() {
                r.push(field(alloc::format!("a[{i}][{j}]"), t)?);
            }
            am.push(r);
        }
        let bv = b
            .iter()
            .enumerate()
            .map(|(k, t)| field(alloc::format!("b[{k}]"), t))
            .collect::<Result<Vec<_>, _>>()?;
        let cv = field(String::from("c"), c)?;
        Self::new(dim, am, bv, cv, gamma)
    }

    /// Declare that the operator lives on the positive orthant (required by
    /// the geometric center rule).
    pub fn with_positive_orthant(mut self, yes: bool) -> Self {
        self.positive_orthant = yes;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn positive_orthant(&self) -> bool {
        self.positive_orthant
    }

    pub fn a(&self, i: usize, j: usize) -> &Expr {
        &self.a[i][j]
    }

    pub fn b(&self, k: usize) -> &Expr {
        &self.b[k]
    }

    pub fn c(&self) -> &Expr {
        &self.c
    }

    pub fn field(&self, f: &Field) -> &Expr {
        match *f {
            Field::A(i, j) => &self.a[i][j],
            Field::B(k) => &self.b[k],
            Field::C => &self.c,
        }
    }

    /// Expression for the derivative atom `D^beta f`.
    pub fn atom_expr(&self, atom: &Atom) -> Expr {
        self.field(&atom.field).diff_multi(&atom.deriv.0)
    }

    /// True when every coefficient is a constant.
    pub fn is_constant_coefficient(&self) -> bool {
        self.a.iter().flatten().all(|e| e.arity() == 0)
            && self.b.iter().all(|e| e.arity() == 0)
            && self.c.arity() == 0
    }

    /// `A(x)` row-major.
    pub fn diffusion_at(&self, x: &[f64]) -> Result<Vec<f64>, SpecError> {
        let n = self.dim;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.a[i][j].eval(x).map_err(|source| SpecError::Expr {
                    field: alloc::format!("a[{i}][{j}]"),
                    source,
                })?);
            }
        }
        Ok(out)
    }

    /// Spot-check `xi^T A(x) xi >= gamma |xi|^2` at `x`, with tolerance
    /// `1e-10 * |A|`. Returns `A(x)` on success.
    pub fn check_ellipticity(&self, x: &[f64]) -> Result<Vec<f64>, SpecError> {
        let a = self.diffusion_at(x)?;
        self.check_diffusion(x, a)
    }

    /// Ellipticity check for an already evaluated `A(x)`.
    pub fn check_diffusion(&self, x: &[f64], a: Vec<f64>) -> Result<Vec<f64>, SpecError> {
        let n = self.dim;
        let tol = 1e-10 * linalg::max_abs(&a).max(1.0);
        if linalg::cholesky(n, &a, tol).is_none() {
            return Err(SpecError::NotPositiveDefinite { point: x.to_vec() });
        }
        let min_eig = linalg::symmetric_eigenvalues(n, &a)[0];
        if min_eig < self.gamma - tol {
            return Err(SpecError::Ellipticity {
                point: x.to_vec(),
                min_eigenvalue: min_eig,
                gamma: self.gamma,
            });
        }
        Ok(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrizes_off_diagonal() {
        let spec = OperatorSpec::parse(
            2,
            &[alloc::vec!["1", "x1"], alloc::vec!["0", "1"]],
            &["0", "0"],
            "0",
            0.5,
        )
        .unwrap();
        assert_eq!(spec.a(0, 1), spec.a(1, 0));
        assert_eq!(spec.a(0, 1).eval(&[0.4, 0.0]).unwrap(), 0.2);
    }

    #[test]
    fn ellipticity_spot_check() {
        let spec = OperatorSpec::parse(1, &[alloc::vec!["1 + 0.25*sin(x1)"]], &["0"], "0", 0.75)
            .unwrap();
        for k in -20..=20 {
            spec.check_ellipticity(&[k as f64 * 0.37]).unwrap();
        }
        let bad = OperatorSpec::parse(1, &[alloc::vec!["x1^2"]], &["0"], "0", 0.5).unwrap();
        assert!(matches!(
            bad.check_ellipticity(&[0.5]),
            Err(SpecError::Ellipticity { .. })
        ));
        assert!(matches!(
            bad.check_ellipticity(&[0.0]),
            Err(SpecError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            OperatorSpec::parse(2, &[alloc::vec!["1"]], &["0", "0"], "0", 1.0),
            Err(SpecError::Shape(_))
        ));
        assert!(matches!(
            OperatorSpec::parse(1, &[alloc::vec!["1"]], &["0"], "0", 0.0),
            Err(SpecError::Gamma(_))
        ));
        assert!(matches!(
            OperatorSpec::parse(1, &[alloc::vec!["x2"]], &["0"], "0", 1.0),
            Err(SpecError::Expr { .. })
        ));
    }
}
