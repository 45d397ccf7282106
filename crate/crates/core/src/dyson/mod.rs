//! Dyson expansion of the dilated semigroup: Taylor terms, BCH polynomials
//! and the simplex-integrated operators `P_alpha`, `P^l`.

mod expansion;
mod operator;
mod sigma;

pub use expansion::{
    assemble_p_alpha, assemble_p_ell, bch_polynomial, enumerate_indices, taylor_term,
    BchPolynomial, DysonError, DysonTerms, Expansion, MultiIndex,
};
pub use operator::{OperatorSpec, SpecError};
pub use sigma::{simplex_integrate, simplex_volume, SigmaPoly};
