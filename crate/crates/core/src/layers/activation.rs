use alloc::vec::Vec;

use super::CipherState;
use crate::backend::Evaluator;
use crate::error::{Error, Result};
use crate::model::{ApproxRelu, LayerSpec};

/// `x -> x^2`; a pending constant `p` becomes `p^2`.
pub fn square(ev: &mut Evaluator, state: &CipherState) -> Result<CipherState> {
    if state.level() < 1 {
        return Err(Error::LevelExhausted);
    }
    let next = state.layout.advance(&LayerSpec::Square)?;
    let cts = state
        .cts
        .iter()
        .map(|c| ev.mul_cipher(c, c))
        .collect::<Result<Vec<_>>>()?;
    CipherState::new(cts, next)
}

/// `a0 + a1*y + a2*y^2` with `y = p*x`, evaluated as
/// `(a1 p) x + a0 + (a2 p^2) x^2` so the pending constant is absorbed into
/// the coefficients. Costs two levels.
pub fn approx_relu(ev: &mut Evaluator, state: &CipherState, coeffs: &ApproxRelu) -> Result<CipherState> {
    if state.level() < 2 {
        return Err(Error::LevelExhausted);
    }
    let p = state.layout.pending;
    let next = state.layout.advance(&LayerSpec::ApproxRelu(*coeffs))?;
    let lin = ev.encode_constant(coeffs.a1 * p);
    let quad = ev.encode_constant(coeffs.a2 * (p * p));
    let constant = ev.encode_constant(coeffs.a0);

    let mut cts = Vec::with_capacity(state.cts.len());
    for x in &state.cts {
        let x2 = ev.mul_cipher(x, x)?;
        let t2 = ev.mul_plain(&x2, &quad)?;
        let t1 = ev.mul_plain(x, &lin)?;
        let t1 = ev.add_plain(&t1, &constant)?;
        cts.push(ev.add(&t1, &t2)?);
    }
    CipherState::new(cts, next)
}
