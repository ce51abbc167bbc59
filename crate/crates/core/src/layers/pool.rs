use alloc::vec::Vec;

use super::CipherState;
use crate::backend::Evaluator;
use crate::error::Result;
use crate::model::LayerSpec;

/// Average pooling as an unmasked `c x c` window sum with stride `c`.
///
/// No multiplication is spent: the `1/c^2` factor is recorded in the layout
/// as a pending constant, and the slots between valid outputs are left
/// holding partial sums.
pub fn avgpool(ev: &mut Evaluator, state: &CipherState, kernel: usize) -> Result<CipherState> {
    let layout = &state.layout;
    let next = layout.advance(&LayerSpec::AvgPool2d { kernel })?;
    let step = layout.interval as i64;
    let row_step = (layout.img_width * layout.interval) as i64;

    let mut out = Vec::with_capacity(state.cts.len());
    for ct in &state.cts {
        let mut acc = ev.rotate(ct, 0);
        for j in 0..kernel {
            for k in 0..kernel {
                if j == 0 && k == 0 {
                    continue;
                }
                let r = ev.rotate(ct, step * k as i64 + row_step * j as i64);
                ev.add_assign(&mut acc, &r)?;
            }
        }
        out.push(acc);
    }
    CipherState::new(out, next)
}
