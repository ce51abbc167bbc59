use alloc::vec::Vec;

use super::{scatter, CipherState};
use crate::backend::Evaluator;
use crate::error::{Error, Result};
use crate::model::{Conv, LayerSpec};

/// Convolution by rotation: each input channel is rotated once per kernel
/// tap, then every output channel accumulates the rotated copies multiplied
/// by masks that carry one (pending-scaled) kernel weight at exactly the
/// valid output positions.
pub fn conv(ev: &mut Evaluator, state: &CipherState, layer: &Conv) -> Result<CipherState> {
    if layer.padding != 0 {
        return Err(Error::PaddingUnsupported);
    }
    if state.level() < 1 {
        return Err(Error::LevelExhausted);
    }
    let layout = &state.layout;
    let next = layout.advance(&LayerSpec::Conv(layer.clone()))?;
    let slots = ev.num_slots();
    let rows = layer.kernel_rows();
    let step = layout.interval as i64;
    let row_step = (layout.img_width * layout.interval) as i64;

    let mut rotated = Vec::with_capacity(layer.ch_in * rows * layer.kernel);
    for ct in &state.cts {
        for j in 0..rows {
            for k in 0..layer.kernel {
                rotated.push(ev.rotate(ct, step * k as i64 + row_step * j as i64));
            }
        }
    }

    let positions = next.valid_slots();
    let mut out = Vec::with_capacity(layer.ch_out);
    for o in 0..layer.ch_out {
        let mut acc = None;
        let mut tap = 0;
        for i in 0..layer.ch_in {
            for j in 0..rows {
                for k in 0..layer.kernel {
                    let w = layer.weight(o, i, j, k) * layout.pending;
                    let mask = ev.encode_slots(scatter(slots, &positions, w))?;
                    match acc.as_mut() {
                        None => acc = Some(ev.mul_plain(&rotated[tap], &mask)?),
                        Some(sum) => ev.mul_plain_accumulate(sum, &rotated[tap], &mask)?,
                    }
                    tap += 1;
                }
            }
        }
        let acc = acc.ok_or_else(|| Error::InvalidModel("empty convolution kernel".into()))?;
        let bias = ev.encode_slots(scatter(slots, &positions, layer.bias[o]))?;
        out.push(ev.add_plain(&acc, &bias)?);
    }
    CipherState::new(out, next)
}
