//! Dense layer whose rotation and multiplication count scales with the
//! output size.
//!
//! The `m x n` weight matrix is zero-padded to `m x W_vec` columns with
//! `W_vec = ceil(n / m) * m`, and re-laid into `m` diagonals of length
//! `W_vec`: `diag[o][t] = W[t mod m][(t + o) mod W_vec]`. For every `o` the
//! input is rotated by `o` (and by `o - W_vec` for the wrapped tail), masked
//! with the matching part of `diag[o]` and accumulated. Folding the
//! accumulator with rotations by multiples of `m` sums the `ceil(n / m)`
//! partial dot products into slots `[0, m)`.

use alloc::vec;
use alloc::vec::Vec;

use super::CipherState;
use crate::backend::Evaluator;
use crate::error::{Error, Result};
use crate::model::{Fc, LayerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FcGeometry {
    pub dat_in: usize,
    pub dat_out: usize,
    /// `ceil(dat_in / dat_out)`: number of fold rotations.
    pub folds: usize,
    /// Padded row length, `folds * dat_out`.
    pub w_vec: usize,
}

impl FcGeometry {
    pub fn new(dat_in: usize, dat_out: usize) -> Self {
        let folds = dat_in.div_ceil(dat_out);
        Self {
            dat_in,
            dat_out,
            folds,
            w_vec: folds * dat_out,
        }
    }

    /// Distinct input rotation offsets the layer needs (one per output).
    pub fn rotation_indices(&self) -> usize {
        self.dat_out
    }
}

/// Diagonal re-layout of `scale * W`; row `o` has length `w_vec`.
pub fn fc_diagonals(layer: &Fc, scale: f64) -> Vec<Vec<f64>> {
    let g = FcGeometry::new(layer.dat_in, layer.dat_out);
    (0..g.dat_out)
        .map(|o| {
            (0..g.w_vec)
                .map(|t| {
                    let col = (t + o) % g.w_vec;
                    if col < g.dat_in {
                        layer.weight(t % g.dat_out, col) * scale
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn fc(ev: &mut Evaluator, state: &CipherState, layer: &Fc) -> Result<CipherState> {
    if !state.layout.flattened || state.layout.interval != 1 {
        return Err(Error::NotFlattened);
    }
    if state.level() < 1 {
        return Err(Error::LevelExhausted);
    }
    let next = state.layout.advance(&LayerSpec::Fc(layer.clone()))?;
    let g = FcGeometry::new(layer.dat_in, layer.dat_out);
    let slots = ev.num_slots();
    let offsets = &state.layout.offsets;
    let diagonals = fc_diagonals(layer, state.layout.pending);
    let input = &state.cts[0];
    if let Some(&last) = offsets.last() {
        if last + g.w_vec > slots {
            return Err(Error::FootprintOverflow {
                footprint: g.w_vec,
                slots: slots - last,
            });
        }
    }

    let zero = ev.encode(&[])?;
    let mut sum = ev.encrypt(&zero)?;
    for (o, diag) in diagonals.iter().enumerate() {
        let split = g.w_vec - o;
        let mut head = vec![0.0; slots];
        let mut tail = vec![0.0; slots];
        for &off in offsets {
            head[off..off + split].copy_from_slice(&diag[..split]);
            tail[off + split..off + g.w_vec].copy_from_slice(&diag[split..]);
        }
        let head = ev.encode_slots(head)?;
        let tail = ev.encode_slots(tail)?;

        let r = ev.rotate(input, o as i64);
        ev.mul_plain_accumulate(&mut sum, &r, &head)?;
        let r = ev.rotate(input, o as i64 - g.w_vec as i64);
        ev.mul_plain_accumulate(&mut sum, &r, &tail)?;
    }

    let mut out = ev.encrypt(&zero)?;
    for i in 0..g.folds {
        let r = ev.rotate(&sum, (i * g.dat_out) as i64);
        ev.add_assign(&mut out, &r)?;
    }

    let mut bias = vec![0.0; slots];
    for &off in offsets {
        bias[off..off + g.dat_out].copy_from_slice(&layer.bias);
    }
    let bias = ev.encode_slots(bias)?;
    let out = ev.add_plain(&out, &bias)?;
    CipherState::new(vec![out], next)
}
