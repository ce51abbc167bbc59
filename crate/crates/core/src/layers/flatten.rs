//! Compaction of the strided per-channel layout into one dense ciphertext.
//!
//! Output contract: value `(ch, r, c)` of every sample ends up at
//! `offset + ch*W*H + r*W + c` with the pending constant applied, and every
//! other slot of the sample region is zero.
//!
//! Stages, each one level when present:
//! 1. extraction, which leaves `(r, c)` at `r * W_img * I + c`:
//!    * masked: one mask per column carrying the pending constant, column `c`
//!      shifted left by `c * (I - 1)`;
//!    * row interval (zero gaps only): accumulate `Rot(x, t * (I - 1))` for
//!      `t < I`, which parks columns `b*I .. b*I + I` contiguously at
//!      `b * I^2`; one mask per such block, block `b` shifted left by
//!      `b * I * (I - 1)`.
//! 2. column removal: one mask of `W` ones per row, row `r` shifted left by
//!    `r * (W_img * I - W)`.
//!
//! Channel packing then rotates channel `ch` right by `ch * W * H` and adds,
//! with no multiplication.

use alloc::vec::Vec;

use super::{scatter, CipherState, Extraction, LayoutState};
use crate::backend::{CipherVector, Evaluator, OpCounts};
use crate::error::{Error, Result};
use crate::model::LayerSpec;

pub fn flatten(ev: &mut Evaluator, state: &CipherState) -> Result<CipherState> {
    let layout = &state.layout;
    let plan = layout.flatten_plan();
    if state.level() < plan.mults() {
        return Err(Error::LevelExhausted);
    }
    let next = layout.advance(&LayerSpec::Flatten)?;

    let mut compact = Vec::with_capacity(state.cts.len());
    for ct in &state.cts {
        let x = match plan.extraction {
            Some(Extraction::Masked) => masked_extraction(ev, ct, layout)?,
            Some(Extraction::RowInterval) => row_interval_removal(ev, ct, layout)?,
            None => ct.clone(),
        };
        let x = if plan.remove_columns {
            column_removal(ev, &x, layout)?
        } else {
            x
        };
        compact.push(x);
    }

    let block = (layout.width * layout.height) as i64;
    let mut iter = compact.into_iter().enumerate();
    let (_, mut out) = iter
        .next()
        .ok_or_else(|| Error::InvalidModel("flatten of zero channels".into()))?;
    for (ch, x) in iter {
        let shifted = ev.rotate(&x, -(ch as i64) * block);
        ev.add_assign(&mut out, &shifted)?;
    }
    CipherState::new(alloc::vec![out], next)
}

fn row_base(layout: &LayoutState, sample: usize, r: usize) -> usize {
    layout.offsets[sample] + r * layout.img_width * layout.interval
}

fn sum_into(ev: &mut Evaluator, acc: &mut Option<CipherVector>, x: CipherVector) -> Result<()> {
    match acc.as_mut() {
        None => *acc = Some(x),
        Some(a) => ev.add_assign(a, &x)?,
    }
    Ok(())
}

fn masked_extraction(ev: &mut Evaluator, ct: &CipherVector, layout: &LayoutState) -> Result<CipherVector> {
    let slots = ev.num_slots();
    let interval = layout.interval;
    let mut acc = None;
    for c in 0..layout.width {
        let positions: Vec<usize> = (0..layout.offsets.len())
            .flat_map(|s| (0..layout.height).map(move |r| (s, r)))
            .map(|(s, r)| row_base(layout, s, r) + c * interval)
            .collect();
        let mask = ev.encode_slots(scatter(slots, &positions, layout.pending))?;
        let mut picked = ev.mul_plain(ct, &mask)?;
        let shift = c * (interval - 1);
        if shift > 0 {
            picked = ev.rotate(&picked, shift as i64);
        }
        sum_into(ev, &mut acc, picked)?;
    }
    acc.ok_or_else(|| Error::InvalidModel("flatten of zero-width data".into()))
}

fn row_interval_removal(ev: &mut Evaluator, ct: &CipherVector, layout: &LayoutState) -> Result<CipherVector> {
    let slots = ev.num_slots();
    let interval = layout.interval;
    let mut stacked = ct.clone();
    for t in 1..interval {
        let r = ev.rotate(ct, (t * (interval - 1)) as i64);
        ev.add_assign(&mut stacked, &r)?;
    }

    let blocks = layout.width.div_ceil(interval);
    let mut acc = None;
    for b in 0..blocks {
        let mut positions = Vec::new();
        for s in 0..layout.offsets.len() {
            for r in 0..layout.height {
                let base = row_base(layout, s, r) + b * interval * interval;
                for u in 0..interval {
                    if b * interval + u < layout.width {
                        positions.push(base + u);
                    }
                }
            }
        }
        let mask = ev.encode_slots(scatter(slots, &positions, 1.0))?;
        let mut picked = ev.mul_plain(&stacked, &mask)?;
        let shift = b * interval * (interval - 1);
        if shift > 0 {
            picked = ev.rotate(&picked, shift as i64);
        }
        sum_into(ev, &mut acc, picked)?;
    }
    acc.ok_or_else(|| Error::InvalidModel("flatten of zero-width data".into()))
}

fn column_removal(ev: &mut Evaluator, x: &CipherVector, layout: &LayoutState) -> Result<CipherVector> {
    let slots = ev.num_slots();
    let row_stride = layout.img_width * layout.interval;
    let mut acc = None;
    for r in 0..layout.height {
        let positions: Vec<usize> = (0..layout.offsets.len())
            .flat_map(|s| (0..layout.width).map(move |c| (s, c)))
            .map(|(s, c)| row_base(layout, s, r) + c)
            .collect();
        let mask = ev.encode_slots(scatter(slots, &positions, 1.0))?;
        let mut picked = ev.mul_plain(x, &mask)?;
        let shift = r * (row_stride - layout.width);
        if shift > 0 {
            picked = ev.rotate(&picked, shift as i64);
        }
        sum_into(ev, &mut acc, picked)?;
    }
    acc.ok_or_else(|| Error::InvalidModel("flatten of zero-height data".into()))
}

pub(super) fn expected_counts(layout: &LayoutState) -> OpCounts {
    let plan = layout.flatten_plan();
    let w = layout.width as u64;
    let h = layout.height as u64;
    let i = layout.interval as u64;
    let mut per_channel = OpCounts::default();
    match plan.extraction {
        Some(Extraction::Masked) => {
            per_channel.pt_mults += w;
            per_channel.adds += w - 1;
            if i > 1 {
                per_channel.rotations += w - 1;
            }
        }
        Some(Extraction::RowInterval) => {
            let blocks = w.div_ceil(i);
            per_channel.rotations += (i - 1) + (blocks - 1);
            per_channel.adds += (i - 1) + (blocks - 1);
            per_channel.pt_mults += blocks;
        }
        None => {}
    }
    if plan.remove_columns {
        per_channel.pt_mults += h;
        per_channel.adds += h - 1;
        if (layout.img_width as u64) * i > w {
            per_channel.rotations += h - 1;
        }
    }
    let ch = layout.channels as u64;
    OpCounts {
        rotations: per_channel.rotations * ch + (ch - 1),
        pt_mults: per_channel.pt_mults * ch,
        ct_mults: 0,
        adds: per_channel.adds * ch + (ch - 1),
    }
}
