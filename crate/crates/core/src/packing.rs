//! Input flattening, per-sample slot planning and batch packing.
//!
//! Each sample owns a contiguous region of `footprint` slots starting at
//! `i * footprint`. The footprint is the largest slot extent any layer of the
//! model can touch, so samples never collide.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::backend::{CipherVector, Evaluator, HeParams, PlainVector};
use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelSpec, Tensor};

/// Slot requirement contributed by one stage of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlotNeed {
    /// Layer index, or `None` for the input itself.
    pub layer: Option<usize>,
    pub label: String,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PackPlan {
    pub footprint: usize,
    pub alignment: usize,
    pub capacity: usize,
    pub offsets: Vec<usize>,
    pub per_layer_sizes: Vec<SlotNeed>,
    pub num_slots: usize,
}

impl PackPlan {
    /// The same plan restricted to the first `samples` offsets.
    pub fn with_batch(&self, samples: usize) -> Result<PackPlan> {
        if samples > self.capacity {
            return Err(Error::CapacityExceeded {
                samples,
                capacity: self.capacity,
            });
        }
        let mut plan = self.clone();
        plan.offsets.truncate(samples);
        Ok(plan)
    }

    /// Largest single requirement, before alignment.
    pub fn required(&self) -> usize {
        self.per_layer_sizes.iter().map(|s| s.slots).max().unwrap_or(0)
    }
}

/// Split a `CH x H x W` sample into one row-major vector per channel.
pub fn flatten_input(sample: &Tensor, expected: crate::model::Shape) -> Result<Vec<Vec<f64>>> {
    if sample.shape != expected || sample.data.len() != expected.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected}"),
            found: format!("{}", sample.shape),
        });
    }
    let per_channel = expected.height * expected.width;
    Ok(sample
        .data
        .chunks(per_channel.max(1))
        .take(expected.channels)
        .map(<[f64]>::to_vec)
        .collect())
}

/// Slot requirements of every stage, in model order.
pub fn slot_needs(m: &ModelSpec) -> Result<Vec<SlotNeed>> {
    let shapes = m.shapes()?;
    let img_w = m.input.width;
    let img_h = m.input.height;
    let padding: usize = m
        .layers
        .iter()
        .map(|l| match l {
            LayerSpec::Conv(c) => c.padding,
            _ => 0,
        })
        .sum();

    let mut needs = vec![SlotNeed {
        layer: None,
        label: "input".into(),
        slots: img_w * img_h + padding,
    }];
    let names = m.layer_names();
    for (idx, layer) in m.layers.iter().enumerate() {
        let before = if idx == 0 { m.input } else { shapes[idx - 1] };
        let slots = match layer {
            // Unmasked window sums leave invalid values reaching this far past
            // the image extent.
            LayerSpec::AvgPool2d { kernel } => img_w * img_h + (img_w + 1) * (kernel - 1),
            LayerSpec::Flatten => before.len(),
            LayerSpec::Fc(fc) => fc.dat_out * fc.dat_in.div_ceil(fc.dat_out),
            _ => continue,
        };
        needs.push(SlotNeed {
            layer: Some(idx),
            label: names[idx].clone(),
            slots,
        });
    }
    Ok(needs)
}

/// Plan the per-sample footprint, rounded up to a multiple of `alignment`.
pub fn footprint(m: &ModelSpec, params: &HeParams, alignment: usize) -> Result<PackPlan> {
    let alignment = alignment.max(1);
    let per_layer_sizes = slot_needs(m)?;
    let required = per_layer_sizes.iter().map(|s| s.slots).max().unwrap_or(0).max(1);
    let footprint = required.div_ceil(alignment) * alignment;
    let num_slots = params.num_slots();
    if footprint > num_slots {
        return Err(Error::FootprintOverflow {
            footprint,
            slots: num_slots,
        });
    }
    let capacity = num_slots / footprint;
    Ok(PackPlan {
        footprint,
        alignment,
        capacity,
        offsets: (0..capacity).map(|i| i * footprint).collect(),
        per_layer_sizes,
        num_slots,
    })
}

/// Combine samples (each a list of per-channel vectors) into one plaintext
/// per channel: sample `i` is zero-padded, rotated right by its offset and
/// added in.
pub fn batch_pack(ev: &Evaluator, samples: &[Vec<Vec<f64>>], plan: &PackPlan) -> Result<Vec<PlainVector>> {
    if samples.len() > plan.capacity {
        return Err(Error::CapacityExceeded {
            samples: samples.len(),
            capacity: plan.capacity,
        });
    }
    let channels = samples.first().map_or(0, Vec::len);
    let mut packed = Vec::with_capacity(channels);
    for ch in 0..channels {
        let mut acc = ev.encode(&[])?;
        for (i, sample) in samples.iter().enumerate() {
            let data = sample.get(ch).ok_or_else(|| Error::ShapeMismatch {
                expected: format!("{channels} channels"),
                found: format!("{}", sample.len()),
            })?;
            if data.len() > plan.footprint {
                return Err(Error::OversizedInput {
                    len: data.len(),
                    slots: plan.footprint,
                });
            }
            let placed = ev.encode(data)?.rotate(-(plan.offsets[i] as i64));
            acc = acc.add(&placed)?;
        }
        packed.push(acc);
    }
    Ok(packed)
}

/// Ciphertext-side combination of individually encrypted samples; the same
/// layout as [`batch_pack`] followed by encryption.
pub fn combine_encrypted(
    ev: &mut Evaluator,
    samples: &[Vec<CipherVector>],
    plan: &PackPlan,
) -> Result<Vec<CipherVector>> {
    if samples.len() > plan.capacity {
        return Err(Error::CapacityExceeded {
            samples: samples.len(),
            capacity: plan.capacity,
        });
    }
    let channels = samples.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(channels);
    for ch in 0..channels {
        let mut acc = samples[0][ch].clone();
        for (i, sample) in samples.iter().enumerate().skip(1) {
            let shifted = ev.rotate(&sample[ch], -(plan.offsets[i] as i64));
            ev.add_assign(&mut acc, &shifted)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Read `out_dim` values for each sample of the plan from its offset.
pub fn batch_unpack(decrypted: &[f64], plan: &PackPlan, out_dim: usize) -> Vec<Vec<f64>> {
    plan.offsets
        .iter()
        .map(|&off| decrypted[off..off + out_dim].to_vec())
        .collect()
}
