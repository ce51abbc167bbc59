//! End-to-end scheduling: drop-level, every layer in order, decryption and
//! unpacking, with per-layer operation metrics and a complexity-based cost
//! estimate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{Evaluator, HeParams, LevelLedger, OpCounts};
use crate::error::{Error, Result};
use crate::layers::{self, CipherState, LayoutState};
use crate::model::{self, ModelSpec, SumOrder, Tensor};
use crate::packing::{self, PackPlan};

pub const DROP_LEVEL: &str = "Drop Level";

/// Work-unit costs per primitive at ring degree `N` and level `L`:
/// plaintext multiplication `N*L`, rotation `N*log2(N)*L^2`, ciphertext
/// multiplication `kappa*N*L`, addition `N`. The constants are not
/// calibrated to any machine; only relative trends are meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostModel {
    pub ct_mult_factor: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { ct_mult_factor: 3.0 }
    }
}

impl CostModel {
    pub fn pt_mult(&self, n: usize, level: u32) -> f64 {
        n as f64 * f64::from(level)
    }

    pub fn rotation(&self, n: usize, level: u32) -> f64 {
        let log_n = f64::from(n.trailing_zeros());
        n as f64 * log_n * f64::from(level) * f64::from(level)
    }

    pub fn ct_mult(&self, n: usize, level: u32) -> f64 {
        self.ct_mult_factor * n as f64 * f64::from(level)
    }

    pub fn add(&self, n: usize) -> f64 {
        n as f64
    }

    pub fn at_level(&self, n: usize, level: u32, c: OpCounts) -> f64 {
        c.pt_mults as f64 * self.pt_mult(n, level)
            + c.rotations as f64 * self.rotation(n, level)
            + c.ct_mults as f64 * self.ct_mult(n, level)
            + c.adds as f64 * self.add(n)
    }

    pub fn ledger_cost(&self, n: usize, ledger: &LevelLedger) -> f64 {
        ledger.iter().map(|(l, c)| self.at_level(n, l, c)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerMetrics {
    pub layer: String,
    pub rotations: u64,
    pub pt_mults: u64,
    pub ct_mults: u64,
    pub adds: u64,
    pub level_after: u32,
    pub est_cost: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub ledger: LevelLedger,
}

impl LayerMetrics {
    pub fn counts(&self) -> OpCounts {
        OpCounts {
            rotations: self.rotations,
            pt_mults: self.pt_mults,
            ct_mults: self.ct_mults,
            adds: self.adds,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OpMetrics {
    pub per_layer: Vec<LayerMetrics>,
    pub totals: OpCounts,
    pub total_cost: f64,
    /// What the evaluator itself counted over the whole run.
    pub backend_totals: OpCounts,
    /// Ciphertexts entering the drop-level stage (one per input channel).
    pub input_ciphertexts: usize,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub outputs: Vec<Vec<f64>>,
    pub metrics: OpMetrics,
    /// Per layer, per sample: logical values after that layer (pending
    /// constant applied). Only filled by [`infer_traced`].
    pub trace: Option<Vec<Vec<Vec<f64>>>>,
}

/// Encode, encrypt and pack `samples` according to `plan`.
pub fn encrypt_samples(ev: &Evaluator, m: &ModelSpec, plan: &PackPlan, samples: &[Tensor]) -> Result<CipherState> {
    let plan = plan.with_batch(samples.len())?;
    let flat = samples
        .iter()
        .map(|s| packing::flatten_input(s, m.input))
        .collect::<Result<Vec<_>>>()?;
    let plains = if flat.is_empty() {
        (0..m.input.channels).map(|_| ev.encode(&[])).collect::<Result<Vec<_>>>()?
    } else {
        packing::batch_pack(ev, &flat, &plan)?
    };
    let cts = plains.iter().map(|p| ev.encrypt(p)).collect::<Result<Vec<_>>>()?;
    CipherState::new(cts, LayoutState::input(m.input, plan.offsets))
}

pub fn infer(m: &ModelSpec, packed: CipherState, params: &HeParams, plan: &PackPlan) -> Result<Inference> {
    run_schedule(m, packed, params, plan, false)
}

/// [`infer`] that also records every layer's decrypted logical output.
pub fn infer_traced(m: &ModelSpec, packed: CipherState, params: &HeParams, plan: &PackPlan) -> Result<Inference> {
    run_schedule(m, packed, params, plan, true)
}

/// Pack, encrypt and infer in one call.
pub fn run(m: &ModelSpec, samples: &[Tensor], params: &HeParams, plan: &PackPlan) -> Result<Inference> {
    let ev = Evaluator::new(*params)?;
    let packed = encrypt_samples(&ev, m, plan, samples)?;
    infer(m, packed, params, plan)
}

fn run_schedule(
    m: &ModelSpec,
    packed: CipherState,
    params: &HeParams,
    plan: &PackPlan,
    trace: bool,
) -> Result<Inference> {
    let report = model::validate(m, params);
    if !report.ok {
        let reasons: Vec<String> = report.violations.iter().map(|v| v.message.clone()).collect();
        return Err(Error::InvalidModel(reasons.join("; ")));
    }
    if packed.layout.offsets.len() > plan.capacity {
        return Err(Error::CapacityExceeded {
            samples: packed.layout.offsets.len(),
            capacity: plan.capacity,
        });
    }
    let mut ev = Evaluator::new(*params)?;
    let n = params.poly_degree;
    let cost = CostModel::default();
    let input_ciphertexts = packed.cts.len();
    let names = m.layer_names();
    let mut rows = Vec::with_capacity(m.layers.len() + 1);
    let mut traces = trace.then(Vec::new);

    let mut state = packed;
    let mut mark = ev.ledger().clone();
    let mut push_row = |ev: &Evaluator, name: &str, level_after: u32, mark: &mut LevelLedger| {
        let delta = ev.ledger().since(mark);
        *mark = ev.ledger().clone();
        let c = delta.totals();
        rows.push(LayerMetrics {
            layer: name.to_string(),
            rotations: c.rotations,
            pt_mults: c.pt_mults,
            ct_mults: c.ct_mults,
            adds: c.adds,
            level_after,
            est_cost: cost.ledger_cost(n, &delta),
            ledger: delta,
        });
    };

    if !m.layers.is_empty() {
        let need = model::mult_depth(m)?.total;
        state = layers::drop_level(&mut ev, &state, need)?;
        push_row(&ev, DROP_LEVEL, state.level(), &mut mark);
    }
    for (layer, name) in m.layers.iter().zip(&names) {
        state = layers::apply(&mut ev, &state, layer)?;
        push_row(&ev, name, state.level(), &mut mark);
        if let Some(t) = traces.as_mut() {
            let dec = state.decrypt(&ev);
            let per_sample = (0..state.layout.offsets.len())
                .map(|s| state.layout.read_sample(&dec, s))
                .collect();
            t.push(per_sample);
        }
    }

    let dec = state.decrypt(&ev);
    let outputs = if state.layout.flattened && state.layout.pending == 1.0 {
        let batch = plan.with_batch(state.layout.offsets.len())?;
        let mut batch = batch;
        batch.offsets = state.layout.offsets.clone();
        packing::batch_unpack(&dec[0], &batch, state.layout.width)
    } else {
        (0..state.layout.offsets.len())
            .map(|s| state.layout.read_sample(&dec, s))
            .collect()
    };

    let totals = rows.iter().fold(OpCounts::default(), |acc, r| acc + r.counts());
    let total_cost = rows.iter().map(|r| r.est_cost).sum();
    Ok(Inference {
        outputs,
        metrics: OpMetrics {
            per_layer: rows,
            totals,
            total_cost,
            backend_totals: ev.counts(),
            input_ciphertexts,
            depth: params.depth,
        },
        trace: traces,
    })
}

/// Total cost of a recorded schedule had the input been encrypted at
/// `depth_override` instead. Drop-level is re-derived for the new depth; the
/// model layers run at the levels they were recorded at, since drop-level
/// always hands them the same starting level.
pub fn estimate_cost(metrics: &OpMetrics, params: &HeParams, depth_override: u32, cost: &CostModel) -> f64 {
    let n = params.poly_degree;
    metrics
        .per_layer
        .iter()
        .map(|row| {
            if row.layer == DROP_LEVEL {
                let target = row.level_after;
                (target + 1..=depth_override)
                    .map(|l| metrics.input_ciphertexts as f64 * cost.pt_mult(n, l))
                    .sum()
            } else {
                cost.ledger_cost(n, &row.ledger)
            }
        })
        .sum()
}

/// Analytic per-layer counts for a batch occupying `offsets`, derived from
/// the layout state machine alone (no ciphertext is touched). The first entry
/// is drop-level.
pub fn schedule_counts(m: &ModelSpec, params: &HeParams) -> Result<Vec<(String, OpCounts)>> {
    let need = model::mult_depth(m)?.total;
    let mut layout = LayoutState::input(m.input, Vec::new());
    let mut out = Vec::with_capacity(m.layers.len() + 1);
    if !m.layers.is_empty() {
        let drops = u64::from(params.depth.saturating_sub(need));
        out.push((
            DROP_LEVEL.to_string(),
            OpCounts {
                pt_mults: drops * m.input.channels as u64,
                ..OpCounts::default()
            },
        ));
    }
    for (layer, name) in m.layers.iter().zip(m.layer_names()) {
        out.push((name, layout.expected_counts(layer)));
        layout = layout.advance(layer)?;
    }
    Ok(out)
}

/// Layout after every layer for a batch laid out by `plan`.
pub fn layout_trace(m: &ModelSpec, plan: &PackPlan) -> Result<Vec<LayoutState>> {
    let mut layout = LayoutState::input(m.input, plan.offsets.clone());
    let mut out = Vec::with_capacity(m.layers.len() + 1);
    out.push(layout.clone());
    for layer in &m.layers {
        layout = layout.advance(layer)?;
        out.push(layout.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerifyReport {
    pub model: String,
    pub trials: usize,
    /// Against the plaintext pass summed in the construction's order.
    pub max_abs_err: f64,
    pub mean_abs_err: f64,
    /// Largest `|he - oracle| / max(1, |oracle|)` against the index-order
    /// plaintext pass; shows how much of the error is summation order.
    pub natural_max_rel_err: f64,
    /// Fraction of trials whose argmax matches the oracle.
    pub argmax_agreement: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn argmax(v: &[f64]) -> Option<usize> {
    v.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &x)| match best {
            Some((_, b)) if b >= x => best,
            _ => Some((i, x)),
        })
        .map(|(i, _)| i)
}

/// Uniform `[0, 1)` inputs shaped like the model input.
pub fn random_inputs(m: &ModelSpec, count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Tensor {
            shape: m.input,
            data: (0..m.input.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        })
        .collect()
}

/// Run `trials` seeded random inputs through the homomorphic schedule (in
/// full batches) and through the plaintext oracle, and compare. The error
/// fields compare against the oracle summed in the construction's order, so
/// with quantization off any nonzero error is a real discrepancy.
pub fn verify_against_oracle(
    m: &ModelSpec,
    params: &HeParams,
    plan: &PackPlan,
    trials: usize,
    seed: u64,
    tol: f64,
) -> Result<VerifyReport> {
    let inputs = random_inputs(m, trials, seed);
    let mut max_abs_err = 0.0f64;
    let mut err_sum = 0.0;
    let mut err_count = 0usize;
    let mut agree = 0usize;
    let mut natural_max_rel_err = 0.0f64;
    for chunk in inputs.chunks(plan.capacity.max(1)) {
        let result = run(m, chunk, params, plan)?;
        for (sample, he_out) in chunk.iter().zip(&result.outputs) {
            let expected = model::reference_infer_with(m, sample, SumOrder::Diagonal)?;
            let natural = model::reference_infer(m, sample)?;
            if expected.len() != he_out.len() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} outputs", expected.len()),
                    found: format!("{}", he_out.len()),
                });
            }
            for (a, b) in he_out.iter().zip(&expected) {
                let e = (a - b).abs();
                max_abs_err = if e.is_nan() { f64::INFINITY } else { max_abs_err.max(e) };
                err_sum += e;
                err_count += 1;
            }
            for (a, b) in he_out.iter().zip(&natural) {
                let rel = (a - b).abs() / b.abs().max(1.0);
                natural_max_rel_err = if rel.is_nan() { f64::INFINITY } else { natural_max_rel_err.max(rel) };
            }
            if argmax(he_out) == argmax(&expected) {
                agree += 1;
            }
        }
    }
    let argmax_agreement = if trials == 0 { 1.0 } else { agree as f64 / trials as f64 };
    Ok(VerifyReport {
        model: m.name.clone(),
        trials,
        max_abs_err,
        mean_abs_err: if err_count == 0 { 0.0 } else { err_sum / err_count as f64 },
        natural_max_rel_err,
        argmax_agreement,
        tol,
        passed: max_abs_err <= tol,
    })
}
