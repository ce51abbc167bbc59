//! Slot-exact simulator of a CKKS-style SIMD ciphertext.
//!
//! A ciphertext is a vector of `num_slots` reals plus the number of
//! multiplications it can still absorb. Rotation is a cyclic left shift.
//! Approximation error is modelled only by optional fixed-point rounding at
//! encode time and after every multiplication; with `quantize` off every
//! operation is plain `f64` arithmetic in a fixed order.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Ring and precision parameters shared by every vector of one inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HeParams {
    pub poly_degree: usize,
    pub depth: u32,
    pub scale_bits: u32,
    pub quantize: bool,
    pub log_q: u32,
}

impl Default for HeParams {
    /// 8192 slots, depth 11, 32 fractional bits, log Q = 432.
    fn default() -> Self {
        Self {
            poly_degree: 16384,
            depth: 11,
            scale_bits: 32,
            quantize: false,
            log_q: 432,
        }
    }
}

impl HeParams {
    pub fn new(poly_degree: usize, depth: u32) -> Result<Self> {
        let params = Self {
            poly_degree,
            depth,
            ..Self::default()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_quantization(mut self, scale_bits: u32) -> Self {
        self.quantize = true;
        self.scale_bits = scale_bits;
        self
    }

    pub fn num_slots(&self) -> usize {
        self.poly_degree / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.poly_degree < 2 || !self.poly_degree.is_power_of_two() {
            return Err(Error::InvalidParams(format!(
                "poly_degree {} is not a power of two >= 2",
                self.poly_degree
            )));
        }
        if self.depth < 1 {
            return Err(Error::InvalidParams("depth must be at least 1".into()));
        }
        // 2^scale_bits must stay exactly representable and leave headroom in the mantissa.
        if !(1..=52).contains(&self.scale_bits) {
            return Err(Error::InvalidParams(format!(
                "scale_bits {} outside 1..=52",
                self.scale_bits
            )));
        }
        Ok(())
    }
}

/// Round to the nearest multiple of `2^-bits`, ties to even.
pub fn quantize(x: f64, bits: u32) -> f64 {
    let scale = (1u64 << bits) as f64;
    libm::rint(x * scale) / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlainVector {
    values: Vec<f64>,
}

impl PlainVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CipherVector {
    values: Vec<f64>,
    level: u32,
}

impl CipherVector {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Slot contents without going through [`Evaluator::decrypt`]; for
    /// instrumentation only.
    pub fn peek(&self) -> &[f64] {
        &self.values
    }
}

/// Primitive operation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OpCounts {
    pub rotations: u64,
    pub pt_mults: u64,
    pub ct_mults: u64,
    pub adds: u64,
}

impl OpCounts {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

impl core::ops::Add for OpCounts {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            rotations: self.rotations + rhs.rotations,
            pt_mults: self.pt_mults + rhs.pt_mults,
            ct_mults: self.ct_mults + rhs.ct_mults,
            adds: self.adds + rhs.adds,
        }
    }
}

impl core::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl core::ops::Sub for OpCounts {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            rotations: self.rotations - rhs.rotations,
            pt_mults: self.pt_mults - rhs.pt_mults,
            ct_mults: self.ct_mults - rhs.ct_mults,
            adds: self.adds - rhs.adds,
        }
    }
}

/// Operation counts bucketed by the ciphertext level *before* each operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelLedger {
    by_level: Vec<OpCounts>,
}

impl LevelLedger {
    fn slot(&mut self, level: u32) -> &mut OpCounts {
        let idx = level as usize;
        if self.by_level.len() <= idx {
            self.by_level.resize(idx + 1, OpCounts::default());
        }
        &mut self.by_level[idx]
    }

    pub fn record(&mut self, level: u32, counts: OpCounts) {
        *self.slot(level) += counts;
    }

    pub fn totals(&self) -> OpCounts {
        self.by_level
            .iter()
            .fold(OpCounts::default(), |acc, c| acc + *c)
    }

    /// `(level, counts)` pairs with non-zero counts, ascending by level.
    pub fn iter(&self) -> impl Iterator<Item = (u32, OpCounts)> + '_ {
        self.by_level
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(l, c)| (l as u32, *c))
    }

    /// Entry-wise difference `self - earlier`, where `earlier` is a prefix snapshot.
    pub fn since(&self, earlier: &LevelLedger) -> LevelLedger {
        let mut out = self.clone();
        for (level, c) in earlier.iter() {
            let slot = out.slot(level);
            *slot = *slot - c;
        }
        out
    }
}

/// Executes the primitives and counts every one of them.
///
/// Counting is the only state; the arithmetic itself is a pure function of
/// the operands.
#[derive(Debug, Clone)]
pub struct Evaluator {
    params: HeParams,
    ledger: LevelLedger,
}

impl Evaluator {
    pub fn new(params: HeParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            ledger: LevelLedger::default(),
        })
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn num_slots(&self) -> usize {
        self.params.num_slots()
    }

    pub fn ledger(&self) -> &LevelLedger {
        &self.ledger
    }

    pub fn counts(&self) -> OpCounts {
        self.ledger.totals()
    }

    fn round(&self, x: f64) -> f64 {
        if self.params.quantize {
            quantize(x, self.params.scale_bits)
        } else {
            x
        }
    }

    /// Place `data` at slot 0 onwards and zero-fill the rest.
    pub fn encode(&self, data: &[f64]) -> Result<PlainVector> {
        let slots = self.num_slots();
        if data.len() > slots {
            return Err(Error::OversizedInput {
                len: data.len(),
                slots,
            });
        }
        let mut values = vec![0.0; slots];
        for (dst, &src) in values.iter_mut().zip(data) {
            *dst = self.round(src);
        }
        Ok(PlainVector { values })
    }

    /// Full-length plaintext; `values.len()` must equal `num_slots`.
    pub fn encode_slots(&self, values: Vec<f64>) -> Result<PlainVector> {
        self.check_len(values.len())?;
        let values = if self.params.quantize {
            values.into_iter().map(|v| self.round(v)).collect()
        } else {
            values
        };
        Ok(PlainVector { values })
    }

    /// Every slot set to `value`.
    pub fn encode_constant(&self, value: f64) -> PlainVector {
        PlainVector {
            values: vec![self.round(value); self.num_slots()],
        }
    }

    pub fn encrypt(&self, plain: &PlainVector) -> Result<CipherVector> {
        self.check_len(plain.len())?;
        Ok(CipherVector {
            values: plain.values.clone(),
            level: self.params.depth,
        })
    }

    pub fn decrypt(&self, cipher: &CipherVector) -> Vec<f64> {
        cipher.values.clone()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let slots = self.num_slots();
        if len != slots {
            return Err(Error::SlotMismatch { left: len, right: slots });
        }
        Ok(())
    }

    fn tally(&mut self, level: u32, counts: OpCounts) {
        self.ledger.record(level, counts);
    }

    pub fn add(&mut self, a: &CipherVector, b: &CipherVector) -> Result<CipherVector> {
        if a.len() != b.len() {
            return Err(Error::SlotMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let level = a.level.min(b.level);
        self.tally(level, OpCounts { adds: 1, ..OpCounts::default() });
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
        Ok(CipherVector { values, level })
    }

    pub fn add_plain(&mut self, a: &CipherVector, b: &PlainVector) -> Result<CipherVector> {
        if a.len() != b.len() {
            return Err(Error::SlotMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        self.tally(a.level, OpCounts { adds: 1, ..OpCounts::default() });
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect();
        Ok(CipherVector {
            values,
            level: a.level,
        })
    }

    /// In-place `acc += b`; same semantics and accounting as [`Evaluator::add`].
    pub fn add_assign(&mut self, acc: &mut CipherVector, b: &CipherVector) -> Result<()> {
        if acc.len() != b.len() {
            return Err(Error::SlotMismatch {
                left: acc.len(),
                right: b.len(),
            });
        }
        let level = acc.level.min(b.level);
        self.tally(level, OpCounts { adds: 1, ..OpCounts::default() });
        for (x, y) in acc.values.iter_mut().zip(&b.values) {
            *x += y;
        }
        acc.level = level;
        Ok(())
    }

    pub fn mul_plain(&mut self, c: &CipherVector, p: &PlainVector) -> Result<CipherVector> {
        if c.len() != p.len() {
            return Err(Error::SlotMismatch {
                left: c.len(),
                right: p.len(),
            });
        }
        if c.level == 0 {
            return Err(Error::LevelExhausted);
        }
        self.tally(c.level, OpCounts { pt_mults: 1, ..OpCounts::default() });
        let values = c
            .values
            .iter()
            .zip(&p.values)
            .map(|(x, y)| self.round(x * y))
            .collect();
        Ok(CipherVector {
            values,
            level: c.level - 1,
        })
    }

    /// `acc += c * p`, counted as one plaintext multiplication and one addition.
    ///
    /// Bit-identical to `add_assign(acc, &mul_plain(c, p)?)`.
    pub fn mul_plain_accumulate(
        &mut self,
        acc: &mut CipherVector,
        c: &CipherVector,
        p: &PlainVector,
    ) -> Result<()> {
        if c.len() != p.len() || acc.len() != c.len() {
            return Err(Error::SlotMismatch {
                left: c.len(),
                right: p.len(),
            });
        }
        if c.level == 0 {
            return Err(Error::LevelExhausted);
        }
        self.tally(c.level, OpCounts { pt_mults: 1, ..OpCounts::default() });
        let level = acc.level.min(c.level - 1);
        self.tally(level, OpCounts { adds: 1, ..OpCounts::default() });
        if self.params.quantize {
            let bits = self.params.scale_bits;
            for ((a, x), y) in acc.values.iter_mut().zip(&c.values).zip(&p.values) {
                *a += quantize(x * y, bits);
            }
        } else {
            for ((a, x), y) in acc.values.iter_mut().zip(&c.values).zip(&p.values) {
                *a += x * y;
            }
        }
        acc.level = level;
        Ok(())
    }

    pub fn mul_cipher(&mut self, a: &CipherVector, b: &CipherVector) -> Result<CipherVector> {
        if a.len() != b.len() {
            return Err(Error::SlotMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let level = a.level.min(b.level);
        if level == 0 {
            return Err(Error::LevelExhausted);
        }
        self.tally(level, OpCounts { ct_mults: 1, ..OpCounts::default() });
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| self.round(x * y))
            .collect();
        Ok(CipherVector {
            values,
            level: level - 1,
        })
    }

    /// Cyclic left shift by `r`; negative `r` shifts right.
    pub fn rotate(&mut self, c: &CipherVector, r: i64) -> CipherVector {
        self.tally(c.level, OpCounts { rotations: 1, ..OpCounts::default() });
        CipherVector {
            values: rotated(&c.values, r),
            level: c.level,
        }
    }
}

/// Reduce a signed rotation amount into `[0, n)`.
pub fn normalize_rotation(r: i64, n: usize) -> usize {
    r.rem_euclid(n as i64) as usize
}

/// Cyclic left shift of a slot vector; `out[i] = v[(i + r) mod n]`.
pub fn rotated(v: &[f64], r: i64) -> Vec<f64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let r = normalize_rotation(r, n);
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&v[r..]);
    out.extend_from_slice(&v[..r]);
    out
}

impl PlainVector {
    /// Plaintext-side cyclic left shift, used when packing before encryption.
    pub fn rotate(&self, r: i64) -> PlainVector {
        PlainVector {
            values: rotated(&self.values, r),
        }
    }

    pub fn add(&self, other: &PlainVector) -> Result<PlainVector> {
        if self.len() != other.len() {
            return Err(Error::SlotMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(PlainVector {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }
}
