//! Fixed-point primitives: quantized activation tensors, power-of-two weight
//! codes, K-bit scalars, the shift-based MAC and integer requantization.

pub mod audit;
pub mod io;

use crate::error::{Error, Result};

/// Feature map dimensions, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Dims { c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, ch: usize, y: usize, x: usize) -> usize {
        (ch * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Unsigned M-bit activation tensor (M <= 8), one element per byte.
///
/// The scale α is carried for reporting only. Kernels never read it.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    dims: Dims,
    bits: u8,
    scale: Option<f64>,
    data: Vec<u8>,
}

impl QTensor {
    pub fn new(dims: Dims, bits: u8, data: Vec<u8>) -> Result<Self> {
        if !(1..=8).contains(&bits) {
            return Err(Error::arg(format!("activation width {bits} outside 1..=8")));
        }
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "tensor {dims} needs {} elements, got {}",
                dims.len(),
                data.len()
            )));
        }
        let max = max_level(bits);
        if let Some(v) = data.iter().find(|&&v| u32::from(v) > max) {
            return Err(Error::arg(format!("element {v} exceeds {bits}-bit range")));
        }
        Ok(QTensor {
            dims,
            bits,
            scale: None,
            data,
        })
    }

    pub fn zeros(dims: Dims, bits: u8) -> Result<Self> {
        Self::new(dims, bits, vec![0; dims.len()])
    }

    /// Attach the (informational) real scale.
    pub fn with_scale(mut self, alpha: f64) -> Self {
        self.scale = Some(alpha);
        self
    }

    /// The real scale α, if known. Counted as a real-valued read.
    pub fn scale(&self) -> Option<f64> {
        audit::note_real_read();
        self.scale
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> u8 {
        self.data[self.dims.index(ch, y, x)]
    }

    /// Columns `[start, end)` of every row and channel.
    pub fn columns(&self, start: usize, end: usize) -> Result<QTensor> {
        if start > end || end > self.dims.w {
            return Err(Error::dim(format!(
                "column range {start}..{end} outside width {}",
                self.dims.w
            )));
        }
        let dims = Dims::new(self.dims.c, self.dims.h, end - start);
        let mut data = Vec::with_capacity(dims.len());
        for row in self.data.chunks_exact(self.dims.w.max(1)) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(QTensor {
            dims,
            bits: self.bits,
            scale: self.scale,
            data,
        })
    }

    /// Concatenate tensors along the width axis.
    pub fn concat_columns(parts: &[QTensor]) -> Result<QTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("nothing to concatenate"))?;
        let (c, h, bits) = (first.dims.c, first.dims.h, first.bits);
        if parts
            .iter()
            .any(|p| p.dims.c != c || p.dims.h != h || p.bits != bits)
        {
            return Err(Error::dim("column parts disagree on channels, height or width"));
        }
        let w: usize = parts.iter().map(|p| p.dims.w).sum();
        let dims = Dims::new(c, h, w);
        let mut data = Vec::with_capacity(dims.len());
        for row in 0..c * h {
            for p in parts {
                let pw = p.dims.w;
                data.extend_from_slice(&p.data[row * pw..(row + 1) * pw]);
            }
        }
        Ok(QTensor {
            dims,
            bits,
            scale: first.scale,
            data,
        })
    }
}

/// Largest level of an unsigned M-bit code.
#[inline]
pub const fn max_level(bits: u8) -> u32 {
    (1u32 << bits) - 1
}

/// Largest exponent of an N-bit power-of-two code: 2^(N-1) - 2.
#[inline]
pub const fn max_exponent(bits: u8) -> u8 {
    (1u8 << (bits - 1)) - 2
}

/// One power-of-two weight: `sign * 2^exp`, or zero when `sign == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pow2Code {
    sign: i8,
    exp: u8,
}

impl Pow2Code {
    pub const ZERO: Pow2Code = Pow2Code { sign: 0, exp: 0 };

    /// Build a code valid for an N-bit weight set.
    pub fn new(sign: i8, exp: u8, bits: u8) -> Result<Self> {
        if !(2..=7).contains(&bits) {
            return Err(Error::arg(format!("weight width {bits} outside 2..=7")));
        }
        match sign {
            0 => Ok(Self::ZERO),
            -1 | 1 if exp <= max_exponent(bits) => Ok(Pow2Code { sign, exp }),
            -1 | 1 => Err(Error::arg(format!(
                "exponent {exp} exceeds {} for {bits}-bit weights",
                max_exponent(bits)
            ))),
            _ => Err(Error::arg(format!("sign {sign} not in {{-1, 0, 1}}"))),
        }
    }

    pub const fn sign(self) -> i8 {
        self.sign
    }

    pub const fn exp(self) -> u8 {
        self.exp
    }

    pub const fn is_zero(self) -> bool {
        self.sign == 0
    }

    /// Integer value of the code.
    pub const fn value(self) -> i64 {
        self.sign as i64 * (1i64 << self.exp)
    }

    /// Every code of an N-bit set, zero first.
    pub fn all(bits: u8) -> Vec<Pow2Code> {
        let mut out = vec![Self::ZERO];
        for exp in 0..=max_exponent(bits) {
            out.push(Pow2Code { sign: 1, exp });
            out.push(Pow2Code { sign: -1, exp });
        }
        out
    }

    /// One-byte file encoding: 0x00 zero, 0x40|e positive, 0xC0|e negative.
    pub const fn to_byte(self) -> u8 {
        match self.sign {
            0 => 0,
            1 => 0x40 | self.exp,
            _ => 0xC0 | self.exp,
        }
    }

    pub fn from_byte(b: u8, bits: u8) -> Result<Self> {
        match b & 0xC0 {
            0x00 if b == 0 => Ok(Self::ZERO),
            0x40 => Self::new(1, b & 0x3F, bits),
            0xC0 => Self::new(-1, b & 0x3F, bits),
            _ => Err(Error::arg(format!("invalid weight code byte {b:#04x}"))),
        }
    }
}

/// Power-of-two weights for `n` kernels of `kh x kw x c`.
///
/// Kernel `k` occupies codes `[k * kernel_len, (k + 1) * kernel_len)`, laid out
/// as `(ch, ky, kx)`. The per-kernel β values are informational.
#[derive(Debug, Clone, PartialEq)]
pub struct Pow2Weights {
    n: usize,
    kh: usize,
    kw: usize,
    c: usize,
    bits: u8,
    codes: Vec<Pow2Code>,
    betas: Vec<f64>,
}

impl Pow2Weights {
    pub fn new(
        n: usize,
        (kh, kw, c): (usize, usize, usize),
        bits: u8,
        codes: Vec<Pow2Code>,
        betas: Vec<f64>,
    ) -> Result<Self> {
        if codes.len() != n * kh * kw * c {
            return Err(Error::dim(format!(
                "{n} kernels of {kh}x{kw}x{c} need {} codes, got {}",
                n * kh * kw * c,
                codes.len()
            )));
        }
        if betas.len() != n {
            return Err(Error::dim(format!("{n} kernels but {} β values", betas.len())));
        }
        let emax = max_exponent(bits);
        if codes.iter().any(|c| !c.is_zero() && c.exp() > emax) {
            return Err(Error::arg(format!("code exponent exceeds {emax}")));
        }
        Ok(Pow2Weights {
            n,
            kh,
            kw,
            c,
            bits,
            codes,
            betas,
        })
    }

    pub fn kernels(&self) -> usize {
        self.n
    }

    /// Kernel shape `(kh, kw, c)`.
    pub fn kernel_shape(&self) -> (usize, usize, usize) {
        (self.kh, self.kw, self.c)
    }

    pub fn kernel_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn codes(&self) -> &[Pow2Code] {
        &self.codes
    }

    pub fn kernel(&self, k: usize) -> &[Pow2Code] {
        let len = self.kernel_len();
        &self.codes[k * len..(k + 1) * len]
    }

    #[inline]
    pub fn code(&self, k: usize, ch: usize, ky: usize, kx: usize) -> Pow2Code {
        self.codes[((k * self.c + ch) * self.kh + ky) * self.kw + kx]
    }

    /// Per-kernel β. Counted as a real-valued read.
    pub fn betas(&self) -> &[f64] {
        audit::note_real_read();
        &self.betas
    }
}

/// Signed K-bit mantissa with a binary point: value = mantissa * 2^dexp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedScalar {
    mantissa: i32,
    dexp: i8,
    bits: u8,
}

impl FixedScalar {
    pub const MIN_DEXP: i8 = -15;

    pub fn new(mantissa: i32, dexp: i8, bits: u8) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(Error::arg(format!("scale width {bits} outside 2..=16")));
        }
        if !(Self::MIN_DEXP..=0).contains(&dexp) {
            return Err(Error::arg(format!("binary point {dexp} outside -15..=0")));
        }
        let lim = Self::mantissa_limit(bits);
        if mantissa.abs() > lim {
            return Err(Error::arg(format!(
                "mantissa {mantissa} outside ±{lim} for {bits} bits"
            )));
        }
        Ok(FixedScalar {
            mantissa,
            dexp,
            bits,
        })
    }

    /// 2^(K-1) - 1.
    pub const fn mantissa_limit(bits: u8) -> i32 {
        (1i32 << (bits - 1)) - 1
    }

    pub const fn mantissa(self) -> i32 {
        self.mantissa
    }

    pub const fn dexp(self) -> i8 {
        self.dexp
    }

    pub const fn bits(self) -> u8 {
        self.bits
    }

    /// Real value. Counted as a real-valued read.
    pub fn to_f64(self) -> f64 {
        audit::note_real_read();
        f64::from(self.mantissa) * 2f64.powi(i32::from(self.dexp))
    }
}

/// Plain signed 8-bit weights for `n` 1x1 kernels over `c` channels.
///
/// The shared real scale is informational.
#[derive(Debug, Clone, PartialEq)]
pub struct Int8Weights {
    n: usize,
    c: usize,
    scale: f64,
    data: Vec<i8>,
}

impl Int8Weights {
    pub fn new(n: usize, c: usize, scale: f64, data: Vec<i8>) -> Result<Self> {
        if data.len() != n * c {
            return Err(Error::dim(format!(
                "{n} kernels of {c} channels need {} weights, got {}",
                n * c,
                data.len()
            )));
        }
        Ok(Int8Weights { n, c, scale, data })
    }

    pub fn kernels(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, k: usize, ch: usize) -> i8 {
        self.data[k * self.c + ch]
    }

    /// Real scale of one weight step. Counted as a real-valued read.
    pub fn scale(&self) -> f64 {
        audit::note_real_read();
        self.scale
    }
}

/// Signed 16-bit tensor produced by a head layer.
#[derive(Debug, Clone, PartialEq)]
pub struct I16Tensor {
    dims: Dims,
    scale: Option<f64>,
    data: Vec<i16>,
}

impl I16Tensor {
    pub fn new(dims: Dims, data: Vec<i16>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "tensor {dims} needs {} elements, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(I16Tensor {
            dims,
            scale: None,
            data,
        })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }

    /// Counted as a real-valued read.
    pub fn scale(&self) -> Option<f64> {
        audit::note_real_read();
        self.scale
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, ch: usize, y: usize, x: usize) -> i16 {
        self.data[self.dims.index(ch, y, x)]
    }
}

/// `acc + sign * (act << exp)` with a 32-bit overflow check.
#[inline]
pub fn shift_mac(act: u32, code: Pow2Code, acc: i32) -> Result<i32> {
    let shifted = i128::from(act) << code.exp();
    let term = match code.sign() {
        0 => return Ok(acc),
        1 => shifted,
        _ => -shifted,
    };
    i32::try_from(i128::from(acc) + term).map_err(|_| Error::AccumulatorOverflow { acc, term })
}

/// Divide by 2^shift, rounding half away from zero.
#[inline]
pub fn round_shift(num: i128, shift: u32) -> i128 {
    if shift == 0 {
        return num;
    }
    let half = 1i128 << (shift - 1);
    if num >= 0 {
        (num + half) >> shift
    } else {
        -((-num + half) >> shift)
    }
}

/// `round(clip(acc * a + b, 0, 2^M - 1))` on mantissas, with one rounding step.
///
/// Both terms are aligned to the finer of the two binary points, so the sum is
/// exact before rounding.
pub fn requantize(acc: i32, a: FixedScalar, b: FixedScalar, bits: u8) -> u32 {
    let e = a.dexp.min(b.dexp);
    let prod = (i128::from(acc) * i128::from(a.mantissa)) << (a.dexp - e);
    let bias = i128::from(b.mantissa) << (b.dexp - e);
    let rounded = round_shift(prod + bias, (-e) as u32);
    rounded.clamp(0, i128::from(max_level(bits))) as u32
}
