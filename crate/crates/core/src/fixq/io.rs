//! Binary tensor and weight files.
//!
//! Every file starts with one text header line followed by a little-endian
//! payload:
//!
//! | header                          | payload                                  |
//! |---------------------------------|------------------------------------------|
//! | `qtensor v1 c h w M alpha`      | c·h·w bytes, one element per byte        |
//! | `pow2w v1 n kh kw c N`          | `beta b_1 .. b_n` line, then one code byte per weight |
//! | `fixs v1 count K d`             | count i16 mantissas                      |
//! | `i8w v1 n c scale`              | n·c i8 weights                           |
//! | `i16v v1 count`                 | count i16 values                         |
//! | `htensor v1 c h w scale`        | c·h·w i16 values                         |
//!
//! An `alpha` or `scale` of `0` means "unknown".

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use super::{Dims, FixedScalar, I16Tensor, Int8Weights, Pow2Code, Pow2Weights, QTensor};
use crate::error::{Error, Result};

struct Header<'a> {
    src: &'a str,
    line: usize,
    fields: Vec<String>,
}

impl<'a> Header<'a> {
    fn read(r: &mut impl BufRead, src: &'a str, line: usize, magic: &str) -> Result<Self> {
        let mut text = String::new();
        r.read_line(&mut text)?;
        let fields: Vec<String> = text.split_whitespace().map(str::to_owned).collect();
        if fields.len() < 2 || fields[0] != magic || fields[1] != "v1" {
            return Err(Error::parse(src, line, format!("expected `{magic} v1` header")));
        }
        Ok(Header { src, line, fields })
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if self.fields.len() != n {
            return Err(Error::parse(
                self.src,
                self.line,
                format!("header needs {} fields, got {}", n, self.fields.len()),
            ));
        }
        Ok(())
    }

    fn get<T: FromStr>(&self, i: usize, what: &str) -> Result<T> {
        self.fields[i]
            .parse()
            .map_err(|_| Error::parse(self.src, self.line, format!("bad {what} `{}`", self.fields[i])))
    }
}

fn read_exact_payload(r: &mut impl Read, len: usize, src: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::parse(src, 2, format!("payload shorter than {len} bytes")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::parse(src, 2, "trailing bytes after payload"));
    }
    Ok(buf)
}

fn opt_scale(v: Option<f64>) -> f64 {
    v.unwrap_or(0.0)
}

fn scale_from(v: f64) -> Option<f64> {
    (v > 0.0).then_some(v)
}

pub fn write_qtensor(w: &mut impl Write, t: &QTensor) -> Result<()> {
    let d = t.dims();
    writeln!(
        w,
        "qtensor v1 {} {} {} {} {}",
        d.c,
        d.h,
        d.w,
        t.bits(),
        opt_scale(t.scale())
    )?;
    w.write_all(t.data())?;
    Ok(())
}

pub fn read_qtensor(r: &mut impl BufRead, src: &str) -> Result<QTensor> {
    let h = Header::read(r, src, 1, "qtensor")?;
    h.expect_len(7)?;
    let dims = Dims::new(h.get(2, "c")?, h.get(3, "h")?, h.get(4, "w")?);
    let bits: u8 = h.get(5, "M")?;
    let alpha: f64 = h.get(6, "alpha")?;
    let data = read_exact_payload(r, dims.len(), src)?;
    let t = QTensor::new(dims, bits, data).map_err(|e| Error::parse(src, 2, e))?;
    Ok(match scale_from(alpha) {
        Some(a) => t.with_scale(a),
        None => t,
    })
}

pub fn write_pow2_weights(w: &mut impl Write, wt: &Pow2Weights) -> Result<()> {
    let (kh, kw, c) = wt.kernel_shape();
    writeln!(w, "pow2w v1 {} {} {} {} {}", wt.kernels(), kh, kw, c, wt.bits())?;
    let betas: Vec<String> = wt.betas().iter().map(f64::to_string).collect();
    writeln!(w, "beta {}", betas.join(" "))?;
    let bytes: Vec<u8> = wt.codes().iter().map(|c| c.to_byte()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_pow2_weights(r: &mut impl BufRead, src: &str) -> Result<Pow2Weights> {
    let h = Header::read(r, src, 1, "pow2w")?;
    h.expect_len(7)?;
    let n: usize = h.get(2, "n")?;
    let shape = (h.get(3, "kh")?, h.get(4, "kw")?, h.get(5, "c")?);
    let bits: u8 = h.get(6, "N")?;
    let mut line = String::new();
    r.read_line(&mut line)?;
    let mut it = line.split_whitespace();
    if it.next() != Some("beta") {
        return Err(Error::parse(src, 2, "expected `beta` line"));
    }
    let betas = it
        .map(|s| s.parse::<f64>().map_err(|_| Error::parse(src, 2, format!("bad β `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    let bytes = read_exact_payload(r, n * shape.0 * shape.1 * shape.2, src)?;
    let codes = bytes
        .into_iter()
        .map(|b| Pow2Code::from_byte(b, bits))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::parse(src, 3, e))?;
    Pow2Weights::new(n, shape, bits, codes, betas).map_err(|e| Error::parse(src, 3, e))
}

/// Write a vector of scalars sharing one width and binary point.
pub fn write_fixed_vec(w: &mut impl Write, v: &[FixedScalar]) -> Result<()> {
    let (bits, d) = match v.first() {
        Some(f) => (f.bits(), f.dexp()),
        None => (8, 0),
    };
    if v.iter().any(|f| f.bits() != bits || f.dexp() != d) {
        return Err(Error::arg("fixed-point vector must share width and binary point"));
    }
    writeln!(w, "fixs v1 {} {} {}", v.len(), bits, d)?;
    for f in v {
        let m = i16::try_from(f.mantissa()).map_err(|_| Error::arg("mantissa exceeds 16 bits"))?;
        w.write_all(&m.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_fixed_vec(r: &mut impl BufRead, src: &str) -> Result<Vec<FixedScalar>> {
    let h = Header::read(r, src, 1, "fixs")?;
    h.expect_len(5)?;
    let count: usize = h.get(2, "count")?;
    let bits: u8 = h.get(3, "K")?;
    let d: i8 = h.get(4, "d")?;
    let bytes = read_exact_payload(r, count * 2, src)?;
    bytes
        .chunks_exact(2)
        .map(|b| FixedScalar::new(i32::from(i16::from_le_bytes([b[0], b[1]])), d, bits))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::parse(src, 2, e))
}

pub fn write_int8_weights(w: &mut impl Write, wt: &Int8Weights) -> Result<()> {
    writeln!(w, "i8w v1 {} {} {}", wt.kernels(), wt.channels(), wt.scale())?;
    let bytes: Vec<u8> = wt.data().iter().map(|&v| v as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_int8_weights(r: &mut impl BufRead, src: &str) -> Result<Int8Weights> {
    let h = Header::read(r, src, 1, "i8w")?;
    h.expect_len(5)?;
    let n: usize = h.get(2, "n")?;
    let c: usize = h.get(3, "c")?;
    let scale: f64 = h.get(4, "scale")?;
    let bytes = read_exact_payload(r, n * c, src)?;
    Int8Weights::new(n, c, scale, bytes.into_iter().map(|b| b as i8).collect())
}

pub fn write_i16_vec(w: &mut impl Write, v: &[i16]) -> Result<()> {
    writeln!(w, "i16v v1 {}", v.len())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_i16_vec(r: &mut impl BufRead, src: &str) -> Result<Vec<i16>> {
    let h = Header::read(r, src, 1, "i16v")?;
    h.expect_len(3)?;
    let count: usize = h.get(2, "count")?;
    let bytes = read_exact_payload(r, count * 2, src)?;
    Ok(bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect())
}

pub fn write_i16_tensor(w: &mut impl Write, t: &I16Tensor) -> Result<()> {
    let d = t.dims();
    writeln!(w, "htensor v1 {} {} {} {}", d.c, d.h, d.w, opt_scale(t.scale()))?;
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_i16_tensor(r: &mut impl BufRead, src: &str) -> Result<I16Tensor> {
    let h = Header::read(r, src, 1, "htensor")?;
    h.expect_len(6)?;
    let dims = Dims::new(h.get(2, "c")?, h.get(3, "h")?, h.get(4, "w")?);
    let scale: f64 = h.get(5, "scale")?;
    let bytes = read_exact_payload(r, dims.len() * 2, src)?;
    let data = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    let t = I16Tensor::new(dims, data)?;
    Ok(match scale_from(scale) {
        Some(s) => t.with_scale(s),
        None => t,
    })
}

/// Open `path` and parse it with `read`.
pub fn load<T>(
    path: &Path,
    read: impl FnOnce(&mut BufReader<File>, &str) -> Result<T>,
) -> Result<T> {
    let mut r = BufReader::new(File::open(path).map_err(Error::file(path))?);
    read(&mut r, &path.display().to_string())
}

/// Create `path` and serialise into it with `write`.
pub fn save(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::file(path))?);
    write(&mut w)?;
    w.flush()?;
    Ok(())
}
