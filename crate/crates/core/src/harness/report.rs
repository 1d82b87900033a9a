use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fixq::Dims;
use crate::kernels::PeConfig;
use crate::quantizer::RealTensor;

/// Measured throughput the PE_11 array is compared against, GOP/s.
pub const REFERENCE_ACHIEVED_GOPS: f64 = 202.76;

/// Peak GOP/s of one PE type: two operations per MAC, `K_T x C_T` MACs per
/// cycle.
pub fn peak_throughput(pe: PeConfig, freq_mhz: f64) -> f64 {
    2.0 * (pe.k_t * pe.c_t) as f64 * freq_mhz / 1000.0
}

pub fn peak_report(freq_mhz: f64) -> String {
    let mut s = format!("{:<8} {:>4} {:>4} {:>10}\n", "pe", "K_T", "C_T", "GOP/s");
    for pe in PeConfig::ALL {
        let _ = writeln!(s, "{:<8} {:>4} {:>4} {:>10.2}", pe.name, pe.k_t, pe.c_t, peak_throughput(pe, freq_mhz));
    }
    let peak = peak_throughput(PeConfig::PE_11, freq_mhz);
    let verdict = if REFERENCE_ACHIEVED_GOPS <= peak { "within" } else { "above" };
    let _ = writeln!(
        s,
        "reference achieved {REFERENCE_ACHIEVED_GOPS} GOP/s is {verdict} the PE_11 peak of {peak:.2} GOP/s at {freq_mhz} MHz"
    );
    s
}

/// Parse a binary (P6) PPM image into a `3 x h x w` tensor scaled to [0, 1].
pub fn read_ppm(bytes: &[u8], src: &str) -> Result<RealTensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(src, 1, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(Error::parse(src, 1, "only binary P6 PPM is supported"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::parse(src, 1, format!("bad PPM {what} {t:?}")))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if !(1..=255).contains(&max) {
        return Err(Error::parse(src, 1, format!("PPM maxval {max} is not 8-bit")));
    }
    let body = &bytes[(pos + 1).min(bytes.len())..];
    if body.len() != 3 * w * h {
        return Err(Error::parse(src, 1, format!("PPM payload is {} bytes, expected {}", body.len(), 3 * w * h)));
    }
    let dims = Dims::new(3, h, w);
    let mut data = vec![0.0; dims.len()];
    for (p, px) in body.chunks_exact(3).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            data[ch * h * w + p] = f64::from(v) / max as f64;
        }
    }
    RealTensor::new(dims, data)
}

pub fn write_ppm(t: &RealTensor) -> Vec<u8> {
    let d = t.dims();
    let mut out = format!("P6\n{} {}\n255\n", d.w, d.h).into_bytes();
    for p in 0..d.h * d.w {
        for ch in 0..3.min(d.c) {
            out.push((t.data()[ch * d.h * d.w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}
