use super::{lloyd_run, lloyd_starts, AssignStats, SortedSamples};
use crate::error::{Error, Result};
use crate::fixq::{max_exponent, Pow2Code};

/// Result of fitting one kernel to `{0, ±2^0, .., ±2^E}·β`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pow2Fit {
    pub beta: f64,
    pub codes: Vec<Pow2Code>,
    /// Σ (w - β·q)².
    pub error: f64,
    pub history: Vec<f64>,
}

/// Magnitude levels 0, 1, 2, .., 2^E.
fn magnitudes(bits: u8) -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=max_exponent(bits)).map(|e| 2f64.powi(e.into())))
        .collect()
}

/// Index into `magnitudes` of the nearest level; a tie picks the larger one.
fn nearest_level(mag: f64, beta: f64, mags: &[f64]) -> usize {
    let mut level = 0;
    for j in 1..mags.len() {
        if mag >= 0.5 * (mags[j - 1] + mags[j]) * beta {
            level = j;
        } else {
            break;
        }
    }
    level
}

fn code_for(w: f64, level: usize) -> Pow2Code {
    if level == 0 {
        Pow2Code::ZERO
    } else {
        let sign = if w < 0.0 { -1 } else { 1 };
        // level j > 0 is 2^(j-1); validity follows from the level table
        Pow2Code::new(sign, (level - 1) as u8, 7).expect("level within table")
    }
}

/// Assign every weight to the nearest point of `{0, ±2^0, .., ±2^E}·β`.
pub fn assign_pow2(kernel: &[f64], beta: f64, bits: u8) -> Vec<Pow2Code> {
    let mags = magnitudes(bits);
    kernel
        .iter()
        .map(|&w| code_for(w, nearest_level(w.abs(), beta, &mags)))
        .collect()
}

fn assign(s: &SortedSamples, beta: f64, mags: &[f64]) -> AssignStats {
    let mut stats = AssignStats { sxq: 0.0, sqq: 0.0 };
    let bound = |j: usize| 0.5 * (mags[j - 1] + mags[j]) * beta;
    let mut lo = s.xs.partition_point(|&m| m < bound(1));
    for j in 1..mags.len() {
        let hi = if j + 1 == mags.len() {
            s.xs.len()
        } else {
            s.xs.partition_point(|&m| m < bound(j + 1))
        };
        stats.sxq += mags[j] * s.sum(lo, hi);
        stats.sqq += mags[j] * mags[j] * (hi - lo) as f64;
        lo = hi;
    }
    stats
}

fn direct_error(kernel: &[f64], beta: f64, codes: &[Pow2Code]) -> f64 {
    kernel
        .iter()
        .zip(codes)
        .map(|(&w, c)| {
            let d = w - beta * c.value() as f64;
            d * d
        })
        .sum()
}

/// Fit one kernel's β and codes by Lloyd iterations on the magnitudes.
///
/// The first run starts at `max|w| / 2^E`; further runs start on a uniform
/// grid over `(0, max|w|]`. An all-zero kernel gets β = 1 and zero codes.
pub fn pow2_weight_fit(kernel: &[f64], bits: u8) -> Result<Pow2Fit> {
    if kernel.is_empty() {
        return Err(Error::arg("empty kernel"));
    }
    if !(2..=7).contains(&bits) {
        return Err(Error::arg(format!("weight width {bits} outside 2..=7")));
    }
    if kernel.iter().any(|w| !w.is_finite()) {
        return Err(Error::arg("non-finite weight"));
    }
    let max = kernel.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max == 0.0 {
        return Ok(Pow2Fit {
            beta: 1.0,
            codes: vec![Pow2Code::ZERO; kernel.len()],
            error: 0.0,
            history: vec![0.0],
        });
    }
    let mags = magnitudes(bits);
    let sorted = SortedSamples::new(kernel.iter().map(|w| w.abs()).collect());
    let total_sq = sorted.total_sq();
    let top = mags[mags.len() - 1];
    let mut best: Option<Pow2Fit> = None;
    for start in lloyd_starts(max / top, max) {
        let (beta, history) = lloyd_run(start, total_sq, |b| assign(&sorted, b, &mags));
        let codes = assign_pow2(kernel, beta, bits);
        let error = direct_error(kernel, beta, &codes);
        if best.as_ref().is_none_or(|b| error < b.error) {
            best = Some(Pow2Fit {
                beta,
                codes,
                error,
                history,
            });
        }
    }
    Ok(best.expect("at least one start"))
}
