use super::ColumnWindow;
use crate::error::Result;
use crate::fixq::{Dims, QTensor};

/// Input feature map split over three IARAM banks by row: bank `j` holds
/// rows `r` with `r % 3 == j`, so any three consecutive rows come from
/// three different banks in the same cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct BankedFeature {
    dims: Dims,
    bits: u8,
    window: ColumnWindow,
    banks: [Vec<u8>; 3],
}

const fn rows_in_bank(h: usize, bank: usize) -> usize {
    if h > bank {
        (h - bank).div_ceil(3)
    } else {
        0
    }
}

impl BankedFeature {
    pub fn new(t: &QTensor) -> Self {
        Self::from_window(t, ColumnWindow::whole(t.dims().w))
    }

    /// Bank a column slab that sits at `window` inside a wider map.
    pub fn from_window(t: &QTensor, window: ColumnWindow) -> Self {
        let d = t.dims();
        let mut banks: [Vec<u8>; 3] =
            std::array::from_fn(|j| Vec::with_capacity(d.c * rows_in_bank(d.h, j) * d.w));
        for ch in 0..d.c {
            for r in 0..d.h {
                let start = d.index(ch, r, 0);
                banks[r % 3].extend_from_slice(&t.data()[start..start + d.w]);
            }
        }
        BankedFeature {
            dims: d,
            bits: t.bits(),
            window,
            banks,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn window(&self) -> ColumnWindow {
        self.window
    }

    pub fn bank(&self, j: usize) -> &[u8] {
        &self.banks[j]
    }

    #[inline]
    fn read(&self, ch: usize, r: usize, lx: usize) -> u8 {
        let bank = r % 3;
        let rows = rows_in_bank(self.dims.h, bank);
        self.banks[bank][(ch * rows + r / 3) * self.dims.w + lx]
    }

    /// Rows `center - 1 ..= center + 1` at global column `gx`, one per bank.
    #[inline]
    pub fn fetch_column(&self, ch: usize, center: usize, gx: isize) -> Result<[u8; 3]> {
        let Some(lx) = self.window.local(gx, self.dims.w)? else {
            return Ok([0; 3]);
        };
        let mut out = [0u8; 3];
        for (dy, slot) in out.iter_mut().enumerate() {
            let r = center as isize + dy as isize - 1;
            if r >= 0 && (r as usize) < self.dims.h {
                *slot = self.read(ch, r as usize, lx);
            }
        }
        Ok(out)
    }

    /// Reassemble the row-major tensor.
    pub fn to_tensor(&self) -> Result<QTensor> {
        let d = self.dims;
        let mut data = Vec::with_capacity(d.len());
        for ch in 0..d.c {
            for r in 0..d.h {
                data.extend((0..d.w).map(|x| self.read(ch, r, x)));
            }
        }
        QTensor::new(d, self.bits, data)
    }
}
