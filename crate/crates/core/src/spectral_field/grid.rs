use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer wavevector `j` in `Z^d` (d = 2 or 3). Unused trailing components are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaveVector {
    dim: u8,
    comps: [i32; 3],
}

impl WaveVector {
    pub fn new(components: &[i32]) -> Self {
        assert!(
            components.len() == 2 || components.len() == 3,
            "wavevectors live in Z^2 or Z^3"
        );
        let mut comps = [0; 3];
        comps[..components.len()].copy_from_slice(components);
        Self {
            dim: components.len() as u8,
            comps,
        }
    }

    pub fn new2(j1: i32, j2: i32) -> Self {
        Self::new(&[j1, j2])
    }

    pub fn new3(j1: i32, j2: i32, j3: i32) -> Self {
        Self::new(&[j1, j2, j3])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn components(&self) -> &[i32] {
        &self.comps[..self.dim as usize]
    }

    /// `|j|^2 = j_1^2 + ... + j_d^2`.
    #[inline]
    pub fn norm_sq(&self) -> i64 {
        self.components().iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    #[inline]
    pub fn max_norm(&self) -> i32 {
        self.components().iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// First nonzero component is positive; picks one representative of each `{j, -j}` pair.
    pub fn is_canonical(&self) -> bool {
        self.components()
            .iter()
            .find(|&&c| c != 0)
            .is_some_and(|&c| c > 0)
    }
}

impl std::ops::Neg for WaveVector {
    type Output = WaveVector;
    fn neg(self) -> WaveVector {
        let mut out = self;
        for c in out.comps.iter_mut() {
            *c = -*c;
        }
        out
    }
}

impl std::ops::Sub for WaveVector {
    type Output = WaveVector;
    fn sub(self, rhs: WaveVector) -> WaveVector {
        let mut out = self;
        for (a, b) in out.comps.iter_mut().zip(rhs.comps) {
            *a -= b;
        }
        out
    }
}

impl fmt::Debug for WaveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.components())
    }
}

/// Resolution of a spectral field on `T^d`.
///
/// Coefficients live in the box `|j|_inf <= K` where `K = floor(M * p / q)` is the dealias
/// cut for the fraction `p/q` (default 2/3). Transforms use `2M + 2` points per axis, so
/// quadratic products of fields in the box are exact on the box after masking.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    max_mode: usize,
    dealias: (u32, u32),
}

impl GridSpec {
    pub fn new(dim: usize, max_mode: usize) -> Result<Self> {
        Self::with_dealias(dim, max_mode, 2, 3)
    }

    pub fn with_dealias(dim: usize, max_mode: usize, num: u32, den: u32) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::invalid("dimension", format!("{dim} is not 2 or 3")));
        }
        if max_mode == 0 {
            return Err(Error::invalid("max_mode", "must be positive"));
        }
        if num == 0 || den == 0 || num > den {
            return Err(Error::invalid(
                "dealias_fraction",
                format!("{num}/{den} is not in (0, 1]"),
            ));
        }
        let grid = Self {
            dim,
            max_mode,
            dealias: (num, den),
        };
        if grid.cutoff() == 0 {
            return Err(Error::invalid(
                "max_mode",
                format!("dealias cut of M={max_mode} at {num}/{den} retains no modes"),
            ));
        }
        Ok(grid)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn max_mode(&self) -> usize {
        self.max_mode
    }

    pub fn dealias_fraction(&self) -> (u32, u32) {
        self.dealias
    }

    /// Largest retained `|j|_inf` after the dealias cut.
    #[inline]
    pub fn cutoff(&self) -> usize {
        self.max_mode * self.dealias.0 as usize / self.dealias.1 as usize
    }

    /// Physical grid points per axis.
    #[inline]
    pub fn points(&self) -> usize {
        2 * self.max_mode + 2
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.cutoff() + 1
    }

    /// Number of wavevector slots in the coefficient box.
    #[inline]
    pub fn slots(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    /// Slot of `j`, or `None` when outside the box.
    pub fn slot_of(&self, j: &WaveVector) -> Option<usize> {
        if j.dim() != self.dim {
            return None;
        }
        let k = self.cutoff() as i32;
        let side = self.side();
        let mut slot = 0usize;
        for &c in j.components() {
            if c.abs() > k {
                return None;
            }
            slot = slot * side + (c + k) as usize;
        }
        Some(slot)
    }

    pub fn wave_of(&self, slot: usize) -> WaveVector {
        self.tables().waves[slot]
    }

    /// Slot holding `-j` for the `j` stored in `slot`.
    #[inline]
    pub fn conjugate_slot(&self, slot: usize) -> usize {
        self.slots() - 1 - slot
    }

    #[inline]
    pub fn zero_slot(&self) -> usize {
        (self.slots() - 1) / 2
    }

    pub(crate) fn tables(&self) -> Arc<GridTables> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<GridTables>>>> = OnceLock::new();
        let key = (self.dim, self.cutoff());
        let mut map = CACHE
            .get_or_init(|| Mutex::new(HashMap::new()))
            .lock()
            .expect("grid table cache poisoned");
        map.entry(key)
            .or_insert_with(|| Arc::new(GridTables::build(self.dim, self.cutoff())))
            .clone()
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GridSpec(d={}, M={}, K={}, n={})",
            self.dim,
            self.max_mode,
            self.cutoff(),
            self.points()
        )
    }
}

/// Immutable per-box lookups shared between all fields on the same box.
pub(crate) struct GridTables {
    pub waves: Vec<WaveVector>,
    pub norm_sq: Vec<i64>,
}

impl GridTables {
    fn build(dim: usize, cutoff: usize) -> Self {
        let k = cutoff as i32;
        let side = 2 * cutoff + 1;
        let slots = side.pow(dim as u32);
        let mut waves = Vec::with_capacity(slots);
        for slot in 0..slots {
            let mut rem = slot;
            let mut comps = [0i32; 3];
            for a in (0..dim).rev() {
                comps[a] = (rem % side) as i32 - k;
                rem /= side;
            }
            waves.push(WaveVector::new(&comps[..dim]));
        }
        let norm_sq = waves.iter().map(|w| w.norm_sq()).collect();
        Self { waves, norm_sq }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_round_trip_and_conjugates() {
        let grid = GridSpec::new(3, 6).unwrap();
        assert_eq!(grid.cutoff(), 4);
        assert_eq!(grid.points(), 14);
        for slot in 0..grid.slots() {
            let j = grid.wave_of(slot);
            assert_eq!(grid.slot_of(&j), Some(slot));
            assert_eq!(grid.wave_of(grid.conjugate_slot(slot)), -j);
        }
        assert!(grid.wave_of(grid.zero_slot()).is_zero());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(4, 8).is_err());
        assert!(GridSpec::new(2, 0).is_err());
        assert!(GridSpec::with_dealias(2, 8, 4, 3).is_err());
        assert!(GridSpec::new(2, 1).is_err());
    }

    #[test]
    fn canonical_half() {
        assert!(WaveVector::new2(1, -3).is_canonical());
        assert!(WaveVector::new2(0, 2).is_canonical());
        assert!(!WaveVector::new2(0, -2).is_canonical());
        assert!(!WaveVector::new2(0, 0).is_canonical());
    }
}
