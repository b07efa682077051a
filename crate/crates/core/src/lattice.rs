//! Integer-lattice geometry under the supremum metric.
//!
//! Every box is a half-open product `[lower, upper)`, so pavings tile the
//! lattice exactly and nested kernel boxes never share a face by accident.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("dimension {0} outside 1..={MAX_DIM}")]
    DimensionOutOfRange(usize),
    #[error("kernel boxes need 5R <= L, got R = {ring}, L = {side} (5R = {})", 5 * ring)]
    KernelCondition { side: u64, ring: u64 },
    #[error("box sides must be positive")]
    EmptyBox,
    #[error("invalid range: {lo} > {hi}")]
    InvalidRange { lo: u32, hi: u32 },
}

/// A point of `Z^d`. Unused trailing coordinates are kept at zero so the
/// derived orderings and hashes only see the live coordinates.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    dim: u8,
    coords: [i64; MAX_DIM],
}

impl Site {
    pub fn new(coords: &[i64]) -> Result<Self, GeometryError> {
        let d = coords.len();
        if d == 0 || d > MAX_DIM {
            return Err(GeometryError::DimensionOutOfRange(d));
        }
        let mut c = [0; MAX_DIM];
        c[..d].copy_from_slice(coords);
        Ok(Self { dim: d as u8, coords: c })
    }

    /// The origin of `Z^d`. Panics when `d` is outside `1..=MAX_DIM`.
    pub fn origin(d: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "dimension {d} unsupported");
        Self { dim: d as u8, coords: [0; MAX_DIM] }
    }

    /// All coordinates equal to `v`.
    pub fn splat(d: usize, v: i64) -> Self {
        let mut s = Self::origin(d);
        s.coords[..d].fill(v);
        s
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim()]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> i64 {
        self.coords()[axis]
    }

    /// `self + delta * e_axis`.
    #[inline]
    pub fn shifted(&self, axis: usize, delta: i64) -> Self {
        let mut s = *self;
        s.coords[axis] += delta;
        s
    }

    pub fn checked_add(&self, other: &Site) -> Result<Site, GeometryError> {
        same_dim(self, other)?;
        Ok(self.zip_with(other, |a, b| a + b))
    }

    pub fn checked_sub(&self, other: &Site) -> Result<Site, GeometryError> {
        same_dim(self, other)?;
        Ok(self.zip_with(other, |a, b| a - b))
    }

    pub fn scaled(&self, k: i64) -> Site {
        let mut s = *self;
        s.coords[..self.dim()].iter_mut().for_each(|c| *c *= k);
        s
    }

    /// Supremum norm.
    pub fn norm_linf(&self) -> u64 {
        self.coords().iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }

    fn zip_with(&self, other: &Site, f: impl Fn(i64, i64) -> i64) -> Site {
        let mut s = *self;
        for i in 0..self.dim() {
            s.coords[i] = f(self.coords[i], other.coords[i]);
        }
        s
    }

    /// The `3^d - 1` sites at supremum distance exactly one.
    pub fn king_neighbors(&self) -> impl Iterator<Item = Site> + '_ {
        let d = self.dim();
        let total = 3usize.pow(d as u32);
        (0..total).filter_map(move |mut code| {
            let mut s = *self;
            let mut moved = false;
            for axis in 0..d {
                let delta = (code % 3) as i64 - 1;
                code /= 3;
                s.coords[axis] += delta;
                moved |= delta != 0;
            }
            moved.then_some(s)
        })
    }

    /// The `2d` nearest neighbours, ordered `+e_1, -e_1, +e_2, ...`.
    pub fn neighbors(&self) -> impl Iterator<Item = Site> + '_ {
        (0..2 * self.dim()).map(move |k| self.shifted(k / 2, if k % 2 == 0 { 1 } else { -1 }))
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str(")")
    }
}

fn same_dim(a: &Site, b: &Site) -> Result<(), GeometryError> {
    if a.dim == b.dim {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { left: a.dim(), right: b.dim() })
    }
}

/// Supremum distance between two sites of equal dimension.
pub fn dist_linf(x: &Site, y: &Site) -> Result<u64, GeometryError> {
    same_dim(x, y)?;
    Ok(x.coords().iter().zip(y.coords()).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0))
}

/// `{x in A : d(x, Z^d \ A) = 1}`.
pub fn internal_boundary(set: &BTreeSet<Site>) -> BTreeSet<Site> {
    set.iter()
        .filter(|x| x.king_neighbors().any(|y| !set.contains(&y)))
        .copied()
        .collect()
}

/// Half-open integer box `[lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SiteBox {
    lower: Site,
    upper: Site,
}

impl SiteBox {
    pub fn new(lower: Site, sides: &[u64]) -> Result<Self, GeometryError> {
        if sides.len() != lower.dim() {
            return Err(GeometryError::DimensionMismatch { left: lower.dim(), right: sides.len() });
        }
        if sides.contains(&0) {
            return Err(GeometryError::EmptyBox);
        }
        let mut upper = lower;
        for (axis, &s) in sides.iter().enumerate() {
            upper.coords[axis] += s as i64;
        }
        Ok(Self { lower, upper })
    }

    /// `[lower, lower + side)^d`.
    pub fn cube(lower: Site, side: u64) -> Result<Self, GeometryError> {
        if side == 0 {
            return Err(GeometryError::EmptyBox);
        }
        let mut upper = lower;
        upper.coords[..lower.dim()].iter_mut().for_each(|c| *c += side as i64);
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn lower(&self) -> Site {
        self.lower
    }

    /// Exclusive upper corner.
    pub fn upper(&self) -> Site {
        self.upper
    }

    pub fn side(&self, axis: usize) -> u64 {
        (self.upper.get(axis) - self.lower.get(axis)) as u64
    }

    pub fn volume(&self) -> u64 {
        (0..self.dim()).map(|a| self.side(a)).product()
    }

    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        x.dim() == self.dim()
            && (0..self.dim()).all(|a| self.lower.get(a) <= x.get(a) && x.get(a) < self.upper.get(a))
    }

    pub fn contains_box(&self, other: &SiteBox) -> bool {
        other.dim() == self.dim()
            && (0..self.dim()).all(|a| {
                self.lower.get(a) <= other.lower.get(a) && other.upper.get(a) <= self.upper.get(a)
            })
    }

    /// Whether `x` lies on the internal boundary of this box.
    #[inline]
    pub fn on_internal_boundary(&self, x: &Site) -> bool {
        self.contains(x)
            && (0..self.dim()).any(|a| x.get(a) == self.lower.get(a) || x.get(a) == self.upper.get(a) - 1)
    }

    /// The box shrunk by `w` on every face, if anything is left.
    pub fn shrink(&self, w: u64) -> Option<SiteBox> {
        let w = w as i64;
        let mut lower = self.lower;
        let mut upper = self.upper;
        for a in 0..self.dim() {
            lower.coords[a] += w;
            upper.coords[a] -= w;
            if lower.coords[a] >= upper.coords[a] {
                return None;
            }
        }
        Some(SiteBox { lower, upper })
    }

    pub fn translated(&self, by: &Site) -> SiteBox {
        SiteBox { lower: self.lower.zip_with(by, |a, b| a + b), upper: self.upper.zip_with(by, |a, b| a + b) }
    }

    /// Sites in lexicographic order (last axis fastest).
    pub fn sites(&self) -> BoxSites {
        BoxSites { bx: *self, next: Some(self.lower) }
    }
}

pub struct BoxSites {
    bx: SiteBox,
    next: Option<Site>,
}

impl Iterator for BoxSites {
    type Item = Site;

    fn next(&mut self) -> Option<Site> {
        let cur = self.next?;
        let mut n = cur;
        let mut axis = self.bx.dim();
        loop {
            if axis == 0 {
                self.next = None;
                break;
            }
            axis -= 1;
            n.coords[axis] += 1;
            if n.coords[axis] < self.bx.upper.get(axis) {
                self.next = Some(n);
                break;
            }
            n.coords[axis] = self.bx.lower.get(axis);
        }
        Some(cur)
    }
}

/// The paving `{[0, side)^d + side*k + offset : k in Z^d}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Paving {
    side: u64,
    offset: Site,
}

impl Paving {
    pub fn new(side: u64, offset: Site) -> Result<Self, GeometryError> {
        if side == 0 {
            return Err(GeometryError::EmptyBox);
        }
        Ok(Self { side, offset })
    }

    pub fn side(&self) -> u64 {
        self.side
    }

    pub fn offset(&self) -> Site {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.offset.dim()
    }

    /// Index of the tile containing `x`.
    pub fn index_of(&self, x: &Site) -> Result<Site, GeometryError> {
        let rel = x.checked_sub(&self.offset)?;
        let s = self.side as i64;
        Ok(rel.zip_with(&rel, |a, _| a.div_euclid(s)))
    }

    pub fn tile(&self, k: &Site) -> SiteBox {
        let lower = k.scaled(self.side as i64).zip_with(&self.offset, |a, b| a + b);
        SiteBox::cube(lower, self.side).expect("side is positive")
    }

    /// Tile index and tile containing `x`.
    pub fn locate(&self, x: &Site) -> Result<(Site, SiteBox), GeometryError> {
        let k = self.index_of(x)?;
        Ok((k, self.tile(&k)))
    }

    /// Middle-half sub-box `[side/4, 3 side/4)` of tile `k`, rounded to the
    /// integers it contains.
    pub fn half_kernel(&self, k: &Site) -> Option<SiteBox> {
        let lo = self.side.div_ceil(4);
        let hi = (3 * self.side).div_ceil(4);
        if hi <= lo {
            return None;
        }
        let tile = self.tile(k);
        let lower = tile.lower.zip_with(&tile.lower, |a, _| a + lo as i64);
        SiteBox::cube(lower, hi - lo).ok()
    }

    /// Whether `x` sits in the half-kernel of its own tile.
    pub fn in_half_kernel(&self, x: &Site) -> bool {
        let s = self.side as i64;
        let lo = self.side.div_ceil(4) as i64;
        let hi = (3 * self.side).div_ceil(4) as i64;
        x.dim() == self.dim()
            && (0..self.dim()).all(|a| {
                let r = (x.get(a) - self.offset.get(a)).rem_euclid(s);
                lo <= r && r < hi
            })
    }

    /// True iff no tile holds more than `zeta * side^d` of the points.
    pub fn is_balanced(&self, points: &[Site], zeta: f64) -> Result<bool, GeometryError> {
        let cap = zeta * libm::pow(self.side as f64, self.dim() as f64);
        let mut keys = points.iter().map(|p| self.index_of(p)).collect::<Result<Vec<_>, _>>()?;
        keys.sort_unstable();
        let mut i = 0;
        while i < keys.len() {
            let j = keys[i..].iter().position(|k| *k != keys[i]).map_or(keys.len(), |p| i + p);
            if (j - i) as f64 > cap {
                return Ok(false);
            }
            i = j;
        }
        Ok(true)
    }
}

/// Nested kernel boxes `C2 ⊂ C1 ⊂ C0` of one tile at some scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelTriple {
    pub outer: SiteBox,
    pub middle: SiteBox,
    pub inner: SiteBox,
    pub ring: u64,
}

/// `C0 = [0,L)^d + L i`, `C1 = [R, L-R)^d + L i`, `C2 = [2R, L-2R)^d + L i`.
pub fn kernel_triple(side: u64, ring: u64, index: &Site) -> Result<KernelTriple, GeometryError> {
    if ring == 0 {
        return Err(GeometryError::EmptyBox);
    }
    if 5 * ring > side {
        return Err(GeometryError::KernelCondition { side, ring });
    }
    let corner = index.scaled(side as i64);
    let outer = SiteBox::cube(corner, side)?;
    let middle = outer.shrink(ring).ok_or(GeometryError::EmptyBox)?;
    let inner = outer.shrink(2 * ring).ok_or(GeometryError::EmptyBox)?;
    Ok(KernelTriple { outer, middle, inner, ring })
}

/// One piece of the dyadic decomposition: the ball `|x| <= 2^index` when
/// `inner` is `None`, otherwise the shell `2^(index-1) < |x| <= 2^index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annulus {
    pub index: u32,
    pub inner: Option<u64>,
    pub outer: u64,
}

impl Annulus {
    pub fn contains(&self, x: &Site) -> bool {
        let n = x.norm_linf();
        n <= self.outer && self.inner.is_none_or(|r| n > r)
    }

    /// Explicit site list in dimension `d`.
    pub fn sites(&self, d: usize) -> Vec<Site> {
        let r = self.outer as i64;
        SiteBox::cube(Site::splat(d, -r), 2 * self.outer + 1)
            .expect("nonempty")
            .sites()
            .filter(|x| self.contains(x))
            .collect()
    }
}

/// Ball `B(0, 2^i0)` followed by the shells up to `2^i_max`.
pub fn dyadic_annuli(i0: u32, i_max: u32) -> Result<Vec<Annulus>, GeometryError> {
    if i_max < i0 {
        return Err(GeometryError::InvalidRange { lo: i0, hi: i_max });
    }
    if i_max > 62 {
        return Err(GeometryError::InvalidRange { lo: i_max, hi: 62 });
    }
    let mut out = Vec::with_capacity((i_max - i0 + 1) as usize);
    out.push(Annulus { index: i0, inner: None, outer: 1 << i0 });
    out.extend((i0 + 1..=i_max).map(|i| Annulus { index: i, inner: Some(1 << (i - 1)), outer: 1 << i }));
    Ok(out)
}

/// Which piece of `dyadic_annuli(i0, i_max)` holds `x`, if any.
pub fn annulus_index(x: &Site, i0: u32, i_max: u32) -> Option<u32> {
    let n = x.norm_linf();
    if n <= 1 << i0 {
        return Some(i0);
    }
    // smallest i with n <= 2^i
    let i = 64 - (n - 1).leading_zeros();
    (i <= i_max).then_some(i)
}
