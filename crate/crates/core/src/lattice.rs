//! Lattice geometries, spin configurations, sector constraints and Monte Carlo
//! move proposals.
//!
//! Configurations are addressed by an integer index: site `i` maps to bit `i`,
//! and a set bit means the spin value is `-1`. With this convention the index
//! of a configuration is directly its position in a fast Walsh-Hadamard
//! transform, and a [`SubsetMask`] of flipped spins is simply XOR-ed into it.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest system that can be addressed by a `u64` index.
pub const MAX_SPINS: usize = 64;
/// Largest unconstrained space that [`enumerate_sector`] will walk.
pub const MAX_ENUMERATED_SPINS: usize = 26;
/// Largest `Lx*Ly + 1` for which the Gauss-law sector is enumerated.
pub const MAX_GAUSS_SECTOR_BITS: usize = 20;
/// Default probability of proposing a winding loop instead of a plaquette.
pub const DEFAULT_P_LOOP: f64 = 0.05;

/// A subset of sites, stored as a bitset. Indexes monomials and Fourier
/// coefficients.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetMask(pub u64);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    /// The full set `[L]`.
    pub fn full(num_sites: usize) -> Self {
        if num_sites >= 64 {
            SubsetMask(u64::MAX)
        } else {
            SubsetMask((1u64 << num_sites) - 1)
        }
    }

    pub fn from_sites<I: IntoIterator<Item = usize>>(sites: I) -> Self {
        SubsetMask(sites.into_iter().fold(0, |m, s| m | (1u64 << s)))
    }

    /// Number of sites in the subset, `|S|`.
    #[inline]
    pub fn degree(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn contains(self, site: usize) -> bool {
        self.0 >> site & 1 == 1
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Sites in ascending order.
    pub fn sites(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let s = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(s)
            }
        })
    }

    pub fn fits(self, num_sites: usize) -> bool {
        self.0 & !Self::full(num_sites).0 == 0
    }
}

impl fmt::Debug for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.sites()).finish()
    }
}

impl std::ops::BitXor for SubsetMask {
    type Output = SubsetMask;
    fn bitxor(self, rhs: Self) -> Self {
        SubsetMask(self.0 ^ rhs.0)
    }
}

/// Computational basis a configuration is written in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    SigmaZ,
    SigmaX,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeKind {
    /// Spins on the sites of an `Lx x Ly` square lattice.
    SquareSites,
    /// Spins on the links of an `Lx x Ly` square lattice (toric code).
    SquareLinks,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Periodic,
    Open,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    kind: LatticeKind,
    #[serde(rename = "Lx")]
    lx: usize,
    #[serde(rename = "Ly")]
    ly: usize,
    #[serde(default)]
    boundary: Boundary,
}

impl TryFrom<RawGeometry> for LatticeGeometry {
    type Error = Error;
    fn try_from(raw: RawGeometry) -> Result<Self> {
        LatticeGeometry::new(raw.kind, raw.lx, raw.ly, raw.boundary)
    }
}

/// A square lattice with spins either on its sites or on its links.
///
/// Links are indexed horizontal-first: the horizontal link leaving site
/// `(x, y)` to the right has index `y*Lx + x`, the vertical link leaving it
/// upwards has index `Lx*Ly + y*Lx + x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry")]
pub struct LatticeGeometry {
    pub kind: LatticeKind,
    #[serde(rename = "Lx")]
    pub lx: usize,
    #[serde(rename = "Ly")]
    pub ly: usize,
    pub boundary: Boundary,
}

impl LatticeGeometry {
    pub fn new(kind: LatticeKind, lx: usize, ly: usize, boundary: Boundary) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::Geometry(format!("Lx and Ly must be positive, got {lx}x{ly}")));
        }
        let g = LatticeGeometry { kind, lx, ly, boundary };
        if g.num_spins() > MAX_SPINS {
            return Err(Error::SizeGuard {
                what: "spin count",
                requested: g.num_spins(),
                limit: MAX_SPINS,
            });
        }
        if kind == LatticeKind::SquareLinks {
            if boundary == Boundary::Open {
                return Err(Error::Geometry("square-links geometry requires a torus".into()));
            }
            if lx < 2 || ly < 2 {
                return Err(Error::Geometry(format!(
                    "square-links torus needs Lx, Ly >= 2, got {lx}x{ly}"
                )));
            }
        }
        Ok(g)
    }

    pub fn square_sites(lx: usize, ly: usize, boundary: Boundary) -> Result<Self> {
        Self::new(LatticeKind::SquareSites, lx, ly, boundary)
    }

    /// Periodic `lx x ly` chain of sites with `ly == 1` allowed.
    pub fn chain(len: usize, boundary: Boundary) -> Result<Self> {
        Self::new(LatticeKind::SquareSites, len, 1, boundary)
    }

    pub fn square_links(lx: usize, ly: usize) -> Result<Self> {
        Self::new(LatticeKind::SquareLinks, lx, ly, Boundary::Periodic)
    }

    /// Total number of spins `L`.
    pub fn num_spins(&self) -> usize {
        match self.kind {
            LatticeKind::SquareSites => self.lx * self.ly,
            LatticeKind::SquareLinks => 2 * self.lx * self.ly,
        }
    }

    pub fn num_sites(&self) -> usize {
        self.lx * self.ly
    }

    /// Computational frame the models on this geometry are written in.
    pub fn natural_frame(&self) -> Frame {
        match self.kind {
            LatticeKind::SquareSites => Frame::SigmaZ,
            LatticeKind::SquareLinks => Frame::SigmaX,
        }
    }

    pub fn site(&self, x: usize, y: usize) -> usize {
        (y % self.ly) * self.lx + (x % self.lx)
    }

    /// Nearest-neighbour bonds of a square-sites lattice, right bonds first
    /// then up bonds, each in row-major order of the lower-left site.
    ///
    /// With periodic boundaries there are always `2*Lx*Ly` entries; on a
    /// length-2 direction the two wrapping bonds connect the same pair.
    /// A direction of length 1 contributes no bonds.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.num_sites());
        let periodic = self.boundary == Boundary::Periodic;
        for dir in 0..2 {
            let extent = if dir == 0 { self.lx } else { self.ly };
            if extent < 2 {
                continue;
            }
            for y in 0..self.ly {
                for x in 0..self.lx {
                    let (nx, ny) = if dir == 0 { (x + 1, y) } else { (x, y + 1) };
                    let crosses = if dir == 0 { nx >= self.lx } else { ny >= self.ly };
                    if crosses && !periodic {
                        continue;
                    }
                    out.push((self.site(x, y), self.site(nx, ny)));
                }
            }
        }
        out
    }

    pub fn horizontal_link(&self, x: isize, y: isize) -> usize {
        let (x, y) = self.wrap(x, y);
        y * self.lx + x
    }

    pub fn vertical_link(&self, x: isize, y: isize) -> usize {
        let (x, y) = self.wrap(x, y);
        self.lx * self.ly + y * self.lx + x
    }

    fn wrap(&self, x: isize, y: isize) -> (usize, usize) {
        (
            x.rem_euclid(self.lx as isize) as usize,
            y.rem_euclid(self.ly as isize) as usize,
        )
    }

    /// Links touching the site `(x, y)`: right, left, up, down.
    pub fn star_links(&self, x: usize, y: usize) -> [usize; 4] {
        let (x, y) = (x as isize, y as isize);
        [
            self.horizontal_link(x, y),
            self.horizontal_link(x - 1, y),
            self.vertical_link(x, y),
            self.vertical_link(x, y - 1),
        ]
    }

    /// Links around the plaquette whose lower-left corner is `(x, y)`:
    /// bottom, top, left, right.
    pub fn plaquette_links(&self, x: usize, y: usize) -> [usize; 4] {
        let (x, y) = (x as isize, y as isize);
        [
            self.horizontal_link(x, y),
            self.horizontal_link(x, y + 1),
            self.vertical_link(x, y),
            self.vertical_link(x + 1, y),
        ]
    }

    /// Star masks in row-major order of their site. Empty for square-sites.
    pub fn stars(&self) -> Vec<SubsetMask> {
        self.links_only(|x, y| self.star_links(x, y))
    }

    /// Plaquette masks in row-major order of their lower-left corner.
    pub fn plaquettes(&self) -> Vec<SubsetMask> {
        self.links_only(|x, y| self.plaquette_links(x, y))
    }

    fn links_only(&self, f: impl Fn(usize, usize) -> [usize; 4]) -> Vec<SubsetMask> {
        if self.kind != LatticeKind::SquareLinks {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.num_sites());
        for y in 0..self.ly {
            for x in 0..self.lx {
                out.push(SubsetMask::from_sites(f(x, y)));
            }
        }
        out
    }

    /// Horizontal links of row `row`: a non-contractible loop along x.
    pub fn winding_loop_x(&self, row: usize) -> SubsetMask {
        SubsetMask::from_sites((0..self.lx).map(|x| self.horizontal_link(x as isize, row as isize)))
    }

    /// Vertical links of column `col`: a non-contractible loop along y.
    pub fn winding_loop_y(&self, col: usize) -> SubsetMask {
        SubsetMask::from_sites((0..self.ly).map(|y| self.vertical_link(col as isize, y as isize)))
    }
}

/// A length-`L` vector of `±1` spin values in a declared frame.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct SpinConfiguration {
    values: Vec<i8>,
    frame: Frame,
}

impl SpinConfiguration {
    pub fn new(values: Vec<i8>, frame: Frame) -> Result<Self> {
        if values.len() > MAX_SPINS {
            return Err(Error::SizeGuard {
                what: "spin count",
                requested: values.len(),
                limit: MAX_SPINS,
            });
        }
        if let Some(v) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::Contract(format!("spin value {v} is not ±1")));
        }
        Ok(SpinConfiguration { values, frame })
    }

    pub fn all_up(len: usize, frame: Frame) -> Self {
        SpinConfiguration { values: vec![1; len], frame }
    }

    /// Decode an index under the little-endian `bit set ⇔ -1` convention.
    pub fn from_index(len: usize, index: u64, frame: Frame) -> Result<Self> {
        if len < 64 && index >> len != 0 {
            return Err(Error::IndexOutOfRange { index, bits: len });
        }
        let values = (0..len).map(|i| if index >> i & 1 == 1 { -1 } else { 1 }).collect();
        Ok(SpinConfiguration { values, frame })
    }

    pub fn index(&self) -> u64 {
        self.values
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &v)| if v < 0 { acc | 1 << i } else { acc })
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flip(&mut self, mask: SubsetMask) {
        for s in mask.sites() {
            self.values[s] = -self.values[s];
        }
    }

    /// Global spin flip `σ → -σ`.
    pub fn negated(&self) -> Self {
        SpinConfiguration {
            values: self.values.iter().map(|v| -v).collect(),
            frame: self.frame,
        }
    }
}

/// Index of a configuration (bit `i` set iff spin `i` is `-1`).
pub fn config_index(config: &SpinConfiguration) -> u64 {
    config.index()
}

/// Inverse of [`config_index`], in the geometry's natural frame.
pub fn index_config(geometry: &LatticeGeometry, index: u64) -> Result<SpinConfiguration> {
    SpinConfiguration::from_index(geometry.num_spins(), index, geometry.natural_frame())
}

/// Write the `±1` values encoded by `index` into `out`.
#[inline]
pub fn fill_spins(index: u64, out: &mut [i8]) {
    for (i, v) in out.iter_mut().enumerate() {
        *v = 1 - 2 * ((index >> i) & 1) as i8;
    }
}

/// Index of `±1` values, the inverse of [`fill_spins`].
#[inline]
pub fn spins_index(spins: &[i8]) -> u64 {
    spins.iter().enumerate().fold(0, |acc, (i, &v)| if v < 0 { acc | 1 << i } else { acc })
}

/// Restriction of the admissible configurations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SectorConstraint {
    #[default]
    None,
    /// Every star product of σ^x values equals +1.
    GaussLaw,
    /// `Σ_i σ_i = m`.
    FixedMagnetization(i64),
}

impl SectorConstraint {
    pub fn validate(&self, geometry: &LatticeGeometry) -> Result<()> {
        match *self {
            SectorConstraint::None => Ok(()),
            SectorConstraint::GaussLaw => {
                if geometry.kind != LatticeKind::SquareLinks {
                    Err(Error::Contract("gauss-law requires a square-links geometry".into()))
                } else {
                    Ok(())
                }
            }
            SectorConstraint::FixedMagnetization(m) => {
                let l = geometry.num_spins() as i64;
                if m.abs() > l || (l - m) % 2 != 0 {
                    Err(Error::Infeasible(format!("magnetization {m} on {l} spins")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Deterministic membership test on an index. Assumes `validate` passed.
    pub fn is_satisfied(&self, geometry: &LatticeGeometry, index: u64) -> bool {
        match *self {
            SectorConstraint::None => true,
            SectorConstraint::GaussLaw => {
                geometry.stars().iter().all(|s| (index & s.0).count_ones().is_multiple_of(2))
            }
            SectorConstraint::FixedMagnetization(m) => {
                let down = index.count_ones() as i64;
                geometry.num_spins() as i64 - 2 * down == m
            }
        }
    }
}

/// True iff every star's product of incident link values is +1.
pub fn gauss_satisfied(geometry: &LatticeGeometry, config: &SpinConfiguration) -> Result<bool> {
    if geometry.kind != LatticeKind::SquareLinks {
        return Err(Error::Contract("gauss_satisfied needs a square-links geometry".into()));
    }
    if config.frame() != Frame::SigmaX {
        return Err(Error::FrameMismatch { expected: Frame::SigmaX, got: config.frame() });
    }
    if config.len() != geometry.num_spins() {
        return Err(Error::Shape(format!(
            "configuration has {} spins, geometry {}",
            config.len(),
            geometry.num_spins()
        )));
    }
    Ok(SectorConstraint::GaussLaw.is_satisfied(geometry, config.index()))
}

/// Indices of all configurations satisfying `constraint`, ascending.
pub fn sector_indices(geometry: &LatticeGeometry, constraint: SectorConstraint) -> Result<Vec<u64>> {
    constraint.validate(geometry)?;
    let l = geometry.num_spins();
    match constraint {
        SectorConstraint::None => {
            guard_spins(l)?;
            Ok((0..1u64 << l).collect())
        }
        SectorConstraint::FixedMagnetization(m) => {
            guard_spins(l)?;
            let down = ((l as i64 - m) / 2) as u32;
            Ok(fixed_weight_indices(l, down))
        }
        SectorConstraint::GaussLaw => {
            let bits = geometry.num_sites() + 1;
            if bits > MAX_GAUSS_SECTOR_BITS {
                return Err(Error::SizeGuard {
                    what: "gauss-law sector bits (Lx*Ly+1)",
                    requested: bits,
                    limit: MAX_GAUSS_SECTOR_BITS,
                });
            }
            let mut out = cycle_space(&gauss_generators(geometry));
            out.sort_unstable();
            Ok(out)
        }
    }
}

/// Every constraint-satisfying configuration exactly once, in ascending
/// index order.
pub fn enumerate_sector(
    geometry: &LatticeGeometry,
    constraint: SectorConstraint,
) -> Result<impl Iterator<Item = SpinConfiguration>> {
    let l = geometry.num_spins();
    let frame = geometry.natural_frame();
    let indices = sector_indices(geometry, constraint)?;
    Ok(indices.into_iter().map(move |i| {
        SpinConfiguration::from_index(l, i, frame).expect("sector index within range")
    }))
}

fn guard_spins(l: usize) -> Result<()> {
    if l > MAX_ENUMERATED_SPINS {
        Err(Error::SizeGuard { what: "enumerated spins", requested: l, limit: MAX_ENUMERATED_SPINS })
    } else {
        Ok(())
    }
}

/// All `len`-bit integers with exactly `weight` set bits, ascending
/// (Gosper's hack).
fn fixed_weight_indices(len: usize, weight: u32) -> Vec<u64> {
    if weight == 0 {
        return vec![0];
    }
    let limit = 1u64 << len;
    let mut out = Vec::new();
    let mut v: u64 = (1u64 << weight) - 1;
    while v < limit {
        out.push(v);
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    out
}

/// Independent generators of the Gauss-law sector: all plaquettes but the
/// last (their product is the identity) and one winding loop per direction.
fn gauss_generators(geometry: &LatticeGeometry) -> Vec<u64> {
    let mut gens: Vec<u64> = geometry.plaquettes().iter().map(|p| p.0).collect();
    gens.pop();
    gens.push(geometry.winding_loop_x(0).0);
    gens.push(geometry.winding_loop_y(0).0);
    gens
}

/// All XOR combinations of `gens`, generated along a Gray code.
fn cycle_space(gens: &[u64]) -> Vec<u64> {
    let n = gens.len();
    let mut out = Vec::with_capacity(1 << n);
    let mut cur = 0u64;
    out.push(cur);
    for k in 1u64..(1u64 << n) {
        cur ^= gens[k.trailing_zeros() as usize];
        out.push(cur);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    SingleFlip,
    /// Exchange of one up and one down spin (fixed magnetization).
    PairExchange,
    PlaquetteFlip,
    WindingLoopX,
    WindingLoopY,
}

/// A set of spins to flip. Applying a proposal twice is the identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoveProposal {
    pub flip: SubsetMask,
    pub kind: MoveKind,
}

impl MoveProposal {
    #[inline]
    pub fn apply(&self, index: u64) -> u64 {
        index ^ self.flip.0
    }

    pub fn apply_to(&self, config: &mut SpinConfiguration) {
        config.flip(self.flip);
    }
}

/// Draws constraint-preserving moves. Precomputes the plaquette and loop
/// masks of the geometry.
#[derive(Clone, Debug)]
pub struct MoveProposer {
    num_spins: usize,
    constraint: SectorConstraint,
    p_loop: f64,
    plaquettes: Vec<SubsetMask>,
    loops_x: Vec<SubsetMask>,
    loops_y: Vec<SubsetMask>,
}

impl MoveProposer {
    pub fn new(geometry: &LatticeGeometry, constraint: SectorConstraint, p_loop: f64) -> Result<Self> {
        constraint.validate(geometry)?;
        if !(0.0..=1.0).contains(&p_loop) {
            return Err(Error::Contract(format!("p_loop {p_loop} outside [0, 1]")));
        }
        let (loops_x, loops_y) = if constraint == SectorConstraint::GaussLaw {
            (
                (0..geometry.ly).map(|r| geometry.winding_loop_x(r)).collect(),
                (0..geometry.lx).map(|c| geometry.winding_loop_y(c)).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(MoveProposer {
            num_spins: geometry.num_spins(),
            constraint,
            p_loop,
            plaquettes: geometry.plaquettes(),
            loops_x,
            loops_y,
        })
    }

    pub fn constraint(&self) -> SectorConstraint {
        self.constraint
    }

    /// Number of proposals that make up one sweep.
    pub fn sweep_len(&self) -> usize {
        match self.constraint {
            SectorConstraint::GaussLaw => self.plaquettes.len(),
            _ => self.num_spins,
        }
    }

    pub fn propose<R: Rng + ?Sized>(&self, index: u64, rng: &mut R) -> MoveProposal {
        match self.constraint {
            SectorConstraint::None => {
                let s = rng.gen_range(0..self.num_spins);
                MoveProposal { flip: SubsetMask(1 << s), kind: MoveKind::SingleFlip }
            }
            SectorConstraint::FixedMagnetization(_) => {
                let down = index.count_ones() as usize;
                let up = self.num_spins - down;
                if down == 0 || up == 0 {
                    // single-state sector: the identity move
                    return MoveProposal { flip: SubsetMask::EMPTY, kind: MoveKind::PairExchange };
                }
                let a = nth_with_value(index, self.num_spins, true, rng.gen_range(0..down));
                let b = nth_with_value(index, self.num_spins, false, rng.gen_range(0..up));
                MoveProposal { flip: SubsetMask(1 << a | 1 << b), kind: MoveKind::PairExchange }
            }
            SectorConstraint::GaussLaw => {
                if rng.gen::<f64>() < self.p_loop {
                    if rng.gen::<bool>() {
                        let l = self.loops_x[rng.gen_range(0..self.loops_x.len())];
                        MoveProposal { flip: l, kind: MoveKind::WindingLoopX }
                    } else {
                        let l = self.loops_y[rng.gen_range(0..self.loops_y.len())];
                        MoveProposal { flip: l, kind: MoveKind::WindingLoopY }
                    }
                } else {
                    let p = self.plaquettes[rng.gen_range(0..self.plaquettes.len())];
                    MoveProposal { flip: p, kind: MoveKind::PlaquetteFlip }
                }
            }
        }
    }
}

/// Position of the `n`-th spin whose bit equals `set`.
fn nth_with_value(index: u64, len: usize, set: bool, n: usize) -> usize {
    (0..len).filter(|&i| (index >> i & 1 == 1) == set).nth(n).expect("count checked by caller")
}

/// One constraint-preserving proposal using the default loop probability.
pub fn propose_move<R: Rng + ?Sized>(
    geometry: &LatticeGeometry,
    constraint: SectorConstraint,
    config: &SpinConfiguration,
    rng: &mut R,
) -> Result<MoveProposal> {
    let proposer = MoveProposer::new(geometry, constraint, DEFAULT_P_LOOP)?;
    Ok(proposer.propose(config.index(), rng))
}
