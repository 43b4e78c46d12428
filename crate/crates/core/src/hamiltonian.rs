//! Pauli-string Hamiltonians with real couplings.
//!
//! Only σ^x and σ^z appear, so every matrix element in either computational
//! frame is real. A term is diagonal when all of its axes match the frame;
//! otherwise the mismatched sites are flipped and the matched sites contribute
//! a sign.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Frame, LatticeGeometry, LatticeKind, SpinConfiguration, SubsetMask};

/// Largest system for which a dense matrix is assembled.
pub const MAX_DENSE_SPINS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Z,
}

impl Axis {
    /// The axis whose Pauli operator is diagonal in `frame`.
    pub fn diagonal_in(frame: Frame) -> Axis {
        match frame {
            Frame::SigmaZ => Axis::Z,
            Frame::SigmaX => Axis::X,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliTerm {
    pub coupling: f64,
    pub sites: Vec<(usize, Axis)>,
}

impl PauliTerm {
    pub fn new(coupling: f64, sites: Vec<(usize, Axis)>) -> Self {
        PauliTerm { coupling, sites }
    }

    pub fn zz(coupling: f64, i: usize, j: usize) -> Self {
        PauliTerm::new(coupling, vec![(i, Axis::Z), (j, Axis::Z)])
    }

    pub fn single(coupling: f64, i: usize, axis: Axis) -> Self {
        PauliTerm::new(coupling, vec![(i, axis)])
    }

    pub fn product(coupling: f64, sites: impl IntoIterator<Item = usize>, axis: Axis) -> Self {
        PauliTerm::new(coupling, sites.into_iter().map(|s| (s, axis)).collect())
    }

    pub fn is_diagonal_in(&self, frame: Frame) -> bool {
        let d = Axis::diagonal_in(frame);
        self.sites.iter().all(|&(_, a)| a == d)
    }

    fn masks(&self, frame: Frame) -> (u64, u64) {
        let d = Axis::diagonal_in(frame);
        let mut sign = 0u64;
        let mut flip = 0u64;
        for &(s, a) in &self.sites {
            if a == d {
                sign |= 1 << s;
            } else {
                flip |= 1 << s;
            }
        }
        (sign, flip)
    }
}

/// Diagonal element and all nonzero off-diagonal elements of one row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Connections {
    pub diagonal: f64,
    /// `(target index, ⟨σ|H|σ'⟩)`, targets distinct.
    pub off_diagonal: Vec<(u64, f64)>,
}

#[derive(Clone, Debug)]
struct FlipGroup {
    flip: u64,
    terms: Vec<(f64, u64)>,
}

#[derive(Clone, Debug)]
pub struct HamiltonianSpec {
    geometry: LatticeGeometry,
    terms: Vec<PauliTerm>,
    frame: Frame,
    diagonal_terms: Vec<(f64, u64)>,
    flip_groups: Vec<FlipGroup>,
}

#[inline]
fn parity_sign(index: u64, mask: u64) -> f64 {
    if (index & mask).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

impl HamiltonianSpec {
    pub fn new(geometry: LatticeGeometry, terms: Vec<PauliTerm>, frame: Frame) -> Result<Self> {
        let l = geometry.num_spins();
        for t in &terms {
            let mut seen = 0u64;
            for &(s, _) in &t.sites {
                if s >= l {
                    return Err(Error::Contract(format!("site {s} outside 0..{l}")));
                }
                if seen >> s & 1 == 1 {
                    return Err(Error::Contract(format!("site {s} repeated within a term")));
                }
                seen |= 1 << s;
            }
            if !t.coupling.is_finite() {
                return Err(Error::Contract("non-finite coupling".into()));
            }
        }
        let mut diagonal_terms = Vec::new();
        let mut groups: BTreeMap<u64, Vec<(f64, u64)>> = BTreeMap::new();
        for t in &terms {
            let (sign, flip) = t.masks(frame);
            if flip == 0 {
                diagonal_terms.push((t.coupling, sign));
            } else {
                groups.entry(flip).or_default().push((t.coupling, sign));
            }
        }
        let flip_groups = groups.into_iter().map(|(flip, terms)| FlipGroup { flip, terms }).collect();
        Ok(HamiltonianSpec { geometry, terms, frame, diagonal_terms, flip_groups })
    }

    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn terms(&self) -> &[PauliTerm] {
        &self.terms
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn num_spins(&self) -> usize {
        self.geometry.num_spins()
    }

    pub fn is_diagonal(&self) -> bool {
        self.flip_groups.is_empty()
    }

    /// Distinct flip masks of the off-diagonal terms.
    pub fn flip_masks(&self) -> impl Iterator<Item = SubsetMask> + '_ {
        self.flip_groups.iter().map(|g| SubsetMask(g.flip))
    }

    #[inline]
    pub fn diagonal(&self, index: u64) -> f64 {
        self.diagonal_terms.iter().map(|&(c, m)| c * parity_sign(index, m)).sum()
    }

    /// Calls `f(target, element)` for every nonzero off-diagonal element of
    /// row `index`.
    #[inline]
    pub fn for_each_off_diagonal(&self, index: u64, mut f: impl FnMut(u64, f64)) {
        for g in &self.flip_groups {
            let el: f64 = g.terms.iter().map(|&(c, m)| c * parity_sign(index, m)).sum();
            if el != 0.0 {
                f(index ^ g.flip, el);
            }
        }
    }

    pub fn connections_index(&self, index: u64) -> Connections {
        let mut off_diagonal = Vec::with_capacity(self.flip_groups.len());
        self.for_each_off_diagonal(index, |t, e| off_diagonal.push((t, e)));
        Connections { diagonal: self.diagonal(index), off_diagonal }
    }

    /// Row `⟨σ|H|·⟩` for a configuration in the spec's frame.
    pub fn connections(&self, config: &SpinConfiguration) -> Result<Connections> {
        if config.frame() != self.frame {
            return Err(Error::FrameMismatch { expected: self.frame, got: config.frame() });
        }
        if config.len() != self.num_spins() {
            return Err(Error::Shape(format!(
                "configuration has {} spins, Hamiltonian {}",
                config.len(),
                self.num_spins()
            )));
        }
        Ok(self.connections_index(config.index()))
    }

    /// `H·x` on the full `2^L` basis.
    pub fn apply_full(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), 1 << self.num_spins());
        y.par_iter_mut().enumerate().with_min_len(1024).for_each(|(i, yi)| {
            let i = i as u64;
            let mut acc = self.diagonal(i) * x[i as usize];
            self.for_each_off_diagonal(i, |t, e| acc += e * x[t as usize]);
            *yi = acc;
        });
    }

    /// Dense `2^L x 2^L` matrix, rows assembled from [`Self::connections_index`].
    pub fn dense_matrix(&self) -> Result<DMatrix<f64>> {
        let l = self.num_spins();
        if l > MAX_DENSE_SPINS {
            return Err(Error::SizeGuard { what: "dense spins", requested: l, limit: MAX_DENSE_SPINS });
        }
        let n = 1usize << l;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let c = self.connections_index(i as u64);
            m[(i, i)] = c.diagonal;
            for (t, e) in c.off_diagonal {
                m[(i, t as usize)] += e;
            }
        }
        Ok(m)
    }

    /// Same operator written in the other computational frame. Matrix
    /// elements change; the operator does not.
    pub fn with_frame(&self, frame: Frame) -> Result<Self> {
        HamiltonianSpec::new(self.geometry, self.terms.clone(), frame)
    }

    /// Similarity transform `U H U†` with `U = Π_{i∈A} σ_i^axis`. A term picks
    /// up a minus sign for every site where its axis differs from `axis`.
    pub fn conjugate_by_pauli(&self, sites: SubsetMask, axis: Axis) -> Result<Self> {
        if !sites.fits(self.num_spins()) {
            return Err(Error::Contract(format!("mask {sites:?} outside the lattice")));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let anti = t.sites.iter().filter(|&&(s, a)| sites.contains(s) && a != axis).count();
                let coupling = if anti % 2 == 1 { -t.coupling } else { t.coupling };
                PauliTerm::new(coupling, t.sites.clone())
            })
            .collect();
        HamiltonianSpec::new(self.geometry, terms, self.frame)
    }
}

/// Apply `U = Π_{i∈A} σ_i^axis` to a state vector given in `frame`.
///
/// The Pauli that is diagonal in the frame multiplies each amplitude by
/// `(-1)^{N_A(σ)}` (down spins inside `A`); the other one permutes basis
/// states by flipping the spins of `A`.
pub fn apply_pauli_frame(amplitudes: &[f64], frame: Frame, sites: SubsetMask, axis: Axis) -> Vec<f64> {
    if axis == Axis::diagonal_in(frame) {
        amplitudes
            .iter()
            .enumerate()
            .map(|(i, &a)| a * parity_sign(i as u64, sites.0))
            .collect()
    } else {
        (0..amplitudes.len()).map(|i| amplitudes[i ^ sites.0 as usize]).collect()
    }
}

fn require_sites(geometry: &LatticeGeometry) -> Result<()> {
    if geometry.kind != LatticeKind::SquareSites {
        return Err(Error::Geometry("model needs a square-sites geometry".into()));
    }
    Ok(())
}

/// `H = Σ_⟨ij⟩ σ^z_i σ^z_j` with antiferromagnetic coupling +1, σ^z frame.
pub fn build_ising(geometry: &LatticeGeometry) -> Result<HamiltonianSpec> {
    require_sites(geometry)?;
    let terms = geometry.bonds().into_iter().map(|(i, j)| PauliTerm::zz(1.0, i, j)).collect();
    HamiltonianSpec::new(*geometry, terms, Frame::SigmaZ)
}

/// Ising plus a transverse field `-hx Σ_i σ^x_i`.
pub fn build_tfim(geometry: &LatticeGeometry, hx: f64) -> Result<HamiltonianSpec> {
    require_sites(geometry)?;
    let mut terms: Vec<_> =
        geometry.bonds().into_iter().map(|(i, j)| PauliTerm::zz(1.0, i, j)).collect();
    if hx != 0.0 {
        terms.extend((0..geometry.num_spins()).map(|i| PauliTerm::single(-hx, i, Axis::X)));
    }
    HamiltonianSpec::new(*geometry, terms, Frame::SigmaZ)
}

/// Perturbed toric code `-Σ_stars Πσ^x - Σ_plaquettes Πσ^z + hx Σ_i σ^x_i` in
/// the σ^x frame. The field enters with a plus sign, so it favours σ^x = -1.
pub fn build_toric(
    geometry: &LatticeGeometry,
    hx: f64,
    include_star: bool,
    include_plaquette: bool,
) -> Result<HamiltonianSpec> {
    if geometry.kind != LatticeKind::SquareLinks {
        return Err(Error::Geometry("toric code needs a square-links geometry".into()));
    }
    let mut terms = Vec::new();
    if include_star {
        terms.extend(geometry.stars().iter().map(|s| PauliTerm::product(-1.0, s.sites(), Axis::X)));
    }
    if include_plaquette {
        terms.extend(
            geometry.plaquettes().iter().map(|p| PauliTerm::product(-1.0, p.sites(), Axis::Z)),
        );
    }
    if hx != 0.0 {
        terms.extend((0..geometry.num_spins()).map(|i| PauliTerm::single(hx, i, Axis::X)));
    }
    HamiltonianSpec::new(*geometry, terms, Frame::SigmaX)
}
