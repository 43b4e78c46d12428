//! Walsh-Fourier analysis over `{±1}^L`.
//!
//! The forward transform carries the `1/2^L` normalization,
//! `ψ̄(S) = 2^-L Σ_σ ψ(σ) X_S(σ)`, and the inverse `ψ(σ) = Σ_S ψ̄(S) X_S(σ)`
//! is unnormalized. Spectra are stored densely in ascending mask order,
//! which is the natural output order of the butterfly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianSpec, MAX_DENSE_SPINS};
use crate::lattice::{Frame, SpinConfiguration, SubsetMask, MAX_ENUMERATED_SPINS};
use crate::linalg::LinearOperator;

/// Largest system size the correspondence check assembles densely.
pub const MAX_CORRESPONDENCE_SPINS: usize = 10;
/// Largest truncated basis that is materialized.
pub const MAX_TRUNCATED_DIM: usize = 1 << 21;

/// `X_S(σ)` for a configuration given by its index.
#[inline]
pub fn monomial_sign(mask: SubsetMask, index: u64) -> f64 {
    if (mask.0 & index).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// `X_S(σ) = Π_{i∈S} σ_i`.
pub fn monomial_eval(mask: SubsetMask, config: &SpinConfiguration) -> Result<i8> {
    if !mask.fits(config.len()) {
        return Err(Error::Contract(format!("mask {mask:?} outside {} spins", config.len())));
    }
    Ok(mask.sites().map(|s| config.values()[s]).product())
}

fn log2_len(n: usize) -> Result<usize> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(n.trailing_zeros() as usize)
}

/// Unnormalized in-place Walsh-Hadamard butterfly: `out[S] = Σ_σ in[σ] X_S(σ)`.
/// It is its own inverse up to a factor `len`.
pub fn fwht(data: &mut [f64]) -> Result<()> {
    let n = data.len();
    log2_len(n)?;
    let mut h = 1;
    while h < n {
        for block in data.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
    Ok(())
}

/// Dense Fourier spectrum `ψ̄(S)` of a real wave function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorSpectrum {
    coeffs: Vec<f64>,
    num_spins: usize,
}

impl CorrelatorSpectrum {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        let num_spins = log2_len(coeffs.len())?;
        Ok(CorrelatorSpectrum { coeffs, num_spins })
    }

    pub fn num_spins(&self) -> usize {
        self.num_spins
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, mask: SubsetMask) -> f64 {
        self.coeffs[mask.0 as usize]
    }

    /// `Σ_S ψ̄(S)²`, equal to `2^-L Σ_σ ψ(σ)²`.
    pub fn total_weight(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// Coefficients with `|S| ≤ max_order`, in ascending mask order.
    pub fn truncated(&self, max_order: usize) -> impl Iterator<Item = (SubsetMask, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(m, &c)| (SubsetMask(m as u64), c))
            .filter(move |(m, _)| m.degree() <= max_order)
    }

    /// Mask of the largest `|ψ̄(S)|`; ties go to the smallest mask.
    pub fn argmax_abs(&self) -> SubsetMask {
        let mut best = 0;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.abs() > self.coeffs[best].abs() {
                best = i;
            }
        }
        SubsetMask(best as u64)
    }

    pub fn degree_profile(&self) -> DegreeProfile {
        let mut weights = vec![0.0; self.num_spins + 1];
        for (m, c) in self.coeffs.iter().enumerate() {
            weights[(m as u64).count_ones() as usize] += c * c;
        }
        DegreeProfile { weights }
    }
}

/// Squared Fourier weight per correlation order, `w_k = Σ_{|S|=k} ψ̄(S)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeProfile {
    pub weights: Vec<f64>,
}

impl DegreeProfile {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn degree_profile(spectrum: &CorrelatorSpectrum) -> DegreeProfile {
    spectrum.degree_profile()
}

pub fn fourier_forward(wavevector: &[f64]) -> Result<CorrelatorSpectrum> {
    let l = log2_len(wavevector.len())?;
    if l > MAX_ENUMERATED_SPINS {
        return Err(Error::SizeGuard { what: "transform spins", requested: l, limit: MAX_ENUMERATED_SPINS });
    }
    let mut coeffs = wavevector.to_vec();
    fwht(&mut coeffs)?;
    let scale = 1.0 / wavevector.len() as f64;
    coeffs.iter_mut().for_each(|c| *c *= scale);
    CorrelatorSpectrum::new(coeffs)
}

pub fn fourier_inverse(spectrum: &CorrelatorSpectrum) -> Vec<f64> {
    let mut psi = spectrum.coeffs.clone();
    fwht(&mut psi).expect("spectrum length is a power of two");
    psi
}

/// `N(C_n) = Σ_{k≤n} binom(L, k)`.
pub fn count_truncated(num_spins: usize, max_order: usize) -> u64 {
    let n = max_order.min(num_spins);
    let mut binom: u128 = 1;
    let mut total: u128 = 1;
    for k in 1..=n {
        binom = binom * (num_spins - k + 1) as u128 / k as u128;
        total += binom;
    }
    total as u64
}

/// Masks over `num_vars` variables with degree at most `max_order`, in
/// ascending mask order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncatedCorrelatorBasis {
    masks: Vec<SubsetMask>,
    max_order: usize,
    num_vars: usize,
}

impl TruncatedCorrelatorBasis {
    pub fn new(num_vars: usize, max_order: usize) -> Result<Self> {
        if max_order > num_vars {
            return Err(Error::Contract(format!("order {max_order} exceeds {num_vars} variables")));
        }
        if num_vars > MAX_ENUMERATED_SPINS {
            return Err(Error::SizeGuard {
                what: "basis variables",
                requested: num_vars,
                limit: MAX_ENUMERATED_SPINS,
            });
        }
        let dim = count_truncated(num_vars, max_order) as usize;
        if dim > MAX_TRUNCATED_DIM {
            return Err(Error::SizeGuard { what: "truncated basis", requested: dim, limit: MAX_TRUNCATED_DIM });
        }
        let masks: Vec<SubsetMask> = (0..1u64 << num_vars)
            .filter(|m| m.count_ones() as usize <= max_order)
            .map(SubsetMask)
            .collect();
        debug_assert_eq!(masks.len(), dim);
        Ok(TruncatedCorrelatorBasis { masks, max_order, num_vars })
    }

    pub fn masks(&self) -> &[SubsetMask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Scatter truncated coefficients into a dense spectrum buffer.
    pub fn embed(&self, coeffs: &[f64], full: &mut [f64]) {
        full.iter_mut().for_each(|x| *x = 0.0);
        for (m, c) in self.masks.iter().zip(coeffs) {
            full[m.0 as usize] = *c;
        }
    }

    /// Gather the truncated coefficients out of a dense spectrum buffer.
    pub fn truncate(&self, full: &[f64], coeffs: &mut [f64]) {
        for (m, c) in self.masks.iter().zip(coeffs.iter_mut()) {
            *c = full[m.0 as usize];
        }
    }
}

/// Closed-form spectrum of `ψ_A |σ_A⟩ + ψ_B |σ_B⟩` for two complementary
/// configurations given by their masks of down spins.
pub fn afm_spectrum(
    num_spins: usize,
    psi_a: f64,
    psi_b: f64,
    down_a: SubsetMask,
    down_b: SubsetMask,
) -> Result<CorrelatorSpectrum> {
    if num_spins > MAX_ENUMERATED_SPINS {
        return Err(Error::SizeGuard { what: "transform spins", requested: num_spins, limit: MAX_ENUMERATED_SPINS });
    }
    let full = SubsetMask::full(num_spins);
    if !down_a.fits(num_spins) || !down_b.fits(num_spins) || (down_a ^ down_b) != full || down_a.0 & down_b.0 != 0 {
        return Err(Error::Contract(format!("masks {down_a:?} and {down_b:?} are not complementary")));
    }
    let scale = 1.0 / (1u64 << num_spins) as f64;
    let coeffs = (0..1u64 << num_spins)
        .map(|s| {
            let m = SubsetMask(s);
            scale * (psi_a * monomial_sign(m, down_a.0) + psi_b * monomial_sign(m, down_b.0))
        })
        .collect();
    CorrelatorSpectrum::new(coeffs)
}

/// `H` acting on Fourier coefficient vectors: inverse transform, apply `H`
/// row by row, forward transform.
pub struct RotatedHamiltonian<'a> {
    hamiltonian: &'a HamiltonianSpec,
}

pub fn rotate_hamiltonian(hamiltonian: &HamiltonianSpec) -> Result<RotatedHamiltonian<'_>> {
    let l = hamiltonian.num_spins();
    if l > MAX_ENUMERATED_SPINS {
        return Err(Error::SizeGuard { what: "rotated spins", requested: l, limit: MAX_ENUMERATED_SPINS });
    }
    Ok(RotatedHamiltonian { hamiltonian })
}

impl RotatedHamiltonian<'_> {
    /// Dense matrix `h_{S,S'}`.
    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let l = self.hamiltonian.num_spins();
        if l > MAX_DENSE_SPINS {
            return Err(Error::SizeGuard { what: "dense spins", requested: l, limit: MAX_DENSE_SPINS });
        }
        Ok(self.to_dense())
    }
}

impl LinearOperator for RotatedHamiltonian<'_> {
    fn dim(&self) -> usize {
        1 << self.hamiltonian.num_spins()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut psi = x.to_vec();
        fwht(&mut psi).expect("power-of-two length");
        self.hamiltonian.apply_full(&psi, y);
        fwht(y).expect("power-of-two length");
        let scale = 1.0 / x.len() as f64;
        y.iter_mut().for_each(|v| *v *= scale);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrespondenceReport {
    /// Correlator basis of the spec's frame against the other frame.
    pub forward_discrepancy: f64,
    /// Correlator basis of the other frame against the spec's frame.
    pub backward_discrepancy: f64,
    pub max_discrepancy: f64,
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Compares `H` rotated into the correlator basis of one frame with `H`
/// written directly in the other frame, with mask `S` identified with the
/// configuration whose down spins are `S`.
pub fn basis_correspondence_check(hamiltonian: &HamiltonianSpec) -> Result<CorrespondenceReport> {
    let l = hamiltonian.num_spins();
    if l > MAX_CORRESPONDENCE_SPINS {
        return Err(Error::SizeGuard { what: "correspondence spins", requested: l, limit: MAX_CORRESPONDENCE_SPINS });
    }
    let other = match hamiltonian.frame() {
        Frame::SigmaZ => Frame::SigmaX,
        Frame::SigmaX => Frame::SigmaZ,
    };
    let swapped = hamiltonian.with_frame(other)?;
    let forward = max_abs_diff(&rotate_hamiltonian(hamiltonian)?.dense()?, &swapped.dense_matrix()?);
    let backward = max_abs_diff(&rotate_hamiltonian(&swapped)?.dense()?, &hamiltonian.dense_matrix()?);
    Ok(CorrespondenceReport {
        forward_discrepancy: forward,
        backward_discrepancy: backward,
        max_discrepancy: forward.max(backward),
    })
}
