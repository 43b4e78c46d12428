//! Exact ground states and energy floors of truncated correlator bases.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{count_truncated, fwht, TruncatedCorrelatorBasis};
use crate::hamiltonian::HamiltonianSpec;
use crate::lattice::{sector_indices, Frame, SectorConstraint};
use crate::linalg::{lowest_eigenpair, norm, residual_norm, LanczosOptions, LinearOperator};
use crate::restricted::SpanningTreeBasis;

/// Largest Hilbert-space dimension handed to the eigensolver.
pub const MAX_SOLVE_DIM: usize = 1 << 20;
/// Largest truncated correlator basis for a floor computation.
pub const MAX_FLOOR_DIM: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisDescriptor {
    Full { num_spins: usize },
    Sector { constraint: SectorConstraint, dim: usize },
    Correlator { num_spins: usize, max_order: usize, dim: usize },
    RestrictedCorrelator { num_independent: usize, max_order: usize, dim: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenResult {
    pub energy: f64,
    /// Normalized ground vector over the solved basis.
    pub vector: Vec<f64>,
    pub degeneracy: usize,
    pub residual: f64,
    pub iterations: usize,
    pub basis: BasisDescriptor,
    /// Configuration indices of a sector basis, in the order of `vector`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<u64>>,
}

impl EigenResult {
    /// The ground vector scattered onto the full `2^L` configuration space.
    pub fn full_wavevector(&self, num_spins: usize) -> Option<Vec<f64>> {
        match (&self.basis, &self.states) {
            (BasisDescriptor::Full { .. }, _) => Some(self.vector.clone()),
            (BasisDescriptor::Sector { .. }, Some(states)) if num_spins <= 26 => {
                let mut psi = vec![0.0; 1 << num_spins];
                for (s, v) in states.iter().zip(&self.vector) {
                    psi[*s as usize] = *v;
                }
                Some(psi)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub lanczos: LanczosOptions,
    /// Run deflated passes to count the ground-space dimension.
    pub detect_degeneracy: bool,
    /// Levels within `tol * max(1, |E0|)` of the ground energy count as degenerate.
    pub degeneracy_tolerance: f64,
    pub max_degeneracy: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            lanczos: LanczosOptions::default(),
            detect_degeneracy: true,
            degeneracy_tolerance: 1e-8,
            max_degeneracy: 8,
        }
    }
}

impl SolverOptions {
    pub fn energy_only() -> Self {
        SolverOptions { detect_degeneracy: false, ..Default::default() }
    }
}

/// `H` on the whole `2^L` space, applied row by row.
pub struct FullOperator<'a> {
    hamiltonian: &'a HamiltonianSpec,
}

impl<'a> FullOperator<'a> {
    pub fn new(hamiltonian: &'a HamiltonianSpec) -> Result<Self> {
        let l = hamiltonian.num_spins();
        if l > 20 {
            return Err(Error::SizeGuard { what: "full-space dimension", requested: l, limit: 20 });
        }
        Ok(FullOperator { hamiltonian })
    }
}

impl LinearOperator for FullOperator<'_> {
    fn dim(&self) -> usize {
        1 << self.hamiltonian.num_spins()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.hamiltonian.apply_full(x, y);
    }
}

/// Compressed sparse rows of `H` restricted to an invariant subset of
/// configurations.
pub struct SparseOperator {
    diagonal: Vec<f64>,
    row_start: Vec<usize>,
    columns: Vec<u32>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Rows `0..dim`, where row `r` is the configuration `state(r)` and
    /// `position` maps configurations back to rows.
    pub fn build(
        hamiltonian: &HamiltonianSpec,
        dim: usize,
        state: impl Fn(usize) -> u64 + Sync,
        position: impl Fn(u64) -> Option<usize> + Sync,
    ) -> Result<Self> {
        if dim > MAX_SOLVE_DIM {
            return Err(Error::SizeGuard { what: "sparse dimension", requested: dim, limit: MAX_SOLVE_DIM });
        }
        let rows: Vec<(f64, Vec<(u32, f64)>)> = (0..dim)
            .into_par_iter()
            .map(|r| {
                let s = state(r);
                let mut off = Vec::new();
                let mut missing = None;
                hamiltonian.for_each_off_diagonal(s, |t, e| match position(t) {
                    Some(c) => off.push((c as u32, e)),
                    None => missing = Some(t),
                });
                match missing {
                    Some(t) => Err(Error::Contract(format!(
                        "Hamiltonian connects sector state {s} to {t} outside the sector"
                    ))),
                    None => Ok((hamiltonian.diagonal(s), off)),
                }
            })
            .collect::<Result<_>>()?;
        let mut row_start = Vec::with_capacity(dim + 1);
        let mut columns = Vec::new();
        let mut values = Vec::new();
        let mut diagonal = Vec::with_capacity(dim);
        row_start.push(0);
        for (d, off) in rows {
            diagonal.push(d);
            for (c, v) in off {
                columns.push(c);
                values.push(v);
            }
            row_start.push(columns.len());
        }
        Ok(SparseOperator { diagonal, row_start, columns, values })
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.diagonal.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().with_min_len(1024).for_each(|(r, yr)| {
            let mut acc = self.diagonal[r] * x[r];
            for k in self.row_start[r]..self.row_start[r + 1] {
                acc += self.values[k] * x[self.columns[k] as usize];
            }
            *yr = acc;
        });
    }
}

/// An operator on `2^K` configurations projected onto a truncated correlator
/// basis over the same `K` variables.
pub struct CorrelatorFloorOperator<'a, A: LinearOperator + ?Sized> {
    inner: &'a A,
    basis: TruncatedCorrelatorBasis,
}

impl<'a, A: LinearOperator + ?Sized> CorrelatorFloorOperator<'a, A> {
    pub fn new(inner: &'a A, basis: TruncatedCorrelatorBasis) -> Result<Self> {
        if inner.dim() != 1 << basis.num_vars() {
            return Err(Error::Shape(format!(
                "operator of dimension {} under a basis over {} variables",
                inner.dim(),
                basis.num_vars()
            )));
        }
        Ok(CorrelatorFloorOperator { inner, basis })
    }
}

impl<A: LinearOperator + ?Sized> LinearOperator for CorrelatorFloorOperator<'_, A> {
    fn dim(&self) -> usize {
        self.basis.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.inner.dim();
        let mut psi = vec![0.0; n];
        self.basis.embed(x, &mut psi);
        fwht(&mut psi).expect("power-of-two length");
        let mut hpsi = vec![0.0; n];
        self.inner.apply(&psi, &mut hpsi);
        fwht(&mut hpsi).expect("power-of-two length");
        let scale = 1.0 / n as f64;
        self.basis.truncate(&hpsi, y);
        y.iter_mut().for_each(|v| *v *= scale);
    }
}

struct GroundSpace {
    energy: f64,
    vector: Vec<f64>,
    degeneracy: usize,
    residual: f64,
    iterations: usize,
}

fn solve<A: LinearOperator + ?Sized>(op: &A, opts: &SolverOptions) -> Result<GroundSpace> {
    let n = op.dim();
    let (energy, space, iterations) = if n < opts.lanczos.dense_below {
        let eig = SymmetricEigen::new(op.to_dense());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let e0 = eig.eigenvalues[order[0]];
        let tol = opts.degeneracy_tolerance * e0.abs().max(1.0);
        let count = if opts.detect_degeneracy {
            order.iter().take_while(|&&i| eig.eigenvalues[i] - e0 <= tol).count().min(opts.max_degeneracy)
        } else {
            1
        };
        let space: Vec<Vec<f64>> =
            order[..count].iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
        (e0, space, 0)
    } else {
        let first = lowest_eigenpair(op, &[], &opts.lanczos)?;
        let e0 = first.value;
        let mut iterations = first.iterations;
        let mut space = vec![first.vector];
        if opts.detect_degeneracy {
            let tol = opts.degeneracy_tolerance * e0.abs().max(1.0);
            while space.len() < opts.max_degeneracy.min(n) {
                let next = lowest_eigenpair(op, &space, &opts.lanczos)?;
                iterations += next.iterations;
                if next.value - e0 > tol {
                    break;
                }
                space.push(next.vector);
            }
        }
        (e0, space, iterations)
    };
    let degeneracy = space.len();
    let vector = canonical_vector(&space);
    let residual = residual_norm(op, energy, &vector);
    Ok(GroundSpace { energy, vector, degeneracy, residual, iterations })
}

/// The normalized projection of the uniform vector onto the ground space,
/// or the first basis vector if that projection vanishes. The sign makes
/// the amplitude sum (or, failing that, the largest entry) positive.
fn canonical_vector(space: &[Vec<f64>]) -> Vec<f64> {
    let n = space[0].len();
    let mut v = if space.len() == 1 {
        space[0].clone()
    } else {
        let mut p = vec![0.0; n];
        for u in space {
            let c: f64 = u.iter().sum();
            p.iter_mut().zip(u).for_each(|(pi, ui)| *pi += c * ui);
        }
        if norm(&p) > 1e-8 * (n as f64).sqrt() {
            p
        } else {
            space[0].clone()
        }
    };
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let sum: f64 = v.iter().sum();
    let flip = if sum.abs() > 1e-10 {
        sum < 0.0
    } else {
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        big < 0.0
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

pub fn ground_state_full(
    hamiltonian: &HamiltonianSpec,
    constraint: SectorConstraint,
    opts: &SolverOptions,
) -> Result<EigenResult> {
    let geometry = hamiltonian.geometry();
    constraint.validate(geometry)?;
    let l = hamiltonian.num_spins();
    match constraint {
        SectorConstraint::None => {
            let op = FullOperator::new(hamiltonian)?;
            let g = solve(&op, opts)?;
            Ok(EigenResult {
                energy: g.energy,
                vector: g.vector,
                degeneracy: g.degeneracy,
                residual: g.residual,
                iterations: g.iterations,
                basis: BasisDescriptor::Full { num_spins: l },
                states: None,
            })
        }
        _ => {
            if constraint == SectorConstraint::GaussLaw && hamiltonian.frame() != Frame::SigmaX {
                return Err(Error::FrameMismatch { expected: Frame::SigmaX, got: hamiltonian.frame() });
            }
            let states = sector_indices(geometry, constraint)?;
            if states.len() > MAX_SOLVE_DIM {
                return Err(Error::SizeGuard { what: "sector dimension", requested: states.len(), limit: MAX_SOLVE_DIM });
            }
            let op = SparseOperator::build(hamiltonian, states.len(), |r| states[r], |t| states.binary_search(&t).ok())?;
            let g = solve(&op, opts)?;
            Ok(EigenResult {
                energy: g.energy,
                vector: g.vector,
                degeneracy: g.degeneracy,
                residual: g.residual,
                iterations: g.iterations,
                basis: BasisDescriptor::Sector { constraint, dim: states.len() },
                states: Some(states),
            })
        }
    }
}

fn floor_guard(num_vars: usize, max_order: usize) -> Result<()> {
    if max_order > num_vars {
        return Err(Error::Contract(format!("order {max_order} exceeds {num_vars} variables")));
    }
    let dim = count_truncated(num_vars, max_order) as usize;
    if dim > MAX_FLOOR_DIM {
        return Err(Error::SizeGuard { what: "truncated correlator basis", requested: dim, limit: MAX_FLOOR_DIM });
    }
    Ok(())
}

/// Lowest Ritz value of `H` on `span{X_S : |S| ≤ max_order}`.
pub fn ground_floor_correlator(
    hamiltonian: &HamiltonianSpec,
    max_order: usize,
    opts: &SolverOptions,
) -> Result<EigenResult> {
    let l = hamiltonian.num_spins();
    floor_guard(l, max_order)?;
    let full = FullOperator::new(hamiltonian)?;
    let basis = TruncatedCorrelatorBasis::new(l, max_order)?;
    let op = CorrelatorFloorOperator::new(&full, basis)?;
    let g = solve(&op, opts)?;
    Ok(EigenResult {
        energy: g.energy,
        vector: g.vector,
        degeneracy: g.degeneracy,
        residual: g.residual,
        iterations: g.iterations,
        basis: BasisDescriptor::Correlator { num_spins: l, max_order, dim: op.dim() },
        states: None,
    })
}

/// `H` on the Gauss-law sector, with rows ordered by the reduced index of
/// the spanning-tree basis.
pub fn reduced_sector_operator(hamiltonian: &HamiltonianSpec, tree: &SpanningTreeBasis) -> Result<SparseOperator> {
    if hamiltonian.frame() != Frame::SigmaX {
        return Err(Error::FrameMismatch { expected: Frame::SigmaX, got: hamiltonian.frame() });
    }
    if *hamiltonian.geometry() != tree.geometry {
        return Err(Error::Contract("Hamiltonian and spanning tree live on different lattices".into()));
    }
    let k = tree.num_independent();
    SparseOperator::build(
        hamiltonian,
        1 << k,
        |r| tree.reconstruct_index(r as u64),
        |t| {
            let r = tree.project_index(t);
            (tree.reconstruct_index(r) == t).then_some(r as usize)
        },
    )
}

/// Floor of the truncated correlator basis over the independent links of
/// `tree`.
pub fn ground_floor_restricted(
    hamiltonian: &HamiltonianSpec,
    tree: &SpanningTreeBasis,
    max_order: usize,
    opts: &SolverOptions,
) -> Result<EigenResult> {
    let k = tree.num_independent();
    floor_guard(k, max_order)?;
    let inner = reduced_sector_operator(hamiltonian, tree)?;
    let basis = TruncatedCorrelatorBasis::new(k, max_order)?;
    let op = CorrelatorFloorOperator::new(&inner, basis)?;
    let g = solve(&op, opts)?;
    Ok(EigenResult {
        energy: g.energy,
        vector: g.vector,
        degeneracy: g.degeneracy,
        residual: g.residual,
        iterations: g.iterations,
        basis: BasisDescriptor::RestrictedCorrelator { num_independent: k, max_order, dim: op.dim() },
        states: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub value: f64,
    /// Set when the reference energy is zero and `value` is `|E - E0|`.
    pub absolute: bool,
}

pub fn relative_error(energy: f64, reference: f64) -> RelativeError {
    let diff = (energy - reference).abs();
    if reference == 0.0 {
        RelativeError { value: diff, absolute: true }
    } else {
        RelativeError { value: diff / reference.abs(), absolute: false }
    }
}
