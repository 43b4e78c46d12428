//! Constrained Hilbert spaces: decision trees over constrained
//! configurations and the toric-code spanning-tree parametrization of the
//! Gauss-law sector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    sector_indices, Frame, LatticeGeometry, LatticeKind, SectorConstraint, SpinConfiguration,
};

/// Largest system for which decision trees are built by enumeration.
pub const MAX_TREE_SPINS: usize = 20;

/// A root-to-leaf path: the queried sites and the values taken on them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLeaf {
    pub path: Vec<(usize, i8)>,
    /// The unique valid configuration reached by the path (index form).
    pub state: u64,
}

impl TreeLeaf {
    pub fn depth(&self) -> usize {
        self.path.len()
    }

    /// Restricted indicator `Π_{(i,s)∈p} (1 + s σ_i)/2`.
    pub fn indicator(&self, spins: &[i8]) -> f64 {
        self.path.iter().map(|&(i, s)| (1.0 + f64::from(s * spins[i])) / 2.0).product()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub site_order: Vec<usize>,
    pub leaves: Vec<TreeLeaf>,
}

impl DecisionTree {
    pub fn max_depth(&self) -> usize {
        self.leaves.iter().map(TreeLeaf::depth).max().unwrap_or(0)
    }

    /// `Σ_p 1_p(σ)`, which is 1 on every valid configuration.
    pub fn indicator_sum(&self, spins: &[i8]) -> f64 {
        self.leaves.iter().map(|l| l.indicator(spins)).sum()
    }
}

fn spin_value(index: u64, site: usize) -> i8 {
    if index >> site & 1 == 1 {
        -1
    } else {
        1
    }
}

fn valid_states(constraint: SectorConstraint, geometry: &LatticeGeometry) -> Result<Vec<u64>> {
    if matches!(constraint, SectorConstraint::None) {
        return Err(Error::Contract("decision trees need a fixed-magnetization or gauss-law constraint".into()));
    }
    let l = geometry.num_spins();
    if l > MAX_TREE_SPINS {
        return Err(Error::SizeGuard { what: "decision-tree spins", requested: l, limit: MAX_TREE_SPINS });
    }
    let states = sector_indices(geometry, constraint)?;
    if states.is_empty() {
        return Err(Error::Infeasible(format!("{constraint:?} has no valid states")));
    }
    Ok(states)
}

/// Queries sites in `site_order` and stops a branch as soon as only one
/// valid configuration remains consistent with it.
pub fn build_decision_tree(
    constraint: SectorConstraint,
    geometry: &LatticeGeometry,
    site_order: &[usize],
) -> Result<DecisionTree> {
    let l = geometry.num_spins();
    let mut seen = vec![false; l];
    if site_order.len() != l || site_order.iter().any(|&s| s >= l || std::mem::replace(&mut seen[s], true)) {
        return Err(Error::Contract(format!("site order {site_order:?} is not a permutation of 0..{l}")));
    }
    let states = valid_states(constraint, geometry)?;
    let mut leaves = Vec::new();
    let mut stack = vec![(Vec::<(usize, i8)>::new(), states)];
    while let Some((path, members)) = stack.pop() {
        if members.len() == 1 {
            leaves.push(TreeLeaf { path, state: members[0] });
            continue;
        }
        let site = site_order[path.len()];
        // push the -1 branch first so the +1 branch is expanded first
        for value in [-1i8, 1] {
            let sub: Vec<u64> = members.iter().copied().filter(|&s| spin_value(s, site) == value).collect();
            if !sub.is_empty() {
                let mut p = path.clone();
                p.push((site, value));
                stack.push((p, sub));
            }
        }
    }
    Ok(DecisionTree { site_order: site_order.to_vec(), leaves })
}

/// One shortest identifying path per valid state: the smallest set of sites
/// whose values single the state out among all valid configurations.
pub fn minimal_paths(constraint: SectorConstraint, geometry: &LatticeGeometry) -> Result<Vec<TreeLeaf>> {
    let states = valid_states(constraint, geometry)?;
    let l = geometry.num_spins();
    let mut out = Vec::with_capacity(states.len());
    for &state in &states {
        let sites = (0..=l)
            .find_map(|k| {
                subsets_of_size(l, k).find(|&m| states.iter().filter(|&&s| (s ^ state) & m == 0).count() == 1)
            })
            .expect("the full site set always identifies a state");
        let path = (0..l).filter(|i| sites >> i & 1 == 1).map(|i| (i, spin_value(state, i))).collect();
        out.push(TreeLeaf { path, state });
    }
    Ok(out)
}

fn subsets_of_size(n: usize, k: usize) -> impl Iterator<Item = u64> {
    let limit = 1u64 << n;
    let mut next = if k == 0 { Some(0) } else { Some((1u64 << k) - 1) };
    std::iter::from_fn(move || {
        let cur = next?;
        if cur >= limit {
            return None;
        }
        next = if cur == 0 {
            None
        } else {
            let c = cur & cur.wrapping_neg();
            let r = cur + c;
            Some((((r ^ cur) >> 2) / c) | r)
        };
        Some(cur)
    })
}

/// One step of the reconstruction: `link` equals the product of `others`,
/// all members of the star at `star`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveStep {
    pub link: usize,
    pub star: (usize, usize),
    pub others: [usize; 3],
}

/// Partition of the toric-code links into `Lx*Ly + 1` independent links and
/// the dependent links that Gauss's law then fixes.
///
/// Dependent links are the vertical links of rows `0..Ly-1` and the
/// horizontal links `(x, 0)` for `x < Lx-1`. Stars of rows `Ly-1` down to
/// `1` fix the vertical link below them; the stars of row `0` then fix the
/// horizontal links from left to right.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanningTreeBasis {
    pub geometry: LatticeGeometry,
    pub independent: Vec<usize>,
    pub dependent: Vec<usize>,
    pub resolver: Vec<ResolveStep>,
}

pub fn build_spanning_tree(geometry: &LatticeGeometry) -> Result<SpanningTreeBasis> {
    if geometry.kind != LatticeKind::SquareLinks {
        return Err(Error::Geometry("spanning tree needs a square-links torus".into()));
    }
    let (lx, ly) = (geometry.lx, geometry.ly);
    let mut resolver = Vec::with_capacity(lx * ly - 1);
    for y in (1..ly).rev() {
        for x in 0..lx {
            let link = geometry.vertical_link(x as isize, y as isize - 1);
            resolver.push(step(geometry, (x, y), link));
        }
    }
    for x in 0..lx - 1 {
        let link = geometry.horizontal_link(x as isize, 0);
        resolver.push(step(geometry, (x, 0), link));
    }
    let mut dependent: Vec<usize> = resolver.iter().map(|s| s.link).collect();
    dependent.sort_unstable();
    let independent: Vec<usize> = (0..geometry.num_spins()).filter(|l| dependent.binary_search(l).is_err()).collect();
    debug_assert_eq!(independent.len(), lx * ly + 1);
    Ok(SpanningTreeBasis { geometry: *geometry, independent, dependent, resolver })
}

fn step(geometry: &LatticeGeometry, star: (usize, usize), link: usize) -> ResolveStep {
    let links = geometry.star_links(star.0, star.1);
    let mut others = [0; 3];
    let mut k = 0;
    for &l in &links {
        if l != link {
            others[k] = l;
            k += 1;
        }
    }
    debug_assert_eq!(k, 3);
    ResolveStep { link, star, others }
}

impl SpanningTreeBasis {
    pub fn num_independent(&self) -> usize {
        self.independent.len()
    }

    /// Reduced index of a sector state: bit `k` is the value of
    /// `independent[k]`.
    pub fn project_index(&self, index: u64) -> u64 {
        self.independent.iter().enumerate().fold(0, |r, (k, &l)| r | (index >> l & 1) << k)
    }

    /// Full sector index extending a reduced index.
    pub fn reconstruct_index(&self, reduced: u64) -> u64 {
        let mut full = self.independent.iter().enumerate().fold(0u64, |f, (k, &l)| f | (reduced >> k & 1) << l);
        for s in &self.resolver {
            let bit = s.others.iter().fold(0, |b, &o| b ^ (full >> o & 1));
            full |= bit << s.link;
        }
        full
    }

    pub fn project_independent(&self, config: &SpinConfiguration) -> Result<Vec<i8>> {
        self.check(config)?;
        if !SectorConstraint::GaussLaw.is_satisfied(&self.geometry, config.index()) {
            return Err(Error::Contract("configuration violates gauss law".into()));
        }
        Ok(self.independent.iter().map(|&l| config.values()[l]).collect())
    }

    pub fn reconstruct_full(&self, reduced: &[i8]) -> Result<SpinConfiguration> {
        if reduced.len() != self.independent.len() {
            return Err(Error::Shape(format!(
                "reduced configuration has {} values, expected {}",
                reduced.len(),
                self.independent.len()
            )));
        }
        let r = SpinConfiguration::new(reduced.to_vec(), Frame::SigmaX)?.index();
        SpinConfiguration::from_index(self.geometry.num_spins(), self.reconstruct_index(r), Frame::SigmaX)
    }

    fn check(&self, config: &SpinConfiguration) -> Result<()> {
        if config.frame() != Frame::SigmaX {
            return Err(Error::FrameMismatch { expected: Frame::SigmaX, got: config.frame() });
        }
        if config.len() != self.geometry.num_spins() {
            return Err(Error::Shape(format!("configuration has {} links", config.len())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{gauss_satisfied, Boundary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three_spins() -> LatticeGeometry {
        LatticeGeometry::chain(3, Boundary::Open).unwrap()
    }

    fn state(spins: [i8; 3]) -> u64 {
        SpinConfiguration::new(spins.to_vec(), Frame::SigmaZ).unwrap().index()
    }

    #[test]
    fn three_spin_tree() {
        let t = build_decision_tree(SectorConstraint::FixedMagnetization(1), &three_spins(), &[0, 1, 2]).unwrap();
        let mut depths: Vec<(u64, usize)> = t.leaves.iter().map(|l| (l.state, l.depth())).collect();
        depths.sort();
        let mut expect = vec![(state([-1, 1, 1]), 1), (state([1, -1, 1]), 2), (state([1, 1, -1]), 2)];
        expect.sort();
        assert_eq!(depths, expect);
        assert_eq!(t.max_depth(), 2);
    }

    #[test]
    fn three_spin_minimal_paths() {
        let p = minimal_paths(SectorConstraint::FixedMagnetization(1), &three_spins()).unwrap();
        assert_eq!(p.len(), 3);
        for leaf in &p {
            assert_eq!(leaf.depth(), 1);
            // the single queried spin is the down spin
            assert_eq!(leaf.path[0].1, -1);
        }
    }

    #[test]
    fn two_spin_tree() {
        let g = LatticeGeometry::chain(2, Boundary::Open).unwrap();
        let t = build_decision_tree(SectorConstraint::FixedMagnetization(0), &g, &[1, 0]).unwrap();
        assert_eq!(t.leaves.len(), 2);
        assert!(t.leaves.iter().all(|l| l.depth() == 1 && l.path[0].0 == 1));
    }

    #[test]
    fn tree_errors() {
        let g = three_spins();
        assert!(matches!(
            build_decision_tree(SectorConstraint::FixedMagnetization(2), &g, &[0, 1, 2]),
            Err(Error::Infeasible(_))
        ));
        assert!(build_decision_tree(SectorConstraint::FixedMagnetization(1), &g, &[0, 0, 2]).is_err());
        assert!(build_decision_tree(SectorConstraint::None, &g, &[0, 1, 2]).is_err());
    }

    fn check_partition(constraint: SectorConstraint, geometry: &LatticeGeometry, tree: &DecisionTree) {
        let l = geometry.num_spins();
        let valid = sector_indices(geometry, constraint).unwrap();
        let mut spins = vec![0i8; l];
        for &s in &valid {
            crate::lattice::fill_spins(s, &mut spins);
            assert_eq!(tree.indicator_sum(&spins), 1.0);
            let matching: Vec<&TreeLeaf> = tree.leaves.iter().filter(|leaf| leaf.indicator(&spins) == 1.0).collect();
            assert_eq!(matching.len(), 1);
            assert_eq!(matching[0].state, s);
        }
        assert_eq!(tree.leaves.len(), valid.len());
    }

    #[test]
    fn trees_partition_valid_states() {
        let chain = LatticeGeometry::chain(6, Boundary::Open).unwrap();
        for m in [-2, 0, 4] {
            let c = SectorConstraint::FixedMagnetization(m);
            for order in [[0, 1, 2, 3, 4, 5], [5, 3, 1, 0, 2, 4]] {
                check_partition(c, &chain, &build_decision_tree(c, &chain, &order).unwrap());
            }
        }
        let torus = LatticeGeometry::square_links(2, 2).unwrap();
        let order: Vec<usize> = (0..8).collect();
        let tree = build_decision_tree(SectorConstraint::GaussLaw, &torus, &order).unwrap();
        check_partition(SectorConstraint::GaussLaw, &torus, &tree);
        // with horizontal links queried first, only the last two vertical links are forced
        assert_eq!(tree.max_depth(), 6);
    }

    #[test]
    fn spanning_tree_sizes() {
        for (lx, ly) in [(2, 2), (4, 4), (3, 2), (2, 5)] {
            let g = LatticeGeometry::square_links(lx, ly).unwrap();
            let t = build_spanning_tree(&g).unwrap();
            assert_eq!(t.independent.len(), lx * ly + 1);
            assert_eq!(t.dependent.len(), lx * ly - 1);
            assert_eq!(t.resolver.len(), lx * ly - 1);
        }
        let sites = LatticeGeometry::square_sites(4, 4, Boundary::Periodic).unwrap();
        assert!(matches!(build_spanning_tree(&sites), Err(Error::Geometry(_))));
    }

    #[test]
    fn resolver_is_topological() {
        let g = LatticeGeometry::square_links(4, 3).unwrap();
        let t = build_spanning_tree(&g).unwrap();
        let mut known: Vec<bool> = (0..g.num_spins()).map(|l| t.independent.contains(&l)).collect();
        for s in &t.resolver {
            assert!(!known[s.link]);
            assert!(s.others.iter().all(|&o| known[o]));
            known[s.link] = true;
        }
        assert!(known.iter().all(|&k| k));
    }

    #[test]
    fn round_trip_2x2_and_3x3() {
        for n in [2, 3] {
            let g = LatticeGeometry::square_links(n, n).unwrap();
            let t = build_spanning_tree(&g).unwrap();
            let sector = sector_indices(&g, SectorConstraint::GaussLaw).unwrap();
            let mut images: Vec<u64> = sector.iter().map(|&s| t.project_index(s)).collect();
            for &s in &sector {
                assert_eq!(t.reconstruct_index(t.project_index(s)), s);
            }
            images.sort_unstable();
            images.dedup();
            assert_eq!(images.len(), 1 << (n * n + 1));
        }
    }

    #[test]
    fn config_level_examples() {
        let g = LatticeGeometry::square_links(4, 4).unwrap();
        let t = build_spanning_tree(&g).unwrap();
        let up = SpinConfiguration::all_up(32, Frame::SigmaX);
        assert_eq!(t.project_independent(&up).unwrap(), vec![1; 17]);
        assert_eq!(t.reconstruct_full(&[1; 17]).unwrap(), up);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let r: Vec<i8> = (0..17).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
            let full = t.reconstruct_full(&r).unwrap();
            assert!(gauss_satisfied(&g, &full).unwrap());
            assert_eq!(t.project_independent(&full).unwrap(), r);
        }

        let mut bad = up.clone();
        bad.flip(crate::lattice::SubsetMask(1));
        assert!(t.project_independent(&bad).is_err());
        assert!(t.reconstruct_full(&[1; 16]).is_err());
    }

    #[test]
    fn independent_flip_is_sector_move() {
        let g = LatticeGeometry::square_links(4, 4).unwrap();
        let t = build_spanning_tree(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let r = rng.gen_range(0..1u64 << 17);
            let k = rng.gen_range(0..17);
            let diff = t.reconstruct_index(r) ^ t.reconstruct_index(r ^ (1 << k));
            // a closed loop on the dual lattice: every star sees an even number of changed links
            assert!(g.stars().iter().all(|s| (diff & s.0).count_ones().is_multiple_of(2)));
            assert!(diff >> t.independent[k] & 1 == 1);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reconstruction_lands_in_sector_and_projects_back(lx in 2usize..=4, ly in 2usize..=4, raw in any::<u64>()) {
                let g = LatticeGeometry::square_links(lx, ly).unwrap();
                let t = build_spanning_tree(&g).unwrap();
                let reduced = raw & ((1u64 << t.num_independent()) - 1);
                let full = t.reconstruct_index(reduced);
                prop_assert!(SectorConstraint::GaussLaw.is_satisfied(&g, full));
                prop_assert_eq!(t.project_index(full), reduced);
            }

            #[test]
            fn any_site_order_partitions_the_sector(order in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(), gauss in any::<bool>()) {
                let (g, c) = if gauss {
                    (LatticeGeometry::square_links(2, 2).unwrap(), SectorConstraint::GaussLaw)
                } else {
                    (LatticeGeometry::chain(8, Boundary::Open).unwrap(), SectorConstraint::FixedMagnetization(2))
                };
                let tree = build_decision_tree(c, &g, &order).unwrap();
                check_partition(c, &g, &tree);
                let mut spins = vec![0i8; 8];
                for s in 0..1u64 << 8 {
                    if !c.is_satisfied(&g, s) {
                        crate::lattice::fill_spins(s, &mut spins);
                        prop_assert!(tree.indicator_sum(&spins) <= 1.0);
                    }
                }
            }
        }
    }
}
