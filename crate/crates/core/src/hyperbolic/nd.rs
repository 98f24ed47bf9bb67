//! Blocks, disks and Condition 1 in ℝⁿ, in floating point.
//!
//! Splittings are axis-aligned: the stable and unstable subspaces are
//! spanned by disjoint sets of coordinate axes. Norms come from the SVD
//! and are compared with the slack `NORM_TOL`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::pam::nd::{spectral_norm, BoxNd, PiecewiseAffineMapNd, PointNd, NORM_TOL};

use super::{clause, Clause, ClauseKind, HyperbolicError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Splitting {
    pub stable_axes: Vec<usize>,
    pub unstable_axes: Vec<usize>,
}

impl Splitting {
    pub fn new(stable_axes: Vec<usize>, unstable_axes: Vec<usize>, dimension: usize) -> Result<Self, HyperbolicError> {
        let mut seen = vec![false; dimension];
        for &i in stable_axes.iter().chain(&unstable_axes) {
            if i >= dimension || seen[i] {
                return Err(HyperbolicError::InvalidAtlas(format!(
                    "axes {stable_axes:?} / {unstable_axes:?} do not split dimension {dimension}"
                )));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(HyperbolicError::InvalidAtlas(format!(
                "axes {stable_axes:?} / {unstable_axes:?} do not span dimension {dimension}"
            )));
        }
        Ok(Splitting {
            stable_axes,
            unstable_axes,
        })
    }

    pub fn dimension(&self) -> usize {
        self.stable_axes.len() + self.unstable_axes.len()
    }

    /// `(ξ, η)` coordinates of a vector.
    pub fn split(&self, v: &PointNd) -> (DVector<f64>, DVector<f64>) {
        let pick = |axes: &[usize]| DVector::from_iterator(axes.len(), axes.iter().map(|&i| v[i]));
        (pick(&self.stable_axes), pick(&self.unstable_axes))
    }

    pub fn join(&self, xi: &DVector<f64>, eta: &DVector<f64>) -> PointNd {
        let mut v = DVector::zeros(self.dimension());
        for (k, &i) in self.stable_axes.iter().enumerate() {
            v[i] = xi[k];
        }
        for (k, &i) in self.unstable_axes.iter().enumerate() {
            v[i] = eta[k];
        }
        v
    }

    /// `M` in the `(ξ, η)` frame.
    pub fn in_frame(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let order: Vec<usize> = self.stable_axes.iter().chain(&self.unstable_axes).copied().collect();
        DMatrix::from_fn(order.len(), order.len(), |r, c| m[(order[r], order[c])])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockNd {
    pub id: String,
    #[serde(skip)]
    pub region: BoxNd,
    pub splitting: Splitting,
    #[serde(skip)]
    pub a: DMatrix<f64>,
    #[serde(skip)]
    pub b: DMatrix<f64>,
}

impl BlockNd {
    pub fn new(
        id: impl Into<String>,
        region: BoxNd,
        splitting: Splitting,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self, HyperbolicError> {
        let id = id.into();
        let (s, u) = (splitting.stable_axes.len(), splitting.unstable_axes.len());
        if region.dim() != splitting.dimension() || a.shape() != (s, s) || b.shape() != (u, u) {
            return Err(HyperbolicError::InvalidAtlas(format!("block {id}: shapes do not match the splitting")));
        }
        if u > 0 && b.clone().try_inverse().is_none() {
            return Err(HyperbolicError::InvalidAtlas(format!("block {id}: B is singular")));
        }
        Ok(BlockNd {
            id,
            region,
            splitting,
            a,
            b,
        })
    }

    pub fn b_inverse(&self) -> DMatrix<f64> {
        if self.b.is_empty() {
            return self.b.clone();
        }
        self.b.clone().try_inverse().expect("checked on construction")
    }

    /// The block-diagonal matrix `diag(A, B)` in ambient coordinates.
    pub fn ambient_matrix(&self) -> DMatrix<f64> {
        let n = self.splitting.dimension();
        let mut m = DMatrix::zeros(n, n);
        let st = &self.splitting.stable_axes;
        let un = &self.splitting.unstable_axes;
        for (r, &i) in st.iter().enumerate() {
            for (c, &j) in st.iter().enumerate() {
                m[(i, j)] = self.a[(r, c)];
            }
        }
        for (r, &i) in un.iter().enumerate() {
            for (c, &j) in un.iter().enumerate() {
                m[(i, j)] = self.b[(r, c)];
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct AtlasNd {
    blocks: Vec<BlockNd>,
    lambda: f64,
}

impl AtlasNd {
    pub fn new(blocks: Vec<BlockNd>, lambda: f64) -> Result<Self, HyperbolicError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(HyperbolicError::InvalidConstants(format!("lambda {lambda} not in (0, 1)")));
        }
        for (i, a) in blocks.iter().enumerate() {
            for b in &blocks[i + 1..] {
                if a.region.overlaps_interior(&b.region) {
                    return Err(HyperbolicError::InvalidAtlas(format!("blocks {} and {} overlap", a.id, b.id)));
                }
            }
        }
        Ok(AtlasNd { blocks, lambda })
    }

    pub fn blocks(&self) -> &[BlockNd] {
        &self.blocks
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// `N(Δ, p)`: Euclidean balls of radius `Δ` in both factors.
#[derive(Debug, Clone)]
pub struct NeighborhoodNd {
    pub center: PointNd,
    pub radius: f64,
    pub splitting: Splitting,
}

impl NeighborhoodNd {
    pub fn contains(&self, x: &PointNd) -> bool {
        let (xi, eta) = self.splitting.split(&(x - &self.center));
        xi.norm() <= self.radius && eta.norm() <= self.radius
    }

    /// Smallest box containing the neighborhood.
    pub fn bounding_box(&self) -> BoxNd {
        let r = DVector::from_element(self.center.len(), self.radius);
        BoxNd {
            lo: &self.center - &r,
            hi: &self.center + r,
        }
    }
}

pub fn neighborhood_nd(p: &PointNd, delta: f64, splitting: &Splitting) -> NeighborhoodNd {
    NeighborhoodNd {
        center: p.clone(),
        radius: delta,
        splitting: splitting.clone(),
    }
}

/// `H(Δ)` of a box region: the neighborhood's projection onto every axis
/// is `[p_i − Δ, p_i + Δ]`, so this is the per-axis shrink.
pub fn h_set_nd(block: &BlockNd, delta: f64) -> Option<BoxNd> {
    block.region.shrink(&vec![delta; block.region.dim()])
}

/// A disk `{p + (Ξ(η), η) : |η| ≤ Δ₁}` with affine graph `Ξ(η) = Cη + c`.
#[derive(Debug, Clone)]
pub struct DiskNd {
    pub block: String,
    pub anchor: PointNd,
    pub delta1: f64,
    pub delta2: f64,
    pub c_matrix: DMatrix<f64>,
    pub c_offset: DVector<f64>,
}

impl DiskNd {
    pub fn flat(block: &BlockNd, anchor: PointNd, delta1: f64, delta2: f64) -> Self {
        let (s, u) = (block.splitting.stable_axes.len(), block.splitting.unstable_axes.len());
        DiskNd {
            block: block.id.clone(),
            anchor,
            delta1,
            delta2,
            c_matrix: DMatrix::zeros(s, u),
            c_offset: DVector::zeros(s),
        }
    }

    /// `‖C‖Δ₁ + |c| ≤ Δ₂`, the sup of `|Ξ|` over the η-ball.
    pub fn graph_bound(&self) -> f64 {
        spectral_norm(&self.c_matrix) * self.delta1 + self.c_offset.norm()
    }

    pub fn conforms(&self) -> bool {
        self.graph_bound() <= self.delta2 * (1.0 + NORM_TOL) + NORM_TOL
    }

    pub fn point(&self, splitting: &Splitting, eta: &DVector<f64>) -> PointNd {
        let xi = &self.c_matrix * eta + &self.c_offset;
        &self.anchor + splitting.join(&xi, eta)
    }

    /// `(η, distance of the stable part from the graph)` for a point.
    pub fn locate(&self, splitting: &Splitting, x: &PointNd) -> (DVector<f64>, f64) {
        let (xi, eta) = splitting.split(&(x - &self.anchor));
        let gap = (xi - (&self.c_matrix * &eta + &self.c_offset)).norm();
        (eta, gap)
    }
}

/// Graph transform of a disk through the affine block action:
/// `C' = A·C·B⁻¹`, `c' = A·c`, radii `(Δ₁/λ, λΔ₂)`.
pub fn map_disk_nd(
    map: &PiecewiseAffineMapNd,
    block: &BlockNd,
    lambda: f64,
    disk: &DiskNd,
) -> Result<DiskNd, HyperbolicError> {
    let reach = disk.delta1.max(disk.delta2);
    let mut failed: Vec<Clause> = Vec::new();
    match h_set_nd(block, reach) {
        Some(h) if h.contains(&disk.anchor) => {}
        _ => failed.push(clause(
            ClauseKind::AnchorContainment,
            format!("anchor not in H({reach}) of {}", block.id),
        )),
    }
    if !failed.is_empty() {
        return Err(HyperbolicError::PreconditionViolated(failed));
    }
    let image_anchor = map.eval_nd(&disk.anchor)?;
    if !block.region.contains(&image_anchor) {
        return Err(HyperbolicError::PreconditionViolated(vec![clause(
            ClauseKind::AnchorContainment,
            format!("f(anchor) leaves {}", block.id),
        )]));
    }
    let binv = block.b_inverse();
    Ok(DiskNd {
        block: block.id.clone(),
        anchor: image_anchor,
        delta1: disk.delta1 / lambda,
        delta2: disk.delta2 * lambda,
        c_matrix: &block.a * &disk.c_matrix * binv,
        c_offset: &block.a * &disk.c_offset,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockCheckNd {
    pub id: String,
    pub stable_norm: f64,
    pub unstable_inverse_norm: f64,
    pub norms_ok: bool,
    pub affine_ok: bool,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReportNd {
    pub lambda: f64,
    pub tolerance: f64,
    pub blocks: Vec<BlockCheckNd>,
    pub passed: bool,
}

/// Condition 1 in floating point: `‖A‖ ≤ λ`, `‖B⁻¹‖ ≤ λ`, and every cell
/// meeting the block acts as `diag(A, B)` in the splitting frame.
pub fn verify_condition1_nd(atlas: &AtlasNd, map: &PiecewiseAffineMapNd) -> CertificateReportNd {
    let lambda = atlas.lambda();
    let slack = NORM_TOL * (1.0 + lambda);
    let blocks: Vec<BlockCheckNd> = atlas
        .blocks()
        .iter()
        .map(|block| {
            let mut issues = Vec::new();
            let stable_norm = spectral_norm(&block.a);
            let unstable_inverse_norm = spectral_norm(&block.b_inverse());
            if stable_norm > lambda + slack {
                issues.push(format!("|A| = {stable_norm} > {lambda}"));
            }
            if unstable_inverse_norm > lambda + slack {
                issues.push(format!("|B^-1| = {unstable_inverse_norm} > {lambda}"));
            }
            let norms_ok = issues.is_empty();
            let mut affine_ok = true;
            let expected = block.splitting.in_frame(&block.ambient_matrix());
            let mut touched = false;
            for cell in map.cells() {
                if !cell.cell.overlaps_interior(&block.region) {
                    continue;
                }
                touched = true;
                let got = block.splitting.in_frame(&cell.matrix);
                let gap = (&got - &expected).amax();
                if gap > map.tolerance() * (1.0 + expected.amax()) {
                    affine_ok = false;
                    issues.push(format!("cell matrix differs from diag(A, B) by {gap}"));
                }
            }
            if !touched {
                affine_ok = false;
                issues.push("no map cell meets the block".into());
            }
            BlockCheckNd {
                id: block.id.clone(),
                stable_norm,
                unstable_inverse_norm,
                norms_ok,
                affine_ok,
                issues,
            }
        })
        .collect();
    let passed = blocks.iter().all(|b| b.norms_ok && b.affine_ok);
    CertificateReportNd {
        lambda,
        tolerance: slack,
        blocks,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pam::nd::AffineCellNd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn saddle(a: f64, b: f64) -> (PiecewiseAffineMapNd, BlockNd) {
        let region = BoxNd::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b]);
        let map = PiecewiseAffineMapNd::new(
            vec![AffineCellNd {
                cell: region.clone(),
                matrix: m,
                offset: DVector::zeros(2),
            }],
            2,
        )
        .unwrap();
        let block = BlockNd::new(
            "S",
            region,
            Splitting::new(vec![0], vec![1], 2).unwrap(),
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
        )
        .unwrap();
        (map, block)
    }

    #[test]
    fn unit_square_neighborhood() {
        let s = Splitting::new(vec![0], vec![1], 2).unwrap();
        let n = neighborhood_nd(&DVector::zeros(2), 1.0, &s);
        let b = n.bounding_box();
        assert_eq!(b.lo.as_slice(), &[-1.0, -1.0]);
        assert_eq!(b.hi.as_slice(), &[1.0, 1.0]);
        assert!(n.contains(&DVector::from_vec(vec![1.0, -1.0])));
        assert!(!n.contains(&DVector::from_vec(vec![1.0, 1.01])));
    }

    #[test]
    fn bad_splittings_rejected() {
        assert!(Splitting::new(vec![0], vec![0], 2).is_err());
        assert!(Splitting::new(vec![0], vec![], 2).is_err());
        assert!(Splitting::new(vec![2], vec![0], 2).is_err());
    }

    #[test]
    fn condition1_on_saddle() {
        let (map, block) = saddle(0.5, 2.0);
        let atlas = AtlasNd::new(vec![block], 0.5).unwrap();
        let report = verify_condition1_nd(&atlas, &map);
        assert!(report.passed, "{report:?}");
        assert!((report.blocks[0].stable_norm - 0.5).abs() < 1e-12);

        let (map, block) = saddle(0.5, 1.5);
        let atlas = AtlasNd::new(vec![block], 0.5).unwrap();
        let report = verify_condition1_nd(&atlas, &map);
        assert!(!report.passed);
        assert!((report.blocks[0].unstable_inverse_norm - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn condition1_detects_shear() {
        let (_, block) = saddle(0.5, 2.0);
        let sheared = PiecewiseAffineMapNd::new(
            vec![AffineCellNd {
                cell: block.region.clone(),
                matrix: DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 0.0, 2.0]),
                offset: DVector::zeros(2),
            }],
            2,
        )
        .unwrap();
        let report = verify_condition1_nd(&AtlasNd::new(vec![block], 0.5).unwrap(), &sheared);
        assert!(report.blocks[0].norms_ok);
        assert!(!report.blocks[0].affine_ok);
    }

    #[test]
    fn flat_disk_stays_flat() {
        let (map, block) = saddle(0.5, 2.0);
        let disk = DiskNd::flat(&block, DVector::zeros(2), 0.1, 0.2);
        let image = map_disk_nd(&map, &block, 0.5, &disk).unwrap();
        assert_eq!(image.c_matrix[(0, 0)], 0.0);
        assert_eq!(image.c_offset[0], 0.0);
        assert!((image.delta1 - 0.2).abs() < 1e-15);
        assert!((image.delta2 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn anchor_near_edge_rejected() {
        let (map, block) = saddle(0.5, 2.0);
        let disk = DiskNd::flat(&block, DVector::from_vec(vec![0.95, 0.0]), 0.1, 0.1);
        assert!(matches!(
            map_disk_nd(&map, &block, 0.5, &disk),
            Err(HyperbolicError::PreconditionViolated(_))
        ));
    }

    fn random_block(rng: &mut ChaCha8Rng) -> (PiecewiseAffineMapNd, BlockNd, f64) {
        let dim = rng.gen_range(1..=2usize);
        let s = rng.gen_range(0..=dim);
        let lambda = rng.gen_range(0.3..0.9);
        let mut axes: Vec<usize> = (0..dim).collect();
        if rng.gen_bool(0.5) {
            axes.reverse();
        }
        let splitting = Splitting::new(axes[..s].to_vec(), axes[s..].to_vec(), dim).unwrap();
        let a = DMatrix::from_fn(s, s, |_, _| rng.gen_range(-1.0..1.0));
        let a = if s > 0 { &a * (lambda / spectral_norm(&a).max(1e-3)) * rng.gen_range(0.3..1.0) } else { a };
        let b = DMatrix::from_fn(dim - s, dim - s, |r, c| if r == c { rng.gen_range(1.0 / lambda..4.0) } else { 0.0 });
        let region = BoxNd::new(vec![-1.0; dim], vec![1.0; dim]).unwrap();
        let block = BlockNd::new("B", region.clone(), splitting, a, b).unwrap();
        let offset = DVector::from_fn(dim, |_, _| rng.gen_range(-0.01..0.01));
        let map = PiecewiseAffineMapNd::new(
            vec![AffineCellNd {
                cell: region,
                matrix: block.ambient_matrix(),
                offset,
            }],
            dim,
        )
        .unwrap();
        (map, block, lambda)
    }

    #[test]
    fn mapped_disk_points_have_preimages_in_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (map, block, lambda) = random_block(&mut rng);
            let (s, u) = (block.splitting.stable_axes.len(), block.splitting.unstable_axes.len());
            let d1 = rng.gen_range(0.01..0.05);
            let d2 = rng.gen_range(0.01..0.05);
            let anchor = DVector::from_fn(block.region.dim(), |_, _| rng.gen_range(-0.1..0.1));
            let c = DMatrix::from_fn(s, u, |_, _| rng.gen_range(-1.0..1.0));
            let c = if c.is_empty() { c } else { &c * (0.5 * d2 / d1 / spectral_norm(&c).max(1e-3)) };
            let c0 = DVector::from_fn(s, |_, _| rng.gen_range(-1.0..1.0) * 0.4 * d2 / (s.max(1) as f64));
            let disk = DiskNd {
                block: "B".into(),
                anchor,
                delta1: d1,
                delta2: d2,
                c_matrix: c,
                c_offset: c0,
            };
            assert!(disk.conforms());
            let image = map_disk_nd(&map, &block, lambda, &disk).unwrap();
            assert!(image.conforms(), "{} > {}", image.graph_bound(), image.delta2);
            let m_inv = map.cells()[0].matrix.clone().try_inverse();
            for _ in 0..50 {
                let mut eta: DVector<f64> = DVector::from_fn(u, |_, _| rng.gen_range(-1.0..1.0));
                if u > 0 {
                    let norm = eta.norm().max(1e-9);
                    eta *= image.delta1 * rng.gen_range(0.0..1.0) / norm;
                }
                let y = image.point(&block.splitting, &eta);
                let x = match &m_inv {
                    Some(inv) => inv * (&y - &map.cells()[0].offset),
                    None => continue,
                };
                let (pre_eta, gap) = disk.locate(&block.splitting, &x);
                assert!(pre_eta.norm() <= disk.delta1 * (1.0 + 1e-9) + 1e-12);
                assert!(gap <= 1e-9, "gap {gap}");
                assert!((map.eval_nd(&x).unwrap() - y).amax() <= 1e-9);
            }
        }
    }
}
