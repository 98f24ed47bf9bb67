//! Floating-point piecewise-affine maps on boxes in ℝⁿ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PamError;

pub type PointNd = DVector<f64>;

/// Default relative agreement tolerance on shared cell boundaries (2⁻⁴⁰).
pub const DEFAULT_AGREEMENT_TOL: f64 = 9.094947017729282e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxNd {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BoxNd {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, PamError> {
        if lo.len() != hi.len() {
            return Err(PamError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(PamError::InvalidMap("box with lo > hi".into()));
        }
        Ok(BoxNd {
            lo: DVector::from_vec(lo),
            hi: DVector::from_vec(hi),
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &PointNd) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|i| self.lo[i] <= x[i] && x[i] <= self.hi[i])
    }

    pub fn contains_box(&self, other: &BoxNd) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// Positive-volume intersection.
    pub fn overlaps_interior(&self, other: &BoxNd) -> bool {
        (0..self.dim()).all(|i| self.lo[i].max(other.lo[i]) < self.hi[i].min(other.hi[i]))
    }

    /// Per-axis inward shrink; `None` if any axis empties.
    pub fn shrink(&self, margins: &[f64]) -> Option<BoxNd> {
        let lo = &self.lo + DVector::from_column_slice(margins);
        let hi = &self.hi - DVector::from_column_slice(margins);
        (0..self.dim()).all(|i| lo[i] <= hi[i]).then_some(BoxNd { lo, hi })
    }
}

/// `x -> matrix * x + offset` on a box.
#[derive(Debug, Clone)]
pub struct AffineCellNd {
    pub cell: BoxNd,
    pub matrix: DMatrix<f64>,
    pub offset: PointNd,
}

impl AffineCellNd {
    pub fn apply(&self, x: &PointNd) -> PointNd {
        &self.matrix * x + &self.offset
    }
}

#[derive(Debug, Clone)]
pub struct PiecewiseAffineMapNd {
    cells: Vec<AffineCellNd>,
    dimension: usize,
    tolerance: f64,
}

impl PiecewiseAffineMapNd {
    pub fn new(cells: Vec<AffineCellNd>, dimension: usize) -> Result<Self, PamError> {
        for c in &cells {
            let shape = c.matrix.shape();
            if c.cell.dim() != dimension || shape != (dimension, dimension) || c.offset.len() != dimension
            {
                return Err(PamError::DimensionMismatch {
                    expected: dimension,
                    got: c.cell.dim().max(shape.0).max(c.offset.len()),
                });
            }
        }
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                if a.cell.overlaps_interior(&b.cell) {
                    return Err(PamError::InvalidMap("cells with overlapping interiors".into()));
                }
            }
        }
        Ok(PiecewiseAffineMapNd {
            cells,
            dimension,
            tolerance: DEFAULT_AGREEMENT_TOL,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn cells(&self) -> &[AffineCellNd] {
        &self.cells
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn eval_nd(&self, x: &PointNd) -> Result<PointNd, PamError> {
        if x.len() != self.dimension {
            return Err(PamError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        let mut hits = self.cells.iter().filter(|c| c.cell.contains(x));
        let first = hits.next().ok_or_else(|| PamError::OutOfDomain {
            x: format!("{:?}", x.as_slice()),
            step: None,
        })?;
        let y = first.apply(x);
        let scale = 1.0 + y.amax();
        for other in hits {
            let gap = (other.apply(x) - &y).amax();
            if gap > self.tolerance * scale {
                return Err(PamError::AmbiguousBoundary {
                    point: format!("{:?}", x.as_slice()),
                    gap,
                });
            }
        }
        Ok(y)
    }

    /// Max spectral norm over cells, with the norm tolerance used.
    pub fn lipschitz_constant(&self) -> NormEstimate {
        let value = self
            .cells
            .iter()
            .map(|c| spectral_norm(&c.matrix))
            .fold(0.0, f64::max);
        NormEstimate {
            value,
            tolerance: NORM_TOL * (1.0 + value),
        }
    }
}

/// Relative slack applied to floating-point operator norms.
pub const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub tolerance: f64,
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// File form: `{"dimension":n,"cells":[{"lo":[..],"hi":[..],"matrix":[row-major],"offset":[..]}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapNdSpec {
    pub dimension: usize,
    #[serde(default)]
    pub tolerance: Option<f64>,
    pub cells: Vec<CellNdSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellNdSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl TryFrom<MapNdSpec> for PiecewiseAffineMapNd {
    type Error = PamError;

    fn try_from(spec: MapNdSpec) -> Result<Self, Self::Error> {
        let n = spec.dimension;
        let cells = spec
            .cells
            .into_iter()
            .map(|c| {
                if c.matrix.len() != n * n {
                    return Err(PamError::DimensionMismatch {
                        expected: n * n,
                        got: c.matrix.len(),
                    });
                }
                Ok(AffineCellNd {
                    cell: BoxNd::new(c.lo, c.hi)?,
                    matrix: DMatrix::from_row_slice(n, n, &c.matrix),
                    offset: DVector::from_vec(c.offset),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let map = PiecewiseAffineMapNd::new(cells, n)?;
        Ok(match spec.tolerance {
            Some(t) => map.with_tolerance(t),
            None => map,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(n: usize) -> BoxNd {
        BoxNd::new(vec![-1.0; n], vec![1.0; n]).unwrap()
    }

    #[test]
    fn identity_cell_is_identity() {
        let map = PiecewiseAffineMapNd::new(
            vec![AffineCellNd {
                cell: unit_box(3),
                matrix: DMatrix::identity(3, 3),
                offset: DVector::zeros(3),
            }],
            3,
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.25, -0.5, 1.0]);
        assert_eq!(map.eval_nd(&x).unwrap(), x);
    }

    #[test]
    fn saddle_acts_diagonally() {
        let map = PiecewiseAffineMapNd::new(
            vec![AffineCellNd {
                cell: BoxNd::new(vec![-2.0; 2], vec![2.0; 2]).unwrap(),
                matrix: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0]),
                offset: DVector::zeros(2),
            }],
            2,
        )
        .unwrap();
        let y = map.eval_nd(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(y.as_slice(), &[0.5, 2.0]);
        assert!((map.lipschitz_constant().value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_cells_match_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(1..5);
            let entries: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let offset: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let map = PiecewiseAffineMapNd::new(
                vec![AffineCellNd {
                    cell: unit_box(n),
                    matrix: DMatrix::from_row_slice(n, n, &entries),
                    offset: DVector::from_vec(offset.clone()),
                }],
                n,
            )
            .unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = map.eval_nd(&DVector::from_vec(x.clone())).unwrap();
            for i in 0..n {
                let mut acc = offset[i];
                for j in 0..n {
                    acc += entries[i * n + j] * x[j];
                }
                assert!((y[i] - acc).abs() <= 1e-12 * (1.0 + acc.abs()));
            }
        }
    }

    #[test]
    fn boundary_disagreement_is_reported() {
        let left = AffineCellNd {
            cell: BoxNd::new(vec![-1.0], vec![0.0]).unwrap(),
            matrix: DMatrix::from_element(1, 1, 1.0),
            offset: DVector::zeros(1),
        };
        let right = AffineCellNd {
            cell: BoxNd::new(vec![0.0], vec![1.0]).unwrap(),
            matrix: DMatrix::from_element(1, 1, 1.0),
            offset: DVector::from_element(1, 0.5),
        };
        let map = PiecewiseAffineMapNd::new(vec![left, right], 1).unwrap();
        assert!(matches!(
            map.eval_nd(&DVector::zeros(1)),
            Err(PamError::AmbiguousBoundary { .. })
        ));
        assert!(matches!(
            map.eval_nd(&DVector::from_element(1, 3.0)),
            Err(PamError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn parses_row_major_spec() {
        let json = r#"{"dimension":2,"cells":[{"lo":[-1,-1],"hi":[1,1],"matrix":[0.5,1.0,0.0,2.0],"offset":[0,0]}]}"#;
        let spec: MapNdSpec = serde_json::from_str(json).unwrap();
        let map = PiecewiseAffineMapNd::try_from(spec).unwrap();
        assert_eq!(map.cells()[0].matrix[(0, 1)], 1.0);
    }
}
