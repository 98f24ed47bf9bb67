//! Piecewise-affine maps: exact 1D maps over rationals and a floating-point
//! n-dimensional variant in [`nd`].

pub mod nd;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{serde_rational, Interval, Scalar};

/// Default refinement budget for compositions.
pub const DEFAULT_PIECE_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PamError {
    #[error("point {x} is outside the map domain{}", step_suffix(*.step))]
    OutOfDomain { x: String, step: Option<usize> },
    #[error("composition needs more than {cap} pieces")]
    PieceBudgetExceeded { cap: usize },
    #[error("containing cells disagree at {point} (gap {gap:e})")]
    AmbiguousBoundary { point: String, gap: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

fn step_suffix(step: Option<usize>) -> String {
    step.map(|k| format!(" at step {k}")).unwrap_or_default()
}

impl PamError {
    pub(crate) fn out_of_domain(x: &Scalar, step: Option<usize>) -> Self {
        PamError::OutOfDomain {
            x: x.to_string(),
            step,
        }
    }
}

/// `x -> slope * x + intercept` on a closed domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffinePiece1D {
    #[serde(rename = "dom")]
    pub domain: Interval,
    #[serde(with = "serde_rational")]
    pub slope: Scalar,
    #[serde(with = "serde_rational")]
    pub intercept: Scalar,
}

impl AffinePiece1D {
    pub fn new(domain: Interval, slope: Scalar, intercept: Scalar) -> Self {
        AffinePiece1D {
            domain,
            slope,
            intercept,
        }
    }

    pub fn apply(&self, x: &Scalar) -> Scalar {
        &self.slope * x + &self.intercept
    }

    /// Image of `part` (assumed inside the domain) under the affine formula.
    pub fn image_of(&self, part: &Interval) -> Interval {
        Interval::spanning(self.apply(part.lo()), self.apply(part.hi()))
    }

    pub fn image(&self) -> Interval {
        self.image_of(&self.domain)
    }

    /// Points of the domain mapped into `target`.
    pub fn preimage(&self, target: &Interval) -> Option<Interval> {
        if self.slope.is_zero() {
            return target
                .contains(&self.intercept)
                .then(|| self.domain.clone());
        }
        let a = (target.lo() - &self.intercept) / &self.slope;
        let b = (target.hi() - &self.intercept) / &self.slope;
        Interval::spanning(a, b).intersect(&self.domain)
    }

    /// Solves `apply(x) = y` ignoring the domain. `None` for flat pieces.
    pub fn invert(&self, y: &Scalar) -> Option<Scalar> {
        (!self.slope.is_zero()).then(|| (y - &self.intercept) / &self.slope)
    }

    /// `outer ∘ self` restricted to `domain`.
    pub fn then(&self, outer: &AffinePiece1D, domain: Interval) -> AffinePiece1D {
        AffinePiece1D {
            domain,
            slope: &outer.slope * &self.slope,
            intercept: &outer.slope * &self.intercept + &outer.intercept,
        }
    }

    fn same_formula(&self, other: &AffinePiece1D) -> bool {
        self.slope == other.slope && self.intercept == other.intercept
    }
}

/// Affine pieces covering a window, plus an optional core on which the
/// map is not resolved into pieces (used by maps with accumulating
/// breakpoints).
#[derive(Debug, Clone)]
pub struct Cover {
    pub pieces: Vec<AffinePiece1D>,
    pub core: Option<Core>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Core {
    /// The unresolved part of the window.
    pub part: Interval,
    /// `f(part)`, exact.
    pub image: Interval,
    /// A forward-invariant interval containing `part`.
    pub orbit: Interval,
}

/// A continuous self-map of an interval that can be evaluated exactly and
/// exposes its affine structure on compact windows.
pub trait Map1D: Send + Sync {
    fn domain(&self) -> Interval;

    fn eval(&self, x: &Scalar) -> Result<Scalar, PamError>;

    fn lipschitz_constant(&self) -> Scalar;

    /// Pieces whose domains tile `window` (minus the core, if any), in order.
    fn cover(&self, window: &Interval, piece_cap: usize) -> Result<Cover, PamError>;

    /// Like [`Map1D::cover`], but free to return a larger core when the
    /// pieces it would replace are finer than `resolution`.
    fn cover_near(&self, window: &Interval, piece_cap: usize, resolution: &Scalar) -> Result<Cover, PamError> {
        let _ = resolution;
        self.cover(window, piece_cap)
    }

    /// `[x, f(x), ..., f^k(x)]`.
    fn iterate(&self, x: &Scalar, k: usize) -> Result<Vec<Scalar>, PamError> {
        let mut out = Vec::with_capacity(k + 1);
        out.push(x.clone());
        for step in 0..k {
            let next = self.eval(&out[step]).map_err(|e| match e {
                PamError::OutOfDomain { x, .. } => PamError::OutOfDomain {
                    x,
                    step: Some(step),
                },
                other => other,
            })?;
            out.push(next);
        }
        Ok(out)
    }

    /// Exact image of an interval (continuity makes it an interval).
    fn image(&self, window: &Interval) -> Result<Interval, PamError> {
        let cover = self.cover(window, DEFAULT_PIECE_CAP)?;
        let mut hull: Option<Interval> = cover.core.map(|c| c.image);
        for piece in &cover.pieces {
            let im = piece.image();
            hull = Some(match hull {
                Some(h) => h.hull(&im),
                None => im,
            });
        }
        hull.ok_or_else(|| PamError::InvalidMap("empty cover".into()))
    }
}

/// An exact piecewise-affine self-map of a closed interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MapSpec", into = "MapSpec")]
pub struct PiecewiseAffineMap1D {
    pieces: Vec<AffinePiece1D>,
    domain: Interval,
}

/// File form of a 1D map: `{"domain":[lo,hi],"pieces":[{"dom":..,"slope":..,"intercept":..}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSpec {
    pub domain: Interval,
    pub pieces: Vec<AffinePiece1D>,
}

impl TryFrom<MapSpec> for PiecewiseAffineMap1D {
    type Error = PamError;

    fn try_from(spec: MapSpec) -> Result<Self, Self::Error> {
        PiecewiseAffineMap1D::new(spec.domain, spec.pieces)
    }
}

impl From<PiecewiseAffineMap1D> for MapSpec {
    fn from(map: PiecewiseAffineMap1D) -> Self {
        MapSpec {
            domain: map.domain,
            pieces: map.pieces,
        }
    }
}

impl PiecewiseAffineMap1D {
    /// Validates ordering, tiling of `domain`, and continuity at shared endpoints.
    pub fn new(domain: Interval, pieces: Vec<AffinePiece1D>) -> Result<Self, PamError> {
        let invalid = |msg: String| Err(PamError::InvalidMap(msg));
        let (Some(first), Some(last)) = (pieces.first(), pieces.last()) else {
            return invalid("no pieces".into());
        };
        if first.domain.lo() != domain.lo() || last.domain.hi() != domain.hi() {
            return invalid(format!("pieces do not span the domain {domain}"));
        }
        if !domain.is_point() && pieces.iter().any(|p| p.domain.is_point()) {
            return invalid("degenerate piece in a nondegenerate map".into());
        }
        for pair in pieces.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.domain.hi() != b.domain.lo() {
                return invalid(format!("gap or overlap between {} and {}", a.domain, b.domain));
            }
            let x = a.domain.hi();
            if a.apply(x) != b.apply(x) {
                return invalid(format!("discontinuous at {x}"));
            }
        }
        Ok(PiecewiseAffineMap1D { pieces, domain })
    }

    pub fn identity(domain: Interval) -> Self {
        let piece = AffinePiece1D::new(domain.clone(), Scalar::one(), Scalar::zero());
        PiecewiseAffineMap1D {
            pieces: vec![piece],
            domain,
        }
    }

    pub fn pieces(&self) -> &[AffinePiece1D] {
        &self.pieces
    }

    pub fn domain_ref(&self) -> &Interval {
        &self.domain
    }

    /// Interior breakpoints in increasing order.
    pub fn breakpoints(&self) -> impl Iterator<Item = &Scalar> {
        self.pieces.iter().skip(1).map(|p| p.domain.lo())
    }

    pub fn piece_at(&self, x: &Scalar) -> Option<&AffinePiece1D> {
        if !self.domain.contains(x) {
            return None;
        }
        let idx = self.pieces.partition_point(|p| p.domain.hi() < x);
        self.pieces.get(idx)
    }

    pub fn eval(&self, x: &Scalar) -> Result<Scalar, PamError> {
        self.piece_at(x)
            .map(|p| p.apply(x))
            .ok_or_else(|| PamError::out_of_domain(x, None))
    }

    /// `g ∘ h` as an exact piecewise-affine map on `h`'s domain.
    pub fn compose(
        g: &PiecewiseAffineMap1D,
        h: &PiecewiseAffineMap1D,
        piece_cap: usize,
    ) -> Result<PiecewiseAffineMap1D, PamError> {
        let mut out: Vec<AffinePiece1D> = Vec::new();
        for inner in &h.pieces {
            for piece in compose_piece(g, inner)? {
                push_merged(&mut out, piece);
                if out.len() > piece_cap {
                    return Err(PamError::PieceBudgetExceeded { cap: piece_cap });
                }
            }
        }
        Ok(PiecewiseAffineMap1D {
            pieces: out,
            domain: h.domain.clone(),
        })
    }

    /// `f^k` by repeated composition.
    pub fn power(&self, k: usize, piece_cap: usize) -> Result<PiecewiseAffineMap1D, PamError> {
        let mut acc = PiecewiseAffineMap1D::identity(self.domain.clone());
        for _ in 0..k {
            acc = PiecewiseAffineMap1D::compose(self, &acc, piece_cap)?;
        }
        Ok(acc)
    }

    /// Maximal intervals mapped into `target`.
    pub fn preimage(&self, target: &Interval) -> Vec<Interval> {
        let mut out: Vec<Interval> = Vec::new();
        for piece in &self.pieces {
            let Some(part) = piece.preimage(target) else {
                continue;
            };
            match out.last_mut() {
                Some(prev) if prev.hi() >= part.lo() => *prev = prev.hull(&part),
                _ => out.push(part),
            }
        }
        out
    }

    /// Max |slope|.
    pub fn lipschitz_constant(&self) -> Scalar {
        self.pieces
            .iter()
            .map(|p| p.slope.abs())
            .max()
            .unwrap_or_else(Scalar::zero)
    }

    /// Restriction to a sub-window of the domain.
    pub fn restrict(&self, window: &Interval) -> Result<PiecewiseAffineMap1D, PamError> {
        if !self.domain.contains_interval(window) {
            return Err(PamError::out_of_domain(window.lo(), None));
        }
        let pieces = clip_pieces(&self.pieces, window);
        Ok(PiecewiseAffineMap1D {
            pieces,
            domain: window.clone(),
        })
    }
}

fn clip_pieces(pieces: &[AffinePiece1D], window: &Interval) -> Vec<AffinePiece1D> {
    if window.is_point() {
        let idx = pieces.partition_point(|p| p.domain.hi() < window.lo());
        return pieces
            .get(idx)
            .map(|p| AffinePiece1D::new(window.clone(), p.slope.clone(), p.intercept.clone()))
            .into_iter()
            .collect();
    }
    pieces
        .iter()
        .filter(|p| p.domain.overlaps_interior(window))
        .map(|p| {
            let dom = p.domain.intersect(window).expect("overlap checked");
            AffinePiece1D::new(dom, p.slope.clone(), p.intercept.clone())
        })
        .collect()
}

fn push_merged(out: &mut Vec<AffinePiece1D>, piece: AffinePiece1D) {
    if let Some(prev) = out.last_mut() {
        if prev.same_formula(&piece) && prev.domain.hi() == piece.domain.lo() {
            prev.domain = prev.domain.hull(&piece.domain);
            return;
        }
    }
    out.push(piece);
}

/// Splits `inner`'s domain at preimages of `g`'s breakpoints and composes.
fn compose_piece(
    g: &PiecewiseAffineMap1D,
    inner: &AffinePiece1D,
) -> Result<Vec<AffinePiece1D>, PamError> {
    let image = inner.image();
    if !g.domain.contains_interval(&image) {
        let bad = if g.domain.contains(image.lo()) {
            image.hi()
        } else {
            image.lo()
        };
        return Err(PamError::out_of_domain(bad, None));
    }
    if inner.slope.is_zero() || inner.domain.is_point() {
        let y = inner.apply(inner.domain.lo());
        let outer = g.piece_at(&y).expect("image inside g's domain");
        return Ok(vec![inner.then(outer, inner.domain.clone())]);
    }
    let mut cuts: Vec<Scalar> = g
        .breakpoints()
        .filter(|t| image.lo() < *t && *t < image.hi())
        .filter_map(|t| inner.invert(t))
        .collect();
    cuts.sort();
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(inner.domain.lo().clone());
    bounds.extend(cuts);
    bounds.push(inner.domain.hi().clone());
    let mut out = Vec::with_capacity(bounds.len() - 1);
    for w in bounds.windows(2) {
        let dom = Interval::new(w[0].clone(), w[1].clone()).expect("sorted cuts");
        let mid = inner.apply(&dom.midpoint());
        let outer = g.piece_at(&mid).expect("image inside g's domain");
        out.push(inner.then(outer, dom));
    }
    Ok(out)
}

impl Map1D for PiecewiseAffineMap1D {
    fn domain(&self) -> Interval {
        self.domain.clone()
    }

    fn eval(&self, x: &Scalar) -> Result<Scalar, PamError> {
        PiecewiseAffineMap1D::eval(self, x)
    }

    fn lipschitz_constant(&self) -> Scalar {
        PiecewiseAffineMap1D::lipschitz_constant(self)
    }

    fn cover(&self, window: &Interval, piece_cap: usize) -> Result<Cover, PamError> {
        if !self.domain.contains_interval(window) {
            let bad = if self.domain.contains(window.lo()) {
                window.hi()
            } else {
                window.lo()
            };
            return Err(PamError::out_of_domain(bad, None));
        }
        let pieces = clip_pieces(&self.pieces, window);
        if pieces.len() > piece_cap {
            return Err(PamError::PieceBudgetExceeded { cap: piece_cap });
        }
        Ok(Cover { pieces, core: None })
    }
}

/// Pieces of `f^steps` on `window`: each piece maps `z` to `f^steps(z)`.
///
/// Fails with `PieceBudgetExceeded` if the refinement outgrows `piece_cap`
/// or if an image meets a non-affine core.
pub fn power_pieces(
    map: &dyn Map1D,
    window: &Interval,
    steps: usize,
    piece_cap: usize,
) -> Result<Vec<AffinePiece1D>, PamError> {
    let mut cells = vec![AffinePiece1D::new(
        window.clone(),
        Scalar::one(),
        Scalar::zero(),
    )];
    for _ in 0..steps {
        let mut next = Vec::with_capacity(cells.len());
        for cell in &cells {
            let image = cell.image();
            let cover = map.cover(&image, piece_cap)?;
            if cover.core.is_some() {
                return Err(PamError::PieceBudgetExceeded { cap: piece_cap });
            }
            for outer in &cover.pieces {
                let dom = if image.is_point() {
                    Some(cell.domain.clone())
                } else {
                    cell.preimage(&outer.domain)
                };
                let Some(dom) = dom else { continue };
                if dom.is_point() && !cell.domain.is_point() {
                    continue;
                }
                push_merged(&mut next, cell.then(outer, dom));
                if image.is_point() {
                    break;
                }
            }
            if next.len() > piece_cap {
                return Err(PamError::PieceBudgetExceeded { cap: piece_cap });
            }
        }
        cells = next;
    }
    Ok(cells)
}

/// Exact image of `window` under `f^steps`.
pub fn power_image(
    map: &dyn Map1D,
    window: &Interval,
    steps: usize,
    piece_cap: usize,
) -> Result<Interval, PamError> {
    let pieces = power_pieces(map, window, steps, piece_cap)?;
    pieces
        .iter()
        .map(AffinePiece1D::image)
        .reduce(|a, b| a.hull(&b))
        .ok_or_else(|| PamError::InvalidMap("empty cover".into()))
}

/// Parses a 1D map file.
pub fn map_from_json(text: &str) -> Result<PiecewiseAffineMap1D, serde_json::Error> {
    serde_json::from_str(text)
}
