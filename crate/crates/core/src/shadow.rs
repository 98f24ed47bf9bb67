//! Constructive shadowing: in-block shadowing, disk refinement, gluing
//! across block transitions, and transfer through affine conjugacies.

use std::io::{Read, Write};

use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::hyperbolic::{
    check_condition2, clause, h_set, BlockAction, Clause, ClauseKind, Disk, HyperbolicAtlas,
    HyperbolicError, ShadowingConstants, Transition,
};
use crate::hyperbolic::Block;
use crate::pam::{power_image, power_pieces, AffinePiece1D, Map1D, PamError, PiecewiseAffineMap1D, DEFAULT_PIECE_CAP};
use crate::scalar::{abs_diff, parse_scalar, pow, serde_rational, Interval, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShadowError {
    #[error("precondition violated: {}", .0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; "))]
    PreconditionViolated(Vec<Clause>),
    #[error("no itinerary: {reason} (index {index})")]
    NoItinerary { index: usize, reason: String },
    #[error("transition {j} failed: the double step does not cover the next disk")]
    TransitionFailed { j: usize },
    #[error("empty pseudotrajectory")]
    Empty,
    #[error(transparent)]
    Map(#[from] PamError),
    #[error(transparent)]
    Hyperbolic(HyperbolicError),
}

impl From<HyperbolicError> for ShadowError {
    fn from(e: HyperbolicError) -> Self {
        match e {
            HyperbolicError::PreconditionViolated(c) => ShadowError::PreconditionViolated(c),
            HyperbolicError::Map(m) => ShadowError::Map(m),
            other => ShadowError::Hyperbolic(other),
        }
    }
}

impl ShadowError {
    /// Stable machine-readable cause.
    pub fn cause(&self) -> &'static str {
        match self {
            ShadowError::PreconditionViolated(_) => "PreconditionViolated",
            ShadowError::NoItinerary { .. } => "NoItinerary",
            ShadowError::TransitionFailed { .. } => "TransitionFailed",
            ShadowError::Empty => "EmptyTrajectory",
            ShadowError::Map(PamError::OutOfDomain { .. }) => "OutOfDomain",
            ShadowError::Map(_) => "MapError",
            ShadowError::Hyperbolic(_) => "InvalidAtlas",
        }
    }
}

/// A finite sequence `x_0, ..., x_T` with its measured defect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pseudotrajectory {
    #[serde(with = "serde_rational::vec")]
    pub points: Vec<Scalar>,
    #[serde(with = "serde_rational")]
    pub defect: Scalar,
}

impl Pseudotrajectory {
    /// Index of the last point.
    pub fn horizon(&self) -> usize {
        self.points.len() - 1
    }
}

/// `e_i = f(x_i) − x_{i+1}` for every step.
pub fn step_errors(map: &dyn Map1D, points: &[Scalar]) -> Result<Vec<Scalar>, PamError> {
    if let Some(last) = points.last() {
        if !map.domain().contains(last) {
            return Err(PamError::out_of_domain(last, Some(points.len() - 1)));
        }
    }
    points
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let fx = map.eval(&w[0]).map_err(|e| match e {
                PamError::OutOfDomain { x, .. } => PamError::OutOfDomain { x, step: Some(i) },
                other => other,
            })?;
            Ok(fx - &w[1])
        })
        .collect()
}

pub fn measure_defect(map: &dyn Map1D, points: Vec<Scalar>) -> Result<Pseudotrajectory, ShadowError> {
    if points.is_empty() {
        return Err(ShadowError::Empty);
    }
    let defect = step_errors(map, &points)?
        .iter()
        .map(Signed::abs)
        .max()
        .unwrap_or_else(Scalar::zero);
    Ok(Pseudotrajectory { points, defect })
}

/// `|f^k(z) − x_k|` for `k = 0..=T`.
pub fn orbit_errors(map: &dyn Map1D, z: &Scalar, points: &[Scalar]) -> Result<Vec<Scalar>, PamError> {
    let orbit = map.iterate(z, points.len().saturating_sub(1))?;
    Ok(orbit.iter().zip(points).map(|(a, b)| abs_diff(a, b)).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Result {
    #[serde(with = "serde_rational")]
    pub y: Scalar,
    #[serde(with = "serde_rational::vec")]
    pub errors: Vec<Scalar>,
    #[serde(with = "serde_rational")]
    pub max_error: Scalar,
    /// `L1·d`.
    #[serde(with = "serde_rational")]
    pub bound: Scalar,
}

/// Shadows a pseudotrajectory segment that stays in one block.
///
/// The stable coordinate starts at zero and is pushed forward; the
/// unstable coordinate ends at zero and is solved backward:
/// `η_j = B⁻¹(η_{j+1} − e_j)`. Errors are then at most `d/(1−λ)`.
///
/// In a contracting block `y = x_0`, so only the points after the first
/// need the `L1·d` margin; the first only has to lie in the block.
pub fn lemma1_shadow(
    map: &dyn Map1D,
    block: &Block,
    lambda: &Scalar,
    points: &[Scalar],
    d: &Scalar,
) -> Result<Lemma1Result, ShadowError> {
    let Some(x0) = points.first() else {
        return Err(ShadowError::Empty);
    };
    let m = points.len() - 1;
    let l1 = (Scalar::one() - lambda).recip();
    let bound = &l1 * d;
    let margin = h_set(block, &bound);
    let inside = |x: &Scalar| margin.as_ref().is_some_and(|h| h.contains(x));
    let mut offending: Vec<usize> = Vec::new();
    for (j, x) in points.iter().enumerate().take(m.max(1)) {
        let ok = match (&block.action, j) {
            (BlockAction::Contracting(_), 0) => block.region.contains(x),
            _ => inside(x),
        };
        if !ok {
            offending.push(j);
        }
    }
    if !offending.is_empty() {
        return Err(ShadowError::PreconditionViolated(vec![clause(
            ClauseKind::SegmentContainment,
            format!("points {offending:?} outside H_{}(L1·d)", block.id),
        )]));
    }
    let y = match &block.action {
        BlockAction::Contracting(_) => x0.clone(),
        BlockAction::Expanding(b) => {
            let e = step_errors(map, points)?;
            let mut eta = Scalar::zero();
            for ej in e.iter().rev() {
                eta = (eta - ej) / b;
            }
            x0 + eta
        }
    };
    let errors = orbit_errors(map, &y, points)?;
    let max_error = errors.iter().max().cloned().unwrap_or_else(Scalar::zero);
    Ok(Lemma1Result {
        y,
        errors,
        max_error,
        bound,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma3Result {
    /// `D' ⊆ D` whose first `m` images stay in the `Kd`-tube.
    pub refined: Interval,
    /// `D* = f^m(D')`, a disk of class `𝒟(Kd, d, f^m(y))`.
    pub image: Disk,
    /// `f^k(D')` for `k = 0..=m`.
    pub tube: Vec<Interval>,
}

/// Largest sub-interval of `within` that `map` sends into `target`.
fn pull_back(map: &dyn Map1D, within: &Interval, target: &Interval) -> Result<Option<Interval>, PamError> {
    let cover = map.cover(within, DEFAULT_PIECE_CAP)?;
    let mut out: Option<Interval> = None;
    for piece in &cover.pieces {
        if let Some(part) = piece.preimage(target) {
            out = Some(match out {
                Some(prev) if prev.hi() >= part.lo() => prev.hull(&part),
                Some(prev) => return Ok(Some(prev)),
                None => part,
            });
        }
    }
    Ok(out)
}

/// Refines a disk along `m` steps of an orbit inside one block.
pub fn lemma3_refine(
    map: &dyn Map1D,
    block: &Block,
    constants: &ShadowingConstants,
    disk: &Disk,
    y: &Scalar,
    m: usize,
    d: &Scalar,
) -> Result<Lemma3Result, ShadowError> {
    let kd = &constants.k * d;
    let mut failed = Vec::new();
    if pow(&constants.lambda, m as u32) * &constants.k >= Scalar::one() {
        failed.push(clause(ClauseKind::RefinementLength, format!("λ^{m}·K ≥ 1")));
    }
    let orbit = map.iterate(y, m)?;
    if let Some(k) = orbit
        .iter()
        .position(|p| !block.region.contains_interval(&Interval::ball(p, &kd)))
    {
        failed.push(clause(
            ClauseKind::OrbitContainment,
            format!("N(Kd, f^{k}(y)) leaves {}", block.id),
        ));
    }
    if !disk.is_member(block, d, &kd, y) {
        failed.push(clause(ClauseKind::DiskClass, "disk not in 𝒟(d, Kd, y)"));
    }
    if !failed.is_empty() {
        return Err(ShadowError::PreconditionViolated(failed));
    }

    let mut forward = vec![disk.set.clone()];
    for p in &orbit[1..] {
        let image = map.image(forward.last().expect("nonempty"))?;
        let clipped = image
            .intersect(&Interval::ball(p, &kd))
            .expect("the image contains the orbit point");
        forward.push(clipped);
    }
    let mut tube = vec![forward[m].clone()];
    for k in (0..m).rev() {
        let next = tube.last().expect("nonempty");
        let back = pull_back(map, &forward[k], next)?.expect("forward sets map onto each other");
        tube.push(back);
    }
    tube.reverse();
    let fm = orbit[m].clone();
    let set = forward[m].clone();
    let image = Disk {
        block: block.id.clone(),
        anchor: fm,
        delta1: kd.clone(),
        delta2: d.clone(),
        set,
    };
    if !image.conforms(block) {
        return Err(ShadowError::PreconditionViolated(vec![clause(
            ClauseKind::DiskClass,
            "refined image is not a disk of class 𝒟(Kd, d, f^m(y))",
        )]));
    }
    Ok(Lemma3Result {
        refined: tube[0].clone(),
        image,
        tube,
    })
}

/// Segment `x_{start..=end}` assigned to one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItinerarySegment {
    pub block: String,
    pub start: usize,
    pub end: usize,
}

impl ItinerarySegment {
    pub fn length(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockItinerary {
    pub segments: Vec<ItinerarySegment>,
}

impl BlockItinerary {
    /// Number of transitions.
    pub fn t(&self) -> usize {
        self.segments.len().saturating_sub(1)
    }

    /// Checks the index structure and the `K1·d` containment of every segment.
    pub fn validate(
        &self,
        atlas: &HyperbolicAtlas,
        constants: &ShadowingConstants,
        traj: &Pseudotrajectory,
    ) -> Result<(), ShadowError> {
        let bad = |index: usize, reason: String| Err(ShadowError::NoItinerary { index, reason });
        let Some(first) = self.segments.first() else {
            return bad(0, "empty itinerary".into());
        };
        if first.start != 0 {
            return bad(0, "first segment must start at 0".into());
        }
        let last = self.segments.last().expect("nonempty");
        if last.end != traj.horizon() {
            return bad(last.end, "last segment must end at T".into());
        }
        let k1d = &constants.k1 * &traj.defect;
        for (j, seg) in self.segments.iter().enumerate() {
            if seg.end < seg.start || seg.length() < constants.mu as usize {
                return bad(seg.start, format!("segment {j} shorter than μ = {}", constants.mu));
            }
            if j > 0 {
                let prev = &self.segments[j - 1];
                if seg.start != prev.end + 2 {
                    return bad(seg.start, format!("gap before segment {j} is not 2"));
                }
                if seg.block == prev.block {
                    return bad(seg.start, format!("segment {j} repeats block {}", seg.block));
                }
            }
            let block = atlas.block(&seg.block)?;
            let h = h_set(block, &k1d);
            for k in seg.start..=seg.end {
                if !h.as_ref().is_some_and(|h| h.contains(&traj.points[k])) {
                    return bad(k, format!("x_{k} not in H_{}(K1·d)", seg.block));
                }
            }
        }
        Ok(())
    }
}

/// Greedy maximal runs in `H_l(K1·d)` separated by gaps of two steps.
///
/// When the point two steps after a run is not deep inside another block,
/// the run is shortened until it is.
pub fn find_itinerary(
    atlas: &HyperbolicAtlas,
    constants: &ShadowingConstants,
    traj: &Pseudotrajectory,
) -> Result<BlockItinerary, ShadowError> {
    let k1d = &constants.k1 * &traj.defect;
    let t_max = traj.horizon();
    let mu = constants.mu as usize;
    let inside = |block: &Block, k: usize| h_set(block, &k1d).is_some_and(|h| h.contains(&traj.points[k]));
    let mut segments = Vec::new();
    let mut start = 0usize;
    let mut current = atlas
        .blocks()
        .iter()
        .find(|b| inside(b, 0))
        .ok_or_else(|| ShadowError::NoItinerary {
            index: 0,
            reason: "x_0 is not deep inside any block".into(),
        })?;
    loop {
        let mut end = start;
        while end < t_max && inside(current, end + 1) {
            end += 1;
        }
        if end == t_max {
            segments.push(ItinerarySegment {
                block: current.id.clone(),
                start,
                end,
            });
            break;
        }
        let lowest = start + mu;
        let mut chosen = None;
        let mut cut = end;
        while cut >= lowest {
            if cut + 2 <= t_max {
                if let Some(next) = atlas
                    .blocks()
                    .iter()
                    .find(|b| b.id != current.id && inside(b, cut + 2))
                {
                    chosen = Some((cut, next));
                    break;
                }
            }
            if cut == 0 {
                break;
            }
            cut -= 1;
        }
        let Some((cut, next)) = chosen else {
            let reason = if end < lowest {
                format!("run in {} from {start} shorter than μ = {mu}", current.id)
            } else {
                format!("no block contains a point two steps after the run in {}", current.id)
            };
            return Err(ShadowError::NoItinerary {
                index: end + 1,
                reason,
            });
        };
        segments.push(ItinerarySegment {
            block: current.id.clone(),
            start,
            end: cut,
        });
        start = cut + 2;
        current = next;
    }
    let itinerary = BlockItinerary { segments };
    itinerary.validate(atlas, constants, traj)?;
    Ok(itinerary)
}

/// One segment's worth of the nested-disk construction.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateStage {
    pub block: String,
    pub start: usize,
    pub end: usize,
    #[serde(with = "serde_rational")]
    pub y: Scalar,
    /// Disk entering the segment, `D_j`.
    pub disk: Interval,
    /// `D'_j ⊆ D_j`.
    pub refined: Interval,
    /// `D*_j = f^{μ_j}(D'_j)`.
    pub image: Interval,
    /// Disk handed to the next segment, inside `f²(D*_j)`.
    pub witness: Option<Interval>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub stages: Vec<CertificateStage>,
    /// Backward nested sets `Z_j ⊆ D'_j`; `z` is the midpoint of `Z_0`.
    pub nested: Vec<Interval>,
}

impl Certificate {
    /// Re-checks every containment of the disk chain with exact images.
    /// Returns the list of failed checks (empty when sound).
    pub fn replay(&self, map: &dyn Map1D, z: &Scalar) -> Result<Vec<String>, PamError> {
        let mut failures = Vec::new();
        for (j, stage) in self.stages.iter().enumerate() {
            let mu = stage.end - stage.start;
            if !stage.disk.contains_interval(&stage.refined) {
                failures.push(format!("stage {j}: refined disk escapes D_{j}"));
            }
            let forward = power_image(map, &stage.refined, mu, DEFAULT_PIECE_CAP)?;
            if !stage.image.contains_interval(&forward) {
                failures.push(format!("stage {j}: f^μ(D') not inside D*"));
            }
            if let Some(w) = &stage.witness {
                let next = &self.stages[j + 1];
                let two = power_image(map, &stage.image, 2, DEFAULT_PIECE_CAP)?;
                if !two.contains_interval(w) || w != &next.disk {
                    failures.push(format!("stage {j}: witness not inside f²(D*)"));
                }
            }
            let nested = &self.nested[j];
            if !stage.refined.contains_interval(nested) {
                failures.push(format!("stage {j}: Z_{j} not inside D'_{j}"));
            }
            if j + 1 < self.stages.len() {
                let image = power_image(map, nested, mu + 2, DEFAULT_PIECE_CAP)?;
                if !self.nested[j + 1].contains_interval(&image) {
                    failures.push(format!("stage {j}: f^(μ+2)(Z_{j}) not inside Z_{}", j + 1));
                }
            }
        }
        if !self.nested.first().is_some_and(|z0| z0.contains(z)) {
            failures.push("z not in Z_0".into());
        }
        Ok(failures)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowResult {
    #[serde(with = "serde_rational")]
    pub z: Scalar,
    #[serde(with = "serde_rational::vec")]
    pub errors: Vec<Scalar>,
    #[serde(with = "serde_rational")]
    pub max_error: Scalar,
    #[serde(with = "serde_rational")]
    pub defect: Scalar,
    /// Claimed bound as a multiple of `d`, when it has that form.
    #[serde(with = "serde_rational::option")]
    pub bound_factor: Option<Scalar>,
    #[serde(with = "serde_rational")]
    pub bound: Scalar,
    pub within_bound: bool,
    /// Largest error on indices inside itinerary segments.
    #[serde(with = "serde_rational::option")]
    pub interior_max: Option<Scalar>,
    /// Largest error on the free step of each gap.
    #[serde(with = "serde_rational::option")]
    pub gap_max: Option<Scalar>,
    pub method: String,
    pub certificate: Option<Certificate>,
}

impl ShadowResult {
    pub(crate) fn from_errors(
        z: Scalar,
        errors: Vec<Scalar>,
        defect: Scalar,
        bound_factor: Option<Scalar>,
        bound: Scalar,
        method: impl Into<String>,
    ) -> Self {
        let max_error = errors.iter().max().cloned().unwrap_or_else(Scalar::zero);
        ShadowResult {
            within_bound: max_error <= bound,
            z,
            errors,
            max_error,
            defect,
            bound_factor,
            bound,
            interior_max: None,
            gap_max: None,
            method: method.into(),
            certificate: None,
        }
    }

    /// `max_error / d`, or zero for an exact orbit.
    pub fn ratio(&self) -> Scalar {
        if self.defect.is_zero() {
            Scalar::zero()
        } else {
            &self.max_error / &self.defect
        }
    }
}

/// Glues in-block shadows across block transitions.
pub fn theorem1_shadow(
    map: &dyn Map1D,
    atlas: &HyperbolicAtlas,
    constants: &ShadowingConstants,
    traj: &Pseudotrajectory,
    itinerary: &BlockItinerary,
) -> Result<ShadowResult, ShadowError> {
    let d = &traj.defect;
    if d > &constants.d0 {
        return Err(ShadowError::PreconditionViolated(vec![clause(
            ClauseKind::DefectAboveThreshold,
            format!("d = {d} > d0 = {}", constants.d0),
        )]));
    }
    itinerary.validate(atlas, constants, traj)?;
    let points = &traj.points;
    let lambda = atlas.lambda();

    let mut ys = Vec::with_capacity(itinerary.segments.len());
    for seg in &itinerary.segments {
        let block = atlas.block(&seg.block)?;
        ys.push(lemma1_shadow(map, block, lambda, &points[seg.start..=seg.end], d)?.y);
    }
    if itinerary.t() == 0 {
        let z = ys[0].clone();
        let errors = orbit_errors(map, &z, points)?;
        let mut out = ShadowResult::from_errors(
            z,
            errors,
            d.clone(),
            Some(constants.l1.clone()),
            &constants.l1 * d,
            "theorem1",
        );
        out.interior_max = Some(out.max_error.clone());
        return Ok(out);
    }

    let kd = &constants.k * d;
    let first = atlas.block(&itinerary.segments[0].block)?;
    let mut disk = if first.is_expanding() {
        Disk::flat(first, ys[0].clone(), d.clone(), kd.clone())
    } else {
        Disk {
            block: first.id.clone(),
            anchor: ys[0].clone(),
            delta1: d.clone(),
            delta2: kd.clone(),
            set: Interval::point(ys[0].clone()),
        }
    };
    let mut stages: Vec<CertificateStage> = Vec::new();
    for (j, seg) in itinerary.segments.iter().enumerate() {
        let block = atlas.block(&seg.block)?;
        let refined = lemma3_refine(map, block, constants, &disk, &ys[j], seg.length(), d)?;
        let mut stage = CertificateStage {
            block: seg.block.clone(),
            start: seg.start,
            end: seg.end,
            y: ys[j].clone(),
            disk: disk.set.clone(),
            refined: refined.refined.clone(),
            image: refined.image.set.clone(),
            witness: None,
        };
        if let Some(next) = itinerary.segments.get(j + 1) {
            let transition = Transition {
                from: &seg.block,
                to: &next.block,
                p: points[seg.end].clone(),
                q: refined.image.anchor.clone(),
                r: ys[j + 1].clone(),
            };
            let outcome = check_condition2(map, atlas, constants, &transition, &refined.image, d)?;
            let Some(witness) = outcome.witness else {
                return Err(ShadowError::TransitionFailed { j });
            };
            stage.witness = Some(witness.set.clone());
            disk = witness;
        }
        stages.push(stage);
    }

    let last = stages.len() - 1;
    let mut nested = vec![stages[last].refined.clone()];
    for j in (0..last).rev() {
        let steps = stages[j].end - stages[j].start + 2;
        let target = nested.last().expect("nonempty");
        let pieces = power_pieces(map, &stages[j].refined, steps, DEFAULT_PIECE_CAP)?;
        let z_j = pieces
            .iter()
            .find_map(|p: &AffinePiece1D| p.preimage(target))
            .expect("the disk chain is nested");
        nested.push(z_j);
    }
    nested.reverse();
    let z = nested[0].midpoint();
    let errors = orbit_errors(map, &z, points)?;

    let mut interior = Scalar::zero();
    let mut gap = Scalar::zero();
    for (j, seg) in itinerary.segments.iter().enumerate() {
        for e in &errors[seg.start..=seg.end] {
            interior = interior.max(e.clone());
        }
        if j < last {
            gap = gap.max(errors[seg.end + 1].clone());
        }
    }
    let interior_bound = constants.interior_factor() * d;
    let mut out = ShadowResult::from_errors(
        z,
        errors,
        d.clone(),
        Some(constants.lipschitz_shadowing.clone()),
        &constants.lipschitz_shadowing * d,
        "theorem1",
    );
    out.within_bound &= interior <= interior_bound;
    out.interior_max = Some(interior);
    out.gap_max = Some(gap);
    out.certificate = Some(Certificate { stages, nested });
    Ok(out)
}

/// `g'(y) = M⁻¹·g(M(y − m)) + m` on `{y : M(y − m) ∈ dom g}`.
pub fn conjugate_map(
    g: &PiecewiseAffineMap1D,
    scale: &Scalar,
    shift: &Scalar,
) -> Result<PiecewiseAffineMap1D, PamError> {
    if scale.is_zero() {
        return Err(PamError::InvalidMap("conjugacy with M = 0".into()));
    }
    let to_outer = |x: &Scalar| x / scale + shift;
    let mut pieces: Vec<AffinePiece1D> = g
        .pieces()
        .iter()
        .map(|p| {
            let domain = Interval::spanning(to_outer(p.domain.lo()), to_outer(p.domain.hi()));
            let intercept = &p.intercept / scale + shift - &p.slope * shift;
            AffinePiece1D::new(domain, p.slope.clone(), intercept)
        })
        .collect();
    if scale.is_negative() {
        pieces.reverse();
    }
    let dom = g.domain_ref();
    PiecewiseAffineMap1D::new(Interval::spanning(to_outer(dom.lo()), to_outer(dom.hi())), pieces)
}

/// Result of shadowing through a conjugacy, with the inner run kept.
#[derive(Debug, Clone, Serialize)]
pub struct Transferred {
    pub outer: ShadowResult,
    pub inner: ShadowResult,
    #[serde(with = "serde_rational")]
    pub scale: Scalar,
    #[serde(with = "serde_rational")]
    pub shift: Scalar,
    /// Outer errors equal `|M|⁻¹` times inner errors, exactly.
    pub exact_transfer: bool,
}

/// Shadows a pseudotrajectory of `g'` by moving it to `g` with
/// `x = M(y − m)`, shadowing there, and mapping the point back.
pub fn shadow_via_conjugacy<E: From<PamError>>(
    outer: &dyn Map1D,
    scale: &Scalar,
    shift: &Scalar,
    points: &[Scalar],
    shadower: impl FnOnce(&[Scalar]) -> Result<ShadowResult, E>,
) -> Result<Transferred, E> {
    if scale.is_zero() {
        return Err(PamError::InvalidMap("conjugacy with M = 0".into()).into());
    }
    let inner_points: Vec<Scalar> = points.iter().map(|y| scale * (y - shift)).collect();
    let inner = shadower(&inner_points)?;
    let z = &inner.z / scale + shift;
    let errors = orbit_errors(outer, &z, points)?;
    let factor = scale.abs().recip();
    let exact_transfer = errors.len() == inner.errors.len()
        && errors.iter().zip(&inner.errors).all(|(o, i)| o == &(i * &factor));
    let defect = step_errors(outer, points)?
        .iter()
        .map(Signed::abs)
        .max()
        .unwrap_or_else(Scalar::zero);
    let mut result = ShadowResult::from_errors(
        z,
        errors,
        defect,
        inner.bound_factor.clone(),
        &inner.bound * &factor,
        format!("conjugacy/{}", inner.method),
    );
    result.interior_max = inner.interior_max.as_ref().map(|v| v * &factor);
    result.gap_max = inner.gap_max.as_ref().map(|v| v * &factor);
    result.within_bound &= inner.within_bound;
    Ok(Transferred {
        outer: result,
        inner,
        scale: scale.clone(),
        shift: shift.clone(),
        exact_transfer,
    })
}

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Format { row: usize, reason: String },
}

/// Reads `k,x_k` rows; a header line is optional and indices must run `0, 1, ...`.
pub fn read_trajectory_csv(reader: impl Read) -> Result<Vec<Scalar>, TrajectoryIoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let fmt = |reason: String| TrajectoryIoError::Format { row, reason };
        if rec.len() != 2 {
            return Err(fmt(format!("expected 2 fields, got {}", rec.len())));
        }
        if row == 0 && rec[0].parse::<usize>().is_err() {
            continue;
        }
        let k: usize = rec[0].parse().map_err(|_| fmt(format!("bad index `{}`", &rec[0])))?;
        if k != points.len() {
            return Err(fmt(format!("index {k} out of sequence")));
        }
        points.push(parse_scalar(&rec[1]).map_err(|e| fmt(e.to_string()))?);
    }
    Ok(points)
}

pub fn write_trajectory_csv(writer: impl Write, points: &[Scalar]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "x_k"])?;
    for (k, x) in points.iter().enumerate() {
        w.write_record([k.to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::{f0_atlas, f0_constants, f0_map};
    use crate::scalar::{int, pow2, rat};

    fn traj(points: Vec<Scalar>) -> Pseudotrajectory {
        measure_defect(&f0_map(), points).unwrap()
    }

    #[test]
    fn defect_examples() {
        let map = f0_map();
        let exact = map.iterate(&rat(1, 100), 6).unwrap();
        assert_eq!(measure_defect(&map, exact.clone()).unwrap().defect, int(0));
        let d = pow2(-12);
        assert_eq!(measure_defect(&map, vec![int(0), d.clone()]).unwrap().defect, d);
        let delta = pow2(-20);
        let shifted: Vec<Scalar> = exact.iter().map(|x| x + &delta).collect();
        let got = measure_defect(&map, shifted).unwrap().defect;
        assert!(got <= int(3) * &delta);
        assert_eq!(got, delta);
        assert!(matches!(measure_defect(&map, vec![]), Err(ShadowError::Empty)));
        assert!(matches!(
            measure_defect(&map, vec![int(0), int(5)]),
            Err(ShadowError::Map(PamError::OutOfDomain { .. }))
        ));
    }

    #[test]
    fn lemma1_examples() {
        let map = f0_map();
        let atlas = f0_atlas();
        let g0 = atlas.block("G0").unwrap();
        let g1 = atlas.block("G1").unwrap();
        let half = rat(1, 2);

        let exact = map.iterate(&rat(1, 50), 3).unwrap();
        let r = lemma1_shadow(&map, g0, &half, &exact, &int(0)).unwrap();
        assert_eq!(r.y, exact[0]);
        assert!(r.errors.iter().all(Zero::is_zero));

        let d = pow2(-12);
        let r = lemma1_shadow(&map, g0, &half, &[int(0), d.clone()], &d).unwrap();
        assert_eq!(r.y, &d / int(2));
        assert_eq!(r.errors, vec![&d / int(2), int(0)]);

        let pts = vec![int(1), int(1) + &d, int(1)];
        let r = lemma1_shadow(&map, g1, &half, &pts, &d).unwrap();
        assert_eq!(r.y, int(1));
        assert!(r.max_error <= int(2) * &d);
    }

    #[test]
    fn lemma1_rejects_points_near_the_edge() {
        let map = f0_map();
        let atlas = f0_atlas();
        let g0 = atlas.block("G0").unwrap();
        let err = lemma1_shadow(&map, g0, &rat(1, 2), &[rat(1, 3), rat(2, 3)], &pow2(-12)).unwrap_err();
        assert!(matches!(err, ShadowError::PreconditionViolated(_)));
    }

    #[test]
    fn lemma3_expanding_block() {
        let map = f0_map();
        let atlas = f0_atlas();
        let g0 = atlas.block("G0").unwrap();
        let c = f0_constants();
        let d = pow2(-16);
        let y = rat(1, 1000);
        let disk = Disk::flat(g0, y.clone(), d.clone(), &c.k * &d);
        let r = lemma3_refine(&map, g0, &c, &disk, &y, 5, &d).unwrap();
        let f5 = map.iterate(&y, 5).unwrap()[5].clone();
        assert_eq!(r.image.set, Interval::ball(&f5, &(int(26) * &d)));
        assert_eq!(r.refined, Interval::ball(&y, &(int(26) * &d / int(32))));
        assert_eq!(power_image(&map, &r.refined, 5, 100).unwrap(), r.image.set);
    }

    #[test]
    fn lemma3_rejects_short_runs() {
        let map = f0_map();
        let atlas = f0_atlas();
        let g0 = atlas.block("G0").unwrap();
        let c = f0_constants();
        let d = pow2(-16);
        let y = Scalar::zero();
        let disk = Disk::flat(g0, y.clone(), d.clone(), &c.k * &d);
        let err = lemma3_refine(&map, g0, &c, &disk, &y, 0, &d).unwrap_err();
        let ShadowError::PreconditionViolated(cl) = err else { panic!() };
        assert_eq!(cl[0].kind, ClauseKind::RefinementLength);
    }

    #[test]
    fn lemma3_contracting_block() {
        let map = f0_map();
        let atlas = f0_atlas();
        let g1 = atlas.block("G1").unwrap();
        let c = f0_constants();
        let d = pow2(-16);
        let w = int(1) + &d;
        let disk = Disk {
            block: "G1".into(),
            anchor: int(1),
            delta1: d.clone(),
            delta2: &c.k * &d,
            set: Interval::point(w),
        };
        let r = lemma3_refine(&map, g1, &c, &disk, &int(1), 5, &d).unwrap();
        assert_eq!(r.image.set, Interval::point(int(1) + &d / int(32)));
    }

    fn crossing(d: &Scalar, lead: usize, tail: usize) -> Pseudotrajectory {
        let map = f0_map();
        let mut pts = vec![rat(1, 3) - rat(1, 48)];
        for _ in 0..lead {
            let prev = pts.last().unwrap().clone();
            pts.push(&prev / int(2) + d);
        }
        pts.reverse();
        for _ in 0..tail {
            let next = map.eval(pts.last().unwrap()).unwrap() - d;
            pts.push(next);
        }
        traj(pts)
    }

    #[test]
    fn finds_two_segment_itinerary() {
        let c = f0_constants();
        let t = crossing(&pow2(-14), 12, 12);
        let it = find_itinerary(&f0_atlas(), &c, &t).unwrap();
        assert_eq!(it.segments.len(), 2);
        assert_eq!(it.segments[0].block, "G0");
        assert_eq!(it.segments[1].block, "G1");
        assert_eq!(it.segments[1].start, it.segments[0].end + 2);
    }

    #[test]
    fn single_block_itinerary() {
        let c = f0_constants();
        let map = f0_map();
        let t = traj(map.iterate(&Scalar::zero(), 10).unwrap());
        let it = find_itinerary(&f0_atlas(), &c, &t).unwrap();
        assert_eq!(it.t(), 0);
        let r = theorem1_shadow(&map, &f0_atlas(), &c, &t, &it).unwrap();
        assert_eq!(r.z, Scalar::zero());
        assert!(r.errors.iter().all(Zero::is_zero));
    }

    #[test]
    fn short_run_has_no_itinerary() {
        let c = f0_constants();
        let t = crossing(&pow2(-14), 2, 12);
        assert!(matches!(
            find_itinerary(&f0_atlas(), &c, &t),
            Err(ShadowError::NoItinerary { .. })
        ));
    }

    #[test]
    fn theorem1_on_crossing() {
        let map = f0_map();
        let atlas = f0_atlas();
        let c = f0_constants();
        let d = pow2(-12);
        let t = crossing(&d, 14, 14);
        let it = find_itinerary(&atlas, &c, &t).unwrap();
        let r = theorem1_shadow(&map, &atlas, &c, &t, &it).unwrap();
        assert!(r.within_bound);
        assert!(r.max_error <= int(109) * &d);
        assert!(r.interior_max.clone().unwrap() <= int(54) * &d);
        let cert = r.certificate.as_ref().unwrap();
        assert!(cert.replay(&map, &r.z).unwrap().is_empty());
    }

    #[test]
    fn conjugate_map_examples() {
        let f0 = f0_map();
        assert_eq!(conjugate_map(&f0, &int(1), &int(0)).unwrap(), f0);
        let n3 = pow2(-5);
        let g = conjugate_map(&f0, &n3.recip(), &(int(3) * &n3)).unwrap();
        let x = rat(1, 10);
        let y = &x * &n3 + int(3) * &n3;
        assert_eq!(g.eval(&y).unwrap(), &n3 * f0.eval(&x).unwrap() + int(3) * &n3);
        assert_eq!(g.eval(&(&n3 + int(3) * &n3)).unwrap(), &n3 + int(3) * &n3);
        let back = conjugate_map(&g, &n3, &(-int(3))).unwrap();
        assert_eq!(back, f0);
        let flipped = conjugate_map(&f0, &int(-4), &rat(-3, 4)).unwrap();
        let again = conjugate_map(&flipped, &rat(-1, 4), &int(-3)).unwrap();
        assert_eq!(again, f0);
    }

    #[test]
    fn identity_conjugacy_matches_direct() {
        let map = f0_map();
        let atlas = f0_atlas();
        let g0 = atlas.block("G0").unwrap();
        let d = pow2(-12);
        let pts = vec![int(0), d.clone(), int(2) * &d];
        let direct = lemma1_shadow(&map, g0, &rat(1, 2), &pts, &d).unwrap();
        let via = shadow_via_conjugacy::<ShadowError>(&map, &int(1), &int(0), &pts, |x| {
            let r = lemma1_shadow(&map, g0, &rat(1, 2), x, &d)?;
            Ok(ShadowResult::from_errors(r.y, r.errors, d.clone(), Some(int(2)), r.bound, "lemma1"))
        })
        .unwrap();
        assert_eq!(via.outer.z, direct.y);
        assert!(via.exact_transfer);
    }

    #[test]
    fn csv_roundtrip() {
        let pts = vec![rat(1, 3), int(-2), pow2(-40)];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,x_k\n0,1/3\n"));
        assert_eq!(read_trajectory_csv(&buf[..]).unwrap(), pts);
        let dec = "0,0.125\n1,-1.5e-1\n";
        assert_eq!(read_trajectory_csv(dec.as_bytes()).unwrap(), vec![rat(1, 8), rat(-3, 20)]);
        assert!(read_trajectory_csv("0,1\n2,1\n".as_bytes()).is_err());
    }
}
