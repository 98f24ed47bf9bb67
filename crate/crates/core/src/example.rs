//! The worked example: the three-piece map `f₀` on `[−7/6, 4/3]` and the
//! self-similar homeomorphism `f` of `[−1, 1]` built from scaled copies of
//! it, with a nonisolated fixed point at 0.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::hyperbolic::{derive_constants, Block, HyperbolicAtlas, ShadowingConstants};
use crate::pam::{AffinePiece1D, Core, Cover, Map1D, PamError, PiecewiseAffineMap1D};
use crate::scalar::{int, pow2, rat, serde_rational, Interval, Scalar};
use crate::shadow::{
    conjugate_map, lemma1_shadow, measure_defect, orbit_errors, shadow_via_conjugacy,
    theorem1_shadow, BlockItinerary, ItinerarySegment, ShadowError, ShadowResult,
};

/// `f₀` on `I₀ = [−7/6, 4/3]`.
pub fn f0_map() -> PiecewiseAffineMap1D {
    let piece = |lo, hi, slope, intercept| AffinePiece1D::new(Interval::new(lo, hi).expect("ordered"), slope, intercept);
    PiecewiseAffineMap1D::new(
        Interval::new(rat(-7, 6), rat(4, 3)).expect("ordered"),
        vec![
            piece(rat(-7, 6), rat(-1, 3), rat(1, 2), rat(-1, 2)),
            piece(rat(-1, 3), rat(1, 3), int(2), int(0)),
            piece(rat(1, 3), rat(4, 3), rat(1, 2), rat(1, 2)),
        ],
    )
    .expect("f0 is continuous")
}

/// `G₀ = [−1/3, 1/3]` expanding by 2, `G₁ = [1/3, 29/24]` contracting by 1/2.
pub fn f0_atlas() -> HyperbolicAtlas {
    HyperbolicAtlas::new(
        vec![
            Block::expanding("G0", Interval::new(rat(-1, 3), rat(1, 3)).expect("ordered"), int(2)),
            Block::contracting("G1", Interval::new(rat(1, 3), rat(29, 24)).expect("ordered"), rat(1, 2)),
        ],
        rat(1, 2),
    )
    .expect("valid atlas")
}

/// The whole contracting piece on one side, used for trajectories that
/// stay away from 0.
pub fn contracting_side(sign: i8) -> Block {
    if sign >= 0 {
        Block::contracting("G1+", Interval::new(rat(1, 3), rat(4, 3)).expect("ordered"), rat(1, 2))
    } else {
        Block::contracting("G1-", Interval::new(rat(-7, 6), rat(-1, 3)).expect("ordered"), rat(1, 2))
    }
}

/// Largest defect for which the `f₀` shadower is certified: `2⁻¹⁰`.
///
/// The binding explicit constraint is `7/6 + d ≤ 29/24 − K1·d`, i.e.
/// `d ≤ 1/696`; `2⁻¹⁰` is the largest power of two below it.
pub fn working_threshold() -> Scalar {
    pow2(-10)
}

/// Defect threshold for `f`: every scale with `N_n ≥ 1/4` sees an inner
/// defect of at most `working_threshold()`.
pub fn global_threshold() -> Scalar {
    working_threshold() / int(4)
}

/// `I₀' = [−27/24, 29/24]`, where every point after the first lies.
pub fn i0_prime() -> Interval {
    Interval::new(rat(-27, 24), rat(29, 24)).expect("ordered")
}

pub fn f0_constants() -> ShadowingConstants {
    derive_constants(&rat(1, 2), &int(2), &int(26), &working_threshold()).expect("valid constants")
}

#[derive(Debug, Clone)]
pub struct ExampleF0 {
    pub map: PiecewiseAffineMap1D,
    pub atlas: HyperbolicAtlas,
    pub constants: ShadowingConstants,
}

pub fn build_f0() -> ExampleF0 {
    ExampleF0 {
        map: f0_map(),
        atlas: f0_atlas(),
        constants: f0_constants(),
    }
}

/// `N_n = 2^{−(n+2)}`.
pub fn scale_size(n: u32) -> Scalar {
    pow2(-(n as i64) - 2)
}

/// The `n` with `|x| ∈ (2N_n, 4N_n]`, for `0 < |x| ≤ 1`.
pub fn scale_of(x: &Scalar) -> u32 {
    let a = x.abs();
    debug_assert!(a.is_positive() && a <= Scalar::one());
    let bits = |v: &num_bigint::BigInt| v.bits() as i64;
    let mut n = (bits(a.denom()) - bits(a.numer())).max(0) as u32;
    while n > 0 && a > pow2(-(n as i64)) {
        n -= 1;
    }
    while a <= pow2(-(n as i64) - 1) {
        n += 1;
    }
    n
}

/// The homeomorphism `f` of `[−1, 1]`.
///
/// Pieces are materialized per scale on first use and published behind a
/// read-mostly lock; readers only ever see complete scale maps.
#[derive(Debug)]
pub struct ScaledFamily {
    cache: RwLock<BTreeMap<u32, Arc<PiecewiseAffineMap1D>>>,
    /// The core offered by `cover` is at most `2^{−core_bits}` of the
    /// window width.
    core_bits: u32,
}

impl Default for ScaledFamily {
    fn default() -> Self {
        ScaledFamily {
            cache: RwLock::default(),
            core_bits: 20,
        }
    }
}

/// Shared instance.
pub fn family() -> &'static ScaledFamily {
    static F: OnceLock<ScaledFamily> = OnceLock::new();
    F.get_or_init(ScaledFamily::default)
}

/// `f(x)` on `[−1, 1]`.
pub fn eval_f(x: &Scalar) -> Result<Scalar, PamError> {
    family().eval(x)
}

impl ScaledFamily {
    pub fn new() -> Self {
        Self::default()
    }

    /// A coarser (small `bits`) or finer core near 0. Coarse cores keep
    /// exact searches near the fixed point cheap at the price of looser
    /// brackets.
    pub fn with_core_bits(bits: u32) -> Self {
        ScaledFamily {
            core_bits: bits,
            ..Self::default()
        }
    }

    /// `f` on `[2N_n, 4N_n]`, the conjugate of `f₀` on `[−1, 1]`.
    pub fn scale_map(&self, n: u32) -> Arc<PiecewiseAffineMap1D> {
        if let Some(m) = self.cache.read().expect("cache lock").get(&n) {
            return m.clone();
        }
        let big_n = scale_size(n);
        let base = f0_map()
            .restrict(&Interval::new(int(-1), int(1)).expect("ordered"))
            .expect("inside I0");
        let built = Arc::new(conjugate_map(&base, &big_n.recip(), &(int(3) * &big_n)).expect("nonzero scale"));
        self.cache
            .write()
            .expect("cache lock")
            .entry(n)
            .or_insert(built)
            .clone()
    }

    pub fn cached_scales(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    /// Pieces of `f` on a window inside `(0, 1]`.
    fn positive_pieces(&self, window: &Interval, cap: usize, out: &mut Vec<AffinePiece1D>) -> Result<(), PamError> {
        let top = scale_of(window.hi());
        let bottom = scale_of(window.lo());
        for n in (top..=bottom).rev() {
            let scale = self.scale_map(n);
            let Some(part) = scale.domain_ref().intersect(window) else {
                continue;
            };
            if part.is_point() && !window.is_point() {
                continue;
            }
            for p in scale.pieces() {
                let Some(dom) = p.domain.intersect(&part) else {
                    continue;
                };
                if dom.is_point() && !part.is_point() {
                    continue;
                }
                out.push(AffinePiece1D::new(dom, p.slope.clone(), p.intercept.clone()));
                if out.len() > cap {
                    return Err(PamError::PieceBudgetExceeded { cap });
                }
            }
        }
        Ok(())
    }
}

fn mirror_piece(p: &AffinePiece1D) -> AffinePiece1D {
    AffinePiece1D::new(p.domain.negate(), p.slope.clone(), -&p.intercept)
}

impl Map1D for ScaledFamily {
    fn domain(&self) -> Interval {
        Interval::new(int(-1), int(1)).expect("ordered")
    }

    fn eval(&self, x: &Scalar) -> Result<Scalar, PamError> {
        if x.abs() > Scalar::one() {
            return Err(PamError::out_of_domain(x, None));
        }
        if x.is_zero() {
            return Ok(Scalar::zero());
        }
        let n = scale_of(x);
        let v = self.scale_map(n).eval(&x.abs())?;
        Ok(if x.is_negative() { -v } else { v })
    }

    fn lipschitz_constant(&self) -> Scalar {
        int(2)
    }

    /// Near 0 the pieces accumulate, so a window touching 0 gets a core
    /// `window ∩ [−2^{−D}, 2^{−D}]`, with `2^{−D}` below both the nearest
    /// nonzero endpoint and `2^{−core_bits}` of the width.
    fn cover(&self, window: &Interval, piece_cap: usize) -> Result<Cover, PamError> {
        self.cover_with(window, piece_cap, None)
    }

    /// Also folds every band finer than `resolution` into the core, on
    /// either side of 0.
    fn cover_near(&self, window: &Interval, piece_cap: usize, resolution: &Scalar) -> Result<Cover, PamError> {
        self.cover_with(window, piece_cap, Some(resolution))
    }
}

/// Largest `2^{−D} ≤ limit`, capped at 1.
fn dyadic_below(limit: &Scalar) -> Scalar {
    let limit = limit.clone().min(Scalar::one());
    let mut eps = pow2(-(scale_of(&limit) as i64));
    if eps > limit {
        eps /= int(2);
    }
    eps
}

impl ScaledFamily {
    fn cover_with(&self, window: &Interval, piece_cap: usize, resolution: Option<&Scalar>) -> Result<Cover, PamError> {
        if !self.domain().contains_interval(window) {
            let bad = if window.lo() < &int(-1) { window.lo() } else { window.hi() };
            return Err(PamError::out_of_domain(bad, None));
        }
        let (a, b) = (window.lo(), window.hi());
        if window.is_point() && a.is_zero() {
            return Ok(Cover {
                pieces: Vec::new(),
                core: Some(Core {
                    part: window.clone(),
                    image: window.clone(),
                    orbit: window.clone(),
                }),
            });
        }
        let resolution = resolution.filter(|r| r.is_positive());
        let eps = if !a.is_positive() && !b.is_negative() {
            let nearest = [a.abs(), b.abs()]
                .into_iter()
                .filter(|v| v.is_positive())
                .min()
                .expect("window is not a point");
            let mut limit = nearest.min(window.width() * pow2(-i64::from(self.core_bits)));
            if let Some(r) = resolution {
                limit = limit.max(r.clone());
            }
            Some(dyadic_below(&limit))
        } else {
            let nearest = a.abs().min(b.abs());
            resolution.map(dyadic_below).filter(|eps| &nearest < eps)
        };
        let mut core = None;
        let (mut neg, mut pos) = (None, None);
        match eps {
            Some(eps) => {
                let part = window
                    .intersect(&Interval::new(-eps.clone(), eps.clone()).expect("ordered"))
                    .expect("the window reaches into the core");
                let orbit = if !part.lo().is_negative() {
                    Interval::new(Scalar::zero(), eps.clone())
                } else if !part.hi().is_positive() {
                    Interval::new(-eps.clone(), Scalar::zero())
                } else {
                    Interval::new(-eps.clone(), eps.clone())
                }
                .expect("ordered");
                // f is increasing
                let image = Interval::new(self.eval(part.lo())?, self.eval(part.hi())?).expect("f is increasing");
                core = Some(Core { part, image, orbit });
                if b > &eps {
                    pos = Interval::new(eps.clone(), b.clone());
                }
                if a < &-eps.clone() {
                    neg = Interval::new(a.clone(), -eps);
                }
            }
            None if a.is_positive() => pos = Some(window.clone()),
            None => neg = Some(window.clone()),
        }
        let mut pieces = Vec::new();
        if let Some(w) = neg {
            let mut mirrored = Vec::new();
            self.positive_pieces(&w.negate(), piece_cap, &mut mirrored)?;
            pieces.extend(mirrored.iter().rev().map(mirror_piece));
        }
        if let Some(w) = pos {
            self.positive_pieces(&w, piece_cap.saturating_sub(pieces.len()), &mut pieces)?;
        }
        if pieces.len() > piece_cap {
            return Err(PamError::PieceBudgetExceeded { cap: piece_cap });
        }
        Ok(Cover { pieces, core })
    }
}

/// One rung of the segment ladder `I_n = [11N_n/6, 13N_n/3]`.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentEntry {
    pub n: u32,
    #[serde(with = "serde_rational")]
    pub big_n: Scalar,
    #[serde(with = "serde_rational")]
    pub alpha: Scalar,
    #[serde(with = "serde_rational")]
    pub beta: Scalar,
    /// `δ(n) = N_n/12`.
    #[serde(with = "serde_rational")]
    pub delta: Scalar,
    /// `f(I_n)`, exact.
    pub image: Interval,
    /// `f(I_n) ⊂ N(δ(n), I_n)`.
    pub confined: bool,
}

impl SegmentEntry {
    pub fn interval(&self) -> Interval {
        Interval::new(self.alpha.clone(), self.beta.clone()).expect("ordered")
    }

    /// `I_n` for `sign > 0`, `I'_n = [−β_n, −α_n]` otherwise.
    pub fn signed(&self, sign: i8) -> Interval {
        if sign >= 0 {
            self.interval()
        } else {
            self.interval().negate()
        }
    }
}

/// `I_n` with its confinement check. For `n = 0` the right end `13/12`
/// lies outside `[−1, 1]` and is clipped to 1, which is fixed; this rung
/// covers trajectories in `(13/24, 1]` that no `n ≥ 1` reaches.
pub fn segment(n: u32) -> SegmentEntry {
    let big_n = scale_size(n);
    let alpha = rat(11, 6) * &big_n;
    let beta = (rat(13, 3) * &big_n).min(int(1));
    let fa = eval_f(&alpha).expect("in domain");
    let fb = eval_f(&beta).expect("in domain");
    let delta = &big_n / int(12);
    let image = Interval::new(fa, fb).expect("f is increasing");
    let own = Interval::new(alpha.clone(), beta.clone()).expect("ordered");
    let confined = own.expand(&delta).contains_interval(&image);
    SegmentEntry {
        n,
        big_n,
        alpha,
        beta,
        delta,
        image,
        confined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lemma4Case {
    /// Every `|x_k| ≤ 1/4`.
    Case1,
    /// Every `|x_k|` in `[5/12, 29/24]` on one side (the first point may
    /// sit anywhere in the contracting piece).
    Case2,
    /// A single passage from the expanding block to the contracting one;
    /// `k0` is the first index with `|x_k| ≥ 1/4`.
    Case3 { k0: usize },
    Escape,
}

/// Classifies a trajectory in `I₀` by its shape.
///
/// The crossing index is the first point with `|x_k| ≥ 1/4`. When that
/// point lies in `[1/4, 5/12]` this is the first entry into that window;
/// orbits can also jump from just below `1/4` to just above `5/12`, and
/// those are classified the same way.
pub fn lemma4_classify(points: &[Scalar], d: &Scalar) -> Lemma4Case {
    let domain = f0_map().domain_ref().clone();
    if points.is_empty() || points.iter().any(|x| !domain.contains(x)) {
        return Lemma4Case::Escape;
    }
    let quarter = rat(1, 4);
    let low = rat(5, 12);
    let high = rat(29, 24);
    if points.iter().all(|x| x.abs() <= quarter) {
        return Lemma4Case::Case1;
    }
    let outer = |x: &Scalar, positive: bool| x.is_positive() == positive && x.abs() >= low && x.abs() <= high;
    let x0 = &points[0];
    let positive = x0.is_positive();
    if x0.abs() >= low && points[1..].iter().all(|x| outer(x, positive)) {
        return Lemma4Case::Case2;
    }
    let k0 = points.iter().position(|x| x.abs() >= quarter).expect("not case 1");
    let positive = points[k0].is_positive();
    let lead_ok = points[..k0].iter().all(|x| x.abs() <= rat(5, 24) + int(2) * d)
        || points[k0].abs() > low;
    if lead_ok && points[k0 + 1..].iter().all(|x| outer(x, positive)) {
        return Lemma4Case::Case3 { k0 };
    }
    Lemma4Case::Escape
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExampleError {
    #[error("defect {d} too large: {reason}")]
    DTooLarge { d: String, reason: String },
    #[error("crossing segments too short: lead {lead}, tail {tail}, need at least {mu}")]
    DTooShort { lead: i64, tail: i64, mu: u32 },
    #[error("trajectory touches I_{n} but leaves it")]
    NotConfined { n: u32 },
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error(transparent)]
    Map(#[from] PamError),
}

impl ExampleError {
    pub fn cause(&self) -> &'static str {
        match self {
            ExampleError::DTooLarge { .. } => "DTooLarge",
            ExampleError::DTooShort { .. } => "DTooShort",
            ExampleError::NotConfined { .. } => "NotConfined",
            ExampleError::Shadow(e) => e.cause(),
            ExampleError::Map(PamError::OutOfDomain { .. }) => "OutOfDomain",
            ExampleError::Map(_) => "MapError",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma4Outcome {
    pub case: Lemma4Case,
    /// The trajectory was negated before shadowing.
    pub mirrored: bool,
    pub result: ShadowResult,
}

/// Shadows a pseudotrajectory of `f₀` with defect at most `working_threshold()`.
pub fn lemma4_shadow(points: &[Scalar]) -> Result<Lemma4Outcome, ExampleError> {
    let map = f0_map();
    let traj = measure_defect(&map, points.to_vec())?;
    let limit = working_threshold();
    if traj.defect > limit {
        return Err(ExampleError::DTooLarge {
            d: traj.defect.to_string(),
            reason: format!("above the working threshold {limit}"),
        });
    }
    lemma4_shadow_unchecked(points)
}

/// The same construction without the threshold check. Every bound is
/// still verified exactly, so a success is a genuine shadow.
pub fn lemma4_shadow_unchecked(points: &[Scalar]) -> Result<Lemma4Outcome, ExampleError> {
    let ex = build_f0();
    let traj = measure_defect(&ex.map, points.to_vec())?;
    let d = traj.defect.clone();
    let case = lemma4_classify(points, &d);
    let too_large = |reason: &str| ExampleError::DTooLarge {
        d: d.to_string(),
        reason: reason.to_string(),
    };
    let in_block = |block: &Block| -> Result<ShadowResult, ExampleError> {
        let r = lemma1_shadow(&ex.map, block, ex.atlas.lambda(), points, &d).map_err(|e| match e {
            ShadowError::PreconditionViolated(_) => too_large("trajectory too close to the block boundary"),
            other => other.into(),
        })?;
        Ok(ShadowResult::from_errors(
            r.y,
            r.errors,
            d.clone(),
            Some(ex.constants.l1.clone()),
            r.bound,
            format!("lemma1/{}", block.id),
        ))
    };
    match case {
        Lemma4Case::Escape => Err(too_large("no case of the trichotomy applies")),
        Lemma4Case::Case1 => Ok(Lemma4Outcome {
            case,
            mirrored: false,
            result: in_block(ex.atlas.block("G0").expect("G0"))?,
        }),
        Lemma4Case::Case2 => {
            let sign = if points[0].is_positive() { 1 } else { -1 };
            Ok(Lemma4Outcome {
                case,
                mirrored: false,
                result: in_block(&contracting_side(sign))?,
            })
        }
        Lemma4Case::Case3 { k0 } => {
            let t = traj.horizon() as i64;
            let mu = ex.constants.mu;
            let lead = k0 as i64 - 1;
            let tail = t - k0 as i64 - 1;
            if lead < mu as i64 || tail < mu as i64 {
                return Err(ExampleError::DTooShort { lead, tail, mu });
            }
            let mirrored = points[k0].is_negative();
            let work = if mirrored {
                measure_defect(&ex.map, points.iter().map(|x| -x).collect())?
            } else {
                traj
            };
            let itinerary = BlockItinerary {
                segments: vec![
                    ItinerarySegment {
                        block: "G0".into(),
                        start: 0,
                        end: k0 - 1,
                    },
                    ItinerarySegment {
                        block: "G1".into(),
                        start: k0 + 1,
                        end: t as usize,
                    },
                ],
            };
            let mut result = theorem1_shadow(&ex.map, &ex.atlas, &ex.constants, &work, &itinerary).map_err(
                |e| match e {
                    ShadowError::PreconditionViolated(_) | ShadowError::NoItinerary { .. } => {
                        too_large("crossing segments not deep enough inside the blocks")
                    }
                    other => other.into(),
                },
            )?;
            if mirrored {
                result.z = -&result.z;
                result.method.push_str("/mirrored");
            }
            Ok(Lemma4Outcome {
                case,
                mirrored,
                result,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Branch {
    /// Confined to `±I_n`, shadowed through the conjugacy with `f₀`.
    Segment {
        n: u32,
        sign: i8,
        /// Inner defect was at most `working_threshold()`.
        within_threshold: bool,
    },
    /// Confined to `±I_n` but the rescaled defect is beyond what the `f₀`
    /// construction handles; shadowed by the center fixed point `±3N_n`.
    CoarseSegment { n: u32, sign: i8, reason: String },
    /// Shadowed by the fixed point 0. `climbed` marks a trajectory that
    /// starts below every rung `n ≤ n0` and later enters one.
    RestPoint { climbed: bool },
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem2Outcome {
    pub branch: Branch,
    /// Largest `n` with `d < δ(n)`; `None` for an exact orbit.
    pub n0: Option<u32>,
    pub inner_case: Option<Lemma4Case>,
    pub result: ShadowResult,
}

/// Largest `n` with `d < N_n/12`; `None` when `d = 0` (every rung
/// qualifies) or when no rung does.
pub fn max_scale(d: &Scalar) -> Option<u32> {
    if d.is_zero() {
        return None;
    }
    let twelve_d = int(12) * d;
    if twelve_d >= scale_size(0) {
        return None;
    }
    let mut n = 0;
    while twelve_d < scale_size(n + 1) {
        n += 1;
    }
    Some(n)
}

/// Rungs `n` (with sign) whose segment contains `x`.
fn rungs_containing(x: &Scalar) -> Vec<u32> {
    if x.is_zero() {
        return Vec::new();
    }
    let s = scale_of(x) as i64;
    let a = x.abs();
    (s - 1..=s + 1)
        .filter(|&n| n >= 0)
        .map(|n| n as u32)
        .filter(|&n| segment_bounds(n).contains(&a))
        .collect()
}

fn segment_bounds(n: u32) -> Interval {
    let big_n = scale_size(n);
    Interval::new(rat(11, 6) * &big_n, (rat(13, 3) * &big_n).min(int(1))).expect("ordered")
}

/// Shadows a pseudotrajectory of `f` with defect at most `global_threshold()`.
pub fn theorem2_shadow(points: &[Scalar]) -> Result<Theorem2Outcome, ExampleError> {
    let f = family();
    let traj = measure_defect(f, points.to_vec())?;
    let d = traj.defect.clone();
    let limit = global_threshold();
    if d > limit {
        return Err(ExampleError::DTooLarge {
            d: d.to_string(),
            reason: format!("above the threshold {limit} for f"),
        });
    }
    let n0 = max_scale(&d);
    let allowed = |n: &u32| n0.is_none_or(|top| *n <= top);
    let sign: i8 = if points.first().is_some_and(|x| x.is_negative()) { -1 } else { 1 };
    let start = points.first().map(|x| rungs_containing(x).into_iter().find(allowed)).unwrap_or(None);

    let Some(n) = start else {
        // Below the ladder at k = 0. A point that climbs into a rung n ≤ n0
        // stays in I_{n0}, and |x| ≤ β(n0) ≤ 104d there.
        let climbed = points.iter().any(|x| rungs_containing(x).iter().any(allowed));
        let factor = int(if climbed { 104 } else { 44 });
        let z = Scalar::zero();
        let errors = orbit_errors(f, &z, points)?;
        let bound = &factor * &d;
        let result = ShadowResult::from_errors(z, errors, d.clone(), Some(factor), bound, "rest-point");
        return Ok(Theorem2Outcome {
            branch: Branch::RestPoint { climbed },
            n0,
            inner_case: None,
            result,
        });
    };

    let window = if sign > 0 { segment_bounds(n) } else { segment_bounds(n).negate() };
    if points.iter().any(|x| !window.contains(x)) {
        return Err(ExampleError::NotConfined { n });
    }
    let big_n = scale_size(n);
    let scale = if sign > 0 { big_n.recip() } else { -big_n.recip() };
    let shift = int(3 * sign as i64) * &big_n;
    let within_threshold = &d / &big_n <= working_threshold();
    let mut inner_case = None;
    let attempt = shadow_via_conjugacy::<ExampleError>(f, &scale, &shift, points, |x| {
        let out = if within_threshold {
            lemma4_shadow(x)?
        } else {
            lemma4_shadow_unchecked(x)?
        };
        inner_case = Some(out.case);
        Ok(out.result)
    });
    match attempt {
        Ok(t) if within_threshold || t.outer.within_bound => {
            let mut result = t.outer;
            result.within_bound &= t.exact_transfer;
            Ok(Theorem2Outcome {
                branch: Branch::Segment {
                    n,
                    sign,
                    within_threshold,
                },
                n0,
                inner_case,
                result,
            })
        }
        Err(e) if within_threshold => Err(e),
        other => {
            let reason = match other {
                Ok(_) => "constructive bound not met".to_string(),
                Err(e) => e.cause().to_string(),
            };
            let z = shift;
            let errors = orbit_errors(f, &z, points)?;
            let bound = rat(4, 3) * &big_n;
            let result = ShadowResult::from_errors(z, errors, d.clone(), None, bound, "center-fixed-point");
            Ok(Theorem2Outcome {
                branch: Branch::CoarseSegment { n, sign, reason },
                n0,
                inner_case,
                result,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolic::verify_condition1;

    #[test]
    fn f0_values() {
        let f = f0_map();
        assert_eq!(f.eval(&rat(-7, 6)).unwrap(), rat(-13, 12));
        assert_eq!(f.eval(&int(0)).unwrap(), int(0));
        assert_eq!(f.eval(&rat(5, 12)).unwrap(), rat(17, 24));
        assert_eq!(f.eval(&rat(4, 3)).unwrap(), rat(7, 6));
        assert_eq!(f.eval(&int(1)).unwrap(), int(1));
        assert_eq!(f.eval(&int(-1)).unwrap(), int(-1));
        assert_eq!(f.eval(&rat(-1, 3)).unwrap(), rat(-2, 3));
        assert_eq!(f.lipschitz_constant(), int(2));
    }

    #[test]
    fn example_atlases_pass_condition1() {
        let ex = build_f0();
        assert!(verify_condition1(&ex.atlas, &ex.map).passed);
        for sign in [1, -1] {
            let atlas = HyperbolicAtlas::new(vec![contracting_side(sign)], rat(1, 2)).unwrap();
            assert!(verify_condition1(&atlas, &ex.map).passed);
        }
    }

    #[test]
    fn scale_lookup() {
        assert_eq!(scale_of(&int(1)), 0);
        assert_eq!(scale_of(&rat(1, 2)), 1);
        assert_eq!(scale_of(&rat(3, 4)), 0);
        assert_eq!(scale_of(&rat(1, 3)), 1);
        assert_eq!(scale_of(&pow2(-20)), 20);
        assert_eq!(scale_of(&(pow2(-20) + pow2(-60))), 19);
    }

    #[test]
    fn f_fixed_points_and_symmetry() {
        for n in 0..=20 {
            let p = pow2(-n);
            assert_eq!(eval_f(&p).unwrap(), p);
            assert_eq!(eval_f(&-p.clone()).unwrap(), -p);
            let c = int(3) * pow2(-n - 2);
            assert_eq!(eval_f(&c).unwrap(), c);
        }
        assert_eq!(eval_f(&int(0)).unwrap(), int(0));
        assert!(eval_f(&rat(3, 2)).is_err());
        assert_eq!(family().lipschitz_constant(), int(2));
    }

    #[test]
    fn segment_ladder() {
        let s = segment(1);
        assert_eq!(s.big_n, rat(1, 8));
        assert_eq!(s.interval(), Interval::new(rat(11, 48), rat(13, 24)).unwrap());
        assert_eq!(s.delta, rat(1, 96));
        for n in 1..=20 {
            let s = segment(n);
            assert_eq!(eval_f(&s.alpha).unwrap(), rat(23, 12) * &s.big_n);
            assert_eq!(eval_f(&s.beta).unwrap(), rat(25, 6) * &s.big_n);
            assert!(s.confined);
        }
        assert!(segment(0).confined);
    }

    #[test]
    fn cover_near_zero_has_core() {
        let f = family();
        let w = Interval::new(rat(-1, 100), rat(1, 50)).unwrap();
        let c = f.cover(&w, 100_000).unwrap();
        let core = c.core.unwrap();
        assert!(core.part.contains(&int(0)) && core.part.lo().is_negative());
        assert_eq!(core.part, core.orbit);
        assert_eq!(core.image, core.part);
        assert_eq!(f.image(&core.part).unwrap(), core.part);
        for p in &c.pieces {
            assert_eq!(p.apply(p.domain.lo()), eval_f(p.domain.lo()).unwrap());
            assert_eq!(p.apply(p.domain.hi()), eval_f(p.domain.hi()).unwrap());
        }
        let one_sided = f.cover(&Interval::new(int(0), rat(1, 8)).unwrap(), 100_000).unwrap();
        assert!(one_sided.core.unwrap().part.lo().is_zero());
        let away = f.cover(&Interval::new(rat(1, 10), rat(9, 10)).unwrap(), 100_000).unwrap();
        assert!(away.core.is_none());
        assert!(matches!(f.cover(&w, 3), Err(PamError::PieceBudgetExceeded { .. })));
    }

    #[test]
    fn cover_near_folds_fine_bands_into_the_core() {
        let f = family();
        let w = Interval::new(pow2(-30), rat(1, 8)).unwrap();
        assert!(f.cover(&w, 100_000).unwrap().core.is_none());
        let c = f.cover_near(&w, 100_000, &rat(3, 2048)).unwrap();
        let core = c.core.unwrap();
        assert_eq!(core.part, Interval::new(pow2(-30), pow2(-10)).unwrap());
        assert_eq!(core.orbit, Interval::new(int(0), pow2(-10)).unwrap());
        assert_eq!(core.image, Interval::new(eval_f(&pow2(-30)).unwrap(), pow2(-10)).unwrap());
        assert_eq!(c.pieces.first().unwrap().domain.lo(), &pow2(-10));
        let far = f.cover_near(&Interval::new(rat(1, 10), rat(9, 10)).unwrap(), 100_000, &pow2(-10)).unwrap();
        assert!(far.core.is_none());
    }

    #[test]
    fn classify_examples() {
        let d = pow2(-15);
        assert_eq!(lemma4_classify(&vec![int(0); 5], &d), Lemma4Case::Case1);
        assert_eq!(lemma4_classify(&vec![int(1); 5], &d), Lemma4Case::Case2);
        let orbit = f0_map().iterate(&rat(1, 100), 9).unwrap();
        let k0 = orbit.iter().position(|x| x >= &rat(1, 4)).unwrap();
        assert!(orbit[k0] <= rat(5, 12));
        assert_eq!(lemma4_classify(&orbit, &d), Lemma4Case::Case3 { k0 });
        assert_eq!(lemma4_classify(&[int(0), int(1)], &d), Lemma4Case::Case3 { k0: 1 });
        assert_eq!(lemma4_classify(&[rat(1, 3), rat(3, 10)], &d), Lemma4Case::Escape);
    }

    #[test]
    fn lemma4_exact_orbits() {
        for x0 in [int(0), int(1), rat(-1, 1000)] {
            let orbit = f0_map().iterate(&x0, 40).unwrap();
            let out = lemma4_shadow(&orbit).unwrap();
            assert!(out.result.errors.iter().all(Zero::is_zero), "{x0}");
        }
    }

    #[test]
    fn lemma4_short_crossing() {
        let orbit = f0_map().iterate(&rat(1, 5), 20).unwrap();
        assert!(matches!(lemma4_shadow(&orbit), Err(ExampleError::DTooShort { .. })));
    }

    #[test]
    fn max_scale_examples() {
        assert_eq!(max_scale(&int(0)), None);
        assert_eq!(max_scale(&pow2(-12)), Some(6));
        let d = pow2(-20);
        let n0 = max_scale(&d).unwrap();
        assert!(d < scale_size(n0) / int(12));
        assert!(d >= scale_size(n0 + 1) / int(12));
    }

    #[test]
    fn theorem2_fixed_point_orbit() {
        let p = pow2(-3);
        let out = theorem2_shadow(&vec![p.clone(); 10]).unwrap();
        assert_eq!(out.result.z, p);
        assert!(out.result.errors.iter().all(Zero::is_zero));
    }

    #[test]
    fn theorem2_rest_point_branch() {
        let d = pow2(-16);
        let n0 = max_scale(&d).unwrap();
        let cap = scale_size(n0 + 1);
        let pts: Vec<Scalar> = (0..20).map(|k| if k % 2 == 0 { cap.clone() } else { -cap.clone() } / int(2)).collect();
        let traj = measure_defect(family(), pts.clone()).unwrap();
        assert!(traj.defect <= d * int(64));
        let out = theorem2_shadow(&pts).unwrap();
        assert_eq!(out.branch, Branch::RestPoint { climbed: false });
        assert!(out.result.within_bound);
    }

    #[test]
    fn theorem2_segment_branch() {
        let n = 2;
        let big_n = scale_size(n);
        let inner = f0_map().iterate(&rat(1, 3000), 30).unwrap();
        let d = pow2(-20);
        let pts: Vec<Scalar> = inner
            .iter()
            .enumerate()
            .map(|(k, x)| &big_n * x + int(3) * &big_n + if k % 3 == 0 { d.clone() } else { Scalar::zero() })
            .collect();
        let out = theorem2_shadow(&pts).unwrap();
        assert_eq!(
            out.branch,
            Branch::Segment {
                n,
                sign: 1,
                within_threshold: true
            }
        );
        assert!(out.result.within_bound, "{:?}", out.result.max_error);
        let mirrored: Vec<Scalar> = pts.iter().map(|x| -x).collect();
        let back = theorem2_shadow(&mirrored).unwrap();
        assert_eq!(back.result.z, -out.result.z);
        assert_eq!(back.result.errors, out.result.errors);
    }
}
