//! Hyperbolic block atlases for 1D piecewise-affine maps.
//!
//! A block is a closed interval on which the map is affine and either
//! contracting (stable direction only) or expanding (unstable direction
//! only). The n-dimensional floating-point counterpart lives in [`nd`].

pub mod nd;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pam::{power_image, power_pieces, Map1D, PamError, DEFAULT_PIECE_CAP};
use crate::scalar::{serde_rational, Interval, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HyperbolicError {
    #[error("invalid constants: {0}")]
    InvalidConstants(String),
    #[error("invalid atlas: {0}")]
    InvalidAtlas(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
    #[error("precondition violated: {}", join_clauses(.0))]
    PreconditionViolated(Vec<Clause>),
    #[error(transparent)]
    Map(#[from] PamError),
}

fn join_clauses(v: &[Clause]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("; ")
}

/// A named hypothesis that failed, with a human-readable detail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Clause {
    pub kind: ClauseKind,
    pub detail: String,
}

impl std::fmt::Display for Clause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClauseKind {
    /// `p ∈ G_l`, `f²(p) ∈ G_m`, `l ≠ m`.
    SplitBlocks,
    /// `q ∈ H_l(Kd)`, `r ∈ H_m(Kd)`.
    AnchorsInside,
    /// `|p − q| ≤ L1·d`, `|f²(p) − r| ≤ L2·d`.
    AnchorDistances,
    /// The input disk is not in `𝒟(Kd, d, q)`.
    DiskClass,
    DefectAboveThreshold,
    /// Anchor (or its image) not deep enough inside the block.
    AnchorContainment,
    /// `N(Kd, f^k(y)) ⊂ G_l` fails along the orbit.
    OrbitContainment,
    /// `λ^m K < 1` fails.
    RefinementLength,
    /// Pseudotrajectory points leave `H_l(L1·d)`.
    SegmentContainment,
}

pub(crate) fn clause(kind: ClauseKind, detail: impl Into<String>) -> Clause {
    Clause {
        kind,
        detail: detail.into(),
    }
}

/// How the map acts on a 1D block: contraction by `a` or expansion by `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockAction {
    /// `s = 1, u = 0`: the stable factor is the whole line.
    Contracting(Scalar),
    /// `s = 0, u = 1`: the unstable factor is the whole line.
    Expanding(Scalar),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: String,
    pub region: Interval,
    pub action: BlockAction,
}

impl Block {
    pub fn contracting(id: impl Into<String>, region: Interval, a: Scalar) -> Self {
        Block {
            id: id.into(),
            region,
            action: BlockAction::Contracting(a),
        }
    }

    pub fn expanding(id: impl Into<String>, region: Interval, b: Scalar) -> Self {
        Block {
            id: id.into(),
            region,
            action: BlockAction::Expanding(b),
        }
    }

    pub fn stable_dim(&self) -> usize {
        matches!(self.action, BlockAction::Contracting(_)) as usize
    }

    pub fn unstable_dim(&self) -> usize {
        matches!(self.action, BlockAction::Expanding(_)) as usize
    }

    pub fn is_expanding(&self) -> bool {
        self.unstable_dim() == 1
    }

    /// The slope the map must have on the block.
    pub fn multiplier(&self) -> &Scalar {
        match &self.action {
            BlockAction::Contracting(a) => a,
            BlockAction::Expanding(b) => b,
        }
    }

    /// `‖A‖`, zero when the stable factor is trivial.
    pub fn stable_norm(&self) -> Scalar {
        match &self.action {
            BlockAction::Contracting(a) => a.abs(),
            BlockAction::Expanding(_) => Scalar::zero(),
        }
    }

    /// `‖B⁻¹‖`, zero when the unstable factor is trivial.
    pub fn unstable_inverse_norm(&self) -> Scalar {
        match &self.action {
            BlockAction::Contracting(_) => Scalar::zero(),
            BlockAction::Expanding(b) => b.abs().recip(),
        }
    }
}

/// `N(Δ, p)`; in 1D a closed ball.
pub fn neighborhood(p: &Scalar, delta: &Scalar) -> Interval {
    Interval::ball(p, delta)
}

/// `H_l(Δ)`: the points whose Δ-neighborhood stays inside the block.
pub fn h_set(block: &Block, delta: &Scalar) -> Option<Interval> {
    block.region.shrink(delta)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperbolicAtlas {
    blocks: Vec<Block>,
    lambda: Scalar,
}

impl HyperbolicAtlas {
    pub fn new(blocks: Vec<Block>, lambda: Scalar) -> Result<Self, HyperbolicError> {
        if !(lambda.is_positive() && lambda < Scalar::one()) {
            return Err(HyperbolicError::InvalidAtlas(format!(
                "lambda {lambda} outside (0, 1)"
            )));
        }
        for (i, a) in blocks.iter().enumerate() {
            if let BlockAction::Expanding(b) = &a.action {
                if b.is_zero() {
                    return Err(HyperbolicError::InvalidAtlas(format!(
                        "block {} has a singular B",
                        a.id
                    )));
                }
            }
            for b in &blocks[i + 1..] {
                if a.id == b.id {
                    return Err(HyperbolicError::InvalidAtlas(format!("duplicate id {}", a.id)));
                }
                if a.region.overlaps_interior(&b.region) {
                    return Err(HyperbolicError::InvalidAtlas(format!(
                        "blocks {} and {} overlap",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(HyperbolicAtlas { blocks, lambda })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn lambda(&self) -> &Scalar {
        &self.lambda
    }

    pub fn block(&self, id: &str) -> Result<&Block, HyperbolicError> {
        self.blocks
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| HyperbolicError::UnknownBlock(id.to_string()))
    }

    /// First block whose `H(Δ)` contains `x`.
    pub fn block_with_margin(&self, x: &Scalar, delta: &Scalar) -> Option<&Block> {
        self.blocks
            .iter()
            .find(|b| h_set(b, delta).is_some_and(|h| h.contains(x)))
    }
}

/// Derived shadowing constants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShadowingConstants {
    #[serde(with = "serde_rational")]
    pub lambda: Scalar,
    /// Lipschitz constant of the map.
    #[serde(with = "serde_rational", rename = "L0")]
    pub l0: Scalar,
    /// In-block shadowing constant `1/(1−λ)`.
    #[serde(with = "serde_rational", rename = "L1")]
    pub l1: Scalar,
    /// Transition tolerance `L1 + L0 + 1`.
    #[serde(with = "serde_rational", rename = "L2")]
    pub l2: Scalar,
    #[serde(with = "serde_rational", rename = "K")]
    pub k: Scalar,
    /// H-set margin `K + L1`.
    #[serde(with = "serde_rational", rename = "K1")]
    pub k1: Scalar,
    /// The global shadowing factor `L0·(L1 + 2K) + 1`.
    #[serde(with = "serde_rational", rename = "LL")]
    pub lipschitz_shadowing: Scalar,
    /// Minimal segment length with `λ^μ K < 1`.
    pub mu: u32,
    #[serde(with = "serde_rational")]
    pub d0: Scalar,
}

impl ShadowingConstants {
    /// Bound on errors inside itinerary segments, `(L1 + 2K)`.
    pub fn interior_factor(&self) -> Scalar {
        &self.l1 + &self.k * Scalar::from_integer(2.into())
    }
}

pub fn derive_constants(
    lambda: &Scalar,
    l0: &Scalar,
    k: &Scalar,
    d0: &Scalar,
) -> Result<ShadowingConstants, HyperbolicError> {
    let bad = |m: String| Err(HyperbolicError::InvalidConstants(m));
    if !(lambda.is_positive() && lambda < &Scalar::one()) {
        return bad(format!("lambda {lambda} outside (0, 1)"));
    }
    if l0 < &Scalar::one() {
        return bad(format!("L0 = {l0} < 1"));
    }
    if k < &(l0 + Scalar::one()) {
        return bad(format!("K = {k} < L0 + 1 = {}", l0 + Scalar::one()));
    }
    if !d0.is_positive() {
        return bad(format!("d0 = {d0} must be positive"));
    }
    let one = Scalar::one();
    let l1 = (&one - lambda).recip();
    let l2 = &l1 + l0 + &one;
    let k1 = k + &l1;
    let two = Scalar::from_integer(2.into());
    let lipschitz_shadowing = l0 * (&l1 + &two * k) + &one;
    let mut mu = 0u32;
    let mut acc = k.clone();
    while acc >= one {
        acc *= lambda;
        mu += 1;
    }
    Ok(ShadowingConstants {
        lambda: lambda.clone(),
        l0: l0.clone(),
        l1,
        l2,
        k: k.clone(),
        k1,
        lipschitz_shadowing,
        mu,
        d0: d0.clone(),
    })
}

/// A disk of class `𝒟(Δ₁, Δ₂, anchor)` realized as a subset of the line.
///
/// In an expanding block the disk is the full unstable ball
/// `[anchor − Δ₁, anchor + Δ₁]`. In a contracting block the unstable
/// factor is trivial and the disk is a single point at distance at most
/// `min(Δ₁, Δ₂)` from the anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Disk {
    pub block: String,
    #[serde(with = "serde_rational")]
    pub anchor: Scalar,
    #[serde(with = "serde_rational")]
    pub delta1: Scalar,
    #[serde(with = "serde_rational")]
    pub delta2: Scalar,
    pub set: Interval,
}

impl Disk {
    /// The graph of `Ξ ≡ 0` over the unstable `Δ₁`-ball.
    pub fn flat(block: &Block, anchor: Scalar, delta1: Scalar, delta2: Scalar) -> Self {
        let set = if block.is_expanding() {
            Interval::ball(&anchor, &delta1)
        } else {
            Interval::point(anchor.clone())
        };
        Disk {
            block: block.id.clone(),
            anchor,
            delta1,
            delta2,
            set,
        }
    }

    /// Membership in `𝒟(Δ₁, Δ₂, anchor)` for the given block.
    pub fn is_member(&self, block: &Block, delta1: &Scalar, delta2: &Scalar, anchor: &Scalar) -> bool {
        if self.block != block.id {
            return false;
        }
        if block.is_expanding() {
            self.set == Interval::ball(anchor, delta1)
        } else {
            self.set.is_point() && &crate::scalar::abs_diff(self.set.lo(), anchor) <= delta1.min(delta2)
        }
    }

    pub fn conforms(&self, block: &Block) -> bool {
        self.is_member(block, &self.delta1, &self.delta2, &self.anchor)
    }
}

/// Graph transform of a disk through one step of the block map.
///
/// `image_anchor` is `f(anchor)`. The result lies in
/// `𝒟(Δ₁/λ, λΔ₂, f(anchor))` and is contained in `f(disk)`.
pub fn map_disk(
    block: &Block,
    lambda: &Scalar,
    disk: &Disk,
    image_anchor: &Scalar,
) -> Result<Disk, HyperbolicError> {
    let delta = (&disk.delta1).max(&disk.delta2);
    let mut failed = Vec::new();
    if !h_set(block, delta).is_some_and(|h| h.contains(&disk.anchor)) {
        failed.push(clause(
            ClauseKind::AnchorContainment,
            format!("anchor {} not in H_{}({delta})", disk.anchor, block.id),
        ));
    }
    if !block.region.contains(image_anchor) {
        failed.push(clause(
            ClauseKind::AnchorContainment,
            format!("image anchor {image_anchor} outside {}", block.id),
        ));
    }
    if !disk.conforms(block) {
        failed.push(clause(ClauseKind::DiskClass, "disk does not match its block"));
    }
    if !failed.is_empty() {
        return Err(HyperbolicError::PreconditionViolated(failed));
    }
    let delta1 = &disk.delta1 / lambda;
    let delta2 = &disk.delta2 * lambda;
    let set = match &block.action {
        BlockAction::Expanding(_) => Interval::ball(image_anchor, &delta1),
        BlockAction::Contracting(a) => {
            let offset = disk.set.lo() - &disk.anchor;
            Interval::point(image_anchor + a * offset)
        }
    };
    Ok(Disk {
        block: block.id.clone(),
        anchor: image_anchor.clone(),
        delta1,
        delta2,
        set,
    })
}

/// Outcome of checking Condition 1 on one block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub id: String,
    #[serde(with = "serde_rational")]
    pub stable_norm: Scalar,
    #[serde(with = "serde_rational")]
    pub unstable_inverse_norm: Scalar,
    pub norms_ok: bool,
    pub affine_ok: bool,
    pub issues: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    #[serde(with = "serde_rational")]
    pub lambda: Scalar,
    pub blocks: Vec<BlockCheck>,
    pub passed: bool,
}

/// Checks the norm bounds and the block-affine form of the map on every block.
pub fn verify_condition1(atlas: &HyperbolicAtlas, map: &dyn Map1D) -> CertificateReport {
    let lambda = atlas.lambda();
    let blocks: Vec<BlockCheck> = atlas
        .blocks()
        .iter()
        .map(|block| {
            let stable_norm = block.stable_norm();
            let unstable_inverse_norm = block.unstable_inverse_norm();
            let mut issues = Vec::new();
            if &stable_norm > lambda {
                issues.push(format!("‖A‖ = {stable_norm} > λ = {lambda}"));
            }
            if &unstable_inverse_norm > lambda {
                issues.push(format!("‖B⁻¹‖ = {unstable_inverse_norm} > λ = {lambda}"));
            }
            let norms_ok = issues.is_empty();
            let affine_ok = match map.cover(&block.region, DEFAULT_PIECE_CAP) {
                Ok(cover) if cover.core.is_none() => {
                    let mut ok = true;
                    for piece in &cover.pieces {
                        if &piece.slope != block.multiplier() {
                            ok = false;
                            issues.push(format!(
                                "slope {} on {} differs from block multiplier {}",
                                piece.slope,
                                piece.domain,
                                block.multiplier()
                            ));
                        }
                    }
                    ok
                }
                Ok(_) => {
                    issues.push("map is not affine on the whole block".into());
                    false
                }
                Err(e) => {
                    issues.push(format!("block region not covered by the map: {e}"));
                    false
                }
            };
            BlockCheck {
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
    CertificateReport {
        lambda: lambda.clone(),
        blocks,
        passed,
    }
}

/// The three anchor points of a block transition.
#[derive(Debug, Clone)]
pub struct Transition<'a> {
    pub from: &'a str,
    pub to: &'a str,
    /// Pseudotrajectory point at the end of the outgoing segment.
    pub p: Scalar,
    /// Anchor of the outgoing disk.
    pub q: Scalar,
    /// Anchor of the incoming segment.
    pub r: Scalar,
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition2Outcome {
    pub holds: bool,
    /// `f²(disk)`.
    pub image: Interval,
    /// A disk of class `𝒟(d, Kd, r)` inside the image, when one exists.
    pub witness: Option<Disk>,
}

/// Verifies the two-step transversality condition for one configuration.
pub fn check_condition2(
    map: &dyn Map1D,
    atlas: &HyperbolicAtlas,
    constants: &ShadowingConstants,
    transition: &Transition<'_>,
    disk: &Disk,
    d: &Scalar,
) -> Result<Condition2Outcome, HyperbolicError> {
    let from = atlas.block(transition.from)?;
    let to = atlas.block(transition.to)?;
    let kd = &constants.k * d;
    let (p, q, r) = (&transition.p, &transition.q, &transition.r);
    let mut failed = Vec::new();
    if d > &constants.d0 {
        failed.push(clause(
            ClauseKind::DefectAboveThreshold,
            format!("d = {d} > d0 = {}", constants.d0),
        ));
    }
    let f2p = map.iterate(p, 2)?.pop().expect("two steps");
    if from.id == to.id {
        failed.push(clause(ClauseKind::SplitBlocks, "source and target blocks coincide"));
    }
    if !from.region.contains(p) {
        failed.push(clause(ClauseKind::SplitBlocks, format!("p = {p} outside {}", from.id)));
    }
    if !to.region.contains(&f2p) {
        failed.push(clause(
            ClauseKind::SplitBlocks,
            format!("f²(p) = {f2p} outside {}", to.id),
        ));
    }
    if !h_set(from, &kd).is_some_and(|h| h.contains(q)) {
        failed.push(clause(ClauseKind::AnchorsInside, format!("q = {q} not in H_{}(Kd)", from.id)));
    }
    if !h_set(to, &kd).is_some_and(|h| h.contains(r)) {
        failed.push(clause(ClauseKind::AnchorsInside, format!("r = {r} not in H_{}(Kd)", to.id)));
    }
    if crate::scalar::abs_diff(p, q) > &constants.l1 * d {
        failed.push(clause(ClauseKind::AnchorDistances, "|p − q| > L1·d"));
    }
    if crate::scalar::abs_diff(&f2p, r) > &constants.l2 * d {
        failed.push(clause(ClauseKind::AnchorDistances, "|f²(p) − r| > L2·d"));
    }
    if !disk.is_member(from, &kd, d, q) {
        failed.push(clause(ClauseKind::DiskClass, "disk not in 𝒟(Kd, d, q)"));
    }
    if !failed.is_empty() {
        return Err(HyperbolicError::PreconditionViolated(failed));
    }

    let image = power_image(map, &disk.set, 2, DEFAULT_PIECE_CAP)?;
    let witness = if to.is_expanding() {
        let want = Interval::ball(r, d);
        image
            .contains_interval(&want)
            .then(|| Disk::flat(to, r.clone(), d.clone(), kd.clone()))
    } else {
        let nearest = image.clamp(r);
        (&crate::scalar::abs_diff(&nearest, r) <= d.min(&kd)).then(|| Disk {
            block: to.id.clone(),
            anchor: r.clone(),
            delta1: d.clone(),
            delta2: kd.clone(),
            set: Interval::point(nearest),
        })
    };
    Ok(Condition2Outcome {
        holds: witness.is_some(),
        image,
        witness,
    })
}

/// Result of the universal transition check for one ordered block pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub from: String,
    pub to: String,
    /// No admissible `p` exists, so the condition holds trivially.
    pub vacuous: bool,
    pub holds: bool,
    /// Smallest slack `reach − required` over admissible `p`.
    #[serde(with = "serde_rational::option")]
    pub worst_margin: Option<Scalar>,
    #[serde(with = "serde_rational::option")]
    pub worst_p: Option<Scalar>,
    pub note: Option<String>,
}

/// Verifies the transition condition for every admissible configuration
/// at defect `d`, block pair by block pair.
///
/// Every admissible source disk contains `[p − (K − L1)d, p + (K − L1)d]`,
/// so it suffices that the `f²`-image of that window reaches far enough on
/// both sides of `f²(p)`. The reach is piecewise affine in `p`; its minimum
/// is found exactly among breakpoints and window endpoints. Requires `f²`
/// to be monotone on the relevant window.
pub fn verify_condition2_universal(
    map: &dyn Map1D,
    atlas: &HyperbolicAtlas,
    constants: &ShadowingConstants,
    d: &Scalar,
) -> Result<Vec<PairReport>, HyperbolicError> {
    let kd = &constants.k * d;
    let mut reports = Vec::new();
    for from in atlas.blocks() {
        for to in atlas.blocks() {
            if from.id == to.id {
                continue;
            }
            reports.push(check_pair(map, constants, from, to, d, &kd)?);
        }
    }
    Ok(reports)
}

fn check_pair(
    map: &dyn Map1D,
    constants: &ShadowingConstants,
    from: &Block,
    to: &Block,
    d: &Scalar,
    kd: &Scalar,
) -> Result<PairReport, HyperbolicError> {
    let mut report = PairReport {
        from: from.id.clone(),
        to: to.id.clone(),
        vacuous: true,
        holds: true,
        worst_margin: None,
        worst_p: None,
        note: None,
    };
    let (Some(h_from), Some(h_to)) = (h_set(from, kd), h_set(to, kd)) else {
        return Ok(report);
    };
    let Some(window) = h_from.expand(&(&constants.l1 * d)).intersect(&from.region) else {
        return Ok(report);
    };
    let Some(target) = h_to.expand(&(&constants.l2 * d)).intersect(&to.region) else {
        return Ok(report);
    };
    let mut admissible: Vec<Interval> = Vec::new();
    for piece in power_pieces(map, &window, 2, DEFAULT_PIECE_CAP)? {
        if let Some(part) = piece.preimage(&target) {
            admissible.push(part);
        }
    }
    if admissible.is_empty() {
        return Ok(report);
    }
    report.vacuous = false;

    if !from.is_expanding() {
        report.holds = false;
        report.note = Some("source block has no unstable direction".into());
        return Ok(report);
    }
    let reach = &constants.k - &constants.l1;
    if reach.is_negative() {
        report.holds = false;
        report.note = Some("K < L1".into());
        return Ok(report);
    }
    let w = &reach * d;
    let required = if to.is_expanding() {
        (&constants.l2 + Scalar::one()) * d
    } else {
        (&constants.l2 - Scalar::one()) * d
    };
    let lo = admissible.iter().map(|i| i.lo()).min().expect("nonempty");
    let hi = admissible.iter().map(|i| i.hi()).max().expect("nonempty");
    let span = Interval::new(lo - &w, hi + &w).expect("ordered");
    if !map.domain().contains_interval(&span) {
        report.holds = false;
        report.note = Some("disk window leaves the map domain".into());
        return Ok(report);
    }
    let f2 = power_pieces(map, &span, 2, DEFAULT_PIECE_CAP)?;
    let increasing = f2.iter().all(|p| p.slope.is_positive());
    let decreasing = f2.iter().all(|p| p.slope.is_negative());
    if !(increasing || decreasing) {
        report.holds = false;
        report.note = Some("f² is not monotone on the disk window".into());
        return Ok(report);
    }
    let mut candidates: Vec<Scalar> = Vec::new();
    for part in &admissible {
        candidates.push(part.lo().clone());
        candidates.push(part.hi().clone());
    }
    for piece in f2.iter().skip(1) {
        let b = piece.domain.lo();
        for c in [b.clone(), b - &w, b + &w] {
            if admissible.iter().any(|a| a.contains(&c)) {
                candidates.push(c);
            }
        }
    }
    candidates.sort();
    candidates.dedup();
    let eval2 = |x: &Scalar| -> Result<Scalar, PamError> { Ok(map.iterate(x, 2)?.pop().expect("two")) };
    let mut worst: Option<(Scalar, Scalar)> = None;
    for p in candidates {
        let mid = eval2(&p)?;
        let left = eval2(&(&p - &w))?;
        let right = eval2(&(&p + &w))?;
        let (low, high) = if increasing { (left, right) } else { (right, left) };
        let margin = (&high - &mid).min(&mid - &low) - &required;
        if worst.as_ref().is_none_or(|(m, _)| &margin < m) {
            worst = Some((margin, p));
        }
    }
    let (margin, p) = worst.expect("candidates nonempty");
    report.holds = !margin.is_negative();
    report.worst_margin = Some(margin);
    report.worst_p = Some(p);
    Ok(report)
}

/// File form of a 1D atlas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtlasFile {
    #[serde(with = "serde_rational")]
    pub lambda: Scalar,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub constants: Option<ConstantsSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSpec {
    pub id: String,
    pub region: Interval,
    #[serde(default)]
    pub stable_axes: Vec<usize>,
    #[serde(default)]
    pub unstable_axes: Vec<usize>,
    #[serde(default, with = "serde_rational::vec")]
    pub a: Vec<Scalar>,
    #[serde(default, with = "serde_rational::vec")]
    pub b: Vec<Scalar>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsSpec {
    #[serde(with = "serde_rational")]
    pub lambda: Scalar,
    #[serde(rename = "L0", with = "serde_rational")]
    pub l0: Scalar,
    #[serde(rename = "K", with = "serde_rational")]
    pub k: Scalar,
    #[serde(with = "serde_rational")]
    pub d0: Scalar,
}

impl AtlasFile {
    pub fn to_atlas(&self) -> Result<HyperbolicAtlas, HyperbolicError> {
        let blocks = self
            .blocks
            .iter()
            .map(|spec| match (spec.stable_axes.as_slice(), spec.unstable_axes.as_slice()) {
                ([0], []) if spec.a.len() == 1 && spec.b.is_empty() => Ok(Block::contracting(
                    spec.id.clone(),
                    spec.region.clone(),
                    spec.a[0].clone(),
                )),
                ([], [0]) if spec.b.len() == 1 && spec.a.is_empty() => Ok(Block::expanding(
                    spec.id.clone(),
                    spec.region.clone(),
                    spec.b[0].clone(),
                )),
                _ => Err(HyperbolicError::InvalidAtlas(format!(
                    "block {}: a 1D block needs exactly one of stable/unstable axis [0] with a 1x1 matrix",
                    spec.id
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        HyperbolicAtlas::new(blocks, self.lambda.clone())
    }

    pub fn constants(&self) -> Option<Result<ShadowingConstants, HyperbolicError>> {
        self.constants
            .as_ref()
            .map(|c| derive_constants(&c.lambda, &c.l0, &c.k, &c.d0))
    }

    pub fn from_atlas(atlas: &HyperbolicAtlas, constants: Option<&ShadowingConstants>) -> Self {
        AtlasFile {
            lambda: atlas.lambda().clone(),
            blocks: atlas
                .blocks()
                .iter()
                .map(|b| match &b.action {
                    BlockAction::Contracting(a) => BlockSpec {
                        id: b.id.clone(),
                        region: b.region.clone(),
                        stable_axes: vec![0],
                        unstable_axes: vec![],
                        a: vec![a.clone()],
                        b: vec![],
                    },
                    BlockAction::Expanding(m) => BlockSpec {
                        id: b.id.clone(),
                        region: b.region.clone(),
                        stable_axes: vec![],
                        unstable_axes: vec![0],
                        a: vec![],
                        b: vec![m.clone()],
                    },
                })
                .collect(),
            constants: constants.map(|c| ConstantsSpec {
                lambda: c.lambda.clone(),
                l0: c.l0.clone(),
                k: c.k.clone(),
                d0: c.d0.clone(),
            }),
        }
    }
}
