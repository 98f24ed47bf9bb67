//! Brute-force optimal shadowing distance
//! `ρ* = min_z max_k |f^k(z) − x_k|`, computed without any of the
//! block machinery.
//!
//! The search interval is cut into cells on which every iterate `f^k` is
//! affine. On a cell, `E(z)` is the upper envelope of `2(T+1)` lines, a
//! convex function whose minimum sits at a hull vertex or a cell end.
//! Cells are pruned to a sublevel set `{E ≤ U}` as they are refined.
//! `U` starts near the trivial lower bound and doubles until a sweep
//! finds a value inside its own level; the first such sweep is exact.

use std::sync::Arc;

use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::pam::{Map1D, PamError};
use crate::scalar::{int, pow, pow2, serde_rational, to_f64, Interval, Scalar};
use crate::shadow::step_errors;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("empty trajectory")]
    Empty,
    #[error("search interval {0} is not inside the map domain")]
    SearchOutsideDomain(String),
    #[error("trajectory generator: {0}")]
    Generator(String),
    #[error(transparent)]
    Map(#[from] PamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Global minimum over the search interval, exact.
    ExactBreakpoints,
    /// Some cells fell into an invariant core of the map; the value is
    /// exact at `z_star` and the optimum is bracketed.
    CoreBracket,
    /// Piece budget exceeded; exact values on a refined grid, bracket from
    /// the Lipschitz constant of `E`.
    GridRefine,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    #[serde(with = "serde_rational")]
    pub z_star: Scalar,
    /// `max_k |f^k(z_star) − x_k|`, re-verified exactly.
    #[serde(with = "serde_rational")]
    pub rho_star: Scalar,
    pub method: OracleMethod,
    /// `[lower, rho_star]` contains the true optimum over the search interval.
    pub bracket: Interval,
    /// Exact evaluations of `E`.
    pub evaluations: u64,
    /// Cells alive after the last refinement step.
    pub cells: usize,
}

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Maximum number of live cells.
    pub piece_cap: usize,
    /// A known good point, such as a constructive shadow. When it lies in
    /// the search interval, `E(seed)` bounds the sublevel set and the
    /// sampling pass is skipped.
    pub seed: Option<Scalar>,
    /// Sample points used for the initial sublevel bound.
    pub samples: usize,
    /// Points per level of the fallback grid.
    pub grid_points: usize,
    /// Breakpoints finer than `2^{−core_bits}` of the current level are
    /// left inside a core (maps that offer one). Fewer bits are faster,
    /// more give tighter brackets.
    pub core_bits: u32,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            piece_cap: 20_000,
            seed: None,
            samples: 65,
            grid_points: 1025,
            core_bits: 6,
        }
    }
}

/// `E(z) = max_k |f^k(z) − x_k|`.
pub fn envelope_value(map: &dyn Map1D, z: &Scalar, points: &[Scalar]) -> Result<Scalar, PamError> {
    let orbit = map.iterate(z, points.len() - 1)?;
    Ok(orbit
        .iter()
        .zip(points)
        .map(|(a, b)| (a - b).abs())
        .max()
        .unwrap_or_else(Scalar::zero))
}

/// `N(factor·d, x₀)` clipped to the map domain, with `d` the measured defect.
pub fn default_search(map: &dyn Map1D, points: &[Scalar], factor: &Scalar) -> Result<Interval, OracleError> {
    let x0 = points.first().ok_or(OracleError::Empty)?;
    let d = step_errors(map, points)?
        .iter()
        .map(Signed::abs)
        .max()
        .unwrap_or_else(Scalar::zero);
    let ball = Interval::ball(x0, &(factor * d));
    map.domain()
        .intersect(&ball)
        .ok_or_else(|| OracleError::SearchOutsideDomain(ball.to_string()))
}

/// `z ↦ slope·z + intercept`.
#[derive(Debug, Clone)]
struct Line {
    slope: Scalar,
    intercept: Scalar,
}

impl Line {
    fn at(&self, z: &Scalar) -> Scalar {
        &self.slope * z + &self.intercept
    }

    /// `{z ∈ dom : line(z) ∈ target}`.
    fn pull_back(&self, dom: &Interval, target: &Interval) -> Option<Interval> {
        if self.slope.is_zero() {
            return target.contains(&self.intercept).then(|| dom.clone());
        }
        let a = (target.lo() - &self.intercept) / &self.slope;
        let b = (target.hi() - &self.intercept) / &self.slope;
        Interval::spanning(a, b).intersect(dom)
    }

    fn image(&self, dom: &Interval) -> Interval {
        Interval::spanning(self.at(dom.lo()), self.at(dom.hi()))
    }
}

/// `f^k` on a cell, linked to `f^{k−1}` so children share their history.
#[derive(Debug)]
struct Chain {
    line: Line,
    parent: Option<Arc<Chain>>,
}

impl Chain {
    /// `f^0, …, f^k` in order.
    fn lines(&self) -> Vec<Line> {
        let mut out = vec![self.line.clone()];
        let mut at = self.parent.as_deref();
        while let Some(c) = at {
            out.push(c.line.clone());
            at = c.parent.as_deref();
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone)]
struct Cell {
    dom: Interval,
    iterates: Arc<Chain>,
}

/// Leftmost minimizer of `max_j |φ_j(z) − x_j|` over `[a, b]`.
fn minimize_envelope(iterates: &[Line], points: &[Scalar], dom: &Interval) -> (Scalar, Scalar) {
    let mut lines: Vec<(Scalar, Scalar)> = Vec::with_capacity(2 * iterates.len());
    for (phi, x) in iterates.iter().zip(points) {
        lines.push((phi.slope.clone(), &phi.intercept - x));
        lines.push((-&phi.slope, x - &phi.intercept));
    }
    lines.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.cmp(&q.1)));
    // keep the highest intercept per slope
    let mut dedup: Vec<(Scalar, Scalar)> = Vec::with_capacity(lines.len());
    for l in lines {
        if dedup.last().is_some_and(|last| last.0 == l.0) {
            dedup.pop();
        }
        dedup.push(l);
    }
    let cross = |p: &(Scalar, Scalar), q: &(Scalar, Scalar)| (&p.1 - &q.1) / (&q.0 - &p.0);
    let mut hull: Vec<(Scalar, Scalar)> = Vec::new();
    for l in dedup {
        while hull.len() >= 2 {
            let n = hull.len();
            if cross(&hull[n - 2], &l) <= cross(&hull[n - 2], &hull[n - 1]) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    let turn = hull.iter().position(|l| !l.0.is_negative());
    let free_min = match turn {
        None => None,
        Some(0) => Some(None),
        Some(i) => Some(Some(cross(&hull[i - 1], &hull[i]))),
    };
    let z = match free_min {
        // envelope still decreasing at +∞
        None => dom.hi().clone(),
        Some(None) => dom.lo().clone(),
        Some(Some(v)) => dom.clamp(&v),
    };
    let value = iterates
        .iter()
        .zip(points)
        .map(|(phi, x)| (phi.at(&z) - x).abs())
        .max()
        .expect("at least one iterate");
    (z, value)
}

struct Best {
    z: Scalar,
    value: Scalar,
}

impl Best {
    fn offer(slot: &mut Option<Best>, z: Scalar, value: Scalar) {
        let better = match slot {
            None => true,
            Some(b) => value < b.value || (value == b.value && z < b.z),
        };
        if better {
            *slot = Some(Best { z, value });
        }
    }
}

/// Minimizes `E` over `search`. Falls back to [`grid_refine`] when the
/// piece budget is exceeded.
pub fn optimal_shadow_distance(
    map: &dyn Map1D,
    points: &[Scalar],
    search: &Interval,
    options: &OracleOptions,
) -> Result<OracleResult, OracleError> {
    if points.is_empty() {
        return Err(OracleError::Empty);
    }
    if !map.domain().contains_interval(search) {
        return Err(OracleError::SearchOutsideDomain(search.to_string()));
    }
    match exact_breakpoints(map, points, search, options) {
        Err(OracleError::Map(PamError::PieceBudgetExceeded { .. })) => grid_refine(map, points, search, options),
        other => other,
    }
}

fn exact_breakpoints(
    map: &dyn Map1D,
    points: &[Scalar],
    search: &Interval,
    options: &OracleOptions,
) -> Result<OracleResult, OracleError> {
    let mut evaluations = 0u64;

    // sublevel bound U
    let seed = options.seed.as_ref().filter(|z| search.contains(z));
    let samples = if seed.is_some() { 0 } else { options.samples.max(2) };
    let mut sample_best: Option<Best> = None;
    if let Some(z) = seed {
        let v = envelope_value(map, z, points)?;
        evaluations += 1;
        Best::offer(&mut sample_best, z.clone(), v);
    }
    for i in 0..samples {
        let z = if search.is_point() {
            search.lo().clone()
        } else {
            search.lo() + search.width() * int(i as i64) / int(samples as i64 - 1)
        };
        let v = envelope_value(map, &z, points)?;
        evaluations += 1;
        Best::offer(&mut sample_best, z, v);
        if search.is_point() {
            break;
        }
    }
    let sample_best = sample_best.expect("at least one sample");
    let upper = sample_best.value.clone();

    // Any shadow is at least defect/(1 + Lip) away. Sweeping a much
    // tighter sublevel set first is far cheaper than sweeping {E ≤ U}
    // near accumulating breakpoints; a sweep is conclusive once it finds
    // a value inside its own level.
    let defect = step_errors(map, points)?
        .iter()
        .map(Signed::abs)
        .max()
        .unwrap_or_else(Scalar::zero);
    let mut level = &defect / (map.lipschitz_constant() + int(1));
    loop {
        let last = level.is_zero() || level >= upper;
        if last {
            level = upper.clone();
        }
        let sweep = sweep_sublevel(map, points, search, &level, options, &mut evaluations)?;
        let conclusive = sweep.best.as_ref().is_some_and(|b| b.value <= level);
        if conclusive || last {
            let mut best = sweep.best;
            Best::offer(&mut best, sample_best.z, sample_best.value);
            let best = best.expect("sample point always offered");
            let rho = envelope_value(map, &best.z, points)?;
            evaluations += 1;
            debug_assert_eq!(rho, best.value);
            let lower = if sweep.saw_core {
                sweep.lower_bounds.into_iter().min().unwrap_or_else(|| rho.clone()).min(rho.clone())
            } else {
                rho.clone()
            };
            return Ok(OracleResult {
                z_star: best.z,
                rho_star: rho.clone(),
                method: if sweep.saw_core {
                    OracleMethod::CoreBracket
                } else {
                    OracleMethod::ExactBreakpoints
                },
                bracket: Interval::new(lower, rho).expect("lower bound below value"),
                evaluations,
                cells: sweep.live,
            });
        }
        level *= int(2);
    }
}

struct Sweep {
    best: Option<Best>,
    lower_bounds: Vec<Scalar>,
    saw_core: bool,
    live: usize,
}

/// Cuts `search ∩ {E ≤ bound}` into cells and minimizes on each.
fn sweep_sublevel(
    map: &dyn Map1D,
    points: &[Scalar],
    search: &Interval,
    bound: &Scalar,
    options: &OracleOptions,
    evaluations: &mut u64,
) -> Result<Sweep, OracleError> {
    let horizon = points.len() - 1;
    // unresolved cores cost at most this much of the bracket
    let resolution = bound * pow2(-i64::from(options.core_bits));
    let mut best: Option<Best> = None;
    let mut lower_bounds: Vec<Scalar> = Vec::new();
    let mut saw_core = false;

    let mut cells = vec![Cell {
        dom: search.clone(),
        iterates: Arc::new(Chain {
            line: Line {
                slope: Scalar::one(),
                intercept: Scalar::zero(),
            },
            parent: None,
        }),
    }];
    for k in 0..=horizon {
        let tube = Interval::ball(&points[k], bound);
        let mut next: Vec<Cell> = Vec::new();
        for cell in cells {
            let phi = cell.iterates.line.clone();
            let Some(dom) = phi.pull_back(&cell.dom, &tube) else {
                continue;
            };
            if k == horizon {
                next.push(Cell { dom, ..cell });
                continue;
            }
            let window = phi.image(&dom);
            let cover = map.cover_near(&window, options.piece_cap, &resolution)?;
            for piece in &cover.pieces {
                let Some(part) = piece.domain.intersect(&window) else {
                    continue;
                };
                if part.is_point() && !window.is_point() {
                    continue;
                }
                let Some(sub) = phi.pull_back(&dom, &part) else {
                    continue;
                };
                let iterates = Arc::new(Chain {
                    line: Line {
                        slope: &piece.slope * &phi.slope,
                        intercept: &piece.slope * &phi.intercept + &piece.intercept,
                    },
                    parent: Some(cell.iterates.clone()),
                });
                next.push(Cell { dom: sub, iterates });
                if window.is_point() {
                    break;
                }
            }
            if let Some(core) = &cover.core {
                let part = &core.part;
                if !(part.is_point() && !window.is_point() && !cover.pieces.is_empty()) {
                    if let Some(sub) = phi.pull_back(&dom, part) {
                        saw_core = true;
                        let lb = core_cell(map, points, &cell.iterates.lines(), &sub, &core.orbit, &mut best, evaluations)?;
                        lower_bounds.push(lb);
                    }
                }
            }
            if next.len() > options.piece_cap {
                return Err(PamError::PieceBudgetExceeded { cap: options.piece_cap }.into());
            }
        }
        cells = next;
    }
    let live = cells.len();
    for cell in cells {
        let (z, value) = minimize_envelope(&cell.iterates.lines(), points, &cell.dom);
        lower_bounds.push(value.clone());
        Best::offer(&mut best, z, value);
    }
    Ok(Sweep {
        best,
        lower_bounds,
        saw_core,
        live,
    })
}

/// Points of `dom` whose `k`-th iterate lies in a core with forward-invariant
/// hull `orbit`. Offers a few exact candidates and returns a lower bound for
/// `E` on `dom`.
fn core_cell(
    map: &dyn Map1D,
    points: &[Scalar],
    iterates: &[Line],
    dom: &Interval,
    orbit: &Interval,
    best: &mut Option<Best>,
    evaluations: &mut u64,
) -> Result<Scalar, OracleError> {
    let k = iterates.len() - 1;
    let (z_head, head) = minimize_envelope(iterates, &points[..=k], dom);
    let tail = points[k + 1..]
        .iter()
        .map(|x| orbit.distance_to(x))
        .max()
        .unwrap_or_else(Scalar::zero);
    let phi = &iterates[k];
    let mut candidates = vec![dom.lo().clone(), dom.hi().clone(), dom.midpoint(), z_head];
    if let Some(z0) = phi.pull_back(dom, &Interval::point(Scalar::zero())) {
        candidates.push(z0.lo().clone());
    }
    for z in candidates {
        let v = envelope_value(map, &z, points)?;
        *evaluations += 1;
        Best::offer(best, z, v);
    }
    Ok(head.max(tail))
}

/// Exact values of `E` on a grid, zooming around the best point until the
/// spacing is at most `d/100` (`2⁻⁶⁰` of the search width when `d = 0`).
pub fn grid_refine(
    map: &dyn Map1D,
    points: &[Scalar],
    search: &Interval,
    options: &OracleOptions,
) -> Result<OracleResult, OracleError> {
    let d = step_errors(map, points)?
        .iter()
        .map(Signed::abs)
        .max()
        .unwrap_or_else(Scalar::zero);
    let target = if d.is_zero() {
        search.width() * pow2(-60)
    } else {
        &d / int(100)
    };
    let n = options.grid_points.max(3);
    let mut evaluations = 0u64;
    let mut window = search.clone();
    let mut best: Option<Best> = None;
    let mut coarse: Option<(Scalar, Scalar)> = None;
    loop {
        let h = window.width() / int(n as i64 - 1);
        for i in 0..n {
            let z = window.lo() + &h * int(i as i64);
            let v = envelope_value(map, &z, points)?;
            evaluations += 1;
            Best::offer(&mut best, z, v);
        }
        let b = best.as_ref().expect("grid nonempty");
        if coarse.is_none() {
            coarse = Some((b.value.clone(), h.clone()));
        }
        if h <= target || h.is_zero() {
            break;
        }
        window = search
            .intersect(&Interval::ball(&b.z, &h))
            .expect("best point lies in the search interval");
    }
    let best = best.expect("grid nonempty");
    let (coarse_min, h0) = coarse.expect("one level ran");
    let lip = pow(&map.lipschitz_constant().max(Scalar::one()), (points.len() - 1) as u32);
    let lower = (coarse_min - lip * h0 / int(2)).max(Scalar::zero()).min(best.value.clone());
    Ok(OracleResult {
        z_star: best.z,
        rho_star: best.value.clone(),
        method: OracleMethod::GridRefine,
        bracket: Interval::new(lower, best.value).expect("ordered"),
        evaluations,
        cells: 0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    #[serde(with = "serde_rational")]
    pub d: Scalar,
    pub trial: usize,
    #[serde(with = "serde_rational")]
    pub rho_star: Scalar,
    /// `rho_star / d`; 0 for exact orbits.
    #[serde(with = "serde_rational")]
    pub ratio: Scalar,
    pub method: OracleMethod,
    pub clipped: bool,
    pub exceeds_bound: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepLevel {
    #[serde(with = "serde_rational")]
    pub d: Scalar,
    pub trials: usize,
    /// Trials counted in the statistics (not clipped, positive defect).
    pub counted: usize,
    #[serde(with = "serde_rational::option")]
    pub max_ratio: Option<Scalar>,
    pub median_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalTable {
    pub rows: Vec<TrialRow>,
    pub levels: Vec<SweepLevel>,
    /// Max ratio over the sweep.
    #[serde(with = "serde_rational::option")]
    pub constant: Option<Scalar>,
    #[serde(with = "serde_rational::option")]
    pub bound: Option<Scalar>,
    pub violations: usize,
    pub convention: &'static str,
}

/// A generated trajectory as seen by the sweep.
pub struct SweepTrajectory {
    pub points: Vec<Scalar>,
    pub defect: Scalar,
    pub clipped: bool,
}

/// Empirical `sup ρ*/d` over generated trials at each `d`. Trials run in
/// parallel and are reported in trial order.
pub fn empirical_lipschitz_constant<G>(
    map: &dyn Map1D,
    d_sweep: &[Scalar],
    trials: usize,
    generate: G,
    bound: Option<Scalar>,
    search_factor: &Scalar,
    options: &OracleOptions,
) -> Result<EmpiricalTable, OracleError>
where
    G: Fn(&Scalar, usize) -> Result<SweepTrajectory, OracleError> + Sync,
{
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    for d in d_sweep {
        let level_rows: Vec<TrialRow> = (0..trials)
            .into_par_iter()
            .map(|trial| -> Result<TrialRow, OracleError> {
                let t = generate(d, trial)?;
                let search = default_search(map, &t.points, search_factor)?;
                let r = optimal_shadow_distance(map, &t.points, &search, options)?;
                let ratio = if t.defect.is_zero() {
                    Scalar::zero()
                } else {
                    &r.rho_star / &t.defect
                };
                let exceeds_bound = !t.clipped && bound.as_ref().is_some_and(|b| &ratio > b);
                Ok(TrialRow {
                    d: t.defect,
                    trial,
                    rho_star: r.rho_star,
                    ratio,
                    method: r.method,
                    clipped: t.clipped,
                    exceeds_bound,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut counted: Vec<&TrialRow> = level_rows
            .iter()
            .filter(|r| !r.clipped && r.d.is_positive())
            .collect();
        counted.sort_by(|a, b| a.ratio.cmp(&b.ratio));
        let as_f64: Vec<f64> = counted.iter().map(|r| to_f64(&r.ratio)).collect();
        levels.push(SweepLevel {
            d: d.clone(),
            trials,
            counted: counted.len(),
            max_ratio: counted.last().map(|r| r.ratio.clone()),
            median_ratio: as_f64.get(as_f64.len() / 2).copied(),
            mean_ratio: (!as_f64.is_empty()).then(|| as_f64.iter().sum::<f64>() / as_f64.len() as f64),
        });
        rows.extend(level_rows);
    }
    let constant = levels.iter().filter_map(|l| l.max_ratio.clone()).max();
    let violations = rows.iter().filter(|r| r.exceeds_bound).count();
    Ok(EmpiricalTable {
        rows,
        levels,
        constant,
        bound,
        violations,
        convention: "exact orbits (d = 0) have ratio 0 and are excluded from the sup, as are clipped trials",
    })
}

/// Rows as CSV: `d,trial,rho_star,ratio,method`.
pub fn write_table_csv(writer: impl std::io::Write, rows: &[TrialRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["d", "trial", "rho_star", "ratio", "method"])?;
    for r in rows {
        let method = serde_json::to_value(r.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        w.write_record([
            r.d.to_string(),
            r.trial.to_string(),
            r.rho_star.to_string(),
            r.ratio.to_string(),
            method,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::{family, f0_map};
    use crate::pam::PiecewiseAffineMap1D;
    use crate::pseudo::{gen_adversarial_drift, gen_perturbed};
    use crate::scalar::rat;

    fn unit_identity() -> PiecewiseAffineMap1D {
        PiecewiseAffineMap1D::identity(Interval::new(int(0), int(1)).unwrap())
    }

    #[test]
    fn exact_orbit_has_zero_distance() {
        let f = f0_map();
        let orbit = f.iterate(&rat(1, 100), 20).unwrap();
        let r = optimal_shadow_distance(&f, &orbit, &f.domain(), &OracleOptions::default()).unwrap();
        assert!(r.rho_star.is_zero());
        assert_eq!(r.z_star, rat(1, 100));
        assert_eq!(r.method, OracleMethod::ExactBreakpoints);
    }

    #[test]
    fn identity_drift_optimum_is_midpoint() {
        let d = rat(1, 1000);
        let t = 300;
        let g = gen_adversarial_drift(&unit_identity(), &int(0), t, &d).unwrap();
        let r = optimal_shadow_distance(&unit_identity(), &g.points, &unit_identity().domain(), &OracleOptions::default())
            .unwrap();
        assert_eq!(r.rho_star, rat(150, 1000));
        assert_eq!(r.z_star, rat(150, 1000));
        assert_eq!(&r.rho_star / &d, int(150));
    }

    #[test]
    fn envelope_minimum_on_two_lines() {
        // E(z) = max(|z|, |z − 1|) on [−5, 5]
        let id = Line {
            slope: int(1),
            intercept: int(0),
        };
        let (z, v) = minimize_envelope(&[id.clone(), id], &[int(0), int(1)], &Interval::new(int(-5), int(5)).unwrap());
        assert_eq!((z, v), (rat(1, 2), rat(1, 2)));
    }

    #[test]
    fn flat_envelope_picks_leftmost() {
        // E(z) = max(|0·z − 0|) is flat; leftmost point wins
        let flat = Line {
            slope: int(0),
            intercept: int(0),
        };
        let (z, v) = minimize_envelope(&[flat], &[int(0)], &Interval::new(int(-2), int(3)).unwrap());
        assert_eq!((z, v), (int(-2), int(0)));
    }

    #[test]
    fn pruning_does_not_change_the_answer() {
        let f = f0_map();
        let g = gen_perturbed(&f, &rat(1, 7), 12, &pow2(-8), 3).unwrap();
        let pruned = optimal_shadow_distance(&f, &g.points, &f.domain(), &OracleOptions::default()).unwrap();
        let loose = OracleOptions {
            seed: None,
            samples: 2,
            ..OracleOptions::default()
        };
        let wide = optimal_shadow_distance(&f, &g.points, &f.domain(), &loose).unwrap();
        assert_eq!(pruned.rho_star, wide.rho_star);
        assert_eq!(pruned.z_star, wide.z_star);
    }

    #[test]
    fn seeds_do_not_change_the_answer() {
        let f = f0_map();
        let g = gen_perturbed(&f, &rat(1, 7), 12, &pow2(-8), 3).unwrap();
        let plain = optimal_shadow_distance(&f, &g.points, &f.domain(), &OracleOptions::default()).unwrap();
        for seed in [plain.z_star.clone(), int(1), rat(1, 7), int(5)] {
            let opts = OracleOptions {
                seed: Some(seed),
                ..OracleOptions::default()
            };
            let seeded = optimal_shadow_distance(&f, &g.points, &f.domain(), &opts).unwrap();
            assert_eq!(seeded.rho_star, plain.rho_star);
            assert_eq!(seeded.z_star, plain.z_star);
        }
    }

    #[test]
    fn grid_refine_brackets_the_exact_value() {
        let f = f0_map();
        let g = gen_perturbed(&f, &rat(1, 3), 6, &pow2(-8), 1).unwrap();
        let search = Interval::new(rat(1, 4), rat(1, 2)).unwrap();
        let exact = optimal_shadow_distance(&f, &g.points, &search, &OracleOptions::default()).unwrap();
        let grid = grid_refine(&f, &g.points, &search, &OracleOptions::default()).unwrap();
        assert!(grid.rho_star >= exact.rho_star);
        assert!(grid.bracket.contains(&exact.rho_star));
        assert_eq!(grid.method, OracleMethod::GridRefine);
    }

    #[test]
    fn budget_overflow_falls_back_to_grid() {
        let f = f0_map();
        let g = gen_perturbed(&f, &rat(1, 7), 8, &pow2(-6), 2).unwrap();
        let tiny = OracleOptions {
            piece_cap: 0,
            samples: 2,
            grid_points: 65,
            ..OracleOptions::default()
        };
        let r = optimal_shadow_distance(&f, &g.points, &f.domain(), &tiny).unwrap();
        assert_eq!(r.method, OracleMethod::GridRefine);
        assert_eq!(r.rho_star, envelope_value(&f, &r.z_star, &g.points).unwrap());
    }

    #[test]
    fn core_near_zero_is_bracketed() {
        let f = family();
        let pts: Vec<Scalar> = (0..8).map(|k| if k % 2 == 0 { pow2(-20) } else { -pow2(-20) }).collect();
        let search = Interval::new(-pow2(-10), pow2(-10)).unwrap();
        let r = optimal_shadow_distance(f, &pts, &search, &OracleOptions::default()).unwrap();
        assert!(r.rho_star <= pow2(-20));
        assert!(r.bracket.lo() <= &r.rho_star);
    }
}
