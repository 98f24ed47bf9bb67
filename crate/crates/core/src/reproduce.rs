//! One-shot reproduction of every checkable claim about the example, one
//! report per acceptance item.

use std::time::Instant;

use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::example::{
    build_f0, eval_f, f0_map, family, lemma4_shadow, max_scale, scale_size, segment,
    theorem2_shadow, working_threshold, Branch, Lemma4Case,
};
use crate::hyperbolic::derive_constants;
use crate::oracle::{default_search, optimal_shadow_distance, OracleMethod, OracleOptions};
use crate::pam::{Map1D, PiecewiseAffineMap1D};
use crate::pseudo::{
    gen_adversarial_drift, gen_backward, gen_crossing, gen_crossing_with, gen_perturbed, lattice_noise,
    lattice_point, GeneratedTrajectory,
};
use crate::scalar::{int, pow2, rat, Interval, Scalar};
use crate::shadow::{conjugate_map, lemma1_shadow, measure_defect, shadow_via_conjugacy};

/// The claimed values, kept in one place so a test
/// can corrupt one and watch the matching row fail.
#[derive(Debug, Clone)]
pub struct Expected {
    /// `(x, f₀(x))`.
    pub f0_values: Vec<(Scalar, Scalar)>,
    /// `f(α_n) = alpha_image·N_n`.
    pub alpha_image: Scalar,
    /// `f(β_n) = beta_image·N_n`.
    pub beta_image: Scalar,
    pub l1: Scalar,
    pub l2: Scalar,
    pub k: Scalar,
    pub k1: Scalar,
    pub lipschitz_shadowing: Scalar,
    pub mu: u32,
    /// Bound factor in the single-block cases.
    pub single_block: Scalar,
    pub interior: Scalar,
    pub rest_point: Scalar,
    /// `ρ*/d` for the identity drift with `T = 300`.
    pub control_ratio: Scalar,
}

impl Default for Expected {
    fn default() -> Self {
        Expected {
            f0_values: vec![
                (rat(-7, 6), rat(-13, 12)),
                (rat(4, 3), rat(7, 6)),
                (rat(5, 12), rat(17, 24)),
            ],
            alpha_image: rat(23, 12),
            beta_image: rat(25, 6),
            l1: int(2),
            l2: int(5),
            k: int(26),
            k1: int(28),
            lipschitz_shadowing: int(109),
            mu: 5,
            single_block: int(2),
            interior: int(54),
            rest_point: int(44),
            control_ratio: int(150),
        }
    }
}

/// Trial counts.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Budget {
    pub lemma1: usize,
    pub theorem1: usize,
    pub theorem2: usize,
    pub small_instances: usize,
    pub conjugacy: usize,
    /// The exhaustive grid has `2^grid_log2 + 1` points.
    pub grid_log2: u32,
}

impl Budget {
    pub fn full() -> Self {
        Budget {
            lemma1: 1000,
            theorem1: 1000,
            theorem2: 500,
            small_instances: 100,
            conjugacy: 100,
            grid_log2: 20,
        }
    }

    pub fn quick() -> Self {
        Budget {
            lemma1: 60,
            theorem1: 60,
            theorem2: 40,
            small_instances: 8,
            conjugacy: 20,
            grid_log2: 14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReproduceConfig {
    pub seed: u64,
    pub budget: Budget,
    /// Count an item as failed when it exceeds its time limit.
    pub enforce_time: bool,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        ReproduceConfig {
            seed: 2017,
            budget: Budget::full(),
            enforce_time: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub item: u8,
    pub title: &'static str,
    pub passed: bool,
    pub checks: usize,
    /// First few failures.
    pub failures: Vec<String>,
    pub failure_count: usize,
    pub detail: String,
    pub elapsed_s: f64,
    pub limit_s: f64,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "[{}] item {}: {} ({} checks, {:.2}s of {:.0}s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.item,
            self.title,
            self.checks,
            self.elapsed_s,
            self.limit_s,
            if self.failures.is_empty() {
                self.detail.clone()
            } else {
                format!("{}; first failure: {}", self.detail, self.failures[0])
            }
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityRow {
    pub name: String,
    pub expected: String,
    pub computed: String,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reproduction {
    pub seed: u64,
    pub budget: Budget,
    pub criteria: Vec<CriterionReport>,
    pub identities: Vec<IdentityRow>,
    pub passed: bool,
}

/// Collects check outcomes for one item.
struct Tally {
    checks: usize,
    failures: Vec<String>,
    failure_count: usize,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checks: 0,
            failures: Vec::new(),
            failure_count: 0,
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failure_count += 1;
            if self.failures.len() < 10 {
                self.failures.push(what());
            }
        }
    }

    fn absorb(&mut self, outcome: Result<(), String>) {
        self.check(outcome.is_ok(), || outcome.clone().err().unwrap_or_default());
    }

    fn finish(
        self,
        item: u8,
        title: &'static str,
        detail: String,
        started: Instant,
        limit_s: f64,
        enforce_time: bool,
    ) -> CriterionReport {
        let elapsed_s = started.elapsed().as_secs_f64();
        let mut failures = self.failures;
        let mut failure_count = self.failure_count;
        if enforce_time && elapsed_s > limit_s {
            failures.push(format!("took {elapsed_s:.1}s, limit {limit_s}s"));
            failure_count += 1;
        }
        CriterionReport {
            item,
            title,
            passed: failure_count == 0,
            checks: self.checks,
            failures,
            failure_count,
            detail,
            elapsed_s,
            limit_s,
        }
    }
}

fn trial_seed(seed: u64, item: u64, trial: usize) -> u64 {
    seed ^ (item << 56) ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `2^{−e}` with `e` uniform in `lo..=hi`.
fn dyadic_defect(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Scalar {
    pow2(-rng.gen_range(lo..=hi))
}

fn interval(lo: Scalar, hi: Scalar) -> Interval {
    Interval::new(lo, hi).expect("ordered")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialMap {
    F0,
    F,
}

/// A constructive run kept for the oracle comparison.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub item: u8,
    pub trial: usize,
    pub map: TrialMap,
    pub points: Vec<Scalar>,
    pub defect: Scalar,
    /// The constructive shadow and its error.
    pub z: Scalar,
    pub constructive: Scalar,
}

fn identity_rows_item1(expected: &Expected) -> Vec<IdentityRow> {
    let f0 = f0_map();
    let mut rows = Vec::new();
    for (x, fx) in &expected.f0_values {
        let got = f0.eval(x).map(|v| v.to_string()).unwrap_or_else(|e| e.to_string());
        rows.push(IdentityRow {
            name: format!("f0({x})"),
            expected: fx.to_string(),
            ok: got == fx.to_string(),
            computed: got,
        });
    }
    let fixed_bad: Vec<i64> = (0..=20)
        .filter(|&n| {
            let p = pow2(-n);
            eval_f(&p).ok() != Some(p.clone()) || eval_f(&-p.clone()).ok() != Some(-p)
        })
        .collect();
    rows.push(IdentityRow {
        name: "f(±2^-n) = ±2^-n, n = 0..20".into(),
        expected: "all fixed".into(),
        computed: if fixed_bad.is_empty() {
            "all fixed".into()
        } else {
            format!("moved for n in {fixed_bad:?}")
        },
        ok: fixed_bad.is_empty(),
    });
    let mut alpha_bad = Vec::new();
    let mut beta_bad = Vec::new();
    let mut confined_bad = Vec::new();
    for n in 1..=20 {
        let s = segment(n);
        if eval_f(&s.alpha).ok() != Some(&expected.alpha_image * &s.big_n) {
            alpha_bad.push(n);
        }
        if eval_f(&s.beta).ok() != Some(&expected.beta_image * &s.big_n) {
            beta_bad.push(n);
        }
        if !s.confined {
            confined_bad.push(n);
        }
    }
    for (name, expect, bad) in [
        ("f(alpha_n) = a·N_n, n = 1..20", format!("a = {}", expected.alpha_image), alpha_bad),
        ("f(beta_n) = b·N_n, n = 1..20", format!("b = {}", expected.beta_image), beta_bad),
        ("f(I_n) ⊂ N(N_n/12, I_n), n = 1..20", "contained".to_string(), confined_bad),
    ] {
        rows.push(IdentityRow {
            name: name.into(),
            computed: if bad.is_empty() {
                expect.clone()
            } else {
                format!("fails for n in {bad:?}")
            },
            ok: bad.is_empty(),
            expected: expect,
        });
    }
    rows
}

fn identity_rows_item2(expected: &Expected) -> Vec<IdentityRow> {
    let c = derive_constants(&rat(1, 2), &int(2), &expected.k, &working_threshold());
    let Ok(c) = c else {
        return vec![IdentityRow {
            name: "derive_constants(1/2, 2, K)".into(),
            expected: "valid".into(),
            computed: format!("{c:?}"),
            ok: false,
        }];
    };
    let row = |name: &str, want: String, got: String| IdentityRow {
        name: name.into(),
        ok: want == got,
        expected: want,
        computed: got,
    };
    // 44 = α(n₀)/δ(n₀+1) = (11/3)·12
    let rest = rat(11, 3) * int(12);
    vec![
        row("L1", expected.l1.to_string(), c.l1.to_string()),
        row("L2", expected.l2.to_string(), c.l2.to_string()),
        row("K", expected.k.to_string(), c.k.to_string()),
        row("K1", expected.k1.to_string(), c.k1.to_string()),
        row("LL", expected.lipschitz_shadowing.to_string(), c.lipschitz_shadowing.to_string()),
        row("mu", expected.mu.to_string(), c.mu.to_string()),
        row("single-block bound factor (= L1)", expected.single_block.to_string(), c.l1.to_string()),
        row("interior bound factor (= L1 + 2K)", expected.interior.to_string(), c.interior_factor().to_string()),
        row("rest-point bound factor (= 11/3 · 12)", expected.rest_point.to_string(), rest.to_string()),
    ]
}

fn item_from_rows(item: u8, title: &'static str, rows: &[IdentityRow], started: Instant, limit: f64, enforce: bool) -> CriterionReport {
    let mut t = Tally::new();
    for r in rows {
        t.check(r.ok, || format!("{}: expected {}, got {}", r.name, r.expected, r.computed));
    }
    let detail = format!("{} identities", rows.len());
    t.finish(item, title, detail, started, limit, enforce)
}

fn item3(cfg: &ReproduceConfig, expected: &Expected) -> (CriterionReport, Vec<TrialRecord>) {
    let started = Instant::now();
    let ex = build_f0();
    let outcomes: Vec<Result<TrialRecord, String>> = (0..cfg.budget.lemma1)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, 3, i));
            let d = dyadic_defect(&mut rng, 10, 20);
            let horizon = rng.gen_range(1..=200usize);
            let expanding = i % 2 == 0;
            let g = if expanding {
                let end = lattice_point(&mut rng, &interval(rat(-1, 4), rat(1, 4)));
                gen_backward(&ex.map, &end, horizon, &d, rng.gen())
            } else {
                let x0 = lattice_point(&mut rng, &interval(rat(1, 3), rat(29, 24)));
                gen_perturbed(&ex.map, &x0, horizon, &d, rng.gen())
            }
            .map_err(|e| format!("trial {i}: generator: {e}"))?;
            let block = ex.atlas.block(if expanding { "G0" } else { "G1" }).expect("atlas block");
            let r = lemma1_shadow(&ex.map, block, ex.atlas.lambda(), &g.points, &g.defect)
                .map_err(|e| format!("trial {i} ({}): {e}", block.id))?;
            if r.max_error > &expected.single_block * &g.defect {
                return Err(format!(
                    "trial {i} ({}): error {} > {}·d, d = {}",
                    block.id, r.max_error, expected.single_block, g.defect
                ));
            }
            Ok(TrialRecord {
                item: 3,
                trial: i,
                map: TrialMap::F0,
                points: g.points,
                defect: g.defect,
                z: r.y,
                constructive: r.max_error,
            })
        })
        .collect();
    let mut t = Tally::new();
    let mut records = Vec::new();
    let mut worst = Scalar::zero();
    for o in outcomes {
        if let Ok(r) = &o {
            if r.defect.is_positive() {
                worst = worst.max(&r.constructive / &r.defect);
            }
        }
        t.absorb(o.as_ref().map(|_| ()).map_err(Clone::clone));
        records.extend(o.ok());
    }
    let detail = format!("max error/d = {:.4} (bound {})", crate::scalar::to_f64(&worst), expected.single_block);
    (
        t.finish(3, "Lemma 1: in-block error <= 2d", detail, started, 30.0, cfg.enforce_time),
        records,
    )
}

/// An `f₀` pseudotrajectory of the given shape, `d ∈ [2⁻²⁰, 2⁻¹⁰]`.
fn f0_case_trajectory(rng: &mut ChaCha8Rng, shape: usize) -> Result<GeneratedTrajectory, String> {
    let f0 = f0_map();
    let d = dyadic_defect(rng, 10, 20);
    let horizon = rng.gen_range(1..=200usize);
    let seed = rng.gen();
    match shape {
        0 => {
            let end = lattice_point(rng, &interval(rat(-1, 4), rat(1, 4)));
            gen_backward(&f0, &end, horizon, &d, seed)
        }
        1 => {
            let mut x0 = lattice_point(rng, &interval(rat(5, 12), rat(7, 6)));
            if rng.gen_bool(0.5) {
                x0 = -x0;
            }
            gen_perturbed(&f0, &x0, horizon, &d, seed)
        }
        _ => {
            let lead = rng.gen_range(6..=100);
            let tail = rng.gen_range(6..=100);
            gen_crossing(&d, lead, tail, seed)
        }
    }
    .map_err(|e| e.to_string())
}

fn item4(cfg: &ReproduceConfig, expected: &Expected) -> (CriterionReport, Vec<TrialRecord>) {
    let started = Instant::now();
    let outcomes: Vec<Result<TrialRecord, String>> = (0..cfg.budget.theorem1)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, 4, i));
            let shape = i % 3;
            let g = f0_case_trajectory(&mut rng, shape).map_err(|e| format!("trial {i}: generator: {e}"))?;
            let out = lemma4_shadow(&g.points).map_err(|e| format!("trial {i}: {}: {e}", e.cause()))?;
            let want_case = match (shape, out.case) {
                (0, Lemma4Case::Case1) | (1, Lemma4Case::Case2) | (2, Lemma4Case::Case3 { .. }) => true,
                _ => false,
            };
            if !want_case {
                return Err(format!("trial {i}: shape {shape} classified as {:?}", out.case));
            }
            let d = &g.defect;
            let r = &out.result;
            let bound = if shape == 2 {
                &expected.lipschitz_shadowing * d
            } else {
                &expected.single_block * d
            };
            if r.max_error > bound {
                return Err(format!("trial {i}: error {} > {bound}, d = {d}", r.max_error));
            }
            let interior = r.interior_max.clone().unwrap_or_else(|| r.max_error.clone());
            if interior > &expected.interior * d {
                return Err(format!("trial {i}: interior error {interior} > {}·d", expected.interior));
            }
            Ok(TrialRecord {
                item: 4,
                trial: i,
                map: TrialMap::F0,
                points: g.points,
                defect: g.defect,
                z: r.z.clone(),
                constructive: r.max_error.clone(),
            })
        })
        .collect();
    let mut t = Tally::new();
    let mut records = Vec::new();
    let mut worst = Scalar::zero();
    for o in outcomes {
        if let Ok(r) = &o {
            if r.defect.is_positive() {
                worst = worst.max(&r.constructive / &r.defect);
            }
        }
        t.absorb(o.as_ref().map(|_| ()).map_err(Clone::clone));
        records.extend(o.ok());
    }
    let detail = format!(
        "cases 1/2/3 cycled; max error/d = {:.4} (bounds {}, interior {})",
        crate::scalar::to_f64(&worst),
        expected.lipschitz_shadowing,
        expected.interior
    );
    (
        t.finish(4, "Theorem 1 / Lemma 4: error <= 109d, interior <= 54d", detail, started, 120.0, cfg.enforce_time),
        records,
    )
}

/// A pseudotrajectory of `f` inside `[−c, c]` with `c = N_{n₀(d)}`.
/// Clamping keeps the defect below `d` because `±c` are fixed.
fn rest_trajectory(rng: &mut ChaCha8Rng) -> Vec<Scalar> {
    let f = family();
    let d = dyadic_defect(rng, 12, 30);
    let n0 = max_scale(&d).expect("d > 0");
    let c = scale_size(n0);
    let window = interval(-c.clone(), c);
    let horizon = rng.gen_range(1..=200usize);
    let mut points = vec![lattice_point(rng, &window)];
    for k in 0..horizon {
        let next = f.eval(&points[k]).expect("inside [-1, 1]") + lattice_noise(rng, &d);
        points.push(window.clamp(&next));
    }
    points
}

fn item5(cfg: &ReproduceConfig, expected: &Expected) -> (CriterionReport, Vec<TrialRecord>) {
    let started = Instant::now();
    let outcomes: Vec<Result<(TrialRecord, Branch), String>> = (0..cfg.budget.theorem2)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, 5, i));
            let points = if i % 4 == 3 {
                rest_trajectory(&mut rng)
            } else {
                let inner = f0_case_trajectory(&mut rng, i % 4).map_err(|e| format!("trial {i}: generator: {e}"))?;
                let n = rng.gen_range(1..=10u32);
                let big_n = scale_size(n);
                let sign = if rng.gen_bool(0.5) { int(1) } else { int(-1) };
                inner
                    .points
                    .iter()
                    .map(|x| &sign * (&big_n * x + int(3) * &big_n))
                    .collect()
            };
            let out = theorem2_shadow(&points).map_err(|e| format!("trial {i}: {}: {e}", e.cause()))?;
            let d = &out.result.defect;
            let factor = match &out.branch {
                Branch::Segment { .. } => expected.lipschitz_shadowing.clone(),
                Branch::RestPoint { climbed: false } => expected.rest_point.clone(),
                Branch::RestPoint { climbed: true } => expected.lipschitz_shadowing.clone(),
                Branch::CoarseSegment { n, .. } => {
                    return Err(format!("trial {i}: coarse fallback at n = {n}, no {}d bound", expected.lipschitz_shadowing))
                }
            };
            if out.result.max_error > &factor * d {
                return Err(format!(
                    "trial {i} ({:?}): error {} > {factor}·d, d = {d}",
                    out.branch, out.result.max_error
                ));
            }
            Ok((
                TrialRecord {
                    item: 5,
                    trial: i,
                    map: TrialMap::F,
                    defect: d.clone(),
                    z: out.result.z.clone(),
                    constructive: out.result.max_error.clone(),
                    points,
                },
                out.branch,
            ))
        })
        .collect();
    let mut t = Tally::new();
    let mut records = Vec::new();
    let (mut segments, mut rests, mut climbed) = (0, 0, 0);
    let mut scales = std::collections::BTreeSet::new();
    for o in outcomes {
        match &o {
            Ok((_, Branch::Segment { n, .. })) => {
                segments += 1;
                scales.insert(*n);
            }
            Ok((_, Branch::RestPoint { climbed: c })) => {
                rests += 1;
                climbed += usize::from(*c);
            }
            _ => {}
        }
        t.absorb(o.as_ref().map(|_| ()).map_err(Clone::clone));
        records.extend(o.ok().map(|(r, _)| r));
    }
    let detail = format!(
        "{segments} segment (n in {:?}), {rests} rest point ({climbed} climbed)",
        scales.iter().collect::<Vec<_>>()
    );
    (
        t.finish(5, "Theorem 2: segment <= 109d, rest point <= 44d", detail, started, 120.0, cfg.enforce_time),
        records,
    )
}

/// `f₀` on dyadic fixed point with 80 fractional bits, exact for the
/// dyadic inputs used here.
mod fixed {
    pub const FRAC: u32 = 80;
    pub const ONE: i128 = 1 << FRAC;

    pub fn f0(x: i128) -> i128 {
        if 3 * x < -ONE {
            x / 2 - ONE / 2
        } else if 3 * x <= ONE {
            2 * x
        } else {
            x / 2 + ONE / 2
        }
    }
}

fn to_fixed(x: &Scalar) -> Option<i128> {
    let scaled = x * Scalar::from_integer(num_bigint::BigInt::from(fixed::ONE));
    scaled.is_integer().then(|| num_traits::ToPrimitive::to_i128(scaled.numer())).flatten()
}

fn from_fixed(v: i128) -> Scalar {
    Scalar::new(v.into(), fixed::ONE.into())
}

/// Exhaustive grid minimum of `E` over `[−1, 1]` for an `f₀` trajectory.
fn grid_minimum(points: &[i128], log2: u32) -> (i128, i128) {
    let steps: i128 = 1 << log2;
    let h = 2 * fixed::ONE / steps;
    (0..=steps)
        .into_par_iter()
        .map(|i| {
            let mut z = -fixed::ONE + i * h;
            let mut e = 0i128;
            for x in points {
                e = e.max((z - x).abs());
                z = fixed::f0(z);
            }
            (e, i)
        })
        .min()
        .map(|(e, i)| (e, -fixed::ONE + i * h))
        .expect("grid nonempty")
}

fn item6(cfg: &ReproduceConfig, records: &[TrialRecord], expected: &Expected) -> CriterionReport {
    let started = Instant::now();
    let f0 = f0_map();
    let f = family();
    let factor = expected.lipschitz_shadowing.clone();
    let outcomes: Vec<Result<OracleMethod, String>> = records
        .par_iter()
        .map(|r| {
            let map: &dyn Map1D = match r.map {
                TrialMap::F0 => &f0,
                TrialMap::F => f,
            };
            let search = default_search(map, &r.points, &factor).map_err(|e| e.to_string())?;
            let options = OracleOptions {
                seed: Some(r.z.clone()),
                // only domination is checked here; coarse cores keep the
                // rest-point runs cheap
                core_bits: 0,
                ..OracleOptions::default()
            };
            let o = optimal_shadow_distance(map, &r.points, &search, &options)
                .map_err(|e| format!("item {} trial {}: oracle: {e}", r.item, r.trial))?;
            if o.rho_star > r.constructive {
                return Err(format!(
                    "item {} trial {}: rho* = {} > constructive {}",
                    r.item, r.trial, o.rho_star, r.constructive
                ));
            }
            Ok(o.method)
        })
        .collect();
    let mut t = Tally::new();
    let mut methods = std::collections::BTreeMap::<String, usize>::new();
    for o in outcomes {
        if let Ok(m) = &o {
            *methods.entry(format!("{m:?}")).or_default() += 1;
        }
        t.absorb(o.map(|_| ()));
    }

    // small instances against the exhaustive grid
    let log2 = cfg.budget.grid_log2;
    let search = interval(int(-1), int(1));
    let h = pow2(1 - log2 as i64);
    let mut worst_gap = Scalar::zero();
    for i in 0..cfg.budget.small_instances {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, 6, i));
        let horizon = rng.gen_range(1..=8usize);
        let d = dyadic_defect(&mut rng, 4, 10);
        let x0 = lattice_point(&mut rng, &search);
        let g = match gen_perturbed(&f0, &x0, horizon, &d, rng.gen()) {
            Ok(g) => g,
            Err(e) => {
                t.check(false, || format!("small instance {i}: generator: {e}"));
                continue;
            }
        };
        let o = match optimal_shadow_distance(&f0, &g.points, &search, &OracleOptions::default()) {
            Ok(o) => o,
            Err(e) => {
                t.check(false, || format!("small instance {i}: oracle: {e}"));
                continue;
            }
        };
        let fixed_points: Option<Vec<i128>> = g.points.iter().map(to_fixed).collect();
        let Some(fixed_points) = fixed_points else {
            t.check(false, || format!("small instance {i}: trajectory not representable"));
            continue;
        };
        let (grid_min, _) = grid_minimum(&fixed_points, log2);
        let grid_min = from_fixed(grid_min);
        let slack = pow2(horizon as i64) * &h / int(2);
        t.check(o.method == OracleMethod::ExactBreakpoints, || {
            format!("small instance {i}: method {:?}", o.method)
        });
        t.check(o.rho_star <= grid_min && grid_min <= &o.rho_star + &slack, || {
            format!("small instance {i}: rho* = {}, grid min = {grid_min}, slack {slack}", o.rho_star)
        });
        worst_gap = worst_gap.max(&grid_min - &o.rho_star);
    }
    let detail = format!(
        "{} oracle runs {:?}; {} small instances, grid 2^{}+1, worst grid gap {:.3e}",
        records.len(),
        methods,
        cfg.budget.small_instances,
        log2,
        crate::scalar::to_f64(&worst_gap)
    );
    t.finish(6, "oracle rho* <= constructive; exact oracle matches grid", detail, started, 180.0, cfg.enforce_time)
}

fn item7(cfg: &ReproduceConfig, expected: &Expected) -> CriterionReport {
    let started = Instant::now();
    let mut t = Tally::new();
    let unit = interval(int(0), int(1));
    let identity = PiecewiseAffineMap1D::identity(unit.clone());
    let d = rat(1, 1000);
    let mut ratio = None;
    match gen_adversarial_drift(&identity, &int(0), 300, &d) {
        Ok(g) => {
            t.check(!g.is_clipped() && g.defect == d, || "drift clipped or defect != d".into());
            match optimal_shadow_distance(&identity, &g.points, &unit, &OracleOptions::default()) {
                Ok(o) => {
                    let r = &o.rho_star / &d;
                    t.check(r == expected.control_ratio, || {
                        format!("rho*/d = {r}, expected {}", expected.control_ratio)
                    });
                    t.check(r > expected.lipschitz_shadowing, || {
                        format!("rho*/d = {r} does not exceed {}", expected.lipschitz_shadowing)
                    });
                    ratio = Some(r);
                }
                Err(e) => t.check(false, || format!("oracle: {e}")),
            }
        }
        Err(e) => t.check(false, || format!("generator: {e}")),
    }
    let detail = match ratio {
        Some(r) => format!("identity drift T = 300, d = 1/1000: rho*/d = {r}"),
        None => "no ratio".into(),
    };
    t.finish(7, "negative control: identity rho*/d = 150 > 109", detail, started, 10.0, cfg.enforce_time)
}

fn item8(cfg: &ReproduceConfig, expected: &Expected) -> CriterionReport {
    let started = Instant::now();
    let mut t = Tally::new();
    let f0 = f0_map();
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, 8, 0));
    let mut scales: Vec<(Scalar, Scalar)> = (1..=10)
        .flat_map(|n| {
            let big_n = scale_size(n);
            [
                (big_n.recip(), int(3) * &big_n),
                (-big_n.recip(), int(-3) * &big_n),
            ]
        })
        .collect();
    for _ in 0..20 {
        let m = rat(rng.gen_range(1..50), rng.gen_range(1..50)) * if rng.gen_bool(0.5) { int(1) } else { int(-1) };
        scales.push((m, rat(rng.gen_range(-100..100), rng.gen_range(1..30))));
    }
    for (m, shift) in &scales {
        let round_trip = conjugate_map(&f0, m, shift)
            .and_then(|g| conjugate_map(&g, &m.recip(), &(-(shift * m))));
        t.check(round_trip.as_ref().is_ok_and(|g| g == &f0), || {
            format!("round trip through M = {m}, m = {shift} is not piece-for-piece exact")
        });
    }
    let outcomes: Vec<Result<(), String>> = (0..cfg.budget.conjugacy)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, 8, i + 1));
            let inner = f0_case_trajectory(&mut rng, i % 3)?;
            let m = rat(rng.gen_range(1..64), rng.gen_range(1..64)) * if rng.gen_bool(0.5) { int(1) } else { int(-1) };
            let shift = rat(rng.gen_range(-64..64), rng.gen_range(1..16));
            let outer_map = conjugate_map(&f0_map(), &m, &shift).map_err(|e| e.to_string())?;
            let outer: Vec<Scalar> = inner.points.iter().map(|x| x / &m + &shift).collect();
            let t = shadow_via_conjugacy(&outer_map, &m, &shift, &outer, |x| {
                lemma4_shadow(x).map(|o| o.result)
            })
            .map_err(|e| format!("trial {i}: {e}"))?;
            let outer_defect = measure_defect(&outer_map, outer).map_err(|e| e.to_string())?.defect;
            if outer_defect != &inner.defect / m.abs() {
                return Err(format!("trial {i}: outer defect {outer_defect} is not |M|^-1 · inner"));
            }
            if !t.exact_transfer {
                return Err(format!("trial {i}: outer errors are not exactly |M|^-1 · inner errors"));
            }
            if t.outer.max_error > &expected.lipschitz_shadowing * &outer_defect {
                return Err(format!("trial {i}: outer error above {}d", expected.lipschitz_shadowing));
            }
            Ok(())
        })
        .collect();
    for o in outcomes {
        t.absorb(o);
    }
    let detail = format!("{} round trips, {} transfers", scales.len(), cfg.budget.conjugacy);
    t.finish(8, "conjugacy: exact round trip, errors scale by 1/|M|", detail, started, 10.0, cfg.enforce_time)
}

/// Items 1 and 2 as a table of identities.
pub fn claimed_identities(expected: &Expected) -> Vec<IdentityRow> {
    let mut rows = identity_rows_item1(expected);
    rows.extend(identity_rows_item2(expected));
    rows
}

pub fn reproduce(cfg: &ReproduceConfig, expected: &Expected) -> Reproduction {
    let mut criteria = Vec::new();

    let started = Instant::now();
    let rows1 = identity_rows_item1(expected);
    criteria.push(item_from_rows(1, "exact identities of f0 and f", &rows1, started, 1.0, cfg.enforce_time));

    let started = Instant::now();
    let rows2 = identity_rows_item2(expected);
    criteria.push(item_from_rows(2, "constants ledger", &rows2, started, 1.0, cfg.enforce_time));

    let (r3, mut records) = item3(cfg, expected);
    criteria.push(r3);
    let (r4, rec4) = item4(cfg, expected);
    criteria.push(r4);
    records.extend(rec4);
    let (r5, rec5) = item5(cfg, expected);
    criteria.push(r5);
    records.extend(rec5);
    criteria.push(item6(cfg, &records, expected));
    criteria.push(item7(cfg, expected));
    criteria.push(item8(cfg, expected));

    let mut identities = rows1;
    identities.extend(rows2);
    let passed = criteria.iter().all(|c| c.passed);
    Reproduction {
        seed: cfg.seed,
        budget: cfg.budget,
        criteria,
        identities,
        passed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdValidation {
    pub trials: usize,
    pub violations: usize,
    pub failures: Vec<String>,
    /// Largest error/d seen.
    pub worst_ratio: f64,
}

/// Adversarial trials at `d = working_threshold()`: crossing designs with
/// every error of size exactly `d`, greedy drifts in the contracting
/// pieces, and backward runs in the expanding block.
pub fn validate_working_threshold(trials: usize, seed: u64) -> ThresholdValidation {
    let d = working_threshold();
    let f0 = f0_map();
    let outcomes: Vec<Result<Scalar, String>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, 9, i));
            let g = match i % 4 {
                0 | 1 => gen_crossing_with(&d, rng.gen_range(6..=40), rng.gen_range(6..=40), rng.gen(), true),
                2 => {
                    let mut x0 = lattice_point(&mut rng, &interval(rat(5, 12), rat(7, 6)));
                    if rng.gen_bool(0.5) {
                        x0 = -x0;
                    }
                    gen_adversarial_drift(&f0, &x0, rng.gen_range(1..=60), &d)
                }
                _ => {
                    let end = lattice_point(&mut rng, &interval(rat(-1, 4), rat(1, 4)));
                    gen_backward(&f0, &end, rng.gen_range(1..=60), &d, rng.gen())
                }
            }
            .map_err(|e| format!("trial {i}: generator: {e}"))?;
            let out = lemma4_shadow(&g.points).map_err(|e| format!("trial {i}: {}", e.cause()))?;
            let r = &out.result;
            if !r.within_bound || r.max_error > int(109) * &g.defect {
                return Err(format!("trial {i}: error {} above bound", r.max_error));
            }
            if g.defect.is_zero() {
                Ok(Scalar::zero())
            } else {
                Ok(&r.max_error / &g.defect)
            }
        })
        .collect();
    let mut failures = Vec::new();
    let mut violations = 0;
    let mut worst = Scalar::zero();
    for o in outcomes {
        match o {
            Ok(r) => worst = worst.max(r),
            Err(e) => {
                violations += 1;
                if failures.len() < 10 {
                    failures.push(e);
                }
            }
        }
    }
    ThresholdValidation {
        trials,
        violations,
        failures,
        worst_ratio: crate::scalar::to_f64(&worst),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_f0_matches_exact() {
        let f0 = f0_map();
        for x in [rat(-1, 1), rat(-1, 3), rat(1, 3), rat(5, 8), int(0), rat(3, 1024), rat(-700, 1024)] {
            let fx = to_fixed(&x).map(fixed::f0).map(from_fixed);
            if to_fixed(&x).is_some() {
                assert_eq!(fx.unwrap(), f0.eval(&x).unwrap(), "{x}");
            }
        }
        assert_eq!(from_fixed(fixed::f0(to_fixed(&rat(1, 4)).unwrap())), rat(1, 2));
    }

    #[test]
    fn identities_hold() {
        assert!(claimed_identities(&Expected::default()).iter().all(|r| r.ok));
    }

    #[test]
    fn corrupted_constant_fails_its_row() {
        let expected = Expected {
            lipschitz_shadowing: int(110),
            ..Expected::default()
        };
        let rows = claimed_identities(&expected);
        let bad: Vec<_> = rows.iter().filter(|r| !r.ok).map(|r| r.name.as_str()).collect();
        assert_eq!(bad, vec!["LL"]);
    }

    #[test]
    fn quick_run_passes() {
        let cfg = ReproduceConfig {
            seed: 5,
            budget: Budget {
                lemma1: 12,
                theorem1: 12,
                theorem2: 12,
                small_instances: 2,
                conjugacy: 6,
                grid_log2: 10,
            },
            enforce_time: false,
        };
        let r = reproduce(&cfg, &Expected::default());
        for c in &r.criteria {
            assert!(c.passed, "{}", c.line());
        }
    }
}
