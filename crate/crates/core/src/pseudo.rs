//! Pseudotrajectory generators. Noise lives on the lattice `2⁻⁴⁰ℤ`, so
//! every generated point is an exact rational and every defect is exact.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::example::{f0_constants, f0_map, working_threshold};
use crate::pam::{Map1D, PamError, DEFAULT_PIECE_CAP};
use crate::scalar::{floor_int, pow2, rat, serde_rational, Interval, Scalar};
use crate::shadow::step_errors;

/// Exponent of the noise lattice.
pub const LATTICE_BITS: i64 = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),
    #[error(transparent)]
    Map(#[from] PamError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedTrajectory {
    #[serde(with = "serde_rational::vec")]
    pub points: Vec<Scalar>,
    /// Exact `max |f(x_k) − x_{k+1}|`.
    #[serde(with = "serde_rational")]
    pub defect: Scalar,
    /// Indices whose point was pulled back into the domain.
    pub clipped_steps: Vec<usize>,
}

impl GeneratedTrajectory {
    fn measured(map: &dyn Map1D, points: Vec<Scalar>, clipped_steps: Vec<usize>) -> Result<Self, GenError> {
        let defect = step_errors(map, &points)?
            .iter()
            .map(Signed::abs)
            .max()
            .unwrap_or_else(Scalar::zero);
        Ok(GeneratedTrajectory {
            points,
            defect,
            clipped_steps,
        })
    }

    pub fn is_clipped(&self) -> bool {
        !self.clipped_steps.is_empty()
    }
}

/// A uniform lattice point in `[−d, d]`.
pub fn lattice_noise(rng: &mut impl Rng, d: &Scalar) -> Scalar {
    let unit = pow2(-LATTICE_BITS);
    let steps = floor_int(&(d / &unit));
    if steps.is_zero() {
        return Scalar::zero();
    }
    let k = uniform_bigint(rng, &(-&steps), &steps);
    Scalar::from_integer(k) * unit
}

/// Uniform lattice point in `[lo, hi]`.
pub fn lattice_point(rng: &mut impl Rng, window: &Interval) -> Scalar {
    let unit = pow2(-LATTICE_BITS);
    let lo = -floor_int(&(-window.lo() / &unit));
    let hi = floor_int(&(window.hi() / &unit));
    if hi < lo {
        return window.midpoint();
    }
    Scalar::from_integer(uniform_bigint(rng, &lo, &hi)) * unit
}

fn uniform_bigint(rng: &mut impl Rng, lo: &BigInt, hi: &BigInt) -> BigInt {
    let span = (hi - lo).to_i128().expect("lattice span fits in i128");
    lo + BigInt::from(rng.gen_range(0..=span))
}

fn clamp_into(domain: &Interval, x: Scalar, k: usize, clipped: &mut Vec<usize>) -> Scalar {
    if domain.contains(&x) {
        x
    } else {
        clipped.push(k);
        domain.clamp(&x)
    }
}

/// `x_{k+1} = f(x_k) + e_k` with lattice noise `|e_k| ≤ d`.
pub fn gen_perturbed(
    map: &dyn Map1D,
    x0: &Scalar,
    horizon: usize,
    d: &Scalar,
    seed: u64,
) -> Result<GeneratedTrajectory, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = map.domain();
    if !domain.contains(x0) {
        return Err(PamError::out_of_domain(x0, Some(0)).into());
    }
    let mut points = vec![x0.clone()];
    let mut clipped = Vec::new();
    for k in 1..=horizon {
        let next = map.eval(&points[k - 1])? + lattice_noise(&mut rng, d);
        points.push(clamp_into(&domain, next, k, &mut clipped));
    }
    GeneratedTrajectory::measured(map, points, clipped)
}

/// Greedy drift: push by `±d` away from the unperturbed orbit of `x0`
/// (`+d` on ties).
pub fn gen_adversarial_drift(
    map: &dyn Map1D,
    x0: &Scalar,
    horizon: usize,
    d: &Scalar,
) -> Result<GeneratedTrajectory, GenError> {
    let domain = map.domain();
    let reference = map.iterate(x0, horizon)?;
    let mut points = vec![x0.clone()];
    let mut clipped = Vec::new();
    for k in 1..=horizon {
        let image = map.eval(&points[k - 1])?;
        let next = if image < reference[k] { image - d } else { image + d };
        points.push(clamp_into(&domain, next, k, &mut clipped));
    }
    GeneratedTrajectory::measured(map, points, clipped)
}

pub fn gen_constant(map: &dyn Map1D, x: &Scalar, horizon: usize) -> Result<GeneratedTrajectory, GenError> {
    GeneratedTrajectory::measured(map, vec![x.clone(); horizon + 1], Vec::new())
}

/// Runs time backwards from `x_end`: `x_{k−1}` is a preimage of `x_k − e`.
/// Backward orbits of an expanding block stay in it, which forward
/// perturbed orbits never do for long.
pub fn gen_backward(
    map: &dyn Map1D,
    x_end: &Scalar,
    horizon: usize,
    d: &Scalar,
    seed: u64,
) -> Result<GeneratedTrajectory, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cover = map.cover(&map.domain(), DEFAULT_PIECE_CAP)?;
    let range = map.image(&map.domain())?;
    let mut rev = vec![x_end.clone()];
    for _ in 0..horizon {
        let last = rev.last().expect("nonempty");
        // the noise must keep the target inside the range of the map
        let window = Interval::new(last - d, last + d)
            .expect("d >= 0")
            .intersect(&range)
            .ok_or_else(|| GenError::InfeasibleDesign(format!("{last} is more than d outside the range")))?;
        let target = window.clamp(&(last - lattice_noise(&mut rng, d)));
        let pre = cover
            .pieces
            .iter()
            .find(|p| p.image().contains(&target))
            .and_then(|p| p.invert(&target))
            .ok_or_else(|| GenError::InfeasibleDesign(format!("no explicit preimage of {target}")))?;
        rev.push(pre);
    }
    rev.reverse();
    GeneratedTrajectory::measured(map, rev, Vec::new())
}

/// A Case-3 design for `f₀`: `lead` points below `1/4`, a crossing point
/// `c ∈ [1/4, 5/12]` at index `lead`, then `tail` points converging to
/// `±1`. Both segments must have at least `μ` steps, so `lead` and `tail`
/// must exceed `μ`.
pub fn gen_crossing(d: &Scalar, lead: usize, tail: usize, seed: u64) -> Result<GeneratedTrajectory, GenError> {
    gen_crossing_with(d, lead, tail, seed, false)
}

/// [`gen_crossing`] with every error of size exactly `d` and random sign
/// when `extreme` is set.
pub fn gen_crossing_with(
    d: &Scalar,
    lead: usize,
    tail: usize,
    seed: u64,
    extreme: bool,
) -> Result<GeneratedTrajectory, GenError> {
    let mu = f0_constants().mu as usize;
    if lead <= mu || tail <= mu {
        return Err(GenError::InfeasibleDesign(format!(
            "lead {lead} and tail {tail} must both exceed mu = {mu}"
        )));
    }
    if d > &working_threshold() {
        return Err(GenError::InfeasibleDesign(format!(
            "d = {d} is above the working threshold {}",
            working_threshold()
        )));
    }
    let map = f0_map();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = lattice_point(&mut rng, &Interval::new(rat(1, 4), rat(5, 12)).expect("ordered"));
    if rng.gen_bool(0.5) {
        c = -c;
    }
    let noise = |rng: &mut ChaCha8Rng| {
        if extreme {
            if rng.gen_bool(0.5) {
                d.clone()
            } else {
                -d.clone()
            }
        } else {
            lattice_noise(rng, d)
        }
    };
    let mut rev = vec![c.clone()];
    for _ in 0..lead {
        let target = rev.last().expect("nonempty") - noise(&mut rng);
        rev.push(target / Scalar::from_integer(2.into()));
    }
    rev.reverse();
    let mut points = rev;
    for _ in 0..tail {
        let next = map.eval(points.last().expect("nonempty"))? + noise(&mut rng);
        points.push(next);
    }
    GeneratedTrajectory::measured(&map, points, Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenKind {
    Perturbed,
    Crossing,
    AdversarialDrift,
    Constant,
    Backward,
}

/// One generator call. `x0` is the end point for `backward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: GenKind,
    #[serde(default = "default_map")]
    pub map: String,
    #[serde(with = "serde_rational", default = "Scalar::zero")]
    pub x0: Scalar,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(with = "serde_rational")]
    pub d_target: Scalar,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lead: Option<usize>,
    #[serde(default)]
    pub tail: Option<usize>,
}

fn default_map() -> String {
    "f0".into()
}

/// Runs a spec against an already resolved map. Crossing designs always
/// use `f₀`.
pub fn generate(spec: &GenSpec, map: &dyn Map1D) -> Result<GeneratedTrajectory, GenError> {
    if spec.d_target.is_negative() {
        return Err(GenError::InfeasibleDesign("negative d_target".into()));
    }
    match spec.kind {
        GenKind::Perturbed => gen_perturbed(map, &spec.x0, spec.horizon, &spec.d_target, spec.seed),
        GenKind::AdversarialDrift => gen_adversarial_drift(map, &spec.x0, spec.horizon, &spec.d_target),
        GenKind::Constant => gen_constant(map, &spec.x0, spec.horizon),
        GenKind::Backward => gen_backward(map, &spec.x0, spec.horizon, &spec.d_target, spec.seed),
        GenKind::Crossing => {
            let lead = spec.lead.unwrap_or(spec.horizon / 2);
            let tail = spec.tail.unwrap_or(spec.horizon.saturating_sub(lead));
            gen_crossing(&spec.d_target, lead, tail, spec.seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::{lemma4_classify, Lemma4Case};
    use crate::pam::PiecewiseAffineMap1D;
    use crate::scalar::int;

    fn unit_identity() -> PiecewiseAffineMap1D {
        PiecewiseAffineMap1D::identity(Interval::new(int(0), int(1)).unwrap())
    }

    #[test]
    fn zero_noise_gives_exact_orbit() {
        let f = f0_map();
        let g = gen_perturbed(&f, &rat(1, 100), 30, &int(0), 1).unwrap();
        assert_eq!(g.points, f.iterate(&rat(1, 100), 30).unwrap());
        assert!(g.defect.is_zero());
    }

    #[test]
    fn perturbed_defect_is_bounded_and_seeded() {
        let f = f0_map();
        let d = pow2(-15);
        let a = gen_perturbed(&f, &rat(1, 100), 60, &d, 42).unwrap();
        let b = gen_perturbed(&f, &rat(1, 100), 60, &d, 42).unwrap();
        assert!(a.defect <= d && a.defect.is_positive());
        assert_eq!(a, b);
        assert_ne!(a.points, gen_perturbed(&f, &rat(1, 100), 60, &d, 43).unwrap().points);
    }

    #[test]
    fn clipping_is_recorded() {
        let g = gen_adversarial_drift(&unit_identity(), &int(0), 20, &rat(1, 10)).unwrap();
        assert_eq!(g.points[3], rat(3, 10));
        assert_eq!(g.points[20], int(1));
        assert_eq!(g.clipped_steps, (11..=20).collect::<Vec<_>>());
    }

    #[test]
    fn identity_drift_is_linear() {
        let d = rat(1, 1000);
        let g = gen_adversarial_drift(&unit_identity(), &int(0), 300, &d).unwrap();
        for (k, x) in g.points.iter().enumerate() {
            assert_eq!(x, &(Scalar::from_integer(k.into()) * &d));
        }
        assert!(!g.is_clipped());
    }

    #[test]
    fn drift_near_attracting_point_saturates_at_2d() {
        let d = pow2(-12);
        let g = gen_adversarial_drift(&f0_map(), &int(1), 80, &d).unwrap();
        let last = g.points.last().unwrap() - int(1);
        assert!(last < int(2) * &d && last > int(2) * &d * rat(999, 1000));
        let exact = gen_adversarial_drift(&f0_map(), &int(1), 10, &int(0)).unwrap();
        assert!(exact.points.iter().all(|x| x == &int(1)));
    }

    #[test]
    fn crossing_designs_classify_as_case3() {
        let d = pow2(-15);
        let g = gen_crossing(&d, 30, 30, 5).unwrap();
        assert_eq!(g.points.len(), 61);
        assert!(g.defect <= d);
        assert_eq!(lemma4_classify(&g.points, &g.defect), Lemma4Case::Case3 { k0: 30 });
        let exact = gen_crossing(&int(0), 12, 12, 9).unwrap();
        assert!(exact.defect.is_zero());
        assert_eq!(lemma4_classify(&exact.points, &int(0)), Lemma4Case::Case3 { k0: 12 });
        assert!(matches!(gen_crossing(&d, 4, 30, 1), Err(GenError::InfeasibleDesign(_))));
        assert!(matches!(gen_crossing(&d, 30, 5, 1), Err(GenError::InfeasibleDesign(_))));
    }

    #[test]
    fn backward_runs_stay_in_expanding_block() {
        let d = pow2(-14);
        let g = gen_backward(&f0_map(), &rat(1, 5), 200, &d, 3).unwrap();
        assert_eq!(g.points.len(), 201);
        assert!(g.defect <= d);
        assert!(g.points.iter().all(|x| x.abs() <= rat(1, 4)));
    }

    #[test]
    fn spec_json_roundtrip() {
        let json = r#"{"kind":"perturbed","x0":"1/100","T":10,"d_target":"1/1024","seed":7}"#;
        let spec: GenSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.map, "f0");
        let g = generate(&spec, &f0_map()).unwrap();
        assert_eq!(g.points.len(), 11);
        let back: GenSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
