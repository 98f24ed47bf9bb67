use lipshadow::example::{
    f0_map, family, lemma4_shadow, max_scale, scale_size, theorem2_shadow, working_threshold, Branch, Lemma4Case,
};
use lipshadow::oracle::{
    default_search, empirical_lipschitz_constant, optimal_shadow_distance, OracleError, OracleMethod,
    OracleOptions, SweepTrajectory,
};
use lipshadow::pam::Map1D;
use lipshadow::pseudo::{gen_crossing, gen_perturbed};
use lipshadow::scalar::{int, pow2, rat, Interval, Scalar};
use lipshadow::shadow::{read_trajectory_csv, write_trajectory_csv};

#[test]
fn crossing_is_shadowed_and_dominated_by_the_oracle() {
    let d = pow2(-14);
    let g = gen_crossing(&d, 30, 25, 9).unwrap();
    let out = lemma4_shadow(&g.points).unwrap();
    assert!(matches!(out.case, Lemma4Case::Case3 { .. }));
    assert!(out.result.max_error <= int(109) * &g.defect);
    let f0 = f0_map();
    let search = default_search(&f0, &g.points, &int(109)).unwrap();
    let o = optimal_shadow_distance(&f0, &g.points, &search, &OracleOptions::default()).unwrap();
    assert_eq!(o.method, OracleMethod::ExactBreakpoints);
    assert!(o.rho_star <= out.result.max_error);
    // the optimum is at least defect / (1 + Lip)
    assert!(o.rho_star >= &g.defect / int(3));
}

#[test]
fn scaled_trajectory_goes_through_the_segment_branch() {
    let d = pow2(-16);
    let inner = gen_crossing(&d, 12, 12, 4).unwrap();
    let n = 5;
    let big_n = scale_size(n);
    let outer: Vec<Scalar> = inner.points.iter().map(|x| -(&big_n * x + int(3) * &big_n)).collect();
    let out = theorem2_shadow(&outer).unwrap();
    assert!(matches!(out.branch, Branch::Segment { sign: -1, .. }));
    assert!(out.result.max_error <= int(109) * &out.result.defect);
    // errors scale with N exactly
    assert_eq!(out.result.defect, &big_n * &inner.defect);
}

#[test]
fn rest_point_trajectory_is_bracketed() {
    let d = pow2(-18);
    let n0 = max_scale(&d).unwrap();
    let c = scale_size(n0);
    let f = family();
    let mut points = vec![&c / int(3)];
    for k in 0..12 {
        let next = f.eval(&points[k]).unwrap() + if k % 2 == 0 { &d / int(2) } else { -&d / int(3) };
        points.push(next);
    }
    let out = theorem2_shadow(&points).unwrap();
    assert!(matches!(out.branch, Branch::RestPoint { .. }));
    assert!(out.result.max_error <= int(44) * &out.result.defect);
    let search = default_search(f, &points, &int(109)).unwrap();
    let options = OracleOptions {
        seed: Some(out.result.z.clone()),
        ..OracleOptions::default()
    };
    let o = optimal_shadow_distance(f, &points, &search, &options).unwrap();
    assert!(o.rho_star <= out.result.max_error);
    assert!(o.bracket.lo() <= &o.rho_star);
}

#[test]
fn trajectories_survive_a_csv_round_trip() {
    let g = gen_perturbed(&f0_map(), &rat(2, 7), 20, &pow2(-12), 1).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &g.points).unwrap();
    assert_eq!(read_trajectory_csv(buf.as_slice()).unwrap(), g.points);
}

#[test]
fn empirical_constant_stays_below_the_bound() {
    let f0 = f0_map();
    let sweep = [pow2(-10), pow2(-14)];
    let generate = |d: &Scalar, trial: usize| -> Result<SweepTrajectory, OracleError> {
        let g = if trial % 2 == 0 {
            gen_crossing(d, 8, 8, trial as u64).map_err(|e| OracleError::Generator(e.to_string()))?
        } else {
            gen_perturbed(&f0_map(), &rat(3, 5), 20, d, trial as u64)
                .map_err(|e| OracleError::Generator(e.to_string()))?
        };
        Ok(SweepTrajectory {
            clipped: g.is_clipped(),
            points: g.points,
            defect: g.defect,
        })
    };
    let table =
        empirical_lipschitz_constant(&f0, &sweep, 6, generate, Some(int(109)), &int(109), &OracleOptions::default())
            .unwrap();
    assert_eq!(table.rows.len(), 12);
    assert_eq!(table.violations, 0);
    assert!(table.constant.unwrap() <= int(109));
    assert!(working_threshold() >= sweep[0]);
}

#[test]
fn identity_control_exceeds_every_constant() {
    let unit = Interval::new(int(0), int(1)).unwrap();
    let identity = lipshadow::pam::PiecewiseAffineMap1D::identity(unit.clone());
    for horizon in [10usize, 100, 300] {
        let d = rat(1, 1000);
        let points: Vec<Scalar> = (0..=horizon).map(|k| &d * int(k as i64)).collect();
        let o = optimal_shadow_distance(&identity, &points, &unit, &OracleOptions::default()).unwrap();
        assert_eq!(o.rho_star / &d, rat(horizon as i64, 2));
    }
}
