mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use neuropipe::geometry::RigidTransform;
use neuropipe::phantom::{standard_center, standard_grid, Phantom};
use neuropipe::registration::{register_rigid, Metric, RegistrationConfig};

fn probes(c: [f64; 3]) -> Vec<[f64; 3]> {
    let mut v = vec![c];
    for dx in [-15.0, 15.0] {
        for dy in [-15.0, 15.0] {
            for dz in [-15.0, 15.0] {
                v.push([c[0] + dx, c[1] + dy, c[2] + dz]);
            }
        }
    }
    v
}

fn recover(seed: u64, metric: Metric) {
    let c = standard_center();
    let phantom = Phantom::head(c, 1.0);
    let grid = standard_grid();
    let fixed = phantom.sample(&grid, &RigidTransform::identity()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = common::random_perturbation(&mut rng, 10.0, 10.0, c);
    let moving = phantom.sample(&grid, &truth).unwrap();
    let cfg = RegistrationConfig { metric, ..Default::default() };
    let r = register_rigid(&fixed, &moving, &cfg).unwrap();
    let (dt, deg) = common::transform_error(&r.transform, &truth, &[c]);
    let (dt_far, _) = common::transform_error(&r.transform, &truth, &probes(c));
    assert!(dt.iter().all(|&e| e < 0.5), "{dt:?}");
    assert!(deg < 0.5, "{deg}");
    assert!(dt_far.iter().all(|&e| e < 0.5), "{dt_far:?}");
}

#[test]
fn recovers_perturbation_ncc() {
    recover(1, Metric::Ncc);
    recover(2, Metric::Ncc);
}

#[test]
fn recovers_perturbation_msd() {
    recover(3, Metric::Msd);
}

#[test]
fn identical_images_stay_at_identity() {
    let phantom = Phantom::head(standard_center(), 1.0);
    let fixed = phantom.sample(&standard_grid(), &RigidTransform::identity()).unwrap();
    let r = register_rigid(&fixed, &fixed, &RegistrationConfig::default()).unwrap();
    assert!(r.transform.max_abs_diff(&RigidTransform::identity()) < 1e-2, "{:?}", r.transform);
    assert!(r.final_metric > 0.999);
}

#[test]
fn same_seed_same_result() {
    let c = standard_center();
    let phantom = Phantom::head(c, 1.0);
    let grid = standard_grid();
    let fixed = phantom.sample(&grid, &RigidTransform::identity()).unwrap();
    let moving = phantom.sample(&grid, &RigidTransform::translation([3.0, -2.0, 1.0])).unwrap();
    let cfg = RegistrationConfig { pyramid_levels: vec![2, 1], ..Default::default() };
    let a = register_rigid(&fixed, &moving, &cfg).unwrap();
    let b = register_rigid(&fixed, &moving, &cfg).unwrap();
    assert_eq!(a.transform, b.transform);
    assert_eq!(a.trace, b.trace);
}
