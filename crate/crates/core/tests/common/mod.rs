#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbf_approx::prelude::*;

/// `|a - b| <= tol * max(|a|, |b|)`; two zeros are equal.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let s = x.abs().max(y.abs());
            if s == 0.0 {
                0.0
            } else {
                (x - y).abs() / s
            }
        })
        .fold(0.0, f64::max)
}

/// Random cloud of `n` points in `[0, side]^2` with heights in `[-50, 150)`.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, side: f64) -> PointCloud {
    let pts = (0..n)
        .map(|_| {
            SamplePoint::new(
                rng.random::<f64>() * side,
                rng.random::<f64>() * side,
                rng.random::<f64>() * 200.0 - 50.0,
            )
            .unwrap()
        })
        .collect();
    PointCloud::new(pts).unwrap()
}

/// `m` distinct random centers in `[0, side]^2`.
pub fn random_refs(rng: &mut ChaCha8Rng, m: usize, side: f64) -> ReferenceSet {
    let pts = (0..m)
        .map(|_| Point2::new(rng.random::<f64>() * side, rng.random::<f64>() * side).unwrap())
        .collect();
    ReferenceSet::new(pts).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A kernel whose width is comparable to `side`, so both families give
/// matrices with a mix of zero and non-zero entries.
pub fn kernel_for(family: KernelFamily, side: f64) -> Kernel {
    match family {
        KernelFamily::Gaussian => Kernel::gaussian(2.0 / side).unwrap(),
        KernelFamily::Wendland31 => Kernel::wendland31(2.5 / side).unwrap(),
    }
}

pub fn plan(n: usize, m: usize, block_size: Option<usize>, workers: usize) -> BlockPlan {
    plan_blocks(n, m, 1 << 34, F64_BYTES, block_size, workers).unwrap()
}

/// Fits `cloud` with the default regularization schedule.
pub fn fit(cloud: &PointCloud, refs: &ReferenceSet, kernel: Kernel, plan: &BlockPlan) -> FitModel {
    let system = assemble_normal_system(cloud, refs, &kernel, plan, None).unwrap();
    let weights = solve_normal(&system, &default_lambda_schedule(&system)).unwrap();
    FitModel::new(kernel, refs.clone(), weights).unwrap()
}
