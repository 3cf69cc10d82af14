mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rbf_approx::assembly::apply_design_transpose;
use rbf_approx::prelude::*;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![Just(KernelFamily::Gaussian), Just(KernelFamily::Wendland31)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernel_is_one_at_origin_and_bounded(fam in family(), alpha in 1e-6f64..1e3, r in 0.0f64..1e6) {
        let k = Kernel::new(fam, alpha).unwrap();
        prop_assert_eq!(k.eval(0.0), 1.0);
        let v = k.eval(r);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn kernel_is_nonincreasing(fam in family(), alpha in 1e-3f64..1e2, r in 0.0f64..10.0, dr in 0.0f64..10.0) {
        let k = Kernel::new(fam, alpha).unwrap();
        let (r0, r1) = (r / alpha, (r + dr) / alpha);
        prop_assert!(k.eval(r1) <= k.eval(r0));
    }

    #[test]
    fn wendland_vanishes_outside_support(alpha in 1e-6f64..1e3, t in 1.0f64..1e3) {
        let k = Kernel::wendland31(alpha).unwrap();
        let Support::Radius(radius) = k.support_radius() else { panic!("compact kernel") };
        prop_assert_eq!(k.eval(radius * t), 0.0);
        prop_assert_eq!(k.eval(radius), 0.0);
    }

    #[test]
    fn kernel_scale_covariance(fam in family(), alpha in 1e-4f64..1e2, q in 0.0f64..0.5, c in 1e-3f64..1e3) {
        // phi_alpha(r) = phi_{c alpha}(r / c)
        let r = q / alpha;
        let a = Kernel::new(fam, alpha).unwrap().eval(r);
        let b = Kernel::new(fam, alpha * c).unwrap().eval(r / c);
        prop_assert!(rel_close(a, b, 1e-14), "{a} vs {b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn blocked_assembly_matches_naive(
        seed in any::<u64>(),
        n in 1usize..400,
        m in 1usize..32,
        fam in family(),
        mb_pick in 0usize..1000,
        workers in 1usize..4,
    ) {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, n, 100.0);
        let refs = random_refs(&mut r, m, 100.0);
        let kernel = kernel_for(fam, 100.0);
        let p = plan(n, m, Some(1 + mb_pick % m), workers);
        let blocked = assemble_normal_system(&cloud, &refs, &kernel, &p, None).unwrap();
        let naive = assemble_naive(&cloud, &refs, &kernel).unwrap();
        prop_assert!(max_rel_diff(blocked.gram(), naive.gram()) <= 1e-10);
        prop_assert!(max_rel_diff(blocked.rhs(), naive.rhs()) <= 1e-10);
    }

    #[test]
    fn block_size_does_not_change_the_system(
        seed in any::<u64>(),
        n in 1usize..300,
        m in 2usize..24,
        fam in family(),
        mb_pick in 0usize..1000,
    ) {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, n, 50.0);
        let refs = random_refs(&mut r, m, 50.0);
        let kernel = kernel_for(fam, 50.0);
        let whole = assemble_normal_system(&cloud, &refs, &kernel, &plan(n, m, Some(m), 1), None).unwrap();
        let split = assemble_normal_system(&cloud, &refs, &kernel, &plan(n, m, Some(1 + mb_pick % m), 1), None).unwrap();
        prop_assert_eq!(whole.gram(), split.gram());
        prop_assert_eq!(whole.rhs(), split.rhs());
    }

    #[test]
    fn gram_is_symmetric_positive_semidefinite(
        seed in any::<u64>(),
        n in 1usize..200,
        m in 1usize..20,
        fam in family(),
        mb_pick in 0usize..1000,
    ) {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, n, 30.0);
        let refs = random_refs(&mut r, m, 30.0);
        let kernel = kernel_for(fam, 30.0);
        let sys = assemble_normal_system(&cloud, &refs, &kernel, &plan(n, m, Some(1 + mb_pick % m), 1), None).unwrap();
        for i in 0..m {
            for j in 0..m {
                prop_assert_eq!(sys.get(i, j), sys.get(j, i));
            }
        }
        let b = DMatrix::from_row_slice(m, m, sys.gram());
        let eig = SymmetricEigen::new(b);
        let top = eig.eigenvalues.amax();
        prop_assert!(eig.eigenvalues.min() >= -1e-12 * top.max(1.0));
    }

    #[test]
    fn working_set_stays_within_plan(
        seed in any::<u64>(),
        n in 1usize..300,
        m in 1usize..40,
        mb_pick in 0usize..1000,
    ) {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, n, 10.0);
        let refs = random_refs(&mut r, m, 10.0);
        let kernel = kernel_for(KernelFamily::Wendland31, 10.0);
        let p = plan(n, m, Some(1 + mb_pick % m), 1);
        let (_, stats) = assemble_instrumented(&cloud, &refs, &kernel, &p, None).unwrap();
        // Panels and block buffer, plus the result and per-point vectors.
        let mb = p.block_size;
        let fixed = m * m + 2 * m + 2 * n;
        prop_assert!(stats.peak_resident_scalars <= mb * (mb + 2 * n) + fixed);
        prop_assert!(((stats.peak_resident_scalars - fixed) * F64_BYTES) as u128 <= p.working_set_bytes());
        prop_assert_eq!(stats.block_products, p.block_pairs());
    }

    #[test]
    fn right_hand_side_is_linear_in_heights(
        seed in any::<u64>(),
        n in 1usize..200,
        m in 1usize..16,
        s in -10.0f64..10.0,
    ) {
        let mut r = rng(seed);
        let c1 = random_cloud(&mut r, n, 20.0);
        let c2 = random_cloud(&mut r, n, 20.0);
        let mixed: Vec<SamplePoint> = c1.points().iter().zip(c2.points())
            .map(|(a, b)| SamplePoint { position: a.position, value: a.value + s * b.value })
            .collect();
        let second: Vec<SamplePoint> = c1.points().iter().zip(c2.points())
            .map(|(a, b)| SamplePoint { position: a.position, value: b.value })
            .collect();
        let mixed = PointCloud::new(mixed).unwrap();
        let second = PointCloud::new(second).unwrap();
        let refs = random_refs(&mut r, m, 20.0);
        let kernel = kernel_for(KernelFamily::Gaussian, 20.0);
        let p = plan(n, m, None, 1);
        let d1 = assemble_normal_system(&c1, &refs, &kernel, &p, None).unwrap();
        let d2 = assemble_normal_system(&second, &refs, &kernel, &p, None).unwrap();
        let dm = assemble_normal_system(&mixed, &refs, &kernel, &p, None).unwrap();
        let abs: Vec<f64> = c1.points().iter().zip(c2.points())
            .map(|(a, b)| a.value.abs() + s.abs() * b.value.abs())
            .collect();
        let scale = apply_design_transpose(&c1, &refs, &kernel, &abs, &p);
        for (j, bound) in scale.iter().enumerate() {
            let expect = d1.rhs()[j] + s * d2.rhs()[j];
            prop_assert!((dm.rhs()[j] - expect).abs() <= 1e-12 * bound + f64::MIN_POSITIVE);
        }
        prop_assert_eq!(d1.gram(), dm.gram());
    }

    #[test]
    fn translation_leaves_the_system_unchanged(
        seed in any::<u64>(),
        n in 1usize..200,
        m in 1usize..16,
        fam in family(),
        dx in -1e3f64..1e3,
        dy in -1e3f64..1e3,
    ) {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, n, 40.0);
        let refs = random_refs(&mut r, m, 40.0);
        let moved_cloud = PointCloud::new(cloud.points().iter()
            .map(|p| SamplePoint { position: p.position.translated(dx, dy), value: p.value })
            .collect()).unwrap();
        let moved_refs = ReferenceSet::new(refs.centers().iter().map(|c| c.translated(dx, dy)).collect()).unwrap();
        let kernel = kernel_for(fam, 40.0);
        let p = plan(n, m, None, 1);
        let a = assemble_normal_system(&cloud, &refs, &kernel, &p, None).unwrap();
        let b = assemble_normal_system(&moved_cloud, &moved_refs, &kernel, &p, None).unwrap();
        // Distances change by rounding only. Compare against the entry
        // magnitudes, since the right-hand side may cancel.
        let abs_cloud = PointCloud::new(cloud.points().iter()
            .map(|p| SamplePoint { position: p.position, value: p.value.abs() })
            .collect()).unwrap();
        let scale = assemble_normal_system(&abs_cloud, &refs, &kernel, &p, None).unwrap();
        for (i, (x, y)) in a.gram().iter().zip(b.gram()).enumerate() {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs() + 1e-300, "gram entry {i}: {x} vs {y}");
        }
        for ((x, y), s) in a.rhs().iter().zip(b.rhs()).zip(scale.rhs()) {
            prop_assert!((x - y).abs() <= 1e-8 * s + 1e-300);
        }
    }
}

#[test]
fn parallel_assembly_is_bitwise_sequential() {
    let mut r = rng(99);
    let cloud = random_cloud(&mut r, 1500, 100.0);
    let refs = random_refs(&mut r, 50, 100.0);
    for fam in KernelFamily::ALL {
        let kernel = kernel_for(fam, 100.0);
        let seq = assemble_normal_system(&cloud, &refs, &kernel, &plan(1500, 50, Some(7), 1), None)
            .unwrap();
        let par = assemble_normal_system(&cloud, &refs, &kernel, &plan(1500, 50, Some(7), 4), None)
            .unwrap();
        assert_eq!(seq.gram(), par.gram());
        assert_eq!(seq.rhs(), par.rhs());
    }
}
