//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! (with indented details) and exits non-zero if any gating check fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::*;
use rand::Rng;
use rbf_approx::cli::{cmd_bench_blocks, cmd_error_map, cmd_fit, FitConfig, RamBudget, SelectSpec};
use rbf_approx::evaluate::{boundary_profile, sum_squared_error};
use rbf_approx::prelude::*;

const GIB: f64 = (1u64 << 30) as f64;

struct Verdict {
    failed: Vec<u32>,
}

impl Verdict {
    fn report(&mut self, id: u32, title: &str, pass: bool, details: &[String]) {
        println!(
            "criterion {id} {}: {title}",
            if pass { "PASS" } else { "FAIL" }
        );
        for d in details {
            println!("    {d}");
        }
        if !pass {
            self.failed.push(id);
        }
    }
}

fn non_divisor(m: usize) -> Option<usize> {
    (2..m).find(|k| !m.is_multiple_of(*k))
}

fn criterion_1(v: &mut Verdict) {
    let started = Instant::now();
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for inst in 0..50 {
        let n = r.random_range(1..=2_000);
        let m = r.random_range(1..=64);
        let fam = KernelFamily::ALL[inst % 2];
        let cloud = random_cloud(&mut r, n, 500.0);
        let refs = random_refs(&mut r, m, 500.0);
        let kernel = kernel_for(fam, 500.0);
        let naive = assemble_naive(&cloud, &refs, &kernel).unwrap();
        let mut sizes = vec![1, 7, 16, m];
        sizes.extend(non_divisor(m));
        for mb in sizes.into_iter().filter(|&mb| mb <= m) {
            let sys =
                assemble_normal_system(&cloud, &refs, &kernel, &plan(n, m, Some(mb), 1), None)
                    .unwrap();
            worst = worst
                .max(max_rel_diff(sys.gram(), naive.gram()))
                .max(max_rel_diff(sys.rhs(), naive.rhs()));
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    v.report(
        1,
        "blocked assembly matches the dense oracle",
        worst <= 1e-10 && secs < 30.0,
        &[format!(
            "50 instances, {checked} block plans, worst relative difference {worst:e}, {secs:.2} s"
        )],
    );
}

fn write_cloud(
    dir: &Path,
    name: &str,
    surface: Surface,
    n: usize,
    seed: u64,
) -> std::path::PathBuf {
    let bbox = Rect::new(0.0, 0.0, 1000.0, 1000.0).unwrap();
    let cloud = generate_synthetic(surface, n, &bbox, 0.0, seed).unwrap();
    let path = dir.join(name);
    write_xyz(
        &cloud,
        fs::File::create(&path).unwrap(),
        &XyzFormat::default(),
    )
    .unwrap();
    path
}

fn fit_config(input: &Path, kernel: KernelFamily, alpha: f64, side: usize) -> FitConfig {
    FitConfig {
        kernel,
        alpha,
        centers: side * side,
        select: SelectSpec::Grid(Some((side, side))),
        ram_budget: RamBudget::Bytes(1 << 31),
        ..FitConfig::new(input)
    }
}

fn criterion_2(v: &mut Verdict, dir: &Path) {
    let input = write_cloud(dir, "c2.xyz", Surface::Smooth, 50_000, 2);
    let base = fit_config(&input, KernelFamily::Wendland31, 1.0 / 283.0, 20);
    let weights: Vec<Vec<f64>> = [20, 50, 400]
        .iter()
        .map(|&mb| {
            let config = FitConfig {
                block_size: Some(mb),
                ..base.clone()
            };
            cmd_fit(&config, &mut Vec::new())
                .unwrap()
                .model
                .weights
                .coefficients
        })
        .collect();
    let worst = (0..3)
        .flat_map(|a| (a + 1..3).map(move |b| (a, b)))
        .map(|(a, b)| max_rel_diff(&weights[a], &weights[b]))
        .fold(0.0, f64::max);
    v.report(
        2,
        "weights do not depend on the block size",
        worst <= 1e-8,
        &[format!(
            "N=50000 M=400 M_B in {{20, 50, 400}}: worst pairwise relative difference {worst:e}"
        )],
    );
}

fn criterion_3(v: &mut Verdict) {
    let bytes = dense_design_matrix_bytes(3_000_000, 10_000, 8).unwrap();
    let gib = bytes as f64 / GIB;
    let budget = 32u64 << 30;
    let n = 3_000_000u128;
    let oracle = (1..=10_000u128)
        .filter(|&mb| mb * (mb + 2 * n) * 8 < budget as u128)
        .max()
        .unwrap();
    let plan = plan_blocks(3_000_000, 10_000, budget, 8, None, 1).unwrap();
    v.report(
        3,
        "memory formulas",
        bytes == 240_000_000_000
            && (gib - 223.5).abs() <= 0.05
            && plan.block_size as u128 == oracle,
        &[
            format!("dense design matrix: {bytes} B = {gib:.2} GiB (reported 223.5 GB)"),
            format!(
                "32 GiB budget: M_B = {} (scan oracle {oracle})",
                plan.block_size
            ),
        ],
    );
}

fn criterion_4(v: &mut Verdict) {
    let mut r = rng(4);
    let mut ok = true;
    let mut notes = Vec::new();
    for fam in KernelFamily::ALL {
        let k = Kernel::new(fam, 0.37).unwrap();
        ok &= k.eval(0.0) == 1.0;
        let mut grid: Vec<f64> = (0..10_000).map(|_| r.random::<f64>() * 20.0).collect();
        grid.sort_by(f64::total_cmp);
        let monotone = grid.windows(2).all(|w| k.eval(w[1]) <= k.eval(w[0]));
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let alpha = 10f64.powf(r.random_range(-4.0..2.0));
            let c = 10f64.powf(r.random_range(-3.0..3.0));
            let q = r.random::<f64>() * 0.5;
            let a = Kernel::new(fam, alpha).unwrap().eval(q / alpha);
            let b = Kernel::new(fam, alpha * c).unwrap().eval(q / alpha / c);
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
        }
        ok &= monotone && worst <= 1e-14;
        notes.push(format!(
            "{fam}: phi(0) = 1, monotone over 10^4 radii: {monotone}, scale covariance worst {worst:e}"
        ));
    }
    let mut nonzero = 0;
    for _ in 0..10_000 {
        let k = Kernel::wendland31(10f64.powf(r.random_range(-4.0..3.0))).unwrap();
        let Support::Radius(radius) = k.support_radius() else {
            unreachable!()
        };
        if k.eval(radius * (1.0 + r.random::<f64>() * 10.0)) != 0.0 || k.eval(radius) != 0.0 {
            nonzero += 1;
        }
    }
    ok &= nonzero == 0;
    notes.push(format!(
        "wendland31: {nonzero} nonzero values beyond the support in 10^4 samples"
    ));
    v.report(4, "kernel invariants", ok, &notes);
}

fn criterion_5(v: &mut Verdict) {
    let started = Instant::now();
    let mut r = rng(5);
    let (mut worst_res, mut decreases) = (0.0f64, 0);
    for inst in 0..20 {
        let cloud = random_cloud(&mut r, 5_000, 100.0);
        let refs = random_refs(&mut r, 100, 100.0);
        let kernel = match inst % 2 {
            0 => Kernel::wendland31(1.0 / 30.0).unwrap(),
            _ => Kernel::gaussian(1.0 / 15.0).unwrap(),
        };
        let p = plan(5_000, 100, Some(32), 1);
        let model = fit(&cloud, &refs, kernel, &p);
        worst_res = worst_res.max(optimality_residual(
            &cloud,
            &refs,
            &kernel,
            &model.weights,
            &p,
        ));
        let sse = sum_squared_error(&model, &cloud, &p).unwrap();
        let norm = model
            .coefficients()
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt();
        for _ in 0..100 {
            let dir: Vec<f64> = (0..100).map(|_| r.random::<f64>() - 0.5).collect();
            let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let moved = model
                .coefficients()
                .iter()
                .zip(&dir)
                .map(|(c, d)| c + 1e-3 * norm * d / len)
                .collect();
            let other =
                FitModel::new(kernel, refs.clone(), Weights::from_coefficients(moved)).unwrap();
            if sum_squared_error(&other, &cloud, &p).unwrap() < sse * (1.0 - 1e-12) {
                decreases += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    v.report(
        5,
        "least-squares optimality",
        worst_res <= 1e-6 && decreases == 0 && secs < 60.0,
        &[format!(
            "20 instances N=5000 M=100: worst stationarity residual {worst_res:e}, \
             {decreases} of 2000 perturbations lowered the SSE, {secs:.1} s"
        )],
    );
}

struct SmoothFit {
    label: String,
    report: ErrorReport,
    uncovered: usize,
    cloud: PointCloud,
}

fn smooth_fit(cloud: &PointCloud, alpha: f64, label: &str) -> SmoothFit {
    let sel = select_reference_points(
        cloud,
        900,
        SelectionStrategy::UniformGridSubset { rows: 30, cols: 30 },
    )
    .unwrap();
    let p = plan(cloud.len(), 900, None, 1);
    let kernel = Kernel::wendland31(alpha).unwrap();
    let system = assemble_normal_system(cloud, &sel.refs, &kernel, &p, None).unwrap();
    let weights = solve_normal(&system, &default_lambda_schedule(&system)).unwrap();
    let model = FitModel::new(kernel, sel.refs, weights).unwrap();
    SmoothFit {
        label: label.to_string(),
        report: error_report(&model, cloud, &p).unwrap(),
        uncovered: system.coverage.uncovered_points.len(),
        cloud: cloud.clone(),
    }
}

fn criterion_6(v: &mut Verdict) -> Vec<SmoothFit> {
    let started = Instant::now();
    let bbox = Rect::new(0.0, 0.0, 1000.0, 1000.0).unwrap();
    let cell = 1000.0 / 30.0;
    let diag = cell * 2f64.sqrt();
    let amp = Surface::Smooth.amplitude();
    let smooth = generate_synthetic(Surface::Smooth, 100_000, &bbox, 0.0, 6).unwrap();

    let literal = smooth_fit(&smooth, 2.5 / diag, "alpha = 2.5 / cell diagonal");
    let wide = smooth_fit(
        &smooth,
        1.0 / (16.0 * diag),
        "alpha = 1 / (16 cell diagonals)",
    );
    let meets = |f: &SmoothFit| {
        f.report.mean_rel_error.is_some_and(|r| r <= 1e-3) && f.report.mean_abs_error <= 1e-3 * amp
    };
    let mut notes = Vec::new();
    for f in [&literal, &wide] {
        notes.push(format!(
            "smooth, {}: MAE {:.4e} (limit {:.3}), mean relative error {:.4e} (limit 1e-3), {} points outside every support{}",
            f.label,
            f.report.mean_abs_error,
            1e-3 * amp,
            f.report.mean_rel_error.unwrap_or(f64::NAN),
            f.uncovered,
            if meets(f) { "" } else { " -- misses the thresholds" },
        ));
    }
    notes.push("the gating fit is the first; the second is reported only".into());

    let crater = generate_synthetic(Surface::CraterRim, 100_000, &bbox, 0.0, 66).unwrap();
    let sel = select_reference_points(
        &crater,
        900,
        SelectionStrategy::UniformGridSubset { rows: 30, cols: 30 },
    )
    .unwrap();
    let p = plan(crater.len(), 900, None, 1);
    let crater_mae = |kernel: Kernel| {
        let model = fit(&crater, &sel.refs, kernel, &p);
        error_report(&model, &crater, &p).unwrap().mean_abs_error
    };
    let wendland = crater_mae(Kernel::wendland31(1.0 / (16.0 * diag)).unwrap());
    let (best_alpha, gaussian) = [0.0115, 0.0125, 0.0135, 0.015, 0.0165]
        .into_iter()
        .map(|a| (a, crater_mae(Kernel::gaussian(a).unwrap())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    notes.push(format!(
        "crater rim, M=900: wendland31 MAE {wendland:.4} vs best gaussian MAE {gaussian:.4} (alpha {best_alpha})"
    ));
    let secs = started.elapsed().as_secs_f64();
    notes.push(format!("{secs:.1} s"));
    v.report(
        6,
        "desk-scale terrain accuracy",
        meets(&literal) && wendland < gaussian && secs < 300.0,
        &notes,
    );
    vec![literal, wide]
}

fn criterion_7(v: &mut Verdict, fits: &[SmoothFit]) {
    let mut produced = true;
    let mut notes = Vec::new();
    for f in fits {
        let abs = f.report.per_point.as_ref().unwrap();
        let prof = boundary_profile(&f.cloud, abs, 0.1);
        let finite =
            prof.boundary_mean_abs_error.is_finite() && prof.interior_mean_abs_error.is_finite();
        produced &= finite && prof.boundary_points > 0 && prof.interior_points > 0;
        notes.push(format!(
            "{}: outer 10% MAE {:.4e} over {} points, interior MAE {:.4e} over {} points, boundary higher: {}",
            f.label,
            prof.boundary_mean_abs_error,
            prof.boundary_points,
            prof.interior_mean_abs_error,
            prof.interior_points,
            prof.boundary_mean_abs_error > prof.interior_mean_abs_error
        ));
    }
    v.report(7, "boundary error profile measured", produced, &notes);
}

fn criterion_8(v: &mut Verdict, dir: &Path) {
    let input = write_cloud(dir, "c8.xyz", Surface::CraterRim, 20_000, 8);
    let config = fit_config(&input, KernelFamily::Gaussian, 0.01, 20);
    let mut csv = Vec::new();
    let result = cmd_bench_blocks(&config, &[4, 40, 100, 400], Some(100), &mut csv);
    let text = String::from_utf8(csv).unwrap();
    let mut notes: Vec<String> = text.lines().map(str::to_string).collect();
    let pass = match &result {
        Ok(rows) => {
            let reference = rows.iter().find(|r| r.block_size == 100).unwrap();
            let small = rows.iter().find(|r| r.block_size == 4).unwrap();
            notes.push(format!(
                "M_B = 4 relative time {:.3} (overhead trend {}observed)",
                small.relative_time,
                if small.relative_time > 1.0 {
                    ""
                } else {
                    "not "
                }
            ));
            reference.relative_time == 1.0 && rows.len() == 4
        }
        Err(e) => {
            notes.push(format!("bench failed: {e}"));
            false
        }
    };
    v.report(8, "block-size benchmark harness", pass, &notes);
}

fn criterion_9(v: &mut Verdict, dir: &Path) {
    let input = write_cloud(dir, "c9.xyz", Surface::CraterRim, 20_000, 9);
    let run = |tag: &str| {
        let model_path = dir.join(format!("model-{tag}.txt"));
        let map_path = dir.join(format!("map-{tag}.csv"));
        let config = FitConfig {
            select: SelectSpec::Random,
            seed: 77,
            block_size: Some(37),
            output: Some(model_path.clone()),
            verbose: true,
            ..fit_config(&input, KernelFamily::Wendland31, 1.0 / 150.0, 15)
        };
        let mut stdout = Vec::new();
        cmd_fit(&config, &mut stdout).unwrap();
        cmd_error_map(&model_path, &input, &XyzFormat::default(), &map_path).unwrap();
        (
            fs::read(model_path).unwrap(),
            fs::read(map_path).unwrap(),
            stdout,
        )
    };
    let (a, b) = (run("a"), run("b"));
    v.report(
        9,
        "sequential runs are byte-identical",
        a == b,
        &[format!(
            "model file {} B identical: {}, error map {} B identical: {}, report identical: {}",
            a.0.len(),
            a.0 == b.0,
            a.1.len(),
            a.1 == b.1,
            a.2 == b.2
        )],
    );
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = Verdict { failed: Vec::new() };
    criterion_1(&mut v);
    criterion_2(&mut v, dir.path());
    criterion_3(&mut v);
    criterion_4(&mut v);
    criterion_5(&mut v);
    let fits = criterion_6(&mut v);
    criterion_7(&mut v, &fits);
    criterion_8(&mut v, dir.path());
    criterion_9(&mut v, dir.path());
    if v.failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {:?}", v.failed);
        std::process::exit(1);
    }
}
