//! Block-partitioned assembly of the least-squares normal equations.
//!
//! The design matrix `A` (`N x M`, entry `phi(|x_i - center_j|)`) is never
//! held in memory. Its columns are grouped into panels of `M_B` centers; for
//! every panel pair `(k, l)` with `l >= k` the block `A_k^T A_l` of the Gram
//! matrix `B = A^T A` is formed and mirrored into the lower triangle. The
//! right-hand side `d = A^T h` is accumulated once per outer panel.
//!
//! Working storage is one outer panel, one inner panel and one `M_B x M_B`
//! block per concurrent worker, which is what [`plan_blocks`] budgets for:
//! `workers * M_B * (M_B + 2N) * prec < ram_budget`.
//!
//! Every entry of `B` and `d` is summed over the points in index order,
//! starting from zero, so the result does not depend on the block size or on
//! the worker count.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Kernel, PointCloud, ReferenceSet};

/// Bytes per scalar in double precision.
pub const F64_BYTES: usize = 8;

/// Largest `N * M` that [`assemble_naive`] will materialize.
pub const NAIVE_ENTRY_CAP: usize = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockPlan {
    pub n: usize,
    pub m: usize,
    /// Panel width `M_B`.
    pub block_size: usize,
    pub num_panels: usize,
    pub last_panel_width: usize,
    pub prec: usize,
    pub ram_budget: u64,
    /// Panel pairs processed concurrently.
    pub workers: usize,
}

impl BlockPlan {
    /// Column range of panel `k` (zero-based).
    pub fn panel_range(&self, k: usize) -> Range<usize> {
        assert!(k < self.num_panels, "panel {k} out of {}", self.num_panels);
        let start = k * self.block_size;
        start..(start + self.block_size).min(self.m)
    }

    pub fn panel_width(&self, k: usize) -> usize {
        self.panel_range(k).len()
    }

    /// Number of block products over the upper triangle.
    pub fn block_pairs(&self) -> usize {
        self.num_panels * (self.num_panels + 1) / 2
    }

    /// Working-set bytes of the panels and blocks: the left side of the
    /// budget inequality.
    pub fn working_set_bytes(&self) -> u128 {
        working_set_bytes(self.n, self.block_size, self.prec, self.workers)
    }

    /// Bytes of the dense `M x M` result.
    pub fn gram_bytes(&self) -> u128 {
        (self.m as u128) * (self.m as u128) * self.prec as u128
    }

    pub fn is_sequential(&self) -> bool {
        self.workers <= 1
    }

    /// The same plan with a different worker count. The budget check is not
    /// repeated; use [`plan_blocks`] for a validated plan.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }
}

fn working_set_bytes(n: usize, block_size: usize, prec: usize, workers: usize) -> u128 {
    let mb = block_size as u128;
    workers as u128 * mb * (mb + 2 * n as u128) * prec as u128
}

/// Chooses the panel width.
///
/// With `requested` set, that width is validated against the memory budget
/// and returned; a ragged final panel is allowed. Otherwise the largest
/// `M_B <= M` that satisfies the budget is returned.
pub fn plan_blocks(
    n: usize,
    m: usize,
    ram_budget: u64,
    prec: usize,
    requested: Option<usize>,
    workers: usize,
) -> Result<BlockPlan> {
    if n == 0 || m == 0 {
        return Err(Error::invalid(
            "block plan",
            format!("need N, M >= 1, got N={n}, M={m}"),
        ));
    }
    if ram_budget == 0 || prec == 0 || workers == 0 {
        return Err(Error::invalid(
            "block plan",
            "ram budget, precision and worker count must be positive",
        ));
    }
    let fits = |mb: usize| working_set_bytes(n, mb, prec, workers) < ram_budget as u128;
    if !fits(1) {
        return Err(Error::RamBudgetTooSmall {
            n,
            block_size: 1,
            needed: working_set_bytes(n, 1, prec, workers),
            budget: ram_budget,
        });
    }

    let block_size = match requested {
        Some(mb) => {
            if mb == 0 || mb > m {
                return Err(Error::invalid(
                    "block size",
                    format!("M_B must lie in 1..={m}, got {mb}"),
                ));
            }
            if !fits(mb) {
                return Err(Error::RamBudgetTooSmall {
                    n,
                    block_size: mb,
                    needed: working_set_bytes(n, mb, prec, workers),
                    budget: ram_budget,
                });
            }
            mb
        }
        None => {
            // Positive root of mb^2 + 2N mb = budget / (workers prec), then
            // corrected with the exact integer test.
            let nf = n as f64;
            let c = ram_budget as f64 / (workers as f64 * prec as f64);
            let root = (nf * nf + c).sqrt() - nf;
            let mut mb = (root.floor().max(1.0) as usize).min(m);
            while mb > 1 && !fits(mb) {
                mb -= 1;
            }
            while mb < m && fits(mb + 1) {
                mb += 1;
            }
            mb
        }
    };

    let num_panels = m.div_ceil(block_size);
    Ok(BlockPlan {
        n,
        m,
        block_size,
        num_panels,
        last_panel_width: m - (num_panels - 1) * block_size,
        prec,
        ram_budget,
        workers,
    })
}

/// Bytes needed to store the full `N x M` design matrix.
pub fn dense_design_matrix_bytes(n: u64, m: u64, prec: u64) -> Result<u64> {
    n.checked_mul(m)
        .and_then(|e| e.checked_mul(prec))
        .ok_or_else(|| Error::Overflow(format!("{n} x {m} x {prec}")))
}

/// A column slab of the design matrix, stored row-major (`N x width`).
#[derive(Clone, Debug)]
pub struct Panel {
    pub index: usize,
    /// Index of the first center in this panel.
    pub start: usize,
    pub width: usize,
    entries: Vec<f64>,
}

impl Panel {
    pub fn rows(&self) -> usize {
        self.entries.len().checked_div(self.width).unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.width + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.width..(i + 1) * self.width]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Builds panel `k` (zero-based) of the design matrix.
pub fn build_panel(
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
    plan: &BlockPlan,
    k: usize,
) -> Panel {
    check_dims(cloud, refs, plan);
    let mut panel = Panel {
        index: k,
        start: 0,
        width: 0,
        entries: Vec::new(),
    };
    fill_panel(
        &mut panel,
        cloud,
        refs,
        kernel,
        plan,
        k,
        !plan.is_sequential(),
    );
    panel
}

/// Refills `panel` in place, reusing its allocation.
pub(crate) fn fill_panel(
    panel: &mut Panel,
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
    plan: &BlockPlan,
    k: usize,
    parallel: bool,
) {
    let range = plan.panel_range(k);
    let width = range.len();
    let centers = &refs.centers()[range.clone()];
    panel.index = k;
    panel.start = range.start;
    panel.width = width;
    panel.entries.clear();
    panel.entries.resize(cloud.len() * width, 0.0);

    let fill_row = |(row, p): (&mut [f64], &crate::model::SamplePoint)| {
        for (e, c) in row.iter_mut().zip(centers) {
            *e = kernel.eval_between(&p.position, c);
        }
    };
    if parallel {
        panel
            .entries
            .par_chunks_mut(width)
            .zip(cloud.points().par_iter())
            .for_each(fill_row);
    } else {
        panel
            .entries
            .chunks_mut(width)
            .zip(cloud.points())
            .for_each(fill_row);
    }
}

fn check_dims(cloud: &PointCloud, refs: &ReferenceSet, plan: &BlockPlan) {
    assert_eq!(plan.n, cloud.len(), "plan was made for a different N");
    assert_eq!(plan.m, refs.len(), "plan was made for a different M");
}

/// Per-center and per-point coverage of the kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Coverage {
    /// `sum_i phi(|x_i - center_j|)` for every center.
    pub column_sums: Vec<f64>,
    /// Points at which every kernel vanishes; they add nothing to `B` or `d`.
    pub uncovered_points: Vec<usize>,
}

impl Coverage {
    pub fn zero_coverage_centers(&self) -> usize {
        self.column_sums.iter().filter(|&&s| s == 0.0).count()
    }
}

/// `B = A^T A` stored dense and full, with `d = A^T h`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalSystem {
    m: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    pub coverage: Coverage,
}

impl NormalSystem {
    /// Builds a system from explicit parts; `gram` is row-major `M x M` and
    /// must be symmetric.
    pub fn from_parts(gram: Vec<f64>, rhs: Vec<f64>) -> Result<Self> {
        let m = rhs.len();
        if m == 0 || gram.len() != m * m {
            return Err(Error::invalid(
                "normal system",
                format!("gram has {} entries for {m} unknowns", gram.len()),
            ));
        }
        for i in 0..m {
            for j in 0..i {
                if gram[i * m + j] != gram[j * m + i] {
                    return Err(Error::invalid(
                        "normal system",
                        format!("gram is not symmetric at ({i}, {j})"),
                    ));
                }
            }
        }
        let column_sums = vec![f64::NAN; m];
        Ok(NormalSystem {
            m,
            gram,
            rhs,
            coverage: Coverage {
                column_sums,
                uncovered_points: Vec::new(),
            },
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.m + j]
    }

    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn trace(&self) -> f64 {
        (0..self.m).map(|i| self.get(i, i)).sum()
    }

    /// Maximum absolute row sum of `B`.
    pub fn gram_inf_norm(&self) -> f64 {
        self.gram
            .chunks(self.m)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
    /// Panel pair of the block just finished.
    pub panels: (usize, usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AssemblyStats {
    pub block_products: usize,
    pub panels_built: usize,
    /// Largest number of scalars held at once by the assembly buffers and
    /// its result.
    pub peak_resident_scalars: usize,
}

#[derive(Default)]
struct Residency {
    current: usize,
    peak: usize,
}

impl Residency {
    fn add(&mut self, scalars: usize) {
        self.current += scalars;
        self.peak = self.peak.max(self.current);
    }

    fn release(&mut self, scalars: usize) {
        self.current -= scalars;
    }
}

pub fn assemble_normal_system(
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
    plan: &BlockPlan,
    progress: Option<&mut dyn FnMut(Progress)>,
) -> Result<NormalSystem> {
    assemble_instrumented(cloud, refs, kernel, plan, progress).map(|(system, _)| system)
}

/// [`assemble_normal_system`] that also reports work and memory counters.
pub fn assemble_instrumented(
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
    plan: &BlockPlan,
    mut progress: Option<&mut dyn FnMut(Progress)>,
) -> Result<(NormalSystem, AssemblyStats)> {
    if plan.n != cloud.len() || plan.m != refs.len() {
        return Err(Error::invalid(
            "block plan",
            format!(
                "plan is for N={}, M={} but got N={}, M={}",
                plan.n,
                plan.m,
                cloud.len(),
                refs.len()
            ),
        ));
    }
    let pool = if plan.is_sequential() {
        None
    } else {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(plan.workers)
                .build()
                .map_err(|e| Error::invalid("worker pool", e.to_string()))?,
        )
    };

    let (n, m) = (plan.n, plan.m);
    let values: Vec<f64> = cloud.values().collect();
    let mut stats = AssemblyStats::default();
    let mut mem = Residency::default();

    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    let mut column_sums = vec![0.0; m];
    let mut covered = vec![false; n];
    mem.add(gram.len() + rhs.len() + column_sums.len() + covered.len() + values.len());

    let total = plan.block_pairs();
    let mut outer = Panel {
        index: 0,
        start: 0,
        width: 0,
        entries: Vec::with_capacity(n * plan.block_size),
    };
    mem.add(n * plan.block_size);
    // Sequential mode reuses one inner panel and one block buffer.
    let mut inner = Panel {
        index: 0,
        start: 0,
        width: 0,
        entries: Vec::new(),
    };
    let mut block = Vec::new();
    if pool.is_none() && plan.num_panels > 1 {
        inner.entries.reserve(n * plan.block_size);
        mem.add(n * plan.block_size);
    }
    if pool.is_none() {
        block.reserve(plan.block_size * plan.block_size);
        mem.add(plan.block_size * plan.block_size);
    }

    for k in 0..plan.num_panels {
        match &pool {
            Some(pool) => {
                pool.install(|| fill_panel(&mut outer, cloud, refs, kernel, plan, k, true))
            }
            None => fill_panel(&mut outer, cloud, refs, kernel, plan, k, false),
        }
        stats.panels_built += 1;
        accumulate_rhs_and_coverage(
            &outer,
            &values,
            &mut rhs[outer.start..outer.start + outer.width],
            &mut column_sums[outer.start..outer.start + outer.width],
            &mut covered,
        );

        match &pool {
            None => {
                for l in k..plan.num_panels {
                    let partner = if l == k {
                        &outer
                    } else {
                        fill_panel(&mut inner, cloud, refs, kernel, plan, l, false);
                        stats.panels_built += 1;
                        &inner
                    };
                    block_product(&outer, partner, &mut block);
                    stats.block_products += 1;
                    scatter_block(&mut gram, m, &outer, partner, &block);
                    if let Some(cb) = progress.as_mut() {
                        cb(Progress {
                            completed: stats.block_products,
                            total,
                            panels: (k, l),
                        });
                    }
                }
            }
            Some(pool) => {
                let partners: Vec<usize> = (k..plan.num_panels).collect();
                for group in partners.chunks(plan.workers) {
                    let scratch: usize = group
                        .iter()
                        .map(|&l| {
                            let w = plan.panel_width(l);
                            let panel = if l == k { 0 } else { n * w };
                            panel + outer.width * w
                        })
                        .sum();
                    mem.add(scratch);
                    let outer_ref = &outer;
                    let results: Vec<(usize, Option<Panel>, Vec<f64>)> = pool.install(|| {
                        group
                            .par_iter()
                            .map(|&l| {
                                let mut block = Vec::new();
                                if l == k {
                                    block_product(outer_ref, outer_ref, &mut block);
                                    (l, None, block)
                                } else {
                                    let mut p = Panel {
                                        index: l,
                                        start: 0,
                                        width: 0,
                                        entries: Vec::new(),
                                    };
                                    fill_panel(&mut p, cloud, refs, kernel, plan, l, false);
                                    block_product(outer_ref, &p, &mut block);
                                    (l, Some(p), block)
                                }
                            })
                            .collect()
                    });
                    for (l, panel, block) in results {
                        let partner = panel.as_ref().unwrap_or(&outer);
                        if panel.is_some() {
                            stats.panels_built += 1;
                        }
                        scatter_block(&mut gram, m, &outer, partner, &block);
                        stats.block_products += 1;
                        if let Some(cb) = progress.as_mut() {
                            cb(Progress {
                                completed: stats.block_products,
                                total,
                                panels: (k, l),
                            });
                        }
                    }
                    mem.release(scratch);
                }
            }
        }
    }
    stats.peak_resident_scalars = mem.peak;

    let uncovered_points = covered
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| (!c).then_some(i))
        .collect();
    Ok((
        NormalSystem {
            m,
            gram,
            rhs,
            coverage: Coverage {
                column_sums,
                uncovered_points,
            },
        },
        stats,
    ))
}

fn accumulate_rhs_and_coverage(
    panel: &Panel,
    values: &[f64],
    rhs: &mut [f64],
    column_sums: &mut [f64],
    covered: &mut [bool],
) {
    for (i, (&h, cov)) in values.iter().zip(covered.iter_mut()).enumerate() {
        let row = panel.row(i);
        for ((d, s), &phi) in rhs.iter_mut().zip(column_sums.iter_mut()).zip(row) {
            if phi != 0.0 {
                *d += phi * h;
                *s += phi;
                *cov = true;
            }
        }
    }
}

/// `out = left^T right`, as rank-one updates over the rows in order. When both
/// panels are the same only the upper triangle of `out` is written.
fn block_product(left: &Panel, right: &Panel, out: &mut Vec<f64>) {
    let (wl, wr) = (left.width, right.width);
    let diagonal = left.index == right.index;
    out.clear();
    out.resize(wl * wr, 0.0);
    for i in 0..left.rows() {
        let lrow = left.row(i);
        let rrow = right.row(i);
        for (a, &pa) in lrow.iter().enumerate() {
            // Skipping a zero term leaves every partial sum bit-identical.
            if pa == 0.0 {
                continue;
            }
            let from = if diagonal { a } else { 0 };
            let orow = &mut out[a * wr + from..(a + 1) * wr];
            for (o, &pb) in orow.iter_mut().zip(&rrow[from..]) {
                *o += pa * pb;
            }
        }
    }
}

fn scatter_block(gram: &mut [f64], m: usize, left: &Panel, right: &Panel, block: &[f64]) {
    let diagonal = left.index == right.index;
    for a in 0..left.width {
        let gi = left.start + a;
        let from = if diagonal { a } else { 0 };
        for b in from..right.width {
            let gj = right.start + b;
            let v = block[a * right.width + b];
            gram[gi * m + gj] = v;
            gram[gj * m + gi] = v;
        }
    }
}

/// `A c` computed panel by panel. Each entry sums `c_j phi_ij` over the
/// centers in index order, the same order as a pointwise model evaluation.
pub fn apply_design(
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
    coefficients: &[f64],
    plan: &BlockPlan,
) -> Vec<f64> {
    check_dims(cloud, refs, plan);
    assert_eq!(coefficients.len(), refs.len());
    let mut out = vec![0.0; cloud.len()];
    let mut panel = Panel {
        index: 0,
        start: 0,
        width: 0,
        entries: Vec::new(),
    };
    for k in 0..plan.num_panels {
        fill_panel(
            &mut panel,
            cloud,
            refs,
            kernel,
            plan,
            k,
            !plan.is_sequential(),
        );
        let coeffs = &coefficients[panel.start..panel.start + panel.width];
        for (i, f) in out.iter_mut().enumerate() {
            for (&phi, &c) in panel.row(i).iter().zip(coeffs) {
                if phi != 0.0 {
                    *f += c * phi;
                }
            }
        }
    }
    out
}

/// `A^T v` computed panel by panel, summing over the points in index order.
pub fn apply_design_transpose(
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
    v: &[f64],
    plan: &BlockPlan,
) -> Vec<f64> {
    check_dims(cloud, refs, plan);
    assert_eq!(v.len(), cloud.len());
    let mut out = vec![0.0; refs.len()];
    let mut panel = Panel {
        index: 0,
        start: 0,
        width: 0,
        entries: Vec::new(),
    };
    for k in 0..plan.num_panels {
        fill_panel(
            &mut panel,
            cloud,
            refs,
            kernel,
            plan,
            k,
            !plan.is_sequential(),
        );
        let slice = &mut out[panel.start..panel.start + panel.width];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &phi) in slice.iter_mut().zip(panel.row(i)) {
                if phi != 0.0 {
                    *o += phi * vi;
                }
            }
        }
    }
    out
}

/// Reference assembly that materializes the whole design matrix. Limited to
/// `N * M <= NAIVE_ENTRY_CAP`.
pub fn assemble_naive(
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
) -> Result<NormalSystem> {
    let (n, m) = (cloud.len(), refs.len());
    let entries = n.saturating_mul(m);
    if entries > NAIVE_ENTRY_CAP {
        return Err(Error::NaiveCapExceeded {
            entries,
            cap: NAIVE_ENTRY_CAP,
        });
    }
    let mut a = vec![0.0; entries];
    for (i, p) in cloud.points().iter().enumerate() {
        for (j, c) in refs.centers().iter().enumerate() {
            a[i * m + j] = kernel.eval_between(&p.position, c);
        }
    }

    let mut gram = vec![0.0; m * m];
    for r in 0..m {
        for c in r..m {
            let mut s = 0.0;
            for i in 0..n {
                s += a[i * m + r] * a[i * m + c];
            }
            gram[r * m + c] = s;
            gram[c * m + r] = s;
        }
    }
    let mut rhs = vec![0.0; m];
    let mut column_sums = vec![0.0; m];
    for (j, (d, cs)) in rhs.iter_mut().zip(column_sums.iter_mut()).enumerate() {
        for (i, p) in cloud.points().iter().enumerate() {
            *d += a[i * m + j] * p.value;
            *cs += a[i * m + j];
        }
    }
    let uncovered_points = (0..n)
        .filter(|&i| a[i * m..(i + 1) * m].iter().all(|&v| v == 0.0))
        .collect();
    Ok(NormalSystem {
        m,
        gram,
        rhs,
        coverage: Coverage {
            column_sums,
            uncovered_points,
        },
    })
}
