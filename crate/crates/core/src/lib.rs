//! Least-squares radial basis function approximation of large scattered 2.5D
//! datasets.
//!
//! A cloud of `N` samples `(x_i, y_i, h_i)` is approximated by
//! `f(p) = sum_j c_j phi(|p - center_j|)` over `M << N` reference points.
//! The weights solve the normal equations `A^T A c = A^T h`, where the
//! `N x M` design matrix `A` is never stored: [`assembly`] builds
//! `B = A^T A` block by block from column panels whose size is chosen to fit
//! a memory budget.
//!
//! ```
//! use rbf_approx::prelude::*;
//!
//! let bbox = Rect::new(0.0, 0.0, 100.0, 100.0).unwrap();
//! let cloud = generate_synthetic(Surface::Smooth, 2_000, &bbox, 0.0, 1).unwrap();
//! let sel = select_reference_points(
//!     &cloud,
//!     100,
//!     SelectionStrategy::UniformGridSubset { rows: 10, cols: 10 },
//! )
//! .unwrap();
//! let kernel = Kernel::wendland31(1.0 / 60.0).unwrap();
//! let plan = plan_blocks(cloud.len(), 100, 1 << 26, F64_BYTES, None, 1).unwrap();
//! let system = assemble_normal_system(&cloud, &sel.refs, &kernel, &plan, None).unwrap();
//! let weights = solve_normal(&system, &default_lambda_schedule(&system)).unwrap();
//! let model = FitModel::new(kernel, sel.refs, weights).unwrap();
//! let report = error_report(&model, &cloud, &plan).unwrap();
//! assert!(report.mean_rel_error.unwrap() < 0.02);
//! ```

pub mod assembly;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod ingest;
pub mod model;
pub mod solver;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::assembly::{
        assemble_instrumented, assemble_naive, assemble_normal_system, build_panel,
        dense_design_matrix_bytes, plan_blocks, AssemblyStats, BlockPlan, NormalSystem, Panel,
        Progress, F64_BYTES,
    };
    pub use crate::error::{Error, Result};
    pub use crate::evaluate::{
        error_report, eval_grid, eval_model, export_error_map, load_model, save_model, ErrorReport,
    };
    pub use crate::ingest::{
        generate_synthetic, load_xyz, select_reference_points, write_xyz, Delimiter,
        SelectionStrategy, Surface, XyzFormat,
    };
    pub use crate::model::{
        Kernel, KernelFamily, Point2, PointCloud, Rect, ReferenceSet, SamplePoint, Support,
    };
    pub use crate::solver::{
        default_lambda_schedule, optimality_residual, solve_normal, FitModel, Weights,
    };
}
