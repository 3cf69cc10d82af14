//! Evaluation of fitted models, error statistics and the text formats for
//! models, error maps and grids.

use std::io::{BufRead, Write};

use crate::assembly::{apply_design, BlockPlan};
use crate::error::{Error, Result};
use crate::model::{Kernel, KernelFamily, Point2, PointCloud, Rect, ReferenceSet};
use crate::solver::{FitModel, Weights};

/// Header of the error map CSV.
pub const ERROR_MAP_HEADER: &str = "x,y,h,f,abs_error";
/// Header of the grid CSV.
pub const GRID_HEADER: &str = "x,y,f";

/// `sum_j c_j phi(|p - center_j|)`. Centers whose kernel vanishes at `p`
/// contribute nothing, so a point outside every compact support gives 0.
pub fn eval_model(model: &FitModel, p: &Point2) -> f64 {
    let mut f = 0.0;
    for (center, &c) in model.centers().iter().zip(model.coefficients()) {
        let phi = model.kernel.eval_between(p, center);
        if phi != 0.0 {
            f += c * phi;
        }
    }
    f
}

/// Values of the model at the cells of a regular raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub bbox: Rect,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, row 0 at `y_min`.
    pub values: Vec<f64>,
}

impl Grid {
    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        cell_center(&self.bbox, self.rows, self.cols, row, col)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Writes `x,y,f` rows in row-major order.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "{GRID_HEADER}")?;
        for row in 0..self.rows {
            for col in 0..self.cols {
                let p = self.cell_center(row, col);
                writeln!(sink, "{},{},{}", p.x, p.y, self.get(row, col))?;
            }
        }
        sink.flush()?;
        Ok(())
    }
}

fn cell_center(bbox: &Rect, rows: usize, cols: usize, row: usize, col: usize) -> Point2 {
    Point2 {
        x: bbox.x_min + (col as f64 + 0.5) * bbox.width() / cols as f64,
        y: bbox.y_min + (row as f64 + 0.5) * bbox.height() / rows as f64,
    }
}

pub fn eval_grid(model: &FitModel, bbox: &Rect, rows: usize, cols: usize) -> Result<Grid> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(
            "grid",
            format!("need at least one row and column, got {rows}x{cols}"),
        ));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            values.push(eval_model(model, &cell_center(bbox, rows, cols, row, col)));
        }
    }
    Ok(Grid {
        bbox: *bbox,
        rows,
        cols,
        values,
    })
}

/// Error statistics of a fit over its sample points, with `e_i = f(x_i) - h_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub count: usize,
    /// `mean |e_i|`.
    pub mean_abs_error: f64,
    /// Population standard deviation of `|e_i|`.
    pub error_deviation: f64,
    /// Population standard deviation of the signed `e_i`.
    pub signed_error_deviation: f64,
    /// `mean |e_i| / |h_i|` as a plain fraction (never a percentage), over
    /// the points with `|h_i| >= 1e-9 max |h|`. `None` when no point qualifies.
    pub mean_rel_error: Option<f64>,
    /// Points left out of the relative mean for near-zero values.
    pub rel_excluded: usize,
    pub max_abs_error: f64,
    pub per_point: Option<Vec<f64>>,
}

/// Relative threshold below which a value is too close to zero for the
/// relative error.
pub const REL_VALUE_FLOOR: f64 = 1e-9;

impl ErrorReport {
    /// Statistics of `fitted` against `values`, both in point order.
    pub fn from_predictions(fitted: &[f64], values: &[f64], keep_per_point: bool) -> Self {
        assert_eq!(fitted.len(), values.len());
        let n = values.len();
        let nf = n as f64;
        let errors: Vec<f64> = fitted.iter().zip(values).map(|(f, h)| f - h).collect();
        let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();

        let mean_abs_error = abs.iter().sum::<f64>() / nf;
        let max_abs_error = abs.iter().fold(0.0, |m: f64, &a| m.max(a));
        let error_deviation = (abs
            .iter()
            .map(|a| (a - mean_abs_error).powi(2))
            .sum::<f64>()
            / nf)
            .sqrt();
        let mean_signed = errors.iter().sum::<f64>() / nf;
        let signed_error_deviation = (errors
            .iter()
            .map(|e| (e - mean_signed).powi(2))
            .sum::<f64>()
            / nf)
            .sqrt();

        let floor = REL_VALUE_FLOOR * values.iter().fold(0.0, |m: f64, h| m.max(h.abs()));
        let mut rel_sum = 0.0;
        let mut rel_count = 0usize;
        for (a, h) in abs.iter().zip(values) {
            if h.abs() >= floor && *h != 0.0 {
                rel_sum += a / h.abs();
                rel_count += 1;
            }
        }
        ErrorReport {
            count: n,
            mean_abs_error,
            error_deviation,
            signed_error_deviation,
            mean_rel_error: (rel_count > 0).then(|| rel_sum / rel_count as f64),
            rel_excluded: n - rel_count,
            max_abs_error,
            per_point: keep_per_point.then_some(abs),
        }
    }
}

/// Model values at every cloud point, streamed panel by panel.
pub fn predict_cloud(model: &FitModel, cloud: &PointCloud, plan: &BlockPlan) -> Result<Vec<f64>> {
    if plan.n != cloud.len() || plan.m != model.refs.len() {
        return Err(Error::invalid(
            "block plan",
            format!(
                "plan is for N={}, M={} but got N={}, M={}",
                plan.n,
                plan.m,
                cloud.len(),
                model.refs.len()
            ),
        ));
    }
    Ok(apply_design(
        cloud,
        &model.refs,
        &model.kernel,
        model.coefficients(),
        plan,
    ))
}

pub fn error_report(model: &FitModel, cloud: &PointCloud, plan: &BlockPlan) -> Result<ErrorReport> {
    let fitted = predict_cloud(model, cloud, plan)?;
    let values: Vec<f64> = cloud.values().collect();
    Ok(ErrorReport::from_predictions(&fitted, &values, true))
}

/// `sum_i (f(x_i) - h_i)^2`.
pub fn sum_squared_error(model: &FitModel, cloud: &PointCloud, plan: &BlockPlan) -> Result<f64> {
    let fitted = predict_cloud(model, cloud, plan)?;
    Ok(fitted
        .iter()
        .zip(cloud.values())
        .map(|(f, h)| (f - h) * (f - h))
        .sum())
}

/// Mean absolute error near the edges of the cloud versus inside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryProfile {
    /// Width of the margin as a fraction of each bounding-box side.
    pub margin: f64,
    pub boundary_points: usize,
    pub interior_points: usize,
    pub boundary_mean_abs_error: f64,
    pub interior_mean_abs_error: f64,
}

pub fn boundary_profile(cloud: &PointCloud, abs_errors: &[f64], margin: f64) -> BoundaryProfile {
    assert_eq!(cloud.len(), abs_errors.len());
    let ext = cloud.bounds().extent;
    let (mx, my) = (margin * ext.width(), margin * ext.height());
    let (mut bsum, mut bn, mut isum, mut inn) = (0.0, 0usize, 0.0, 0usize);
    for (p, &a) in cloud.points().iter().zip(abs_errors) {
        let q = p.position;
        let near_edge = q.x < ext.x_min + mx
            || q.x > ext.x_max - mx
            || q.y < ext.y_min + my
            || q.y > ext.y_max - my;
        if near_edge {
            bsum += a;
            bn += 1;
        } else {
            isum += a;
            inn += 1;
        }
    }
    let mean = |s: f64, n: usize| if n > 0 { s / n as f64 } else { f64::NAN };
    BoundaryProfile {
        margin,
        boundary_points: bn,
        interior_points: inn,
        boundary_mean_abs_error: mean(bsum, bn),
        interior_mean_abs_error: mean(isum, inn),
    }
}

/// Writes `x,y,h,f,abs_error` for every point, in cloud order.
pub fn export_error_map<W: Write>(model: &FitModel, cloud: &PointCloud, mut sink: W) -> Result<()> {
    writeln!(sink, "{ERROR_MAP_HEADER}")?;
    for p in cloud.points() {
        let f = eval_model(model, &p.position);
        writeln!(
            sink,
            "{},{},{},{},{}",
            p.position.x,
            p.position.y,
            p.value,
            f,
            (f - p.value).abs()
        )?;
    }
    sink.flush()?;
    Ok(())
}

/// One parsed error map row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorMapRow {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub f: f64,
    pub abs_error: f64,
}

pub fn read_error_map<R: BufRead>(reader: R) -> Result<Vec<ErrorMapRow>> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if idx == 0 {
            if line.trim() != ERROR_MAP_HEADER {
                return Err(Error::parse(
                    line_no,
                    format!("expected header `{ERROR_MAP_HEADER}`"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_fields::<5>(&line, ',', line_no)?;
        rows.push(ErrorMapRow {
            x: v[0],
            y: v[1],
            h: v[2],
            f: v[3],
            abs_error: v[4],
        });
    }
    Ok(rows)
}

fn parse_fields<const K: usize>(line: &str, sep: char, line_no: usize) -> Result<[f64; K]> {
    let fields: Vec<&str> = if sep == ' ' {
        line.split_whitespace().collect()
    } else {
        line.split(sep).map(str::trim).collect()
    };
    if fields.len() != K {
        return Err(Error::parse(
            line_no,
            format!("expected {K} fields, found {}", fields.len()),
        ));
    }
    let mut out = [0.0; K];
    for (slot, field) in out.iter_mut().zip(&fields) {
        *slot = field
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::parse(line_no, format!("`{field}` is not a finite number")))?;
    }
    Ok(out)
}

/// Writes `kernel=<family> alpha=<value> M=<count>` followed by one
/// `x y c` line per center.
pub fn save_model<W: Write>(model: &FitModel, mut sink: W) -> Result<()> {
    writeln!(
        sink,
        "kernel={} alpha={} M={}",
        model.kernel.family(),
        model.kernel.alpha(),
        model.refs.len()
    )?;
    for (p, c) in model.centers().iter().zip(model.coefficients()) {
        writeln!(sink, "{} {} {}", p.x, p.y, c)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn load_model<R: BufRead>(reader: R) -> Result<FitModel> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::parse(1, "empty model file")),
    };
    let (mut family, mut alpha, mut m) = (None, None, None);
    for token in header.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("expected key=value, found `{token}`")))?;
        match key {
            "kernel" => {
                family = Some(
                    value
                        .parse::<KernelFamily>()
                        .map_err(|e| Error::parse(1, e.to_string()))?,
                )
            }
            "alpha" => {
                alpha = Some(
                    value
                        .parse::<f64>()
                        .map_err(|_| Error::parse(1, format!("bad alpha `{value}`")))?,
                )
            }
            "M" => {
                m = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::parse(1, format!("bad center count `{value}`")))?,
                )
            }
            other => return Err(Error::parse(1, format!("unknown header key `{other}`"))),
        }
    }
    let (family, alpha, m) = match (family, alpha, m) {
        (Some(f), Some(a), Some(m)) => (f, a, m),
        _ => return Err(Error::parse(1, "header needs kernel=, alpha= and M=")),
    };
    let kernel = Kernel::new(family, alpha).map_err(|e| Error::parse(1, e.to_string()))?;

    let mut centers = Vec::with_capacity(m);
    let mut coefficients = Vec::with_capacity(m);
    let mut last_line = 1;
    for (idx, line) in lines {
        let line_no = idx + 1;
        last_line = line_no;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if centers.len() == m {
            return Err(Error::parse(
                line_no,
                format!("header declares M={m} but more center lines follow"),
            ));
        }
        let v = parse_fields::<3>(&line, ' ', line_no)?;
        centers.push(Point2 { x: v[0], y: v[1] });
        coefficients.push(v[2]);
    }
    if centers.len() != m {
        return Err(Error::parse(
            last_line,
            format!(
                "header declares M={m} but {} center lines were found",
                centers.len()
            ),
        ));
    }
    let refs = ReferenceSet::new(centers).map_err(|e| Error::parse(last_line, e.to_string()))?;
    FitModel::new(kernel, refs, Weights::from_coefficients(coefficients))
}
