//! Point cloud input: ASCII XYZ files, synthetic terrains and reference point
//! selection.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{Point2, PointCloud, Rect, ReferenceSet, SamplePoint};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Delimiter {
    #[default]
    Whitespace,
    Comma,
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" | "space" | " " => Ok(Delimiter::Whitespace),
            "comma" | "," => Ok(Delimiter::Comma),
            other => Err(Error::invalid(
                "delimiter",
                format!("`{other}` (expected `whitespace` or `comma`)"),
            )),
        }
    }
}

/// Layout of an XYZ text file. Columns are always `x`, `y`, `value`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct XyzFormat {
    pub delimiter: Delimiter,
    pub comment_prefix: char,
}

impl Default for XyzFormat {
    fn default() -> Self {
        XyzFormat {
            delimiter: Delimiter::Whitespace,
            comment_prefix: '#',
        }
    }
}

/// Parses one point per non-blank, non-comment line.
pub fn load_xyz<R: BufRead>(reader: R, format: &XyzFormat) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(format.comment_prefix) {
            continue;
        }
        let fields: Vec<&str> = match format.delimiter {
            Delimiter::Whitespace => trimmed.split_whitespace().collect(),
            Delimiter::Comma => trimmed.split(',').map(str::trim).collect(),
        };
        if fields.len() != 3 {
            return Err(Error::parse(
                line_no,
                format!("expected 3 fields (x y value), found {}", fields.len()),
            ));
        }
        let mut xyz = [0.0; 3];
        for (slot, field) in xyz.iter_mut().zip(&fields) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(line_no, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(line_no, format!("`{field}` is not finite")));
            }
            *slot = v;
        }
        points.push(SamplePoint {
            position: Point2 {
                x: xyz[0],
                y: xyz[1],
            },
            value: xyz[2],
        });
    }
    PointCloud::new(points)
}

/// Writes the cloud in a form `load_xyz` reads back exactly.
pub fn write_xyz<W: Write>(cloud: &PointCloud, mut sink: W, format: &XyzFormat) -> Result<()> {
    let sep = match format.delimiter {
        Delimiter::Whitespace => ' ',
        Delimiter::Comma => ',',
    };
    for p in cloud.points() {
        writeln!(
            sink,
            "{}{sep}{}{sep}{}",
            p.position.x, p.position.y, p.value
        )?;
    }
    sink.flush()?;
    Ok(())
}

/// Analytic test surfaces for synthetic clouds.
///
/// Both are defined over the unit square mapped onto the requested bounding
/// box, so their shape does not depend on the box size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surface {
    /// Franke's four-bump function scaled to terrain-like elevations.
    Smooth,
    /// A volcanic cone whose circular rim drops by [`Surface::RIM_DROP`] into
    /// a bowl-shaped crater.
    CraterRim,
}

impl Surface {
    pub const SMOOTH_BASE: f64 = 100.0;
    pub const SMOOTH_AMPLITUDE: f64 = 50.0;

    pub const CRATER_BASE: f64 = 100.0;
    /// Height of the rim crest above the base.
    pub const CRATER_PEAK: f64 = 60.0;
    /// Crater floor height above the base, reached at the crater center.
    pub const CRATER_FLOOR: f64 = 10.0;
    /// Step between the outer crest and the inner wall at the rim.
    pub const RIM_DROP: f64 = 30.0;
    /// Rim radius as a fraction of the shorter bounding-box side.
    pub const RIM_RADIUS: f64 = 0.25;
    /// Decay length of the outer flank, same units as `RIM_RADIUS`.
    pub const FLANK_LENGTH: f64 = 0.15;

    pub fn name(self) -> &'static str {
        match self {
            Surface::Smooth => "smooth",
            Surface::CraterRim => "crater-rim",
        }
    }

    /// Peak-to-peak scale of the surface's relief.
    pub fn amplitude(self) -> f64 {
        match self {
            Surface::Smooth => Self::SMOOTH_AMPLITUDE,
            Surface::CraterRim => Self::CRATER_PEAK,
        }
    }

    /// Physical rim radius for a given bounding box.
    pub fn rim_radius(bbox: &Rect) -> f64 {
        Self::RIM_RADIUS * crater_scale(bbox)
    }

    pub fn value_at(self, bbox: &Rect, p: &Point2) -> f64 {
        match self {
            Surface::Smooth => {
                let u = unit(p.x, bbox.x_min, bbox.width());
                let v = unit(p.y, bbox.y_min, bbox.height());
                Self::SMOOTH_BASE + Self::SMOOTH_AMPLITUDE * franke(u, v)
            }
            Surface::CraterRim => {
                let rho = p.distance(&bbox.center()) / crater_scale(bbox);
                let r = Self::RIM_RADIUS;
                if rho >= r {
                    Self::CRATER_BASE + Self::CRATER_PEAK * (-(rho - r) / Self::FLANK_LENGTH).exp()
                } else {
                    let wall = Self::CRATER_PEAK - Self::RIM_DROP - Self::CRATER_FLOOR;
                    let s = rho / r;
                    Self::CRATER_BASE + Self::CRATER_FLOOR + wall * s * s
                }
            }
        }
    }
}

impl fmt::Display for Surface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Surface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" | "franke" => Ok(Surface::Smooth),
            "crater-rim" | "crater" => Ok(Surface::CraterRim),
            other => Err(Error::UnknownSurface(other.to_string())),
        }
    }
}

fn unit(x: f64, min: f64, extent: f64) -> f64 {
    if extent > 0.0 {
        (x - min) / extent
    } else {
        0.5
    }
}

fn crater_scale(bbox: &Rect) -> f64 {
    let s = bbox.width().min(bbox.height());
    if s > 0.0 {
        s
    } else {
        bbox.width().max(bbox.height()).max(1.0)
    }
}

/// Franke's test function on the unit square.
pub fn franke(x: f64, y: f64) -> f64 {
    let t1 = 0.75 * (-((9.0 * x - 2.0).powi(2) + (9.0 * y - 2.0).powi(2)) / 4.0).exp();
    let t2 = 0.75 * (-(9.0 * x + 1.0).powi(2) / 49.0 - (9.0 * y + 1.0) / 10.0).exp();
    let t3 = 0.5 * (-((9.0 * x - 7.0).powi(2) + (9.0 * y - 3.0).powi(2)) / 4.0).exp();
    let t4 = -0.2 * (-(9.0 * x - 4.0).powi(2) - (9.0 * y - 7.0).powi(2)).exp();
    t1 + t2 + t3 + t4
}

/// Samples `n` uniformly random points in `bbox` with values from `surface`
/// plus zero-mean Gaussian noise. Identical arguments give identical clouds.
pub fn generate_synthetic(
    surface: Surface,
    n: usize,
    bbox: &Rect,
    noise_sigma: f64,
    seed: u64,
) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::NoPoints);
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::invalid(
            "noise",
            format!("sigma must be finite and nonnegative, got {noise_sigma}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise =
        Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid("noise", e.to_string()))?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let position = Point2 {
            x: bbox.x_min + bbox.width() * rng.random::<f64>(),
            y: bbox.y_min + bbox.height() * rng.random::<f64>(),
        };
        let mut value = surface.value_at(bbox, &position);
        if noise_sigma > 0.0 {
            value += noise.sample(&mut rng);
        }
        points.push(SamplePoint { position, value });
    }
    PointCloud::new(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionStrategy {
    /// One center per cell of a `rows x cols` grid over the cloud's extent:
    /// the data point nearest the cell center.
    UniformGridSubset { rows: usize, cols: usize },
    /// `M` distinct points drawn without replacement.
    UniformRandom { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub refs: ReferenceSet,
    /// Index into the cloud of each center, `None` where an empty grid cell
    /// fell back to its own center.
    pub source_indices: Vec<Option<usize>>,
}

impl Selection {
    pub fn empty_cells(&self) -> usize {
        self.source_indices.iter().filter(|s| s.is_none()).count()
    }
}

pub fn select_reference_points(
    cloud: &PointCloud,
    m: usize,
    strategy: SelectionStrategy,
) -> Result<Selection> {
    if m == 0 {
        return Err(Error::invalid("center count", "M must be at least 1"));
    }
    if m > cloud.len() {
        warn!(
            "{m} centers requested for only {} points; the system is underdetermined",
            cloud.len()
        );
    }
    let picks = match strategy {
        SelectionStrategy::UniformGridSubset { rows, cols } => grid_subset(cloud, m, rows, cols)?,
        SelectionStrategy::UniformRandom { seed } => random_subset(cloud, m, seed)?,
    };

    let mut seen = HashSet::with_capacity(m);
    let mut centers = Vec::with_capacity(m);
    let mut source_indices = Vec::with_capacity(m);
    for (position, source) in picks {
        if seen.insert(position.key()) {
            centers.push(position);
            source_indices.push(source);
        }
    }
    if centers.len() < m {
        return Err(Error::CenterShortfall {
            requested: m,
            available: centers.len(),
        });
    }
    let empty = source_indices.iter().filter(|s| s.is_none()).count();
    if empty > 0 {
        warn!("{empty} empty grid cells; their centers were placed at the cell centers");
    }
    Ok(Selection {
        refs: ReferenceSet::new(centers)?,
        source_indices,
    })
}

fn cell_index(x: f64, min: f64, extent: f64, cells: usize) -> usize {
    if extent <= 0.0 {
        return 0;
    }
    let c = ((x - min) / extent * cells as f64).floor();
    (c.max(0.0) as usize).min(cells - 1)
}

fn grid_subset(
    cloud: &PointCloud,
    m: usize,
    rows: usize,
    cols: usize,
) -> Result<Vec<(Point2, Option<usize>)>> {
    if rows == 0 || cols == 0 || rows.checked_mul(cols) != Some(m) {
        return Err(Error::invalid(
            "selection grid",
            format!("{rows}x{cols} grid does not give {m} centers"),
        ));
    }
    let ext = cloud.bounds().extent;
    let (cw, ch) = (ext.width() / cols as f64, ext.height() / rows as f64);
    let cell_center = |cell: usize| Point2 {
        x: ext.x_min + (cell % cols) as f64 * cw + 0.5 * cw,
        y: ext.y_min + (cell / cols) as f64 * ch + 0.5 * ch,
    };

    // (distance, index) of the best point seen so far in each cell.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; m];
    for (i, p) in cloud.points().iter().enumerate() {
        let col = cell_index(p.position.x, ext.x_min, ext.width(), cols);
        let row = cell_index(p.position.y, ext.y_min, ext.height(), rows);
        let cell = row * cols + col;
        let d = p.position.distance(&cell_center(cell));
        match best[cell] {
            Some((bd, _)) if bd <= d => {}
            _ => best[cell] = Some((d, i)),
        }
    }
    Ok(best
        .iter()
        .enumerate()
        .map(|(cell, b)| match b {
            Some((_, i)) => (cloud.points()[*i].position, Some(*i)),
            None => (cell_center(cell), None),
        })
        .collect())
}

fn random_subset(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<(Point2, Option<usize>)>> {
    let n = cloud.len();
    if m > n {
        return Err(Error::invalid(
            "center count",
            format!("cannot draw {m} centers from {n} points without replacement"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    // Keep drawing past duplicate positions until m distinct ones are found.
    let mut seen = HashSet::with_capacity(m);
    let mut picks = Vec::with_capacity(m);
    for i in order {
        let position = cloud.points()[i].position;
        if seen.insert(position.key()) {
            picks.push((position, Some(i)));
            if picks.len() == m {
                break;
            }
        }
    }
    Ok(picks)
}
