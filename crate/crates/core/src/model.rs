//! Domain types and radial basis kernels.
//!
//! A fit is a weighted sum of kernels `phi(|x - center|)` placed at a set of
//! reference points. Positions are planar; each sample carries one scalar
//! value (an elevation over x, y).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::invalid(
                "point",
                format!("coordinates must be finite, got ({x}, {y})"),
            ));
        }
        Ok(Point2 { x, y })
    }

    #[inline]
    pub fn distance(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Point2 {
        Point2 {
            x: self.x + dx,
            y: self.y + dy,
        }
    }

    /// Hashable identity of the position; `-0.0` and `0.0` compare equal.
    pub(crate) fn key(&self) -> (u64, u64) {
        ((self.x + 0.0).to_bits(), (self.y + 0.0).to_bits())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub position: Point2,
    pub value: f64,
}

impl SamplePoint {
    pub fn new(x: f64, y: f64, value: f64) -> Result<Self> {
        let position = Point2::new(x, y)?;
        if !value.is_finite() {
            return Err(Error::invalid(
                "sample",
                format!("value must be finite, got {value}"),
            ));
        }
        Ok(SamplePoint { position, value })
    }
}

/// Axis-aligned rectangle in the xy plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite || x_min > x_max || y_min > y_max {
            return Err(Error::invalid(
                "bounding box",
                format!("need finite min <= max, got [{x_min}, {x_max}] x [{y_min}, {y_max}]"),
            ));
        }
        Ok(Rect {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point2 {
        Point2 {
            x: 0.5 * (self.x_min + self.x_max),
            y: 0.5 * (self.y_min + self.y_max),
        }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }
}

impl FromStr for Rect {
    type Err = Error;

    /// Parses `xmin,ymin,xmax,ymax`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::invalid(
                "bounding box",
                format!("expected `xmin,ymin,xmax,ymax`, got `{s}`"),
            ));
        }
        let mut v = [0.0; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::invalid("bounding box", format!("`{part}` is not a number")))?;
        }
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub extent: Rect,
    pub min_value: f64,
    pub max_value: f64,
}

#[derive(Clone, Debug)]
pub struct PointCloud {
    points: Vec<SamplePoint>,
    bounds: BoundingBox,
}

impl PointCloud {
    pub fn new(points: Vec<SamplePoint>) -> Result<Self> {
        let first = points.first().ok_or(Error::NoPoints)?;
        let mut extent = Rect {
            x_min: first.position.x,
            y_min: first.position.y,
            x_max: first.position.x,
            y_max: first.position.y,
        };
        let (mut min_value, mut max_value) = (first.value, first.value);
        for (i, p) in points.iter().enumerate() {
            if !(p.position.x.is_finite() && p.position.y.is_finite() && p.value.is_finite()) {
                return Err(Error::invalid(
                    "point cloud",
                    format!("point {i} has a non-finite component"),
                ));
            }
            extent.x_min = extent.x_min.min(p.position.x);
            extent.x_max = extent.x_max.max(p.position.x);
            extent.y_min = extent.y_min.min(p.position.y);
            extent.y_max = extent.y_max.max(p.position.y);
            min_value = min_value.min(p.value);
            max_value = max_value.max(p.value);
        }
        Ok(PointCloud {
            points,
            bounds: BoundingBox {
                extent,
                min_value,
                max_value,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }

    pub fn bounds(&self) -> &BoundingBox {
        &self.bounds
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.value)
    }
}

/// The centers the kernels are placed at. Positions are pairwise distinct.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    centers: Vec<Point2>,
}

impl ReferenceSet {
    pub fn new(centers: Vec<Point2>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid("reference set", "needs at least one center"));
        }
        let mut seen = HashSet::with_capacity(centers.len());
        for (j, c) in centers.iter().enumerate() {
            if !(c.x.is_finite() && c.y.is_finite()) {
                return Err(Error::invalid(
                    "reference set",
                    format!("center {j} is not finite"),
                ));
            }
            if !seen.insert(c.key()) {
                return Err(Error::invalid(
                    "reference set",
                    format!(
                        "center {j} at ({}, {}) duplicates an earlier center",
                        c.x, c.y
                    ),
                ));
            }
        }
        Ok(ReferenceSet { centers })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[Point2] {
        &self.centers
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `exp(-(alpha r)^2)`, global support.
    Gaussian,
    /// Wendland's `(1 - alpha r)_+^4 (4 alpha r + 1)`, support radius `1 / alpha`.
    Wendland31,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 2] = [KernelFamily::Gaussian, KernelFamily::Wendland31];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Wendland31 => "wendland31",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "wendland31" => Ok(KernelFamily::Wendland31),
            other => Err(Error::invalid(
                "kernel",
                format!("unknown family `{other}` (expected `gaussian` or `wendland31`)"),
            )),
        }
    }
}

/// Radius beyond which a kernel vanishes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Support {
    Infinite,
    Radius(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    alpha: f64,
    // 1/alpha as rounded; `alpha * radius` can fall just short of 1.
    radius: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::invalid(
                "shape parameter",
                format!("alpha must be positive and finite, got {alpha}"),
            ));
        }
        Ok(Kernel {
            family,
            alpha,
            radius: 1.0 / alpha,
        })
    }

    pub fn gaussian(alpha: f64) -> Result<Self> {
        Kernel::new(KernelFamily::Gaussian, alpha)
    }

    pub fn wendland31(alpha: f64) -> Result<Self> {
        Kernel::new(KernelFamily::Wendland31, alpha)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Evaluates `phi(r)`. Values lie in `[0, 1]` with `phi(0) = 1`.
    ///
    /// Panics if `r` is negative or NaN.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        assert!(r >= 0.0, "kernel radius must be nonnegative, got {r}");
        let q = self.alpha * r;
        match self.family {
            KernelFamily::Gaussian => (-(q * q)).exp(),
            KernelFamily::Wendland31 => {
                // Explicit branch so the tail is an exact zero.
                if q >= 1.0 || r >= self.radius {
                    0.0
                } else {
                    let t = 1.0 - q;
                    let t2 = t * t;
                    t2 * t2 * (4.0 * q + 1.0)
                }
            }
        }
    }

    #[inline]
    pub fn eval_between(&self, a: &Point2, b: &Point2) -> f64 {
        self.eval(a.distance(b))
    }

    pub fn support_radius(&self) -> Support {
        match self.family {
            KernelFamily::Gaussian => Support::Infinite,
            KernelFamily::Wendland31 => Support::Radius(self.radius),
        }
    }
}
