//! Axis-aligned box arithmetic.
//!
//! Boxes are stored in corner form `(x_min, y_min, x_max, y_max)` with
//! continuous coordinates. Center/size values are derived on demand.

use serde::Serialize;

use crate::error::{Error, Result};

/// Axis-aligned rectangle in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl BBox {
    /// Builds a box, rejecting negative extents and non-finite coordinates.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Builds a box from its center and size. `w` and `h` must be nonnegative.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn center_x(&self) -> f64 {
        (self.x_min + self.x_max) / 2.0
    }
    pub fn center_y(&self) -> f64 {
        (self.y_min + self.y_max) / 2.0
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Half the length of the diagonal.
    pub fn half_diagonal(&self) -> f64 {
        self.width().hypot(self.height()) / 2.0
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    /// Multiplies every coordinate by `s` (> 0).
    pub fn scaled(&self, s: f64) -> BBox {
        BBox {
            x_min: self.x_min * s,
            y_min: self.y_min * s,
            x_max: self.x_max * s,
            y_max: self.y_max * s,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// Intersection over union. Zero when the boxes are disjoint or both have zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Tightest box enclosing every member.
pub fn merge_boxes<'a, I>(members: I) -> Result<BBox>
where
    I: IntoIterator<Item = &'a BBox>,
{
    let mut iter = members.into_iter();
    let first = *iter.next().ok_or(Error::EmptyMerge)?;
    Ok(iter.fold(first, |acc, b| BBox {
        x_min: acc.x_min.min(b.x_min),
        y_min: acc.y_min.min(b.y_min),
        x_max: acc.x_max.max(b.x_max),
        y_max: acc.y_max.max(b.y_max),
    }))
}

/// One minus the distance between the two centers, normalized by the
/// half-diagonal of `final_box`. Unclamped: negative when the centers are
/// farther apart than that half-diagonal.
pub fn center_closeness(final_box: &BBox, merged: &BBox) -> Result<f64> {
    let half_diag = final_box.half_diagonal();
    if half_diag <= 0.0 {
        return Err(Error::DegenerateBox);
    }
    let dist = (final_box.center_x() - merged.center_x())
        .hypot(final_box.center_y() - merged.center_y());
    Ok(1.0 - dist / half_diag)
}
