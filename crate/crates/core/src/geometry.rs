//! Box geometry shared by the semantic and spatial graph builders.
//!
//! Boxes are stored in center form `(x, y, w, h)`. Corner form is only used
//! internally by [`iou`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default scale of the spatial distance weight.
pub const DEFAULT_LAMBDA: f64 = 5e-4;

/// Axis-aligned box in center form, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = Error;

    fn try_from(r: RawBox) -> Result<Self> {
        BBox::new(r.x, r.y, r.w, r.h)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

impl BBox {
    /// Builds a box from its center and extent. Width and height must be
    /// strictly positive and all coordinates finite.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "box coordinates must be finite, got ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "box extent must be positive, got w={w} h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// `(x0, y0, x1, y1)` corners.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let hw = 0.5 * self.w;
        let hh = 0.5 * self.h;
        (self.x - hw, self.y - hh, self.x + hw, self.y + hh)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Location-free shape overlap: the boxes are aligned at a common corner and
/// their IoU is taken.
pub fn shape_similarity(a: &BBox, b: &BBox) -> f64 {
    let common = a.w.min(b.w) * a.h.min(b.h);
    common / (a.area() + b.area() - common)
}

/// `exp(-lambda * d)`.
pub fn distance_weight(d: f64, lambda: f64) -> f64 {
    debug_assert!(d >= 0.0 && lambda > 0.0);
    (-lambda * d).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, f64::INFINITY, 1.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(100.0, 100.0, 10.0, 10.0)), 0.0);
        let b = bx(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        // touching edges have zero intersection
        assert_eq!(iou(&a, &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn center_distance_examples() {
        let a = bx(0.0, 0.0, 4.0, 4.0);
        assert_eq!(center_distance(&a, &a), 0.0);
        assert_eq!(center_distance(&a, &bx(3.0, 4.0, 1.0, 1.0)), 5.0);
        assert_eq!(
            center_distance(&bx(1.0, 1.0, 2.0, 2.0), &bx(4.0, 5.0, 9.0, 1.0)),
            5.0
        );
    }

    #[test]
    fn shape_similarity_examples() {
        let s = |w1, h1, w2, h2| shape_similarity(&bx(0.0, 0.0, w1, h1), &bx(7.0, -3.0, w2, h2));
        assert_eq!(s(4.0, 6.0, 4.0, 6.0), 1.0);
        assert!((s(10.0, 10.0, 20.0, 20.0) - 0.25).abs() < 1e-12);
        assert!((s(2.0, 8.0, 8.0, 2.0) - 4.0 / 28.0).abs() < 1e-12);
    }

    #[test]
    fn distance_weight_examples() {
        assert_eq!(distance_weight(0.0, DEFAULT_LAMBDA), 1.0);
        assert!((distance_weight(1000.0, DEFAULT_LAMBDA) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((distance_weight(2000.0, DEFAULT_LAMBDA) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn serde_validates() {
        let ok: BBox = serde_json::from_str(r#"{"x":1,"y":2,"w":3,"h":4}"#).unwrap();
        assert_eq!(ok, bx(1.0, 2.0, 3.0, 4.0));
        assert!(serde_json::from_str::<BBox>(r#"{"x":1,"y":2,"w":0,"h":4}"#).is_err());
    }
}
