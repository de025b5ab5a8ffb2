//! Convex hulls of pixel sets and their rasterization.

use serde::{Deserialize, Serialize};

use crate::error::{GadError, Result};

/// Integer pixel coordinate: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub fn new(x: i64, y: i64) -> Self {
        Point { x, y }
    }
}

/// `(b - a) × (c - a)`; positive when `a → b → c` turns counter-clockwise.
#[inline]
pub fn cross(a: Point, b: Point, c: Point) -> i64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Convex polygon with vertices in counter-clockwise order (x right, y up),
/// no repeated or collinear vertices. One vertex is a point hull, two a
/// segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HullPolygon {
    pub vertices: Vec<Point>,
}

impl HullPolygon {
    /// Twice the shoelace area.
    pub fn doubled_area(&self) -> i64 {
        let v = &self.vertices;
        let n = v.len();
        (0..n)
            .map(|i| {
                let (a, b) = (v[i], v[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<i64>()
            .abs()
    }

    /// Inside-or-boundary test.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        match v.len() {
            0 => false,
            1 => v[0] == p,
            2 => {
                cross(v[0], v[1], p) == 0
                    && p.x >= v[0].x.min(v[1].x)
                    && p.x <= v[0].x.max(v[1].x)
                    && p.y >= v[0].y.min(v[1].y)
                    && p.y <= v[0].y.max(v[1].y)
            }
            n => (0..n).all(|i| cross(v[i], v[(i + 1) % n], p) >= 0),
        }
    }
}

/// Andrew's monotone chain.
pub fn convex_hull(points: &[Point]) -> Result<HullPolygon> {
    if points.is_empty() {
        return Err(GadError::invalid("convex hull of an empty point set"));
    }
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return Ok(HullPolygon { vertices: pts });
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    Ok(HullPolygon { vertices: hull })
}

/// Binary raster of a hull: pixel `(row, col)` is 1 when the point
/// `(x = col, y = row)` lies inside or on the polygon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HullMask {
    pub height: usize,
    pub width: usize,
    pub class: usize,
    /// Row-major, each value 0 or 1.
    pub values: Vec<u8>,
}

impl HullMask {
    pub fn empty(height: usize, width: usize, class: usize) -> Self {
        HullMask {
            height,
            width,
            class,
            values: vec![0; height * width],
        }
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col] == 1
    }
}

pub fn rasterize_hull(
    polygon: &HullPolygon,
    height: usize,
    width: usize,
    class: usize,
) -> HullMask {
    let mut mask = HullMask::empty(height, width, class);
    if polygon.vertices.is_empty() {
        return mask;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
    for v in &polygon.vertices {
        x0 = x0.min(v.x);
        x1 = x1.max(v.x);
        y0 = y0.min(v.y);
        y1 = y1.max(v.y);
    }
    let x0 = x0.max(0);
    let y0 = y0.max(0);
    let x1 = x1.min(width as i64 - 1);
    let y1 = y1.min(height as i64 - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if polygon.contains(Point::new(x, y)) {
                mask.values[y as usize * width + x as usize] = 1;
            }
        }
    }
    mask
}

pub fn hull_area(mask: &HullMask) -> usize {
    mask.area()
}
