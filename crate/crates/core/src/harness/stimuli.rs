//! Black-on-white Gestalt stimuli: Kanizsa pac-men, dots along a curve,
//! proximity-grouped squares, and convex/concave region pairs.
//!
//! Shapes are defined analytically and rasterized with 4×4 supersampling,
//! so renders are exact functions of the parameters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRgb;

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Stimulus {
    Kanizsa(KanizsaParams),
    ContinuityDots(ContinuityParams),
    ProximityGrid(ProximityParams),
    ConvexityPair(ConvexityParams),
}

impl Stimulus {
    /// Default parameters for a kind name (`kanizsa`, `continuity-dots`, ...).
    pub fn default_for(kind: &str) -> Result<Stimulus> {
        match kind {
            "kanizsa" => Ok(Stimulus::Kanizsa(Default::default())),
            "continuity-dots" => Ok(Stimulus::ContinuityDots(Default::default())),
            "proximity-grid" => Ok(Stimulus::ProximityGrid(Default::default())),
            "convexity-pair" => Ok(Stimulus::ConvexityPair(Default::default())),
            _ => Err(Error::config(format!("unknown stimulus kind {kind:?}"))),
        }
    }

    pub fn render(&self) -> Result<ImageRgb> {
        match self {
            Stimulus::Kanizsa(p) => kanizsa(p),
            Stimulus::ContinuityDots(p) => continuity_dots(p),
            Stimulus::ProximityGrid(p) => proximity_grid(p),
            Stimulus::ConvexityPair(p) => convexity_pair(p),
        }
    }
}

/// Rasterize an ink predicate over continuous pixel coordinates.
fn raster(width: usize, height: usize, ink: impl Fn(f64, f64) -> bool) -> Result<ImageRgb> {
    let mut gray = Vec::with_capacity(width * height);
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for y in 0..height {
        for x in 0..width {
            let mut covered = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    covered += usize::from(ink(px, py));
                }
            }
            gray.push((1.0 - covered as f64 / n) as f32);
        }
    }
    let mut data = gray.clone();
    data.extend_from_slice(&gray);
    data.extend_from_slice(&gray);
    ImageRgb::from_planar(width, height, data)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Geometry(msg()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KanizsaParams {
    pub size: usize,
    /// Pac-man disk radius in pixels.
    pub radius: f64,
    /// Side of the illusory triangle, vertex to vertex.
    pub side: f64,
    pub aligned: bool,
    /// Mouth rotation applied to every pac-man when not aligned.
    pub rotation_deg: f64,
}

impl Default for KanizsaParams {
    fn default() -> Self {
        KanizsaParams {
            size: 128,
            radius: 16.0,
            side: 72.0,
            aligned: true,
            rotation_deg: 180.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacMan {
    pub center: [f64; 2],
    pub radius: f64,
    /// Direction of the mouth bisector, radians (image coordinates, y down).
    pub mouth_dir: f64,
    pub mouth_half_angle: f64,
}

impl PacMan {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        if dx * dx + dy * dy > self.radius * self.radius {
            return false;
        }
        let off = (dy.atan2(dx) - self.mouth_dir).rem_euclid(2.0 * PI);
        let off = off.min(2.0 * PI - off);
        off > self.mouth_half_angle
    }
}

/// Pac-men at the vertices of an upward equilateral triangle centred on the
/// canvas. Aligned mouths open 60° toward the centroid, so their edges run
/// along the triangle sides.
pub fn kanizsa_geometry(p: &KanizsaParams) -> Result<[PacMan; 3]> {
    check(p.radius > 0.0 && p.side > 0.0 && p.size > 0, || {
        "sizes must be positive".into()
    })?;
    check(2.0 * p.radius < p.side, || {
        format!("radius {} too large for side {}", p.radius, p.side)
    })?;
    let c = p.size as f64 / 2.0;
    let circum = p.side / 3f64.sqrt();
    let rot = if p.aligned {
        0.0
    } else {
        p.rotation_deg.to_radians()
    };
    let men = [-90.0f64, 30.0, 150.0].map(|deg| {
        let t = deg.to_radians();
        PacMan {
            center: [c + circum * t.cos(), c + circum * t.sin()],
            radius: p.radius,
            mouth_dir: t + PI + rot,
            mouth_half_angle: PI / 6.0,
        }
    });
    for m in &men {
        let [x, y] = m.center;
        check(
            x - m.radius >= 0.0
                && y - m.radius >= 0.0
                && x + m.radius <= c * 2.0
                && y + m.radius <= c * 2.0,
            || {
                format!(
                    "pac-man at ({x:.1}, {y:.1}) leaves the {}-pixel canvas",
                    p.size
                )
            },
        )?;
    }
    Ok(men)
}

pub fn kanizsa(p: &KanizsaParams) -> Result<ImageRgb> {
    let men = kanizsa_geometry(p)?;
    raster(p.size, p.size, |x, y| men.iter().any(|m| m.contains(x, y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuityParams {
    pub size: usize,
    pub dot_radius: f64,
    /// Horizontal distance between dot centres.
    pub spacing: f64,
    /// Sine amplitude of the carrier curve, pixels.
    pub amplitude: f64,
    pub periods: f64,
    /// Horizontal margin left free at both ends.
    pub margin: f64,
}

impl Default for ContinuityParams {
    fn default() -> Self {
        ContinuityParams {
            size: 128,
            dot_radius: 2.5,
            spacing: 8.0,
            amplitude: 28.0,
            periods: 1.0,
            margin: 8.0,
        }
    }
}

/// Dot centres along `y = size/2 + A·sin(2π·periods·x/size)`.
pub fn continuity_centers(p: &ContinuityParams) -> Result<Vec<[f64; 2]>> {
    let s = p.size as f64;
    check(p.dot_radius > 0.0 && p.spacing > 2.0 * p.dot_radius, || {
        format!("spacing {} must exceed the dot diameter", p.spacing)
    })?;
    check(p.margin >= p.dot_radius && 2.0 * p.margin < s, || {
        format!("margin {} out of range", p.margin)
    })?;
    check(p.amplitude.abs() + p.dot_radius <= s / 2.0, || {
        format!("amplitude {} leaves the canvas", p.amplitude)
    })?;
    let mut out = Vec::new();
    let mut x = p.margin;
    while x <= s - p.margin + 1e-9 {
        out.push([
            x,
            s / 2.0 + p.amplitude * (2.0 * PI * p.periods * x / s).sin(),
        ]);
        x += p.spacing;
    }
    Ok(out)
}

pub fn continuity_dots(p: &ContinuityParams) -> Result<ImageRgb> {
    let centers = continuity_centers(p)?;
    let r2 = p.dot_radius * p.dot_radius;
    raster(p.size, p.size, |x, y| {
        centers
            .iter()
            .any(|c| (x - c[0]).powi(2) + (y - c[1]).powi(2) <= r2)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProximityParams {
    pub size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Square side length.
    pub element: f64,
    pub element_gap: f64,
    /// Gap between the left and right column groups.
    pub group_gap: f64,
}

impl Default for ProximityParams {
    fn default() -> Self {
        ProximityParams {
            size: 128,
            rows: 4,
            cols: 6,
            element: 10.0,
            element_gap: 6.0,
            group_gap: 24.0,
        }
    }
}

/// Top-left corners of every square, row-major. Columns split into a left
/// group of `cols / 2` and a right group of the rest.
pub fn proximity_corners(p: &ProximityParams) -> Result<Vec<[f64; 2]>> {
    check(p.rows > 0 && p.cols > 1 && p.element > 0.0, || {
        "grid needs rows, two columns and a size".into()
    })?;
    check(p.element_gap >= 0.0 && p.group_gap >= 0.0, || {
        "gaps must be nonnegative".into()
    })?;
    let s = p.size as f64;
    let split = p.cols / 2;
    let width = p.cols as f64 * p.element + (p.cols - 2) as f64 * p.element_gap + p.group_gap;
    let height = p.rows as f64 * p.element + (p.rows - 1) as f64 * p.element_gap;
    check(width <= s && height <= s, || {
        format!(
            "grid of {width:.1}×{height:.1} does not fit the {}-pixel canvas",
            p.size
        )
    })?;
    let (x0, y0) = ((s - width) / 2.0, (s - height) / 2.0);
    let mut out = Vec::with_capacity(p.rows * p.cols);
    for r in 0..p.rows {
        for c in 0..p.cols {
            let mut x = x0 + c as f64 * (p.element + p.element_gap);
            if c >= split {
                x += p.group_gap - p.element_gap;
            }
            out.push([x, y0 + r as f64 * (p.element + p.element_gap)]);
        }
    }
    Ok(out)
}

pub fn proximity_grid(p: &ProximityParams) -> Result<ImageRgb> {
    let corners = proximity_corners(p)?;
    let e = p.element;
    raster(p.size, p.size, |x, y| {
        corners
            .iter()
            .any(|c| x >= c[0] && x < c[0] + e && y >= c[1] && y < c[1] + e)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvexityParams {
    pub size: usize,
    /// Boundary bulge as a fraction of the inner width, in `(0, 0.5)`.
    pub bulge: f64,
    /// Width of the surrounding frame, pixels; 0 for none.
    pub margin: usize,
    /// Frame colour: black when true.
    pub margin_black: bool,
}

impl Default for ConvexityParams {
    fn default() -> Self {
        ConvexityParams {
            size: 128,
            bulge: 0.2,
            margin: 0,
            margin_black: true,
        }
    }
}

/// The black region (left of a boundary bulging rightward) is convex; the
/// white region on the right is its concave complement.
pub fn convexity_pair(p: &ConvexityParams) -> Result<ImageRgb> {
    check(p.bulge > 0.0 && p.bulge < 0.5, || {
        format!("bulge {} outside (0, 0.5)", p.bulge)
    })?;
    check(4 * p.margin < p.size, || {
        format!("margin {} too wide for size {}", p.margin, p.size)
    })?;
    let (m, s) = (p.margin as f64, p.size as f64);
    let inner = s - 2.0 * m;
    raster(p.size, p.size, |x, y| {
        if x < m || y < m || x >= s - m || y >= s - m {
            return p.margin_black;
        }
        x < convexity_boundary(p, y, m, inner)
    })
}

fn convexity_boundary(p: &ConvexityParams, y: f64, m: f64, inner: f64) -> f64 {
    let base = m + inner * (0.5 - p.bulge / 2.0);
    base + p.bulge * inner * (PI * (y - m) / inner).sin()
}
