//! Domain geometry, boundary sampling and the bilinear interpolation layer.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use crate::error::{PicnError, Result};
use crate::grid::{Field, GridSpec};

pub type RadiusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DomainShape {
    Rectangle {
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    /// Star-shaped domain `rho <= radius(theta)` around the origin.
    Polar {
        name: String,
        radius: RadiusFn,
        bbox: [f64; 4],
    },
}

impl fmt::Debug for DomainShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Rectangle {
                x_min,
                x_max,
                y_min,
                y_max,
            } => write!(f, "Rectangle([{x_min}, {x_max}] x [{y_min}, {y_max}])"),
            Self::Polar { name, bbox, .. } => write!(f, "Polar({name}, bbox = {bbox:?})"),
        }
    }
}

const CURVE_SAMPLES: usize = 8192;

impl DomainShape {
    pub fn rectangle(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self::Rectangle {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    /// Builds a polar domain; the bounding box is taken from a dense sweep
    /// of the curve and padded slightly so it contains the whole boundary.
    pub fn polar(name: impl Into<String>, radius: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let mut bbox = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        let mut r_max: f64 = 0.0;
        for k in 0..CURVE_SAMPLES {
            let theta = TAU * k as f64 / CURVE_SAMPLES as f64;
            let r = radius(theta);
            if !(r > 0.0) || !r.is_finite() {
                return Err(PicnError::InvalidArgument(format!(
                    "polar radius must be positive, got {r} at theta = {theta}"
                )));
            }
            r_max = r_max.max(r);
            let (x, y) = (r * theta.cos(), r * theta.sin());
            bbox[0] = bbox[0].min(x);
            bbox[1] = bbox[1].max(x);
            bbox[2] = bbox[2].min(y);
            bbox[3] = bbox[3].max(y);
        }
        let pad = 1e-3 * r_max;
        let bbox = [bbox[0] - pad, bbox[1] + pad, bbox[2] - pad, bbox[3] + pad];
        Ok(Self::Polar {
            name: name.into(),
            radius: Arc::new(radius),
            bbox,
        })
    }

    /// `[x_min, x_max, y_min, y_max]`.
    pub fn bounding_box(&self) -> [f64; 4] {
        match self {
            Self::Rectangle {
                x_min,
                x_max,
                y_min,
                y_max,
            } => [*x_min, *x_max, *y_min, *y_max],
            Self::Polar { bbox, .. } => *bbox,
        }
    }

    pub fn is_polar(&self) -> bool {
        matches!(self, Self::Polar { .. })
    }

    pub fn inside(&self, x: f64, y: f64) -> bool {
        match self {
            Self::Rectangle {
                x_min,
                x_max,
                y_min,
                y_max,
            } => x >= *x_min && x <= *x_max && y >= *y_min && y <= *y_max,
            Self::Polar { radius, .. } => {
                let rho = x.hypot(y);
                if rho == 0.0 {
                    return true;
                }
                rho <= radius(polar_angle(x, y))
            }
        }
    }
}

/// Angle of `(x, y)` in `[0, 2 pi)`.
pub fn polar_angle(x: f64, y: f64) -> f64 {
    let t = y.atan2(x);
    if t < 0.0 {
        t + TAU
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

/// A condition attached to a boundary point for one field channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCondition {
    pub kind: BcKind,
    pub channel: usize,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySample {
    pub x: f64,
    pub y: f64,
    pub normal: [f64; 2],
    pub kind: BcKind,
    pub channel: usize,
    pub target: f64,
}

/// Boundary points with outward normals, before conditions are attached.
pub fn boundary_points(domain: &DomainShape, count: usize) -> Result<Vec<(f64, f64, [f64; 2])>> {
    if count < 1 {
        return Err(PicnError::InvalidArgument("boundary sample count must be at least 1".into()));
    }
    match domain {
        DomainShape::Polar { radius, .. } => {
            const H: f64 = 1e-6;
            Ok((0..count)
                .map(|k| {
                    let theta = TAU * k as f64 / count as f64;
                    let (c, s) = (theta.cos(), theta.sin());
                    let r = radius(theta);
                    let dr = (radius(theta + H) - radius(theta - H)) / (2.0 * H);
                    let (tx, ty) = (dr * c - r * s, dr * s + r * c);
                    // Tangent rotated by -90 degrees; the radial component
                    // is r^2 > 0, so this orientation is always outward.
                    let mut n = [ty, -tx];
                    let norm = n[0].hypot(n[1]);
                    n[0] /= norm;
                    n[1] /= norm;
                    if n[0] * c + n[1] * s < 0.0 {
                        n = [-n[0], -n[1]];
                    }
                    (r * c, r * s, n)
                })
                .collect())
        }
        DomainShape::Rectangle {
            x_min,
            x_max,
            y_min,
            y_max,
        } => {
            let (w, h) = (x_max - x_min, y_max - y_min);
            let lengths = [w, h, w, h];
            let per_edge = apportion(count, &lengths);
            let mut pts = Vec::with_capacity(count);
            for (edge, &n) in per_edge.iter().enumerate() {
                for k in 0..n {
                    let t = (k as f64 + 0.5) / n as f64;
                    let p = match edge {
                        0 => (x_min + t * w, *y_min, [0.0, -1.0]),
                        1 => (*x_max, y_min + t * h, [1.0, 0.0]),
                        2 => (x_max - t * w, *y_max, [0.0, 1.0]),
                        _ => (*x_min, y_max - t * h, [-1.0, 0.0]),
                    };
                    pts.push(p);
                }
            }
            Ok(pts)
        }
    }
}

/// Largest-remainder split of `count` proportional to `weights`.
fn apportion(count: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| count as f64 * w / total).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest = count - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

/// Samples the boundary and attaches conditions via `assign`, which may
/// return several conditions (one per channel) for the same point.
pub fn boundary_samples(
    domain: &DomainShape,
    count: usize,
    assign: &dyn Fn(f64, f64, [f64; 2]) -> Vec<BoundaryCondition>,
) -> Result<Vec<BoundarySample>> {
    let mut out = Vec::new();
    for (x, y, normal) in boundary_points(domain, count)? {
        for bc in assign(x, y, normal) {
            out.push(BoundarySample {
                x,
                y,
                normal,
                kind: bc.kind,
                channel: bc.channel,
                target: bc.target,
            });
        }
    }
    Ok(out)
}

/// Bilinear interpolation weights for one off-grid point.
///
/// Nodes are `(i, j)`, `(i, j1)`, `(i1, j)`, `(i1, j1)` with `i` along `y`;
/// on single-row grids `i1 == i` and the upper weights are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpStencil {
    pub i: usize,
    pub j: usize,
    pub i1: usize,
    pub j1: usize,
    pub w00: f64,
    pub w01: f64,
    pub w10: f64,
    pub w11: f64,
}

impl InterpStencil {
    pub fn taps(&self) -> [((usize, usize), f64); 4] {
        [
            ((self.i, self.j), self.w00),
            ((self.i, self.j1), self.w01),
            ((self.i1, self.j), self.w10),
            ((self.i1, self.j1), self.w11),
        ]
    }
}

const OUTSIDE_TOL: f64 = 1e-9;

/// Cell index and local coordinate. The cell is always a valid one; with
/// `extrapolate` the local coordinate may leave `[0, 1]`.
fn cell(coord: f64, origin: f64, step: f64, n: usize, extrapolate: bool) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let raw = (coord - origin) / step;
    let s = raw.clamp(0.0, (n - 1) as f64);
    let k = (s.floor() as usize).min(n - 2);
    if extrapolate {
        (k, raw - k as f64)
    } else {
        (k, (s - k as f64).clamp(0.0, 1.0))
    }
}

fn build_stencil(grid: &GridSpec, x: f64, y: f64, extrapolate: bool) -> InterpStencil {
    let (j, tx) = cell(x, grid.x_min, grid.dx, grid.nx, extrapolate);
    let (i, ty) = cell(y, grid.y_min, grid.dy, grid.ny, extrapolate);
    let i1 = if grid.ny == 1 { i } else { i + 1 };
    let j1 = if grid.nx == 1 { j } else { j + 1 };
    InterpStencil {
        i,
        j,
        i1,
        j1,
        w00: (1.0 - tx) * (1.0 - ty),
        w01: tx * (1.0 - ty),
        w10: (1.0 - tx) * ty,
        w11: tx * ty,
    }
}

/// Interpolation stencil for a point inside the grid rectangle.
pub fn interp_stencil(grid: &GridSpec, x: f64, y: f64) -> Result<InterpStencil> {
    let y_ok = if grid.ny == 1 {
        (y - grid.y_min).abs() <= OUTSIDE_TOL
    } else {
        y >= grid.y_min - OUTSIDE_TOL && y <= grid.y_max + OUTSIDE_TOL
    };
    if !(x >= grid.x_min - OUTSIDE_TOL && x <= grid.x_max + OUTSIDE_TOL && y_ok) {
        return Err(PicnError::OutsideGrid { x, y });
    }
    Ok(build_stencil(grid, x, y, false))
}

/// Like [`interp_stencil`] but accepts points outside the rectangle and
/// extends the nearest cell's bilinear form linearly to them. Used where
/// derivative fields live on a trimmed grid that does not reach the
/// domain edge.
pub fn interp_stencil_extrapolated(grid: &GridSpec, x: f64, y: f64) -> InterpStencil {
    build_stencil(grid, x, y, true)
}

pub fn interp_apply(field: &Field, st: &InterpStencil) -> Result<f64> {
    let (rows, cols) = field.dim();
    if st.i1 >= rows || st.j1 >= cols {
        return Err(PicnError::Shape(format!(
            "stencil node ({}, {}) outside field {rows}x{cols}",
            st.i1, st.j1
        )));
    }
    Ok(st.taps().iter().map(|&((i, j), w)| w * field[[i, j]]).sum())
}

/// Adjoint of [`interp_apply`]: the four `(node, contribution)` pairs.
pub fn interp_backward(st: &InterpStencil, upstream: f64) -> [((usize, usize), f64); 4] {
    st.taps().map(|(node, w)| (node, upstream * w))
}

/// Accumulates the adjoint of [`interp_apply`] into `grad`.
pub fn interp_scatter(grad: &mut Field, st: &InterpStencil, upstream: f64) {
    for ((i, j), g) in interp_backward(st, upstream) {
        grad[[i, j]] += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn star() -> DomainShape {
        DomainShape::polar("star", |t: f64| 1.0 + (4.0 * t).cos().powi(2)).unwrap()
    }

    #[test]
    fn inside_tests() {
        let s = star();
        assert!(s.inside(0.0, 0.0));
        assert!(!s.inside(2.1, 0.0));
        assert!(s.inside(1.99, 0.0));
        let fish = DomainShape::polar("starfish", |t: f64| 1.0 + 0.5 * (2.5 * t).cos().powi(2)).unwrap();
        assert!(fish.inside(1.4, 0.0));
        let r = DomainShape::rectangle(0.0, 5.0, 0.0, 3.0);
        assert!(r.inside(5.0, 3.0) && !r.inside(5.01, 1.0));
    }

    #[test]
    fn circle_samples_have_radial_normals() {
        let c = DomainShape::polar("circle", |_| 1.0).unwrap();
        let pts = boundary_points(&c, 4).unwrap();
        let expected = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];
        for ((x, y, n), t) in pts.iter().zip(expected) {
            assert!((x - t.cos()).abs() < 1e-12 && (y - t.sin()).abs() < 1e-12);
            assert!((n[0] - t.cos()).abs() < 1e-8 && (n[1] - t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn rectangle_edge_normals() {
        let r = DomainShape::rectangle(0.0, 5.0, 0.0, 3.0);
        let pts = boundary_points(&r, 320).unwrap();
        assert_eq!(pts.len(), 320);
        let left: Vec<_> = pts.iter().filter(|p| p.0 == 0.0).collect();
        assert_eq!(left.len(), 60);
        assert!(left.iter().all(|p| p.2 == [-1.0, 0.0]));
        assert!(pts.iter().all(|p| r.inside(p.0, p.1)));
    }

    #[test]
    fn star_normals_are_orthogonal_to_tangent() {
        let s = star();
        let DomainShape::Polar { radius, .. } = &s else { unreachable!() };
        let pts = boundary_points(&s, 800).unwrap();
        for (k, (x, y, n)) in pts.iter().enumerate() {
            let t = TAU * k as f64 / 800.0;
            let h = 1e-5;
            let p = |t: f64| (radius(t) * t.cos(), radius(t) * t.sin());
            let (a, b) = (p(t + h), p(t - h));
            let tan = [(a.0 - b.0) / (2.0 * h), (a.1 - b.1) / (2.0 * h)];
            let tn = tan[0].hypot(tan[1]);
            assert!((n[0] * tan[0] + n[1] * tan[1]).abs() / tn < 1e-6);
            assert!(n[0] * x + n[1] * y > 0.0);
            assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-10);
            assert!((x.hypot(*y) - radius(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_count_is_an_error() {
        assert!(boundary_points(&star(), 0).is_err());
    }

    #[test]
    fn node_and_cell_center_weights() {
        let g = GridSpec::new(0.0, 4.0, 0.0, 2.0, 5, 3).unwrap();
        let st = interp_stencil(&g, 2.0, 1.0).unwrap();
        assert_eq!((st.i, st.j), (1, 2));
        assert_eq!([st.w00, st.w01, st.w10, st.w11], [1.0, 0.0, 0.0, 0.0]);
        let st = interp_stencil(&g, 2.5, 0.5).unwrap();
        assert!([st.w00, st.w01, st.w10, st.w11].iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let st = interp_stencil(&g, 4.0, 2.0).unwrap();
        assert_eq!((st.i, st.j, st.w11), (1, 3, 1.0));
        assert!(interp_stencil(&g, 4.1, 1.0).is_err());
    }

    #[test]
    fn single_row_grid_stencil() {
        let g = GridSpec::line(0.0, 1.0, 11).unwrap();
        let st = interp_stencil(&g, 0.25, 0.0).unwrap();
        assert_eq!((st.i, st.i1), (0, 0));
        assert!((st.w00 - 0.5).abs() < 1e-12 && (st.w01 - 0.5).abs() < 1e-12);
        assert_eq!(st.w10 + st.w11, 0.0);
    }

    #[test]
    fn constant_field_and_node_backward() {
        let g = GridSpec::new(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let f = g.sample(|_, _| 2.5);
        let st = interp_stencil(&g, 0.41, 0.77).unwrap();
        assert!((interp_apply(&f, &st).unwrap() - 2.5).abs() < 1e-14);
        let node = interp_stencil(&g, 1.0 / 3.0, 2.0 / 3.0).unwrap();
        let mut grad = Field::zeros((4, 4));
        interp_scatter(&mut grad, &node, 1.0);
        assert!((grad[[2, 1]] - 1.0).abs() < 1e-12);
        assert!((grad.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn apply_rejects_small_field() {
        let g = GridSpec::new(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let st = interp_stencil(&g, 0.9, 0.9).unwrap();
        assert!(interp_apply(&Field::zeros((2, 2)), &st).is_err());
    }

    #[test]
    fn apportion_preserves_total() {
        assert_eq!(apportion(636, &[10.0, 6.0, 10.0, 6.0]).iter().sum::<usize>(), 636);
        assert_eq!(apportion(40, &[1.0, 1.0, 1.0, 1.0]), vec![10, 10, 10, 10]);
    }

    #[test]
    fn extrapolated_stencil_is_exact_for_affine_fields() {
        let g = GridSpec::new(0.1, 0.9, 0.2, 1.0, 9, 9).unwrap();
        let f = g.sample(|x, y| 2.0 - 3.0 * x + 0.5 * y);
        for (x, y) in [(0.0, 0.0), (1.0, 0.5), (0.5, 1.1), (0.05, 0.6)] {
            let st = interp_stencil_extrapolated(&g, x, y);
            let v = interp_apply(&f, &st).unwrap();
            assert!((v - (2.0 - 3.0 * x + 0.5 * y)).abs() < 1e-12);
        }
        let inside = interp_stencil_extrapolated(&g, 0.43, 0.71);
        assert_eq!(inside, interp_stencil(&g, 0.43, 0.71).unwrap());
    }
}
