//! Structured-grid fields, stencils, interpolation and domain masks.
//!
//! Everything downstream (elliptic solves, CGO construction, transport)
//! works on node-centered fields over a uniform rectangle. Row-major
//! ordering: node (i, j) sits at (x0 + i*dx, y0 + j*dy) and is stored at
//! index j*nx + i.

use num_complex::Complex64;
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Discretization geometry of the bounding rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self> {
        if nx < 5 || ny < 5 {
            return Err(Error::GridTooSmall { nx, ny });
        }
        if !(dx > 0.0) || !(dy > 0.0) {
            return Err(Error::Dimension(format!(
                "spacings must be positive, got dx = {dx}, dy = {dy}"
            )));
        }
        Ok(GridSpec { nx, ny, x0, y0, dx, dy })
    }

    /// Unit square [0,1]^2 with n nodes per side.
    pub fn unit_square(n: usize) -> Result<Self> {
        let h = 1.0 / (n as f64 - 1.0);
        GridSpec::new(n, n, 0.0, 0.0, h, h)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    #[inline]
    pub fn pos(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x(i), self.y(j))
    }

    pub fn width(&self) -> f64 {
        (self.nx - 1) as f64 * self.dx
    }

    pub fn height(&self) -> f64 {
        (self.ny - 1) as f64 * self.dy
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x0 + 0.5 * self.width(), self.y0 + 0.5 * self.height())
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    /// True if p lies in the closed grid rectangle.
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x0
            && p.0 <= self.x0 + self.width()
            && p.1 >= self.y0
            && p.1 <= self.y0 + self.height()
    }
}

/// Value types a grid field can carry.
pub trait FieldValue:
    Copy
    + Default
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<f64, Output = Self>
{
    fn is_finite_value(&self) -> bool;
    fn magnitude(&self) -> f64;
}

impl FieldValue for f64 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl FieldValue for Complex64 {
    fn is_finite_value(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// A grid-sampled function, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: GridSpec,
    values: Vec<T>,
}

pub type ScalarField = Field<f64>;
pub type ComplexField = Field<Complex64>;

impl<T: FieldValue> Field<T> {
    pub fn new(grid: GridSpec, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "value count {} does not match grid {} x {}",
                values.len(),
                grid.nx,
                grid.ny
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite_value()) {
            let (i, j) = grid.node(k);
            return Err(Error::Domain(format!("non-finite value at node ({i}, {j})")));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: GridSpec, value: T) -> Self {
        Field {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> T) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Field { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    pub fn map<U: FieldValue>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.values.iter().map(|v| v.magnitude()).fold(0.0, f64::max)
    }

    /// 5-point Laplacian on interior nodes; the one-node rim is left at zero
    /// and is not to be trusted by callers.
    pub fn laplacian(&self) -> Result<Field<T>> {
        let g = self.grid;
        let (ddx, ddy) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
        let mut out = vec![T::default(); g.len()];
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let c = self.values[g.idx(i, j)];
                let lx = (self.values[g.idx(i - 1, j)] + self.values[g.idx(i + 1, j)]
                    - c * 2.0)
                    * ddx;
                let ly = (self.values[g.idx(i, j - 1)] + self.values[g.idx(i, j + 1)]
                    - c * 2.0)
                    * ddy;
                out[g.idx(i, j)] = lx + ly;
            }
        }
        Ok(Field { grid: g, values: out })
    }

    /// Centered second-order gradient on interior nodes; rim left at zero.
    pub fn gradient(&self) -> Result<(Field<T>, Field<T>)> {
        let g = self.grid;
        let (hx, hy) = (0.5 / g.dx, 0.5 / g.dy);
        let mut gx = vec![T::default(); g.len()];
        let mut gy = vec![T::default(); g.len()];
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                gx[g.idx(i, j)] =
                    (self.values[g.idx(i + 1, j)] - self.values[g.idx(i - 1, j)]) * hx;
                gy[g.idx(i, j)] =
                    (self.values[g.idx(i, j + 1)] - self.values[g.idx(i, j - 1)]) * hy;
            }
        }
        Ok((
            Field { grid: g, values: gx },
            Field { grid: g, values: gy },
        ))
    }

    /// Bilinear interpolation at an arbitrary point of the grid rectangle.
    /// Reproduces nodal values at nodes and is exact on bilinear functions.
    pub fn sample_bilinear(&self, p: (f64, f64)) -> Result<T> {
        let g = self.grid;
        if !g.contains(p) {
            return Err(Error::OutOfRange(p.0, p.1));
        }
        Ok(self.sample_bilinear_unchecked(p))
    }

    /// Same as [`sample_bilinear`](Self::sample_bilinear) but clamps to the
    /// rectangle instead of erroring; used on hot paths where the caller has
    /// already bounds-checked.
    #[inline]
    pub fn sample_bilinear_unchecked(&self, p: (f64, f64)) -> T {
        let g = self.grid;
        let fx = ((p.0 - g.x0) / g.dx).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((p.1 - g.y0) / g.dy).clamp(0.0, (g.ny - 1) as f64);
        let i = (fx as usize).min(g.nx - 2);
        let j = (fy as usize).min(g.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let v00 = self.values[g.idx(i, j)];
        let v10 = self.values[g.idx(i + 1, j)];
        let v01 = self.values[g.idx(i, j + 1)];
        let v11 = self.values[g.idx(i + 1, j + 1)];
        v00 * ((1.0 - tx) * (1.0 - ty))
            + v10 * (tx * (1.0 - ty))
            + v01 * ((1.0 - tx) * ty)
            + v11 * (tx * ty)
    }

    /// Tensor-product cubic Lagrange interpolation over a centered 4x4
    /// stencil (clamped near the rim). Exact on bicubics; the crossing
    /// kinks it leaves between cells are O(h^3), so second differences of
    /// the interpolant stay accurate, unlike the bilinear sampler.
    pub fn sample_bicubic_unchecked(&self, p: (f64, f64)) -> T {
        let g = self.grid;
        if g.nx < 4 || g.ny < 4 {
            return self.sample_bilinear_unchecked(p);
        }
        let fx = ((p.0 - g.x0) / g.dx).clamp(0.0, (g.nx - 1) as f64);
        let fy = ((p.1 - g.y0) / g.dy).clamp(0.0, (g.ny - 1) as f64);
        let bx = ((fx as usize).min(g.nx - 2)).saturating_sub(1).min(g.nx - 4);
        let by = ((fy as usize).min(g.ny - 2)).saturating_sub(1).min(g.ny - 4);
        let wx = lagrange4(fx - bx as f64);
        let wy = lagrange4(fy - by as f64);
        let mut acc: Option<T> = None;
        for (b, &wyb) in wy.iter().enumerate() {
            for (a, &wxa) in wx.iter().enumerate() {
                let term = self.values[g.idx(bx + a, by + b)] * (wxa * wyb);
                acc = Some(match acc {
                    None => term,
                    Some(s) => s + term,
                });
            }
        }
        acc.expect("4x4 stencil is nonempty")
    }
}

/// Cubic Lagrange weights for nodes {0, 1, 2, 3} at coordinate u in [0, 3].
#[inline]
fn lagrange4(u: f64) -> [f64; 4] {
    [
        -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0,
        u * (u - 2.0) * (u - 3.0) / 2.0,
        -u * (u - 1.0) * (u - 3.0) / 2.0,
        u * (u - 1.0) * (u - 2.0) / 6.0,
    ]
}

impl ScalarField {
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_complex(&self) -> ComplexField {
        self.map(|v| Complex64::new(v, 0.0))
    }
}

/// A grid-sampled 2-vector function.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        if x.grid() != y.grid() {
            return Err(Error::Dimension("vector components on different grids".into()));
        }
        Ok(VectorField { x, y })
    }

    pub fn constant(grid: GridSpec, v: (f64, f64)) -> Self {
        VectorField {
            x: ScalarField::constant(grid, v.0),
            y: ScalarField::constant(grid, v.1),
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let mut vx = Vec::with_capacity(grid.len());
        let mut vy = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (a, b) = f(grid.x(i), grid.y(j));
                vx.push(a);
                vy.push(b);
            }
        }
        VectorField {
            x: Field { grid, values: vx },
            y: Field { grid, values: vy },
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.x.grid()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x.get(i, j), self.y.get(i, j))
    }

    #[inline]
    pub fn sample_bilinear_unchecked(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.x.sample_bilinear_unchecked(p),
            self.y.sample_bilinear_unchecked(p),
        )
    }

    #[inline]
    pub fn sample_bicubic_unchecked(&self, p: (f64, f64)) -> (f64, f64) {
        (
            self.x.sample_bicubic_unchecked(p),
            self.y.sample_bicubic_unchecked(p),
        )
    }

    pub fn max_magnitude(&self) -> f64 {
        self.x
            .values()
            .iter()
            .zip(self.y.values())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// Reconstruction-domain geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskShape {
    Rectangle,
    Disk { center: (f64, f64), radius: f64 },
}

/// The reconstruction domain X: node membership, the canonical
/// counter-clockwise boundary traversal, and outward normal estimates.
///
/// Disk masks snap the boundary to the nearest grid nodes inside the disk;
/// normals are the analytic disk normals at the snapped nodes. The
/// `uniformly_convex` flag records whether the shape admits a uniform
/// tangent-ball radius (true for disks, false for rectangles).
#[derive(Debug, Clone)]
pub struct DomainMask {
    grid: GridSpec,
    shape: MaskShape,
    inside: Vec<bool>,
    boundary_flag: Vec<bool>,
    boundary: Vec<usize>,
    normals: Vec<[f64; 2]>,
    params: Vec<f64>,
    period: f64,
    pub uniformly_convex: bool,
}

impl DomainMask {
    /// Full grid rectangle; boundary lies on the outermost node rows/columns.
    pub fn rectangle(grid: GridSpec) -> Self {
        let n = grid.len();
        let inside = vec![true; n];
        let mut boundary_flag = vec![false; n];
        let mut boundary = Vec::new();
        let mut normals = Vec::new();
        let (nx, ny) = (grid.nx, grid.ny);
        let push = |i: usize, j: usize, n0: f64, n1: f64, boundary: &mut Vec<usize>, normals: &mut Vec<[f64; 2]>| {
            boundary.push(grid.idx(i, j));
            let len = n0.hypot(n1);
            normals.push([n0 / len, n1 / len]);
        };
        // CCW from the bottom-left corner.
        for i in 0..nx {
            let nx0 = if i == 0 { -1.0 } else { 0.0 } + if i == nx - 1 { 1.0 } else { 0.0 };
            push(i, 0, nx0, -1.0, &mut boundary, &mut normals);
        }
        for j in 1..ny {
            let ny0 = if j == ny - 1 { 1.0 } else { 0.0 };
            push(nx - 1, j, 1.0, ny0, &mut boundary, &mut normals);
        }
        for i in (0..nx - 1).rev() {
            let nx0 = if i == 0 { -1.0 } else { 0.0 };
            push(i, ny - 1, nx0, 1.0, &mut boundary, &mut normals);
        }
        for j in (1..ny - 1).rev() {
            push(0, j, -1.0, 0.0, &mut boundary, &mut normals);
        }
        for &k in &boundary {
            boundary_flag[k] = true;
        }
        let (w, h) = (grid.width(), grid.height());
        let period = 2.0 * (w + h);
        let params = boundary
            .iter()
            .map(|&k| {
                let (i, j) = grid.node(k);
                Self::rect_param(&grid, grid.pos(i, j))
            })
            .collect();
        let _ = period;
        DomainMask {
            grid,
            shape: MaskShape::Rectangle,
            inside,
            boundary_flag,
            boundary,
            normals,
            params,
            period: 2.0 * (w + h),
            uniformly_convex: false,
        }
    }

    /// Disk inscribed in the grid rectangle, boundary snapped to nodes.
    pub fn disk(grid: GridSpec, center: (f64, f64), radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Geometry("disk radius must be positive".into()));
        }
        let eps = 1e-12 * radius;
        if center.0 - radius <= grid.x0 - eps
            || center.0 + radius >= grid.x0 + grid.width() + eps
            || center.1 - radius <= grid.y0 - eps
            || center.1 + radius >= grid.y0 + grid.height() + eps
        {
            return Err(Error::Geometry(
                "disk must fit strictly inside the grid rectangle".into(),
            ));
        }
        let n = grid.len();
        let mut inside = vec![false; n];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.pos(i, j);
                if (x - center.0).hypot(y - center.1) <= radius {
                    inside[grid.idx(i, j)] = true;
                }
            }
        }
        // Every inside node must have at least one inside 4-neighbor.
        let has_inside_neighbor = |i: usize, j: usize| {
            (i > 0 && inside[grid.idx(i - 1, j)])
                || (i + 1 < grid.nx && inside[grid.idx(i + 1, j)])
                || (j > 0 && inside[grid.idx(i, j - 1)])
                || (j + 1 < grid.ny && inside[grid.idx(i, j + 1)])
        };
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if inside[grid.idx(i, j)] && !has_inside_neighbor(i, j) {
                    return Err(Error::Geometry(format!(
                        "disk too small for the grid: isolated inside node at ({i}, {j})"
                    )));
                }
            }
        }
        let mut boundary_flag = vec![false; n];
        let mut items: Vec<(f64, usize)> = Vec::new();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                if !inside[k] {
                    continue;
                }
                let outer = (i == 0 || !inside[grid.idx(i - 1, j)])
                    || (i + 1 >= grid.nx || !inside[grid.idx(i + 1, j)])
                    || (j == 0 || !inside[grid.idx(i, j - 1)])
                    || (j + 1 >= grid.ny || !inside[grid.idx(i, j + 1)]);
                if outer {
                    boundary_flag[k] = true;
                    let (x, y) = grid.pos(i, j);
                    let mut th = (y - center.1).atan2(x - center.0);
                    if th < 0.0 {
                        th += std::f64::consts::TAU;
                    }
                    items.push((th, k));
                }
            }
        }
        if items.len() < 4 {
            return Err(Error::Geometry("disk boundary has fewer than 4 nodes".into()));
        }
        items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let boundary: Vec<usize> = items.iter().map(|&(_, k)| k).collect();
        let params: Vec<f64> = items.iter().map(|&(t, _)| t).collect();
        let normals = boundary
            .iter()
            .map(|&k| {
                let (i, j) = grid.node(k);
                let (x, y) = grid.pos(i, j);
                let d = (x - center.0).hypot(y - center.1).max(1e-300);
                [(x - center.0) / d, (y - center.1) / d]
            })
            .collect();
        Ok(DomainMask {
            grid,
            shape: MaskShape::Disk { center, radius },
            inside,
            boundary_flag,
            boundary,
            normals,
            params,
            period: std::f64::consts::TAU,
            uniformly_convex: true,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn shape(&self) -> MaskShape {
        self.shape
    }

    #[inline]
    pub fn is_inside(&self, i: usize, j: usize) -> bool {
        self.inside[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        self.boundary_flag[self.grid.idx(i, j)]
    }

    /// Inside and not on the snapped boundary. All four neighbors of an
    /// interior node are inside, so centered stencils are valid there.
    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        let k = self.grid.idx(i, j);
        self.inside[k] && !self.boundary_flag[k]
    }

    pub fn inside_flags(&self) -> &[bool] {
        &self.inside
    }

    pub fn interior_flags(&self) -> Vec<bool> {
        self.inside
            .iter()
            .zip(&self.boundary_flag)
            .map(|(&a, &b)| a && !b)
            .collect()
    }

    /// Boundary node indices in canonical counter-clockwise order.
    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn boundary_normals(&self) -> &[[f64; 2]] {
        &self.normals
    }

    /// Perimeter parameter of each boundary node (arclength for rectangles,
    /// polar angle for disks), matching the traversal order.
    pub fn boundary_params(&self) -> &[f64] {
        &self.params
    }

    pub fn boundary_positions(&self) -> Vec<(f64, f64)> {
        self.boundary
            .iter()
            .map(|&k| {
                let (i, j) = self.grid.node(k);
                self.grid.pos(i, j)
            })
            .collect()
    }

    /// True if the continuous domain (rectangle or disk) contains p.
    pub fn contains_point(&self, p: (f64, f64)) -> bool {
        match self.shape {
            MaskShape::Rectangle => self.grid.contains(p),
            MaskShape::Disk { center, radius } => {
                (p.0 - center.0).hypot(p.1 - center.1) <= radius
            }
        }
    }

    /// True if p lies in a grid cell whose four corners are all inside
    /// nodes. For rectangles this coincides with [`contains_point`]
    /// (Self::contains_point); for disks it is the gridded region whose
    /// boundary polyline passes through the snapped boundary nodes — the
    /// places where boundary data actually lives. Characteristic traces
    /// stop on this region so exit values never have to be extrapolated
    /// off the node lattice.
    pub fn contains_point_grid(&self, p: (f64, f64)) -> bool {
        let g = &self.grid;
        if !g.contains(p) {
            return false;
        }
        let i = (((p.0 - g.x0) / g.dx) as usize).min(g.nx - 2);
        let j = (((p.1 - g.y0) / g.dy) as usize).min(g.ny - 2);
        self.inside[g.idx(i, j)]
            && self.inside[g.idx(i + 1, j)]
            && self.inside[g.idx(i, j + 1)]
            && self.inside[g.idx(i + 1, j + 1)]
    }

    fn rect_param(grid: &GridSpec, p: (f64, f64)) -> f64 {
        let (w, h) = (grid.width(), grid.height());
        let x = (p.0 - grid.x0).clamp(0.0, w);
        let y = (p.1 - grid.y0).clamp(0.0, h);
        // Distances to the four edges decide which one p is (closest to).
        let d_bottom = y;
        let d_right = w - x;
        let d_top = h - y;
        let d_left = x;
        let m = d_bottom.min(d_right).min(d_top).min(d_left);
        if m == d_bottom {
            x
        } else if m == d_right {
            w + y
        } else if m == d_top {
            w + h + (w - x)
        } else {
            2.0 * w + h + (h - y)
        }
    }

    /// Perimeter parameter of a point on (or near) the boundary.
    pub fn boundary_param_of(&self, p: (f64, f64)) -> f64 {
        match self.shape {
            MaskShape::Rectangle => Self::rect_param(&self.grid, p),
            MaskShape::Disk { center, .. } => {
                let mut th = (p.1 - center.1).atan2(p.0 - center.0);
                if th < 0.0 {
                    th += std::f64::consts::TAU;
                }
                th
            }
        }
    }

    pub fn boundary_period(&self) -> f64 {
        self.period
    }
}

/// Values associated with the boundary nodes of a mask, in traversal order.
#[derive(Debug, Clone)]
pub struct BoundaryValues<T = f64> {
    pub values: Vec<T>,
}

impl<T: FieldValue> BoundaryValues<T> {
    pub fn new(values: Vec<T>) -> Self {
        BoundaryValues { values }
    }

    pub fn from_fn(mask: &DomainMask, mut f: impl FnMut(f64, f64) -> T) -> Self {
        BoundaryValues {
            values: mask
                .boundary_positions()
                .into_iter()
                .map(|(x, y)| f(x, y))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in boundary-traversal order (aligned with `boundary_nodes`).
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Linear interpolation along the boundary traversal at the perimeter
    /// parameter of p (periodic in the parameter).
    pub fn interp_at(&self, mask: &DomainMask, p: (f64, f64)) -> T {
        let params = mask.boundary_params();
        debug_assert_eq!(params.len(), self.values.len());
        let period = mask.boundary_period();
        let s = mask.boundary_param_of(p);
        let n = params.len();
        // params are sorted ascending; find the bracketing pair.
        let hi = params.partition_point(|&q| q <= s);
        let (i0, i1, s0, mut s1) = if hi == 0 || hi == n {
            // wrap-around segment between the last and first node
            (n - 1, 0, params[n - 1], params[0] + period)
        } else {
            (hi - 1, hi, params[hi - 1], params[hi])
        };
        let mut sv = s;
        if sv < s0 {
            sv += period;
        }
        if s1 <= s0 {
            s1 = s0 + period;
        }
        let t = ((sv - s0) / (s1 - s0)).clamp(0.0, 1.0);
        self.values[i0] * (1.0 - t) + self.values[i1] * t
    }
}

impl BoundaryValues<f64> {
    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn to_complex(&self) -> BoundaryValues<Complex64> {
        BoundaryValues {
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }
}

/// Extract the values of a field at the mask's boundary nodes.
pub fn boundary_trace<T: FieldValue>(
    f: &Field<T>,
    mask: &DomainMask,
) -> Result<BoundaryValues<T>> {
    if f.grid() != mask.grid() {
        return Err(Error::Dimension("field and mask grids differ".into()));
    }
    Ok(BoundaryValues {
        values: mask.boundary_nodes().iter().map(|&k| f.values()[k]).collect(),
    })
}

/// Shrink a validity set by one stencil rim: a node stays valid only if it
/// and its four neighbors were valid.
pub fn erode(valid: &[bool], grid: &GridSpec) -> Vec<bool> {
    let mut out = vec![false; grid.len()];
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            let k = grid.idx(i, j);
            out[k] = valid[k]
                && valid[grid.idx(i - 1, j)]
                && valid[grid.idx(i + 1, j)]
                && valid[grid.idx(i, j - 1)]
                && valid[grid.idx(i, j + 1)];
        }
    }
    out
}

/// Fill values at invalid nodes from the nearest valid node (multi-source
/// BFS in grid metric). Used to extend stencil outputs across the rim so
/// interpolation near the boundary stays defined.
pub fn fill_nearest<T: FieldValue>(field: &mut Field<T>, valid: &[bool]) {
    let grid = *field.grid();
    let mut dist = vec![usize::MAX; grid.len()];
    let mut queue = VecDeque::new();
    for k in 0..grid.len() {
        if valid[k] {
            dist[k] = 0;
            queue.push_back(k);
        }
    }
    if queue.is_empty() {
        return;
    }
    while let Some(k) = queue.pop_front() {
        let (i, j) = grid.node(k);
        let v = field.values()[k];
        let mut visit = |ni: usize, nj: usize, field: &mut Field<T>| {
            let nk = grid.idx(ni, nj);
            if dist[nk] == usize::MAX {
                dist[nk] = dist[k] + 1;
                field.values_mut()[nk] = v;
                queue.push_back(nk);
            }
        };
        if i > 0 {
            visit(i - 1, j, field);
        }
        if i + 1 < grid.nx {
            visit(i + 1, j, field);
        }
        if j > 0 {
            visit(i, j - 1, field);
        }
        if j + 1 < grid.ny {
            visit(i, j + 1, field);
        }
    }
}
