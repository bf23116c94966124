//! Method of characteristics for the transport equation
//! beta.grad(mu) + gamma mu = 0: trace integral curves of beta to the
//! boundary and evaluate mu(x) = mu0(x_+) e^{+int_0^{t_+} gamma}.
//!
//! Sign note: along phi' = beta the equation gives d/dt mu(phi) =
//! -gamma mu, so mu at the path's start is the boundary value times
//! e^{+int} of gamma over the forward traversal. Some statements of this
//! formula carry a minus sign, which solves beta.grad(mu) = +gamma mu
//! instead; the convention here is fixed by the equation above, which the
//! assembled (beta, gamma) satisfy identically on consistent data.
//!
//! beta is frozen as gridded data and sampled bicubically during tracing
//! (the kinks of a bilinear sampler are node-to-node noise after the
//! downstream second differences); there is no re-evaluation from the
//! datum. Each node's path is independent of every other's.

use crate::error::{Error, Result};
use crate::grid::{fill_nearest, DomainMask, ScalarField, VectorField};
use crate::recon::TransportCoefficients;

/// Outcome of a single characteristic trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStatus {
    Exited,
    MaxTimeExceeded,
    Stalled,
}

/// One integral curve of beta started at `start`.
#[derive(Debug, Clone)]
pub struct CharPath {
    pub start: (f64, f64),
    /// Accepted step endpoints (including start); populated only when the
    /// trace is asked to record, to keep bulk solves lean.
    pub points: Vec<(f64, f64)>,
    pub exit_point: Option<(f64, f64)>,
    pub exit_time: Option<f64>,
    /// Accumulation of gamma along the path up to the exit (or up to where
    /// the trace stopped); integrated inside the RK4 steps, so it carries
    /// the same fourth-order accuracy as the positions.
    pub gamma_integral: f64,
    pub status: PathStatus,
}

fn rk4_step(beta: &VectorField, p: (f64, f64), h: f64) -> (f64, f64) {
    let k1 = beta.sample_bicubic_unchecked(p);
    let k2 = beta.sample_bicubic_unchecked((p.0 + 0.5 * h * k1.0, p.1 + 0.5 * h * k1.1));
    let k3 = beta.sample_bicubic_unchecked((p.0 + 0.5 * h * k2.0, p.1 + 0.5 * h * k2.1));
    let k4 = beta.sample_bicubic_unchecked((p.0 + h * k3.0, p.1 + h * k3.1));
    (
        p.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        p.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// One RK4 step of the augmented system (x' = beta(x), I' = gamma(x)):
/// the new position together with the gamma increment over the step.
fn rk4_step_aug(
    beta: &VectorField,
    gamma: &ScalarField,
    p: (f64, f64),
    h: f64,
) -> ((f64, f64), f64) {
    let k1 = beta.sample_bicubic_unchecked(p);
    let g1 = gamma.sample_bicubic_unchecked(p);
    let p2 = (p.0 + 0.5 * h * k1.0, p.1 + 0.5 * h * k1.1);
    let k2 = beta.sample_bicubic_unchecked(p2);
    let g2 = gamma.sample_bicubic_unchecked(p2);
    let p3 = (p.0 + 0.5 * h * k2.0, p.1 + 0.5 * h * k2.1);
    let k3 = beta.sample_bicubic_unchecked(p3);
    let g3 = gamma.sample_bicubic_unchecked(p3);
    let p4 = (p.0 + h * k3.0, p.1 + h * k3.1);
    let k4 = beta.sample_bicubic_unchecked(p4);
    let g4 = gamma.sample_bicubic_unchecked(p4);
    (
        (
            p.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            p.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        ),
        h / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4),
    )
}

/// Trace the integral curve of beta from x until it leaves the mask.
///
/// Classical RK4 with bicubic sampling; the boundary crossing is located
/// by bisecting the step size of the final (rejected) step until the
/// bracket is below 1e-12 in arclength. gamma is accumulated inside the
/// RK4 stages over accepted steps plus the final partial step.
///
/// `grid_stop` stops the trace on the gridded region (cells with four
/// inside corners) instead of the continuous shape; boundary data lives
/// on the node lattice, so exit values looked up there are exact to the
/// boundary interpolation order. `beta_min` guards against vector-field
/// degeneracy: hitting a point with |beta| below it stops the trace with
/// `Stalled` status.
#[allow(clippy::too_many_arguments)]
pub fn trace_characteristic(
    beta: &VectorField,
    gamma: &ScalarField,
    x: (f64, f64),
    mask: &DomainMask,
    h_ode: f64,
    t_max: f64,
    beta_min: f64,
    record: bool,
    grid_stop: bool,
) -> CharPath {
    debug_assert!(h_ode > 0.0 && t_max > 0.0);
    let mut path = CharPath {
        start: x,
        points: if record { vec![x] } else { Vec::new() },
        exit_point: None,
        exit_time: None,
        gamma_integral: 0.0,
        status: PathStatus::MaxTimeExceeded,
    };
    let contains = |q: (f64, f64)| {
        if grid_stop {
            mask.contains_point_grid(q)
        } else {
            mask.contains_point(q)
        }
    };
    let mut p = x;
    let mut t = 0.0;
    while t < t_max {
        let b = beta.sample_bicubic_unchecked(p);
        if b.0.hypot(b.1) < beta_min {
            path.status = PathStatus::Stalled;
            return path;
        }
        let (trial, dg) = rk4_step_aug(beta, gamma, p, h_ode);
        if contains(trial) {
            path.gamma_integral += dg;
            p = trial;
            t += h_ode;
            if record {
                path.points.push(p);
            }
            continue;
        }
        // Crossing inside (p, trial]: bisect the step size. Each probe is a
        // fresh RK4 step from p, so the located point sits on the numerical
        // trajectory itself.
        let speed = b.0.hypot(b.1).max(1.0);
        let mut lo = 0.0_f64;
        let mut hi = h_ode;
        while (hi - lo) * speed > 1e-12 {
            let mid = 0.5 * (lo + hi);
            let q = rk4_step(beta, p, mid);
            if contains(q) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        let (exit, dg_exit) = rk4_step_aug(beta, gamma, p, s);
        path.gamma_integral += dg_exit;
        if record {
            path.points.push(exit);
        }
        path.exit_point = Some(exit);
        path.exit_time = Some(t + s);
        path.status = PathStatus::Exited;
        return path;
    }
    path
}

/// Step and horizon defaults derived from the coefficient field itself.
/// Both scale like 1/c under (beta, gamma) -> (c beta, c gamma), which
/// makes the characteristic solve exactly invariant under that rescaling.
pub fn default_h_ode(beta: &VectorField, _mask: &DomainMask) -> f64 {
    let g = *beta.grid();
    0.5 * g.dx.min(g.dy) / beta.max_magnitude().max(f64::MIN_POSITIVE)
}

pub fn default_t_max(beta: &VectorField, _mask: &DomainMask, valid: &[bool]) -> f64 {
    let g = *beta.grid();
    let mut mags: Vec<f64> = (0..g.len())
        .filter(|&k| valid[k])
        .map(|k| {
            let (i, j) = g.node(k);
            let (bx, by) = beta.get(i, j);
            bx.hypot(by)
        })
        .collect();
    if mags.is_empty() {
        return f64::INFINITY;
    }
    mags.sort_by(f64::total_cmp);
    let median = mags[mags.len() / 2].max(f64::MIN_POSITIVE);
    10.0 * g.diameter() / median
}

const MAX_REPORTED_NODES: usize = 8;

/// Boundary value at a trace exit point.
///
/// Rectangles use parameter interpolation directly: exits land on the
/// actual edges where the data nodes sit. Disk boundaries are snapped to
/// the lattice, so neighboring data nodes sit at radii that differ by
/// O(h); a 1-D parameter interpolation ignores those offsets and leaves an
/// O(h) error that jumps as exits sweep past staircase corners. Disks
/// instead evaluate a single global model of the boundary band, fitted
/// once per solve (see [`DiskExitModel`]); because every exit reads the
/// same smooth function, the approximation error varies smoothly from
/// node to node instead of jumping whenever a local node set changes --
/// jumps are what the second differences downstream would amplify by
/// 1/h^2.
enum ExitModel<'a> {
    Rect(&'a crate::grid::BoundaryValues<f64>),
    Disk(DiskExitModel),
}

impl ExitModel<'_> {
    fn build<'a>(
        mu0: &'a crate::grid::BoundaryValues<f64>,
        mask: &DomainMask,
    ) -> ExitModel<'a> {
        match mask.shape() {
            crate::grid::MaskShape::Rectangle => ExitModel::Rect(mu0),
            crate::grid::MaskShape::Disk { .. } => match DiskExitModel::build(mu0, mask) {
                Some(m) => ExitModel::Disk(m),
                None => ExitModel::Rect(mu0),
            },
        }
    }

    fn value(&self, mask: &DomainMask, p: (f64, f64)) -> f64 {
        match self {
            ExitModel::Rect(mu0) => mu0.interp_at(mask, p),
            ExitModel::Disk(m) => m.value(p),
        }
    }
}

/// Global least-squares model of the boundary data on a disk's staircase
/// band: a Fourier series in the polar angle with polynomial radial
/// profiles, v(theta, n) ~ sum_m (a_m + b_m n + c_m n^2) e^{i m theta},
/// where n is the radial offset from the ideal circle in units of h.
///
/// A purely local fit cannot determine the radial curvature (the band is
/// only O(h) thick), but globally thousands of nodes share the smoothly
/// varying radial profile, so a short mode expansion for b and c pins it
/// down. Fitted once per transport solve and evaluated at every exit.
struct DiskExitModel {
    center: (f64, f64),
    radius: f64,
    h: f64,
    /// Highest Fourier mode for each radial order (constant, linear,
    /// quadratic in n).
    modes: [usize; 3],
    coef: Vec<f64>,
}

impl DiskExitModel {
    fn basis_len(modes: &[usize; 3]) -> usize {
        modes.iter().map(|&m| 2 * m + 1).sum()
    }

    fn fill_basis(&self, theta: f64, n: f64, out: &mut [f64]) {
        Self::fill_basis_with(&self.modes, theta, n, out);
    }

    fn fill_basis_with(modes: &[usize; 3], theta: f64, n: f64, out: &mut [f64]) {
        let mut k = 0;
        let mut radial = 1.0;
        for &mmax in modes.iter() {
            out[k] = radial;
            k += 1;
            for m in 1..=mmax {
                let (sn, cs) = (m as f64 * theta).sin_cos();
                out[k] = radial * cs;
                out[k + 1] = radial * sn;
                k += 2;
            }
            radial *= n;
        }
    }

    fn build(
        mu0: &crate::grid::BoundaryValues<f64>,
        mask: &DomainMask,
    ) -> Option<DiskExitModel> {
        let (center, radius) = match mask.shape() {
            crate::grid::MaskShape::Disk { center, radius } => {
                ((center.0, center.1), radius)
            }
            crate::grid::MaskShape::Rectangle => return None,
        };
        let g = *mask.grid();
        let h = g.dx.max(g.dy);
        let nodes = mask.boundary_nodes();
        let nb = nodes.len();
        if nb < 16 {
            return None;
        }
        // Mode counts scale with the node count so the system stays firmly
        // overdetermined on coarse grids; the caps are plenty for smooth
        // boundary data.
        let modes = [
            (nb / 8).clamp(4, 64),
            (nb / 16).clamp(2, 32),
            (nb / 32).clamp(1, 16),
        ];
        let dim = Self::basis_len(&modes);
        let mut m = vec![vec![0.0f64; dim]; dim];
        let mut rhs = vec![0.0f64; dim];
        let mut row = vec![0.0f64; dim];
        for (idx, &k) in nodes.iter().enumerate() {
            let (i, j) = g.node(k);
            let (x, y) = g.pos(i, j);
            let theta = (y - center.1).atan2(x - center.0);
            let n = ((x - center.0).hypot(y - center.1) - radius) / h;
            Self::fill_basis_with(&modes, theta, n, &mut row);
            let v = mu0.values()[idx];
            for r in 0..dim {
                for c in r..dim {
                    m[r][c] += row[r] * row[c];
                }
                rhs[r] += row[r] * v;
            }
        }
        for r in 0..dim {
            for c in 0..r {
                m[r][c] = m[c][r];
            }
        }
        let ridge = 1e-10 * (m[0][0] / nb as f64).max(f64::MIN_POSITIVE) * nb as f64;
        for r in 0..dim {
            m[r][r] += ridge;
        }
        let coef = solve_dense(&mut m, &mut rhs)?;
        Some(DiskExitModel {
            center,
            radius,
            h,
            modes,
            coef,
        })
    }

    fn value(&self, p: (f64, f64)) -> f64 {
        let theta = (p.1 - self.center.1).atan2(p.0 - self.center.0);
        let n = ((p.0 - self.center.0).hypot(p.1 - self.center.1) - self.radius) / self.h;
        let mut row = vec![0.0f64; self.coef.len()];
        self.fill_basis(theta, n, &mut row);
        row.iter().zip(&self.coef).map(|(b, c)| b * c).sum()
    }
}

/// In-place Gaussian elimination with partial pivoting; returns the
/// solution or None if a pivot vanishes.
fn solve_dense(m: &mut [Vec<f64>], rhs: &mut [f64]) -> Option<Vec<f64>> {
    let dim = rhs.len();
    for col in 0..dim {
        let mut piv = col;
        for r in col + 1..dim {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..dim {
            let f = m[r][col] / m[col][col];
            for c in col..dim {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut out = vec![0.0f64; dim];
    for r in (0..dim).rev() {
        let mut acc = rhs[r];
        for c in r + 1..dim {
            acc -= m[r][c] * out[c];
        }
        out[r] = acc / m[r][r];
    }
    Some(out)
}

/// Extend a field past its valid region by ring-by-ring quadratic
/// extrapolation along the grid axes (averaged over the directions that
/// have three known collinear neighbors). Unlike a nearest-value fill,
/// this continues the field smoothly, which the bicubic samplers need to
/// avoid manufacturing node-scale noise at the rim. Rings beyond
/// `max_rings` (never reached by a trace) fall back to the nearest fill.
fn extend_smooth(f: &mut ScalarField, valid: &[bool], max_rings: usize) {
    let g = *f.grid();
    let mut known = valid.to_vec();
    for _ in 0..max_rings {
        let mut updates: Vec<(usize, f64)> = Vec::new();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                if known[k] {
                    continue;
                }
                let mut sum = 0.0;
                let mut cnt = 0usize;
                // +x, -x, +y, -y extrapolation stencils
                if i + 3 < g.nx {
                    let (a, b, c) = (g.idx(i + 1, j), g.idx(i + 2, j), g.idx(i + 3, j));
                    if known[a] && known[b] && known[c] {
                        sum += 3.0 * f.values()[a] - 3.0 * f.values()[b] + f.values()[c];
                        cnt += 1;
                    }
                }
                if i >= 3 {
                    let (a, b, c) = (g.idx(i - 1, j), g.idx(i - 2, j), g.idx(i - 3, j));
                    if known[a] && known[b] && known[c] {
                        sum += 3.0 * f.values()[a] - 3.0 * f.values()[b] + f.values()[c];
                        cnt += 1;
                    }
                }
                if j + 3 < g.ny {
                    let (a, b, c) = (g.idx(i, j + 1), g.idx(i, j + 2), g.idx(i, j + 3));
                    if known[a] && known[b] && known[c] {
                        sum += 3.0 * f.values()[a] - 3.0 * f.values()[b] + f.values()[c];
                        cnt += 1;
                    }
                }
                if j >= 3 {
                    let (a, b, c) = (g.idx(i, j - 1), g.idx(i, j - 2), g.idx(i, j - 3));
                    if known[a] && known[b] && known[c] {
                        sum += 3.0 * f.values()[a] - 3.0 * f.values()[b] + f.values()[c];
                        cnt += 1;
                    }
                }
                if cnt > 0 {
                    updates.push((k, sum / cnt as f64));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for &(k, v) in &updates {
            let (i, j) = g.node(k);
            f.set(i, j, v);
            known[k] = true;
        }
    }
    if known.iter().any(|&b| !b) {
        fill_nearest(f, &known);
    }
}

/// Solve beta.grad(mu) + gamma mu = 0 by tracing every valid interior node
/// to its +beta exit point: mu(x) = mu0(x_+) e^{+int gamma}.
///
/// Boundary nodes take mu0 directly; remaining rim nodes inside the mask
/// are filled from the nearest computed node (a discretization artifact of
/// the one-cell stencil margin). `None` step/horizon arguments use the
/// field-derived defaults.
pub fn solve_transport(
    coeffs: &TransportCoefficients,
    mu0: &crate::grid::BoundaryValues<f64>,
    mask: &DomainMask,
    h_ode: Option<f64>,
    t_max: Option<f64>,
) -> Result<ScalarField> {
    let g = *coeffs.beta.grid();
    if &g != mask.grid() {
        return Err(Error::Dimension("coefficient and mask grids differ".into()));
    }
    if mu0.len() != mask.boundary_nodes().len() {
        return Err(Error::Dimension(format!(
            "mu0 has {} values for {} boundary nodes",
            mu0.len(),
            mask.boundary_nodes().len()
        )));
    }
    if !(mu0.min_value() > 0.0) {
        return Err(Error::Domain(format!(
            "mu0 must be positive on the boundary (min = {})",
            mu0.min_value()
        )));
    }

    // Extend (beta, gamma) past the valid stencil region so that clamped
    // sampling near the rim sees a smooth continuation rather than the
    // zero fill.
    let mut bx = coeffs.beta.x.clone();
    let mut by = coeffs.beta.y.clone();
    let mut gamma = coeffs.gamma.clone();
    extend_smooth(&mut bx, &coeffs.valid, 4);
    extend_smooth(&mut by, &coeffs.valid, 4);
    extend_smooth(&mut gamma, &coeffs.valid, 4);
    let beta = VectorField::new(bx, by)?;

    let h = match h_ode {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(Error::Domain(format!("h_ode must be positive, got {v}"))),
        None => default_h_ode(&beta, mask),
    };
    let horizon = match t_max {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(Error::Domain(format!("t_max must be positive, got {v}"))),
        None => default_t_max(&beta, mask, &coeffs.valid),
    };
    let beta_min = 1e-9 * beta.max_magnitude();

    let exit_model = ExitModel::build(mu0, mask);
    let mut mu = ScalarField::constant(g, 0.0);
    let mut assigned = vec![false; g.len()];
    let mut stalled = 0usize;
    let mut timed_out = 0usize;
    let mut bad_nodes = Vec::new();
    for k in 0..g.len() {
        if !coeffs.valid[k] {
            continue;
        }
        let (i, j) = g.node(k);
        let path = trace_characteristic(
            &beta,
            &gamma,
            g.pos(i, j),
            mask,
            h,
            horizon,
            beta_min,
            false,
            true,
        );
        match path.status {
            PathStatus::Exited => {
                let x_plus = path.exit_point.expect("exited path has an exit point");
                let m0 = exit_model.value(mask, x_plus);
                mu.set(i, j, m0 * path.gamma_integral.exp());
                assigned[k] = true;
            }
            PathStatus::Stalled => {
                stalled += 1;
                if bad_nodes.len() < MAX_REPORTED_NODES {
                    bad_nodes.push((i, j));
                }
            }
            PathStatus::MaxTimeExceeded => {
                timed_out += 1;
                if bad_nodes.len() < MAX_REPORTED_NODES {
                    bad_nodes.push((i, j));
                }
            }
        }
    }
    if stalled + timed_out > 0 {
        return Err(Error::NonExitingPaths {
            count: stalled + timed_out,
            stalled,
            timed_out,
            nodes: bad_nodes,
        });
    }

    // Boundary nodes take the datum directly.
    for (&k, &v) in mask.boundary_nodes().iter().zip(mu0.values()) {
        let (i, j) = g.node(k);
        mu.set(i, j, v);
        assigned[k] = true;
    }
    // Remaining in-mask rim nodes: nearest-neighbour extrapolation.
    fill_nearest(&mut mu, &assigned);
    Ok(mu)
}

/// Exit-time/tangency diagnostic: Spearman rank correlation of paired
/// samples, used to check that t_+ trends with n(x_+).beta(x_+).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < v.len() {
            let mut j = i;
            while j + 1 < v.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mean = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = mean;
            }
            i = j + 1;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for k in 0..n {
        let (a, b) = (rx[k] - mx, ry[k] - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
