//! Complex geometrical optics solutions u = e^{rho.x} (1 + psi) and their
//! boundary traces, the "well-chosen illuminations" of the reconstruction.
//!
//! The remainder psi solves Delta psi + 2 rho . grad psi = -q (1 + psi) on
//! the whole plane; we truncate to a padded box with a smooth compactly
//! supported extension of q and homogeneous Dirichlet data for psi. All
//! envelopes are computed relative to the domain center so that e^{rho.x}
//! stays within double-precision range; the constant factor cancels in the
//! beta/gamma/Gamma formulas downstream.

use num_complex::Complex64;

use crate::elliptic::LinearSolveConfig;
use crate::error::{Error, Result};
use crate::grid::{BoundaryValues, ComplexField, DomainMask, GridSpec, ScalarField};
use crate::solver::BandedMatrix;

/// Complex frequency rho = kappa + i kappa_perp with rho . rho = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CGOParams {
    pub kappa: [f64; 2],
    pub kperp: [f64; 2],
}

impl CGOParams {
    pub fn new(kappa: [f64; 2], kperp: [f64; 2]) -> Result<Self> {
        let nk = kappa[0].hypot(kappa[1]);
        let np = kperp[0].hypot(kperp[1]);
        if !(nk > 0.0) {
            return Err(Error::Config("|kappa| must be positive".into()));
        }
        if (nk - np).abs() > 1e-12 * nk {
            return Err(Error::Config(format!(
                "|kappa| = {nk} and |kperp| = {np} must agree"
            )));
        }
        let dot = kappa[0] * kperp[0] + kappa[1] * kperp[1];
        if dot.abs() > 1e-12 * nk * nk {
            return Err(Error::Config("kappa and kperp must be orthogonal".into()));
        }
        Ok(CGOParams { kappa, kperp })
    }

    /// kperp is the 90-degree rotation of kappa.
    pub fn from_kappa(kappa: [f64; 2]) -> Result<Self> {
        CGOParams::new(kappa, [-kappa[1], kappa[0]])
    }

    pub fn magnitude(&self) -> f64 {
        self.kappa[0].hypot(self.kappa[1])
    }

    pub fn rho(&self) -> [Complex64; 2] {
        [
            Complex64::new(self.kappa[0], self.kperp[0]),
            Complex64::new(self.kappa[1], self.kperp[1]),
        ]
    }

    pub fn rho_dot_rho(&self) -> Complex64 {
        let r = self.rho();
        r[0] * r[0] + r[1] * r[1]
    }

    /// Parameters of the conjugate frequency rho-bar.
    pub fn conjugated(&self) -> CGOParams {
        CGOParams {
            kappa: self.kappa,
            kperp: [-self.kperp[0], -self.kperp[1]],
        }
    }

    pub fn negated(&self) -> CGOParams {
        CGOParams {
            kappa: [-self.kappa[0], -self.kappa[1]],
            kperp: [-self.kperp[0], -self.kperp[1]],
        }
    }

    /// e^{rho . (p - center)}.
    pub fn envelope(&self, p: (f64, f64), center: (f64, f64)) -> Complex64 {
        let dx = p.0 - center.0;
        let dy = p.1 - center.1;
        let re = self.kappa[0] * dx + self.kappa[1] * dy;
        let im = self.kperp[0] * dx + self.kperp[1] * dy;
        Complex64::new(re, im).exp()
    }
}

/// Smoothly extended potential on an enlarged grid, zero near its rim.
#[derive(Debug, Clone)]
pub struct PaddedPotential {
    pub q_ext: ScalarField,
    pub taper_width: f64,
    pub pad_cells: usize,
    /// Placement of the original (unpadded) grid.
    pub inner: GridSpec,
}

/// Quintic smoothstep cutoff: 1 at t <= 0, 0 at t >= 1, C^2 everywhere.
fn cutoff(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Extend q by a smooth compactly supported cutoff on a padded box.
/// q-tilde equals q on the original rectangle (hence on X) and vanishes
/// within `taper_width` of entering the pad; the sup norm is not increased.
pub fn extend_potential(
    q: &ScalarField,
    mask: &DomainMask,
    pad_cells: usize,
    taper_width: f64,
) -> Result<PaddedPotential> {
    if q.grid() != mask.grid() {
        return Err(Error::Dimension("potential and mask grids differ".into()));
    }
    let g = *q.grid();
    let min_pad = (taper_width / g.dx.min(g.dy)).ceil() as usize + 2;
    if pad_cells < min_pad {
        return Err(Error::Geometry(format!(
            "pad_cells = {pad_cells} too small for taper width {taper_width}; need at least {min_pad}"
        )));
    }
    let pg = GridSpec::new(
        g.nx + 2 * pad_cells,
        g.ny + 2 * pad_cells,
        g.x0 - pad_cells as f64 * g.dx,
        g.y0 - pad_cells as f64 * g.dy,
        g.dx,
        g.dy,
    )?;
    let (x1, y1) = (g.x0 + g.width(), g.y0 + g.height());
    let q_ext = ScalarField::from_fn(pg, |x, y| {
        let ex = ((g.x0 - x).max(x - x1)).max(0.0);
        let ey = ((g.y0 - y).max(y - y1)).max(0.0);
        let chi = cutoff(ex / taper_width) * cutoff(ey / taper_width);
        if chi == 0.0 {
            0.0
        } else {
            // Clamped sampling: constant continuation of the edge values
            // under the decaying cutoff.
            chi * q.sample_bilinear_unchecked((x.clamp(g.x0, x1), y.clamp(g.y0, y1)))
        }
    });
    Ok(PaddedPotential {
        q_ext,
        taper_width,
        pad_cells,
        inner: g,
    })
}

/// Assemble and factor the discrete (Delta + 2 rho . grad + c q-tilde)
/// operator on the padded-box interior, then solve for the given rhs
/// fields. `c` is 1 for the direct psi equation and 0 for the
/// constant-coefficient Born steps.
struct PsiOperator {
    grid: GridSpec,
    lu: BandedMatrix<Complex64>,
}

impl PsiOperator {
    fn build(qp: &PaddedPotential, params: &CGOParams, include_q: bool) -> Result<Self> {
        let g = *qp.q_ext.grid();
        let (inx, iny) = (g.nx - 2, g.ny - 2);
        let n = inx * iny;
        let bw = inx;
        let bytes = BandedMatrix::<Complex64>::storage_bytes(n, bw);
        if bytes > 3_500_000_000 {
            return Err(Error::Geometry(format!(
                "padded CGO system needs {} MB; coarsen the psi grid",
                bytes / 1_000_000
            )));
        }
        let rho = params.rho();
        let (rx, ry) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
        let (ax, ay) = (rho[0] / g.dx, rho[1] / g.dy);
        let mut a = BandedMatrix::<Complex64>::zeros(n, bw);
        let eq = |i: usize, j: usize| (j - 1) * inx + (i - 1);
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let e = eq(i, j);
                let qv = if include_q { qp.q_ext.get(i, j) } else { 0.0 };
                a.set(e, e, Complex64::new(-2.0 * (rx + ry) + qv, 0.0));
                if i > 1 {
                    a.set(e, e - 1, Complex64::new(rx, 0.0) - ax);
                }
                if i < g.nx - 2 {
                    a.set(e, e + 1, Complex64::new(rx, 0.0) + ax);
                }
                if j > 1 {
                    a.set(e, e - inx, Complex64::new(ry, 0.0) - ay);
                }
                if j < g.ny - 2 {
                    a.set(e, e + inx, Complex64::new(ry, 0.0) + ay);
                }
            }
        }
        a.factor().map_err(|e| match e {
            Error::EigenvalueCollision => Error::Config(
                "CGO system singular: enlarge the pad or increase |kappa|".into(),
            ),
            other => other,
        })?;
        Ok(PsiOperator { grid: g, lu: a })
    }

    /// Solve with rhs given as a full-grid field (only interior values used),
    /// returning a full-grid field with zero rim.
    fn solve(&self, rhs: &ComplexField) -> ComplexField {
        let g = self.grid;
        let inx = g.nx - 2;
        let mut b = vec![Complex64::default(); self.lu.n()];
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                b[(j - 1) * inx + (i - 1)] = rhs.get(i, j);
            }
        }
        self.lu.solve_in_place(&mut b);
        let mut out = ComplexField::constant(g, Complex64::default());
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                out.set(i, j, b[(j - 1) * inx + (i - 1)]);
            }
        }
        out
    }
}

/// Solve Delta psi + 2 rho . grad psi + q-tilde psi = -q-tilde directly,
/// with psi = 0 on the padded-box boundary.
pub fn solve_psi(
    qp: &PaddedPotential,
    params: &CGOParams,
    _cfg: &LinearSolveConfig,
) -> Result<ComplexField> {
    let op = PsiOperator::build(qp, params, true)?;
    let rhs = qp.q_ext.map(|v| Complex64::new(-v, 0.0));
    Ok(op.solve(&rhs))
}

/// Outcome of the Born iteration.
#[derive(Debug, Clone)]
pub struct BornResult {
    pub psi: ComplexField,
    pub terms: usize,
    pub contraction_ratio: f64,
}

/// Born series psi = sum_j psi_j with
/// (Delta + 2 rho . grad) psi_j = -q psi_{j-1}, psi_{-1} = 1.
/// The constant-coefficient operator is factored once and reused.
pub fn born_series_psi(
    qp: &PaddedPotential,
    params: &CGOParams,
    jmax: usize,
    tol: f64,
    _cfg: &LinearSolveConfig,
) -> Result<BornResult> {
    let op = PsiOperator::build(qp, params, false)?;
    let g = *qp.q_ext.grid();
    let mut psi = ComplexField::constant(g, Complex64::default());
    let mut prev = ComplexField::constant(g, Complex64::new(1.0, 0.0));
    let mut norm0 = 0.0;
    let mut last_norm = f64::INFINITY;
    let mut ratio = 0.0;
    for term in 0..jmax.max(1) {
        let rhs = ComplexField::new(
            g,
            qp.q_ext
                .values()
                .iter()
                .zip(prev.values())
                .map(|(&q, &p)| -q * p)
                .collect(),
        )?;
        let psij = op.solve(&rhs);
        let nj = psij.max_magnitude();
        for (acc, v) in psi.values_mut().iter_mut().zip(psij.values()) {
            *acc += *v;
        }
        if term == 0 {
            norm0 = nj;
        } else {
            ratio = nj / last_norm.max(1e-300);
            if term >= 3 && ratio >= 1.0 {
                return Err(Error::BornDivergence { ratio });
            }
        }
        last_norm = nj;
        if nj < tol * (1.0 + norm0) {
            return Ok(BornResult {
                psi,
                terms: term + 1,
                contraction_ratio: ratio,
            });
        }
        prev = psij;
    }
    Ok(BornResult {
        psi,
        terms: jmax,
        contraction_ratio: ratio,
    })
}

/// A CGO solution restricted to the reconstruction grid.
#[derive(Debug, Clone)]
pub struct CGOSolution {
    pub params: CGOParams,
    /// Remainder on its (possibly coarsened) padded grid.
    pub psi: ComplexField,
    /// u = e^{rho.(x - center)} (1 + psi) on the mask's grid.
    pub u_on_mask: ComplexField,
    /// Boundary trace g = u|dX in the mask's traversal order.
    pub trace: BoundaryValues<Complex64>,
    /// sup |Delta u + q u| / sup |u| over stencil-valid nodes of X, with the
    /// envelope handled analytically (product rule) and psi differenced.
    pub residual_norm: f64,
    /// Envelope centering shared with the downstream beta/gamma assembly.
    pub center: (f64, f64),
}

/// Largest |kappa . (x - center)| we allow before the squared envelopes in
/// the field formulas would leave double range.
const MAX_ENVELOPE_SPAN: f64 = 150.0;

/// Evaluate u = e^{rho.(x-c)} (1 + psi) on the mask grid, extract the trace,
/// and record the equation residual.
pub fn assemble_cgo(
    qp: &PaddedPotential,
    params: &CGOParams,
    psi: &ComplexField,
    mask: &DomainMask,
) -> Result<CGOSolution> {
    let g = *mask.grid();
    if qp.inner != g {
        return Err(Error::Dimension(
            "padded potential was built for a different grid".into(),
        ));
    }
    let center = g.center();
    let span = (0..4)
        .map(|c| {
            let p = match c {
                0 => (g.x0, g.y0),
                1 => (g.x0 + g.width(), g.y0),
                2 => (g.x0, g.y0 + g.height()),
                _ => (g.x0 + g.width(), g.y0 + g.height()),
            };
            (params.kappa[0] * (p.0 - center.0) + params.kappa[1] * (p.1 - center.1)).abs()
        })
        .fold(0.0, f64::max);
    if span > MAX_ENVELOPE_SPAN {
        return Err(Error::EnvelopeOverflow {
            span,
            max: MAX_ENVELOPE_SPAN,
        });
    }
    // Bicubic: downstream stencils differentiate u twice, and the kinks a
    // bilinear resample leaves on coarse-cell lines would dominate them.
    let u_on_mask = ComplexField::from_fn(g, |x, y| {
        let one_plus_psi = Complex64::new(1.0, 0.0) + psi.sample_bicubic_unchecked((x, y));
        params.envelope((x, y), center) * one_plus_psi
    });
    let trace = BoundaryValues::new(
        mask.boundary_positions()
            .into_iter()
            .map(|(x, y)| {
                params.envelope((x, y), center)
                    * (Complex64::new(1.0, 0.0) + psi.sample_bicubic_unchecked((x, y)))
            })
            .collect(),
    );
    // Residual on psi's own grid, restricted to the inner rectangle:
    // Delta u + q u = E . (Delta psi + 2 rho . grad psi + q (1 + psi)).
    let pg = *psi.grid();
    let rho = params.rho();
    let lap = psi.laplacian()?;
    let (px, py) = psi.gradient()?;
    let mut sup_r: f64 = 0.0;
    let mut sup_u: f64 = 0.0;
    let (x1, y1) = (g.x0 + g.width(), g.y0 + g.height());
    for j in 1..pg.ny - 1 {
        for i in 1..pg.nx - 1 {
            let (x, y) = pg.pos(i, j);
            if x < g.x0 - 1e-12 || x > x1 + 1e-12 || y < g.y0 - 1e-12 || y > y1 + 1e-12 {
                continue;
            }
            let one_plus = Complex64::new(1.0, 0.0) + psi.get(i, j);
            let alg = lap.get(i, j)
                + (rho[0] * px.get(i, j) + rho[1] * py.get(i, j)) * 2.0
                + qp.q_ext.get(i, j) * one_plus;
            let env = params.envelope((x, y), center).norm();
            sup_r = sup_r.max(env * alg.norm());
            sup_u = sup_u.max(env * one_plus.norm());
        }
    }
    let residual_norm = if sup_u > 0.0 { sup_r / sup_u } else { 0.0 };
    Ok(CGOSolution {
        params: *params,
        psi: psi.clone(),
        u_on_mask,
        trace,
        residual_norm,
        center,
    })
}

/// The n = 2 frequency set of the 2n-data route: rho_2 = kappa_1 + i kappa_2
/// and rho_1 = -rho_2, with kappa_j = kmag e_j. The chi weight is 1 for the
/// (d_1, d_2) pairing (since rho_1 + rho_2 = 0) and e^{-2 kappa_1 . x} for
/// the conjugate pairing of d_2.
pub fn multi_rho_set(kmag: f64) -> Result<[CGOParams; 2]> {
    if !(kmag > 0.0) {
        return Err(Error::Config("kmag must be positive".into()));
    }
    let rho2 = CGOParams::new([kmag, 0.0], [0.0, kmag])?;
    let rho1 = rho2.negated();
    Ok([rho1, rho2])
}

/// End-to-end CGO driver parameters.
#[derive(Debug, Clone, Copy)]
pub struct CgoConfig {
    /// Pad width per side as a fraction of the domain width.
    pub pad_fraction: f64,
    /// Taper width as a fraction of the pad width.
    pub taper_fraction: f64,
    /// Node budget for the direct padded psi solve. One refinement past the
    /// budget is handled by a two-grid iteration on the fine grid (the
    /// budgeted grid serves as its coarse level); deeper refinements coarsen
    /// by powers of two and re-sample psi bicubically.
    pub max_psi_nodes: usize,
    pub lin: LinearSolveConfig,
}

impl Default for CgoConfig {
    fn default() -> Self {
        CgoConfig {
            pad_fraction: 0.5,
            taper_fraction: 0.5,
            max_psi_nodes: 260 * 260,
            lin: LinearSolveConfig::default(),
        }
    }
}

/// Coarsen a field by taking every 2^level-th node (grids with 2^k + 1
/// nodes per side keep their endpoints).
fn coarsen(q: &ScalarField, level: usize) -> ScalarField {
    let g = *q.grid();
    let step = 1 << level;
    let nx = (g.nx - 1) / step + 1;
    let ny = (g.ny - 1) / step + 1;
    let cg = GridSpec::new(
        nx,
        ny,
        g.x0,
        g.y0,
        g.dx * step as f64,
        g.dy * step as f64,
    )
    .expect("coarse grid too small");
    ScalarField::from_fn(cg, |x, y| q.sample_bilinear_unchecked((x, y)))
}

/// Interior application of the discrete Delta + 2 rho . grad + q operator
/// with zero Dirichlet rim, matching [`PsiOperator`]'s assembly.
fn apply_psi_op(
    q_ext: &ScalarField,
    params: &CGOParams,
    psi: &ComplexField,
) -> ComplexField {
    let g = *q_ext.grid();
    let (rx, ry) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    let rho = params.rho();
    let (ax, ay) = (rho[0] / g.dx, rho[1] / g.dy);
    let mut out = ComplexField::constant(g, Complex64::default());
    for j in 1..g.ny - 1 {
        for i in 1..g.nx - 1 {
            let c = Complex64::new(-2.0 * (rx + ry) + q_ext.get(i, j), 0.0) * psi.get(i, j)
                + (Complex64::new(rx, 0.0) + ax) * psi.get(i + 1, j)
                + (Complex64::new(rx, 0.0) - ax) * psi.get(i - 1, j)
                + (Complex64::new(ry, 0.0) + ay) * psi.get(i, j + 1)
                + (Complex64::new(ry, 0.0) - ay) * psi.get(i, j - 1);
            out.set(i, j, c);
        }
    }
    out
}

/// Damped-Jacobi sweeps for the psi operator (diffusion-dominated at the
/// cell scale, so plain Jacobi smooths the upper half of the spectrum).
fn jacobi_smooth(
    q_ext: &ScalarField,
    params: &CGOParams,
    psi: &mut ComplexField,
    rhs: &ComplexField,
    sweeps: usize,
) {
    let g = *q_ext.grid();
    let (rx, ry) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    let omega = 0.8;
    for _ in 0..sweeps {
        let az = apply_psi_op(q_ext, params, psi);
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let diag = -2.0 * (rx + ry) + q_ext.get(i, j);
                let r = rhs.get(i, j) - az.get(i, j);
                let v = psi.get(i, j) + r * (omega / diag);
                psi.set(i, j, v);
            }
        }
    }
}

fn residual_sup(r: &ComplexField) -> f64 {
    r.values().iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Two-grid solve on the fine padded box: the node-budgeted coarse LU
/// handles the smooth error, damped Jacobi the oscillatory half. Returns
/// psi on the fine padded grid (the true fine-grid solution, so nothing is
/// interpolated into the data it feeds).
fn two_grid_psi(
    q_ext_f: &ScalarField,
    params: &CGOParams,
    pad_c: usize,
    taper: f64,
) -> Result<ComplexField> {
    let gf = *q_ext_f.grid();
    // Coarse grid: every second fine node (the fine pad is 2 pad_c).
    let gc = GridSpec::new(
        (gf.nx - 1) / 2 + 1,
        (gf.ny - 1) / 2 + 1,
        gf.x0,
        gf.y0,
        2.0 * gf.dx,
        2.0 * gf.dy,
    )?;
    let q_ext_c = ScalarField::from_fn(gc, |x, y| q_ext_f.sample_bilinear_unchecked((x, y)));
    let inner_c = GridSpec::new(
        gc.nx - 2 * pad_c,
        gc.ny - 2 * pad_c,
        gc.x0 + pad_c as f64 * gc.dx,
        gc.y0 + pad_c as f64 * gc.dy,
        gc.dx,
        gc.dy,
    )?;
    let qp_c = PaddedPotential {
        q_ext: q_ext_c,
        taper_width: taper,
        pad_cells: pad_c,
        inner: inner_c,
    };
    let coarse_op = PsiOperator::build(&qp_c, params, true)?;

    let rhs = q_ext_f.map(|v| Complex64::new(-v, 0.0));
    let rhs_norm = residual_sup(&rhs).max(f64::MIN_POSITIVE);
    let mut psi = ComplexField::constant(gf, Complex64::default());
    let tol = 1e-11;
    let max_cycles = 60;
    for _cycle in 0..max_cycles {
        jacobi_smooth(q_ext_f, params, &mut psi, &rhs, 3);
        let az = apply_psi_op(q_ext_f, params, &psi);
        let r = ComplexField::new(
            gf,
            rhs.values()
                .iter()
                .zip(az.values())
                .map(|(&b, &a)| b - a)
                .collect(),
        )?;
        if residual_sup(&r) <= tol * rhs_norm {
            return Ok(psi);
        }
        // Full-weighting restriction of the residual to the coarse interior.
        let mut rc = ComplexField::constant(gc, Complex64::default());
        for jc in 1..gc.ny - 1 {
            for ic in 1..gc.nx - 1 {
                let (i, j) = (2 * ic, 2 * jc);
                let v = r.get(i, j) * 0.25
                    + (r.get(i - 1, j) + r.get(i + 1, j) + r.get(i, j - 1) + r.get(i, j + 1))
                        * 0.125
                    + (r.get(i - 1, j - 1)
                        + r.get(i + 1, j - 1)
                        + r.get(i - 1, j + 1)
                        + r.get(i + 1, j + 1))
                        * 0.0625;
                rc.set(ic, jc, v);
            }
        }
        let ec = coarse_op.solve(&rc);
        // Bilinear prolongation of the coarse correction.
        for j in 1..gf.ny - 1 {
            for i in 1..gf.nx - 1 {
                let (ic, jc) = (i / 2, j / 2);
                let v = match (i % 2, j % 2) {
                    (0, 0) => ec.get(ic, jc),
                    (1, 0) => (ec.get(ic, jc) + ec.get(ic + 1, jc)) * 0.5,
                    (0, 1) => (ec.get(ic, jc) + ec.get(ic, jc + 1)) * 0.5,
                    _ => (ec.get(ic, jc)
                        + ec.get(ic + 1, jc)
                        + ec.get(ic, jc + 1)
                        + ec.get(ic + 1, jc + 1))
                        * 0.25,
                };
                psi.set(i, j, psi.get(i, j) + v);
            }
        }
        jacobi_smooth(q_ext_f, params, &mut psi, &rhs, 3);
    }
    let az = apply_psi_op(q_ext_f, params, &psi);
    let res = rhs
        .values()
        .iter()
        .zip(az.values())
        .map(|(&b, &a)| (b - a).norm())
        .fold(0.0, f64::max);
    Err(Error::NoConvergence {
        iterations: max_cycles,
        residual: res / rhs_norm,
        tol,
    })
}

/// Construct the CGO solution for a potential on the mask's grid: extend,
/// solve for psi on the padded box, and assemble u with its boundary trace.
///
/// When the padded box exceeds the node budget by one refinement step, the
/// budgeted grid is used as the coarse level of a two-grid solve and psi is
/// still produced on the full-resolution box. Deeper overshoots fall back
/// to a coarse solve resampled bicubically (psi is smooth).
pub fn cgo_solution(
    q: &ScalarField,
    mask: &DomainMask,
    params: &CGOParams,
    cfg: &CgoConfig,
) -> Result<CGOSolution> {
    let g = *mask.grid();
    let mut level = 0usize;
    loop {
        let step = 1 << level;
        if (g.nx - 1) % step != 0 || (g.ny - 1) % step != 0 {
            return Err(Error::Geometry(
                "grid node counts do not support coarsening (need 2^k m + 1)".into(),
            ));
        }
        let nx = (g.nx - 1) / step + 1;
        let ny = (g.ny - 1) / step + 1;
        let pad = ((cfg.pad_fraction * g.width()) / (g.dx * step as f64)).round() as usize;
        let total = (nx + 2 * pad) * (ny + 2 * pad);
        if total <= cfg.max_psi_nodes || nx.min(ny) <= 17 {
            if level == 1 {
                // Two-grid: extend on the fine grid with a pad that nests
                // the budgeted grid exactly one refinement down.
                let pad_f = 2 * pad;
                let taper = cfg.taper_fraction * pad_f as f64 * g.dx;
                let qp_f = extend_potential(q, mask, pad_f, taper)?;
                let psi = two_grid_psi(&qp_f.q_ext, params, pad, taper)?;
                let qp_fine = PaddedPotential {
                    q_ext: qp_f.q_ext,
                    taper_width: taper,
                    pad_cells: pad_f,
                    inner: g,
                };
                return assemble_cgo(&qp_fine, params, &psi, mask);
            }
            let qc = if level == 0 { q.clone() } else { coarsen(q, level) };
            let cmask = if level == 0 {
                mask.clone()
            } else {
                DomainMask::rectangle(*qc.grid())
            };
            let taper = cfg.taper_fraction * pad as f64 * qc.grid().dx;
            let qp = extend_potential(&qc, &cmask, pad, taper)?;
            let psi = solve_psi(&qp, params, &cfg.lin)?;
            // Residuals and trace are assembled against the original grid.
            let qp_fine = PaddedPotential {
                q_ext: qp.q_ext,
                taper_width: qp.taper_width,
                pad_cells: qp.pad_cells,
                inner: g,
            };
            return assemble_cgo(&qp_fine, params, &psi, mask);
        }
        level += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainMask;

    fn gaussian_q(g: GridSpec, amp: f64) -> ScalarField {
        ScalarField::from_fn(g, |x, y| {
            let r2 = (x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5);
            amp * (-r2 / (2.0 * 0.15 * 0.15)).exp()
        })
    }

    #[test]
    fn params_enforce_rho_dot_rho_zero() {
        let p = CGOParams::from_kappa([8.0, 0.0]).unwrap();
        assert!(p.rho_dot_rho().norm() < 1e-12);
        let q = CGOParams::new([3.0, 4.0], [-4.0, 3.0]).unwrap();
        assert!(q.rho_dot_rho().norm() < 1e-12);
        assert!(CGOParams::new([1.0, 0.0], [0.5, 0.5]).is_err());
    }

    #[test]
    fn extend_zero_potential_is_zero() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, 0.0);
        let qp = extend_potential(&q, &mask, 8, 3.0 * g.dx).unwrap();
        assert_eq!(qp.q_ext.max_magnitude(), 0.0);
    }

    #[test]
    fn extend_constant_keeps_value_on_x_and_decays() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, 1.0);
        let qp = extend_potential(&q, &mask, 10, 5.0 * g.dx).unwrap();
        let pg = *qp.q_ext.grid();
        // Equal to 1 on X.
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert_eq!(qp.q_ext.get(i + 10, j + 10), 1.0);
            }
        }
        // Monotone decay along the outward x direction from the edge.
        let jmid = pg.ny / 2;
        let mut prev = 1.0;
        for i in (0..=10).rev() {
            let v = qp.q_ext.get(i, jmid);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert_eq!(qp.q_ext.get(0, jmid), 0.0);
        assert!(qp.q_ext.max_magnitude() <= 1.0 + 1e-15);
    }

    #[test]
    fn extend_gaussian_matches_on_x() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = gaussian_q(g, 1.0);
        let qp = extend_potential(&q, &mask, 8, 3.0 * g.dx).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!((qp.q_ext.get(i + 8, j + 8) - q.get(i, j)).abs() < 1e-15);
            }
        }
        assert!((qp.q_ext.max_magnitude() - q.max_magnitude()).abs() < 1e-15);
    }

    #[test]
    fn extend_rejects_small_pad() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, 1.0);
        assert!(extend_potential(&q, &mask, 3, 5.0 * g.dx).is_err());
    }

    #[test]
    fn psi_zero_for_zero_potential() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, 0.0);
        let qp = extend_potential(&q, &mask, 8, 3.0 * g.dx).unwrap();
        let p = CGOParams::from_kappa([8.0, 0.0]).unwrap();
        let psi = solve_psi(&qp, &p, &LinearSolveConfig::default()).unwrap();
        assert!(psi.max_magnitude() < 1e-14);
    }

    // The Dirichlet truncation does not reproduce the whole-plane 1/|kappa|
    // remainder decay at higher frequencies (the truncated problem's
    // solution operator grows with |kappa|); the decay band is checked and
    // reported by the acceptance suite. Here we pin the regime the
    // reconstruction pipeline actually uses: |kappa| = 8 with a moderate
    // pad keeps the remainder well below 1 on X for a unit-sup-norm bump.
    #[test]
    fn psi_moderate_at_default_frequency() {
        let g = GridSpec::unit_square(65).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = gaussian_q(g, 1.0);
        let qp = extend_potential(&q, &mask, 16, 8.0 * g.dx).unwrap();
        let cfg = LinearSolveConfig::default();
        let psi = solve_psi(&qp, &CGOParams::from_kappa([8.0, 0.0]).unwrap(), &cfg).unwrap();
        let pg = *psi.grid();
        let mut m: f64 = 0.0;
        for j in 0..pg.ny {
            for i in 0..pg.nx {
                let (x, y) = pg.pos(i, j);
                if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
                    m = m.max(psi.get(i, j).norm());
                }
            }
        }
        assert!(m < 1.0, "|psi| on X = {m}");
    }

    #[test]
    fn psi_conjugate_symmetry() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = gaussian_q(g, 0.8);
        let qp = extend_potential(&q, &mask, 16, 4.0 * g.dx).unwrap();
        let cfg = LinearSolveConfig::default();
        let p = CGOParams::from_kappa([8.0, 0.0]).unwrap();
        let psi = solve_psi(&qp, &p, &cfg).unwrap();
        let psi_bar = solve_psi(&qp, &p.conjugated(), &cfg).unwrap();
        for k in 0..psi.grid().len() {
            assert!((psi.values()[k].conj() - psi_bar.values()[k]).norm() < 1e-11);
        }
    }

    #[test]
    fn born_series_matches_direct_solve() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = gaussian_q(g, 1.0);
        let qp = extend_potential(&q, &mask, 16, 4.0 * g.dx).unwrap();
        let cfg = LinearSolveConfig::default();
        let p = CGOParams::from_kappa([16.0, 0.0]).unwrap();
        let tol = 1e-10;
        let born = born_series_psi(&qp, &p, 40, tol, &cfg).unwrap();
        let direct = solve_psi(&qp, &p, &cfg).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (pi, pj) = (i + 16, j + 16);
                err = err.max((born.psi.get(pi, pj) - direct.get(pi, pj)).norm());
            }
        }
        assert!(err <= 10.0 * tol, "born vs direct {err}");
        assert!(born.contraction_ratio < 1.0);
    }

    #[test]
    fn born_first_term_linear_in_q() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let cfg = LinearSolveConfig::default();
        let p = CGOParams::from_kappa([16.0, 0.0]).unwrap();
        let psi0 = |amp: f64| {
            let q = gaussian_q(g, amp);
            let qp = extend_potential(&q, &mask, 16, 4.0 * g.dx).unwrap();
            born_series_psi(&qp, &p, 1, 0.0, &cfg).unwrap().psi
        };
        let a = psi0(1.0);
        let b = psi0(0.5);
        for k in 0..a.grid().len() {
            assert!((a.values()[k] * 0.5 - b.values()[k]).norm() < 1e-13);
        }
    }

    #[test]
    fn assemble_cgo_zero_potential_closed_form() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, 0.0);
        let qp = extend_potential(&q, &mask, 8, 3.0 * g.dx).unwrap();
        let p = CGOParams::from_kappa([8.0, 0.0]).unwrap();
        let psi = solve_psi(&qp, &p, &LinearSolveConfig::default()).unwrap();
        let sol = assemble_cgo(&qp, &p, &psi, &mask).unwrap();
        let c = g.center();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = g.pos(i, j);
                let want = Complex64::new(8.0 * (x - c.0), 8.0 * (y - c.1)).exp();
                assert!((sol.u_on_mask.get(i, j) - want).norm() < 1e-12 * want.norm());
            }
        }
        // Trace equals the envelope on boundary nodes.
        for (pos, v) in mask.boundary_positions().iter().zip(&sol.trace.values) {
            let want = Complex64::new(8.0 * (pos.0 - c.0), 8.0 * (pos.1 - c.1)).exp();
            assert!((v - want).norm() < 1e-12 * want.norm());
        }
        assert!(sol.residual_norm < 1e-10);
    }

    #[test]
    fn assemble_cgo_residual_small_for_solver_psi() {
        let g = GridSpec::unit_square(65).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = gaussian_q(g, 1.0);
        let sol = cgo_solution(
            &q,
            &mask,
            &CGOParams::from_kappa([8.0, 0.0]).unwrap(),
            &CgoConfig::default(),
        )
        .unwrap();
        assert!(sol.residual_norm <= 1e-8, "residual {}", sol.residual_norm);
    }

    #[test]
    fn assemble_cgo_conjugation_symmetry() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = gaussian_q(g, 0.7);
        let cfg = CgoConfig::default();
        let p = CGOParams::from_kappa([8.0, 0.0]).unwrap();
        let a = cgo_solution(&q, &mask, &p, &cfg).unwrap();
        let b = cgo_solution(&q, &mask, &p.conjugated(), &cfg).unwrap();
        for k in 0..g.len() {
            assert!(
                (a.u_on_mask.values()[k].conj() - b.u_on_mask.values()[k]).norm()
                    < 1e-9 * a.u_on_mask.values()[k].norm().max(1e-6)
            );
        }
    }

    #[test]
    fn multi_rho_set_structure() {
        let [r1, r2] = multi_rho_set(8.0).unwrap();
        assert_eq!(r2.kappa, [8.0, 0.0]);
        assert_eq!(r2.kperp, [0.0, 8.0]);
        assert_eq!(r1.kappa, [-8.0, 0.0]);
        assert_eq!(r1.kperp, [0.0, -8.0]);
        // rho_1 = -rho_2 and both are null vectors.
        for (a, b) in r1.rho().iter().zip(r2.rho()) {
            assert_eq!(*a, -b);
        }
        assert!(r1.rho_dot_rho().norm() < 1e-12);
        assert!(r2.rho_dot_rho().norm() < 1e-12);
        // chi for the j = 1 pairing: e^{-(rho1+rho2).x} = 1.
        let sum = [r1.rho()[0] + r2.rho()[0], r1.rho()[1] + r2.rho()[1]];
        assert!(sum[0].norm() + sum[1].norm() < 1e-12);
    }

    #[test]
    fn envelope_overflow_is_reported() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, 0.0);
        let qp = extend_potential(&q, &mask, 8, 3.0 * g.dx).unwrap();
        let p = CGOParams::from_kappa([800.0, 0.0]).unwrap();
        let psi = ComplexField::constant(*qp.q_ext.grid(), Complex64::default());
        assert!(matches!(
            assemble_cgo(&qp, &p, &psi, &mask),
            Err(Error::EnvelopeOverflow { .. })
        ));
    }

    #[test]
    fn two_grid_solution_matches_direct_solve() {
        // Level 0 solves the padded fine system by direct factorization;
        // forcing level 1 solves the same system by the two-grid iteration.
        let g = GridSpec::unit_square(65).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = gaussian_q(g, 1.0);
        let params = CGOParams::from_kappa([4.0, 0.0]).unwrap();
        let direct = cgo_solution(&q, &mask, &params, &CgoConfig::default()).unwrap();
        let tg_cfg = CgoConfig {
            max_psi_nodes: 80 * 80,
            ..CgoConfig::default()
        };
        let tg = cgo_solution(&q, &mask, &params, &tg_cfg).unwrap();
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (a, b) in direct
            .u_on_mask
            .values()
            .iter()
            .zip(tg.u_on_mask.values())
        {
            diff = diff.max((a - b).norm());
            scale = scale.max(a.norm());
        }
        assert!(diff / scale < 1e-8, "relative sup diff {}", diff / scale);
        assert!(tg.residual_norm < 1e-6, "residual {}", tg.residual_norm);
    }
}
