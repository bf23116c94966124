//! Reconstruction chains: mu -> u -> q -> sqrt(D) -> sigma_a, for the
//! conjugate-pair (two-data) and frequency-set (multi-data) routes, plus
//! the Liouville forward map used to manufacture consistent phantom data.


use crate::data::{boundary_mu, InternalData};
use crate::elliptic::{solve_shifted, LinearSolveConfig};
use crate::error::{Error, Result};
use crate::grid::{
    erode, fill_nearest, BoundaryValues, ComplexField, DomainMask, ScalarField, VectorField,
};
use crate::recon::{
    assemble_gamma, beta_gamma_multi, beta_gamma_two, transport_residual, GradientCoefficient,
};
use crate::transport::solve_transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    TwoData,
    MultiData,
}

/// How the multi-data route turns Gamma = -grad(log mu) into mu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MuMode {
    /// Variational: solve Delta w = -div(Gamma) with w = log mu0 on the
    /// boundary, then mu = e^w. Grid-native, symmetric error distribution.
    #[default]
    Poisson,
    /// Integrate -Gamma along grid staircase paths from a fixed boundary
    /// anchor. Retained for fidelity testing against the variational mode.
    Path,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Relative floor for |u| (times max|u|) before the q division.
    pub u_min_rel: f64,
    pub h_ode: Option<f64>,
    pub t_max: Option<f64>,
    pub mu_mode: MuMode,
    /// Pointwise condition cap for the 2x2 beta systems.
    pub cond_max: f64,
    /// Curl residual above this attaches a data-inconsistency warning.
    pub curl_warn: f64,
    pub lin: LinearSolveConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            u_min_rel: 1e-6,
            h_ode: None,
            t_max: None,
            mu_mode: MuMode::default(),
            cond_max: crate::recon::DEFAULT_COND_MAX,
            curl_warn: 10.0,
            lin: LinearSolveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub min_abs_u: f64,
    pub flatness_gap: f64,
    /// sup |beta.grad(mu) + gamma mu| for the recovered mu (two-data).
    pub transport_residual: Option<f64>,
    /// sup |grad w + Gamma| for the recovered w = log mu (multi-data).
    pub poisson_residual: Option<f64>,
    pub condition_max: Option<f64>,
    pub curl_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub mu: ScalarField,
    pub q: ScalarField,
    pub sqrt_d: ScalarField,
    pub d: ScalarField,
    pub sigma_a: ScalarField,
    pub route: Route,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

/// u = d / mu nodewise.
pub fn recover_u(data: &InternalData, mu: &ScalarField) -> Result<ComplexField> {
    if data.d.grid() != mu.grid() {
        return Err(Error::Dimension("datum and mu grids differ".into()));
    }
    if !(mu.min_value() > 0.0) {
        return Err(Error::Domain(format!(
            "mu must be positive everywhere before division (min = {})",
            mu.min_value()
        )));
    }
    let g = *mu.grid();
    Ok(ComplexField::new(
        g,
        data.d
            .values()
            .iter()
            .zip(mu.values())
            .map(|(&dv, &mv)| dv / mv)
            .collect(),
    )?)
}

/// q = -Re(conj(u) lap u) / |u|^2 on valid stencil nodes; the combination
/// uses both components of u and is smooth wherever either is nonzero.
/// Rim nodes are filled from the nearest valid node.
pub fn recover_q(u: &ComplexField, u_min: f64, mask: &DomainMask) -> Result<ScalarField> {
    if u.grid() != mask.grid() {
        return Err(Error::Dimension("u and mask grids differ".into()));
    }
    let g = *mask.grid();
    let valid = mask.interior_flags();
    let mut min_abs = f64::INFINITY;
    for k in 0..g.len() {
        if valid[k] {
            min_abs = min_abs.min(u.values()[k].norm());
        }
    }
    if min_abs < u_min {
        return Err(Error::VanishingSolution {
            min_abs,
            floor: u_min,
        });
    }
    let lap = u.laplacian()?;
    let mut q = ScalarField::constant(g, 0.0);
    for k in 0..g.len() {
        if !valid[k] {
            continue;
        }
        let (i, j) = g.node(k);
        let uv = u.values()[k];
        q.set(i, j, -(uv.conj() * lap.get(i, j)).re / uv.norm_sqr());
    }
    fill_nearest(&mut q, &valid);
    Ok(q)
}

/// Solve -lap(w) - q w = mu for w = sqrt(D) with Dirichlet data.
pub fn recover_sqrt_d(
    q: &ScalarField,
    mu: &ScalarField,
    sqrt_d_boundary: &BoundaryValues<f64>,
    mask: &DomainMask,
    cfg: &LinearSolveConfig,
) -> Result<ScalarField> {
    if !(sqrt_d_boundary.min_value() > 0.0) {
        return Err(Error::Domain(
            "sqrt(D) boundary data must be positive".into(),
        ));
    }
    let w = solve_shifted(q, mu, sqrt_d_boundary, mask, cfg)?;
    let g = *mask.grid();
    for j in 0..g.ny {
        for i in 0..g.nx {
            if mask.is_inside(i, j) && !(w.get(i, j) > 0.0) {
                return Err(Error::Domain(format!(
                    "recovered sqrt(D) is not positive at node ({i}, {j}): {}",
                    w.get(i, j)
                )));
            }
        }
    }
    Ok(w)
}

/// sigma_a = mu sqrt(D) nodewise. Positivity is required on mask nodes
/// only: on non-rectangular masks the elliptic solves leave outside nodes
/// at zero, and those never enter the reconstruction.
pub fn recover_sigma(
    mu: &ScalarField,
    sqrt_d: &ScalarField,
    mask: &DomainMask,
) -> Result<ScalarField> {
    if mu.grid() != sqrt_d.grid() {
        return Err(Error::Dimension("mu and sqrt(D) grids differ".into()));
    }
    let g = *mask.grid();
    for j in 0..g.ny {
        for i in 0..g.nx {
            if mask.is_inside(i, j) && !(mu.get(i, j) > 0.0 && sqrt_d.get(i, j) > 0.0) {
                return Err(Error::Domain(
                    "mu and sqrt(D) must be positive for the product step".into(),
                ));
            }
        }
    }
    let g = *mu.grid();
    Ok(ScalarField::new(
        g,
        mu.values()
            .iter()
            .zip(sqrt_d.values())
            .map(|(&m, &s)| m * s)
            .collect(),
    )?)
}

/// Liouville change of variables for a phantom (D, sigma_a).
#[derive(Debug, Clone)]
pub struct LiouvilleFields {
    pub q: ScalarField,
    pub mu: ScalarField,
    pub sqrt_d: ScalarField,
}

impl LiouvilleFields {
    /// Residual of the gauge identity: for u solving the diffusion
    /// equation, v = sqrt(D) u solves lap(v) + q v = 0. Returns
    /// sup |lap(v) + q v| / sup |v| over doubly-interior nodes.
    pub fn residual(&self, u: &ScalarField, mask: &DomainMask) -> Result<f64> {
        let g = *mask.grid();
        let v = ScalarField::new(
            g,
            self.sqrt_d
                .values()
                .iter()
                .zip(u.values())
                .map(|(&s, &uv)| s * uv)
                .collect(),
        )?;
        let lap = v.laplacian()?;
        let inner = erode(&mask.interior_flags(), &g);
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for k in 0..g.len() {
            if !inner[k] {
                continue;
            }
            let (i, j) = g.node(k);
            num = num.max((lap.get(i, j) + self.q.get(i, j) * v.get(i, j)).abs());
            den = den.max(v.get(i, j).abs());
        }
        Ok(num / den.max(f64::MIN_POSITIVE))
    }
}

/// q = -lap(sqrt D)/sqrt(D) - sigma_a/D and mu = sigma_a/sqrt(D) by
/// stencils; rim values of q filled from the nearest interior node.
pub fn liouville_forward(d: &ScalarField, sigma_a: &ScalarField) -> Result<LiouvilleFields> {
    if d.grid() != sigma_a.grid() {
        return Err(Error::Dimension("D and sigma_a grids differ".into()));
    }
    if !(d.min_value() > 0.0) {
        return Err(Error::Domain("D must be strictly positive".into()));
    }
    let g = *d.grid();
    let sqrt_d = d.map(f64::sqrt);
    let lap = sqrt_d.laplacian()?;
    let mut q = ScalarField::constant(g, 0.0);
    let mut valid = vec![false; g.len()];
    for j in 1..g.ny - 1 {
        for i in 1..g.nx - 1 {
            q.set(
                i,
                j,
                -lap.get(i, j) / sqrt_d.get(i, j) - sigma_a.get(i, j) / d.get(i, j),
            );
            valid[g.idx(i, j)] = true;
        }
    }
    fill_nearest(&mut q, &valid);
    let mu = ScalarField::new(
        g,
        sigma_a
            .values()
            .iter()
            .zip(sqrt_d.values())
            .map(|(&s, &w)| s / w)
            .collect(),
    )?;
    Ok(LiouvilleFields { q, mu, sqrt_d })
}

fn finish(
    data: &InternalData,
    mu: ScalarField,
    mask: &DomainMask,
    sqrt_d_boundary: &BoundaryValues<f64>,
    cfg: &PipelineConfig,
    route: Route,
    mut diagnostics: Diagnostics,
    warnings: Vec<String>,
) -> Result<ReconResult> {
    let u = recover_u(data, &mu).map_err(|e| e.in_stage("recover_u"))?;
    let valid = mask.interior_flags();
    let mut max_u: f64 = 0.0;
    let mut min_u = f64::INFINITY;
    for k in 0..mask.grid().len() {
        if valid[k] {
            let m = u.values()[k].norm();
            max_u = max_u.max(m);
            min_u = min_u.min(m);
        }
    }
    diagnostics.min_abs_u = min_u;
    let q = recover_q(&u, cfg.u_min_rel * max_u, mask).map_err(|e| e.in_stage("recover_q"))?;
    let sqrt_d = recover_sqrt_d(&q, &mu, sqrt_d_boundary, mask, &cfg.lin)
        .map_err(|e| e.in_stage("recover_sqrt_d"))?;
    let sigma_a =
        recover_sigma(&mu, &sqrt_d, mask).map_err(|e| e.in_stage("recover_sigma"))?;
    let d = sqrt_d.map(|v| v * v);
    Ok(ReconResult {
        mu,
        q,
        sqrt_d,
        d,
        sigma_a,
        route,
        diagnostics,
        warnings,
    })
}

/// Conjugate-pair route: transport solve for mu, then the elliptic chain.
pub fn run_two_data(
    data: &InternalData,
    sqrt_d_boundary: &BoundaryValues<f64>,
    mask: &DomainMask,
    cfg: &PipelineConfig,
) -> Result<ReconResult> {
    let coeffs = beta_gamma_two(data, mask).map_err(|e| e.in_stage("beta_gamma"))?;
    let (mu0, _max_imag) = boundary_mu(data, mask).map_err(|e| e.in_stage("boundary_mu"))?;
    let mu = solve_transport(&coeffs, &mu0, mask, cfg.h_ode, cfg.t_max)
        .map_err(|e| e.in_stage("transport"))?;
    let diag = Diagnostics {
        flatness_gap: coeffs.flatness_gap,
        transport_residual: Some(transport_residual(&coeffs, &mu)?),
        ..Diagnostics::default()
    };
    finish(
        data,
        mu,
        mask,
        sqrt_d_boundary,
        cfg,
        Route::TwoData,
        diag,
        Vec::new(),
    )
}

/// Divergence of Gamma by centered differences (full grid; rim zero).
fn divergence(gamma: &VectorField) -> Result<ScalarField> {
    let (gxx, _) = gamma.x.gradient()?;
    let (_, gyy) = gamma.y.gradient()?;
    let g = *gamma.grid();
    Ok(ScalarField::new(
        g,
        gxx.values()
            .iter()
            .zip(gyy.values())
            .map(|(&a, &b)| a + b)
            .collect(),
    )?)
}

/// sup |grad_h w + Gamma| over doubly-interior valid nodes.
fn gradient_residual(w: &ScalarField, gc: &GradientCoefficient) -> Result<f64> {
    let g = *w.grid();
    let (wx, wy) = w.gradient()?;
    let inner = erode(&gc.valid, &g);
    let mut m: f64 = 0.0;
    for k in 0..g.len() {
        if !inner[k] {
            continue;
        }
        let (i, j) = g.node(k);
        let gm = gc.gamma.get(i, j);
        m = m.max((wx.get(i, j) + gm.0).abs().max((wy.get(i, j) + gm.1).abs()));
    }
    Ok(m)
}

/// Anchor for the path mode: the boundary node nearest the midpoint of the
/// bottom boundary edge (lowest y, then closest to the vertical through the
/// domain center). Fixed for determinism.
fn path_anchor(mask: &DomainMask) -> (usize, usize) {
    let g = *mask.grid();
    let cx = g.center().0;
    let mut best = None;
    for &k in mask.boundary_nodes() {
        let (i, j) = g.node(k);
        let (x, y) = g.pos(i, j);
        let key = (y, (x - cx).abs());
        match best {
            None => best = Some((key, (i, j))),
            Some((bk, _)) if key < bk => best = Some((key, (i, j))),
            _ => {}
        }
    }
    best.expect("mask has boundary nodes").1
}

/// Integrate dw = -Gamma . dx along staircase paths: up/down the anchor's
/// column first, then sideways along each row. Trapezoid rule per cell.
fn integrate_staircase(
    gamma: &VectorField,
    anchor: (usize, usize),
    w0: f64,
) -> Result<ScalarField> {
    let g = *gamma.grid();
    let mut w = ScalarField::constant(g, 0.0);
    let (ai, aj) = anchor;
    w.set(ai, aj, w0);
    for j in aj + 1..g.ny {
        let v = w.get(ai, j - 1)
            - 0.5 * g.dy * (gamma.get(ai, j - 1).1 + gamma.get(ai, j).1);
        w.set(ai, j, v);
    }
    for j in (0..aj).rev() {
        let v = w.get(ai, j + 1)
            + 0.5 * g.dy * (gamma.get(ai, j + 1).1 + gamma.get(ai, j).1);
        w.set(ai, j, v);
    }
    for j in 0..g.ny {
        for i in ai + 1..g.nx {
            let v = w.get(i - 1, j)
                - 0.5 * g.dx * (gamma.get(i - 1, j).0 + gamma.get(i, j).0);
            w.set(i, j, v);
        }
        for i in (0..ai).rev() {
            let v = w.get(i + 1, j)
                + 0.5 * g.dx * (gamma.get(i + 1, j).0 + gamma.get(i, j).0);
            w.set(i, j, v);
        }
    }
    Ok(w)
}

/// Frequency-set route: assemble Gamma = -grad(log mu) pointwise, recover
/// mu in the configured mode, then the elliptic chain on the second datum.
pub fn run_multi_data(
    data: &[InternalData],
    sqrt_d_boundary: &BoundaryValues<f64>,
    mask: &DomainMask,
    cfg: &PipelineConfig,
) -> Result<ReconResult> {
    let coeffs = beta_gamma_multi(data, mask).map_err(|e| e.in_stage("beta_gamma"))?;
    let gc = assemble_gamma(&coeffs, cfg.cond_max).map_err(|e| e.in_stage("assemble_gamma"))?;
    let mut warnings = Vec::new();
    if gc.curl_residual > cfg.curl_warn {
        warnings.push(format!(
            "curl residual {:.3e} exceeds {:.3e}: Gamma is not consistently a gradient \
             (inconsistent or noisy data)",
            gc.curl_residual, cfg.curl_warn
        ));
    }
    let (mu0, _max_imag) =
        boundary_mu(&data[1], mask).map_err(|e| e.in_stage("boundary_mu"))?;
    if !(mu0.min_value() > 0.0) {
        return Err(Error::Domain(format!(
            "boundary mu must be positive (min = {})",
            mu0.min_value()
        ))
        .in_stage("boundary_mu"));
    }

    // Extend Gamma past the stencil rim so both mu modes see nearest-valid
    // values there.
    let mut gx = gc.gamma.x.clone();
    let mut gy = gc.gamma.y.clone();
    fill_nearest(&mut gx, &gc.valid);
    fill_nearest(&mut gy, &gc.valid);
    let gamma_filled = VectorField::new(gx, gy)?;

    let w = match cfg.mu_mode {
        MuMode::Poisson => {
            // grad w = -Gamma  =>  -lap w = div Gamma, w|boundary = log mu0.
            let rhs = divergence(&gamma_filled)?;
            let log_mu0 = BoundaryValues::new(mu0.values().iter().map(|v| v.ln()).collect());
            let zero = ScalarField::constant(*mask.grid(), 0.0);
            solve_shifted(&zero, &rhs, &log_mu0, mask, &cfg.lin)
                .map_err(|e| e.in_stage("mu_poisson"))?
        }
        MuMode::Path => {
            let (ai, aj) = path_anchor(mask);
            let g = *mask.grid();
            let w0 = mu0.interp_at(mask, g.pos(ai, aj)).ln();
            integrate_staircase(&gamma_filled, (ai, aj), w0)
                .map_err(|e| e.in_stage("mu_path"))?
        }
    };
    let mu = w.map(f64::exp);
    let diag = Diagnostics {
        flatness_gap: coeffs[0].flatness_gap.max(coeffs[1].flatness_gap),
        poisson_residual: Some(gradient_residual(&w, &gc)?),
        condition_max: Some(gc.condition_max),
        curl_residual: Some(gc.curl_residual),
        ..Diagnostics::default()
    };
    finish(
        &data[1],
        mu,
        mask,
        sqrt_d_boundary,
        cfg,
        Route::MultiData,
        diag,
        warnings,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use crate::data::synthesize;
    use crate::grid::{boundary_trace, GridSpec};
    use approx::assert_relative_eq;

    #[test]
    fn recover_u_trivials() {
        let g = GridSpec::unit_square(17).unwrap();
        let mask = DomainMask::rectangle(g);
        let mu = ScalarField::constant(g, 1.0);
        let u0 = ComplexField::from_fn(g, |x, y| Complex64::new(1.0 + x, y));
        let tr = boundary_trace(&u0, &mask).unwrap();
        let data = synthesize(&mu, &u0, tr, [1.0, 0.0], g.center()).unwrap();
        let u = recover_u(&data, &mu).unwrap();
        for (a, b) in u.values().iter().zip(u0.values()) {
            assert_eq!(a, b);
        }
        let mu2 = ScalarField::constant(g, 2.0);
        let half = recover_u(&data, &mu2).unwrap();
        for (a, b) in half.values().iter().zip(u0.values()) {
            assert_relative_eq!(a.re, b.re / 2.0);
            assert_relative_eq!(a.im, b.im / 2.0);
        }
        let bad = ScalarField::constant(g, 0.0);
        assert!(recover_u(&data, &bad).is_err());
    }

    #[test]
    fn recover_q_harmonic_pair_gives_zero() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let u = ComplexField::from_fn(g, |x, y| Complex64::new(1.0 + x, y));
        let q = recover_q(&u, 1e-9, &mask).unwrap();
        assert!(q.max_magnitude() < 1e-10, "max |q| = {}", q.max_magnitude());
    }

    #[test]
    fn recover_q_exponential() {
        let errs: Vec<f64> = [33usize, 65]
            .iter()
            .map(|&n| {
                let g = GridSpec::unit_square(n).unwrap();
                let mask = DomainMask::rectangle(g);
                let u = ComplexField::from_fn(g, |x, _| Complex64::new(x.exp(), 0.0));
                let q = recover_q(&u, 1e-9, &mask).unwrap();
                let mut err: f64 = 0.0;
                for k in 0..g.len() {
                    if mask.interior_flags()[k] {
                        err = err.max((q.values()[k] + 1.0).abs());
                    }
                }
                err
            })
            .collect();
        assert!(errs[1] < 1e-3);
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "order {order}, errs {errs:?}");
    }

    #[test]
    fn recover_q_flags_vanishing_u() {
        let g = GridSpec::unit_square(17).unwrap();
        let mask = DomainMask::rectangle(g);
        let u = ComplexField::from_fn(g, |x, y| Complex64::new(x - 0.5, y - 0.5));
        assert!(matches!(
            recover_q(&u, 1e-3, &mask),
            Err(Error::VanishingSolution { .. })
        ));
    }

    #[test]
    fn recover_sqrt_d_analytic_identity() {
        // -lap w + 2 w = e^x has solution w = e^x.
        let g = GridSpec::unit_square(65).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, -2.0);
        let mu = ScalarField::from_fn(g, |x, _| x.exp());
        let bc = BoundaryValues::from_fn(&mask, |x, _| x.exp());
        let w = recover_sqrt_d(&q, &mu, &bc, &mask, &LinearSolveConfig::default()).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, _) = g.pos(i, j);
                err = err.max((w.get(i, j) - x.exp()).abs());
            }
        }
        assert!(err < 5e-5, "max error {err}");
    }

    #[test]
    fn recover_sigma_trivials() {
        let g = GridSpec::unit_square(17).unwrap();
        let mu = ScalarField::constant(g, 2.0);
        let w = ScalarField::constant(g, 3.0);
        let mask = DomainMask::rectangle(g);
        let s = recover_sigma(&mu, &w, &mask).unwrap();
        assert!(s.values().iter().all(|&v| v == 6.0));
        let bad = ScalarField::constant(g, -1.0);
        assert!(recover_sigma(&mu, &bad, &mask).is_err());
    }

    #[test]
    fn liouville_constant_cases() {
        let g = GridSpec::unit_square(33).unwrap();
        let d = ScalarField::constant(g, 1.0);
        let s = ScalarField::from_fn(g, |x, y| 0.5 + 0.1 * x + 0.2 * y);
        let lf = liouville_forward(&d, &s).unwrap();
        for k in 0..g.len() {
            let (i, j) = g.node(k);
            if i > 0 && i < g.nx - 1 && j > 0 && j < g.ny - 1 {
                assert_relative_eq!(lf.q.get(i, j), -s.get(i, j), max_relative = 1e-12);
            }
            assert_relative_eq!(lf.mu.values()[k], s.values()[k], max_relative = 1e-12);
        }

        let d4 = ScalarField::constant(g, 4.0);
        let s1 = ScalarField::constant(g, 1.0);
        let lf = liouville_forward(&d4, &s1).unwrap();
        assert!(lf.q.values().iter().all(|&v| (v + 0.25).abs() < 1e-14));
        assert!(lf.mu.values().iter().all(|&v| (v - 0.5).abs() < 1e-14));
        assert!(lf.sqrt_d.values().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn liouville_gauge_residual_is_second_order() {
        use crate::elliptic::solve_diffusion;
        use crate::phantom::{make_phantom, PhantomSpec};
        let errs: Vec<f64> = [33usize, 65]
            .iter()
            .map(|&n| {
                let g = GridSpec::unit_square(n).unwrap();
                let mask = DomainMask::rectangle(g);
                let spec = PhantomSpec::default_bump(&g);
                let (d, s) = make_phantom(&spec, &g).unwrap();
                let lf = liouville_forward(&d, &s).unwrap();
                let bc = BoundaryValues::from_fn(&mask, |x, _| 1.0 + 0.2 * x);
                let u =
                    solve_diffusion(&d, &s, &bc, &mask, &LinearSolveConfig::default()).unwrap();
                lf.residual(&u, &mask).unwrap()
            })
            .collect();
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.5, "order {order}, errs {errs:?}");
    }

    /// Exactly consistent manufactured data for the chains: d = mu* u with
    /// u = e^{rho.(x-c)} (harmonic since rho.rho = 0, so q ~ 0).
    fn manufactured_two(g: GridSpec, k: f64, mu: &ScalarField) -> (InternalData, DomainMask) {
        let mask = DomainMask::rectangle(g);
        let c = g.center();
        let u = ComplexField::from_fn(g, |x, y| {
            Complex64::new(k * (x - c.0) - 0.0, k * (y - c.1)).exp()
        });
        let d = ComplexField::new(
            g,
            mu.values()
                .iter()
                .zip(u.values())
                .map(|(&m, &v)| v * m)
                .collect(),
        )
        .unwrap();
        let tr = boundary_trace(&u, &mask).unwrap();
        let data = synthesize(mu, &u, tr, [k, 0.0], c).unwrap();
        (InternalData { d, ..data }, mask)
    }

    #[test]
    fn two_data_chain_on_manufactured_data() {
        let g = GridSpec::unit_square(65).unwrap();
        let mu_true = ScalarField::from_fn(g, |x, y| (0.2 * (x - 0.5) - 0.1 * y).exp());
        let (data, mask) = manufactured_two(g, 4.0, &mu_true);
        let bc = BoundaryValues::from_fn(&mask, |x, _| 1.0 + 0.1 * x);
        let res = run_two_data(&data, &bc, &mask, &PipelineConfig::default()).unwrap();
        // mu matches the manufactured field away from the rim.
        let inner = erode(&mask.interior_flags(), &g);
        let mut err: f64 = 0.0;
        for k in 0..g.len() {
            if inner[k] {
                err = err.max((res.mu.values()[k] - mu_true.values()[k]).abs());
            }
        }
        assert!(err < 5e-3, "mu error {err}");
        // q ~ 0 (u is discretely near-harmonic).
        assert!(res.q.max_magnitude() < 0.05, "q magnitude {}", res.q.max_magnitude());
        // Algebraic invariants are exact.
        for k in 0..g.len() {
            assert_eq!(res.d.values()[k], res.sqrt_d.values()[k].powi(2));
            assert_eq!(
                res.sigma_a.values()[k],
                res.mu.values()[k] * res.sqrt_d.values()[k]
            );
        }
        assert!(res.d.min_value() > 0.0);
        assert_eq!(res.route, Route::TwoData);
        assert!(res.diagnostics.min_abs_u > 0.0);
        assert!(res.diagnostics.transport_residual.unwrap() < 0.05);
    }

    fn manufactured_multi(
        g: GridSpec,
        k: f64,
        mu: &ScalarField,
    ) -> (Vec<InternalData>, DomainMask) {
        let mask = DomainMask::rectangle(g);
        let c = g.center();
        let mk = |sign: f64| {
            let u = ComplexField::from_fn(g, |x, y| {
                Complex64::new(sign * k * (x - c.0), sign * k * (y - c.1)).exp()
            });
            let d = ComplexField::new(
                g,
                mu.values()
                    .iter()
                    .zip(u.values())
                    .map(|(&m, &v)| v * m)
                    .collect(),
            )
            .unwrap();
            let tr = boundary_trace(&u, &mask).unwrap();
            let data = synthesize(mu, &u, tr, [sign * k, 0.0], c).unwrap();
            InternalData { d, ..data }
        };
        (vec![mk(-1.0), mk(1.0)], mask)
    }

    #[test]
    fn multi_data_constant_mu_both_modes() {
        let g = GridSpec::unit_square(33).unwrap();
        let mu_true = ScalarField::constant(g, 1.0);
        let (data, mask) = manufactured_multi(g, 4.0, &mu_true);
        let bc = BoundaryValues::from_fn(&mask, |_, _| 1.0);
        for mode in [MuMode::Poisson, MuMode::Path] {
            let cfg = PipelineConfig {
                mu_mode: mode,
                ..PipelineConfig::default()
            };
            let res = run_multi_data(&data, &bc, &mask, &cfg).unwrap();
            let mut err: f64 = 0.0;
            for &v in res.mu.values() {
                err = err.max((v - 1.0).abs());
            }
            assert!(err < 1e-8, "{mode:?} mu error {err}");
        }
    }

    #[test]
    fn multi_data_poisson_recovers_manufactured_mu() {
        let errs: Vec<f64> = [33usize, 65]
            .iter()
            .map(|&n| {
                let g = GridSpec::unit_square(n).unwrap();
                let mu_true = ScalarField::from_fn(g, |x, y| {
                    (0.25 * (2.0 * x).sin() * (1.5 * y).cos()).exp()
                });
                let (data, mask) = manufactured_multi(g, 4.0, &mu_true);
                let bc = BoundaryValues::from_fn(&mask, |_, _| 1.0);
                let res = run_multi_data(&data, &bc, &mask, &PipelineConfig::default()).unwrap();
                let mut err: f64 = 0.0;
                for k in 0..g.len() {
                    err = err.max((res.mu.values()[k] - mu_true.values()[k]).abs());
                }
                err
            })
            .collect();
        assert!(errs[1] < 5e-3, "errs {errs:?}");
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.2, "order {order}, errs {errs:?}");
    }

    #[test]
    fn multi_data_modes_agree() {
        let g = GridSpec::unit_square(65).unwrap();
        let mu_true = ScalarField::from_fn(g, |x, y| (0.3 * (x - 0.5) + 0.2 * (y - 0.5)).exp());
        let (data, mask) = manufactured_multi(g, 4.0, &mu_true);
        let bc = BoundaryValues::from_fn(&mask, |_, _| 1.0);
        let poisson =
            run_multi_data(&data, &bc, &mask, &PipelineConfig::default()).unwrap();
        let path = run_multi_data(
            &data,
            &bc,
            &mask,
            &PipelineConfig {
                mu_mode: MuMode::Path,
                ..PipelineConfig::default()
            },
        )
        .unwrap();
        let mut ep: f64 = 0.0;
        let mut es: f64 = 0.0;
        let mut gap: f64 = 0.0;
        for k in 0..g.len() {
            ep = ep.max((poisson.mu.values()[k] - mu_true.values()[k]).abs());
            es = es.max((path.mu.values()[k] - mu_true.values()[k]).abs());
            gap = gap.max((poisson.mu.values()[k] - path.mu.values()[k]).abs());
        }
        assert!(gap <= 3.0 * ep.max(es), "gap {gap}, errors {ep} / {es}");
    }

    #[test]
    fn two_and_multi_routes_agree() {
        let g = GridSpec::unit_square(65).unwrap();
        let mu_true = ScalarField::from_fn(g, |x, y| (0.2 * (x - 0.5) - 0.1 * y).exp());
        let (two, mask) = manufactured_two(g, 4.0, &mu_true);
        let (multi, _) = manufactured_multi(g, 4.0, &mu_true);
        let bc = BoundaryValues::from_fn(&mask, |x, _| 1.0 + 0.1 * x);
        let cfg = PipelineConfig::default();
        let a = run_two_data(&two, &bc, &mask, &cfg).unwrap();
        let b = run_multi_data(&multi, &bc, &mask, &cfg).unwrap();
        let inner = erode(&mask.interior_flags(), &g);
        let mut ea: f64 = 0.0;
        let mut eb: f64 = 0.0;
        let mut gap: f64 = 0.0;
        for k in 0..g.len() {
            if !inner[k] {
                continue;
            }
            ea = ea.max((a.mu.values()[k] - mu_true.values()[k]).abs());
            eb = eb.max((b.mu.values()[k] - mu_true.values()[k]).abs());
            gap = gap.max((a.mu.values()[k] - b.mu.values()[k]).abs());
        }
        assert!(gap <= 3.0 * (ea + eb), "gap {gap}, errors {ea} / {eb}");
    }
}
