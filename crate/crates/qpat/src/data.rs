//! Internal data d = mu * u: synthesis, smooth noise injection, and the
//! boundary values mu_0 = d/g that seed the transport solve.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{
    boundary_trace, BoundaryValues, ComplexField, DomainMask, ScalarField,
};

/// Where a datum came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Clean,
    Noisy { level: f64, seed: u64 },
}

impl Provenance {
    pub fn manifest_value(&self) -> String {
        match self {
            Provenance::Clean => "clean".to_string(),
            Provenance::Noisy { level, seed } => format!("noisy {level:e} {seed}"),
        }
    }
}

/// One internal datum with its illumination and frequency metadata.
#[derive(Debug, Clone)]
pub struct InternalData {
    pub d: ComplexField,
    /// Boundary illumination g = u|dX in the mask's traversal order.
    pub g: BoundaryValues<Complex64>,
    /// Real frequency vector kappa of the illumination's rho = kappa + i kperp.
    pub kappa: [f64; 2],
    /// Envelope centering shared with the CGO construction.
    pub center: (f64, f64),
    pub provenance: Provenance,
    /// Recorded lower bound of |g| over the boundary.
    pub g_min: f64,
}

/// d = mu * u nodewise; mu must be strictly positive.
pub fn synthesize(
    mu: &ScalarField,
    u: &ComplexField,
    g: BoundaryValues<Complex64>,
    kappa: [f64; 2],
    center: (f64, f64),
) -> Result<InternalData> {
    if mu.grid() != u.grid() {
        return Err(Error::Dimension("mu and u grids differ".into()));
    }
    if mu.min_value() <= 0.0 {
        return Err(Error::Domain("mu must be strictly positive".into()));
    }
    let d = ComplexField::new(
        *u.grid(),
        mu.values()
            .iter()
            .zip(u.values())
            .map(|(&m, &v)| v * m)
            .collect(),
    )?;
    if !d.values().iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(Error::Domain("non-finite internal data".into()));
    }
    let g_min = g
        .values
        .iter()
        .map(|v| v.norm())
        .fold(f64::INFINITY, f64::min);
    Ok(InternalData {
        d,
        g,
        kappa,
        center,
        provenance: Provenance::Clean,
        g_min,
    })
}

/// Discrete C^1 seminorm: max of nodal magnitudes and forward divided
/// differences in both directions.
pub fn c1_seminorm(f: &ComplexField) -> f64 {
    let g = f.grid();
    let mut m: f64 = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let v = f.get(i, j);
            m = m.max(v.norm());
            if i + 1 < g.nx {
                m = m.max((f.get(i + 1, j) - v).norm() / g.dx);
            }
            if j + 1 < g.ny {
                m = m.max((f.get(i, j + 1) - v).norm() / g.dy);
            }
        }
    }
    m
}

/// A smooth correlated Gaussian random field: white noise convolved with a
/// separable Gaussian kernel of physical width corr_width.
fn correlated_field(
    grid: &crate::grid::GridSpec,
    corr_width: f64,
    rng: &mut ChaCha8Rng,
) -> ComplexField {
    let g = *grid;
    let mut white = Vec::with_capacity(g.len());
    for _ in 0..g.len() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        white.push(Complex64::new(re, im));
    }
    let kernel = |sigma_cells: f64| -> Vec<f64> {
        let r = (3.0 * sigma_cells).ceil().max(1.0) as i64;
        let mut k: Vec<f64> = (-r..=r)
            .map(|t| (-0.5 * (t as f64 / sigma_cells).powi(2)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        for v in &mut k {
            *v /= s;
        }
        k
    };
    let kx = kernel(corr_width / g.dx);
    let ky = kernel(corr_width / g.dy);
    let rx = (kx.len() as i64 - 1) / 2;
    let ry = (ky.len() as i64 - 1) / 2;
    let clamp = |t: i64, n: usize| t.clamp(0, n as i64 - 1) as usize;
    // Convolve along x, then y, clamping at edges.
    let mut tmp = vec![Complex64::default(); g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let mut acc = Complex64::default();
            for (t, w) in kx.iter().enumerate() {
                let src = clamp(i as i64 + t as i64 - rx, g.nx);
                acc += white[g.idx(src, j)] * *w;
            }
            tmp[g.idx(i, j)] = acc;
        }
    }
    let mut out = vec![Complex64::default(); g.len()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            let mut acc = Complex64::default();
            for (t, w) in ky.iter().enumerate() {
                let src = clamp(j as i64 + t as i64 - ry, g.ny);
                acc += tmp[g.idx(i, src)] * *w;
            }
            out[g.idx(i, j)] = acc;
        }
    }
    ComplexField::new(g, out).expect("length matches grid")
}

/// Add a smooth random perturbation whose discrete C^1 seminorm equals
/// `level`. Deterministic per seed; level = 0 returns the datum unchanged.
pub fn add_noise(
    data: &InternalData,
    level: f64,
    corr_width: f64,
    seed: u64,
) -> Result<InternalData> {
    if level < 0.0 {
        return Err(Error::Config("noise level must be nonnegative".into()));
    }
    let mut out = data.clone();
    out.provenance = Provenance::Noisy { level, seed };
    if level == 0.0 {
        return Ok(out);
    }
    if !(corr_width > 0.0) {
        return Err(Error::Config("corr_width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = correlated_field(data.d.grid(), corr_width, &mut rng);
    let norm = c1_seminorm(&raw);
    if norm == 0.0 {
        return Err(Error::Domain("degenerate noise field".into()));
    }
    let scale = level / norm;
    out.d = ComplexField::new(
        *data.d.grid(),
        data.d
            .values()
            .iter()
            .zip(raw.values())
            .map(|(&d, &p)| d + p * scale)
            .collect(),
    )?;
    Ok(out)
}

/// mu_0 = Re(d|dX / g) per boundary node. Returns the boundary values and
/// the largest imaginary part of d/g as a consistency diagnostic.
pub fn boundary_mu(
    data: &InternalData,
    mask: &DomainMask,
) -> Result<(BoundaryValues<f64>, f64)> {
    let trace = boundary_trace(&data.d, mask)?;
    if trace.values.len() != data.g.values.len() {
        return Err(Error::Dimension(
            "boundary trace and illumination lengths differ".into(),
        ));
    }
    let g_max = data
        .g
        .values
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    let floor = 1e-9 * g_max;
    let mut mu0 = Vec::with_capacity(trace.values.len());
    let mut max_imag: f64 = 0.0;
    for (dv, gv) in trace.values.iter().zip(&data.g.values) {
        if gv.norm() <= floor {
            return Err(Error::DivisionHazard {
                min_abs: gv.norm(),
                floor,
            });
        }
        let ratio = dv / gv;
        mu0.push(ratio.re);
        max_imag = max_imag.max(ratio.im.abs());
    }
    Ok((BoundaryValues::new(mu0), max_imag))
}

/// mu = sigma_a / sqrt(D) nodewise.
pub fn mu_from_phantom(d: &ScalarField, sigma_a: &ScalarField) -> Result<ScalarField> {
    if d.grid() != sigma_a.grid() {
        return Err(Error::Dimension("D and sigma_a grids differ".into()));
    }
    if d.min_value() <= 0.0 {
        return Err(Error::Domain("D must be strictly positive".into()));
    }
    Ok(ScalarField::new(
        *d.grid(),
        d.values()
            .iter()
            .zip(sigma_a.values())
            .map(|(&dv, &sv)| sv / dv.sqrt())
            .collect(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn simple_data(n: usize) -> (InternalData, DomainMask) {
        let g = GridSpec::unit_square(n).unwrap();
        let mask = DomainMask::rectangle(g);
        let mu = ScalarField::constant(g, 1.0);
        let u = ComplexField::from_fn(g, |x, y| Complex64::new(1.0 + x, y));
        let trace = boundary_trace(&u, &mask).unwrap();
        let data = synthesize(&mu, &u, trace, [8.0, 0.0], g.center()).unwrap();
        (data, mask)
    }

    #[test]
    fn synthesize_identity_mu() {
        let g = GridSpec::unit_square(9).unwrap();
        let mask = DomainMask::rectangle(g);
        let mu = ScalarField::constant(g, 1.0);
        let u = ComplexField::from_fn(g, |x, y| Complex64::new(x, -y));
        let tr = boundary_trace(&u, &mask).unwrap();
        let d = synthesize(&mu, &u, tr, [1.0, 0.0], g.center()).unwrap();
        assert_eq!(d.d.values(), u.values());
    }

    #[test]
    fn synthesize_constant_product() {
        let g = GridSpec::unit_square(9).unwrap();
        let mask = DomainMask::rectangle(g);
        let mu = ScalarField::constant(g, 2.0);
        let u = ComplexField::constant(g, Complex64::new(1.0, 0.0));
        let tr = boundary_trace(&u, &mask).unwrap();
        let d = synthesize(&mu, &u, tr, [1.0, 0.0], g.center()).unwrap();
        assert!(d.d.values().iter().all(|v| *v == Complex64::new(2.0, 0.0)));
    }

    #[test]
    fn synthesize_rejects_nonpositive_mu() {
        let g = GridSpec::unit_square(9).unwrap();
        let mask = DomainMask::rectangle(g);
        let mu = ScalarField::constant(g, 0.0);
        let u = ComplexField::constant(g, Complex64::new(1.0, 0.0));
        let tr = boundary_trace(&u, &mask).unwrap();
        assert!(synthesize(&mu, &u, tr, [1.0, 0.0], g.center()).is_err());
    }

    #[test]
    fn noise_level_zero_is_identity() {
        let (data, _) = simple_data(17);
        let noisy = add_noise(&data, 0.0, 0.1, 42).unwrap();
        assert_eq!(noisy.d.values(), data.d.values());
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let (data, _) = simple_data(17);
        let a = add_noise(&data, 1e-3, 4.0 / 16.0, 7).unwrap();
        let b = add_noise(&data, 1e-3, 4.0 / 16.0, 7).unwrap();
        assert_eq!(a.d.values(), b.d.values());
        let c = add_noise(&data, 1e-3, 4.0 / 16.0, 8).unwrap();
        assert_ne!(a.d.values(), c.d.values());
    }

    #[test]
    fn noise_magnitude_matches_level() {
        let (data, _) = simple_data(33);
        let level = 1e-3;
        let noisy = add_noise(&data, level, 4.0 / 32.0, 3).unwrap();
        let diff = ComplexField::new(
            *data.d.grid(),
            noisy
                .d
                .values()
                .iter()
                .zip(data.d.values())
                .map(|(a, b)| a - b)
                .collect(),
        )
        .unwrap();
        let measured = c1_seminorm(&diff);
        assert!(
            (0.9e-3..=1.1e-3).contains(&measured),
            "measured {measured}"
        );
    }

    #[test]
    fn noise_scales_linearly_with_level() {
        let (data, _) = simple_data(17);
        let a = add_noise(&data, 1e-4, 0.1, 5).unwrap();
        let b = add_noise(&data, 1e-2, 0.1, 5).unwrap();
        for k in 0..data.d.grid().len() {
            let pa = a.d.values()[k] - data.d.values()[k];
            let pb = b.d.values()[k] - data.d.values()[k];
            assert!((pb - pa * 100.0).norm() <= 1e-2 * pa.norm().max(1e-18) + 1e-15);
        }
    }

    #[test]
    fn boundary_mu_identity_and_scaling() {
        let (data, mask) = simple_data(9);
        let (mu0, imag) = boundary_mu(&data, &mask).unwrap();
        assert!(mu0.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(imag < 1e-14);
        let mut doubled = data.clone();
        doubled.d = data.d.map(|v| v * 2.0);
        let (mu2, _) = boundary_mu(&doubled, &mask).unwrap();
        assert!(mu2.values.iter().all(|&v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn boundary_mu_division_hazard() {
        let (mut data, mask) = simple_data(9);
        data.g.values[0] = Complex64::default();
        assert!(matches!(
            boundary_mu(&data, &mask),
            Err(Error::DivisionHazard { .. })
        ));
    }

    #[test]
    fn mu_from_phantom_formulas() {
        let g = GridSpec::unit_square(9).unwrap();
        let d1 = ScalarField::constant(g, 1.0);
        let s = ScalarField::from_fn(g, |x, _| 0.5 + x * 0.1);
        let mu = mu_from_phantom(&d1, &s).unwrap();
        assert_eq!(mu.values(), s.values());
        let d4 = ScalarField::constant(g, 4.0);
        let s2 = ScalarField::constant(g, 2.0);
        let mu2 = mu_from_phantom(&d4, &s2).unwrap();
        assert!(mu2.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let d0 = ScalarField::constant(g, -1.0);
        assert!(mu_from_phantom(&d0, &s2).is_err());
    }
}
