//! Closed-form smooth phantoms: constant backgrounds plus Gaussian bumps,
//! with hard bounds validated at construction.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

/// One Gaussian bump: amp * exp(-|x - center|^2 / (2 width^2)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBump {
    pub center: (f64, f64),
    pub width: f64,
    pub amp: f64,
}

impl GaussianBump {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.center.0).powi(2) + (y - self.center.1).powi(2);
        self.amp * (-r2 / (2.0 * self.width * self.width)).exp()
    }
}

/// Specification of a (D, sigma_a) phantom pair.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub d_bg: f64,
    pub sigma_bg: f64,
    pub d_bumps: Vec<GaussianBump>,
    pub sigma_bumps: Vec<GaussianBump>,
    /// Admissible ranges [d_min, d_max] for D and [s_min, s_max] for sigma_a.
    pub d_bounds: (f64, f64),
    pub s_bounds: (f64, f64),
}

impl PhantomSpec {
    /// The default acceptance phantom: D in [1, 1.5], sigma_a in [0.5, 1].
    pub fn default_bump(grid: &GridSpec) -> PhantomSpec {
        let c = grid.center();
        let w = grid.width().min(grid.height());
        PhantomSpec {
            d_bg: 1.1,
            sigma_bg: 0.6,
            d_bumps: vec![GaussianBump {
                center: (c.0 - 0.1 * w, c.1 + 0.05 * w),
                width: 0.15 * w,
                amp: 0.3,
            }],
            sigma_bumps: vec![GaussianBump {
                center: (c.0 + 0.12 * w, c.1 - 0.08 * w),
                width: 0.18 * w,
                amp: 0.25,
            }],
            d_bounds: (1.0, 1.5),
            s_bounds: (0.5, 1.0),
        }
    }

    /// Constant phantom with no bumps.
    pub fn constant(d_bg: f64, sigma_bg: f64) -> PhantomSpec {
        PhantomSpec {
            d_bg,
            sigma_bg,
            d_bumps: Vec::new(),
            sigma_bumps: Vec::new(),
            d_bounds: (d_bg.min(1.0).min(d_bg) * 0.5, d_bg * 2.0),
            s_bounds: (sigma_bg * 0.5, sigma_bg * 2.0),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.d_bounds.0 > 0.0 && self.d_bounds.0 < self.d_bounds.1) {
            return Err(Error::Config("phantom: invalid D bounds".into()));
        }
        if !(self.s_bounds.0 > 0.0 && self.s_bounds.0 < self.s_bounds.1) {
            return Err(Error::Config("phantom: invalid sigma_a bounds".into()));
        }
        for b in self.d_bumps.iter().chain(&self.sigma_bumps) {
            if !(b.width > 0.0) {
                return Err(Error::Config("phantom: bump width must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn eval_d(&self, x: f64, y: f64) -> f64 {
        self.d_bg + self.d_bumps.iter().map(|b| b.eval(x, y)).sum::<f64>()
    }

    pub fn eval_sigma(&self, x: f64, y: f64) -> f64 {
        self.sigma_bg + self.sigma_bumps.iter().map(|b| b.eval(x, y)).sum::<f64>()
    }
}

/// Evaluate the phantom on a grid. The fields are smooth by construction;
/// a bump pushing a value outside the declared bounds is an error (no
/// silent clipping, which would break the smoothness the transport
/// arguments rely on).
pub fn make_phantom(spec: &PhantomSpec, grid: &GridSpec) -> Result<(ScalarField, ScalarField)> {
    spec.validate()?;
    let d = ScalarField::from_fn(*grid, |x, y| spec.eval_d(x, y));
    let s = ScalarField::from_fn(*grid, |x, y| spec.eval_sigma(x, y));
    let (dmin, dmax) = (d.min_value(), d.max_value());
    if dmin < spec.d_bounds.0 - 1e-12 || dmax > spec.d_bounds.1 + 1e-12 {
        return Err(Error::OutOfRange(dmin, dmax));
    }
    let (smin, smax) = (s.min_value(), s.max_value());
    if smin < spec.s_bounds.0 - 1e-12 || smax > spec.s_bounds.1 + 1e-12 {
        return Err(Error::OutOfRange(smin, smax));
    }
    Ok((d, s))
}
