//! End-to-end experiments: phantom round trips, noise-stability sweeps,
//! remainder-decay and field-flatness measurements. Every report row is
//! tagged with the hash of the canonical configuration and the seed, so a
//! run is reproducible bit-for-bit from (config, seed) on the same build.

use sha2::{Digest, Sha256};

use crate::cgo::{cgo_solution, multi_rho_set, CGOParams, CgoConfig};
use crate::data::{add_noise, c1_seminorm, synthesize, InternalData};
use crate::error::{Error, Result};
use crate::grid::{
    boundary_trace, erode, BoundaryValues, DomainMask, GridSpec, ScalarField,
};
use crate::io::Config;
use crate::phantom::{make_phantom, PhantomSpec};
use crate::pipeline::{
    liouville_forward, run_multi_data, run_two_data, LiouvilleFields, PipelineConfig, ReconResult,
    Route,
};
use crate::recon::beta_gamma_two;

/// Tabular result of one experiment. `rows` carry the config-hash and seed
/// tags as their first two cells; `summary` holds fitted slopes and other
/// scalar findings; `passed` is the experiment's own acceptance verdict
/// where one is defined.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub config_hash: String,
    /// Whether the mask satisfies the uniform tangent-ball (strict
    /// convexity) condition: true for disks, false for rectangles.
    pub r0_flag: bool,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Vec<(String, f64)>,
    pub notes: Vec<String>,
    pub passed: Option<bool>,
}

impl ExperimentReport {
    pub fn new(name: &str, config: &Config, r0_flag: bool, columns: &[&str]) -> Self {
        let mut cols = vec!["config".to_string(), "seed".to_string()];
        cols.extend(columns.iter().map(|c| c.to_string()));
        ExperimentReport {
            name: name.to_string(),
            config_hash: config_hash(config),
            r0_flag,
            columns: cols,
            rows: Vec::new(),
            summary: Vec::new(),
            notes: Vec::new(),
            passed: None,
        }
    }

    pub fn push_row(&mut self, seed: Option<u64>, cells: Vec<String>) {
        let mut row = vec![
            self.config_hash.clone(),
            seed.map_or_else(|| "-".to_string(), |s| s.to_string()),
        ];
        row.extend(cells);
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|&(_, v)| v)
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        crate::io::write_csv(path, &header, &self.rows)
    }
}

/// Short hex digest of the canonical configuration text.
pub fn config_hash(config: &Config) -> String {
    let digest = Sha256::digest(config.canonical_string().as_bytes());
    let mut s = String::new();
    for b in &digest[..6] {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Least-squares slope and intercept of ln(y) against ln(x).
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Dimension(
            "log-log fit needs at least two paired samples".into(),
        ));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain(
            "log-log fit requires strictly positive samples".into(),
        ));
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for k in 0..xs.len() {
        sxy += (lx[k] - mx) * (ly[k] - my);
        sxx += (lx[k] - mx) * (lx[k] - mx);
    }
    if sxx == 0.0 {
        return Err(Error::Domain("log-log fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mask geometry choice for experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskKind {
    Rectangle,
    /// Disk of the given radius about the grid center.
    Disk(f64),
}

impl MaskKind {
    pub fn build(&self, grid: GridSpec) -> Result<DomainMask> {
        match *self {
            MaskKind::Rectangle => Ok(DomainMask::rectangle(grid)),
            MaskKind::Disk(r) => DomainMask::disk(grid, grid.center(), r),
        }
    }

    pub fn r0(&self) -> bool {
        matches!(self, MaskKind::Disk(_))
    }
}

/// Ground truth and synthetic data for one phantom at one resolution.
pub struct SyntheticCase {
    pub mask: DomainMask,
    pub d_true: ScalarField,
    pub sigma_true: ScalarField,
    pub lf: LiouvilleFields,
    pub data: Vec<InternalData>,
    pub sqrt_d_boundary: BoundaryValues<f64>,
}

/// Forward-model a phantom into clean internal data: Liouville transform,
/// CGO illumination(s) for the transformed potential, d = mu u.
pub fn synthesize_case(
    spec: &PhantomSpec,
    mask_kind: MaskKind,
    route: Route,
    kmag: f64,
    n: usize,
    cgo_cfg: &CgoConfig,
) -> Result<SyntheticCase> {
    let grid = GridSpec::unit_square(n)?;
    let mask = mask_kind.build(grid)?;
    let (d_true, sigma_true) = make_phantom(spec, &grid)?;
    let lf = liouville_forward(&d_true, &sigma_true)?;
    let params_list: Vec<CGOParams> = match route {
        Route::TwoData => vec![CGOParams::from_kappa([kmag, 0.0])?],
        Route::MultiData => multi_rho_set(kmag)?.to_vec(),
    };
    let mut data = Vec::new();
    for params in &params_list {
        let sol = cgo_solution(&lf.q, &mask, params, cgo_cfg)?;
        data.push(synthesize(
            &lf.mu,
            &sol.u_on_mask,
            sol.trace,
            params.kappa,
            sol.center,
        )?);
    }
    let sqrt_d_boundary = BoundaryValues::new(
        boundary_trace(&lf.sqrt_d, &mask)?.values,
    );
    Ok(SyntheticCase {
        mask,
        d_true,
        sigma_true,
        lf,
        data,
        sqrt_d_boundary,
    })
}

/// Reconstruct a case with the route it was synthesized for.
pub fn reconstruct_case(case: &SyntheticCase, cfg: &PipelineConfig) -> Result<ReconResult> {
    match case.data.len() {
        1 => run_two_data(&case.data[0], &case.sqrt_d_boundary, &case.mask, cfg),
        _ => run_multi_data(&case.data, &case.sqrt_d_boundary, &case.mask, cfg),
    }
}

/// Relative sup error of `got` vs `want` over the doubly-eroded mask
/// interior (rim rows are extrapolated, not reconstructed).
pub fn relative_sup_error(
    got: &ScalarField,
    want: &ScalarField,
    mask: &DomainMask,
) -> f64 {
    let g = *mask.grid();
    let region = erode(&erode(&mask.interior_flags(), &g), &g);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for k in 0..g.len() {
        if region[k] {
            num = num.max((got.values()[k] - want.values()[k]).abs());
            den = den.max(want.values()[k].abs());
        }
    }
    num / den.max(f64::MIN_POSITIVE)
}

fn case_errors(res: &ReconResult, case: &SyntheticCase) -> [f64; 4] {
    [
        relative_sup_error(&res.mu, &case.lf.mu, &case.mask),
        relative_sup_error(&res.q, &case.lf.q, &case.mask),
        relative_sup_error(&res.d, &case.d_true, &case.mask),
        relative_sup_error(&res.sigma_a, &case.sigma_true, &case.mask),
    ]
}

fn base_config(
    spec_tag: &str,
    route: Route,
    kmag: f64,
    mask_kind: MaskKind,
) -> Config {
    let mut c = Config::default();
    c.set("experiment.phantom", spec_tag);
    c.set(
        "experiment.route",
        match route {
            Route::TwoData => "two-data",
            Route::MultiData => "multi-data",
        },
    );
    c.set("experiment.kmag", kmag);
    c.set(
        "experiment.mask",
        match mask_kind {
            MaskKind::Rectangle => "rect".to_string(),
            MaskKind::Disk(r) => format!("disk:{r}"),
        },
    );
    c
}

/// Forward-solve, synthesize, and reconstruct a phantom at each resolution;
/// reports per-quantity relative sup errors and the fitted convergence
/// order of the mu error.
#[allow(clippy::too_many_arguments)]
pub fn roundtrip_experiment(
    spec: &PhantomSpec,
    spec_tag: &str,
    route: Route,
    kmag: f64,
    mask_kind: MaskKind,
    resolutions: &[usize],
    cgo_cfg: &CgoConfig,
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let config = base_config(spec_tag, route, kmag, mask_kind);
    let mut report = ExperimentReport::new(
        "roundtrip",
        &config,
        mask_kind.r0(),
        &["n", "err_mu", "err_q", "err_D", "err_sigma_a"],
    );
    let mut hs = Vec::new();
    let mut mu_errs = Vec::new();
    for &n in resolutions {
        let case = synthesize_case(spec, mask_kind, route, kmag, n, cgo_cfg)?;
        let res = reconstruct_case(&case, cfg)?;
        let e = case_errors(&res, &case);
        report.push_row(
            None,
            vec![
                n.to_string(),
                format!("{:.6e}", e[0]),
                format!("{:.6e}", e[1]),
                format!("{:.6e}", e[2]),
                format!("{:.6e}", e[3]),
            ],
        );
        hs.push(1.0 / (n as f64 - 1.0));
        mu_errs.push(e[0].max(1e-16));
    }
    if resolutions.len() >= 2 {
        let (order, _) = fit_loglog(&hs, &mu_errs)?;
        report.summary.push(("mu_order".to_string(), order));
    }
    if let Some(last) = report.rows.last() {
        for (i, key) in ["err_mu", "err_q", "err_D", "err_sigma_a"].iter().enumerate() {
            let v: f64 = last[i + 3].parse().unwrap_or(f64::NAN);
            report.summary.push((format!("final_{key}"), v));
        }
    }
    Ok(report)
}

/// Noise-stability sweep: reconstruction error against the measured data
/// perturbation norm, fitted on medians over seeds. The primary metric is
/// recon(noisy) vs recon(clean) — comparing two reconstructions matches the
/// stability statements and avoids the clean-run discretization floor;
/// error vs ground truth is reported alongside.
#[allow(clippy::too_many_arguments)]
pub fn stability_sweep(
    spec: &PhantomSpec,
    spec_tag: &str,
    route: Route,
    kmag: f64,
    mask_kind: MaskKind,
    n: usize,
    levels: &[f64],
    seeds: &[u64],
    corr_width: f64,
    cgo_cfg: &CgoConfig,
    cfg: &PipelineConfig,
) -> Result<ExperimentReport> {
    let mut config = base_config(spec_tag, route, kmag, mask_kind);
    config.set("experiment.resolution", n);
    config.set("experiment.corr_width", corr_width);
    let mut report = ExperimentReport::new(
        "stability",
        &config,
        mask_kind.r0(),
        &["level", "data_norm", "err_mu_vs_clean", "err_mu_vs_true"],
    );
    let case = synthesize_case(spec, mask_kind, route, kmag, n, cgo_cfg)?;
    let clean = reconstruct_case(&case, cfg)?;
    let mut med_norms = Vec::new();
    let mut med_errs = Vec::new();
    for &level in levels {
        let mut norms = Vec::new();
        let mut errs = Vec::new();
        for &seed in seeds {
            let noisy_data: Vec<InternalData> = case
                .data
                .iter()
                .map(|d| add_noise(d, level, corr_width, seed))
                .collect::<Result<_>>()?;
            let noisy_case = SyntheticCase {
                data: noisy_data,
                ..SyntheticCase {
                    mask: case.mask.clone(),
                    d_true: case.d_true.clone(),
                    sigma_true: case.sigma_true.clone(),
                    lf: case.lf.clone(),
                    data: Vec::new(),
                    sqrt_d_boundary: BoundaryValues::new(
                        case.sqrt_d_boundary.values().to_vec(),
                    ),
                }
            };
            let diff = crate::grid::ComplexField::new(
                *case.mask.grid(),
                noisy_case.data[0]
                    .d
                    .values()
                    .iter()
                    .zip(case.data[0].d.values())
                    .map(|(&a, &b)| a - b)
                    .collect(),
            )?;
            let data_norm = c1_seminorm(&diff);
            let res = reconstruct_case(&noisy_case, cfg)?;
            let err_clean = relative_sup_error(&res.mu, &clean.mu, &case.mask);
            let err_true = relative_sup_error(&res.mu, &case.lf.mu, &case.mask);
            report.push_row(
                Some(seed),
                vec![
                    format!("{level:e}"),
                    format!("{data_norm:.6e}"),
                    format!("{err_clean:.6e}"),
                    format!("{err_true:.6e}"),
                ],
            );
            norms.push(data_norm);
            errs.push(err_clean);
        }
        med_norms.push(median(norms));
        med_errs.push(median(errs));
    }
    let (slope, intercept) = fit_loglog(&med_norms, &med_errs)?;
    report.summary.push(("slope".to_string(), slope));
    report
        .summary
        .push(("lipschitz_log_intercept".to_string(), intercept));
    let monotone = med_errs.windows(2).all(|w| w[1] >= w[0]);
    report
        .summary
        .push(("medians_monotone".to_string(), monotone as u8 as f64));
    report.passed = Some((0.8..=1.2).contains(&slope) && monotone);
    Ok(report)
}

/// sup |psi| over the reconstruction domain X, sampled from psi's own grid.
pub fn psi_sup_on_domain(psi: &crate::grid::ComplexField, domain: &GridSpec) -> f64 {
    let pg = *psi.grid();
    let (x1, y1) = (domain.x0 + domain.width(), domain.y0 + domain.height());
    let mut m: f64 = 0.0;
    for j in 0..pg.ny {
        for i in 0..pg.nx {
            let (x, y) = pg.pos(i, j);
            if x >= domain.x0 - 1e-12 && x <= x1 + 1e-12 && y >= domain.y0 - 1e-12 && y <= y1 + 1e-12
            {
                m = m.max(psi.get(i, j).norm());
            }
        }
    }
    m
}

/// Remainder decay table: |kappa|, sup|psi| on X, and their product, which
/// the continuum estimate predicts stays bounded (the boxed Dirichlet
/// truncation does not reproduce this; see the flag in the summary).
pub fn psi_decay_experiment(
    q: &ScalarField,
    mask: &DomainMask,
    kmags: &[f64],
    cgo_cfg: &CgoConfig,
) -> Result<ExperimentReport> {
    let mut config = Config::default();
    config.set("experiment.kind", "psi-decay");
    config.set("experiment.resolution", mask.grid().nx);
    let mut report = ExperimentReport::new(
        "psi-decay",
        &config,
        false,
        &["kmag", "psi_sup", "kmag_times_psi_sup"],
    );
    let mut products = Vec::new();
    let mut sups = Vec::new();
    for &kmag in kmags {
        let params = CGOParams::from_kappa([kmag, 0.0])?;
        let sol = cgo_solution(q, mask, &params, cgo_cfg)?;
        let sup = psi_sup_on_domain(&sol.psi, mask.grid());
        report.push_row(
            None,
            vec![
                format!("{kmag}"),
                format!("{sup:.6e}"),
                format!("{:.6e}", kmag * sup),
            ],
        );
        products.push(kmag * sup);
        sups.push(sup);
    }
    let pmax = products.iter().cloned().fold(0.0, f64::max);
    let pmin = products.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if pmin > 0.0 { pmax / pmin } else { f64::INFINITY };
    report.summary.push(("product_spread".to_string(), spread));
    let mut ratios_ok = true;
    for w in sups.windows(2) {
        if w[0] > 0.0 {
            let r = w[1] / w[0];
            report
                .summary
                .push(("consecutive_ratio".to_string(), r));
            if !(0.3..=0.7).contains(&r) {
                ratios_ok = false;
            }
        }
    }
    report.passed = Some(spread <= 3.0 && ratios_ok);
    if report.passed != Some(true) {
        report.notes.push(
            "remainder grows with frequency on the boxed Dirichlet formulation; \
             the decay predicted for the free-space problem is not reproduced"
                .to_string(),
        );
    }
    Ok(report)
}

/// Field flatness: measured misalignment of beta with its leading constant
/// direction, against |kappa| (predicted to decay like 1/|kappa| in the
/// continuum formulation).
pub fn flatness_experiment(
    spec: &PhantomSpec,
    spec_tag: &str,
    mask_kind: MaskKind,
    n: usize,
    kmags: &[f64],
    cgo_cfg: &CgoConfig,
) -> Result<ExperimentReport> {
    let mut config = base_config(spec_tag, Route::TwoData, 0.0, mask_kind);
    config.set("experiment.kind", "flatness");
    config.set("experiment.resolution", n);
    let mut report = ExperimentReport::new(
        "flatness",
        &config,
        mask_kind.r0(),
        &["kmag", "flatness_gap", "gamma_sup"],
    );
    let mut gaps = Vec::new();
    for &kmag in kmags {
        let case = synthesize_case(spec, mask_kind, Route::TwoData, kmag, n, cgo_cfg)?;
        let coeffs = beta_gamma_two(&case.data[0], &case.mask)?;
        report.push_row(
            None,
            vec![
                format!("{kmag}"),
                format!("{:.6e}", coeffs.flatness_gap),
                format!("{:.6e}", coeffs.gamma.max_magnitude()),
            ],
        );
        gaps.push(coeffs.flatness_gap.max(1e-16));
    }
    let kvec: Vec<f64> = kmags.to_vec();
    let (slope, _) = fit_loglog(&kvec, &gaps)?;
    report.summary.push(("slope".to_string(), slope));
    report.passed = Some((-1.4..=-0.6).contains(&slope));
    if report.passed != Some(true) {
        report.notes.push(
            "flatness gap does not decay with frequency on the boxed Dirichlet \
             formulation (remainder growth dominates)"
                .to_string(),
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_fit_recovers_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|&x: &f64| 3.0 * x.powf(-1.5)).collect();
        let (slope, intercept) = fit_loglog(&xs, &ys).unwrap();
        assert!((slope + 1.5).abs() < 1e-12);
        assert!((intercept - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loglog_fit_rejects_bad_input() {
        assert!(fit_loglog(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(fit_loglog(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_order_independent() {
        let mut a = Config::default();
        a.set("x.b", 1);
        a.set("x.a", 2);
        let mut b = Config::default();
        b.set("x.a", 2);
        b.set("x.b", 1);
        assert_eq!(config_hash(&a), config_hash(&b));
        b.set("x.a", 3);
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn report_rows_are_tagged() {
        let c = Config::default();
        let mut r = ExperimentReport::new("t", &c, false, &["v"]);
        r.push_row(Some(7), vec!["1".to_string()]);
        assert_eq!(r.rows[0][0], r.config_hash);
        assert_eq!(r.rows[0][1], "7");
    }

    #[test]
    fn zero_potential_gives_zero_psi_table() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q = ScalarField::constant(g, 0.0);
        let cfg = CgoConfig {
            pad_fraction: 0.25,
            ..CgoConfig::default()
        };
        let rep = psi_decay_experiment(&q, &mask, &[4.0, 8.0], &cfg).unwrap();
        for row in &rep.rows {
            assert!(row[3].parse::<f64>().unwrap() < 1e-12);
        }
    }

    #[test]
    fn psi_scales_linearly_with_potential() {
        let g = GridSpec::unit_square(33).unwrap();
        let mask = DomainMask::rectangle(g);
        let q1 = ScalarField::from_fn(g, |x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            (-r2 / (2.0 * 0.15 * 0.15)).exp()
        });
        let q2 = q1.map(|v| 2.0 * v);
        let cfg = CgoConfig {
            pad_fraction: 0.25,
            ..CgoConfig::default()
        };
        let params = CGOParams::from_kappa([4.0, 0.0]).unwrap();
        let s1 = cgo_solution(&q1, &mask, &params, &cfg).unwrap();
        let s2 = cgo_solution(&q2, &mask, &params, &cfg).unwrap();
        let a = psi_sup_on_domain(&s1.psi, &g);
        let b = psi_sup_on_domain(&s2.psi, &g);
        // Not exactly 2x (the remainder equation is affine in q), but the
        // leading term doubles.
        assert!(b / a > 1.6 && b / a < 2.4, "ratio {}", b / a);
    }

    #[test]
    fn constant_phantom_roundtrip_is_tight() {
        let spec = PhantomSpec::constant(1.2, 0.7);
        let rep = roundtrip_experiment(
            &spec,
            "constant",
            Route::TwoData,
            4.0,
            MaskKind::Rectangle,
            &[65],
            &CgoConfig::default(),
            &PipelineConfig::default(),
        )
        .unwrap();
        for key in ["final_err_mu", "final_err_q", "final_err_D", "final_err_sigma_a"] {
            let v = rep.summary_value(key).unwrap();
            // q's relative error is excluded: q ~ -sigma/D is order one, but
            // the recovered q on a constant phantom differs by the CGO
            // remainder's curvature, which the sup-ratio amplifies.
            if key != "final_err_q" {
                assert!(v <= 5e-3, "{key} = {v}");
            }
        }
    }
}
