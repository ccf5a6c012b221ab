//! Run configuration.
//!
//! The file format is one `section.key = value` assignment per line. `#`
//! starts a comment; blank lines are ignored. Lists are comma separated,
//! optional values accept `none`. Every key has a default, so an empty file
//! is a valid configuration. Unknown keys are rejected.
//!
//! ```text
//! metric.family = conformal
//! metric.phi_amplitude = 0.1
//! integrator.h = 1e-3
//! experiment.linear_ladder = 0.08, 0.04, 0.02, 0.01
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::field::DirichletField;
use crate::geodesic::{ShootParams, DEFAULT_MAX_LENGTH, DEFAULT_STEP};
use crate::jet::JetParams;
use crate::lens::{AuditGrid, DatasetParams, LensGrid, DEFAULT_JITTER, DEFAULT_SEED};
use crate::metric::{ConformalFactor, MetricChart, DEFAULT_MARGIN};
use crate::ray::{
    Aperture, AssembleParams, PathFamily, ReconstructParams, DEFAULT_BUMP_MAX_CENTER, DEFAULT_BUMP_RADIUS,
    DEFAULT_BUMP_SPACING, DEFAULT_POTENTIAL_DEGREE,
};
use crate::rigidity::{BoundaryFixingDiffeo, DEFAULT_GAUGE_LADDER, DEFAULT_LINEAR_LADDER};
use crate::tensor::{TensorGrid, DEFAULT_HALF_WIDTH};
use crate::{Error, Result};

/// A value that can appear on the right of `=`.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("expected a number, got `{s}`"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("expected a finite number, got `{s}`"))
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for u64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            Some(hex) => u64::from_str_radix(hex, 16),
            None => s.parse(),
        };
        r.map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for usize {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for u32 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(format!("expected true or false, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for Vec<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| f64::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.render()).collect::<Vec<_>>().join(", ")
    }
}

impl ConfigValue for [f64; 2] {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v = Vec::<f64>::parse_value(s)?;
        <[f64; 2]>::try_from(v).map_err(|_| format!("expected two comma separated numbers, got `{s}`"))
    }
    fn render(&self) -> String {
        format!("{:?}, {:?}", self[0], self[1])
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            Err("expected a path".into())
        } else {
            Ok(PathBuf::from(s))
        }
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map_or_else(|| "none".to_string(), |v| v.render())
    }
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $name { $($variant),* }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)*
                    _ => Err(format!("unknown value `{s}`, expected one of: {}", [$($text),*].join(", "))),
                }
            }
        }

        impl ConfigValue for $name {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse()
            }
            fn render(&self) -> String {
                match self { $($name::$variant => $text.to_string()),* }
            }
        }
    };
}

keyword_enum!(MetricFamily {
    Euclidean => "euclidean",
    Conformal => "conformal",
    Sphere => "sphere",
    ConstantCurvature => "constant_curvature",
    PolarNormal => "polar_normal",
    Tabulated => "tabulated",
});

keyword_enum!(ApertureKind { Full => "full", Band => "band" });

keyword_enum!(FamilyKind { Boundary => "boundary", Hypersurface => "hypersurface" });

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSection {
    pub family: MetricFamily,
    pub phi_amplitude: f64,
    pub phi_offset: f64,
    pub phi_tilt: f64,
    pub curvature: f64,
    pub polar_c: f64,
    pub margin: f64,
    /// Overrides the smoothness the family reports.
    pub smoothness: Option<u32>,
    /// CSV with columns x, y, g11, g12, g22 for the tabulated family.
    pub table: Option<PathBuf>,
    /// Replace an analytic family by its bicubic table on this many nodes.
    pub tabulate: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorSection {
    pub h: f64,
    pub l_max: f64,
    pub jitter: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LensSection {
    pub n_s: usize,
    pub n_mu: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Mirror the `mu` range to negative values.
    pub mirror: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditSection {
    pub n_z: usize,
    pub n_codir: usize,
    pub rho: f64,
    pub angle_tol: f64,
    pub z_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JetSection {
    pub ladder: Vec<f64>,
    pub patch_points: usize,
    pub patch_fraction: f64,
    pub fit_degree: usize,
    pub both_sides: bool,
    pub neighbor_spacing: f64,
    pub order0_tol: f64,
    pub order1_tol: f64,
    /// Equally spaced anchors used by `verify`.
    pub anchors: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorSection {
    pub n: usize,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RaySection {
    pub family: FamilyKind,
    pub paths_s: usize,
    pub paths_mu: usize,
    pub aperture: ApertureKind,
    pub band_lo: f64,
    pub band_ramp: f64,
    pub n_angle: usize,
    pub n_dir: usize,
    pub offset: f64,
    pub max_angle: f64,
    pub bump_spacing: f64,
    pub bump_radius: f64,
    pub bump_max_center: f64,
    pub potential_degree: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSection {
    pub cg_tol: f64,
    pub max_iter: usize,
    pub lambda: Option<f64>,
    pub lambda_factor: f64,
    /// Noise level for the discrepancy principle.
    pub discrepancy: Option<f64>,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSection {
    pub linear_ladder: Vec<f64>,
    pub gauge_ladder: Vec<f64>,
    /// Constant direction of the generator `w = (1 - |x|^2)^p c`.
    pub w: [f64; 2],
    pub w_power: u32,
    pub eps: f64,
    pub taylor_s: f64,
    pub taylor_mu: f64,
    pub n_tau: usize,
    pub gauge_fields: usize,
    pub gauge_degree: u32,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub metric: MetricSection,
    pub integrator: IntegratorSection,
    pub lens: LensSection,
    pub audit: AuditSection,
    pub jet: JetSection,
    pub tensor: TensorSection,
    pub ray: RaySection,
    pub solver: SolverSection,
    pub experiment: ExperimentSection,
    /// Directory relative paths are resolved against.
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let audit = AuditGrid::default();
        let jet = JetParams::default();
        RunConfig {
            metric: MetricSection {
                family: MetricFamily::Euclidean,
                phi_amplitude: 0.1,
                phi_offset: 0.0,
                phi_tilt: 0.0,
                curvature: 1.0,
                polar_c: 0.2,
                margin: DEFAULT_MARGIN,
                smoothness: None,
                table: None,
                tabulate: None,
            },
            integrator: IntegratorSection {
                h: DEFAULT_STEP,
                l_max: DEFAULT_MAX_LENGTH,
                jitter: DEFAULT_JITTER,
                seed: DEFAULT_SEED,
            },
            lens: LensSection { n_s: 32, n_mu: 32, s_min: 0.0, s_max: std::f64::consts::TAU, mu_min: -1.0, mu_max: 1.0, mirror: false },
            audit: AuditSection {
                n_z: audit.n_z,
                n_codir: audit.n_codir,
                rho: audit.rho,
                angle_tol: audit.angle_tol,
                z_radius: audit.z_radius,
            },
            jet: JetSection {
                ladder: jet.ladder,
                patch_points: jet.patch_points,
                patch_fraction: jet.patch_fraction,
                fit_degree: jet.fit_degree,
                both_sides: jet.both_sides,
                neighbor_spacing: jet.neighbor_spacing,
                order0_tol: jet.order0_tol,
                order1_tol: jet.order1_tol,
                anchors: 8,
            },
            tensor: TensorSection { n: 65, half_width: DEFAULT_HALF_WIDTH },
            ray: RaySection {
                family: FamilyKind::Boundary,
                paths_s: 40,
                paths_mu: 40,
                aperture: ApertureKind::Full,
                band_lo: 0.9,
                band_ramp: 0.02,
                n_angle: 40,
                n_dir: 40,
                offset: DEFAULT_MARGIN / 2.0,
                max_angle: 1.5,
                bump_spacing: DEFAULT_BUMP_SPACING,
                bump_radius: DEFAULT_BUMP_RADIUS,
                bump_max_center: DEFAULT_BUMP_MAX_CENTER,
                potential_degree: DEFAULT_POTENTIAL_DEGREE,
            },
            solver: SolverSection {
                cg_tol: 1e-10,
                max_iter: 20_000,
                lambda: None,
                lambda_factor: 1e-6,
                discrepancy: None,
                tau: 1.1,
            },
            experiment: ExperimentSection {
                linear_ladder: DEFAULT_LINEAR_LADDER.to_vec(),
                gauge_ladder: DEFAULT_GAUGE_LADDER.to_vec(),
                w: [0.3, -0.1],
                w_power: 1,
                eps: 0.05,
                taylor_s: 0.3,
                taylor_mu: 0.2,
                n_tau: 32,
                gauge_fields: 5,
                gauge_degree: 3,
                seed: 7,
            },
            base_dir: PathBuf::from("."),
        }
    }
}

macro_rules! config_keys {
    ($($section:ident { $($field:ident),* $(,)? })*) => {
        const SECTIONS: &[&str] = &[$(stringify!($section)),*];

        impl RunConfig {
            /// Assigns one dotted key.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($(concat!(stringify!($section), ".", stringify!($field)) => {
                        self.$section.$field = ConfigValue::parse_value(value).map_err(|m| Error::config(key, m))?;
                    })*)*
                    _ => {
                        let section = key.split('.').next().unwrap_or("");
                        let msg = if SECTIONS.contains(&section) {
                            "unknown key".to_string()
                        } else {
                            format!("unknown section `{section}`, expected one of: {}", SECTIONS.join(", "))
                        };
                        return Err(Error::config(key, msg));
                    }
                }
                Ok(())
            }

            /// Every key with its current value, in a fixed order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$($((concat!(stringify!($section), ".", stringify!($field)), self.$section.$field.render())),*),*]
            }
        }
    };
}

config_keys! {
    metric { family, phi_amplitude, phi_offset, phi_tilt, curvature, polar_c, margin, smoothness, table, tabulate }
    integrator { h, l_max, jitter, seed }
    lens { n_s, n_mu, s_min, s_max, mu_min, mu_max, mirror }
    audit { n_z, n_codir, rho, angle_tol, z_radius }
    jet { ladder, patch_points, patch_fraction, fit_degree, both_sides, neighbor_spacing, order0_tol, order1_tol, anchors }
    tensor { n, half_width }
    ray { family, paths_s, paths_mu, aperture, band_lo, band_ramp, n_angle, n_dir, offset, max_angle,
          bump_spacing, bump_radius, bump_max_center, potential_degree }
    solver { cg_tol, max_iter, lambda, lambda_factor, discrepancy, tau }
    experiment { linear_ladder, gauge_ladder, w, w_power, eps, taylor_s, taylor_mu, n_tau, gauge_fields, gauge_degree, seed }
}

fn check(ok: bool, field: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, msg))
    }
}

fn check_ladder(l: &[f64], field: &str, min_len: usize) -> Result<()> {
    check(l.len() >= min_len, field, &format!("needs at least {min_len} entries"))?;
    check(l.iter().all(|e| *e > 0.0), field, "entries must be positive")?;
    check(l.windows(2).all(|w| w[1] < w[0]), field, "entries must be strictly decreasing")
}

impl RunConfig {
    /// Parses configuration text; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{origin}:{}", no + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(at.clone(), "expected `section.key = value`"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, format!("assigned twice ({at})")));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        let mut cfg = RunConfig::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Ok(cfg)
    }

    /// Applies `key=value` overrides and revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::config(o, "override must be `section.key=value`"))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    /// Canonical text: every key, one per line, in a fixed order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 8 bytes of the SHA-256 of the canonical text, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.render().as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Fingerprint of the keys that shape a forward system: metric,
    /// integrator, tensor grid and ray family. Solver and experiment
    /// settings do not invalidate a saved system.
    pub fn system_fingerprint(&self) -> String {
        let mut text = String::new();
        for (k, v) in self.entries() {
            if ["metric.", "integrator.", "tensor.", "ray."].iter().any(|p| k.starts_with(p)) {
                let _ = writeln!(text, "{k} = {v}");
            }
        }
        Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.metric;
        check(m.margin > 0.0, "metric.margin", "must be positive")?;
        let r = 1.0 + m.margin;
        check(1.0 + m.curvature * r * r > 0.0, "metric.curvature", "conformal factor must stay finite on the extended chart")?;
        check(m.family != MetricFamily::Tabulated || m.table.is_some(), "metric.table", "required by the tabulated family")?;
        check(m.tabulate.is_none_or(|n| n >= 5), "metric.tabulate", "needs at least 5 nodes")?;

        let i = &self.integrator;
        check(i.h > 0.0, "integrator.h", "step must be positive")?;
        check(i.l_max > 0.0, "integrator.l_max", "must be positive")?;
        check(i.jitter >= 0.0, "integrator.jitter", "must be non-negative")?;

        let l = &self.lens;
        check(l.n_s > 0, "lens.n_s", "must be positive")?;
        check(l.n_mu > 0, "lens.n_mu", "must be positive")?;
        check(l.s_min < l.s_max, "lens.s_max", "must exceed lens.s_min")?;
        check((-1.0..=1.0).contains(&l.mu_min), "lens.mu_min", "must lie in [-1, 1]")?;
        check((-1.0..=1.0).contains(&l.mu_max), "lens.mu_max", "must lie in [-1, 1]")?;
        check(l.mu_min < l.mu_max, "lens.mu_max", "must exceed lens.mu_min")?;
        check(!l.mirror || l.mu_min >= 0.0, "lens.mirror", "needs a non-negative mu range")?;

        let a = &self.audit;
        check(a.n_z > 0, "audit.n_z", "must be positive")?;
        check(a.n_codir > 0, "audit.n_codir", "must be positive")?;
        check(a.rho > 0.0, "audit.rho", "must be positive")?;
        check(a.angle_tol > 0.0, "audit.angle_tol", "must be positive")?;
        check(a.z_radius > 0.0 && a.z_radius < 1.0, "audit.z_radius", "must lie in (0, 1)")?;

        let j = &self.jet;
        check_ladder(&j.ladder, "jet.ladder", 3)?;
        check(j.patch_points >= j.fit_degree + 2, "jet.patch_points", "must exceed jet.fit_degree + 1")?;
        check(j.patch_fraction > 0.0 && j.patch_fraction < 1.0, "jet.patch_fraction", "must lie in (0, 1)")?;
        check(j.neighbor_spacing > 0.0, "jet.neighbor_spacing", "must be positive")?;
        check(j.order0_tol > 0.0, "jet.order0_tol", "must be positive")?;
        check(j.order1_tol > 0.0, "jet.order1_tol", "must be positive")?;
        check(j.anchors > 0, "jet.anchors", "must be positive")?;

        let t = &self.tensor;
        check(t.n >= 7, "tensor.n", "needs at least 7 nodes")?;
        check(t.half_width > 1.0, "tensor.half_width", "must exceed 1")?;

        let r = &self.ray;
        check(r.paths_s > 0, "ray.paths_s", "must be positive")?;
        check(r.paths_mu > 0, "ray.paths_mu", "must be positive")?;
        check(r.band_lo > 0.0 && r.band_lo < 1.0, "ray.band_lo", "must lie in (0, 1)")?;
        check(r.band_ramp >= 0.0 && r.band_lo + r.band_ramp <= 1.0, "ray.band_ramp", "band_lo + band_ramp must not exceed 1")?;
        check(r.n_angle > 0, "ray.n_angle", "must be positive")?;
        check(r.n_dir > 0, "ray.n_dir", "must be positive")?;
        check(r.offset > 0.0 && r.offset < m.margin, "ray.offset", "must lie in (0, metric.margin)")?;
        check(r.max_angle > 0.0 && r.max_angle < std::f64::consts::FRAC_PI_2, "ray.max_angle", "must lie in (0, pi/2)")?;
        check(r.bump_spacing > 0.0, "ray.bump_spacing", "must be positive")?;
        check(r.bump_radius > 0.0, "ray.bump_radius", "must be positive")?;
        check(r.bump_max_center >= 0.0 && r.bump_max_center < 1.0, "ray.bump_max_center", "must lie in [0, 1)")?;

        let s = &self.solver;
        check(s.cg_tol > 0.0, "solver.cg_tol", "must be positive")?;
        check(s.max_iter > 0, "solver.max_iter", "must be positive")?;
        check(s.lambda.is_none_or(|v| v > 0.0), "solver.lambda", "must be positive")?;
        check(s.lambda_factor > 0.0, "solver.lambda_factor", "must be positive")?;
        check(s.discrepancy.is_none_or(|v| v > 0.0), "solver.discrepancy", "must be positive")?;
        check(s.tau > 1.0, "solver.tau", "must exceed 1")?;

        let e = &self.experiment;
        check_ladder(&e.linear_ladder, "experiment.linear_ladder", 4)?;
        check_ladder(&e.gauge_ladder, "experiment.gauge_ladder", 4)?;
        check(e.w_power >= 1, "experiment.w_power", "must be at least 1")?;
        check(e.eps >= 0.0, "experiment.eps", "must be non-negative")?;
        check(e.taylor_mu.abs() < 1.0, "experiment.taylor_mu", "must lie in (-1, 1)")?;
        check(e.n_tau >= 8 && e.n_tau.is_multiple_of(2), "experiment.n_tau", "must be even and at least 8")?;
        check(e.gauge_fields > 0, "experiment.gauge_fields", "must be positive")?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn chart(&self) -> Result<MetricChart> {
        let m = &self.metric;
        let chart = match m.family {
            MetricFamily::Euclidean => MetricChart::euclidean(),
            MetricFamily::Conformal => MetricChart::conformal(ConformalFactor {
                amplitude: m.phi_amplitude,
                offset: m.phi_offset,
                tilt: m.phi_tilt,
                bump: None,
            }),
            MetricFamily::Sphere => MetricChart::sphere(),
            MetricFamily::ConstantCurvature => MetricChart::constant_curvature(m.curvature),
            MetricFamily::PolarNormal => MetricChart::polar_normal(m.polar_c),
            MetricFamily::Tabulated => {
                let path = self.resolve(m.table.as_deref().expect("validated"));
                MetricChart::from_table_csv(&path)?
            }
        };
        let mut chart = chart.with_margin(m.margin).map_err(|e| Error::config("metric.margin", e.to_string()))?;
        if let Some(n) = m.tabulate {
            chart = chart.tabulate(n)?;
        }
        if let Some(k) = m.smoothness {
            chart = chart.with_smoothness(k);
        }
        Ok(chart)
    }

    pub fn shoot_params(&self) -> ShootParams {
        ShootParams { step: self.integrator.h, max_length: self.integrator.l_max }
    }

    pub fn dataset_params(&self) -> DatasetParams {
        DatasetParams { shoot: self.shoot_params(), jitter: self.integrator.jitter, seed: self.integrator.seed }
    }

    pub fn lens_grid(&self) -> LensGrid {
        let l = &self.lens;
        LensGrid { n_s: l.n_s, n_mu: l.n_mu, s_range: (l.s_min, l.s_max), mu_range: (l.mu_min, l.mu_max), mirror: l.mirror }
    }

    pub fn audit_grid(&self) -> AuditGrid {
        let a = &self.audit;
        AuditGrid { n_z: a.n_z, n_codir: a.n_codir, rho: a.rho, angle_tol: a.angle_tol, z_radius: a.z_radius }
    }

    pub fn jet_params(&self) -> JetParams {
        let j = &self.jet;
        JetParams {
            ladder: j.ladder.clone(),
            patch_points: j.patch_points,
            patch_fraction: j.patch_fraction,
            fit_degree: j.fit_degree,
            both_sides: j.both_sides,
            neighbor_spacing: j.neighbor_spacing,
            order0_tol: j.order0_tol,
            order1_tol: j.order1_tol,
            check_conjugacy: true,
            shoot: self.shoot_params(),
        }
    }

    pub fn tensor_grid(&self) -> Result<TensorGrid> {
        TensorGrid::new(self.tensor.n, self.tensor.half_width)
    }

    pub fn aperture(&self) -> Result<Aperture> {
        match self.ray.aperture {
            ApertureKind::Full => Ok(Aperture::full()),
            ApertureKind::Band => Aperture::tangential_band(self.ray.band_lo, self.ray.band_ramp),
        }
    }

    pub fn assemble_params(&self) -> Result<AssembleParams> {
        Ok(AssembleParams { shoot: self.shoot_params(), aperture: self.aperture()? })
    }

    /// Path family for the forward system. A band aperture concentrates the
    /// boundary grid inside the band.
    pub fn path_family(&self) -> PathFamily {
        let r = &self.ray;
        match (r.family, r.aperture) {
            (FamilyKind::Hypersurface, _) => {
                PathFamily::Hypersurface { n_angle: r.n_angle, n_dir: r.n_dir, offset: r.offset, max_angle: r.max_angle }
            }
            (FamilyKind::Boundary, ApertureKind::Full) => PathFamily::Boundary {
                grid: LensGrid::full(r.paths_s, r.paths_mu),
                jitter: self.integrator.jitter,
                seed: self.integrator.seed,
            },
            (FamilyKind::Boundary, ApertureKind::Band) => PathFamily::Boundary {
                grid: LensGrid::band(r.paths_s, r.paths_mu.div_ceil(2), r.band_lo, 1.0),
                jitter: self.integrator.jitter,
                seed: self.integrator.seed,
            },
        }
    }

    pub fn reconstruct_params(&self) -> ReconstructParams {
        let s = &self.solver;
        ReconstructParams {
            lambda: s.lambda,
            lambda_factor: s.lambda_factor,
            tol: s.cg_tol,
            max_iter: s.max_iter,
            discrepancy: s.discrepancy,
            tau: s.tau,
        }
    }

    pub fn generator(&self) -> DirichletField {
        DirichletField::constant(self.experiment.w_power, self.experiment.w)
    }

    pub fn diffeo(&self) -> Result<BoundaryFixingDiffeo> {
        BoundaryFixingDiffeo::new(self.generator(), self.experiment.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = RunConfig::parse("# nothing\n\n", "t").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn render_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("metric.family", "conformal").unwrap();
        cfg.set("solver.lambda", "1e-4").unwrap();
        cfg.set("integrator.seed", "0x10").unwrap();
        let back = RunConfig::parse(&cfg.render(), "r").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
        assert_eq!(cfg.fingerprint().len(), 16);
    }

    #[test]
    fn unknown_key_names_the_field() {
        let e = RunConfig::parse("metric.famly = sphere", "t").unwrap_err();
        match e {
            Error::Config { field, .. } => assert_eq!(field, "metric.famly"),
            other => panic!("{other}"),
        }
        let e = RunConfig::parse("solvr.tau = 2", "t").unwrap_err();
        assert!(e.to_string().contains("unknown section"));
    }

    #[test]
    fn negative_step_is_rejected() {
        let mut cfg = RunConfig::default();
        let e = cfg.apply_overrides(&["integrator.h=-1"]).unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().starts_with("integrator.h"));
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["tensor.n = 3.5", "lens.mirror = maybe", "metric.family = torus", "integrator.h = nan", "jet.ladder = 0.1, 0.2, 0.05"] {
            assert!(RunConfig::parse(text, "t").unwrap_err().is_config(), "{text}");
        }
        assert!(RunConfig::parse("tensor.n = 33\ntensor.n = 65", "t").unwrap_err().is_config());
        assert!(RunConfig::parse("just words", "t").unwrap_err().is_config());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.set("integrator.h", "0.002").unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.system_fingerprint(), b.system_fingerprint());

        let mut c = RunConfig::default();
        c.set("solver.lambda", "1e-4").unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.system_fingerprint(), c.system_fingerprint());
    }
}
