//! Lens data: exit points, exit directions and travel times of boundary geodesics.
//!
//! Inward unit vectors at the boundary are labelled by a [`BallPoint`]: the
//! boundary angle `s` and the g-tangential component `mu` in `[-1, 1]`.
//! Outward vectors at the exit are labelled the same way, so the Euclidean
//! disc maps `(s, mu)` to `(s + pi - 2 asin(mu), mu)`.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodesic::{jacobi_first_conjugate, shoot, shoot_summary, PathStatus, PhasePoint, ShootParams};
use crate::metric::MetricChart;
use crate::{Error, Point, Result};

pub const DEFAULT_JITTER: f64 = 1e-7;
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallPoint {
    pub s: f64,
    pub mu: f64,
}

impl BallPoint {
    pub fn new(s: f64, mu: f64) -> Self {
        BallPoint { s, mu }
    }

    pub fn is_tangential(&self) -> bool {
        self.mu.abs() >= 1.0
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU { 0.0 } else { r }
}

/// `a - b` reduced to `(-pi, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI { d - TAU } else { d }
}

/// Inward unit vector with label `b`.
pub fn lift(chart: &MetricChart, b: &BallPoint) -> Result<PhasePoint> {
    if !(b.mu.abs() <= 1.0) || !b.s.is_finite() {
        return Err(Error::arg(format!("ball point ({}, {}) is outside the closed unit ball", b.s, b.mu)));
    }
    let fr = chart.boundary_frame(b.s)?;
    let nu = (1.0 - b.mu * b.mu).max(0.0).sqrt();
    Ok(PhasePoint { x: fr.x, xi: fr.tangent * b.mu + fr.normal * nu })
}

/// Label of a unit vector based at a boundary point.
pub fn project(chart: &MetricChart, p: &PhasePoint) -> Result<BallPoint> {
    let s = wrap_angle(p.x.y.atan2(p.x.x));
    let fr = chart.boundary_frame(s)?;
    let g = chart.metric(&fr.x)?;
    let mu = p.xi.dot(&(g * fr.tangent)).clamp(-1.0, 1.0);
    Ok(BallPoint { s, mu })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordStatus {
    Exited,
    Tangential,
    Trapped,
    LeftExtendedChart,
}

impl RecordStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordStatus::Exited => "exited",
            RecordStatus::Tangential => "tangential",
            RecordStatus::Trapped => "trapped",
            RecordStatus::LeftExtendedChart => "left_chart",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "exited" => RecordStatus::Exited,
            "tangential" => RecordStatus::Tangential,
            "trapped" => RecordStatus::Trapped,
            "left_chart" => RecordStatus::LeftExtendedChart,
            other => return Err(Error::Format(format!("unknown record status `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LensRecord {
    pub input: BallPoint,
    pub output: BallPoint,
    pub length: f64,
    pub status: RecordStatus,
}

impl LensRecord {
    pub fn is_regular(&self) -> bool {
        self.status == RecordStatus::Exited
    }
}

/// Scattering relation and exit time for one inward label.
pub fn scatter(chart: &MetricChart, b: &BallPoint, params: &ShootParams) -> Result<LensRecord> {
    let start = lift(chart, b)?;
    if b.is_tangential() {
        return Ok(LensRecord { input: *b, output: *b, length: 0.0, status: RecordStatus::Tangential });
    }
    let path = shoot_summary(chart, start, params)?;
    let nan = BallPoint { s: f64::NAN, mu: f64::NAN };
    Ok(match path.status {
        PathStatus::Exited if path.length == 0.0 => {
            LensRecord { input: *b, output: *b, length: 0.0, status: RecordStatus::Tangential }
        }
        PathStatus::Exited => LensRecord {
            input: *b,
            output: project(chart, &path.exit.unwrap())?,
            length: path.length,
            status: RecordStatus::Exited,
        },
        PathStatus::Trapped => {
            LensRecord { input: *b, output: nan, length: f64::INFINITY, status: RecordStatus::Trapped }
        }
        PathStatus::LeftExtendedChart => {
            LensRecord { input: *b, output: nan, length: f64::NAN, status: RecordStatus::LeftExtendedChart }
        }
    })
}

/// Tensor grid over `(s, mu)`. Full circles use `s_i = s0 + 2 pi i / n_s`,
/// partial arcs and the `mu` range use cell centres, so `|mu| = 1` is never a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LensGrid {
    pub n_s: usize,
    pub n_mu: usize,
    pub s_range: (f64, f64),
    pub mu_range: (f64, f64),
    /// Also include `-mu` for every `mu` node.
    pub mirror: bool,
}

impl LensGrid {
    pub fn full(n_s: usize, n_mu: usize) -> Self {
        LensGrid { n_s, n_mu, s_range: (0.0, TAU), mu_range: (-1.0, 1.0), mirror: false }
    }

    /// Only `|mu|` in `[lo, hi]`.
    pub fn band(n_s: usize, n_mu: usize, lo: f64, hi: f64) -> Self {
        LensGrid { n_s, n_mu, s_range: (0.0, TAU), mu_range: (lo, hi), mirror: true }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.mu_range;
        if self.n_s == 0 || self.n_mu == 0 {
            return Err(Error::arg("lens grid needs at least one node per axis"));
        }
        if !(a >= -1.0 && b <= 1.0 && a < b) {
            return Err(Error::arg(format!("mu range ({a}, {b}) must lie in [-1, 1]")));
        }
        if !(self.s_range.0 < self.s_range.1) || self.s_range.1 - self.s_range.0 > TAU + 1e-12 {
            return Err(Error::arg("s range must be a nonempty arc of length at most 2 pi"));
        }
        Ok(())
    }

    pub fn s_nodes(&self) -> Vec<f64> {
        let (a, b) = self.s_range;
        let full = b - a >= TAU - 1e-12;
        (0..self.n_s)
            .map(|i| {
                if full {
                    wrap_angle(a + TAU * i as f64 / self.n_s as f64)
                } else {
                    a + (b - a) * (i as f64 + 0.5) / self.n_s as f64
                }
            })
            .collect()
    }

    pub fn mu_nodes(&self) -> Vec<f64> {
        let (a, b) = self.mu_range;
        let mut v: Vec<f64> = (0..self.n_mu).map(|j| a + (b - a) * (j as f64 + 0.5) / self.n_mu as f64).collect();
        if self.mirror {
            let neg: Vec<f64> = v.iter().rev().map(|m| -m).collect();
            v = neg.into_iter().chain(v).collect();
        }
        v
    }

    /// Nodes in `s`-major order.
    pub fn nodes(&self) -> Vec<BallPoint> {
        let mus = self.mu_nodes();
        self.s_nodes().into_iter().flat_map(|s| mus.iter().map(move |&mu| BallPoint { s, mu })).collect()
    }

    /// `ds` and `dmu` cell sizes.
    pub fn cell(&self) -> (f64, f64) {
        let ds = (self.s_range.1 - self.s_range.0) / self.n_s as f64;
        let dmu = (self.mu_range.1 - self.mu_range.0) / self.n_mu as f64;
        (ds, dmu)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub shoot: ShootParams,
    /// Uniform jitter amplitude applied to `mu` of every node.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams { shoot: ShootParams::default(), jitter: DEFAULT_JITTER, seed: DEFAULT_SEED }
    }
}

#[derive(Clone, Debug)]
pub struct LensDataset {
    pub chart_fingerprint: String,
    /// Fingerprint of the run configuration that produced the data, if any.
    pub config_fingerprint: Option<String>,
    pub grid: LensGrid,
    pub records: Vec<LensRecord>,
}

/// Jittered node labels; deterministic for a fixed seed.
pub fn jittered_nodes(grid: &LensGrid, jitter: f64, seed: u64) -> Vec<BallPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grid.nodes()
        .into_iter()
        .map(|b| {
            if jitter == 0.0 {
                return b;
            }
            let d: f64 = rng.gen_range(-jitter..=jitter);
            BallPoint { s: b.s, mu: (b.mu + d).clamp(-1.0, 1.0) }
        })
        .collect()
}

pub fn generate_dataset(chart: &MetricChart, grid: &LensGrid, params: &DatasetParams) -> Result<LensDataset> {
    grid.validate()?;
    params.shoot.validate()?;
    let nodes = jittered_nodes(grid, params.jitter, params.seed);
    let records = nodes.par_iter().map(|b| scatter(chart, b, &params.shoot)).collect::<Result<Vec<_>>>()?;
    Ok(LensDataset { chart_fingerprint: chart.fingerprint(), config_fingerprint: None, grid: grid.clone(), records })
}

const CSV_MAGIC: &str = "# lenslab lens dataset";

impl LensDataset {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let g = &self.grid;
        writeln!(
            w,
            "{CSV_MAGIC}; chart={}; n_s={}; n_mu={}; s_min={}; s_max={}; mu_min={}; mu_max={}; mirror={}",
            self.chart_fingerprint, g.n_s, g.n_mu, g.s_range.0, g.s_range.1, g.mu_range.0, g.mu_range.1, g.mirror
        )?;
        if let Some(c) = &self.config_fingerprint {
            writeln!(w, "# config={c}")?;
        }
        writeln!(w, "s_in,mu_in,s_out,mu_out,ell,status")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.input.s,
                r.input.mu,
                r.output.s,
                r.output.mu,
                r.length,
                r.status.as_str()
            )?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim_end();
        let rest = header
            .strip_prefix(CSV_MAGIC)
            .ok_or_else(|| Error::Format("missing lens dataset header".into()))?;
        let mut fields = std::collections::BTreeMap::new();
        for kv in rest.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Format(format!("bad header entry `{kv}`")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| Error::Format(format!("header lacks `{k}`")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad `{k}`"))) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad `{k}`"))) };
        let grid = LensGrid {
            n_s: int("n_s")?,
            n_mu: int("n_mu")?,
            s_range: (num("s_min")?, num("s_max")?),
            mu_range: (num("mu_min")?, num("mu_max")?),
            mirror: get("mirror")? == "true",
        };
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let config_fingerprint = line.trim_end().strip_prefix("# config=").map(str::to_string);
        if config_fingerprint.is_some() {
            line.clear();
            reader.read_line(&mut line)?;
        }
        if line.trim_end() != "s_in,mu_in,s_out,mu_out,ell,status" {
            return Err(Error::Format(format!("unexpected column header `{}`", line.trim_end())));
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != 6 {
                return Err(Error::Format("dataset rows need six columns".into()));
            }
            let f = |k: usize| -> Result<f64> {
                row[k].parse().map_err(|_| Error::Format(format!("bad number `{}`", &row[k])))
            };
            records.push(LensRecord {
                input: BallPoint { s: f(0)?, mu: f(1)? },
                output: BallPoint { s: f(2)?, mu: f(3)? },
                length: f(4)?,
                status: RecordStatus::parse(&row[5])?,
            });
        }
        Ok(LensDataset { chart_fingerprint: get("chart")?, config_fingerprint, grid, records })
    }
}

/// Cotangent grid for the completeness audit: `n_z x n_z` cell centres of
/// `[-1, 1]^2` inside `|z| <= z_radius`, and `n_codir` conormal directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditGrid {
    pub n_z: usize,
    pub n_codir: usize,
    /// Chart distance within which a geodesic counts as passing through `z`.
    pub rho: f64,
    /// Angular tolerance, in radians, for g-orthogonality to the conormal.
    pub angle_tol: f64,
    pub z_radius: f64,
}

impl Default for AuditGrid {
    fn default() -> Self {
        AuditGrid { n_z: 16, n_codir: 8, rho: 0.1, angle_tol: 0.2, z_radius: 0.9 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UncoveredCell {
    pub z: [f64; 2],
    pub codirection: f64,
    /// Smallest `|cos|` between a nearby geodesic and the conormal.
    pub best_cos: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub covered: usize,
    pub fraction: f64,
    pub paths_used: usize,
    pub paths_skipped_conjugate: usize,
    pub worst: Option<UncoveredCell>,
}

/// Checks which conormal directions of the cotangent grid are met by some
/// dataset geodesic free of conjugate points.
pub fn audit_completeness(
    chart: &MetricChart,
    dataset: &LensDataset,
    audit: &AuditGrid,
    params: &ShootParams,
) -> Result<CoverageReport> {
    if audit.n_z == 0 || audit.n_codir == 0 || !(audit.rho > 0.0) || !(audit.angle_tol > 0.0) {
        return Err(Error::arg("audit grid needs positive sizes and tolerances"));
    }
    let w = 2.0 / audit.n_z as f64;
    let centre = |i: usize| -1.0 + w * (i as f64 + 0.5);
    let codirs: Vec<Vector2<f64>> = (0..audit.n_codir)
        .map(|k| {
            let a = PI * k as f64 / audit.n_codir as f64;
            Vector2::new(a.cos(), a.sin())
        })
        .collect();
    let check_conjugate = chart.smoothness() >= 3;
    let per_path: Vec<Option<Vec<f64>>> = dataset
        .records
        .par_iter()
        .filter(|r| r.is_regular() && r.length > 0.0)
        .map(|r| -> Result<Option<Vec<f64>>> {
            let path = shoot(chart, lift(chart, &r.input)?, params)?;
            if check_conjugate && jacobi_first_conjugate(chart, &path)?.is_some_and(|t| t < path.length - 1e-9) {
                return Ok(None);
            }
            let mut best = vec![f64::INFINITY; audit.n_z * audit.n_z * audit.n_codir];
            let stride = ((audit.rho / 4.0) / path.step).floor().max(1.0) as usize;
            let samples = path.interior_samples();
            for (idx, smp) in samples.iter().enumerate() {
                if idx % stride != 0 && idx + 1 != samples.len() {
                    continue;
                }
                let ginv = crate::metric::inverse2(&chart.metric(&smp.x)?);
                let lo = |c: f64| (((c - audit.rho + 1.0) / w).floor().max(0.0)) as usize;
                let hi = |c: f64| ((((c + audit.rho + 1.0) / w).ceil()) as usize).min(audit.n_z);
                for j in lo(smp.x.y)..hi(smp.x.y) {
                    for i in lo(smp.x.x)..hi(smp.x.x) {
                        let z = Point::new(centre(i), centre(j));
                        if z.norm() > audit.z_radius || (z - smp.x).norm() > audit.rho {
                            continue;
                        }
                        for (k, zeta) in codirs.iter().enumerate() {
                            let c = zeta.dot(&smp.xi).abs() / zeta.dot(&(ginv * zeta)).sqrt();
                            let slot = &mut best[(j * audit.n_z + i) * audit.n_codir + k];
                            if c < *slot {
                                *slot = c;
                            }
                        }
                    }
                }
            }
            Ok(Some(best))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = vec![f64::INFINITY; audit.n_z * audit.n_z * audit.n_codir];
    let mut used = 0;
    let mut skipped = 0;
    for p in per_path {
        match p {
            Some(b) => {
                used += 1;
                for (a, v) in best.iter_mut().zip(b) {
                    *a = a.min(v);
                }
            }
            None => skipped += 1,
        }
    }
    let threshold = audit.angle_tol.sin();
    let (mut total, mut covered) = (0, 0);
    let mut worst: Option<UncoveredCell> = None;
    for j in 0..audit.n_z {
        for i in 0..audit.n_z {
            let z = Point::new(centre(i), centre(j));
            if z.norm() > audit.z_radius {
                continue;
            }
            for k in 0..audit.n_codir {
                total += 1;
                let b = best[(j * audit.n_z + i) * audit.n_codir + k];
                if b <= threshold {
                    covered += 1;
                } else if worst.as_ref().is_none_or(|w| b > w.best_cos) {
                    worst = Some(UncoveredCell { z: [z.x, z.y], codirection: PI * k as f64 / audit.n_codir as f64, best_cos: b });
                }
            }
        }
    }
    Ok(CoverageReport {
        total,
        covered,
        fraction: if total == 0 { 1.0 } else { covered as f64 / total as f64 },
        paths_used: used,
        paths_skipped_conjugate: skipped,
        worst,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReversalReport {
    pub checked: usize,
    pub max_deviation: f64,
}

/// Shoots backwards from every `stride`-th regular record and compares with
/// the reversed input.
pub fn time_reversal_check(
    chart: &MetricChart,
    dataset: &LensDataset,
    params: &ShootParams,
    stride: usize,
) -> Result<ReversalReport> {
    let stride = stride.max(1);
    let picked: Vec<&LensRecord> = dataset
        .records
        .iter()
        .filter(|r| r.is_regular() && r.length > 0.0)
        .step_by(stride)
        .collect();
    let devs = picked
        .par_iter()
        .map(|r| -> Result<f64> {
            let back = scatter(chart, &BallPoint { s: r.output.s, mu: -r.output.mu }, params)?;
            if !back.is_regular() {
                return Ok(f64::INFINITY);
            }
            let ds = angle_diff(back.output.s, r.input.s).abs();
            let dm = (back.output.mu + r.input.mu).abs();
            let dl = (back.length - r.length).abs();
            Ok(ds.max(dm).max(dl))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReversalReport { checked: devs.len(), max_deviation: devs.into_iter().fold(0.0, f64::max) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lift_project_round_trip() {
        let chart = MetricChart::polar_normal(0.3);
        for (s, mu) in [(0.1, 0.2), (3.0, -0.7), (5.5, 0.99)] {
            let b = BallPoint::new(s, mu);
            let p = lift(&chart, &b).unwrap();
            let q = project(&chart, &p).unwrap();
            assert!(angle_diff(q.s, s).abs() < 1e-12 && (q.mu - mu).abs() < 1e-12);
        }
    }

    #[test]
    fn euclidean_scatter_matches_chord_geometry() {
        let chart = MetricChart::euclidean();
        let r = scatter(&chart, &BallPoint::new(1.0, 0.3), &ShootParams::default()).unwrap();
        assert!(angle_diff(r.output.s, 1.0 + PI - 2.0 * 0.3_f64.asin()).abs() < 1e-9);
        assert!((r.output.mu - 0.3).abs() < 1e-9);
    }

    #[test]
    fn tangential_label_is_identity() {
        let chart = MetricChart::euclidean();
        let r = scatter(&chart, &BallPoint::new(2.0, 1.0), &ShootParams::default()).unwrap();
        assert_eq!(r.status, RecordStatus::Tangential);
        assert_eq!(r.output, r.input);
        assert_eq!(r.length, 0.0);
    }

    #[test]
    fn out_of_ball_label_is_rejected() {
        let chart = MetricChart::euclidean();
        assert!(matches!(scatter(&chart, &BallPoint::new(0.0, 1.5), &ShootParams::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let chart = MetricChart::euclidean();
        let ds = generate_dataset(&chart, &LensGrid::full(4, 3), &DatasetParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        let back = LensDataset::read_csv(&p).unwrap();
        assert_eq!(back.grid, ds.grid);
        assert_eq!(back.records, ds.records);
        assert_eq!(back.chart_fingerprint, chart.fingerprint());
        assert_eq!(back.config_fingerprint, None);
        let tagged = LensDataset { config_fingerprint: Some("0123456789abcdef".into()), ..ds };
        tagged.write_csv(&p).unwrap();
        assert_eq!(LensDataset::read_csv(&p).unwrap().config_fingerprint, tagged.config_fingerprint);
    }

    #[test]
    fn band_grid_excludes_central_mu() {
        let g = LensGrid::band(4, 2, 0.9, 1.0);
        assert!(g.mu_nodes().iter().all(|m| m.abs() > 0.9 && m.abs() < 1.0));
        assert_eq!(g.nodes().len(), 16);
    }
}
