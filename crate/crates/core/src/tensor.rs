//! Symmetric 2-tensor fields on a square grid over the disc.
//!
//! Nodes cover `[-w, w]^2`; the mask keeps nodes with `|x| <= 1`. Vector
//! fields with the Dirichlet flag live on the active nodes `|x| <= 1 - 2 dx`,
//! so that every fourth-order stencil centred at an active node stays in the
//! mask. The symmetric differential is assembled as a sparse matrix and the
//! divergence used by the decomposition is its weighted adjoint, which makes
//! discrete integration by parts exact.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};
use sprs::{CsMat, TriMat};

use crate::cg::{pcg, CgOutcome};
use crate::metric::{det2, inverse2, Christoffel, MetricChart};
use crate::{Error, Point, Result};

pub const DEFAULT_GRID: usize = 65;
pub const DEFAULT_HALF_WIDTH: f64 = 1.05;
pub const DEFAULT_CG_TOL: f64 = 1e-10;
pub const DEFAULT_CG_MAX_ITER: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    n: usize,
    half_width: f64,
}

impl TensorGrid {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 7 {
            return Err(Error::arg(format!("tensor grid needs at least 7 nodes per axis, got {n}")));
        }
        if !(half_width > 1.0 && half_width.is_finite()) {
            return Err(Error::arg("grid half width must exceed 1"));
        }
        Ok(TensorGrid { n, half_width })
    }

    pub fn with_size(n: usize) -> Result<Self> {
        Self::new(n, DEFAULT_HALF_WIDTH)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + self.spacing() * i as f64
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    pub fn point(&self, idx: usize) -> Point {
        let (i, j) = self.ij(idx);
        Point::new(self.coord(i), self.coord(j))
    }

    pub fn in_mask(&self, idx: usize) -> bool {
        self.point(idx).norm() <= 1.0 + 1e-12
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.point(idx).norm() <= 1.0 - 2.0 * self.spacing() + 1e-12
    }

    pub fn masked_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.in_mask(k)).collect()
    }

    pub fn active_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.is_active(k)).collect()
    }

    pub fn same_as(&self, other: &TensorGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{}x{} on half width {} vs {}x{} on half width {}",
                self.n, self.n, self.half_width, other.n, other.n, other.half_width
            )))
        }
    }

    /// Bilinear weights `(node, weight)` at `x`; empty outside the grid.
    pub fn bilinear(&self, x: &Point) -> Option<[(usize, f64); 4]> {
        let h = self.spacing();
        let u = (x.x + self.half_width) / h;
        let v = (x.y + self.half_width) / h;
        if !(u >= 0.0 && v >= 0.0 && u <= (self.n - 1) as f64 && v <= (self.n - 1) as f64) {
            return None;
        }
        let i = (u.floor() as usize).min(self.n - 2);
        let j = (v.floor() as usize).min(self.n - 2);
        let (a, b) = (u - i as f64, v - j as f64);
        Some([
            (self.index(i, j), (1.0 - a) * (1.0 - b)),
            (self.index(i + 1, j), a * (1.0 - b)),
            (self.index(i, j + 1), (1.0 - a) * b),
            (self.index(i + 1, j + 1), a * b),
        ])
    }
}

/// Fourth-order first-derivative stencil at index `i` of `n`, as `(offset, weight * 12)`.
pub(crate) fn stencil(i: usize, n: usize) -> [(isize, f64); 5] {
    if i >= 2 && i + 2 < n {
        [(-2, 1.0), (-1, -8.0), (0, 0.0), (1, 8.0), (2, -1.0)]
    } else if i == 0 {
        [(0, -25.0), (1, 48.0), (2, -36.0), (3, 16.0), (4, -3.0)]
    } else if i == 1 {
        [(-1, -3.0), (0, -10.0), (1, 18.0), (2, -6.0), (3, 1.0)]
    } else if i == n - 2 {
        [(1, 3.0), (0, 10.0), (-1, -18.0), (-2, 6.0), (-3, -1.0)]
    } else {
        [(0, 25.0), (-1, -48.0), (-2, 36.0), (-3, -16.0), (-4, 3.0)]
    }
}

/// Component order of stored tensors.
pub const COMPONENTS: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];

#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    pub grid: TensorGrid,
    /// `[f11, f12, f22]` per node.
    pub values: Vec<[f64; 3]>,
}

impl SymTensorField {
    pub fn zeros(grid: TensorGrid) -> Self {
        SymTensorField { grid, values: vec![[0.0; 3]; grid.len()] }
    }

    /// Samples `f` on the masked nodes.
    pub fn from_fn(grid: TensorGrid, f: impl Fn(&Point) -> Matrix2<f64>) -> Self {
        let mut out = Self::zeros(grid);
        for idx in grid.masked_nodes() {
            let m = f(&grid.point(idx));
            out.values[idx] = [m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]];
        }
        out
    }

    /// Samples `f` on every grid node, including those outside the disc.
    pub fn from_fn_all(grid: TensorGrid, f: impl Fn(&Point) -> Matrix2<f64>) -> Self {
        let mut out = Self::zeros(grid);
        for idx in 0..grid.len() {
            let m = f(&grid.point(idx));
            out.values[idx] = [m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]];
        }
        out
    }

    /// Zeroes every node outside the mask.
    pub fn masked(&self) -> Self {
        let mut out = self.clone();
        for idx in 0..self.grid.len() {
            if !self.grid.in_mask(idx) {
                out.values[idx] = [0.0; 3];
            }
        }
        out
    }

    pub fn at(&self, idx: usize) -> Matrix2<f64> {
        let v = self.values[idx];
        Matrix2::new(v[0], v[1], v[1], v[2])
    }

    pub fn scaled(&self, a: f64) -> Self {
        SymTensorField { grid: self.grid, values: self.values.iter().map(|v| v.map(|x| a * x)).collect() }
    }

    pub fn axpy(&self, a: f64, other: &SymTensorField) -> Result<Self> {
        self.grid.same_as(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| [x[0] + a * y[0], x[1] + a * y[1], x[2] + a * y[2]])
            .collect();
        Ok(SymTensorField { grid: self.grid, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Interleaved `[f11, f12, f22]` for every node.
    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn from_vec(grid: TensorGrid, v: &[f64]) -> Result<Self> {
        if v.len() != 3 * grid.len() {
            return Err(Error::GridMismatch(format!("vector of length {} for {} nodes", v.len(), grid.len())));
        }
        Ok(SymTensorField { grid, values: v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect() })
    }

    /// Bilinear interpolation at `x`.
    pub fn interpolate(&self, x: &Point) -> Matrix2<f64> {
        let mut out = [0.0; 3];
        if let Some(w) = self.grid.bilinear(x) {
            for (idx, a) in w {
                for c in 0..3 {
                    out[c] += a * self.values[idx][c];
                }
            }
        }
        Matrix2::new(out[0], out[1], out[1], out[2])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_with_comment(path, None)
    }

    /// Like [`write_csv`](Self::write_csv), with a leading `# comment` line.
    pub fn write_csv_with_comment(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        if let Some(c) = comment {
            writeln!(f, "# {c}")?;
        }
        writeln!(f, "x,y,f11,f12,f22")?;
        for (idx, v) in self.values.iter().enumerate() {
            let p = self.grid.point(idx);
            writeln!(f, "{},{},{},{},{}", p.x, p.y, v[0], v[1], v[2])?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = read_rows(path, 5)?;
        let grid = infer_grid(&rows)?;
        let mut out = Self::zeros(grid);
        for (k, r) in rows.iter().enumerate() {
            out.values[k] = [r[2], r[3], r[4]];
        }
        Ok(out)
    }
}

fn read_rows(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Format(format!("expected {cols} columns, found {}", rec.len())));
        }
        let r = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(r);
    }
    Ok(rows)
}

fn infer_grid(rows: &[Vec<f64>]) -> Result<TensorGrid> {
    let n = (rows.len() as f64).sqrt().round() as usize;
    if n * n != rows.len() || n < 7 {
        return Err(Error::Format(format!("{} rows do not form a square grid", rows.len())));
    }
    let w = -rows[0][0];
    let grid = TensorGrid::new(n, w)?;
    for (k, r) in rows.iter().enumerate() {
        let p = grid.point(k);
        if (p.x - r[0]).abs() > 1e-9 || (p.y - r[1]).abs() > 1e-9 {
            return Err(Error::Format(format!("row {k} is not at grid node ({}, {})", p.x, p.y)));
        }
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldGrid {
    pub grid: TensorGrid,
    /// Components per node; contravariant unless produced by [`divergence`].
    pub values: Vec<[f64; 2]>,
    pub dirichlet: bool,
}

impl VectorFieldGrid {
    pub fn zeros(grid: TensorGrid, dirichlet: bool) -> Self {
        VectorFieldGrid { grid, values: vec![[0.0; 2]; grid.len()], dirichlet }
    }

    /// Samples `v`; with `dirichlet` only the active nodes are kept.
    pub fn from_fn(grid: TensorGrid, dirichlet: bool, v: impl Fn(&Point) -> Vector2<f64>) -> Self {
        let mut out = Self::zeros(grid, dirichlet);
        for idx in 0..grid.len() {
            if !dirichlet || grid.is_active(idx) {
                let p = grid.point(idx);
                let w = v(&p);
                out.values[idx] = [w.x, w.y];
            }
        }
        out
    }

    pub fn at(&self, idx: usize) -> Vector2<f64> {
        Vector2::new(self.values[idx][0], self.values[idx][1])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_with_comment(path, None)
    }

    pub fn write_csv_with_comment(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        if let Some(c) = comment {
            writeln!(f, "# {c}")?;
        }
        writeln!(f, "x,y,v1,v2")?;
        for (idx, v) in self.values.iter().enumerate() {
            let p = self.grid.point(idx);
            writeln!(f, "{},{},{},{}", p.x, p.y, v[0], v[1])?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = read_rows(path, 4)?;
        let grid = infer_grid(&rows)?;
        let mut out = Self::zeros(grid, false);
        for (k, r) in rows.iter().enumerate() {
            out.values[k] = [r[2], r[3]];
        }
        out.dirichlet = (0..grid.len()).all(|k| grid.is_active(k) || out.values[k] == [0.0, 0.0]);
        Ok(out)
    }
}

/// Metric data at every grid node. Nodes outside the extended chart use the
/// metric at the radial projection onto its edge.
#[derive(Clone, Debug)]
pub struct GridGeometry {
    pub grid: TensorGrid,
    pub g: Vec<Matrix2<f64>>,
    pub ginv: Vec<Matrix2<f64>>,
    pub sqrt_det: Vec<f64>,
    pub gamma: Vec<Christoffel>,
}

impl GridGeometry {
    pub fn new(chart: &MetricChart, grid: TensorGrid) -> Result<Self> {
        if chart.smoothness() < 2 {
            return Err(Error::arg("tensor calculus needs a chart of smoothness at least 2"));
        }
        let n = grid.len();
        let (mut g, mut ginv, mut sqrt_det, mut gamma) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for idx in 0..n {
            let mut p = grid.point(idx);
            if p.norm() > chart.extent() {
                p *= chart.extent() / p.norm();
            }
            let jet = chart.jet(&p)?;
            g.push(jet.g);
            ginv.push(inverse2(&jet.g));
            sqrt_det.push(det2(&jet.g).sqrt());
            gamma.push(Christoffel::from_jet(&jet));
        }
        Ok(GridGeometry { grid, g, ginv, sqrt_det, gamma })
    }

    /// 3x3 Gram block of the tensor pairing at a node, including the volume weight.
    pub fn tensor_block(&self, idx: usize) -> Matrix3<f64> {
        let gi = &self.ginv[idx];
        let basis = [
            Matrix2::new(1.0, 0.0, 0.0, 0.0),
            Matrix2::new(0.0, 1.0, 1.0, 0.0),
            Matrix2::new(0.0, 0.0, 0.0, 1.0),
        ];
        let w = self.sqrt_det[idx] * self.grid.spacing().powi(2);
        Matrix3::from_fn(|r, c| (gi * basis[r] * gi * basis[c]).trace() * w)
    }

    pub fn vector_block(&self, idx: usize) -> Matrix2<f64> {
        self.g[idx] * (self.sqrt_det[idx] * self.grid.spacing().powi(2))
    }

    /// Sparse symmetric differential from vector dofs to masked tensor dofs.
    /// `col_of` maps a node to the column of its first vector component.
    fn assemble_d(&self, rows: &[usize], col_of: impl Fn(usize) -> Option<usize>, ncols: usize) -> CsMat<f64> {
        let grid = &self.grid;
        let n = grid.n();
        let h = grid.spacing();
        let mut tri = TriMat::new((3 * rows.len(), ncols));
        for (r, &q) in rows.iter().enumerate() {
            let (qi, qj) = grid.ij(q);
            for axis in 0..2 {
                let pos = if axis == 0 { qi } else { qj };
                for (off, c) in stencil(pos, n) {
                    if c == 0.0 {
                        continue;
                    }
                    let np = (pos as isize + off) as usize;
                    let p = if axis == 0 { grid.index(np, qj) } else { grid.index(qi, np) };
                    let Some(col) = col_of(p) else { continue };
                    let w = c / (12.0 * h);
                    let gp = &self.g[p];
                    for (comp, &(a, b)) in COMPONENTS.iter().enumerate() {
                        for m in 0..2 {
                            let mut coef = 0.0;
                            if axis == a {
                                coef += 0.5 * gp[(b, m)];
                            }
                            if axis == b {
                                coef += 0.5 * gp[(a, m)];
                            }
                            if coef != 0.0 {
                                tri.add_triplet(3 * r + comp, col + m, w * coef);
                            }
                        }
                    }
                }
            }
            if let Some(col) = col_of(q) {
                let gam = &self.gamma[q].0;
                let gq = &self.g[q];
                for (comp, &(a, b)) in COMPONENTS.iter().enumerate() {
                    for m in 0..2 {
                        let coef: f64 = (0..2).map(|k| gam[k][a][b] * gq[(k, m)]).sum();
                        if coef != 0.0 {
                            tri.add_triplet(3 * r + comp, col + m, -coef);
                        }
                    }
                }
            }
        }
        tri.to_csr()
    }
}

fn grids_match(chart_grid: &TensorGrid, g: &TensorGrid) -> Result<()> {
    chart_grid.same_as(g)
}

/// `[dv]_ij = (nabla_i v_j + nabla_j v_i) / 2` on the masked nodes.
pub fn sym_differential(chart: &MetricChart, v: &VectorFieldGrid) -> Result<SymTensorField> {
    let geom = GridGeometry::new(chart, v.grid)?;
    sym_differential_with(&geom, v)
}

pub fn sym_differential_with(geom: &GridGeometry, v: &VectorFieldGrid) -> Result<SymTensorField> {
    grids_match(&geom.grid, &v.grid)?;
    let grid = geom.grid;
    let rows = grid.masked_nodes();
    let d = geom.assemble_d(&rows, |p| Some(2 * p), 2 * grid.len());
    let x: Vec<f64> = v.values.iter().flatten().copied().collect();
    let y = spmv(&d, &x);
    let mut out = SymTensorField::zeros(grid);
    for (r, &q) in rows.iter().enumerate() {
        out.values[q] = [y[3 * r], y[3 * r + 1], y[3 * r + 2]];
    }
    Ok(out)
}

pub(crate) fn spmv(a: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.rows()];
    sprs::prod::mul_acc_mat_vec_csr(a.view(), x, &mut y[..]);
    y
}

/// `A^T x` for a CSR matrix.
pub(crate) fn spmv_t(a: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.cols()];
    for (r, row) in a.outer_iterator().enumerate() {
        let xr = x[r];
        if xr == 0.0 {
            continue;
        }
        for (c, &v) in row.iter() {
            y[c] += v * xr;
        }
    }
    y
}

/// Covariant divergence `g^jk nabla_k f_ij` by fourth-order differences, as a
/// 1-form on the masked nodes.
pub fn divergence(chart: &MetricChart, f: &SymTensorField) -> Result<VectorFieldGrid> {
    let geom = GridGeometry::new(chart, f.grid)?;
    let grid = f.grid;
    let n = grid.n();
    let h = grid.spacing();
    let mut out = VectorFieldGrid::zeros(grid, false);
    for q in grid.masked_nodes() {
        let (qi, qj) = grid.ij(q);
        let mut df = [Matrix2::zeros(); 2];
        for (axis, d) in df.iter_mut().enumerate() {
            let pos = if axis == 0 { qi } else { qj };
            for (off, c) in stencil(pos, n) {
                let np = (pos as isize + off) as usize;
                let p = if axis == 0 { grid.index(np, qj) } else { grid.index(qi, np) };
                *d += f.at(p) * (c / (12.0 * h));
            }
        }
        let fq = f.at(q);
        let gam = &geom.gamma[q].0;
        let gi = &geom.ginv[q];
        let mut res = [0.0; 2];
        for (i, r) in res.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..2 {
                for k in 0..2 {
                    let mut cov = df[k][(i, j)];
                    for l in 0..2 {
                        cov -= gam[l][k][i] * fq[(l, j)] + gam[l][k][j] * fq[(i, l)];
                    }
                    s += gi[(j, k)] * cov;
                }
            }
            *r = s;
        }
        out.values[q] = res;
    }
    Ok(out)
}

/// Riemannian L2 pairing of tensor fields over the mask.
pub fn l2_inner(chart: &MetricChart, a: &SymTensorField, b: &SymTensorField) -> Result<f64> {
    a.grid.same_as(&b.grid)?;
    let geom = GridGeometry::new(chart, a.grid)?;
    Ok(l2_inner_with(&geom, a, b))
}

pub fn l2_inner_with(geom: &GridGeometry, a: &SymTensorField, b: &SymTensorField) -> f64 {
    geom.grid
        .masked_nodes()
        .into_iter()
        .map(|q| {
            let m = geom.tensor_block(q);
            let x = nalgebra::Vector3::from(a.values[q]);
            let y = nalgebra::Vector3::from(b.values[q]);
            x.dot(&(m * y))
        })
        .sum()
}

/// Pairing of a vector field with a 1-form (or two vector fields when
/// `lower` is set) with the volume weight.
pub fn vector_inner(geom: &GridGeometry, a: &VectorFieldGrid, b: &VectorFieldGrid, lower: bool) -> f64 {
    (0..geom.grid.len())
        .filter(|&q| geom.grid.in_mask(q))
        .map(|q| {
            let w = geom.sqrt_det[q] * geom.grid.spacing().powi(2);
            let x = a.at(q);
            let y = b.at(q);
            if lower { w * x.dot(&(geom.g[q] * y)) } else { w * x.dot(&y) }
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub solenoidal: SymTensorField,
    pub potential: SymTensorField,
    pub v: VectorFieldGrid,
    pub cg: CgOutcome,
}

/// Dirichlet operators on one grid: `d` from active vector dofs to masked
/// tensor dofs, the tensor and vector mass matrices, and `d^T M d`.
#[derive(Clone, Debug)]
pub struct Decomposer {
    pub geom: GridGeometry,
    pub masked: Vec<usize>,
    pub active: Vec<usize>,
    d: CsMat<f64>,
    dt: CsMat<f64>,
    mt: Vec<Matrix3<f64>>,
    mv: Vec<Matrix2<f64>>,
    k: CsMat<f64>,
    k_diag: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Decomposer {
    pub fn new(chart: &MetricChart, grid: TensorGrid) -> Result<Self> {
        let geom = GridGeometry::new(chart, grid)?;
        let masked = grid.masked_nodes();
        let active = grid.active_nodes();
        if active.is_empty() {
            return Err(Error::arg("grid too coarse: no active Dirichlet nodes"));
        }
        let mut col = vec![usize::MAX; grid.len()];
        for (a, &p) in active.iter().enumerate() {
            col[p] = 2 * a;
        }
        let d = geom.assemble_d(&masked, |p| (col[p] != usize::MAX).then_some(col[p]), 2 * active.len());
        let dt = d.transpose_view().to_csr();
        let mt: Vec<Matrix3<f64>> = masked.iter().map(|&q| geom.tensor_block(q)).collect();
        let mv: Vec<Matrix2<f64>> = active.iter().map(|&p| geom.vector_block(p)).collect();
        let mut mtri = TriMat::new((3 * masked.len(), 3 * masked.len()));
        for (r, m) in mt.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    mtri.add_triplet(3 * r + a, 3 * r + b, m[(a, b)]);
                }
            }
        }
        let mmat: CsMat<f64> = mtri.to_csr();
        let md = &mmat * &d;
        let k: CsMat<f64> = &dt * &md;
        let mut k_diag = vec![0.0; k.rows()];
        for (r, row) in k.outer_iterator().enumerate() {
            k_diag[r] = row.get(r).copied().unwrap_or(0.0);
        }
        Ok(Decomposer { geom, masked, active, d, dt, mt, mv, k, k_diag, tol: DEFAULT_CG_TOL, max_iter: DEFAULT_CG_MAX_ITER })
    }

    pub fn grid(&self) -> TensorGrid {
        self.geom.grid
    }

    pub fn n_tensor_dofs(&self) -> usize {
        3 * self.masked.len()
    }

    pub fn n_vector_dofs(&self) -> usize {
        2 * self.active.len()
    }

    /// Masked tensor dofs of a field.
    pub fn restrict(&self, f: &SymTensorField) -> Vec<f64> {
        self.masked.iter().flat_map(|&q| f.values[q]).collect()
    }

    pub fn extend(&self, x: &[f64]) -> SymTensorField {
        let mut out = SymTensorField::zeros(self.grid());
        for (r, &q) in self.masked.iter().enumerate() {
            out.values[q] = [x[3 * r], x[3 * r + 1], x[3 * r + 2]];
        }
        out
    }

    pub fn restrict_vector(&self, v: &VectorFieldGrid) -> Vec<f64> {
        self.active.iter().flat_map(|&p| v.values[p]).collect()
    }

    pub fn extend_vector(&self, x: &[f64]) -> VectorFieldGrid {
        let mut out = VectorFieldGrid::zeros(self.grid(), true);
        for (a, &p) in self.active.iter().enumerate() {
            out.values[p] = [x[2 * a], x[2 * a + 1]];
        }
        out
    }

    /// Tensor mass matrix applied to masked dofs.
    pub fn mass_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (r, m) in self.mt.iter().enumerate() {
            let v = m * nalgebra::Vector3::new(x[3 * r], x[3 * r + 1], x[3 * r + 2]);
            y[3 * r..3 * r + 3].copy_from_slice(v.as_slice());
        }
        y
    }

    pub fn mass_solve(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (r, m) in self.mt.iter().enumerate() {
            let inv = m.try_inverse().expect("tensor mass block is positive definite");
            let v = inv * nalgebra::Vector3::new(x[3 * r], x[3 * r + 1], x[3 * r + 2]);
            y[3 * r..3 * r + 3].copy_from_slice(v.as_slice());
        }
        y
    }

    pub fn mass_blocks(&self) -> &[Matrix3<f64>] {
        &self.mt
    }

    pub fn mass_diag(&self) -> Vec<f64> {
        self.mt.iter().flat_map(|m| [m[(0, 0)], m[(1, 1)], m[(2, 2)]]).collect()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(self.mass_apply(b)).map(|(x, y)| x * y).sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    pub fn vector_norm(&self, v: &[f64]) -> f64 {
        self.mv
            .iter()
            .enumerate()
            .map(|(a, m)| {
                let x = Vector2::new(v[2 * a], v[2 * a + 1]);
                x.dot(&(m * x))
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `d v` for active vector dofs, as masked tensor dofs.
    pub fn d_apply(&self, v: &[f64]) -> Vec<f64> {
        spmv(&self.d, v)
    }

    /// Weighted adjoint divergence `-M_V^{-1} d^T M_T f` on active nodes.
    pub fn adjoint_divergence(&self, f: &[f64]) -> Vec<f64> {
        let r = spmv(&self.dt, &self.mass_apply(f));
        let mut out = vec![0.0; r.len()];
        for (a, m) in self.mv.iter().enumerate() {
            let v = m.try_inverse().expect("vector mass block is positive definite") * Vector2::new(r[2 * a], r[2 * a + 1]);
            out[2 * a] = -v.x;
            out[2 * a + 1] = -v.y;
        }
        out
    }

    /// Size of the discrete divergence relative to `||f||`, measured in the dual norm.
    pub fn divergence_ratio(&self, f: &[f64]) -> f64 {
        let r = spmv(&self.dt, &self.mass_apply(f));
        let mut dual = 0.0;
        for (a, m) in self.mv.iter().enumerate() {
            let x = Vector2::new(r[2 * a], r[2 * a + 1]);
            dual += x.dot(&(m.try_inverse().unwrap() * x));
        }
        let nf = self.norm(f);
        if nf == 0.0 { 0.0 } else { dual.sqrt() / nf }
    }

    pub fn decompose_dofs(&self, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>, CgOutcome)> {
        let b = spmv(&self.dt, &self.mass_apply(f));
        let mut v = vec![0.0; b.len()];
        let k = &self.k;
        let cg = pcg(
            |x, y| {
                y.iter_mut().for_each(|e| *e = 0.0);
                sprs::prod::mul_acc_mat_vec_csr(k.view(), x, y);
            },
            Some(&self.k_diag),
            &b,
            &mut v,
            self.tol,
            self.max_iter,
        )?;
        let dv = self.d_apply(&v);
        let fs: Vec<f64> = f.iter().zip(&dv).map(|(a, b)| a - b).collect();
        Ok((fs, v, cg))
    }

    pub fn decompose(&self, f: &SymTensorField) -> Result<Decomposition> {
        self.grid().same_as(&f.grid)?;
        let x = self.restrict(f);
        let (fs, v, cg) = self.decompose_dofs(&x)?;
        let dv: Vec<f64> = x.iter().zip(&fs).map(|(a, b)| a - b).collect();
        Ok(Decomposition { solenoidal: self.extend(&fs), potential: self.extend(&dv), v: self.extend_vector(&v), cg })
    }
}

/// Solenoidal and potential parts of `f` with a Dirichlet potential.
pub fn decompose(chart: &MetricChart, f: &SymTensorField, tol: f64) -> Result<Decomposition> {
    if !(tol > 0.0) {
        return Err(Error::arg("decomposition tolerance must be positive"));
    }
    let mut dec = Decomposer::new(chart, f.grid)?;
    dec.tol = tol;
    dec.decompose(f)
}

/// Pointwise divergence of a field that vanishes outside the mask, split
/// into nodes whose stencil crosses the mask edge and the rest. `f^s`
/// extended by zero is solenoidal only away from the edge.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EdgeDivergence {
    pub interior_max: f64,
    pub edge_max: f64,
    pub edge_nodes: usize,
}

pub fn edge_divergence(chart: &MetricChart, f: &SymTensorField) -> Result<EdgeDivergence> {
    let div = divergence(chart, f)?;
    let grid = f.grid;
    // stencil half-width plus the Dirichlet layer
    let reach = 1.0 - 4.0 * grid.spacing();
    let mut out = EdgeDivergence { interior_max: 0.0, edge_max: 0.0, edge_nodes: 0 };
    for q in grid.masked_nodes() {
        let d = Vector2::from(div.values[q]).norm();
        if grid.point(q).norm() > reach {
            out.edge_nodes += 1;
            out.edge_max = out.edge_max.max(d);
        } else {
            out.interior_max = out.interior_max.max(d);
        }
    }
    Ok(out)
}
