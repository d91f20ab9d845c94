//! Interval and rectangle simplicial meshes with uniform refinement.
//!
//! Vertices are stored as a flat coordinate array (`dim` entries per vertex)
//! and cells as a flat connectivity array (`dim + 1` entries per cell).
//! Refinement appends edge midpoints after the parent vertices, so every
//! parent vertex keeps its index and coordinates in the child.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::MeshError;

/// Bounded domain: an interval (N = 1) or an axis-aligned rectangle (N = 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainDescriptor {
    Interval { a: f64, b: f64 },
    Rectangle { a: f64, b: f64, c: f64, d: f64 },
}

impl DomainDescriptor {
    pub fn interval(a: f64, b: f64) -> Result<Self, MeshError> {
        let d = DomainDescriptor::Interval { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn rectangle(a: f64, b: f64, c: f64, d: f64) -> Result<Self, MeshError> {
        let dom = DomainDescriptor::Rectangle { a, b, c, d };
        dom.validate()?;
        Ok(dom)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let ok = match *self {
            DomainDescriptor::Interval { a, b } => a.is_finite() && b.is_finite() && b > a,
            DomainDescriptor::Rectangle { a, b, c, d } => {
                [a, b, c, d].iter().all(|v| v.is_finite()) && b > a && d > c
            }
        };
        if ok {
            Ok(())
        } else {
            Err(MeshError::InvertedBounds)
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainDescriptor::Interval { .. } => 1,
            DomainDescriptor::Rectangle { .. } => 2,
        }
    }

    /// Lebesgue measure |Ω|.
    pub fn measure(&self) -> f64 {
        match *self {
            DomainDescriptor::Interval { a, b } => b - a,
            DomainDescriptor::Rectangle { a, b, c, d } => (b - a) * (d - c),
        }
    }

    /// Lower and upper corner, padded to two coordinates.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            DomainDescriptor::Interval { a, b } => ([a, 0.0], [b, 0.0]),
            DomainDescriptor::Rectangle { a, b, c, d } => ([a, c], [b, d]),
        }
    }

    /// Longest side length.
    pub fn diameter_bound(&self) -> f64 {
        match *self {
            DomainDescriptor::Interval { a, b } => b - a,
            DomainDescriptor::Rectangle { a, b, c, d } => (b - a).max(d - c),
        }
    }

    fn on_boundary(&self, x: &[f64]) -> bool {
        let scale = self.diameter_bound();
        let tol = 1e-12 * scale;
        match *self {
            DomainDescriptor::Interval { a, b } => (x[0] - a).abs() <= tol || (x[0] - b).abs() <= tol,
            DomainDescriptor::Rectangle { a, b, c, d } => {
                (x[0] - a).abs() <= tol
                    || (x[0] - b).abs() <= tol
                    || (x[1] - c).abs() <= tol
                    || (x[1] - d).abs() <= tol
            }
        }
    }
}

/// How a vertex of a refined mesh arises from its parent mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParentRef {
    Vertex(usize),
    Midpoint(usize, usize),
}

/// One level of a nested mesh hierarchy. Immutable once built.
#[derive(Debug)]
pub struct MeshLevel {
    domain: DomainDescriptor,
    level: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    boundary: Vec<bool>,
    measures: Vec<f64>,
    parent: Option<(Arc<MeshLevel>, Vec<ParentRef>)>,
}

impl MeshLevel {
    pub fn domain(&self) -> &DomainDescriptor {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_vertices(&self) -> usize {
        self.boundary.len()
    }

    pub fn num_cells(&self) -> usize {
        self.measures.len()
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.dim() + 1
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn cell(&self, k: usize) -> &[usize] {
        let n = self.nodes_per_cell();
        &self.cells[k * n..(k + 1) * n]
    }

    pub fn cell_measure(&self, k: usize) -> f64 {
        self.measures[k]
    }

    pub fn cell_measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    /// Parent mesh and the per-vertex parent map, absent on the base level.
    pub fn parent(&self) -> Option<(&Arc<MeshLevel>, &[ParentRef])> {
        self.parent.as_ref().map(|(m, map)| (m, map.as_slice()))
    }

    /// Largest cell diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_cells())
            .map(|k| {
                let c = self.cell(k);
                let mut h: f64 = 0.0;
                for i in 0..c.len() {
                    for j in i + 1..c.len() {
                        let (a, b) = (self.vertex(c[i]), self.vertex(c[j]));
                        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                        h = h.max(d2.sqrt());
                    }
                }
                h
            })
            .fold(0.0, f64::max)
    }

    /// Gradients of the barycentric (hat) functions of cell `k`, one row per
    /// local vertex, padded to two components.
    pub fn basis_gradients(&self, k: usize) -> [[f64; 2]; 3] {
        let c = self.cell(k);
        match self.dim() {
            1 => {
                let h = self.vertex(c[1])[0] - self.vertex(c[0])[0];
                [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]]
            }
            _ => {
                let (p0, p1, p2) = (self.vertex(c[0]), self.vertex(c[1]), self.vertex(c[2]));
                let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
                [
                    [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
                    [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
                    [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
                ]
            }
        }
    }

    /// Physical point of cell `k` with barycentric coordinates `bary`.
    pub fn map_point(&self, k: usize, bary: &[f64]) -> [f64; 2] {
        let c = self.cell(k);
        let mut x = [0.0; 2];
        for (l, &v) in c.iter().enumerate() {
            for (d, xd) in self.vertex(v).iter().enumerate() {
                x[d] += bary[l] * xd;
            }
        }
        x
    }

    /// True when `self` is `other` or one of its refinement descendants.
    pub fn descends_from(&self, other: &MeshLevel) -> bool {
        let mut cur: &MeshLevel = self;
        loop {
            if std::ptr::eq(cur, other) {
                return true;
            }
            match &cur.parent {
                Some((p, _)) => cur = p,
                None => return false,
            }
        }
    }

    fn from_parts(
        domain: DomainDescriptor,
        level: usize,
        coords: Vec<f64>,
        cells: Vec<usize>,
        parent: Option<(Arc<MeshLevel>, Vec<ParentRef>)>,
    ) -> Result<MeshLevel, MeshError> {
        let dim = domain.dim();
        let nv = coords.len() / dim;
        let boundary = (0..nv).map(|i| domain.on_boundary(&coords[i * dim..(i + 1) * dim])).collect();
        let mut mesh = MeshLevel { domain, level, coords, cells, boundary, measures: Vec::new(), parent };
        let measures = (0..mesh.cells.len() / (dim + 1))
            .map(|k| mesh.signed_measure(k))
            .collect::<Vec<_>>();
        if let Some(k) = measures.iter().position(|&m| !(m > 0.0)) {
            return Err(MeshError::DegenerateCell(k));
        }
        mesh.measures = measures;
        Ok(mesh)
    }

    fn signed_measure(&self, k: usize) -> f64 {
        let c = self.cell(k);
        match self.dim() {
            1 => self.vertex(c[1])[0] - self.vertex(c[0])[0],
            _ => {
                let (p0, p1, p2) = (self.vertex(c[0]), self.vertex(c[1]), self.vertex(c[2]));
                0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
            }
        }
    }
}

/// Uniform level-0 mesh. For rectangles `base_cells` is the count per side and
/// each square is split along its rising diagonal.
pub fn build_mesh(domain: DomainDescriptor, base_cells: usize) -> Result<Arc<MeshLevel>, MeshError> {
    domain.validate()?;
    if base_cells == 0 {
        return Err(MeshError::NonpositiveCellCount);
    }
    if base_cells < 2 {
        return Err(MeshError::TooFewCells(base_cells));
    }
    let (coords, cells) = match domain {
        DomainDescriptor::Interval { a, b } => {
            let h = (b - a) / base_cells as f64;
            let coords = (0..=base_cells)
                .map(|i| if i == base_cells { b } else { a + h * i as f64 })
                .collect();
            let cells = (0..base_cells).flat_map(|i| [i, i + 1]).collect();
            (coords, cells)
        }
        DomainDescriptor::Rectangle { a, b, c, d } => {
            let n = base_cells;
            let (hx, hy) = ((b - a) / n as f64, (d - c) / n as f64);
            let at = |i: usize, lo: f64, hi: f64, h: f64| if i == n { hi } else { lo + h * i as f64 };
            let mut coords = Vec::with_capacity(2 * (n + 1) * (n + 1));
            for j in 0..=n {
                for i in 0..=n {
                    coords.push(at(i, a, b, hx));
                    coords.push(at(j, c, d, hy));
                }
            }
            let idx = |i: usize, j: usize| j * (n + 1) + i;
            let mut cells = Vec::with_capacity(6 * n * n);
            for j in 0..n {
                for i in 0..n {
                    let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                    cells.extend_from_slice(&[v00, v10, v11]);
                    cells.extend_from_slice(&[v00, v11, v01]);
                }
            }
            (coords, cells)
        }
    };
    MeshLevel::from_parts(domain, 0, coords, cells, None).map(Arc::new)
}

/// Uniform refinement: bisection in 1D, red refinement in 2D.
pub fn refine(mesh: &Arc<MeshLevel>) -> Result<Arc<MeshLevel>, MeshError> {
    let dim = mesh.dim();
    let mut coords = mesh.coords.clone();
    let mut parent_map: Vec<ParentRef> = (0..mesh.num_vertices()).map(ParentRef::Vertex).collect();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |i: usize, j: usize, coords: &mut Vec<f64>, map: &mut Vec<ParentRef>| -> usize {
        let key = (i.min(j), i.max(j));
        *midpoints.entry(key).or_insert_with(|| {
            let id = coords.len() / dim;
            for d in 0..dim {
                let m = 0.5 * (coords[i * dim + d] + coords[j * dim + d]);
                coords.push(m);
            }
            map.push(ParentRef::Midpoint(key.0, key.1));
            id
        })
    };
    let mut cells = Vec::with_capacity(mesh.cells.len() * (1 << dim));
    for k in 0..mesh.num_cells() {
        let c = mesh.cell(k);
        if dim == 1 {
            let m = midpoint(c[0], c[1], &mut coords, &mut parent_map);
            cells.extend_from_slice(&[c[0], m, m, c[1]]);
        } else {
            let (a, b, cc) = (c[0], c[1], c[2]);
            let mab = midpoint(a, b, &mut coords, &mut parent_map);
            let mbc = midpoint(b, cc, &mut coords, &mut parent_map);
            let mca = midpoint(cc, a, &mut coords, &mut parent_map);
            cells.extend_from_slice(&[a, mab, mca]);
            cells.extend_from_slice(&[mab, b, mbc]);
            cells.extend_from_slice(&[mca, mbc, cc]);
            cells.extend_from_slice(&[mab, mbc, mca]);
        }
    }
    MeshLevel::from_parts(
        mesh.domain,
        mesh.level + 1,
        coords,
        cells,
        Some((Arc::clone(mesh), parent_map)),
    )
    .map(Arc::new)
}

/// Base mesh followed by `levels - 1` uniform refinements.
pub fn build_hierarchy(
    domain: DomainDescriptor,
    base_cells: usize,
    levels: usize,
) -> Result<Vec<Arc<MeshLevel>>, MeshError> {
    let mut out = vec![build_mesh(domain, base_cells)?];
    for _ in 1..levels {
        let next = refine(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

/// Quadrature on the reference simplex ([0,1] or the unit right triangle),
/// with points in barycentric coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    dim: usize,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
    degree: usize,
}

impl QuadratureRule {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Barycentric coordinates of the points.
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Weights on the reference simplex; they sum to its measure.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn reference_measure(&self) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            0.5
        }
    }

    /// Gauss-Legendre on [0,1] with `n` points (1..=3), exact to degree 2n-1.
    pub fn gauss_1d(n: usize) -> QuadratureRule {
        let (xs, ws): (Vec<f64>, Vec<f64>) = match n {
            1 => (vec![0.5], vec![1.0]),
            2 => {
                let d = 0.5 / 3f64.sqrt();
                (vec![0.5 - d, 0.5 + d], vec![0.5, 0.5])
            }
            _ => {
                let d = 0.5 * (0.6f64).sqrt();
                (vec![0.5 - d, 0.5, 0.5 + d], vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])
            }
        };
        let degree = 2 * xs.len() - 1;
        QuadratureRule {
            dim: 1,
            points: xs.iter().map(|&x| [1.0 - x, x, 0.0]).collect(),
            weights: ws,
            degree,
        }
    }

    /// Symmetric triangle rules with positive weights: degree 1 (centroid),
    /// 2 (three interior points) and 4 (six points).
    pub fn triangle(degree: usize) -> QuadratureRule {
        let (points, weights, deg): (Vec<[f64; 3]>, Vec<f64>, usize) = match degree {
            0 | 1 => (vec![[1.0 / 3.0; 3]], vec![0.5], 1),
            2 => {
                let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
                (vec![[a, b, b], [b, a, b], [b, b, a]], vec![1.0 / 6.0; 3], 2)
            }
            _ => {
                let a1 = 0.445_948_490_915_965;
                let w1 = 0.223_381_589_678_011 * 0.5;
                let a2 = 0.091_576_213_509_771;
                let w2 = 0.109_951_743_655_322 * 0.5;
                let b1 = 1.0 - 2.0 * a1;
                let b2 = 1.0 - 2.0 * a2;
                (
                    vec![[b1, a1, a1], [a1, b1, a1], [a1, a1, b1], [b2, a2, a2], [a2, b2, a2], [a2, a2, b2]],
                    vec![w1, w1, w1, w2, w2, w2],
                    4,
                )
            }
        };
        QuadratureRule { dim: 2, points, weights, degree: deg }
    }

    /// Default rule for integrands built from piecewise-linear factors. The
    /// nonlinearity in the gradient is cellwise constant, so the exponent does
    /// not change the rule; it is accepted for interface symmetry.
    pub fn for_exponent(dim: usize, p_max_exponent: f64) -> QuadratureRule {
        debug_assert!(p_max_exponent >= 1.0);
        if dim == 1 {
            QuadratureRule::gauss_1d(2)
        } else {
            QuadratureRule::triangle(4)
        }
    }
}

/// Degree-3 (or better) rule for a mesh of dimension `dim`.
pub fn quadrature_for(dim: usize, p_max_exponent: f64) -> QuadratureRule {
    QuadratureRule::for_exponent(dim, p_max_exponent)
}
