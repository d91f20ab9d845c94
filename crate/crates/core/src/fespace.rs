//! Conforming P1 spaces with homogeneous Dirichlet data on a mesh hierarchy.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::SpaceError;
use crate::mesh::{quadrature_for, MeshLevel, ParentRef, QuadratureRule};

/// Span of the hat functions of the interior vertices of one mesh level.
/// Degrees of freedom follow vertex-index order.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<MeshLevel>,
    dofs: Vec<usize>,
    vertex_dof: Vec<Option<usize>>,
    quadrature: QuadratureRule,
}

impl FeSpace {
    pub fn new(mesh: Arc<MeshLevel>) -> Arc<FeSpace> {
        let mut dofs = Vec::new();
        let vertex_dof = (0..mesh.num_vertices())
            .map(|v| {
                if mesh.is_boundary(v) {
                    None
                } else {
                    dofs.push(v);
                    Some(dofs.len() - 1)
                }
            })
            .collect();
        let quadrature = quadrature_for(mesh.dim(), 2.0);
        Arc::new(FeSpace { mesh, dofs, vertex_dof, quadrature })
    }

    pub fn mesh(&self) -> &Arc<MeshLevel> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.dofs.len()
    }

    /// Vertex index of each degree of freedom.
    pub fn dof_vertices(&self) -> &[usize] {
        &self.dofs
    }

    pub fn vertex_dof(&self, v: usize) -> Option<usize> {
        self.vertex_dof[v]
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    pub fn same_as(&self, other: &FeSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }

    /// Expand dof coefficients to all vertices, boundary values being zero.
    pub fn nodal_values(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.num_vertices()];
        for (i, &v) in self.dofs.iter().enumerate() {
            out[v] = coeffs[i];
        }
        out
    }

    /// Gradient of a nodal field on cell `k`, padded to two components.
    pub fn cell_gradient(&self, nodal: &[f64], k: usize) -> [f64; 2] {
        let grads = self.mesh.basis_gradients(k);
        let mut g = [0.0; 2];
        for (l, &v) in self.mesh.cell(k).iter().enumerate() {
            g[0] += nodal[v] * grads[l][0];
            g[1] += nodal[v] * grads[l][1];
        }
        g
    }
}

/// A piecewise-linear field on an [`FeSpace`], zero on the boundary.
#[derive(Debug, Clone)]
pub struct FeFunction {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(space: &Arc<FeSpace>) -> FeFunction {
        FeFunction { space: Arc::clone(space), coeffs: vec![0.0; space.dim()] }
    }

    pub fn from_coefficients(space: &Arc<FeSpace>, coeffs: Vec<f64>) -> Result<FeFunction, SpaceError> {
        if coeffs.len() != space.dim() {
            return Err(SpaceError::LengthMismatch { expected: space.dim(), got: coeffs.len() });
        }
        Ok(FeFunction { space: Arc::clone(space), coeffs })
    }

    /// Hat function of degree of freedom `i`.
    pub fn basis(space: &Arc<FeSpace>, i: usize) -> FeFunction {
        let mut u = FeFunction::zeros(space);
        u.coeffs[i] = 1.0;
        u
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(space: &Arc<FeSpace>, f: impl Fn(&[f64]) -> f64) -> FeFunction {
        let mesh = space.mesh();
        let coeffs = space.dof_vertices().iter().map(|&v| f(mesh.vertex(v))).collect();
        FeFunction { space: Arc::clone(space), coeffs }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coefficients(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn nodal_values(&self) -> Vec<f64> {
        self.space.nodal_values(&self.coeffs)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &FeFunction, b: f64) -> Result<FeFunction, SpaceError> {
        if !self.space.same_as(&other.space) {
            return Err(SpaceError::SpaceMismatch);
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| a * x + b * y).collect();
        Ok(FeFunction { space: Arc::clone(&self.space), coeffs })
    }

    pub fn scaled(&self, a: f64) -> FeFunction {
        FeFunction { space: Arc::clone(&self.space), coeffs: self.coeffs.iter().map(|x| a * x).collect() }
    }

    /// CSV rows `x[,y],value` over all vertices in vertex order.
    pub fn to_csv(&self) -> String {
        let mesh = self.space.mesh();
        let nodal = self.nodal_values();
        let mut out = String::new();
        out.push_str(if mesh.dim() == 1 { "x,value\n" } else { "x,y,value\n" });
        for (v, val) in nodal.iter().enumerate() {
            for x in mesh.vertex(v) {
                let _ = write!(out, "{x:e},");
            }
            let _ = writeln!(out, "{val:e}");
        }
        out
    }

    /// Inverse of [`FeFunction::to_csv`]; coordinates must match the mesh.
    pub fn from_csv(space: &Arc<FeSpace>, text: &str) -> Result<FeFunction, SpaceError> {
        let mesh = space.mesh();
        let dim = mesh.dim();
        let mut nodal = Vec::with_capacity(mesh.num_vertices());
        for (line_no, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| SpaceError::Csv(format!("line {}: {e}", line_no + 1)))?;
            if fields.len() != dim + 1 {
                return Err(SpaceError::Csv(format!("line {}: expected {} columns", line_no + 1, dim + 1)));
            }
            let v = nodal.len();
            if v >= mesh.num_vertices() {
                return Err(SpaceError::Csv("more rows than mesh vertices".into()));
            }
            let scale = mesh.domain().diameter_bound();
            if fields[..dim].iter().zip(mesh.vertex(v)).any(|(a, b)| (a - b).abs() > 1e-12 * scale) {
                return Err(SpaceError::Csv(format!("line {}: coordinates do not match vertex {v}", line_no + 1)));
            }
            nodal.push(fields[dim]);
        }
        if nodal.len() != mesh.num_vertices() {
            return Err(SpaceError::Csv(format!(
                "expected {} rows, found {}",
                mesh.num_vertices(),
                nodal.len()
            )));
        }
        let coeffs = space.dof_vertices().iter().map(|&v| nodal[v]).collect();
        Ok(FeFunction { space: Arc::clone(space), coeffs })
    }
}

/// A functional on an [`FeSpace`]: entry `i` is its action on hat `i`.
#[derive(Debug, Clone)]
pub struct DualVector {
    space: Arc<FeSpace>,
    values: Vec<f64>,
}

impl DualVector {
    pub fn zeros(space: &Arc<FeSpace>) -> DualVector {
        DualVector { space: Arc::clone(space), values: vec![0.0; space.dim()] }
    }

    pub fn from_values(space: &Arc<FeSpace>, values: Vec<f64>) -> Result<DualVector, SpaceError> {
        if values.len() != space.dim() {
            return Err(SpaceError::LengthMismatch { expected: space.dim(), got: values.len() });
        }
        Ok(DualVector { space: Arc::clone(space), values })
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Largest absolute entry.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn combine(&self, a: f64, other: &DualVector, b: f64) -> Result<DualVector, SpaceError> {
        if !self.space.same_as(&other.space) {
            return Err(SpaceError::SpaceMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(DualVector { space: Arc::clone(&self.space), values })
    }
}

/// Duality pairing `Σ_i F_i v_i`.
pub fn pair(f: &DualVector, v: &FeFunction) -> Result<f64, SpaceError> {
    if !f.space.same_as(&v.space) {
        return Err(SpaceError::SpaceMismatch);
    }
    Ok(f.values.iter().zip(&v.coeffs).map(|(a, b)| a * b).sum())
}

/// `‖∇u‖_{L^p}`, exact for P1 fields.
pub fn grad_norm_lp(u: &FeFunction, p: f64) -> f64 {
    grad_power_integral(u, p).powf(1.0 / p)
}

/// `∫ |∇u|^p`.
pub fn grad_power_integral(u: &FeFunction, p: f64) -> f64 {
    let space = u.space();
    let mesh = space.mesh();
    let nodal = u.nodal_values();
    (0..mesh.num_cells())
        .map(|k| {
            let g = space.cell_gradient(&nodal, k);
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if n == 0.0 {
                0.0
            } else {
                n.powf(p) * mesh.cell_measure(k)
            }
        })
        .sum()
}

/// Quadrature value of `∫ |u|^r`.
pub fn power_integral(u: &FeFunction, r: f64) -> f64 {
    let space = u.space();
    let mesh = space.mesh();
    let quad = space.quadrature();
    let nodal = u.nodal_values();
    let mut total = 0.0;
    for k in 0..mesh.num_cells() {
        let cell = mesh.cell(k);
        let scale = mesh.cell_measure(k) / quad.reference_measure();
        for (bary, w) in quad.points().iter().zip(quad.weights()) {
            let val: f64 = cell.iter().enumerate().map(|(l, &v)| bary[l] * nodal[v]).sum();
            if val != 0.0 {
                total += w * scale * val.abs().powf(r);
            }
        }
    }
    total
}

/// `‖u‖_{L^r}` by quadrature; exact for r in {1, 2} only when `u` keeps its
/// sign on each cell (r = 2 always).
pub fn lr_norm(u: &FeFunction, r: f64) -> f64 {
    power_integral(u, r).powf(1.0 / r)
}

/// `max |u|` over the closed domain, attained at a vertex.
pub fn sup_norm(u: &FeFunction) -> f64 {
    u.coefficients().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Exact representation of `u` on a refinement descendant of its mesh.
pub fn prolongate(u: &FeFunction, finer: &Arc<FeSpace>) -> Result<FeFunction, SpaceError> {
    let source = u.space().mesh();
    if !finer.mesh().descends_from(source) {
        return Err(SpaceError::NotDescendant);
    }
    let mut chain: Vec<&MeshLevel> = Vec::new();
    let mut cur: &MeshLevel = finer.mesh();
    while !std::ptr::eq(cur, source.as_ref()) {
        chain.push(cur);
        cur = cur.parent().map(|(m, _)| m.as_ref()).ok_or(SpaceError::NotDescendant)?;
    }
    let mut nodal = u.nodal_values();
    for mesh in chain.iter().rev() {
        let (_, map) = mesh.parent().ok_or(SpaceError::NotDescendant)?;
        nodal = map
            .iter()
            .map(|r| match *r {
                ParentRef::Vertex(j) => nodal[j],
                ParentRef::Midpoint(a, b) => 0.5 * (nodal[a] + nodal[b]),
            })
            .collect();
    }
    let coeffs = finer.dof_vertices().iter().map(|&v| nodal[v]).collect();
    Ok(FeFunction { space: Arc::clone(finer), coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_hierarchy, build_mesh, refine, DomainDescriptor};
    use approx::assert_relative_eq;

    fn unit_hat() -> FeFunction {
        let m = build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 2).unwrap();
        FeFunction::basis(&FeSpace::new(m), 0)
    }

    #[test]
    fn hat_norms() {
        let u = unit_hat();
        for p in [1.5, 2.0, 3.0, 7.0] {
            assert_relative_eq!(grad_norm_lp(&u, p), 2.0, max_relative = 1e-14);
        }
        assert_relative_eq!(lr_norm(&u, 1.0), 0.5, max_relative = 1e-14);
        assert_relative_eq!(lr_norm(&u, 2.0), (1.0f64 / 3.0).sqrt(), max_relative = 1e-14);
        assert_eq!(sup_norm(&u), 1.0);
    }

    #[test]
    fn scaled_hat_p2() {
        // height h on cells of width w
        let m = build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 4).unwrap();
        let space = FeSpace::new(m);
        let u = FeFunction::basis(&space, 1).scaled(0.7);
        assert_relative_eq!(grad_norm_lp(&u, 2.0), 0.7 * (2.0f64 / 0.25).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn zero_function_norms() {
        let m = build_mesh(DomainDescriptor::rectangle(0.0, 1.0, 0.0, 2.0).unwrap(), 3).unwrap();
        let u = FeFunction::zeros(&FeSpace::new(m));
        assert_eq!(grad_norm_lp(&u, 3.0), 0.0);
        assert_eq!(lr_norm(&u, 2.5), 0.0);
        assert_eq!(sup_norm(&u), 0.0);
    }

    #[test]
    fn sup_norm_of_coefficients() {
        let m = build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 4).unwrap();
        let u = FeFunction::from_coefficients(&FeSpace::new(m), vec![0.2, -0.9, 0.4]).unwrap();
        assert_eq!(sup_norm(&u), 0.9);
    }

    #[test]
    fn prolongate_hat() {
        let m0 = build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 2).unwrap();
        let m1 = refine(&m0).unwrap();
        let (s0, s1) = (FeSpace::new(m0), FeSpace::new(m1));
        let fine = prolongate(&FeFunction::basis(&s0, 0), &s1).unwrap();
        let mut pts: Vec<(f64, f64)> = s1
            .dof_vertices()
            .iter()
            .zip(fine.coefficients())
            .map(|(&v, &c)| (s1.mesh().vertex(v)[0], c))
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert_eq!(pts, vec![(0.25, 0.5), (0.5, 1.0), (0.75, 0.5)]);
        let z = prolongate(&FeFunction::zeros(&s0), &s1).unwrap();
        assert!(z.coefficients().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn prolongate_rejects_coarser_target() {
        let m0 = build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 2).unwrap();
        let m1 = refine(&m0).unwrap();
        let (s0, s1) = (FeSpace::new(m0), FeSpace::new(m1));
        assert_eq!(prolongate(&FeFunction::zeros(&s1), &s0).unwrap_err(), SpaceError::NotDescendant);
        let other = FeSpace::new(build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 2).unwrap());
        assert_eq!(prolongate(&FeFunction::zeros(&s0), &other).unwrap_err(), SpaceError::NotDescendant);
    }

    #[test]
    fn pairing_dot_product() {
        let m = build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 3).unwrap();
        let s = FeSpace::new(m);
        let f = DualVector::from_values(&s, vec![1.0, 2.0]).unwrap();
        let v = FeFunction::from_coefficients(&s, vec![3.0, -1.0]).unwrap();
        assert_eq!(pair(&f, &v).unwrap(), 1.0);
        assert_eq!(pair(&DualVector::zeros(&s), &v).unwrap(), 0.0);
        let other = FeSpace::new(build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 3).unwrap());
        assert_eq!(pair(&f, &FeFunction::zeros(&other)).unwrap_err(), SpaceError::SpaceMismatch);
    }

    #[test]
    fn csv_round_trip() {
        let levels = build_hierarchy(DomainDescriptor::rectangle(0.0, 1.0, 0.0, 1.0).unwrap(), 2, 2).unwrap();
        let s = FeSpace::new(levels[1].clone());
        let u = FeFunction::interpolate(&s, |x| (3.0 * x[0]).sin() * x[1] * (1.0 - x[1]) * (1.0 - x[0]));
        let text = u.to_csv();
        assert!(text.starts_with("x,y,value\n"));
        assert_eq!(text.lines().count(), 1 + s.mesh().num_vertices());
        let back = FeFunction::from_csv(&s, &text).unwrap();
        for (a, b) in back.coefficients().iter().zip(u.coefficients()) {
            assert_eq!(a, b);
        }
    }
}
