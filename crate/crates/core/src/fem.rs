//! P1 Galerkin assembly, Dirichlet elimination, and Poisson solves.

use std::sync::Arc;

use crate::mesh::TriangleMesh;
use crate::quadrature::QuadratureRule;
use crate::sparse::{pcg_solve, CsrMatrix};
use crate::{Error, Result};

/// Continuous piecewise-linear function given by one coefficient per mesh
/// vertex. Members of the zero-trace space carry exact zeros at boundary
/// vertices.
#[derive(Debug, Clone)]
pub struct FeFunction {
    pub mesh: Arc<TriangleMesh>,
    pub coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<TriangleMesh>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), mesh.num_vertices());
        Self { mesh, coeffs }
    }

    pub fn zeros(mesh: Arc<TriangleMesh>) -> Self {
        let n = mesh.num_vertices();
        Self::new(mesh, vec![0.0; n])
    }

    /// Vertex interpolant of a pointwise field.
    pub fn interpolate(mesh: Arc<TriangleMesh>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let coeffs = mesh.vertices.iter().map(|&v| f(v)).collect();
        Self::new(mesh, coeffs)
    }

    /// Coefficients restricted to element `t`, in local vertex order.
    pub fn local_values(&self, t: usize) -> [f64; 3] {
        let tri = self.mesh.elements[t];
        [self.coeffs[tri[0]], self.coeffs[tri[1]], self.coeffs[tri[2]]]
    }

    /// Linear interpolation at a barycentric point of element `t`.
    pub fn evaluate(&self, t: usize, bary: [f64; 3]) -> f64 {
        let v = self.local_values(t);
        bary[0] * v[0] + bary[1] * v[1] + bary[2] * v[2]
    }

    /// The constant gradient on element `t`.
    pub fn gradient(&self, t: usize) -> [f64; 2] {
        let grads = shape_gradients(&self.mesh, t);
        let v = self.local_values(t);
        [
            v[0] * grads[0][0] + v[1] * grads[1][0] + v[2] * grads[2][0],
            v[0] * grads[0][1] + v[1] * grads[1][1] + v[2] * grads[2][1],
        ]
    }

    /// Energy (H1 semi-) norm, accumulated elementwise.
    pub fn energy_norm(&self) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.mesh.num_elements() {
            let g = self.gradient(t);
            acc += self.mesh.element_area(t) * (g[0] * g[0] + g[1] * g[1]);
        }
        acc.sqrt()
    }

    /// L2 norm, exact for P1.
    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.mesh.num_elements() {
            let v = self.local_values(t);
            let area = self.mesh.element_area(t);
            // v^T (local mass) v with local mass = area/12 [[2,1,1],...]
            let quad = 2.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                + 2.0 * (v[0] * v[1] + v[1] * v[2] + v[0] * v[2]);
            acc += area / 12.0 * quad;
        }
        acc.sqrt()
    }
}

/// Gradients of the three P1 shape functions on element `t`.
pub fn shape_gradients(mesh: &TriangleMesh, t: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.element_coords(t);
    let area2 = 2.0 * mesh.element_area(t);
    // grad of hat at vertex i is the 90-degree rotation of the opposite
    // edge vector divided by twice the area
    let rot = |p: [f64; 2], q: [f64; 2]| [-(q[1] - p[1]) / area2, (q[0] - p[0]) / area2];
    [rot(b, c), rot(c, a), rot(a, b)]
}

/// Global stiffness matrix over all vertices: (i,j) entry is
/// sum_T int_T grad(phi_i) . grad(phi_j), exact for P1.
pub fn assemble_stiffness(mesh: &TriangleMesh) -> Result<CsrMatrix> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for t in 0..mesh.num_elements() {
        let area = mesh.element_area(t);
        if area <= 0.0 {
            return Err(Error::DegenerateElement { element: t, area });
        }
        let grads = shape_gradients(mesh, t);
        let tri = mesh.elements[t];
        for i in 0..3 {
            for j in 0..3 {
                let v = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                triplets.push((tri[i], tri[j], v));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_vertices(), &triplets))
}

/// Global mass matrix over all vertices; local block is
/// area/12 * [[2,1,1],[1,2,1],[1,1,2]].
pub fn assemble_mass(mesh: &TriangleMesh) -> Result<CsrMatrix> {
    let mut triplets = Vec::with_capacity(9 * mesh.num_elements());
    for t in 0..mesh.num_elements() {
        let area = mesh.element_area(t);
        if area <= 0.0 {
            return Err(Error::DegenerateElement { element: t, area });
        }
        let tri = mesh.elements[t];
        for i in 0..3 {
            for j in 0..3 {
                let v = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                triplets.push((tri[i], tri[j], v));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(mesh.num_vertices(), &triplets))
}

/// Load vector entries int_Omega g phi_i, by quadrature per element.
pub fn assemble_load(
    mesh: &TriangleMesh,
    rule: &QuadratureRule,
    g: impl Fn([f64; 2]) -> f64,
) -> Result<Vec<f64>> {
    let mut load = vec![0.0; mesh.num_vertices()];
    for t in 0..mesh.num_elements() {
        let coords = mesh.element_coords(t);
        let area = mesh.element_area(t);
        let tri = mesh.elements[t];
        let mut local = [0.0; 3];
        for q in 0..rule.len() {
            let x = rule.node(q, &coords);
            let gv = g(x);
            if !gv.is_finite() {
                return Err(Error::NonFiniteField {
                    value: gv,
                    x: x[0],
                    y: x[1],
                });
            }
            let w = rule.weights[q] * area * gv;
            let b = rule.points[q];
            for i in 0..3 {
                local[i] += w * b[i];
            }
        }
        for i in 0..3 {
            load[tri[i]] += local[i];
        }
    }
    Ok(load)
}

/// Poisson solver with homogeneous Dirichlet data: the stiffness matrix is
/// reduced to the interior vertices once and reused across solves.
pub struct PoissonSolver {
    mesh: Arc<TriangleMesh>,
    /// reduced index per vertex; usize::MAX for boundary vertices
    reduced_index: Vec<usize>,
    free_vertices: Vec<usize>,
    reduced_stiffness: CsrMatrix,
    cg_tol: f64,
}

impl PoissonSolver {
    pub fn new(mesh: Arc<TriangleMesh>, cg_tol: f64) -> Result<Self> {
        let full = assemble_stiffness(&mesh)?;
        let mut reduced_index = vec![usize::MAX; mesh.num_vertices()];
        let mut free_vertices = Vec::new();
        for v in 0..mesh.num_vertices() {
            if !mesh.boundary_vertex[v] {
                reduced_index[v] = free_vertices.len();
                free_vertices.push(v);
            }
        }
        let mut triplets = Vec::new();
        for &v in &free_vertices {
            let r = reduced_index[v];
            for k in full.row_ptr[v]..full.row_ptr[v + 1] {
                let c = full.col_idx[k];
                if reduced_index[c] != usize::MAX {
                    triplets.push((r, reduced_index[c], full.values[k]));
                }
            }
        }
        let reduced_stiffness = CsrMatrix::from_triplets(free_vertices.len(), &triplets);
        Ok(Self {
            mesh,
            reduced_index,
            free_vertices,
            reduced_stiffness,
            cg_tol,
        })
    }

    pub fn mesh(&self) -> &Arc<TriangleMesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.free_vertices.len()
    }

    /// Solves the reduced system for a full-length load vector and scatters
    /// the solution back with exact zeros on the boundary.
    pub fn solve(&self, load: &[f64]) -> Result<FeFunction> {
        if load.len() != self.mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "load length {} does not match vertex count {}",
                load.len(),
                self.mesh.num_vertices()
            )));
        }
        let rhs: Vec<f64> = self.free_vertices.iter().map(|&v| load[v]).collect();
        let x = pcg_solve(&self.reduced_stiffness, &rhs, self.cg_tol)?;
        let mut coeffs = vec![0.0; self.mesh.num_vertices()];
        for (&v, &xv) in self.free_vertices.iter().zip(&x) {
            coeffs[v] = xv;
        }
        Ok(FeFunction::new(self.mesh.clone(), coeffs))
    }

    pub fn reduced_matrix(&self) -> &CsrMatrix {
        &self.reduced_stiffness
    }

    pub fn reduced_index(&self) -> &[usize] {
        &self.reduced_index
    }
}

/// One-shot Galerkin solve of -Delta y = g with zero boundary values.
pub fn solve_dirichlet(
    mesh: &Arc<TriangleMesh>,
    load: &[f64],
    cg_tol: f64,
) -> Result<FeFunction> {
    PoissonSolver::new(mesh.clone(), cg_tol)?.solve(load)
}
