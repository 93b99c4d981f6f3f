//! Conforming triangular meshes, adjacency queries, and longest-edge
//! bisection with recursive conformity closure.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Classification of an edge of the triangulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Interior,
    Boundary,
}

/// An edge of the mesh. Vertex indices are stored sorted.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub kind: EdgeKind,
}

/// The named computational domains of the convergence studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainId {
    /// (0,1)^2
    UnitSquare,
    /// (-1,1)^2 \ [0,1) x (-1,0]  (re-entrant corner opens toward the
    /// fourth quadrant)
    LShapeSw,
    /// (-1,1)^2 \ [0,1) x [0,1)
    LShapeNe,
}

impl DomainId {
    pub fn area(self) -> f64 {
        match self {
            DomainId::UnitSquare => 1.0,
            DomainId::LShapeSw | DomainId::LShapeNe => 3.0,
        }
    }
}

/// A conforming simplicial partition of a polygonal domain with full edge
/// topology and per-element refinement edges.
///
/// Meshes are immutable after construction; refinement produces new meshes.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    /// 2D coordinates.
    pub vertices: Vec<[f64; 2]>,
    /// Vertex-index triples, counterclockwise.
    pub elements: Vec<[usize; 3]>,
    /// Edges, sorted lexicographically by (sorted) vertex pair.
    pub edges: Vec<Edge>,
    /// Per element: global edge indices; slot `k` holds the edge between
    /// local vertices `k` and `(k+1)%3`.
    pub element_edges: Vec<[usize; 3]>,
    /// Per edge: the one or two elements sharing it.
    pub edge_elements: Vec<(usize, Option<usize>)>,
    /// Per vertex: whether it lies on the domain boundary.
    pub boundary_vertex: Vec<bool>,
    /// Per element: global index of its designated refinement edge (the
    /// longest edge, ties broken by smallest edge index).
    pub refinement_edge: Vec<usize>,
}

/// The patch of elements sharing an edge with a given element, the element
/// itself included.
#[derive(Debug, Clone)]
pub struct ElementStar {
    pub center: usize,
    pub members: Vec<usize>,
}

fn sorted_pair(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Twice the signed area of triangle (a, b, c).
fn cross2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

impl TriangleMesh {
    /// Builds the full topology from vertices and (counterclockwise)
    /// elements, checking the conformity invariants.
    pub fn from_elements(vertices: Vec<[f64; 2]>, elements: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in elements.iter().enumerate() {
            let area2 = cross2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if area2 <= 0.0 {
                return Err(Error::DegenerateElement {
                    element: t,
                    area: 0.5 * area2,
                });
            }
        }

        let mut pair_to_elems: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in elements.iter().enumerate() {
            for k in 0..3 {
                let pair = sorted_pair(tri[k], tri[(k + 1) % 3]);
                pair_to_elems.entry(pair).or_default().push(t);
            }
        }

        let mut pairs: Vec<(usize, usize)> = pair_to_elems.keys().copied().collect();
        pairs.sort_unstable();

        let mut edges = Vec::with_capacity(pairs.len());
        let mut edge_elements = Vec::with_capacity(pairs.len());
        let mut pair_to_edge = HashMap::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let elems = &pair_to_elems[pair];
            let (kind, ee) = match elems.len() {
                1 => (EdgeKind::Boundary, (elems[0], None)),
                2 => (EdgeKind::Interior, (elems[0], Some(elems[1]))),
                n => {
                    return Err(Error::NonConforming(format!(
                        "edge {:?} shared by {} elements",
                        pair, n
                    )))
                }
            };
            edges.push(Edge {
                vertices: [pair.0, pair.1],
                kind,
            });
            edge_elements.push(ee);
            pair_to_edge.insert(*pair, i);
        }

        let mut element_edges = Vec::with_capacity(elements.len());
        for tri in &elements {
            let mut ee = [0usize; 3];
            for k in 0..3 {
                ee[k] = pair_to_edge[&sorted_pair(tri[k], tri[(k + 1) % 3])];
            }
            element_edges.push(ee);
        }

        let mut boundary_vertex = vec![false; vertices.len()];
        for e in &edges {
            if e.kind == EdgeKind::Boundary {
                boundary_vertex[e.vertices[0]] = true;
                boundary_vertex[e.vertices[1]] = true;
            }
        }

        let mut refinement_edge = Vec::with_capacity(elements.len());
        for ee in &element_edges {
            let mut best = ee[0];
            let mut best_len = {
                let v = edges[ee[0]].vertices;
                dist(vertices[v[0]], vertices[v[1]])
            };
            for &e in &ee[1..] {
                let v = edges[e].vertices;
                let len = dist(vertices[v[0]], vertices[v[1]]);
                // ties broken by smallest global edge index
                if len > best_len || (len == best_len && e < best) {
                    best = e;
                    best_len = len;
                }
            }
            refinement_edge.push(best);
        }

        Ok(Self {
            vertices,
            elements,
            edges,
            element_edges,
            edge_elements,
            boundary_vertex,
            refinement_edge,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Number of interior (non-boundary) vertices, i.e. dim of the P1
    /// space with zero boundary trace.
    pub fn num_interior_vertices(&self) -> usize {
        self.boundary_vertex.iter().filter(|b| !**b).count()
    }

    pub fn element_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_coords(t);
        0.5 * cross2(a, b, c)
    }

    pub fn element_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.elements[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    /// Element diameter h_T (longest edge).
    pub fn element_diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_coords(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let v = self.edges[e].vertices;
        dist(self.vertices[v[0]], self.vertices[v[1]])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_elements()).map(|t| self.element_area(t)).sum()
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.num_elements())
            .map(|t| self.element_diameter(t))
            .fold(0.0, f64::max)
    }

    pub fn min_diameter(&self) -> f64 {
        (0..self.num_elements())
            .map(|t| self.element_diameter(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.num_elements() {
            let [a, b, c] = self.element_coords(t);
            for (p, q, r) in [(a, b, c), (b, c, a), (c, a, b)] {
                let u = [q[0] - p[0], q[1] - p[1]];
                let v = [r[0] - p[0], r[1] - p[1]];
                let dot = u[0] * v[0] + u[1] * v[1];
                let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
                let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
                min = min.min((dot / (nu * nv)).clamp(-1.0, 1.0).acos());
            }
        }
        min
    }

    /// The star N_T: all elements sharing an edge with `t`, plus `t`.
    pub fn star(&self, t: usize) -> Result<ElementStar> {
        if t >= self.num_elements() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.num_elements(),
            });
        }
        let mut members = vec![t];
        for &e in &self.element_edges[t] {
            let (t0, t1) = self.edge_elements[e];
            for other in [Some(t0), t1].into_iter().flatten() {
                if other != t && !members.contains(&other) {
                    members.push(other);
                }
            }
        }
        members.sort_unstable();
        Ok(ElementStar { center: t, members })
    }

    /// For an interior edge, the neighbor of `t` across it.
    pub fn neighbor_across(&self, t: usize, e: usize) -> Option<usize> {
        let (t0, t1) = self.edge_elements[e];
        if t0 == t {
            t1
        } else {
            Some(t0)
        }
    }

    /// Longest-edge bisection of the marked elements with recursive
    /// conformity closure (Rivara's longest-edge propagation).
    pub fn bisect(&self, marked: &[usize]) -> Result<TriangleMesh> {
        if marked.is_empty() {
            return Err(Error::EmptyMarking);
        }
        for &t in marked {
            if t >= self.num_elements() {
                return Err(Error::IndexOutOfRange {
                    index: t,
                    len: self.num_elements(),
                });
            }
        }

        let mut work = DynMesh::new(self);
        let cap = 10 * self.num_elements().max(marked.len());
        let mut steps = 0usize;
        for &t in marked {
            work.refine_to_completion(t, cap, &mut steps)?;
        }
        let (vertices, elements) = work.into_parts();
        TriangleMesh::from_elements(vertices, elements)
    }

    /// Two mark-all bisection passes: every parent yields four children on
    /// structured meshes and the maximum diameter halves.
    pub fn uniform_refine(&self) -> Result<TriangleMesh> {
        let all: Vec<usize> = (0..self.num_elements()).collect();
        let once = self.bisect(&all)?;
        let all: Vec<usize> = (0..once.num_elements()).collect();
        once.bisect(&all)
    }

    /// Writes the mesh as a coordinates file (one "x y" pair per line) and
    /// an element file (one 1-based vertex triple per line).
    pub fn export(&self, coor_path: &Path, elem_path: &Path) -> Result<()> {
        let mut coor = std::io::BufWriter::new(std::fs::File::create(coor_path)?);
        for v in &self.vertices {
            writeln!(coor, "{:.16e} {:.16e}", v[0], v[1])?;
        }
        let mut elem = std::io::BufWriter::new(std::fs::File::create(elem_path)?);
        for tri in &self.elements {
            writeln!(elem, "{} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1)?;
        }
        Ok(())
    }
}

/// Mutable element soup used while a bisection pass is in flight.
struct DynMesh {
    vertices: Vec<[f64; 2]>,
    tris: Vec<Option<[usize; 3]>>,
    edge_to_tris: HashMap<(usize, usize), Vec<usize>>,
    midpoints: HashMap<(usize, usize), usize>,
}

impl DynMesh {
    fn new(mesh: &TriangleMesh) -> Self {
        let mut edge_to_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (t, tri) in mesh.elements.iter().enumerate() {
            for k in 0..3 {
                let pair = sorted_pair(tri[k], tri[(k + 1) % 3]);
                edge_to_tris.entry(pair).or_default().push(t);
            }
        }
        Self {
            vertices: mesh.vertices.clone(),
            tris: mesh.elements.iter().map(|t| Some(*t)).collect(),
            edge_to_tris,
            midpoints: HashMap::new(),
        }
    }

    /// Refinement (longest) edge of a live triangle: longest edge, ties by
    /// lexicographically smallest sorted vertex pair. On the built mesh the
    /// edge array is sorted the same way, so this coincides with the
    /// smallest-global-edge-index rule.
    fn refinement_edge(&self, t: usize) -> (usize, (usize, usize)) {
        let tri = self.tris[t].unwrap();
        let mut best_k = 0;
        let mut best_pair = sorted_pair(tri[0], tri[1]);
        let mut best_len = dist(self.vertices[tri[0]], self.vertices[tri[1]]);
        for k in 1..3 {
            let pair = sorted_pair(tri[k], tri[(k + 1) % 3]);
            let len = dist(self.vertices[pair.0], self.vertices[pair.1]);
            if len > best_len || (len == best_len && pair < best_pair) {
                best_k = k;
                best_pair = pair;
                best_len = len;
            }
        }
        (best_k, best_pair)
    }

    fn neighbor_across(&self, t: usize, pair: (usize, usize)) -> Option<usize> {
        self.edge_to_tris
            .get(&pair)?
            .iter()
            .copied()
            .find(|&other| other != t)
    }

    /// Bisects `t0` (and whatever the conformity closure demands) via
    /// longest-edge propagation paths.
    fn refine_to_completion(&mut self, t0: usize, cap: usize, steps: &mut usize) -> Result<()> {
        while self.tris[t0].is_some() {
            *steps += 1;
            if *steps > cap {
                return Err(Error::ClosureCap { cap });
            }
            // walk the longest-edge propagation path starting at t0
            let mut current = t0;
            loop {
                let (_, pair) = self.refinement_edge(current);
                match self.neighbor_across(current, pair) {
                    None => {
                        self.bisect_tri(current);
                        break;
                    }
                    Some(nb) => {
                        let (_, nb_pair) = self.refinement_edge(nb);
                        if nb_pair == pair {
                            // compatible pair: split both through the shared edge
                            self.bisect_tri(current);
                            self.bisect_tri(nb);
                            break;
                        }
                        current = nb;
                        *steps += 1;
                        if *steps > cap {
                            return Err(Error::ClosureCap { cap });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn midpoint(&mut self, pair: (usize, usize)) -> usize {
        if let Some(&m) = self.midpoints.get(&pair) {
            return m;
        }
        let a = self.vertices[pair.0];
        let b = self.vertices[pair.1];
        let m = self.vertices.len();
        self.vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        self.midpoints.insert(pair, m);
        m
    }

    fn bisect_tri(&mut self, t: usize) {
        let tri = self.tris[t].unwrap();
        let (k, pair) = self.refinement_edge(t);
        let m = self.midpoint(pair);

        // remove t from the edge map
        for j in 0..3 {
            let p = sorted_pair(tri[j], tri[(j + 1) % 3]);
            let list = self.edge_to_tris.get_mut(&p).unwrap();
            list.retain(|&x| x != t);
            if list.is_empty() {
                self.edge_to_tris.remove(&p);
            }
        }
        self.tris[t] = None;

        // refinement edge runs from local vertex k to k+1; the opposite
        // vertex is k+2; both children stay counterclockwise
        let vi = tri[k];
        let vj = tri[(k + 1) % 3];
        let vk = tri[(k + 2) % 3];
        for child in [[vi, m, vk], [m, vj, vk]] {
            let id = self.tris.len();
            self.tris.push(Some(child));
            for j in 0..3 {
                let p = sorted_pair(child[j], child[(j + 1) % 3]);
                self.edge_to_tris.entry(p).or_default().push(id);
            }
        }
    }

    fn into_parts(self) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
        let elements = self.tris.into_iter().flatten().collect();
        (self.vertices, elements)
    }
}

/// Structured initial mesh of a named domain: each constituent unit square
/// is split into an n-by-n grid of cells, each cut along its south-west to
/// north-east diagonal.
pub fn generate_domain(domain: DomainId, n: usize) -> Result<TriangleMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("subdivision count must be >= 1".into()));
    }
    let (x0, x1, removed): (f64, f64, Option<fn(f64, f64) -> bool>) = match domain {
        DomainId::UnitSquare => (0.0, 1.0, None),
        DomainId::LShapeSw => (-1.0, 1.0, Some(|cx, cy| cx > 0.0 && cy < 0.0)),
        DomainId::LShapeNe => (-1.0, 1.0, Some(|cx, cy| cx > 0.0 && cy > 0.0)),
    };
    let cells = ((x1 - x0).round() as usize) * n; // cells per side
    let h = (x1 - x0) / cells as f64;
    let np = cells + 1;

    // lattice points, keeping only those touching a retained cell
    let mut index = vec![usize::MAX; np * np];
    let mut vertices = Vec::new();
    let mut elements = Vec::new();
    let keep_cell = |i: usize, j: usize| -> bool {
        let cx = x0 + (i as f64 + 0.5) * h;
        let cy = x0 + (j as f64 + 0.5) * h;
        removed.map_or(true, |r| !r(cx, cy))
    };
    for j in 0..cells {
        for i in 0..cells {
            if !keep_cell(i, j) {
                continue;
            }
            let mut corner = [0usize; 4]; // 00, 10, 01, 11
            for (c, (di, dj)) in [(0, 0), (1, 0), (0, 1), (1, 1)].iter().enumerate() {
                let li = (i + di) + (j + dj) * np;
                if index[li] == usize::MAX {
                    index[li] = vertices.len();
                    vertices.push([x0 + (i + di) as f64 * h, x0 + (j + dj) as f64 * h]);
                }
                corner[c] = index[li];
            }
            let [v00, v10, v01, v11] = corner;
            elements.push([v00, v10, v11]);
            elements.push([v00, v11, v01]);
        }
    }
    TriangleMesh::from_elements(vertices, elements)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_n1() {
        let mesh = generate_domain(DomainId::UnitSquare, 1).unwrap();
        assert_eq!(mesh.num_vertices(), 4);
        assert_eq!(mesh.num_elements(), 2);
        assert!((mesh.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lshape_sw_n1() {
        let mesh = generate_domain(DomainId::LShapeSw, 1).unwrap();
        assert_eq!(mesh.num_vertices(), 8);
        assert_eq!(mesh.num_elements(), 6);
        assert!((mesh.total_area() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn unit_square_n2_diameters() {
        let mesh = generate_domain(DomainId::UnitSquare, 2).unwrap();
        assert_eq!(mesh.num_vertices(), 9);
        assert_eq!(mesh.num_elements(), 8);
        let h = std::f64::consts::SQRT_2 / 2.0;
        for t in 0..mesh.num_elements() {
            assert!((mesh.element_diameter(t) - h).abs() < 1e-14);
        }
    }

    #[test]
    fn refinement_edge_is_longest() {
        for (d, n) in [
            (DomainId::UnitSquare, 3),
            (DomainId::LShapeSw, 2),
            (DomainId::LShapeNe, 2),
        ] {
            let mesh = generate_domain(d, n).unwrap();
            for t in 0..mesh.num_elements() {
                let re = mesh.refinement_edge[t];
                let len = mesh.edge_length(re);
                for &e in &mesh.element_edges[t] {
                    assert!(len >= mesh.edge_length(e) - 1e-15);
                }
            }
        }
    }

    #[test]
    fn star_contains_self_and_neighbors() {
        let mesh = generate_domain(DomainId::UnitSquare, 1).unwrap();
        let star = mesh.star(0).unwrap();
        assert_eq!(star.members, vec![0, 1]);

        let mesh = generate_domain(DomainId::UnitSquare, 4).unwrap();
        for t in 0..mesh.num_elements() {
            let star = mesh.star(t).unwrap();
            assert!(star.members.contains(&t));
            // interior element of the structured mesh: 3 edge neighbors
            let interior_edges = mesh.element_edges[t]
                .iter()
                .filter(|&&e| mesh.edges[e].kind == EdgeKind::Interior)
                .count();
            assert_eq!(star.members.len(), 1 + interior_edges);
        }
        assert!(mesh.star(mesh.num_elements()).is_err());
    }

    #[test]
    fn star_symmetry() {
        let mesh = generate_domain(DomainId::LShapeSw, 2).unwrap();
        for t in 0..mesh.num_elements() {
            for &other in &mesh.star(t).unwrap().members {
                assert!(mesh.star(other).unwrap().members.contains(&t));
            }
        }
    }

    #[test]
    fn bisect_one_of_two() {
        // shared diagonal is the longest edge of both triangles
        let mesh = generate_domain(DomainId::UnitSquare, 1).unwrap();
        let fine = mesh.bisect(&[0]).unwrap();
        assert_eq!(fine.num_elements(), 4);
        assert_eq!(fine.num_vertices(), 5);
        assert!((fine.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisect_all_conforming() {
        let mut mesh = generate_domain(DomainId::LShapeNe, 1).unwrap();
        for _ in 0..4 {
            let all: Vec<usize> = (0..mesh.num_elements()).collect();
            let fine = mesh.bisect(&all).unwrap();
            assert!(fine.num_elements() >= 2 * mesh.num_elements());
            assert!((fine.total_area() - mesh.total_area()).abs() < 1e-12 * mesh.total_area());
            mesh = fine;
        }
    }

    #[test]
    fn min_angle_stable_over_six_passes() {
        let mut mesh = generate_domain(DomainId::UnitSquare, 1).unwrap();
        let initial = mesh.min_angle();
        for _ in 0..6 {
            let all: Vec<usize> = (0..mesh.num_elements()).collect();
            mesh = mesh.bisect(&all).unwrap();
            // longest-edge bisection of right isoceles triangles is
            // self-similar: the minimum angle never degrades
            assert!(mesh.min_angle() >= initial - 1e-12);
        }
    }

    #[test]
    fn uniform_refine_quadruples() {
        let mesh = generate_domain(DomainId::UnitSquare, 1).unwrap();
        let fine = mesh.uniform_refine().unwrap();
        assert_eq!(fine.num_elements(), 8);
        assert!((fine.max_diameter() - mesh.max_diameter() / 2.0).abs() < 1e-14);

        let mesh = generate_domain(DomainId::LShapeSw, 2).unwrap();
        let fine = mesh.uniform_refine().unwrap();
        assert_eq!(fine.num_elements(), 4 * mesh.num_elements());
        assert!((fine.max_diameter() - mesh.max_diameter() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn children_strictly_smaller() {
        let mesh = generate_domain(DomainId::UnitSquare, 2).unwrap();
        let h_before = mesh.max_diameter();
        let fine = mesh.bisect(&[0, 3, 5]).unwrap();
        // every element of the fine mesh that is new has smaller diameter
        assert!(fine.min_diameter() < h_before);
        assert!((fine.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topology_self_consistent_after_bisect() {
        let mesh = generate_domain(DomainId::LShapeSw, 2).unwrap();
        let fine = mesh.bisect(&[0, 1, 7]).unwrap();
        // rebuild from scratch and compare
        let rebuilt =
            TriangleMesh::from_elements(fine.vertices.clone(), fine.elements.clone()).unwrap();
        assert_eq!(rebuilt.edges.len(), fine.edges.len());
        for (a, b) in rebuilt.edges.iter().zip(fine.edges.iter()) {
            assert_eq!(a.vertices, b.vertices);
            assert_eq!(a.kind, b.kind);
        }
        assert_eq!(rebuilt.element_edges, fine.element_edges);
        assert_eq!(rebuilt.refinement_edge, fine.refinement_edge);
    }

    #[test]
    fn bisect_rejects_bad_input() {
        let mesh = generate_domain(DomainId::UnitSquare, 1).unwrap();
        assert!(mesh.bisect(&[]).is_err());
        assert!(mesh.bisect(&[99]).is_err());
    }
}
