//! The benchmark problems with manufactured data, exact-solution
//! evaluation, and the error measures feeding the effectivity index.

use std::sync::Arc;

use crate::fem::FeFunction;
use crate::mesh::DomainId;
use crate::ocp::{Control, ControlBounds, OcpProblem, OcpSolution};
use crate::quadrature::QuadratureRule;
use crate::{Error, Result};

pub type ScalarField = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// Closed-form optimal solution of a manufactured problem.
#[derive(Clone)]
pub struct ExactSolution {
    pub state: ScalarField,
    pub state_gradient: VectorField,
    pub adjoint: ScalarField,
    /// The bang-bang control induced by the sign of the exact adjoint.
    pub control: ScalarField,
}

/// Data of one optimal control problem instance.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: &'static str,
    pub domain: DomainId,
    pub bounds: ControlBounds,
    pub forcing: ScalarField,
    pub desired_state: ScalarField,
    pub exact: Option<ExactSolution>,
}

impl OcpProblem for ProblemSpec {
    fn bounds(&self) -> ControlBounds {
        self.bounds
    }
    fn forcing(&self, x: [f64; 2]) -> f64 {
        (self.forcing)(x)
    }
    fn desired_state(&self, x: [f64; 2]) -> f64 {
        (self.desired_state)(x)
    }
}

fn characterize(bounds: ControlBounds, p: f64) -> f64 {
    if p > 0.0 {
        bounds.a
    } else if p < 0.0 {
        bounds.b
    } else {
        bounds.midpoint()
    }
}

/// Convex-domain problem with smooth exact solution on the unit square.
pub fn problem_ex1() -> ProblemSpec {
    let pi = std::f64::consts::PI;
    let bounds = ControlBounds::new(-1.0, 1.0).unwrap();
    let state = move |x: [f64; 2]| (pi * x[0]).sin() * (pi * x[1]).sin();
    let adjoint = move |x: [f64; 2]| {
        -(2.0 * pi * x[0]).sin() * (2.0 * pi * x[1]).sin() / (8.0 * pi * pi)
    };
    let control = move |x: [f64; 2]| characterize(bounds, adjoint(x));
    // -Delta y = 2 pi^2 sin sin and f = -Delta y - u
    let forcing = move |x: [f64; 2]| 2.0 * pi * pi * state(x) - control(x);
    // y_Omega = y + Delta p, and Delta p = sin(2 pi x1) sin(2 pi x2)
    let desired = move |x: [f64; 2]| state(x) + (2.0 * pi * x[0]).sin() * (2.0 * pi * x[1]).sin();
    let state_gradient = move |x: [f64; 2]| {
        [
            pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
            pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
        ]
    };
    ProblemSpec {
        name: "ex1",
        domain: DomainId::UnitSquare,
        bounds,
        forcing: Arc::new(forcing),
        desired_state: Arc::new(desired),
        exact: Some(ExactSolution {
            state: Arc::new(state),
            state_gradient: Arc::new(state_gradient),
            adjoint: Arc::new(adjoint),
            control: Arc::new(control),
        }),
    }
}

/// Polar coordinates with the angle in [0, 2 pi), measured
/// counterclockwise from the positive x1-axis. The L-shaped domain of the
/// singular problem occupies angles [0, 3 pi / 2].
fn polar(x: [f64; 2]) -> (f64, f64) {
    let rho = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let mut omega = x[1].atan2(x[0]);
    if omega < 0.0 {
        omega += 2.0 * std::f64::consts::PI;
    }
    (rho, omega)
}

/// Smooth factor of the singular exact state and its Cartesian
/// derivatives: g = sin(pi (x1 + 1) / 2) sin(pi (x2 + 1) / 2).
fn smooth_factor(x: [f64; 2]) -> (f64, [f64; 2], f64) {
    let a = 0.5 * std::f64::consts::PI;
    let s1 = (a * (x[0] + 1.0)).sin();
    let c1 = (a * (x[0] + 1.0)).cos();
    let s2 = (a * (x[1] + 1.0)).sin();
    let c2 = (a * (x[1] + 1.0)).cos();
    let g = s1 * s2;
    let grad = [a * c1 * s2, a * s1 * c2];
    let lap = -2.0 * a * a * g;
    (g, grad, lap)
}

/// Harmonic corner singularity s = rho^{2/3} sin(2 omega / 3) and its
/// Cartesian gradient.
fn singular_factor(x: [f64; 2]) -> (f64, [f64; 2]) {
    let (rho, omega) = polar(x);
    if rho < 1e-14 {
        return (0.0, [0.0, 0.0]);
    }
    let s = rho.powf(2.0 / 3.0) * (2.0 * omega / 3.0).sin();
    let c = 2.0 / 3.0 * rho.powf(-1.0 / 3.0);
    let grad = [-c * (omega / 3.0).sin(), c * (omega / 3.0).cos()];
    (s, grad)
}

/// Non-convex-domain problem with a known singular exact solution.
///
/// The manufactured data follow from the product structure y = g s with s
/// harmonic (Delta y = s Delta g + 2 grad g . grad s) and
/// p = (1/2 - rho) y, whose Laplacian picks up the radial terms
/// -2 d_rho y - y / rho.
pub fn problem_ex2() -> ProblemSpec {
    let bounds = ControlBounds::new(-1.0, 1.0).unwrap();
    let state = |x: [f64; 2]| {
        let (g, _, _) = smooth_factor(x);
        let (s, _) = singular_factor(x);
        g * s
    };
    let state_gradient = |x: [f64; 2]| {
        let (g, dg, _) = smooth_factor(x);
        let (s, ds) = singular_factor(x);
        [s * dg[0] + g * ds[0], s * dg[1] + g * ds[1]]
    };
    let laplacian_state = |x: [f64; 2]| {
        let (_, dg, lg) = smooth_factor(x);
        let (s, ds) = singular_factor(x);
        s * lg + 2.0 * (dg[0] * ds[0] + dg[1] * ds[1])
    };
    let adjoint = move |x: [f64; 2]| {
        let (rho, _) = polar(x);
        (0.5 - rho) * state(x)
    };
    let laplacian_adjoint = move |x: [f64; 2]| {
        let (rho, _) = polar(x);
        let e_rho = [x[0] / rho, x[1] / rho];
        let dy = state_gradient(x);
        (0.5 - rho) * laplacian_state(x) - 2.0 * (e_rho[0] * dy[0] + e_rho[1] * dy[1])
            - state(x) / rho
    };
    let control = move |x: [f64; 2]| characterize(bounds, adjoint(x));
    let forcing = move |x: [f64; 2]| -laplacian_state(x) - control(x);
    let desired = move |x: [f64; 2]| state(x) + laplacian_adjoint(x);
    ProblemSpec {
        name: "ex2",
        domain: DomainId::LShapeSw,
        bounds,
        forcing: Arc::new(forcing),
        desired_state: Arc::new(desired),
        exact: Some(ExactSolution {
            state: Arc::new(state),
            state_gradient: Arc::new(state_gradient),
            adjoint: Arc::new(adjoint),
            control: Arc::new(control),
        }),
    }
}

/// Non-convex-domain problem with unbounded desired state and no known
/// exact solution.
pub fn problem_ex3() -> ProblemSpec {
    let bounds = ControlBounds::new(-0.5, 0.5).unwrap();
    let desired = |x: [f64; 2]| {
        let r2 = x[0] * x[0] + x[1] * x[1];
        1.0 / r2.powf(0.25) - 10.0 * (x[0] * x[1]).sin()
    };
    ProblemSpec {
        name: "ex3",
        domain: DomainId::LShapeNe,
        bounds,
        forcing: Arc::new(|_| 0.0),
        desired_state: Arc::new(desired),
        exact: None,
    }
}

pub fn problem_by_name(name: &str) -> Option<ProblemSpec> {
    match name {
        "ex1" => Some(problem_ex1()),
        "ex2" => Some(problem_ex2()),
        "ex3" => Some(problem_ex3()),
        _ => None,
    }
}

fn exact_of(spec: &ProblemSpec) -> Result<&ExactSolution> {
    spec.exact.as_ref().ok_or(Error::MissingExactSolution)
}

/// ||y - y_l||_{L2(Omega)} by degree-19 quadrature.
pub fn error_y_l2(sol: &OcpSolution, spec: &ProblemSpec, rule: &QuadratureRule) -> Result<f64> {
    let exact = exact_of(spec)?;
    let mesh = &sol.state.mesh;
    let mut acc = 0.0;
    for t in 0..mesh.num_elements() {
        let coords = mesh.element_coords(t);
        let area = mesh.element_area(t);
        for q in 0..rule.len() {
            let d = (exact.state)(rule.node(q, &coords)) - sol.state.evaluate(t, rule.points[q]);
            acc += rule.weights[q] * area * d * d;
        }
    }
    Ok(acc.sqrt())
}

/// ||p - p_l||_{L^inf(Omega)}, sampled at every degree-19 quadrature node
/// plus every vertex of every element.
pub fn error_p_linf(sol: &OcpSolution, spec: &ProblemSpec, rule: &QuadratureRule) -> Result<f64> {
    let exact = exact_of(spec)?;
    let mesh = &sol.adjoint.mesh;
    let mut max = 0.0f64;
    for t in 0..mesh.num_elements() {
        let coords = mesh.element_coords(t);
        for q in 0..rule.len() {
            let d = (exact.adjoint)(rule.node(q, &coords)) - sol.adjoint.evaluate(t, rule.points[q]);
            max = max.max(d.abs());
        }
        for (k, &v) in mesh.elements[t].iter().enumerate() {
            let mut bary = [0.0; 3];
            bary[k] = 1.0;
            let d = (exact.adjoint)(mesh.vertices[v]) - sol.adjoint.evaluate(t, bary);
            max = max.max(d.abs());
        }
    }
    Ok(max)
}

/// ||u - u_l||_{L1(Omega)}: quadrature over the sub-triangles of the
/// discrete sign partition, with the exact control evaluated pointwise.
pub fn error_u_l1(sol: &OcpSolution, spec: &ProblemSpec, rule: &QuadratureRule) -> Result<f64> {
    let exact = exact_of(spec)?;
    let mesh = &sol.adjoint.mesh;
    let ctrl = Control::BangBang(sol.control.clone());
    let mut acc = 0.0;
    for t in 0..mesh.num_elements() {
        let coords = mesh.element_coords(t);
        let area = mesh.element_area(t);
        for (value, reg) in ctrl.regions(t) {
            let sub_area = reg.area_fraction * area;
            if sub_area == 0.0 {
                continue;
            }
            for q in 0..rule.len() {
                let b = rule.points[q];
                let mut parent = [0.0; 3];
                for k in 0..3 {
                    parent[k] =
                        b[0] * reg.corners[0][k] + b[1] * reg.corners[1][k] + b[2] * reg.corners[2][k];
                }
                let x = [
                    parent[0] * coords[0][0] + parent[1] * coords[1][0] + parent[2] * coords[2][0],
                    parent[0] * coords[0][1] + parent[1] * coords[1][1] + parent[2] * coords[2][1],
                ];
                acc += rule.weights[q] * sub_area * ((exact.control)(x) - value).abs();
            }
        }
    }
    Ok(acc)
}

/// Plain whole-element quadrature of |u - u_l|, used to cross-validate the
/// sign-partition route.
pub fn error_u_l1_plain(sol: &OcpSolution, spec: &ProblemSpec, rule: &QuadratureRule) -> Result<f64> {
    let exact = exact_of(spec)?;
    let mesh = &sol.adjoint.mesh;
    let ctrl = Control::BangBang(sol.control.clone());
    let mut acc = 0.0;
    for t in 0..mesh.num_elements() {
        let coords = mesh.element_coords(t);
        let area = mesh.element_area(t);
        for q in 0..rule.len() {
            let b = rule.points[q];
            let d = (exact.control)(rule.node(q, &coords)) - ctrl.value_at(t, b);
            acc += rule.weights[q] * area * d.abs();
        }
    }
    Ok(acc)
}

/// Effectivity index E / (e_u^2 + e_y^2 + e_p^2)^{1/2}.
pub fn effectivity(total_estimate: f64, error_u: f64, error_y: f64, error_p: f64) -> Result<f64> {
    let denom = (error_u * error_u + error_y * error_y + error_p * error_p).sqrt();
    if denom == 0.0 {
        return Err(Error::InvalidArgument(
            "all errors vanish; effectivity index undefined".into(),
        ));
    }
    Ok(total_estimate / denom)
}

/// Fraction of the measure of the zero-level-set neighborhood
/// {|p_l| <= eps} of a discrete adjoint, reported (not asserted) for
/// diagnosing the bang-bang structure.
pub fn small_adjoint_measure(p: &FeFunction, eps: f64, rule: &QuadratureRule) -> f64 {
    let mesh = &p.mesh;
    let mut acc = 0.0;
    for t in 0..mesh.num_elements() {
        let area = mesh.element_area(t);
        for q in 0..rule.len() {
            if p.evaluate(t, rule.points[q]).abs() <= eps {
                acc += rule.weights[q] * area;
            }
        }
    }
    acc / mesh.total_area()
}
