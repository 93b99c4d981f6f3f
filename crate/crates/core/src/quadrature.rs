//! Quadrature on the reference triangle, exact for all bivariate
//! polynomials of total degree <= 19.
//!
//! The rule is a Gauss-Legendre product rule mapped through the collapsed
//! (Duffy) coordinates x = u, y = v(1-u). With 11 points in u and 10 in v
//! every monomial x^a y^b with a + b <= 19 is integrated exactly: the
//! mapped integrand has degree a + b + 1 <= 20 in u and b <= 19 in v. All
//! weights are positive.

/// Quadrature rule stored in barycentric coordinates; weights sum to 1, so
/// an integral over an element T is |T| * sum_q w_q f(x_q).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Barycentric coordinates of the nodes.
    pub points: Vec<[f64; 3]>,
    /// Positive weights summing to 1.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// The degree-19 rule used everywhere right-hand sides, errors, and
    /// indicators are integrated.
    pub fn degree19() -> Self {
        Self::gauss_duffy(11, 10)
    }

    /// Product rule with `nu` radial and `nv` collapsed points.
    pub fn gauss_duffy(nu: usize, nv: usize) -> Self {
        let (xu, wu) = gauss_legendre_unit(nu);
        let (xv, wv) = gauss_legendre_unit(nv);
        let mut points = Vec::with_capacity(nu * nv);
        let mut weights = Vec::with_capacity(nu * nv);
        for i in 0..nu {
            for j in 0..nv {
                let x = xu[i];
                let y = xv[j] * (1.0 - xu[i]);
                points.push([1.0 - x - y, x, y]);
                // reference triangle has area 1/2; normalize to sum 1
                weights.push(2.0 * wu[i] * wv[j] * (1.0 - xu[i]));
            }
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps node `q` into the physical triangle with the given vertex
    /// coordinates.
    pub fn node(&self, q: usize, coords: &[[f64; 2]; 3]) -> [f64; 2] {
        let b = self.points[q];
        [
            b[0] * coords[0][0] + b[1] * coords[1][0] + b[2] * coords[2][0],
            b[0] * coords[0][1] + b[1] * coords[1][1] + b[2] * coords[2][1],
        ]
    }

    /// Integral of `f` over the triangle with the given vertex coordinates
    /// and area.
    pub fn integrate(&self, coords: &[[f64; 2]; 3], area: f64, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
        let mut acc = 0.0;
        for q in 0..self.len() {
            acc += self.weights[q] * f(self.node(q, coords));
        }
        area * acc
    }
}

/// Gauss-Legendre nodes and weights on [0, 1], computed by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess on [-1, 1]
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, t);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, t);
        // map to [0, 1]; nodes come out in descending order on [-1, 1]
        x[n - 1 - i] = 0.5 * (t + 1.0);
        w[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// Value and derivative of the Legendre polynomial P_n at t.
fn legendre(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n_f = n as f64;
    let dp = n_f * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}
