//! Maximum-strategy marking, the adaptive solve-estimate-mark-refine loop,
//! its uniform-refinement counterpart, and rate fitting on the resulting
//! convergence records.

use std::sync::Arc;

use crate::estimators::{compute_indicators, IndicatorField, ResidualData};
use crate::mesh::{generate_domain, TriangleMesh};
use crate::ocp::{fixed_point_solve, FixedPointConfig, OcpSolution};
use crate::problems::{effectivity, error_p_linf, error_u_l1, error_y_l2, ProblemSpec};
use crate::quadrature::QuadratureRule;
use crate::{Error, Result};

/// One line of a convergence study. Error columns are NaN when the problem
/// has no exact solution.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRow {
    /// 2 * dim V_l (state plus adjoint unknowns)
    pub ndofs: usize,
    pub error_y: f64,
    pub error_p: f64,
    pub error_u: f64,
    /// eta_{st,2}
    pub est_y: f64,
    /// eta_{adj,2}
    pub est_p_2: f64,
    /// eta_{adj,inf}
    pub est_p_inf: f64,
    pub eff_index: f64,
    pub iota: f64,
    pub fp_iterations: usize,
}

/// Full record of one study: per-level rows plus the meshes they were
/// computed on (same order).
#[derive(Debug, Clone)]
pub struct ConvergenceRecord {
    pub problem: String,
    pub rows: Vec<ConvergenceRow>,
    /// False when the loop stopped early on a non-convergent fixed point.
    pub completed: bool,
}

/// Column selector for rate fits on a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    ErrorY,
    ErrorP,
    ErrorU,
    EstY,
    EstP2,
    EstPInf,
}

impl Column {
    pub fn of(self, row: &ConvergenceRow) -> f64 {
        match self {
            Column::ErrorY => row.error_y,
            Column::ErrorP => row.error_p,
            Column::ErrorU => row.error_u,
            Column::EstY => row.est_y,
            Column::EstP2 => row.est_p_2,
            Column::EstPInf => row.est_p_inf,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Column::ErrorY => "error_y",
            Column::ErrorP => "error_p",
            Column::ErrorU => "error_u",
            Column::EstY => "est_y",
            Column::EstP2 => "est_p_2",
            Column::EstPInf => "est_p_inf",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Stop once 2 * dim V_l reaches this.
    pub max_ndofs: usize,
    /// Maximum-strategy threshold: mark T with E_T > fraction * max E.
    pub mark_fraction: f64,
    /// Initial structured mesh subdivision parameter.
    pub initial_n: usize,
    pub fixed_point: FixedPointConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            max_ndofs: 10_000,
            mark_fraction: 0.5,
            initial_n: 2,
            fixed_point: FixedPointConfig::default(),
        }
    }
}

/// Record plus the mesh hierarchy and the finest-level solution.
pub struct StudyResult {
    pub record: ConvergenceRecord,
    pub meshes: Vec<Arc<TriangleMesh>>,
    pub final_solution: Option<OcpSolution>,
}

/// Maximum strategy: all elements with E_T strictly above
/// `fraction * max_T E_T`. If the strict comparison marks nothing
/// (e.g. fraction >= 1 or a constant field), every element attaining the
/// maximum is marked instead, so the result is never empty.
pub fn mark(field: &IndicatorField, fraction: f64) -> Result<Vec<usize>> {
    if field.is_empty() {
        return Err(Error::EmptyIndicatorField);
    }
    let max = field.total.iter().fold(0.0f64, |m, &v| m.max(v));
    let threshold = fraction * max;
    let mut marked: Vec<usize> = (0..field.len())
        .filter(|&t| field.total[t] > threshold)
        .collect();
    if marked.is_empty() {
        marked = (0..field.len()).filter(|&t| field.total[t] == max).collect();
    }
    Ok(marked)
}

fn ndofs_of(mesh: &TriangleMesh) -> usize {
    2 * mesh.num_interior_vertices()
}

fn solve_level(
    spec: &ProblemSpec,
    mesh: &Arc<TriangleMesh>,
    rule: &QuadratureRule,
    config: &StudyConfig,
) -> Result<(OcpSolution, IndicatorField, ConvergenceRow)> {
    let sol = fixed_point_solve(spec, mesh, rule, &config.fixed_point)?;
    let desired = spec.desired_state.clone();
    let data = ResidualData {
        desired_state: &move |x| desired(x),
    };
    let (field, global) = compute_indicators(&sol, &data, rule)?;
    let (error_y, error_p, error_u, eff_index) = if spec.exact.is_some() {
        let ey = error_y_l2(&sol, spec, rule)?;
        let ep = error_p_linf(&sol, spec, rule)?;
        let eu = error_u_l1(&sol, spec, rule)?;
        (ey, ep, eu, effectivity(global.total, eu, ey, ep)?)
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    };
    let row = ConvergenceRow {
        ndofs: ndofs_of(mesh),
        error_y,
        error_p,
        error_u,
        est_y: global.eta_st2,
        est_p_2: global.eta_adj2,
        est_p_inf: global.eta_adj_inf,
        eff_index,
        iota: global.iota,
        fp_iterations: sol.iterations,
    };
    Ok((sol, field, row))
}

fn run_study(
    spec: &ProblemSpec,
    config: &StudyConfig,
    rule: &QuadratureRule,
    refine: impl Fn(&TriangleMesh, &IndicatorField) -> Result<TriangleMesh>,
) -> Result<StudyResult> {
    let mut mesh = Arc::new(generate_domain(spec.domain, config.initial_n)?);
    if config.max_ndofs <= ndofs_of(&mesh) {
        return Err(Error::InvalidArgument(format!(
            "max_ndofs {} does not exceed the {} unknowns of the initial mesh",
            config.max_ndofs,
            ndofs_of(&mesh)
        )));
    }
    let mut record = ConvergenceRecord {
        problem: spec.name.to_string(),
        rows: Vec::new(),
        completed: true,
    };
    let mut meshes = Vec::new();
    let mut final_solution;
    loop {
        let (sol, field, row) = solve_level(spec, &mesh, rule, config)?;
        let converged = sol.converged || sol.control_nonunique;
        record.rows.push(row);
        meshes.push(mesh.clone());
        final_solution = Some(sol);
        if !converged {
            record.completed = false;
            break;
        }
        if ndofs_of(&mesh) >= config.max_ndofs {
            break;
        }
        mesh = Arc::new(refine(&mesh, &field)?);
    }
    Ok(StudyResult {
        record,
        meshes,
        final_solution,
    })
}

/// Adaptive loop: solve, estimate, mark by the maximum strategy, bisect.
pub fn adaptive_study(
    spec: &ProblemSpec,
    config: &StudyConfig,
    rule: &QuadratureRule,
) -> Result<StudyResult> {
    run_study(spec, config, rule, |mesh, field| {
        let marked = mark(field, config.mark_fraction)?;
        mesh.bisect(&marked)
    })
}

/// Uniform counterpart: every element is refined on every level.
pub fn uniform_study(
    spec: &ProblemSpec,
    config: &StudyConfig,
    rule: &QuadratureRule,
) -> Result<StudyResult> {
    run_study(spec, config, rule, |mesh, _| mesh.uniform_refine())
}

/// Least-squares slope of log(column) against log(ndofs) over the last
/// `window` rows (at least 3 required).
pub fn fit_rate(rows: &[ConvergenceRow], column: Column, window: usize) -> Result<f64> {
    let take = window.min(rows.len());
    if take < 3 {
        return Err(Error::TooFewRows {
            needed: 3,
            got: rows.len(),
        });
    }
    let tail = &rows[rows.len() - take..];
    let mut xs = Vec::with_capacity(take);
    let mut ys = Vec::with_capacity(take);
    for row in tail {
        let v = column.of(row);
        if !(v > 0.0) || row.ndofs == 0 {
            return Err(Error::NonPositiveColumn);
        }
        xs.push((row.ndofs as f64).ln());
        ys.push(v.ln());
    }
    let n = take as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::combine;
    use crate::problems::problem_ex1;

    fn field(total_sq: Vec<f64>) -> IndicatorField {
        let n = total_sq.len();
        combine(total_sq, vec![0.0; n], vec![0.0; n])
    }

    #[test]
    fn mark_thresholds() {
        let f = field(vec![1.0, 4.0, 9.0, 16.0]);
        // totals are 1, 2, 3, 4; half-max threshold is 2
        let marked = mark(&f, 0.5).unwrap();
        assert_eq!(marked, vec![2, 3]);
        // fraction 0 marks everything with a positive indicator
        assert_eq!(mark(&f, 0.0).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn mark_fallback_on_strict_max() {
        // fraction 1: nothing is strictly above the max; the elements
        // attaining the max are taken instead
        let f = field(vec![4.0, 9.0, 9.0]);
        assert_eq!(mark(&f, 1.0).unwrap(), vec![1, 2]);
        // constant field: everything attains the max
        let f = field(vec![1.0, 1.0]);
        assert_eq!(mark(&f, 1.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn mark_rejects_empty_field() {
        let f = field(vec![]);
        assert!(matches!(mark(&f, 0.5), Err(Error::EmptyIndicatorField)));
    }

    proptest::proptest! {
        /// Lowering the threshold fraction only grows the marked set.
        #[test]
        fn mark_monotone_in_fraction(
            vals in proptest::collection::vec(0.0f64..10.0, 1..40),
            f1 in 0.0f64..1.0,
            f2 in 0.0f64..1.0,
        ) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let field = field(vals);
            let big = mark(&field, lo).unwrap();
            let small = mark(&field, hi).unwrap();
            for t in &small {
                proptest::prop_assert!(big.contains(t) || field.total[*t] == field.total.iter().fold(0.0f64, |m, &v| m.max(v)));
            }
            proptest::prop_assert!(!big.is_empty());
        }
    }

    #[test]
    fn fit_rate_recovers_exact_slope() {
        // rows with error = C * ndofs^{-3/4} fit the slope exactly
        let rows: Vec<ConvergenceRow> = [10usize, 40, 160, 640, 2560, 10240]
            .iter()
            .map(|&n| ConvergenceRow {
                ndofs: n,
                error_y: 7.0 * (n as f64).powf(-0.75),
                error_p: f64::NAN,
                error_u: f64::NAN,
                est_y: 1.0,
                est_p_2: 1.0,
                est_p_inf: 1.0,
                eff_index: 1.0,
                iota: 1.0,
                fp_iterations: 1,
            })
            .collect();
        let slope = fit_rate(&rows, Column::ErrorY, 5).unwrap();
        assert!((slope + 0.75).abs() < 1e-12);
        // constant column fits slope 0
        let slope = fit_rate(&rows, Column::EstY, 5).unwrap();
        assert!(slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rate_preconditions() {
        let row = ConvergenceRow {
            ndofs: 10,
            error_y: 1.0,
            error_p: f64::NAN,
            error_u: -1.0,
            est_y: 1.0,
            est_p_2: 1.0,
            est_p_inf: 1.0,
            eff_index: 1.0,
            iota: 1.0,
            fp_iterations: 1,
        };
        assert!(matches!(
            fit_rate(&[row, row], Column::ErrorY, 5),
            Err(Error::TooFewRows { .. })
        ));
        let rows = [row, row, row];
        assert!(matches!(
            fit_rate(&rows, Column::ErrorP, 5),
            Err(Error::NonPositiveColumn)
        ));
        assert!(matches!(
            fit_rate(&rows, Column::ErrorU, 5),
            Err(Error::NonPositiveColumn)
        ));
    }

    #[test]
    fn study_rejects_small_max_ndofs() {
        let spec = problem_ex1();
        let rule = QuadratureRule::degree19();
        let config = StudyConfig {
            max_ndofs: 2,
            initial_n: 4,
            ..StudyConfig::default()
        };
        assert!(adaptive_study(&spec, &config, &rule).is_err());
    }

    #[test]
    fn small_adaptive_study_runs_and_grows() {
        let spec = problem_ex1();
        let rule = QuadratureRule::degree19();
        let config = StudyConfig {
            max_ndofs: 400,
            initial_n: 2,
            ..StudyConfig::default()
        };
        let result = adaptive_study(&spec, &config, &rule).unwrap();
        let rows = &result.record.rows;
        assert!(result.record.completed);
        assert!(rows.len() >= 3);
        assert_eq!(rows.len(), result.meshes.len());
        for w in rows.windows(2) {
            assert!(w[1].ndofs > w[0].ndofs);
        }
        assert!(rows.last().unwrap().ndofs >= 400);
        assert!(rows.iter().all(|r| r.eff_index.is_finite() && r.eff_index > 0.0));
        // errors decrease overall
        assert!(rows.last().unwrap().error_y < rows[0].error_y);
    }

    #[test]
    fn uniform_study_quadruples_elements() {
        let spec = problem_ex1();
        let rule = QuadratureRule::degree19();
        let config = StudyConfig {
            max_ndofs: 300,
            initial_n: 2,
            ..StudyConfig::default()
        };
        let result = uniform_study(&spec, &config, &rule).unwrap();
        for w in result.meshes.windows(2) {
            assert_eq!(w[1].num_elements(), 4 * w[0].num_elements());
        }
    }
}
