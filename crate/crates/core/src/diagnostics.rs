//! Discrete-scale checks of the hypotheses behind unique solvability of
//! `f(u) = v`: contraction of the linear part, weak coercivity along rays,
//! separation of ‖K + C‖ from 1, correctness of the Hammerstein derivative,
//! Lax–Milgram coercivity, and stability of the Fredholm index.
//!
//! Everything here is sampled. Apart from the linear lower bound emitted by
//! [`check_weak_coercivity`] when the linear perturbation has norm below one,
//! the reports are evidence, not certificates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr, Var};
use crate::grid::{Grid, GridFunction};
use crate::linalg::DenseMatrix;
use crate::operators::Problem;

/// Number of u-values sampled in `[-u_range, u_range]` for sup |h| and sup |h_u|.
pub const U_SAMPLES: usize = 101;
/// Node indices per axis of the pair sampling, at most.
const MAX_SAMPLED_NODES: usize = 256;
/// Relative singular-value threshold for numerical rank.
pub const SV_THRESHOLD: f64 = 1e-10;
/// Band around 1 inside which ‖K + C‖ counts as degenerate.
pub const NORM_SEPARATION_BAND: f64 = 1e-8;
/// Remainders at or below this count as exact (kernel affine in u).
pub const AFFINE_REMAINDER_TOL: f64 = 1e-13;
pub const MIN_FRECHET_ORDER: f64 = 1.5;
pub const DEFAULT_T_VALUES: [f64; 3] = [1e-2, 1e-3, 1e-4];

fn sampled_indices(n: usize) -> Vec<usize> {
    let stride = n.div_ceil(MAX_SAMPLED_NODES).max(1);
    (0..n).step_by(stride).collect()
}

/// max |expr(x_i, y_j, u)| over sampled node pairs and `U_SAMPLES` u-values.
fn sampled_sup_over_u(grid: &Grid, expr: &Expr, u_range: f64) -> f64 {
    let idx = sampled_indices(grid.len());
    let us: Vec<f64> = (0..U_SAMPLES)
        .map(|k| -u_range + 2.0 * u_range * k as f64 / (U_SAMPLES - 1) as f64)
        .collect();
    let depends_on_space = [Var::X1, Var::X2, Var::Y1, Var::Y2]
        .iter()
        .any(|&v| expr.contains(v));
    let pairs: Vec<(usize, usize)> = if depends_on_space {
        idx.iter().flat_map(|&i| idx.iter().map(move |&j| (i, j))).collect()
    } else {
        vec![(0, 0)]
    };
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let base = Bindings::spatial(grid.node(i), grid.node(j));
            us.iter()
                .filter_map(|&u| expr.evaluate(&base.with(Var::U, u)).ok())
                .fold(0.0f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v.abs()) })
        })
        .reduce(|| 0.0, f64::max)
}

/// Sampled sup |h_u| over node pairs × u ∈ [-u_range, u_range].
pub fn hammerstein_derivative_sup(problem: &Problem, u_range: f64) -> Option<f64> {
    problem
        .hammerstein()
        .map(|h| sampled_sup_over_u(problem.grid(), h.derivative(), u_range))
}

/// Sampled sup |h| over node pairs × u ∈ [-u_range, u_range].
pub fn hammerstein_kernel_sup(problem: &Problem, u_range: f64) -> Option<f64> {
    problem
        .hammerstein()
        .map(|h| sampled_sup_over_u(problem.grid(), h.kernel(), u_range))
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    /// max over node pairs of |Σ_k k(x_i, x_j)|.
    pub kernel_sup_m: f64,
    pub measure: f64,
    /// kernel_sup_m · measure.
    pub contraction_constant_k: f64,
    pub hammerstein_h_sup: Option<f64>,
    pub hammerstein_hu_sup: Option<f64>,
    pub u_range: f64,
    /// (kernel_sup_m + hammerstein_hu_sup) · measure / |identity coefficient|.
    pub combined_estimate_kappa: f64,
    pub is_contractive: bool,
}

pub fn check_contraction(problem: &Problem, u_range: f64) -> Result<ContractionReport> {
    if !(u_range > 0.0) {
        return Err(Error::InvalidArgument(format!("u_range must be positive, got {u_range}")));
    }
    let grid = problem.grid();
    let kernels = problem.linear_kernels();
    let m = if kernels.is_empty() {
        0.0
    } else {
        (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let mut row_max = 0.0f64;
                for j in 0..grid.len() {
                    let b = Bindings::spatial(grid.node(i), grid.node(j));
                    let mut s = 0.0;
                    for k in kernels {
                        s += k.evaluate(&b)?;
                    }
                    row_max = row_max.max(s.abs());
                }
                Ok(row_max)
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max)
    };
    let measure = grid.measure();
    let k = m * measure;
    let hu = hammerstein_derivative_sup(problem, u_range);
    let kappa = (k + hu.unwrap_or(0.0) * measure) / problem.identity_coefficient().abs();
    Ok(ContractionReport {
        kernel_sup_m: m,
        measure,
        contraction_constant_k: k,
        hammerstein_h_sup: hammerstein_kernel_sup(problem, u_range),
        hammerstein_hu_sup: hu,
        u_range,
        combined_estimate_kappa: kappa,
        is_contractive: kappa < 1.0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub scales: Vec<f64>,
    /// Per direction, (λ, ‖f(λu)‖) for each scale. Direction 0 is u ≡ 1.
    pub ray_samples: Vec<Vec<(f64, f64)>>,
    /// ‖K‖ / |c| for the linear part.
    pub linear_perturbation_norm: f64,
    /// Coefficient `a` in ‖f(u)‖ ≥ a‖u‖, emitted only for purely linear
    /// problems with ‖K‖ < |c|.
    pub lower_bound_certified: Option<f64>,
    pub certificate_respected: Option<bool>,
    pub monotone_growth_observed: bool,
    pub note: String,
}

pub fn check_weak_coercivity(
    problem: &Problem,
    directions: usize,
    scales: &[f64],
    seed: u64,
) -> Result<CoercivityReport> {
    if directions < 1 {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    if scales.len() < 2 || scales.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "scales must be strictly increasing with at least two entries".into(),
        ));
    }
    let grid = problem.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = vec![GridFunction::constant(grid, 1.0)];
    while dirs.len() < directions {
        let raw: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = crate::grid::sup_norm(&raw);
        let unit = if norm > 0.0 {
            raw.iter().map(|v| v / norm).collect()
        } else {
            vec![1.0; grid.len()]
        };
        dirs.push(GridFunction::new(grid, unit)?);
    }

    let ray_samples = dirs
        .iter()
        .map(|d| {
            scales
                .iter()
                .map(|&lambda| Ok((lambda, problem.apply_f(&d.scale(lambda)?)?.sup_norm()?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let monotone = ray_samples.iter().all(|ray| {
        let first = ray.first().map_or(0.0, |s| s.1);
        let last = ray.last().map_or(0.0, |s| s.1);
        last > first && ray.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - 1e-9))
    });

    let c = problem.identity_coefficient().abs();
    let knorm = problem.linear_sum().sup_norm() / c;
    let (certified, note) = if problem.hammerstein().is_some() {
        (
            None,
            "nonlinear part present: growth along rays is sampled evidence only".to_string(),
        )
    } else if knorm < 1.0 {
        (
            Some(c * (1.0 - knorm)),
            "||f(u)|| >= (|c| - ||K||)||u|| holds since ||K|| < |c|".to_string(),
        )
    } else {
        (
            None,
            format!(
                "||K||/|c| = {knorm:.6} >= 1: the reverse-triangle bound | ||K|| - 1 | ||u|| \
                 is not a pointwise lower bound here, so no certificate is given"
            ),
        )
    };
    let respected = certified.map(|a| {
        ray_samples
            .iter()
            .flatten()
            .all(|&(lambda, value)| value >= a * lambda * (1.0 - 1e-12))
    });

    Ok(CoercivityReport {
        scales: scales.to_vec(),
        ray_samples,
        linear_perturbation_norm: knorm,
        lower_bound_certified: certified,
        certificate_respected: respected,
        monotone_growth_observed: monotone,
        note,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormSeparationReport {
    /// Induced sup-norm of the summed linear Nyström matrices.
    pub norm_k_plus_c: f64,
    pub distance_from_1: f64,
    /// ‖c·I + K_first‖ when at least two linear kernels are present.
    pub norm_f: Option<f64>,
    /// ‖Σ remaining kernels‖ when at least two linear kernels are present.
    pub norm_c: Option<f64>,
    pub corollary1_gap: Option<f64>,
    pub pass: bool,
}

pub fn check_norm_separation(problem: &Problem) -> Result<NormSeparationReport> {
    let norm = problem.linear_sum().sup_norm();
    let distance = (norm - 1.0).abs();
    let parts = problem.linear_parts();
    let (norm_f, norm_c) = if parts.len() >= 2 {
        let f = parts[0]
            .entries()
            .add_diagonal(problem.identity_coefficient())
            .inf_norm();
        let mut rest = parts[1].clone();
        for p in &parts[2..] {
            rest = rest.add(p)?;
        }
        (Some(f), Some(rest.sup_norm()))
    } else {
        (None, None)
    };
    Ok(NormSeparationReport {
        norm_k_plus_c: norm,
        distance_from_1: distance,
        corollary1_gap: norm_f.zip(norm_c).map(|(f, c)| (f - c).abs()),
        norm_f,
        norm_c,
        pass: distance > NORM_SEPARATION_BAND,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FrechetReport {
    pub t_values: Vec<f64>,
    /// sup ‖C(u + t m) − C(u) − t C'(u) m‖ per t.
    pub remainders: Vec<f64>,
    /// Least-squares slope of log remainder against log t.
    pub estimated_order: Option<f64>,
    pub affine_exact: bool,
    pub pass: bool,
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn check_frechet(
    problem: &Problem,
    u: &GridFunction,
    m: &GridFunction,
    t_values: &[f64],
) -> Result<FrechetReport> {
    if problem.hammerstein().is_none() {
        return Err(Error::MissingHammerstein);
    }
    if t_values.len() < 3
        || t_values.iter().any(|&t| !(t > 0.0))
        || t_values.windows(2).any(|w| !(w[0] > w[1]))
    {
        return Err(Error::InvalidArgument(
            "t_values must be positive, strictly decreasing, at least three".into(),
        ));
    }
    let cu = problem.apply_nonlinear(u)?;
    let jm = problem.hammerstein_jacobian(u)?.apply(m)?;
    let remainders = t_values
        .iter()
        .map(|&t| {
            let shifted = problem.apply_nonlinear(&u.lin_comb(1.0, m, t)?)?;
            let lin = cu.lin_comb(1.0, &jm, t)?;
            shifted.sup_distance(&lin)
        })
        .collect::<Result<Vec<f64>>>()?;

    let affine_exact = remainders.iter().all(|&r| r <= AFFINE_REMAINDER_TOL);
    let points: Vec<(f64, f64)> = t_values
        .iter()
        .zip(&remainders)
        .filter(|(_, r)| **r > 0.0)
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    let order = if affine_exact { None } else { least_squares_slope(&points) };
    Ok(FrechetReport {
        t_values: t_values.to_vec(),
        pass: affine_exact || order.is_some_and(|o| o >= MIN_FRECHET_ORDER),
        remainders,
        estimated_order: order,
        affine_exact,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LaxMilgramReport {
    pub dimension: usize,
    pub trials: usize,
    /// min over sampled unit vectors of |uᵀAu| / uᵀu.
    pub min_rayleigh: f64,
}

impl LaxMilgramReport {
    /// Whether the sampled coercivity constant reaches `c`.
    pub fn pass_for_c(&self, c: f64) -> bool {
        self.min_rayleigh >= c
    }
}

pub fn check_lax_milgram(matrix: &DenseMatrix, trials: usize, seed: u64) -> Result<LaxMilgramReport> {
    if !matrix.is_square() || matrix.rows() == 0 {
        return Err(Error::DimensionMismatch("Lax-Milgram check needs a non-empty square matrix".into()));
    }
    if trials < 1 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let n = matrix.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_q = f64::INFINITY;
    for _ in 0..trials {
        let mut u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|v| *v /= norm);
        let au = matrix.mul_vec(&u)?;
        let num: f64 = u.iter().zip(&au).map(|(a, b)| a * b).sum();
        let den: f64 = u.iter().map(|v| v * v).sum();
        min_q = min_q.min(num.abs() / den);
    }
    Ok(LaxMilgramReport {
        dimension: n,
        trials,
        min_rayleigh: min_q,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexReport {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub dim_kernel: usize,
    pub codim_range: usize,
    pub index: i64,
    pub sv_threshold_relative: f64,
    /// Absolute threshold τ·σ_max actually applied.
    pub sv_threshold_used: f64,
    pub singular_values: Vec<f64>,
}

/// Numerical rank, kernel dimension, range codimension and index of an m×n matrix.
pub fn fredholm_index(matrix: &DenseMatrix) -> Result<IndexReport> {
    let (m, n) = (matrix.rows(), matrix.cols());
    if m == 0 || n == 0 {
        return Err(Error::DimensionMismatch("fredholm_index needs a non-empty matrix".into()));
    }
    let sv = matrix.singular_values();
    let smax = sv.first().copied().unwrap_or(0.0);
    let threshold = SV_THRESHOLD * smax;
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > threshold).count()
    };
    let dim_kernel = n - rank;
    let codim_range = m - rank;
    Ok(IndexReport {
        rows: m,
        cols: n,
        rank,
        dim_kernel,
        codim_range,
        index: dim_kernel as i64 - codim_range as i64,
        sv_threshold_relative: SV_THRESHOLD,
        sv_threshold_used: threshold,
        singular_values: sv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Rank-one outer products with spectral norm equal to the magnitude.
    FiniteRank,
    /// Dense Gaussian matrices with spectral norm equal to the magnitude.
    SmallNorm,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexStabilityReport {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    pub trials: usize,
    pub base: IndexReport,
    pub index: i64,
    pub all_indices_equal: bool,
    pub rank_min: usize,
    pub rank_max: usize,
    /// Ranks varied, or a perturbation of this size can move a singular value
    /// across the rank threshold.
    pub rank_unstable: bool,
}

fn random_perturbation(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    kind: PerturbationKind,
    magnitude: f64,
) -> Result<DenseMatrix> {
    match kind {
        PerturbationKind::FiniteRank => {
            let a: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if na * nb > 0.0 { magnitude / (na * nb) } else { 0.0 };
            let data = a
                .iter()
                .flat_map(|ai| b.iter().map(move |bj| scale * ai * bj))
                .collect();
            DenseMatrix::from_row_major(rows, cols, data)
        }
        PerturbationKind::SmallNorm => {
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
            let g = DenseMatrix::from_row_major(rows, cols, data)?;
            let smax = g.singular_values().first().copied().unwrap_or(0.0);
            Ok(if smax > 0.0 { g.scale(magnitude / smax) } else { g })
        }
    }
}

pub fn index_stability_trial(
    s: &DenseMatrix,
    kind: PerturbationKind,
    magnitude: f64,
    trials: usize,
    seed: u64,
) -> Result<IndexStabilityReport> {
    if !(magnitude > 0.0) {
        return Err(Error::InvalidArgument("perturbation magnitude must be positive".into()));
    }
    let base = fredholm_index(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all_equal = true;
    let (mut rmin, mut rmax) = (base.rank, base.rank);
    for _ in 0..trials {
        let c = random_perturbation(&mut rng, s.rows(), s.cols(), kind, magnitude)?;
        let r = fredholm_index(&s.add(&c)?)?;
        all_equal &= r.index == base.index;
        rmin = rmin.min(r.rank);
        rmax = rmax.max(r.rank);
    }
    let tau = base.sv_threshold_used;
    let near_threshold = base.singular_values.iter().any(|&sv| (sv - tau).abs() <= magnitude)
        || (tau > 0.0 && magnitude >= tau / 10.0 && magnitude <= tau * 10.0);
    Ok(IndexStabilityReport {
        kind,
        magnitude,
        trials,
        index: base.index,
        all_indices_equal: all_equal,
        rank_min: rmin,
        rank_max: rmax,
        rank_unstable: rmin != rmax || near_threshold,
        base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DomainSpec, Rule};

    fn grid(m: usize) -> Grid {
        Grid::build(&DomainSpec::interval(0.0, 1.0).unwrap(), Rule::Trapezoid, m).unwrap()
    }

    fn e(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    fn problem(kernels: &[&str], h: Option<&str>) -> Problem {
        let mut b = Problem::builder(grid(201)).linear_kernels(kernels.iter().map(|k| e(k)));
        if let Some(h) = h {
            b = b.hammerstein(e(h));
        }
        b.build().unwrap()
    }

    #[test]
    fn contraction_examples() {
        let r = check_contraction(&problem(&["0.5"], None), 10.0).unwrap();
        assert_eq!(r.contraction_constant_k, 0.5);
        assert!(r.is_contractive);

        let r = check_contraction(&problem(&["0"], Some("0.25*sin(u)")), 10.0).unwrap();
        assert_eq!(r.combined_estimate_kappa, 0.25);
        let h_sup = r.hammerstein_h_sup.unwrap();
        assert!(h_sup <= 0.25 && h_sup > 0.2498, "{h_sup}");

        let r = check_contraction(&problem(&["1"], None), 10.0).unwrap();
        assert_eq!(r.contraction_constant_k, 1.0);
        assert!(!r.is_contractive);
    }

    #[test]
    fn contraction_constant_scales_with_measure() {
        let g = Grid::build(&DomainSpec::interval(-1.0, 2.0).unwrap(), Rule::Trapezoid, 11).unwrap();
        let p = Problem::builder(g).linear_kernel(e("-0.25")).build().unwrap();
        let r = check_contraction(&p, 1.0).unwrap();
        assert_eq!(r.contraction_constant_k, 0.75);
    }

    #[test]
    fn coercivity_identity_is_linear() {
        let p = problem(&[], None);
        let r = check_weak_coercivity(&p, 3, &[1.0, 2.0, 4.0], 1).unwrap();
        for ray in &r.ray_samples {
            for &(l, v) in ray {
                assert!((v - l).abs() <= 1e-14 * l);
            }
        }
        assert!(r.monotone_growth_observed);
        assert_eq!(r.lower_bound_certified, Some(1.0));
    }

    #[test]
    fn coercivity_constant_kernel_values() {
        let r = check_weak_coercivity(&problem(&["0.5"], None), 2, &[1.0, 10.0, 100.0], 0).unwrap();
        let vals: Vec<f64> = r.ray_samples[0].iter().map(|s| s.1).collect();
        for (v, expect) in vals.iter().zip([1.5, 15.0, 150.0]) {
            assert!((v - expect).abs() <= 1e-13 * expect);
        }
        assert!((r.lower_bound_certified.unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(r.certificate_respected, Some(true));
    }

    #[test]
    fn coercivity_not_certified_at_unit_norm() {
        let r = check_weak_coercivity(&problem(&["1"], None), 2, &[1.0, 10.0], 0).unwrap();
        let vals: Vec<f64> = r.ray_samples[0].iter().map(|s| s.1).collect();
        assert!((vals[0] - 2.0).abs() < 1e-13 && (vals[1] - 20.0).abs() < 1e-12);
        assert!(r.lower_bound_certified.is_none());
        assert!(r.note.contains("no certificate"));
    }

    #[test]
    fn coercivity_argument_validation() {
        let p = problem(&[], None);
        assert!(check_weak_coercivity(&p, 0, &[1.0, 2.0], 0).is_err());
        assert!(check_weak_coercivity(&p, 1, &[1.0], 0).is_err());
        assert!(check_weak_coercivity(&p, 1, &[2.0, 1.0], 0).is_err());
    }

    #[test]
    fn norm_separation_examples() {
        let r = check_norm_separation(&problem(&["0.5"], None)).unwrap();
        assert!((r.norm_k_plus_c - 0.5).abs() < 1e-15 && r.pass);
        let r = check_norm_separation(&problem(&["1"], None)).unwrap();
        assert!((r.norm_k_plus_c - 1.0).abs() < 1e-12 && !r.pass);
        let r = check_norm_separation(&problem(&[], None)).unwrap();
        assert_eq!(r.norm_k_plus_c, 0.0);
        assert!(r.pass && r.corollary1_gap.is_none());
        let r = check_norm_separation(&problem(&["0.4", "0.2"], None)).unwrap();
        assert!((r.norm_f.unwrap() - 1.4).abs() < 1e-14);
        assert!((r.corollary1_gap.unwrap() - 1.2).abs() < 1e-14);
    }

    #[test]
    fn frechet_affine_kernel_is_exact() {
        let p = problem(&[], Some("0.1*u"));
        let g = p.grid().clone();
        let u = GridFunction::from_fn(&g, |x| x[0]).unwrap();
        let m = GridFunction::constant(&g, 1.0);
        let r = check_frechet(&p, &u, &m, &DEFAULT_T_VALUES).unwrap();
        assert!(r.remainders.iter().all(|&x| x <= 1e-14), "{:?}", r.remainders);
        assert!(r.affine_exact && r.pass);
    }

    #[test]
    fn frechet_sine_at_zero_is_cubic() {
        let p = problem(&[], Some("0.25*sin(u)"));
        let g = p.grid().clone();
        let r = check_frechet(
            &p,
            &GridFunction::zeros(&g),
            &GridFunction::constant(&g, 1.0),
            &DEFAULT_T_VALUES,
        )
        .unwrap();
        for (t, rem) in r.t_values.iter().zip(&r.remainders) {
            let taylor = 0.25 * (t - t.sin());
            assert!((rem - taylor).abs() <= 1e-3 * taylor + 1e-17, "t={t}: {rem} vs {taylor}");
        }
        let order = r.estimated_order.unwrap();
        assert!((order - 3.0).abs() < 0.1, "{order}");
        assert!(r.pass);
    }

    #[test]
    fn frechet_sine_generic_point_is_quadratic() {
        let p = problem(&[], Some("0.25*sin(u)"));
        let g = p.grid().clone();
        let r = check_frechet(
            &p,
            &GridFunction::constant(&g, 0.7),
            &GridFunction::constant(&g, 1.0),
            &DEFAULT_T_VALUES,
        )
        .unwrap();
        let order = r.estimated_order.unwrap();
        assert!((1.8..=2.4).contains(&order), "{order}");
    }

    #[test]
    fn frechet_requires_hammerstein() {
        let p = problem(&["0.5"], None);
        let g = p.grid().clone();
        let u = GridFunction::zeros(&g);
        assert!(matches!(
            check_frechet(&p, &u, &u, &DEFAULT_T_VALUES),
            Err(Error::MissingHammerstein)
        ));
        let p = problem(&[], Some("sin(u)"));
        assert!(check_frechet(&p, &u, &u, &[1e-2, 1e-3]).is_err());
        assert!(check_frechet(&p, &u, &u, &[1e-4, 1e-3, 1e-2]).is_err());
    }

    #[test]
    fn lax_milgram_examples() {
        let r = check_lax_milgram(&DenseMatrix::identity(7).scale(2.0), 50, 3).unwrap();
        assert_eq!(r.min_rayleigh, 2.0);
        assert!(r.pass_for_c(2.0) && !r.pass_for_c(2.0 + 1e-12));

        let r = check_lax_milgram(&DenseMatrix::from_diagonal(&[1.0, 3.0]), 200, 3).unwrap();
        assert!(r.min_rayleigh >= 1.0 && r.min_rayleigh <= 3.0);
        let more = check_lax_milgram(&DenseMatrix::from_diagonal(&[1.0, 3.0]), 5000, 3).unwrap();
        assert!(more.min_rayleigh <= r.min_rayleigh);
        assert!(more.min_rayleigh < 1.01);

        let rot = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let r = check_lax_milgram(&rot, 100, 0).unwrap();
        assert!(r.min_rayleigh <= 1e-12);
        assert!(!r.pass_for_c(1e-6));
    }

    #[test]
    fn lax_milgram_spd_never_undershoots_spectrum() {
        // A = QᵀDQ-like SPD: tridiagonal 2,-1 has eigenvalues 2 - 2cos(kπ/(n+1))
        let n = 8;
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            a.set(i, i, 2.0);
            if i + 1 < n {
                a.set(i, i + 1, -1.0);
                a.set(i + 1, i, -1.0);
            }
        }
        let lambda_min = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        let r = check_lax_milgram(&a, 500, 11).unwrap();
        assert!(r.min_rayleigh >= lambda_min - 1e-12);
    }

    #[test]
    fn index_examples() {
        let r = fredholm_index(&DenseMatrix::identity(2)).unwrap();
        assert_eq!((r.rank, r.dim_kernel, r.codim_range, r.index), (2, 0, 0, 0));
        let r = fredholm_index(&DenseMatrix::zeros(2, 3)).unwrap();
        assert_eq!((r.rank, r.dim_kernel, r.codim_range, r.index), (0, 3, 2, 1));
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.1]]).unwrap();
        let r = fredholm_index(&a).unwrap();
        assert_eq!((r.rank, r.index), (2, -1));
    }

    #[test]
    fn index_stability_zero_matrix_with_rank_one_perturbation() {
        let s = DenseMatrix::zeros(2, 3);
        let r = index_stability_trial(&s, PerturbationKind::FiniteRank, 1e-3, 20, 5).unwrap();
        assert!(r.all_indices_equal);
        assert_eq!(r.index, 1);
        assert_eq!((r.rank_min, r.rank_max), (0, 1));
        assert!(r.rank_unstable);
    }

    #[test]
    fn index_stability_flags_near_threshold_singular_values() {
        let s = DenseMatrix::from_diagonal(&[1.0, 1e-9]);
        let near = index_stability_trial(&s, PerturbationKind::SmallNorm, 5e-10, 50, 2).unwrap();
        assert!(near.rank_unstable);
        assert!(near.all_indices_equal);
        let far = index_stability_trial(&s, PerturbationKind::SmallNorm, 1e-14, 50, 2).unwrap();
        assert!(!far.rank_unstable);
        assert_eq!((far.rank_min, far.rank_max), (2, 2));
    }

    #[test]
    fn perturbations_have_requested_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [PerturbationKind::FiniteRank, PerturbationKind::SmallNorm] {
            let c = random_perturbation(&mut rng, 4, 3, kind, 0.3).unwrap();
            let smax = c.singular_values()[0];
            assert!((smax - 0.3).abs() < 1e-12, "{kind:?}: {smax}");
        }
        let c = random_perturbation(&mut rng, 4, 3, PerturbationKind::FiniteRank, 1.0).unwrap();
        assert_eq!(fredholm_index(&c).unwrap().rank, 1);
    }
}
