//! Dense bounded-variable primal simplex.
//!
//! Solves  max c'x  s.t.  A x = b,  lower <= x <= upper,  starting from a
//! caller-supplied feasible basis. Bland's rule breaks ties on entering and
//! leaving variables, so the method terminates despite degeneracy. Problem
//! sizes here are tiny (links of one network), so each iteration refactors
//! the basis by LU instead of maintaining an inverse.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::tolerances::{LP_CERTIFICATE, LP_PIVOT};

#[derive(Debug, Clone)]
pub struct BoundedLp {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Objective is maximized.
    pub c: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Row prices from the final basis.
    pub duals: DVector<f64>,
    pub reduced_costs: DVector<f64>,
    /// A nonbasic variable with zero reduced cost can move without changing
    /// the objective: the maximizer need not be unique.
    pub alternative_optima: bool,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("lp sizes inconsistent: {0}")]
    Shape(String),
    #[error("starting basis is infeasible or singular: {0}")]
    BadBasis(String),
    #[error("objective unbounded along variable {0}")]
    Unbounded(usize),
    #[error("iteration limit reached; basis cycling suspected")]
    IterationLimit,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NonbasicSide {
    Lower,
    Upper,
}

const MAX_ITERATIONS: usize = 10_000;

/// Solve from `basis` (one column index per row); every non-listed variable
/// starts at its lower bound. The implied basic values must be feasible.
pub fn solve(lp: &BoundedLp, basis: &[usize]) -> Result<LpSolution, LpError> {
    let m = lp.a.nrows();
    let n = lp.a.ncols();
    if lp.b.len() != m
        || lp.c.len() != n
        || lp.lower.len() != n
        || lp.upper.len() != n
        || basis.len() != m
    {
        return Err(LpError::Shape(format!("m = {m}, n = {n}, basis = {}", basis.len())));
    }
    if (0..n).any(|j| lp.lower[j] > lp.upper[j]) {
        return Err(LpError::Shape("crossed bounds".into()));
    }

    let mut in_basis = vec![false; n];
    for &j in basis {
        if j >= n || in_basis[j] {
            return Err(LpError::BadBasis(format!("column {j} repeated or out of range")));
        }
        in_basis[j] = true;
    }
    let mut basic: Vec<usize> = basis.to_vec();
    let mut side: Vec<NonbasicSide> = vec![NonbasicSide::Lower; n];

    // x_B = B^{-1} (b - N x_N); refactored every iteration. The second
    // factorization carries B' for the dual solve.
    type Factored = (
        nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    );
    let factor = |basic: &[usize]| -> Result<Factored, LpError> {
        let bmat = DMatrix::from_fn(m, m, |i, k| lp.a[(i, basic[k])]);
        let lut = bmat.transpose().lu();
        let lu = bmat.lu();
        if lu.is_invertible() || m == 0 {
            Ok((lu, lut))
        } else {
            Err(LpError::BadBasis("singular basis matrix".into()))
        }
    };
    let basic_values = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
                        side: &[NonbasicSide],
                        in_basis: &[bool]| {
        let mut rhs = lp.b.clone();
        for j in 0..n {
            if !in_basis[j] {
                let xj = match side[j] {
                    NonbasicSide::Lower => lp.lower[j],
                    NonbasicSide::Upper => lp.upper[j],
                };
                if xj != 0.0 {
                    rhs -= lp.a.column(j) * xj;
                }
            }
        }
        lu.solve(&rhs).expect("factorized basis solves")
    };

    let (mut lu, mut lut) = factor(&basic)?;
    let mut xb = basic_values(&lu, &side, &in_basis);
    let feas_tol = LP_PIVOT * lp.upper.iter().fold(1.0_f64, |acc, &u| acc.max(u.abs()));
    for (k, &j) in basic.iter().enumerate() {
        if xb[k] < lp.lower[j] - feas_tol || xb[k] > lp.upper[j] + feas_tol {
            return Err(LpError::BadBasis(format!(
                "basic variable {j} = {} outside [{}, {}]",
                xb[k], lp.lower[j], lp.upper[j]
            )));
        }
    }

    let mut iterations = 0;
    loop {
        if iterations >= MAX_ITERATIONS {
            return Err(LpError::IterationLimit);
        }
        // y' = c_B' B^{-1} via the transposed system.
        let cb = DVector::from_fn(m, |k, _| lp.c[basic[k]]);
        let y = lut.solve(&cb).expect("factorized basis solves transpose");
        let reduced = |j: usize| lp.c[j] - y.dot(&lp.a.column(j).into_owned());

        // Bland: lowest-index improving nonbasic column.
        let mut entering = None;
        for j in 0..n {
            if in_basis[j] || lp.lower[j] == lp.upper[j] {
                continue;
            }
            let r = reduced(j);
            let improves = match side[j] {
                NonbasicSide::Lower => r > LP_PIVOT,
                NonbasicSide::Upper => r < -LP_PIVOT,
            };
            if improves {
                entering = Some((j, r));
                break;
            }
        }
        let Some((j, _)) = entering else { break };
        iterations += 1;

        // Movement of x_B per unit increase of x_j along its improving
        // direction (up from lower, down from upper).
        let sign = match side[j] {
            NonbasicSide::Lower => 1.0,
            NonbasicSide::Upper => -1.0,
        };
        let dir = lu
            .solve(&(lp.a.column(j) * sign))
            .expect("factorized basis solves");

        // Ratio test: first bound hit among basics, or the entering
        // variable reaching its opposite bound.
        let mut limit = lp.upper[j] - lp.lower[j];
        let mut leaving: Option<(usize, NonbasicSide)> = None;
        for k in 0..m {
            let i = basic[k];
            let (room, hits) = if dir[k] > LP_PIVOT {
                (xb[k] - lp.lower[i], NonbasicSide::Lower)
            } else if dir[k] < -LP_PIVOT {
                (lp.upper[i] - xb[k], NonbasicSide::Upper)
            } else {
                continue;
            };
            let step = (room / dir[k].abs()).max(0.0);
            let better = step < limit - LP_PIVOT
                || (step < limit + LP_PIVOT
                    && leaving.is_some_and(|(kk, _)| basic[kk] > i));
            if better {
                limit = step;
                leaving = Some((k, hits));
            }
        }
        if limit.is_infinite() {
            return Err(LpError::Unbounded(j));
        }

        match leaving {
            None => {
                // Bound flip: x_j crosses to its other side.
                for k in 0..m {
                    xb[k] -= dir[k] * limit;
                }
                side[j] = match side[j] {
                    NonbasicSide::Lower => NonbasicSide::Upper,
                    NonbasicSide::Upper => NonbasicSide::Lower,
                };
            }
            Some((k, hits)) => {
                let out = basic[k];
                in_basis[out] = false;
                side[out] = hits;
                in_basis[j] = true;
                basic[k] = j;
                (lu, lut) = factor(&basic)?;
                xb = basic_values(&lu, &side, &in_basis);
            }
        }
    }

    let mut x = DVector::zeros(n);
    for j in 0..n {
        if !in_basis[j] {
            x[j] = match side[j] {
                NonbasicSide::Lower => lp.lower[j],
                NonbasicSide::Upper => lp.upper[j],
            };
        }
    }
    for (k, &j) in basic.iter().enumerate() {
        x[j] = xb[k].clamp(lp.lower[j], lp.upper[j]);
    }
    let cb = DVector::from_fn(m, |k, _| lp.c[basic[k]]);
    let duals = if m == 0 {
        DVector::zeros(0)
    } else {
        lut.solve(&cb).expect("factorized basis solves transpose")
    };
    let reduced_costs =
        DVector::from_fn(n, |j, _| lp.c[j] - duals.dot(&lp.a.column(j).into_owned()));
    let alternative_optima = (0..n).any(|j| {
        !in_basis[j] && lp.lower[j] < lp.upper[j] && reduced_costs[j].abs() <= LP_PIVOT
    });
    Ok(LpSolution {
        objective: lp.c.dot(&x),
        x,
        duals,
        reduced_costs,
        alternative_optima,
        iterations,
    })
}

/// Optimality conditions checked directly on a claimed solution: primal
/// feasibility, sign conditions on reduced costs at the active bounds, and
/// the duality identity c'x = y'b + r'x.
pub fn certify(lp: &BoundedLp, sol: &LpSolution) -> Result<(), String> {
    let scale = lp
        .upper
        .iter()
        .chain(lp.c.iter())
        .fold(1.0_f64, |acc, &v| acc.max(v.abs()));
    let tol = LP_CERTIFICATE * scale;
    let n = lp.a.ncols();
    for j in 0..n {
        if sol.x[j] < lp.lower[j] - tol || sol.x[j] > lp.upper[j] + tol {
            return Err(format!("x[{j}] = {} violates bounds", sol.x[j]));
        }
    }
    let residual = &lp.a * &sol.x - &lp.b;
    if residual.amax() > tol {
        return Err(format!("row residual {}", residual.amax()));
    }
    for j in 0..n {
        let r = sol.reduced_costs[j];
        let at_lower = sol.x[j] <= lp.lower[j] + tol;
        let at_upper = sol.x[j] >= lp.upper[j] - tol;
        let ok = (at_lower && r <= tol)
            || (at_upper && r >= -tol)
            || (!at_lower && !at_upper && r.abs() <= tol);
        if !ok {
            return Err(format!(
                "reduced cost {r} inconsistent with x[{j}] = {} in [{}, {}]",
                sol.x[j], lp.lower[j], lp.upper[j]
            ));
        }
    }
    let gap = sol.objective - sol.duals.dot(&lp.b) - sol.reduced_costs.dot(&sol.x);
    if gap.abs() > tol {
        return Err(format!("duality gap {gap}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> BoundedLp {
        let m = a.len();
        let n = c.len();
        BoundedLp {
            a: DMatrix::from_fn(m, n, |i, j| a[i][j]),
            b: DVector::from_vec(b),
            c: DVector::from_vec(c),
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        }
    }

    #[test]
    fn shared_capacity_splits_with_alternative_optima() {
        // max x1 + x2, x1 + x2 <= 1.5 (slack x3), x in [0,1]^2.
        let lp = lp(
            vec![vec![1.0, 1.0, -1.0]],
            vec![0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0; 3],
            vec![1.0, 1.0, 1.5],
        );
        let sol = solve(&lp, &[2]).unwrap();
        assert!((sol.objective - 1.5).abs() < 1e-12);
        assert!(sol.alternative_optima, "tie along the capacity face");
        certify(&lp, &sol).unwrap();
    }

    #[test]
    fn ranged_rows_pin_an_interior_vertex() {
        // max x1 + 0.5 x2 with x1 + x2 <= 2 and x1 <= 1.5, x in [0,2]^2.
        let lp = lp(
            vec![vec![1.0, 1.0, -1.0, 0.0], vec![1.0, 0.0, 0.0, -1.0]],
            vec![0.0, 0.0],
            vec![1.0, 0.5, 0.0, 0.0],
            vec![0.0; 4],
            vec![2.0, 2.0, 2.0, 1.5],
        );
        let sol = solve(&lp, &[2, 3]).unwrap();
        assert!((sol.objective - 1.75).abs() < 1e-12);
        assert!((sol.x[0] - 1.5).abs() < 1e-12);
        assert!((sol.x[1] - 0.5).abs() < 1e-12);
        certify(&lp, &sol).unwrap();
    }

    #[test]
    fn unconstrained_rows_leave_variables_at_their_boxes() {
        // Roomy row: optimum at the variable upper bounds via bound flips.
        let lp = lp(
            vec![vec![1.0, 1.0, -1.0]],
            vec![0.0],
            vec![2.0, 1.0, 0.0],
            vec![0.0; 3],
            vec![1.0, 1.0, 10.0],
        );
        let sol = solve(&lp, &[2]).unwrap();
        assert!((sol.objective - 3.0).abs() < 1e-12);
        assert_eq!(sol.x[0], 1.0);
        assert_eq!(sol.x[1], 1.0);
        certify(&lp, &sol).unwrap();
    }

    #[test]
    fn negative_costs_stay_at_lower_bounds() {
        let lp = lp(
            vec![vec![1.0, 1.0, -1.0]],
            vec![0.0],
            vec![1.0, -1.0, 0.0],
            vec![0.0; 3],
            vec![1.0, 1.0, 1.5],
        );
        let sol = solve(&lp, &[2]).unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert_eq!(sol.x[1], 0.0);
        certify(&lp, &sol).unwrap();
    }

    #[test]
    fn certificate_rejects_a_doctored_solution() {
        let problem = lp(
            vec![vec![1.0, 1.0, -1.0]],
            vec![0.0],
            vec![1.0, 1.0, 0.0],
            vec![0.0; 3],
            vec![1.0, 1.0, 1.5],
        );
        let mut sol = solve(&problem, &[2]).unwrap();
        sol.x[0] = 0.2;
        assert!(certify(&problem, &sol).is_err());
    }
}
