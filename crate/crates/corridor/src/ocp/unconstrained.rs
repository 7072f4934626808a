//! Closed-form solution of the interior-point-constrained effort
//! minimization without inequality constraints.
//!
//! With m = 2n arcs the full optimality system couples arc coefficients and
//! costate jumps. The jump multipliers enter linearly and only through the
//! slope difference of adjacent arcs, so they are eliminated up front and
//! recovered afterwards; what remains is a square system in the 4m
//! polynomial coefficients: entry state (2), per interior point the position
//! constraint plus p/v/u continuity (4 each), terminal position and zero
//! terminal control (2).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::{Arc, ArcKind, BoundaryData, InteriorMultiplier, TrajectoryArcs};

/// Assembles the coefficient system for `b`. Rows and columns are ordered
/// arc-major: (a, b, c, d) per arc in path order.
fn assemble(b: &BoundaryData) -> (DMatrix<f64>, DVector<f64>) {
    let m = b.interior.len() + 1;
    let mut times = Vec::with_capacity(m + 1);
    times.push(b.t0);
    times.extend(b.interior.iter().map(|&(t, _)| t));
    times.push(b.tf);

    let dim = 4 * m;
    let mut a = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    let col = |arc: usize, coeff: usize| 4 * arc + coeff;

    let mut row = 0;
    // Entry speed and position: local time starts at zero on arc 0.
    a[(row, col(0, 2))] = 1.0;
    rhs[row] = b.v0;
    row += 1;
    a[(row, col(0, 3))] = 1.0;
    rhs[row] = b.p0;
    row += 1;

    for (j, &(_, c_j)) in b.interior.iter().enumerate() {
        let h = times[j + 1] - times[j];
        let (h2, h3) = (h * h, h * h * h);
        // Position constraint on the left arc.
        a[(row, col(j, 0))] = h3 / 6.0;
        a[(row, col(j, 1))] = h2 / 2.0;
        a[(row, col(j, 2))] = h;
        a[(row, col(j, 3))] = 1.0;
        rhs[row] = c_j;
        row += 1;
        // Position continuity: right arc starts at the same point.
        a[(row, col(j, 0))] = h3 / 6.0;
        a[(row, col(j, 1))] = h2 / 2.0;
        a[(row, col(j, 2))] = h;
        a[(row, col(j, 3))] = 1.0;
        a[(row, col(j + 1, 3))] = -1.0;
        row += 1;
        // Speed continuity.
        a[(row, col(j, 0))] = h2 / 2.0;
        a[(row, col(j, 1))] = h;
        a[(row, col(j, 2))] = 1.0;
        a[(row, col(j + 1, 2))] = -1.0;
        row += 1;
        // Control continuity.
        a[(row, col(j, 0))] = h;
        a[(row, col(j, 1))] = 1.0;
        a[(row, col(j + 1, 1))] = -1.0;
        row += 1;
    }

    // Terminal position and zero terminal control on the last arc.
    let h = times[m] - times[m - 1];
    a[(row, col(m - 1, 0))] = h * h * h / 6.0;
    a[(row, col(m - 1, 1))] = h * h / 2.0;
    a[(row, col(m - 1, 2))] = h;
    a[(row, col(m - 1, 3))] = 1.0;
    rhs[row] = b.pf;
    row += 1;
    a[(row, col(m - 1, 0))] = h;
    a[(row, col(m - 1, 1))] = 1.0;
    row += 1;
    debug_assert_eq!(row, dim);

    (a, rhs)
}

/// Solves the boundary problem and returns the piecewise trajectory with
/// interior-point multipliers recovered from the arc slopes.
pub fn solve_unconstrained(b: &BoundaryData) -> Result<TrajectoryArcs> {
    b.validate()?;
    let m = b.interior.len() + 1;
    let (a, rhs) = assemble(b);
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("interior-point system".into()))?;
    // One round of iterative refinement tightens the residual to solver
    // tolerance even for long, thin arcs.
    for _ in 0..2 {
        let residual = &rhs - &a * &x;
        if residual.amax() < 1e-12 {
            break;
        }
        if let Some(dx) = lu.solve(&residual) {
            x += dx;
        }
    }
    let residual = (&rhs - &a * &x).amax();
    if !residual.is_finite() || residual > 1e-6 {
        return Err(Error::SingularSystem(format!(
            "residual {residual:.3e} after refinement"
        )));
    }

    let mut times = Vec::with_capacity(m + 1);
    times.push(b.t0);
    times.extend(b.interior.iter().map(|&(t, _)| t));
    times.push(b.tf);

    let arcs: Vec<Arc> = (0..m)
        .map(|j| Arc {
            kind: ArcKind::Unconstrained,
            t_start: times[j],
            t_end: times[j + 1],
            a: x[4 * j],
            b: x[4 * j + 1],
            c: x[4 * j + 2],
            d: x[4 * j + 3],
        })
        .collect();

    // The costate jump at interior point j is the slope drop between the
    // adjacent arcs; the Hamiltonian jump follows from the speed there.
    let multipliers = (0..m - 1)
        .map(|j| {
            let pi1 = arcs[j].a - arcs[j + 1].a;
            let v = arcs[j + 1].c;
            InteriorMultiplier {
                time: times[j + 1],
                pi1,
                pi2: -pi1 * v,
            }
        })
        .collect();

    Ok(TrajectoryArcs {
        arcs,
        multipliers,
        predecessor: None,
        follow_gap: 0.0,
    })
}

/// Writes the assembled system as CSV (`matrix` rows, then `rhs`, then the
/// solved coefficients) for inspection.
pub fn dump_linear_system<W: std::io::Write>(b: &BoundaryData, mut w: W) -> Result<()> {
    let (a, rhs) = assemble(b);
    let x = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("interior-point system".into()))?;
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|j| format!("{:.12e}", a[(i, j)])).collect();
        writeln!(w, "A,{}", row.join(","))?;
    }
    let rhs_row: Vec<String> = rhs.iter().map(|v| format!("{v:.12e}")).collect();
    writeln!(w, "b,{}", rhs_row.join(","))?;
    let x_row: Vec<String> = x.iter().map(|v| format!("{v:.12e}")).collect();
    writeln!(w, "x,{}", x_row.join(","))?;
    Ok(())
}
