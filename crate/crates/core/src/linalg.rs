//! Small dense least-squares helpers shared by the solver and the
//! observability report.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::geometry::Vec3;

/// Singular values below `RANK_TOLERANCE * largest` count as null directions.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Minimum-norm least-squares solution of a stacked `n x 3` system.
pub(crate) struct LeastSquares3 {
    pub solution: Vec3,
    /// Descending.
    pub singular_values: [f64; 3],
    pub null_space: Vec<Vec3>,
    pub rank: usize,
}

pub(crate) fn solve_stacked(a: &DMatrix<f64>, b: &DVector<f64>) -> LeastSquares3 {
    debug_assert_eq!(a.ncols(), 3);
    let svd = a.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let u = svd.u.as_ref().expect("u requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let cutoff = RANK_TOLERANCE * largest;

    let mut solution = Vec3::zeros();
    let mut singular_values = [0.0; 3];
    let mut null_space = Vec::new();
    let mut rank = 0;
    for (slot, &i) in order.iter().enumerate() {
        let s = svd.singular_values[i];
        singular_values[slot] = s;
        let v = Vec3::new(v_t[(i, 0)], v_t[(i, 1)], v_t[(i, 2)]);
        if s > cutoff && s > 0.0 {
            let coeff = u.column(i).dot(b) / s;
            solution += v * coeff;
            rank += 1;
        } else {
            null_space.push(v);
        }
    }
    // fewer rows than columns: the remaining right singular directions are null
    if order.len() < 3 {
        let mut basis: Vec<Vec3> = order
            .iter()
            .map(|&i| Vec3::new(v_t[(i, 0)], v_t[(i, 1)], v_t[(i, 2)]))
            .collect();
        for e in [Vec3::x(), Vec3::y(), Vec3::z()] {
            if basis.len() == 3 {
                break;
            }
            let mut v = e;
            for b in &basis {
                v -= b * b.dot(&v);
            }
            if v.norm() > 1e-6 {
                let v = v.normalize();
                basis.push(v);
                null_space.push(v);
            }
        }
    }
    LeastSquares3 {
        solution,
        singular_values,
        null_space,
        rank,
    }
}

/// Singular values (descending) of the matrix whose rows are `rows`.
pub(crate) fn row_singular_values(rows: &[Vec3]) -> [f64; 3] {
    let mut gram = Matrix3::zeros();
    for r in rows {
        gram += r * r.transpose();
    }
    let mut ev: Vec<f64> = gram
        .symmetric_eigenvalues()
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    [ev[0], ev[1], ev[2]]
}

pub(crate) fn numerical_rank(singular_values: &[f64; 3]) -> usize {
    let largest = singular_values[0];
    if largest <= 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * largest)
        .count()
}

/// Stacks 3x3 blocks into a `3n x 3` matrix.
pub(crate) fn stack_blocks(blocks: &[Matrix3<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(blocks.len() * 3, 3);
    for (i, b) in blocks.iter().enumerate() {
        m.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(b);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_deficient_system_reports_null_direction() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_row_slice(&[0.24, 0.24, 0.0]);
        let ls = solve_stacked(&a, &b);
        assert_eq!(ls.rank, 2);
        assert_eq!(ls.null_space.len(), 1);
        assert!((ls.null_space[0].z.abs() - 1.0).abs() < 1e-12);
        assert!((ls.solution - Vec3::new(0.12, 0.12, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn short_system_pads_null_space() {
        let a = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let b = DVector::from_row_slice(&[0.5]);
        let ls = solve_stacked(&a, &b);
        assert_eq!(ls.rank, 1);
        assert_eq!(ls.null_space.len(), 2);
        assert!((ls.solution - Vec3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
        for v in &ls.null_space {
            assert!(v.z.abs() < 1e-12);
        }
    }
}
