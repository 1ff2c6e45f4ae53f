//! Dynamic time warping with the symmetric `(1,0) (0,1) (1,1)` step set.

use super::{frame_sq_dist, same_q, McepView};
use crate::error::Result;

/// Optimal warping path from `(0, 0)` to `(Ta−1, Tb−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub path: Vec<(usize, usize)>,
    /// Sum of Euclidean frame distances over the path.
    pub cost: f64,
}

/// Aligns `a` and `b` under per-frame Euclidean distance. Every visited
/// cell contributes its distance once; ties prefer the diagonal step, then
/// advancing `a`, then advancing `b`.
pub fn dtw_align(a: McepView<'_>, b: McepView<'_>) -> Result<Alignment> {
    same_q(&a, &b)?;
    let (n, m) = (a.frames(), b.frames());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = frame_sq_dist(&a, i, &b, j).sqrt();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + c;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(Alignment {
        path,
        cost: acc[n * m - 1],
    })
}
