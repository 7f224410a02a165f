//! Thin layer over nalgebra's dense complex LU.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Pivot ratio below which a matrix is treated as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

pub struct Factorized {
    lu: LU<Complex64, Dyn, Dyn>,
    n: usize,
}

impl std::fmt::Debug for Factorized {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorized").field("n", &self.n).finish()
    }
}

impl Factorized {
    pub fn new(matrix: CMatrix, network: &str) -> Result<Self> {
        if matrix.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(format!("{network} admittance matrix")));
        }
        let n = matrix.nrows();
        let lu = matrix.lu();
        let diag = lu.u().diagonal();
        let max = diag.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let min = diag.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        if n > 0 && (max == 0.0 || min / max < SINGULAR_PIVOT_RATIO) {
            return Err(Error::Singular {
                network: network.to_string(),
                detail: format!("pivot ratio {:.3e}", if max == 0.0 { 0.0 } else { min / max }),
            });
        }
        Ok(Self { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &CVector) -> CVector {
        self.lu
            .solve(rhs)
            .expect("factorization was checked for singularity")
    }

    /// Column `k` of the inverse.
    pub fn inverse_column(&self, k: usize) -> CVector {
        let mut e = CVector::zeros(self.n);
        e[k] = Complex64::new(1.0, 0.0);
        self.solve(&e)
    }
}

/// Eliminates every node not listed in `keep` (Schur complement).
pub fn kron_reduce(y: &CMatrix, keep: &[usize]) -> Result<CMatrix> {
    let n = y.nrows();
    let drop: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        CMatrix::from_fn(rows.len(), cols.len(), |i, j| y[(rows[i], cols[j])])
    };
    let ykk = pick(keep, keep);
    if drop.is_empty() {
        return Ok(ykk);
    }
    let yke = pick(keep, &drop);
    let yek = pick(&drop, keep);
    let yee = Factorized::new(pick(&drop, &drop), "kron-eliminated")?;
    let mut out = ykk;
    for col in 0..keep.len() {
        let x = yee.solve(&yek.column(col).into_owned());
        let correction = &yke * x;
        for row in 0..keep.len() {
            out[(row, col)] -= correction[row];
        }
    }
    Ok(out)
}
