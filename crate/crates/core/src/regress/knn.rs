use ndarray::{Array2, ArrayView2};

use super::Regressor;
use crate::{Error, Result};

/// Brute-force k-nearest-neighbour regressor (Euclidean distance, uniform
/// weights). Distance ties go to the lower training index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    x: Array2<f64>,
    y: Array2<f64>,
}

impl KnnModel {
    pub fn fit(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidSpec("knn k must be at least 1".into()));
        }
        Ok(Self {
            k: k.min(x.nrows()),
            x: x.to_owned(),
            y: y.to_owned(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl Regressor for KnnModel {
    fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        super::check_input(self, x)?;
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.x.nrows());
        for (query, mut out_row) in x.rows().into_iter().zip(out.rows_mut()) {
            dist.clear();
            dist.extend(self.x.rows().into_iter().enumerate().map(|(i, r)| {
                let d2: f64 = r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            }));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if self.k < dist.len() {
                dist.select_nth_unstable_by(self.k - 1, cmp);
            }
            for &(_, i) in &dist[..self.k] {
                out_row += &self.y.row(i);
            }
            out_row /= self.k as f64;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn averages_k_nearest() {
        let x = array![[0.0], [1.0], [2.0], [10.0]];
        let y = array![[0.0], [2.0], [4.0], [100.0]];
        let m = KnnModel::fit(x.view(), y.view(), 2).unwrap();
        let p = m.predict(array![[0.4], [9.0]].view()).unwrap();
        assert_eq!(p, array![[1.0], [52.0]]);
    }

    #[test]
    fn k_larger_than_sample_uses_all_rows() {
        let x = array![[0.0], [1.0]];
        let y = array![[1.0], [3.0]];
        let m = KnnModel::fit(x.view(), y.view(), 5).unwrap();
        assert_eq!(m.predict(array![[7.0]].view()).unwrap(), array![[2.0]]);
    }
}
