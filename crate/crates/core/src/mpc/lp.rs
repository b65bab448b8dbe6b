use super::MpcError;

/// Column-major sparse matrix; the dispatch LP has at most three nonzeros per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    columns: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(rows: usize) -> Self {
        Self { rows, columns: Vec::new() }
    }

    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        let mut m = Self::new(rows);
        for j in 0..cols {
            m.push_column((0..rows).filter(|&i| data[i * cols + j] != 0.0).map(|i| (i, data[i * cols + j])).collect());
        }
        m
    }

    pub fn push_column(&mut self, entries: Vec<(usize, f64)>) -> usize {
        self.columns.push(entries);
        self.columns.len() - 1
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.columns[j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.columns[j].iter().filter(|(r, _)| *r == i).map(|(_, v)| v).sum()
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (col, &xj) in self.columns.iter().zip(x) {
            for &(i, a) in col {
                out[i] += a * xj;
            }
        }
        out
    }
}

/// `min cost·x  s.t.  A x = rhs,  lower <= x <= upper` (bounds may be infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub names: Vec<String>,
    /// Optional starting basis as `(row, variable)` pairs, installed in order.
    /// Ignored when the resulting basic solution is not primal feasible.
    pub basis_hint: Vec<(usize, usize)>,
}

impl LinearProgram {
    pub fn new(rows: usize) -> Self {
        Self {
            cost: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            matrix: SparseMatrix::new(rows),
            rhs: vec![0.0; rows],
            names: Vec::new(),
            basis_hint: Vec::new(),
        }
    }

    pub fn add_variable(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        cost: f64,
        entries: Vec<(usize, f64)>,
    ) -> usize {
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.push(name.into());
        self.matrix.push_column(entries)
    }

    pub fn num_variables(&self) -> usize {
        self.cost.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest equality residual or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ax = self.matrix.mul_vec(x);
        let eq = ax.iter().zip(&self.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bounds = x
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max);
        eq.max(bounds)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let n = self.cost.len();
        let m = self.rhs.len();
        if self.lower.len() != n || self.upper.len() != n || self.matrix.cols() != n || self.names.len() != n {
            return Err(MpcError::MalformedLp("vector lengths disagree with the variable count".into()));
        }
        if self.matrix.rows() != m {
            return Err(MpcError::MalformedLp("matrix rows disagree with rhs length".into()));
        }
        for j in 0..n {
            if !self.cost[j].is_finite() {
                return Err(MpcError::MalformedLp(format!("cost of {} is not finite", self.names[j])));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(MpcError::MalformedLp(format!("bounds of {} are inconsistent", self.names[j])));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(MpcError::MalformedLp(format!("bounds of {} are empty", self.names[j])));
            }
            for &(i, a) in self.matrix.column(j) {
                if i >= m || !a.is_finite() {
                    return Err(MpcError::MalformedLp(format!("bad coefficient in column {}", self.names[j])));
                }
            }
        }
        if self.rhs.iter().any(|b| !b.is_finite()) {
            return Err(MpcError::MalformedLp("rhs is not finite".into()));
        }
        if self.basis_hint.iter().any(|&(r, v)| r >= m || v >= n) {
            return Err(MpcError::MalformedLp("basis hint out of range".into()));
        }
        Ok(())
    }
}
