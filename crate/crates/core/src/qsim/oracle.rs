//! Dense-matrix reference for small circuits.
//!
//! Each gate is expanded to its full `2^n × 2^n` matrix by Kronecker products
//! of 2×2 blocks (qubit 0 leftmost), and the circuit unitary is the ordered
//! product. Nothing here shares code with the in-place simulator.

use std::ops::Mul;

use num_complex::Complex64;

use super::{CircuitSpec, Gate, StateVector, MAX_ORACLE_QUBITS};
use crate::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![ZERO; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = ONE;
        }
        DenseMatrix { dim, data }
    }

    fn from_2x2(m: [[Complex64; 2]; 2]) -> Self {
        DenseMatrix { dim: 2, data: vec![m[0][0], m[0][1], m[1][0], m[1][1]] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    pub fn kron(&self, other: &DenseMatrix) -> DenseMatrix {
        let dim = self.dim * other.dim;
        let mut data = vec![ZERO; dim * dim];
        for r1 in 0..self.dim {
            for c1 in 0..self.dim {
                let a = self.get(r1, c1);
                for r2 in 0..other.dim {
                    for c2 in 0..other.dim {
                        data[(r1 * other.dim + r2) * dim + c1 * other.dim + c2] = a * other.get(r2, c2);
                    }
                }
            }
        }
        DenseMatrix { dim, data }
    }

    pub fn adjoint(&self) -> DenseMatrix {
        let mut data = vec![ZERO; self.data.len()];
        for r in 0..self.dim {
            for c in 0..self.dim {
                data[c * self.dim + r] = self.get(r, c).conj();
            }
        }
        DenseMatrix { dim: self.dim, data }
    }

    fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        DenseMatrix { dim: self.dim, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    /// Matrix–vector product.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim).map(|r| (0..self.dim).map(|c| self.get(r, c) * v[c]).sum()).collect()
    }

    pub fn apply_state(&self, state: &StateVector) -> Result<StateVector> {
        if state.amplitudes().len() != self.dim {
            return Err(Error::Shape(format!(
                "matrix of dimension {} applied to {} amplitudes",
                self.dim,
                state.amplitudes().len()
            )));
        }
        StateVector::from_amplitudes(self.apply(state.amplitudes()))
    }

    /// Largest elementwise deviation of `U†U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let product = &self.adjoint() * self;
        let id = DenseMatrix::identity(self.dim);
        product.data.iter().zip(&id.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

impl Mul for &DenseMatrix {
    type Output = DenseMatrix;

    fn mul(self, rhs: &DenseMatrix) -> DenseMatrix {
        let n = self.dim;
        let mut data = vec![ZERO; n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.get(r, k);
                if a == ZERO {
                    continue;
                }
                for c in 0..n {
                    data[r * n + c] += a * rhs.get(k, c);
                }
            }
        }
        DenseMatrix { dim: n, data }
    }
}

fn rotation_block(gate: &Gate) -> [[Complex64; 2]; 2] {
    let half = gate.angle().unwrap_or(0.0) / 2.0;
    let (c, s) = (half.cos(), half.sin());
    let re = |x: f64| Complex64::new(x, 0.0);
    match gate {
        Gate::Rx { .. } => [[re(c), Complex64::new(0.0, -s)], [Complex64::new(0.0, -s), re(c)]],
        Gate::Ry { .. } => [[re(c), re(-s)], [re(s), re(c)]],
        Gate::Rz { .. } => [[Complex64::from_polar(1.0, -half), ZERO], [ZERO, Complex64::from_polar(1.0, half)]],
        Gate::Cnot { .. } => unreachable!("CNOT has no single-qubit block"),
    }
}

/// Kronecker product over all qubits, with `blocks(q)` on qubit `q`.
fn expand(n: usize, blocks: impl Fn(usize) -> DenseMatrix) -> DenseMatrix {
    (1..n).fold(blocks(0), |acc, q| acc.kron(&blocks(q)))
}

/// Full-register matrix of one gate.
pub fn gate_matrix(gate: &Gate, n_qubits: usize) -> Result<DenseMatrix> {
    gate.validate(n_qubits)?;
    let id = DenseMatrix::identity(2);
    Ok(match *gate {
        Gate::Cnot { control, target } => {
            let p0 = DenseMatrix::from_2x2([[ONE, ZERO], [ZERO, ZERO]]);
            let p1 = DenseMatrix::from_2x2([[ZERO, ZERO], [ZERO, ONE]]);
            let x = DenseMatrix::from_2x2([[ZERO, ONE], [ONE, ZERO]]);
            let keep = expand(n_qubits, |q| if q == control { p0.clone() } else { id.clone() });
            let flip = expand(n_qubits, |q| {
                if q == control {
                    p1.clone()
                } else if q == target {
                    x.clone()
                } else {
                    id.clone()
                }
            });
            keep.add(&flip)
        }
        _ => {
            let block = DenseMatrix::from_2x2(rotation_block(gate));
            expand(n_qubits, |q| if q == gate.target() { block.clone() } else { id.clone() })
        }
    })
}

/// The circuit unitary `G_k ⋯ G_2 G_1`, for at most six qubits.
pub fn dense_unitary_oracle(spec: &CircuitSpec) -> Result<DenseMatrix> {
    let n = spec.n_qubits();
    if n > MAX_ORACLE_QUBITS {
        return Err(Error::Size(format!("dense oracle limited to {MAX_ORACLE_QUBITS} qubits, circuit has {n}")));
    }
    spec.gates().iter().try_fold(DenseMatrix::identity(1 << n), |acc, gate| Ok(&gate_matrix(gate, n)? * &acc))
}
