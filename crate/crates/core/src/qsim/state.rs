use std::f64::consts::PI;

use num_complex::Complex64;

use super::{Gate, MAX_QUBITS};
use crate::{Error, Result};

/// Complex amplitudes of an n-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits, `1 ≤ n_qubits ≤ 16`.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_register(n_qubits)?;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n_qubits, amplitudes })
    }

    /// Wraps raw amplitudes. The length must be a power of two; the caller is
    /// responsible for normalization.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Size(format!("amplitude count {len} is not 2^n for n >= 1")));
        }
        let n_qubits = len.trailing_zeros() as usize;
        check_register(n_qubits)?;
        Ok(StateVector { n_qubits, amplitudes })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Resets to `|0…0⟩` without reallocating.
    pub fn reset(&mut self) {
        self.amplitudes.fill(Complex64::new(0.0, 0.0));
        self.amplitudes[0] = Complex64::new(1.0, 0.0);
    }

    /// Applies `gate` in place.
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        match *gate {
            Gate::Ry { target, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                self.for_each_pair(target, |a0, a1| {
                    let (x0, x1) = (*a0, *a1);
                    *a0 = x0 * c - x1 * s;
                    *a1 = x0 * s + x1 * c;
                });
            }
            Gate::Rx { target, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let mis = Complex64::new(0.0, -s);
                self.for_each_pair(target, |a0, a1| {
                    let (x0, x1) = (*a0, *a1);
                    *a0 = x0 * c + x1 * mis;
                    *a1 = x0 * mis + x1 * c;
                });
            }
            Gate::Rz { target, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let lo = Complex64::new(c, -s);
                let hi = Complex64::new(c, s);
                self.for_each_pair(target, |a0, a1| {
                    *a0 *= lo;
                    *a1 *= hi;
                });
            }
            Gate::Cnot { control, target } => {
                let cmask = self.bit(control);
                let tmask = self.bit(target);
                for i in 0..self.amplitudes.len() {
                    if i & cmask != 0 && i & tmask == 0 {
                        self.amplitudes.swap(i, i | tmask);
                    }
                }
            }
        }
    }

    /// Per-qubit Pauli-Z expectations, each clamped into `[-1, 1]`.
    pub fn z_expectations(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits];
        self.z_expectations_into(&mut out);
        out
    }

    pub(crate) fn z_expectations_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_qubits);
        out.fill(0.0);
        let n = self.n_qubits;
        for (i, amp) in self.amplitudes.iter().enumerate() {
            let p = amp.norm_sqr();
            for (q, acc) in out.iter_mut().enumerate() {
                if i >> (n - 1 - q) & 1 == 0 {
                    *acc += p;
                } else {
                    *acc -= p;
                }
            }
        }
        for z in out.iter_mut() {
            *z = z.clamp(-1.0, 1.0);
        }
    }

    fn bit(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    fn for_each_pair(&mut self, target: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
        let mask = self.bit(target);
        for block in self.amplitudes.chunks_exact_mut(2 * mask) {
            let (lo, hi) = block.split_at_mut(mask);
            for (a0, a1) in lo.iter_mut().zip(hi.iter_mut()) {
                f(a0, a1);
            }
        }
    }
}

fn check_register(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::Size(format!("register of {n_qubits} qubits outside 1..={MAX_QUBITS}")));
    }
    Ok(())
}

pub fn new_zero_state(n_qubits: usize) -> Result<StateVector> {
    StateVector::zero(n_qubits)
}

pub fn apply_gate(state: &StateVector, gate: &Gate) -> Result<StateVector> {
    let mut out = state.clone();
    out.apply(gate)?;
    Ok(out)
}

/// Encodes `values` (each in `[0, 1]`) by applying `RY(π·values[j])` to qubit
/// `j` of a fresh `|0…0⟩`. Surplus qubits stay at `|0⟩`.
pub fn angle_encode(values: &[f64], n_qubits: usize) -> Result<StateVector> {
    let mut state = StateVector::zero(n_qubits)?;
    encode_into(&mut state, values)?;
    Ok(state)
}

/// Resets `state` and angle-encodes `values` into it.
pub(crate) fn encode_into(state: &mut StateVector, values: &[f64]) -> Result<()> {
    if values.len() > state.n_qubits {
        return Err(Error::Size(format!("{} values do not fit in {} qubits", values.len(), state.n_qubits)));
    }
    if let Some((position, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::EncodingRange { position, value });
    }
    state.reset();
    for (target, &v) in values.iter().enumerate() {
        state.apply_unchecked(&Gate::Ry { target, angle: PI * v });
    }
    Ok(())
}

pub fn measure_z_expectations(state: &StateVector) -> Vec<f64> {
    state.z_expectations()
}
