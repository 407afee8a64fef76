use std::fmt;

use crate::{Error, Result};

/// A single elementary operation. Rotation angles are in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Rx { target: usize, angle: f64 },
    Ry { target: usize, angle: f64 },
    Rz { target: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn target(&self) -> usize {
        match *self {
            Gate::Rx { target, .. } | Gate::Ry { target, .. } | Gate::Rz { target, .. } => target,
            Gate::Cnot { target, .. } => target,
        }
    }

    pub fn control(&self) -> Option<usize> {
        match *self {
            Gate::Cnot { control, .. } => Some(control),
            _ => None,
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx { angle, .. } | Gate::Ry { angle, .. } | Gate::Rz { angle, .. } => Some(angle),
            Gate::Cnot { .. } => None,
        }
    }

    pub fn is_rotation(&self) -> bool {
        !matches!(self, Gate::Cnot { .. })
    }

    /// Checks the gate against a register of `n_qubits`.
    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let target = self.target();
        if target >= n_qubits {
            return Err(Error::Index(format!("{self}: target {target} out of range for {n_qubits} qubits")));
        }
        if let Some(control) = self.control() {
            if control >= n_qubits {
                return Err(Error::Index(format!("{self}: control {control} out of range for {n_qubits} qubits")));
            }
            if control == target {
                return Err(Error::Index(format!("{self}: control equals target")));
            }
        }
        if let Some(angle) = self.angle() {
            if !angle.is_finite() {
                return Err(Error::Numeric(format!("{self}: non-finite rotation angle")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Gate::Rx { target, angle } => write!(f, "RX({angle}) q{target}"),
            Gate::Ry { target, angle } => write!(f, "RY({angle}) q{target}"),
            Gate::Rz { target, angle } => write!(f, "RZ({angle}) q{target}"),
            Gate::Cnot { control, target } => write!(f, "CNOT({control},{target})"),
        }
    }
}
