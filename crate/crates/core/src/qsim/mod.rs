//! Classical state-vector simulation of small circuits.
//!
//! Qubit 0 is the most significant bit of an amplitude index: in a 3-qubit
//! register, index `0b100` is `|100⟩`, i.e. qubit 0 set. Both the simulator
//! and [`oracle`] share this convention.

mod circuit;
mod gate;
pub mod oracle;
pub(crate) mod state;
mod text;

pub use circuit::{build_circuit, run_circuit, CircuitSpec, Template};
pub use gate::Gate;
pub use oracle::{dense_unitary_oracle, DenseMatrix};
pub use state::{angle_encode, apply_gate, measure_z_expectations, new_zero_state, StateVector};
pub use text::{parse_circuit, serialize_circuit};

/// Largest register the simulator accepts (2^16 amplitudes).
pub const MAX_QUBITS: usize = 16;

/// Largest register the dense oracle accepts.
pub const MAX_ORACLE_QUBITS: usize = 6;
