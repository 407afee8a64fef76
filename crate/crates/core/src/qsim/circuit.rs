use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gate, StateVector, MAX_QUBITS};
use crate::{Error, Result};

/// Layered circuit families used by the quanvolutional operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    /// Per layer: `RY` on every qubit, then a ring of CNOTs `(q, q+1 mod n)`.
    BasicEntangled,
    /// Per layer: `RZ·RY·RZ` on every qubit, then a ring of CNOTs whose range
    /// grows with the layer index.
    StronglyEntangled,
    /// Per layer: `n` rotations on random qubits about random axes, then
    /// `⌊n/2⌋` CNOTs on random ordered pairs.
    Random,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::BasicEntangled, Template::StronglyEntangled, Template::Random];

    pub fn name(&self) -> &'static str {
        match self {
            Template::BasicEntangled => "BasicEntangled",
            Template::StronglyEntangled => "StronglyEntangled",
            Template::Random => "Random",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "BasicEntangled" | "basic" => Ok(Template::BasicEntangled),
            "StronglyEntangled" | "strong" => Ok(Template::StronglyEntangled),
            "Random" | "random" => Ok(Template::Random),
            other => Err(Error::Config(format!("unknown circuit template `{other}`"))),
        }
    }
}

/// A frozen circuit: metadata plus the fully materialized gate list.
///
/// The gate list cannot be changed after construction; clones share it.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    template: Template,
    n_qubits: usize,
    n_layers: usize,
    seed: u64,
    gates: Arc<[Gate]>,
}

impl CircuitSpec {
    /// Wraps an explicit gate list, validating every gate against `n_qubits`.
    pub fn from_gates(
        template: Template,
        n_qubits: usize,
        n_layers: usize,
        seed: u64,
        gates: Vec<Gate>,
    ) -> Result<Self> {
        check_dims(n_qubits, n_layers)?;
        for gate in &gates {
            gate.validate(n_qubits)?;
        }
        Ok(CircuitSpec { template, n_qubits, n_layers, seed, gates: gates.into() })
    }

    pub fn template(&self) -> Template {
        self.template
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Applies every gate in order to `state` in place.
    pub fn run_in_place(&self, state: &mut StateVector) -> Result<()> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::Shape(format!("circuit has {} qubits, state has {}", self.n_qubits, state.n_qubits())));
        }
        // Gates were validated at construction.
        for gate in self.gates.iter() {
            state.apply_unchecked(gate);
        }
        Ok(())
    }
}

fn check_dims(n_qubits: usize, n_layers: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::Config(format!("circuit qubit count {n_qubits} outside 1..={MAX_QUBITS}")));
    }
    if n_layers == 0 {
        return Err(Error::Config("circuit needs at least one layer".into()));
    }
    Ok(())
}

/// Materializes a template. The result depends only on the arguments; every
/// frozen angle is drawn uniformly from `[0, 2π)` off a ChaCha8 stream seeded
/// with `seed`.
pub fn build_circuit(template: Template, n_qubits: usize, n_layers: usize, seed: u64) -> Result<CircuitSpec> {
    check_dims(n_qubits, n_layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_qubits;
    let mut gates = Vec::new();
    for layer in 0..n_layers {
        match template {
            Template::BasicEntangled => {
                for target in 0..n {
                    gates.push(Gate::Ry { target, angle: draw_angle(&mut rng) });
                }
                match n {
                    1 => {}
                    2 => gates.push(Gate::Cnot { control: 0, target: 1 }),
                    _ => ring(&mut gates, n, 1),
                }
            }
            Template::StronglyEntangled => {
                for target in 0..n {
                    gates.push(Gate::Rz { target, angle: draw_angle(&mut rng) });
                    gates.push(Gate::Ry { target, angle: draw_angle(&mut rng) });
                    gates.push(Gate::Rz { target, angle: draw_angle(&mut rng) });
                }
                if n >= 2 {
                    ring(&mut gates, n, layer % (n - 1) + 1);
                }
            }
            Template::Random => {
                for _ in 0..n {
                    let target = rng.random_range(0..n);
                    let angle = draw_angle(&mut rng);
                    gates.push(match rng.random_range(0..3) {
                        0 => Gate::Rx { target, angle },
                        1 => Gate::Ry { target, angle },
                        _ => Gate::Rz { target, angle },
                    });
                }
                for _ in 0..n / 2 {
                    let control = rng.random_range(0..n);
                    // Uniform over the n-1 qubits other than `control`.
                    let mut target = rng.random_range(0..n - 1);
                    if target >= control {
                        target += 1;
                    }
                    gates.push(Gate::Cnot { control, target });
                }
            }
        }
    }
    CircuitSpec::from_gates(template, n_qubits, n_layers, seed, gates)
}

fn draw_angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.0..TAU)
}

fn ring(gates: &mut Vec<Gate>, n: usize, range: usize) {
    for control in 0..n {
        gates.push(Gate::Cnot { control, target: (control + range) % n });
    }
}

pub fn run_circuit(spec: &CircuitSpec, state: &StateVector) -> Result<StateVector> {
    let mut out = state.clone();
    spec.run_in_place(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::qsim::new_zero_state;

    #[test]
    fn basic_entangled_three_qubit_structure() {
        let spec = build_circuit(Template::BasicEntangled, 3, 1, 11).unwrap();
        let g = spec.gates();
        assert_eq!(g.len(), 6);
        for (q, gate) in g[..3].iter().enumerate() {
            assert!(matches!(*gate, Gate::Ry { target, angle } if target == q && (0.0..TAU).contains(&angle)));
        }
        assert_eq!(g[3], Gate::Cnot { control: 0, target: 1 });
        assert_eq!(g[4], Gate::Cnot { control: 1, target: 2 });
        assert_eq!(g[5], Gate::Cnot { control: 2, target: 0 });
    }

    #[test]
    fn basic_entangled_small_registers() {
        let two = build_circuit(Template::BasicEntangled, 2, 2, 0).unwrap();
        let cnots: Vec<_> = two.gates().iter().filter(|g| !g.is_rotation()).collect();
        assert_eq!(cnots, vec![&Gate::Cnot { control: 0, target: 1 }; 2]);
        let one = build_circuit(Template::BasicEntangled, 1, 3, 0).unwrap();
        assert!(one.gates().iter().all(Gate::is_rotation));
        assert_eq!(one.gates().len(), 3);
    }

    #[test]
    fn strongly_entangled_counts_for_table_settings() {
        let spec = build_circuit(Template::StronglyEntangled, 9, 2, 5).unwrap();
        let rotations = spec.gates().iter().filter(|g| g.is_rotation()).count();
        let cnots = spec.gates().len() - rotations;
        assert_eq!(rotations, 2 * 9 * 3);
        assert_eq!(cnots, 2 * 9);
    }

    #[test]
    fn strongly_entangled_ranges_cycle() {
        // n = 4: ranges 1, 2, 3, 1, ...
        let spec = build_circuit(Template::StronglyEntangled, 4, 4, 0).unwrap();
        let cnots: Vec<_> = spec.gates().iter().filter(|g| !g.is_rotation()).copied().collect();
        let ranges: Vec<usize> = cnots
            .chunks(4)
            .map(|layer| match layer[0] {
                Gate::Cnot { control, target } => (target + 4 - control) % 4,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(ranges, vec![1, 2, 3, 1]);
    }

    #[test]
    fn random_template_shape() {
        for seed in 0..20 {
            let spec = build_circuit(Template::Random, 5, 3, seed).unwrap();
            let rotations = spec.gates().iter().filter(|g| g.is_rotation()).count();
            assert_eq!(rotations, 15);
            assert_eq!(spec.gates().len() - rotations, 3 * 2);
        }
        let single = build_circuit(Template::Random, 1, 2, 3).unwrap();
        assert_eq!(single.gates().len(), 2);
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        for template in Template::ALL {
            let a = build_circuit(template, 4, 2, 42).unwrap();
            let b = build_circuit(template, 4, 2, 42).unwrap();
            let c = build_circuit(template, 4, 2, 43).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.gates(), c.gates());
        }
    }

    #[test]
    fn build_rejects_degenerate_dims() {
        assert!(build_circuit(Template::Random, 0, 1, 0).is_err());
        assert!(build_circuit(Template::Random, 2, 0, 0).is_err());
        assert!(build_circuit(Template::Random, 17, 1, 0).is_err());
    }

    #[test]
    fn run_circuit_examples() {
        let empty = CircuitSpec::from_gates(Template::BasicEntangled, 2, 1, 0, vec![]).unwrap();
        let s = new_zero_state(2).unwrap();
        assert_eq!(run_circuit(&empty, &s).unwrap(), s);

        let hand = CircuitSpec::from_gates(
            Template::BasicEntangled,
            2,
            1,
            0,
            vec![
                Gate::Ry { target: 0, angle: PI },
                Gate::Ry { target: 1, angle: 0.0 },
                Gate::Cnot { control: 0, target: 1 },
            ],
        )
        .unwrap();
        let out = run_circuit(&hand, &s).unwrap();
        assert!((out.amplitudes()[3].re - 1.0).abs() < 1e-12);
        let z = out.z_expectations();
        assert!((z[0] + 1.0).abs() < 1e-12 && (z[1] + 1.0).abs() < 1e-12);

        let three = new_zero_state(3).unwrap();
        assert!(matches!(run_circuit(&hand, &three), Err(Error::Shape(_))));
    }

    #[test]
    fn from_gates_validates() {
        let bad = vec![Gate::Cnot { control: 0, target: 0 }];
        assert!(CircuitSpec::from_gates(Template::Random, 2, 1, 0, bad).is_err());
        let out_of_range = vec![Gate::Rx { target: 3, angle: 1.0 }];
        assert!(CircuitSpec::from_gates(Template::Random, 2, 1, 0, out_of_range).is_err());
    }

    #[test]
    fn template_names_round_trip() {
        for t in Template::ALL {
            assert_eq!(t.name().parse::<Template>().unwrap(), t);
        }
        assert!("Fancy".parse::<Template>().is_err());
    }
}
