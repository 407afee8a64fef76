//! Line-oriented circuit text format.
//!
//! ```text
//! qubits 3
//! template BasicEntangled
//! layers 1
//! seed 7
//! RY 0 3.1415899999999999
//! CNOT 0 1
//! ```
//!
//! Headers must precede gate lines. Blank lines and lines starting with `#`
//! are ignored. Angles carry 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;

use super::{CircuitSpec, Gate, Template};
use crate::{Error, Result};

pub fn serialize_circuit(spec: &CircuitSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "qubits {}", spec.n_qubits());
    let _ = writeln!(out, "template {}", spec.template());
    let _ = writeln!(out, "layers {}", spec.n_layers());
    let _ = writeln!(out, "seed {}", spec.seed());
    for gate in spec.gates() {
        let _ = match *gate {
            Gate::Rx { target, angle } => writeln!(out, "RX {target} {}", format_angle(angle)),
            Gate::Ry { target, angle } => writeln!(out, "RY {target} {}", format_angle(angle)),
            Gate::Rz { target, angle } => writeln!(out, "RZ {target} {}", format_angle(angle)),
            Gate::Cnot { control, target } => writeln!(out, "CNOT {control} {target}"),
        };
    }
    out
}

/// Plain decimal with 17 significant digits.
fn format_angle(x: f64) -> String {
    if x == 0.0 {
        return format!("{:.16}", x);
    }
    let sci = format!("{:.16e}", x);
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (16 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

pub fn parse_circuit(text: &str) -> Result<CircuitSpec> {
    let mut n_qubits: Option<usize> = None;
    let mut template: Option<Template> = None;
    let mut n_layers: Option<usize> = None;
    let mut seed: Option<u64> = None;
    let mut gates = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let expect_args = |n: usize| {
            if fields.len() == n + 1 {
                Ok(())
            } else {
                Err(err(format!("`{}` takes {n} argument(s), found {}", fields[0], fields.len() - 1)))
            }
        };
        match fields[0] {
            "qubits" | "template" | "layers" | "seed" if !gates.is_empty() => {
                return Err(err(format!("header `{}` after gate lines", fields[0])));
            }
            "qubits" => {
                expect_args(1)?;
                n_qubits = Some(parse_int(fields[1], line_no)?);
            }
            "template" => {
                expect_args(1)?;
                template = Some(fields[1].parse().map_err(|e: Error| err(e.to_string()))?);
            }
            "layers" => {
                expect_args(1)?;
                n_layers = Some(parse_int(fields[1], line_no)?);
            }
            "seed" => {
                expect_args(1)?;
                seed = Some(fields[1].parse().map_err(|_| err(format!("bad seed `{}`", fields[1])))?);
            }
            kind @ ("RX" | "RY" | "RZ" | "CNOT") => {
                expect_args(2)?;
                let n = n_qubits.ok_or_else(|| err("gate before `qubits` header".into()))?;
                let gate = if kind == "CNOT" {
                    Gate::Cnot { control: parse_int(fields[1], line_no)?, target: parse_int(fields[2], line_no)? }
                } else {
                    let target = parse_int(fields[1], line_no)?;
                    let angle: f64 = fields[2].parse().map_err(|_| err(format!("bad angle `{}`", fields[2])))?;
                    if !angle.is_finite() {
                        return Err(err(format!("non-finite angle `{}`", fields[2])));
                    }
                    match kind {
                        "RX" => Gate::Rx { target, angle },
                        "RY" => Gate::Ry { target, angle },
                        _ => Gate::Rz { target, angle },
                    }
                };
                gate.validate(n).map_err(|e| err(e.to_string()))?;
                gates.push(gate);
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }

    let missing = |what: &str| Error::Parse { line: last_line.max(1), message: format!("missing `{what}` header") };
    let n_qubits = n_qubits.ok_or_else(|| missing("qubits"))?;
    let template = template.ok_or_else(|| missing("template"))?;
    let n_layers = n_layers.ok_or_else(|| missing("layers"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    CircuitSpec::from_gates(template, n_qubits, n_layers, seed, gates)
        .map_err(|e| Error::Parse { line: last_line.max(1), message: e.to_string() })
}

fn parse_int(field: &str, line: usize) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("expected a non-negative integer, found `{field}`") })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::qsim::build_circuit;

    fn header(n: usize) -> String {
        format!("qubits {n}\ntemplate Random\nlayers 1\nseed 0\n")
    }

    #[test]
    fn seventeen_significant_digits() {
        let spec =
            CircuitSpec::from_gates(Template::BasicEntangled, 1, 1, 0, vec![Gate::Ry { target: 0, angle: 1.23456 }])
                .unwrap();
        let text = serialize_circuit(&spec);
        assert!(text.lines().any(|l| l == "RY 0 1.2345600000000001"), "{text}");
        assert!(text.starts_with("qubits 1\ntemplate BasicEntangled\nlayers 1\nseed 0\n"));
    }

    #[test]
    fn format_angle_edge_cases() {
        assert_eq!(format_angle(0.0), "0.0000000000000000");
        assert_eq!(format_angle(0.05), "0.050000000000000003");
        assert_eq!(format_angle(-1.5), "-1.5000000000000000");
        assert_eq!(format_angle(std::f64::consts::TAU), "6.2831853071795862");
    }

    #[test]
    fn cnot_on_same_qubit_is_parse_error() {
        let text = format!("{}CNOT 0 0\n", header(2));
        match parse_circuit(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            (format!("{}RY 0\n", header(2)), 5),
            (format!("{}RY 0 abc\n", header(2)), 5),
            (format!("{}RY 0 inf\n", header(2)), 5),
            (format!("{}RY 3 1.0\n", header(2)), 5),
            (format!("{}\n# comment\nSWAP 0 1\n", header(2)), 7),
            ("RY 0 1.0\n".to_string(), 1),
            (format!("{}RY 0 1.0\nqubits 3\n", header(2)), 6),
            ("qubits 2\ntemplate Random\nlayers 1\n".to_string(), 3),
            ("qubits 2\ntemplate Fancy\n".to_string(), 2),
        ];
        for (text, expected) in cases {
            match parse_circuit(&text) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, expected, "{text}"),
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn parses_comments_and_whitespace() {
        let text = "# frozen\nqubits 2\n template StronglyEntangled \nlayers 2\nseed 9\n\nRZ 1 -0.25\nCNOT 1 0\n";
        let spec = parse_circuit(text).unwrap();
        assert_eq!(spec.template(), Template::StronglyEntangled);
        assert_eq!(spec.n_layers(), 2);
        assert_eq!(spec.seed(), 9);
        assert_eq!(spec.gates(), &[Gate::Rz { target: 1, angle: -0.25 }, Gate::Cnot { control: 1, target: 0 }]);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(seed in any::<u64>(), n in 1usize..8, layers in 1usize..4, t in 0usize..3) {
            let spec = build_circuit(Template::ALL[t], n, layers, seed).unwrap();
            let back = parse_circuit(&serialize_circuit(&spec)).unwrap();
            prop_assert_eq!(back, spec);
        }

        #[test]
        fn arbitrary_angles_round_trip(angle in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let spec = CircuitSpec::from_gates(Template::Random, 1, 1, 0, vec![Gate::Rx { target: 0, angle }]).unwrap();
            let back = parse_circuit(&serialize_circuit(&spec)).unwrap();
            prop_assert_eq!(back.gates()[0].angle().unwrap().to_bits(), angle.to_bits());
        }
    }
}
