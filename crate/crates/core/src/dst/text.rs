//! Text record for mass functions.
//!
//! ```text
//! frame c1 c2 c3
//! 1 6.9999999999999996e-1
//! 7 3.0000000000000004e-1
//! ```
//!
//! The first line lists the frame labels in order. Each further line is a
//! focal set as a decimal bitmask over that order and its mass with 17
//! significant digits, in ascending bitmask order.

use std::fmt::Write as _;

use super::{Frame, MassFunction, Subset};
use crate::error::{Error, Result};

pub fn write_mass(m: &MassFunction) -> String {
    let mut out = String::from("frame");
    for l in m.frame().labels() {
        out.push(' ');
        out.push_str(l);
    }
    out.push('\n');
    for (a, mass) in m.focal_sets() {
        let _ = writeln!(out, "{} {:.16e}", a.bits(), mass);
    }
    out
}

pub fn read_mass(text: &str) -> Result<MassFunction> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty mass record".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("frame") {
        return Err(Error::Format("mass record must start with a frame line".into()));
    }
    let frame = Frame::new(fields)?;
    let mut entries = Vec::new();
    let mut last: Option<u32> = None;
    for (n, line) in lines.enumerate() {
        let bad = || Error::Format(format!("malformed mass line {}: {line:?}", n + 2));
        let mut it = line.split_whitespace();
        let bits: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let mass: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if it.next().is_some() {
            return Err(bad());
        }
        if last.is_some_and(|l| l >= bits) {
            return Err(Error::Format(format!("focal sets out of order at line {}", n + 2)));
        }
        last = Some(bits);
        entries.push((Subset(bits), mass));
    }
    MassFunction::new(&frame, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let f = Frame::new(["heart", "lung"]).unwrap();
        let m = MassFunction::new(
            &f,
            [(Subset(0b11), 0.1), (Subset(0b01), 0.7), (Subset(0b10), 0.2)],
        )
        .unwrap();
        let text = write_mass(&m);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "frame heart lung");
        assert_eq!(lines[1], "1 6.9999999999999996e-1");
        assert!(lines[2].starts_with("2 "));
        assert!(lines[3].starts_with("3 "));
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_mass("").is_err());
        assert!(read_mass("frame a b\n3 x\n").is_err());
        assert!(read_mass("frame a b\n3 0.5\n1 0.5\n").is_err());
        assert!(read_mass("frame a b\n1 0.5\n").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(weights in proptest::collection::vec(0.0f64..1.0, 7)) {
            let total: f64 = weights.iter().sum::<f64>() + 1e-3;
            let f = Frame::numbered(3).unwrap();
            let mut entries: Vec<(Subset, f64)> =
                weights.iter().enumerate().map(|(i, w)| (Subset(i as u32 + 1), w / total)).collect();
            entries[6].1 += 1e-3 / total;
            let m = MassFunction::new(&f, entries).unwrap();
            let back = read_mass(&write_mass(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
