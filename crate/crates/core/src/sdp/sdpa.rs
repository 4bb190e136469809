//! SDPA sparse (`.dat-s`) export and import.
//!
//! The file states `sum_i x_i F_i - F_0 >= 0` with `F_i = s_c A_ci` and
//! `F_0 = I - s_c K_c`, i.e. every block shifted to margin one. For the
//! homogeneous constraints of the delay criteria this is equivalent to strict
//! feasibility, and minimising the objective `a^T x` (the normalisation
//! functional) gives the optimal margin as `rhs / min`. Comment lines carry
//! the senses, labels and normalisation so that parsing restores the
//! original [`StandardForm`].

use std::fmt::Write as _;
use std::path::Path;

use super::{Block, StandardForm};
use crate::error::{Error, Result};
use crate::lmi::Sense;

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Renders the problem in SDPA sparse format.
pub fn write_sdpa(sf: &StandardForm) -> Result<String> {
    sf.validate()?;
    let mut out = String::new();
    out.push_str("* dcl standard form: F_i = s*A_i, F_0 = I - s*K (margin one)\n");
    for (b, blk) in sf.blocks.iter().enumerate() {
        let s = match blk.sense {
            Sense::NegDef => 'N',
            Sense::PosDef => 'P',
        };
        let _ = writeln!(
            out,
            "* block {} {} {}",
            b + 1,
            s,
            blk.label.replace('\n', " ")
        );
    }
    let _ = writeln!(out, "* normalization {}", num(sf.normalization_rhs));
    let _ = writeln!(out, "{}", sf.num_vars);
    let _ = writeln!(out, "{}", sf.blocks.len());
    let sizes: Vec<String> = sf.blocks.iter().map(|b| b.size.to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let mut obj = vec![0.0; sf.num_vars];
    for &(i, a) in &sf.normalization {
        obj[i] = a;
    }
    let obj: Vec<String> = obj.iter().map(|&v| num(v)).collect();
    let _ = writeln!(out, "{}", obj.join(" "));

    for (b, blk) in sf.blocks.iter().enumerate() {
        let s = blk.sense.sign();
        let mut f0: Vec<(usize, usize, f64)> = sf.constants[b]
            .iter()
            .map(|&(r, c, v)| (r, c, -s * v))
            .collect();
        for i in 0..blk.size {
            match f0.iter_mut().find(|e| e.0 == i && e.1 == i) {
                Some(e) => e.2 += 1.0,
                None => f0.push((i, i, 1.0)),
            }
        }
        f0.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (r, c, v) in f0 {
            if v != 0.0 {
                let _ = writeln!(out, "0 {} {} {} {}", b + 1, r + 1, c + 1, num(v));
            }
        }
    }
    let mut quint: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (b, blk) in sf.blocks.iter().enumerate() {
        let s = blk.sense.sign();
        for &(i, r, c, v) in &sf.coefficients[b] {
            quint.push((i + 1, b + 1, r + 1, c + 1, s * v));
        }
    }
    quint.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    for (m, b, r, c, v) in quint {
        let _ = writeln!(out, "{m} {b} {r} {c} {}", num(v));
    }
    Ok(out)
}

pub fn export_sdpa(sf: &StandardForm, path: &Path) -> Result<()> {
    let text = write_sdpa(sf)?;
    std::fs::write(path, text)?;
    Ok(())
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        line,
        msg: msg.into(),
    }
}

/// Inverse of [`write_sdpa`]. Files without the comment header are read as
/// all-positive blocks with no normalisation.
pub fn parse_sdpa(text: &str) -> Result<StandardForm> {
    let mut senses: Vec<(Sense, String)> = Vec::new();
    let mut rhs = 0.0;
    let mut data: Vec<(usize, &str)> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let ln = no + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('*').or_else(|| t.strip_prefix('"')) {
            let mut parts = rest.split_whitespace();
            match parts.next() {
                Some("block") => {
                    let idx: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(ln, "bad block index"))?;
                    let sense = match parts.next() {
                        Some("N") => Sense::NegDef,
                        Some("P") => Sense::PosDef,
                        _ => return Err(err(ln, "bad block sense")),
                    };
                    if idx != senses.len() + 1 {
                        return Err(err(ln, "block comments out of order"));
                    }
                    let label = rest
                        .trim_start()
                        .splitn(4, char::is_whitespace)
                        .nth(3)
                        .unwrap_or("")
                        .trim()
                        .to_string();
                    senses.push((sense, label));
                }
                Some("normalization") => {
                    rhs = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(ln, "bad normalization"))?;
                }
                _ => {}
            }
            continue;
        }
        data.push((ln, t));
    }
    let mut it = data.into_iter();
    let mut next_line = |what: &str| it.next().ok_or_else(|| err(0, format!("missing {what}")));
    let (ln, l) = next_line("variable count")?;
    let num_vars: usize = l
        .split_whitespace()
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(ln, "bad variable count"))?;
    let (ln, l) = next_line("block count")?;
    let nblocks: usize = l
        .split_whitespace()
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err(ln, "bad block count"))?;
    if nblocks == 0 {
        return Err(err(ln, "no blocks"));
    }
    let (ln, l) = next_line("block sizes")?;
    let sizes: Vec<i64> = l
        .split(|c: char| {
            c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')'
        })
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<i64>()
                .map_err(|_| err(ln, format!("bad block size '{s}'")))
        })
        .collect::<Result<_>>()?;
    if sizes.len() != nblocks || sizes.iter().any(|&s| s == 0) {
        return Err(err(ln, "block sizes do not match the block count"));
    }
    let (ln, l) = next_line("objective")?;
    let obj: Vec<f64> = l
        .split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| err(ln, format!("bad objective entry '{s}'")))
        })
        .collect::<Result<_>>()?;
    if obj.len() != num_vars {
        return Err(err(ln, "objective length differs from the variable count"));
    }
    if !senses.is_empty() && senses.len() != nblocks {
        return Err(err(0, "block comments do not match the block count"));
    }
    let blocks: Vec<Block> = (0..nblocks)
        .map(|b| {
            let (sense, label) = senses
                .get(b)
                .cloned()
                .unwrap_or((Sense::PosDef, format!("block{}", b + 1)));
            Block {
                size: sizes[b].unsigned_abs() as usize,
                sense,
                label,
            }
        })
        .collect();
    let mut f0: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); nblocks];
    let mut coefficients: Vec<Vec<(usize, usize, usize, f64)>> = vec![Vec::new(); nblocks];
    for (ln, l) in it {
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 5 {
            return Err(err(ln, "expected 'matno blockno i j value'"));
        }
        let idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| err(ln, format!("bad index '{s}'")))
        };
        let (m, b, r, c) = (idx(f[0])?, idx(f[1])?, idx(f[2])?, idx(f[3])?);
        let v: f64 = f[4]
            .parse()
            .map_err(|_| err(ln, format!("bad value '{}'", f[4])))?;
        if b == 0 || b > nblocks || m > num_vars {
            return Err(err(ln, "matrix or block index out of range"));
        }
        let size = blocks[b - 1].size;
        if r == 0 || c == 0 || r > size || c > size {
            return Err(err(ln, "entry outside its block"));
        }
        let (r, c) = if r <= c {
            (r - 1, c - 1)
        } else {
            (c - 1, r - 1)
        };
        let s = blocks[b - 1].sense.sign();
        if m == 0 {
            f0[b - 1].push((r, c, v));
        } else {
            coefficients[b - 1].push((m - 1, r, c, s * v));
        }
    }
    let mut constants = Vec::with_capacity(nblocks);
    for (b, blk) in blocks.iter().enumerate() {
        let s = blk.sense.sign();
        let mut full: Vec<(usize, usize, f64)> = f0[b].clone();
        for i in 0..blk.size {
            if !full.iter().any(|e| e.0 == i && e.1 == i) {
                full.push((i, i, 0.0));
            }
        }
        let mut k: Vec<(usize, usize, f64)> = full
            .into_iter()
            .map(|(r, c, v)| (r, c, if r == c { s * (1.0 - v) } else { -s * v }))
            .filter(|e| e.2 != 0.0)
            .collect();
        k.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        constants.push(k);
        coefficients[b].sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    }
    let normalization: Vec<(usize, f64)> = obj
        .iter()
        .enumerate()
        .filter(|e| *e.1 != 0.0)
        .map(|(i, &a)| (i, a))
        .collect();
    let sf = StandardForm {
        num_vars,
        blocks,
        constants,
        coefficients,
        normalization,
        normalization_rhs: rhs,
    };
    sf.validate()?;
    Ok(sf)
}

pub fn read_sdpa(path: &Path) -> Result<StandardForm> {
    parse_sdpa(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::NumericConstraint;

    fn one_var() -> StandardForm {
        let c = NumericConstraint {
            label: "x I".into(),
            dim: 2,
            sense: Sense::NegDef,
            entries: vec![(0, 0, Some(0), 1.0), (1, 1, Some(0), 1.0)],
        };
        StandardForm::from_constraints(&[c], 1, (vec![], 0.0)).unwrap()
    }

    #[test]
    fn golden_one_variable() {
        let text = write_sdpa(&one_var()).unwrap();
        let golden = "\
* dcl standard form: F_i = s*A_i, F_0 = I - s*K (margin one)
* block 1 N x I
* normalization 0.0
1
1
2
0.0
0 1 1 1 1.0
0 1 2 2 1.0
1 1 1 1 -1.0
1 1 2 2 -1.0
";
        assert_eq!(text, golden);
        let body: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('*'))
            .take(3)
            .collect();
        assert_eq!(body, ["1", "1", "2"]);
    }

    #[test]
    fn round_trip() {
        let c1 = NumericConstraint {
            label: "mixed".into(),
            dim: 3,
            sense: Sense::NegDef,
            entries: vec![
                (0, 0, None, -1.0),
                (0, 2, None, 0.25),
                (0, 1, Some(0), 0.1),
                (2, 2, Some(1), -3.5e-12),
                (1, 2, Some(2), 7.0),
            ],
        };
        let c2 = NumericConstraint {
            label: "P".into(),
            dim: 1,
            sense: Sense::PosDef,
            entries: vec![(0, 0, Some(1), 1.0)],
        };
        let sf = StandardForm::from_constraints(&[c1, c2], 3, (vec![(1, 1.0)], 1.0)).unwrap();
        let back = parse_sdpa(&write_sdpa(&sf).unwrap()).unwrap();
        assert_eq!(back, sf);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_sdpa("").is_err());
        assert!(parse_sdpa("1\n0\n\n0\n").is_err());
        assert!(parse_sdpa("1\n1\n2\n0\n1 1 3 3 1.0\n").is_err());
        assert!(matches!(
            parse_sdpa("1\n1\n2\n0\n1 1 1 x 1.0\n"),
            Err(Error::Format { line: 5, .. })
        ));
    }
}
