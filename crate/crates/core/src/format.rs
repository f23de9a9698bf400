//! Plain-text file formats for models, datasets and learned operators.
//!
//! All three are whitespace-separated decimals, one matrix row per line, and
//! every external symbol is 1-based.
//!
//! ```text
//! hmm <n> <m>          dataset <n> <N> <t>      ops <n> <k>
//! pi (m values)        x1 x2 ... xt             U    (n rows of k)
//! T  (m rows of m)     ... N lines              b1   (k values)
//! O  (n rows of m)                              b_inf (k values)
//!                                               B_1 .. B_n (k rows of k each)
//! ```
//!
//! A dataset whose sequences differ in length is written with `t = 0`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hmm::{Dataset, HmmParams};
use crate::spectral::ObservableOperators;

fn num(x: f64) -> String {
    // 17 significant digits round-trips every f64.
    format!("{x:.16e}")
}

fn write_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let row: Vec<String> = values.map(|&v| num(v)).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    for r in m.row_iter() {
        write_row(out, r.iter());
    }
}

pub fn write_model(params: &HmmParams) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "hmm {} {}", params.n(), params.m());
    write_row(&mut out, params.pi().iter());
    write_matrix(&mut out, params.transition());
    write_matrix(&mut out, params.emission());
    out
}

pub fn write_dataset(dataset: &Dataset) -> String {
    let t = match dataset.sequences.first() {
        Some(first) if dataset.sequences.iter().all(|s| s.len() == first.len()) => first.len(),
        _ => 0,
    };
    let mut out = String::new();
    let _ = writeln!(out, "dataset {} {} {}", dataset.n, dataset.len(), t);
    for s in &dataset.sequences {
        let line: Vec<String> = s.iter().map(|x| (x + 1).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_operators(ops: &ObservableOperators) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ops {} {}", ops.n(), ops.rank());
    write_matrix(&mut out, &ops.u);
    write_row(&mut out, ops.b1.iter());
    write_row(&mut out, ops.b_inf.iter());
    for b in &ops.b {
        write_matrix(&mut out, b);
    }
    out
}

/// Line cursor that skips blank lines and reports 1-based line numbers.
struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<&'a str> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            if !line.trim().is_empty() {
                return Ok(line.trim());
            }
        }
        Err(self.error(format!("unexpected end of input, expected {what}")))
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.last,
            message: message.into(),
        }
    }

    fn floats(&mut self, what: &str, expected: usize) -> Result<Vec<f64>> {
        let line = self.next_line(what)?;
        let values = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| self.error(format!("bad number {tok:?} in {what}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(self.error(format!("{what}: expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn matrix(&mut self, what: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(self.floats(&format!("{what} row {}", r + 1), cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn header(&mut self, keyword: &str, fields: usize) -> Result<Vec<usize>> {
        let line = self.next_line("header")?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(keyword) {
            return Err(self.error(format!("expected header starting with {keyword:?}")));
        }
        let values = toks
            .map(|t| t.parse::<usize>().map_err(|_| self.error(format!("bad header field {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != fields {
            return Err(self.error(format!("{keyword} header needs {fields} fields")));
        }
        Ok(values)
    }

    fn expect_end(&mut self) -> Result<()> {
        match self.next_line("end") {
            Ok(_) => Err(self.error("trailing content")),
            Err(_) => Ok(()),
        }
    }
}

pub fn parse_model(text: &str) -> Result<HmmParams> {
    let mut lines = Lines::new(text);
    let h = lines.header("hmm", 2)?;
    let (n, m) = (h[0], h[1]);
    if n == 0 || m == 0 {
        return Err(lines.error("n and m must be positive"));
    }
    let pi = DVector::from_vec(lines.floats("pi", m)?);
    let transition = lines.matrix("T", m, m)?;
    let emission = lines.matrix("O", n, m)?;
    lines.expect_end()?;
    HmmParams::new(pi, transition, emission)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = Lines::new(text);
    let h = lines.header("dataset", 3)?;
    let (n, count, t) = (h[0], h[1], h[2]);
    let mut sequences = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines.next_line(&format!("sequence {}", i + 1))?;
        let seq = line
            .split_whitespace()
            .map(|tok| match tok.parse::<usize>() {
                Ok(x) if (1..=n).contains(&x) => Ok(x - 1),
                Ok(x) => Err(Error::SymbolOutOfRange { symbol: x, n }),
                Err(_) => Err(lines.error(format!("bad symbol {tok:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if t > 0 && seq.len() != t {
            return Err(lines.error(format!("sequence length {} does not match header t = {t}", seq.len())));
        }
        sequences.push(seq);
    }
    lines.expect_end()?;
    Dataset::new(n, sequences)
}

pub fn parse_operators(text: &str) -> Result<ObservableOperators> {
    let mut lines = Lines::new(text);
    let h = lines.header("ops", 2)?;
    let (n, k) = (h[0], h[1]);
    if n == 0 || k == 0 || k > n {
        return Err(lines.error("need 1 <= m_hyper <= n"));
    }
    let u = lines.matrix("U", n, k)?;
    let b1 = DVector::from_vec(lines.floats("b1", k)?);
    let b_inf = DVector::from_vec(lines.floats("b_inf", k)?);
    let b = (0..n)
        .map(|x| lines.matrix(&format!("B_{}", x + 1), k, k))
        .collect::<Result<Vec<_>>>()?;
    lines.expect_end()?;
    Ok(ObservableOperators {
        u,
        b1,
        b_inf,
        b,
        singular_values: DVector::zeros(0),
        rank_deficient: false,
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<HmmParams> {
    parse_model(&read_to_string(path)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_to_string(path)?)
}

pub fn load_operators(path: &Path) -> Result<ObservableOperators> {
    parse_operators(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{random_hmm, sample_sequences};
    use crate::spectral::{estimate_moments, learn_spectral, TripleMode};

    #[test]
    fn model_roundtrip_is_exact() {
        let p = random_hmm(3, 5, 4, 1.0).unwrap();
        let text = write_model(&p);
        assert!(text.starts_with("hmm 5 3\n"));
        assert_eq!(parse_model(&text).unwrap(), p);
    }

    #[test]
    fn dataset_is_one_based() {
        let d = Dataset::new(3, vec![vec![0, 2, 1]]).unwrap();
        let text = write_dataset(&d);
        assert_eq!(text, "dataset 3 1 3\n1 3 2\n");
        assert_eq!(parse_dataset(&text).unwrap(), d);
    }

    #[test]
    fn dataset_rejects_zero_symbol() {
        assert!(matches!(parse_dataset("dataset 2 1 2\n0 1\n"), Err(Error::SymbolOutOfRange { .. })));
        assert!(matches!(parse_dataset("dataset 2 1 3\n1 1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn operators_roundtrip() {
        let p = random_hmm(2, 3, 1, 1.0).unwrap();
        let d = sample_sequences(&p, 500, 3, 2).unwrap();
        let mut ops = learn_spectral(&estimate_moments(&d, TripleMode::FirstTriple).unwrap(), 2).unwrap();
        let back = parse_operators(&write_operators(&ops)).unwrap();
        ops.singular_values = DVector::zeros(0);
        ops.rank_deficient = false;
        assert_eq!(back, ops);
    }

    #[test]
    fn model_parse_errors() {
        assert!(matches!(parse_model("hmm 2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_model("hmm 1 1\n1\n1\n1\nextra\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_model("hmm 1 1\n1\n0.5\n1\n"), Err(Error::NotStochastic { .. })));
    }
}
