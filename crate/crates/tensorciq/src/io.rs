//! Text file formats and atomic output.
//!
//! Observation files start with `# tensorciq-obs v1 d=<d> p=<p>` followed by
//! `i j k value` lines using 1-based canonical indices `i ≤ j ≤ k`. Factor
//! files start with `# tensorciq-factors v1 d=<d> r=<r>` followed by `r`
//! blocks of `d` values. Noise files start with
//! `# tensorciq-noise v1 d=<d> sigma=<σ> beta=<β>` followed by an
//! `i j k variance` line for every canonical triple. Values are written in
//! shortest round-trip form, so reading a written file is lossless.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use tensorciq_core::synth::NoiseSpec;
use tensorciq_core::tensor::{canonical_triples, num_canonical, CanonicalTriple, FactorMatrix, ObservationSet};

/// A malformed input file.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: line {line}, byte offset {offset}: {message}")]
pub struct ParseError {
    pub path: String,
    /// 1-based line number.
    pub line: usize,
    /// Byte offset of the offending token (or of end of input).
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

/// Writes `contents` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Line-oriented reader tracking line numbers and byte offsets.
struct Lines<'a> {
    path: &'a Path,
    text: &'a str,
    pos: usize,
    line: usize,
}

/// A whitespace-separated token and its absolute byte offset.
type Token<'a> = (&'a str, usize);

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self { path, text, pos: 0, line: 0 }
    }

    fn error(&self, line: usize, offset: usize, message: impl Into<String>) -> ParseError {
        ParseError { path: self.path.display().to_string(), line, offset, message: message.into() }
    }

    fn eof_error(&self, message: impl Into<String>) -> ParseError {
        self.error(self.line + 1, self.text.len(), message)
    }

    /// Next raw line with its start offset, or `None` at end of input.
    fn next_raw(&mut self) -> Option<(&'a str, usize)> {
        if self.pos >= self.text.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let end = rest.find('\n').map_or(rest.len(), |n| n + 1);
        self.pos += end;
        self.line += 1;
        Some((rest[..end].trim_end_matches(['\n', '\r']), start))
    }

    /// Next line that is neither blank nor a comment, split into tokens.
    fn next_data(&mut self) -> Option<(usize, Vec<Token<'a>>)> {
        while let Some((line, start)) = self.next_raw() {
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let tokens = line
                .split_ascii_whitespace()
                .map(|tok| (tok, start + (tok.as_ptr() as usize - line.as_ptr() as usize)))
                .collect();
            return Some((self.line, tokens));
        }
        None
    }

    /// Parses the header line `# <magic> v1 key=value …` with exactly `keys`.
    fn header(&mut self, magic: &str, keys: &[&str]) -> Result<Vec<Token<'a>>, ParseError> {
        let Some((line, start)) = self.next_raw() else {
            return Err(self.eof_error(format!("empty file, expected `# {magic} v1` header")));
        };
        let mut tokens = line.split_ascii_whitespace();
        if tokens.next() != Some("#") || tokens.next() != Some(magic) || tokens.next() != Some("v1") {
            return Err(self.error(1, start, format!("expected header `# {magic} v1 …`")));
        }
        let mut values = Vec::with_capacity(keys.len());
        for &key in keys {
            let Some(tok) = tokens.next() else {
                return Err(self.error(1, start + line.len(), format!("header is missing `{key}=`")));
            };
            let offset = start + (tok.as_ptr() as usize - line.as_ptr() as usize);
            match tok.split_once('=') {
                Some((k, v)) if k == key => values.push((v, offset + k.len() + 1)),
                _ => return Err(self.error(1, offset, format!("expected `{key}=<value>`, found `{tok}`"))),
            }
        }
        if let Some(tok) = tokens.next() {
            let offset = start + (tok.as_ptr() as usize - line.as_ptr() as usize);
            return Err(self.error(1, offset, format!("unexpected header field `{tok}`")));
        }
        Ok(values)
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, (tok, offset): Token<'_>, what: &str) -> Result<T, ParseError> {
        tok.parse().map_err(|_| self.error(line, offset, format!("invalid {what} `{tok}`")))
    }

    fn float(&self, line: usize, tok: Token<'_>, what: &str) -> Result<f64, ParseError> {
        let v: f64 = self.parse(line, tok, what)?;
        if !v.is_finite() {
            return Err(self.error(line, tok.1, format!("{what} must be finite")));
        }
        Ok(v)
    }

    /// Reads a 1-based index in `1..=d` and returns it 0-based.
    fn index(&self, line: usize, tok: Token<'_>, d: usize) -> Result<usize, ParseError> {
        let i: usize = self.parse(line, tok, "index")?;
        if i == 0 || i > d {
            return Err(self.error(line, tok.1, format!("index {i} outside 1..={d}")));
        }
        Ok(i - 1)
    }

    fn expect_count(&self, line: usize, tokens: &[Token<'_>], n: usize) -> Result<(), ParseError> {
        if tokens.len() != n {
            let offset = tokens.get(n).map_or_else(|| self.pos, |t| t.1);
            return Err(self.error(line, offset, format!("expected {n} fields, found {}", tokens.len())));
        }
        Ok(())
    }

    /// Requires the last line of a file to end with a newline; a missing one
    /// signals a truncated write.
    fn check_terminated(&self) -> Result<(), ParseError> {
        if !self.text.is_empty() && !self.text.ends_with('\n') {
            return Err(self.eof_error("file does not end with a newline (truncated?)"));
        }
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn format_observations(obs: &ObservationSet) -> String {
    let mut out = format!("# tensorciq-obs v1 d={} p={}\n", obs.d(), fmt_f64(obs.p()));
    for &(t, v) in obs.entries() {
        let _ = writeln!(out, "{} {} {} {}", t.i() + 1, t.j() + 1, t.k() + 1, fmt_f64(v));
    }
    out
}

pub fn parse_observations(path: &Path, text: &str) -> Result<ObservationSet, ParseError> {
    let mut lines = Lines::new(path, text);
    let header = lines.header("tensorciq-obs", &["d", "p"])?;
    let d: usize = lines.parse(1, header[0], "dimension")?;
    let p = lines.float(1, header[1], "sampling rate")?;
    if d == 0 || !(p > 0.0 && p <= 1.0) {
        return Err(lines.error(1, header[0].1, "need d >= 1 and 0 < p <= 1"));
    }
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    while let Some((line, tokens)) = lines.next_data() {
        lines.expect_count(line, &tokens, 4)?;
        let a = lines.index(line, tokens[0], d)?;
        let b = lines.index(line, tokens[1], d)?;
        let c = lines.index(line, tokens[2], d)?;
        if !(a <= b && b <= c) {
            return Err(lines.error(line, tokens[0].1, "indices must satisfy i <= j <= k"));
        }
        let v = lines.float(line, tokens[3], "value")?;
        let t = CanonicalTriple::new(a, b, c);
        if !seen.insert(t) {
            return Err(lines.error(line, tokens[0].1, "duplicate observation"));
        }
        entries.push((t, v));
    }
    lines.check_terminated()?;
    ObservationSet::new(d, p, entries).map_err(|e| lines.eof_error(e.to_string()))
}

pub fn read_observations(path: &Path) -> Result<ObservationSet, IoError> {
    Ok(parse_observations(path, &read(path)?)?)
}

pub fn format_factors(u: &FactorMatrix) -> String {
    let mut out = format!("# tensorciq-factors v1 d={} r={}\n", u.d(), u.r());
    for l in 0..u.r() {
        for i in 0..u.d() {
            let _ = writeln!(out, "{}", fmt_f64(u.get(i, l)));
        }
    }
    out
}

pub fn parse_factors(path: &Path, text: &str) -> Result<FactorMatrix, ParseError> {
    let mut lines = Lines::new(path, text);
    let header = lines.header("tensorciq-factors", &["d", "r"])?;
    let d: usize = lines.parse(1, header[0], "dimension")?;
    let r: usize = lines.parse(1, header[1], "rank")?;
    if d == 0 || r == 0 || r > d {
        return Err(lines.error(1, header[0].1, "need 1 <= r <= d"));
    }
    let mut columns = vec![Vec::with_capacity(d); r];
    let mut n = 0;
    while let Some((line, tokens)) = lines.next_data() {
        lines.expect_count(line, &tokens, 1)?;
        if n == d * r {
            return Err(lines.error(line, tokens[0].1, format!("more than {} values", d * r)));
        }
        columns[n / d].push(lines.float(line, tokens[0], "value")?);
        n += 1;
    }
    if n < d * r {
        return Err(lines.eof_error(format!("expected {} values, found {n}", d * r)));
    }
    lines.check_terminated()?;
    FactorMatrix::from_columns(&columns).map_err(|e| lines.eof_error(e.to_string()))
}

pub fn read_factors(path: &Path) -> Result<FactorMatrix, IoError> {
    Ok(parse_factors(path, &read(path)?)?)
}

pub fn format_noise(spec: &NoiseSpec) -> String {
    let mut out = format!(
        "# tensorciq-noise v1 d={} sigma={} beta={}\n",
        spec.d,
        fmt_f64(spec.sigma),
        fmt_f64(spec.beta)
    );
    for (t, v) in canonical_triples(spec.d).zip(spec.variances()) {
        let _ = writeln!(out, "{} {} {} {}", t.i() + 1, t.j() + 1, t.k() + 1, fmt_f64(*v));
    }
    out
}

pub fn parse_noise(path: &Path, text: &str) -> Result<NoiseSpec, ParseError> {
    let mut lines = Lines::new(path, text);
    let header = lines.header("tensorciq-noise", &["d", "sigma", "beta"])?;
    let d: usize = lines.parse(1, header[0], "dimension")?;
    let sigma = lines.float(1, header[1], "sigma")?;
    let beta = lines.float(1, header[2], "beta")?;
    let mut expected = canonical_triples(d);
    let mut variances = Vec::with_capacity(num_canonical(d));
    while let Some((line, tokens)) = lines.next_data() {
        lines.expect_count(line, &tokens, 4)?;
        let a = lines.index(line, tokens[0], d)?;
        let b = lines.index(line, tokens[1], d)?;
        let c = lines.index(line, tokens[2], d)?;
        match expected.next() {
            Some(t) if t.indices() == [a, b, c] => {}
            _ => return Err(lines.error(line, tokens[0].1, "triples must list every canonical triple in order")),
        }
        variances.push(lines.float(line, tokens[3], "variance")?);
    }
    if variances.len() != num_canonical(d) {
        return Err(lines.eof_error(format!(
            "expected {} variances, found {}",
            num_canonical(d),
            variances.len()
        )));
    }
    lines.check_terminated()?;
    NoiseSpec::from_variances(d, sigma, beta, variances).map_err(|e| lines.eof_error(e.to_string()))
}

pub fn read_noise(path: &Path) -> Result<NoiseSpec, IoError> {
    Ok(parse_noise(path, &read(path)?)?)
}

/// Serializes `rows` as CSV with a header derived from the row type.
pub fn to_csv<T: serde::Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory CSV serialization");
    }
    w.into_inner().expect("in-memory CSV flush")
}
