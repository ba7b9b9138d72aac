//! Fixed-width plain-text serialization for games and learner checkpoints.
//!
//! Files are line oriented: a two-line header (format magic with schema
//! version, then the record kind), a sequence of keyed scalars and named
//! tables in a fixed order defined by the caller, and a terminating `end`
//! line. Integers occupy 20-character fields, floats 25-character fields in
//! scientific notation with 17 significant digits. Two consequences the rest
//! of the crate relies on: floats round-trip bit-exactly, and a file's byte
//! length depends only on its schema and table dimensions, never on the
//! magnitudes stored.

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "nashq-text";
const VALUES_PER_LINE: usize = 4;

pub struct TextWriter {
    buf: String,
}

impl TextWriter {
    pub fn new(kind: &str) -> Self {
        debug_assert!(kind.split_whitespace().count() == 1);
        let mut buf = String::new();
        buf.push_str(MAGIC);
        buf.push(' ');
        buf.push_str(&SCHEMA_VERSION.to_string());
        buf.push('\n');
        buf.push_str("kind ");
        buf.push_str(kind);
        buf.push('\n');
        TextWriter { buf }
    }

    pub fn int(&mut self, key: &str, value: u64) {
        self.buf.push_str(&format!("{key} {value:>20}\n"));
    }

    pub fn float(&mut self, key: &str, value: f64) {
        self.buf.push_str(&format!("{key} {value:>25.16e}\n"));
    }

    /// Single-token string value (mode names and the like).
    pub fn word(&mut self, key: &str, value: &str) {
        debug_assert!(value.split_whitespace().count() == 1);
        self.buf.push_str(&format!("{key} {value}\n"));
    }

    pub fn ints(&mut self, name: &str, data: &[u64]) {
        self.buf.push_str(&format!("table {name} {}\n", data.len()));
        for chunk in data.chunks(VALUES_PER_LINE) {
            for v in chunk {
                self.buf.push_str(&format!(" {v:>20}"));
            }
            self.buf.push('\n');
        }
    }

    pub fn floats(&mut self, name: &str, data: &[f64]) {
        self.buf.push_str(&format!("table {name} {}\n", data.len()));
        for chunk in data.chunks(VALUES_PER_LINE) {
            for v in chunk {
                self.buf.push_str(&format!(" {v:>25.16e}"));
            }
            self.buf.push('\n');
        }
    }

    pub fn finish(mut self) -> String {
        self.buf.push_str("end\n");
        self.buf
    }
}

#[derive(Debug)]
pub struct TextReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> TextReader<'a> {
    pub fn open(text: &'a str, kind: &str) -> Result<Self> {
        let mut reader = TextReader { lines: text.lines(), line_no: 0 };
        let header = reader.next_tokens()?;
        if header.len() != 2 || header[0] != MAGIC {
            return Err(reader.fail("expected format header"));
        }
        if header[1] != SCHEMA_VERSION.to_string() {
            return Err(reader.fail(format!(
                "unsupported schema version {} (this build reads {SCHEMA_VERSION})",
                header[1]
            )));
        }
        let kind_line = reader.next_tokens()?;
        if kind_line.len() != 2 || kind_line[0] != "kind" {
            return Err(reader.fail("expected kind line"));
        }
        if kind_line[1] != kind {
            return Err(reader.fail(format!("expected kind {kind}, found {}", kind_line[1])));
        }
        Ok(reader)
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.line_no, message: message.into() }
    }

    fn next_tokens(&mut self) -> Result<Vec<&'a str>> {
        let line = self
            .lines
            .next()
            .ok_or(Error::Parse { line: self.line_no, message: "unexpected end of file".into() })?;
        self.line_no += 1;
        Ok(line.split_whitespace().collect())
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let tokens = self.next_tokens()?;
        if tokens.len() != 2 {
            return Err(self.fail(format!("expected `{key} <value>`")));
        }
        if tokens[0] != key {
            return Err(self.fail(format!("expected key {key}, found {}", tokens[0])));
        }
        Ok(tokens[1])
    }

    pub fn int(&mut self, key: &str) -> Result<u64> {
        let raw = self.keyed(key)?;
        raw.parse().map_err(|_| self.fail(format!("{key}: invalid integer `{raw}`")))
    }

    pub fn int_usize(&mut self, key: &str) -> Result<usize> {
        let raw = self.keyed(key)?;
        raw.parse().map_err(|_| self.fail(format!("{key}: invalid integer `{raw}`")))
    }

    pub fn float(&mut self, key: &str) -> Result<f64> {
        let raw = self.keyed(key)?;
        raw.parse().map_err(|_| self.fail(format!("{key}: invalid float `{raw}`")))
    }

    pub fn word(&mut self, key: &str) -> Result<String> {
        Ok(self.keyed(key)?.to_string())
    }

    fn table_header(&mut self, name: &str, expected_len: usize) -> Result<()> {
        let tokens = self.next_tokens()?;
        if tokens.len() != 3 || tokens[0] != "table" {
            return Err(self.fail(format!("expected `table {name} <len>`")));
        }
        if tokens[1] != name {
            return Err(self.fail(format!("expected table {name}, found {}", tokens[1])));
        }
        let len: usize = tokens[2]
            .parse()
            .map_err(|_| self.fail(format!("table {name}: invalid length `{}`", tokens[2])))?;
        if len != expected_len {
            return Err(self.fail(format!(
                "table {name}: expected {expected_len} entries, file declares {len}"
            )));
        }
        Ok(())
    }

    pub fn ints(&mut self, name: &str, expected_len: usize) -> Result<Vec<u64>> {
        self.table_header(name, expected_len)?;
        let mut out = Vec::with_capacity(expected_len);
        while out.len() < expected_len {
            let want = (expected_len - out.len()).min(VALUES_PER_LINE);
            let tokens = self.next_tokens()?;
            if tokens.len() != want {
                return Err(self.fail(format!(
                    "table {name}: expected {want} values on this line, found {}",
                    tokens.len()
                )));
            }
            for raw in tokens {
                out.push(
                    raw.parse()
                        .map_err(|_| self.fail(format!("table {name}: invalid integer `{raw}`")))?,
                );
            }
        }
        Ok(out)
    }

    pub fn floats(&mut self, name: &str, expected_len: usize) -> Result<Vec<f64>> {
        self.table_header(name, expected_len)?;
        let mut out = Vec::with_capacity(expected_len);
        while out.len() < expected_len {
            let want = (expected_len - out.len()).min(VALUES_PER_LINE);
            let tokens = self.next_tokens()?;
            if tokens.len() != want {
                return Err(self.fail(format!(
                    "table {name}: expected {want} values on this line, found {}",
                    tokens.len()
                )));
            }
            for raw in tokens {
                out.push(
                    raw.parse()
                        .map_err(|_| self.fail(format!("table {name}: invalid float `{raw}`")))?,
                );
            }
        }
        Ok(out)
    }

    /// Consumes the `end` terminator; trailing content is an error.
    pub fn finish(mut self) -> Result<()> {
        let tokens = self.next_tokens()?;
        if tokens != ["end"] {
            return Err(self.fail("expected end terminator"));
        }
        if let Some(extra) = self.lines.next() {
            if !extra.trim().is_empty() {
                return Err(Error::Parse {
                    line: self.line_no + 1,
                    message: "content after end terminator".into(),
                });
            }
        }
        Ok(())
    }
}
