use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn data_err(msg: impl Display) -> CliError {
    CliError::Data(msg.to_string())
}

/// `"-"` reads standard input.
pub fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    Ok(s)
}

/// Non-blank lines with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| data_err(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Location of a record for error messages: `file:line` plus the id if known.
pub fn locate(path: &Path, line: usize, id: Option<&str>) -> String {
    match id {
        Some(id) => format!("{}:{line} (id {id:?})", path.display()),
        None => format!("{}:{line}", path.display()),
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let value: Value = serde_json::from_str(&line)
                .map_err(|e| data_err(format!("{}: {e}", locate(path, n, None))))?;
            let id = value.get("id").and_then(Value::as_str).map(str::to_owned);
            serde_json::from_value(value)
                .map(|t| (n, t))
                .map_err(|e| data_err(format!("{}: {e}", locate(path, n, id.as_deref()))))
        })
        .collect()
}

/// Every JSON value in a file, whether one document or a JSONL stream.
pub fn read_json_stream(path: &Path) -> Result<Vec<Value>> {
    let src = read_to_string(path)?;
    serde_json::Deserializer::from_str(&src)
        .into_iter::<Value>()
        .enumerate()
        .map(|(i, v)| {
            v.map_err(|e| data_err(format!("{}: document {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub struct Output {
    inner: Box<dyn Write>,
    name: String,
}

impl Output {
    /// `"-"` writes standard output.
    pub fn create(path: &Path) -> Result<Self> {
        let inner: Box<dyn Write> = if path.as_os_str() == "-" {
            Box::new(BufWriter::new(io::stdout()))
        } else {
            Box::new(BufWriter::new(
                File::create(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?,
            ))
        };
        Ok(Self {
            inner,
            name: path.display().to_string(),
        })
    }

    pub fn line<T: Serialize + ?Sized>(&mut self, value: &T) -> Result<()> {
        let s = serde_json::to_string(value).map_err(data_err)?;
        writeln!(self.inner, "{s}").map_err(|e| data_err(format!("{}: {e}", self.name)))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner
            .flush()
            .map_err(|e| data_err(format!("{}: {e}", self.name)))
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = Output::create(path)?;
    out.line(value)?;
    out.finish()
}
