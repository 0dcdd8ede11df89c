//! Exit-code classification and file helpers.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::anyhow;

/// A failed command: bad input (exit 1) or I/O / external tool trouble (exit 2).
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Io(e) => e,
        }
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn invalid(msg: impl Display) -> Failure {
    Failure::Invalid(anyhow!("{msg}"))
}

pub fn io_failure(msg: impl Display) -> Failure {
    Failure::Io(anyhow!("{msg}"))
}

pub trait OrFail<T> {
    fn or_invalid(self, context: impl Display) -> Result<T, Failure>;
    fn or_io(self, context: impl Display) -> Result<T, Failure>;
}

impl<T, E: Display> OrFail<T> for Result<T, E> {
    fn or_invalid(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Invalid(anyhow!("{context}: {e}")))
    }

    fn or_io(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::Io(anyhow!("{context}: {e}")))
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut s).or_io("reading stdin")?;
        return Ok(s);
    }
    std::fs::read_to_string(path).or_io(format!("reading {}", path.display()))
}

/// Write to `path`, or stdout for `None` / `-`.
pub fn write_text(path: Option<&Path>, text: &str) -> CmdResult {
    match path {
        Some(p) if p != Path::new("-") => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).or_io(format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, text).or_io(format!("writing {}", p.display()))
        }
        _ => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).or_io("writing stdout")?;
            out.flush().or_io("writing stdout")
        }
    }
}

pub fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// `WIDTHxHEIGHT` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSize {
    pub width: u32,
    pub height: u32,
}

impl FromStr for FrameSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT, e.g. 1920x1080")?;
        let width: u32 = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
        let height: u32 = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
        if width == 0 || height == 0 {
            return Err("frame size must be positive".into());
        }
        Ok(FrameSize { width, height })
    }
}

/// Frame range `FIRST..LAST`, both ends included (`FIRST..=LAST` also accepted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpan {
    pub first: u64,
    pub last: u64,
}

impl FromStr for FrameSpan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once("..").ok_or("expected FIRST..LAST")?;
        let b = b.strip_prefix('=').unwrap_or(b);
        let first: u64 = a.trim().parse().map_err(|_| format!("bad frame {a:?}"))?;
        let last: u64 = b.trim().parse().map_err(|_| format!("bad frame {b:?}"))?;
        if last < first {
            return Err(format!("empty range {s}"));
        }
        Ok(FrameSpan { first, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sizes_and_spans() {
        assert_eq!("1920x1080".parse::<FrameSize>().unwrap(), FrameSize { width: 1920, height: 1080 });
        assert!("1920".parse::<FrameSize>().is_err());
        assert!("0x5".parse::<FrameSize>().is_err());
        assert_eq!("3..=7".parse::<FrameSpan>().unwrap(), FrameSpan { first: 3, last: 7 });
        assert_eq!("3..7".parse::<FrameSpan>().unwrap(), FrameSpan { first: 3, last: 7 });
        assert!("7..3".parse::<FrameSpan>().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(invalid("x").code(), 1);
        assert_eq!(io_failure("x").code(), 2);
    }
}
