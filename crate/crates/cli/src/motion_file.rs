//! Motion file: a JSON header followed by packed little-endian frames.
//!
//! ```text
//! "HRMO"                 4 bytes
//! header length          u32 LE
//! header                 UTF-8 JSON, compact
//! frames                 T records of
//!     pose               61 x f64   theta (48, rad), beta (10), root translation (3, mm)
//!     object centre      3 x f64    mm, when `has_object_center`
//!     contact            u8         0 or 1, when `has_contact`
//!     state              u8         state index, when `has_state`
//! ```
//!
//! Headers are written with a fixed key order and shortest round-trip
//! floats, so loading and saving a file reproduces it byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use handrift_core::motion::{MotionSequence, FRAME_DIM};
use handrift_core::physics::MotionState;
use handrift_core::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"HRMO";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "hrm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub theta: String,
    pub translation: String,
    pub object_center: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            theta: "rad".into(),
            translation: "mm".into(),
            object_center: "mm".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionHeader {
    pub format_version: u32,
    pub frames: usize,
    pub dims: usize,
    pub frame_rate: f64,
    pub units: Units,
    pub normalization_id: Option<String>,
    pub has_object_center: bool,
    pub has_contact: bool,
    pub has_state: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionFile {
    pub frame_rate: f64,
    /// Normalization the motion was produced under, if it came out of a model.
    pub normalization_id: Option<String>,
    pub motion: MotionSequence,
    pub object_center: Option<Vec<[f64; 3]>>,
    pub contact: Option<Vec<bool>>,
    pub states: Option<Vec<MotionState>>,
}

fn format_err(msg: impl Into<String>) -> CoreError {
    CoreError::Format(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

impl MotionFile {
    pub fn new(motion: MotionSequence) -> Self {
        MotionFile {
            frame_rate: 30.0,
            normalization_id: None,
            motion,
            object_center: None,
            contact: None,
            states: None,
        }
    }

    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }

    pub fn header(&self) -> MotionHeader {
        MotionHeader {
            format_version: FORMAT_VERSION,
            frames: self.motion.len(),
            dims: FRAME_DIM,
            frame_rate: self.frame_rate,
            units: Units::default(),
            normalization_id: self.normalization_id.clone(),
            has_object_center: self.object_center.is_some(),
            has_contact: self.contact.is_some(),
            has_state: self.states.is_some(),
        }
    }

    fn check_tracks(&self) -> Result<()> {
        let t = self.motion.len();
        let lens = [
            self.object_center.as_ref().map(Vec::len),
            self.contact.as_ref().map(Vec::len),
            self.states.as_ref().map(Vec::len),
        ];
        if lens.iter().flatten().any(|&n| n != t) {
            return Err(format_err(format!("per-frame tracks must have {t} entries")));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(format_err("frame rate must be positive"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_tracks()?;
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(8 + header.len() + self.motion.len() * (FRAME_DIM * 8 + 26));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in 0..self.motion.len() {
            for v in self.motion.frame(t) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(c) = &self.object_center {
                for v in c[t] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            if let Some(c) = &self.contact {
                out.push(c[t] as u8);
            }
            if let Some(s) = &self.states {
                out.push(s[t].index() as u8);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(format_err("not a motion file (bad magic)"));
        }
        let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let header: MotionHeader =
            serde_json::from_slice(r.take(len)?).map_err(|e| format_err(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(format_err(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        if header.dims != FRAME_DIM {
            return Err(format_err(format!("{} values per frame, expected {FRAME_DIM}", header.dims)));
        }
        if header.units != Units::default() {
            return Err(format_err(format!("unsupported units {:?}", header.units)));
        }
        let t = header.frames;
        let mut data = Vec::with_capacity(t * FRAME_DIM);
        let mut centers = header.has_object_center.then(|| Vec::with_capacity(t));
        let mut contact = header.has_contact.then(|| Vec::with_capacity(t));
        let mut states = header.has_state.then(|| Vec::with_capacity(t));
        for frame in 0..t {
            for _ in 0..FRAME_DIM {
                data.push(r.f64()?);
            }
            if let Some(c) = centers.as_mut() {
                c.push([r.f64()?, r.f64()?, r.f64()?]);
            }
            if let Some(c) = contact.as_mut() {
                c.push(match r.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(format_err(format!("frame {frame}: contact byte {b}"))),
                });
            }
            if let Some(s) = states.as_mut() {
                let b = r.u8()?;
                s.push(MotionState::from_index(b as usize).map_err(|_| format_err(format!("frame {frame}: state {b}")))?);
            }
        }
        if r.pos != buf.len() {
            return Err(format_err(format!(
                "header declares {t} frames but {} bytes follow them",
                buf.len() - r.pos
            )));
        }
        let file = MotionFile {
            frame_rate: header.frame_rate,
            normalization_id: header.normalization_id,
            motion: MotionSequence::new(t, data)?,
            object_center: centers,
            contact,
            states,
        };
        file.check_tracks()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path)?;
        Self::from_bytes(&buf).map_err(|e| match e {
            CoreError::Format(m) => format_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
