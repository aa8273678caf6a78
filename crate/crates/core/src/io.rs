//! JSON Lines stream files.
//!
//! ```text
//! {"schema":1,"dim":2,"delta":3.0}
//! {"frame":1,"t":0.0,"det":[{"x":10.0,"y":4.5,"f":[0.6,0.8],"id":7}],"in":[1],"out":[0]}
//! ```
//!
//! Floats are written in their shortest round-trip form, so reading a file
//! back yields a bit-identical stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Detection, DetectionStream, FrameRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: u32,
    dim: usize,
    delta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    x: f64,
    y: f64,
    f: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    frame: usize,
    t: f64,
    det: Vec<DetectionRecord>,
    #[serde(rename = "in")]
    inflow: Vec<u8>,
    #[serde(rename = "out")]
    outflow: Vec<u8>,
}

fn to_bits(flags: &[bool]) -> Vec<u8> {
    flags.iter().map(|&b| u8::from(b)).collect()
}

fn from_bits(bits: &[u8], line: usize) -> Result<Vec<bool>> {
    bits.iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format {
                line,
                message: format!("flag {other} is not 0 or 1"),
            }),
        })
        .collect()
}

pub fn write_stream_to<W: Write>(stream: &DetectionStream, mut out: W) -> std::io::Result<()> {
    let header = Header {
        schema: SCHEMA_VERSION,
        dim: stream.feature_dim(),
        delta: stream.delta(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for frame in stream.frames() {
        let line = FrameLine {
            frame: frame.frame_index(),
            t: frame.timestamp(),
            det: frame
                .detections()
                .iter()
                .map(|d| DetectionRecord {
                    x: d.coordinate().0,
                    y: d.coordinate().1,
                    f: d.feature().to_vec(),
                    id: d.gt_id(),
                })
                .collect(),
            inflow: to_bits(frame.inflow()),
            outflow: to_bits(frame.outflow()),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_stream(stream: &DetectionStream, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_stream_to(stream, BufWriter::new(file)).map_err(io_err)
}

pub fn read_stream_from<R: BufRead>(reader: R) -> Result<DetectionStream> {
    let mut header: Option<Header> = None;
    let mut frames = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let lineno = k + 1;
        let line = line.map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| Error::Format {
            line: lineno,
            message: e.to_string(),
        };
        let Some(h) = &header else {
            let h: Header = serde_json::from_str(&line).map_err(malformed)?;
            if h.schema != SCHEMA_VERSION {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("unknown schema version {}", h.schema),
                });
            }
            header = Some(h);
            continue;
        };
        let rec: FrameLine = serde_json::from_str(&line).map_err(malformed)?;
        let mut dets = Vec::with_capacity(rec.det.len());
        for d in rec.det {
            if d.f.len() != h.dim {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("feature length {} does not match dim {}", d.f.len(), h.dim),
                });
            }
            let det = Detection::new(d.x, d.y, d.f, d.id).map_err(|e| Error::Format {
                line: lineno,
                message: e.to_string(),
            })?;
            dets.push(det);
        }
        let frame = FrameRecord::new(
            rec.frame,
            rec.t,
            dets,
            from_bits(&rec.inflow, lineno)?,
            from_bits(&rec.outflow, lineno)?,
        )
        .map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        frames.push(frame);
    }
    let header = header.ok_or(Error::Format {
        line: 1,
        message: "missing header".into(),
    })?;
    DetectionStream::new(frames, header.delta, header.dim)
}

pub fn parse_stream(path: &Path) -> Result<DetectionStream> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_stream_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<DetectionStream> {
        read_stream_from(text.as_bytes())
    }

    #[test]
    fn minimal_file() {
        let s = read(
            "{\"schema\":1,\"dim\":2,\"delta\":3.0}\n\
             {\"frame\":1,\"t\":0.0,\"det\":[{\"x\":1.0,\"y\":2.0,\"f\":[3.0,4.0]}],\"in\":[1],\"out\":[1]}\n",
        )
        .unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.frames()[0].detections()[0].feature(), &[0.6, 0.8]);
    }

    #[test]
    fn wrong_feature_length_names_line() {
        let err = read(
            "{\"schema\":1,\"dim\":3,\"delta\":3.0}\n\
             {\"frame\":1,\"t\":0.0,\"det\":[{\"x\":1.0,\"y\":2.0,\"f\":[3.0,4.0]}],\"in\":[1],\"out\":[1]}\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_schema() {
        let err = read("{\"schema\":2,\"dim\":3,\"delta\":3.0}\n").unwrap_err();
        assert!(err.to_string().contains("unknown schema version 2"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = read("{\"schema\":1,\"dim\":2,\"delta\":1.0}\n{\"frame\":1,").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }

    #[test]
    fn bad_flags() {
        let err = read(
            "{\"schema\":1,\"dim\":2,\"delta\":3.0}\n\
             {\"frame\":1,\"t\":0.0,\"det\":[{\"x\":1.0,\"y\":2.0,\"f\":[3.0,4.0]}],\"in\":[2],\"out\":[1]}\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("not 0 or 1"));
    }

    #[test]
    fn empty_stream_is_header_only() {
        let s = DetectionStream::new(Vec::new(), 3.0, 8).unwrap();
        let mut buf = Vec::new();
        write_stream_to(&s, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"schema\":1,\"dim\":8,\"delta\":3.0}\n"
        );
        assert_eq!(read_stream_from(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn missing_header() {
        assert!(read("").is_err());
    }
}
