//! Measurement log dump/replay.
//!
//! Line-delimited text records, one measurement per line, decimal
//! encoding, fields separated by single spaces:
//!
//! ```text
//! imu <tick> <gx> <gy> <gz> <ax> <ay> <az>
//! pix <tick> <cam> <feat|land|targ> <id> <u> <v>
//! ```
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so a
//! dump/replay cycle reproduces the stream bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use super::ImuSample;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelKind {
    Feature,
    Landmark,
    Target,
}

impl PixelKind {
    fn tag(&self) -> &'static str {
        match self {
            PixelKind::Feature => "feat",
            PixelKind::Landmark => "land",
            PixelKind::Target => "targ",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Imu(ImuSample),
    Pixel { tick: u64, cam: usize, kind: PixelKind, id: usize, u: f64, v: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementLog {
    pub records: Vec<LogRecord>,
}

impl MeasurementLog {
    pub fn push_imu(&mut self, s: ImuSample) {
        self.records.push(LogRecord::Imu(s));
    }

    pub fn push_pixel(&mut self, tick: u64, cam: usize, kind: PixelKind, id: usize, u: f64, v: f64) {
        self.records.push(LogRecord::Pixel { tick, cam, kind, id, u, v });
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            match r {
                LogRecord::Imu(s) => {
                    writeln!(
                        out,
                        "imu {} {} {} {} {} {} {}",
                        s.tick, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
                    )
                    .unwrap();
                }
                LogRecord::Pixel { tick, cam, kind, id, u, v } => {
                    writeln!(out, "pix {tick} {cam} {} {id} {u} {v}", kind.tag()).unwrap();
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, LogError> {
        let mut records = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let err = |reason: &str| LogError::Parse { line: ln + 1, reason: reason.into() };
            let f = |s: &str| -> Result<f64, LogError> {
                s.parse().map_err(|_| err("bad float"))
            };
            match parts.first().copied() {
                Some("imu") if parts.len() == 8 => {
                    let tick = parts[1].parse().map_err(|_| err("bad tick"))?;
                    records.push(LogRecord::Imu(ImuSample {
                        tick,
                        gyro: Vector3::new(f(parts[2])?, f(parts[3])?, f(parts[4])?),
                        accel: Vector3::new(f(parts[5])?, f(parts[6])?, f(parts[7])?),
                    }));
                }
                Some("pix") if parts.len() == 7 => {
                    let tick = parts[1].parse().map_err(|_| err("bad tick"))?;
                    let cam = parts[2].parse().map_err(|_| err("bad cam"))?;
                    let kind = match parts[3] {
                        "feat" => PixelKind::Feature,
                        "land" => PixelKind::Landmark,
                        "targ" => PixelKind::Target,
                        _ => return Err(err("bad pixel kind")),
                    };
                    let id = parts[4].parse().map_err(|_| err("bad id"))?;
                    records.push(LogRecord::Pixel {
                        tick,
                        cam,
                        kind,
                        id,
                        u: f(parts[5])?,
                        v: f(parts[6])?,
                    });
                }
                _ => return Err(err("unrecognized record")),
            }
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut log = MeasurementLog::default();
        log.push_imu(ImuSample {
            tick: 3,
            gyro: Vector3::new(0.1, -2.5e-7, 3.0),
            accel: Vector3::new(9.81, 1.0 / 3.0, -0.0001),
        });
        log.push_pixel(10, 1, PixelKind::Landmark, 42, 0.123456789012345, -0.5);
        log.push_pixel(10, 0, PixelKind::Target, 0, f64::MIN_POSITIVE, 1e300);
        let text = log.to_text();
        let back = MeasurementLog::from_text(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn parse_error_reports_line() {
        let e = MeasurementLog::from_text("imu 0 1 2 3 4 5 6\nbogus").unwrap_err();
        match e {
            LogError::Parse { line, .. } => assert_eq!(line, 2),
            _ => panic!("wrong error"),
        }
    }
}
