//! Line-delimited pose logs.
//!
//! Each record pairs a head pose with a device pose at one timestamp. Two
//! encodings are accepted.
//!
//! CSV, with a header row:
//!
//! ```text
//! timestamp,head_tx,head_ty,head_tz,head_qw,head_qx,head_qy,head_qz,
//! device_tx,device_ty,device_tz,device_qw,device_qx,device_qy,device_qz[,
//! floor_nx,floor_ny,floor_nz,floor_height]
//! ```
//!
//! JSON lines, one object per line:
//!
//! ```text
//! {"timestamp":0.0,"head":{"translation":[0,0,1.1],"rotation":[1,0,0,0]},
//!  "device":{"translation":[...],"rotation":[w,x,y,z]},
//!  "floor":{"normal":[0,0,1],"height":1.22}}
//! ```
//!
//! Rotations are unit quaternions in `w, x, y, z` order. The optional floor
//! normal is given in the device's map frame, the height in metres above
//! the floor. Timestamps must not decrease.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Rotation, Vec3};
use crate::session::{
    relative_transition, FloorObservation, PosePairSample, RobotKinematics, SessionError,
};
use crate::solver::CalibrationSession;

/// Quaternions further than this from unit length are rejected.
const QUATERNION_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PoseLogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {timestamp} is earlier than the previous record")]
    NonMonotonic { line: u64, timestamp: f64 },
    #[error("pose log contains no records")]
    Empty,
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseLogFormat {
    Csv,
    JsonLines,
}

impl PoseLogFormat {
    /// `.jsonl`/`.json`/`.ndjson` are JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => PoseLogFormat::JsonLines,
            _ => PoseLogFormat::Csv,
        }
    }
}

/// Floor normal (map frame) and device height above the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorSample {
    pub normal: Vec3,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLogRecord {
    pub sample: PosePairSample,
    pub floor: Option<FloorSample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    timestamp: f64,
    head_tx: f64,
    head_ty: f64,
    head_tz: f64,
    head_qw: f64,
    head_qx: f64,
    head_qy: f64,
    head_qz: f64,
    device_tx: f64,
    device_ty: f64,
    device_tz: f64,
    device_qw: f64,
    device_qx: f64,
    device_qy: f64,
    device_qz: f64,
    #[serde(default)]
    floor_nx: Option<f64>,
    #[serde(default)]
    floor_ny: Option<f64>,
    #[serde(default)]
    floor_nz: Option<f64>,
    #[serde(default)]
    floor_height: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonPose {
    translation: [f64; 3],
    rotation: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonFloor {
    normal: [f64; 3],
    height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRow {
    timestamp: f64,
    head: JsonPose,
    device: JsonPose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    floor: Option<JsonFloor>,
}

fn parse_error(line: u64, message: impl Into<String>) -> PoseLogError {
    PoseLogError::Parse {
        line,
        message: message.into(),
    }
}

fn pose_from_parts(t: [f64; 3], q: [f64; 4], what: &str, line: u64) -> Result<Pose, PoseLogError> {
    if t.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return Err(parse_error(line, format!("{what} pose has non-finite values")));
    }
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
        return Err(parse_error(
            line,
            format!("{what} quaternion is not unit length (|q| = {norm})"),
        ));
    }
    let rotation = Rotation::from_quaternion(q[0], q[1], q[2], q[3])
        .map_err(|e| parse_error(line, format!("{what} rotation: {e}")))?;
    Ok(Pose::new(rotation, Vec3::from(t)))
}

fn floor_from_parts(normal: [f64; 3], height: f64, line: u64) -> Result<FloorSample, PoseLogError> {
    let n = Vec3::from(normal);
    let norm = n.norm();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(parse_error(line, "floor normal has zero length"));
    }
    if !(height.is_finite() && height > 0.0) {
        return Err(parse_error(line, format!("floor height must be positive, got {height}")));
    }
    Ok(FloorSample {
        normal: n / norm,
        height,
    })
}

impl CsvRow {
    fn into_record(self, line: u64) -> Result<PoseLogRecord, PoseLogError> {
        let head = pose_from_parts(
            [self.head_tx, self.head_ty, self.head_tz],
            [self.head_qw, self.head_qx, self.head_qy, self.head_qz],
            "head",
            line,
        )?;
        let device = pose_from_parts(
            [self.device_tx, self.device_ty, self.device_tz],
            [self.device_qw, self.device_qx, self.device_qy, self.device_qz],
            "device",
            line,
        )?;
        let floor = match (self.floor_nx, self.floor_ny, self.floor_nz, self.floor_height) {
            (None, None, None, None) => None,
            (Some(x), Some(y), Some(z), Some(h)) => Some(floor_from_parts([x, y, z], h, line)?),
            _ => return Err(parse_error(line, "floor columns are partially filled")),
        };
        Ok(PoseLogRecord {
            sample: PosePairSample {
                timestamp: self.timestamp,
                head_pose: head,
                device_pose: device,
            },
            floor,
        })
    }

    fn from_record(r: &PoseLogRecord) -> Self {
        let s = &r.sample;
        let (ht, hq) = (s.head_pose.translation, s.head_pose.rotation.to_quaternion());
        let (dt, dq) = (s.device_pose.translation, s.device_pose.rotation.to_quaternion());
        CsvRow {
            timestamp: s.timestamp,
            head_tx: ht.x,
            head_ty: ht.y,
            head_tz: ht.z,
            head_qw: hq[0],
            head_qx: hq[1],
            head_qy: hq[2],
            head_qz: hq[3],
            device_tx: dt.x,
            device_ty: dt.y,
            device_tz: dt.z,
            device_qw: dq[0],
            device_qx: dq[1],
            device_qy: dq[2],
            device_qz: dq[3],
            floor_nx: r.floor.map(|f| f.normal.x),
            floor_ny: r.floor.map(|f| f.normal.y),
            floor_nz: r.floor.map(|f| f.normal.z),
            floor_height: r.floor.map(|f| f.height),
        }
    }
}

impl JsonRow {
    fn into_record(self, line: u64) -> Result<PoseLogRecord, PoseLogError> {
        let head = pose_from_parts(self.head.translation, self.head.rotation, "head", line)?;
        let device = pose_from_parts(self.device.translation, self.device.rotation, "device", line)?;
        let floor = self
            .floor
            .map(|f| floor_from_parts(f.normal, f.height, line))
            .transpose()?;
        Ok(PoseLogRecord {
            sample: PosePairSample {
                timestamp: self.timestamp,
                head_pose: head,
                device_pose: device,
            },
            floor,
        })
    }

    fn from_record(r: &PoseLogRecord) -> Self {
        let pose = |p: &Pose| JsonPose {
            translation: p.translation.into(),
            rotation: p.rotation.to_quaternion(),
        };
        JsonRow {
            timestamp: r.sample.timestamp,
            head: pose(&r.sample.head_pose),
            device: pose(&r.sample.device_pose),
            floor: r.floor.map(|f| JsonFloor {
                normal: f.normal.into(),
                height: f.height,
            }),
        }
    }
}

fn check_order(records: &[(u64, PoseLogRecord)]) -> Result<(), PoseLogError> {
    for w in records.windows(2) {
        if w[1].1.sample.timestamp < w[0].1.sample.timestamp {
            return Err(PoseLogError::NonMonotonic {
                line: w[1].0,
                timestamp: w[1].1.sample.timestamp,
            });
        }
    }
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<PoseLogRecord>, PoseLogError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .clone();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let parsed: CsvRow = row
            .deserialize(Some(&headers))
            .map_err(|e| parse_error(line, e.to_string()))?;
        out.push((line, parsed.into_record(line)?));
    }
    check_order(&out)?;
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

pub fn read_json_lines<R: Read>(reader: R) -> Result<Vec<PoseLogRecord>, PoseLogError> {
    let mut out = Vec::new();
    for (i, text) in BufReader::new(reader).lines().enumerate() {
        let line = i as u64 + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: JsonRow =
            serde_json::from_str(&text).map_err(|e| parse_error(line, e.to_string()))?;
        out.push((line, parsed.into_record(line)?));
    }
    check_order(&out)?;
    Ok(out.into_iter().map(|(_, r)| r).collect())
}

pub fn read_pose_log<R: Read>(
    reader: R,
    format: PoseLogFormat,
) -> Result<Vec<PoseLogRecord>, PoseLogError> {
    match format {
        PoseLogFormat::Csv => read_csv(reader),
        PoseLogFormat::JsonLines => read_json_lines(reader),
    }
}

pub fn read_pose_log_file(path: &Path) -> Result<Vec<PoseLogRecord>, PoseLogError> {
    read_pose_log(File::open(path)?, PoseLogFormat::from_path(path))
}

pub fn write_csv<W: Write>(writer: W, records: &[PoseLogRecord]) -> Result<(), PoseLogError> {
    let with_floor = records.iter().any(|r| r.floor.is_some());
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let mut header = vec![
        "timestamp", "head_tx", "head_ty", "head_tz", "head_qw", "head_qx", "head_qy", "head_qz",
        "device_tx", "device_ty", "device_tz", "device_qw", "device_qx", "device_qy", "device_qz",
    ];
    if with_floor {
        header.extend(["floor_nx", "floor_ny", "floor_nz", "floor_height"]);
    }
    wtr.write_record(&header).map_err(csv_io)?;
    for r in records {
        let row = CsvRow::from_record(r);
        let mut fields = vec![
            row.timestamp, row.head_tx, row.head_ty, row.head_tz, row.head_qw, row.head_qx,
            row.head_qy, row.head_qz, row.device_tx, row.device_ty, row.device_tz, row.device_qw,
            row.device_qx, row.device_qy, row.device_qz,
        ]
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>();
        if with_floor {
            for v in [row.floor_nx, row.floor_ny, row.floor_nz, row.floor_height] {
                fields.push(v.map(|v| v.to_string()).unwrap_or_default());
            }
        }
        wtr.write_record(&fields).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> PoseLogError {
    PoseLogError::Io(std::io::Error::other(e))
}

pub fn write_json_lines<W: Write>(mut writer: W, records: &[PoseLogRecord]) -> Result<(), PoseLogError> {
    for r in records {
        let text = serde_json::to_string(&JsonRow::from_record(r)).map_err(std::io::Error::other)?;
        writeln!(writer, "{text}")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_pose_log_file(path: &Path, records: &[PoseLogRecord]) -> Result<(), PoseLogError> {
    let file = std::io::BufWriter::new(File::create(path)?);
    match PoseLogFormat::from_path(path) {
        PoseLogFormat::Csv => write_csv(file, records),
        PoseLogFormat::JsonLines => write_json_lines(file, records),
    }
}

/// Calibration session from consecutive records. Records carrying a floor
/// sample become floor observations; `kinematics` is required for them.
pub fn session_from_records(
    records: &[PoseLogRecord],
    kinematics: Option<RobotKinematics>,
) -> Result<CalibrationSession, PoseLogError> {
    if records.is_empty() {
        return Err(PoseLogError::Empty);
    }
    let transitions = records
        .windows(2)
        .map(|w| relative_transition(&w[0].sample, &w[1].sample))
        .collect();
    let mut session = CalibrationSession::new(transitions);
    session.kinematics = kinematics;
    for r in records {
        if let Some(f) = r.floor {
            session.floor_observations.push(FloorObservation::from_map_frame(
                f.normal,
                f.height,
                &r.sample.device_pose,
            )?);
        }
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64, floor: bool) -> PoseLogRecord {
        let head = Pose::new(Rotation::rz(0.3 * t), Vec3::new(t, 0.5, 1.1));
        let x = Pose::new(Rotation::from_axis_angle(&Vec3::new(1.0, 1.0, 0.0), 0.2), Vec3::new(0.12, 0.12, 0.12));
        PoseLogRecord {
            sample: PosePairSample {
                timestamp: t,
                head_pose: head,
                device_pose: head * x,
            },
            floor: floor.then_some(FloorSample {
                normal: Vec3::z(),
                height: 1.22,
            }),
        }
    }

    fn assert_same(a: &[PoseLogRecord], b: &[PoseLogRecord]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.sample.timestamp, y.sample.timestamp);
            let (dr, dt) = x.sample.device_pose.distance_to(&y.sample.device_pose);
            assert!(dr < 1e-12 && dt < 1e-12);
            let (dr, dt) = x.sample.head_pose.distance_to(&y.sample.head_pose);
            assert!(dr < 1e-12 && dt < 1e-12);
            assert_eq!(x.floor.is_some(), y.floor.is_some());
        }
    }

    #[test]
    fn csv_and_json_lines_agree() {
        let records = vec![record(0.0, true), record(1.0, false), record(2.0, true)];
        let mut csv_buf = Vec::new();
        write_csv(&mut csv_buf, &records).unwrap();
        let mut json_buf = Vec::new();
        write_json_lines(&mut json_buf, &records).unwrap();
        assert_same(&read_csv(csv_buf.as_slice()).unwrap(), &records);
        assert_same(&read_json_lines(json_buf.as_slice()).unwrap(), &records);
    }

    #[test]
    fn csv_without_floor_columns() {
        let text = "timestamp,head_tx,head_ty,head_tz,head_qw,head_qx,head_qy,head_qz,device_tx,device_ty,device_tz,device_qw,device_qx,device_qy,device_qz\n\
                    0,0,0,1.1,1,0,0,0,0.1,0,1.2,1,0,0,0\n";
        let recs = read_csv(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].floor.is_none());
        assert_eq!(recs[0].sample.device_pose.translation, Vec3::new(0.1, 0.0, 1.2));
    }

    #[test]
    fn errors_name_the_line() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[record(0.0, false), record(1.0, false)]).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("2,0,0,1.1,1,0,0,0,0,0,abc,1,0,0,0\n");
        match read_csv(text.as_bytes()) {
            Err(PoseLogError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }

        let mut buf = Vec::new();
        write_json_lines(&mut buf, &[record(0.0, false), record(1.0, false)]).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("{\"timestamp\": 2\n");
        match read_json_lines(text.as_bytes()) {
            Err(PoseLogError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_unit_quaternion_and_backwards_time() {
        let text = "{\"timestamp\":0,\"head\":{\"translation\":[0,0,0],\"rotation\":[2,0,0,0]},\"device\":{\"translation\":[0,0,0],\"rotation\":[1,0,0,0]}}\n";
        assert!(matches!(read_json_lines(text.as_bytes()), Err(PoseLogError::Parse { line: 1, .. })));

        let mut buf = Vec::new();
        write_json_lines(&mut buf, &[record(1.0, false), record(0.5, false)]).unwrap();
        assert!(matches!(
            read_json_lines(buf.as_slice()),
            Err(PoseLogError::NonMonotonic { line: 2, .. })
        ));
    }

    #[test]
    fn session_from_records_builds_transitions_and_floor_rows() {
        let records = vec![record(0.0, true), record(1.0, false), record(2.0, true)];
        let session = session_from_records(&records, Some(RobotKinematics::upright(1.1).unwrap())).unwrap();
        assert_eq!(session.transitions.len(), 2);
        assert_eq!(session.floor_observations.len(), 2);
        // normal is re-expressed in the device frame
        let dev = records[0].sample.device_pose.rotation;
        assert!((dev * session.floor_observations[0].normal - Vec3::z()).norm() < 1e-12);
        assert!(matches!(session_from_records(&[], None), Err(PoseLogError::Empty)));
    }
}
