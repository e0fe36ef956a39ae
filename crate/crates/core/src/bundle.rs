//! On-disk formats: dataset bundles and run outputs.
//!
//! A bundle directory holds `truth.csv`, `gps.nmea`, `imu.csv`,
//! `vision.csv`, `calib.csv` (the stationary capture used for bias
//! calibration), an optional `attitude.csv` and `meta.toml` with flat
//! `key = value` lines. Numbers are written in shortest round-trip form, so
//! reading a bundle back reproduces the sensor log exactly.

use crate::fusion::Covariance;
use crate::geodesy::nmea::parse_nmea;
use crate::geodesy::{EllipsoidConstants, GeodeticPosition};
use crate::imu::{AttitudeMeasurement, ImuSample};
use crate::pipeline::{RunReport, StepRecord};
use crate::sim::{Dataset, GpsFixEvent, GroundTruth, SensorLog, SensorNoiseSpec, SiteConfig, TruthSample};
use crate::vision::VisionDelta;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error("meta.toml: missing key {0}")]
    MissingMeta(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> BundleError + '_ {
    move |source| BundleError::Csv { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, BundleError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

fn write_rows(path: &Path, comment: &str, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), BundleError> {
    let mut out = create(path)?;
    out.write_all(comment.as_bytes()).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_rows(path: &Path, width: usize) -> Result<Vec<Vec<f64>>, BundleError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err(path))?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(k + 2, |p| p.line() as usize);
        let fail = |message: String| BundleError::Format { path: path.to_path_buf(), line, message };
        if rec.len() != width {
            return Err(fail(format!("expected {width} columns, found {}", rec.len())));
        }
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| fail(format!("bad number {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    Ok(out)
}

fn v3(r: &[f64]) -> Vector3<f64> {
    Vector3::new(r[0], r[1], r[2])
}

const IMU_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "gx", "gy", "gz"];

fn imu_rows(samples: &[ImuSample]) -> impl Iterator<Item = Vec<f64>> + '_ {
    samples.iter().map(|s| vec![s.t, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z])
}

fn read_imu(path: &Path) -> Result<Vec<ImuSample>, BundleError> {
    Ok(read_rows(path, 7)?
        .into_iter()
        .map(|r| ImuSample {
            t: r[0],
            accel: v3(&r[1..4]),
            gyro: v3(&r[4..7]),
        })
        .collect())
}

fn meta_text(ds: &Dataset) -> String {
    let n = &ds.noise;
    let s = &ds.site;
    let pairs: Vec<(&str, String)> = vec![
        ("name", ds.name.clone()),
        ("seed", ds.seed.to_string()),
        ("duration", ds.truth.duration().to_string()),
        ("truth_rate", ds.truth.rate_hz.to_string()),
        ("gps_rate", n.gps_rate.to_string()),
        ("imu_rate", n.imu_rate.to_string()),
        ("vision_rate", n.vision_rate.to_string()),
        ("gps_sigma", n.gps_sigma.to_string()),
        ("imu_accel_sigma", n.imu_accel_sigma.to_string()),
        ("imu_gyro_sigma", n.imu_gyro_sigma.to_string()),
        ("imu_accel_bias", format!("{},{},{}", n.imu_accel_bias.x, n.imu_accel_bias.y, n.imu_accel_bias.z)),
        ("imu_gyro_bias", format!("{},{},{}", n.imu_gyro_bias.x, n.imu_gyro_bias.y, n.imu_gyro_bias.z)),
        ("vision_rot_sigma", n.vision_rot_sigma.to_string()),
        ("vision_trans_sigma", n.vision_trans_sigma.to_string()),
        ("calibration_samples", n.calibration_samples.to_string()),
        ("reference_lat", s.reference.lat.to_string()),
        ("reference_lon", s.reference.lon.to_string()),
        ("reference_alt", s.reference.alt.to_string()),
        ("ellipsoid_a", s.ellipsoid.a.to_string()),
        ("ellipsoid_e2", s.ellipsoid.e2.to_string()),
        ("start_time_of_day", s.start_time_of_day.to_string()),
    ];
    let mut out = String::from("# dataset bundle\n");
    for (k, v) in pairs {
        let quoted = if k == "name" { format!("\"{v}\"") } else { v };
        out.push_str(&format!("{k} = {quoted}\n"));
    }
    out
}

fn parse_meta(path: &Path) -> Result<BTreeMap<String, String>, BundleError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| BundleError::Format {
            path: path.to_path_buf(),
            line: k + 1,
            message: "expected key = value".into(),
        })?;
        map.insert(key.trim().to_string(), value.trim().trim_matches('"').to_string());
    }
    Ok(map)
}

struct Meta {
    map: BTreeMap<String, String>,
    path: PathBuf,
}

impl Meta {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, BundleError> {
        let v = self.map.get(key).ok_or_else(|| BundleError::MissingMeta(key.into()))?;
        v.parse().map_err(|_| BundleError::Format {
            path: self.path.clone(),
            line: 0,
            message: format!("bad value for {key}: {v:?}"),
        })
    }

    fn vec3(&self, key: &str) -> Result<Vector3<f64>, BundleError> {
        let v: String = self.get(key)?;
        let parts: Vec<f64> = v.split(',').filter_map(|p| p.trim().parse().ok()).collect();
        if parts.len() != 3 {
            return Err(BundleError::Format {
                path: self.path.clone(),
                line: 0,
                message: format!("{key} needs three values"),
            });
        }
        Ok(v3(&parts))
    }
}

/// Writes a dataset directory. `header` (typically the resolved config)
/// is copied as a `#` comment block to the top of every file.
pub fn write_bundle(ds: &Dataset, dir: &Path, header: &str) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let c = comment_block(header);
    let meta = dir.join("meta.toml");
    fs::write(&meta, c.clone() + &meta_text(ds)).map_err(io_err(&meta))?;

    write_rows(
        &dir.join("truth.csv"),
        &c,
        &["t", "Px", "Py", "Pz", "Vx", "Vy", "Vz", "Rx", "Ry", "Rz"],
        ds.truth.samples.iter().map(|s| {
            let mut r = vec![s.t];
            r.extend(s.position.iter().chain(s.velocity.iter()).chain(s.rotation.iter()));
            r
        }),
    )?;

    let gps = dir.join("gps.nmea");
    let mut w = create(&gps)?;
    w.write_all(c.as_bytes()).map_err(io_err(&gps))?;
    for fix in &ds.log.gps {
        writeln!(w, "{}", fix.sentence).map_err(io_err(&gps))?;
    }
    w.flush().map_err(io_err(&gps))?;

    write_rows(&dir.join("imu.csv"), &c, &IMU_HEADER, imu_rows(&ds.log.imu))?;
    write_rows(&dir.join("calib.csv"), &c, &IMU_HEADER, imu_rows(&ds.log.calibration))?;
    write_rows(
        &dir.join("vision.csv"),
        &c,
        &["t", "rx", "ry", "rz", "tx", "ty", "tz"],
        ds.log.vision.iter().map(|d| vec![d.t, d.rot.x, d.rot.y, d.rot.z, d.trans.x, d.trans.y, d.trans.z]),
    )?;
    if !ds.log.attitude.is_empty() {
        write_rows(
            &dir.join("attitude.csv"),
            &c,
            &["t", "yaw", "pitch", "roll"],
            ds.log.attitude.iter().map(|a| vec![a.t, a.yaw, a.pitch, a.roll]),
        )?;
    }
    Ok(())
}

/// Reads a bundle. GPS lines that fail to parse, or GGA fixes without a
/// time, are skipped and counted.
pub fn read_bundle(dir: &Path) -> Result<Dataset, BundleError> {
    let meta_path = dir.join("meta.toml");
    let meta = Meta {
        map: parse_meta(&meta_path)?,
        path: meta_path,
    };
    let site = SiteConfig {
        reference: GeodeticPosition {
            lat: meta.get("reference_lat")?,
            lon: meta.get("reference_lon")?,
            alt: meta.get("reference_alt")?,
        },
        ellipsoid: EllipsoidConstants {
            a: meta.get("ellipsoid_a")?,
            e2: meta.get("ellipsoid_e2")?,
        },
        start_time_of_day: meta.get("start_time_of_day")?,
    };
    let noise = SensorNoiseSpec {
        gps_sigma: meta.get("gps_sigma")?,
        imu_accel_sigma: meta.get("imu_accel_sigma")?,
        imu_gyro_sigma: meta.get("imu_gyro_sigma")?,
        imu_accel_bias: meta.vec3("imu_accel_bias")?,
        imu_gyro_bias: meta.vec3("imu_gyro_bias")?,
        vision_rot_sigma: meta.get("vision_rot_sigma")?,
        vision_trans_sigma: meta.get("vision_trans_sigma")?,
        gps_rate: meta.get("gps_rate")?,
        imu_rate: meta.get("imu_rate")?,
        vision_rate: meta.get("vision_rate")?,
        calibration_samples: meta.get("calibration_samples")?,
    };

    let truth_samples = read_rows(&dir.join("truth.csv"), 10)?
        .into_iter()
        .map(|r| TruthSample {
            t: r[0],
            position: v3(&r[1..4]),
            velocity: v3(&r[4..7]),
            rotation: v3(&r[7..10]),
        })
        .collect();

    let gps_path = dir.join("gps.nmea");
    let text = fs::read_to_string(&gps_path).map_err(io_err(&gps_path))?;
    let mut gps = Vec::new();
    let mut skipped = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        match parse_nmea(line.trim()) {
            Ok(s) => {
                let Some(fix) = s.gga else { continue };
                // A fix without a UTC time cannot be placed on the timeline.
                let Some(tod) = fix.time_of_day else {
                    skipped += 1;
                    continue;
                };
                let t = tod - site.start_time_of_day;
                gps.push(GpsFixEvent {
                    t: (t * 1000.0).round() / 1000.0,
                    sentence: line.trim().to_string(),
                    position: fix.position,
                    satellites: fix.satellites,
                });
            }
            Err(_) => skipped += 1,
        }
    }

    let vision = read_rows(&dir.join("vision.csv"), 7)?
        .into_iter()
        .map(|r| VisionDelta {
            t: r[0],
            rot: v3(&r[1..4]),
            trans: v3(&r[4..7]),
        })
        .collect();
    let attitude_path = dir.join("attitude.csv");
    let attitude = if attitude_path.exists() {
        read_rows(&attitude_path, 4)?
            .into_iter()
            .map(|r| AttitudeMeasurement::new(r[0], r[1], r[2], r[3]))
            .collect()
    } else {
        Vec::new()
    };

    Ok(Dataset {
        name: meta.get("name")?,
        seed: meta.get("seed")?,
        site,
        noise,
        truth: GroundTruth::from_samples(meta.get("truth_rate")?, truth_samples),
        log: SensorLog {
            calibration: read_imu(&dir.join("calib.csv"))?,
            gps,
            imu: read_imu(&dir.join("imu.csv"))?,
            vision,
            attitude,
        },
        skipped_sentences: skipped,
    })
}

/// `# ` prefixed copy of `text`, one comment per line.
pub fn comment_block(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

pub const STEP_HEADER: [&str; 11] = ["t", "Px", "Py", "Pz", "Rx", "Ry", "Rz", "y_p", "y_r", "model_id", "trace_Sigma"];

pub fn write_steps<W: Write>(mut w: W, header: &str, steps: &[StepRecord]) -> io::Result<()> {
    w.write_all(comment_block(header).as_bytes())?;
    writeln!(w, "{}", STEP_HEADER.join(","))?;
    for s in steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.t, s.position.x, s.position.y, s.position.z, s.rotation.x, s.rotation.y, s.rotation.z, s.y_p, s.y_r, s.model, s.trace
        )?;
    }
    Ok(())
}

/// Snapshots as blocks of twelve rows `t,row,c0..c11`.
pub fn write_covariance<W: Write>(mut w: W, header: &str, snapshots: &[(f64, Covariance)]) -> io::Result<()> {
    w.write_all(comment_block(header).as_bytes())?;
    let cols: Vec<String> = (0..12).map(|c| format!("c{c}")).collect();
    writeln!(w, "t,row,{}", cols.join(","))?;
    for (t, sigma) in snapshots {
        for r in 0..12 {
            let vals: Vec<String> = (0..12).map(|c| sigma[(r, c)].to_string()).collect();
            writeln!(w, "{t},{r},{}", vals.join(","))?;
        }
    }
    Ok(())
}

pub fn write_summary<W: Write>(mut w: W, header: &str, report: &RunReport, wall_clock: Duration) -> io::Result<()> {
    let s = &report.summary;
    w.write_all(comment_block(header).as_bytes())?;
    writeln!(w, "steps={}", s.steps)?;
    writeln!(w, "mean_error={}", s.mean_error)?;
    writeln!(w, "std_error={}", s.std_error)?;
    writeln!(w, "final_trace={}", s.final_trace)?;
    writeln!(w, "dropped_events={}", s.dropped)?;
    writeln!(w, "pseudo_inverse_steps={}", s.pseudo_inverse_steps)?;
    for (m, n) in s.histogram.iter() {
        writeln!(w, "model.{m}={n}")?;
    }
    writeln!(w, "wall_clock_s={}", wall_clock.as_secs_f64())
}

/// Writes `steps.csv`, `labels.csv`, `covariance.csv` and `summary.txt`.
pub fn write_run(dir: &Path, header: &str, report: &RunReport, wall_clock: Duration) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("steps.csv");
    write_steps(create(&p)?, header, &report.steps).map_err(io_err(&p))?;
    let p = dir.join("labels.csv");
    let mut w = create(&p)?;
    let labels = comment_block(header)
        + "t,model_id\n"
        + &report.steps.iter().map(|s| format!("{},{}\n", s.t, s.model)).collect::<String>();
    w.write_all(labels.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&p))?;
    let p = dir.join("covariance.csv");
    write_covariance(create(&p)?, header, &report.snapshots).map_err(io_err(&p))?;
    let p = dir.join("summary.txt");
    write_summary(create(&p)?, header, report, wall_clock).map_err(io_err(&p))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Regime;

    #[test]
    fn bundle_round_trip_keeps_log() {
        let mut ds = Dataset::regime(Regime::Turns, 5, &SensorNoiseSpec::default()).unwrap();
        ds.truncate(20.0);
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&ds, dir.path(), "seed=3").unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.log, ds.log);
        assert_eq!(back.noise, ds.noise);
        assert_eq!(back.site, ds.site);
        assert_eq!(back.seed, 5);
        assert_eq!(back.truth.samples, ds.truth.samples);
        assert_eq!(back.skipped_sentences, 0);
        for f in ["meta.toml", "truth.csv", "gps.nmea", "imu.csv", "calib.csv", "vision.csv"] {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(text.starts_with("# seed=3\n"), "{f}");
        }
    }

    #[test]
    fn corrupt_sentence_is_skipped() {
        let mut ds = Dataset::regime(Regime::Stationary, 1, &SensorNoiseSpec::default()).unwrap();
        ds.truncate(5.0);
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&ds, dir.path(), "seed=3").unwrap();
        let p = dir.path().join("gps.nmea");
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let n = lines[2].len();
        let flipped = if lines[2].ends_with('0') { "1" } else { "0" };
        lines[2].replace_range(n - 1.., flipped);
        fs::write(&p, lines.join("\n")).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.skipped_sentences, 1);
        assert_eq!(back.log.gps.len(), ds.log.gps.len() - 1);
    }

    #[test]
    fn bad_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t,a\n1,2\n3,oops\n").unwrap();
        match read_rows(&p, 2) {
            Err(BundleError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn step_csv_layout() {
        let mut buf = Vec::new();
        write_steps(&mut buf, "seed=1", &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# seed=1\nt,Px,Py,Pz,Rx,Ry,Rz,y_p,y_r,model_id,trace_Sigma\n");
    }
}
