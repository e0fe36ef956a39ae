//! NMEA 0183 sentence parsing.
//!
//! Only GGA and RMC are decoded. Everything else is returned as
//! [`TalkerType::Other`] with its raw fields, so a log with mixed sentences
//! streams through without errors.

use super::GeodeticPosition;
use std::fmt::Write as _;
use thiserror::Error;

/// Maximum sentence length including `$` and the checksum, excluding CR/LF.
pub const MAX_SENTENCE_LEN: usize = 82;

const KNOTS_TO_MPS: f64 = 1852.0 / 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmeaError {
    #[error("empty line")]
    Empty,
    #[error("sentence is {0} characters, limit is 82")]
    TooLong(usize),
    #[error("sentence contains non-ASCII bytes")]
    NonAscii,
    #[error("sentence does not start with '$'")]
    MissingStart,
    #[error("missing '*hh' checksum suffix")]
    MissingChecksum,
    #[error("checksum mismatch: sentence says {expected:02X}, computed {computed:02X}")]
    Checksum { expected: u8, computed: u8 },
    #[error("field {index} ({name}): {reason}")]
    Field {
        index: usize,
        name: &'static str,
        reason: String,
    },
}

impl NmeaError {
    /// Checksum and field errors only cost the affected fix; callers keep
    /// reading the stream.
    pub fn is_recoverable(&self) -> bool {
        !matches!(self, NmeaError::Empty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TalkerType {
    Gga,
    Rmc,
    Gsv,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GgaFix {
    /// Seconds since midnight UTC.
    pub time_of_day: Option<f64>,
    pub position: GeodeticPosition,
    pub quality: u8,
    pub satellites: u8,
    pub hdop: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmcFix {
    pub time_of_day: Option<f64>,
    pub active: bool,
    /// Latitude/longitude only; RMC carries no altitude so `alt` is 0.
    pub position: GeodeticPosition,
    pub speed_mps: Option<f64>,
    pub course: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmeaSentence {
    pub talker_type: TalkerType,
    /// Address field without `$`, e.g. `GPGGA`.
    pub address: String,
    /// Data fields after the address, in order.
    pub raw_fields: Vec<String>,
    pub checksum_valid: bool,
    pub gga: Option<GgaFix>,
    pub rmc: Option<RmcFix>,
}

/// XOR of all bytes between `$` and `*`.
pub fn checksum(body: &str) -> u8 {
    body.bytes().fold(0u8, |acc, b| acc ^ b)
}

pub fn parse_nmea(line: &str) -> Result<NmeaSentence, NmeaError> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.is_empty() {
        return Err(NmeaError::Empty);
    }
    if !line.is_ascii() {
        return Err(NmeaError::NonAscii);
    }
    if line.len() > MAX_SENTENCE_LEN {
        return Err(NmeaError::TooLong(line.len()));
    }
    let rest = line.strip_prefix('$').ok_or(NmeaError::MissingStart)?;
    let star = rest.rfind('*').ok_or(NmeaError::MissingChecksum)?;
    let (body, suffix) = (&rest[..star], &rest[star + 1..]);
    if suffix.len() != 2 {
        return Err(NmeaError::MissingChecksum);
    }
    let expected = u8::from_str_radix(suffix, 16).map_err(|_| NmeaError::MissingChecksum)?;
    let computed = checksum(body);
    if expected != computed {
        return Err(NmeaError::Checksum { expected, computed });
    }

    let mut parts = body.split(',');
    let address = parts.next().unwrap_or_default().to_string();
    let raw_fields: Vec<String> = parts.map(str::to_string).collect();

    // Standard sentences are a two-letter talker id plus a three-letter type;
    // proprietary `$P...` sentences fall through to Other.
    let kind = if address.len() == 5 && !address.starts_with('P') {
        &address[2..]
    } else {
        ""
    };
    let talker_type = match kind {
        "GGA" => TalkerType::Gga,
        "RMC" => TalkerType::Rmc,
        "GSV" => TalkerType::Gsv,
        _ => TalkerType::Other,
    };

    let mut sentence = NmeaSentence {
        talker_type,
        address,
        raw_fields,
        checksum_valid: true,
        gga: None,
        rmc: None,
    };
    match talker_type {
        TalkerType::Gga => sentence.gga = Some(decode_gga(&sentence.raw_fields)?),
        TalkerType::Rmc => sentence.rmc = Some(decode_rmc(&sentence.raw_fields)?),
        _ => {}
    }
    Ok(sentence)
}

fn field<'a>(fields: &'a [String], index: usize, name: &'static str) -> Result<&'a str, NmeaError> {
    fields.get(index).map(String::as_str).ok_or(NmeaError::Field {
        index,
        name,
        reason: "missing".into(),
    })
}

fn bad(index: usize, name: &'static str, reason: impl Into<String>) -> NmeaError {
    NmeaError::Field {
        index,
        name,
        reason: reason.into(),
    }
}

fn parse_f64(fields: &[String], index: usize, name: &'static str) -> Result<f64, NmeaError> {
    let s = field(fields, index, name)?;
    let v: f64 = s.parse().map_err(|_| bad(index, name, format!("not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(bad(index, name, "not finite"));
    }
    Ok(v)
}

fn parse_optional_f64(fields: &[String], index: usize, name: &'static str) -> Result<Option<f64>, NmeaError> {
    match fields.get(index).map(String::as_str) {
        None | Some("") => Ok(None),
        Some(_) => parse_f64(fields, index, name).map(Some),
    }
}

fn parse_time(fields: &[String], index: usize) -> Result<Option<f64>, NmeaError> {
    let s = match fields.get(index).map(String::as_str) {
        None | Some("") => return Ok(None),
        Some(s) => s,
    };
    if s.len() < 6 || !s.as_bytes()[..6].iter().all(u8::is_ascii_digit) {
        return Err(bad(index, "time", format!("expected hhmmss[.ss], got {s:?}")));
    }
    let h: f64 = s[0..2].parse().unwrap_or_default();
    let m: f64 = s[2..4].parse().unwrap_or_default();
    let sec: f64 = s[4..].parse().map_err(|_| bad(index, "time", format!("bad seconds in {s:?}")))?;
    if h >= 24.0 || m >= 60.0 || sec >= 61.0 {
        return Err(bad(index, "time", format!("out of range: {s:?}")));
    }
    Ok(Some(h * 3600.0 + m * 60.0 + sec))
}

/// Decodes a `(d)ddmm.mmmm` coordinate plus hemisphere into signed radians.
fn parse_coordinate(
    fields: &[String],
    index: usize,
    name: &'static str,
    deg_digits: usize,
    positive: char,
    negative: char,
) -> Result<f64, NmeaError> {
    let s = field(fields, index, name)?;
    let dot = s.find('.').unwrap_or(s.len());
    if s.is_empty() || dot != deg_digits + 2 {
        return Err(bad(index, name, format!("expected {}mm.mmmm, got {s:?}", "d".repeat(deg_digits))));
    }
    if !s.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
        return Err(bad(index, name, format!("non-numeric coordinate {s:?}")));
    }
    let degrees: f64 = s[..deg_digits].parse().map_err(|_| bad(index, name, "bad degrees"))?;
    let minutes: f64 = s[deg_digits..].parse().map_err(|_| bad(index, name, "bad minutes"))?;
    let limit = if deg_digits == 2 { 90.0 } else { 180.0 };
    if minutes >= 60.0 {
        return Err(bad(index, name, format!("minutes {minutes} >= 60")));
    }
    let value = degrees + minutes / 60.0;
    if value > limit {
        return Err(bad(index, name, format!("{value} degrees out of range")));
    }
    let hemi = field(fields, index + 1, "hemisphere")?;
    let sign = match hemi.chars().next() {
        Some(c) if hemi.len() == 1 && c == positive => 1.0,
        Some(c) if hemi.len() == 1 && c == negative => -1.0,
        _ => return Err(bad(index + 1, "hemisphere", format!("expected {positive}/{negative}, got {hemi:?}"))),
    };
    Ok(sign * value.to_radians())
}

fn decode_lat_lon(fields: &[String], lat_index: usize, alt: f64) -> Result<GeodeticPosition, NmeaError> {
    let lat = parse_coordinate(fields, lat_index, "latitude", 2, 'N', 'S')?;
    let mut lon = parse_coordinate(fields, lat_index + 2, "longitude", 3, 'E', 'W')?;
    if lon <= -std::f64::consts::PI {
        lon = std::f64::consts::PI;
    }
    GeodeticPosition::new(lat, lon, alt).map_err(|e| bad(lat_index, "position", e.to_string()))
}

fn decode_gga(fields: &[String]) -> Result<GgaFix, NmeaError> {
    let time_of_day = parse_time(fields, 0)?;
    let quality_str = field(fields, 5, "quality")?;
    let quality: u8 = quality_str
        .parse()
        .map_err(|_| bad(5, "quality", format!("not an integer: {quality_str:?}")))?;
    let sats_str = field(fields, 6, "satellites")?;
    let satellites: u8 = sats_str
        .parse()
        .map_err(|_| bad(6, "satellites", format!("not an integer: {sats_str:?}")))?;
    let hdop = parse_optional_f64(fields, 7, "hdop")?;
    let alt = parse_f64(fields, 8, "altitude")?;
    let position = decode_lat_lon(fields, 1, alt)?;
    Ok(GgaFix {
        time_of_day,
        position,
        quality,
        satellites,
        hdop,
    })
}

fn decode_rmc(fields: &[String]) -> Result<RmcFix, NmeaError> {
    let time_of_day = parse_time(fields, 0)?;
    let active = match field(fields, 1, "status")? {
        "A" => true,
        "V" => false,
        other => return Err(bad(1, "status", format!("expected A/V, got {other:?}"))),
    };
    let position = decode_lat_lon(fields, 2, 0.0)?;
    let speed_mps = parse_optional_f64(fields, 6, "speed")?.map(|k| k * KNOTS_TO_MPS);
    let course = parse_optional_f64(fields, 7, "course")?.map(f64::to_radians);
    Ok(RmcFix {
        time_of_day,
        active,
        position,
        speed_mps,
        course,
    })
}

fn push_coordinate(out: &mut String, radians: f64, deg_digits: usize, positive: char, negative: char) {
    let deg = radians.to_degrees().abs();
    let mut whole = deg.trunc();
    let mut minutes = (deg - whole) * 60.0;
    // Rounding to five decimals can carry into the next degree.
    if (minutes * 1e5).round() >= 60.0 * 1e5 {
        whole += 1.0;
        minutes = 0.0;
    }
    let _ = write!(out, "{:0w$}{:08.5},", whole as u32, minutes, w = deg_digits);
    out.push(if radians < 0.0 { negative } else { positive });
}

/// Formats a GGA sentence with five decimal places of arc minutes (~2 cm).
pub fn format_gga(time_of_day: f64, position: &GeodeticPosition, satellites: u8) -> String {
    let t = time_of_day.rem_euclid(86_400.0);
    let h = (t / 3600.0).floor();
    let m = ((t - h * 3600.0) / 60.0).floor();
    let s = t - h * 3600.0 - m * 60.0;
    let mut body = String::with_capacity(80);
    let _ = write!(body, "GPGGA,{:02}{:02}{:05.2},", h as u32, m as u32, s);
    push_coordinate(&mut body, position.lat, 2, 'N', 'S');
    body.push(',');
    push_coordinate(&mut body, position.lon, 3, 'E', 'W');
    let _ = write!(body, ",1,{:02},0.9,{:.3},M,0.0,M,,", satellites, position.alt);
    format!("${body}*{:02X}", checksum(&body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_checksum(body: &str) -> String {
        format!("${body}*{:02X}", checksum(body))
    }

    #[test]
    fn gga_example_decodes() {
        let line = with_checksum("GPGGA,123519,4916.45,N,12311.12,W,1,08,0.9,545.4,M,46.9,M,,");
        let s = parse_nmea(&line).unwrap();
        assert_eq!(s.talker_type, TalkerType::Gga);
        let fix = s.gga.unwrap();
        // ddmm.mm oracle: 49 + 16.45/60, 123 + 11.12/60
        let lat = (49.0 + 16.45 / 60.0_f64).to_radians();
        let lon = -(123.0 + 11.12 / 60.0_f64).to_radians();
        assert!((fix.position.lat - lat).abs() < 1e-12);
        assert!((fix.position.lon - lon).abs() < 1e-12);
        assert_eq!(fix.position.alt, 545.4);
        assert_eq!(fix.satellites, 8);
        assert_eq!(fix.time_of_day, Some(12.0 * 3600.0 + 35.0 * 60.0 + 19.0));
    }

    #[test]
    fn canonical_gga_checksum_is_47() {
        let line = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47";
        assert!(parse_nmea(line).is_ok());
    }

    #[test]
    fn flipped_checksum_nibble_is_rejected() {
        let line = with_checksum("GPGGA,123519,4916.45,N,12311.12,W,1,08,0.9,545.4,M,46.9,M,,");
        let mut bytes = line.into_bytes();
        let last = bytes.len() - 1;
        bytes[last] = if bytes[last] == b'0' { b'1' } else { b'0' };
        let err = parse_nmea(std::str::from_utf8(&bytes).unwrap()).unwrap_err();
        assert!(matches!(err, NmeaError::Checksum { .. }));
        assert!(err.is_recoverable());
    }

    #[test]
    fn gsv_passes_through() {
        let line = with_checksum("GPGSV,3,1,11,03,03,111,00,04,15,270,00,06,01,010,00,13,06,292,00");
        let s = parse_nmea(&line).unwrap();
        assert_eq!(s.talker_type, TalkerType::Gsv);
        assert!(s.gga.is_none() && s.rmc.is_none());
        assert_eq!(s.raw_fields.len(), 19);
    }

    #[test]
    fn unknown_sentence_is_other() {
        let s = parse_nmea(&with_checksum("GPVTG,054.7,T,034.4,M,005.5,N,010.2,K")).unwrap();
        assert_eq!(s.talker_type, TalkerType::Other);
        let s = parse_nmea(&with_checksum("PGRME,15.0,M,45.0,M,25.0,M")).unwrap();
        assert_eq!(s.talker_type, TalkerType::Other);
    }

    #[test]
    fn malformed_coordinate_is_field_error() {
        let line = with_checksum("GPGGA,123519,49x6.45,N,12311.12,W,1,08,0.9,545.4,M,46.9,M,,");
        assert!(matches!(parse_nmea(&line), Err(NmeaError::Field { index: 1, .. })));
        let line = with_checksum("GPGGA,123519,4976.45,N,12311.12,W,1,08,0.9,545.4,M,46.9,M,,");
        assert!(matches!(parse_nmea(&line), Err(NmeaError::Field { .. })));
        let line = with_checksum("GPGGA,123519,,,,,0,00,,,M,,M,,");
        assert!(matches!(parse_nmea(&line), Err(NmeaError::Field { .. })));
    }

    #[test]
    fn rmc_decodes_speed_and_course() {
        let line = with_checksum("GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W");
        let rmc = parse_nmea(&line).unwrap().rmc.unwrap();
        assert!(rmc.active);
        assert!((rmc.speed_mps.unwrap() - 22.4 * 1852.0 / 3600.0).abs() < 1e-12);
        assert!((rmc.course.unwrap() - 84.4f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn structural_errors() {
        assert_eq!(parse_nmea(""), Err(NmeaError::Empty));
        assert_eq!(parse_nmea("GPGGA,1*00"), Err(NmeaError::MissingStart));
        assert_eq!(parse_nmea("$GPGGA,1"), Err(NmeaError::MissingChecksum));
        let long = format!("${}*00", "A".repeat(90));
        assert!(matches!(parse_nmea(&long), Err(NmeaError::TooLong(_))));
    }

    #[test]
    fn format_gga_round_trips() {
        let g = GeodeticPosition::from_degrees(-37.94321, -27.341234, 123.456).unwrap();
        let line = format_gga(3723.5, &g, 9);
        assert!(line.len() <= MAX_SENTENCE_LEN, "{line}");
        let fix = parse_nmea(&line).unwrap().gga.unwrap();
        // 1e-5 arc minute is about 1.9 cm.
        assert!((fix.position.lat - g.lat).abs() < 1e-5f64.to_radians() / 60.0);
        assert!((fix.position.lon - g.lon).abs() < 1e-5f64.to_radians() / 60.0);
        assert_eq!(fix.position.alt, 123.456);
        assert_eq!(fix.satellites, 9);
        assert!((fix.time_of_day.unwrap() - 3723.5).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn never_panics_on_arbitrary_text(s in any::<String>()) {
            let _ = parse_nmea(&s);
        }

        #[test]
        fn never_panics_on_arbitrary_bytes(b in proptest::collection::vec(any::<u8>(), 0..100)) {
            let _ = parse_nmea(&String::from_utf8_lossy(&b));
        }

        #[test]
        fn never_panics_on_mutated_gga(pos in 0usize..70, byte in 32u8..127) {
            let mut line = with_checksum("GPGGA,123519,4916.45,N,12311.12,W,1,08,0.9,545.4,M,46.9,M,,").into_bytes();
            let p = pos % line.len();
            line[p] = byte;
            let _ = parse_nmea(&String::from_utf8_lossy(&line));
        }
    }
}
