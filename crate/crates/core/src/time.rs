//! UTC timestamps with RFC 3339 rendering.
//!
//! Two textual forms are used: second precision (`2026-01-02T03:04:05Z`)
//! and millisecond precision (`2026-01-02T03:04:05.678Z`). Parsing is strict:
//! exactly one of those shapes, years 0000..=9999.

use alloc::string::String;
use core::fmt;

use thiserror::Error;

const MS_PER_DAY: i64 = 86_400_000;

/// Milliseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid RFC 3339 timestamp: {0}")]
pub struct TimestampError(&'static str);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Seconds,
    Millis,
}

impl Timestamp {
    pub const fn from_unix_millis(ms: i64) -> Self {
        Self(ms)
    }

    pub const fn unix_millis(self) -> i64 {
        self.0
    }

    pub const fn truncate_to_seconds(self) -> Self {
        Self(self.0.div_euclid(1000) * 1000)
    }

    pub fn millis_since(self, earlier: Timestamp) -> i64 {
        self.0 - earlier.0
    }

    pub fn render(self, precision: Precision) -> String {
        let mut s = String::with_capacity(24);
        let days = self.0.div_euclid(MS_PER_DAY);
        let in_day = self.0.rem_euclid(MS_PER_DAY);
        let (y, m, d) = civil_from_days(days);
        let secs = in_day / 1000;
        let _ = fmt::write(
            &mut s,
            format_args!(
                "{:04}-{:02}-{:02}T{:02}:{:02}:{:02}",
                y,
                m,
                d,
                secs / 3600,
                (secs / 60) % 60,
                secs % 60
            ),
        );
        if precision == Precision::Millis {
            let _ = fmt::write(&mut s, format_args!(".{:03}", in_day % 1000));
        }
        s.push('Z');
        s
    }

    pub fn to_rfc3339_seconds(self) -> String {
        self.render(Precision::Seconds)
    }

    pub fn to_rfc3339_millis(self) -> String {
        self.render(Precision::Millis)
    }

    pub fn parse(text: &str, precision: Precision) -> Result<Self, TimestampError> {
        let b = text.as_bytes();
        let want = match precision {
            Precision::Seconds => 20,
            Precision::Millis => 24,
        };
        if b.len() != want {
            return Err(TimestampError("wrong length"));
        }
        let num = |range: core::ops::Range<usize>| -> Result<i64, TimestampError> {
            let mut v = 0i64;
            for &c in &b[range] {
                if !c.is_ascii_digit() {
                    return Err(TimestampError("expected digit"));
                }
                v = v * 10 + i64::from(c - b'0');
            }
            Ok(v)
        };
        let sep = |i: usize, c: u8| {
            if b[i] == c {
                Ok(())
            } else {
                Err(TimestampError("bad separator"))
            }
        };
        sep(4, b'-')?;
        sep(7, b'-')?;
        sep(10, b'T')?;
        sep(13, b':')?;
        sep(16, b':')?;
        sep(want - 1, b'Z')?;
        let (y, mo, d) = (num(0..4)?, num(5..7)?, num(8..10)?);
        let (h, mi, s) = (num(11..13)?, num(14..16)?, num(17..19)?);
        let ms = if precision == Precision::Millis {
            sep(19, b'.')?;
            num(20..23)?
        } else {
            0
        };
        if !(1..=12).contains(&mo) || d < 1 || d > days_in_month(y, mo) {
            return Err(TimestampError("date out of range"));
        }
        if h > 23 || mi > 59 || s > 59 {
            return Err(TimestampError("time out of range"));
        }
        let days = days_from_civil(y, mo, d);
        Ok(Self(days * MS_PER_DAY + ((h * 60 + mi) * 60 + s) * 1000 + ms))
    }
}

fn is_leap(y: i64) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

fn days_in_month(y: i64, m: i64) -> i64 {
    match m {
        2 if is_leap(y) => 29,
        2 => 28,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    }
}

// Howard Hinnant's days_from_civil / civil_from_days.
fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    (if m <= 2 { yoe + era * 400 + 1 } else { yoe + era * 400 }, m, d)
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339_millis())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_instants() {
        assert_eq!(Timestamp(0).to_rfc3339_seconds(), "1970-01-01T00:00:00Z");
        // 2000-02-29T12:34:56.789Z, computed with `date -u -d @951827696`.
        let t = Timestamp(951_827_696_789);
        assert_eq!(t.to_rfc3339_millis(), "2000-02-29T12:34:56.789Z");
        assert_eq!(Timestamp::parse("2000-02-29T12:34:56.789Z", Precision::Millis), Ok(t));
    }

    #[test]
    fn strict_shapes() {
        for bad in [
            "2001-02-29T00:00:00Z",
            "2000-13-01T00:00:00Z",
            "2000-01-01T24:00:00Z",
            "2000-01-01 00:00:00Z",
            "2000-01-01T00:00:00+00:00",
            "2000-01-01T00:00:00.1Z",
        ] {
            assert!(Timestamp::parse(bad, Precision::Seconds).is_err(), "{bad}");
            assert!(Timestamp::parse(bad, Precision::Millis).is_err(), "{bad}");
        }
        assert!(Timestamp::parse("2000-01-01T00:00:00Z", Precision::Millis).is_err());
    }

    proptest! {
        #[test]
        fn millis_round_trip(ms in 0i64..253_402_300_799_999) {
            let t = Timestamp(ms);
            prop_assert_eq!(Timestamp::parse(&t.to_rfc3339_millis(), Precision::Millis), Ok(t));
            let s = t.truncate_to_seconds();
            prop_assert_eq!(Timestamp::parse(&s.to_rfc3339_seconds(), Precision::Seconds), Ok(s));
        }
    }
}
