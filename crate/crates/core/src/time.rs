//! UTC timestamps, calendar dates and the ISO-8601 forms used on the wire.
//!
//! Dates use the proleptic Gregorian calendar. Leap seconds do not exist here.

use alloc::string::String;
use core::fmt;

use crate::window::QueryWindow;

pub const MS_PER_DAY: u64 = 86_400_000;

/// Milliseconds since 1970-01-01T00:00:00Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct Timestamp(u64);

impl Timestamp {
    pub const EPOCH: Timestamp = Timestamp(0);

    #[inline]
    pub const fn from_epoch_ms(ms: u64) -> Self {
        Timestamp(ms)
    }

    #[inline]
    pub const fn epoch_ms(self) -> u64 {
        self.0
    }

    /// Absolute difference in seconds.
    #[inline]
    pub fn abs_diff_s(self, other: Timestamp) -> f64 {
        self.0.abs_diff(other.0) as f64 / 1000.0
    }

    pub fn saturating_add_ms(self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(ms))
    }

    pub fn saturating_sub_ms(self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_sub(ms))
    }

    /// `YYYY-MM-DDTHH:MM:SS.mmmZ`
    pub fn to_iso8601(self) -> String {
        use core::fmt::Write;
        let date = day_of(self);
        let ms_of_day = self.0 % MS_PER_DAY;
        let (h, rem) = (ms_of_day / 3_600_000, ms_of_day % 3_600_000);
        let (m, rem) = (rem / 60_000, rem % 60_000);
        let (s, ms) = (rem / 1000, rem % 1000);
        let mut out = String::with_capacity(24);
        let _ = write!(out, "{date}T{h:02}:{m:02}:{s:02}.{ms:03}Z");
        out
    }

    /// Parses `YYYY-MM-DDTHH:MM:SS[.fraction](Z|+00:00)`. Fractions beyond
    /// millisecond precision are truncated.
    pub fn parse_iso8601(s: &str) -> Result<Timestamp, TimeError> {
        let bad = || TimeError::Malformed(String::from(s));
        let b = s.as_bytes();
        if b.len() < 20 || (b[10] != b'T' && b[10] != b' ') {
            return Err(bad());
        }
        let date = Date::parse(&s[..10])?;
        if b[13] != b':' || b[16] != b':' {
            return Err(bad());
        }
        let h = digits(&b[11..13]).ok_or_else(bad)?;
        let m = digits(&b[14..16]).ok_or_else(bad)?;
        let sec = digits(&b[17..19]).ok_or_else(bad)?;
        if h > 23 || m > 59 || sec > 59 {
            return Err(bad());
        }
        let mut rest = &b[19..];
        let mut ms = 0u64;
        if rest.first() == Some(&b'.') {
            let n = rest[1..].iter().take_while(|c| c.is_ascii_digit()).count();
            if n == 0 {
                return Err(bad());
            }
            for (i, c) in rest[1..1 + n].iter().enumerate() {
                if i < 3 {
                    ms = ms * 10 + u64::from(c - b'0');
                }
            }
            for _ in n..3 {
                ms *= 10;
            }
            rest = &rest[1 + n..];
        }
        if rest != b"Z" && rest != b"+00:00" {
            return Err(bad());
        }
        let day_start = date.start().ok_or(TimeError::BeforeEpoch)?;
        Ok(day_start.saturating_add_ms(((h * 60 + m) * 60 + sec) * 1000 + ms))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso8601())
    }
}

fn digits(b: &[u8]) -> Option<u64> {
    if b.is_empty() || !b.iter().all(u8::is_ascii_digit) {
        return None;
    }
    Some(b.iter().fold(0u64, |acc, c| acc * 10 + u64::from(c - b'0')))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimeError {
    Malformed(String),
    InvalidDate { year: i32, month: u32, day: u32 },
    BeforeEpoch,
}

impl fmt::Display for TimeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeError::Malformed(s) => write!(f, "malformed date/time {s:?}"),
            TimeError::InvalidDate { year, month, day } => {
                write!(f, "no such date {year:04}-{month:02}-{day:02}")
            }
            TimeError::BeforeEpoch => f.write_str("dates before 1970-01-01 are not representable"),
        }
    }
}

/// A proleptic Gregorian calendar date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date {
    year: i32,
    month: u8,
    day: u8,
}

impl Date {
    pub fn new(year: i32, month: u32, day: u32) -> Result<Date, TimeError> {
        let invalid = TimeError::InvalidDate { year, month, day };
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return Err(invalid);
        }
        Ok(Date {
            year,
            month: month as u8,
            day: day as u8,
        })
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        u32::from(self.month)
    }

    pub fn day(&self) -> u32 {
        u32::from(self.day)
    }

    /// Days since 1970-01-01 (negative before).
    pub fn days_since_epoch(&self) -> i64 {
        days_from_civil(self.year, self.month(), self.day())
    }

    pub fn from_days_since_epoch(days: i64) -> Date {
        let (year, month, day) = civil_from_days(days);
        Date {
            year,
            month: month as u8,
            day: day as u8,
        }
    }

    pub fn succ(&self) -> Date {
        Date::from_days_since_epoch(self.days_since_epoch() + 1)
    }

    pub fn pred(&self) -> Date {
        Date::from_days_since_epoch(self.days_since_epoch() - 1)
    }

    /// Midnight opening this day, or `None` before the epoch.
    pub fn start(&self) -> Option<Timestamp> {
        let days = self.days_since_epoch();
        (days >= 0).then(|| Timestamp::from_epoch_ms(days as u64 * MS_PER_DAY))
    }

    /// Parses `YYYY-MM-DD`.
    pub fn parse(s: &str) -> Result<Date, TimeError> {
        let b = s.as_bytes();
        let bad = || TimeError::Malformed(String::from(s));
        if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
            return Err(bad());
        }
        let y = digits(&b[0..4]).ok_or_else(bad)?;
        let m = digits(&b[5..7]).ok_or_else(bad)?;
        let d = digits(&b[8..10]).ok_or_else(bad)?;
        Date::new(y as i32, m as u32, d as u32)
    }

    /// Inclusive iterator from `self` to `last`.
    pub fn iter_through(self, last: Date) -> impl Iterator<Item = Date> {
        let (a, b) = (self.days_since_epoch(), last.days_since_epoch());
        (a..=b).map(Date::from_days_since_epoch)
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}-{:02}", self.year, self.month, self.day)
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Date {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Date {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Date, D::Error> {
        let s = <alloc::borrow::Cow<'de, str>>::deserialize(d)?;
        Date::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn is_leap(y: i32) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

fn days_in_month(y: i32, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(y) => 29,
        2 => 28,
        _ => 0,
    }
}

// Hinnant's days_from_civil / civil_from_days.
fn days_from_civil(y: i32, m: u32, d: u32) -> i64 {
    let y = i64::from(y) - i64::from(m <= 2);
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = i64::from(m);
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + i64::from(d) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i32, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + i64::from(m <= 2);
    (y as i32, m, d)
}

/// UTC calendar date containing `t`.
pub fn day_of(t: Timestamp) -> Date {
    Date::from_days_since_epoch((t.epoch_ms() / MS_PER_DAY) as i64)
}

/// Half-open window `[00:00 of date, 00:00 of the next day)` with no bbox.
///
/// # Panics
/// If `date` precedes the epoch.
pub fn day_bounds(date: Date) -> QueryWindow {
    let from = date.start().expect("date before 1970-01-01");
    QueryWindow::new(from, from.saturating_add_ms(MS_PER_DAY), None)
        .expect("day window is well-formed")
}
