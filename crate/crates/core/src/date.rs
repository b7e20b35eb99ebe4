//! Calendar months.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A calendar month, ordered chronologically and printed as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(n: i64) -> Self {
        Self {
            year: n.div_euclid(12) as i32,
            month: (n.rem_euclid(12) + 1) as u32,
        }
    }

    /// Shift by a signed number of months.
    pub fn add_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    pub fn succ(self) -> Self {
        self.add_months(1)
    }

    pub fn pred(self) -> Self {
        self.add_months(-1)
    }

    /// Number of months from `self` to `other` (positive if `other` is later).
    pub fn months_until(self, other: YearMonth) -> i64 {
        other.ordinal() - self.ordinal()
    }

    /// Inclusive range of months.
    pub fn range_inclusive(self, end: YearMonth) -> impl Iterator<Item = YearMonth> {
        (self.ordinal()..=end.ordinal()).map(Self::from_ordinal)
    }

    pub fn from_date(date: chrono::NaiveDate) -> Self {
        use chrono::Datelike;
        Self {
            year: date.year(),
            month: date.month(),
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expected a YYYY-MM date, got `{0}`")]
pub struct ParseYearMonthError(pub String);

impl FromStr for YearMonth {
    type Err = ParseYearMonthError;

    /// Accepts `YYYY-MM`, `YYYY:MM`, `YYYY/MM`, and full dates whose day is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseYearMonthError(s.to_string());
        let t = s.trim();
        let mut parts = t.splitn(3, ['-', ':', '/']);
        let year: i32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
        let month: u32 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
        if let Some(day) = parts.next() {
            let day: u32 = day.parse().map_err(|_| err())?;
            chrono::NaiveDate::from_ymd_opt(year, month, day).ok_or_else(err)?;
        }
        YearMonth::new(year, month).ok_or_else(err)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let ym: YearMonth = "1999-12".parse().unwrap();
        assert_eq!(ym, YearMonth::new(1999, 12).unwrap());
        assert_eq!(ym.to_string(), "1999-12");
        assert_eq!("1980:06".parse::<YearMonth>().unwrap().to_string(), "1980-06");
        assert_eq!("2001-02-28".parse::<YearMonth>().unwrap().to_string(), "2001-02");
        assert!("2001-13".parse::<YearMonth>().is_err());
        assert!("2001-02-30".parse::<YearMonth>().is_err());
        assert!("garbage".parse::<YearMonth>().is_err());
    }

    #[test]
    fn arithmetic() {
        let dec = YearMonth::new(1999, 12).unwrap();
        assert_eq!(dec.succ().to_string(), "2000-01");
        assert_eq!(dec.succ().pred(), dec);
        assert_eq!(dec.add_months(-12).to_string(), "1998-12");
        assert_eq!(dec.months_until(dec.add_months(25)), 25);
        assert_eq!(dec.range_inclusive(dec.add_months(2)).count(), 3);
    }
}
