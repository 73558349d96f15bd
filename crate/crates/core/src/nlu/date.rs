//! Resolution of damage-date expressions against a reference day.
//!
//! Supported: `today`/`heute`, `yesterday`/`gestern`, `day before yesterday`/
//! `vorgestern`, `N days|weeks ago`/`vor N Tagen|Wochen`, ISO dates and
//! `d.m.yyyy` / `d.m.yy` / `d.m.` dates. Forward-looking expressions resolve
//! too, so that they can be rejected with [`DateError::Future`].

use std::sync::LazyLock;

use chrono::{Datelike, Days, NaiveDate};
use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DateError {
    #[error("damage date in future")]
    Future(NaiveDate),
}

static ISO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{4})-(\d{1,2})-(\d{1,2})\b").unwrap());
static DOTTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(\d{1,2})\.(\d{1,2})\.(?:(\d{4}|\d{2})\b)?").unwrap());
static AGO_EN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(\d+|an?|one|two|three|four|five|six|seven|eight|nine|ten)\s+(days?|weeks?)\s+ago\b").unwrap()
});
static AGO_DE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bvor\s+(\d+|einem|einer|zwei|drei|vier|fünf|sechs|sieben|acht|neun|zehn)\s+(tag|tagen|woche|wochen)\b")
        .unwrap()
});
static AHEAD_EN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bin\s+(\d+|an?|one|two|three|four|five|six|seven|eight|nine|ten)\s+(days?|weeks?)\b").unwrap()
});
static AHEAD_DE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\bin\s+(\d+|einem|einer|zwei|drei|vier|fünf|sechs|sieben|acht|neun|zehn)\s+(tag|tagen|woche|wochen)\b")
        .unwrap()
});

/// Fixed-offset words, checked in order; earlier entries shadow later ones
/// ("heute morgen" is today, not tomorrow).
static WORDS: LazyLock<Vec<(Regex, i64)>> = LazyLock::new(|| {
    [
        (r"(?i)\b(day before yesterday|vorgestern)\b", -2),
        (r"(?i)\b(yesterday|gestern)\b", -1),
        (r"(?i)\b(today|heute|this morning|tonight)\b", 0),
        (r"(?i)\b(day after tomorrow|übermorgen)\b", 2),
        (r"(?i)\b(tomorrow|morgen)\b", 1),
    ]
    .into_iter()
    .map(|(re, offset)| (Regex::new(re).unwrap(), offset))
    .collect()
});

fn count_word(word: &str) -> Option<u64> {
    let lower = word.to_lowercase();
    let n = match lower.as_str() {
        "a" | "an" | "one" | "einem" | "einer" => 1,
        "two" | "zwei" => 2,
        "three" | "drei" => 3,
        "four" | "vier" => 4,
        "five" | "fünf" => 5,
        "six" | "sechs" => 6,
        "seven" | "sieben" => 7,
        "eight" | "acht" => 8,
        "nine" | "neun" => 9,
        "ten" | "zehn" => 10,
        digits => return digits.parse().ok(),
    };
    Some(n)
}

fn unit_days(unit: &str) -> u64 {
    if unit.to_lowercase().starts_with('w') {
        7
    } else {
        1
    }
}

fn shift(reference: NaiveDate, offset: i64) -> Option<NaiveDate> {
    if offset >= 0 {
        reference.checked_add_days(Days::new(offset as u64))
    } else {
        reference.checked_sub_days(Days::new(offset.unsigned_abs()))
    }
}

fn resolve(text: &str, reference: NaiveDate) -> Option<NaiveDate> {
    if let Some(c) = ISO.captures(text) {
        let (y, m, d) = (c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?);
        return NaiveDate::from_ymd_opt(y, m, d);
    }
    if let Some(c) = DOTTED.captures(text) {
        let d: u32 = c[1].parse().ok()?;
        let m: u32 = c[2].parse().ok()?;
        let y = match c.get(3) {
            Some(y) if y.as_str().len() == 2 => 2000 + y.as_str().parse::<i32>().ok()?,
            Some(y) => y.as_str().parse().ok()?,
            None => reference.year(),
        };
        return NaiveDate::from_ymd_opt(y, m, d);
    }
    for (re, sign) in [(&*AGO_EN, -1i64), (&*AGO_DE, -1), (&*AHEAD_EN, 1), (&*AHEAD_DE, 1)] {
        if let Some(c) = re.captures(text) {
            let n = count_word(&c[1])?;
            let days = n.checked_mul(unit_days(&c[2]))?;
            return shift(reference, sign * i64::try_from(days).ok()?);
        }
    }
    WORDS
        .iter()
        .find(|(re, _)| re.is_match(text))
        .and_then(|(_, offset)| shift(reference, *offset))
}

/// Resolves the first date expression in `text`. `Ok(None)` when there is
/// none; an error when it lies after `reference`.
pub fn extract_date(text: &str, reference: NaiveDate) -> Result<Option<NaiveDate>, DateError> {
    match resolve(text, reference) {
        Some(date) if date > reference => Err(DateError::Future(date)),
        other => Ok(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn yesterday() {
        assert_eq!(extract_date("yesterday", d(2018, 6, 10)), Ok(Some(d(2018, 6, 9))));
        assert_eq!(extract_date("Gestern Abend", d(2018, 6, 10)), Ok(Some(d(2018, 6, 9))));
    }

    #[test]
    fn today_is_identity() {
        for r in [d(2018, 1, 1), d(2020, 2, 29), d(1999, 12, 31)] {
            assert_eq!(extract_date("today", r), Ok(Some(r)));
        }
        assert_eq!(extract_date("heute morgen", d(2018, 6, 10)), Ok(Some(d(2018, 6, 10))));
    }

    #[test]
    fn days_ago_crosses_month() {
        assert_eq!(extract_date("3 days ago", d(2018, 3, 2)), Ok(Some(d(2018, 2, 27))));
        assert_eq!(extract_date("vor drei Tagen", d(2016, 3, 2)), Ok(Some(d(2016, 2, 28))));
        assert_eq!(extract_date("two weeks ago", d(2018, 1, 3)), Ok(Some(d(2017, 12, 20))));
    }

    #[test]
    fn explicit_dates() {
        assert_eq!(extract_date("on 01.06.2018", d(2018, 6, 10)), Ok(Some(d(2018, 6, 1))));
        assert_eq!(extract_date("am 1.6.18", d(2018, 6, 10)), Ok(Some(d(2018, 6, 1))));
        assert_eq!(extract_date("am 1.6.", d(2018, 6, 10)), Ok(Some(d(2018, 6, 1))));
        assert_eq!(extract_date("2018-05-31", d(2018, 6, 10)), Ok(Some(d(2018, 5, 31))));
        assert_eq!(extract_date("31.02.2018", d(2018, 6, 10)), Ok(None));
    }

    #[test]
    fn future_rejected() {
        let r = d(2018, 6, 10);
        assert_eq!(extract_date("tomorrow", r), Err(DateError::Future(d(2018, 6, 11))));
        assert_eq!(extract_date("in 2 days", r).unwrap_err().to_string(), "damage date in future");
        assert!(extract_date("übermorgen", r).is_err());
        assert!(extract_date("20.06.2018", r).is_err());
    }

    #[test]
    fn nothing_found() {
        assert_eq!(extract_date("my screen broke", d(2018, 6, 10)), Ok(None));
        assert_eq!(extract_date("490154203237518", d(2018, 6, 10)), Ok(None));
    }
}
