use chrono::{Duration, Months};

use super::{ToolError, ToolErrorCode};
use crate::ehr_store::{EhrDatabase, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetUnit {
    Day,
    Week,
    Month,
    Year,
}

/// A signed calendar offset such as `-1 year` or `+3 days`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offset {
    pub amount: i64,
    pub unit: OffsetUnit,
}

fn bad_date(message: String) -> ToolError {
    ToolError::new(ToolErrorCode::BadDate, message)
}

impl Offset {
    pub fn parse(text: &str) -> Result<Offset, ToolError> {
        let bad = || {
            bad_date(format!(
                "cannot parse offset {text:?}; expected \"[+|-]N unit\" with unit day, week, month or year"
            ))
        };
        let s = text.trim();
        let (sign, rest) = match s.as_bytes().first() {
            Some(b'-') => (-1, &s[1..]),
            Some(b'+') => (1, &s[1..]),
            _ => (1, s),
        };
        let rest = rest.trim_start();
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(bad());
        }
        let amount: i64 = rest[..digits].parse().map_err(|_| bad())?;
        let unit = match rest[digits..].trim().to_ascii_lowercase().as_str() {
            "day" | "days" => OffsetUnit::Day,
            "week" | "weeks" => OffsetUnit::Week,
            "month" | "months" => OffsetUnit::Month,
            "year" | "years" => OffsetUnit::Year,
            _ => return Err(bad()),
        };
        Ok(Offset {
            amount: sign * amount,
            unit,
        })
    }
}

/// Shifts `anchor` by `offset`. Month and year steps clamp the day of month
/// to the end of the target month.
pub fn shift(anchor: Timestamp, offset: Offset) -> Option<Timestamp> {
    let at = anchor.at;
    let shifted = match offset.unit {
        OffsetUnit::Day => at.checked_add_signed(Duration::try_days(offset.amount)?),
        OffsetUnit::Week => {
            at.checked_add_signed(Duration::try_days(offset.amount.checked_mul(7)?)?)
        }
        OffsetUnit::Month | OffsetUnit::Year => {
            let months = if offset.unit == OffsetUnit::Year {
                offset.amount.checked_mul(12)?
            } else {
                offset.amount
            };
            let magnitude = Months::new(u32::try_from(months.unsigned_abs()).ok()?);
            if months >= 0 {
                at.checked_add_months(magnitude)
            } else {
                at.checked_sub_months(magnitude)
            }
        }
    }?;
    Some(Timestamp {
        at: shifted,
        date_only: anchor.date_only,
    })
}

/// `anchor` is ISO-8601 or `now`, which means the database's system time.
pub fn calendar(db: &EhrDatabase, anchor: &str, offset: &str) -> Result<String, ToolError> {
    let start = if anchor.trim().eq_ignore_ascii_case("now") {
        db.system_time.ok_or_else(|| {
            bad_date("the database has no system time, so \"now\" is undefined".into())
        })?
    } else {
        Timestamp::parse(anchor).ok_or_else(|| {
            bad_date(format!(
                "cannot parse date {anchor:?}; expected YYYY-MM-DD or YYYY-MM-DD HH:MM:SS"
            ))
        })?
    };
    let offset = Offset::parse(offset)?;
    shift(start, offset)
        .map(|t| t.to_string())
        .ok_or_else(|| bad_date(format!("shifting {start} by {offset:?} leaves the calendar range")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db_at(now: &str) -> EhrDatabase {
        EhrDatabase::new("d", vec![], Timestamp::parse(now)).unwrap()
    }

    #[test]
    fn examples() {
        let db = db_at("2105-12-31");
        assert_eq!(calendar(&db, "2105-12-31", "-1 year").unwrap(), "2104-12-31");
        assert_eq!(calendar(&db, "now", "-0 day").unwrap(), "2105-12-31");
        assert_eq!(calendar(&db, "2105-01-31", "+1 month").unwrap(), "2105-02-28");
    }

    #[test]
    fn offsets() {
        assert_eq!(
            Offset::parse("3 weeks").unwrap(),
            Offset {
                amount: 3,
                unit: OffsetUnit::Week
            }
        );
        assert_eq!(Offset::parse("- 2 Days").unwrap().amount, -2);
        for bad in ["", "year", "-1 fortnight", "1.5 days", "+-1 day"] {
            assert_eq!(Offset::parse(bad).unwrap_err().code, ToolErrorCode::BadDate, "{bad}");
        }
    }

    #[test]
    fn keeps_time_of_day_and_clamps_leap_years() {
        let db = db_at("2104-02-29 10:30:00");
        assert_eq!(calendar(&db, "now", "+1 year").unwrap(), "2105-02-28 10:30:00");
        assert_eq!(calendar(&db, "now", "-2 weeks").unwrap(), "2104-02-15 10:30:00");
    }

    #[test]
    fn now_requires_system_time() {
        let db = EhrDatabase::new("d", vec![], None).unwrap();
        assert_eq!(
            calendar(&db, "now", "-1 day").unwrap_err().code,
            ToolErrorCode::BadDate
        );
        assert_eq!(
            calendar(&db, "31/12/2105", "-1 day").unwrap_err().code,
            ToolErrorCode::BadDate
        );
    }
}
