use core::fmt;

/// A calendar month. One simulation period equals one month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    pub year: i32,
    /// 1..=12
    pub month: u8,
}

impl Period {
    pub fn new(year: i32, month: u8) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    /// Parses the `YYYYMM` integer encoding used in roster files.
    pub fn from_ym(ym: u32) -> Option<Self> {
        Self::new((ym / 100) as i32, (ym % 100) as u8)
    }

    pub fn ym(self) -> u32 {
        self.year as u32 * 100 + self.month as u32
    }

    /// Months elapsed since year 0, month 1.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: (ordinal.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    pub fn next(self) -> Self {
        self.offset(1)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinal_round_trip_crosses_year_boundary() {
        let p = Period::new(2001, 12).unwrap();
        assert_eq!(p.next(), Period::new(2002, 1).unwrap());
        assert_eq!(Period::from_ordinal(p.ordinal()), p);
        assert_eq!(p.offset(-12), Period::new(2000, 12).unwrap());
    }

    #[test]
    fn ym_encoding() {
        assert_eq!(Period::from_ym(200403), Period::new(2004, 3));
        assert_eq!(Period::new(2004, 3).unwrap().ym(), 200403);
        assert!(Period::from_ym(200413).is_none());
    }
}
