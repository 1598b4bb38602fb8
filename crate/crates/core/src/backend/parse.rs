use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Clamped,
    Failed,
}

/// First decimal number in `text`, if any. A leading `-` counts as a sign
/// only when it is not glued to a preceding word or number (`"1-5"` yields 1).
fn first_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let starts = bytes[i].is_ascii_digit()
            || (bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit));
        if !starts {
            i += 1;
            continue;
        }
        let mut end = i;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
        if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
            end += 1;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
        }
        let negative = i > 0
            && bytes[i - 1] == b'-'
            && (i == 1 || !bytes[i - 2].is_ascii_alphanumeric());
        let value: f64 = text[i..end].parse().ok()?;
        return Some(if negative { -value } else { value });
    }
    None
}

/// Extracts a rating from a free-form completion. Values in `[1,5]` are
/// accepted, values in `[0,6]` are clamped to the nearest bound, anything
/// else fails.
pub fn parse_rating(raw: &str) -> (Option<f64>, ParseStatus) {
    match first_number(raw) {
        Some(v) if (1.0..=5.0).contains(&v) => (Some(v), ParseStatus::Ok),
        Some(v) if (0.0..=6.0).contains(&v) => (Some(v.clamp(1.0, 5.0)), ParseStatus::Clamped),
        _ => (None, ParseStatus::Failed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixtures() {
        assert_eq!(parse_rating("4"), (Some(4.0), ParseStatus::Ok));
        assert_eq!(parse_rating("I would rate this 3.5 out of 5 stars"), (Some(3.5), ParseStatus::Ok));
        assert_eq!(parse_rating("no idea"), (None, ParseStatus::Failed));
        assert_eq!(parse_rating("rating: 5.7"), (Some(5.0), ParseStatus::Clamped));
        assert_eq!(parse_rating("0.4"), (Some(1.0), ParseStatus::Clamped));
        assert_eq!(parse_rating("Rating: 10"), (None, ParseStatus::Failed));
        assert_eq!(parse_rating("-1"), (None, ParseStatus::Failed));
        assert_eq!(parse_rating("on a 1-5 scale, 4"), (Some(1.0), ParseStatus::Ok));
        assert_eq!(parse_rating(".5 stars"), (Some(1.0), ParseStatus::Clamped));
        assert_eq!(parse_rating("4. Great value"), (Some(4.0), ParseStatus::Ok));
        assert_eq!(parse_rating("3.3333333333333335"), (Some(3.3333333333333335), ParseStatus::Ok));
        assert_eq!(parse_rating(""), (None, ParseStatus::Failed));
    }

    proptest! {
        #[test]
        fn total_and_consistent(s in ".{0,40}") {
            let (r, st) = parse_rating(&s);
            match st {
                ParseStatus::Failed => prop_assert!(r.is_none()),
                _ => prop_assert!(r.is_some_and(|v| (1.0..=5.0).contains(&v))),
            }
            prop_assert_eq!(parse_rating(&s), (r, st));
        }

        #[test]
        fn displayed_ratings_roundtrip(v in 1.0f64..=5.0) {
            prop_assert_eq!(parse_rating(&v.to_string()), (Some(v), ParseStatus::Ok));
        }
    }
}
