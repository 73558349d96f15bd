/// Luhn checksum over a string of ASCII digits. Non-digit input is invalid.
pub fn luhn_valid(digits: &str) -> bool {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let sum: u32 = digits
        .bytes()
        .rev()
        .enumerate()
        .map(|(i, b)| {
            let d = u32::from(b - b'0');
            if i % 2 == 1 {
                let doubled = d * 2;
                if doubled > 9 {
                    doubled - 9
                } else {
                    doubled
                }
            } else {
                d
            }
        })
        .sum();
    sum % 10 == 0
}

/// Digit that makes `payload` followed by it Luhn-valid.
pub fn luhn_check_digit(payload: &str) -> Option<u8> {
    if !payload.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    (0..=9u8).find(|d| luhn_valid(&format!("{payload}{d}")))
}

/// A valid IMEI is exactly fifteen decimal digits ending in a Luhn check digit.
pub fn validate_imei(digits: &str) -> bool {
    digits.len() == 15 && luhn_valid(digits)
}
