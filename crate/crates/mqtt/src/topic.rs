/// Matches a topic name against a subscription filter with `+` and `#`
/// wildcards.
pub fn matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

/// A filter is valid when `#` appears only as the last level and wildcards
/// occupy whole levels.
pub fn valid_filter(filter: &str) -> bool {
    if filter.is_empty() {
        return false;
    }
    let levels: Vec<&str> = filter.split('/').collect();
    levels.iter().enumerate().all(|(i, l)| match *l {
        "#" => i == levels.len() - 1,
        "+" => true,
        l => !l.contains('#') && !l.contains('+'),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcards() {
        assert!(matches("lify/v1/telemetry/+", "lify/v1/telemetry/dev-01"));
        assert!(!matches("lify/v1/telemetry/+", "lify/v1/telemetry/dev-01/x"));
        assert!(!matches("lify/v1/telemetry/+", "lify/v1/telemetry"));
        assert!(matches("lify/#", "lify/v1/telemetry/dev-01"));
        assert!(matches("#", "a"));
        assert!(matches("a/b", "a/b"));
        assert!(!matches("a/b", "a/c"));
    }

    #[test]
    fn filter_validation() {
        assert!(valid_filter("lify/v1/telemetry/+"));
        assert!(valid_filter("lify/#"));
        assert!(!valid_filter("lify/#/x"));
        assert!(!valid_filter("li+fy"));
        assert!(!valid_filter(""));
    }
}
