use lify_core::{Alert, AlertSource};

/// Telegram's per-message text limit.
pub const MAX_MESSAGE_CHARS: usize = 4096;
const ELLIPSIS: char = '…';

/// First word plus the initial of the last word: "Ana Pérez" → "Ana P.".
pub fn short_name(full: &str) -> String {
    let words: Vec<&str> = full.split_whitespace().collect();
    match words.as_slice() {
        [] => "unknown".into(),
        [only] => (*only).to_string(),
        [first, .., last] => {
            let initial: String = last.chars().next().into_iter().flat_map(char::to_uppercase).collect();
            format!("{first} {initial}.")
        }
    }
}

/// Renders the one-line chat message for an alert.
///
/// `raised_by` is the display name of the staff member behind a manual
/// alert. Output never exceeds [`MAX_MESSAGE_CHARS`] characters.
pub fn format_alert_message(alert: &Alert, patient_name: &str, raised_by: Option<&str>) -> String {
    let patient = short_name(patient_name);
    let severity = alert.severity.label();
    let text = match (&alert.source, alert.metric, alert.value, alert.range) {
        (AlertSource::Auto, Some(metric), Some(value), Some(range)) => format!(
            "[{severity}] {patient}: {} = {value:.1} {} (range {:.1}–{:.1})",
            metric.label(),
            metric.unit(),
            range.min,
            range.max
        ),
        (AlertSource::Manual { .. }, ..) => {
            let by = short_name(raised_by.unwrap_or("staff"));
            format!("[{severity}] {patient}: {} — raised by {by}", one_line(&alert.message))
        }
        _ => format!("[{severity}] {patient}: {}", one_line(&alert.message)),
    };
    truncate(text)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn truncate(text: String) -> String {
    if text.chars().count() <= MAX_MESSAGE_CHARS {
        return text;
    }
    let mut out: String = text.chars().take(MAX_MESSAGE_CHARS - 1).collect();
    out.push(ELLIPSIS);
    out
}
