use std::io::BufRead;

use crate::error::{CoreError, Result};

/// One raw interaction line: who touched what, optionally when.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: Option<i64>,
}

/// Parse result: records in input order plus a count of skipped lines.
#[derive(Debug)]
pub struct LoadedInteractions {
    pub records: Vec<InteractionRecord>,
    pub malformed: usize,
}

/// Read comma-separated `user_id,item_id[,timestamp]` lines.
///
/// Lines starting with `#` are ignored, as is an optional
/// `user_id,item_id[,timestamp]` header. Lines with an empty field or an
/// unparseable timestamp are skipped and counted as malformed; a line with
/// fewer than two columns aborts with its line number.
pub fn load_interactions(reader: impl BufRead) -> Result<LoadedInteractions> {
    let mut records = Vec::new();
    let mut malformed = 0usize;
    let mut saw_data_line = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if idx == 0 && fields[0].eq_ignore_ascii_case("user_id") {
            continue;
        }
        saw_data_line = true;
        if fields.len() < 2 {
            return Err(CoreError::Parse {
                line: line_no,
                message: format!("missing required column in {trimmed:?}"),
            });
        }
        if fields.len() > 3 || fields[0].is_empty() || fields[1].is_empty() {
            malformed += 1;
            continue;
        }
        let timestamp = match fields.get(2) {
            None => None,
            Some(raw) if raw.is_empty() => None,
            Some(raw) => match raw.parse::<i64>() {
                Ok(ts) => Some(ts),
                Err(_) => {
                    malformed += 1;
                    continue;
                }
            },
        };
        records.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            timestamp,
        });
    }

    if !saw_data_line {
        return Err(CoreError::EmptyInput);
    }
    if records.is_empty() {
        return Err(CoreError::Data(format!(
            "no valid records ({malformed} malformed lines)"
        )));
    }
    Ok(LoadedInteractions { records, malformed })
}
