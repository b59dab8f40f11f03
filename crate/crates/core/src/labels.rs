//! Frame label files: one line per utterance, `id l0 l1 l2 ...`.

use std::path::Path;

use crate::util::{read_to_string, write_file};
use crate::{Error, Result};

pub fn format_labels(id: &str, labels: &[usize]) -> String {
    let mut line = String::from(id);
    for l in labels {
        line.push(' ');
        line.push_str(&l.to_string());
    }
    line.push('\n');
    line
}

pub fn write_labels(path: &Path, id: &str, labels: &[usize]) -> Result<()> {
    write_file(path, format_labels(id, labels).as_bytes())
}

/// Finds the line for `id` in `path`.
pub fn read_labels(path: &Path, id: &str) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    for line in text.lines() {
        let mut fields = line.split_whitespace();
        if fields.next() != Some(id) {
            continue;
        }
        return fields
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|_| Error::format(path, format!("bad label {f:?} for {id}")))
            })
            .collect();
    }
    Err(Error::data(id, format!("no labels in {}", path.display())))
}
