//! Clinical-note cleaning and word tokenisation.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest word sequence kept per stay (excluding `[CLS]`).
pub const MAX_NOTE_WORDS: usize = 512;

/// One line of the notes JSONL export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawNote {
    pub stay_id: u64,
    /// Hours since ICU admission.
    pub time: f64,
    pub text: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub iserror: bool,
}

/// Drops `[** ... **]` de-identification placeholders.
fn strip_placeholders(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("[**") {
        out.push_str(&rest[..start]);
        out.push(' ');
        match rest[start..].find("**]") {
            Some(end) => rest = &rest[start + end + 3..],
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Lowercased alphanumeric words of `text`, with placeholders and leak
/// words removed.
pub fn clean_words(text: &str, leak_words: &[String]) -> Vec<String> {
    strip_placeholders(text)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !leak_words.iter().any(|l| l == w))
        .collect()
}

/// Concatenates a stay's usable notes in time order and keeps the last
/// `max_words` words. Notes flagged as errors or charted outside
/// `[0, hours)` are skipped.
pub fn note_words(notes: &[RawNote], leak_words: &[String], hours: f64, max_words: usize) -> Vec<String> {
    let mut usable: Vec<&RawNote> = notes
        .iter()
        .filter(|n| !n.iserror && n.time >= 0.0 && n.time < hours)
        .collect();
    usable.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut words: Vec<String> = usable.iter().flat_map(|n| clean_words(&n.text, leak_words)).collect();
    if words.len() > max_words {
        words.drain(..words.len() - max_words);
    }
    words
}

/// Reads one JSON note per line; blank lines are ignored.
pub fn read_notes_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawNote>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut notes = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let note = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        notes.push(note);
    }
    Ok(notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::table::NormalValueTable;

    fn note(time: f64, text: &str) -> RawNote {
        RawNote { stay_id: 1, time, text: text.into(), category: "Nursing".into(), iserror: false }
    }

    #[test]
    fn keeps_last_512_words() {
        let text: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let words = note_words(&[note(1.0, &text.join(" "))], &[], 24.0, MAX_NOTE_WORDS);
        assert_eq!(words.len(), 512);
        assert_eq!(words[0], "w88");
        assert_eq!(words[511], "w599");
    }

    #[test]
    fn leak_words_are_removed() {
        let leak = NormalValueTable::default().leak_words;
        let words = note_words(&[note(2.0, "Patient is Dying, family at bedside.")], &leak, 24.0, MAX_NOTE_WORDS);
        assert_eq!(words, ["patient", "is", "family", "at", "bedside"]);
    }

    #[test]
    fn placeholders_and_punctuation_are_stripped() {
        let words = clean_words("Seen by Dr. [**Last Name 1234**] at 10:30; BP=120/80.", &[]);
        assert_eq!(words, ["seen", "by", "dr", "at", "10", "30", "bp", "120", "80"]);
    }

    #[test]
    fn notes_are_ordered_and_filtered() {
        let mut err = note(1.0, "bogus");
        err.iserror = true;
        let notes = [note(5.0, "later"), err, note(30.0, "tomorrow"), note(0.5, "early")];
        assert_eq!(note_words(&notes, &[], 24.0, MAX_NOTE_WORDS), ["early", "later"]);
    }

    #[test]
    fn empty_note_set_gives_no_words() {
        assert!(note_words(&[], &[], 24.0, MAX_NOTE_WORDS).is_empty());
    }
}
