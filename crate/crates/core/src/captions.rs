//! Caption cache: UTF-8 JSON lines sorted by `image_id`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::CaptionRecord;

pub fn captions_to_jsonl(records: &[CaptionRecord]) -> Result<String> {
    let mut sorted: Vec<&CaptionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(Error::DuplicateId(w[0].image_id.clone()));
    }
    let mut out = String::new();
    for r in sorted {
        r.validate()?;
        out.push_str(&serde_json::to_string(r).expect("caption record serializes"));
        out.push('\n');
    }
    Ok(out)
}

/// Parses JSON lines; blank lines are skipped, output is sorted by image id.
pub fn captions_from_jsonl(text: &str, origin: &Path) -> Result<Vec<CaptionRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaptionRecord = serde_json::from_str(line).map_err(|e| err(line_no, e.to_string()))?;
        rec.validate().map_err(|e| err(line_no, e.to_string()))?;
        records.push((line_no, rec));
    }
    records.sort_by(|a, b| a.1.image_id.cmp(&b.1.image_id));
    if let Some(w) = records.windows(2).find(|w| w[0].1.image_id == w[1].1.image_id) {
        return Err(err(w[1].0, format!("duplicate image_id {:?}", w[1].1.image_id)));
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

pub fn save_captions(records: &[CaptionRecord], path: &Path) -> Result<()> {
    fs::write(path, captions_to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    captions_from_jsonl(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, caption: &str) -> CaptionRecord {
        CaptionRecord::new(id, caption, "reference").unwrap()
    }

    #[test]
    fn output_is_sorted() {
        let text = captions_to_jsonl(&[rec("b", "a dog"), rec("a", "a cat")]).unwrap();
        assert_eq!(
            text,
            "{\"image_id\":\"a\",\"caption\":\"a cat\",\"provider_id\":\"reference\"}\n\
             {\"image_id\":\"b\",\"caption\":\"a dog\",\"provider_id\":\"reference\"}\n"
        );
    }

    #[test]
    fn empty_caption_is_parse_error_with_line() {
        let text = "{\"image_id\":\"a\",\"caption\":\"x\",\"provider_id\":\"p\"}\n\
                    {\"image_id\":\"b\",\"caption\":\"\",\"provider_id\":\"p\"}\n";
        match captions_from_jsonl(text, Path::new("c.jsonl")) {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match captions_from_jsonl("{not json", Path::new("c.jsonl")) {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_rejected() {
        assert!(captions_to_jsonl(&[rec("a", "x"), rec("a", "y")]).is_err());
        let text = "{\"image_id\":\"a\",\"caption\":\"x\",\"provider_id\":\"p\"}\n\
                    {\"image_id\":\"a\",\"caption\":\"y\",\"provider_id\":\"p\"}\n";
        assert!(matches!(
            captions_from_jsonl(text, Path::new("c.jsonl")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let tmp = tempfile::TempDir::new().unwrap();
        let path = tmp.path().join("c.jsonl");
        let records: Vec<_> = (0..1000)
            .map(|i| rec(&format!("img{i:04}"), &format!("caption \"{i}\" ü")))
            .collect();
        save_captions(&records, &path).unwrap();
        assert_eq!(load_captions(&path).unwrap(), records);
    }
}
