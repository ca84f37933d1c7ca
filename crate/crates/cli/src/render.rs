//! Output rendering: canonical JSON or an indented text view.

use std::io::{self, Write};

use hcmr_core::digests::Document;

use crate::args::OutputFormat;

pub fn write(out: &mut dyn Write, doc: &Document, format: OutputFormat) -> io::Result<()> {
    match format {
        OutputFormat::Json => writeln!(out, "{}", doc.to_canonical_string()),
        OutputFormat::Text => {
            let mut s = String::new();
            text(doc, 0, &mut s);
            out.write_all(s.as_bytes())
        }
    }
}

fn scalar(doc: &Document) -> Option<String> {
    match doc {
        Document::Null => Some("null".into()),
        Document::Bool(b) => Some(b.to_string()),
        Document::Int(i) => Some(i.to_string()),
        Document::Str(s) => Some(s.clone()),
        Document::List(l) if l.is_empty() => Some("[]".into()),
        Document::Map(m) if m.is_empty() => Some("{}".into()),
        _ => None,
    }
}

fn text(doc: &Document, indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    match doc {
        Document::Map(m) if !m.is_empty() => {
            for (k, v) in m {
                match scalar(v) {
                    Some(s) => out.push_str(&format!("{pad}{k}: {s}\n")),
                    None => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        text(v, indent + 2, out);
                    }
                }
            }
        }
        Document::List(l) if !l.is_empty() => {
            for v in l {
                match scalar(v) {
                    Some(s) => out.push_str(&format!("{pad}- {s}\n")),
                    None => {
                        out.push_str(&format!("{pad}-\n"));
                        text(v, indent + 2, out);
                    }
                }
            }
        }
        other => out.push_str(&format!("{pad}{}\n", scalar(other).unwrap_or_default())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_view_nests() {
        let doc = Document::from_json_str(r#"{"a":1,"b":{"c":[true,{"d":"x"}]},"e":[]}"#).unwrap();
        let mut out = Vec::new();
        write(&mut out, &doc, OutputFormat::Text).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a: 1\nb:\n  c:\n    - true\n    -\n      d: x\ne: []\n");
    }

    #[test]
    fn json_view_is_canonical() {
        let doc = Document::from_json_str(r#"{"b":1,"a":"\u00e9"}"#).unwrap();
        let mut out = Vec::new();
        write(&mut out, &doc, OutputFormat::Json).unwrap();
        let line = String::from_utf8(out).unwrap();
        assert_eq!(Document::from_json_str(line.trim_end()).unwrap(), doc);
        assert!(line.starts_with(r#"{"a""#));
    }
}
