use crate::data::RumorExample;
use crate::model::vocab::{URL_TOKEN, USER_TOKEN};

fn replace_token(tok: &str) -> &str {
    if tok.starts_with("http://") || tok.starts_with("https://") {
        URL_TOKEN
    } else if tok.starts_with('@') {
        USER_TOKEN
    } else {
        tok
    }
}

/// Replace URLs and @-mentions in `text`, keeping the original whitespace.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push_str(replace_token(&text[s..i]));
            }
            out.push(c);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push_str(replace_token(&text[s..]));
    }
    out
}

pub fn preprocess(example: &RumorExample) -> RumorExample {
    RumorExample {
        claim: normalize_text(&example.claim),
        comments: example.comments.iter().map(|c| normalize_text(c)).collect(),
        label: example.label,
        domain: example.domain.clone(),
    }
}
