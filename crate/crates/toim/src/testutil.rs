//! Shared fixture constructors for unit tests.

use crate::corpus::{Kind, Message, Pos, Token};

pub(crate) fn msg(
    id: &str,
    user: &str,
    kind: Kind,
    parent: Option<&str>,
    root: Option<&str>,
    ts: i64,
    tokens: &[(&str, Pos)],
) -> Message {
    Message {
        id: id.into(),
        author: user.into(),
        kind,
        parent: parent.map(String::from),
        root: root.map(String::from),
        ts,
        tokens: tokens
            .iter()
            .enumerate()
            .map(|(i, (t, p))| Token {
                text: (*t).into(),
                pos: *p,
                position: i,
            })
            .collect(),
    }
}

/// Post `id` by `user` with the given tokens.
pub(crate) fn post(id: &str, user: &str, ts: i64, tokens: &[(&str, Pos)]) -> Message {
    msg(id, user, Kind::Post, None, None, ts, tokens)
}

/// Comment `id` by `user` on `parent` (also used as root).
pub(crate) fn comment(id: &str, user: &str, parent: &str, ts: i64, tokens: &[(&str, Pos)]) -> Message {
    msg(id, user, Kind::Comment, Some(parent), Some(parent), ts, tokens)
}
