//! Frame codec: encoding and decoding of messages carried in Bluetooth
//! device names.
//!
//! A modern frame is `MDSR` + one type character + a base64 payload:
//!
//! ```text
//! MDSR 0 <base64(bzip2("id|body"))>                                 type 0
//! MDSR 1 <base64(bzip2(encrypt(bzip2("id|body"))))>                 type 1
//! ```
//!
//! `|` divides the id from the body and is escaped as `\|` inside either;
//! `\` is the escape character, itself escaped as `\\`. Codebook words in the
//! body are replaced by `\` + token before compression. The legacy format is
//! the bare header `JPC` followed by the message text.
//!
//! Every encoded frame fits the 248-character device-name limit; encoding
//! fails rather than emit a longer name.

use std::fmt;
use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use thiserror::Error;

mod cipher;
mod codebook;

pub use cipher::{load_keyring, parse_keyring, Cipher, KeyringError, XorStreamCipher};
pub use codebook::{Codebook, CodebookError};

use std::sync::Arc;

/// Header of modern frames.
pub const FRAME_HEADER: &str = "MDSR";
/// Header of legacy frames.
pub const LEGACY_HEADER: &str = "JPC";
/// Device-name length limit, in characters, observed on common stacks.
pub const MAX_NAME_CHARS: usize = 248;
/// Plain type character: bzip2 + base64.
pub const TYPE_PLAIN: char = '0';
/// Encrypted type character: bzip2 + cipher + bzip2 + base64.
pub const TYPE_ENCRYPTED: char = '1';

/// bzip2 block-size level, fixed to the standalone tool's default so encoded
/// payloads are bit-identical to what `bzip2 -9` produces.
const BZIP2_LEVEL: u32 = 9;

/// Cap on decompressed payload size; a 182-byte frame payload cannot
/// legitimately expand past this.
const MAX_DECODED_BYTES: u64 = 1 << 20;

/// A decoded message: caller-supplied identifier plus body text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlainMessage {
    id: String,
    body: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("message id must be non-empty")]
pub struct EmptyMessageId;

impl PlainMessage {
    /// Creates a message. Ids must be non-empty; both fields may contain any
    /// text, including the reserved characters, which the codec escapes.
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Self, EmptyMessageId> {
        let id = id.into();
        if id.is_empty() {
            return Err(EmptyMessageId);
        }
        Ok(PlainMessage {
            id,
            body: body.into(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

/// An encoded device-name frame, guaranteed ASCII and at most
/// [`MAX_NAME_CHARS`] characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrameString(String);

impl FrameString {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn char_len(&self) -> usize {
        self.0.len() // ASCII by construction
    }
}

impl fmt::Display for FrameString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for FrameString {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Result of offering an arbitrary device name to the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeOutcome {
    Message(PlainMessage),
    /// The name does not carry a frame; it belongs to an ordinary device.
    NotAFrame,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("unknown frame type {0:?}")]
    UnknownType(char),
    #[error("type '1' frames require a cipher")]
    MissingCipher,
    #[error("encoded frame is {chars} characters, over the {MAX_NAME_CHARS}-character name limit")]
    FrameTooLong { chars: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EscapeError {
    #[error("dangling `\\` at end of text")]
    TrailingBackslash,
    #[error("`\\` followed by {following:?} matches no escape rule or codebook token")]
    UnknownSequence { following: char },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MalformedReason {
    #[error("missing type character after header")]
    MissingType,
    #[error("unknown frame type {0:?}")]
    UnknownType(char),
    #[error("payload is not valid base64")]
    Base64,
    #[error("payload is not a valid bzip2 stream")]
    Bzip2,
    #[error("decompressed payload is not valid UTF-8")]
    Utf8,
    #[error("no unescaped `|` divider between id and body")]
    MissingDivider,
    #[error("frame carries an empty id")]
    EmptyId,
    #[error(transparent)]
    Escape(#[from] EscapeError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    /// The name starts with a valid header but the rest does not parse.
    /// Malformed frames are counted and logged; non-frames are ignored.
    #[error("malformed frame: {0}")]
    Malformed(MalformedReason),
    /// A well-formed type-'1' frame that none of the available keys decrypt.
    #[error("no available key decrypts this frame")]
    Undecryptable,
}

/// Escapes the reserved characters: `\` becomes `\\` and `|` becomes `\|`.
/// Total: any text is accepted.
pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            _ => out.push(c),
        }
    }
    out
}

/// Reverses [`escape_text`] and [`apply_codebook`] in a single left-to-right
/// scan: `\\` yields `\`, `\|` yields `|`, and `\` followed by a codebook
/// token (longest match) yields the token's word.
pub fn unescape_and_expand(s: &str, cb: &Codebook) -> Result<String, EscapeError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('\\') {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        match after.chars().next() {
            None => return Err(EscapeError::TrailingBackslash),
            Some('\\') => {
                out.push('\\');
                rest = &after[1..];
            }
            Some('|') => {
                out.push('|');
                rest = &after[1..];
            }
            Some(following) => match cb.match_token(after) {
                Some((token, word)) => {
                    out.push_str(word);
                    rest = &after[token.len()..];
                }
                None => return Err(EscapeError::UnknownSequence { following }),
            },
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Replaces every maximal run of letters that exactly equals a codebook word
/// with `\` + token. Expects escaped input; the two-character sequences `\\`
/// and `\|` pass through untouched and never take part in a match.
pub fn apply_codebook(s: &str, cb: &Codebook) -> String {
    if cb.is_empty() {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut word = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c.is_alphabetic() {
            word.push(c);
            continue;
        }
        flush_word(&mut out, &mut word, cb);
        out.push(c);
        if c == '\\' {
            // Escaped input: the character after `\` is literal.
            if let Some(next) = chars.next() {
                out.push(next);
            }
        }
    }
    flush_word(&mut out, &mut word, cb);
    out
}

fn flush_word(out: &mut String, word: &mut String, cb: &Codebook) {
    if word.is_empty() {
        return;
    }
    match cb.token_for(word) {
        Some(token) => {
            out.push('\\');
            out.push_str(token);
        }
        None => out.push_str(word),
    }
    word.clear();
}

/// Encodes a message into a device-name frame.
///
/// The id is escaped; the body is escaped and codebook-substituted; the two
/// are joined with `|` and pushed through the pipeline for `type_code`.
/// A cipher is required for type '1' and ignored otherwise.
pub fn encode_frame(
    msg: &PlainMessage,
    type_code: char,
    cb: &Codebook,
    cipher: Option<&dyn Cipher>,
) -> Result<FrameString, EncodeError> {
    if type_code != TYPE_PLAIN && type_code != TYPE_ENCRYPTED {
        return Err(EncodeError::UnknownType(type_code));
    }
    let pre = format!(
        "{}|{}",
        escape_text(&msg.id),
        apply_codebook(&escape_text(&msg.body), cb)
    );
    let compressed = bzip2_compress(pre.as_bytes());
    let payload = if type_code == TYPE_ENCRYPTED {
        let cipher = cipher.ok_or(EncodeError::MissingCipher)?;
        bzip2_compress(&cipher.encrypt(&compressed))
    } else {
        compressed
    };
    let mut text = String::with_capacity(FRAME_HEADER.len() + 1 + payload.len().div_ceil(3) * 4);
    text.push_str(FRAME_HEADER);
    text.push(type_code);
    BASE64.encode_string(&payload, &mut text);
    if text.len() > MAX_NAME_CHARS {
        return Err(EncodeError::FrameTooLong { chars: text.len() });
    }
    Ok(FrameString(text))
}

/// Decodes an arbitrary device name.
///
/// Names that do not start with `MDSR` are [`DecodeOutcome::NotAFrame`].
/// After a valid header, any parse failure is a malformed frame; a
/// well-formed type-'1' payload that no cipher in `ciphers` decrypts to a
/// valid inner stream is [`DecodeError::Undecryptable`].
pub fn decode_frame(
    name: &str,
    cb: &Codebook,
    ciphers: &[Arc<dyn Cipher>],
) -> Result<DecodeOutcome, DecodeError> {
    use MalformedReason as M;

    let Some(rest) = name.strip_prefix(FRAME_HEADER) else {
        return Ok(DecodeOutcome::NotAFrame);
    };
    let mut chars = rest.chars();
    let type_code = chars.next().ok_or(DecodeError::Malformed(M::MissingType))?;
    if type_code != TYPE_PLAIN && type_code != TYPE_ENCRYPTED {
        return Err(DecodeError::Malformed(M::UnknownType(type_code)));
    }
    let payload = BASE64
        .decode(chars.as_str())
        .map_err(|_| DecodeError::Malformed(M::Base64))?;
    let pre_bytes = if type_code == TYPE_ENCRYPTED {
        let outer = bzip2_decompress(&payload).map_err(|_| DecodeError::Malformed(M::Bzip2))?;
        ciphers
            .iter()
            .find_map(|c| {
                c.decrypt(&outer)
                    .and_then(|plain| bzip2_decompress(&plain).ok())
            })
            .ok_or(DecodeError::Undecryptable)?
    } else {
        bzip2_decompress(&payload).map_err(|_| DecodeError::Malformed(M::Bzip2))?
    };
    let pre = String::from_utf8(pre_bytes).map_err(|_| DecodeError::Malformed(M::Utf8))?;
    let (id_part, body_part) =
        split_at_divider(&pre).ok_or(DecodeError::Malformed(M::MissingDivider))?;
    let id = unescape_and_expand(id_part, &Codebook::empty())
        .map_err(|e| DecodeError::Malformed(M::Escape(e)))?;
    let body =
        unescape_and_expand(body_part, cb).map_err(|e| DecodeError::Malformed(M::Escape(e)))?;
    let msg = PlainMessage::new(id, body).map_err(|_| DecodeError::Malformed(M::EmptyId))?;
    Ok(DecodeOutcome::Message(msg))
}

/// Decodes the legacy format: header `JPC` followed by the message text
/// verbatim. Returns `None` for anything else.
pub fn decode_legacy(name: &str) -> Option<&str> {
    name.strip_prefix(LEGACY_HEADER)
}

/// Splits at the first unescaped `|`. Backslash always consumes the byte
/// after it; multi-byte characters cannot contain the ASCII markers.
fn split_at_divider(s: &str) -> Option<(&str, &str)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'|' => return Some((&s[..i], &s[i + 1..])),
            _ => i += 1,
        }
    }
    None
}

fn bzip2_compress(data: &[u8]) -> Vec<u8> {
    let mut enc = bzip2::write::BzEncoder::new(Vec::new(), bzip2::Compression::new(BZIP2_LEVEL));
    enc.write_all(data).expect("write to in-memory encoder");
    enc.finish()
        .expect("bzip2 compression cannot fail in memory")
}

fn bzip2_decompress(data: &[u8]) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::new();
    bzip2::read::BzDecoder::new(data)
        .take(MAX_DECODED_BYTES + 1)
        .read_to_end(&mut out)?;
    if out.len() as u64 > MAX_DECODED_BYTES {
        return Err(std::io::Error::other("decompressed payload too large"));
    }
    Ok(out)
}
