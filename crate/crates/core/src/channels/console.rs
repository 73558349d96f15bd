//! Line-based terminal channel. Menus are printed as numbered lists and the
//! user answers with the number.

use std::io::{self, BufRead, Write};

use chrono::{DateTime, Utc};

use super::{handle_message, Capabilities, ChannelAdapter};
use crate::context::ContextStore;
use crate::engine::Engine;
use crate::msgmodel::{ActionKind, ChatAction, InboundMessage, MediaKind, MediaRef, Payload, QuickReplyOption, UserKey};

pub const CONSOLE_CHANNEL: &str = "console";

const QUIT: &[&str] = &["/quit", "/exit"];

#[derive(Debug, Clone)]
pub struct ConsoleChannel {
    user: UserKey,
}

impl ConsoleChannel {
    pub fn new(user_id: &str) -> Result<Self, crate::msgmodel::DecodeError> {
        Ok(Self {
            user: UserKey::new(CONSOLE_CHANNEL, user_id)?,
        })
    }

    pub fn user(&self) -> &UserKey {
        &self.user
    }
}

impl ChannelAdapter for ConsoleChannel {
    fn channel_id(&self) -> &str {
        CONSOLE_CHANNEL
    }

    // quick replies are drawn as a numbered menu by the loop itself
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            quick_replies: true,
            typing: true,
            media_requests: false,
            max_options: None,
        }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ConsoleSummary {
    pub messages: usize,
    pub store_errors: usize,
}

/// What a typed line means given the menu on screen.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Input {
    Skip,
    Quit,
    BadChoice(usize),
    Send(Payload),
}

fn parse_line(line: &str, menu: &[QuickReplyOption]) -> Input {
    let line = line.trim();
    if line.is_empty() {
        return Input::Skip;
    }
    if QUIT.contains(&line) {
        return Input::Quit;
    }
    if let Some(uri) = line.strip_prefix("/photo ") {
        return Input::Send(Payload::Media(MediaRef {
            kind: MediaKind::Image,
            uri: uri.trim().to_owned(),
        }));
    }
    if !menu.is_empty() {
        if let Ok(n) = line.parse::<usize>() {
            return match n.checked_sub(1).and_then(|i| menu.get(i)) {
                Some(o) => Input::Send(Payload::QuickReply(o.id.clone())),
                None => Input::BadChoice(menu.len()),
            };
        }
    }
    Input::Send(Payload::Text(line.to_owned()))
}

fn render<W: Write>(out: &mut W, actions: &[ChatAction]) -> io::Result<Vec<QuickReplyOption>> {
    let mut menu = Vec::new();
    for a in actions {
        match a.action {
            ActionKind::SendTyping => writeln!(out, "  (typing...)")?,
            ActionKind::SendText | ActionKind::RequestMedia => {
                writeln!(out, "bot> {}", a.text.as_deref().unwrap_or_default())?
            }
            ActionKind::SendQuickReplies => {
                writeln!(out, "bot> {}", a.text.as_deref().unwrap_or_default())?;
                let options = a.options.clone().unwrap_or_default();
                for (i, o) in options.iter().enumerate() {
                    writeln!(out, "     {}) {}", i + 1, o.label)?;
                }
                menu = options;
            }
        }
    }
    Ok(menu)
}

/// Reads lines until EOF or `/quit`, answering each through the engine.
///
/// `clock` supplies message timestamps so tests can pin the date.
pub fn console_loop<R, W>(
    engine: &Engine,
    store: &dyn ContextStore,
    channel: &ConsoleChannel,
    input: R,
    mut output: W,
    mut clock: impl FnMut() -> DateTime<Utc>,
) -> io::Result<ConsoleSummary>
where
    R: BufRead,
    W: Write,
{
    let mut summary = ConsoleSummary::default();
    let mut menu: Vec<QuickReplyOption> = Vec::new();
    for line in input.lines() {
        let line = line?;
        let payload = match parse_line(&line, &menu) {
            Input::Skip => continue,
            Input::Quit => break,
            Input::BadChoice(n) => {
                writeln!(output, "bot> Please pick a number between 1 and {n}.")?;
                continue;
            }
            Input::Send(p) => p,
        };
        summary.messages += 1;
        let id = format!("{}-{}", CONSOLE_CHANNEL, summary.messages);
        let msg = match InboundMessage::new(channel.user().clone(), id, clock(), payload) {
            Ok(m) => m,
            Err(e) => {
                writeln!(output, "  ({e})")?;
                continue;
            }
        };
        match handle_message(engine, store, &msg) {
            Ok(out) => menu = render(&mut output, &out.actions)?,
            Err(e) => {
                summary.store_errors += 1;
                tracing::error!(error = %e, "could not store conversation");
                writeln!(output, "  (could not save the conversation: {e})")?;
            }
        }
        output.flush()?;
    }
    Ok(summary)
}
