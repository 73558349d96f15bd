//! Channel adapters. The engine only sees [`InboundMessage`] and produces
//! [`ChatAction`]s; adapters translate both ways and degrade actions the
//! channel cannot show.

pub mod console;
pub mod webhook;

use crate::context::{ContextStore, StoreError};
use crate::engine::{Engine, StepOutput};
use crate::msgmodel::{ActionKind, ChatAction, InboundMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub quick_replies: bool,
    pub typing: bool,
    pub media_requests: bool,
    /// Longest menu shown as buttons; longer ones become numbered text.
    pub max_options: Option<usize>,
}

impl Capabilities {
    pub const FULL: Capabilities = Capabilities {
        quick_replies: true,
        typing: true,
        media_requests: true,
        max_options: None,
    };

    pub const PLAIN_TEXT: Capabilities = Capabilities {
        quick_replies: false,
        typing: false,
        media_requests: false,
        max_options: None,
    };
}

pub trait ChannelAdapter {
    fn channel_id(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
}

/// Rewrites `actions` into what a channel with `caps` can display.
///
/// Menus turn into a text listing with numbered options, media requests into
/// plain text, and typing indicators are dropped.
pub fn degrade(actions: &[ChatAction], caps: Capabilities) -> Vec<ChatAction> {
    let mut out = Vec::with_capacity(actions.len());
    for a in actions {
        match a.action {
            ActionKind::SendTyping if !caps.typing => {}
            ActionKind::SendQuickReplies => {
                let options = a.options.as_deref().unwrap_or_default();
                let fits = caps.max_options.is_none_or(|max| options.len() <= max);
                if caps.quick_replies && fits {
                    out.push(a.clone());
                    continue;
                }
                let mut text = a.text.clone().unwrap_or_default();
                for (i, o) in options.iter().enumerate() {
                    text.push_str(&format!("\n{}) {}", i + 1, o.label));
                }
                let mut degraded = ChatAction::text(text);
                degraded.metadata = a.metadata.clone();
                out.push(degraded);
            }
            ActionKind::RequestMedia if !caps.media_requests => {
                let mut degraded = ChatAction::text(a.text.clone().unwrap_or_default());
                degraded.metadata = a.metadata.clone();
                out.push(degraded);
            }
            _ => out.push(a.clone()),
        }
    }
    out
}

/// Load, step, save. A version conflict means someone else wrote the context
/// in between; nothing is sent in that case.
pub fn handle_message(engine: &Engine, store: &dyn ContextStore, msg: &InboundMessage) -> Result<StepOutput, StoreError> {
    let ctx = store.load_or_create(&msg.key)?;
    let mut out = engine.step(ctx, msg);
    out.context.version = store.save(&out.context)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgmodel::QuickReplyOption;

    fn menu(n: usize) -> ChatAction {
        let options = (1..=n).map(|i| QuickReplyOption::new(format!("o{i}"), format!("Option {i}"))).collect();
        ChatAction::quick_replies("Pick one", options).unwrap()
    }

    #[test]
    fn full_channel_keeps_everything() {
        let actions = vec![ChatAction::typing(), menu(2), ChatAction::request_media("Photo?")];
        assert_eq!(degrade(&actions, Capabilities::FULL), actions);
    }

    #[test]
    fn plain_text_numbers_options() {
        let actions = vec![ChatAction::typing(), menu(2), ChatAction::request_media("Photo?")];
        let out = degrade(&actions, Capabilities::PLAIN_TEXT);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text.as_deref(), Some("Pick one\n1) Option 1\n2) Option 2"));
        assert!(out.iter().all(|a| a.action == ActionKind::SendText));
    }

    #[test]
    fn long_menus_degrade() {
        let caps = Capabilities {
            max_options: Some(3),
            ..Capabilities::FULL
        };
        assert_eq!(degrade(&[menu(3)], caps)[0].action, ActionKind::SendQuickReplies);
        assert_eq!(degrade(&[menu(4)], caps)[0].action, ActionKind::SendText);
    }
}
