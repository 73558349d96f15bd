use std::io::Cursor;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use claimchat_core::channels::console::{console_loop, ConsoleChannel};
use claimchat_core::claimbot::{ClaimBot, DirSink};
use claimchat_core::nlu::Language;
use claimchat_core::FileStore;

fn clock() -> impl FnMut() -> DateTime<Utc> {
    let mut t: DateTime<Utc> = "2026-10-17T09:00:00Z".parse().unwrap();
    move || {
        t += Duration::seconds(30);
        t
    }
}

fn run(dir: &std::path::Path, claims: &std::path::Path, input: &str) -> String {
    let bot = ClaimBot::builtin(Language::En).unwrap();
    let engine = bot.engine(Arc::new(DirSink::open(claims).unwrap()), 7);
    let store = FileStore::open(dir).unwrap();
    let channel = ConsoleChannel::new("alex").unwrap();
    let mut out = Vec::new();
    console_loop(&engine, &store, &channel, Cursor::new(input.to_owned()), &mut out, clock()).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn numbered_menus_and_restart() {
    let data = tempfile::tempdir().unwrap();
    let claims = tempfile::tempdir().unwrap();
    // first session stops after the device question
    let out = run(data.path(), claims.path(), "My phone is broken\n7\n1\n1\n/quit\nnever read\n");
    assert!(out.contains("     1) Display damage"));
    assert!(out.contains("Please pick a number between 1 and 4."));
    assert!(out.contains("  (typing...)"));
    assert!(out.contains("Which device is affected?"));
    assert!(!out.contains("never read"));

    // second session picks up where the first stopped
    let input = "Pixel 8\n1\n0171 5550123\n1\n490154203237518\nyes\nyesterday\n1\nIt fell down the stairs\n1\n1\n";
    let out = run(data.path(), claims.path(), input);
    assert!(out.contains("The affected device: Google Pixel 8"));
    assert!(out.contains("Your reference is CLM-20261017-000001"), "{out}");
    assert_eq!(claimchat_core::claimbot::list_records(claims.path()).unwrap().len(), 1);
}
