//! Desk-scale analog of a phone running built-in apps next to memory-hungry
//! downloaded ones: 256 MB split 64/192, a 9 MB low-memory threshold, two
//! passes of a 256 MB sequential reader, a 154 MB heap hog and fifty
//! launch/background cycles of the built-in apps.

use std::fmt::Write;

use super::Scenario;

pub const PARTITIONED_LAYOUT: &str =
    "total=256M threshold=9M vnode=trusted:64M:Trusted,untrusted:192M:Untrusted";
pub const FLAT_LAYOUT: &str = "total=256M threshold=9M vnode=all:256M:Trusted+Untrusted";

pub const CYCLES: u64 = 50;
const CYCLE_US: u64 = 10_000_000;
const SECOND: u64 = 1_000_000;

pub const PHONE: u32 = 1;
pub const SMS: u32 = 2;
pub const CONTACTS: u32 = 3;
pub const READER: u32 = 4;
pub const HOG: u32 = 5;
const SOCIAL: u32 = 9;
const DOWNLOADED: [u32; 4] = [6, 7, 8, SOCIAL];

const PROFILES: &str = "\
profile phone Trusted ws=4480 anon=0.5 hw threads=24 prio=100 warm=105000
profile sms Trusted ws=448 anon=0.5 threads=12 prio=110 warm=50000 external=1300000
profile contacts Trusted ws=1536 anon=0.5 threads=10 prio=110 warm=80000
profile reader Untrusted ws=64 anon=0.5 threads=2
profile hog Untrusted ws=64 anon=1 threads=2
profile game Untrusted ws=16384 anon=0.8 order=random:11 threads=32
profile browser Untrusted ws=8192 anon=0.6 order=random:12 threads=16
profile video Untrusted ws=8192 anon=0.75 threads=8
profile social Untrusted ws=4096 anon=0.5 order=random:13 threads=8
";

const SPAWN_ORDER: [&str; 9] = [
    "phone", "sms", "contacts", "reader", "hog", "game", "browser", "video", "social",
];

/// Scenario text for `layout`.
pub fn scenario_text(layout: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{layout}");
    let _ = writeln!(out, "seed 2024");
    out.push_str(PROFILES);
    for name in SPAWN_ORDER {
        let _ = writeln!(out, "0 SPAWN {name}");
    }
    for pid in 1..=SPAWN_ORDER.len() {
        let _ = writeln!(out, "0 BACKGROUND {pid}");
    }
    let mut ev = |tick: u64, action: String| {
        let _ = writeln!(out, "{tick} {action}");
    };
    for c in 0..CYCLES - 1 {
        let base = SECOND + c * CYCLE_US;
        ev(base, format!("LAUNCH {PHONE}"));
        ev(base + 2 * SECOND, format!("BACKGROUND {PHONE}"));
        if c % 2 == 0 {
            ev(base + 2 * SECOND, format!("LAUNCH {SMS}"));
            ev(base + 3 * SECOND, format!("BACKGROUND {SMS}"));
        }
        if c % 5 == 0 {
            ev(base + 3 * SECOND, format!("LAUNCH {CONTACTS}"));
            ev(base + 4 * SECOND, format!("BACKGROUND {CONTACTS}"));
        }
        let app = DOWNLOADED[(c % 4) as usize];
        ev(base + 4 * SECOND, format!("LAUNCH {app}"));
        ev(base + 7 * SECOND, format!("BACKGROUND {app}"));
        match c {
            10 => reader_pass(&mut ev, base),
            20 => hog_fill(&mut ev, base, 1),
            48 => {
                hog_fill(&mut ev, base, 2);
                ev(base + 8 * SECOND, format!("LAUNCH {SOCIAL}"));
                ev(base + 8 * SECOND, format!("BACKGROUND {SOCIAL}"));
                reader_pass(&mut ev, base + SECOND);
            }
            _ => {}
        }
        if c == 24 {
            ev(base + 9 * SECOND, "SNAPSHOT midway".to_string());
        }
    }
    let last = SECOND + (CYCLES - 1) * CYCLE_US;
    ev(last, format!("LAUNCH {PHONE}"));
    ev(last + 2 * SECOND, format!("BACKGROUND {PHONE}"));
    ev(last + 3 * SECOND, format!("EXIT {SOCIAL}"));
    out
}

fn reader_pass(ev: &mut impl FnMut(u64, String), base: u64) {
    ev(base + 7 * SECOND, format!("LAUNCH {READER}"));
    ev(base + 7 * SECOND, format!("SEQREAD {READER} 256M 1"));
    ev(base + 8 * SECOND, format!("BACKGROUND {READER}"));
}

fn hog_fill(ev: &mut impl FnMut(u64, String), base: u64, fills: u64) {
    ev(base + 7 * SECOND, format!("LAUNCH {HOG}"));
    for i in 0..fills {
        ev(
            base + 7 * SECOND + i * SECOND / 2,
            format!("ANONFILL {HOG} 154M 1"),
        );
    }
    ev(base + 8 * SECOND, format!("BACKGROUND {HOG}"));
}

pub fn partitioned() -> Scenario {
    Scenario::parse(&scenario_text(PARTITIONED_LAYOUT)).expect("analog scenario parses")
}

pub fn flat() -> Scenario {
    Scenario::parse(&scenario_text(FLAT_LAYOUT)).expect("analog scenario parses")
}
