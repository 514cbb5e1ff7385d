use std::io::Write;
use std::sync::Arc;

use super::exec::{self, Spawner};
use super::{ping, PostprocessError, Registry, SideEffect, SideEffectKind, Transformed};

/// Bright magenta foreground.
pub const PINK: &str = "\x1b[95m";
const RESET: &str = "\x1b[0m";

/// The first `n` Unicode scalar values of `s`.
pub fn first_chars(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

/// The last `n` Unicode scalar values of `s`.
pub fn last_chars(s: &str, n: usize) -> &str {
    if n == 0 {
        return &s[s.len()..];
    }
    match s.char_indices().rev().nth(n - 1) {
        Some((idx, _)) => &s[idx..],
        None => s,
    }
}

pub(super) fn install(r: &mut Registry, spawner: Arc<dyn Spawner>) {
    r.register("trimtoonly50chars", |raw, _| Ok(Transformed::text(first_chars(raw, 50))))
        .expect("builtin names are unique");
    r.register("last20chars", |raw, _| Ok(Transformed::text(last_chars(raw, 20))))
        .expect("builtin names are unique");
    r.register("printinpink", print_in_pink).expect("builtin names are unique");
    let ping_spawner = spawner.clone();
    r.register("pingserver", move |raw, inv| ping::ping_server(raw, inv.policy(), ping_spawner.as_ref()))
        .expect("builtin names are unique");
    for name in ["execute_code", "execute_python_code"] {
        let spawner = spawner.clone();
        r.register(name, move |raw, inv| exec::execute_code(raw, inv.policy(), spawner.as_ref()))
            .expect("builtin names are unique");
    }
}

fn print_in_pink(raw: &str, inv: &super::Invocation<'_>) -> Result<Transformed, PostprocessError> {
    let painted = format!("{}{raw}{RESET}", inv.policy().highlight);
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{painted}");
    Ok(Transformed {
        output: Some(raw.to_owned()),
        side_effects: vec![SideEffect::new(SideEffectKind::Stdout, painted)],
    })
}
