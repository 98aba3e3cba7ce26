//! `--config FILE` support: the file's `flag=value` lines become ordinary
//! flags placed right after the subcommand, so anything given explicitly on
//! the command line overrides them.

use std::fs;

/// Returns `argv` with `--config` removed and the file's flags spliced in.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, String> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    if let Some(program) = it.next() {
        rest.push(program);
    }
    while let Some(arg) = it.next() {
        if arg == "--config" {
            config = Some(it.next().ok_or("--config needs a file argument")?);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(path.to_owned());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let flags = parse(&text).map_err(|e| format!("{path}: {e}"))?;
    match rest.iter().skip(1).position(|a| !a.starts_with('-')) {
        Some(i) => {
            let at = i + 2;
            rest.splice(at..at, flags);
            Ok(rest)
        }
        None => Ok(rest),
    }
}

/// `key=value` lines to flags. `#` starts a comment line; `true`/`false`
/// switch boolean flags on or leave them off.
pub fn parse(text: &str) -> Result<Vec<String>, String> {
    let mut flags = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key=value`", i + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        match value.trim() {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            v => {
                flags.push(format!("--{key}"));
                flags.push(v.to_owned());
            }
        }
    }
    Ok(flags)
}
